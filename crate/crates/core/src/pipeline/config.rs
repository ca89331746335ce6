use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::scorer::MockScorerPolicy;
use crate::dataset::Task;
use crate::error::{Error, Result};
use crate::fewshot::SamplePlan;
use crate::lexicon::MedicalTagPolicy;
use crate::selector::{SelectorConfig, DEFAULT_THRESHOLD};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScorerConfig {
    Mock(MockScorerPolicy),
    /// `command` is run as `<command...> --in prompts.jsonl --out preds.jsonl`.
    External { command: Vec<String> },
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig::Mock(MockScorerPolicy::default())
    }
}

pub const MIN_K: usize = 16;
pub const MAX_K: usize = 256;

fn default_threshold() -> u64 {
    DEFAULT_THRESHOLD
}

fn default_k() -> Vec<usize> {
    vec![16, 32, 64, 128, 256]
}

fn default_seeds() -> Vec<u64> {
    SamplePlan::DEFAULT_SEEDS.collect()
}

fn default_tags_policy() -> String {
    "default".into()
}

fn yes() -> bool {
    true
}

/// Everything one `run` needs. Relative paths in a config file are resolved
/// against the directory holding the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub corpus: Vec<PathBuf>,
    pub lexicon: PathBuf,
    pub dataset: PathBuf,
    pub task: Task,
    #[serde(default = "default_threshold")]
    pub threshold: u64,
    #[serde(default = "default_k")]
    pub k: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub full: bool,
    #[serde(default = "default_tags_policy")]
    pub tags_policy: String,
    #[serde(default = "yes")]
    pub augment: bool,
    /// Use this paraphrase map instead of selecting one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map: Option<PathBuf>,
    #[serde(default)]
    pub scorer: ScorerConfig,
    pub out_dir: PathBuf,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|e| {
            Error::parse(path.display(), e.line(), e)
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.corpus.iter_mut().for_each(fix);
        fix(&mut self.lexicon);
        fix(&mut self.dataset);
        fix(&mut self.out_dir);
        if let Some(m) = self.map.as_mut() {
            fix(m);
        }
        if let ScorerConfig::External { command } = &mut self.scorer {
            // Bare program names are left for PATH lookup.
            if let Some(program) = command.first_mut() {
                if program.contains('/') && Path::new(program.as_str()).is_relative() {
                    *program = base.join(&*program).display().to_string();
                }
            }
        }
    }

    /// Checks settings and that the lexicon, dataset and map exist. Corpus
    /// files are opened by the frequency stage, which reports missing ones.
    pub fn validate(&self) -> Result<()> {
        if self.corpus.is_empty() {
            return Err(Error::EmptyCorpusSet);
        }
        for path in [Some(&self.lexicon), Some(&self.dataset), self.map.as_ref()].into_iter().flatten() {
            if !path.is_file() {
                return Err(Error::io(
                    path,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "input not found"),
                ));
            }
        }
        SelectorConfig::new(self.threshold)?;
        MedicalTagPolicy::parse(&self.tags_policy)?;
        if self.k.is_empty() {
            return Err(Error::InvalidArgument("no k values given".into()));
        }
        let mut ks = self.k.clone();
        ks.sort_unstable();
        ks.dedup();
        if ks.len() != self.k.len() {
            return Err(Error::InvalidArgument("k values must be distinct".into()));
        }
        for &k in &self.k {
            if !self.full && !(MIN_K..=MAX_K).contains(&k) {
                return Err(Error::InvalidArgument(format!(
                    "k = {k} outside [{MIN_K}, {MAX_K}]; use full mode for other sizes"
                )));
            }
            SamplePlan::new(self.task, k, self.seeds.clone())?;
        }
        if self.seeds.len() < 2 {
            return Err(Error::InvalidArgument(
                "at least two seeds are needed for the paired t-test".into(),
            ));
        }
        match &self.scorer {
            ScorerConfig::Mock(policy) => policy.validate()?,
            ScorerConfig::External { command } if command.is_empty() => {
                return Err(Error::InvalidArgument("empty scorer command".into()))
            }
            ScorerConfig::External { .. } => {}
        }
        Ok(())
    }
}
