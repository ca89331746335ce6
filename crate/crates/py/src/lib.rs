//! Python bindings: `import rarelex`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use rarelex::dataset::{AnnotationSpan, Dataset, Example, Label, Split, Task};
use rarelex::fixture::FixtureSpec;
use rarelex::lexicon::MedicalTagPolicy;
use rarelex::pipeline::PipelineConfig;
use rarelex::promptfmt::PromptTemplate;
use rarelex::selector::{MapEntry, SelectorConfig};

create_exception!(rarelex, RarelexError, PyException);

fn py_err(e: rarelex::Error) -> PyErr {
    RarelexError::new_err(e.to_string())
}

fn task(name: &str) -> PyResult<Task> {
    name.parse().map_err(py_err)
}

type Span = (u8, usize, String, String);

fn span_tuple(s: AnnotationSpan) -> Span {
    (s.sentence_index, s.offset, s.matched_surface, s.inserted_text)
}

#[pyclass(name = "FrequencyTable", module = "rarelex")]
struct PyFrequencyTable {
    inner: rarelex::FrequencyTable,
}

#[pymethods]
impl PyFrequencyTable {
    #[staticmethod]
    fn from_text(corpus_id: &str, text: &str) -> Self {
        Self {
            inner: rarelex::FrequencyTable::from_text(corpus_id, text),
        }
    }

    /// Counts every word in the given files (plain or gzip).
    #[staticmethod]
    fn build(py: Python<'_>, paths: Vec<PathBuf>) -> PyResult<Self> {
        let inner = py.detach(|| rarelex::build_table(&paths)).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: rarelex::FrequencyTable::load(&path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(py_err)
    }

    fn count(&self, word: &str) -> u64 {
        self.inner.count(word)
    }

    #[getter]
    fn total_tokens(&self) -> u64 {
        self.inner.total_tokens()
    }

    fn relative_frequency(&self, word: &str) -> PyResult<f64> {
        self.inner.relative_frequency(word).map_err(py_err)
    }

    #[pyo3(signature = (n=None))]
    fn most_common(&self, n: Option<usize>) -> Vec<(String, u64)> {
        let rows = self.inner.sorted();
        let n = n.unwrap_or(rows.len());
        rows.into_iter().take(n).map(|(w, c)| (w.to_owned(), c)).collect()
    }

    fn merge(&self, other: &PyFrequencyTable) -> Self {
        Self {
            inner: self.inner.clone().merge(other.inner.clone()),
        }
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "FrequencyTable(types={}, total_tokens={})",
            self.inner.len(),
            self.inner.total_tokens()
        )
    }
}

#[pyclass(name = "ParaphraseMap", module = "rarelex")]
struct PyParaphraseMap {
    inner: rarelex::ParaphraseMap,
}

#[pymethods]
impl PyParaphraseMap {
    #[new]
    #[pyo3(signature = (entries=Vec::new()))]
    fn new(entries: Vec<(String, String, bool)>) -> Self {
        let inner = rarelex::ParaphraseMap::from_entries(entries.into_iter().map(|(w, p, a)| {
            (
                w,
                MapEntry {
                    paraphrase: p,
                    is_abbreviation: a,
                },
            )
        }));
        Self { inner }
    }

    /// Selects rare single-gloss medical words. Returns the map and the
    /// per-rule exclusion counts.
    #[staticmethod]
    #[pyo3(signature = (table, lexicon, threshold=rarelex::selector::DEFAULT_THRESHOLD, tags_policy="default"))]
    fn select(
        table: &PyFrequencyTable,
        lexicon: PathBuf,
        threshold: u64,
        tags_policy: &str,
    ) -> PyResult<(Self, BTreeMap<String, usize>)> {
        let policy = MedicalTagPolicy::parse(tags_policy).map_err(py_err)?;
        let entries = rarelex::parse_entries(&lexicon).map_err(py_err)?;
        let (medical, prep) = rarelex::prepare_medical(&entries, &policy);
        let config = SelectorConfig::new(threshold).map_err(py_err)?;
        let (inner, s) = rarelex::build_paraphrase_map(&table.inner, &medical, &config).map_err(py_err)?;
        let stats = BTreeMap::from([
            ("non_medical".to_owned(), prep.non_medical),
            ("candidates".to_owned(), s.candidates),
            ("included".to_owned(), s.included),
            ("multi_word".to_owned(), s.multi_word),
            ("not_rare".to_owned(), s.not_rare),
            ("multi_gloss".to_owned(), s.multi_gloss),
            ("rare_gloss_token".to_owned(), s.rare_gloss_token),
        ]);
        Ok((Self { inner }, stats))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: rarelex::ParaphraseMap::load(&path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(py_err)
    }

    fn get(&self, word: &str) -> Option<(String, bool)> {
        self.inner
            .get(word)
            .map(|e| (e.paraphrase.clone(), e.is_abbreviation))
    }

    fn items(&self) -> Vec<(String, String, bool)> {
        self.inner
            .iter()
            .map(|(w, e)| (w.to_owned(), e.paraphrase.clone(), e.is_abbreviation))
            .collect()
    }

    fn augment(&self, text: &str) -> (String, Vec<Span>) {
        augment_text(text, self)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __contains__(&self, word: &str) -> bool {
        self.inner.get(word).is_some()
    }

    fn __repr__(&self) -> String {
        format!("ParaphraseMap(len={})", self.inner.len())
    }
}

#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    rarelex::tokenize(text).into_iter().map(|t| t.into_string()).collect()
}

#[pyfunction]
fn fold(surface: &str) -> String {
    rarelex::fold(surface)
}

#[pyfunction]
fn normalize_gloss(gloss: &str) -> PyResult<String> {
    rarelex::normalize_gloss(gloss).map_err(py_err)
}

/// Returns the annotated text and `(sent, offset, word, inserted)` spans.
#[pyfunction]
fn augment_text(text: &str, map: &PyParaphraseMap) -> (String, Vec<Span>) {
    let (out, spans) = rarelex::augment_text(text, &map.inner);
    (out, spans.into_iter().map(span_tuple).collect())
}

#[pyfunction]
fn strip_annotations(text: &str, spans: Vec<Span>) -> PyResult<String> {
    let spans: Vec<AnnotationSpan> = spans
        .into_iter()
        .map(|(sentence_index, offset, matched_surface, inserted_text)| AnnotationSpan {
            sentence_index,
            offset,
            matched_surface,
            inserted_text,
        })
        .collect();
    rarelex::strip_annotations(text, &spans).map_err(py_err)
}

fn label_of(value: &Bound<'_, PyAny>) -> PyResult<Label> {
    if let Ok(s) = value.extract::<String>() {
        return Ok(Label::Class(s));
    }
    Ok(Label::Score(value.extract::<f64>()?))
}

/// Renders one example; returns `(text, mask_offset, candidates)`.
#[pyfunction]
fn render_prompt(
    task_name: &str,
    sentence1: &str,
    sentence2: &str,
    label: &Bound<'_, PyAny>,
) -> PyResult<(String, usize, Vec<String>)> {
    let t = task(task_name)?;
    let label = label_of(label)?;
    t.check_label(&label).map_err(py_err)?;
    let ex = Example::new("", sentence1, sentence2, label, Split::Test);
    let p = rarelex::render_prompt(&ex, &PromptTemplate::for_task(t)).map_err(py_err)?;
    Ok((p.rendered, p.mask_offset, p.candidate_tokens))
}

#[pyfunction]
fn verbalize(task_name: &str, label: &str) -> PyResult<String> {
    let tpl = PromptTemplate::for_task(task(task_name)?);
    tpl.verbalize(label).map(str::to_owned).map_err(py_err)
}

#[pyfunction]
fn unverbalize(task_name: &str, token: &str) -> PyResult<String> {
    let tpl = PromptTemplate::for_task(task(task_name)?);
    tpl.unverbalize(token).map(str::to_owned).map_err(py_err)
}

#[pyfunction]
fn score_to_target(score: f64) -> PyResult<(f64, f64)> {
    rarelex::score_to_target(score).map_err(py_err)
}

#[pyfunction]
fn prediction_to_score(p_yes: f64, p_no: f64) -> PyResult<f64> {
    rarelex::prediction_to_score(p_yes, p_no).map_err(py_err)
}

#[pyfunction]
fn pearson(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    rarelex::pearson(&x, &y).map_err(py_err)
}

/// Returns `(t, p_value, df, mean_diff)`.
#[pyfunction]
fn paired_t_test(a: Vec<f64>, b: Vec<f64>) -> PyResult<(f64, f64, usize, f64)> {
    let t = rarelex::paired_t_test(&a, &b).map_err(py_err)?;
    Ok((t.t, t.p_value, t.df, t.mean_diff))
}

#[pyfunction]
fn student_t_cdf(t: f64, df: f64) -> f64 {
    rarelex::student_t_cdf(t, df)
}

/// Returns the train and dev ids drawn for one seed.
#[pyfunction]
#[pyo3(signature = (dataset, task_name, k, seed, full=false))]
fn sample_fewshot(
    dataset: PathBuf,
    task_name: &str,
    k: usize,
    seed: u64,
    full: bool,
) -> PyResult<(Vec<String>, Vec<String>)> {
    let ds = Dataset::load(&dataset).map_err(py_err)?;
    let mut plan = rarelex::SamplePlan::new(task(task_name)?, k, vec![seed]).map_err(py_err)?;
    plan.full = full;
    let s = rarelex::sample_fewshot(&ds, &plan, seed).map_err(py_err)?;
    let ids = |v: Vec<&str>| v.into_iter().map(String::from).collect();
    Ok((ids(s.train_ids()), ids(s.dev_ids())))
}

/// Returns the protocol violations of a prediction file, empty if valid.
#[pyfunction]
fn validate_protocol(prompts: PathBuf, preds: PathBuf) -> PyResult<Vec<String>> {
    let report = rarelex::pipeline::validate_protocol(&prompts, &preds).map_err(py_err)?;
    Ok(report.violations.iter().map(|v| v.to_string()).collect())
}

/// Runs the pipeline from a JSON config. Returns the manifest in stage order
/// as `[(stage, [(path, sha256), ...]), ...]` and per-k results as
/// `[(k, mean, baseline_mean, p_value), ...]`.
#[pyfunction]
#[pyo3(signature = (config, out_dir=None))]
#[allow(clippy::type_complexity)]
fn run_pipeline(
    py: Python<'_>,
    config: PathBuf,
    out_dir: Option<PathBuf>,
) -> PyResult<(Vec<(String, Vec<(String, String)>)>, Vec<(usize, f64, f64, f64)>)> {
    let mut cfg = PipelineConfig::load(&config).map_err(py_err)?;
    if let Some(d) = out_dir {
        cfg.out_dir = d;
    }
    let run = py.detach(|| rarelex::run_pipeline(&cfg)).map_err(py_err)?;
    let manifest = run
        .manifest
        .stages
        .into_iter()
        .map(|s| {
            let files = s.artifacts.into_iter().map(|a| (a.path, a.sha256)).collect();
            (s.name, files)
        })
        .collect();
    let reports = run
        .reports
        .iter()
        .map(|r| (r.k, r.report.mean, r.report.baseline_mean, r.report.p_value))
        .collect();
    Ok((manifest, reports))
}

/// Writes the synthetic fixture into `directory` and returns the path of
/// its `run.json`.
#[pyfunction]
#[pyo3(signature = (directory, seed=0, tokens=1_000_000, examples=200, task_name="mednli"))]
fn write_fixture(
    py: Python<'_>,
    directory: PathBuf,
    seed: u64,
    tokens: u64,
    examples: usize,
    task_name: &str,
) -> PyResult<PathBuf> {
    let spec = FixtureSpec {
        seed,
        corpus_tokens: tokens,
        examples,
        task: task(task_name)?,
    };
    let files = py
        .detach(|| rarelex::fixture::write_fixture(&directory, &spec))
        .map_err(py_err)?;
    Ok(files.config)
}

#[pymodule(name = "rarelex")]
fn rarelex_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("RarelexError", m.py().get_type::<RarelexError>())?;
    m.add("MASK", rarelex::promptfmt::MASK)?;
    m.add("DEFAULT_THRESHOLD", rarelex::selector::DEFAULT_THRESHOLD)?;
    m.add_class::<PyFrequencyTable>()?;
    m.add_class::<PyParaphraseMap>()?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(fold, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_gloss, m)?)?;
    m.add_function(wrap_pyfunction!(augment_text, m)?)?;
    m.add_function(wrap_pyfunction!(strip_annotations, m)?)?;
    m.add_function(wrap_pyfunction!(render_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(verbalize, m)?)?;
    m.add_function(wrap_pyfunction!(unverbalize, m)?)?;
    m.add_function(wrap_pyfunction!(score_to_target, m)?)?;
    m.add_function(wrap_pyfunction!(prediction_to_score, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(paired_t_test, m)?)?;
    m.add_function(wrap_pyfunction!(student_t_cdf, m)?)?;
    m.add_function(wrap_pyfunction!(sample_fewshot, m)?)?;
    m.add_function(wrap_pyfunction!(validate_protocol, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(write_fixture, m)?)?;
    Ok(())
}
