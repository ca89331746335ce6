//! Metrics and significance testing over prediction files.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Example, Label, Task};
use crate::error::{Error, Result};
use crate::promptfmt::{prediction_to_score, PromptTemplate};

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    #[serde(rename = "id")]
    pub example_id: String,
    pub scores: BTreeMap<String, f64>,
}

pub fn write_predictions<W: Write>(preds: &[PredictionRecord], mut out: W) -> std::io::Result<()> {
    for p in preds {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn save_predictions(preds: &[PredictionRecord], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_predictions(preds, std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn load_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let source = path.display().to_string();
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::parse(&source, i + 1, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::parse(&source, i + 1, e))?);
    }
    Ok(out)
}

fn index_predictions<'a>(
    preds: &'a [PredictionRecord],
    gold: &[Example],
) -> Result<Vec<(&'a PredictionRecord, &'a str)>> {
    let mut by_id: HashMap<&str, &PredictionRecord> = HashMap::with_capacity(preds.len());
    for p in preds {
        if by_id.insert(&p.example_id, p).is_some() {
            return Err(Error::Evaluation(format!("duplicate prediction for id {}", p.example_id)));
        }
    }
    let mut out = Vec::with_capacity(gold.len());
    for ex in gold {
        let p = by_id
            .remove(ex.id.as_str())
            .ok_or_else(|| Error::Evaluation(format!("missing prediction for id {}", ex.id)))?;
        out.push((p, p.example_id.as_str()));
    }
    if let Some(extra) = by_id.keys().min() {
        return Err(Error::Evaluation(format!("prediction for unknown id {extra}")));
    }
    Ok(out)
}

/// Highest-scoring verbalizer token. Ties go to the token listed first in
/// the template; tokens without a score never win.
pub fn argmax_token<'t>(rec: &PredictionRecord, tpl: &'t PromptTemplate) -> Option<&'t str> {
    let mut best: Option<(&str, f64)> = None;
    for (_, token) in tpl.verbalizers() {
        let Some(&score) = rec.scores.get(token) else {
            continue;
        };
        if best.is_none_or(|(_, b)| score > b) {
            best = Some((token, score));
        }
    }
    best.map(|(t, _)| t)
}

pub fn accuracy(preds: &[PredictionRecord], gold: &[Example], tpl: &PromptTemplate) -> Result<f64> {
    if gold.is_empty() {
        return Err(Error::Evaluation("no gold examples".into()));
    }
    let pairs = index_predictions(preds, gold)?;
    let mut correct = 0usize;
    for ((rec, id), ex) in pairs.iter().zip(gold) {
        let Label::Class(want) = &ex.label else {
            return Err(Error::Evaluation(format!("example {id} has no class label")));
        };
        let token = argmax_token(rec, tpl)
            .ok_or_else(|| Error::Evaluation(format!("prediction {id} scores no candidate")))?;
        if tpl.unverbalize(token)? == want {
            correct += 1;
        }
    }
    Ok(correct as f64 / gold.len() as f64)
}

/// Similarity score implied by a prediction. Candidate scores are treated as
/// log-scores and normalized over the two verbalizers.
pub fn predicted_score(rec: &PredictionRecord, tpl: &PromptTemplate) -> Result<f64> {
    let [(_, yes), (_, no)] = tpl.verbalizers() else {
        return Err(Error::Template("similarity needs exactly two verbalizers".into()));
    };
    let get = |token: &str| {
        rec.scores
            .get(token)
            .copied()
            .ok_or_else(|| Error::Evaluation(format!("prediction {} lacks {token:?}", rec.example_id)))
    };
    let (s_yes, s_no) = (get(yes)?, get(no)?);
    let top = s_yes.max(s_no);
    prediction_to_score((s_yes - top).exp(), (s_no - top).exp())
}

pub fn pearson_metric(
    preds: &[PredictionRecord],
    gold: &[Example],
    tpl: &PromptTemplate,
) -> Result<f64> {
    let pairs = index_predictions(preds, gold)?;
    let mut x = Vec::with_capacity(gold.len());
    let mut y = Vec::with_capacity(gold.len());
    for ((rec, id), ex) in pairs.iter().zip(gold) {
        let Label::Score(s) = ex.label else {
            return Err(Error::Evaluation(format!("example {id} has no score label")));
        };
        x.push(s);
        y.push(predicted_score(rec, tpl)?);
    }
    pearson(&x, &y)
}

/// Accuracy for MedNLI, Pearson correlation for MedSTS.
pub fn task_metric(task: Task, preds: &[PredictionRecord], gold: &[Example]) -> Result<f64> {
    let tpl = PromptTemplate::for_task(task);
    match task {
        Task::Mednli => accuracy(preds, gold, &tpl),
        Task::Medsts => pearson_metric(preds, gold, &tpl),
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
    (m, var.sqrt())
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument("need at least two points".into()));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0` (Lanczos, g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Continued fraction for the incomplete beta function, evaluated with the
/// modified Lentz method.
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 10_000;
    const EPS: f64 = 1e-16;
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

/// Two-sided tail mass `P(|T| >= |t|)` of Student's t with `df` degrees of
/// freedom.
pub fn student_t_two_tailed(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t))
}

pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    if t == 0.0 {
        return 0.5;
    }
    let half_tail = 0.5 * student_t_two_tailed(t, df);
    if t > 0.0 {
        1.0 - half_tail
    } else {
        half_tail
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TTest {
    pub t: f64,
    pub p_value: f64,
    pub df: usize,
    pub mean_diff: f64,
}

/// Paired two-tailed t-test on `a - b`.
///
/// When the differences are constant (standard deviation zero, up to a few
/// ulps of rounding relative to the largest difference) the test is
/// degenerate: `p = 1` if they are all zero, otherwise `p = 0` with an
/// infinite `t`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InvalidArgument("paired t-test needs at least two pairs".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let m = mean(&d);
    let var = d.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    let scale = d.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    let df = n - 1;
    if sd <= 64.0 * f64::EPSILON * scale || sd == 0.0 {
        let all_zero = d.iter().all(|&x| x == 0.0);
        let (t, p_value) = if all_zero {
            (0.0, 1.0)
        } else {
            (f64::INFINITY.copysign(m), 0.0)
        };
        return Ok(TTest {
            t,
            p_value,
            df,
            mean_diff: if all_zero { 0.0 } else { m },
        });
    }
    let t = m / (sd / (n as f64).sqrt());
    Ok(TTest {
        t,
        p_value: student_t_two_tailed(t, df as f64),
        df,
        mean_diff: m,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeedMetric {
    pub seed: u64,
    pub ours: f64,
    pub baseline: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub per_seed: Vec<SeedMetric>,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub baseline_mean: f64,
    pub baseline_std: f64,
    pub delta_mean: f64,
    pub t: f64,
    pub p_value: f64,
    pub significant: bool,
}

/// Summarizes per-seed metrics of a run against a baseline run. Both lists
/// must cover the same seeds in the same order.
pub fn aggregate(ours: &[(u64, f64)], base: &[(u64, f64)]) -> Result<EvalReport> {
    if ours.len() != base.len() {
        return Err(Error::InvalidArgument(format!(
            "length mismatch: {} runs vs {} baseline runs",
            ours.len(),
            base.len()
        )));
    }
    if let Some((a, b)) = ours.iter().zip(base).find(|(a, b)| a.0 != b.0) {
        return Err(Error::InvalidArgument(format!(
            "seed order differs: {} vs {}",
            a.0, b.0
        )));
    }
    let xs: Vec<f64> = ours.iter().map(|s| s.1).collect();
    let ys: Vec<f64> = base.iter().map(|s| s.1).collect();
    let test = paired_t_test(&xs, &ys)?;
    let (mean, std) = mean_std(&xs);
    let (baseline_mean, baseline_std) = mean_std(&ys);
    Ok(EvalReport {
        per_seed: ours
            .iter()
            .zip(base)
            .map(|(a, b)| SeedMetric {
                seed: a.0,
                ours: a.1,
                baseline: b.1,
            })
            .collect(),
        n: xs.len(),
        mean,
        std,
        baseline_mean,
        baseline_std,
        delta_mean: mean - baseline_mean,
        t: test.t,
        p_value: test.p_value,
        significant: test.p_value < SIGNIFICANCE_LEVEL,
    })
}

impl EvalReport {
    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "seed\tours\tbaseline\tdiff")?;
        for s in &self.per_seed {
            writeln!(out, "{}\t{}\t{}\t{}", s.seed, s.ours, s.baseline, s.ours - s.baseline)?;
        }
        writeln!(out, "#mean\t{}\t{}\t{}", self.mean, self.baseline_mean, self.delta_mean)?;
        writeln!(out, "#std\t{}\t{}", self.std, self.baseline_std)?;
        writeln!(out, "#t\t{}", self.t)?;
        writeln!(out, "#p_value\t{}", self.p_value)?;
        out.flush()
    }

    pub fn summary(&self, metric: &str) -> String {
        format!(
            "{metric} over {} seeds: {:.4} ± {:.4} (baseline {:.4} ± {:.4}); Δ {:+.4}; paired t-test p = {:.4}{}",
            self.n,
            self.mean,
            self.std,
            self.baseline_mean,
            self.baseline_std,
            self.delta_mean,
            self.p_value,
            if self.significant { " (p < 0.05)" } else { "" }
        )
    }
}
