//! Ensemble experiments: sweep over hidden-layer sizes, train each seed,
//! evaluate, and write `runs.csv` plus a median/percentile `summary.csv`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{binarize, load_idx, shifting_bar, BinaryDataset};
use crate::error::{DbmError, Result};
use crate::eval::{evaluate_avg_ll, AisSettings, LlKind};
use crate::model::LayerShape;
use crate::trainer::{train, TrainConfig, TrainSettings};
use crate::DbmRng;

/// Splits `n_h_total` hidden nodes into two layers with `n2 / n1 ≈ alpha_topo`.
pub fn resolve_shape(n_v: usize, n_h_total: usize, alpha_topo: f64) -> Result<LayerShape> {
    if n_h_total < 2 || !(alpha_topo > 0.0) || !alpha_topo.is_finite() {
        return Err(DbmError::Config(format!(
            "cannot split {n_h_total} hidden nodes at ratio {alpha_topo}"
        )));
    }
    let mut n1 = (n_h_total as f64 / (1.0 + alpha_topo)).round() as usize;
    n1 = n1.clamp(1, n_h_total - 1);
    LayerShape::new(vec![n_v, n1, n_h_total - n1])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub median: f64,
    pub p5: f64,
    pub p95: f64,
}

/// Median (mean of the two central values for even counts) and nearest-rank
/// 5th and 95th percentiles.
pub fn aggregate(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(DbmError::domain("cannot aggregate an empty list"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    };
    let nearest_rank = |pct: usize| v[(pct * n).div_ceil(100).max(1) - 1];
    Ok(Summary {
        median,
        p5: nearest_rank(5),
        p95: nearest_rank(95),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    /// Two-layer DBM, CD updates only.
    #[serde(rename = "CD")]
    Cd,
    /// Two-layer DBM with mode-assisted updates.
    #[serde(rename = "MA")]
    Ma,
    /// Single hidden layer of `n_h_total` nodes, CD updates only.
    #[serde(rename = "RBM-CD")]
    RbmCd,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Cd => "CD",
            Method::Ma => "MA",
            Method::RbmCd => "RBM-CD",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = DbmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "CD" | "cd" => Ok(Method::Cd),
            "MA" | "ma" => Ok(Method::Ma),
            "RBM-CD" | "rbm-cd" => Ok(Method::RbmCd),
            other => Err(DbmError::Config(format!("unknown method {other:?} (expected CD, MA or RBM-CD)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    ShiftingBar {
        n_v: usize,
        /// Defaults to `n_v / 2`.
        #[serde(default)]
        bar_len: Option<usize>,
    },
    Idx {
        images: PathBuf,
        #[serde(default = "default_threshold")]
        threshold: u8,
        /// Keep only the first `limit` images.
        #[serde(default)]
        limit: Option<usize>,
    },
}

fn default_threshold() -> u8 {
    128
}

impl DatasetSpec {
    pub fn load(&self) -> Result<BinaryDataset> {
        match self {
            DatasetSpec::ShiftingBar { n_v, bar_len } => shifting_bar(*n_v, bar_len.unwrap_or(n_v / 2)),
            DatasetSpec::Idx { images, threshold, limit } => {
                let d = binarize(&load_idx(images)?, *threshold);
                Ok(match limit {
                    Some(n) => d.head(*n),
                    None => d,
                })
            }
        }
    }
}

/// Final-evaluation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    /// Used when the partition function cannot be enumerated.
    pub ais: AisSettings,
    /// Evaluate on the first `max_vectors` training vectors only.
    pub max_vectors: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub methods: Vec<Method>,
    /// Sweep over total hidden-node counts.
    pub n_h_totals: Vec<usize>,
    /// `n_{h2} / n_{h1}` for the two-layer methods.
    pub alpha_topo: f64,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default)]
    pub eval: EvalSettings,
    pub ensemble_size: usize,
    #[serde(default)]
    pub seed_base: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| DbmError::io(path, e))?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ensemble_size == 0 {
            return Err(DbmError::Config("ensemble_size must be at least 1".into()));
        }
        if self.methods.is_empty() || self.n_h_totals.is_empty() {
            return Err(DbmError::Config("methods and n_h_totals must be nonempty".into()));
        }
        Ok(())
    }

    /// Shape for one sweep point.
    pub fn shape(&self, method: Method, n_v: usize, n_h_total: usize) -> Result<LayerShape> {
        match method {
            Method::RbmCd => LayerShape::new(vec![n_v, n_h_total]),
            Method::Cd | Method::Ma => resolve_shape(n_v, n_h_total, self.alpha_topo),
        }
    }

    pub fn train_config(&self, method: Method, shape: LayerShape, seed: u64) -> TrainConfig {
        let mut settings = self.train.clone();
        if method != Method::Ma {
            settings.p_max = 0.0;
        }
        TrainConfig::new(shape, seed, settings)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub method: Method,
    pub n_v: usize,
    pub n_h_total: usize,
    pub alpha_topo: f64,
    pub seed: u64,
    /// `Err` holds the failure message.
    pub outcome: std::result::Result<(f64, LlKind), String>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub n_v: usize,
    pub n_h_total: usize,
    pub alpha_topo: f64,
    pub n_ok: usize,
    pub summary: Option<Summary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub runs: Vec<RunRow>,
    pub summaries: Vec<SummaryRow>,
}

impl ExperimentReport {
    pub fn all_ok(&self) -> bool {
        self.runs.iter().all(|r| r.outcome.is_ok())
    }

    pub fn write_runs<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "method",
            "n_v",
            "n_h_total",
            "alpha_topo",
            "seed",
            "final_avg_ll",
            "ll_kind",
            "wall_seconds",
        ])?;
        for r in &self.runs {
            let (ll, kind) = match &r.outcome {
                Ok((ll, kind)) => (ll.to_string(), kind.to_string()),
                Err(_) => (String::new(), "failed".to_string()),
            };
            w.write_record([
                r.method.to_string(),
                r.n_v.to_string(),
                r.n_h_total.to_string(),
                r.alpha_topo.to_string(),
                r.seed.to_string(),
                ll,
                kind,
                format!("{:.3}", r.wall_seconds),
            ])?;
        }
        w.flush().map_err(|e| DbmError::io("runs.csv", e))?;
        Ok(())
    }

    pub fn write_summary<W: std::io::Write>(&self, out: W) -> Result<()> {
        write_summary_rows(&self.summaries, out)
    }

    /// Writes `runs.csv` and `summary.csv` into `dir`, creating it if needed.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| DbmError::io(dir, e))?;
        let runs = dir.join("runs.csv");
        self.write_runs(fs::File::create(&runs).map_err(|e| DbmError::io(&runs, e))?)?;
        let summary = dir.join("summary.csv");
        self.write_summary(fs::File::create(&summary).map_err(|e| DbmError::io(&summary, e))?)
    }
}

/// Trains and evaluates one run. Training draws from a generator seeded with
/// `seed`; the final evaluation continues the same stream.
pub fn run_one(config: &ExperimentConfig, dataset: &BinaryDataset, method: Method, n_h_total: usize, seed: u64) -> Result<(f64, LlKind)> {
    let shape = config.shape(method, dataset.dim(), n_h_total)?;
    let tc = config.train_config(method, shape, seed);
    let mut rng = DbmRng::seed_from_u64(seed);
    let (params, _) = train(&tc, dataset, &mut rng)?;
    let eval_set = match config.eval.max_vectors {
        Some(n) => dataset.head(n),
        None => dataset.clone(),
    };
    let (ll, est) = evaluate_avg_ll(&params, &eval_set, &config.eval.ais, &mut rng)?;
    if !ll.is_finite() {
        return Err(DbmError::domain("final log-likelihood is not finite"));
    }
    Ok((ll, if est.exact { LlKind::Exact } else { LlKind::Ais }))
}

/// Runs every (method, n_h_total, seed) combination. Individual failures are
/// recorded in their row and do not stop the sweep. Rows are ordered by
/// method, sweep point and seed regardless of execution order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let dataset = config.dataset.load()?;
    let n_v = dataset.dim();
    let mut jobs = Vec::new();
    for &method in &config.methods {
        for &n_h in &config.n_h_totals {
            for i in 0..config.ensemble_size {
                jobs.push((method, n_h, config.seed_base + i as u64));
            }
        }
    }
    let runs: Vec<RunRow> = jobs
        .par_iter()
        .map(|&(method, n_h_total, seed)| {
            let start = Instant::now();
            let outcome = run_one(config, &dataset, method, n_h_total, seed).map_err(|e| e.to_string());
            RunRow {
                method,
                n_v,
                n_h_total,
                alpha_topo: config.alpha_topo,
                seed,
                outcome,
                wall_seconds: start.elapsed().as_secs_f64(),
            }
        })
        .collect();
    let summaries = summarize(&runs);
    Ok(ExperimentReport { runs, summaries })
}

fn summarize(runs: &[RunRow]) -> Vec<SummaryRow> {
    group_summaries(runs.iter().map(|r| {
        let key = (r.method, r.n_v, r.n_h_total, r.alpha_topo);
        (key, r.outcome.as_ref().ok().map(|o| o.0))
    }))
}

type GroupKey = (Method, usize, usize, f64);

/// One summary per distinct key, in order of first appearance.
fn group_summaries(items: impl Iterator<Item = (GroupKey, Option<f64>)>) -> Vec<SummaryRow> {
    let mut groups: Vec<(GroupKey, Vec<f64>)> = Vec::new();
    for (key, value) in items {
        let idx = match groups.iter().position(|(k, _)| *k == key) {
            Some(i) => i,
            None => {
                groups.push((key, Vec::new()));
                groups.len() - 1
            }
        };
        if let Some(v) = value {
            groups[idx].1.push(v);
        }
    }
    groups
        .into_iter()
        .map(|((method, n_v, n_h_total, alpha_topo), values)| SummaryRow {
            method,
            n_v,
            n_h_total,
            alpha_topo,
            n_ok: values.len(),
            summary: aggregate(&values).ok(),
        })
        .collect()
}

/// Recomputes the summary rows from a `runs.csv` document.
pub fn summarize_runs_csv<R: std::io::Read>(input: R) -> Result<Vec<SummaryRow>> {
    let mut reader = csv::Reader::from_reader(input);
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DbmError::Config(format!("runs.csv has no {name:?} column")))
    };
    let (c_method, c_nv, c_nh, c_alpha, c_ll) =
        (col("method")?, col("n_v")?, col("n_h_total")?, col("alpha_topo")?, col("final_avg_ll")?);
    let parse_err = |line: usize, what: &str| DbmError::Config(format!("runs.csv record {line}: bad {what}"));
    let mut items = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let field = |c: usize| rec.get(c).unwrap_or("");
        let method: Method = field(c_method).parse()?;
        let n_v = field(c_nv).parse().map_err(|_| parse_err(i + 1, "n_v"))?;
        let n_h = field(c_nh).parse().map_err(|_| parse_err(i + 1, "n_h_total"))?;
        let alpha = field(c_alpha).parse().map_err(|_| parse_err(i + 1, "alpha_topo"))?;
        let ll = match field(c_ll) {
            "" => None,
            s => Some(s.parse::<f64>().map_err(|_| parse_err(i + 1, "final_avg_ll"))?),
        };
        items.push(((method, n_v, n_h, alpha), ll));
    }
    Ok(group_summaries(items.into_iter()))
}

/// Writes summary rows in the `summary.csv` layout.
pub fn write_summary_rows<W: std::io::Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "n_v", "n_h_total", "alpha_topo", "n_runs", "median", "p5", "p95"])?;
    for s in rows {
        let stats = match &s.summary {
            Some(x) => [x.median.to_string(), x.p5.to_string(), x.p95.to_string()],
            None => Default::default(),
        };
        let [median, p5, p95] = stats;
        w.write_record([
            s.method.to_string(),
            s.n_v.to_string(),
            s.n_h_total.to_string(),
            s.alpha_topo.to_string(),
            s.n_ok.to_string(),
            median,
            p5,
            p95,
        ])?;
    }
    w.flush().map_err(|e| DbmError::io("summary.csv", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_resolution() {
        assert_eq!(resolve_shape(12, 22, 0.2).unwrap().sizes(), &[12, 18, 4]);
        assert_eq!(resolve_shape(784, 138, 0.15).unwrap().sizes(), &[784, 120, 18]);
        assert_eq!(resolve_shape(4, 2, 1.0).unwrap().sizes(), &[4, 1, 1]);
        assert_eq!(resolve_shape(12, 12, 0.2).unwrap().sizes(), &[12, 10, 2]);
        // round(3 / 1.01) = 3 would leave nothing for the second layer.
        assert_eq!(resolve_shape(4, 3, 0.01).unwrap().sizes(), &[4, 2, 1]);
        assert!(resolve_shape(4, 1, 0.2).is_err());
        assert!(resolve_shape(4, 10, 0.0).is_err());
    }

    #[test]
    fn aggregate_examples() {
        let s = aggregate(&[3.0, 1.0, 2.0]).unwrap();
        assert_eq!((s.median, s.p5, s.p95), (2.0, 1.0, 3.0));
        let s = aggregate(&[7.0]).unwrap();
        assert_eq!((s.median, s.p5, s.p95), (7.0, 7.0, 7.0));
        let hundred: Vec<f64> = (1..=100).map(f64::from).collect();
        let s = aggregate(&hundred).unwrap();
        assert_eq!((s.median, s.p5, s.p95), (50.5, 5.0, 95.0));
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in [Method::Cd, Method::Ma, Method::RbmCd] {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{m}\""));
        }
        assert!("SGD".parse::<Method>().is_err());
    }

    fn tiny_config(ensemble: usize, n_h: Vec<usize>) -> ExperimentConfig {
        ExperimentConfig::from_json(&format!(
            r#"{{
                "dataset": {{"kind": "shifting_bar", "n_v": 6}},
                "methods": ["MA", "CD"],
                "n_h_totals": {n_h:?},
                "alpha_topo": 0.5,
                "train": {{"total_updates": 50, "lr_start": 0.5, "lr_end": 0.05}},
                "ensemble_size": {ensemble},
                "seed_base": 11
            }}"#
        ))
        .unwrap()
    }

    #[test]
    fn experiment_rows_and_summaries() {
        let cfg = tiny_config(2, vec![3, 4]);
        let report = run_experiment(&cfg).unwrap();
        assert!(report.all_ok());
        assert_eq!(report.runs.len(), 8);
        assert_eq!(report.summaries.len(), 4);
        let keys: Vec<(Method, usize, u64)> = report.runs.iter().map(|r| (r.method, r.n_h_total, r.seed)).collect();
        assert_eq!(keys[0], (Method::Ma, 3, 11));
        assert_eq!(keys[1], (Method::Ma, 3, 12));
        assert_eq!(keys[7], (Method::Cd, 4, 12));
        for s in &report.summaries {
            let vals: Vec<f64> = report
                .runs
                .iter()
                .filter(|r| r.method == s.method && r.n_h_total == s.n_h_total)
                .map(|r| r.outcome.as_ref().unwrap().0)
                .collect();
            assert_eq!(s.summary, Some(aggregate(&vals).unwrap()));
        }
    }

    #[test]
    fn summary_recomputes_from_runs_csv() {
        let report = run_experiment(&tiny_config(3, vec![3])).unwrap();
        let mut runs = Vec::new();
        report.write_runs(&mut runs).unwrap();
        let recomputed = summarize_runs_csv(runs.as_slice()).unwrap();
        assert_eq!(recomputed, report.summaries);
        let (mut a, mut b) = (Vec::new(), Vec::new());
        report.write_summary(&mut a).unwrap();
        write_summary_rows(&recomputed, &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_member_summary_equals_the_run() {
        let cfg = tiny_config(1, vec![3]);
        let report = run_experiment(&cfg).unwrap();
        for s in &report.summaries {
            let run = report.runs.iter().find(|r| r.method == s.method).unwrap();
            let v = run.outcome.as_ref().unwrap().0;
            assert_eq!(s.summary.unwrap(), Summary { median: v, p5: v, p95: v });
        }
    }

    #[test]
    fn failures_are_recorded_per_row() {
        let mut cfg = tiny_config(1, vec![3, 40]);
        // 40 hidden nodes split as (27, 13) with a shape too large for the
        // exact solver; the other sweep point still runs.
        cfg.alpha_topo = 0.5;
        cfg.train.mode_solver = crate::mode::SolverChoice::Exact;
        cfg.train.p_max = 1.0;
        cfg.methods = vec![Method::Ma];
        let report = run_experiment(&cfg).unwrap();
        assert_eq!(report.runs.len(), 2);
        assert!(report.runs[0].outcome.is_ok());
        assert!(report.runs[1].outcome.is_err());
        assert!(!report.all_ok());
        let mut buf = Vec::new();
        report.write_runs(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().nth(2).unwrap().contains(",,failed,"));
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let err = ExperimentConfig::from_json(
            r#"{"dataset": {"kind": "shifting_bar", "n_v": 6}, "methods": ["CD"], "n_h_totals": [3],
                "alpha_topo": 0.2, "ensemble_size": 1, "ensemble": 3}"#,
        );
        assert!(err.is_err());
    }
}
