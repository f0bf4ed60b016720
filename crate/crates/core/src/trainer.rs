//! Joint training loop: CD-k updates with mode-driven updates interleaved at
//! a sigmoidally rising probability, plain SGD with a linearly decaying rate.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::BinaryDataset;
use crate::error::{DbmError, Result};
use crate::eval::{evaluate_avg_ll, AisSettings, LlKind};
use crate::logspace::sigmoid;
use crate::meanfield::{mf_fixed_point, MeanFieldState, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use crate::mode::{mode_statistics, SolverChoice};
use crate::model::{DbmParams, JointState, LayerShape};
use crate::sampler::{cd_statistics, data_statistics, PairStatistics};
use crate::{child_seeds, DbmRng};

/// `P_mode(n) = p_max · σ(alpha_sched · n + beta_sched)` for `n ∈ [0, N]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub alpha_sched: f64,
    pub beta_sched: f64,
    pub p_max: f64,
    pub total_epochs: usize,
}

impl ScheduleParams {
    /// Slope `20/N`, offset `−6`, ceiling `0.1`.
    pub fn standard(total_epochs: usize) -> Self {
        Self::with(total_epochs, 20.0, -6.0, 0.1)
    }

    /// Slope `slope_scale / N`.
    pub fn with(total_epochs: usize, slope_scale: f64, beta_sched: f64, p_max: f64) -> Self {
        let n = total_epochs.max(1);
        Self {
            alpha_sched: slope_scale / n as f64,
            beta_sched,
            p_max,
            total_epochs: n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_max) || self.total_epochs == 0 {
            return Err(DbmError::Config(format!(
                "schedule needs p_max in [0, 1] and N >= 1, got p_max = {} and N = {}",
                self.p_max, self.total_epochs
            )));
        }
        Ok(())
    }
}

pub fn mode_probability(n: f64, sched: &ScheduleParams) -> f64 {
    sched.p_max * sigmoid(sched.alpha_sched * n + sched.beta_sched)
}

/// What the schedule index `n` counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleUnit {
    /// `n` is the update index and `N` the total update count.
    #[default]
    Update,
    /// `n` is the epoch index (one pass over the data) and `N` the epoch count.
    Epoch,
}

/// Hyperparameters shared by every run of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub total_updates: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    /// Defaults to `min(|D|, 100)`.
    pub batch_size: Option<usize>,
    pub cd_k: usize,
    /// `p_max` of the mode schedule; 0 gives plain CD.
    pub p_max: f64,
    pub beta_sched: f64,
    /// Numerator of the schedule slope `alpha_sched = slope_scale / N`.
    pub slope_scale: f64,
    pub schedule_unit: ScheduleUnit,
    pub mode_solver: SolverChoice,
    /// Trace records every this many updates; 0 records only the start and end.
    pub eval_every: usize,
    /// AIS settings for trace evaluations of models too large to enumerate;
    /// `n_runs = 0` skips them.
    pub trace_ais: AisSettings,
    pub init_weight_std: f64,
    pub mf_max_iters: usize,
    pub mf_tol: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            total_updates: 1000,
            lr_start: 1.0,
            lr_end: 0.001,
            batch_size: None,
            cd_k: 1,
            p_max: 0.1,
            beta_sched: -6.0,
            slope_scale: 20.0,
            schedule_unit: ScheduleUnit::Update,
            mode_solver: SolverChoice::default(),
            eval_every: 0,
            trace_ais: AisSettings { n_runs: 0, ..AisSettings::default() },
            init_weight_std: 0.01,
            mf_max_iters: DEFAULT_MAX_ITERS,
            mf_tol: DEFAULT_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub shape: LayerShape,
    #[serde(default)]
    pub seed: u64,
    #[serde(flatten)]
    pub settings: TrainSettings,
}

impl TrainConfig {
    pub fn new(shape: LayerShape, seed: u64, settings: TrainSettings) -> Self {
        Self { shape, seed, settings }
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.settings;
        if s.total_updates == 0 {
            return Err(DbmError::Config("total_updates must be at least 1".into()));
        }
        if !(s.lr_end > 0.0 && s.lr_start >= s.lr_end) {
            return Err(DbmError::Config(format!(
                "learning rates need lr_start >= lr_end > 0, got {} -> {}",
                s.lr_start, s.lr_end
            )));
        }
        if s.batch_size == Some(0) {
            return Err(DbmError::Config("batch_size must be at least 1".into()));
        }
        if s.cd_k == 0 {
            return Err(DbmError::Config("cd_k must be at least 1".into()));
        }
        if s.mf_max_iters == 0 || !(s.mf_tol > 0.0) {
            return Err(DbmError::Config("mean field needs mf_max_iters >= 1 and mf_tol > 0".into()));
        }
        if !(s.init_weight_std >= 0.0) {
            return Err(DbmError::Config("init_weight_std must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&s.p_max) {
            return Err(DbmError::Config(format!("p_max must lie in [0, 1], got {}", s.p_max)));
        }
        Ok(())
    }

    pub fn batch_size(&self, dataset_len: usize) -> usize {
        self.settings.batch_size.unwrap_or(dataset_len.min(100)).min(dataset_len).max(1)
    }

    /// Schedule for a dataset of `dataset_len` vectors.
    pub fn schedule(&self, dataset_len: usize) -> ScheduleParams {
        let s = &self.settings;
        let total = match s.schedule_unit {
            ScheduleUnit::Update => s.total_updates,
            ScheduleUnit::Epoch => s.total_updates.div_ceil(updates_per_epoch(dataset_len, self.batch_size(dataset_len))),
        };
        ScheduleParams::with(total, s.slope_scale, s.beta_sched, s.p_max)
    }

    /// Schedule index `n` at a given update.
    pub fn schedule_index(&self, update: usize, dataset_len: usize) -> f64 {
        match self.settings.schedule_unit {
            ScheduleUnit::Update => update as f64,
            ScheduleUnit::Epoch => (update / updates_per_epoch(dataset_len, self.batch_size(dataset_len))) as f64,
        }
    }
}

fn updates_per_epoch(dataset_len: usize, batch: usize) -> usize {
    dataset_len.div_ceil(batch).max(1)
}

/// `lr_start + (lr_end − lr_start) · u / (total − 1)`.
pub fn learning_rate(update_index: usize, config: &TrainConfig) -> f64 {
    let s = &config.settings;
    if s.total_updates <= 1 {
        return s.lr_start;
    }
    let t = update_index as f64 / (s.total_updates - 1) as f64;
    s.lr_start + (s.lr_end - s.lr_start) * t
}

/// `θ + eps · (data − model)` for every weight and bias.
pub fn gradient_step(params: &DbmParams, data: &PairStatistics, model: &PairStatistics, eps: f64) -> Result<DbmParams> {
    let mut next = params.clone();
    apply_gradient(&mut next, data, model, eps)?;
    Ok(next)
}

fn apply_gradient(params: &mut DbmParams, data: &PairStatistics, model: &PairStatistics, eps: f64) -> Result<()> {
    if !data.matches(params) || !model.matches(params) {
        return Err(DbmError::shape("statistics do not match the model dimensions"));
    }
    for (i, (d, m)) in data.weights.iter().zip(&model.weights).enumerate() {
        let w = params.weight_mut(i + 1).as_mut_slice();
        for ((w, d), m) in w.iter_mut().zip(d.as_slice()).zip(m.as_slice()) {
            *w += eps * (d - m);
        }
    }
    for (l, (d, m)) in data.biases.iter().zip(&model.biases).enumerate() {
        for ((b, d), m) in params.bias_mut(l).iter_mut().zip(d).zip(m) {
            *b += eps * (d - m);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    /// Updates applied so far.
    pub update: usize,
    pub avg_ll: Option<f64>,
    pub ll_kind: LlKind,
    pub mode_updates_so_far: usize,
    /// Fraction of mean-field solves since the previous record that converged.
    pub mf_converged_rate: Option<f64>,
    /// Rate of the most recent update (of the first update for `update = 0`).
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainTrace {
    pub records: Vec<TraceRecord>,
    pub mode_updates: usize,
    pub cd_updates: usize,
}

impl TrainTrace {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["update", "avg_ll", "ll_kind", "mode_updates_so_far", "lr"])?;
        for r in &self.records {
            w.write_record([
                r.update.to_string(),
                r.avg_ll.map(|x| x.to_string()).unwrap_or_default(),
                r.ll_kind.to_string(),
                r.mode_updates_so_far.to_string(),
                r.lr.to_string(),
            ])?;
        }
        w.flush().map_err(|e| DbmError::io("trace", e))?;
        Ok(())
    }

    pub fn first_ll(&self) -> Option<f64> {
        self.records.first().and_then(|r| r.avg_ll)
    }

    pub fn last_ll(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.avg_ll)
    }
}

/// Initial parameters: weights `N(0, init_weight_std²)`, biases zero. This is
/// the first draw [`train`] makes from its generator.
pub fn init_params<R: Rng + ?Sized>(config: &TrainConfig, rng: &mut R) -> DbmParams {
    DbmParams::random(&config.shape, config.settings.init_weight_std, 0.0, rng)
}

/// Trains with a generator seeded from `config.seed`.
pub fn train_seeded(config: &TrainConfig, dataset: &BinaryDataset) -> Result<(DbmParams, TrainTrace)> {
    train(config, dataset, &mut DbmRng::seed_from_u64(config.seed))
}

/// Runs `total_updates` gradient updates from a fresh initialization.
///
/// Each update draws a minibatch (a fresh shuffle every epoch; the whole set
/// in order when it fits in one batch), then with probability
/// [`mode_probability`] applies mode-driven statistics and otherwise CD
/// statistics: mean-field data term and the endpoints of `cd_k`-sweep chains
/// started from the data with hidden nodes sampled from the mean field.
pub fn train(config: &TrainConfig, dataset: &BinaryDataset, rng: &mut DbmRng) -> Result<(DbmParams, TrainTrace)> {
    config.validate()?;
    let s = &config.settings;
    let shape = &config.shape;
    if dataset.is_empty() {
        return Err(DbmError::EmptyBatch);
    }
    if dataset.dim() != shape.visible() {
        return Err(DbmError::shape(format!(
            "dataset dimension {} does not match visible layer {}",
            dataset.dim(),
            shape.visible()
        )));
    }
    let n_data = dataset.len();
    let batch = config.batch_size(n_data);
    let schedule = config.schedule(n_data);
    schedule.validate()?;

    let mut params = init_params(config, rng);
    let mut trace = TrainTrace::default();
    let mut mf_total = 0usize;
    let mut mf_converged = 0usize;
    let record = |params: &DbmParams, update: usize, lr: f64, trace: &mut TrainTrace, rng: &mut DbmRng, mf: (usize, usize)| -> Result<()> {
        let (avg_ll, ll_kind) = trace_ll(params, dataset, &s.trace_ais, rng)?;
        trace.records.push(TraceRecord {
            update,
            avg_ll,
            ll_kind,
            mode_updates_so_far: trace.mode_updates,
            mf_converged_rate: (mf.0 > 0).then(|| mf.1 as f64 / mf.0 as f64),
            lr,
        });
        Ok(())
    };
    // The evaluation stream is separate so that tracing never changes training.
    let mut eval_rng = DbmRng::seed_from_u64(rng.random());
    record(&params, 0, learning_rate(0, config), &mut trace, &mut eval_rng, (0, 0))?;

    let mut order: Vec<usize> = (0..n_data).collect();
    let mut cursor = n_data;
    let mut mb: Vec<Vec<u8>> = Vec::with_capacity(batch);
    for update in 0..s.total_updates {
        if batch == n_data {
            mb.clear();
            mb.extend(dataset.vectors().iter().cloned());
        } else {
            mb.clear();
            while mb.len() < batch {
                if cursor == n_data {
                    order.shuffle(rng);
                    cursor = 0;
                }
                mb.push(dataset.vectors()[order[cursor]].clone());
                cursor += 1;
            }
        }

        let p_mode = mode_probability(config.schedule_index(update, n_data), &schedule);
        let use_mode = p_mode > 0.0 && rng.random::<f64>() < p_mode;
        let (data, model) = if use_mode {
            trace.mode_updates += 1;
            mode_statistics(&params, &mb, &s.mode_solver, rng)?
        } else {
            trace.cd_updates += 1;
            let mfs = mean_fields(&params, &mb, s.mf_max_iters, s.mf_tol, rng)?;
            mf_total += mfs.len();
            mf_converged += mfs.iter().filter(|m| m.converged).count();
            let data = data_statistics(&params, &mb, &mfs)?;
            let starts = mb
                .iter()
                .zip(&mfs)
                .map(|(v, mf)| mf.sample_state(&params, v, rng))
                .collect::<Result<Vec<JointState>>>()?;
            let model = cd_statistics(&params, &starts, s.cd_k, rng)?;
            (data, model)
        };
        let lr = learning_rate(update, config);
        apply_gradient(&mut params, &data, &model, lr)?;
        if !params.is_finite() {
            return Err(DbmError::domain(format!("parameters diverged at update {update}")));
        }

        let done = update + 1;
        if (s.eval_every > 0 && done % s.eval_every == 0) || done == s.total_updates {
            record(&params, done, lr, &mut trace, &mut eval_rng, (mf_total, mf_converged))?;
            mf_total = 0;
            mf_converged = 0;
        }
    }
    Ok((params, trace))
}

fn mean_fields(
    params: &DbmParams,
    batch: &[Vec<u8>],
    max_iters: usize,
    tol: f64,
    rng: &mut DbmRng,
) -> Result<Vec<MeanFieldState>> {
    let seeds = child_seeds(rng, batch.len());
    batch
        .par_iter()
        .zip(seeds.par_iter())
        .map(|(v, &seed)| mf_fixed_point(params, v, max_iters, tol, &mut DbmRng::seed_from_u64(seed)))
        .collect()
}

fn trace_ll(
    params: &DbmParams,
    dataset: &BinaryDataset,
    ais: &AisSettings,
    rng: &mut DbmRng,
) -> Result<(Option<f64>, LlKind)> {
    let shape = params.shape();
    let enumerable = shape.even_nodes().min(shape.odd_nodes()) <= crate::reduced::ENUMERATION_LIMIT;
    if !enumerable && ais.n_runs == 0 {
        return Ok((None, LlKind::None));
    }
    let (ll, est) = evaluate_avg_ll(params, dataset, ais, rng)?;
    Ok((Some(ll), if est.exact { LlKind::Exact } else { LlKind::Ais }))
}
