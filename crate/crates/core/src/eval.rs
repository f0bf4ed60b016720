//! Likelihood evaluation: exact partition function and marginals by parity
//! tracing, KL divergence, and annealed importance sampling.
//!
//! All quantities are natural logarithms; average log-likelihoods are nats per
//! data vector.

use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::BinaryDataset;
use crate::error::{DbmError, Result};
use crate::logspace::{log_mean_exp, log_sum_exp, softplus, xlogx, LogSumExp};
use crate::model::{DbmParams, JointState};
use crate::reduced::{Reduced, ENUMERATION_LIMIT};
use crate::sampler::{gibbs_sweep_at, PairStatistics};
use crate::{child_seeds, DbmRng};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartitionEstimate {
    pub log_z: f64,
    pub exact: bool,
    /// Per-run AIS log importance weights; absent for exact values.
    pub run_log_weights: Option<Vec<f64>>,
    pub n_intermediate: usize,
}

impl PartitionEstimate {
    pub fn exact(log_z: f64) -> Self {
        Self {
            log_z,
            exact: true,
            run_log_weights: None,
            n_intermediate: 0,
        }
    }

    pub fn n_runs(&self) -> usize {
        self.run_log_weights.as_ref().map_or(0, Vec::len)
    }

    /// Standard error of `log_z` from the spread of the run weights (delta
    /// method: `sd(w) / (mean(w) √n)`). Zero for exact values.
    pub fn std_error(&self) -> f64 {
        let Some(lw) = &self.run_log_weights else {
            return 0.0;
        };
        let n = lw.len() as f64;
        if lw.len() < 2 {
            return f64::INFINITY;
        }
        let max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = lw.iter().map(|x| (x - max).exp()).collect();
        let mean = w.iter().sum::<f64>() / n;
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        var.sqrt() / (mean * n.sqrt())
    }
}

/// Sums `e^{−E}` over the enumerated class with the other class traced out
/// analytically.
fn traced_log_sum(red: &Reduced) -> Result<f64> {
    let mut acc = LogSumExp::new();
    red.for_each_assignment(|_, a_term, fields| {
        acc.push(a_term + fields.iter().map(|&f| softplus(f)).sum::<f64>());
    })?;
    Ok(acc.value())
}

/// Exact `log Z`: enumerate the smaller parity class, trace the other.
pub fn exact_log_z(params: &DbmParams) -> Result<PartitionEstimate> {
    let red = Reduced::new(params, None, None)?;
    Ok(PartitionEstimate::exact(traced_log_sum(&red)?))
}

/// `log Σ_h e^{−E(v, h)}`.
pub fn unnormalized_log_marginal(params: &DbmParams, v: &[u8]) -> Result<f64> {
    let red = Reduced::new(params, Some(v), None)?;
    traced_log_sum(&red)
}

/// `log p(v)`.
pub fn marginal_log_p(params: &DbmParams, v: &[u8], log_z: f64) -> Result<f64> {
    Ok(unnormalized_log_marginal(params, v)? - log_z)
}

fn check_dataset(params: &DbmParams, dataset: &BinaryDataset) -> Result<()> {
    if dataset.is_empty() {
        return Err(DbmError::EmptyBatch);
    }
    if dataset.dim() != params.shape().visible() {
        return Err(DbmError::shape(format!(
            "dataset dimension {} does not match visible layer {}",
            dataset.dim(),
            params.shape().visible()
        )));
    }
    Ok(())
}

fn mean_unnormalized(params: &DbmParams, dataset: &BinaryDataset) -> Result<f64> {
    check_dataset(params, dataset)?;
    let terms: Vec<f64> = dataset
        .vectors()
        .par_iter()
        .map(|v| unnormalized_log_marginal(params, v))
        .collect::<Result<_>>()?;
    Ok(terms.iter().sum::<f64>() / terms.len() as f64)
}

/// Average exact log-likelihood per data vector.
pub fn exact_avg_ll(params: &DbmParams, dataset: &BinaryDataset) -> Result<f64> {
    let log_z = exact_log_z(params)?.log_z;
    Ok(mean_unnormalized(params, dataset)? - log_z)
}

/// Average log-likelihood against a supplied partition-function estimate.
pub fn ais_avg_ll(params: &DbmParams, dataset: &BinaryDataset, estimate: &PartitionEstimate) -> Result<f64> {
    Ok(mean_unnormalized(params, dataset)? - estimate.log_z)
}

/// `KL(q ‖ p)` over visible states, where `q` lists `(v, q(v))` pairs.
pub fn kl_divergence(q: &[(Vec<u8>, f64)], params: &DbmParams, log_z: f64) -> Result<f64> {
    let total: f64 = q.iter().map(|(_, p)| p).sum();
    if (total - 1.0).abs() > 1e-9 || q.iter().any(|(_, p)| *p < 0.0) {
        return Err(DbmError::domain(format!("q is not normalized (sums to {total})")));
    }
    let mut kl = 0.0;
    for (v, qv) in q.iter().filter(|(_, p)| *p > 0.0) {
        kl += xlogx(*qv) - qv * marginal_log_p(params, v, log_z)?;
    }
    Ok(kl)
}

/// Annealed importance sampling from the uniform distribution (`β = 0`) to
/// the model (`β = 1`) through `n_intermediate` linearly spaced inverse
/// temperatures, with one Gibbs sweep per temperature.
pub fn ais_log_z<R: Rng + ?Sized>(
    params: &DbmParams,
    n_intermediate: usize,
    n_runs: usize,
    rng: &mut R,
) -> Result<PartitionEstimate> {
    if n_intermediate == 0 || n_runs == 0 {
        return Err(DbmError::domain("AIS needs at least one intermediate distribution and one run"));
    }
    let shape = params.shape();
    let log_z0 = shape.total_nodes() as f64 * std::f64::consts::LN_2;
    let seeds = child_seeds(rng, n_runs);
    let k_total = n_intermediate as f64;
    let log_weights: Vec<f64> = seeds
        .par_iter()
        .map(|&seed| {
            let mut rng = DbmRng::seed_from_u64(seed);
            let mut layers = Vec::with_capacity(shape.num_layers());
            for &n in shape.sizes() {
                layers.push((0..n).map(|_| rng.random_range(0..2u8)).collect());
            }
            let mut x = JointState::from_layers(shape, layers).expect("sampled state matches shape");
            let mut lw = 0.0;
            for k in 1..=n_intermediate {
                let beta_prev = (k - 1) as f64 / k_total;
                let beta = k as f64 / k_total;
                let layers: Vec<&[u8]> = x.layers().iter().map(Vec::as_slice).collect();
                lw += (beta - beta_prev) * params.neg_energy_of(&layers);
                if k < n_intermediate {
                    gibbs_sweep_at(params, &mut x, beta, &mut rng, false);
                }
            }
            lw
        })
        .collect();
    Ok(PartitionEstimate {
        log_z: log_z0 + log_mean_exp(&log_weights),
        exact: false,
        run_log_weights: Some(log_weights),
        n_intermediate,
    })
}

/// Exact log Z when the enumerable class fits, otherwise AIS.
pub fn best_log_z<R: Rng + ?Sized>(
    params: &DbmParams,
    n_intermediate: usize,
    n_runs: usize,
    rng: &mut R,
) -> Result<PartitionEstimate> {
    let shape = params.shape();
    if shape.even_nodes().min(shape.odd_nodes()) <= ENUMERATION_LIMIT {
        exact_log_z(params)
    } else {
        ais_log_z(params, n_intermediate, n_runs, rng)
    }
}

/// How a reported log-likelihood was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LlKind {
    Exact,
    Ais,
    None,
}

impl LlKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LlKind::Exact => "exact",
            LlKind::Ais => "ais",
            LlKind::None => "none",
        }
    }
}

impl std::fmt::Display for LlKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AisSettings {
    pub n_runs: usize,
    pub n_intermediate: usize,
}

impl Default for AisSettings {
    fn default() -> Self {
        Self {
            n_runs: 100,
            n_intermediate: 1000,
        }
    }
}

/// Average log-likelihood of `dataset`, exact when the partition function is
/// enumerable and AIS-based otherwise.
pub fn evaluate_avg_ll<R: Rng + ?Sized>(
    params: &DbmParams,
    dataset: &BinaryDataset,
    ais: &AisSettings,
    rng: &mut R,
) -> Result<(f64, PartitionEstimate)> {
    let estimate = best_log_z(params, ais.n_intermediate, ais.n_runs, rng)?;
    let ll = ais_avg_ll(params, dataset, &estimate)?;
    Ok((ll, estimate))
}

// Naive enumeration over every joint state. These serve as independent
// reference values for the traced routines and for exact gradients.

const NAIVE_LIMIT: usize = 24;

fn naive_guard(nodes: usize) -> Result<()> {
    if nodes > NAIVE_LIMIT {
        Err(DbmError::Capacity {
            nodes,
            limit: NAIVE_LIMIT,
        })
    } else {
        Ok(())
    }
}

/// `p(x)` for every joint state, indexed as in [`JointState::from_index`].
pub fn exact_joint_distribution(params: &DbmParams) -> Result<Vec<f64>> {
    let shape = params.shape();
    naive_guard(shape.total_nodes())?;
    let neg: Vec<f64> = (0..1u64 << shape.total_nodes())
        .map(|i| {
            let st = JointState::from_index(shape, i);
            let layers: Vec<&[u8]> = st.layers().iter().map(Vec::as_slice).collect();
            params.neg_energy_of(&layers)
        })
        .collect();
    let lz = log_sum_exp(&neg);
    Ok(neg.iter().map(|x| (x - lz).exp()).collect())
}

/// Exact model expectations `⟨x_i⟩_M` and `⟨x_i x_j⟩_M`.
pub fn exact_model_statistics(params: &DbmParams) -> Result<PairStatistics> {
    let shape = params.shape();
    let probs = exact_joint_distribution(params)?;
    let mut stats = PairStatistics::zeros(shape);
    for (i, &p) in probs.iter().enumerate() {
        let mut contrib = PairStatistics::from_state(shape, &JointState::from_index(shape, i as u64));
        contrib.scale(p);
        stats.add_assign(&contrib);
    }
    Ok(stats)
}

/// Exact data expectations under `q(v) p(h | v)` with `q` the empirical
/// distribution of `dataset`.
pub fn exact_data_statistics(params: &DbmParams, dataset: &BinaryDataset) -> Result<PairStatistics> {
    check_dataset(params, dataset)?;
    let shape = params.shape();
    naive_guard(shape.hidden_nodes())?;
    let n_hidden_states = 1u64 << shape.hidden_nodes();
    let mut stats = PairStatistics::zeros(shape);
    for v in dataset.vectors() {
        let states: Vec<JointState> = (0..n_hidden_states)
            .map(|i| {
                let mut st = JointState::from_index(shape, i << shape.visible());
                st.layer_mut(0).copy_from_slice(v);
                st
            })
            .collect();
        let neg: Vec<f64> = states
            .iter()
            .map(|st| {
                let layers: Vec<&[u8]> = st.layers().iter().map(Vec::as_slice).collect();
                params.neg_energy_of(&layers)
            })
            .collect();
        let lz = log_sum_exp(&neg);
        for (st, e) in states.iter().zip(&neg) {
            let mut contrib = PairStatistics::from_state(shape, st);
            contrib.scale((e - lz).exp());
            stats.add_assign(&contrib);
        }
    }
    stats.scale(1.0 / dataset.len() as f64);
    Ok(stats)
}
