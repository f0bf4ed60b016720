//! Block Gibbs sampling and the contrastive-divergence statistics.
//!
//! A sweep resamples all even layers `{v, h2, …}` given the odd layers, then
//! all odd layers `{h1, h3, …}` given the even ones. Layers of one parity are
//! conditionally independent given the other parity, so each half-sweep is an
//! exact block update.

use rand::{Rng, SeedableRng};
use rayon::prelude::*;

use crate::error::{DbmError, Result};
use crate::logspace::sigmoid;
use crate::matrix::Matrix;
use crate::model::{DbmParams, JointState, LayerShape};
use crate::{child_seeds, DbmRng};

/// One sweep at unit temperature.
pub fn gibbs_sweep<R: Rng + ?Sized>(params: &DbmParams, state: &mut JointState, rng: &mut R, clamp_visible: bool) {
    gibbs_sweep_at(params, state, 1.0, rng, clamp_visible);
}

/// One sweep of the tempered distribution `∝ exp(−β E(x))`.
pub fn gibbs_sweep_at<R: Rng + ?Sized>(
    params: &DbmParams,
    state: &mut JointState,
    beta: f64,
    rng: &mut R,
    clamp_visible: bool,
) {
    let layers = params.shape().num_layers();
    let mut fields = Vec::new();
    for parity in [0, 1] {
        for layer in (parity..layers).step_by(2) {
            if clamp_visible && layer == 0 {
                continue;
            }
            resample_layer(params, state, layer, beta, rng, &mut fields);
        }
    }
}

fn resample_layer<R: Rng + ?Sized>(
    params: &DbmParams,
    state: &mut JointState,
    layer: usize,
    beta: f64,
    rng: &mut R,
    fields: &mut Vec<f64>,
) {
    let depth = params.shape().depth();
    fields.resize(params.shape().layer(layer), 0.0);
    {
        let below = (layer > 0).then(|| state.layer(layer - 1));
        let above = (layer < depth).then(|| state.layer(layer + 1));
        params.fill_fields(layer, below, above, fields);
    }
    for (x, &f) in state.layer_mut(layer).iter_mut().zip(fields.iter()) {
        *x = u8::from(rng.random::<f64>() < sigmoid(beta * f));
    }
}

/// A Gibbs chain with its own random stream.
#[derive(Debug, Clone)]
pub struct GibbsChain {
    pub state: JointState,
    rng: DbmRng,
}

impl GibbsChain {
    pub fn new(state: JointState, seed: u64) -> Self {
        Self {
            state,
            rng: DbmRng::seed_from_u64(seed),
        }
    }

    pub fn sweep(&mut self, params: &DbmParams, clamp_visible: bool) {
        gibbs_sweep(params, &mut self.state, &mut self.rng, clamp_visible);
    }

    pub fn run(&mut self, params: &DbmParams, sweeps: usize, clamp_visible: bool) {
        for _ in 0..sweeps {
            self.sweep(params, clamp_visible);
        }
    }
}

/// Averaged node values and products over connected pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct PairStatistics {
    /// Same dimensions as the weight matrices.
    pub weights: Vec<Matrix>,
    /// `biases[0]` pairs with `a`, `biases[i]` with `b^(i)`.
    pub biases: Vec<Vec<f64>>,
}

impl PairStatistics {
    pub fn zeros(shape: &LayerShape) -> Self {
        let sizes = shape.sizes();
        Self {
            weights: sizes.windows(2).map(|w| Matrix::zeros(w[0], w[1])).collect(),
            biases: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn from_state(shape: &LayerShape, state: &JointState) -> Self {
        let mut s = Self::zeros(shape);
        let layers: Vec<&[u8]> = state.layers().iter().map(Vec::as_slice).collect();
        s.accumulate(&layers);
        s
    }

    /// Adds `x_i` and `x_i x_j` for one configuration (binary or real-valued).
    pub fn accumulate<T: Copy + Into<f64>>(&mut self, layers: &[&[T]]) {
        for (acc, x) in self.biases.iter_mut().zip(layers) {
            for (a, &xv) in acc.iter_mut().zip(x.iter()) {
                *a += xv.into();
            }
        }
        for (i, w) in self.weights.iter_mut().enumerate() {
            let upper = layers[i + 1];
            for (r, &xr) in layers[i].iter().enumerate() {
                let xr: f64 = xr.into();
                if xr != 0.0 {
                    for (a, &xc) in w.row_mut(r).iter_mut().zip(upper) {
                        *a += xr * xc.into();
                    }
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for b in &mut self.biases {
            b.iter_mut().for_each(|x| *x *= factor);
        }
        for w in &mut self.weights {
            w.as_mut_slice().iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn add_assign(&mut self, other: &PairStatistics) {
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.as_mut_slice().iter_mut().zip(b.as_slice()).for_each(|(x, y)| *x += y);
        }
    }

    pub fn matches(&self, params: &DbmParams) -> bool {
        self.biases.len() == params.biases().len()
            && self.biases.iter().zip(params.biases()).all(|(a, b)| a.len() == b.len())
            && self.weights.len() == params.weights().len()
            && self.weights.iter().zip(params.weights()).all(|(a, b)| a.same_dims(b))
    }

    /// Iterates over every entry, biases first.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.biases
            .iter()
            .flatten()
            .copied()
            .chain(self.weights.iter().flat_map(|w| w.as_slice().iter().copied()))
    }

    pub fn max_abs_diff(&self, other: &PairStatistics) -> f64 {
        self.values().zip(other.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// Model-term estimate from `k` unclamped sweeps of one chain per start
/// state, averaged over the chain endpoints. Chains draw independent streams
/// seeded from `rng` in start order, so the result does not depend on how the
/// chains are scheduled.
pub fn cd_statistics<R: Rng + ?Sized>(
    params: &DbmParams,
    starts: &[JointState],
    k: usize,
    rng: &mut R,
) -> Result<PairStatistics> {
    if starts.is_empty() {
        return Err(DbmError::EmptyBatch);
    }
    if k == 0 {
        return Err(DbmError::domain("CD needs at least one sweep"));
    }
    for s in starts {
        s.check(params.shape())?;
    }
    let seeds = child_seeds(rng, starts.len());
    let ends: Vec<JointState> = starts
        .par_iter()
        .zip(seeds.par_iter())
        .map(|(start, &seed)| {
            let mut chain = GibbsChain::new(start.clone(), seed);
            chain.run(params, k, false);
            chain.state
        })
        .collect();
    let mut stats = PairStatistics::zeros(params.shape());
    for end in &ends {
        let layers: Vec<&[u8]> = end.layers().iter().map(Vec::as_slice).collect();
        stats.accumulate(&layers);
    }
    stats.scale(1.0 / ends.len() as f64);
    Ok(stats)
}

/// Data-term statistics with the visible layer fixed to the data and hidden
/// nodes replaced by their mean-field probabilities.
pub fn data_statistics(
    params: &DbmParams,
    batch: &[Vec<u8>],
    mean_fields: &[crate::meanfield::MeanFieldState],
) -> Result<PairStatistics> {
    if batch.is_empty() {
        return Err(DbmError::EmptyBatch);
    }
    if batch.len() != mean_fields.len() {
        return Err(DbmError::shape(format!(
            "{} data vectors but {} mean-field states",
            batch.len(),
            mean_fields.len()
        )));
    }
    let shape = params.shape();
    let mut stats = PairStatistics::zeros(shape);
    for (v, mf) in batch.iter().zip(mean_fields) {
        if v.len() != shape.visible() {
            return Err(DbmError::shape(format!(
                "data vector has {} entries, visible layer has {}",
                v.len(),
                shape.visible()
            )));
        }
        let vf: Vec<f64> = v.iter().map(|&b| f64::from(b)).collect();
        let mut layers: Vec<&[f64]> = vec![&vf];
        layers.extend(mf.mu.iter().map(Vec::as_slice));
        if layers.len() != shape.num_layers() {
            return Err(DbmError::shape("mean-field state does not match shape"));
        }
        stats.accumulate(&layers);
    }
    stats.scale(1.0 / batch.len() as f64);
    Ok(stats)
}
