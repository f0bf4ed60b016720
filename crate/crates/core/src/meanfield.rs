//! Fully factorial mean-field posterior `r(h | v) = Π_i μ_i^{h_i} (1 − μ_i)^{1 − h_i}`
//! and the variational lower bound on `log p(v)`.

use rand::Rng;

use crate::error::{DbmError, Result};
use crate::logspace::{bernoulli_entropy, sigmoid};
use crate::model::{DbmParams, JointState};

pub const DEFAULT_MAX_ITERS: usize = 30;
pub const DEFAULT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldState {
    /// One probability vector per hidden layer (`mu[0]` is `h^(1)`).
    pub mu: Vec<Vec<f64>>,
    pub iterations_used: usize,
    pub converged: bool,
    /// Max-abs change during the last pass.
    pub residual: f64,
}

impl MeanFieldState {
    /// Joint state with `v` fixed and each hidden node drawn from Bernoulli(μ).
    pub fn sample_state<R: Rng + ?Sized>(&self, params: &DbmParams, v: &[u8], rng: &mut R) -> Result<JointState> {
        let mut layers = Vec::with_capacity(self.mu.len() + 1);
        layers.push(v.to_vec());
        for mu in &self.mu {
            layers.push(mu.iter().map(|&p| u8::from(rng.random::<f64>() < p)).collect());
        }
        JointState::from_layers(params.shape(), layers)
    }

    /// Entropy of the factorial distribution in nats.
    pub fn entropy(&self) -> f64 {
        self.mu.iter().flatten().map(|&p| bernoulli_entropy(p)).sum()
    }
}

/// Runs the mean-field fixed-point iteration for one visible vector.
///
/// μ starts uniform in `[0, 1]`. Each pass updates `h^(1)`, `h^(2)`, … in
/// order, each layer seeing the freshest values of its neighbours. Stops when
/// the largest change in a pass is below `tol` or after `max_iters` passes;
/// non-convergence is reported through `converged`, never as an error.
pub fn mf_fixed_point<R: Rng + ?Sized>(
    params: &DbmParams,
    v: &[u8],
    max_iters: usize,
    tol: f64,
    rng: &mut R,
) -> Result<MeanFieldState> {
    let shape = params.shape();
    if v.len() != shape.visible() {
        return Err(DbmError::shape(format!(
            "visible vector has {} entries, expected {}",
            v.len(),
            shape.visible()
        )));
    }
    if max_iters == 0 || !(tol > 0.0) {
        return Err(DbmError::domain("mean field needs max_iters >= 1 and tol > 0"));
    }
    let depth = shape.depth();
    let mut mu: Vec<Vec<f64>> = (1..=depth)
        .map(|l| (0..shape.layer(l)).map(|_| rng.random::<f64>()).collect())
        .collect();
    let vf: Vec<f64> = v.iter().map(|&b| f64::from(b)).collect();
    let mut fields = Vec::new();
    let mut residual = f64::INFINITY;
    let mut iterations_used = 0;
    while iterations_used < max_iters {
        residual = 0.0;
        for layer in 1..=depth {
            fields.resize(shape.layer(layer), 0.0);
            {
                let below: &[f64] = if layer == 1 { &vf } else { &mu[layer - 2] };
                let above = (layer < depth).then(|| mu[layer].as_slice());
                params.fill_fields(layer, Some(below), above, &mut fields);
            }
            for (m, &f) in mu[layer - 1].iter_mut().zip(&fields) {
                let new = sigmoid(f);
                residual = f64::max(residual, (new - *m).abs());
                *m = new;
            }
        }
        iterations_used += 1;
        if residual < tol {
            break;
        }
    }
    Ok(MeanFieldState {
        mu,
        iterations_used,
        converged: residual < tol,
        residual,
    })
}

/// Variational lower bound `E_r[−E(v, h)] + H(r) − log Z` in nats.
pub fn elbo(params: &DbmParams, v: &[u8], mf: &MeanFieldState, log_z: f64) -> Result<f64> {
    let shape = params.shape();
    if v.len() != shape.visible() || mf.mu.len() != shape.depth() {
        return Err(DbmError::shape("visible vector or mean-field state does not match shape"));
    }
    for (l, mu) in mf.mu.iter().enumerate() {
        if mu.len() != shape.layer(l + 1) {
            return Err(DbmError::shape(format!("mean-field layer {} has wrong length", l + 1)));
        }
        if let Some(&bad) = mu.iter().find(|&&p| !(0.0..=1.0).contains(&p)) {
            return Err(DbmError::domain(format!("mean-field probability {bad} outside [0, 1]")));
        }
    }
    let vf: Vec<f64> = v.iter().map(|&b| f64::from(b)).collect();
    let mut layers: Vec<&[f64]> = vec![&vf];
    layers.extend(mf.mu.iter().map(Vec::as_slice));
    // Layers are independent under r, so E_r[−E] is −E evaluated at μ.
    Ok(params.neg_energy_of(&layers) + mf.entropy() - log_z)
}
