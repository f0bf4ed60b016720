//! Layered binary Boltzmann machine: shape, parameters, joint states and the
//! energy function.
//!
//! Layer 0 is the visible layer `v`; layers `1..=depth` are the hidden layers.
//! `W^(i)` (stored as `weights[i - 1]`) is an `n_{i-1} × n_i` matrix coupling
//! layer `i - 1` to layer `i`. Node values are `{0, 1}`.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{DbmError, Result};
use crate::logspace::sigmoid;
use crate::matrix::Matrix;

/// Layer sizes `[n_v, n_1, …, n_depth]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
#[serde(transparent)]
pub struct LayerShape(Vec<usize>);

impl LayerShape {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(DbmError::shape(format!(
                "need a visible and at least one hidden layer, got {} layer(s)",
                sizes.len()
            )));
        }
        if let Some(i) = sizes.iter().position(|&n| n == 0) {
            return Err(DbmError::shape(format!("layer {i} has zero nodes")));
        }
        Ok(Self(sizes))
    }

    pub fn sizes(&self) -> &[usize] {
        &self.0
    }

    pub fn num_layers(&self) -> usize {
        self.0.len()
    }

    /// Number of hidden layers.
    pub fn depth(&self) -> usize {
        self.0.len() - 1
    }

    pub fn visible(&self) -> usize {
        self.0[0]
    }

    pub fn layer(&self, i: usize) -> usize {
        self.0[i]
    }

    pub fn total_nodes(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn hidden_nodes(&self) -> usize {
        self.0[1..].iter().sum()
    }

    /// Node count of the even layers `{v, h2, h4, …}`.
    pub fn even_nodes(&self) -> usize {
        self.0.iter().step_by(2).sum()
    }

    /// Node count of the odd layers `{h1, h3, …}`.
    pub fn odd_nodes(&self) -> usize {
        self.0.iter().skip(1).step_by(2).sum()
    }
}

impl std::fmt::Display for LayerShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join("x"))
    }
}

impl<'de> Deserialize<'de> for LayerShape {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let sizes = Vec::<usize>::deserialize(d)?;
        LayerShape::new(sizes).map_err(serde::de::Error::custom)
    }
}

impl std::str::FromStr for LayerShape {
    type Err = DbmError;

    /// Parses `"784,120,18"` or `"784x120x18"`.
    fn from_str(s: &str) -> Result<Self> {
        let sizes = s
            .split([',', 'x'])
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|e| DbmError::shape(format!("bad layer size {p:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        LayerShape::new(sizes)
    }
}

/// One binary configuration `x = (v, h^(1), …, h^(depth))`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct JointState {
    layers: Vec<Vec<u8>>,
}

impl JointState {
    pub fn zeros(shape: &LayerShape) -> Self {
        Self {
            layers: shape.sizes().iter().map(|&n| vec![0; n]).collect(),
        }
    }

    pub fn from_layers(shape: &LayerShape, layers: Vec<Vec<u8>>) -> Result<Self> {
        let state = Self { layers };
        state.check(shape)?;
        Ok(state)
    }

    /// Splits a flat bit vector (`v` first) into layers.
    pub fn from_flat(shape: &LayerShape, bits: &[u8]) -> Result<Self> {
        if bits.len() != shape.total_nodes() {
            return Err(DbmError::shape(format!(
                "flat state has {} bits, shape {shape} needs {}",
                bits.len(),
                shape.total_nodes()
            )));
        }
        let mut layers = Vec::with_capacity(shape.num_layers());
        let mut offset = 0;
        for &n in shape.sizes() {
            layers.push(bits[offset..offset + n].to_vec());
            offset += n;
        }
        Self::from_layers(shape, layers)
    }

    /// Decodes the low `total_nodes` bits of `index`; bit 0 is the first
    /// visible node.
    pub fn from_index(shape: &LayerShape, index: u64) -> Self {
        let mut bit = 0;
        let layers = shape
            .sizes()
            .iter()
            .map(|&n| {
                (0..n)
                    .map(|_| {
                        let b = ((index >> bit) & 1) as u8;
                        bit += 1;
                        b
                    })
                    .collect()
            })
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[Vec<u8>] {
        &self.layers
    }

    pub fn layer(&self, i: usize) -> &[u8] {
        &self.layers[i]
    }

    pub fn layer_mut(&mut self, i: usize) -> &mut [u8] {
        &mut self.layers[i]
    }

    pub fn visible(&self) -> &[u8] {
        &self.layers[0]
    }

    pub fn flat(&self) -> Vec<u8> {
        self.layers.concat()
    }

    pub fn check(&self, shape: &LayerShape) -> Result<()> {
        if self.layers.len() != shape.num_layers() {
            return Err(DbmError::shape(format!(
                "state has {} layers, shape {shape} has {}",
                self.layers.len(),
                shape.num_layers()
            )));
        }
        for (i, (layer, &n)) in self.layers.iter().zip(shape.sizes()).enumerate() {
            if layer.len() != n {
                return Err(DbmError::shape(format!(
                    "layer {i} has {} nodes, expected {n}",
                    layer.len()
                )));
            }
            if layer.iter().any(|&b| b > 1) {
                return Err(DbmError::shape(format!("layer {i} has a non-binary entry")));
            }
        }
        Ok(())
    }
}

/// Biases and inter-layer weights defining the energy
///
/// `E(x) = −a·v − Σ_i b^(i)·h^(i) − Σ_i h^(i−1)ᵀ W^(i) h^(i)`, with `h^(0) = v`.
#[derive(Debug, Clone, PartialEq)]
pub struct DbmParams {
    shape: LayerShape,
    /// `biases[0]` is `a`, `biases[i]` is `b^(i)`.
    biases: Vec<Vec<f64>>,
    /// `weights[i]` is `W^(i+1)`, of size `n_i × n_{i+1}`.
    weights: Vec<Matrix>,
}

impl DbmParams {
    pub fn new(
        shape: LayerShape,
        visible_bias: Vec<f64>,
        hidden_biases: Vec<Vec<f64>>,
        weights: Vec<Matrix>,
    ) -> Result<Self> {
        let mut biases = Vec::with_capacity(shape.num_layers());
        biases.push(visible_bias);
        biases.extend(hidden_biases);
        let params = Self {
            shape,
            biases,
            weights,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn zeros(shape: &LayerShape) -> Self {
        let sizes = shape.sizes();
        Self {
            shape: shape.clone(),
            biases: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            weights: sizes.windows(2).map(|w| Matrix::zeros(w[0], w[1])).collect(),
        }
    }

    /// Weights drawn from `N(0, weight_std²)`, biases from `N(0, bias_std²)`
    /// (exactly zero when `bias_std == 0`).
    pub fn random<R: Rng + ?Sized>(
        shape: &LayerShape,
        weight_std: f64,
        bias_std: f64,
        rng: &mut R,
    ) -> Self {
        let mut params = Self::zeros(shape);
        if weight_std > 0.0 {
            let normal = Normal::new(0.0, weight_std).expect("finite std");
            for w in &mut params.weights {
                for x in w.as_mut_slice() {
                    *x = normal.sample(rng);
                }
            }
        }
        if bias_std > 0.0 {
            let normal = Normal::new(0.0, bias_std).expect("finite std");
            for b in &mut params.biases {
                for x in b.iter_mut() {
                    *x = normal.sample(rng);
                }
            }
        }
        params
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = self.shape.sizes();
        if self.biases.len() != sizes.len() {
            return Err(DbmError::shape(format!(
                "{} bias vectors for {} layers",
                self.biases.len(),
                sizes.len()
            )));
        }
        for (i, (b, &n)) in self.biases.iter().zip(sizes).enumerate() {
            if b.len() != n {
                return Err(DbmError::shape(format!("bias {i} has length {}, expected {n}", b.len())));
            }
        }
        if self.weights.len() != sizes.len() - 1 {
            return Err(DbmError::shape(format!(
                "{} weight matrices for {} layers",
                self.weights.len(),
                sizes.len()
            )));
        }
        for (i, w) in self.weights.iter().enumerate() {
            if w.rows() != sizes[i] || w.cols() != sizes[i + 1] {
                return Err(DbmError::shape(format!(
                    "W^({}) is {}x{}, expected {}x{}",
                    i + 1,
                    w.rows(),
                    w.cols(),
                    sizes[i],
                    sizes[i + 1]
                )));
            }
        }
        let finite = self.biases.iter().flatten().all(|x| x.is_finite())
            && self.weights.iter().all(|w| w.as_slice().iter().all(|x| x.is_finite()));
        if !finite {
            return Err(DbmError::domain("non-finite parameter"));
        }
        Ok(())
    }

    pub fn shape(&self) -> &LayerShape {
        &self.shape
    }

    pub fn visible_bias(&self) -> &[f64] {
        &self.biases[0]
    }

    /// Bias of layer `i` (0 = visible).
    pub fn bias(&self, layer: usize) -> &[f64] {
        &self.biases[layer]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.biases[layer]
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    /// `W^(i)` for `i` in `1..=depth`.
    pub fn weight(&self, i: usize) -> &Matrix {
        &self.weights[i - 1]
    }

    pub fn weight_mut(&mut self, i: usize) -> &mut Matrix {
        &mut self.weights[i - 1]
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn is_finite(&self) -> bool {
        self.biases.iter().flatten().all(|x| x.is_finite())
            && self.weights.iter().all(|w| w.as_slice().iter().all(|x| x.is_finite()))
    }

    /// Negative energy `a·v + Σ b·h + Σ h^(i−1) W^(i) h^(i)` for node values in
    /// `[0, 1]`. With binary values this is `−E(x)`; with factorial
    /// probabilities it is the expectation of `−E` under the product measure.
    pub fn neg_energy_of<T: Copy + Into<f64>>(&self, layers: &[&[T]]) -> f64 {
        let mut total = 0.0;
        for (b, x) in self.biases.iter().zip(layers) {
            total += dot(b, x);
        }
        for (i, w) in self.weights.iter().enumerate() {
            let lower = layers[i];
            let upper = layers[i + 1];
            for (r, &xr) in lower.iter().enumerate() {
                let xr: f64 = xr.into();
                if xr != 0.0 {
                    total += xr * dot(w.row(r), upper);
                }
            }
        }
        total
    }

    /// Local field of every node in `layer` given the adjacent layers:
    /// `bias + W^(layer)ᵀ below + W^(layer+1) above`.
    pub fn fill_fields<B, A>(&self, layer: usize, below: Option<&[B]>, above: Option<&[A]>, out: &mut [f64])
    where
        B: Copy + Into<f64>,
        A: Copy + Into<f64>,
    {
        out.copy_from_slice(&self.biases[layer]);
        if let (true, Some(below)) = (layer > 0, below) {
            let w = &self.weights[layer - 1];
            for (r, &x) in below.iter().enumerate() {
                let x: f64 = x.into();
                if x != 0.0 {
                    for (o, &wv) in out.iter_mut().zip(w.row(r)) {
                        *o += x * wv;
                    }
                }
            }
        }
        if let (true, Some(above)) = (layer < self.shape.depth(), above) {
            let w = &self.weights[layer];
            for (o, r) in out.iter_mut().zip(0..w.rows()) {
                *o += dot(w.row(r), above);
            }
        }
    }

    /// Local fields of `layer` computed from a joint state.
    pub fn fields_from_state(&self, state: &JointState, layer: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.shape.layer(layer)];
        let below = (layer > 0).then(|| state.layer(layer - 1));
        let above = (layer < self.shape.depth()).then(|| state.layer(layer + 1));
        self.fill_fields(layer, below, above, &mut out);
        out
    }
}

#[inline]
pub(crate) fn dot<T: Copy + Into<f64>>(a: &[f64], x: &[T]) -> f64 {
    a.iter().zip(x).map(|(&w, &xv)| w * xv.into()).sum()
}

/// Energy of a joint state.
pub fn energy(params: &DbmParams, state: &JointState) -> Result<f64> {
    state.check(params.shape())?;
    let layers: Vec<&[u8]> = state.layers().iter().map(Vec::as_slice).collect();
    Ok(-params.neg_energy_of(&layers))
}

/// `p(node = 1 | all other layers)` for every node of `layer_index`.
pub fn layer_conditional(params: &DbmParams, state: &JointState, layer_index: usize) -> Result<Vec<f64>> {
    state.check(params.shape())?;
    if layer_index >= params.shape().num_layers() {
        return Err(DbmError::shape(format!(
            "layer index {layer_index} out of range for shape {}",
            params.shape()
        )));
    }
    let mut p = params.fields_from_state(state, layer_index);
    for x in &mut p {
        *x = sigmoid(*x);
    }
    Ok(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LayerParamCount {
    /// Weights connecting this layer to the one below (0 for the visible layer).
    pub weights: usize,
    pub biases: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    pub total: usize,
    pub per_layer: Vec<LayerParamCount>,
}

/// All weights plus all biases, visible biases included.
pub fn param_count(shape: &LayerShape) -> ParamCount {
    let sizes = shape.sizes();
    let per_layer: Vec<LayerParamCount> = sizes
        .iter()
        .enumerate()
        .map(|(i, &n)| LayerParamCount {
            weights: if i == 0 { 0 } else { sizes[i - 1] * n },
            biases: n,
        })
        .collect();
    let total = per_layer.iter().map(|l| l.weights + l.biases).sum();
    ParamCount { total, per_layer }
}

/// Asymptotic parameter efficiency `1 / (1 + α)` of a two-hidden-layer
/// machine relative to a single-hidden-layer one with the same hidden node
/// count, where `α = n_h2 / n_h1`.
pub fn efficiency(alpha: f64) -> Result<f64> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(DbmError::domain(format!("topology ratio must be finite and >= 0, got {alpha}")));
    }
    Ok(1.0 / (1.0 + alpha))
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    shape: LayerShape,
    a: Vec<f64>,
    b: Vec<Vec<f64>>,
    #[serde(rename = "W")]
    w: Vec<Matrix>,
}

impl Serialize for DbmParams {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        Checkpoint {
            shape: self.shape.clone(),
            a: self.biases[0].clone(),
            b: self.biases[1..].to_vec(),
            w: self.weights.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for DbmParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let c = Checkpoint::deserialize(d)?;
        DbmParams::new(c.shape, c.a, c.b, c.w).map_err(serde::de::Error::custom)
    }
}

impl DbmParams {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| DbmError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| DbmError::io(path, e))?;
        Self::from_json(&text)
    }
}
