//! Bipartite reduction of a (possibly visible-clamped) layered machine.
//!
//! Adjacent layers always have opposite parity, so the free nodes split into
//! an even class and an odd class with couplings only between the classes.
//! Folding clamped nodes into a constant and into effective biases leaves
//!
//! `−E(x) = constant + a_bias·x_A + b_bias·x_B + x_Aᵀ C x_B`
//!
//! where `A` is the class chosen for enumeration and `B` the class that is
//! summed (or maximized) out node by node given `x_A`.

use crate::error::{DbmError, Result};
use crate::matrix::Matrix;
use crate::model::{DbmParams, JointState};

/// Largest class that exhaustive routines will enumerate.
pub const ENUMERATION_LIMIT: usize = 26;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    fn of(layer: usize) -> Self {
        if layer.is_multiple_of(2) {
            Parity::Even
        } else {
            Parity::Odd
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Fixed,
    Enumerated(usize),
    Traced(usize),
}

#[derive(Debug, Clone)]
pub struct Reduced {
    roles: Vec<Role>,
    base: JointState,
    pub constant: f64,
    pub a_bias: Vec<f64>,
    pub b_bias: Vec<f64>,
    /// `|A| × |B|`.
    pub coupling: Matrix,
}

impl Reduced {
    /// Reduces `params` with the visible layer optionally clamped. `enumerate`
    /// picks the class placed in `A`; `None` picks the class with fewer free
    /// nodes (even on ties).
    pub fn new(params: &DbmParams, clamp: Option<&[u8]>, enumerate: Option<Parity>) -> Result<Self> {
        let shape = params.shape();
        let sizes = shape.sizes();
        let mut base = JointState::zeros(shape);
        if let Some(v) = clamp {
            if v.len() != shape.visible() {
                return Err(DbmError::shape(format!(
                    "clamp has {} entries, visible layer has {}",
                    v.len(),
                    shape.visible()
                )));
            }
            if v.iter().any(|&b| b > 1) {
                return Err(DbmError::shape("clamp has a non-binary entry"));
            }
            base.layer_mut(0).copy_from_slice(v);
        }
        let free = |l: usize| !(l == 0 && clamp.is_some());
        let class_size = |p: Parity| -> usize {
            (0..sizes.len())
                .filter(|&l| free(l) && Parity::of(l) == p)
                .map(|l| sizes[l])
                .sum()
        };
        let enumerate = enumerate.unwrap_or_else(|| {
            if class_size(Parity::Even) <= class_size(Parity::Odd) {
                Parity::Even
            } else {
                Parity::Odd
            }
        });

        let (mut na, mut nb) = (0, 0);
        let roles: Vec<Role> = (0..sizes.len())
            .map(|l| {
                if !free(l) {
                    Role::Fixed
                } else if Parity::of(l) == enumerate {
                    na += sizes[l];
                    Role::Enumerated(na - sizes[l])
                } else {
                    nb += sizes[l];
                    Role::Traced(nb - sizes[l])
                }
            })
            .collect();

        let mut a_bias = vec![0.0; na];
        let mut b_bias = vec![0.0; nb];
        let mut constant = 0.0;
        for (l, role) in roles.iter().enumerate() {
            let bias = params.bias(l);
            match *role {
                Role::Fixed => {
                    constant += bias.iter().zip(base.layer(l)).map(|(b, &x)| b * f64::from(x)).sum::<f64>()
                }
                Role::Enumerated(off) => a_bias[off..off + sizes[l]].copy_from_slice(bias),
                Role::Traced(off) => b_bias[off..off + sizes[l]].copy_from_slice(bias),
            }
        }

        let mut coupling = Matrix::zeros(na, nb);
        for i in 1..sizes.len() {
            let w = params.weight(i);
            let (lo, hi) = (roles[i - 1], roles[i]);
            for r in 0..w.rows() {
                let row = w.row(r);
                match (lo, hi) {
                    (Role::Fixed, Role::Fixed) => {
                        if base.layer(i - 1)[r] == 1 {
                            constant += row
                                .iter()
                                .zip(base.layer(i))
                                .map(|(w, &x)| w * f64::from(x))
                                .sum::<f64>();
                        }
                    }
                    (Role::Fixed, other) | (other, Role::Fixed) => {
                        // Only the visible layer can be fixed, so it is `lo`.
                        debug_assert!(matches!(lo, Role::Fixed));
                        if base.layer(i - 1)[r] == 1 {
                            let target = match other {
                                Role::Enumerated(off) => &mut a_bias[off..off + row.len()],
                                Role::Traced(off) => &mut b_bias[off..off + row.len()],
                                Role::Fixed => unreachable!(),
                            };
                            for (t, &w) in target.iter_mut().zip(row) {
                                *t += w;
                            }
                        }
                    }
                    (Role::Enumerated(a0), Role::Traced(b0)) => {
                        coupling.row_mut(a0 + r)[b0..b0 + row.len()].copy_from_slice(row);
                    }
                    (Role::Traced(b0), Role::Enumerated(a0)) => {
                        for (c, &w) in row.iter().enumerate() {
                            coupling.set(a0 + c, b0 + r, w);
                        }
                    }
                    _ => unreachable!("adjacent layers share a parity class"),
                }
            }
        }

        Ok(Self {
            roles,
            base,
            constant,
            a_bias,
            b_bias,
            coupling,
        })
    }

    pub fn enumerated_len(&self) -> usize {
        self.a_bias.len()
    }

    pub fn traced_len(&self) -> usize {
        self.b_bias.len()
    }

    /// Rebuilds the full joint state from class assignments.
    pub fn assemble(&self, xa: &[u8], xb: &[u8]) -> JointState {
        let mut state = self.base.clone();
        for (l, role) in self.roles.iter().enumerate() {
            let n = state.layer(l).len();
            match *role {
                Role::Fixed => {}
                Role::Enumerated(off) => state.layer_mut(l).copy_from_slice(&xa[off..off + n]),
                Role::Traced(off) => state.layer_mut(l).copy_from_slice(&xb[off..off + n]),
            }
        }
        state
    }

    /// Splits a full state into its `(x_A, x_B)` class assignments.
    pub fn split(&self, state: &JointState) -> (Vec<u8>, Vec<u8>) {
        let mut xa = vec![0; self.enumerated_len()];
        let mut xb = vec![0; self.traced_len()];
        for (l, role) in self.roles.iter().enumerate() {
            let layer = state.layer(l);
            match *role {
                Role::Fixed => {}
                Role::Enumerated(off) => xa[off..off + layer.len()].copy_from_slice(layer),
                Role::Traced(off) => xb[off..off + layer.len()].copy_from_slice(layer),
            }
        }
        (xa, xb)
    }

    /// Calls `f(x_A, a_term, b_fields)` for every assignment of the enumerated
    /// class, where `a_term = constant + a_bias·x_A` and
    /// `b_fields = b_bias + Cᵀ x_A`. Assignments are visited in Gray-code order.
    pub fn for_each_assignment(&self, mut f: impl FnMut(&[u8], f64, &[f64])) -> Result<()> {
        let m = self.enumerated_len();
        if m > ENUMERATION_LIMIT {
            return Err(DbmError::Capacity {
                nodes: m,
                limit: ENUMERATION_LIMIT,
            });
        }
        let mut xa = vec![0u8; m];
        let mut a_term = self.constant;
        let mut fields = self.b_bias.clone();
        f(&xa, a_term, &fields);
        let total: u64 = 1 << m;
        for k in 1..total {
            let bit = k.trailing_zeros() as usize;
            let sign = if xa[bit] == 0 { 1.0 } else { -1.0 };
            xa[bit] ^= 1;
            if k % 4096 == 0 {
                // Rebuild from scratch periodically so rounding does not drift.
                a_term = self.constant + self.a_term_delta(&xa);
                self.fields_into(&xa, &mut fields);
            } else {
                a_term += sign * self.a_bias[bit];
                for (fv, &c) in fields.iter_mut().zip(self.coupling.row(bit)) {
                    *fv += sign * c;
                }
            }
            f(&xa, a_term, &fields);
        }
        Ok(())
    }

    fn a_term_delta(&self, xa: &[u8]) -> f64 {
        self.a_bias.iter().zip(xa).filter(|(_, &x)| x == 1).map(|(b, _)| b).sum()
    }

    /// `b_bias + Cᵀ x_A`.
    pub fn fields_into(&self, xa: &[u8], out: &mut [f64]) {
        out.copy_from_slice(&self.b_bias);
        for (a, _) in xa.iter().enumerate().filter(|(_, &x)| x == 1) {
            for (o, &c) in out.iter_mut().zip(self.coupling.row(a)) {
                *o += c;
            }
        }
    }
}
