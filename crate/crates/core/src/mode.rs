//! Ground-state (mode) search over the energy, free or with `v` clamped.
//!
//! Two solvers sit behind [`ModeSolver`]: exhaustive search, which enumerates
//! the smaller parity class of the free nodes and sets every node of the other
//! class to its best response, and simulated annealing with single-bit flips.

use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DbmError, Result};
use crate::logspace::sigmoid;
use crate::model::{energy, DbmParams, JointState};
use crate::reduced::{Reduced, ENUMERATION_LIMIT};
use crate::sampler::PairStatistics;
use crate::{child_seeds, DbmRng};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ModeQuery<'a> {
    /// When present, the visible layer is fixed to this vector.
    pub clamp: Option<&'a [u8]>,
}

impl<'a> ModeQuery<'a> {
    pub fn free() -> Self {
        Self { clamp: None }
    }

    pub fn clamped(v: &'a [u8]) -> Self {
        Self { clamp: Some(v) }
    }

    pub fn free_nodes(&self, params: &DbmParams) -> usize {
        let shape = params.shape();
        if self.clamp.is_some() {
            shape.hidden_nodes()
        } else {
            shape.total_nodes()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeResult {
    pub state: JointState,
    pub energy: f64,
    /// True iff produced by exhaustive search.
    pub exact: bool,
}

fn check_query(params: &DbmParams, query: &ModeQuery<'_>) -> Result<()> {
    if let Some(v) = query.clamp {
        if v.len() != params.shape().visible() {
            return Err(DbmError::shape(format!(
                "clamp has {} entries, visible layer has {}",
                v.len(),
                params.shape().visible()
            )));
        }
    }
    Ok(())
}

/// Global minimum-energy configuration over all free-node assignments. Among
/// equal-energy minima the lexicographically smallest state (`v`, then `h1`,
/// …) wins.
pub fn exact_mode(params: &DbmParams, query: &ModeQuery<'_>) -> Result<ModeResult> {
    check_query(params, query)?;
    let free = query.free_nodes(params);
    if free > ENUMERATION_LIMIT {
        return Err(DbmError::Capacity {
            nodes: free,
            limit: ENUMERATION_LIMIT,
        });
    }
    let red = Reduced::new(params, query.clamp, None)?;
    let mut best_value = f64::NEG_INFINITY;
    let mut best: Option<JointState> = None;
    let mut xb = vec![0u8; red.traced_len()];
    red.for_each_assignment(|xa, a_term, fields| {
        let value = a_term + fields.iter().map(|&f| f.max(0.0)).sum::<f64>();
        let tol = if best.is_some() { 1e-10 * (1.0 + best_value.abs()) } else { 0.0 };
        if best.is_some() && value < best_value - tol {
            return;
        }
        for (x, &f) in xb.iter_mut().zip(fields) {
            *x = u8::from(f > 0.0);
        }
        let candidate = red.assemble(xa, &xb);
        let better = match &best {
            None => true,
            Some(b) => value > best_value + tol || candidate < *b,
        };
        if better {
            best_value = best_value.max(value);
            best = Some(candidate);
        }
    })?;
    let state = best.expect("at least one assignment is enumerated");
    let energy = energy(params, &state)?;
    Ok(ModeResult {
        state,
        energy,
        exact: true,
    })
}

/// Simulated-annealing schedule: a geometric inverse-temperature ramp over
/// `proposals_per_node × free_nodes` single-bit-flip proposals, repeated for
/// `restarts` independent starts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnealSchedule {
    pub beta_start: f64,
    pub beta_end: f64,
    pub proposals_per_node: usize,
    pub restarts: usize,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        Self {
            beta_start: 0.1,
            beta_end: 5.0,
            proposals_per_node: 50,
            restarts: 10,
        }
    }
}

/// Free-node problem in flat form: node `i < |A|` is enumerated-class node
/// `i`, the rest are traced-class nodes. Only cross-class couplings exist.
struct FlipProblem {
    red: Reduced,
    /// `|B| × |A|` transpose of the coupling, for column access.
    coupling_t: Vec<f64>,
}

impl FlipProblem {
    fn new(red: Reduced) -> Self {
        let (na, nb) = (red.enumerated_len(), red.traced_len());
        let mut coupling_t = vec![0.0; na * nb];
        for a in 0..na {
            for (b, &c) in red.coupling.row(a).iter().enumerate() {
                coupling_t[b * na + a] = c;
            }
        }
        Self { red, coupling_t }
    }

    fn len(&self) -> usize {
        self.red.enumerated_len() + self.red.traced_len()
    }

    fn bias(&self, i: usize) -> f64 {
        let na = self.red.enumerated_len();
        if i < na {
            self.red.a_bias[i]
        } else {
            self.red.b_bias[i - na]
        }
    }

    /// Fields of every node and the energy of `x`.
    fn fields_and_energy(&self, x: &[u8]) -> (Vec<f64>, f64) {
        let na = self.red.enumerated_len();
        let mut fields: Vec<f64> = (0..self.len()).map(|i| self.bias(i)).collect();
        for (a, &xa) in x[..na].iter().enumerate() {
            if xa == 1 {
                for (f, &c) in fields[na..].iter_mut().zip(self.red.coupling.row(a)) {
                    *f += c;
                }
            }
        }
        let nb = self.red.traced_len();
        for b in 0..nb {
            if x[na + b] == 1 {
                let col = &self.coupling_t[b * na..(b + 1) * na];
                for (f, &c) in fields[..na].iter_mut().zip(col) {
                    *f += c;
                }
            }
        }
        // −E = constant + Σ_A bias·x + Σ_B (b_bias + Cᵀx_A)·x_B
        let mut neg = self.red.constant;
        for (&bias, &xa) in self.red.a_bias.iter().zip(&x[..na]) {
            neg += bias * f64::from(xa);
        }
        for b in 0..nb {
            neg += (fields[na + b]) * f64::from(x[na + b]);
        }
        (fields, -neg)
    }

    fn flip(&self, x: &mut [u8], fields: &mut [f64], i: usize) {
        let na = self.red.enumerated_len();
        let delta = if x[i] == 0 { 1.0 } else { -1.0 };
        x[i] ^= 1;
        if i < na {
            for (f, &c) in fields[na..].iter_mut().zip(self.red.coupling.row(i)) {
                *f += delta * c;
            }
        } else {
            let b = i - na;
            let col = &self.coupling_t[b * na..(b + 1) * na];
            for (f, &c) in fields[..na].iter_mut().zip(col) {
                *f += delta * c;
            }
        }
    }

    /// One annealing run; returns the best state visited and its energy.
    fn anneal(&self, schedule: &AnnealSchedule, rng: &mut DbmRng) -> (Vec<u8>, f64) {
        let n = self.len();
        let mut x: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let (mut fields, mut e) = self.fields_and_energy(&x);
        let mut best = x.clone();
        let mut best_e = e;
        if n == 0 {
            return (best, best_e);
        }
        let steps = schedule.proposals_per_node * n;
        let ratio = (schedule.beta_end / schedule.beta_start).ln();
        for t in 0..steps {
            let frac = if steps > 1 { t as f64 / (steps - 1) as f64 } else { 1.0 };
            let beta = schedule.beta_start * (ratio * frac).exp();
            let i = rng.random_range(0..n);
            // ΔE of flipping node i
            let de = if x[i] == 0 { -fields[i] } else { fields[i] };
            if rng.random::<f64>() < sigmoid(-beta * de) {
                self.flip(&mut x, &mut fields, i);
                e += de;
                if e < best_e - 1e-12 {
                    best_e = e;
                    best.copy_from_slice(&x);
                }
            }
        }
        (best, best_e)
    }
}

/// Simulated annealing with the Gibbs acceptance rule `1 / (1 + e^{βΔE})`.
/// Returns the lowest-energy state visited across all restarts.
pub fn anneal_mode<R: Rng + ?Sized>(
    params: &DbmParams,
    query: &ModeQuery<'_>,
    schedule: &AnnealSchedule,
    rng: &mut R,
) -> Result<ModeResult> {
    check_query(params, query)?;
    if schedule.restarts == 0 || !(schedule.beta_start > 0.0) || !(schedule.beta_end > 0.0) {
        return Err(DbmError::domain("annealing needs positive temperatures and at least one restart"));
    }
    let problem = FlipProblem::new(Reduced::new(params, query.clamp, None)?);
    let seeds = child_seeds(rng, schedule.restarts);
    let runs: Vec<(Vec<u8>, f64)> = seeds
        .par_iter()
        .map(|&seed| problem.anneal(schedule, &mut DbmRng::seed_from_u64(seed)))
        .collect();
    // Earliest restart wins ties.
    let (x, _) = runs
        .into_iter()
        .reduce(|best, run| if run.1 < best.1 { run } else { best })
        .expect("at least one restart");
    let na = problem.red.enumerated_len();
    let state = problem.red.assemble(&x[..na], &x[na..]);
    let energy = energy(params, &state)?;
    Ok(ModeResult {
        state,
        energy,
        exact: false,
    })
}

pub trait ModeSolver {
    fn solve(&self, params: &DbmParams, query: &ModeQuery<'_>, rng: &mut DbmRng) -> Result<ModeResult>;
}

/// Solver selection. `Auto` enumerates when the free-node count is within the
/// enumeration limit and anneals otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SolverChoice {
    Exact,
    Anneal(AnnealSchedule),
    Auto(AnnealSchedule),
}

impl Default for SolverChoice {
    fn default() -> Self {
        SolverChoice::Auto(AnnealSchedule::default())
    }
}

impl ModeSolver for SolverChoice {
    fn solve(&self, params: &DbmParams, query: &ModeQuery<'_>, rng: &mut DbmRng) -> Result<ModeResult> {
        match self {
            SolverChoice::Exact => exact_mode(params, query),
            SolverChoice::Anneal(s) => anneal_mode(params, query, s, rng),
            SolverChoice::Auto(s) => {
                if query.free_nodes(params) <= ENUMERATION_LIMIT {
                    exact_mode(params, query)
                } else {
                    anneal_mode(params, query, s, rng)
                }
            }
        }
    }
}

/// Mode-driven statistics: `(data, model)`. The model term is the product
/// statistics of the free mode; the data term averages the statistics of the
/// clamped mode of each batch element.
pub fn mode_statistics<S: ModeSolver + Sync + ?Sized>(
    params: &DbmParams,
    batch: &[Vec<u8>],
    solver: &S,
    rng: &mut DbmRng,
) -> Result<(PairStatistics, PairStatistics)> {
    if batch.is_empty() {
        return Err(DbmError::EmptyBatch);
    }
    let shape = params.shape();
    let free = solver.solve(params, &ModeQuery::free(), rng)?;
    let model = PairStatistics::from_state(shape, &free.state);

    let seeds = child_seeds(rng, batch.len());
    let modes: Vec<Result<ModeResult>> = batch
        .par_iter()
        .zip(seeds.par_iter())
        .map(|(v, &seed)| solver.solve(params, &ModeQuery::clamped(v), &mut DbmRng::seed_from_u64(seed)))
        .collect();
    let mut data = PairStatistics::zeros(shape);
    for m in modes {
        let m = m?;
        let layers: Vec<&[u8]> = m.state.layers().iter().map(Vec::as_slice).collect();
        data.accumulate(&layers);
    }
    data.scale(1.0 / batch.len() as f64);
    Ok((data, model))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use crate::model::LayerShape;

    fn shape(s: &[usize]) -> LayerShape {
        LayerShape::new(s.to_vec()).unwrap()
    }

    /// Brute-force argmin over all free assignments, lexicographic tie-break.
    fn brute_mode(p: &DbmParams, clamp: Option<&[u8]>) -> (JointState, f64) {
        let s = p.shape();
        let mut best: Option<(JointState, f64)> = None;
        for idx in 0..(1u64 << s.total_nodes()) {
            let mut st = JointState::from_index(s, idx);
            if let Some(v) = clamp {
                if st.visible() != v {
                    continue;
                }
                st.layer_mut(0).copy_from_slice(v);
            }
            let e = energy(p, &st).unwrap();
            let replace = match &best {
                None => true,
                Some((bs, be)) => e < *be - 1e-12 || ((e - be).abs() <= 1e-12 && st < *bs),
            };
            if replace {
                best = Some((st, e));
            }
        }
        best.unwrap()
    }

    #[test]
    fn positive_biases_give_all_ones() {
        let s = shape(&[3, 2, 2]);
        let mut p = DbmParams::zeros(&s);
        for l in 0..3 {
            p.bias_mut(l).iter_mut().for_each(|b| *b = 1.0);
        }
        let m = exact_mode(&p, &ModeQuery::free()).unwrap();
        assert!(m.state.flat().iter().all(|&b| b == 1));
        assert_eq!(m.energy, -7.0);
        assert!(m.exact);
    }

    #[test]
    fn tiny_chain_matches_brute_force() {
        let p = DbmParams::new(
            shape(&[1, 1, 1]),
            vec![1.0],
            vec![vec![-1.0], vec![0.5]],
            vec![Matrix::from_rows(&[vec![2.0]]).unwrap(), Matrix::from_rows(&[vec![-3.0]]).unwrap()],
        )
        .unwrap();
        let (bs, be) = brute_mode(&p, None);
        let m = exact_mode(&p, &ModeQuery::free()).unwrap();
        assert_eq!(m.state, bs);
        assert_eq!(m.energy, be);
        // v=1, h1=1, h2=0 has energy −1 + 1 − 2 = −2, the unique minimum.
        assert_eq!(m.state.flat(), vec![1, 1, 0]);
        assert_eq!(m.energy, -2.0);
    }

    #[test]
    fn clamped_zero_clamp_negative_hidden_biases() {
        let s = shape(&[3, 2, 2]);
        let mut p = DbmParams::zeros(&s);
        p.bias_mut(1).iter_mut().for_each(|b| *b = -0.5);
        p.bias_mut(2).iter_mut().for_each(|b| *b = -1.5);
        let v = [0u8, 0, 0];
        let m = exact_mode(&p, &ModeQuery::clamped(&v)).unwrap();
        assert!(m.state.flat().iter().all(|&b| b == 0));
    }

    #[test]
    fn exact_matches_brute_force_and_tie_break() {
        let mut rng = DbmRng::seed_from_u64(44);
        for dims in [&[4usize, 3, 2][..], &[3, 4, 3], &[2, 3, 2, 3], &[5, 4]] {
            let s = shape(dims);
            for round in 0..10 {
                // Integer-valued parameters produce genuine energy ties.
                let mut p = DbmParams::random(&s, 1.0, 1.0, &mut rng);
                if round % 2 == 0 {
                    for w in 1..s.num_layers() {
                        p.weight_mut(w).as_mut_slice().iter_mut().for_each(|x| *x = x.round());
                    }
                    for l in 0..s.num_layers() {
                        p.bias_mut(l).iter_mut().for_each(|x| *x = x.round());
                    }
                }
                let (bs, be) = brute_mode(&p, None);
                let m = exact_mode(&p, &ModeQuery::free()).unwrap();
                assert_eq!(m.state, bs, "{dims:?} round {round}");
                assert!((m.energy - be).abs() < 1e-12);

                let v: Vec<u8> = (0..dims[0]).map(|_| rng.random_range(0..2)).collect();
                let (bs, _) = brute_mode(&p, Some(&v));
                let m = exact_mode(&p, &ModeQuery::clamped(&v)).unwrap();
                assert_eq!(m.state, bs);
                assert_eq!(m.state.visible(), &v[..]);
            }
        }
    }

    #[test]
    fn exact_mode_capacity_error() {
        let p = DbmParams::zeros(&shape(&[20, 5, 2]));
        assert!(matches!(exact_mode(&p, &ModeQuery::free()), Err(DbmError::Capacity { nodes: 27, .. })));
        assert!(exact_mode(&p, &ModeQuery::clamped(&[0; 20])).is_ok());
    }

    #[test]
    fn exact_beats_random_states_and_annealing() {
        let mut rng = DbmRng::seed_from_u64(101);
        let s = shape(&[6, 5, 3]);
        for _ in 0..5 {
            let p = DbmParams::random(&s, 1.0, 1.0, &mut rng);
            let m = exact_mode(&p, &ModeQuery::free()).unwrap();
            for _ in 0..1000 {
                let st = JointState::from_index(&s, rng.random());
                assert!(m.energy <= energy(&p, &st).unwrap() + 1e-12);
            }
            let a = anneal_mode(&p, &ModeQuery::free(), &AnnealSchedule::default(), &mut rng).unwrap();
            assert!(m.energy <= a.energy + 1e-12);
            assert!(!a.exact);
            assert!((a.energy - energy(&p, &a.state).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn annealing_solves_uncoupled_models() {
        let s = shape(&[5, 4, 3]);
        let mut p = DbmParams::zeros(&s);
        let mut rng = DbmRng::seed_from_u64(7);
        for l in 0..3 {
            p.bias_mut(l).iter_mut().for_each(|b| *b = rng.random_range(-2.0..2.0));
        }
        let target = exact_mode(&p, &ModeQuery::free()).unwrap();
        for _ in 0..100 {
            let a = anneal_mode(&p, &ModeQuery::free(), &AnnealSchedule::default(), &mut rng).unwrap();
            assert_eq!(a.state, target.state);
        }
    }

    #[test]
    fn annealing_keeps_clamp() {
        let s = shape(&[6, 5, 3]);
        let mut rng = DbmRng::seed_from_u64(3);
        let p = DbmParams::random(&s, 1.0, 1.0, &mut rng);
        let v = [1u8, 0, 1, 1, 0, 0];
        let a = anneal_mode(&p, &ModeQuery::clamped(&v), &AnnealSchedule::default(), &mut rng).unwrap();
        assert_eq!(a.state.visible(), &v);
        let e = exact_mode(&p, &ModeQuery::clamped(&v)).unwrap();
        assert!(e.energy <= a.energy + 1e-12);
    }

    #[test]
    fn mode_statistics_zero_model_all_zero() {
        let s = shape(&[4, 3, 2]);
        let p = DbmParams::zeros(&s);
        let batch = vec![vec![0, 0, 0, 0], vec![0, 0, 0, 0]];
        let mut rng = DbmRng::seed_from_u64(0);
        let (data, model) = mode_statistics(&p, &batch, &SolverChoice::Exact, &mut rng).unwrap();
        assert!(data.values().all(|x| x == 0.0));
        assert!(model.values().all(|x| x == 0.0));
        assert!(mode_statistics(&p, &[], &SolverChoice::Exact, &mut rng).is_err());
    }

    #[test]
    fn mode_statistics_match_brute_force_and_are_deterministic() {
        // 12 nodes.
        let s = shape(&[5, 4, 3]);
        let mut rng = DbmRng::seed_from_u64(55);
        let p = DbmParams::random(&s, 1.0, 1.0, &mut rng);
        let batch: Vec<Vec<u8>> = (0..6).map(|_| (0..5).map(|_| rng.random_range(0..2)).collect()).collect();
        let (data, model) = mode_statistics(&p, &batch, &SolverChoice::Exact, &mut rng).unwrap();
        let (free, _) = brute_mode(&p, None);
        assert_eq!(model, PairStatistics::from_state(&s, &free));
        assert!(model.values().all(|x| x == 0.0 || x == 1.0));
        let mut expected = PairStatistics::zeros(&s);
        for v in &batch {
            expected.add_assign(&PairStatistics::from_state(&s, &brute_mode(&p, Some(v)).0));
        }
        expected.scale(1.0 / batch.len() as f64);
        assert!(data.max_abs_diff(&expected) < 1e-15);
        assert!(data.values().all(|x| (0.0..=1.0).contains(&x)));

        let again = mode_statistics(&p, &batch, &SolverChoice::Exact, &mut DbmRng::seed_from_u64(999)).unwrap();
        assert_eq!(again, (data, model));
    }
}
