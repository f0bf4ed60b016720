//! Joint training of deep Boltzmann machines with contrastive divergence and
//! mode-assisted updates, plus exact and AIS likelihood evaluation.
//!
//! Nodes are binary `{0, 1}`. Layer 0 is the visible layer; hidden layer `l`
//! couples only to layers `l − 1` and `l + 1`. All logarithms are natural.

use rand::Rng;

pub mod data;
pub mod error;
pub mod eval;
pub mod harness;
pub mod logspace;
pub mod matrix;
pub mod meanfield;
pub mod mode;
pub mod model;
pub mod reduced;
pub mod sampler;
pub mod trainer;

pub use data::{binarize, load_idx, parse_idx, shifting_bar, BinaryDataset, IdxArray};
pub use error::{DbmError, Result};
pub use eval::{
    ais_avg_ll, ais_log_z, best_log_z, exact_avg_ll, exact_log_z, kl_divergence, marginal_log_p, PartitionEstimate,
};
pub use harness::{aggregate, resolve_shape, run_experiment, ExperimentConfig, Method, Summary};
pub use matrix::Matrix;
pub use meanfield::{elbo, mf_fixed_point, MeanFieldState};
pub use mode::{anneal_mode, exact_mode, mode_statistics, AnnealSchedule, ModeQuery, ModeResult, ModeSolver, SolverChoice};
pub use model::{efficiency, energy, layer_conditional, param_count, DbmParams, JointState, LayerShape, ParamCount};
pub use sampler::{cd_statistics, data_statistics, gibbs_sweep, GibbsChain, PairStatistics};
pub use trainer::{gradient_step, learning_rate, mode_probability, train, ScheduleParams, TrainConfig, TrainTrace};

/// Generator used everywhere randomness is consumed.
pub type DbmRng = rand_chacha::ChaCha8Rng;

/// Seeds for `n` independent child streams, drawn in order from `rng`. Work
/// items seeded this way give the same result however they are scheduled.
pub(crate) fn child_seeds<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<u64> {
    (0..n).map(|_| rng.random()).collect()
}
