//! Equilibrium transaction packaging for blockchains where network latency
//! lets several miners produce blocks from the same mempool at once.
//!
//! * [`mempool`]: transactions, validation and the JSON wire format.
//! * [`solver`]: closed-form equilibrium marginals and the clamp shift `x̂`.
//! * [`sampler`]: explicit mixed strategies, block sampling, and the
//!   rejection sampler for heterogeneous sizes.
//! * [`fees`]: endogenous base-fee bounds.
//! * [`verifier`]: expected utility, best responses, equilibrium checks.
//! * [`simulator`]: Monte-Carlo rounds with Poisson competitor counts.

pub mod error;
pub mod fees;
pub mod mempool;
pub mod numeric;
pub mod sampler;
pub mod simulator;
pub mod solver;
pub mod verifier;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use fees::{base_fee, FeeBounds, FeeMode};
pub use mempool::{GameParams, Mempool, SizeMode, Transaction, TxId};
pub use sampler::{
    corresponding_strategy, rejection_sample_block, sample_block, AcceptanceWindow, Atom, Block,
    MixedStrategy, RejectionDraw, SegmentLayout,
};
pub use simulator::{
    run_experiment, simulate_round, Experiment, ExperimentConfig, ExperimentReport,
    PackingStrategy, RoundOutcome, StrategyKind,
};
pub use solver::{
    clamp_marginals, compute_phat, compute_phat_real, solve_equilibrium, solve_xhat, Equilibrium,
    MarginalProfile, RawMarginals,
};
pub use verifier::{
    best_response, brute_force_check, expected_utility, verify_equilibrium, EquilibriumVerdict,
    UtilityReport,
};
