//! Monte-Carlo simulation of one latency window.
//!
//! Each round draws `γ ~ Poisson(λ)` blocks i.i.d. from a packing strategy.
//! Two accounting conventions are kept side by side:
//!
//! * exclusive revenue: a block earns the fee `v·s` of a transaction only if
//!   no other block of the round contains it;
//! * throughput revenue: every distinct included transaction pays its fee
//!   once, as the chain would.
//!
//! Pooling exclusive revenue over all blocks of all rounds estimates the
//! expected utility of a miner who mined: conditioned on one block existing,
//! the number of other blocks is again `Poisson(λ)`.
//!
//! Trial `t` uses a ChaCha8 generator seeded from the master seed with stream
//! id `t`, so each trial's randomness is independent of the trial count and of
//! which worker runs it. The stream is shared across strategies, which
//! therefore see identical competitor counts.

use std::collections::HashMap;
use std::path::PathBuf;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mempool::{require_fixed_size, GameParams, Mempool, SizeMode, TxId};
use crate::numeric::CompensatedSum;
use crate::sampler::{
    rejection_sample_block, AcceptanceWindow, Block, SegmentLayout, DEFAULT_KPRIME_RATIO,
    DEFAULT_MAX_ATTEMPTS,
};
use crate::solver::solve_equilibrium;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Above this mean, Poisson variates use transformed rejection instead of
/// inversion.
const POISSON_INVERSION_LIMIT: f64 = 10.0;

/// Draws from `Poisson(lambda)`: sequential inversion for `lambda <= 10`,
/// Hörmann's PTRS transformed rejection above.
pub fn sample_poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    if lambda <= POISSON_INVERSION_LIMIT {
        let u: f64 = rng.random();
        let mut k = 0u64;
        let mut p = (-lambda).exp();
        let mut cdf = p;
        while u > cdf {
            k += 1;
            p *= lambda / k as f64;
            cdf += p;
            if p <= 0.0 {
                break;
            }
        }
        return k;
    }
    let slam = lambda.sqrt();
    let loglam = lambda.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u = rng.random::<f64>() - 0.5;
        let v: f64 = rng.random();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + lambda + 0.43).floor();
        if us >= 0.07 && v <= vr {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        let log_accept = (v * inv_alpha / (a / (us * us) + b)).ln();
        if log_accept <= -lambda + k * loglam - ln_factorial(k) {
            return k as u64;
        }
    }
}

fn ln_factorial(k: f64) -> f64 {
    if k < 10.0 {
        (1..=k as u64).map(|i| (i as f64).ln()).sum()
    } else {
        // Stirling series.
        let k1 = k + 1.0;
        (k1 - 0.5) * k1.ln() - k1 + 0.5 * (2.0 * std::f64::consts::PI).ln() + 1.0 / (12.0 * k1)
            - 1.0 / (360.0 * k1.powi(3))
            + 1.0 / (1260.0 * k1.powi(5))
    }
}

/// How every miner in the simulation packs blocks.
#[derive(Clone, Debug)]
pub enum PackingStrategy {
    /// Unit-size equilibrium: one uniform probe into the segment layout.
    Segments(SegmentLayout),
    /// Same block every time.
    Deterministic(Block),
    /// Independent draws with rejection on total size.
    Rejection {
        marginals: Vec<f64>,
        window: AcceptanceWindow,
        max_attempts: u64,
    },
    /// Uniformly random `k`-subset (unit sizes).
    UniformK(usize),
    /// Random order, first fit under capacity (variable sizes).
    UniformFit(f64),
}

impl PackingStrategy {
    pub fn draw<R: Rng + ?Sized>(&self, mempool: &Mempool, rng: &mut R) -> Result<Block> {
        match self {
            Self::Segments(layout) => Block::from_ids(mempool, layout.probe(rng.random())),
            Self::Deterministic(block) => Ok(block.clone()),
            Self::Rejection {
                marginals,
                window,
                max_attempts,
            } => Ok(rejection_sample_block(mempool, marginals, *window, *max_attempts, rng)?.block),
            Self::UniformK(slots) => {
                let n = mempool.len();
                let mut picked = index::sample(rng, n, (*slots).min(n)).into_vec();
                picked.sort_unstable();
                let ids = picked
                    .iter()
                    .map(|&i| mempool.transactions()[i].id)
                    .collect();
                Block::from_ids(mempool, ids)
            }
            Self::UniformFit(capacity) => {
                let n = mempool.len();
                let order = index::sample(rng, n, n);
                let mut used = CompensatedSum::new();
                let mut ids = Vec::new();
                for i in order {
                    let tx = &mempool.transactions()[i];
                    if used.value() + tx.size <= *capacity {
                        used.add(tx.size);
                        ids.push(tx.id);
                    }
                }
                Ok(Block::new(ids, used.value()))
            }
        }
    }
}

/// Highest gas price first (ties in mempool order) while capacity allows.
pub fn greedy_block(mempool: &Mempool, capacity: f64) -> Block {
    let mut order: Vec<usize> = (0..mempool.len()).collect();
    order.sort_by(|&a, &b| {
        let (ta, tb) = (&mempool.transactions()[a], &mempool.transactions()[b]);
        tb.gas_price.total_cmp(&ta.gas_price)
    });
    let mut used = CompensatedSum::new();
    let mut ids = Vec::new();
    for i in order {
        let tx = &mempool.transactions()[i];
        if used.value() + tx.size <= capacity {
            used.add(tx.size);
            ids.push(tx.id);
        }
    }
    Block::new(ids, used.value())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    Equilibrium,
    Greedy,
    UniformRandomK,
}

impl StrategyKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Equilibrium => "equilibrium",
            Self::Greedy => "greedy",
            Self::UniformRandomK => "uniform-random-k",
        }
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equilibrium" => Ok(Self::Equilibrium),
            "greedy" => Ok(Self::Greedy),
            "uniform-random-k" => Ok(Self::UniformRandomK),
            other => Err(Error::UnknownStrategy(other.to_owned())),
        }
    }
}

/// Builds the packing strategy used by every miner. In variable mode the
/// equilibrium is solved for `kprime` and sampled by rejection inside the
/// window `[max(0, 2k' − k), k]`.
pub fn build_strategy(
    kind: StrategyKind,
    mempool: &Mempool,
    params: &GameParams,
    mode: SizeMode,
    kprime: Option<f64>,
) -> Result<PackingStrategy> {
    mempool.require_non_empty()?;
    match (kind, mode) {
        (StrategyKind::Equilibrium, SizeMode::Fixed) => {
            let slots = require_fixed_size(mempool, params)?;
            let eq = solve_equilibrium(mempool, params, mode)?;
            let slots = slots.min(mempool.len());
            Ok(PackingStrategy::Segments(SegmentLayout::new(
                mempool,
                &eq.profile.values,
                slots,
            )?))
        }
        (StrategyKind::Equilibrium, SizeMode::Variable) => {
            let kprime = kprime.unwrap_or(DEFAULT_KPRIME_RATIO * params.k);
            if !(kprime > 0.0 && kprime <= params.k) {
                return Err(Error::InvalidParams(format!(
                    "kprime must lie in (0, k], got {kprime}"
                )));
            }
            let target = GameParams::new(kprime, params.lambda)?;
            let eq = solve_equilibrium(mempool, &target, mode)?;
            Ok(PackingStrategy::Rejection {
                marginals: eq.profile.values,
                window: AcceptanceWindow::around(kprime, params.k),
                max_attempts: DEFAULT_MAX_ATTEMPTS,
            })
        }
        (StrategyKind::Greedy, SizeMode::Fixed) => {
            require_fixed_size(mempool, params)?;
            Ok(PackingStrategy::Deterministic(greedy_block(
                mempool, params.k,
            )))
        }
        (StrategyKind::Greedy, SizeMode::Variable) => Ok(PackingStrategy::Deterministic(
            greedy_block(mempool, params.k),
        )),
        (StrategyKind::UniformRandomK, SizeMode::Fixed) => Ok(PackingStrategy::UniformK(
            require_fixed_size(mempool, params)?,
        )),
        (StrategyKind::UniformRandomK, SizeMode::Variable) => {
            Ok(PackingStrategy::UniformFit(params.k))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoundOutcome {
    pub gamma: u64,
    pub blocks: Vec<Block>,
    /// Fees of transactions held by exactly one block, per block.
    pub per_block_exclusive_revenue: Vec<f64>,
    /// Distinct transactions held by two or more blocks.
    pub duplicated_tx_count: usize,
    /// Inclusions beyond the first of each transaction.
    pub duplicate_appearances: usize,
    pub unique_tx_count: usize,
    /// Capacity spent on inclusions beyond the first.
    pub wasted_capacity: f64,
    /// Fees of distinct included transactions, each counted once.
    pub throughput_revenue: f64,
}

impl RoundOutcome {
    pub fn total_exclusive_revenue(&self) -> f64 {
        self.per_block_exclusive_revenue.iter().sum()
    }
}

/// Accounting for a given set of blocks.
pub fn account_round(mempool: &Mempool, blocks: Vec<Block>) -> Result<RoundOutcome> {
    let mut holders: HashMap<TxId, usize> = HashMap::new();
    for block in &blocks {
        for &id in &block.txids {
            *holders.entry(id).or_default() += 1;
        }
    }
    let fee =
        |id: TxId| -> Result<&crate::Transaction> { mempool.get(id).ok_or(Error::UnknownTx(id)) };

    let mut per_block = Vec::with_capacity(blocks.len());
    for block in &blocks {
        let mut revenue = CompensatedSum::new();
        for &id in &block.txids {
            if holders[&id] == 1 {
                revenue.add(fee(id)?.fee());
            }
        }
        per_block.push(revenue.value());
    }

    // Deterministic order for floating-point accumulation.
    let mut distinct: Vec<(TxId, usize)> = holders.into_iter().collect();
    distinct.sort_unstable();
    let mut wasted = CompensatedSum::new();
    let mut throughput = CompensatedSum::new();
    let mut duplicated = 0;
    let mut extra = 0;
    for &(id, count) in &distinct {
        let tx = fee(id)?;
        throughput.add(tx.fee());
        if count > 1 {
            duplicated += 1;
            extra += count - 1;
            wasted.add((count - 1) as f64 * tx.size);
        }
    }
    Ok(RoundOutcome {
        gamma: blocks.len() as u64,
        blocks,
        per_block_exclusive_revenue: per_block,
        duplicated_tx_count: duplicated,
        duplicate_appearances: extra,
        unique_tx_count: distinct.len(),
        wasted_capacity: wasted.value(),
        throughput_revenue: throughput.value(),
    })
}

/// Draws `γ ~ Poisson(λ)` blocks from `strategy` and accounts for them.
pub fn simulate_round<R: Rng + ?Sized>(
    mempool: &Mempool,
    strategy: &PackingStrategy,
    params: &GameParams,
    rng: &mut R,
) -> Result<RoundOutcome> {
    let gamma = sample_poisson(params.lambda, rng);
    simulate_round_with_gamma(mempool, strategy, gamma, rng)
}

/// Same as [`simulate_round`] with the block count fixed.
pub fn simulate_round_with_gamma<R: Rng + ?Sized>(
    mempool: &Mempool,
    strategy: &PackingStrategy,
    gamma: u64,
    rng: &mut R,
) -> Result<RoundOutcome> {
    let blocks = (0..gamma)
        .map(|i| {
            let mut block = strategy.draw(mempool, rng)?;
            block.miner_tag = Some(i);
            Ok(block)
        })
        .collect::<Result<Vec<_>>>()?;
    account_round(mempool, blocks)
}

/// Generator for trial `trial` of an experiment seeded with `seed`.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub mempool: PathBuf,
    pub lambda: f64,
    pub k: f64,
    pub trials: u64,
    pub seed: u64,
    pub strategies: Vec<String>,
    #[serde(default)]
    pub mode: SizeMode,
    #[serde(default)]
    pub kprime: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub strategy: String,
    pub mode: SizeMode,
    pub seed: u64,
    pub trials: u64,
    pub lambda: f64,
    pub k: f64,
    /// Blocks over all trials.
    pub total_blocks: u64,
    /// Exclusive revenue per block, pooled over all blocks.
    pub mean_exclusive_revenue: f64,
    /// Delta-method standard error of the pooled ratio, from per-trial values.
    pub stderr_exclusive_revenue: f64,
    /// Mean over trials of duplicate inclusions / all inclusions.
    pub mean_duplication_rate: f64,
    pub mean_unique_tx: f64,
    pub stderr_unique_tx: f64,
    pub mean_throughput_revenue: f64,
    pub mean_wasted_capacity: f64,
}

#[derive(Clone, Copy, Debug, Default)]
struct TrialStats {
    blocks: f64,
    exclusive: f64,
    duplication_rate: f64,
    unique: f64,
    throughput: f64,
    wasted: f64,
}

impl TrialStats {
    fn of(outcome: &RoundOutcome) -> Self {
        let inclusions: usize = outcome.blocks.iter().map(|b| b.txids.len()).sum();
        Self {
            blocks: outcome.gamma as f64,
            exclusive: outcome.total_exclusive_revenue(),
            duplication_rate: if inclusions == 0 {
                0.0
            } else {
                outcome.duplicate_appearances as f64 / inclusions as f64
            },
            unique: outcome.unique_tx_count as f64,
            throughput: outcome.throughput_revenue,
            wasted: outcome.wasted_capacity,
        }
    }
}

fn mean(xs: impl Iterator<Item = f64>, n: f64) -> f64 {
    let mut acc = CompensatedSum::new();
    acc.extend(xs);
    acc.value() / n
}

fn summarize(
    kind: StrategyKind,
    params: &GameParams,
    mode: SizeMode,
    seed: u64,
    stats: &[TrialStats],
) -> ExperimentReport {
    let n = stats.len() as f64;
    let total_blocks = stats.iter().map(|s| s.blocks).sum::<f64>();
    let mean_blocks = total_blocks / n;
    let mean_exclusive_trial = mean(stats.iter().map(|s| s.exclusive), n);
    let (ratio, ratio_se) = if total_blocks > 0.0 {
        let ratio = mean_exclusive_trial / mean_blocks;
        // Linearised residuals R_t − ratio·γ_t.
        let resid_var = if stats.len() > 1 {
            mean(
                stats
                    .iter()
                    .map(|s| (s.exclusive - ratio * s.blocks).powi(2)),
                n - 1.0,
            )
        } else {
            0.0
        };
        (ratio, (resid_var / n).sqrt() / mean_blocks)
    } else {
        (0.0, 0.0)
    };
    let mean_unique = mean(stats.iter().map(|s| s.unique), n);
    let unique_var = if stats.len() > 1 {
        mean(
            stats.iter().map(|s| (s.unique - mean_unique).powi(2)),
            n - 1.0,
        )
    } else {
        0.0
    };
    ExperimentReport {
        schema_version: REPORT_SCHEMA_VERSION,
        strategy: kind.name().to_owned(),
        mode,
        seed,
        trials: stats.len() as u64,
        lambda: params.lambda,
        k: params.k,
        total_blocks: total_blocks as u64,
        mean_exclusive_revenue: ratio,
        stderr_exclusive_revenue: ratio_se,
        mean_duplication_rate: mean(stats.iter().map(|s| s.duplication_rate), n),
        mean_unique_tx: mean_unique,
        stderr_unique_tx: (unique_var / n).sqrt(),
        mean_throughput_revenue: mean(stats.iter().map(|s| s.throughput), n),
        mean_wasted_capacity: mean(stats.iter().map(|s| s.wasted), n),
    }
}

/// Experiment parameters once the mempool has been loaded.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub params: GameParams,
    pub mode: SizeMode,
    pub kprime: Option<f64>,
    pub trials: u64,
    pub seed: u64,
    pub strategies: Vec<StrategyKind>,
    /// Worker threads; `1` runs on the calling thread.
    pub jobs: usize,
}

impl Experiment {
    pub fn from_config(config: &ExperimentConfig) -> Result<Self> {
        Ok(Self {
            params: GameParams::new(config.k, config.lambda)?,
            mode: config.mode,
            kprime: config.kprime,
            trials: config.trials,
            seed: config.seed,
            strategies: config
                .strategies
                .iter()
                .map(|s| s.parse())
                .collect::<Result<_>>()?,
            jobs: 1,
        })
    }
}

/// Runs every strategy over the same trial streams. Reports are identical for
/// any `jobs`: per-trial results are collected in trial order and reduced
/// serially.
pub fn run_experiment(mempool: &Mempool, experiment: &Experiment) -> Result<Vec<ExperimentReport>> {
    if experiment.trials == 0 {
        return Err(Error::ZeroTrials);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(experiment.jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidParams(format!("cannot start worker pool: {e}")))?;
    experiment
        .strategies
        .iter()
        .map(|&kind| {
            let strategy = build_strategy(
                kind,
                mempool,
                &experiment.params,
                experiment.mode,
                experiment.kprime,
            )?;
            let run = |t: u64| -> Result<TrialStats> {
                let mut rng = trial_rng(experiment.seed, t);
                let outcome = simulate_round(mempool, &strategy, &experiment.params, &mut rng)?;
                Ok(TrialStats::of(&outcome))
            };
            let stats: Vec<TrialStats> = if experiment.jobs <= 1 {
                (0..experiment.trials).map(run).collect::<Result<_>>()?
            } else {
                pool.install(|| {
                    (0..experiment.trials)
                        .into_par_iter()
                        .map(run)
                        .collect::<Result<_>>()
                })?
            };
            Ok(summarize(
                kind,
                &experiment.params,
                experiment.mode,
                experiment.seed,
                &stats,
            ))
        })
        .collect()
}
