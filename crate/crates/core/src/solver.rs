//! Closed-form equilibrium marginals.
//!
//! The unconstrained marginal of each transaction is
//!
//! ```text
//! p̂(tx) = k / Σs + (ln v(tx) − Σ s·ln v / Σs) / λ
//! ```
//!
//! which makes `v(tx)·exp(−λ·p̂(tx))` the same constant for every
//! transaction and satisfies `Σ s·p̂ = k`. Values outside `[0, 1]` are
//! repaired by shifting every marginal by the smallest `x̂` that solves
//! `f(x) = Σ s·min(max(p̂ − x, 0), 1) = k` and clamping. The whole pipeline
//! costs one sort plus a logarithmic number of `O(|M|)` passes.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mempool::{require_fixed_size, GameParams, Mempool, SizeMode, TxId};
use crate::numeric::{close, compensated_sum, CompensatedSum};

/// Relative tolerance used for every equilibrium identity.
pub const IDENTITY_TOL: f64 = 1e-9;

/// Unclamped marginals, aligned with mempool order. May lie outside `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RawMarginals {
    values: Vec<f64>,
    /// `ln` of the common value `v·exp(−λ·p̂)`.
    log_constant: f64,
}

impl RawMarginals {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, mempool: &Mempool, id: TxId) -> Option<f64> {
        mempool.position(id).map(|i| self.values[i])
    }

    /// The common value of `v(tx)·exp(−λ·p̂(tx))`.
    pub fn constant(&self) -> f64 {
        self.log_constant.exp()
    }
}

/// Equilibrium inclusion probabilities, aligned with mempool order.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MarginalProfile {
    pub values: Vec<f64>,
    pub xhat: f64,
    /// Threshold of expected fee per unit of capacity: interior transactions
    /// sit exactly on it, excluded ones below, certain ones above.
    pub w: f64,
}

impl MarginalProfile {
    pub fn get(&self, mempool: &Mempool, id: TxId) -> Option<f64> {
        mempool.position(id).map(|i| self.values[i])
    }

    /// Checks the bound, budget and threshold invariants, naming the first
    /// violated one.
    pub fn check_invariants(&self, mempool: &Mempool, params: &GameParams) -> Result<()> {
        if self.values.len() != mempool.len() {
            return Err(Error::MempoolMismatch {
                expected: mempool.len(),
                actual: self.values.len(),
            });
        }
        let violation = |msg: String| Err(Error::InvariantViolation(msg));
        for (tx, &p) in mempool.transactions().iter().zip(&self.values) {
            if !(0.0..=1.0).contains(&p) {
                return violation(format!("0 <= p <= 1 (tx {} has p = {p})", tx.id));
            }
        }
        let target = params.k.min(mempool.total_size());
        let budget = compensated_sum(
            mempool
                .transactions()
                .iter()
                .zip(&self.values)
                .map(|(tx, &p)| tx.size * p),
        );
        if !close(budget, target, IDENTITY_TOL) {
            return violation(format!("sum s*p = k (got {budget}, expected {target})"));
        }
        let w = self.w;
        for (tx, &p) in mempool.transactions().iter().zip(&self.values) {
            let adjusted = tx.gas_price * (-params.lambda * p).exp();
            let ok = if p == 0.0 {
                adjusted <= w * (1.0 + IDENTITY_TOL)
            } else if p == 1.0 {
                adjusted >= w * (1.0 - IDENTITY_TOL)
            } else {
                (adjusted - w).abs() <= IDENTITY_TOL * w
            };
            if !ok {
                return violation(format!(
                    "threshold condition at tx {} (p = {p}, v*exp(-lambda*p) = {adjusted}, w = {w})",
                    tx.id
                ));
            }
        }
        Ok(())
    }
}

/// Output of [`solve_equilibrium`].
#[derive(Clone, Debug)]
pub struct Equilibrium {
    pub raw: RawMarginals,
    pub profile: MarginalProfile,
    /// Total size does not exceed `k`: every transaction is packaged.
    pub packaged_everything: bool,
}

fn raw_marginals(mempool: &Mempool, params: &GameParams) -> Result<RawMarginals> {
    mempool.require_non_empty()?;
    params.require_latency()?;
    let total = mempool.total_size();
    let mut weighted_log = CompensatedSum::new();
    for tx in mempool.transactions() {
        weighted_log.add(tx.size * tx.gas_price.ln());
    }
    let mean_log = weighted_log.value() / total;
    let base = params.k / total;
    let values = mempool
        .transactions()
        .iter()
        .map(|tx| base + (tx.gas_price.ln() - mean_log) / params.lambda)
        .collect();
    Ok(RawMarginals {
        values,
        log_constant: mean_log - params.lambda * base,
    })
}

/// Unclamped marginals for the unit-size model.
pub fn compute_phat(mempool: &Mempool, params: &GameParams) -> Result<RawMarginals> {
    mempool.require_non_empty()?;
    params.require_latency()?;
    if let Some(tx) = mempool.transactions().iter().find(|tx| tx.size != 1.0) {
        return Err(Error::NotFixedSize(format!(
            "unit sizes, transaction {} has size {}",
            tx.id, tx.size
        )));
    }
    raw_marginals(mempool, params)
}

/// Unclamped marginals with heterogeneous sizes; `Σ s·p̂ = k`.
pub fn compute_phat_real(mempool: &Mempool, params: &GameParams) -> Result<RawMarginals> {
    raw_marginals(mempool, params)
}

fn clamp_value(raw: f64, x: f64) -> f64 {
    (raw - x).clamp(0.0, 1.0)
}

fn clamped_capacity(raw: &[f64], sizes: &[f64], x: f64) -> f64 {
    compensated_sum(raw.iter().zip(sizes).map(|(&p, &s)| clamp_value(p, x) * s))
}

/// Smallest `x` with `Σ s·min(max(raw − x, 0), 1) = k`.
///
/// `f` is continuous, non-increasing and linear between consecutive points of
/// `{raw} ∪ {raw − 1}`. A binary search over those sorted breakpoints keeps
/// `f(b[lo]) > k >= f(b[hi])`; the root is then found by interpolation on the
/// segment `[b[lo], b[hi]]`. Because `f > k` at `b[lo]` and `f` is linear on
/// the segment, the interpolated root is the left end of any plateau.
pub fn solve_xhat(raw: &[f64], sizes: &[f64], k: f64) -> Result<f64> {
    if raw.len() != sizes.len() {
        return Err(Error::MempoolMismatch {
            expected: sizes.len(),
            actual: raw.len(),
        });
    }
    if raw.is_empty() {
        return Err(Error::EmptyMempool);
    }
    let total = compensated_sum(sizes.iter().copied());
    if total <= k {
        return Err(Error::MempoolFitsInBlock { total, k });
    }

    let mut breakpoints: Vec<f64> = raw.iter().flat_map(|&p| [p - 1.0, p]).collect();
    breakpoints.sort_unstable_by(f64::total_cmp);

    let f = |x: f64| clamped_capacity(raw, sizes, x);
    let (mut lo, mut hi) = (0, breakpoints.len() - 1);
    while lo + 1 < hi {
        let mid = lo + (hi - lo) / 2;
        if f(breakpoints[mid]) > k {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    let (left, right) = (breakpoints[lo], breakpoints[hi]);
    let f_left = f(left);
    let pos = 0.5 * (left + right);
    // Magnitude of the slope of f on (left, right).
    let slope = compensated_sum(
        raw.iter()
            .zip(sizes)
            .filter(|(&p, _)| pos < p && p < pos + 1.0)
            .map(|(_, &s)| s),
    );
    if slope <= 0.0 || f_left <= k {
        return Ok(right);
    }
    Ok((left + (f_left - k) / slope).clamp(left, right))
}

/// Shifts by `xhat`, clamps into `[0, 1]`, and attaches the threshold `w`.
pub fn clamp_marginals(raw: &RawMarginals, xhat: f64, params: &GameParams) -> MarginalProfile {
    MarginalProfile {
        values: raw.values.iter().map(|&p| clamp_value(p, xhat)).collect(),
        xhat,
        w: (raw.log_constant + params.lambda * xhat).exp(),
    }
}

/// Full pipeline: raw marginals, `x̂`, clamping, and an invariant check.
///
/// In fixed mode the mempool must be unit-size and `k` an integer. When the
/// whole mempool fits into the block the profile packages everything and
/// `x̂` is reported as `min p̂ − 1`, the largest shift at which every
/// transaction is still clamped to one.
pub fn solve_equilibrium(
    mempool: &Mempool,
    params: &GameParams,
    mode: SizeMode,
) -> Result<Equilibrium> {
    let raw = match mode {
        SizeMode::Fixed => {
            mempool.require_non_empty()?;
            require_fixed_size(mempool, params)?;
            compute_phat(mempool, params)?
        }
        SizeMode::Variable => compute_phat_real(mempool, params)?,
    };
    let (xhat, packaged_everything) = match solve_xhat(&raw.values, &mempool.sizes(), params.k) {
        Ok(x) => (x, false),
        Err(Error::MempoolFitsInBlock { .. }) => {
            let min = raw.values.iter().copied().fold(f64::INFINITY, f64::min);
            (min - 1.0, true)
        }
        Err(e) => return Err(e),
    };
    let profile = clamp_marginals(&raw, xhat, params);
    profile.check_invariants(mempool, params)?;
    Ok(Equilibrium {
        raw,
        profile,
        packaged_everything,
    })
}
