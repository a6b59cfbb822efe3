//! Expected utility, best responses and equilibrium checks.
//!
//! Against opponents whose marginals are `q`, a miner who mines a block keeps
//! the fee of an included transaction only if none of the `Poisson(λ)`
//! competing blocks contains it, which happens with probability
//! `E[(1 − q)^γ] = exp(−λ·q)`. Utility is therefore linear in the miner's
//! own marginals `p`:
//!
//! ```text
//! u(p; q) = Σ p(tx)·v(tx)·s(tx)·exp(−λ·q(tx))
//! ```
//!
//! In the unit-size model the best pure response is the top `k` by
//! `ṽ = v·exp(−λ·q)`, and a symmetric profile is an equilibrium when some
//! threshold `w` separates excluded (`ṽ ≤ w`), interior (`ṽ = w`) and certain
//! (`ṽ ≥ w`) transactions.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mempool::{require_fixed_size, GameParams, Mempool, TxId};
use crate::numeric::{compensated_sum, CompensatedSum};

/// Largest mempool accepted by [`brute_force_check`].
pub const BRUTE_FORCE_MAX_TXS: usize = 20;
/// Largest number of subsets enumerated by [`brute_force_check`].
pub const BRUTE_FORCE_MAX_SUBSETS: u64 = 1_000_000;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Contribution {
    pub id: TxId,
    pub contribution: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UtilityReport {
    pub value: f64,
    pub per_tx: Vec<Contribution>,
}

/// A pure deviation and how much it gains over the symmetric profile.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Witness {
    pub txids: Vec<TxId>,
    pub utility: f64,
    pub utility_gain: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EquilibriumVerdict {
    pub passes: bool,
    pub w: f64,
    pub worst_violation: f64,
    pub symmetric_utility: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
}

fn check_len(mempool: &Mempool, values: &[f64]) -> Result<()> {
    if values.len() == mempool.len() {
        Ok(())
    } else {
        Err(Error::MempoolMismatch {
            expected: mempool.len(),
            actual: values.len(),
        })
    }
}

/// `v·exp(−λ·q)` for every transaction, in mempool order.
pub fn adjusted_prices(others: &[f64], mempool: &Mempool, params: &GameParams) -> Result<Vec<f64>> {
    check_len(mempool, others)?;
    Ok(mempool
        .transactions()
        .iter()
        .zip(others)
        .map(|(tx, &q)| tx.gas_price * (-params.lambda * q).exp())
        .collect())
}

/// Mempool-aligned 0/1 vector for a pure strategy.
pub fn indicator(mempool: &Mempool, ids: &[TxId]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; mempool.len()];
    for &id in ids {
        out[mempool.position(id).ok_or(Error::UnknownTx(id))?] = 1.0;
    }
    Ok(out)
}

pub fn expected_utility(
    own: &[f64],
    others: &[f64],
    mempool: &Mempool,
    params: &GameParams,
) -> Result<UtilityReport> {
    check_len(mempool, own)?;
    let adjusted = adjusted_prices(others, mempool, params)?;
    let per_tx: Vec<Contribution> = mempool
        .transactions()
        .iter()
        .zip(own)
        .zip(&adjusted)
        .map(|((tx, &p), &a)| Contribution {
            id: tx.id,
            contribution: p * a * tx.size,
        })
        .collect();
    let value = compensated_sum(per_tx.iter().map(|c| c.contribution));
    Ok(UtilityReport { value, per_tx })
}

/// The `k` transactions with the largest `v·exp(−λ·q)`; ties keep mempool
/// order. Returned in selection order.
pub fn best_response(
    others: &[f64],
    mempool: &Mempool,
    params: &GameParams,
) -> Result<(Vec<TxId>, UtilityReport)> {
    let slots = require_fixed_size(mempool, params)?;
    let adjusted = adjusted_prices(others, mempool, params)?;
    let mut order: Vec<usize> = (0..mempool.len()).collect();
    // Stable sort keeps input order among equal keys.
    order.sort_by(|&a, &b| adjusted[b].total_cmp(&adjusted[a]));
    order.truncate(slots);
    let ids: Vec<TxId> = order
        .iter()
        .map(|&i| mempool.transactions()[i].id)
        .collect();
    let report = expected_utility(&indicator(mempool, &ids)?, others, mempool, params)?;
    Ok((ids, report))
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_unstable_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Threshold implied by a profile: median adjusted price over interior
/// transactions, or else the lower edge of the band separating excluded from
/// certain transactions (its midpoint when the band is empty).
pub fn infer_threshold(profile: &[f64], adjusted: &[f64]) -> f64 {
    let interior: Vec<f64> = profile
        .iter()
        .zip(adjusted)
        .filter(|(&p, _)| p > 0.0 && p < 1.0)
        .map(|(_, &a)| a)
        .collect();
    if !interior.is_empty() {
        return median(interior);
    }
    let lo = profile
        .iter()
        .zip(adjusted)
        .filter(|(&p, _)| p <= 0.0)
        .map(|(_, &a)| a)
        .fold(f64::NEG_INFINITY, f64::max);
    let hi = profile
        .iter()
        .zip(adjusted)
        .filter(|(&p, _)| p >= 1.0)
        .map(|(_, &a)| a)
        .fold(f64::INFINITY, f64::min);
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) if lo <= hi => lo,
        (true, true) => 0.5 * (lo + hi),
        (true, false) => lo,
        (false, true) => hi,
        (false, false) => 0.0,
    }
}

/// Largest relative violation of the three-case threshold condition.
fn threshold_violation(profile: &[f64], adjusted: &[f64], w: f64) -> f64 {
    let scale = w.abs().max(f64::MIN_POSITIVE);
    profile
        .iter()
        .zip(adjusted)
        .map(|(&p, &a)| {
            let gap = if p <= 0.0 {
                a - w
            } else if p >= 1.0 {
                w - a
            } else {
                (a - w).abs()
            };
            gap.max(0.0) / scale
        })
        .fold(0.0, f64::max)
}

fn gain_scale(symmetric: f64) -> f64 {
    symmetric.abs().max(1.0)
}

/// Checks the threshold condition with `w` (inferred when `None`) and, in the
/// unit-size model, that the best pure response gains nothing. Violations are
/// relative: threshold gaps to `w`, utility gains to `max(1, u)`.
pub fn verify_equilibrium(
    profile: &[f64],
    w: Option<f64>,
    mempool: &Mempool,
    params: &GameParams,
    tol: f64,
) -> Result<EquilibriumVerdict> {
    let adjusted = adjusted_prices(profile, mempool, params)?;
    let w = w.unwrap_or_else(|| infer_threshold(profile, &adjusted));
    let symmetric = expected_utility(profile, profile, mempool, params)?.value;
    let mut worst = threshold_violation(profile, &adjusted, w);
    let mut witness = None;
    if require_fixed_size(mempool, params).is_ok() {
        let (ids, report) = best_response(profile, mempool, params)?;
        let gain = report.value - symmetric;
        let relative = gain.max(0.0) / gain_scale(symmetric);
        worst = worst.max(relative);
        if relative > tol {
            witness = Some(Witness {
                txids: ids,
                utility: report.value,
                utility_gain: gain,
            });
        }
    }
    Ok(EquilibriumVerdict {
        passes: worst <= tol,
        w,
        worst_violation: worst,
        symmetric_utility: symmetric,
        witness,
    })
}

fn binomial(n: usize, k: usize) -> u64 {
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) as u64 / (i as u64 + 1))
}

/// Lexicographic successor of a `k`-combination of `0..n`.
fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    for i in (0..k).rev() {
        if c[i] < n - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Enumerates every `k`-subset as a deviation against the symmetric profile.
/// Utility is linear in own marginals, so pure deviations cover every mixed
/// one.
pub fn brute_force_check(
    mempool: &Mempool,
    params: &GameParams,
    profile: &[f64],
    tol: f64,
) -> Result<EquilibriumVerdict> {
    let slots = require_fixed_size(mempool, params)?;
    let n = mempool.len();
    if n > BRUTE_FORCE_MAX_TXS {
        return Err(Error::InstanceTooLarge(format!(
            "{n} transactions (limit {BRUTE_FORCE_MAX_TXS})"
        )));
    }
    let slots = slots.min(n);
    let count = binomial(n, slots);
    if count > BRUTE_FORCE_MAX_SUBSETS {
        return Err(Error::InstanceTooLarge(format!(
            "C({n}, {slots}) = {count} subsets (limit {BRUTE_FORCE_MAX_SUBSETS})"
        )));
    }
    let adjusted = adjusted_prices(profile, mempool, params)?;
    let weights: Vec<f64> = mempool
        .transactions()
        .iter()
        .zip(&adjusted)
        .map(|(tx, &a)| a * tx.size)
        .collect();
    let symmetric = expected_utility(profile, profile, mempool, params)?.value;

    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut combo: Vec<usize> = (0..slots).collect();
    loop {
        let mut acc = CompensatedSum::new();
        acc.extend(combo.iter().map(|&i| weights[i]));
        let value = acc.value();
        if best.as_ref().is_none_or(|(b, _)| value > *b) {
            best = Some((value, combo.clone()));
        }
        if !next_combination(&mut combo, n) {
            break;
        }
    }
    let (value, combo) = best.expect("at least one subset");
    let gain = value - symmetric;
    let worst = gain.max(0.0) / gain_scale(symmetric);
    let witness = (worst > tol).then(|| Witness {
        txids: combo
            .iter()
            .map(|&i| mempool.transactions()[i].id)
            .collect(),
        utility: value,
        utility_gain: gain,
    });
    Ok(EquilibriumVerdict {
        passes: worst <= tol,
        w: infer_threshold(profile, &adjusted),
        worst_violation: worst,
        symmetric_utility: symmetric,
        witness,
    })
}
