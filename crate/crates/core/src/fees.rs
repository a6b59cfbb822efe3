//! Endogenous base-fee bounds.
//!
//! A zero-size virtual transaction leaves `p̂` and `x̂` of the real mempool
//! untouched. The gas price at which its unclamped marginal equals `x̂` is the
//! lowest price that can ever be packaged (`v_low`); the price at which it
//! equals `x̂ + 1` is packaged by every block (`v_high`). Solving both:
//!
//! ```text
//! ln v_low  = Σ s·ln v / Σs − λk/Σs + λ·x̂
//! ln v_high = ln v_low + λ
//! ```
//!
//! The closed forms without the `x̂` term agree with these only when no
//! clamping is active (`x̂ = 0`); both variants are exposed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mempool::{GameParams, Mempool};
use crate::solver::{compute_phat_real, solve_xhat};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeeMode {
    /// Closed forms without the clamp shift.
    PaperClosedForm,
    /// Bounds recomputed with the solved `x̂`.
    #[default]
    XhatAware,
}

impl std::str::FromStr for FeeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" | "paper_closed_form" => Ok(Self::PaperClosedForm),
            "xhat" | "xhat_aware" => Ok(Self::XhatAware),
            other => Err(Error::InvalidParams(format!(
                "unknown fee mode {other:?} (expected paper or xhat)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeeBounds {
    pub v_low: f64,
    pub v_high: f64,
    pub mode: FeeMode,
    /// Clamp shift of the underlying equilibrium (reported in both modes).
    pub xhat: f64,
}

pub fn base_fee(mempool: &Mempool, params: &GameParams, mode: FeeMode) -> Result<FeeBounds> {
    let raw = compute_phat_real(mempool, params)?;
    let total = mempool.total_size();
    if total < params.k {
        return Err(Error::MempoolFitsInBlock { total, k: params.k });
    }
    let xhat = match solve_xhat(raw.values(), &mempool.sizes(), params.k) {
        Ok(x) => x,
        // Σs = k: every transaction sits at p = 1.
        Err(Error::MempoolFitsInBlock { .. }) => {
            raw.values().iter().copied().fold(f64::INFINITY, f64::min) - 1.0
        }
        Err(e) => return Err(e),
    };
    // ln of v·exp(−λ·p̂), identical for every transaction.
    let log_constant = raw.constant().ln();
    let shift = match mode {
        FeeMode::PaperClosedForm => 0.0,
        FeeMode::XhatAware => xhat,
    };
    let log_low = log_constant + params.lambda * shift;
    Ok(FeeBounds {
        v_low: log_low.exp(),
        v_high: (log_low + params.lambda).exp(),
        mode,
        xhat,
    })
}
