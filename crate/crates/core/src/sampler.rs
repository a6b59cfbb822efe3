//! Turning marginal inclusion probabilities into blocks.
//!
//! In the unit-size model every transaction with marginal `p` becomes a
//! segment of length `p` laid end to end on `[0, k)`. Drawing `r` uniformly
//! from `[0, 1)` and taking the segments that cover `r, r + 1, …, r + k − 1`
//! yields exactly `k` distinct transactions (segments are at most one unit
//! long) and includes each one with probability equal to its length. The
//! finitely many distinct outcomes form the explicit [`MixedStrategy`].
//!
//! With heterogeneous sizes no such construction is offered; instead
//! [`rejection_sample_block`] draws transactions independently and rejects
//! draws whose total size falls outside an acceptance window.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mempool::{Mempool, TxId};
use crate::numeric::{close, compensated_sum, CompensatedSum};

/// Tolerance on `Σ p = k` accepted by the segment layout.
pub const PROFILE_SUM_TOL: f64 = 1e-9;

/// Breakpoints closer than this are treated as one.
const BREAKPOINT_EPS: f64 = 1e-12;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Block {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub miner_tag: Option<u64>,
    pub txids: Vec<TxId>,
    pub used_capacity: f64,
}

impl Block {
    pub fn new(txids: Vec<TxId>, used_capacity: f64) -> Self {
        Self {
            miner_tag: None,
            txids,
            used_capacity,
        }
    }

    pub fn from_ids(mempool: &Mempool, txids: Vec<TxId>) -> Result<Self> {
        let used = mempool.capacity_of(&txids)?;
        Ok(Self::new(txids, used))
    }
}

/// Half-open interval `[start, end)` occupied by one transaction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub id: TxId,
    pub start: f64,
    pub end: f64,
}

/// Segments of all transactions with positive marginal, in mempool order.
#[derive(Clone, Debug)]
pub struct SegmentLayout {
    segments: Vec<Segment>,
    /// Mempool-aligned; `None` for zero-probability transactions.
    by_position: Vec<Option<usize>>,
    slots: usize,
}

impl SegmentLayout {
    /// Lays out the segments. `marginals` is mempool-aligned, every entry in
    /// `[0, 1]`, and must sum to `slots` within [`PROFILE_SUM_TOL`]; the
    /// final cumulative total is snapped to exactly `slots`.
    pub fn new(mempool: &Mempool, marginals: &[f64], slots: usize) -> Result<Self> {
        if marginals.len() != mempool.len() {
            return Err(Error::MempoolMismatch {
                expected: mempool.len(),
                actual: marginals.len(),
            });
        }
        if let Some((tx, p)) = mempool
            .transactions()
            .iter()
            .zip(marginals)
            .find(|(_, p)| !(0.0..=1.0).contains(*p))
        {
            return Err(Error::InvalidParams(format!(
                "marginal of tx {} is {p}, outside [0, 1]",
                tx.id
            )));
        }
        let total = compensated_sum(marginals.iter().copied());
        let target = slots as f64;
        if !close(total, target, PROFILE_SUM_TOL) {
            return Err(Error::ProfileSum {
                expected: target,
                actual: total,
            });
        }

        let mut segments = Vec::new();
        let mut by_position = vec![None; mempool.len()];
        let mut acc = CompensatedSum::new();
        for (pos, (tx, &p)) in mempool.transactions().iter().zip(marginals).enumerate() {
            if p <= 0.0 {
                continue;
            }
            let start = acc.value();
            acc.add(p);
            let end = acc.value().min(target);
            by_position[pos] = Some(segments.len());
            segments.push(Segment {
                id: tx.id,
                start,
                end,
            });
        }
        if let Some(last) = segments.last_mut() {
            last.end = target;
        }
        Ok(Self {
            segments,
            by_position,
            slots,
        })
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Segment of the transaction at mempool position `pos`, if it has one.
    pub fn segment_at(&self, pos: usize) -> Option<&Segment> {
        self.by_position
            .get(pos)
            .copied()
            .flatten()
            .map(|i| &self.segments[i])
    }

    fn covering(&self, x: f64) -> Option<usize> {
        let i = self.segments.partition_point(|s| s.end <= x);
        (i < self.segments.len() && self.segments[i].start <= x).then_some(i)
    }

    /// Ids of the segments covering `r + n` for `n = 0..slots`, in layout order.
    pub fn probe(&self, r: f64) -> Vec<TxId> {
        let mut ids = Vec::with_capacity(self.slots);
        let mut last = None;
        for n in 0..self.slots {
            if let Some(i) = self.covering(r + n as f64) {
                if last != Some(i) {
                    ids.push(self.segments[i].id);
                    last = Some(i);
                }
            }
        }
        ids
    }

    /// Distinct fractional breakpoints of the layout, sorted, starting at 0.
    fn breakpoints(&self) -> Vec<f64> {
        let mut points: Vec<f64> = self
            .segments
            .iter()
            .map(|s| s.start - s.start.floor())
            .chain(std::iter::once(0.0))
            .collect();
        points.sort_unstable_by(f64::total_cmp);
        let mut distinct: Vec<f64> = Vec::with_capacity(points.len());
        for p in points {
            match distinct.last() {
                Some(&q) if p - q <= BREAKPOINT_EPS => {}
                _ if 1.0 - p <= BREAKPOINT_EPS => {}
                _ => distinct.push(p),
            }
        }
        distinct
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub p: f64,
    pub txids: Vec<TxId>,
}

/// Finite distribution over `k`-subsets; atom `j` is selected when `r` falls
/// in `[lower_j, lower_j + p_j)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixedStrategy {
    pub atoms: Vec<Atom>,
}

impl MixedStrategy {
    pub fn support_size(&self) -> usize {
        self.atoms.len()
    }

    /// Atom whose probability interval contains `r`.
    pub fn atom_for(&self, r: f64) -> Option<&Atom> {
        let mut upper = CompensatedSum::new();
        self.atoms
            .iter()
            .find(|atom| {
                upper.add(atom.p);
                r < upper.value()
            })
            .or(self.atoms.last())
    }

    /// Inclusion probability of each transaction implied by the atoms.
    pub fn induced_marginals(&self, mempool: &Mempool) -> Result<Vec<f64>> {
        let mut acc = vec![CompensatedSum::new(); mempool.len()];
        for atom in &self.atoms {
            for &id in &atom.txids {
                let pos = mempool.position(id).ok_or(Error::UnknownTx(id))?;
                acc[pos].add(atom.p);
            }
        }
        Ok(acc.iter().map(CompensatedSum::value).collect())
    }
}

/// Explicit mixed strategy realising `marginals` exactly.
///
/// Atom probabilities are the gaps between sorted fractional breakpoints of
/// the segment layout; each atom's set is read off at the midpoint of its
/// interval. There are at most `|M|` atoms.
pub fn corresponding_strategy(
    mempool: &Mempool,
    marginals: &[f64],
    slots: usize,
) -> Result<MixedStrategy> {
    let layout = SegmentLayout::new(mempool, marginals, slots)?;
    Ok(strategy_from_layout(&layout))
}

pub fn strategy_from_layout(layout: &SegmentLayout) -> MixedStrategy {
    let points = layout.breakpoints();
    let atoms = points
        .iter()
        .enumerate()
        .map(|(j, &lo)| {
            let hi = points.get(j + 1).copied().unwrap_or(1.0);
            Atom {
                p: hi - lo,
                txids: layout.probe(0.5 * (lo + hi)),
            }
        })
        .collect();
    MixedStrategy { atoms }
}

/// Deterministic block for probe offset `r ∈ [0, 1)`.
pub fn sample_block(mempool: &Mempool, layout: &SegmentLayout, r: f64) -> Result<Block> {
    if !(0.0..1.0).contains(&r) {
        return Err(Error::InvalidParams(format!(
            "r must lie in [0, 1), got {r}"
        )));
    }
    Block::from_ids(mempool, layout.probe(r))
}

/// Acceptance window on the total size of a rejection-sampled block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AcceptanceWindow {
    pub lower: f64,
    pub upper: f64,
}

impl AcceptanceWindow {
    /// `[max(0, 2k' − k), k]`: symmetric about `k'` with half-width `k − k'`.
    pub fn around(kprime: f64, k: f64) -> Self {
        Self {
            lower: (2.0 * kprime - k).max(0.0),
            upper: k,
        }
    }

    pub fn contains(&self, used: f64) -> bool {
        self.lower <= used && used <= self.upper
    }
}

pub const DEFAULT_MAX_ATTEMPTS: u64 = 10_000;

/// Default ratio `k'/k` for the rejection sampler.
pub const DEFAULT_KPRIME_RATIO: f64 = 0.95;

#[derive(Clone, Debug, PartialEq)]
pub struct RejectionDraw {
    pub block: Block,
    pub attempts: u64,
}

/// Draws each transaction independently with its marginal until the total
/// size lands in `window`. `window.upper` is the hard capacity `k`.
pub fn rejection_sample_block<R: Rng + ?Sized>(
    mempool: &Mempool,
    marginals: &[f64],
    window: AcceptanceWindow,
    max_attempts: u64,
    rng: &mut R,
) -> Result<RejectionDraw> {
    if marginals.len() != mempool.len() {
        return Err(Error::MempoolMismatch {
            expected: mempool.len(),
            actual: marginals.len(),
        });
    }
    if window.lower.is_nan() || window.upper.is_nan() || window.lower > window.upper {
        return Err(Error::InvalidParams(format!(
            "empty acceptance window [{}, {}]",
            window.lower, window.upper
        )));
    }
    let mut ids = Vec::new();
    for attempt in 1..=max_attempts {
        ids.clear();
        let mut used = CompensatedSum::new();
        for (tx, &p) in mempool.transactions().iter().zip(marginals) {
            if p >= 1.0 || (p > 0.0 && rng.random::<f64>() < p) {
                ids.push(tx.id);
                used.add(tx.size);
            }
        }
        let used = used.value();
        if window.contains(used) {
            debug_assert!(used <= window.upper);
            return Ok(RejectionDraw {
                block: Block::new(ids, used),
                attempts: attempt,
            });
        }
    }
    // Every attempt was rejected, so the point estimate of the acceptance
    // rate is zero.
    Err(Error::RejectionBudgetExhausted {
        attempts: max_attempts,
        acceptance_estimate: 0.0,
    })
}
