//! Transactions, mempools and game parameters.
//!
//! A [`Mempool`] is validated on construction and immutable afterwards. Input
//! order is preserved and is the canonical transaction order: every
//! deterministic tie-break in the crate uses (input order, then id).

use std::collections::HashMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::compensated_sum;

pub type TxId = u64;

fn default_size() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transaction {
    pub id: TxId,
    /// Bid per unit of block capacity.
    pub gas_price: f64,
    /// Block capacity used by the transaction.
    #[serde(default = "default_size")]
    pub size: f64,
}

impl Transaction {
    pub fn new(id: TxId, gas_price: f64, size: f64) -> Self {
        Self {
            id,
            gas_price,
            size,
        }
    }

    pub fn unit(id: TxId, gas_price: f64) -> Self {
        Self::new(id, gas_price, 1.0)
    }

    /// Gas fee paid if the transaction is executed: price times size.
    pub fn fee(&self) -> f64 {
        self.gas_price * self.size
    }
}

#[derive(Serialize, Deserialize)]
struct MempoolWire {
    transactions: Vec<Transaction>,
}

#[derive(Clone, Debug)]
pub struct Mempool {
    transactions: Vec<Transaction>,
    total_size: f64,
    index: HashMap<TxId, usize>,
}

impl Mempool {
    pub fn new(transactions: Vec<Transaction>) -> Result<Self> {
        let mut index = HashMap::with_capacity(transactions.len());
        for (i, tx) in transactions.iter().enumerate() {
            if !(tx.gas_price.is_finite() && tx.gas_price > 0.0) {
                return Err(Error::InvalidGasPrice {
                    id: tx.id,
                    value: tx.gas_price,
                });
            }
            if !(tx.size.is_finite() && tx.size > 0.0) {
                return Err(Error::InvalidSize {
                    id: tx.id,
                    value: tx.size,
                });
            }
            if index.insert(tx.id, i).is_some() {
                return Err(Error::DuplicateId { id: tx.id });
            }
        }
        let total_size = compensated_sum(transactions.iter().map(|tx| tx.size));
        Ok(Self {
            transactions,
            total_size,
            index,
        })
    }

    /// Unit-size mempool from a list of gas prices; ids are 1-based positions.
    pub fn from_prices(prices: &[f64]) -> Result<Self> {
        Self::new(
            prices
                .iter()
                .enumerate()
                .map(|(i, &v)| Transaction::unit(i as TxId + 1, v))
                .collect(),
        )
    }

    pub fn from_json_reader<R: Read>(reader: R) -> Result<Self> {
        let wire: MempoolWire = serde_json::from_reader(reader)?;
        Self::new(wire.transactions)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let wire: MempoolWire = serde_json::from_str(s)?;
        Self::new(wire.transactions)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({ "transactions": self.transactions })
    }

    pub fn transactions(&self) -> &[Transaction] {
        &self.transactions
    }

    pub fn len(&self) -> usize {
        self.transactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transactions.is_empty()
    }

    /// Sum of member sizes.
    pub fn total_size(&self) -> f64 {
        self.total_size
    }

    pub fn position(&self, id: TxId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn get(&self, id: TxId) -> Option<&Transaction> {
        self.position(id).map(|i| &self.transactions[i])
    }

    pub fn ids(&self) -> impl Iterator<Item = TxId> + '_ {
        self.transactions.iter().map(|tx| tx.id)
    }

    pub fn sizes(&self) -> Vec<f64> {
        self.transactions.iter().map(|tx| tx.size).collect()
    }

    pub fn is_unit_size(&self) -> bool {
        self.transactions.iter().all(|tx| tx.size == 1.0)
    }

    /// Capacity used by the given transactions.
    pub fn capacity_of(&self, ids: &[TxId]) -> Result<f64> {
        let mut sizes = Vec::with_capacity(ids.len());
        for &id in ids {
            sizes.push(self.get(id).ok_or(Error::UnknownTx(id))?.size);
        }
        Ok(compensated_sum(sizes))
    }

    pub(crate) fn require_non_empty(&self) -> Result<()> {
        if self.is_empty() {
            Err(Error::EmptyMempool)
        } else {
            Ok(())
        }
    }
}

/// Whether every transaction uses one unit of capacity (the benchmark model)
/// or sizes are arbitrary.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeMode {
    #[default]
    Fixed,
    Variable,
}

impl std::str::FromStr for SizeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(Self::Fixed),
            "variable" => Ok(Self::Variable),
            other => Err(Error::InvalidParams(format!(
                "unknown mode {other:?} (expected fixed or variable)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GameParams {
    /// Block capacity.
    pub k: f64,
    /// Expected number of competing blocks per latency window.
    pub lambda: f64,
}

impl GameParams {
    pub fn new(k: f64, lambda: f64) -> Result<Self> {
        if !(k.is_finite() && k > 0.0) {
            return Err(Error::InvalidParams(format!(
                "k must be a finite positive number, got {k}"
            )));
        }
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::InvalidParams(format!(
                "lambda must be finite and non-negative, got {lambda}"
            )));
        }
        Ok(Self { k, lambda })
    }

    /// Block capacity as a transaction count; fails unless `k` is a positive
    /// integer.
    pub fn slots(&self) -> Result<usize> {
        if self.k.fract() == 0.0 && self.k >= 1.0 && self.k <= usize::MAX as f64 {
            Ok(self.k as usize)
        } else {
            Err(Error::NotFixedSize(format!(
                "an integer block capacity, got k = {}",
                self.k
            )))
        }
    }

    pub(crate) fn require_latency(&self) -> Result<()> {
        if self.lambda > 0.0 {
            Ok(())
        } else {
            Err(Error::ZeroLatency)
        }
    }
}

/// Checks the fixed-size preconditions: unit sizes and integer `k`.
pub fn require_fixed_size(mempool: &Mempool, params: &GameParams) -> Result<usize> {
    if let Some(tx) = mempool.transactions().iter().find(|tx| tx.size != 1.0) {
        return Err(Error::NotFixedSize(format!(
            "unit sizes, transaction {} has size {}",
            tx.id, tx.size
        )));
    }
    params.slots()
}
