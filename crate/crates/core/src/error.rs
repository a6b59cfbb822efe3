use crate::mempool::TxId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("failed to parse mempool JSON: {0}")]
    Parse(#[from] serde_json::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("duplicate transaction id {id}")]
    DuplicateId { id: TxId },

    #[error("transaction {id}: gas_price must be a finite positive number, got {value}")]
    InvalidGasPrice { id: TxId, value: f64 },

    #[error("transaction {id}: size must be a finite positive number, got {value}")]
    InvalidSize { id: TxId, value: f64 },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("empty mempool")]
    EmptyMempool,

    #[error("zero-latency regime (lambda = 0); use limit behavior (greedy best response) instead")]
    ZeroLatency,

    /// Total capacity usage of the mempool does not exceed `k`, so the
    /// clamp equation has no smallest solution; the caller should package
    /// every transaction.
    #[error("mempool fits in block (total size {total} <= k = {k}); package everything")]
    MempoolFitsInBlock { total: f64, k: f64 },

    #[error("fixed-size mode requires {0}")]
    NotFixedSize(String),

    #[error("marginal profile sums to {actual}, expected {expected}")]
    ProfileSum { expected: f64, actual: f64 },

    #[error("profile has {actual} entries but mempool has {expected} transactions")]
    MempoolMismatch { expected: usize, actual: usize },

    #[error("unknown transaction id {0}")]
    UnknownTx(TxId),

    #[error(
        "rejection sampler gave up after {attempts} attempts \
         (empirical acceptance rate {acceptance_estimate}, \
         below {upper} at 95% confidence)", upper = 3.0 / *attempts as f64
    )]
    RejectionBudgetExhausted {
        attempts: u64,
        acceptance_estimate: f64,
    },

    #[error("instance too large for enumeration: {0}")]
    InstanceTooLarge(String),

    #[error("experiment needs at least one trial")]
    ZeroTrials,

    #[error("unknown strategy {0:?} (expected equilibrium, greedy or uniform-random-k)")]
    UnknownStrategy(String),

    #[error("invariant violated: {0}")]
    InvariantViolation(String),
}
