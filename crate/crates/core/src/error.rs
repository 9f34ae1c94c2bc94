use crate::model::TxId;
use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TfmError {
    #[error("unknown transaction id {0}")]
    UnknownTx(TxId),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("blockset is empty")]
    EmptyBlockset,

    #[error("enumeration budget of {budget} blocks exceeded (raise --budget or TFMLAB_BUDGET)")]
    BudgetExceeded { budget: usize },

    #[error(
        "base fee {base_fee} is excessively low: the transactions clearing their reserve do not fit \
         in one feasible block; the standard EIP-1559 rule is undefined here, use the consonant allocation"
    )]
    ExcessivelyLowBaseFee { base_fee: i64 },

    #[error("unsupported input: {0}")]
    Unsupported(String),

    #[error("audit guardrail exceeded: {0}; rerun in sampling mode (--sample N --seed S)")]
    GuardrailExceeded(String),

    #[error("transaction {0} appears in no feasible block")]
    NotInAnyBlock(TxId),

    #[error("mechanism already trivial on this input: no included transaction is charged a positive payment")]
    AlreadyTrivial,

    #[error("mechanism not DSIC: case (C2) realized, block {{y}} recommended at v_y = {value_y}")]
    NotDsicCaseC2 { value_y: i64 },

    #[error("construction check failed: {0}")]
    ConstructionFailed(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),
}

pub type Result<T, E = TfmError> = std::result::Result<T, E>;
