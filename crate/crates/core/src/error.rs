use crate::ctmc::CtmcError;
use crate::model::InvalidModel;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Invalid(#[from] InvalidModel),
    #[error(transparent)]
    Ctmc(#[from] CtmcError),
    #[error("state space exceeds the budget of {limit} states; try decomposition or a larger budget")]
    BudgetExceeded { limit: usize },
    #[error("composite state does not fit the 128-bit encoding")]
    EncodingOverflow,
    #[error("uniformization needs {needed} steps, above the cap of {cap}")]
    StepLimit { needed: usize, cap: usize },
    #[error("sub-tree `{node}` fails with certainty by the horizon; no equivalent rate exists")]
    CertainFailure { node: String },
    #[error("invalid argument: {0}")]
    Argument(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
