use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("outside function domain: {0}")]
    Domain(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("instance too large: {0}")]
    Size(String),

    #[error("insufficient resources: {0}")]
    Resource(String),

    #[error("plan assigns {count} arms to customer {customer}")]
    MultipleArms { customer: usize, count: usize },

    #[error("plan invalid for customers {customers:?}: {reason}")]
    InvalidPlan { customers: Vec<usize>, reason: String },

    #[error("expected cost {cost} exceeds budget {budget} by {excess}")]
    BudgetViolation { cost: f64, budget: f64, excess: f64 },

    #[error("cannot estimate arm {arm}: {policy_count} customers assigned by the policy but none matched in the RCT")]
    EstimationImpossible { arm: usize, policy_count: usize },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}
