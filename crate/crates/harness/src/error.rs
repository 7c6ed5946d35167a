use std::path::{Path, PathBuf};

use meanfield_core::Error as CoreError;
use serde_json::json;
use thiserror::Error;

pub type HarnessResult<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Error)]
pub enum HarnessError {
    /// Bad flags, configuration or parameters.
    #[error("usage: {0}")]
    Usage(String),

    #[error(transparent)]
    BudgetInfeasible(CoreError),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(CoreError),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.to_path_buf(), source }
    }

    /// 2 usage, 3 budget infeasible, 4 i/o, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) => 2,
            HarnessError::BudgetInfeasible(_) => 3,
            HarnessError::Io { .. } => 4,
            HarnessError::Core(_) => 1,
        }
    }

    /// Machine-readable form written in place of a report.
    pub fn to_json(&self) -> serde_json::Value {
        match self {
            HarnessError::BudgetInfeasible(CoreError::BudgetInfeasible { level, cap, bias, target }) => json!({
                "error": "budget_infeasible",
                "level": level,
                "cap": cap,
                "bias": bias,
                "target": target,
            }),
            HarnessError::Usage(msg) => json!({ "error": "usage", "message": msg }),
            HarnessError::Io { .. } => json!({ "error": "io", "message": self.to_string() }),
            other => json!({ "error": "failure", "message": other.to_string() }),
        }
    }
}

impl From<CoreError> for HarnessError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidInput(msg) => HarnessError::Usage(msg),
            e @ CoreError::BudgetInfeasible { .. } => HarnessError::BudgetInfeasible(e),
            other => HarnessError::Core(other),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        let budget = HarnessError::from(CoreError::BudgetInfeasible { level: 12.0, cap: 12.0, bias: vec![0.5], target: 0.1 });
        assert_eq!(budget.exit_code(), 3);
        assert_eq!(budget.to_json()["error"], "budget_infeasible");
        assert_eq!(budget.to_json()["bias"][0], 0.5);
        assert_eq!(HarnessError::from(CoreError::InvalidInput("x".into())).exit_code(), 2);
        let io = HarnessError::io(Path::new("/nope"), std::io::Error::other("denied"));
        assert_eq!(io.exit_code(), 4);
        assert_eq!(HarnessError::from(CoreError::Coupling("x".into())).exit_code(), 1);
    }
}
