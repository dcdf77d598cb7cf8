use thiserror::Error;

/// Failures surfaced by the CLI. Config problems exit with 2, everything
/// else with 1.
#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl GatewayError {
    pub fn config(msg: impl std::fmt::Display) -> Self {
        GatewayError::Config(msg.to_string())
    }

    pub fn runtime(msg: impl std::fmt::Display) -> Self {
        GatewayError::Runtime(msg.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            GatewayError::Config(_) => 2,
            GatewayError::Runtime(_) => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            GatewayError::Config(_) => "config",
            GatewayError::Runtime(_) => "runtime",
        }
    }

    /// One JSON object on one line, e.g.
    /// `{"error":"config","message":"unknown field `foo`"}`.
    pub fn to_line(&self) -> String {
        // serde_json escapes embedded newlines, so this stays one line
        serde_json::json!({ "error": self.kind(), "message": self.to_string() }).to_string()
    }
}

pub type Result<T> = std::result::Result<T, GatewayError>;
