use std::fmt::Display;

/// Error classes, each with its own exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("integrity: {0}")]
    Integrity(String),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
    #[error("node unreachable: {0}")]
    Unreachable(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Integrity(_) => 3,
            CliError::Protocol(_) => 4,
            CliError::Config(_) => 5,
            CliError::Io(_) => 6,
            CliError::Unreachable(_) => 7,
        }
    }

    pub fn class(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Integrity(_) => "integrity",
            CliError::Protocol(_) => "protocol",
            CliError::Config(_) => "config",
            CliError::Io(_) => "io",
            CliError::Unreachable(_) => "unreachable",
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m)
            | CliError::Integrity(m)
            | CliError::Protocol(m)
            | CliError::Config(m)
            | CliError::Io(m)
            | CliError::Unreachable(m) => m,
        }
    }

    /// Rebuilds an error that crossed the control socket.
    pub fn from_class(class: &str, message: String) -> Self {
        match class {
            "usage" => CliError::Usage(message),
            "integrity" => CliError::Integrity(message),
            "config" => CliError::Config(message),
            "io" => CliError::Io(message),
            "unreachable" => CliError::Unreachable(message),
            _ => CliError::Protocol(message),
        }
    }

    pub fn protocol(e: impl Display) -> Self {
        CliError::Protocol(e.to_string())
    }

    pub fn usage(e: impl Display) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<ipv8_sim::ConfigError> for CliError {
    fn from(e: ipv8_sim::ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}
