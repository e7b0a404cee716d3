//! Pipeline plumbing behind the `dnnmpc` binary: configuration, file layout
//! and one function per subcommand.

pub mod commands;
pub mod config;

use std::fmt;

/// Why a subcommand stopped. Usage problems (bad config, missing inputs)
/// exit with 2, everything else with 1.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for Failure {}

impl From<dnnmpc_core::Error> for Failure {
    fn from(e: dnnmpc_core::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}
