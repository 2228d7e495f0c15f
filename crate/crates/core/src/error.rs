//! Error type shared by all modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameter or configuration value.
    #[error("configuration: {0}")]
    Config(String),

    /// Configuration file problem tied to a specific line.
    #[error("config line {line}: {msg}")]
    ConfigLine { line: usize, msg: String },

    /// Malformed or inconsistent data (fields, files, dimension mismatches).
    #[error("data: {0}")]
    Data(String),

    /// A physics precondition failed (e.g. the trap condition).
    #[error("validation: {0}")]
    Validation(String),

    /// Numerical breakdown: singular factorization, divergent iteration, ...
    #[error("numerics: {0}")]
    Numerics(String),

    /// The fixed-point iteration of a time step did not converge.
    #[error(
        "step {step} (t = {t}): fixed-point iteration did not converge in {iters} iterations \
         (last update norm {last_update:.3e}, eps_fp {eps_fp:.3e})"
    )]
    StepDiverged {
        step: usize,
        t: f64,
        iters: usize,
        last_update: f64,
        eps_fp: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code: 2 for user/validation errors, 1 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::ConfigLine { .. } | Error::Data(_) | Error::Validation(_) => {
                2
            }
            Error::Numerics(_) | Error::StepDiverged { .. } | Error::Io(_) => 1,
        }
    }
}
