use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("empty domain: every fine cell lies inside the perforations")]
    EmptyDomain,

    #[error("incompatible source: a pure Neumann problem needs zero net source, got {0:e}")]
    IncompatibleSource(f64),

    #[error(
        "singular system: connected component of {size} cells containing cell ({i}, {j}) \
         touches no Dirichlet boundary"
    )]
    Singular { size: usize, i: usize, j: usize },

    #[error("linear solve failed: {0}")]
    Solve(String),

    #[error("error metric undefined: reference field has zero norm")]
    ZeroReference,

    #[error("internal consistency check failed: {0}")]
    Consistency(String),

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
