use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch for `{operand}` (expected {expected}, got {got})")]
    Dimension { op: &'static str, operand: &'static str, expected: String, got: String },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("controller synthesis failed: {0}")]
    Synthesis(String),
    #[error("stability certification failed: {0}")]
    Certification(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("attack infeasible: {0}")]
    AttackInfeasible(String),
    #[error(
        "exposure infeasible: best pair (component {component}, sign {sign:+}) reaches {achievable:.6} \
         but the tightened constraint needs {required:.6}"
    )]
    ExposureInfeasible { component: usize, sign: i8, required: f64, achievable: f64 },
    #[error("step {step}: {source}")]
    Step { step: usize, source: Box<Error> },
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn at_step(self, step: usize) -> Error {
        match self {
            e @ Error::Step { .. } => e,
            e => Error::Step { step, source: Box::new(e) },
        }
    }

    /// The innermost error, with any step annotation removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Step { source, .. } => source.root(),
            e => e,
        }
    }
}

pub(crate) fn check_len(op: &'static str, operand: &'static str, v: &crate::Vector, n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::Dimension { op, operand, expected: n.to_string(), got: v.len().to_string() });
    }
    Ok(())
}

pub(crate) fn check_shape(
    op: &'static str,
    operand: &'static str,
    m: &crate::Matrix,
    rows: usize,
    cols: usize,
) -> Result<()> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(Error::Dimension {
            op,
            operand,
            expected: format!("{rows}x{cols}"),
            got: format!("{}x{}", m.nrows(), m.ncols()),
        });
    }
    Ok(())
}
