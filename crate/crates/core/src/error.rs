//! Error type shared by the whole crate.

use std::path::PathBuf;

/// Anything that can go wrong while loading, transforming, or refining a
/// diagram.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// File could not be opened, read, or written.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// File opened fine but its content is malformed. `line` is 1-based.
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    /// A speed outside the physical range [0, 100] km/h.
    #[error("speed {value} km/h at row {row}, column {col} is outside [0, 100]")]
    SpeedRange { value: f64, row: usize, col: usize },

    /// An operation received an empty input it cannot work with.
    #[error("empty input: {0}")]
    Empty(String),

    /// Two inputs that must agree in shape or resolution do not.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A configuration value is out of its valid range or inconsistent.
    #[error("invalid argument: {0}")]
    InvalidArg(String),

    /// An operation that requires a fully observed diagram was given one
    /// with masked (missing) cells.
    #[error("diagram has {count} missing cell(s); {context}")]
    MissingCells { count: usize, context: String },

    /// A regression system could not be factorized: the coefficient matrix
    /// is singular or numerically indefinite.
    #[error(
        "singular {size}x{size} regression system (neighborhood size {k}): \
         pivot {pivot_index} came out as {pivot_value:.3e}"
    )]
    Singular {
        size: usize,
        pivot_index: usize,
        pivot_value: f64,
        k: usize,
    },

    /// Wraps a failure with the diagram cell being processed when it
    /// happened.
    #[error("at cell ({row}, {col}): {source}")]
    AtCell {
        row: usize,
        col: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Attach the low-resolution cell being processed to an error bubbling
    /// out of a per-cell fit.
    pub(crate) fn at_cell(self, row: usize, col: usize) -> Error {
        Error::AtCell {
            row,
            col,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn messages_name_the_offending_location() {
        let err = Error::SpeedRange {
            value: 120.0,
            row: 3,
            col: 7,
        };
        let msg = err.to_string();
        assert!(msg.contains("120"));
        assert!(msg.contains("row 3"));
        assert!(msg.contains("column 7"));

        let err = Error::Parse {
            path: PathBuf::from("grid.csv"),
            line: 12,
            msg: "expected a number, got \"abc\"".into(),
        };
        assert_eq!(err.to_string(), "grid.csv:12: expected a number, got \"abc\"");
    }

    #[test]
    fn cell_wrapper_keeps_the_underlying_cause() {
        let inner = Error::Singular {
            size: 10,
            pivot_index: 4,
            pivot_value: -1.0e-18,
            k: 12,
        };
        let err = inner.at_cell(5, 9);
        let msg = err.to_string();
        assert!(msg.starts_with("at cell (5, 9)"));
        assert!(std::error::Error::source(&err).is_some());
    }
}
