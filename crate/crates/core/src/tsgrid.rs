//! Data model for time-space speed diagrams and their on-disk matrix form.
//!
//! A diagram is a dense row-major matrix of mean speeds in km/h. Rows index
//! space cells from the upstream end of the segment, columns index time
//! cells from the start of the observation window. Missing cells are stored
//! as NaN and reported through [`TSDiagram::get`] as `None`.
//!
//! On disk a diagram is a headerless comma-separated matrix, one row per
//! line, with `NaN` (any letter case) marking missing cells. A sidecar file
//! next to it — same path with the extension replaced by `.meta` — records
//! the physical size of one cell as `key=value` lines (`time_span_s`,
//! `space_span_m`, optionally `rows`/`cols` for validation).

use std::fmt;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Highest physically plausible speed, km/h. Everything a diagram stores is
/// validated against `[0, MAX_SPEED_KMH]`.
pub const MAX_SPEED_KMH: f64 = 100.0;

/// Physical extent of one diagram cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellSize {
    /// Duration covered by one column, seconds.
    pub time_span_s: f64,
    /// Road length covered by one row, metres.
    pub space_span_m: f64,
}

impl CellSize {
    pub fn new(time_span_s: f64, space_span_m: f64) -> Result<Self> {
        if !(time_span_s > 0.0 && time_span_s.is_finite()) || !(space_span_m > 0.0 && space_span_m.is_finite()) {
            return Err(Error::InvalidArg(format!(
                "cell size must be positive and finite, got {time_span_s} s × {space_span_m} m"
            )));
        }
        Ok(CellSize { time_span_s, space_span_m })
    }

    /// Cell size after one 2× refinement pass on both axes.
    pub fn halved(self) -> CellSize {
        CellSize {
            time_span_s: self.time_span_s / 2.0,
            space_span_m: self.space_span_m / 2.0,
        }
    }

    /// Cell size after coarsening both axes by an integer factor.
    pub fn scaled(self, factor: usize) -> CellSize {
        CellSize {
            time_span_s: self.time_span_s * factor as f64,
            space_span_m: self.space_span_m * factor as f64,
        }
    }

    /// True when both spans agree to within a small relative tolerance —
    /// used to check that chained refinement stages line up.
    pub fn approx_eq(self, other: CellSize) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0);
        close(self.time_span_s, other.time_span_s) && close(self.space_span_m, other.space_span_m)
    }
}

impl Default for CellSize {
    fn default() -> Self {
        CellSize { time_span_s: 1.0, space_span_m: 1.0 }
    }
}

impl fmt::Display for CellSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} s × {} m", self.time_span_s, self.space_span_m)
    }
}

/// A time-space speed diagram. Values are km/h; missing cells hold NaN.
#[derive(Clone, Debug)]
pub struct TSDiagram {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    missing: usize,
    cell_size: CellSize,
}

impl TSDiagram {
    /// Build a diagram from row-major values. NaN entries become missing
    /// cells; any other value must lie in `[0, MAX_SPEED_KMH]`.
    pub fn from_values(rows: usize, cols: usize, values: Vec<f64>, cell_size: CellSize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Empty(format!("diagram shape {rows}×{cols}")));
        }
        if values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "diagram {rows}×{cols} needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        let mut missing = 0;
        for (i, &v) in values.iter().enumerate() {
            if v.is_nan() {
                missing += 1;
            } else if !(0.0..=MAX_SPEED_KMH).contains(&v) || !v.is_finite() {
                return Err(Error::SpeedRange { value: v, row: i / cols, col: i % cols });
            }
        }
        Ok(TSDiagram { rows, cols, values, missing, cell_size })
    }

    /// A dense diagram where every cell holds `value`.
    pub fn filled(rows: usize, cols: usize, value: f64, cell_size: CellSize) -> Result<Self> {
        TSDiagram::from_values(rows, cols, vec![value; rows * cols], cell_size)
    }

    /// Like [`TSDiagram::from_values`] but without the speed-range check:
    /// values only need to be finite (or NaN for missing). Reserved for
    /// refinement with output clamping disabled, where raw regression
    /// predictions may leave the physical range and are wanted as-is.
    pub(crate) fn from_values_unchecked(rows: usize, cols: usize, values: Vec<f64>, cell_size: CellSize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Empty(format!("diagram shape {rows}×{cols}")));
        }
        if values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "diagram {rows}×{cols} needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        let mut missing = 0;
        for (i, &v) in values.iter().enumerate() {
            if v.is_nan() {
                missing += 1;
            } else if v.is_infinite() {
                return Err(Error::SpeedRange { value: v, row: i / cols, col: i % cols });
            }
        }
        Ok(TSDiagram { rows, cols, values, missing, cell_size })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cell_size(&self) -> CellSize {
        self.cell_size
    }

    /// Row-major cell values; missing cells are NaN.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Raw value at (row, col); NaN when the cell is missing.
    pub fn value(&self, row: usize, col: usize) -> f64 {
        assert!(row < self.rows && col < self.cols, "cell ({row}, {col}) outside {}×{}", self.rows, self.cols);
        self.values[row * self.cols + col]
    }

    /// Observed value at (row, col), or `None` when the cell is missing.
    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        let v = self.value(row, col);
        (!v.is_nan()).then_some(v)
    }

    pub fn missing_count(&self) -> usize {
        self.missing
    }

    pub fn is_dense(&self) -> bool {
        self.missing == 0
    }

    /// Error out unless every cell is observed. `context` says what needed
    /// the dense diagram.
    pub fn expect_dense(&self, context: &str) -> Result<()> {
        if self.missing > 0 {
            return Err(Error::MissingCells { count: self.missing, context: context.to_string() });
        }
        Ok(())
    }

    /// Same shape and cell size, new values (validated like
    /// [`TSDiagram::from_values`]).
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        TSDiagram::from_values(self.rows, self.cols, values, self.cell_size)
    }

    /// Coarsen by an integer factor on both axes: each `factor`×`factor`
    /// block becomes one cell holding the block mean. The shape must divide
    /// evenly and the diagram must be dense.
    pub fn downsample_mean(&self, factor: usize) -> Result<TSDiagram> {
        if factor == 0 {
            return Err(Error::InvalidArg("downsampling factor must be at least 1".into()));
        }
        if self.rows % factor != 0 || self.cols % factor != 0 {
            return Err(Error::Shape(format!(
                "{}×{} diagram does not divide into {factor}×{factor} blocks",
                self.rows, self.cols
            )));
        }
        self.expect_dense("block-mean downsampling")?;
        let (rows, cols) = (self.rows / factor, self.cols / factor);
        let mut values = Vec::with_capacity(rows * cols);
        let denom = (factor * factor) as f64;
        for br in 0..rows {
            for bc in 0..cols {
                let mut sum = 0.0;
                for r in 0..factor {
                    for c in 0..factor {
                        sum += self.value(br * factor + r, bc * factor + c);
                    }
                }
                values.push(sum / denom);
            }
        }
        TSDiagram::from_values(rows, cols, values, self.cell_size.scaled(factor))
    }

    /// Refine by an integer factor on both axes by plain replication: each
    /// cell becomes a `factor`×`factor` block of its value. Missing cells
    /// replicate as missing.
    pub fn upsample_nearest(&self, factor: usize) -> Result<TSDiagram> {
        if factor == 0 {
            return Err(Error::InvalidArg("upsampling factor must be at least 1".into()));
        }
        let (rows, cols) = (self.rows * factor, self.cols * factor);
        let mut values = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                values[r * cols + c] = self.value(r / factor, c / factor);
            }
        }
        let cell = CellSize {
            time_span_s: self.cell_size.time_span_s / factor as f64,
            space_span_m: self.cell_size.space_span_m / factor as f64,
        };
        TSDiagram::from_values(rows, cols, values, cell)
    }
}

/// Sidecar path for a matrix file: same location, extension replaced by
/// `.meta`.
pub fn meta_path(matrix_path: &Path) -> PathBuf {
    matrix_path.with_extension("meta")
}

/// Read a diagram from a headerless comma-separated matrix file. `NaN`
/// entries (any letter case) become missing cells. The `.meta` sidecar, if
/// present, supplies the cell size; otherwise it defaults to 1 s × 1 m.
pub fn load_matrix(path: &Path) -> Result<TSDiagram> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut row_len = 0;
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                msg: format!("expected a number, got {field:?}"),
            })?;
            values.push(v);
            row_len += 1;
        }
        match cols {
            None => cols = Some(row_len),
            Some(c) if c != row_len => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    msg: format!("row has {row_len} values, previous rows had {c}"),
                });
            }
            Some(_) => {}
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| Error::Empty(format!("{}: no rows", path.display())))?;
    let meta = load_meta(&meta_path(path), rows, cols)?;
    TSDiagram::from_values(rows, cols, values, meta).map_err(|e| match e {
        Error::SpeedRange { value, row, col } => Error::Parse {
            path: path.to_path_buf(),
            line: row + 1,
            msg: format!("speed {value} km/h in column {} is outside [0, {MAX_SPEED_KMH}]", col + 1),
        },
        other => other,
    })
}

fn load_meta(path: &Path, rows: usize, cols: usize) -> Result<CellSize> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(CellSize::default()),
        Err(source) => return Err(Error::Io { path: path.to_path_buf(), source }),
    };
    let mut time_span_s = None;
    let mut space_span_m = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |msg: String| Error::Parse { path: path.to_path_buf(), line: idx + 1, msg };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| parse_err(format!("expected key=value, got {line:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        let num: f64 = value
            .parse()
            .map_err(|_| parse_err(format!("expected a number for {key}, got {value:?}")))?;
        match key {
            "time_span_s" => time_span_s = Some(num),
            "space_span_m" => space_span_m = Some(num),
            "rows" => {
                if num != rows as f64 {
                    return Err(parse_err(format!("metadata says {num} rows, matrix has {rows}")));
                }
            }
            "cols" => {
                if num != cols as f64 {
                    return Err(parse_err(format!("metadata says {num} cols, matrix has {cols}")));
                }
            }
            other => return Err(parse_err(format!("unknown metadata key {other:?}"))),
        }
    }
    match (time_span_s, space_span_m) {
        (Some(t), Some(s)) => CellSize::new(t, s),
        (None, None) => Ok(CellSize::default()),
        _ => Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: "time_span_s and space_span_m must be given together".into(),
        }),
    }
}

/// Write a diagram as a matrix file plus its `.meta` sidecar. Values are
/// written with six decimal places; missing cells as `NaN`.
pub fn save_matrix(diagram: &TSDiagram, path: &Path) -> Result<()> {
    let io_err = |source| Error::Io { path: path.to_path_buf(), source };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<std::fs::File>, s: &str| out.write_all(s.as_bytes()).map_err(io_err);
    for r in 0..diagram.rows() {
        let mut line = String::new();
        for c in 0..diagram.cols() {
            if c > 0 {
                line.push(',');
            }
            let v = diagram.value(r, c);
            if v.is_nan() {
                line.push_str("NaN");
            } else {
                line.push_str(&format!("{v:.6}"));
            }
        }
        line.push('\n');
        write(&mut out, &line)?;
    }
    out.flush().map_err(io_err)?;

    let meta = meta_path(path);
    let body = format!(
        "time_span_s={}\nspace_span_m={}\nrows={}\ncols={}\n",
        diagram.cell_size().time_span_s,
        diagram.cell_size().space_span_m,
        diagram.rows(),
        diagram.cols()
    );
    std::fs::write(&meta, body).map_err(|source| Error::Io { path: meta.clone(), source })
}
