//! Patch extraction and the paired low/high training sample set.
//!
//! The refinement model works on small windows of the low-resolution
//! diagram. For every interior cell of a training diagram we extract the
//! 3×3 window around it together with the 2×2 block of high-resolution
//! cells it covers; those pairs are the regression training data. At
//! prediction time the same 3×3 window — clamped to the diagram edge by
//! replication — is the predictor vector.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tsgrid::{CellSize, TSDiagram};

/// A 3×3 window of low-resolution speeds in reading order (top row left to
/// right, then middle, then bottom). The window center is element 4.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Patch3(pub [f64; 9]);

impl Patch3 {
    /// Cumulative absolute error against another patch: the sum of the nine
    /// element-wise absolute differences. This is the similarity measure
    /// used to rank training samples.
    pub fn cae(&self, other: &Patch3) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).sum()
    }

    /// Speed at the window center.
    pub fn center(&self) -> f64 {
        self.0[4]
    }
}

/// The 2×2 block of high-resolution speeds covering one low-resolution
/// cell, in reading order: top-left, top-right, bottom-left, bottom-right.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Patch2(pub [f64; 4]);

/// Window geometry used to compare a query cell with training samples.
/// Similarity can be computed on a window other than the 3×3 regression
/// patch; the supported shapes (rows × columns) are 3×3, 3×1, 1×3, 5×5,
/// 5×1, and 1×5.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SearchShape {
    rows: usize,
    cols: usize,
}

impl SearchShape {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        const ALLOWED: [(usize, usize); 6] = [(3, 3), (3, 1), (1, 3), (5, 5), (5, 1), (1, 5)];
        if !ALLOWED.contains(&(rows, cols)) {
            return Err(Error::InvalidArg(format!(
                "search window {rows}×{cols} is not one of 3x3, 3x1, 1x3, 5x5, 5x1, 1x5"
            )));
        }
        Ok(SearchShape { rows, cols })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Number of values in one window.
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_default(&self) -> bool {
        *self == SearchShape::default()
    }
}

impl Default for SearchShape {
    fn default() -> Self {
        SearchShape { rows: 3, cols: 3 }
    }
}

impl std::fmt::Display for SearchShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

impl std::str::FromStr for SearchShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArg(format!("cannot parse search window {s:?}; expected e.g. 3x3"));
        let (r, c) = s.split_once(['x', 'X']).ok_or_else(bad)?;
        let rows = r.trim().parse().map_err(|_| bad())?;
        let cols = c.trim().parse().map_err(|_| bad())?;
        SearchShape::new(rows, cols)
    }
}

fn clamped(center: usize, offset: isize, n: usize) -> usize {
    (center as isize + offset).clamp(0, n as isize - 1) as usize
}

/// Values of the `shape` window centered at (row, col), in reading order.
/// Positions past the diagram edge replicate the nearest edge cell.
pub fn window(diagram: &TSDiagram, row: usize, col: usize, shape: SearchShape) -> Vec<f64> {
    let mut out = Vec::with_capacity(shape.len());
    let half_r = (shape.rows() / 2) as isize;
    let half_c = (shape.cols() / 2) as isize;
    for dr in -half_r..=half_r {
        for dc in -half_c..=half_c {
            let r = clamped(row, dr, diagram.rows());
            let c = clamped(col, dc, diagram.cols());
            out.push(diagram.value(r, c));
        }
    }
    out
}

/// The 3×3 predictor window centered at (row, col), edge-replicated.
pub fn query_patch(diagram: &TSDiagram, row: usize, col: usize) -> Patch3 {
    let w = window(diagram, row, col, SearchShape::default());
    Patch3(w.try_into().expect("3x3 window has 9 values"))
}

/// Paired training samples extracted from one or more low/high diagram
/// pairs: for each interior low-resolution cell, its 3×3 window and the
/// 2×2 high-resolution block covering it. When a non-default search shape
/// is configured, each sample also carries the similarity window of that
/// shape.
#[derive(Clone, Debug)]
pub struct SampleSet {
    low: Vec<Patch3>,
    high: Vec<Patch2>,
    keys: Vec<f64>,
    search_shape: SearchShape,
    low_cell: CellSize,
}

impl SampleSet {
    /// Extract samples with the default 3×3 similarity window.
    pub fn build(low: &TSDiagram, high: &TSDiagram) -> Result<SampleSet> {
        SampleSet::build_with_shape(low, high, SearchShape::default())
    }

    /// Extract samples, computing similarity keys with the given window
    /// shape. `high` must be exactly twice the resolution of `low` on both
    /// axes, with a matching cell size; both diagrams must be dense.
    pub fn build_with_shape(low: &TSDiagram, high: &TSDiagram, shape: SearchShape) -> Result<SampleSet> {
        low.expect_dense("training sample extraction (low-resolution side)")?;
        high.expect_dense("training sample extraction (high-resolution side)")?;
        if high.rows() != 2 * low.rows() || high.cols() != 2 * low.cols() {
            return Err(Error::Shape(format!(
                "high-resolution diagram is {}×{}, expected {}×{} (twice the low-resolution shape)",
                high.rows(),
                high.cols(),
                2 * low.rows(),
                2 * low.cols()
            )));
        }
        if !high.cell_size().approx_eq(low.cell_size().halved()) {
            return Err(Error::Shape(format!(
                "cell sizes disagree: low is {}, high is {} but should be {}",
                low.cell_size(),
                high.cell_size(),
                low.cell_size().halved()
            )));
        }
        if low.rows() < 3 || low.cols() < 3 {
            return Err(Error::Empty(format!(
                "{}×{} low-resolution diagram has no interior 3×3 windows",
                low.rows(),
                low.cols()
            )));
        }
        let count = (low.rows() - 2) * (low.cols() - 2);
        let mut set = SampleSet {
            low: Vec::with_capacity(count),
            high: Vec::with_capacity(count),
            keys: if shape.is_default() { Vec::new() } else { Vec::with_capacity(count * shape.len()) },
            search_shape: shape,
            low_cell: low.cell_size(),
        };
        for r in 1..low.rows() - 1 {
            for c in 1..low.cols() - 1 {
                set.low.push(query_patch(low, r, c));
                set.high.push(Patch2([
                    high.value(2 * r, 2 * c),
                    high.value(2 * r, 2 * c + 1),
                    high.value(2 * r + 1, 2 * c),
                    high.value(2 * r + 1, 2 * c + 1),
                ]));
                if !shape.is_default() {
                    set.keys.extend(window(low, r, c, shape));
                }
            }
        }
        Ok(set)
    }

    /// Fold another set into this one. Both must use the same search shape
    /// and come from diagrams with the same cell size.
    pub fn append(&mut self, other: SampleSet) -> Result<()> {
        if other.search_shape != self.search_shape {
            return Err(Error::Shape(format!(
                "cannot merge sample sets with search windows {} and {}",
                self.search_shape, other.search_shape
            )));
        }
        if !other.low_cell.approx_eq(self.low_cell) {
            return Err(Error::Shape(format!(
                "cannot merge sample sets with cell sizes {} and {}",
                self.low_cell, other.low_cell
            )));
        }
        self.low.extend(other.low);
        self.high.extend(other.high);
        self.keys.extend(other.keys);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.low.len()
    }

    pub fn is_empty(&self) -> bool {
        self.low.is_empty()
    }

    pub fn low_patch(&self, i: usize) -> &Patch3 {
        &self.low[i]
    }

    pub fn high_patch(&self, i: usize) -> &Patch2 {
        &self.high[i]
    }

    /// Similarity key of sample `i`: its search-shape window, or the 3×3
    /// patch itself under the default shape.
    pub fn search_key(&self, i: usize) -> &[f64] {
        if self.search_shape.is_default() {
            &self.low[i].0
        } else {
            let len = self.search_shape.len();
            &self.keys[i * len..(i + 1) * len]
        }
    }

    pub fn search_shape(&self) -> SearchShape {
        self.search_shape
    }

    /// Cell size of the low-resolution diagrams the samples came from.
    pub fn low_cell_size(&self) -> CellSize {
        self.low_cell
    }

    /// A uniformly drawn subset of `count` samples, in ascending original
    /// order. Used for training-set-size experiments.
    pub fn subsample(&self, count: usize, rng: &mut impl Rng) -> Result<SampleSet> {
        if count == 0 || count > self.len() {
            return Err(Error::InvalidArg(format!(
                "subsample size {count} must be between 1 and {}",
                self.len()
            )));
        }
        let mut idx = rand::seq::index::sample(rng, self.len(), count).into_vec();
        idx.sort_unstable();
        let key_len = self.search_shape.len();
        let mut out = SampleSet {
            low: Vec::with_capacity(count),
            high: Vec::with_capacity(count),
            keys: Vec::new(),
            search_shape: self.search_shape,
            low_cell: self.low_cell,
        };
        for &i in &idx {
            out.low.push(self.low[i]);
            out.high.push(self.high[i]);
            if !self.search_shape.is_default() {
                out.keys.extend_from_slice(&self.keys[i * key_len..(i + 1) * key_len]);
            }
        }
        Ok(out)
    }
}
