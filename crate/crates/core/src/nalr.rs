//! Neighborhood-adaptive linear regression, the core refinement method.
//!
//! For every low-resolution cell the method:
//!
//! 1. extracts the 3×3 query window around the cell (edge-replicated);
//! 2. ranks all training samples by cumulative absolute error between the
//!    query's similarity window and each sample's, keeping the k nearest
//!    (ties broken by lower sample index, so results are reproducible);
//! 3. fits, on just those k samples, four affine maps from the 9 window
//!    values to the 4 high-resolution sub-cell speeds, by least squares
//!    with a tiny ridge penalty on the slope weights;
//! 4. predicts the cell's 2×2 high-resolution block with the fitted maps.
//!
//! Fitting locally rather than globally lets each congestion front or wave
//! edge get its own linear model instead of one compromise fit, at the cost
//! of a least-squares solve per cell. Chaining two passes yields a 16×
//! refinement (4× per pass).

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg;
use crate::patches::{self, Patch2, Patch3, SampleSet, SearchShape};
use crate::tsgrid::{TSDiagram, MAX_SPEED_KMH};

/// Tuning knobs for the refinement.
#[derive(Clone, Copy, Debug)]
pub struct NalrConfig {
    /// Neighborhood size: how many nearest training samples feed each
    /// per-cell fit. Saturates at the sample-set size.
    pub k: usize,
    /// Window used for the similarity ranking. The regression always uses
    /// the 3×3 window regardless.
    pub search_shape: SearchShape,
    /// Ridge penalty on the slope weights (never the intercept). Keeps
    /// rank-deficient neighborhoods solvable — e.g. constant free-flow
    /// regions where all patches are identical.
    pub ridge_lambda: f64,
    /// Clamp predictions to the physical [0, 100] km/h range. Disable only
    /// for numerical analysis of the raw regression output.
    pub clamp_output: bool,
}

impl Default for NalrConfig {
    fn default() -> Self {
        NalrConfig {
            k: 100,
            search_shape: SearchShape::default(),
            ridge_lambda: 1e-8,
            clamp_output: true,
        }
    }
}

impl NalrConfig {
    fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArg("neighborhood size k must be at least 1".into()));
        }
        if !(self.ridge_lambda >= 0.0 && self.ridge_lambda.is_finite()) {
            return Err(Error::InvalidArg(format!(
                "ridge penalty must be ≥ 0 and finite, got {}",
                self.ridge_lambda
            )));
        }
        Ok(())
    }
}

/// The k training samples nearest to one query, in ascending distance
/// order.
#[derive(Clone, Debug)]
pub struct Neighborhood {
    /// (low patch, high block) training pairs, nearest first.
    pub members: Vec<(Patch3, Patch2)>,
    /// Distance of each member to the query; non-decreasing.
    pub caes: Vec<f64>,
    /// Position of each member in the sample set, for reproducibility
    /// checks.
    pub indices: Vec<usize>,
}

/// Four affine maps from a 3×3 window to the four high-resolution
/// sub-cells. Row m holds `[intercept, weight_1, …, weight_9]` for
/// sub-cell m in reading order (top-left, top-right, bottom-left,
/// bottom-right).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegressionCoeffs {
    pub rows: [[f64; 10]; 4],
}

impl RegressionCoeffs {
    /// Evaluate all four maps on a query window, unclamped.
    pub fn predict(&self, query: &Patch3) -> [f64; 4] {
        let mut out = [0.0; 4];
        for (m, row) in self.rows.iter().enumerate() {
            let mut y = row[0];
            for i in 0..9 {
                y += row[i + 1] * query.0[i];
            }
            out[m] = y;
        }
        out
    }
}

fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Rank every sample by distance between `query_key` and its similarity
/// key, returning the `min(cfg.k, set.len())` nearest. The key length must
/// match the set's search shape.
pub fn search_neighborhood(query_key: &[f64], set: &SampleSet, cfg: &NalrConfig) -> Result<Neighborhood> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(Error::Empty("cannot search an empty sample set".into()));
    }
    if query_key.len() != set.search_shape().len() {
        return Err(Error::Shape(format!(
            "query key has {} values but the sample set's {} search window needs {}",
            query_key.len(),
            set.search_shape(),
            set.search_shape().len()
        )));
    }
    let mut ranked: Vec<(f64, usize)> = (0..set.len())
        .map(|i| (l1_distance(query_key, set.search_key(i)), i))
        .collect();
    let k = cfg.k.min(set.len());
    let by_distance_then_index =
        |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < ranked.len() {
        ranked.select_nth_unstable_by(k - 1, by_distance_then_index);
        ranked.truncate(k);
    }
    ranked.sort_unstable_by(by_distance_then_index);
    let mut members = Vec::with_capacity(k);
    let mut caes = Vec::with_capacity(k);
    let mut indices = Vec::with_capacity(k);
    for (cae, i) in ranked {
        members.push((*set.low_patch(i), *set.high_patch(i)));
        caes.push(cae);
        indices.push(i);
    }
    Ok(Neighborhood { members, caes, indices })
}

/// Least-squares fit of the four affine maps over a list of training
/// pairs, with a ridge penalty `lambda` on the slope weights only. Shared
/// by the per-neighborhood fits here and the global per-regime fits of the
/// baselines.
pub(crate) fn fit_pairs(pairs: &[(Patch3, Patch2)], lambda: f64) -> Result<RegressionCoeffs> {
    if pairs.is_empty() {
        return Err(Error::Empty("cannot fit a regression on zero samples".into()));
    }
    // Normal equations: A = XᵀX (+ λ on the slope diagonal), b_m = Xᵀy_m,
    // with design rows x = [1, p_1, …, p_9]. Entries accumulate in sample
    // order.
    let mut a = [0.0f64; 100];
    let mut rhs = vec![vec![0.0f64; 10]; 4];
    let mut x = [0.0f64; 10];
    for (low, high) in pairs {
        x[0] = 1.0;
        x[1..].copy_from_slice(&low.0);
        for i in 0..10 {
            for j in i..10 {
                a[i * 10 + j] += x[i] * x[j];
            }
        }
        for m in 0..4 {
            for i in 0..10 {
                rhs[m][i] += x[i] * high.0[m];
            }
        }
    }
    for i in 0..10 {
        for j in 0..i {
            a[i * 10 + j] = a[j * 10 + i];
        }
    }
    for i in 1..10 {
        a[i * 10 + i] += lambda;
    }
    linalg::solve_spd(&a, 10, &mut rhs).map_err(|p| Error::Singular {
        size: 10,
        pivot_index: p.index,
        pivot_value: p.value,
        k: pairs.len(),
    })?;
    let mut rows = [[0.0; 10]; 4];
    for m in 0..4 {
        rows[m].copy_from_slice(&rhs[m]);
    }
    Ok(RegressionCoeffs { rows })
}

/// Fit the four affine maps on a neighborhood.
pub fn fit_neighborhood(neighborhood: &Neighborhood, cfg: &NalrConfig) -> Result<RegressionCoeffs> {
    cfg.validate()?;
    fit_pairs(&neighborhood.members, cfg.ridge_lambda)
}

/// Predict one cell's 2×2 high-resolution block from its query window.
pub fn predict_cell(query: &Patch3, coeffs: &RegressionCoeffs, cfg: &NalrConfig) -> Patch2 {
    let mut out = coeffs.predict(query);
    if cfg.clamp_output {
        for v in &mut out {
            *v = v.clamp(0.0, MAX_SPEED_KMH);
        }
    }
    Patch2(out)
}

/// Refine a whole diagram one step: the output has twice the rows and
/// columns and half the cell spans. Per-cell work (search, fit, predict)
/// runs in parallel; results are identical at any worker count.
pub fn refine(low: &TSDiagram, set: &SampleSet, cfg: &NalrConfig) -> Result<TSDiagram> {
    cfg.validate()?;
    low.expect_dense("refinement input")?;
    if set.is_empty() {
        return Err(Error::Empty("cannot refine with an empty sample set".into()));
    }
    if cfg.search_shape != set.search_shape() {
        return Err(Error::InvalidArg(format!(
            "config asks for a {} search window but the sample set was built with {}",
            cfg.search_shape,
            set.search_shape()
        )));
    }
    if !low.cell_size().approx_eq(set.low_cell_size()) {
        return Err(Error::Shape(format!(
            "input cells are {} but the training samples came from {} cells",
            low.cell_size(),
            set.low_cell_size()
        )));
    }
    let (rows, cols) = (low.rows(), low.cols());
    let blocks: Vec<Patch2> = (0..rows * cols)
        .into_par_iter()
        .map(|idx| {
            let (r, c) = (idx / cols, idx % cols);
            let query = patches::query_patch(low, r, c);
            let key: Vec<f64>;
            let key_ref: &[f64] = if cfg.search_shape.is_default() {
                &query.0
            } else {
                key = patches::window(low, r, c, cfg.search_shape);
                &key
            };
            let neighborhood = search_neighborhood(key_ref, set, cfg).map_err(|e| e.at_cell(r, c))?;
            let coeffs = fit_neighborhood(&neighborhood, cfg).map_err(|e| e.at_cell(r, c))?;
            Ok(predict_cell(&query, &coeffs, cfg))
        })
        .collect::<Result<_>>()?;
    let (out_rows, out_cols) = (2 * rows, 2 * cols);
    let mut values = vec![0.0f64; out_rows * out_cols];
    for r in 0..rows {
        for c in 0..cols {
            let b = &blocks[r * cols + c].0;
            values[(2 * r) * out_cols + 2 * c] = b[0];
            values[(2 * r) * out_cols + 2 * c + 1] = b[1];
            values[(2 * r + 1) * out_cols + 2 * c] = b[2];
            values[(2 * r + 1) * out_cols + 2 * c + 1] = b[3];
        }
    }
    let cell = low.cell_size().halved();
    if cfg.clamp_output {
        TSDiagram::from_values(out_rows, out_cols, values, cell)
    } else {
        TSDiagram::from_values_unchecked(out_rows, out_cols, values, cell)
    }
}

/// Apply [`refine`] once per stage — two stages turn each cell into 16.
/// Each stage's sample set must match the resolution reached by the
/// previous stages.
pub fn refine_chained(low: &TSDiagram, stage_sets: &[SampleSet], cfg: &NalrConfig) -> Result<TSDiagram> {
    if stage_sets.is_empty() {
        return Err(Error::Empty("refinement chain has no stages".into()));
    }
    let mut current = refine(low, &stage_sets[0], cfg)?;
    for set in &stage_sets[1..] {
        current = refine(&current, set, cfg)?;
    }
    Ok(current)
}
