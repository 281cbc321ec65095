//! The two comparison methods refinement is benchmarked against.
//!
//! **Global linear regression (GLR)** fits one affine map per traffic
//! regime — free-flow and congested, split by the cell's own speed against
//! a threshold — over the *entire* training set, then applies the same
//! coefficients to every cell of the regime. It captures the broad
//! low-to-high relationship but smooths over local structure.
//!
//! **Neighbor embedding (NE)** skips fitting altogether: each query window
//! is reconstructed as a weighted combination of its k nearest training
//! windows (weights minimize the reconstruction error subject to summing
//! to 1), and the same weights are applied to the neighbors'
//! high-resolution blocks. NE can also jump straight to 16× in one pass
//! using training pairs whose high-resolution side is a 4×4 block.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg;
use crate::nalr::{fit_pairs, RegressionCoeffs};
use crate::patches::{self, Patch2, Patch3, SampleSet};
use crate::tsgrid::{CellSize, TSDiagram, MAX_SPEED_KMH};

/// Ridge penalty used when a regime is too small or too collinear for a
/// plain least-squares fit.
const GLR_FALLBACK_RIDGE: f64 = 1e-8;

/// A traffic regime of the two-regime global model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    Free,
    Congested,
}

/// The global two-regime model: one set of affine maps for free-flowing
/// cells, one for congested cells.
#[derive(Clone, Debug)]
pub struct GlrModel {
    pub free: RegressionCoeffs,
    pub congested: RegressionCoeffs,
    /// Cells with center speed strictly below this are congested; at or
    /// above it, free-flowing.
    pub threshold: f64,
    /// Set when one regime had no training samples and borrowed the
    /// other's coefficients — callers should surface this to the user.
    pub fallback_regime: Option<Regime>,
}

impl GlrModel {
    fn coeffs_for(&self, center_speed: f64) -> &RegressionCoeffs {
        if center_speed < self.threshold {
            &self.congested
        } else {
            &self.free
        }
    }
}

fn fit_regime(pairs: &[(Patch3, Patch2)]) -> Result<RegressionCoeffs> {
    // A regime needs at least 11 samples for the 10-parameter maps to be
    // determined; below that (or when collinear) fall back to a ridge fit.
    if pairs.len() >= 11 {
        match fit_pairs(pairs, 0.0) {
            Ok(c) => return Ok(c),
            Err(Error::Singular { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    fit_pairs(pairs, GLR_FALLBACK_RIDGE)
}

/// Fit the two-regime global model. Samples are assigned to a regime by
/// their center-cell speed; a regime with no samples at all reuses the
/// other regime's coefficients and is reported via `fallback_regime`.
pub fn glr_train(set: &SampleSet, threshold: f64) -> Result<GlrModel> {
    if !(0.0 < threshold && threshold < MAX_SPEED_KMH) {
        return Err(Error::InvalidArg(format!(
            "regime threshold must be inside (0, {MAX_SPEED_KMH}), got {threshold}"
        )));
    }
    if set.is_empty() {
        return Err(Error::Empty("cannot train a global model on an empty sample set".into()));
    }
    let mut congested = Vec::new();
    let mut free = Vec::new();
    for i in 0..set.len() {
        let pair = (*set.low_patch(i), *set.high_patch(i));
        if pair.0.center() < threshold {
            congested.push(pair);
        } else {
            free.push(pair);
        }
    }
    let (free_coeffs, congested_coeffs, fallback_regime) = match (free.is_empty(), congested.is_empty()) {
        (false, false) => (fit_regime(&free)?, fit_regime(&congested)?, None),
        (false, true) => {
            let c = fit_regime(&free)?;
            (c, c, Some(Regime::Congested))
        }
        (true, false) => {
            let c = fit_regime(&congested)?;
            (c, c, Some(Regime::Free))
        }
        (true, true) => unreachable!("a nonempty set fills at least one regime"),
    };
    Ok(GlrModel { free: free_coeffs, congested: congested_coeffs, threshold, fallback_regime })
}

/// Refine a diagram with the global model: each cell picks its regime by
/// its own speed and applies that regime's maps to its query window.
/// Output is 2× the shape with halved cell spans, clamped to [0, 100].
pub fn glr_refine(low: &TSDiagram, model: &GlrModel) -> Result<TSDiagram> {
    low.expect_dense("global-model refinement input")?;
    let (rows, cols) = (low.rows(), low.cols());
    let (out_rows, out_cols) = (2 * rows, 2 * cols);
    let mut values = vec![0.0f64; out_rows * out_cols];
    for r in 0..rows {
        for c in 0..cols {
            let query = patches::query_patch(low, r, c);
            let pred = model.coeffs_for(low.value(r, c)).predict(&query);
            values[(2 * r) * out_cols + 2 * c] = pred[0].clamp(0.0, MAX_SPEED_KMH);
            values[(2 * r) * out_cols + 2 * c + 1] = pred[1].clamp(0.0, MAX_SPEED_KMH);
            values[(2 * r + 1) * out_cols + 2 * c] = pred[2].clamp(0.0, MAX_SPEED_KMH);
            values[(2 * r + 1) * out_cols + 2 * c + 1] = pred[3].clamp(0.0, MAX_SPEED_KMH);
        }
    }
    TSDiagram::from_values(out_rows, out_cols, values, low.cell_size().halved())
}

/// Apply [`glr_refine`] once per stage model — two stages realize 16×.
pub fn glr_refine_chained(low: &TSDiagram, models: &[GlrModel]) -> Result<TSDiagram> {
    if models.is_empty() {
        return Err(Error::Empty("global-model chain has no stages".into()));
    }
    let mut current = glr_refine(low, &models[0])?;
    for model in &models[1..] {
        current = glr_refine(&current, model)?;
    }
    Ok(current)
}

/// Distance used to rank neighbor-embedding candidates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NeDistance {
    /// Sum of absolute differences over the 9 window values.
    #[default]
    L1,
    /// Squared Euclidean distance (equivalent ranking to Euclidean).
    L2,
}

impl std::str::FromStr for NeDistance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(NeDistance::L1),
            "l2" => Ok(NeDistance::L2),
            other => Err(Error::InvalidArg(format!("unknown distance {other:?}; expected l1 or l2"))),
        }
    }
}

impl std::fmt::Display for NeDistance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NeDistance::L1 => "l1",
            NeDistance::L2 => "l2",
        })
    }
}

/// Neighbor-embedding settings.
#[derive(Clone, Copy, Debug)]
pub struct NeConfig {
    /// Neighbors per reconstruction; saturates at the sample-set size.
    pub k: usize,
    pub distance: NeDistance,
}

impl Default for NeConfig {
    fn default() -> Self {
        NeConfig { k: 5, distance: NeDistance::L1 }
    }
}

/// Relative size of the stabilizing diagonal added to the reconstruction
/// Gram matrix: `eps · trace(G) / k` (an absolute `1e-12` when the trace
/// is zero, i.e. the query equals every neighbor).
pub const NE_GRAM_EPS_REL: f64 = 1e-6;

/// Reconstruction weights of a query over its neighbors: minimize
/// ‖query − Σ wⱼ·neighborⱼ‖² subject to Σ wⱼ = 1, solved through the
/// regularized Gram system. Weights sum to 1 and may be negative.
pub fn ne_weights(query: &Patch3, neighbors: &[Patch3]) -> Result<Vec<f64>> {
    let k = neighbors.len();
    if k == 0 {
        return Err(Error::Empty("cannot compute reconstruction weights over zero neighbors".into()));
    }
    let diffs: Vec<[f64; 9]> = neighbors
        .iter()
        .map(|n| std::array::from_fn(|i| query.0[i] - n.0[i]))
        .collect();
    let mut gram = vec![0.0f64; k * k];
    for j in 0..k {
        for l in 0..k {
            let mut dot = 0.0;
            for i in 0..9 {
                dot += diffs[j][i] * diffs[l][i];
            }
            gram[j * k + l] = dot;
        }
    }
    let trace: f64 = (0..k).map(|j| gram[j * k + j]).sum();
    let reg = if trace > 0.0 { NE_GRAM_EPS_REL * trace / k as f64 } else { 1e-12 };
    for j in 0..k {
        gram[j * k + j] += reg;
    }
    let mut rhs = vec![vec![1.0f64; k]];
    linalg::solve_spd(&gram, k, &mut rhs).map_err(|p| Error::Singular {
        size: k,
        pivot_index: p.index,
        pivot_value: p.value,
        k,
    })?;
    let v = rhs.pop().expect("one right-hand side");
    let sum: f64 = v.iter().sum();
    debug_assert!(sum > 0.0, "Gram solve produced a non-positive weight total {sum}");
    Ok(v.into_iter().map(|x| x / sum).collect())
}

/// Indices of the k nearest sample patches under the configured distance,
/// ties broken by lower index.
fn ne_nearest(query: &Patch3, lows: impl ExactSizeIterator<Item = Patch3>, cfg: &NeConfig) -> Vec<usize> {
    let mut ranked: Vec<(f64, usize)> = lows
        .enumerate()
        .map(|(i, p)| {
            let d = match cfg.distance {
                NeDistance::L1 => query.cae(&p),
                NeDistance::L2 => query.0.iter().zip(&p.0).map(|(a, b)| (a - b) * (a - b)).sum(),
            };
            (d, i)
        })
        .collect();
    let k = cfg.k.min(ranked.len());
    let by_distance_then_index =
        |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < ranked.len() {
        ranked.select_nth_unstable_by(k - 1, by_distance_then_index);
        ranked.truncate(k);
    }
    ranked.sort_unstable_by(by_distance_then_index);
    ranked.into_iter().map(|(_, i)| i).collect()
}

fn check_ne_inputs(low: &TSDiagram, set_len: usize, set_cell: CellSize, cfg: &NeConfig) -> Result<()> {
    if cfg.k == 0 {
        return Err(Error::InvalidArg("neighbor count k must be at least 1".into()));
    }
    low.expect_dense("neighbor-embedding input")?;
    if set_len == 0 {
        return Err(Error::Empty("cannot refine with an empty sample set".into()));
    }
    if !low.cell_size().approx_eq(set_cell) {
        return Err(Error::Shape(format!(
            "input cells are {} but the training samples came from {} cells",
            low.cell_size(),
            set_cell
        )));
    }
    Ok(())
}

/// Neighbor-embedding 2× refinement: each cell's block is the
/// weight-transferred combination of its nearest training blocks.
pub fn ne_refine(low: &TSDiagram, set: &SampleSet, cfg: &NeConfig) -> Result<TSDiagram> {
    check_ne_inputs(low, set.len(), set.low_cell_size(), cfg)?;
    let (rows, cols) = (low.rows(), low.cols());
    let blocks: Vec<[f64; 4]> = (0..rows * cols)
        .into_par_iter()
        .map(|idx| {
            let (r, c) = (idx / cols, idx % cols);
            let query = patches::query_patch(low, r, c);
            let nearest = ne_nearest(&query, (0..set.len()).map(|i| *set.low_patch(i)), cfg);
            let lows: Vec<Patch3> = nearest.iter().map(|&i| *set.low_patch(i)).collect();
            let weights = ne_weights(&query, &lows).map_err(|e| e.at_cell(r, c))?;
            let mut block = [0.0f64; 4];
            for (w, &i) in weights.iter().zip(&nearest) {
                for m in 0..4 {
                    block[m] += w * set.high_patch(i).0[m];
                }
            }
            for v in &mut block {
                *v = v.clamp(0.0, MAX_SPEED_KMH);
            }
            Ok(block)
        })
        .collect::<Result<_>>()?;
    let (out_rows, out_cols) = (2 * rows, 2 * cols);
    let mut values = vec![0.0f64; out_rows * out_cols];
    for r in 0..rows {
        for c in 0..cols {
            let b = &blocks[r * cols + c];
            values[(2 * r) * out_cols + 2 * c] = b[0];
            values[(2 * r) * out_cols + 2 * c + 1] = b[1];
            values[(2 * r + 1) * out_cols + 2 * c] = b[2];
            values[(2 * r + 1) * out_cols + 2 * c + 1] = b[3];
        }
    }
    TSDiagram::from_values(out_rows, out_cols, values, low.cell_size().halved())
}

/// Training pairs for single-pass 16× neighbor embedding: 3×3 low windows
/// paired with the 4×4 high-resolution block covering the center cell, in
/// reading order.
#[derive(Clone, Debug)]
pub struct WideSampleSet {
    low: Vec<Patch3>,
    high: Vec<[f64; 16]>,
    low_cell: CellSize,
}

impl WideSampleSet {
    /// Extract samples from a pair where `high` has four times the rows
    /// and columns of `low` (and a quarter of each cell span).
    pub fn build(low: &TSDiagram, high: &TSDiagram) -> Result<WideSampleSet> {
        low.expect_dense("training sample extraction (low-resolution side)")?;
        high.expect_dense("training sample extraction (high-resolution side)")?;
        if high.rows() != 4 * low.rows() || high.cols() != 4 * low.cols() {
            return Err(Error::Shape(format!(
                "high-resolution diagram is {}×{}, expected {}×{} (four times the low-resolution shape)",
                high.rows(),
                high.cols(),
                4 * low.rows(),
                4 * low.cols()
            )));
        }
        if !high.cell_size().approx_eq(low.cell_size().halved().halved()) {
            return Err(Error::Shape(format!(
                "cell sizes disagree: low is {}, high is {} but should be {}",
                low.cell_size(),
                high.cell_size(),
                low.cell_size().halved().halved()
            )));
        }
        if low.rows() < 3 || low.cols() < 3 {
            return Err(Error::Empty(format!(
                "{}×{} low-resolution diagram has no interior 3×3 windows",
                low.rows(),
                low.cols()
            )));
        }
        let mut out = WideSampleSet { low: Vec::new(), high: Vec::new(), low_cell: low.cell_size() };
        for r in 1..low.rows() - 1 {
            for c in 1..low.cols() - 1 {
                out.low.push(patches::query_patch(low, r, c));
                out.high.push(std::array::from_fn(|i| high.value(4 * r + i / 4, 4 * c + i % 4)));
            }
        }
        Ok(out)
    }

    /// Fold another set into this one (same cell size required).
    pub fn append(&mut self, other: WideSampleSet) -> Result<()> {
        if !other.low_cell.approx_eq(self.low_cell) {
            return Err(Error::Shape(format!(
                "cannot merge sample sets with cell sizes {} and {}",
                self.low_cell, other.low_cell
            )));
        }
        self.low.extend(other.low);
        self.high.extend(other.high);
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

    pub fn high_block(&self, i: usize) -> &[f64; 16] {
        &self.high[i]
    }

    pub fn low_cell_size(&self) -> CellSize {
        self.low_cell
    }
}

/// Single-pass 16× neighbor embedding: like [`ne_refine`] but each cell
/// expands straight into its 4×4 block.
pub fn ne_refine_16(low: &TSDiagram, set: &WideSampleSet, cfg: &NeConfig) -> Result<TSDiagram> {
    check_ne_inputs(low, set.len(), set.low_cell_size(), cfg)?;
    let (rows, cols) = (low.rows(), low.cols());
    let blocks: Vec<[f64; 16]> = (0..rows * cols)
        .into_par_iter()
        .map(|idx| {
            let (r, c) = (idx / cols, idx % cols);
            let query = patches::query_patch(low, r, c);
            let nearest = ne_nearest(&query, (0..set.len()).map(|i| *set.low_patch(i)), cfg);
            let lows: Vec<Patch3> = nearest.iter().map(|&i| *set.low_patch(i)).collect();
            let weights = ne_weights(&query, &lows).map_err(|e| e.at_cell(r, c))?;
            let mut block = [0.0f64; 16];
            for (w, &i) in weights.iter().zip(&nearest) {
                for m in 0..16 {
                    block[m] += w * set.high_block(i)[m];
                }
            }
            for v in &mut block {
                *v = v.clamp(0.0, MAX_SPEED_KMH);
            }
            Ok(block)
        })
        .collect::<Result<_>>()?;
    let (out_rows, out_cols) = (4 * rows, 4 * cols);
    let mut values = vec![0.0f64; out_rows * out_cols];
    for r in 0..rows {
        for c in 0..cols {
            let b = &blocks[r * cols + c];
            for dr in 0..4 {
                for dc in 0..4 {
                    values[(4 * r + dr) * out_cols + 4 * c + dc] = b[dr * 4 + dc];
                }
            }
        }
    }
    TSDiagram::from_values(out_rows, out_cols, values, low.cell_size().halved().halved())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng as _;
    use rand_chacha::ChaCha8Rng;

    fn cell() -> CellSize {
        CellSize::new(60.0, 100.0).unwrap()
    }

    fn diagram(rows: usize, cols: usize, values: Vec<f64>, c: CellSize) -> TSDiagram {
        TSDiagram::from_values(rows, cols, values, c).unwrap()
    }

    /// Linear world: every high cell is the same fixed zero-intercept
    /// affine map of its low cell's query window.
    fn linear_world(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> (TSDiagram, TSDiagram) {
        let low_vals: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(10.0..90.0)).collect();
        let low = diagram(rows, cols, low_vals, cell());
        let maps: [[f64; 9]; 4] = [
            [0.0, 0.25, 0.0, 0.0, 0.5, 0.0, 0.0, 0.25, 0.0],
            [0.0, 0.0, 0.25, 0.0, 0.5, 0.25, 0.0, 0.0, 0.0],
            [0.1, 0.0, 0.0, 0.2, 0.5, 0.0, 0.2, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.0, 0.6, 0.2, 0.0, 0.0, 0.2],
        ];
        let mut high_vals = vec![0.0; 4 * rows * cols];
        let out_cols = 2 * cols;
        for r in 0..rows {
            for c in 0..cols {
                let q = patches::query_patch(&low, r, c);
                for (m, map) in maps.iter().enumerate() {
                    let v: f64 = map.iter().zip(&q.0).map(|(w, x)| w * x).sum();
                    let (dr, dc) = (m / 2, m % 2);
                    high_vals[(2 * r + dr) * out_cols + 2 * c + dc] = v;
                }
            }
        }
        let high = diagram(2 * rows, 2 * cols, high_vals, cell().halved());
        (low, high)
    }

    #[test]
    fn glr_recovers_an_exactly_linear_world() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let (low, high) = linear_world(&mut rng, 8, 8);
        let set = SampleSet::build(&low, &high).unwrap();
        let model = glr_train(&set, 30.0).unwrap();
        // Refining the training input reproduces the high diagram on the
        // interior-derived blocks.
        let out = glr_refine(&low, &model).unwrap();
        for r in 2..out.rows() - 2 {
            for c in 2..out.cols() - 2 {
                assert!(
                    (out.value(r, c) - high.value(r, c)).abs() < 1e-6,
                    "({r},{c}): {} vs {}",
                    out.value(r, c),
                    high.value(r, c)
                );
            }
        }
        // Zero-intercept fits scale: halving the inputs halves the output.
        let q = Patch3([40.0, 60.0, 30.0, 70.0, 50.0, 20.0, 80.0, 10.0, 55.0]);
        let half = Patch3(std::array::from_fn(|i| q.0[i] / 2.0));
        let full_pred = model.free.predict(&q);
        let half_pred = model.free.predict(&half);
        for m in 0..4 {
            assert!((half_pred[m] - full_pred[m] / 2.0).abs() < 1e-5);
        }
    }

    #[test]
    fn glr_falls_back_to_one_regime_when_the_other_is_empty() {
        let low = TSDiagram::filled(5, 5, 80.0, cell()).unwrap();
        let high = TSDiagram::filled(10, 10, 80.0, cell().halved()).unwrap();
        let set = SampleSet::build(&low, &high).unwrap();
        let model = glr_train(&set, 30.0).unwrap();
        assert_eq!(model.fallback_regime, Some(Regime::Congested));
        assert_eq!(model.free.rows, model.congested.rows);

        let jammed_low = TSDiagram::filled(5, 5, 10.0, cell()).unwrap();
        let jammed_high = TSDiagram::filled(10, 10, 10.0, cell().halved()).unwrap();
        let set = SampleSet::build(&jammed_low, &jammed_high).unwrap();
        let model = glr_train(&set, 30.0).unwrap();
        assert_eq!(model.fallback_regime, Some(Regime::Free));
    }

    #[test]
    fn glr_threshold_boundary_goes_to_the_free_regime() {
        let mut free = RegressionCoeffs { rows: [[0.0; 10]; 4] };
        let mut congested = RegressionCoeffs { rows: [[0.0; 10]; 4] };
        for m in 0..4 {
            free.rows[m][0] = 70.0;
            congested.rows[m][0] = 10.0;
        }
        let model = GlrModel { free, congested, threshold: 30.0, fallback_regime: None };
        let low = diagram(1, 2, vec![30.0, 29.999], cell());
        let out = glr_refine(&low, &model).unwrap();
        assert_eq!(out.value(0, 0), 70.0);
        assert_eq!(out.value(0, 2), 10.0);
        assert_eq!((out.rows(), out.cols()), (2, 4));
        assert_eq!(out.cell_size(), cell().halved());
    }

    #[test]
    fn glr_constant_world_stays_constant_and_chains_double_each_stage() {
        let low = TSDiagram::filled(5, 5, 50.0, cell()).unwrap();
        let high = TSDiagram::filled(10, 10, 50.0, cell().halved()).unwrap();
        let set = SampleSet::build(&low, &high).unwrap();
        let model = glr_train(&set, 30.0).unwrap();
        let out = glr_refine(&low, &model).unwrap();
        for &v in out.values() {
            assert!((v - 50.0).abs() < 1e-6);
        }

        let mid = TSDiagram::filled(10, 10, 50.0, cell().halved()).unwrap();
        let high2 = TSDiagram::filled(20, 20, 50.0, cell().halved().halved()).unwrap();
        let set2 = SampleSet::build(&mid, &high2).unwrap();
        let model2 = glr_train(&set2, 30.0).unwrap();
        let chained = glr_refine_chained(&low, &[model, model2]).unwrap();
        assert_eq!((chained.rows(), chained.cols()), (20, 20));
        assert!(glr_refine_chained(&low, &[]).is_err());
    }

    #[test]
    fn ne_weight_of_an_exact_match_is_one() {
        let q = Patch3([10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0]);
        let w = ne_weights(&q, &[q]).unwrap();
        assert_eq!(w, vec![1.0]);
    }

    #[test]
    fn symmetric_neighbors_split_the_weight_evenly() {
        let q = Patch3([50.0; 9]);
        let delta = [1.0, -2.0, 3.0, -1.0, 2.0, -3.0, 1.5, -0.5, 2.5];
        let plus = Patch3(std::array::from_fn(|i| q.0[i] + delta[i]));
        let minus = Patch3(std::array::from_fn(|i| q.0[i] - delta[i]));
        let w = ne_weights(&q, &[plus, minus]).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-12);
        assert!((w[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ne_recalls_training_blocks_on_the_training_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let low_vals: Vec<f64> = (0..64).map(|_| rng.random_range(5.0..95.0)).collect();
        let high_vals: Vec<f64> = (0..256).map(|_| rng.random_range(5.0..95.0)).collect();
        let low = diagram(8, 8, low_vals, cell());
        let high = diagram(16, 16, high_vals, cell().halved());
        let set = SampleSet::build(&low, &high).unwrap();
        let cfg = NeConfig { k: 1, ..NeConfig::default() };
        let out = ne_refine(&low, &set, &cfg).unwrap();
        for r in 1..7 {
            for c in 1..7 {
                for (dr, dc) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    assert_eq!(out.value(2 * r + dr, 2 * c + dc), high.value(2 * r + dr, 2 * c + dc));
                }
            }
        }
    }

    #[test]
    fn ne_constant_world_stays_constant_with_any_k() {
        let low = TSDiagram::filled(6, 6, 50.0, cell()).unwrap();
        let high = TSDiagram::filled(12, 12, 50.0, cell().halved()).unwrap();
        let set = SampleSet::build(&low, &high).unwrap();
        for k in [1, 3, 16, 100] {
            let cfg = NeConfig { k, ..NeConfig::default() };
            let out = ne_refine(&low, &set, &cfg).unwrap();
            for &v in out.values() {
                assert!((v - 50.0).abs() < 1e-9, "k={k}: {v}");
            }
        }
    }

    #[test]
    fn ne_distance_options_change_the_ranking_not_the_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let low_vals: Vec<f64> = (0..49).map(|_| rng.random_range(5.0..95.0)).collect();
        let high_vals: Vec<f64> = (0..196).map(|_| rng.random_range(5.0..95.0)).collect();
        let low = diagram(7, 7, low_vals, cell());
        let high = diagram(14, 14, high_vals, cell().halved());
        let set = SampleSet::build(&low, &high).unwrap();
        for distance in [NeDistance::L1, NeDistance::L2] {
            let cfg = NeConfig { k: 4, distance };
            let out = ne_refine(&low, &set, &cfg).unwrap();
            assert_eq!((out.rows(), out.cols()), (14, 14));
            assert!(out.values().iter().all(|v| (0.0..=100.0).contains(v)));
        }
        assert_eq!("l1".parse::<NeDistance>().unwrap(), NeDistance::L1);
        assert_eq!("l2".parse::<NeDistance>().unwrap(), NeDistance::L2);
        assert!("cosine".parse::<NeDistance>().is_err());
    }

    #[test]
    fn wide_sample_sets_pair_windows_with_4x4_blocks() {
        let low_vals: Vec<f64> = (0..9).map(f64::from).collect();
        let high_vals: Vec<f64> = (0..144).map(|i| f64::from(i % 101)).collect();
        let low = diagram(3, 3, low_vals, cell());
        let high = diagram(12, 12, high_vals, cell().halved().halved());
        let set = WideSampleSet::build(&low, &high).unwrap();
        assert_eq!(set.len(), 1);
        // Central block: rows 4–7, cols 4–7 of the 12-wide diagram.
        let expect: [f64; 16] = std::array::from_fn(|i| high.value(4 + i / 4, 4 + i % 4));
        assert_eq!(set.high_block(0), &expect);

        let wrong = diagram(6, 6, vec![1.0; 36], cell().halved());
        assert!(WideSampleSet::build(&low, &wrong).is_err());
    }

    #[test]
    fn single_pass_16x_quadruples_the_shape_and_recalls_training_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let low_vals: Vec<f64> = (0..36).map(|_| rng.random_range(5.0..95.0)).collect();
        let high_vals: Vec<f64> = (0..576).map(|_| rng.random_range(5.0..95.0)).collect();
        let low = diagram(6, 6, low_vals, cell());
        let high = diagram(24, 24, high_vals, cell().halved().halved());
        let set = WideSampleSet::build(&low, &high).unwrap();
        let cfg = NeConfig { k: 1, ..NeConfig::default() };
        let out = ne_refine_16(&low, &set, &cfg).unwrap();
        assert_eq!((out.rows(), out.cols()), (24, 24));
        assert_eq!(out.cell_size(), cell().halved().halved());
        for r in 1..5 {
            for c in 1..5 {
                for dr in 0..4 {
                    for dc in 0..4 {
                        assert_eq!(out.value(4 * r + dr, 4 * c + dc), high.value(4 * r + dr, 4 * c + dc));
                    }
                }
            }
        }
    }

    #[test]
    fn ne_refine_is_identical_at_any_worker_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let low_vals: Vec<f64> = (0..49).map(|_| rng.random_range(5.0..95.0)).collect();
        let high_vals: Vec<f64> = (0..196).map(|_| rng.random_range(5.0..95.0)).collect();
        let low = diagram(7, 7, low_vals, cell());
        let high = diagram(14, 14, high_vals, cell().halved());
        let set = SampleSet::build(&low, &high).unwrap();
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| ne_refine(&low, &set, &NeConfig::default()).unwrap())
        };
        let bits = |d: &TSDiagram| d.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&run(1)), bits(&run(3)));
    }

    proptest! {
        #[test]
        fn ne_weights_always_sum_to_one(seed in 0u64..400, k in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = Patch3(std::array::from_fn(|_| rng.random_range(0.0..100.0)));
            let neighbors: Vec<Patch3> = (0..k)
                .map(|_| Patch3(std::array::from_fn(|_| rng.random_range(0.0..100.0))))
                .collect();
            let w = ne_weights(&q, &neighbors).unwrap();
            let total: f64 = w.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-10, "sum {total}");
        }
    }
}
