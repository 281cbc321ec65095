//! Robustness harness: additive Gaussian noise, random missingness, and
//! nine-cell mean imputation.
//!
//! All randomness is seed-driven (ChaCha8) so every perturbation is
//! reproducible bit for bit, independent of worker count or platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;

use crate::error::{Error, Result};
use crate::tsgrid::{TSDiagram, MAX_SPEED_KMH};

/// Add independent N(0, sd²) noise to every cell, clamping the result to
/// the valid speed range. The diagram must be dense. `sd = 0` returns the
/// input unchanged.
pub fn add_noise(diagram: &TSDiagram, sd: f64, seed: u64) -> Result<TSDiagram> {
    if !(sd >= 0.0) || !sd.is_finite() {
        return Err(Error::InvalidArg(format!("noise standard deviation must be ≥ 0, got {sd}")));
    }
    diagram.expect_dense("noise injection")?;
    if sd == 0.0 {
        return Ok(diagram.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = rand_distr::Normal::new(0.0, sd).expect("sd validated above");
    let values = diagram
        .values()
        .iter()
        .map(|&v| (v + normal.sample(&mut rng)).clamp(0.0, MAX_SPEED_KMH))
        .collect();
    diagram.with_values(values)
}

/// Mask exactly `round(rate · cell_count)` uniformly chosen cells as
/// missing. The diagram must be dense and `rate` in `[0, 1)`.
pub fn drop_random(diagram: &TSDiagram, rate: f64, seed: u64) -> Result<TSDiagram> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArg(format!("missing rate must be in [0, 1), got {rate}")));
    }
    diagram.expect_dense("random cell removal")?;
    let total = diagram.rows() * diagram.cols();
    let count = (rate * total as f64).round() as usize;
    if count == 0 {
        return Ok(diagram.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = diagram.values().to_vec();
    for idx in rand::seq::index::sample(&mut rng, total, count) {
        values[idx] = f64::NAN;
    }
    diagram.with_values(values)
}

/// Fill every missing cell with the mean of the observed cells in its 3×3
/// window (edge windows truncate to the diagram). Passes are synchronous —
/// each pass reads only the previous pass's state — and repeat until no
/// missing cells remain, so clustered gaps fill inward. Errors when the
/// diagram has no observed cell at all.
pub fn impute_nine_cell(diagram: &TSDiagram) -> Result<TSDiagram> {
    if diagram.is_dense() {
        return Ok(diagram.clone());
    }
    if diagram.missing_count() == diagram.rows() * diagram.cols() {
        return Err(Error::Empty("cannot impute a diagram with no observed cells".into()));
    }
    let (rows, cols) = (diagram.rows(), diagram.cols());
    let mut current = diagram.values().to_vec();
    let mut remaining = diagram.missing_count();
    while remaining > 0 {
        let mut next = current.clone();
        let mut filled = 0usize;
        for r in 0..rows {
            for c in 0..cols {
                if !current[r * cols + c].is_nan() {
                    continue;
                }
                let mut sum = 0.0;
                let mut n = 0usize;
                for nr in r.saturating_sub(1)..=(r + 1).min(rows - 1) {
                    for nc in c.saturating_sub(1)..=(c + 1).min(cols - 1) {
                        let v = current[nr * cols + nc];
                        if !v.is_nan() {
                            sum += v;
                            n += 1;
                        }
                    }
                }
                if n > 0 {
                    next[r * cols + c] = sum / n as f64;
                    filled += 1;
                }
            }
        }
        // With at least one observed cell the mask shrinks inward every
        // pass, so a stalled pass means a logic error, not bad input.
        assert!(filled > 0, "imputation made no progress with {remaining} cells missing");
        remaining -= filled;
        current = next;
    }
    diagram.with_values(current)
}
