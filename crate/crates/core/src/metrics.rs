//! Evaluation metrics comparing a refined diagram against the true
//! high-resolution one.
//!
//! All metrics take the ground truth first and the prediction second, and
//! require the two diagrams to be dense and of equal shape:
//!
//! * **MAE** — mean absolute cell error, km/h.
//! * **MAPE** — mean absolute relative error; cells whose true speed is
//!   within `1e-6` of zero are excluded (their count is reported).
//! * **CMJS** — Jaccard similarity of the congestion masks, where a cell is
//!   congested when its speed is strictly below a threshold (30 km/h by
//!   default). Two diagrams with no congestion anywhere score 1.
//! * **SSIM** — windowed structural similarity with the standard constants
//!   `C1 = (0.01·100)²` and `C2 = (0.03·100)²` for the 0–100 km/h range,
//!   a uniform 7×7 window (shrunk to the shorter diagram side when that is
//!   below 7), population statistics, and the mean taken over every window
//!   that lies fully inside the diagram.
//! * **GMSD** — gradient-magnitude similarity deviation: Sobel gradient
//!   magnitudes with edge-replicated borders, per-cell similarity with
//!   stabilizer `1e-8`, and the population standard deviation of the
//!   similarity map.
//! * **R²** — coefficient of determination; `None` when the truth is
//!   (numerically) constant so the score is undefined.

use crate::error::{Error, Result};
use crate::patches;
use crate::tsgrid::TSDiagram;

/// Speed below which a cell counts as congested, km/h.
pub const CONGESTION_THRESHOLD_KMH: f64 = 30.0;

/// True speeds with magnitude at or below this are left out of MAPE.
pub const MAPE_EXCLUSION_EPS: f64 = 1e-6;

fn check_comparable(truth: &TSDiagram, pred: &TSDiagram) -> Result<()> {
    truth.expect_dense("metric evaluation (truth)")?;
    pred.expect_dense("metric evaluation (prediction)")?;
    if truth.rows() != pred.rows() || truth.cols() != pred.cols() {
        return Err(Error::Shape(format!(
            "cannot compare a {}×{} truth with a {}×{} prediction",
            truth.rows(),
            truth.cols(),
            pred.rows(),
            pred.cols()
        )));
    }
    Ok(())
}

/// Mean absolute error in km/h.
pub fn mae(truth: &TSDiagram, pred: &TSDiagram) -> Result<f64> {
    check_comparable(truth, pred)?;
    let sum: f64 = truth.values().iter().zip(pred.values()).map(|(y, p)| (y - p).abs()).sum();
    Ok(sum / truth.values().len() as f64)
}

/// Mean absolute percentage error (as a fraction, not ×100) and the number
/// of cells excluded for a near-zero true speed. Errors out when every cell
/// is excluded.
pub fn mape(truth: &TSDiagram, pred: &TSDiagram) -> Result<(f64, usize)> {
    check_comparable(truth, pred)?;
    let mut sum = 0.0;
    let mut kept = 0usize;
    for (y, p) in truth.values().iter().zip(pred.values()) {
        if y.abs() > MAPE_EXCLUSION_EPS {
            sum += ((y - p) / y).abs();
            kept += 1;
        }
    }
    if kept == 0 {
        return Err(Error::Empty("every cell has a near-zero true speed, so the relative error is undefined".into()));
    }
    Ok((sum / kept as f64, truth.values().len() - kept))
}

/// Jaccard similarity of the two congestion masks (speed strictly below
/// `threshold`). When neither diagram has any congested cell the masks are
/// identical, so the score is 1.
pub fn cmjs(truth: &TSDiagram, pred: &TSDiagram, threshold: f64) -> Result<f64> {
    check_comparable(truth, pred)?;
    let mut intersection = 0usize;
    let mut union = 0usize;
    for (y, p) in truth.values().iter().zip(pred.values()) {
        let (a, b) = (*y < threshold, *p < threshold);
        if a && b {
            intersection += 1;
        }
        if a || b {
            union += 1;
        }
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(intersection as f64 / union as f64)
}

/// Mean windowed structural similarity.
pub fn ssim(truth: &TSDiagram, pred: &TSDiagram) -> Result<f64> {
    const C1: f64 = 1.0; // (0.01 · 100)²
    const C2: f64 = 9.0; // (0.03 · 100)²
    check_comparable(truth, pred)?;
    let (rows, cols) = (truth.rows(), truth.cols());
    let w = 7.min(rows).min(cols);
    let n = (w * w) as f64;
    let mut sum = 0.0;
    let mut windows = 0usize;
    for r in 0..=rows - w {
        for c in 0..=cols - w {
            let (mut sy, mut sp) = (0.0, 0.0);
            for wr in 0..w {
                for wc in 0..w {
                    sy += truth.value(r + wr, c + wc);
                    sp += pred.value(r + wr, c + wc);
                }
            }
            let (mu_y, mu_p) = (sy / n, sp / n);
            let (mut var_y, mut var_p, mut cov) = (0.0, 0.0, 0.0);
            for wr in 0..w {
                for wc in 0..w {
                    let dy = truth.value(r + wr, c + wc) - mu_y;
                    let dp = pred.value(r + wr, c + wc) - mu_p;
                    var_y += dy * dy;
                    var_p += dp * dp;
                    cov += dy * dp;
                }
            }
            var_y /= n;
            var_p /= n;
            cov /= n;
            let num = (2.0 * mu_y * mu_p + C1) * (2.0 * cov + C2);
            let den = (mu_y * mu_y + mu_p * mu_p + C1) * (var_y + var_p + C2);
            sum += num / den;
            windows += 1;
        }
    }
    Ok(sum / windows as f64)
}

/// Sobel gradient magnitude of every cell, with the border handled by edge
/// replication. The kernels are applied as correlations; the magnitude is
/// unaffected by the convolution/correlation flip.
pub fn gradient_magnitude(diagram: &TSDiagram) -> Result<Vec<f64>> {
    diagram.expect_dense("gradient computation")?;
    let mut out = Vec::with_capacity(diagram.rows() * diagram.cols());
    for r in 0..diagram.rows() {
        for c in 0..diagram.cols() {
            let w = patches::window(diagram, r, c, Default::default());
            let gx = (w[2] + 2.0 * w[5] + w[8]) - (w[0] + 2.0 * w[3] + w[6]);
            let gy = (w[6] + 2.0 * w[7] + w[8]) - (w[0] + 2.0 * w[1] + w[2]);
            out.push((gx * gx + gy * gy).sqrt());
        }
    }
    Ok(out)
}

/// Gradient-magnitude similarity deviation; lower is better, 0 means the
/// two gradient fields agree everywhere.
pub fn gmsd(truth: &TSDiagram, pred: &TSDiagram) -> Result<f64> {
    const C: f64 = 1e-8;
    check_comparable(truth, pred)?;
    let gy = gradient_magnitude(truth)?;
    let gp = gradient_magnitude(pred)?;
    let gms: Vec<f64> = gy
        .iter()
        .zip(&gp)
        .map(|(a, b)| (2.0 * a * b + C) / (a * a + b * b + C))
        .collect();
    let n = gms.len() as f64;
    let mean = gms.iter().sum::<f64>() / n;
    let var = gms.iter().map(|g| (g - mean) * (g - mean)).sum::<f64>() / n;
    Ok(var.sqrt())
}

/// Coefficient of determination of the prediction against the truth.
/// `None` when the truth is numerically constant (no variance to explain).
pub fn r_squared(truth: &TSDiagram, pred: &TSDiagram) -> Result<Option<f64>> {
    check_comparable(truth, pred)?;
    let n = truth.values().len() as f64;
    let mean = truth.values().iter().sum::<f64>() / n;
    let mut sse = 0.0;
    let mut sst = 0.0;
    let mut scale = 0.0;
    for (y, p) in truth.values().iter().zip(pred.values()) {
        sse += (y - p) * (y - p);
        sst += (y - mean) * (y - mean);
        scale += y * y;
    }
    if sst <= 1e-14 * scale {
        return Ok(None);
    }
    Ok(Some(1.0 - sse / sst))
}

/// Every metric for one truth/prediction pair.
#[derive(Clone, Copy, Debug)]
pub struct MetricsReport {
    pub mae: f64,
    /// As a fraction; multiply by 100 for percent.
    pub mape: f64,
    /// Cells left out of MAPE for a near-zero true speed.
    pub mape_excluded_cells: usize,
    pub cmjs: f64,
    pub ssim: f64,
    pub gmsd: f64,
    pub r_squared: Option<f64>,
}

impl MetricsReport {
    /// Evaluate with the default congestion threshold.
    pub fn compute(truth: &TSDiagram, pred: &TSDiagram) -> Result<Self> {
        Self::compute_with_threshold(truth, pred, CONGESTION_THRESHOLD_KMH)
    }

    pub fn compute_with_threshold(truth: &TSDiagram, pred: &TSDiagram, congestion_threshold: f64) -> Result<Self> {
        let (mape, mape_excluded_cells) = mape(truth, pred)?;
        Ok(MetricsReport {
            mae: mae(truth, pred)?,
            mape,
            mape_excluded_cells,
            cmjs: cmjs(truth, pred, congestion_threshold)?,
            ssim: ssim(truth, pred)?,
            gmsd: gmsd(truth, pred)?,
            r_squared: r_squared(truth, pred)?,
        })
    }
}
