//! Parameter sweeps: trace refinement accuracy while one knob varies.
//!
//! Each `[sweep]` section produces `sweep_<kind>.csv` with one row per
//! swept value (value, MAE, MAPE, R²) plus `sweep_<kind>_timings.csv`
//! with the wall clock per point, kept separate so the accuracy files are
//! byte-identical across reruns. All sweeps refine with the adaptive
//! method at 4×; metrics are averaged over the `[test]` cases (R² is
//! left blank if any case has an undefined value).
//!
//! Per-kind behavior:
//! - `k`: neighborhood size takes each value; everything else fixed.
//! - `train_size`: the merged sample set is subsampled to the given
//!   fraction, drawn uniformly with the run seed (fresh per point, so a
//!   smaller fraction is not necessarily a subset of a larger one).
//! - `noise`: Gaussian noise of the given σ perturbs each test input
//!   (seed = run seed + test index); the σ=0 row equals an unperturbed
//!   run exactly.
//! - `missing`: the given fraction of each test input is dropped
//!   (same seeding), re-imputed, then refined.

use std::path::Path;
use std::time::Instant;

use anyhow::{ensure, Context, Result};
use rand::SeedableRng as _;
use rand_chacha::ChaCha8Rng;
use tsr_core::metrics::MetricsReport;
use tsr_core::nalr::{self, NalrConfig};
use tsr_core::perturb;
use tsr_core::tsgrid::{load_matrix, TSDiagram};

use crate::config::{ExperimentConfig, SweepKind};
use crate::experiment::{load_training, RunReport, TrainedStages};

/// Run every `[sweep]` section of the config.
pub fn run_sweep(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunReport> {
    ensure!(!cfg.sweeps.is_empty(), "config has no [sweep] section");
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let stages = load_training(cfg)?;
    let mut tests: Vec<(TSDiagram, TSDiagram)> = Vec::new();
    for (ti, case) in cfg.test.iter().enumerate() {
        let low = load_matrix(&case.low).with_context(|| format!("test {ti} low input"))?;
        let truth = load_matrix(&case.truth).with_context(|| format!("test {ti} ground truth"))?;
        tests.push((low, truth));
    }

    let mut completed = 0usize;
    let mut failed = 0usize;
    for spec in &cfg.sweeps {
        let mut rows = String::from("value,mae,mape,r_squared\n");
        let mut times = String::from("value,milliseconds\n");
        for &value in &spec.values {
            match run_point(spec.kind, value, cfg, &stages, &tests) {
                Ok(point) => {
                    let r2 = point.r_squared.map(|v| format!("{v:.9}")).unwrap_or_default();
                    rows.push_str(&format!("{value},{:.9},{:.9},{r2}\n", point.mae, point.mape));
                    times.push_str(&format!("{value},{:.3}\n", point.elapsed_ms));
                    completed += 1;
                }
                Err(e) => {
                    eprintln!("sweep {} at value {value}: {e:#}", spec.kind);
                    failed += 1;
                }
            }
        }
        let data_path = out_dir.join(format!("sweep_{}.csv", spec.kind));
        std::fs::write(&data_path, rows).with_context(|| format!("writing {}", data_path.display()))?;
        let times_path = out_dir.join(format!("sweep_{}_timings.csv", spec.kind));
        std::fs::write(&times_path, times).with_context(|| format!("writing {}", times_path.display()))?;
    }
    Ok(RunReport { completed, failed })
}

struct SweepPoint {
    mae: f64,
    mape: f64,
    r_squared: Option<f64>,
    elapsed_ms: f64,
}

fn run_point(
    kind: SweepKind,
    value: f64,
    cfg: &ExperimentConfig,
    stages: &TrainedStages,
    tests: &[(TSDiagram, TSDiagram)],
) -> Result<SweepPoint> {
    let base_cfg = cfg.nalr_config();
    let started = Instant::now();

    // Point-specific training set and neighborhood size.
    let (ncfg, subsampled);
    let mut set = &stages.stage1;
    match kind {
        SweepKind::K => {
            ncfg = NalrConfig { k: value as usize, ..base_cfg };
        }
        SweepKind::TrainSize => {
            ncfg = base_cfg;
            let count = ((value * stages.stage1.len() as f64).round() as usize).max(1);
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            subsampled = stages.stage1.subsample(count, &mut rng)?;
            set = &subsampled;
        }
        SweepKind::Noise | SweepKind::Missing => {
            ncfg = base_cfg;
        }
    }

    let mut reports: Vec<MetricsReport> = Vec::new();
    for (ti, (low, truth)) in tests.iter().enumerate() {
        let point_seed = cfg.seed.wrapping_add(ti as u64);
        let input = match kind {
            SweepKind::Noise => perturb::add_noise(low, value, point_seed)?,
            SweepKind::Missing => {
                let dropped = perturb::drop_random(low, value, point_seed)?;
                perturb::impute_nine_cell(&dropped)?
            }
            SweepKind::K | SweepKind::TrainSize => low.clone(),
        };
        let refined = nalr::refine(&input, set, &ncfg)?;
        reports.push(MetricsReport::compute_with_threshold(truth, &refined, cfg.congestion_threshold)?);
    }
    let elapsed_ms = started.elapsed().as_secs_f64() * 1e3;

    let n = reports.len() as f64;
    let mae = reports.iter().map(|r| r.mae).sum::<f64>() / n;
    let mape = reports.iter().map(|r| r.mape).sum::<f64>() / n;
    let r_squared = reports
        .iter()
        .map(|r| r.r_squared)
        .collect::<Option<Vec<f64>>>()
        .map(|vals| vals.iter().sum::<f64>() / n);
    Ok(SweepPoint { mae, mape, r_squared, elapsed_ms })
}
