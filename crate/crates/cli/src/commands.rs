//! One handler per subcommand. Each returns the process exit code:
//! 0 for full success, 2 when some rows or input records were skipped.
//! Hard errors bubble up as `Err` and exit with code 1.

use std::path::{Path, PathBuf};

use anyhow::{ensure, Context, Result};
use clap::Args;
use tsr_core::baselines::{ne_refine, ne_refine_16, NeConfig, NeDistance};
use tsr_core::ingest::{self, Extent, SynthScenario};
use tsr_core::metrics::MetricsReport;
use tsr_core::nalr::{self, NalrConfig};
use tsr_core::patches::{SampleSet, SearchShape};
use tsr_core::perturb;
use tsr_core::tsgrid::{load_matrix, save_matrix, CellSize, TSDiagram};
use tsr_core::baselines::{glr_refine, glr_train, WideSampleSet};

use crate::config::{parse_config, Factor, Method};
use crate::experiment::run_experiment;
use crate::sweep::run_sweep;

const CONFIG_FORMAT_HELP: &str = "\
CONFIG FORMAT:
    A flat `key = value` file with repeatable [train], [test], and [sweep]
    sections and # line comments. Relative paths resolve against the config
    file's directory. Top-level keys (defaults in parentheses):

      seed (0)                 methods (nalr,glr,ne)      factors (4)
      k (100)                  search_shape (3x3)         ridge_lambda (1e-8)
      clamp_output (true)      glr_threshold (30)         ne_k (5)
      ne_distance (l1)         congestion_threshold (30)

    [train] sections take `low` and `high` matrix paths, plus optional
    `low2`/`high2` second-stage pairs that unlock 16x rows. [test] sections
    take `low`, `high`, and optionally `high16`. [sweep] sections take
    `kind` (k | train_size | noise | missing) and `values` (a comma list or
    an inclusive start:end:step range).";

#[derive(Args)]
pub struct RasterizeArgs {
    /// Trajectory CSV with header vehicle_id,time_s,position_m,speed_kmh.
    #[arg(long)]
    pub input: PathBuf,
    /// Where to write the diagram matrix (a .meta sidecar is added).
    #[arg(long)]
    pub output: PathBuf,
    /// Covered time span in seconds.
    #[arg(long)]
    pub extent_time: f64,
    /// Covered road length in meters.
    #[arg(long)]
    pub extent_space: f64,
    /// Cell duration in seconds.
    #[arg(long)]
    pub cell_time: f64,
    /// Cell length in meters.
    #[arg(long)]
    pub cell_space: f64,
}

pub fn rasterize(a: &RasterizeArgs) -> Result<i32> {
    let cell = CellSize::new(a.cell_time, a.cell_space)?;
    let extent = Extent::new(a.extent_time, a.extent_space)?;
    let load = ingest::load_trajectories(&a.input)?;
    let outcome = ingest::rasterize(&load.points, cell, extent)?;
    save_matrix(&outcome.diagram, &a.output)?;
    println!(
        "{} points in, {} malformed rows skipped, {} points outside the extent, \
         {} speeds clamped, {} empty cells imputed",
        load.points.len(),
        load.skipped_rows,
        outcome.dropped_points,
        outcome.clamped_speeds,
        outcome.empty_cells
    );
    println!(
        "wrote {} ({} rows x {} columns)",
        a.output.display(),
        outcome.diagram.rows(),
        outcome.diagram.cols()
    );
    Ok(if load.skipped_rows > 0 { 2 } else { 0 })
}

fn parse_wave(s: &str) -> Result<(f64, f64), String> {
    let (t, x) = s.split_once(',').ok_or("expected TIME_S,POSITION_M")?;
    let t: f64 = t.trim().parse().map_err(|e| format!("origin time: {e}"))?;
    let x: f64 = x.trim().parse().map_err(|e| format!("origin position: {e}"))?;
    Ok((t, x))
}

#[derive(Args)]
pub struct SynthArgs {
    /// Where to write the generated diagram.
    #[arg(long)]
    pub output: PathBuf,
    /// Speed away from any wave, km/h.
    #[arg(long, default_value_t = 95.0)]
    pub free_speed: f64,
    /// Speed in a wave core, km/h.
    #[arg(long, default_value_t = 10.0)]
    pub jam_speed: f64,
    /// Wave origin as TIME_S,POSITION_M; repeat for several waves.
    #[arg(long = "wave", value_parser = parse_wave)]
    pub waves: Vec<(f64, f64)>,
    /// Wave-front propagation speed in m/s (negative = upstream).
    #[arg(long, default_value_t = -4.5, allow_negative_numbers = true)]
    pub wave_slope: f64,
    /// Full temporal width of a wave band in seconds.
    #[arg(long, default_value_t = 240.0)]
    pub wave_width: f64,
    /// Gaussian speed noise σ in km/h (0 = clean field).
    #[arg(long, default_value_t = 0.0)]
    pub noise_sd: f64,
    #[arg(long)]
    pub extent_time: f64,
    #[arg(long)]
    pub extent_space: f64,
    #[arg(long)]
    pub cell_time: f64,
    #[arg(long)]
    pub cell_space: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write a block-mean downsample of the diagram here, giving a
    /// ready-made (low, high) training or test pair.
    #[arg(long)]
    pub low_output: Option<PathBuf>,
    /// Per-axis downsampling factor for --low-output.
    #[arg(long, default_value_t = 2)]
    pub low_factor: usize,
}

pub fn synth(a: &SynthArgs) -> Result<i32> {
    let scenario = SynthScenario {
        free_speed: a.free_speed,
        jam_speed: a.jam_speed,
        wave_origins: a.waves.clone(),
        wave_slope_mps: a.wave_slope,
        wave_width_s: a.wave_width,
        noise_sd: a.noise_sd,
    };
    let cell = CellSize::new(a.cell_time, a.cell_space)?;
    let extent = Extent::new(a.extent_time, a.extent_space)?;
    let diagram = ingest::generate_synthetic(&scenario, cell, extent, a.seed)?;
    save_matrix(&diagram, &a.output)?;
    println!("wrote {} ({} rows x {} columns)", a.output.display(), diagram.rows(), diagram.cols());
    if let Some(low_path) = &a.low_output {
        let low = diagram.downsample_mean(a.low_factor)?;
        save_matrix(&low, low_path)?;
        println!("wrote {} ({} rows x {} columns)", low_path.display(), low.rows(), low.cols());
    }
    Ok(0)
}

#[derive(Args)]
pub struct RefineArgs {
    /// Low-resolution input matrix.
    #[arg(long)]
    pub input: PathBuf,
    /// Where to write the refined matrix.
    #[arg(long)]
    pub output: PathBuf,
    /// Refinement method.
    #[arg(long)]
    pub method: Method,
    /// Upscaling factor: 4 (one pass) or 16 (two passes; single-pass for ne).
    #[arg(long, default_value = "4")]
    pub factor: Factor,
    /// Training pair LOW:HIGH (repeatable). For `--method ne --factor 16`
    /// the HIGH side must be the 4x diagram.
    #[arg(long = "train", value_name = "LOW:HIGH")]
    pub train: Vec<String>,
    /// Second-stage training pair LOW2:HIGH2 (repeatable), required for
    /// nalr/glr at 16x.
    #[arg(long = "train2", value_name = "LOW2:HIGH2")]
    pub train2: Vec<String>,
    /// Neighborhood size.
    #[arg(long, default_value_t = 100)]
    pub k: usize,
    /// Search window shape (3x3, 3x1, 1x3, 5x5, 5x1, or 1x5).
    #[arg(long, default_value = "3x3")]
    pub search_shape: SearchShape,
    /// Ridge penalty on the slope coefficients.
    #[arg(long, default_value_t = 1e-8)]
    pub ridge_lambda: f64,
    /// Emit raw regression outputs instead of clamping into [0, 100].
    #[arg(long)]
    pub no_clamp: bool,
    /// Speed splitting the two global-regression regimes, km/h.
    #[arg(long, default_value_t = 30.0)]
    pub glr_threshold: f64,
    /// Neighbor count for the embedding method.
    #[arg(long, default_value_t = 5)]
    pub ne_k: usize,
    /// Distance ranking the embedding neighbors.
    #[arg(long, default_value = "l1")]
    pub ne_distance: NeDistance,
}

fn load_pairs(specs: &[String], what: &str) -> Result<Vec<(TSDiagram, TSDiagram)>> {
    let mut out = Vec::new();
    for spec in specs {
        let (low, high) = spec
            .split_once(':')
            .with_context(|| format!("{what} {spec:?} is not of the form LOW:HIGH"))?;
        let low = load_matrix(Path::new(low)).with_context(|| format!("{what} low side"))?;
        let high = load_matrix(Path::new(high)).with_context(|| format!("{what} high side"))?;
        out.push((low, high));
    }
    Ok(out)
}

fn build_set(pairs: &[(TSDiagram, TSDiagram)], shape: SearchShape, what: &str) -> Result<SampleSet> {
    let mut merged: Option<SampleSet> = None;
    for (low, high) in pairs {
        let set = SampleSet::build_with_shape(low, high, shape).context(what.to_string())?;
        match &mut merged {
            Some(m) => m.append(set).context(what.to_string())?,
            None => merged = Some(set),
        }
    }
    merged.with_context(|| format!("no {what} given; pass at least one --train pair"))
}

pub fn refine(a: &RefineArgs) -> Result<i32> {
    let low = load_matrix(&a.input)?;
    ensure!(
        a.method != Method::Nn || (a.train.is_empty() && a.train2.is_empty()),
        "method nn takes no training pairs"
    );
    if a.method != Method::Nn {
        ensure!(!a.train.is_empty(), "--method {} needs at least one --train pair", a.method);
    }
    let ncfg = NalrConfig {
        k: a.k,
        search_shape: a.search_shape,
        ridge_lambda: a.ridge_lambda,
        clamp_output: !a.no_clamp,
    };
    let necfg = NeConfig { k: a.ne_k, distance: a.ne_distance };
    let stage2_required = || -> Result<Vec<(TSDiagram, TSDiagram)>> {
        let pairs = load_pairs(&a.train2, "second-stage training pair")?;
        ensure!(!pairs.is_empty(), "--factor 16 with --method {} needs --train2 pairs", a.method);
        Ok(pairs)
    };

    let refined = match (a.method, a.factor) {
        (Method::Nn, factor) => low.upsample_nearest(factor.per_axis())?,
        (Method::Nalr, Factor::X4) => {
            let set = build_set(&load_pairs(&a.train, "training pair")?, a.search_shape, "training pairs")?;
            nalr::refine(&low, &set, &ncfg)?
        }
        (Method::Nalr, Factor::X16) => {
            let set1 = build_set(&load_pairs(&a.train, "training pair")?, a.search_shape, "training pairs")?;
            let set2 = build_set(&stage2_required()?, a.search_shape, "second-stage training pairs")?;
            let mid = nalr::refine(&low, &set1, &ncfg)?;
            nalr::refine(&mid, &set2, &ncfg)?
        }
        (Method::Glr, factor) => {
            let set1 = build_set(&load_pairs(&a.train, "training pair")?, a.search_shape, "training pairs")?;
            let model = glr_train(&set1, a.glr_threshold)?;
            if let Some(regime) = model.fallback_regime {
                eprintln!("warning: no {regime:?} training samples; that regime reuses the other's coefficients");
            }
            let first = glr_refine(&low, &model)?;
            match factor {
                Factor::X4 => first,
                Factor::X16 => {
                    let set2 = build_set(&stage2_required()?, a.search_shape, "second-stage training pairs")?;
                    let model2 = glr_train(&set2, a.glr_threshold)?;
                    glr_refine(&first, &model2)?
                }
            }
        }
        (Method::Ne, Factor::X4) => {
            let set = build_set(&load_pairs(&a.train, "training pair")?, a.search_shape, "training pairs")?;
            ne_refine(&low, &set, &necfg)?
        }
        (Method::Ne, Factor::X16) => {
            let pairs = load_pairs(&a.train, "training pair")?;
            let mut merged: Option<WideSampleSet> = None;
            for (plow, phigh) in &pairs {
                let set = WideSampleSet::build(plow, phigh).context("4x training blocks")?;
                match &mut merged {
                    Some(m) => m.append(set).context("4x training blocks")?,
                    None => merged = Some(set),
                }
            }
            let set = merged.context("no training pairs given")?;
            ne_refine_16(&low, &set, &necfg)?
        }
    };
    save_matrix(&refined, &a.output)?;
    println!("wrote {} ({} rows x {} columns)", a.output.display(), refined.rows(), refined.cols());
    Ok(0)
}

#[derive(Args)]
pub struct EvaluateArgs {
    /// Ground-truth matrix.
    #[arg(long)]
    pub truth: PathBuf,
    /// Refined matrix to score.
    #[arg(long)]
    pub pred: PathBuf,
    /// Speed below which a cell counts as congested, km/h.
    #[arg(long, default_value_t = 30.0)]
    pub congestion_threshold: f64,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

pub fn evaluate(a: &EvaluateArgs) -> Result<i32> {
    let truth = load_matrix(&a.truth)?;
    let pred = load_matrix(&a.pred)?;
    let r = MetricsReport::compute_with_threshold(&truth, &pred, a.congestion_threshold)?;
    let r2 = r.r_squared.map(|v| format!("{v:.9}")).unwrap_or_default();
    let text = format!(
        "mae,mape,mape_excluded_cells,cmjs,ssim,gmsd,r_squared\n{:.9},{:.9},{},{:.9},{:.9},{:.9},{}\n",
        r.mae, r.mape, r.mape_excluded_cells, r.cmjs, r.ssim, r.gmsd, r2
    );
    match &a.output {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{text}"),
    }
    Ok(0)
}

#[derive(Args)]
pub struct PerturbArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Gaussian noise σ in km/h, applied first (0 = none).
    #[arg(long, default_value_t = 0.0)]
    pub noise_sd: f64,
    /// Fraction of cells to blank out, applied second (0 = none).
    #[arg(long, default_value_t = 0.0)]
    pub missing_rate: f64,
    /// Fill the blanked cells back in from their neighborhoods.
    #[arg(long)]
    pub impute: bool,
    /// Base seed; noise draws from it directly, cell dropping from seed+1.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn perturb_cmd(a: &PerturbArgs) -> Result<i32> {
    let mut diagram = load_matrix(&a.input)?;
    if a.noise_sd > 0.0 {
        diagram = perturb::add_noise(&diagram, a.noise_sd, a.seed)?;
    }
    if a.missing_rate > 0.0 {
        diagram = perturb::drop_random(&diagram, a.missing_rate, a.seed.wrapping_add(1))?;
    }
    if a.impute {
        diagram = perturb::impute_nine_cell(&diagram)?;
    }
    save_matrix(&diagram, &a.output)?;
    println!("wrote {} ({} cells missing)", a.output.display(), diagram.missing_count());
    Ok(0)
}

#[derive(Args)]
#[command(after_long_help = CONFIG_FORMAT_HELP)]
pub struct ExperimentArgs {
    /// Experiment config file.
    #[arg(long)]
    pub config: PathBuf,
    /// Directory for matrices and CSV tables (created if absent).
    #[arg(long)]
    pub output_dir: PathBuf,
}

pub fn experiment(a: &ExperimentArgs) -> Result<i32> {
    let cfg = parse_config(&a.config)?;
    let report = run_experiment(&cfg, &a.output_dir)?;
    println!("{} rows completed, {} failed; tables under {}", report.completed, report.failed, a.output_dir.display());
    Ok(if report.failed > 0 { 2 } else { 0 })
}

#[derive(Args)]
#[command(after_long_help = CONFIG_FORMAT_HELP)]
pub struct SweepArgs {
    /// Experiment config file with at least one [sweep] section.
    #[arg(long)]
    pub config: PathBuf,
    /// Directory for the sweep CSVs (created if absent).
    #[arg(long)]
    pub output_dir: PathBuf,
}

pub fn sweep(a: &SweepArgs) -> Result<i32> {
    let cfg = parse_config(&a.config)?;
    let report = run_sweep(&cfg, &a.output_dir)?;
    println!("{} sweep points completed, {} failed; curves under {}", report.completed, report.failed, a.output_dir.display());
    Ok(if report.failed > 0 { 2 } else { 0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wave_origins_parse_as_time_position_pairs() {
        assert_eq!(parse_wave("300, 250").unwrap(), (300.0, 250.0));
        assert_eq!(parse_wave("1e2,5").unwrap(), (100.0, 5.0));
        assert!(parse_wave("300").is_err());
        assert!(parse_wave("a,b").is_err());
    }
}
