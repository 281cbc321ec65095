//! Building TS diagrams from raw data: rasterizing vehicle trajectory
//! points onto a grid, and generating synthetic congestion-wave scenarios
//! for desk-scale experiments.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;

use crate::error::{Error, Result};
use crate::perturb;
use crate::tsgrid::{CellSize, TSDiagram, MAX_SPEED_KMH};

/// Physical window covered by a diagram: total observed time and road
/// length.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Extent {
    pub time_total_s: f64,
    pub space_total_m: f64,
}

impl Extent {
    pub fn new(time_total_s: f64, space_total_m: f64) -> Result<Self> {
        if !(time_total_s > 0.0 && time_total_s.is_finite()) || !(space_total_m > 0.0 && space_total_m.is_finite()) {
            return Err(Error::InvalidArg(format!(
                "extent must be positive and finite, got {time_total_s} s × {space_total_m} m"
            )));
        }
        Ok(Extent { time_total_s, space_total_m })
    }

    /// Grid shape (rows, cols) for a cell size, requiring the extent to
    /// divide evenly into cells (within a tiny relative tolerance).
    pub fn grid_shape(&self, cell: CellSize) -> Result<(usize, usize)> {
        let split = |total: f64, span: f64, what: &str| -> Result<usize> {
            let n = (total / span).round();
            if n < 1.0 || (n * span - total).abs() > 1e-6 * total {
                return Err(Error::Shape(format!(
                    "{what} extent {total} does not divide into cells of {span}"
                )));
            }
            Ok(n as usize)
        };
        let cols = split(self.time_total_s, cell.time_span_s, "time")?;
        let rows = split(self.space_total_m, cell.space_span_m, "space")?;
        Ok((rows, cols))
    }
}

/// One trajectory sample: a vehicle at a moment in time.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryPoint {
    pub vehicle_id: String,
    /// Seconds from the start of the observation window.
    pub time_s: f64,
    /// Metres from the upstream end of the segment.
    pub position_m: f64,
    pub speed_kmh: f64,
}

/// Result of reading a trajectory CSV: the usable points plus how many
/// malformed rows were skipped.
#[derive(Clone, Debug)]
pub struct TrajectoryLoad {
    pub points: Vec<TrajectoryPoint>,
    pub skipped_rows: usize,
}

/// Read a trajectory CSV with the header
/// `vehicle_id,time_s,position_m,speed_kmh`. Rows with the wrong field
/// count, unparseable numbers, or negative time/position/speed are skipped
/// and counted; a wrong header is a hard error.
pub fn load_trajectories(path: &Path) -> Result<TrajectoryLoad> {
    const HEADER: [&str; 4] = ["vehicle_id", "time_s", "position_m", "speed_kmh"];
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => {
                let io = match e.into_kind() {
                    csv::ErrorKind::Io(io) => io,
                    _ => unreachable!("kind checked above"),
                };
                Error::Io { path: path.to_path_buf(), source: io }
            }
            _ => Error::Parse { path: path.to_path_buf(), line: 1, msg: e.to_string() },
        })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse { path: path.to_path_buf(), line: 1, msg: e.to_string() })?;
    let got: Vec<&str> = headers.iter().collect();
    if got != HEADER {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: format!("expected header {}, got {}", HEADER.join(","), got.join(",")),
        });
    }
    let mut points = Vec::new();
    let mut skipped_rows = 0usize;
    for record in reader.records() {
        let Ok(record) = record else {
            skipped_rows += 1;
            continue;
        };
        if record.len() != 4 || record[0].is_empty() {
            skipped_rows += 1;
            continue;
        }
        let nums: Option<Vec<f64>> = (1..4).map(|i| record[i].parse::<f64>().ok()).collect();
        let Some(nums) = nums else {
            skipped_rows += 1;
            continue;
        };
        let (time_s, position_m, speed_kmh) = (nums[0], nums[1], nums[2]);
        let valid = time_s >= 0.0 && position_m >= 0.0 && speed_kmh >= 0.0
            && time_s.is_finite() && position_m.is_finite() && speed_kmh.is_finite();
        if !valid {
            skipped_rows += 1;
            continue;
        }
        points.push(TrajectoryPoint { vehicle_id: record[0].to_string(), time_s, position_m, speed_kmh });
    }
    Ok(TrajectoryLoad { points, skipped_rows })
}

/// A rasterized diagram plus counters for the data quality events that
/// occurred while building it.
#[derive(Clone, Debug)]
pub struct RasterizeOutcome {
    pub diagram: TSDiagram,
    /// Points outside the extent, left out of the grid.
    pub dropped_points: usize,
    /// Speeds outside [0, 100] km/h, clamped to the boundary.
    pub clamped_speeds: usize,
    /// Cells that received no point and were filled by imputation (or left
    /// missing by [`rasterize_unfilled`]).
    pub empty_cells: usize,
}

/// Rasterize points onto a grid and fill point-less cells by nine-cell
/// mean imputation, yielding a dense diagram.
pub fn rasterize(points: &[TrajectoryPoint], cell: CellSize, extent: Extent) -> Result<RasterizeOutcome> {
    let mut out = rasterize_unfilled(points, cell, extent)?;
    out.diagram = perturb::impute_nine_cell(&out.diagram)?;
    Ok(out)
}

/// Rasterize points onto a grid, leaving cells that received no point as
/// missing.
///
/// Binning is half-open in both axes — a point exactly on a cell's upper
/// boundary belongs to the next cell — except that the extent's final
/// boundary is closed so every in-extent point lands somewhere. Each cell
/// holds the arithmetic mean of its point speeds; the per-cell speeds are
/// summed in sorted order, making the result independent of input order.
pub fn rasterize_unfilled(points: &[TrajectoryPoint], cell: CellSize, extent: Extent) -> Result<RasterizeOutcome> {
    if points.is_empty() {
        return Err(Error::Empty("no trajectory points to rasterize".into()));
    }
    let (rows, cols) = extent.grid_shape(cell)?;
    let mut cells: Vec<Vec<f64>> = vec![Vec::new(); rows * cols];
    let mut dropped_points = 0usize;
    let mut clamped_speeds = 0usize;
    for p in points {
        let in_extent = (0.0..=extent.time_total_s).contains(&p.time_s)
            && (0.0..=extent.space_total_m).contains(&p.position_m);
        if !in_extent {
            dropped_points += 1;
            continue;
        }
        let col = ((p.time_s / cell.time_span_s) as usize).min(cols - 1);
        let row = ((p.position_m / cell.space_span_m) as usize).min(rows - 1);
        let speed = if (0.0..=MAX_SPEED_KMH).contains(&p.speed_kmh) {
            p.speed_kmh
        } else {
            clamped_speeds += 1;
            p.speed_kmh.clamp(0.0, MAX_SPEED_KMH)
        };
        cells[row * cols + col].push(speed);
    }
    if dropped_points == points.len() {
        return Err(Error::Empty("every trajectory point lies outside the extent".into()));
    }
    let mut empty_cells = 0usize;
    let values: Vec<f64> = cells
        .into_iter()
        .map(|mut speeds| {
            if speeds.is_empty() {
                empty_cells += 1;
                return f64::NAN;
            }
            speeds.sort_by(f64::total_cmp);
            speeds.iter().sum::<f64>() / speeds.len() as f64
        })
        .collect();
    let diagram = TSDiagram::from_values(rows, cols, values, cell)?;
    Ok(RasterizeOutcome { diagram, dropped_points, clamped_speeds, empty_cells })
}

/// A synthetic congestion scenario: a free-flow field crossed by slowdown
/// bands that propagate from seed points at the backward wave speed.
#[derive(Clone, Debug)]
pub struct SynthScenario {
    pub free_speed: f64,
    pub jam_speed: f64,
    /// (time_s, position_m) seed points the waves pass through.
    pub wave_origins: Vec<(f64, f64)>,
    /// Wave propagation speed dx/dt in m/s; negative means the wave moves
    /// upstream, the usual direction of congestion waves.
    pub wave_slope_mps: f64,
    /// Temporal thickness of one wave band, seconds.
    pub wave_width_s: f64,
    /// Optional Gaussian texture on top of the wave field, km/h.
    pub noise_sd: f64,
}

impl SynthScenario {
    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArg(msg));
        if !(0.0 <= self.jam_speed && self.jam_speed < self.free_speed && self.free_speed <= MAX_SPEED_KMH) {
            return bad(format!(
                "speeds must satisfy 0 ≤ jam < free ≤ {MAX_SPEED_KMH}, got jam {} and free {}",
                self.jam_speed, self.free_speed
            ));
        }
        if !(self.wave_width_s > 0.0 && self.wave_width_s.is_finite()) {
            return bad(format!("wave width must be positive, got {}", self.wave_width_s));
        }
        if self.wave_slope_mps == 0.0 || !self.wave_slope_mps.is_finite() {
            return bad(format!("wave slope must be finite and nonzero, got {}", self.wave_slope_mps));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return bad(format!("noise level must be ≥ 0, got {}", self.noise_sd));
        }
        if self.wave_origins.iter().any(|(t, x)| !t.is_finite() || !x.is_finite()) {
            return bad("wave origins must be finite".into());
        }
        Ok(())
    }

    /// Wave intensity in [0, 1] at a (time, position) location: 1 on the
    /// core of the nearest band, easing to 0 at the band edge along a
    /// half-cosine shoulder. The shoulder meets both the core and the
    /// free-flow region with zero slope, so the speed field has no creases
    /// for neighborhood averaging (imputation, downsampling) to smear.
    fn intensity(&self, t: f64, x: f64) -> f64 {
        const CORE_FRACTION: f64 = 0.3;
        let half = self.wave_width_s / 2.0;
        self.wave_origins
            .iter()
            .map(|(t0, x0)| {
                // Time at which this wave's front passes position x.
                let t_front = t0 + (x - x0) / self.wave_slope_mps;
                let u = (t - t_front).abs() / half;
                if u <= CORE_FRACTION {
                    1.0
                } else if u >= 1.0 {
                    0.0
                } else {
                    let s = (u - CORE_FRACTION) / (1.0 - CORE_FRACTION);
                    0.5 * (1.0 + (std::f64::consts::PI * s).cos())
                }
            })
            .fold(0.0, f64::max)
    }
}

/// Generate a synthetic ground-truth diagram: `free_speed` everywhere,
/// pulled down toward `jam_speed` inside the wave bands, plus optional
/// clamped Gaussian texture. Deterministic for a given seed; with
/// `noise_sd = 0` the seed does not matter at all.
pub fn generate_synthetic(scenario: &SynthScenario, cell: CellSize, extent: Extent, seed: u64) -> Result<TSDiagram> {
    scenario.validate()?;
    let (rows, cols) = extent.grid_shape(cell)?;
    let depth = scenario.free_speed - scenario.jam_speed;
    let mut values = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let x = (r as f64 + 0.5) * cell.space_span_m;
        for c in 0..cols {
            let t = (c as f64 + 0.5) * cell.time_span_s;
            values.push(scenario.free_speed - depth * scenario.intensity(t, x));
        }
    }
    if scenario.noise_sd > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = rand_distr::Normal::new(0.0, scenario.noise_sd).expect("noise_sd validated");
        for v in &mut values {
            *v = (*v + normal.sample(&mut rng)).clamp(0.0, MAX_SPEED_KMH);
        }
    }
    TSDiagram::from_values(rows, cols, values, cell)
}
