//! The benchmark protocol: load training pairs once, refine every test
//! diagram with every configured method and factor, score each result,
//! and emit `results.csv`, `summary.csv`, and `timings.csv` plus one
//! matrix file per refined diagram.
//!
//! A failure in one (test, method, factor) row is logged to stderr and
//! skipped; the rest of the run continues. Wall-clock times live in their
//! own file so the data outputs stay byte-identical across reruns.

use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use tsr_core::baselines::{glr_refine, glr_train, ne_refine, ne_refine_16, GlrModel, WideSampleSet};
use tsr_core::metrics::MetricsReport;
use tsr_core::nalr;
use tsr_core::patches::SampleSet;
use tsr_core::tsgrid::{load_matrix, save_matrix, TSDiagram};
use tsr_core::Error;

use crate::config::{ExperimentConfig, Factor, Method};
use crate::summary::{improvement_higher_better, improvement_lower_better};

/// Everything derived from the `[train]` sections: the first-stage sample
/// set, optional second-stage and 4×-block sets for 16× runs, and the
/// global models when GLR is among the methods.
pub struct TrainedStages {
    pub stage1: SampleSet,
    pub stage2: Option<SampleSet>,
    pub wide: Option<WideSampleSet>,
    pub glr1: Option<GlrModel>,
    pub glr2: Option<GlrModel>,
}

fn merge_sample_set(slot: &mut Option<SampleSet>, set: SampleSet) -> tsr_core::Result<()> {
    match slot {
        Some(existing) => existing.append(set),
        None => {
            *slot = Some(set);
            Ok(())
        }
    }
}

fn warn_on_fallback(model: &GlrModel, stage: &str) {
    if let Some(regime) = model.fallback_regime {
        eprintln!(
            "warning: {stage} global model had no {regime:?} training samples; \
             that regime reuses the other regime's coefficients"
        );
    }
}

/// Load every training pair and build the stage sets and models.
pub fn load_training(cfg: &ExperimentConfig) -> Result<TrainedStages> {
    let mut stage1: Option<SampleSet> = None;
    let mut stage2: Option<SampleSet> = None;
    let mut wide: Option<WideSampleSet> = None;
    for (i, pair) in cfg.train.iter().enumerate() {
        let ctx = |part: &str| format!("training pair {i} ({part})");
        let low = load_matrix(&pair.low).with_context(|| ctx("low"))?;
        let high = load_matrix(&pair.high).with_context(|| ctx("high"))?;
        let set = SampleSet::build_with_shape(&low, &high, cfg.search_shape).with_context(|| ctx("stage 1"))?;
        merge_sample_set(&mut stage1, set).with_context(|| ctx("stage 1"))?;
        if let (Some(low2_path), Some(high2_path)) = (&pair.low2, &pair.high2) {
            let low2 = load_matrix(low2_path).with_context(|| ctx("low2"))?;
            let high2 = load_matrix(high2_path).with_context(|| ctx("high2"))?;
            let set2 =
                SampleSet::build_with_shape(&low2, &high2, cfg.search_shape).with_context(|| ctx("stage 2"))?;
            merge_sample_set(&mut stage2, set2).with_context(|| ctx("stage 2"))?;
            let wide_set = WideSampleSet::build(&low, &high2).with_context(|| ctx("4x blocks"))?;
            match &mut wide {
                Some(existing) => existing.append(wide_set).with_context(|| ctx("4x blocks"))?,
                None => wide = Some(wide_set),
            }
        }
    }
    let stage1 = stage1.context("config has no [train] section")?;
    let (mut glr1, mut glr2) = (None, None);
    if cfg.methods.contains(&Method::Glr) {
        let model = glr_train(&stage1, cfg.glr_threshold).context("training the stage-1 global model")?;
        warn_on_fallback(&model, "stage-1");
        glr1 = Some(model);
        if let Some(s2) = &stage2 {
            let model = glr_train(s2, cfg.glr_threshold).context("training the stage-2 global model")?;
            warn_on_fallback(&model, "stage-2");
            glr2 = Some(model);
        }
    }
    Ok(TrainedStages { stage1, stage2, wide, glr1, glr2 })
}

fn missing_stage2(what: &str) -> Error {
    Error::InvalidArg(format!(
        "16x refinement needs {what}; give each [train] section low2 and high2 paths"
    ))
}

/// Refine one diagram with one method at one factor.
pub fn run_method(
    method: Method,
    factor: Factor,
    low: &TSDiagram,
    stages: &TrainedStages,
    cfg: &ExperimentConfig,
) -> tsr_core::Result<TSDiagram> {
    match (method, factor) {
        (Method::Nalr, Factor::X4) => nalr::refine(low, &stages.stage1, &cfg.nalr_config()),
        (Method::Nalr, Factor::X16) => {
            let s2 = stages.stage2.as_ref().ok_or_else(|| missing_stage2("second-stage training samples"))?;
            let mid = nalr::refine(low, &stages.stage1, &cfg.nalr_config())?;
            nalr::refine(&mid, s2, &cfg.nalr_config())
        }
        (Method::Glr, Factor::X4) => {
            let model = stages.glr1.as_ref().expect("GLR models are trained whenever glr is listed");
            glr_refine(low, model)
        }
        (Method::Glr, Factor::X16) => {
            let m1 = stages.glr1.as_ref().expect("GLR models are trained whenever glr is listed");
            let m2 = stages.glr2.as_ref().ok_or_else(|| missing_stage2("a second-stage global model"))?;
            let mid = glr_refine(low, m1)?;
            glr_refine(&mid, m2)
        }
        (Method::Ne, Factor::X4) => ne_refine(low, &stages.stage1, &cfg.ne_config()),
        (Method::Ne, Factor::X16) => {
            let wide = stages.wide.as_ref().ok_or_else(|| missing_stage2("4x training blocks"))?;
            ne_refine_16(low, wide, &cfg.ne_config())
        }
        (Method::Nn, _) => low.upsample_nearest(factor.per_axis()),
    }
}

/// One successful experiment row.
pub struct ResultRow {
    pub test: usize,
    pub method: Method,
    pub factor: Factor,
    pub report: MetricsReport,
    /// Path of the refined matrix, relative to the output directory.
    pub matrix: String,
}

/// Outcome counts for the exit code.
pub struct RunReport {
    pub completed: usize,
    pub failed: usize,
}

const RESULTS_HEADER: &str = "test,method,factor,mae,mape,mape_excluded_cells,cmjs,ssim,gmsd,r_squared,matrix";
const SUMMARY_HEADER: &str =
    "test,factor,baseline,mae_improvement_pct,mape_improvement_pct,cmjs_improvement_pct,ssim_improvement_pct,gmsd_improvement_pct";

fn fmt_metric(v: f64) -> String {
    format!("{v:.9}")
}

/// Run the whole protocol, writing everything under `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunReport> {
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let stages = load_training(cfg)?;
    let mut rows: Vec<ResultRow> = Vec::new();
    let mut timings: Vec<(usize, Method, Factor, f64)> = Vec::new();
    let mut failed = 0usize;

    for (ti, case) in cfg.test.iter().enumerate() {
        let loaded = (|| -> Result<(TSDiagram, TSDiagram, Option<TSDiagram>)> {
            let low = load_matrix(&case.low).context("low input")?;
            let truth = load_matrix(&case.truth).context("2x ground truth")?;
            let truth16 = match &case.truth16 {
                Some(p) => Some(load_matrix(p).context("4x ground truth")?),
                None => None,
            };
            Ok((low, truth, truth16))
        })();
        let (low, truth2, truth16) = match loaded {
            Ok(t) => t,
            Err(e) => {
                eprintln!("test {ti}: skipping all rows: {e:#}");
                failed += cfg.methods.len() * cfg.factors.len();
                continue;
            }
        };
        for &factor in &cfg.factors {
            let truth = match factor {
                Factor::X4 => &truth2,
                Factor::X16 => match &truth16 {
                    Some(t) => t,
                    None => {
                        eprintln!("test {ti} at 16x: skipped; the [test] section has no high16 path");
                        failed += cfg.methods.len();
                        continue;
                    }
                },
            };
            for &method in &cfg.methods {
                let label = format!("test {ti}, {method}, {factor}");
                let started = Instant::now();
                let refined = match run_method(method, factor, &low, &stages, cfg) {
                    Ok(d) => d,
                    Err(e) => {
                        eprintln!("{label}: refinement failed: {e}");
                        failed += 1;
                        continue;
                    }
                };
                let elapsed_ms = started.elapsed().as_secs_f64() * 1e3;
                let report = match MetricsReport::compute_with_threshold(truth, &refined, cfg.congestion_threshold)
                {
                    Ok(r) => r,
                    Err(e) => {
                        eprintln!("{label}: evaluation failed: {e}");
                        failed += 1;
                        continue;
                    }
                };
                let matrix = format!("test{ti}/{}_{}.csv", method.name(), factor.name());
                let full = out_dir.join(&matrix);
                let saved = std::fs::create_dir_all(full.parent().expect("matrix path has a parent"))
                    .map_err(anyhow::Error::from)
                    .and_then(|()| save_matrix(&refined, &full).map_err(anyhow::Error::from));
                if let Err(e) = saved {
                    eprintln!("{label}: writing the refined matrix failed: {e:#}");
                    failed += 1;
                    continue;
                }
                timings.push((ti, method, factor, elapsed_ms));
                rows.push(ResultRow { test: ti, method, factor, report, matrix });
            }
        }
    }

    write_results(&rows, &out_dir.join("results.csv"))?;
    write_timings(&timings, &out_dir.join("timings.csv"))?;
    write_summary(&rows, out_dir)?;
    Ok(RunReport { completed: rows.len(), failed })
}

fn write_results(rows: &[ResultRow], path: &Path) -> Result<()> {
    let mut text = String::from(RESULTS_HEADER);
    text.push('\n');
    for row in rows {
        let r = &row.report;
        let r2 = r.r_squared.map(fmt_metric).unwrap_or_default();
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            row.test,
            row.method.name(),
            row.factor.name(),
            fmt_metric(r.mae),
            fmt_metric(r.mape),
            r.mape_excluded_cells,
            fmt_metric(r.cmjs),
            fmt_metric(r.ssim),
            fmt_metric(r.gmsd),
            r2,
            row.matrix,
        ));
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_timings(timings: &[(usize, Method, Factor, f64)], path: &Path) -> Result<()> {
    let mut text = String::from("test,method,factor,milliseconds\n");
    for (ti, method, factor, ms) in timings {
        text.push_str(&format!("{ti},{},{},{ms:.3}\n", method.name(), factor.name()));
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// The five metric scores a summary comparison is built from.
#[derive(Clone, Copy)]
struct Scores {
    mae: f64,
    mape: f64,
    cmjs: f64,
    ssim: f64,
    gmsd: f64,
}

impl Scores {
    fn of(report: &MetricsReport) -> Scores {
        Scores { mae: report.mae, mape: report.mape, cmjs: report.cmjs, ssim: report.ssim, gmsd: report.gmsd }
    }

    /// Improvement rates of `ours` over `self`, in percent, ordered as the
    /// summary columns.
    fn rates_against(self, ours: Scores) -> [f64; 5] {
        [
            improvement_lower_better(self.mae, ours.mae) * 100.0,
            improvement_lower_better(self.mape, ours.mape) * 100.0,
            improvement_higher_better(self.cmjs, ours.cmjs) * 100.0,
            improvement_higher_better(self.ssim, ours.ssim) * 100.0,
            improvement_lower_better(self.gmsd, ours.gmsd) * 100.0,
        ]
    }
}

struct SummaryRow {
    test: usize,
    factor: String,
    baseline: String,
    rates: [f64; 5],
}

fn build_summary(rows: &[(usize, String, String, Scores)]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    let mut groups: Vec<(usize, &str)> = rows.iter().map(|(t, _, f, _)| (*t, f.as_str())).collect();
    groups.dedup();
    for (test, factor) in groups {
        let find = |method: &str| {
            rows.iter()
                .find(|(t, m, f, _)| *t == test && m == method && f == factor)
                .map(|(_, _, _, s)| *s)
        };
        let Some(ours) = find("nalr") else { continue };
        for baseline in ["glr", "ne", "nn"] {
            if let Some(base) = find(baseline) {
                out.push(SummaryRow {
                    test,
                    factor: factor.to_string(),
                    baseline: baseline.to_string(),
                    rates: base.rates_against(ours),
                });
            }
        }
    }
    out
}

/// Reparse the five summary-relevant metric columns from `results.csv`.
fn read_result_scores(path: &Path) -> Result<Vec<(usize, String, String, Scores)>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    let header = lines.next().context("results file is empty")?;
    if header != RESULTS_HEADER {
        bail!("unexpected results header {header:?}");
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 11 {
            bail!("results row {} has {} fields", i + 2, fields.len());
        }
        let num = |j: usize| -> Result<f64> {
            fields[j].parse::<f64>().with_context(|| format!("results row {} column {j}", i + 2))
        };
        out.push((
            fields[0].parse::<usize>().with_context(|| format!("results row {} test id", i + 2))?,
            fields[1].to_string(),
            fields[2].to_string(),
            Scores { mae: num(3)?, mape: num(4)?, cmjs: num(6)?, ssim: num(7)?, gmsd: num(8)? },
        ));
    }
    Ok(out)
}

fn rates_close(a: f64, b: f64) -> bool {
    (a.is_nan() && b.is_nan()) || (a - b).abs() <= 1e-4
}

/// Build `summary.csv` from the written results file, cross-checking the
/// rates against the in-memory metric values before trusting them.
fn write_summary(rows: &[ResultRow], out_dir: &Path) -> Result<()> {
    let parsed = read_result_scores(&out_dir.join("results.csv"))?;
    let summary = build_summary(&parsed);

    let in_memory: Vec<(usize, String, String, Scores)> = rows
        .iter()
        .map(|r| (r.test, r.method.name().to_string(), r.factor.name().to_string(), Scores::of(&r.report)))
        .collect();
    let expected = build_summary(&in_memory);
    if summary.len() != expected.len() {
        bail!("summary cross-check failed: {} rows from disk, {} in memory", summary.len(), expected.len());
    }
    for (a, b) in summary.iter().zip(&expected) {
        let consistent = a.test == b.test
            && a.factor == b.factor
            && a.baseline == b.baseline
            && a.rates.iter().zip(&b.rates).all(|(x, y)| rates_close(*x, *y));
        if !consistent {
            bail!(
                "summary cross-check failed for test {}, {}, baseline {}: disk {:?} vs memory {:?}",
                a.test,
                a.factor,
                a.baseline,
                a.rates,
                b.rates
            );
        }
    }

    let mut text = String::from(SUMMARY_HEADER);
    text.push('\n');
    for row in &summary {
        text.push_str(&format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            row.test, row.factor, row.baseline, row.rates[0], row.rates[1], row.rates[2], row.rates[3], row.rates[4],
        ));
    }
    let path = out_dir.join("summary.csv");
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_rows_pair_the_refinement_with_each_baseline() {
        let mk = |mae: f64| Scores { mae, mape: 0.1, cmjs: 0.5, ssim: 0.9, gmsd: 0.2 };
        let rows = vec![
            (0, "nalr".to_string(), "4x".to_string(), mk(2.0)),
            (0, "glr".to_string(), "4x".to_string(), mk(4.0)),
            (0, "nn".to_string(), "4x".to_string(), mk(8.0)),
            (1, "glr".to_string(), "4x".to_string(), mk(4.0)),
        ];
        let summary = build_summary(&rows);
        // Test 1 has no refinement row, so only test 0 produces output.
        assert_eq!(summary.len(), 2);
        assert_eq!((summary[0].test, summary[0].baseline.as_str()), (0, "glr"));
        assert!((summary[0].rates[0] - 50.0).abs() < 1e-9);
        assert_eq!((summary[1].test, summary[1].baseline.as_str()), (0, "nn"));
        assert!((summary[1].rates[0] - 75.0).abs() < 1e-9);
        // Identical similarity scores mean a 0% rate, not NaN.
        assert_eq!(summary[0].rates[2], 0.0);
    }

    #[test]
    fn metric_formatting_survives_a_round_trip() {
        let v = 1.234_567_891_23_f64;
        let parsed: f64 = fmt_metric(v).parse().unwrap();
        assert!((parsed - v).abs() < 1e-9);
        assert_eq!(fmt_metric(f64::NAN), "NaN");
    }
}
