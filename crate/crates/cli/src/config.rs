//! Experiment configuration files.
//!
//! The format is a flat `key = value` list with three repeatable section
//! headers — `[train]`, `[test]`, and `[sweep]` — and `#` line comments:
//!
//! ```text
//! seed = 42
//! methods = nalr,glr,ne
//! factors = 4
//! k = 100
//!
//! [train]
//! low = data/train0_low.csv
//! high = data/train0_high.csv
//!
//! [test]
//! low = data/test_low.csv
//! high = data/test_high.csv
//!
//! [sweep]
//! kind = k
//! values = 50:1000:50
//! ```
//!
//! Relative paths are resolved against the directory containing the
//! config file. Every referenced file must exist at parse time; unknown
//! keys and sections are errors.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, ensure, Context, Result};
use tsr_core::baselines::{NeConfig, NeDistance};
use tsr_core::nalr::NalrConfig;
use tsr_core::patches::SearchShape;

/// A refinement method selectable in the `methods` list.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Nalr,
    Glr,
    Ne,
    /// Nearest-neighbor upsampling — the no-training floor every method
    /// should beat.
    Nn,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Nalr => "nalr",
            Method::Glr => "glr",
            Method::Ne => "ne",
            Method::Nn => "nn",
        }
    }
}

impl FromStr for Method {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nalr" => Ok(Method::Nalr),
            "glr" => Ok(Method::Glr),
            "ne" => Ok(Method::Ne),
            "nn" => Ok(Method::Nn),
            other => bail!("unknown method {other:?}; expected nalr, glr, ne, or nn"),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Total cell-count multiplier: one refinement pass (4×) or two (16×).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Factor {
    X4,
    X16,
}

impl Factor {
    pub fn name(self) -> &'static str {
        match self {
            Factor::X4 => "4x",
            Factor::X16 => "16x",
        }
    }

    /// Per-axis scale: 2 for one pass, 4 for two.
    pub fn per_axis(self) -> usize {
        match self {
            Factor::X4 => 2,
            Factor::X16 => 4,
        }
    }
}

impl FromStr for Factor {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "4" => Ok(Factor::X4),
            "16" => Ok(Factor::X16),
            other => bail!("unknown upscaling factor {other:?}; expected 4 or 16"),
        }
    }
}

impl std::fmt::Display for Factor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One training diagram pair, optionally with a second-stage pair for
/// 16× runs: `low2` is a 2×-resolution diagram and `high2` its 2×
/// refinement (4× the base resolution). When `high2` is present it also
/// provides the 4× blocks for single-pass 16× neighbor embedding.
#[derive(Clone, Debug)]
pub struct TrainPair {
    pub low: PathBuf,
    pub high: PathBuf,
    pub low2: Option<PathBuf>,
    pub high2: Option<PathBuf>,
}

/// One held-out evaluation case: the low-resolution input, the 2× ground
/// truth, and optionally the 4× ground truth for 16× rows.
#[derive(Clone, Debug)]
pub struct TestCase {
    pub low: PathBuf,
    pub truth: PathBuf,
    pub truth16: Option<PathBuf>,
}

/// What a `[sweep]` section varies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepKind {
    K,
    TrainSize,
    Noise,
    Missing,
}

impl SweepKind {
    pub fn name(self) -> &'static str {
        match self {
            SweepKind::K => "k",
            SweepKind::TrainSize => "train_size",
            SweepKind::Noise => "noise",
            SweepKind::Missing => "missing",
        }
    }
}

impl FromStr for SweepKind {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "k" => Ok(SweepKind::K),
            "train_size" => Ok(SweepKind::TrainSize),
            "noise" => Ok(SweepKind::Noise),
            "missing" => Ok(SweepKind::Missing),
            other => bail!("unknown sweep kind {other:?}; expected k, train_size, noise, or missing"),
        }
    }
}

impl std::fmt::Display for SweepKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug)]
pub struct SweepSpec {
    pub kind: SweepKind,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub methods: Vec<Method>,
    pub factors: Vec<Factor>,
    pub k: usize,
    pub search_shape: SearchShape,
    pub ridge_lambda: f64,
    pub clamp_output: bool,
    pub glr_threshold: f64,
    pub ne_k: usize,
    pub ne_distance: NeDistance,
    pub congestion_threshold: f64,
    pub train: Vec<TrainPair>,
    pub test: Vec<TestCase>,
    pub sweeps: Vec<SweepSpec>,
}

impl ExperimentConfig {
    pub fn nalr_config(&self) -> NalrConfig {
        NalrConfig {
            k: self.k,
            search_shape: self.search_shape,
            ridge_lambda: self.ridge_lambda,
            clamp_output: self.clamp_output,
        }
    }

    pub fn ne_config(&self) -> NeConfig {
        NeConfig { k: self.ne_k, distance: self.ne_distance }
    }
}

/// Parse and validate a config file.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_config_str(&text, base).with_context(|| format!("in config {}", path.display()))
}

#[derive(Default)]
struct SectionDraft {
    header: &'static str,
    keys: Vec<(String, String)>,
}

impl SectionDraft {
    fn take(&mut self, key: &str) -> Option<String> {
        let i = self.keys.iter().position(|(k, _)| k == key)?;
        Some(self.keys.remove(i).1)
    }

    fn finish_empty(&self) -> Result<()> {
        ensure!(
            self.keys.is_empty(),
            "unknown key {:?} in [{}] section",
            self.keys[0].0,
            self.header
        );
        Ok(())
    }
}

fn parse_config_str(text: &str, base: &Path) -> Result<ExperimentConfig> {
    let mut top: Vec<(String, String, usize)> = Vec::new();
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut sweeps = Vec::new();
    let mut section: Option<SectionDraft> = None;

    let finish = |section: &mut Option<SectionDraft>,
                      train: &mut Vec<TrainPair>,
                      test: &mut Vec<TestCase>,
                      sweeps: &mut Vec<SweepSpec>|
     -> Result<()> {
        let Some(mut draft) = section.take() else { return Ok(()) };
        match draft.header {
            "train" => {
                let pair = TrainPair {
                    low: resolve_path(&mut draft, "low", base)?,
                    high: resolve_path(&mut draft, "high", base)?,
                    low2: resolve_path_opt(&mut draft, "low2", base)?,
                    high2: resolve_path_opt(&mut draft, "high2", base)?,
                };
                ensure!(
                    pair.low2.is_some() == pair.high2.is_some(),
                    "[train] low2 and high2 must be given together"
                );
                draft.finish_empty()?;
                train.push(pair);
            }
            "test" => {
                let case = TestCase {
                    low: resolve_path(&mut draft, "low", base)?,
                    truth: resolve_path(&mut draft, "high", base)?,
                    truth16: resolve_path_opt(&mut draft, "high16", base)?,
                };
                draft.finish_empty()?;
                test.push(case);
            }
            "sweep" => {
                let kind: SweepKind = draft
                    .take("kind")
                    .with_context(|| "[sweep] section is missing `kind`")?
                    .parse()?;
                let values_raw = draft.take("values").with_context(|| "[sweep] section is missing `values`")?;
                let values = parse_values(&values_raw)?;
                validate_sweep_values(kind, &values)?;
                draft.finish_empty()?;
                sweeps.push(SweepSpec { kind, values });
            }
            other => bail!("unknown section [{other}]"),
        }
        Ok(())
    };

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|rest| rest.strip_suffix(']')) {
            finish(&mut section, &mut train, &mut test, &mut sweeps)?;
            let header = match name.trim() {
                "train" => "train",
                "test" => "test",
                "sweep" => "sweep",
                other => bail!("line {}: unknown section [{other}]", lineno + 1),
            };
            section = Some(SectionDraft { header, keys: Vec::new() });
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("line {}: expected `key = value` or a `[section]` header, got {line:?}", lineno + 1);
        };
        let (key, value) = (key.trim().to_string(), value.trim().to_string());
        ensure!(!value.is_empty(), "line {}: key {key:?} has an empty value", lineno + 1);
        match &mut section {
            Some(draft) => {
                ensure!(
                    !draft.keys.iter().any(|(k, _)| *k == key),
                    "line {}: duplicate key {key:?} in [{}] section",
                    lineno + 1,
                    draft.header
                );
                draft.keys.push((key, value));
            }
            None => {
                ensure!(
                    !top.iter().any(|(k, _, _)| *k == key),
                    "line {}: duplicate key {key:?}",
                    lineno + 1
                );
                top.push((key, value, lineno + 1));
            }
        }
    }
    finish(&mut section, &mut train, &mut test, &mut sweeps)?;

    let mut cfg = ExperimentConfig {
        seed: 0,
        methods: vec![Method::Nalr, Method::Glr, Method::Ne],
        factors: vec![Factor::X4],
        k: 100,
        search_shape: SearchShape::default(),
        ridge_lambda: 1e-8,
        clamp_output: true,
        glr_threshold: 30.0,
        ne_k: 5,
        ne_distance: NeDistance::L1,
        congestion_threshold: 30.0,
        train,
        test,
        sweeps,
    };

    for (key, value, lineno) in top {
        let ctx = || format!("line {lineno}: key {key:?}");
        match key.as_str() {
            "seed" => cfg.seed = value.parse().with_context(ctx)?,
            "methods" => {
                cfg.methods = split_list(&value).map(|s| s.parse()).collect::<Result<_>>().with_context(ctx)?
            }
            "factors" => {
                cfg.factors = split_list(&value).map(|s| s.parse()).collect::<Result<_>>().with_context(ctx)?
            }
            "k" => cfg.k = value.parse().with_context(ctx)?,
            "search_shape" => {
                cfg.search_shape = value.parse().map_err(anyhow::Error::from).with_context(ctx)?
            }
            "ridge_lambda" => cfg.ridge_lambda = value.parse().with_context(ctx)?,
            "clamp_output" => cfg.clamp_output = parse_bool(&value).with_context(ctx)?,
            "glr_threshold" => cfg.glr_threshold = value.parse().with_context(ctx)?,
            "ne_k" => cfg.ne_k = value.parse().with_context(ctx)?,
            "ne_distance" => {
                cfg.ne_distance = value.parse().map_err(anyhow::Error::from).with_context(ctx)?
            }
            "congestion_threshold" => cfg.congestion_threshold = value.parse().with_context(ctx)?,
            other => bail!("line {lineno}: unknown key {other:?}"),
        }
    }

    validate(&cfg)?;
    Ok(cfg)
}

fn validate(cfg: &ExperimentConfig) -> Result<()> {
    ensure!(!cfg.methods.is_empty(), "`methods` must not be empty");
    ensure!(!cfg.factors.is_empty(), "`factors` must not be empty");
    ensure!(has_no_duplicates(&cfg.methods), "`methods` lists a method twice");
    ensure!(has_no_duplicates(&cfg.factors), "`factors` lists a factor twice");
    ensure!(cfg.k >= 1, "`k` must be at least 1");
    ensure!(cfg.ne_k >= 1, "`ne_k` must be at least 1");
    ensure!(
        cfg.ridge_lambda.is_finite() && cfg.ridge_lambda >= 0.0,
        "`ridge_lambda` must be finite and non-negative"
    );
    for (name, v) in [("glr_threshold", cfg.glr_threshold), ("congestion_threshold", cfg.congestion_threshold)] {
        ensure!(v.is_finite() && 0.0 < v && v < 100.0, "`{name}` must lie inside (0, 100)");
    }
    ensure!(!cfg.train.is_empty(), "config needs at least one [train] section");
    ensure!(!cfg.test.is_empty(), "config needs at least one [test] section");
    Ok(())
}

fn has_no_duplicates<T: PartialEq>(items: &[T]) -> bool {
    items.iter().enumerate().all(|(i, x)| !items[..i].contains(x))
}

fn parse_bool(s: &str) -> Result<bool> {
    match s {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => bail!("expected a boolean, got {other:?}"),
    }
}

fn split_list(s: &str) -> impl Iterator<Item = &str> {
    s.split(',').map(str::trim).filter(|p| !p.is_empty())
}

/// `values` accepts either a comma list (`0.1, 0.2, 0.5`) or an inclusive
/// range `start:end:step`.
fn parse_values(s: &str) -> Result<Vec<f64>> {
    if s.contains(':') {
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        ensure!(parts.len() == 3, "range must be start:end:step, got {s:?}");
        let start: f64 = parts[0].parse().with_context(|| format!("range start {:?}", parts[0]))?;
        let end: f64 = parts[1].parse().with_context(|| format!("range end {:?}", parts[1]))?;
        let step: f64 = parts[2].parse().with_context(|| format!("range step {:?}", parts[2]))?;
        ensure!(step > 0.0 && step.is_finite(), "range step must be positive");
        ensure!(start <= end, "range start must not exceed its end");
        let mut out = Vec::new();
        let mut i = 0u32;
        loop {
            let v = start + f64::from(i) * step;
            if v > end + 1e-9 * step {
                break;
            }
            out.push(v);
            i += 1;
        }
        Ok(out)
    } else {
        let out: Vec<f64> = split_list(s)
            .map(|p| p.parse::<f64>().with_context(|| format!("sweep value {p:?}")))
            .collect::<Result<_>>()?;
        ensure!(!out.is_empty(), "`values` must not be empty");
        Ok(out)
    }
}

fn validate_sweep_values(kind: SweepKind, values: &[f64]) -> Result<()> {
    ensure!(!values.is_empty(), "`values` must not be empty");
    for &v in values {
        ensure!(v.is_finite(), "sweep values must be finite");
        match kind {
            SweepKind::K => {
                ensure!(v >= 1.0 && v.fract() == 0.0, "k sweep values must be positive integers, got {v}")
            }
            SweepKind::TrainSize => {
                ensure!(0.0 < v && v <= 1.0, "train_size fractions must lie in (0, 1], got {v}")
            }
            SweepKind::Noise => ensure!(v >= 0.0, "noise levels must be non-negative, got {v}"),
            SweepKind::Missing => {
                ensure!((0.0..1.0).contains(&v), "missing rates must lie in [0, 1), got {v}")
            }
        }
    }
    Ok(())
}

fn resolve(base: &Path, value: &str) -> PathBuf {
    let p = Path::new(value);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn resolve_path(draft: &mut SectionDraft, key: &str, base: &Path) -> Result<PathBuf> {
    let value = draft
        .take(key)
        .with_context(|| format!("[{}] section is missing `{key}`", draft.header))?;
    let path = resolve(base, &value);
    ensure!(path.is_file(), "[{}] {key}: no such file {}", draft.header, path.display());
    Ok(path)
}

fn resolve_path_opt(draft: &mut SectionDraft, key: &str, base: &Path) -> Result<Option<PathBuf>> {
    let Some(value) = draft.take(key) else { return Ok(None) };
    let path = resolve(base, &value);
    ensure!(path.is_file(), "[{}] {key}: no such file {}", draft.header, path.display());
    Ok(Some(path))
}
