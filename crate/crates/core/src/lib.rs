//! Refinement toolkit for time-space (TS) traffic speed diagrams.
//!
//! A TS diagram stores mean traffic speed over a road segment as a matrix:
//! rows are space cells (upstream → downstream), columns are time cells
//! (earlier → later). Diagrams built from loop detectors or sparse probe
//! data are coarse; this crate raises their resolution 2× per axis per pass
//! (4× in cell count) by learning local linear maps from paired low/high
//! resolution training diagrams.
//!
//! * [`tsgrid`] — the diagram data model and matrix file I/O.
//! * [`ingest`] — trajectory rasterization and synthetic wave scenarios.
//! * [`patches`] — paired 3×3 / 2×2 patch extraction and training sets.
//! * [`nalr`] — neighborhood-adaptive linear regression: per target cell,
//!   the k most similar training patches are selected by cumulative absolute
//!   error and a 10-parameter linear model per high-resolution sub-cell is
//!   fitted on just those.
//! * [`baselines`] — global linear regression with a free-flow/congested
//!   regime split, and neighbor embedding with sum-to-one weights.
//! * [`metrics`] — MAE, MAPE, congestion-mask Jaccard similarity, SSIM, and
//!   gradient-magnitude similarity deviation.
//! * [`perturb`] — Gaussian noise injection, random missingness, and
//!   nine-cell mean imputation.

pub mod baselines;
pub mod error;
pub mod ingest;
mod linalg;
pub mod metrics;
pub mod nalr;
pub mod patches;
pub mod perturb;
pub mod tsgrid;

pub use error::{Error, Result};
