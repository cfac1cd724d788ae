//! Self-gated whole-heart 4D-flow pipeline at desk scale.
//!
//! The crate covers the full chain from sampling-schedule generation to flow
//! statistics, validated against a synthetic pulsatile-flow phantom with
//! known ground truth:
//!
//! - [`sampling`]: pseudo-random variable-density Cartesian schedules with
//!   interleaved self-gating lines, plus efficiency/acceleration figures.
//! - [`phantom`]: digital pulsatile-flow phantom and multi-coil k-space
//!   acquisition along a schedule.
//! - [`gating`]: cardiac/respiratory surrogate extraction, trigger
//!   detection, arrhythmia rejection, and soft-gating weights.
//! - [`binning`]: cardiac-phase binning and weighted k-space assembly.
//! - [`recon`]: coil-sensitivity estimation and wavelet-regularized
//!   SENSE reconstruction solved with a monotone FISTA.
//! - [`flow`]: velocity decoding, phase unwrapping, background correction,
//!   and flow quantification over analysis planes.
//! - [`stats`]: Bland-Altman, paired t-test, and Pearson statistics.
//! - [`pipeline`]: end-to-end orchestration with persisted artifacts.

pub mod binning;
pub mod error;
pub mod fft;
pub mod flow;
pub mod gating;
pub mod io;
pub mod phantom;
pub mod pipeline;
pub mod recon;
pub mod sampling;
pub mod stats;
pub mod svg;

pub use error::{FlowError, Result};
