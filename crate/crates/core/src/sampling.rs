//! Pseudo-random variable-density Cartesian sampling schedule generation.
//!
//! Readout indices are first laid out in polar coordinates: the azimuthal
//! angle advances by the golden-ratio increment `2*pi*(2 - g_theta)` per
//! sample index (with a per-encoding offset of `(e-1)/E` of one increment),
//! while the radius advances by a second, mutually irrational constant
//! `g_r * r_max` modulo `r_max`. A nonlinear scaling `(r + c)^d - c^d`
//! shapes the sampling density before the polar points are rounded onto the
//! Cartesian `k_y`-`k_z` grid. Self-gating readouts through the grid center
//! are injected every `sg_interval` positions, displacing imaging readouts
//! so the total count stays fixed.

use crate::error::{FlowError, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

/// Golden ratio, (sqrt(5) + 1) / 2.
pub const G_THETA: f64 = 1.618033988749894848;

/// Angular increment between consecutive sample indices, 2*pi*(2 - g_theta).
pub const GOLDEN_ANGLE_RAD: f64 = 2.0 * PI * (2.0 - G_THETA);

/// Configuration for schedule generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    /// Phase-encode grid size (k_y), even, >= 4.
    pub n_y: usize,
    /// Slice-encode grid size (k_z), even, >= 4.
    pub n_z: usize,
    /// Number of velocity encodings (4 for the asymmetric four-point scheme).
    pub n_encodings: usize,
    /// Total readouts to schedule, self-gating lines included.
    pub n_readouts: usize,
    /// Self-gating period in readouts.
    pub sg_interval: usize,
    /// Density offset `c`; defaults to ((n_y*n_z)/4)^(1/4).
    pub density_offset: f64,
    /// Density exponent `d` (>= 1); 1 is uniform, larger is more centered.
    pub density_exponent: f64,
    /// Radial increment constant `g_r`; defaults to 35^(1/3).
    pub radial_increment: f64,
    /// Initial angle in radians.
    pub theta_0: f64,
    /// Initial radius in k-space index units, in [0, r_max).
    pub r_0: f64,
}

impl SamplingConfig {
    /// Config with the paper-style defaults for a given grid.
    pub fn with_defaults(n_y: usize, n_z: usize, n_encodings: usize, n_readouts: usize) -> Self {
        SamplingConfig {
            n_y,
            n_z,
            n_encodings,
            n_readouts,
            sg_interval: 9,
            density_offset: ((n_y * n_z) as f64 / 4.0).powf(0.25),
            density_exponent: 1.5,
            radial_increment: 35f64.cbrt(),
            theta_0: 0.0,
            r_0: 0.0,
        }
    }

    /// Maximum allowed radius: max(floor(n_y/2), floor(n_z/2)).
    pub fn r_max(&self) -> f64 {
        ((self.n_y / 2).max(self.n_z / 2)) as f64
    }

    /// Grid center in 1-based coordinates: (floor(n_y/2+1), floor(n_z/2+1)).
    pub fn center(&self) -> (usize, usize) {
        (self.n_y / 2 + 1, self.n_z / 2 + 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_y < 4 || self.n_y % 2 != 0 || self.n_z < 4 || self.n_z % 2 != 0 {
            return Err(FlowError::Config(format!(
                "grid must be even and >= 4 on both axes, got {}x{}",
                self.n_y, self.n_z
            )));
        }
        if self.n_encodings < 1 {
            return Err(FlowError::Config("need at least one encoding".into()));
        }
        if self.sg_interval < 2 {
            return Err(FlowError::Config("sg_interval must be >= 2".into()));
        }
        if self.density_exponent < 1.0 {
            return Err(FlowError::Config("density exponent must be >= 1".into()));
        }
        if self.density_offset <= 0.0 {
            return Err(FlowError::Config("density offset must be > 0".into()));
        }
        if !(0.0..self.r_max()).contains(&self.r_0) {
            return Err(FlowError::Config(format!(
                "r_0 = {} outside [0, r_max = {})",
                self.r_0,
                self.r_max()
            )));
        }
        Ok(())
    }
}

/// One scheduled readout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    /// Position in the readout stream, 0-based; acquisition time is `index * TR`.
    pub index: usize,
    /// Velocity encoding, 1-based in 1..=E (self-gating lines carry 1).
    pub encoding: usize,
    /// Phase-encode index, 1-based in [1, n_y].
    pub k_y: usize,
    /// Slice-encode index, 1-based in [1, n_z].
    pub k_z: usize,
    pub is_sg: bool,
}

/// Ordered readout schedule over the k_y-k_z grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingSchedule {
    pub entries: Vec<ScheduleEntry>,
    pub n_y: usize,
    pub n_z: usize,
    pub n_encodings: usize,
    pub sg_interval: usize,
}

impl SamplingSchedule {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of self-gating entries.
    pub fn sg_count(&self) -> usize {
        self.entries.iter().filter(|e| e.is_sg).count()
    }

    /// Acquisition times in seconds for a repetition time `tr`.
    pub fn times(&self, tr: f64) -> Vec<f64> {
        self.entries.iter().map(|e| e.index as f64 * tr).collect()
    }

    /// Serialize as CSV with columns i,e,ky,kz,is_sg.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.entries.len() * 16 + 16);
        out.push_str("i,e,ky,kz,is_sg\n");
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                e.index,
                e.encoding,
                e.k_y,
                e.k_z,
                if e.is_sg { 1 } else { 0 }
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Parse the CSV form; grid sizes and encoding count are recovered from
    /// the header context the caller holds, so they are passed in.
    pub fn from_csv(
        text: &str,
        n_y: usize,
        n_z: usize,
        n_encodings: usize,
        sg_interval: usize,
    ) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if lineno == 0 {
                if line.trim() != "i,e,ky,kz,is_sg" {
                    return Err(FlowError::Data(format!(
                        "schedule csv: unexpected header {line:?}"
                    )));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(FlowError::Data(format!(
                    "schedule csv line {}: expected 5 fields, got {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            let parse = |s: &str| -> Result<usize> {
                s.trim().parse::<usize>().map_err(|_| {
                    FlowError::Data(format!("schedule csv line {}: bad field {s:?}", lineno + 1))
                })
            };
            entries.push(ScheduleEntry {
                index: parse(fields[0])?,
                encoding: parse(fields[1])?,
                k_y: parse(fields[2])?,
                k_z: parse(fields[3])?,
                is_sg: parse(fields[4])? != 0,
            });
        }
        Ok(SamplingSchedule {
            entries,
            n_y,
            n_z,
            n_encodings,
            sg_interval,
        })
    }

    pub fn read_csv(
        path: &Path,
        n_y: usize,
        n_z: usize,
        n_encodings: usize,
        sg_interval: usize,
    ) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| FlowError::Data(format!("cannot read {}: {e}", path.display())))?;
        Self::from_csv(&text, n_y, n_z, n_encodings, sg_interval)
    }

    /// Per-encoding 2-D hit counts over the grid, imaging readouts only.
    pub fn density_histograms(&self) -> Vec<ndarray::Array2<f64>> {
        let mut hists =
            vec![ndarray::Array2::<f64>::zeros((self.n_y, self.n_z)); self.n_encodings];
        for e in self.entries.iter().filter(|e| !e.is_sg) {
            hists[e.encoding - 1][[e.k_y - 1, e.k_z - 1]] += 1.0;
        }
        hists
    }
}

/// Angle for sample index `i` and encoding `e` (1-based), reduced mod 2*pi.
pub fn next_angle(cfg: &SamplingConfig, i: usize, e: usize) -> f64 {
    let frac = (e as f64 - 1.0) / cfg.n_encodings as f64;
    let raw = GOLDEN_ANGLE_RAD * (i as f64 + frac) + cfg.theta_0;
    raw.rem_euclid(2.0 * PI)
}

/// Radial recurrence: mod(r_prev + g_r * r_max, r_max).
pub fn next_radius(cfg: &SamplingConfig, r_prev: f64) -> Result<f64> {
    let r_max = cfg.r_max();
    if !(0.0..r_max).contains(&r_prev) {
        return Err(FlowError::Config(format!(
            "radius {r_prev} outside [0, {r_max})"
        )));
    }
    Ok((r_prev + cfg.radial_increment * r_max).rem_euclid(r_max))
}

/// Variable-density scaling (r + c)^d - c^d; strictly increasing, 0 at r=0.
pub fn density_scale(cfg: &SamplingConfig, r: f64) -> f64 {
    (r + cfg.density_offset).powf(cfg.density_exponent)
        - cfg.density_offset.powf(cfg.density_exponent)
}

/// Generate the full schedule: golden-angle/irrational-radius imaging
/// readouts with self-gating lines injected every `sg_interval` positions.
pub fn generate_schedule(cfg: &SamplingConfig) -> Result<SamplingSchedule> {
    cfg.validate()?;
    let n_total = cfg.n_readouts;
    let n_sg = n_total.div_ceil(cfg.sg_interval);
    let n_imaging = n_total - n_sg;
    let n_angular = n_imaging.div_ceil(cfg.n_encodings);

    // realized radius sequence, one radius per angular index (shared by all
    // encodings of that index), then scaled and normalized by its own max
    let mut radii = Vec::with_capacity(n_angular);
    let mut r = cfg.r_0;
    for _ in 0..n_angular {
        radii.push(density_scale(cfg, r));
        r = next_radius(cfg, r)?;
    }
    let r_scale_max = radii.iter().cloned().fold(0.0f64, f64::max);

    let (cy, cz) = cfg.center();
    let ky_span = (cfg.n_y / 2).saturating_sub(1) as f64; // floor(n_y/2 - 1)
    let kz_span = (cfg.n_z / 2).saturating_sub(1) as f64;

    let mut entries = Vec::with_capacity(n_total);
    let mut imaging_counter = 0usize; // position in the imaging-only stream
    for index in 0..n_total {
        if index % cfg.sg_interval == 0 {
            entries.push(ScheduleEntry {
                index,
                encoding: 1,
                k_y: cy,
                k_z: cz,
                is_sg: true,
            });
            continue;
        }
        let ang_idx = imaging_counter / cfg.n_encodings;
        let enc = imaging_counter % cfg.n_encodings + 1;
        let theta = next_angle(cfg, ang_idx, enc);
        let rn = if r_scale_max > 0.0 {
            radii[ang_idx] / r_scale_max
        } else {
            0.0
        };
        let k_y = (rn * ky_span * theta.sin() + cy as f64).round() as usize;
        let k_z = (rn * kz_span * theta.cos() + cz as f64).round() as usize;
        entries.push(ScheduleEntry {
            index,
            encoding: enc,
            k_y,
            k_z,
            is_sg: false,
        });
        imaging_counter += 1;
    }

    Ok(SamplingSchedule {
        entries,
        n_y: cfg.n_y,
        n_z: cfg.n_z,
        n_encodings: cfg.n_encodings,
        sg_interval: cfg.sg_interval,
    })
}

/// Efficiency and acceleration figures of merit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FigureOfMerit {
    /// 100 * sum(W^2) / n_S over every schedule entry.
    pub efficiency_percent: f64,
    /// (n_M * n_frames * E) / sum(W^2) over imaging entries; pass weights
    /// with discarded readouts zeroed to account for binning losses.
    pub acceleration: f64,
}

/// Compute efficiency and acceleration for a schedule and per-readout weights.
///
/// `n_matrix` is the number of k_y-k_z matrix elements per frame (n_y*n_z).
pub fn figure_of_merit(
    schedule: &SamplingSchedule,
    weights: &[f64],
    n_matrix: usize,
    n_frames: usize,
    n_encodings: usize,
) -> Result<FigureOfMerit> {
    if schedule.is_empty() {
        return Err(FlowError::Config("empty schedule".into()));
    }
    if weights.len() != schedule.len() {
        return Err(FlowError::Config(format!(
            "weights length {} != schedule length {}",
            weights.len(),
            schedule.len()
        )));
    }
    for (k, w) in weights.iter().enumerate() {
        if !(0.0..=1.0).contains(w) {
            return Err(FlowError::Config(format!(
                "weight {w} at readout {k} outside [0, 1]"
            )));
        }
    }
    let n_s = schedule.len() as f64;
    let sum_all: f64 = weights.iter().map(|w| w * w).sum();
    let sum_imaging: f64 = schedule
        .entries
        .iter()
        .zip(weights)
        .filter(|(e, _)| !e.is_sg)
        .map(|(_, w)| w * w)
        .sum();
    let acceleration = if sum_imaging > 0.0 {
        (n_matrix * n_frames * n_encodings) as f64 / sum_imaging
    } else {
        f64::INFINITY
    };
    Ok(FigureOfMerit {
        efficiency_percent: 100.0 * sum_all / n_s,
        acceleration,
    })
}
