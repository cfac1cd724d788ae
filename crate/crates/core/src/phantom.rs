//! Digital pulsatile-flow phantom and multi-coil k-space acquisition.
//!
//! The scene is a static tissue ellipsoid plus a straight flow tube carrying
//! a pulsatile Poiseuille profile. Blood-pool intensity is modulated by the
//! cardiac waveform, the whole object translates along x with respiration,
//! and each velocity encoding maps velocity to phase as `pi * v / VENC` on
//! top of a smooth static background phase (encoding 1 is the
//! flow-compensated reference of the asymmetric four-point scheme).
//!
//! Tube geometry is voxelized with subcell supersampling: each voxel stores
//! the blood volume fraction and the volume-averaged velocity, so discrete
//! sums over a cross-section match the analytic Poiseuille integral closely.

use crate::error::{FlowError, Result};
use crate::fft::centered_freq;
use crate::sampling::SamplingSchedule;
use ndarray::{Array3, Array4};
use num_complex::Complex64;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Supersampling factor per axis for tube voxelization.
const TUBE_SUPERSAMPLE: usize = 4;

/// Axis selector for tube orientation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis3 {
    X,
    Y,
    Z,
}

impl Axis3 {
    pub fn index(self) -> usize {
        match self {
            Axis3::X => 0,
            Axis3::Y => 1,
            Axis3::Z => 2,
        }
    }
}

/// Respiratory drive waveform, normalized to [0, 1] with 0 = end-expiration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RespWaveform {
    /// 0.5 * (1 - cos(2 pi f t)): symmetric sinusoidal breathing.
    Sine,
    /// sin(pi f t)^4: dwells near end-expiration, realistic histogram.
    PowSine,
    /// Mix of the fundamental and its half-frequency.
    TwoTone,
}

impl RespWaveform {
    pub fn eval(self, f_hz: f64, t: f64) -> f64 {
        match self {
            RespWaveform::Sine => 0.5 * (1.0 - (2.0 * PI * f_hz * t).cos()),
            RespWaveform::PowSine => (PI * f_hz * t).sin().powi(4),
            RespWaveform::TwoTone => {
                let a = (PI * f_hz * t).sin().powi(4);
                let b = (0.5 * PI * f_hz * t).sin().powi(2);
                (0.7 * a + 0.3 * b).clamp(0.0, 1.0)
            }
        }
    }
}

/// Phantom and acquisition configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomConfig {
    /// Grid (n_x, n_y, n_z); x is the frequency-encode (readout) axis.
    pub grid: (usize, usize, usize),
    pub voxel_size_mm: f64,
    pub tube_axis: Axis3,
    /// Tube radius in voxels.
    pub tube_radius_vox: f64,
    /// Peak centerline velocity in cm/s at the waveform maximum.
    pub v_peak_cm_s: f64,
    pub venc_cm_s: f64,
    pub heart_rate_hz: f64,
    pub resp_rate_hz: f64,
    /// Peak respiratory displacement along x, in mm.
    pub resp_shift_mm: f64,
    pub resp_waveform: RespWaveform,
    /// Per-beat RR standard deviation in seconds.
    pub rr_jitter_s: f64,
    /// Extra per-beat RR scale factors: (beat index, scale).
    pub arrhythmia_beats: Vec<(usize, f64)>,
    pub n_coils: usize,
    /// Complex noise standard deviation relative to a unit-magnitude object;
    /// transforms are unitary, so image-domain noise matches and
    /// SNR ~ 1 / noise_sigma for unit tissue signal.
    pub noise_sigma: f64,
    pub tr_s: f64,
    pub duration_s: f64,
    /// Number of cardiac phases for the stored ground-truth fields.
    pub truth_bins: usize,
    pub seed: u64,
    /// When true, permits v_peak > venc for aliasing experiments.
    pub allow_aliasing: bool,
}

impl PhantomConfig {
    /// Desk-scale default: 32x32x8 grid, tube along z.
    pub fn desk(duration_s: f64, seed: u64) -> Self {
        PhantomConfig {
            grid: (32, 32, 8),
            voxel_size_mm: 2.5,
            tube_axis: Axis3::Z,
            tube_radius_vox: 8.0,
            v_peak_cm_s: 100.0,
            venc_cm_s: 150.0,
            heart_rate_hz: 1.25,
            resp_rate_hz: 0.25,
            resp_shift_mm: 6.0,
            resp_waveform: RespWaveform::PowSine,
            rr_jitter_s: 0.02,
            arrhythmia_beats: Vec::new(),
            n_coils: 4,
            noise_sigma: 0.05,
            tr_s: 0.004,
            duration_s,
            truth_bins: 8,
            seed,
            allow_aliasing: false,
        }
    }

    pub fn n_readouts(&self) -> usize {
        (self.duration_s / self.tr_s).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let (nx, ny, nz) = self.grid;
        if nx < 4 || ny < 4 || nz < 4 {
            return Err(FlowError::Config("grid axes must be >= 4".into()));
        }
        if self.v_peak_cm_s > self.venc_cm_s && !self.allow_aliasing {
            return Err(FlowError::Config(format!(
                "v_peak {} exceeds venc {} (set allow_aliasing for aliasing tests)",
                self.v_peak_cm_s, self.venc_cm_s
            )));
        }
        let (ca, cb, na, nb) = self.cross_section();
        let margin = self.tube_radius_vox;
        if ca < margin || cb < margin || ca > na as f64 - margin || cb > nb as f64 - margin {
            return Err(FlowError::Config("tube does not fit in grid".into()));
        }
        if self.n_coils == 0 {
            return Err(FlowError::Config("need at least one coil".into()));
        }
        if self.tr_s <= 0.0 || self.duration_s <= 0.0 {
            return Err(FlowError::Config("TR and duration must be positive".into()));
        }
        if self.truth_bins == 0 {
            return Err(FlowError::Config("truth_bins must be >= 1".into()));
        }
        Ok(())
    }

    /// Tube cross-section center/sizes: (center_a, center_b, n_a, n_b) over
    /// the two axes perpendicular to the tube.
    fn cross_section(&self) -> (f64, f64, usize, usize) {
        let (nx, ny, nz) = self.grid;
        match self.tube_axis {
            Axis3::X => (ny as f64 / 2.0, nz as f64 / 2.0, ny, nz),
            Axis3::Y => (nx as f64 / 2.0, nz as f64 / 2.0, nx, nz),
            Axis3::Z => (nx as f64 / 2.0, ny as f64 / 2.0, nx, ny),
        }
    }

    /// Cardiac waveform over normalized beat phase in [0, 1): a smooth
    /// systolic bump on a small diastolic baseline, range [0.1, 1.0].
    pub fn cardiac_waveform(phase: f64) -> f64 {
        const BASELINE: f64 = 0.1;
        const CENTER: f64 = 0.30;
        const SIGMA: f64 = 0.10;
        let mut p = phase.rem_euclid(1.0);
        if p > CENTER + 0.5 {
            p -= 1.0; // evaluate the bump on its nearer periodic side
        }
        let bump = (-((p - CENTER) * (p - CENTER)) / (2.0 * SIGMA * SIGMA)).exp();
        BASELINE + (1.0 - BASELINE) * bump
    }

    /// Mean of the cardiac waveform over one beat (midpoint quadrature; the
    /// waveform is smooth and periodic so this converges fast).
    pub fn cardiac_waveform_integral() -> f64 {
        let n = 100_000;
        (0..n)
            .map(|k| Self::cardiac_waveform((k as f64 + 0.5) / n as f64))
            .sum::<f64>()
            / n as f64
    }

    /// Maximum of the cardiac waveform over one beat.
    pub fn cardiac_waveform_max() -> f64 {
        (0..10_000)
            .map(|k| Self::cardiac_waveform(k as f64 / 10_000.0))
            .fold(0.0f64, f64::max)
    }
}

/// Beat-to-beat timing with jitter and optional arrhythmic beats.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BeatTrain {
    /// Beat start times; beat k spans [starts_s[k], starts_s[k+1]).
    pub starts_s: Vec<f64>,
    /// RR interval of beat k.
    pub rr_s: Vec<f64>,
}

impl BeatTrain {
    pub fn generate(cfg: &PhantomConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(u64::MAX); // beat timing independent of noise draws
        let rr0 = 1.0 / cfg.heart_rate_hz;
        let mut starts = vec![0.0];
        let mut rrs = Vec::new();
        let mut t = 0.0;
        let mut k = 0usize;
        while t < cfg.duration_s + rr0 {
            let jitter: f64 = rng.sample::<f64, _>(StandardNormal) * cfg.rr_jitter_s;
            let scale = cfg
                .arrhythmia_beats
                .iter()
                .find(|(idx, _)| *idx == k)
                .map(|(_, s)| *s)
                .unwrap_or(1.0);
            let rr = ((rr0 + jitter) * scale).max(0.2 * rr0);
            rrs.push(rr);
            t += rr;
            starts.push(t);
            k += 1;
        }
        BeatTrain {
            starts_s: starts,
            rr_s: rrs,
        }
    }

    /// Normalized cardiac phase in [0, 1) at time `t` (piecewise linear).
    pub fn phase_at(&self, t: f64) -> f64 {
        match self.starts_s.windows(2).position(|w| t >= w[0] && t < w[1]) {
            Some(k) => (t - self.starts_s[k]) / self.rr_s[k],
            None => {
                if t < self.starts_s[0] {
                    0.0
                } else {
                    let k = self.rr_s.len() - 1;
                    ((t - self.starts_s[k]) / self.rr_s[k]).min(0.999_999)
                }
            }
        }
    }
}

/// Voxelized tube geometry: per-voxel blood fraction and volume-averaged
/// velocity at unit waveform (centerline value = v_peak).
#[derive(Debug, Clone)]
pub struct TubeFields {
    pub fraction: Array3<f64>,
    pub velocity: Array3<f64>,
    /// Unit vector of the flow direction.
    pub direction: [f64; 3],
}

fn voxelize_tube(cfg: &PhantomConfig) -> TubeFields {
    let (nx, ny, nz) = cfg.grid;
    let (ca, cb, _, _) = cfg.cross_section();
    let a = cfg.tube_radius_vox;
    let mut fraction = Array3::<f64>::zeros((nx, ny, nz));
    let mut velocity = Array3::<f64>::zeros((nx, ny, nz));
    let s = TUBE_SUPERSAMPLE;
    let sub = 1.0 / s as f64;
    for ix in 0..nx {
        for iy in 0..ny {
            for iz in 0..nz {
                let (pa, pb) = match cfg.tube_axis {
                    Axis3::X => (iy as f64, iz as f64),
                    Axis3::Y => (ix as f64, iz as f64),
                    Axis3::Z => (ix as f64, iy as f64),
                };
                let d = ((pa + 0.5 - ca).powi(2) + (pb + 0.5 - cb).powi(2)).sqrt();
                if d > a + 1.0 {
                    continue;
                }
                let mut frac = 0.0;
                let mut vsum = 0.0;
                for sa in 0..s {
                    for sb in 0..s {
                        let qa = pa + (sa as f64 + 0.5) * sub;
                        let qb = pb + (sb as f64 + 0.5) * sub;
                        let rho2 = (qa - ca).powi(2) + (qb - cb).powi(2);
                        if rho2 < a * a {
                            frac += 1.0;
                            vsum += cfg.v_peak_cm_s * (1.0 - rho2 / (a * a));
                        }
                    }
                }
                let n_sub = (s * s) as f64;
                fraction[[ix, iy, iz]] = frac / n_sub;
                velocity[[ix, iy, iz]] = vsum / n_sub;
            }
        }
    }
    let direction = match cfg.tube_axis {
        Axis3::X => [1.0, 0.0, 0.0],
        Axis3::Y => [0.0, 1.0, 0.0],
        Axis3::Z => [0.0, 0.0, 1.0],
    };
    TubeFields {
        fraction,
        velocity,
        direction,
    }
}

/// Smooth static-tissue ellipsoid magnitude.
fn static_magnitude(cfg: &PhantomConfig) -> Array3<f64> {
    let (nx, ny, nz) = cfg.grid;
    let (cx, cy, cz) = (nx as f64 / 2.0, ny as f64 / 2.0, nz as f64 / 2.0);
    let (sx, sy, sz) = (0.40 * nx as f64, 0.42 * ny as f64, 0.42 * nz as f64);
    Array3::from_shape_fn((nx, ny, nz), |(x, y, z)| {
        let u = ((x as f64 - cx) / sx).powi(2)
            + ((y as f64 - cy) / sy).powi(2)
            + ((z as f64 - cz) / sz).powi(2);
        if u < 1.0 {
            0.6 * (1.0 - u).powf(0.25) // flat interior, soft edge
        } else {
            0.0
        }
    })
}

/// Smooth static background phase shared by all encodings.
fn background_phase(cfg: &PhantomConfig) -> Array3<f64> {
    let (nx, ny, nz) = cfg.grid;
    Array3::from_shape_fn((nx, ny, nz), |(x, y, z)| {
        let u = x as f64 / nx as f64 - 0.5;
        let v = y as f64 / ny as f64 - 0.5;
        let w = z as f64 / nz as f64 - 0.5;
        0.3 + 0.4 * u + 0.25 * v - 0.2 * w + 0.3 * u * v
    })
}

/// Synthetic coil maps: a ring of complex Gaussians with distinct smooth
/// phase ramps, `[coil][x][y][z]`.
pub fn synthetic_coil_maps(grid: (usize, usize, usize), n_coils: usize) -> Array4<Complex64> {
    let (nx, ny, nz) = grid;
    let mut maps = Array4::<Complex64>::zeros((n_coils, nx, ny, nz));
    for c in 0..n_coils {
        let ang = 2.0 * PI * c as f64 / n_coils as f64;
        let ccx = nx as f64 * (0.5 + 0.45 * ang.cos());
        let ccy = ny as f64 * (0.5 + 0.45 * ang.sin());
        let ccz = nz as f64 * 0.5;
        let sigma = 0.55 * nx.max(ny) as f64;
        for x in 0..nx {
            for y in 0..ny {
                for z in 0..nz {
                    let d2 = ((x as f64 - ccx) / sigma).powi(2)
                        + ((y as f64 - ccy) / sigma).powi(2)
                        + ((z as f64 - ccz) / (1.5 * sigma)).powi(2);
                    let mag = (-d2 * 0.5).exp();
                    let phase = 0.5 * ang
                        + 0.9 * PI * (x as f64 / nx as f64 - 0.5) * ang.sin()
                        + 0.7 * PI * (y as f64 / ny as f64 - 0.5) * ang.cos();
                    maps[[c, x, y, z]] = Complex64::from_polar(mag, phase);
                }
            }
        }
    }
    maps
}

/// Ground truth recorded during acquisition.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub beat_starts_s: Vec<f64>,
    /// Respiratory displacement in voxels, one value per readout.
    pub resp_shift_vox: Vec<f64>,
    /// Velocity fields in cm/s at bin-center phases, indexed
    /// `velocity[comp * truth_bins + bin]` with comp in 0..3 (x, y, z).
    pub velocity: Vec<Array3<f64>>,
    pub truth_bins: usize,
    /// Net flow through a tube cross-section over one nominal beat, mL.
    pub net_flow_ml: f64,
    /// Peak of the discrete velocity field times the waveform max, cm/s.
    pub peak_velocity_cm_s: f64,
    /// Peak volumetric flow rate over the beat, mL/s.
    pub peak_flow_ml_s: f64,
    pub tube_axis: Axis3,
    pub tube_radius_vox: f64,
}

/// Raw multi-coil acquisition along a schedule.
#[derive(Debug, Clone)]
pub struct RawAcquisition {
    pub grid: (usize, usize, usize),
    pub tr_s: f64,
    pub venc_cm_s: f64,
    pub n_encodings: usize,
    pub sg_interval: usize,
    pub n_coils: usize,
    pub voxel_size_mm: f64,
    pub schedule: SamplingSchedule,
    /// Complex samples, `[readout][coil][x]`.
    pub samples: Array3<Complex64>,
    pub truth: Option<GroundTruth>,
}

impl RawAcquisition {
    pub fn times(&self) -> Vec<f64> {
        self.schedule.times(self.tr_s)
    }
}

/// Scene evaluator shared by `simulate_object` and `acquire`.
pub struct PhantomScene {
    cfg: PhantomConfig,
    beats: BeatTrain,
    /// Tissue magnitude with the blood pool carved out: static * (1 - f).
    tissue_mag: Array3<f64>,
    tube: TubeFields,
    bg_phase: Array3<f64>,
    coils: Array4<Complex64>,
}

impl PhantomScene {
    pub fn new(cfg: &PhantomConfig) -> Result<Self> {
        cfg.validate()?;
        let beats = BeatTrain::generate(cfg);
        let tube = voxelize_tube(cfg);
        let mut tissue_mag = static_magnitude(cfg);
        ndarray::Zip::from(&mut tissue_mag)
            .and(&tube.fraction)
            .for_each(|m, &f| *m *= 1.0 - f);
        Ok(PhantomScene {
            beats,
            tissue_mag,
            tube,
            bg_phase: background_phase(cfg),
            coils: synthetic_coil_maps(cfg.grid, cfg.n_coils),
            cfg: cfg.clone(),
        })
    }

    pub fn config(&self) -> &PhantomConfig {
        &self.cfg
    }

    pub fn beats(&self) -> &BeatTrain {
        &self.beats
    }

    pub fn coil_maps(&self) -> &Array4<Complex64> {
        &self.coils
    }

    pub fn tube(&self) -> &TubeFields {
        &self.tube
    }

    /// Respiratory displacement in voxels at time `t`.
    pub fn resp_shift_vox(&self, t: f64) -> f64 {
        self.cfg.resp_shift_mm / self.cfg.voxel_size_mm
            * self.cfg.resp_waveform.eval(self.cfg.resp_rate_hz, t)
    }

    /// Complex object volume for one encoding at time `t`, before coils.
    fn object_at(&self, t: f64, encoding: usize) -> Array3<Complex64> {
        let unshifted = self.object_unshifted(t, encoding);
        shift_x_lerp(&unshifted, self.resp_shift_vox(t))
    }

    /// Voxel model: magnitude = tissue*(1-f) + blood(t)*f, phase = background
    /// plus `pi * v(r) * w(t) / venc` applied to the whole voxel, with v the
    /// volume-averaged Poiseuille profile. Velocity decoding of noiseless,
    /// fully sampled encodings is therefore exact.
    fn object_unshifted(&self, t: f64, encoding: usize) -> Array3<Complex64> {
        let w = PhantomConfig::cardiac_waveform(self.beats.phase_at(t));
        let blood_mag = 0.8 * (1.0 + 0.5 * w);
        let comp = encoding_component(encoding);
        let venc = self.cfg.venc_cm_s;
        let mut out = Array3::<Complex64>::zeros(self.cfg.grid);
        ndarray::Zip::indexed(&mut out).for_each(|(x, y, z), v| {
            let f = self.tube.fraction[[x, y, z]];
            let mag = self.tissue_mag[[x, y, z]] + blood_mag * f;
            let mut phase = self.bg_phase[[x, y, z]];
            if f > 0.0 {
                if let Some(d) = comp {
                    phase +=
                        PI * self.tube.velocity[[x, y, z]] * w * self.tube.direction[d] / venc;
                }
            }
            *v = Complex64::from_polar(mag, phase);
        });
        out
    }
}

fn encoding_component(encoding: usize) -> Option<usize> {
    match encoding {
        2 => Some(0),
        3 => Some(1),
        4 => Some(2),
        _ => None,
    }
}

/// Periodic sub-voxel shift along x by linear interpolation.
fn shift_x_lerp(vol: &Array3<Complex64>, shift: f64) -> Array3<Complex64> {
    if shift == 0.0 {
        return vol.clone();
    }
    let (nx, ny, nz) = vol.dim();
    let mut out = Array3::<Complex64>::zeros((nx, ny, nz));
    for x in 0..nx {
        // the value at destination x comes from source position x - shift
        let src = (x as f64 - shift).rem_euclid(nx as f64);
        let x0 = src.floor() as usize % nx;
        let x1 = (x0 + 1) % nx;
        let fr = src - src.floor();
        for y in 0..ny {
            for z in 0..nz {
                out[[x, y, z]] = vol[[x0, y, z]] * (1.0 - fr) + vol[[x1, y, z]] * fr;
            }
        }
    }
    out
}

/// Complex image volume for one encoding (1..=4) at time `t`.
pub fn simulate_object(scene: &PhantomScene, t: f64, encoding: usize) -> Result<Array3<Complex64>> {
    if !(0.0..=scene.cfg.duration_s).contains(&t) {
        return Err(FlowError::Config(format!(
            "time {t} outside [0, {}]",
            scene.cfg.duration_s
        )));
    }
    if !(1..=4).contains(&encoding) {
        return Err(FlowError::Config(format!("bad encoding {encoding}")));
    }
    Ok(scene.object_at(t, encoding))
}

/// Acquire multi-coil k-space samples along a schedule.
pub fn acquire(cfg: &PhantomConfig, schedule: &SamplingSchedule) -> Result<RawAcquisition> {
    let scene = PhantomScene::new(cfg)?;
    acquire_with_scene(&scene, schedule)
}

pub fn acquire_with_scene(
    scene: &PhantomScene,
    schedule: &SamplingSchedule,
) -> Result<RawAcquisition> {
    let cfg = &scene.cfg;
    let (nx, ny, nz) = cfg.grid;
    if schedule.n_y != ny || schedule.n_z != nz {
        return Err(FlowError::Config(format!(
            "schedule grid {}x{} does not match phantom {}x{}",
            schedule.n_y, schedule.n_z, ny, nz
        )));
    }
    let n_readouts = schedule.len();
    let n_coils = cfg.n_coils;
    let tr = cfg.tr_s;

    let lines: Vec<Vec<Complex64>> = schedule
        .entries
        .par_iter()
        .map(|entry| {
            let t = entry.index as f64 * tr;
            let obj = scene.object_at(t, entry.encoding);
            let mut out = vec![Complex64::new(0.0, 0.0); n_coils * nx];
            // separable phase-encode factors for this (ky, kz)
            let fy = centered_freq(entry.k_y - 1, ny);
            let fz = centered_freq(entry.k_z - 1, nz);
            let cy = (ny / 2) as f64;
            let cz = (nz / 2) as f64;
            let wy: Vec<Complex64> = (0..ny)
                .map(|y| Complex64::from_polar(1.0, -2.0 * PI * (y as f64 - cy) * fy / ny as f64))
                .collect();
            let wz: Vec<Complex64> = (0..nz)
                .map(|z| Complex64::from_polar(1.0, -2.0 * PI * (z as f64 - cz) * fz / nz as f64))
                .collect();
            let norm = 1.0 / ((ny * nz) as f64).sqrt();
            for c in 0..n_coils {
                let line = &mut out[c * nx..(c + 1) * nx];
                for (x, lx) in line.iter_mut().enumerate() {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for y in 0..ny {
                        let wyv = wy[y];
                        for z in 0..nz {
                            acc += obj[[x, y, z]] * scene.coils[[c, x, y, z]] * wyv * wz[z];
                        }
                    }
                    *lx = acc * norm;
                }
                crate::fft::fft1_centered(line, false);
            }
            if cfg.noise_sigma > 0.0 {
                // deterministic per-readout noise stream
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(entry.index as u64);
                let s = cfg.noise_sigma / 2f64.sqrt();
                for v in out.iter_mut() {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    *v += Complex64::new(re * s, im * s);
                }
            }
            out
        })
        .collect();

    let mut samples = Array3::<Complex64>::zeros((n_readouts, n_coils, nx));
    for (k, line) in lines.into_iter().enumerate() {
        for c in 0..n_coils {
            for x in 0..nx {
                samples[[k, c, x]] = line[c * nx + x];
            }
        }
    }

    let truth = build_ground_truth(scene, schedule);
    Ok(RawAcquisition {
        grid: cfg.grid,
        tr_s: cfg.tr_s,
        venc_cm_s: cfg.venc_cm_s,
        n_encodings: schedule.n_encodings,
        sg_interval: schedule.sg_interval,
        n_coils,
        voxel_size_mm: cfg.voxel_size_mm,
        schedule: schedule.clone(),
        samples,
        truth: Some(truth),
    })
}

fn build_ground_truth(scene: &PhantomScene, schedule: &SamplingSchedule) -> GroundTruth {
    let cfg = &scene.cfg;
    let resp: Vec<f64> = schedule
        .entries
        .iter()
        .map(|e| scene.resp_shift_vox(e.index as f64 * cfg.tr_s))
        .collect();
    let n_bins = cfg.truth_bins;
    let mut velocity = Vec::with_capacity(3 * n_bins);
    for comp in 0..3 {
        for b in 0..n_bins {
            let phase = (b as f64 + 0.5) / n_bins as f64;
            let w = PhantomConfig::cardiac_waveform(phase);
            let dir = scene.tube.direction[comp];
            velocity.push(scene.tube.velocity.mapv(|v| v * w * dir));
        }
    }

    // discrete cross-section flow at unit waveform; the velocity field is
    // volume averaged, so the plain voxel sum tracks the analytic integral
    let area_mm2 = cfg.voxel_size_mm * cfg.voxel_size_mm;
    let q_unit_ml_s = cross_section_velocity_sum(scene) * area_mm2 * 0.01; // cm/s * mm^2 -> mL/s
    let w_int = PhantomConfig::cardiac_waveform_integral();
    let w_max = PhantomConfig::cardiac_waveform_max();
    let rr0 = 1.0 / cfg.heart_rate_hz;
    let peak_velocity = scene.tube.velocity.iter().cloned().fold(0.0f64, f64::max) * w_max;
    GroundTruth {
        beat_starts_s: scene.beats.starts_s.clone(),
        resp_shift_vox: resp,
        velocity,
        truth_bins: n_bins,
        net_flow_ml: q_unit_ml_s * w_int * rr0,
        peak_velocity_cm_s: peak_velocity,
        peak_flow_ml_s: q_unit_ml_s * w_max,
        tube_axis: cfg.tube_axis,
        tube_radius_vox: cfg.tube_radius_vox,
    }
}

/// Sum of the velocity field over one cross-section perpendicular to the
/// tube axis.
fn cross_section_velocity_sum(scene: &PhantomScene) -> f64 {
    let (nx, ny, nz) = scene.cfg.grid;
    let v = &scene.tube.velocity;
    let mut sum = 0.0;
    match scene.cfg.tube_axis {
        Axis3::X => {
            let x = nx / 2;
            for y in 0..ny {
                for z in 0..nz {
                    sum += v[[x, y, z]];
                }
            }
        }
        Axis3::Y => {
            let y = ny / 2;
            for x in 0..nx {
                for z in 0..nz {
                    sum += v[[x, y, z]];
                }
            }
        }
        Axis3::Z => {
            let z = nz / 2;
            for x in 0..nx {
                for y in 0..ny {
                    sum += v[[x, y, z]];
                }
            }
        }
    }
    sum
}

/// Analytic Poiseuille flow at unit waveform, v_peak * pi * a^2 / 2, in mL/s.
pub fn analytic_poiseuille_flow_ml_s(cfg: &PhantomConfig) -> f64 {
    let a_mm = cfg.tube_radius_vox * cfg.voxel_size_mm;
    cfg.v_peak_cm_s * PI * a_mm * a_mm / 2.0 * 0.01
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{generate_schedule, SamplingConfig, SamplingSchedule, ScheduleEntry};

    fn small_cfg() -> PhantomConfig {
        let mut cfg = PhantomConfig::desk(2.0, 7);
        cfg.grid = (16, 16, 8);
        cfg.tube_radius_vox = 4.0;
        cfg.resp_shift_mm = 2.5; // one voxel; keeps the object off the FOV edge
        cfg.noise_sigma = 0.0;
        cfg
    }

    /// Every (ky, kz) cell once, all at stream index 0 so the scene is
    /// sampled as a single time snapshot.
    fn full_sampling_schedule(ny: usize, nz: usize) -> SamplingSchedule {
        let mut entries = Vec::new();
        for ky in 1..=ny {
            for kz in 1..=nz {
                entries.push(ScheduleEntry {
                    index: 0,
                    encoding: 1,
                    k_y: ky,
                    k_z: kz,
                    is_sg: false,
                });
            }
        }
        SamplingSchedule {
            entries,
            n_y: ny,
            n_z: nz,
            n_encodings: 1,
            sg_interval: usize::MAX,
        }
    }

    #[test]
    fn zero_flow_means_identical_phases() {
        let mut cfg = small_cfg();
        cfg.v_peak_cm_s = 0.0;
        let scene = PhantomScene::new(&cfg).unwrap();
        let e1 = simulate_object(&scene, 0.27, 1).unwrap();
        for e in 2..=4 {
            let ee = simulate_object(&scene, 0.27, e).unwrap();
            for (a, b) in e1.iter().zip(ee.iter()) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn phase_difference_matches_programmed_velocity() {
        let mut cfg = small_cfg();
        cfg.resp_shift_mm = 0.0;
        cfg.rr_jitter_s = 0.0;
        let scene = PhantomScene::new(&cfg).unwrap();
        let t = 0.30 / cfg.heart_rate_hz; // systolic bump center of beat 0
        let (nx, ny, nz) = cfg.grid;
        let c = [nx / 2, ny / 2, nz / 2];
        let e1 = simulate_object(&scene, t, 1).unwrap();
        let e4 = simulate_object(&scene, t, 4).unwrap(); // z = tube axis
        let dphi = (e4[[c[0], c[1], c[2]]] * e1[[c[0], c[1], c[2]]].conj()).arg();
        let w = PhantomConfig::cardiac_waveform(scene.beats().phase_at(t));
        let v_expect = scene.tube().velocity[[c[0], c[1], c[2]]] * w;
        let v_decoded = dphi * cfg.venc_cm_s / PI;
        // pointwise phase model: decoding the analytic encodings is exact
        assert!(
            (v_decoded - v_expect).abs() < 1e-9,
            "decoded {v_decoded} vs {v_expect}"
        );
        // whole-field consistency at the same instant
        let mut max_err = 0.0f64;
        for x in 0..nx {
            for y in 0..ny {
                for z in 0..nz {
                    let d = (e4[[x, y, z]] * e1[[x, y, z]].conj()).arg();
                    let vd = d * cfg.venc_cm_s / PI;
                    let ve = scene.tube().velocity[[x, y, z]] * w;
                    max_err = max_err.max((vd - ve).abs());
                }
            }
        }
        assert!(max_err < 0.01 * cfg.venc_cm_s, "max decode err {max_err}");
    }

    #[test]
    fn phase_model_reaches_pi_at_venc() {
        // the encode map itself: v = venc corresponds to a phase of exactly pi
        let venc = 150.0;
        let phase = PI * venc / venc;
        assert!((phase - PI).abs() < 1e-15);
        // and the tube phase term uses that same map at voxel level
        let mut cfg = small_cfg();
        cfg.v_peak_cm_s = cfg.venc_cm_s;
        assert!(PhantomScene::new(&cfg).is_ok());
    }

    #[test]
    fn full_sampling_inverts_to_object() {
        let mut cfg = small_cfg();
        cfg.v_peak_cm_s = 0.0; // static scene
        cfg.resp_shift_mm = 0.0;
        cfg.n_coils = 1;
        let (nx, ny, nz) = cfg.grid;
        let scene = PhantomScene::new(&cfg).unwrap();
        let acq = acquire_with_scene(&scene, &full_sampling_schedule(ny, nz)).unwrap();

        let mut kspace = Array3::<Complex64>::zeros((nx, ny, nz));
        for (k, e) in acq.schedule.entries.iter().enumerate() {
            for x in 0..nx {
                kspace[[x, e.k_y - 1, e.k_z - 1]] = acq.samples[[k, 0, x]];
            }
        }
        let mut img = kspace;
        crate::fft::fft3_centered(&mut img, true);
        let obj = simulate_object(&scene, 0.0, 1).unwrap();
        let coil = scene.coil_maps();
        let mut num = 0.0;
        let mut den = 0.0;
        for x in 0..nx {
            for y in 0..ny {
                for z in 0..nz {
                    let expect = obj[[x, y, z]] * coil[[0, x, y, z]];
                    num += (img[[x, y, z]] - expect).norm_sqr();
                    den += expect.norm_sqr();
                }
            }
        }
        assert!((num / den).sqrt() < 1e-6, "rel err {}", (num / den).sqrt());
    }

    #[test]
    fn parseval_on_full_sampling() {
        let mut cfg = small_cfg();
        cfg.v_peak_cm_s = 0.0;
        cfg.resp_shift_mm = 0.0;
        cfg.n_coils = 1;
        let (nx, ny, nz) = cfg.grid;
        let scene = PhantomScene::new(&cfg).unwrap();
        let acq = acquire_with_scene(&scene, &full_sampling_schedule(ny, nz)).unwrap();
        let obj = simulate_object(&scene, 0.0, 1).unwrap();
        let coil = scene.coil_maps();
        let mut e_img = 0.0;
        for x in 0..nx {
            for y in 0..ny {
                for z in 0..nz {
                    e_img += (obj[[x, y, z]] * coil[[0, x, y, z]]).norm_sqr();
                }
            }
        }
        let e_k: f64 = acq.samples.iter().map(|v| v.norm_sqr()).sum();
        assert!(((e_img - e_k) / e_img).abs() < 1e-6);
    }

    #[test]
    fn deterministic_acquisition() {
        let mut cfg = small_cfg();
        cfg.noise_sigma = 0.05;
        let mut sc = SamplingConfig::with_defaults(16, 8, 4, 300);
        sc.sg_interval = 9;
        let sched = generate_schedule(&sc).unwrap();
        let a = acquire(&cfg, &sched).unwrap();
        let b = acquire(&cfg, &sched).unwrap();
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn sg_line_sees_cardiac_and_resp_frequencies() {
        let mut cfg = small_cfg();
        cfg.duration_s = 40.0;
        cfg.rr_jitter_s = 0.0;
        cfg.resp_waveform = RespWaveform::Sine;
        let mut sc = SamplingConfig::with_defaults(16, 8, 4, cfg.n_readouts());
        sc.sg_interval = 9;
        let sched = generate_schedule(&sc).unwrap();
        let acq = acquire(&cfg, &sched).unwrap();

        let (nx, _, _) = cfg.grid;
        let sg: Vec<f64> = acq
            .schedule
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.is_sg)
            .map(|(k, _)| {
                (0..cfg.n_coils)
                    .map(|c| acq.samples[[k, c, nx / 2]].norm())
                    .sum()
            })
            .collect();
        let n = sg.len();
        let mean = sg.iter().sum::<f64>() / n as f64;
        let fs = 1.0 / (9.0 * cfg.tr_s);
        let power = |f: f64| -> f64 {
            let mut re = 0.0;
            let mut im = 0.0;
            for (k, m) in sg.iter().enumerate() {
                let ph = 2.0 * PI * f * k as f64 / fs;
                re += (m - mean) * ph.cos();
                im += (m - mean) * ph.sin();
            }
            re * re + im * im
        };
        let p_card = power(cfg.heart_rate_hz);
        let p_resp = power(cfg.resp_rate_hz);
        let p_bg = (power(0.61) + power(2.13) + power(0.97)) / 3.0;
        assert!(p_card > 10.0 * p_bg, "cardiac peak weak: {p_card} vs {p_bg}");
        assert!(p_resp > 10.0 * p_bg, "resp peak weak: {p_resp} vs {p_bg}");
    }

    #[test]
    fn ground_truth_flow_matches_analytic_poiseuille() {
        let cfg = PhantomConfig::desk(2.0, 3);
        let scene = PhantomScene::new(&cfg).unwrap();
        let mut sc = SamplingConfig::with_defaults(32, 8, 4, 100);
        sc.sg_interval = 9;
        let sched = generate_schedule(&sc).unwrap();
        let acq = acquire_with_scene(&scene, &sched).unwrap();
        let truth = acq.truth.unwrap();
        let q_analytic = analytic_poiseuille_flow_ml_s(&cfg);
        let w_int = PhantomConfig::cardiac_waveform_integral();
        let net_analytic = q_analytic * w_int / cfg.heart_rate_hz;
        let rel = (truth.net_flow_ml - net_analytic).abs() / net_analytic;
        assert!(rel < 0.005, "net flow off by {:.3}%", rel * 100.0);
    }

    #[test]
    fn resp_displacement_recoverable_from_projections() {
        let mut cfg = small_cfg();
        cfg.duration_s = 20.0;
        cfg.resp_waveform = RespWaveform::Sine;
        cfg.v_peak_cm_s = 0.0; // isolate respiration
        let mut sc = SamplingConfig::with_defaults(16, 8, 1, cfg.n_readouts());
        sc.sg_interval = 9;
        let sched = generate_schedule(&sc).unwrap();
        let acq = acquire(&cfg, &sched).unwrap();
        let truth = acq.truth.as_ref().unwrap();
        let (nx, _, _) = cfg.grid;

        // center-of-mass of each SG projection tracks the shift
        let mut shifts = Vec::new();
        let mut truth_shifts = Vec::new();
        for (k, e) in acq.schedule.entries.iter().enumerate() {
            if !e.is_sg {
                continue;
            }
            let mut line: Vec<Complex64> = (0..nx).map(|x| acq.samples[[k, 0, x]]).collect();
            crate::fft::fft1_centered(&mut line, true);
            let mags: Vec<f64> = line.iter().map(|v| v.norm()).collect();
            let tot: f64 = mags.iter().sum();
            let com = mags
                .iter()
                .enumerate()
                .map(|(x, m)| x as f64 * m)
                .sum::<f64>()
                / tot;
            shifts.push(com);
            truth_shifts.push(truth.resp_shift_vox[k]);
        }
        let n = shifts.len() as f64;
        let ms = shifts.iter().sum::<f64>() / n;
        let mt = truth_shifts.iter().sum::<f64>() / n;
        let mut sxy = 0.0;
        let mut sxx = 0.0;
        let mut syy = 0.0;
        for (s, t) in shifts.iter().zip(&truth_shifts) {
            sxy += (s - ms) * (t - mt);
            sxx += (s - ms) * (s - ms);
            syy += (t - mt) * (t - mt);
        }
        let r = sxy / (sxx * syy).sqrt();
        assert!(r >= 0.95, "correlation {r}");
    }

    #[test]
    fn mismatched_grid_is_error() {
        let cfg = small_cfg();
        let sched = generate_schedule(&SamplingConfig::with_defaults(32, 32, 4, 100)).unwrap();
        assert!(acquire(&cfg, &sched).is_err());
    }

    #[test]
    fn aliasing_requires_flag() {
        let mut cfg = small_cfg();
        cfg.v_peak_cm_s = 2.0 * cfg.venc_cm_s;
        assert!(PhantomScene::new(&cfg).is_err());
        cfg.allow_aliasing = true;
        assert!(PhantomScene::new(&cfg).is_ok());
    }
}
