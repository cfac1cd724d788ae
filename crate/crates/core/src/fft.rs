//! Centered, unitary FFT helpers built on rustfft.
//!
//! Throughout the crate, k-space arrays are stored "centered": grid index
//! `j` corresponds to the signed spatial frequency `j - floor(n/2)`, so the
//! DC cell sits at index `floor(n/2)` (the 1-based center `floor(n/2 + 1)`
//! used in schedule coordinates). All transforms are unitary (scaled by
//! 1/sqrt(n) per axis) so Parseval holds exactly and operator adjoints stay
//! simple.

use ndarray::{Array3, ArrayViewMut1, Axis};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

struct PlanCache {
    forward: HashMap<usize, Arc<dyn Fft<f64>>>,
    inverse: HashMap<usize, Arc<dyn Fft<f64>>>,
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    static PLANS: OnceLock<Mutex<PlanCache>> = OnceLock::new();
    let mut cache = PLANS
        .get_or_init(|| {
            Mutex::new(PlanCache {
                forward: HashMap::new(),
                inverse: HashMap::new(),
            })
        })
        .lock()
        .unwrap();
    let map = if inverse {
        &mut cache.inverse
    } else {
        &mut cache.forward
    };
    map.entry(n)
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            if inverse {
                planner.plan_fft_inverse(n)
            } else {
                planner.plan_fft_forward(n)
            }
        })
        .clone()
}

/// In-place centered unitary FFT of a 1-D buffer.
///
/// Equivalent to `fftshift(fft(ifftshift(x))) / sqrt(n)`.
pub fn fft1_centered(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    if n < 2 {
        return;
    }
    let half = n / 2;
    buf.rotate_left(half); // ifftshift
    plan(n, inverse).process(buf);
    buf.rotate_right(half); // fftshift
    let scale = 1.0 / (n as f64).sqrt();
    for v in buf.iter_mut() {
        *v *= scale;
    }
}

fn transform_lane(mut lane: ArrayViewMut1<Complex64>, scratch: &mut Vec<Complex64>, inverse: bool) {
    scratch.clear();
    scratch.extend(lane.iter().cloned());
    fft1_centered(scratch, inverse);
    for (dst, src) in lane.iter_mut().zip(scratch.iter()) {
        *dst = *src;
    }
}

/// Centered unitary FFT of a 3-D volume along every axis, in place.
pub fn fft3_centered(vol: &mut Array3<Complex64>, inverse: bool) {
    for ax in 0..3 {
        let mut scratch = Vec::new();
        for lane in vol.lanes_mut(Axis(ax)) {
            transform_lane(lane, &mut scratch, inverse);
        }
    }
}

/// Centered unitary FFT along a single axis of a 3-D volume, in place.
pub fn fft3_axis_centered(vol: &mut Array3<Complex64>, axis: usize, inverse: bool) {
    let mut scratch = Vec::new();
    for lane in vol.lanes_mut(Axis(axis)) {
        transform_lane(lane, &mut scratch, inverse);
    }
}

/// Signed centered frequency for grid index `j` on an axis of length `n`.
#[inline]
pub fn centered_freq(j: usize, n: usize) -> f64 {
    j as f64 - (n / 2) as f64
}
