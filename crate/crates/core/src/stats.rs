//! Agreement statistics: Bland-Altman in percent error, paired t-test,
//! and Pearson correlation.
//!
//! Conventions: sample (n-1) standard deviation throughout; two-sided
//! p-values; limits of agreement reported as the 1.96*SD half-width.

use crate::error::{FlowError, Result};
use serde::{Deserialize, Serialize};

/// Two equal-length measurement vectors to be compared, `a` against the
/// reference `b`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairedMeasurements {
    pub label_a: String,
    pub label_b: String,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub units: String,
}

impl PairedMeasurements {
    pub fn new(label_a: &str, label_b: &str, a: Vec<f64>, b: Vec<f64>, units: &str) -> Result<Self> {
        if a.len() != b.len() {
            return Err(FlowError::Config(format!(
                "paired vectors differ in length: {} vs {}",
                a.len(),
                b.len()
            )));
        }
        if a.len() < 2 {
            return Err(FlowError::Config("need at least 2 pairs".into()));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(FlowError::Data("non-finite measurement value".into()));
        }
        Ok(PairedMeasurements {
            label_a: label_a.into(),
            label_b: label_b.into(),
            a,
            b,
            units: units.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n-1 denominator).
fn sample_stdev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() as f64 - 1.0)).sqrt()
}

/// Bland-Altman agreement in percent error against reference `b`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlandAltman {
    /// Mean percent error.
    pub bias_percent: f64,
    /// 1.96 * sample SD of the percent errors (half-width; report bias +/- loa).
    pub loa_percent: f64,
    pub percent_errors: Vec<f64>,
}

pub fn bland_altman(pm: &PairedMeasurements) -> Result<BlandAltman> {
    let mut errors = Vec::with_capacity(pm.len());
    for (k, (&a, &b)) in pm.a.iter().zip(&pm.b).enumerate() {
        if b == 0.0 {
            return Err(FlowError::Config(format!(
                "reference value is zero at pair {k} ({} vs {})",
                pm.label_a, pm.label_b
            )));
        }
        errors.push(100.0 * (a - b) / b);
    }
    Ok(BlandAltman {
        bias_percent: mean(&errors),
        loa_percent: 1.96 * sample_stdev(&errors),
        percent_errors: errors,
    })
}

/// Paired t-test result.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PairedTTest {
    pub t: f64,
    pub p_two_sided: f64,
    /// Set when the difference vector had zero variance and a nonzero mean,
    /// in which case `p_two_sided` is the limiting value 0.
    pub degenerate: bool,
}

pub fn paired_ttest(pm: &PairedMeasurements) -> Result<PairedTTest> {
    let n = pm.len();
    if n < 3 {
        return Err(FlowError::Config("paired t-test needs n >= 3".into()));
    }
    let d: Vec<f64> = pm.a.iter().zip(&pm.b).map(|(a, b)| a - b).collect();
    let md = mean(&d);
    let sd = sample_stdev(&d);
    if sd == 0.0 {
        return Ok(if md == 0.0 {
            PairedTTest {
                t: 0.0,
                p_two_sided: 1.0,
                degenerate: false,
            }
        } else {
            PairedTTest {
                t: f64::INFINITY * md.signum(),
                p_two_sided: 0.0,
                degenerate: true,
            }
        });
    }
    let t = md / (sd / (n as f64).sqrt());
    let df = (n - 1) as f64;
    let p = 2.0 * (1.0 - student_t_cdf(t.abs(), df));
    Ok(PairedTTest {
        t,
        p_two_sided: p.clamp(0.0, 1.0),
        degenerate: false,
    })
}

/// Pearson correlation coefficient.
pub fn pearson(pm: &PairedMeasurements) -> Result<f64> {
    let n = pm.len();
    if n < 3 {
        return Err(FlowError::Config("pearson needs n >= 3".into()));
    }
    let ma = mean(&pm.a);
    let mb = mean(&pm.b);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&a, &b) in pm.a.iter().zip(&pm.b) {
        sxy += (a - ma) * (b - mb);
        sxx += (a - ma) * (a - ma);
        syy += (b - mb) * (b - mb);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(FlowError::Numerical(
            "pearson undefined: zero variance input".into(),
        ));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// CDF of Student's t distribution with `df` degrees of freedom, via the
/// regularized incomplete beta function.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return if t > 0.0 { 1.0 } else { 0.0 };
    }
    let x = df / (df + t * t);
    let ib = 0.5 * incomplete_beta_reg(0.5 * df, 0.5, x);
    if t >= 0.0 {
        1.0 - ib
    } else {
        ib
    }
}

/// ln Gamma via the Lanczos approximation.
fn ln_gamma(x: f64) -> f64 {
    const G: [f64; 7] = [
        1.000000000190015,
        76.18009172947146,
        -86.50532032941677,
        24.01409824083091,
        -1.231739572450155,
        0.1208650973866179e-2,
        -0.5395239384953e-5,
    ];
    let mut sum = G[0];
    for (k, g) in G.iter().enumerate().skip(1) {
        sum += g / (x + k as f64);
    }
    let tmp = x + 5.5;
    (2.5066282746310005 * sum / x).ln() + (x + 0.5) * tmp.ln() - tmp
}

/// Regularized incomplete beta I_x(a, b) via Lentz's continued fraction.
fn incomplete_beta_reg(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    // use the symmetry that keeps the continued fraction convergent
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - incomplete_beta_reg(b, a, 1.0 - x)
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 1e-15;
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        // even step
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        // odd step
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}
