//! Amplitude estimation, simulated through its exact outcome law.
//!
//! Phase estimation with a size-`t` Fourier register on the Grover rotation
//! with eigenphases `±omega` returns `y` with probability given by the Fejér
//! kernel `sin²(π t Δ) / (t² sin²(π Δ))`, `Δ` the circular distance between
//! `y/t` and the phase. The estimate reported is `sin²(π y / t)`.

use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::Complex;
use rand::Rng;

use crate::distribution::{make_distribution, QueryLedger, ValueDistribution};
use crate::error::{Error, Result};
use crate::stats::median_in_place;

/// Grid-snapping tolerance for `omega * t`.
const GRID_SNAP: f64 = 1e-12;

/// Largest register size accepted by the dense circuit simulation.
pub const CIRCUIT_MAX_T: usize = 1 << 14;

/// Circuit amplitudes below this probability are treated as exact zeros.
const CIRCUIT_ZERO: f64 = 1e-24;

/// Per-run success probability of a single amplitude-estimation shot.
pub const AE_SUCCESS: f64 = 8.0 / (PI * PI);

/// An amplitude with its phase on a size-`t` grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhasePoint {
    pub a: f64,
    pub omega: f64,
    pub t: usize,
}

impl PhasePoint {
    pub fn new(a: f64, t: usize) -> Result<Self> {
        check_amplitude(a)?;
        if t == 0 {
            return Err(Error::param("amplitude estimation needs t >= 1"));
        }
        Ok(PhasePoint {
            a,
            omega: a.sqrt().asin() / PI,
            t,
        })
    }

    /// `omega * t` with near-integers snapped onto the grid.
    fn grid_position(&self) -> f64 {
        let x = self.omega * self.t as f64;
        let nearest = x.round();
        if (x - nearest).abs() < GRID_SNAP {
            nearest
        } else {
            x
        }
    }

    /// Probability of outcome `y` under the `+omega` eigenphase alone.
    fn one_sided_prob(&self, y: usize) -> f64 {
        let t = self.t as f64;
        let mut r = self.grid_position() - y as f64;
        r -= t * (r / t).round();
        fejer(r, self.t)
    }

    /// Law of the measured register `y`, mixing `±omega` equally.
    pub fn outcome_probs(&self) -> Vec<f64> {
        let t = self.t;
        let plus: Vec<f64> = (0..t).map(|y| self.one_sided_prob(y)).collect();
        (0..t)
            .map(|y| 0.5 * (plus[y] + plus[(t - y) % t]))
            .collect()
    }
}

fn check_amplitude(a: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&a) {
        return Err(Error::param(format!("amplitude {a} outside [0, 1]")));
    }
    Ok(())
}

/// Fejér kernel at offset `r` grid units: `sin²(π r) / (t² sin²(π r / t))`.
fn fejer(r: f64, t: usize) -> f64 {
    if r == 0.0 {
        return 1.0;
    }
    if r.fract() == 0.0 {
        return 0.0;
    }
    let t = t as f64;
    let num = (PI * r).sin();
    let den = t * (PI * r / t).sin();
    (num * num) / (den * den)
}

/// Estimate attached to outcome `y`. Uses `min(y, t - y)` so conjugate
/// outcomes produce bit-identical values.
pub fn estimate_for_outcome(y: usize, t: usize) -> f64 {
    let k = y.min(t - y);
    let s = (PI * k as f64 / t as f64).sin();
    s * s
}

/// Exact law of the amplitude-estimation output `ã` for amplitude `a`.
pub fn ae_outcome_distribution(a: f64, t: usize) -> Result<ValueDistribution> {
    let point = PhasePoint::new(a, t)?;
    // The conjugate phase gives outcome t - y where +omega gives y, and both
    // map to the same estimate, so the +omega law alone determines the output.
    make_distribution((0..t).map(|y| (estimate_for_outcome(y, t), point.one_sided_prob(y))))
}

/// Half-width of the interval that holds with probability at least `8/π²`.
pub fn ae_radius(a: f64, t: usize) -> f64 {
    let t = t as f64;
    2.0 * PI * (a * (1.0 - a)).sqrt() / t + PI * PI / (t * t)
}

/// Exact probability that `|ã - a| <= ae_radius(a, t)`.
pub fn ae_coverage(a: f64, t: usize) -> Result<f64> {
    let law = ae_outcome_distribution(a, t)?;
    let radius = ae_radius(a, t);
    Ok(law.mass_where(|v| (v - a).abs() <= radius + 1e-12))
}

fn draw_outcome<R: Rng + ?Sized>(point: &PhasePoint, rng: &mut R) -> usize {
    let t = point.t;
    let x = point.grid_position();
    let m = x.floor();
    let f = x - m;
    let base = m as i64;
    let wrap = |j: i64| (base + j).rem_euclid(t as i64) as usize;
    if f == 0.0 {
        return wrap(0);
    }
    // The conjugate phase is chosen by a fair coin; its outcome mirrors y.
    let conjugate = rng.random::<bool>();
    let u: f64 = rng.random();
    let num = (PI * f).sin().powi(2);
    let tf = t as f64;
    let mut acc = 0.0;
    let mut last = 0i64;
    // Walk outward from the nearest grid points, 0, 1, -1, 2, -2, ...
    for step in 0..t as i64 {
        let j = if step % 2 == 0 { -(step / 2) } else { step / 2 + 1 };
        let den = tf * (PI * (f - j as f64) / tf).sin();
        acc += num / (den * den);
        last = j;
        if acc > u {
            break;
        }
    }
    let y = wrap(last);
    if conjugate {
        (t - y) % t
    } else {
        y
    }
}

/// One amplitude-estimation run with `t` Grover iterations.
pub fn ae_sample<R: Rng + ?Sized>(
    a: f64,
    t: usize,
    rng: &mut R,
    ledger: &mut QueryLedger,
) -> Result<f64> {
    let point = PhasePoint::new(a, t)?;
    ledger.a_uses += 1;
    ledger.a_inv_uses += 1;
    ledger.state_copies += 1;
    ledger.reflection_uses += t as u64;
    Ok(estimate_for_outcome(draw_outcome(&point, rng), t))
}

/// Median of `reps` independent [`ae_sample`] runs.
pub fn ae_median<R: Rng + ?Sized>(
    a: f64,
    t: usize,
    reps: usize,
    rng: &mut R,
    ledger: &mut QueryLedger,
) -> Result<f64> {
    if reps.is_multiple_of(2) {
        return Err(Error::param(format!("median needs an odd repetition count, got {reps}")));
    }
    let mut draws = Vec::with_capacity(reps);
    for _ in 0..reps {
        draws.push(ae_sample(a, t, rng, ledger)?);
    }
    Ok(median_in_place(&mut draws))
}

/// Default repetition count for confidence `1 - delta`.
pub fn default_reps(delta: f64) -> Result<usize> {
    crate::stats::median_reps(1.0 - AE_SUCCESS, delta)
}

/// Dense phase-estimation circuit on the two-dimensional Grover rotation.
///
/// Builds `Σ_y |y⟩ Q^y |ψ⟩ / √t`, applies the inverse Fourier transform to
/// the register by direct summation and reads off the outcome law.
pub fn ae_circuit_distribution(a: f64, t: usize) -> Result<ValueDistribution> {
    check_amplitude(a)?;
    if t == 0 {
        return Err(Error::param("amplitude estimation needs t >= 1"));
    }
    if t > CIRCUIT_MAX_T {
        return Err(Error::CapExceeded {
            size: t,
            cap: CIRCUIT_MAX_T,
        });
    }
    let theta = a.sqrt().asin();
    let psi = [theta.cos(), theta.sin()];
    // Q = U V with V = I - 2|1⟩⟨1| and U = 2|ψ⟩⟨ψ| - I.
    let u = [
        [2.0 * psi[0] * psi[0] - 1.0, 2.0 * psi[0] * psi[1]],
        [2.0 * psi[1] * psi[0], 2.0 * psi[1] * psi[1] - 1.0],
    ];
    let q = [[u[0][0], -u[0][1]], [u[1][0], -u[1][1]]];
    let mut branch = Vec::with_capacity(t);
    let mut v = psi;
    for _ in 0..t {
        branch.push(v);
        v = [
            q[0][0] * v[0] + q[0][1] * v[1],
            q[1][0] * v[0] + q[1][1] * v[1],
        ];
    }
    let twiddle: Vec<Complex<f64>> = (0..t)
        .map(|j| Complex::from_polar(1.0, -2.0 * PI * j as f64 / t as f64))
        .collect();
    let norm = (t as f64).sqrt();
    let mut pairs = Vec::with_capacity(t);
    for k in 0..t {
        let mut amp = [Complex::new(0.0, 0.0); 2];
        for (y, b) in branch.iter().enumerate() {
            let w = twiddle[(y * k) % t];
            amp[0] += w * b[0];
            amp[1] += w * b[1];
        }
        let p = (amp[0].norm_sqr() + amp[1].norm_sqr()) / (norm * norm * t as f64);
        // Exact zeros come out as rounding residue near 1e-33.
        let p = if p < CIRCUIT_ZERO { 0.0 } else { p };
        pairs.push((estimate_for_outcome(k, t), p));
    }
    make_distribution(pairs)
}

/// Both sides of `|arcsin x - arcsin y| <= (π/2) √|x² - y²|`.
pub fn arcsin_gap_bound(x: f64, y: f64) -> Result<(f64, f64)> {
    for v in [x, y] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::param(format!("argument {v} outside [0, 1]")));
        }
    }
    let lhs = (x.asin() - y.asin()).abs();
    let rhs = PI / 2.0 * (x * x - y * y).abs().sqrt();
    Ok((lhs, rhs))
}

/// Upper bound on the total variation distance between the measured
/// outcome laws for amplitudes `mu_a` and `mu_b`.
pub fn measurement_tv_bound(mu_a: f64, mu_b: f64, t: usize) -> f64 {
    PI * PI / (2.0 * 3f64.sqrt()) * t as f64 * (mu_a - mu_b).abs().sqrt()
}

/// Exact total variation distance between the register laws of two amplitudes.
pub fn measurement_tv_exact(mu_a: f64, mu_b: f64, t: usize) -> Result<f64> {
    let pa = PhasePoint::new(mu_a, t)?.outcome_probs();
    let pb = PhasePoint::new(mu_b, t)?.outcome_probs();
    Ok(0.5 * pa.iter().zip(&pb).map(|(x, y)| (x - y).abs()).sum::<f64>())
}

/// Failure-probability bound for an algorithm with `t_uses` reflections run
/// on a subroutine whose output law moved by `gamma` in total variation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityBound {
    pub gamma: f64,
    pub t_uses: u64,
    pub bound: f64,
}

impl StabilityBound {
    pub fn new(gamma: f64, t_uses: u64) -> Result<Self> {
        if !(gamma >= 0.0) {
            return Err(Error::param(format!("gamma {gamma} must be nonnegative")));
        }
        let bound = 0.3 + PI * PI / 6f64.sqrt() * t_uses as f64 * gamma.sqrt();
        Ok(StabilityBound {
            gamma,
            t_uses,
            bound,
        })
    }
}

/// Amplitudes used to calibrate the error constant.
pub const CALIBRATION_AMPLITUDES: usize = 50;
/// Register sizes used to calibrate the error constant.
pub const CALIBRATION_TS: [usize; 9] = [4, 8, 16, 32, 64, 128, 256, 512, 1024];

/// Smallest radius around `a` holding at least `8/π²` of the outcome mass.
pub fn success_radius(a: f64, t: usize) -> Result<f64> {
    let law = ae_outcome_distribution(a, t)?;
    let mut by_distance: Vec<(f64, f64)> =
        law.support().iter().map(|&(v, p)| ((v - a).abs(), p)).collect();
    by_distance.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut acc = 0.0;
    for (dist, p) in by_distance {
        acc += p;
        if acc >= AE_SUCCESS - 1e-12 {
            return Ok(dist);
        }
    }
    Ok(1.0)
}

fn calibrate_c() -> f64 {
    let mut c: f64 = 0.0;
    for j in 0..CALIBRATION_AMPLITUDES {
        let a = j as f64 / (CALIBRATION_AMPLITUDES - 1) as f64;
        for &t in &CALIBRATION_TS {
            let r = success_radius(a, t).expect("calibration grid is valid");
            let tf = t as f64;
            c = c.max(r / (a.sqrt() / tf + 1.0 / (tf * tf)));
        }
    }
    c
}

/// Smallest `C` such that `|ã - a| <= C (√a/t + 1/t²)` holds with
/// probability at least `8/π²` across the calibration grid.
pub fn calibrated_c() -> f64 {
    static C: OnceLock<f64> = OnceLock::new();
    *C.get_or_init(calibrate_c)
}
