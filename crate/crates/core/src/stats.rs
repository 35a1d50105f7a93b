//! Small numeric helpers: binomial tails, median amplification, slope fits.

use crate::error::{Error, Result};

/// Largest repetition count considered by [`median_reps`].
pub const MAX_REPS: usize = 100_001;

/// `P[Bin(n, p) >= k]`, summed from the lower tail upwards.
pub fn binomial_upper_tail(n: usize, k: usize, p: f64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > n {
        return 0.0;
    }
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    // Work in log space so large n does not underflow the first term.
    let (lp, lq) = (p.ln(), (1.0 - p).ln());
    let mut log_pmf = n as f64 * lq;
    let mut tail = 0.0;
    for i in 0..=n {
        if i >= k {
            tail += log_pmf.exp();
        }
        if i < n {
            log_pmf += ((n - i) as f64).ln() - ((i + 1) as f64).ln() + lp - lq;
        }
    }
    tail.min(1.0)
}

/// Probability that the median of `n` (odd) independent runs fails, when
/// each run fails independently with probability `gamma`.
pub fn median_failure(n: usize, gamma: f64) -> f64 {
    binomial_upper_tail(n, n.div_ceil(2), gamma)
}

/// Smallest odd `n` with `P[Bin(n, gamma) >= (n+1)/2] <= delta`.
pub fn median_reps(gamma: f64, delta: f64) -> Result<usize> {
    if !(0.0..0.5).contains(&gamma) {
        return Err(Error::param(format!(
            "per-run failure probability {gamma} must lie in [0, 1/2)"
        )));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::param(format!("delta {delta} must lie in (0, 1)")));
    }
    let mut n = 1;
    while n <= MAX_REPS {
        // relative slack absorbs rounding in the log-space tail
        if median_failure(n, gamma) <= delta * (1.0 + 1e-12) {
            return Ok(n);
        }
        n += 2;
    }
    Err(Error::param(format!(
        "delta {delta} needs more than {MAX_REPS} repetitions at gamma {gamma}"
    )))
}

/// Median of an odd-length sample. Sorts in place.
pub fn median_in_place(values: &mut [f64]) -> f64 {
    assert!(values.len() % 2 == 1, "median of an even-length sample");
    values.sort_by(f64::total_cmp);
    values[values.len() / 2]
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Standard deviation of the empirical frequency of an event of
/// probability `p` over `trials` runs.
pub fn binomial_sigma(p: f64, trials: usize) -> f64 {
    (p * (1.0 - p) / trials as f64).sqrt()
}
