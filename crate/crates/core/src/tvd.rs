//! Total variation distance between two distributions on `n` points.
//!
//! The distance is the mean of `d(x) = |p(x) - q(x)|/(p(x) + q(x))` for `x`
//! drawn from `r = (p + q)/2`. The subroutine replaces `p(x)`, `q(x)` by
//! median-amplified amplitude estimates with `t = ⌈20π√(n/ε)⌉` iterations,
//! and the bounded mean estimator averages its output.

use std::f64::consts::PI;

use rand::Rng;
use serde::Serialize;

use crate::amplitude::{ae_outcome_distribution, AE_SUCCESS};
use crate::distribution::{make_distribution, QueryLedger, ValueDistribution};
use crate::error::{Error, Result};
use crate::mean::{bounded_t_for_epsilon, estimate_mean_bounded, Constants, Estimate};
use crate::stats::{binomial_upper_tail, median_reps};

fn check_probabilities(name: &str, p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::InvalidDistribution(format!("{name} is empty")));
    }
    if p.iter().any(|&x| !(x.is_finite() && x >= 0.0)) {
        return Err(Error::InvalidDistribution(format!("{name} has a negative or non-finite entry")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidDistribution(format!("{name} sums to {total}")));
    }
    Ok(())
}

fn check_pair(p: &[f64], q: &[f64]) -> Result<()> {
    check_probabilities("p", p)?;
    check_probabilities("q", q)?;
    if p.len() != q.len() {
        return Err(Error::InvalidDistribution(format!(
            "p has {} entries but q has {}",
            p.len(),
            q.len()
        )));
    }
    Ok(())
}

/// `(1/2) Σ |p(x) - q(x)|`.
pub fn exact_tvd(p: &[f64], q: &[f64]) -> Result<f64> {
    check_pair(p, q)?;
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// `|a - b|/(a + b)`, with `0/0 = 0`.
fn ratio_gap(a: f64, b: f64) -> f64 {
    let s = a + b;
    if s > 0.0 {
        (a - b).abs() / s
    } else {
        0.0
    }
}

/// Law of the median of `reps` independent draws from `d`.
fn median_law(d: &ValueDistribution, reps: usize) -> Vec<(f64, f64)> {
    let need = reps.div_ceil(2);
    let mut below = 0.0;
    let mut cum = 0.0;
    let mut out = Vec::with_capacity(d.len());
    for &(v, p) in d.support() {
        cum += p;
        let at_most = binomial_upper_tail(reps, need, cum.min(1.0));
        let mass = (at_most - below).max(0.0);
        below = at_most;
        if mass > 0.0 {
            out.push((v, mass));
        }
    }
    out
}

/// Diagnostics for one point `x` with `r(x) > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ElementReport {
    pub index: usize,
    pub r: f64,
    pub d: f64,
    /// `E[d̃(x)]`.
    pub expected_estimate: f64,
    /// `E[|d̃(x) - d(x)|]`.
    pub expected_abs_error: f64,
}

/// A pair of distributions together with the subroutine's internal accuracy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TvdInstance {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    /// Internal accuracy `ε` of the subroutine.
    pub epsilon: f64,
    /// Amplitude-estimation iterations per probability estimate.
    pub t: usize,
    /// Runs whose median forms each probability estimate.
    pub reps: usize,
}

impl TvdInstance {
    /// Uses `t = ⌈20π√(n/ε)⌉` and enough runs per estimate to fail with
    /// probability at most `ε`.
    pub fn new(p: Vec<f64>, q: Vec<f64>, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::param(format!("epsilon {epsilon} must lie in (0, 1)")));
        }
        let t = (20.0 * PI * (p.len() as f64 / epsilon).sqrt()).ceil() as usize;
        let reps = median_reps(1.0 - AE_SUCCESS, epsilon)?;
        TvdInstance::with_iterations(p, q, epsilon, t, reps)
    }

    /// An instance with explicit `t` and repetition count.
    pub fn with_iterations(p: Vec<f64>, q: Vec<f64>, epsilon: f64, t: usize, reps: usize) -> Result<Self> {
        check_pair(&p, &q)?;
        if t == 0 || reps.is_multiple_of(2) {
            return Err(Error::param(format!("need t >= 1 and odd reps, got t = {t}, reps = {reps}")));
        }
        let r = p.iter().zip(&q).map(|(a, b)| 0.5 * (a + b)).collect();
        Ok(TvdInstance {
            p,
            q,
            r,
            epsilon,
            t,
            reps,
        })
    }

    pub fn n(&self) -> usize {
        self.p.len()
    }

    /// Laws of `p̃(x)` and `q̃(x)`, ordered so that swapping `p` and `q`
    /// gives bit-identical results.
    fn estimate_laws(&self, x: usize) -> Result<(Vec<(f64, f64)>, Vec<(f64, f64)>)> {
        let (lo, hi) = if self.p[x] <= self.q[x] {
            (self.p[x], self.q[x])
        } else {
            (self.q[x], self.p[x])
        };
        let a = median_law(&ae_outcome_distribution(lo, self.t)?, self.reps);
        let b = median_law(&ae_outcome_distribution(hi, self.t)?, self.reps);
        Ok((a, b))
    }

    /// Per-point expectations of the estimated ratio and its error.
    pub fn element_reports(&self) -> Result<Vec<ElementReport>> {
        let mut out = Vec::new();
        for x in 0..self.n() {
            if self.r[x] == 0.0 {
                continue;
            }
            let d = ratio_gap(self.p[x], self.q[x]);
            let (a, b) = self.estimate_laws(x)?;
            let (mut mean, mut abs_err) = (0.0, 0.0);
            for &(va, pa) in &a {
                for &(vb, pb) in &b {
                    let w = pa * pb;
                    let g = ratio_gap(va, vb);
                    mean += w * g;
                    abs_err += w * (g - d).abs();
                }
            }
            out.push(ElementReport {
                index: x,
                r: self.r[x],
                d,
                expected_estimate: mean,
                expected_abs_error: abs_err,
            });
        }
        Ok(out)
    }

    /// `Ẽ`, the exact mean of the subroutine's output.
    pub fn subroutine_mean(&self) -> Result<f64> {
        Ok(self
            .element_reports()?
            .iter()
            .map(|e| e.r * e.expected_estimate)
            .sum::<f64>()
            .clamp(0.0, 1.0))
    }
}

/// Exact law of the subroutine's output. The support can hold up to
/// `n t²/4` values, so this is meant for small `t`.
pub fn tvd_subroutine_distribution(inst: &TvdInstance) -> Result<ValueDistribution> {
    let mut pairs = Vec::new();
    for x in 0..inst.n() {
        if inst.r[x] == 0.0 {
            continue;
        }
        let (a, b) = inst.estimate_laws(x)?;
        for &(va, pa) in &a {
            for &(vb, pb) in &b {
                let w = inst.r[x] * pa * pb;
                if w > 0.0 {
                    pairs.push((ratio_gap(va, vb), w));
                }
            }
        }
    }
    make_distribution(pairs)
}

/// Result of [`estimate_tvd`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TvdEstimate {
    #[serde(flatten)]
    pub estimate: Estimate,
    pub exact_tvd: f64,
    pub subroutine_mean: f64,
    /// Iterations per inner probability estimate.
    pub t_inner: usize,
    pub reps_inner: usize,
    pub t_outer: usize,
    /// Subroutine invocations made by the outer estimator.
    pub subroutine_calls: u64,
    /// Probability estimates made, two per invocation.
    pub probability_estimates: u64,
    /// Outer iterations plus `t_inner` per probability estimate.
    pub ae_iterations: u64,
    /// Every iteration run, including the `reps_inner` runs behind each
    /// probability estimate.
    pub ae_iterations_with_repetitions: u64,
}

/// Estimates `‖p - q‖` to additive error `epsilon` with probability at least
/// `1 - delta`.
///
/// The subroutine runs at internal accuracy `ε/8`, so its mean is within
/// `ε/2` of the distance, and the bounded estimator takes it to `ε/2`. The
/// returned ledger nests the inner costs: every use of the subroutine (or
/// its inverse) inside the outer amplitude estimation adds `2·reps`
/// amplitude estimations of `t_inner` iterations each.
pub fn estimate_tvd<R: Rng + ?Sized>(
    p: &[f64],
    q: &[f64],
    epsilon: f64,
    delta: f64,
    consts: &Constants,
    rng: &mut R,
    ledger: &mut QueryLedger,
) -> Result<TvdEstimate> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::param(format!("epsilon {epsilon} must lie in (0, 1)")));
    }
    let inst = TvdInstance::new(p.to_vec(), q.to_vec(), epsilon / 8.0)?;
    let exact = exact_tvd(p, q)?;
    let mean = inst.subroutine_mean()?;
    // Amplitude estimation on the subroutine sees only its mean.
    let proxy = ValueDistribution::bernoulli(mean)?;
    let t_outer = bounded_t_for_epsilon(epsilon / 2.0, consts)?;
    let mut outer = QueryLedger::new();
    let est = estimate_mean_bounded(&proxy, t_outer, delta, consts, rng, &mut outer)?;
    let calls = outer.a_uses + outer.a_inv_uses + 2 * outer.reflection_uses;
    let estimates = 2 * calls;
    let inner_runs = estimates * inst.reps as u64;
    let inner_iterations = inner_runs * inst.t as u64;
    let mut total = outer;
    total.state_copies += inner_runs;
    total.reflection_uses += inner_iterations;
    *ledger += total;
    Ok(TvdEstimate {
        estimate: Estimate {
            value: est.value,
            target_error: epsilon,
            ledger: total,
            ..est
        },
        exact_tvd: exact,
        subroutine_mean: mean,
        t_inner: inst.t,
        reps_inner: inst.reps,
        t_outer,
        subroutine_calls: calls,
        probability_estimates: estimates,
        ae_iterations: outer.reflection_uses + estimates * inst.t as u64,
        ae_iterations_with_repetitions: total.reflection_uses,
    })
}

/// Checks `|f(p,q) - f(p̃,q̃)| <= 5η` for `f(p,q) = (p-q)/(p+q)`. Inputs
/// outside the admissible region are reported as errors.
pub fn ratio_stability_check(p: f64, q: f64, p_t: f64, q_t: f64, eta: f64) -> Result<bool> {
    let slack = 1e-12;
    for v in [p, q, p_t, q_t] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Precondition(format!("value {v} outside [0, 1]")));
        }
    }
    if !(0.0..=0.2).contains(&eta) {
        return Err(Error::Precondition(format!("eta {eta} outside [0, 1/5]")));
    }
    let allowed = eta * (p + q) + slack;
    if (p - p_t).abs() > allowed || (q - q_t).abs() > allowed {
        return Err(Error::Precondition(format!(
            "perturbation ({p_t}, {q_t}) of ({p}, {q}) exceeds eta (p + q)"
        )));
    }
    let f = |a: f64, b: f64| if a + b > 0.0 { (a - b) / (a + b) } else { 0.0 };
    Ok((f(p, q) - f(p_t, q_t)).abs() <= 5.0 * eta + slack)
}
