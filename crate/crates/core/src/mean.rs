//! Mean estimation for bounded, bounded-ℓ₂, bounded-variance and
//! bounded-relative-variance output distributions.

use rand::Rng;
use serde::Serialize;

use crate::amplitude::{ae_median, calibrated_c, default_reps};
use crate::distribution::{classical_sample, QueryLedger, ValueDistribution, Window};
use crate::error::{Error, Result};
use crate::stats::{median_in_place, median_reps};

/// Per-run failure probability of the ℓ₂ estimator.
pub const L2_FAILURE: f64 = 0.2;
/// Per-run failure probability of the relative-error estimator.
pub const RELATIVE_FAILURE: f64 = 0.25;

/// Error constants of the amplitude-based estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Constants {
    /// Error constant of the bounded estimator: `|μ̃ - μ| <= C(√μ/t + 1/t²)`.
    #[serde(rename = "C")]
    pub c: f64,
    /// Scale of the ℓ₂ estimator's register size `t0 = ⌈D √(log₂ 1/ε) / ε⌉`.
    #[serde(rename = "D")]
    pub d: f64,
}

impl Default for Constants {
    fn default() -> Self {
        Constants::from_c(calibrated_c())
    }
}

impl Constants {
    /// Uses `D = max(4C, 10)`.
    pub fn from_c(c: f64) -> Self {
        Constants {
            c,
            d: (4.0 * c).max(10.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorKind {
    Additive,
    Relative,
}

/// Output of an estimator together with its guarantee and cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub target_error: f64,
    pub error_kind: ErrorKind,
    pub confidence: f64,
    /// Resources consumed by this call alone.
    pub ledger: QueryLedger,
}

impl Estimate {
    /// Whether the estimate is within its target error of `truth`.
    pub fn within(&self, truth: f64) -> bool {
        let err = (self.value - truth).abs();
        match self.error_kind {
            ErrorKind::Additive => err <= self.target_error,
            ErrorKind::Relative => err <= self.target_error * truth.abs(),
        }
    }
}

/// Runs `run` the smallest odd number of times that drives a per-run
/// failure probability `gamma` down to `delta`, and returns the median.
pub fn power_median<R, F>(
    gamma: f64,
    delta: f64,
    rng: &mut R,
    ledger: &mut QueryLedger,
    mut run: F,
) -> Result<f64>
where
    R: Rng + ?Sized,
    F: FnMut(&mut R, &mut QueryLedger) -> Result<f64>,
{
    let reps = median_reps(gamma, delta)?;
    let mut values = Vec::with_capacity(reps);
    for _ in 0..reps {
        values.push(run(rng, ledger)?);
    }
    Ok(median_in_place(&mut values))
}

fn check_unit_support(d: &ValueDistribution) -> Result<()> {
    if d.min_value() < 0.0 || d.max_value() > 1.0 {
        return Err(Error::param(format!(
            "support [{}, {}] is not inside [0, 1]",
            d.min_value(),
            d.max_value()
        )));
    }
    Ok(())
}

fn check_nonnegative(d: &ValueDistribution) -> Result<()> {
    if d.min_value() < 0.0 {
        return Err(Error::param(format!("negative value {} in support", d.min_value())));
    }
    Ok(())
}

/// Smallest `t` with `C (1/t + 1/t²) <= eps`, enough for additive error
/// `eps` whatever the mean in `[0, 1]`.
pub fn bounded_t_for_epsilon(eps: f64, consts: &Constants) -> Result<usize> {
    if !(eps > 0.0) {
        return Err(Error::param(format!("epsilon {eps} must be positive")));
    }
    let mut t = (consts.c / eps).floor().max(1.0) as usize;
    while consts.c * (1.0 / t as f64 + 1.0 / (t * t) as f64) > eps {
        t += 1;
    }
    Ok(t)
}

fn unit_amplitude(d: &ValueDistribution) -> f64 {
    d.mean().clamp(0.0, 1.0)
}

/// Mean of a `[0, 1]`-valued distribution by amplitude estimation with `t`
/// iterations, amplified to confidence `1 - delta`.
pub fn estimate_mean_bounded<R: Rng + ?Sized>(
    d: &ValueDistribution,
    t: usize,
    delta: f64,
    consts: &Constants,
    rng: &mut R,
    ledger: &mut QueryLedger,
) -> Result<Estimate> {
    check_unit_support(d)?;
    let before = *ledger;
    let reps = default_reps(delta)?;
    let value = ae_median(unit_amplitude(d), t, reps, rng, ledger)?;
    let tf = t as f64;
    Ok(Estimate {
        value,
        target_error: consts.c * (1.0 / tf + 1.0 / (tf * tf)),
        error_kind: ErrorKind::Additive,
        confidence: 1.0 - delta,
        ledger: ledger.since(&before),
    })
}

/// Register size and scale count of the ℓ₂ estimator at accuracy `eps`.
pub fn l2_parameters(eps: f64, consts: &Constants) -> Result<(usize, usize)> {
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::param(format!("epsilon {eps} must lie in (0, 1/2)")));
    }
    let log = (1.0 / eps).log2();
    let k = log.ceil() as usize;
    let t0 = (consts.d * log.sqrt() / eps).ceil() as usize;
    Ok((t0, k))
}

/// Mean of a nonnegative distribution up to `eps (‖v‖₂ + 1)²`, with
/// probability at least 4/5.
pub fn estimate_mean_l2<R: Rng + ?Sized>(
    d: &ValueDistribution,
    eps: f64,
    consts: &Constants,
    rng: &mut R,
    ledger: &mut QueryLedger,
) -> Result<Estimate> {
    check_nonnegative(d)?;
    let (t0, k) = l2_parameters(eps, consts)?;
    let before = *ledger;
    let base = d.truncate(Window::Range(0.0, 1.0))?;
    let mut value = estimate_mean_bounded(&base, t0, 0.1, consts, rng, ledger)?.value;
    let delta_scale = 1.0 / (10.0 * k as f64);
    for l in 1..=k {
        let hi = (1u64 << l) as f64;
        let slice = d
            .truncate(Window::Range(hi / 2.0, hi))?
            .scale(1.0 / hi)?;
        value += hi * estimate_mean_bounded(&slice, t0, delta_scale, consts, rng, ledger)?.value;
    }
    let l2 = d.moments().l2norm;
    Ok(Estimate {
        value,
        target_error: eps * (l2 + 1.0) * (l2 + 1.0),
        error_kind: ErrorKind::Additive,
        confidence: 1.0 - L2_FAILURE,
        ledger: ledger.since(&before),
    })
}

/// One classical run used as a proxy inside the quantum estimators.
fn proxy_sample<R: Rng + ?Sized>(
    d: &ValueDistribution,
    rng: &mut R,
    ledger: &mut QueryLedger,
) -> f64 {
    ledger.a_uses += 1;
    classical_sample(d, rng, ledger)
}

/// The two halves `-B_{<0}/4` and `B_{≥0}/4` of `B = d - shift`.
pub fn split_centred(
    d: &ValueDistribution,
    shift: f64,
) -> Result<(ValueDistribution, ValueDistribution)> {
    let centred = d.transform(|v| v - shift)?;
    let lower = centred
        .truncate(Window::Below(0.0))?
        .transform(|v| -v / 4.0)?;
    let upper = centred.truncate(Window::AtLeast(0.0))?.scale(0.25)?;
    Ok((lower, upper))
}

/// Mean of a distribution with standard deviation at most `sigma`, to
/// additive error `eps` with probability at least 2/3.
pub fn estimate_mean_variance<R: Rng + ?Sized>(
    d: &ValueDistribution,
    sigma: f64,
    eps: f64,
    consts: &Constants,
    rng: &mut R,
    ledger: &mut QueryLedger,
) -> Result<Estimate> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::param(format!("sigma {sigma} must be positive")));
    }
    if !(eps > 0.0 && eps < 4.0 * sigma) {
        return Err(Error::param(format!("epsilon {eps} must lie in (0, 4 sigma)")));
    }
    let before = *ledger;
    let rescaled = d.scale(1.0 / sigma)?;
    let m = proxy_sample(&rescaled, rng, ledger);
    let (lower, upper) = split_centred(&rescaled, m)?;
    let inner = eps / (32.0 * sigma);
    let half = |part: &ValueDistribution, rng: &mut R, ledger: &mut QueryLedger| {
        power_median(L2_FAILURE, 1.0 / 9.0, rng, ledger, |rng, ledger| {
            Ok(estimate_mean_l2(part, inner, consts, rng, ledger)?.value)
        })
    };
    let mu_lower = half(&lower, rng, ledger)?;
    let mu_upper = half(&upper, rng, ledger)?;
    let value = sigma * (m - 4.0 * mu_lower + 4.0 * mu_upper);
    Ok(Estimate {
        value,
        target_error: eps,
        error_kind: ErrorKind::Additive,
        confidence: 2.0 / 3.0,
        ledger: ledger.since(&before),
    })
}

/// Classical sample-mean estimator with Chebyshev sample size
/// `⌈σ² / (γ ε²)⌉`, failing with probability at most `gamma`.
pub fn estimate_mean_classical<R: Rng + ?Sized>(
    d: &ValueDistribution,
    sigma: f64,
    eps: f64,
    gamma: f64,
    rng: &mut R,
    ledger: &mut QueryLedger,
) -> Result<Estimate> {
    if !(sigma > 0.0 && eps > 0.0 && gamma > 0.0 && gamma < 1.0) {
        return Err(Error::param("classical estimator needs sigma, eps > 0 and gamma in (0,1)"));
    }
    let before = *ledger;
    let k = (sigma * sigma / (gamma * eps * eps)).ceil().max(1.0) as usize;
    let mut sum = 0.0;
    for _ in 0..k {
        sum += classical_sample(d, rng, ledger);
    }
    Ok(Estimate {
        value: sum / k as f64,
        target_error: eps,
        error_kind: ErrorKind::Additive,
        confidence: 1.0 - gamma,
        ledger: ledger.since(&before),
    })
}

/// Accuracy handed to the ℓ₂ estimator by [`estimate_mean_relative`].
pub fn relative_inner_epsilon(b: f64, eps: f64) -> f64 {
    let s = 2.0 * b.sqrt() + 1.0;
    2.0 * eps / (3.0 * s * s)
}

/// Mean of a nonnegative distribution with `Var/μ² <= b`, to relative
/// error `eps` with probability at least 3/4.
pub fn estimate_mean_relative<R: Rng + ?Sized>(
    d: &ValueDistribution,
    b: f64,
    eps: f64,
    consts: &Constants,
    rng: &mut R,
    ledger: &mut QueryLedger,
) -> Result<Estimate> {
    check_nonnegative(d)?;
    if !(b >= 1.0) || !b.is_finite() {
        return Err(Error::param(format!("relative variance bound {b} must be >= 1")));
    }
    if !(eps > 0.0 && eps < 27.0 * b / 4.0) {
        return Err(Error::param(format!("epsilon {eps} must lie in (0, 27B/4)")));
    }
    let inner = relative_inner_epsilon(b, eps);
    if inner >= 0.5 {
        return Err(Error::param(format!(
            "epsilon {eps} gives inner accuracy {inner} >= 1/2"
        )));
    }
    let before = *ledger;
    let k = (32.0 * b).ceil() as usize;
    let mut sum = 0.0;
    for _ in 0..k {
        sum += proxy_sample(d, rng, ledger);
    }
    let m = sum / k as f64;
    if m == 0.0 {
        return Err(Error::ZeroProxyMean { samples: k });
    }
    let normalized = d.scale(1.0 / m)?;
    let mu = power_median(L2_FAILURE, 1.0 / 8.0, rng, ledger, |rng, ledger| {
        Ok(estimate_mean_l2(&normalized, inner, consts, rng, ledger)?.value)
    })?;
    Ok(Estimate {
        value: m * mu,
        target_error: eps,
        error_kind: ErrorKind::Relative,
        confidence: 1.0 - RELATIVE_FAILURE,
        ledger: ledger.since(&before),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::amplitude::ae_outcome_distribution;
    use crate::distribution::make_distribution;
    use crate::stats::{binomial_sigma, binomial_upper_tail};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn dist(pairs: &[(f64, f64)]) -> ValueDistribution {
        make_distribution(pairs.iter().copied()).unwrap()
    }

    fn consts() -> Constants {
        Constants::default()
    }

    fn coverage<F: FnMut(u64) -> bool>(trials: u64, mut hit: F) -> f64 {
        (0..trials).filter(|&s| hit(s)).count() as f64 / trials as f64
    }

    #[test]
    fn constants_relationship() {
        let c = Constants::from_c(2.0);
        assert_eq!(c.d, 10.0);
        let c = Constants::from_c(4.5);
        assert_eq!(c.d, 18.0);
    }

    #[test]
    fn bounded_t_is_minimal() {
        let k = consts();
        let t = bounded_t_for_epsilon(0.01, &k).unwrap();
        let f = |t: usize| k.c * (1.0 / t as f64 + 1.0 / (t * t) as f64);
        assert!(f(t) <= 0.01 && f(t - 1) > 0.01);
    }

    #[test]
    fn bounded_examples() {
        let k = consts();
        let mut l = QueryLedger::new();
        let e = estimate_mean_bounded(&dist(&[(0.0, 1.0)]), 16, 0.1, &k, &mut rng(1), &mut l).unwrap();
        assert_eq!(e.value, 0.0);
        let e = estimate_mean_bounded(&dist(&[(0.5, 1.0)]), 4, 0.1, &k, &mut rng(1), &mut l).unwrap();
        assert!((e.value - 0.5).abs() < 1e-15);
        assert!(estimate_mean_bounded(&dist(&[(1.5, 1.0)]), 4, 0.1, &k, &mut rng(1), &mut l).is_err());
    }

    #[test]
    fn bounded_coverage_matches_exact_law() {
        // Exact success probability of the median from the AE outcome law.
        let k = consts();
        let (p, eps, delta) = (0.25, 0.01, 0.05);
        let t = bounded_t_for_epsilon(eps, &k).unwrap();
        let reps = default_reps(delta).unwrap();
        let law = ae_outcome_distribution(p, t).unwrap();
        let per_rep = law.mass_where(|v| (v - p).abs() <= eps);
        let exact = binomial_upper_tail(reps, reps.div_ceil(2), per_rep);
        assert!(exact >= 1.0 - delta);
        let d = ValueDistribution::bernoulli(p).unwrap();
        let trials = 400;
        let freq = coverage(trials, |s| {
            let mut l = QueryLedger::new();
            let e = estimate_mean_bounded(&d, t, delta, &k, &mut rng(s), &mut l).unwrap();
            (e.value - p).abs() <= eps
        });
        assert!(freq >= exact - 3.0 * binomial_sigma(exact, trials as usize) - 0.01);
    }

    #[test]
    fn l2_parameters_follow_formula() {
        let k = Constants { c: 4.0, d: 16.0 };
        let (t0, scales) = l2_parameters(0.1, &k).unwrap();
        assert_eq!(scales, 4);
        assert_eq!(t0, (16.0 * 10f64.log2().sqrt() / 0.1).ceil() as usize);
        assert!(l2_parameters(0.5, &k).is_err());
        assert!(l2_parameters(0.0, &k).is_err());
    }

    #[test]
    fn l2_examples() {
        let k = consts();
        let mut l = QueryLedger::new();
        let zero = estimate_mean_l2(&dist(&[(0.0, 1.0)]), 0.1, &k, &mut rng(3), &mut l).unwrap();
        assert_eq!(zero.value, 0.0);
        assert!(estimate_mean_l2(&dist(&[(-1.0, 1.0)]), 0.1, &k, &mut rng(3), &mut l).is_err());

        let heavy = dist(&[(0.0, 1.0 - 1.0 / 64.0), (8.0, 1.0 / 64.0)]);
        let m = heavy.moments();
        assert_eq!((m.mean, m.l2norm), (0.125, 1.0));
        let trials = 200;
        let freq = coverage(trials, |s| {
            let mut l = QueryLedger::new();
            let e = estimate_mean_l2(&heavy, 0.1, &k, &mut rng(s), &mut l).unwrap();
            e.within(0.125)
        });
        assert!(freq >= 0.8 - 3.0 * binomial_sigma(0.8, trials as usize), "{freq}");
        let point = dist(&[(0.5, 1.0)]);
        let freq = coverage(trials, |s| {
            let mut l = QueryLedger::new();
            estimate_mean_l2(&point, 0.1, &k, &mut rng(s), &mut l).unwrap().within(0.5)
        });
        assert!(freq >= 0.8 - 3.0 * binomial_sigma(0.8, trials as usize), "{freq}");
    }

    #[test]
    fn variance_examples() {
        let k = consts();
        let mut l = QueryLedger::new();
        let point = estimate_mean_variance(&dist(&[(5.0, 1.0)]), 1.0, 0.1, &k, &mut rng(1), &mut l).unwrap();
        assert!((point.value - 5.0).abs() <= 1e-12);
        assert!(estimate_mean_variance(&dist(&[(5.0, 1.0)]), 1.0, 4.0, &k, &mut rng(1), &mut l).is_err());
        assert!(estimate_mean_variance(&dist(&[(5.0, 1.0)]), 0.0, 0.1, &k, &mut rng(1), &mut l).is_err());

        let trials = 60;
        for (d, mean, eps) in [
            (dist(&[(4.0, 0.25), (5.0, 0.5), (6.0, 0.25)]), 5.0, 0.1),
            (dist(&[(-1.0, 0.5), (1.0, 0.5)]), 0.0, 0.05),
        ] {
            let freq = coverage(trials, |s| {
                let mut l = QueryLedger::new();
                estimate_mean_variance(&d, 1.0, eps, &k, &mut rng(s), &mut l)
                    .unwrap()
                    .within(mean)
            });
            assert!(freq >= 2.0 / 3.0 - 3.0 * binomial_sigma(2.0 / 3.0, trials as usize));
        }
    }

    #[test]
    fn variance_charges_one_proxy_sample() {
        let k = consts();
        let mut l = QueryLedger::new();
        let d = dist(&[(4.0, 0.25), (5.0, 0.5), (6.0, 0.25)]);
        let e = estimate_mean_variance(&d, 1.0, 0.5, &k, &mut rng(2), &mut l).unwrap();
        assert_eq!(e.ledger.classical_samples, 1);
        assert!(e.ledger.reflection_uses > 0);
        assert_eq!(e.ledger, l);
    }

    #[test]
    fn classical_sample_count() {
        let mut l = QueryLedger::new();
        let d = dist(&[(0.0, 0.5), (1.0, 0.5)]);
        let e = estimate_mean_classical(&d, 0.5, 0.1, 1.0 / 3.0, &mut rng(4), &mut l).unwrap();
        assert_eq!(e.ledger.classical_samples, 75);
    }

    #[test]
    fn relative_examples() {
        let k = consts();
        let mut l = QueryLedger::new();
        let e = estimate_mean_relative(&dist(&[(2.0, 1.0)]), 1.0, 0.05, &k, &mut rng(1), &mut l).unwrap();
        assert!((1.9..=2.1).contains(&e.value));
        assert_eq!(e.ledger.classical_samples, 32);
        assert_eq!(
            estimate_mean_relative(&dist(&[(0.0, 1.0)]), 1.0, 0.05, &k, &mut rng(1), &mut l),
            Err(Error::ZeroProxyMean { samples: 32 })
        );
        assert!(estimate_mean_relative(&dist(&[(2.0, 1.0)]), 0.5, 0.05, &k, &mut rng(1), &mut l).is_err());
        assert!(estimate_mean_relative(&dist(&[(2.0, 1.0)]), 1.0, 6.75, &k, &mut rng(1), &mut l).is_err());

        let d = dist(&[(1.0, 0.5), (3.0, 0.5)]);
        let m = d.moments();
        assert_eq!(m.variance / (m.mean * m.mean), 0.25);
        let trials = 100;
        let freq = coverage(trials, |s| {
            let mut l = QueryLedger::new();
            estimate_mean_relative(&d, 1.25, 0.05, &k, &mut rng(s), &mut l)
                .unwrap()
                .within(2.0)
        });
        assert!(freq >= 0.75 - 3.0 * binomial_sigma(0.75, trials as usize), "{freq}");
    }

    #[test]
    fn power_median_examples() {
        let mut l = QueryLedger::new();
        let mut calls = 0;
        let v = power_median(0.25, 0.25, &mut rng(0), &mut l, |_, _| {
            calls += 1;
            Ok(3.5)
        })
        .unwrap();
        assert_eq!((v, calls), (3.5, 1));
        let mut calls = 0;
        let v = power_median(1.0 / 3.0, 0.01, &mut rng(0), &mut l, |_, _| {
            calls += 1;
            Ok(-2.0)
        })
        .unwrap();
        assert_eq!(v, -2.0);
        assert_eq!(calls, median_reps(1.0 / 3.0, 0.01).unwrap());
        assert!(power_median(0.5, 0.1, &mut rng(0), &mut l, |_, _| Ok(0.0)).is_err());
    }

    proptest! {
        #[test]
        fn centred_split_recombines(
            raw in prop::collection::vec((-20.0f64..20.0, 0.01f64..1.0), 1..10),
            shift in -25.0f64..25.0,
        ) {
            let total: f64 = raw.iter().map(|e| e.1).sum();
            let d = make_distribution(raw.into_iter().map(|(v, w)| (v, w / total))).unwrap();
            let (lower, upper) = split_centred(&d, shift).unwrap();
            prop_assert!(lower.min_value() >= 0.0 && upper.min_value() >= 0.0);
            let recombined = shift - 4.0 * lower.mean() + 4.0 * upper.mean();
            prop_assert!((recombined - d.mean()).abs() <= 1e-10 * (1.0 + shift.abs()));
        }
    }
}
