//! Acceptance checks against exact oracles, one function per criterion.
//!
//! Coverage criteria run their trials in parallel; trial `i` draws from its
//! own ChaCha stream, so results do not depend on scheduling.

use std::f64::consts::{LN_2, PI};
use std::time::Instant;

use nalgebra::{Complex, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::amplitude::{
    ae_circuit_distribution, ae_coverage, ae_outcome_distribution, arcsin_gap_bound,
    measurement_tv_bound, measurement_tv_exact, StabilityBound, AE_SUCCESS,
};
use crate::chain::{model_chain, MarkovChain};
use crate::distribution::{make_distribution, QueryLedger, ValueDistribution};
use crate::error::Result;
use crate::gibbs::{colouring_model, ising_model, matching_model, GibbsModel, Graph};
use crate::mean::{
    bounded_t_for_epsilon, estimate_mean_bounded, estimate_mean_classical, estimate_mean_l2,
    estimate_mean_relative, estimate_mean_variance, Constants,
};
use crate::partition::{
    build_schedule, classical_baseline, estimate_partition, verify_schedule, ClassicalSampling,
    Direction, PartitionMode, PartitionSettings,
};
use crate::stats::{binomial_sigma, loglog_slope};
use crate::trial_rng;
use crate::tvd::{estimate_tvd, exact_tvd, ratio_stability_check};
use crate::walk::{
    quantum_sample_state, szegedy_walk, warm_start_prepare, ExactReflection, WalkConstants,
    WalkMode,
};

/// Names of the checks run by [`validate_suite`].
pub const CRITERIA: [(u8, &str); 11] = [
    (1, "amplitude estimation outcome law"),
    (2, "bounded mean coverage"),
    (3, "l2 mean coverage"),
    (4, "variance mean coverage and scaling"),
    (5, "relative mean coverage"),
    (6, "chi-squared identity and overlap"),
    (7, "cooling schedules"),
    (8, "partition function estimation"),
    (9, "quantum walk contracts"),
    (10, "total variation distance"),
    (11, "stability under perturbation"),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValidationConfig {
    pub consts: Constants,
    pub seed: u64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig {
            consts: Constants::default(),
            seed: 20_160_101,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionReport {
    pub id: u8,
    pub name: String,
    pub passed: bool,
    pub details: Vec<String>,
    pub runtime_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub criteria: Vec<CriterionReport>,
    pub passed: bool,
}

struct Checks {
    passed: bool,
    details: Vec<String>,
}

impl Checks {
    fn new() -> Self {
        Checks {
            passed: true,
            details: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, msg: impl Into<String>) {
        self.passed &= ok;
        self.details.push(format!("{} {}", if ok { "ok" } else { "FAIL" }, msg.into()));
    }

    /// Checks that an empirical rate of a `target`-probability event over
    /// `trials` runs is at least `target - 3σ`.
    fn coverage(&mut self, label: &str, rate: f64, target: f64, trials: usize) {
        let floor = target - 3.0 * binomial_sigma(target, trials);
        self.check(rate >= floor, format!("{label}: {rate:.4} >= {floor:.4} over {trials} trials"));
    }
}

/// Fraction of `trials` runs for which `run` reports success.
fn success_rate<F>(seed: u64, trials: usize, run: F) -> Result<f64>
where
    F: Fn(&mut ChaCha8Rng) -> Result<bool> + Sync,
{
    let hits = (0..trials)
        .into_par_iter()
        .map(|i| run(&mut trial_rng(seed, i as u64)))
        .collect::<Result<Vec<bool>>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / trials as f64)
}

fn mean_of<F>(seed: u64, trials: usize, run: F) -> Result<f64>
where
    F: Fn(&mut ChaCha8Rng) -> Result<f64> + Sync,
{
    let values = (0..trials)
        .into_par_iter()
        .map(|i| run(&mut trial_rng(seed, i as u64)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(values.iter().sum::<f64>() / trials as f64)
}

fn dist(pairs: &[(f64, f64)]) -> ValueDistribution {
    make_distribution(pairs.iter().copied()).expect("fixed instance is valid")
}

fn k2() -> GibbsModel {
    ising_model(&Graph::complete(2)).expect("K2 is small")
}

/// The models used by the schedule and identity checks.
fn test_models() -> Result<Vec<(GibbsModel, Vec<Direction>)>> {
    Ok(vec![
        (k2(), vec![Direction::Forward]),
        (ising_model(&Graph::cycle(4))?, vec![Direction::Forward]),
        (colouring_model(&Graph::complete(3), 3)?, vec![Direction::Forward]),
        (matching_model(&Graph::cycle(4))?, vec![Direction::Forward, Direction::Reversed]),
    ])
}

fn criterion_1(_: &ValidationConfig, c: &mut Checks) -> Result<()> {
    let mut worst: f64 = 1.0;
    for j in 0..50 {
        let a = j as f64 / 49.0;
        for t in [4, 8, 16, 32, 64] {
            worst = worst.min(ae_coverage(a, t)?);
        }
    }
    c.check(
        worst >= AE_SUCCESS - 1e-12,
        format!("smallest coverage {worst:.6} vs 8/pi^2 = {AE_SUCCESS:.6} on 50 amplitudes x 5 sizes"),
    );
    let mut tv: f64 = 0.0;
    for j in 0..12 {
        let a = (j as f64 + 0.37) / 12.0;
        for t in [4, 8, 16, 32, 64, 128, 256] {
            let closed = ae_outcome_distribution(a, t)?;
            let circuit = ae_circuit_distribution(a, t)?;
            tv = tv.max(closed.tv_distance(&circuit));
        }
    }
    c.check(tv <= 1e-8, format!("closed form vs circuit TV {tv:.2e} <= 1e-8"));
    Ok(())
}

fn criterion_2(cfg: &ValidationConfig, c: &mut Checks) -> Result<()> {
    let d = ValueDistribution::bernoulli(0.25)?;
    let (eps, delta, trials) = (0.01, 0.1, 1000);
    let t = bounded_t_for_epsilon(eps, &cfg.consts)?;
    let rate = success_rate(cfg.seed ^ 2, trials, |rng| {
        let mut ledger = QueryLedger::new();
        let e = estimate_mean_bounded(&d, t, delta, &cfg.consts, rng, &mut ledger)?;
        Ok((e.value - 0.25).abs() <= eps)
    })?;
    c.coverage(&format!("|mu - 0.25| <= {eps} with t = {t}"), rate, 1.0 - delta, trials);
    Ok(())
}

fn criterion_3(cfg: &ValidationConfig, c: &mut Checks) -> Result<()> {
    let d = dist(&[(0.0, 1.0 - 1.0 / 64.0), (8.0, 1.0 / 64.0)]);
    let (eps, trials) = (0.05, 1000);
    let l2 = d.moments().l2norm;
    let bound = eps * (l2 + 1.0) * (l2 + 1.0);
    let rate = success_rate(cfg.seed ^ 3, trials, |rng| {
        let mut ledger = QueryLedger::new();
        let e = estimate_mean_l2(&d, eps, &cfg.consts, rng, &mut ledger)?;
        Ok((e.value - d.mean()).abs() <= bound)
    })?;
    c.coverage(&format!("error <= {bound:.3}"), rate, 0.8, trials);
    Ok(())
}

/// Sweep used by the scaling checks.
pub const EPSILON_SWEEP: [f64; 5] = [0.2, 0.1, 0.05, 0.025, 0.0125];

fn criterion_4(cfg: &ValidationConfig, c: &mut Checks) -> Result<()> {
    let d = dist(&[(4.0, 0.25), (5.0, 0.5), (6.0, 0.25)]);
    let (sigma, trials) = (1.0, 300);
    let mut reflections = Vec::new();
    let mut samples = Vec::new();
    for (k, &eps) in EPSILON_SWEEP.iter().enumerate() {
        let runs = (0..trials)
            .into_par_iter()
            .map(|i| {
                let mut rng = trial_rng(cfg.seed ^ 4 ^ ((k as u64) << 32), i as u64);
                let mut ledger = QueryLedger::new();
                let e = estimate_mean_variance(&d, sigma, eps, &cfg.consts, &mut rng, &mut ledger)?;
                Ok(((e.value - 5.0).abs() <= eps, ledger.reflection_uses as f64))
            })
            .collect::<Result<Vec<(bool, f64)>>>()?;
        let rate = runs.iter().filter(|r| r.0).count() as f64 / trials as f64;
        c.coverage(&format!("eps {eps}"), rate, 2.0 / 3.0, trials);
        reflections.push(runs.iter().map(|r| r.1).sum::<f64>() / trials as f64);
        let mut ledger = QueryLedger::new();
        let mut rng = trial_rng(cfg.seed ^ 4, u64::MAX - k as u64);
        estimate_mean_classical(&d, sigma, eps, 1.0 / 3.0, &mut rng, &mut ledger)?;
        samples.push(ledger.classical_samples as f64);
    }
    let inv: Vec<f64> = EPSILON_SWEEP.iter().map(|e| 1.0 / e).collect();
    let q = loglog_slope(&inv, &reflections);
    let s = loglog_slope(&inv, &samples);
    c.check((0.9..=1.35).contains(&q), format!("reflection slope {q:.3} in [0.9, 1.35]"));
    c.check((1.9..=2.1).contains(&s), format!("classical slope {s:.3} in [1.9, 2.1]"));
    Ok(())
}

fn criterion_5(cfg: &ValidationConfig, c: &mut Checks) -> Result<()> {
    let d = dist(&[(1.0, 0.5), (3.0, 0.5)]);
    let (b, eps, trials) = (1.25, 0.05, 1000);
    let rate = success_rate(cfg.seed ^ 5, trials, |rng| {
        let mut ledger = QueryLedger::new();
        let e = estimate_mean_relative(&d, b, eps, &cfg.consts, rng, &mut ledger)?;
        Ok(e.within(2.0))
    })?;
    c.coverage("relative error <= 0.05", rate, 0.75, trials);
    Ok(())
}

fn criterion_6(cfg: &ValidationConfig, c: &mut Checks) -> Result<()> {
    let models = test_models()?;
    let mut rng = trial_rng(cfg.seed ^ 6, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (m, _) = &models[rng.random_range(0..models.len())];
        let bi = rng.random_range(0.0..3.0);
        let bj = if rng.random_bool(0.2) {
            f64::INFINITY
        } else {
            bi + rng.random_range(0.01..3.0)
        };
        let direct = m.chi_squared_direct(bi, bj)?;
        let ratio = m.chi_squared_ratio(bi, bj);
        worst = worst.max((direct - ratio).abs() / direct.abs().max(1.0));
    }
    c.check(worst <= 1e-10, format!("chi-squared forms agree to {worst:.2e} on 100 triples"));
    let mut lowest = f64::INFINITY;
    for (m, dirs) in &models {
        for &dir in dirs {
            for b in [1.5, 2.0, 4.0] {
                let s = build_schedule(m, b, dir)?;
                for p in verify_schedule(m, &s).pairs {
                    lowest = lowest.min(p.overlap_squared * b);
                }
            }
        }
    }
    c.check(lowest >= 1.0 - 1e-12, format!("smallest overlap^2 * B = {lowest:.6} >= 1"));
    let m = k2();
    let chi = m.chi_squared_direct(0.0, LN_2)?;
    let overlap = m.overlap_squared(0.0, LN_2)?;
    c.check((chi - 1.0 / 9.0).abs() <= 1e-6, format!("K2 chi-squared {chi:.7} = 1/9"));
    c.check((overlap - 0.9714).abs() <= 1e-4, format!("K2 overlap^2 {overlap:.7} ~ 0.9714"));
    Ok(())
}

fn criterion_7(_: &ValidationConfig, c: &mut Checks) -> Result<()> {
    for (m, dirs) in test_models()? {
        for dir in dirs {
            for b in [1.5, 2.0, 4.0] {
                let s = build_schedule(&m, b, dir)?;
                let ok = verify_schedule(&m, &s).passes;
                c.check(ok, format!("{} {dir} B = {b}: length {}", m.kind(), s.ell()));
            }
        }
    }
    let s = build_schedule(&k2(), 2.0, Direction::Forward)?;
    c.check(
        s.betas == [0.0, f64::INFINITY],
        format!("K2 with B = 2 gives {:?}", s.betas),
    );
    Ok(())
}

fn criterion_8(cfg: &ValidationConfig, c: &mut Checks) -> Result<()> {
    let settings = PartitionSettings {
        mode: PartitionMode::WalkIdealized,
        consts: cfg.consts,
        walk: WalkConstants::default(),
    };
    let trials = 300;
    let cases = [
        (k2(), Direction::Forward, 0.1, "K2 Ising Z(inf) = 2"),
        (matching_model(&Graph::cycle(4))?, Direction::Reversed, 0.2, "C4 matchings Z(0) = 7"),
    ];
    for (k, (m, dir, eps, label)) in cases.iter().enumerate() {
        let s = build_schedule(m, 2.0, *dir)?;
        let rate = success_rate(cfg.seed ^ 8 ^ ((k as u64) << 40), trials, |rng| {
            let mut ledger = QueryLedger::new();
            Ok(estimate_partition(m, &s, *eps, 0.25, &settings, rng, &mut ledger)?.within())
        })?;
        c.coverage(&format!("{label} within {eps}"), rate, 0.75, trials);
    }
    let m = k2();
    let s = build_schedule(&m, 2.0, Direction::Forward)?;
    let mut quantum = Vec::new();
    let mut classical = Vec::new();
    for (k, &eps) in EPSILON_SWEEP.iter().enumerate() {
        quantum.push(mean_of(cfg.seed ^ 88 ^ ((k as u64) << 40), 5, |rng| {
            let mut ledger = QueryLedger::new();
            estimate_partition(&m, &s, eps, 0.25, &settings, rng, &mut ledger)?;
            Ok(ledger.quantum_total() as f64)
        })?);
        let mut ledger = QueryLedger::new();
        let mut rng = trial_rng(cfg.seed ^ 89, k as u64);
        classical_baseline(&m, &s, eps, ClassicalSampling::Ideal, &mut rng, &mut ledger)?;
        classical.push(ledger.classical_samples as f64);
    }
    let inv: Vec<f64> = EPSILON_SWEEP.iter().map(|e| 1.0 / e).collect();
    let q = loglog_slope(&inv, &quantum);
    let s = loglog_slope(&inv, &classical);
    c.check((0.9..=1.35).contains(&q), format!("reflections + walk steps slope {q:.3} in [0.9, 1.35]"));
    c.check((1.9..=2.1).contains(&s), format!("classical slope {s:.3} in [1.9, 2.1]"));
    Ok(())
}

fn random_range_vector(walk: &crate::walk::WalkOperator, rng: &mut ChaCha8Rng) -> DVector<Complex<f64>> {
    let n = walk.chain_size();
    let phi = DVector::from_fn(n, |_, _| {
        Complex::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    });
    let phi = &phi / Complex::new(phi.norm(), 0.0);
    walk.isometry().map(|x| Complex::new(x, 0.0)) * phi
}

fn criterion_9(cfg: &ValidationConfig, c: &mut Checks) -> Result<()> {
    let mut rng = trial_rng(cfg.seed ^ 9, 0);
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let n = 2 + i % 7;
        let chain = MarkovChain::random_reversible(n, &mut rng)?;
        worst = worst.max(szegedy_walk(&chain)?.spectral_mismatch()?);
    }
    c.check(worst <= 1e-8, format!("spectral mismatch {worst:.2e} on 20 random chains"));
    let eps_r = 0.01;
    let chains = [
        ("two-state", MarkovChain::two_state(0.25, 0.25)?),
        ("K2 Glauber", model_chain(&k2(), 1.0, false)?),
    ];
    for (label, chain) in &chains {
        let r = ExactReflection::build(szegedy_walk(chain)?, eps_r)?;
        let mut err: f64 = 0.0;
        for _ in 0..100 {
            err = err.max(r.error_on(&random_range_vector(r.walk(), &mut rng)));
        }
        c.check(
            err <= eps_r * (1.0 + 1e-9),
            format!("{label} reflection error {err:.2e} <= {eps_r} with {} phase bits", r.phase_bits()),
        );
    }
    let m = k2();
    let betas = [0.0, LN_2, 2.0];
    let eps_s = 0.05;
    for i in 1..betas.len() {
        let mut ledger = QueryLedger::new();
        let prepared = warm_start_prepare(
            &m,
            &betas,
            1.5,
            i,
            eps_s,
            WalkMode::ExactSim,
            &WalkConstants::default(),
            &mut ledger,
        )?;
        let fidelity = prepared.sample.overlap_squared(&quantum_sample_state(&m, betas[i])?);
        c.check(
            fidelity >= 1.0 - eps_s,
            format!("K2 warm start to beta {:.3}: fidelity {fidelity:.6}", betas[i]),
        );
    }
    Ok(())
}

fn criterion_10(cfg: &ValidationConfig, c: &mut Checks) -> Result<()> {
    let (eps, delta, trials) = (0.1, 0.1, 100);
    let instances: [(Vec<f64>, Vec<f64>); 3] = [
        (vec![0.125; 8], vec![0.125; 8]),
        (vec![0.5, 0.5, 0.0], vec![0.0, 0.5, 0.5]),
        (vec![1.0, 0.0], vec![0.0, 1.0]),
    ];
    for (k, (p, q)) in instances.iter().enumerate() {
        let truth = exact_tvd(p, q)?;
        let rate = success_rate(cfg.seed ^ 10 ^ ((k as u64) << 40), trials, |rng| {
            let mut ledger = QueryLedger::new();
            let e = estimate_tvd(p, q, eps, delta, &cfg.consts, rng, &mut ledger)?;
            Ok((e.estimate.value - truth).abs() <= eps)
        })?;
        c.coverage(&format!("distance {truth} within {eps}"), rate, 1.0 - delta, trials);
    }
    let p = [0.1, 0.2, 0.3, 0.4];
    let q = [0.25, 0.25, 0.25, 0.25];
    let sweep = [0.2, 0.1, 0.05, 0.025];
    let mut iterations = Vec::new();
    let mut with_reps = Vec::new();
    for &e in &sweep {
        let mut rng = trial_rng(cfg.seed ^ 100, 0);
        let mut ledger = QueryLedger::new();
        let est = estimate_tvd(&p, &q, e, delta, &cfg.consts, &mut rng, &mut ledger)?;
        iterations.push(est.ae_iterations as f64);
        with_reps.push(est.ae_iterations_with_repetitions as f64);
    }
    let inv: Vec<f64> = sweep.iter().map(|e| 1.0 / e).collect();
    let slope = loglog_slope(&inv, &iterations);
    c.check(
        (1.4..=1.7).contains(&slope),
        format!(
            "iteration slope {slope:.3} in [1.4, 1.7] ({:.3} counting median repetitions)",
            loglog_slope(&inv, &with_reps)
        ),
    );
    let mut rng = trial_rng(cfg.seed ^ 101, 0);
    let mut violations = 0;
    for _ in 0..10_000 {
        let (p, q): (f64, f64) = (rng.random(), rng.random());
        let eta = rng.random_range(0.0..=0.2);
        let p_t = (p + rng.random_range(-1.0..=1.0) * eta * (p + q)).clamp(0.0, 1.0);
        let q_t = (q + rng.random_range(-1.0..=1.0) * eta * (p + q)).clamp(0.0, 1.0);
        if !ratio_stability_check(p, q, p_t, q_t, eta)? {
            violations += 1;
        }
    }
    c.check(violations == 0, format!("{violations} violations of the ratio bound in 10^4 perturbations"));
    Ok(())
}

fn criterion_11(cfg: &ValidationConfig, c: &mut Checks) -> Result<()> {
    let mut rng = trial_rng(cfg.seed ^ 11, 0);
    let mut arcsin_bad = 0;
    for _ in 0..10_000 {
        let (lhs, rhs) = arcsin_gap_bound(rng.random(), rng.random())?;
        arcsin_bad += (lhs > rhs + 1e-12) as usize;
    }
    c.check(arcsin_bad == 0, format!("{arcsin_bad} arcsin violations in 10^4 pairs"));
    let mut kernel_bad = 0;
    for _ in 0..1000 {
        let (a, b): (f64, f64) = (rng.random(), rng.random());
        let b = if rng.random_bool(0.5) { (a + 1e-4 * b).min(1.0) } else { b };
        let t = rng.random_range(1..=256);
        kernel_bad += (measurement_tv_exact(a, b, t)? > measurement_tv_bound(a, b, t) + 1e-12) as usize;
    }
    c.check(kernel_bad == 0, format!("{kernel_bad} outcome-law TV violations in 10^3 triples"));

    // Values of the K2 ratio variable at (0, ln 2), and a copy with gamma
    // of the mass moved from 1 to 1/2.
    let sigma = 0.25;
    let eps = 0.05;
    let a = dist(&[(0.5, 0.5), (1.0, 0.5)]);
    let mut pilot = QueryLedger::new();
    estimate_mean_variance(&a, sigma, eps, &cfg.consts, &mut rng, &mut pilot)?;
    let uses = pilot.reflection_uses;
    let gamma = (0.2 / (PI * PI / 6f64.sqrt() * uses as f64)).powi(2);
    let b = dist(&[(0.5, 0.5 + gamma), (1.0, 0.5 - gamma)]);
    let bound = StabilityBound::new(gamma, uses)?.bound;
    let trials = 1000;
    let target = b.mean();
    let rate = success_rate(cfg.seed ^ 111, trials, |rng| {
        let mut ledger = QueryLedger::new();
        let e = estimate_mean_variance(&a, sigma, eps, &cfg.consts, rng, &mut ledger)?;
        Ok((e.value - target).abs() > eps)
    })?;
    let ceiling = bound + 3.0 * binomial_sigma(bound.min(1.0), trials);
    c.check(
        rate <= ceiling,
        format!("failure rate {rate:.4} <= {ceiling:.4} at gamma {gamma:.2e}, T = {uses}"),
    );
    Ok(())
}

/// Runs one criterion and times it. Errors count as failures.
pub fn run_criterion(id: u8, cfg: &ValidationConfig) -> CriterionReport {
    let start = Instant::now();
    let mut c = Checks::new();
    let run: fn(&ValidationConfig, &mut Checks) -> Result<()> = match id {
        1 => criterion_1,
        2 => criterion_2,
        3 => criterion_3,
        4 => criterion_4,
        5 => criterion_5,
        6 => criterion_6,
        7 => criterion_7,
        8 => criterion_8,
        9 => criterion_9,
        10 => criterion_10,
        11 => criterion_11,
        _ => |_, c| {
            c.check(false, "no such criterion");
            Ok(())
        },
    };
    if let Err(e) = run(cfg, &mut c) {
        c.check(false, format!("error: {e}"));
    }
    let name = CRITERIA
        .iter()
        .find(|(k, _)| *k == id)
        .map(|(_, n)| n.to_string())
        .unwrap_or_default();
    CriterionReport {
        id,
        name,
        passed: c.passed,
        details: c.details,
        runtime_seconds: start.elapsed().as_secs_f64(),
    }
}

/// Runs every criterion in order.
pub fn validate_suite(cfg: &ValidationConfig) -> ValidationReport {
    let criteria: Vec<CriterionReport> = CRITERIA.iter().map(|(id, _)| run_criterion(*id, cfg)).collect();
    let passed = criteria.iter().all(|c| c.passed);
    ValidationReport { criteria, passed }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shrinking_c_breaks_bounded_coverage() {
        let cfg = ValidationConfig {
            consts: Constants::from_c(Constants::default().c / 8.0),
            ..ValidationConfig::default()
        };
        let r = run_criterion(2, &cfg);
        assert!(!r.passed, "{:?}", r.details);
        assert!(run_criterion(2, &ValidationConfig::default()).passed);
    }

    #[test]
    fn unknown_criterion_fails() {
        assert!(!run_criterion(99, &ValidationConfig::default()).passed);
    }
}
