//! Partition-function estimation along Chebyshev cooling schedules.
//!
//! `Z(β_ℓ)` is written as `Z(β_0)` times a telescoping product of ratios
//! `α_i = Z(β_{i+1})/Z(β_i)`, each the mean of `Y_i = e^{-(β_{i+1}-β_i)H}`
//! under `π_i`. A schedule is B-Chebyshev when every `E[Y_i²]/E[Y_i]² <= B`,
//! which is what lets the relative-error mean estimator work on each ratio.
//! The reversed direction runs the product the other way, anchored at
//! `Z(∞)`, for models (matchings) where the ground states are known.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Serialize, Serializer};

use crate::chain::model_chain;
use crate::distribution::{classical_sample, make_distribution, QueryLedger, ValueDistribution};
use crate::error::{Error, Result};
use crate::gibbs::GibbsModel;
use crate::mean::{estimate_mean_relative, power_median, Constants, RELATIVE_FAILURE};
use crate::walk::{
    idealized_reflection_cost, szegedy_walk, warm_start_prepare, ExactReflection, WalkConstants,
    WalkMode,
};

/// Largest finite β tried before testing the `(β, ∞)` terminal pair.
pub const BETA_CAP: f64 = 1e6;
/// Bisection steps per schedule point.
pub const BISECTION_STEPS: usize = 60;
/// Total failure budget shared by the state preparations and reflections of
/// one ratio in the walk modes.
pub const WALK_FAILURE: f64 = 1.0 / 16.0;

const MAX_SCHEDULE_LEN: usize = 100_000;
const RATIO_SLACK: f64 = 1e-12;

fn serialize_beta<S: Serializer>(beta: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if beta.is_infinite() {
        s.serialize_str(if *beta > 0.0 { "inf" } else { "-inf" })
    } else {
        s.serialize_f64(*beta)
    }
}

fn serialize_betas<S: Serializer>(betas: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    struct Beta(f64);
    impl Serialize for Beta {
        fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
            serialize_beta(&self.0, s)
        }
    }
    let mut seq = s.serialize_seq(Some(betas.len()))?;
    for &b in betas {
        seq.serialize_element(&Beta(b))?;
    }
    seq.end()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Anchor at `Z(0) = |Ω|`, estimate `Z(∞)`.
    Forward,
    /// Anchor at `Z(∞)`, estimate `Z(0)`.
    Reversed,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Forward => "forward",
            Direction::Reversed => "reversed",
        })
    }
}

impl FromStr for Direction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(Direction::Forward),
            "reversed" => Ok(Direction::Reversed),
            _ => Err(Error::param(format!("unknown direction '{s}'"))),
        }
    }
}

/// Inverse temperatures `0 = β_0 < … < β_ℓ = ∞` with Chebyshev constant `b`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoolingSchedule {
    #[serde(serialize_with = "serialize_betas")]
    pub betas: Vec<f64>,
    #[serde(rename = "B")]
    pub b: f64,
    pub direction: Direction,
    /// Set when the schedule was built from exact partition functions.
    pub oracle_schedule: bool,
}

impl CoolingSchedule {
    pub fn new(betas: Vec<f64>, b: f64, direction: Direction) -> Self {
        CoolingSchedule {
            betas,
            b,
            direction,
            oracle_schedule: false,
        }
    }

    pub fn ell(&self) -> usize {
        self.betas.len().saturating_sub(1)
    }
}

/// Law of `e^{-(target - sample) H}` (or `1[H = 0]` when `target = ∞`) when
/// the state is drawn from `law`.
fn ratio_law(m: &GibbsModel, law: &[f64], sample_beta: f64, target_beta: f64) -> Result<ValueDistribution> {
    let gap = target_beta - sample_beta;
    let value = |h: u32| {
        if target_beta == f64::INFINITY {
            if h == 0 {
                1.0
            } else {
                0.0
            }
        } else {
            (-gap * h as f64).exp()
        }
    };
    let mut mass = vec![0.0; m.max_energy() as usize + 1];
    for (&h, &p) in m.energies().iter().zip(law) {
        mass[h as usize] += p;
    }
    make_distribution(
        mass.iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(h, &p)| (value(h as u32), p)),
    )
}

fn sampled_ratio(m: &GibbsModel, sample_beta: f64, target_beta: f64) -> Result<ValueDistribution> {
    if !sample_beta.is_finite() {
        return Err(Error::param(format!("cannot sample at beta {sample_beta}")));
    }
    if sample_beta == target_beta || target_beta.is_nan() {
        return Err(Error::param(format!(
            "ratio needs distinct inverse temperatures, got {sample_beta} and {target_beta}"
        )));
    }
    ratio_law(m, &m.gibbs_distribution(sample_beta)?, sample_beta, target_beta)
}

/// `Y = e^{-(β_j - β_i) H}` under `π_i`, with mean `Z(β_j)/Z(β_i)`.
pub fn ratio_variable(m: &GibbsModel, beta_i: f64, beta_j: f64) -> Result<ValueDistribution> {
    if !(beta_i < beta_j) {
        return Err(Error::param(format!("ratio variable needs beta_i < beta_j, got {beta_i} and {beta_j}")));
    }
    sampled_ratio(m, beta_i, beta_j)
}

/// `Y = e^{(β_j - β_i) H}` under `π_j`, with mean `Z(β_i)/Z(β_j)`.
pub fn reversed_ratio_variable(m: &GibbsModel, beta_i: f64, beta_j: f64) -> Result<ValueDistribution> {
    if !(beta_i < beta_j) {
        return Err(Error::param(format!("ratio variable needs beta_i < beta_j, got {beta_i} and {beta_j}")));
    }
    sampled_ratio(m, beta_j, beta_i)
}

/// Relative second moment of the pair `(β_i, β_j)` as used by `direction`.
/// The terminal pair `(β, ∞)` always uses the forward form, because `π_∞`
/// cannot be sampled from to estimate the reversed ratio.
pub fn pair_ratio(m: &GibbsModel, beta_i: f64, beta_j: f64, direction: Direction) -> f64 {
    match direction {
        Direction::Reversed if beta_j.is_finite() => m.second_moment_ratio(beta_j, beta_i),
        _ => m.second_moment_ratio(beta_i, beta_j),
    }
}

fn pair_chi_squared(m: &GibbsModel, beta_i: f64, beta_j: f64, direction: Direction) -> f64 {
    let r = match direction {
        Direction::Reversed if beta_j.is_finite() => m.chi_squared_direct(beta_j, beta_i),
        _ => m.chi_squared_direct(beta_i, beta_j),
    };
    r.unwrap_or(f64::INFINITY)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairReport {
    pub index: usize,
    #[serde(serialize_with = "serialize_beta")]
    pub beta_i: f64,
    #[serde(serialize_with = "serialize_beta")]
    pub beta_j: f64,
    /// `E[Y²]/E[Y]²` from partition functions.
    pub ratio: f64,
    /// χ² divergence computed from the Gibbs probabilities.
    pub chi_squared: f64,
    pub overlap_squared: f64,
    pub ratio_ok: bool,
    pub overlap_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduleReport {
    pub pairs: Vec<PairReport>,
    /// Structural problems (ordering, endpoints), independent of `B`.
    pub problems: Vec<String>,
    pub passes: bool,
}

/// Checks the Chebyshev condition and the overlap bound on every pair.
pub fn verify_schedule(m: &GibbsModel, s: &CoolingSchedule) -> ScheduleReport {
    let mut problems = Vec::new();
    let betas = &s.betas;
    if betas.len() < 2 {
        problems.push("schedule needs at least two points".to_string());
    }
    if betas.first() != Some(&0.0) {
        problems.push("schedule must start at beta = 0".to_string());
    }
    if betas.last() != Some(&f64::INFINITY) {
        problems.push("schedule must end at beta = inf".to_string());
    }
    if betas.windows(2).any(|w| !(w[0] < w[1])) {
        problems.push("betas must be strictly increasing".to_string());
    }
    if !(s.b >= 1.0) {
        problems.push(format!("B = {} is below 1", s.b));
    }
    let pairs: Vec<PairReport> = betas
        .windows(2)
        .enumerate()
        .map(|(index, w)| {
            let ratio = pair_ratio(m, w[0], w[1], s.direction);
            let overlap_squared = m.overlap_squared(w[0], w[1]).unwrap_or(0.0);
            PairReport {
                index,
                beta_i: w[0],
                beta_j: w[1],
                ratio,
                chi_squared: pair_chi_squared(m, w[0], w[1], s.direction),
                overlap_squared,
                ratio_ok: ratio <= s.b * (1.0 + RATIO_SLACK),
                overlap_ok: overlap_squared >= 1.0 / s.b - RATIO_SLACK,
            }
        })
        .collect();
    let passes = problems.is_empty() && pairs.iter().all(|p| p.ratio_ok && p.overlap_ok);
    ScheduleReport {
        pairs,
        problems,
        passes,
    }
}

/// Greedy schedule from exact partition functions: from each `β_i`, bisect
/// for the largest `β_{i+1}` keeping the pair ratio at most `b`, and stop as
/// soon as `(β_i, ∞)` qualifies.
pub fn build_schedule(m: &GibbsModel, b: f64, direction: Direction) -> Result<CoolingSchedule> {
    if !(b > 1.0) || !b.is_finite() {
        return Err(Error::param(format!("B = {b} must be a finite number above 1")));
    }
    if m.partition(f64::INFINITY) == 0.0 {
        return Err(Error::InvalidSchedule(format!(
            "{} has no zero-energy state, so Z(inf) = 0 and no schedule reaches inf",
            m.kind()
        )));
    }
    let mut betas = vec![0.0];
    loop {
        let cur = *betas.last().unwrap();
        if pair_ratio(m, cur, f64::INFINITY, direction) <= b {
            betas.push(f64::INFINITY);
            break;
        }
        let next = if pair_ratio(m, cur, BETA_CAP, direction) <= b {
            BETA_CAP
        } else {
            let (mut lo, mut hi) = (cur, BETA_CAP);
            for _ in 0..BISECTION_STEPS {
                let mid = 0.5 * (lo + hi);
                if pair_ratio(m, cur, mid, direction) <= b {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            lo
        };
        if !(next > cur) || betas.len() >= MAX_SCHEDULE_LEN {
            return Err(Error::InvalidSchedule(format!(
                "schedule construction stalled at beta = {cur} with B = {b}"
            )));
        }
        betas.push(next);
    }
    let mut s = CoolingSchedule::new(betas, b, direction);
    s.oracle_schedule = true;
    Ok(s)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMode {
    /// Ratio variables drawn from the exact Gibbs laws, no walk charges.
    #[default]
    IdealSampling,
    /// Exact laws, with walk steps charged from the relaxation times.
    WalkIdealized,
    /// Laws from simulated warm starts, walk steps charged from the
    /// simulated reflections and preparations.
    WalkExactSim,
}

impl fmt::Display for PartitionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PartitionMode::IdealSampling => "ideal_sampling",
            PartitionMode::WalkIdealized => "walk_idealized",
            PartitionMode::WalkExactSim => "walk_exact_sim",
        })
    }
}

impl FromStr for PartitionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ideal_sampling" => Ok(PartitionMode::IdealSampling),
            "walk_idealized" => Ok(PartitionMode::WalkIdealized),
            "walk_exact_sim" => Ok(PartitionMode::WalkExactSim),
            _ => Err(Error::param(format!("unknown partition mode '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PartitionSettings {
    pub mode: PartitionMode,
    pub consts: Constants,
    pub walk: WalkConstants,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioReport {
    pub index: usize,
    #[serde(serialize_with = "serialize_beta")]
    pub sample_beta: f64,
    #[serde(serialize_with = "serialize_beta")]
    pub target_beta: f64,
    /// The factor entering the product.
    pub estimate: f64,
    pub exact: f64,
    /// Whether the factor is the reciprocal of an estimated forward ratio.
    pub inverted: bool,
    pub accuracy: f64,
    pub ledger: QueryLedger,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartitionEstimate {
    pub z_value: f64,
    pub exact_z: f64,
    pub anchor: f64,
    pub ratios: Vec<f64>,
    pub diagnostics: Vec<RatioReport>,
    pub epsilon: f64,
    pub delta: f64,
    pub direction: Direction,
    pub mode: String,
    pub oracle_schedule: bool,
    pub ledger: QueryLedger,
}

impl PartitionEstimate {
    pub fn relative_error(&self) -> f64 {
        (self.z_value / self.exact_z - 1.0).abs()
    }

    pub fn within(&self) -> bool {
        self.relative_error() <= self.epsilon
    }
}

/// One factor of the telescoping product.
#[derive(Debug, Clone, Copy)]
struct RatioPlan {
    /// Schedule index of the sampled distribution.
    sample_index: usize,
    sample_beta: f64,
    target_beta: f64,
    inverted: bool,
    accuracy: f64,
}

fn ratio_plans(s: &CoolingSchedule, eps: f64) -> Vec<RatioPlan> {
    let ell = s.ell();
    let eta = eps / (2.0 * ell as f64);
    let b = &s.betas;
    match s.direction {
        Direction::Forward => (0..ell)
            .map(|i| RatioPlan {
                sample_index: i,
                sample_beta: b[i],
                target_beta: b[i + 1],
                inverted: false,
                accuracy: eta,
            })
            .collect(),
        Direction::Reversed => {
            let mut plans: Vec<RatioPlan> = (0..ell - 1)
                .map(|i| RatioPlan {
                    sample_index: i + 1,
                    sample_beta: b[i + 1],
                    target_beta: b[i],
                    inverted: false,
                    accuracy: eta,
                })
                .collect();
            // The last factor Z(β_{ℓ-1})/Z(∞) is the reciprocal of a forward
            // ratio; relative error η/(1+η) on it is η on the reciprocal.
            plans.push(RatioPlan {
                sample_index: ell - 1,
                sample_beta: b[ell - 1],
                target_beta: f64::INFINITY,
                inverted: true,
                accuracy: eta / (1.0 + eta),
            });
            plans
        }
    }
}

fn anchor_and_target(m: &GibbsModel, direction: Direction) -> (f64, f64) {
    let (z0, zinf) = (m.partition(0.0), m.partition(f64::INFINITY));
    match direction {
        Direction::Forward => (z0, zinf),
        Direction::Reversed => (zinf, z0),
    }
}

fn check_inputs(m: &GibbsModel, s: &CoolingSchedule, eps: f64, delta: f64) -> Result<()> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::param(format!("epsilon {eps} must lie in (0, 1)")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::param(format!("delta {delta} must lie in (0, 1)")));
    }
    let report = verify_schedule(m, s);
    if !report.passes {
        let mut why = report.problems.clone();
        why.extend(
            report
                .pairs
                .iter()
                .filter(|p| !(p.ratio_ok && p.overlap_ok))
                .map(|p| format!("pair {} has ratio {} and overlap {}", p.index, p.ratio, p.overlap_squared)),
        );
        return Err(Error::InvalidSchedule(why.join("; ")));
    }
    Ok(())
}

fn max_tau(m: &GibbsModel, betas: &[f64]) -> Result<f64> {
    let mut tau: f64 = 1.0;
    for &beta in betas.iter().filter(|b| b.is_finite()) {
        tau = tau.max(model_chain(m, beta, false)?.spectrum()?.tau);
    }
    Ok(tau)
}

/// Estimates `Z(∞)` (forward) or `Z(0)` (reversed) to relative error
/// `epsilon` with probability at least `1 - delta`.
pub fn estimate_partition<R: Rng + ?Sized>(
    m: &GibbsModel,
    s: &CoolingSchedule,
    epsilon: f64,
    delta: f64,
    settings: &PartitionSettings,
    rng: &mut R,
    ledger: &mut QueryLedger,
) -> Result<PartitionEstimate> {
    check_inputs(m, s, epsilon, delta)?;
    let before = *ledger;
    let plans = ratio_plans(s, epsilon);
    let ell = plans.len();
    let mut diagnostics = Vec::with_capacity(ell);
    for (index, plan) in plans.iter().enumerate() {
        let start = *ledger;
        let law = match settings.mode {
            PartitionMode::WalkExactSim => {
                let mut prep_ledger = QueryLedger::new();
                let prepared = warm_start_prepare(
                    m,
                    &s.betas,
                    s.b,
                    plan.sample_index,
                    WALK_FAILURE,
                    WalkMode::ExactSim,
                    &settings.walk,
                    &mut prep_ledger,
                )?;
                ratio_law(m, &prepared.sample.probabilities(), plan.sample_beta, plan.target_beta)?
            }
            _ => sampled_ratio(m, plan.sample_beta, plan.target_beta)?,
        };
        let forward = if law.len() == 1 {
            // A constant ratio is revealed by a single sample.
            classical_sample(&law, rng, ledger)
        } else {
            power_median(RELATIVE_FAILURE, delta / ell as f64, rng, ledger, |rng, ledger| {
                Ok(estimate_mean_relative(&law, s.b, plan.accuracy, &settings.consts, rng, ledger)?.value)
            })?
        };
        charge_walk(m, s, plan, settings, &start, ledger)?;
        let exact = m.partition(plan.target_beta) / m.partition(plan.sample_beta);
        let (estimate, exact) = if plan.inverted {
            (1.0 / forward, 1.0 / exact)
        } else {
            (forward, exact)
        };
        diagnostics.push(RatioReport {
            index,
            sample_beta: plan.sample_beta,
            target_beta: plan.target_beta,
            estimate,
            exact,
            inverted: plan.inverted,
            accuracy: plan.accuracy,
            ledger: ledger.since(&start),
        });
    }
    Ok(assemble(m, s, epsilon, delta, settings.mode.to_string(), diagnostics, ledger.since(&before)))
}

/// Adds the walk steps implied by the samples and reflections one ratio
/// consumed. Each of the `R` reflections gets error `γ/R` and each state
/// copy is prepared by a warm start to the sampled index.
fn charge_walk(
    m: &GibbsModel,
    s: &CoolingSchedule,
    plan: &RatioPlan,
    settings: &PartitionSettings,
    start: &QueryLedger,
    ledger: &mut QueryLedger,
) -> Result<()> {
    if settings.mode == PartitionMode::IdealSampling {
        return Ok(());
    }
    let used = ledger.since(start);
    let reflections = used.reflection_uses;
    let copies = used.state_copies + used.classical_samples;
    let betas = &s.betas[..=plan.sample_index];
    let (per_reflection, per_copy) = match settings.mode {
        PartitionMode::WalkIdealized => {
            let tau = max_tau(m, betas)?;
            let per_reflection = if reflections == 0 {
                0
            } else {
                idealized_reflection_cost(tau, WALK_FAILURE / reflections as f64, settings.walk.c_r)
            };
            let per_copy = crate::walk::idealized_warm_start_cost(
                plan.sample_index,
                tau,
                WALK_FAILURE,
                s.b,
                settings.walk.c_s,
            );
            (per_reflection, per_copy)
        }
        _ => {
            let per_reflection = if reflections == 0 {
                0
            } else {
                let walk = szegedy_walk(&model_chain(m, plan.sample_beta, false)?)?;
                let bits = ExactReflection::predicted_bits(&walk, WALK_FAILURE / reflections as f64)?;
                2 * ((1u64 << bits) - 1)
            };
            let mut scratch = QueryLedger::new();
            let per_copy = warm_start_prepare(
                m,
                &s.betas,
                s.b,
                plan.sample_index,
                WALK_FAILURE,
                WalkMode::ExactSim,
                &settings.walk,
                &mut scratch,
            )?
            .walk_steps;
            (per_reflection, per_copy)
        }
    };
    ledger.walk_steps += reflections * per_reflection + copies * per_copy;
    Ok(())
}

fn assemble(
    m: &GibbsModel,
    s: &CoolingSchedule,
    epsilon: f64,
    delta: f64,
    mode: String,
    diagnostics: Vec<RatioReport>,
    ledger: QueryLedger,
) -> PartitionEstimate {
    let (anchor, exact_z) = anchor_and_target(m, s.direction);
    let ratios: Vec<f64> = diagnostics.iter().map(|r| r.estimate).collect();
    let z_value = ratios.iter().fold(anchor, |acc, r| acc * r);
    PartitionEstimate {
        z_value,
        exact_z,
        anchor,
        ratios,
        diagnostics,
        epsilon,
        delta,
        direction: s.direction,
        mode,
        oracle_schedule: s.oracle_schedule,
        ledger,
    }
}

/// How the classical baseline draws its samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassicalSampling {
    /// Exact draws from the Gibbs laws.
    Ideal,
    /// Markov-chain draws, `⌈τ ln(100/π_min)⌉` steps apart.
    Mixing,
}

/// Samples per ratio for the classical estimator, `⌈16Bℓ/ε²⌉`.
pub fn classical_samples_per_ratio(b: f64, ell: usize, eps: f64) -> u64 {
    (16.0 * b * ell as f64 / (eps * eps)).ceil() as u64
}

/// Averages `⌈16Bℓ/ε²⌉` samples of each ratio variable. Relative error
/// `epsilon` with probability at least 3/4.
pub fn classical_baseline<R: Rng + ?Sized>(
    m: &GibbsModel,
    s: &CoolingSchedule,
    epsilon: f64,
    sampling: ClassicalSampling,
    rng: &mut R,
    ledger: &mut QueryLedger,
) -> Result<PartitionEstimate> {
    check_inputs(m, s, epsilon, 0.25)?;
    let before = *ledger;
    let n = classical_samples_per_ratio(s.b, s.ell(), epsilon);
    let mut diagnostics = Vec::new();
    for (index, plan) in ratio_plans(s, epsilon).iter().enumerate() {
        let start = *ledger;
        let mut sum = 0.0;
        match sampling {
            ClassicalSampling::Ideal => {
                let law = sampled_ratio(m, plan.sample_beta, plan.target_beta)?;
                for _ in 0..n {
                    sum += classical_sample(&law, rng, ledger);
                }
            }
            ClassicalSampling::Mixing => {
                let chain = model_chain(m, plan.sample_beta, false)?;
                let steps = chain.mixing_steps(0.01)?;
                let gap = plan.target_beta - plan.sample_beta;
                let mut x = 0;
                for _ in 0..n {
                    x = chain.mix_sample(x, steps, rng, ledger);
                    ledger.classical_samples += 1;
                    let h = m.energies()[x];
                    sum += if plan.target_beta == f64::INFINITY {
                        if h == 0 {
                            1.0
                        } else {
                            0.0
                        }
                    } else {
                        (-gap * h as f64).exp()
                    };
                }
            }
        }
        let forward = sum / n as f64;
        let exact = m.partition(plan.target_beta) / m.partition(plan.sample_beta);
        let (estimate, exact) = if plan.inverted {
            (1.0 / forward, 1.0 / exact)
        } else {
            (forward, exact)
        };
        diagnostics.push(RatioReport {
            index,
            sample_beta: plan.sample_beta,
            target_beta: plan.target_beta,
            estimate,
            exact,
            inverted: plan.inverted,
            accuracy: epsilon / (2.0 * s.ell() as f64),
            ledger: ledger.since(&start),
        });
    }
    let mode = match sampling {
        ClassicalSampling::Ideal => "classical_ideal",
        ClassicalSampling::Mixing => "classical_mixing",
    };
    Ok(assemble(m, s, epsilon, 0.25, mode.to_string(), diagnostics, ledger.since(&before)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gibbs::{colouring_model, ising_model, matching_model, Graph};
    use crate::walk::ExactReflection;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn k2() -> GibbsModel {
        ising_model(&Graph::complete(2)).unwrap()
    }

    fn c4_matchings() -> GibbsModel {
        matching_model(&Graph::cycle(4)).unwrap()
    }

    fn models() -> Vec<GibbsModel> {
        vec![
            k2(),
            ising_model(&Graph::cycle(4)).unwrap(),
            colouring_model(&Graph::complete(3), 3).unwrap(),
            c4_matchings(),
        ]
    }

    #[test]
    fn k2_ratio_variable() {
        let y = ratio_variable(&k2(), 0.0, 2f64.ln()).unwrap();
        // states 00, 11 have H = 0; 01, 10 have H = 1
        assert_eq!(y.support().len(), 2);
        assert!((y.prob_of(1.0) - 0.5).abs() < 1e-15);
        assert!((y.prob_of(0.5) - 0.5).abs() < 1e-15);
        let mo = y.moments();
        assert!((mo.mean - 0.75).abs() < 1e-15);
        let second = mo.variance + mo.mean * mo.mean;
        assert!((second / (mo.mean * mo.mean) - 10.0 / 9.0).abs() < 1e-12);
        assert!(ratio_variable(&k2(), 1.0, 1.0).is_err());
        assert!(ratio_variable(&k2(), 2.0, 1.0).is_err());
        // a vanishing gap tends to the point mass at 1
        let y = ratio_variable(&k2(), 0.0, 1e-300).unwrap();
        assert_eq!(y.support(), &[(1.0, 1.0)]);
    }

    #[test]
    fn ratio_means_match_partition_functions() {
        for m in models() {
            for &(bi, bj) in &[(0.0, 0.3), (0.5, 1.7), (1.0, f64::INFINITY), (0.0, f64::INFINITY)] {
                let y = ratio_variable(&m, bi, bj).unwrap();
                let want = m.partition(bj) / m.partition(bi);
                assert!((y.mean() / want - 1.0).abs() < 1e-12);
                let mo = y.moments();
                let rel = (mo.variance + mo.mean * mo.mean) / (mo.mean * mo.mean);
                assert!((rel / m.second_moment_ratio(bi, bj) - 1.0).abs() < 1e-10);
                if bj.is_finite() {
                    let r = reversed_ratio_variable(&m, bi, bj).unwrap();
                    assert!((r.mean() * want - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn k2_schedules() {
        let m = k2();
        let s = build_schedule(&m, 2.0, Direction::Forward).unwrap();
        assert_eq!(s.betas, vec![0.0, f64::INFINITY]);
        assert!(s.oracle_schedule);
        let s = build_schedule(&m, 1.5, Direction::Forward).unwrap();
        assert!(s.ell() >= 2);
        assert!(verify_schedule(&m, &s).passes);
        let bad = CoolingSchedule::new(vec![0.0, f64::INFINITY], 1.5, Direction::Forward);
        let report = verify_schedule(&m, &bad);
        assert!(!report.passes);
        assert!((report.pairs[0].ratio - 2.0).abs() < 1e-15);
        assert!(build_schedule(&m, 1.0, Direction::Forward).is_err());
    }

    #[test]
    fn edgeless_schedule_is_trivial() {
        let m = ising_model(&Graph::edgeless(3)).unwrap();
        for b in [1.01, 2.0, 10.0] {
            let s = build_schedule(&m, b, Direction::Forward).unwrap();
            assert_eq!(s.betas, vec![0.0, f64::INFINITY]);
        }
    }

    #[test]
    fn unreachable_terminal_rejected() {
        // a triangle has no proper 2-colouring
        let m = colouring_model(&Graph::complete(3), 2).unwrap();
        assert!(matches!(
            build_schedule(&m, 2.0, Direction::Forward),
            Err(Error::InvalidSchedule(_))
        ));
    }

    #[test]
    fn built_schedules_verify_with_chi_squared_identity() {
        for m in models() {
            for b in [1.5, 2.0, 4.0] {
                for dir in [Direction::Forward, Direction::Reversed] {
                    let s = build_schedule(&m, b, dir).unwrap();
                    let report = verify_schedule(&m, &s);
                    assert!(report.passes, "{} B={b} {dir}: {report:?}", m.kind());
                    for p in &report.pairs {
                        assert!((p.chi_squared - (p.ratio - 1.0)).abs() <= 1e-10 * p.ratio);
                        assert!(p.overlap_squared >= 1.0 / b - 1e-12);
                    }
                    // greedy: pushing any interior point further breaks its pair
                    for i in 1..s.ell() {
                        let bumped = s.betas[i] * (1.0 + 1e-6) + 1e-9;
                        if bumped < s.betas[i + 1] {
                            assert!(pair_ratio(&m, s.betas[i - 1], bumped, dir) > b);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn telescoping_product_is_exact() {
        for m in models() {
            for dir in [Direction::Forward, Direction::Reversed] {
                let s = build_schedule(&m, 1.5, dir).unwrap();
                let (anchor, target) = anchor_and_target(&m, dir);
                let product = ratio_plans(&s, 0.1).iter().fold(anchor, |acc, p| {
                    let r = m.partition(p.target_beta) / m.partition(p.sample_beta);
                    acc * if p.inverted { 1.0 / r } else { r }
                });
                assert!((product / target - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn error_budget_algebra() {
        for ell in 1..=64 {
            for k in 1..=50 {
                let eps = k as f64 / 100.0;
                let per = eps / (2.0 * ell as f64);
                let up = (1.0 + per).powi(ell);
                let down = (1.0 - per).powi(ell);
                assert!(up <= (eps / 2.0).exp() && (eps / 2.0).exp() <= 1.0 + eps);
                assert!(down >= 1.0 - eps / 2.0);
            }
        }
    }

    #[test]
    fn edgeless_estimate_is_exact() {
        let m = ising_model(&Graph::edgeless(2)).unwrap();
        let s = build_schedule(&m, 2.0, Direction::Forward).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ledger = QueryLedger::new();
        let est = estimate_partition(&m, &s, 0.1, 0.25, &PartitionSettings::default(), &mut rng, &mut ledger)
            .unwrap();
        assert_eq!(est.z_value, 4.0);
        assert_eq!(est.exact_z, 4.0);
    }

    #[test]
    fn k2_estimate_and_ledger() {
        let m = k2();
        let s = build_schedule(&m, 2.0, Direction::Forward).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut hits = 0;
        for _ in 0..40 {
            let mut ledger = QueryLedger::new();
            let est = estimate_partition(&m, &s, 0.1, 0.25, &PartitionSettings::default(), &mut rng, &mut ledger)
                .unwrap();
            assert_eq!(est.ledger, ledger);
            assert_eq!(est.ledger.walk_steps, 0);
            assert!(est.ledger.reflection_uses > 0);
            hits += est.within() as usize;
        }
        assert!(hits >= 30, "{hits}/40");
    }

    #[test]
    fn c4_matchings_reversed() {
        let m = c4_matchings();
        let s = build_schedule(&m, 2.0, Direction::Reversed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut hits = 0;
        for _ in 0..40 {
            let mut ledger = QueryLedger::new();
            let est = estimate_partition(&m, &s, 0.2, 0.25, &PartitionSettings::default(), &mut rng, &mut ledger)
                .unwrap();
            assert_eq!(est.exact_z, 7.0);
            assert_eq!(est.anchor, 1.0);
            hits += (est.z_value >= 5.6 && est.z_value <= 8.4) as usize;
        }
        assert!(hits >= 30, "{hits}/40");
    }

    #[test]
    fn walk_modes_charge_steps() {
        let m = k2();
        let s = build_schedule(&m, 1.5, Direction::Forward).unwrap();
        let mut totals = Vec::new();
        for mode in [PartitionMode::IdealSampling, PartitionMode::WalkIdealized, PartitionMode::WalkExactSim] {
            let settings = PartitionSettings {
                mode,
                ..PartitionSettings::default()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let mut ledger = QueryLedger::new();
            let est = estimate_partition(&m, &s, 0.2, 0.25, &settings, &mut rng, &mut ledger).unwrap();
            assert_eq!(est.mode, mode.to_string());
            totals.push(est.ledger);
        }
        assert_eq!(totals[0].walk_steps, 0);
        assert!(totals[1].walk_steps > totals[1].reflection_uses);
        assert!(totals[2].walk_steps > 0);
        // the idealized mode draws from the same law as ideal sampling
        assert_eq!(totals[0].reflection_uses, totals[1].reflection_uses);
    }

    #[test]
    fn invalid_schedule_rejected() {
        let m = k2();
        let bad = CoolingSchedule::new(vec![0.0, f64::INFINITY], 1.5, Direction::Forward);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ledger = QueryLedger::new();
        assert!(matches!(
            estimate_partition(&m, &bad, 0.1, 0.25, &PartitionSettings::default(), &mut rng, &mut ledger),
            Err(Error::InvalidSchedule(_))
        ));
        assert!(matches!(
            classical_baseline(&m, &bad, 0.1, ClassicalSampling::Ideal, &mut rng, &mut ledger),
            Err(Error::InvalidSchedule(_))
        ));
    }

    #[test]
    fn classical_baseline_charges() {
        let m = k2();
        let s = build_schedule(&m, 2.0, Direction::Forward).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ledger = QueryLedger::new();
        let est = classical_baseline(&m, &s, 0.1, ClassicalSampling::Ideal, &mut rng, &mut ledger).unwrap();
        assert_eq!(est.ledger.classical_samples, 3200);
        assert_eq!(est.ledger.walk_steps, 0);
        let mut ledger = QueryLedger::new();
        let est = classical_baseline(&m, &s, 0.1, ClassicalSampling::Mixing, &mut rng, &mut ledger).unwrap();
        assert_eq!(est.ledger.classical_samples, 3200);
        let steps = model_chain(&m, 0.0, false).unwrap().mixing_steps(0.01).unwrap() as u64;
        assert_eq!(est.ledger.walk_steps, 3200 * steps);
    }

    #[test]
    fn exact_sim_reflection_bits_reach_target() {
        let m = k2();
        let walk = szegedy_walk(&model_chain(&m, 0.5, false).unwrap()).unwrap();
        for eps in [0.3, 0.05, 1e-3] {
            let bits = ExactReflection::predicted_bits(&walk, eps).unwrap();
            let built = ExactReflection::build(walk.clone(), eps).unwrap();
            assert!(built.error <= eps);
            assert!(bits <= built.phase_bits());
        }
    }

    #[test]
    fn schedule_json_uses_inf() {
        let s = build_schedule(&k2(), 2.0, Direction::Forward).unwrap();
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, r#"{"betas":[0.0,"inf"],"B":2.0,"direction":"forward","oracle_schedule":true}"#);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn schedules_verify_for_any_b(b in 1.05f64..8.0, which in 0usize..4) {
            let m = &models()[which];
            let s = build_schedule(m, b, Direction::Forward).unwrap();
            prop_assert!(verify_schedule(m, &s).passes);
        }
    }
}
