use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use qmcs::amplitude::{
    ae_circuit_distribution, ae_coverage, ae_outcome_distribution, ae_sample, ae_radius,
};
use qmcs::chain::model_chain;
use qmcs::gibbs::{colouring_model, ising_model, matching_model, GibbsModel, Graph, ModelKind};
use qmcs::mean::{
    bounded_t_for_epsilon, estimate_mean_bounded, estimate_mean_classical, estimate_mean_l2,
    estimate_mean_relative, estimate_mean_variance, Constants, Estimate,
};
use qmcs::partition::{
    build_schedule, classical_baseline, estimate_partition, verify_schedule, ClassicalSampling,
    CoolingSchedule, Direction, PartitionEstimate, PartitionMode, PartitionSettings,
};
use qmcs::stats::loglog_slope;
use qmcs::tvd::{estimate_tvd, exact_tvd};
use qmcs::validation::{run_criterion, ValidationConfig, ValidationReport, CRITERIA};
use qmcs::walk::{idealized_reflection_cost, szegedy_walk, ExactReflection, WalkConstants, EXACT_SIM_CAP};
use qmcs::chain::MarkovChain;
use qmcs::{trial_rng, Error, QueryLedger, ValueDistribution};

#[derive(Parser)]
#[command(name = "qmcs", version, about = "Simulated quantum Monte Carlo estimators and their classical baselines")]
struct Cli {
    /// Write the output to this file instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Error constant of amplitude estimation; D follows as max(4C, 10).
    #[arg(long = "C", global = true)]
    c: Option<f64>,
    /// Walk-step constant of idealized reflections.
    #[arg(long = "c-r", global = true, default_value_t = 1.0)]
    c_r: f64,
    /// Walk-step constant of idealized warm starts.
    #[arg(long = "c-s", global = true, default_value_t = 1.0)]
    c_s: f64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the mean of a distribution given as JSON.
    Mean(MeanArgs),
    /// Amplitude-estimation outcome law against the interval bound.
    AeCheck(AeArgs),
    /// Enumerate a Gibbs model and its partition function.
    Model(ModelArgs),
    /// Spectral data of the model's Markov chain.
    Chain(ChainArgs),
    /// Spectrum and reflection checks for the quantum walk of a chain.
    WalkCheck(WalkArgs),
    /// Build and verify a cooling schedule.
    Schedule(ScheduleArgs),
    /// Estimate a partition function along a cooling schedule.
    Partition(PartitionArgs),
    /// Estimate the total variation distance between two distributions.
    Tvd(TvdArgs),
    /// Cost and error sweep over accuracies, as CSV.
    Bench(BenchArgs),
    /// Run the acceptance checks.
    Validate(ValidateArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum MeanMethod {
    Bounded,
    L2,
    Variance,
    Relative,
    Classical,
}

#[derive(Args)]
struct MeanArgs {
    #[arg(long)]
    dist: PathBuf,
    #[arg(long, value_enum, default_value = "variance")]
    method: MeanMethod,
    #[arg(long, default_value_t = 0.01)]
    eps: f64,
    /// Failure probability (bounded and classical methods).
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    /// Standard-deviation bound; defaults to the exact value.
    #[arg(long)]
    sigma: Option<f64>,
    /// Bound on E[v²]/E[v]²; defaults to the exact value.
    #[arg(long = "B")]
    b: Option<f64>,
    /// Iterations for the bounded method; defaults to the smallest t reaching eps.
    #[arg(long)]
    t: Option<usize>,
    #[arg(long, default_value_t = 1)]
    trials: usize,
}

#[derive(Args)]
struct AeArgs {
    #[arg(long)]
    a: f64,
    #[arg(long)]
    t: usize,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelName {
    Ising,
    Colouring,
    Matching,
}

#[derive(Args, Clone)]
struct ModelSpec {
    #[arg(long, value_enum)]
    model: ModelName,
    /// Graph file ("n m" then m lines "u v"), or complete:N, cycle:N, path:N, edgeless:N.
    #[arg(long)]
    graph: String,
    /// Colours for the colouring model.
    #[arg(long, default_value_t = 3)]
    k: usize,
}

#[derive(Args)]
struct ModelArgs {
    #[command(flatten)]
    spec: ModelSpec,
    /// Inverse temperatures at which to report Z ("inf" allowed).
    #[arg(long, value_parser = parse_beta, value_delimiter = ',', default_value = "0,1,inf")]
    beta: Vec<f64>,
}

#[derive(Args)]
struct ChainArgs {
    #[command(flatten)]
    spec: ModelSpec,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long)]
    lazy: bool,
}

#[derive(Args)]
struct WalkArgs {
    /// Use the chain of this model.
    #[arg(long, value_enum, requires = "graph")]
    model: Option<ModelName>,
    #[arg(long)]
    graph: Option<String>,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    /// Use a random reversible chain on this many states instead.
    #[arg(long, conflicts_with = "model")]
    random: Option<usize>,
    #[arg(long = "eps-r", default_value_t = 0.01)]
    eps_r: f64,
}

#[derive(Args)]
struct ScheduleArgs {
    #[command(flatten)]
    spec: ModelSpec,
    #[arg(long = "B", default_value_t = 2.0)]
    b: f64,
    /// Defaults to reversed for matchings and forward otherwise.
    #[arg(long, value_parser = parse_direction)]
    direction: Option<Direction>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ClassicalArg {
    None,
    Ideal,
    Mixing,
}

#[derive(Args)]
struct PartitionArgs {
    #[command(flatten)]
    spec: ModelSpec,
    #[arg(long = "B", default_value_t = 2.0)]
    b: f64,
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    #[arg(long, default_value_t = 0.25)]
    delta: f64,
    #[arg(long, value_parser = parse_mode, default_value = "ideal_sampling")]
    mode: PartitionMode,
    #[arg(long, value_parser = parse_direction)]
    direction: Option<Direction>,
    /// Use these inverse temperatures instead of building a schedule.
    #[arg(long, value_parser = parse_beta, value_delimiter = ',')]
    betas: Option<Vec<f64>>,
    /// Also run the classical baseline.
    #[arg(long, value_enum, default_value = "none")]
    classical: ClassicalArg,
    #[arg(long, default_value_t = 1)]
    trials: usize,
}

#[derive(Args)]
struct TvdArgs {
    /// JSON array of probabilities, or a file holding one.
    #[arg(long)]
    p: String,
    #[arg(long)]
    q: String,
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long, default_value_t = 1)]
    trials: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BenchMethod {
    Bounded,
    L2,
    Variance,
    Relative,
    Partition,
    Tvd,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_enum, default_value = "variance")]
    method: BenchMethod,
    /// Accuracy grid, e.g. eps=0.1,0.05,0.02.
    #[arg(long, value_parser = parse_sweep, default_value = "eps=0.1,0.05,0.02,0.01")]
    sweep: Sweep,
    /// Distribution for the mean methods; a fixed three-point law by default.
    #[arg(long)]
    dist: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    trials: usize,
}

#[derive(Args)]
struct ValidateArgs {
    /// Run only these criteria.
    #[arg(long)]
    criterion: Vec<u8>,
    /// Leave wall-clock runtimes out of the report.
    #[arg(long)]
    omit_timings: bool,
}

fn parse_beta(s: &str) -> Result<f64, String> {
    match s.trim() {
        "inf" | "infinity" => Ok(f64::INFINITY),
        t => t
            .parse::<f64>()
            .ok()
            .filter(|b| *b >= 0.0)
            .ok_or_else(|| format!("'{s}' is not a nonnegative number or 'inf'")),
    }
}

fn parse_direction(s: &str) -> Result<Direction, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_mode(s: &str) -> Result<PartitionMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Clone, Debug)]
struct Sweep(Vec<f64>);

fn parse_sweep(s: &str) -> Result<Sweep, String> {
    let list = s.strip_prefix("eps=").ok_or("sweep must look like eps=0.1,0.05")?;
    let values = list
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("bad sweep value '{x}': {e}")))
        .collect::<Result<Vec<f64>, String>>()?;
    if values.is_empty() || values.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
        return Err("sweep values must lie in (0, 1)".into());
    }
    Ok(Sweep(values))
}

/// Failure classes, mapped to exit codes 1, 2 and 3.
#[derive(Debug)]
enum CliError {
    Config(String),
    Io(String),
    Contract(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Io(_) => 2,
            CliError::Contract(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "invalid configuration: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Contract(m) => write!(f, "contract violation: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Contract(_) | Error::InvalidSchedule(_) | Error::OverlapViolated { .. } => {
                CliError::Contract(e.to_string())
            }
            _ => CliError::Config(e.to_string()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn read_distribution(path: &Path) -> CliResult<ValueDistribution> {
    serde_json::from_str(&read_text(path)?)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// A JSON array given inline or through a file.
fn read_probabilities(arg: &str) -> CliResult<Vec<f64>> {
    let text = if arg.trim_start().starts_with('[') {
        arg.to_string()
    } else {
        read_text(Path::new(arg))?
    };
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{arg}: {e}")))
}

fn read_graph(arg: &str) -> CliResult<Graph> {
    let path = Path::new(arg);
    if path.exists() {
        return Ok(Graph::parse(&read_text(path)?)?);
    }
    let (kind, n) = arg
        .split_once(':')
        .and_then(|(k, n)| Some((k, n.parse::<usize>().ok()?)))
        .ok_or_else(|| CliError::Io(format!("{arg}: no such file")))?;
    match kind {
        "complete" => Ok(Graph::complete(n)),
        "cycle" => Ok(Graph::cycle(n)),
        "path" => Ok(Graph::path(n)),
        "edgeless" => Ok(Graph::edgeless(n)),
        _ => Err(CliError::Config(format!("unknown graph family '{kind}'"))),
    }
}

fn build_model(spec: &ModelSpec) -> CliResult<GibbsModel> {
    let g = read_graph(&spec.graph)?;
    Ok(match spec.model {
        ModelName::Ising => ising_model(&g)?,
        ModelName::Colouring => colouring_model(&g, spec.k)?,
        ModelName::Matching => matching_model(&g)?,
    })
}

fn default_direction(spec: &ModelSpec, given: Option<Direction>) -> Direction {
    given.unwrap_or(match spec.model {
        ModelName::Matching => Direction::Reversed,
        _ => Direction::Forward,
    })
}

/// Runs `trials` independent copies of `run`, trial `i` on stream `i`.
fn run_trials<T, F>(seed: u64, trials: usize, run: F) -> CliResult<Vec<T>>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng) -> qmcs::Result<T> + Sync,
{
    if trials == 0 {
        return Err(CliError::Config("trials must be at least 1".into()));
    }
    Ok((0..trials)
        .into_par_iter()
        .map(|i| run(&mut trial_rng(seed, i as u64)))
        .collect::<qmcs::Result<Vec<T>>>()?)
}

fn beta_json(b: f64) -> Value {
    if b.is_infinite() {
        json!("inf")
    } else {
        json!(b)
    }
}

struct Context {
    seed: u64,
    consts: Constants,
    walk: WalkConstants,
}

impl Context {
    fn envelope(&self, command: &str, params: Value, result: Value) -> Value {
        json!({
            "schema": 1,
            "command": command,
            "seed": self.seed,
            "constants": {
                "C": self.consts.c,
                "D": self.consts.d,
                "c_r": self.walk.c_r,
                "c_s": self.walk.c_s,
            },
            "params": params,
            "result": result,
        })
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("output types serialize")
}

fn summarize_estimates(estimates: &[Estimate], truth: f64) -> Value {
    let n = estimates.len() as f64;
    let covered = estimates.iter().filter(|e| e.within(truth)).count();
    let ledger: QueryLedger = estimates.iter().map(|e| e.ledger).sum();
    json!({
        "exact_mean": truth,
        "trials": estimates.len(),
        "coverage": covered as f64 / n,
        "mean_abs_error": estimates.iter().map(|e| (e.value - truth).abs()).sum::<f64>() / n,
        "ledger_total": ledger,
        "estimates": estimates,
    })
}

fn run_mean_method(
    d: &ValueDistribution,
    method: MeanMethod,
    eps: f64,
    delta: f64,
    sigma: f64,
    b: f64,
    t: Option<usize>,
    consts: &Constants,
    rng: &mut ChaCha8Rng,
) -> qmcs::Result<Estimate> {
    let mut ledger = QueryLedger::new();
    match method {
        MeanMethod::Bounded => {
            let t = match t {
                Some(t) => t,
                None => bounded_t_for_epsilon(eps, consts)?,
            };
            estimate_mean_bounded(d, t, delta, consts, rng, &mut ledger)
        }
        MeanMethod::L2 => estimate_mean_l2(d, eps, consts, rng, &mut ledger),
        MeanMethod::Variance => estimate_mean_variance(d, sigma, eps, consts, rng, &mut ledger),
        MeanMethod::Relative => estimate_mean_relative(d, b, eps, consts, rng, &mut ledger),
        MeanMethod::Classical => estimate_mean_classical(d, sigma, eps, delta, rng, &mut ledger),
    }
}

fn exact_sigma(d: &ValueDistribution) -> f64 {
    d.moments().variance.sqrt()
}

fn exact_relative_moment(d: &ValueDistribution) -> f64 {
    let m = d.moments();
    (m.variance + m.mean * m.mean) / (m.mean * m.mean)
}

fn cmd_mean(ctx: &Context, a: &MeanArgs) -> CliResult<Value> {
    let d = read_distribution(&a.dist)?;
    let sigma = a.sigma.unwrap_or_else(|| exact_sigma(&d));
    let b = a.b.unwrap_or_else(|| exact_relative_moment(&d));
    let estimates = run_trials(ctx.seed, a.trials, |rng| {
        run_mean_method(&d, a.method, a.eps, a.delta, sigma, b, a.t, &ctx.consts, rng)
    })?;
    let params = json!({
        "dist": a.dist.display().to_string(),
        "method": a.method,
        "eps": a.eps,
        "delta": a.delta,
        "sigma": sigma,
        "B": b,
        "t": a.t,
        "trials": a.trials,
    });
    Ok(ctx.envelope("mean", params, summarize_estimates(&estimates, d.mean())))
}

fn cmd_ae_check(ctx: &Context, a: &AeArgs) -> CliResult<Value> {
    let law = ae_outcome_distribution(a.a, a.t)?;
    let radius = ae_radius(a.a, a.t);
    let coverage = ae_coverage(a.a, a.t)?;
    let circuit_tv = if a.t <= 4096 {
        Some(law.tv_distance(&ae_circuit_distribution(a.a, a.t)?))
    } else {
        None
    };
    let hits = run_trials(ctx.seed, a.trials, |rng| {
        let mut ledger = QueryLedger::new();
        let v = ae_sample(a.a, a.t, rng, &mut ledger)?;
        Ok((v - a.a).abs() <= radius + 1e-12)
    })?;
    let empirical = hits.iter().filter(|&&h| h).count() as f64 / a.trials as f64;
    let params = json!({"a": a.a, "t": a.t, "trials": a.trials});
    let result = json!({
        "radius": radius,
        "exact_coverage": coverage,
        "required_coverage": qmcs::amplitude::AE_SUCCESS,
        "empirical_coverage": empirical,
        "circuit_tv": circuit_tv,
        "outcome_law": law,
    });
    Ok(ctx.envelope("ae-check", params, result))
}

fn model_params(spec: &ModelSpec) -> Value {
    json!({
        "model": match spec.model {
            ModelName::Ising => "ising",
            ModelName::Colouring => "colouring",
            ModelName::Matching => "matching",
        },
        "graph": spec.graph,
        "k": spec.k,
    })
}

fn cmd_model(ctx: &Context, a: &ModelArgs) -> CliResult<Value> {
    let m = build_model(&a.spec)?;
    let partition: Vec<Value> = a
        .beta
        .iter()
        .map(|&b| {
            let mut row = json!({"beta": beta_json(b), "Z": m.partition(b)});
            // Spin convention H = -Σ z_u z_v, whose β is twice the disagreement one.
            if m.kind() == ModelKind::Ising && b.is_finite() {
                row["Z_spin_convention"] = json!(m.ising_unshifted_partition(b / 2.0)?);
            }
            Ok(row)
        })
        .collect::<qmcs::Result<_>>()?;
    let result = json!({
        "kind": m.kind().to_string(),
        "vertices": m.graph().n_vertices(),
        "edges": m.graph().edges().len(),
        "states": m.size(),
        "max_energy": m.max_energy(),
        "energy_histogram": m.energy_histogram(),
        "partition": partition,
    });
    let mut params = model_params(&a.spec);
    params["beta"] = Value::Array(a.beta.iter().map(|&b| beta_json(b)).collect());
    Ok(ctx.envelope("model", params, result))
}

fn chain_summary(c: &MarkovChain) -> CliResult<Value> {
    let spectrum = c.spectrum()?;
    Ok(json!({
        "states": c.size(),
        "lazy": c.is_lazy(),
        "lambda1": spectrum.lambda1,
        "tau": spectrum.tau,
        "pi_min": c.pi_min(),
        "row_sum_residual": c.row_sum_residual(),
        "stationarity_residual": c.stationarity_residual(),
        "reversibility_residual": c.reversibility_residual()?,
        "mixing_steps": c.mixing_steps(0.01)?,
    }))
}

fn cmd_chain(ctx: &Context, a: &ChainArgs) -> CliResult<Value> {
    let m = build_model(&a.spec)?;
    let c = model_chain(&m, a.beta, a.lazy)?;
    let mut params = model_params(&a.spec);
    params["beta"] = json!(a.beta);
    params["lazy"] = json!(a.lazy);
    Ok(ctx.envelope("chain", params, chain_summary(&c)?))
}

fn cmd_walk_check(ctx: &Context, a: &WalkArgs) -> CliResult<Value> {
    let spec = match (a.model, &a.graph) {
        (Some(model), Some(graph)) => Some(ModelSpec {
            model,
            graph: graph.clone(),
            k: a.k,
        }),
        _ => None,
    };
    let (chain, mut params) = match (&spec, a.random) {
        (_, Some(n)) => {
            let mut rng = trial_rng(ctx.seed, 0);
            (MarkovChain::random_reversible(n, &mut rng)?, json!({"random": n}))
        }
        (Some(spec), None) => {
            let m = build_model(spec)?;
            let mut p = model_params(spec);
            p["beta"] = json!(a.beta);
            (model_chain(&m, a.beta, false)?, p)
        }
        (None, None) => return Err(CliError::Config("give --model/--graph or --random".into())),
    };
    params["eps_r"] = json!(a.eps_r);
    if !(a.eps_r > 0.0 && a.eps_r < 1.0) {
        return Err(CliError::Config(format!("eps-r {} must lie in (0, 1)", a.eps_r)));
    }
    let walk = szegedy_walk(&chain)?;
    let tau = chain.spectrum()?.tau;
    let exact = if chain.size() <= EXACT_SIM_CAP {
        let r = ExactReflection::build(walk.clone(), a.eps_r)?;
        json!({
            "phase_bits": r.phase_bits(),
            "error": r.error,
            "walk_steps_per_use": r.walk_steps_per_use(),
        })
    } else {
        Value::Null
    };
    let result = json!({
        "chain": chain_summary(&chain)?,
        "phase_gap": walk.phase_gap(),
        "unitarity_residual": walk.unitarity_residual(),
        "spectral_mismatch": walk.spectral_mismatch()?,
        "predicted_phase_bits": ExactReflection::predicted_bits(&walk, a.eps_r)?,
        "exact_reflection": exact,
        "idealized_reflection_cost": idealized_reflection_cost(tau, a.eps_r, ctx.walk.c_r),
    });
    Ok(ctx.envelope("walk-check", params, result))
}

fn cmd_schedule(ctx: &Context, a: &ScheduleArgs) -> CliResult<Value> {
    let m = build_model(&a.spec)?;
    let direction = default_direction(&a.spec, a.direction);
    let s = build_schedule(&m, a.b, direction)?;
    let report = verify_schedule(&m, &s);
    if !report.passes {
        return Err(CliError::Contract("built schedule failed verification".into()));
    }
    let mut params = model_params(&a.spec);
    params["B"] = json!(a.b);
    params["direction"] = json!(direction);
    let result = json!({"schedule": s, "ell": s.ell(), "verification": report});
    Ok(ctx.envelope("schedule", params, result))
}

fn summarize_partition(runs: &[PartitionEstimate]) -> Value {
    let n = runs.len() as f64;
    let ledger: QueryLedger = runs.iter().map(|r| r.ledger).sum();
    json!({
        "trials": runs.len(),
        "exact_z": runs[0].exact_z,
        "coverage": runs.iter().filter(|r| r.within()).count() as f64 / n,
        "mean_relative_error": runs.iter().map(|r| r.relative_error()).sum::<f64>() / n,
        "ledger_total": ledger,
        "runs": runs,
    })
}

fn cmd_partition(ctx: &Context, a: &PartitionArgs) -> CliResult<Value> {
    let m = build_model(&a.spec)?;
    let direction = default_direction(&a.spec, a.direction);
    let s = match &a.betas {
        Some(betas) => CoolingSchedule::new(betas.clone(), a.b, direction),
        None => build_schedule(&m, a.b, direction)?,
    };
    let settings = PartitionSettings {
        mode: a.mode,
        consts: ctx.consts,
        walk: ctx.walk,
    };
    let runs = run_trials(ctx.seed, a.trials, |rng| {
        let mut ledger = QueryLedger::new();
        estimate_partition(&m, &s, a.eps, a.delta, &settings, rng, &mut ledger)
    })?;
    let classical = match a.classical {
        ClassicalArg::None => Value::Null,
        ClassicalArg::Ideal | ClassicalArg::Mixing => {
            let sampling = if a.classical == ClassicalArg::Ideal {
                ClassicalSampling::Ideal
            } else {
                ClassicalSampling::Mixing
            };
            // Classical trials use the streams after the quantum ones.
            let offset = ctx.seed.wrapping_add(0x9e37_79b9_7f4a_7c15);
            let runs = run_trials(offset, a.trials, |rng| {
                let mut ledger = QueryLedger::new();
                classical_baseline(&m, &s, a.eps, sampling, rng, &mut ledger)
            })?;
            summarize_partition(&runs)
        }
    };
    let mut params = model_params(&a.spec);
    params["B"] = json!(a.b);
    params["eps"] = json!(a.eps);
    params["delta"] = json!(a.delta);
    params["mode"] = json!(a.mode);
    params["direction"] = json!(direction);
    params["trials"] = json!(a.trials);
    let mut result = summarize_partition(&runs);
    result["z_value"] = json!(runs[0].z_value);
    result["schedule"] = to_value(&s);
    result["classical"] = classical;
    Ok(ctx.envelope("partition", params, result))
}

fn cmd_tvd(ctx: &Context, a: &TvdArgs) -> CliResult<Value> {
    let p = read_probabilities(&a.p)?;
    let q = read_probabilities(&a.q)?;
    let truth = exact_tvd(&p, &q)?;
    let runs = run_trials(ctx.seed, a.trials, |rng| {
        let mut ledger = QueryLedger::new();
        estimate_tvd(&p, &q, a.eps, a.delta, &ctx.consts, rng, &mut ledger)
    })?;
    let n = runs.len() as f64;
    let ledger: QueryLedger = runs.iter().map(|r| r.estimate.ledger).sum();
    let params = json!({"p": p, "q": q, "eps": a.eps, "delta": a.delta, "trials": a.trials});
    let result = json!({
        "value": runs[0].estimate.value,
        "exact_tvd": truth,
        "coverage": runs.iter().filter(|r| r.estimate.within(truth)).count() as f64 / n,
        "ledger_total": ledger,
        "runs": runs,
    });
    Ok(ctx.envelope("tvd", params, result))
}

struct BenchRow {
    eps: f64,
    reflections: f64,
    walk_steps: f64,
    classical_samples: f64,
    error: f64,
}

fn mean_rows(ctx: &Context, a: &BenchArgs, method: MeanMethod) -> CliResult<Vec<BenchRow>> {
    let d = match &a.dist {
        Some(path) => read_distribution(path)?,
        None => match method {
            MeanMethod::Bounded => ValueDistribution::bernoulli(0.25)?,
            _ => qmcs::make_distribution([(4.0, 0.25), (5.0, 0.5), (6.0, 0.25)])?,
        },
    };
    let truth = d.mean();
    let sigma = exact_sigma(&d).max(f64::MIN_POSITIVE);
    let b = exact_relative_moment(&d);
    let delta = 0.1;
    let mut rows = Vec::new();
    for (k, &eps) in a.sweep.0.iter().enumerate() {
        let seed = ctx.seed.wrapping_add(k as u64);
        let runs = run_trials(seed, a.trials, |rng| {
            run_mean_method(&d, method, eps, delta, sigma, b, None, &ctx.consts, rng)
        })?;
        let n = runs.len() as f64;
        let mut ledger = QueryLedger::new();
        let mut rng = trial_rng(seed, u64::MAX);
        estimate_mean_classical(&d, sigma, eps, delta, &mut rng, &mut ledger)?;
        let error = runs
            .iter()
            .map(|e| {
                let err = (e.value - truth).abs();
                if method == MeanMethod::Relative {
                    err / truth.abs()
                } else {
                    err
                }
            })
            .sum::<f64>()
            / n;
        rows.push(BenchRow {
            eps,
            reflections: runs.iter().map(|e| e.ledger.reflection_uses as f64).sum::<f64>() / n,
            walk_steps: 0.0,
            classical_samples: ledger.classical_samples as f64,
            error,
        });
    }
    Ok(rows)
}

fn partition_rows(ctx: &Context, a: &BenchArgs) -> CliResult<Vec<BenchRow>> {
    let m = ising_model(&Graph::complete(2))?;
    let s = build_schedule(&m, 2.0, Direction::Forward)?;
    let settings = PartitionSettings {
        mode: PartitionMode::WalkIdealized,
        consts: ctx.consts,
        walk: ctx.walk,
    };
    let mut rows = Vec::new();
    for (k, &eps) in a.sweep.0.iter().enumerate() {
        let seed = ctx.seed.wrapping_add(k as u64);
        let runs = run_trials(seed, a.trials, |rng| {
            let mut ledger = QueryLedger::new();
            estimate_partition(&m, &s, eps, 0.25, &settings, rng, &mut ledger)
        })?;
        let n = runs.len() as f64;
        let mut ledger = QueryLedger::new();
        let mut rng = trial_rng(seed, u64::MAX);
        classical_baseline(&m, &s, eps, ClassicalSampling::Ideal, &mut rng, &mut ledger)?;
        rows.push(BenchRow {
            eps,
            reflections: runs.iter().map(|r| r.ledger.reflection_uses as f64).sum::<f64>() / n,
            walk_steps: runs.iter().map(|r| r.ledger.walk_steps as f64).sum::<f64>() / n,
            classical_samples: ledger.classical_samples as f64,
            error: runs.iter().map(|r| r.relative_error()).sum::<f64>() / n,
        });
    }
    Ok(rows)
}

fn tvd_rows(ctx: &Context, a: &BenchArgs) -> CliResult<Vec<BenchRow>> {
    let p = [0.1, 0.2, 0.3, 0.4];
    let q = [0.25; 4];
    let truth = exact_tvd(&p, &q)?;
    let mut rows = Vec::new();
    for (k, &eps) in a.sweep.0.iter().enumerate() {
        let runs = run_trials(ctx.seed.wrapping_add(k as u64), a.trials, |rng| {
            let mut ledger = QueryLedger::new();
            estimate_tvd(&p, &q, eps, 0.1, &ctx.consts, rng, &mut ledger)
        })?;
        let n = runs.len() as f64;
        rows.push(BenchRow {
            eps,
            reflections: runs.iter().map(|r| r.ae_iterations as f64).sum::<f64>() / n,
            walk_steps: 0.0,
            classical_samples: 0.0,
            error: runs.iter().map(|r| (r.estimate.value - truth).abs()).sum::<f64>() / n,
        });
    }
    Ok(rows)
}

fn cmd_bench(ctx: &Context, a: &BenchArgs) -> CliResult<String> {
    let (rows, with_walk) = match a.method {
        BenchMethod::Bounded => (mean_rows(ctx, a, MeanMethod::Bounded)?, false),
        BenchMethod::L2 => (mean_rows(ctx, a, MeanMethod::L2)?, false),
        BenchMethod::Variance => (mean_rows(ctx, a, MeanMethod::Variance)?, false),
        BenchMethod::Relative => (mean_rows(ctx, a, MeanMethod::Relative)?, false),
        BenchMethod::Partition => (partition_rows(ctx, a)?, true),
        BenchMethod::Tvd => (tvd_rows(ctx, a)?, false),
    };
    let mut out = String::from("eps,reflections,classical_samples,error");
    if with_walk {
        out.push_str(",walk_steps");
    }
    out.push('\n');
    for r in &rows {
        out.push_str(&format!("{},{},{},{}", r.eps, r.reflections, r.classical_samples, r.error));
        if with_walk {
            out.push_str(&format!(",{}", r.walk_steps));
        }
        out.push('\n');
    }
    if rows.len() >= 2 {
        let inv: Vec<f64> = rows.iter().map(|r| 1.0 / r.eps).collect();
        let cost: Vec<f64> = rows.iter().map(|r| r.reflections + r.walk_steps).collect();
        out.push_str(&format!("# quantum cost slope {:.4}\n", loglog_slope(&inv, &cost)));
    }
    Ok(out)
}

fn cmd_validate(ctx: &Context, a: &ValidateArgs) -> CliResult<(Value, bool)> {
    let cfg = ValidationConfig {
        consts: ctx.consts,
        seed: ctx.seed,
    };
    let ids: Vec<u8> = if a.criterion.is_empty() {
        CRITERIA.iter().map(|c| c.0).collect()
    } else {
        a.criterion.clone()
    };
    if let Some(bad) = ids.iter().find(|id| !CRITERIA.iter().any(|c| c.0 == **id)) {
        return Err(CliError::Config(format!("no criterion {bad}")));
    }
    let criteria: Vec<_> = ids.iter().map(|&id| run_criterion(id, &cfg)).collect();
    let passed = criteria.iter().all(|c| c.passed);
    let mut report = to_value(&ValidationReport { criteria, passed });
    if a.omit_timings {
        for c in report["criteria"].as_array_mut().into_iter().flatten() {
            c.as_object_mut().map(|o| o.remove("runtime_seconds"));
        }
    }
    let params = json!({"criteria": ids, "omit_timings": a.omit_timings});
    Ok((ctx.envelope("validate", params, report), passed))
}

fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("QMCS_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Config(format!("QMCS_THREADS='{raw}' is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn emit(out: &Option<PathBuf>, text: &str) -> CliResult<()> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            match stdout.write_all(text.as_bytes()).and_then(|_| stdout.flush()) {
                // A closed reader (e.g. `| head`) is not an error.
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::Io(e.to_string())),
                _ => Ok(()),
            }
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    let consts = match cli.c {
        Some(c) if c > 0.0 && c.is_finite() => Constants::from_c(c),
        Some(c) => return Err(CliError::Config(format!("C = {c} must be positive"))),
        None => Constants::default(),
    };
    let ctx = Context {
        seed: cli.seed,
        consts,
        walk: WalkConstants {
            c_r: cli.c_r,
            c_s: cli.c_s,
        },
    };
    let json_text = |v: Value| format!("{}\n", serde_json::to_string_pretty(&v).expect("json values serialize"));
    match &cli.command {
        Command::Mean(a) => emit(&cli.out, &json_text(cmd_mean(&ctx, a)?)),
        Command::AeCheck(a) => emit(&cli.out, &json_text(cmd_ae_check(&ctx, a)?)),
        Command::Model(a) => emit(&cli.out, &json_text(cmd_model(&ctx, a)?)),
        Command::Chain(a) => emit(&cli.out, &json_text(cmd_chain(&ctx, a)?)),
        Command::WalkCheck(a) => emit(&cli.out, &json_text(cmd_walk_check(&ctx, a)?)),
        Command::Schedule(a) => emit(&cli.out, &json_text(cmd_schedule(&ctx, a)?)),
        Command::Partition(a) => emit(&cli.out, &json_text(cmd_partition(&ctx, a)?)),
        Command::Tvd(a) => emit(&cli.out, &json_text(cmd_tvd(&ctx, a)?)),
        Command::Bench(a) => emit(&cli.out, &cmd_bench(&ctx, a)?),
        Command::Validate(a) => {
            let (report, passed) = cmd_validate(&ctx, a)?;
            emit(&cli.out, &json_text(report))?;
            if passed {
                Ok(())
            } else {
                Err(CliError::Contract("acceptance criteria failed".into()))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qmcs: {e}");
            ExitCode::from(e.code())
        }
    }
}
