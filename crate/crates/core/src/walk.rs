//! Szegedy walks, coherent samples and approximate reflections.
//!
//! Walk operators act on the edge space `|x⟩|y⟩`, indexed `x * n + y`.
//! Two modes are offered for the reflection and warm-start contracts:
//! exact simulation of the phase-estimation circuits on small chains, and
//! an idealized mode applying the exact operation while charging its
//! nominal cost.

use std::sync::Arc;

use nalgebra::{Complex, DMatrix, DVector, Schur, SymmetricEigen};
use rand::Rng;
use rustfft::{Fft, FftPlanner};
use serde::Serialize;

use crate::chain::{model_chain, MarkovChain};
use crate::distribution::QueryLedger;
use crate::error::{Error, Result};
use crate::gibbs::GibbsModel;

/// Largest chain accepted by [`szegedy_walk`].
pub const WALK_CAP: usize = 64;
/// Largest chain accepted by the exact reflection and warm-start simulations.
pub const EXACT_SIM_CAP: usize = 16;
/// Largest phase register (in qubits) the exact simulations will try.
pub const MAX_PHASE_BITS: u32 = 20;

type C64 = Complex<f64>;

/// Constants inside the walk cost formulas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WalkConstants {
    pub c_r: f64,
    pub c_s: f64,
}

impl Default for WalkConstants {
    fn default() -> Self {
        WalkConstants { c_r: 1.0, c_s: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WalkMode {
    ExactSim,
    Idealized,
}

/// `|π⟩ = Σ_x √π(x) |x⟩`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantumSample {
    pub amplitudes: Vec<f64>,
}

impl QuantumSample {
    pub fn from_probabilities(p: &[f64]) -> Self {
        QuantumSample {
            amplitudes: p.iter().map(|x| x.max(0.0).sqrt()).collect(),
        }
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a * a).collect()
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    /// `⟨self|other⟩²`.
    pub fn overlap_squared(&self, other: &QuantumSample) -> f64 {
        let s: f64 = self.amplitudes.iter().zip(&other.amplitudes).map(|(a, b)| a * b).sum();
        s * s
    }
}

/// Coherent sample of the Gibbs distribution at `beta`.
pub fn quantum_sample_state(m: &GibbsModel, beta: f64) -> Result<QuantumSample> {
    Ok(QuantumSample::from_probabilities(&m.gibbs_distribution(beta)?))
}

/// Isometry `T|x⟩ = |x⟩ Σ_y √P(x,y) |y⟩` as an `n² × n` matrix.
fn isometry(c: &MarkovChain) -> DMatrix<f64> {
    let n = c.size();
    let mut t = DMatrix::zeros(n * n, n);
    for (x, row) in c.rows().iter().enumerate() {
        for &(y, p) in row {
            t[(x * n + y, x)] += p;
        }
    }
    t.map(f64::sqrt)
}

/// `T √π`, the walk's stationary vector.
fn stationary_edge_vector(c: &MarkovChain) -> DVector<f64> {
    let n = c.size();
    let mut v = DVector::zeros(n * n);
    for (x, row) in c.rows().iter().enumerate() {
        for &(y, p) in row {
            v[x * n + y] += c.stationary()[x] * p;
        }
    }
    v.map(f64::sqrt)
}

/// Szegedy walk `W = S (2 T T† - I)`.
#[derive(Debug, Clone)]
pub struct WalkOperator {
    n: usize,
    w: DMatrix<f64>,
    t: DMatrix<f64>,
    pi_hat: DVector<f64>,
    discriminant_eigs: Vec<f64>,
}

/// Builds the walk for an ergodic reversible chain with at most
/// [`WALK_CAP`] states.
pub fn szegedy_walk(c: &MarkovChain) -> Result<WalkOperator> {
    let n = c.size();
    if n > WALK_CAP {
        return Err(Error::CapExceeded { size: n, cap: WALK_CAP });
    }
    c.spectrum()?;
    let t = isometry(c);
    let reflect = 2.0 * &t * t.transpose() - DMatrix::identity(n * n, n * n);
    let mut w = DMatrix::zeros(n * n, n * n);
    for x in 0..n {
        for y in 0..n {
            w.row_mut(x * n + y).copy_from(&reflect.row(y * n + x));
        }
    }
    let mut discriminant_eigs: Vec<f64> =
        SymmetricEigen::new(c.discriminant()?).eigenvalues.iter().copied().collect();
    discriminant_eigs.sort_by(f64::total_cmp);
    Ok(WalkOperator {
        n,
        w,
        t,
        pi_hat: stationary_edge_vector(c),
        discriminant_eigs,
    })
}

impl WalkOperator {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn chain_size(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.n * self.n
    }

    /// Stationary vector `T √π` on the edge space.
    pub fn stationary_vector(&self) -> &DVector<f64> {
        &self.pi_hat
    }

    pub fn isometry(&self) -> &DMatrix<f64> {
        &self.t
    }

    /// `max |W†W - I|`.
    pub fn unitarity_residual(&self) -> f64 {
        let d = self.w.transpose() * &self.w - DMatrix::identity(self.dim(), self.dim());
        d.amax()
    }

    /// Eigenvalues of `W`.
    ///
    /// Unshifted QR sweeps can stall on orthogonal matrices, so the Schur
    /// form is taken of `W + sI`; eigenvalues of a normal matrix are well
    /// conditioned, and the shift is removed afterwards.
    pub fn eigenvalues(&self) -> Result<Vec<C64>> {
        const SHIFT: f64 = 0.375;
        let shifted = &self.w + DMatrix::identity(self.dim(), self.dim()) * SHIFT;
        let schur = Schur::try_new(shifted, 1e-15, 100_000)
            .ok_or_else(|| Error::Contract("walk eigenvalue iteration did not converge".into()))?;
        Ok(schur
            .complex_eigenvalues()
            .iter()
            .map(|z| z - C64::new(SHIFT, 0.0))
            .collect())
    }

    /// Eigenvalues of the discriminant `√(P(x,y)P(y,x))`, ascending.
    pub fn discriminant_eigenvalues(&self) -> &[f64] {
        &self.discriminant_eigs
    }

    /// Phase gap `arccos λ` for the largest discriminant eigenvalue below 1.
    pub fn phase_gap(&self) -> f64 {
        let below = self.discriminant_eigs[..self.discriminant_eigs.len() - 1]
            .iter()
            .copied()
            .fold(-1.0, f64::max);
        below.clamp(-1.0, 1.0).acos()
    }

    /// Largest distance between `e^{±i arccos λ}` and the nearest walk
    /// eigenvalue, over discriminant eigenvalues `λ`.
    pub fn spectral_mismatch(&self) -> Result<f64> {
        let eigs = self.eigenvalues()?;
        let mut worst: f64 = 0.0;
        for &lambda in &self.discriminant_eigs {
            // arccos is ill-conditioned at ±1, where rounding would show up as
            // a 1e-8 phase error
            let lambda = if 1.0 - lambda.abs() < 1e-12 { lambda.signum() } else { lambda };
            let theta = lambda.clamp(-1.0, 1.0).acos();
            for sign in [1.0, -1.0] {
                let target = C64::from_polar(1.0, sign * theta);
                let nearest = eigs
                    .iter()
                    .map(|e| (e - target).norm())
                    .fold(f64::INFINITY, f64::min);
                worst = worst.max(nearest);
            }
        }
        Ok(worst)
    }

    /// Exact reflection `2|π̂⟩⟨π̂| - I` applied to `psi`.
    pub fn ideal_reflect(&self, psi: &DVector<C64>) -> DVector<C64> {
        let pi = self.pi_hat.map(|x| C64::new(x, 0.0));
        let proj = pi.dotc(psi);
        pi * (proj * 2.0) - psi
    }

    /// `W^{-2^k}` for `2^k < m`.
    fn inverse_power_table(&self, m: usize) -> Vec<DMatrix<f64>> {
        let mut base = self.w.transpose();
        let mut table = Vec::new();
        let mut span = 1;
        while span < m {
            table.push(base.clone());
            base = &base * &base;
            span *= 2;
        }
        table
    }
}

fn apply_power(table: &[DMatrix<f64>], j: usize, v: &DVector<C64>) -> DVector<C64> {
    let mut out = v.clone();
    for (bit, mat) in table.iter().enumerate() {
        if j >> bit & 1 == 1 {
            let re = mat * out.map(|z| z.re);
            let im = mat * out.map(|z| z.im);
            out = DVector::from_fn(re.len(), |i, _| C64::new(re[i], im[i]));
        }
    }
    out
}

fn random_unit<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DVector<C64> {
    loop {
        let v = DVector::from_fn(dim, |_, _| {
            C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        let norm = v.norm();
        if norm > 1e-3 {
            return v / C64::new(norm, 0.0);
        }
    }
}

/// Parameters of an approximate reflection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReflectionSpec {
    pub epsilon_r: f64,
    pub mode: WalkMode,
    pub c_r: f64,
    /// Idealized mode only: add a random error vector of norm `epsilon_r`.
    pub inject_error: bool,
}

impl ReflectionSpec {
    pub fn new(epsilon_r: f64, mode: WalkMode) -> Self {
        ReflectionSpec {
            epsilon_r,
            mode,
            c_r: 1.0,
            inject_error: false,
        }
    }
}

/// Walk steps charged for one idealized reflection: `⌈c_r √τ ln(1/ε_r)⌉`.
pub fn idealized_reflection_cost(tau: f64, epsilon_r: f64, c_r: f64) -> u64 {
    (c_r * tau.sqrt() * (1.0 / epsilon_r).ln()).ceil().max(0.0) as u64
}

/// Phase-estimation reflection simulated on the full edge space and phase
/// register.
#[derive(Clone)]
pub struct ExactReflection {
    walk: WalkOperator,
    bits: u32,
    backward: Vec<DMatrix<f64>>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    /// Operator norm of `R̃ - R` on `ran(T) ⊗ |0⟩`.
    pub error: f64,
}

impl std::fmt::Debug for ExactReflection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExactReflection")
            .field("chain_size", &self.walk.chain_size())
            .field("bits", &self.bits)
            .field("error", &self.error)
            .finish()
    }
}

impl ExactReflection {
    /// Smallest register, starting from the formula's bit count, whose
    /// verified error on `ran(T)` is at most `epsilon_r`.
    pub fn build(walk: WalkOperator, epsilon_r: f64) -> Result<Self> {
        if !(epsilon_r > 0.0) {
            return Err(Error::param("epsilon_r must be positive"));
        }
        if walk.chain_size() > EXACT_SIM_CAP {
            return Err(Error::CapExceeded {
                size: walk.chain_size(),
                cap: EXACT_SIM_CAP,
            });
        }
        let gap = walk.phase_gap();
        let mut bits = ((1.0 / gap).log2().ceil().max(0.0) + (1.0 / epsilon_r).log2().ceil().max(0.0))
            as u32
            + 2;
        loop {
            let r = ExactReflection::with_bits(walk.clone(), bits);
            if r.error <= epsilon_r {
                return Ok(r);
            }
            bits += 1;
            if bits > MAX_PHASE_BITS {
                return Err(Error::Contract(format!(
                    "reflection error {} above {epsilon_r} with {MAX_PHASE_BITS} phase bits",
                    r.error
                )));
            }
        }
    }

    /// Reflection with a fixed register of `bits` qubits.
    pub fn with_bits(walk: WalkOperator, bits: u32) -> Self {
        let m = 1usize << bits;
        let mut planner = FftPlanner::new();
        let mut r = ExactReflection {
            backward: walk.inverse_power_table(m),
            fft: planner.plan_fft_forward(m),
            ifft: planner.plan_fft_inverse(m),
            walk,
            bits,
            error: 0.0,
        };
        r.error = r.operator_error();
        r
    }

    pub fn phase_bits(&self) -> u32 {
        self.bits
    }

    pub fn register_size(&self) -> usize {
        1 << self.bits
    }

    /// Walk steps per use: controlled `W^j` and its inverse for `j < M`.
    pub fn walk_steps_per_use(&self) -> u64 {
        2 * (self.register_size() as u64 - 1)
    }

    pub fn walk(&self) -> &WalkOperator {
        &self.walk
    }

    /// Output of the circuit on `|ψ⟩|0⟩`, as the edge-space vector attached
    /// to each register basis state `|j⟩` before the final Hadamards.
    pub fn apply_register(&self, psi: &DVector<C64>) -> Vec<DVector<C64>> {
        let m = self.register_size();
        let dim = self.walk.dim();
        let scale = C64::new(1.0 / (m as f64).sqrt(), 0.0);
        // Controlled powers on the uniform register.
        let mut branches: Vec<DVector<C64>> = Vec::with_capacity(m);
        let mut v = psi * scale;
        let w = &self.walk.w;
        for _ in 0..m {
            branches.push(v.clone());
            let re = w * v.map(|z| z.re);
            let im = w * v.map(|z| z.im);
            v = DVector::from_fn(dim, |i, _| C64::new(re[i], im[i]));
        }
        // Inverse Fourier transform, phase flip off zero, Fourier transform.
        let mut column = vec![C64::new(0.0, 0.0); m];
        for c in 0..dim {
            for (j, b) in branches.iter().enumerate() {
                column[j] = b[c];
            }
            self.fft.process(&mut column);
            for (k, z) in column.iter_mut().enumerate() {
                *z *= scale;
                if k != 0 {
                    *z = -*z;
                }
            }
            self.ifft.process(&mut column);
            for (j, b) in branches.iter_mut().enumerate() {
                b[c] = column[j] * scale;
            }
        }
        branches
            .iter()
            .enumerate()
            .map(|(j, b)| apply_power(&self.backward, j, b))
            .collect()
    }

    /// Error vector `R̃|ψ,0⟩ - (R|ψ⟩)|0⟩`, in the register basis used by
    /// [`Self::apply_register`].
    fn error_register(&self, psi: &DVector<C64>) -> Vec<DVector<C64>> {
        let m = self.register_size();
        let ideal = self.walk.ideal_reflect(psi) * C64::new(1.0 / (m as f64).sqrt(), 0.0);
        self.apply_register(psi)
            .into_iter()
            .map(|b| b - &ideal)
            .collect()
    }

    /// `‖R̃|ψ,0⟩ - (R|ψ⟩)|0⟩‖`.
    pub fn error_on(&self, psi: &DVector<C64>) -> f64 {
        self.error_register(psi)
            .iter()
            .map(|e| e.norm_squared())
            .sum::<f64>()
            .sqrt()
    }

    /// Register-zero output `(1/√M) Σ_j` of the branches, and the norm left
    /// in the other register states.
    pub fn apply(&self, psi: &DVector<C64>) -> (DVector<C64>, f64) {
        let m = self.register_size();
        let branches = self.apply_register(psi);
        let mut main = DVector::zeros(self.walk.dim());
        for b in &branches {
            main += b;
        }
        main /= C64::new((m as f64).sqrt(), 0.0);
        let total: f64 = branches.iter().map(|b| b.norm_squared()).sum();
        let garbage = (total - main.norm_squared()).max(0.0).sqrt();
        (main, garbage)
    }

    /// Error of the phase-estimation reflection with an `m`-state register,
    /// `2 max |(1/m) Σ_j e^{ijφ}|` over the nonzero walk phases reachable
    /// from `ran(T)`. Agrees with [`Self::error`] where both are computed.
    pub fn predicted_error(walk: &WalkOperator, m: usize) -> f64 {
        let eigs = walk.discriminant_eigenvalues();
        eigs[..eigs.len() - 1]
            .iter()
            .map(|&lambda| {
                let phi = lambda.clamp(-1.0, 1.0).acos();
                let den = m as f64 * (phi / 2.0).sin();
                if den.abs() < 1e-300 {
                    2.0
                } else {
                    2.0 * ((m as f64 * phi / 2.0).sin() / den).abs()
                }
            })
            .fold(0.0, f64::max)
    }

    /// Smallest register size (in qubits), starting from the formula's bit
    /// count, whose predicted error is at most `epsilon_r`.
    pub fn predicted_bits(walk: &WalkOperator, epsilon_r: f64) -> Result<u32> {
        let gap = walk.phase_gap();
        let mut bits = ((1.0 / gap).log2().ceil().max(0.0)
            + (1.0 / epsilon_r).log2().ceil().max(0.0)) as u32
            + 2;
        while ExactReflection::predicted_error(walk, 1usize << bits) > epsilon_r {
            bits += 1;
            if bits > 62 {
                return Err(Error::Contract(format!("no register reaches reflection error {epsilon_r}")));
            }
        }
        Ok(bits)
    }

    fn operator_error(&self) -> f64 {
        let n = self.walk.chain_size();
        let errors: Vec<Vec<DVector<C64>>> = (0..n)
            .map(|x| {
                let col = self.walk.t.column(x).map(|v| C64::new(v, 0.0));
                self.error_register(&col)
            })
            .collect();
        let gram = DMatrix::from_fn(n, n, |a, b| {
            errors[a]
                .iter()
                .zip(&errors[b])
                .map(|(u, v)| u.dotc(v))
                .sum::<C64>()
        });
        let top = SymmetricEigen::new(gram)
            .eigenvalues
            .iter()
            .copied()
            .fold(0.0, f64::max);
        top.max(0.0).sqrt()
    }
}

/// Exact reflection with an idealized cost.
#[derive(Debug, Clone)]
pub struct IdealReflection {
    pi_hat: DVector<f64>,
    steps: u64,
    inject: Option<f64>,
}

impl IdealReflection {
    pub fn walk_steps_per_use(&self) -> u64 {
        self.steps
    }

    pub fn apply<R: Rng + ?Sized>(&self, psi: &DVector<C64>, rng: &mut R) -> DVector<C64> {
        let pi = self.pi_hat.map(|x| C64::new(x, 0.0));
        let proj = pi.dotc(psi);
        let mut out = pi * (proj * 2.0) - psi;
        if let Some(eps) = self.inject {
            out += random_unit(out.len(), rng) * C64::new(eps, 0.0);
        }
        out
    }
}

/// Reflection about the walk's stationary vector, in either mode.
#[derive(Debug, Clone)]
pub enum ApproxReflection {
    Exact(Box<ExactReflection>),
    Ideal(IdealReflection),
}

impl ApproxReflection {
    pub fn walk_steps_per_use(&self) -> u64 {
        match self {
            ApproxReflection::Exact(r) => r.walk_steps_per_use(),
            ApproxReflection::Ideal(r) => r.walk_steps_per_use(),
        }
    }

    /// Applies the reflection once, charging its walk steps. Exact mode
    /// returns the register-zero branch only.
    pub fn apply<R: Rng + ?Sized>(
        &self,
        psi: &DVector<C64>,
        rng: &mut R,
        ledger: &mut QueryLedger,
    ) -> DVector<C64> {
        ledger.walk_steps += self.walk_steps_per_use();
        match self {
            ApproxReflection::Exact(r) => r.apply(psi).0,
            ApproxReflection::Ideal(r) => r.apply(psi, rng),
        }
    }
}

/// Approximate reflection about `|π̂⟩` for chain `c`.
pub fn approx_reflection(c: &MarkovChain, spec: &ReflectionSpec) -> Result<ApproxReflection> {
    if !(spec.epsilon_r > 0.0 && spec.epsilon_r < 1.0) {
        return Err(Error::param(format!("epsilon_r {} must lie in (0, 1)", spec.epsilon_r)));
    }
    match spec.mode {
        WalkMode::ExactSim => {
            let walk = szegedy_walk(c)?;
            Ok(ApproxReflection::Exact(Box::new(ExactReflection::build(walk, spec.epsilon_r)?)))
        }
        WalkMode::Idealized => {
            let tau = c.spectrum()?.tau;
            Ok(ApproxReflection::Ideal(IdealReflection {
                pi_hat: stationary_edge_vector(c),
                steps: idealized_reflection_cost(tau, spec.epsilon_r, spec.c_r),
                inject: spec.inject_error.then_some(spec.epsilon_r),
            }))
        }
    }
}

/// Walk steps charged for an idealized warm start to index `r`:
/// `⌈c_s r √τ ln²(r/ε_s) B ln B⌉`.
pub fn idealized_warm_start_cost(r: usize, tau: f64, epsilon_s: f64, b: f64, c_s: f64) -> u64 {
    if r == 0 {
        return 0;
    }
    let log = (r as f64 / epsilon_s).ln();
    (c_s * r as f64 * tau.sqrt() * log * log * b * b.ln()).ceil().max(0.0) as u64
}

/// A prepared approximation to `|π_i⟩`.
#[derive(Debug, Clone, Serialize)]
pub struct PreparedState {
    /// Amplitudes `√p(x)` of the first-register marginal `p`.
    pub sample: QuantumSample,
    /// `‖|π̃⟩ - |π_i⟩|0⟩‖` (zero in idealized mode).
    pub error: f64,
    /// Phase-register plus second-register qubits used (exact mode).
    pub ancilla_qubits: u32,
    /// Walk steps charged.
    pub walk_steps: u64,
}

fn check_overlaps(m: &GibbsModel, betas: &[f64], r: usize, b: f64) -> Result<()> {
    for j in 0..r {
        let overlap = m.overlap_squared(betas[j], betas[j + 1])?;
        if overlap < 1.0 / b - 1e-12 {
            return Err(Error::OverlapViolated {
                step: j,
                overlap,
                required: 1.0 / b,
            });
        }
    }
    Ok(())
}

/// Prepares `|π_i⟩` along the inverse temperatures `betas`, starting from the
/// uniform state at `betas[0] = 0`.
pub fn warm_start_prepare(
    m: &GibbsModel,
    betas: &[f64],
    b: f64,
    i: usize,
    epsilon_s: f64,
    mode: WalkMode,
    consts: &WalkConstants,
    ledger: &mut QueryLedger,
) -> Result<PreparedState> {
    if i >= betas.len() {
        return Err(Error::param(format!("target index {i} beyond schedule of length {}", betas.len())));
    }
    if betas[0] != 0.0 {
        return Err(Error::param("warm start begins at beta = 0"));
    }
    if !(epsilon_s > 0.0 && epsilon_s < 1.0) {
        return Err(Error::param(format!("epsilon_s {epsilon_s} must lie in (0, 1)")));
    }
    check_overlaps(m, betas, i, b)?;
    let target = quantum_sample_state(m, betas[i])?;
    if i == 0 {
        return Ok(PreparedState {
            sample: target,
            error: 0.0,
            ancilla_qubits: 0,
            walk_steps: 0,
        });
    }
    match mode {
        WalkMode::Idealized => {
            let mut tau: f64 = 1.0;
            for &beta in betas[..=i].iter().filter(|x| x.is_finite()) {
                tau = tau.max(model_chain(m, beta, false)?.spectrum()?.tau);
            }
            let steps = idealized_warm_start_cost(i, tau, epsilon_s, b, consts.c_s);
            ledger.walk_steps += steps;
            Ok(PreparedState {
                sample: target,
                error: 0.0,
                ancilla_qubits: 0,
                walk_steps: steps,
            })
        }
        WalkMode::ExactSim => {
            let walks = betas[1..=i]
                .iter()
                .map(|&beta| {
                    if !beta.is_finite() {
                        return Err(Error::Unsupported(
                            "exact warm start needs a finite target beta".into(),
                        ));
                    }
                    szegedy_walk(&model_chain(m, beta, false)?)
                })
                .collect::<Result<Vec<_>>>()?;
            if m.size() > EXACT_SIM_CAP {
                return Err(Error::CapExceeded {
                    size: m.size(),
                    cap: EXACT_SIM_CAP,
                });
            }
            let start = quantum_sample_state(m, betas[0])?;
            let mut bits = 1;
            loop {
                let run = projective_warm_start(&walks, &start, &target, 1 << bits);
                if run.error <= epsilon_s {
                    let n_bits = (m.size() as f64).log2().ceil() as u32;
                    let steps = run.expected_steps.ceil() as u64;
                    ledger.walk_steps += steps;
                    return Ok(PreparedState {
                        sample: QuantumSample::from_probabilities(&run.marginal),
                        error: run.error,
                        ancilla_qubits: bits + n_bits,
                        walk_steps: steps,
                    });
                }
                bits += 1;
                if bits > MAX_PHASE_BITS {
                    return Err(Error::Contract(format!(
                        "warm start error {} above {epsilon_s} with {MAX_PHASE_BITS} phase bits",
                        run.error
                    )));
                }
            }
        }
    }
}

struct WarmRun {
    error: f64,
    marginal: Vec<f64>,
    expected_steps: f64,
}

/// Householder map on the second register exchanging `|0⟩` and `|p_x⟩`,
/// applied block by block to an edge-space vector.
fn exchange_rows(t: &DMatrix<f64>, n: usize, v: &DVector<f64>) -> DVector<f64> {
    let mut out = v.clone();
    for x in 0..n {
        let mut h = DVector::zeros(n);
        for y in 0..n {
            h[y] = -t[(x * n + y, x)];
        }
        h[0] += 1.0;
        let hn = h.norm_squared();
        if hn < 1e-30 {
            continue;
        }
        let block = v.rows(x * n, n);
        let coef = 2.0 * h.dot(&block) / hn;
        for y in 0..n {
            out[x * n + y] = block[y] - coef * h[y];
        }
    }
    out
}

fn projective_warm_start(
    walks: &[WalkOperator],
    start: &QuantumSample,
    target: &QuantumSample,
    m: usize,
) -> WarmRun {
    let n = start.amplitudes.len();
    let mut state = DVector::zeros(n * n);
    for x in 0..n {
        state[x * n] = start.amplitudes[x];
    }
    let mut expected = 0.0;
    for walk in walks {
        let lifted = exchange_rows(&walk.t, n, &state);
        // Phase estimation post-selected on register zero: (1/M) Σ_j W^j.
        let mut acc = DVector::zeros(n * n);
        let mut v = lifted;
        for _ in 0..m {
            acc += &v;
            v = &walk.w * v;
        }
        acc /= m as f64;
        let success = acc.norm_squared();
        expected = (expected + (m - 1) as f64) / success;
        state = exchange_rows(&walk.t, n, &(acc / success.sqrt()));
    }
    let mut ideal = DVector::zeros(n * n);
    for x in 0..n {
        ideal[x * n] = target.amplitudes[x];
    }
    let sign = if ideal.dot(&state) < 0.0 { -1.0 } else { 1.0 };
    let error = (&state * sign - ideal).norm();
    let marginal = (0..n)
        .map(|x| state.rows(x * n, n).norm_squared())
        .collect();
    WarmRun {
        error,
        marginal,
        expected_steps: expected,
    }
}
