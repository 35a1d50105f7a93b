//! Reversible Markov chains on enumerated state spaces.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::Serialize;

use crate::distribution::QueryLedger;
use crate::error::{Error, Result};
use crate::gibbs::{GibbsModel, ModelKind};

/// Largest state space accepted by dense spectral routines.
pub const SPECTRAL_CAP: usize = 4096;

/// `|λ₁|` at or above this value is treated as a unit eigenvalue.
const ERGODIC_TOLERANCE: f64 = 1e-12;

/// Second eigenvalue and relaxation time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Spectrum {
    pub lambda1: f64,
    pub tau: f64,
}

/// Row-stochastic chain stored as sparse rows, with its stationary law.
#[derive(Debug, Clone)]
pub struct MarkovChain {
    rows: Vec<Vec<(usize, f64)>>,
    pi: Vec<f64>,
    lazy: bool,
    spectrum: OnceLock<Result<Spectrum>>,
}

impl MarkovChain {
    fn from_rows(rows: Vec<Vec<(usize, f64)>>, pi: Vec<f64>, lazy: bool) -> Self {
        let mut chain = MarkovChain {
            rows,
            pi,
            lazy: false,
            spectrum: OnceLock::new(),
        };
        if lazy {
            chain = chain.lazy();
        }
        chain
    }

    /// Chain from a dense stochastic matrix; `π` found by a linear solve.
    pub fn from_transition_matrix(p: &DMatrix<f64>) -> Result<Self> {
        let n = p.nrows();
        if n == 0 || p.ncols() != n {
            return Err(Error::param("transition matrix must be square and nonempty"));
        }
        for i in 0..n {
            let row = p.row(i);
            if row.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(Error::param(format!("row {i} has a negative or non-finite entry")));
            }
            if (row.sum() - 1.0).abs() > 1e-10 {
                return Err(Error::param(format!("row {i} sums to {}", row.sum())));
            }
        }
        let mut system = p.transpose() - DMatrix::identity(n, n);
        system.row_mut(n - 1).fill(1.0);
        let mut rhs = DVector::zeros(n);
        rhs[n - 1] = 1.0;
        let lu = system.lu();
        let unique = lu.determinant().abs() > 1e-12;
        let pi = lu
            .solve(&rhs)
            .filter(|_| unique)
            .ok_or(Error::NonErgodic(1.0))?;
        let rows = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| p[(i, j)] > 0.0)
                    .map(|j| (j, p[(i, j)]))
                    .collect()
            })
            .collect();
        Ok(MarkovChain::from_rows(rows, pi.iter().copied().collect(), false))
    }

    /// Two-state chain flipping `0 → 1` with probability `p` and `1 → 0` with `q`.
    pub fn two_state(p: f64, q: f64) -> Result<Self> {
        MarkovChain::from_transition_matrix(&DMatrix::from_row_slice(
            2,
            2,
            &[1.0 - p, p, q, 1.0 - q],
        ))
    }

    /// Random reversible chain: symmetric positive weights, row-normalized.
    pub fn random_reversible<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Self> {
        let mut w = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let x: f64 = rng.random_range(0.05..1.0);
                w[(i, j)] = x;
                w[(j, i)] = x;
            }
        }
        let sums: Vec<f64> = (0..n).map(|i| w.row(i).sum()).collect();
        let total: f64 = sums.iter().sum();
        let rows = (0..n)
            .map(|i| (0..n).map(|j| (j, w[(i, j)] / sums[i])).collect())
            .collect();
        Ok(MarkovChain::from_rows(rows, sums.iter().map(|s| s / total).collect(), false))
    }

    /// `(P + I) / 2`.
    pub fn lazy(&self) -> Self {
        let rows = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let mut out: Vec<(usize, f64)> = row.iter().map(|&(j, p)| (j, p / 2.0)).collect();
                match out.iter_mut().find(|e| e.0 == i) {
                    Some(e) => e.1 += 0.5,
                    None => out.push((i, 0.5)),
                }
                out
            })
            .collect();
        MarkovChain {
            rows,
            pi: self.pi.clone(),
            lazy: true,
            spectrum: OnceLock::new(),
        }
    }

    pub fn size(&self) -> usize {
        self.rows.len()
    }

    pub fn is_lazy(&self) -> bool {
        self.lazy
    }

    pub fn stationary(&self) -> &[f64] {
        &self.pi
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    pub fn pi_min(&self) -> f64 {
        self.pi.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn dense(&self) -> Result<DMatrix<f64>> {
        let n = self.size();
        if n > SPECTRAL_CAP {
            return Err(Error::CapExceeded {
                size: n,
                cap: SPECTRAL_CAP,
            });
        }
        let mut p = DMatrix::zeros(n, n);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, x) in row {
                p[(i, j)] += x;
            }
        }
        Ok(p)
    }

    /// Largest `|Σ_y P(x,y) - 1|`.
    pub fn row_sum_residual(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| (r.iter().map(|e| e.1).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Largest `|(πP)(y) - π(y)|`.
    pub fn stationarity_residual(&self) -> f64 {
        let next = self.step_distribution(&self.pi);
        next.iter()
            .zip(&self.pi)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Largest `|π(x)P(x,y) - π(y)P(y,x)|`.
    pub fn reversibility_residual(&self) -> Result<f64> {
        let p = self.dense()?;
        let n = self.size();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((self.pi[i] * p[(i, j)] - self.pi[j] * p[(j, i)]).abs());
            }
        }
        Ok(worst)
    }

    /// `μ ↦ μP`.
    pub fn step_distribution(&self, mu: &[f64]) -> Vec<f64> {
        let mut next = vec![0.0; self.size()];
        for (i, row) in self.rows.iter().enumerate() {
            if mu[i] == 0.0 {
                continue;
            }
            for &(j, p) in row {
                next[j] += mu[i] * p;
            }
        }
        next
    }

    /// Exact law after `steps` transitions from `start`.
    pub fn distribution_after(&self, start: usize, steps: usize) -> Vec<f64> {
        let mut mu = vec![0.0; self.size()];
        mu[start] = 1.0;
        for _ in 0..steps {
            mu = self.step_distribution(&mu);
        }
        mu
    }

    /// Total variation distance of a law to `π`.
    pub fn tv_to_stationary(&self, mu: &[f64]) -> f64 {
        0.5 * mu.iter().zip(&self.pi).map(|(a, b)| (a - b).abs()).sum::<f64>()
    }

    /// `λ₁` and `τ = 1/(1 - |λ₁|)` from the symmetrized matrix
    /// `D^{1/2} P D^{-1/2}`.
    pub fn spectrum(&self) -> Result<Spectrum> {
        self.spectrum.get_or_init(|| self.compute_spectrum()).clone()
    }

    fn compute_spectrum(&self) -> Result<Spectrum> {
        let s = self.discriminant()?;
        let n = s.nrows();
        if n == 1 {
            return Ok(Spectrum {
                lambda1: 0.0,
                tau: 1.0,
            });
        }
        let mut eig: Vec<f64> = SymmetricEigen::new(s).eigenvalues.iter().copied().collect();
        eig.sort_by(f64::total_cmp);
        eig.pop();
        let lambda1 = eig.iter().map(|x| x.abs()).fold(0.0, f64::max);
        if lambda1 >= 1.0 - ERGODIC_TOLERANCE {
            return Err(Error::NonErgodic(lambda1));
        }
        Ok(Spectrum {
            lambda1,
            tau: 1.0 / (1.0 - lambda1),
        })
    }

    /// Symmetric discriminant `D(x,y) = √(P(x,y) P(y,x))`, equal to
    /// `D^{1/2} P D^{-1/2}` for reversible chains.
    pub fn discriminant(&self) -> Result<DMatrix<f64>> {
        let p = self.dense()?;
        let n = self.size();
        Ok(DMatrix::from_fn(n, n, |i, j| (p[(i, j)] * p[(j, i)]).sqrt()))
    }

    /// Spectral upper bound on the `t`-step total variation distance.
    pub fn tv_bound(&self, steps: usize) -> Result<f64> {
        let s = self.spectrum()?;
        Ok(s.lambda1.powi(steps as i32) / (2.0 * self.pi_min().sqrt()))
    }

    /// One transition from state `x`.
    pub fn step<R: Rng + ?Sized>(&self, x: usize, rng: &mut R) -> usize {
        let row = &self.rows[x];
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for &(j, p) in row {
            acc += p;
            if u < acc {
                return j;
            }
        }
        row.last().map(|e| e.0).unwrap_or(x)
    }

    /// Runs `steps` transitions from `start`, charging each as a walk step.
    pub fn mix_sample<R: Rng + ?Sized>(
        &self,
        start: usize,
        steps: usize,
        rng: &mut R,
        ledger: &mut QueryLedger,
    ) -> usize {
        let mut x = start;
        for _ in 0..steps {
            x = self.step(x, rng);
        }
        ledger.walk_steps += steps as u64;
        x
    }

    /// Step count `⌈τ ln(1/(ε π_min))⌉` for accuracy `eps`.
    pub fn mixing_steps(&self, eps: f64) -> Result<usize> {
        let tau = self.spectrum()?.tau;
        Ok((tau * (1.0 / (eps * self.pi_min())).ln()).ceil().max(0.0) as usize)
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if !beta.is_finite() || beta < 0.0 {
        return Err(Error::Unsupported(format!(
            "chains are defined for finite beta >= 0, got {beta}"
        )));
    }
    Ok(())
}

fn merge_row(mut row: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    row.sort_by_key(|e| e.0);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(row.len());
    for (j, p) in row {
        match out.last_mut() {
            Some(last) if last.0 == j => last.1 += p,
            _ => out.push((j, p)),
        }
    }
    out
}

/// Heat-bath single-site dynamics for Ising and colouring models.
pub fn glauber_chain(m: &GibbsModel, beta: f64, lazy: bool) -> Result<MarkovChain> {
    check_beta(beta)?;
    let q = m.site_values().ok_or_else(|| {
        Error::Unsupported(format!("Glauber dynamics needs a spin model, got {}", m.kind()))
    })?;
    let g = m.graph();
    let n = g.n_vertices();
    if n == 0 {
        return Err(Error::param("graph has no vertices"));
    }
    let adj = g.adjacency();
    let ising = m.kind() == ModelKind::Ising;
    let powers: Vec<usize> = (0..n).map(|v| q.pow(v as u32)).collect();
    let mut rows = Vec::with_capacity(m.size());
    let mut digits = vec![0usize; n];
    for code in 0..m.size() {
        let mut rest = code;
        for d in digits.iter_mut() {
            *d = rest % q;
            rest /= q;
        }
        let mut row = Vec::with_capacity(n * q);
        for v in 0..n {
            // Local energy of each candidate value at v.
            let local: Vec<f64> = (0..q)
                .map(|c| {
                    adj[v]
                        .iter()
                        .filter(|&&u| (digits[u] == c) != ising)
                        .count() as f64
                })
                .collect();
            let lo = local.iter().copied().fold(f64::INFINITY, f64::min);
            let w: Vec<f64> = local.iter().map(|&h| (-beta * (h - lo)).exp()).collect();
            let total: f64 = w.iter().sum();
            let base = code - digits[v] * powers[v];
            for c in 0..q {
                row.push((base + c * powers[v], w[c] / (total * n as f64)));
            }
        }
        rows.push(merge_row(row));
    }
    Ok(MarkovChain::from_rows(rows, m.gibbs_distribution(beta)?, lazy))
}

/// Add/remove-one-edge Metropolis chain on matchings with holding
/// probability 1/2.
pub fn matching_chain(m: &GibbsModel, beta: f64, lazy: bool) -> Result<MarkovChain> {
    check_beta(beta)?;
    if m.kind() != ModelKind::Matching {
        return Err(Error::Unsupported(format!("matching chain needs a matching model, got {}", m.kind())));
    }
    let edges = m.graph().edges();
    let n_edges = edges.len();
    let add = (-beta).exp();
    let mut rows = Vec::with_capacity(m.size());
    for &code in m.states() {
        let here = m.index_of(code).expect("state enumerated");
        let mut row = vec![(here, 0.5)];
        let mut covered = 0u64;
        for (i, &(u, v)) in edges.iter().enumerate() {
            if code >> i & 1 == 1 {
                covered |= 1 << u | 1 << v;
            }
        }
        for (i, &(u, v)) in edges.iter().enumerate() {
            let pick = 0.5 / n_edges as f64;
            if code >> i & 1 == 1 {
                row.push((m.index_of(code & !(1 << i)).expect("submatching"), pick));
            } else if covered & (1 << u | 1 << v) == 0 {
                row.push((m.index_of(code | 1 << i).expect("augmented matching"), pick * add));
                row.push((here, pick * (1.0 - add)));
            } else {
                row.push((here, pick));
            }
        }
        if n_edges == 0 {
            row = vec![(here, 1.0)];
        }
        rows.push(merge_row(row));
    }
    Ok(MarkovChain::from_rows(rows, m.gibbs_distribution(beta)?, lazy))
}

/// Glauber chain for spin models, matching chain for matchings.
pub fn model_chain(m: &GibbsModel, beta: f64, lazy: bool) -> Result<MarkovChain> {
    match m.kind() {
        ModelKind::Matching => matching_chain(m, beta, lazy),
        _ => glauber_chain(m, beta, lazy),
    }
}
