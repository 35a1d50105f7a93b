//! Enumerated Gibbs models: Ising, proper colourings and matchings.

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};

/// Largest configuration space a model may enumerate.
pub const STATE_CAP: usize = 1 << 20;

/// Simple undirected graph on vertices `0..n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
}

impl Graph {
    pub fn new(n: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for &(u, v) in &edges {
            if u >= n || v >= n {
                return Err(Error::param(format!("edge ({u}, {v}) out of range for {n} vertices")));
            }
            if u == v {
                return Err(Error::param(format!("self-loop at vertex {u}")));
            }
            if !seen.insert((u.min(v), u.max(v))) {
                return Err(Error::param(format!("duplicate edge ({u}, {v})")));
            }
        }
        Ok(Graph { n, edges })
    }

    pub fn edgeless(n: usize) -> Self {
        Graph { n, edges: vec![] }
    }

    pub fn complete(n: usize) -> Self {
        let edges = (0..n)
            .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
            .collect();
        Graph { n, edges }
    }

    pub fn path(n: usize) -> Self {
        Graph {
            n,
            edges: (1..n).map(|v| (v - 1, v)).collect(),
        }
    }

    pub fn cycle(n: usize) -> Self {
        let mut g = Graph::path(n);
        if n > 2 {
            g.edges.push((n - 1, 0));
        }
        g
    }

    /// Parses `"n m"` followed by `m` lines `"u v"`, 0-indexed.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| Error::param("empty graph file"))?;
        let nums = parse_pair(header)?;
        let (n, m) = (nums.0, nums.1);
        let mut edges = Vec::with_capacity(m);
        for line in lines {
            edges.push(parse_pair(line)?);
        }
        if edges.len() != m {
            return Err(Error::param(format!(
                "graph header declares {m} edges, found {}",
                edges.len()
            )));
        }
        Graph::new(n, edges)
    }

    pub fn n_vertices(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Neighbour lists.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        adj
    }
}

fn parse_pair(line: &str) -> Result<(usize, usize)> {
    let mut it = line.split_whitespace().map(str::parse::<usize>);
    match (it.next(), it.next(), it.next()) {
        (Some(Ok(a)), Some(Ok(b)), None) => Ok((a, b)),
        _ => Err(Error::param(format!("malformed graph line {line:?}"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum ModelKind {
    /// Spins `±1`, energy counted as the number of disagreeing edges.
    Ising,
    /// `k` colours, energy the number of monochromatic edges.
    Colouring { k: usize },
    /// Matchings, energy the number of matched edges.
    Matching,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKind::Ising => write!(f, "ising"),
            ModelKind::Colouring { k } => write!(f, "colouring(k={k})"),
            ModelKind::Matching => write!(f, "matching"),
        }
    }
}

/// Gibbs model over an explicitly enumerated configuration space.
///
/// Spin and colour configurations are encoded as `Σ c_v q^v`; matchings as
/// a bitmask over the edge list.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsModel {
    kind: ModelKind,
    graph: Graph,
    states: Vec<u64>,
    energies: Vec<u32>,
    /// `histogram[h]` counts the states of energy `h`.
    histogram: Vec<u64>,
}

fn checked_power(base: usize, exp: usize) -> Option<usize> {
    let mut acc: usize = 1;
    for _ in 0..exp {
        acc = acc.checked_mul(base)?;
        if acc > STATE_CAP {
            return None;
        }
    }
    Some(acc)
}

fn cap_error(base: usize, exp: usize) -> Error {
    let size = (base as f64).powi(exp as i32).min(usize::MAX as f64) as usize;
    Error::CapExceeded {
        size,
        cap: STATE_CAP,
    }
}

impl GibbsModel {
    fn from_parts(kind: ModelKind, graph: Graph, states: Vec<u64>, energies: Vec<u32>) -> Self {
        let max = energies.iter().copied().max().unwrap_or(0) as usize;
        let mut histogram = vec![0u64; max + 1];
        for &e in &energies {
            histogram[e as usize] += 1;
        }
        GibbsModel {
            kind,
            graph,
            states,
            energies,
            histogram,
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    /// Encoded configurations, indexed consistently with [`Self::energies`].
    pub fn states(&self) -> &[u64] {
        &self.states
    }

    pub fn energies(&self) -> &[u32] {
        &self.energies
    }

    pub fn size(&self) -> usize {
        self.states.len()
    }

    pub fn max_energy(&self) -> u32 {
        (self.histogram.len() - 1) as u32
    }

    pub fn energy_histogram(&self) -> &[u64] {
        &self.histogram
    }

    /// Number of values each site takes (spin models only).
    pub fn site_values(&self) -> Option<usize> {
        match self.kind {
            ModelKind::Ising => Some(2),
            ModelKind::Colouring { k } => Some(k),
            ModelKind::Matching => None,
        }
    }

    /// Index of a state code, if present.
    pub fn index_of(&self, code: u64) -> Option<usize> {
        match self.kind {
            ModelKind::Matching => self.states.binary_search(&code).ok(),
            _ => ((code as usize) < self.states.len()).then_some(code as usize),
        }
    }

    /// `Z(β) = Σ_h N_h e^{-β h}` with `β = ±∞` handled as limits.
    pub fn partition(&self, beta: f64) -> f64 {
        if beta == f64::INFINITY {
            return self.histogram[0] as f64;
        }
        if beta == f64::NEG_INFINITY {
            return if self.histogram.len() > 1 {
                f64::INFINITY
            } else {
                self.histogram[0] as f64
            };
        }
        self.histogram
            .iter()
            .enumerate()
            .filter(|(_, &n)| n > 0)
            .map(|(h, &n)| n as f64 * (-beta * h as f64).exp())
            .sum()
    }

    /// Unnormalized weights `e^{-β (H(x) - H_min)}`, with the ground-state
    /// restriction at `β = ∞`.
    fn shifted_weights(&self, beta: f64) -> Vec<f64> {
        let h_min = self.histogram.iter().position(|&n| n > 0).unwrap_or(0) as f64;
        self.energies
            .iter()
            .map(|&h| {
                if beta == f64::INFINITY {
                    if h == 0 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    (-beta * (h as f64 - h_min)).exp()
                }
            })
            .collect()
    }

    /// Gibbs probabilities `e^{-β H(x)} / Z(β)` in state order.
    pub fn gibbs_distribution(&self, beta: f64) -> Result<Vec<f64>> {
        if beta.is_nan() {
            return Err(Error::param("beta is NaN"));
        }
        if beta == f64::INFINITY && self.histogram[0] == 0 {
            return Err(Error::param("no zero-energy state, Z(inf) = 0"));
        }
        let w = self.shifted_weights(beta);
        let total: f64 = w.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::param(format!("Gibbs weights at beta {beta} do not normalize")));
        }
        Ok(w.into_iter().map(|x| x / total).collect())
    }

    /// `χ²(π_j, π_i)` by definition, `Σ π_i (π_j/π_i - 1)²`.
    pub fn chi_squared_direct(&self, beta_i: f64, beta_j: f64) -> Result<f64> {
        let pi = self.gibbs_distribution(beta_i)?;
        let pj = self.gibbs_distribution(beta_j)?;
        let mut acc = 0.0;
        for (a, b) in pi.iter().zip(&pj) {
            if *a == 0.0 {
                if *b > 0.0 {
                    return Ok(f64::INFINITY);
                }
                continue;
            }
            let r = b / a - 1.0;
            acc += a * r * r;
        }
        Ok(acc)
    }

    /// `χ²(π_j, π_i)` from partition functions,
    /// `Z(β_i) Z(2β_j - β_i) / Z(β_j)² - 1`.
    pub fn chi_squared_ratio(&self, beta_i: f64, beta_j: f64) -> f64 {
        self.second_moment_ratio(beta_i, beta_j) - 1.0
    }

    /// `E[Y²]/E[Y]²` for `Y = e^{-(β_j - β_i) H}` under `π_i`.
    pub fn second_moment_ratio(&self, beta_i: f64, beta_j: f64) -> f64 {
        let doubled = double_minus(beta_j, beta_i);
        let zj = self.partition(beta_j);
        self.partition(beta_i) * self.partition(doubled) / (zj * zj)
    }

    /// `|⟨π_i|π_j⟩|² = (Σ √(π_i π_j))²`.
    pub fn overlap_squared(&self, beta_i: f64, beta_j: f64) -> Result<f64> {
        let pi = self.gibbs_distribution(beta_i)?;
        let pj = self.gibbs_distribution(beta_j)?;
        let s: f64 = pi.iter().zip(&pj).map(|(a, b)| (a * b).sqrt()).sum();
        Ok(s * s)
    }

    /// Smallest Gibbs probability at `beta`.
    pub fn pi_min(&self, beta: f64) -> Result<f64> {
        Ok(self
            .gibbs_distribution(beta)?
            .into_iter()
            .filter(|&p| p > 0.0)
            .fold(f64::INFINITY, f64::min))
    }

    /// Ising partition function in the `H = -Σ z_u z_v` convention, by
    /// direct enumeration of spins.
    pub fn ising_unshifted_partition(&self, beta: f64) -> Result<f64> {
        if self.kind != ModelKind::Ising {
            return Err(Error::Unsupported(format!("{} is not an Ising model", self.kind)));
        }
        let n = self.graph.n;
        let mut z = 0.0;
        for code in 0..(1u64 << n) {
            let spin = |v: usize| if code >> v & 1 == 0 { 1.0 } else { -1.0 };
            let h: f64 = self.graph.edges.iter().map(|&(u, v)| -spin(u) * spin(v)).sum();
            z += (-beta * h).exp();
        }
        Ok(z)
    }
}

/// `2a - b` with infinities resolved as limits of the finite case.
pub fn double_minus(a: f64, b: f64) -> f64 {
    if a == f64::INFINITY {
        f64::INFINITY
    } else if b == f64::INFINITY {
        f64::NEG_INFINITY
    } else {
        2.0 * a - b
    }
}

/// Ising model with energies shifted to the disagreement count.
pub fn ising_model(g: &Graph) -> Result<GibbsModel> {
    colouring_like(g, 2, ModelKind::Ising)
}

/// Proper-colouring model with `k` colours.
pub fn colouring_model(g: &Graph, k: usize) -> Result<GibbsModel> {
    if k == 0 {
        return Err(Error::param("colouring needs k >= 1"));
    }
    colouring_like(g, k, ModelKind::Colouring { k })
}

fn colouring_like(g: &Graph, q: usize, kind: ModelKind) -> Result<GibbsModel> {
    let size = checked_power(q, g.n).ok_or_else(|| cap_error(q, g.n))?;
    let mut states = Vec::with_capacity(size);
    let mut energies = Vec::with_capacity(size);
    let mut digits = vec![0usize; g.n];
    for code in 0..size {
        let mut rest = code;
        for d in digits.iter_mut() {
            *d = rest % q;
            rest /= q;
        }
        let energy = g
            .edges
            .iter()
            .filter(|&&(u, v)| match kind {
                ModelKind::Ising => digits[u] != digits[v],
                _ => digits[u] == digits[v],
            })
            .count();
        states.push(code as u64);
        energies.push(energy as u32);
    }
    Ok(GibbsModel::from_parts(kind, g.clone(), states, energies))
}

/// Monomer-dimer model: states are matchings, energy the matching size.
pub fn matching_model(g: &Graph) -> Result<GibbsModel> {
    if g.edges.len() > 64 || g.n > 64 {
        return Err(Error::Unsupported("matching enumeration supports at most 64 edges and vertices".into()));
    }
    let mut states = Vec::new();
    enumerate_matchings(g, 0, 0, 0, &mut states)?;
    states.sort_unstable();
    let energies = states.iter().map(|s| s.count_ones()).collect();
    Ok(GibbsModel::from_parts(ModelKind::Matching, g.clone(), states, energies))
}

fn enumerate_matchings(
    g: &Graph,
    edge: usize,
    used_vertices: u64,
    chosen: u64,
    out: &mut Vec<u64>,
) -> Result<()> {
    if edge == g.edges.len() {
        if out.len() >= STATE_CAP {
            return Err(Error::CapExceeded {
                size: out.len() + 1,
                cap: STATE_CAP,
            });
        }
        out.push(chosen);
        return Ok(());
    }
    enumerate_matchings(g, edge + 1, used_vertices, chosen, out)?;
    let (u, v) = g.edges[edge];
    let mask = 1u64 << u | 1u64 << v;
    if used_vertices & mask == 0 {
        enumerate_matchings(g, edge + 1, used_vertices | mask, chosen | 1u64 << edge, out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const LN2: f64 = std::f64::consts::LN_2;

    fn k2() -> GibbsModel {
        ising_model(&Graph::complete(2)).unwrap()
    }

    fn sorted(mut v: Vec<f64>) -> Vec<f64> {
        v.sort_by(f64::total_cmp);
        v
    }

    #[test]
    fn graph_validation_and_parsing() {
        assert!(Graph::new(2, vec![(0, 0)]).is_err());
        assert!(Graph::new(2, vec![(0, 1), (1, 0)]).is_err());
        assert!(Graph::new(2, vec![(0, 2)]).is_err());
        let g = Graph::parse("4 4\n0 1\n1 2\n2 3\n3 0\n").unwrap();
        assert_eq!(g, Graph::cycle(4));
        assert!(Graph::parse("3 2\n0 1\n").is_err());
        assert!(Graph::parse("3 1\n0 x\n").is_err());
        assert!(Graph::parse("").is_err());
    }

    #[test]
    fn ising_examples() {
        let m = k2();
        let mut e: Vec<u32> = m.energies().to_vec();
        e.sort();
        assert_eq!(e, vec![0, 0, 1, 1]);
        assert_eq!(m.partition(0.0), 4.0);
        assert!((m.partition(1.0) - (2.0 + 2.0 * (-1f64).exp())).abs() < 1e-15);
        assert!((m.partition(1.0) - 2.735759).abs() < 1e-6);
        assert_eq!(m.partition(f64::INFINITY), 2.0);

        let single = ising_model(&Graph::edgeless(1)).unwrap();
        for b in [0.0, 1.0, 7.5, f64::INFINITY] {
            assert_eq!(single.partition(b), 2.0);
        }
        let c4 = ising_model(&Graph::cycle(4)).unwrap();
        assert_eq!(c4.size(), 16);
        assert_eq!(c4.partition(f64::INFINITY), 2.0);
    }

    #[test]
    fn colouring_examples() {
        // Brute-force count of proper colourings by nested loops.
        let mut proper = 0;
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    if a != b && b != c && a != c {
                        proper += 1;
                    }
                }
            }
        }
        let tri = colouring_model(&Graph::complete(3), 3).unwrap();
        assert_eq!(tri.partition(f64::INFINITY), proper as f64);
        assert_eq!(proper, 6);
        let free = colouring_model(&Graph::edgeless(3), 4).unwrap();
        assert_eq!(free.partition(2.3), 64.0);
        assert_eq!(colouring_model(&Graph::complete(2), 2).unwrap().partition(f64::INFINITY), 2.0);
        assert!(colouring_model(&Graph::edgeless(30), 3).is_err());
    }

    #[test]
    fn matching_examples() {
        let p3 = matching_model(&Graph::path(3)).unwrap();
        assert_eq!(p3.partition(0.0), 3.0);
        let c4 = matching_model(&Graph::cycle(4)).unwrap();
        assert_eq!(c4.partition(0.0), 7.0);
        assert_eq!(c4.partition(f64::INFINITY), 1.0);
        let e = matching_model(&Graph::path(2)).unwrap();
        assert_eq!((e.partition(0.0), e.partition(f64::INFINITY)), (2.0, 1.0));
        // C4 has 4 single edges and 2 perfect matchings
        assert_eq!(c4.energy_histogram(), &[1, 4, 2]);
    }

    #[test]
    fn gibbs_examples() {
        let m = k2();
        let p = m.gibbs_distribution(0.0).unwrap();
        assert!(p.iter().all(|&x| (x - 0.25).abs() < 1e-15));
        let p = sorted(m.gibbs_distribution(LN2).unwrap());
        let expect = [1.0 / 6.0, 1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0];
        for (a, b) in p.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        let p = sorted(m.gibbs_distribution(f64::INFINITY).unwrap());
        assert_eq!(p, vec![0.0, 0.0, 0.5, 0.5]);
        let no_ground = colouring_model(&Graph::complete(3), 2).unwrap();
        assert!(no_ground.gibbs_distribution(f64::INFINITY).is_err());
    }

    #[test]
    fn chi_squared_examples() {
        let m = k2();
        assert_eq!(m.chi_squared_ratio(0.7, 0.7), 0.0);
        assert!(m.chi_squared_direct(0.7, 0.7).unwrap().abs() < 1e-15);
        assert!((m.chi_squared_ratio(0.0, LN2) - 1.0 / 9.0).abs() < 1e-14);
        assert!((m.chi_squared_direct(0.0, LN2).unwrap() - 1.0 / 9.0).abs() < 1e-14);
        let tri = colouring_model(&Graph::complete(3), 3).unwrap();
        let (a, b) = (0.3, 1.9);
        assert!((tri.chi_squared_direct(a, b).unwrap() - tri.chi_squared_ratio(a, b)).abs() < 1e-10);
        // terminal pair to infinity
        assert!((m.chi_squared_direct(0.0, f64::INFINITY).unwrap() - 1.0).abs() < 1e-14);
        assert!((m.chi_squared_ratio(0.0, f64::INFINITY) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn overlap_value() {
        let m = k2();
        // (Σ √(π₀ π₁))² = (2·√(1/12) + 2·√(1/24))²
        let s = 2.0 * (1.0f64 / 12.0).sqrt() + 2.0 * (1.0f64 / 24.0).sqrt();
        let o = m.overlap_squared(0.0, LN2).unwrap();
        assert!((o - s * s).abs() < 1e-14);
        assert!((o - 0.97140).abs() < 1e-5);
        assert!(o >= 0.9);
    }

    #[test]
    fn ising_shift_consistency() {
        for g in [Graph::complete(2), Graph::cycle(4), Graph::complete(4)] {
            let m = ising_model(&g).unwrap();
            let e = g.edges().len() as f64;
            for beta in [0.0, 0.1, 0.8, 2.5] {
                let shifted = m.partition(beta);
                let direct = (-beta * e / 2.0).exp() * m.ising_unshifted_partition(beta / 2.0).unwrap();
                assert!((shifted - direct).abs() <= 1e-12 * shifted, "beta={beta}");
            }
        }
    }

    #[test]
    fn partition_monotone() {
        let m = ising_model(&Graph::cycle(4)).unwrap();
        let mut prev = f64::INFINITY;
        for i in 0..50 {
            let z = m.partition(i as f64 * 0.2);
            assert!(z < prev);
            prev = z;
        }
        let flat = ising_model(&Graph::edgeless(3)).unwrap();
        assert_eq!(flat.partition(0.0), flat.partition(5.0));
    }

    fn arb_model() -> impl Strategy<Value = GibbsModel> {
        prop_oneof![
            Just(ising_model(&Graph::complete(2)).unwrap()),
            Just(ising_model(&Graph::cycle(4)).unwrap()),
            Just(colouring_model(&Graph::complete(3), 3).unwrap()),
            Just(matching_model(&Graph::cycle(4)).unwrap()),
            Just(matching_model(&Graph::complete(4)).unwrap()),
        ]
    }

    proptest! {
        #[test]
        fn chi_squared_identity(m in arb_model(), b0 in 0.0f64..3.0, gap in 0.0f64..3.0) {
            let direct = m.chi_squared_direct(b0, b0 + gap).unwrap();
            let ratio = m.chi_squared_ratio(b0, b0 + gap);
            prop_assert!((direct - ratio).abs() <= 1e-10 * (1.0 + ratio));
            let overlap = m.overlap_squared(b0, b0 + gap).unwrap();
            prop_assert!(overlap >= 1.0 / (1.0 + ratio) - 1e-12);
        }

        #[test]
        fn gibbs_normalized(m in arb_model(), beta in 0.0f64..20.0) {
            let p = m.gibbs_distribution(beta).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }
}
