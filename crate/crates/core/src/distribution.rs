//! Finite real-valued output distributions and the query ledger.
//!
//! A randomized or quantum subroutine is represented only through the law of
//! its measured output value. Every estimator in this crate consumes a
//! [`ValueDistribution`] and charges the resources it would use to a
//! [`QueryLedger`].

use std::ops::AddAssign;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Tolerated drift of the total probability before construction fails.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// A finite-support distribution over real values.
///
/// Values are distinct and sorted ascending; probabilities are strictly
/// positive and sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueDistribution {
    support: Vec<(f64, f64)>,
    cumulative: Vec<f64>,
}

/// First and second moments of a [`ValueDistribution`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
    pub l2norm: f64,
}

/// Truncation windows. Values outside the window are replaced by 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Window {
    /// Keep `v` when `v < x`.
    Below(f64),
    /// Keep `v` when `lo <= v < hi`.
    Range(f64, f64),
    /// Keep `v` when `v >= y`.
    AtLeast(f64),
}

impl Window {
    fn keeps(&self, v: f64) -> bool {
        match *self {
            Window::Below(x) => v < x,
            Window::Range(lo, hi) => lo <= v && v < hi,
            Window::AtLeast(y) => v >= y,
        }
    }
}

/// Builds a distribution from `(value, probability)` pairs.
///
/// Duplicate values (exact equality) are merged, zero-probability entries are
/// dropped, and a total within [`NORMALIZATION_TOLERANCE`] of one is
/// renormalized.
pub fn make_distribution<I>(pairs: I) -> Result<ValueDistribution>
where
    I: IntoIterator<Item = (f64, f64)>,
{
    let mut entries: Vec<(f64, f64)> = Vec::new();
    for (v, p) in pairs {
        if !v.is_finite() {
            return Err(Error::InvalidDistribution(format!("non-finite value {v}")));
        }
        if !p.is_finite() || p < 0.0 {
            return Err(Error::InvalidDistribution(format!(
                "probability {p} for value {v} is negative or non-finite"
            )));
        }
        // Collapses -0.0 onto 0.0 so that both merge.
        entries.push((v + 0.0, p));
    }
    if entries.is_empty() {
        return Err(Error::InvalidDistribution("empty support".into()));
    }
    let total: f64 = entries.iter().map(|e| e.1).sum();
    if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(Error::InvalidDistribution(format!(
            "probabilities sum to {total}, not 1"
        )));
    }
    entries.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut support: Vec<(f64, f64)> = Vec::with_capacity(entries.len());
    for (v, p) in entries {
        if p == 0.0 {
            continue;
        }
        match support.last_mut() {
            Some(last) if last.0 == v => last.1 += p,
            _ => support.push((v, p)),
        }
    }
    let merged_total: f64 = support.iter().map(|e| e.1).sum();
    for entry in support.iter_mut() {
        entry.1 /= merged_total;
    }
    Ok(ValueDistribution::from_sorted(support))
}

impl ValueDistribution {
    fn from_sorted(support: Vec<(f64, f64)>) -> Self {
        let mut acc = 0.0;
        let cumulative = support
            .iter()
            .map(|&(_, p)| {
                acc += p;
                acc
            })
            .collect();
        ValueDistribution {
            support,
            cumulative,
        }
    }

    /// Point mass at `value`.
    pub fn point(value: f64) -> Result<Self> {
        make_distribution([(value, 1.0)])
    }

    /// Two-point distribution on {0, 1} with `P(1) = p`.
    pub fn bernoulli(p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::param(format!("bernoulli parameter {p} outside [0,1]")));
        }
        make_distribution([(0.0, 1.0 - p), (1.0, p)])
    }

    pub fn support(&self) -> &[(f64, f64)] {
        &self.support
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn min_value(&self) -> f64 {
        self.support[0].0
    }

    pub fn max_value(&self) -> f64 {
        self.support[self.support.len() - 1].0
    }

    /// Probability assigned to exactly `value`.
    pub fn prob_of(&self, value: f64) -> f64 {
        self.support
            .binary_search_by(|e| e.0.total_cmp(&(value + 0.0)))
            .map(|i| self.support[i].1)
            .unwrap_or(0.0)
    }

    /// Probability of the event `pred(value)`.
    pub fn mass_where(&self, pred: impl Fn(f64) -> bool) -> f64 {
        self.support
            .iter()
            .filter(|e| pred(e.0))
            .map(|e| e.1)
            .sum()
    }

    pub fn mean(&self) -> f64 {
        self.support.iter().map(|&(v, p)| v * p).sum()
    }

    pub fn moments(&self) -> Moments {
        moments(self)
    }

    /// Replaces values outside `window` by 0.
    pub fn truncate(&self, window: Window) -> Result<Self> {
        truncate(self, window)
    }

    /// Applies `f` to every value, merging equal images.
    pub fn transform(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        transform(self, f)
    }

    /// Multiplies every value by `factor`.
    pub fn scale(&self, factor: f64) -> Result<Self> {
        transform(self, |v| v * factor)
    }

    /// Inverse-CDF draw without touching a ledger.
    pub(crate) fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random::<f64>() * self.cumulative[self.cumulative.len() - 1];
        let idx = self.cumulative.partition_point(|&c| c <= u);
        self.support[idx.min(self.support.len() - 1)].0
    }

    /// Total variation distance to `other` over the union of both supports.
    pub fn tv_distance(&self, other: &ValueDistribution) -> f64 {
        let (a, b) = (&self.support, &other.support);
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        while i < a.len() || j < b.len() {
            let take_a = j >= b.len() || (i < a.len() && a[i].0 < b[j].0);
            let take_b = i >= a.len() || (j < b.len() && b[j].0 < a[i].0);
            if take_a {
                acc += a[i].1;
                i += 1;
            } else if take_b {
                acc += b[j].1;
                j += 1;
            } else {
                acc += (a[i].1 - b[j].1).abs();
                i += 1;
                j += 1;
            }
        }
        acc / 2.0
    }
}

/// Moves the mass of every value outside `window` onto 0.
pub fn truncate(d: &ValueDistribution, window: Window) -> Result<ValueDistribution> {
    match window {
        Window::Range(lo, hi) if !(lo < hi) => {
            return Err(Error::param(format!("empty truncation window [{lo}, {hi})")));
        }
        Window::Below(x) | Window::AtLeast(x) if x.is_nan() => {
            return Err(Error::param("NaN truncation threshold"));
        }
        _ => {}
    }
    make_distribution(
        d.support
            .iter()
            .map(|&(v, p)| if window.keeps(v) { (v, p) } else { (0.0, p) }),
    )
}

/// Pushes `d` forward through `f`.
pub fn transform(d: &ValueDistribution, f: impl Fn(f64) -> f64) -> Result<ValueDistribution> {
    let mut pairs = Vec::with_capacity(d.len());
    for &(v, p) in &d.support {
        let image = f(v);
        if !image.is_finite() {
            return Err(Error::InvalidDistribution(format!(
                "transform maps {v} to non-finite {image}"
            )));
        }
        pairs.push((image, p));
    }
    make_distribution(pairs)
}

/// Exact mean, variance and l2 norm `sqrt(E[v^2])`.
pub fn moments(d: &ValueDistribution) -> Moments {
    let mean = d.mean();
    let variance = d
        .support
        .iter()
        .map(|&(v, p)| p * (v - mean) * (v - mean))
        .sum();
    let second: f64 = d.support.iter().map(|&(v, p)| p * v * v).sum();
    Moments {
        mean,
        variance,
        l2norm: second.sqrt(),
    }
}

/// One classical run of the subroutine: a single draw, charged as one sample.
pub fn classical_sample<R: Rng + ?Sized>(
    d: &ValueDistribution,
    rng: &mut R,
    ledger: &mut QueryLedger,
) -> f64 {
    ledger.classical_samples += 1;
    d.draw(rng)
}

impl Serialize for ValueDistribution {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr<'a> {
            support: &'a [(f64, f64)],
        }
        Repr {
            support: &self.support,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ValueDistribution {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Repr {
            support: Vec<(f64, f64)>,
        }
        let repr = Repr::deserialize(deserializer)?;
        make_distribution(repr.support).map_err(serde::de::Error::custom)
    }
}

/// Counters for every metered resource of an estimation run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryLedger {
    /// Uses of the subroutine `A` (state preparation).
    pub a_uses: u64,
    /// Uses of its inverse.
    pub a_inv_uses: u64,
    /// Copies of the prepared state consumed.
    pub state_copies: u64,
    /// Uses of the reflection `2|psi><psi| - I`.
    pub reflection_uses: u64,
    /// Quantum walk steps, or classical chain steps for baselines.
    pub walk_steps: u64,
    /// Independent classical draws.
    pub classical_samples: u64,
}

impl QueryLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Counter-wise difference `self - earlier`.
    pub fn since(&self, earlier: &QueryLedger) -> QueryLedger {
        QueryLedger {
            a_uses: self.a_uses - earlier.a_uses,
            a_inv_uses: self.a_inv_uses - earlier.a_inv_uses,
            state_copies: self.state_copies - earlier.state_copies,
            reflection_uses: self.reflection_uses - earlier.reflection_uses,
            walk_steps: self.walk_steps - earlier.walk_steps,
            classical_samples: self.classical_samples - earlier.classical_samples,
        }
    }

    /// Reflections plus walk steps, the quantum cost used for scaling fits.
    pub fn quantum_total(&self) -> u64 {
        self.reflection_uses + self.walk_steps
    }
}

impl AddAssign for QueryLedger {
    fn add_assign(&mut self, rhs: QueryLedger) {
        self.a_uses += rhs.a_uses;
        self.a_inv_uses += rhs.a_inv_uses;
        self.state_copies += rhs.state_copies;
        self.reflection_uses += rhs.reflection_uses;
        self.walk_steps += rhs.walk_steps;
        self.classical_samples += rhs.classical_samples;
    }
}

impl std::iter::Sum for QueryLedger {
    fn sum<I: Iterator<Item = QueryLedger>>(iter: I) -> Self {
        let mut total = QueryLedger::default();
        for l in iter {
            total += l;
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dist(pairs: &[(f64, f64)]) -> ValueDistribution {
        make_distribution(pairs.iter().copied()).unwrap()
    }

    #[test]
    fn point_mass_and_merging() {
        let d = dist(&[(0.5, 1.0)]);
        assert_eq!(d.support(), &[(0.5, 1.0)]);
        let d = dist(&[(1.0, 0.5), (1.0, 0.5)]);
        assert_eq!(d.support(), &[(1.0, 1.0)]);
    }

    #[test]
    fn bernoulli_half_moments() {
        let m = dist(&[(0.0, 0.5), (1.0, 0.5)]).moments();
        assert_eq!(m.mean, 0.5);
        assert_eq!(m.variance, 0.25);
        assert!((m.l2norm - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn moments_of_three_point() {
        let m = dist(&[(4.0, 0.25), (5.0, 0.5), (6.0, 0.25)]).moments();
        assert!((m.mean - 5.0).abs() < 1e-15);
        assert!((m.variance - 0.5).abs() < 1e-15);
        assert!((m.l2norm - 25.5f64.sqrt()).abs() < 1e-14);
        let c = dist(&[(-3.0, 1.0)]).moments();
        assert_eq!((c.mean, c.variance, c.l2norm), (-3.0, 0.0, 3.0));
    }

    #[test]
    fn construction_errors() {
        assert!(make_distribution(Vec::<(f64, f64)>::new()).is_err());
        assert!(make_distribution([(0.0, -0.1), (1.0, 1.1)]).is_err());
        assert!(make_distribution([(f64::NAN, 1.0)]).is_err());
        assert!(make_distribution([(f64::INFINITY, 1.0)]).is_err());
        assert!(make_distribution([(0.0, 0.5), (1.0, 0.49)]).is_err());
        // drift below the tolerance is renormalized
        let d = make_distribution([(0.0, 0.5), (1.0, 0.5 + 5e-10)]).unwrap();
        let total: f64 = d.support().iter().map(|e| e.1).sum();
        assert!((total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn truncation_examples() {
        let d = dist(&[(0.5, 1.0)]);
        assert_eq!(d.truncate(Window::Range(1.0, 2.0)).unwrap().support(), &[(0.0, 1.0)]);

        let b = dist(&[(0.0, 0.5), (1.0, 0.5)]);
        let t = b.truncate(Window::Range(0.0, 1.0)).unwrap();
        assert_eq!(t.support(), &[(0.0, 1.0)]);
        assert_eq!(t.mean(), 0.0);

        let d = dist(&[(1.0, 0.5), (3.0, 0.5)]);
        let t = d.truncate(Window::AtLeast(2.0)).unwrap();
        assert_eq!(t.support(), &[(0.0, 0.5), (3.0, 0.5)]);
        assert_eq!(t.mean(), 1.5);

        assert!(d.truncate(Window::Range(2.0, 2.0)).is_err());
        assert!(d.truncate(Window::Range(3.0, 1.0)).is_err());
    }

    #[test]
    fn transform_examples() {
        let d = dist(&[(0.0, 0.3), (2.0, 0.7)]);
        assert_eq!(d.transform(|v| v).unwrap(), d);
        let d = dist(&[(4.0, 1.0)]);
        assert_eq!(d.transform(|v| v / 2.0).unwrap().support(), &[(2.0, 1.0)]);
        assert!(d.transform(|v| v / 0.0).is_err());

        // negated negative part, as used for the lower half of a centred variable
        let centred = dist(&[(-2.0, 0.25), (0.0, 0.5), (2.0, 0.25)]);
        let lower = centred
            .truncate(Window::Below(0.0))
            .unwrap()
            .transform(|v| -v / 4.0)
            .unwrap();
        assert_eq!(lower.support(), &[(0.0, 0.75), (0.5, 0.25)]);
    }

    #[test]
    fn classical_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut ledger = QueryLedger::new();
        let d = dist(&[(7.0, 1.0)]);
        for _ in 0..100 {
            assert_eq!(classical_sample(&d, &mut rng, &mut ledger), 7.0);
        }

        let before = ledger;
        let _ = classical_sample(&d, &mut rng, &mut ledger);
        let delta = ledger.since(&before);
        assert_eq!(
            delta,
            QueryLedger {
                classical_samples: 1,
                ..Default::default()
            }
        );

        let b = dist(&[(0.0, 0.5), (1.0, 0.5)]);
        let n = 100_000;
        let mean: f64 =
            (0..n).map(|_| classical_sample(&b, &mut rng, &mut ledger)).sum::<f64>() / n as f64;
        // 3 sigma = 3 * 0.5 / sqrt(n) < 0.005
        assert!((mean - 0.5).abs() < 0.01, "{mean}");
    }

    #[test]
    fn tv_distance_over_union() {
        let a = dist(&[(0.0, 0.5), (1.0, 0.5)]);
        let b = dist(&[(1.0, 0.5), (2.0, 0.5)]);
        assert!((a.tv_distance(&b) - 0.5).abs() < 1e-15);
        assert_eq!(a.tv_distance(&a), 0.0);
    }

    #[test]
    fn json_round_trip() {
        let d = dist(&[(0.0, 0.25), (1.0, 0.75)]);
        let s = serde_json::to_string(&d).unwrap();
        assert_eq!(s, r#"{"support":[[0.0,0.25],[1.0,0.75]]}"#);
        let back: ValueDistribution = serde_json::from_str(&s).unwrap();
        assert_eq!(back, d);
        assert!(serde_json::from_str::<ValueDistribution>(r#"{"support":[[0,-1],[1,2]]}"#).is_err());
    }

    fn arb_distribution() -> impl Strategy<Value = ValueDistribution> {
        prop::collection::vec((-50.0f64..50.0, 0.01f64..1.0), 1..12).prop_map(|raw| {
            let total: f64 = raw.iter().map(|e| e.1).sum();
            make_distribution(raw.into_iter().map(|(v, w)| (v, w / total))).unwrap()
        })
    }

    proptest! {
        #[test]
        fn three_way_truncation_decomposes_mean(d in arb_distribution(), x in -30.0f64..30.0, gap in 0.001f64..30.0) {
            let y = x + gap;
            let parts = d.truncate(Window::Below(x)).unwrap().mean()
                + d.truncate(Window::Range(x, y)).unwrap().mean()
                + d.truncate(Window::AtLeast(y)).unwrap().mean();
            prop_assert!((parts - d.mean()).abs() <= 1e-12 * (1.0 + d.max_value().abs().max(d.min_value().abs())));
        }

        #[test]
        fn affine_transform_moves_mean(d in arb_distribution(), a in -5.0f64..5.0, b in -5.0f64..5.0) {
            let image = d.transform(|v| a * v + b).unwrap();
            prop_assert!((image.mean() - (a * d.mean() + b)).abs() <= 1e-11);
        }

        #[test]
        fn construction_invariants(d in arb_distribution()) {
            let total: f64 = d.support().iter().map(|e| e.1).sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
            prop_assert!(d.support().windows(2).all(|w| w[0].0 < w[1].0));
            prop_assert!(d.support().iter().all(|e| e.1 > 0.0));
        }
    }

    #[test]
    fn moments_match_large_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ledger = QueryLedger::new();
        for trial in 0..5u64 {
            let raw: Vec<(f64, f64)> = (0..6)
                .map(|i| ((i as f64) * 1.7 - 3.0 + trial as f64, rng.random::<f64>() + 0.05))
                .collect();
            let total: f64 = raw.iter().map(|e| e.1).sum();
            let d = make_distribution(raw.into_iter().map(|(v, w)| (v, w / total))).unwrap();
            let m = d.moments();
            let n = 1_000_000;
            let mut sum = 0.0;
            for _ in 0..n {
                sum += classical_sample(&d, &mut rng, &mut ledger);
            }
            let se = (m.variance / n as f64).sqrt();
            assert!((sum / n as f64 - m.mean).abs() <= 5.0 * se);
        }
    }
}
