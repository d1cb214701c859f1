//! Privacy budgets, value domains, and the Piecewise Mechanism.
//!
//! A user holding `v ∈ [-1, 1]` reports `v' ∈ [-C, C]`. With probability
//! `e^{ε/2} / (e^{ε/2} + 1)` the report is uniform on the window
//! `[l(v), r(v)]` of width `C - 1`; otherwise it is uniform on the rest of
//! `[-C, C]`. The report is an unbiased estimate of `v`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A local privacy budget ε.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Budget(f64);

impl Budget {
    pub fn new(epsilon: f64) -> Result<Self> {
        if epsilon.is_finite() && epsilon > 0.0 {
            Ok(Budget(epsilon))
        } else {
            Err(Error::InvalidBudget(epsilon))
        }
    }

    pub fn epsilon(self) -> f64 {
        self.0
    }

    /// `e^{ε/2} - 1`, computed without cancellation for small ε.
    fn half_exp_m1(self) -> f64 {
        (self.0 / 2.0).exp_m1()
    }

    /// Bound of the perturbed domain, `C = (e^{ε/2} + 1) / (e^{ε/2} - 1)`.
    pub fn c(self) -> f64 {
        let em1 = self.half_exp_m1();
        (em1 + 2.0) / em1
    }

    /// Probability that the report lands in the high-density window.
    pub fn high_prob(self) -> f64 {
        let e = (self.0 / 2.0).exp();
        e / (e + 1.0)
    }

    /// Left end of the high-density window for input `v`.
    pub fn left(self, v: f64) -> f64 {
        let c = self.c();
        (c + 1.0) / 2.0 * v - (c - 1.0) / 2.0
    }

    /// Right end of the high-density window for input `v`.
    pub fn right(self, v: f64) -> f64 {
        self.left(v) + self.c() - 1.0
    }

    /// Density of the output inside the window.
    pub fn high_density(self) -> f64 {
        self.high_prob() / (self.c() - 1.0)
    }

    /// Density of the output outside the window.
    pub fn low_density(self) -> f64 {
        (1.0 - self.high_prob()) / (self.c() + 1.0)
    }

    /// Variance of one report when the input is ±1, the worst case over inputs.
    pub fn worst_case_variance(self) -> f64 {
        let em1 = self.half_exp_m1();
        1.0 / em1 + (em1 + 4.0) / (3.0 * em1 * em1)
    }

    pub fn perturbed_domain(self) -> ValueDomain {
        let c = self.c();
        ValueDomain { lo: -c, hi: c }
    }
}

impl TryFrom<f64> for Budget {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Budget::new(value)
    }
}

impl From<Budget> for f64 {
    fn from(b: Budget) -> f64 {
        b.0
    }
}

/// `C(ε)` for a budget.
pub fn pm_bounds(budget: Budget) -> f64 {
    budget.c()
}

/// Closed interval of legal values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueDomain {
    pub lo: f64,
    pub hi: f64,
}

impl ValueDomain {
    pub const INPUT: ValueDomain = ValueDomain { lo: -1.0, hi: 1.0 };

    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo < hi {
            Ok(ValueDomain { lo, hi })
        } else {
            Err(Error::InvalidGrid(format!("empty domain [{lo}, {hi}]")))
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    pub fn check(&self, v: f64) -> Result<f64> {
        if self.contains(v) {
            Ok(v)
        } else {
            Err(Error::Domain {
                value: v,
                lo: self.lo,
                hi: self.hi,
            })
        }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Perturb `v ∈ [-1, 1]` with the Piecewise Mechanism.
pub fn pm_perturb<R: Rng + ?Sized>(v: f64, budget: Budget, rng: &mut R) -> Result<f64> {
    ValueDomain::INPUT.check(v)?;
    Ok(Perturber::new(budget).perturb(v, rng))
}

/// Piecewise Mechanism with its constants precomputed, for hot loops.
#[derive(Clone, Copy, Debug)]
pub struct Perturber {
    c: f64,
    high_prob: f64,
}

impl Perturber {
    pub fn new(budget: Budget) -> Self {
        Perturber {
            c: budget.c(),
            high_prob: budget.high_prob(),
        }
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// Caller guarantees `v ∈ [-1, 1]`.
    pub fn perturb<R: Rng + ?Sized>(&self, v: f64, rng: &mut R) -> f64 {
        let c = self.c;
        let l = (c + 1.0) / 2.0 * v - (c - 1.0) / 2.0;
        let r = l + c - 1.0;
        if rng.random::<f64>() < self.high_prob {
            l + (r - l) * rng.random::<f64>()
        } else {
            let left_len = l + c;
            let s = (c + 1.0) * rng.random::<f64>();
            if s < left_len {
                -c + s
            } else {
                r + (s - left_len)
            }
        }
    }
}

/// Uniform discretisation of `[-1, 1]` into `d` input buckets and of
/// `[-C, C]` into `d_out` output buckets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketGrid {
    d: usize,
    d_out: usize,
    budget: Budget,
}

impl BucketGrid {
    pub fn new(d: usize, d_out: usize, budget: Budget) -> Result<Self> {
        if d == 0 || !d.is_multiple_of(2) {
            return Err(Error::InvalidGrid(format!(
                "input bucket count {d} must be positive and even"
            )));
        }
        if d_out == 0 || !d_out.is_multiple_of(2) {
            return Err(Error::InvalidGrid(format!(
                "output bucket count {d_out} must be positive and even"
            )));
        }
        Ok(BucketGrid { d, d_out, budget })
    }

    /// Default sizing for `n_reports` collected values: `d' = ⌊√N⌋` and
    /// `d = ⌊d' / C⌋`, both rounded down to even and at least 2.
    pub fn for_reports(n_reports: usize, budget: Budget) -> Self {
        let d_out = round_even((n_reports as f64).sqrt().floor() as usize);
        let d = round_even((d_out as f64 / budget.c()).floor() as usize);
        BucketGrid { d, d_out, budget }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn budget(&self) -> Budget {
        self.budget
    }

    pub fn c(&self) -> f64 {
        self.budget.c()
    }

    pub fn input_width(&self) -> f64 {
        2.0 / self.d as f64
    }

    pub fn output_width(&self) -> f64 {
        2.0 * self.c() / self.d_out as f64
    }

    pub fn input_midpoint(&self, k: usize) -> f64 {
        -1.0 + (k as f64 + 0.5) * self.input_width()
    }

    pub fn output_edges(&self, i: usize) -> (f64, f64) {
        let w = self.output_width();
        let c = self.c();
        let lo = -c + i as f64 * w;
        let hi = if i + 1 == self.d_out {
            c
        } else {
            -c + (i + 1) as f64 * w
        };
        (lo, hi)
    }

    pub fn output_midpoint(&self, i: usize) -> f64 {
        let (lo, hi) = self.output_edges(i);
        0.5 * (lo + hi)
    }

    /// Output bucket holding `x`; values outside `[-C, C]` clamp to the ends.
    pub fn output_bucket(&self, x: f64) -> usize {
        let pos = (x + self.c()) / self.output_width();
        if pos <= 0.0 {
            0
        } else {
            (pos.floor() as usize).min(self.d_out - 1)
        }
    }

    /// Index of the output bucket edge nearest to `x` (0..=d_out).
    pub fn nearest_output_edge(&self, x: f64) -> usize {
        let pos = (x + self.c()) / self.output_width();
        (pos.round().max(0.0) as usize).min(self.d_out)
    }
}

fn round_even(n: usize) -> usize {
    (n - n % 2).max(2)
}

/// Probability that the Piecewise Mechanism maps the midpoint of input
/// bucket `input` into output bucket `output`.
pub fn transition_prob(input: usize, output: usize, grid: &BucketGrid) -> Result<f64> {
    if input >= grid.d() {
        return Err(Error::BucketIndex {
            index: input,
            len: grid.d(),
        });
    }
    if output >= grid.d_out() {
        return Err(Error::BucketIndex {
            index: output,
            len: grid.d_out(),
        });
    }
    Ok(TransitionKernel::new(grid).prob(input, output))
}

/// Bucket-to-bucket transition probabilities for one grid.
pub(crate) struct TransitionKernel<'a> {
    grid: &'a BucketGrid,
    high: f64,
    low: f64,
}

impl<'a> TransitionKernel<'a> {
    pub(crate) fn new(grid: &'a BucketGrid) -> Self {
        TransitionKernel {
            grid,
            high: grid.budget().high_density(),
            low: grid.budget().low_density(),
        }
    }

    pub(crate) fn prob(&self, input: usize, output: usize) -> f64 {
        let budget = self.grid.budget();
        let v = self.grid.input_midpoint(input);
        let (l, r) = (budget.left(v), budget.right(v));
        let (a, b) = self.grid.output_edges(output);
        let inside = (b.min(r) - a.max(l)).max(0.0);
        let outside = (b - a) - inside;
        (self.high * inside + self.low * outside).clamp(0.0, 1.0)
    }
}

/// Normalised user values and the mean of those values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    values: Vec<f64>,
    true_mean: f64,
}

impl Dataset {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        for &v in &values {
            ValueDomain::INPUT.check(v)?;
        }
        let true_mean = values.iter().sum::<f64>() / values.len() as f64;
        Ok(Dataset { values, true_mean })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn true_mean(&self) -> f64 {
        self.true_mean
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Min-max map of raw values onto `[-1, 1]`.
pub fn normalize_dataset(raw: &[f64]) -> Result<Dataset> {
    if raw.iter().any(|x| !x.is_finite()) {
        return Err(Error::Config("dataset contains non-finite values".into()));
    }
    let (min, max) = raw
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    if !(max > min) {
        return Err(Error::DegenerateRange);
    }
    let span = max - min;
    let values = raw
        .iter()
        .map(|&x| (2.0 * (x - min) / span - 1.0).clamp(-1.0, 1.0))
        .collect();
    Dataset::new(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn b(eps: f64) -> Budget {
        Budget::new(eps).unwrap()
    }

    #[test]
    fn budget_rejects_non_positive() {
        assert!(matches!(Budget::new(0.0), Err(Error::InvalidBudget(_))));
        assert!(Budget::new(-1.0).is_err());
        assert!(Budget::new(f64::NAN).is_err());
    }

    #[test]
    fn c_closed_form() {
        // (e + 1) / (e - 1) at ε = 2
        assert!((pm_bounds(b(2.0)) - 2.163_953_413_738_653).abs() < 1e-12);
        assert!((pm_bounds(b(20.0)) - 1.000_090_803_982_019_4).abs() < 1e-12);
    }

    #[test]
    fn c_decreases_in_epsilon() {
        let mut prev = f64::INFINITY;
        for i in 1..200 {
            let c = b(i as f64 * 0.05).c();
            assert!(c > 1.0 && c < prev);
            prev = c;
        }
    }

    #[test]
    fn window_symmetric_at_zero() {
        let bud = b(1.3);
        let c = bud.c();
        assert!((bud.left(0.0) + (c - 1.0) / 2.0).abs() < 1e-12);
        assert!((bud.right(0.0) - (c - 1.0) / 2.0).abs() < 1e-12);
        assert!((bud.right(0.0) - bud.left(0.0) - (c - 1.0)).abs() < 1e-12);
        assert!((bud.left(1.0) - 1.0).abs() < 1e-12);
        assert!((bud.right(1.0) - c).abs() < 1e-12);
    }

    #[test]
    fn density_integrates_to_one() {
        for eps in [0.0625, 0.5, 1.0, 4.0] {
            let bud = b(eps);
            let c = bud.c();
            let total = bud.high_density() * (c - 1.0) + bud.low_density() * (c + 1.0);
            assert!((total - 1.0).abs() < 1e-12);
            assert!((bud.high_density() / bud.low_density() - eps.exp()).abs() < 1e-9);
        }
    }

    #[test]
    fn perturb_rejects_out_of_domain() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            pm_perturb(1.5, b(1.0), &mut rng),
            Err(Error::Domain { .. })
        ));
    }

    #[test]
    fn perturb_at_one_high_branch_lands_in_window() {
        // With ε large the high branch dominates: outputs concentrate in [1, C].
        let bud = b(12.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = bud.c();
        let inside = (0..10_000)
            .map(|_| pm_perturb(1.0, bud, &mut rng).unwrap())
            .filter(|&x| (1.0..=c).contains(&x))
            .count();
        assert!(inside as f64 / 10_000.0 > 0.99);
    }

    #[test]
    fn perturb_mean_is_unbiased() {
        let bud = b(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let k = 1_000_000;
        let mean = (0..k)
            .map(|_| pm_perturb(0.5, bud, &mut rng).unwrap())
            .sum::<f64>()
            / k as f64;
        let tol = 4.0 * (bud.worst_case_variance() / k as f64).sqrt();
        assert!((mean - 0.5).abs() <= tol, "mean {mean} tol {tol}");
    }

    #[test]
    fn worst_case_variance_matches_sampling() {
        let bud = b(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let k = 400_000;
        let xs: Vec<f64> = (0..k)
            .map(|_| pm_perturb(1.0, bud, &mut rng).unwrap())
            .collect();
        let m = xs.iter().sum::<f64>() / k as f64;
        let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / k as f64;
        assert!((var / bud.worst_case_variance() - 1.0).abs() < 0.02);
    }

    #[test]
    fn grid_defaults_are_even() {
        let g = BucketGrid::for_reports(100_000, b(2.0));
        assert_eq!(g.d_out(), 316);
        assert_eq!(g.d(), 146);
        let g = BucketGrid::for_reports(101, b(0.0625));
        assert_eq!(g.d_out(), 10);
        assert_eq!(g.d(), 2);
        assert!(BucketGrid::new(3, 4, b(1.0)).is_err());
        assert!(BucketGrid::new(2, 5, b(1.0)).is_err());
    }

    #[test]
    fn grid_bucket_lookup() {
        let g = BucketGrid::new(2, 4, b(1.0)).unwrap();
        let c = g.c();
        assert_eq!(g.output_bucket(-c), 0);
        assert_eq!(g.output_bucket(c), 3);
        assert_eq!(g.output_bucket(0.0), 2);
        assert_eq!(g.output_bucket(-1e-12), 1);
        assert_eq!(g.nearest_output_edge(0.0), 2);
        assert!((g.output_midpoint(3) - 0.75 * c).abs() < 1e-12);
        assert_eq!(g.output_edges(3).1, c);
    }

    #[test]
    fn transition_rows_sum_to_one() {
        for eps in [0.0625, 1.0, 3.0] {
            let g = BucketGrid::new(8, 20, b(eps)).unwrap();
            for k in 0..g.d() {
                let s: f64 = (0..g.d_out())
                    .map(|i| transition_prob(k, i, &g).unwrap())
                    .sum();
                assert!((s - 1.0).abs() < 1e-9);
            }
        }
        let g = BucketGrid::new(2, 4, b(1.0)).unwrap();
        assert!(transition_prob(2, 0, &g).is_err());
        assert!(transition_prob(0, 4, &g).is_err());
    }

    #[test]
    fn transition_flat_as_budget_vanishes() {
        let g = BucketGrid::new(4, 10, b(1e-4)).unwrap();
        for k in 0..4 {
            for i in 0..10 {
                assert!((transition_prob(k, i, &g).unwrap() - 0.1).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn transition_matches_monte_carlo() {
        let g = BucketGrid::new(2, 4, b(1.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let draws = 1_000_000;
        for k in 0..2 {
            let v = g.input_midpoint(k);
            let mut counts = [0usize; 4];
            for _ in 0..draws {
                counts[g.output_bucket(pm_perturb(v, g.budget(), &mut rng).unwrap())] += 1;
            }
            for (i, &cnt) in counts.iter().enumerate() {
                let p = transition_prob(k, i, &g).unwrap();
                let freq = cnt as f64 / draws as f64;
                let se = (p * (1.0 - p) / draws as f64).sqrt();
                assert!(
                    (freq - p).abs() <= 3.0 * se,
                    "k={k} i={i} freq={freq} p={p}"
                );
            }
        }
    }

    #[test]
    fn normalize_maps_endpoints() {
        let ds = normalize_dataset(&[0.0, 1.0]).unwrap();
        assert_eq!(ds.values(), &[-1.0, 1.0]);
        assert_eq!(ds.true_mean(), 0.0);
        assert!(matches!(
            normalize_dataset(&[3.0, 3.0]),
            Err(Error::DegenerateRange)
        ));
    }

    #[test]
    fn determinism_same_seed_same_stream() {
        let bud = b(0.7);
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..100)
                .map(|i| pm_perturb((i as f64 / 50.0) - 1.0, bud, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5), run(6));
    }
}
