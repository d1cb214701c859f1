//! Poison generators for the colluding-attacker threat model.
//!
//! A general attack reports arbitrary values in `[-C, C]`; a biased attack
//! keeps every value on one side of a reference mean. Any general attack
//! can be rewritten as a biased one with the same total deviation from the
//! reference, see [`reduce_gba_to_bba`].

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mech::{Budget, Perturber, ValueDomain};
use crate::Side;

/// Shape of poison values inside the poison range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoisonDistribution {
    Uniform,
    Gaussian { mu: f64, sigma: f64 },
    Point(f64),
}

impl PoisonDistribution {
    /// Gaussian centred on the range with a quarter-width deviation.
    pub fn default_gaussian(lo: f64, hi: f64) -> Self {
        PoisonDistribution::Gaussian {
            mu: 0.5 * (lo + hi),
            sigma: 0.25 * (hi - lo),
        }
    }
}

/// A concrete one-sided poison configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoisonSpec {
    pub gamma: f64,
    pub range_lo: f64,
    pub range_hi: f64,
    pub distribution: PoisonDistribution,
    pub evasion_fraction: f64,
    pub side: Side,
    /// Mean that defines the two sides (`O`, or a pessimistic `O'`).
    pub reference: f64,
}

impl PoisonSpec {
    /// Uniform poison on `[lo, hi]`, side inferred from `reference`.
    pub fn uniform(lo: f64, hi: f64, reference: f64) -> Self {
        PoisonSpec {
            gamma: 0.0,
            range_lo: lo,
            range_hi: hi,
            distribution: PoisonDistribution::Uniform,
            evasion_fraction: 0.0,
            side: if lo >= reference {
                Side::Right
            } else {
                Side::Left
            },
            reference,
        }
    }

    pub fn point(value: f64, reference: f64) -> Self {
        PoisonSpec {
            distribution: PoisonDistribution::Point(value),
            ..PoisonSpec::uniform(value, value, reference)
        }
    }

    fn validate(&self, domain: Option<ValueDomain>) -> Result<()> {
        if !(self.range_lo <= self.range_hi) {
            return Err(Error::InvalidPoisonSpec(format!(
                "empty range [{}, {}]",
                self.range_lo, self.range_hi
            )));
        }
        if !(0.0..0.5).contains(&self.gamma) {
            return Err(Error::InvalidPoisonSpec(format!(
                "gamma {} outside [0, 0.5)",
                self.gamma
            )));
        }
        if !(0.0..=1.0).contains(&self.evasion_fraction) {
            return Err(Error::InvalidPoisonSpec(format!(
                "evasion fraction {} outside [0, 1]",
                self.evasion_fraction
            )));
        }
        if let Some(dom) = domain {
            dom.check(self.range_lo)?;
            dom.check(self.range_hi)?;
        }
        match self.distribution {
            PoisonDistribution::Point(v) if v < self.range_lo || v > self.range_hi => {
                Err(Error::InvalidPoisonSpec(format!(
                    "point {v} outside range [{}, {}]",
                    self.range_lo, self.range_hi
                )))
            }
            PoisonDistribution::Gaussian { sigma, .. } if !(sigma > 0.0) => Err(
                Error::InvalidPoisonSpec(format!("gaussian sigma {sigma} must be positive")),
            ),
            _ => Ok(()),
        }
    }

    fn check_biased(&self) -> Result<()> {
        let ok = match self.side {
            Side::Right => self.range_lo >= self.reference,
            Side::Left => self.range_hi <= self.reference,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::NotBiased {
                lo: self.range_lo,
                hi: self.range_hi,
                reference: self.reference,
            })
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let (lo, hi) = (self.range_lo, self.range_hi);
        match self.distribution {
            PoisonDistribution::Point(v) => v,
            PoisonDistribution::Uniform => lo + (hi - lo) * rng.random::<f64>(),
            PoisonDistribution::Gaussian { mu, sigma } => {
                let normal = Normal::new(mu, sigma).expect("sigma validated positive");
                for _ in 0..10_000 {
                    let x = normal.sample(rng);
                    if (lo..=hi).contains(&x) {
                        return x;
                    }
                }
                // range sits far in a tail; fall back to the nearest edge
                mu.clamp(lo, hi)
            }
        }
    }
}

/// Poison values reported by the attackers, with the mean defining sides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackTrace {
    pub poison_values: Vec<f64>,
    pub reference_mean: f64,
}

impl AttackTrace {
    pub fn deviation_sum(&self) -> f64 {
        self.poison_values
            .iter()
            .map(|v| v - self.reference_mean)
            .sum()
    }

    pub fn len(&self) -> usize {
        self.poison_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poison_values.is_empty()
    }

    /// True when no two values sit strictly on opposite sides of the reference.
    pub fn is_one_sided(&self) -> bool {
        let o = self.reference_mean;
        let left = self.poison_values.iter().any(|&v| v < o);
        let right = self.poison_values.iter().any(|&v| v > o);
        !(left && right)
    }
}

/// Biased attack: `m` draws from `spec` confined to one side of its reference.
pub fn gen_bba<R: Rng + ?Sized>(
    spec: &PoisonSpec,
    m: usize,
    budget: Budget,
    rng: &mut R,
) -> Result<AttackTrace> {
    spec.validate(Some(budget.perturbed_domain()))?;
    spec.check_biased()?;
    Ok(AttackTrace {
        poison_values: (0..m).map(|_| spec.draw(rng)).collect(),
        reference_mean: spec.reference,
    })
}

/// General attack: one-sided draws on each side, concatenated.
pub fn gen_gba<R: Rng + ?Sized>(
    left_spec: &PoisonSpec,
    right_spec: &PoisonSpec,
    m_left: usize,
    m_right: usize,
    rng: &mut R,
) -> Result<AttackTrace> {
    left_spec.validate(None)?;
    right_spec.validate(None)?;
    if left_spec.side == right_spec.side {
        return Err(Error::InvalidPoisonSpec(
            "general attack needs one left and one right spec".into(),
        ));
    }
    let mut values = Vec::with_capacity(m_left + m_right);
    values.extend((0..m_left).map(|_| left_spec.draw(rng)));
    values.extend((0..m_right).map(|_| right_spec.draw(rng)));
    Ok(AttackTrace {
        poison_values: values,
        reference_mean: left_spec.reference,
    })
}

/// Rewrite a two-sided trace as a one-sided trace with the same deviation
/// sum about `o`.
///
/// Each round removes the most extreme value `y_r` on the minority side and
/// the smallest set of majority-side values (taken in decreasing distance
/// from `o`) whose deviations cancel it, then inserts a single value carrying
/// the leftover deviation. The minority side empties after finitely many
/// rounds and every inserted value lies between an absorbed value and `o`.
pub fn reduce_gba_to_bba(trace: &AttackTrace, o: f64, budget: Budget) -> Result<AttackTrace> {
    let domain = budget.perturbed_domain();
    for &v in &trace.poison_values {
        domain.check(v)?;
    }
    let deviations: Vec<f64> = trace.poison_values.iter().map(|v| v - o).collect();
    let total: f64 = deviations.iter().sum();
    let scale: f64 = deviations.iter().map(|d| d.abs()).sum();
    if total.abs() <= 1e-12 * (1.0 + scale) {
        return Ok(AttackTrace {
            poison_values: Vec::new(),
            reference_mean: o,
        });
    }
    // Work with the dominant side mapped to negative deviations.
    let sign = if total < 0.0 { 1.0 } else { -1.0 };
    let mut major: Vec<f64> = Vec::new();
    let mut minor: Vec<f64> = Vec::new();
    let mut neutral = 0usize;
    for d in deviations.iter().map(|d| d * sign) {
        if d < 0.0 {
            major.push(d);
        } else if d > 0.0 {
            minor.push(d);
        } else {
            neutral += 1;
        }
    }
    if minor.is_empty() {
        return Ok(AttackTrace {
            poison_values: trace.poison_values.clone(),
            reference_mean: o,
        });
    }
    // minor ascending so the largest is popped first
    minor.sort_by(|a, b| a.total_cmp(b));
    while let Some(y_r) = minor.pop() {
        // most negative first: any single removal from the chosen set then
        // leaves a positive sum
        major.sort_by(|a, b| a.total_cmp(b));
        let mut acc = y_r;
        let mut taken = 0;
        while acc > 0.0 && taken < major.len() {
            acc += major[taken];
            taken += 1;
        }
        if acc > 0.0 {
            // only reachable through rounding when the total is ~0
            major.clear();
            break;
        }
        major.drain(..taken);
        if acc < 0.0 {
            major.push(acc);
        }
    }
    let mut poison_values: Vec<f64> = major.into_iter().map(|d| o + d * sign).collect();
    poison_values.extend(std::iter::repeat_n(o, neutral));
    Ok(AttackTrace {
        poison_values,
        reference_mean: o,
    })
}

/// Attackers perturb a chosen input `g` with the honest mechanism.
pub fn gen_input_manipulation<R: Rng + ?Sized>(
    g: f64,
    m: usize,
    budget: Budget,
    rng: &mut R,
) -> Result<AttackTrace> {
    ValueDomain::INPUT.check(g)?;
    let pm = Perturber::new(budget);
    Ok(AttackTrace {
        poison_values: (0..m).map(|_| pm.perturb(g, rng)).collect(),
        reference_mean: 0.0,
    })
}

/// `⌊a·m⌋` copies of `evasive_value` on the opposite side, the rest from `spec`.
pub fn gen_evasive<R: Rng + ?Sized>(
    spec: &PoisonSpec,
    m: usize,
    evasive_value: f64,
    rng: &mut R,
) -> Result<AttackTrace> {
    spec.validate(None)?;
    spec.check_biased()?;
    let opposite = match spec.side {
        Side::Right => evasive_value <= spec.reference,
        Side::Left => evasive_value >= spec.reference,
    };
    if !opposite {
        return Err(Error::InvalidPoisonSpec(format!(
            "evasive value {evasive_value} is not opposite the poisoned side"
        )));
    }
    let evasive = (spec.evasion_fraction * m as f64).floor() as usize;
    let mut values = vec![evasive_value; evasive];
    values.extend((evasive..m).map(|_| spec.draw(rng)));
    Ok(AttackTrace {
        poison_values: values,
        reference_mean: spec.reference,
    })
}

/// Attacker utility with and without evasion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EvasionBounds {
    pub u_max: f64,
    pub u_eva: f64,
    pub delta: f64,
}

/// Utility of an all-at-`C` attack versus one that parks a fraction `a` of
/// its values at `O'`, and the gap between the two.
pub fn evasion_bounds(
    m: usize,
    n: usize,
    a: f64,
    c: f64,
    o: f64,
    o_prime: f64,
) -> Result<EvasionBounds> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidPoisonSpec(
            "evasion bounds need m > 0 and n > 0".into(),
        ));
    }
    let (m, n) = (m as f64, n as f64);
    let u_max = (m * c + n * o) / (m + n) - o;
    let u_eva = (m * (a * o_prime + (1.0 - a) * c) + n * o) / (m + n) - o;
    let delta = m * a * (c - o_prime) / (m + n);
    debug_assert!(((u_max - u_eva) - delta).abs() <= 1e-12 * (1.0 + delta.abs()));
    Ok(EvasionBounds {
        u_max,
        u_eva,
        delta,
    })
}

/// A poison range endpoint relative to the attacked budget and true mean.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Bound {
    /// A multiple of the domain bound `C`.
    C(f64),
    /// The normal users' true mean `O`.
    TrueMean,
    Value(f64),
}

impl Bound {
    pub fn resolve(self, c: f64, true_mean: f64) -> f64 {
        match self {
            Bound::C(k) => k * c,
            Bound::TrueMean => true_mean,
            Bound::Value(v) => v,
        }
    }
}

impl FromStr for Bound {
    type Err = Error;

    /// Accepts `O`, `C`, `-C`, `0.75C`, `3C/4`, `C/2`, or a plain number.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let bad = || Error::Config(format!("cannot parse range bound {s:?}"));
        if t.eq_ignore_ascii_case("o") {
            return Ok(Bound::TrueMean);
        }
        if let Some(pos) = t.find(['C', 'c']) {
            let coef = match &t[..pos] {
                "" | "+" => 1.0,
                "-" => -1.0,
                x => x.trim_end_matches('*').parse::<f64>().map_err(|_| bad())?,
            };
            let rest = &t[pos + 1..];
            let div = if rest.is_empty() {
                1.0
            } else {
                rest.strip_prefix('/')
                    .ok_or_else(bad)?
                    .parse::<f64>()
                    .map_err(|_| bad())?
            };
            return Ok(Bound::C(coef / div));
        }
        t.parse::<f64>().map(Bound::Value).map_err(|_| bad())
    }
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bound::C(k) if *k == 1.0 => write!(f, "C"),
            Bound::C(k) => write!(f, "{k}C"),
            Bound::TrueMean => write!(f, "O"),
            Bound::Value(v) => write!(f, "{v}"),
        }
    }
}

impl Serialize for Bound {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Bound {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Bound::Value(v)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Distribution of a poison template, with optional Gaussian parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TemplateDistribution {
    Uniform,
    Gaussian {
        #[serde(default)]
        mu: Option<Bound>,
        #[serde(default)]
        sigma: Option<f64>,
    },
    Point {
        at: Bound,
    },
}

/// A poison range written relative to `C` and `O`, resolved per budget.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoisonTemplate {
    pub lo: Bound,
    pub hi: Bound,
    pub distribution: TemplateDistribution,
}

impl PoisonTemplate {
    pub fn uniform(lo: Bound, hi: Bound) -> Self {
        PoisonTemplate {
            lo,
            hi,
            distribution: TemplateDistribution::Uniform,
        }
    }

    /// Concrete spec for a budget; `reference` is the mean defining sides.
    pub fn resolve(&self, budget: Budget, true_mean: f64, reference: f64) -> Result<PoisonSpec> {
        let c = budget.c();
        let lo = self.lo.resolve(c, true_mean);
        let hi = self.hi.resolve(c, true_mean);
        let distribution = match self.distribution {
            TemplateDistribution::Uniform => PoisonDistribution::Uniform,
            TemplateDistribution::Gaussian { mu, sigma } => {
                let PoisonDistribution::Gaussian { mu: m0, sigma: s0 } =
                    PoisonDistribution::default_gaussian(lo, hi)
                else {
                    unreachable!()
                };
                PoisonDistribution::Gaussian {
                    mu: mu.map_or(m0, |b| b.resolve(c, true_mean)),
                    sigma: sigma.unwrap_or(s0),
                }
            }
            TemplateDistribution::Point { at } => {
                PoisonDistribution::Point(at.resolve(c, true_mean))
            }
        };
        let side = if lo >= reference {
            Side::Right
        } else {
            Side::Left
        };
        let spec = PoisonSpec {
            gamma: 0.0,
            range_lo: lo,
            range_hi: hi,
            distribution,
            evasion_fraction: 0.0,
            side,
            reference,
        };
        spec.validate(Some(budget.perturbed_domain()))?;
        Ok(spec)
    }
}

/// How attackers behave during a collection round.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AttackStrategy {
    /// Attackers report honestly.
    None,
    /// One-sided poison drawn from the template.
    Biased { template: PoisonTemplate },
    /// A fraction of attackers report `evasive_value` on the opposite side.
    Evasive {
        template: PoisonTemplate,
        fraction: f64,
        evasive_value: Bound,
    },
    /// Attackers perturb a fixed input `g` with the honest mechanism.
    InputManipulation { g: f64 },
    /// Two-sided poison; `left_share` of attackers use the left template.
    General {
        left: PoisonTemplate,
        right: PoisonTemplate,
        left_share: f64,
    },
}

impl AttackStrategy {
    /// Poisoned side relative to `true_mean`, if the strategy has one.
    pub fn side(&self, budget: Budget, true_mean: f64) -> Option<Side> {
        match self {
            AttackStrategy::Biased { template } | AttackStrategy::Evasive { template, .. } => {
                let lo = template.lo.resolve(budget.c(), true_mean);
                Some(if lo >= true_mean {
                    Side::Right
                } else {
                    Side::Left
                })
            }
            AttackStrategy::InputManipulation { g } => Some(if *g >= true_mean {
                Side::Right
            } else {
                Side::Left
            }),
            _ => None,
        }
    }

    /// `m` poison reports at `budget`. `honest_inputs` supplies the
    /// attackers' own values for [`AttackStrategy::None`]; it is cycled
    /// when shorter than `m`.
    pub fn generate<R: Rng + ?Sized>(
        &self,
        m: usize,
        budget: Budget,
        true_mean: f64,
        honest_inputs: &[f64],
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        match self {
            AttackStrategy::None => {
                if m > 0 && honest_inputs.is_empty() {
                    return Err(Error::Empty("attacker inputs"));
                }
                let pm = Perturber::new(budget);
                Ok((0..m)
                    .map(|i| pm.perturb(honest_inputs[i % honest_inputs.len()], rng))
                    .collect())
            }
            AttackStrategy::Biased { template } => {
                let spec = template.resolve(budget, true_mean, true_mean)?;
                Ok(gen_bba(&spec, m, budget, rng)?.poison_values)
            }
            AttackStrategy::Evasive {
                template,
                fraction,
                evasive_value,
            } => {
                let mut spec = template.resolve(budget, true_mean, true_mean)?;
                spec.evasion_fraction = *fraction;
                let ev = evasive_value.resolve(budget.c(), true_mean);
                budget.perturbed_domain().check(ev)?;
                Ok(gen_evasive(&spec, m, ev, rng)?.poison_values)
            }
            AttackStrategy::InputManipulation { g } => {
                Ok(gen_input_manipulation(*g, m, budget, rng)?.poison_values)
            }
            AttackStrategy::General {
                left,
                right,
                left_share,
            } => {
                let l = left.resolve(budget, true_mean, true_mean)?;
                let r = right.resolve(budget, true_mean, true_mean)?;
                let m_left = (left_share.clamp(0.0, 1.0) * m as f64).round() as usize;
                Ok(gen_gba(&l, &r, m_left, m - m_left, rng)?.poison_values)
            }
        }
    }
}
