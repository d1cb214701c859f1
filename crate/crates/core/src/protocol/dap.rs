use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::plan::GroupPlan;
use super::{FilterVariant, Population};
use crate::attack::AttackStrategy;
use crate::emf::{
    build_transform, build_transform_split, cemf_star, default_suppress_threshold, emf, emf_star,
    estimate_features, init_o_prime, poison_mean_of, probe_side, split_at, ByzantineFeatures,
    EmConfig, EmOutcome, ObservedCounts, TransformMatrix,
};
use crate::error::{Error, Result};
use crate::mech::{BucketGrid, Budget, Perturber};
use crate::Side;

/// How an attacker fills its repeated reports within a group.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Repetition {
    /// A new poison value for every report.
    #[default]
    Fresh,
    /// One poison value repeated.
    Fixed,
}

/// Where the output buckets are split into honest-only and poison buckets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Reference {
    /// Split at zero.
    #[default]
    Zero,
    /// Split at the bucket edge nearest the pessimistic estimate `O'`
    /// computed with an assumed attacker share of at most `gamma_sup`.
    Pessimistic { gamma_sup: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DapConfig {
    pub variant: FilterVariant,
    #[serde(default)]
    pub reference: Reference,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

fn default_max_iter() -> usize {
    10_000
}

impl DapConfig {
    pub fn new(variant: FilterVariant) -> Self {
        DapConfig {
            variant,
            reference: Reference::Zero,
            max_iter: default_max_iter(),
        }
    }

    fn em(&self, budget: Budget) -> EmConfig {
        EmConfig {
            max_iter: self.max_iter,
            ..EmConfig::for_budget(budget).lenient()
        }
    }
}

/// Reports gathered by one group.
#[derive(Clone, Debug)]
pub struct GroupCollection {
    pub group: usize,
    pub budget: Budget,
    pub grid: BucketGrid,
    /// Honest reports first, then attacker reports.
    pub reports: Vec<f64>,
    pub poison_reports: usize,
}

impl GroupCollection {
    pub fn counts(&self) -> ObservedCounts {
        ObservedCounts::from_reports(&self.reports, &self.grid)
    }

    pub fn poison_slice(&self) -> &[f64] {
        &self.reports[self.reports.len() - self.poison_reports..]
    }

    pub fn honest_slice(&self) -> &[f64] {
        &self.reports[..self.reports.len() - self.poison_reports]
    }
}

#[derive(Clone, Debug)]
pub struct DapCollection {
    pub total: Budget,
    pub groups: Vec<GroupCollection>,
}

/// Run the collection round of `plan`. Each group draws from its own
/// generator seeded from `rng`, so the result does not depend on thread
/// scheduling.
pub fn dap_collect<R: Rng + ?Sized>(
    population: &Population<'_>,
    plan: &GroupPlan,
    strategy: &AttackStrategy,
    repetition: Repetition,
    rng: &mut R,
) -> Result<DapCollection> {
    if plan.assignment().len() != population.len() {
        return Err(Error::Config(format!(
            "plan covers {} users, population has {}",
            plan.assignment().len(),
            population.len()
        )));
    }
    let seeds: Vec<u64> = (0..plan.h()).map(|_| rng.random()).collect();
    let groups = seeds
        .into_par_iter()
        .enumerate()
        .map(|(t, seed)| collect_group(population, plan, t, strategy, repetition, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(DapCollection {
        total: plan.total_budget(),
        groups,
    })
}

fn collect_group(
    population: &Population<'_>,
    plan: &GroupPlan,
    t: usize,
    strategy: &AttackStrategy,
    repetition: Repetition,
    seed: u64,
) -> Result<GroupCollection> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let budget = plan.budgets()[t];
    let reps = plan.reports_per_user()[t];
    let pm = Perturber::new(budget);
    let mut reports = Vec::with_capacity(plan.reports_in(t));
    let mut attacker_inputs = Vec::new();
    for user in plan.members(t) {
        if population.is_attacker(user) {
            attacker_inputs.push(population.value(user));
        } else {
            let v = population.value(user);
            reports.extend((0..reps).map(|_| pm.perturb(v, &mut rng)));
        }
    }
    let m = attacker_inputs.len();
    let o = population.honest_mean();
    let poison = match repetition {
        Repetition::Fresh => strategy.generate(m * reps, budget, o, &attacker_inputs, &mut rng)?,
        Repetition::Fixed => strategy
            .generate(m, budget, o, &attacker_inputs, &mut rng)?
            .into_iter()
            .flat_map(|v| std::iter::repeat_n(v, reps))
            .collect(),
    };
    let poison_reports = poison.len();
    reports.extend(poison);
    Ok(GroupCollection {
        group: t,
        budget,
        grid: BucketGrid::for_reports(reports.len(), budget),
        reports,
        poison_reports,
    })
}

/// Mean of one group after removing the estimated poison contribution.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupEstimate {
    pub group: usize,
    pub budget: Budget,
    pub mean: f64,
    /// Estimated attacker reports, clamped to `[0, N_t - 1]`.
    pub m_hat: f64,
    /// Estimated distinct honest users, `(N_t - m_hat)·ε_t/ε`.
    pub n_hat: f64,
    pub features: ByzantineFeatures,
}

/// `(Σv' - m̂·μ) / (N - m̂)` with `m̂` clamped to `[0, N - 1]`.
pub fn remove_poison(sum: f64, reports: usize, m_hat: f64, poison_mean: f64) -> Result<f64> {
    let n = reports as f64;
    if reports == 0 || !(m_hat < n) {
        return Err(Error::DegenerateFilter { m_hat, reports });
    }
    let m = m_hat.clamp(0.0, n - 1.0);
    if m == 0.0 {
        return Ok(sum / n);
    }
    Ok((sum - m * poison_mean) / (n - m))
}

/// Group mean with the poison mass `features` describes taken out.
pub fn intra_group_mean(
    group: usize,
    reports: &[f64],
    features: &ByzantineFeatures,
    grid: &BucketGrid,
    total: Budget,
) -> Result<GroupEstimate> {
    let n = reports.len();
    let sum: f64 = reports.iter().sum();
    let mu = match poison_mean_of(&features.y_hat, features.poison_offset, grid) {
        Ok(mu) => mu,
        Err(Error::NoPoisonMass) => 0.0,
        Err(e) => return Err(e),
    };
    let mean = remove_poison(sum, n, features.m_hat, mu)?;
    let m_hat = features.m_hat.clamp(0.0, n as f64 - 1.0);
    let budget = grid.budget();
    let n_hat = (n as f64 - m_hat) * budget.epsilon() / total.epsilon();
    Ok(GroupEstimate {
        group,
        budget,
        mean,
        m_hat,
        n_hat,
        features: features.clone(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AggregateResult {
    pub mean: f64,
    pub weights: Vec<f64>,
    /// `[Σ n̂_t² / B_t]⁻¹`, the worst-case variance under these weights.
    pub predicted_variance: f64,
}

/// `B_t = n̂_t · Var_worst(ε_t)`.
fn b_term(e: &GroupEstimate) -> f64 {
    e.n_hat * e.budget.worst_case_variance()
}

/// `Σ w_t² B_t / n̂_t²`; groups with no honest users must have zero weight.
pub fn aggregation_variance(weights: &[f64], estimates: &[GroupEstimate]) -> f64 {
    weights
        .iter()
        .zip(estimates)
        .map(|(&w, e)| {
            if w == 0.0 {
                0.0
            } else if e.n_hat > 0.0 {
                w * w * b_term(e) / (e.n_hat * e.n_hat)
            } else {
                f64::INFINITY
            }
        })
        .sum()
}

/// Minimum-variance combination of group means: `w_t ∝ n̂_t² / B_t`.
pub fn aggregate_means(estimates: &[GroupEstimate]) -> Result<AggregateResult> {
    if estimates.is_empty() {
        return Err(Error::Empty("group estimates"));
    }
    let precision: Vec<f64> = estimates
        .iter()
        .map(|e| {
            if e.n_hat > 0.0 {
                e.n_hat * e.n_hat / b_term(e)
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = precision.iter().sum();
    if !(total > 0.0) {
        return Err(Error::NoSignal);
    }
    let weights: Vec<f64> = precision.iter().map(|p| p / total).collect();
    let mean = weights.iter().zip(estimates).map(|(w, e)| w * e.mean).sum();
    Ok(AggregateResult {
        mean,
        weights,
        predicted_variance: 1.0 / total,
    })
}

/// Per-group record of the probing step.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupDiagnostics {
    pub group: usize,
    pub side: Side,
    /// Poison share from the group's own unconstrained filter.
    pub gamma_hat: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Split point of the output buckets.
    pub reference: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DapOutcome {
    pub result: AggregateResult,
    pub estimates: Vec<GroupEstimate>,
    pub diagnostics: Vec<GroupDiagnostics>,
    /// Poison share from the smallest-budget group, used by the constrained
    /// filters.
    pub gamma_ref: f64,
}

struct Probed {
    side: Side,
    matrix: TransformMatrix,
    counts: ObservedCounts,
    outcome: EmOutcome,
    reference: f64,
}

fn probe_group(g: &GroupCollection, cfg: &DapConfig) -> Result<Probed> {
    let em = cfg.em(g.budget);
    let counts = g.counts();
    let probe = probe_side(
        &build_transform(&g.grid, Side::Left),
        &build_transform(&g.grid, Side::Right),
        &counts,
        &em,
    )?;
    let side = probe.side;
    match cfg.reference {
        Reference::Zero => Ok(Probed {
            side,
            matrix: build_transform(&g.grid, side),
            counts,
            outcome: probe.into_chosen(),
            reference: 0.0,
        }),
        Reference::Pessimistic { gamma_sup } => {
            let o_prime = init_o_prime(&g.reports, gamma_sup, side)?;
            let matrix = build_transform_split(&g.grid, side, split_at(&g.grid, o_prime));
            let outcome = emf(&matrix, &counts, &em)?;
            Ok(Probed {
                side,
                matrix,
                counts,
                outcome,
                reference: o_prime,
            })
        }
    }
}

/// Filter every group with `cfg.variant` and aggregate.
pub fn dap_estimate(collection: &DapCollection, cfg: &DapConfig) -> Result<DapOutcome> {
    if collection.groups.is_empty() {
        return Err(Error::Empty("groups"));
    }
    let probed = collection
        .groups
        .par_iter()
        .map(|g| probe_group(g, cfg))
        .collect::<Result<Vec<_>>>()?;
    let gamma_ref = probed
        .last()
        .expect("at least one group")
        .outcome
        .pair
        .poison_mass()
        .clamp(0.0, 0.99);

    let filtered = collection
        .groups
        .par_iter()
        .zip(&probed)
        .map(|(g, p)| {
            let em = cfg.em(g.budget);
            let outcome = match cfg.variant {
                FilterVariant::Emf => p.outcome.clone(),
                FilterVariant::EmfStar => emf_star(&p.matrix, &p.counts, gamma_ref, &em)?,
                FilterVariant::CemfStar => {
                    let thr = default_suppress_threshold(gamma_ref, p.matrix.poison_len());
                    match cemf_star(
                        &p.matrix,
                        &p.counts,
                        gamma_ref,
                        &p.outcome.pair.y_hat,
                        thr,
                        &em,
                    ) {
                        Err(Error::InconsistentSuppression(_)) => {
                            emf_star(&p.matrix, &p.counts, gamma_ref, &em)?
                        }
                        other => other?,
                    }
                }
            };
            let features = estimate_features(&outcome.pair, p.side, &p.counts);
            let estimate =
                intra_group_mean(g.group, &g.reports, &features, &g.grid, collection.total)?;
            let diag = GroupDiagnostics {
                group: g.group,
                side: p.side,
                gamma_hat: p.outcome.pair.poison_mass(),
                iterations: outcome.iterations,
                converged: outcome.converged,
                reference: p.reference,
            };
            Ok((estimate, diag))
        })
        .collect::<Result<Vec<_>>>()?;
    let (estimates, diagnostics): (Vec<_>, Vec<_>) = filtered.into_iter().unzip();
    let result = aggregate_means(&estimates)?;
    Ok(DapOutcome {
        result,
        estimates,
        diagnostics,
        gamma_ref,
    })
}
