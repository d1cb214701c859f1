//! End-to-end defenses and the baselines they are compared against.

mod baseline;
mod dap;
mod plan;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attack::AttackStrategy;
use crate::error::{Error, Result};
use crate::mech::{Budget, Dataset, Perturber};
use crate::Side;

pub use baseline::{baseline_run, BaselineConfig, BaselineMode, BaselineOutcome};
pub use dap::{
    aggregate_means, aggregation_variance, dap_collect, dap_estimate, intra_group_mean,
    remove_poison, AggregateResult, DapCollection, DapConfig, DapOutcome, GroupCollection,
    GroupDiagnostics, GroupEstimate, Reference, Repetition,
};
pub use plan::{dap_plan, GroupPlan};

/// Which EM filter a DAP group runs before estimating its mean.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterVariant {
    Emf,
    EmfStar,
    CemfStar,
}

/// Users split into honest users and attackers.
#[derive(Clone, Debug)]
pub struct Population<'a> {
    values: &'a [f64],
    attacker: Vec<bool>,
    honest_mean: f64,
}

impl<'a> Population<'a> {
    pub fn new(dataset: &'a Dataset, attackers: &[usize]) -> Result<Self> {
        let values = dataset.values();
        let mut attacker = vec![false; values.len()];
        for &i in attackers {
            if i >= values.len() {
                return Err(Error::Config(format!(
                    "attacker index {i} outside population of {}",
                    values.len()
                )));
            }
            attacker[i] = true;
        }
        let (sum, n) = values
            .iter()
            .zip(&attacker)
            .filter(|(_, &a)| !a)
            .fold((0.0, 0usize), |(s, n), (&v, _)| (s + v, n + 1));
        if n == 0 {
            return Err(Error::Empty("honest users"));
        }
        Ok(Population {
            values,
            attacker,
            honest_mean: sum / n as f64,
        })
    }

    /// `⌊γN⌋` attackers chosen uniformly at random.
    pub fn sample<R: Rng + ?Sized>(dataset: &'a Dataset, gamma: f64, rng: &mut R) -> Result<Self> {
        if !(0.0..0.5).contains(&gamma) {
            return Err(Error::Config(format!("gamma {gamma} outside [0, 0.5)")));
        }
        let n = dataset.len();
        let m = (gamma * n as f64).floor() as usize;
        let ids = index::sample(rng, n, m).into_vec();
        Population::new(dataset, &ids)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, user: usize) -> f64 {
        self.values[user]
    }

    pub fn is_attacker(&self, user: usize) -> bool {
        self.attacker[user]
    }

    pub fn attacker_count(&self) -> usize {
        self.attacker.iter().filter(|&&a| a).count()
    }

    /// Mean of the honest users' values, the estimation target.
    pub fn honest_mean(&self) -> f64 {
        self.honest_mean
    }

    fn attacker_inputs(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.attacker)
            .filter(|(_, &a)| a)
            .map(|(&v, _)| v)
            .collect()
    }
}

/// One report per user at `budget`: honest users perturb, attackers follow
/// `strategy`. Attacker reports come last.
pub fn collect_single<R: Rng + ?Sized>(
    population: &Population<'_>,
    budget: Budget,
    strategy: &AttackStrategy,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let pm = Perturber::new(budget);
    let mut reports = Vec::with_capacity(population.len());
    for (user, &v) in population.values.iter().enumerate() {
        if !population.attacker[user] {
            reports.push(pm.perturb(v, rng));
        }
    }
    let inputs = population.attacker_inputs();
    reports.extend(strategy.generate(
        inputs.len(),
        budget,
        population.honest_mean,
        &inputs,
        rng,
    )?);
    Ok(reports)
}

/// Plain average of every report.
pub fn ostrich(reports: &[f64]) -> Result<f64> {
    if reports.is_empty() {
        return Err(Error::Empty("reports"));
    }
    Ok(reports.iter().sum::<f64>() / reports.len() as f64)
}

/// Mean after discarding the larger half of the reports (`Right`) or the
/// smaller half (`Left`).
pub fn trimming(reports: &[f64], side: Side) -> Result<f64> {
    if reports.is_empty() {
        return Err(Error::Empty("reports"));
    }
    let keep = reports.len() - reports.len() / 2;
    let mut sorted = reports.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let kept = match side {
        Side::Right => &sorted[..keep],
        Side::Left => &sorted[sorted.len() - keep..],
    };
    Ok(kept.iter().sum::<f64>() / keep as f64)
}
