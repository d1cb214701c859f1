use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dap::remove_poison;
use super::Population;
use crate::attack::AttackStrategy;
use crate::emf::{
    build_transform, estimate_features, poison_mean, probe_side, EmConfig, ObservedCounts,
};
use crate::error::{Error, Result};
use crate::mech::{BucketGrid, Budget, Perturber};
use crate::Side;

/// What attackers send in the probing round.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    /// The same poison values in both rounds.
    #[default]
    Consistent,
    /// Honest reports in the probing round, poison only in the second.
    HonestProbe,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub eps_alpha: Budget,
    pub eps_beta: Budget,
    /// Largest allowed `ε_α / ε_β`.
    pub max_ratio: f64,
    pub mode: BaselineMode,
}

impl BaselineConfig {
    /// Spend `ε/5` on probing and the rest on estimation, the largest
    /// probing share `max_ratio = 1/4` allows.
    pub fn split(eps: Budget) -> Result<Self> {
        Self::with_alpha(eps, eps.epsilon() / 5.0)
    }

    pub fn with_alpha(eps: Budget, eps_alpha: f64) -> Result<Self> {
        if !(eps_alpha > 0.0 && eps_alpha < eps.epsilon()) {
            return Err(Error::Config(format!(
                "eps_alpha {eps_alpha} must lie in (0, {})",
                eps.epsilon()
            )));
        }
        Ok(BaselineConfig {
            eps_alpha: Budget::new(eps_alpha)?,
            eps_beta: Budget::new(eps.epsilon() - eps_alpha)?,
            max_ratio: 0.25,
            mode: BaselineMode::Consistent,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let ratio = self.eps_alpha.epsilon() / self.eps_beta.epsilon();
        if ratio > self.max_ratio * (1.0 + 1e-12) {
            return Err(Error::Config(format!(
                "eps_alpha / eps_beta = {ratio} exceeds {}",
                self.max_ratio
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BaselineOutcome {
    pub estimate: f64,
    pub side: Side,
    pub gamma_hat: f64,
    pub m_hat: f64,
    /// Poison mean read off the probing round.
    pub poison_mean: f64,
}

/// Two-round protocol: probe attacker features at `ε_α`, then remove their
/// estimated contribution from the `ε_β` round.
pub fn baseline_run<R: Rng + ?Sized>(
    population: &Population<'_>,
    cfg: &BaselineConfig,
    strategy: &AttackStrategy,
    rng: &mut R,
) -> Result<BaselineOutcome> {
    cfg.validate()?;
    let (alpha, beta) = (cfg.eps_alpha, cfg.eps_beta);
    let pm_a = Perturber::new(alpha);
    let pm_b = Perturber::new(beta);
    let n = population.len();
    let mut v_alpha = Vec::with_capacity(n);
    let mut v_beta = Vec::with_capacity(n);
    let mut inputs = Vec::new();
    for user in 0..n {
        let v = population.value(user);
        if population.is_attacker(user) {
            inputs.push(v);
        } else {
            v_alpha.push(pm_a.perturb(v, rng));
            v_beta.push(pm_b.perturb(v, rng));
        }
    }
    let o = population.honest_mean();
    let poison = strategy.generate(inputs.len(), beta, o, &inputs, rng)?;
    match cfg.mode {
        BaselineMode::Consistent => v_alpha.extend_from_slice(&poison),
        BaselineMode::HonestProbe => v_alpha.extend(inputs.iter().map(|&v| pm_a.perturb(v, rng))),
    }
    v_beta.extend(poison);

    let grid = BucketGrid::for_reports(n, alpha);
    let counts = ObservedCounts::from_reports(&v_alpha, &grid);
    let probe = probe_side(
        &build_transform(&grid, Side::Left),
        &build_transform(&grid, Side::Right),
        &counts,
        &EmConfig::for_budget(alpha).lenient(),
    )?;
    let side = probe.side;
    let pair = &probe.chosen().pair;
    let features = estimate_features(pair, side, &counts);
    let mu = match poison_mean(pair, &grid) {
        Ok(mu) => mu,
        Err(Error::NoPoisonMass) => 0.0,
        Err(e) => return Err(e),
    };
    let sum: f64 = v_beta.iter().sum();
    let estimate = remove_poison(sum, n, features.m_hat, mu)?;
    Ok(BaselineOutcome {
        estimate,
        side,
        gamma_hat: features.gamma_hat,
        m_hat: features.m_hat.clamp(0.0, n as f64 - 1.0),
        poison_mean: mu,
    })
}
