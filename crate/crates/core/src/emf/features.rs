use serde::Serialize;

use super::em::{emf, EmConfig, EmOutcome, HistogramPair, ObservedCounts};
use super::transform::TransformMatrix;
use crate::error::{Error, Result};
use crate::mech::BucketGrid;
use crate::Side;

/// Both EMF runs of a side probe and the side they point to.
#[derive(Clone, Debug, Serialize)]
pub struct SideProbe {
    pub side: Side,
    pub var_left: f64,
    pub var_right: f64,
    pub left: EmOutcome,
    pub right: EmOutcome,
}

impl SideProbe {
    pub fn chosen(&self) -> &EmOutcome {
        match self.side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }

    pub fn into_chosen(self) -> EmOutcome {
        match self.side {
            Side::Left => self.left,
            Side::Right => self.right,
        }
    }
}

/// Run EMF with both matrices and pick the side whose honest histogram has
/// the smaller variance. Ties go right.
pub fn probe_side(
    m_left: &TransformMatrix,
    m_right: &TransformMatrix,
    counts: &ObservedCounts,
    cfg: &EmConfig,
) -> Result<SideProbe> {
    if m_left.grid() != m_right.grid() {
        return Err(Error::InvalidGrid(
            "side probe needs both matrices on one grid".into(),
        ));
    }
    let left = emf(m_left, counts, cfg)?;
    let right = emf(m_right, counts, cfg)?;
    let var_left = left.pair.normal_variance();
    let var_right = right.pair.normal_variance();
    let side = if var_left < var_right {
        Side::Left
    } else {
        Side::Right
    };
    Ok(SideProbe {
        side,
        var_left,
        var_right,
        left,
        right,
    })
}

/// Attacker features read off a poison histogram.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ByzantineFeatures {
    pub side: Side,
    pub gamma_hat: f64,
    pub y_hat: Vec<f64>,
    /// First output bucket of `y_hat`.
    pub poison_offset: usize,
    /// `gamma_hat · reports`; fractional, since it feeds mean corrections.
    pub m_hat: f64,
}

impl ByzantineFeatures {
    pub fn m_hat_rounded(&self) -> u64 {
        self.m_hat.round() as u64
    }
}

pub fn estimate_features(
    pair: &HistogramPair,
    side: Side,
    counts: &ObservedCounts,
) -> ByzantineFeatures {
    let gamma_hat = pair.poison_mass();
    ByzantineFeatures {
        side,
        gamma_hat,
        y_hat: pair.y_hat.clone(),
        poison_offset: pair.poison_offset,
        m_hat: gamma_hat * counts.total() as f64,
    }
}

/// Pessimistic starting point for the true mean.
///
/// Drops the `⌈γ_sup·N⌉` most extreme values on `side` and rescales:
/// `O' = (mean(V') - Σ_T v / N) / (1 - γ_sup)`. For `Right` this never
/// exceeds the honest mean when at most a `γ_sup` share is poisoned.
pub fn init_o_prime(collected: &[f64], gamma_sup: f64, side: Side) -> Result<f64> {
    if collected.is_empty() {
        return Err(Error::Empty("collected values"));
    }
    if !(gamma_sup > 0.0 && gamma_sup <= 0.5) {
        return Err(Error::Config(format!(
            "gamma_sup {gamma_sup} outside (0, 0.5]"
        )));
    }
    let n = collected.len();
    let t = ((gamma_sup * n as f64).ceil() as usize).clamp(1, n);
    let mut sorted = collected.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let extreme: f64 = match side {
        Side::Right => sorted[n - t..].iter().sum(),
        Side::Left => sorted[..t].iter().sum(),
    };
    let mean = sorted.iter().sum::<f64>() / n as f64;
    Ok((mean - extreme / n as f64) / (1.0 - gamma_sup))
}

/// Mass-weighted mean of poison bucket midpoints.
pub fn poison_mean(pair: &HistogramPair, grid: &BucketGrid) -> Result<f64> {
    poison_mean_of(&pair.y_hat, pair.poison_offset, grid)
}

pub(crate) fn poison_mean_of(y_hat: &[f64], offset: usize, grid: &BucketGrid) -> Result<f64> {
    let mass: f64 = y_hat.iter().sum();
    if !(mass > 0.0) {
        return Err(Error::NoPoisonMass);
    }
    let weighted: f64 = y_hat
        .iter()
        .enumerate()
        .map(|(j, &y)| y * grid.output_midpoint(offset + j))
        .sum();
    Ok(weighted / mass)
}
