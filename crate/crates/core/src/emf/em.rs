//! EM reconstruction of the honest and poison histograms.

use serde::Serialize;

use super::transform::TransformMatrix;
use crate::error::{Error, Result};
use crate::mech::{BucketGrid, Budget};

/// Reports binned into the output buckets of a grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ObservedCounts {
    counts: Vec<u64>,
    total: u64,
}

impl ObservedCounts {
    pub fn new(counts: Vec<u64>) -> Self {
        let total = counts.iter().sum();
        ObservedCounts { counts, total }
    }

    pub fn from_reports(reports: &[f64], grid: &BucketGrid) -> Self {
        let mut counts = vec![0u64; grid.d_out()];
        for &r in reports {
            counts[grid.output_bucket(r)] += 1;
        }
        ObservedCounts::new(counts)
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }
}

/// Reconstructed honest histogram `x_hat` over input buckets and poison
/// histogram `y_hat` over the poison buckets starting at output bucket
/// `poison_offset`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HistogramPair {
    pub x_hat: Vec<f64>,
    pub y_hat: Vec<f64>,
    pub poison_offset: usize,
}

impl HistogramPair {
    pub fn normal_mass(&self) -> f64 {
        self.x_hat.iter().sum()
    }

    pub fn poison_mass(&self) -> f64 {
        self.y_hat.iter().sum()
    }

    /// Population variance of the entries of `x_hat`.
    pub fn normal_variance(&self) -> f64 {
        variance(&self.x_hat)
    }
}

pub(crate) fn variance(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

/// Stopping rule for the EM loops.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EmConfig {
    /// Stop once the log-likelihood moves by less than this.
    pub tau: f64,
    pub max_iter: usize,
    /// Fail with [`Error::ConvergenceFailure`] at the cap instead of
    /// returning the last iterate flagged as unconverged.
    pub strict: bool,
}

impl EmConfig {
    /// `tau = 0.01·e^ε`, at most 10^4 iterations, strict.
    pub fn for_budget(budget: Budget) -> Self {
        EmConfig {
            tau: 0.01 * budget.epsilon().exp(),
            max_iter: 10_000,
            strict: true,
        }
    }

    pub fn lenient(self) -> Self {
        EmConfig {
            strict: false,
            ..self
        }
    }
}

/// Result of one EM run.
#[derive(Clone, Debug, Serialize)]
pub struct EmOutcome {
    pub pair: HistogramPair,
    pub iterations: usize,
    pub converged: bool,
    /// Log-likelihood of each iterate, starting with the initial point.
    pub log_likelihood: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
enum MStep {
    /// Joint normalisation to total mass one.
    Free,
    /// `Σx = 1 - γ`, `Σy = γ`.
    Constrained(f64),
}

/// Expectation-Maximisation Filter.
pub fn emf(m: &TransformMatrix, counts: &ObservedCounts, cfg: &EmConfig) -> Result<EmOutcome> {
    run(m, counts, MStep::Free, None, cfg)
}

/// EM with the poison mass pinned to `gamma_hat`.
pub fn emf_star(
    m: &TransformMatrix,
    counts: &ObservedCounts,
    gamma_hat: f64,
    cfg: &EmConfig,
) -> Result<EmOutcome> {
    check_gamma(gamma_hat)?;
    run(m, counts, MStep::Constrained(gamma_hat), None, cfg)
}

/// Default suppression threshold, half the average poison mass per bucket.
pub fn default_suppress_threshold(gamma_hat: f64, poison_buckets: usize) -> f64 {
    0.5 * gamma_hat / poison_buckets.max(1) as f64
}

/// Constrained EM after suppressing poison buckets whose mass in `prior_y`
/// (a previous unconstrained run) is below `threshold`.
pub fn cemf_star(
    m: &TransformMatrix,
    counts: &ObservedCounts,
    gamma_hat: f64,
    prior_y: &[f64],
    threshold: f64,
    cfg: &EmConfig,
) -> Result<EmOutcome> {
    if prior_y.len() != m.poison_len() {
        return Err(Error::CountsMismatch(format!(
            "prior poison histogram has {} buckets, matrix has {}",
            prior_y.len(),
            m.poison_len()
        )));
    }
    let suppressed: Vec<bool> = prior_y.iter().map(|&y| y < threshold).collect();
    emf_star_suppressed(m, counts, gamma_hat, &suppressed, cfg)
}

/// Constrained EM with an explicit suppression mask over the poison buckets.
pub fn emf_star_suppressed(
    m: &TransformMatrix,
    counts: &ObservedCounts,
    gamma_hat: f64,
    suppressed: &[bool],
    cfg: &EmConfig,
) -> Result<EmOutcome> {
    check_gamma(gamma_hat)?;
    if suppressed.len() != m.poison_len() {
        return Err(Error::CountsMismatch(format!(
            "suppression mask has {} buckets, matrix has {}",
            suppressed.len(),
            m.poison_len()
        )));
    }
    if gamma_hat > 0.0 && suppressed.iter().all(|&s| s) {
        return Err(Error::InconsistentSuppression(gamma_hat));
    }
    run(
        m,
        counts,
        MStep::Constrained(gamma_hat),
        Some(suppressed),
        cfg,
    )
}

fn check_gamma(gamma_hat: f64) -> Result<()> {
    if (0.0..1.0).contains(&gamma_hat) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "gamma_hat {gamma_hat} outside [0, 1)"
        )))
    }
}

/// `Σ_i c_i ln(Σ_k M_ik x_k + y_i)` for a histogram pair.
pub fn log_likelihood(m: &TransformMatrix, counts: &ObservedCounts, pair: &HistogramPair) -> f64 {
    let mut den = vec![0.0; m.d_out()];
    mixture(m, &pair.x_hat, &pair.y_hat, &mut den);
    ll_from(counts.counts(), &den)
}

fn mixture(m: &TransformMatrix, x: &[f64], y: &[f64], den: &mut [f64]) {
    for (i, slot) in den.iter_mut().enumerate() {
        *slot = m.normal_row(i).iter().zip(x).map(|(a, b)| a * b).sum();
    }
    let off = m.poison_rows().start;
    for (j, &yj) in y.iter().enumerate() {
        den[off + j] += yj;
    }
}

fn ll_from(counts: &[u64], den: &[f64]) -> f64 {
    counts
        .iter()
        .zip(den)
        .filter(|(&c, _)| c > 0)
        .map(|(&c, &p)| c as f64 * p.max(f64::MIN_POSITIVE).ln())
        .sum()
}

/// Maximiser of `Σ P_k ln x_k + Σ Q_j ln y_j` subject to `Σx = 1 - γ` and
/// `Σy = γ`: each block is its expected counts rescaled to its mass.
/// Suppressed poison buckets stay at zero. A block with no expected counts
/// is spread evenly.
pub fn constrained_m_step(
    p: &[f64],
    q: &[f64],
    gamma: f64,
    suppressed: Option<&[bool]>,
    x: &mut [f64],
    y: &mut [f64],
) {
    let keep = |j: usize| suppressed.is_none_or(|s| !s[j]);
    let sx: f64 = p.iter().sum();
    let sy: f64 = (0..q.len()).filter(|&j| keep(j)).map(|j| q[j]).sum();
    if sx > 0.0 {
        x.iter_mut()
            .zip(p)
            .for_each(|(v, pk)| *v = (1.0 - gamma) * pk / sx);
    } else {
        let d = x.len() as f64;
        x.iter_mut().for_each(|v| *v = (1.0 - gamma) / d);
    }
    if sy > 0.0 {
        for (j, v) in y.iter_mut().enumerate() {
            *v = if keep(j) { gamma * q[j] / sy } else { 0.0 };
        }
    } else {
        let kept = (0..q.len()).filter(|&j| keep(j)).count().max(1);
        for (j, v) in y.iter_mut().enumerate() {
            *v = if keep(j) { gamma / kept as f64 } else { 0.0 };
        }
    }
}

fn run(
    m: &TransformMatrix,
    counts: &ObservedCounts,
    step: MStep,
    suppressed: Option<&[bool]>,
    cfg: &EmConfig,
) -> Result<EmOutcome> {
    let (d, d_out, dy) = (m.d(), m.d_out(), m.poison_len());
    if counts.counts().len() != d_out {
        return Err(Error::CountsMismatch(format!(
            "{} counts for {} output buckets",
            counts.counts().len(),
            d_out
        )));
    }
    if counts.total() == 0 {
        return Err(Error::Empty("observed counts"));
    }
    let c = counts.counts();
    let off = m.poison_rows().start;
    let keep = |j: usize| suppressed.is_none_or(|s| !s[j]);

    let init = 1.0 / (d + dy) as f64;
    let mut x = vec![init; d];
    let mut y: Vec<f64> = (0..dy).map(|j| if keep(j) { init } else { 0.0 }).collect();

    let mut den = vec![0.0; d_out];
    let mut ratio = vec![0.0; d_out];
    let mut px = vec![0.0; d];
    let mut py = vec![0.0; dy];

    mixture(m, &x, &y, &mut den);
    let mut trace = vec![ll_from(c, &den)];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        // E-step
        for i in 0..d_out {
            ratio[i] = if c[i] > 0 && den[i] > 0.0 {
                c[i] as f64 / den[i]
            } else {
                0.0
            };
        }
        px.iter_mut().for_each(|p| *p = 0.0);
        for (i, &r) in ratio.iter().enumerate() {
            if r == 0.0 {
                continue;
            }
            for (acc, &mik) in px.iter_mut().zip(m.normal_row(i)) {
                *acc += r * mik;
            }
        }
        for (p, &xk) in px.iter_mut().zip(&x) {
            *p *= xk;
        }
        for j in 0..dy {
            py[j] = if keep(j) { y[j] * ratio[off + j] } else { 0.0 };
        }

        // M-step
        match step {
            MStep::Free => {
                let sx: f64 = px.iter().sum();
                let sy: f64 = py.iter().sum();
                let total = sx + sy;
                x.iter_mut().zip(&px).for_each(|(v, p)| *v = p / total);
                y.iter_mut().zip(&py).for_each(|(v, p)| *v = p / total);
            }
            MStep::Constrained(gamma) => {
                constrained_m_step(&px, &py, gamma, suppressed, &mut x, &mut y);
            }
        }
        iterations += 1;

        mixture(m, &x, &y, &mut den);
        let ll = ll_from(c, &den);
        let prev = *trace.last().expect("trace starts non-empty");
        trace.push(ll);
        if (ll - prev).abs() < cfg.tau {
            converged = true;
            break;
        }
    }

    let pair = HistogramPair {
        x_hat: x,
        y_hat: y,
        poison_offset: off,
    };
    if !converged && cfg.strict {
        return Err(Error::ConvergenceFailure {
            iterations,
            last: Box::new(pair),
        });
    }
    Ok(EmOutcome {
        pair,
        iterations,
        converged,
        log_likelihood: trace,
    })
}
