use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{ExperimentConfig, Scheme};
use crate::attack::AttackStrategy;
use crate::error::{Error, Result};
use crate::mech::{Budget, Dataset};
use crate::protocol::{
    baseline_run, collect_single, dap_collect, dap_estimate, dap_plan, ostrich, trimming,
    BaselineConfig, DapConfig, GroupDiagnostics, Population,
};
use crate::Side;

/// Mean squared error of `estimates` about `truth`.
pub fn mse(estimates: &[f64], truth: f64) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::Empty("estimates"));
    }
    let sum: f64 = estimates.iter().map(|e| (e - truth) * (e - truth)).sum();
    Ok(sum / estimates.len() as f64)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Counter-based seed for stream `lane` of `trial`, independent of the
/// order in which trials run.
pub fn derive_seed(master: u64, trial: u64, lane: u64) -> u64 {
    splitmix(splitmix(splitmix(master) ^ trial) ^ lane)
}

// Lane 0 samples attackers and is shared by every epsilon; the others are
// offset per epsilon.
const LANE_POPULATION: u64 = 0;
const LANE_SINGLE: u64 = 1;
const LANE_DAP: u64 = 2;
const LANE_BASELINE: u64 = 3;
const LANES_PER_EPS: u64 = 4;

fn rng_for(cfg: &ExperimentConfig, eps_index: usize, trial: usize, lane: u64) -> ChaCha8Rng {
    let lane = if lane == LANE_POPULATION {
        lane
    } else {
        lane + LANES_PER_EPS * eps_index as u64
    };
    ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, trial as u64, lane))
}

/// One scheme's result on one trial.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialRecord {
    pub scheme: Scheme,
    pub epsilon: f64,
    pub gamma: f64,
    pub range_lo: Option<f64>,
    pub range_hi: Option<f64>,
    pub trial: usize,
    /// Mean of the honest users' values.
    pub truth: f64,
    pub estimate: Option<f64>,
    pub sq_error: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "scheme")]
pub enum SchemeDiagnostics {
    Dap {
        variant: Scheme,
        gamma_ref: f64,
        groups: Vec<GroupDiagnostics>,
    },
    Baseline {
        side: Side,
        gamma_hat: f64,
        m_hat: f64,
        poison_mean: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialDiagnostics {
    pub epsilon: f64,
    pub trial: usize,
    pub attackers: usize,
    pub truth: f64,
    pub schemes: Vec<SchemeDiagnostics>,
}

/// MSE over the successful trials of one (scheme, epsilon) cell.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellSummary {
    pub scheme: Scheme,
    pub epsilon: f64,
    pub trials: usize,
    pub failures: usize,
    pub mse: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub records: Vec<TrialRecord>,
    pub cells: Vec<CellSummary>,
    pub diagnostics: Vec<TrialDiagnostics>,
}

impl ExperimentResult {
    pub fn cell(&self, scheme: Scheme, epsilon: f64) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.scheme == scheme && c.epsilon == epsilon)
    }
}

fn range_of(strategy: &AttackStrategy, budget: Budget, truth: f64) -> (Option<f64>, Option<f64>) {
    match strategy {
        AttackStrategy::Biased { template } | AttackStrategy::Evasive { template, .. } => (
            Some(template.lo.resolve(budget.c(), truth)),
            Some(template.hi.resolve(budget.c(), truth)),
        ),
        AttackStrategy::InputManipulation { g } => (Some(*g), Some(*g)),
        _ => (None, None),
    }
}

/// A collection shared by several schemes, or the reason it failed.
fn shared<T>(r: &Option<std::result::Result<T, String>>) -> Result<&T> {
    match r {
        Some(Ok(v)) => Ok(v),
        Some(Err(msg)) => Err(Error::Config(msg.clone())),
        None => Err(Error::Config("collection skipped".into())),
    }
}

fn run_trial(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    eps_index: usize,
    trial: usize,
) -> (Vec<TrialRecord>, TrialDiagnostics) {
    let epsilon = cfg.eps[eps_index];
    let mut diag = TrialDiagnostics {
        epsilon,
        trial,
        attackers: 0,
        truth: f64::NAN,
        schemes: Vec::new(),
    };
    let record = |scheme, truth, range: (Option<f64>, Option<f64>), outcome: Result<f64>| {
        let (estimate, error) = match outcome {
            Ok(e) => (Some(e), None),
            Err(e) => (None, Some(e.to_string())),
        };
        TrialRecord {
            scheme,
            epsilon,
            gamma: cfg.gamma,
            range_lo: range.0,
            range_hi: range.1,
            trial,
            truth,
            estimate,
            sq_error: estimate.map(|e| (e - truth) * (e - truth)),
            error,
        }
    };

    let setup = Budget::new(epsilon).and_then(|budget| {
        let mut rng = rng_for(cfg, eps_index, trial, LANE_POPULATION);
        Population::sample(dataset, cfg.gamma, &mut rng).map(|p| (budget, p))
    });
    let (budget, population) = match setup {
        Ok(v) => v,
        Err(e) => {
            let msg = e.to_string();
            let records = cfg
                .schemes
                .iter()
                .map(|&s| record(s, f64::NAN, (None, None), Err(Error::Config(msg.clone()))))
                .collect();
            return (records, diag);
        }
    };
    let truth = population.honest_mean();
    diag.truth = truth;
    diag.attackers = population.attacker_count();
    let range = range_of(&cfg.attack, budget, truth);
    let wants = |f: fn(&Scheme) -> bool| cfg.schemes.iter().any(f);

    let single = wants(|s| matches!(s, Scheme::Ostrich | Scheme::Trimming)).then(|| {
        let mut rng = rng_for(cfg, eps_index, trial, LANE_SINGLE);
        collect_single(&population, budget, &cfg.attack, &mut rng).map_err(|e| e.to_string())
    });
    let dap = wants(|s| s.filter().is_some()).then(|| {
        let mut rng = rng_for(cfg, eps_index, trial, LANE_DAP);
        Budget::new(cfg.eps0)
            .and_then(|eps0| dap_plan(population.len(), budget, eps0, &mut rng))
            .and_then(|plan| dap_collect(&population, &plan, &cfg.attack, cfg.repetition, &mut rng))
            .map_err(|e| e.to_string())
    });
    let trim_side = cfg.attack.side(budget, truth).unwrap_or(Side::Right);
    let mut records = Vec::with_capacity(cfg.schemes.len());
    for &scheme in &cfg.schemes {
        let outcome = match scheme {
            Scheme::Ostrich => shared(&single).and_then(|r| ostrich(r)),
            Scheme::Trimming => shared(&single).and_then(|r| trimming(r, trim_side)),
            Scheme::Baseline => {
                let mut rng = rng_for(cfg, eps_index, trial, LANE_BASELINE);
                BaselineConfig::split(budget)
                    .map(|b| BaselineConfig {
                        mode: cfg.baseline_mode,
                        ..b
                    })
                    .and_then(|b| baseline_run(&population, &b, &cfg.attack, &mut rng))
                    .map(|out| {
                        diag.schemes.push(SchemeDiagnostics::Baseline {
                            side: out.side,
                            gamma_hat: out.gamma_hat,
                            m_hat: out.m_hat,
                            poison_mean: out.poison_mean,
                        });
                        out.estimate
                    })
            }
            Scheme::DapEmf | Scheme::DapEmfStar | Scheme::DapCemfStar => {
                let dap_cfg = DapConfig {
                    reference: cfg.reference,
                    ..DapConfig::new(scheme.filter().expect("dap scheme"))
                };
                shared(&dap)
                    .and_then(|c| dap_estimate(c, &dap_cfg))
                    .map(|out| {
                        diag.schemes.push(SchemeDiagnostics::Dap {
                            variant: scheme,
                            gamma_ref: out.gamma_ref,
                            groups: out.diagnostics,
                        });
                        out.result.mean
                    })
            }
        };
        records.push(record(scheme, truth, range, outcome));
    }
    (records, diag)
}

/// Runs every trial of every epsilon in parallel. Each trial seeds its own
/// generators from the master seed, so results match a sequential run.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let dataset = cfg.dataset.load(cfg.seed)?;
    let jobs: Vec<(usize, usize)> = (0..cfg.eps.len())
        .flat_map(|e| (0..cfg.trials).map(move |t| (e, t)))
        .collect();
    let outputs: Vec<_> = jobs
        .into_par_iter()
        .map(|(e, t)| run_trial(cfg, &dataset, e, t))
        .collect();

    let mut records = Vec::new();
    let mut diagnostics = Vec::new();
    for (r, d) in outputs {
        records.extend(r);
        diagnostics.push(d);
    }
    let mut cells = Vec::new();
    for &epsilon in &cfg.eps {
        for &scheme in &cfg.schemes {
            let cell: Vec<&TrialRecord> = records
                .iter()
                .filter(|r| r.scheme == scheme && r.epsilon == epsilon)
                .collect();
            let errors: Vec<f64> = cell.iter().filter_map(|r| r.sq_error).collect();
            cells.push(CellSummary {
                scheme,
                epsilon,
                trials: errors.len(),
                failures: cell.len() - errors.len(),
                mse: (!errors.is_empty()).then(|| errors.iter().sum::<f64>() / errors.len() as f64),
            });
        }
    }
    Ok(ExperimentResult {
        config: cfg.clone(),
        records,
        cells,
        diagnostics,
    })
}

/// 17 significant digits, enough to reload the exact `f64`.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(format_float).unwrap_or_default()
}

/// Long-form CSV, one row per (scheme, epsilon, trial).
pub fn write_csv<W: Write>(result: &ExperimentResult, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "scheme", "epsilon", "gamma", "range_lo", "range_hi", "trial", "estimate", "sq_error",
    ])?;
    for r in &result.records {
        out.write_record([
            r.scheme.as_str().to_owned(),
            format_float(r.epsilon),
            format_float(r.gamma),
            opt(r.range_lo),
            opt(r.range_hi),
            r.trial.to_string(),
            opt(r.estimate),
            opt(r.sq_error),
        ])?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Serialize)]
struct Summary<'a> {
    config: &'a ExperimentConfig,
    cells: &'a [CellSummary],
    failures: Vec<Failure<'a>>,
    diagnostics: &'a [TrialDiagnostics],
}

#[derive(Serialize)]
struct Failure<'a> {
    scheme: Scheme,
    epsilon: f64,
    trial: usize,
    error: &'a str,
}

/// Per-cell MSE, failures and per-trial diagnostics as pretty JSON.
pub fn write_summary<W: Write>(result: &ExperimentResult, w: W) -> Result<()> {
    let failures = result
        .records
        .iter()
        .filter_map(|r| {
            r.error.as_deref().map(|error| Failure {
                scheme: r.scheme,
                epsilon: r.epsilon,
                trial: r.trial,
                error,
            })
        })
        .collect();
    let summary = Summary {
        config: &result.config,
        cells: &result.cells,
        failures,
        diagnostics: &result.diagnostics,
    };
    serde_json::to_writer_pretty(w, &summary)?;
    Ok(())
}

/// JSON summary path that accompanies a CSV path.
pub fn summary_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Writes `csv_path` and its JSON summary.
pub fn write_outputs(result: &ExperimentResult, csv_path: &Path) -> Result<PathBuf> {
    let json_path = summary_path(csv_path);
    let mut csv_buf = Vec::new();
    write_csv(result, &mut csv_buf)?;
    fs::write(csv_path, csv_buf).map_err(|e| Error::io(csv_path, e))?;
    let mut json_buf = Vec::new();
    write_summary(result, &mut json_buf)?;
    json_buf.push(b'\n');
    fs::write(&json_path, json_buf).map_err(|e| Error::io(&json_path, e))?;
    Ok(json_path)
}
