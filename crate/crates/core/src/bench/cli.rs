use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::config::{parse_distribution, parse_range, DatasetSource, ExperimentConfig, Scheme};
use super::data::{read_column, Column};
use super::runner::{format_float, run_experiment, write_outputs};
use crate::attack::{
    gen_gba, reduce_gba_to_bba, AttackStrategy, Bound, PoisonTemplate, TemplateDistribution,
};
use crate::emf::{
    build_transform, estimate_features, poison_mean, probe_side, EmConfig, ObservedCounts,
};
use crate::error::{Error, Result};
use crate::mech::{BucketGrid, Budget};
use crate::protocol::dap_plan;
use crate::Side;

#[derive(Debug, Parser)]
#[command(
    name = "ldp-dap",
    version,
    about = "Poisoning-robust LDP mean estimation simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a Monte-Carlo experiment from a config file and/or flags.
    Simulate(SimulateArgs),
    /// Run the side probe and EM filter on a CSV of perturbed reports.
    Probe(ProbeArgs),
    /// Generate a two-sided attack and rewrite it as a one-sided one.
    Reduce(ReduceArgs),
    /// Print the group plan for a budget pair.
    Plan(PlanArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// JSON experiment config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `beta:A,B[,N]` or `csv:PATH[#COLUMN]`.
    #[arg(long)]
    dataset: Option<String>,
    /// Drop dataset values outside `LO,HI` before normalising (csv only).
    #[arg(long, value_delimiter = ',', num_args = 2)]
    clip: Option<Vec<f64>>,
    /// Comma-separated total budgets.
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    #[arg(long)]
    eps0: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Poison range `LO,HI` in terms of `C` and `O`, e.g. `3C/4,C`.
    #[arg(long, allow_hyphen_values = true)]
    range: Option<String>,
    /// `uniform`, `gaussian`, `point` or `point@BOUND`.
    #[arg(long)]
    dist: Option<String>,
    /// Comma-separated subset of ostrich, trimming, baseline, dap_emf,
    /// dap_emf_star, dap_cemf_star.
    #[arg(long, value_delimiter = ',')]
    schemes: Option<Vec<String>>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV; the JSON summary goes next to it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ProbeArgs {
    /// CSV with one perturbed report per row.
    #[arg(long)]
    input: PathBuf,
    /// Column name or zero-based index.
    #[arg(long, default_value = "0")]
    column: String,
    /// Budget the reports were perturbed with.
    #[arg(long)]
    eps: f64,
}

#[derive(Debug, Args)]
struct ReduceArgs {
    #[arg(long, default_value_t = 1.0)]
    eps: f64,
    /// Reference mean `O`.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    o: f64,
    /// Attackers left of `O`, uniform on `[-C, O]`.
    #[arg(long, default_value_t = 10)]
    left: usize,
    /// Attackers right of `O`, uniform on `[O, C]`.
    #[arg(long, default_value_t = 30)]
    right: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct PlanArgs {
    #[arg(long)]
    eps: f64,
    #[arg(long)]
    eps0: f64,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Parses `argv`, runs the subcommand and returns the process exit code.
/// Failures print one JSON error line to stderr.
pub fn cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let parsed = match Cli::try_parse_from(argv) {
        Ok(p) => p,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let result = match parsed.command {
        Command::Simulate(a) => simulate(a, &mut out),
        Command::Probe(a) => probe(a, &mut out),
        Command::Reduce(a) => reduce(a, &mut out),
        Command::Plan(a) => plan(a, &mut out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            1
        }
    }
}

fn stdout_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

fn build_config(a: SimulateArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &a.config {
        Some(path) => ExperimentConfig::from_json_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(d) = &a.dataset {
        cfg.dataset = d.parse()?;
    }
    if let Some(clip) = a.clip {
        match &mut cfg.dataset {
            DatasetSource::Csv { clip: c, .. } => *c = Some([clip[0], clip[1]]),
            DatasetSource::Beta { .. } => {
                return Err(Error::Config("--clip applies to csv datasets only".into()))
            }
        }
    }
    if let Some(eps) = a.eps {
        cfg.eps = eps;
    }
    if let Some(eps0) = a.eps0 {
        cfg.eps0 = eps0;
    }
    if let Some(gamma) = a.gamma {
        cfg.gamma = gamma;
    }
    if a.range.is_some() || a.dist.is_some() {
        let (lo, hi) = match &a.range {
            Some(r) => parse_range(r)?,
            None => match cfg.attack {
                AttackStrategy::Biased { template } => (template.lo, template.hi),
                _ => (Bound::C(0.75), Bound::C(1.0)),
            },
        };
        let distribution = match &a.dist {
            Some(d) => parse_distribution(d, hi)?,
            None => match cfg.attack {
                AttackStrategy::Biased { template } => template.distribution,
                _ => TemplateDistribution::Uniform,
            },
        };
        cfg.attack = AttackStrategy::Biased {
            template: PoisonTemplate {
                lo,
                hi,
                distribution,
            },
        };
    }
    if let Some(schemes) = a.schemes {
        cfg.schemes = schemes.iter().map(|s| s.parse()).collect::<Result<_>>()?;
    }
    if let Some(trials) = a.trials {
        cfg.trials = trials;
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if a.out.is_some() {
        cfg.out = a.out;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn simulate(a: SimulateArgs, out: &mut impl Write) -> Result<()> {
    let cfg = build_config(a)?;
    let result = run_experiment(&cfg)?;
    writeln!(
        out,
        "{:<14} {:>10} {:>6} {:>8} {:>24}",
        "scheme", "epsilon", "trials", "failures", "mse"
    )
    .map_err(stdout_err)?;
    for c in &result.cells {
        let mse = c.mse.map(format_float).unwrap_or_else(|| "-".into());
        writeln!(
            out,
            "{:<14} {:>10} {:>6} {:>8} {:>24}",
            c.scheme, c.epsilon, c.trials, c.failures, mse
        )
        .map_err(stdout_err)?;
    }
    if let Some(path) = &cfg.out {
        let json_path = write_outputs(&result, path)?;
        writeln!(out, "wrote {} and {}", path.display(), json_path.display())
            .map_err(stdout_err)?;
    }
    Ok(())
}

fn probe(a: ProbeArgs, out: &mut impl Write) -> Result<()> {
    let budget = Budget::new(a.eps)?;
    let column: Column = a.column.parse().unwrap_or_else(|e| match e {});
    let reports = read_column(&a.input, &column)?;
    if reports.is_empty() {
        return Err(Error::Empty("reports"));
    }
    let domain = budget.perturbed_domain();
    for &r in &reports {
        domain.check(r)?;
    }
    let grid = BucketGrid::for_reports(reports.len(), budget);
    let counts = ObservedCounts::from_reports(&reports, &grid);
    let probe = probe_side(
        &build_transform(&grid, Side::Left),
        &build_transform(&grid, Side::Right),
        &counts,
        &EmConfig::for_budget(budget).lenient(),
    )?;
    let chosen = probe.chosen();
    let features = estimate_features(&chosen.pair, probe.side, &counts);
    let mu = match poison_mean(&chosen.pair, &grid) {
        Ok(mu) => Some(mu),
        Err(Error::NoPoisonMass) => None,
        Err(e) => return Err(e),
    };
    let report = json!({
        "reports": reports.len(),
        "d": grid.d(),
        "d_out": grid.d_out(),
        "side": probe.side,
        "var_left": probe.var_left,
        "var_right": probe.var_right,
        "gamma_hat": features.gamma_hat,
        "m_hat": features.m_hat,
        "poison_mean": mu,
        "iterations": chosen.iterations,
        "converged": chosen.converged,
    });
    writeln!(out, "{}", serde_json::to_string_pretty(&report)?).map_err(stdout_err)?;
    Ok(())
}

fn reduce(a: ReduceArgs, out: &mut impl Write) -> Result<()> {
    let budget = Budget::new(a.eps)?;
    let left =
        PoisonTemplate::uniform(Bound::C(-1.0), Bound::TrueMean).resolve(budget, a.o, a.o)?;
    let right =
        PoisonTemplate::uniform(Bound::TrueMean, Bound::C(1.0)).resolve(budget, a.o, a.o)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let trace = gen_gba(&left, &right, a.left, a.right, &mut rng)?;
    let reduced = reduce_gba_to_bba(&trace, a.o, budget)?;
    let sides = |t: &crate::attack::AttackTrace| {
        let l = t.poison_values.iter().filter(|&&v| v < a.o).count();
        let r = t.poison_values.iter().filter(|&&v| v > a.o).count();
        json!({
            "len": t.len(),
            "left": l,
            "right": r,
            "deviation_sum": t.deviation_sum(),
            "one_sided": t.is_one_sided(),
        })
    };
    let report = json!({
        "epsilon": a.eps,
        "o": a.o,
        "original": sides(&trace),
        "reduced": sides(&reduced),
        "deviation_gap": (trace.deviation_sum() - reduced.deviation_sum()).abs(),
    });
    writeln!(out, "{}", serde_json::to_string_pretty(&report)?).map_err(stdout_err)?;
    Ok(())
}

fn plan(a: PlanArgs, out: &mut impl Write) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let plan = dap_plan(a.n, Budget::new(a.eps)?, Budget::new(a.eps0)?, &mut rng)?;
    let mut w = || -> std::io::Result<()> {
        writeln!(out, "h={}", plan.h())?;
        writeln!(out, "group\tepsilon\tusers\treports_per_user\treports")?;
        for t in 0..plan.h() {
            writeln!(
                out,
                "{t}\t{}\t{}\t{}\t{}",
                plan.budgets()[t].epsilon(),
                plan.group_sizes()[t],
                plan.reports_per_user()[t],
                plan.reports_in(t)
            )?;
        }
        Ok(())
    };
    w().map_err(stdout_err)
}

/// Scheme names accepted by `--schemes`.
pub fn scheme_names() -> Vec<&'static str> {
    Scheme::ALL.iter().map(|s| s.as_str()).collect()
}
