use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::data::{gen_beta, load_csv, Column};
use crate::attack::{AttackStrategy, Bound, PoisonTemplate, TemplateDistribution};
use crate::error::{Error, Result};
use crate::mech::{Budget, Dataset};
use crate::protocol::{BaselineMode, FilterVariant, Reference, Repetition};

/// Where user values come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DatasetSource {
    /// Synthetic Beta(a, b) draws; `seed` defaults to the master seed.
    Beta {
        a: f64,
        b: f64,
        n: usize,
        #[serde(default)]
        seed: Option<u64>,
    },
    Csv {
        path: PathBuf,
        #[serde(default = "first_column")]
        column: Column,
        #[serde(default)]
        clip: Option<[f64; 2]>,
    },
}

fn first_column() -> Column {
    Column::Index(0)
}

impl DatasetSource {
    pub fn load(&self, master_seed: u64) -> Result<Dataset> {
        match self {
            DatasetSource::Beta { a, b, n, seed } => {
                gen_beta(*a, *b, *n, seed.unwrap_or(master_seed))
            }
            DatasetSource::Csv { path, column, clip } => load_csv(path, column, *clip),
        }
    }
}

impl FromStr for DatasetSource {
    type Err = Error;

    /// `beta:A,B[,N]` or `csv:PATH[#COLUMN]`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("cannot parse dataset {s:?}"));
        if let Some(rest) = s.strip_prefix("beta:") {
            let parts: Vec<&str> = rest.split(',').map(str::trim).collect();
            let num = |p: &str| p.parse::<f64>().map_err(|_| bad());
            let (a, b, n) = match parts.as_slice() {
                [a, b] => (num(a)?, num(b)?, 100_000),
                [a, b, n] => (num(a)?, num(b)?, n.parse().map_err(|_| bad())?),
                _ => return Err(bad()),
            };
            return Ok(DatasetSource::Beta {
                a,
                b,
                n,
                seed: None,
            });
        }
        if let Some(rest) = s.strip_prefix("csv:") {
            let (path, column) = match rest.rsplit_once('#') {
                Some((p, c)) => (p, c.parse().unwrap_or_else(|e| match e {})),
                None => (rest, first_column()),
            };
            if path.is_empty() {
                return Err(bad());
            }
            return Ok(DatasetSource::Csv {
                path: path.into(),
                column,
                clip: None,
            });
        }
        Err(bad())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Ostrich,
    Trimming,
    Baseline,
    DapEmf,
    DapEmfStar,
    DapCemfStar,
}

impl Scheme {
    pub const ALL: [Scheme; 6] = [
        Scheme::Ostrich,
        Scheme::Trimming,
        Scheme::Baseline,
        Scheme::DapEmf,
        Scheme::DapEmfStar,
        Scheme::DapCemfStar,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Ostrich => "ostrich",
            Scheme::Trimming => "trimming",
            Scheme::Baseline => "baseline",
            Scheme::DapEmf => "dap_emf",
            Scheme::DapEmfStar => "dap_emf_star",
            Scheme::DapCemfStar => "dap_cemf_star",
        }
    }

    pub fn filter(self) -> Option<FilterVariant> {
        match self {
            Scheme::DapEmf => Some(FilterVariant::Emf),
            Scheme::DapEmfStar => Some(FilterVariant::EmfStar),
            Scheme::DapCemfStar => Some(FilterVariant::CemfStar),
            _ => None,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|sc| sc.as_str() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown scheme {s:?}")))
    }
}

/// Full description of a Monte-Carlo experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub eps: Vec<f64>,
    #[serde(default = "default_eps0")]
    pub eps0: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_attack")]
    pub attack: AttackStrategy,
    pub schemes: Vec<Scheme>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub repetition: Repetition,
    #[serde(default)]
    pub reference: Reference,
    #[serde(default)]
    pub baseline_mode: BaselineMode,
}

fn default_eps0() -> f64 {
    1.0 / 16.0
}

fn default_gamma() -> f64 {
    0.25
}

fn default_trials() -> usize {
    20
}

/// Uniform poison on `[3C/4, C]`.
pub fn default_attack() -> AttackStrategy {
    AttackStrategy::Biased {
        template: PoisonTemplate::uniform(Bound::C(0.75), Bound::C(1.0)),
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSource::Beta {
                a: 2.0,
                b: 5.0,
                n: 100_000,
                seed: None,
            },
            eps: vec![1.0],
            eps0: default_eps0(),
            gamma: default_gamma(),
            attack: default_attack(),
            schemes: Scheme::ALL.to_vec(),
            trials: default_trials(),
            seed: 0,
            out: None,
            repetition: Repetition::default(),
            reference: Reference::default(),
            baseline_mode: BaselineMode::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::Config("scheme list is empty".into()));
        }
        if self.eps.is_empty() {
            return Err(Error::Config("epsilon list is empty".into()));
        }
        if !(0.0..0.5).contains(&self.gamma) {
            return Err(Error::Config(format!(
                "gamma {} outside [0, 0.5)",
                self.gamma
            )));
        }
        let eps0 = Budget::new(self.eps0)?;
        for &e in &self.eps {
            let e = Budget::new(e)?;
            if self.schemes.iter().any(|s| s.filter().is_some()) && eps0.epsilon() > e.epsilon() {
                return Err(Error::Config(format!(
                    "eps0 = {} exceeds eps = {}",
                    eps0.epsilon(),
                    e.epsilon()
                )));
            }
        }
        Ok(())
    }
}

/// Parses `--dist`: `uniform`, `gaussian`, `point` (at the upper bound) or
/// `point@BOUND`.
pub fn parse_distribution(s: &str, hi: Bound) -> Result<TemplateDistribution> {
    match s.trim() {
        "uniform" => Ok(TemplateDistribution::Uniform),
        "gaussian" => Ok(TemplateDistribution::Gaussian {
            mu: None,
            sigma: None,
        }),
        "point" => Ok(TemplateDistribution::Point { at: hi }),
        other => match other.strip_prefix("point@") {
            Some(at) => Ok(TemplateDistribution::Point { at: at.parse()? }),
            None => Err(Error::Config(format!("unknown distribution {s:?}"))),
        },
    }
}

/// Parses `--range LO,HI`, e.g. `3C/4,C` or `O,C/2`.
pub fn parse_range(s: &str) -> Result<(Bound, Bound)> {
    let (lo, hi) = s
        .split_once(',')
        .ok_or_else(|| Error::Config(format!("range {s:?} must be LO,HI")))?;
    Ok((lo.parse()?, hi.parse()?))
}
