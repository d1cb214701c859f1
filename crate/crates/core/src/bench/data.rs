use std::fs::File;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mech::{normalize_dataset, Dataset};

/// A CSV column selected by header name or zero-based index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Column {
    Index(usize),
    Name(String),
}

impl std::str::FromStr for Column {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(s.parse()
            .map(Column::Index)
            .unwrap_or_else(|_| Column::Name(s.to_owned())))
    }
}

impl std::fmt::Display for Column {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Column::Index(i) => write!(f, "{i}"),
            Column::Name(n) => f.write_str(n),
        }
    }
}

/// `n` i.i.d. Beta(a, b) draws, min-max normalised onto `[-1, 1]`.
pub fn gen_beta(a: f64, b: f64, n: usize, seed: u64) -> Result<Dataset> {
    let dist = Beta::new(a, b).map_err(|e| Error::Config(format!("beta({a}, {b}): {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..n).map(|_| dist.sample(&mut rng)).collect();
    normalize_dataset(&raw)
}

/// Reads one number per record from `column`. A header row is required when
/// the column is named and otherwise detected by the first record failing to
/// parse.
pub fn read_column(path: &Path, column: &Column) -> Result<Vec<f64>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut records = reader.records().enumerate().peekable();
    let missing = || Error::MissingColumn {
        path: path.to_owned(),
        column: column.to_string(),
    };

    let index = match column {
        Column::Name(name) => {
            let Some((_, header)) = records.next() else {
                return Err(Error::Empty("csv file"));
            };
            header?.iter().position(|h| h == name).ok_or_else(missing)?
        }
        Column::Index(i) => {
            if let Some((_, Ok(first))) = records.peek() {
                let field = first.get(*i).ok_or_else(missing)?;
                if field.parse::<f64>().is_err() {
                    records.next();
                }
            }
            *i
        }
    };

    let mut values = Vec::new();
    let mut bad_rows = 0;
    let mut first_bad = 0;
    for (row, record) in records {
        let record = record?;
        match record.get(index).and_then(|f| f.parse::<f64>().ok()) {
            Some(v) if v.is_finite() => values.push(v),
            _ => {
                if bad_rows == 0 {
                    first_bad = row + 1;
                }
                bad_rows += 1;
            }
        }
    }
    if bad_rows > 0 {
        return Err(Error::UnparsableRows {
            path: path.to_owned(),
            bad_rows,
            first_row: first_bad,
        });
    }
    Ok(values)
}

/// Loads a numeric column, drops values outside `clip`, then min-max
/// normalises onto `[-1, 1]`.
pub fn load_csv(path: &Path, column: &Column, clip: Option<[f64; 2]>) -> Result<Dataset> {
    let mut values = read_column(path, column)?;
    if let Some([lo, hi]) = clip {
        values.retain(|v| (lo..=hi).contains(v));
    }
    if values.is_empty() {
        return Err(Error::Empty("dataset after clipping"));
    }
    normalize_dataset(&values)
}
