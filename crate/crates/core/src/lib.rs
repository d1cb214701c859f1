//! Mean estimation under local differential privacy when a minority of
//! colluding users report poison values.
//!
//! Honest users perturb their value with the Piecewise Mechanism
//! ([`mech`]). Attackers report whatever they like ([`attack`]). The
//! collector reconstructs honest and poison histograms with an EM filter
//! ([`emf`]), uses the poison estimate to correct the mean, and combines
//! several privacy-budget groups with minimum-variance weights
//! ([`protocol`]). [`bench`] runs the Monte-Carlo experiments.

pub mod attack;
pub mod bench;
pub mod emf;
pub mod error;
pub mod mech;
pub mod protocol;

use serde::{Deserialize, Serialize};

pub use error::{Error, Result};
pub use mech::{BucketGrid, Budget, Dataset};

/// Side of the reference mean.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Side::Left => "left",
            Side::Right => "right",
        })
    }
}
