//! Histogram reconstruction and attacker-feature probing.

mod em;
mod features;
mod transform;

pub use em::{
    cemf_star, constrained_m_step, default_suppress_threshold, emf, emf_star, emf_star_suppressed,
    log_likelihood, EmConfig, EmOutcome, HistogramPair, ObservedCounts,
};
pub(crate) use features::poison_mean_of;
pub use features::{
    estimate_features, init_o_prime, poison_mean, probe_side, ByzantineFeatures, SideProbe,
};
pub use transform::{build_transform, build_transform_split, split_at, TransformMatrix};
