//! The detection network: frame-wise spatial encoder, per-second intrinsic
//! temporal encoder, (bi-directional) GRU, per-second classifier, and the
//! subject-pair discriminator used for adversarial training.

mod adversary;
mod config;
mod network;
mod params;

pub use adversary::{discriminator_features, AdversarialObjective, loss_jc, loss_jd};
pub use config::{AstnConfig, ConvSpec, DiscriminatorLevels, DiscriminatorVariant};
pub use network::{Astn, Dense, GruParams, Layout, TrialOutput, TrialVars};
pub use params::{fan_in_uniform, seeded_rng, Bound, Param, ParamStore, Partition};
