//! Privacy-utility trade-off optimization for additive-noise masking of
//! sensor readings.
//!
//! The pipeline mirrors the modules below: privacy settings are generated by
//! grid search ([`mechanisms`]), evaluated on user subsets of a dataset
//! ([`sweep`]) with local and global error statistics ([`metrics`]), filtered
//! and selected per privacy bin ([`optimizer`]), and finally mixed across
//! users in heterogeneous simulations ([`hetero`]). Dataset generation and
//! every CSV artifact live in [`io`].

pub mod domain;
pub mod error;
pub mod hetero;
pub mod io;
pub mod mechanisms;
pub mod metrics;
pub mod optimizer;
pub mod sweep;

pub use domain::{derive_seed, Mechanism, NoiseRng, PrivacySetting, RngSeedPlan, SensorDataset};
pub use error::{Error, Result};
