//! User-level differentially private stochastic convex optimization.
//!
//! The crate is organised bottom-up:
//!
//! * [`noise`] and [`data`]: seeded random streams, noise samplers, datasets and budgets.
//! * [`sparse_vector`]: streaming AboveThreshold.
//! * [`concentrated_mean`]: adaptive private mean estimation with outlier removal.
//! * [`smoothing`] and [`losses`]: randomized smoothing and convex loss oracles.
//! * [`optimizer`]: user-level DP-SGD, localization for strongly convex losses,
//!   and a non-private baseline.
//! * [`verify`]: executable property checks for the mechanisms above.
//! * [`harness`]: experiment configuration, trial execution and report output.

pub mod concentrated_mean;
pub mod data;
pub mod error;
pub mod harness;
pub mod losses;
pub mod noise;
pub mod optimizer;
pub mod smoothing;
pub mod sparse_vector;
pub mod stats;
pub mod verify;

pub use concentrated_mean::{MeanSession, QueryResult};
pub use data::{PrivacyBudget, Shape, UserDataset, UserSource};
pub use error::{Error, Result};
pub use losses::{Ball, Loss, NormLoss, PopulationSpec, QuadraticLoss};
pub use noise::{NoiseHook, RngStream};
pub use optimizer::{default_config, dpsgd, localized_dpsgd, nonprivate_sgd, SgdConfig};
pub use sparse_vector::{AboveThreshold, Answer};
