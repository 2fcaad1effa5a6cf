//! Adversarial training of linear classifiers and two-layer ReLU networks on
//! sub-Gaussian mixture data, with margin solvers, risk evaluators, proof
//! diagnostics and experiment sweeps.

pub mod data;
pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod linear;
pub mod margin;
pub mod neural;
pub mod norms;
pub mod risk;
pub mod rng;

pub use data::{generate, Dataset, Matrix, MixtureSpec, NoiseDist};
pub use error::{Error, Result};
pub use linear::{train, Init, Reduction, StepRule, TrainConfig, TrainRecord};
pub use margin::MarginResult;
pub use neural::{PgdConfig, TwoLayerNet};
pub use norms::{Exponent, PerturbationModel};
pub use risk::{RiskMethod, RiskReport};
