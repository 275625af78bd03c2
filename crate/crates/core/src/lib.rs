//! Deep unconstrained features model with ReLU layers for two classes:
//! objective, gradients, collapse metrics, the closed-form global optimum,
//! numerical verifiers for the supporting lemmas, and a gradient-descent
//! trainer.

pub mod error;
pub mod linalg;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod oracles;
pub mod rng;
pub mod theory;
pub mod trainer;

pub use error::{Error, Result};
pub use matrix::DenseMatrix;
pub use metrics::{LayerMetrics, Metric};
pub use model::{DufmDims, DufmParams, InitScale, LossBreakdown, RegConfig};
pub use rng::Rng;
pub use theory::{OptimumReport, Regime, SpectrumPair};
pub use trainer::{AblationConfig, MetricsRecord, RunManifest, RunResult, TrainConfig};
