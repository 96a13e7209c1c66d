//! Simulation-trained neural surrogates for continuous-review (s, S)
//! lost-sales inventory systems with phase-type demand and lead times.
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod jsonl;
pub mod metrics;
pub mod nn;
pub mod optimize;
pub mod phdist;
pub mod rng;
pub mod simulate;

pub use dataset::{FeatureLayout, Record, RecordView};
pub use error::{Error, Result};
pub use metrics::{EvalReport, GroupReport};
pub use nn::{predict, MlpModel, ModelBundle, PredictionBundle, Query, Target, TrainConfig};
pub use optimize::{Constraint, CostSpec, GridResult};
pub use phdist::{MomentVector, PhaseTypeDist};
pub use simulate::{Labels, SimConfig, SystemInstance};
