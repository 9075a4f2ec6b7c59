//! Uplink in-band interference detection: synthetic PUSCH slots with
//! controlled interference, the 183,484-byte feature record, a native CNN
//! inference engine, and the surrounding dataset, pipeline and evaluation
//! plumbing.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod grid;
pub mod labeling;
pub mod model;
pub mod rng;
pub mod runtime;
pub mod synth;

pub use error::{Error, Result};
pub use features::{FeatureRecord, ScalarFeatures};
pub use half::f16;
pub use labeling::{Label, TrafficLevel};
pub use model::{ModelConfig, Prediction, Session, WeightBundle};
