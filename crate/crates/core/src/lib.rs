pub mod classifier;
pub mod corpus;
pub mod env;
pub mod error;
pub mod grader;
pub mod nn;
pub mod policy;
pub mod scalar;
pub mod trainer;
pub mod tuple;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type QNetworkF32 = policy::QNetwork<f32>;
pub type QNetworkF64 = policy::QNetwork<f64>;
pub type FeedbackClassifierF32 = classifier::FeedbackClassifier<f32>;
pub type FeedbackClassifierF64 = classifier::FeedbackClassifier<f64>;
