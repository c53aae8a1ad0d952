pub mod composition;
pub mod evalreport;
pub mod model;
pub mod protocol;
pub mod scalar;
pub mod taskgen;

pub use scalar::Scalar;

/// Single-precision parameters used for training and inference.
pub type LmParams32 = model::LmParams<f32>;
/// Double-precision parameters used for gradient checks.
pub type LmParams64 = model::LmParams<f64>;
pub type PrefixBank32 = composition::PrefixBank<f32>;
pub type PrefixBank64 = composition::PrefixBank<f64>;
