//! Quadratic and linearized Taylor models of wide two-layer networks on top of
//! frozen random-feature representations.
//!
//! The crate is organized around one pipeline: sample a frozen indicator
//! feature layer ([`features`]), whiten it by the estimated second-moment
//! matrix ([`whiten`]), train the quadratic Taylor model on the whitened
//! representation by minimizing a (2,4)-norm regularized risk to a
//! second-order stationary point ([`taylor`], [`optim`]), and compare against
//! the infinite-width tangent-kernel baseline ([`kernel`]). [`witness`] builds
//! the explicit low-norm weights that certify what the quadratic model can
//! express, [`synth`] generates the low-rank polynomial benchmark tasks, and
//! [`bench`] wires everything into reproducible experiments with CSV output.

pub mod bench;
pub mod features;
pub mod kernel;
pub mod linalg;
pub mod loss;
pub mod optim;
pub mod rng;
pub mod store;
pub mod synth;
pub mod taylor;
pub mod whiten;
pub mod witness;

pub use features::FeatureLayer;
pub use synth::PolyTarget;
pub use taylor::TaylorModel;
pub use whiten::WhitenedRep;

/// Crate-wide error type. Variants carry the failing stage by name so that
/// pipeline drivers can report where a run died.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("io failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization failure: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
