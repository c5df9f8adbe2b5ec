//! Part-based face verification under makeup: landmark-driven region crops,
//! per-region cosine scoring, logistic-regression score fusion, error-rate
//! metrics and the evaluation protocols built on them.

// `!(x > 0.0)` is how NaN gets rejected alongside non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod embedding;
pub mod fusion;
pub mod landmarks;
pub mod metrics;
pub mod protocol;
pub mod region;
pub mod synth;

pub use region::{parse_region_list, RegionTag, Strategy, UnknownRegion};

/// Any error the library can return.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Geometry(#[from] landmarks::GeometryError),
    #[error(transparent)]
    Embedding(#[from] embedding::EmbeddingError),
    #[error(transparent)]
    Provider(#[from] embedding::ProviderError),
    #[error(transparent)]
    Fusion(#[from] fusion::FusionError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error(transparent)]
    Protocol(#[from] protocol::ProtocolError),
    #[error(transparent)]
    Synth(#[from] synth::SynthError),
}
