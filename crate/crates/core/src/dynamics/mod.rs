//! Output-side dynamics of greedy decoding: per-index entropy, per-step
//! centroid geometry of hidden states, and PCA projections.

use thiserror::Error;

pub mod entropy;
pub mod geometry;
pub mod pca;

pub use entropy::{cohort_entropy_profiles, entropy_profile, shannon_entropy, EntropyProfile};
pub use geometry::{
    centroid_projection, group_centroids, pairwise_geometry, CentroidProjection, GeometryReport,
    GroupCentroids,
};
pub use pca::{pca_project, top_eigenpairs, Pca};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("distribution sums to {sum}, not 1")]
    NotNormalized { sum: f64 },
    #[error("negative probability {value} at index {index}")]
    NegativeMass { index: usize, value: f64 },
    #[error("group {0:?} has no traces")]
    EmptyGroup(String),
    #[error("empty trace set")]
    EmptyTraceSet,
    #[error("trace {0} has no step embeddings")]
    MissingEmbeddings(String),
    #[error("trace {0} has no context entropies")]
    MissingContextEntropy(String),
    #[error("need at least 2 groups at some step, found {0}")]
    InsufficientGroups(usize),
    #[error("all input vectors are identical")]
    DegenerateInput,
    #[error("dimension {dim} is smaller than the {k} requested components")]
    DimensionTooSmall { dim: usize, k: usize },
    #[error("vectors have inconsistent dimensions ({expected} vs {got})")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("need at least 2 vectors, got {0}")]
    TooFewVectors(usize),
}
