//! Group-association audits over static word embeddings.
//!
//! The crate covers the full quantitative pipeline of an embedding audit:
//! loading GloVe / FastText text files, mean-cosine association scans,
//! single-category WEAT effect sizes with exact or sampled permutation
//! p-values, intersection across several reference groups, k-means with
//! silhouette-based model selection, trait-rating correlation and tallies
//! of human-coded language-model continuations.
//!
//! Numeric containers are generic over [`Scalar`] (`f32` or `f64`); all
//! statistics accumulate in `f64` regardless of the storage type.

pub mod association;
pub mod cluster;
pub mod config;
pub mod embedding;
mod error;
pub mod manifest;
pub mod pca;
pub mod protocol;
pub mod scalar;
pub mod scweat;
pub mod survey;
pub mod synthetic;

pub use association::{cosine, group_association, top_k_associated, AssociationScore, ScanResult};
pub use cluster::{kmeans, select_k_cluster, silhouette, ClusterReport, KMeansOptions, VadLexicon};
pub use config::{AuditConfig, PermutationMode, WordGroup};
pub use embedding::{parse_embedding_text, EmbeddingFormat, EmbeddingMatrix, LoadSummary, VocabEntry};
pub use error::{Error, Result};
pub use scalar::Scalar;
pub use scweat::{
    scweat_effect, scweat_pvalue, select_top_frequent, unique_association_scan, PValue, ScWeatResult,
    UniqueAssociationSet,
};
pub use survey::{pearson, tally_codes, trait_alignment, CodeStats, Correlation, Orientation};

/// Embedding matrix with 32-bit storage, the default for published vector files.
pub type Embeddings = EmbeddingMatrix<f32>;
/// Embedding matrix with 64-bit storage.
pub type Embeddings64 = EmbeddingMatrix<f64>;
