//! Hierarchical novelty detection over precomputed feature vectors.
//!
//! Given a taxonomy of known classes, a sample is classified either as one of
//! the known leaf classes or as a novel class attached under its closest known
//! super class. The crate provides the taxonomy algorithms, the top-down
//! confidence-calibrated cascade, the flattened Relabel and leave-one-out
//! classifiers, bias-sweep evaluation curves, hierarchical embeddings for
//! generalized zero-shot learning, file formats, and a synthetic benchmark.

pub mod dataio;
pub mod error;
pub mod eval;
pub mod fixtures;
pub mod flatten;
pub mod gzsl;
pub mod numcore;
pub mod selftest;
pub mod taxonomy;
pub mod topdown;

pub use dataio::FeatureSet;
pub use error::{Error, Result};
pub use eval::{AccuracyCurve, GroundTruth, Prediction, ScoredSample, Truth};
pub use flatten::{FlattenConfig, FlattenMethod, FlattenModel};
pub use numcore::{LinearHead, SgdConfig};
pub use taxonomy::{NodeId, NodeKind, NodeRecord, SubtaxonomyView, Taxonomy};
pub use topdown::{TopDownConfig, TopDownModel};

use serde::{Deserialize, Serialize};

/// Any trained model, as stored on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TrainedModel {
    TopDown(TopDownModel),
    Flatten(FlattenModel),
}
