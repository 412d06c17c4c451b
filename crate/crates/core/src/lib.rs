//! Counting-constrained mask labelling and confidence-free evaluation.
//!
//! Region proposals, per-image category counts and embeddings come from
//! external models. This crate turns them into labelled detections by solving
//! an exact assignment problem and scores the result against ground truth.

pub mod coco;
pub mod embeddings;
pub mod error;
pub mod geometry;
pub mod mask;
pub mod matcher;
pub mod metrics;
pub mod model;
pub mod scalar;
pub mod similarity;

pub use error::{Error, Result};
pub use geometry::{box_iou, crop_region, BoundingBox};
pub use mask::{mask_iou, rle_encode, BinaryMask};
pub use matcher::{
    brute_force_matching, solve_matching, validate_assignment, Assignment, MatchingProblem, Regime, Violation,
};
pub use model::{CountPrediction, Detection, MaskProposal};
pub use scalar::Scalar;
pub use similarity::{
    cosine_matrix, match_generated_categories, normalize, render_prompts, CategoryPrompt, EmbeddingProvider,
    EmbeddingVector, EquivalenceMap, SimilarityMatrix,
};

pub type Box32 = BoundingBox<f32>;
pub type Box64 = BoundingBox<f64>;
pub type Embedding32 = EmbeddingVector<f32>;
pub type Embedding64 = EmbeddingVector<f64>;
pub type Similarity32 = SimilarityMatrix<f32>;
pub type Similarity64 = SimilarityMatrix<f64>;
pub type Problem32 = MatchingProblem<f32>;
pub type Problem64 = MatchingProblem<f64>;
pub type Assignment32 = Assignment<f32>;
pub type Assignment64 = Assignment<f64>;
