//! Synthesis of contrastive three-turn dialogues for multimodal fine-tuning,
//! weighted per-turn supervision, dataset export and evaluation.

pub mod curation;
pub mod dataset;
pub mod domain;
pub mod eval;
pub mod gateway;
pub mod loss;
pub mod scalar;
pub mod stance;
pub mod synthesis;
pub mod templates;
pub mod text;

#[doc(hidden)]
pub mod testing;

pub use domain::{
    Category, ConceptSpec, DialogueTriplet, DialogueTurn, Phase, StructureMode, SynthesisJob, TurnWeights,
};
pub use scalar::Scalar;

/// Exact rational scalar.
pub type Rational = num_rational::Ratio<i64>;
/// Turn weights in `f64`, the representation stored in records.
pub type Weights = TurnWeights<f64>;
/// Turn weights in exact arithmetic.
pub type ExactWeights = TurnWeights<Rational>;
