//! Core of the PMSys pipeline.
//!
//! Text is turned into closed-vocabulary category profiles ([`lexicon`]),
//! Big Five trait scores ([`traits`]) and five-emotion vectors
//! ([`emotions`]). Response-time telemetry joined with user posts yields
//! system status labels ([`status`]), social profiles are linked to system
//! accounts ([`matching`]), and a random forest ([`model`]) predicts the
//! status from affect features. [`stats`] carries the correlation and
//! screening toolkit used for exploratory analysis.
//!
//! Data-parallel loops (tree training, cross-validation folds, per-window and
//! per-profile work) run on rayon when the default `parallel` feature is
//! enabled and fall back to plain iterators otherwise. Results are identical
//! either way.

pub mod emotions;
pub mod ingest;
pub mod lexicon;
pub mod matching;
pub mod model;
mod par;
pub mod sentiment;
pub mod stats;
pub mod status;
pub mod timeline;
pub mod traits;

pub use emotions::{Emotion, EmotionLexicon, EmotionVector};
pub use lexicon::{CategoryProfile, Lexicon, TextStats};
pub use model::{EvalReport, FeatureRow, FeatureSchema, Forest, ForestParams};
pub use status::SystemStatus;
pub use traits::{Trait, TraitVector};

/// Mixes a base seed with a stream index (splitmix64 finalizer).
///
/// Used wherever a derived, order-independent seed is needed so that parallel
/// and serial execution draw the same random streams.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
