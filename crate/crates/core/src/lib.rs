//! Fully associative patch-based 1-to-N signature matching.
//!
//! A signature is a set of per-patch feature vectors with occlusion flags.
//! Matching a probe against a gallery runs in three steps:
//!
//! 1. [`local::local_match`]: each patch independently picks its best gallery
//!    identity by cosine score, giving identity and score matrices `P`, `Z`.
//! 2. [`associative`]: a ridge (or kernel ridge) model trained on labeled
//!    probes maps every patch's local score to every patch's global score
//!    `Y`; patches whose global score falls below the threshold `t` are
//!    rejected.
//! 3. [`combiner`]: surviving patch identities vote with learned sparse,
//!    non-negative patch weights, together with the holistic baseline match.
//!
//! [`evaluation`] holds rank-1 measurement, threshold sweeps and the
//! Friedman / Bonferroni-Dunn comparison of methods; [`synth`] generates
//! seeded synthetic galleries; [`cli`] is the `fapsm` command.

pub mod associative;
pub mod cli;
pub mod combiner;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod local;
pub mod pipeline;
pub mod seeding;
pub mod signature;
pub mod store;
pub mod synth;

pub use associative::{AssociativeModel, GlobalMatchResult, KernelSpec};
pub use combiner::PatchWeights;
pub use error::{FapsmError, Result};
pub use local::LocalMatchResult;
pub use pipeline::{Identification, PipelineConfig, TrainedMatcher};
pub use signature::{Gallery, GalleryEntry, Identity, ProbeSet, Signature};
