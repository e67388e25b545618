//! Toolkit for measuring how incrementally injected context drives
//! hallucination in language models.
//!
//! The crate consumes recorded model traces (answers, final-layer hidden
//! states and attention rows per round of context injection) and provides:
//!
//! - [`titration`]: planning of the two-track, round-by-round injection prompts;
//! - [`detect`]: the semantic / factual-extension / NLI consensus detector,
//!   hallucination rates and lexical quality metrics;
//! - [`drift`]: cosine, entropy, Jensen–Shannon and Spearman drift against
//!   the zero-context baseline;
//! - [`analysis`]: attention-locking detection, plateaus, variance profiles
//!   and the ΔCos / entropy-slope correlation;
//! - [`report`]: CSV/JSON report emission and re-parsing.
//!
//! Batch entry points fan out per question with rayon when the `parallel`
//! feature is enabled (the default) and run sequentially otherwise.

pub mod analysis;
pub mod detect;
pub mod drift;
pub mod error;
pub mod exec;
pub mod fixtures;
pub mod pipeline;
pub mod report;
pub mod titration;
pub mod trace;

pub use error::{Error, Result};
