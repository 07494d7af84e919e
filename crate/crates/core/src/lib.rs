//! Flash detection and mitigation for photosensitive viewers.
//!
//! The crate is organised bottom-up:
//!
//! - [`video`]: the in-memory frame model and the FGRV1 raw container.
//! - [`color`]: sRGB to CIELAB, relative luminance and the Lab flash metric.
//! - [`oracle`]: a WCAG 2.3.1 style flash counter used as ground truth.
//! - [`synth`]: deterministic generators for the trigger and white-flash corpora.
//! - [`detector`]: logistic threshold learning, the sparse trigger array and evaluation.
//! - [`mitigation`]: adaptive darkening, temporal color smoothing and the k-level model.
//! - [`pipeline`]: the end-to-end reproduction run.

pub mod color;
pub mod detector;
pub mod error;
pub mod manifest;
pub mod mask;
pub mod mitigation;
pub mod oracle;
pub mod pipeline;
pub mod synth;
pub mod video;

pub use error::{Error, Result};
