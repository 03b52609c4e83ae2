//! Query-aware visual token selection and spatio-temporal enhancement for
//! multi-view, multi-frame driving scenes.
//!
//! The crate takes per-patch image tokens from several cameras, keeps the
//! ones most relevant to a text query, compresses them in groups, and
//! refines the survivors with cross-attention over lower-resolution
//! spatial and temporal context. Encoders are deterministic mocks so every
//! stage can be checked exactly.

pub mod embfile;
pub mod encoders;
pub mod enhance;
pub mod error;
pub mod gradcheck;
pub mod grid;
pub mod hash;
pub mod kernels;
pub mod oracle;
pub mod pipeline;
pub mod scene;
pub mod selection;
pub mod sweep;
pub mod tape;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
pub use pipeline::{budget, Pipeline, PipelineConfig, PipelineReport, SelectionMask};
pub use scene::SceneSpec;
pub use tensor::{Scalar, Tensor};
