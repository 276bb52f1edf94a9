//! Volumetric lesion quantification toolkit.
//!
//! The pipeline: smooth-ROI preprocessing ([`volgrid`]), a 3D regression CNN
//! built on a small reverse-mode autodiff engine ([`tensor`], [`regnet`]),
//! conventional baseline quantifiers ([`baselines`]), interpretability tools
//! ([`interpret`]) and agreement statistics ([`stats`]). Synthetic scans with
//! known lesion counts come from [`phantom`].

pub mod baselines;
pub mod error;
pub mod interpret;
pub mod phantom;
pub mod regnet;
pub mod stats;
pub mod tensor;
pub mod volgrid;

pub use error::{Error, Result};
pub use tensor::{LossKind, Tensor};
pub use volgrid::{MaskVolume, Volume};
