//! Spectrum-conditioned 3D molecule generation: numerics, chemistry
//! perception, spectra handling, equivariant networks and the training and
//! sampling pipeline.

// Range checks are written as `!(x > 0.0)` so that NaN fails them. The other
// suggestions need a newer toolchain than `rust-version`.
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::unnecessary_map_or,
    clippy::manual_is_multiple_of,
    clippy::manual_repeat_n
)]

pub mod autodiff;
pub mod canon;
pub mod checkpoint;
pub mod chem;
pub mod diffusion;
pub mod egnn;
pub mod encoder;
pub mod error;
pub mod fingerprint;
pub mod latent;
pub mod nn;
pub mod optim;
pub mod params;
pub mod pipeline;
pub mod screen;
pub mod smarts;
pub mod spectra;
pub mod tensor;

pub use autodiff::{grad_check, GradCheckReport, Gradients, Tape, Var};
pub use error::{Error, Result};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;
