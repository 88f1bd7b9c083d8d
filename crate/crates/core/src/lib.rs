//! Triple-domain (spatial, temporal, frequency) feature pipeline for detecting
//! moving infrared small targets in short frame windows.
//!
//! Every stage operates on the dense [`Tensor`] type: a shared per-frame
//! [`backbone`], the memory-enhanced spatial branch ([`msrm`]), temporal
//! difference encoding ([`tdem`]), Fourier amplitude/phase attention
//! ([`lgfm`]), residual compensation fusion ([`rcu`]) and an anchor-free
//! detection head ([`detect`]). Box losses live in [`loss`], evaluation in
//! [`metrics`] and synthetic data in [`synth`].

pub mod backbone;
pub mod config;
mod error;
pub mod detect;
pub mod fourier;
pub mod layers;
pub mod lgfm;
pub mod loss;
pub mod metrics;
pub mod msrm;
pub mod pipeline;
pub mod rcu;
pub mod synth;
pub mod tdem;
pub mod tensor;
pub mod weights;

pub use config::PipelineConfig;
pub use detect::BBox;
pub use error::{Error, Result};
pub use pipeline::Detector;
pub use tensor::Tensor;
pub use weights::{Params, WeightStore};
