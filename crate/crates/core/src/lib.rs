//! Speaker-embedding engine core.
//!
//! Everything here is allocation-only (`alloc`), with no file or thread IO:
//! a small reverse-mode autodiff engine, diagonal GMM-UBM training and
//! Baum-Welch statistics, a total-variability i-vector extractor, the x-vector
//! network family (TDNN and multi-scale dilated frame layers; statistics,
//! self-attentive, i-vector-attentive and Baum-Welch-attentive pooling), the
//! LDA/whitening/PLDA back end with EER and minDCF, and a deterministic
//! synthetic speaker corpus.
//!
//! File formats, the acoustic front end and the command-line pipeline live in
//! the `xvecforge` crate.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod backend;
pub mod embedder;
pub mod error;
pub mod features;
pub mod gmm;
pub mod ivector;
mod linalg;
pub mod rng;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use features::FeatureMatrix;
pub use tensor::Tensor;
