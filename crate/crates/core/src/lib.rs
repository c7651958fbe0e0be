//! Multi-layer convolutional sparse coding.
//!
//! A signal `x` is modeled as a chain of sparse convolutional syntheses:
//! `x = D1 g1`, `g1 = D2 g2`, ..., `g_{K-1} = DK gK`, where each `Di` is a
//! banded circulant dictionary built from a small bank of local filters. The
//! crate provides the dictionary operators, forward (thresholding) and
//! iterative (shrinkage) pursuit algorithms that estimate the `gi` from `x`,
//! recovery guarantees for those algorithms in terms of local sparsity and
//! coherence, and a generator for synthetic model signals.

pub mod dict;
pub mod error;
pub mod generate;
pub mod io;
pub mod pursuit;
pub mod signal;
pub mod theory;
pub mod threshold;

pub use error::{Error, Result};
pub use signal::{LayerGeometry, LayeredVector};
