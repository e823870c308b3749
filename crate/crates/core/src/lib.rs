//! Learnable local-region formation for hierarchical point-cloud
//! classification.
//!
//! The crate contains a small dense-tensor library with tape-based reverse
//! mode differentiation ([`tensor`], [`autodiff`], [`param`], [`nn`]), the
//! spatial queries used to form regions ([`geometry`]), the center shift
//! ([`csm`]) and radius update ([`rum`]) modules, the regularised training
//! objective ([`loss`]), a two-level set abstraction classifier
//! ([`abstraction`]) and the data, training and evaluation harness
//! ([`harness`]).

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod abstraction;
pub mod autodiff;
pub mod checkpoint;
pub mod csm;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod loss;
pub mod nn;
pub mod param;
pub mod rum;
pub mod tensor;

pub use autodiff::{Tape, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;
