//! Core of `labelformer`: a small causal transformer trained on algorithmic
//! sequence-rearrangement tasks, with order information carried by random
//! ascending labels instead of absolute positions.
//!
//! The crate is `no_std` (with `alloc`) when the default `std` feature is
//! disabled. Everything that touches the filesystem lives in the companion
//! `labelformer` crate.
//!
//! Layout:
//! - [`tensor`], [`autodiff`], [`optim`]: dense f64 tensors, a gradient tape
//!   and Adam.
//! - [`tasks`], [`data`], [`tokens`]: the item pool, the six task oracles,
//!   dataset generation and token streams.
//! - [`model`]: embeddings, future-masked attention with ablation hooks and
//!   the readout heads.
//! - [`train`], [`eval`]: teacher-forced training and the metric suite.
//! - [`analysis`]: attention maps, embedding geometry, ablation sweeps and
//!   representation PCA.

#![cfg_attr(not(feature = "std"), no_std)]
#![deny(unsafe_op_in_unsafe_fn)]

extern crate alloc;

pub mod analysis;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod linalg;
pub mod math;
pub mod model;
pub mod optim;
pub mod tasks;
pub mod tensor;
pub mod tokens;
pub mod train;

pub use error::{Error, Result};
