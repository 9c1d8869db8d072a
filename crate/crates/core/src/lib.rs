//! Core library for mushroom image recognition with channel attention and
//! genetic-distance representation learning.
//!
//! The crate is `no_std` + `alloc`: everything here is pure computation on
//! in-memory buffers. File access, the CLI, and run orchestration live in the
//! companion `mushroomnet-cli` crate. What this crate provides:
//!
//! - [`tensor`]: a dense tensor with reverse-mode automatic differentiation
//!   covering the convolution / pooling / activation / loss set the network
//!   needs, in `f32` or `f64`.
//! - [`attention`]: squeeze-and-excitation and efficient (1-D convolutional)
//!   channel attention blocks, plus the eight placement strategies.
//! - [`backbone`]: the bneck backbone and the assembled attention-augmented
//!   network with a width multiplier for desk-scale runs.
//! - [`genetics`]: aligned-sequence ingestion and pairwise genetic distances
//!   (p-distance, JC69, TN93) with bootstrap uncertainty.
//! - [`embed`]: genetic-distance regression targets, head loss variants, and
//!   label-embedding classification.
//! - [`train`]: dataset splitting, augmentation, Adam, staged training with
//!   layer freezing, and a procedural synthetic dataset.
//! - [`eval`]: confusion matrices, per-class metrics, ROC/AUC, report tables.
//! - [`interpret`]: gradient-weighted class activation heatmaps, overlays,
//!   and PPM/PGM image codecs.
//! - [`checkpoint`]: a self-describing named-array container format.
//! - [`gradcheck`]: central finite-difference gradient verification.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod attention;
pub mod backbone;
pub mod checkpoint;
pub mod element;
pub mod embed;
pub mod eval;
pub mod genetics;
pub mod gradcheck;
pub mod interpret;
pub mod tensor;
pub mod train;

pub use element::Element;
pub use tensor::Tensor;
