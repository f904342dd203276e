//! # veilnn
//!
//! Privacy-preserving split execution for small neural networks.
//!
//! A trusted coordinator holds the data and the secrets; a pool of untrusted
//! workers does the heavy bilinear arithmetic (dense matvecs, convolutions)
//! on *masked* inputs only. Per virtual batch of `k` samples the coordinator:
//!
//! 1. draws a fresh secret coefficient matrix and `m` large noise tensors,
//! 2. hands each worker one masked linear combination of samples and noise,
//! 3. recovers the exact (up to floating-point) unmasked results by inverting
//!    the combination, and
//! 4. cross-checks redundant combinations to detect tampered worker replies.
//!
//! The same coefficients are reused for the weight-gradient pass, so one
//! masking round covers a full forward/backward step. A separate analyzer
//! bounds what a worker (or a colluding group) can learn from its share in
//! mutual-information terms, and an attack module measures reconstruction
//! error empirically against that bound.
//!
//! ## Start here: runnable examples
//!
//! | example | shows |
//! |---|---|
//! | `scheme_tour` | masking coefficients, encode/decode round trips, exactness |
//! | `train_masked` | full training run on workers vs. the plain baseline |
//! | `masked_inference` | forward-only split execution with integrity checks |
//! | `privacy_bounds` | leakage bounds vs. noise power, oracle cross-check |
//! | `integrity_detection` | catching a tampering worker in the act |
//! | `collusion_attack` | least-squares reconstruction by colluding workers |
//!
//! Run one with `cargo run --example scheme_tour`. The thin `veilnn` binary
//! wraps the same library calls behind `train` / `infer` / `analyze-privacy` /
//! `attack-demo` / `verify-integrity` / `selftest` subcommands for scripted
//! use.

pub mod attack;
pub mod coding;
pub mod config;
pub mod dataset;
pub mod engine;
pub mod error;
pub mod jsonfmt;
pub mod nn;
pub mod privacy;
pub mod protocol;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Precision, Tensor};
