//! Closed-loop dynamic correction for diffusion action-chunk policies,
//! end to end on a planar block-pushing task.
//!
//! The crate trains a state-conditioned diffusion policy that predicts
//! action chunks, a fast image-based dynamic feature encoder, and an
//! asymmetric action VAE; at run time it injects per-step dynamic features
//! into the frozen VAE decoder to correct actions inside each chunk without
//! retraining anything. A deterministic pushing environment, a scripted
//! demonstration expert, and an evaluation harness (success tables, latency
//! benchmark, ablations) round out the pipeline.
//!
//! Everything is pure-CPU `f64` on a small hand-rolled autodiff tape
//! ([`tensor`]), so fixed seeds reproduce runs bit for bit.

pub mod checkpoint;
pub mod config;
pub mod demos;
pub mod diffusion;
pub mod encoder;
pub mod env;
pub mod eval;
pub mod kernels;
pub mod nn;
pub mod rng;
pub mod runtime;
pub mod tensor;
pub mod vae;
