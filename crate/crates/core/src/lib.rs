//! Single-network self-augmented pre-training: corpus handling, a small
//! reverse-mode autodiff engine, the transformer encoder, augmentation and
//! objectives, the trainer, FLOPs accounting and evaluation probes.

pub mod augment;
pub mod config;
pub mod corpus;
pub mod error;
pub mod flops;
pub mod model;
pub mod numerics;
pub mod objective;
pub mod probe;
pub mod rng;
pub mod strategy;
pub mod trainer;

pub use error::{Error, Result};
