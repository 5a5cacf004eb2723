//! Soft-sensing transformer engine: tensors, reverse-mode autodiff, a causal
//! decoder backbone with an AVS window encoder, parameter-efficient tuning
//! (LoRA and bottleneck adapters), task heads, prompt encoding, metrics and a
//! seeded synthetic process generator.
//!
//! The crate is `no_std` and only needs `alloc`.

#![no_std]

extern crate alloc;

pub mod adam;
pub mod adapters;
pub mod backbone;
pub mod config;
pub mod datagen;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod params;
pub mod peft;
pub mod prompts;
pub mod tasks;
pub mod tensor;

pub use config::{AdapterConfig, BackboneConfig, FreezePolicy, LoraConfig, ModelConfig};
pub use encoder::{EncoderConfig, EncoderKind, Series, WindowSample};
pub use error::{Error, Result};
pub use graph::{Graph, SeqLayout, Var};
pub use model::{Batch, Model};
pub use params::{ParamCounts, ParamStore};
pub use tensor::Tensor;
