//! Core of an object-goal navigation agent that reads a transformer over a
//! ring-buffer memory of observed scenes and object layouts.
//!
//! Everything in this crate is pure computation over `alloc` data structures:
//! a dense tensor type with reverse-mode differentiation, a discrete indoor
//! gridworld, frozen perception encoders, the object-scene memory and its
//! temporal encoding, the masked transformer policy with its ablation
//! variants, actor-critic loss math, and SR/SPL metrics. Training
//! orchestration, file formats, and the CLI live in the companion `omt-cli`
//! crate.

#![cfg_attr(not(any(test, feature = "std")), no_std)]

extern crate alloc;

pub mod a3c;
pub mod agent;
pub mod env;
pub mod error;
pub mod memory;
pub mod metrics;
pub mod perception;
pub mod policy;
pub mod rng;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use tape::{Gradients, NodeId, Op, Tape};
pub use tensor::{Scalar, Tensor};
