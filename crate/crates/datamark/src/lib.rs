//! Data marking and black-box training-data audits.
//!
//! A data owner stamps a small fraction of her samples with a trigger pattern
//! and relabels them to a target class before releasing the data. Any
//! classifier later trained on the marked data picks up the trigger. The
//! owner can then decide, from nothing but `m` label queries against the
//! suspect model, whether her data was used: the fraction of trigger-stamped
//! probes classified as the target label is compared against random chance
//! with a one-sided t-test, and the null hypothesis ("behaves like a clean
//! model") is rejected only with a stated confidence.
//!
//! The crate is split along that pipeline:
//!
//! * [`dataset`] — labeled feature vectors, CSV I/O, seeded splits, and a
//!   synthetic binary generator for self-contained experiments.
//! * [`trigger`] — the blend transform `(1 - v) ⊗ x + v ⊗ p`, marking
//!   policies, perturbation budgets, and probe-set construction.
//! * [`model`] — a from-scratch feed-forward classifier with SGD/momentum
//!   training, used to build both clean and backdoored targets.
//! * [`stats`] — attack success rate, Student-t numerics, the rejection
//!   rule, and the ASR threshold solver.
//! * [`inference`] — orchestration of the black-box audit, including
//!   multi-owner runs and owner unions.
//!
//! Everything random takes an explicit 64-bit seed and is bit-reproducible.

pub mod dataset;
pub mod error;
pub mod inference;
pub mod model;
pub mod stats;
pub mod trigger;
mod util;

pub use error::{Error, Result};
