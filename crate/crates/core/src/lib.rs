//! Training-only graph teacher for few-shot key-value cache classifiers.
//!
//! The crate trains a Tip-Adapter style cache model (the student) on a handful
//! of labelled support embeddings while a heterogeneous patch/text graph
//! transformer (the teacher) shapes its training signal. Only the student is
//! exported; inference never touches teacher state.
//!
//! Modules, bottom-up:
//!
//! - [`numcore`]: dense kernels and the reverse-mode tape.
//! - [`embedbank`]: precomputed embedding banks, the `TOGB` file format, the
//!   synthetic generator, and episode sampling.
//! - [`student`]: the cache model and its `TOGS` export format.
//! - [`teacher`]: unimodal encoders, graph construction, modality-aware graph
//!   transformer layers, and node filtering.
//! - [`objective`]: training logits and losses.
//! - [`trainer`]: AdamW with cosine annealing, the training loop, evaluation,
//!   and ablation sweeps.

pub mod embedbank;
pub mod error;
pub mod numcore;
pub mod objective;
pub mod student;
pub mod teacher;
pub mod trainer;

pub use error::{Error, Result};
