// SPDX-License-Identifier: MIT OR Apache-2.0

//! Concept-vector extraction and activation steering on a deterministic toy
//! transformer with a controllable "visual prefix".
//!
//! * [`model`] — the toy model, hooks and greedy generation;
//! * [`concepts`] — synthetic concept banks and paired data;
//! * [`extraction`] — difference-in-means concept vectors and their file format;
//! * [`steering`] — steering hooks and layer / strength / reverse sweeps;
//! * [`metrics`] — rates, similarity, logit boost, Gini, faithfulness, confusion;
//! * [`optimality`] — numerical checks that `mu_1 - mu_0` is the right direction;
//! * [`harness`] — config, datasets, experiment pipelines and reports.

pub mod concepts;
pub mod error;
pub mod extraction;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod optimality;
pub mod steering;

pub use concepts::{ConceptBank, ConceptSpec};
pub use error::{Result, SteerError};
pub use extraction::{extract, ConceptVectorSet};
pub use model::{Model, ModelConfig, VisualPrefix};
pub use steering::SteeringHook;
