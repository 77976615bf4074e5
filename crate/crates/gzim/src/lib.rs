//! Gaze-augmented imitation learning workbench.
//!
//! A desk-scale pipeline: a procedural 2D driving world with an expert
//! controller and a synthetic gaze oracle, a from-scratch autodiff engine,
//! PilotNet-style driver networks with two gaze-integration schemes
//! (gaze-as-input and gaze-modulated dropout), a toy gaze-map predictor, and
//! offline plus closed-loop evaluation metrics.

pub mod cli;
pub mod datastore;
pub mod gazemap;
pub mod models;
pub mod numerics;
pub mod simworld;
