//! Sequential power-one hypothesis testing over classifier label streams.
//!
//! A classifier `g` reduces a hard high-dimensional testing problem to a
//! stream of discrete labels `g(X_1), g(X_2), ...`. This crate implements an
//! anytime-valid test of the null class against `L` alternatives on such a
//! stream: a betting wealth process that is a supermartingale when the data
//! come from the null class and grows geometrically otherwise, stopped the
//! first time it reaches `1/alpha`. Around that engine sit a change-point
//! detector (a running maximum of restarted wealth processes), calculators
//! for the closed-form guarantees (stopping-time bounds, training-size
//! bounds, mismatch tolerances), synthetic Gaussian/centroid data sources,
//! and a seeded Monte-Carlo experiment harness with CSV/JSON output.
//!
//! Module map:
//! - [`stats`] — label pmfs, confusion matrices, separability gaps, divergences
//! - [`eprocess`] — the betting wealth engine and its evaluators
//! - [`sequential`] — the level-`alpha` power-one stopping rule
//! - [`detector`] — change-point detection via restarted wealth maxima
//! - [`sim`] — Gaussian sources, centroid classifiers, label samplers, ERM
//! - [`bounds`] — closed-form bound calculators and the quadratic fit
//! - [`harness`] — seeded experiment orchestration behind the `evertest` CLI

pub mod bounds;
pub mod detector;
pub mod eprocess;
pub mod error;
pub mod harness;
pub mod sequential;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
