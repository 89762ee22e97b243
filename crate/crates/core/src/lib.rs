//! Predictive benchmarking toolkit for 2-D SLAM.
//!
//! * [`trajectory`] measures localization error from estimated/ground-truth
//!   pose logs and aggregates it per environment.
//! * [`gridmap`], [`voronoi`], [`traversal`] and [`features`] turn a floor
//!   plan into Voronoi traversal features.
//! * [`models`] fits and cross-validates regressions from features to
//!   performance, and [`datastore`] persists everything.

pub mod gridmap;
pub mod trajectory;
pub mod voronoi;
pub mod traversal;
pub mod features;
pub mod synth;
pub mod models;
pub mod datastore;
