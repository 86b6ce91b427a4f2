//! Experiment harness around `oslab-core`: named experiment settings, a
//! content-addressed artifact store, the staged dataset → teacher →
//! relabel → student → evaluation pipeline, and report emission.

pub mod cmd;
pub mod experiment;
pub mod report;
pub mod spec;
pub mod store;
pub mod svg;
