//! Graph lottery tickets for EEG motor-imagery classification.
//!
//! The crate trains Chebyshev spectral graph-convolutional classifiers on
//! per-time-point multichannel EEG signals while iteratively magnitude-pruning
//! a trainable adjacency mask, then compares the surviving graph against
//! Pearson-correlation and geodesic baselines on accuracy, F1, density and
//! MACs.
//!
//! Module map:
//! - [`graph`]: adjacency construction (PCC, geodesic, masked), Laplacians,
//!   exact spectral filtering and the Chebyshev recurrence.
//! - [`autodiff`]: a small reverse-mode tape covering exactly the layer set
//!   the classifier needs, plus Adam.
//! - [`model`]: the generalized GCN architecture, the six named model
//!   settings, and classification metrics.
//! - [`prune`]: the iterative train/record/prune/rewind loop over the
//!   adjacency mask and ticket selection.
//! - [`data`]: EDF/EDF+ parsing, notch filtering, trial windowing and
//!   per-time-point dataset assembly.
//! - [`synth`]: seeded synthetic data (planted-graph tasks, surrogate
//!   recordings) for desk-scale runs and smoke tests.
//! - [`macs`]: multiply-accumulate accounting per model/density and savings
//!   reports.

pub mod autodiff;
pub mod data;
pub mod graph;
pub mod macs;
pub mod model;
pub mod prune;
pub mod synth;
