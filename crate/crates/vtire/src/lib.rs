//! Visuotactile tire sensing toolkit.
//!
//! Everything needed to train and verify the sensing stack of a
//! camera-instrumented elastic tire on a single desktop CPU:
//!
//! - [`tensor`] — dense tensors with hand-written forward/backward passes
//!   for every layer used here, plus a finite-difference gradient checker.
//! - [`synthgen`] — procedural generator of synthetic visuotactile frames,
//!   external camera views, ground-truth masks and damage states.
//! - [`modality`] — raw-frame region segmentation, patch fragmentation and
//!   per-modality feature encoding.
//! - [`mmvtt`] — the multimodal fusion transformer (self/cross attention
//!   over modality tokens) and its training/evaluation loops.
//! - [`fcn`] — FCN-style per-pixel contact/crack segmentation.
//! - [`fem`] + [`load`] — a 2D plane-strain contact solver for the
//!   two-layer tire annulus and the offset→weight calibration built on it.
//! - [`datasets`] — on-disk dataset layout, manifests, splits, loading.
//! - [`cli`] — the `vtire` command-line entry point.
//!
//! All generators and training loops are deterministic functions of
//! `(config, seed)`; see [`rng`] for the counter-based generator that
//! makes that hold across runs.

pub mod cli;
pub mod config;
pub mod datasets;
pub mod fcn;
pub mod fem;
pub mod load;
pub mod mmvtt;
pub mod modality;
pub mod par;
pub mod raster;
pub mod rng;
pub mod synthgen;
pub mod tensor;
