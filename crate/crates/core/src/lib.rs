//! Buried-threat discrimination for ground penetrating radar: HOG and gprHOG
//! features, MSEK keypoints, a randomized-tree classifier and halo/ROC
//! evaluation, with a seeded synthetic lane generator to drive it end to end.

// `!(x >= 0.0)` is used on purpose: it rejects NaN along with negatives.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod eval;
pub mod experiment;
pub mod features;
pub mod forest;
pub mod hog;
pub mod keypoints;
pub mod pipeline;
pub mod preprocess;
pub mod synth;
pub mod volume;
