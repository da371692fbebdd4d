//! Search for metamorphic image distortions that break semantic segmentation
//! models while keeping the distorted image above a PSNR fidelity floor.
//!
//! The pieces, bottom up:
//!
//! * [`imaging`]: rasters, PSNR and IoU.
//! * [`transforms`]: the seven seeded distortion operators and their composition.
//! * [`genome`]: chromosomes of distortion genes and their binary codec.
//! * [`oracle`]: the segmentation-model boundary (built-in palette model and
//!   the `SGRM` wire protocol for external models).
//! * [`evolution`]: the genetic algorithm.
//! * [`stats`]: Wilcoxon signed-rank, Cohen's d and distribution summaries.
//! * [`dataset`]: corpus loading, synthetic scenes and adversarial export.

pub mod dataset;
pub mod evolution;
pub mod genome;
pub mod imaging;
pub mod kv;
pub mod oracle;
pub mod rng;
pub mod stats;
pub mod transforms;

pub use imaging::{Image, LabelMap, Shape};
