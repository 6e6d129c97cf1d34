//! Superpixel-propagated pseudo-label learning for scribble-annotated image
//! segmentation, at desk scale.
//!
//! The crate covers the full loop: SLIC superpixel generation, scribble
//! expansion to superpixel-dense labels, pseudo-label ensembling and
//! refinement under class-specific EMA thresholds, superpixel-level
//! uncertainty weighting, differentiable losses with analytic gradients, a
//! dual-head linear pixel classifier trained by SGD on synthetic phantoms,
//! and the usual segmentation metrics (Dice, Jaccard, HD95, ASD).
//!
//! Everything is deterministic under a seed: per-sample and per-iteration
//! randomness derives from independent streams, and parallel sections are
//! pure maps, so the thread count never changes a result.
//!
//! The `sp3` binary wires these modules into a CLI; see the README for the
//! end-to-end pipeline (`gen-data`, `slic`, `train`, `eval`, `plot`).

pub mod error;
pub mod grid;
pub mod losses;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod plot;
pub mod propagation;
pub mod slic;
pub mod synth;
pub mod tensor;
pub mod trainer;
pub mod util;

pub use error::{Result, SpError};
pub use grid::{labelgrid_from_scribbles, GridShape, LabelGrid, ProbGrid, ScribbleSet, Stroke, IGNORE};
pub use manifest::{DatasetManifest, SampleEntry, Split};
pub use propagation::{
    dominant_proportion, ensemble_pseudo_label, expand_scribbles, refine_pseudo_label,
    superpixel_uncertainty, ThresholdState, UncertaintyMap, UncertaintyStrategy,
};
pub use slic::{slic_segment, superpixel_class_histogram, Image, SuperpixelMap};
pub use trainer::{train, TrainConfig, VariantSwitches};
