//! Multi-peak cascaded stereo matching at quarter resolution.
//!
//! The pipeline builds an all-pairs correlation volume between left and right
//! feature maps, keeps a frozen two-level pyramid of it, and then iterates:
//! pick the `k` most probable disparities per pixel, sample local costs in a
//! window around each, let an updater nudge those costs, and regress a
//! disparity by soft-argmax. Window radii shrink in stages.

pub mod ablation;
pub mod cost_volume;
pub mod error;
pub mod eval;
pub mod features;
pub mod imagery;
pub mod lookup;
pub mod oracle;
pub mod pipeline;
pub mod selftest;
pub mod synth;
pub mod tensor;
pub mod updater;
pub mod weights;

pub use cost_volume::{build_correlation_volume, build_pyramid, CostPyramid, CostVolume, LocalCostVolume};
pub use error::{Error, Result};
pub use features::{ContextBundle, FeatureExtractor, FeatureMap};
pub use imagery::{DisparityMap, IntensityImage};
pub use lookup::{CascadeSchedule, HypothesisSet, Stage};
pub use pipeline::{run, IterationTrace, PipelineConfig, UpdaterChoice};
pub use tensor::Tensor3;
pub use updater::GruWeights;
pub use weights::{ConvLayer, ConvWeights};
