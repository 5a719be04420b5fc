//! Frame-level affect prediction downstream of a fixed feature extractor:
//! shallow task heads for expression classification, valence/arousal
//! regression and action-unit detection, trained with weighted
//! cross-entropy, a concordance-correlation loss and weighted binary
//! cross-entropy; plus missing-frame interpolation, temporal smoothing,
//! per-AU threshold tuning and the challenge metric suite
//! (P_EXPR, P_AU, P_VA, P_MTL).
//!
//! The `affr` binary wires these pieces into reproducible experiment runs;
//! see the book under `book/` for a guided tour.
//!
//! ```
//! use affr::train::ccc;
//!
//! let x = [1.0, 2.0, 3.0, 4.0];
//! let y = [1.0, 2.0, 3.0, 5.0];
//! assert!((ccc(&x, &y).unwrap() - 0.928571).abs() < 1e-6);
//! ```

pub mod cli;
pub mod data;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod postprocess;
pub mod synth;
pub mod train;

pub use data::{
    Dataset, FeatureKind, FrameFeatures, FrameLabels, Task, TaskPrediction, VideoTrack,
};
pub use error::{Error, Result};
pub use metrics::MetricsReport;
pub use model::{HeadArchitecture, HeadModel, OutputGroup};
pub use postprocess::{AUThresholds, FilterKind, SmoothingConfig};
pub use synth::{GroundTruthModel, SyntheticSpec, TaskMix};
pub use train::TrainConfig;
