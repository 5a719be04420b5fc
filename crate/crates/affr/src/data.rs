//! Core domain types shared by every other module.
//!
//! Frame features are stored as 32-bit reals; all loss and metric
//! accumulation downstream happens in 64-bit. Missing labels are explicit
//! `Option`s, never sentinel values; sentinel conventions live only at the
//! file-ingest boundary.

use std::fmt;

/// Number of expression classes produced by the fixed feature extractor
/// and predicted by the expression head.
pub const NUM_EXPRESSIONS: usize = 8;

/// Number of action units in the detection task.
pub const NUM_ACTION_UNITS: usize = 12;

/// Class names in label-id order (id 0 = neutral, ..., id 7 = other).
pub const EXPRESSION_NAMES: [&str; NUM_EXPRESSIONS] = [
    "neutral",
    "anger",
    "disgust",
    "fear",
    "happiness",
    "sadness",
    "surprise",
    "other",
];

/// Action-unit names in label order.
pub const ACTION_UNIT_NAMES: [&str; NUM_ACTION_UNITS] = [
    "AU1", "AU2", "AU4", "AU6", "AU7", "AU10", "AU12", "AU15", "AU23", "AU24", "AU25", "AU26",
];

/// The three prediction tasks, plus the joint multi-task setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Expression,
    ValenceArousal,
    ActionUnits,
    MultiTask,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Expression => "expr",
            Task::ValenceArousal => "va",
            Task::ActionUnits => "au",
            Task::MultiTask => "mtl",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "expr" => Ok(Task::Expression),
            "va" => Ok(Task::ValenceArousal),
            "au" => Ok(Task::ActionUnits),
            "mtl" | "all" => Ok(Task::MultiTask),
            other => Err(format!("unknown task '{other}' (expected expr|va|au|mtl)")),
        }
    }
}

/// Which slice of the per-frame feature record feeds the head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    EmbeddingsOnly,
    ScoresOnly,
    Concatenated,
}

impl FeatureKind {
    /// Effective head input dimension for a dataset with embedding size `d`.
    pub fn input_dim(self, d: usize) -> usize {
        match self {
            FeatureKind::EmbeddingsOnly => d,
            FeatureKind::ScoresOnly => NUM_EXPRESSIONS,
            FeatureKind::Concatenated => d + NUM_EXPRESSIONS,
        }
    }

    /// Assemble the effective input vector (64-bit) for one frame.
    pub fn input_of(self, frame: &FrameFeatures) -> Vec<f64> {
        match self {
            FeatureKind::EmbeddingsOnly => frame.embedding.iter().map(|&v| v as f64).collect(),
            FeatureKind::ScoresOnly => frame.scores.iter().map(|&v| v as f64).collect(),
            FeatureKind::Concatenated => frame
                .embedding
                .iter()
                .chain(frame.scores.iter())
                .map(|&v| v as f64)
                .collect(),
        }
    }
}

impl std::str::FromStr for FeatureKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "embeddings" => Ok(FeatureKind::EmbeddingsOnly),
            "scores" => Ok(FeatureKind::ScoresOnly),
            "concat" => Ok(FeatureKind::Concatenated),
            other => Err(format!(
                "unknown feature kind '{other}' (expected embeddings|scores|concat)"
            )),
        }
    }
}

/// Per-frame output of the fixed feature extractor.
///
/// When `detected` is false the face detector found nothing in this frame;
/// `embedding` and `scores` carry no information and are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatures {
    pub frame_index: u32,
    pub detected: bool,
    pub embedding: Vec<f32>,
    /// Expression class probabilities from the extractor's softmax layer.
    pub scores: Vec<f32>,
}

impl FrameFeatures {
    pub fn undetected(frame_index: u32, embedding_dim: usize) -> Self {
        FrameFeatures {
            frame_index,
            detected: false,
            embedding: vec![0.0; embedding_dim],
            scores: vec![0.0; NUM_EXPRESSIONS],
        }
    }
}

/// Per-frame annotations; any subset of tasks may be labeled.
///
/// Valence and arousal are annotated jointly, so they share one `Option`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameLabels {
    pub expression: Option<u8>,
    pub action_units: Option<[u8; NUM_ACTION_UNITS]>,
    pub valence_arousal: Option<(f32, f32)>,
}

impl FrameLabels {
    pub fn is_empty(&self) -> bool {
        self.expression.is_none() && self.action_units.is_none() && self.valence_arousal.is_none()
    }
}

/// Ordered frames of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoTrack {
    pub video_id: String,
    pub frames: Vec<(FrameFeatures, FrameLabels)>,
}

impl VideoTrack {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

/// A collection of tracks sharing one embedding dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub tracks: Vec<VideoTrack>,
    pub embedding_dim: usize,
    pub split: Split,
}

impl Dataset {
    /// Total number of frames carrying at least one label.
    pub fn labeled_frames(&self) -> usize {
        self.tracks
            .iter()
            .flat_map(|t| t.frames.iter())
            .filter(|(_, l)| !l.is_empty())
            .count()
    }

    pub fn total_frames(&self) -> usize {
        self.tracks.iter().map(|t| t.len()).sum()
    }
}

/// Model outputs for one frame; only the groups the head has are present.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TaskPrediction {
    pub expr_probs: Option<Vec<f64>>,
    pub au_probs: Option<Vec<f64>>,
    pub valence_arousal: Option<(f64, f64)>,
}

impl TaskPrediction {
    /// Flatten the present groups into one coordinate vector, in the fixed
    /// order expr (8), au (12), va (2). Used by interpolation and smoothing,
    /// which operate coordinate-wise.
    pub fn coordinates(&self) -> Vec<f64> {
        let mut out = Vec::new();
        if let Some(p) = &self.expr_probs {
            out.extend_from_slice(p);
        }
        if let Some(p) = &self.au_probs {
            out.extend_from_slice(p);
        }
        if let Some((v, a)) = self.valence_arousal {
            out.push(v);
            out.push(a);
        }
        out
    }

    /// Rebuild a prediction with the same shape as `self` from a coordinate
    /// vector produced by [`TaskPrediction::coordinates`].
    pub fn from_coordinates(&self, coords: &[f64]) -> TaskPrediction {
        let mut i = 0;
        let expr_probs = self.expr_probs.as_ref().map(|p| {
            let v = coords[i..i + p.len()].to_vec();
            i += p.len();
            v
        });
        let au_probs = self.au_probs.as_ref().map(|p| {
            let v = coords[i..i + p.len()].to_vec();
            i += p.len();
            v
        });
        let valence_arousal = self.valence_arousal.map(|_| {
            let pair = (coords[i], coords[i + 1]);
            i += 2;
            pair
        });
        debug_assert_eq!(i, coords.len());
        TaskPrediction {
            expr_probs,
            au_probs,
            valence_arousal,
        }
    }

    /// Index of the most probable expression class, if the group is present.
    pub fn expr_argmax(&self) -> Option<usize> {
        self.expr_probs.as_ref().map(|p| argmax(p))
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// One broken invariant found by [`validate_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub track: String,
    /// Frame index within the track, when the rule is frame-scoped.
    pub frame: Option<u32>,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.frame {
            Some(fi) => write!(f, "track {} frame {}: {}", self.track, fi, self.rule),
            None => write!(f, "track {}: {}", self.track, self.rule),
        }
    }
}

const SIMPLEX_TOLERANCE: f64 = 1e-4;

/// Check every datamodel invariant; returns an empty list iff the dataset is
/// well formed. Validation reports, it never aborts.
pub fn validate_dataset(dataset: &Dataset) -> Vec<Violation> {
    let mut out = Vec::new();
    for track in &dataset.tracks {
        let mut push = |frame: Option<u32>, rule: String| {
            out.push(Violation {
                track: track.video_id.clone(),
                frame,
                rule,
            })
        };
        if track.is_empty() {
            push(None, "track length: T must be >= 1".into());
            continue;
        }
        let mut prev_index: Option<u32> = None;
        for (features, labels) in &track.frames {
            let fi = features.frame_index;
            if let Some(prev) = prev_index {
                if fi <= prev {
                    push(
                        Some(fi),
                        format!("frame order: index {fi} not greater than previous {prev}"),
                    );
                }
            }
            prev_index = Some(fi);

            if features.detected {
                if features.embedding.len() != dataset.embedding_dim {
                    push(
                        Some(fi),
                        format!(
                            "embedding length: got {}, dataset declares D={}",
                            features.embedding.len(),
                            dataset.embedding_dim
                        ),
                    );
                }
                if features.scores.len() != NUM_EXPRESSIONS {
                    push(
                        Some(fi),
                        format!("scores length: got {}, expected 8", features.scores.len()),
                    );
                } else {
                    let mut sum = 0.0f64;
                    let mut in_range = true;
                    for &s in &features.scores {
                        if !(0.0..=1.0).contains(&(s as f64)) {
                            in_range = false;
                        }
                        sum += s as f64;
                    }
                    if !in_range {
                        push(Some(fi), "scores range: component outside [0,1]".into());
                    } else if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
                        push(
                            Some(fi),
                            format!(
                                "scores simplex: sum {sum:.6} differs from 1 by more than 1e-4"
                            ),
                        );
                    }
                }
            }

            if let Some(e) = labels.expression {
                if e as usize >= NUM_EXPRESSIONS {
                    push(Some(fi), format!("expression label: {e} outside [0,7]"));
                }
            }
            if let Some(au) = &labels.action_units {
                if au.iter().any(|&b| b > 1) {
                    push(Some(fi), "action unit label: entry outside {0,1}".into());
                }
            }
            if let Some((v, a)) = labels.valence_arousal {
                if !(-1.0..=1.0).contains(&v) || !(-1.0..=1.0).contains(&a) {
                    push(
                        Some(fi),
                        format!("valence/arousal range: ({v}, {a}) outside [-1,1]"),
                    );
                }
            }
        }
    }
    out
}
