//! Shallow feed-forward task heads: zero or one hidden layer (ReLU) feeding
//! one or more output groups — softmax over 8 expressions, tanh valence and
//! arousal, sigmoid over 12 action units.
//!
//! With `hidden_units` absent the expression head is plain multi-class
//! logistic regression. Initialization is fan-in-scaled symmetric uniform
//! with zero biases, deterministic in the seed.

use std::fmt::Write as _;
use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{FeatureKind, TaskPrediction, VideoTrack, NUM_ACTION_UNITS, NUM_EXPRESSIONS};
use crate::error::{Error, Result};

/// One task-specific output group and its activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum OutputGroup {
    /// 8 units, softmax.
    Expression,
    /// 2 units, tanh.
    ValenceArousal,
    /// 12 units, sigmoid.
    ActionUnits,
}

impl OutputGroup {
    pub fn units(self) -> usize {
        match self {
            OutputGroup::Expression => NUM_EXPRESSIONS,
            OutputGroup::ValenceArousal => 2,
            OutputGroup::ActionUnits => NUM_ACTION_UNITS,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OutputGroup::Expression => "expr",
            OutputGroup::ValenceArousal => "va",
            OutputGroup::ActionUnits => "au",
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        match s {
            "expr" => Some(OutputGroup::Expression),
            "va" => Some(OutputGroup::ValenceArousal),
            "au" => Some(OutputGroup::ActionUnits),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeadArchitecture {
    pub input_dim: usize,
    /// Absent means a linear/logistic model with no hidden layer.
    pub hidden_units: Option<usize>,
    /// Non-empty, kept sorted and deduplicated.
    pub groups: Vec<OutputGroup>,
}

impl HeadArchitecture {
    pub fn new(
        input_dim: usize,
        hidden_units: Option<usize>,
        mut groups: Vec<OutputGroup>,
    ) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Config("input_dim must be positive".into()));
        }
        if let Some(0) = hidden_units {
            return Err(Error::Config(
                "hidden_units must be positive when present".into(),
            ));
        }
        groups.sort();
        groups.dedup();
        if groups.is_empty() {
            return Err(Error::Config(
                "at least one output group is required".into(),
            ));
        }
        Ok(HeadArchitecture {
            input_dim,
            hidden_units,
            groups,
        })
    }

    /// Width of the representation feeding the output groups.
    fn trunk_dim(&self) -> usize {
        self.hidden_units.unwrap_or(self.input_dim)
    }
}

/// Dense layer, row-major `out_dim x in_dim` weights plus bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn init<R: rand::Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        // Symmetric uniform on [-1/sqrt(fan_in), 1/sqrt(fan_in)], zero bias.
        let bound = 1.0 / (in_dim as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        Layer {
            in_dim,
            out_dim,
            weights: (0..in_dim * out_dim).map(|_| dist.sample(rng)).collect(),
            bias: vec![0.0; out_dim],
        }
    }

    /// `z = W x + b`
    pub fn affine(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        let mut out = self.bias.clone();
        for (o, out_v) in out.iter_mut().enumerate() {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = 0.0;
            for (w, v) in row.iter().zip(x.iter()) {
                acc += w * v;
            }
            *out_v += acc;
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(self.bias.iter())
            .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadModel {
    pub arch: HeadArchitecture,
    pub hidden: Option<Layer>,
    /// One output layer per group, in `arch.groups` order.
    pub outputs: Vec<Layer>,
    pub rng_seed: u64,
}

pub(crate) fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Draw a fresh model for the given architecture, deterministic in `seed`.
pub fn init_head(arch: &HeadArchitecture, seed: u64) -> Result<HeadModel> {
    if arch.input_dim == 0 {
        return Err(Error::Config("input_dim must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hidden = arch
        .hidden_units
        .map(|h| Layer::init(arch.input_dim, h, &mut rng));
    let trunk = arch.trunk_dim();
    let outputs = arch
        .groups
        .iter()
        .map(|g| Layer::init(trunk, g.units(), &mut rng))
        .collect();
    Ok(HeadModel {
        arch: arch.clone(),
        hidden,
        outputs,
        rng_seed: seed,
    })
}

/// Intermediate activations kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct ForwardTrace {
    /// Pre-activation of the hidden layer, when one exists.
    pub hidden_pre: Option<Vec<f64>>,
    /// Representation feeding the output layers (input itself or ReLU(h)).
    pub trunk: Vec<f64>,
    /// Per-group activated outputs, in `arch.groups` order.
    pub activations: Vec<Vec<f64>>,
}

impl HeadModel {
    pub(crate) fn forward_trace(&self, features: &[f64]) -> Result<ForwardTrace> {
        if features.len() != self.arch.input_dim {
            return Err(Error::Shape(format!(
                "feature vector has length {}, model expects {}",
                features.len(),
                self.arch.input_dim
            )));
        }
        let (hidden_pre, trunk) = match &self.hidden {
            Some(layer) => {
                let pre = layer.affine(features);
                let act = pre.iter().map(|&v| v.max(0.0)).collect();
                (Some(pre), act)
            }
            None => (None, features.to_vec()),
        };
        let activations = self
            .arch
            .groups
            .iter()
            .zip(self.outputs.iter())
            .map(|(group, layer)| {
                let z = layer.affine(&trunk);
                match group {
                    OutputGroup::Expression => softmax(&z),
                    OutputGroup::ValenceArousal => z.iter().map(|&v| v.tanh()).collect(),
                    OutputGroup::ActionUnits => z.iter().map(|&v| sigmoid(v)).collect(),
                }
            })
            .collect();
        Ok(ForwardTrace {
            hidden_pre,
            trunk,
            activations,
        })
    }

    /// All parameter blocks, paired with stable names for diagnostics.
    pub(crate) fn param_blocks_mut(&mut self) -> Vec<(String, &mut Vec<f64>)> {
        let mut blocks = Vec::new();
        if let Some(h) = &mut self.hidden {
            blocks.push(("hidden.weights".to_string(), &mut h.weights));
            blocks.push(("hidden.bias".to_string(), &mut h.bias));
        }
        for (group, layer) in self.arch.groups.iter().zip(self.outputs.iter_mut()) {
            blocks.push((format!("{}.weights", group.name()), &mut layer.weights));
            blocks.push((format!("{}.bias", group.name()), &mut layer.bias));
        }
        blocks
    }

    pub fn is_finite(&self) -> bool {
        self.hidden.as_ref().is_none_or(Layer::is_finite)
            && self.outputs.iter().all(Layer::is_finite)
    }

    pub(crate) fn output_layer(&self, group: OutputGroup) -> Option<&Layer> {
        self.arch
            .groups
            .iter()
            .position(|&g| g == group)
            .map(|i| &self.outputs[i])
    }
}

/// Evaluate the head on one effective input vector.
pub fn forward(model: &HeadModel, features: &[f64]) -> Result<TaskPrediction> {
    let trace = model.forward_trace(features)?;
    let mut pred = TaskPrediction::default();
    for (group, act) in model.arch.groups.iter().zip(trace.activations) {
        match group {
            OutputGroup::Expression => pred.expr_probs = Some(act),
            OutputGroup::ValenceArousal => pred.valence_arousal = Some((act[0], act[1])),
            OutputGroup::ActionUnits => pred.au_probs = Some(act),
        }
    }
    Ok(pred)
}

/// Predict every detected frame of a track; undetected frames stay `None`
/// for `postprocess::interpolate_missing` to fill.
pub fn predict_track(
    model: &HeadModel,
    track: &VideoTrack,
    kind: FeatureKind,
) -> Result<Vec<Option<TaskPrediction>>> {
    track
        .frames
        .iter()
        .map(|(features, _)| {
            if !features.detected {
                return Ok(None);
            }
            forward(model, &kind.input_of(features))
                .map(Some)
                .map_err(|e| Error::Shape(format!("frame {}: {e}", features.frame_index)))
        })
        .collect()
}

// --- checkpoint serialization -------------------------------------------
//
// Self-describing text key-value document. Floats are written in their
// shortest round-trip decimal form, so load(save(m)) == m exactly.

pub const CHECKPOINT_VERSION: u32 = 1;

fn write_floats(out: &mut String, key: &str, values: &[f64]) {
    write!(out, "{key} =").unwrap();
    for v in values {
        write!(out, " {v:?}").unwrap();
    }
    out.push('\n');
}

/// Serialize a model to the text checkpoint format.
pub fn checkpoint_to_string(model: &HeadModel) -> String {
    let mut out = String::new();
    writeln!(out, "format = affr-checkpoint").unwrap();
    writeln!(out, "version = {CHECKPOINT_VERSION}").unwrap();
    writeln!(out, "input_dim = {}", model.arch.input_dim).unwrap();
    match model.arch.hidden_units {
        Some(h) => writeln!(out, "hidden_units = {h}").unwrap(),
        None => writeln!(out, "hidden_units = none").unwrap(),
    }
    let names: Vec<&str> = model.arch.groups.iter().map(|g| g.name()).collect();
    writeln!(out, "groups = {}", names.join(",")).unwrap();
    writeln!(out, "seed = {}", model.rng_seed).unwrap();
    if let Some(h) = &model.hidden {
        write_floats(&mut out, "hidden.weights", &h.weights);
        write_floats(&mut out, "hidden.bias", &h.bias);
    }
    for (group, layer) in model.arch.groups.iter().zip(model.outputs.iter()) {
        write_floats(
            &mut out,
            &format!("{}.weights", group.name()),
            &layer.weights,
        );
        write_floats(&mut out, &format!("{}.bias", group.name()), &layer.bias);
    }
    out
}

pub fn save_checkpoint(model: &HeadModel, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint_to_string(model)).map_err(|e| Error::io(path, e))
}

pub fn checkpoint_from_string(text: &str) -> Result<HeadModel> {
    let mut map = std::collections::HashMap::new();
    for line in text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    let get = |k: &str| {
        map.get(k)
            .ok_or_else(|| Error::Config(format!("checkpoint missing key '{k}'")))
    };
    if get("format")? != "affr-checkpoint" {
        return Err(Error::Config("not an affr checkpoint".into()));
    }
    let input_dim: usize = get("input_dim")?
        .parse()
        .map_err(|_| Error::Config("bad input_dim".into()))?;
    let hidden_units = match get("hidden_units")?.as_str() {
        "none" => None,
        v => Some(
            v.parse()
                .map_err(|_| Error::Config("bad hidden_units".into()))?,
        ),
    };
    let groups: Vec<OutputGroup> = get("groups")?
        .split(',')
        .map(|s| {
            OutputGroup::from_name(s.trim())
                .ok_or_else(|| Error::Config(format!("unknown group '{s}'")))
        })
        .collect::<Result<_>>()?;
    let seed: u64 = get("seed")?
        .parse()
        .map_err(|_| Error::Config("bad seed".into()))?;
    let arch = HeadArchitecture::new(input_dim, hidden_units, groups)?;

    let parse_floats = |k: &str, expected: usize| -> Result<Vec<f64>> {
        let vals: Vec<f64> = get(k)?
            .split_whitespace()
            .map(|t| {
                t.parse()
                    .map_err(|_| Error::Config(format!("bad float in '{k}'")))
            })
            .collect::<Result<_>>()?;
        if vals.len() != expected {
            return Err(Error::Config(format!(
                "'{k}' has {} values, expected {expected}",
                vals.len()
            )));
        }
        Ok(vals)
    };

    let hidden = match arch.hidden_units {
        Some(h) => Some(Layer {
            in_dim: input_dim,
            out_dim: h,
            weights: parse_floats("hidden.weights", input_dim * h)?,
            bias: parse_floats("hidden.bias", h)?,
        }),
        None => None,
    };
    let trunk = arch.trunk_dim();
    let outputs = arch
        .groups
        .iter()
        .map(|g| {
            Ok(Layer {
                in_dim: trunk,
                out_dim: g.units(),
                weights: parse_floats(&format!("{}.weights", g.name()), trunk * g.units())?,
                bias: parse_floats(&format!("{}.bias", g.name()), g.units())?,
            })
        })
        .collect::<Result<_>>()?;

    Ok(HeadModel {
        arch,
        hidden,
        outputs,
        rng_seed: seed,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<HeadModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_string(&text)
}
