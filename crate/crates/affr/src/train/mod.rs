//! Mini-batch training with Adam and early stopping.
//!
//! Each epoch shuffles the labeled detected frames with a seeded generator,
//! walks fixed-size batches, and evaluates the task's challenge metric on
//! the validation split; the best-metric parameters are kept and training
//! stops after `patience` epochs without improvement. Gradient accumulation
//! uses a fixed summation order, so two runs with the same seed are
//! bit-identical regardless of how many worker threads the caller uses
//! elsewhere.

mod adam;
mod loss;
mod weights;

pub use adam::AdamState;
pub use loss::{ccc, loss_va, weighted_bce, weighted_ce, LOG_CLAMP};
pub use weights::{
    au_weights_from_counts, compute_au_weights, compute_expr_weights, expr_weights_from_counts,
    ClassWeighting,
};

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, FeatureKind, Task, NUM_ACTION_UNITS, NUM_EXPRESSIONS};
use crate::error::{Error, Result};
use crate::metrics;
use crate::model::{init_head, HeadArchitecture, HeadModel, OutputGroup};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub feature_kind: FeatureKind,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub seed: u64,
    pub class_weighting: ClassWeighting,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            feature_kind: FeatureKind::EmbeddingsOnly,
            learning_rate: 0.001,
            max_epochs: 20,
            batch_size: 256,
            patience: 5,
            seed: 0,
            class_weighting: ClassWeighting::Computed,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.max_epochs == 0 || self.patience == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "max_epochs, patience and batch_size must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
    pub wall_secs: f64,
}

/// Comma-separated training log, one record per epoch.
pub fn log_to_csv(log: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_metric,wall_secs\n");
    for r in log {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.3}\n",
            r.epoch, r.train_loss, r.val_metric, r.wall_secs
        ));
    }
    out
}

struct Sample {
    input: Vec<f64>,
    expr: Option<usize>,
    au: Option<[u8; NUM_ACTION_UNITS]>,
    va: Option<(f64, f64)>,
}

fn collect_samples(dataset: &Dataset, kind: FeatureKind, groups: &[OutputGroup]) -> Vec<Sample> {
    let wants = |g: OutputGroup| groups.contains(&g);
    let mut samples = Vec::new();
    for track in &dataset.tracks {
        for (features, labels) in &track.frames {
            if !features.detected {
                continue;
            }
            let expr = if wants(OutputGroup::Expression) {
                labels.expression.map(|e| e as usize)
            } else {
                None
            };
            let au = if wants(OutputGroup::ActionUnits) {
                labels.action_units
            } else {
                None
            };
            let va = if wants(OutputGroup::ValenceArousal) {
                labels.valence_arousal.map(|(v, a)| (v as f64, a as f64))
            } else {
                None
            };
            if expr.is_none() && au.is_none() && va.is_none() {
                continue;
            }
            samples.push(Sample {
                input: kind.input_of(features),
                expr,
                au,
                va,
            });
        }
    }
    samples
}

struct GroupWeights {
    expr: [f64; NUM_EXPRESSIONS],
    au: [f64; NUM_ACTION_UNITS],
}

fn resolve_weights(
    dataset: &Dataset,
    groups: &[OutputGroup],
    weighting: ClassWeighting,
) -> Result<GroupWeights> {
    let mut w = GroupWeights {
        expr: [1.0; NUM_EXPRESSIONS],
        au: [1.0; NUM_ACTION_UNITS],
    };
    if weighting == ClassWeighting::Uniform {
        return Ok(w);
    }
    let has_expr_labels = dataset.tracks.iter().any(|t| {
        t.frames
            .iter()
            .any(|(f, l)| f.detected && l.expression.is_some())
    });
    let has_au_labels = dataset.tracks.iter().any(|t| {
        t.frames
            .iter()
            .any(|(f, l)| f.detected && l.action_units.is_some())
    });
    if groups.contains(&OutputGroup::Expression) && has_expr_labels {
        w.expr = compute_expr_weights(dataset)?;
    }
    if groups.contains(&OutputGroup::ActionUnits) && has_au_labels {
        w.au = compute_au_weights(dataset)?;
    }
    Ok(w)
}

/// Run one batch: forward, group losses over the frames that carry each
/// label, backpropagation with fixed summation order, one Adam update.
/// Returns the batch loss, or `None` when no group had enough labels.
fn batch_step(
    model: &mut HeadModel,
    batch: &[&Sample],
    weights: &GroupWeights,
    state: &mut AdamState,
    learning_rate: f64,
) -> Result<Option<f64>> {
    let groups = model.arch.groups.clone();
    let traces: Vec<_> = batch
        .iter()
        .map(|s| model.forward_trace(&s.input))
        .collect::<Result<_>>()?;

    // Per-sample, per-group gradients w.r.t. the group pre-activations.
    let mut dz: Vec<Vec<Option<Vec<f64>>>> = batch
        .iter()
        .map(|_| groups.iter().map(|_| None).collect())
        .collect();
    let mut total_loss = 0.0;
    let mut any_group = false;

    for (gi, group) in groups.iter().enumerate() {
        match group {
            OutputGroup::Expression => {
                let idx: Vec<usize> = (0..batch.len())
                    .filter(|&i| batch[i].expr.is_some())
                    .collect();
                if idx.is_empty() {
                    continue;
                }
                let probs: Vec<Vec<f64>> = idx
                    .iter()
                    .map(|&i| traces[i].activations[gi].clone())
                    .collect();
                let labels: Vec<usize> = idx.iter().map(|&i| batch[i].expr.unwrap()).collect();
                let (l, grads) = weighted_ce(&probs, &labels, &weights.expr);
                total_loss += l;
                any_group = true;
                for (&i, g) in idx.iter().zip(grads) {
                    dz[i][gi] = Some(g);
                }
            }
            OutputGroup::ActionUnits => {
                let idx: Vec<usize> = (0..batch.len())
                    .filter(|&i| batch[i].au.is_some())
                    .collect();
                if idx.is_empty() {
                    continue;
                }
                let probs: Vec<Vec<f64>> = idx
                    .iter()
                    .map(|&i| traces[i].activations[gi].clone())
                    .collect();
                let labels: Vec<[u8; NUM_ACTION_UNITS]> =
                    idx.iter().map(|&i| batch[i].au.unwrap()).collect();
                let (l, grads) = weighted_bce(&probs, &labels, &weights.au);
                total_loss += l;
                any_group = true;
                for (&i, g) in idx.iter().zip(grads) {
                    dz[i][gi] = Some(g);
                }
            }
            OutputGroup::ValenceArousal => {
                let idx: Vec<usize> = (0..batch.len())
                    .filter(|&i| batch[i].va.is_some())
                    .collect();
                // The batch-level CCC needs at least two labeled frames.
                if idx.len() < 2 {
                    continue;
                }
                let preds: Vec<(f64, f64)> = idx
                    .iter()
                    .map(|&i| {
                        let a = &traces[i].activations[gi];
                        (a[0], a[1])
                    })
                    .collect();
                let labels: Vec<(f64, f64)> = idx.iter().map(|&i| batch[i].va.unwrap()).collect();
                let (l, grads) = loss_va(&preds, &labels)?;
                total_loss += l;
                any_group = true;
                for (&i, (gv, ga)) in idx.iter().zip(grads) {
                    dz[i][gi] = Some(vec![gv, ga]);
                }
            }
        }
    }

    if !any_group {
        return Ok(None);
    }

    // Accumulate gradients in block order: hidden first, then each group.
    let has_hidden = model.hidden.is_some();
    let trunk_dim = traces.first().map(|t| t.trunk.len()).unwrap_or(0);
    let mut grad_hidden_w = model.hidden.as_ref().map(|h| vec![0.0; h.weights.len()]);
    let mut grad_hidden_b = model.hidden.as_ref().map(|h| vec![0.0; h.bias.len()]);
    let mut grad_out: Vec<(Vec<f64>, Vec<f64>)> = model
        .outputs
        .iter()
        .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]))
        .collect();

    for (si, (sample, trace)) in batch.iter().zip(traces.iter()).enumerate() {
        let mut dtrunk = vec![0.0; trunk_dim];
        for (gi, layer) in model.outputs.iter().enumerate() {
            let Some(dz_g) = &dz[si][gi] else { continue };
            let (gw, gb) = &mut grad_out[gi];
            for (o, &d) in dz_g.iter().enumerate() {
                gb[o] += d;
                let row = o * layer.in_dim;
                for (j, &t) in trace.trunk.iter().enumerate() {
                    gw[row + j] += d * t;
                }
                if has_hidden {
                    let wrow = &layer.weights[row..row + layer.in_dim];
                    for (j, &w) in wrow.iter().enumerate() {
                        dtrunk[j] += w * d;
                    }
                }
            }
        }
        if let (Some(gw), Some(gb), Some(pre)) = (
            grad_hidden_w.as_mut(),
            grad_hidden_b.as_mut(),
            trace.hidden_pre.as_ref(),
        ) {
            for (j, (&dt, &p)) in dtrunk.iter().zip(pre.iter()).enumerate() {
                if p <= 0.0 {
                    continue;
                }
                gb[j] += dt;
                let row = j * sample.input.len();
                for (k, &x) in sample.input.iter().enumerate() {
                    gw[row + k] += dt * x;
                }
            }
        }
    }

    let mut grads: Vec<Vec<f64>> = Vec::new();
    if let (Some(gw), Some(gb)) = (grad_hidden_w, grad_hidden_b) {
        grads.push(gw);
        grads.push(gb);
    }
    for (gw, gb) in grad_out {
        grads.push(gw);
        grads.push(gb);
    }
    let mut params = model.param_blocks_mut();
    state.apply(&mut params, &grads, learning_rate)?;
    Ok(Some(total_loss))
}

/// The task's challenge metric on the labeled detected frames of a split:
/// P_EXPR for expression, P_VA for valence/arousal, P_AU at threshold 0.5
/// for action units, and their sum for the multi-task model.
pub fn validation_metric(model: &HeadModel, dataset: &Dataset, kind: FeatureKind) -> Result<f64> {
    let mut expr_pred = Vec::new();
    let mut expr_true = Vec::new();
    let mut au_pred = Vec::new();
    let mut au_true = Vec::new();
    let mut va_pred = Vec::new();
    let mut va_true = Vec::new();

    for track in &dataset.tracks {
        for (features, labels) in &track.frames {
            if !features.detected || labels.is_empty() {
                continue;
            }
            let needs_forward = (labels.expression.is_some()
                && model.output_layer(OutputGroup::Expression).is_some())
                || (labels.action_units.is_some()
                    && model.output_layer(OutputGroup::ActionUnits).is_some())
                || (labels.valence_arousal.is_some()
                    && model.output_layer(OutputGroup::ValenceArousal).is_some());
            if !needs_forward {
                continue;
            }
            let pred = crate::model::forward(model, &kind.input_of(features))?;
            if let (Some(e), Some(probs)) = (labels.expression, &pred.expr_probs) {
                expr_pred.push(crate::data::argmax(probs));
                expr_true.push(e as usize);
            }
            if let (Some(bits), Some(probs)) = (&labels.action_units, &pred.au_probs) {
                au_pred.push(probs.clone());
                au_true.push(*bits);
            }
            if let (Some((v, a)), Some(p)) = (labels.valence_arousal, pred.valence_arousal) {
                va_pred.push(p);
                va_true.push((v as f64, a as f64));
            }
        }
    }

    let mut metric = 0.0;
    let mut any = false;
    if !expr_true.is_empty() {
        metric += metrics::macro_f1(&expr_pred, &expr_true, NUM_EXPRESSIONS).1;
        any = true;
    }
    if !au_true.is_empty() {
        metric += metrics::au_f1(&au_pred, &au_true, &[0.5; NUM_ACTION_UNITS]).1;
        any = true;
    }
    if va_true.len() >= 2 {
        metric += metrics::va_metrics(&va_pred, &va_true)?.2;
        any = true;
    }
    if !any {
        return Err(Error::Train(
            "no labeled validation frames for the configured task".into(),
        ));
    }
    Ok(metric)
}

/// Train a head on `train_split`, early-stopping on `val_split`, and return
/// the best model with the per-epoch log.
///
/// ```
/// use affr::data::Task;
/// use affr::synth::{generate_synthetic, SyntheticSpec, TaskMix};
/// use affr::train::{single_task_arch, train, TrainConfig};
///
/// let spec = SyntheticSpec {
///     num_tracks: 2,
///     val_tracks: 1,
///     frames_per_track: 80,
///     embedding_dim: 8,
///     task_mix: TaskMix::expr_only(),
///     ..Default::default()
/// };
/// let (train_split, val_split, _) = generate_synthetic(&spec).unwrap();
/// let arch = single_task_arch(Task::Expression, 8, None).unwrap();
/// let config = TrainConfig { max_epochs: 2, ..Default::default() };
/// let (model, log) = train(&train_split, &val_split, &arch, &config).unwrap();
/// assert_eq!(log.len(), 2);
/// assert_eq!(model.arch.input_dim, 8);
/// ```
pub fn train(
    train_split: &Dataset,
    val_split: &Dataset,
    arch: &HeadArchitecture,
    config: &TrainConfig,
) -> Result<(HeadModel, Vec<EpochRecord>)> {
    config.validate()?;
    let samples = collect_samples(train_split, config.feature_kind, &arch.groups);
    if samples.is_empty() {
        return Err(Error::Train(
            "training split has no labeled detected frames for the configured task".into(),
        ));
    }
    let weights = resolve_weights(train_split, &arch.groups, config.class_weighting)?;

    let mut model = init_head(arch, config.seed)?;
    let block_lens: Vec<usize> = model
        .param_blocks_mut()
        .iter()
        .map(|(_, b)| b.len())
        .collect();
    let mut state = AdamState::new(&block_lens);
    // Shuffling uses its own stream so init and batching stay decoupled.
    let mut shuffle_rng =
        ChaCha8Rng::seed_from_u64(config.seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1));

    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut best: Option<(f64, HeadModel)> = None;
    let mut since_best = 0usize;
    let mut log = Vec::new();

    for epoch in 1..=config.max_epochs {
        let start = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            match batch_step(
                &mut model,
                &batch,
                &weights,
                &mut state,
                config.learning_rate,
            )? {
                Some(loss) => {
                    epoch_loss += loss;
                    batches += 1;
                }
                None => {
                    eprintln!("warning: epoch {epoch}: batch contributed to no task, skipped");
                }
            }
        }
        if !model.is_finite() {
            return Err(Error::Train(format!(
                "non-finite parameters after epoch {epoch}"
            )));
        }
        let train_loss = if batches > 0 {
            epoch_loss / batches as f64
        } else {
            f64::NAN
        };
        let val_metric = validation_metric(&model, val_split, config.feature_kind)?;
        log.push(EpochRecord {
            epoch,
            train_loss,
            val_metric,
            wall_secs: start.elapsed().as_secs_f64(),
        });

        let improved = best.as_ref().is_none_or(|(m, _)| val_metric > *m);
        if improved {
            best = Some((val_metric, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }

    let (_, best_model) = best.expect("at least one epoch ran");
    Ok((best_model, log))
}

/// Train the multi-task model: joint loss `L_expr + L_va + L_au` with
/// per-frame masking, so a frame contributes only to the losses whose
/// labels exist.
pub fn train_mtl(
    train_split: &Dataset,
    val_split: &Dataset,
    arch: &HeadArchitecture,
    config: &TrainConfig,
) -> Result<(HeadModel, Vec<EpochRecord>)> {
    train(train_split, val_split, arch, config)
}

/// Architecture for a single-task head.
pub fn single_task_arch(
    task: Task,
    input_dim: usize,
    hidden_units: Option<usize>,
) -> Result<HeadArchitecture> {
    let group = match task {
        Task::Expression => OutputGroup::Expression,
        Task::ValenceArousal => OutputGroup::ValenceArousal,
        Task::ActionUnits => OutputGroup::ActionUnits,
        Task::MultiTask => {
            return HeadArchitecture::new(
                input_dim,
                hidden_units,
                vec![
                    OutputGroup::Expression,
                    OutputGroup::ValenceArousal,
                    OutputGroup::ActionUnits,
                ],
            )
        }
    };
    HeadArchitecture::new(input_dim, hidden_units, vec![group])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_synthetic, SyntheticSpec, TaskMix};

    fn expr_spec() -> SyntheticSpec {
        SyntheticSpec {
            seed: 7,
            num_tracks: 4,
            val_tracks: 2,
            frames_per_track: 400,
            embedding_dim: 12,
            task_mix: TaskMix::expr_only(),
            expr_separation: 8.0,
            va_noise_sd: 0.1,
            au_positive_rates: [0.3; 12],
            dropout_rate: 0.0,
        }
    }

    #[test]
    fn separable_expression_data_trains_to_high_f1() {
        let (train_ds, val_ds, _) = generate_synthetic(&expr_spec()).unwrap();
        let arch = single_task_arch(Task::Expression, 12, None).unwrap();
        // The split is small (1600 frames, 7 batches per epoch), so a larger
        // step size substitutes for the steps a full-size run would take.
        let config = TrainConfig {
            max_epochs: 10,
            learning_rate: 0.01,
            ..Default::default()
        };
        let (model, log) = train(&train_ds, &val_ds, &arch, &config).unwrap();
        assert!(log.last().unwrap().val_metric > 0.9 || log.iter().any(|r| r.val_metric > 0.9));
        let metric = validation_metric(&model, &val_ds, config.feature_kind).unwrap();
        assert!(metric > 0.9, "macro F1 {metric}");
    }

    #[test]
    fn same_seed_gives_identical_log_and_model() {
        let (train_ds, val_ds, _) = generate_synthetic(&expr_spec()).unwrap();
        let arch = single_task_arch(Task::Expression, 12, Some(16)).unwrap();
        let config = TrainConfig {
            max_epochs: 3,
            seed: 5,
            ..Default::default()
        };
        let (m1, l1) = train(&train_ds, &val_ds, &arch, &config).unwrap();
        let (m2, l2) = train(&train_ds, &val_ds, &arch, &config).unwrap();
        assert_eq!(m1, m2);
        let strip = |l: &[EpochRecord]| -> Vec<(usize, f64, f64)> {
            l.iter()
                .map(|r| (r.epoch, r.train_loss, r.val_metric))
                .collect()
        };
        assert_eq!(strip(&l1), strip(&l2));
    }

    #[test]
    fn loss_decreases_over_first_steps_on_fixed_batch() {
        let (train_ds, _, _) = generate_synthetic(&expr_spec()).unwrap();
        let arch = single_task_arch(Task::Expression, 12, None).unwrap();
        let samples = collect_samples(&train_ds, FeatureKind::EmbeddingsOnly, &arch.groups);
        let batch: Vec<&Sample> = samples.iter().take(64).collect();
        let weights = GroupWeights {
            expr: [1.0; 8],
            au: [1.0; 12],
        };
        let mut model = init_head(&arch, 3).unwrap();
        let lens: Vec<usize> = model
            .param_blocks_mut()
            .iter()
            .map(|(_, b)| b.len())
            .collect();
        let mut state = AdamState::new(&lens);
        let mut losses = Vec::new();
        for _ in 0..6 {
            losses.push(
                batch_step(&mut model, &batch, &weights, &mut state, 1e-3)
                    .unwrap()
                    .unwrap(),
            );
        }
        for w in losses.windows(2) {
            assert!(w[1] < w[0], "losses not decreasing: {losses:?}");
        }
    }

    #[test]
    fn mtl_with_only_expr_labels_matches_single_task_expr_layer() {
        let (train_ds, val_ds, _) = generate_synthetic(&expr_spec()).unwrap();
        let config = TrainConfig {
            max_epochs: 3,
            seed: 11,
            ..Default::default()
        };
        let expr_arch = single_task_arch(Task::Expression, 12, None).unwrap();
        let (single, _) = train(&train_ds, &val_ds, &expr_arch, &config).unwrap();
        let mtl_arch = single_task_arch(Task::MultiTask, 12, None).unwrap();
        let (joint, _) = train_mtl(&train_ds, &val_ds, &mtl_arch, &config).unwrap();
        // Groups are sorted; Expression is first in both architectures, so
        // init draws the same values and unlabeled tasks get zero gradients.
        assert_eq!(
            joint.output_layer(OutputGroup::Expression).unwrap(),
            single.output_layer(OutputGroup::Expression).unwrap()
        );
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let empty = Dataset {
            tracks: vec![],
            embedding_dim: 12,
            split: crate::data::Split::Train,
        };
        let arch = single_task_arch(Task::Expression, 12, None).unwrap();
        assert!(train(&empty, &empty, &arch, &TrainConfig::default()).is_err());
    }

    #[test]
    fn strictly_decreasing_metric_stops_after_patience() {
        // A dataset the model cannot learn (separation 0) rarely yields a
        // monotone metric, so check the contract on the log shape instead:
        // training never runs longer than best_epoch + patience.
        let mut spec = expr_spec();
        spec.expr_separation = 0.0;
        let (train_ds, val_ds, _) = generate_synthetic(&spec).unwrap();
        let arch = single_task_arch(Task::Expression, 12, None).unwrap();
        let config = TrainConfig {
            max_epochs: 20,
            patience: 2,
            ..Default::default()
        };
        let (_, log) = train(&train_ds, &val_ds, &arch, &config).unwrap();
        let best_epoch = log
            .iter()
            .max_by(|a, b| a.val_metric.partial_cmp(&b.val_metric).unwrap())
            .unwrap()
            .epoch;
        assert!(log.len() <= best_epoch + config.patience);
    }
}
