//! End-to-end evaluation: predict every frame, fill undetected frames,
//! smooth, threshold, and score. Tracks are processed in parallel with an
//! ordered merge, so results do not depend on the worker count.

use rayon::prelude::*;

use crate::data::{Dataset, FeatureKind, TaskPrediction, NUM_ACTION_UNITS, NUM_EXPRESSIONS};
use crate::error::{Error, Result};
use crate::io::PredictedTrack;
use crate::metrics::{self, MetricsReport};
use crate::model::HeadModel;
use crate::postprocess::{interpolate_missing, smooth, AUThresholds, FilterKind, SmoothingConfig};

/// Predict one dataset: forward on detected frames, interpolate the gaps,
/// smooth. Returns complete per-frame predictions per track, in track order.
pub fn predict_dataset(
    model: &HeadModel,
    dataset: &Dataset,
    kind: FeatureKind,
    smoothing: &SmoothingConfig,
) -> Result<Vec<PredictedTrack>> {
    if kind.input_dim(dataset.embedding_dim) != model.arch.input_dim {
        return Err(Error::Shape(format!(
            "checkpoint expects input_dim {}, dataset with D={} and {:?} features provides {}",
            model.arch.input_dim,
            dataset.embedding_dim,
            kind,
            kind.input_dim(dataset.embedding_dim)
        )));
    }
    dataset
        .tracks
        .par_iter()
        .map(|track| {
            let raw = crate::model::predict_track(model, track, kind)?;
            let filled = interpolate_missing(&raw)
                .map_err(|e| Error::Other(format!("track {}: {e}", track.video_id)))?;
            let smoothed = smooth(&filled, smoothing)?;
            Ok(PredictedTrack {
                video_id: track.video_id.clone(),
                predictions: smoothed,
            })
        })
        .collect()
}

/// Score complete per-frame predictions against the dataset's labels.
/// Components are present iff both the predictions and the labels carry the
/// task; P_MTL is filled when all three are.
pub fn metrics_from_predictions(
    dataset: &Dataset,
    predicted: &[PredictedTrack],
    thresholds: &AUThresholds,
    smoothing_used: String,
) -> Result<MetricsReport> {
    if predicted.len() != dataset.tracks.len() {
        return Err(Error::Shape("prediction/track count mismatch".into()));
    }
    let mut expr_pred = Vec::new();
    let mut expr_true = Vec::new();
    let mut au_pred = Vec::new();
    let mut au_true = Vec::new();
    let mut va_pred = Vec::new();
    let mut va_true = Vec::new();

    for (track, preds) in dataset.tracks.iter().zip(predicted.iter()) {
        if preds.predictions.len() != track.frames.len() {
            return Err(Error::Shape(format!(
                "track {}: {} predictions for {} frames",
                track.video_id,
                preds.predictions.len(),
                track.frames.len()
            )));
        }
        for ((_, labels), pred) in track.frames.iter().zip(preds.predictions.iter()) {
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

    let mut report = MetricsReport {
        smoothing_used,
        ..Default::default()
    };
    if !expr_true.is_empty() {
        let (per_class, macro_mean) = metrics::macro_f1(&expr_pred, &expr_true, NUM_EXPRESSIONS);
        report.p_expr = Some(macro_mean);
        report.per_class_f1 = Some(per_class);
        report.accuracy = Some(metrics::unbalanced_accuracy(&expr_pred, &expr_true));
    }
    if !au_true.is_empty() {
        let (per_au, p_au) = metrics::au_f1(&au_pred, &au_true, &thresholds.0);
        report.p_au = Some(p_au);
        report.per_au_f1 = Some(per_au);
        report.thresholds_used = Some(thresholds.0.to_vec());
    }
    if va_true.len() >= 2 {
        let (ccc_v, ccc_a, p_va) = metrics::va_metrics(&va_pred, &va_true)?;
        report.ccc_v = Some(ccc_v);
        report.ccc_a = Some(ccc_a);
        report.p_va = Some(p_va);
    }
    if report.p_expr.is_none() && report.p_au.is_none() && report.p_va.is_none() {
        return Err(Error::Other(
            "evaluation produced no metric: no labels overlap the model's outputs".into(),
        ));
    }
    Ok(report.finish())
}

/// Predict, post-process and score in one call.
pub fn evaluate(
    model: &HeadModel,
    dataset: &Dataset,
    kind: FeatureKind,
    smoothing: &SmoothingConfig,
    thresholds: &AUThresholds,
) -> Result<MetricsReport> {
    let predicted = predict_dataset(model, dataset, kind, smoothing)?;
    metrics_from_predictions(dataset, &predicted, thresholds, smoothing.describe())
}

/// The smoothing grid reported by the eval sweep: frame-level predictions
/// plus mean and median filters with kernels 5 and 15.
pub fn sweep_configs() -> Vec<SmoothingConfig> {
    vec![
        SmoothingConfig::identity(),
        SmoothingConfig::new(FilterKind::Mean, 5).unwrap(),
        SmoothingConfig::new(FilterKind::Median, 5).unwrap(),
        SmoothingConfig::new(FilterKind::Mean, 15).unwrap(),
        SmoothingConfig::new(FilterKind::Median, 15).unwrap(),
    ]
}

/// Evaluate the whole smoothing grid. Interpolation runs once; each grid
/// row smooths the same frame-level predictions.
pub fn sweep_smoothing(
    model: &HeadModel,
    dataset: &Dataset,
    kind: FeatureKind,
    thresholds: &AUThresholds,
) -> Result<Vec<(SmoothingConfig, MetricsReport)>> {
    let frame_level = predict_dataset(model, dataset, kind, &SmoothingConfig::identity())?;
    sweep_predictions(dataset, &frame_level, thresholds)
}

/// Sweep over pre-computed frame-level predictions.
pub fn sweep_predictions(
    dataset: &Dataset,
    frame_level: &[PredictedTrack],
    thresholds: &AUThresholds,
) -> Result<Vec<(SmoothingConfig, MetricsReport)>> {
    sweep_configs()
        .into_iter()
        .map(|config| {
            let smoothed: Vec<PredictedTrack> = frame_level
                .par_iter()
                .map(|t| {
                    Ok(PredictedTrack {
                        video_id: t.video_id.clone(),
                        predictions: smooth(&t.predictions, &config)?,
                    })
                })
                .collect::<Result<_>>()?;
            let report =
                metrics_from_predictions(dataset, &smoothed, thresholds, config.describe())?;
            Ok((config, report))
        })
        .collect()
}

/// Pooled per-frame AU probabilities and labels of the detected frames, the
/// inputs threshold tuning needs.
pub fn collect_au_validation(
    dataset: &Dataset,
    predicted: &[PredictedTrack],
) -> (Vec<Vec<f64>>, Vec<[u8; NUM_ACTION_UNITS]>) {
    let mut probs = Vec::new();
    let mut labels = Vec::new();
    for (track, preds) in dataset.tracks.iter().zip(predicted.iter()) {
        for ((_, l), p) in track.frames.iter().zip(preds.predictions.iter()) {
            if let (Some(bits), Some(pr)) = (&l.action_units, &p.au_probs) {
                probs.push(pr.clone());
                labels.push(*bits);
            }
        }
    }
    (probs, labels)
}

/// Expose complete predictions for a single track without a model, for
/// callers that already have frame-level outputs.
pub fn postprocess_track(
    raw: &[Option<TaskPrediction>],
    smoothing: &SmoothingConfig,
) -> Result<Vec<TaskPrediction>> {
    let filled = interpolate_missing(raw)?;
    smooth(&filled, smoothing)
}
