//! Challenge-format prediction files: one text file per video, a header
//! line, then one line per frame.

use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{Task, TaskPrediction, NUM_ACTION_UNITS};
use crate::error::{Error, Result};

use super::annotations::{au_header, expression_header};

/// Complete per-frame predictions for one video (after interpolation).
#[derive(Debug, Clone)]
pub struct PredictedTrack {
    pub video_id: String,
    pub predictions: Vec<TaskPrediction>,
}

/// Write one prediction file per track. EXPR emits the argmax class id, AU
/// emits 12 comma-separated bits after thresholding, VA emits "v,a" with 6
/// decimal places. Returns the written paths in track order.
pub fn write_predictions(
    tracks: &[PredictedTrack],
    task: Task,
    au_thresholds: &[f64; NUM_ACTION_UNITS],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut paths = Vec::with_capacity(tracks.len());
    for track in tracks {
        let mut text = String::new();
        match task {
            Task::Expression => text.push_str(&expression_header()),
            Task::ActionUnits => text.push_str(&au_header()),
            Task::ValenceArousal => text.push_str("valence,arousal"),
            Task::MultiTask => {
                return Err(Error::Config(
                    "write_predictions takes a single task; write each task separately".into(),
                ))
            }
        }
        text.push('\n');

        for (i, pred) in track.predictions.iter().enumerate() {
            let missing = || {
                Error::Other(format!(
                    "missing {} prediction for video {} frame {}",
                    task.name(),
                    track.video_id,
                    i
                ))
            };
            match task {
                Task::Expression => {
                    let class = pred.expr_argmax().ok_or_else(missing)?;
                    text.push_str(&format!("{class}\n"));
                }
                Task::ActionUnits => {
                    let probs = pred.au_probs.as_ref().ok_or_else(missing)?;
                    let bits: Vec<&str> = probs
                        .iter()
                        .zip(au_thresholds.iter())
                        .map(|(&p, &t)| if p >= t { "1" } else { "0" })
                        .collect();
                    text.push_str(&bits.join(","));
                    text.push('\n');
                }
                Task::ValenceArousal => {
                    let (v, a) = pred.valence_arousal.ok_or_else(missing)?;
                    text.push_str(&format!("{v:.6},{a:.6}\n"));
                }
                Task::MultiTask => unreachable!(),
            }
        }

        let path = out_dir.join(format!("{}.txt", track.video_id));
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}
