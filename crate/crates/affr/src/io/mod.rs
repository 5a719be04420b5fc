//! File ingest and output: binary per-video feature files, challenge-style
//! annotation text files, prediction files, and whole-dataset save/load.
//!
//! Sentinel conventions (label `-1`, out-of-range valence/arousal pairs)
//! are converted to absent labels here and nowhere else.

mod annotations;
mod feature_file;
mod predictions;

pub use annotations::{
    parse_au_annotations, parse_expression_annotations, parse_va_annotations, write_au_annotations,
    write_expression_annotations, write_va_annotations,
};
pub use feature_file::{
    read_feature_file, write_feature_file, FeatureFileHeader, FEATURE_FILE_EXT,
    FEATURE_FORMAT_VERSION,
};
pub use predictions::{write_predictions, PredictedTrack};

use std::fs;
use std::path::Path;

use crate::data::{Dataset, FrameLabels, Split, Task, VideoTrack};
use crate::error::{Error, Result};

/// Load every feature file in `features_dir`, joining labels from
/// `annotations_dir` when given. One `VideoTrack` per feature file, labels
/// joined by frame index.
///
/// For a single task, `annotations_dir` may either contain the task's files
/// directly or hold them in a subdirectory named after the task (`expr/`,
/// `va/`, `au/`). For [`Task::MultiTask`] the subdirectory layout is
/// required and every present subdirectory is joined.
pub fn load_features(
    features_dir: &Path,
    annotations_dir: Option<&Path>,
    task: Task,
    split: Split,
) -> Result<Dataset> {
    let mut feature_paths: Vec<_> = fs::read_dir(features_dir)
        .map_err(|e| Error::io(features_dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == FEATURE_FILE_EXT))
        .collect();
    feature_paths.sort();
    if feature_paths.is_empty() {
        return Err(Error::Other(format!(
            "no .{} feature files in {}",
            FEATURE_FILE_EXT,
            features_dir.display()
        )));
    }

    let mut tracks = Vec::with_capacity(feature_paths.len());
    let mut embedding_dim = None;
    for path in &feature_paths {
        let video_id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        let (header, frames) = read_feature_file(path)?;
        match embedding_dim {
            None => embedding_dim = Some(header.embedding_dim as usize),
            Some(d) if d != header.embedding_dim as usize => {
                return Err(Error::Shape(format!(
                    "feature file {} declares D={}, dataset has D={}",
                    path.display(),
                    header.embedding_dim,
                    d
                )))
            }
            _ => {}
        }

        let labels = match annotations_dir {
            Some(dir) => load_labels(dir, &video_id, task, frames.len())?,
            None => vec![FrameLabels::default(); frames.len()],
        };
        let mut joined = Vec::with_capacity(frames.len());
        for features in frames {
            let idx = features.frame_index as usize;
            let label = labels.get(idx).cloned().ok_or_else(|| Error::Join {
                video: video_id.clone(),
                reason: format!(
                    "frame index {idx} has no annotation line ({} labeled frames)",
                    labels.len()
                ),
            })?;
            joined.push((features, label));
        }
        tracks.push(VideoTrack {
            video_id,
            frames: joined,
        });
    }

    Ok(Dataset {
        tracks,
        embedding_dim: embedding_dim.unwrap_or(0),
        split,
    })
}

fn task_subdir(dir: &Path, task: Task) -> std::path::PathBuf {
    let sub = dir.join(task.name());
    if sub.is_dir() {
        sub
    } else {
        dir.to_path_buf()
    }
}

fn load_labels(
    annotations_dir: &Path,
    video_id: &str,
    task: Task,
    frame_count: usize,
) -> Result<Vec<FrameLabels>> {
    let mut labels = vec![FrameLabels::default(); frame_count];
    let file_name = format!("{video_id}.txt");

    let mut join_one = |task: Task| -> Result<()> {
        let path = task_subdir(annotations_dir, task).join(&file_name);
        if !path.exists() {
            return Err(Error::Join {
                video: video_id.to_string(),
                reason: format!("annotation file {} not found", path.display()),
            });
        }
        match task {
            Task::Expression => {
                for (i, v) in parse_expression_annotations(&path)?.into_iter().enumerate() {
                    if let Some(slot) = labels.get_mut(i) {
                        slot.expression = v;
                    }
                }
            }
            Task::ValenceArousal => {
                for (i, v) in parse_va_annotations(&path)?.into_iter().enumerate() {
                    if let Some(slot) = labels.get_mut(i) {
                        slot.valence_arousal = v;
                    }
                }
            }
            Task::ActionUnits => {
                for (i, v) in parse_au_annotations(&path)?.into_iter().enumerate() {
                    if let Some(slot) = labels.get_mut(i) {
                        slot.action_units = v;
                    }
                }
            }
            Task::MultiTask => unreachable!(),
        }
        Ok(())
    };

    match task {
        Task::MultiTask => {
            for t in [Task::Expression, Task::ValenceArousal, Task::ActionUnits] {
                if annotations_dir.join(t.name()).is_dir() {
                    join_one(t)?;
                }
            }
        }
        single => join_one(single)?,
    }
    Ok(labels)
}

/// Write a dataset as a features directory plus per-task annotation
/// subdirectories. Inverse of [`load_dataset`].
pub fn save_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    let features_dir = dir.join("features");
    fs::create_dir_all(&features_dir).map_err(|e| Error::io(&features_dir, e))?;
    let has_expr = dataset
        .tracks
        .iter()
        .any(|t| t.frames.iter().any(|(_, l)| l.expression.is_some()));
    let has_va = dataset
        .tracks
        .iter()
        .any(|t| t.frames.iter().any(|(_, l)| l.valence_arousal.is_some()));
    let has_au = dataset
        .tracks
        .iter()
        .any(|t| t.frames.iter().any(|(_, l)| l.action_units.is_some()));

    for track in &dataset.tracks {
        let features: Vec<_> = track.frames.iter().map(|(f, _)| f.clone()).collect();
        write_feature_file(
            &features_dir.join(format!("{}.{}", track.video_id, FEATURE_FILE_EXT)),
            &features,
            dataset.embedding_dim,
        )?;
        let file_name = format!("{}.txt", track.video_id);
        if has_expr {
            let sub = dir.join("annotations").join("expr");
            fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
            let rows: Vec<_> = track.frames.iter().map(|(_, l)| l.expression).collect();
            write_expression_annotations(&sub.join(&file_name), &rows)?;
        }
        if has_va {
            let sub = dir.join("annotations").join("va");
            fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
            let rows: Vec<_> = track
                .frames
                .iter()
                .map(|(_, l)| l.valence_arousal)
                .collect();
            write_va_annotations(&sub.join(&file_name), &rows)?;
        }
        if has_au {
            let sub = dir.join("annotations").join("au");
            fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
            let rows: Vec<_> = track.frames.iter().map(|(_, l)| l.action_units).collect();
            write_au_annotations(&sub.join(&file_name), &rows)?;
        }
    }
    Ok(())
}

/// Load a dataset saved by [`save_dataset`].
pub fn load_dataset(dir: &Path, task: Task, split: Split) -> Result<Dataset> {
    let annotations = dir.join("annotations");
    load_features(
        &dir.join("features"),
        annotations.is_dir().then_some(annotations.as_path()),
        task,
        split,
    )
}
