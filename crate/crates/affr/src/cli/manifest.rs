//! Run manifests: a flat `key = value` record of the command line, the
//! resolved configuration, SHA-256 digests of the inputs and the paths of
//! the outputs. Reruns with identical inputs differ only in `wall_secs`.

use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::time::Instant;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub struct Manifest {
    command: String,
    args: String,
    seed: u64,
    lines: Vec<(String, String)>,
    started: Instant,
}

impl Manifest {
    pub fn start(command: &str, argv: &[String], seed: u64) -> Self {
        Manifest {
            command: command.to_string(),
            args: argv.join(" "),
            seed,
            lines: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn config(&mut self, key: &str, value: impl Display) {
        self.lines
            .push((format!("config.{key}"), value.to_string()));
    }

    /// Record an input file with its content digest.
    pub fn input_file(&mut self, path: &Path) -> Result<()> {
        let digest = file_digest(path)?;
        self.lines
            .push((format!("input.{}", path.display()), digest));
        Ok(())
    }

    /// Record an input directory: one digest over every regular file under
    /// it, visited in sorted relative-path order.
    pub fn input_dir(&mut self, path: &Path) -> Result<()> {
        let mut files = Vec::new();
        collect_files(path, &mut files)?;
        files.sort();
        let mut hasher = Sha256::new();
        for file in &files {
            let rel = file.strip_prefix(path).unwrap_or(file);
            hasher.update(rel.to_string_lossy().as_bytes());
            hasher.update([0]);
            let bytes = fs::read(file).map_err(|e| Error::io(file, e))?;
            hasher.update(&bytes);
        }
        let digest = format!("sha256:{:x} ({} files)", hasher.finalize(), files.len());
        self.lines
            .push((format!("input.{}", path.display()), digest));
        Ok(())
    }

    pub fn output(&mut self, name: &str, path: &Path) {
        self.lines
            .push((format!("output.{name}"), path.display().to_string()));
    }

    /// Write `manifest.txt` into `out_dir`, creating it if needed.
    pub fn write(&self, out_dir: &Path) -> Result<()> {
        fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let mut text = String::new();
        text.push_str("format = affr-manifest\n");
        text.push_str(&format!("tool_version = {}\n", super::TOOL_VERSION));
        text.push_str(&format!("command = {}\n", self.command));
        text.push_str(&format!("args = {}\n", self.args));
        text.push_str(&format!("seed = {}\n", self.seed));
        for (k, v) in &self.lines {
            text.push_str(&format!("{k} = {v}\n"));
        }
        text.push_str(&format!(
            "wall_secs = {:.3}\n",
            self.started.elapsed().as_secs_f64()
        ));
        let path = out_dir.join("manifest.txt");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(format!("sha256:{:x}", Sha256::digest(&bytes)))
}

fn collect_files(dir: &Path, out: &mut Vec<std::path::PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}
