//! Binary per-video feature file, little-endian throughout.
//!
//! Layout: header (magic "AFFR", version u16, frame_count u32, D u32,
//! C u32 = 8, flags u16 with bit 0 = has-scores), then `frame_count` rows
//! of (frame_index u32, detected u8, D f32 embeddings, 8 f32 scores when
//! bit 0 is set). Numbers survive a write/read cycle bit-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::data::{FrameFeatures, NUM_EXPRESSIONS};
use crate::error::{Error, Result};

pub const FEATURE_FILE_EXT: &str = "affr";
pub const FEATURE_MAGIC: [u8; 4] = *b"AFFR";
pub const FEATURE_FORMAT_VERSION: u16 = 1;

const FLAG_HAS_SCORES: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureFileHeader {
    pub version: u16,
    pub frame_count: u32,
    pub embedding_dim: u32,
    pub score_count: u32,
    pub flags: u16,
}

impl FeatureFileHeader {
    pub fn has_scores(&self) -> bool {
        self.flags & FLAG_HAS_SCORES != 0
    }
}

struct Cursor<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Cursor<R> {
    fn read_exact(&mut self, buf: &mut [u8], path: &Path, what: &str) -> Result<()> {
        let at = self.offset;
        self.inner.read_exact(buf).map_err(|_| Error::Format {
            path: path.to_path_buf(),
            offset: at,
            reason: format!("truncated while reading {what}"),
        })?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    fn read_u16(&mut self, path: &Path, what: &str) -> Result<u16> {
        let mut b = [0u8; 2];
        self.read_exact(&mut b, path, what)?;
        Ok(u16::from_le_bytes(b))
    }

    fn read_u32(&mut self, path: &Path, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_exact(&mut b, path, what)?;
        Ok(u32::from_le_bytes(b))
    }
}

/// Read one feature file. Header mismatches and truncation report the byte
/// offset where the problem was found.
pub fn read_feature_file(path: &Path) -> Result<(FeatureFileHeader, Vec<FrameFeatures>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = Cursor {
        inner: BufReader::new(file),
        offset: 0,
    };

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic, path, "magic")?;
    if magic != FEATURE_MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            reason: format!("bad magic {magic:?}, expected \"AFFR\""),
        });
    }
    let version = r.read_u16(path, "version")?;
    if version != FEATURE_FORMAT_VERSION {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 4,
            reason: format!("unsupported version {version}, expected {FEATURE_FORMAT_VERSION}"),
        });
    }
    let frame_count = r.read_u32(path, "frame_count")?;
    let embedding_dim = r.read_u32(path, "embedding_dim")?;
    let score_count = r.read_u32(path, "score_count")?;
    if score_count as usize != NUM_EXPRESSIONS {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 14,
            reason: format!("C={score_count}, this format fixes C=8"),
        });
    }
    let flags = r.read_u16(path, "flags")?;
    let header = FeatureFileHeader {
        version,
        frame_count,
        embedding_dim,
        score_count,
        flags,
    };

    let d = embedding_dim as usize;
    let floats_per_row = d + if header.has_scores() {
        NUM_EXPRESSIONS
    } else {
        0
    };
    let mut row_buf = vec![0u8; 4 + 1 + 4 * floats_per_row];
    let mut frames = Vec::with_capacity(frame_count as usize);
    for row in 0..frame_count {
        r.read_exact(&mut row_buf, path, &format!("row {row}"))?;
        let frame_index = u32::from_le_bytes(row_buf[0..4].try_into().unwrap());
        let detected = match row_buf[4] {
            0 => false,
            1 => true,
            other => {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    offset: r.offset - row_buf.len() as u64 + 4,
                    reason: format!("detected flag must be 0 or 1, got {other}"),
                })
            }
        };
        let mut floats = row_buf[5..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
        let embedding: Vec<f32> = floats.by_ref().take(d).collect();
        let scores: Vec<f32> = if header.has_scores() {
            floats.collect()
        } else if detected {
            // Scores absent from the file: substitute the uniform simplex.
            vec![1.0 / NUM_EXPRESSIONS as f32; NUM_EXPRESSIONS]
        } else {
            vec![0.0; NUM_EXPRESSIONS]
        };
        frames.push(FrameFeatures {
            frame_index,
            detected,
            embedding,
            scores,
        });
    }

    // Declared frame_count must equal the rows present: one trailing byte
    // means the file does not match its header.
    let mut probe = [0u8; 1];
    if r.inner.read(&mut probe).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: r.offset,
            reason: format!("trailing data after declared {frame_count} rows"),
        });
    }

    Ok((header, frames))
}

/// Write one feature file (always with scores present).
pub fn write_feature_file(
    path: &Path,
    frames: &[FrameFeatures],
    embedding_dim: usize,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path, e);

    w.write_all(&FEATURE_MAGIC).map_err(io_err)?;
    w.write_all(&FEATURE_FORMAT_VERSION.to_le_bytes())
        .map_err(io_err)?;
    w.write_all(&(frames.len() as u32).to_le_bytes())
        .map_err(io_err)?;
    w.write_all(&(embedding_dim as u32).to_le_bytes())
        .map_err(io_err)?;
    w.write_all(&(NUM_EXPRESSIONS as u32).to_le_bytes())
        .map_err(io_err)?;
    w.write_all(&FLAG_HAS_SCORES.to_le_bytes())
        .map_err(io_err)?;

    for frame in frames {
        if frame.detected && frame.embedding.len() != embedding_dim {
            return Err(Error::Shape(format!(
                "frame {} embedding length {} != declared D={}",
                frame.frame_index,
                frame.embedding.len(),
                embedding_dim
            )));
        }
        w.write_all(&frame.frame_index.to_le_bytes())
            .map_err(io_err)?;
        w.write_all(&[frame.detected as u8]).map_err(io_err)?;
        for i in 0..embedding_dim {
            let v = frame.embedding.get(i).copied().unwrap_or(0.0);
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
        for i in 0..NUM_EXPRESSIONS {
            let v = frame.scores.get(i).copied().unwrap_or(0.0);
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}
