//! Challenge-style annotation text files: one header line, then one line
//! per frame. `-1` marks an invalid expression or action-unit frame; a
//! valence/arousal pair with either coordinate outside [-1, 1] marks an
//! invalid VA frame. Those frames come back as absent labels.

use std::fs;
use std::path::Path;

use crate::data::{ACTION_UNIT_NAMES, EXPRESSION_NAMES, NUM_ACTION_UNITS, NUM_EXPRESSIONS};
use crate::error::{Error, Result};

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(|l| l.to_string()).collect())
}

fn parse_err(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

/// Parse an expression annotation file into per-frame optional class ids.
pub fn parse_expression_annotations(path: &Path) -> Result<Vec<Option<u8>>> {
    let lines = read_lines(path)?;
    let mut out = Vec::with_capacity(lines.len().saturating_sub(1));
    for (i, line) in lines.iter().enumerate().skip(1) {
        let v: i32 = line
            .trim()
            .parse()
            .map_err(|_| parse_err(path, i + 1, format!("expected integer, got '{line}'")))?;
        match v {
            -1 => out.push(None),
            0..=7 => out.push(Some(v as u8)),
            other => {
                return Err(parse_err(
                    path,
                    i + 1,
                    format!("expression id {other} outside {{-1, 0..7}}"),
                ))
            }
        }
    }
    Ok(out)
}

/// Parse a valence/arousal annotation file into per-frame optional pairs.
pub fn parse_va_annotations(path: &Path) -> Result<Vec<Option<(f32, f32)>>> {
    let lines = read_lines(path)?;
    let mut out = Vec::with_capacity(lines.len().saturating_sub(1));
    for (i, line) in lines.iter().enumerate().skip(1) {
        let mut fields = line.trim().split(',');
        let mut next = |name: &str| -> Result<f32> {
            fields
                .next()
                .ok_or_else(|| parse_err(path, i + 1, format!("missing {name}")))?
                .trim()
                .parse()
                .map_err(|_| parse_err(path, i + 1, format!("non-numeric {name} in '{line}'")))
        };
        let v = next("valence")?;
        let a = next("arousal")?;
        if (-1.0..=1.0).contains(&v) && (-1.0..=1.0).contains(&a) {
            out.push(Some((v, a)));
        } else {
            out.push(None);
        }
    }
    Ok(out)
}

/// Parse an action-unit annotation file into per-frame optional 12-bit
/// vectors. Any -1 component invalidates the whole frame.
pub fn parse_au_annotations(path: &Path) -> Result<Vec<Option<[u8; NUM_ACTION_UNITS]>>> {
    let lines = read_lines(path)?;
    let mut out = Vec::with_capacity(lines.len().saturating_sub(1));
    for (i, line) in lines.iter().enumerate().skip(1) {
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != NUM_ACTION_UNITS {
            return Err(parse_err(
                path,
                i + 1,
                format!("expected 12 fields, got {}", fields.len()),
            ));
        }
        let mut bits = [0u8; NUM_ACTION_UNITS];
        let mut absent = false;
        for (j, field) in fields.iter().enumerate() {
            let v: i32 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(path, i + 1, format!("non-integer field '{field}'")))?;
            match v {
                -1 => absent = true,
                0 | 1 => bits[j] = v as u8,
                other => {
                    return Err(parse_err(
                        path,
                        i + 1,
                        format!("AU value {other} outside {{-1, 0, 1}}"),
                    ))
                }
            }
        }
        out.push(if absent { None } else { Some(bits) });
    }
    Ok(out)
}

pub(crate) fn expression_header() -> String {
    EXPRESSION_NAMES.join(",")
}

pub(crate) fn au_header() -> String {
    ACTION_UNIT_NAMES.join(",")
}

/// Write per-frame expression labels (absent -> -1). Inverse of
/// [`parse_expression_annotations`].
pub fn write_expression_annotations(path: &Path, rows: &[Option<u8>]) -> Result<()> {
    let mut text = expression_header();
    text.push('\n');
    for row in rows {
        match row {
            Some(v) => text.push_str(&format!("{v}\n")),
            None => text.push_str("-1\n"),
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Write per-frame VA labels (absent -> -5,-5). Values use the shortest
/// decimal form that parses back to the same 32-bit real.
pub fn write_va_annotations(path: &Path, rows: &[Option<(f32, f32)>]) -> Result<()> {
    let mut text = "valence,arousal\n".to_string();
    for row in rows {
        match row {
            Some((v, a)) => text.push_str(&format!("{v:?},{a:?}\n")),
            None => text.push_str("-5,-5\n"),
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Write per-frame AU labels (absent -> all -1).
pub fn write_au_annotations(path: &Path, rows: &[Option<[u8; NUM_ACTION_UNITS]>]) -> Result<()> {
    let mut text = au_header();
    text.push('\n');
    for row in rows {
        match row {
            Some(bits) => {
                let line: Vec<String> = bits.iter().map(|b| b.to_string()).collect();
                text.push_str(&line.join(","));
                text.push('\n');
            }
            None => {
                text.push_str(&["-1"; NUM_ACTION_UNITS].join(","));
                text.push('\n');
            }
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

// Keep the constant count honest at compile time.
const _: () = assert!(EXPRESSION_NAMES.len() == NUM_EXPRESSIONS);

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn write_tmp(content: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.txt");
        fs::write(&path, content).unwrap();
        (dir, path)
    }

    #[test]
    fn expression_lines_map_to_classes_and_absent() {
        let (_d, p) = write_tmp("neutral,anger,...\n0\n4\n-1\n");
        let got = parse_expression_annotations(&p).unwrap();
        assert_eq!(got, vec![Some(0), Some(4), None]);
        assert_eq!(EXPRESSION_NAMES[0], "neutral");
        assert_eq!(EXPRESSION_NAMES[4], "happiness");
    }

    #[test]
    fn empty_body_gives_empty_labels() {
        let (_d, p) = write_tmp("header\n");
        assert!(parse_expression_annotations(&p).unwrap().is_empty());
    }

    #[test]
    fn out_of_range_expression_reports_line() {
        let (_d, p) = write_tmp("h\n0\n9\n");
        match parse_expression_annotations(&p).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn va_pairs_parse_and_sentinel_maps_to_absent() {
        let (_d, p) = write_tmp("valence,arousal\n0.5,-0.25\n-5.0,-5.0\n0.0,0.0\n");
        let got = parse_va_annotations(&p).unwrap();
        assert_eq!(got, vec![Some((0.5, -0.25)), None, Some((0.0, 0.0))]);
    }

    #[test]
    fn non_numeric_va_reports_line() {
        let (_d, p) = write_tmp("h\nx,0.2\n");
        assert!(matches!(
            parse_va_annotations(&p),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn au_bits_parse_in_header_order() {
        let (_d, p) = write_tmp("h\n0,1,0,0,0,0,1,0,0,0,1,0\n");
        let got = parse_au_annotations(&p).unwrap();
        let bits = got[0].unwrap();
        assert_eq!(bits[1], 1); // AU2
        assert_eq!(bits[6], 1); // AU12
        assert_eq!(bits[10], 1); // AU25
        assert_eq!(bits.iter().sum::<u8>(), 3);
    }

    #[test]
    fn au_sentinel_and_arity() {
        let minus: Vec<&str> = vec!["-1"; 12];
        let (_d, p) = write_tmp(&format!("h\n{}\n", minus.join(",")));
        assert_eq!(parse_au_annotations(&p).unwrap(), vec![None]);

        let (_d2, p2) = write_tmp("h\n0,1,0,0,0,0,1,0,0,0,1\n");
        assert!(matches!(
            parse_au_annotations(&p2),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn writers_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.txt");
        let rows = vec![Some(3), None, Some(7)];
        write_expression_annotations(&p, &rows).unwrap();
        assert_eq!(parse_expression_annotations(&p).unwrap(), rows);

        let p = dir.path().join("va.txt");
        let rows = vec![Some((0.123_456_79_f32, -1.0)), None];
        write_va_annotations(&p, &rows).unwrap();
        assert_eq!(parse_va_annotations(&p).unwrap(), rows);

        let p = dir.path().join("au.txt");
        let mut bits = [0u8; 12];
        bits[5] = 1;
        let rows = vec![Some(bits), None];
        write_au_annotations(&p, &rows).unwrap();
        assert_eq!(parse_au_annotations(&p).unwrap(), rows);
    }
}
