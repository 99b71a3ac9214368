//! Feature CSV format: a `hop_seconds=...,bins=...,origin=...` header line
//! followed by one comma-separated row per frame. Lines starting with `#`
//! are comments and are skipped on read.

use std::io::{BufRead, Write};
use std::path::Path;

use super::{FeatureSequence, Origin};
use crate::error::{Error, Result};

pub fn save_features_csv(seq: &FeatureSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_features_csv(seq, &mut w).map_err(|e| Error::io(path, e))
}

/// Writes the header and data rows to any sink; callers may have written
/// `#` comment lines first.
pub fn write_features_csv(seq: &FeatureSequence, w: &mut impl Write) -> std::io::Result<()> {
    writeln!(
        w,
        "hop_seconds={},bins={},origin={}",
        seq.hop_seconds,
        seq.bins(),
        seq.origin.as_str()
    )?;
    for row in seq.rows() {
        let mut first = true;
        for v in row {
            if !first {
                write!(w, ",")?;
            }
            write!(w, "{v}")?;
            first = false;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn load_features_csv(path: impl AsRef<Path>) -> Result<FeatureSequence> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_features_csv(std::io::BufReader::new(file), path)
}

pub fn read_features_csv(r: impl BufRead, path: &Path) -> Result<FeatureSequence> {
    let malformed = |line: usize, detail: String| Error::MalformedCsv {
        path: path.to_path_buf(),
        line,
        detail,
    };

    let mut header: Option<(f64, usize, Origin)> = None;
    let mut rows: Vec<f64> = Vec::new();
    let mut n_frames = 0usize;

    for (idx, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }

        match header {
            None => {
                let mut hop = None;
                let mut bins = None;
                let mut origin = None;
                for field in trimmed.split(',') {
                    let (key, value) = field
                        .split_once('=')
                        .ok_or_else(|| malformed(line_no, format!("bad header field `{field}`")))?;
                    match key {
                        "hop_seconds" => {
                            hop = Some(value.parse::<f64>().map_err(|_| {
                                malformed(line_no, format!("bad hop_seconds `{value}`"))
                            })?)
                        }
                        "bins" => {
                            bins = Some(value.parse::<usize>().map_err(|_| {
                                malformed(line_no, format!("bad bins `{value}`"))
                            })?)
                        }
                        "origin" => {
                            origin = Some(Origin::parse(value).ok_or_else(|| {
                                malformed(line_no, format!("bad origin `{value}`"))
                            })?)
                        }
                        other => {
                            return Err(malformed(line_no, format!("unknown header key `{other}`")))
                        }
                    }
                }
                let hop = hop.ok_or_else(|| malformed(line_no, "missing hop_seconds".into()))?;
                let bins = bins.ok_or_else(|| malformed(line_no, "missing bins".into()))?;
                let origin = origin.ok_or_else(|| malformed(line_no, "missing origin".into()))?;
                if bins == 0 {
                    return Err(malformed(line_no, "bins must be positive".into()));
                }
                header = Some((hop, bins, origin));
            }
            Some((_, bins, _)) => {
                let values: Vec<&str> = trimmed.split(',').collect();
                if values.len() != bins {
                    return Err(malformed(
                        line_no,
                        format!("ragged row: {} values, expected {bins}", values.len()),
                    ));
                }
                for v in values {
                    let parsed = v
                        .trim()
                        .parse::<f64>()
                        .map_err(|_| malformed(line_no, format!("non-numeric cell `{v}`")))?;
                    rows.push(parsed);
                }
                n_frames += 1;
            }
        }
    }

    let (hop, bins, origin) =
        header.ok_or_else(|| malformed(0, "missing header line".into()))?;
    if n_frames == 0 {
        return Err(Error::EmptyInput("feature csv has no data rows"));
    }
    FeatureSequence::from_flat(rows, n_frames, bins, hop, origin)
}
