//! Feature extraction: audio and MIDI ingestion, chromagrams, and
//! cross-similarity matrices.

mod chroma;
mod csv;
mod midi;
mod wav;

pub use chroma::{chromagram, WindowKind};
pub use csv::{load_features_csv, read_features_csv, save_features_csv, write_features_csv};
pub use midi::{load_midi, midi_to_chroma, MidiNote, MidiScore};
pub use wav::load_wav;

use crate::error::{Error, Result};

/// Number of pitch classes in a chroma vector (C, C#, ..., B).
pub const CHROMA_BINS: usize = 12;

/// Lowest frequency folded into the chromagram (C1).
pub const CHROMA_MIN_HZ: f64 = 32.7;

/// Mono audio with its sample rate. Stereo input is downmixed at load time.
#[derive(Debug, Clone)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("audio clip has no samples"));
        }
        if sample_rate == 0 {
            return Err(Error::Invalid("sample rate must be positive".into()));
        }
        if let Some(index) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFiniteSample { index });
        }
        Ok(AudioClip {
            samples,
            sample_rate,
        })
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Where a feature sequence came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Audio,
    Midi,
    External,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Audio => "audio",
            Origin::Midi => "midi",
            Origin::External => "external",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "audio" => Some(Origin::Audio),
            "midi" => Some(Origin::Midi),
            "external" => Some(Origin::External),
            _ => None,
        }
    }
}

/// A frames x bins matrix of finite values with timing metadata.
/// Frame `i` spans `[i * hop_seconds, (i + 1) * hop_seconds)`.
#[derive(Debug, Clone)]
pub struct FeatureSequence {
    data: Vec<f64>,
    frames: usize,
    bins: usize,
    pub hop_seconds: f64,
    pub origin: Origin,
}

impl FeatureSequence {
    pub fn from_rows(rows: Vec<Vec<f64>>, hop_seconds: f64, origin: Origin) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyInput("feature sequence has no frames"));
        }
        let bins = rows[0].len();
        if bins == 0 {
            return Err(Error::EmptyInput("feature sequence has no bins"));
        }
        let mut data = Vec::with_capacity(rows.len() * bins);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != bins {
                return Err(Error::ShapeMismatch(format!(
                    "frame {i} has {} bins, expected {bins}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Self::from_flat(data, rows.len(), bins, hop_seconds, origin)
    }

    pub fn from_flat(
        data: Vec<f64>,
        frames: usize,
        bins: usize,
        hop_seconds: f64,
        origin: Origin,
    ) -> Result<Self> {
        if frames == 0 || bins == 0 {
            return Err(Error::EmptyInput("feature sequence has no frames"));
        }
        if data.len() != frames * bins {
            return Err(Error::ShapeMismatch(format!(
                "flat data length {} != {frames} frames x {bins} bins",
                data.len()
            )));
        }
        if !(hop_seconds > 0.0) {
            return Err(Error::Invalid(format!(
                "hop_seconds must be positive, got {hop_seconds}"
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteSample { index });
        }
        Ok(FeatureSequence {
            data,
            frames,
            bins,
            hop_seconds,
            origin,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        &self.data[i * self.bins..(i + 1) * self.bins]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.bins)
    }

    /// A new sequence whose frame `i` is this sequence's frame `map[i]`.
    pub fn reorder(&self, map: &[usize]) -> Result<Self> {
        if map.is_empty() {
            return Err(Error::EmptyInput("frame map is empty"));
        }
        let mut data = Vec::with_capacity(map.len() * self.bins);
        for &src in map {
            if src >= self.frames {
                return Err(Error::Invalid(format!(
                    "frame map entry {src} out of bounds for {} frames",
                    self.frames
                )));
            }
            data.extend_from_slice(self.frame(src));
        }
        FeatureSequence::from_flat(data, map.len(), self.bins, self.hop_seconds, self.origin)
    }
}

/// p x q grid of non-negative pairwise frame costs. Rows index the
/// performance, columns the score.
#[derive(Debug, Clone)]
pub struct CrossSimilarityMatrix {
    cost: Vec<f64>,
    p: usize,
    q: usize,
}

impl CrossSimilarityMatrix {
    pub fn from_flat(cost: Vec<f64>, p: usize, q: usize) -> Result<Self> {
        if p == 0 || q == 0 {
            return Err(Error::EmptyCostMatrix);
        }
        if cost.len() != p * q {
            return Err(Error::ShapeMismatch(format!(
                "flat cost length {} != {p} x {q}",
                cost.len()
            )));
        }
        for (i, &v) in cost.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteCost {
                    row: i / q,
                    col: i % q,
                });
            }
            if v < 0.0 {
                return Err(Error::NegativeDistance(v));
            }
        }
        Ok(CrossSimilarityMatrix { cost, p, q })
    }

    pub fn rows(&self) -> usize {
        self.p
    }

    pub fn cols(&self) -> usize {
        self.q
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.cost[i * self.q + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.cost
    }

    /// Nearest-neighbour resample to a fixed extent; used to bring
    /// variable-size matrices onto the toy training grid.
    pub fn resample(&self, rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::EmptyCostMatrix);
        }
        let mut cost = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            let si = i * self.p / rows;
            for j in 0..cols {
                let sj = j * self.q / cols;
                cost.push(self.at(si, sj));
            }
        }
        CrossSimilarityMatrix::from_flat(cost, rows, cols)
    }
}

/// Euclidean distance between every performance frame and every score frame.
pub fn cross_similarity(
    perf: &FeatureSequence,
    score: &FeatureSequence,
) -> Result<CrossSimilarityMatrix> {
    if perf.bins() != score.bins() {
        return Err(Error::BinMismatch {
            left: perf.bins(),
            right: score.bins(),
        });
    }
    let (p, q) = (perf.frames(), score.frames());
    let mut cost = Vec::with_capacity(p * q);
    for i in 0..p {
        let a = perf.frame(i);
        for j in 0..q {
            let b = score.frame(j);
            cost.push(euclidean(a, b));
        }
    }
    CrossSimilarityMatrix::from_flat(cost, p, q)
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// L2-normalizes one frame in place; all-zero frames are left untouched.
pub(crate) fn l2_normalize(frame: &mut [f64]) {
    let norm = frame.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in frame.iter_mut() {
            *v /= norm;
        }
    }
}
