//! Chromagram extraction: windowed STFT magnitudes folded onto the twelve
//! equal-tempered pitch classes (A4 = 440 Hz) and L2-normalized per frame.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{l2_normalize, AudioClip, FeatureSequence, Origin, CHROMA_BINS, CHROMA_MIN_HZ};
use crate::error::{Error, Result};

/// Analysis window applied to each frame before the DFT.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WindowKind {
    #[default]
    Hann,
    Hamming,
}

impl WindowKind {
    fn coefficients(self, n: usize) -> Vec<f64> {
        let denom = (n - 1) as f64;
        (0..n)
            .map(|i| {
                let c = (2.0 * std::f64::consts::PI * i as f64 / denom).cos();
                match self {
                    WindowKind::Hann => 0.5 - 0.5 * c,
                    WindowKind::Hamming => 0.54 - 0.46 * c,
                }
            })
            .collect()
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "hann" => Some(WindowKind::Hann),
            "hamming" => Some(WindowKind::Hamming),
            _ => None,
        }
    }
}

/// Maps a frequency in Hz to its nearest equal-tempered pitch class,
/// with C = 0 and A = 9. Frequencies below C1 are discarded.
fn pitch_class(freq_hz: f64) -> Option<usize> {
    if freq_hz < CHROMA_MIN_HZ {
        return None;
    }
    let midi = 69.0 + 12.0 * (freq_hz / 440.0).log2();
    let rounded = midi.round() as i64;
    Some(rounded.rem_euclid(12) as usize)
}

/// Computes a 12-bin chromagram. Frame `i` covers samples
/// `[i * hop_length, i * hop_length + frame_length)`; per-frame spectral
/// energy (magnitude squared) is accumulated by pitch class.
pub fn chromagram(
    clip: &AudioClip,
    frame_length: usize,
    hop_length: usize,
    window: WindowKind,
) -> Result<FeatureSequence> {
    if frame_length < 64 {
        return Err(Error::Invalid(format!(
            "frame_length must be at least 64 samples, got {frame_length}"
        )));
    }
    if hop_length == 0 {
        return Err(Error::Invalid("hop_length must be at least 1".into()));
    }
    if clip.samples.len() < frame_length {
        return Err(Error::ClipTooShort {
            samples: clip.samples.len(),
            needed: frame_length,
        });
    }
    if let Some(index) = clip.samples.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFiniteSample { index });
    }

    let n_frames = (clip.samples.len() - frame_length) / hop_length + 1;
    let coeffs = window.coefficients(frame_length);

    // Pitch-class fold for every non-negative DFT bin, precomputed once.
    let bin_to_class: Vec<Option<usize>> = (0..=frame_length / 2)
        .map(|k| pitch_class(k as f64 * clip.sample_rate as f64 / frame_length as f64))
        .collect();

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(frame_length);
    let mut buf = vec![Complex::new(0.0, 0.0); frame_length];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];

    let mut data = Vec::with_capacity(n_frames * CHROMA_BINS);
    for f in 0..n_frames {
        let start = f * hop_length;
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = Complex::new(clip.samples[start + i] * coeffs[i], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);

        let mut frame = [0.0f64; CHROMA_BINS];
        for (k, slot) in buf.iter().enumerate().take(frame_length / 2 + 1) {
            if let Some(class) = bin_to_class[k] {
                frame[class] += slot.norm_sqr();
            }
        }
        l2_normalize(&mut frame);
        data.extend_from_slice(&frame);
    }

    FeatureSequence::from_flat(
        data,
        n_frames,
        CHROMA_BINS,
        hop_length as f64 / clip.sample_rate as f64,
        Origin::Audio,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, sample_rate: u32, seconds: f64) -> AudioClip {
        let n = (sample_rate as f64 * seconds) as usize;
        let samples = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / sample_rate as f64).sin())
            .collect();
        AudioClip::new(samples, sample_rate).unwrap()
    }

    /// Independent oracle: quadratic DFT over a frame, peak bin mapped to a
    /// pitch class with the same fold rule applied by hand.
    fn naive_dft_peak_class(samples: &[f64], sample_rate: u32) -> usize {
        let n = samples.len();
        let mut best = (0usize, -1.0f64);
        for k in 0..=n / 2 {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, &s) in samples.iter().enumerate() {
                let ang = -2.0 * std::f64::consts::PI * k as f64 * i as f64 / n as f64;
                re += s * ang.cos();
                im += s * ang.sin();
            }
            let mag = re * re + im * im;
            let freq = k as f64 * sample_rate as f64 / n as f64;
            if freq >= CHROMA_MIN_HZ && mag > best.1 {
                best = (k, mag);
            }
        }
        let freq = best.0 as f64 * sample_rate as f64 / n as f64;
        let midi = 69.0 + 12.0 * (freq / 440.0).log2();
        (midi.round() as i64).rem_euclid(12) as usize
    }

    fn argmax(frame: &[f64]) -> usize {
        frame
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0
    }

    #[test]
    fn a440_lands_on_pitch_class_a() {
        let clip = sine(440.0, 22050, 1.0);
        let expected = naive_dft_peak_class(&clip.samples[0..2048], 22050);
        assert_eq!(expected, 9); // A
        let chroma = chromagram(&clip, 2048, 512, WindowKind::Hann).unwrap();
        for row in chroma.rows() {
            assert_eq!(argmax(row), expected);
        }
    }

    #[test]
    fn middle_c_lands_on_pitch_class_c() {
        let clip = sine(261.63, 22050, 1.0);
        let expected = naive_dft_peak_class(&clip.samples[0..2048], 22050);
        assert_eq!(expected, 0); // C
        let chroma = chromagram(&clip, 2048, 512, WindowKind::Hann).unwrap();
        for row in chroma.rows() {
            assert_eq!(argmax(row), expected);
        }
    }

    #[test]
    fn silence_stays_all_zero() {
        let clip = AudioClip::new(vec![0.0; 22050], 22050).unwrap();
        let chroma = chromagram(&clip, 2048, 512, WindowKind::Hann).unwrap();
        for row in chroma.rows() {
            assert!(row.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn frames_are_unit_norm_or_zero() {
        let clip = sine(330.0, 22050, 0.5);
        let chroma = chromagram(&clip, 2048, 512, WindowKind::Hamming).unwrap();
        for row in chroma.rows() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm == 0.0 || (norm - 1.0).abs() < 1e-6, "norm {norm}");
        }
    }

    #[test]
    fn short_clip_rejected() {
        let clip = AudioClip::new(vec![0.0; 100], 22050).unwrap();
        assert!(matches!(
            chromagram(&clip, 2048, 512, WindowKind::Hann),
            Err(Error::ClipTooShort { .. })
        ));
    }

    #[test]
    fn hop_seconds_follows_sample_rate() {
        let clip = sine(440.0, 22050, 1.0);
        let chroma = chromagram(&clip, 2048, 512, WindowKind::Hann).unwrap();
        assert!((chroma.hop_seconds - 512.0 / 22050.0).abs() < 1e-12);
        assert_eq!(chroma.origin, Origin::Audio);
    }
}
