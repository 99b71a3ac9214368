//! Standard MIDI File ingestion (formats 0 and 1) and direct rendering of
//! note events to chroma frames, bypassing audio synthesis.

use std::path::Path;

use super::{l2_normalize, FeatureSequence, Origin, CHROMA_BINS};
use crate::error::{Error, Result};

/// A sounding note with tick positions already resolved to seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MidiNote {
    pub onset_seconds: f64,
    pub duration_seconds: f64,
    pub pitch: u8,
    pub velocity: u8,
}

/// Parsed score content: notes plus the tempo map that produced the timing.
#[derive(Debug, Clone)]
pub struct MidiScore {
    pub notes: Vec<MidiNote>,
    /// (tick, microseconds per quarter note), sorted by tick.
    pub tempo_map: Vec<(u64, u32)>,
    pub ticks_per_quarter: u16,
}

impl MidiScore {
    pub fn total_duration_seconds(&self) -> f64 {
        self.notes
            .iter()
            .map(|n| n.onset_seconds + n.duration_seconds)
            .fold(0.0, f64::max)
    }
}

const DEFAULT_TEMPO: u32 = 500_000; // 120 bpm
const PERCUSSION_CHANNEL: u8 = 9;

pub fn load_midi(path: impl AsRef<Path>) -> Result<MidiScore> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse(path, &bytes)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn u8(&mut self) -> Option<u8> {
        let b = *self.bytes.get(self.pos)?;
        self.pos += 1;
        Some(b)
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn skip(&mut self, n: usize) -> Option<()> {
        if self.pos + n > self.bytes.len() {
            return None;
        }
        self.pos += n;
        Some(())
    }

    fn varlen(&mut self) -> Option<u64> {
        let mut value: u64 = 0;
        for _ in 0..4 {
            let b = self.u8()?;
            value = (value << 7) | (b & 0x7f) as u64;
            if b & 0x80 == 0 {
                return Some(value);
            }
        }
        None
    }

    fn done(&self) -> bool {
        self.pos >= self.bytes.len()
    }
}

fn parse(path: &Path, bytes: &[u8]) -> Result<MidiScore> {
    let malformed = |detail: String| Error::MalformedMidi {
        path: path.to_path_buf(),
        detail,
    };

    if bytes.len() < 14 || &bytes[0..4] != b"MThd" {
        return Err(malformed("missing MThd header".into()));
    }
    let header_len = u32::from_be_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if header_len < 6 {
        return Err(malformed("MThd chunk too small".into()));
    }
    let format = u16::from_be_bytes([bytes[8], bytes[9]]);
    let n_tracks = u16::from_be_bytes([bytes[10], bytes[11]]) as usize;
    let division = u16::from_be_bytes([bytes[12], bytes[13]]);
    if format > 1 {
        return Err(malformed(format!("unsupported SMF format {format}")));
    }
    if division & 0x8000 != 0 {
        return Err(malformed("SMPTE time division is not supported".into()));
    }
    if division == 0 {
        return Err(malformed("zero ticks per quarter note".into()));
    }

    // Raw note events in ticks; converted to seconds once the tempo map
    // from all tracks is known.
    struct TickNote {
        onset_tick: u64,
        duration_ticks: u64,
        pitch: u8,
        velocity: u8,
    }
    let mut tick_notes: Vec<TickNote> = Vec::new();
    let mut tempo_events: Vec<(u64, u32)> = Vec::new();

    let mut pos = 8 + header_len;
    let mut tracks_read = 0;
    while tracks_read < n_tracks {
        if pos + 8 > bytes.len() {
            return Err(malformed(format!(
                "expected {n_tracks} tracks, found {tracks_read}"
            )));
        }
        let id = &bytes[pos..pos + 4];
        let size = u32::from_be_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        if pos + 8 + size > bytes.len() {
            return Err(malformed("truncated track chunk".into()));
        }
        if id != b"MTrk" {
            pos += 8 + size;
            continue;
        }
        let mut r = Reader {
            bytes: &bytes[pos + 8..pos + 8 + size],
            pos: 0,
        };

        let mut tick: u64 = 0;
        let mut running_status: Option<u8> = None;
        // (channel, pitch) -> (onset tick, velocity)
        let mut open: Vec<((u8, u8), (u64, u8))> = Vec::new();

        while !r.done() {
            let delta = r
                .varlen()
                .ok_or_else(|| malformed("bad delta time".into()))?;
            tick += delta;

            let status = match r.peek() {
                Some(b) if b & 0x80 != 0 => {
                    r.u8();
                    if b < 0xf0 {
                        running_status = Some(b);
                    }
                    b
                }
                Some(_) => running_status
                    .ok_or_else(|| malformed("data byte with no running status".into()))?,
                None => break,
            };

            match status & 0xf0 {
                0x80 | 0x90 => {
                    let pitch = r.u8().ok_or_else(|| malformed("truncated note event".into()))?;
                    let vel = r.u8().ok_or_else(|| malformed("truncated note event".into()))?;
                    let channel = status & 0x0f;
                    let is_on = status & 0xf0 == 0x90 && vel > 0;
                    if channel == PERCUSSION_CHANNEL {
                        continue;
                    }
                    if is_on {
                        open.push(((channel, pitch), (tick, vel)));
                    } else {
                        let slot = open
                            .iter()
                            .position(|(key, _)| *key == (channel, pitch))
                            .ok_or_else(|| {
                                malformed(format!(
                                    "note-off without matching note-on (pitch {pitch})"
                                ))
                            })?;
                        let (_, (onset_tick, velocity)) = open.remove(slot);
                        if tick > onset_tick {
                            tick_notes.push(TickNote {
                                onset_tick,
                                duration_ticks: tick - onset_tick,
                                pitch,
                                velocity,
                            });
                        }
                    }
                }
                0xa0 | 0xb0 | 0xe0 => {
                    r.skip(2)
                        .ok_or_else(|| malformed("truncated channel event".into()))?;
                }
                0xc0 | 0xd0 => {
                    r.skip(1)
                        .ok_or_else(|| malformed("truncated channel event".into()))?;
                }
                0xf0 => match status {
                    0xff => {
                        let meta = r.u8().ok_or_else(|| malformed("truncated meta event".into()))?;
                        let len = r
                            .varlen()
                            .ok_or_else(|| malformed("bad meta length".into()))?
                            as usize;
                        if meta == 0x51 {
                            if len != 3 {
                                return Err(malformed("tempo event must carry 3 bytes".into()));
                            }
                            let b0 = r.u8().unwrap_or(0) as u32;
                            let b1 = r.u8().unwrap_or(0) as u32;
                            let b2 = r.u8().unwrap_or(0) as u32;
                            tempo_events.push((tick, (b0 << 16) | (b1 << 8) | b2));
                        } else {
                            r.skip(len)
                                .ok_or_else(|| malformed("truncated meta event".into()))?;
                        }
                    }
                    0xf0 | 0xf7 => {
                        let len = r
                            .varlen()
                            .ok_or_else(|| malformed("bad sysex length".into()))?
                            as usize;
                        r.skip(len)
                            .ok_or_else(|| malformed("truncated sysex".into()))?;
                    }
                    other => return Err(malformed(format!("unexpected status byte {other:#x}"))),
                },
                _ => unreachable!(),
            }
        }

        if let Some(((_, pitch), _)) = open.first() {
            return Err(malformed(format!(
                "note-on without matching note-off (pitch {pitch})"
            )));
        }

        pos += 8 + size;
        tracks_read += 1;
    }

    tempo_events.sort_by_key(|&(tick, _)| tick);
    if tempo_events.first().map(|&(t, _)| t != 0).unwrap_or(true) {
        tempo_events.insert(0, (0, DEFAULT_TEMPO));
    }

    let clock = TickClock::new(&tempo_events, division);
    let mut notes: Vec<MidiNote> = tick_notes
        .iter()
        .map(|n| {
            let onset = clock.seconds_at(n.onset_tick);
            let end = clock.seconds_at(n.onset_tick + n.duration_ticks);
            MidiNote {
                onset_seconds: onset,
                duration_seconds: end - onset,
                pitch: n.pitch,
                velocity: n.velocity,
            }
        })
        .collect();
    notes.sort_by(|a, b| {
        a.onset_seconds
            .partial_cmp(&b.onset_seconds)
            .unwrap()
            .then(a.pitch.cmp(&b.pitch))
    });

    if notes.is_empty() {
        return Err(Error::EmptyInput("midi file holds no pitched notes"));
    }

    Ok(MidiScore {
        notes,
        tempo_map: tempo_events,
        ticks_per_quarter: division,
    })
}

/// Piecewise-linear tick-to-seconds conversion through the tempo map.
struct TickClock {
    /// (tick, seconds at that tick, seconds per tick from that tick on)
    segments: Vec<(u64, f64, f64)>,
}

impl TickClock {
    fn new(tempo_map: &[(u64, u32)], ticks_per_quarter: u16) -> Self {
        let mut segments = Vec::with_capacity(tempo_map.len());
        let mut seconds = 0.0;
        let mut prev_tick = 0u64;
        let mut prev_rate = tempo_map[0].1 as f64 * 1e-6 / ticks_per_quarter as f64;
        for (i, &(tick, uspq)) in tempo_map.iter().enumerate() {
            if i > 0 {
                seconds += (tick - prev_tick) as f64 * prev_rate;
            }
            prev_tick = tick;
            prev_rate = uspq as f64 * 1e-6 / ticks_per_quarter as f64;
            segments.push((tick, seconds, prev_rate));
        }
        TickClock { segments }
    }

    fn seconds_at(&self, tick: u64) -> f64 {
        let idx = match self.segments.binary_search_by_key(&tick, |s| s.0) {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) => i - 1,
        };
        let (seg_tick, seg_seconds, rate) = self.segments[idx];
        seg_seconds + (tick.saturating_sub(seg_tick)) as f64 * rate
    }
}

/// Renders a score directly to chroma frames: each sounding note deposits
/// `velocity / 127` into its pitch-class bin for every frame it overlaps,
/// and frames are L2-normalized afterwards.
pub fn midi_to_chroma(score: &MidiScore, hop_seconds: f64) -> Result<FeatureSequence> {
    if score.notes.is_empty() {
        return Err(Error::EmptyInput("score has no notes"));
    }
    if !(hop_seconds > 0.0) {
        return Err(Error::Invalid(format!(
            "hop_seconds must be positive, got {hop_seconds}"
        )));
    }
    let total = score.total_duration_seconds();
    let n_frames = (total / hop_seconds).ceil().max(1.0) as usize;

    let mut data = vec![0.0f64; n_frames * CHROMA_BINS];
    for note in &score.notes {
        let class = (note.pitch % 12) as usize;
        let weight = note.velocity as f64 / 127.0;
        let start = (note.onset_seconds / hop_seconds).floor() as usize;
        let end_time = note.onset_seconds + note.duration_seconds;
        // Frame f overlaps the note iff f*hop < end and (f+1)*hop > onset.
        let mut f = start.min(n_frames - 1);
        while f < n_frames && (f as f64) * hop_seconds < end_time {
            if ((f + 1) as f64) * hop_seconds > note.onset_seconds {
                data[f * CHROMA_BINS + class] += weight;
            }
            f += 1;
        }
    }
    for frame in data.chunks_exact_mut(CHROMA_BINS) {
        l2_normalize(frame);
    }
    FeatureSequence::from_flat(data, n_frames, CHROMA_BINS, hop_seconds, Origin::Midi)
}

#[cfg(test)]
pub(crate) mod test_support {
    /// Builds a single-track SMF (format 0) from (delta, event bytes) pairs.
    pub fn smf(division: u16, events: &[(u32, Vec<u8>)]) -> Vec<u8> {
        let mut track = Vec::new();
        for (delta, ev) in events {
            let mut d = *delta;
            let mut stack = vec![(d & 0x7f) as u8];
            d >>= 7;
            while d > 0 {
                stack.push(((d & 0x7f) as u8) | 0x80);
                d >>= 7;
            }
            stack.reverse();
            track.extend_from_slice(&stack);
            track.extend_from_slice(ev);
        }
        // End-of-track meta event.
        track.extend_from_slice(&[0x00, 0xff, 0x2f, 0x00]);

        let mut out = Vec::new();
        out.extend_from_slice(b"MThd");
        out.extend_from_slice(&6u32.to_be_bytes());
        out.extend_from_slice(&0u16.to_be_bytes());
        out.extend_from_slice(&1u16.to_be_bytes());
        out.extend_from_slice(&division.to_be_bytes());
        out.extend_from_slice(b"MTrk");
        out.extend_from_slice(&(track.len() as u32).to_be_bytes());
        out.extend_from_slice(&track);
        out
    }

    pub fn write_temp(bytes: &[u8]) -> tempfile::NamedTempFile {
        use std::io::Write;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(bytes).unwrap();
        f.flush().unwrap();
        f
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;

    fn note_score(notes: Vec<MidiNote>) -> MidiScore {
        MidiScore {
            notes,
            tempo_map: vec![(0, DEFAULT_TEMPO)],
            ticks_per_quarter: 480,
        }
    }

    #[test]
    fn single_note_folds_to_its_pitch_class() {
        let score = note_score(vec![MidiNote {
            onset_seconds: 0.0,
            duration_seconds: 1.0,
            pitch: 69,
            velocity: 127,
        }]);
        let chroma = midi_to_chroma(&score, 0.5).unwrap();
        assert_eq!(chroma.frames(), 2);
        for row in chroma.rows() {
            assert_eq!(row[9], 1.0);
            assert_eq!(row.iter().filter(|&&v| v != 0.0).count(), 1);
        }
        assert_eq!(chroma.origin, Origin::Midi);
    }

    #[test]
    fn octaves_share_one_bin() {
        let score = note_score(vec![
            MidiNote {
                onset_seconds: 0.0,
                duration_seconds: 1.0,
                pitch: 60,
                velocity: 100,
            },
            MidiNote {
                onset_seconds: 0.0,
                duration_seconds: 1.0,
                pitch: 72,
                velocity: 100,
            },
        ]);
        let chroma = midi_to_chroma(&score, 1.0).unwrap();
        let row = chroma.frame(0);
        assert_eq!(row[0], 1.0);
        assert_eq!(row.iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn triad_normalizes_to_equal_weights() {
        let score = note_score(
            [60u8, 64, 67]
                .iter()
                .map(|&p| MidiNote {
                    onset_seconds: 0.0,
                    duration_seconds: 1.0,
                    pitch: p,
                    velocity: 90,
                })
                .collect(),
        );
        let chroma = midi_to_chroma(&score, 1.0).unwrap();
        let row = chroma.frame(0);
        let expected = 1.0 / 3.0f64.sqrt();
        for &class in &[0usize, 4, 7] {
            assert!((row[class] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn octave_transposition_invariance() {
        let base = vec![
            MidiNote {
                onset_seconds: 0.0,
                duration_seconds: 0.8,
                pitch: 62,
                velocity: 70,
            },
            MidiNote {
                onset_seconds: 0.4,
                duration_seconds: 1.0,
                pitch: 66,
                velocity: 110,
            },
        ];
        let shifted: Vec<MidiNote> = base
            .iter()
            .map(|n| MidiNote {
                pitch: n.pitch + 12,
                ..*n
            })
            .collect();
        let a = midi_to_chroma(&note_score(base), 0.25).unwrap();
        let b = midi_to_chroma(&note_score(shifted), 0.25).unwrap();
        assert_eq!(a.frames(), b.frames());
        for (ra, rb) in a.rows().zip(b.rows()) {
            assert_eq!(ra, rb);
        }
    }

    #[test]
    fn parses_note_pair_with_running_status() {
        // Two quarter notes at 480 tpq, default tempo: A4 then C5, the
        // second pair using running status.
        let bytes = smf(
            480,
            &[
                (0, vec![0x90, 69, 100]),
                (480, vec![0x80, 69, 0]),
                (0, vec![0x90, 72, 90]),
                (480, vec![72, 0]), // running status note-on, velocity 0 = off
            ],
        );
        let f = write_temp(&bytes);
        let score = load_midi(f.path()).unwrap();
        assert_eq!(score.notes.len(), 2);
        assert_eq!(score.ticks_per_quarter, 480);
        let a = score.notes[0];
        assert_eq!(a.pitch, 69);
        assert!((a.onset_seconds - 0.0).abs() < 1e-12);
        assert!((a.duration_seconds - 0.5).abs() < 1e-12);
        let c = score.notes[1];
        assert_eq!(c.pitch, 72);
        assert!((c.onset_seconds - 0.5).abs() < 1e-12);
    }

    #[test]
    fn honours_tempo_change() {
        // Tempo doubles to 240 bpm (250000 us/q) at tick 480.
        let bytes = smf(
            480,
            &[
                (0, vec![0x90, 60, 100]),
                (480, vec![0xff, 0x51, 0x03, 0x03, 0xd0, 0x90]),
                (0, vec![0x90, 64, 100]),
                (480, vec![0x80, 64, 0]),
                (0, vec![0x80, 60, 0]),
            ],
        );
        let f = write_temp(&bytes);
        let score = load_midi(f.path()).unwrap();
        let e = score.notes.iter().find(|n| n.pitch == 64).unwrap();
        assert!((e.onset_seconds - 0.5).abs() < 1e-12);
        assert!((e.duration_seconds - 0.25).abs() < 1e-12);
    }

    #[test]
    fn percussion_channel_is_ignored() {
        let bytes = smf(
            480,
            &[
                (0, vec![0x99, 36, 100]), // channel 10 kick drum
                (10, vec![0x89, 36, 0]),
                (0, vec![0x90, 60, 100]),
                (480, vec![0x80, 60, 0]),
            ],
        );
        let f = write_temp(&bytes);
        let score = load_midi(f.path()).unwrap();
        assert_eq!(score.notes.len(), 1);
        assert_eq!(score.notes[0].pitch, 60);
    }

    #[test]
    fn unmatched_note_on_is_an_error() {
        let bytes = smf(480, &[(0, vec![0x90, 60, 100])]);
        let f = write_temp(&bytes);
        assert!(matches!(
            load_midi(f.path()),
            Err(Error::MalformedMidi { .. })
        ));
    }
}
