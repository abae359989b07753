//! WAV files, dataset manifests and verification trial lists.
//!
//! Only 16-bit PCM mono WAV is supported; that is the one interchange
//! format the rest of the crate reads and writes.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::{Error, Result};

/// Mono audio in memory. Samples are nominally in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, rate: u32) -> Self {
        AudioClip { samples, rate }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.rate as f64
    }
}

const PCM_SCALE: f64 = 32767.0;

/// Read a 16-bit PCM mono WAV file.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 {
        return Err(Error::WavTruncated { path: path.into() });
    }
    if &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::WavBadHeader { path: path.into() });
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None; // tag, channels, rate, bits
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_start = pos + 8;
        let body_end = body_start + size;
        if body_end > bytes.len() {
            return Err(Error::WavTruncated { path: path.into() });
        }
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::WavTruncated { path: path.into() });
                }
                let tag = u16::from_le_bytes(body[0..2].try_into().unwrap());
                let channels = u16::from_le_bytes(body[2..4].try_into().unwrap());
                let rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                let bits = u16::from_le_bytes(body[14..16].try_into().unwrap());
                fmt = Some((tag, channels, rate, bits));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // chunks are word-aligned
        pos = body_end + (size & 1);
    }

    let (tag, channels, rate, bits) = fmt.ok_or(Error::WavTruncated { path: path.into() })?;
    if tag != 1 || bits != 16 {
        return Err(Error::WavUnsupportedEncoding {
            path: path.into(),
            format_tag: tag,
            bits,
        });
    }
    if channels != 1 {
        return Err(Error::WavUnsupportedChannels {
            path: path.into(),
            channels,
        });
    }
    let data = data.ok_or(Error::WavTruncated { path: path.into() })?;
    if data.len() % 2 != 0 {
        return Err(Error::WavTruncated { path: path.into() });
    }

    let samples = data
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]) as f64 / PCM_SCALE)
        .collect();
    Ok(AudioClip { samples, rate })
}

/// Write a clip as 16-bit PCM mono. Samples are clamped to `[-1, 1]`
/// and rounded to the nearest integer step.
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    let n = clip.samples.len();
    let data_len = (n * 2) as u32;
    let mut bytes = Vec::with_capacity(44 + n * 2);
    bytes.extend_from_slice(b"RIFF");
    bytes.extend_from_slice(&(36 + data_len).to_le_bytes());
    bytes.extend_from_slice(b"WAVE");
    bytes.extend_from_slice(b"fmt ");
    bytes.extend_from_slice(&16u32.to_le_bytes());
    bytes.extend_from_slice(&1u16.to_le_bytes()); // PCM
    bytes.extend_from_slice(&1u16.to_le_bytes()); // mono
    bytes.extend_from_slice(&clip.rate.to_le_bytes());
    bytes.extend_from_slice(&(clip.rate * 2).to_le_bytes());
    bytes.extend_from_slice(&2u16.to_le_bytes());
    bytes.extend_from_slice(&16u16.to_le_bytes());
    bytes.extend_from_slice(b"data");
    bytes.extend_from_slice(&data_len.to_le_bytes());
    for &s in &clip.samples {
        let v = (s.clamp(-1.0, 1.0) * PCM_SCALE).round() as i16;
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Cut or cyclically extend a clip to exactly `length` samples.
///
/// Shorter targets keep the prefix; longer ones repeat the clip from
/// its start, so a 3-sample clip stretched to 7 gives
/// `[a, b, c, a, b, c, a]`.
pub fn crop_fixed_patch(clip: &AudioClip, length: usize) -> Result<AudioClip> {
    if clip.is_empty() || length == 0 {
        return Err(Error::EmptyClip);
    }
    let n = clip.samples.len();
    let samples = (0..length).map(|i| clip.samples[i % n]).collect();
    Ok(AudioClip {
        samples,
        rate: clip.rate,
    })
}

/// One manifest row: a WAV path relative to the manifest's directory
/// plus its speaker index after remapping.
#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub rel_path: String,
    pub speaker: usize,
}

/// A training dataset: WAV paths with speaker labels.
///
/// Raw labels in the file are arbitrary non-negative integers; they are
/// remapped to contiguous `0..n_speakers` in order of first appearance.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub base_dir: PathBuf,
    pub entries: Vec<ManifestEntry>,
    pub n_speakers: usize,
}

impl DatasetManifest {
    pub fn resolve(&self, rel_path: &str) -> PathBuf {
        self.base_dir.join(rel_path)
    }
}

/// Parse a `path,label` manifest. Blank lines and `#` comments are
/// skipped.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base_dir = path.parent().unwrap_or(Path::new("")).to_path_buf();

    let mut entries = Vec::new();
    let mut seen_paths: HashMap<String, usize> = HashMap::new();
    let mut label_map: HashMap<u64, usize> = HashMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let parse = |msg: &str| Error::ManifestParse {
            path: path.into(),
            line,
            msg: msg.into(),
        };
        let (rel, label) = trimmed
            .rsplit_once(',')
            .ok_or_else(|| parse("expected `path,label`"))?;
        let rel = rel.trim();
        if rel.is_empty() {
            return Err(parse("empty path"));
        }
        let raw_label: u64 = label
            .trim()
            .parse()
            .map_err(|_| parse("label must be a non-negative integer"))?;
        if let Some(&first) = seen_paths.get(rel) {
            return Err(Error::ManifestDuplicate {
                path: path.into(),
                line: first,
                entry: rel.into(),
            });
        }
        seen_paths.insert(rel.to_string(), line);
        let next = label_map.len();
        let speaker = *label_map.entry(raw_label).or_insert(next);
        entries.push(ManifestEntry {
            rel_path: rel.to_string(),
            speaker,
        });
    }
    Ok(DatasetManifest {
        base_dir,
        n_speakers: label_map.len(),
        entries,
    })
}

/// One verification trial: are `a` and `b` the same speaker?
#[derive(Debug, Clone)]
pub struct Trial {
    pub target: bool,
    pub a: String,
    pub b: String,
}

#[derive(Debug, Clone)]
pub struct TrialList {
    pub base_dir: PathBuf,
    pub trials: Vec<Trial>,
}

impl TrialList {
    pub fn resolve(&self, rel_path: &str) -> PathBuf {
        self.base_dir.join(rel_path)
    }
}

/// Parse a `label pathA pathB` trial list; label 1 means same speaker.
pub fn load_trials(path: impl AsRef<Path>) -> Result<TrialList> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base_dir = path.parent().unwrap_or(Path::new("")).to_path_buf();

    let mut trials = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let parse = |msg: &str| Error::TrialParse {
            path: path.into(),
            line,
            msg: msg.into(),
        };
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(parse("expected `label pathA pathB`"));
        }
        let target = match fields[0] {
            "0" => false,
            "1" => true,
            _ => return Err(parse("label must be 0 or 1")),
        };
        trials.push(Trial {
            target,
            a: fields[1].to_string(),
            b: fields[2].to_string(),
        });
    }
    Ok(TrialList { base_dir, trials })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn wav_round_trip_is_exact_on_grid_values() {
        let dir = tmp();
        let p = dir.path().join("t.wav");
        // values exactly representable as k/32767
        let samples: Vec<f64> = [-32767i16, -12345, 0, 1, 16384, 32767]
            .iter()
            .map(|&k| k as f64 / 32767.0)
            .collect();
        let clip = AudioClip::new(samples.clone(), 16_000);
        write_wav(&p, &clip).unwrap();
        let back = read_wav(&p).unwrap();
        assert_eq!(back.rate, 16_000);
        assert_eq!(back.samples, samples);

        // and the byte stream is stable under a second round trip
        let bytes1 = std::fs::read(&p).unwrap();
        write_wav(&p, &back).unwrap();
        let bytes2 = std::fs::read(&p).unwrap();
        assert_eq!(bytes1, bytes2);
    }

    #[test]
    fn wav_write_clamps_out_of_range() {
        let dir = tmp();
        let p = dir.path().join("c.wav");
        write_wav(&p, &AudioClip::new(vec![2.0, -3.0], 8_000)).unwrap();
        let back = read_wav(&p).unwrap();
        assert_eq!(back.samples, vec![1.0, -1.0]);
    }

    #[test]
    fn wav_reader_skips_extra_chunks() {
        let dir = tmp();
        let p = dir.path().join("x.wav");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"RIFF");
        bytes.extend_from_slice(&(4 + 8 + 5 + 1 + 8 + 16 + 8 + 4u32).to_le_bytes());
        bytes.extend_from_slice(b"WAVE");
        bytes.extend_from_slice(b"LIST");
        bytes.extend_from_slice(&5u32.to_le_bytes());
        bytes.extend_from_slice(b"hello\0"); // odd size -> padded
        bytes.extend_from_slice(b"fmt ");
        bytes.extend_from_slice(&16u32.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&44100u32.to_le_bytes());
        bytes.extend_from_slice(&88200u32.to_le_bytes());
        bytes.extend_from_slice(&2u16.to_le_bytes());
        bytes.extend_from_slice(&16u16.to_le_bytes());
        bytes.extend_from_slice(b"data");
        bytes.extend_from_slice(&4u32.to_le_bytes());
        bytes.extend_from_slice(&100i16.to_le_bytes());
        bytes.extend_from_slice(&(-100i16).to_le_bytes());
        std::fs::write(&p, bytes).unwrap();
        let clip = read_wav(&p).unwrap();
        assert_eq!(clip.rate, 44_100);
        assert_eq!(clip.len(), 2);
    }

    #[test]
    fn wav_errors_are_distinct() {
        let dir = tmp();
        let missing = dir.path().join("missing.wav");
        assert!(matches!(read_wav(&missing), Err(Error::Io { .. })));

        let bad = dir.path().join("bad.wav");
        std::fs::write(&bad, b"OGGS....WAVE").unwrap();
        assert!(matches!(
            read_wav(&bad),
            Err(Error::WavBadHeader { .. })
        ));

        let trunc = dir.path().join("trunc.wav");
        std::fs::write(&trunc, b"RIFF").unwrap();
        assert!(matches!(
            read_wav(&trunc),
            Err(Error::WavTruncated { .. })
        ));

        // stereo file
        let p = dir.path().join("stereo.wav");
        let clip = AudioClip::new(vec![0.0; 4], 16_000);
        write_wav(&p, &clip).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[22] = 2; // channel count
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(
            read_wav(&p),
            Err(Error::WavUnsupportedChannels { channels: 2, .. })
        ));

        // float encoding
        bytes[22] = 1;
        bytes[20] = 3; // IEEE float tag
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(
            read_wav(&p),
            Err(Error::WavUnsupportedEncoding { format_tag: 3, .. })
        ));
    }

    #[test]
    fn crop_repeats_cyclically() {
        let clip = AudioClip::new(vec![1.0, 2.0, 3.0], 16_000);
        let out = crop_fixed_patch(&clip, 7).unwrap();
        assert_eq!(out.samples, vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0, 1.0]);
        let short = crop_fixed_patch(&clip, 2).unwrap();
        assert_eq!(short.samples, vec![1.0, 2.0]);
        let same = crop_fixed_patch(&clip, 3).unwrap();
        assert_eq!(same.samples, clip.samples);
    }

    #[test]
    fn crop_rejects_empty() {
        let empty = AudioClip::new(vec![], 16_000);
        assert!(matches!(
            crop_fixed_patch(&empty, 4),
            Err(Error::EmptyClip)
        ));
        let clip = AudioClip::new(vec![1.0], 16_000);
        assert!(matches!(crop_fixed_patch(&clip, 0), Err(Error::EmptyClip)));
    }

    #[test]
    fn manifest_remaps_labels_by_first_appearance() {
        let dir = tmp();
        let p = dir.path().join("manifest.csv");
        std::fs::write(&p, "# comment\na.wav,7\n\nb.wav,7\nc.wav,3\nd.wav,12\n").unwrap();
        let m = load_manifest(&p).unwrap();
        assert_eq!(m.n_speakers, 3);
        let speakers: Vec<usize> = m.entries.iter().map(|e| e.speaker).collect();
        assert_eq!(speakers, vec![0, 0, 1, 2]);
        assert_eq!(m.entries[2].rel_path, "c.wav");
        assert_eq!(m.resolve("c.wav"), dir.path().join("c.wav"));
    }

    #[test]
    fn manifest_parse_errors_carry_line_numbers() {
        let dir = tmp();
        let p = dir.path().join("m.csv");
        std::fs::write(&p, "a.wav,1\nb.wav\n").unwrap();
        match load_manifest(&p) {
            Err(Error::ManifestParse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected: {other:?}"),
        }

        std::fs::write(&p, "a.wav,1\nb.wav,-2\n").unwrap();
        assert!(matches!(
            load_manifest(&p),
            Err(Error::ManifestParse { line: 2, .. })
        ));

        std::fs::write(&p, "a.wav,1\nb.wav,2\na.wav,3\n").unwrap();
        assert!(matches!(
            load_manifest(&p),
            Err(Error::ManifestDuplicate { line: 1, .. })
        ));
    }

    #[test]
    fn trials_parse_and_validate_labels() {
        let dir = tmp();
        let p = dir.path().join("trials.txt");
        std::fs::write(&p, "1 a.wav b.wav\n0 a.wav c.wav\n").unwrap();
        let t = load_trials(&p).unwrap();
        assert_eq!(t.trials.len(), 2);
        assert!(t.trials[0].target);
        assert!(!t.trials[1].target);

        std::fs::write(&p, "2 a.wav b.wav\n").unwrap();
        assert!(matches!(
            load_trials(&p),
            Err(Error::TrialParse { line: 1, .. })
        ));
        std::fs::write(&p, "1 a.wav\n").unwrap();
        assert!(matches!(load_trials(&p), Err(Error::TrialParse { .. })));
    }
}
