//! Corpus ingestion: WAV decoding, clip-name metadata and attribute classes.

mod classes;
mod naming;
mod wav;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

pub use classes::{build_attribute_classes, AttributeClassMap, AttributeKey};
pub use naming::{parse_clip_name, ClipMetadata, Condition, Domain, Split};
pub use wav::{read_wav, to_pcm16, write_wav, WavEncoding, Waveform};

use crate::error::{Error, Result};

/// Sample rate of the DCASE machine-sound corpora.
pub const CORPUS_SAMPLE_RATE: u32 = 16_000;

/// A clip on disk together with its parsed metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub meta: ClipMetadata,
    pub path: PathBuf,
}

/// Lists every `<machine>/<split>/*.wav` under `root`, sorted by clip id.
///
/// Files whose names do not follow the naming convention are errors.
pub fn scan_corpus(root: &Path) -> Result<Vec<Clip>> {
    let mut clips = Vec::new();
    for machine_dir in sorted_dirs(root)? {
        for split_dir in sorted_dirs(&machine_dir)? {
            let entries = fs::read_dir(&split_dir).map_err(|e| Error::io(&split_dir, e))?;
            for entry in entries {
                let entry = entry.map_err(|e| Error::io(&split_dir, e))?;
                let path = entry.path();
                if path.extension().and_then(|e| e.to_str()) != Some("wav") {
                    continue;
                }
                let rel = path
                    .strip_prefix(root)
                    .unwrap_or(&path)
                    .to_string_lossy()
                    .into_owned();
                let meta = parse_clip_name(&rel)?;
                clips.push(Clip { meta, path });
            }
        }
    }
    clips.sort_by(|a, b| a.meta.clip_id.cmp(&b.meta.clip_id));
    Ok(clips)
}

fn sorted_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if entry.file_type().map_err(|e| Error::io(dir, e))?.is_dir() {
            out.push(entry.path());
        }
    }
    out.sort();
    Ok(out)
}

/// Reads a clip and checks it has the corpus sample rate. No resampling.
pub fn load_clip(path: &Path, expected_rate: u32) -> Result<Waveform> {
    let wave = read_wav(path)?;
    if wave.sample_rate != expected_rate {
        return Err(Error::SampleRate {
            path: path.to_path_buf(),
            found: wave.sample_rate,
            expected: expected_rate,
        });
    }
    Ok(wave)
}

/// Writes one relative clip path per line (UTF-8, LF).
pub fn write_manifest(path: &Path, clips: &[Clip]) -> Result<()> {
    let mut buf = Vec::new();
    for clip in clips {
        buf.extend_from_slice(clip.meta.clip_id.as_bytes());
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}
