//! Clip embeddings: a band-statistics baseline embedder and the `ASDE`
//! embedding file used to import vectors produced elsewhere.

use std::collections::HashSet;
use std::path::Path;

use crate::codec::{read_file, write_file, ByteReader};
use crate::error::{Error, Result};
use crate::filterbank::LogMelSpectrogram;

pub const EMBEDDING_MAGIC: &[u8; 4] = b"ASDE";
pub const EMBEDDING_VERSION: u16 = 1;
pub const DEFAULT_BANDS: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub clip_id: String,
    pub vector: Vec<f64>,
}

impl Embedding {
    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Baseline,
    Imported,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    entries: Vec<Embedding>,
    pub provenance: Provenance,
}

impl EmbeddingSet {
    /// Validates that `dim > 0`, every vector has `dim` finite entries and
    /// clip ids are unique.
    pub fn new(dim: usize, entries: Vec<Embedding>, provenance: Provenance) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParam("embedding dimension must be positive".into()));
        }
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if e.dim() != dim {
                return Err(Error::Dimension(format!(
                    "embedding {:?} has dimension {}, set has {dim}",
                    e.clip_id,
                    e.dim()
                )));
            }
            if let Some(i) = e.vector.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidParam(format!("embedding {:?} has non-finite entry {i}", e.clip_id)));
            }
            if !seen.insert(e.clip_id.as_str()) {
                return Err(Error::DuplicateClip(e.clip_id.clone()));
            }
        }
        Ok(EmbeddingSet {
            dim,
            entries,
            provenance,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Embedding] {
        &self.entries
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Embedding> {
        self.entries.iter()
    }

    /// Keeps the entries for which `keep` holds.
    pub fn filter(&self, keep: impl Fn(&Embedding) -> bool) -> EmbeddingSet {
        EmbeddingSet {
            dim: self.dim,
            entries: self.entries.iter().filter(|e| keep(e)).cloned().collect(),
            provenance: self.provenance,
        }
    }

    /// Rounds every value through `f32`, the precision of the file format.
    pub fn quantized(&self) -> EmbeddingSet {
        EmbeddingSet {
            dim: self.dim,
            entries: self
                .entries
                .iter()
                .map(|e| Embedding {
                    clip_id: e.clip_id.clone(),
                    vector: e.vector.iter().map(|&v| v as f32 as f64).collect(),
                })
                .collect(),
            provenance: self.provenance,
        }
    }
}

/// Splits `n_rows` into `bands` contiguous chunks of `ceil(n_rows / bands)`
/// rows; only the last chunk may be smaller.
pub fn band_ranges(n_rows: usize, bands: usize) -> Result<Vec<(usize, usize)>> {
    if bands == 0 || bands > n_rows {
        return Err(Error::InvalidParam(format!(
            "cannot split {n_rows} filters into {bands} bands"
        )));
    }
    let size = n_rows.div_ceil(bands);
    if (bands - 1) * size >= n_rows {
        return Err(Error::InvalidParam(format!(
            "{bands} bands of {size} filters leave the last band empty for {n_rows} filters"
        )));
    }
    Ok((0..bands)
        .map(|b| (b * size, ((b + 1) * size).min(n_rows)))
        .collect())
}

/// Per band: the band-averaged energy trace over time, summarized by its
/// mean and population standard deviation. The `[mean_0, std_0, mean_1, ...]`
/// vector is L2-normalized; an all-zero vector is returned as is.
pub fn baseline_embed(x: &LogMelSpectrogram, bands: usize, clip_id: &str) -> Result<Embedding> {
    let values = &x.values;
    if values.is_empty() {
        return Err(Error::EmptyInput("spectrogram has no cells"));
    }
    let ranges = band_ranges(values.rows(), bands)?;
    let n_frames = values.cols();
    let mut vector = Vec::with_capacity(2 * bands);
    let mut trace = vec![0.0; n_frames];
    for (lo, hi) in ranges {
        trace.fill(0.0);
        for r in lo..hi {
            for (acc, &v) in trace.iter_mut().zip(values.row(r)) {
                *acc += v;
            }
        }
        let width = (hi - lo) as f64;
        trace.iter_mut().for_each(|v| *v /= width);
        let mean = trace.iter().sum::<f64>() / n_frames as f64;
        let var = trace.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n_frames as f64;
        vector.push(mean);
        vector.push(var.sqrt());
    }
    let norm = vector.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        vector.iter_mut().for_each(|v| *v /= norm);
    } else {
        log::warn!("degenerate all-zero embedding for {clip_id}");
    }
    Ok(Embedding {
        clip_id: clip_id.to_string(),
        vector,
    })
}

pub fn encode_embeddings(set: &EmbeddingSet) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(14 + set.len() * (set.dim * 4 + 32));
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
    out.extend_from_slice(&(set.dim as u32).to_le_bytes());
    out.extend_from_slice(&(set.len() as u32).to_le_bytes());
    for e in &set.entries {
        let id = e.clip_id.as_bytes();
        let len = u16::try_from(id.len())
            .map_err(|_| Error::InvalidParam(format!("clip id longer than 65535 bytes: {:?}", e.clip_id)))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(id);
        for &v in &e.vector {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_embeddings(bytes: &[u8], path: &Path) -> Result<EmbeddingSet> {
    let mut r = ByteReader::new(bytes, path);
    if r.take(4)? != EMBEDDING_MAGIC {
        return Err(r.format("bad magic, expected ASDE"));
    }
    let version = r.u16()?;
    if version != EMBEDDING_VERSION {
        return Err(r.format(format!("unsupported embedding file version {version}")));
    }
    let dim = r.u32()? as usize;
    if dim == 0 {
        return Err(r.format("embedding dimension is 0"));
    }
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u16()? as usize;
        let id = std::str::from_utf8(r.take(len)?).map_err(|_| r.format("clip id is not UTF-8"))?;
        let vector = r.f32s(dim)?.into_iter().map(f64::from).collect();
        entries.push(Embedding {
            clip_id: id.to_string(),
            vector,
        });
    }
    r.finish()?;
    EmbeddingSet::new(dim, entries, Provenance::Imported).map_err(|e| match e {
        Error::DuplicateClip(_) => Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        },
        other => other,
    })
}

pub fn write_embeddings(set: &EmbeddingSet, path: &Path) -> Result<()> {
    write_file(path, &encode_embeddings(set)?)
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingSet> {
    decode_embeddings(&read_file(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::enhance::Enhancement;
    use crate::filterbank::FilterKind;
    use crate::matrix::Matrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn feat(values: Matrix) -> LogMelSpectrogram {
        LogMelSpectrogram {
            values,
            kind: FilterKind::Mfb,
            enhancement: Enhancement::Global,
        }
    }

    #[test]
    fn constant_spectrogram() {
        let e = baseline_embed(&feat(Matrix::filled(128, 20, -4.0)), 16, "c").unwrap();
        assert_eq!(e.dim(), 32);
        let expect = -1.0 / 4.0; // 16 equal means, unit norm
        for b in 0..16 {
            assert!((e.vector[2 * b] - expect).abs() < 1e-12);
            assert_eq!(e.vector[2 * b + 1], 0.0);
        }
    }

    #[test]
    fn single_band_is_mean_and_std() {
        let x = Matrix::from_rows(&[vec![1.0, 3.0], vec![1.0, 3.0]]).unwrap();
        let e = baseline_embed(&feat(x), 1, "a").unwrap();
        let n = (4.0f64 + 1.0).sqrt();
        assert!((e.vector[0] - 2.0 / n).abs() < 1e-15);
        assert!((e.vector[1] - 1.0 / n).abs() < 1e-15);
    }

    #[test]
    fn matches_band_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Matrix::from_vec(128, 50, (0..6400).map(|_| rng.random_range(-20.0..5.0)).collect()).unwrap();
        let e = baseline_embed(&feat(x.clone()), 16, "r").unwrap();
        let mut oracle = Vec::new();
        for b in 0..16 {
            let mut trace = Vec::new();
            for t in 0..50 {
                let mut s = 0.0;
                for f in b * 8..b * 8 + 8 {
                    s += x.get(f, t);
                }
                trace.push(s / 8.0);
            }
            let mean: f64 = trace.iter().sum::<f64>() / 50.0;
            let var: f64 = trace.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 50.0;
            oracle.push(mean);
            oracle.push(var.sqrt());
        }
        let norm = oracle.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (a, o) in e.vector.iter().zip(&oracle) {
            assert!((a - o / norm).abs() < 1e-12);
        }
        let n2: f64 = e.vector.iter().map(|v| v * v).sum();
        assert!((n2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_and_empty_inputs() {
        let e = baseline_embed(&feat(Matrix::zeros(4, 3)), 2, "z").unwrap();
        assert!(e.vector.iter().all(|&v| v == 0.0));
        assert!(baseline_embed(&feat(Matrix::zeros(0, 0)), 2, "e").is_err());
        assert!(baseline_embed(&feat(Matrix::zeros(4, 3)), 5, "b").is_err());
    }

    #[test]
    fn band_partition() {
        assert_eq!(band_ranges(10, 4).unwrap(), vec![(0, 3), (3, 6), (6, 9), (9, 10)]);
        assert_eq!(band_ranges(128, 16).unwrap()[15], (120, 128));
        assert!(band_ranges(10, 6).is_err());
    }

    fn set(ids: &[&str], dim: usize) -> EmbeddingSet {
        let entries = ids
            .iter()
            .enumerate()
            .map(|(i, id)| Embedding {
                clip_id: id.to_string(),
                vector: (0..dim).map(|d| ((i * dim + d) as f32 * 0.37).sin() as f64).collect(),
            })
            .collect();
        EmbeddingSet::new(dim, entries, Provenance::Baseline).unwrap()
    }

    #[test]
    fn file_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.asde");
        let s = set(&["a/train/x.wav", "b"], 3);
        write_embeddings(&s, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        match decode_embeddings(&bytes[..bytes.len() - 2], &path) {
            Err(Error::Truncated { offset, .. }) => assert_eq!(offset, bytes.len() - 2),
            other => panic!("{other:?}"),
        }
        let mut bad = bytes.clone();
        bad[3] = b'F';
        assert!(matches!(decode_embeddings(&bad, &path), Err(Error::Format { .. })));
        let mut zero_dim = bytes.clone();
        zero_dim[6..10].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(decode_embeddings(&zero_dim, &path), Err(Error::Format { .. })));

        // two entries with the same id
        let mut dup = Vec::new();
        dup.extend_from_slice(b"ASDE");
        dup.extend_from_slice(&1u16.to_le_bytes());
        dup.extend_from_slice(&1u32.to_le_bytes());
        dup.extend_from_slice(&2u32.to_le_bytes());
        for _ in 0..2 {
            dup.extend_from_slice(&1u16.to_le_bytes());
            dup.push(b'q');
            dup.extend_from_slice(&1.0f32.to_le_bytes());
        }
        assert!(matches!(decode_embeddings(&dup, &path), Err(Error::Format { .. })));

        assert!(EmbeddingSet::new(0, vec![], Provenance::Baseline).is_err());
    }

    proptest! {
        #[test]
        fn file_round_trip(n in 0usize..6, dim in 1usize..9) {
            let ids: Vec<String> = (0..n).map(|i| format!("m/test/clip_{i}.wav")).collect();
            let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
            let s = set(&refs, dim);
            let back = decode_embeddings(&encode_embeddings(&s).unwrap(), Path::new("x")).unwrap();
            prop_assert_eq!(back.entries(), s.entries());
            prop_assert_eq!(back.dim(), dim);
        }
    }
}
