//! `ASDF` feature files.
//!
//! Layout (little endian): magic `ASDF`, version `u16 = 1`, kind `u8`
//! (0 ofb, 1 mfb, 2 gfb), enhancement `u8` (0 none, 1 global, 2 local,
//! 3 customized), `n_filters: u32`, `T: u32`, then `n_filters * T` `f32`
//! values, filter-major.

use std::path::Path;

use crate::codec::{read_file, write_file, ByteReader};
use crate::enhance::Enhancement;
use crate::error::Result;
use crate::filterbank::{FilterKind, LogMelSpectrogram};
use crate::matrix::Matrix;

pub const FEATURE_MAGIC: &[u8; 4] = b"ASDF";
pub const FEATURE_VERSION: u16 = 1;
pub const FEATURE_HEADER_LEN: usize = 16;

pub fn encode_features(feat: &LogMelSpectrogram) -> Vec<u8> {
    let (rows, cols) = feat.values.shape();
    let mut out = Vec::with_capacity(FEATURE_HEADER_LEN + rows * cols * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.push(feat.kind.code());
    out.push(feat.enhancement.code());
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    for &v in feat.values.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8], path: &Path) -> Result<LogMelSpectrogram> {
    let mut r = ByteReader::new(bytes, path);
    if r.take(4)? != FEATURE_MAGIC {
        return Err(r.format("bad magic, expected ASDF"));
    }
    let version = r.u16()?;
    if version != FEATURE_VERSION {
        return Err(r.format(format!("unsupported feature file version {version}")));
    }
    let kind_code = r.u8()?;
    let kind = FilterKind::from_code(kind_code).ok_or_else(|| r.format(format!("unknown kind code {kind_code}")))?;
    let enh_code = r.u8()?;
    let enhancement =
        Enhancement::from_code(enh_code).ok_or_else(|| r.format(format!("unknown enhancement code {enh_code}")))?;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let values = r.f32s(rows * cols)?;
    r.finish()?;
    Ok(LogMelSpectrogram {
        values: Matrix::from_vec(rows, cols, values.into_iter().map(f64::from).collect())?,
        kind,
        enhancement,
    })
}

pub fn write_features(path: &Path, feat: &LogMelSpectrogram) -> Result<()> {
    write_file(path, &encode_features(feat))
}

pub fn read_features(path: &Path) -> Result<LogMelSpectrogram> {
    decode_features(&read_file(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use proptest::prelude::*;

    fn p() -> &'static Path {
        Path::new("mem.asdf")
    }

    #[test]
    fn header_bytes_are_exact() {
        let feat = LogMelSpectrogram {
            values: Matrix::from_rows(&[vec![1.0, -2.0, 0.5], vec![0.25, 3.0, -1.5]]).unwrap(),
            kind: FilterKind::Mfb,
            enhancement: Enhancement::Local,
        };
        let bytes = encode_features(&feat);
        assert_eq!(&bytes[..16], &[b'A', b'S', b'D', b'F', 1, 0, 1, 2, 2, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(bytes.len(), 16 + 6 * 4);
        // filter-major: second value is row 0, column 1
        assert_eq!(&bytes[20..24], &(-2.0f32).to_le_bytes());
        assert_eq!(&bytes[28..32], &0.25f32.to_le_bytes());
    }

    #[test]
    fn decode_errors() {
        let feat = LogMelSpectrogram {
            values: Matrix::zeros(2, 2),
            kind: FilterKind::Gfb,
            enhancement: Enhancement::None,
        };
        let bytes = encode_features(&feat);
        assert!(matches!(decode_features(&bytes[..20], p()), Err(Error::Truncated { offset: 20, .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_features(&bad, p()), Err(Error::Format { .. })));
        let mut bad = bytes.clone();
        bad[6] = 9;
        assert!(matches!(decode_features(&bad, p()), Err(Error::Format { .. })));
        let mut long = bytes;
        long.push(0);
        assert!(matches!(decode_features(&long, p()), Err(Error::Format { .. })));
    }

    proptest! {
        #[test]
        fn round_trip_at_f32(rows in 1usize..6, cols in 1usize..6, seed in any::<u32>(), kind in 0u8..3, enh in 0u8..4) {
            let vals: Vec<f64> = (0..rows * cols).map(|i| ((seed as f64) * 0.001 + i as f64).sin() * 40.0).collect();
            let feat = LogMelSpectrogram {
                values: Matrix::from_vec(rows, cols, vals).unwrap().quantize_f32(),
                kind: FilterKind::from_code(kind).unwrap(),
                enhancement: Enhancement::from_code(enh).unwrap(),
            };
            let back = decode_features(&encode_features(&feat), p()).unwrap();
            prop_assert_eq!(back, feat);
        }
    }
}
