//! On-disk formats.
//!
//! `EMB1`: magic `b"EMB1"`, `n_rows: u32 LE`, `n_cols: u32 LE`, then
//! `n_rows * n_cols` `f32 LE` values, row-major.
//!
//! `LBL1`: magic `b"LBL1"`, `n_rows: u32 LE`, then `n_rows` `u32 LE` class
//! indices.
//!
//! Files ending in `.csv` are read as headerless comma-separated text instead:
//! one row of floats per line for matrices, one or more integers per line for
//! labels.

use std::fs;
use std::path::Path;

use crate::error::{KclError, Result};
use crate::types::{normalize, FeatureMatrix};

pub const EMB_MAGIC: [u8; 4] = *b"EMB1";
pub const LBL_MAGIC: [u8; 4] = *b"LBL1";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> KclError + '_ {
    move |source| KclError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn u32_at(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

fn check_header(bytes: &[u8], magic: [u8; 4], header_len: usize, path: &Path) -> Result<()> {
    if bytes.len() < 4 {
        return Err(KclError::TruncatedPayload {
            path: path.to_path_buf(),
            expected: header_len,
            got: bytes.len(),
        });
    }
    let found: [u8; 4] = bytes[..4].try_into().unwrap();
    if found != magic {
        return Err(KclError::BadMagic {
            path: path.to_path_buf(),
            found,
            expected: magic,
        });
    }
    if bytes.len() < header_len {
        return Err(KclError::TruncatedPayload {
            path: path.to_path_buf(),
            expected: header_len,
            got: bytes.len(),
        });
    }
    Ok(())
}

fn check_payload(bytes: &[u8], expected: usize, path: &Path) -> Result<()> {
    match bytes.len().cmp(&expected) {
        std::cmp::Ordering::Less => Err(KclError::TruncatedPayload {
            path: path.to_path_buf(),
            expected,
            got: bytes.len(),
        }),
        std::cmp::Ordering::Greater => Err(KclError::Parse {
            path: path.to_path_buf(),
            msg: format!("{} trailing bytes", bytes.len() - expected),
        }),
        std::cmp::Ordering::Equal => Ok(()),
    }
}

fn to_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| KclError::DimMismatch(format!("{what} {n} does not fit in u32")))
}

pub fn encode_emb(m: &FeatureMatrix) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(12 + 4 * m.as_slice().len());
    out.extend_from_slice(&EMB_MAGIC);
    out.extend_from_slice(&to_u32(m.rows(), "row count")?.to_le_bytes());
    out.extend_from_slice(&to_u32(m.cols(), "column count")?.to_le_bytes());
    for &v in m.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

/// `path` is only used in error messages.
pub fn decode_emb(bytes: &[u8], path: &Path) -> Result<FeatureMatrix> {
    check_header(bytes, EMB_MAGIC, 12, path)?;
    let rows = u32_at(bytes, 4) as usize;
    let cols = u32_at(bytes, 8) as usize;
    let payload = &bytes[12..];
    check_payload(payload, 4 * rows * cols, path)?;
    let data = payload
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    FeatureMatrix::new(rows, cols, data)
}

pub fn encode_labels(labels: &[usize]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + 4 * labels.len());
    out.extend_from_slice(&LBL_MAGIC);
    out.extend_from_slice(&to_u32(labels.len(), "label count")?.to_le_bytes());
    for &l in labels {
        out.extend_from_slice(&to_u32(l, "label")?.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_labels(bytes: &[u8], path: &Path) -> Result<Vec<usize>> {
    check_header(bytes, LBL_MAGIC, 8, path)?;
    let rows = u32_at(bytes, 4) as usize;
    let payload = &bytes[8..];
    check_payload(payload, 4 * rows, path)?;
    Ok(payload
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect())
}

fn csv_records(path: &Path) -> Result<Vec<Vec<String>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| KclError::Parse {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
    reader
        .records()
        .map(|r| {
            r.map(|rec| rec.iter().filter(|f| !f.is_empty()).map(str::to_owned).collect::<Vec<_>>())
                .map_err(|e| KclError::Parse {
                    path: path.to_path_buf(),
                    msg: e.to_string(),
                })
        })
        .filter(|r| !matches!(r, Ok(v) if v.is_empty()))
        .collect()
}

fn parse_field<T: std::str::FromStr>(field: &str, line: usize, path: &Path) -> Result<T> {
    field.parse().map_err(|_| KclError::Parse {
        path: path.to_path_buf(),
        msg: format!("line {}: cannot parse {field:?}", line + 1),
    })
}

fn read_csv_matrix(path: &Path) -> Result<FeatureMatrix> {
    let rows = csv_records(path)?
        .iter()
        .enumerate()
        .map(|(i, rec)| rec.iter().map(|f| parse_field::<f64>(f, i, path)).collect())
        .collect::<Result<Vec<Vec<f64>>>>()?;
    FeatureMatrix::from_rows(&rows)
}

fn read_csv_labels(path: &Path) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for (i, rec) in csv_records(path)?.iter().enumerate() {
        for f in rec {
            out.push(parse_field::<usize>(f, i, path)?);
        }
    }
    Ok(out)
}

/// Reads an `EMB1` (or `.csv`) matrix, optionally normalizing its rows.
pub fn read_emb(path: impl AsRef<Path>, normalize_rows: bool) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let m = if is_csv(path) {
        read_csv_matrix(path)?
    } else {
        decode_emb(&fs::read(path).map_err(io_err(path))?, path)?
    };
    if normalize_rows {
        normalize(&m)
    } else {
        Ok(m)
    }
}

pub fn write_emb(path: impl AsRef<Path>, m: &FeatureMatrix) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_emb(m)?).map_err(io_err(path))
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    if is_csv(path) {
        read_csv_labels(path)
    } else {
        decode_labels(&fs::read(path).map_err(io_err(path))?, path)
    }
}

pub fn write_labels(path: impl AsRef<Path>, labels: &[usize]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_labels(labels)?).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p() -> &'static Path {
        Path::new("mem.emb")
    }

    #[test]
    fn bad_magic() {
        let m = FeatureMatrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let mut bytes = encode_emb(&m).unwrap();
        bytes[3] = b'2';
        assert!(matches!(decode_emb(&bytes, p()), Err(KclError::BadMagic { .. })));
        assert!(matches!(
            decode_labels(&bytes, p()),
            Err(KclError::BadMagic { .. })
        ));
    }

    #[test]
    fn truncated_payload() {
        let m = FeatureMatrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let bytes = encode_emb(&m).unwrap();
        assert!(matches!(
            decode_emb(&bytes[..bytes.len() - 4], p()),
            Err(KclError::TruncatedPayload { expected: 16, got: 12, .. })
        ));
        assert!(matches!(decode_emb(&bytes[..6], p()), Err(KclError::TruncatedPayload { .. })));
        let labels = encode_labels(&[1, 2, 3]).unwrap();
        assert!(matches!(
            decode_labels(&labels[..labels.len() - 4], p()),
            Err(KclError::TruncatedPayload { .. })
        ));
    }

    #[test]
    fn layout_is_little_endian() {
        let m = FeatureMatrix::from_rows(&[[1.0]]).unwrap();
        let bytes = encode_emb(&m).unwrap();
        assert_eq!(&bytes[..4], b"EMB1");
        assert_eq!(&bytes[4..12], &[1, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&bytes[12..], &1.0f32.to_le_bytes());
        assert_eq!(encode_labels(&[258]).unwrap(), b"LBL1\x01\x00\x00\x00\x02\x01\x00\x00");
    }

    #[test]
    fn files_round_trip_and_normalize_on_request() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.emb");
        let m = FeatureMatrix::from_rows(&[[3.0, 4.0], [0.0, 2.0]]).unwrap();
        write_emb(&path, &m).unwrap();
        assert_eq!(read_emb(&path, false).unwrap(), m);
        let n = read_emb(&path, true).unwrap();
        assert_eq!(n.row(0), &[0.6, 0.8]);

        let lp = dir.path().join("l.lbl");
        write_labels(&lp, &[0, 4, 2]).unwrap();
        assert_eq!(read_labels(&lp).unwrap(), vec![0, 4, 2]);

        let missing = read_emb(dir.path().join("nope.emb"), false);
        assert!(matches!(missing, Err(KclError::Io { .. })));
    }

    #[test]
    fn csv_ingestion() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        fs::write(&path, "0.5, 1.5\n-2,3e-1\n\n").unwrap();
        let m = read_emb(&path, false).unwrap();
        assert_eq!(m.as_slice(), &[0.5, 1.5, -2.0, 0.3]);

        let lp = dir.path().join("l.csv");
        fs::write(&lp, "0\n2\n1,1\n").unwrap();
        assert_eq!(read_labels(&lp).unwrap(), vec![0, 2, 1, 1]);

        fs::write(&path, "0.5,x\n").unwrap();
        assert!(matches!(read_emb(&path, false), Err(KclError::Parse { .. })));
    }

    proptest! {
        #[test]
        fn emb_round_trip_is_bit_exact(
            rows in 0usize..8,
            cols in 1usize..8,
            vals in proptest::collection::vec(proptest::num::f32::NORMAL | proptest::num::f32::ZERO, 64),
        ) {
            let data: Vec<f64> = (0..rows * cols).map(|i| f64::from(vals[i % 64])).collect();
            let m = FeatureMatrix::new(rows, cols, data).unwrap();
            let back = decode_emb(&encode_emb(&m).unwrap(), p()).unwrap();
            prop_assert_eq!(back.rows(), rows);
            for (a, b) in m.as_slice().iter().zip(back.as_slice()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }

        #[test]
        fn labels_round_trip(labels in proptest::collection::vec(0usize..1000, 0..50)) {
            let back = decode_labels(&encode_labels(&labels).unwrap(), p()).unwrap();
            prop_assert_eq!(back, labels);
        }
    }
}
