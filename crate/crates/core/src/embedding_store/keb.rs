//! KEB1 embedding files.
//!
//! ```text
//! offset  size      field
//! 0       4         magic  b"KEB1"
//! 4       4         version u32 LE (= 1)
//! 8       4         count n u32 LE
//! 12      4         dim d u32 LE
//! 16      n*d*4     values, IEEE-754 binary32 LE, row-major
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::EmbeddingMatrix;
use crate::{Error, Result};

pub const KEB_MAGIC: [u8; 4] = *b"KEB1";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

fn read_u32(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

/// Parse a KEB1 buffer.
pub fn read_embeddings(bytes: &[u8]) -> Result<EmbeddingMatrix> {
    if bytes.len() < 4 || bytes[..4] != KEB_MAGIC {
        return Err(Error::BadMagic {
            expected: "KEB1".into(),
            found: String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedFile {
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let version = read_u32(bytes, 4);
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let n = read_u32(bytes, 8) as u64;
    let d = read_u32(bytes, 12) as u64;
    if d == 0 {
        return Err(Error::InvalidHeader("dimension must be positive".into()));
    }
    let expected = HEADER_LEN as u64 + n * d * 4;
    let found = bytes.len() as u64;
    if found < expected {
        return Err(Error::TruncatedFile { expected, found });
    }
    if found > expected {
        return Err(Error::TrailingBytes(found - expected));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    EmbeddingMatrix::new(d as usize, data)
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_embeddings(&bytes)
}

pub fn write_embeddings_to<W: Write>(matrix: &EmbeddingMatrix, mut out: W) -> std::io::Result<()> {
    let too_big = |what| std::io::Error::new(std::io::ErrorKind::InvalidInput, what);
    let n = u32::try_from(matrix.rows()).map_err(|_| too_big("row count exceeds u32"))?;
    let d = u32::try_from(matrix.dim()).map_err(|_| too_big("dimension exceeds u32"))?;
    out.write_all(&KEB_MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&n.to_le_bytes())?;
    out.write_all(&d.to_le_bytes())?;
    for v in matrix.as_slice() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()
}

pub fn write_embeddings(matrix: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_embeddings_to(matrix, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn encode(m: &EmbeddingMatrix) -> Vec<u8> {
        let mut buf = Vec::new();
        write_embeddings_to(m, &mut buf).unwrap();
        buf
    }

    #[test]
    fn empty_matrix_header_only() {
        let m = EmbeddingMatrix::empty(512).unwrap();
        let bytes = encode(&m);
        assert_eq!(bytes.len(), 16);
        let back = read_embeddings(&bytes).unwrap();
        assert_eq!(back.rows(), 0);
        assert_eq!(back.dim(), 512);
    }

    #[test]
    fn two_by_three_is_40_bytes() {
        let m = EmbeddingMatrix::new(3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let bytes = encode(&m);
        assert_eq!(bytes.len(), 4 + 4 + 4 + 4 + 24);
        assert_eq!(&bytes[..4], b"KEB1");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &3u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[36..40], &6.0f32.to_le_bytes());
    }

    #[test]
    fn truncated_payload() {
        let m = EmbeddingMatrix::new(3, vec![1.0; 6]).unwrap();
        let bytes = encode(&m);
        let err = read_embeddings(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(matches!(err, Error::TruncatedFile { expected: 40, found: 39 }));
        assert!(matches!(read_embeddings(&bytes[..10]), Err(Error::TruncatedFile { .. })));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let m = EmbeddingMatrix::new(3, vec![1.0; 6]).unwrap();
        let mut bytes = encode(&m);
        bytes.push(0);
        assert!(matches!(read_embeddings(&bytes), Err(Error::TrailingBytes(1))));
    }

    #[test]
    fn bad_magic_and_version() {
        let m = EmbeddingMatrix::new(1, vec![1.0]).unwrap();
        let mut bytes = encode(&m);
        bytes[0] = b'X';
        assert!(matches!(read_embeddings(&bytes), Err(Error::BadMagic { .. })));
        assert!(matches!(read_embeddings(b"KE"), Err(Error::BadMagic { .. })));
        let mut bytes = encode(&m);
        bytes[4] = 2;
        assert!(matches!(read_embeddings(&bytes), Err(Error::UnsupportedVersion(2))));
    }

    #[test]
    fn non_finite_reports_position() {
        let m = EmbeddingMatrix::new(2, vec![1.0; 4]).unwrap();
        let mut bytes = encode(&m);
        bytes[16 + 3 * 4..16 + 4 * 4].copy_from_slice(&f32::INFINITY.to_le_bytes());
        assert!(matches!(
            read_embeddings(&bytes),
            Err(Error::NonFiniteValue { row: 1, col: 1 })
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.keb");
        let m = EmbeddingMatrix::new(2, vec![0.1, -0.2, 3.5e-8, 1e30]).unwrap();
        write_embeddings(&m, &path).unwrap();
        assert_eq!(load_embeddings(&path).unwrap(), m);
        assert!(matches!(
            load_embeddings(dir.path().join("missing")),
            Err(Error::Io { .. })
        ));
    }
}
