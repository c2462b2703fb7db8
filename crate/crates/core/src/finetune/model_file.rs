//! KMD1 adapter model files.
//!
//! ```text
//! magic b"KMD1" | version u32 LE (= 1) | d_in u32 | d_out u32 | N u32 | normalize u8
//! projection   d_in × d_out  f64 LE row-major
//! weights      N × d_out     f64 LE row-major
//! bias         N             f64 LE
//! trailer      N lines, each a JSON string holding one family id
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{AdapterModel, Matrix};
use crate::{Error, Result};

pub const KMD_MAGIC: [u8; 4] = *b"KMD1";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 21;

pub fn write_model_to<W: Write>(model: &AdapterModel, mut out: W) -> std::io::Result<()> {
    let dim = |v: usize| {
        u32::try_from(v).map_err(|_| std::io::Error::new(std::io::ErrorKind::InvalidInput, "dimension exceeds u32"))
    };
    out.write_all(&KMD_MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    for v in [model.d_in(), model.d_out(), model.num_classes()] {
        out.write_all(&dim(v)?.to_le_bytes())?;
    }
    out.write_all(&[u8::from(model.normalize_embeddings)])?;
    let params = model
        .projection
        .as_slice()
        .iter()
        .chain(model.classifier_weights.as_slice())
        .chain(&model.classifier_bias);
    for v in params {
        out.write_all(&v.to_le_bytes())?;
    }
    for id in &model.family_ids {
        writeln!(out, "{}", serde_json::to_string(id).expect("string serializes"))?;
    }
    out.flush()
}

pub fn write_model(model: &AdapterModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_model_to(model, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::TruncatedFile {
                expected: (self.pos + n) as u64,
                found: self.bytes.len() as u64,
            });
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or(Error::InvalidHeader("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn read_model(bytes: &[u8]) -> Result<AdapterModel> {
    if bytes.len() < 4 || bytes[..4] != KMD_MAGIC {
        return Err(Error::BadMagic {
            expected: "KMD1".into(),
            found: String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedFile {
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let mut cur = Cursor { bytes, pos: 4 };
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let d_in = cur.u32()? as usize;
    let d_out = cur.u32()? as usize;
    let n = cur.u32()? as usize;
    let normalize_embeddings = match cur.take(1)?[0] {
        0 => false,
        1 => true,
        other => return Err(Error::InvalidHeader(format!("normalize flag {other}"))),
    };
    let projection = Matrix::from_vec(d_in, d_out, cur.f64s(d_in * d_out)?)?;
    let classifier_weights = Matrix::from_vec(n, d_out, cur.f64s(n * d_out)?)?;
    let classifier_bias = cur.f64s(n)?;

    let trailer = std::str::from_utf8(&bytes[cur.pos..]).map_err(|e| Error::Parse {
        line: 0,
        detail: format!("family id trailer is not UTF-8: {e}"),
    })?;
    let family_ids = trailer
        .lines()
        .enumerate()
        .map(|(i, line)| {
            serde_json::from_str::<String>(line).map_err(|e| Error::Parse {
                line: i + 1,
                detail: e.to_string(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if family_ids.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: family_ids.len(),
        });
    }
    let model = AdapterModel {
        projection,
        classifier_weights,
        classifier_bias,
        normalize_embeddings,
        family_ids,
    };
    model.validate()?;
    Ok(model)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<AdapterModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_model(&bytes)
}
