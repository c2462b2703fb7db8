//! On-disk embeddings, image manifests and the family index built on top.
//!
//! Embeddings live in a KEB1 file (see [`keb`]) as 32-bit floats. Callers
//! read rows as `f64` and do all arithmetic in double precision.
//!
//! Every image has an [`ImageRecord`] in a JSON Lines manifest that ties it to
//! a person, a family and a matrix row. [`build_index`] folds records into a
//! [`DatasetIndex`] whose iteration order is lexicographic by id.

mod index;
mod keb;
mod kin;
mod manifest;

pub use index::{build_index, DatasetIndex};
pub use keb::{load_embeddings, read_embeddings, write_embeddings, write_embeddings_to, KEB_MAGIC};
pub use kin::KinType;
pub use manifest::{load_manifest, parse_manifest, write_manifest, ImageRecord};

use crate::{Error, Result};

/// Dense row-major table of `rows × dim` embeddings stored as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    /// Build from a flat row-major buffer. Rejects non-finite values and
    /// buffers that are not a whole number of rows.
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidHeader("dimension must be positive".into()));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: data.len() % dim,
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue {
                row: pos / dim,
                col: pos % dim,
            });
        }
        Ok(Self { dim, data })
    }

    pub fn empty(dim: usize) -> Result<Self> {
        Self::new(dim, Vec::new())
    }

    /// Build from `f64` rows, rounding each value to `f32`.
    pub fn from_rows_f64(dim: usize, rows: &[Vec<f64>]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: row.len(),
                });
            }
            data.extend(row.iter().map(|&v| v as f32));
        }
        Self::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> Result<&[f32]> {
        if i >= self.rows() {
            return Err(Error::RowOutOfRange {
                row: i,
                rows: self.rows(),
            });
        }
        Ok(&self.data[i * self.dim..(i + 1) * self.dim])
    }

    /// Row `i` widened to `f64`.
    pub fn row_f64(&self, i: usize) -> Result<Vec<f64>> {
        Ok(self.row(i)?.iter().map(|&v| f64::from(v)).collect())
    }
}
