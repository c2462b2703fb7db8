//! Family-classification fine-tuning of a linear adapter.
//!
//! Input embeddings `x` are frozen. The adapter maps them through a learnable
//! projection `z = x·P`, optionally L2-normalizes (`h = z/‖z‖`), and a linear
//! classifier scores every family: `logits = h·Wᵀ + b`. Training minimizes
//! the batch-mean softmax cross-entropy against the family label.
//!
//! After training the classifier is discarded and [`apply_adapter`] produces
//! new embeddings for cosine comparison.

mod matrix;
mod model_file;
mod schedule;
mod train;

pub use matrix::Matrix;
pub use model_file::{load_model, read_model, write_model, write_model_to, KMD_MAGIC};
pub use schedule::{lr_at, TrainConfig};
pub use train::{train, write_train_log, write_train_log_to, TrainLog, Validation};

use std::collections::HashSet;

use crate::embedding_store::EmbeddingMatrix;
use crate::rng::SeededRng;
use crate::similarity::l2_norm;
use crate::{Error, Result};

/// Standard deviation of the classifier weight initialization.
pub const CLASSIFIER_INIT_STD: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterModel {
    /// `d_in × d_out`
    pub projection: Matrix,
    /// `N × d_out`, row `j` scores family `family_ids[j]`.
    pub classifier_weights: Matrix,
    pub classifier_bias: Vec<f64>,
    pub normalize_embeddings: bool,
    pub family_ids: Vec<String>,
}

impl AdapterModel {
    /// Identity-initialized projection, Gaussian(0, 0.01) classifier, zero bias.
    pub fn init(
        d_in: usize,
        d_out: usize,
        family_ids: Vec<String>,
        normalize_embeddings: bool,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let n = family_ids.len();
        let mut weights = Matrix::zeros(n, d_out);
        for w in weights.as_mut_slice() {
            *w = rng.normal(CLASSIFIER_INIT_STD);
        }
        let model = Self {
            projection: Matrix::identity(d_in, d_out),
            classifier_weights: weights,
            classifier_bias: vec![0.0; n],
            normalize_embeddings,
            family_ids,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn d_in(&self) -> usize {
        self.projection.rows()
    }

    pub fn d_out(&self) -> usize {
        self.projection.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.classifier_weights.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.family_ids.len();
        if self.classifier_weights.rows() != n || self.classifier_bias.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: self.classifier_weights.rows(),
            });
        }
        if self.classifier_weights.cols() != self.d_out() {
            return Err(Error::DimensionMismatch {
                expected: self.d_out(),
                actual: self.classifier_weights.cols(),
            });
        }
        let unique: HashSet<&str> = self.family_ids.iter().map(String::as_str).collect();
        if unique.len() != n {
            return Err(Error::InvalidConfig("family_ids must be unique".into()));
        }
        if !(self.projection.is_finite()
            && self.classifier_weights.is_finite()
            && self.classifier_bias.iter().all(|v| v.is_finite()))
        {
            return Err(Error::InvalidConfig("model parameters must be finite".into()));
        }
        Ok(())
    }

    /// Projected (and optionally normalized) embedding of one input row.
    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.embed_cached(x)?.h)
    }

    fn embed_cached(&self, x: &[f64]) -> Result<Embedded> {
        if x.len() != self.d_in() {
            return Err(Error::DimensionMismatch {
                expected: self.d_in(),
                actual: x.len(),
            });
        }
        let z = self.projection.left_mul(x);
        if !self.normalize_embeddings {
            return Ok(Embedded { h: z, norm: 1.0 });
        }
        let norm = l2_norm(&z);
        if norm == 0.0 {
            return Err(Error::ZeroVector);
        }
        Ok(Embedded {
            h: z.iter().map(|v| v / norm).collect(),
            norm,
        })
    }

    /// Trainable parameters in the same order as [`Gradients`] values.
    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.projection
            .as_mut_slice()
            .iter_mut()
            .chain(self.classifier_weights.as_mut_slice())
            .chain(&mut self.classifier_bias)
    }

    fn logits_for(&self, h: &[f64]) -> Vec<f64> {
        (0..self.num_classes())
            .map(|j| {
                let w = self.classifier_weights.row(j);
                h.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + self.classifier_bias[j]
            })
            .collect()
    }
}

struct Embedded {
    h: Vec<f64>,
    /// ‖z‖ when normalizing, 1 otherwise.
    norm: f64,
}

/// Gradients with the same shapes as the trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub projection: Matrix,
    pub classifier_weights: Matrix,
    pub classifier_bias: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(model: &AdapterModel) -> Self {
        Self {
            projection: Matrix::zeros(model.d_in(), model.d_out()),
            classifier_weights: Matrix::zeros(model.num_classes(), model.d_out()),
            classifier_bias: vec![0.0; model.num_classes()],
        }
    }

    pub(crate) fn values(&self) -> impl Iterator<Item = &f64> {
        self.projection
            .as_slice()
            .iter()
            .chain(self.classifier_weights.as_slice())
            .chain(&self.classifier_bias)
    }

    pub(crate) fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.projection
            .as_mut_slice()
            .iter_mut()
            .chain(self.classifier_weights.as_mut_slice())
            .chain(&mut self.classifier_bias)
    }

    /// L2 norm over every parameter gradient together.
    pub fn global_norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.values_mut() {
            *v *= factor;
        }
    }
}

/// Logits for every row of `batch` (`B × d_in`), shape `B × N`.
pub fn forward_logits(model: &AdapterModel, batch: &Matrix) -> Result<Matrix> {
    let mut out = Matrix::zeros(batch.rows(), model.num_classes());
    for i in 0..batch.rows() {
        let e = model.embed_cached(batch.row(i))?;
        out.row_mut(i).copy_from_slice(&model.logits_for(&e.h));
    }
    Ok(out)
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn check_labels(labels: &[usize], classes: usize, rows: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::LengthMismatch {
            left: rows,
            right: labels.len(),
        });
    }
    if rows == 0 {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    Ok(())
}

/// Batch mean of `-log softmax(logits)[label]`.
pub fn classification_loss(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    check_labels(labels, logits.cols(), logits.rows())?;
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let row = logits.row(i);
            log_sum_exp(row) - row[y]
        })
        .sum();
    Ok(total / labels.len() as f64)
}

/// Loss and its analytic gradients with respect to `P`, `W` and `b`.
pub fn loss_and_gradients(
    model: &AdapterModel,
    batch: &Matrix,
    labels: &[usize],
) -> Result<(f64, Gradients)> {
    check_labels(labels, model.num_classes(), batch.rows())?;
    let scale = 1.0 / batch.rows() as f64;
    let mut grads = Gradients::zeros_like(model);
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let x = batch.row(i);
        let e = model.embed_cached(x)?;
        let logits = model.logits_for(&e.h);
        let lse = log_sum_exp(&logits);
        loss += lse - logits[y];

        // dL/dlogits = (softmax - onehot) / B
        let dlogits: Vec<f64> = logits
            .iter()
            .enumerate()
            .map(|(j, &l)| ((l - lse).exp() - f64::from(u8::from(j == y))) * scale)
            .collect();

        let mut dh = vec![0.0; model.d_out()];
        for (j, &g) in dlogits.iter().enumerate() {
            grads.classifier_bias[j] += g;
            let w = model.classifier_weights.row(j);
            for ((gw, &hv), (d, &wv)) in grads
                .classifier_weights
                .row_mut(j)
                .iter_mut()
                .zip(&e.h)
                .zip(dh.iter_mut().zip(w))
            {
                *gw += g * hv;
                *d += g * wv;
            }
        }

        // Through h = z/‖z‖: dz = (dh - (dh·h) h) / ‖z‖.
        let dz: Vec<f64> = if model.normalize_embeddings {
            let proj: f64 = dh.iter().zip(&e.h).map(|(a, b)| a * b).sum();
            dh.iter().zip(&e.h).map(|(d, h)| (d - proj * h) / e.norm).collect()
        } else {
            dh
        };

        for (k, &xk) in x.iter().enumerate() {
            for (gp, &d) in grads.projection.row_mut(k).iter_mut().zip(&dz) {
                *gp += xk * d;
            }
        }
    }
    Ok((loss * scale, grads))
}

/// Rescales `grads` so their global norm is at most `clip_norm`.
pub fn clip_gradients(mut grads: Gradients, clip_norm: f64) -> Gradients {
    let norm = grads.global_norm();
    if norm > clip_norm {
        grads.scale(clip_norm / norm);
    }
    grads
}

/// Maps every row through the trained projection (and normalization).
pub fn apply_adapter(model: &AdapterModel, matrix: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    if matrix.dim() != model.d_in() {
        return Err(Error::DimensionMismatch {
            expected: model.d_in(),
            actual: matrix.dim(),
        });
    }
    let rows = (0..matrix.rows())
        .map(|i| model.embed(&matrix.row_f64(i)?))
        .collect::<Result<Vec<_>>>()?;
    EmbeddingMatrix::from_rows_f64(model.d_out(), &rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(d_in: usize, d_out: usize, n: usize, normalize: bool, seed: u64) -> AdapterModel {
        let ids = (0..n).map(|j| format!("F{j}")).collect();
        AdapterModel::init(d_in, d_out, ids, normalize, &mut SeededRng::new(seed)).unwrap()
    }

    fn randomize(m: &mut AdapterModel, seed: u64) {
        let mut rng = SeededRng::new(seed);
        for v in m.projection.as_mut_slice() {
            *v = rng.normal(1.0);
        }
        for v in m.classifier_weights.as_mut_slice() {
            *v = rng.normal(1.0);
        }
        for v in &mut m.classifier_bias {
            *v = rng.normal(0.5);
        }
    }

    #[test]
    fn zero_classifier_gives_zero_logits() {
        let mut m = model(3, 3, 4, false, 1);
        m.classifier_weights = Matrix::zeros(4, 3);
        let batch = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 0.0]]).unwrap();
        let logits = forward_logits(&m, &batch).unwrap();
        assert!(logits.as_slice().iter().all(|&v| v == 0.0));
        let single = model(3, 3, 1, true, 1);
        assert_eq!(forward_logits(&single, &batch).unwrap().cols(), 1);
    }

    #[test]
    fn logits_match_hand_multiplication() {
        let mut m = model(3, 2, 2, false, 1);
        m.projection = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, -1.0], vec![0.5, 0.5]]).unwrap();
        m.classifier_weights = Matrix::from_rows(&[vec![1.0, 0.0], vec![2.0, -1.0]]).unwrap();
        m.classifier_bias = vec![0.1, -0.2];
        let batch = Matrix::from_rows(&[vec![1.0, 1.0, 2.0], vec![0.0, 3.0, -2.0]]).unwrap();
        // z0 = (1 + 0 + 1, 2 - 1 + 1) = (2, 2); z1 = (0 + 0 - 1, 0 - 3 - 1) = (-1, -4)
        let logits = forward_logits(&m, &batch).unwrap();
        let expect = [2.0 + 0.1, 4.0 - 2.0 - 0.2, -1.0 + 0.1, -2.0 + 4.0 - 0.2];
        for (a, b) in logits.as_slice().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }

        m.normalize_embeddings = true;
        let logits = forward_logits(&m, &batch).unwrap();
        let s = 1.0 / 8f64.sqrt();
        assert!((logits.get(0, 0) - (2.0 * s + 0.1)).abs() < 1e-12);
        let zero = Matrix::from_rows(&[vec![0.0, 0.0, 0.0]]).unwrap();
        assert!(matches!(forward_logits(&m, &zero), Err(Error::ZeroVector)));
        let wrong = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert!(matches!(forward_logits(&m, &wrong), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn loss_examples() {
        let zeros = Matrix::zeros(3, 4);
        let l = classification_loss(&zeros, &[0, 1, 3]).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
        let two = Matrix::from_rows(&[vec![2.0, 0.0]]).unwrap();
        let l = classification_loss(&two, &[0]).unwrap();
        assert!((l - 0.1269280110429725).abs() < 1e-12);
        let one = Matrix::from_rows(&[vec![7.5], vec![-3.0]]).unwrap();
        assert_eq!(classification_loss(&one, &[0, 0]).unwrap(), 0.0);
        assert!(matches!(
            classification_loss(&two, &[2]),
            Err(Error::LabelOutOfRange { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn loss_is_shift_invariant_and_stable() {
        let logits = Matrix::from_rows(&[vec![0.3, -1.2, 2.0], vec![1000.0, 999.0, -5.0]]).unwrap();
        let base = classification_loss(&logits, &[2, 0]).unwrap();
        assert!(base.is_finite());
        let mut shifted = logits.clone();
        for v in shifted.row_mut(0) {
            *v += 123.0;
        }
        assert!((classification_loss(&shifted, &[2, 0]).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn bias_gradient_closed_form() {
        let mut m = model(3, 3, 4, false, 1);
        m.classifier_weights = Matrix::zeros(4, 3);
        let batch = Matrix::from_rows(&[vec![0.3, -0.2, 1.0]]).unwrap();
        let (loss, g) = loss_and_gradients(&m, &batch, &[2]).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        let expect = [0.25, 0.25, -0.75, 0.25];
        for (a, b) in g.classifier_bias.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn duplicated_rows_same_gradients() {
        for normalize in [false, true] {
            let mut m = model(4, 4, 3, normalize, 2);
            randomize(&mut m, 3);
            let x = vec![0.5, -1.0, 0.25, 2.0];
            let single = Matrix::from_rows(std::slice::from_ref(&x)).unwrap();
            let double = Matrix::from_rows(&[x.clone(), x]).unwrap();
            let (l1, g1) = loss_and_gradients(&m, &single, &[1]).unwrap();
            let (l2, g2) = loss_and_gradients(&m, &double, &[1, 1]).unwrap();
            assert!((l1 - l2).abs() < 1e-12);
            for (a, b) in g1.values().zip(g2.values()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for normalize in [false, true] {
            let mut m = model(5, 3, 4, normalize, 4);
            randomize(&mut m, 5);
            let mut rng = SeededRng::new(6);
            let rows: Vec<Vec<f64>> = (0..3).map(|_| (0..5).map(|_| rng.normal(1.0)).collect()).collect();
            let batch = Matrix::from_rows(&rows).unwrap();
            let labels = [0, 3, 1];
            let (_, g) = loss_and_gradients(&m, &batch, &labels).unwrap();
            let loss = |m: &AdapterModel| classification_loss(&forward_logits(m, &batch).unwrap(), &labels).unwrap();
            let h = 1e-5;
            let mut numeric = Vec::new();
            for which in 0..3 {
                let len = match which {
                    0 => m.projection.as_slice().len(),
                    1 => m.classifier_weights.as_slice().len(),
                    _ => m.classifier_bias.len(),
                };
                for k in 0..len {
                    let mut plus = m.clone();
                    let mut minus = m.clone();
                    let (p, q) = match which {
                        0 => (&mut plus.projection.as_mut_slice()[k], &mut minus.projection.as_mut_slice()[k]),
                        1 => (
                            &mut plus.classifier_weights.as_mut_slice()[k],
                            &mut minus.classifier_weights.as_mut_slice()[k],
                        ),
                        _ => (&mut plus.classifier_bias[k], &mut minus.classifier_bias[k]),
                    };
                    *p += h;
                    *q -= h;
                    numeric.push((loss(&plus) - loss(&minus)) / (2.0 * h));
                }
            }
            for (a, n) in g.values().zip(&numeric) {
                let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
                assert!(rel < 1e-4, "normalize={normalize}: {a} vs {n}");
            }
        }
    }

    #[test]
    fn clipping() {
        let m = model(2, 2, 1, false, 1);
        let mut g = Gradients::zeros_like(&m);
        g.classifier_bias[0] = 3.0;
        let clipped = clip_gradients(g.clone(), 1.5);
        assert!((clipped.classifier_bias[0] - 1.5).abs() < 1e-15);
        g.classifier_bias[0] = 1.0;
        assert_eq!(clip_gradients(g.clone(), 1.5), g);
        let zero = Gradients::zeros_like(&m);
        assert_eq!(clip_gradients(zero.clone(), 1.5), zero);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut rng = SeededRng::new(8);
        for _ in 0..200 {
            let m = model(3, 2, 2, false, 1);
            let mut g = Gradients::zeros_like(&m);
            let s = rng.normal(10.0).abs();
            for v in g.values_mut() {
                *v = rng.normal(s);
            }
            let clip = 0.1 + rng.normal(1.0).abs();
            assert!(clip_gradients(g, clip).global_norm() <= clip + 1e-12);
        }
    }

    #[test]
    fn apply_identity_and_normalized() {
        let matrix = EmbeddingMatrix::new(3, vec![1.0, 2.0, 2.0, -0.5, 0.0, 3.0]).unwrap();
        let m = model(3, 3, 2, false, 1);
        assert_eq!(apply_adapter(&m, &matrix).unwrap(), matrix);
        let n = model(3, 3, 2, true, 1);
        let out = apply_adapter(&n, &matrix).unwrap();
        for i in 0..2 {
            assert!((l2_norm(&out.row_f64(i).unwrap()) - 1.0).abs() < 1e-6);
        }
        let wrong = model(4, 4, 2, false, 1);
        assert!(matches!(apply_adapter(&wrong, &matrix), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn apply_random_projection() {
        let matrix = EmbeddingMatrix::new(2, vec![1.0, 2.0, -3.0, 0.5]).unwrap();
        let mut m = model(2, 3, 2, false, 1);
        m.projection = Matrix::from_rows(&[vec![1.0, 0.0, 2.0], vec![-1.0, 4.0, 0.5]]).unwrap();
        let out = apply_adapter(&m, &matrix).unwrap();
        assert_eq!(out.dim(), 3);
        assert_eq!(out.row(0).unwrap(), &[-1.0, 8.0, 3.0]);
        assert_eq!(out.row(1).unwrap(), &[-3.5, 2.0, -5.75]);
    }

    #[test]
    fn validate_catches_bad_models() {
        let mut m = model(2, 2, 2, false, 1);
        m.family_ids[1] = "F0".into();
        assert!(m.validate().is_err());
        let mut m = model(2, 2, 2, false, 1);
        m.classifier_bias.push(0.0);
        assert!(m.validate().is_err());
        let mut m = model(2, 2, 2, false, 1);
        m.projection.set(0, 0, f64::NAN);
        assert!(m.validate().is_err());
    }
}
