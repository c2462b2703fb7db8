use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::{clip_gradients, loss_and_gradients, lr_at, AdapterModel, Gradients, Matrix, TrainConfig};
use crate::calibration::compute_auc;
use crate::embedding_store::{DatasetIndex, EmbeddingMatrix};
use crate::pair_sampler::PairSet;
use crate::rng::SeededRng;
use crate::similarity::cosine_similarity;
use crate::{Error, Result};

/// Labeled pairs scored after every epoch for model selection.
#[derive(Debug, Clone, Copy)]
pub struct Validation<'a> {
    pub pairs: &'a PairSet,
    pub index: &'a DatasetIndex,
    pub matrix: &'a EmbeddingMatrix,
}

impl Validation<'_> {
    /// AUC of cosine scores between adapted embeddings.
    pub fn auc(&self, model: &AdapterModel) -> Result<f64> {
        let mut cache: HashMap<usize, Vec<f64>> = HashMap::new();
        let mut embed = |image_id: &str| -> Result<Vec<f64>> {
            let row = self.index.row_of(image_id)?;
            if let Some(e) = cache.get(&row) {
                return Ok(e.clone());
            }
            let e = model.embed(&self.matrix.row_f64(row)?)?;
            cache.insert(row, e.clone());
            Ok(e)
        };
        let scores = self
            .pairs
            .pairs
            .iter()
            .map(|p| {
                let a = embed(&p.image_a)?;
                let b = embed(&p.image_b)?;
                Ok((cosine_similarity(&a, &b)?, p.label.is_kin()))
            })
            .collect::<Result<Vec<_>>>()?;
        compute_auc(&scores)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub batches_per_epoch: usize,
    /// Sample-weighted mean loss of each epoch.
    pub epoch_loss: Vec<f64>,
    /// Learning rate of every batch.
    pub lr_trace: Vec<f64>,
    /// Global gradient norm of every batch, before clipping.
    pub grad_norm_trace: Vec<f64>,
    /// Validation AUC after each epoch; empty without validation pairs.
    pub val_auc: Vec<f64>,
    /// Validation AUC of the freshly initialized model.
    pub initial_val_auc: Option<f64>,
    /// 1-based epoch whose parameters were returned, when selecting by AUC.
    pub best_epoch: Option<usize>,
}

/// Mini-batch SGD with momentum on the family-classification loss.
///
/// Every detected image of every family with at least one detected image is a
/// training sample; its family is the class. Classes follow lexicographic
/// family order and samples start in image-id order, then are reshuffled each
/// epoch. Per batch: gradients, clipping, `v ← μ·v − lr·g`, `θ ← θ + v`.
pub fn train(
    index: &DatasetIndex,
    matrix: &EmbeddingMatrix,
    config: &TrainConfig,
    validation: Option<Validation<'_>>,
) -> Result<(AdapterModel, TrainLog)> {
    config.validate()?;
    let class_of: HashMap<&str, usize> = index
        .family_ids()
        .filter(|f| !index.detected_persons(f).is_empty())
        .enumerate()
        .map(|(i, f)| (f, i))
        .collect();
    if class_of.len() < 2 {
        return Err(Error::NotEnoughFamilies(class_of.len()));
    }
    let mut family_ids = vec![String::new(); class_of.len()];
    for (&f, &i) in &class_of {
        family_ids[i] = f.to_string();
    }

    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for r in index.records().filter(|r| r.detected) {
        inputs.push(matrix.row_f64(r.row)?);
        labels.push(class_of[r.family_id.as_str()]);
    }
    let total = config.validate_for(inputs.len())?;
    let d_in = matrix.dim();
    let d_out = config.output_dim.unwrap_or(d_in);

    let mut rng = SeededRng::new(config.seed);
    let mut model = AdapterModel::init(d_in, d_out, family_ids, config.normalize_embeddings, &mut rng)?;
    let mut velocity = Gradients::zeros_like(&model);

    let mut log = TrainLog {
        batches_per_epoch: config.batches_per_epoch(inputs.len()),
        epoch_loss: Vec::with_capacity(config.epochs),
        lr_trace: Vec::with_capacity(total),
        grad_norm_trace: Vec::with_capacity(total),
        val_auc: Vec::new(),
        initial_val_auc: validation.map(|v| v.auc(&model)).transpose()?,
        best_epoch: None,
    };
    let mut best: Option<(f64, AdapterModel)> = None;

    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut step = 0;
    for epoch in 1..=config.epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let rows: Vec<Vec<f64>> = chunk.iter().map(|&i| inputs[i].clone()).collect();
            let batch = Matrix::from_rows(&rows)?;
            let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();

            let (loss, grads) = loss_and_gradients(&model, &batch, &batch_labels)?;
            loss_sum += loss * chunk.len() as f64;
            log.grad_norm_trace.push(grads.global_norm());
            let grads = clip_gradients(grads, config.clip_norm);

            let lr = lr_at(config, step, total, epoch)?;
            log.lr_trace.push(lr);
            for (v, g) in velocity.values_mut().zip(grads.values()) {
                *v = config.momentum * *v - lr * g;
            }
            for (p, v) in model.params_mut().zip(velocity.values()) {
                *p += v;
            }
            step += 1;
        }
        log.epoch_loss.push(loss_sum / inputs.len() as f64);

        if let Some(v) = validation {
            let auc = v.auc(&model)?;
            log.val_auc.push(auc);
            if best.as_ref().is_none_or(|(b, _)| auc > *b) {
                best = Some((auc, model.clone()));
                log.best_epoch = Some(epoch);
            }
        }
    }

    model.validate()?;
    match best {
        Some((_, best_model)) if config.select_best => Ok((best_model, log)),
        _ => {
            if !config.select_best {
                log.best_epoch = None;
            }
            Ok((model, log))
        }
    }
}

/// CSV `epoch,mean_loss,val_auc,lr_first_batch`; `val_auc` is empty when
/// no validation pairs were supplied.
pub fn write_train_log_to<W: Write>(log: &TrainLog, mut out: W) -> std::io::Result<()> {
    writeln!(out, "epoch,mean_loss,val_auc,lr_first_batch")?;
    for (i, loss) in log.epoch_loss.iter().enumerate() {
        let auc = log.val_auc.get(i).map(f64::to_string).unwrap_or_default();
        let lr = log.lr_trace[i * log.batches_per_epoch];
        writeln!(out, "{},{loss},{auc},{lr}", i + 1)?;
    }
    out.flush()
}

pub fn write_train_log(log: &TrainLog, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_train_log_to(log, std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
}
