use std::fs;
use std::path::{Path, PathBuf};

use kinship::calibration::{
    compute_auc, compute_roc, evaluate_verification, per_type_thresholds, threshold_at_fpr, threshold_at_tpr,
    write_roc, ThresholdPolicy, TypedScore, UNTYPED_KEY,
};
use kinship::embedding_store::{build_index, load_embeddings, load_manifest, write_embeddings, write_manifest, DatasetIndex, EmbeddingMatrix};
use kinship::finetune::{apply_adapter, load_model, train, write_model, write_train_log, TrainConfig, Validation};
use kinship::pair_sampler::{load_pairs, sample_validation_pairs, write_pairs, PairSet};
use kinship::retrieval::{load_probes, run_retrieval, write_probes, write_ranking, Gallery, ProbeSubject};
use kinship::similarity::score_pairs;
use kinship::synthetic::{
    generate, probe_gallery_split, split_families, write_ground_truth, CountRange, SyntheticConfig,
};

use crate::table::{fmt4, Table};
use crate::{ApplyArgs, CalibrateArgs, CliError, FinetuneArgs, GenSyntheticArgs, RetrieveArgs, SamplePairsArgs, VerifyArgs};

type CmdResult = Result<(), CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(kinship::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn create_dir(path: &Path) -> CmdResult {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn write_json(path: &Path, value: &serde_json::Value) -> CmdResult {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

fn load_dataset(manifest: &Path, embeddings: &Path) -> Result<(DatasetIndex, EmbeddingMatrix), CliError> {
    let matrix = load_embeddings(embeddings)?;
    let records = load_manifest(manifest)?;
    Ok((build_index(&records, &matrix)?, matrix))
}

pub fn gen_synthetic(a: GenSyntheticArgs) -> CmdResult {
    let config = SyntheticConfig {
        families: a.families,
        persons_per_family: CountRange::new(a.persons_min, a.persons_max),
        images_per_person: CountRange::new(a.images_min, a.images_max),
        dim: a.dim,
        signal_dims: a.signal_dims,
        family_spread: a.family_spread,
        person_spread: a.person_spread,
        image_noise: a.image_noise,
        distractor_noise: a.distractor_noise,
        seed: a.seed,
    };
    config.validate()?;
    if a.holdout_families >= config.families {
        return Err(kinship::Error::InvalidConfig(format!(
            "holdout_families must be below families ({}), got {}",
            config.families, a.holdout_families
        ))
        .into());
    }
    let ds = generate(&config)?;
    let dir = &a.out_dir;
    create_dir(dir)?;
    write_manifest(&ds.records, dir.join("manifest.jsonl"))?;
    write_embeddings(&ds.matrix, dir.join("embeddings.keb"))?;
    write_ground_truth(&config, &ds, dir.join("ground_truth.json"))?;
    if a.holdout_families > 0 {
        let (train_records, val_records) = split_families(&ds.records, a.holdout_families);
        write_manifest(&train_records, dir.join("train_manifest.jsonl"))?;
        write_manifest(&val_records, dir.join("val_manifest.jsonl"))?;
        let (probes, gallery) = probe_gallery_split(&val_records);
        write_probes(&probes, dir.join("probes.jsonl"))?;
        write_manifest(&gallery, dir.join("gallery.jsonl"))?;
    }
    println!(
        "wrote {} images of {} families (dim {}) to {}",
        ds.records.len(),
        config.families,
        config.dim,
        dir.display()
    );
    Ok(())
}

pub fn sample_pairs(a: SamplePairsArgs) -> CmdResult {
    let (index, _) = load_dataset(&a.manifest, &a.embeddings)?;
    let set = sample_validation_pairs(&index, a.k, a.seed)?;
    write_pairs(&set, &a.out)?;
    println!("wrote {} pairs to {}", set.len(), a.out.display());
    Ok(())
}

fn scored_pairs(pairs: &Path, manifest: &Path, embeddings: &Path) -> Result<(PairSet, Vec<f64>), CliError> {
    let (index, matrix) = load_dataset(manifest, embeddings)?;
    let set = load_pairs(pairs)?;
    let scores = score_pairs(&set, &index, &matrix)?;
    Ok((set, scores))
}

pub fn calibrate(a: CalibrateArgs) -> CmdResult {
    let (set, scores) = scored_pairs(&a.pairs, &a.manifest, &a.embeddings)?;
    let labeled: Vec<(f64, bool)> = set.pairs.iter().zip(&scores).map(|(p, &s)| (s, p.label.is_kin())).collect();
    let roc = compute_roc(&labeled)?;
    let negatives: Vec<f64> = labeled.iter().filter(|l| !l.1).map(|l| l.0).collect();
    let positives: Vec<f64> = labeled.iter().filter(|l| l.1).map(|l| l.0).collect();
    let policy = match (a.target_fpr, a.target_tpr) {
        (Some(fpr), _) if a.per_type => {
            let typed: Vec<TypedScore> = set
                .pairs
                .iter()
                .zip(&scores)
                .map(|(p, &score)| TypedScore {
                    score,
                    kin: p.label.is_kin(),
                    kin_type: p.kin_type,
                })
                .collect();
            per_type_thresholds(&typed, fpr, a.min_count)?
        }
        (Some(fpr), _) => ThresholdPolicy::global(threshold_at_fpr(&negatives, fpr)?),
        (None, Some(tpr)) => ThresholdPolicy::global(threshold_at_tpr(&positives, tpr)?),
        (None, None) => return Err(CliError::Usage("one of --target-fpr or --target-tpr is required".into())),
    };
    policy.save(&a.out)?;
    write_roc(&roc, &a.roc_out)?;

    let rate = |xs: &[f64], t: f64| {
        if xs.is_empty() {
            0.0
        } else {
            xs.iter().filter(|&&s| s >= t).count() as f64 / xs.len() as f64
        }
    };
    println!("AUC {}", fmt4(compute_auc(&labeled)?));
    let mut table = Table::new(["type", "threshold", "FPR", "TPR"]);
    let t = policy.default_threshold;
    table.row(vec![UNTYPED_KEY.into(), fmt4(t), fmt4(rate(&negatives, t)), fmt4(rate(&positives, t))]);
    for (k, &t) in &policy.per_type {
        let of_type = |kin: bool| -> Vec<f64> {
            set.pairs
                .iter()
                .zip(&scores)
                .filter(|(p, _)| p.kin_type == Some(*k) && p.label.is_kin() == kin)
                .map(|(_, &s)| s)
                .collect()
        };
        table.row(vec![k.as_str().into(), fmt4(t), fmt4(rate(&of_type(false), t)), fmt4(rate(&of_type(true), t))]);
    }
    print!("{}", table.render());
    Ok(())
}

pub fn verify(a: VerifyArgs) -> CmdResult {
    let (set, scores) = scored_pairs(&a.pairs, &a.manifest, &a.embeddings)?;
    let policy = ThresholdPolicy::load(&a.policy)?;
    let report = evaluate_verification(&set, &scores, &policy)?;

    let csv_err = |e: csv::Error| CliError::Data(kinship::Error::Io {
        path: a.out.clone(),
        source: std::io::Error::other(e.to_string()),
    });
    let file = fs::File::create(&a.out).map_err(|e| io_err(&a.out, e))?;
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(file);
    w.write_record(["image_a", "image_b", "label", "kin_type", "score", "threshold", "decision"])
        .map_err(csv_err)?;
    for (p, &s) in set.pairs.iter().zip(&scores) {
        let kin = policy.decide(s, p.kin_type);
        w.write_record([
            p.image_a.as_str(),
            p.image_b.as_str(),
            if p.label.is_kin() { "1" } else { "0" },
            p.kin_type.map_or("", |k| k.as_str()),
            &s.to_string(),
            &policy.threshold_for(p.kin_type).to_string(),
            if kin { "1" } else { "0" },
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| io_err(&a.out, e))?;

    let value = serde_json::to_value(&report).map_err(|e| CliError::Internal(e.to_string()))?;
    write_json(&a.report, &value)?;

    let mut table = Table::new(["type", "pairs", "accuracy"]);
    for (k, &acc) in &report.by_type {
        table.row(vec![k.clone(), report.counts[k].to_string(), fmt4(acc)]);
    }
    table.row(vec!["average".into(), set.len().to_string(), fmt4(report.average)]);
    table.row(vec!["macro average".into(), String::new(), fmt4(report.macro_average)]);
    print!("{}", table.render());
    Ok(())
}

fn resolve_config(a: &FinetuneArgs) -> Result<TrainConfig, CliError> {
    let mut c = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            serde_json::from_str(&text).map_err(|e| {
                CliError::Data(kinship::Error::Parse {
                    line: e.line(),
                    detail: e.to_string(),
                })
            })?
        }
        None => TrainConfig::default(),
    };
    if let Some(v) = a.seed {
        c.seed = v;
    }
    if let Some(v) = a.epochs {
        c.epochs = v as usize;
    }
    if let Some(v) = a.base_lr {
        c.base_lr = v;
    }
    if let Some(v) = a.momentum {
        c.momentum = v;
    }
    if let Some(v) = a.batch_size {
        c.batch_size = v as usize;
    }
    if let Some(v) = a.warmup_batches {
        c.warmup_batches = v;
    }
    if let Some(v) = a.cooldown_batches {
        c.cooldown_batches = v;
    }
    if let Some(v) = &a.milestone_epochs {
        c.milestone_epochs = v.clone();
    }
    if let Some(v) = a.milestone_factor {
        c.milestone_factor = v;
    }
    if let Some(v) = a.clip_norm {
        c.clip_norm = v;
    }
    if a.output_dim.is_some() {
        c.output_dim = a.output_dim;
    }
    if a.no_normalize {
        c.normalize_embeddings = false;
    }
    if a.keep_last {
        c.select_best = false;
    }
    c.validate()?;
    Ok(c)
}

pub fn finetune(a: FinetuneArgs) -> CmdResult {
    let config = resolve_config(&a)?;
    if a.print_config {
        let value = serde_json::to_value(&config).map_err(|e| CliError::Internal(e.to_string()))?;
        println!("{}", serde_json::to_string_pretty(&value).map_err(|e| CliError::Internal(e.to_string()))?);
        return Ok(());
    }
    let missing = |flag: &str| CliError::Usage(format!("{flag} is required"));
    let manifest = a.manifest.as_deref().ok_or_else(|| missing("--manifest"))?;
    let embeddings = a.embeddings.as_deref().ok_or_else(|| missing("--embeddings"))?;
    let out = a.out.as_deref().ok_or_else(|| missing("--out"))?;

    let (index, matrix) = load_dataset(manifest, embeddings)?;
    let val = match &a.val_pairs {
        Some(path) => {
            let pairs = load_pairs(path)?;
            let records = load_manifest(a.val_manifest.as_deref().unwrap_or(manifest))?;
            Some((pairs, build_index(&records, &matrix)?))
        }
        None => None,
    };
    let validation = val.as_ref().map(|(pairs, index)| Validation {
        pairs,
        index,
        matrix: &matrix,
    });
    let (model, log) = train(&index, &matrix, &config, validation)?;
    write_model(&model, out)?;
    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut p = out.as_os_str().to_owned();
        p.push(".log.csv");
        PathBuf::from(p)
    });
    write_train_log(&log, &log_path)?;

    let mut table = Table::new(["epoch", "loss", "val_auc"]);
    if let Some(auc) = log.initial_val_auc {
        table.row(vec!["0".into(), String::new(), fmt4(auc)]);
    }
    for (e, loss) in log.epoch_loss.iter().enumerate() {
        let auc = log.val_auc.get(e).map_or(String::new(), |&v| fmt4(v));
        table.row(vec![(e + 1).to_string(), fmt4(*loss), auc]);
    }
    print!("{}", table.render());
    if let Some(best) = log.best_epoch {
        println!("selected epoch {best}");
    }
    println!("wrote {} and {}", out.display(), log_path.display());
    Ok(())
}

pub fn apply(a: ApplyArgs) -> CmdResult {
    let model = load_model(&a.model)?;
    let matrix = load_embeddings(&a.embeddings)?;
    let out = apply_adapter(&model, &matrix)?;
    write_embeddings(&out, &a.out)?;
    println!("wrote {} rows of dim {} to {}", out.rows(), out.dim(), a.out.display());
    Ok(())
}

fn file_stem(person_id: &str) -> String {
    person_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

pub fn retrieve(a: RetrieveArgs) -> CmdResult {
    let matrix = load_embeddings(&a.embeddings)?;
    let gallery_records = load_manifest(&a.gallery)?;
    build_index(&gallery_records, &matrix)?;
    let gallery = Gallery::from_records(&gallery_records)?;
    let probe_index = match &a.manifest {
        Some(path) => build_index(&load_manifest(path)?, &matrix)?,
        None => build_index(&gallery_records, &matrix)?,
    };
    let probes = load_probes(&a.probes)?
        .iter()
        .map(|p| ProbeSubject::resolve(p, &probe_index))
        .collect::<kinship::Result<Vec<_>>>()?;
    let report = run_retrieval(&probes, &gallery, &matrix, a.policy, a.k)?;

    let rankings = a.out_dir.join("rankings");
    create_dir(&rankings)?;
    for (i, run) in report.runs.iter().enumerate() {
        write_ranking(run, &gallery, rankings.join(format!("{:04}_{}.csv", i + 1, file_stem(&run.person_id))))?;
    }
    write_json(&a.out_dir.join("report.json"), &report.to_json())?;

    let mut table = Table::new(["probe", "family", "AP", "hit@K"]);
    for run in &report.runs {
        table.row(vec![
            run.person_id.clone(),
            run.family_id.clone(),
            fmt4(run.average_precision),
            u8::from(run.hit_within(a.k)).to_string(),
        ]);
    }
    print!("{}", table.render());
    println!(
        "policy {}  mAP {}  rank@{} {}",
        report.policy,
        fmt4(report.mean_average_precision),
        a.k,
        fmt4(report.rank_at_k)
    );
    Ok(())
}
