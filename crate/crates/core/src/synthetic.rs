//! Family-structured Gaussian embeddings with ground truth.
//!
//! Draws are hierarchical. Each family gets a center in the first
//! `signal_dims` coordinates (std `family_spread`). Each person is that center
//! plus an offset (std `person_spread`), and each image is its person plus
//! noise (std `image_noise`). The remaining `dim - signal_dims` coordinates
//! are pure distractor noise (std `distractor_noise`) independent of identity.
//!
//! Ids are zero-padded (`F00003`, `F00003_P002`, `F00003_P002_I001`) so
//! lexicographic order equals generation order, and rows follow that order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding_store::{EmbeddingMatrix, ImageRecord};
use crate::retrieval::ProbeRecord;
use crate::rng::SeededRng;
use crate::{Error, Result};

/// Inclusive count range, serialized as `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct CountRange {
    pub min: usize,
    pub max: usize,
}

impl CountRange {
    pub const fn new(min: usize, max: usize) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, v: usize) -> bool {
        (self.min..=self.max).contains(&v)
    }
}

impl From<[usize; 2]> for CountRange {
    fn from([min, max]: [usize; 2]) -> Self {
        Self { min, max }
    }
}

impl From<CountRange> for [usize; 2] {
    fn from(r: CountRange) -> Self {
        [r.min, r.max]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub families: usize,
    pub persons_per_family: CountRange,
    pub images_per_person: CountRange,
    pub dim: usize,
    pub signal_dims: usize,
    pub family_spread: f64,
    pub person_spread: f64,
    pub image_noise: f64,
    pub distractor_noise: f64,
    pub seed: u64,
}

impl SyntheticConfig {
    /// 50 families of 2-6 persons with 1-4 images, 64 dims of which 8 carry
    /// signal, seed 42.
    pub fn reference() -> Self {
        Self {
            families: 50,
            persons_per_family: CountRange::new(2, 6),
            images_per_person: CountRange::new(1, 4),
            dim: 64,
            signal_dims: 8,
            family_spread: 1.0,
            person_spread: 0.3,
            image_noise: 0.2,
            distractor_noise: 1.5,
            seed: 42,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.families < 2 {
            return bad(format!("need at least 2 families, got {}", self.families));
        }
        for (name, r) in [
            ("persons_per_family", self.persons_per_family),
            ("images_per_person", self.images_per_person),
        ] {
            if r.min == 0 || r.min > r.max {
                return bad(format!("{name} must be a nonempty range of positive counts, got {}..={}", r.min, r.max));
            }
        }
        if self.signal_dims == 0 || self.signal_dims > self.dim {
            return bad(format!("signal_dims must be in 1..={}, got {}", self.dim, self.signal_dims));
        }
        for (name, v) in [
            ("family_spread", self.family_spread),
            ("person_spread", self.person_spread),
            ("image_noise", self.image_noise),
            ("distractor_noise", self.distractor_noise),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be a nonnegative number, got {v}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub records: Vec<ImageRecord>,
    pub matrix: EmbeddingMatrix,
}

pub fn generate(config: &SyntheticConfig) -> Result<SyntheticDataset> {
    config.validate()?;
    let mut rng = SeededRng::new(config.seed);
    let (dim, signal) = (config.dim, config.signal_dims);
    let mut records = Vec::new();
    let mut data: Vec<f32> = Vec::new();

    for f in 0..config.families {
        let family_id = format!("F{f:05}");
        let center: Vec<f64> = (0..signal).map(|_| rng.normal(config.family_spread)).collect();
        let persons = rng.in_range(config.persons_per_family.min, config.persons_per_family.max);
        for p in 0..persons {
            let person_id = format!("{family_id}_P{p:03}");
            let person: Vec<f64> = center.iter().map(|c| c + rng.normal(config.person_spread)).collect();
            let images = rng.in_range(config.images_per_person.min, config.images_per_person.max);
            for i in 0..images {
                let row = records.len();
                for c in &person {
                    data.push((c + rng.normal(config.image_noise)) as f32);
                }
                for _ in signal..dim {
                    data.push(rng.normal(config.distractor_noise) as f32);
                }
                records.push(ImageRecord {
                    image_id: format!("{person_id}_I{i:03}"),
                    person_id: person_id.clone(),
                    family_id: family_id.clone(),
                    row,
                    detected: true,
                });
            }
        }
    }
    Ok(SyntheticDataset {
        records,
        matrix: EmbeddingMatrix::new(dim, data)?,
    })
}

#[derive(Debug, Serialize)]
struct GroundTruth<'a> {
    config: &'a SyntheticConfig,
    families: usize,
    persons: usize,
    images: usize,
    persons_by_family: BTreeMap<&'a str, usize>,
}

/// JSON echo of the config plus realized family/person/image counts.
pub fn ground_truth_json(config: &SyntheticConfig, dataset: &SyntheticDataset) -> serde_json::Value {
    let mut persons_by_family: BTreeMap<&str, BTreeMap<&str, ()>> = BTreeMap::new();
    for r in &dataset.records {
        persons_by_family
            .entry(&r.family_id)
            .or_default()
            .insert(&r.person_id, ());
    }
    let gt = GroundTruth {
        config,
        families: persons_by_family.len(),
        persons: persons_by_family.values().map(BTreeMap::len).sum(),
        images: dataset.records.len(),
        persons_by_family: persons_by_family.iter().map(|(f, p)| (*f, p.len())).collect(),
    };
    serde_json::to_value(gt).expect("ground truth serializes")
}

pub fn write_ground_truth(config: &SyntheticConfig, dataset: &SyntheticDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(&ground_truth_json(config, dataset)).expect("json");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Splits records by family: the lexicographically last `holdout` families
/// go to the second list.
pub fn split_families(records: &[ImageRecord], holdout: usize) -> (Vec<ImageRecord>, Vec<ImageRecord>) {
    let mut families: Vec<&str> = records.iter().map(|r| r.family_id.as_str()).collect();
    families.sort_unstable();
    families.dedup();
    let cut = families.len().saturating_sub(holdout);
    let held: std::collections::HashSet<&str> = families[cut..].iter().copied().collect();
    records
        .iter()
        .cloned()
        .partition(|r| !held.contains(r.family_id.as_str()))
}

/// Retrieval layout over `records`: in each family with at least two
/// persons, the first person (by id) becomes a probe and everyone else goes
/// to the gallery. Single-person families only contribute gallery images.
pub fn probe_gallery_split(records: &[ImageRecord]) -> (Vec<ProbeRecord>, Vec<ImageRecord>) {
    let mut families: BTreeMap<&str, BTreeMap<&str, Vec<&ImageRecord>>> = BTreeMap::new();
    for r in records {
        families
            .entry(&r.family_id)
            .or_default()
            .entry(&r.person_id)
            .or_default()
            .push(r);
    }
    let mut probes = Vec::new();
    let mut gallery = Vec::new();
    for (family, persons) in families {
        let mut iter = persons.into_iter();
        if let Some((person, images)) = iter.next() {
            if iter.len() > 0 {
                let mut ids: Vec<String> = images.iter().map(|r| r.image_id.clone()).collect();
                ids.sort();
                probes.push(ProbeRecord {
                    person_id: person.to_string(),
                    family_id: family.to_string(),
                    image_ids: ids,
                });
            } else {
                gallery.extend(images.into_iter().cloned());
            }
        }
        for (_, images) in iter {
            gallery.extend(images.into_iter().cloned());
        }
    }
    gallery.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    (probes, gallery)
}
