use std::collections::BTreeMap;

use kinship::embedding_store::{build_index, EmbeddingMatrix, ImageRecord};
use kinship::pair_sampler::sample_validation_pairs;
use kinship::synthetic::{generate, CountRange, SyntheticConfig};

fn equal_families(families: usize) -> (Vec<ImageRecord>, EmbeddingMatrix) {
    let mut records = Vec::new();
    for f in 0..families {
        for p in 0..3 {
            for i in 0..2 {
                records.push(ImageRecord {
                    image_id: format!("F{f:02}_P{p}_I{i}"),
                    person_id: format!("F{f:02}_P{p}"),
                    family_id: format!("F{f:02}"),
                    row: records.len(),
                    detected: true,
                });
            }
        }
    }
    let matrix = EmbeddingMatrix::new(2, vec![1.0; records.len() * 2]).unwrap();
    (records, matrix)
}

#[test]
fn anchor_families_are_uniform() {
    let (records, matrix) = equal_families(10);
    let index = build_index(&records, &matrix).unwrap();
    let k = 100_000;
    let set = sample_validation_pairs(&index, k, 2024).unwrap();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for p in set.positives() {
        *counts.entry(&index.record(&p.image_a).unwrap().family_id).or_default() += 1;
    }
    assert_eq!(counts.len(), 10);
    let expected = k as f64 / 10.0;
    let sd = (k as f64 * 0.1 * 0.9).sqrt();
    for (family, &c) in &counts {
        assert!((c as f64 - expected).abs() <= 3.0 * sd, "{family}: {c} vs {expected} ± {}", 3.0 * sd);
    }
}

#[test]
fn hundred_family_index_exhaustive() {
    let config = SyntheticConfig {
        families: 100,
        persons_per_family: CountRange::new(1, 6),
        seed: 100,
        ..SyntheticConfig::reference()
    };
    let ds = generate(&config).unwrap();
    let index = build_index(&ds.records, &ds.matrix).unwrap();
    let set = sample_validation_pairs(&index, 5000, 1).unwrap();
    assert_eq!(set.positives().count(), 5000);
    assert_eq!(set.negatives().count(), 5000);
    for p in set.positives() {
        let (a, b) = (index.record(&p.image_a).unwrap(), index.record(&p.image_b).unwrap());
        assert_eq!(a.family_id, b.family_id);
        assert_ne!(a.person_id, b.person_id);
    }
    for p in set.negatives() {
        let (a, b) = (index.record(&p.image_a).unwrap(), index.record(&p.image_b).unwrap());
        assert_ne!(a.family_id, b.family_id);
    }
}

#[test]
fn seeds_differ() {
    let (records, matrix) = equal_families(5);
    let index = build_index(&records, &matrix).unwrap();
    let a = sample_validation_pairs(&index, 10, 1).unwrap();
    let b = sample_validation_pairs(&index, 10, 2).unwrap();
    assert_ne!(a.pairs, b.pairs);
}
