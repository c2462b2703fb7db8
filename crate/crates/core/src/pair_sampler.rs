//! Balanced validation pairs drawn uniformly over families.
//!
//! Each iteration picks an anchor family uniformly (with replacement) from
//! the families that have at least two persons with detected images, then:
//!
//! 1. an anchor person and a different positive person from that family,
//! 2. a negative family uniformly from all other families with a detected
//!    image, and a person from it,
//! 3. one detected image from each of the three persons.
//!
//! The iteration yields `(anchor, positive)` as a kin pair and
//! `(anchor, negative)` as a non-kin pair. Draws happen in exactly that order
//! from a single [`SeededRng`], so `(index, k, seed)` fixes the output.
//! Duplicate pairs are allowed.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::embedding_store::{DatasetIndex, KinType};
use crate::rng::SeededRng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Kin,
    NonKin,
}

impl Label {
    pub fn is_kin(self) -> bool {
        self == Label::Kin
    }
}

impl From<bool> for Label {
    fn from(kin: bool) -> Self {
        if kin {
            Label::Kin
        } else {
            Label::NonKin
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pair {
    pub image_a: String,
    pub image_b: String,
    pub label: Label,
    pub kin_type: Option<KinType>,
}

/// Ordered pairs plus the seed that produced them (0 when loaded from disk).
///
/// Sampled sets store the `k` positive pairs first, then the `k` negative
/// pairs; positive `i` and negative `i` share `image_a`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairSet {
    pub pairs: Vec<Pair>,
    pub seed: u64,
}

impl PairSet {
    pub fn from_pairs(pairs: Vec<Pair>) -> Self {
        Self { pairs, seed: 0 }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn positives(&self) -> impl Iterator<Item = &Pair> {
        self.pairs.iter().filter(|p| p.label.is_kin())
    }

    pub fn negatives(&self) -> impl Iterator<Item = &Pair> {
        self.pairs.iter().filter(|p| !p.label.is_kin())
    }
}

struct Candidate<'a> {
    persons: Vec<(&'a str, Vec<&'a str>)>,
}

pub fn sample_validation_pairs(index: &DatasetIndex, k: usize, seed: u64) -> Result<PairSet> {
    let families: Vec<Candidate<'_>> = index
        .family_ids()
        .map(|f| Candidate {
            persons: index.detected_persons(f),
        })
        .filter(|c| !c.persons.is_empty())
        .collect();
    if families.len() < 2 {
        return Err(Error::NotEnoughFamilies(families.len()));
    }
    let anchors: Vec<usize> = (0..families.len())
        .filter(|&i| families[i].persons.len() >= 2)
        .collect();
    if anchors.is_empty() {
        return Err(Error::NoEligibleAnchor);
    }

    let mut rng = SeededRng::new(seed);
    let mut positives = Vec::with_capacity(k);
    let mut negatives = Vec::with_capacity(k);
    for _ in 0..k {
        let fam = *rng.choose(&anchors);
        let persons = &families[fam].persons;

        let anchor_person = rng.below(persons.len());
        let mut positive_person = rng.below(persons.len() - 1);
        if positive_person >= anchor_person {
            positive_person += 1;
        }

        let mut neg_fam = rng.below(families.len() - 1);
        if neg_fam >= fam {
            neg_fam += 1;
        }
        let neg_persons = &families[neg_fam].persons;
        let negative_person = rng.below(neg_persons.len());

        let anchor_face = *rng.choose(&persons[anchor_person].1);
        let positive_face = *rng.choose(&persons[positive_person].1);
        let negative_face = *rng.choose(&neg_persons[negative_person].1);

        positives.push(Pair {
            image_a: anchor_face.to_string(),
            image_b: positive_face.to_string(),
            label: Label::Kin,
            kin_type: None,
        });
        negatives.push(Pair {
            image_a: anchor_face.to_string(),
            image_b: negative_face.to_string(),
            label: Label::NonKin,
            kin_type: None,
        });
    }
    positives.append(&mut negatives);
    Ok(PairSet {
        pairs: positives,
        seed,
    })
}

const HEADER: [&str; 4] = ["image_a", "image_b", "label", "kin_type"];

pub fn write_pairs_to<W: Write>(set: &PairSet, out: W) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(HEADER)?;
    for p in &set.pairs {
        let label = if p.label.is_kin() { "1" } else { "0" };
        let kin = p.kin_type.map(KinType::as_str).unwrap_or("");
        w.write_record([p.image_a.as_str(), p.image_b.as_str(), label, kin])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_pairs(set: &PairSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_pairs_to(set, std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e.into()))
}

fn parse_error(line: usize, detail: impl Into<String>) -> Error {
    Error::Parse {
        line,
        detail: detail.into(),
    }
}

pub fn read_pairs<R: Read>(input: R) -> Result<PairSet> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(input);
    let mut records = r.records();
    match records.next() {
        None => return Err(parse_error(1, "missing header")),
        Some(header) => {
            let header = header.map_err(|e| parse_error(1, e.to_string()))?;
            if header.iter().ne(HEADER) {
                return Err(parse_error(1, format!("expected header {}", HEADER.join(","))));
            }
        }
    }
    let mut pairs = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_error(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 4 {
            return Err(parse_error(line, format!("expected 4 fields, found {}", rec.len())));
        }
        let label = match &rec[2] {
            "1" => Label::Kin,
            "0" => Label::NonKin,
            other => return Err(parse_error(line, format!("label must be 1 or 0, found {other:?}"))),
        };
        let kin_type = match &rec[3] {
            "" => None,
            token => Some(token.parse()?),
        };
        pairs.push(Pair {
            image_a: rec[0].to_string(),
            image_b: rec[1].to_string(),
            label,
            kin_type,
        });
    }
    Ok(PairSet::from_pairs(pairs))
}

pub fn load_pairs(path: impl AsRef<Path>) -> Result<PairSet> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_pairs(std::io::BufReader::new(file))
}
