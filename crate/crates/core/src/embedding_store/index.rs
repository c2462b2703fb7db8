use std::collections::BTreeMap;

use super::manifest::check_records;
use super::{EmbeddingMatrix, ImageRecord};
use crate::{Error, Result};

/// Family → person → images view over a manifest. All maps are `BTreeMap`s
/// and image lists are sorted, so iteration order depends only on ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetIndex {
    families: BTreeMap<String, BTreeMap<String, Vec<String>>>,
    image_lookup: BTreeMap<String, ImageRecord>,
}

pub fn build_index(records: &[ImageRecord], matrix: &EmbeddingMatrix) -> Result<DatasetIndex> {
    check_records(records)?;
    let rows = matrix.rows();
    if let Some(r) = records.iter().find(|r| r.row >= rows) {
        return Err(Error::RowOutOfRange { row: r.row, rows });
    }
    let mut families: BTreeMap<String, BTreeMap<String, Vec<String>>> = BTreeMap::new();
    let mut image_lookup = BTreeMap::new();
    for r in records {
        families
            .entry(r.family_id.clone())
            .or_default()
            .entry(r.person_id.clone())
            .or_default()
            .push(r.image_id.clone());
        image_lookup.insert(r.image_id.clone(), r.clone());
    }
    for persons in families.values_mut() {
        for images in persons.values_mut() {
            images.sort();
        }
    }
    Ok(DatasetIndex {
        families,
        image_lookup,
    })
}

impl DatasetIndex {
    pub fn family_count(&self) -> usize {
        self.families.len()
    }

    pub fn image_count(&self) -> usize {
        self.image_lookup.len()
    }

    pub fn families(&self) -> &BTreeMap<String, BTreeMap<String, Vec<String>>> {
        &self.families
    }

    pub fn family_ids(&self) -> impl Iterator<Item = &str> {
        self.families.keys().map(String::as_str)
    }

    pub fn record(&self, image_id: &str) -> Result<&ImageRecord> {
        self.image_lookup
            .get(image_id)
            .ok_or_else(|| Error::UnknownImageId(image_id.to_string()))
    }

    pub fn row_of(&self, image_id: &str) -> Result<usize> {
        Ok(self.record(image_id)?.row)
    }

    /// Records in image-id order.
    pub fn records(&self) -> impl Iterator<Item = &ImageRecord> {
        self.image_lookup.values()
    }

    /// Persons of `family_id` that have at least one detected image, each
    /// with their detected image ids in sorted order.
    pub fn detected_persons(&self, family_id: &str) -> Vec<(&str, Vec<&str>)> {
        let Some(persons) = self.families.get(family_id) else {
            return Vec::new();
        };
        persons
            .iter()
            .filter_map(|(person, images)| {
                let detected: Vec<&str> = images
                    .iter()
                    .filter(|id| self.image_lookup[id.as_str()].detected)
                    .map(String::as_str)
                    .collect();
                (!detected.is_empty()).then_some((person.as_str(), detected))
            })
            .collect()
    }

    /// Sub-index containing only the families accepted by `keep`.
    pub fn restrict_families(&self, mut keep: impl FnMut(&str) -> bool) -> DatasetIndex {
        let families: BTreeMap<_, _> = self
            .families
            .iter()
            .filter(|(f, _)| keep(f))
            .map(|(f, p)| (f.clone(), p.clone()))
            .collect();
        let image_lookup = self
            .image_lookup
            .iter()
            .filter(|(_, r)| families.contains_key(&r.family_id))
            .map(|(k, r)| (k.clone(), r.clone()))
            .collect();
        DatasetIndex {
            families,
            image_lookup,
        }
    }
}
