use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One image in a manifest. `detected == false` marks an image whose face
/// was not found by the detector and was resized instead of aligned.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageRecord {
    pub image_id: String,
    pub person_id: String,
    pub family_id: String,
    pub row: usize,
    pub detected: bool,
}

/// Rejects duplicate image ids and persons assigned to two families.
pub(crate) fn check_records(records: &[ImageRecord]) -> Result<()> {
    let mut ids = HashMap::with_capacity(records.len());
    let mut person_family: HashMap<&str, &str> = HashMap::new();
    for r in records {
        if ids.insert(r.image_id.as_str(), ()).is_some() {
            return Err(Error::DuplicateId(r.image_id.clone()));
        }
        match person_family.get(r.person_id.as_str()) {
            Some(&fam) if fam != r.family_id => {
                return Err(Error::PersonFamilyConflict {
                    person: r.person_id.clone(),
                    first: fam.to_string(),
                    second: r.family_id.clone(),
                })
            }
            Some(_) => {}
            None => {
                person_family.insert(&r.person_id, &r.family_id);
            }
        }
    }
    Ok(())
}

/// Parse JSON Lines manifest text. Line numbers in errors are 1-based.
pub fn parse_manifest(text: &str) -> Result<Vec<ImageRecord>> {
    let records = text
        .lines()
        .enumerate()
        .map(|(i, line)| {
            serde_json::from_str::<ImageRecord>(line).map_err(|e| Error::Parse {
                line: i + 1,
                detail: e.to_string(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    check_records(&records)?;
    Ok(records)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ImageRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text)
}

pub fn write_manifest(records: &[ImageRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).expect("record serializes");
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, person: &str, family: &str, row: usize) -> ImageRecord {
        ImageRecord {
            image_id: id.into(),
            person_id: person.into(),
            family_id: family.into(),
            row,
            detected: true,
        }
    }

    #[test]
    fn empty_text_is_empty_list() {
        assert!(parse_manifest("").unwrap().is_empty());
    }

    #[test]
    fn duplicate_id_rejected() {
        let text = concat!(
            r#"{"image_id":"i1","person_id":"p1","family_id":"F1","row":0,"detected":true}"#,
            "\n",
            r#"{"image_id":"i1","person_id":"p2","family_id":"F1","row":1,"detected":true}"#,
            "\n"
        );
        assert!(matches!(parse_manifest(text), Err(Error::DuplicateId(id)) if id == "i1"));
    }

    #[test]
    fn person_in_two_families_rejected() {
        let records = vec![rec("a", "p", "F1", 0), rec("b", "p", "F2", 1)];
        assert!(matches!(
            check_records(&records),
            Err(Error::PersonFamilyConflict { .. })
        ));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = concat!(
            r#"{"image_id":"i1","person_id":"p1","family_id":"F1","row":0,"detected":true}"#,
            "\n",
            r#"{"image_id":"i2","person_id":"p1","family_id":"F1","row":1}"#,
            "\n"
        );
        assert!(matches!(parse_manifest(text), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_manifest("\n"), Err(Error::Parse { line: 1, .. })));
        let extra = r#"{"image_id":"i","person_id":"p","family_id":"F","row":0,"detected":true,"x":1}"#;
        assert!(matches!(parse_manifest(extra), Err(Error::Parse { line: 1, .. })));
        let negative = r#"{"image_id":"i","person_id":"p","family_id":"F","row":-1,"detected":true}"#;
        assert!(parse_manifest(negative).is_err());
    }

    #[test]
    fn write_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let records = vec![
            rec("i1", "p1", "F1", 0),
            rec("i2", "p1", "F1", 1),
            ImageRecord {
                detected: false,
                ..rec("i\"3,", "p2", "F2", 2)
            },
        ];
        write_manifest(&records, &path).unwrap();
        assert_eq!(load_manifest(&path).unwrap(), records);

        write_manifest(&[], &path).unwrap();
        assert_eq!(fs::read(&path).unwrap().len(), 0);
    }
}
