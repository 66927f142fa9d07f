//! CSV manifest: `patient_id,image_path,view,disease,split`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::domain::{DiseaseLabel, ViewLabel};
use crate::error::{Error, Result};

pub const MANIFEST_HEADER: [&str; 5] = ["patient_id", "image_path", "view", "disease", "split"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl SplitTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        }
    }
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(SplitTag::Train),
            "val" | "validation" => Ok(SplitTag::Val),
            "test" => Ok(SplitTag::Test),
            other => Err(Error::invalid(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub patient_id: String,
    pub image_path: String,
    pub view: ViewLabel,
    pub disease: Option<DiseaseLabel>,
    pub split: Option<SplitTag>,
}

fn parse_row(record: &csv::StringRecord, row: usize) -> Result<ManifestRow> {
    let err = |msg: String| Error::Manifest { row, msg };
    if record.len() != MANIFEST_HEADER.len() {
        return Err(err(format!("expected {} fields, found {}", MANIFEST_HEADER.len(), record.len())));
    }
    let patient_id = record[0].trim().to_string();
    if patient_id.is_empty() {
        return Err(err("empty patient_id".into()));
    }
    let image_path = record[1].trim().to_string();
    if image_path.is_empty() {
        return Err(err("empty image_path".into()));
    }
    let view = record[2].parse::<ViewLabel>().map_err(|e| err(e.to_string()))?;
    let disease = match record[3].trim() {
        "" => None,
        s => Some(s.parse::<DiseaseLabel>().map_err(|e| err(e.to_string()))?),
    };
    let split = match record[4].trim() {
        "" => None,
        s => Some(s.parse::<SplitTag>().map_err(|e| err(e.to_string()))?),
    };
    Ok(ManifestRow { patient_id, image_path, view, disease, split })
}

/// Parses manifest text. Row numbers in errors count data rows from 1.
pub fn parse_manifest(text: &str) -> Result<Vec<ManifestRow>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    if got != MANIFEST_HEADER {
        return Err(Error::Manifest { row: 0, msg: format!("header must be {}", MANIFEST_HEADER.join(",")) });
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Manifest { row: i + 1, msg: e.to_string() })?;
        rows.push(parse_row(&record, i + 1)?);
    }
    Ok(rows)
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let text = std::fs::read_to_string(path)?;
    parse_manifest(&text)
}

pub fn manifest_to_string(rows: &[ManifestRow]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    w.write_record(MANIFEST_HEADER)?;
    for r in rows {
        w.write_record([
            r.patient_id.as_str(),
            r.image_path.as_str(),
            r.view.as_str(),
            r.disease.map(|d| d.as_str()).unwrap_or(""),
            r.split.map(|s| s.as_str()).unwrap_or(""),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::invalid(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = "patient_id,image_path,view,disease,split\n\
        P1,img/p1_a4c.png,A4C,HCM,train\n\
        P1,img/p1_plax.png,PLAX,HCM,train\n\
        P2,img/p2.png,OTHER,,\n";

    #[test]
    fn parses_well_formed_file() {
        let rows = parse_manifest(GOOD).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].view, ViewLabel::A4c);
        assert_eq!(rows[0].disease, Some(DiseaseLabel::Hcm));
        assert_eq!(rows[2].disease, None);
        assert_eq!(rows[2].split, None);
        assert_eq!(parse_manifest(&manifest_to_string(&rows).unwrap()).unwrap(), rows);
    }

    #[test]
    fn unknown_view_names_the_row() {
        let text = "patient_id,image_path,view,disease,split\nP1,a.png,A4C,,\nP2,b.png,X99,,\n";
        match parse_manifest(text) {
            Err(Error::Manifest { row, msg }) => {
                assert_eq!(row, 2);
                assert!(msg.contains("X99"));
            }
            other => panic!("expected manifest error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_header_and_empty_path() {
        assert!(parse_manifest("a,b,c\n").is_err());
        let text = "patient_id,image_path,view,disease,split\nP1,,A4C,,\n";
        assert!(matches!(parse_manifest(text), Err(Error::Manifest { row: 1, .. })));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(load_manifest(Path::new("/nonexistent/manifest.csv")), Err(Error::Io(_))));
    }
}
