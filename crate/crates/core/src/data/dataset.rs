//! JSON-lines dataset files: one header object, then one check-in per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CheckinRecord, Vocab};
use crate::error::{Error, Result};

pub const DATASET_FORMAT: &str = "hyperman-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VocabSizes {
    pub users: usize,
    pub pois: usize,
    pub categories: usize,
    pub slots: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    pub sizes: VocabSizes,
    pub vocab: Vocab,
    /// Resolved configuration that produced the file.
    #[serde(default)]
    pub config: serde_json::Value,
}

impl DatasetHeader {
    pub fn new(vocab: Vocab, config: serde_json::Value) -> Self {
        DatasetHeader {
            format: DATASET_FORMAT.into(),
            version: DATASET_VERSION,
            sizes: VocabSizes {
                users: vocab.user_count(),
                pois: vocab.poi_count(),
                categories: vocab.category_count(),
                slots: vocab.slot_count(),
            },
            vocab,
            config,
        }
    }
}

pub fn write_dataset(path: &Path, header: &DatasetHeader, records: &[CheckinRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    serde_json::to_writer(&mut out, header)?;
    out.write_all(b"\n").map_err(io)?;
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_dataset(path: &Path) -> Result<(DatasetHeader, Vec<CheckinRecord>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let header_line = match lines.next() {
        Some((_, line)) => line.map_err(|e| Error::io(path, e))?,
        None => return Err(Error::EmptyInput),
    };
    let header: DatasetHeader = serde_json::from_str(&header_line).map_err(|e| Error::Parse {
        line: 1,
        message: format!("bad dataset header: {e}"),
    })?;
    if header.format != DATASET_FORMAT || header.version != DATASET_VERSION {
        return Err(Error::Parse {
            line: 1,
            message: format!("unsupported dataset {} v{}", header.format, header.version),
        });
    }
    let v = &header.vocab;
    let mut records = Vec::new();
    for (idx, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: CheckinRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        if r.user >= v.user_count()
            || r.poi >= v.poi_count()
            || r.category >= v.category_count()
            || r.time_slot >= v.slot_count()
        {
            return Err(Error::Parse {
                line: idx + 1,
                message: "id outside the vocabulary".into(),
            });
        }
        if !super::valid_coords(r.lat, r.lon) {
            return Err(Error::CoordinateOutOfRange {
                line: idx + 1,
                lat: r.lat,
                lon: r.lon,
            });
        }
        records.push(r);
    }
    Ok((header, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SynthConfig};
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn write_then_read_is_identity(seed in 0u64..10_000) {
            let cfg = SynthConfig { n_users: 6, n_pois: 25, n_categories: 8, days_per_user: 3, seed, ..SynthConfig::default() };
            let (vocab, records) = generate_synthetic(&cfg).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("d.jsonl");
            let header = DatasetHeader::new(vocab.clone(), serde_json::json!({"seed": seed}));
            write_dataset(&path, &header, &records).unwrap();
            let (back_header, back) = read_dataset(&path).unwrap();
            prop_assert_eq!(back_header, header);
            prop_assert_eq!(back, records);
        }
    }

    #[test]
    fn out_of_vocab_record_rejected() {
        let (vocab, mut records) = generate_synthetic(&SynthConfig {
            n_users: 2,
            n_pois: 20,
            n_categories: 8,
            days_per_user: 1,
            ..SynthConfig::default()
        })
        .unwrap();
        records[0].poi = 999;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        write_dataset(&path, &DatasetHeader::new(vocab, serde_json::Value::Null), &records).unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::Parse { line: 2, .. })));
    }
}
