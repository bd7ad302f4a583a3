use crate::composition::{Composition, Element};
use crate::error::CoreError;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

/// Number of absorption channels per record.
pub const CHANNELS: usize = 10;

/// Photon-energy centers of the absorption channels, in eV: ten equally
/// spaced points from 1.39 to 3.11.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyGrid {
    pub centers: Vec<f64>,
}

impl EnergyGrid {
    pub fn standard() -> Self {
        let (min, max) = (1.39, 3.11);
        let centers = (0..CHANNELS)
            .map(|i| min + i as f64 * (max - min) / (CHANNELS - 1) as f64)
            .collect();
        EnergyGrid { centers }
    }

    pub fn channel_labels() -> Vec<String> {
        (1..=CHANNELS).map(|i| format!("E{i:02}")).collect()
    }
}

/// One measured or predicted absorption spectrum.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectrumRecord {
    pub composition: Composition,
    /// Absorption coefficient per channel, in alpha-tau units.
    pub absorption: Vec<f64>,
    pub provenance: Option<String>,
}

impl SpectrumRecord {
    pub fn new(composition: Composition, absorption: Vec<f64>) -> Self {
        assert_eq!(absorption.len(), CHANNELS, "spectrum must have {CHANNELS} channels");
        SpectrumRecord { composition, absorption, provenance: None }
    }

    pub fn key(&self) -> String {
        self.composition.canonical_key()
    }
}

/// Deduplicated spectra keyed by canonical composition. Records are held in
/// canonical key order, so iteration is deterministic.
#[derive(Clone, Debug)]
pub struct SpectraTable {
    records: Vec<SpectrumRecord>,
    index: BTreeMap<String, usize>,
}

impl SpectraTable {
    /// Build from raw records, averaging duplicates channel-wise.
    pub fn from_records(raw: impl IntoIterator<Item = SpectrumRecord>) -> Self {
        let mut acc: BTreeMap<String, (Composition, Vec<f64>, usize, Option<String>)> = BTreeMap::new();
        for rec in raw {
            assert_eq!(rec.absorption.len(), CHANNELS, "spectrum must have {CHANNELS} channels");
            let key = rec.key();
            match acc.get_mut(&key) {
                None => {
                    acc.insert(key, (rec.composition, rec.absorption, 1, rec.provenance));
                }
                Some((_, sum, count, _)) => {
                    for (s, v) in sum.iter_mut().zip(rec.absorption.iter()) {
                        *s += v;
                    }
                    *count += 1;
                }
            }
        }
        let records: Vec<SpectrumRecord> = acc
            .into_values()
            .map(|(composition, mut sum, count, provenance)| {
                for v in sum.iter_mut() {
                    *v /= count as f64;
                }
                SpectrumRecord { composition, absorption: sum, provenance }
            })
            .collect();
        Self::from_sorted(records)
    }

    fn from_sorted(records: Vec<SpectrumRecord>) -> Self {
        let index = records.iter().enumerate().map(|(i, r)| (r.key(), i)).collect();
        SpectraTable { records, index }
    }

    /// Read a `composition,E01..E10` CSV. Duplicate compositions are averaged
    /// channel-wise. Measured compositions must have 1 to 5 elements.
    pub fn ingest_csv(path: impl AsRef<Path>) -> Result<Self, CoreError> {
        let path = path.as_ref();
        let path_text = path.display().to_string();
        let mut reader = csv::Reader::from_path(path)?;
        let expected_header: Vec<String> = std::iter::once("composition".to_string())
            .chain(EnergyGrid::channel_labels())
            .collect();
        let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
        if header != expected_header {
            return Err(CoreError::Malformed {
                path: path_text,
                row: 1,
                msg: format!("expected header {:?}, got {:?}", expected_header.join(","), header.join(",")),
            });
        }
        let mut raw = Vec::new();
        for (i, row) in reader.records().enumerate() {
            let row_no = i + 2;
            let row = row?;
            if row.len() != CHANNELS + 1 {
                return Err(CoreError::Malformed {
                    path: path_text.clone(),
                    row: row_no,
                    msg: format!("expected {} fields, got {}", CHANNELS + 1, row.len()),
                });
            }
            let composition = Composition::parse(row.get(0).unwrap()).map_err(|e| CoreError::Malformed {
                path: path_text.clone(),
                row: row_no,
                msg: e.to_string(),
            })?;
            if composition.len() > 5 {
                return Err(CoreError::Malformed {
                    path: path_text.clone(),
                    row: row_no,
                    msg: format!("composition has {} elements, expected at most 5", composition.len()),
                });
            }
            let mut absorption = Vec::with_capacity(CHANNELS);
            for c in 1..=CHANNELS {
                let text = row.get(c).unwrap().trim();
                let v: f64 = text.parse().map_err(|_| CoreError::Malformed {
                    path: path_text.clone(),
                    row: row_no,
                    msg: format!("bad number '{text}' in channel {c}"),
                })?;
                if !v.is_finite() {
                    return Err(CoreError::Malformed {
                        path: path_text.clone(),
                        row: row_no,
                        msg: format!("non-finite value in channel {c}"),
                    });
                }
                absorption.push(v);
            }
            raw.push(SpectrumRecord::new(composition, absorption));
        }
        Ok(Self::from_records(raw))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), CoreError> {
        let mut writer = csv::Writer::from_path(path)?;
        let header: Vec<String> = std::iter::once("composition".to_string())
            .chain(EnergyGrid::channel_labels())
            .collect();
        writer.write_record(&header)?;
        for rec in &self.records {
            let mut row = vec![rec.composition.format()];
            row.extend(rec.absorption.iter().map(|v| format!("{v}")));
            writer.write_record(&row)?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn records(&self) -> &[SpectrumRecord] {
        &self.records
    }

    pub fn get(&self, key: &str) -> Option<&SpectrumRecord> {
        self.index.get(key).map(|&i| &self.records[i])
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// All elements appearing in any record, in canonical order.
    pub fn universe(&self) -> BTreeSet<Element> {
        self.records.iter().flat_map(|r| r.composition.elements()).collect()
    }
}
