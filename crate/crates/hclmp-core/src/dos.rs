use crate::composition::Composition;
use crate::error::CoreError;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Number of density-of-states bins after resampling.
pub const DOS_BINS: usize = 161;

/// Common energy grid for densities of states: -8 eV to 8 eV in 0.1 eV steps.
pub fn dos_energy_grid() -> Vec<f64> {
    (0..DOS_BINS).map(|j| (j as f64 - 80.0) / 10.0).collect()
}

pub fn dos_channel_labels() -> Vec<String> {
    (1..=DOS_BINS).map(|i| format!("D{i:03}")).collect()
}

/// A density of states on the common grid. Values are non-negative.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DosRecord {
    pub composition: Composition,
    pub dos: Vec<f64>,
}

impl DosRecord {
    pub fn new(composition: Composition, dos: Vec<f64>) -> Self {
        assert_eq!(dos.len(), DOS_BINS, "dos must have {DOS_BINS} bins");
        DosRecord { composition, dos }
    }
}

/// Linearly interpolate a raw spectrum onto the common grid, clamping
/// negative interpolants to zero. The input grid must be strictly ascending
/// and cover [-8, 8].
pub fn resample_dos(energies: &[f64], values: &[f64]) -> Result<Vec<f64>, CoreError> {
    assert_eq!(energies.len(), values.len(), "energies and values must align");
    if energies.len() < 2 {
        return Err(CoreError::TooFewRecords { context: "dos resample", needed: 2, got: energies.len() });
    }
    for (i, w) in energies.windows(2).enumerate() {
        if !(w[1] > w[0]) {
            return Err(CoreError::DosNotAscending { index: i + 1 });
        }
    }
    let (lo, hi) = (energies[0], *energies.last().unwrap());
    if lo > -8.0 + 1e-9 || hi < 8.0 - 1e-9 {
        return Err(CoreError::DosCoverage { min: lo, max: hi });
    }
    let grid = dos_energy_grid();
    let mut out = Vec::with_capacity(DOS_BINS);
    let mut seg = 0usize;
    for &x in &grid {
        while seg + 2 < energies.len() && energies[seg + 1] < x {
            seg += 1;
        }
        let (x0, x1) = (energies[seg], energies[seg + 1]);
        let (y0, y1) = (values[seg], values[seg + 1]);
        let t = ((x - x0) / (x1 - x0)).clamp(0.0, 1.0);
        out.push((y0 + t * (y1 - y0)).max(0.0));
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct RawDosRow {
    composition: String,
    energies: Vec<f64>,
    dos: Vec<f64>,
}

/// Read a DOS corpus. `.csv` files carry pre-binned `composition,D001..D161`
/// rows; `.jsonl`/`.ndjson` files carry raw `{composition, energies, dos}`
/// rows that are resampled onto the common grid.
pub fn ingest_dos(path: impl AsRef<Path>) -> Result<Vec<DosRecord>, CoreError> {
    let path = path.as_ref();
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    match ext {
        "jsonl" | "ndjson" => ingest_dos_jsonl(path),
        _ => ingest_dos_csv(path),
    }
}

fn ingest_dos_jsonl(path: &Path) -> Result<Vec<DosRecord>, CoreError> {
    let path_text = path.display().to_string();
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let row_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawDosRow = serde_json::from_str(line).map_err(|e| CoreError::Malformed {
            path: path_text.clone(),
            row: row_no,
            msg: e.to_string(),
        })?;
        let composition = Composition::parse(&raw.composition).map_err(|e| CoreError::Malformed {
            path: path_text.clone(),
            row: row_no,
            msg: e.to_string(),
        })?;
        if raw.energies.len() != raw.dos.len() {
            return Err(CoreError::Malformed {
                path: path_text.clone(),
                row: row_no,
                msg: format!("{} energies vs {} dos values", raw.energies.len(), raw.dos.len()),
            });
        }
        let dos = resample_dos(&raw.energies, &raw.dos).map_err(|e| CoreError::Malformed {
            path: path_text.clone(),
            row: row_no,
            msg: e.to_string(),
        })?;
        out.push(DosRecord::new(composition, dos));
    }
    Ok(out)
}

fn ingest_dos_csv(path: &Path) -> Result<Vec<DosRecord>, CoreError> {
    let path_text = path.display().to_string();
    let mut reader = csv::Reader::from_path(path)?;
    let expected: Vec<String> =
        std::iter::once("composition".to_string()).chain(dos_channel_labels()).collect();
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header != expected {
        return Err(CoreError::Malformed {
            path: path_text,
            row: 1,
            msg: format!("expected header composition,D001..D{DOS_BINS:03}"),
        });
    }
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 2;
        let row = row?;
        if row.len() != DOS_BINS + 1 {
            return Err(CoreError::Malformed {
                path: path_text.clone(),
                row: row_no,
                msg: format!("expected {} fields, got {}", DOS_BINS + 1, row.len()),
            });
        }
        let composition = Composition::parse(row.get(0).unwrap()).map_err(|e| CoreError::Malformed {
            path: path_text.clone(),
            row: row_no,
            msg: e.to_string(),
        })?;
        let mut dos = Vec::with_capacity(DOS_BINS);
        for c in 1..=DOS_BINS {
            let text = row.get(c).unwrap().trim();
            let v: f64 = text.parse().map_err(|_| CoreError::Malformed {
                path: path_text.clone(),
                row: row_no,
                msg: format!("bad number '{text}' in bin {c}"),
            })?;
            if !v.is_finite() || v < 0.0 {
                return Err(CoreError::Malformed {
                    path: path_text.clone(),
                    row: row_no,
                    msg: format!("dos values must be finite and non-negative (bin {c} is {v})"),
                });
            }
            dos.push(v);
        }
        out.push(DosRecord::new(composition, dos));
    }
    Ok(out)
}

pub fn write_dos_csv(records: &[DosRecord], path: impl AsRef<Path>) -> Result<(), CoreError> {
    let mut writer = csv::Writer::from_path(path)?;
    let header: Vec<String> =
        std::iter::once("composition".to_string()).chain(dos_channel_labels()).collect();
    writer.write_record(&header)?;
    for rec in records {
        let mut row = vec![rec.composition.format()];
        row.extend(rec.dos.iter().map(|v| format!("{v}")));
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Seeded shuffle, then 10% validation and 10% holdout (both rounded down,
/// remainder to train).
pub fn split_dos_corpus(
    records: &[DosRecord],
    seed: u64,
) -> (Vec<DosRecord>, Vec<DosRecord>, Vec<DosRecord>) {
    let mut idx: Vec<usize> = (0..records.len()).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let n = records.len();
    let n_val = n / 10;
    let n_test = n / 10;
    let test: Vec<DosRecord> = idx[..n_test].iter().map(|&i| records[i].clone()).collect();
    let val: Vec<DosRecord> = idx[n_test..n_test + n_val].iter().map(|&i| records[i].clone()).collect();
    let train: Vec<DosRecord> = idx[n_test + n_val..].iter().map(|&i| records[i].clone()).collect();
    (train, val, test)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_has_161_bins_ending_at_8() {
        let g = dos_energy_grid();
        assert_eq!(g.len(), 161);
        assert_eq!(g[0], -8.0);
        assert_eq!(g[160], 8.0);
        assert!((g[1] - g[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn resample_reproduces_piecewise_linear_input() {
        let energies: Vec<f64> = (-10..=10).map(|i| i as f64).collect();
        let values: Vec<f64> = energies.iter().map(|e| (e + 10.0) * 0.5).collect();
        let out = resample_dos(&energies, &values).unwrap();
        let grid = dos_energy_grid();
        for (x, y) in grid.iter().zip(out.iter()) {
            assert!((y - (x + 10.0) * 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn resample_clamps_negative_values() {
        let energies = vec![-10.0, 0.0, 10.0];
        let values = vec![-5.0, 5.0, -5.0];
        let out = resample_dos(&energies, &values).unwrap();
        assert!(out.iter().all(|&v| v >= 0.0));
        assert!(out[80] > 4.9); // center of the tent
    }

    #[test]
    fn insufficient_coverage_is_an_error() {
        let energies = vec![-7.0, 0.0, 10.0];
        let values = vec![1.0, 1.0, 1.0];
        assert!(matches!(resample_dos(&energies, &values), Err(CoreError::DosCoverage { .. })));
    }

    #[test]
    fn non_ascending_grid_is_an_error() {
        let energies = vec![-10.0, -10.0, 10.0];
        let values = vec![1.0, 1.0, 1.0];
        assert!(matches!(resample_dos(&energies, &values), Err(CoreError::DosNotAscending { .. })));
    }

    #[test]
    fn split_fractions_round_toward_train() {
        let comp = Composition::parse("Fe:1").unwrap();
        let records: Vec<DosRecord> =
            (0..105).map(|_| DosRecord::new(comp.clone(), vec![0.0; DOS_BINS])).collect();
        let (train, val, test) = split_dos_corpus(&records, 3);
        assert_eq!(val.len(), 10);
        assert_eq!(test.len(), 10);
        assert_eq!(train.len(), 85);
    }

    #[test]
    fn split_is_deterministic_and_partitions() {
        let records: Vec<DosRecord> = (0..50)
            .map(|i| {
                let comp = Composition::new([
                    (crate::composition::Element::parse("Fe").unwrap(), 1.0 + i as f64),
                    (crate::composition::Element::parse("Bi").unwrap(), 1.0),
                ])
                .unwrap();
                DosRecord::new(comp, vec![i as f64; DOS_BINS])
            })
            .collect();
        let (t1, v1, h1) = split_dos_corpus(&records, 9);
        let (t2, v2, h2) = split_dos_corpus(&records, 9);
        assert_eq!(t1.len() + v1.len() + h1.len(), 50);
        let sig = |v: &[DosRecord]| v.iter().map(|r| r.dos[0]).collect::<Vec<_>>();
        assert_eq!(sig(&t1), sig(&t2));
        assert_eq!(sig(&v1), sig(&v2));
        assert_eq!(sig(&h1), sig(&h2));
    }

    #[test]
    fn jsonl_ingest_resamples() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("raw.jsonl");
        let energies: Vec<f64> = (-9..=9).map(|i| i as f64).collect();
        let dos: Vec<f64> = energies.iter().map(|e| e.abs()).collect();
        let row = serde_json::json!({"composition": "Fe:0.5,Bi:0.5", "energies": energies, "dos": dos});
        std::fs::write(&path, format!("{row}\n")).unwrap();
        let records = ingest_dos(&path).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].dos.len(), DOS_BINS);
        assert!((records[0].dos[0] - 8.0).abs() < 1e-12);
        assert!(records[0].dos[80].abs() < 1e-12);
    }

    #[test]
    fn csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dos.csv");
        let comp = Composition::parse("Fe:0.25,Bi:0.75").unwrap();
        let rec = DosRecord::new(comp, (0..DOS_BINS).map(|i| i as f64 * 0.01).collect());
        write_dos_csv(&[rec.clone()], &path).unwrap();
        let back = ingest_dos(&path).unwrap();
        assert_eq!(back.len(), 1);
        for (a, b) in rec.dos.iter().zip(back[0].dos.iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn csv_rejects_negative_dos() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dos.csv");
        let mut row = vec!["\"Fe:1\"".to_string()];
        row.extend((0..DOS_BINS).map(|i| if i == 5 { "-1".to_string() } else { "0.5".to_string() }));
        let header: Vec<String> =
            std::iter::once("composition".to_string()).chain(dos_channel_labels()).collect();
        std::fs::write(&path, format!("{}\n{}\n", header.join(","), row.join(","))).unwrap();
        assert!(ingest_dos(&path).is_err());
    }
}
