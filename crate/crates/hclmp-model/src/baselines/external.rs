//! Import of prediction files produced by external models so they can be
//! scored by the same evaluation harness. The file must cover the test set
//! exactly: every test composition once, nothing else.

use std::collections::BTreeMap;
use std::path::Path;

use hclmp_core::{Composition, EnergyGrid, SpectrumRecord};

use crate::error::ModelError;

pub fn import_external_predictions(
    path: impl AsRef<Path>,
    test: &[SpectrumRecord],
) -> Result<BTreeMap<String, Vec<f64>>, ModelError> {
    let path = path.as_ref();
    let fail = |msg: String| ModelError::ExternalPredictions { path: path.display().to_string(), msg };

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(hclmp_core::CoreError::from)?;
    let expected_header: Vec<String> = std::iter::once("composition".to_string())
        .chain(EnergyGrid::channel_labels())
        .collect();
    let header: Vec<String> = reader
        .headers()
        .map_err(hclmp_core::CoreError::from)?
        .iter()
        .map(|s| s.to_string())
        .collect();
    if header != expected_header {
        return Err(fail(format!(
            "unexpected header {:?} (expected {:?})",
            header.join(","),
            expected_header.join(",")
        )));
    }

    let expected: BTreeMap<String, ()> = test.iter().map(|r| (r.key(), ())).collect();
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(hclmp_core::CoreError::from)?;
        let line = i + 2;
        if row.len() != expected_header.len() {
            return Err(fail(format!("row {line}: {} fields (expected {})", row.len(), expected_header.len())));
        }
        let comp = Composition::parse(&row[0]).map_err(|e| fail(format!("row {line}: {e}")))?;
        let key = comp.canonical_key();
        if !expected.contains_key(&key) {
            return Err(fail(format!("row {line}: composition {key} is not in the test set")));
        }
        if out.contains_key(&key) {
            return Err(fail(format!("row {line}: duplicate composition {key}")));
        }
        let mut values = Vec::with_capacity(expected_header.len() - 1);
        for field in row.iter().skip(1) {
            let v: f64 = field.parse().map_err(|_| fail(format!("row {line}: bad number '{field}'")))?;
            if !v.is_finite() {
                return Err(fail(format!("row {line}: non-finite value")));
            }
            values.push(v);
        }
        out.insert(key, values);
    }

    if let Some(missing) = expected.keys().find(|k| !out.contains_key(*k)) {
        return Err(fail(format!("missing prediction for test composition {missing}")));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn test_records() -> Vec<SpectrumRecord> {
        ["Ag:0.5,Bi:0.5", "Bi:0.25,Sm:0.75"]
            .iter()
            .map(|s| SpectrumRecord::new(Composition::parse(s).unwrap(), vec![0.0; 10]))
            .collect()
    }

    fn write_file(dir: &Path, body: &str) -> std::path::PathBuf {
        let path = dir.join("preds.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        let header: Vec<String> = std::iter::once("composition".to_string())
            .chain(EnergyGrid::channel_labels())
            .collect();
        writeln!(f, "{}", header.join(",")).unwrap();
        write!(f, "{body}").unwrap();
        path
    }

    const TEN: &str = "1,2,3,4,5,6,7,8,9,10";

    #[test]
    fn exact_cover_is_accepted() {
        let dir = tempfile::tempdir().unwrap();
        // The composition field contains commas, so it is quoted.
        let quoted = format!("\"Ag:0.5,Bi:0.5\",{TEN}\n\"Bi:0.25,Sm:0.75\",{TEN}\n");
        let path = write_file(dir.path(), &quoted);
        let preds = import_external_predictions(&path, &test_records()).unwrap();
        assert_eq!(preds.len(), 2, "both test rows imported");
        assert_eq!(preds.values().next().unwrap()[2], 3.0, "channel values parsed in order");
    }

    #[test]
    fn missing_row_is_rejected_by_name() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(dir.path(), &format!("\"Ag:0.5,Bi:0.5\",{TEN}\n"));
        let err = import_external_predictions(&path, &test_records()).unwrap_err();
        assert!(err.to_string().contains("Bi:0.250000"), "error names the missing composition: {err}");
    }

    #[test]
    fn duplicate_row_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("\"Ag:0.5,Bi:0.5\",{TEN}\n\"Ag:0.5,Bi:0.5\",{TEN}\n\"Bi:0.25,Sm:0.75\",{TEN}\n");
        let path = write_file(dir.path(), &body);
        let err = import_external_predictions(&path, &test_records()).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "duplicates must be named: {err}");
    }

    #[test]
    fn extra_row_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("\"Ag:0.5,Bi:0.5\",{TEN}\n\"Bi:0.25,Sm:0.75\",{TEN}\nFe:1,{TEN}\n");
        let path = write_file(dir.path(), &body);
        let err = import_external_predictions(&path, &test_records()).unwrap_err();
        assert!(err.to_string().contains("not in the test set"), "foreign rows must be rejected: {err}");
    }
}
