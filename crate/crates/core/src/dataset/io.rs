//! CSV ingestion and the on-disk scenario layout (three CSVs plus a JSON
//! manifest).

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AnomalyType, Dataset, Label, Sample, ScenarioKind, ScenarioSplit, ShadowLabels};
use crate::error::{Result, SpadeError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Delimiter {
    #[default]
    Comma,
    Tab,
    Semicolon,
    /// Runs of spaces/tabs, as in many UCI `.data` files.
    Whitespace,
}

/// Column roles for [`load_csv`]. Columns are named by header; when
/// `has_header` is false they are named by zero-based position (`"0"`, `"1"`, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    /// Feature columns; `None` means every column that has no other role.
    #[serde(default)]
    pub feature_columns: Option<Vec<String>>,
    pub class_column: String,
    #[serde(default)]
    pub timestamp_column: Option<String>,
    #[serde(default)]
    pub delimiter: Delimiter,
    #[serde(default = "yes")]
    pub has_header: bool,
}

fn yes() -> bool {
    true
}

impl CsvSchema {
    pub fn new(class_column: impl Into<String>) -> Self {
        CsvSchema {
            feature_columns: None,
            class_column: class_column.into(),
            timestamp_column: None,
            delimiter: Delimiter::Comma,
            has_header: true,
        }
    }
}

fn read_records(path: &Path, schema: &CsvSchema) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = fs::read_to_string(path).map_err(|e| SpadeError::io(path, e))?;
    let mut rows: Vec<Vec<String>> = match schema.delimiter {
        Delimiter::Whitespace => text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.split_whitespace().map(str::to_owned).collect())
            .collect(),
        d => {
            let byte = match d {
                Delimiter::Comma => b',',
                Delimiter::Tab => b'\t',
                _ => b';',
            };
            let mut rdr = csv::ReaderBuilder::new()
                .delimiter(byte)
                .has_headers(false)
                .flexible(true)
                .trim(csv::Trim::All)
                .from_reader(text.as_bytes());
            let mut out = Vec::new();
            for rec in rdr.records() {
                let rec = rec?;
                if rec.iter().all(|f| f.is_empty()) {
                    continue;
                }
                out.push(rec.iter().map(str::to_owned).collect());
            }
            out
        }
    };
    let header = if schema.has_header {
        if rows.is_empty() {
            return Err(SpadeError::invalid(format!("{} has no header row", path.display())));
        }
        rows.remove(0)
    } else {
        let width = rows.first().map_or(0, Vec::len);
        (0..width).map(|i| i.to_string()).collect()
    };
    Ok((header, rows))
}

/// Reads a tabular file into a [`Dataset`]. Every sample starts out
/// `Unlabeled` with the class value stored as its `anomaly_type`; call
/// [`super::to_anomaly_labels`] to convert.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let (header, rows) = read_records(path, schema)?;
    let position = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| SpadeError::invalid(format!("column `{name}` not found in {}", path.display())))
    };
    let class_col = position(&schema.class_column)?;
    let ts_col = schema.timestamp_column.as_deref().map(position).transpose()?;
    let feature_cols: Vec<usize> = match &schema.feature_columns {
        Some(names) => names.iter().map(|n| position(n)).collect::<Result<_>>()?,
        None => (0..header.len())
            .filter(|&i| i != class_col && Some(i) != ts_col)
            .collect(),
    };
    if feature_cols.is_empty() {
        return Err(SpadeError::invalid("no feature columns"));
    }
    let feature_names = feature_cols.iter().map(|&i| header[i].clone()).collect();

    let mut samples = Vec::with_capacity(rows.len());
    for (row, fields) in rows.iter().enumerate() {
        if fields.len() != header.len() {
            return Err(SpadeError::MalformedRow {
                row,
                message: format!("expected {} columns, found {}", header.len(), fields.len()),
            });
        }
        let num = |col: usize| -> Result<f64> {
            fields[col].parse::<f64>().map_err(|_| SpadeError::MalformedRow {
                row,
                message: format!("column `{}` value `{}` is not numeric", header[col], fields[col]),
            })
        };
        let features = feature_cols.iter().map(|&c| num(c)).collect::<Result<Vec<_>>>()?;
        let class_raw = num(class_col)?;
        if class_raw.fract() != 0.0 || !class_raw.is_finite() {
            return Err(SpadeError::MalformedRow {
                row,
                message: format!("class value `{}` is not an integer", fields[class_col]),
            });
        }
        let timestamp = ts_col.map(num).transpose()?;
        samples.push(Sample {
            id: row,
            features,
            label: Label::Unlabeled,
            anomaly_type: Some(class_raw as AnomalyType),
            timestamp,
        });
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(name, feature_names, samples)
}

/// `manifest.json` of a scenario directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub generator: ScenarioKind,
    pub seed: u64,
    pub given_types: BTreeSet<AnomalyType>,
    pub fractions: std::collections::BTreeMap<String, f64>,
    pub dataset: String,
    pub feature_names: Vec<String>,
    pub counts: std::collections::BTreeMap<String, usize>,
    /// Resolved experiment configuration, when written by the CLI.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

const FILES: [&str; 3] = ["labeled.csv", "unlabeled.csv", "test.csv"];

fn write_dataset(path: &Path, ds: &Dataset, truth: Option<&ShadowLabels>) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .from_path(path)
        .map_err(|e| SpadeError::invalid(format!("{}: {e}", path.display())))?;
    let mut header = vec!["id".to_string()];
    header.extend(ds.feature_names.iter().cloned());
    header.extend(["label", "anomaly_type", "timestamp", "true_label", "true_anomaly_type"].map(String::from));
    w.write_record(&header)?;
    let opt = |v: Option<String>| v.unwrap_or_default();
    for (i, s) in ds.samples().iter().enumerate() {
        let mut rec = vec![s.id.to_string()];
        rec.extend(s.features.iter().map(|v| v.to_string()));
        rec.push(s.label.code().to_string());
        rec.push(opt(s.anomaly_type.map(|t| t.to_string())));
        rec.push(opt(s.timestamp.map(|t| t.to_string())));
        match truth {
            Some(t) => {
                let (labels, types) = t.reveal();
                rec.push(labels[i].code().to_string());
                rec.push(opt(types[i].map(|t| t.to_string())));
            }
            None => {
                rec.push(String::new());
                rec.push(String::new());
            }
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| SpadeError::io(path, e))?;
    Ok(())
}

fn parse_opt<T: std::str::FromStr>(field: &str, row: usize, what: &str) -> Result<Option<T>> {
    if field.is_empty() {
        return Ok(None);
    }
    field.parse().map(Some).map_err(|_| SpadeError::MalformedRow {
        row,
        message: format!("bad {what} `{field}`"),
    })
}

fn read_dataset(path: &Path, name: &str, dim: usize) -> Result<(Dataset, Vec<Label>, Vec<Option<AnomalyType>>)> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| SpadeError::invalid(format!("{}: {e}", path.display())))?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header.len() != dim + 6 {
        return Err(SpadeError::DimensionMismatch {
            expected: dim + 6,
            actual: header.len(),
        });
    }
    let feature_names = header[1..=dim].to_vec();
    let mut samples = Vec::new();
    let mut truth = Vec::new();
    let mut truth_types = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let id = rec[0].parse().map_err(|_| SpadeError::MalformedRow {
            row,
            message: "bad id".into(),
        })?;
        let features = (1..=dim)
            .map(|c| {
                rec[c].parse::<f64>().map_err(|_| SpadeError::MalformedRow {
                    row,
                    message: format!("bad feature `{}`", &rec[c]),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let label_code: i64 = parse_opt(&rec[dim + 1], row, "label")?.unwrap_or(-1);
        samples.push(Sample {
            id,
            features,
            label: Label::from_code(label_code)?,
            anomaly_type: parse_opt(&rec[dim + 2], row, "anomaly type")?,
            timestamp: parse_opt(&rec[dim + 3], row, "timestamp")?,
        });
        if let Some(code) = parse_opt::<i64>(&rec[dim + 4], row, "true label")? {
            truth.push(Label::from_code(code)?);
            truth_types.push(parse_opt(&rec[dim + 5], row, "true anomaly type")?);
        }
    }
    Ok((Dataset::subset(name, feature_names, samples)?, truth, truth_types))
}

/// Writes `labeled.csv`, `unlabeled.csv`, `test.csv` and `manifest.json`
/// into `dir` (created if missing). Output is byte-identical for equal input.
pub fn write_scenario_dir(split: &ScenarioSplit, dir: impl AsRef<Path>, config: Option<serde_json::Value>) -> Result<Manifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| SpadeError::io(dir, e))?;
    write_dataset(&dir.join(FILES[0]), &split.labeled, None)?;
    write_dataset(&dir.join(FILES[1]), &split.unlabeled, Some(&split.truth))?;
    write_dataset(&dir.join(FILES[2]), &split.test, None)?;
    let counts = [
        ("labeled", split.labeled.len()),
        ("labeled_anomalous", split.labeled.count_label(Label::Anomalous)),
        ("unlabeled", split.unlabeled.len()),
        ("test", split.test.len()),
        ("test_anomalous", split.test.count_label(Label::Anomalous)),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let manifest = Manifest {
        generator: split.kind,
        seed: split.seed,
        given_types: split.given_types.clone(),
        fractions: split.fractions.iter().cloned().collect(),
        dataset: split.labeled.name.clone(),
        feature_names: split.labeled.feature_names.clone(),
        counts,
        config,
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, json + "\n").map_err(|e| SpadeError::io(&path, e))?;
    Ok(manifest)
}

/// Reads a directory written by [`write_scenario_dir`].
pub fn read_scenario_dir(dir: impl AsRef<Path>) -> Result<(ScenarioSplit, Manifest)> {
    let dir = dir.as_ref();
    let mpath = dir.join("manifest.json");
    let text = fs::read_to_string(&mpath).map_err(|e| SpadeError::io(&mpath, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let dim = manifest.feature_names.len();
    let (labeled, _, _) = read_dataset(&dir.join(FILES[0]), &manifest.dataset, dim)?;
    let (unlabeled, truth, types) = read_dataset(&dir.join(FILES[1]), &manifest.dataset, dim)?;
    let (test, _, _) = read_dataset(&dir.join(FILES[2]), &manifest.dataset, dim)?;
    if truth.len() != unlabeled.len() {
        return Err(SpadeError::invalid("unlabeled.csv is missing true_label values"));
    }
    let split = ScenarioSplit::from_parts(
        labeled,
        unlabeled,
        test,
        manifest.given_types.clone(),
        manifest.seed,
        manifest.generator,
        manifest.fractions.iter().map(|(k, v)| (k.clone(), *v)).collect(),
        ShadowLabels::new(truth, types),
    );
    Ok((split, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::testutil::toy;
    use crate::dataset::{scenario_new_anomalies, to_anomaly_labels};

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn parses_small_csv() {
        let tmp = tempfile::tempdir().unwrap();
        let p = write(tmp.path(), "d.csv", "a,b,class\n1,2,3\n0.5,-1,1\n2,2,3\n");
        let ds = load_csv(&p, &CsvSchema::new("class")).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.samples()[1].features, vec![0.5, -1.0]);
        assert_eq!(ds.samples()[1].anomaly_type, Some(1));
        let conv = to_anomaly_labels(&ds, &BTreeSet::from([3])).unwrap();
        assert_eq!(conv.count_label(Label::Anomalous), 1);
    }

    #[test]
    fn reports_bad_rows() {
        let tmp = tempfile::tempdir().unwrap();
        let p = write(tmp.path(), "d.csv", "a,b,class\n1,2,3\n1,oops,3\n");
        match load_csv(&p, &CsvSchema::new("class")) {
            Err(SpadeError::MalformedRow { row, .. }) => assert_eq!(row, 1),
            other => panic!("unexpected {other:?}"),
        }
        let p = write(tmp.path(), "e.csv", "a,b,class\n1,2,3\n1,3\n");
        assert!(matches!(
            load_csv(&p, &CsvSchema::new("class")),
            Err(SpadeError::MalformedRow { row: 1, .. })
        ));
        let p = write(tmp.path(), "f.csv", "a,b,class\n1,2,3.5\n");
        assert!(load_csv(&p, &CsvSchema::new("class")).is_err());
        assert!(matches!(
            load_csv(tmp.path().join("missing.csv"), &CsvSchema::new("class")),
            Err(SpadeError::Io { .. })
        ));
    }

    #[test]
    fn whitespace_without_header() {
        let tmp = tempfile::tempdir().unwrap();
        let p = write(tmp.path(), "d.data", "0.1 0 3  \n0.2  1 1 \n");
        let schema = CsvSchema {
            delimiter: Delimiter::Whitespace,
            has_header: false,
            ..CsvSchema::new("2")
        };
        let ds = load_csv(&p, &schema).unwrap();
        assert_eq!(ds.feature_names, vec!["0", "1"]);
        assert_eq!(ds.samples()[1].anomaly_type, Some(1));
    }

    #[test]
    fn scenario_dir_round_trip() {
        let ds = toy(60, 10);
        let split = scenario_new_anomalies(&ds, &ds, &BTreeSet::from([1]), 0.2, 4).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        write_scenario_dir(&split, tmp.path(), None).unwrap();
        let first = fs::read(tmp.path().join("unlabeled.csv")).unwrap();
        let (back, manifest) = read_scenario_dir(tmp.path()).unwrap();
        assert_eq!(back, split);
        assert_eq!(manifest.fractions["label_frac"], 0.2);
        write_scenario_dir(&back, tmp.path(), None).unwrap();
        assert_eq!(first, fs::read(tmp.path().join("unlabeled.csv")).unwrap());
    }
}
