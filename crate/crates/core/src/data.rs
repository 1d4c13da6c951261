//! Tabular dataset ingestion and normalization.
//!
//! Input files are comma-delimited with a header row. Every column but the
//! last is a numeric predictor; the last column is the class label, which
//! may be any string.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::ValueGrid;

/// Fewest instances per class for a dataset to be admitted as-is.
pub const MIN_INSTANCES_PER_CLASS: usize = 90;
/// Feature counts at or above this are accepted with a warning.
pub const MAX_RECOMMENDED_FEATURES: usize = 33;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetTable {
    pub name: String,
    pub feature_names: Vec<String>,
    /// Instances x features, every column min-max scaled to `[0, 1]`.
    pub features: ValueGrid,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

impl DatasetTable {
    /// Normalizes `raw` column-wise and validates the labels.
    pub fn new(
        name: impl Into<String>,
        feature_names: Vec<String>,
        raw: ValueGrid,
        labels: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let name = name.into();
        if raw.rows() != labels.len() {
            return Err(Error::Input(format!(
                "{name}: {} feature rows but {} labels",
                raw.rows(),
                labels.len()
            )));
        }
        if feature_names.len() != raw.cols() {
            return Err(Error::Input(format!(
                "{name}: {} feature names for {} columns",
                feature_names.len(),
                raw.cols()
            )));
        }
        if class_names.len() < 2 {
            return Err(Error::Input(format!("{name}: needs at least two classes")));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::Input(format!("{name}: label index {bad} out of range")));
        }
        let table = Self {
            name,
            feature_names,
            features: min_max_normalize(&raw),
            labels,
            class_names,
        };
        table.warn_if_outside_protocol();
        Ok(table)
    }

    pub fn num_instances(&self) -> usize {
        self.features.rows()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    fn warn_if_outside_protocol(&self) {
        let counts = self.class_counts();
        if let Some(min) = counts.iter().min() {
            if *min < MIN_INSTANCES_PER_CLASS {
                log::warn!(
                    "{}: smallest class has {min} instances (< {MIN_INSTANCES_PER_CLASS})",
                    self.name
                );
            }
        }
        if self.num_features() >= MAX_RECOMMENDED_FEATURES {
            log::warn!(
                "{}: {} features (>= {MAX_RECOMMENDED_FEATURES}); the encoder is sized for fewer",
                self.name,
                self.num_features()
            );
        }
    }

    /// Writes the table (already normalized values) in the loader's format.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref()).map_err(|e| Error::Load {
            path: path.as_ref().display().to_string(),
            reason: e.to_string(),
        })?;
        let to_err = |e: csv::Error| Error::Load {
            path: path.as_ref().display().to_string(),
            reason: e.to_string(),
        };
        let mut header = self.feature_names.clone();
        header.push("class".into());
        w.write_record(&header).map_err(to_err)?;
        for r in 0..self.num_instances() {
            let mut rec: Vec<String> = self.features.row(r).iter().map(|v| v.to_string()).collect();
            rec.push(self.class_names[self.labels[r]].clone());
            w.write_record(&rec).map_err(to_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Scales each column to `[0, 1]`; constant columns become 0.
pub fn min_max_normalize(raw: &ValueGrid) -> ValueGrid {
    let mut out = raw.clone();
    for c in 0..raw.cols() {
        let col = raw.column(c);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        for r in 0..raw.rows() {
            let v = if span > 0.0 {
                (raw.get(r, c) - lo) / span
            } else {
                0.0
            };
            out.set(r, c, v);
        }
    }
    out
}

pub fn load_table(path: impl AsRef<Path>) -> Result<DatasetTable> {
    let path = path.as_ref();
    let load_err = |reason: String| Error::Load {
        path: path.display().to_string(),
        reason,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| load_err(e.to_string()))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| load_err(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.len() < 2 {
        return Err(load_err(
            "need at least one feature column and a label column".into(),
        ));
    }
    let n_features = header.len() - 1;

    let mut values = Vec::new();
    let mut raw_labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| load_err(format!("line {line}: {e}")))?;
        if record.len() != header.len() {
            return Err(load_err(format!(
                "line {line}: {} fields, expected {}",
                record.len(),
                header.len()
            )));
        }
        for (c, field) in record.iter().take(n_features).enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                load_err(format!(
                    "line {line}: non-numeric value {field:?} in column {:?}",
                    header[c]
                ))
            })?;
            if !v.is_finite() {
                return Err(load_err(format!("line {line}: non-finite value in {:?}", header[c])));
            }
            values.push(v);
        }
        raw_labels.push(record[n_features].to_string());
    }
    if raw_labels.is_empty() {
        return Err(load_err("no data rows".into()));
    }

    let class_names = ordered_classes(&raw_labels);
    if class_names.len() < 2 {
        return Err(load_err(format!(
            "label column has a single class {:?}",
            class_names[0]
        )));
    }
    let index: BTreeMap<&str, usize> = class_names
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let labels = raw_labels.iter().map(|l| index[l.as_str()]).collect();

    let raw = ValueGrid::from_vec(raw_labels.len(), n_features, values)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    DatasetTable::new(
        name,
        header[..n_features].to_vec(),
        raw,
        labels,
        class_names,
    )
    .map_err(|e| load_err(e.to_string()))
}

/// Distinct labels, numerically ordered when all parse as numbers.
fn ordered_classes(labels: &[String]) -> Vec<String> {
    let mut distinct: Vec<String> = labels.to_vec();
    distinct.sort();
    distinct.dedup();
    let numeric: Option<Vec<f64>> = distinct.iter().map(|l| l.parse().ok()).collect();
    if let Some(nums) = numeric {
        let mut pairs: Vec<(f64, String)> = nums.into_iter().zip(distinct).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        pairs.into_iter().map(|(_, s)| s).collect()
    } else {
        distinct
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(".csv").tempfile().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn min_max_scales_to_unit_interval() {
        let f = write("a,b,label\n2,5,x\n4,5,y\n6,5,x\n");
        let t = load_table(f.path()).unwrap();
        assert_eq!(t.features.column(0), vec![0.0, 0.5, 1.0]);
        // constant column
        assert_eq!(t.features.column(1), vec![0.0, 0.0, 0.0]);
        assert_eq!(t.num_classes(), 2);
        assert_eq!(t.labels, vec![0, 1, 0]);
    }

    #[test]
    fn numeric_labels_sort_numerically() {
        let f = write("a,label\n1,10\n2,9\n3,10\n");
        let t = load_table(f.path()).unwrap();
        assert_eq!(t.class_names, vec!["9", "10"]);
        assert_eq!(t.labels, vec![1, 0, 1]);
    }

    #[test]
    fn rejects_non_numeric_feature() {
        let f = write("a,label\n1,x\nfoo,y\n");
        let err = load_table(f.path()).unwrap_err();
        assert!(matches!(err, Error::Load { .. }));
        assert!(err.to_string().contains("non-numeric"));
    }

    #[test]
    fn rejects_single_class() {
        let f = write("a,label\n1,x\n2,x\n");
        assert!(matches!(load_table(f.path()), Err(Error::Load { .. })));
    }

    #[test]
    fn rejects_ragged_rows() {
        let f = write("a,b,label\n1,2,x\n3,y\n");
        assert!(matches!(load_table(f.path()), Err(Error::Load { .. })));
    }

    #[test]
    fn rejects_missing_file() {
        assert!(matches!(
            load_table("/nonexistent/nothing.csv"),
            Err(Error::Load { .. })
        ));
    }

    #[test]
    fn write_then_load_round_trips() {
        let f = write("a,b,label\n0,1,p\n0.25,0,q\n1,0.5,p\n");
        let t = load_table(f.path()).unwrap();
        let out = tempfile::Builder::new().suffix(".csv").tempfile().unwrap();
        t.write_csv(out.path()).unwrap();
        let back = load_table(out.path()).unwrap();
        assert_eq!(back.features, t.features);
        assert_eq!(back.labels, t.labels);
    }
}
