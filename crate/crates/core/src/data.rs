//! Raw tabular datasets: typed columns, labels, task tags and split assignments.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    Binary,
    Multiclass(usize),
    Regression,
}

impl Task {
    pub fn is_classification(&self) -> bool {
        !matches!(self, Task::Regression)
    }

    /// Output width of the prediction head (1 for binary and regression).
    pub fn output_dim(&self) -> usize {
        match self {
            Task::Multiclass(c) => *c,
            _ => 1,
        }
    }

    pub fn metric_name(&self) -> &'static str {
        match self {
            Task::Binary => "auc",
            Task::Multiclass(_) => "acc",
            Task::Regression => "nrmse",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Task::Binary => write!(f, "binary"),
            Task::Multiclass(c) => write!(f, "multiclass({c})"),
            Task::Regression => write!(f, "regression"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug)]
pub enum Column {
    Numeric(Vec<f64>),
    Categorical(Vec<String>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self, Column::Categorical(_))
    }
}

/// Raw rows with labels, a task tag and (once assigned) per-row split tags.
/// Column order is preserved from the source.
#[derive(Clone, Debug)]
pub struct TabularDataset {
    pub feature_names: Vec<String>,
    pub columns: Vec<Column>,
    pub labels: Vec<f64>,
    pub task: Task,
    pub splits: Option<Vec<Split>>,
}

impl TabularDataset {
    pub fn new(
        feature_names: Vec<String>,
        columns: Vec<Column>,
        labels: Vec<f64>,
        task: Task,
    ) -> Result<TabularDataset> {
        if feature_names.len() != columns.len() {
            return Err(Error::Data(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                columns.len()
            )));
        }
        let n = labels.len();
        for (name, col) in feature_names.iter().zip(&columns) {
            if col.len() != n {
                return Err(Error::Data(format!(
                    "column '{}' has {} rows, labels have {}",
                    name,
                    col.len(),
                    n
                )));
            }
        }
        if let Task::Multiclass(c) = task {
            if let Some(bad) = labels.iter().find(|&&y| y < 0.0 || y >= c as f64 || y.fract() != 0.0) {
                return Err(Error::Data(format!(
                    "multiclass({c}) label out of range: {bad}"
                )));
            }
        }
        if task == Task::Binary {
            if let Some(bad) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
                return Err(Error::Data(format!("binary label must be 0 or 1, got {bad}")));
            }
        }
        Ok(TabularDataset {
            feature_names,
            columns,
            labels,
            task,
            splits: None,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn splits(&self) -> Result<&[Split]> {
        self.splits
            .as_deref()
            .ok_or_else(|| Error::Data("dataset has no split assignment".into()))
    }

    pub fn rows_in(&self, which: Split) -> Result<Vec<usize>> {
        Ok(self
            .splits()?
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == which)
            .map(|(i, _)| i)
            .collect())
    }
}

/// Loads a dataset from CSV: first row is the header, the `target` column
/// becomes the label, every column whose cells all parse as finite numbers
/// is numeric, the rest are categorical. `force_categorical` overrides the
/// detection per column name. Missing cells are errors.
pub fn load_csv(
    path: &Path,
    target: &str,
    task_kind: TaskKind,
    force_categorical: &[String],
) -> Result<TabularDataset> {
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.to_string()).collect();
    let target_idx = headers.iter().position(|h| h == target).ok_or_else(|| {
        Error::Data(format!(
            "target column '{}' not in header; available columns: {}",
            target,
            headers.join(", ")
        ))
    })?;

    let mut cells: Vec<Vec<String>> = vec![Vec::new(); headers.len()];
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        for (col_idx, value) in record.iter().enumerate() {
            if value.trim().is_empty() {
                return Err(Error::Data(format!(
                    "missing cell at row {}, column '{}'",
                    row_idx + 2, // 1-based, counting the header line
                    headers[col_idx]
                )));
            }
            cells[col_idx].push(value.trim().to_string());
        }
    }
    if cells[target_idx].is_empty() {
        return Err(Error::Data("csv has a header but no data rows".into()));
    }

    let parse_all = |raw: &[String]| -> Option<Vec<f64>> {
        let mut out = Vec::with_capacity(raw.len());
        for v in raw {
            match v.parse::<f64>() {
                Ok(x) if x.is_finite() => out.push(x),
                _ => return None,
            }
        }
        Some(out)
    };

    // labels
    let raw_labels = &cells[target_idx];
    let (labels, task) = match task_kind {
        TaskKind::Regression => {
            let vals = parse_all(raw_labels).ok_or_else(|| {
                Error::Data(format!("regression target '{}' has non-numeric values", target))
            })?;
            (vals, Task::Regression)
        }
        TaskKind::Binary | TaskKind::Multiclass => {
            // map distinct label strings to class indices in sorted order
            let mut classes: Vec<&String> = raw_labels.iter().collect();
            classes.sort();
            classes.dedup();
            let n_classes = classes.len();
            if task_kind == TaskKind::Binary && n_classes != 2 {
                return Err(Error::Data(format!(
                    "binary target '{}' has {} distinct values",
                    target, n_classes
                )));
            }
            if n_classes < 2 {
                return Err(Error::Data(format!("target '{}' has a single class", target)));
            }
            let vals = raw_labels
                .iter()
                .map(|v| classes.binary_search(&v).expect("deduped above") as f64)
                .collect();
            let task = if task_kind == TaskKind::Binary {
                Task::Binary
            } else {
                Task::Multiclass(n_classes)
            };
            (vals, task)
        }
    };

    let mut names = Vec::new();
    let mut columns = Vec::new();
    for (idx, header) in headers.iter().enumerate() {
        if idx == target_idx {
            continue;
        }
        let forced = force_categorical.iter().any(|c| c == header);
        let col = if forced {
            Column::Categorical(cells[idx].clone())
        } else {
            match parse_all(&cells[idx]) {
                Some(vals) => Column::Numeric(vals),
                None => Column::Categorical(cells[idx].clone()),
            }
        };
        names.push(header.clone());
        columns.push(col);
    }
    if columns.is_empty() {
        return Err(Error::Data("csv has no feature columns besides the target".into()));
    }

    TabularDataset::new(names, columns, labels, task)
}

/// Task selector as it appears on the command line (class count not yet known).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    Binary,
    Multiclass,
    Regression,
}

impl std::str::FromStr for TaskKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<TaskKind> {
        match s {
            "binary" => Ok(TaskKind::Binary),
            "multiclass" => Ok(TaskKind::Multiclass),
            "regression" => Ok(TaskKind::Regression),
            other => Err(Error::Usage(format!(
                "unknown task '{other}'; expected binary, multiclass or regression"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_mixed_columns_and_detects_types() {
        let f = write_csv("a,b,y\n1.5,red,0\n2.5,blue,1\n3.0,red,1\n");
        let ds = load_csv(f.path(), "y", TaskKind::Binary, &[]).unwrap();
        assert_eq!(ds.n_features(), 2);
        assert!(matches!(ds.columns[0], Column::Numeric(_)));
        assert!(matches!(ds.columns[1], Column::Categorical(_)));
        assert_eq!(ds.labels, vec![0.0, 1.0, 1.0]);
        assert_eq!(ds.task, Task::Binary);
    }

    #[test]
    fn force_categorical_overrides_detection() {
        let f = write_csv("a,y\n1,0\n2,1\n");
        let ds = load_csv(f.path(), "y", TaskKind::Binary, &["a".to_string()]).unwrap();
        assert!(ds.columns[0].is_categorical());
    }

    #[test]
    fn missing_cell_is_an_error_naming_row_and_column() {
        let f = write_csv("a,b,y\n1,x,0\n2,,1\n");
        let err = load_csv(f.path(), "y", TaskKind::Binary, &[]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 3") && msg.contains("'b'"), "{msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn missing_target_lists_columns() {
        let f = write_csv("a,b,y\n1,2,0\n");
        let err = load_csv(f.path(), "z", TaskKind::Binary, &[]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("a, b, y"), "{msg}");
    }

    #[test]
    fn multiclass_labels_map_to_sorted_class_indices() {
        let f = write_csv("a,y\n1,cat\n2,ant\n3,bee\n4,cat\n");
        let ds = load_csv(f.path(), "y", TaskKind::Multiclass, &[]).unwrap();
        assert_eq!(ds.task, Task::Multiclass(3));
        // ant=0, bee=1, cat=2
        assert_eq!(ds.labels, vec![2.0, 0.0, 1.0, 2.0]);
    }
}
