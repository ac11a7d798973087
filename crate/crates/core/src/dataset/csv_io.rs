//! CSV ingestion.
//!
//! Expected layout: a header row naming a task-id column, a target column and
//! one column per feature; UTF-8, `.` decimal separator. Rows are grouped by
//! task id in order of first appearance.

use super::{DataError, MultiTaskDataset, TaskData};
use nalgebra::{DMatrix, DVector};
use std::collections::HashMap;
use std::path::Path;

/// Column roles for [`load_csv`]. With `feature_columns = None` every column
/// other than task id and target is a feature, in header order.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CsvSchema {
    #[serde(default = "default_task_column")]
    pub task_column: String,
    #[serde(default = "default_target_column")]
    pub target_column: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_columns: Option<Vec<String>>,
}

fn default_task_column() -> String {
    "task_id".into()
}

fn default_target_column() -> String {
    "target".into()
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            task_column: default_task_column(),
            target_column: default_target_column(),
            feature_columns: None,
        }
    }
}

/// Loads a multi-task dataset from a CSV file.
///
/// Rows with missing or non-numeric values are rejected with the offending
/// line number (1-based, counting the header as line 1).
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<MultiTaskDataset, DataError> {
    load_csv_with_ids(path, schema).map(|(ds, _)| ds)
}

/// [`load_csv`] plus the task-id labels, ordered like the dataset's tasks.
pub fn load_csv_with_ids(
    path: impl AsRef<Path>,
    schema: &CsvSchema,
) -> Result<(MultiTaskDataset, Vec<String>), DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path.as_ref())
        .map_err(csv_to_data_error)?;

    let headers = reader.headers().map_err(csv_to_data_error)?.clone();
    let position = |name: &str| headers.iter().position(|h| h == name);

    let task_idx = position(&schema.task_column).ok_or_else(|| {
        DataError::SchemaMismatch(format!(
            "task column '{}' not in header",
            schema.task_column
        ))
    })?;
    let target_idx = position(&schema.target_column).ok_or_else(|| {
        DataError::SchemaMismatch(format!(
            "target column '{}' not in header",
            schema.target_column
        ))
    })?;
    let feature_idx: Vec<usize> = match &schema.feature_columns {
        Some(names) => names
            .iter()
            .map(|n| {
                position(n).ok_or_else(|| {
                    DataError::SchemaMismatch(format!("feature column '{n}' not in header"))
                })
            })
            .collect::<Result<_, _>>()?,
        None => (0..headers.len())
            .filter(|&i| i != task_idx && i != target_idx)
            .collect(),
    };
    if feature_idx.is_empty() {
        return Err(DataError::SchemaMismatch("no feature columns".into()));
    }

    // task id -> insertion slot, keeping first-appearance order
    let mut slot_of: HashMap<String, usize> = HashMap::new();
    let mut ids: Vec<String> = Vec::new();
    let mut rows_per_task: Vec<Vec<f64>> = Vec::new();
    let mut targets_per_task: Vec<Vec<f64>> = Vec::new();

    for (record_no, record) in reader.records().enumerate() {
        let line = record_no + 2;
        let record = record.map_err(|e| DataError::Parse {
            line,
            message: e.to_string(),
        })?;
        let field = |idx: usize| -> Result<&str, DataError> {
            match record.get(idx) {
                Some(s) if !s.is_empty() => Ok(s),
                _ => Err(DataError::Parse {
                    line,
                    message: format!("missing value in column '{}'", &headers[idx]),
                }),
            }
        };
        let numeric = |idx: usize| -> Result<f64, DataError> {
            let raw = field(idx)?;
            let v: f64 = raw.parse().map_err(|_| DataError::Parse {
                line,
                message: format!("non-numeric value '{raw}' in column '{}'", &headers[idx]),
            })?;
            if !v.is_finite() {
                return Err(DataError::Parse {
                    line,
                    message: format!("non-finite value '{raw}' in column '{}'", &headers[idx]),
                });
            }
            Ok(v)
        };

        let task_id = field(task_idx)?.to_string();
        let target = numeric(target_idx)?;
        let slot = *slot_of.entry(task_id.clone()).or_insert_with(|| {
            ids.push(task_id);
            rows_per_task.push(Vec::new());
            targets_per_task.push(Vec::new());
            rows_per_task.len() - 1
        });
        for &idx in &feature_idx {
            rows_per_task[slot].push(numeric(idx)?);
        }
        targets_per_task[slot].push(target);
    }

    if rows_per_task.is_empty() {
        return Err(DataError::EmptyTask("csv contains no data rows".into()));
    }

    let d = feature_idx.len();
    let tasks = rows_per_task
        .into_iter()
        .zip(targets_per_task)
        .map(|(flat, targets)| {
            let m = targets.len();
            TaskData::new(
                DMatrix::from_row_slice(m, d, &flat),
                DVector::from_vec(targets),
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((MultiTaskDataset::new(tasks)?, ids))
}

fn csv_to_data_error(e: csv::Error) -> DataError {
    match e.kind() {
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(io) => DataError::Io(io),
            _ => unreachable!(),
        },
        _ => DataError::Parse {
            line: 0,
            message: e.to_string(),
        },
    }
}

/// Writes a dataset back out in the canonical `task_id,target,f0..` layout.
pub fn write_csv(ds: &MultiTaskDataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let mut writer = csv::Writer::from_path(path.as_ref()).map_err(csv_to_data_error)?;
    let mut header = vec!["task_id".to_string(), "target".to_string()];
    header.extend((0..ds.dim()).map(|j| format!("f{j}")));
    writer.write_record(&header).map_err(csv_to_data_error)?;
    for (t, task) in ds.tasks().iter().enumerate() {
        for i in 0..task.num_samples() {
            let mut row = vec![t.to_string(), format_float(task.targets()[i])];
            row.extend((0..ds.dim()).map(|j| format_float(task.features()[(i, j)])));
            writer.write_record(&row).map_err(csv_to_data_error)?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// `{}` on f64 is the shortest representation that round-trips exactly.
fn format_float(v: f64) -> String {
    format!("{v}")
}
