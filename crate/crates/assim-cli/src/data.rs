//! Observation and truth files: CSV with a `step` column followed by
//! `y_1..y_k` (observations) or `v_1..v_d` (truth).

use std::io::Write;
use std::path::Path;

use assim::DMatrix;

use crate::error::CliError;

fn data_error(path: &Path, message: impl Into<String>) -> CliError {
    CliError::Data {
        path: path.display().to_string(),
        message: message.into(),
    }
}

/// Reads a table whose value columns are `{prefix}_1..`. Returns the step
/// column and the values, one row per step.
pub fn read_table(path: &Path, prefix: &str) -> Result<(Vec<u64>, DMatrix<f64>), CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| data_error(path, e.to_string()))?;
    let headers = reader.headers().map_err(|e| data_error(path, e.to_string()))?.clone();
    if headers.get(0) != Some("step") {
        return Err(data_error(path, "first column must be `step`"));
    }
    let width = headers.len() - 1;
    if width == 0 {
        return Err(data_error(path, format!("no `{prefix}_i` columns")));
    }
    for (i, h) in headers.iter().skip(1).enumerate() {
        if h != format!("{prefix}_{}", i + 1) {
            return Err(data_error(path, format!("column {} is `{h}`, expected `{prefix}_{}`", i + 2, i + 1)));
        }
    }
    let mut steps = Vec::new();
    let mut values = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| data_error(path, e.to_string()))?;
        let at = |col: usize| format!("row {} column {}", line + 1, col + 1);
        steps.push(record[0].parse::<u64>().map_err(|e| data_error(path, format!("{}: {e}", at(0))))?);
        for c in 1..=width {
            values.push(record[c].parse::<f64>().map_err(|e| data_error(path, format!("{}: {e}", at(c))))?);
        }
    }
    Ok((steps.clone(), DMatrix::from_row_slice(steps.len(), width, &values)))
}

/// Writes `values` with steps `first_step, first_step + 1, …`.
pub fn write_table(out: &mut dyn Write, prefix: &str, first_step: u64, values: &DMatrix<f64>) -> std::io::Result<()> {
    let mut header = vec!["step".to_string()];
    header.extend((1..=values.ncols()).map(|i| format!("{prefix}_{i}")));
    writeln!(out, "{}", header.join(","))?;
    for (r, row) in values.row_iter().enumerate() {
        let mut fields = vec![(first_step + r as u64).to_string()];
        fields.extend(row.iter().map(|x| format!("{x:.16e}")));
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}
