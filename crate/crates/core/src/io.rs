//! Panel ingestion, log-difference preprocessing and result serialization.
//!
//! Panels are stored with rows = time points and columns = component series,
//! whatever orientation the input file used.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde_json::Value;

use crate::error::{domain, Error, Result};

/// A T×N block of observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    data: DMatrix<f64>,
    labels: Option<Vec<String>>,
}

impl Panel {
    pub fn new(data: DMatrix<f64>, labels: Option<Vec<String>>) -> Result<Self> {
        if data.nrows() < 2 {
            return domain(format!("panel needs at least 2 time points, got {}", data.nrows()));
        }
        if data.ncols() < 1 {
            return domain("panel needs at least one series");
        }
        if let Some((i, _)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            let (t, j) = (i % data.nrows(), i / data.nrows());
            return domain(format!("non-finite value at time {t}, series {j}"));
        }
        if let Some(l) = &labels {
            if l.len() != data.ncols() {
                return domain(format!("{} labels for {} series", l.len(), data.ncols()));
            }
        }
        Ok(Self { data, labels })
    }

    /// Build from row-major rows (each row is one time point).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let t = rows.len();
        if t == 0 {
            return Err(Error::EmptyInput);
        }
        let n = rows[0].len();
        for (i, r) in rows.iter().enumerate() {
            if r.len() != n {
                return Err(Error::Ragged { row: i, expected: n, found: r.len() });
            }
        }
        Self::new(DMatrix::from_fn(t, n, |i, j| rows[i][j]), None)
    }

    pub fn t_len(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.n_dim() {
            return domain(format!("{} labels for {} series", labels.len(), self.n_dim()));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn into_data(self) -> DMatrix<f64> {
        self.data
    }

    /// Column-demeaned copy of the data.
    pub fn demeaned(&self) -> DMatrix<f64> {
        let mut y = self.data.clone();
        for mut col in y.column_iter_mut() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
        }
        y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    RowsAreTime,
    RowsAreSeries,
}

impl std::str::FromStr for Orientation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rows_are_time" | "rows-are-time" | "time" => Ok(Self::RowsAreTime),
            "rows_are_series" | "rows-are-series" | "series" => Ok(Self::RowsAreSeries),
            other => Err(Error::Config(format!("unknown orientation '{other}'"))),
        }
    }
}

fn parse_cell(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok()
}

/// Read a comma-separated table of reals.
///
/// The first row is treated as a header of labels when any of its cells
/// fails to parse as a number. Under `RowsAreSeries` the table is transposed
/// and header cells (which then name time points) are discarded.
pub fn read_panel_csv(path: impl AsRef<Path>, orientation: Orientation) -> Result<Panel> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())
        .map_err(csv_to_io)?;

    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(csv_to_io)?;
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        records.push(rec);
    }
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }

    let header: Option<Vec<String>> = if records[0].iter().any(|c| parse_cell(c).is_none()) {
        Some(records[0].iter().map(str::to_owned).collect())
    } else {
        None
    };
    let first_data = usize::from(header.is_some());
    let width = records[0].len();

    let mut rows = Vec::with_capacity(records.len() - first_data);
    for (i, rec) in records.iter().enumerate().skip(first_data) {
        if rec.len() != width {
            return Err(Error::Ragged { row: i, expected: width, found: rec.len() });
        }
        let row = rec
            .iter()
            .enumerate()
            .map(|(j, c)| {
                parse_cell(c).ok_or_else(|| Error::Parse {
                    row: i,
                    col: j,
                    msg: format!("'{c}' is not a number"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }

    let (t, n) = (rows.len(), width);
    match orientation {
        Orientation::RowsAreTime => {
            Panel::new(DMatrix::from_fn(t, n, |i, j| rows[i][j]), header)
        }
        Orientation::RowsAreSeries => Panel::new(DMatrix::from_fn(n, t, |i, j| rows[j][i]), None),
    }
}

fn csv_to_io(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

/// Write a panel as CSV (rows = time). Values use the shortest
/// representation that round-trips exactly.
pub fn write_panel_csv(panel: &Panel, path: impl AsRef<Path>) -> Result<()> {
    write_panel_csv_to(panel, File::create(path.as_ref())?)
}

/// [`write_panel_csv`] into any writer.
pub fn write_panel_csv_to<W: Write>(panel: &Panel, writer: W) -> Result<()> {
    let mut w = BufWriter::new(writer);
    if let Some(labels) = panel.labels() {
        writeln!(w, "{}", labels.join(","))?;
    }
    let d = panel.data();
    for t in 0..d.nrows() {
        let line: Vec<String> = (0..d.ncols()).map(|j| format!("{:?}", d[(t, j)])).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZeroPolicy {
    Error,
    AdjacentMean,
}

impl std::str::FromStr for ZeroPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "error" => Ok(Self::Error),
            "adjacent_mean" | "adjacent-mean" => Ok(Self::AdjacentMean),
            other => Err(Error::Config(format!("unknown zero policy '{other}'"))),
        }
    }
}

/// Log-difference each column: out(t, j) = ln x(t+1, j) − ln x(t, j).
///
/// Under [`ZeroPolicy::AdjacentMean`] each zero is first replaced by the mean
/// of the nearest positive values before and after it in the same column
/// (searching outward one step at a time); if only one side has a positive
/// value it is used alone. Replacement reads original values only.
pub fn log_diff_preprocess(panel: &Panel, zero_policy: ZeroPolicy) -> Result<Panel> {
    let x = panel.data();
    let (t_len, n) = x.shape();
    if t_len < 3 {
        return domain("log-differencing needs at least 3 time points");
    }
    let mut filled = x.clone();
    for j in 0..n {
        let col = x.column(j);
        if let Some(t) = col.iter().position(|&v| v < 0.0) {
            return domain(format!("negative value at time {t}, series {j}"));
        }
        if col.iter().all(|&v| v == 0.0) {
            return domain(format!("series {j} is identically zero"));
        }
        for t in 0..t_len {
            if col[t] != 0.0 {
                continue;
            }
            if zero_policy == ZeroPolicy::Error {
                return domain(format!("zero value at time {t}, series {j}"));
            }
            let before = (0..t).rev().map(|s| col[s]).find(|&v| v > 0.0);
            let after = (t + 1..t_len).map(|s| col[s]).find(|&v| v > 0.0);
            filled[(t, j)] = match (before, after) {
                (Some(a), Some(b)) => 0.5 * (a + b),
                (Some(a), None) | (None, Some(a)) => a,
                (None, None) => unreachable!("column has a positive value"),
            };
        }
    }
    let out = DMatrix::from_fn(t_len - 1, n, |t, j| filled[(t + 1, j)].ln() - filled[(t, j)].ln());
    Panel::new(out, panel.labels().map(<[String]>::to_vec))
}

/// Objects that serialize to the result JSON schema.
pub trait ToResultJson {
    fn to_result_json(&self) -> Value;
}

/// Write a result as UTF-8 JSON with sorted keys. Floats are written in the
/// shortest form that parses back to the identical `f64`.
pub fn write_results_json<R: ToResultJson + ?Sized>(result: &R, path: impl AsRef<Path>) -> Result<()> {
    let text = results_json_string(result)?;
    let mut f = File::create(path.as_ref())?;
    f.write_all(text.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}

pub fn results_json_string<R: ToResultJson + ?Sized>(result: &R) -> Result<String> {
    // serde_json::Map is a BTreeMap without the preserve_order feature, so
    // keys come out sorted.
    Ok(serde_json::to_string_pretty(&result.to_result_json())?)
}

/// Per-factor map keyed by 1-based factor index.
pub(crate) fn factor_map(values: &[f64]) -> Value {
    let map: serde_json::Map<String, Value> = values
        .iter()
        .enumerate()
        .map(|(i, v)| ((i + 1).to_string(), float_value(*v)))
        .collect();
    Value::Object(map)
}

pub(crate) fn float_value(v: f64) -> Value {
    serde_json::Number::from_f64(v).map(Value::Number).unwrap_or(Value::Null)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn reads_rows_as_time() {
        let f = write_tmp("1,2\n3,4\n5,6\n");
        let p = read_panel_csv(f.path(), Orientation::RowsAreTime).unwrap();
        assert_eq!((p.t_len(), p.n_dim()), (3, 2));
        assert_eq!(p.data()[(2, 1)], 6.0);
        assert!(p.labels().is_none());
    }

    #[test]
    fn reads_rows_as_series() {
        let f = write_tmp("1,2\n3,4\n5,6\n");
        let p = read_panel_csv(f.path(), Orientation::RowsAreSeries).unwrap();
        assert_eq!((p.t_len(), p.n_dim()), (2, 3));
        assert_eq!(p.data()[(1, 0)], 2.0);
        assert_eq!(p.data()[(0, 2)], 5.0);
    }

    #[test]
    fn reads_header_labels() {
        let f = write_tmp("a,b\n1,2\n3,4e-1\n");
        let p = read_panel_csv(f.path(), Orientation::RowsAreTime).unwrap();
        assert_eq!((p.t_len(), p.n_dim()), (2, 2));
        assert_eq!(p.labels().unwrap(), ["a", "b"]);
        assert_eq!(p.data()[(1, 1)], 0.4);
    }

    #[test]
    fn ragged_rows_report_row() {
        let f = write_tmp("1,2\n3\n");
        match read_panel_csv(f.path(), Orientation::RowsAreTime) {
            Err(Error::Ragged { row: 1, expected: 2, found: 1 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_cell_reports_coordinates() {
        let f = write_tmp("1,2\n3,x\n");
        match read_panel_csv(f.path(), Orientation::RowsAreTime) {
            Err(Error::Parse { row: 1, col: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_rejected() {
        let f = write_tmp("");
        assert!(matches!(read_panel_csv(f.path(), Orientation::RowsAreTime), Err(Error::EmptyInput)));
    }

    #[test]
    fn panel_rejects_non_finite() {
        let d = DMatrix::from_row_slice(2, 1, &[1.0, f64::NAN]);
        assert!(Panel::new(d, None).is_err());
    }

    fn column(v: &[f64]) -> Panel {
        Panel::new(DMatrix::from_column_slice(v.len(), 1, v), None).unwrap()
    }

    #[test]
    fn log_diff_geometric() {
        let e = std::f64::consts::E;
        let out = log_diff_preprocess(&column(&[1.0, e, e * e]), ZeroPolicy::Error).unwrap();
        assert_eq!(out.t_len(), 2);
        assert!((out.data()[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((out.data()[(1, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn log_diff_adjacent_mean() {
        let out = log_diff_preprocess(&column(&[1.0, 0.0, 4.0]), ZeroPolicy::AdjacentMean).unwrap();
        assert!((out.data()[(0, 0)] - 2.5f64.ln()).abs() < 1e-15);
        assert!((out.data()[(1, 0)] - (4.0f64.ln() - 2.5f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn log_diff_zero_run_searches_outward() {
        let out = log_diff_preprocess(&column(&[2.0, 0.0, 0.0, 6.0]), ZeroPolicy::AdjacentMean).unwrap();
        // both zeros become (2 + 6) / 2
        assert!((out.data()[(0, 0)] - 2.0f64.ln()).abs() < 1e-15);
        assert_eq!(out.data()[(1, 0)], 0.0);
        let edge = log_diff_preprocess(&column(&[0.0, 3.0, 5.0]), ZeroPolicy::AdjacentMean).unwrap();
        assert_eq!(edge.data()[(0, 0)], 0.0);
    }

    #[test]
    fn log_diff_constant_column() {
        let out = log_diff_preprocess(&column(&[7.5; 5]), ZeroPolicy::Error).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn log_diff_errors() {
        assert!(matches!(
            log_diff_preprocess(&column(&[1.0, -1.0, 2.0]), ZeroPolicy::AdjacentMean),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            log_diff_preprocess(&column(&[1.0, 0.0, 2.0]), ZeroPolicy::Error),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            log_diff_preprocess(&column(&[0.0, 0.0, 0.0]), ZeroPolicy::AdjacentMean),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn unwritable_path_is_io_error() {
        struct Empty;
        impl ToResultJson for Empty {
            fn to_result_json(&self) -> Value {
                Value::Null
            }
        }
        let r = write_results_json(&Empty, "/nonexistent-dir/x/y.json");
        assert!(matches!(r, Err(Error::Io(_))));
    }
}
