//! CSV files: measurement reports, node truth and estimated fields.
//!
//! Floats are written as `{:.16e}`, 17 significant digits, so every value
//! reads back bit for bit.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rssfield::bounds::HcrbReport;
use rssfield::gp::FieldPosterior;
use rssfield::{Grid, MeasurementSnapshot, Position, SensorReport};

use crate::error::{CliError, Result};

pub const MEASUREMENT_HEADER: [&str; 5] = ["t", "sensor_id", "x_hat_m", "y_hat_m", "rss_dbm"];
pub const TRUTH_HEADER: [&str; 4] = ["node_id", "x_m", "y_m", "rss_dbm"];
pub const FIELD_HEADER: [&str; 5] = ["node_id", "x_m", "y_m", "post_mean_dbm", "post_var_db2"];
pub const HCRB_COLUMN: &str = "hcrb_db2";

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthRow {
    pub node_id: usize,
    pub position: Position,
    pub rss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldRow {
    pub node_id: usize,
    pub position: Position,
    pub mean: f64,
    pub variance: f64,
    pub hcrb: Option<f64>,
}

/// Buffered file writer that reports failures with the path.
pub struct TextFile {
    path: PathBuf,
    out: BufWriter<File>,
}

impl TextFile {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        let f = File::create(path).map_err(|e| CliError::io(path, e))?;
        Ok(Self { path: path.to_path_buf(), out: BufWriter::new(f) })
    }

    pub fn line(&mut self, fields: &[String]) -> Result<()> {
        let mut s = fields.join(",");
        s.push('\n');
        self.out.write_all(s.as_bytes()).map_err(|e| CliError::io(&self.path, e))
    }

    pub fn header(&mut self, names: &[&str]) -> Result<()> {
        let v: Vec<String> = names.iter().map(|s| s.to_string()).collect();
        self.line(&v)
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| CliError::io(&self.path, e))
    }
}

struct Table {
    header: Vec<String>,
    rows: Vec<csv::StringRecord>,
}

fn read_table(path: &Path) -> Result<Table> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file);
    let bad = |row: usize, message: String| CliError::BadRow { path: path.to_path_buf(), row, message };
    let header = rdr.headers().map_err(|e| bad(0, format!("unreadable header: {e}")))?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        rows.push(rec.map_err(|e| bad(i + 1, e.to_string()))?);
    }
    Ok(Table { header, rows })
}

fn check_header(path: &Path, got: &[String], want: &[&str]) -> Result<()> {
    if got.len() != want.len() || got.iter().zip(want).any(|(a, b)| a != b) {
        return Err(CliError::BadRow {
            path: path.to_path_buf(),
            row: 0,
            message: format!("header must be `{}`, got `{}`", want.join(","), got.join(",")),
        });
    }
    Ok(())
}

struct RowParser<'a> {
    path: &'a Path,
    row: usize,
    rec: &'a csv::StringRecord,
    names: &'a [String],
}

impl RowParser<'_> {
    fn err(&self, message: String) -> CliError {
        CliError::BadRow { path: self.path.to_path_buf(), row: self.row, message }
    }

    fn f64(&self, col: usize) -> Result<f64> {
        let s = self.rec.get(col).ok_or_else(|| self.err(format!("missing column {}", self.names[col])))?;
        let v: f64 = s.parse().map_err(|_| self.err(format!("{} = `{s}` is not a number", self.names[col])))?;
        if !v.is_finite() {
            return Err(self.err(format!("{} = `{s}` is not finite", self.names[col])));
        }
        Ok(v)
    }

    fn u64(&self, col: usize) -> Result<u64> {
        let s = self.rec.get(col).ok_or_else(|| self.err(format!("missing column {}", self.names[col])))?;
        s.parse().map_err(|_| self.err(format!("{} = `{s}` is not a non-negative integer", self.names[col])))
    }

    fn width(&self, n: usize) -> Result<()> {
        if self.rec.len() != n {
            return Err(self.err(format!("expected {n} fields, found {}", self.rec.len())));
        }
        Ok(())
    }
}

fn parse_rows<T>(path: &Path, table: &Table, width: usize, mut f: impl FnMut(&RowParser) -> Result<T>) -> Result<Vec<T>> {
    table
        .rows
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            let p = RowParser { path, row: i + 1, rec, names: &table.header };
            p.width(width)?;
            f(&p)
        })
        .collect()
}

/// Raw measurement rows in file order, as `(t, report)`.
pub fn read_measurement_rows(path: &Path) -> Result<Vec<(u64, SensorReport)>> {
    let table = read_table(path)?;
    check_header(path, &table.header, &MEASUREMENT_HEADER)?;
    parse_rows(path, &table, 5, |p| {
        Ok((p.u64(0)?, SensorReport { sensor_id: p.u64(1)?, position: Position::new(p.f64(2)?, p.f64(3)?), rss: p.f64(4)? }))
    })
}

/// Measurement file grouped into snapshots by ascending `t`, rows in file order.
pub fn read_measurements(path: &Path) -> Result<Vec<MeasurementSnapshot>> {
    let mut by_t: BTreeMap<u64, Vec<SensorReport>> = BTreeMap::new();
    for (t, r) in read_measurement_rows(path)? {
        by_t.entry(t).or_default().push(r);
    }
    Ok(by_t.into_iter().map(|(t, sensors)| MeasurementSnapshot { t, sensors }).collect())
}

pub fn write_measurements(path: &Path, snapshots: &[MeasurementSnapshot]) -> Result<()> {
    let mut f = TextFile::create(path)?;
    f.header(&MEASUREMENT_HEADER)?;
    for s in snapshots {
        for r in &s.sensors {
            f.line(&[s.t.to_string(), r.sensor_id.to_string(), fmt_f64(r.position.x), fmt_f64(r.position.y), fmt_f64(r.rss)])?;
        }
    }
    f.finish()
}

pub fn read_truth(path: &Path) -> Result<Vec<TruthRow>> {
    let table = read_table(path)?;
    check_header(path, &table.header, &TRUTH_HEADER)?;
    parse_rows(path, &table, 4, |p| {
        Ok(TruthRow { node_id: p.u64(0)? as usize, position: Position::new(p.f64(1)?, p.f64(2)?), rss: p.f64(3)? })
    })
}

pub fn write_truth(path: &Path, rows: &[TruthRow]) -> Result<()> {
    let mut f = TextFile::create(path)?;
    f.header(&TRUTH_HEADER)?;
    for r in rows {
        f.line(&[r.node_id.to_string(), fmt_f64(r.position.x), fmt_f64(r.position.y), fmt_f64(r.rss)])?;
    }
    f.finish()
}

/// Truth rows for every node of `grid`, in node order.
pub fn truth_rows(grid: &Grid, field: &[f64]) -> Vec<TruthRow> {
    grid.nodes().iter().zip(field).enumerate().map(|(i, (&p, &v))| TruthRow { node_id: i, position: p, rss: v }).collect()
}

/// Grid of the distinct nodes in a truth or field file, ordered by node id.
/// Rows that repeat a node id must repeat its coordinates.
pub fn grid_from_rows(path: &Path, rows: impl IntoIterator<Item = (usize, Position)>) -> Result<Grid> {
    let mut nodes: BTreeMap<usize, Position> = BTreeMap::new();
    for (i, (id, p)) in rows.into_iter().enumerate() {
        if let Some(prev) = nodes.insert(id, p) {
            if prev != p {
                return Err(CliError::BadRow {
                    path: path.to_path_buf(),
                    row: i + 1,
                    message: format!("node {id} appears with two different positions"),
                });
            }
        }
    }
    if nodes.keys().enumerate().any(|(i, &id)| i != id) {
        return Err(CliError::BadRow { path: path.to_path_buf(), row: 0, message: "node ids must be 0..M without gaps".into() });
    }
    Grid::new(nodes.into_values().collect()).map_err(|e| CliError::BadRow { path: path.to_path_buf(), row: 0, message: e.to_string() })
}

/// Writes the per-node field. The bound column is present iff `bounds` is.
pub fn write_field(path: &Path, grid: &Grid, mean: &[f64], variance: &[f64], bounds: Option<&[f64]>) -> Result<()> {
    let m = grid.len();
    if mean.len() != m || variance.len() != m || bounds.is_some_and(|b| b.len() != m) {
        return Err(rssfield::Error::LengthMismatch { expected: m, got: mean.len() }.into());
    }
    let mut f = TextFile::create(path)?;
    let mut header = FIELD_HEADER.to_vec();
    if bounds.is_some() {
        header.push(HCRB_COLUMN);
    }
    f.header(&header)?;
    for (i, p) in grid.nodes().iter().enumerate() {
        let mut row = vec![i.to_string(), fmt_f64(p.x), fmt_f64(p.y), fmt_f64(mean[i]), fmt_f64(variance[i])];
        if let Some(b) = bounds {
            row.push(fmt_f64(b[i]));
        }
        f.line(&row)?;
    }
    f.finish()
}

pub fn emit_field(path: &Path, grid: &Grid, posterior: &FieldPosterior, bounds: Option<&[HcrbReport]>) -> Result<()> {
    let b: Option<Vec<f64>> = bounds.map(|r| r.iter().map(|x| x.bound).collect());
    write_field(path, grid, &posterior.mean, &posterior.variances(), b.as_deref())
}

pub fn read_field(path: &Path) -> Result<Vec<FieldRow>> {
    let table = read_table(path)?;
    let with_bound = table.header.len() == FIELD_HEADER.len() + 1;
    if with_bound {
        let mut want = FIELD_HEADER.to_vec();
        want.push(HCRB_COLUMN);
        check_header(path, &table.header, &want)?;
    } else {
        check_header(path, &table.header, &FIELD_HEADER)?;
    }
    parse_rows(path, &table, table.header.len(), |p| {
        Ok(FieldRow {
            node_id: p.u64(0)? as usize,
            position: Position::new(p.f64(1)?, p.f64(2)?),
            mean: p.f64(3)?,
            variance: p.f64(4)?,
            hcrb: if with_bound { Some(p.f64(5)?) } else { None },
        })
    })
}

/// MSE of a field against truth rows joined on node id. Several truth rows
/// may share a node.
pub fn field_mse(field: &[FieldRow], truth: &[TruthRow]) -> Result<f64> {
    let by_id: BTreeMap<usize, &FieldRow> = field.iter().map(|r| (r.node_id, r)).collect();
    let mut est = Vec::with_capacity(truth.len());
    for t in truth {
        let f = by_id.get(&t.node_id).ok_or_else(|| CliError::Config(format!("truth node {} is not in the field", t.node_id)))?;
        if f.position.distance_to(&t.position) > 1e-6 {
            return Err(CliError::Config(format!(
                "node {} sits at ({}, {}) in the field but ({}, {}) in the truth",
                t.node_id, f.position.x, f.position.y, t.position.x, t.position.y
            )));
        }
        est.push(f.mean);
    }
    let tv: Vec<f64> = truth.iter().map(|t| t.rss).collect();
    Ok(rssfield::metrics::compute_mse(&est, &tv)?)
}
