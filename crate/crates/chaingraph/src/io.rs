//! Delimited-text formats: long-format panels, dense matrices and edge lists.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use chaingraph_core::{Cell, Matrix, OrdinalSeriesDataset, VarKind};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

/// Largest integer code for which an all-integer variable is read as ordinal.
pub const MAX_INFERRED_CODE: f64 = 20.0;

/// Per-variable kind override in a [`Schema`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KindOverride {
    Continuous,
    Ordinal,
}

/// Column roles and kind overrides for [`load_dataset`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schema {
    pub sample: String,
    pub time: String,
    pub variable: String,
    pub value: String,
    pub kinds: BTreeMap<String, KindOverride>,
    /// Category counts for ordinal variables, when larger than `max code + 1`.
    pub categories: BTreeMap<String, u32>,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            sample: "sample_id".into(),
            time: "time_index".into(),
            variable: "variable_id".into(),
            value: "value".into(),
            kinds: BTreeMap::new(),
            categories: BTreeMap::new(),
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> AppError {
    AppError::Io { path: path.to_path_buf(), source }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> AppError {
    AppError::Parse { path: path.to_path_buf(), line, msg: msg.into() }
}

fn sniff_delimiter(path: &Path) -> Result<u8> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut first = String::new();
    BufReader::new(file).read_line(&mut first).map_err(|e| io_err(path, e))?;
    Ok(if first.contains('\t') { b'\t' } else { b',' })
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let delim = sniff_delimiter(path)?;
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    Ok(csv::ReaderBuilder::new().delimiter(delim).trim(csv::Trim::All).from_reader(file))
}

fn csv_err(path: &Path, e: csv::Error) -> AppError {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => io_err(path, source),
        other => parse_err(path, line, format!("{other:?}")),
    }
}

fn is_missing(field: &str) -> bool {
    field.is_empty() || field.eq_ignore_ascii_case("na")
}

/// Reads a long-format panel (`sample_id, time_index, variable_id, value`).
///
/// Samples and variables keep their order of first appearance, time indices
/// must form a contiguous integer range, and absent rows become missing
/// cells. A variable whose observed values are all integers in
/// `0..=MAX_INFERRED_CODE` is ordinal with `max + 1` categories unless the
/// schema says otherwise.
pub fn load_dataset(path: &Path, schema: &Schema) -> Result<OrdinalSeriesDataset> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| parse_err(path, 1, format!("missing column `{name}`")))
    };
    let (cs, ct, cv, cx) = (col(&schema.sample)?, col(&schema.time)?, col(&schema.variable)?, col(&schema.value)?);

    let mut samples: Vec<String> = Vec::new();
    let mut sample_idx: HashMap<String, usize> = HashMap::new();
    let mut vars: Vec<String> = Vec::new();
    let mut var_idx: HashMap<String, usize> = HashMap::new();
    let mut entries: BTreeMap<(usize, i64, usize), Option<f64>> = BTreeMap::new();

    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let field = |c: usize| rec.get(c).ok_or_else(|| parse_err(path, line, "short row"));
        let s = field(cs)?.to_string();
        let v = field(cv)?.to_string();
        let t: i64 = field(ct)?.parse().map_err(|_| {
            parse_err(path, line, format!("time index `{}` is not an integer", field(ct).unwrap_or("")))
        })?;
        let raw = field(cx)?;
        let value = if is_missing(raw) {
            None
        } else {
            let x: f64 = raw.parse().map_err(|_| parse_err(path, line, format!("value `{raw}` is not a number")))?;
            if !x.is_finite() {
                return Err(parse_err(path, line, format!("value `{raw}` is not finite")));
            }
            Some(x)
        };
        let si = *sample_idx.entry(s.clone()).or_insert_with(|| {
            samples.push(s);
            samples.len() - 1
        });
        let vi = *var_idx.entry(v.clone()).or_insert_with(|| {
            vars.push(v);
            vars.len() - 1
        });
        if entries.insert((si, t, vi), value).is_some() {
            return Err(parse_err(
                path,
                line,
                format!("duplicate entry for sample `{}`, time {t}, variable `{}`", samples[si], vars[vi]),
            ));
        }
    }
    if entries.is_empty() {
        return Err(parse_err(path, 1, "no data rows"));
    }

    let mut times: Vec<i64> = entries.keys().map(|&(_, t, _)| t).collect();
    times.sort_unstable();
    times.dedup();
    if let Some(w) = times.windows(2).find(|w| w[1] != w[0] + 1) {
        return Err(parse_err(path, 0, format!("time indices are not contiguous: {} is followed by {}", w[0], w[1])));
    }
    let t0 = times[0];
    let (n, tt, p) = (samples.len(), times.len(), vars.len());

    let mut raw = vec![None; n * tt * p];
    for (&(i, t, j), &v) in &entries {
        raw[(i * tt + (t - t0) as usize) * p + j] = v;
    }

    let mut kinds = Vec::with_capacity(p);
    for (j, name) in vars.iter().enumerate() {
        let observed: Vec<f64> = raw.iter().skip(j).step_by(p).filter_map(|v| *v).collect();
        let integral = observed.iter().all(|x| x.fract() == 0.0 && (0.0..=MAX_INFERRED_CODE).contains(x));
        let kind = match schema.kinds.get(name) {
            Some(KindOverride::Continuous) => KindOverride::Continuous,
            Some(KindOverride::Ordinal) if !integral => {
                return Err(AppError::Invalid(format!(
                    "variable `{name}` is declared ordinal but has values that are not codes in 0..={MAX_INFERRED_CODE}"
                )))
            }
            Some(KindOverride::Ordinal) => KindOverride::Ordinal,
            None if integral && !observed.is_empty() => KindOverride::Ordinal,
            None => KindOverride::Continuous,
        };
        kinds.push(match kind {
            KindOverride::Continuous => VarKind::Continuous,
            KindOverride::Ordinal => {
                let max = observed.iter().fold(0.0_f64, |m, &x| m.max(x)) as u32;
                let categories = schema.categories.get(name).copied().unwrap_or(0).max(max + 1);
                VarKind::Ordinal { categories }
            }
        });
    }

    let values = raw
        .iter()
        .enumerate()
        .map(|(idx, v)| match (v, kinds[idx % p]) {
            (None, _) => Cell::Missing,
            (Some(x), VarKind::Ordinal { .. }) => Cell::Ordinal(*x as u32),
            (Some(x), VarKind::Continuous) => Cell::Continuous(*x),
        })
        .collect();
    Ok(OrdinalSeriesDataset::new(n, tt, p, values, kinds, Some(vars))?)
}

fn create(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn finish(path: &Path, mut w: csv::Writer<File>) -> Result<()> {
    w.flush().map_err(|e| io_err(path, e))
}

/// Full-precision (17 significant digits) rendering used by every writer.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes a panel in long format; samples are numbered from 1, times from 1.
pub fn write_dataset(path: &Path, ds: &OrdinalSeriesDataset) -> Result<()> {
    let mut w = create(path)?;
    let wr = |w: &mut csv::Writer<File>, rec: &[&str]| w.write_record(rec).map_err(|e| csv_err(path, e));
    wr(&mut w, &["sample_id", "time_index", "variable_id", "value"])?;
    for i in 0..ds.n() {
        let si = (i + 1).to_string();
        for t in 0..ds.time_points() {
            let ti = (t + 1).to_string();
            for (j, name) in ds.names().iter().enumerate() {
                let value = match ds.get(i, t, j) {
                    Cell::Ordinal(k) => k.to_string(),
                    Cell::Continuous(x) => fmt_f64(x),
                    Cell::Missing => String::new(),
                };
                wr(&mut w, &[&si, &ti, name, &value])?;
            }
        }
    }
    finish(path, w)
}

/// Dense matrix with a header row of variable names.
pub fn write_matrix(path: &Path, m: &Matrix, names: &[String]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(names).map_err(|e| csv_err(path, e))?;
    for i in 0..m.rows() {
        w.write_record(m.row(i).iter().map(|&x| fmt_f64(x))).map_err(|e| csv_err(path, e))?;
    }
    finish(path, w)
}

/// Reads a dense square matrix written by [`write_matrix`].
pub fn read_matrix(path: &Path) -> Result<(Matrix, Vec<String>)> {
    let mut rdr = reader(path)?;
    let names: Vec<String> = rdr.headers().map_err(|e| csv_err(path, e))?.iter().map(str::to_string).collect();
    let p = names.len();
    let mut data = Vec::with_capacity(p * p);
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.len() != p {
            return Err(parse_err(path, k + 2, format!("expected {p} columns, found {}", rec.len())));
        }
        for f in rec.iter() {
            data.push(f.parse::<f64>().map_err(|_| parse_err(path, k + 2, format!("`{f}` is not a number")))?);
        }
    }
    if data.len() != p * p {
        return Err(parse_err(path, 0, format!("expected {p} rows, found {}", data.len() / p.max(1))));
    }
    Ok((Matrix::from_row_major(p, p, data), names))
}

/// Undirected edges `j < j'` with nonzero `θ`; with `partial_correlation`
/// the value column is `−θ_jj' / √(θ_jj θ_j'j')`.
pub fn write_undirected_edges(path: &Path, theta: &Matrix, names: &[String], partial_correlation: bool) -> Result<()> {
    let mut w = create(path)?;
    let value_col = if partial_correlation { "partial_correlation" } else { "theta" };
    w.write_record(["node1", "node2", value_col]).map_err(|e| csv_err(path, e))?;
    for a in 0..theta.rows() {
        for b in a + 1..theta.cols() {
            let v = theta[(a, b)];
            if v != 0.0 {
                let v = if partial_correlation { -v / (theta[(a, a)] * theta[(b, b)]).sqrt() } else { v };
                w.write_record([&names[a], &names[b], &fmt_f64(v)]).map_err(|e| csv_err(path, e))?;
            }
        }
    }
    finish(path, w)
}

/// Directed edges: `γ_jl ≠ 0` is an edge from `l` at `t − 1` to `j` at `t`.
pub fn write_directed_edges(path: &Path, gamma: &Matrix, names: &[String]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["source", "target", "gamma"]).map_err(|e| csv_err(path, e))?;
    for l in 0..gamma.cols() {
        for j in 0..gamma.rows() {
            let v = gamma[(j, l)];
            if v != 0.0 {
                w.write_record([&names[l], &names[j], &fmt_f64(v)]).map_err(|e| csv_err(path, e))?;
            }
        }
    }
    finish(path, w)
}

/// Writes `contents` to `path`.
pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    let mut f = File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(contents.as_bytes()).map_err(|e| io_err(path, e))
}

/// Reads a whole text file.
pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| io_err(path, e))
}
