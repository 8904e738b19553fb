//! CSV ingestion and export of long-format datasets.
//!
//! One row per observation with columns `subject_id`, `y`, the declared
//! covariates and the group-by columns. Rows of a subject need not be
//! contiguous; subjects keep the order of their first row. An intercept is
//! always prepended to the covariates.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, SubjectBlock};

pub const SUBJECT_COLUMN: &str = "subject_id";
pub const RESPONSE_COLUMN: &str = "y";
pub const INTERCEPT: &str = "(Intercept)";

/// Which CSV columns feed the model.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMapping {
    /// Numeric covariate columns, in model order (intercept excluded).
    pub covariates: Vec<String>,
    /// Columns whose level combinations define the groups. Empty means one
    /// group holding every observation.
    pub group_by: Vec<String>,
}

impl ColumnMapping {
    pub fn new(covariates: &[&str], group_by: &[&str]) -> Self {
        Self {
            covariates: covariates.iter().map(|s| s.to_string()).collect(),
            group_by: group_by.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Prefixes an I/O error with the path it concerns.
pub(crate) fn io_at(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn parse_error(row: usize, column: &str, message: impl Into<String>) -> Error {
    Error::Parse { row, column: column.to_string(), message: message.into() }
}

/// Reads a dataset from `path`; see [`read_dataset_from`].
pub fn read_dataset(path: impl AsRef<Path>, mapping: &ColumnMapping) -> Result<Dataset> {
    let file = std::fs::File::open(path.as_ref()).map_err(|e| io_at(path.as_ref(), e))?;
    read_dataset_from(file, mapping)
}

/// Parses CSV from `reader`. Row numbers in errors are file line numbers,
/// the header being line 1.
pub fn read_dataset_from(reader: impl Read, mapping: &ColumnMapping) -> Result<Dataset> {
    let mut csv = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = csv.headers()?.clone();
    if header.is_empty() || header.iter().all(str::is_empty) {
        return Err(parse_error(1, "", "empty file: a header row is required"));
    }
    let position: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h.trim(), i)).collect();
    let column = |name: &str| -> Result<usize> {
        position
            .get(name)
            .copied()
            .ok_or_else(|| parse_error(1, name, "column not found in header"))
    };
    let subject_col = column(SUBJECT_COLUMN)?;
    let y_col = column(RESPONSE_COLUMN)?;
    let cov_cols = mapping.covariates.iter().map(|c| column(c)).collect::<Result<Vec<_>>>()?;
    let group_cols = mapping.group_by.iter().map(|c| column(c)).collect::<Result<Vec<_>>>()?;

    struct Obs {
        subject: usize,
        y: f64,
        row: Vec<f64>,
        levels: Vec<String>,
    }
    let mut subject_ids: Vec<String> = Vec::new();
    let mut subject_of: HashMap<String, usize> = HashMap::new();
    let mut obs = Vec::new();
    for record in csv.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let cell = |col: usize, name: &str| -> Result<&str> {
            record
                .get(col)
                .map(str::trim)
                .ok_or_else(|| parse_error(line, name, "missing cell"))
        };
        let number = |col: usize, name: &str| -> Result<f64> {
            let raw = cell(col, name)?;
            let v: f64 = raw
                .parse()
                .map_err(|_| parse_error(line, name, format!("expected a number, found `{raw}`")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(parse_error(line, name, format!("non-finite value `{raw}`")))
            }
        };
        let id = cell(subject_col, SUBJECT_COLUMN)?;
        if id.is_empty() {
            return Err(parse_error(line, SUBJECT_COLUMN, "empty subject id"));
        }
        let subject = *subject_of.entry(id.to_string()).or_insert_with(|| {
            subject_ids.push(id.to_string());
            subject_ids.len() - 1
        });
        let mut row = Vec::with_capacity(cov_cols.len() + 1);
        row.push(1.0);
        for (&c, name) in cov_cols.iter().zip(&mapping.covariates) {
            row.push(number(c, name)?);
        }
        let levels = group_cols
            .iter()
            .zip(&mapping.group_by)
            .map(|(&c, name)| cell(c, name).map(str::to_string))
            .collect::<Result<Vec<_>>>()?;
        obs.push(Obs { subject, y: number(y_col, RESPONSE_COLUMN)?, row, levels });
    }
    if obs.is_empty() {
        return Err(parse_error(1, "", "no data rows after the header"));
    }

    // Groups: the observed combinations of levels, ordered by the sorted
    // levels of each column in turn.
    let combos: BTreeSet<Vec<LevelKey>> = obs.iter().map(|o| o.levels.iter().map(|l| LevelKey::new(l)).collect()).collect();
    let combos: Vec<Vec<LevelKey>> = combos.into_iter().collect();
    let group_of: BTreeMap<&[LevelKey], usize> = combos.iter().enumerate().map(|(g, c)| (c.as_slice(), g)).collect();
    let labels: Vec<String> = combos.iter().map(|c| group_label(&mapping.group_by, c)).collect();

    let mut blocks: Vec<(Vec<f64>, Vec<Vec<f64>>, Vec<usize>)> = vec![Default::default(); subject_ids.len()];
    for o in &obs {
        let key: Vec<LevelKey> = o.levels.iter().map(|l| LevelKey::new(l)).collect();
        let b = &mut blocks[o.subject];
        b.0.push(o.y);
        b.1.push(o.row.clone());
        b.2.push(group_of[key.as_slice()]);
    }
    let subjects = subject_ids
        .into_iter()
        .zip(blocks)
        .map(|(id, (y, rows, groups))| SubjectBlock::new(id, y, rows, groups))
        .collect::<Result<Vec<_>>>()?;
    let mut names = vec![INTERCEPT.to_string()];
    names.extend(mapping.covariates.iter().cloned());
    Dataset::new(subjects, labels, names)
}

/// A group level that sorts numerically when it parses as a number.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum LevelKey {
    Number(OrderedLevel),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct OrderedLevel {
    /// Total-order bits of the value, then the original text.
    bits: i64,
    text: String,
}

impl LevelKey {
    fn new(s: &str) -> Self {
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() => {
                let b = v.to_bits() as i64;
                let bits = b ^ (((b >> 63) as u64) >> 1) as i64;
                LevelKey::Number(OrderedLevel { bits, text: s.to_string() })
            }
            _ => LevelKey::Text(s.to_string()),
        }
    }

    fn text(&self) -> &str {
        match self {
            LevelKey::Number(n) => &n.text,
            LevelKey::Text(t) => t,
        }
    }
}

/// `"all"` without group columns, the bare level for one column, and
/// `{column}{level}` joined by `_` otherwise (e.g. `U1_t0`).
fn group_label(columns: &[String], levels: &[LevelKey]) -> String {
    match levels {
        [] => "all".into(),
        [one] => one.text().to_string(),
        _ => columns
            .iter()
            .zip(levels)
            .map(|(c, l)| format!("{c}{}", l.text()))
            .collect::<Vec<_>>()
            .join("_"),
    }
}

/// Writes `data` in the long format read by [`read_dataset`]: subject id,
/// response, every non-intercept covariate and a `group` column holding
/// the group label. Numbers are written in shortest round-trip form.
pub fn write_dataset(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let file = std::fs::File::create(path.as_ref()).map_err(|e| io_at(path.as_ref(), e))?;
    write_dataset_to(std::io::BufWriter::new(file), data)
}

pub fn write_dataset_to(out: impl Write, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let keep: Vec<usize> = data
        .covariate_names()
        .iter()
        .enumerate()
        .filter(|(_, n)| n.as_str() != INTERCEPT)
        .map(|(k, _)| k)
        .collect();
    let mut header = vec![SUBJECT_COLUMN.to_string(), RESPONSE_COLUMN.to_string()];
    header.extend(keep.iter().map(|&k| data.covariate_names()[k].clone()));
    header.push("group".into());
    w.write_record(&header)?;
    for s in data.subjects() {
        for j in 0..s.n_obs() {
            let row = s.row(j);
            let mut rec = vec![s.id.clone(), s.y[j].to_string()];
            rec.extend(keep.iter().map(|&k| row[k].to_string()));
            rec.push(data.group_labels()[s.groups[j]].clone());
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}
