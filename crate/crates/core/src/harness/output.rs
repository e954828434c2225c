//! Result records and their CSV / JSON-lines serialisation.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use super::config::Format;
use crate::error::{Error, Result};

/// Bumped whenever a column is added, removed or renamed.
pub const SCHEMA_VERSION: i64 = 1;

/// Column order of the CSV output. JSON lines use the same names.
pub const HEADER: &[&str] = &[
    "schema",
    "version",
    "config_hash",
    "seed",
    "mode",
    "point",
    "row",
    "terminal",
    "status",
    "reason",
    "ensemble",
    "rho",
    "lambda",
    "sigma2",
    "snr_db",
    "mu_c",
    "mu_0",
    "mu_j",
    "regularizer",
    "weight",
    "reg_p",
    "reg_q",
    "phi",
    "alpha",
    "bound",
    "d",
    "d_std_error",
    "d_rs",
    "rel_gap",
    "q",
    "chi",
    "tau",
    "xi2",
    "iterations",
    "residual",
    "converged",
    "n",
    "trials",
    "failed_trials",
    "objective",
    "threshold",
    "in_region",
    "frontier",
    "evaluations",
    "x",
    "cdf",
    "cdf_law",
    "eig_mean",
    "eig_second_moment",
    "law_mean",
    "law_second_moment",
    "ks_distance",
];

#[derive(Clone, Debug, PartialEq)]
pub enum Field {
    Int(i64),
    Float(f64),
    Bool(bool),
    Str(String),
}

impl Field {
    fn csv_cell(&self) -> String {
        match self {
            Field::Int(i) => i.to_string(),
            Field::Float(x) => format!("{x:?}"),
            Field::Bool(b) => b.to_string(),
            Field::Str(s) => s.clone(),
        }
    }

    fn json(&self) -> serde_json::Value {
        match self {
            Field::Int(i) => (*i).into(),
            Field::Float(x) if x.is_finite() => serde_json::Number::from_f64(*x).map_or(serde_json::Value::Null, Into::into),
            Field::Float(x) => format!("{x:?}").into(),
            Field::Bool(b) => (*b).into(),
            Field::Str(s) => s.clone().into(),
        }
    }
}

impl From<f64> for Field {
    fn from(x: f64) -> Self {
        Field::Float(x)
    }
}
impl From<i64> for Field {
    fn from(x: i64) -> Self {
        Field::Int(x)
    }
}
impl From<usize> for Field {
    fn from(x: usize) -> Self {
        Field::Int(x as i64)
    }
}
impl From<bool> for Field {
    fn from(x: bool) -> Self {
        Field::Bool(x)
    }
}
impl From<&str> for Field {
    fn from(x: &str) -> Self {
        Field::Str(x.to_string())
    }
}
impl From<String> for Field {
    fn from(x: String) -> Self {
        Field::Str(x)
    }
}

/// One output row. Keys are drawn from [`HEADER`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResultRecord {
    fields: BTreeMap<&'static str, Field>,
}

impl ResultRecord {
    pub fn new() -> Self {
        Self::default()
    }

    /// Set a column. Panics on a name outside [`HEADER`].
    pub fn set(&mut self, key: &'static str, value: impl Into<Field>) -> &mut Self {
        assert!(HEADER.contains(&key), "unknown result column `{key}`");
        self.fields.insert(key, value.into());
        self
    }

    pub fn set_opt(&mut self, key: &'static str, value: Option<impl Into<Field>>) -> &mut Self {
        if let Some(v) = value {
            self.set(key, v);
        }
        self
    }

    pub fn get(&self, key: &str) -> Option<&Field> {
        self.fields.get(key)
    }

    pub fn float(&self, key: &str) -> Option<f64> {
        match self.fields.get(key)? {
            Field::Float(x) => Some(*x),
            Field::Int(i) => Some(*i as f64),
            _ => None,
        }
    }

    pub fn int(&self, key: &str) -> Option<i64> {
        match self.fields.get(key)? {
            Field::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn bool(&self, key: &str) -> Option<bool> {
        match self.fields.get(key)? {
            Field::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn str(&self, key: &str) -> Option<&str> {
        match self.fields.get(key)? {
            Field::Str(s) => Some(s),
            _ => None,
        }
    }
}

/// Serialise records; identical records give identical bytes.
pub fn render_records(records: &[ResultRecord], format: Format) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(HEADER).map_err(csv_error)?;
            for r in records {
                w.write_record(HEADER.iter().map(|k| r.fields.get(k).map(Field::csv_cell).unwrap_or_default()))
                    .map_err(csv_error)?;
            }
            w.flush()?;
        }
        Format::Json => {
            for r in records {
                let obj: serde_json::Map<String, serde_json::Value> =
                    r.fields.iter().map(|(k, v)| (k.to_string(), v.json())).collect();
                serde_json::to_writer(&mut out, &obj).map_err(|e| Error::Io(e.into()))?;
                out.push(b'\n');
            }
        }
    }
    Ok(out)
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Write `records` to `path` through a temporary file and an atomic rename.
pub fn write_records(records: &[ResultRecord], path: &Path, format: Format) -> Result<()> {
    atomic_write(path, &render_records(records, format)?)
}

pub(crate) fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}
