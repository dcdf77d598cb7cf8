//! Line-delimited model record files: one JSON object per line, shared by
//! the matcher and predictor serializers.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "t", rename_all = "lowercase")]
pub enum Record {
    Header {
        format: String,
        version: u32,
        #[serde(default)]
        meta: serde_json::Value,
    },
    Matrix {
        name: String,
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    },
    Scalar {
        name: String,
        value: f64,
    },
    Vocab {
        name: String,
        items: Vec<String>,
    },
}

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("missing record {0:?}")]
    Missing(String),
    #[error("expected format {expected:?} version {version}, found {found:?}")]
    Format {
        expected: String,
        version: u32,
        found: String,
    },
    #[error("record {name:?} has shape {rows}x{cols} but {len} values")]
    Shape {
        name: String,
        rows: usize,
        cols: usize,
        len: usize,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn write_records<W: Write>(records: &[Record], mut out: W) -> Result<(), RecordError> {
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| RecordError::Parse {
            line: 0,
            message: e.to_string(),
        })?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn read_records<R: BufRead>(input: R) -> Result<Vec<Record>, RecordError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| RecordError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if let Record::Matrix {
            name, rows, cols, data,
        } = &rec
        {
            if rows * cols != data.len() {
                return Err(RecordError::Shape {
                    name: name.clone(),
                    rows: *rows,
                    cols: *cols,
                    len: data.len(),
                });
            }
        }
        out.push(rec);
    }
    Ok(out)
}

/// Keyed access to a parsed record list.
pub struct RecordSet {
    records: Vec<Record>,
}

impl RecordSet {
    pub fn new(records: Vec<Record>, format: &str, version: u32) -> Result<Self, RecordError> {
        match records.first() {
            Some(Record::Header {
                format: f,
                version: v,
                ..
            }) if f == format && *v == version => Ok(RecordSet { records }),
            Some(Record::Header { format: f, .. }) => Err(RecordError::Format {
                expected: format.into(),
                version,
                found: f.clone(),
            }),
            _ => Err(RecordError::Missing("header".into())),
        }
    }

    pub fn meta(&self) -> &serde_json::Value {
        match &self.records[0] {
            Record::Header { meta, .. } => meta,
            _ => unreachable!("checked in new"),
        }
    }

    pub fn matrix(&self, key: &str) -> Result<(usize, usize, &[f64]), RecordError> {
        self.records
            .iter()
            .find_map(|r| match r {
                Record::Matrix {
                    name, rows, cols, data,
                } if name == key => Some((*rows, *cols, data.as_slice())),
                _ => None,
            })
            .ok_or_else(|| RecordError::Missing(key.into()))
    }

    pub fn scalar(&self, key: &str) -> Result<f64, RecordError> {
        self.records
            .iter()
            .find_map(|r| match r {
                Record::Scalar { name, value } if name == key => Some(*value),
                _ => None,
            })
            .ok_or_else(|| RecordError::Missing(key.into()))
    }

    pub fn vocab(&self, key: &str) -> Result<&[String], RecordError> {
        self.records
            .iter()
            .find_map(|r| match r {
                Record::Vocab { name, items } if name == key => Some(items.as_slice()),
                _ => None,
            })
            .ok_or_else(|| RecordError::Missing(key.into()))
    }
}
