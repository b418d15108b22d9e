//! Per-epoch metrics and their CSV form.
//!
//! Columns: `epoch,split,loss,error_rate,eta_W`, then one matrix angle and
//! one δ angle per layer. Reals are written with `{:.8e}`; an angle that is
//! undefined (a zero matrix or a zero error signal) is an empty field.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitKind {
    Train,
    Test,
}

impl fmt::Display for SplitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitKind::Train => "train",
            SplitKind::Test => "test",
        })
    }
}

impl FromStr for SplitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitKind::Train),
            "test" => Ok(SplitKind::Test),
            other => Err(Error::Format {
                offset: 0,
                message: format!("unknown split `{other}`"),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub split: SplitKind,
    /// Mean squared error per output element.
    pub loss: f64,
    pub error_rate: f64,
    pub eta_w: f64,
    pub matrix_angles: Vec<Option<f64>>,
    pub delta_angles: Vec<Option<f64>>,
}

pub fn csv_header(depth: usize) -> String {
    let mut cols = vec!["epoch", "split", "loss", "error_rate", "eta_W"]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
    cols.extend((1..=depth).map(|l| format!("angle_W_B_l{l}")));
    cols.extend((1..=depth).map(|l| format!("angle_delta_l{l}")));
    cols.join(",")
}

fn real(v: f64) -> String {
    format!("{v:.8e}")
}

fn opt_real(v: Option<f64>) -> String {
    v.map(real).unwrap_or_default()
}

impl MetricsRecord {
    pub fn to_csv_row(&self) -> String {
        let mut fields = vec![
            self.epoch.to_string(),
            self.split.to_string(),
            real(self.loss),
            real(self.error_rate),
            real(self.eta_w),
        ];
        fields.extend(self.matrix_angles.iter().map(|&a| opt_real(a)));
        fields.extend(self.delta_angles.iter().map(|&a| opt_real(a)));
        fields.join(",")
    }
}

/// Writes the header and one row per record.
pub fn write_metrics<W: Write>(out: &mut W, records: &[MetricsRecord], depth: usize) -> Result<()> {
    let io = |e: std::io::Error| Error::Io {
        path: "<metrics writer>".into(),
        message: e.to_string(),
    };
    writeln!(out, "{}", csv_header(depth)).map_err(io)?;
    for r in records {
        if r.matrix_angles.len() != depth || r.delta_angles.len() != depth {
            return Err(Error::Shape(format!(
                "record for epoch {} has {}/{} angles, expected {depth}",
                r.epoch,
                r.matrix_angles.len(),
                r.delta_angles.len()
            )));
        }
        writeln!(out, "{}", r.to_csv_row()).map_err(io)?;
    }
    Ok(())
}

/// Writes the metrics CSV to `path`. An empty record list still produces
/// the header.
pub fn emit_metrics(records: &[MetricsRecord], path: &Path, depth: usize) -> Result<()> {
    let mut buf = Vec::new();
    write_metrics(&mut buf, records, depth)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Parses CSV produced by [`write_metrics`].
pub fn parse_metrics(text: &str) -> Result<Vec<MetricsRecord>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Format {
        offset: 0,
        message: "empty metrics file".into(),
    })?;
    let n_cols = header.split(',').count();
    if n_cols < 5 || (n_cols - 5) % 2 != 0 {
        return Err(Error::Format {
            offset: 0,
            message: format!("unexpected header `{header}`"),
        });
    }
    let depth = (n_cols - 5) / 2;
    if header != csv_header(depth) {
        return Err(Error::Format {
            offset: 0,
            message: format!("unexpected header `{header}`"),
        });
    }
    let mut offset = header.len() + 1;
    let mut records = Vec::new();
    for line in lines {
        let bad = |m: String| Error::Format { offset, message: m };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != n_cols {
            return Err(bad(format!("expected {n_cols} fields, got {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("`{s}`: {e}")));
        let opt = |s: &str| {
            if s.is_empty() {
                Ok(None)
            } else {
                num(s).map(Some)
            }
        };
        records.push(MetricsRecord {
            epoch: f[0]
                .parse()
                .map_err(|e| bad(format!("epoch `{}`: {e}", f[0])))?,
            split: f[1].parse().map_err(|_| bad(format!("split `{}`", f[1])))?,
            loss: num(f[2])?,
            error_rate: num(f[3])?,
            eta_w: num(f[4])?,
            matrix_angles: f[5..5 + depth]
                .iter()
                .map(|s| opt(s))
                .collect::<Result<_>>()?,
            delta_angles: f[5 + depth..]
                .iter()
                .map(|s| opt(s))
                .collect::<Result<_>>()?,
        });
        offset += line.len() + 1;
    }
    Ok(records)
}
