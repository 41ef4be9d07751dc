//! On-disk format of a measured data trajectory.
//!
//! CSV with header `k,u_1..u_m,y_1..y_p` (one row per sample) plus a JSON sidecar
//! `{m, p, N, seed, generator}`. Values are written with Rust's shortest round-trip float
//! formatting, so reading a file back reproduces the data bit for bit.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hankel::DataTrajectory;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSidecar {
    pub m: usize,
    pub p: usize,
    #[serde(rename = "N")]
    pub len: usize,
    pub seed: Option<u64>,
    pub generator: String,
}

impl DataSidecar {
    pub fn for_data(
        data: &DataTrajectory,
        seed: Option<u64>,
        generator: impl Into<String>,
    ) -> Self {
        DataSidecar {
            m: data.m(),
            p: data.p(),
            len: data.len(),
            seed,
            generator: generator.into(),
        }
    }
}

pub fn csv_header(m: usize, p: usize) -> String {
    let mut cols = vec!["k".to_string()];
    cols.extend((1..=m).map(|i| format!("u_{i}")));
    cols.extend((1..=p).map(|i| format!("y_{i}")));
    cols.join(",")
}

pub fn write_data_csv(path: &Path, data: &DataTrajectory) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut body = String::new();
    body.push_str(&csv_header(data.m(), data.p()));
    body.push('\n');
    for (k, (u, y)) in data.u().iter().zip(data.y()).enumerate() {
        body.push_str(&k.to_string());
        for v in u.iter().chain(y.iter()) {
            body.push(',');
            body.push_str(&v.to_string());
        }
        body.push('\n');
    }
    w.write_all(body.as_bytes())
        .map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a data CSV; input and output columns are identified from the `u_*`/`y_*` header.
pub fn read_data_csv(path: &Path) -> Result<DataTrajectory> {
    let parse_err = |message: String| Error::Parse {
        path: path.display().to_string(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => parse_err(format!("{other:?}")),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| parse_err(format!("line 1: {e}")))?
        .clone();
    let (m, p) = parse_header(&headers).map_err(|msg| parse_err(format!("line 1: {msg}")))?;

    let mut us = Vec::new();
    let mut ys = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2;
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(line as u64);
            parse_err(format!("line {line}: {e}"))
        })?;
        if record.len() != 1 + m + p {
            return Err(parse_err(format!(
                "line {line}: expected {} fields, found {}",
                1 + m + p,
                record.len()
            )));
        }
        let k: usize = record[0]
            .parse()
            .map_err(|_| parse_err(format!("line {line}: invalid time index {:?}", &record[0])))?;
        if k != idx {
            return Err(parse_err(format!(
                "line {line}: expected k = {idx}, found {k}"
            )));
        }
        let mut vals = Vec::with_capacity(m + p);
        for field in record.iter().skip(1) {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(format!("line {line}: invalid number {field:?}")))?;
            vals.push(v);
        }
        us.push(DVector::from_column_slice(&vals[..m]));
        ys.push(DVector::from_column_slice(&vals[m..]));
    }
    if us.is_empty() {
        return Err(parse_err("no data rows".into()));
    }
    DataTrajectory::new(us, ys)
}

fn parse_header(headers: &csv::StringRecord) -> std::result::Result<(usize, usize), String> {
    let mut fields = headers.iter();
    if fields.next() != Some("k") {
        return Err("first column must be `k`".into());
    }
    let mut m = 0;
    let mut p = 0;
    for name in fields {
        if p == 0 && name == format!("u_{}", m + 1) {
            m += 1;
        } else if name == format!("y_{}", p + 1) {
            p += 1;
        } else {
            return Err(format!("unexpected column `{name}`"));
        }
    }
    if m == 0 || p == 0 {
        return Err("header needs at least one u_i and one y_i column".into());
    }
    Ok((m, p))
}

pub fn write_sidecar(path: &Path, sidecar: &DataSidecar) -> Result<()> {
    let text = serde_json::to_string_pretty(sidecar).expect("sidecar serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_sidecar(path: &Path) -> Result<DataSidecar> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}
