//! Result records and CSV tables.

use std::fmt;
use std::fs::OpenOptions;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Method tag written to records.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MethodTag {
    #[serde(rename = "ftbu-ds")]
    Ds,
    #[serde(rename = "ftbu-sl")]
    Sl,
    #[serde(rename = "dp")]
    Dp,
    #[serde(rename = "mc")]
    Mc,
}

impl MethodTag {
    pub fn tag(self) -> &'static str {
        match self {
            MethodTag::Ds => "ftbu-ds",
            MethodTag::Sl => "ftbu-sl",
            MethodTag::Dp => "dp",
            MethodTag::Mc => "mc",
        }
    }
}

impl fmt::Display for MethodTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for MethodTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ds" | "ftbu-ds" => Ok(MethodTag::Ds),
            "sl" | "ftbu-sl" => Ok(MethodTag::Sl),
            "dp" => Ok(MethodTag::Dp),
            "mc" => Ok(MethodTag::Mc),
            other => Err(Error::Schema(format!("unknown method {other:?}; expected ds, sl, dp or mc"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub tool: String,
    pub version: String,
    pub method: MethodTag,
    pub state_dim: usize,
    pub input_dim: usize,
    pub horizon: usize,
    pub x0: Vec<f64>,
    pub probability: f64,
    /// Quadrature error estimate, Monte-Carlo 95% half-width, or 0 for DP.
    pub err_est: f64,
    pub evals: u64,
    pub converged: bool,
    pub seed: u64,
    pub wall_time_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_star: Option<Vec<f64>>,
}

impl ResultRecord {
    pub fn row(&self) -> Row {
        Row {
            x0: self.x0.clone(),
            method: self.method,
            probability: self.probability,
            err_est: self.err_est,
            evals: self.evals,
            converged: self.converged,
            wall_time_s: self.wall_time_s,
        }
    }
}

/// One CSV line of a solve or sweep: `x0_0 … x0_{n-1}, method, probability,
/// err_est, evals, converged, wall_time_s`. The timing column is last so
/// that run-to-run comparisons can drop it.
#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub x0: Vec<f64>,
    pub method: MethodTag,
    pub probability: f64,
    pub err_est: f64,
    pub evals: u64,
    pub converged: bool,
    pub wall_time_s: f64,
}

pub fn row_header(n: usize) -> Vec<String> {
    (0..n)
        .map(|i| format!("x0_{i}"))
        .chain(
            ["method", "probability", "err_est", "evals", "converged", "wall_time_s"]
                .into_iter()
                .map(String::from),
        )
        .collect()
}

impl Row {
    pub fn fields(&self) -> Vec<String> {
        self.x0
            .iter()
            .map(f64::to_string)
            .chain([
                self.method.to_string(),
                self.probability.to_string(),
                self.err_est.to_string(),
                self.evals.to_string(),
                self.converged.to_string(),
                self.wall_time_s.to_string(),
            ])
            .collect()
    }

    pub fn parse(fields: &csv::StringRecord) -> Result<Self> {
        let k = fields.len();
        if k < 7 {
            return Err(Error::Schema(format!("row has {k} fields, need at least 7")));
        }
        let n = k - 6;
        let num = |i: usize| -> Result<f64> {
            fields[i]
                .parse::<f64>()
                .map_err(|e| Error::Schema(format!("field {i} ({:?}): {e}", &fields[i])))
        };
        let row = Row {
            x0: (0..n).map(num).collect::<Result<_>>()?,
            method: fields[n].parse()?,
            probability: num(n + 1)?,
            err_est: num(n + 2)?,
            evals: fields[n + 3].parse().map_err(|e| Error::Schema(format!("evals: {e}")))?,
            converged: fields[n + 4].parse().map_err(|e| Error::Schema(format!("converged: {e}")))?,
            wall_time_s: num(n + 5)?,
        };
        if !(0.0..=1.0).contains(&row.probability) {
            return Err(Error::Schema(format!("probability {} outside [0,1]", row.probability)));
        }
        Ok(row)
    }
}

/// Writes a CSV table, replacing `path`.
pub fn write_table(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Appends one row, writing the header first when the file is new or empty.
pub fn append_row(path: &Path, header: &[String], row: &[String]) -> Result<()> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::Writer::from_writer(file);
    if fresh {
        w.write_record(header)?;
    }
    w.write_record(row)?;
    w.flush()?;
    Ok(())
}

pub fn read_rows(path: &Path) -> Result<Vec<Row>> {
    let mut r = csv::Reader::from_path(path)?;
    r.records().map(|rec| Row::parse(&rec?)).collect()
}

/// CSV text with the named column removed from every line, for comparing
/// runs that differ only in timing.
pub fn without_column(csv_text: &str, column: &str) -> Result<String> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(csv_text.as_bytes());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut drop = None;
    for rec in r.records() {
        let rec = rec?;
        if drop.is_none() {
            drop = Some(rec.iter().position(|f| f == column));
        }
        let keep: Vec<&str> = rec
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != drop.flatten())
            .map(|(_, f)| f)
            .collect();
        w.write_record(keep)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::Schema(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_tags_parse() {
        for (s, m) in [("ds", MethodTag::Ds), ("ftbu-sl", MethodTag::Sl), ("dp", MethodTag::Dp), ("mc", MethodTag::Mc)] {
            assert_eq!(s.parse::<MethodTag>().unwrap(), m);
        }
        assert!("fmincon".parse::<MethodTag>().unwrap_err().is_schema());
        assert_eq!(serde_json::to_string(&MethodTag::Ds).unwrap(), "\"ftbu-ds\"");
    }

    #[test]
    fn row_round_trip() {
        let row = Row {
            x0: vec![0.1, -0.30000000000000004],
            method: MethodTag::Sl,
            probability: 0.4334,
            err_est: 1.2e-4,
            evals: 321,
            converged: true,
            wall_time_s: 0.125,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.csv");
        write_table(&path, &row_header(2), &[row.fields()]).unwrap();
        assert_eq!(read_rows(&path).unwrap(), vec![row.clone()]);
        append_row(&path, &row_header(2), &row.fields()).unwrap();
        assert_eq!(read_rows(&path).unwrap().len(), 2);
    }

    #[test]
    fn drops_timing_column() {
        let text = "a,wall_time_s,b\n1,0.5,2\n3,0.25,4\n";
        assert_eq!(without_column(text, "wall_time_s").unwrap(), "a,b\n1,2\n3,4\n");
    }

    #[test]
    fn rejects_out_of_range_probability() {
        let rec = csv::StringRecord::from(vec!["0", "dp", "1.5", "0", "0", "true", "0"]);
        assert!(Row::parse(&rec).is_err());
    }
}
