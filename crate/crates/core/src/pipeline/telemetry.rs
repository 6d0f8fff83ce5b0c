use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A located point in time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fix {
    pub x: f64,
    pub y: f64,
    pub t: f64,
}

impl Fix {
    pub fn new(x: f64, y: f64, t: f64) -> Self {
        Fix { x, y, t }
    }
}

fn check_samples(samples: &[Fix], what: &str, min_len: usize) -> Result<()> {
    if samples.len() < min_len {
        return Err(Error::invalid(format!(
            "{what} needs at least {min_len} points, got {}",
            samples.len()
        )));
    }
    if let Some(f) = samples
        .iter()
        .find(|f| !(f.x.is_finite() && f.y.is_finite() && f.t.is_finite()))
    {
        return Err(Error::NonFinite(format!("{what} point {f:?}")));
    }
    if let Some(w) = samples.windows(2).find(|w| !(w[1].t > w[0].t)) {
        return Err(Error::invalid(format!(
            "{what} times must be strictly increasing ({} then {})",
            w[0].t, w[1].t
        )));
    }
    Ok(())
}

/// Observed fixes, strictly increasing in time.
#[derive(Debug, Clone, PartialEq)]
pub struct Telemetry {
    fixes: Vec<Fix>,
}

impl Telemetry {
    pub fn new(fixes: Vec<Fix>) -> Result<Self> {
        check_samples(&fixes, "telemetry", 2)?;
        Ok(Telemetry { fixes })
    }

    pub fn fixes(&self) -> &[Fix] {
        &self.fixes
    }

    pub fn len(&self) -> usize {
        self.fixes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixes.is_empty()
    }

    pub fn time_range(&self) -> (f64, f64) {
        (self.fixes[0].t, self.fixes[self.fixes.len() - 1].t)
    }

    pub fn min_gap(&self) -> f64 {
        self.fixes
            .windows(2)
            .map(|w| w[1].t - w[0].t)
            .fold(f64::INFINITY, f64::min)
    }

    /// Reads `x,y,t` columns (any order, extra columns ignored).
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let fixes = read_xyt(file, Some(path))?;
        Telemetry::new(fixes)
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        Telemetry::new(read_xyt(reader, None)?)
    }
}

/// A densely sampled continuous-space path.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousPath {
    samples: Vec<Fix>,
}

impl ContinuousPath {
    pub fn new(samples: Vec<Fix>) -> Result<Self> {
        check_samples(&samples, "continuous path", 1)?;
        Ok(ContinuousPath { samples })
    }

    pub fn samples(&self) -> &[Fix] {
        &self.samples
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_xyt(&self.samples, writer)
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        ContinuousPath::new(read_xyt(file, Some(path))?)
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        ContinuousPath::new(read_xyt(reader, None)?)
    }
}

pub(crate) fn write_xyt<W: Write>(samples: &[Fix], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["x", "y", "t"])?;
    for f in samples {
        w.write_record([f.x.to_string(), f.y.to_string(), f.t.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

fn read_xyt<R: Read>(reader: R, path: Option<&Path>) -> Result<Vec<Fix>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::MissingColumn {
                path: path.map(Path::to_path_buf),
                column: name.to_string(),
            })
    };
    let (ix, iy, it) = (col("x")?, col("y")?, col("t")?);
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let field = |k: usize, name: &str| -> Result<f64> {
            let raw = rec.get(k).unwrap_or("");
            raw.parse().map_err(|_| Error::Parse {
                path: path.map(Path::to_path_buf),
                line,
                message: format!("column `{name}`: `{raw}` is not a number"),
            })
        };
        out.push(Fix::new(field(ix, "x")?, field(iy, "y")?, field(it, "t")?));
    }
    Ok(out)
}
