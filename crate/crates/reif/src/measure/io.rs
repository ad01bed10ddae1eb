use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DiscreteMeasure;
use crate::{Error, Result};

/// JSON form of a measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureFile {
    pub dim: usize,
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl From<&DiscreteMeasure> for MeasureFile {
    fn from(m: &DiscreteMeasure) -> Self {
        MeasureFile { dim: m.dim(), points: m.points().map(|p| p.to_vec()).collect(), weights: m.weights().to_vec() }
    }
}

impl TryFrom<MeasureFile> for DiscreteMeasure {
    type Error = Error;

    fn try_from(f: MeasureFile) -> Result<DiscreteMeasure> {
        if f.points.len() != f.weights.len() {
            return Err(Error::Input("points and weights differ in length".into()));
        }
        let mut coords = Vec::with_capacity(f.dim * f.points.len());
        for p in &f.points {
            crate::geometry::check_dim(f.dim, p.len())?;
            coords.extend_from_slice(p);
        }
        DiscreteMeasure::new(f.dim, coords, f.weights)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Input(format!("csv: {e}"))
}

/// Parses CSV with header `x1,...,xn[,w]`; a missing weight column means unit weights.
pub fn read_measure_csv<R: Read>(r: R) -> Result<DiscreteMeasure> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let header = rd.headers().map_err(csv_err)?.clone();
    let weighted = header.iter().last() == Some("w");
    let dim = header.len() - usize::from(weighted);
    let mut coords = Vec::new();
    let mut weights = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != header.len() {
            return Err(Error::Input(format!("row has {} fields, header has {}", rec.len(), header.len())));
        }
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Input(format!("bad number '{field}'")))?;
            if j < dim {
                coords.push(v);
            } else {
                weights.push(v);
            }
        }
        if !weighted {
            weights.push(1.0);
        }
    }
    DiscreteMeasure::new(dim, coords, weights)
}

/// Writes `x1,...,xn,w` with shortest round-trip float formatting.
pub fn write_measure_csv<W: Write>(m: &DiscreteMeasure, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header: Vec<String> = (1..=m.dim()).map(|i| format!("x{i}")).collect();
    header.push("w".into());
    wr.write_record(&header).map_err(csv_err)?;
    for (i, p) in m.points().enumerate() {
        let mut row: Vec<String> = p.iter().map(|x| x.to_string()).collect();
        row.push(m.weight(i).to_string());
        wr.write_record(&row).map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_measure_json<W: Write>(m: &DiscreteMeasure, w: W) -> Result<()> {
    serde_json::to_writer(w, &MeasureFile::from(m)).map_err(|e| Error::Io(e.to_string()))
}

/// Reads a measure, choosing JSON or CSV by file extension.
pub fn read_measure(path: &Path) -> Result<DiscreteMeasure> {
    let f = std::fs::File::open(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    if path.extension().is_some_and(|e| e == "json") {
        let mf: MeasureFile =
            serde_json::from_reader(std::io::BufReader::new(f)).map_err(|e| Error::Input(format!("json: {e}")))?;
        DiscreteMeasure::try_from(mf)
    } else {
        read_measure_csv(std::io::BufReader::new(f))
    }
}
