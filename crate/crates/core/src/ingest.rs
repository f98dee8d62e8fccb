//! CSV reading and writing in the `left,right,L,I,R,x1,...,xp` layout.
//!
//! The header row is optional: a first row whose `left` field does not parse
//! as a number is taken to be a header. `Inf` (any case) encodes +infinity.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{canonicalize, Censoring, Dataset, RawRow};

fn parse_field(s: &str) -> Option<f64> {
    let s = s.trim();
    match s.to_ascii_lowercase().as_str() {
        "inf" | "+inf" | "infinity" => Some(f64::INFINITY),
        // Only `right` may be infinite; NaN spellings are rejected downstream.
        _ => s.parse::<f64>().ok().filter(|v| !v.is_nan()),
    }
}

fn parse_indicator(s: &str) -> Option<u8> {
    match parse_field(s)? {
        v if v == 0.0 => Some(0),
        v if v == 1.0 => Some(1),
        _ => Some(2),
    }
}

pub fn read_csv<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(reader);
    let mut rows = Vec::new();
    let mut first = true;
    for rec in rdr.records() {
        let rec = rec?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        if first {
            first = false;
            if rec.get(0).and_then(parse_field).is_none() {
                continue;
            }
        }
        let row = rows.len() + 1;
        let bad = |message: String| Error::Ingest { row, message };
        if rec.len() < 5 {
            return Err(bad(format!("expected at least 5 columns, found {}", rec.len())));
        }
        let num = |j: usize, name: &str| parse_field(&rec[j]).ok_or_else(|| bad(format!("{name} = {:?} is not numeric", &rec[j])));
        let left = num(0, "left")?;
        let right = num(1, "right")?;
        let ind = |j: usize, name: &str| parse_indicator(&rec[j]).ok_or_else(|| bad(format!("{name} = {:?} is not numeric", &rec[j])));
        let (delta_l, delta_i, delta_r) = (ind(2, "L")?, ind(3, "I")?, ind(4, "R")?);
        let covariates = (5..rec.len())
            .map(|j| {
                parse_field(&rec[j])
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| bad(format!("covariate {} = {:?} is not a finite number", j - 4, &rec[j])))
            })
            .collect::<Result<Vec<_>>>()?;
        if !left.is_finite() {
            return Err(bad("left endpoint is infinite".into()));
        }
        rows.push(RawRow { left, right, delta_l, delta_i, delta_r, covariates });
    }
    canonicalize(&rows)
}

pub fn read_csv_path<P: AsRef<Path>>(path: P) -> Result<Dataset> {
    read_csv(File::open(path)?)
}

/// Writes the dataset with a header, using the file placeholders
/// `left = 0` for left-censored and `right = Inf` for right-censored rows.
pub fn write_csv<W: Write>(data: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["left".to_string(), "right".into(), "L".into(), "I".into(), "R".into()];
    header.extend((1..=data.n_covariates()).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    for o in data.observations() {
        let (dl, di, dr) = o.censoring.indicators();
        let right = match o.censoring {
            Censoring::Right => "Inf".to_string(),
            _ => o.right.to_string(),
        };
        let mut rec = vec![o.left.to_string(), right, dl.to_string(), di.to_string(), dr.to_string()];
        rec.extend(o.covariates.iter().map(|x| x.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_path<P: AsRef<Path>>(data: &Dataset, path: P) -> Result<()> {
    write_csv(data, File::create(path)?)
}
