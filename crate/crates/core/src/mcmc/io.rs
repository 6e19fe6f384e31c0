//! Columnar CSV of draws plus a JSON sidecar with everything else.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};

use super::PosteriorSamples;

/// Writes one CSV row per draw (one column per free parameter, named as in
/// [`FreeLayout::names`](crate::layout::FreeLayout::names)) and the
/// metadata sidecar. Floats round-trip exactly.
pub fn write_samples(samples: &PosteriorSamples, csv_path: &Path, json_path: &Path) -> Result<()> {
    let f = File::create(csv_path).map_err(|e| Error::io(csv_path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(f));
    w.write_record(samples.layout().names())?;
    for i in 0..samples.len() {
        w.write_record(samples.row(i).iter().map(|x| format!("{x:?}")))?;
    }
    w.flush().map_err(|e| Error::io(csv_path, e))?;
    let f = File::create(json_path).map_err(|e| Error::io(json_path, e))?;
    serde_json::to_writer_pretty(BufWriter::new(f), samples)?;
    Ok(())
}

pub fn read_samples(csv_path: &Path, json_path: &Path) -> Result<PosteriorSamples> {
    let f = File::open(json_path).map_err(|e| Error::io(json_path, e))?;
    let mut samples: PosteriorSamples = serde_json::from_reader(BufReader::new(f))?;
    samples.template.validate()?;
    let names = samples.layout().names();
    let f = File::open(csv_path).map_err(|e| Error::io(csv_path, e))?;
    let mut r = csv::Reader::from_reader(BufReader::new(f));
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != names {
        return Err(Error::Data(format!(
            "{}: columns do not match the sidecar parameter layout",
            csv_path.display()
        )));
    }
    let mut values = Vec::new();
    for (line, rec) in r.records().enumerate() {
        for field in rec?.iter() {
            values.push(
                field.parse::<f64>().map_err(|_| {
                    Error::Data(format!("{} row {}: bad number {field:?}", csv_path.display(), line + 2))
                })?,
            );
        }
    }
    samples.values = values;
    Ok(samples)
}
