//! CSV ingestion: header `cluster_id,y,x1,...,xP`, one row per individual.
//!
//! Rows are grouped by `cluster_id`; clusters appear in order of first
//! occurrence and individuals keep their input order within a cluster.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::Cluster;

fn csv_error(line: u64, message: impl Into<String>) -> Error {
    Error::Csv { line, message: message.into() }
}

pub fn read_clusters<R: Read>(reader: R) -> Result<Vec<Cluster>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| csv_error(1, e.to_string()))?.clone();
    let names: Vec<&str> = headers.iter().collect();
    if names.len() < 3 || names[0] != "cluster_id" || names[1] != "y" {
        return Err(csv_error(1, "header must be cluster_id,y,x1,...,xP"));
    }
    for (i, name) in names[2..].iter().enumerate() {
        if *name != format!("x{}", i + 1) {
            return Err(csv_error(1, format!("expected column x{}, found {name}", i + 1)));
        }
    }
    let p = names.len() - 2;

    let mut order: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut groups: Vec<(Vec<Vec<f64>>, Vec<u8>)> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            csv_error(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != p + 2 {
            return Err(csv_error(line, format!("expected {} fields, found {}", p + 2, record.len())));
        }
        let id = record[0].to_string();
        let y = match &record[1] {
            "0" => 0u8,
            "1" => 1u8,
            other => return Err(csv_error(line, format!("outcome must be 0 or 1, found {other:?}"))),
        };
        let x = record
            .iter()
            .skip(2)
            .map(|f| match f.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(csv_error(line, format!("covariate {f:?} is not a finite decimal"))),
            })
            .collect::<Result<Vec<f64>>>()?;
        let slot = *index.entry(id.clone()).or_insert_with(|| {
            order.push(id);
            groups.push((Vec::new(), Vec::new()));
            groups.len() - 1
        });
        groups[slot].0.push(x);
        groups[slot].1.push(y);
    }
    if groups.is_empty() {
        return Err(csv_error(1, "no data rows"));
    }
    order
        .into_iter()
        .zip(groups)
        .map(|(id, (x, y))| Cluster::with_id(id, x, y))
        .collect()
}

pub fn read_clusters_from_path(path: &Path) -> Result<Vec<Cluster>> {
    let file = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_clusters(std::io::BufReader::new(file))
}
