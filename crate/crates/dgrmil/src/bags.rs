//! Canonical bag CSV: header `bag_id,instance_id,label,f0,...,f{D-1}`, one row
//! per instance, the label column holding the instance label.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use dgrmil_core::data::Dataset;
use dgrmil_core::model::Bag;
use dgrmil_core::Matrix;

use crate::error::{CliError, CliResult};

struct PendingBag {
    instance_ids: Vec<String>,
    labels: Vec<u8>,
    features: Vec<f64>,
}

/// Loads a dataset named after the file stem.
pub fn load_csv(path: &Path) -> CliResult<Dataset> {
    let file = File::open(path).map_err(|e| CliError::read(path, e))?;
    let name = path.file_stem().map_or_else(|| "dataset".to_string(), |s| s.to_string_lossy().into_owned());
    read_csv(file, &name).map_err(|e| match e {
        CliError::Data(msg) => CliError::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Parses canonical CSV. Bags keep the order of their first row, instances
/// the order of their rows; a bag's label is the maximum of its instance labels.
pub fn read_csv(reader: impl Read, name: &str) -> CliResult<Dataset> {
    let mut csv = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
    let mut records = csv.records();
    let header = match records.next() {
        None => return Err(CliError::Data("empty dataset: no header".into())),
        Some(r) => r.map_err(|e| CliError::Data(format!("line 1: {e}")))?,
    };
    let dim = check_header(&header)?;

    let mut order: Vec<String> = Vec::new();
    let mut pending: HashMap<String, PendingBag> = HashMap::new();
    for record in records {
        let record = record.map_err(|e| CliError::Data(format!("parse error: {e}")))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != dim + 3 {
            return Err(CliError::Data(format!(
                "line {line}: schema error: {} fields, header has {}",
                record.len(),
                dim + 3
            )));
        }
        let label = match &record[2] {
            "0" => 0,
            "1" => 1,
            other => return Err(CliError::Data(format!("line {line}: label {other:?} not in {{0, 1}}"))),
        };
        let bag_id = record[0].to_string();
        let bag = pending.entry(bag_id.clone()).or_insert_with(|| {
            order.push(bag_id);
            PendingBag { instance_ids: Vec::new(), labels: Vec::new(), features: Vec::new() }
        });
        for (j, field) in record.iter().skip(3).enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| CliError::Data(format!("line {line}: feature f{j} {field:?} is not a number")))?;
            bag.features.push(v);
        }
        bag.instance_ids.push(record[1].to_string());
        bag.labels.push(label);
    }
    if order.is_empty() {
        return Err(CliError::Data("empty dataset: no instance rows".into()));
    }
    let mut bags = Vec::with_capacity(order.len());
    for id in order {
        let p = pending.remove(&id).expect("every ordered id has a pending bag");
        let n = p.labels.len();
        let label = p.labels.iter().copied().max().unwrap_or(0);
        let features = Matrix::from_vec(n, dim, p.features)?;
        bags.push(Bag::new(id, features, label)?.with_instance_ids(p.instance_ids)?.with_instance_labels(p.labels)?);
    }
    Ok(Dataset::new(name, dim, bags)?)
}

fn check_header(header: &csv::StringRecord) -> CliResult<usize> {
    let bad = |why: String| CliError::Data(format!("line 1: bad header: {why}"));
    let fields: Vec<&str> = header.iter().collect();
    if fields.len() < 4 || fields[..3] != ["bag_id", "instance_id", "label"] {
        return Err(bad("expected bag_id,instance_id,label,f0,...".into()));
    }
    for (j, f) in fields[3..].iter().enumerate() {
        if *f != format!("f{j}") {
            return Err(bad(format!("column {} is {f:?}, expected f{j}", j + 3)));
        }
    }
    Ok(fields.len() - 3)
}

/// Writes canonical CSV. Bags without instance labels repeat the bag label
/// on every row.
pub fn write_csv(dataset: &Dataset, writer: impl Write) -> CliResult<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    let to_err = |e: csv::Error| CliError::Config(format!("csv write failed: {e}"));
    let mut row: Vec<String> = ["bag_id", "instance_id", "label"].iter().map(|s| s.to_string()).collect();
    row.extend((0..dataset.feature_dim).map(|j| format!("f{j}")));
    w.write_record(&row).map_err(to_err)?;
    for bag in &dataset.bags {
        for i in 0..bag.len() {
            row.clear();
            row.push(bag.id.clone());
            row.push(bag.instance_ids[i].clone());
            let label = bag.instance_labels.as_ref().map_or(bag.label, |l| l[i]);
            row.push(label.to_string());
            row.extend(bag.features.row(i).iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(to_err)?;
        }
    }
    w.flush().map_err(|e| CliError::Config(format!("csv write failed: {e}")))
}

pub fn save_csv(dataset: &Dataset, path: &Path) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::write(path, e))?;
    write_csv(dataset, BufWriter::new(file)).map_err(|e| CliError::write(path, e))
}
