//! Classic MIL benchmarks (MUSK1, MUSK2, FOX, TIGER, ELEPHANT) in the
//! headerless per-instance layout used by the public CSV distributions:
//!
//! | column | content |
//! |--------|---------|
//! | 0      | label of the instance's bag (0/1; -1 is read as 0) |
//! | 1      | bag identifier |
//! | 2..    | features |
//!
//! The same mapping applies to every dataset name. Instance-level labels are
//! not part of these files, so loaded bags carry none.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::path::Path;
use std::str::FromStr;

use dgrmil_core::data::Dataset;
use dgrmil_core::model::Bag;
use dgrmil_core::Matrix;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Benchmark {
    Musk1,
    Musk2,
    Fox,
    Tiger,
    Elephant,
}

impl Benchmark {
    /// Documented (bags, features).
    pub fn expected_shape(self) -> (usize, usize) {
        match self {
            Benchmark::Musk1 => (92, 166),
            Benchmark::Musk2 => (102, 166),
            Benchmark::Fox | Benchmark::Tiger | Benchmark::Elephant => (200, 230),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Benchmark::Musk1 => "musk1",
            Benchmark::Musk2 => "musk2",
            Benchmark::Fox => "fox",
            Benchmark::Tiger => "tiger",
            Benchmark::Elephant => "elephant",
        }
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Benchmark {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s.to_ascii_lowercase().as_str() {
            "musk1" => Ok(Benchmark::Musk1),
            "musk2" => Ok(Benchmark::Musk2),
            "fox" => Ok(Benchmark::Fox),
            "tiger" => Ok(Benchmark::Tiger),
            "elephant" => Ok(Benchmark::Elephant),
            other => Err(CliError::Config(format!(
                "unknown benchmark {other:?} (expected musk1, musk2, fox, tiger or elephant)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkLoad {
    pub dataset: Dataset,
    /// Cardinality mismatches against the documented shape; not fatal.
    pub warnings: Vec<String>,
}

pub fn load_mil_benchmark(path: &Path, which: Benchmark) -> CliResult<BenchmarkLoad> {
    let file = File::open(path).map_err(|e| CliError::read(path, e))?;
    let mut csv = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(file);
    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, (u8, Vec<f64>)> = HashMap::new();
    let mut dim = None;
    for record in csv.records() {
        let record = record.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let line = record.position().map_or(0, |p| p.line());
        let at = |msg: String| CliError::Data(format!("{}: line {line}: {msg}", path.display()));
        if record.len() < 3 {
            return Err(at(format!("{} fields, need label, bag id and features", record.len())));
        }
        let d = record.len() - 2;
        if *dim.get_or_insert(d) != d {
            return Err(at(format!("schema error: {d} features, earlier rows have {}", dim.unwrap_or(0))));
        }
        let label: f64 = record[0].trim().parse().map_err(|_| at(format!("label {:?} is not a number", &record[0])))?;
        let label = u8::from(label > 0.0);
        let id = record[1].trim().to_string();
        let entry = rows.entry(id.clone()).or_insert_with(|| {
            order.push(id);
            (0, Vec::new())
        });
        entry.0 = entry.0.max(label);
        for (j, field) in record.iter().skip(2).enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| at(format!("feature {j} {field:?} is not a number")))?;
            entry.1.push(v);
        }
    }
    let dim = dim.ok_or_else(|| CliError::Data(format!("{}: empty dataset", path.display())))?;
    let mut bags = Vec::with_capacity(order.len());
    for id in order {
        let (label, features) = rows.remove(&id).expect("every ordered id has rows");
        let n = features.len() / dim;
        bags.push(Bag::new(id, Matrix::from_vec(n, dim, features)?, label)?);
    }
    let dataset = Dataset::new(which.name(), dim, bags)?;
    let (want_bags, want_dim) = which.expected_shape();
    let mut warnings = Vec::new();
    if dataset.len() != want_bags {
        warnings.push(format!("{which}: {} bags, documented {want_bags}", dataset.len()));
    }
    if dim != want_dim {
        warnings.push(format!("{which}: {dim} features, documented {want_dim}"));
    }
    Ok(BenchmarkLoad { dataset, warnings })
}
