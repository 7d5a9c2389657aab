//! Flat binary parameter file. All integers are u64 and all floats f64,
//! little-endian:
//!
//! ```text
//! magic          8 bytes  "DGRMIL\0\x01"
//! version        u64      1
//! architecture   u64      0 = dgr-mil, 1 = ab-mil
//! input_dim, embed_dim, num_globals, num_heads, gated_hidden,
//! nystrom_threshold, landmarks                 7 x u64
//! dropout        f64
//! tensors        u64      count, then per tensor: rows u64, cols u64,
//!                         rows*cols f64 row-major
//! normalization  u64      0, or D followed by D means and D stds
//! ```
//!
//! Tensors follow the traversal order of [`Weights::names`]; the manifest
//! lists them with shapes and byte offsets.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use dgrmil_core::data::ZScore;
use dgrmil_core::model::{Architecture, ModelConfig, ModelParams};
use dgrmil_core::Matrix;

use crate::config::architecture_name;
use crate::error::{CliError, CliResult};

pub const MAGIC: [u8; 8] = *b"DGRMIL\0\x01";
pub const VERSION: u64 = 1;

/// Trained weights with the feature standardization they expect.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub params: ModelParams,
    pub normalization: Option<ZScore>,
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(model: &SavedModel) -> Vec<u8> {
    let c = &model.params.config;
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    put_u64(&mut out, VERSION);
    put_u64(&mut out, matches!(c.architecture, Architecture::AbMil) as u64);
    for v in [c.input_dim, c.embed_dim, c.num_globals, c.num_heads, c.gated_hidden, c.nystrom_threshold, c.landmarks] {
        put_u64(&mut out, v as u64);
    }
    put_f64s(&mut out, &[c.dropout]);
    let leaves = model.params.weights.leaves();
    put_u64(&mut out, leaves.len() as u64);
    for m in leaves {
        put_u64(&mut out, m.rows() as u64);
        put_u64(&mut out, m.cols() as u64);
        put_f64s(&mut out, m.as_slice());
    }
    match &model.normalization {
        None => put_u64(&mut out, 0),
        Some(z) => {
            put_u64(&mut out, z.mean.len() as u64);
            put_f64s(&mut out, &z.mean);
            put_f64s(&mut out, &z.std);
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, what: &str) -> CliResult<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            CliError::Data(format!("params file truncated reading {what} at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> CliResult<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self, what: &str) -> CliResult<usize> {
        usize::try_from(self.u64(what)?).map_err(|_| CliError::Data(format!("{what} does not fit in memory")))
    }

    fn f64s(&mut self, n: usize, what: &str) -> CliResult<Vec<f64>> {
        let bytes = self.take(n.saturating_mul(8), what)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

pub fn decode(bytes: &[u8]) -> CliResult<SavedModel> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(8, "magic")? != MAGIC {
        return Err(CliError::Data("not a dgrmil params file (bad magic)".into()));
    }
    let version = cur.u64("version")?;
    if version != VERSION {
        return Err(CliError::Data(format!("params version {version}, this build reads {VERSION}")));
    }
    let architecture = match cur.u64("architecture")? {
        0 => Architecture::DgrMil,
        1 => Architecture::AbMil,
        other => return Err(CliError::Data(format!("unknown architecture code {other}"))),
    };
    let mut dims = [0usize; 7];
    for d in &mut dims {
        *d = cur.usize("dimension header")?;
    }
    let [input_dim, embed_dim, num_globals, num_heads, gated_hidden, nystrom_threshold, landmarks] = dims;
    let dropout = cur.f64s(1, "dropout")?[0];
    let config = ModelConfig {
        architecture,
        input_dim,
        embed_dim,
        num_globals,
        num_heads,
        dropout,
        gated_hidden,
        nystrom_threshold,
        landmarks,
    };
    // A fresh initialization fixes the expected tensor shapes and order.
    let mut params = ModelParams::init(config, 0).map_err(|e| CliError::Data(format!("params header: {e}")))?;
    let names = params.weights.names();
    let count = cur.usize("tensor count")?;
    if count != names.len() {
        return Err(CliError::Data(format!("{count} tensors, architecture has {}", names.len())));
    }
    let mut blocks = Vec::with_capacity(count);
    for name in &names {
        let rows = cur.usize(name)?;
        let cols = cur.usize(name)?;
        let data = cur.f64s(rows.saturating_mul(cols), name)?;
        blocks.push(Matrix::from_vec(rows, cols, data)?);
    }
    let mut err = None;
    let mut i = 0;
    params.weights.for_each_mut(&mut |m: &mut Matrix| {
        let block = std::mem::replace(&mut blocks[i], Matrix::zeros(0, 0));
        if block.shape() != m.shape() && err.is_none() {
            err = Some(format!("{} is {:?}, expected {:?}", names[i], block.shape(), m.shape()));
        }
        *m = block;
        i += 1;
    });
    if let Some(e) = err {
        return Err(CliError::Data(format!("params file: {e}")));
    }
    let normalization = match cur.usize("normalization width")? {
        0 => None,
        d if d == input_dim => Some(ZScore { mean: cur.f64s(d, "normalization mean")?, std: cur.f64s(d, "normalization std")? }),
        d => return Err(CliError::Data(format!("normalization width {d}, input width {input_dim}"))),
    };
    if cur.pos != bytes.len() {
        return Err(CliError::Data(format!("{} trailing bytes in params file", bytes.len() - cur.pos)));
    }
    Ok(SavedModel { params, normalization })
}

/// Human-readable description of an encoded file: header fields, then one
/// line per tensor with its shape and byte offset.
pub fn manifest(model: &SavedModel) -> String {
    let c = &model.params.config;
    let mut s = String::new();
    let _ = writeln!(s, "format = dgrmil-params");
    let _ = writeln!(s, "version = {VERSION}");
    let _ = writeln!(s, "architecture = {}", architecture_name(c.architecture));
    let _ = writeln!(s, "input-dim = {}", c.input_dim);
    let _ = writeln!(s, "embed-dim = {}", c.embed_dim);
    let _ = writeln!(s, "num-globals = {}", c.num_globals);
    let _ = writeln!(s, "num-heads = {}", c.num_heads);
    let _ = writeln!(s, "gated-hidden = {}", c.gated_hidden);
    let _ = writeln!(s, "nystrom-threshold = {}", c.nystrom_threshold);
    let _ = writeln!(s, "landmarks = {}", c.landmarks);
    let _ = writeln!(s, "dropout = {}", c.dropout);
    let _ = writeln!(s, "param-count = {}", model.params.param_count());
    let _ = writeln!(s, "normalization = {}", model.normalization.as_ref().map_or(0, |z| z.mean.len()));
    let mut offset = 8 + 8 * 9 + 8 + 8;
    for (name, m) in model.params.weights.names().iter().zip(model.params.weights.leaves()) {
        offset += 16;
        let _ = writeln!(s, "tensor {name} {}x{} offset {offset}", m.rows(), m.cols());
        offset += 8 * m.len();
    }
    s
}

/// Writes `<stem>.bin` and `<stem>.manifest` next to each other.
pub fn save(model: &SavedModel, bin_path: &Path) -> CliResult<()> {
    fs::write(bin_path, encode(model)).map_err(|e| CliError::write(bin_path, e))?;
    let manifest_path = bin_path.with_extension("manifest");
    fs::write(&manifest_path, manifest(model)).map_err(|e| CliError::write(&manifest_path, e))
}

pub fn load(path: &Path) -> CliResult<SavedModel> {
    let bytes = fs::read(path).map_err(|e| CliError::read(path, e))?;
    decode(&bytes).map_err(|e| match e {
        CliError::Data(msg) => CliError::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}
