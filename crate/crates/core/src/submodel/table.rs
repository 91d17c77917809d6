//! Tensor-product cubic Hermite lookup tables.
//!
//! Node derivatives come from the non-uniform three-point formula (one-sided
//! at the ends), so each axis uses at most four neighbouring samples and the
//! interpolant is C¹ and reproduces quadratics exactly.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FORMAT_TAG: &str = "gradnet-table-1";

static OUT_OF_RANGE: AtomicU64 = AtomicU64::new(0);

/// Number of table queries clamped to the grid hull so far, process-wide.
pub fn out_of_range_count() -> u64 {
    OUT_OF_RANGE.load(Ordering::Relaxed)
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum TableError {
    #[error("table shape error: {0}")]
    TableShapeError(String),
    #[error("axis `{0}` grid is not strictly increasing")]
    AxisNotMonotonic(String),
    #[error("no table for device {device} at corner {corner}, {temperature} C")]
    TableNotFound { device: String, corner: String, temperature: f64 },
    #[error("table file schema error: {0}")]
    SchemaError(String),
    #[error("cannot read table file {path}: {message}")]
    Io { path: String, message: String },
    #[error("table query on axis `{axis}` is not finite")]
    TableOutOfRange { axis: String },
}

impl TableError {
    pub fn name(&self) -> &'static str {
        match self {
            TableError::TableShapeError(_) => "TableShapeError",
            TableError::AxisNotMonotonic(_) => "AxisNotMonotonic",
            TableError::TableNotFound { .. } => "TableNotFound",
            TableError::SchemaError(_) => "TableSchemaError",
            TableError::Io { .. } => "TableIoError",
            TableError::TableOutOfRange { .. } => "TableOutOfRange",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "PascalCase")]
pub struct Axis {
    pub name: String,
    pub grid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterpTable {
    pub device: String,
    pub axes: Vec<Axis>,
    pub slabs: Vec<String>,
    pub corner: String,
    pub temperature: f64,
    /// Slab-major, then row-major over the axes (last axis fastest).
    data: Vec<f64>,
    strides: Vec<usize>,
    slab_len: usize,
}

/// Interpolant values and gradients for every slab.
#[derive(Debug, Clone, PartialEq)]
pub struct TableEval {
    pub values: Vec<f64>,
    /// `grads[slab][axis]`.
    pub grads: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, Default)]
struct AxisWeights {
    idx: [usize; 4],
    w: [f64; 4],
    dw: [f64; 4],
    len: usize,
}

impl AxisWeights {
    fn add(&mut self, i: usize, w: f64, dw: f64) {
        for k in 0..self.len {
            if self.idx[k] == i {
                self.w[k] += w;
                self.dw[k] += dw;
                return;
            }
        }
        self.idx[self.len] = i;
        self.w[self.len] = w;
        self.dw[self.len] = dw;
        self.len += 1;
    }
}

/// Node derivative at grid node `i` as weights over up to three samples.
fn node_derivative(grid: &[f64], i: usize) -> [(usize, f64); 3] {
    let n = grid.len();
    if i == 0 {
        let (h0, h1) = (grid[1] - grid[0], grid[2] - grid[1]);
        [
            (0, -(2.0 * h0 + h1) / (h0 * (h0 + h1))),
            (1, (h0 + h1) / (h0 * h1)),
            (2, -h0 / (h1 * (h0 + h1))),
        ]
    } else if i == n - 1 {
        let (h0, h1) = (grid[n - 2] - grid[n - 3], grid[n - 1] - grid[n - 2]);
        [
            (n - 3, h1 / (h0 * (h0 + h1))),
            (n - 2, -(h0 + h1) / (h0 * h1)),
            (n - 1, (2.0 * h1 + h0) / (h1 * (h0 + h1))),
        ]
    } else {
        let (h0, h1) = (grid[i] - grid[i - 1], grid[i + 1] - grid[i]);
        [
            (i - 1, -h1 / (h0 * (h0 + h1))),
            (i, (h1 - h0) / (h0 * h1)),
            (i + 1, h0 / (h1 * (h0 + h1))),
        ]
    }
}

fn axis_weights(grid: &[f64], q: f64) -> (AxisWeights, bool) {
    let n = grid.len();
    let clamped = q < grid[0] || q > grid[n - 1];
    let q = q.clamp(grid[0], grid[n - 1]);
    // cell index with grid[i] <= q <= grid[i+1]
    let i = match grid.partition_point(|&g| g <= q) {
        0 => 0,
        p => (p - 1).min(n - 2),
    };
    let h = grid[i + 1] - grid[i];
    let t = (q - grid[i]) / h;
    let (t2, t3) = (t * t, t * t * t);
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + t;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    let d00 = (6.0 * t2 - 6.0 * t) / h;
    let d10 = (3.0 * t2 - 4.0 * t + 1.0) / h;
    let d01 = (-6.0 * t2 + 6.0 * t) / h;
    let d11 = (3.0 * t2 - 2.0 * t) / h;

    let mut aw = AxisWeights::default();
    aw.add(i, h00, d00);
    aw.add(i + 1, h01, d01);
    for (j, c) in node_derivative(grid, i) {
        aw.add(j, h10 * h * c, d10 * h * c);
    }
    for (j, c) in node_derivative(grid, i + 1) {
        aw.add(j, h11 * h * c, d11 * h * c);
    }
    if clamped {
        aw.dw = [0.0; 4];
    }
    (aw, clamped)
}

impl InterpTable {
    pub fn new(
        device: impl Into<String>,
        axes: Vec<Axis>,
        slabs: Vec<String>,
        corner: impl Into<String>,
        temperature: f64,
        data: Vec<f64>,
    ) -> Result<Self, TableError> {
        if axes.is_empty() {
            return Err(TableError::TableShapeError("a table needs at least one axis".into()));
        }
        if slabs.is_empty() {
            return Err(TableError::TableShapeError("a table needs at least one slab".into()));
        }
        for a in &axes {
            if a.grid.len() < 4 {
                return Err(TableError::TableShapeError(format!(
                    "axis `{}` has {} points, at least 4 are required",
                    a.name,
                    a.grid.len()
                )));
            }
            if a.grid.iter().any(|g| !g.is_finite()) || a.grid.windows(2).any(|w| w[1] <= w[0]) {
                return Err(TableError::AxisNotMonotonic(a.name.clone()));
            }
        }
        let mut strides = vec![1; axes.len()];
        for k in (0..axes.len() - 1).rev() {
            strides[k] = strides[k + 1] * axes[k + 1].grid.len();
        }
        let slab_len = strides[0] * axes[0].grid.len();
        if data.len() != slab_len * slabs.len() {
            return Err(TableError::TableShapeError(format!(
                "expected {} values ({} slabs of {}), found {}",
                slab_len * slabs.len(),
                slabs.len(),
                slab_len,
                data.len()
            )));
        }
        Ok(Self {
            device: device.into(),
            axes,
            slabs,
            corner: corner.into(),
            temperature,
            data,
            strides,
            slab_len,
        })
    }

    pub fn slab_index(&self, name: &str) -> Option<usize> {
        self.slabs.iter().position(|s| s == name)
    }

    pub fn axis_index(&self, name: &str) -> Option<usize> {
        self.axes.iter().position(|a| a.name == name)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Evaluates the listed slabs (all of them when `which` is `None`).
    pub fn eval(&self, q: &[f64], which: Option<&[usize]>) -> Result<TableEval, TableError> {
        assert_eq!(q.len(), self.axes.len(), "query dimension");
        let mut weights = Vec::with_capacity(q.len());
        let mut any_clamped = false;
        for (a, &v) in self.axes.iter().zip(q) {
            if !v.is_finite() {
                return Err(TableError::TableOutOfRange { axis: a.name.clone() });
            }
            let (w, c) = axis_weights(&a.grid, v);
            any_clamped |= c;
            weights.push(w);
        }
        if any_clamped {
            OUT_OF_RANGE.fetch_add(1, Ordering::Relaxed);
        }
        let all: Vec<usize>;
        let which = match which {
            Some(w) => w,
            None => {
                all = (0..self.slabs.len()).collect();
                &all
            }
        };
        let nd = self.axes.len();
        let mut values = vec![0.0; which.len()];
        let mut grads = vec![vec![0.0; nd]; which.len()];

        // Walk the tensor product of per-axis stencils.
        let mut counter = vec![0usize; nd];
        let mut partial = vec![0.0; nd];
        loop {
            let mut offset = 0;
            let mut w = 1.0;
            for k in 0..nd {
                let aw = &weights[k];
                offset += aw.idx[counter[k]] * self.strides[k];
                w *= aw.w[counter[k]];
            }
            for k in 0..nd {
                let mut p = 1.0;
                for (m, aw) in weights.iter().enumerate() {
                    p *= if m == k { aw.dw[counter[m]] } else { aw.w[counter[m]] };
                }
                partial[k] = p;
            }
            for (out, &s) in which.iter().enumerate() {
                let y = self.data[s * self.slab_len + offset];
                values[out] += w * y;
                for k in 0..nd {
                    grads[out][k] += partial[k] * y;
                }
            }
            let mut k = nd;
            loop {
                if k == 0 {
                    return Ok(TableEval { values, grads });
                }
                k -= 1;
                counter[k] += 1;
                if counter[k] < weights[k].len {
                    break;
                }
                counter[k] = 0;
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "PascalCase")]
struct TableFile {
    format: String,
    device: String,
    axes: Vec<Axis>,
    slabs: Vec<String>,
    tables: Vec<TableEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "PascalCase")]
struct TableEntry {
    corner: String,
    temperature: f64,
    encoding: String,
    data: serde_json::Value,
}

fn decode(entry: &TableEntry) -> Result<Vec<f64>, TableError> {
    match entry.encoding.as_str() {
        "base64-f64le" => {
            let text = entry
                .data
                .as_str()
                .ok_or_else(|| TableError::SchemaError("base64 payload must be a string".into()))?;
            let bytes = base64::engine::general_purpose::STANDARD
                .decode(text)
                .map_err(|e| TableError::SchemaError(format!("bad base64 payload: {e}")))?;
            if bytes.len() % 8 != 0 {
                return Err(TableError::SchemaError("payload length is not a multiple of 8".into()));
            }
            Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
        }
        "array" => {
            let arr = entry
                .data
                .as_array()
                .ok_or_else(|| TableError::SchemaError("array payload must be a JSON array".into()))?;
            arr.iter()
                .map(|v| v.as_f64().ok_or_else(|| TableError::SchemaError("non-numeric table value".into())))
                .collect()
        }
        other => Err(TableError::SchemaError(format!("unknown encoding `{other}`"))),
    }
}

fn same_temperature(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + a.abs())
}

/// Parses a table file and selects the `(corner, temperature)` entry.
pub fn parse_table(text: &str, corner: &str, temperature: f64) -> Result<InterpTable, TableError> {
    let file: TableFile = serde_json::from_str(text).map_err(|e| TableError::SchemaError(e.to_string()))?;
    if file.format != FORMAT_TAG {
        return Err(TableError::SchemaError(format!("unsupported format `{}`", file.format)));
    }
    let entry = file
        .tables
        .iter()
        .find(|t| t.corner == corner && same_temperature(t.temperature, temperature))
        .ok_or_else(|| TableError::TableNotFound {
            device: file.device.clone(),
            corner: corner.to_string(),
            temperature,
        })?;
    let data = decode(entry)?;
    InterpTable::new(file.device, file.axes, file.slabs, corner, temperature, data)
}

pub fn load_table(path: &Path, corner: &str, temperature: f64) -> Result<InterpTable, TableError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| TableError::Io { path: path.display().to_string(), message: e.to_string() })?;
    parse_table(&text, corner, temperature)
}

/// Serializes tables sharing device, axes and slabs into one file.
pub fn write_table_file(tables: &[InterpTable], base64: bool) -> Result<String, TableError> {
    let first = tables.first().ok_or_else(|| TableError::SchemaError("no tables to write".into()))?;
    let mut entries = Vec::with_capacity(tables.len());
    for t in tables {
        if t.device != first.device || t.axes != first.axes || t.slabs != first.slabs {
            return Err(TableError::SchemaError("tables in one file must share device, axes and slabs".into()));
        }
        let (encoding, data) = if base64 {
            let bytes: Vec<u8> = t.data.iter().flat_map(|v| v.to_le_bytes()).collect();
            ("base64-f64le", serde_json::Value::String(base64::engine::general_purpose::STANDARD.encode(bytes)))
        } else {
            let arr = t
                .data
                .iter()
                .map(|&v| {
                    serde_json::Number::from_f64(v)
                        .map(serde_json::Value::Number)
                        .ok_or_else(|| TableError::SchemaError("non-finite table value".into()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            ("array", serde_json::Value::Array(arr))
        };
        entries.push(TableEntry { corner: t.corner.clone(), temperature: t.temperature, encoding: encoding.into(), data });
    }
    let file = TableFile {
        format: FORMAT_TAG.into(),
        device: first.device.clone(),
        axes: first.axes.clone(),
        slabs: first.slabs.clone(),
        tables: entries,
    };
    serde_json::to_string(&file).map_err(|e| TableError::SchemaError(e.to_string()))
}
