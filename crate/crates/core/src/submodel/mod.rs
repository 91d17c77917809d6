//! Behavioural side of a module: intrinsic parameters and their Jacobians.

pub mod expr;
pub mod synth;
pub mod table;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::elements::Analysis;
use crate::netlist::{AnalysisTag, SubModelBody, SubModelSpec};
use expr::{Expr, ExprError};
pub use table::{InterpTable, TableError};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SubModelError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("{0}")]
    Binding(String),
    #[error("{expected} intrinsic parameters declared, submodel produces {found}")]
    IntrinsicCount { expected: usize, found: usize },
    #[error("intrinsic parameter {name} evaluated to {value}")]
    NonFinite { name: String, value: f64 },
}

impl SubModelError {
    pub fn name(&self) -> &'static str {
        match self {
            SubModelError::Expr(_) => "ExprError",
            SubModelError::Table(e) => e.name(),
            SubModelError::Binding(_) => "BindingError",
            SubModelError::IntrinsicCount { .. } => "IntrinsicCountMismatch",
            SubModelError::NonFinite { .. } => "NonFiniteIntrinsic",
        }
    }
}

/// Supplies device tables for a process corner and temperature.
pub trait TableSource: Send + Sync {
    fn table(&self, device: &str, corner: &str, temperature: f64) -> Result<Arc<InterpTable>, TableError>;
}

type CacheKey = (String, String, u64);

fn key(device: &str, corner: &str, temperature: f64) -> CacheKey {
    (device.to_string(), corner.to_string(), temperature.to_bits())
}

/// Reads `<dir>/<device>.json` table files.
#[derive(Debug)]
pub struct DirTableSource {
    dir: PathBuf,
    cache: Mutex<HashMap<CacheKey, Arc<InterpTable>>>,
}

impl DirTableSource {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into(), cache: Mutex::new(HashMap::new()) }
    }
}

impl TableSource for DirTableSource {
    fn table(&self, device: &str, corner: &str, temperature: f64) -> Result<Arc<InterpTable>, TableError> {
        let k = key(device, corner, temperature);
        if let Some(t) = self.cache.lock().expect("table cache").get(&k) {
            return Ok(t.clone());
        }
        let t = Arc::new(table::load_table(&self.dir.join(format!("{device}.json")), corner, temperature)?);
        self.cache.lock().expect("table cache").insert(k, t.clone());
        Ok(t)
    }
}

/// Generates the shipped synthetic MOS tables on demand.
#[derive(Debug, Default)]
pub struct SynthTableSource {
    cache: Mutex<HashMap<CacheKey, Arc<InterpTable>>>,
}

impl TableSource for SynthTableSource {
    fn table(&self, device: &str, corner: &str, temperature: f64) -> Result<Arc<InterpTable>, TableError> {
        let k = key(device, corner, temperature);
        if let Some(t) = self.cache.lock().expect("table cache").get(&k) {
            return Ok(t.clone());
        }
        let not_found =
            || TableError::TableNotFound { device: device.into(), corner: corner.into(), temperature };
        let pol = synth::device_polarity(device).ok_or_else(not_found)?;
        if !synth::TEMPERATURES.contains(&temperature) {
            return Err(not_found());
        }
        let t = Arc::new(synth::mos_table(device, pol, corner, temperature)?);
        self.cache.lock().expect("table cache").insert(k, t.clone());
        Ok(t)
    }
}

/// Fixed set of in-memory tables.
#[derive(Debug, Default)]
pub struct MemoryTables {
    tables: HashMap<CacheKey, Arc<InterpTable>>,
}

impl MemoryTables {
    pub fn insert(&mut self, t: InterpTable) {
        self.tables.insert(key(&t.device, &t.corner, t.temperature), Arc::new(t));
    }
}

impl TableSource for MemoryTables {
    fn table(&self, device: &str, corner: &str, temperature: f64) -> Result<Arc<InterpTable>, TableError> {
        self.tables.get(&key(device, corner, temperature)).cloned().ok_or_else(|| TableError::TableNotFound {
            device: device.into(),
            corner: corner.into(),
            temperature,
        })
    }
}

/// Table selection used while compiling submodels.
#[derive(Clone, Copy)]
pub struct TableContext<'a> {
    pub source: &'a dyn TableSource,
    pub corner: &'a str,
    pub temperature: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Input {
    Signal(usize),
    Ip(usize),
}

#[derive(Debug, Clone)]
enum Payload {
    Expr(Vec<Expr>),
    Table {
        table: Arc<InterpTable>,
        /// Each table axis is a signed sum of module inputs.
        axes: Vec<Vec<(Input, f64)>>,
        slabs: Vec<usize>,
    },
}

#[derive(Debug, Clone)]
pub struct CompiledSubModel {
    pub n_signals: usize,
    pub n_ip: usize,
    pub intrinsic: Vec<String>,
    pub analyses: Option<Vec<AnalysisTag>>,
    payload: Payload,
}

/// Intrinsic parameters with `j_s[l][k] = ∂intrp_l/∂signal_k` and
/// `j_ip[l][k] = ∂intrp_l/∂ip_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubModelEval {
    pub intrp: Vec<f64>,
    pub j_s: Vec<Vec<f64>>,
    pub j_ip: Vec<Vec<f64>>,
}

impl SubModelEval {
    pub fn zero_jacobians(&mut self) {
        for row in self.j_s.iter_mut().chain(self.j_ip.iter_mut()) {
            row.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// Axis bindings used by `lut.MosLookup` loaders.
pub fn default_mos_axes(device: &str) -> Vec<(String, String)> {
    let p = matches!(synth::device_polarity(device), Some(synth::Polarity::P)) || device.starts_with('P');
    let pairs: [(&str, &str); 5] = if p {
        [
            ("Vgs", "source-gate"),
            ("Vds", "source-drain"),
            ("Vsb", "bulk-source"),
            ("MosL", "MosL"),
            ("MosW", "MosW"),
        ]
    } else {
        [
            ("Vgs", "gate-source"),
            ("Vds", "drain-source"),
            ("Vsb", "source-bulk"),
            ("MosL", "MosL"),
            ("MosW", "MosW"),
        ]
    };
    pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
}

fn resolve_input(name: &str, signals: &[String], ip: &[String]) -> Option<Input> {
    if let Some(k) = signals.iter().position(|s| s == name) {
        return Some(Input::Signal(k));
    }
    ip.iter().position(|s| s == name).map(Input::Ip)
}

fn parse_binding(binding: &str, signals: &[String], ip: &[String]) -> Result<Vec<(Input, f64)>, SubModelError> {
    let parts: Vec<&str> = binding.split('-').map(str::trim).collect();
    if parts.len() > 2 || parts.iter().any(|p| p.is_empty()) {
        return Err(SubModelError::Binding(format!("axis binding `{binding}` must be `a` or `a-b`")));
    }
    let mut out = Vec::new();
    for (k, p) in parts.iter().enumerate() {
        let inp = resolve_input(p, signals, ip)
            .ok_or_else(|| SubModelError::Binding(format!("axis binding `{binding}` names unknown `{p}`")))?;
        out.push((inp, if k == 0 { 1.0 } else { -1.0 }));
    }
    Ok(out)
}

/// Compiles a submodel against the owning module's signal and parameter names.
pub fn compile(
    spec: &SubModelSpec,
    signal_names: &[String],
    ip_names: &[String],
    tables: Option<TableContext<'_>>,
) -> Result<CompiledSubModel, SubModelError> {
    let payload = match &spec.body {
        SubModelBody::Expr(src) => {
            let ast = expr::parse_list(src)?;
            if ast.len() != spec.intrinsic_params.len() {
                return Err(SubModelError::IntrinsicCount { expected: spec.intrinsic_params.len(), found: ast.len() });
            }
            let lookup = |n: &str| match resolve_input(n, signal_names, ip_names)? {
                Input::Signal(k) => Some(k),
                Input::Ip(k) => Some(signal_names.len() + k),
            };
            Payload::Expr(ast.iter().map(|a| a.resolve(&lookup)).collect::<Result<_, _>>()?)
        }
        SubModelBody::Table { device, axes } => {
            let ctx = tables.ok_or_else(|| SubModelError::Binding("no table source configured".into()))?;
            let table = ctx.source.table(device, ctx.corner, ctx.temperature)?;
            let bindings = axes.clone().unwrap_or_else(|| default_mos_axes(device));
            let mut bound = Vec::with_capacity(table.axes.len());
            for a in &table.axes {
                let b = bindings
                    .iter()
                    .find(|(n, _)| *n == a.name)
                    .ok_or_else(|| SubModelError::Binding(format!("table axis `{}` is not bound", a.name)))?;
                bound.push(parse_binding(&b.1, signal_names, ip_names)?);
            }
            if let Some((n, _)) = bindings.iter().find(|(n, _)| table.axis_index(n).is_none()) {
                return Err(SubModelError::Binding(format!("device {device} has no axis `{n}`")));
            }
            let slabs = spec
                .intrinsic_params
                .iter()
                .map(|p| {
                    table.slab_index(p).ok_or_else(|| {
                        TableError::TableShapeError(format!("device {device} has no slab for `{p}`")).into()
                    })
                })
                .collect::<Result<Vec<_>, SubModelError>>()?;
            Payload::Table { table, axes: bound, slabs }
        }
    };
    Ok(CompiledSubModel {
        n_signals: signal_names.len(),
        n_ip: ip_names.len(),
        intrinsic: spec.intrinsic_params.clone(),
        analyses: spec.analyses.clone(),
        payload,
    })
}

impl CompiledSubModel {
    /// Whether the submodel's Jacobians take part under `analysis`.
    pub fn active_in(&self, analysis: Analysis) -> bool {
        let tag = match analysis {
            Analysis::Dc => AnalysisTag::Dc,
            Analysis::Tran => AnalysisTag::Tran,
            Analysis::AcBuild | Analysis::AcStimulus => AnalysisTag::Ac,
        };
        self.analyses.as_ref().is_none_or(|a| a.contains(&tag))
    }

    pub fn is_table(&self) -> bool {
        matches!(self.payload, Payload::Table { .. })
    }

    pub fn eval(&self, signals: &[f64], ip: &[f64]) -> Result<SubModelEval, SubModelError> {
        assert_eq!(signals.len(), self.n_signals, "signal count");
        assert_eq!(ip.len(), self.n_ip, "input parameter count");
        let n = self.intrinsic.len();
        let mut out = SubModelEval {
            intrp: vec![0.0; n],
            j_s: vec![vec![0.0; self.n_signals]; n],
            j_ip: vec![vec![0.0; self.n_ip]; n],
        };
        match &self.payload {
            Payload::Expr(progs) => {
                let inputs: Vec<f64> = signals.iter().chain(ip).copied().collect();
                for (l, p) in progs.iter().enumerate() {
                    let d = p.eval(&inputs)?;
                    out.intrp[l] = d.v;
                    out.j_s[l].copy_from_slice(&d.d[..self.n_signals]);
                    out.j_ip[l].copy_from_slice(&d.d[self.n_signals..]);
                }
            }
            Payload::Table { table, axes, slabs } => {
                let read = |i: &Input| match *i {
                    Input::Signal(k) => signals[k],
                    Input::Ip(k) => ip[k],
                };
                let q: Vec<f64> = axes.iter().map(|terms| terms.iter().map(|(i, c)| c * read(i)).sum()).collect();
                let e = table.eval(&q, Some(slabs))?;
                for l in 0..n {
                    out.intrp[l] = e.values[l];
                    for (a, terms) in axes.iter().enumerate() {
                        let g = e.grads[l][a];
                        for (i, c) in terms {
                            match *i {
                                Input::Signal(k) => out.j_s[l][k] += c * g,
                                Input::Ip(k) => out.j_ip[l][k] += c * g,
                            }
                        }
                    }
                }
            }
        }
        for (l, v) in out.intrp.iter().enumerate() {
            let jac_ok = out.j_s[l].iter().chain(&out.j_ip[l]).all(|g| g.is_finite());
            if !v.is_finite() || !jac_ok {
                return Err(SubModelError::NonFinite { name: self.intrinsic[l].clone(), value: *v });
            }
        }
        Ok(out)
    }
}
