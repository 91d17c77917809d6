//! Computational-graph executor.
//!
//! Each subcircuit instance is one compute unit. A call assembles the frame
//! nodes, evaluates the submodel, builds the parameter frame
//! `[ip, intrp, gv, c]`, evaluates children and element stamps, sums their
//! remainders and routes their parameter gradients back through the frame:
//! constants are dropped, `ip`/`gv` slots are forwarded, and an intrinsic slot
//! `l` with gradient column `g` adds `J_s[l]⊗g` to the signal gradient and
//! `J_ip[l]⊗g` to the input-parameter gradient.

use thiserror::Error;

use crate::compiler::{CompiledRule, ParamSlot, RuleSet, SubcircuitInstance};
use crate::elements::{self, Analysis, ElementError};
use crate::par::Exec;
use crate::sparse::{SparseMat, SparseVec};
use crate::submodel::{SubModelError, SubModelEval};
use crate::GND;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EvalFailure {
    #[error(transparent)]
    SubModel(SubModelError),
    #[error(transparent)]
    Element(ElementError),
}

#[derive(Debug, Clone, Error, PartialEq)]
#[error("{path}: {failure}")]
pub struct EvalError {
    pub path: String,
    pub failure: EvalFailure,
}

impl EvalError {
    pub(crate) fn submodel(path: &str, e: SubModelError) -> Self {
        Self { path: path.to_string(), failure: EvalFailure::SubModel(e) }
    }

    pub(crate) fn element(path: &str, e: ElementError) -> Self {
        Self { path: path.to_string(), failure: EvalFailure::Element(e) }
    }

    /// Prepends `name` to the instance path.
    pub fn prefixed(self, name: &str) -> Self {
        self.within(name)
    }

    fn within(mut self, name: &str) -> Self {
        self.path = if self.path.is_empty() { name.to_string() } else { format!("{name}.{}", self.path) };
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Wanted {
    pub gv: bool,
    pub ip: bool,
}

impl Wanted {
    pub const ALL: Wanted = Wanted { gv: true, ip: true };
    pub const NONE: Wanted = Wanted { gv: false, ip: false };
}

#[derive(Debug, Clone, Copy)]
pub struct EvalRequest<'a> {
    /// Signal vector. In AC modes this is the small-signal probe point.
    pub x: &'a [f64],
    /// Bias point for submodels in AC modes.
    pub bias: Option<&'a [f64]>,
    pub analysis: Analysis,
    pub globals: &'a [f64],
    pub wanted: Wanted,
    pub exec: Exec,
}

impl<'a> EvalRequest<'a> {
    pub fn new(x: &'a [f64], analysis: Analysis, globals: &'a [f64]) -> Self {
        Self { x, bias: None, analysis, globals, wanted: Wanted::ALL, exec: Exec::Sequential }
    }

    pub fn with_bias(mut self, bias: &'a [f64]) -> Self {
        self.bias = Some(bias);
        self
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn with_wanted(mut self, wanted: Wanted) -> Self {
        self.wanted = wanted;
        self
    }

    pub(crate) fn signals(&self) -> &'a [f64] {
        if self.analysis.is_ac() {
            self.bias.expect("AC evaluation needs a bias point")
        } else {
            self.x
        }
    }
}

/// The eight remainder/gradient items, plus the bias gradients of AC modes.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub q: SparseVec,
    pub f: SparseVec,
    pub dq_dx: SparseMat,
    pub df_dx: SparseMat,
    pub dq_dgv: SparseMat,
    pub df_dgv: SparseMat,
    pub dq_dip: SparseMat,
    pub df_dip: SparseMat,
    pub dq_dbias: SparseMat,
    pub df_dbias: SparseMat,
}

#[derive(Debug, Default)]
struct Acc {
    q: Vec<(usize, f64)>,
    f: Vec<(usize, f64)>,
    dq_dx: Vec<(usize, usize, f64)>,
    df_dx: Vec<(usize, usize, f64)>,
    dq_dgv: Vec<(usize, usize, f64)>,
    df_dgv: Vec<(usize, usize, f64)>,
    dq_dip: Vec<(usize, usize, f64)>,
    df_dip: Vec<(usize, usize, f64)>,
    dq_dbias: Vec<(usize, usize, f64)>,
    df_dbias: Vec<(usize, usize, f64)>,
}

impl Acc {
    fn absorb_direct(&mut self, other: &mut Acc) {
        self.q.append(&mut other.q);
        self.f.append(&mut other.f);
        self.dq_dx.append(&mut other.dq_dx);
        self.df_dx.append(&mut other.df_dx);
        self.dq_dgv.append(&mut other.dq_dgv);
        self.df_dgv.append(&mut other.df_dgv);
        self.dq_dbias.append(&mut other.dq_dbias);
        self.df_dbias.append(&mut other.df_dbias);
    }
}

struct Frame<'a> {
    rule: &'a CompiledRule,
    nodes: Vec<usize>,
    sm: Option<SubModelEval>,
    ac: bool,
}

impl Frame<'_> {
    /// Routes gradient entry `(row, slot, g)` of a frame parameter.
    fn route(&self, acc: &mut Acc, is_q: bool, row: usize, slot: usize, g: f64) {
        match self.rule.slot(slot) {
            ParamSlot::Const(_) => {}
            ParamSlot::Ip(k) => (if is_q { &mut acc.dq_dip } else { &mut acc.df_dip }).push((row, k, g)),
            ParamSlot::Global(k) => {
                let gi = self.rule.global_var_indices[k];
                (if is_q { &mut acc.dq_dgv } else { &mut acc.df_dgv }).push((row, gi, g));
            }
            ParamSlot::Intrinsic(l) => {
                let ev = self.sm.as_ref().expect("intrinsic slot without submodel");
                let sig = match (is_q, self.ac) {
                    (true, false) => &mut acc.dq_dx,
                    (false, false) => &mut acc.df_dx,
                    (true, true) => &mut acc.dq_dbias,
                    (false, true) => &mut acc.df_dbias,
                };
                for (s, &js) in ev.j_s[l].iter().enumerate() {
                    let col = self.nodes[s];
                    if js != 0.0 && col != GND {
                        sig.push((row, col, js * g));
                    }
                }
                let dip = if is_q { &mut acc.dq_dip } else { &mut acc.df_dip };
                for (k, &jp) in ev.j_ip[l].iter().enumerate() {
                    if jp != 0.0 {
                        dip.push((row, k, jp * g));
                    }
                }
            }
        }
    }
}

/// Evaluates the submodel of `inst` and assembles its parameter frame.
pub(crate) fn frame_params(
    rule: &CompiledRule,
    nodes: &[usize],
    ip: &[f64],
    signals: &[f64],
    globals: &[f64],
    analysis: Analysis,
) -> Result<(Option<SubModelEval>, Vec<f64>), EvalError> {
    let read = |g: usize| if g == GND { 0.0 } else { signals[g] };
    let sm = match &rule.submodel {
        None => None,
        Some(m) => {
            let sig: Vec<f64> = nodes.iter().map(|&g| read(g)).collect();
            let mut ev = m.eval(&sig, ip).map_err(|e| EvalError::submodel("", e))?;
            if !m.active_in(analysis) && !analysis.is_ac() {
                ev.zero_jacobians();
            }
            Some(ev)
        }
    };
    let mut params: Vec<f64> = Vec::with_capacity(rule.n_params());
    params.extend_from_slice(ip);
    if let Some(ev) = &sm {
        params.extend_from_slice(&ev.intrp);
    }
    params.extend(rule.global_var_indices.iter().map(|&g| globals[g]));
    params.extend_from_slice(&rule.constants);
    Ok((sm, params))
}

fn eval_rec(
    rules: &RuleSet,
    inst: &SubcircuitInstance,
    en: &[usize],
    ip: &[f64],
    req: &EvalRequest<'_>,
) -> Result<Acc, EvalError> {
    let rule = &rules.rules[inst.rule];
    let nodes = inst.frame(en);
    let (sm, params) = frame_params(rule, &nodes, ip, req.signals(), req.globals, req.analysis)?;

    let frame = Frame { rule, nodes, sm, ac: req.analysis.is_ac() };
    let map = |s: usize| if s == GND { GND } else { frame.nodes[s] };
    let mut acc = Acc::default();

    let children: Vec<(&SubcircuitInstance, &crate::compiler::ChildInfo)> =
        inst.subckts.iter().zip(&rule.subckts_info).collect();
    let results = req.exec.map(&children, |(child, info)| {
        let sub_en: Vec<usize> = info.nodes.iter().map(|&s| map(s)).collect();
        let sub_ip: Vec<f64> = info.params.iter().map(|&k| params[k]).collect();
        eval_rec(rules, child, &sub_en, &sub_ip, req).map_err(|e| e.within(&info.name))
    });
    for ((_, info), res) in children.iter().zip(results) {
        let mut c = res?;
        acc.absorb_direct(&mut c);
        for &(r, j, g) in &c.dq_dip {
            frame.route(&mut acc, true, r, info.params[j], g);
        }
        for &(r, j, g) in &c.df_dip {
            frame.route(&mut acc, false, r, info.params[j], g);
        }
    }

    for e in &rule.basic_element_info {
        let enodes: Vec<usize> = e.nodes.iter().map(|&s| map(s)).collect();
        let evals: Vec<f64> = e.params.iter().map(|&k| params[k]).collect();
        let c = elements::stamp(e.kind, req.analysis, &enodes, &evals, req.x, e.galv)
            .map_err(|err| EvalError::element(&e.name, err))?;
        acc.q.extend(c.q);
        acc.f.extend(c.f);
        acc.dq_dx.extend(c.dq_dx);
        acc.df_dx.extend(c.df_dx);
        for (r, j, g) in c.dq_dp {
            frame.route(&mut acc, true, r, e.params[j], g);
        }
        for (r, j, g) in c.df_dp {
            frame.route(&mut acc, false, r, e.params[j], g);
        }
    }
    Ok(acc)
}

/// Evaluates `inst` with external bindings `en` and input parameters `ip`.
pub fn eval(
    rules: &RuleSet,
    inst: &SubcircuitInstance,
    en: &[usize],
    ip: &[f64],
    req: &EvalRequest<'_>,
) -> Result<EvalResult, EvalError> {
    let rule = &rules.rules[inst.rule];
    assert_eq!(en.len(), rule.external_nodes.len(), "external node count");
    assert_eq!(ip.len(), rule.input_params.len(), "input parameter count");
    let n = req.x.len();
    let ng = req.globals.len();
    let nip = ip.len();
    let acc = eval_rec(rules, inst, en, ip, req)?;
    let keep = |on: bool, t: Vec<(usize, usize, f64)>| if on { t } else { Vec::new() };
    Ok(EvalResult {
        q: SparseVec::from_pairs(n, acc.q),
        f: SparseVec::from_pairs(n, acc.f),
        dq_dx: SparseMat::from_triplets(n, n, acc.dq_dx),
        df_dx: SparseMat::from_triplets(n, n, acc.df_dx),
        dq_dgv: SparseMat::from_triplets(n, ng, keep(req.wanted.gv, acc.dq_dgv)),
        df_dgv: SparseMat::from_triplets(n, ng, keep(req.wanted.gv, acc.df_dgv)),
        dq_dip: SparseMat::from_triplets(n, nip, keep(req.wanted.ip, acc.dq_dip)),
        df_dip: SparseMat::from_triplets(n, nip, keep(req.wanted.ip, acc.df_dip)),
        dq_dbias: SparseMat::from_triplets(n, n, acc.dq_dbias),
        df_dbias: SparseMat::from_triplets(n, n, acc.df_dbias),
    })
}

/// Evaluates a closed top-level circuit.
pub fn eval_top(rules: &RuleSet, top: &SubcircuitInstance, req: &EvalRequest<'_>) -> Result<EvalResult, EvalError> {
    let name = &rules.rules[top.rule].name;
    eval(rules, top, &[], &[], req).map_err(|e| e.within(name))
}
