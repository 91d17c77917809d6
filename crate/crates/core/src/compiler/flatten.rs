//! Flat element list with symbolic parameter trees.
//!
//! This is a second, hierarchy-free route to the circuit equations: every
//! element parameter is an expression over globals and submodel outputs, and
//! [`eval_flat`] differentiates it in forward mode. It shares no assembly code
//! with the graph executor and serves as its cross-check.

use std::collections::HashMap;
use std::sync::Arc;

use super::{ParamSlot, RuleSet, SubcircuitInstance};
use crate::elements::{self, Analysis, ElementKind};
use crate::graph::EvalError;
use crate::submodel::CompiledSubModel;
use crate::GND;

#[derive(Debug, Clone)]
pub enum ParamExpr {
    Const(f64),
    Global(usize),
    Intrinsic { call: Arc<SubModelCall>, output: usize },
}

#[derive(Debug)]
pub struct SubModelCall {
    pub path: String,
    pub model: Arc<CompiledSubModel>,
    /// Global signal indices of the owning frame.
    pub signals: Vec<usize>,
    pub ip: Vec<ParamExpr>,
}

#[derive(Debug, Clone)]
pub struct FlatElement {
    pub path: String,
    pub kind: ElementKind,
    pub nodes: Vec<usize>,
    pub params: Vec<ParamExpr>,
    pub galv: bool,
}

#[derive(Default)]
struct Out {
    elems: Vec<FlatElement>,
    calls: Vec<Arc<SubModelCall>>,
}

fn rec(rules: &RuleSet, inst: &SubcircuitInstance, path: &str, en: &[usize], ip: Vec<ParamExpr>, out: &mut Out) {
    let r = &rules.rules[inst.rule];
    let frame = inst.frame(en);
    let call = r.submodel.as_ref().map(|m| {
        Arc::new(SubModelCall { path: path.to_string(), model: m.clone(), signals: frame.clone(), ip: ip.clone() })
    });
    out.calls.extend(call.clone());
    let param = |k: usize| -> ParamExpr {
        match r.slot(k) {
            ParamSlot::Ip(j) => ip[j].clone(),
            ParamSlot::Intrinsic(l) => ParamExpr::Intrinsic { call: call.clone().expect("intrinsic slot needs a submodel"), output: l },
            ParamSlot::Global(j) => ParamExpr::Global(r.global_var_indices[j]),
            ParamSlot::Const(j) => ParamExpr::Const(r.constants[j]),
        }
    };
    let map = |s: usize| if s == GND { GND } else { frame[s] };
    for e in &r.basic_element_info {
        out.elems.push(FlatElement {
            path: format!("{path}.{}", e.name),
            kind: e.kind,
            nodes: e.nodes.iter().map(|&s| map(s)).collect(),
            params: e.params.iter().map(|&k| param(k)).collect(),
            galv: e.galv,
        });
    }
    for (c, info) in inst.subckts.iter().zip(&r.subckts_info) {
        let sub_en: Vec<usize> = info.nodes.iter().map(|&s| map(s)).collect();
        let sub_ip = info.params.iter().map(|&k| param(k)).collect();
        rec(rules, c, &format!("{path}.{}", info.name), &sub_en, sub_ip, out);
    }
}

/// Flattens the hierarchy below `top`, which must have no input parameters.
pub fn flatten(rules: &RuleSet, top: &SubcircuitInstance) -> Vec<FlatElement> {
    let mut out = Out::default();
    rec(rules, top, &rules.rules[top.rule].name, &[], Vec::new(), &mut out);
    out.elems
}

/// Every submodel invocation below `top`, in depth-first order.
pub fn submodel_calls(rules: &RuleSet, top: &SubcircuitInstance) -> Vec<Arc<SubModelCall>> {
    let mut out = Out::default();
    rec(rules, top, &rules.rules[top.rule].name, &[], Vec::new(), &mut out);
    out.calls
}

/// Intrinsic outputs of one call with gradients over `[x (n), globals]`.
/// In AC modes `x` is the bias point.
pub fn eval_call(
    call: &Arc<SubModelCall>,
    n: usize,
    x: &[f64],
    globals: &[f64],
    analysis: Analysis,
) -> Result<Vec<(f64, Vec<f64>)>, EvalError> {
    let mut ev = Evaluator { n, signals: x, globals, analysis, memo: HashMap::new() };
    ev.call(call)
}

/// Dense equations with all Jacobians; `*_dbias` is populated in AC modes,
/// where submodels read the bias point instead of `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatEval {
    pub q: Vec<f64>,
    pub f: Vec<f64>,
    pub dq_dx: Vec<Vec<f64>>,
    pub df_dx: Vec<Vec<f64>>,
    pub dq_dgv: Vec<Vec<f64>>,
    pub df_dgv: Vec<Vec<f64>>,
    pub dq_dbias: Vec<Vec<f64>>,
    pub df_dbias: Vec<Vec<f64>>,
}

/// Value and gradient over `[signal lanes (n), globals]`.
type Lane = (f64, Vec<f64>);

struct Evaluator<'a> {
    n: usize,
    signals: &'a [f64],
    globals: &'a [f64],
    analysis: Analysis,
    memo: HashMap<*const SubModelCall, Vec<Lane>>,
}

impl Evaluator<'_> {
    fn width(&self) -> usize {
        self.n + self.globals.len()
    }

    fn param(&mut self, p: &ParamExpr) -> Result<Lane, EvalError> {
        match p {
            ParamExpr::Const(c) => Ok((*c, vec![0.0; self.width()])),
            ParamExpr::Global(g) => {
                let mut d = vec![0.0; self.width()];
                d[self.n + g] = 1.0;
                Ok((self.globals[*g], d))
            }
            ParamExpr::Intrinsic { call, output } => {
                let key = Arc::as_ptr(call);
                if !self.memo.contains_key(&key) {
                    let lanes = self.call(call)?;
                    self.memo.insert(key, lanes);
                }
                Ok(self.memo[&key][*output].clone())
            }
        }
    }

    fn call(&mut self, call: &SubModelCall) -> Result<Vec<Lane>, EvalError> {
        let ips = call.ip.iter().map(|p| self.param(p)).collect::<Result<Vec<_>, _>>()?;
        let sig: Vec<f64> = call.signals.iter().map(|&g| if g == GND { 0.0 } else { self.signals[g] }).collect();
        let ipv: Vec<f64> = ips.iter().map(|l| l.0).collect();
        let mut ev = call.model.eval(&sig, &ipv).map_err(|e| EvalError::submodel(&call.path, e))?;
        if !call.model.active_in(self.analysis) && !self.analysis.is_ac() {
            ev.zero_jacobians();
        }
        let mut out = Vec::with_capacity(ev.intrp.len());
        for l in 0..ev.intrp.len() {
            let mut d = vec![0.0; self.width()];
            for (k, &g) in call.signals.iter().enumerate() {
                if g != GND {
                    d[g] += ev.j_s[l][k];
                }
            }
            for (j, lane) in ips.iter().enumerate() {
                let c = ev.j_ip[l][j];
                if c != 0.0 {
                    for (a, b) in d.iter_mut().zip(&lane.1) {
                        *a += c * b;
                    }
                }
            }
            out.push((ev.intrp[l], d));
        }
        Ok(out)
    }
}

/// Evaluates the flat element list. In AC modes `bias` drives the submodels.
pub fn eval_flat(
    elems: &[FlatElement],
    n: usize,
    x: &[f64],
    globals: &[f64],
    analysis: Analysis,
    bias: Option<&[f64]>,
) -> Result<FlatEval, EvalError> {
    let ng = globals.len();
    let signals = if analysis.is_ac() { bias.expect("AC evaluation needs a bias point") } else { x };
    let mut ev = Evaluator { n, signals, globals, analysis, memo: HashMap::new() };
    let zeros = |c: usize| vec![vec![0.0; c]; n];
    let mut out = FlatEval {
        q: vec![0.0; n],
        f: vec![0.0; n],
        dq_dx: zeros(n),
        df_dx: zeros(n),
        dq_dgv: zeros(ng),
        df_dgv: zeros(ng),
        dq_dbias: zeros(n),
        df_dbias: zeros(n),
    };
    for e in elems {
        let lanes = e.params.iter().map(|p| ev.param(p)).collect::<Result<Vec<_>, _>>()?;
        let vals: Vec<f64> = lanes.iter().map(|l| l.0).collect();
        let c = elements::stamp(e.kind, analysis, &e.nodes, &vals, x, e.galv).map_err(|err| EvalError::element(&e.path, err))?;
        for (r, v) in c.q {
            out.q[r] += v;
        }
        for (r, v) in c.f {
            out.f[r] += v;
        }
        for (r, col, v) in c.dq_dx {
            out.dq_dx[r][col] += v;
        }
        for (r, col, v) in c.df_dx {
            out.df_dx[r][col] += v;
        }
        let ac = analysis.is_ac();
        for (is_q, list) in [(true, &c.dq_dp), (false, &c.df_dp)] {
            for &(r, j, v) in list {
                for (lane, g) in lanes[j].1.iter().enumerate() {
                    if *g == 0.0 {
                        continue;
                    }
                    let target = if lane >= n {
                        if is_q { &mut out.dq_dgv[r][lane - n] } else { &mut out.df_dgv[r][lane - n] }
                    } else if ac {
                        if is_q { &mut out.dq_dbias[r][lane] } else { &mut out.df_dbias[r][lane] }
                    } else if is_q {
                        &mut out.dq_dx[r][lane]
                    } else {
                        &mut out.df_dx[r][lane]
                    };
                    *target += v * g;
                }
            }
        }
    }
    Ok(out)
}
