//! A compiled, instantiated top-level circuit and its parameter targets.

use crate::compiler::{self, CompileError, CompiledRule, RuleSet, SubcircuitInstance};
use crate::elements::Analysis;
use crate::graph::{self, EvalError, EvalRequest, EvalResult, Wanted};
use crate::netlist::NetlistDocument;
use crate::par::Exec;
use crate::sparse::SparseMat;
use crate::submodel::TableContext;
use crate::GND;

#[derive(Debug, Clone)]
pub struct Circuit {
    pub rules: RuleSet,
    pub top: SubcircuitInstance,
    /// Number of unknowns.
    pub n: usize,
    pub names: Vec<String>,
    /// Current values of the netlist's Globals.
    pub globals: Vec<f64>,
    pub nodeset: Vec<(usize, f64)>,
    pub exec: Exec,
}

/// A parameter the equations can be differentiated against.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Global(usize),
    /// Input parameter `param` of the instance at `path` (below the top).
    Ip { path: Vec<usize>, param: usize },
}

/// An instance located inside the hierarchy, with its bindings.
#[derive(Debug, Clone)]
pub struct Located<'a> {
    pub inst: &'a SubcircuitInstance,
    pub rule: &'a CompiledRule,
    pub en: Vec<usize>,
    pub ip: Vec<f64>,
}

impl Circuit {
    pub fn build(doc: &NetlistDocument, tables: Option<TableContext<'_>>) -> Result<Self, CompileError> {
        let rules = compiler::compile_rules(doc, tables)?;
        let (top, n) = compiler::instantiate(&rules, &doc.top, 0)?;
        if !rules.rules[top.rule].input_params.is_empty() {
            return Err(CompileError::TopHasInputParams(doc.top.clone()));
        }
        let names = compiler::signal_names(&rules, &top, n);
        let nodeset = doc
            .nodeset
            .iter()
            .map(|(k, v)| {
                names.iter().position(|s| s == k).map(|i| (i, *v)).ok_or_else(|| CompileError::UnknownSignal(k.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let globals = rules.global_values.clone();
        Ok(Self { rules, top, n, names, globals, nodeset, exec: Exec::default() })
    }

    pub fn signal_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|s| s == name)
    }

    pub fn global_index(&self, name: &str) -> Option<usize> {
        self.rules.global_names.iter().position(|s| s == name)
    }

    pub fn top_name(&self) -> &str {
        &self.rules.rules[self.top.rule].name
    }

    /// Zeros overlaid with the NodeSet hints.
    pub fn initial_guess(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.n];
        for &(i, v) in &self.nodeset {
            x[i] = v;
        }
        x
    }

    pub fn request<'a>(&'a self, x: &'a [f64], analysis: Analysis, wanted: Wanted) -> EvalRequest<'a> {
        EvalRequest::new(x, analysis, &self.globals).with_wanted(wanted).with_exec(self.exec)
    }

    pub fn eval(&self, x: &[f64], analysis: Analysis, wanted: Wanted) -> Result<EvalResult, EvalError> {
        graph::eval_top(&self.rules, &self.top, &self.request(x, analysis, wanted))
    }

    /// AC-mode evaluation: `probe` is the small-signal vector, `bias` the DC point.
    pub fn eval_ac(&self, probe: &[f64], bias: &[f64], analysis: Analysis, wanted: Wanted) -> Result<EvalResult, EvalError> {
        let req = self.request(probe, analysis, wanted).with_bias(bias);
        graph::eval_top(&self.rules, &self.top, &req)
    }

    /// Resolves `name` as a Global or as `<instance path>.<input param>`.
    pub fn target(&self, name: &str) -> Option<Target> {
        if let Some(g) = self.global_index(name) {
            return Some(Target::Global(g));
        }
        let (path, param) = name.rsplit_once('.')?;
        let route = self.route(path)?;
        let inst = self.instance(&route);
        let p = self.rules.rules[inst.rule].input_params.iter().position(|s| s == param)?;
        Some(Target::Ip { path: route, param: p })
    }

    /// Child indices leading to the dotted instance path below the top.
    pub fn route(&self, path: &str) -> Option<Vec<usize>> {
        let mut inst = &self.top;
        let mut route = Vec::new();
        for seg in path.split('.') {
            let rule = &self.rules.rules[inst.rule];
            let k = rule.subckts_info.iter().position(|c| c.name == seg)?;
            route.push(k);
            inst = &inst.subckts[k];
        }
        Some(route)
    }

    pub fn instance(&self, route: &[usize]) -> &SubcircuitInstance {
        route.iter().fold(&self.top, |inst, &k| &inst.subckts[k])
    }

    pub fn target_name(&self, t: &Target) -> String {
        match t {
            Target::Global(g) => self.rules.global_names[*g].clone(),
            Target::Ip { path, param } => {
                let mut inst = &self.top;
                let mut parts = Vec::new();
                for &k in path {
                    parts.push(self.rules.rules[inst.rule].subckts_info[k].name.clone());
                    inst = &inst.subckts[k];
                }
                parts.push(self.rules.rules[inst.rule].input_params[*param].clone());
                parts.join(".")
            }
        }
    }

    /// Walks `path` from the top, evaluating the frames on the way so the
    /// located instance's input parameters are known. `signals` is `x`, or the
    /// bias point in AC modes.
    pub fn locate(&self, path: &[usize], signals: &[f64], analysis: Analysis) -> Result<Located<'_>, EvalError> {
        let mut inst = &self.top;
        let mut en: Vec<usize> = Vec::new();
        let mut ip: Vec<f64> = Vec::new();
        for &k in path {
            let rule = &self.rules.rules[inst.rule];
            let nodes = inst.frame(&en);
            let (_, params) = graph::frame_params(rule, &nodes, &ip, signals, &self.globals, analysis)?;
            let info = &rule.subckts_info[k];
            en = info.nodes.iter().map(|&s| if s == GND { GND } else { nodes[s] }).collect();
            ip = info.params.iter().map(|&j| params[j]).collect();
            inst = &inst.subckts[k];
        }
        Ok(Located { inst, rule: &self.rules.rules[inst.rule], en, ip })
    }

    /// `(∂Q/∂p, ∂F/∂p)` as N×|targets| matrices. `top` must be an evaluation at
    /// the same point with `gv` gradients enabled.
    pub fn target_jacobians(
        &self,
        top: &EvalResult,
        targets: &[Target],
        x: &[f64],
        bias: Option<&[f64]>,
        analysis: Analysis,
    ) -> Result<(SparseMat, SparseMat), EvalError> {
        let mut dq = Vec::new();
        let mut df = Vec::new();
        let column = |m: &SparseMat, src: usize, dst: usize, out: &mut Vec<(usize, usize, f64)>| {
            out.extend(m.entries.iter().filter(|e| e.1 == src).map(|e| (e.0, dst, e.2)));
        };
        for (t, target) in targets.iter().enumerate() {
            match target {
                Target::Global(g) => {
                    column(&top.dq_dgv, *g, t, &mut dq);
                    column(&top.df_dgv, *g, t, &mut df);
                }
                Target::Ip { path, param } => {
                    let signals = bias.unwrap_or(x);
                    let loc = self.locate(path, signals, analysis)?;
                    let mut req = self.request(x, analysis, Wanted { gv: false, ip: true });
                    if let Some(b) = bias {
                        req = req.with_bias(b);
                    }
                    let r = graph::eval(&self.rules, loc.inst, &loc.en, &loc.ip, &req)
                        .map_err(|e| e.prefixed(&self.target_name(target)))?;
                    column(&r.dq_dip, *param, t, &mut dq);
                    column(&r.df_dip, *param, t, &mut df);
                }
            }
        }
        let nt = targets.len();
        Ok((SparseMat::from_triplets(self.n, nt, dq), SparseMat::from_triplets(self.n, nt, df)))
    }

    /// Current value of a target parameter.
    pub fn target_value(&self, t: &Target, x: &[f64], analysis: Analysis) -> Result<f64, EvalError> {
        match t {
            Target::Global(g) => Ok(self.globals[*g]),
            Target::Ip { path, param } => Ok(self.locate(path, x, analysis)?.ip[*param]),
        }
    }
}
