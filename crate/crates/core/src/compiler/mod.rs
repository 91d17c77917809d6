//! Rule compilation and recursive instantiation.
//!
//! Every module frame lists its nodes as `[external, internal]`, where the
//! internal part is the declared internal nodes followed by one branch-current
//! node per element that needs it. Parameters are addressed through the frame
//! `[ip, intrp, gv, c]`.

mod flatten;

use std::fmt::Write as _;
use std::sync::Arc;

use thiserror::Error;

use crate::elements::{self, ElementKind, GalvRule};
use crate::netlist::{galv_node_name, Diagnostic, NetlistDocument, ParamValue, Severity, GND_NAME};
use crate::submodel::{self, CompiledSubModel, SubModelError, TableContext};
use crate::GND;

pub use flatten::{eval_call, eval_flat, flatten, submodel_calls, FlatElement, FlatEval, ParamExpr, SubModelCall};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum CompileError {
    #[error("netlist has {} static error(s); first: {}", .0.len(), .0[0])]
    Invalid(Vec<Diagnostic>),
    #[error("{module}.{instance}: `{master}` has no port `{port}`")]
    ElementUnknownPort { module: String, instance: String, master: String, port: String },
    #[error("{module}.{instance}: cannot resolve parameter `{param}`")]
    ParamResolutionError { module: String, instance: String, param: String },
    #[error("top module `{0}` must not have external nodes")]
    TopHasExternalNodes(String),
    #[error("top module `{0}` must not have input parameters")]
    TopHasInputParams(String),
    #[error("unknown module `{0}`")]
    UnknownModule(String),
    #[error("NodeSet names unknown signal `{0}`")]
    UnknownSignal(String),
    #[error("submodel of {module}: {source}")]
    SubModel { module: String, source: SubModelError },
}

impl CompileError {
    pub fn name(&self) -> &'static str {
        match self {
            CompileError::Invalid(d) => d[0].code.as_str(),
            CompileError::ElementUnknownPort { .. } => "ElementUnknownPort",
            CompileError::ParamResolutionError { .. } => "ParamResolutionError",
            CompileError::TopHasExternalNodes(_) => "TopHasExternalNodes",
            CompileError::TopHasInputParams(_) => "TopHasInputParams",
            CompileError::UnknownModule(_) => "UnknownModule",
            CompileError::UnknownSignal(_) => "UnknownSignal",
            CompileError::SubModel { source, .. } => source.name(),
        }
    }
}

/// Where a parameter-frame slot comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamSlot {
    Ip(usize),
    Intrinsic(usize),
    /// Position in the rule's `global_var_indices`.
    Global(usize),
    Const(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChildInfo {
    pub name: String,
    pub rule: usize,
    /// Frame slots bound to the child's external nodes (`GND` for ground).
    pub nodes: Vec<usize>,
    /// Frame slots feeding the child's input parameters.
    pub params: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElementInfo {
    pub name: String,
    pub kind: ElementKind,
    /// Port slots in catalog order, then the branch-current slot if `galv`.
    pub nodes: Vec<usize>,
    pub params: Vec<usize>,
    pub galv: bool,
}

#[derive(Debug, Clone)]
pub struct CompiledRule {
    pub name: String,
    pub external_nodes: Vec<String>,
    /// Declared internal nodes followed by branch-current nodes.
    pub internal_nodes: Vec<String>,
    pub input_params: Vec<String>,
    pub intrinsic_params: Vec<String>,
    pub constants: Vec<f64>,
    /// Indices into the document's globals.
    pub global_var_indices: Vec<usize>,
    pub submodel: Option<Arc<CompiledSubModel>>,
    pub subckts_info: Vec<ChildInfo>,
    pub basic_element_info: Vec<ElementInfo>,
}

impl CompiledRule {
    pub fn n_nodes(&self) -> usize {
        self.external_nodes.len() + self.internal_nodes.len()
    }

    pub fn n_params(&self) -> usize {
        self.input_params.len() + self.intrinsic_params.len() + self.global_var_indices.len() + self.constants.len()
    }

    pub fn slot(&self, idx: usize) -> ParamSlot {
        let (ni, nr, ng) = (self.input_params.len(), self.intrinsic_params.len(), self.global_var_indices.len());
        if idx < ni {
            ParamSlot::Ip(idx)
        } else if idx < ni + nr {
            ParamSlot::Intrinsic(idx - ni)
        } else if idx < ni + nr + ng {
            ParamSlot::Global(idx - ni - nr)
        } else {
            ParamSlot::Const(idx - ni - nr - ng)
        }
    }

    pub fn node_name(&self, slot: usize) -> &str {
        if slot == GND {
            return GND_NAME;
        }
        let ne = self.external_nodes.len();
        if slot < ne {
            &self.external_nodes[slot]
        } else {
            &self.internal_nodes[slot - ne]
        }
    }

    pub fn describe_slot(&self, idx: usize, global_names: &[String]) -> String {
        match self.slot(idx) {
            ParamSlot::Ip(k) => format!("ip:{}", self.input_params[k]),
            ParamSlot::Intrinsic(k) => format!("intrp:{}", self.intrinsic_params[k]),
            ParamSlot::Global(k) => format!("gv:{}", global_names[self.global_var_indices[k]]),
            ParamSlot::Const(k) => format!("c:{}", self.constants[k]),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RuleSet {
    pub rules: Vec<CompiledRule>,
    pub global_names: Vec<String>,
    pub global_values: Vec<f64>,
}

impl RuleSet {
    pub fn index(&self, name: &str) -> Option<usize> {
        self.rules.iter().position(|r| r.name == name)
    }

    pub fn rule(&self, name: &str) -> Option<&CompiledRule> {
        self.rules.iter().find(|r| r.name == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubcircuitInstance {
    pub rule: usize,
    /// Global signal indices of the frame's internal nodes.
    pub internal_nodes: Vec<usize>,
    pub subckts: Vec<SubcircuitInstance>,
}

fn compile_one(
    doc: &NetlistDocument,
    m: &crate::netlist::ModuleDefinition,
    tables: Option<TableContext<'_>>,
) -> Result<CompiledRule, CompileError> {
    let mut internal: Vec<String> = m.internal_nodes.iter().filter(|n| *n != GND_NAME).cloned().collect();
    for inst in &m.schematic {
        if let Some(spec) = elements::lookup(&inst.master) {
            if spec.galv == GalvRule::Required || inst.galv {
                internal.push(galv_node_name(&inst.name));
            }
        }
    }
    let frame_nodes: Vec<String> = m.external_nodes.iter().chain(&internal).cloned().collect();
    let node_slot = |name: &str| -> Option<usize> {
        if name == GND_NAME {
            Some(GND)
        } else {
            frame_nodes.iter().position(|n| n == name)
        }
    };

    let intrinsic: Vec<String> = m.intrinsic_params().to_vec();
    let (ni, nr) = (m.input_params.len(), intrinsic.len());
    let mut gv: Vec<usize> = Vec::new();
    let mut constants: Vec<f64> = Vec::new();
    // Globals are numbered in first-use order; the frame offsets are fixed
    // once every instance is seen, so collect symbolic slots first.
    enum Pending {
        Ip(usize),
        Intr(usize),
        Gv(usize),
        C(usize),
    }
    let mut resolve = |inst: &str, formal: &str, v: &ParamValue| -> Result<Pending, CompileError> {
        match v {
            ParamValue::Literal(x) => {
                constants.push(*x);
                Ok(Pending::C(constants.len() - 1))
            }
            ParamValue::Symbol(s) => {
                if let Some(k) = m.input_params.iter().position(|p| p == s) {
                    Ok(Pending::Ip(k))
                } else if let Some(k) = intrinsic.iter().position(|p| p == s) {
                    Ok(Pending::Intr(k))
                } else if let Some(g) = doc.global_index(s) {
                    let k = match gv.iter().position(|&x| x == g) {
                        Some(k) => k,
                        None => {
                            gv.push(g);
                            gv.len() - 1
                        }
                    };
                    Ok(Pending::Gv(k))
                } else {
                    Err(CompileError::ParamResolutionError {
                        module: m.name.clone(),
                        instance: inst.to_string(),
                        param: formal.to_string(),
                    })
                }
            }
        }
    };

    struct Raw {
        name: String,
        target: Result<ElementKind, usize>,
        nodes: Vec<usize>,
        params: Vec<Pending>,
        galv: bool,
    }
    let mut raws = Vec::new();
    let mut galv_cursor = m.external_nodes.len() + m.internal_nodes.iter().filter(|n| *n != GND_NAME).count();
    let unresolved = |inst: &str, param: &str| CompileError::ParamResolutionError {
        module: m.name.clone(),
        instance: inst.to_string(),
        param: param.to_string(),
    };
    for inst in &m.schematic {
        let bad_port = |port: &str| CompileError::ElementUnknownPort {
            module: m.name.clone(),
            instance: inst.name.clone(),
            master: inst.master.clone(),
            port: port.to_string(),
        };
        for (port, _) in &inst.nodes {
            let known = match elements::lookup(&inst.master) {
                Some(spec) => spec.port_index(port).is_some(),
                None => doc.module(&inst.master).is_some_and(|c| c.external_nodes.contains(port)),
            };
            if !known {
                return Err(bad_port(port));
            }
        }
        let bind = |port: &str| -> Result<usize, CompileError> {
            let node = inst.node(port).ok_or_else(|| bad_port(port))?;
            node_slot(node).ok_or_else(|| bad_port(port))
        };
        if let Some(spec) = elements::lookup(&inst.master) {
            let mut nodes = spec.ports.iter().map(|p| bind(p)).collect::<Result<Vec<_>, _>>()?;
            let galv = spec.galv == GalvRule::Required || inst.galv;
            if galv {
                nodes.push(galv_cursor);
                galv_cursor += 1;
            }
            let mut params = Vec::new();
            for formal in spec.params {
                let v = inst.param(formal).ok_or_else(|| unresolved(&inst.name, formal))?;
                params.push(resolve(&inst.name, formal, v)?);
            }
            for (formal, default) in spec.optional_params {
                let v = inst.param(formal).cloned().unwrap_or(ParamValue::Literal(*default));
                params.push(resolve(&inst.name, formal, &v)?);
            }
            raws.push(Raw { name: inst.name.clone(), target: Ok(spec.kind), nodes, params, galv });
        } else {
            let child = doc.module(&inst.master).ok_or_else(|| CompileError::UnknownModule(inst.master.clone()))?;
            let rule = doc.modules.iter().position(|d| d.name == child.name).expect("module exists");
            let nodes = child.external_nodes.iter().map(|p| bind(p)).collect::<Result<Vec<_>, _>>()?;
            let mut params = Vec::new();
            for formal in &child.input_params {
                let v = inst.param(formal).ok_or_else(|| unresolved(&inst.name, formal))?;
                params.push(resolve(&inst.name, formal, v)?);
            }
            raws.push(Raw { name: inst.name.clone(), target: Err(rule), nodes, params, galv: false });
        }
    }

    let ng = gv.len();
    let place = |p: &Pending| match *p {
        Pending::Ip(k) => k,
        Pending::Intr(k) => ni + k,
        Pending::Gv(k) => ni + nr + k,
        Pending::C(k) => ni + nr + ng + k,
    };
    let mut subckts_info = Vec::new();
    let mut basic_element_info = Vec::new();
    for r in raws {
        let params = r.params.iter().map(place).collect();
        match r.target {
            Ok(kind) => basic_element_info.push(ElementInfo { name: r.name, kind, nodes: r.nodes, params, galv: r.galv }),
            Err(rule) => subckts_info.push(ChildInfo { name: r.name, rule, nodes: r.nodes, params }),
        }
    }

    let submodel = match &m.submodel {
        None => None,
        Some(spec) => Some(Arc::new(submodel::compile(spec, &frame_nodes, &m.input_params, tables).map_err(
            |source| CompileError::SubModel { module: m.name.clone(), source },
        )?)),
    };

    Ok(CompiledRule {
        name: m.name.clone(),
        external_nodes: m.external_nodes.clone(),
        internal_nodes: internal,
        input_params: m.input_params.clone(),
        intrinsic_params: intrinsic,
        constants,
        global_var_indices: gv,
        submodel,
        subckts_info,
        basic_element_info,
    })
}

/// Compiles every module of `doc`. Table submodels resolve their device data
/// through `tables`.
pub fn compile_rules(doc: &NetlistDocument, tables: Option<TableContext<'_>>) -> Result<RuleSet, CompileError> {
    let errors: Vec<Diagnostic> =
        crate::netlist::validate(doc).into_iter().filter(|d| d.severity == Severity::Error).collect();
    if !errors.is_empty() {
        return Err(CompileError::Invalid(errors));
    }
    let rules = doc.modules.iter().map(|m| compile_one(doc, m, tables)).collect::<Result<Vec<_>, _>>()?;
    Ok(RuleSet {
        rules,
        global_names: doc.globals.iter().map(|g| g.0.clone()).collect(),
        global_values: doc.globals.iter().map(|g| g.1).collect(),
    })
}

fn instantiate_rec(rules: &RuleSet, rule: usize, next: &mut usize) -> SubcircuitInstance {
    let r = &rules.rules[rule];
    let internal_nodes: Vec<usize> = (0..r.internal_nodes.len()).map(|k| *next + k).collect();
    *next += r.internal_nodes.len();
    let subckts = r.subckts_info.iter().map(|c| instantiate_rec(rules, c.rule, next)).collect();
    SubcircuitInstance { rule, internal_nodes, subckts }
}

/// Numbers the hierarchy depth first, starting at `offset`. Returns the tree
/// and the number of unknowns it occupies.
pub fn instantiate(rules: &RuleSet, top: &str, offset: usize) -> Result<(SubcircuitInstance, usize), CompileError> {
    let idx = rules.index(top).ok_or_else(|| CompileError::UnknownModule(top.to_string()))?;
    let r = &rules.rules[idx];
    if !r.external_nodes.is_empty() {
        return Err(CompileError::TopHasExternalNodes(top.to_string()));
    }
    let mut next = offset;
    let inst = instantiate_rec(rules, idx, &mut next);
    Ok((inst, next - offset))
}

impl SubcircuitInstance {
    /// Global indices of this instance's frame given its external bindings.
    pub fn frame(&self, en: &[usize]) -> Vec<usize> {
        en.iter().chain(&self.internal_nodes).copied().collect()
    }
}

/// Hierarchical signal names, indexed by global signal index.
pub fn signal_names(rules: &RuleSet, top: &SubcircuitInstance, n: usize) -> Vec<String> {
    fn rec(rules: &RuleSet, inst: &SubcircuitInstance, prefix: &str, out: &mut [String]) {
        let r = &rules.rules[inst.rule];
        for (k, &g) in inst.internal_nodes.iter().enumerate() {
            out[g] = format!("{prefix}{}", r.internal_nodes[k]);
        }
        for (c, info) in inst.subckts.iter().zip(&r.subckts_info) {
            rec(rules, c, &format!("{prefix}{}.", info.name), out);
        }
    }
    let mut out = vec![String::new(); n];
    rec(rules, top, "", &mut out);
    out
}

/// One line per instance path with its node and parameter frames.
pub fn dump_indexes(rules: &RuleSet, top: &SubcircuitInstance) -> String {
    fn idx(g: usize) -> String {
        if g == GND {
            GND_NAME.to_string()
        } else {
            g.to_string()
        }
    }
    fn rec(rules: &RuleSet, inst: &SubcircuitInstance, path: &str, en: &[usize], out: &mut String) {
        let r = &rules.rules[inst.rule];
        let frame = inst.frame(en);
        let nodes: Vec<String> = frame.iter().map(|&g| idx(g)).collect();
        let params: Vec<String> = (0..r.n_params()).map(|k| r.describe_slot(k, &rules.global_names)).collect();
        let _ = writeln!(out, "{path} {} nodes=[{}] params=[{}]", r.name, nodes.join(","), params.join(","));
        let map = |s: usize| if s == GND { GND } else { frame[s] };
        for e in &r.basic_element_info {
            let nodes: Vec<String> = e.nodes.iter().map(|&s| idx(map(s))).collect();
            let params: Vec<String> = e.params.iter().map(|&k| r.describe_slot(k, &rules.global_names)).collect();
            let _ = writeln!(
                out,
                "{path}.{} {} nodes=[{}] params=[{}]",
                e.name,
                e.kind.spec().name,
                nodes.join(","),
                params.join(",")
            );
        }
        for (c, info) in inst.subckts.iter().zip(&r.subckts_info) {
            let sub_en: Vec<usize> = info.nodes.iter().map(|&s| map(s)).collect();
            rec(rules, c, &format!("{path}.{}", info.name), &sub_en, out);
        }
    }
    let mut out = String::new();
    rec(rules, top, &rules.rules[top.rule].name, &[], &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::parse;

    const CODE1: &str = r#"{"Top":"H",
      "SizeDepResistor":{"ExternalNodes":["l","r"],"InputParams":["Rlength","Rwidth"],"InternalNodes":[],
        "SubModel":{"Expr":"[1e2*Rlength/Rwidth,]","IntrinsicParams":["RValue"]},
        "Schematic":{"instanceR":{"MasterName":"resistor","ExternalNodes":{"left":"l","right":"r"},
          "InputParams":{"resistance":"RValue"}}}},
      "H":{"ExternalNodes":[],"InternalNodes":["a","gnd"],"InputParams":[],"Schematic":{
        "v":{"MasterName":"VS","ExternalNodes":{"input":"a","output":"gnd"},"InputParams":{"voltage":2}},
        "x":{"MasterName":"SizeDepResistor","ExternalNodes":{"l":"a","r":"gnd"},"InputParams":{"Rlength":2,"Rwidth":1}}}}}"#;

    #[test]
    fn code1_rule_layout() {
        let rules = compile_rules(&parse(CODE1).unwrap(), None).unwrap();
        let r = rules.rule("SizeDepResistor").unwrap();
        assert_eq!(r.n_params(), 3);
        assert_eq!(r.slot(0), ParamSlot::Ip(0));
        assert_eq!(r.slot(2), ParamSlot::Intrinsic(0));
        let e = &r.basic_element_info[0];
        assert_eq!((e.kind, e.nodes.clone(), e.params.clone()), (ElementKind::Resistor, vec![0, 1], vec![2]));
    }

    #[test]
    fn voltage_source_adds_branch_node() {
        let rules = compile_rules(&parse(CODE1).unwrap(), None).unwrap();
        let h = rules.rule("H").unwrap();
        assert_eq!(h.internal_nodes, vec!["a".to_string(), "v.i".to_string()]);
        assert_eq!(h.basic_element_info[0].nodes, vec![0, GND, 1]);
        assert_eq!(h.constants, vec![2.0, 0.0, 2.0, 1.0]);
        assert_eq!(h.subckts_info[0].params, vec![2, 3]);
    }

    #[test]
    fn depth_first_numbering() {
        let src = r#"{"Top":"T",
          "M":{"ExternalNodes":["p"],"InternalNodes":["m1","m2"],"InputParams":[],"Schematic":{
            "r1":{"MasterName":"resistor","ExternalNodes":{"left":"p","right":"m1"},"InputParams":{"resistance":1}},
            "r2":{"MasterName":"resistor","ExternalNodes":{"left":"m1","right":"m2"},"InputParams":{"resistance":1}},
            "r3":{"MasterName":"resistor","ExternalNodes":{"left":"m2","right":"gnd"},"InputParams":{"resistance":1}}}},
          "T":{"ExternalNodes":[],"InternalNodes":["t"],"InputParams":[],"Schematic":{
            "a":{"MasterName":"M","ExternalNodes":{"p":"t"}},
            "b":{"MasterName":"M","ExternalNodes":{"p":"t"}}}}}"#;
        let rules = compile_rules(&parse(src).unwrap(), None).unwrap();
        let (inst, n) = instantiate(&rules, "T", 0).unwrap();
        assert_eq!(n, 5);
        assert_eq!(inst.internal_nodes, vec![0]);
        assert_eq!(inst.subckts[0].internal_nodes, vec![1, 2]);
        assert_eq!(inst.subckts[1].internal_nodes, vec![3, 4]);
        assert_eq!(signal_names(&rules, &inst, n), ["t", "a.m1", "a.m2", "b.m1", "b.m2"]);
        assert_eq!(instantiate(&rules, "M", 0), Err(CompileError::TopHasExternalNodes("M".into())));
    }

    #[test]
    fn empty_top() {
        let src = r#"{"Top":"E","E":{"ExternalNodes":[],"InternalNodes":[],"InputParams":[],"Schematic":{}}}"#;
        let rules = compile_rules(&parse(src).unwrap(), None).unwrap();
        let (inst, n) = instantiate(&rules, "E", 0).unwrap();
        assert_eq!(n, 0);
        assert!(inst.subckts.is_empty());
    }

    #[test]
    fn dump_lists_every_instance() {
        let rules = compile_rules(&parse(CODE1).unwrap(), None).unwrap();
        let (inst, _) = instantiate(&rules, "H", 0).unwrap();
        let d = dump_indexes(&rules, &inst);
        let lines: Vec<&str> = d.lines().collect();
        assert_eq!(lines[0], "H H nodes=[0,1] params=[c:2,c:0,c:2,c:1]");
        assert_eq!(lines[1], "H.v VS nodes=[0,gnd,1] params=[c:2,c:0]");
        assert_eq!(lines[2], "H.x SizeDepResistor nodes=[0,gnd] params=[ip:Rlength,ip:Rwidth,intrp:RValue]");
        assert_eq!(lines[3], "H.x.instanceR resistor nodes=[0,gnd] params=[intrp:RValue]");
    }
}
