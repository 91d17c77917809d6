use std::collections::{HashMap, HashSet};
use std::fmt;

use super::{galv_node_name, ModuleDefinition, NetlistDocument, ParamValue, SubModelBody, GND_NAME};
use crate::elements::{self, GalvRule};
use crate::submodel::expr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DiagCode {
    CircularDefinition,
    UndefinedMaster,
    BadNodeReference,
    BadParamReference,
    PortArityMismatch,
    ParamArityMismatch,
    DuplicateName,
    ReservedName,
    InvalidGalv,
    BadSubModel,
    UnusedNode,
    DisconnectedComponent,
}

impl DiagCode {
    pub fn severity(self) -> Severity {
        match self {
            DiagCode::UnusedNode | DiagCode::DisconnectedComponent => Severity::Warning,
            _ => Severity::Error,
        }
    }
}

impl DiagCode {
    pub fn as_str(self) -> &'static str {
        match self {
            DiagCode::CircularDefinition => "CircularDefinition",
            DiagCode::UndefinedMaster => "UndefinedMaster",
            DiagCode::BadNodeReference => "BadNodeReference",
            DiagCode::BadParamReference => "BadParamReference",
            DiagCode::PortArityMismatch => "PortArityMismatch",
            DiagCode::ParamArityMismatch => "ParamArityMismatch",
            DiagCode::DuplicateName => "DuplicateName",
            DiagCode::ReservedName => "ReservedName",
            DiagCode::InvalidGalv => "InvalidGalv",
            DiagCode::BadSubModel => "BadSubModel",
            DiagCode::UnusedNode => "UnusedNode",
            DiagCode::DisconnectedComponent => "DisconnectedComponent",
        }
    }
}

impl fmt::Display for DiagCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Diagnostic {
    pub severity: Severity,
    pub code: DiagCode,
    pub module: String,
    /// Instance, node or parameter the diagnostic is about.
    pub locus: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{sev}[{}] {}", self.code, self.module)?;
        if !self.locus.is_empty() {
            write!(f, " ({})", self.locus)?;
        }
        write!(f, ": {}", self.message)
    }
}

struct Ctx<'a> {
    doc: &'a NetlistDocument,
    out: Vec<Diagnostic>,
}

impl Ctx<'_> {
    fn push(&mut self, code: DiagCode, module: &str, locus: impl Into<String>, message: impl Into<String>) {
        self.out.push(Diagnostic {
            severity: code.severity(),
            code,
            module: module.to_string(),
            locus: locus.into(),
            message: message.into(),
        });
    }
}

/// Ports and parameters of a master, whether module or basic element.
struct Interface {
    ports: Vec<String>,
    required_params: Vec<String>,
    optional_params: Vec<String>,
}

fn interface(doc: &NetlistDocument, master: &str) -> Option<Interface> {
    if let Some(m) = doc.module(master) {
        return Some(Interface {
            ports: m.external_nodes.clone(),
            required_params: m.input_params.clone(),
            optional_params: vec![],
        });
    }
    let spec = elements::lookup(master)?;
    Some(Interface {
        ports: spec.ports.iter().map(|s| s.to_string()).collect(),
        required_params: spec.params.iter().map(|s| s.to_string()).collect(),
        optional_params: spec.optional_params.iter().map(|(s, _)| s.to_string()).collect(),
    })
}

fn check_duplicates(cx: &mut Ctx, m: &ModuleDefinition) {
    let mut seen: HashMap<&str, &str> = HashMap::new();
    let groups: [(&str, &[String]); 4] = [
        ("external node", &m.external_nodes),
        ("internal node", &m.internal_nodes),
        ("input parameter", &m.input_params),
        ("intrinsic parameter", m.intrinsic_params()),
    ];
    for (what, names) in groups {
        for n in names {
            if let Some(prev) = seen.insert(n, what) {
                cx.push(DiagCode::DuplicateName, &m.name, n.clone(), format!("`{n}` declared as {prev} and as {what}"));
            }
        }
    }
    for g in &cx.doc.globals {
        if m.external_nodes.contains(&g.0) || m.internal_nodes.contains(&g.0) {
            cx.push(DiagCode::DuplicateName, &m.name, g.0.clone(), format!("node `{}` shadows a global", g.0));
        }
    }
    let is_top = m.name == cx.doc.top;
    if m.external_nodes.iter().any(|n| n == GND_NAME) || (!is_top && m.internal_nodes.iter().any(|n| n == GND_NAME)) {
        cx.push(DiagCode::ReservedName, &m.name, GND_NAME, "`gnd` may only be declared as a top-level internal node");
    }
    if m.input_params.iter().chain(m.intrinsic_params()).any(|n| n == GND_NAME) {
        cx.push(DiagCode::ReservedName, &m.name, GND_NAME, "`gnd` cannot name a parameter");
    }
    if elements::lookup(&m.name).is_some() {
        cx.push(DiagCode::ReservedName, &m.name, m.name.clone(), "module name clashes with a basic element");
    }
}

fn check_submodel(cx: &mut Ctx, m: &ModuleDefinition) {
    let Some(sm) = &m.submodel else { return };
    if sm.intrinsic_params.is_empty() {
        cx.push(DiagCode::BadSubModel, &m.name, "SubModel", "IntrinsicParams must not be empty");
    }
    let signals: Vec<&String> = m.external_nodes.iter().chain(&m.internal_nodes).collect();
    match &sm.body {
        SubModelBody::Expr(src) => match expr::parse_list(src) {
            Err(e) => cx.push(DiagCode::BadSubModel, &m.name, "SubModel", e.to_string()),
            Ok(list) => {
                if list.len() != sm.intrinsic_params.len() {
                    cx.push(
                        DiagCode::BadSubModel,
                        &m.name,
                        "SubModel",
                        format!("{} expressions for {} intrinsic parameters", list.len(), sm.intrinsic_params.len()),
                    );
                }
                let known = |n: &str| signals.iter().any(|s| *s == n) || m.input_params.iter().any(|s| s == n);
                for a in &list {
                    if let Err(e) = a.resolve(&|n| known(n).then_some(0)) {
                        cx.push(DiagCode::BadSubModel, &m.name, "SubModel", e.to_string());
                    }
                }
            }
        },
        SubModelBody::Table { axes, .. } => {
            for (axis, binding) in axes.iter().flatten() {
                for part in binding.split('-') {
                    let part = part.trim();
                    if !(signals.iter().any(|s| *s == part) || m.input_params.iter().any(|s| s == part)) {
                        cx.push(
                            DiagCode::BadSubModel,
                            &m.name,
                            axis.clone(),
                            format!("axis binding `{binding}` names unknown `{part}`"),
                        );
                    }
                }
            }
        }
    }
}

fn check_instances(cx: &mut Ctx, m: &ModuleDefinition) {
    let doc = cx.doc;
    let galv_names: Vec<String> = m
        .schematic
        .iter()
        .filter(|i| {
            elements::lookup(&i.master).is_some_and(|s| s.galv == GalvRule::Required || i.galv)
        })
        .map(|i| galv_node_name(&i.name))
        .collect();
    for inst in &m.schematic {
        let Some(intf) = interface(doc, &inst.master) else {
            cx.push(
                DiagCode::UndefinedMaster,
                &m.name,
                inst.name.clone(),
                format!("master `{}` is neither a module nor a basic element", inst.master),
            );
            continue;
        };
        if inst.galv && elements::lookup(&inst.master).is_none() {
            cx.push(DiagCode::InvalidGalv, &m.name, inst.name.clone(), "`Galv` applies to basic elements only");
        }
        let bound: HashSet<&str> = inst.nodes.iter().map(|(p, _)| p.as_str()).collect();
        let missing: Vec<&String> = intf.ports.iter().filter(|p| !bound.contains(p.as_str())).collect();
        let extra: Vec<&str> = inst.nodes.iter().map(|(p, _)| p.as_str()).filter(|p| !intf.ports.iter().any(|q| q == p)).collect();
        if !missing.is_empty() || !extra.is_empty() {
            cx.push(
                DiagCode::PortArityMismatch,
                &m.name,
                inst.name.clone(),
                format!("`{}` has ports {:?}; missing {:?}, unknown {:?}", inst.master, intf.ports, missing, extra),
            );
        }
        for (port, node) in &inst.nodes {
            let ok = node == GND_NAME
                || m.external_nodes.contains(node)
                || m.internal_nodes.contains(node)
                || galv_names.contains(node);
            if !ok {
                cx.push(
                    DiagCode::BadNodeReference,
                    &m.name,
                    inst.name.clone(),
                    format!("port `{port}` is bound to undeclared node `{node}`"),
                );
            }
        }
        let given: HashSet<&str> = inst.params.iter().map(|(p, _)| p.as_str()).collect();
        let missing: Vec<&String> = intf.required_params.iter().filter(|p| !given.contains(p.as_str())).collect();
        let extra: Vec<&str> = inst
            .params
            .iter()
            .map(|(p, _)| p.as_str())
            .filter(|p| !intf.required_params.iter().chain(&intf.optional_params).any(|q| q == p))
            .collect();
        if !missing.is_empty() || !extra.is_empty() {
            cx.push(
                DiagCode::ParamArityMismatch,
                &m.name,
                inst.name.clone(),
                format!("`{}` parameters: missing {:?}, unknown {:?}", inst.master, missing, extra),
            );
        }
        for (formal, val) in &inst.params {
            if let ParamValue::Symbol(s) = val {
                let ok = doc.global_index(s).is_some()
                    || m.input_params.contains(s)
                    || m.intrinsic_params().contains(s);
                if !ok {
                    cx.push(
                        DiagCode::BadParamReference,
                        &m.name,
                        inst.name.clone(),
                        format!("parameter `{formal}` refers to unknown `{s}`"),
                    );
                }
            }
        }
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, a: usize) -> usize {
        let mut r = a;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut a = a;
        while self.0[a] != r {
            let next = self.0[a];
            self.0[a] = r;
            a = next;
        }
        r
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

fn check_connectivity(cx: &mut Ctx, m: &ModuleDefinition) {
    let mut names: Vec<&str> = m.external_nodes.iter().chain(&m.internal_nodes).map(String::as_str).collect();
    let declared = names.len();
    let galv: Vec<String> = m.schematic.iter().map(|i| galv_node_name(&i.name)).collect();
    if !names.contains(&GND_NAME) {
        names.push(GND_NAME);
    }
    names.extend(galv.iter().map(String::as_str));
    let index = |n: &str| names.iter().position(|m| *m == n);
    let mut uf = UnionFind((0..names.len()).collect());
    let mut touched = vec![false; names.len()];
    for inst in &m.schematic {
        let idx: Vec<usize> = inst.nodes.iter().filter_map(|(_, n)| index(n)).collect();
        for &i in &idx {
            touched[i] = true;
        }
        if elements::lookup(&inst.master).is_some_and(|s| s.galv == GalvRule::Required || inst.galv) {
            // the branch current belongs to the same element
            if let (Some(&first), Some(g)) = (idx.first(), index(&galv_node_name(&inst.name))) {
                touched[g] = true;
                uf.union(first, g);
            }
        }
        for w in idx.windows(2) {
            uf.union(w[0], w[1]);
        }
    }
    for (i, n) in names.iter().enumerate().take(declared) {
        if !touched[i] && *n != GND_NAME {
            cx.push(DiagCode::UnusedNode, &m.name, n.to_string(), format!("node `{n}` is not connected to any instance"));
        }
    }
    let mut groups: Vec<(usize, Vec<&str>)> = Vec::new();
    for i in 0..names.len() {
        if !touched[i] || i >= declared && names[i] != GND_NAME {
            continue;
        }
        let r = uf.find(i);
        match groups.iter_mut().find(|(root, _)| *root == r) {
            Some((_, g)) => g.push(names[i]),
            None => groups.push((r, vec![names[i]])),
        }
    }
    if groups.len() >= 2 {
        let desc: Vec<String> = groups.iter().map(|(_, g)| format!("{{{}}}", g.join(","))).collect();
        cx.push(
            DiagCode::DisconnectedComponent,
            &m.name,
            String::new(),
            format!("schematic splits into {} components: {}", groups.len(), desc.join(" ")),
        );
    }
}

fn check_cycles(cx: &mut Ctx) {
    let doc = cx.doc;
    let n = doc.modules.len();
    let adj: Vec<Vec<usize>> = doc
        .modules
        .iter()
        .map(|m| {
            let mut v: Vec<usize> =
                m.schematic.iter().filter_map(|i| doc.modules.iter().position(|d| d.name == i.master)).collect();
            v.sort_unstable();
            v.dedup();
            v
        })
        .collect();
    // Tarjan's strongly connected components, iterative.
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut next = 0;
    let mut sccs: Vec<Vec<usize>> = Vec::new();
    for start in 0..n {
        if index[start] != usize::MAX {
            continue;
        }
        let mut work = vec![(start, 0usize)];
        index[start] = next;
        low[start] = next;
        next += 1;
        stack.push(start);
        on_stack[start] = true;
        while let Some(&mut (v, ref mut k)) = work.last_mut() {
            if *k < adj[v].len() {
                let w = adj[v][*k];
                *k += 1;
                if index[w] == usize::MAX {
                    index[w] = next;
                    low[w] = next;
                    next += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    work.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                work.pop();
                if let Some(&(u, _)) = work.last() {
                    low[u] = low[u].min(low[v]);
                }
                if low[v] == index[v] {
                    let mut comp = Vec::new();
                    loop {
                        let w = stack.pop().expect("scc stack");
                        on_stack[w] = false;
                        comp.push(w);
                        if w == v {
                            break;
                        }
                    }
                    sccs.push(comp);
                }
            }
        }
    }
    let mut found: Vec<Vec<String>> = sccs
        .into_iter()
        .filter(|c| c.len() > 1 || adj[c[0]].contains(&c[0]))
        .map(|c| {
            let mut names: Vec<String> = c.iter().map(|&i| doc.modules[i].name.clone()).collect();
            names.sort();
            names
        })
        .collect();
    found.sort();
    for names in found {
        cx.push(
            DiagCode::CircularDefinition,
            &names[0],
            names.join(","),
            format!("modules {{{}}} instantiate each other", names.join(", ")),
        );
    }
}

/// Static checks over a parsed document. Diagnostics are returned sorted.
pub fn validate(doc: &NetlistDocument) -> Vec<Diagnostic> {
    let mut cx = Ctx { doc, out: Vec::new() };
    check_cycles(&mut cx);
    for m in &doc.modules {
        check_duplicates(&mut cx, m);
        check_submodel(&mut cx, m);
        check_instances(&mut cx, m);
        check_connectivity(&mut cx, m);
    }
    cx.out.sort();
    cx.out
}
