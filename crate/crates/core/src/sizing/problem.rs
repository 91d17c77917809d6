//! Resolution of a sizing spec against a netlist and its corner tables.

use std::sync::Arc;

use super::{SizingError, SizingSpec};
use crate::circuit::Circuit;
use crate::compiler::{submodel_calls, CompileError, SubModelCall};
use crate::netlist::NetlistDocument;
use crate::par::Exec;
use crate::submodel::synth::Polarity;
use crate::submodel::{SubModelError, TableContext, TableError, TableSource};

/// One design variable bound to a netlist Global.
#[derive(Debug, Clone, PartialEq)]
pub struct VarInfo {
    pub name: String,
    pub global: usize,
    pub group: usize,
}

/// Variables sharing one optimizer coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub members: Vec<usize>,
    pub init: f64,
    pub lower: f64,
    pub upper: f64,
}

/// A device under a saturation constraint: frame signal indices of its
/// gate, source, drain and bulk, and the index of its VTH output.
#[derive(Debug, Clone)]
pub struct Device {
    pub instance: String,
    pub polarity: Polarity,
    pub ports: [usize; 4],
    pub vth: usize,
}

#[derive(Debug, Clone)]
pub struct CornerCase {
    pub corner: String,
    pub temperature: f64,
    pub circuit: Circuit,
    /// Submodel call of each device, parallel to [`SizingProblem::devices`].
    pub calls: Vec<Arc<SubModelCall>>,
}

#[derive(Debug, Clone)]
pub struct SwingCase {
    pub node: usize,
    pub plus: usize,
    pub minus: usize,
    pub common: f64,
    pub delta: f64,
    pub down: f64,
    pub up: f64,
}

#[derive(Debug, Clone)]
pub struct GainCase {
    pub node: usize,
    pub target_db: f64,
    pub omega: f64,
}

#[derive(Debug, Clone)]
pub struct SizingProblem {
    pub vars: Vec<VarInfo>,
    pub groups: Vec<Group>,
    pub devices: Vec<Device>,
    /// Corners in canonical order.
    pub cases: Vec<CornerCase>,
    /// The (tt, 27 °C) case used for swing and gain, kept separately when
    /// it is not one of the constrained corners. Absent without swing or gain.
    pub typical: Option<TypicalCase>,
    pub x_bounds: Vec<(usize, f64, f64)>,
    pub swing: Option<SwingCase>,
    pub gain: Option<GainCase>,
    pub exec: Exec,
}

#[derive(Debug, Clone)]
pub enum TypicalCase {
    Listed(usize),
    Extra(Box<CornerCase>),
}

pub const TYPICAL_CORNER: &str = "tt";
pub const TYPICAL_TEMPERATURE: f64 = 27.0;

impl SizingProblem {
    pub fn typical(&self) -> Option<&CornerCase> {
        match self.typical.as_ref()? {
            TypicalCase::Listed(k) => Some(&self.cases[*k]),
            TypicalCase::Extra(c) => Some(c),
        }
    }

    pub fn n_corner_rows(&self) -> usize {
        4 * self.devices.len() + 2 * self.x_bounds.len()
    }

    pub fn n_rows(&self) -> usize {
        self.cases.len() * self.n_corner_rows() + if self.swing.is_some() { 2 } else { 0 }
    }

    /// Labels of the constraint rows in evaluation order.
    pub fn constraint_names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.n_rows());
        let names = &self.cases.first().map(|c| c.circuit.names.clone()).unwrap_or_default();
        for c in &self.cases {
            let tag = format!("{}@{}", c.corner, c.temperature);
            for d in &self.devices {
                let v = match d.polarity {
                    Polarity::N => ["vgs", "vds", "vsb", "vov"],
                    Polarity::P => ["vsg", "vsd", "vbs", "vov"],
                };
                out.extend(v.iter().map(|s| format!("{tag} {}.{s}", d.instance)));
            }
            for &(i, _, _) in &self.x_bounds {
                out.push(format!("{tag} {} lower", names[i]));
                out.push(format!("{tag} {} upper", names[i]));
            }
        }
        if self.swing.is_some() {
            out.push("swing down".into());
            out.push("swing up".into());
        }
        out
    }
}

fn compile_case(
    doc: &NetlistDocument,
    tables: &dyn TableSource,
    corner: &str,
    temperature: f64,
    exec: Exec,
) -> Result<Circuit, SizingError> {
    let ctx = TableContext { source: tables, corner, temperature };
    match Circuit::build(doc, Some(ctx)) {
        Ok(mut c) => {
            c.exec = exec;
            Ok(c)
        }
        Err(CompileError::SubModel { source: SubModelError::Table(e @ TableError::TableNotFound { .. }), .. }) => {
            Err(SizingError::CornerTableMissing { corner: corner.to_string(), temperature, detail: e.to_string() })
        }
        Err(e) => Err(e.into()),
    }
}

/// Resolves names, ties and corners, and compiles one circuit per corner.
pub fn build_problem(
    doc: &NetlistDocument,
    spec: &SizingSpec,
    tables: &dyn TableSource,
    exec: Exec,
) -> Result<SizingProblem, SizingError> {
    let bad = |m: String| SizingError::Spec(m);

    let mut corners: Vec<(String, f64)> = spec.corners.iter().map(|c| (c.corner.clone(), c.temperature)).collect();
    if corners.is_empty() {
        corners.push((TYPICAL_CORNER.into(), TYPICAL_TEMPERATURE));
    }
    corners.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    corners.dedup();

    let mut cases = Vec::with_capacity(corners.len());
    for (corner, temperature) in &corners {
        let circuit = compile_case(doc, tables, corner, *temperature, exec)?;
        cases.push(CornerCase { corner: corner.clone(), temperature: *temperature, circuit, calls: Vec::new() });
    }
    let base = cases[0].circuit.clone();

    // design variables and tie groups
    let mut vars = Vec::with_capacity(spec.design_vars.len());
    for v in &spec.design_vars {
        let global = base.global_index(&v.name).ok_or_else(|| bad(format!("design variable {} is not a Global", v.name)))?;
        vars.push(VarInfo { name: v.name.clone(), global, group: usize::MAX });
    }
    let mut groups: Vec<Group> = Vec::new();
    for (k, v) in spec.design_vars.iter().enumerate() {
        if vars[k].group != usize::MAX {
            continue;
        }
        let tied = spec.tie_groups.iter().find(|g| g.contains(&v.name));
        let members: Vec<usize> = match tied {
            Some(g) => spec.design_vars.iter().enumerate().filter(|(_, u)| g.contains(&u.name)).map(|(j, _)| j).collect(),
            None => vec![k],
        };
        let lower = members.iter().map(|&j| spec.design_vars[j].lower).fold(f64::NEG_INFINITY, f64::max);
        let upper = members.iter().map(|&j| spec.design_vars[j].upper).fold(f64::INFINITY, f64::min);
        if lower >= upper {
            return Err(bad(format!("tie group containing {} has an empty common range", v.name)));
        }
        let init = v.init.clamp(lower, upper);
        for &j in &members {
            vars[j].group = groups.len();
        }
        groups.push(Group { members, init, lower, upper });
    }

    // saturation devices
    let top = base.top_name().to_string();
    let x0 = base.initial_guess();
    let mut devices = Vec::with_capacity(spec.saturation.len());
    let mut call_index = Vec::with_capacity(spec.saturation.len());
    let all_calls = submodel_calls(&base.rules, &base.top);
    for s in &spec.saturation {
        let route = base.route(&s.instance).ok_or_else(|| bad(format!("saturation instance {} not found", s.instance)))?;
        let loc = base.locate(&route, &x0, crate::elements::Analysis::Dc).map_err(|e| bad(e.to_string()))?;
        let port = |p: &str| {
            loc.rule
                .external_nodes
                .iter()
                .position(|n| n == p)
                .map(|k| loc.en[k])
                .ok_or_else(|| bad(format!("instance {} has no `{p}` terminal", s.instance)))
        };
        let ports = [port("gate")?, port("source")?, port("drain")?, port("bulk")?];
        let path = format!("{top}.{}", s.instance);
        let ci = all_calls.iter().position(|c| c.path == path).ok_or_else(|| bad(format!("instance {} has no submodel", s.instance)))?;
        let vth = all_calls[ci]
            .model
            .intrinsic
            .iter()
            .position(|n| n == "VTH")
            .ok_or_else(|| bad(format!("instance {} has no VTH intrinsic parameter", s.instance)))?;
        devices.push(Device { instance: s.instance.clone(), polarity: s.polarity.into(), ports, vth });
        call_index.push(ci);
    }
    for c in &mut cases {
        let calls = submodel_calls(&c.circuit.rules, &c.circuit.top);
        c.calls = call_index.iter().map(|&k| calls[k].clone()).collect();
    }

    let signal = |n: &str, what: &str| base.signal_index(n).ok_or_else(|| bad(format!("{what} node {n} is not a signal")));
    let x_bounds = spec
        .x_bounds
        .iter()
        .map(|(n, lo, hi)| Ok((signal(n, "XBounds")?, *lo, *hi)))
        .collect::<Result<Vec<_>, SizingError>>()?;
    let swing = match &spec.swing {
        None => None,
        Some(s) => {
            let global = |n: &str| base.global_index(n).ok_or_else(|| bad(format!("swing input {n} is not a Global")));
            let (plus, minus) = (global(&s.plus)?, global(&s.minus)?);
            if vars.iter().any(|v| v.global == plus || v.global == minus) {
                return Err(bad("swing inputs cannot be design variables".into()));
            }
            Some(SwingCase {
                node: signal(&s.node, "Swing")?,
                plus,
                minus,
                common: s.common,
                delta: spec.delta,
                down: s.down,
                up: s.up,
            })
        }
    };
    let gain = match &spec.gain {
        None => None,
        Some(g) => Some(GainCase {
            node: signal(&g.node, "Gain")?,
            target_db: g.target_db,
            omega: 2.0 * std::f64::consts::PI * g.freq_hz,
        }),
    };

    let typical = match corners.iter().position(|(c, t)| c == TYPICAL_CORNER && *t == TYPICAL_TEMPERATURE) {
        _ if swing.is_none() && gain.is_none() => None,
        Some(k) => Some(TypicalCase::Listed(k)),
        None => {
            let circuit = compile_case(doc, tables, TYPICAL_CORNER, TYPICAL_TEMPERATURE, exec)?;
            let calls = submodel_calls(&circuit.rules, &circuit.top);
            let calls = call_index.iter().map(|&k| calls[k].clone()).collect();
            Some(TypicalCase::Extra(Box::new(CornerCase {
                corner: TYPICAL_CORNER.into(),
                temperature: TYPICAL_TEMPERATURE,
                circuit,
                calls,
            })))
        }
    };

    Ok(SizingProblem { vars, groups, devices, cases, typical, x_bounds, swing, gain, exec })
}
