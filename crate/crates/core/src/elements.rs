//! Basic element catalog and per-analysis stamps.
//!
//! Sign convention: `F[node]` accumulates the current flowing *into* the node
//! from the element, and `Q[node]` the matching charge, so that a circuit
//! satisfies `dQ/dt + F = 0` row by row. A branch-current unknown (GALV node)
//! always measures the current through the element from its first terminal
//! to its second one.

use thiserror::Error;

use crate::GND;

/// Which part of the equations an evaluation assembles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Analysis {
    Dc,
    Tran,
    /// Linear small-signal part at a bias point (no source constants).
    AcBuild,
    /// AC excitation vector `b` of `A·ε = b`.
    AcStimulus,
}

impl Analysis {
    pub fn is_ac(self) -> bool {
        matches!(self, Analysis::AcBuild | Analysis::AcStimulus)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ElementKind {
    Resistor,
    Capacitor,
    Inductor,
    CurrentSource,
    VoltageSource,
    Vccs,
    Cccs,
    Vcvs,
    Ccvs,
    Ics,
    AcVccs,
}

impl ElementKind {
    pub const ALL: [ElementKind; 11] = [
        ElementKind::Resistor,
        ElementKind::Capacitor,
        ElementKind::Inductor,
        ElementKind::CurrentSource,
        ElementKind::VoltageSource,
        ElementKind::Vccs,
        ElementKind::Cccs,
        ElementKind::Vcvs,
        ElementKind::Ccvs,
        ElementKind::Ics,
        ElementKind::AcVccs,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GalvRule {
    Required,
    Optional,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElementSpec {
    pub kind: ElementKind,
    pub name: &'static str,
    pub ports: &'static [&'static str],
    pub params: &'static [&'static str],
    /// Parameters that may be omitted, with their default.
    pub optional_params: &'static [(&'static str, f64)],
    pub galv: GalvRule,
}

impl ElementSpec {
    pub fn needs_galv(&self) -> bool {
        self.galv == GalvRule::Required
    }

    /// Total parameter count seen by `stamp` (required then optional).
    pub fn param_count(&self) -> usize {
        self.params.len() + self.optional_params.len()
    }

    pub fn param_names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.params.iter().copied().chain(self.optional_params.iter().map(|p| p.0))
    }

    pub fn port_index(&self, port: &str) -> Option<usize> {
        self.ports.iter().position(|p| *p == port)
    }

    pub fn param_index(&self, param: &str) -> Option<usize> {
        self.param_names().position(|p| p == param)
    }
}

static CATALOG: [ElementSpec; 11] = [
    ElementSpec {
        kind: ElementKind::Resistor,
        name: "resistor",
        ports: &["left", "right"],
        params: &["resistance"],
        optional_params: &[],
        galv: GalvRule::Optional,
    },
    ElementSpec {
        kind: ElementKind::Capacitor,
        name: "capacitor",
        ports: &["input", "output"],
        params: &["capacitance"],
        optional_params: &[],
        galv: GalvRule::Optional,
    },
    ElementSpec {
        kind: ElementKind::Inductor,
        name: "inductor",
        ports: &["input", "output"],
        params: &["inductance"],
        optional_params: &[],
        galv: GalvRule::Required,
    },
    ElementSpec {
        kind: ElementKind::CurrentSource,
        name: "CS",
        ports: &["input", "output"],
        params: &["current"],
        optional_params: &[("ac", 0.0)],
        galv: GalvRule::Optional,
    },
    ElementSpec {
        kind: ElementKind::VoltageSource,
        name: "VS",
        ports: &["input", "output"],
        params: &["voltage"],
        optional_params: &[("ac", 0.0)],
        galv: GalvRule::Required,
    },
    ElementSpec {
        kind: ElementKind::Vccs,
        name: "VCCS",
        ports: &["left", "right", "input", "output"],
        params: &["MF"],
        optional_params: &[],
        galv: GalvRule::Optional,
    },
    ElementSpec {
        kind: ElementKind::Cccs,
        name: "CCCS",
        ports: &["iorigin", "input", "output"],
        params: &["MF"],
        optional_params: &[],
        galv: GalvRule::Optional,
    },
    ElementSpec {
        kind: ElementKind::Vcvs,
        name: "VCVS",
        ports: &["left", "right", "input", "output"],
        params: &["MF"],
        optional_params: &[],
        galv: GalvRule::Required,
    },
    ElementSpec {
        kind: ElementKind::Ccvs,
        name: "CCVS",
        ports: &["iorigin", "input", "output"],
        params: &["MF"],
        optional_params: &[],
        galv: GalvRule::Required,
    },
    ElementSpec {
        kind: ElementKind::Ics,
        name: "ICS",
        ports: &["input", "output"],
        params: &["dc", "ac"],
        optional_params: &[],
        galv: GalvRule::Optional,
    },
    ElementSpec {
        kind: ElementKind::AcVccs,
        name: "ACVCCS",
        ports: &["left", "right", "input", "output"],
        params: &["MF"],
        optional_params: &[],
        galv: GalvRule::Optional,
    },
];

pub fn catalog() -> &'static [ElementSpec] {
    &CATALOG
}

pub fn lookup(master: &str) -> Option<&'static ElementSpec> {
    CATALOG.iter().find(|s| s.name == master)
}

impl ElementKind {
    pub fn spec(self) -> &'static ElementSpec {
        CATALOG.iter().find(|s| s.kind == self).expect("every kind is in the catalog")
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ElementError {
    #[error("{kind} expects {expected_nodes} nodes and {expected_params} params, got {nodes} and {params}")]
    ArityError {
        kind: &'static str,
        expected_nodes: usize,
        expected_params: usize,
        nodes: usize,
        params: usize,
    },
    #[error("{kind} cannot be stamped under {analysis:?} without a branch-current node")]
    UnsupportedAnalysis { kind: &'static str, analysis: Analysis },
    #[error("{kind}: parameter {param} = {value} is not usable")]
    InvalidParam { kind: &'static str, param: &'static str, value: f64 },
}

/// One element's additive contribution. Rows and `*_dx` columns are global
/// signal indices; `*_dp` columns are the element's local parameter slots.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseContribution {
    pub q: Vec<(usize, f64)>,
    pub f: Vec<(usize, f64)>,
    pub dq_dx: Vec<(usize, usize, f64)>,
    pub df_dx: Vec<(usize, usize, f64)>,
    pub dq_dp: Vec<(usize, usize, f64)>,
    pub df_dp: Vec<(usize, usize, f64)>,
}

struct Builder<'a> {
    nodes: &'a [usize],
    x: &'a [f64],
    out: SparseContribution,
}

impl Builder<'_> {
    fn v(&self, port: usize) -> f64 {
        match self.nodes[port] {
            GND => 0.0,
            g => self.x[g],
        }
    }

    fn f(&mut self, row: usize, val: f64) {
        if let Some(r) = live(self.nodes[row]) {
            self.out.f.push((r, val));
        }
    }

    fn q(&mut self, row: usize, val: f64) {
        if let Some(r) = live(self.nodes[row]) {
            self.out.q.push((r, val));
        }
    }

    fn fx(&mut self, row: usize, col: usize, val: f64) {
        if let (Some(r), Some(c)) = (live(self.nodes[row]), live(self.nodes[col])) {
            self.out.df_dx.push((r, c, val));
        }
    }

    fn qx(&mut self, row: usize, col: usize, val: f64) {
        if let (Some(r), Some(c)) = (live(self.nodes[row]), live(self.nodes[col])) {
            self.out.dq_dx.push((r, c, val));
        }
    }

    fn fp(&mut self, row: usize, param: usize, val: f64) {
        if let Some(r) = live(self.nodes[row]) {
            self.out.df_dp.push((r, param, val));
        }
    }

    fn qp(&mut self, row: usize, param: usize, val: f64) {
        if let Some(r) = live(self.nodes[row]) {
            self.out.dq_dp.push((r, param, val));
        }
    }

    /// Current `gain·(x[a]-x[b])` through the element from `from` to `to`.
    fn controlled_current(&mut self, from: usize, to: usize, a: usize, b: usize, gain: f64, gain_slot: usize) {
        let d = self.v(a) - self.v(b);
        self.f(from, -gain * d);
        self.f(to, gain * d);
        self.fx(from, a, -gain);
        self.fx(from, b, gain);
        self.fx(to, a, gain);
        self.fx(to, b, -gain);
        self.fp(from, gain_slot, -d);
        self.fp(to, gain_slot, d);
    }

    /// Current `gain·x[sense]` through the element from `from` to `to`.
    fn sensed_current(&mut self, from: usize, to: usize, sense: usize, gain: f64, gain_slot: usize) {
        let i = self.v(sense);
        self.f(from, -gain * i);
        self.f(to, gain * i);
        self.fx(from, sense, -gain);
        self.fx(to, sense, gain);
        self.fp(from, gain_slot, -i);
        self.fp(to, gain_slot, i);
    }

    /// KCL part of a branch-current unknown at port `br`.
    fn branch_kcl(&mut self, from: usize, to: usize, br: usize) {
        let i = self.v(br);
        self.f(from, -i);
        self.f(to, i);
        self.fx(from, br, -1.0);
        self.fx(to, br, 1.0);
    }

    /// Independent current `value` delivered into `into` and drawn from `from`.
    fn source_current(&mut self, into: usize, from: usize, value: f64, slot: usize) {
        self.f(into, value);
        self.f(from, -value);
        self.fp(into, slot, 1.0);
        self.fp(from, slot, -1.0);
    }

    /// `x[out] - x[in]` part of a voltage-defining branch row.
    fn kvl_drop(&mut self, br: usize, input: usize, output: usize) -> f64 {
        self.fx(br, output, 1.0);
        self.fx(br, input, -1.0);
        self.v(output) - self.v(input)
    }
}

fn live(g: usize) -> Option<usize> {
    (g != GND).then_some(g)
}

/// Stamps one element. `nodes` holds the global index of every port in catalog
/// order, followed by the branch-current node when `galv` is set.
pub fn stamp(
    kind: ElementKind,
    analysis: Analysis,
    nodes: &[usize],
    params: &[f64],
    x: &[f64],
    galv: bool,
) -> Result<SparseContribution, ElementError> {
    let spec = kind.spec();
    let expected_nodes = spec.ports.len() + usize::from(galv);
    if nodes.len() != expected_nodes || params.len() != spec.param_count() {
        return Err(ElementError::ArityError {
            kind: spec.name,
            expected_nodes,
            expected_params: spec.param_count(),
            nodes: nodes.len(),
            params: params.len(),
        });
    }
    if spec.needs_galv() && !galv {
        return Err(ElementError::UnsupportedAnalysis { kind: spec.name, analysis });
    }
    let mut b = Builder { nodes, x, out: SparseContribution::default() };
    let dc_like = matches!(analysis, Analysis::Dc | Analysis::Tran);
    let stim = analysis == Analysis::AcStimulus;

    match kind {
        ElementKind::Resistor => {
            let r = params[0];
            if stim {
                return Ok(b.out);
            }
            if galv {
                if !r.is_finite() {
                    return Err(ElementError::InvalidParam { kind: spec.name, param: "resistance", value: r });
                }
                let i = b.v(2);
                b.branch_kcl(0, 1, 2);
                b.f(2, b.v(1) - b.v(0) + r * i);
                b.fx(2, 1, 1.0);
                b.fx(2, 0, -1.0);
                b.fx(2, 2, r);
                b.fp(2, 0, i);
            } else {
                if r == 0.0 || r.is_nan() {
                    return Err(ElementError::InvalidParam { kind: spec.name, param: "resistance", value: r });
                }
                // an infinite resistance keeps its (zero) entries as structure
                let g = if r.is_infinite() { 0.0 } else { 1.0 / r };
                let d = b.v(0) - b.v(1);
                b.f(0, -g * d);
                b.f(1, g * d);
                b.fx(0, 0, -g);
                b.fx(0, 1, g);
                b.fx(1, 0, g);
                b.fx(1, 1, -g);
                b.fp(0, 0, g * g * d);
                b.fp(1, 0, -g * g * d);
            }
        }
        ElementKind::Capacitor => {
            if stim {
                return Ok(b.out);
            }
            let c = params[0];
            let d = b.v(0) - b.v(1);
            if galv {
                b.branch_kcl(0, 1, 2);
                b.q(2, -c * d);
                b.qx(2, 0, -c);
                b.qx(2, 1, c);
                b.qp(2, 0, -d);
                b.f(2, b.v(2));
                b.fx(2, 2, 1.0);
            } else {
                b.q(0, -c * d);
                b.q(1, c * d);
                b.qx(0, 0, -c);
                b.qx(0, 1, c);
                b.qx(1, 0, c);
                b.qx(1, 1, -c);
                b.qp(0, 0, -d);
                b.qp(1, 0, d);
            }
        }
        ElementKind::Inductor => {
            if stim {
                return Ok(b.out);
            }
            let l = params[0];
            let i = b.v(2);
            b.branch_kcl(0, 1, 2);
            let drop = b.kvl_drop(2, 0, 1);
            b.f(2, drop);
            b.q(2, l * i);
            b.qx(2, 2, l);
            b.qp(2, 0, i);
        }
        ElementKind::CurrentSource | ElementKind::Ics => {
            let (value, slot) = match analysis {
                Analysis::Dc | Analysis::Tran => (params[0], 0),
                Analysis::AcBuild => (0.0, usize::MAX),
                Analysis::AcStimulus => (params[1], 1),
            };
            if galv {
                if !stim {
                    b.branch_kcl(0, 1, 2);
                    b.f(2, b.v(2));
                    b.fx(2, 2, 1.0);
                }
                if dc_like {
                    // x_i + I = 0: the element carries I from output to input
                    b.f(2, value);
                    b.fp(2, slot, 1.0);
                } else if stim {
                    b.f(2, -value);
                    b.fp(2, slot, -1.0);
                }
            } else if dc_like {
                b.source_current(0, 1, value, slot);
            } else if stim {
                b.source_current(1, 0, value, slot);
            }
        }
        ElementKind::VoltageSource => {
            if stim {
                b.f(2, -params[1]);
                b.fp(2, 1, -1.0);
                return Ok(b.out);
            }
            b.branch_kcl(0, 1, 2);
            let drop = b.kvl_drop(2, 0, 1);
            if dc_like {
                b.f(2, drop + params[0]);
                b.fp(2, 0, 1.0);
            } else {
                b.f(2, drop);
            }
        }
        ElementKind::Vccs | ElementKind::AcVccs => {
            if stim {
                return Ok(b.out);
            }
            let active = kind == ElementKind::Vccs || analysis == Analysis::AcBuild;
            let mf = params[0];
            if galv {
                b.branch_kcl(2, 3, 4);
                b.f(4, b.v(4));
                b.fx(4, 4, 1.0);
                if active {
                    let d = b.v(0) - b.v(1);
                    b.f(4, -mf * d);
                    b.fx(4, 0, -mf);
                    b.fx(4, 1, mf);
                    b.fp(4, 0, -d);
                }
            } else if active {
                b.controlled_current(2, 3, 0, 1, mf, 0);
            }
        }
        ElementKind::Cccs => {
            if stim {
                return Ok(b.out);
            }
            let mf = params[0];
            if galv {
                let i0 = b.v(0);
                b.branch_kcl(1, 2, 3);
                b.f(3, b.v(3) - mf * i0);
                b.fx(3, 3, 1.0);
                b.fx(3, 0, -mf);
                b.fp(3, 0, -i0);
            } else {
                b.sensed_current(1, 2, 0, mf, 0);
            }
        }
        ElementKind::Vcvs => {
            if stim {
                return Ok(b.out);
            }
            let mf = params[0];
            b.branch_kcl(2, 3, 4);
            let drop = b.kvl_drop(4, 2, 3);
            let d = b.v(0) - b.v(1);
            b.f(4, drop + mf * d);
            b.fx(4, 0, mf);
            b.fx(4, 1, -mf);
            b.fp(4, 0, d);
        }
        ElementKind::Ccvs => {
            if stim {
                return Ok(b.out);
            }
            let mf = params[0];
            b.branch_kcl(1, 2, 3);
            let drop = b.kvl_drop(3, 1, 2);
            let i0 = b.v(0);
            b.f(3, drop + mf * i0);
            b.fx(3, 0, mf);
            b.fp(3, 0, i0);
        }
    }
    Ok(b.out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_f(c: &SparseContribution, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for &(r, v) in &c.f {
            out[r] += v;
        }
        out
    }

    #[test]
    fn catalog_matches_table() {
        assert_eq!(catalog().len(), 11);
        let vccs = lookup("VCCS").unwrap();
        assert_eq!(vccs.ports, &["left", "right", "input", "output"]);
        assert_eq!(vccs.params, &["MF"]);
        let ics = lookup("ICS").unwrap();
        assert_eq!(ics.params, &["dc", "ac"]);
        assert_eq!(lookup("CCCS").unwrap().ports, &["iorigin", "input", "output"]);
        for name in ["VS", "VCVS", "CCVS", "inductor"] {
            assert!(lookup(name).unwrap().needs_galv(), "{name}");
        }
        for name in ["resistor", "capacitor", "CS", "VCCS", "CCCS", "ICS", "ACVCCS"] {
            assert!(!lookup(name).unwrap().needs_galv(), "{name}");
        }
    }

    #[test]
    fn resistor_without_galv() {
        let c = stamp(ElementKind::Resistor, Analysis::Dc, &[0, 1], &[2.0], &[3.0, 1.0], false).unwrap();
        assert_eq!(c.f, vec![(0, -1.0), (1, 1.0)]);
        assert_eq!(c.df_dx, vec![(0, 0, -0.5), (0, 1, 0.5), (1, 0, 0.5), (1, 1, -0.5)]);
        assert_eq!(c.df_dp, vec![(0, 0, 0.5), (1, 0, -0.5)]);
        assert!(c.q.is_empty());
    }

    #[test]
    fn resistor_with_galv() {
        let x = [3.0, 1.0, 0.5];
        let c = stamp(ElementKind::Resistor, Analysis::Tran, &[0, 1, 2], &[2.0], &x, true).unwrap();
        let f = dense_f(&c, 3);
        assert_eq!(f, vec![-0.5, 0.5, x[1] - x[0] + 2.0 * x[2]]);
    }

    #[test]
    fn capacitor_charge() {
        let c = stamp(ElementKind::Capacitor, Analysis::Tran, &[0, 1], &[1e-9], &[2.0, 0.0], false).unwrap();
        assert_eq!(c.q, vec![(0, -2e-9), (1, 2e-9)]);
        assert!(c.f.is_empty());
    }

    #[test]
    fn voltage_source_branch_row() {
        // in = node 0, out = gnd, branch current at 1
        let x = [4.0, 0.25];
        let c = stamp(ElementKind::VoltageSource, Analysis::Dc, &[0, GND, 1], &[5.0, 0.0], &x, true).unwrap();
        let f = dense_f(&c, 2);
        assert_eq!(f, vec![-0.25, 0.0 - 4.0 + 5.0]);
    }

    #[test]
    fn acvccs_silent_under_dc() {
        let x = [1.0, 0.2, 3.0, 0.0];
        let c = stamp(ElementKind::AcVccs, Analysis::Dc, &[0, 1, 2, 3], &[1e-3], &x, false).unwrap();
        assert_eq!(c, SparseContribution::default());
        let ac = stamp(ElementKind::AcVccs, Analysis::AcBuild, &[0, 1, 2, 3], &[1e-3], &x, false).unwrap();
        assert_eq!(dense_f(&ac, 4), vec![0.0, 0.0, -1e-3 * 0.8, 1e-3 * 0.8]);
    }

    #[test]
    fn vccs_zero_gain_is_zero() {
        let x = [1.0, 0.2, 3.0, 0.0];
        let c = stamp(ElementKind::Vccs, Analysis::Dc, &[0, 1, 2, 3], &[0.0], &x, false).unwrap();
        assert!(c.f.iter().all(|e| e.1 == 0.0));
    }

    #[test]
    fn ics_parts_per_analysis() {
        let x = [0.0, 0.0];
        let dc = stamp(ElementKind::Ics, Analysis::Dc, &[0, 1], &[1e-3, 0.5], &x, false).unwrap();
        assert_eq!(dc.f, vec![(0, 1e-3), (1, -1e-3)]);
        let build = stamp(ElementKind::Ics, Analysis::AcBuild, &[0, 1], &[1e-3, 0.5], &x, false).unwrap();
        assert!(build.f.is_empty());
        let stim = stamp(ElementKind::Ics, Analysis::AcStimulus, &[0, 1], &[1e-3, 0.5], &x, false).unwrap();
        assert_eq!(stim.f, vec![(1, 0.5), (0, -0.5)]);
    }

    #[test]
    fn gnd_rows_and_columns_dropped() {
        let c = stamp(ElementKind::Resistor, Analysis::Dc, &[0, GND], &[10.0], &[1.0], false).unwrap();
        assert_eq!(c.f, vec![(0, -0.1)]);
        assert_eq!(c.df_dx, vec![(0, 0, -0.1)]);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            stamp(ElementKind::Resistor, Analysis::Dc, &[0], &[1.0], &[0.0], false),
            Err(ElementError::ArityError { .. })
        ));
        assert!(matches!(
            stamp(ElementKind::Inductor, Analysis::Dc, &[0, 1], &[1.0], &[0.0, 0.0], false),
            Err(ElementError::UnsupportedAnalysis { .. })
        ));
    }
}
