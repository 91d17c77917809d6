#![allow(dead_code)]

use std::path::PathBuf;

use gradnet::circuit::Circuit;
use gradnet::netlist::{self, NetlistDocument};
use gradnet::submodel::{SynthTableSource, TableContext};

pub mod checks;

pub const CORPUS: [&str; 11] = [
    "code1_size_dep_resistor",
    "nmos_code23",
    "divider",
    "rc_lowpass",
    "rlc",
    "controlled_sources",
    "hierarchy3",
    "nonlinear_divider",
    "cs_stage",
    "ota5t",
    "cs_stage_expr",
];

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(rel)
}

pub fn read(name: &str) -> String {
    std::fs::read_to_string(fixture(&format!("netlists/{name}.json"))).unwrap()
}

pub fn doc(name: &str) -> NetlistDocument {
    netlist::parse(&read(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn circuit(name: &str) -> Circuit {
    let tables = SynthTableSource::default();
    let ctx = TableContext { source: &tables, corner: "tt", temperature: 27.0 };
    Circuit::build(&doc(name), Some(ctx)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// Relative error with an absolute floor relative to `scale`.
pub fn close(a: f64, b: f64, rtol: f64, scale: f64) -> bool {
    (a - b).abs() <= rtol * a.abs().max(b.abs()).max(scale)
}
