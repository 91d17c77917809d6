//! Synthetic square-law MOSFET tables.
//!
//! Smooth stand-in for characterized device databases. The drain current is
//!
//! ```text
//! ID = ½·kp·(W/L)·[g(Vov)² − g(Vov − Vds)²]·(1 + λ·Vds) + gleak·Vds
//! ```
//!
//! with `Vov = Vgs − Vth` and `g` a softplus of width [`SMOOTH`], so in
//! saturation (`Vds > Vov ≫ SMOOTH`) it is the textbook `½·kp·(W/L)·Vov²·(1+λVds)`.
//! GM, GDS and GMB are its exact partial derivatives. Process corners scale the
//! mobility by ±10 %, temperature shifts the threshold by −2 mV/°C. Lengths and
//! widths are in µm. Everything is deterministic; nothing is sampled.

use super::table::{Axis, InterpTable, TableError};

pub const SLABS: [&str; 10] = ["ID", "GDS", "CDD", "CSS", "CGG", "CGS", "CGD", "GM", "GMB", "VTH"];
pub const AXES: [&str; 5] = ["Vgs", "Vds", "Vsb", "MosL", "MosW"];
pub const CORNERS: [&str; 3] = ["tt", "ff", "ss"];
pub const TEMPERATURES: [f64; 3] = [27.0, -40.0, 125.0];

pub const SMOOTH: f64 = 0.15;
const GLEAK: f64 = 1e-9;
const GAMMA: f64 = 0.4;
const PHI: f64 = 0.7;
const COX: f64 = 5e-15;
const COV: f64 = 0.3e-15;
const CJ: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    N,
    P,
}

impl Polarity {
    fn kp(self) -> f64 {
        match self {
            Polarity::N => 200e-6,
            Polarity::P => 80e-6,
        }
    }

    fn vth0(self) -> f64 {
        match self {
            Polarity::N => 0.7,
            Polarity::P => 0.8,
        }
    }
}

/// Polarity of a shipped synthetic device name.
pub fn device_polarity(device: &str) -> Option<Polarity> {
    match device {
        "NMOSTYPE" => Some(Polarity::N),
        "PMOSTYPE" => Some(Polarity::P),
        _ => None,
    }
}

pub fn mobility_factor(corner: &str) -> Option<f64> {
    match corner {
        "tt" => Some(1.0),
        "ff" => Some(1.1),
        "ss" => Some(0.9),
        _ => None,
    }
}

fn softplus(u: f64) -> f64 {
    let z = u / SMOOTH;
    if z > 30.0 {
        u
    } else {
        SMOOTH * z.exp().ln_1p()
    }
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub fn threshold(pol: Polarity, temperature: f64, vsb: f64, l: f64) -> f64 {
    pol.vth0() + 0.02 / l + GAMMA * ((PHI + vsb).sqrt() - PHI.sqrt()) - 0.002 * (temperature - 27.0)
}

/// All ten slabs at one bias point, in [`SLABS`] order. Voltages are taken in
/// the device's own orientation (source-referenced for both polarities).
pub fn mos_point(pol: Polarity, mobility: f64, temperature: f64, v: [f64; 5]) -> [f64; 10] {
    let [vgs, vds, vsb, l, w] = v;
    let vth = threshold(pol, temperature, vsb, l);
    let dvth_dvsb = GAMMA / (2.0 * (PHI + vsb).sqrt());
    let a = 0.5 * pol.kp() * mobility * w / l;
    let lambda = 0.04 / l;
    let vov = vgs - vth;
    let (g1, s1) = (softplus(vov), logistic(vov / SMOOTH));
    let (g2, s2) = (softplus(vov - vds), logistic((vov - vds) / SMOOTH));
    let p = g1 * g1 - g2 * g2;
    let m = 1.0 + lambda * vds;
    let id = a * p * m + GLEAK * vds;
    let gm = a * m * 2.0 * (g1 * s1 - g2 * s2);
    let gds = a * m * 2.0 * g2 * s2 + a * p * lambda + GLEAK;
    let gmb = gm * dvth_dvsb;

    let on = s1;
    let cgs = w * COV + (2.0 / 3.0) * w * l * COX * on;
    let cgd = w * COV;
    let cgg = 0.25 * w * l * COX * (1.0 - on) + 1e-18;
    let cdd = w * CJ / (1.0 + softplus(vds + vsb) / PHI).sqrt();
    let css = w * CJ / (1.0 + softplus(vsb) / PHI).sqrt();
    [id, gds, cdd, css, cgg, cgs, cgd, gm, gmb, vth]
}

pub fn grids() -> [Vec<f64>; 5] {
    let mut vgs = vec![-1.0, -0.5];
    vgs.extend((0..=12).map(|k| 0.25 * k as f64));
    vgs.extend([3.5, 4.0, 4.5, 5.0, 6.0]);
    let mut vds = vec![-1.0, -0.5];
    vds.extend((0..=8).map(|k| 0.25 * k as f64));
    vds.extend([2.5, 3.0, 3.5, 4.0, 4.5, 5.0, 6.0]);
    let vsb = vec![-0.5, 0.0, 0.5, 1.0, 1.75, 3.0];
    let l = vec![0.5, 1.0, 2.0, 4.0, 8.0];
    let w = vec![0.5, 5.0, 50.0, 200.0];
    [vgs, vds, vsb, l, w]
}

/// Generates the table of `device` for one PVT condition.
pub fn mos_table(device: &str, pol: Polarity, corner: &str, temperature: f64) -> Result<InterpTable, TableError> {
    let mobility = mobility_factor(corner).ok_or_else(|| TableError::TableNotFound {
        device: device.to_string(),
        corner: corner.to_string(),
        temperature,
    })?;
    let g = grids();
    let slab_len: usize = g.iter().map(Vec::len).product();
    let mut data = vec![0.0; slab_len * SLABS.len()];
    let mut k = 0;
    for &vgs in &g[0] {
        for &vds in &g[1] {
            for &vsb in &g[2] {
                for &l in &g[3] {
                    for &w in &g[4] {
                        let vals = mos_point(pol, mobility, temperature, [vgs, vds, vsb, l, w]);
                        for (s, val) in vals.iter().enumerate() {
                            data[s * slab_len + k] = *val;
                        }
                        k += 1;
                    }
                }
            }
        }
    }
    let axes = AXES.iter().zip(g).map(|(n, grid)| Axis { name: n.to_string(), grid }).collect();
    InterpTable::new(device, axes, SLABS.iter().map(|s| s.to_string()).collect(), corner, temperature, data)
}
