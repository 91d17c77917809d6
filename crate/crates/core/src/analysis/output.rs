//! Plain-text result formats. Every float is printed with 17 significant digits.

use std::fmt::Write as _;

use num_complex::Complex64;

use super::{AcPoint, Trajectory};

pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// `{"name": value, ...}` in signal order.
pub fn dc_json(names: &[String], x: &[f64]) -> String {
    named_json(names.iter().map(String::as_str).zip(x.iter().copied()))
}

pub fn named_json<'a>(items: impl IntoIterator<Item = (&'a str, f64)>) -> String {
    let body: Vec<String> = items
        .into_iter()
        .map(|(k, v)| {
            let val = if v.is_finite() { num(v) } else { "null".to_string() };
            format!("  {}: {val}", serde_json::Value::String(k.to_string()))
        })
        .collect();
    if body.is_empty() {
        "{}\n".to_string()
    } else {
        format!("{{\n{}\n}}\n", body.join(",\n"))
    }
}

pub fn mag_db(z: Complex64) -> f64 {
    20.0 * z.norm().log10()
}

pub fn phase_deg(z: Complex64) -> f64 {
    z.arg().to_degrees()
}

/// Long-format sweep: one row per frequency and signal.
pub fn ac_csv(names: &[String], sweep: &[AcPoint]) -> String {
    let mut out = String::from("freq_hz,node,re,im,mag_db,phase_deg\n");
    for p in sweep {
        for (name, z) in names.iter().zip(&p.eps) {
            let _ = writeln!(
                out,
                "{},{name},{},{},{},{}",
                num(p.freq_hz),
                num(z.re),
                num(z.im),
                num(mag_db(*z)),
                num(phase_deg(*z))
            );
        }
    }
    out
}

pub fn tran_csv(names: &[String], traj: &Trajectory) -> String {
    let mut out = String::from("t");
    for n in names {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for (t, x) in traj.times.iter().zip(&traj.states) {
        out.push_str(&num(*t));
        for v in x {
            out.push(',');
            out.push_str(&num(*v));
        }
        out.push('\n');
    }
    out
}
