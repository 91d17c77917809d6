//! Independent numerical oracles shared by the integration tests and the
//! acceptance harness. Each check returns a short summary or the first failure.

use std::time::Instant;

use num_complex::Complex64;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use gradnet::analysis::{self, output, GainDb, NewtonConfig, TranConfig};
use gradnet::circuit::{Circuit, Target};
use gradnet::compiler::{eval_flat, flatten};
use gradnet::elements::Analysis;
use gradnet::graph::{self, EvalResult, Wanted};
use gradnet::netlist::{self, DiagCode};
use gradnet::optim::{AlOptions, Status};
use gradnet::sizing::{self, SizingSpec};
use gradnet::sparse::{Csc, SparseLu, SparseMat};
use gradnet::submodel::SynthTableSource;

use super::{circuit, doc, fixture, CORPUS};

pub type Check = Result<String, String>;

pub const ANALYSES: [Analysis; 4] = [Analysis::Dc, Analysis::Tran, Analysis::AcBuild, Analysis::AcStimulus];

pub fn tight() -> NewtonConfig {
    NewtonConfig { abstol: 1e-14, reltol: 1e-13, max_iter: 100, ..NewtonConfig::default() }
}

fn step(v: f64) -> f64 {
    if v == 0.0 {
        1e-6
    } else {
        1e-6 * v.abs()
    }
}

/// Central-difference Jacobian of `f` at `p0`, one column per coordinate.
pub fn fd_jacobian(p0: &[f64], rows: usize, f: impl Fn(&[f64]) -> Vec<f64>) -> Vec<Vec<f64>> {
    fd_jacobian_noise(p0, rows, f).0
}

/// Also returns, per column, the round-off level of the difference quotient:
/// a few hundred ulps of the largest function value, divided by `2h`.
pub fn fd_jacobian_noise(p0: &[f64], rows: usize, f: impl Fn(&[f64]) -> Vec<f64>) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut jac = vec![vec![0.0; p0.len()]; rows];
    let mut noise = vec![0.0; p0.len()];
    let mut p = p0.to_vec();
    for k in 0..p0.len() {
        let h = step(p0[k]);
        p[k] = p0[k] + h;
        let up = f(&p);
        p[k] = p0[k] - h;
        let dn = f(&p);
        p[k] = p0[k];
        let big = up.iter().chain(&dn).fold(0.0f64, |m, v| m.max(v.abs()));
        noise[k] = 256.0 * f64::EPSILON * big / (2.0 * h);
        for r in 0..rows {
            jac[r][k] = (up[r] - dn[r]) / (2.0 * h);
        }
    }
    (jac, noise)
}

/// Analytic block against finite differences, allowing their round-off level.
fn compare_fd(what: &str, a: &[Vec<f64>], fd: (Vec<Vec<f64>>, Vec<f64>), rtol: f64) -> Result<(), String> {
    let (b, noise) = fd;
    let scale = a.iter().chain(&b).flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-8 * scale;
    for (r, (ra, rb)) in a.iter().zip(&b).enumerate() {
        for (c, (&x, &y)) in ra.iter().zip(rb).enumerate() {
            let tol = rtol * x.abs().max(y.abs()).max(floor) + noise[c];
            if !((x - y).abs() <= tol) {
                return Err(format!("{what}[{r},{c}]: analytic {x:e} vs finite difference {y:e}"));
            }
        }
    }
    Ok(())
}

/// Entrywise relative comparison; entries below `1e-8` of the block's
/// largest magnitude are compared against that floor instead.
pub fn compare_blocks(what: &str, a: &[Vec<f64>], b: &[Vec<f64>], rtol: f64) -> Result<(), String> {
    let scale = a.iter().chain(b).flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-8 * scale;
    for (r, (ra, rb)) in a.iter().zip(b).enumerate() {
        for (c, (&x, &y)) in ra.iter().zip(rb).enumerate() {
            let tol = rtol * x.abs().max(y.abs()).max(floor);
            if !((x - y).abs() <= tol) {
                return Err(format!("{what}[{r},{c}]: analytic {x:e} vs reference {y:e}"));
            }
        }
    }
    Ok(())
}

fn column_block(m: &SparseMat, cols: usize) -> Vec<Vec<f64>> {
    let mut d = vec![vec![0.0; cols]; m.nrows];
    for &(r, c, v) in &m.entries {
        d[r][c] += v;
    }
    d
}

/// A deterministic point near the DC solution.
pub fn probe_point(ckt: &Circuit) -> Vec<f64> {
    let x0 = analysis::solve_dc(ckt, &NewtonConfig::default()).map(|s| s.x).unwrap_or_else(|_| ckt.initial_guess());
    x0.iter().enumerate().map(|(i, v)| v + 0.1 * ((i as f64) * 1.7 + 0.3).sin()).collect()
}

fn uses_tables(ckt: &Circuit) -> bool {
    ckt.rules.rules.iter().any(|r| r.submodel.as_ref().is_some_and(|m| m.is_table()))
}

fn eval_at(ckt: &Circuit, x: &[f64], bias: &[f64], a: Analysis, wanted: Wanted) -> EvalResult {
    if a.is_ac() {
        ckt.eval_ac(x, bias, a, wanted).unwrap()
    } else {
        ckt.eval(x, a, wanted).unwrap()
    }
}

/// Every instance below the top that has input parameters.
pub fn ip_routes(ckt: &Circuit) -> Vec<Vec<usize>> {
    fn rec(ckt: &Circuit, inst: &gradnet::compiler::SubcircuitInstance, route: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        for (k, c) in inst.subckts.iter().enumerate() {
            route.push(k);
            if !ckt.rules.rules[c.rule].input_params.is_empty() {
                out.push(route.clone());
            }
            rec(ckt, c, route, out);
            route.pop();
        }
    }
    let mut out = Vec::new();
    rec(ckt, &ckt.top, &mut Vec::new(), &mut out);
    out
}

/// All gradient outputs of the graph against central differences for one netlist.
pub fn gradient_report(name: &str) -> Result<usize, String> {
    let ckt = circuit(name);
    let rtol = if uses_tables(&ckt) { 1e-4 } else { 1e-6 };
    let n = ckt.n;
    let x = probe_point(&ckt);
    let bias = analysis::solve_dc(&ckt, &NewtonConfig::default()).map(|s| s.x).unwrap_or_else(|_| x.clone());
    let mut blocks = 0;
    for a in ANALYSES {
        let tag = |what: &str| format!("{name} {a:?} {what}");
        let r = eval_at(&ckt, &x, &bias, a, Wanted::ALL);

        let fq = |xx: &[f64]| eval_at(&ckt, xx, &bias, a, Wanted::NONE).q.to_dense();
        let ff = |xx: &[f64]| eval_at(&ckt, xx, &bias, a, Wanted::NONE).f.to_dense();
        compare_fd(&tag("dQ/dx"), &column_block(&r.dq_dx, n), fd_jacobian_noise(&x, n, fq), rtol)?;
        compare_fd(&tag("dF/dx"), &column_block(&r.df_dx, n), fd_jacobian_noise(&x, n, ff), rtol)?;
        blocks += 2;

        let ng = ckt.globals.len();
        let with_globals = |g: &[f64]| {
            let mut c = ckt.clone();
            c.globals = g.to_vec();
            eval_at(&c, &x, &bias, a, Wanted::NONE)
        };
        let g0 = ckt.globals.clone();
        compare_fd(&tag("dQ/dgv"), &column_block(&r.dq_dgv, ng), fd_jacobian_noise(&g0, n, |g| with_globals(g).q.to_dense()), rtol)?;
        compare_fd(&tag("dF/dgv"), &column_block(&r.df_dgv, ng), fd_jacobian_noise(&g0, n, |g| with_globals(g).f.to_dense()), rtol)?;
        blocks += 2;

        if a.is_ac() {
            let with_bias = |b: &[f64]| ckt.eval_ac(&x, b, a, Wanted::NONE).unwrap();
            compare_fd(&tag("dQ/dbias"), &column_block(&r.dq_dbias, n), fd_jacobian_noise(&bias, n, |b| with_bias(b).q.to_dense()), rtol)?;
            compare_fd(&tag("dF/dbias"), &column_block(&r.df_dbias, n), fd_jacobian_noise(&bias, n, |b| with_bias(b).f.to_dense()), rtol)?;
            blocks += 2;
        }

        for route in ip_routes(&ckt) {
            let signals = if a.is_ac() { &bias } else { &x };
            let loc = ckt.locate(&route, signals, a).unwrap();
            let mut req = ckt.request(&x, a, Wanted::ALL);
            if a.is_ac() {
                req = req.with_bias(&bias);
            }
            let sub = |ip: &[f64]| graph::eval(&ckt.rules, loc.inst, &loc.en, ip, &req.with_wanted(Wanted::NONE)).unwrap();
            let r = graph::eval(&ckt.rules, loc.inst, &loc.en, &loc.ip, &req).unwrap();
            let nip = loc.ip.len();
            let path = format!("{route:?}");
            compare_fd(&tag(&format!("{path} dQ/dip")), &column_block(&r.dq_dip, nip), fd_jacobian_noise(&loc.ip, n, |p| sub(p).q.to_dense()), rtol)?;
            compare_fd(&tag(&format!("{path} dF/dip")), &column_block(&r.df_dip, nip), fd_jacobian_noise(&loc.ip, n, |p| sub(p).f.to_dense()), rtol)?;
            blocks += 2;
        }
    }
    Ok(blocks)
}

pub fn listings() -> Check {
    for name in ["code1_size_dep_resistor", "nmos_code23"] {
        let d = doc(name);
        let errs: Vec<_> = netlist::validate(&d).into_iter().collect();
        if !errs.is_empty() {
            return Err(format!("{name}: unexpected diagnostics {errs:?}"));
        }
        let _ = circuit(name);
    }
    let ckt = circuit("code1_size_dep_resistor");
    let x = analysis::solve_dc(&ckt, &NewtonConfig::default()).map_err(|e| e.to_string())?.x;
    let i = x[ckt.signal_index("v.i").ok_or("no v.i")?];
    // 1 V across the resistor; the source current magnitude is 1/R
    let r = 1.0 / i.abs();
    if (r - 200.0).abs() > 1e-12 * 200.0 {
        return Err(format!("effective resistance {r}"));
    }
    let sm = ckt.rules.rule("SizeDepResistor").and_then(|r| r.submodel.clone()).ok_or("no submodel")?;
    let ev = sm.eval(&[0.0, 0.0], &[2.0, 1.0]).map_err(|e| e.to_string())?;
    if (ev.intrp[0] - 200.0).abs() > 1e-12 * 200.0 {
        return Err(format!("RValue {}", ev.intrp[0]));
    }
    Ok(format!("R = {r:.15} ohm"))
}

pub fn gradients() -> Check {
    let t0 = Instant::now();
    let mut blocks = 0;
    for name in CORPUS {
        blocks += gradient_report(name)?;
    }
    let secs = t0.elapsed().as_secs_f64();
    if secs >= 60.0 {
        return Err(format!("{blocks} blocks matched but took {secs:.1} s"));
    }
    Ok(format!("{blocks} Jacobian blocks over {} netlists in {secs:.2} s", CORPUS.len()))
}

pub fn hierarchy_flat_report(name: &str) -> Result<(), String> {
    let ckt = circuit(name);
    let n = ckt.n;
    let ng = ckt.globals.len();
    let flat = flatten(&ckt.rules, &ckt.top);
    let x = probe_point(&ckt);
    let bias = analysis::solve_dc(&ckt, &NewtonConfig::default()).map(|s| s.x).unwrap_or_else(|_| x.clone());
    for a in ANALYSES {
        let r = eval_at(&ckt, &x, &bias, a, Wanted::ALL);
        let fl = eval_flat(&flat, n, &x, &ckt.globals, a, Some(&bias)).map_err(|e| e.to_string())?;
        let tag = |w: &str| format!("{name} {a:?} {w}");
        compare_blocks(&tag("Q"), &[r.q.to_dense()], &[fl.q.clone()], 1e-12)?;
        compare_blocks(&tag("F"), &[r.f.to_dense()], &[fl.f.clone()], 1e-12)?;
        compare_blocks(&tag("dQ/dx"), &column_block(&r.dq_dx, n), &fl.dq_dx, 1e-12)?;
        compare_blocks(&tag("dF/dx"), &column_block(&r.df_dx, n), &fl.df_dx, 1e-12)?;
        compare_blocks(&tag("dQ/dgv"), &column_block(&r.dq_dgv, ng), &fl.dq_dgv, 1e-12)?;
        compare_blocks(&tag("dF/dgv"), &column_block(&r.df_dgv, ng), &fl.df_dgv, 1e-12)?;
        compare_blocks(&tag("dQ/dbias"), &column_block(&r.dq_dbias, n), &fl.dq_dbias, 1e-12)?;
        compare_blocks(&tag("dF/dbias"), &column_block(&r.df_dbias, n), &fl.df_dbias, 1e-12)?;
    }
    Ok(())
}

pub fn hierarchy_flat() -> Check {
    for name in CORPUS {
        hierarchy_flat_report(name)?;
    }
    Ok(format!("{} netlists x {} analyses", CORPUS.len(), ANALYSES.len()))
}

pub fn divider_dc() -> Result<f64, String> {
    let mut ckt = circuit("divider");
    let mut worst: f64 = 0.0;
    for (rt, rb, vin) in [(1000.0, 1000.0, 5.0), (3000.0, 1000.0, 5.0), (470.0, 2200.0, 1.8)] {
        ckt.globals = vec![rt, rb, vin];
        let x = analysis::solve_dc(&ckt, &NewtonConfig::default()).map_err(|e| e.to_string())?.x;
        let mid = x[ckt.signal_index("mid").unwrap()];
        let exact = vin * rb / (rt + rb);
        worst = worst.max((mid - exact).abs());
    }
    if worst > 1e-9 {
        return Err(format!("divider error {worst:e}"));
    }
    Ok(worst)
}

/// RC discharge from 1 V with the source at 0 V; returns the worst relative
/// error against `exp(-t/RC)` over one time constant.
pub fn rc_transient(beta: f64) -> Result<f64, String> {
    let ckt = circuit("rc_lowpass");
    let tau = ckt.globals[0] * ckt.globals[1];
    let (iin, iout, ib) = (ckt.signal_index("in").unwrap(), ckt.signal_index("out").unwrap(), ckt.signal_index("v.i").unwrap());
    let mut x0 = vec![0.0; ckt.n];
    x0[iout] = 1.0;
    // consistent branch current from the KCL row at `in`
    let r = ckt.eval(&x0, Analysis::Tran, Wanted::NONE).unwrap();
    x0[ib] = -r.f.get(iin) / r.df_dx.get(iin, ib);
    let cfg = TranConfig { t_end: tau, dt: tau / 100.0, beta, initial: Some(x0), newton: tight() };
    let traj = analysis::solve_tran(&ckt, &cfg).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for (t, x) in traj.times.iter().zip(&traj.states) {
        let exact = (-t / tau).exp();
        worst = worst.max((x[iout] - exact).abs() / exact);
    }
    Ok(worst)
}

pub fn rc_corner_db() -> Result<f64, String> {
    let ckt = circuit("rc_lowpass");
    let tau = ckt.globals[0] * ckt.globals[1];
    let x = analysis::solve_dc(&ckt, &NewtonConfig::default()).map_err(|e| e.to_string())?.x;
    let sys = analysis::solve_ac(&ckt, &x, 1.0 / tau).map_err(|e| e.to_string())?;
    Ok(output::mag_db(sys.eps[ckt.signal_index("out").unwrap()]))
}

/// Worst relative gap between the AC response at ω → 0 and the DC
/// derivative of every unknown along the AC stimulus `Σ w·∂/∂g`.
pub fn ac_low_frequency(name: &str, drive: &[(&str, f64)]) -> Result<f64, String> {
    let ckt = circuit(name);
    let x = analysis::solve_dc(&ckt, &tight()).map_err(|e| e.to_string())?.x;
    let sys = analysis::solve_ac(&ckt, &x, 1e-9).map_err(|e| e.to_string())?;
    let targets: Vec<Target> = drive.iter().map(|(n, _)| ckt.target(n).unwrap()).collect();
    let scale = sys.eps.iter().fold(0.0f64, |m, z| m.max(z.norm()));
    let mut worst: f64 = 0.0;
    for i in 0..ckt.n {
        let mut g = vec![0.0; ckt.n];
        g[i] = 1.0;
        let s = analysis::dc_sensitivity(&ckt, &x, &g, &targets).map_err(|e| e.to_string())?;
        let dc: f64 = s.iter().zip(drive).map(|(d, (_, w))| d * w).sum();
        let err = (sys.eps[i] - Complex64::new(dc, 0.0)).norm() / dc.abs().max(1e-9 * scale);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Netlists whose small-signal elements are the exact partials of their DC
/// currents, so AC at ω → 0 must reproduce the linearized DC solve.
pub const CONSISTENT_SMALL_SIGNAL: [(&str, &[(&str, f64)]); 1] = [("cs_stage_expr", &[("Vb", 1.0)])];

/// Table-model netlists: GM/GDS are separate interpolated slabs, not the
/// derivative of the interpolated ID, so the ω → 0 gap measures table
/// self-consistency rather than the solver.
pub const TABLE_SMALL_SIGNAL: [(&str, &[(&str, f64)]); 2] =
    [("cs_stage", &[("Vb", 1.0)]), ("ota5t", &[("Vp", 0.5), ("Vm", -0.5)])];

pub fn analytic() -> Check {
    let div = divider_dc()?;
    let be = rc_transient(1.0)?;
    let tr = rc_transient(0.5)?;
    if be > 0.02 || tr > 0.02 {
        return Err(format!("RC transient error BE {be:.3e}, trapezoidal {tr:.3e}"));
    }
    let db = rc_corner_db()?;
    if (db + 3.0103).abs() > 0.01 {
        return Err(format!("RC corner gain {db} dB"));
    }
    let mut lf: f64 = 0.0;
    for (name, drive) in CONSISTENT_SMALL_SIGNAL {
        lf = lf.max(ac_low_frequency(name, drive)?);
    }
    if lf > 1e-6 {
        return Err(format!("AC at w->0 differs from DC small-signal by {lf:e}"));
    }
    let mut table_gap: f64 = 0.0;
    for (name, drive) in TABLE_SMALL_SIGNAL {
        table_gap = table_gap.max(ac_low_frequency(name, drive)?);
    }
    Ok(format!(
        "divider {div:.1e}, RC BE {be:.2e} / TR {tr:.2e}, corner {db:.5} dB, w->0 {lf:.1e} (table models: {table_gap:.1e})"
    ))
}

pub const DC_SENSE_CASES: [(&str, &str, &[&str]); 6] = [
    ("divider", "mid", &["Rtop", "Rbot", "Vin"]),
    ("code1_size_dep_resistor", "v.i", &["Rl", "Rw", "x.Rlength"]),
    ("nonlinear_divider", "mid", &[]),
    ("cs_stage", "out", &["W", "L", "Vb", "RL", "m1.MosW"]),
    ("ota5t", "out", &["W1", "W3", "L2", "Vb", "Vp"]),
    ("hierarchy3", "", &[]),
];

/// Adjoint DC sensitivity against re-solved central differences over Globals.
pub fn dc_sensitivity_report(name: &str, node: &str, wrt: &[&str]) -> Result<usize, String> {
    let ckt = circuit(name);
    let node = if node.is_empty() { ckt.names[ckt.n - 1].clone() } else { node.to_string() };
    let wrt: Vec<String> = if wrt.is_empty() { ckt.rules.global_names.clone() } else { wrt.iter().map(|s| s.to_string()).collect() };
    let i = ckt.signal_index(&node).ok_or("unknown node")?;
    let x = analysis::solve_dc(&ckt, &tight()).map_err(|e| e.to_string())?.x;
    let targets: Vec<Target> = wrt.iter().map(|n| ckt.target(n).ok_or(format!("unknown target {n}"))).collect::<Result<_, _>>()?;
    let mut g = vec![0.0; ckt.n];
    g[i] = 1.0;
    let adj = analysis::dc_sensitivity(&ckt, &x, &g, &targets).map_err(|e| e.to_string())?;
    // instance parameters bound to a Global are perturbed through that Global
    let mut fd = Vec::new();
    for (name_t, t) in wrt.iter().zip(&targets) {
        let gi = match t {
            Target::Global(k) => *k,
            Target::Ip { .. } => {
                let bound = match name_t.as_str() {
                    "x.Rlength" => "Rl",
                    "m1.MosW" => "W",
                    other => return Err(format!("no Global bound to {other}")),
                };
                ckt.global_index(bound).unwrap()
            }
        };
        let col = fd_jacobian(&[ckt.globals[gi]], 1, |p| {
            let mut c = ckt.clone();
            c.globals[gi] = p[0];
            let mut cfg = tight();
            cfg.initial_x = Some(x.clone());
            vec![analysis::solve_dc(&c, &cfg).unwrap().x[i]]
        });
        fd.push(col[0][0]);
    }
    compare_blocks(&format!("{name} d{node}/dp"), &[adj], &[fd], 1e-6)?;
    Ok(targets.len())
}

fn complex_csc(a: &[Vec<Complex64>]) -> Csc<Complex64> {
    let n = a.len();
    let trip = (0..n).flat_map(|r| (0..n).map(move |c| (r, c))).map(|(r, c)| (r, c, a[r][c])).collect();
    SparseMat::from_triplets(n, n, trip).to_csc()
}

/// `A(θ)·v = b(θ)` with `A = A0 + Σθ_k·A_k`, `b = b0 + Σθ_k·b_k`, loss
/// `Σ c_i·|v_i|²`. Returns the worst relative gap between the backprop
/// gradient and re-solve central differences.
pub fn random_linear_backprop(n: usize, complex: bool, seed: u64) -> f64 {
    let mut rng = StdRng::seed_from_u64(seed);
    let nparam = 3;
    let cplx = |rng: &mut StdRng| {
        Complex64::new(rng.gen_range(-1.0..1.0), if complex { rng.gen_range(-1.0..1.0) } else { 0.0 })
    };
    let mut a0 = vec![vec![Complex64::new(0.0, 0.0); n]; n];
    for (i, row) in a0.iter_mut().enumerate() {
        for v in row.iter_mut() {
            if rng.gen_bool(0.3) {
                *v = cplx(&mut rng);
            }
        }
        row[i] += Complex64::new(n as f64, 0.0);
    }
    let ak: Vec<Vec<Vec<Complex64>>> =
        (0..nparam).map(|_| (0..n).map(|_| (0..n).map(|_| if rng.gen_bool(0.2) { cplx(&mut rng) } else { Complex64::new(0.0, 0.0) }).collect()).collect()).collect();
    let b0: Vec<Complex64> = (0..n).map(|_| cplx(&mut rng)).collect();
    let bk: Vec<Vec<Complex64>> = (0..nparam).map(|_| (0..n).map(|_| cplx(&mut rng)).collect()).collect();
    let c: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..1.5)).collect();
    let theta0: Vec<f64> = (0..nparam).map(|_| rng.gen_range(-0.5..0.5)).collect();

    let assemble = |th: &[f64]| {
        let mut a = a0.clone();
        let mut b = b0.clone();
        for k in 0..nparam {
            for r in 0..n {
                for cc in 0..n {
                    a[r][cc] += ak[k][r][cc] * th[k];
                }
                b[r] += bk[k][r] * th[k];
            }
        }
        (a, b)
    };
    let loss = |v: &[Complex64]| v.iter().zip(&c).map(|(z, w)| w * z.norm_sqr()).sum::<f64>();
    let solve = |th: &[f64]| {
        let (a, b) = assemble(th);
        let lu = SparseLu::factor(&complex_csc(&a)).unwrap();
        let v = lu.solve(&b);
        (lu, v)
    };

    let (lu, v) = solve(&theta0);
    let dldv: Vec<Complex64> = v.iter().zip(&c).map(|(z, w)| z * (2.0 * w)).collect();
    let da: Vec<SparseMat<Complex64>> = ak
        .iter()
        .map(|m| {
            let t = (0..n).flat_map(|r| (0..n).map(move |cc| (r, cc))).filter(|&(r, cc)| m[r][cc] != Complex64::new(0.0, 0.0)).map(|(r, cc)| (r, cc, m[r][cc])).collect();
            SparseMat::from_triplets(n, n, t)
        })
        .collect();
    let db = SparseMat::from_triplets(n, nparam, (0..nparam).flat_map(|k| bk[k].iter().enumerate().map(move |(r, z)| (r, k, *z))).collect());
    let grad = analysis::linear_solution_backprop(&lu, &v, &dldv, &da, &db);
    let fd = fd_jacobian(&theta0, 1, |th| vec![loss(&solve(th).1)]);
    grad.iter().zip(&fd[0]).map(|(g, f)| (g - f).abs() / g.abs().max(f.abs()).max(1e-12)).fold(0.0, f64::max)
}

/// 1×1 complex case `a(θ)·v = 1` with `a = θ₁ + iθ₂`, `l = |v|²`, against the
/// closed form `dl/dθ_k = −2·Re(a_k·conj(a))/|a|⁴`.
pub fn scalar_complex_backprop() -> f64 {
    let th = [0.7, -1.3];
    let a = Complex64::new(th[0], th[1]);
    let lu = SparseLu::factor(&complex_csc(&[vec![a]])).unwrap();
    let v = lu.solve(&[Complex64::new(1.0, 0.0)]);
    let dldv = vec![v[0] * 2.0];
    let da = vec![
        SparseMat::from_triplets(1, 1, vec![(0, 0, Complex64::new(1.0, 0.0))]),
        SparseMat::from_triplets(1, 1, vec![(0, 0, Complex64::new(0.0, 1.0))]),
    ];
    let db = SparseMat::zeros(1, 2);
    let grad = analysis::linear_solution_backprop(&lu, &v, &dldv, &da, &db);
    let m4 = a.norm_sqr().powi(2);
    let exact = [-2.0 * th[0] / m4, -2.0 * th[1] / m4];
    grad.iter().zip(exact).map(|(g, e)| (g - e).abs() / e.abs()).fold(0.0, f64::max)
}

/// 1×1 real case `θ₁·v = θ₂`, `l = v²`.
pub fn scalar_real_backprop() -> f64 {
    let th = [2.5, 1.5];
    let csc = SparseMat::from_triplets(1, 1, vec![(0, 0, th[0])]).to_csc();
    let lu = SparseLu::factor(&csc).unwrap();
    let v = lu.solve(&[th[1]]);
    let da = vec![SparseMat::from_triplets(1, 1, vec![(0, 0, 1.0)]), SparseMat::zeros(1, 1)];
    let db = SparseMat::from_triplets(1, 2, vec![(0, 1, 1.0)]);
    let grad = analysis::linear_solution_backprop(&lu, &v, &[2.0 * v[0]], &da, &db);
    let vv = th[1] / th[0];
    let exact = [-2.0 * vv * vv / th[0], 2.0 * vv / th[0]];
    grad.iter().zip(exact).map(|(g, e)| (g - e).abs() / e.abs()).fold(0.0, f64::max)
}

pub fn adjoint() -> Check {
    let mut params = 0;
    for (name, node, wrt) in DC_SENSE_CASES {
        params += dc_sensitivity_report(name, node, wrt)?;
    }
    let real1 = scalar_real_backprop();
    let cplx1 = scalar_complex_backprop();
    let real20 = random_linear_backprop(20, false, 7);
    let cplx20 = random_linear_backprop(20, true, 11);
    if real1 > 1e-6 || real20 > 1e-6 || cplx20 > 1e-6 || cplx1 > 1e-8 {
        return Err(format!("backprop errors: 1x1 real {real1:e}, 20x20 real {real20:e}, 20x20 complex {cplx20:e}, 1x1 complex {cplx1:e}"));
    }
    Ok(format!("{params} DC sensitivities; linear backprop worst {:.1e}", real20.max(cplx20).max(real1).max(cplx1)))
}

/// Gain sensitivity of the CS stage through DC and AC, against perturbing
/// the width Global and re-running the whole pipeline.
pub fn dcac_cs() -> Result<(f64, f64, f64), String> {
    let ckt = circuit("cs_stage");
    let out = ckt.signal_index("out").unwrap();
    let omega = 2.0 * std::f64::consts::PI * 1e3;
    let targets = vec![ckt.target("m1.MosW").unwrap(), ckt.target("W").unwrap()];
    let r = analysis::solve_dcac(&ckt, omega, &GainDb { node: out }, &targets, &tight()).map_err(|e| e.to_string())?;
    let gw = ckt.global_index("W").unwrap();
    let fd = fd_jacobian(&[ckt.globals[gw]], 1, |p| {
        let mut c = ckt.clone();
        c.globals[gw] = p[0];
        vec![analysis::solve_dcac(&c, omega, &GainDb { node: out }, &[], &tight()).unwrap().loss]
    })[0][0];
    Ok((r.grad[0], r.grad[1], fd))
}

pub fn dcac() -> Check {
    let (via_ip, via_global, fd) = dcac_cs()?;
    let e1 = (via_ip - fd).abs() / fd.abs();
    let e2 = (via_global - fd).abs() / fd.abs();
    if e1 > 1e-4 || e2 > 1e-4 {
        return Err(format!("d gain/dW: MosW {via_ip:e}, W {via_global:e}, FD {fd:e}"));
    }
    Ok(format!("d gain_dB/dMosW = {via_ip:.6e}, FD {fd:.6e}, rel {e1:.1e}"))
}

pub struct SizingRun {
    pub result: sizing::SizingResult,
    pub seconds: f64,
    pub problem: sizing::SizingProblem,
}

pub fn run_sizing(netlist_name: &str, spec_name: &str, permute: bool) -> Result<SizingRun, String> {
    let d = doc(netlist_name);
    let text = std::fs::read_to_string(fixture(&format!("sizing/{spec_name}.json"))).unwrap();
    let mut spec = SizingSpec::parse(&text).map_err(|e| e.to_string())?;
    if permute {
        spec.corners.reverse();
        let k = spec.corners.len() / 2;
        spec.corners.rotate_left(k);
    }
    let tables = SynthTableSource::default();
    let t0 = Instant::now();
    let problem = sizing::build_problem(&d, &spec, &tables, Default::default()).map_err(|e| e.to_string())?;
    let result = {
        let cb = sizing::make_callbacks(&problem);
        sizing::optimize(&cb, &AlOptions::default()).map_err(|e| e.to_string())?
    };
    Ok(SizingRun { result, seconds: t0.elapsed().as_secs_f64(), problem })
}

pub fn ota_sizing() -> Check {
    let run = run_sizing("ota5t", "ota5t", false)?;
    let r = &run.result;
    if r.status != Status::Optimal {
        return Err(format!("status {}", r.status.as_str()));
    }
    if r.objective > 1e-8 {
        return Err(format!("objective {:e}", r.objective));
    }
    let sat_rows = run.problem.cases.len() * 4 * run.problem.devices.len();
    let mut worst = f64::INFINITY;
    for c in 0..run.problem.cases.len() {
        let base = c * run.problem.n_corner_rows();
        for v in &r.constraints[base..base + 4 * run.problem.devices.len()] {
            worst = worst.min(*v);
        }
    }
    if worst < -1e-6 {
        return Err(format!("saturation row at {worst:e}"));
    }
    let value = |n: &str| r.p_opt.iter().find(|(k, _)| k == n).unwrap().1;
    for (a, b) in [("W1", "W2"), ("W3", "W4"), ("L1", "L2"), ("L3", "L4")] {
        if value(a).to_bits() != value(b).to_bits() {
            return Err(format!("tie {a}/{b}: {} vs {}", value(a), value(b)));
        }
    }
    if run.seconds >= 120.0 {
        return Err(format!("took {:.1} s", run.seconds));
    }
    let perm = run_sizing("ota5t", "ota5t", true)?;
    let mut drift: f64 = 0.0;
    for (((_, a), (_, b)), dv) in r.p_opt.iter().zip(&perm.result.p_opt).zip(&run.problem.vars) {
        let g = &run.problem.groups[dv.group];
        drift = drift.max((a - b).abs() / (g.upper - g.lower));
    }
    if drift > 1e-6 {
        return Err(format!("permuted corners moved p_opt by {drift:e}"));
    }
    Ok(format!(
        "{} corners, {sat_rows} saturation rows (min {worst:.3e}), {} outer iterations, {:.2} s, permutation drift {drift:.1e}",
        run.problem.cases.len(),
        r.iterations,
        run.seconds
    ))
}

pub const INVALID: [(&str, DiagCode); 4] = [
    ("circular", DiagCode::CircularDefinition),
    ("undefined_master", DiagCode::UndefinedMaster),
    ("unused_node", DiagCode::UnusedNode),
    ("disconnected", DiagCode::DisconnectedComponent),
];

pub fn static_checks() -> Check {
    let mut all = Vec::new();
    for (f, _) in INVALID {
        let src = std::fs::read_to_string(fixture(&format!("invalid/{f}.json"))).unwrap();
        let d = netlist::parse(&src).map_err(|e| format!("{f}: {e}"))?;
        all.extend(netlist::validate(&d).into_iter().map(|x| (f, x.code)));
    }
    for (f, code) in INVALID {
        let total = all.iter().filter(|(_, c)| *c == code).count();
        let here = all.iter().filter(|(g, c)| *g == f && *c == code).count();
        if total != 1 || here != 1 {
            return Err(format!("{code}: {here} in {f}.json, {total} across the corpus"));
        }
    }
    Ok(format!("{} diagnostics, one per code", all.len()))
}
