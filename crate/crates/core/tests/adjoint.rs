mod common;

use common::checks::*;

#[test]
fn dc_sensitivities_match_resolve() {
    for (name, node, wrt) in DC_SENSE_CASES {
        dc_sensitivity_report(name, node, wrt).unwrap_or_else(|e| panic!("{e}"));
    }
}

#[test]
fn scalar_real_backprop_is_exact() {
    assert!(scalar_real_backprop() < 1e-12);
}

#[test]
fn scalar_complex_wirtinger_case() {
    let e = scalar_complex_backprop();
    assert!(e < 1e-8, "{e}");
}

#[test]
fn random_real_system() {
    for seed in [1, 7, 42] {
        let e = random_linear_backprop(20, false, seed);
        assert!(e < 1e-6, "seed {seed}: {e}");
    }
}

#[test]
fn random_complex_system() {
    for seed in [3, 11, 99] {
        let e = random_linear_backprop(20, true, seed);
        assert!(e < 1e-6, "seed {seed}: {e}");
    }
}

#[test]
fn ip_target_equals_bound_global() {
    use gradnet::analysis::{self, dc_sensitivity};
    let ckt = common::circuit("cs_stage");
    let x = analysis::solve_dc(&ckt, &tight()).unwrap().x;
    let mut g = vec![0.0; ckt.n];
    g[ckt.signal_index("out").unwrap()] = 1.0;
    let t = [ckt.target("m1.MosW").unwrap(), ckt.target("W").unwrap()];
    let s = dc_sensitivity(&ckt, &x, &g, &t).unwrap();
    assert!((s[0] - s[1]).abs() <= 1e-12 * s[1].abs());
}
