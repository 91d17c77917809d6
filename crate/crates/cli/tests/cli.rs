use std::path::PathBuf;
use std::process::{Command, Output};

fn fixture(rel: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(rel).to_string_lossy().into_owned()
}

fn net(name: &str) -> String {
    fixture(&format!("netlists/{name}.json"))
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gradnet")).args(args).env_remove("GRADNET_TABLE_DIR").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn json_field(text: &str, key: &str) -> f64 {
    let line = text.lines().find(|l| l.trim_start().starts_with(&format!("\"{key}\""))).unwrap();
    line.split(':').nth(1).unwrap().trim().trim_end_matches(',').parse().unwrap()
}

#[test]
fn op_divider() {
    let o = run(&["op", &net("divider")]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(json_field(&stdout(&o), "mid"), 2.5);
}

#[test]
fn ac_rc_corner() {
    let o = run(&["ac", &net("rc_lowpass"), "--fstart", "1000", "--fstop", "1000"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let row = text.lines().find(|l| l.split(',').nth(1) == Some("out")).unwrap();
    let db: f64 = row.split(',').nth(4).unwrap().parse().unwrap();
    assert!((db + 3.0103).abs() < 0.01, "{db}");
}

#[test]
fn tran_writes_one_row_per_step() {
    let o = run(&["tran", &net("rc_lowpass"), "--tend", "1e-3", "--dt", "1e-4", "--beta", "0.5"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 1 + 11);
}

#[test]
fn sense_divider() {
    let o = run(&["sense", &net("divider"), "--loss", "node:mid", "--wrt", "Rtop,Rbot,Vin"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let t = stdout(&o);
    // mid = Vin Rbot / (Rtop + Rbot) with Rtop = Rbot = 1k, Vin = 5
    assert!((json_field(&t, "Rtop") + 1.25e-3).abs() < 1e-12);
    assert!((json_field(&t, "Rbot") - 1.25e-3).abs() < 1e-12);
    assert!((json_field(&t, "Vin") - 0.5).abs() < 1e-12);
}

#[test]
fn lint_reports_error_code() {
    let o = run(&["lint", &fixture("invalid/circular.json")]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("error: CircularDefinition"), "{}", stderr(&o));
}

#[test]
fn lint_exit_codes_across_fixtures() {
    for (f, code) in [("circular", 1), ("undefined_master", 1), ("disconnected", 0), ("unused_node", 0)] {
        let o = run(&["lint", &fixture(&format!("invalid/{f}.json"))]);
        assert_eq!(o.status.code(), Some(code), "{f}");
    }
    for n in ["divider", "rc_lowpass", "cs_stage", "ota5t", "hierarchy3"] {
        assert_eq!(run(&["lint", &net(n)]).status.code(), Some(0), "{n}");
    }
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&["op"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["ac", &net("rc_lowpass"), "--fstart", "x", "--fstop", "1"]).status.code(), Some(2));
}

#[test]
fn missing_file_is_an_error() {
    let o = run(&["op", "/nonexistent/net.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error: "));
}

#[test]
fn unknown_corner_is_reported() {
    let o = run(&["op", &net("cs_stage"), "--corner", "xx"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("TableNotFound"), "{}", stderr(&o));
}

#[test]
fn output_is_deterministic() {
    for args in [
        vec!["op".to_string(), net("ota5t")],
        vec!["ac".into(), net("ota5t"), "--fstart".into(), "1".into(), "--fstop".into(), "1e9".into()],
        vec!["compile".into(), net("hierarchy3"), "--dump".into()],
    ] {
        let a: Vec<&str> = args.iter().map(String::as_str).collect();
        assert_eq!(run(&a).stdout, run(&a).stdout, "{args:?}");
    }
}

#[test]
fn generated_tables_match_builtin() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    for extra in [&[][..], &["--base64"][..]] {
        let mut args = vec!["gen-tables", "--out", d];
        args.extend(extra);
        assert!(run(&args).status.success());
        for corner in ["tt", "ss"] {
            let builtin = run(&["op", &net("ota5t"), "--corner", corner, "--temp", "-40"]);
            let loaded = run(&["op", &net("ota5t"), "--corner", corner, "--temp", "-40", "--tables", d]);
            assert!(loaded.status.success(), "{}", stderr(&loaded));
            assert_eq!(builtin.stdout, loaded.stdout);
        }
    }
}

#[test]
fn size_cs_stage() {
    let o = run(&["size", &net("cs_stage"), "--spec", &fixture("sizing/cs_stage.json")]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(json_field(&stdout(&o), "objective"), 0.0);
    assert!(stderr(&o).contains("status: Optimal"));
}

#[test]
fn size_infeasible_exits_1() {
    let o = run(&["size", &net("divider"), "--spec", &fixture("sizing/tied_divider.json")]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("error: Infeasible"), "{}", stderr(&o));
}

#[test]
fn output_file_option() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("op.json");
    let o = run(&["op", &net("divider"), "-o", p.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(o.stdout.is_empty());
    assert_eq!(json_field(&std::fs::read_to_string(p).unwrap(), "mid"), 2.5);
}
