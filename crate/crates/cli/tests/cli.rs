use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn brownlab(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_brownlab"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn summary(o: &Output) -> Value {
    let text = String::from_utf8(o.stdout.clone()).unwrap();
    let line = text.lines().last().expect("summary line");
    serde_json::from_str(line).expect("summary is JSON")
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn summary_schema_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let o = brownlab(&["sample", "--measure", "four_points", "--tau", "1+0.5i", "--n", "100"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = summary(&o);
    let mut keys: Vec<&str> = s.as_object().unwrap().keys().map(String::as_str).collect();
    keys.sort();
    assert_eq!(keys, ["cmd", "elapsed_ms", "outputs", "status"]);
    assert_eq!(s["cmd"], "sample");
    assert_eq!(s["status"], "ok");
    assert!(s["elapsed_ms"].is_u64());
    let outputs = s["outputs"].as_array().unwrap();
    assert_eq!(outputs.len(), 1);
    assert!(Path::new(outputs[0].as_str().unwrap()).exists());
}

#[test]
fn domain_writes_profile_and_boundary() {
    let dir = tempfile::tempdir().unwrap();
    let o = brownlab(&["domain", "--measure", "four_points", "--s", "1", "--tau", "1+0.5i"], dir.path());
    assert!(o.status.success());
    let nodes = read(&dir.path().join("domain.csv"));
    let mut lines = nodes.lines();
    assert_eq!(lines.next().unwrap(), "theta,r_s,I_s,R_s,phi_s,delta,v1,v2");
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert!(rows.len() >= 1024);
    for r in &rows {
        assert_eq!(r.len(), 8);
        assert!(r[1] > 0.0 && r[1] <= 1.0);
        assert!(r[6] <= r[7]);
    }
    assert!(rows.windows(2).all(|w| w[1][0] > w[0][0]));
    let boundary = read(&dir.path().join("boundary.csv"));
    let mut lines = boundary.lines();
    assert_eq!(lines.next().unwrap(), "x,y,arc");
    let arcs: Vec<&str> = lines.map(|l| l.rsplit(',').next().unwrap()).collect();
    assert_eq!(arcs.iter().filter(|a| **a == "inner").count(), 720);
    assert_eq!(arcs.iter().filter(|a| **a == "outer").count(), 720);
}

#[test]
fn density_writes_csv_and_pgm() {
    let dir = tempfile::tempdir().unwrap();
    let o = brownlab(&["density", "--measure", "delta1", "--s", "3", "--tau", "1+1i", "--nx", "64", "--ny", "48"], dir.path());
    assert!(o.status.success());
    let csv = read(&dir.path().join("density.csv"));
    assert_eq!(csv.lines().next().unwrap(), "x,y,density");
    assert_eq!(csv.lines().count(), 1 + 64 * 48);
    let pgm = std::fs::read(dir.path().join("density.pgm")).unwrap();
    let header = b"P5\n64 48\n255\n";
    assert_eq!(&pgm[..header.len()], header);
    assert_eq!(pgm.len(), header.len() + 64 * 48);
    assert_eq!(pgm[header.len()..].iter().copied().max(), Some(255));
}

#[test]
fn invalid_tau_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let o = brownlab(&["domain", "--s", "1", "--tau", "2.5+0.5i"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(summary(&o)["status"], "invalid_config");
}

#[test]
fn unreadable_measure_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let o = brownlab(&["domain", "--measure", "no_such_measure.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = brownlab(&["domain", "--measure", r#"{"atoms":[{"angle":0.0,"weight":-1.0}]}"#], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_subcommand_and_bad_complex_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(brownlab(&["frobnicate"], dir.path()).status.code(), Some(2));
    assert_eq!(brownlab(&["domain", "--tau", "1+2+3i"], dir.path()).status.code(), Some(2));
}

#[test]
fn inline_and_file_measures_match_builtin() {
    let dir = tempfile::tempdir().unwrap();
    let json = r#"{"atoms":[{"angle":0.0,"weight":1.0},{"angle":1.5707963267948966,"weight":1.0},{"angle":3.141592653589793,"weight":1.0},{"angle":-1.5707963267948966,"weight":1.0}]}"#;
    let file = dir.path().join("m.json");
    std::fs::write(&file, json).unwrap();
    let mut outputs = Vec::new();
    for (k, m) in ["four_points", json, file.to_str().unwrap()].iter().enumerate() {
        let out = dir.path().join(format!("run{k}"));
        let o = brownlab(&["sample", "--measure", m, "--n", "200", "--seed", "7"], &out);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push(read(&out.join("sample.csv")));
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
}

#[test]
fn runs_are_deterministic_given_seed() {
    let dir = tempfile::tempdir().unwrap();
    let run = |seed: &str, sub: &str| {
        let out = dir.path().join(format!("{sub}{seed}"));
        let o = brownlab(&["sample", "--measure", "four_points", "--tau", "1+0.5i", "--n", "500", "--seed", seed], &out);
        assert!(o.status.success());
        read(&out.join("sample.csv"))
    };
    assert_eq!(run("3", "a"), run("3", "b"));
    assert_ne!(run("3", "a"), run("4", "a"));
}

#[test]
fn simulate_is_independent_of_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let run = |threads: &str| {
        let out = dir.path().join(format!("t{threads}"));
        let o = brownlab(
            &["simulate", "--measure", "four_points", "--tau", "1+0.5i", "--n", "24", "--samples", "3", "--steps", "20", "--bins", "6", "--threads", threads],
            &out,
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        (read(&out.join("eigenvalues.csv")), read(&out.join("simulate.json")))
    };
    let (a, ra) = run("1");
    let (b, rb) = run("3");
    assert_eq!(a, b);
    assert_eq!(ra, rb);
    assert_eq!(a.lines().next().unwrap(), "x,y,sample_index");
    assert_eq!(a.lines().count(), 1 + 24 * 3);
    let report: Value = serde_json::from_str(&ra).unwrap();
    for key in ["inside_fraction", "chi2"] {
        assert!(report[key].is_f64(), "{key}");
    }
}

#[test]
fn moments_export_closed_forms() {
    let dir = tempfile::tempdir().unwrap();
    let o = brownlab(&["moments", "--s", "1", "--tau", "1+0.5i", "--max-len", "2", "--steps", "100", "--word", "+", "--word", "+*"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(&read(&dir.path().join("moments.json"))).unwrap();
    let words = v.as_array().unwrap();
    assert_eq!(words.len(), 2);
    let last = |w: &Value| {
        let t = w["trajectory"].as_array().unwrap();
        let row = t.last().unwrap().as_array().unwrap();
        (row[0].as_f64().unwrap(), row[1].as_f64().unwrap(), row[2].as_f64().unwrap())
    };
    assert_eq!(words[0]["word"], "+");
    let (r, re, im) = last(&words[0]);
    assert_eq!(r, 1.0);
    let expected = exp_complex(0.0, 0.25);
    assert!((re - expected.0).abs() < 1e-8 && (im - expected.1).abs() < 1e-8, "{re} {im}");
    assert_eq!(words[1]["word"], "+*");
    let (_, re, im) = last(&words[1]);
    assert!((re - 1f64.exp()).abs() < 1e-8 && im.abs() < 1e-12);
}

/// e^{a + ib} as (re, im).
fn exp_complex(a: f64, b: f64) -> (f64, f64) {
    (a.exp() * b.cos(), a.exp() * b.sin())
}

#[test]
fn pushforward_writes_pairs_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = brownlab(&["pushforward", "--measure", "four_points", "--tau", "1+0.5i", "--n", "10000", "--bins", "5"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let pairs = read(&dir.path().join("pushforward.csv"));
    assert_eq!(pairs.lines().next().unwrap(), "src_x,src_y,dst_x,dst_y");
    assert_eq!(pairs.lines().count(), 10_001);
    let report: Value = serde_json::from_str(&read(&dir.path().join("pushforward.json"))).unwrap();
    for key in ["sup_discrepancy", "chi2", "pvalue"] {
        assert!(report[key].is_f64(), "{key}");
    }
    assert_eq!(report["n"], 10_000);
}

#[test]
fn potential_and_pde_check_write_declared_columns() {
    let dir = tempfile::tempdir().unwrap();
    let o = brownlab(&["potential", "--nx", "3", "--ny", "2", "--eps", "0.2"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let pot = read(&dir.path().join("potential.csv"));
    assert_eq!(pot.lines().next().unwrap(), "x,y,eps,S,dS_dx,dS_dy,dS_deps");
    assert_eq!(pot.lines().count(), 7);
    let o = brownlab(&["pde-check", "--n", "2"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let pde = read(&dir.path().join("pde_check.csv"));
    assert_eq!(pde.lines().next().unwrap(), "lambda_x,lambda_y,eps,residual_tau,residual_r");
    for line in pde.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert!(v[3] < 1e-3 && v[4] < 1e-3, "{line}");
    }
}

#[test]
fn compare_reports_sigma() {
    let dir = tempfile::tempdir().unwrap();
    let o = brownlab(
        &["compare", "--kind", "moments", "--tau", "1+0.5i", "--n", "16", "--samples", "4", "--steps", "20", "--max-len", "2"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(&read(&dir.path().join("compare.json"))).unwrap();
    assert_eq!(v["kind"], "moments");
    assert!(v["report"]["max_sigma"].is_f64());
    assert_eq!(v["report"]["words"].as_array().unwrap().len(), 5);
}
