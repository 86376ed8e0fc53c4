use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_momentum-certify"));
    c.env_remove("MC_THREADS");
    c
}

fn run(c: &mut Command) -> Output {
    c.output().expect("binary runs")
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn certify_exit_codes() {
    let ok = run(bin().args([
        "certify", "--preset", "ag", "--mu", "1", "--L", "4", "--sigma", "1",
    ]));
    assert_eq!(ok.status.code(), Some(0));
    let report = json(&ok);
    assert_eq!(report["feasible"], true);
    assert!((report["rho"].as_f64().unwrap() - 0.5).abs() < 1e-12);
    assert!((report["constants"]["K"].as_f64().unwrap() - 0.25).abs() < 1e-12);

    let kappa_one = run(bin().args(["certify", "--preset", "ag", "--mu", "2", "--L", "2"]));
    assert_eq!(kappa_one.status.code(), Some(2));

    let infeasible = run(bin().args([
        "certify", "--preset", "ag", "--mu", "1", "--L", "4", "--rho", "0.1",
    ]));
    assert_eq!(infeasible.status.code(), Some(1));
    assert_eq!(json(&infeasible)["feasible"], false);
}

#[test]
fn stationary_reports_both_traces() {
    let out = run(bin().args(["stationary", "--preset", "hb", "--eigenvalues", "1,4"]));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    for key in ["trace_solver", "trace_closed", "trace_exact_closed_form"] {
        assert!((v[key].as_f64().unwrap() - 1.25).abs() < 1e-10, "{key}");
    }
}

#[test]
fn contraction_emits_csv() {
    let out = run(bin().args(["contraction", "--preset", "ag", "--k-max", "20"]));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("k,w2_sq,rho_pow_k,ratio"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 21);
    assert!(rows.iter().skip(1).all(|r| r[3] <= 1.0 + 1e-9));
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn simulate_output_does_not_depend_on_threads() {
    let mut outputs = Vec::new();
    for (threads, env) in [
        (Some("1"), None),
        (Some("4"), None),
        (None, Some("3")),
        (None, None),
    ] {
        let dir = tempfile::tempdir().unwrap();
        let mut c = bin();
        c.args([
            "simulate",
            "--paths",
            "300",
            "--k-max",
            "50",
            "--snapshots",
            "10,50",
            "--seed",
            "5",
        ])
        .arg("--out")
        .arg(dir.path());
        if let Some(t) = threads {
            c.args(["--threads", t]);
        }
        if let Some(e) = env {
            c.env("MC_THREADS", e);
        }
        let out = run(&mut c);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        outputs.push(read_dir_sorted(dir.path()));
    }
    assert_eq!(outputs[0].len(), 4);
    assert!(outputs.iter().all(|o| *o == outputs[0]));
}

#[test]
fn figure1_right_panel_is_reproducible() {
    let run_once = |extra: &[&str]| {
        let dir = tempfile::tempdir().unwrap();
        let out = run(bin()
            .args(["figure1", "--panel", "right", "--paths", "200", "--seed", "3"])
            .args(extra)
            .arg("--out")
            .arg(dir.path()));
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        read_dir_sorted(dir.path())
    };
    let serial = run_once(&["--serial"]);
    assert!(serial.iter().any(|(n, _)| n == "right_hist_k625.csv"));
    assert_eq!(serial, run_once(&["--threads", "4"]));
}

#[test]
fn bad_thread_count_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(bin()
        .args(["simulate", "--paths", "10", "--k-max", "5"])
        .arg("--out")
        .arg(dir.path())
        .env("MC_THREADS", "zero"));
    assert!(!out.status.success());
}
