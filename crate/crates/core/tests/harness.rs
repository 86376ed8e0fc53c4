use momentum_core::certificates::Preset;
use momentum_core::harness::{
    figure1_configs, run_experiment, write_outputs, Execution, ExperimentConfig, NoiseSpec, Panel, ParamSpec,
};
use momentum_core::problems::ObjectiveSpec;
use momentum_core::{ConstraintSet, Error, Method};

fn config(method: Method, params: ParamSpec, n_paths: usize) -> ExperimentConfig {
    ExperimentConfig {
        objective: ObjectiveSpec::Quadratic {
            eigenvalues: vec![1.0, 4.0],
            a: vec![],
            b: 0.0,
        },
        method,
        params,
        noise: NoiseSpec::IsotropicGaussian { sigma: 0.5 },
        n_paths,
        k_max: 60,
        snapshot_ks: vec![10, 60],
        master_seed: 42,
        x0: None,
        constraint: None,
        bins: 10,
        record_stride: 5,
        moment_k: None,
        label: "test".into(),
    }
}

#[test]
fn config_roundtrips_through_json() {
    let cfg = config(Method::Ag, ParamSpec::Preset(Preset::Ag), 10);
    let json = serde_json::to_string(&cfg).unwrap();
    assert_eq!(serde_json::from_str::<ExperimentConfig>(&json).unwrap(), cfg);
    let explicit: ExperimentConfig = serde_json::from_str(
        r#"{"objective":{"type":"quadratic","eigenvalues":[1,2]},"method":"hb",
            "params":{"alpha":0.1,"beta":0.3},"noise":{"kind":"none"},
            "n_paths":3,"k_max":5,"master_seed":0}"#,
    )
    .unwrap();
    assert_eq!(
        explicit.params,
        ParamSpec::Explicit {
            alpha: 0.1,
            beta: 0.3
        }
    );
    assert_eq!(explicit.bins, 50);
}

#[test]
fn recorded_rows_follow_stride_and_snapshots() {
    let res = run_experiment(
        &config(Method::Hb, ParamSpec::Preset(Preset::Hb), 200),
        Execution::Serial,
    )
    .unwrap();
    let ks: Vec<usize> = res.curve.iter().map(|r| r.k).collect();
    assert_eq!(ks, (0..=60).step_by(5).collect::<Vec<_>>());
    assert_eq!(
        res.snapshots.iter().map(|s| s.k).collect::<Vec<_>>(),
        vec![10, 60]
    );
    for s in &res.snapshots {
        assert_eq!(s.gaps.len(), 200);
        assert_eq!(s.histogram.total(), 200);
    }
    for row in &res.curve {
        assert!(row.q05 <= row.q25 && row.q25 <= row.q50 && row.q50 <= row.q75 && row.q75 <= row.q95);
        assert_eq!(row.n_alive, 200);
    }
    // ones at rest on diag(1,4): f - f* = 2.5 at k = 0
    assert!((res.curve[0].mean_gap - 2.5).abs() < 1e-12);
}

#[test]
fn serial_and_parallel_runs_agree_exactly() {
    let cfg = config(Method::Ag, ParamSpec::Preset(Preset::AgStar), 300);
    let serial = run_experiment(&cfg, Execution::Serial).unwrap();
    for threads in [Some(1), Some(3), None] {
        let par = run_experiment(&cfg, Execution::Parallel { threads }).unwrap();
        assert_eq!(
            serde_json::to_string(&par).unwrap(),
            serde_json::to_string(&serial).unwrap()
        );
    }
}

#[test]
fn divergent_runs_are_reported() {
    let cfg = config(
        Method::Gd,
        ParamSpec::Explicit {
            alpha: 1.0,
            beta: 0.0,
        },
        20,
    );
    let cfg = ExperimentConfig {
        k_max: 2000,
        snapshot_ks: vec![],
        ..cfg
    };
    assert!(matches!(
        run_experiment(&cfg, Execution::Serial),
        Err(Error::AllDiverged { .. })
    ));
}

#[test]
fn projected_runs_stay_in_the_set() {
    let mut cfg = config(Method::Aspg, ParamSpec::Preset(Preset::Ag), 50);
    cfg.constraint = Some(ConstraintSet::ball(vec![0.0, 0.0], 2.0).unwrap());
    cfg.x0 = Some(vec![1.0, 1.0]);
    let res = run_experiment(&cfg, Execution::Serial).unwrap();
    assert_eq!(res.n_diverged, 0);
    // f - f* on the ball of radius 2 is at most 4 * 2^2 / 2
    assert!(res.curve.iter().all(|r| r.q95 <= 8.0));
}

#[test]
fn outputs_are_written_with_stable_names() {
    let dir = tempfile::tempdir().unwrap();
    let res = run_experiment(
        &config(Method::Hb, ParamSpec::Preset(Preset::Hb), 50),
        Execution::Serial,
    )
    .unwrap();
    let files = write_outputs(&res, dir.path(), "run").unwrap();
    let mut names: Vec<String> = files
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "run_curve.csv",
            "run_hist_k10.csv",
            "run_hist_k60.csv",
            "run_summary.json"
        ]
    );
    let curve = std::fs::read_to_string(dir.path().join("run_curve.csv")).unwrap();
    assert!(curve.starts_with("k,mean_gap,q05,q25,q50,q75,q95,n_alive\n"));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["n_paths"], 50);
}

#[test]
fn figure1_protocol_shapes() {
    let left = figure1_configs(Panel::Left, 1, 10);
    assert_eq!(left.len(), 4);
    assert!(left.iter().all(|(_, c)| c.k_max == 1000));
    let right = figure1_configs(Panel::Right, 1, 10);
    assert_eq!(right.len(), 1);
    assert_eq!(right[0].1.snapshot_ks, vec![5, 25, 125, 625]);
    assert_eq!("middle".parse::<Panel>().unwrap(), Panel::Middle);
}
