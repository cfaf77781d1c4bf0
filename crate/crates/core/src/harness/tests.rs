use super::*;

fn tiny(dir: &Path, kind: SolverKind) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.problem.d = 2;
    c.solver.kind = kind;
    c.solver.n_steps = 5;
    c.solver.w = Some(4);
    c.training.iterations = 0;
    c.training.batch = 8;
    c.training.test_size = 16;
    c.training.final_test_size = 32;
    c.training.scaler_paths = 50;
    c.fixed_point.n_inner = Some(40);
    c.evaluation.n_eval_point = 200;
    c.evaluation.n_eval_traj = 50;
    c.evaluation.traj_count = 2;
    c.sweep.repeats = 1;
    c.output.dir = dir.to_path_buf();
    c.output.checkpoints = false;
    c
}

#[test]
fn empty_toml_gives_defaults() {
    let c = ExperimentConfig::from_toml("").unwrap();
    assert_eq!(c, ExperimentConfig::default());
    assert_eq!(c.arch_name(), "f");
}

#[test]
fn toml_round_trip_and_nested_sections() {
    let text = r#"
        [problem]
        id = "cir_osc"
        d = 3
        params = { T = 0.5 }

        [solver]
        kind = "fixedpoint"
        arch = "C-bis"

        [training]
        iterations = 7
    "#;
    let c = ExperimentConfig::from_toml(text).unwrap();
    assert_eq!(c.problem.id, "cir_osc");
    assert_eq!(c.problem.params["T"], 0.5);
    assert_eq!(c.solver.kind, SolverKind::Fixedpoint);
    assert_eq!(c.scheme().unwrap(), fixedpoint::FpScheme::CBis);
    assert_eq!(c.training.iterations, 7);
    assert_eq!(c.training.batch, crate::training::TrainingConfig::default().batch);
    let back = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
    assert_eq!(back, c);
    assert_eq!(back.hash(), c.hash());
}

#[test]
fn unknown_keys_are_rejected() {
    assert!(matches!(
        ExperimentConfig::from_toml("[solver]\nkinds = \"dbsde\""),
        Err(Error::Config(_))
    ));
}

#[test]
fn arch_must_match_solver() {
    let mut c = ExperimentConfig::default();
    c.solver.arch = Some("A".into());
    assert!(c.network_spec().is_err());
    c.solver.kind = SolverKind::Fixedpoint;
    assert!(c.network_spec().is_ok());
}

#[test]
fn hash_ignores_output_and_sweep() {
    let a = ExperimentConfig::default();
    let mut b = a.clone();
    b.output.dir = "elsewhere".into();
    b.sweep.repeats = 9;
    assert_eq!(a.hash(), b.hash());
    b.training.lr0 = 0.5;
    assert_ne!(a.hash(), b.hash());
    assert_eq!(a.hash().len(), 64);
}

#[test]
fn axis_values_give_distinct_hashes() {
    let c = ExperimentConfig::default();
    let a = c.with_axis("N", 20.0).unwrap();
    let b = c.with_axis("N", 40.0).unwrap();
    assert_eq!((a.solver.n_steps, b.solver.n_steps), (20, 40));
    assert_ne!(a.hash(), b.hash());
}

#[test]
fn maturity_axis_keeps_time_step() {
    let c = ExperimentConfig::default();
    let t2 = c.with_axis("T", 2.0).unwrap();
    assert_eq!(t2.solver.n_steps, 200);
    assert_eq!(t2.problem.params["T"], 2.0);
    let mut free = c.clone();
    free.sweep.couple_maturity = false;
    assert_eq!(free.with_axis("T", 2.0).unwrap().solver.n_steps, 100);
}

#[test]
fn bad_axis_values_are_rejected() {
    let c = ExperimentConfig::default();
    assert!(c.with_axis("N", 2.5).is_err());
    assert!(c.with_axis("no_such_param", 1.0).is_err());
}

#[test]
fn repeat_seeds_are_distinct_and_explicit_seeds_win() {
    let mut c = ExperimentConfig::default();
    let (d0, i0) = c.seeds_for(0);
    let (d1, _) = c.seeds_for(1);
    assert_ne!(d0, d1);
    assert_ne!(d0, i0);
    c.seeds.data = Some(100);
    assert_eq!(c.seeds_for(3).0, 103);
    assert_eq!(c.seeds_for(3).1, ExperimentConfig::default().seeds_for(3).1);
}

#[test]
fn quantile_matches_hand_values() {
    let v = [1.0, 2.0, 3.0, 4.0, 5.0];
    assert_eq!(quantile(&v, 0.0), 1.0);
    assert_eq!(quantile(&v, 0.5), 3.0);
    assert!((quantile(&v, 0.05) - 1.2).abs() < 1e-12);
    assert!((quantile(&v, 0.95) - 4.8).abs() < 1e-12);
    assert_eq!(quantile(&[7.0], 0.3), 7.0);
    assert!(quantile(&[], 0.5).is_nan());
}

#[test]
fn zero_iteration_runs_complete_for_both_solvers() {
    let dir = tempfile::tempdir().unwrap();
    for kind in [SolverKind::Dbsde, SolverKind::Fixedpoint] {
        let c = tiny(dir.path(), kind);
        let r = run(&c, &RunContext::default()).unwrap();
        assert!(r.report.y0.is_finite(), "{kind:?}");
        assert!(r.report.rel_y0.is_finite());
        assert_eq!(r.history.len(), 1);
        let stem = run_stem(dir.path(), &r.config_hash, 0);
        assert!(stem.with_extension("json").exists());
        assert!(stem.with_extension("config.json").exists());
        assert!(PathBuf::from(format!("{}_history.csv", stem.display())).exists());
    }
    assert!(dir.path().join("baselines.json").exists());
}

#[test]
fn runs_are_deterministic() {
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let mut a = tiny(d1.path(), SolverKind::Fixedpoint);
    a.training.iterations = 3;
    let mut b = a.clone();
    b.output.dir = d2.path().to_path_buf();
    let ra = run(&a, &RunContext::default()).unwrap();
    let rb = run(&b, &RunContext::default()).unwrap();
    assert_eq!(ra.report, rb.report);
    assert_eq!(ra.history, rb.history);
}

#[test]
fn sweep_and_report_write_golden_tables() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny(dir.path(), SolverKind::Dbsde);
    c.sweep.axis = Some("N".into());
    c.sweep.values = vec![4.0, 6.0];
    c.sweep.repeats = 2;
    let runs = sweep(&c).unwrap();
    assert_eq!(runs.len(), 4);
    let results: Vec<RunResult> = runs.into_iter().map(|r| r.result.unwrap()).collect();
    assert_ne!(results[0].config_hash, results[2].config_hash);
    assert_eq!(results[0].config_hash, results[1].config_hash);

    let out = dir.path().join("report");
    assert_eq!(report(dir.path(), &out).unwrap(), 4);
    let mut rd = csv::Reader::from_path(out.join("runs.csv")).unwrap();
    let header: Vec<String> = rd.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, RUN_COLUMNS);
    assert_eq!(rd.records().count(), 4);

    let mut sd = csv::Reader::from_path(out.join("summary.csv")).unwrap();
    let header: Vec<String> = sd.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(
        header,
        ["config_hash", "problem", "d", "solver", "arch", "axis", "axis_value", "metric", "n", "mean", "q05", "q95"]
    );
    let rows: Vec<csv::StringRecord> = sd.records().map(Result::unwrap).collect();
    assert!(rows.iter().all(|r| &r[8] == "2"));
    assert_eq!(&rows[0][6], "4");
    assert_eq!(&rows.last().unwrap()[6], "6");
}

#[test]
fn report_on_empty_dir_fails() {
    let dir = tempfile::tempdir().unwrap();
    assert!(report(dir.path(), &dir.path().join("out")).is_err());
}
