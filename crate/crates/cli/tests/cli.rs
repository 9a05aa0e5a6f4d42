use std::process::{Command, Output};

fn wmp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wmp"))
        .args(args)
        .env_remove("WMP_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn kernel_prints_closed_forms() {
    let out = wmp(&[
        "kernel",
        "--n",
        "1000",
        "--N",
        "500,500",
        "--Q",
        "8e-3,2e-3;2e-3,8e-3",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("SNR = 1.8\n"), "{text}");
    assert!(text.contains("theta = 0.6"), "{text}");
    assert!(text.contains("lambda = 5"), "{text}");
    assert!(text.contains("equiv_sets = {1} {2}"), "{text}");
    assert!(text.contains("theta_bar (1/4 prefactor) = 0.3"), "{text}");
    assert!(
        text.contains("theta_bar (1/2 prefactor, second eigenvalue of K) = 0.6"),
        "{text}"
    );
}

#[test]
fn kernel_from_mean_matrix() {
    let out = wmp(&["kernel", "--mean", "3.75,3.75,0.5;3.75,3.75,0.5;0.5,0.5,7"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(
        stdout(&out).contains("equiv_sets = {1,2} {3}"),
        "{}",
        stdout(&out)
    );
}

#[test]
fn usage_errors_exit_one() {
    for args in [
        vec![
            "kernel",
            "--n",
            "999",
            "--N",
            "500,500",
            "--Q",
            "8e-3,2e-3;2e-3,8e-3",
        ],
        vec!["kernel", "--N", "500,500", "--Q", "8e-3,2e-3;2e-3"],
        vec!["kernel", "--bogus"],
        vec!["no-such-command"],
        vec!["--threads", "0", "oracle-check"],
    ] {
        let out = wmp(&args);
        assert_eq!(out.status.code(), Some(1), "{args:?}: {}", stderr(&out));
        assert!(!stderr(&out).is_empty());
    }
}

#[test]
fn help_documents_every_subcommand() {
    let top = wmp(&["--help"]);
    assert_eq!(top.status.code(), Some(0));
    for sub in [
        "kernel",
        "sample-sbm",
        "classify",
        "gw-sweep",
        "polblogs",
        "oracle-check",
    ] {
        assert!(stdout(&top).contains(sub), "{sub}");
        let out = wmp(&[sub, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{sub}");
        assert!(stdout(&out).contains("--threads"), "{sub}");
    }
    let classify = stdout(&wmp(&["classify", "--help"]));
    for flag in [
        "--edges", "--gml", "--labels", "--priors", "--delta", "--depth", "--flow", "--out",
    ] {
        assert!(classify.contains(flag), "{flag}");
    }
}

#[test]
fn sweep_with_empty_depth_grid_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.toml");
    std::fs::write(
        &cfg,
        "scenario = \"gw_tree\"\nmean = [[3.0, 1.0], [1.0, 3.0]]\ndeltas = [0.5]\ndepths = []\ntrials = 10\nestimators = [\"wmp\"]\n",
    )
    .unwrap();
    let out = wmp(&["gw-sweep", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr(&out).contains("depth grid is empty"),
        "{}",
        stderr(&out)
    );
    assert!(stderr(&out).contains("Usage"), "{}", stderr(&out));
}

#[test]
fn sweep_runs_echoes_config_and_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.toml");
    let csv = dir.path().join("out.csv");
    std::fs::write(
        &cfg,
        "scenario = \"gw_tree\"\nmean = [[3.0, 1.0], [1.0, 3.0]]\ndeltas = [0.5]\ndepths = [2, 3]\ntrials = 50\nseed = 9\nestimators = [\"wmp\", \"bp\"]\n",
    )
    .unwrap();
    let out = wmp(&[
        "gw-sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--trials",
        "40",
        "--output",
        csv.to_str().unwrap(),
        "--json",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("# trials = 40"), "{text}");
    assert!(text.contains("# seed = 9"), "{text}");
    assert!(text.contains("# depths = [2, 3]"), "{text}");
    let rows = wmp_core::harness::read_results(&csv).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(csv.with_extension("json").exists());
}

#[test]
fn missing_sweep_config_is_a_runtime_error() {
    let out = wmp(&["gw-sweep", "--config", "/nonexistent/sweep.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn polblogs_without_data_explains_download() {
    let out = wmp(&["polblogs", "--data", "/nonexistent/polblogs.gml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr(&out).contains("download polblogs.gml"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn oracle_check_passes() {
    let out = wmp(&[
        "oracle-check",
        "--instances",
        "100",
        "--perturbations",
        "100",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(
        text.starts_with("all ") && text.trim_end().ends_with(" checks passed"),
        "{text}"
    );
}

#[test]
fn sample_then_classify() {
    let dir = tempfile::tempdir().unwrap();
    let edges = dir.path().join("g.txt");
    let labels = dir.path().join("labels.csv");
    let pred = dir.path().join("pred.csv");
    let q = "8e-4,2e-4;2e-4,8e-4";
    let out = wmp(&[
        "sample-sbm",
        "--N",
        "5000,5000",
        "--Q",
        q,
        "--seed",
        "4",
        "--edges-out",
        edges.to_str().unwrap(),
        "--labels-out",
        labels.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let out = wmp(&[
        "classify",
        "--edges",
        edges.to_str().unwrap(),
        "--labels",
        labels.to_str().unwrap(),
        "--delta",
        "0.3",
        "--depth",
        "3",
        "--N",
        "5000,5000",
        "--Q",
        q,
        "--out",
        pred.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    let err: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("error = "))
        .and_then(|l| l.split_whitespace().next())
        .unwrap()
        .parse()
        .unwrap();
    assert!(err < 0.3, "{text}");
    let written = std::fs::read_to_string(&pred).unwrap();
    assert!(written.starts_with("node,label\n"));
    assert!(written.lines().count() > 9000);
}

#[test]
fn classify_with_prior_file() {
    let dir = tempfile::tempdir().unwrap();
    let edges = dir.path().join("g.txt");
    let priors = dir.path().join("priors.csv");
    // two triangles joined by an edge; one revealed node per triangle
    std::fs::write(&edges, "1 2\n2 3\n3 1\n3 4\n4 5\n5 6\n6 4\n").unwrap();
    std::fs::write(&priors, "node,label\n1,1\n6,2\n").unwrap();
    let out = wmp(&[
        "classify",
        "--edges",
        edges.to_str().unwrap(),
        "--priors",
        priors.to_str().unwrap(),
        "--side-info",
        "partial",
        "--delta",
        "0.3",
        "--depth",
        "1",
        "--N",
        "3,3",
        "--Q",
        "0.9,0.1;0.1,0.9",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("prior labels = 2"));
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "1,3\n").unwrap();
    let out = wmp(&[
        "classify",
        "--edges",
        edges.to_str().unwrap(),
        "--priors",
        bad.to_str().unwrap(),
        "--delta",
        "0.3",
        "--N",
        "3,3",
        "--Q",
        "0.9,0.1;0.1,0.9",
    ]);
    assert_eq!(out.status.code(), Some(1));
}
