use std::process::{Command, Output};

use serde_json::Value;

fn lgq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lgq"))
        .args(args)
        .output()
        .expect("run lgq")
}

fn json(args: &[&str]) -> Value {
    let mut all = args.to_vec();
    all.push("--json");
    let out = lgq(&all);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("valid JSON")
}

#[test]
fn steady_preset_prints_half_hbar_units() {
    let out = lgq(&["steady"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("4.0273"), "{text}");
    assert!(text.contains("-3.6131"), "{text}");

    let doc = json(&["steady"]);
    assert_eq!(doc["command"], "steady");
    assert_eq!(doc["model_sha256"].as_str().unwrap().len(), 64);
    assert!(doc["result"]["filtered_residual"].as_f64().unwrap() <= 1e-10);
    assert_eq!(doc["config"]["solver"]["dt"], 1e-4);
}

#[test]
fn steady_on_model_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.json");
    std::fs::write(
        &path,
        r#"{"N": 1, "hbar": 1.0, "A": [[-1, 0], [0, -1]], "D": [[1, 0], [0, 1]],
           "unravellings": {"observed": {"type": "heterodyne", "eta": 1.0}}}"#,
    )
    .unwrap();
    let doc = json(&["steady", "--model", path.to_str().unwrap()]);
    assert!(doc["result"]["filtered_residual"].as_f64().unwrap() <= 1e-10);
    assert_eq!(doc["result"]["unconditioned"]["unbounded_directions"].as_array().unwrap().len(), 0);
    let vf = &doc["result"]["filtered"];
    assert!(vf[0][1].as_f64().unwrap().abs() < 1e-9);
    assert!((vf[0][0].as_f64().unwrap() - vf[1][1].as_f64().unwrap()).abs() < 1e-9);

    // no measurement: the time-reversed solve diverges
    let blind = dir.path().join("blind.json");
    std::fs::write(
        &blind,
        r#"{"N": 1, "A": [[-1, 0], [0, -1]], "D": [[1, 0], [0, 1]],
           "unravellings": {"observed": {"type": "explicit", "C": [[0, 0]], "Gamma": [[0, 0]]}}}"#,
    )
    .unwrap();
    let out = lgq(&["steady", "--model", blind.to_str().unwrap(), "--t-max", "5"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_model_file_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{\"N\": 1, \"A\": ").unwrap();
    let out = lgq(&["steady", "--model", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
    assert_eq!(lgq(&["steady", "--model", "/no/such/file.json"]).status.code(), Some(1));
    assert_eq!(lgq(&["classify", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(lgq(&["classify"]).status.code(), Some(1));
}

#[test]
fn nonconvergence_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("unstable.json");
    std::fs::write(
        &path,
        r#"{"N": 1, "A": [[0.5, 0], [0, -1]], "D": [[1, 0], [0, 1]],
           "unravellings": {"observed": {"type": "explicit", "C": [[0, 0]], "Gamma": [[0, 0]]}}}"#,
    )
    .unwrap();
    let out = lgq(&["steady", "--model", path.to_str().unwrap(), "--dt", "1e-3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("residual"));
}

#[test]
fn classify_sources() {
    let a = json(&["classify", "--fixture", "a"]);
    assert_eq!(a["result"]["report"]["realizable"], true);
    let g = json(&["classify", "--gamma", "0.41", "--delta", "0"]);
    assert_eq!(g["result"]["report"]["realizable"], true);
    let far = json(&["classify", "--gamma", "0.9", "--delta", "0"]);
    assert_eq!(far["result"]["report"]["fits_unconditioned"], false);
    let neg = json(&["classify", "--gamma", "0.3", "--delta", "-0.2"]);
    assert!(neg["result"]["report"]["min_eigs"]["realizability"].is_number());
    let het = json(&["classify", "--true-unravelling", "heterodyne:balanced"]);
    assert_eq!(het["result"]["report"]["realizable"], true);
    assert_eq!(het["result"]["report"]["extremal"], false);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.json");
    std::fs::write(&path, "[[0.965, 0.395], [0.395, 0.42]]").unwrap();
    let d = json(&["classify", "--cov-file", path.to_str().unwrap()]);
    assert_eq!(d["result"]["report"]["fits_unconditioned"], false);
    assert_eq!(lgq(&["classify", "--fixture", "a", "--gamma", "0.4", "--delta", "0"]).status.code(), Some(1));
}

#[test]
fn smooth_reports_s_class_and_singular_exit() {
    let a = json(&["smooth", "--fixture", "a"]);
    assert!(a["result"]["det_normalized"].as_f64().unwrap() > 1.0);
    let d = json(&["smooth", "--fixture", "d"]);
    assert!(d["result"]["det_normalized"].as_f64().unwrap() > 1.0);
    assert_eq!(d["result"]["premise"]["fits_unconditioned"], false);
    assert_eq!(d["result"]["smoothed_fit"]["fits_filtered"], true);

    // V_T = V_F makes V_F - V_T singular
    let vf = json(&["steady"])["result"]["filtered"].clone();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vf.json");
    std::fs::write(&path, vf.to_string()).unwrap();
    let out = lgq(&["smooth", "--cov-file", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("V_F - V_T"));
}

#[test]
fn sweep_and_boundary_csv() {
    let dir = tempfile::tempdir().unwrap();
    let sweep = dir.path().join("sweep.csv");
    let out = lgq(&["sweep", "--grid", "0.05:1.2:12,-0.9:0.9:7", "--out", sweep.to_str().unwrap()]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&sweep).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("# model_sha256="));
    assert!(lines[0].contains("grid=0.05:1.2:12,-0.9:0.9:7"));
    assert_eq!(lines[1], "gamma,delta,pure,sclass,unc_fit,filt_fit,realizable,extremal,det_vs,singular");
    assert_eq!(lines.len(), 2 + 84);

    let out = lgq(&["boundary", "--n-phases", "4"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().skip(2).collect();
    assert_eq!(rows.len(), 4);
    for r in rows {
        let f: Vec<&str> = r.split(',').collect();
        assert_eq!((f[3], f[4]), ("1", "1"), "{r}");
    }
}

#[test]
fn fig2_writes_ellipses() {
    let dir = tempfile::tempdir().unwrap();
    let doc = json(&["fig2", "--out-dir", dir.path().to_str().unwrap(), "--n-points", "8"]);
    let panels = doc["result"]["panels"].as_array().unwrap();
    assert_eq!(panels.len(), 4);
    assert_eq!(panels[0]["fits_inside_evolved"], true);
    for p in &panels[1..] {
        assert_eq!(p["fits_inside_evolved"], false);
    }
    let text = std::fs::read_to_string(dir.path().join("fig2_a.csv")).unwrap();
    assert!(text.lines().nth(1) == Some("curve,x,y"));
    assert_eq!(text.lines().filter(|l| l.starts_with("evolved,")).count(), 8);

    let zero = json(&["fig2", "--fixtures", "b", "--duration", "0"]);
    let p = &zero["result"]["panels"][0];
    assert_eq!(p["initial"], p["evolved"]);
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["simulate", "--duration", "2", "--seed", "7", "--burn-in", "0.5"];
    let a = json(&args);
    let b = json(&args);
    assert_eq!(a["result"], b["result"]);
    assert_eq!(a["config"]["spec"]["seed"], 7);

    let mut with_dir = args.to_vec();
    let d = dir.path().to_str().unwrap();
    with_dir.extend(["--out-dir", d, "--n-traj", "2"]);
    let out = lgq(&with_dir);
    assert!(out.status.success());
    let csv = std::fs::read_to_string(dir.path().join("traj_1.csv")).unwrap();
    assert!(csv.starts_with("# seed=6, dt=0.001\nt,true_q,true_p,filt_q,filt_p,y_1,y_2\n"));

    let empty_dir = tempfile::tempdir().unwrap();
    let path = empty_dir.path().join("m.json");
    std::fs::write(
        &path,
        r#"{"N": 1, "A": [[0, 0], [0, -2]], "D": [[1, 0], [0, 1]],
           "unravellings": {"observed": {"type": "homodyne", "eta": 1.0, "theta": 1.1780972450961724},
                            "none": {"type": "explicit", "C": [], "Gamma": []}}}"#,
    )
    .unwrap();
    let z = json(&["simulate", "--model", path.to_str().unwrap(), "--true-unravelling", "none", "--duration", "5", "--burn-in", "1"]);
    let stat = z["result"]["mixture_statistic"].as_array().unwrap();
    assert!(stat.iter().flat_map(|r| r.as_array().unwrap()).all(|x| x.as_f64().unwrap().abs() < 1e-12));
}
