use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "steps = 2\n[scenario]\nwidth_m = 200.0\nheight_m = 200.0\ngrid_cols = 6\ngrid_rows = 5\nn_sensors = 40\n";

fn rssfield(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rssfield")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = rssfield(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("cfg.toml");
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

fn lines(p: &Path) -> Vec<String> {
    fs::read_to_string(p).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn synth_fit_and_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let data = tmp.path().join("data");
    let fit = tmp.path().join("fit");
    ok(&["synth", "--config", &cfg, "--seed", "3", "--out", data.to_str().unwrap()]);
    let m = lines(&data.join("measurements.csv"));
    assert_eq!(m[0], "t,sensor_id,x_hat_m,y_hat_m,rss_dbm");
    assert_eq!(m.len(), 1 + 2 * 40);
    let truth = data.join("truth_t0002.csv");
    assert_eq!(lines(&truth).len(), 1 + 30);

    ok(&[
        "fit-static",
        "--config",
        &cfg,
        "--measurements",
        data.join("measurements.csv").to_str().unwrap(),
        "--truth",
        truth.to_str().unwrap(),
        "--out",
        fit.to_str().unwrap(),
    ]);
    let field = lines(&fit.join("field.csv"));
    assert_eq!(field[0], "node_id,x_m,y_m,post_mean_dbm,post_var_db2");
    assert_eq!(field.len(), 31);
    let report = ok(&["eval", "--field", fit.join("field.csv").to_str().unwrap(), "--truth", truth.to_str().unwrap()]);
    assert!(report.starts_with("mse_db2 = "), "{report}");
    let metrics = lines(&fit.join("metrics.csv"));
    let mse: f64 = metrics[1].split(',').nth(6).unwrap().parse().unwrap();
    let reported: f64 = report["mse_db2 = ".len()..].split_whitespace().next().unwrap().parse().unwrap();
    assert!((mse - reported).abs() < 1e-5);
}

#[test]
fn truth_file_sets_the_grid_without_a_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let data = tmp.path().join("data");
    let fit = tmp.path().join("fit");
    ok(&["synth", "--config", &cfg, "--seed", "3", "--out", data.to_str().unwrap()]);
    let truth = data.join("truth_t0001.csv");
    let report = ok(&[
        "fit-static",
        "--measurements",
        data.join("measurements.csv").to_str().unwrap(),
        "--truth",
        truth.to_str().unwrap(),
        "--out",
        fit.to_str().unwrap(),
    ]);
    assert_eq!(lines(&fit.join("field.csv")).len(), 31);
    let line = report.lines().find_map(|l| l.strip_prefix("mse_db2 = ")).unwrap();
    let mse: f64 = line.trim().parse().unwrap();
    assert!(mse < 30.0, "{report}");
}

#[test]
fn eval_rejects_fields_on_another_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let truth = tmp.path().join("truth.csv");
    fs::write(&truth, "node_id,x_m,y_m,rss_dbm\n0,10.0,10.0,-60.0\n1,30.0,10.0,-62.0\n").unwrap();
    let field = tmp.path().join("field.csv");
    fs::write(&field, "node_id,x_m,y_m,post_mean_dbm,post_var_db2\n0,10.0,10.0,-61.0,1.0\n1,50.0,10.0,-62.0,1.0\n").unwrap();
    let out = rssfield(&["eval", "--field", field.to_str().unwrap(), "--truth", truth.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("node 1"));
}

#[test]
fn recursive_fit_writes_one_field_per_step() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let data = tmp.path().join("data");
    let fit = tmp.path().join("fit");
    ok(&["synth", "--config", &cfg, "--out", data.to_str().unwrap()]);
    ok(&[
        "fit-recursive",
        "--config",
        &cfg,
        "--lambda",
        "0.7",
        "--measurements",
        data.join("measurements.csv").to_str().unwrap(),
        "--out",
        fit.to_str().unwrap(),
    ]);
    assert!(fit.join("field_t0001.csv").exists());
    assert!(fit.join("field_t0002.csv").exists());
}

#[test]
fn bound_adds_its_column() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("b");
    ok(&["bound", "--config", &cfg, "--out", out.to_str().unwrap()]);
    let field = lines(&out.join("field.csv"));
    assert_eq!(field[0], "node_id,x_m,y_m,post_mean_dbm,post_var_db2,hcrb_db2");
    for row in &field[1..] {
        let v: Vec<f64> = row.split(',').map(|c| c.parse().unwrap()).collect();
        assert!(v[5] >= v[4]);
    }
}

#[test]
fn ingest_splits_real_measurements() {
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("real.csv");
    let mut body = String::from("t,sensor_id,x_hat_m,y_hat_m,rss_dbm\n");
    for i in 0..11 {
        body.push_str(&format!("0,{i},{}.0,{}.5,-{}.25\n", 10 * i, 3 * i, 60 + i));
    }
    fs::write(&src, body).unwrap();
    let out = tmp.path().join("split");
    ok(&["ingest-real", "--measurements", src.to_str().unwrap(), "--seed", "4", "--out", out.to_str().unwrap()]);
    assert_eq!(lines(&out.join("train.csv")).len(), 1 + 5);
    assert_eq!(lines(&out.join("test_truth.csv")).len(), 1 + 6);
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write_config(tmp.path(), "[scenario]\nn_sensors = 0\n");
    assert_eq!(rssfield(&["synth", "--config", &bad]).status.code(), Some(2));
    let unknown = tmp.path().join("u.toml");
    fs::write(&unknown, "no_such_key = 1\n").unwrap();
    assert_eq!(rssfield(&["synth", "--config", unknown.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(rssfield(&["fit-static", "--lambda", "2.0"]).status.code(), Some(2));

    let missing = tmp.path().join("missing.csv");
    let out = rssfield(&["eval", "--field", missing.to_str().unwrap(), "--truth", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
    let garbled = tmp.path().join("g.csv");
    fs::write(&garbled, "t,sensor_id,x_hat_m,y_hat_m,rss_dbm\n0,1,2.0,oops,-50\n").unwrap();
    let out = rssfield(&["fit-static", "--measurements", garbled.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 1"));

    let one = tmp.path().join("one.csv");
    fs::write(&one, "t,sensor_id,x_hat_m,y_hat_m,rss_dbm\n0,1,2.0,3.0,-50\n").unwrap();
    let out = rssfield(&["fit-static", "--measurements", one.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}
