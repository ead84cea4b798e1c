use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn friedrichs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_friedrichs"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn small_config(dir: &Path, preset: &str, extra: &str) -> String {
    let path = dir.join("run.cfg.toml");
    let every = if extra.contains("eval_every") { "" } else { "eval_every = 2\n" };
    fs::write(
        &path,
        format!(
            "preset = \"{preset}\"\n[train]\nN = 64\nN_b = 16\nm_s = 8\nm_t = 8\ndepth_s = 3\ndepth_t = 3\n\
             probe_points = 200\n{every}{extra}\n"
        ),
    )
    .unwrap();
    path.to_string_lossy().into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn short_run_writes_history_and_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "advection-fan", "");
    let out = dir.path().join("out");
    let o = friedrichs(&["--config", &cfg, "--iters", "10", "--seed", "1", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let hist = fs::read_to_string(out.join("history.csv")).unwrap();
    let mut lines = hist.lines();
    assert_eq!(lines.next(), Some("iteration,loss,e_L2,e_Linf,lr_s,lr_t,wall_time_s"));
    let rows: Vec<&str> = lines.collect();
    assert!(!rows.is_empty() && rows.len() <= 10);
    assert!(rows.last().unwrap().starts_with("10,"));
    for f in ["checkpoint.bin", "field.csv", "report.json", "run.toml"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["iterations"], 10);
    assert!(report["e_l2"].as_f64().unwrap().is_finite());
}

#[test]
fn evaluate_reproduces_the_stored_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "advection-discontinuous", "");
    let out = dir.path().join("out");
    let o = friedrichs(&["--config", &cfg, "--iters", "4", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ckpt = out.join("checkpoint.bin");
    let eval_dir = dir.path().join("eval");
    let o = friedrichs(&[
        "--mode",
        "evaluate",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--out",
        eval_dir.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(eval_dir.join("report.json")).unwrap()).unwrap();
    let e = report["e_l2"].as_f64().unwrap();
    let stored = report["stored_e_l2"].as_f64().unwrap();
    assert!((e - stored).abs() <= 1e-12, "{e} vs {stored}");
}

#[test]
fn verify_mode_passes_for_the_discontinuous_preset() {
    let dir = tempfile::tempdir().unwrap();
    let o = friedrichs(&[
        "--mode",
        "verify",
        "--preset",
        "advection-discontinuous",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stdout(&o));
    let text = stdout(&o);
    assert!(text.lines().count() >= 5);
    assert!(text.lines().all(|l| l.starts_with("PASS")), "{text}");
    assert!(dir.path().join("verification.txt").exists());
}

#[test]
fn invalid_configs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "preset = \"advection-fan\"\n[train]\nwidth = 3\n").unwrap();
    let o = friedrichs(&["--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let o = friedrichs(&["--preset", "no-such-preset", "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());

    let cfg = small_config(dir.path(), "maxwell-cube", "eta_s0 = -1.0");
    let o = friedrichs(&["--config", &cfg, "--iters", "2", "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());

    fs::write(&bad, "preset = \"advection-fan\"\n[problem]\ndim = 3\n").unwrap();
    let o = friedrichs(&["--config", bad.to_str().unwrap(), "--iters", "1"]);
    assert!(!o.status.success());
}

#[test]
fn divergence_aborts_and_keeps_the_last_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(
        dir.path(),
        "advection-fan",
        "eval_every = 1\neta_s0 = 1e200\neta_t0 = 1e200\nnu_s = 1e300\nnu_t = 1e300",
    );
    let out = dir.path().join("out");
    let o = friedrichs(&["--config", &cfg, "--iters", "50", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("non-finite") || err.contains("NaN") || err.contains("finite"), "{err}");
    assert!(out.join("history.csv").exists());
    let ckpt = out.join("checkpoint.bin");
    let o = friedrichs(&["--mode", "evaluate", "--checkpoint", ckpt.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}
