use std::process::Command;

use proptest::prelude::*;

use fdcnn_cli::stats::wilcoxon_signed_rank;

fn fdcnn(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_fdcnn")).args(args).env("FDCNN_THREADS", "1").output().unwrap()
}

fn error_line(out: &std::process::Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("stderr is empty");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("not JSON ({e}): {line}"))
}

#[test]
fn unknown_arch_is_a_json_error() {
    let out = fdcnn(&["train", "--arch", "resnet", "--synth", "--synth-per-class", "2", "--epochs", "1"]);
    assert_eq!(out.status.code(), Some(2));
    let v = error_line(&out);
    assert_eq!(v["error"], "usage");
    assert!(v["message"].as_str().unwrap().contains("vgg16-3fullfdc"));
}

#[test]
fn bad_flag_exits_two() {
    let out = fdcnn(&["bench-pool", "--image-size", "sixty"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_line(&out)["message"].is_string());
}

#[test]
fn missing_model_file_reports_path() {
    let out = fdcnn(&["eval", "--model", "/nonexistent/model.json"]);
    assert_eq!(out.status.code(), Some(1));
    let v = error_line(&out);
    assert_eq!(v["error"], "io");
    assert!(v["message"].as_str().unwrap().contains("/nonexistent/model.json"));
}

#[test]
fn too_few_repeats_rejected() {
    let out = fdcnn(&["bench-pool", "--image-size", "16", "--repeats", "3"]);
    assert_eq!(out.status.code(), Some(2));
    let v = error_line(&out);
    assert_eq!(v["error"], "usage");
    assert!(v["message"].as_str().unwrap().contains("5 repeats"));
}

#[test]
fn report_from_saved_runs() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s).to_str().unwrap().to_string();
    for (arch, out) in [("fdcnn", "a"), ("cnn", "b")] {
        let o = fdcnn(&["train", "--arch", arch, "--synth", "--synth-per-class", "8", "--epochs", "1", "--lr", "1e-3", "--out", &p(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let o = fdcnn(&["report", "--a", &p("a/report.json"), "--b", &p("b/report.json")]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.contains("fdcnn") && table.contains("cnn"));
}

proptest! {
    #[test]
    fn rank_sums_partition_total(d in proptest::collection::vec(-5i32..=5, 1..30)) {
        let a: Vec<f64> = d.iter().map(|&x| x as f64).collect();
        let b = vec![0.0; a.len()];
        if let Ok(w) = wilcoxon_signed_rank(&a, &b) {
            let n = w.n as f64;
            prop_assert_eq!(w.n + w.zeros_dropped, a.len());
            prop_assert!((w.w_plus + w.w_minus - n * (n + 1.0) / 2.0).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&w.p_value));
        }
    }

    #[test]
    fn swapping_sides_keeps_p(d in proptest::collection::vec(-20i32..=20, 4..25)) {
        let a: Vec<f64> = d.iter().map(|&x| x as f64 * 0.1).collect();
        let b = vec![0.0; a.len()];
        if let (Ok(x), Ok(y)) = (wilcoxon_signed_rank(&a, &b), wilcoxon_signed_rank(&b, &a)) {
            prop_assert!((x.p_value - y.p_value).abs() < 1e-12);
            prop_assert_eq!(x.w_plus, y.w_minus);
        }
    }
}
