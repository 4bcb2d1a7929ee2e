use std::path::Path;
use std::process::{Command, Output};

fn pwflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pwflow"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SMALL: &str =
    "train.iters = 3\ntrain.batch = 16\neval.n = 256\neval.permutations = 20\nseeds = 0,1\n";

fn small_config(dir: &Path) -> String {
    let p = dir.join("small.cfg");
    std::fs::write(&p, SMALL).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn schedule_print_matches_original_sampler() {
    let o = pwflow(&[
        "schedule",
        "print",
        "--sampler",
        "original",
        "--shift",
        "3",
        "--steps",
        "4",
    ]);
    assert!(o.status.success());
    let sigmas: Vec<f64> = stdout(&o).lines().map(|l| l.parse().unwrap()).collect();
    assert_eq!(sigmas.len(), 5);
    assert!((sigmas[3] - 0.0089).abs() <= 2e-4);
    assert_eq!(sigmas[4], 0.0);
}

#[test]
fn reproduce_tables_passes() {
    let o = pwflow(&["reproduce-tables"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 5);
    assert!(out.lines().all(|l| l.starts_with("PASS")));
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_string_lossy().into_owned();
    for args in [
        vec!["train", "--method", "distill", "--out", &out],
        vec!["train", "--teacher", "learned:/no/such.ckpt", "--out", &out],
        vec![
            "train",
            "--t-probs",
            "0.5,0.6",
            "--method",
            "ota+adv",
            "--out",
            &out,
        ],
        vec!["schedule", "print", "--sampler", "sideways"],
        vec!["frobnicate"],
    ] {
        let o = pwflow(&args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
    }
}

#[test]
fn train_infer_diagnose_compare() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let run = |method: &str| {
        let out = dir.path().join(method);
        let o = pwflow(&[
            "train",
            "--config",
            &cfg,
            "--method",
            method,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let perflow = run("perflow");
    let ota = run("ota");

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(perflow.join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["seeds"].as_array().unwrap().len(), 2);
    assert!(summary["config"]
        .as_str()
        .unwrap()
        .contains("method = perflow"));
    let losses = std::fs::read_to_string(perflow.join("seed-0/losses.csv")).unwrap();
    assert_eq!(losses.lines().count(), 4);

    let ckpt = perflow.join("seed-0/student.ckpt");
    let o = pwflow(&["infer", "--checkpoint", ckpt.to_str().unwrap(), "--n", "7"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 7);
    assert!(text.lines().all(|l| {
        let v: Vec<&str> = l.split_whitespace().collect();
        v.len() == 2 && v.iter().all(|x| x.parse::<f64>().is_ok())
    }));

    let o = pwflow(&[
        "infer",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--n",
        "2",
        "--trajectory",
    ]);
    assert_eq!(stdout(&o).lines().count(), 10);

    let o = pwflow(&[
        "compare-methods",
        perflow.join("summary.json").to_str().unwrap(),
        ota.join("summary.json").to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("/2 seeds"));

    let csv = dir.path().join("mismatch.csv");
    let o = pwflow(&[
        "diagnose",
        "--student",
        ckpt.to_str().unwrap(),
        "--n",
        "128",
        "--permutations",
        "20",
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 3);
    assert!(std::fs::read_to_string(csv)
        .unwrap()
        .starts_with("boundary,divergence_mean"));
}

#[test]
fn adversarial_run_writes_its_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("adv");
    let o = pwflow(&[
        "train",
        "--config",
        &cfg,
        "--method",
        "ota+adv",
        "--seed",
        "3",
        "--gan",
        "lsgan",
        "--lambda-adv",
        "0.2",
        "--t-probs",
        "0.4,0.1,0.1,0.4",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("seed-3/losses.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "iter,l_dist,l_adv,l_fm,d_loss");
    let config = std::fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(config.contains("adv.gan = lsgan") && config.contains("adv.t_probs = 0.4,0.1,0.1,0.4"));
}

#[test]
fn learned_teacher_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let tdir = dir.path().join("teacher");
    let o = pwflow(&[
        "train",
        "--config",
        &cfg,
        "--flow-matching",
        "--iters",
        "5",
        "--out",
        tdir.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let teacher = format!("learned:{}", tdir.join("teacher.ckpt").display());
    let out = dir.path().join("student");
    let o = pwflow(&[
        "train",
        "--config",
        &cfg,
        "--teacher",
        &teacher,
        "--stages",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = pwflow(&[
        "compare-schedulers",
        "--teacher",
        &teacher,
        "--seeds",
        "0",
        "--steps",
        "1,4",
        "--n",
        "32",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().count(), 3);
}

#[test]
fn reruns_are_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        assert!(
            pwflow(&["train", "--config", &cfg, "--out", out.to_str().unwrap()])
                .status
                .success()
        );
    }
    for f in [
        "seed-0/losses.csv",
        "seed-1/mismatch.csv",
        "seed-0/samples.txt",
    ] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn diverging_training_is_flagged_with_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("div");
    let o = pwflow(&[
        "train",
        "--config",
        &cfg,
        "--lr",
        "1e300",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["failed"], true);
    assert_eq!(summary["seeds"][0]["status"], "failed");
}
