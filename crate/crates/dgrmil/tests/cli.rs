use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn dgrmil(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dgrmil")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = dgrmil(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> (i32, String) {
    let out = dgrmil(args);
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(str::to_string).collect()).collect()
}

/// A small synthetic dataset and a model trained on it for a few epochs.
struct Fixture {
    dir: TempDir,
    data: PathBuf,
    run: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("bags.csv");
        ok(&["synth", "--n-pos", "6", "--n-neg", "6", "--instances", "4:9", "--feature-dim", "5", "--pos-fraction", "0.3",
            "--seed", "4", "--out", p(&data)]);
        let run = dir.path().join("run");
        ok(&["train", "--data", p(&data), "--out-dir", p(&run), "--epochs", "3", "--set", "embed-dim=8",
            "--set", "num-heads=2", "--set", "num-globals=3"]);
        Fixture { dir, data, run }
    }

    fn params(&self) -> PathBuf {
        self.run.join("params.bin")
    }
}

#[test]
fn train_writes_snapshot_history_and_params() {
    let f = Fixture::new();
    for name in ["config.resolved", "history.csv", "params.bin", "params.manifest"] {
        assert!(f.run.join(name).exists(), "{name}");
    }
    let history = rows(&f.run.join("history.csv"));
    assert_eq!(history.len(), 3);
    assert!(history.iter().all(|r| r[6].is_empty()));
    let resolved = fs::read_to_string(f.run.join("config.resolved")).unwrap();
    assert!(resolved.contains("embed-dim = 8"));
    assert!(resolved.contains("momentum = 0"));
}

#[test]
fn rerun_from_snapshot_is_byte_identical() {
    let f = Fixture::new();
    let again = f.dir.path().join("again");
    ok(&["train", "--config", p(&f.run.join("config.resolved")), "--out-dir", p(&again)]);
    for name in ["history.csv", "params.bin"] {
        assert_eq!(fs::read(f.run.join(name)).unwrap(), fs::read(again.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn eval_scores_every_bag() {
    let f = Fixture::new();
    let out = f.dir.path().join("eval");
    let stdout = ok(&["eval", "--params", p(&f.params()), "--data", p(&f.data), "--out-dir", p(&out)]);
    assert!(stdout.starts_with("accuracy "));
    let scores = rows(&out.join("scores.csv"));
    assert_eq!(scores.len(), 12);
    for r in &scores {
        let prob: f64 = r[2].parse().unwrap();
        assert!((0.0..=1.0).contains(&prob));
        assert_eq!(r[3], if prob >= 0.5 { "1" } else { "0" });
    }
    let m = rows(&out.join("metrics.csv"));
    let counts: usize = m[0][3..7].iter().map(|v| v.parse::<usize>().unwrap()).sum();
    assert_eq!(counts, 12);
}

#[test]
fn eval_errors_map_to_exit_codes() {
    let f = Fixture::new();
    let empty = f.dir.path().join("empty.csv");
    fs::write(&empty, "").unwrap();
    let out = f.dir.path().join("e");
    let (c, err) = code(&["eval", "--params", p(&f.params()), "--data", p(&empty), "--out-dir", p(&out)]);
    assert_eq!(c, 2);
    assert!(err.starts_with("error kind=data reason="), "{err}");

    let wide = f.dir.path().join("wide.csv");
    ok(&["synth", "--n-pos", "2", "--n-neg", "2", "--feature-dim", "7", "--out", p(&wide)]);
    let (c, err) = code(&["eval", "--params", p(&f.params()), "--data", p(&wide), "--out-dir", p(&out)]);
    assert_eq!(c, 1);
    assert!(err.contains('5') && err.contains('7'), "{err}");

    let (c, _) = code(&["eval", "--params", p(&f.data), "--data", p(&f.data), "--out-dir", p(&out)]);
    assert_eq!(c, 2);
}

#[test]
fn usage_and_config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&["train", "--set", "learning-rate=1"]).0, 1);
    assert_eq!(code(&["train", "--set", "epochs"]).0, 1);
    assert_eq!(code(&["frobnicate"]).0, 1);
    assert_eq!(code(&["train", "--data", p(&dir.path().join("missing.csv"))]).0, 2);
    assert_eq!(code(&["train"]).0, 2);
    assert_eq!(code(&["footprint", "--set", "num-heads=3"]).0, 1);
    assert!(dgrmil(&["--help"]).status.success());
}

#[test]
fn attention_exports_are_distributions() {
    let f = Fixture::new();
    let export = |head: &str, which: &str| {
        let out = f.dir.path().join(format!("attn-{head}-{which}.csv").replace(':', "_"));
        ok(&["attn-export", "--params", p(&f.params()), "--data", p(&f.data), "--head", head, "--which", which,
            "--out", p(&out)]);
        rows(&out)
    };
    for which in ["token", "global:1", "global:3"] {
        let mean = export("mean", which);
        let heads = [export("0", which), export("1", which)];
        let mut sums = std::collections::BTreeMap::<String, f64>::new();
        for (i, r) in mean.iter().enumerate() {
            let v: f64 = r[2].parse().unwrap();
            *sums.entry(r[0].clone()).or_default() += v;
            let avg = heads.iter().map(|h| h[i][2].parse::<f64>().unwrap()).sum::<f64>() / 2.0;
            assert!((v - avg).abs() < 1e-12);
        }
        assert_eq!(sums.len(), 12);
        assert!(sums.values().all(|s| (s - 1.0).abs() < 1e-6), "{sums:?}");
    }
    let out = f.dir.path().join("x.csv");
    for (head, which) in [("2", "token"), ("0", "global:4"), ("0", "global:0"), ("first", "token")] {
        let (c, _) = code(&["attn-export", "--params", p(&f.params()), "--data", p(&f.data), "--head", head, "--which",
            which, "--out", p(&out)]);
        assert_eq!(c, 1, "{head} {which}");
    }
}

#[test]
fn diversity_report_matches_closed_forms() {
    let dir = tempfile::tempdir().unwrap();
    // Bag p1 has two identical positive instances v = (1, 2), bag p2 one (3, 0).
    let data = dir.path().join("div.csv");
    fs::write(
        &data,
        "bag_id,instance_id,label,f0,f1\n\
         p1,a,1,1,2\np1,b,1,1,2\np1,c,0,9,9\n\
         p2,a,1,3,0\np2,b,0,0,1\n\
         n1,a,0,1,1\nn1,b,0,2,2\n",
    )
    .unwrap();
    let out = dir.path().join("div");
    let stdout = ok(&["diversity", "--data", p(&data), "--epsilon-sq", "0.5", "--out-dir", p(&out)]);
    assert!(stdout.contains("epsilon_sq 0.5"));
    let rates = rows(&out.join("rates.csv"));
    let p1 = rates.iter().find(|r| r[0] == "p1" && r[1] == "1").unwrap();
    let closed = 0.5 * (1.0 + 2.0 * 5.0 / 0.5_f64).ln();
    let got: f64 = p1[3].parse().unwrap();
    assert!((got - closed).abs() <= 1e-9 * closed);
    assert_eq!(&p1[4..], ["0.5", "nats"]);

    let rr = rows(&out.join("rate_reduction.csv"));
    assert_eq!(rr.len(), 4);
    let at = |a: &str, b: &str| rr.iter().find(|r| r[0] == a && r[1] == b).unwrap()[2].parse::<f64>().unwrap();
    assert_eq!(at("p1", "p1"), 0.0);
    assert_eq!(at("p1", "p2"), at("p2", "p1"));
    assert!(at("p1", "p2") > 0.0);

    let bench = dir.path().join("bench.csv");
    fs::write(&bench, "1,x,1,2\n0,y,3,4\n").unwrap();
    let (c, err) = code(&["diversity", "--data", p(&bench), "--format", "musk1", "--out-dir", p(&out)]);
    assert_eq!(c, 2);
    assert!(err.contains("instance labels"), "{err}");
    assert_eq!(code(&["diversity", "--data", p(&data), "--epsilon-sq", "0", "--out-dir", p(&out)]).0, 1);
}

#[test]
fn diversity_with_params_reports_global_gram() {
    let f = Fixture::new();
    let out = f.dir.path().join("div");
    ok(&["diversity", "--data", p(&f.data), "--params", p(&f.params()), "--unit", "bits", "--out-dir", p(&out)]);
    let gram = rows(&out.join("gram.csv"));
    assert_eq!(gram.len(), 9);
    for r in &gram {
        let v: f64 = r[2].parse().unwrap();
        if r[0] == r[1] {
            assert_eq!(v, 1.0);
        } else {
            assert!(v.abs() <= 1.0);
        }
    }
    assert!(rows(&out.join("rates.csv")).iter().all(|r| r[5] == "bits"));
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("sub/b.csv");
    for out in [&a, &b] {
        ok(&["synth", "--n-pos", "10", "--n-neg", "10", "--instances", "5", "--seed", "9", "--out", p(out)]);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let ids: std::collections::BTreeSet<String> = rows(&a).into_iter().map(|r| r[0].clone()).collect();
    assert_eq!(ids.len(), 20);
    assert!(ids.contains("pos-0000") && ids.contains("neg-0009"));
    assert_eq!(code(&["synth", "--instances", "5:x", "--out", p(&a)]).0, 1);
    assert_eq!(code(&["synth", "--pos-fraction", "0", "--out", p(&a)]).0, 1);
}

#[test]
fn footprint_cross_attention_scales_linearly() {
    let stdout = ok(&["footprint", "--sweep", "1000,2000,4000"]);
    let line = stdout.lines().find(|l| l.starts_with("cross_attention")).unwrap();
    let v: Vec<u64> = line.split_whitespace().skip(1).map(|x| x.parse().unwrap()).collect();
    assert_eq!(v.len(), 3);
    assert_eq!(v[1], 2 * v[0]);
    assert_eq!(v[2], 2 * v[1]);
    assert!(stdout.starts_with("D 1024 L 512 K 5 H 8 params "));
}

#[test]
fn cv_writes_fold_table_and_summary() {
    let f = Fixture::new();
    let out = f.dir.path().join("cv");
    ok(&["cv", "--data", p(&f.data), "--out-dir", p(&out), "--epochs", "2", "--folds", "3", "--repeats", "2",
        "--set", "embed-dim=8", "--set", "num-heads=2"]);
    let folds = rows(&out.join("cv_folds.csv"));
    assert_eq!(folds.len(), 6);
    assert_eq!(folds.iter().filter(|r| r[0] == "1").count(), 3);
    let test_bags: usize = folds.iter().filter(|r| r[0] == "0").map(|r| r[11].parse::<usize>().unwrap()).sum();
    assert_eq!(test_bags, 12);
    let summary = rows(&out.join("cv_summary.csv"));
    assert_eq!(summary.iter().map(|r| r[0].as_str()).collect::<Vec<_>>(), ["accuracy", "f1", "auc"]);
    assert!(out.join("config.resolved").exists());
}

#[test]
fn eval_on_validation_data_matches_training_report() {
    let f = Fixture::new();
    let run = f.dir.path().join("val");
    ok(&["train", "--data", p(&f.data), "--val-data", p(&f.data), "--out-dir", p(&run), "--epochs", "4", "--set",
        "embed-dim=8", "--set", "num-heads=2", "--set", "num-globals=3"]);
    let history = rows(&run.join("history.csv"));
    let best = history
        .iter()
        .max_by(|a, b| a[8].parse::<f64>().unwrap().total_cmp(&b[8].parse::<f64>().unwrap()).then(std::cmp::Ordering::Less))
        .unwrap();
    let out = f.dir.path().join("val-eval");
    ok(&["eval", "--params", p(&run.join("params.bin")), "--data", p(&f.data), "--out-dir", p(&out)]);
    let m = rows(&out.join("metrics.csv"));
    let trained: f64 = best[6].parse().unwrap();
    assert!(m[0][0].parse::<f64>().unwrap() >= trained - 1e-9);
    assert_eq!(m[0][2], best[8]);
}

#[test]
fn single_instance_bag_gets_all_attention() {
    let f = Fixture::new();
    let single = f.dir.path().join("single.csv");
    fs::write(&single, "bag_id,instance_id,label,f0,f1,f2,f3,f4\nb,only,1,0.1,-2,3,0.5,1\n").unwrap();
    for which in ["token", "global:2"] {
        let out = f.dir.path().join("single-attn.csv");
        ok(&["attn-export", "--params", p(&f.params()), "--data", p(&single), "--which", which, "--out", p(&out)]);
        assert_eq!(rows(&out), [["b", "only", "1"]]);
    }
}

#[test]
fn token_and_global_rows_attend_differently() {
    let f = Fixture::new();
    let export = |which: &str| {
        let out = f.dir.path().join("rows.csv");
        ok(&["attn-export", "--params", p(&f.params()), "--data", p(&f.data), "--which", which, "--out", p(&out)]);
        rows(&out).into_iter().map(|r| r[2].parse::<f64>().unwrap()).collect::<Vec<_>>()
    };
    let token = export("token");
    let global = export("global:1");
    let gap = token.iter().zip(&global).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(gap > 1e-6, "{gap}");
}

#[test]
fn non_finite_loss_exits_three() {
    let f = Fixture::new();
    let out = f.dir.path().join("blowup");
    let (c, err) = code(&["train", "--data", p(&f.data), "--out-dir", p(&out), "--epochs", "3", "--set", "base-lr=1e300",
        "--set", "warmup-lr-start=1e300", "--set", "embed-dim=8", "--set", "num-heads=2"]);
    assert_eq!(c, 3, "{err}");
    assert!(err.starts_with("error kind=numerical reason="), "{err}");
}

// With L = 8 and five globals, the ReLU FFN drives one global embedding to
// exactly zero on this fixture.
#[test]
fn zero_norm_global_exits_three() {
    let f = Fixture::new();
    let out = f.dir.path().join("dead");
    let (c, err) = code(&["train", "--data", p(&f.data), "--val-data", p(&f.data), "--out-dir", p(&out), "--epochs", "4",
        "--set", "embed-dim=8", "--set", "num-heads=2"]);
    assert_eq!(c, 3, "{err}");
    assert!(err.contains("degenerate vector"), "{err}");
}
