use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fastsal::bench::BenchReport;
use fastsal::cli::{CheckpointInfo, Description};
use fastsal::core::data::synth_dataset;
use fastsal::core::metrics::{DensityMap, MetricReport};
use fastsal::core::net::{Model, ModelConfig};
use fastsal::dataset::{save_manifest, write_samples, Split};
use fastsal::pnm::{load_density, save_density, save_image};

fn fastsal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fastsal"))
        .args(args)
        .env_remove("SALI_SEED")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = fastsal(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    fastsal(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_config(dir: &Path, size: usize) -> PathBuf {
    let p = dir.join("model.json");
    fs::write(&p, serde_json::to_string(&ModelConfig::tiny(size, 2, 3)).unwrap()).unwrap();
    p
}

#[test]
fn describe_json_and_table() {
    let text = ok(&["describe", "--format", "json"]);
    let d: Description = serde_json::from_str(&text).unwrap();
    assert_eq!(serde_json::from_str::<Description>(&serde_json::to_string(&d).unwrap()).unwrap(), d);
    assert!((1_900_000..=2_300_000).contains(&d.cost.params), "{}", d.cost.params);
    assert_eq!(d.cost.rows.iter().map(|r| r.params).sum::<usize>(), d.cost.params);
    assert_eq!(d.cost.rows.iter().map(|r| r.flops).sum::<u64>(), d.cost.flops);
    let model = Model::<f32>::build(&d.config, 0).unwrap();
    assert_eq!(model.count_params(), d.cost.params);

    let v1: Description = serde_json::from_str(&ok(&["describe", "--variant", "1", "--format", "json"])).unwrap();
    let v2: Description = serde_json::from_str(&ok(&["describe", "--variant", "2", "--format", "json"])).unwrap();
    assert_eq!(v1.cost.params, v2.cost.params);
    assert_eq!(d.cost.params - v1.cost.params, d.fc2d_params);

    let table = ok(&["describe"]);
    assert!(table.lines().any(|l| l.starts_with("total")));
    assert_eq!(code(&["describe", "--variant", "7"]), 1);
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&["no-such-command"]), 1);
    assert_eq!(code(&["train", "--bogus"]), 1);
    assert_eq!(code(&["--help"]), 0);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    assert_eq!(code(&["train", "--synthetic", "10", "--max-epochs", "0", "--out", s(&out)]), 1);
    assert_eq!(code(&["train", "--out", s(&out)]), 1);
    assert_eq!(code(&["bench", "--input-size", "32", "--runs", "5"]), 1);
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let out = dir.path().join("o");
    assert_eq!(
        code(&["train", "--train-manifest", s(&missing), "--val-manifest", s(&missing), "--out", s(&out)]),
        2
    );
    assert_eq!(code(&["compare", "--table", s(&missing)]), 2);
    let t = dir.path().join("t.csv");
    fs::write(&t, "model,CC\na,1\n").unwrap();
    assert_eq!(code(&["compare", "--table", s(&t)]), 2);
}

fn train_tiny(dir: &Path, seed: &str) -> PathBuf {
    let cfg = tiny_config(dir, 32);
    let out = dir.join(format!("run{seed}"));
    let stdout = ok(&[
        "train", "--config", s(&cfg), "--synthetic", "20", "--max-epochs", "2", "--max-steps", "3",
        "--batch-size", "4", "--lr", "1e-3", "--seed", seed, "--out", s(&out),
    ]);
    assert!(stdout.contains(s(&out.join("best.fsal"))), "{stdout}");
    out
}

#[test]
fn train_outputs_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let a = train_tiny(dir.path(), "7");
    for f in ["best.fsal", "best.json", "best.optim.fsal", "final.fsal", "history.csv"] {
        assert!(a.join(f).exists(), "{f}");
    }
    let info: CheckpointInfo = serde_json::from_str(&fs::read_to_string(a.join("best.json")).unwrap()).unwrap();
    assert_eq!(info.train.seed, 7);
    let hist = fs::read_to_string(a.join("history.csv")).unwrap();
    assert!(hist.starts_with("epoch,train_loss,val_loss,val_kl,lr\n"));

    // same seed again, once through the environment fallback
    let b_dir = dir.path().join("b");
    fs::create_dir(&b_dir).unwrap();
    let cfg = tiny_config(&b_dir, 32);
    let out = b_dir.join("env");
    let status = Command::new(env!("CARGO_BIN_EXE_fastsal"))
        .args([
            "train", "--config", s(&cfg), "--synthetic", "20", "--max-epochs", "2", "--max-steps", "3",
            "--batch-size", "4", "--lr", "1e-3", "--out", s(&out),
        ])
        .env("SALI_SEED", "7")
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    assert_eq!(fs::read_to_string(out.join("history.csv")).unwrap(), hist);
    assert_eq!(fs::read(out.join("best.fsal")).unwrap(), fs::read(a.join("best.fsal")).unwrap());

    let c = train_tiny(dir.path(), "8");
    assert_ne!(fs::read_to_string(c.join("history.csv")).unwrap(), hist);
}

#[test]
fn predict_contract() {
    let dir = tempfile::tempdir().unwrap();
    let run = train_tiny(dir.path(), "1");
    let weights = run.join("best.fsal");
    let data = synth_dataset(1, 32, 0.0, 2).unwrap();
    let img = dir.path().join("img.ppm");
    save_image(&img, &data[0].image).unwrap();

    let p1 = dir.path().join("p1.pgm");
    let p2 = dir.path().join("p2.pgm");
    let json = dir.path().join("p1.json");
    ok(&["predict", "--weights", s(&weights), "--image", s(&img), "--out", s(&p1), "--json", s(&json)]);
    ok(&["predict", "--weights", s(&weights), "--image", s(&img), "--out", s(&p2)]);
    assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    let d = load_density(&p1).unwrap();
    assert_eq!(d.size(), (32, 32));
    assert!((d.sum() - 1.0).abs() < 1e-9 && d.values().iter().all(|&v| v >= 0.0));
    let raw: DensityMap = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    assert!((raw.sum() - 1.0).abs() < 1e-9);

    let big = dir.path().join("big.ppm");
    save_image(&big, &synth_dataset(1, 48, 0.0, 2).unwrap()[0].image).unwrap();
    let p3 = dir.path().join("p3.pgm");
    assert_eq!(code(&["predict", "--weights", s(&weights), "--image", s(&big), "--out", s(&p3)]), 2);
    ok(&["predict", "--weights", s(&weights), "--image", s(&big), "--out", s(&p3), "--resize"]);
    assert_eq!(load_density(&p3).unwrap().size(), (48, 48));

    // weights that do not match an explicit config
    let wrong = dir.path().join("wrong.json");
    fs::write(&wrong, serde_json::to_string(&ModelConfig::tiny(32, 3, 3)).unwrap()).unwrap();
    assert_eq!(
        code(&["predict", "--weights", s(&weights), "--image", s(&img), "--out", s(&p3), "--config", s(&wrong)]),
        2
    );
}

/// Eight 8x8 samples on disk; returns the manifest path and the reloaded densities.
fn toy_eval_set(dir: &Path) -> (PathBuf, Vec<DensityMap>) {
    let data = synth_dataset(8, 8, 0.3, 9).unwrap();
    let gt_dir = dir.join("gt");
    let m = write_samples(&gt_dir, &data, &[Split::Test; 8]).unwrap();
    let mp = gt_dir.join("manifest.csv");
    save_manifest(&mp, &m).unwrap();
    let gts = m.entries.iter().map(|e| load_density(&e.ground_truth).unwrap()).collect();
    (mp, gts)
}

fn report(path: &Path) -> MetricReport {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn mean(r: &MetricReport, m: &str) -> f64 {
    r.mean[m].value().unwrap_or_else(|| panic!("{m} unavailable: {:?}", r.mean[m]))
}

#[test]
fn eval_perfect_and_constant_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let (mp, gts) = toy_eval_set(dir.path());
    let perfect = dir.path().join("perfect");
    fs::create_dir(&perfect).unwrap();
    for (k, g) in gts.iter().enumerate() {
        fs::copy(gts_path(&mp, k), perfect.join(format!("synth_{k:05}.pgm"))).unwrap();
        assert_eq!(load_density(&perfect.join(format!("synth_{k:05}.pgm"))).unwrap(), *g);
    }
    let out = dir.path().join("r.json");
    let csv_out = dir.path().join("r.csv");
    ok(&["eval", "--pred-dir", s(&perfect), "--gt-manifest", s(&mp), "--out", s(&out), "--csv", s(&csv_out)]);
    let r = report(&out);
    assert_eq!(r.images.len(), 8);
    assert!((mean(&r, "cc") - 1.0).abs() < 1e-9);
    assert!((mean(&r, "sim") - 1.0).abs() < 1e-9);
    assert!(mean(&r, "kl") < 1e-9);
    let csv_text = fs::read_to_string(&csv_out).unwrap();
    assert_eq!(csv_text.lines().count(), 9);
    assert!(csv_text.starts_with("id,kl,cc,"));

    let flat = dir.path().join("flat");
    fs::create_dir(&flat).unwrap();
    for k in 0..8 {
        save_density(&flat.join(format!("synth_{k:05}.pgm")), &DensityMap::uniform(8, 8)).unwrap();
    }
    ok(&[
        "eval", "--pred-dir", s(&flat), "--gt-manifest", s(&mp), "--metrics", "auc_judd,auc_borji,sauc,cc",
        "--out", s(&out),
    ]);
    let r = report(&out);
    for m in ["auc_judd", "auc_borji", "sauc"] {
        assert!((mean(&r, m) - 0.5).abs() < 1e-12, "{m}: {}", mean(&r, m));
    }
    assert!(r.mean["cc"].value().is_none(), "constant map has no correlation");
    assert!(r.images.iter().all(|i| i.values["cc"].value().is_none()));
}

fn gts_path(manifest: &Path, k: usize) -> PathBuf {
    manifest.parent().unwrap().join(format!("synth_{k:05}_density.pgm"))
}

#[test]
fn eval_matches_direct_formulas() {
    let dir = tempfile::tempdir().unwrap();
    let (mp, gts) = toy_eval_set(dir.path());
    let preds_dir = dir.path().join("pred");
    fs::create_dir(&preds_dir).unwrap();
    let preds: Vec<DensityMap> = synth_dataset(8, 8, 0.8, 10).unwrap().into_iter().map(|s| s.density).collect();
    for (k, p) in preds.iter().enumerate() {
        save_density(&preds_dir.join(format!("synth_{k:05}.pgm")), p).unwrap();
    }
    let out = dir.path().join("r.json");
    ok(&["eval", "--pred-dir", s(&preds_dir), "--gt-manifest", s(&mp), "--metrics", "kl,cc,sim", "--out", s(&out)]);
    let r = report(&out);
    for (k, (im, g)) in r.images.iter().zip(&gts).enumerate() {
        let p = load_density(&preds_dir.join(format!("synth_{k:05}.pgm"))).unwrap();
        let (p, g) = (p.values(), g.values());
        let n = p.len() as f64;
        let kl: f64 = g.iter().zip(p).map(|(g, p)| g * (1e-12 + g / (p + 1e-12)).ln()).sum();
        let (mp_, mg) = (p.iter().sum::<f64>() / n, g.iter().sum::<f64>() / n);
        let cov: f64 = p.iter().zip(g).map(|(a, b)| (a - mp_) * (b - mg)).sum();
        let vp: f64 = p.iter().map(|a| (a - mp_).powi(2)).sum();
        let vg: f64 = g.iter().map(|b| (b - mg).powi(2)).sum();
        let sim: f64 = p.iter().zip(g).map(|(a, b)| a.min(*b)).sum();
        assert!((im.values["kl"].value().unwrap() - kl).abs() < 1e-9);
        assert!((im.values["cc"].value().unwrap() - cov / (vp * vg).sqrt()).abs() < 1e-9);
        assert!((im.values["sim"].value().unwrap() - sim).abs() < 1e-9);
    }

    // a prediction missing for one id is a data error
    fs::remove_file(preds_dir.join("synth_00003.pgm")).unwrap();
    let o = fastsal(&["eval", "--pred-dir", s(&preds_dir), "--gt-manifest", s(&mp)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("synth_00003"));
    assert_eq!(code(&["eval", "--pred-dir", s(&preds_dir), "--gt-manifest", s(&mp), "--metrics", "nope"]), 1);
}

#[test]
fn compare_writes_ranked_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ranked.csv");
    let table = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/table8.csv");
    ok(&["compare", "--table", s(&table), "--out", s(&out)]);
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2 + 23);
    assert!(lines[2].starts_with("Baseline: infinite,"));
    assert!(lines[24].starts_with("Baseline: Chance,"));
}

#[test]
fn bench_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench.json");
    ok(&["bench", "--input-size", "32", "--runs", "10", "--warmup", "2", "--out", s(&out)]);
    let r: BenchReport = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(r.times_ms.len(), 10);
    assert_eq!(r.timed_runs, 10);
    assert_eq!(r.warmup_runs, 2);
    assert_eq!(r.threads, 1);
    assert!(r.median_ms <= r.p95_ms);
    assert!(r.note.contains("37 ms"));
    let m = Model::<f32>::build(&ModelConfig::default().with_input_size(32), 0).unwrap();
    assert_eq!(r.params, m.count_params());

    ok(&["bench", "--input-size", "32", "--runs", "10", "--warmup", "0", "--threads", "2", "--out", s(&out)]);
    let r: BenchReport = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(r.threads, 2);
}
