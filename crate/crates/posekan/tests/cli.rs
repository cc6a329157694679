use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use posekan::config::SEED_ENV;
use posekan::dataset::{format_text, LoadedDataset};
use posekan_core::data::make_synthetic_task;

const TINY: [&str; 6] = ["embed_dim=4", "blocks=1", "stack_depth=1", "grid_size=3", "batch=8", "epochs=1"];

fn posekan(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_posekan")).args(args).current_dir(dir).env_remove(SEED_ENV).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn with_overrides<'a>(base: &[&'a str], sets: &[&'a str]) -> Vec<&'a str> {
    let mut args = base.to_vec();
    for s in sets {
        args.extend(["--set", s]);
    }
    args
}

/// Writes a synthetic dataset with four action labels and returns its path.
fn synth(dir: &Path, n: usize) -> PathBuf {
    let path = dir.join("synth.txt");
    let data = LoadedDataset::from_dataset(make_synthetic_task(16, n, 11).unwrap());
    std::fs::write(&path, format_text(&data)).unwrap();
    path
}

#[test]
fn train_smoke_writes_one_row() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 12);
    std::fs::write(dir.path().join("run.cfg"), "data = synth.txt\nout_dir = out\n").unwrap();
    let o = posekan(&with_overrides(&["train", "--config", "run.cfg"], &TINY), dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let log = std::fs::read_to_string(dir.path().join("out/metrics.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert!(lines[0].starts_with("# config:"));
    assert_eq!(lines.len(), 3, "{log}");
    assert!(lines[2].starts_with("1,train,"));
    assert!(dir.path().join("out/ckpt_epoch1.pkan").exists());
}

#[test]
fn missing_dataset_exits_2_naming_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = posekan(&with_overrides(&["train"], &["data=no/such/file.txt"]), dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no/such/file.txt"), "{}", stderr(&o));
}

#[test]
fn scaling_out_of_range_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 4);
    let o = posekan(&with_overrides(&["train"], &["data=synth.txt", "s=1.5"]), dir.path());
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("ScalingOutOfRange") && err.contains("`s`"), "{err}");
}

#[test]
fn bad_usage_exits_1_and_help_lists_keys() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(posekan(&["train", "--bogus"], dir.path()).status.code(), Some(1));
    assert_eq!(posekan(&["train", "--set", "epochs=-3"], dir.path()).status.code(), Some(1));
    let help = posekan(&["train", "--help"], dir.path());
    assert_eq!(help.status.code(), Some(0));
    let text = stdout(&help);
    for (key, default, _) in posekan::config::KEYS {
        let line = text.lines().find(|l| l.trim_start().starts_with(&format!("{key} "))).unwrap_or_else(|| panic!("{key} missing"));
        if !default.is_empty() {
            assert!(line.contains(default), "{line}");
        }
    }
}

#[test]
fn verify_all_passes_and_perturbation_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = posekan(&["verify", "all"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let o = posekan(&["verify", "gradients", "--perturb", "kan_layer"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("kan_layer"), "{}", stderr(&o));
    assert_eq!(posekan(&["verify", "gradients", "--perturb", "nope"], dir.path()).status.code(), Some(1));
}

#[test]
fn verify_filters_lists_identity_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = posekan(&["verify", "filters"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let rows = stdout(&o).lines().filter(|l| l.starts_with("filters ")).count();
    assert!(rows >= 3, "{}", stdout(&o));
}

fn gt_predictions(dir: &Path, data: &LoadedDataset) -> PathBuf {
    let preds: Vec<_> = data.dataset.samples().iter().map(|s| s.target_3d.clone()).collect();
    let path = dir.join("gt.csv");
    std::fs::write(&path, posekan::driver::predictions_csv(&data.ids, &preds)).unwrap();
    path
}

#[test]
fn eval_ground_truth_fixture_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 10);
    let data = LoadedDataset::from_dataset(make_synthetic_task(16, 10, 11).unwrap());
    gt_predictions(dir.path(), &data);
    let labels: std::collections::BTreeSet<_> = data.dataset.samples().iter().map(|s| s.action.clone()).collect();
    for protocol in ["mpjpe", "pa"] {
        let o = posekan(&["eval", "--predictions", "gt.csv", "--data", "synth.txt", "--protocol", protocol, "--out", "e.csv"], dir.path());
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let csv = std::fs::read_to_string(dir.path().join("e.csv")).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        let header = if protocol == "pa" { "action,samples,PA-MPJPE" } else { "action,samples,MPJPE" };
        assert_eq!(lines[1], header);
        let rows = &lines[2..];
        assert_eq!(rows.len(), labels.len() + 1);
        for r in rows {
            let v: f64 = r.rsplit(',').next().unwrap().parse().unwrap();
            assert!(v.abs() <= 1e-9, "{r}");
        }
        assert!(rows.last().unwrap().starts_with("Average,10,"));
        assert!(stdout(&o).contains(if protocol == "pa" { "PA-MPJPE" } else { "MPJPE" }));
    }
}

#[test]
fn predict_then_eval_agree() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 8);
    let o = posekan(&with_overrides(&["train"], &[&TINY[..], &["data=synth.txt", "out_dir=o"]].concat()), dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = posekan(&["predict", "--checkpoint", "o/ckpt_epoch1.pkan", "--data", "synth.txt", "--out", "p.csv"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let a = posekan(&["eval", "--checkpoint", "o/ckpt_epoch1.pkan", "--data", "synth.txt", "--out", "a.csv"], dir.path());
    let b = posekan(&["eval", "--predictions", "p.csv", "--data", "synth.txt", "--out", "b.csv"], dir.path());
    assert_eq!((a.status.code(), b.status.code()), (Some(0), Some(0)));
    let body = |f: &str| std::fs::read_to_string(dir.path().join(f)).unwrap().lines().skip(1).map(String::from).collect::<Vec<_>>();
    let (ra, rb) = (body("a.csv"), body("b.csv"));
    for (x, y) in ra.iter().zip(&rb).skip(1) {
        let fx: f64 = x.rsplit(',').next().unwrap().parse().unwrap();
        let fy: f64 = y.rsplit(',').next().unwrap().parse().unwrap();
        assert!((fx - fy).abs() <= 1e-9 * fx.abs(), "{x} vs {y}");
    }
    let o = posekan(&["eval", "--checkpoint", "missing.pkan", "--data", "synth.txt"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

fn sweep(dir: &Path, param: &str, values: &str, extra: &[&str]) -> (Output, Vec<String>) {
    let mut args = with_overrides(&["sweep"], &[&TINY[..], &["data=synth.txt", "out_dir=sw"]].concat());
    args.extend(["--param", param, "--values", values, "--out", "sweep.csv"]);
    args.extend(extra);
    let o = posekan(&args, dir);
    let csv = std::fs::read_to_string(dir.join("sweep.csv")).unwrap_or_default();
    (o, csv.lines().map(String::from).collect())
}

#[test]
fn sweep_rows_and_dedup() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 8);
    let (o, lines) = sweep(dir.path(), "s", "0.1,0.2,0.5,0.2", &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("duplicate"), "{}", stderr(&o));
    assert!(lines[0].starts_with("# config:"));
    assert_eq!(lines[1], posekan::driver::SWEEP_HEADER);
    assert_eq!(lines.len(), 2 + 3);
    for l in &lines[2..] {
        assert!(l.ends_with(",ok"), "{l}");
    }
}

#[test]
fn sweep_order_parameter_count_increases() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 8);
    let (o, lines) = sweep(dir.path(), "order", "1,2,3", &["--parallel"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let counts: Vec<usize> = lines[2..].iter().map(|l| l.split(',').nth(3).unwrap().parse().unwrap()).collect();
    assert_eq!(counts.len(), 3);
    assert!(counts.windows(2).all(|w| w[0] < w[1]), "{counts:?}");
    // oracle: each KAN layer grows by in·out per unit of order
    let f = 4;
    let kan_edges = 2 * f + 2 * f * f + 3 * f;
    assert_eq!(counts[1] - counts[0], kan_edges);
    assert_eq!(counts[2] - counts[1], kan_edges);
}

#[test]
fn make_synth_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    for (file, binary) in [("s.txt", false), ("s.bin", true)] {
        let mut args = vec!["make-synth", "--samples", "5", "--seed", "3", "--out", file];
        if binary {
            args.push("--binary");
        }
        assert_eq!(posekan(&args, dir.path()).status.code(), Some(0));
    }
    let g = posekan_core::SkeletonGraph::h36m16();
    let t = posekan::dataset::load_dataset(&dir.path().join("s.txt"), &g).unwrap();
    let b = posekan::dataset::load_dataset(&dir.path().join("s.bin"), &g).unwrap();
    assert_eq!(t.dataset.len(), 5);
    for (x, y) in t.dataset.samples().iter().zip(b.dataset.samples()) {
        assert_eq!(x.input_2d, y.input_2d);
    }
    assert_eq!(posekan(&["make-synth", "--joints", "5", "--out", "x.txt"], dir.path()).status.code(), Some(1));
}

#[test]
fn seed_env_fallback_and_echo_rerun() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 8);
    let args = with_overrides(&["train"], &[&TINY[..], &["data=synth.txt", "out_dir=a"]].concat());
    let o = Command::new(env!("CARGO_BIN_EXE_posekan")).args(&args).current_dir(dir.path()).env(SEED_ENV, "77").output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let log = std::fs::read_to_string(dir.path().join("a/metrics.csv")).unwrap();
    assert!(log.lines().next().unwrap().contains(" seed=77 "));
    // rerun from the echoed config line, redirected to a new directory
    let o = posekan(&["train", "--config", "a/metrics.csv", "--set", "out_dir=b"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let a = std::fs::read(dir.path().join("a/ckpt_epoch1.pkan")).unwrap();
    let b = std::fs::read(dir.path().join("b/ckpt_epoch1.pkan")).unwrap();
    assert_eq!(a, b);
    let body =
        |d: &str| std::fs::read_to_string(dir.path().join(d).join("metrics.csv")).unwrap().lines().skip(1).collect::<Vec<_>>().join("\n");
    assert_eq!(body("a"), body("b"));
}
