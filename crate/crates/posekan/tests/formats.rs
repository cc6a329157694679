use std::path::Path;

use posekan::checkpoint::{self, Checkpoint};
use posekan::config::RunConfig;
use posekan::dataset::{decode_binary, encode_binary, format_text, load_dataset, parse_text, save_dataset, LoadedDataset};
use posekan::driver;
use posekan::error::{Error, EXIT_CONFIG, EXIT_DATA};
use posekan_core::data::{make_synthetic_task, Dataset, PoseSample};
use posekan_core::optim::{Amsgrad, LrSchedule, TrainState};
use posekan_core::{Matrix, ModelConfig, PoseKanModel, SkeletonGraph};
use proptest::prelude::*;

fn tiny_config(seed: u64) -> ModelConfig {
    ModelConfig { embed_dim: 4, blocks: 1, stack_depth: 1, grid_size: 3, order: 2, seed, ..ModelConfig::default() }
}

fn tiny_run_config(out: &Path) -> RunConfig {
    let mut c = RunConfig::default();
    for (k, v) in
        [("embed_dim", "4"), ("blocks", "1"), ("stack_depth", "1"), ("grid_size", "3"), ("order", "2"), ("epochs", "2"), ("batch", "8")]
    {
        c.set(k, v).unwrap();
    }
    c.out_dir = out.to_str().unwrap().to_string();
    c
}

fn trained_checkpoint() -> (PoseKanModel, TrainState) {
    let ds = make_synthetic_task(16, 12, 3).unwrap();
    let cfg = tiny_run_config(Path::new("unused"));
    let out = driver::train_run(&cfg, &ds, None, None).unwrap();
    (out.model, out.state)
}

fn path_graph(j: usize) -> SkeletonGraph {
    let edges: Vec<(usize, usize)> = (1..j).map(|i| (i - 1, i)).collect();
    SkeletonGraph::new(j, &edges).unwrap()
}

prop_compose! {
    fn dataset_strategy()(j in 2usize..6, n in 1usize..5)
        (values in proptest::collection::vec(-1e4f64..1e4, n * j * 5), j in Just(j), n in Just(n)) -> Dataset {
        let samples = (0..n)
            .map(|i| {
                let v = &values[i * j * 5..(i + 1) * j * 5];
                PoseSample::new(Matrix::from_vec(j, 2, v[..2 * j].to_vec()), Matrix::from_vec(j, 3, v[2 * j..].to_vec()))
                    .with_action(format!("act{}", i % 2))
            })
            .collect();
        Dataset::new(samples, path_graph(j), None).unwrap()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn text_dataset_round_trips_exactly(ds in dataset_strategy()) {
        let loaded = LoadedDataset::from_dataset(ds.clone());
        let back = parse_text(&format_text(&loaded), Path::new("t"), ds.skeleton()).unwrap();
        prop_assert_eq!(back.dataset, ds);
        prop_assert_eq!(back.ids, loaded.ids);
    }

    #[test]
    fn binary_dataset_round_trips_values(ds in dataset_strategy()) {
        let back = decode_binary(&encode_binary(&ds), Path::new("b"), ds.skeleton()).unwrap();
        for (a, b) in back.dataset.samples().iter().zip(ds.samples()) {
            prop_assert_eq!(&a.input_2d, &b.input_2d);
            prop_assert_eq!(&a.target_3d, &b.target_3d);
        }
    }
}

#[test]
fn dataset_files_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let data = LoadedDataset::from_dataset(make_synthetic_task(16, 9, 1).unwrap());
    for binary in [false, true] {
        let path = dir.path().join(if binary { "d.bin" } else { "d.txt" });
        save_dataset(&path, &data, binary).unwrap();
        let back = load_dataset(&path, &SkeletonGraph::h36m16()).unwrap();
        assert_eq!(back.dataset.len(), 9);
        for (a, b) in back.dataset.samples().iter().zip(data.dataset.samples()) {
            assert_eq!(a.target_3d, b.target_3d);
        }
        if !binary {
            assert_eq!(back.dataset, data.dataset);
        }
    }
}

#[test]
fn dataset_without_targets_is_flagged() {
    let text = "sample a | x2d: 0 0 1 1\nsample b | x2d: 2 2 3 3\n";
    let d = parse_text(text, Path::new("t"), &path_graph(2)).unwrap();
    assert!(!d.has_ground_truth);
    assert!(d.require_ground_truth().is_err());
    let mixed = "sample a | x2d: 0 0 1 1 | y3d: 0 0 0 1 1 1\nsample b | x2d: 2 2 3 3\n";
    assert!(matches!(parse_text(mixed, Path::new("t"), &path_graph(2)), Err(Error::Record { record: 1, .. })));
}

#[test]
fn malformed_dataset_records() {
    let g = path_graph(2);
    let e = parse_text("sample a | x2d: 0 0 1\n", Path::new("t"), &g).unwrap_err();
    assert!(matches!(e, Error::Record { record: 0, .. }), "{e}");
    let e = parse_text("sample a | x2d: 0 0 1 1 2 2\n", Path::new("t"), &g).unwrap_err();
    assert_eq!(e.exit_code(), EXIT_DATA);
    let e = parse_text("sample a | x2d: 0 0 1 x\n", Path::new("t"), &g).unwrap_err();
    assert!(e.to_string().contains("bad number"), "{e}");
    let bytes = encode_binary(&make_synthetic_task(16, 2, 0).unwrap());
    let e = decode_binary(&bytes[..bytes.len() - 3], Path::new("b"), &SkeletonGraph::h36m16()).unwrap_err();
    assert!(matches!(e, Error::Truncated { .. }));
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let (mut model, state) = trained_checkpoint();
    let bytes = checkpoint::encode(&mut model, &state, 0.001);
    let Checkpoint { model: mut back, state: back_state, target_scale } = checkpoint::decode(&bytes, Path::new("c")).unwrap();
    assert_eq!(back_state, state);
    assert_eq!(target_scale, 0.001);
    assert_eq!(back.flat_params(), model.flat_params());
    assert_eq!(checkpoint::encode(&mut back, &back_state, target_scale), bytes);
    let x = make_synthetic_task(16, 1, 8).unwrap().samples()[0].input_2d.clone();
    let ctx = posekan_core::ForwardCtx::EVAL;
    assert_eq!(back.forward(&x, ctx).unwrap().0, model.forward(&x, ctx).unwrap().0);
}

#[test]
fn checkpoint_rejects_corruption() {
    let mut model = PoseKanModel::new(SkeletonGraph::h36m16(), tiny_config(1)).unwrap();
    let state = TrainState::new(model.parameter_count(), Amsgrad::default(), LrSchedule::default(), 1);
    let bytes = checkpoint::encode(&mut model, &state, 0.001);
    let p = Path::new("c");

    let mut flipped = bytes.clone();
    flipped[bytes.len() / 2] ^= 0x10;
    assert!(matches!(checkpoint::decode(&flipped, p), Err(Error::CorruptChecksum { .. })));

    let mut version = bytes.clone();
    version[4] = 9;
    assert!(matches!(checkpoint::decode(&version, p), Err(Error::VersionMismatch { found: 9, .. })));

    assert!(matches!(checkpoint::decode(b"NOPE\x01\0\0\0", p), Err(Error::BadMagic { .. })));
    assert!(matches!(checkpoint::decode(&bytes[..6], p), Err(Error::Truncated { .. })));
    let e = checkpoint::decode(&bytes[..bytes.len() - 9], p).unwrap_err();
    assert_eq!(e.exit_code(), EXIT_DATA);
}

#[test]
fn checkpoint_shape_guard() {
    let mut model = PoseKanModel::new(SkeletonGraph::h36m16(), tiny_config(1)).unwrap();
    let state = TrainState::new(model.parameter_count(), Amsgrad::default(), LrSchedule::default(), 1);
    let mut bytes = checkpoint::encode(&mut model, &state, 0.001);
    // grid_size sits after the magic, version, joint/edge counts, edges, embed_dim, blocks and stack_depth
    let edges = SkeletonGraph::h36m16().edges().len();
    let grid_at = 8 + 8 + edges * 8 + 12;
    assert_eq!(u32::from_le_bytes(bytes[grid_at..grid_at + 4].try_into().unwrap()), 3);
    bytes[grid_at] = 4;
    let body = bytes.len() - 4;
    let crc = crc32(&bytes[..body]);
    bytes[body..].copy_from_slice(&crc.to_le_bytes());
    let e = checkpoint::decode(&bytes, Path::new("c")).unwrap_err();
    let fresh = tiny_config(1).parameter_count();
    let grown = ModelConfig { grid_size: 4, ..tiny_config(1) }.parameter_count();
    assert!(matches!(e, Error::ParameterCount { expected, found } if expected == grown && found == fresh), "{e}");
}

fn crc32(bytes: &[u8]) -> u32 {
    // bitwise CRC-32 (IEEE, reflected), independent of the crate used by the writer
    let mut crc = !0u32;
    for &b in bytes {
        crc ^= b as u32;
        for _ in 0..8 {
            crc = if crc & 1 != 0 { (crc >> 1) ^ 0xEDB8_8320 } else { crc >> 1 };
        }
    }
    !crc
}

#[test]
fn checkpoint_trailer_is_ieee_crc32() {
    let mut model = PoseKanModel::new(SkeletonGraph::h36m16(), tiny_config(2)).unwrap();
    let state = TrainState::new(model.parameter_count(), Amsgrad::default(), LrSchedule::default(), 2);
    let bytes = checkpoint::encode(&mut model, &state, 0.001);
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    assert_eq!(u32::from_le_bytes(trailer.try_into().unwrap()), crc32(body));
}

#[test]
fn train_run_writes_log_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let ds = make_synthetic_task(16, 10, 4).unwrap();
    let val = make_synthetic_task(16, 4, 5).unwrap();
    let mut cfg = tiny_run_config(dir.path());
    cfg.epochs = 3;
    cfg.checkpoint_every = 2;
    cfg.eval_train = true;
    let out = driver::train_run(&cfg, &ds, Some(&val), Some(dir.path())).unwrap();
    let names: Vec<String> = out.checkpoints.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert_eq!(names, ["ckpt_epoch2.pkan", "ckpt_epoch3.pkan"]);
    let log = std::fs::read_to_string(dir.path().join(driver::METRICS_FILE)).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], cfg.echo());
    assert_eq!(lines[1], driver::METRICS_HEADER);
    assert_eq!(lines.len(), 2 + 3 * 2);
    assert!(lines[2].starts_with("1,train,"));
    assert!(lines[3].starts_with("1,val,"));
    for l in &lines[2..] {
        let f: Vec<&str> = l.split(',').collect();
        assert_eq!(f.len(), 7);
        assert!(f[3].parse::<f64>().unwrap() > 0.0);
        assert_eq!(f[6], "0");
    }
    let ck = checkpoint::load(&out.checkpoints[1]).unwrap();
    assert_eq!(ck.state.epoch, 3);
}

#[test]
fn eval_loss_matches_training_loss_without_dropout() {
    let ds = make_synthetic_task(16, 6, 4).unwrap();
    let mut cfg = tiny_run_config(Path::new("unused"));
    cfg.dropout = 0.0;
    cfg.epochs = 1;
    cfg.batch = 6;
    cfg.lr = 1e-12;
    let out = driver::train_run(&cfg, &ds, None, None).unwrap();
    let eval = driver::eval_loss(&out.model, ds.samples(), cfg.alpha, cfg.target_scale).unwrap();
    let train = out.final_loss().unwrap();
    assert!((eval - train).abs() <= 1e-9 * train, "{eval} vs {train}");
}

#[test]
fn predictions_csv_round_trips() {
    let ds = make_synthetic_task(16, 3, 4).unwrap();
    let preds: Vec<Matrix> = ds.samples().iter().map(|s| s.target_3d.clone()).collect();
    let ids: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
    let text = driver::predictions_csv(&ids, &preds);
    assert_eq!(text.lines().count(), 1 + 3 * 16);
    assert_eq!(driver::parse_predictions(&text, Path::new("p"), &ids, 16).unwrap(), preds);
    let swapped: Vec<String> = ["b", "a", "c"].iter().map(|s| s.to_string()).collect();
    assert!(driver::parse_predictions(&text, Path::new("p"), &swapped, 16).is_err());
}

#[test]
fn protocol_names_and_errors() {
    use posekan_core::train::Protocol;
    assert_eq!(driver::parse_protocol("pa").unwrap(), Protocol::PaMpjpe);
    assert_eq!(driver::parse_protocol("mpjpe").unwrap(), Protocol::Mpjpe);
    assert_eq!(driver::parse_protocol("pck").unwrap(), Protocol::PckAuc);
    assert_eq!(driver::parse_protocol("p9").unwrap_err().exit_code(), EXIT_CONFIG);
}

#[test]
fn sweep_marks_failures_and_continues() {
    let ds = make_synthetic_task(16, 6, 4).unwrap();
    let mut cfg = tiny_run_config(Path::new("unused"));
    cfg.epochs = 1;
    let values: Vec<String> = ["0.1", "1.5", "0.3"].iter().map(|s| s.to_string()).collect();
    let rows = driver::run_sweep(&cfg, "s", &values, &ds, None, None, false).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0].status, "ok");
    assert!(rows[1].status.starts_with("failed"), "{}", rows[1].status);
    assert!(rows[1].final_loss.is_none());
    assert_eq!(rows[2].status, "ok");
    let parallel = driver::run_sweep(&cfg, "s", &values, &ds, None, None, true).unwrap();
    assert_eq!(parallel, rows);
    let (kept, dropped) = driver::dedup_values(&["1".into(), "2".into(), "1".into()]);
    assert_eq!((kept.len(), dropped), (2, vec!["1".to_string()]));
}
