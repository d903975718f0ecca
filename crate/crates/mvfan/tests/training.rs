mod common;

use std::path::Path;

use mvfan::checkpoint;
use mvfan::error::Error;
use mvfan::train::{self, epoch_means, run_training, train_until};
use mvfan_core::synth::synth_dataset;
use mvfan_core::RadarFrame;

fn frames(n: usize) -> Vec<RadarFrame> {
    synth_dataset(11, n, &Default::default()).unwrap()
}

#[test]
fn zero_epochs_is_initialization() {
    let mut cfg = common::tiny_config();
    cfg.train.epochs = 0;
    let out = run_training(&cfg, &frames(4)).unwrap();
    let (_, init) = train::init(&cfg).unwrap();
    assert!(out.log.is_empty());
    assert_eq!(out.state, init);
}

#[test]
fn same_seed_same_run() {
    let cfg = common::tiny_config();
    let data = frames(4);
    let a = run_training(&cfg, &data).unwrap();
    let b = run_training(&cfg, &data).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.state, b.state);
    assert_eq!(a.log.len(), 4);
    let mut other = cfg.clone();
    other.train.seed = 1;
    assert_ne!(run_training(&other, &data).unwrap().log, a.log);
}

#[test]
fn log_records_the_weighted_total() {
    let cfg = common::tiny_config();
    let out = run_training(&cfg, &frames(4)).unwrap();
    let w = cfg.loss.weights;
    for s in &out.log {
        let l = &s.loss;
        let want = w.cls * l.cls + w.aux * l.aux + w.loc * l.loc + w.dir * l.dir;
        assert!((l.total - want).abs() <= 1e-12 * want.abs().max(1.0), "step {}: {} vs {want}", s.step, l.total);
        assert!(l.cls.is_finite() && l.aux >= 0.0 && l.loc >= 0.0 && l.dir >= 0.0);
        assert_eq!(s.frame_ids.len(), cfg.train.batch_size);
    }
    let steps: Vec<usize> = out.log.iter().map(|s| s.step).collect();
    assert_eq!(steps, [0, 1, 2, 3]);
    let means = epoch_means(&out.log);
    assert_eq!(means.len(), 2);
    assert!((means[1] - (out.log[2].loss.total + out.log[3].loss.total) / 2.0).abs() < 1e-15);
}

#[test]
fn resume_matches_uninterrupted_run() {
    let mut cfg = common::tiny_config();
    cfg.train.epochs = 3;
    let data = frames(3);
    let full = run_training(&cfg, &data).unwrap();

    let (model, mut state) = train::init(&cfg).unwrap();
    let first = train_until(&model, &cfg, &data, &mut state, 1, |_| {}, |_| Ok(())).unwrap();
    let bytes = checkpoint::encode(&cfg, &state).unwrap();
    drop(state);
    let loaded = checkpoint::decode(&bytes, Path::new("mem.ckpt"), Some(&cfg)).unwrap();
    assert!(!loaded.hash_mismatch);
    assert_eq!(loaded.header.epoch, 1);
    let mut state = loaded.state;
    let rest = train_until(&loaded.model, &cfg, &data, &mut state, 3, |_| {}, |_| Ok(())).unwrap();

    let joined: Vec<_> = first.into_iter().chain(rest).collect();
    assert_eq!(joined, full.log);
    assert_eq!(state, full.state);
}

#[test]
fn checkpoint_file_round_trip_and_damage() {
    let cfg = common::tiny_config();
    let out = run_training(&cfg, &frames(2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.ckpt");
    checkpoint::save(&path, &cfg, &out.state).unwrap();
    let loaded = checkpoint::load(&path, None).unwrap();
    assert_eq!(loaded.state, out.state);
    assert_eq!(loaded.header.config, cfg);

    let mut changed = cfg.clone();
    changed.eval.decode.score_thr = 0.3;
    assert!(checkpoint::load(&path, Some(&changed)).unwrap().hash_mismatch);

    let bytes = std::fs::read(&path).unwrap();
    let e = checkpoint::decode(&bytes[..bytes.len() - 3], &path, None).err().unwrap();
    assert_eq!(e.category(), "format");
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(checkpoint::decode(&bad, &path, None), Err(Error::Format { offset: 0, .. })));
    let mut long = bytes;
    long.push(0);
    assert!(checkpoint::decode(&long, &path, None).is_err());
}

#[test]
fn divergence_names_the_batch() {
    let mut cfg = common::tiny_config();
    cfg.optim.lr = 1e300;
    cfg.optim.weight_decay = 0.0;
    let data = frames(4);
    match run_training(&cfg, &data) {
        Err(Error::Divergence { step, frame_ids }) => {
            assert!(step > 0, "first step cannot diverge from a finite init");
            assert_eq!(frame_ids.len(), cfg.train.batch_size);
            assert!(frame_ids.iter().all(|id| data.iter().any(|f| &f.frame_id == id)));
        }
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("training at lr 1e300 stayed finite"),
    }
}
