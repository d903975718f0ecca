//! Harness-level checks shared by the integration tests and the acceptance
//! runner.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use mvfan::config_file::{from_toml, to_toml};
use mvfan::dataset::{write_dataset, DatasetIndex};
use mvfan::io;
use mvfan_core::config::{ExperimentConfig, OptimizerKind};
use mvfan_core::projection::{AxisSpec, GridSpec};
use mvfan_core::synth::synth_dataset;
use mvfan_core::{Box3D, RadarFrame, RadarPoint};

pub type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)*) => {
        if !$cond {
            return Err(format!($($fmt)*));
        }
    };
}

pub fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

/// Network small enough for multi-epoch runs inside a unit test.
pub fn tiny_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk();
    cfg.model.width = 8;
    cfg.model.pillar_channels = 4;
    cfg.model.head_width = 8;
    cfg.model.point_cap = 64;
    cfg.data.synth_scenes = 4;
    cfg.train.epochs = 2;
    cfg.train.batch_size = 2;
    cfg
}

fn bits(p: &RadarPoint) -> [u64; 6] {
    [p.x, p.y, p.z, p.rcs, p.v_r, p.v].map(f64::to_bits)
}

fn same_points(a: &[RadarPoint], b: &[RadarPoint]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(p, q)| bits(p) == bits(q))
}

fn same_boxes(a: &[Box3D], b: &[Box3D]) -> bool {
    let key = |b: &Box3D| ([b.cx, b.cy, b.cz, b.l, b.w, b.h, b.yaw].map(f64::to_bits), b.class_id);
    a.len() == b.len() && a.iter().zip(b).all(|(p, q)| key(p) == key(q))
}

/// Synthetic frames through the point/label codecs, single files and a
/// dataset directory: bit-exact after rounding points to `f32`.
pub fn frame_io_round_trip() -> Check {
    let frames = synth_dataset(7, 6, &Default::default()).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut points = 0;
    for f in &frames {
        let q = io::quantize(f);
        let bytes = io::encode_points(&f.points);
        ensure!(bytes.len() == f.points.len() * io::RECORD_BYTES, "{}: record size", f.frame_id);
        let back = io::decode_points(&bytes, Path::new("mem")).map_err(|e| e.to_string())?;
        ensure!(same_points(&back, &q.points), "{}: decoded points differ", f.frame_id);
        let labels = io::parse_labels(&io::format_labels(&f.boxes), Path::new("mem")).map_err(|e| e.to_string())?;
        ensure!(same_boxes(&labels, &f.boxes), "{}: labels differ", f.frame_id);
        let path = io::write_frame(dir.path(), f).map_err(|e| e.to_string())?;
        let loaded = io::load_frame(&path).map_err(|e| e.to_string())?;
        ensure!(loaded.frame_id == f.frame_id, "{}: frame id", f.frame_id);
        ensure!(
            same_points(&loaded.points, &q.points) && same_boxes(&loaded.boxes, &f.boxes),
            "{}: file round trip differs",
            f.frame_id
        );
        points += f.points.len();
    }
    let root = dir.path().join("ds");
    let mut splits = BTreeMap::new();
    splits.insert("train".to_string(), frames[..4].to_vec());
    splits.insert("val".to_string(), frames[4..].to_vec());
    write_dataset(&root, &splits).map_err(|e| e.to_string())?;
    let index = DatasetIndex::open(&root).map_err(|e| e.to_string())?;
    ensure!(index.splits() == ["train", "val"], "splits {:?}", index.splits());
    for (name, want) in &splits {
        let got = index.load_split(name).map_err(|e| e.to_string())?;
        ensure!(got.len() == want.len(), "split {name}: {} frames", got.len());
        for (g, w) in got.iter().zip(want) {
            let q: RadarFrame = io::quantize(w);
            ensure!(
                g.frame_id == w.frame_id && same_points(&g.points, &q.points) && same_boxes(&g.boxes, &w.boxes),
                "dataset frame {} differs",
                w.frame_id
            );
        }
    }
    Ok(format!("{} frames, {points} points bit-exact through files and a dataset", frames.len()))
}

fn axes_are(spec: &GridSpec, want: [(f64, f64, f64); 3]) -> bool {
    spec.axes
        .iter()
        .zip(want)
        .all(|(a, (min, max, cell))| *a == AxisSpec { min, max, cell })
}

/// Grid, optimizer and augmentation values of the `paper-*` presets typed
/// in by hand, plus a textual diff of every preset against its committed
/// TOML file.
pub fn golden_configs() -> Check {
    let vod = ExperimentConfig::paper_vod();
    let astyx = ExperimentConfig::paper_astyx();
    let phi = PI / 1280.0;
    ensure!(
        axes_are(&vod.grid.bev, [(0.0, 51.2, 0.16), (-25.6, 25.6, 0.16), (-3.0, 2.0, 5.0)]),
        "VoD BEV grid {:?}",
        vod.grid.bev
    );
    ensure!(
        axes_are(&vod.grid.cyl, [(0.0, 72.4, 72.4), (0.0, PI, phi), (-3.0, 2.0, 0.05)]),
        "VoD cylinder grid {:?}",
        vod.grid.cyl
    );
    ensure!(
        axes_are(&astyx.grid.bev, [(0.0, 99.84, 0.16), (-39.68, 39.68, 0.16), (-3.0, 1.0, 4.0)]),
        "Astyx BEV grid {:?}",
        astyx.grid.bev
    );
    ensure!(
        axes_are(&astyx.grid.cyl, [(0.0, 100.6, 100.6), (0.0, PI, phi), (-3.0, 1.0, 0.04)]),
        "Astyx cylinder grid {:?}",
        astyx.grid.cyl
    );
    for c in [&vod, &astyx] {
        let o = &c.optim;
        ensure!(o.kind == OptimizerKind::Adam && o.lr == 0.003 && o.weight_decay == 0.01, "{}: optimizer {o:?}", c.name);
        ensure!(c.train.epochs == 80 && c.train.batch_size == 8, "{}: {} epochs, batch {}", c.name, c.train.epochs, c.train.batch_size);
        let a = &c.train.augment;
        ensure!(a.flip_probability == 0.5 && a.scale_min == 0.95 && a.scale_max == 1.05, "{}: augmentation {a:?}", c.name);
    }
    for name in ExperimentConfig::PRESETS {
        let cfg = ExperimentConfig::preset(name).expect("listed preset");
        let path = configs_dir().join(format!("{name}.toml"));
        let golden = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        let dumped = to_toml(&cfg).map_err(|e| e.to_string())?;
        if dumped != golden {
            let line = dumped
                .lines()
                .zip(golden.lines())
                .position(|(a, b)| a != b)
                .map_or_else(|| dumped.lines().count().min(golden.lines().count()), |i| i);
            return Err(format!("{name}: dump differs from {} at line {}", path.display(), line + 1));
        }
        ensure!(from_toml(&golden).map_err(|e| e.to_string())? == cfg, "{name}: golden file parses to a different config");
    }
    Ok(format!("{} presets match their golden files", ExperimentConfig::PRESETS.len()))
}
