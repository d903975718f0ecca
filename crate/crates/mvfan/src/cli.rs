//! Command line: `synth-gen`, `train`, `eval`, `infer`, `plot`, plus
//! `config` and `import-kitti`.
//!
//! Runs are written under `$MVFAN_OUTPUT_ROOT` (default `runs/`). Failures
//! print one JSON line `{"error":{"category":..,"message":..}}` to stderr and
//! exit with a category-specific code.

use std::cell::Cell;
use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use mvfan_core::config::ExperimentConfig;
use mvfan_core::synth::synth_dataset;
use mvfan_core::RadarFrame;

use crate::checkpoint;
use crate::config_file::{self, output_root};
use crate::dataset::{self, DatasetIndex};
use crate::error::{Error, Result};
use crate::evaluate;
use crate::io;
use crate::kitti::{self, Calibration, ClassMap, FieldMap};
use crate::plot;
use crate::predictions::{self, Predictions};
use crate::train;

/// Seed offset of the synthetic `val` split relative to `train`.
pub const SYNTH_VAL_OFFSET: u64 = 1 << 20;

#[derive(Debug, Parser)]
#[command(name = "mvfan", version, about = "Multi-view 4D radar object detector")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// Named preset: desk, paper-vod or paper-astyx.
    #[arg(long)]
    pub preset: Option<String>,
    /// TOML config file; takes precedence over --preset.
    #[arg(long, short = 'c')]
    pub config: Option<PathBuf>,
    /// Dotted-path override, e.g. `--set optim.lr=0.001`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        config_file::resolve(self.preset.as_deref(), self.config.as_deref(), &self.set)
    }

    /// A preset or file replaces `base`; bare overrides apply on top of it.
    fn resolve_over(&self, base: &ExperimentConfig) -> Result<ExperimentConfig> {
        if self.preset.is_some() || self.config.is_some() {
            self.resolve()
        } else {
            config_file::with_overrides(base, &self.set)
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Writes synthetic `train` and `val` splits as a dataset directory.
    SynthGen {
        #[arg(long)]
        out: PathBuf,
        /// Training scenes; defaults to `data.synth_scenes`.
        #[arg(long)]
        train: Option<usize>,
        #[arg(long, default_value_t = 0)]
        val: usize,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Trains and checkpoints after every epoch.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Run directory name under the output root; defaults to the config name.
        #[arg(long)]
        run: Option<String>,
        /// Continues from a checkpoint; its config is the base for overrides.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Scores a checkpoint on a split and writes predictions and a report.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to `data.eval_split`.
        #[arg(long)]
        split: Option<String>,
        /// Output directory; defaults to `<output root>/<name>/eval-<split>`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replaces predictions with the ground truth (debugging aid).
        #[arg(long)]
        force_gt: bool,
        /// Writes one BEV plot per frame.
        #[arg(long)]
        plot: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Detects objects in point files (or directories of them).
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Renders one frame, with its label sidecar if present.
    Plot {
        frame: PathBuf,
        /// Predictions file; the entry for the frame id is drawn.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Prints the resolved config as TOML.
    Config {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Converts KITTI-style records into a dataset split.
    ImportKitti {
        /// Directory of raw `.bin` point records.
        #[arg(long)]
        points: PathBuf,
        /// Directory of `<id>.txt` label files; frames without one get no boxes.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// A 4×4 camera-to-radar matrix file, or a directory of `<id>.txt` ones.
        #[arg(long)]
        calib: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "train")]
        split: String,
        /// `stride,x,y,z,rcs,v_r,v` column indices; defaults to the VoD layout.
        #[arg(long)]
        fields: Option<String>,
    },
}

/// The machine-readable failure line.
pub fn error_line(e: &Error) -> String {
    serde_json::json!({ "error": { "category": e.category(), "message": e.to_string() } }).to_string()
}

fn warn(msg: &str) {
    eprintln!("warning: {msg}");
}

fn has_root(cfg: &ExperimentConfig) -> Option<&str> {
    cfg.data.root.as_deref().filter(|r| !r.is_empty())
}

/// Frames of a split: from `data.root` when set, otherwise generated. The
/// generated source has `train` and `val`.
pub fn load_split(cfg: &ExperimentConfig, split: &str) -> Result<Vec<RadarFrame>> {
    if let Some(root) = has_root(cfg) {
        return DatasetIndex::open(Path::new(root))?.load_split(split);
    }
    let d = &cfg.data;
    let seed = match split {
        "train" => d.synth_seed,
        "val" => d.synth_seed.wrapping_add(SYNTH_VAL_OFFSET),
        _ => {
            return Err(Error::Split {
                requested: split.to_string(),
                available: vec!["train".into(), "val".into()],
            })
        }
    };
    Ok(synth_dataset(seed, d.synth_scenes, &d.synth)?)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthGen { out, train, val, cfg } => synth_gen(&out, train, val, &cfg.resolve()?),
        Command::Train { cfg, run, resume } => train_cmd(&cfg, run, resume.as_deref()).map(|_| ()),
        Command::Eval {
            checkpoint,
            split,
            out,
            force_gt,
            plot,
            cfg,
        } => eval_cmd(&checkpoint, split, out, force_gt, plot, &cfg),
        Command::Infer {
            checkpoint,
            out,
            inputs,
            cfg,
        } => infer_cmd(&checkpoint, &out, &inputs, &cfg),
        Command::Plot {
            frame,
            predictions,
            out,
            cfg,
        } => plot_cmd(&frame, predictions.as_deref(), &out, &cfg.resolve()?),
        Command::Config { cfg } => {
            print!("{}", config_file::to_toml(&cfg.resolve()?)?);
            Ok(())
        }
        Command::ImportKitti {
            points,
            labels,
            calib,
            out,
            split,
            fields,
        } => import_kitti(&points, labels.as_deref(), calib.as_deref(), &out, &split, fields.as_deref()),
    }
}

fn synth_gen(out: &Path, train: Option<usize>, val: usize, cfg: &ExperimentConfig) -> Result<()> {
    let d = &cfg.data;
    let mut splits = BTreeMap::new();
    splits.insert("train".to_string(), synth_dataset(d.synth_seed, train.unwrap_or(d.synth_scenes), &d.synth)?);
    if val > 0 {
        splits.insert(
            "val".to_string(),
            synth_dataset(d.synth_seed.wrapping_add(SYNTH_VAL_OFFSET), val, &d.synth)?,
        );
    }
    dataset::write_dataset(out, &splits)?;
    let n: usize = splits.values().map(Vec::len).sum();
    eprintln!("wrote {n} frames to {}", out.display());
    Ok(())
}

/// Trains a run; returns the run directory.
pub fn train_cmd(args: &ConfigArgs, run: Option<String>, resume: Option<&Path>) -> Result<PathBuf> {
    let (cfg, model, mut state) = match resume {
        Some(path) => {
            let loaded = checkpoint::load(path, None)?;
            let cfg = args.resolve_over(&loaded.header.config)?;
            if loaded.hash_mismatch || config_file::config_hash(&cfg)? != loaded.header.config_hash {
                warn(&format!("config differs from the one stored in {}", path.display()));
            }
            if cfg.model != loaded.header.config.model || cfg.train.seed != loaded.header.config.train.seed {
                return Err(Error::Config("model settings and seed cannot change on resume".into()));
            }
            (cfg, loaded.model, loaded.state)
        }
        None => {
            let cfg = args.resolve()?;
            let (model, state) = train::init(&cfg)?;
            (cfg, model, state)
        }
    };
    let frames = load_split(&cfg, &cfg.data.train_split)?;
    if cfg.train.epochs > 0 && frames.is_empty() {
        return Err(Error::Validation(format!("split `{}` has no frames", cfg.data.train_split)));
    }
    let dir = output_root().join(run.unwrap_or_else(|| cfg.name.clone()));
    let ck_dir = dir.join("checkpoints");
    fs::create_dir_all(&ck_dir).map_err(|e| Error::io(&ck_dir, e))?;
    write_text(&dir.join("config.toml"), &config_file::to_toml(&cfg)?)?;
    let log_path = dir.join("log.jsonl");
    let log_file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let mut log = BufWriter::new(log_file);
    let mut write_err = None;
    let sum = Cell::new((0.0, 0usize));
    let result = train::train_until(
        &model,
        &cfg,
        &frames,
        &mut state,
        cfg.train.epochs,
        |s| {
            let (t, n) = sum.get();
            sum.set((t + s.loss.total, n + 1));
            let line = serde_json::to_string(s).expect("step log serializes");
            if let Err(e) = writeln!(log, "{line}") {
                write_err.get_or_insert(e);
            }
        },
        |st| {
            let p = ck_dir.join(format!("epoch-{:04}.ckpt", st.epoch));
            checkpoint::save(&p, &cfg, st)?;
            let (t, n) = sum.replace((0.0, 0));
            eprintln!("epoch {} mean loss {:.4}", st.epoch, t / n.max(1) as f64);
            Ok(())
        },
    );
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    if let Some(e) = write_err {
        return Err(Error::io(&log_path, e));
    }
    result?;
    checkpoint::save(&dir.join("last.ckpt"), &cfg, &state)?;
    eprintln!("run written to {}", dir.display());
    Ok(dir)
}

/// Checkpointed model plus the config to run it with; a mismatching hash is
/// only a warning.
fn load_for_inference(
    path: &Path,
    args: &ConfigArgs,
) -> Result<(ExperimentConfig, mvfan_core::model::Model, mvfan_core::nn::ParamStore)> {
    let loaded = checkpoint::load(path, None)?;
    let cfg = args.resolve_over(&loaded.header.config)?;
    if loaded.hash_mismatch || config_file::config_hash(&cfg)? != loaded.header.config_hash {
        warn(&format!(
            "config hash differs from {}; using its model with the given data and eval settings",
            path.display()
        ));
    }
    Ok((cfg, loaded.model, loaded.state.store))
}

fn eval_cmd(
    ck: &Path,
    split: Option<String>,
    out: Option<PathBuf>,
    force_gt: bool,
    plot: bool,
    args: &ConfigArgs,
) -> Result<()> {
    let (cfg, model, store) = load_for_inference(ck, args)?;
    let split = split.unwrap_or_else(|| cfg.data.eval_split.clone());
    let frames = load_split(&cfg, &split)?;
    let preds = if force_gt {
        evaluate::oracle_predictions(&frames)
    } else {
        evaluate::infer(&model, &store, &frames, &cfg)?
    };
    let report = evaluate::evaluate_dataset(&preds, &frames, &cfg)?;
    let out = out.unwrap_or_else(|| output_root().join(&cfg.name).join(format!("eval-{split}")));
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    predictions::write_predictions(&out.join("predictions.txt"), &preds)?;
    write_text(&out.join("report.json"), &evaluate::report_json(&report)?)?;
    if plot {
        for f in &frames {
            let svg = plot::bev_svg(f, &preds[&f.frame_id], &cfg.grid.bev);
            write_text(&out.join("plots").join(format!("{}.svg", f.frame_id)), &svg)?;
        }
    }
    print!("{}", evaluate::report_table(&report));
    eprintln!("results written to {}", out.display());
    Ok(())
}

/// Point files named directly or found (non-recursively) in directories,
/// in path order.
fn point_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| Error::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|q| q.extension().is_some_and(|x| x == io::POINT_EXT))
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn stem(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_string)
        .ok_or_else(|| Error::Validation(format!("{}: no usable file stem", path.display())))
}

fn infer_cmd(ck: &Path, out: &Path, inputs: &[PathBuf], args: &ConfigArgs) -> Result<()> {
    let (cfg, model, store) = load_for_inference(ck, args)?;
    let frames = point_files(inputs)?
        .iter()
        .map(|p| Ok(RadarFrame::new(stem(p)?, io::read_points(p)?, Vec::new())))
        .collect::<Result<Vec<_>>>()?;
    let preds = evaluate::infer(&model, &store, &frames, &cfg)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    predictions::write_predictions(out, &preds)?;
    let n: usize = preds.values().map(Vec::len).sum();
    eprintln!("{n} detections in {} frames written to {}", preds.len(), out.display());
    Ok(())
}

fn plot_cmd(frame: &Path, preds: Option<&Path>, out: &Path, cfg: &ExperimentConfig) -> Result<()> {
    let labels = io::sidecar_label(frame);
    let f = if labels.exists() {
        io::load_frame(frame)?
    } else {
        RadarFrame::new(stem(frame)?, io::read_points(frame)?, Vec::new())
    };
    let dets = match preds {
        Some(p) => {
            let mut all: Predictions = predictions::read_predictions(p)?;
            all.remove(&f.frame_id).unwrap_or_default()
        }
        None => Vec::new(),
    };
    write_text(out, &plot::bev_svg(&f, &dets, &cfg.grid.bev))
}

fn parse_fields(spec: &str) -> Result<FieldMap> {
    let v: Vec<usize> = spec
        .split(',')
        .map(|s| s.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("bad field map `{spec}`")))?;
    let [stride, x, y, z, rcs, v_r, v] = v[..] else {
        return Err(Error::Config(format!("field map `{spec}` needs 7 indices")));
    };
    let m = FieldMap {
        stride,
        x,
        y,
        z,
        rcs,
        v_r,
        v,
    };
    m.validate()?;
    Ok(m)
}

fn import_kitti(
    points: &Path,
    labels: Option<&Path>,
    calib: Option<&Path>,
    out: &Path,
    split: &str,
    fields: Option<&str>,
) -> Result<()> {
    let map = fields.map_or_else(|| Ok(FieldMap::vod()), parse_fields)?;
    let classes = ClassMap::default();
    let shared = match calib {
        Some(c) if c.is_file() => Some(Calibration::read(c)?),
        None => Some(Calibration::identity()),
        Some(_) => None,
    };
    let mut files: Vec<PathBuf> = fs::read_dir(points)
        .map_err(|e| Error::io(points, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "bin"))
        .collect();
    files.sort();
    let mut frames = Vec::with_capacity(files.len());
    for p in &files {
        let id = stem(p)?;
        let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
        let pts = kitti::convert_points(&bytes, p, &map)?;
        let cal = match (&shared, calib) {
            (Some(c), _) => *c,
            (None, Some(dir)) => Calibration::read(&dir.join(format!("{id}.txt")))?,
            (None, None) => unreachable!("no calibration source"),
        };
        let boxes = match labels.map(|d| d.join(format!("{id}.txt"))) {
            Some(lp) if lp.exists() => {
                let text = fs::read_to_string(&lp).map_err(|e| Error::io(&lp, e))?;
                kitti::convert_labels(&text, &lp, &cal, &classes)?
            }
            _ => Vec::new(),
        };
        frames.push(RadarFrame::new(id, pts, boxes));
    }
    dataset::add_split(out, split, &frames)?;
    eprintln!("imported {} frames into split `{split}` of {}", frames.len(), out.display());
    Ok(())
}

/// Entry point shared by the binary: parses arguments, runs, and maps
/// errors to exit codes.
pub fn main_with(args: impl IntoIterator<Item = std::ffi::OsString>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            e.exit_code()
        }
    }
}

