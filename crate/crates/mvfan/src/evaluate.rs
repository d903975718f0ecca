//! Inference over a split and scoring of prediction sets.

use std::collections::BTreeSet;

use mvfan_core::config::ExperimentConfig;
use mvfan_core::geometry::IouMode;
use mvfan_core::head::Detection;
use mvfan_core::metrics::{self, EvalFrame, MetricsReport, RegionFilter};
use mvfan_core::model::{cap_points, Model};
use mvfan_core::nn::ParamStore;
use mvfan_core::RadarFrame;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::predictions::Predictions;

/// Regions reported for a config: all-area, plus the corridor when enabled.
pub fn regions(cfg: &ExperimentConfig) -> Vec<RegionFilter> {
    let mut r = vec![RegionFilter::all_area(&cfg.grid.bev)];
    if cfg.eval.corridor {
        r.push(RegionFilter::corridor());
    }
    r
}

pub const MODES: [IouMode; 2] = [IouMode::ThreeD, IouMode::Bev];

/// Point cap for inference, seeded by the frame id so a frame's result does
/// not depend on which other frames are evaluated with it.
pub fn cap_for_inference(frame: &RadarFrame, cap: usize) -> RadarFrame {
    let digest = Sha256::digest(frame.frame_id.as_bytes());
    let mut rng = ChaCha8Rng::from_seed(digest.into());
    cap_points(frame, cap, &mut rng)
}

/// Detections for every frame. Inference never augments.
pub fn infer(model: &Model, store: &ParamStore, frames: &[RadarFrame], cfg: &ExperimentConfig) -> Result<Predictions> {
    let mut out = Predictions::new();
    for f in frames {
        let f = cap_for_inference(f, model.config.point_cap);
        let prep = model.prepare(&f)?;
        out.insert(f.frame_id.clone(), model.predict(store, &prep, &cfg.eval.decode));
    }
    Ok(out)
}

/// Ground truth repackaged as score-1 detections.
pub fn oracle_predictions(frames: &[RadarFrame]) -> Predictions {
    frames
        .iter()
        .map(|f| {
            let dets = f.boxes.iter().map(|&box3d| Detection { box3d, score: 1.0 }).collect();
            (f.frame_id.clone(), dets)
        })
        .collect()
}

/// Scores predictions against ground truth. Every prediction frame must
/// exist in the ground truth and vice versa.
pub fn evaluate_dataset(preds: &Predictions, gts: &[RadarFrame], cfg: &ExperimentConfig) -> Result<MetricsReport> {
    let gt_ids: BTreeSet<&str> = gts.iter().map(|f| f.frame_id.as_str()).collect();
    if gt_ids.len() != gts.len() {
        return Err(Error::Validation("ground truth repeats a frame id".into()));
    }
    let pred_ids: BTreeSet<&str> = preds.keys().map(String::as_str).collect();
    let mut orphans: Vec<String> = pred_ids
        .difference(&gt_ids)
        .map(|id| format!("{id} (no ground truth)"))
        .collect();
    orphans.extend(gt_ids.difference(&pred_ids).map(|id| format!("{id} (no predictions)")));
    if !orphans.is_empty() {
        return Err(Error::Validation(format!("frame ids differ: {}", orphans.join(", "))));
    }
    let mut sorted: Vec<&RadarFrame> = gts.iter().collect();
    sorted.sort_by(|a, b| a.frame_id.cmp(&b.frame_id));
    let frames: Vec<EvalFrame> = sorted
        .into_iter()
        .map(|f| EvalFrame {
            frame_id: f.frame_id.clone(),
            detections: preds[&f.frame_id].clone(),
            gts: f.boxes.clone(),
        })
        .collect();
    Ok(metrics::evaluate(&frames, &cfg.eval.iou, &regions(cfg), &MODES))
}

pub fn report_json(report: &MetricsReport) -> Result<String> {
    serde_json::to_string_pretty(report).map_err(|e| Error::Validation(e.to_string()))
}

pub fn report_from_json(text: &str) -> Result<MetricsReport> {
    serde_json::from_str(text).map_err(|e| Error::Validation(e.to_string()))
}

/// One line per class, region and mode for the terminal.
pub fn report_table(report: &MetricsReport) -> String {
    let mut s = String::from("class       region      mode  AP      AOS     gts\n");
    for e in &report.entries {
        s.push_str(&format!(
            "{:<11} {:<11} {:<5} {:.4}  {:.4}  {}\n",
            e.class.name(),
            e.region,
            e.mode,
            e.result.ap,
            e.result.aos,
            e.result.num_gt
        ));
    }
    for m in &report.summaries {
        s.push_str(&format!("{:<11} {:<11} {:<5} {:.4}  {:.4}\n", "mean", m.region, m.mode, m.map, m.maos));
    }
    s
}
