//! Detection evaluation: class-thresholded AP with 40-point interpolation,
//! orientation similarity and region filters.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::geometry::{rotated_iou, Box3D, ClassId, IouMode};
use crate::head::Detection;
#[allow(unused_imports)]
use crate::math::Float;
use crate::projection::GridSpec;

/// Number of recall positions used for interpolated precision.
pub const RECALL_POINTS: usize = 40;

/// Open axis-aligned rectangle on box centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionFilter {
    pub name: String,
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl RegionFilter {
    /// Whole detection range of a BEV grid.
    pub fn all_area(bev: &GridSpec) -> Self {
        RegionFilter {
            name: "all".into(),
            x_min: bev.axes[0].min,
            x_max: bev.axes[0].max,
            y_min: bev.axes[1].min,
            y_max: bev.axes[1].max,
        }
    }

    /// `0 < x < 25`, `-4 < y < 4`.
    pub fn corridor() -> Self {
        RegionFilter {
            name: "corridor".into(),
            x_min: 0.0,
            x_max: 25.0,
            y_min: -4.0,
            y_max: 4.0,
        }
    }

    pub fn contains(&self, b: &Box3D) -> bool {
        b.cx > self.x_min && b.cx < self.x_max && b.cy > self.y_min && b.cy < self.y_max
    }
}

/// Detections and ground truth of one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalFrame {
    pub frame_id: String,
    pub detections: Vec<Detection>,
    pub gts: Vec<Box3D>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrSample {
    pub recall: f64,
    pub precision: f64,
    /// Orientation-weighted precision.
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApResult {
    pub ap: f64,
    pub aos: f64,
    pub num_gt: usize,
    pub num_det: usize,
    /// Interpolated values at recall `1/40, 2/40, ..., 1`.
    pub curve: Vec<PrSample>,
}

/// `(1 + cos Δ) / 2`.
pub fn orientation_similarity(a: f64, b: f64) -> f64 {
    0.5 * (1.0 + (a - b).cos())
}

/// AP and AOS for one class. Returns `None` when the class has no ground
/// truth inside the region.
pub fn average_precision(frames: &[EvalFrame], class: ClassId, iou_thr: f64, mode: IouMode, region: &RegionFilter) -> Option<ApResult> {
    // (score, frame order, is_tp, similarity)
    let mut scored: Vec<(f64, usize, bool, f64)> = Vec::new();
    let mut num_gt = 0;
    for (fi, f) in frames.iter().enumerate() {
        let gts: Vec<&Box3D> = f.gts.iter().filter(|b| b.class_id == class && region.contains(b)).collect();
        num_gt += gts.len();
        let mut dets: Vec<&Detection> = f
            .detections
            .iter()
            .filter(|d| d.box3d.class_id == class && region.contains(&d.box3d))
            .collect();
        dets.sort_by(|a, b| b.score.total_cmp(&a.score));
        let mut used = alloc::vec![false; gts.len()];
        for d in dets {
            let mut best: Option<(f64, usize)> = None;
            for (gi, g) in gts.iter().enumerate() {
                if used[gi] {
                    continue;
                }
                let iou = rotated_iou(&d.box3d, g, mode);
                if iou >= iou_thr && best.is_none_or(|(b, _)| iou > b) {
                    best = Some((iou, gi));
                }
            }
            match best {
                Some((_, gi)) => {
                    used[gi] = true;
                    scored.push((d.score, fi, true, orientation_similarity(d.box3d.yaw, gts[gi].yaw)));
                }
                None => scored.push((d.score, fi, false, 0.0)),
            }
        }
    }
    if num_gt == 0 {
        return None;
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut recall = Vec::with_capacity(scored.len());
    let mut precision = Vec::with_capacity(scored.len());
    let mut similarity = Vec::with_capacity(scored.len());
    let (mut tp, mut sim) = (0usize, 0.0);
    for (k, s) in scored.iter().enumerate() {
        if s.2 {
            tp += 1;
            sim += s.3;
        }
        let n = (k + 1) as f64;
        recall.push(tp as f64 / num_gt as f64);
        precision.push(tp as f64 / n);
        similarity.push(sim / n);
    }
    // Suffix maxima give the interpolated curves.
    for i in (0..scored.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
        similarity[i] = similarity[i].max(similarity[i + 1]);
    }
    let mut curve = Vec::with_capacity(RECALL_POINTS);
    let mut j = 0;
    for r in 1..=RECALL_POINTS {
        let target = r as f64 / RECALL_POINTS as f64;
        while j < recall.len() && recall[j] < target - 1e-12 {
            j += 1;
        }
        let (p, s) = if j < recall.len() { (precision[j], similarity[j]) } else { (0.0, 0.0) };
        curve.push(PrSample {
            recall: target,
            precision: p,
            similarity: s,
        });
    }
    let ap = curve.iter().map(|c| c.precision).sum::<f64>() / RECALL_POINTS as f64;
    let aos = curve.iter().map(|c| c.similarity).sum::<f64>() / RECALL_POINTS as f64;
    Some(ApResult {
        ap,
        aos,
        num_gt,
        num_det: scored.len(),
        curve,
    })
}

/// Per-class matching thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassThresholds {
    pub car: f64,
    pub pedestrian: f64,
    pub cyclist: f64,
}

impl ClassThresholds {
    /// Car 0.5, pedestrian and cyclist 0.25.
    pub fn standard() -> Self {
        ClassThresholds {
            car: 0.5,
            pedestrian: 0.25,
            cyclist: 0.25,
        }
    }

    pub fn uniform(t: f64) -> Self {
        ClassThresholds {
            car: t,
            pedestrian: t,
            cyclist: t,
        }
    }

    pub fn get(&self, c: ClassId) -> f64 {
        match c {
            ClassId::Car => self.car,
            ClassId::Pedestrian => self.pedestrian,
            ClassId::Cyclist => self.cyclist,
        }
    }
}

fn mode_name(m: IouMode) -> &'static str {
    match m {
        IouMode::Bev => "bev",
        IouMode::ThreeD => "3d",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricEntry {
    pub class: ClassId,
    pub region: String,
    /// `3d` or `bev`.
    pub mode: String,
    pub iou_threshold: f64,
    pub result: ApResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub region: String,
    pub mode: String,
    pub map: f64,
    pub maos: f64,
    /// Classes that entered the means.
    pub classes: Vec<ClassId>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub entries: Vec<MetricEntry>,
    pub summaries: Vec<Summary>,
}

impl MetricsReport {
    pub fn summary(&self, region: &str, mode: IouMode) -> Option<&Summary> {
        self.summaries.iter().find(|s| s.region == region && s.mode == mode_name(mode))
    }

    pub fn entry(&self, class: ClassId, region: &str, mode: IouMode) -> Option<&MetricEntry> {
        self.entries
            .iter()
            .find(|e| e.class == class && e.region == region && e.mode == mode_name(mode))
    }

    /// mAP in a region and mode; zero when no class has ground truth.
    pub fn map(&self, region: &str, mode: IouMode) -> f64 {
        self.summary(region, mode).map_or(0.0, |s| s.map)
    }
}

/// Evaluates every class in every region and IoU mode. Classes without
/// ground truth are left out of the means.
pub fn evaluate(frames: &[EvalFrame], thresholds: &ClassThresholds, regions: &[RegionFilter], modes: &[IouMode]) -> MetricsReport {
    let mut report = MetricsReport::default();
    for region in regions {
        for &mode in modes {
            let mut classes = Vec::new();
            let (mut ap, mut aos) = (0.0, 0.0);
            for class in ClassId::ALL {
                let thr = thresholds.get(class);
                if let Some(r) = average_precision(frames, class, thr, mode, region) {
                    ap += r.ap;
                    aos += r.aos;
                    classes.push(class);
                    report.entries.push(MetricEntry {
                        class,
                        region: region.name.clone(),
                        mode: mode_name(mode).into(),
                        iou_threshold: thr,
                        result: r,
                    });
                }
            }
            let n = classes.len().max(1) as f64;
            report.summaries.push(Summary {
                region: region.name.clone(),
                mode: mode_name(mode).into(),
                map: ap / n,
                maos: aos / n,
                classes,
            });
        }
    }
    report
}
