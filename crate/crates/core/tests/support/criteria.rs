//! Checks shared by the integration tests and the acceptance runner. Each
//! returns a one-line summary on success and the first violation on
//! failure.

use std::f64::consts::PI;

use mvfan_core::config::{ExperimentConfig, LossConfig, LossWeights};
use mvfan_core::geometry::{rotated_iou, IouMode};
use mvfan_core::head::{
    build_anchors, decode_deltas, encode_deltas, detection_losses, AnchorClass, AnchorLabel, Assignment, Detection, HeadOutput,
};
use mvfan_core::losses::{Focal, SMOOTH_L1_BETA};
use mvfan_core::metrics::{average_precision, evaluate, ClassThresholds, EvalFrame, RegionFilter};
use mvfan_core::model::Model;
use mvfan_core::mvfe::{aux_loss, foreground_labels, AuxLossForm};
use mvfan_core::nn::{Graph, ParamStore};
use mvfan_core::pointops::{fps, knn_centers};
use mvfan_core::projection::{build_pillar_mapping, cartesian_to_cylinder, gather_point_features, AxisSpec, GridSpec, View};
use mvfan_core::sparse::{to_dense, CellSet};
use mvfan_core::synth::{synth_dataset, SynthConfig};
use mvfan_core::{Box3D, ClassId, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracles;

pub type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)*) => {
        if !$cond {
            return Err(format!($($fmt)*));
        }
    };
}

pub const TRIALS: usize = 200;
pub const MAX_POINTS: usize = 64;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Integer-grid coordinates, so distances are exact and ties are
/// reproducible.
pub fn grid_points(r: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| {
            [
                r.random_range(-8..=8) as f64,
                r.random_range(-8..=8) as f64,
                r.random_range(-3..=3) as f64,
            ]
        })
        .collect()
}

pub fn random_box(r: &mut ChaCha8Rng, spread: f64) -> Box3D {
    Box3D::new(
        r.random_range(-spread..spread),
        r.random_range(-spread..spread),
        r.random_range(-0.5..0.5),
        r.random_range(0.3..4.5),
        r.random_range(0.3..2.5),
        r.random_range(0.4..2.0),
        r.random_range(-PI..PI),
        ClassId::Car,
    )
    .unwrap()
}

fn small_bev() -> GridSpec {
    GridSpec {
        view: View::Bev,
        axes: [AxisSpec::new(-4.0, 6.0, 1.0), AxisSpec::new(-5.0, 5.0, 2.0), AxisSpec::new(-3.0, 3.0, 6.0)],
    }
}

/// Library scatter (segment max into the pseudo-image) and gather against
/// the explicit loop; both must agree bit for bit.
pub fn scatter_gather_matches(points: &[[f64; 3]], spec: &GridSpec, features: &Matrix) -> Result<(), String> {
    let mapping = build_pillar_mapping(points, spec);
    let want_cells = oracles::cells_of(&mapping);
    let (h, w) = spec.image_dims();
    for (n, want) in want_cells.iter().enumerate() {
        let got = mapping.point_to_pillar[n].map(|p| mapping.cells.cells()[p] as usize);
        ensure!(got == *want, "point {n} {:?}: cell {got:?}, oracle {want:?}", points[n]);
    }
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let x = g.constant(features.clone());
    let pf = g.tape.segment_max(x, &mapping.pillar_to_points);
    let pillars = g.value(pf).clone();
    let c = features.cols();
    let dense = to_dense(&mapping.cells, &pillars);
    let (image, back) = oracles::scatter_gather(features, &want_cells, h * w);
    for (cell, row) in image.iter().enumerate() {
        for (ch, v) in row.iter().enumerate() {
            ensure!(dense[ch * h * w + cell] == *v, "cell {cell} channel {ch}: {} vs oracle {v}", dense[ch * h * w + cell]);
        }
    }
    let got = gather_point_features(&dense, c, &mapping).map_err(|e| e.to_string())?;
    ensure!(got == back, "gathered point features differ from the oracle");
    Ok(())
}

/// FPS, kNN centers, point-in-box labeling, scatter/gather and rotated IoU
/// against the brute-force oracles.
pub fn oracle_equivalence() -> Check {
    let grids = [small_bev(), GridSpec::vod(View::Bev), GridSpec::vod(View::Cyl)];
    let mut worst_iou = 0.0f64;
    for t in 0..TRIALS {
        let mut r = rng(1000 + t as u64);
        let n = r.random_range(1..=MAX_POINTS);
        let pts = grid_points(&mut r, n);

        let k = r.random_range(1..=n + 2);
        let got = knn_centers(&pts, k).map_err(|e| e.to_string())?;
        ensure!(got == oracles::knn_centers(&pts, k), "trial {t}: kNN centers differ (N={n}, k={k})");

        let m = r.random_range(1..=n);
        let seed = r.random_range(0..n);
        let got = fps(&pts, m, seed).map_err(|e| e.to_string())?;
        ensure!(got == oracles::fps(&pts, m, seed), "trial {t}: FPS order differs (N={n}, m={m})");

        let boxes: Vec<Box3D> = (0..r.random_range(0..4)).map(|_| random_box(&mut r, 5.0)).collect();
        let labels = foreground_labels(&pts, &boxes);
        for (i, &p) in pts.iter().enumerate() {
            let want = u8::from(boxes.iter().any(|b| oracles::point_in_box(b, p)));
            ensure!(labels[i] == want, "trial {t}: point {i} labeled {} (oracle {want})", labels[i]);
        }

        let feats = {
            let mut f = Matrix::zeros(n, 4);
            for v in f.as_mut_slice() {
                *v = r.random_range(-2.0..2.0);
            }
            f
        };
        let scale = [1.0, 3.0, 1.0][t % 3];
        let scaled: Vec<[f64; 3]> = pts.iter().map(|p| p.map(|v| v * scale)).collect();
        scatter_gather_matches(&scaled, &grids[t % 3], &feats).map_err(|e| format!("trial {t}: {e}"))?;

        let (a, b) = (random_box(&mut r, 2.0), random_box(&mut r, 2.0));
        for (mode, want) in [(IouMode::Bev, oracles::iou_bev(&a, &b)), (IouMode::ThreeD, oracles::iou_3d(&a, &b))] {
            let got = rotated_iou(&a, &b, mode);
            worst_iou = worst_iou.max((got - want).abs());
        }
    }
    ensure!(worst_iou <= 1e-9, "rotated IoU deviates from the hull oracle by {worst_iou:.2e}");
    Ok(format!("{TRIALS} trials, N <= {MAX_POINTS}, discrete outputs exact, worst IoU deviation {worst_iou:.1e}"))
}

/// Direct evaluation of a focal term from a probability.
fn focal_direct(p: f64, positive: bool, alpha: f64, gamma: f64) -> f64 {
    let p = p.clamp(1e-7, 1.0 - 1e-7);
    if positive {
        -alpha * (1.0 - p).powf(gamma) * p.ln()
    } else {
        -(1.0 - alpha) * p.powf(gamma) * (1.0 - p).ln()
    }
}

fn smooth_l1_direct(x: f64) -> f64 {
    let beta = 1.0 / 9.0;
    if x.abs() < beta {
        x * x / (2.0 * beta)
    } else {
        x.abs() - beta / 2.0
    }
}

fn close(a: f64, b: f64, what: &str) -> Result<(), String> {
    ensure!((a - b).abs() <= 1e-9, "{what}: {a} vs expected {b}");
    Ok(())
}

/// Auxiliary focal loss, localization, direction and classification terms
/// and the weighted total against direct evaluation.
pub fn loss_algebra() -> Check {
    let ln2 = 2f64.ln();
    let single = Matrix::from_rows(&[&[0.5, 0.5]]);
    let focal_example = aux_loss(&single, &[1], AuxLossForm::AsPrinted).unwrap().0;
    close(focal_example, 0.25 * 0.25 * ln2, "single foreground point")?;
    // The quoted 0.043321 is the value truncated to six decimals.
    ensure!((focal_example * 1e6).floor() == 43_321.0, "single foreground point gives {focal_example}, not 0.043321...");
    let half = Matrix::filled(5, 2, 0.5);
    for form in [AuxLossForm::AsPrinted, AuxLossForm::ForegroundColumn] {
        close(aux_loss(&half, &[0; 5], form).unwrap().0, 0.75 * 0.25 * ln2, "all-background constant 0.5")?;
    }
    let mut r = rng(77);
    for trial in 0..20 {
        let n = r.random_range(1..12);
        let mut a = Matrix::zeros(n, 2);
        for v in a.as_mut_slice() {
            *v = r.random_range(0.0..1.0);
        }
        let labels: Vec<u8> = (0..n).map(|_| r.random_range(0..2)).collect();
        for form in [AuxLossForm::AsPrinted, AuxLossForm::ForegroundColumn] {
            let bg_col = if form == AuxLossForm::AsPrinted { 0 } else { 1 };
            let want: f64 = (0..n)
                .map(|i| {
                    if labels[i] == 1 {
                        focal_direct(a[(i, 1)], true, 0.25, 2.0)
                    } else {
                        focal_direct(a[(i, bg_col)], false, 0.25, 2.0)
                    }
                })
                .sum::<f64>()
                / n as f64;
            close(aux_loss(&a, &labels, form).unwrap().0, want, &format!("aux loss trial {trial}"))?;
        }
    }

    // One car anchor per head cell on a 2×2 head grid; anchor 0 is positive.
    let bev = GridSpec {
        view: View::Bev,
        axes: [AxisSpec::new(0.0, 8.0, 2.0), AxisSpec::new(0.0, 8.0, 2.0), AxisSpec::new(-3.0, 1.0, 4.0)],
    };
    let car = AnchorClass::defaults()[0];
    let anchors = build_anchors(&bev, 2, &[car], &[0.0]).unwrap();
    let anchor = anchors.anchor(0);
    let gt = Box3D { cx: anchor.cx + 0.3, cy: anchor.cy - 0.05, yaw: 0.4, w: 1.7, ..anchor };
    let t = encode_deltas(&gt, &anchor);
    let (x0, bias) = (0.8, -1.3);
    let reg = [t[0] + 0.5, t[1] - 0.02, t[2], t[3] + 0.1, t[4] - 0.3, t[5] + 0.01, t[6] + PI / 2.0];
    let out = HeadOutput {
        cells: CellSet::new(anchors.height, anchors.width, vec![0]),
        cls: Matrix::from_rows(&[&[x0]]),
        reg: Matrix::from_rows(&[&reg]),
        cls_bias: vec![bias],
        reg_bias: vec![0.0; 7],
    };
    let assign = Assignment { entries: vec![(0, AnchorLabel::Positive(0))] };
    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
    let hl = detection_losses(&anchors, &out, &assign, &[gt], &Focal::default(), SMOOTH_L1_BETA).unwrap();
    let want_cls = focal_direct(sig(x0), true, 0.25, 2.0) + 3.0 * focal_direct(sig(bias), false, 0.25, 2.0);
    let want_loc: f64 = (0..6).map(|k| smooth_l1_direct(reg[k] - t[k])).sum();
    close(hl.cls, want_cls, "classification loss")?;
    close(hl.loc, want_loc, "localization loss")?;
    close(hl.dir, 1.0 - 1.0 / 18.0, "direction loss with a quarter-turn residual")?;

    let w = LossWeights::default();
    ensure!((w.cls, w.aux, w.loc, w.dir) == (1.0, 1.0, 2.0, 0.2), "default loss weights are {w:?}");
    for name in ExperimentConfig::PRESETS {
        let cfg = ExperimentConfig::preset(name).unwrap();
        ensure!(cfg.loss.weights == w, "preset {name} carries loss weights {:?}", cfg.loss.weights);
    }

    // The total is the weighted sum: only the localization share moves
    // when its weight does.
    let mut cfg = ExperimentConfig::desk();
    cfg.data.synth_scenes = 1;
    let frame = synth_dataset(3, 1, &SynthConfig::default()).unwrap().remove(0);
    let (model, store) = Model::new(&cfg, &mut rng(5)).unwrap();
    let prep = model.prepare(&frame).unwrap();
    let base = model.loss(&store, &prep, &LossConfig::default()).unwrap();
    let sum = base.cls + base.aux + 2.0 * base.loc + 0.2 * base.dir;
    close(base.total, sum, "weighted total")?;
    let mut scaled = LossConfig::default();
    scaled.weights.loc *= 3.5;
    let moved = model.loss(&store, &prep, &scaled).unwrap();
    ensure!(moved.cls == base.cls && moved.aux == base.aux && moved.loc == base.loc && moved.dir == base.dir, "components changed with the weight");
    ensure!(
        (moved.total - base.total - 2.5 * 2.0 * base.loc).abs() <= 1e-9 * base.total.abs().max(1.0),
        "scaling the localization weight moved the total by {} instead of {}",
        moved.total - base.total,
        5.0 * base.loc
    );
    Ok(format!("focal example {focal_example:.6}, hand-built head losses and weighted total within 1e-9, weights (1, 1, 2, 0.2)"))
}

/// Pillar membership, the cylinder transform and box deltas.
pub fn geometric_round_trips() -> Check {
    let mut worst_cyl = 0.0f64;
    let mut worst_delta = 0.0f64;
    let mut kept = 0usize;
    for t in 0..TRIALS {
        let mut r = rng(5000 + t as u64);
        let pts: Vec<[f64; 3]> = (0..64)
            .map(|_| [r.random_range(-60.0..60.0), r.random_range(-30.0..30.0), r.random_range(-4.0..3.0)])
            .collect();
        for spec in [GridSpec::vod(View::Bev), GridSpec::vod(View::Cyl), GridSpec::astyx(View::Bev), GridSpec::astyx(View::Cyl)] {
            let m = build_pillar_mapping(&pts, &spec);
            let (ra, ca) = spec.image_axes();
            for (n, p) in m.point_to_pillar.iter().enumerate() {
                let vc = m.view_coords[n];
                let inside = (0..3).all(|a| vc[a] >= spec.axes[a].min && vc[a] < spec.axes[a].max);
                match p {
                    None => ensure!(!inside, "trial {t}: in-range point {n} was dropped"),
                    Some(p) => {
                        kept += 1;
                        ensure!(m.pillar_to_points[*p].contains(&(n as u32)), "trial {t}: pillar {p} misses point {n}");
                        let (row, col) = m.cells.row_col(*p);
                        for (axis, idx) in [(ra, row), (ca, col)] {
                            let ax = spec.axes[axis];
                            let lo = ax.min + idx as f64 * ax.cell;
                            ensure!(vc[axis] >= lo - 1e-9 && vc[axis] < lo + ax.cell + 1e-9, "trial {t}: point {n} outside its cell on axis {axis}");
                        }
                    }
                }
            }
            for (p, members) in m.pillar_to_points.iter().enumerate() {
                for &n in members {
                    ensure!(m.point_to_pillar[n as usize] == Some(p), "trial {t}: pillar {p} lists foreign point {n}");
                }
            }
        }
        for &p in &pts {
            let [rho, phi, z] = cartesian_to_cylinder(p);
            let back = [rho * phi.cos(), rho * phi.sin(), z];
            for a in 0..3 {
                worst_cyl = worst_cyl.max((back[a] - p[a]).abs());
            }
        }
        let anchor = random_box(&mut r, 20.0);
        let gt = random_box(&mut r, 20.0);
        let d = decode_deltas(&encode_deltas(&gt, &anchor), &anchor);
        for (x, y) in [(d.cx, gt.cx), (d.cy, gt.cy), (d.cz, gt.cz), (d.l, gt.l), (d.w, gt.w), (d.h, gt.h)] {
            worst_delta = worst_delta.max((x - y).abs());
        }
        worst_delta = worst_delta.max((d.yaw - gt.yaw).sin().abs());
    }
    ensure!(worst_cyl <= 1e-9, "cylinder round trip error {worst_cyl:.2e}");
    ensure!(worst_delta <= 1e-9, "box delta round trip error {worst_delta:.2e}");
    Ok(format!("{kept} kept points in their pillars, cylinder error {worst_cyl:.1e}, delta error {worst_delta:.1e}"))
}

fn det(b: Box3D, score: f64) -> Detection {
    Detection { box3d: b, score }
}

/// Perfect predictions, the analytic IoU case, AOS against AP and the
/// corridor filter.
pub fn protocol_fidelity() -> Check {
    let frames = synth_dataset(11, 12, &SynthConfig::default()).unwrap();
    let bev = GridSpec::vod(View::Bev);
    let regions = [RegionFilter::all_area(&bev), RegionFilter::corridor()];
    let modes = [IouMode::ThreeD, IouMode::Bev];
    let perfect: Vec<EvalFrame> = frames
        .iter()
        .map(|f| EvalFrame {
            frame_id: f.frame_id.clone(),
            detections: f.boxes.iter().map(|b| det(*b, 1.0)).collect(),
            gts: f.boxes.clone(),
        })
        .collect();
    let report = evaluate(&perfect, &ClassThresholds::standard(), &regions, &modes);
    ensure!(!report.entries.is_empty(), "no ground truth in the synthetic frames");
    for e in &report.entries {
        ensure!(e.result.ap == 1.0 && e.result.aos == 1.0, "{} {} {}: AP {} AOS {} on perfect predictions", e.class, e.region, e.mode, e.result.ap, e.result.aos);
    }

    let sq = |x: f64| Box3D::new(x, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, ClassId::Car).unwrap();
    close(rotated_iou(&sq(0.0), &sq(0.5), IouMode::Bev), 1.0 / 3.0, "offset unit squares")?;
    close(rotated_iou(&sq(0.0), &sq(0.5), IouMode::ThreeD), 1.0 / 3.0, "offset unit cubes")?;

    let mut runs = 0usize;
    for run in 0..50u64 {
        let mut r = rng(9000 + run);
        let noisy: Vec<EvalFrame> = frames
            .iter()
            .map(|f| {
                let mut dets = Vec::new();
                for b in &f.boxes {
                    if r.random_bool(0.8) {
                        let jitter = Box3D {
                            cx: b.cx + r.random_range(-0.4..0.4),
                            cy: b.cy + r.random_range(-0.4..0.4),
                            yaw: b.yaw + r.random_range(-PI..PI),
                            ..*b
                        };
                        dets.push(det(jitter, r.random_range(0.0..1.0)));
                    }
                }
                for _ in 0..r.random_range(0..4) {
                    let mut b = *f.boxes.first().unwrap_or(&sq(10.0));
                    b.cx = r.random_range(0.0..50.0);
                    b.cy = r.random_range(-25.0..25.0);
                    dets.push(det(b, r.random_range(0.0..1.0)));
                }
                EvalFrame {
                    frame_id: f.frame_id.clone(),
                    detections: dets,
                    gts: f.boxes.clone(),
                }
            })
            .collect();
        let rep = evaluate(&noisy, &ClassThresholds::standard(), &regions, &modes);
        for e in &rep.entries {
            runs += 1;
            ensure!(e.result.aos <= e.result.ap + 1e-12, "run {run}: AOS {} exceeds AP {}", e.result.aos, e.result.ap);
            ensure!((0.0..=1.0).contains(&e.result.ap), "run {run}: AP {} out of range", e.result.ap);
        }
        for s in &rep.summaries {
            ensure!(s.maos <= s.map + 1e-12, "run {run}: mAOS {} exceeds mAP {}", s.maos, s.map);
        }
    }

    // Corridor: open bounds on the box center, and filtering before
    // matching equals evaluating the pre-filtered frame.
    let corridor = RegionFilter::corridor();
    let on = |x: f64, y: f64| corridor.contains(&Box3D::new(x, y, 0.0, 1.0, 1.0, 1.0, 0.0, ClassId::Car).unwrap());
    ensure!(on(12.0, 0.0) && on(24.999, 3.999) && on(0.001, -3.999), "interior centers rejected");
    ensure!(!on(0.0, 0.0) && !on(25.0, 0.0) && !on(10.0, 4.0) && !on(10.0, -4.0) && !on(-1.0, 0.0) && !on(30.0, 0.0), "boundary or exterior centers accepted");
    let mut r = rng(31);
    let mut mixed = Vec::new();
    let mut filtered = Vec::new();
    for i in 0..10 {
        let gts: Vec<Box3D> = (0..6)
            .map(|_| Box3D::new(r.random_range(-5.0..40.0), r.random_range(-8.0..8.0), -1.0, 3.9, 1.6, 1.56, r.random_range(-PI..PI), ClassId::Car).unwrap())
            .collect();
        let dets: Vec<Detection> = gts
            .iter()
            .map(|b| det(Box3D { cx: b.cx + r.random_range(-0.6..0.6), ..*b }, r.random_range(0.0..1.0)))
            .collect();
        let keep = |b: &Box3D| corridor.contains(b);
        mixed.push(EvalFrame { frame_id: format!("{i}"), detections: dets.clone(), gts: gts.clone() });
        filtered.push(EvalFrame {
            frame_id: format!("{i}"),
            detections: dets.into_iter().filter(|d| keep(&d.box3d)).collect(),
            gts: gts.into_iter().filter(keep).collect(),
        });
    }
    let everywhere = RegionFilter { name: "everywhere".into(), x_min: -1e9, x_max: 1e9, y_min: -1e9, y_max: 1e9 };
    let a = average_precision(&mixed, ClassId::Car, 0.5, IouMode::Bev, &corridor);
    let b = average_precision(&filtered, ClassId::Car, 0.5, IouMode::Bev, &everywhere);
    ensure!(a == b, "corridor evaluation differs from evaluating pre-filtered frames");
    Ok(format!("perfect AP = AOS = 1, unit-square IoU 1/3, AOS <= AP on {runs} noisy entries, corridor semantics hold"))
}

/// Central-difference checks of every learned block.
pub fn gradient_integrity() -> Check {
    let blocks = super::grad::all_blocks();
    let worst = blocks.iter().map(|b| b.1).fold(0.0, f64::max);
    for (name, e) in &blocks {
        ensure!(*e < super::grad::TOL && e.is_finite(), "{name}: relative error {e:.2e}");
    }
    Ok(format!("{} blocks, worst relative error {worst:.1e}", blocks.len()))
}
