//! Single-stage anchor head over the BEV dense map: anchors, box deltas,
//! target assignment, losses and decoding with NMS.

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::geometry::{rotated_iou, Box3D, ClassId, IouMode};
use crate::losses::{smooth_l1, Focal};
use crate::math::{sigmoid, wrap_angle, PI};
#[allow(unused_imports)]
use crate::math::Float;
use crate::nn::{uniform_init, Graph, Linear, ParamId, ParamStore, RELU_GAIN};
use crate::projection::{GridSpec, View};
use crate::sparse::{self, CellSet, SparseMap, TAPS};
use crate::tensor::Matrix;

/// Number of regression outputs per anchor.
pub const BOX_DIM: usize = 7;

/// Anchor shape and matching thresholds for one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorClass {
    pub class_id: ClassId,
    pub w: f64,
    pub l: f64,
    pub h: f64,
    /// Anchor center height.
    pub z: f64,
    pub pos_iou: f64,
    pub neg_iou: f64,
}

impl AnchorClass {
    pub fn defaults() -> Vec<AnchorClass> {
        alloc::vec![
            AnchorClass {
                class_id: ClassId::Car,
                w: 1.6,
                l: 3.9,
                h: 1.56,
                z: -1.0,
                pos_iou: 0.6,
                neg_iou: 0.45,
            },
            AnchorClass {
                class_id: ClassId::Pedestrian,
                w: 0.6,
                l: 0.8,
                h: 1.73,
                z: -0.6,
                pos_iou: 0.5,
                neg_iou: 0.35,
            },
            AnchorClass {
                class_id: ClassId::Cyclist,
                w: 0.6,
                l: 1.76,
                h: 1.73,
                z: -0.6,
                pos_iou: 0.5,
                neg_iou: 0.35,
            },
        ]
    }
}

/// Anchors on the head grid. Index order is row-major over cells, then
/// class, then yaw.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    pub height: usize,
    pub width: usize,
    pub x_min: f64,
    pub y_min: f64,
    /// Head cell size along x and y.
    pub step: [f64; 2],
    pub classes: Vec<AnchorClass>,
    pub yaws: Vec<f64>,
}

/// Anchors over a BEV grid downsampled by `stride`.
pub fn build_anchors(bev: &GridSpec, stride: usize, classes: &[AnchorClass], yaws: &[f64]) -> Result<AnchorSet> {
    if bev.view != View::Bev {
        return Err(Error::Config("anchors need a BEV grid".into()));
    }
    if !(1..=2).contains(&stride) {
        return Err(Error::Config(alloc::format!("head stride {stride} unsupported (1 or 2)")));
    }
    if classes.is_empty() || yaws.is_empty() {
        return Err(Error::Config("anchor table is empty".into()));
    }
    for c in classes {
        if !(c.w > 0.0 && c.l > 0.0 && c.h > 0.0) || !(c.w.is_finite() && c.l.is_finite() && c.h.is_finite()) {
            return Err(Error::Config(alloc::format!("{} anchor sizes must be positive", c.class_id)));
        }
        if !(c.neg_iou <= c.pos_iou) {
            return Err(Error::Config(alloc::format!("{} anchor thresholds out of order", c.class_id)));
        }
    }
    let (h, w) = bev.image_dims();
    Ok(AnchorSet {
        height: h.div_ceil(stride),
        width: w.div_ceil(stride),
        x_min: bev.axes[0].min,
        y_min: bev.axes[1].min,
        step: [bev.axes[0].cell * stride as f64, bev.axes[1].cell * stride as f64],
        classes: classes.to_vec(),
        yaws: yaws.to_vec(),
    })
}

impl AnchorSet {
    pub fn per_cell(&self) -> usize {
        self.classes.len() * self.yaws.len()
    }

    pub fn num_cells(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.num_cells() * self.per_cell()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, row: usize, col: usize, slot: usize) -> usize {
        (row * self.width + col) * self.per_cell() + slot
    }

    pub fn slot_class(&self, slot: usize) -> usize {
        slot / self.yaws.len()
    }

    pub fn center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.x_min + (row as f64 + 0.5) * self.step[0],
            self.y_min + (col as f64 + 0.5) * self.step[1],
        )
    }

    pub fn anchor(&self, i: usize) -> Box3D {
        let pc = self.per_cell();
        let (cell, slot) = (i / pc, i % pc);
        let (row, col) = (cell / self.width, cell % self.width);
        let c = &self.classes[slot / self.yaws.len()];
        let yaw = self.yaws[slot % self.yaws.len()];
        let (x, y) = self.center(row, col);
        Box3D {
            cx: x,
            cy: y,
            cz: c.z,
            l: c.l,
            w: c.w,
            h: c.h,
            yaw: wrap_angle(yaw),
            class_id: c.class_id,
        }
    }

    pub fn class_slot(&self, class: ClassId) -> Option<usize> {
        self.classes.iter().position(|c| c.class_id == class)
    }

    /// Head cells whose center lies within `radius` of `(x, y)` in both axes.
    pub fn cells_near(&self, x: f64, y: f64, radius: f64) -> Vec<(usize, usize)> {
        let lo = |v: f64, min: f64, step: f64| ((v - radius - min) / step - 0.5).ceil().max(0.0);
        let hi = |v: f64, min: f64, step: f64, n: usize| ((v + radius - min) / step - 0.5).floor().min(n as f64 - 1.0);
        let (r0, r1) = (lo(x, self.x_min, self.step[0]), hi(x, self.x_min, self.step[0], self.height));
        let (c0, c1) = (lo(y, self.y_min, self.step[1]), hi(y, self.y_min, self.step[1], self.width));
        let mut out = Vec::new();
        if r1 < r0 || c1 < c0 {
            return out;
        }
        for r in r0 as usize..=r1 as usize {
            for c in c0 as usize..=c1 as usize {
                out.push((r, c));
            }
        }
        out
    }
}

/// `d = sqrt(w^2 + l^2)` of an anchor base.
pub fn anchor_diagonal(a: &Box3D) -> f64 {
    (a.w * a.w + a.l * a.l).sqrt()
}

/// Box deltas against an anchor, center residuals taken as anchor minus
/// ground truth. The last entry is the raw yaw residual `yaw_a - yaw_gt`.
pub fn encode_deltas(gt: &Box3D, anchor: &Box3D) -> [f64; BOX_DIM] {
    let d = anchor_diagonal(anchor);
    [
        (anchor.cx - gt.cx) / d,
        (anchor.cy - gt.cy) / d,
        (anchor.cz - gt.cz) / anchor.h,
        (gt.w / anchor.w).ln(),
        (gt.l / anchor.l).ln(),
        (gt.h / anchor.h).ln(),
        wrap_angle(anchor.yaw - gt.yaw),
    ]
}

/// Inverse of [`encode_deltas`].
pub fn decode_deltas(delta: &[f64], anchor: &Box3D) -> Box3D {
    let d = anchor_diagonal(anchor);
    Box3D {
        cx: anchor.cx - delta[0] * d,
        cy: anchor.cy - delta[1] * d,
        cz: anchor.cz - delta[2] * anchor.h,
        w: anchor.w * delta[3].exp(),
        l: anchor.l * delta[4].exp(),
        h: anchor.h * delta[5].exp(),
        yaw: wrap_angle(anchor.yaw - delta[6]),
        class_id: anchor.class_id,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorLabel {
    Negative,
    Ignore,
    /// Matched ground-truth index.
    Positive(usize),
}

/// Anchor labels; anchors not listed are negative.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Assignment {
    /// `(anchor index, label)` sorted by anchor index.
    pub entries: Vec<(usize, AnchorLabel)>,
}

impl Assignment {
    pub fn label(&self, anchor: usize) -> AnchorLabel {
        match self.entries.binary_search_by_key(&anchor, |e| e.0) {
            Ok(i) => self.entries[i].1,
            Err(_) => AnchorLabel::Negative,
        }
    }

    pub fn num_positive(&self) -> usize {
        self.entries.iter().filter(|e| matches!(e.1, AnchorLabel::Positive(_))).count()
    }

    /// Head cells holding at least one non-negative anchor.
    pub fn cells(&self, anchors: &AnchorSet) -> CellSet {
        let pc = anchors.per_cell();
        CellSet::new(
            anchors.height,
            anchors.width,
            self.entries.iter().map(|e| (e.0 / pc) as u32).collect(),
        )
    }
}

/// Rotated-BEV-IoU matching of class-specific anchors to same-class boxes.
/// Each box also claims its best anchor; ties go to the lower index.
pub fn assign_targets(anchors: &AnchorSet, gts: &[Box3D]) -> Assignment {
    // anchor -> (best IoU, gt)
    let mut best: Vec<(usize, f64, usize)> = Vec::new();
    let mut forced: Vec<(usize, usize)> = Vec::new();
    let ny = anchors.yaws.len();
    for (gi, gt) in gts.iter().enumerate() {
        let Some(ci) = anchors.class_slot(gt.class_id) else { continue };
        let ac = &anchors.classes[ci];
        let reach = gt.bev_radius() + 0.5 * (ac.w * ac.w + ac.l * ac.l).sqrt();
        let mut gt_best: Option<(f64, usize)> = None;
        for (r, c) in anchors.cells_near(gt.cx, gt.cy, reach) {
            for yi in 0..ny {
                let ai = anchors.index(r, c, ci * ny + yi);
                let iou = rotated_iou(&anchors.anchor(ai), gt, IouMode::Bev);
                if iou <= 0.0 {
                    continue;
                }
                best.push((ai, iou, gi));
                if gt_best.is_none_or(|(b, bi)| iou > b || (iou == b && ai < bi)) {
                    gt_best = Some((iou, ai));
                }
            }
        }
        if let Some((_, ai)) = gt_best {
            forced.push((ai, gi));
        }
    }
    // Per anchor keep the highest IoU; on equal IoU the lower gt index.
    best.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.total_cmp(&a.1)).then(a.2.cmp(&b.2)));
    best.dedup_by_key(|e| e.0);
    let mut entries: Vec<(usize, AnchorLabel)> = best
        .iter()
        .filter_map(|&(ai, iou, gi)| {
            let ac = &anchors.classes[anchors.slot_class(ai % anchors.per_cell())];
            if iou >= ac.pos_iou {
                Some((ai, AnchorLabel::Positive(gi)))
            } else if iou >= ac.neg_iou {
                Some((ai, AnchorLabel::Ignore))
            } else {
                None
            }
        })
        .collect();
    // The first box to claim an anchor keeps it.
    let mut claimed: Vec<usize> = Vec::new();
    for (ai, gi) in forced {
        if claimed.contains(&ai) {
            continue;
        }
        claimed.push(ai);
        match entries.binary_search_by_key(&ai, |e| e.0) {
            Ok(i) => entries[i].1 = AnchorLabel::Positive(gi),
            Err(i) => entries.insert(i, (ai, AnchorLabel::Positive(gi))),
        }
    }
    Assignment { entries }
}

/// Component losses and their gradients with respect to the head outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadLosses {
    pub cls: f64,
    pub loc: f64,
    pub dir: f64,
    pub num_pos: usize,
    /// Gradient of `cls` in the evaluated logits (rows × anchors per cell).
    pub grad_cls: Matrix,
    /// Gradient of `cls` in the classification bias (background anchors).
    pub grad_bias: Matrix,
    pub grad_loc: Matrix,
    pub grad_dir: Matrix,
}

/// Head outputs at a set of head cells. Anchors at other cells see zero
/// trunk features, so their logits equal the classification bias and their
/// regressions equal the regression bias.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    pub cells: CellSet,
    pub cls: Matrix,
    pub reg: Matrix,
    pub cls_bias: Vec<f64>,
    pub reg_bias: Vec<f64>,
}

/// Classification (focal), localization and direction losses. Localization
/// sums Smooth-L1 over the six geometric deltas; direction applies
/// Smooth-L1 to `sin(pred - target)` of the yaw residual. Classification is
/// normalized by `max(1, positives)`, the others by the positive count (zero
/// when there are no positives).
pub fn detection_losses(anchors: &AnchorSet, out: &HeadOutput, assign: &Assignment, gts: &[Box3D], focal: &Focal, beta: f64) -> Result<HeadLosses> {
    let pc = anchors.per_cell();
    if out.cls.shape() != (out.cells.len(), pc) || out.reg.shape() != (out.cells.len(), pc * BOX_DIM) || out.cls_bias.len() != pc {
        return Err(Error::shape("detection_losses", "head outputs do not match the anchor layout"));
    }
    let num_pos = assign.num_positive();
    let norm = num_pos.max(1) as f64;
    let mut grad_cls = Matrix::zeros(out.cells.len(), pc);
    let mut grad_loc = Matrix::zeros(out.cells.len(), pc * BOX_DIM);
    let mut grad_dir = Matrix::zeros(out.cells.len(), pc * BOX_DIM);
    let mut grad_bias = Matrix::zeros(1, pc);
    let (mut cls, mut loc, mut dir) = (0.0, 0.0, 0.0);
    let mut covered = 0usize;
    for (e, &cell) in out.cells.cells().iter().enumerate() {
        covered += 1;
        for slot in 0..pc {
            let ai = cell as usize * pc + slot;
            let x = out.cls[(e, slot)];
            match assign.label(ai) {
                AnchorLabel::Negative => {
                    let (v, d) = focal.negative_logit(x);
                    cls += v;
                    grad_cls[(e, slot)] = d / norm;
                }
                AnchorLabel::Ignore => {}
                AnchorLabel::Positive(gi) => {
                    let (v, d) = focal.positive_logit(x);
                    cls += v;
                    grad_cls[(e, slot)] = d / norm;
                    let gt = gts.get(gi).ok_or_else(|| Error::Argument(alloc::format!("assignment names missing box {gi}")))?;
                    let t = encode_deltas(gt, &anchors.anchor(ai));
                    let base = slot * BOX_DIM;
                    for k in 0..6 {
                        let (v, d) = smooth_l1(out.reg[(e, base + k)] - t[k], beta);
                        loc += v;
                        grad_loc[(e, base + k)] = d / num_pos as f64;
                    }
                    let r = out.reg[(e, base + 6)] - t[6];
                    let (v, d) = smooth_l1(r.sin(), beta);
                    dir += v;
                    grad_dir[(e, base + 6)] = d * r.cos() / num_pos as f64;
                }
            }
        }
    }
    let background = anchors.num_cells() - covered;
    if background > 0 {
        for slot in 0..pc {
            let (v, d) = focal.negative_logit(out.cls_bias[slot]);
            cls += background as f64 * v;
            grad_bias[(0, slot)] = background as f64 * d / norm;
        }
    }
    if num_pos > 0 {
        loc /= num_pos as f64;
        dir /= num_pos as f64;
    }
    Ok(HeadLosses {
        cls: cls / norm,
        loc,
        dir,
        num_pos,
        grad_cls,
        grad_bias,
        grad_loc,
        grad_dir,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub box3d: Box3D,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub score_thr: f64,
    pub nms_iou: f64,
    pub max_out: usize,
    /// Candidates per class kept before suppression.
    pub pre_nms_top_k: usize,
}

impl Default for DecodeParams {
    fn default() -> Self {
        DecodeParams {
            score_thr: 0.1,
            nms_iou: 0.5,
            max_out: 100,
            pre_nms_top_k: 1000,
        }
    }
}

/// A scored box tagged with the anchor it came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub anchor: usize,
    pub score: f64,
    pub box3d: Box3D,
}

/// Greedy NMS: descending score, ties by lower anchor index, suppression at
/// rotated BEV IoU above `iou_thr`.
pub fn nms(mut cands: Vec<Candidate>, iou_thr: f64, max_out: usize) -> Vec<Candidate> {
    cands.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.anchor.cmp(&b.anchor)));
    let mut keep: Vec<Candidate> = Vec::new();
    for c in cands {
        if keep.len() >= max_out {
            break;
        }
        if keep.iter().all(|k| rotated_iou(&k.box3d, &c.box3d, IouMode::Bev) <= iou_thr) {
            keep.push(c);
        }
    }
    keep
}

/// Scores and decodes every anchor above the threshold, then suppresses per
/// class.
pub fn decode_and_nms(anchors: &AnchorSet, out: &HeadOutput, p: &DecodeParams) -> Vec<Detection> {
    let pc = anchors.per_cell();
    let mut per_class: Vec<Vec<Candidate>> = alloc::vec![Vec::new(); anchors.classes.len()];
    let push = |ai: usize, logit: f64, deltas: &[f64], per_class: &mut Vec<Vec<Candidate>>| {
        let score = sigmoid(logit);
        if score >= p.score_thr {
            let a = anchors.anchor(ai);
            let mut b = decode_deltas(deltas, &a);
            b.yaw = wrap_angle(b.yaw);
            per_class[anchors.slot_class(ai % pc)].push(Candidate { anchor: ai, score, box3d: b });
        }
    };
    for (e, &cell) in out.cells.cells().iter().enumerate() {
        for slot in 0..pc {
            let base = slot * BOX_DIM;
            push(
                cell as usize * pc + slot,
                out.cls[(e, slot)],
                &out.reg.row(e)[base..base + BOX_DIM],
                &mut per_class,
            );
        }
    }
    for slot in 0..pc {
        if sigmoid(out.cls_bias[slot]) < p.score_thr {
            continue;
        }
        let deltas = &out.reg_bias[slot * BOX_DIM..(slot + 1) * BOX_DIM];
        let mut taken = 0;
        for cell in 0..anchors.num_cells() {
            if taken >= p.pre_nms_top_k {
                break;
            }
            if out.cells.position(cell as u32).is_none() {
                push(cell * pc + slot, out.cls_bias[slot], deltas, &mut per_class);
                taken += 1;
            }
        }
    }
    let mut dets = Vec::new();
    for mut cands in per_class {
        cands.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.anchor.cmp(&b.anchor)));
        cands.truncate(p.pre_nms_top_k);
        for c in nms(cands, p.nms_iou, p.max_out) {
            dets.push(Detection {
                box3d: c.box3d,
                score: c.score,
            });
        }
    }
    dets
}

/// Convolution trunk (first layer strided) and 1×1 per-anchor heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadTrunk {
    pub convs: Vec<ParamId>,
    pub cls: Linear,
    pub reg: Linear,
    pub stride: usize,
}

/// Prior foreground probability for the initial classification bias.
pub const CLS_PRIOR: f64 = 0.01;

impl HeadTrunk {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, in_dim: usize, width: usize, num_convs: usize, stride: usize, per_cell: usize) -> Self {
        let convs = (0..num_convs.max(1))
            .map(|i| {
                let c_in = if i == 0 { in_dim } else { width };
                store.add(
                    alloc::format!("{name}.conv{i}"),
                    uniform_init(rng, TAPS * c_in, width, TAPS * c_in, RELU_GAIN),
                    true,
                )
            })
            .collect();
        let cls = Linear::new(store, rng, &alloc::format!("{name}.cls"), width, per_cell, true, 0.1);
        let reg = Linear::new(store, rng, &alloc::format!("{name}.reg"), width, per_cell * BOX_DIM, true, 0.1);
        crate::nn::set_bias(store, &cls, -((1.0 - CLS_PRIOR) / CLS_PRIOR).ln());
        HeadTrunk { convs, cls, reg, stride }
    }

    /// Cells carrying non-zero trunk output for a dense map on `input`.
    pub fn support(&self, input: &CellSet) -> CellSet {
        let first = if self.stride == 2 { input.stride2_support() } else { input.dilate(1) };
        first.dilate(self.convs.len() - 1)
    }

    /// Runs the trunk and evaluates both heads on `support ∪ extra`.
    pub fn forward(&self, g: &mut Graph<'_>, dense: &SparseMap, extra: &CellSet) -> HeadVars {
        let first = if self.stride == 2 { dense.cells.stride2_support() } else { dense.cells.dilate(1) };
        let mut x = sparse::conv3x3(g, dense, self.convs[0], first, self.stride);
        x.features = g.tape.relu(x.features);
        for &w in self.convs.iter().skip(1) {
            let cells = x.cells.dilate(1);
            x = sparse::conv3x3(g, &x, w, cells, 1);
            x.features = g.tape.relu(x.features);
        }
        let cells = union(&x.cells, extra);
        let x = sparse::realign(g, &x, &cells);
        let cls = self.cls.forward(g, x.features);
        let reg = self.reg.forward(g, x.features);
        HeadVars {
            cells,
            cls,
            reg,
            cls_bias: g.param(self.cls.bias.expect("classification bias")),
            reg_bias: g.param(self.reg.bias.expect("regression bias")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct HeadVars {
    pub cells: CellSet,
    pub cls: Var,
    pub reg: Var,
    pub cls_bias: Var,
    pub reg_bias: Var,
}

impl HeadVars {
    pub fn output(&self, g: &Graph<'_>) -> HeadOutput {
        HeadOutput {
            cells: self.cells.clone(),
            cls: g.value(self.cls).clone(),
            reg: g.value(self.reg).clone(),
            cls_bias: g.value(self.cls_bias).as_slice().to_vec(),
            reg_bias: g.value(self.reg_bias).as_slice().to_vec(),
        }
    }
}

fn union(a: &CellSet, b: &CellSet) -> CellSet {
    let mut cells = a.cells().to_vec();
    cells.extend_from_slice(b.cells());
    CellSet::new(a.height, a.width, cells)
}

/// Default anchor yaws.
pub const ANCHOR_YAWS: [f64; 2] = [0.0, PI / 2.0];
