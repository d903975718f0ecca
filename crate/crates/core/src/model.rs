//! The assembled detector: per-frame preparation, forward pass, training
//! loss with gradients, and inference.

use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::backbone::{self, Backbone, BackbonePlan, PlanParams};
use crate::config::{ExperimentConfig, GridConfig, LossConfig, ModelConfig};
use crate::error::Result;
use crate::frame::RadarFrame;
use crate::head::{self, AnchorSet, Assignment, DecodeParams, Detection, HeadOutput, HeadTrunk, HeadVars};
use crate::losses::Focal;
use crate::mvfe::{self, AuxHead, PositionalEncoder, PositionalMap, ResNet2d};
use crate::nn::{Graph, ParamStore};
use crate::projection::{self, PillarEncoder, PillarMapping};
use crate::sparse::{CellSet, SparseMap};
use crate::tensor::Matrix;

/// Parameter handles of every learned block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub bev_pillars: PillarEncoder,
    pub cyl_pillars: PillarEncoder,
    pub bev_resnet: ResNet2d,
    pub cyl_resnet: ResNet2d,
    pub encoding: PositionalEncoder,
    pub map: PositionalMap,
    pub aux: AuxHead,
    pub backbone: Backbone,
    pub head: HeadTrunk,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub grid: GridConfig,
    pub net: Network,
    pub anchors: AnchorSet,
}

/// Everything about a frame that does not depend on parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePrep {
    pub frame: RadarFrame,
    pub coords: Vec<[f64; 3]>,
    pub bev: PillarMapping,
    pub cyl: PillarMapping,
    pub bev_input: Matrix,
    pub cyl_input: Matrix,
    pub pe_input: Matrix,
    pub plan: Option<BackbonePlan>,
    pub labels: Vec<u8>,
    pub assignment: Assignment,
}

/// Loss components of one frame (or a batch mean).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cls: f64,
    pub aux: f64,
    pub loc: f64,
    pub dir: f64,
    pub total: f64,
    pub num_pos: usize,
}

/// Tape handles of one forward pass.
pub struct ForwardVars {
    pub head: HeadVars,
    /// Foreground predictions, absent for empty frames.
    pub aux: Option<Var>,
    pub map: Option<Var>,
}

/// Keeps at most `cap` points, chosen uniformly without replacement and kept
/// in their original order.
pub fn cap_points<R: Rng>(frame: &RadarFrame, cap: usize, rng: &mut R) -> RadarFrame {
    if frame.points.len() <= cap {
        return frame.clone();
    }
    let mut keep = index::sample(rng, frame.points.len(), cap).into_vec();
    keep.sort_unstable();
    let mut out = frame.clone();
    out.points = keep.into_iter().map(|i| frame.points[i]).collect();
    out
}

impl Model {
    pub fn new<R: Rng>(cfg: &ExperimentConfig, rng: &mut R) -> Result<(Model, ParamStore)> {
        cfg.validate()?;
        let m = &cfg.model;
        let mut store = ParamStore::new();
        let d = m.width;
        let net = Network {
            bev_pillars: PillarEncoder::new(&mut store, rng, "bev.pillars", m.pillar_channels),
            cyl_pillars: PillarEncoder::new(&mut store, rng, "cyl.pillars", m.pillar_channels),
            bev_resnet: ResNet2d::new(&mut store, rng, "bev.resnet", m.pillar_channels, d, m.resnet_blocks),
            cyl_resnet: ResNet2d::new(&mut store, rng, "cyl.resnet", m.pillar_channels, d, m.resnet_blocks),
            encoding: PositionalEncoder::new(&mut store, rng, "encoding", d),
            map: PositionalMap::new(&mut store, rng, "map", d, m.map_logit_offset),
            aux: AuxHead::new(&mut store, rng, "aux", d),
            backbone: Backbone::new(&mut store, rng, "backbone", 2 * d, m.encoder_stages, m.map_logit_offset),
            head: HeadTrunk::new(
                &mut store,
                rng,
                "head",
                2 * d,
                m.head_width,
                m.head_convs,
                m.head_stride,
                m.anchors.len() * m.anchor_yaws.len(),
            ),
        };
        let anchors = head::build_anchors(&cfg.grid.bev, m.head_stride, &m.anchors, &m.anchor_yaws)?;
        Ok((
            Model {
                config: m.clone(),
                grid: cfg.grid.clone(),
                net,
                anchors,
            },
            store,
        ))
    }

    fn plan_params(&self) -> PlanParams {
        PlanParams {
            num_stages: self.config.encoder_stages,
            knn_k: self.config.knn_k,
            idw_k: self.config.idw_k,
            radar_scale: self.config.radar_scale,
            coord_scale: self.config.coord_scale,
            zero_theta_input: !self.config.ablation.radar_assist,
        }
    }

    /// Builds mappings, fixed inputs, the FPS/interpolation plan and anchor
    /// targets. The frame should already be augmented and capped.
    pub fn prepare(&self, frame: &RadarFrame) -> Result<FramePrep> {
        frame.validate()?;
        let coords = frame.coords();
        let bev = projection::build_pillar_mapping(&coords, &self.grid.bev);
        let cyl = projection::build_pillar_mapping(&coords, &self.grid.cyl);
        let bev_input = projection::decorate(&bev);
        let cyl_input = projection::decorate(&cyl);
        let (pe_input, plan) = if coords.is_empty() {
            (Matrix::zeros(0, mvfe::PE_INPUT_DIM), None)
        } else {
            let radar = backbone::make_radar_assist(&frame.points);
            (
                mvfe::positional_input(&coords, self.config.knn_k, self.config.coord_scale)?,
                Some(backbone::plan_backbone(&coords, &radar, &self.plan_params())?),
            )
        };
        let labels = mvfe::foreground_labels(&coords, &frame.boxes);
        let assignment = head::assign_targets(&self.anchors, &frame.boxes);
        Ok(FramePrep {
            frame: frame.clone(),
            coords,
            bev,
            cyl,
            bev_input,
            cyl_input,
            pe_input,
            plan,
            labels,
            assignment,
        })
    }

    /// Pillar features of one view gathered back to the points.
    fn view_features(g: &mut Graph<'_>, enc: &PillarEncoder, net: &ResNet2d, mapping: &PillarMapping, input: &Matrix) -> Var {
        let x = g.constant(input.clone());
        let pillars = enc.forward(g, mapping, x);
        let img = SparseMap {
            cells: mapping.cells.clone(),
            features: pillars,
        };
        let out = net.forward(g, &img, &mapping.cells);
        g.tape.gather(out.features, mapping.gather_index())
    }

    pub fn forward(&self, g: &mut Graph<'_>, prep: &FramePrep) -> ForwardVars {
        let net = &self.net;
        let n = prep.coords.len();
        let d0 = 2 * self.config.width;
        let extra = prep.assignment.cells(&self.anchors);
        let Some(plan) = prep.plan.as_ref() else {
            let empty = SparseMap {
                cells: CellSet::new(prep.bev.cells.height, prep.bev.cells.width, Vec::new()),
                features: g.constant(Matrix::zeros(0, d0)),
            };
            return ForwardVars {
                head: net.head.forward(g, &empty, &extra),
                aux: None,
                map: None,
            };
        };
        let f_bev = Self::view_features(g, &net.bev_pillars, &net.bev_resnet, &prep.bev, &prep.bev_input);
        let f_cyl = if self.config.ablation.cylinder_view {
            Self::view_features(g, &net.cyl_pillars, &net.cyl_resnet, &prep.cyl, &prep.cyl_input)
        } else {
            g.constant(Matrix::zeros(n, self.config.width))
        };
        let pe_in = g.constant(prep.pe_input.clone());
        let e = net.encoding.forward(g, pe_in);
        let w = if self.config.ablation.positional_map {
            net.map.forward(g, e)
        } else {
            g.constant(mvfe::identity_map(n))
        };
        let m0 = mvfe::reweigh(g, w, f_cyl, f_bev);
        let a = net.aux.forward(g, w, e);
        let feats = net.backbone.forward(g, m0, plan);
        let cells = backbone::dense_map(g, feats, &prep.bev);
        let dense = SparseMap {
            cells: prep.bev.cells.clone(),
            features: cells,
        };
        ForwardVars {
            head: net.head.forward(g, &dense, &extra),
            aux: Some(a),
            map: Some(w),
        }
    }

    /// Weighted total loss of one frame and its gradient per parameter,
    /// added into `grads`.
    pub fn loss_and_grad(&self, store: &ParamStore, prep: &FramePrep, loss: &LossConfig, grads: &mut [Matrix]) -> Result<LossBreakdown> {
        let mut g = Graph::new(store);
        let fw = self.forward(&mut g, prep);
        let out = fw.head.output(&g);
        let focal = Focal {
            alpha: loss.focal_alpha,
            gamma: loss.focal_gamma,
        };
        let hl = head::detection_losses(&self.anchors, &out, &prep.assignment, &prep.frame.boxes, &focal, loss.smooth_l1_beta)?;
        let w = loss.weights;
        let mut parents = Vec::with_capacity(4);
        let mut aux = 0.0;
        if let Some(a) = fw.aux {
            let (v, mut ga) = mvfe::aux_loss(g.value(a), &prep.labels, self.config.aux_loss_form)?;
            aux = v;
            ga.scale(w.aux);
            parents.push((a, ga));
        }
        let mut gc = hl.grad_cls.clone();
        gc.scale(w.cls);
        let mut gb = hl.grad_bias.clone();
        gb.scale(w.cls);
        let mut gr = hl.grad_loc.clone();
        gr.scale(w.loc);
        gr.axpy(w.dir, &hl.grad_dir);
        parents.push((fw.head.cls, gc));
        parents.push((fw.head.cls_bias, gb));
        parents.push((fw.head.reg, gr));
        let total = w.cls * hl.cls + w.aux * aux + w.loc * hl.loc + w.dir * hl.dir;
        let root = g.tape.injected(total, parents);
        g.accumulate_param_grads(root, grads);
        Ok(LossBreakdown {
            cls: hl.cls,
            aux,
            loc: hl.loc,
            dir: hl.dir,
            total,
            num_pos: hl.num_pos,
        })
    }

    /// Loss of one frame without gradients.
    pub fn loss(&self, store: &ParamStore, prep: &FramePrep, loss: &LossConfig) -> Result<LossBreakdown> {
        let mut scratch = store.zero_grads();
        self.loss_and_grad(store, prep, loss, &mut scratch)
    }

    pub fn head_output(&self, store: &ParamStore, prep: &FramePrep) -> HeadOutput {
        let mut g = Graph::new(store);
        let fw = self.forward(&mut g, prep);
        fw.head.output(&g)
    }

    pub fn predict(&self, store: &ParamStore, prep: &FramePrep, decode: &DecodeParams) -> Vec<Detection> {
        head::decode_and_nms(&self.anchors, &self.head_output(store, prep), decode)
    }

    /// Foreground predictions `A` (N×2).
    pub fn foreground(&self, store: &ParamStore, prep: &FramePrep) -> Matrix {
        let mut g = Graph::new(store);
        let fw = self.forward(&mut g, prep);
        fw.aux.map_or_else(|| Matrix::zeros(0, 2), |a| g.value(a).clone())
    }
}
