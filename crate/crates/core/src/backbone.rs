//! Radar-feature-assisted U-shaped point backbone and BEV densification.

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::frame::RadarPoint;
#[allow(unused_imports)]
use crate::math::Float;
use crate::nn::{Graph, Linear, Mlp, ParamStore};
use crate::pointops;
use crate::projection::PillarMapping;
use crate::tensor::Matrix;

/// Width of the value-transform input: radar features (3), kNN center (3),
/// offset (3) and offset norm (1).
pub const THETA_INPUT_DIM: usize = 10;

/// `[v, v_r, rcs]` per point.
pub fn make_radar_assist(points: &[RadarPoint]) -> Matrix {
    let mut r = Matrix::zeros(points.len(), 3);
    for (n, p) in points.iter().enumerate() {
        r.row_mut(n).copy_from_slice(&[p.v, p.v_r, p.rcs]);
    }
    r
}

/// Builds `[R·radar_scale, (center, offset, ‖offset‖)·coord_scale]`.
pub fn theta_input(radar: &Matrix, coords: &[[f64; 3]], k: usize, radar_scale: [f64; 3], coord_scale: f64) -> Result<Matrix> {
    if radar.rows() != coords.len() || radar.cols() != 3 {
        return Err(Error::shape(
            "theta_input",
            alloc::format!("R is {}x{}, {} coordinates", radar.rows(), radar.cols(), coords.len()),
        ));
    }
    let geo = crate::mvfe::positional_input(coords, k, coord_scale)?;
    let mut out = Matrix::zeros(coords.len(), THETA_INPUT_DIM);
    for n in 0..coords.len() {
        let row = out.row_mut(n);
        for c in 0..3 {
            row[c] = radar[(n, c)] * radar_scale[c];
        }
        row[3..].copy_from_slice(geo.row(n));
    }
    Ok(out)
}

/// `sigmoid(phi(M) psi(M)^T) · theta(X) + phi(M)`, with one `phi` shared by
/// both terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadarAssistedBlock {
    pub phi: Mlp,
    pub psi: Mlp,
    pub theta: Mlp,
}

impl RadarAssistedBlock {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, d_in: usize, d_out: usize, logit_offset: f64) -> Self {
        let phi = Mlp::new(store, rng, &alloc::format!("{name}.phi"), d_in, d_out, d_out, 1.0);
        let psi = Mlp::new(store, rng, &alloc::format!("{name}.psi"), d_in, d_out, d_out, 0.5);
        let theta = Mlp::new(store, rng, &alloc::format!("{name}.theta"), THETA_INPUT_DIM, d_out, d_out, 0.1);
        let b = (logit_offset.abs() / d_out as f64).sqrt();
        crate::nn::set_bias(store, &psi.output, b * logit_offset.signum());
        RadarAssistedBlock { phi, psi, theta }
    }

    pub fn out_dim(&self) -> usize {
        self.phi.out_dim()
    }

    pub fn forward(&self, g: &mut Graph<'_>, m: Var, theta_in: Var) -> Var {
        let a = self.phi.forward(g, m);
        let b = self.psi.forward(g, m);
        let logits = g.tape.matmul_nt(a, b);
        let att = g.tape.sigmoid(logits);
        let t = self.theta.forward(g, theta_in);
        let v = g.tape.matmul(att, t);
        g.tape.add(v, a)
    }

    /// Sets the value transform to zero, leaving `phi(M)`.
    pub fn freeze_theta_zero(&self, store: &mut ParamStore) {
        self.theta.zero_output(store);
    }
}

/// Geometry of one encoder stage, independent of learned parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct StagePlan {
    pub coords: Vec<[f64; 3]>,
    pub radar: Matrix,
    pub theta_input: Matrix,
    /// Rows kept for the next stage.
    pub fps: Vec<usize>,
}

/// Interpolation table from a coarse stage up to the finer one.
#[derive(Debug, Clone, PartialEq)]
pub struct UpPlan {
    pub idx: Vec<u32>,
    pub weights: Vec<f64>,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackbonePlan {
    /// Encoder stages `0..S`; stage `S` (the bottleneck) is `coarsest`.
    pub stages: Vec<StagePlan>,
    pub coarsest: Vec<[f64; 3]>,
    /// `ups[i]` maps stage `i+1` rows onto stage `i` rows.
    pub ups: Vec<UpPlan>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanParams {
    pub num_stages: usize,
    pub knn_k: usize,
    pub idw_k: usize,
    pub radar_scale: [f64; 3],
    pub coord_scale: f64,
    /// Replace the value-transform input by zeros (radar-assist ablation).
    pub zero_theta_input: bool,
}

/// Number of points kept by one downsampling step.
pub fn downsampled(n: usize) -> usize {
    n.div_ceil(2)
}

/// FPS chain, value inputs and interpolation tables for a frame.
pub fn plan_backbone(coords: &[[f64; 3]], radar: &Matrix, p: &PlanParams) -> Result<BackbonePlan> {
    if coords.is_empty() {
        return Err(Error::EmptyInput("plan_backbone"));
    }
    let mut stages = Vec::with_capacity(p.num_stages);
    let mut cur_c = coords.to_vec();
    let mut cur_r = radar.clone();
    for _ in 0..p.num_stages {
        let mut ti = theta_input(&cur_r, &cur_c, p.knn_k, p.radar_scale, p.coord_scale)?;
        if p.zero_theta_input {
            ti.scale(0.0);
        }
        let fps = pointops::fps(&cur_c, downsampled(cur_c.len()), 0)?;
        let next_c: Vec<[f64; 3]> = fps.iter().map(|&i| cur_c[i]).collect();
        let next_r = cur_r.select_rows(&fps);
        stages.push(StagePlan {
            coords: core::mem::replace(&mut cur_c, next_c),
            radar: core::mem::replace(&mut cur_r, next_r),
            theta_input: ti,
            fps,
        });
    }
    let mut ups = Vec::with_capacity(p.num_stages);
    for i in 0..p.num_stages {
        let coarse = if i + 1 < p.num_stages { &stages[i + 1].coords } else { &cur_c };
        let (idx, weights, k) = pointops::idw_weights(coarse, &stages[i].coords, p.idw_k)?;
        ups.push(UpPlan { idx, weights, k });
    }
    Ok(BackbonePlan {
        stages,
        coarsest: cur_c,
        ups,
    })
}

/// Encoder blocks with widths doubling per stage and mirrored decoder maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Backbone {
    pub blocks: Vec<RadarAssistedBlock>,
    /// `decoders[i]` maps stage `i+1` width to stage `i` width.
    pub decoders: Vec<Linear>,
}

impl Backbone {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, d0: usize, num_stages: usize, logit_offset: f64) -> Self {
        let mut blocks = Vec::with_capacity(num_stages);
        let mut decoders = Vec::with_capacity(num_stages);
        for i in 0..num_stages {
            let (di, dn) = (d0 << i, d0 << (i + 1));
            blocks.push(RadarAssistedBlock::new(store, rng, &alloc::format!("{name}.enc{i}"), di, dn, logit_offset));
            decoders.push(Linear::new(store, rng, &alloc::format!("{name}.dec{i}"), dn, di, true, 1.0));
        }
        Backbone { blocks, decoders }
    }

    pub fn in_dim(&self) -> usize {
        self.blocks.first().map_or(0, |b| b.phi.in_dim())
    }

    /// One encoder stage: block output, then the FPS rows.
    pub fn encoder_stage(&self, g: &mut Graph<'_>, i: usize, m: Var, plan: &StagePlan) -> Var {
        let ti = g.constant(plan.theta_input.clone());
        let f = self.blocks[i].forward(g, m, ti);
        g.tape.gather(f, plan.fps.iter().map(|&r| r as u32).collect())
    }

    /// Interpolates `coarse` onto the finer stage, maps its width and adds
    /// the skip features.
    pub fn decoder_stage(&self, g: &mut Graph<'_>, i: usize, coarse: Var, skip: Var, up: &UpPlan) -> Var {
        let interp = g.tape.mix(coarse, up.idx.clone(), up.weights.clone(), up.k);
        let mapped = self.decoders[i].forward(g, interp);
        g.tape.add(mapped, skip)
    }

    /// Full U-shaped pass; returns per-point features at the input width.
    pub fn forward(&self, g: &mut Graph<'_>, m0: Var, plan: &BackbonePlan) -> Var {
        let mut skips = Vec::with_capacity(self.blocks.len());
        let mut m = m0;
        for (i, stage) in plan.stages.iter().enumerate() {
            skips.push(m);
            m = self.encoder_stage(g, i, m, stage);
        }
        for i in (0..plan.stages.len()).rev() {
            m = self.decoder_stage(g, i, m, skips[i], &plan.ups[i]);
        }
        m
    }
}

/// Per-cell max of point features over the occupied BEV cells. Rows follow
/// `mapping.cells`; points outside the grid do not contribute.
pub fn dense_map(g: &mut Graph<'_>, features: Var, mapping: &PillarMapping) -> Var {
    g.tape.segment_max(features, &mapping.pillar_to_points)
}

/// Plain-matrix max-scatter into a dense `C×H×W` buffer.
pub fn dense_map_values(features: &Matrix, mapping: &PillarMapping) -> Result<Vec<f64>> {
    if features.rows() != mapping.num_points() {
        return Err(Error::shape(
            "dense_map",
            alloc::format!("{} feature rows for {} points", features.rows(), mapping.num_points()),
        ));
    }
    let (h, w) = mapping.spec.image_dims();
    let c = features.cols();
    let mut out = alloc::vec![0.0; c * h * w];
    for (p, members) in mapping.pillar_to_points.iter().enumerate() {
        let cell = mapping.cells.cells()[p] as usize;
        for ch in 0..c {
            let m = members
                .iter()
                .map(|&n| features[(n as usize, ch)])
                .fold(f64::NEG_INFINITY, f64::max);
            out[ch * h * w + cell] = m;
        }
    }
    Ok(out)
}
