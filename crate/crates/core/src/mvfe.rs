//! Multi-view feature extraction: residual 2D extractors over both
//! pseudo-images, positional encoding, positional-map reweighting and the
//! auxiliary foreground head.

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::geometry::Box3D;
use crate::losses::Focal;
#[allow(unused_imports)]
use crate::math::Float;
use crate::nn::{uniform_init, Graph, Mlp, ParamId, ParamStore, RELU_GAIN};
use crate::pointops;
use crate::projection::PseudoImage;
use crate::sparse::{self, CellSet, SparseMap, TAPS};
use crate::tensor::Matrix;

/// Stack of stride-1 residual blocks over a sparse pseudo-image. The
/// convolutions are bias-free so empty regions stay exactly zero and the
/// sparse evaluation matches the dense one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResNet2d {
    pub in_channels: usize,
    pub width: usize,
    /// 1×1 projection on the first skip when `in_channels != width`.
    pub proj: Option<ParamId>,
    pub blocks: Vec<[ParamId; 2]>,
}

impl ResNet2d {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, in_channels: usize, width: usize, num_blocks: usize) -> Self {
        let proj = (in_channels != width).then(|| {
            store.add(
                alloc::format!("{name}.proj"),
                uniform_init(rng, in_channels, width, in_channels, 1.0),
                true,
            )
        });
        let blocks = (0..num_blocks)
            .map(|b| {
                let c_in = if b == 0 { in_channels } else { width };
                let w1 = uniform_init(rng, TAPS * c_in, width, TAPS * c_in, RELU_GAIN);
                // Second conv starts small so each block begins near identity.
                let w2 = uniform_init(rng, TAPS * width, width, TAPS * width, 0.5);
                [
                    store.add(alloc::format!("{name}.block{b}.conv1"), w1, true),
                    store.add(alloc::format!("{name}.block{b}.conv2"), w2, true),
                ]
            })
            .collect();
        ResNet2d {
            in_channels,
            width,
            proj,
            blocks,
        }
    }

    pub fn depth(&self) -> usize {
        2 * self.blocks.len()
    }

    /// Evaluates the stack, returning features on `need ∩ support`, where the
    /// support is the input cells dilated by the stack depth.
    pub fn forward(&self, g: &mut Graph<'_>, input: &SparseMap, need: &CellSet) -> SparseMap {
        let depth = self.depth();
        let layer_cells = |l: usize| input.cells.dilate(l).intersect(&need.dilate(depth - l));
        let mut x = input.clone();
        for (b, [w1, w2]) in self.blocks.iter().enumerate() {
            let l0 = 2 * b;
            let y = sparse::conv3x3(g, &x, *w1, layer_cells(l0 + 1), 1);
            let r = g.tape.relu(y.features);
            let y = SparseMap {
                cells: y.cells,
                features: r,
            };
            let y = sparse::conv3x3(g, &y, *w2, layer_cells(l0 + 2), 1);
            let skip = sparse::realign(g, &x, &y.cells);
            let skip = match (b, self.proj) {
                (0, Some(p)) => {
                    let pv = g.param(p);
                    g.tape.matmul(skip.features, pv)
                }
                _ => skip.features,
            };
            let s = g.tape.add(y.features, skip);
            let out = g.tape.relu(s);
            x = SparseMap {
                cells: y.cells,
                features: out,
            };
        }
        x
    }
}

/// Runs a residual stack over a pseudo-image and returns the complete
/// `width × H × W` feature image (cells outside the support are zero).
pub fn resnet2d_extract(store: &ParamStore, net: &ResNet2d, img: &PseudoImage) -> Result<PseudoImage> {
    if img.channels() != net.in_channels {
        return Err(Error::shape(
            "resnet2d_extract",
            alloc::format!("image has {} channels, network expects {}", img.channels(), net.in_channels),
        ));
    }
    let mut g = Graph::new(store);
    let input = SparseMap {
        cells: img.cells.clone(),
        features: g.constant(img.data.clone()),
    };
    let need = img.cells.dilate(net.depth());
    let out = net.forward(&mut g, &input, &need);
    Ok(PseudoImage {
        view: img.view,
        cells: out.cells,
        data: g.value(out.features).clone(),
    })
}

/// Width of the positional-encoding input: kNN center (3), offset (3) and
/// offset norm (1).
pub const PE_INPUT_DIM: usize = 7;

/// Builds `[center, p - center, ‖p - center‖]` rows, all scaled by
/// `coord_scale`.
pub fn positional_input(points: &[[f64; 3]], k: usize, coord_scale: f64) -> Result<Matrix> {
    let centers = pointops::knn_centers(points, k)?;
    let mut out = Matrix::zeros(points.len(), PE_INPUT_DIM);
    for (n, (p, c)) in points.iter().zip(&centers).enumerate() {
        let off = [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
        let norm = (off[0] * off[0] + off[1] * off[1] + off[2] * off[2]).sqrt();
        let r = out.row_mut(n);
        r[..3].copy_from_slice(c);
        r[3..6].copy_from_slice(&off);
        r[6] = norm;
        for v in r.iter_mut() {
            *v *= coord_scale;
        }
    }
    Ok(out)
}

/// `e_n = MLP(center, offset, ‖offset‖)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionalEncoder {
    pub mlp: Mlp,
}

impl PositionalEncoder {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, width: usize) -> Self {
        PositionalEncoder {
            mlp: Mlp::new(store, rng, name, PE_INPUT_DIM, width, width, 1.0),
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, input: Var) -> Var {
        self.mlp.forward(g, input)
    }
}

/// Map `w_ij = sigmoid(<phi(e_i), theta(e_j)>)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionalMap {
    pub phi: Mlp,
    pub theta: Mlp,
}

impl PositionalMap {
    /// `logit_offset` biases the initial inner products so that the initial
    /// map entries sit near `sigmoid(logit_offset)`; the offset is realized
    /// through the output biases of the two transforms.
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, width: usize, logit_offset: f64) -> Self {
        let phi = Mlp::new(store, rng, &alloc::format!("{name}.phi"), width, width, width, 0.5);
        let theta = Mlp::new(store, rng, &alloc::format!("{name}.theta"), width, width, width, 0.5);
        let b = (logit_offset.abs() / width as f64).sqrt();
        crate::nn::set_bias(store, &phi.output, b);
        crate::nn::set_bias(store, &theta.output, b * logit_offset.signum());
        PositionalMap { phi, theta }
    }

    pub fn forward(&self, g: &mut Graph<'_>, e: Var) -> Var {
        let a = self.phi.forward(g, e);
        let b = self.theta.forward(g, e);
        let logits = g.tape.matmul_nt(a, b);
        g.tape.sigmoid(logits)
    }
}

/// `M0 = w · [f_cyl | f_bev]` on the tape.
pub fn reweigh(g: &mut Graph<'_>, w: Var, f_cyl: Var, f_bev: Var) -> Var {
    let cat = g.tape.hcat(f_cyl, f_bev);
    g.tape.matmul(w, cat)
}

/// Plain-matrix form of [`reweigh`].
pub fn reweigh_features(w: &Matrix, f_cyl: &Matrix, f_bev: &Matrix) -> Result<Matrix> {
    let n = w.rows();
    if w.cols() != n || f_cyl.rows() != n || f_bev.rows() != n {
        return Err(Error::shape(
            "reweigh_features",
            alloc::format!(
                "w {}x{}, f_cyl {} rows, f_bev {} rows",
                w.rows(),
                w.cols(),
                f_cyl.rows(),
                f_bev.rows()
            ),
        ));
    }
    Ok(w.matmul(&f_cyl.hcat(f_bev)))
}

/// `A = sigmoid(w · psi(E))`, shape N×2 with columns (background, foreground).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuxHead {
    pub psi: Mlp,
}

impl AuxHead {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, width: usize) -> Self {
        let psi = Mlp::new(store, rng, name, width, width, 2, 0.1);
        AuxHead { psi }
    }

    pub fn forward(&self, g: &mut Graph<'_>, w: Var, e: Var) -> Var {
        let s = self.psi.forward(g, e);
        let m = g.tape.matmul(w, s);
        g.tape.sigmoid(m)
    }
}

/// 1 for points inside any box (inclusive boundaries), else 0.
pub fn foreground_labels(points: &[[f64; 3]], boxes: &[Box3D]) -> Vec<u8> {
    points
        .iter()
        .map(|&p| u8::from(boxes.iter().any(|b| b.contains(p))))
        .collect()
}

/// Which probability the background term of the auxiliary loss penalizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxLossForm {
    /// Background points penalize `a_{i,0}` in `-(1-α) a^γ log(1-a)`.
    /// Foreground and background terms then touch disjoint columns, so a
    /// constant output reaches zero loss without separating the classes.
    AsPrinted,
    /// Background points penalize the foreground column `a_{i,1}`: the
    /// standard binary focal loss on one probability, which separates the
    /// classes.
    #[default]
    ForegroundColumn,
}

/// Mean focal loss over points with its gradient in `A`.
pub fn aux_loss(a: &Matrix, labels: &[u8], form: AuxLossForm) -> Result<(f64, Matrix)> {
    if a.cols() != 2 || a.rows() != labels.len() {
        return Err(Error::shape(
            "aux_loss",
            alloc::format!("A is {}x{}, {} labels", a.rows(), a.cols(), labels.len()),
        ));
    }
    if a.rows() == 0 {
        return Err(Error::EmptyInput("aux_loss"));
    }
    if let Some(i) = labels.iter().position(|&l| l > 1) {
        return Err(Error::Validation(alloc::format!("label {} at point {i} is not 0/1", labels[i])));
    }
    let focal = Focal::default();
    let n = a.rows() as f64;
    let mut grad = Matrix::zeros(a.rows(), 2);
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let (v, d, col) = if y == 1 {
            let (v, d) = focal.positive_prob(a[(i, 1)]);
            (v, d, 1)
        } else {
            let col = match form {
                AuxLossForm::AsPrinted => 0,
                AuxLossForm::ForegroundColumn => 1,
            };
            let (v, d) = focal.negative_prob(a[(i, col)]);
            (v, d, col)
        };
        total += v;
        grad[(i, col)] = d / n;
    }
    Ok((total / n, grad))
}

/// Fraction of points whose foreground probability `a_{i,1}` falls on the
/// correct side of 0.5.
pub fn foreground_accuracy(a: &Matrix, labels: &[u8]) -> f64 {
    if labels.is_empty() {
        return 1.0;
    }
    let hits = labels
        .iter()
        .enumerate()
        .filter(|(i, &y)| (a[(*i, 1)] >= 0.5) == (y == 1))
        .count();
    hits as f64 / labels.len() as f64
}

/// Identity map used when the positional map is disabled.
pub fn identity_map(n: usize) -> Matrix {
    Matrix::identity(n)
}

/// Zero features, used for a disabled view.
pub fn zero_features(n: usize, d: usize) -> Matrix {
    Matrix::zeros(n, d)
}
