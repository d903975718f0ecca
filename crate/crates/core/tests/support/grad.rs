//! Central-difference checks for every learned block on miniature shapes
//! (N ≤ 9, d ≤ 8). Each block output is contracted with a fixed random
//! matrix so every output entry contributes to the scalar being
//! differentiated.

use mvfan_core::autograd::Var;
use mvfan_core::backbone::{RadarAssistedBlock, UpPlan, Backbone};
use mvfan_core::gradcheck::{check_all_params, check_input, FD_STEP};
use mvfan_core::head::HeadTrunk;
use mvfan_core::mvfe::{aux_loss, positional_input, AuxHead, AuxLossForm, PositionalEncoder, PositionalMap, ResNet2d};
use mvfan_core::nn::{Graph, ParamStore};
use mvfan_core::pointops::idw_weights;
use mvfan_core::projection::{build_pillar_mapping, decorate, GridSpec, PillarEncoder, View};
use mvfan_core::sparse::{CellSet, SparseMap};
use mvfan_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Bound on the relative error.
pub const TOL: f64 = 1e-5;
/// Entries probed per parameter tensor.
const PER_PARAM: usize = 40;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random(rows: usize, cols: usize, lo: f64, hi: f64, r: &mut ChaCha8Rng) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    for v in m.as_mut_slice() {
        *v = r.random_range(lo..hi);
    }
    m
}

fn cloud(n: usize, r: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| [r.random_range(1.0..9.0), r.random_range(-4.0..4.0), r.random_range(-2.0..1.0)])
        .collect()
}

/// Worst relative error over all parameters of `store` for the scalar
/// `Σ build(store) ⊙ C`. Parameters named with the `unused` prefix are
/// expected to get no gradient; every other one must get some.
fn check_params(store: &ParamStore, seed: u64, unused: Option<&str>, build: impl Fn(&mut Graph<'_>) -> Var) -> f64 {
    let shape = {
        let mut g = Graph::new(store);
        let out = build(&mut g);
        g.value(out).shape()
    };
    let c = random(shape.0, shape.1, -1.0, 1.0, &mut rng(seed));
    let mut g = Graph::new(store);
    let out = build(&mut g);
    let root = g.tape.dot_const(out, &c);
    let mut grads = store.zero_grads();
    g.accumulate_param_grads(root, &mut grads);
    for (i, gr) in grads.iter().enumerate() {
        let name = &store.entries()[i].name;
        let idle = unused.is_some_and(|u| name.starts_with(u));
        assert_eq!(gr.sq_norm() > 0.0, !idle, "{name}: unexpected gradient presence");
    }
    let f = |s: &ParamStore| {
        let mut g = Graph::new(s);
        let out = build(&mut g);
        g.value(out).as_slice().iter().zip(c.as_slice()).map(|(a, b)| a * b).sum()
    };
    let res = check_all_params(store, &grads, PER_PARAM, FD_STEP, f);
    for &(i, e) in &res {
        assert!(e.is_finite(), "{} gave a non-finite error", store.entries()[i].name);
    }
    res.iter().map(|&(_, e)| e).fold(0.0, f64::max)
}

/// Worst relative error with respect to one constant input.
fn check_wrt_input(store: &ParamStore, x: &Matrix, seed: u64, build: impl Fn(&mut Graph<'_>, Var) -> Var) -> f64 {
    let shape = {
        let mut g = Graph::new(store);
        let xv = g.constant(x.clone());
        let out = build(&mut g, xv);
        g.value(out).shape()
    };
    let c = random(shape.0, shape.1, -1.0, 1.0, &mut rng(seed));
    let mut g = Graph::new(store);
    let xv = g.constant(x.clone());
    let out = build(&mut g, xv);
    let root = g.tape.dot_const(out, &c);
    let grads = g.tape.backward(root);
    let analytic = grads.get(xv).cloned().expect("input reaches the output");
    assert!(analytic.sq_norm() > 0.0);
    check_input(x, &analytic, FD_STEP, |probe| {
        let mut g = Graph::new(store);
        let xv = g.constant(probe.clone());
        let out = build(&mut g, xv);
        g.value(out).as_slice().iter().zip(c.as_slice()).map(|(a, b)| a * b).sum()
    })
}

pub fn pillar_encoder() -> f64 {
    let mut worst = 0.0f64;
    let mut r = rng(1);
    let pts = cloud(8, &mut r);
    let mapping = build_pillar_mapping(&pts, &GridSpec::vod(View::Bev));
    let decorated = decorate(&mapping);
    let mut store = ParamStore::new();
    let enc = PillarEncoder::new(&mut store, &mut r, "pillar", 5);
    let e = check_params(&store, 2, None, |g| {
        let x = g.constant(decorated.clone());
        enc.forward(g, &mapping, x)
    });
    worst = worst.max(e);
    let e = check_wrt_input(&store, &decorated, 3, |g, x| enc.forward(g, &mapping, x));
    worst = worst.max(e);
    worst
}

fn sparse_input(r: &mut ChaCha8Rng, c: usize) -> (CellSet, Matrix) {
    let cells = CellSet::new(6, 7, vec![2, 9, 10, 23, 31, 40]);
    let feats = random(cells.len(), c, -1.0, 1.0, r);
    (cells, feats)
}

pub fn resnet2d() -> f64 {
    let mut worst = 0.0f64;
    let mut r = rng(4);
    let (cells, feats) = sparse_input(&mut r, 3);
    let mut store = ParamStore::new();
    let net = ResNet2d::new(&mut store, &mut r, "resnet", 3, 4, 2);
    let need = CellSet::full(6, 7);
    let build = |g: &mut Graph<'_>, x: Var| {
        let input = SparseMap {
            cells: cells.clone(),
            features: x,
        };
        net.forward(g, &input, &need).features
    };
    let e = check_params(&store, 5, None, |g| {
        let x = g.constant(feats.clone());
        build(g, x)
    });
    worst = worst.max(e);
    let e = check_wrt_input(&store, &feats, 6, build);
    worst = worst.max(e);
    worst
}

pub fn positional_encoder() -> f64 {
    let mut worst = 0.0f64;
    let mut r = rng(7);
    let input = positional_input(&cloud(9, &mut r), 4, 0.1).unwrap();
    let mut store = ParamStore::new();
    let pe = PositionalEncoder::new(&mut store, &mut r, "pe", 5);
    let e = check_params(&store, 8, None, |g| {
        let x = g.constant(input.clone());
        pe.forward(g, x)
    });
    worst = worst.max(e);
    worst
}

pub fn positional_map() -> f64 {
    let mut worst = 0.0f64;
    let mut r = rng(9);
    let e_in = random(7, 5, -1.0, 1.0, &mut r);
    let mut store = ParamStore::new();
    let pm = PositionalMap::new(&mut store, &mut r, "map", 5, -1.0);
    let e = check_params(&store, 10, None, |g| {
        let x = g.constant(e_in.clone());
        pm.forward(g, x)
    });
    worst = worst.max(e);
    let e = check_wrt_input(&store, &e_in, 11, |g, x| pm.forward(g, x));
    worst = worst.max(e);
    worst
}

pub fn aux_head() -> f64 {
    let mut worst = 0.0f64;
    let mut r = rng(12);
    let e_in = random(6, 4, -1.0, 1.0, &mut r);
    let w = random(6, 6, 0.0, 1.0, &mut r);
    let mut store = ParamStore::new();
    let aux = AuxHead::new(&mut store, &mut r, "aux", 4);
    let e = check_params(&store, 13, None, |g| {
        let wv = g.constant(w.clone());
        let x = g.constant(e_in.clone());
        aux.forward(g, wv, x)
    });
    worst = worst.max(e);
    let e = check_wrt_input(&store, &w, 14, |g, wv| {
        let x = g.constant(e_in.clone());
        aux.forward(g, wv, x)
    });
    worst = worst.max(e);
    worst
}

pub fn aux_loss_gradient() -> f64 {
    let mut worst = 0.0f64;
    let mut r = rng(15);
    let a = random(8, 2, 0.05, 0.95, &mut r);
    let labels = [0, 1, 1, 0, 0, 1, 0, 0];
    for form in [AuxLossForm::AsPrinted, AuxLossForm::ForegroundColumn] {
        let (_, grad) = aux_loss(&a, &labels, form).unwrap();
        let e = check_input(&a, &grad, FD_STEP * 0.01, |p| aux_loss(p, &labels, form).unwrap().0);
        worst = worst.max(e);
    }
    worst
}

pub fn radar_assisted_block() -> f64 {
    let mut worst = 0.0f64;
    let mut r = rng(16);
    let m = random(7, 4, -1.0, 1.0, &mut r);
    let ti = random(7, mvfan_core::backbone::THETA_INPUT_DIM, -1.0, 1.0, &mut r);
    let mut store = ParamStore::new();
    let block = RadarAssistedBlock::new(&mut store, &mut r, "enc", 4, 6, -1.0);
    let e = check_params(&store, 17, None, |g| {
        let mv = g.constant(m.clone());
        let tv = g.constant(ti.clone());
        block.forward(g, mv, tv)
    });
    worst = worst.max(e);
    let e = check_wrt_input(&store, &m, 18, |g, mv| {
        let tv = g.constant(ti.clone());
        block.forward(g, mv, tv)
    });
    worst = worst.max(e);
    worst
}

pub fn decoder_stage() -> f64 {
    let mut worst = 0.0f64;
    let mut r = rng(19);
    let fine = cloud(9, &mut r);
    let coarse: Vec<[f64; 3]> = fine.iter().step_by(2).copied().collect();
    let (idx, weights, k) = idw_weights(&coarse, &fine, 3).unwrap();
    let up = UpPlan { idx, weights, k };
    let coarse_f = random(coarse.len(), 6, -1.0, 1.0, &mut r);
    let skip = random(fine.len(), 3, -1.0, 1.0, &mut r);
    let mut store = ParamStore::new();
    let bb = Backbone::new(&mut store, &mut r, "bb", 3, 1, -1.0);
    let e = check_params(&store, 20, Some("bb.enc"), |g| {
        let c = g.constant(coarse_f.clone());
        let s = g.constant(skip.clone());
        bb.decoder_stage(g, 0, c, s, &up)
    });
    worst = worst.max(e);
    let e = check_wrt_input(&store, &coarse_f, 21, |g, c| {
        let s = g.constant(skip.clone());
        bb.decoder_stage(g, 0, c, s, &up)
    });
    worst = worst.max(e);
    worst
}

pub fn head_trunk() -> f64 {
    let mut worst = 0.0f64;
    let mut r = rng(22);
    let (cells, feats) = sparse_input(&mut r, 3);
    let mut store = ParamStore::new();
    let trunk = HeadTrunk::new(&mut store, &mut r, "head", 3, 4, 2, 2, 2);
    let extra = CellSet::new(3, 4, vec![0, 11]);
    let build = |g: &mut Graph<'_>, x: Var| {
        let dense = SparseMap {
            cells: cells.clone(),
            features: x,
        };
        let v = trunk.forward(g, &dense, &extra);
        g.tape.hcat(v.cls, v.reg)
    };
    let e = check_params(&store, 23, None, |g| {
        let x = g.constant(feats.clone());
        build(g, x)
    });
    worst = worst.max(e);
    let e = check_wrt_input(&store, &feats, 24, build);
    worst = worst.max(e);
    worst
}

/// Every block with its worst relative error over parameters and inputs.
pub fn all_blocks() -> Vec<(&'static str, f64)> {
    vec![
        ("pillar encoder", pillar_encoder()),
        ("resnet2d", resnet2d()),
        ("positional encoder", positional_encoder()),
        ("positional map", positional_map()),
        ("aux head", aux_head()),
        ("aux loss gradient", aux_loss_gradient()),
        ("radar assisted block", radar_assisted_block()),
        ("decoder stage", decoder_stage()),
        ("head trunk", head_trunk()),
    ]
}
