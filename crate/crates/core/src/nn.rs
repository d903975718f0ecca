//! Parameter storage and the small set of learned layers used by the network.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Gradients, Tape, Var};
#[allow(unused_imports)]
use crate::math::Float;
use crate::tensor::Matrix;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub value: Matrix,
    /// Whether weight decay applies (biases are exempt).
    pub decay: bool,
}

/// Flat, ordered collection of named parameter matrices.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix, decay: bool) -> ParamId {
        self.entries.push(ParamEntry {
            name: name.into(),
            value,
            decay,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.entries[id.0].value
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.as_slice().len()).sum()
    }

    /// Gradient buffers shaped like every parameter, zero-filled.
    pub fn zero_grads(&self) -> Vec<Matrix> {
        self.entries
            .iter()
            .map(|e| Matrix::zeros(e.value.rows(), e.value.cols()))
            .collect()
    }
}

/// A tape bound to a parameter store; parameters become leaves on first use.
pub struct Graph<'a> {
    pub tape: Tape,
    store: &'a ParamStore,
    bound: Vec<Option<Var>>,
}

impl<'a> Graph<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Graph {
            tape: Tape::new(),
            store,
            bound: alloc::vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.tape.leaf(self.store.get(id).clone());
        self.bound[id.0] = Some(v);
        v
    }

    pub fn constant(&mut self, m: Matrix) -> Var {
        self.tape.leaf(m)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        self.tape.value(v)
    }

    /// Adds the gradients of `root` into `acc` (one buffer per parameter).
    pub fn accumulate_param_grads(&self, root: Var, acc: &mut [Matrix]) {
        let mut grads = self.tape.backward(root);
        self.collect(&mut grads, acc);
    }

    pub fn collect(&self, grads: &mut Gradients, acc: &mut [Matrix]) {
        for (i, b) in self.bound.iter().enumerate() {
            if let Some(v) = b {
                if let Some(g) = grads.take(*v) {
                    acc[i].axpy(1.0, &g);
                }
            }
        }
    }
}

/// Uniform initializer with bound `gain * sqrt(3 / fan_in)`.
pub fn uniform_init<R: Rng>(rng: &mut R, rows: usize, cols: usize, fan_in: usize, gain: f64) -> Matrix {
    let bound = gain * (3.0 / fan_in.max(1) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Matrix::from_vec(rows, cols, data)
}

/// ReLU gain (He initialization).
pub const RELU_GAIN: f64 = core::f64::consts::SQRT_2;

/// Affine map `x·W + b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        gain: f64,
    ) -> Self {
        let w = uniform_init(rng, in_dim, out_dim, in_dim, gain);
        let weight = store.add(alloc::format!("{name}.weight"), w, true);
        let bias = bias.then(|| store.add(alloc::format!("{name}.bias"), Matrix::zeros(1, out_dim), false));
        Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let w = g.param(self.weight);
        let y = g.tape.matmul(x, w);
        match self.bias {
            Some(b) => {
                let bv = g.param(b);
                g.tape.add_row(y, bv)
            }
            None => y,
        }
    }
}

/// Two-layer perceptron `Linear → ReLU → Linear`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub hidden: Linear,
    pub output: Linear,
}

impl Mlp {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        hidden_dim: usize,
        out_dim: usize,
        out_gain: f64,
    ) -> Self {
        let hidden = Linear::new(store, rng, &alloc::format!("{name}.0"), in_dim, hidden_dim, true, RELU_GAIN);
        let output = Linear::new(store, rng, &alloc::format!("{name}.1"), hidden_dim, out_dim, true, out_gain);
        Mlp { hidden, output }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let h = self.hidden.forward(g, x);
        let h = g.tape.relu(h);
        self.output.forward(g, h)
    }

    pub fn in_dim(&self) -> usize {
        self.hidden.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.output.out_dim
    }

    /// Sets every output-layer weight and bias to zero.
    pub fn zero_output(&self, store: &mut ParamStore) {
        store.get_mut(self.output.weight).scale(0.0);
        if let Some(b) = self.output.bias {
            store.get_mut(b).scale(0.0);
        }
    }
}

/// Fills a bias parameter with a constant.
pub fn set_bias(store: &mut ParamStore, layer: &Linear, value: f64) {
    if let Some(b) = layer.bias {
        for v in store.get_mut(b).as_mut_slice() {
            *v = value;
        }
    }
}

/// Global L2 norm across all gradient buffers.
pub fn global_norm(grads: &[Matrix]) -> f64 {
    grads.iter().map(Matrix::sq_norm).sum::<f64>().sqrt()
}
