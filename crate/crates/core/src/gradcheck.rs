//! Central-difference gradient checking for parameters and inputs.

use alloc::vec::Vec;

use crate::nn::{ParamId, ParamStore};
use crate::tensor::Matrix;

/// Finite-difference step used throughout the test suite.
pub const FD_STEP: f64 = 1e-4;

/// `|a - b| / max(|a|, |b|, floor)`. The floor keeps exactly-zero pairs
/// from dividing by zero.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    let d = (a - b).abs();
    let s = a.abs().max(b.abs()).max(floor);
    if d == 0.0 {
        0.0
    } else {
        d / s
    }
}

/// Worst relative error between an analytic gradient and central
/// differences of `f` over the listed entries of one parameter.
pub fn check_param(store: &ParamStore, id: ParamId, entries: &[usize], analytic: &Matrix, step: f64, f: impl Fn(&ParamStore) -> f64) -> f64 {
    let mut probe = store.clone();
    let mut worst: f64 = 0.0;
    for &k in entries {
        let x = store.get(id).as_slice()[k];
        probe.get_mut(id).as_mut_slice()[k] = x + step;
        let up = f(&probe);
        probe.get_mut(id).as_mut_slice()[k] = x - step;
        let down = f(&probe);
        probe.get_mut(id).as_mut_slice()[k] = x;
        let numeric = (up - down) / (2.0 * step);
        worst = worst.max(relative_error(analytic.as_slice()[k], numeric, 1e-8));
    }
    worst
}

/// As [`check_param`] for every parameter of a store, sampling at most
/// `per_param` entries (evenly spaced) from each.
pub fn check_all_params(store: &ParamStore, analytic: &[Matrix], per_param: usize, step: f64, f: impl Fn(&ParamStore) -> f64) -> Vec<(usize, f64)> {
    (0..store.len())
        .map(|i| {
            let n = store.get(ParamId(i)).as_slice().len();
            let stride = n.div_ceil(per_param.max(1)).max(1);
            let entries: Vec<usize> = (0..n).step_by(stride).collect();
            (i, check_param(store, ParamId(i), &entries, &analytic[i], step, &f))
        })
        .collect()
}

/// Worst relative error for gradients with respect to an input matrix.
pub fn check_input(x: &Matrix, analytic: &Matrix, step: f64, f: impl Fn(&Matrix) -> f64) -> f64 {
    let mut probe = x.clone();
    let mut worst: f64 = 0.0;
    for k in 0..x.as_slice().len() {
        let v = x.as_slice()[k];
        probe.as_mut_slice()[k] = v + step;
        let up = f(&probe);
        probe.as_mut_slice()[k] = v - step;
        let down = f(&probe);
        probe.as_mut_slice()[k] = v;
        worst = worst.max(relative_error(analytic.as_slice()[k], (up - down) / (2.0 * step), 1e-8));
    }
    worst
}
