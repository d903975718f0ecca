//! Exact sparse evaluation of bias-free 3×3 convolutions.
//!
//! A bias-free convolution followed by a ReLU maps an all-zero neighborhood
//! to zero, so a stack of such layers over a mostly-empty pseudo-image only
//! has non-zero activations near occupied cells. Evaluating the stack on the
//! cells that are both reachable from the input support and needed by the
//! requested outputs reproduces the zero-padded dense computation exactly.

use alloc::vec::Vec;

use crate::autograd::{Var, NONE};
use crate::nn::{Graph, ParamId};
use crate::tensor::Matrix;

/// Number of taps of a 3×3 kernel. Tap `t` reads offset
/// `(t / 3 - 1, t % 3 - 1)` in (row, column).
pub const TAPS: usize = 9;

/// Sorted set of cells on an `height × width` grid (linear index
/// `row * width + col`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellSet {
    pub height: usize,
    pub width: usize,
    cells: Vec<u32>,
}

impl CellSet {
    pub fn new(height: usize, width: usize, mut cells: Vec<u32>) -> Self {
        cells.sort_unstable();
        cells.dedup();
        debug_assert!(cells.last().is_none_or(|&c| (c as usize) < height * width));
        CellSet { height, width, cells }
    }

    pub fn full(height: usize, width: usize) -> Self {
        CellSet {
            height,
            width,
            cells: (0..(height * width) as u32).collect(),
        }
    }

    pub fn cells(&self) -> &[u32] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn position(&self, cell: u32) -> Option<usize> {
        self.cells.binary_search(&cell).ok()
    }

    pub fn row_col(&self, i: usize) -> (usize, usize) {
        let c = self.cells[i] as usize;
        (c / self.width, c % self.width)
    }

    /// All cells within Chebyshev distance `r`, clipped to the grid.
    pub fn dilate(&self, r: usize) -> CellSet {
        if r == 0 {
            return self.clone();
        }
        let (h, w) = (self.height as isize, self.width as isize);
        let ri = r as isize;
        let mut out = Vec::with_capacity(self.cells.len() * (2 * r + 1) * (2 * r + 1));
        for i in 0..self.cells.len() {
            let (row, col) = self.row_col(i);
            let (row, col) = (row as isize, col as isize);
            for dr in -ri..=ri {
                let rr = row + dr;
                if rr < 0 || rr >= h {
                    continue;
                }
                for dc in -ri..=ri {
                    let cc = col + dc;
                    if cc >= 0 && cc < w {
                        out.push((rr * w + cc) as u32);
                    }
                }
            }
        }
        CellSet::new(self.height, self.width, out)
    }

    /// Output cells of a stride-2, padding-1, 3×3 convolution whose window
    /// touches this set. The output grid is `ceil(H/2) × ceil(W/2)`.
    pub fn stride2_support(&self) -> CellSet {
        let (ho, wo) = (self.height.div_ceil(2), self.width.div_ceil(2));
        let mut out = Vec::with_capacity(self.cells.len() * 4);
        for i in 0..self.cells.len() {
            let (r, c) = self.row_col(i);
            let rows = (r.saturating_sub(1)).div_ceil(2)..=((r + 1) / 2).min(ho - 1);
            for orow in rows {
                let cols = (c.saturating_sub(1)).div_ceil(2)..=((c + 1) / 2).min(wo - 1);
                for ocol in cols {
                    out.push((orow * wo + ocol) as u32);
                }
            }
        }
        CellSet::new(ho, wo, out)
    }

    /// Cells present in both sets.
    pub fn intersect(&self, other: &CellSet) -> CellSet {
        debug_assert_eq!((self.height, self.width), (other.height, other.width));
        let (mut i, mut j) = (0, 0);
        let mut out = Vec::new();
        while i < self.cells.len() && j < other.cells.len() {
            match self.cells[i].cmp(&other.cells[j]) {
                core::cmp::Ordering::Less => i += 1,
                core::cmp::Ordering::Greater => j += 1,
                core::cmp::Ordering::Equal => {
                    out.push(self.cells[i]);
                    i += 1;
                    j += 1;
                }
            }
        }
        CellSet {
            height: self.height,
            width: self.width,
            cells: out,
        }
    }

    /// For every cell of `self`, the row of that cell in `other` (or NONE).
    pub fn lookup_in(&self, other: &CellSet) -> Vec<u32> {
        self.cells
            .iter()
            .map(|c| other.position(*c).map_or(NONE, |p| p as u32))
            .collect()
    }
}

/// Neighbor table mapping each output cell's taps to rows of `input`.
pub fn conv_table(input: &CellSet, output: &CellSet, stride: usize) -> Vec<u32> {
    let (h, w) = (input.height as isize, input.width as isize);
    let mut table = Vec::with_capacity(output.len() * TAPS);
    for i in 0..output.len() {
        let (orow, ocol) = output.row_col(i);
        for t in 0..TAPS {
            let r = (orow * stride) as isize + (t / 3) as isize - 1;
            let c = (ocol * stride) as isize + (t % 3) as isize - 1;
            let src = if r < 0 || r >= h || c < 0 || c >= w {
                NONE
            } else {
                input.position((r * w + c) as u32).map_or(NONE, |p| p as u32)
            };
            table.push(src);
        }
    }
    table
}

/// Feature rows attached to a cell set, living on a tape.
#[derive(Debug, Clone)]
pub struct SparseMap {
    pub cells: CellSet,
    pub features: Var,
}

/// 3×3 convolution of `input` evaluated on `output` cells.
pub fn conv3x3(g: &mut Graph<'_>, input: &SparseMap, weight: ParamId, output: CellSet, stride: usize) -> SparseMap {
    let table = conv_table(&input.cells, &output, stride);
    let w = g.param(weight);
    let features = g.tape.sparse_conv(input.features, w, table, TAPS);
    SparseMap { cells: output, features }
}

/// Re-indexes `input` onto `target` cells; absent cells are zero.
pub fn realign(g: &mut Graph<'_>, input: &SparseMap, target: &CellSet) -> SparseMap {
    if input.cells == *target {
        return input.clone();
    }
    let idx = target.lookup_in(&input.cells);
    let features = g.tape.gather(input.features, idx);
    SparseMap {
        cells: target.clone(),
        features,
    }
}

/// Reference dense zero-padded 3×3 convolution over a `C×H×W` buffer with a
/// tap-major `(9·C) × C'` weight. Returns `C'×H'×W'`.
pub fn dense_conv3x3(input: &[f64], c_in: usize, h: usize, w: usize, weight: &Matrix, stride: usize) -> (Vec<f64>, usize, usize) {
    assert_eq!(input.len(), c_in * h * w);
    assert_eq!(weight.rows(), TAPS * c_in);
    let c_out = weight.cols();
    let (ho, wo) = if stride == 1 { (h, w) } else { (h.div_ceil(stride), w.div_ceil(stride)) };
    let mut out = alloc::vec![0.0; c_out * ho * wo];
    for orow in 0..ho {
        for ocol in 0..wo {
            for t in 0..TAPS {
                let r = (orow * stride) as isize + (t / 3) as isize - 1;
                let c = (ocol * stride) as isize + (t % 3) as isize - 1;
                if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
                    continue;
                }
                let (r, c) = (r as usize, c as usize);
                for ci in 0..c_in {
                    let x = input[(ci * h + r) * w + c];
                    if x == 0.0 {
                        continue;
                    }
                    let wrow = weight.row(t * c_in + ci);
                    for (co, wv) in wrow.iter().enumerate() {
                        out[(co * ho + orow) * wo + ocol] += x * wv;
                    }
                }
            }
        }
    }
    (out, ho, wo)
}

/// Scatters sparse rows into a dense `C×H×W` buffer.
pub fn to_dense(cells: &CellSet, features: &Matrix) -> Vec<f64> {
    let c = features.cols();
    let hw = cells.height * cells.width;
    let mut out = alloc::vec![0.0; c * hw];
    for (i, &cell) in cells.cells().iter().enumerate() {
        for ch in 0..c {
            out[ch * hw + cell as usize] = features[(i, ch)];
        }
    }
    out
}
