//! BEV and cylindrical pillarization: point↔pillar mappings, the per-pillar
//! encoder that builds pseudo-images, and pillar→point feature gathering.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Var, NONE};
use crate::error::{Error, Result};
use crate::math::PI;
#[allow(unused_imports)]
use crate::math::Float;
use crate::nn::{Graph, Linear, ParamStore, RELU_GAIN};
use crate::sparse::CellSet;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Bev,
    Cyl,
}

/// Half-open interval `[min, max)` split into cells of `cell`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisSpec {
    pub min: f64,
    pub max: f64,
    pub cell: f64,
}

impl AxisSpec {
    pub const fn new(min: f64, max: f64, cell: f64) -> Self {
        AxisSpec { min, max, cell }
    }

    /// `ceil(range / cell)`, tolerant to binary rounding of exact ratios.
    pub fn count(&self) -> usize {
        let ratio = (self.max - self.min) / self.cell;
        ((ratio - 1e-9).ceil() as usize).max(1)
    }

    /// Cell index of `v`, or `None` outside `[min, max)`.
    pub fn index(&self, v: f64) -> Option<usize> {
        if !(v >= self.min && v < self.max) {
            return None;
        }
        let i = ((v - self.min) / self.cell).floor() as usize;
        Some(i.min(self.count() - 1))
    }

    pub fn center(&self, i: usize) -> f64 {
        self.min + (i as f64 + 0.5) * self.cell
    }

    pub fn extent(&self) -> f64 {
        self.max - self.min
    }
}

/// Pillar grid for one view.
///
/// BEV axes are `[x, y, z]`; CYL axes are `[rho, phi, z']`. The pillars span
/// the whole of the third axis (z for BEV, rho for CYL), so that axis must
/// have exactly one cell. The remaining two axes form the pseudo-image:
/// rows follow x (BEV) or phi (CYL), columns follow y or z'.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub view: View,
    pub axes: [AxisSpec; 3],
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        for (i, a) in self.axes.iter().enumerate() {
            if !(a.cell > 0.0 && a.cell.is_finite()) {
                return Err(Error::Config(alloc::format!("axis {i}: cell size must be positive")));
            }
            if !(a.max > a.min) {
                return Err(Error::Config(alloc::format!("axis {i}: degenerate range")));
            }
        }
        let span = self.axes[self.span_axis()];
        if span.count() != 1 {
            return Err(Error::Config(alloc::format!(
                "{:?} pillars must span a single bin on their third axis (got {})",
                self.view,
                span.count()
            )));
        }
        Ok(())
    }

    /// Axis that pillars span entirely.
    pub fn span_axis(&self) -> usize {
        match self.view {
            View::Bev => 2,
            View::Cyl => 0,
        }
    }

    /// The two pseudo-image axes, (row axis, column axis).
    pub fn image_axes(&self) -> (usize, usize) {
        match self.view {
            View::Bev => (0, 1),
            View::Cyl => (1, 2),
        }
    }

    /// Pseudo-image `(height, width)`.
    pub fn image_dims(&self) -> (usize, usize) {
        let (r, c) = self.image_axes();
        (self.axes[r].count(), self.axes[c].count())
    }

    /// Coordinates of a Cartesian point in this view's axes.
    pub fn view_coords(&self, p: [f64; 3]) -> [f64; 3] {
        match self.view {
            View::Bev => p,
            View::Cyl => {
                let [rho, phi, z] = cartesian_to_cylinder(p);
                [rho, cylinder_azimuth(phi), z]
            }
        }
    }

    /// Geometric center of an image cell, in view coordinates.
    pub fn cell_center(&self, row: usize, col: usize) -> [f64; 3] {
        let (ra, ca) = self.image_axes();
        let mut c = [0.0; 3];
        c[ra] = self.axes[ra].center(row);
        c[ca] = self.axes[ca].center(col);
        let s = self.span_axis();
        c[s] = self.axes[s].center(0);
        c
    }

    /// Reference VoD ranges and cell sizes.
    pub fn vod(view: View) -> GridSpec {
        match view {
            View::Bev => GridSpec {
                view,
                axes: [
                    AxisSpec::new(0.0, 51.2, 0.16),
                    AxisSpec::new(-25.6, 25.6, 0.16),
                    AxisSpec::new(-3.0, 2.0, 5.0),
                ],
            },
            View::Cyl => GridSpec {
                view,
                axes: [
                    AxisSpec::new(0.0, 72.4, 72.4),
                    AxisSpec::new(0.0, PI, PI / 1280.0),
                    AxisSpec::new(-3.0, 2.0, 0.05),
                ],
            },
        }
    }

    /// Reference Astyx ranges and cell sizes.
    pub fn astyx(view: View) -> GridSpec {
        match view {
            View::Bev => GridSpec {
                view,
                axes: [
                    AxisSpec::new(0.0, 99.84, 0.16),
                    AxisSpec::new(-39.68, 39.68, 0.16),
                    AxisSpec::new(-3.0, 1.0, 4.0),
                ],
            },
            View::Cyl => GridSpec {
                view,
                axes: [
                    AxisSpec::new(0.0, 100.6, 100.6),
                    AxisSpec::new(0.0, PI, PI / 1280.0),
                    AxisSpec::new(-3.0, 1.0, 0.04),
                ],
            },
        }
    }
}

/// `(x, y, z) → (rho, phi, z')` with a quadrant-correct azimuth in (-pi, pi].
/// The origin maps to `phi = 0`.
pub fn cartesian_to_cylinder(p: [f64; 3]) -> [f64; 3] {
    let rho = (p[0] * p[0] + p[1] * p[1]).sqrt();
    let phi = if rho == 0.0 {
        0.0
    } else {
        let a = p[1].atan2(p[0]);
        if a <= -PI {
            PI
        } else {
            a
        }
    };
    [rho, phi, p[2]]
}

pub fn cartesian_to_cylinder_all(points: &[[f64; 3]]) -> Vec<[f64; 3]> {
    points.iter().map(|&p| cartesian_to_cylinder(p)).collect()
}

/// Azimuth used for cylinder pillars: the forward hemisphere occupies
/// `[0, pi]` with +x at `pi/2`.
pub fn cylinder_azimuth(phi: f64) -> f64 {
    phi + PI / 2.0
}

/// Bidirectional point↔pillar index for one view.
#[derive(Debug, Clone, PartialEq)]
pub struct PillarMapping {
    pub spec: GridSpec,
    /// Pillar ordinal per point, `None` for dropped points.
    pub point_to_pillar: Vec<Option<usize>>,
    /// Member point indices per occupied pillar, ascending.
    pub pillar_to_points: Vec<Vec<u32>>,
    pub kept_mask: Vec<bool>,
    /// Occupied image cells; row `i` of a pillar feature matrix belongs to
    /// `cells.cells()[i]`.
    pub cells: CellSet,
    /// View coordinates of every point.
    pub view_coords: Vec<[f64; 3]>,
}

impl PillarMapping {
    pub fn num_points(&self) -> usize {
        self.point_to_pillar.len()
    }

    pub fn num_pillars(&self) -> usize {
        self.pillar_to_points.len()
    }

    pub fn num_kept(&self) -> usize {
        self.kept_mask.iter().filter(|k| **k).count()
    }

    /// `point_to_pillar` in gather-table form.
    pub fn gather_index(&self) -> Vec<u32> {
        self.point_to_pillar
            .iter()
            .map(|p| p.map_or(NONE, |i| i as u32))
            .collect()
    }
}

/// Assigns Cartesian points to pillars of `spec`. Points outside any axis
/// range (including exactly on a max boundary) are dropped.
pub fn build_pillar_mapping(points: &[[f64; 3]], spec: &GridSpec) -> PillarMapping {
    let (ra, ca) = spec.image_axes();
    let (_, width) = spec.image_dims();
    let view_coords: Vec<[f64; 3]> = points.iter().map(|&p| spec.view_coords(p)).collect();
    let mut cell_of_point: Vec<Option<u32>> = Vec::with_capacity(points.len());
    for vc in &view_coords {
        let idx: Option<[usize; 3]> = (|| {
            Some([
                spec.axes[0].index(vc[0])?,
                spec.axes[1].index(vc[1])?,
                spec.axes[2].index(vc[2])?,
            ])
        })();
        cell_of_point.push(idx.map(|i| (i[ra] * width + i[ca]) as u32));
    }
    let (height, width) = spec.image_dims();
    let cells = CellSet::new(height, width, cell_of_point.iter().flatten().copied().collect());
    let mut pillar_to_points = vec![Vec::new(); cells.len()];
    let mut point_to_pillar = Vec::with_capacity(points.len());
    for (n, c) in cell_of_point.iter().enumerate() {
        let p = c.map(|c| cells.position(c).expect("cell registered"));
        if let Some(p) = p {
            pillar_to_points[p].push(n as u32);
        }
        point_to_pillar.push(p);
    }
    PillarMapping {
        spec: *spec,
        kept_mask: point_to_pillar.iter().map(Option::is_some).collect(),
        point_to_pillar,
        pillar_to_points,
        cells,
        view_coords,
    }
}

/// Width of the decorated per-point pillar input.
pub const DECOR_DIM: usize = 9;

/// Per-point pillar input: view coordinates normalized to the axis ranges,
/// offsets to the pillar centroid and offsets to the cell center, both in
/// cell units. Dropped points get zero rows.
pub fn decorate(mapping: &PillarMapping) -> Matrix {
    let spec = &mapping.spec;
    let mut out = Matrix::zeros(mapping.num_points(), DECOR_DIM);
    for (pillar, members) in mapping.pillar_to_points.iter().enumerate() {
        let mut centroid = [0.0; 3];
        for &n in members {
            for (c, v) in centroid.iter_mut().zip(mapping.view_coords[n as usize]) {
                *c += v;
            }
        }
        for c in &mut centroid {
            *c /= members.len() as f64;
        }
        let (row, col) = mapping.cells.row_col(pillar);
        let center = spec.cell_center(row, col);
        for &n in members {
            let vc = mapping.view_coords[n as usize];
            let r = out.row_mut(n as usize);
            for a in 0..3 {
                let axis = spec.axes[a];
                r[a] = (vc[a] - axis.min) / axis.extent();
                r[3 + a] = (vc[a] - centroid[a]) / axis.cell;
                r[6 + a] = (vc[a] - center[a]) / axis.cell;
            }
        }
    }
    out
}

/// Pillar features on the occupied cells of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoImage {
    pub view: View,
    pub cells: CellSet,
    /// One row per occupied cell.
    pub data: Matrix,
}

impl PseudoImage {
    pub fn channels(&self) -> usize {
        self.data.cols()
    }

    pub fn height(&self) -> usize {
        self.cells.height
    }

    pub fn width(&self) -> usize {
        self.cells.width
    }

    /// Dense `C×H×W` buffer; unoccupied cells are zero.
    pub fn to_dense(&self) -> Vec<f64> {
        crate::sparse::to_dense(&self.cells, &self.data)
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.cells
            .position((row * self.width() + col) as u32)
            .map_or(0.0, |i| self.data[(i, channel)])
    }
}

/// Shared point transform + max reduction per pillar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PillarEncoder {
    pub linear: Linear,
}

impl PillarEncoder {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, channels: usize) -> Self {
        PillarEncoder {
            linear: Linear::new(store, rng, name, DECOR_DIM, channels, true, RELU_GAIN),
        }
    }

    pub fn channels(&self) -> usize {
        self.linear.out_dim
    }

    /// Builds pillar features (one row per occupied cell) on the tape.
    pub fn forward(&self, g: &mut Graph<'_>, mapping: &PillarMapping, decorated: Var) -> Var {
        let h = self.linear.forward(g, decorated);
        let h = g.tape.relu(h);
        g.tape.segment_max(h, &mapping.pillar_to_points)
    }
}

/// Pillarizes decorated points into a pseudo-image.
pub fn pillarize(store: &ParamStore, encoder: &PillarEncoder, mapping: &PillarMapping, decorated: &Matrix) -> Result<PseudoImage> {
    if decorated.cols() != encoder.linear.in_dim || decorated.rows() != mapping.num_points() {
        return Err(Error::shape(
            "pillarize",
            alloc::format!(
                "decorated {}x{}, expected {}x{}",
                decorated.rows(),
                decorated.cols(),
                mapping.num_points(),
                encoder.linear.in_dim
            ),
        ));
    }
    let mut g = Graph::new(store);
    let x = g.constant(decorated.clone());
    let f = encoder.forward(&mut g, mapping, x);
    Ok(PseudoImage {
        view: mapping.spec.view,
        cells: mapping.cells.clone(),
        data: g.value(f).clone(),
    })
}

/// Pillar→point gather from a dense `C×H×W` feature image: each kept point
/// receives its pillar's feature vector, dropped points receive zeros.
pub fn gather_point_features(image: &[f64], channels: usize, mapping: &PillarMapping) -> Result<Matrix> {
    let (h, w) = mapping.spec.image_dims();
    if image.len() != channels * h * w {
        return Err(Error::shape(
            "gather_point_features",
            alloc::format!("image has {} values, grid needs {channels}x{h}x{w}", image.len()),
        ));
    }
    let mut out = Matrix::zeros(mapping.num_points(), channels);
    for (n, p) in mapping.point_to_pillar.iter().enumerate() {
        if let Some(p) = p {
            let cell = mapping.cells.cells()[*p] as usize;
            for c in 0..channels {
                out[(n, c)] = image[c * h * w + cell];
            }
        }
    }
    Ok(out)
}
