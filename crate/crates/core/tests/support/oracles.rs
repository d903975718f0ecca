//! Brute-force reference implementations. Each one is written from the
//! definition and shares no code with the library.

use mvfan_core::projection::PillarMapping;
use mvfan_core::{Box3D, Matrix};
use rand::Rng;

fn d2(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]) * (a[i] - b[i])).sum()
}

/// Full sort of all pairwise distances, ties by index.
pub fn knn_centers(points: &[[f64; 3]], k: usize) -> Vec<[f64; 3]> {
    let k = k.clamp(1, points.len());
    points
        .iter()
        .map(|&q| {
            let mut all: Vec<(f64, usize)> = points.iter().enumerate().map(|(i, &p)| (d2(p, q), i)).collect();
            all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let mut c = [0.0; 3];
            for &(_, i) in &all[..k] {
                for a in 0..3 {
                    c[a] += points[i][a];
                }
            }
            c.map(|v| v / k as f64)
        })
        .collect()
}

/// Greedy farthest point sampling recomputing every min-distance from
/// scratch at each step.
pub fn fps(points: &[[f64; 3]], m: usize, seed: usize) -> Vec<usize> {
    let mut sel = vec![seed];
    while sel.len() < m {
        let mut best: Option<(f64, usize)> = None;
        for i in 0..points.len() {
            if sel.contains(&i) {
                continue;
            }
            let md = sel.iter().map(|&s| d2(points[i], points[s])).fold(f64::INFINITY, f64::min);
            if best.is_none_or(|(bd, _)| md > bd) {
                best = Some((md, i));
            }
        }
        sel.push(best.expect("points remain").1);
    }
    sel
}

/// Rotates the point by `-yaw` about the box center and compares against
/// the half extents.
pub fn point_in_box(b: &Box3D, p: [f64; 3]) -> bool {
    let (dx, dy) = (p[0] - b.cx, p[1] - b.cy);
    let (s, c) = (-b.yaw).sin_cos();
    let u = dx * c - dy * s;
    let v = dx * s + dy * c;
    u.abs() <= b.l / 2.0 && v.abs() <= b.w / 2.0 && (p[2] - b.cz).abs() <= b.h / 2.0
}

fn corners(b: &Box3D) -> Vec<[f64; 2]> {
    let (ux, uy) = (b.yaw.cos(), b.yaw.sin());
    let (vx, vy) = (-uy, ux);
    [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)]
        .iter()
        .map(|&(a, c)| {
            [
                b.cx + a * b.l / 2.0 * ux + c * b.w / 2.0 * vx,
                b.cy + a * b.l / 2.0 * uy + c * b.w / 2.0 * vy,
            ]
        })
        .collect()
}

fn inside_convex(poly: &[[f64; 2]], p: [f64; 2]) -> bool {
    let n = poly.len();
    (0..n).all(|i| {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= -1e-12
    })
}

fn segment_hit(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> Option<[f64; 2]> {
    let r = [p2[0] - p1[0], p2[1] - p1[1]];
    let s = [q2[0] - q1[0], q2[1] - q1[1]];
    let den = r[0] * s[1] - r[1] * s[0];
    if den.abs() < 1e-15 {
        return None;
    }
    let w = [q1[0] - p1[0], q1[1] - p1[1]];
    let t = (w[0] * s[1] - w[1] * s[0]) / den;
    let u = (w[0] * r[1] - w[1] * r[0]) / den;
    ((0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u)).then(|| [p1[0] + t * r[0], p1[1] + t * r[1]])
}

/// Area of a point set's convex hull (monotone chain plus shoelace).
fn hull_area(mut pts: Vec<[f64; 2]>) -> f64 {
    pts.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap().then(a[1].partial_cmp(&b[1]).unwrap()));
    pts.dedup();
    if pts.len() < 3 {
        return 0.0;
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut hull: Vec<[f64; 2]> = Vec::new();
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> = if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    let n = hull.len();
    0.5 * (0..n)
        .map(|i| hull[i][0] * hull[(i + 1) % n][1] - hull[(i + 1) % n][0] * hull[i][1])
        .sum::<f64>()
        .abs()
}

/// Intersection of two rectangles as the hull of mutually contained
/// corners and edge crossings.
pub fn bev_intersection(a: &Box3D, b: &Box3D) -> f64 {
    let (pa, pb) = (corners(a), corners(b));
    let mut pts: Vec<[f64; 2]> = pa.iter().copied().filter(|&p| inside_convex(&pb, p)).collect();
    pts.extend(pb.iter().copied().filter(|&p| inside_convex(&pa, p)));
    for i in 0..4 {
        for j in 0..4 {
            if let Some(x) = segment_hit(pa[i], pa[(i + 1) % 4], pb[j], pb[(j + 1) % 4]) {
                pts.push(x);
            }
        }
    }
    hull_area(pts)
}

pub fn iou_bev(a: &Box3D, b: &Box3D) -> f64 {
    let i = bev_intersection(a, b);
    i / (a.l * a.w + b.l * b.w - i)
}

pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    let lo = (a.cz - a.h / 2.0).max(b.cz - b.h / 2.0);
    let hi = (a.cz + a.h / 2.0).min(b.cz + b.h / 2.0);
    let i = bev_intersection(a, b) * (hi - lo).max(0.0);
    i / (a.l * a.w * a.h + b.l * b.w * b.h - i)
}

/// BEV IoU by uniform sampling over the bounding rectangle of both boxes.
pub fn iou_bev_monte_carlo<R: Rng>(a: &Box3D, b: &Box3D, samples: usize, rng: &mut R) -> f64 {
    let all: Vec<[f64; 2]> = corners(a).into_iter().chain(corners(b)).collect();
    let (x0, x1) = (all.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min), all.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max));
    let (y0, y1) = (all.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min), all.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max));
    let (mut both, mut either) = (0usize, 0usize);
    for _ in 0..samples {
        let p = [rng.random_range(x0..x1), rng.random_range(y0..y1), 0.0];
        let ina = point_in_box(&Box3D { cz: 0.0, ..*a }, p);
        let inb = point_in_box(&Box3D { cz: 0.0, ..*b }, p);
        both += usize::from(ina && inb);
        either += usize::from(ina || inb);
    }
    if either == 0 {
        0.0
    } else {
        both as f64 / either as f64
    }
}

/// Explicit loop over points: each kept point scatters its row into its
/// cell by max, then every point reads its cell back.
pub fn scatter_gather(features: &Matrix, cell_of: &[Option<usize>], num_cells: usize) -> (Vec<Vec<f64>>, Matrix) {
    let c = features.cols();
    let mut image = vec![vec![f64::NEG_INFINITY; c]; num_cells];
    let mut touched = vec![false; num_cells];
    for (n, cell) in cell_of.iter().enumerate() {
        if let Some(k) = *cell {
            touched[k] = true;
            for ch in 0..c {
                image[k][ch] = image[k][ch].max(features[(n, ch)]);
            }
        }
    }
    for (k, t) in touched.iter().enumerate() {
        if !t {
            image[k] = vec![0.0; c];
        }
    }
    let mut back = Matrix::zeros(cell_of.len(), c);
    for (n, cell) in cell_of.iter().enumerate() {
        if let Some(k) = *cell {
            back.row_mut(n).copy_from_slice(&image[k]);
        }
    }
    (image, back)
}

/// Image cell of every point from the floor formula on the view
/// coordinates, with half-open axis intervals.
pub fn cells_of(mapping: &PillarMapping) -> Vec<Option<usize>> {
    let spec = &mapping.spec;
    // ceil(range / cell), ignoring the last-ulp excess of ratios such as 51.2 / 0.16.
    let count = |a: usize| (((spec.axes[a].max - spec.axes[a].min) / spec.axes[a].cell) - 1e-9).ceil() as usize;
    let (ra, ca) = spec.image_axes();
    mapping
        .view_coords
        .iter()
        .map(|vc| {
            let mut idx = [0usize; 3];
            for a in 0..3 {
                let ax = spec.axes[a];
                if !(vc[a] >= ax.min && vc[a] < ax.max) {
                    return None;
                }
                idx[a] = (((vc[a] - ax.min) / ax.cell).floor() as usize).min(count(a) - 1);
            }
            Some(idx[ra] * count(ca) + idx[ca])
        })
        .collect()
}
