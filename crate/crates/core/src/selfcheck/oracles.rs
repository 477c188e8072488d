//! Brute-force reference implementations.
//!
//! Each function recomputes a library result by the most literal route
//! available and shares no code path with the implementation it checks.

use std::collections::{BTreeSet, HashSet};

use nalgebra::Vector3;
use ndarray::{Array2, Array3};

use crate::geometry::{Box3D, CameraModel, PointCloud};
use crate::labels::{DepthBinConfig, DepthDistributionMap, HardLabels, SegmentationMap};
use crate::pci::PseudoPoint;
use crate::scene::Scene;
use crate::view::{BevGridConfig, Frustum};

/// Corners from an explicit yaw rotation matrix, in the library's order.
pub fn corners(center: [f64; 3], size: [f64; 3], yaw: f64) -> [[f64; 3]; 8] {
    let rot = [[yaw.cos(), -yaw.sin()], [yaw.sin(), yaw.cos()]];
    let (l, w, h) = (size[0] / 2.0, size[1] / 2.0, size[2] / 2.0);
    let mut out = [[0.0; 3]; 8];
    let mut k = 0;
    for dz in [-h, h] {
        for (dx, dy) in [(l, w), (-l, w), (-l, -w), (l, -w)] {
            out[k] = [
                center[0] + rot[0][0] * dx + rot[0][1] * dy,
                center[1] + rot[1][0] * dx + rot[1][1] * dy,
                center[2] + dz,
            ];
            k += 1;
        }
    }
    out
}

/// Membership by moving the point into the box frame and comparing to the
/// half sizes.
pub fn inside_box(b: &Box3D, p: &Vector3<f64>) -> bool {
    let (dx, dy, dz) = (p.x - b.center.x, p.y - b.center.y, p.z - b.center.z);
    let lx = dx * (-b.yaw).cos() - dy * (-b.yaw).sin();
    let ly = dx * (-b.yaw).sin() + dy * (-b.yaw).cos();
    lx.abs() <= b.size[0] / 2.0 && ly.abs() <= b.size[1] / 2.0 && dz.abs() <= b.size[2] / 2.0
}

/// `(x1, y1, x2, y2)` over the corners that `project_point` accepts.
pub fn projected_corner_bounds(cam: &CameraModel, b: &Box3D) -> Option<[f64; 4]> {
    let mut acc: Option<[f64; 4]> = None;
    for c in b.corners() {
        if let Some(p) = cam.project_point(&c) {
            acc = Some(match acc {
                None => [p.u, p.v, p.u, p.v],
                Some([x1, y1, x2, y2]) => [x1.min(p.u), y1.min(p.v), x2.max(p.u), y2.max(p.v)],
            });
        }
    }
    acc
}

/// Distinct feature cells hit by some point with in-range depth.
pub fn count_hit_cells(
    cloud: &PointCloud,
    cam: &CameraModel,
    bins: &DepthBinConfig,
    stride: usize,
) -> usize {
    let mut cells = HashSet::new();
    for p in &cloud.points {
        let Some(pr) = cam.project_point(p) else {
            continue;
        };
        if pr.depth < bins.d_min || pr.depth >= bins.d_max {
            continue;
        }
        cells.insert(((pr.v as usize) / stride, (pr.u as usize) / stride));
    }
    cells.len()
}

/// Per-cell selection between hard and soft labels.
pub fn merge_select(
    hard: &HardLabels,
    soft_depth: &DepthDistributionMap,
    soft_seg: &SegmentationMap,
) -> (Array3<f64>, Array2<f64>) {
    let (h, w, nb) = soft_depth.values.dim();
    let mut d = Array3::zeros((h, w, nb));
    let mut s = Array2::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            let use_hard = hard.valid_mask[[r, c]];
            for b in 0..nb {
                d[[r, c, b]] = if use_hard {
                    hard.depth.values[[r, c, b]]
                } else {
                    soft_depth.values[[r, c, b]]
                };
            }
            s[[r, c]] = if use_hard {
                hard.seg.values[[r, c]]
            } else {
                soft_seg.values[[r, c]]
            };
        }
    }
    (d, s)
}

/// Per-box point counts of the combined cloud, via world coordinates.
pub fn combined_counts(scene: &Scene) -> Vec<usize> {
    let cur = scene.current();
    let world_to_cur = cur.ego_pose.inverse();
    cur.boxes
        .iter()
        .map(|b| {
            let own = cur.lidar.points.iter().filter(|p| inside_box(b, p)).count();
            let moved: usize = scene
                .adjacent()
                .iter()
                .map(|f| {
                    f.lidar
                        .points
                        .iter()
                        .map(|p| world_to_cur.apply(&f.ego_pose.apply(p)))
                        .filter(|p| cur.boxes.iter().any(|sb| sb.is_stationary && inside_box(sb, p)))
                        .filter(|p| inside_box(b, p))
                        .count()
                })
                .sum();
            own + moved
        })
        .collect()
}

/// Valid mask after injection: real cells plus in-range pseudo cells that
/// were empty before.
pub fn injected_mask(
    hard: &HardLabels,
    pseudo: &[PseudoPoint],
    stride: usize,
) -> Array2<bool> {
    let (h, w) = hard.valid_mask.dim();
    let bins = hard.depth.bins;
    let mut out = hard.valid_mask.clone();
    for p in pseudo {
        if p.u < 0.0 || p.v < 0.0 || p.depth < bins.d_min || p.depth >= bins.d_max {
            continue;
        }
        let (r, c) = ((p.v as usize) / stride, (p.u as usize) / stride);
        if r < h && c < w && !hard.valid_mask[[r, c]] {
            out[[r, c]] = true;
        }
    }
    out
}

/// BEV cell of `p`, computed from the cell size.
pub fn bev_index(cfg: &BevGridConfig, p: &Vector3<f64>) -> Option<(usize, usize)> {
    let r = cfg.range_xy;
    let inside = p.x >= -r && p.x < r && p.y >= -r && p.y < r;
    if !inside || p.z < cfg.z_range.0 || p.z >= cfg.z_range.1 {
        return None;
    }
    let i = ((p.x + r) * cfg.grid_h as f64 / (2.0 * r)) as usize;
    let j = ((p.y + r) * cfg.grid_w as f64 / (2.0 * r)) as usize;
    Some((i.min(cfg.grid_h - 1), j.min(cfg.grid_w - 1)))
}

/// Triple loop over rows, columns and bins, taking each location from the
/// frustum by flat index.
pub fn pool(
    ctx: &Array3<f64>,
    depth: &Array3<f64>,
    seg: &Array2<f64>,
    frustum: &Frustum,
    cfg: &BevGridConfig,
    seg_threshold: f64,
) -> Array3<f64> {
    let (h, w, ch) = ctx.dim();
    let nb = depth.dim().2;
    let mut out = Array3::zeros((cfg.grid_h, cfg.grid_w, ch));
    for r in 0..h {
        for c in 0..w {
            if seg[[r, c]] < seg_threshold {
                continue;
            }
            for b in 0..nb {
                let p = frustum.entries[(r * w + c) * nb + b].p_ego;
                if let Some((i, j)) = bev_index(cfg, &p) {
                    for k in 0..ch {
                        out[[i, j, k]] += depth[[r, c, b]] * seg[[r, c]] * ctx[[r, c, k]];
                    }
                }
            }
        }
    }
    out
}

/// BEV cells reachable from feature cell `(r, c)`.
pub fn column_cells(frustum: &Frustum, cfg: &BevGridConfig, r: usize, c: usize) -> BTreeSet<(usize, usize)> {
    let nb = frustum.n_bins;
    (0..nb)
        .filter_map(|b| bev_index(cfg, &frustum.entries[(r * frustum.feat_w + c) * nb + b].p_ego))
        .collect()
}

/// Mean over `f × f` blocks.
pub fn block_mean(x: &Array2<f64>, f: usize) -> Array2<f64> {
    let (h, w) = x.dim();
    let mut out = Array2::zeros((h / f, w / f));
    for r in 0..h {
        for c in 0..w {
            out[[r / f, c / f]] += x[[r, c]] / (f * f) as f64;
        }
    }
    out
}

/// `F16 + DS²(F8 · DS²(S4f)) + DS⁴(F4 · S4f)` written out per output element.
pub fn msfe_literal(
    f4: &Array3<f64>,
    f8: &Array3<f64>,
    f16: &Array3<f64>,
    s4: &Array2<f64>,
    beta: f64,
) -> Array3<f64> {
    let (h16, w16, ch) = f16.dim();
    let s4f = s4.mapv(|v| if v < beta { 0.0 } else { v });
    let mut out = f16.clone();
    for i in 0..h16 {
        for j in 0..w16 {
            for k in 0..ch {
                let mut t8 = 0.0;
                for a in 0..2 {
                    for b in 0..2 {
                        let (r8, c8) = (2 * i + a, 2 * j + b);
                        let mut m = 0.0;
                        for p in 0..2 {
                            for q in 0..2 {
                                m += s4f[[2 * r8 + p, 2 * c8 + q]];
                            }
                        }
                        t8 += f8[[r8, c8, k]] * (m / 4.0);
                    }
                }
                let mut t4 = 0.0;
                for a in 0..4 {
                    for b in 0..4 {
                        let (r4, c4) = (4 * i + a, 4 * j + b);
                        t4 += f4[[r4, c4, k]] * s4f[[r4, c4]];
                    }
                }
                out[[i, j, k]] = f16[[i, j, k]] + t8 / 4.0 + t4 / 16.0;
            }
        }
    }
    out
}

/// Focal loss summed one cell at a time.
pub fn focal_per_cell(pred: &Array2<f64>, target: &Array2<f64>, alpha: f64, gamma: f64, eps: f64) -> f64 {
    let mut pos = 0.0;
    let mut neg = 0.0;
    let mut n_pos = 0usize;
    for (&p, &t) in pred.iter().zip(target.iter()) {
        let p = p.max(eps).min(1.0 - eps);
        if t == 1.0 {
            n_pos += 1;
            pos += -((1.0 - p).powf(alpha)) * p.ln();
        } else {
            neg += -((1.0 - t).powf(gamma)) * p.powf(alpha) * (1.0 - p).ln();
        }
    }
    (pos + neg) / (n_pos.max(1) as f64)
}

/// Distillation loss by per-cell summation.
pub fn distill_loss(t: &Array3<f64>, s: &Array3<f64>, eps: f64) -> (f64, usize) {
    let (h, w, ch) = t.dim();
    let mut total = 0.0;
    let mut n = 0;
    for i in 0..h {
        for j in 0..w {
            let tn = (0..ch).map(|k| t[[i, j, k]].powi(2)).sum::<f64>().sqrt();
            if tn < eps {
                continue;
            }
            let dn = (0..ch)
                .map(|k| (t[[i, j, k]] - s[[i, j, k]]).powi(2))
                .sum::<f64>()
                .sqrt();
            total += dn / tn;
            n += 1;
        }
    }
    (if n == 0 { 0.0 } else { total / n as f64 }, n)
}
