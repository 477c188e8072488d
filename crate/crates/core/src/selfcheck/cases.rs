//! Seeded random inputs for oracle comparisons.

use nalgebra::Vector3;
use ndarray::{Array2, Array3};
use rand::Rng;

use crate::geometry::{Box3D, CameraModel};
use crate::labels::{DepthBinConfig, DepthDistributionMap, HardLabels, LabelSource, SegmentationMap};
use crate::msfe::{FeaturePyramid, ForegroundHeatmap};
use crate::pci::PseudoPoint;
use crate::scene::SceneConfig;
use crate::view::{BevFeatureGrid, BevGridConfig, ContextFeatureMap, Frustum, FrustumEntry};

/// Forward-looking 704×256 camera 1.6 m above the ego origin.
pub fn front_camera() -> CameraModel {
    CameraModel::mounted(0.0, Vector3::new(0.0, 0.0, 1.6), 70f64.to_radians(), 704, 256)
        .expect("valid camera")
}

/// A box somewhere in front of [`front_camera`].
pub fn random_box_ahead<R: Rng>(rng: &mut R) -> Box3D {
    Box3D::new(
        Vector3::new(
            rng.random_range(5.0..50.0),
            rng.random_range(-20.0..20.0),
            rng.random_range(0.0..2.0),
        ),
        [
            rng.random_range(0.5..5.0),
            rng.random_range(0.5..2.5),
            rng.random_range(0.5..3.0),
        ],
        rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
    )
    .expect("valid box")
}

/// A scene small enough for brute-force loops.
pub fn small_scene() -> SceneConfig {
    SceneConfig {
        n_boxes: 10,
        n_cameras: 2,
        clutter_points: 500,
        dropout_fraction: 0.3,
        ..Default::default()
    }
}

fn unit_bins(n: usize) -> DepthBinConfig {
    DepthBinConfig::new(1.0, 1.0 + n as f64, 1.0).expect("valid bins")
}

fn random_distribution<R: Rng>(rng: &mut R, h: usize, w: usize, nb: usize) -> Array3<f64> {
    let mut d = Array3::from_shape_fn((h, w, nb), |_| rng.random_range(0.0..1.0));
    for mut lane in d.lanes_mut(ndarray::Axis(2)) {
        let s = lane.sum();
        lane /= s;
    }
    d
}

/// Hard labels with a random valid mask plus normalized soft labels.
pub fn random_label_pair<R: Rng>(
    rng: &mut R,
    h: usize,
    w: usize,
    nb: usize,
) -> (HardLabels, DepthDistributionMap, SegmentationMap) {
    let bins = unit_bins(nb);
    let mut hard = HardLabels::empty(h, w, bins);
    let p_valid = rng.random_range(0.0..1.0);
    for r in 0..h {
        for c in 0..w {
            if rng.random_bool(p_valid) {
                let b = rng.random_range(0..nb);
                hard.write_cell(r, c, b, bins.bin_center(b), rng.random_bool(0.5), LabelSource::Real);
            }
        }
    }
    let soft_depth = DepthDistributionMap {
        values: random_distribution(rng, h, w, nb),
        bins,
    };
    let soft_seg = SegmentationMap {
        values: Array2::from_shape_fn((h, w), |_| rng.random_range(0.0..1.0)),
    };
    (hard, soft_depth, soft_seg)
}

/// Pseudo points over a `width × height` image, a few of them outside the
/// image or the depth range.
pub fn random_pseudo_points<R: Rng>(
    rng: &mut R,
    n: usize,
    width: usize,
    height: usize,
    bins: &DepthBinConfig,
) -> Vec<PseudoPoint> {
    (0..n)
        .map(|i| PseudoPoint {
            u: rng.random_range(-10.0..width as f64 + 10.0),
            v: rng.random_range(-10.0..height as f64 + 10.0),
            depth: rng.random_range(bins.d_min - 0.5..bins.d_max + 0.5),
            source_box: i,
        })
        .collect()
}

/// Inputs for one pooling call.
#[derive(Debug, Clone)]
pub struct PoolCase {
    pub ctx: ContextFeatureMap,
    pub depth: DepthDistributionMap,
    pub seg: SegmentationMap,
    pub frustum: Frustum,
    pub bev: BevGridConfig,
    pub threshold: f64,
}

/// Random pooling inputs. Frustum locations are drawn directly, partly
/// outside the BEV volume.
pub fn random_pool_case<R: Rng>(
    rng: &mut R,
    max_h: usize,
    max_w: usize,
    max_bins: usize,
    max_bev: usize,
) -> PoolCase {
    let h = rng.random_range(1..=max_h);
    let w = rng.random_range(1..=max_w);
    let nb = rng.random_range(2..=max_bins.max(2));
    let ch = rng.random_range(1..=4);
    let bev = BevGridConfig {
        range_xy: 10.0,
        grid_h: rng.random_range(1..=max_bev),
        grid_w: rng.random_range(1..=max_bev),
        z_range: (-2.0, 3.0),
    };
    let mut entries = Vec::with_capacity(h * w * nb);
    for row in 0..h {
        for col in 0..w {
            for bin in 0..nb {
                entries.push(FrustumEntry {
                    row,
                    col,
                    bin,
                    p_ego: Vector3::new(
                        rng.random_range(-11.0..11.0),
                        rng.random_range(-11.0..11.0),
                        rng.random_range(-2.5..3.5),
                    ),
                });
            }
        }
    }
    PoolCase {
        ctx: ContextFeatureMap::new(Array3::from_shape_fn((h, w, ch), |_| rng.random_range(-1.0..1.0)))
            .expect("finite"),
        depth: DepthDistributionMap {
            values: random_distribution(rng, h, w, nb),
            bins: unit_bins(nb),
        },
        seg: SegmentationMap {
            values: Array2::from_shape_fn((h, w), |_| rng.random_range(0.0..1.0)),
        },
        frustum: Frustum {
            entries,
            feat_h: h,
            feat_w: w,
            n_bins: nb,
        },
        bev,
        threshold: rng.random_range(0.0..0.5),
    }
}

/// Random pyramid with stride-16 size `h16 × w16` and a heatmap in `[0, 1]`.
pub fn random_pyramid<R: Rng>(
    rng: &mut R,
    h16: usize,
    w16: usize,
    ch: usize,
) -> (FeaturePyramid, ForegroundHeatmap) {
    let mut level = |k: usize| Array3::from_shape_fn((h16 * k, w16 * k, ch), |_| rng.random_range(-1.0..1.0));
    let (f4, f8, f16) = (level(4), level(2), level(1));
    let hm = Array2::from_shape_fn((4 * h16, 4 * w16), |_| rng.random_range(0.0..1.0));
    (
        FeaturePyramid::new(f4, f8, f16).expect("consistent sizes"),
        ForegroundHeatmap::new(hm).expect("values in [0, 1]"),
    )
}

/// `(student, teacher)` grids. With `well_separated` every teacher cell has
/// norm ≥ 0.5 and differs from the student by at least 0.1; otherwise about
/// a quarter of the teacher cells are zero.
pub fn random_grid_pair<R: Rng>(
    rng: &mut R,
    h: usize,
    w: usize,
    ch: usize,
    well_separated: bool,
) -> (BevFeatureGrid, BevFeatureGrid) {
    let cfg = BevGridConfig {
        grid_h: h,
        grid_w: w,
        ..Default::default()
    };
    let mut t = Array3::zeros((h, w, ch));
    let mut s = Array3::zeros((h, w, ch));
    for i in 0..h {
        for j in 0..w {
            let zero_teacher = !well_separated && rng.random_bool(0.25);
            let tv: Vec<f64> = (0..ch).map(|_| rng.random_range(-1.0..1.0)).collect();
            let tn = tv.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-3);
            let dv: Vec<f64> = (0..ch).map(|_| rng.random_range(-1.0..1.0)).collect();
            let dn = dv.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-3);
            let t_scale = if well_separated { rng.random_range(0.5..2.0) / tn } else { 1.0 };
            let d_scale = if well_separated { rng.random_range(0.1..1.0) / dn } else { 1.0 };
            for k in 0..ch {
                let tk = if zero_teacher { 0.0 } else { tv[k] * t_scale };
                t[[i, j, k]] = tk;
                s[[i, j, k]] = tk + dv[k] * d_scale;
            }
        }
    }
    (
        BevFeatureGrid { values: s, cfg },
        BevFeatureGrid { values: t, cfg },
    )
}
