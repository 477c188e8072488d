//! Foreground-filtered lift-splat pooling.
//!
//! Every feature cell is lifted along its pixel ray at each depth-bin center
//! (the frustum). Pooling splats `depth(cell, bin) · seg(cell) · ctx(cell)`
//! into the BEV cell under each frustum point, skipping cells whose
//! segmentation is below `seg_threshold`. The student grid pools soft labels;
//! the teacher grid pools the hard/soft merge.

use nalgebra::Vector3;
use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CameraModel;
use crate::labels::{
    feature_dims, merge_labels, DepthBinConfig, DepthDistributionMap, HardLabels,
    SegmentationMap,
};
use crate::scene::cell_center;

pub const DEFAULT_SEG_THRESHOLD: f64 = 0.25;

/// Context features `C`, shape `(h, w, channels)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextFeatureMap {
    pub values: Array3<f64>,
}

impl ContextFeatureMap {
    pub fn new(values: Array3<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("ctx", "non-finite feature"));
        }
        Ok(Self { values })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.values.dim()
    }
}

/// Square BEV grid centered on the ego origin. Row index follows x, column
/// index follows y; both axes span `[−range_xy, range_xy)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BevGridConfig {
    pub range_xy: f64,
    pub grid_h: usize,
    pub grid_w: usize,
    pub z_range: (f64, f64),
}

impl Default for BevGridConfig {
    fn default() -> Self {
        Self {
            range_xy: 51.2,
            grid_h: 128,
            grid_w: 128,
            z_range: (-5.0, 3.0),
        }
    }
}

impl BevGridConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.range_xy > 0.0 && self.range_xy.is_finite()) {
            return Err(Error::invalid("range_xy", "must be > 0"));
        }
        if self.grid_h == 0 {
            return Err(Error::invalid("grid_h", "must be ≥ 1"));
        }
        if self.grid_w == 0 {
            return Err(Error::invalid("grid_w", "must be ≥ 1"));
        }
        if !(self.z_range.0 < self.z_range.1) {
            return Err(Error::invalid("z_range", "min must be below max"));
        }
        Ok(())
    }

    /// BEV cell holding `p`, or `None` outside the grid volume.
    pub fn cell_of(&self, p: &Vector3<f64>) -> Option<(usize, usize)> {
        let r = self.range_xy;
        if !(p.x >= -r && p.x < r && p.y >= -r && p.y < r) {
            return None;
        }
        if !(p.z >= self.z_range.0 && p.z < self.z_range.1) {
            return None;
        }
        let i = ((p.x + r) / (2.0 * r) * self.grid_h as f64).floor() as usize;
        let j = ((p.y + r) / (2.0 * r) * self.grid_w as f64).floor() as usize;
        Some((i.min(self.grid_h - 1), j.min(self.grid_w - 1)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BevFeatureGrid {
    /// Shape `(grid_h, grid_w, channels)`.
    pub values: Array3<f64>,
    pub cfg: BevGridConfig,
}

impl BevFeatureGrid {
    pub fn zeros(cfg: BevGridConfig, channels: usize) -> Self {
        Self {
            values: Array3::zeros((cfg.grid_h, cfg.grid_w, channels)),
            cfg,
        }
    }

    pub fn new(values: Array3<f64>, cfg: BevGridConfig) -> Result<Self> {
        let (h, w, _) = values.dim();
        if (h, w) != (cfg.grid_h, cfg.grid_w) {
            return Err(Error::shape(
                "bev grid",
                &[cfg.grid_h, cfg.grid_w],
                &[h, w],
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("bev", "non-finite value"));
        }
        Ok(Self { values, cfg })
    }

    pub fn channels(&self) -> usize {
        self.values.dim().2
    }

    /// Per-cell L2 norm over channels.
    pub fn occupancy(&self) -> Array2<f64> {
        self.values
            .map_axis(Axis(2), |lane| lane.iter().map(|v| v * v).sum::<f64>().sqrt())
    }
}

/// One lifted frustum point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrustumEntry {
    pub row: usize,
    pub col: usize,
    pub bin: usize,
    pub p_ego: Vector3<f64>,
}

/// All `(cell, bin)` pairs of a camera in `(row, col, bin)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Frustum {
    pub entries: Vec<FrustumEntry>,
    pub feat_h: usize,
    pub feat_w: usize,
    pub n_bins: usize,
}

impl Frustum {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Lifts each feature cell center to every bin-center depth.
pub fn build_frustum(
    cam: &CameraModel,
    bins: &DepthBinConfig,
    feature_stride: usize,
) -> Result<Frustum> {
    bins.validate()?;
    let (fh, fw) = feature_dims(cam, feature_stride)?;
    let nb = bins.n_bins();
    let mut entries = Vec::with_capacity(fh * fw * nb);
    for row in 0..fh {
        for col in 0..fw {
            let (u, v) = cell_center(row, col, feature_stride);
            for bin in 0..nb {
                entries.push(FrustumEntry {
                    row,
                    col,
                    bin,
                    p_ego: cam.unproject(u, v, bins.bin_center(bin)),
                });
            }
        }
    }
    Ok(Frustum {
        entries,
        feat_h: fh,
        feat_w: fw,
        n_bins: nb,
    })
}

fn check_pool_shapes(
    ctx: &ContextFeatureMap,
    depth: &DepthDistributionMap,
    seg: &SegmentationMap,
    frustum: &Frustum,
) -> Result<()> {
    let (h, w, _) = ctx.dims();
    let want = [frustum.feat_h, frustum.feat_w];
    if [h, w] != want {
        return Err(Error::shape("pool ctx", &want, &[h, w]));
    }
    let dshape = depth.values.shape();
    let dwant = [frustum.feat_h, frustum.feat_w, frustum.n_bins];
    if dshape != dwant {
        return Err(Error::shape("pool depth", &dwant, dshape));
    }
    if seg.values.shape() != want {
        return Err(Error::shape("pool seg", &want, seg.values.shape()));
    }
    Ok(())
}

/// Foreground-filtered splat of context features into the BEV grid.
///
/// Entries are visited in frustum order, so the floating-point summation
/// order is fixed.
pub fn sa_bev_pool(
    ctx: &ContextFeatureMap,
    depth: &DepthDistributionMap,
    seg: &SegmentationMap,
    frustum: &Frustum,
    bev_cfg: &BevGridConfig,
    seg_threshold: f64,
) -> Result<BevFeatureGrid> {
    bev_cfg.validate()?;
    check_pool_shapes(ctx, depth, seg, frustum)?;
    let channels = ctx.dims().2;
    let mut out = BevFeatureGrid::zeros(*bev_cfg, channels);
    let ctx_v = &ctx.values;
    let depth_v = &depth.values;
    let seg_v = &seg.values;
    for e in &frustum.entries {
        let s = seg_v[[e.row, e.col]];
        if s < seg_threshold {
            continue;
        }
        let Some((i, j)) = bev_cfg.cell_of(&e.p_ego) else {
            continue;
        };
        let weight = depth_v[[e.row, e.col, e.bin]] * s;
        if weight == 0.0 {
            continue;
        }
        for k in 0..channels {
            out.values[[i, j, k]] += weight * ctx_v[[e.row, e.col, k]];
        }
    }
    Ok(out)
}

/// Student grid `B_s`: pooling of the soft labels.
pub fn student_bev(
    ctx: &ContextFeatureMap,
    soft_depth: &DepthDistributionMap,
    soft_seg: &SegmentationMap,
    frustum: &Frustum,
    bev_cfg: &BevGridConfig,
    seg_threshold: f64,
) -> Result<BevFeatureGrid> {
    sa_bev_pool(ctx, soft_depth, soft_seg, frustum, bev_cfg, seg_threshold)
}

/// Teacher grid `B_t`: pooling of the hard labels with soft labels filling
/// cells the hard labels leave empty.
pub fn teacher_bev(
    ctx: &ContextFeatureMap,
    hard: &HardLabels,
    soft_depth: &DepthDistributionMap,
    soft_seg: &SegmentationMap,
    frustum: &Frustum,
    bev_cfg: &BevGridConfig,
    seg_threshold: f64,
) -> Result<BevFeatureGrid> {
    let (d, s) = merge_labels(hard, soft_depth, soft_seg)?;
    sa_bev_pool(ctx, &d, &s, frustum, bev_cfg, seg_threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RigidTransform;
    use crate::labels::LabelSource;

    fn cam() -> CameraModel {
        // forward-looking camera 1 m above the ego origin
        let r = nalgebra::Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0);
        let t = RigidTransform::new(r, -(r * Vector3::new(0.0, 0.0, 1.0))).unwrap();
        CameraModel::new(40.0, 40.0, 32.0, 32.0, t, 64, 64).unwrap()
    }

    fn bins() -> DepthBinConfig {
        DepthBinConfig::new(2.0, 10.0, 2.0).unwrap()
    }

    fn small_bev() -> BevGridConfig {
        BevGridConfig {
            range_xy: 12.0,
            grid_h: 16,
            grid_w: 16,
            z_range: (-5.0, 3.0),
        }
    }

    #[test]
    fn frustum_size_and_order() {
        let f = build_frustum(&cam(), &bins(), 16).unwrap();
        assert_eq!(f.len(), 4 * 4 * 4);
        for w in f.entries.windows(2) {
            assert!((w[0].row, w[0].col, w[0].bin) < (w[1].row, w[1].col, w[1].bin));
        }
    }

    #[test]
    fn principal_cell_on_axis() {
        // cell (1,1) at stride 32 is centered at pixel (48, 48), 16 px
        // right of and below the principal point
        let f = build_frustum(&cam(), &bins(), 32).unwrap();
        let e = f
            .entries
            .iter()
            .find(|e| e.row == 1 && e.col == 1 && e.bin == 2)
            .unwrap();
        assert!((e.p_ego - Vector3::new(7.0, -2.8, -1.8)).norm() < 1e-12);
    }

    #[test]
    fn cell_mapping_half_open() {
        let g = small_bev();
        assert_eq!(g.cell_of(&Vector3::new(-12.0, -12.0, 0.0)), Some((0, 0)));
        assert_eq!(g.cell_of(&Vector3::new(12.0, 0.0, 0.0)), None);
        assert_eq!(g.cell_of(&Vector3::new(11.99, 11.99, 0.0)), Some((15, 15)));
        assert_eq!(g.cell_of(&Vector3::new(0.0, 0.0, 3.0)), None);
    }

    fn inputs(seg_value: f64) -> (ContextFeatureMap, DepthDistributionMap, SegmentationMap) {
        let ctx = ContextFeatureMap::new(Array3::from_shape_fn((4, 4, 2), |(r, c, k)| {
            (r + 2 * c + k) as f64 * 0.25
        }))
        .unwrap();
        let depth = DepthDistributionMap {
            values: Array3::from_elem((4, 4, 4), 0.25),
            bins: bins(),
        };
        let seg = SegmentationMap {
            values: Array2::from_elem((4, 4), seg_value),
        };
        (ctx, depth, seg)
    }

    #[test]
    fn zero_segmentation_filters_everything() {
        let f = build_frustum(&cam(), &bins(), 16).unwrap();
        let (ctx, depth, seg) = inputs(0.0);
        let g = sa_bev_pool(&ctx, &depth, &seg, &f, &small_bev(), 0.25).unwrap();
        assert!(g.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_term_accumulation() {
        let f = build_frustum(&cam(), &bins(), 16).unwrap();
        // row 2, col 1, bin 1: pixel (24, 40) at depth 5
        let first = f.entries[2 * 4 * 4 + 4 + 1];
        let single = Frustum {
            entries: vec![first],
            ..f.clone()
        };
        let (mut ctx, mut depth, seg) = inputs(1.0);
        ctx.values[[first.row, first.col, 0]] = 1.0;
        ctx.values[[first.row, first.col, 1]] = 2.0;
        depth.values[[first.row, first.col, first.bin]] = 0.7;
        let g = sa_bev_pool(&ctx, &depth, &seg, &single, &small_bev(), 0.25).unwrap();
        let (i, j) = small_bev().cell_of(&first.p_ego).unwrap();
        assert!((g.values[[i, j, 0]] - 0.7).abs() < 1e-15);
        assert!((g.values[[i, j, 1]] - 1.4).abs() < 1e-15);
        assert_eq!(g.values.iter().filter(|&&v| v != 0.0).count(), 2);
    }

    #[test]
    fn student_is_pool_and_teacher_degenerates() {
        let f = build_frustum(&cam(), &bins(), 16).unwrap();
        let (ctx, depth, seg) = inputs(0.6);
        let a = sa_bev_pool(&ctx, &depth, &seg, &f, &small_bev(), 0.25).unwrap();
        let s = student_bev(&ctx, &depth, &seg, &f, &small_bev(), 0.25).unwrap();
        assert_eq!(a, s);
        let hard = HardLabels::empty(4, 4, bins());
        let t = teacher_bev(&ctx, &hard, &depth, &seg, &f, &small_bev(), 0.25).unwrap();
        assert_eq!(t, s);

        let mut hard = HardLabels::empty(4, 4, bins());
        hard.write_cell(1, 2, 3, 9.0, true, LabelSource::Real);
        let t = teacher_bev(&ctx, &hard, &depth, &seg, &f, &small_bev(), 0.25).unwrap();
        assert_ne!(t, s);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let f = build_frustum(&cam(), &bins(), 16).unwrap();
        let (ctx, depth, _) = inputs(1.0);
        let seg = SegmentationMap {
            values: Array2::zeros((3, 4)),
        };
        assert!(sa_bev_pool(&ctx, &depth, &seg, &f, &small_bev(), 0.25).is_err());
    }
}
