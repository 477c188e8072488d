//! Depth/foreground label maps on the feature grid.
//!
//! Hard labels come from projected LiDAR points and are sparse; soft labels
//! are dense predicted distributions. [`merge_labels`] mixes the two per cell
//! through the valid mask `M`:
//!
//! ```text
//! D̄ = M·D̂ + (1 − M)·D        S̄ = M·Ŝ + (1 − M)·S
//! ```

use ndarray::{Array2, Array3, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Box3D, CameraModel, PointCloud};

/// Uniform depth discretization over the half-open range `[d_min, d_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepthBinConfig {
    pub d_min: f64,
    pub d_max: f64,
    pub bin_size: f64,
}

impl Default for DepthBinConfig {
    fn default() -> Self {
        Self {
            d_min: 1.0,
            d_max: 60.0,
            bin_size: 0.5,
        }
    }
}

impl DepthBinConfig {
    pub fn new(d_min: f64, d_max: f64, bin_size: f64) -> Result<Self> {
        let c = Self {
            d_min,
            d_max,
            bin_size,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d_min > 0.0 && self.d_min.is_finite()) {
            return Err(Error::invalid("d_min", format!("must be > 0, got {}", self.d_min)));
        }
        if !(self.d_max > self.d_min && self.d_max.is_finite()) {
            return Err(Error::invalid(
                "d_max",
                format!("must exceed d_min = {}, got {}", self.d_min, self.d_max),
            ));
        }
        if !(self.bin_size > 0.0 && self.bin_size.is_finite()) {
            return Err(Error::invalid(
                "bin_size",
                format!("must be > 0, got {}", self.bin_size),
            ));
        }
        if self.n_bins() < 2 {
            return Err(Error::invalid("bin_size", "fewer than 2 bins"));
        }
        Ok(())
    }

    /// `⌈(d_max − d_min) / bin_size⌉`.
    pub fn n_bins(&self) -> usize {
        ((self.d_max - self.d_min) / self.bin_size).ceil() as usize
    }

    /// Bin holding depth `d`, or `None` outside `[d_min, d_max)`.
    pub fn bin_index(&self, d: f64) -> Option<usize> {
        if !(d >= self.d_min && d < self.d_max) {
            return None;
        }
        let b = ((d - self.d_min) / self.bin_size).floor() as usize;
        Some(b.min(self.n_bins() - 1))
    }

    pub fn bin_center(&self, b: usize) -> f64 {
        self.d_min + (b as f64 + 0.5) * self.bin_size
    }

    pub fn contains(&self, d: f64) -> bool {
        self.bin_index(d).is_some()
    }
}

/// Per-cell categorical depth distributions, shape `(h, w, n_bins)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthDistributionMap {
    pub values: Array3<f64>,
    pub bins: DepthBinConfig,
}

impl DepthDistributionMap {
    pub fn zeros(h: usize, w: usize, bins: DepthBinConfig) -> Self {
        Self {
            values: Array3::zeros((h, w, bins.n_bins())),
            bins,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        let s = self.values.shape();
        (s[0], s[1])
    }

    /// Maximum over cells of `|Σ_b p_b − 1|`, skipping all-zero rows.
    pub fn max_normalization_error(&self) -> f64 {
        self.values
            .lanes(Axis(2))
            .into_iter()
            .map(|row| row.sum())
            .filter(|&s| s != 0.0)
            .map(|s| (s - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Argmax bin-center depth per cell, 0 for all-zero rows.
    pub fn expected_argmax_depth(&self) -> Array2<f64> {
        let (h, w) = self.dims();
        Array2::from_shape_fn((h, w), |(r, c)| {
            let row = self.values.slice(ndarray::s![r, c, ..]);
            let mut best: Option<(usize, f64)> = None;
            for (b, &p) in row.iter().enumerate() {
                if p > 0.0 && best.is_none_or(|(_, bp)| p > bp) {
                    best = Some((b, p));
                }
            }
            best.map_or(0.0, |(b, _)| self.bins.bin_center(b))
        })
    }
}

/// Foreground probabilities in `[0, 1]`, shape `(h, w)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationMap {
    pub values: Array2<f64>,
}

impl SegmentationMap {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("seg", "values must lie in [0, 1]"));
        }
        Ok(Self { values })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.values.dim()
    }
}

/// Where a hard-label cell came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Empty,
    Real,
    Pseudo,
}

/// Sparse LiDAR-derived labels `D̂`, `Ŝ` and the valid mask `M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardLabels {
    pub depth: DepthDistributionMap,
    pub seg: SegmentationMap,
    pub valid_mask: Array2<bool>,
    /// Depth of the point that won each valid cell; 0 elsewhere.
    pub point_depth: Array2<f64>,
    pub source: Array2<LabelSource>,
}

impl HardLabels {
    pub fn empty(h: usize, w: usize, bins: DepthBinConfig) -> Self {
        Self {
            depth: DepthDistributionMap::zeros(h, w, bins),
            seg: SegmentationMap {
                values: Array2::zeros((h, w)),
            },
            valid_mask: Array2::from_elem((h, w), false),
            point_depth: Array2::zeros((h, w)),
            source: Array2::from_elem((h, w), LabelSource::Empty),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.valid_mask.dim()
    }

    pub fn valid_count(&self) -> usize {
        self.valid_mask.iter().filter(|&&m| m).count()
    }

    /// Overwrites cell `(r, c)` with a one-hot at `bin`.
    pub(crate) fn write_cell(
        &mut self,
        r: usize,
        c: usize,
        bin: usize,
        depth: f64,
        foreground: bool,
        source: LabelSource,
    ) {
        self.depth
            .values
            .slice_mut(ndarray::s![r, c, ..])
            .fill(0.0);
        self.depth.values[[r, c, bin]] = 1.0;
        self.seg.values[[r, c]] = if foreground { 1.0 } else { 0.0 };
        self.valid_mask[[r, c]] = true;
        self.point_depth[[r, c]] = depth;
        self.source[[r, c]] = source;
    }

    /// Checks the one-hot/binary structure on valid cells and zeros elsewhere.
    pub fn check_invariants(&self) -> Result<()> {
        let (h, w) = self.dims();
        for r in 0..h {
            for c in 0..w {
                let row = self.depth.values.slice(ndarray::s![r, c, ..]);
                let seg = self.seg.values[[r, c]];
                if self.valid_mask[[r, c]] {
                    let ones = row.iter().filter(|&&v| v == 1.0).count();
                    let zeros = row.iter().filter(|&&v| v == 0.0).count();
                    if ones != 1 || zeros != row.len() - 1 || !(seg == 0.0 || seg == 1.0) {
                        return Err(Error::invalid("hard_labels", format!("cell ({r}, {c})")));
                    }
                } else if row.iter().any(|&v| v != 0.0) || seg != 0.0 {
                    return Err(Error::invalid(
                        "hard_labels",
                        format!("invalid cell ({r}, {c}) carries data"),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Feature-grid dimensions for an image at `stride`.
pub fn feature_dims(cam: &CameraModel, stride: usize) -> Result<(usize, usize)> {
    let (w, h) = (cam.image_width as usize, cam.image_height as usize);
    if stride == 0 || w % stride != 0 || h % stride != 0 {
        return Err(Error::invalid(
            "feature_stride",
            format!("{stride} must divide the image size {w}×{h}"),
        ));
    }
    Ok((h / stride, w / stride))
}

/// Projects every point into the camera and writes one-hot depth labels on
/// the stride-`feature_stride` grid.
///
/// Points outside the image or the bin range are skipped. When several
/// points share a cell the nearest wins; exact depth ties resolve to
/// foreground, so the result does not depend on point order.
pub fn generate_hard_labels(
    points: &PointCloud,
    boxes: &[Box3D],
    cam: &CameraModel,
    bins: &DepthBinConfig,
    feature_stride: usize,
) -> Result<HardLabels> {
    points.expect_ego()?;
    bins.validate()?;
    let (fh, fw) = feature_dims(cam, feature_stride)?;
    let mut labels = HardLabels::empty(fh, fw, *bins);
    let stride = feature_stride as f64;
    for p in &points.points {
        let Some(pr) = cam.project_point(p) else {
            continue;
        };
        let Some(bin) = bins.bin_index(pr.depth) else {
            continue;
        };
        let r = ((pr.v / stride).floor() as usize).min(fh - 1);
        let c = ((pr.u / stride).floor() as usize).min(fw - 1);
        let fg = boxes.iter().any(|b| b.contains(p));
        if labels.valid_mask[[r, c]] {
            let cur = labels.point_depth[[r, c]];
            let current_fg = labels.seg.values[[r, c]] == 1.0;
            let wins = pr.depth < cur || (pr.depth == cur && fg && !current_fg);
            if !wins {
                continue;
            }
        }
        labels.write_cell(r, c, bin, pr.depth, fg, crate::labels::LabelSource::Real);
    }
    Ok(labels)
}

/// Mixes hard and soft labels through the valid mask.
pub fn merge_labels(
    hard: &HardLabels,
    soft_depth: &DepthDistributionMap,
    soft_seg: &SegmentationMap,
) -> Result<(DepthDistributionMap, SegmentationMap)> {
    if hard.depth.values.shape() != soft_depth.values.shape() {
        return Err(Error::shape(
            "merge_labels depth",
            hard.depth.values.shape(),
            soft_depth.values.shape(),
        ));
    }
    if hard.seg.values.shape() != soft_seg.values.shape() {
        return Err(Error::shape(
            "merge_labels seg",
            hard.seg.values.shape(),
            soft_seg.values.shape(),
        ));
    }
    if hard.depth.bins != soft_depth.bins {
        return Err(Error::invalid(
            "bins",
            "hard and soft depth maps use different bin configs",
        ));
    }
    let mut depth = soft_depth.values.clone();
    let mut seg = soft_seg.values.clone();
    Zip::from(depth.lanes_mut(Axis(2)))
        .and(hard.depth.values.lanes(Axis(2)))
        .and(&hard.valid_mask)
        .for_each(|mut out, h, &m| {
            if m {
                out.assign(&h);
            }
        });
    Zip::from(&mut seg)
        .and(&hard.seg.values)
        .and(&hard.valid_mask)
        .for_each(|s, &h, &m| {
            if m {
                *s = h;
            }
        });
    Ok((
        DepthDistributionMap {
            values: depth,
            bins: soft_depth.bins,
        },
        SegmentationMap { values: seg },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{FrameTag, RigidTransform};
    use nalgebra::Vector3;

    fn cam() -> CameraModel {
        CameraModel::new(100.0, 100.0, 32.0, 32.0, RigidTransform::identity(), 64, 64).unwrap()
    }

    fn cloud(pts: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(pts.iter().map(|&p| Vector3::from(p)).collect(), FrameTag::Ego(0))
    }

    #[test]
    fn default_bins() {
        let b = DepthBinConfig::default();
        assert_eq!(b.n_bins(), 118);
        assert_eq!(b.bin_index(10.2), Some(18));
        assert_eq!(b.bin_index(60.0), None);
        assert_eq!(b.bin_index(0.99), None);
        assert_eq!(b.bin_index(1.0), Some(0));
        assert_eq!(b.bin_index(59.999), Some(117));
    }

    #[test]
    fn bin_config_validation() {
        assert!(DepthBinConfig::new(0.0, 10.0, 1.0).is_err());
        assert!(DepthBinConfig::new(5.0, 4.0, 1.0).is_err());
        assert!(DepthBinConfig::new(1.0, 10.0, 0.0).is_err());
        assert!(DepthBinConfig::new(1.0, 2.0, 1.0).is_err());
        assert_eq!(DepthBinConfig::new(1.0, 2.5, 1.0).unwrap().n_bins(), 2);
    }

    #[test]
    fn single_point_one_hot_at_bin_18() {
        let l = generate_hard_labels(
            &cloud(&[[0.0, 0.0, 10.2]]),
            &[],
            &cam(),
            &DepthBinConfig::default(),
            16,
        )
        .unwrap();
        assert_eq!(l.valid_count(), 1);
        assert!(l.valid_mask[[2, 2]]);
        assert_eq!(l.depth.values[[2, 2, 18]], 1.0);
        assert_eq!(l.depth.values.sum(), 1.0);
        assert_eq!(l.seg.values[[2, 2]], 0.0);
        l.check_invariants().unwrap();
    }

    #[test]
    fn nearest_point_wins() {
        let bins = DepthBinConfig::default();
        // both project to pixel (32, 32)
        let l = generate_hard_labels(
            &cloud(&[[0.0, 0.0, 30.0], [0.0, 0.0, 12.0]]),
            &[],
            &cam(),
            &bins,
            16,
        )
        .unwrap();
        assert_eq!(l.depth.values[[2, 2, bins.bin_index(12.0).unwrap()]], 1.0);
        assert_eq!(l.point_depth[[2, 2]], 12.0);
    }

    #[test]
    fn foreground_from_box_membership() {
        let b = Box3D::new(Vector3::new(0.0, 0.0, 12.0), [2.0, 2.0, 2.0], 0.0).unwrap();
        let l = generate_hard_labels(
            &cloud(&[[0.0, 0.0, 11.0], [6.0, 0.0, 30.0]]),
            &[b],
            &cam(),
            &DepthBinConfig::default(),
            16,
        )
        .unwrap();
        assert_eq!(l.seg.values[[2, 2]], 1.0);
        assert_eq!(l.valid_count(), 2);
    }

    #[test]
    fn out_of_range_depth_skipped() {
        let l = generate_hard_labels(
            &cloud(&[[0.0, 0.0, 60.0], [0.0, 0.0, 0.5]]),
            &[],
            &cam(),
            &DepthBinConfig::default(),
            16,
        )
        .unwrap();
        assert_eq!(l.valid_count(), 0);
    }

    #[test]
    fn world_cloud_rejected() {
        let c = PointCloud::empty(FrameTag::World);
        assert!(matches!(
            generate_hard_labels(&c, &[], &cam(), &DepthBinConfig::default(), 16),
            Err(Error::FrameMismatch { .. })
        ));
    }

    #[test]
    fn stride_must_divide() {
        assert!(generate_hard_labels(
            &cloud(&[]),
            &[],
            &cam(),
            &DepthBinConfig::default(),
            5
        )
        .is_err());
    }

    fn soft(h: usize, w: usize, bins: DepthBinConfig) -> (DepthDistributionMap, SegmentationMap) {
        let n = bins.n_bins();
        let d = Array3::from_elem((h, w, n), 1.0 / n as f64);
        (
            DepthDistributionMap { values: d, bins },
            SegmentationMap {
                values: Array2::from_elem((h, w), 0.3),
            },
        )
    }

    #[test]
    fn merge_degenerate_masks() {
        let bins = DepthBinConfig::new(1.0, 5.0, 1.0).unwrap();
        let (sd, ss) = soft(2, 3, bins);
        let empty = HardLabels::empty(2, 3, bins);
        let (d, s) = merge_labels(&empty, &sd, &ss).unwrap();
        assert_eq!(d, sd);
        assert_eq!(s, ss);

        let mut full = HardLabels::empty(2, 3, bins);
        for r in 0..2 {
            for c in 0..3 {
                full.write_cell(r, c, (r + c) % 4, 1.5, c == 1, LabelSource::Real);
            }
        }
        let (d, s) = merge_labels(&full, &sd, &ss).unwrap();
        assert_eq!(d, full.depth);
        assert_eq!(s, full.seg);
    }

    #[test]
    fn merge_rejects_mismatch() {
        let bins = DepthBinConfig::new(1.0, 5.0, 1.0).unwrap();
        let (sd, ss) = soft(2, 3, bins);
        assert!(merge_labels(&HardLabels::empty(3, 2, bins), &sd, &ss).is_err());
        let other = DepthBinConfig::new(1.0, 5.0, 2.0).unwrap();
        let (sd2, _) = soft(2, 3, other);
        assert!(merge_labels(&HardLabels::empty(2, 3, bins), &sd2, &ss).is_err());
    }
}
