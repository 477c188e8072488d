//! Multi-scale foreground enhancement.
//!
//! A stride-4 foreground heatmap `S⁴` gates the high-resolution pyramid
//! levels before they are folded into the stride-16 map:
//!
//! ```text
//! S⁴_f        = M_f · S⁴,   M_f = [S⁴ ≥ β]
//! F¹⁶_MSFE    = F¹⁶ + DS²(F⁸ · DS²(S⁴_f)) + DS⁴(F⁴ · S⁴_f)
//! ```
//!
//! `DSⁿ` is non-overlapping `n × n` average pooling for both features and
//! heatmaps, so the fusion stays linear in the pyramid.
//!
//! Heatmap targets are axis-aligned elliptical Gaussians that fill each 2D
//! box, supervised with a penalty-reduced focal loss.

use ndarray::{Array2, Array3, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Box2D;

/// Default foreground threshold β.
pub const DEFAULT_BETA: f64 = 0.1;
/// Box edge sits at `divisor / 2` standard deviations from the center.
pub const DEFAULT_SIGMA_DIVISOR: f64 = 6.0;
/// Lower bound on σ, in heatmap cells, for degenerate boxes.
pub const MIN_SIGMA: f64 = 0.25;
pub const FOCAL_EPS: f64 = 1e-6;

/// FPN-like feature maps at strides 4, 8 and 16, shape `(h, w, c)` each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePyramid {
    pub f4: Array3<f64>,
    pub f8: Array3<f64>,
    pub f16: Array3<f64>,
}

impl FeaturePyramid {
    /// Checks the shared channel count and the exact 1:2:4 size ratio.
    pub fn new(f4: Array3<f64>, f8: Array3<f64>, f16: Array3<f64>) -> Result<Self> {
        let (h, w, c) = f16.dim();
        let want8 = [2 * h, 2 * w, c];
        let want4 = [4 * h, 4 * w, c];
        if f8.shape() != want8 {
            return Err(Error::shape("pyramid f8", &want8, f8.shape()));
        }
        if f4.shape() != want4 {
            return Err(Error::shape("pyramid f4", &want4, f4.shape()));
        }
        Ok(Self { f4, f8, f16 })
    }

    pub fn channels(&self) -> usize {
        self.f16.dim().2
    }

    /// `a·self + b·other`, elementwise per level.
    pub fn combine(&self, a: f64, other: &FeaturePyramid, b: f64) -> Result<Self> {
        FeaturePyramid::new(
            &self.f4 * a + &other.f4 * b,
            &self.f8 * a + &other.f8 * b,
            &self.f16 * a + &other.f16 * b,
        )
    }
}

/// Stride-4 foreground confidence in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForegroundHeatmap {
    pub values: Array2<f64>,
}

impl ForegroundHeatmap {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("heatmap", "values must lie in [0, 1]"));
        }
        Ok(Self { values })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Self {
            values: Array2::zeros((h, w)),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.values.dim()
    }
}

/// Draws one elliptical Gaussian per box on an `out_h × out_w` heatmap.
///
/// Cell `(r, c)` is evaluated at its center `(c + 0.5, r + 0.5)` in heatmap
/// units; a box's center maps to `center / stride` and its spreads are
/// `σ_x = width / (stride · sigma_divisor)`, `σ_y = height / (stride ·
/// sigma_divisor)`, floored at [`MIN_SIGMA`]. Overlaps take the maximum.
pub fn elliptical_gaussian_heatmap(
    boxes: &[Box2D],
    out_h: usize,
    out_w: usize,
    stride: usize,
    sigma_divisor: f64,
) -> Result<ForegroundHeatmap> {
    if stride == 0 {
        return Err(Error::invalid("stride", "must be ≥ 1"));
    }
    if !(sigma_divisor > 0.0) {
        return Err(Error::invalid("sigma_divisor", "must be > 0"));
    }
    let s = stride as f64;
    let mut hm = Array2::<f64>::zeros((out_h, out_w));
    for b in boxes {
        let (cu, cv) = b.center();
        let (xc, yc) = (cu / s, cv / s);
        let sx = (b.width() / (s * sigma_divisor)).max(MIN_SIGMA);
        let sy = (b.height() / (s * sigma_divisor)).max(MIN_SIGMA);
        for ((r, c), v) in hm.indexed_iter_mut() {
            let dx = c as f64 + 0.5 - xc;
            let dy = r as f64 + 0.5 - yc;
            let g = (-(dx * dx / (2.0 * sx * sx) + dy * dy / (2.0 * sy * sy))).exp();
            if g > *v {
                *v = g;
            }
        }
    }
    Ok(ForegroundHeatmap { values: hm })
}

/// Zeroes every value below `beta`; values at or above pass unchanged.
pub fn threshold_filter(heatmap: &ForegroundHeatmap, beta: f64) -> ForegroundHeatmap {
    ForegroundHeatmap {
        values: heatmap.values.mapv(|v| if v >= beta { v } else { 0.0 }),
    }
}

fn check_divisible(h: usize, w: usize, factor: usize) -> Result<()> {
    if factor == 0 || !h.is_multiple_of(factor) || !w.is_multiple_of(factor) {
        return Err(Error::invalid(
            "factor",
            format!("{factor} must divide the spatial size {h}×{w}"),
        ));
    }
    Ok(())
}

/// `factor × factor` average pooling of a single-channel map.
pub fn downsample2(map: &Array2<f64>, factor: usize) -> Result<Array2<f64>> {
    let (h, w) = map.dim();
    check_divisible(h, w, factor)?;
    let area = (factor * factor) as f64;
    Ok(Array2::from_shape_fn((h / factor, w / factor), |(r, c)| {
        let mut acc = 0.0;
        for i in 0..factor {
            for j in 0..factor {
                acc += map[[r * factor + i, c * factor + j]];
            }
        }
        acc / area
    }))
}

/// `factor × factor` average pooling, per channel.
pub fn downsample3(map: &Array3<f64>, factor: usize) -> Result<Array3<f64>> {
    let (h, w, ch) = map.dim();
    check_divisible(h, w, factor)?;
    let area = (factor * factor) as f64;
    let mut out = Array3::zeros((h / factor, w / factor, ch));
    for ((r, c, k), v) in out.indexed_iter_mut() {
        let mut acc = 0.0;
        for i in 0..factor {
            for j in 0..factor {
                acc += map[[r * factor + i, c * factor + j, k]];
            }
        }
        *v = acc / area;
    }
    Ok(out)
}

/// Multiplies every channel of `features` by the single-channel `mask`.
fn gate(features: &Array3<f64>, mask: &Array2<f64>) -> Array3<f64> {
    let mut out = features.clone();
    Zip::from(out.lanes_mut(Axis(2)))
        .and(mask)
        .for_each(|mut lane, &m| lane *= m);
    out
}

/// Folds the gated stride-4 and stride-8 levels into the stride-16 map.
pub fn msfe_fuse(
    pyr: &FeaturePyramid,
    heatmap: &ForegroundHeatmap,
    beta: f64,
) -> Result<Array3<f64>> {
    let (h4, w4, _) = pyr.f4.dim();
    if heatmap.dims() != (h4, w4) {
        return Err(Error::shape(
            "msfe heatmap",
            &[h4, w4],
            heatmap.values.shape(),
        ));
    }
    let s4f = threshold_filter(heatmap, beta).values;
    let s8f = downsample2(&s4f, 2)?;
    let term8 = downsample3(&gate(&pyr.f8, &s8f), 2)?;
    let term4 = downsample3(&gate(&pyr.f4, &s4f), 4)?;
    Ok(&pyr.f16 + &term8 + &term4)
}

/// Penalty-reduced focal loss over a heatmap.
///
/// Positives are cells whose target is exactly 1. Predictions are clamped to
/// `(ε, 1 − ε)` with ε = [`FOCAL_EPS`]. The sum is divided by the positive
/// count (at least 1).
pub fn gaussian_focal_loss(
    pred: &ForegroundHeatmap,
    target: &ForegroundHeatmap,
    alpha: f64,
    gamma: f64,
) -> Result<f64> {
    if pred.dims() != target.dims() {
        return Err(Error::shape(
            "focal loss",
            target.values.shape(),
            pred.values.shape(),
        ));
    }
    let mut total = 0.0;
    let mut positives = 0usize;
    Zip::from(&pred.values)
        .and(&target.values)
        .for_each(|&p, &t| {
            let p = p.clamp(FOCAL_EPS, 1.0 - FOCAL_EPS);
            if t == 1.0 {
                positives += 1;
                total -= (1.0 - p).powf(alpha) * p.ln();
            } else {
                total -= (1.0 - t).powf(gamma) * p.powf(alpha) * (1.0 - p).ln();
            }
        });
    Ok(total / positives.max(1) as f64)
}
