//! Image-space and BEV-space augmentation.
//!
//! Image augmentation is a 2D affine map on label coordinates (2D boxes,
//! heatmap/depth pixel positions). There is no raster resampling of
//! photographs here.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Box2D, Box3D};
use crate::error::{Error, Result};

pub const IMAGE_SCALE_RANGE: (f64, f64) = (0.5, 1.25);
pub const IMAGE_ROTATE_DEG: f64 = 5.4;
pub const BEV_ROTATE_DEG: f64 = 22.5;
pub const BEV_SCALE_RANGE: (f64, f64) = (0.95, 1.05);
pub const FLIP_PROBABILITY: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationParams {
    pub image_scale: f64,
    pub image_flip: bool,
    /// Radians.
    pub image_rotate: f64,
    /// Radians.
    pub bev_rotate: f64,
    pub bev_scale: f64,
    pub bev_flip_x: bool,
    pub bev_flip_y: bool,
}

impl Default for AugmentationParams {
    fn default() -> Self {
        Self {
            image_scale: 1.0,
            image_flip: false,
            image_rotate: 0.0,
            bev_rotate: 0.0,
            bev_scale: 1.0,
            bev_flip_x: false,
            bev_flip_y: false,
        }
    }
}

fn deg(d: f64) -> f64 {
    d * PI / 180.0
}

impl AugmentationParams {
    /// Checks the ranges the sampler draws from.
    pub fn validate(&self) -> Result<()> {
        let check = |field, v: f64, lo: f64, hi: f64| {
            if (lo..=hi).contains(&v) {
                Ok(())
            } else {
                Err(Error::invalid(field, format!("{v} outside [{lo}, {hi}]")))
            }
        };
        check(
            "image_scale",
            self.image_scale,
            IMAGE_SCALE_RANGE.0,
            IMAGE_SCALE_RANGE.1,
        )?;
        check(
            "image_rotate",
            self.image_rotate,
            -deg(IMAGE_ROTATE_DEG),
            deg(IMAGE_ROTATE_DEG),
        )?;
        check(
            "bev_rotate",
            self.bev_rotate,
            -deg(BEV_ROTATE_DEG),
            deg(BEV_ROTATE_DEG),
        )?;
        check(
            "bev_scale",
            self.bev_scale,
            BEV_SCALE_RANGE.0,
            BEV_SCALE_RANGE.1,
        )
    }

    /// Affine map from original image pixels to augmented ones: resize by
    /// `image_scale`, optional horizontal flip, then rotation about the
    /// center of the resized image.
    pub fn image_affine(&self, width: u32, height: u32) -> ImageAffine {
        let s = self.image_scale;
        let (w, h) = (f64::from(width) * s, f64::from(height) * s);
        let mut a = Matrix2::from_diagonal(&Vector2::new(s, s));
        let mut b = Vector2::zeros();
        if self.image_flip {
            a = Matrix2::new(-1.0, 0.0, 0.0, 1.0) * a;
            b = Vector2::new(w - b.x, b.y);
        }
        let c = Vector2::new(w / 2.0, h / 2.0);
        let (sn, cs) = self.image_rotate.sin_cos();
        let r = Matrix2::new(cs, -sn, sn, cs);
        ImageAffine {
            linear: r * a,
            offset: r * (b - c) + c,
        }
    }

    /// Applies rotation, scaling and axis flips to an ego-frame point.
    pub fn bev_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let (sn, cs) = self.bev_rotate.sin_cos();
        let mut q = Vector3::new(cs * p.x - sn * p.y, sn * p.x + cs * p.y, p.z) * self.bev_scale;
        if self.bev_flip_x {
            q.x = -q.x;
        }
        if self.bev_flip_y {
            q.y = -q.y;
        }
        q
    }

    pub fn bev_box(&self, b: &Box3D) -> Box3D {
        let mut out = b.clone();
        out.center = self.bev_point(&b.center);
        out.size = b.size.map(|s| s * self.bev_scale);
        let mut yaw = b.yaw + self.bev_rotate;
        let v3 = self.bev_point(&Vector3::new(b.velocity.x, b.velocity.y, 0.0));
        out.velocity = Vector2::new(v3.x, v3.y);
        if self.bev_flip_x {
            yaw = PI - yaw;
        }
        if self.bev_flip_y {
            yaw = -yaw;
        }
        out.yaw = yaw;
        out
    }
}

/// `p ↦ linear·p + offset` in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageAffine {
    pub linear: Matrix2<f64>,
    pub offset: Vector2<f64>,
}

impl ImageAffine {
    pub fn apply(&self, u: f64, v: f64) -> (f64, f64) {
        let p = self.linear * Vector2::new(u, v) + self.offset;
        (p.x, p.y)
    }

    /// Bounding rectangle of the four transformed corners.
    pub fn apply_box(&self, b: &Box2D) -> Box2D {
        let pts = [(b.x1, b.y1), (b.x2, b.y1), (b.x2, b.y2), (b.x1, b.y2)];
        Box2D::bounding(pts.iter().map(|&(u, v)| self.apply(u, v)))
            .expect("four corners")
    }
}

/// Draws augmentation parameters from the training ranges. Flips fire with
/// probability one half; deterministic in `seed`.
pub fn sample_augmentation(seed: u64) -> AugmentationParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    AugmentationParams {
        image_scale: rng.random_range(IMAGE_SCALE_RANGE.0..=IMAGE_SCALE_RANGE.1),
        image_flip: rng.random_bool(FLIP_PROBABILITY),
        image_rotate: rng.random_range(-deg(IMAGE_ROTATE_DEG)..=deg(IMAGE_ROTATE_DEG)),
        bev_rotate: rng.random_range(-deg(BEV_ROTATE_DEG)..=deg(BEV_ROTATE_DEG)),
        bev_scale: rng.random_range(BEV_SCALE_RANGE.0..=BEV_SCALE_RANGE.1),
        bev_flip_x: rng.random_bool(FLIP_PROBABILITY),
        bev_flip_y: rng.random_bool(FLIP_PROBABILITY),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_params() {
        assert_eq!(sample_augmentation(7), sample_augmentation(7));
        assert_ne!(sample_augmentation(7), sample_augmentation(8));
    }

    #[test]
    fn sampled_params_in_range() {
        for seed in 0..2000 {
            let p = sample_augmentation(seed);
            p.validate().unwrap();
        }
    }

    #[test]
    fn flip_rate_near_half() {
        let n = 4000;
        let flips = (0..n).filter(|&s| sample_augmentation(s).image_flip).count();
        let rate = flips as f64 / n as f64;
        assert!((rate - 0.5).abs() < 0.04, "rate {rate}");
    }

    #[test]
    fn identity_affine() {
        let a = AugmentationParams::default().image_affine(704, 256);
        assert_eq!(a.apply(10.0, 20.0), (10.0, 20.0));
    }

    #[test]
    fn flip_mirrors_about_vertical_axis() {
        let p = AugmentationParams {
            image_flip: true,
            ..Default::default()
        };
        let a = p.image_affine(100, 50);
        let (u, v) = a.apply(10.0, 20.0);
        assert!((u - 90.0).abs() < 1e-12 && (v - 20.0).abs() < 1e-12);
        let b = a.apply_box(&Box2D::new(10.0, 5.0, 30.0, 15.0).unwrap());
        assert!((b.x1 - 70.0).abs() < 1e-12 && (b.x2 - 90.0).abs() < 1e-12);
    }

    #[test]
    fn rotation_keeps_center_fixed() {
        let p = AugmentationParams {
            image_scale: 0.5,
            image_rotate: 0.05,
            ..Default::default()
        };
        let a = p.image_affine(200, 100);
        let (u, v) = a.apply(100.0, 50.0);
        assert!((u - 50.0).abs() < 1e-12 && (v - 25.0).abs() < 1e-12);
    }

    #[test]
    fn bev_transform_keeps_points_inside_boxes() {
        let p = AugmentationParams {
            bev_rotate: 0.3,
            bev_scale: 1.04,
            bev_flip_x: true,
            bev_flip_y: false,
            ..Default::default()
        };
        let b = Box3D::new(Vector3::new(10.0, 4.0, 0.8), [4.0, 2.0, 1.6], 0.7).unwrap();
        let inside = b.to_ego(&Vector3::new(1.5, -0.7, 0.3));
        let nb = p.bev_box(&b);
        assert!(nb.contains(&p.bev_point(&inside)));
        let outside = b.to_ego(&Vector3::new(2.1, 0.0, 0.0));
        assert!(!nb.contains(&p.bev_point(&outside)));
    }
}
