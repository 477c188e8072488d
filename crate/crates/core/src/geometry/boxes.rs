use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::CameraModel;
use crate::error::{Error, Result};

/// Yaw-oriented 3D box in ego coordinates, nuScenes style.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox3D")]
pub struct Box3D {
    pub center: Vector3<f64>,
    /// (length along heading, width, height) in meters.
    pub size: [f64; 3],
    pub yaw: f64,
    pub velocity: Vector2<f64>,
    pub class_id: u32,
    pub is_stationary: bool,
    /// Ordinal 1..=4, 4 being fully visible.
    pub visibility: u8,
}

#[derive(Deserialize)]
struct RawBox3D {
    center: Vector3<f64>,
    size: [f64; 3],
    yaw: f64,
    velocity: Vector2<f64>,
    class_id: u32,
    is_stationary: bool,
    visibility: u8,
}

impl TryFrom<RawBox3D> for Box3D {
    type Error = Error;

    fn try_from(r: RawBox3D) -> Result<Self> {
        let b = Box3D {
            center: r.center,
            size: r.size,
            yaw: r.yaw,
            velocity: r.velocity,
            class_id: r.class_id,
            is_stationary: r.is_stationary,
            visibility: r.visibility,
        };
        b.validate()?;
        Ok(b)
    }
}

impl Box3D {
    /// A stationary, fully visible box of class 0.
    pub fn new(center: Vector3<f64>, size: [f64; 3], yaw: f64) -> Result<Self> {
        let b = Box3D {
            center,
            size,
            yaw,
            velocity: Vector2::zeros(),
            class_id: 0,
            is_stationary: true,
            visibility: 4,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.size.iter().all(|&s| s > 0.0 && s.is_finite()) {
            return Err(Error::invalid(
                "size",
                format!("all components must be > 0, got {:?}", self.size),
            ));
        }
        if !(1..=4).contains(&self.visibility) {
            return Err(Error::invalid(
                "visibility",
                format!("must be in 1..=4, got {}", self.visibility),
            ));
        }
        if !(self.center.iter().all(|v| v.is_finite()) && self.yaw.is_finite()) {
            return Err(Error::invalid("center", "non-finite pose"));
        }
        Ok(())
    }

    pub fn with_visibility(mut self, visibility: u8) -> Self {
        self.visibility = visibility;
        self
    }

    pub fn half_extents(&self) -> Vector3<f64> {
        Vector3::new(self.size[0], self.size[1], self.size[2]) / 2.0
    }

    /// Expresses an ego-frame point in the box frame (x along heading).
    pub fn to_local(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let (s, c) = self.yaw.sin_cos();
        let d = p - self.center;
        Vector3::new(c * d.x + s * d.y, -s * d.x + c * d.y, d.z)
    }

    /// Box-frame point back into ego coordinates.
    pub fn to_ego(&self, q: &Vector3<f64>) -> Vector3<f64> {
        let (s, c) = self.yaw.sin_cos();
        Vector3::new(c * q.x - s * q.y, s * q.x + c * q.y, q.z) + self.center
    }

    /// The eight corners. Bottom face counter-clockwise (seen from above),
    /// then the top face in the same order, starting at `(+l/2, +w/2, −h/2)`
    /// in the box frame.
    pub fn corners(&self) -> [Vector3<f64>; 8] {
        let h = self.half_extents();
        const SIGNS: [(f64, f64); 4] = [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)];
        let mut out = [Vector3::zeros(); 8];
        for (k, z) in [-h.z, h.z].into_iter().enumerate() {
            for (j, (sx, sy)) in SIGNS.iter().enumerate() {
                out[4 * k + j] = self.to_ego(&Vector3::new(sx * h.x, sy * h.y, z));
            }
        }
        out
    }

    /// Closed-cuboid membership test.
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        let q = self.to_local(p);
        let h = self.half_extents();
        q.x.abs() <= h.x && q.y.abs() <= h.y && q.z.abs() <= h.z
    }

    /// Entry parameter of the ray `origin + t·dir` into the box, if it hits
    /// for some `t > 0`. Slab test in the box frame.
    pub fn ray_entry(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let o = self.to_local(origin);
        let (s, c) = self.yaw.sin_cos();
        let d = Vector3::new(c * dir.x + s * dir.y, -s * dir.x + c * dir.y, dir.z);
        let h = self.half_extents();
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        for a in 0..3 {
            if d[a].abs() < 1e-15 {
                if o[a].abs() > h[a] {
                    return None;
                }
                continue;
            }
            let t1 = (-h[a] - o[a]) / d[a];
            let t2 = (h[a] - o[a]) / d[a];
            let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            t_near = t_near.max(lo);
            t_far = t_far.min(hi);
            if t_near > t_far {
                return None;
            }
        }
        if t_far <= 0.0 {
            return None;
        }
        Some(t_near.max(0.0))
    }
}

/// Convenience free function matching [`Box3D::corners`].
pub fn box3d_corners(b: &Box3D) -> [Vector3<f64>; 8] {
    b.corners()
}

/// Closed-cuboid point membership.
pub fn point_in_box(b: &Box3D, p: &Vector3<f64>) -> bool {
    b.contains(p)
}

/// Axis-aligned image rectangle; `(x1, y1)` top-left, `(x2, y2)` bottom-right.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box2D {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl Box2D {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        if !(x1 <= x2 && y1 <= y2) {
            return Err(Error::invalid(
                "box2d",
                format!("need x1 ≤ x2 and y1 ≤ y2, got ({x1}, {y1}, {x2}, {y2})"),
            ));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    /// Bounding rectangle of a set of points; `None` for an empty set.
    pub fn bounding<I: IntoIterator<Item = (f64, f64)>>(pts: I) -> Option<Self> {
        let mut it = pts.into_iter();
        let (u0, v0) = it.next()?;
        let init = Box2D {
            x1: u0,
            y1: v0,
            x2: u0,
            y2: v0,
        };
        Some(it.fold(init, |b, (u, v)| Box2D {
            x1: b.x1.min(u),
            y1: b.y1.min(v),
            x2: b.x2.max(u),
            y2: b.y2.max(v),
        }))
    }

    /// Clips to the pixel rectangle `[0, w−1] × [0, h−1]`.
    pub fn clipped(&self, width: u32, height: u32) -> Self {
        let xm = f64::from(width) - 1.0;
        let ym = f64::from(height) - 1.0;
        Box2D {
            x1: self.x1.clamp(0.0, xm),
            y1: self.y1.clamp(0.0, ym),
            x2: self.x2.clamp(0.0, xm),
            y2: self.y2.clamp(0.0, ym),
        }
    }
}

/// Projected rectangle before clipping: the bounds of every corner in front
/// of the camera. `None` when no corner has positive depth.
pub fn project_box3d_unclipped(cam: &CameraModel, b: &Box3D) -> Option<Box2D> {
    Box2D::bounding(
        b.corners()
            .iter()
            .filter_map(|c| cam.project_unbounded(c))
            .map(|p| (p.u, p.v)),
    )
}

/// Projected 2D box, clipped to the image. Absent when no corner is in front
/// of the camera or when none of the front corners lands inside the image.
pub fn project_box3d_to_box2d(cam: &CameraModel, b: &Box3D) -> Option<Box2D> {
    let corners = b.corners();
    if !corners.iter().any(|c| cam.project_point(c).is_some()) {
        return None;
    }
    project_box3d_unclipped(cam, b).map(|r| r.clipped(cam.image_width, cam.image_height))
}

/// Smallest positive camera depth among the eight corners.
pub fn min_corner_depth(cam: &CameraModel, b: &Box3D) -> Option<f64> {
    b.corners()
        .iter()
        .map(|c| cam.ego_to_cam.apply(c).z)
        .filter(|&z| z > 0.0)
        .min_by(f64::total_cmp)
}
