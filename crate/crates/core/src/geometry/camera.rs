use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::RigidTransform;
use crate::error::{Error, Result};

/// Result of projecting a point: pixel coordinates and camera-frame depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

/// Undistorted pinhole camera. The camera frame is x right, y down, z forward;
/// `ego_to_cam` maps ego coordinates into it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCamera")]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub ego_to_cam: RigidTransform,
    pub image_width: u32,
    pub image_height: u32,
}

#[derive(Deserialize)]
struct RawCamera {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    ego_to_cam: RigidTransform,
    image_width: u32,
    image_height: u32,
}

impl TryFrom<RawCamera> for CameraModel {
    type Error = Error;

    fn try_from(r: RawCamera) -> Result<Self> {
        CameraModel::new(
            r.fx,
            r.fy,
            r.cx,
            r.cy,
            r.ego_to_cam,
            r.image_width,
            r.image_height,
        )
    }
}

impl CameraModel {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        ego_to_cam: RigidTransform,
        image_width: u32,
        image_height: u32,
    ) -> Result<Self> {
        if !(fx > 0.0 && fx.is_finite()) {
            return Err(Error::invalid("fx", format!("must be > 0, got {fx}")));
        }
        if !(fy > 0.0 && fy.is_finite()) {
            return Err(Error::invalid("fy", format!("must be > 0, got {fy}")));
        }
        if !(0.0..f64::from(image_width)).contains(&cx) {
            return Err(Error::invalid(
                "cx",
                format!("must lie in [0, {image_width}), got {cx}"),
            ));
        }
        if !(0.0..f64::from(image_height)).contains(&cy) {
            return Err(Error::invalid(
                "cy",
                format!("must lie in [0, {image_height}), got {cy}"),
            ));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            ego_to_cam,
            image_width,
            image_height,
        })
    }

    /// A vehicle-mounted camera looking along ego heading `yaw` (ego frame is
    /// x forward, y left, z up) from `position`, with its principal point at
    /// the image center and a horizontal field of view of `hfov` radians.
    pub fn mounted(
        yaw: f64,
        position: Vector3<f64>,
        hfov: f64,
        image_width: u32,
        image_height: u32,
    ) -> Result<Self> {
        let (s, c) = yaw.sin_cos();
        // rows: camera x (right), y (down), z (forward) expressed in ego axes
        let rotation = Matrix3::new(s, -c, 0.0, 0.0, 0.0, -1.0, c, s, 0.0);
        let ego_to_cam = RigidTransform::new(rotation, -(rotation * position))?;
        let f = f64::from(image_width) / 2.0 / (hfov / 2.0).tan();
        Self::new(
            f,
            f,
            f64::from(image_width) / 2.0,
            f64::from(image_height) / 2.0,
            ego_to_cam,
            image_width,
            image_height,
        )
    }

    pub fn width(&self) -> f64 {
        f64::from(self.image_width)
    }

    pub fn height(&self) -> f64 {
        f64::from(self.image_height)
    }

    /// Camera center in ego coordinates.
    pub fn center_ego(&self) -> Vector3<f64> {
        self.ego_to_cam.inverse().translation().to_owned()
    }

    pub fn in_bounds(&self, u: f64, v: f64) -> bool {
        (0.0..self.width()).contains(&u) && (0.0..self.height()).contains(&v)
    }

    /// Pinhole projection without the image-bounds check. `None` only when the
    /// point is not in front of the camera.
    pub fn project_unbounded(&self, p_ego: &Vector3<f64>) -> Option<Projection> {
        let p = self.ego_to_cam.apply(p_ego);
        if p.z <= 0.0 {
            return None;
        }
        Some(Projection {
            u: self.fx * p.x / p.z + self.cx,
            v: self.fy * p.y / p.z + self.cy,
            depth: p.z,
        })
    }

    /// Projects an ego-frame point. Absent when behind the camera or outside
    /// `[0, width) × [0, height)`.
    pub fn project_point(&self, p_ego: &Vector3<f64>) -> Option<Projection> {
        self.project_unbounded(p_ego)
            .filter(|pr| self.in_bounds(pr.u, pr.v))
    }

    /// Inverse of [`project_point`](Self::project_point) for a known depth.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        let p_cam = Vector3::new(
            (u - self.cx) / self.fx * depth,
            (v - self.cy) / self.fy * depth,
            depth,
        );
        self.ego_to_cam.inverse().apply(&p_cam)
    }

    /// Ego-frame ray through pixel `(u, v)`: origin and a direction whose
    /// camera-frame z component is 1, so the ray parameter equals depth.
    pub fn ray(&self, u: f64, v: f64) -> (Vector3<f64>, Vector3<f64>) {
        let inv = self.ego_to_cam.inverse();
        let d_cam = Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0);
        (*inv.translation(), inv.apply_vector(&d_cam))
    }
}
