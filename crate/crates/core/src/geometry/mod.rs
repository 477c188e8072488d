//! Frames, rigid transforms, pinhole cameras, boxes and augmentation.
//!
//! The ego frame is x forward, y left, z up. Cameras use the optical
//! convention (x right, y down, z forward).

mod augment;
mod boxes;
mod camera;
mod cloud;
mod transform;

pub use augment::{
    sample_augmentation, AugmentationParams, ImageAffine, BEV_ROTATE_DEG, BEV_SCALE_RANGE,
    FLIP_PROBABILITY, IMAGE_ROTATE_DEG, IMAGE_SCALE_RANGE,
};
pub use boxes::{
    box3d_corners, min_corner_depth, point_in_box, project_box3d_to_box2d,
    project_box3d_unclipped, Box2D, Box3D,
};
pub use camera::{CameraModel, Projection};
pub use cloud::{FrameTag, PointCloud};
pub use transform::RigidTransform;

/// Projects an ego-frame point; see [`CameraModel::project_point`].
pub fn project_point(cam: &CameraModel, p_ego: &nalgebra::Vector3<f64>) -> Option<Projection> {
    cam.project_point(p_ego)
}
