//! Deterministic synthetic driving scenes.
//!
//! A scene is a short sequence of frames sharing one set of tracked boxes
//! (box `i` in every frame is the same object). The last frame is the
//! *current* frame; earlier frames are its temporal neighbours.
//!
//! LiDAR is simulated by sampling points on the box faces that look toward
//! the sensor, plus ground clutter with a simple occlusion test. The
//! alternative [`LidarModel::Dense`] casts one ray per feature cell of every
//! camera, which gives complete hard-label coverage.

use std::f64::consts::PI;

use nalgebra::{Vector2, Vector3};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    project_box3d_to_box2d, Box2D, Box3D, CameraModel, FrameTag, PointCloud, RigidTransform,
};
use crate::labels::{feature_dims, DepthBinConfig, DepthDistributionMap, SegmentationMap};
use crate::msfe::FeaturePyramid;

/// LiDAR mounting height above the ego origin.
pub const LIDAR_HEIGHT: f64 = 1.8;
/// Camera mounting height above the ego origin.
pub const CAMERA_HEIGHT: f64 = 1.6;
/// Surface samples sit this fraction inside the box faces.
const SURFACE_INSET: f64 = 1e-6;
/// Ray hits on a box are pushed this far (meters, along depth) inside it.
const SURFACE_NUDGE: f64 = 1e-6;
const PLACEMENT_ATTEMPTS: usize = 1000;
const BOX_MARGIN: f64 = 0.25;
const CLUTTER_MARGIN: f64 = 0.3;
const DENSE_MAX_DEPTH: f64 = 100.0;

/// Depth peak sharpness of the synthetic soft depth, per bin of distance.
pub const SOFT_DEPTH_SHARPNESS: f64 = 10.0;
/// Soft segmentation value on background cells at zero noise.
pub const SEG_FLOOR: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LidarModel {
    /// Points on sensor-facing box faces plus ground clutter.
    #[default]
    Surface,
    /// One ray per `dense_stride` cell of every camera.
    Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub n_frames: usize,
    pub n_boxes: usize,
    pub n_cameras: usize,
    /// Seconds between frames.
    pub frame_interval: f64,
    pub lidar_rays_per_box: usize,
    pub stationary_fraction: f64,
    /// Half-extent of the square detection region, meters.
    pub detection_range_xy: f64,
    pub detection_range_z: (f64, f64),
    /// Probability that a box gets no points in the current frame.
    pub dropout_fraction: f64,
    pub clutter_points: usize,
    pub lidar_model: LidarModel,
    pub dense_stride: usize,
    pub image_width: u32,
    pub image_height: u32,
    pub camera_hfov_deg: f64,
    /// Ego speed, m/s.
    pub ego_speed: f64,
    /// Ego yaw rate, rad/s.
    pub ego_yaw_rate: f64,
    /// Boxes keep at least this distance (meters) from the ego origin.
    pub min_box_distance: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            n_frames: 3,
            n_boxes: 20,
            n_cameras: 6,
            frame_interval: 0.5,
            lidar_rays_per_box: 64,
            stationary_fraction: 0.5,
            detection_range_xy: 51.2,
            detection_range_z: (-5.0, 3.0),
            dropout_fraction: 0.0,
            clutter_points: 2000,
            lidar_model: LidarModel::Surface,
            dense_stride: 16,
            image_width: 704,
            image_height: 256,
            camera_hfov_deg: 70.0,
            ego_speed: 4.0,
            ego_yaw_rate: 0.05,
            min_box_distance: 4.0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_frames < 2 {
            return Err(Error::invalid("n_frames", "a scene needs at least 2 frames"));
        }
        if self.n_cameras == 0 {
            return Err(Error::invalid("n_cameras", "need at least one camera"));
        }
        if !(self.frame_interval > 0.0 && self.frame_interval.is_finite()) {
            return Err(Error::invalid("frame_interval", "must be > 0"));
        }
        if !(self.detection_range_xy > 0.0 && self.detection_range_xy.is_finite()) {
            return Err(Error::invalid("detection_range_xy", "must be > 0"));
        }
        if !(self.detection_range_z.0 < self.detection_range_z.1) {
            return Err(Error::invalid("detection_range_z", "min must be below max"));
        }
        for (field, p) in [
            ("stationary_fraction", self.stationary_fraction),
            ("dropout_fraction", self.dropout_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(field, format!("probability {p} outside [0, 1]")));
            }
        }
        if !self.image_width.is_multiple_of(16) || !self.image_height.is_multiple_of(16) || self.image_width == 0 {
            return Err(Error::invalid(
                "image_width",
                "image size must be a positive multiple of 16",
            ));
        }
        if self.image_height == 0 {
            return Err(Error::invalid("image_height", "must be > 0"));
        }
        if self.dense_stride == 0
            || !(self.image_width as usize).is_multiple_of(self.dense_stride)
            || !(self.image_height as usize).is_multiple_of(self.dense_stride)
        {
            return Err(Error::invalid("dense_stride", "must divide the image size"));
        }
        if !(self.camera_hfov_deg > 0.0 && self.camera_hfov_deg < 180.0) {
            return Err(Error::invalid("camera_hfov_deg", "must lie in (0, 180)"));
        }
        if !(self.min_box_distance >= 0.0) {
            return Err(Error::invalid("min_box_distance", "must be ≥ 0"));
        }
        Ok(())
    }

    /// The camera rig: `n_cameras` cameras evenly spaced in yaw, the first
    /// looking forward.
    pub fn cameras(&self) -> Result<Vec<CameraModel>> {
        (0..self.n_cameras)
            .map(|i| {
                CameraModel::mounted(
                    2.0 * PI * i as f64 / self.n_cameras as f64,
                    Vector3::new(0.0, 0.0, CAMERA_HEIGHT),
                    self.camera_hfov_deg.to_radians(),
                    self.image_width,
                    self.image_height,
                )
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub index: usize,
    /// Seconds.
    pub timestamp: f64,
    /// Ego → world.
    pub ego_pose: RigidTransform,
    /// Ego-frame boxes; position `i` is the same object in every frame.
    pub boxes: Vec<Box3D>,
    /// Ego-frame LiDAR.
    pub lidar: PointCloud,
    pub cameras: Vec<CameraModel>,
}

impl Frame {
    pub fn camera(&self, index: usize) -> Result<&CameraModel> {
        self.cameras.get(index).ok_or_else(|| {
            Error::invalid(
                "cam_index",
                format!("{index} out of range ({} cameras)", self.cameras.len()),
            )
        })
    }

    /// Maps this frame's ego coordinates into `other`'s ego coordinates.
    pub fn relative_to(&self, other: &Frame) -> RigidTransform {
        other.ego_pose.inverse().compose(&self.ego_pose)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub frames: Vec<Frame>,
    pub seed: u64,
}

impl Scene {
    /// The last frame.
    pub fn current(&self) -> &Frame {
        self.frames.last().expect("scene has frames")
    }

    /// Every frame before the current one, oldest first.
    pub fn adjacent(&self) -> &[Frame] {
        &self.frames[..self.frames.len() - 1]
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.len() < 2 {
            return Err(Error::invalid("frames", "a scene needs at least 2 frames"));
        }
        if self
            .frames
            .windows(2)
            .any(|w| !(w[1].timestamp > w[0].timestamp))
        {
            return Err(Error::invalid("timestamp", "must strictly increase"));
        }
        for (i, f) in self.frames.iter().enumerate() {
            f.lidar.expect_frame(FrameTag::Ego(i))?;
            if f.index != i {
                return Err(Error::invalid("index", format!("frame {i} labelled {}", f.index)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct ClassSpec {
    size: [f64; 3],
    weight: f64,
}

const CLASSES: [ClassSpec; 4] = [
    ClassSpec {
        size: [4.6, 1.9, 1.7],
        weight: 0.5,
    },
    ClassSpec {
        size: [8.0, 2.5, 3.2],
        weight: 0.1,
    },
    ClassSpec {
        size: [0.8, 0.7, 1.75],
        weight: 0.2,
    },
    ClassSpec {
        size: [0.45, 0.45, 1.0],
        weight: 0.2,
    },
];

/// World-frame track of one object.
#[derive(Debug, Clone)]
struct Track {
    center_at_current: Vector3<f64>,
    yaw: f64,
    velocity: Vector2<f64>,
    size: [f64; 3],
    class_id: u32,
    stationary: bool,
}

impl Track {
    fn center_at(&self, dt_from_current: f64) -> Vector3<f64> {
        self.center_at_current
            + Vector3::new(self.velocity.x, self.velocity.y, 0.0) * dt_from_current
    }

    fn radius(&self) -> f64 {
        0.5 * self.size[0].hypot(self.size[1]) + BOX_MARGIN
    }
}

fn ego_pose_at(cfg: &SceneConfig, t: f64) -> RigidTransform {
    let w = cfg.ego_yaw_rate;
    let v = cfg.ego_speed;
    let (x, y) = if w.abs() < 1e-12 {
        (v * t, 0.0)
    } else {
        (v / w * (w * t).sin(), v / w * (1.0 - (w * t).cos()))
    };
    RigidTransform::from_yaw(w * t, Vector3::new(x, y, 0.0))
}

fn sample_class(rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = CLASSES.iter().map(|c| c.weight).sum();
    let mut x = rng.random::<f64>() * total;
    for (i, c) in CLASSES.iter().enumerate() {
        if x < c.weight {
            return i;
        }
        x -= c.weight;
    }
    CLASSES.len() - 1
}

/// Generates a scene. Fully determined by `cfg` and `seed`.
pub fn generate_scene(cfg: &SceneConfig, seed: u64) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cameras = cfg.cameras()?;
    let n = cfg.n_frames;
    let times: Vec<f64> = (0..n).map(|k| k as f64 * cfg.frame_interval).collect();
    let t_cur = times[n - 1];
    let poses: Vec<RigidTransform> = times.iter().map(|&t| ego_pose_at(cfg, t)).collect();
    let cur_pose = poses[n - 1];
    let r = cfg.detection_range_xy;

    let mut tracks: Vec<Track> = Vec::with_capacity(cfg.n_boxes);
    for index in 0..cfg.n_boxes {
        let mut placed = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let class = sample_class(&mut rng);
            let jitter: [f64; 3] = [
                rng.random_range(0.9..1.1),
                rng.random_range(0.9..1.1),
                rng.random_range(0.9..1.1),
            ];
            let size = [
                CLASSES[class].size[0] * jitter[0],
                CLASSES[class].size[1] * jitter[1],
                CLASSES[class].size[2] * jitter[2],
            ];
            let x = rng.random_range(-r..r);
            let y = rng.random_range(-r..r);
            let yaw_ego = rng.random_range(-PI..PI);
            let stationary = rng.random_bool(cfg.stationary_fraction);
            let speed = if stationary {
                0.0
            } else {
                rng.random_range(1.0..8.0)
            };
            let center_ego = Vector3::new(x, y, size[2] / 2.0);
            let yaw = yaw_ego + cur_pose.yaw();
            let track = Track {
                center_at_current: cur_pose.apply(&center_ego),
                yaw,
                velocity: Vector2::new(yaw.cos(), yaw.sin()) * speed,
                size,
                class_id: class as u32,
                stationary,
            };
            let fits = (0..n).all(|k| {
                let dt = times[k] - t_cur;
                let c = track.center_at(dt);
                let ego = poses[k].translation();
                let clear_of_ego = (c.xy() - ego.xy()).norm()
                    >= cfg.min_box_distance + track.radius();
                clear_of_ego
                    && tracks.iter().all(|o| {
                        (c.xy() - o.center_at(dt).xy()).norm() > track.radius() + o.radius()
                    })
            });
            if fits {
                placed = Some(track);
                break;
            }
        }
        match placed {
            Some(t) => tracks.push(t),
            None => {
                return Err(Error::Placement {
                    index,
                    attempts: PLACEMENT_ATTEMPTS,
                })
            }
        }
    }

    let dropped: Vec<bool> = (0..tracks.len())
        .map(|_| rng.random_bool(cfg.dropout_fraction))
        .collect();

    let mut frames = Vec::with_capacity(n);
    for k in 0..n {
        let inv = poses[k].inverse();
        let dt = times[k] - t_cur;
        let boxes: Vec<Box3D> = tracks
            .iter()
            .map(|t| {
                let v_ego = inv.apply_vector(&Vector3::new(t.velocity.x, t.velocity.y, 0.0));
                let mut b = Box3D {
                    center: inv.apply(&t.center_at(dt)),
                    size: t.size,
                    yaw: t.yaw - poses[k].yaw(),
                    velocity: Vector2::new(v_ego.x, v_ego.y),
                    class_id: t.class_id,
                    is_stationary: t.stationary,
                    visibility: 1,
                };
                b.visibility = visibility_of(&b, &cameras);
                b
            })
            .collect();
        let skip: Vec<bool> = if k == n - 1 {
            dropped.clone()
        } else {
            vec![false; boxes.len()]
        };
        let points = match cfg.lidar_model {
            LidarModel::Surface => surface_lidar(cfg, &boxes, &skip, &cameras, &mut rng),
            LidarModel::Dense => dense_lidar(cfg, &boxes, &skip, &cameras),
        };
        frames.push(Frame {
            index: k,
            timestamp: times[k],
            ego_pose: poses[k],
            boxes,
            lidar: PointCloud::new(points, FrameTag::Ego(k)),
            cameras: cameras.clone(),
        });
    }
    Ok(Scene { frames, seed })
}

/// Ordinal visibility from the best camera's fraction of in-image corners.
fn visibility_of(b: &Box3D, cameras: &[CameraModel]) -> u8 {
    let corners = b.corners();
    let best = cameras
        .iter()
        .map(|cam| corners.iter().filter(|c| cam.project_point(c).is_some()).count())
        .max()
        .unwrap_or(0);
    match best {
        8 => 4,
        4..=7 => 3,
        1..=3 => 2,
        _ => 1,
    }
}

fn lidar_origin() -> Vector3<f64> {
    Vector3::new(0.0, 0.0, LIDAR_HEIGHT)
}

/// Points on the faces of each box that face the LiDAR.
fn surface_lidar(
    cfg: &SceneConfig,
    boxes: &[Box3D],
    skip: &[bool],
    cameras: &[CameraModel],
    rng: &mut ChaCha8Rng,
) -> Vec<Vector3<f64>> {
    let origin = lidar_origin();
    let mut points = Vec::new();
    for (b, &skipped) in boxes.iter().zip(skip) {
        if skipped || cfg.lidar_rays_per_box == 0 {
            continue;
        }
        let h = b.half_extents();
        let s = b.to_local(&origin);
        // (axis, sign, area) for each face looking at the sensor
        let mut faces: Vec<(usize, f64, f64)> = Vec::new();
        for axis in 0..3 {
            let area = 4.0 * h[(axis + 1) % 3] * h[(axis + 2) % 3];
            for sign in [1.0, -1.0] {
                if sign * s[axis] > h[axis] {
                    faces.push((axis, sign, area));
                }
            }
        }
        let total: f64 = faces.iter().map(|f| f.2).sum();
        if faces.is_empty() {
            continue;
        }
        let k = 1.0 - SURFACE_INSET;
        for _ in 0..cfg.lidar_rays_per_box {
            let mut x = rng.random::<f64>() * total;
            let mut face = faces[faces.len() - 1];
            for f in &faces {
                if x < f.2 {
                    face = *f;
                    break;
                }
                x -= f.2;
            }
            let (axis, sign, _) = face;
            let mut q = Vector3::zeros();
            q[axis] = sign * h[axis] * k;
            for other in [(axis + 1) % 3, (axis + 2) % 3] {
                q[other] = rng.random_range(-1.0..1.0) * h[other] * k;
            }
            points.push(b.to_ego(&q));
        }
    }

    let sensors: Vec<Vector3<f64>> = std::iter::once(origin)
        .chain(cameras.iter().map(|c| c.center_ego()))
        .collect();
    let r = cfg.detection_range_xy;
    for _ in 0..cfg.clutter_points {
        let p = Vector3::new(rng.random_range(-r..r), rng.random_range(-r..r), 0.0);
        let near_box = boxes.iter().any(|b| {
            let q = b.to_local(&p);
            let h = b.half_extents();
            q.x.abs() <= h.x + CLUTTER_MARGIN && q.y.abs() <= h.y + CLUTTER_MARGIN
        });
        if near_box {
            continue;
        }
        let occluded = sensors.iter().any(|o| {
            let d = p - o;
            boxes
                .iter()
                .any(|b| b.ray_entry(o, &d).is_some_and(|t| t < 1.0))
        });
        if !occluded {
            points.push(p);
        }
    }
    points
}

/// Nearest surface along a camera pixel ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    /// Camera-frame depth of the hit.
    pub depth: f64,
    /// Index of the box hit, `None` for ground.
    pub box_index: Option<usize>,
}

/// Casts the ray through pixel `(u, v)` against the boxes and the ground
/// plane `z = 0`. Box hits are nudged just inside the surface.
pub fn raycast(cam: &CameraModel, boxes: &[Box3D], u: f64, v: f64) -> Option<RayHit> {
    let (o, d) = cam.ray(u, v);
    let mut best: Option<RayHit> = None;
    for (i, b) in boxes.iter().enumerate() {
        if let Some(t) = b.ray_entry(&o, &d) {
            if t > 0.0 && best.is_none_or(|h| t < h.depth) {
                best = Some(RayHit {
                    depth: t,
                    box_index: Some(i),
                });
            }
        }
    }
    if d.z < 0.0 {
        let t = -o.z / d.z;
        if t > 0.0 && best.is_none_or(|h| t < h.depth) {
            best = Some(RayHit {
                depth: t,
                box_index: None,
            });
        }
    }
    best.map(|h| match h.box_index {
        Some(_) => RayHit {
            depth: h.depth + SURFACE_NUDGE,
            ..h
        },
        None => h,
    })
}

fn dense_lidar(
    cfg: &SceneConfig,
    boxes: &[Box3D],
    skip: &[bool],
    cameras: &[CameraModel],
) -> Vec<Vector3<f64>> {
    let s = cfg.dense_stride;
    let (fh, fw) = (
        cfg.image_height as usize / s,
        cfg.image_width as usize / s,
    );
    let mut points = Vec::new();
    for cam in cameras {
        for r in 0..fh {
            for c in 0..fw {
                let (u, v) = cell_center(r, c, s);
                let Some(hit) = raycast(cam, boxes, u, v) else {
                    continue;
                };
                if hit.depth > DENSE_MAX_DEPTH || hit.box_index.is_some_and(|i| skip[i]) {
                    continue;
                }
                let (o, d) = cam.ray(u, v);
                points.push(o + d * hit.depth);
            }
        }
    }
    points
}

/// Pixel coordinates of the center of feature cell `(row, col)`.
pub fn cell_center(row: usize, col: usize, stride: usize) -> (f64, f64) {
    let s = stride as f64;
    ((col as f64 + 0.5) * s, (row as f64 + 0.5) * s)
}

fn sub_seed(seed: u64, salt: u64) -> u64 {
    seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Projected (clipped) 2D boxes of a frame in one camera.
pub fn frame_boxes2d(frame: &Frame, cam: &CameraModel) -> Vec<Box2D> {
    frame
        .boxes
        .iter()
        .filter_map(|b| project_box3d_to_box2d(cam, b))
        .collect()
}

#[derive(Debug, Clone)]
struct ChannelWave {
    kx: f64,
    ky: f64,
    phase: f64,
    fg_gain: f64,
}

impl ChannelWave {
    fn background(&self, u: f64, v: f64) -> f64 {
        0.5 * (2.0 * PI * (self.kx * u + self.ky * v) + self.phase).sin()
    }
}

/// Synthetic FPN outputs at strides 4, 8 and 16.
///
/// Each channel is a smooth plane wave over pixel position; cells whose
/// center falls inside a projected 2D box get a per-channel gain added.
pub fn synth_feature_pyramid(
    frame: &Frame,
    cam_index: usize,
    channels: usize,
    seed: u64,
) -> Result<FeaturePyramid> {
    let cam = frame.camera(cam_index)?;
    let (w, h) = (cam.image_width as usize, cam.image_height as usize);
    if w % 16 != 0 || h % 16 != 0 {
        return Err(Error::invalid(
            "image_width",
            format!("image size {w}×{h} must be divisible by 16"),
        ));
    }
    if channels == 0 {
        return Err(Error::invalid("channels", "must be ≥ 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 0xF00D + cam_index as u64));
    let waves: Vec<ChannelWave> = (0..channels)
        .map(|_| ChannelWave {
            kx: rng.random_range(0.002..0.02),
            ky: rng.random_range(0.002..0.02),
            phase: rng.random_range(0.0..2.0 * PI),
            fg_gain: rng.random_range(1.0..2.0),
        })
        .collect();
    let boxes2d = frame_boxes2d(frame, cam);
    let level = |stride: usize| {
        Array3::from_shape_fn((h / stride, w / stride, channels), |(r, c, ch)| {
            let (u, v) = cell_center(r, c, stride);
            let wave = &waves[ch];
            let fg = boxes2d
                .iter()
                .any(|b| u >= b.x1 && u <= b.x2 && v >= b.y1 && v <= b.y2);
            wave.background(u, v) + if fg { wave.fg_gain } else { 0.0 }
        })
    };
    FeaturePyramid::new(level(4), level(8), level(16))
}

/// Stand-in for predicted depth and segmentation.
///
/// The ray through each cell center is cast against the scene. Depth logits
/// fall off linearly in bin distance from the hit depth
/// (`−SOFT_DEPTH_SHARPNESS·|b − b*|`), segmentation is 1 on box hits and
/// [`SEG_FLOOR`] elsewhere; both are perturbed by `noise`-scaled Gaussian
/// noise. Cells without a surface in range get a uniform distribution.
pub fn soft_labels_from_frame(
    frame: &Frame,
    cam_index: usize,
    bins: &DepthBinConfig,
    feature_stride: usize,
    noise: f64,
    seed: u64,
) -> Result<(DepthDistributionMap, SegmentationMap)> {
    bins.validate()?;
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::invalid("noise", format!("must be ≥ 0, got {noise}")));
    }
    let cam = frame.camera(cam_index)?;
    let (fh, fw) = feature_dims(cam, feature_stride)?;
    let nb = bins.n_bins();
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 0x50F7 + cam_index as u64));
    let mut depth = Array3::zeros((fh, fw, nb));
    let mut seg = Array2::zeros((fh, fw));
    let mut logits = vec![0.0; nb];
    for r in 0..fh {
        for c in 0..fw {
            let (u, v) = cell_center(r, c, feature_stride);
            let hit = raycast(cam, &frame.boxes, u, v);
            let peak = hit.and_then(|h| bins.bin_index(h.depth));
            for (b, l) in logits.iter_mut().enumerate() {
                let base = peak.map_or(0.0, |p| -SOFT_DEPTH_SHARPNESS * (b as f64 - p as f64).abs());
                let eps: f64 = if noise > 0.0 {
                    StandardNormal.sample(&mut rng)
                } else {
                    0.0
                };
                *l = base + noise * eps;
            }
            let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (b, l) in logits.iter().enumerate() {
                let e = (l - m).exp();
                depth[[r, c, b]] = e;
                total += e;
            }
            for b in 0..nb {
                depth[[r, c, b]] /= total;
            }
            let fg = hit.is_some_and(|h| h.box_index.is_some());
            let base = if fg { 1.0 } else { SEG_FLOOR };
            let eps: f64 = if noise > 0.0 {
                StandardNormal.sample(&mut rng)
            } else {
                0.0
            };
            seg[[r, c]] = (base + noise * eps).clamp(0.0, 1.0);
        }
    }
    Ok((
        DepthDistributionMap {
            values: depth,
            bins: *bins,
        },
        SegmentationMap { values: seg },
    ))
}
