//! Point cloud intensification.
//!
//! Two passes densify the LiDAR behind the hard labels:
//!
//! * **Frame combination** brings points from neighbouring frames into the
//!   current ego frame and keeps only those that land in a stationary box.
//! * **Pseudo point assignment** gives each box that still has no points
//!   one synthetic point at the center of its projected 2D box, at the
//!   smallest corner depth: `((x₁ + x₂)/2, (y₁ + y₂)/2, d_corner)`. A box
//!   qualifies only if it is empty after combination, `d_corner` lies in
//!   the perception range and its visibility is 3 or 4.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{
    min_corner_depth, project_box3d_to_box2d, Box3D, CameraModel,
    FrameTag, PointCloud,
};
use crate::labels::{HardLabels, LabelSource};
use crate::scene::{Frame, Scene};

/// Lowest visibility level that qualifies for a pseudo point.
pub const MIN_PSEUDO_VISIBILITY: u8 = 3;

/// A synthetic image-space point standing in for an empty box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoPoint {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
    /// Index of the box in the frame's box list.
    pub source_box: usize,
}

/// Why a box did or did not receive a pseudo point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PpaOutcome {
    /// The combined cloud already has points inside the box.
    HasPoints,
    /// No 2D box in this camera (behind it or entirely off-image).
    NotProjected,
    /// `d_corner` outside the perception range.
    OutOfRange,
    PoorVisibility,
    Assigned(PseudoPoint),
}

/// Box counts before and after intensification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PciReport {
    pub total_boxes: usize,
    pub boxes_without_points_before: usize,
    pub boxes_without_points_after_fc: usize,
    pub boxes_assigned_pseudo: usize,
    pub boxes_unrecoverable: usize,
}

impl PciReport {
    /// Column order of [`PciReport::csv_row`].
    pub const CSV_HEADER: [&'static str; 5] = [
        "total_boxes",
        "boxes_without_points_before",
        "boxes_without_points_after_fc",
        "boxes_assigned_pseudo",
        "boxes_unrecoverable",
    ];

    pub fn csv_row(&self) -> [usize; 5] {
        [
            self.total_boxes,
            self.boxes_without_points_before,
            self.boxes_without_points_after_fc,
            self.boxes_assigned_pseudo,
            self.boxes_unrecoverable,
        ]
    }

    pub fn is_consistent(&self) -> bool {
        self.boxes_without_points_after_fc <= self.boxes_without_points_before
            && self.boxes_assigned_pseudo + self.boxes_unrecoverable
                == self.boxes_without_points_after_fc
            && self.boxes_without_points_before <= self.total_boxes
    }
}

/// Current-frame points plus neighbour points that fall inside a stationary
/// box of the current frame once moved into its ego frame.
pub fn frame_combination(current: &Frame, adjacent: &[Frame]) -> Result<PointCloud> {
    current.lidar.expect_frame(FrameTag::Ego(current.index))?;
    let stationary: Vec<&Box3D> = current.boxes.iter().filter(|b| b.is_stationary).collect();
    let mut points = current.lidar.points.clone();
    for frame in adjacent {
        frame.lidar.expect_frame(FrameTag::Ego(frame.index))?;
        if stationary.is_empty() {
            continue;
        }
        let to_current = frame.relative_to(current);
        points.extend(
            frame
                .lidar
                .points
                .iter()
                .map(|p| to_current.apply(p))
                .filter(|p| stationary.iter().any(|b| b.contains(p))),
        );
    }
    Ok(PointCloud::new(points, FrameTag::Ego(current.index)))
}

/// Number of cloud points inside each box.
pub fn points_per_box(cloud: &PointCloud, boxes: &[Box3D]) -> Vec<usize> {
    boxes
        .iter()
        .map(|b| cloud.points.iter().filter(|p| b.contains(p)).count())
        .collect()
}

/// Evaluates the pseudo-point criteria for every box. `depth_range` is
/// half-open, `[lo, hi)`.
pub fn pseudo_point_outcomes(
    combined: &PointCloud,
    boxes: &[Box3D],
    cam: &CameraModel,
    depth_range: (f64, f64),
) -> Result<Vec<PpaOutcome>> {
    combined.expect_ego()?;
    let counts = points_per_box(combined, boxes);
    Ok(boxes
        .iter()
        .enumerate()
        .map(|(i, b)| {
            if counts[i] > 0 {
                return PpaOutcome::HasPoints;
            }
            let (Some(rect), Some(d_corner)) =
                (project_box3d_to_box2d(cam, b), min_corner_depth(cam, b))
            else {
                return PpaOutcome::NotProjected;
            };
            let (u, v) = rect.center();
            if !(d_corner >= depth_range.0 && d_corner < depth_range.1) {
                return PpaOutcome::OutOfRange;
            }
            if b.visibility < MIN_PSEUDO_VISIBILITY {
                return PpaOutcome::PoorVisibility;
            }
            PpaOutcome::Assigned(PseudoPoint {
                u,
                v,
                depth: d_corner,
                source_box: i,
            })
        })
        .collect())
}

/// Pseudo points for the boxes that qualify; at most one per box.
pub fn pseudo_point_assignment(
    combined: &PointCloud,
    boxes: &[Box3D],
    cam: &CameraModel,
    depth_range: (f64, f64),
) -> Result<Vec<PseudoPoint>> {
    Ok(pseudo_point_outcomes(combined, boxes, cam, depth_range)?
        .into_iter()
        .filter_map(|o| match o {
            PpaOutcome::Assigned(p) => Some(p),
            _ => None,
        })
        .collect())
}

/// Counts for [`PciReport`] from the before/after clouds and PPA outcomes.
pub fn build_report(
    boxes: &[Box3D],
    before: &PointCloud,
    after_fc: &PointCloud,
    assigned: usize,
) -> PciReport {
    let empty = |c: &PointCloud| points_per_box(c, boxes).iter().filter(|&&n| n == 0).count();
    let after = empty(after_fc);
    PciReport {
        total_boxes: boxes.len(),
        boxes_without_points_before: empty(before),
        boxes_without_points_after_fc: after,
        boxes_assigned_pseudo: assigned,
        boxes_unrecoverable: after - assigned,
    }
}

/// Runs both passes on the scene's current frame and counts the effect.
pub fn pci_statistics(
    scene: &Scene,
    cam: &CameraModel,
    depth_range: (f64, f64),
) -> Result<PciReport> {
    let current = scene.current();
    let combined = frame_combination(current, scene.adjacent())?;
    let pseudo = pseudo_point_assignment(&combined, &current.boxes, cam, depth_range)?;
    Ok(build_report(
        &current.boxes,
        &current.lidar,
        &combined,
        pseudo.len(),
    ))
}

/// What happened to each pseudo point during injection.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InjectReport {
    pub injected: usize,
    /// Cell already held a real point (or a nearer pseudo point).
    pub occupied: usize,
    pub out_of_bounds: usize,
    pub out_of_depth_range: usize,
    /// Source boxes of the skipped points.
    pub skipped_boxes: Vec<usize>,
}

/// Writes pseudo points into the hard labels. Real points keep their cells;
/// between two pseudo points the nearer wins.
pub fn inject_pseudo_points(
    hard: &HardLabels,
    pseudo: &[PseudoPoint],
    feature_stride: usize,
) -> (HardLabels, InjectReport) {
    let mut out = hard.clone();
    let mut report = InjectReport::default();
    let (fh, fw) = out.dims();
    let s = feature_stride.max(1) as f64;
    for p in pseudo {
        let (r, c) = ((p.v / s).floor(), (p.u / s).floor());
        if !(r >= 0.0 && c >= 0.0 && (r as usize) < fh && (c as usize) < fw) {
            report.out_of_bounds += 1;
            report.skipped_boxes.push(p.source_box);
            continue;
        }
        let (r, c) = (r as usize, c as usize);
        let Some(bin) = out.depth.bins.bin_index(p.depth) else {
            report.out_of_depth_range += 1;
            report.skipped_boxes.push(p.source_box);
            continue;
        };
        let blocked = match out.source[[r, c]] {
            LabelSource::Real => true,
            LabelSource::Pseudo => out.point_depth[[r, c]] <= p.depth,
            LabelSource::Empty => false,
        };
        if blocked {
            report.occupied += 1;
            report.skipped_boxes.push(p.source_box);
            continue;
        }
        out.write_cell(r, c, bin, p.depth, true, LabelSource::Pseudo);
        report.injected += 1;
    }
    (out, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RigidTransform;
    use crate::labels::DepthBinConfig;
    use nalgebra::Vector3;

    fn cam() -> CameraModel {
        CameraModel::new(200.0, 200.0, 160.0, 96.0, RigidTransform::identity(), 320, 192).unwrap()
    }

    fn cube_at(z: f64) -> Box3D {
        Box3D::new(Vector3::new(0.0, 0.0, z), [2.0, 2.0, 2.0], 0.0).unwrap()
    }

    #[test]
    fn eq8_point_for_empty_visible_box() {
        let b = cube_at(23.5);
        let empty = PointCloud::empty(FrameTag::Ego(0));
        let pts = pseudo_point_assignment(&empty, std::slice::from_ref(&b), &cam(), (1.0, 60.0)).unwrap();
        assert_eq!(pts.len(), 1);
        let rect = project_box3d_to_box2d(&cam(), &b).unwrap();
        assert_eq!(pts[0].u, (rect.x1 + rect.x2) / 2.0);
        assert_eq!(pts[0].v, (rect.y1 + rect.y2) / 2.0);
        assert_eq!(pts[0].depth, 22.5);
        assert_eq!(pts[0].source_box, 0);
    }

    #[test]
    fn partly_visible_box_uses_clipped_center() {
        // straddles the right image edge
        let b = Box3D::new(Vector3::new(16.0, 0.0, 20.0), [4.0, 2.0, 2.0], 0.0).unwrap();
        let empty = PointCloud::empty(FrameTag::Ego(0));
        let pts = pseudo_point_assignment(&empty, std::slice::from_ref(&b), &cam(), (1.0, 60.0)).unwrap();
        let rect = project_box3d_to_box2d(&cam(), &b).unwrap();
        assert_eq!(rect.x2, 319.0);
        assert_eq!(pts[0].u, (rect.x1 + 319.0) / 2.0);
        assert!(cam().in_bounds(pts[0].u, pts[0].v));
    }

    #[test]
    fn visibility_gate() {
        let empty = PointCloud::empty(FrameTag::Ego(0));
        for (vis, expect) in [(1, 0), (2, 0), (3, 1), (4, 1)] {
            let b = cube_at(20.0).with_visibility(vis);
            let n = pseudo_point_assignment(&empty, &[b], &cam(), (1.0, 60.0))
                .unwrap()
                .len();
            assert_eq!(n, expect, "visibility {vis}");
        }
    }

    #[test]
    fn real_point_blocks_assignment() {
        let b = cube_at(20.0);
        let cloud = PointCloud::new(vec![Vector3::new(0.2, 0.1, 19.5)], FrameTag::Ego(0));
        let out = pseudo_point_outcomes(&cloud, &[b], &cam(), (1.0, 60.0)).unwrap();
        assert_eq!(out, vec![PpaOutcome::HasPoints]);
    }

    #[test]
    fn depth_range_gate() {
        let empty = PointCloud::empty(FrameTag::Ego(0));
        let out = pseudo_point_outcomes(&empty, &[cube_at(70.0)], &cam(), (1.0, 60.0)).unwrap();
        assert_eq!(out, vec![PpaOutcome::OutOfRange]);
        let out = pseudo_point_outcomes(&empty, &[cube_at(-10.0)], &cam(), (1.0, 60.0)).unwrap();
        assert_eq!(out, vec![PpaOutcome::NotProjected]);
    }

    #[test]
    fn inject_into_empty_and_occupied_cells() {
        let bins = DepthBinConfig::default();
        let mut hard = HardLabels::empty(12, 20, bins);
        hard.write_cell(3, 4, 5, 3.7, false, LabelSource::Real);
        let pseudo = [
            PseudoPoint {
                u: 100.0,
                v: 40.0,
                depth: 22.5,
                source_box: 0,
            },
            PseudoPoint {
                u: 70.0,
                v: 50.0,
                depth: 10.0,
                source_box: 1,
            },
            PseudoPoint {
                u: 10.0,
                v: 10.0,
                depth: 99.0,
                source_box: 2,
            },
            PseudoPoint {
                u: 1000.0,
                v: 10.0,
                depth: 5.0,
                source_box: 3,
            },
        ];
        let (out, rep) = inject_pseudo_points(&hard, &pseudo, 16);
        assert!(out.valid_mask[[2, 6]]);
        assert_eq!(out.seg.values[[2, 6]], 1.0);
        assert_eq!(out.depth.values[[2, 6, bins.bin_index(22.5).unwrap()]], 1.0);
        // (70, 50) → cell (3, 4) held by a real point
        assert_eq!(out.seg.values[[3, 4]], 0.0);
        assert_eq!(out.point_depth[[3, 4]], 3.7);
        assert_eq!(rep.injected, 1);
        assert_eq!(rep.occupied, 1);
        assert_eq!(rep.out_of_depth_range, 1);
        assert_eq!(rep.out_of_bounds, 1);
        assert_eq!(rep.skipped_boxes, vec![1, 2, 3]);
        out.check_invariants().unwrap();
    }

    #[test]
    fn nearer_pseudo_point_wins() {
        let bins = DepthBinConfig::default();
        let hard = HardLabels::empty(4, 4, bins);
        let mk = |d, i| PseudoPoint {
            u: 5.0,
            v: 5.0,
            depth: d,
            source_box: i,
        };
        let (a, _) = inject_pseudo_points(&hard, &[mk(30.0, 0), mk(12.0, 1)], 16);
        let (b, _) = inject_pseudo_points(&hard, &[mk(12.0, 1), mk(30.0, 0)], 16);
        assert_eq!(a.point_depth[[0, 0]], 12.0);
        assert_eq!(a, b);
    }

    #[test]
    fn report_bookkeeping() {
        let r = PciReport {
            total_boxes: 10,
            boxes_without_points_before: 4,
            boxes_without_points_after_fc: 3,
            boxes_assigned_pseudo: 1,
            boxes_unrecoverable: 2,
        };
        assert!(r.is_consistent());
        assert_eq!(r.csv_row(), [10, 4, 3, 1, 2]);
    }
}
