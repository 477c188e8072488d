use fgdistill::geometry::{
    box3d_corners, point_in_box, sample_augmentation, Box3D, CameraModel, RigidTransform,
};
use nalgebra::Vector3;
use proptest::prelude::*;

fn camera(yaw: f64) -> CameraModel {
    CameraModel::mounted(yaw, Vector3::new(0.3, -0.2, 1.6), 70f64.to_radians(), 704, 256).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn projection_round_trip(
        yaw in -3.1f64..3.1,
        x in 1.0f64..80.0,
        y in -40.0f64..40.0,
        z in -3.0f64..5.0,
    ) {
        let cam = camera(yaw);
        let p = cam.ego_to_cam.inverse().apply(&Vector3::new(y / 80.0 * x, z / 10.0 * x, x));
        if let Some(pr) = cam.project_point(&p) {
            let back = cam.unproject(pr.u, pr.v, pr.depth);
            prop_assert!((back - p).norm() < 1e-6, "{} vs {}", back, p);
        }
    }

    #[test]
    fn point_in_box_rigid_invariant(
        cx in -20.0f64..20.0, cy in -20.0f64..20.0, cz in -1.0f64..2.0,
        l in 0.5f64..6.0, w in 0.5f64..3.0, h in 0.5f64..3.0,
        yaw in -3.1f64..3.1,
        px in -25.0f64..25.0, py in -25.0f64..25.0, pz in -2.0f64..4.0,
        t_yaw in -3.1f64..3.1, tx in -50.0f64..50.0, ty in -50.0f64..50.0,
    ) {
        let b = Box3D::new(Vector3::new(cx, cy, cz), [l, w, h], yaw).unwrap();
        let p = Vector3::new(px, py, pz);
        let t = RigidTransform::from_yaw(t_yaw, Vector3::new(tx, ty, 0.5));
        let mut moved = b.clone();
        moved.center = t.apply(&b.center);
        moved.yaw = b.yaw + t_yaw;
        let q = t.apply(&p);
        // away from the boundary, floating-point error cannot flip membership
        let local = b.to_local(&p);
        let margin = (0..3).map(|i| (local[i].abs() - b.half_extents()[i]).abs()).fold(f64::MAX, f64::min);
        prop_assume!(margin > 1e-9);
        prop_assert_eq!(point_in_box(&b, &p), point_in_box(&moved, &q));
    }

    #[test]
    fn sampled_augmentation_in_range(seed in any::<u64>()) {
        prop_assert!(sample_augmentation(seed).validate().is_ok());
    }
}

#[test]
fn yaw_zero_corners_are_axis_aligned() {
    let b = Box3D::new(Vector3::new(1.0, -2.0, 0.5), [4.0, 2.0, 1.0], 0.0).unwrap();
    let mut got: Vec<[f64; 3]> = box3d_corners(&b).iter().map(|c| [c.x, c.y, c.z]).collect();
    let mut want = Vec::new();
    for x in [-1.0, 3.0] {
        for y in [-3.0, -1.0] {
            for z in [0.0, 1.0] {
                want.push([x, y, z]);
            }
        }
    }
    let key = |a: &[f64; 3], b: &[f64; 3]| a.partial_cmp(b).unwrap();
    got.sort_by(key);
    want.sort_by(key);
    assert_eq!(got, want);
}
