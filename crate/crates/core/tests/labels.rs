use fgdistill::geometry::{Box3D, CameraModel, FrameTag, PointCloud};
use fgdistill::labels::{generate_hard_labels, merge_labels, DepthBinConfig};
use fgdistill::scene::{generate_scene, SceneConfig};
use fgdistill::selfcheck::cases;
use nalgebra::Vector3;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const STRIDE: usize = 16;

fn scene_cfg() -> SceneConfig {
    SceneConfig {
        n_boxes: 15,
        n_cameras: 2,
        clutter_points: 800,
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn hard_labels_ignore_point_order(seed in any::<u64>(), shuffle in any::<u64>(), cam in 0usize..2) {
        let scene = generate_scene(&scene_cfg(), seed).unwrap();
        let f = scene.current();
        let bins = DepthBinConfig::default();
        let a = generate_hard_labels(&f.lidar, &f.boxes, &f.cameras[cam], &bins, STRIDE).unwrap();
        let mut pts = f.lidar.points.clone();
        pts.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle));
        let cloud = PointCloud::new(pts, f.lidar.frame_tag);
        let b = generate_hard_labels(&cloud, &f.boxes, &f.cameras[cam], &bins, STRIDE).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn foreground_cells_come_from_box_points(seed in any::<u64>()) {
        let scene = generate_scene(&scene_cfg(), seed).unwrap();
        let f = scene.current();
        let cam = &f.cameras[0];
        let bins = DepthBinConfig::default();
        let hard = generate_hard_labels(&f.lidar, &f.boxes, cam, &bins, STRIDE).unwrap();
        for ((r, c), &s) in hard.seg.values.indexed_iter() {
            if s != 1.0 {
                continue;
            }
            let winner = f.lidar.points.iter().find(|p| {
                cam.project_point(p).is_some_and(|pr| {
                    (pr.v as usize) / STRIDE == r
                        && (pr.u as usize) / STRIDE == c
                        && pr.depth == hard.point_depth[[r, c]]
                        && f.boxes.iter().any(|b| b.contains(p))
                })
            });
            prop_assert!(winner.is_some(), "cell ({r}, {c}) has no foreground point");
        }
    }

    #[test]
    fn more_points_never_lose_valid_cells(seed in any::<u64>(), keep in 0.0f64..1.0) {
        let scene = generate_scene(&scene_cfg(), seed).unwrap();
        let f = scene.current();
        let bins = DepthBinConfig::default();
        let n = (f.lidar.len() as f64 * keep) as usize;
        let subset = PointCloud::new(f.lidar.points[..n].to_vec(), f.lidar.frame_tag);
        let few = generate_hard_labels(&subset, &f.boxes, &f.cameras[0], &bins, STRIDE).unwrap();
        let all = generate_hard_labels(&f.lidar, &f.boxes, &f.cameras[0], &bins, STRIDE).unwrap();
        prop_assert!(all.valid_count() >= few.valid_count());
        for (a, b) in few.valid_mask.iter().zip(all.valid_mask.iter()) {
            prop_assert!(!a || *b);
        }
    }

    #[test]
    fn merged_depth_rows_are_normalized(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (hard, soft_d, soft_s) = cases::random_label_pair(&mut rng, 9, 13, 6);
        let (d, s) = merge_labels(&hard, &soft_d, &soft_s).unwrap();
        prop_assert!(d.max_normalization_error() < 1e-6);
        prop_assert_eq!(s.values.dim(), (9, 13));
    }
}

#[test]
fn equal_depth_tie_goes_to_foreground_in_any_order() {
    let cam = CameraModel::mounted(0.0, Vector3::new(0.0, 0.0, 1.6), 70f64.to_radians(), 704, 256).unwrap();
    let b = Box3D::new(Vector3::new(10.0, 0.65, 1.0), [1.0, 1.0, 2.0], 0.0).unwrap();
    let inside = Vector3::new(10.0, 0.2, 1.0);
    let outside = Vector3::new(10.0, 0.1, 1.0);
    assert!(b.contains(&inside) && !b.contains(&outside));
    let bins = DepthBinConfig::default();
    for pts in [vec![inside, outside], vec![outside, inside]] {
        let cloud = PointCloud::new(pts, FrameTag::Ego(0));
        let hard = generate_hard_labels(&cloud, std::slice::from_ref(&b), &cam, &bins, STRIDE).unwrap();
        assert_eq!(hard.valid_count(), 1);
        let (r, c) = hard.valid_mask.indexed_iter().find(|(_, &m)| m).unwrap().0;
        assert_eq!(hard.seg.values[[r, c]], 1.0);
        assert_eq!(hard.point_depth[[r, c]], 10.0);
    }
}
