//! Oracle comparisons that can run outside the test harness.
//!
//! [`run_all`] executes every check in [`CHECKS`] and reports one
//! [`CheckOutcome`] per check. The random case generators in [`cases`] are
//! shared with the integration tests.

pub mod cases;
pub mod oracles;

use std::f64::consts::PI;

use nalgebra::Vector3;
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::distill::{
    distillation_loss, encode_joint, loss_gradient_check, BevEncoder, BoxBlurEncoder,
    IdentityEncoder,
};
use crate::geometry::{project_box3d_to_box2d, Box2D, Box3D};
use crate::labels::{generate_hard_labels, merge_labels, LabelSource};
use crate::msfe::{
    downsample2, elliptical_gaussian_heatmap, gaussian_focal_loss, msfe_fuse, ForegroundHeatmap,
    FOCAL_EPS,
};
use crate::pci::{frame_combination, inject_pseudo_points, pci_statistics, points_per_box};
use crate::pipeline::{ablation_sweep, run_pipeline, PciToggles, PipelineConfig, Toggle};
use crate::scene::{cell_center, generate_scene, raycast, LidarModel, SceneConfig};
use crate::view::{build_frustum, sa_bev_pool, student_bev, teacher_bev};

/// Result of one oracle comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type CheckFn = fn() -> Result<String, String>;

/// Every registered check, in report order.
pub const CHECKS: &[(&str, CheckFn)] = &[
    ("geometry.corners", check_corners),
    ("geometry.box2d_bounds", check_box2d),
    ("geometry.point_in_box", check_point_in_box),
    ("labels.valid_cell_count", check_hard_count),
    ("labels.merge_selection", check_merge),
    ("pci.combined_counts", check_fc_counts),
    ("pci.dropout_recovery", check_dropout_recovery),
    ("pci.inject_union", check_inject_union),
    ("view.frustum_round_trip", check_frustum_round_trip),
    ("view.pool_oracle", check_pool),
    ("view.student_oracle", check_student),
    ("view.teacher_perfect_labels", check_teacher_perfect),
    ("view.teacher_column_locality", check_teacher_locality),
    ("msfe.ellipse_contour", check_ellipse),
    ("msfe.downsample_composition", check_ds_compose),
    ("msfe.literal_fusion", check_msfe_literal),
    ("msfe.focal_per_cell", check_focal),
    ("distill.joint_encoding", check_joint),
    ("distill.loss_oracle", check_loss),
    ("distill.gradient", check_gradient),
    ("distill.gradient_scaled", check_gradient_scaled),
    ("pipeline.perfect_labels", check_perfect_pipeline),
    ("pipeline.fc_sweep", check_fc_sweep),
];

pub fn run_all() -> Vec<CheckOutcome> {
    CHECKS
        .iter()
        .map(|&(name, f)| {
            let (passed, detail) = match f() {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            CheckOutcome {
                name,
                passed,
                detail,
            }
        })
        .collect()
}

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn max_abs_diff<'a>(a: impl IntoIterator<Item = &'a f64>, b: impl IntoIterator<Item = &'a f64>) -> f64 {
    a.into_iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn check_corners() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut cases = vec![([1.0, 0.0, 0.0], [4.0, 2.0, 2.0], PI / 4.0)];
    for _ in 0..200 {
        cases.push((
            [rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-2.0..2.0)],
            [rng.random_range(0.1..10.0), rng.random_range(0.1..5.0), rng.random_range(0.1..4.0)],
            rng.random_range(-PI..PI),
        ));
    }
    let mut worst: f64 = 0.0;
    for (c, s, yaw) in &cases {
        let b = Box3D::new(Vector3::from(*c), *s, *yaw).map_err(|e| e.to_string())?;
        let want = oracles::corners(*c, *s, *yaw);
        for (got, want) in b.corners().iter().zip(want.iter()) {
            worst = worst.max(max_abs_diff(got.iter(), want.iter()));
        }
    }
    ensure!(worst < 1e-12, "max corner deviation {worst:e}");
    Ok(format!("{} boxes, max deviation {worst:.1e}", cases.len()))
}

fn check_box2d() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cam = cases::front_camera();
    let mut checked = 0;
    while checked < 200 {
        let b = cases::random_box_ahead(&mut rng);
        let Some(want) = oracles::projected_corner_bounds(&cam, &b) else {
            continue;
        };
        let all_in = b.corners().iter().all(|c| cam.project_point(c).is_some());
        if !all_in {
            continue;
        }
        let got = project_box3d_to_box2d(&cam, &b).ok_or("box lost")?;
        let d = max_abs_diff(&[got.x1, got.y1, got.x2, got.y2], &want);
        ensure!(d < 1e-9, "box {checked}: rectangle off by {d:e}");
        checked += 1;
    }
    Ok(format!("{checked} fully visible boxes"))
}

fn check_point_in_box() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut n = 0;
    for _ in 0..20 {
        let b = cases::random_box_ahead(&mut rng);
        for _ in 0..1000 {
            let p = b.center
                + Vector3::new(
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-2.0..2.0),
                );
            ensure!(
                b.contains(&p) == oracles::inside_box(&b, &p),
                "disagreement at {p:?}"
            );
            n += 1;
        }
    }
    Ok(format!("{n} points agree"))
}

fn check_hard_count() -> Result<String, String> {
    let bins = crate::labels::DepthBinConfig::default();
    for seed in 0..5 {
        let scene = generate_scene(&cases::small_scene(), seed).map_err(|e| e.to_string())?;
        let f = scene.current();
        for cam in &f.cameras {
            let hard = generate_hard_labels(&f.lidar, &f.boxes, cam, &bins, 16).map_err(|e| e.to_string())?;
            let want = oracles::count_hit_cells(&f.lidar, cam, &bins, 16);
            ensure!(hard.valid_count() == want, "seed {seed}: {} vs {want}", hard.valid_count());
        }
    }
    Ok("5 scenes".into())
}

fn check_merge() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for i in 0..100 {
        let (hard, sd, ss) = cases::random_label_pair(&mut rng, 6, 7, 5);
        let (d, s) = merge_labels(&hard, &sd, &ss).map_err(|e| e.to_string())?;
        let (od, os) = oracles::merge_select(&hard, &sd, &ss);
        ensure!(d.values == od && s.values == os, "case {i} differs");
    }
    Ok("100 random masks bitwise".into())
}

fn check_fc_counts() -> Result<String, String> {
    for seed in 0..5 {
        let scene = generate_scene(&cases::small_scene(), seed).map_err(|e| e.to_string())?;
        let cur = scene.current();
        let combined = frame_combination(cur, scene.adjacent()).map_err(|e| e.to_string())?;
        let got = points_per_box(&combined, &cur.boxes);
        let want = oracles::combined_counts(&scene);
        ensure!(got == want, "seed {seed}: {got:?} vs {want:?}");
    }
    Ok("5 scenes".into())
}

fn check_dropout_recovery() -> Result<String, String> {
    let cfg = SceneConfig {
        dropout_fraction: 1.0,
        stationary_fraction: 1.0,
        n_boxes: 12,
        n_cameras: 1,
        ..Default::default()
    };
    let scene = generate_scene(&cfg, 11).map_err(|e| e.to_string())?;
    let cam = &scene.current().cameras[0];
    let report = pci_statistics(&scene, cam, (1.0, 60.0)).map_err(|e| e.to_string())?;
    let counts = oracles::combined_counts(&scene);
    let empty_after = counts.iter().filter(|&&n| n == 0).count();
    ensure!(
        report.boxes_without_points_after_fc == empty_after,
        "report {} vs oracle {empty_after}",
        report.boxes_without_points_after_fc
    );
    ensure!(
        report.boxes_without_points_after_fc < report.boxes_without_points_before,
        "no recovery: {report:?}"
    );
    Ok(format!(
        "{} → {} empty boxes",
        report.boxes_without_points_before, report.boxes_without_points_after_fc
    ))
}

fn check_inject_union() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..100 {
        let (hard, _, _) = cases::random_label_pair(&mut rng, 6, 8, 6);
        let pseudo = cases::random_pseudo_points(&mut rng, 10, 8 * 16, 6 * 16, &hard.depth.bins);
        let (out, _) = inject_pseudo_points(&hard, &pseudo, 16);
        let want = oracles::injected_mask(&hard, &pseudo, 16);
        ensure!(out.valid_mask == want, "case {i} mask differs");
    }
    Ok("100 batches".into())
}

fn check_frustum_round_trip() -> Result<String, String> {
    let cam = cases::front_camera();
    let bins = crate::labels::DepthBinConfig::default();
    let f = build_frustum(&cam, &bins, 16).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..500 {
        let e = f.entries[rng.random_range(0..f.len())];
        let p = cam.project_point(&e.p_ego).ok_or("entry projects outside")?;
        let (r, c) = ((p.v / 16.0).floor() as usize, (p.u / 16.0).floor() as usize);
        ensure!((r, c) == (e.row, e.col), "cell {:?} → {:?}", (e.row, e.col), (r, c));
        ensure!(bins.bin_index(p.depth) == Some(e.bin), "bin {} lost", e.bin);
    }
    Ok("500 entries".into())
}

fn check_pool() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let c = cases::random_pool_case(&mut rng, 8, 8, 4, 16);
        let got = sa_bev_pool(&c.ctx, &c.depth, &c.seg, &c.frustum, &c.bev, c.threshold)
            .map_err(|e| e.to_string())?;
        let want = oracles::pool(&c.ctx.values, &c.depth.values, &c.seg.values, &c.frustum, &c.bev, c.threshold);
        worst = worst.max(max_abs_diff(got.values.iter(), want.iter()));
    }
    ensure!(worst <= 1e-9, "max deviation {worst:e}");
    Ok(format!("200 cases, max deviation {worst:.1e}"))
}

fn check_student() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for i in 0..50 {
        let c = cases::random_pool_case(&mut rng, 6, 6, 3, 12);
        let got = student_bev(&c.ctx, &c.depth, &c.seg, &c.frustum, &c.bev, c.threshold)
            .map_err(|e| e.to_string())?;
        let want = oracles::pool(&c.ctx.values, &c.depth.values, &c.seg.values, &c.frustum, &c.bev, c.threshold);
        let d = max_abs_diff(got.values.iter(), want.iter());
        ensure!(d <= 1e-9, "case {i}: {d:e}");
    }
    Ok("50 cases".into())
}

fn check_teacher_perfect() -> Result<String, String> {
    let cfg = SceneConfig {
        n_cameras: 1,
        n_boxes: 10,
        ..Default::default()
    };
    let scene = generate_scene(&cfg, 21).map_err(|e| e.to_string())?;
    let frame = scene.current();
    let cam = &frame.cameras[0];
    let bins = crate::labels::DepthBinConfig::default();
    let frustum = build_frustum(cam, &bins, 16).map_err(|e| e.to_string())?;
    let (fh, fw) = (frustum.feat_h, frustum.feat_w);
    // perfect labels: every cell valid, one-hot at the true surface bin
    let mut hard = crate::labels::HardLabels::empty(fh, fw, bins);
    let mut surface = std::collections::BTreeSet::new();
    for r in 0..fh {
        for c in 0..fw {
            let (u, v) = cell_center(r, c, 16);
            let hit = raycast(cam, &frame.boxes, u, v);
            let (bin, depth, fg) = match hit.and_then(|h| bins.bin_index(h.depth).map(|b| (b, h))) {
                Some((b, h)) => (b, h.depth, h.box_index.is_some()),
                None => (0, bins.bin_center(0), false),
            };
            hard.write_cell(r, c, bin, depth, fg, LabelSource::Real);
            if fg {
                let p = frustum.entries[(r * fw + c) * frustum.n_bins + bin].p_ego;
                if let Some(cell) = oracles::bev_index(&crate::view::BevGridConfig::default(), &p) {
                    surface.insert(cell);
                }
            }
        }
    }
    let ctx = crate::view::ContextFeatureMap::new(Array3::from_elem((fh, fw, 2), 1.0)).map_err(|e| e.to_string())?;
    let (sd, ss) = crate::scene::soft_labels_from_frame(frame, 0, &bins, 16, 0.3, 5).map_err(|e| e.to_string())?;
    let bev = crate::view::BevGridConfig::default();
    let t = teacher_bev(&ctx, &hard, &sd, &ss, &frustum, &bev, 0.25).map_err(|e| e.to_string())?;
    let want = oracles::pool(&ctx.values, &hard.depth.values, &hard.seg.values, &frustum, &bev, 0.25);
    let d = max_abs_diff(t.values.iter(), want.iter());
    ensure!(d <= 1e-9, "teacher vs oracle {d:e}");
    let occupied: std::collections::BTreeSet<(usize, usize)> = t
        .occupancy()
        .indexed_iter()
        .filter(|(_, &v)| v > 0.0)
        .map(|(ij, _)| ij)
        .collect();
    ensure!(!surface.is_empty(), "no surface cells in view");
    ensure!(occupied == surface, "{} occupied vs {} surface cells", occupied.len(), surface.len());
    Ok(format!("{} surface cells", surface.len()))
}

fn check_teacher_locality() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for i in 0..50 {
        let c = cases::random_pool_case(&mut rng, 6, 6, 4, 16);
        let (fh, fw, nb) = c.depth.values.dim();
        let mut hard = crate::labels::HardLabels::empty(fh, fw, c.depth.bins);
        let (r0, c0) = (rng.random_range(0..fh), rng.random_range(0..fw));
        hard.write_cell(r0, c0, rng.random_range(0..nb), 5.0, true, LabelSource::Real);
        let s = student_bev(&c.ctx, &c.depth, &c.seg, &c.frustum, &c.bev, c.threshold).map_err(|e| e.to_string())?;
        let t = teacher_bev(&c.ctx, &hard, &c.depth, &c.seg, &c.frustum, &c.bev, c.threshold)
            .map_err(|e| e.to_string())?;
        let reach = oracles::column_cells(&c.frustum, &c.bev, r0, c0);
        for ((gi, gj, _), (a, b)) in s.values.indexed_iter().zip(t.values.iter()).map(|((ix, a), b)| (ix, (a, b))) {
            if a != b {
                ensure!(reach.contains(&(gi, gj)), "case {i}: change at ({gi}, {gj}) outside the column");
            }
        }
    }
    Ok("50 cases".into())
}

fn check_ellipse() -> Result<String, String> {
    // width 2·height; center on the center of cell (20, 30)
    let (cu, cv) = (30.5 * 4.0, 20.5 * 4.0);
    let b = Box2D::new(cu - 48.0, cv - 24.0, cu + 48.0, cv + 24.0).map_err(|e| e.to_string())?;
    let hm = elliptical_gaussian_heatmap(&[b], 41, 61, 4, 6.0).map_err(|e| e.to_string())?;
    let (sx, sy) = (96.0 / 24.0, 48.0 / 24.0);
    ensure!(sx == 2.0 * sy, "setup");
    let mut worst: f64 = 0.0;
    for r in 0..41 {
        for c in 0..61 {
            let (dx, dy) = (c as f64 - 30.0, r as f64 - 20.0);
            let want = (-(dx * dx / (2.0 * sx * sx) + dy * dy / (2.0 * sy * sy))).exp();
            worst = worst.max((hm.values[[r, c]] - want).abs());
        }
    }
    ensure!(worst < 1e-12, "closed form off by {worst:e}");
    // iso-value: (2k, 0) and (0, k) offsets match
    for k in 1..=8 {
        let a = hm.values[[20, 30 + 2 * k]];
        let bv = hm.values[[20 + k, 30]];
        ensure!((a - bv).abs() < 1e-12, "k={k}: {a} vs {bv}");
    }
    Ok(format!("41×61 grid, max deviation {worst:.1e}"))
}

fn check_ds_compose() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..50 {
        let (h, w) = (4 * rng.random_range(1..8), 4 * rng.random_range(1..8));
        let x = Array2::from_shape_fn((h, w), |_| rng.random_range(-1.0..1.0));
        let a = downsample2(&x, 4).map_err(|e| e.to_string())?;
        let b = downsample2(&downsample2(&x, 2).map_err(|e| e.to_string())?, 2).map_err(|e| e.to_string())?;
        let d = max_abs_diff(a.iter(), b.iter());
        ensure!(d <= 1e-12, "{d:e}");
        let o = oracles::block_mean(&x, 4);
        let d = max_abs_diff(a.iter(), o.iter());
        ensure!(d <= 1e-12, "block mean {d:e}");
    }
    Ok("50 maps".into())
}

fn check_msfe_literal() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let (pyr, hm) = cases::random_pyramid(&mut rng, 4, 5, 3);
        let beta = rng.random_range(0.0..0.6);
        let got = msfe_fuse(&pyr, &hm, beta).map_err(|e| e.to_string())?;
        let want = oracles::msfe_literal(&pyr.f4, &pyr.f8, &pyr.f16, &hm.values, beta);
        worst = worst.max(max_abs_diff(got.iter(), want.iter()));
    }
    ensure!(worst <= 1e-12, "{worst:e}");
    Ok(format!("50 cases, max deviation {worst:.1e}"))
}

fn check_focal() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..50 {
        let target = Array2::from_shape_fn((4, 4), |_| {
            if rng.random_bool(0.2) { 1.0 } else { rng.random_range(0.0..1.0) }
        });
        let pred = Array2::from_shape_fn((4, 4), |_| rng.random_range(0.0..1.0));
        let got = gaussian_focal_loss(
            &ForegroundHeatmap::new(pred.clone()).map_err(|e| e.to_string())?,
            &ForegroundHeatmap::new(target.clone()).map_err(|e| e.to_string())?,
            2.0,
            4.0,
        )
        .map_err(|e| e.to_string())?;
        let want = oracles::focal_per_cell(&pred, &target, 2.0, 4.0, FOCAL_EPS);
        ensure!((got - want).abs() <= 1e-9, "{got} vs {want}");
    }
    Ok("50 4×4 cases".into())
}

fn check_joint() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let encoders: [&dyn BevEncoder; 2] = [&IdentityEncoder, &BoxBlurEncoder];
    for enc in encoders {
        for i in 0..20 {
            let (s, t) = cases::random_grid_pair(&mut rng, 9, 7, 3, false);
            let (js, jt) = encode_joint(enc, &s, &t).map_err(|e| e.to_string())?;
            ensure!(js == enc.encode(&s) && jt == enc.encode(&t), "pair {i} differs");
        }
    }
    Ok("2 encoders × 20 pairs bitwise".into())
}

fn check_loss() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for i in 0..50 {
        let (s, t) = cases::random_grid_pair(&mut rng, 8, 8, 4, false);
        let got = distillation_loss(&t, &s, 1e-6).map_err(|e| e.to_string())?;
        let (want, n) = oracles::distill_loss(&t.values, &s.values, 1e-6);
        ensure!((got.loss - want).abs() <= 1e-9 && got.included_cells == n, "case {i}");
    }
    Ok("50 grids".into())
}

fn gradient_run(scale: f64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (mut s, mut t) = cases::random_grid_pair(&mut rng, 5, 5, 3, true);
        s.values *= scale;
        t.values *= scale;
        let g = loss_gradient_check(&t, &s, 1e-6, 1e-5 * scale).map_err(|e| e.to_string())?;
        worst = worst.max(g.max_rel_error);
    }
    Ok(worst)
}

fn check_gradient() -> Result<String, String> {
    let worst = gradient_run(1.0)?;
    ensure!(worst < 1e-5, "max relative error {worst:e}");
    Ok(format!("max relative error {worst:.1e}"))
}

fn check_gradient_scaled() -> Result<String, String> {
    let base = gradient_run(1.0)?;
    let scaled = gradient_run(10.0)?;
    ensure!(scaled < 1e-5, "scaled max relative error {scaled:e}");
    Ok(format!("relative error {base:.1e} at ×1, {scaled:.1e} at ×10"))
}

fn check_perfect_pipeline() -> Result<String, String> {
    let cfg = PipelineConfig {
        scene: SceneConfig {
            lidar_model: LidarModel::Dense,
            n_cameras: 1,
            ..Default::default()
        },
        soft_noise: 0.0,
        pci_enabled: PciToggles {
            frame_combination: false,
            pseudo_points: false,
        },
        ..Default::default()
    };
    let r = run_pipeline(&cfg).map_err(|e| e.to_string())?;
    ensure!(r.loss < 1e-3, "loss {}", r.loss);
    Ok(format!("loss {:.2e} over {} cells", r.loss, r.included_cells))
}

fn check_fc_sweep() -> Result<String, String> {
    let cfg = PipelineConfig {
        scene: SceneConfig {
            dropout_fraction: 0.8,
            stationary_fraction: 1.0,
            n_cameras: 1,
            ..Default::default()
        },
        bev: crate::view::BevGridConfig {
            grid_h: 64,
            grid_w: 64,
            ..Default::default()
        },
        seed: 4,
        ..Default::default()
    };
    let rows = ablation_sweep(&cfg, &[Toggle::Fc]).map_err(|e| e.to_string())?;
    let scene = generate_scene(&cfg.scene, cfg.seed).map_err(|e| e.to_string())?;
    let empty_oracle = oracles::combined_counts(&scene).iter().filter(|&&n| n == 0).count();
    let (off, on) = (&rows[0].result.pci_report, &rows[1].result.pci_report);
    ensure!(on.boxes_without_points_after_fc == empty_oracle, "on-row {} vs oracle {empty_oracle}", on.boxes_without_points_after_fc);
    ensure!(
        on.boxes_without_points_after_fc < off.boxes_without_points_after_fc,
        "FC on {} vs off {}",
        on.boxes_without_points_after_fc,
        off.boxes_without_points_after_fc
    );
    Ok(format!(
        "empty boxes {} without FC, {} with",
        off.boxes_without_points_after_fc, on.boxes_without_points_after_fc
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_check_passes() {
        let failed: Vec<_> = run_all().into_iter().filter(|o| !o.passed).collect();
        assert!(failed.is_empty(), "{failed:#?}");
    }

    #[test]
    fn names_unique() {
        let mut names: Vec<_> = CHECKS.iter().map(|c| c.0).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), CHECKS.len());
    }
}
