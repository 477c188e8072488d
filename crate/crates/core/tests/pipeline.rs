use fgdistill::pipeline::{ablation_sweep, run_pipeline, run_pipeline_with_artifacts, PciToggles, PipelineConfig, Toggle};
use fgdistill::scene::SceneConfig;
use fgdistill::view::BevGridConfig;
use fgdistill::Error;

fn small(seed: u64) -> PipelineConfig {
    PipelineConfig {
        scene: SceneConfig {
            n_boxes: 10,
            n_cameras: 1,
            clutter_points: 400,
            dropout_fraction: 0.4,
            ..Default::default()
        },
        bev: BevGridConfig { grid_h: 64, grid_w: 64, ..Default::default() },
        seed,
        ..Default::default()
    }
}

#[test]
fn pci_switches_leave_student_untouched() {
    for seed in 0..4 {
        let on = small(seed);
        let off = PipelineConfig {
            pci_enabled: PciToggles { frame_combination: false, pseudo_points: false },
            ..on.clone()
        };
        let (_, a) = run_pipeline_with_artifacts(&on).unwrap();
        let (_, b) = run_pipeline_with_artifacts(&off).unwrap();
        assert_eq!(a.soft_depth, b.soft_depth);
        assert_eq!(a.soft_seg, b.soft_seg);
        assert_eq!(a.student, b.student);
        assert!(a.hard.valid_count() >= b.hard.valid_count());
    }
}

#[test]
fn teacher_equals_student_without_hard_labels() {
    for seed in 0..4 {
        let mut cfg = small(seed);
        cfg.scene.lidar_rays_per_box = 0;
        cfg.scene.clutter_points = 0;
        cfg.pci_enabled.pseudo_points = false;
        let (r, art) = run_pipeline_with_artifacts(&cfg).unwrap();
        assert_eq!(art.hard.valid_count(), 0);
        assert_eq!(art.teacher, art.student);
        assert_eq!(r.loss, 0.0);
    }
}

#[test]
fn same_config_same_result() {
    let cfg = small(9);
    let a = run_pipeline(&cfg).unwrap().without_timing();
    let b = run_pipeline(&cfg).unwrap().without_timing();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn config_json_round_trip() {
    let cfg = small(2);
    let text = serde_json::to_string(&cfg).unwrap();
    assert_eq!(serde_json::from_str::<PipelineConfig>(&text).unwrap(), cfg);
    let partial: PipelineConfig = serde_json::from_str(r#"{"seed": 4}"#).unwrap();
    assert_eq!(partial, PipelineConfig { seed: 4, ..Default::default() });
}

#[test]
fn bad_values_are_attributed() {
    let mut cfg = small(0);
    cfg.beta = 2.0;
    let e = run_pipeline(&cfg).unwrap_err();
    assert!(e.is_validation());
    assert!(e.to_string().contains("beta"), "{e}");
    let mut cfg = small(0);
    cfg.cam_index = 3;
    match run_pipeline(&cfg).unwrap_err() {
        Error::Stage { stage, source } => {
            assert_eq!(stage, "config");
            assert!(matches!(*source, Error::Invalid { field: "cam_index", .. }));
        }
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn sweep_varies_only_its_toggles() {
    let base = small(5);
    let rows = ablation_sweep(&base, &[Toggle::Ppa, Toggle::Blur]).unwrap();
    assert_eq!(rows.len(), 4);
    for row in &rows {
        let mut cfg = base.clone();
        cfg.pci_enabled.pseudo_points = row.toggles["ppa"];
        if row.toggles["blur"] {
            cfg.encoder_kind = fgdistill::distill::EncoderKind::BoxBlur;
        }
        let direct = run_pipeline(&cfg).unwrap().without_timing();
        assert_eq!(row.result.clone().without_timing(), direct);
    }
    assert!(ablation_sweep(&base, &[Toggle::Fc, Toggle::Fc]).is_err());
}
