//! End-to-end run over one frame of a synthetic scene.
//!
//! Stage order: scene → feature pyramid → foreground enhancement
//! diagnostics → soft labels → frame combination → hard labels → pseudo
//! points → frustum → student/teacher pooling → joint encoding →
//! distillation loss.

use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distill::{distillation_loss, encode_joint, EncoderKind, DEFAULT_EPS};
use crate::error::{Error, Result};
use crate::labels::{generate_hard_labels, DepthBinConfig, DepthDistributionMap, HardLabels, SegmentationMap};
use crate::msfe::{
    elliptical_gaussian_heatmap, gaussian_focal_loss, msfe_fuse, threshold_filter,
    ForegroundHeatmap, DEFAULT_BETA, DEFAULT_SIGMA_DIVISOR,
};
use crate::pci::{build_report, frame_combination, inject_pseudo_points, pseudo_point_assignment, InjectReport, PciReport};
use crate::scene::{frame_boxes2d, generate_scene, soft_labels_from_frame, synth_feature_pyramid, SceneConfig};
use crate::view::{
    build_frustum, student_bev, teacher_bev, BevFeatureGrid, BevGridConfig, ContextFeatureMap,
    DEFAULT_SEG_THRESHOLD,
};

/// Stride of the context features and label maps (the pyramid's coarsest level).
pub const CONTEXT_STRIDE: usize = 16;
/// Stride of the foreground heatmap.
pub const HEATMAP_STRIDE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PciToggles {
    pub frame_combination: bool,
    pub pseudo_points: bool,
}

impl Default for PciToggles {
    fn default() -> Self {
        Self {
            frame_combination: true,
            pseudo_points: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub scene: SceneConfig,
    pub bins: DepthBinConfig,
    pub bev: BevGridConfig,
    pub seg_threshold: f64,
    /// Foreground threshold of the heatmap filter.
    pub beta: f64,
    pub eps: f64,
    pub encoder_kind: EncoderKind,
    pub pci_enabled: PciToggles,
    pub seed: u64,
    /// Noise magnitude of the synthetic soft labels.
    pub soft_noise: f64,
    /// Noise magnitude of the synthetic predicted heatmap.
    pub heatmap_noise: f64,
    pub channels: usize,
    pub cam_index: usize,
    pub sigma_divisor: f64,
    /// Feed the enhanced stride-16 map to pooling instead of the raw one.
    pub msfe_context: bool,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            bins: DepthBinConfig::default(),
            bev: BevGridConfig::default(),
            seg_threshold: DEFAULT_SEG_THRESHOLD,
            beta: DEFAULT_BETA,
            eps: DEFAULT_EPS,
            encoder_kind: EncoderKind::Identity,
            pci_enabled: PciToggles::default(),
            seed: 0,
            soft_noise: 0.1,
            heatmap_noise: 0.05,
            channels: 8,
            cam_index: 0,
            sigma_divisor: DEFAULT_SIGMA_DIVISOR,
            msfe_context: false,
            focal_alpha: 2.0,
            focal_gamma: 4.0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.bins.validate()?;
        self.bev.validate()?;
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::invalid("beta", format!("{} outside [0, 1]", self.beta)));
        }
        if !(self.eps > 0.0) {
            return Err(Error::invalid("eps", "must be > 0"));
        }
        if !self.seg_threshold.is_finite() {
            return Err(Error::invalid("seg_threshold", "must be finite"));
        }
        if !(self.soft_noise >= 0.0) {
            return Err(Error::invalid("soft_noise", "must be ≥ 0"));
        }
        if !(self.heatmap_noise >= 0.0) {
            return Err(Error::invalid("heatmap_noise", "must be ≥ 0"));
        }
        if self.channels == 0 {
            return Err(Error::invalid("channels", "must be ≥ 1"));
        }
        if self.cam_index >= self.scene.n_cameras {
            return Err(Error::invalid(
                "cam_index",
                format!("{} but only {} cameras", self.cam_index, self.scene.n_cameras),
            ));
        }
        if !(self.sigma_divisor > 0.0) {
            return Err(Error::invalid("sigma_divisor", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub millis: f64,
}

/// Foreground-enhancement diagnostics on the synthetic pyramid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MsfeDiagnostics {
    pub beta: f64,
    pub heatmap_focal_loss: f64,
    /// Heatmap cells at or above β.
    pub foreground_cells: usize,
    pub heatmap_cells: usize,
    /// L2 norm of `F¹⁶_MSFE − F¹⁶`.
    pub enhancement_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub loss: f64,
    pub included_cells: usize,
    pub valid_cells: usize,
    pub pci_report: PciReport,
    pub inject_report: InjectReport,
    pub msfe: MsfeDiagnostics,
    pub bev_occupancy_student: Array2<f64>,
    pub bev_occupancy_teacher: Array2<f64>,
    /// Wall-clock per stage; varies run to run.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub timing: Vec<StageTiming>,
}

impl PipelineResult {
    pub fn without_timing(mut self) -> Self {
        self.timing.clear();
        self
    }

    pub fn stage_millis(&self, stage: &str) -> Option<f64> {
        self.timing
            .iter()
            .find(|t| t.stage == stage)
            .map(|t| t.millis)
    }
}

/// Intermediate products of a run, for inspection and tests.
#[derive(Debug, Clone)]
pub struct PipelineArtifacts {
    pub soft_depth: DepthDistributionMap,
    pub soft_seg: SegmentationMap,
    pub hard: HardLabels,
    pub student: BevFeatureGrid,
    pub teacher: BevFeatureGrid,
    pub student_enc: BevFeatureGrid,
    pub teacher_enc: BevFeatureGrid,
    pub heatmap_target: ForegroundHeatmap,
    pub heatmap_pred: ForegroundHeatmap,
}

struct Timer {
    stages: Vec<StageTiming>,
    last: Instant,
}

impl Timer {
    fn new() -> Self {
        Self {
            stages: Vec::new(),
            last: Instant::now(),
        }
    }

    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        self.stages.push(StageTiming {
            stage: stage.to_string(),
            millis: (now - self.last).as_secs_f64() * 1e3,
        });
        self.last = now;
    }
}

fn predicted_heatmap(target: &ForegroundHeatmap, noise: f64, seed: u64) -> ForegroundHeatmap {
    if noise == 0.0 {
        return target.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4EA7_0000);
    ForegroundHeatmap {
        values: target.values.mapv(|t| {
            let e: f64 = StandardNormal.sample(&mut rng);
            (t + noise * e).clamp(0.0, 1.0)
        }),
    }
}

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineResult> {
    run_pipeline_with_artifacts(cfg).map(|(r, _)| r)
}

pub fn run_pipeline_with_artifacts(
    cfg: &PipelineConfig,
) -> Result<(PipelineResult, PipelineArtifacts)> {
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    let mut timer = Timer::new();

    let scene = generate_scene(&cfg.scene, cfg.seed).map_err(|e| e.in_stage("scene"))?;
    timer.lap("scene");
    let frame = scene.current();
    let cam = frame.camera(cfg.cam_index)?;

    let pyr = synth_feature_pyramid(frame, cfg.cam_index, cfg.channels, cfg.seed)
        .map_err(|e| e.in_stage("pyramid"))?;
    timer.lap("pyramid");

    let (h4, w4, _) = pyr.f4.dim();
    let target = elliptical_gaussian_heatmap(
        &frame_boxes2d(frame, cam),
        h4,
        w4,
        HEATMAP_STRIDE,
        cfg.sigma_divisor,
    )
    .map_err(|e| e.in_stage("msfe"))?;
    let pred = predicted_heatmap(&target, cfg.heatmap_noise, cfg.seed);
    let fused = msfe_fuse(&pyr, &pred, cfg.beta).map_err(|e| e.in_stage("msfe"))?;
    let focal = gaussian_focal_loss(&pred, &target, cfg.focal_alpha, cfg.focal_gamma)
        .map_err(|e| e.in_stage("msfe"))?;
    let msfe = MsfeDiagnostics {
        beta: cfg.beta,
        heatmap_focal_loss: focal,
        foreground_cells: threshold_filter(&pred, cfg.beta)
            .values
            .iter()
            .filter(|&&v| v > 0.0)
            .count(),
        heatmap_cells: h4 * w4,
        enhancement_norm: (&fused - &pyr.f16).mapv(|v| v * v).sum().sqrt(),
    };
    timer.lap("msfe");

    let ctx = ContextFeatureMap::new(if cfg.msfe_context { fused } else { pyr.f16.clone() })
        .map_err(|e| e.in_stage("msfe"))?;
    let (soft_depth, soft_seg) = soft_labels_from_frame(
        frame,
        cfg.cam_index,
        &cfg.bins,
        CONTEXT_STRIDE,
        cfg.soft_noise,
        cfg.seed,
    )
    .map_err(|e| e.in_stage("soft_labels"))?;
    timer.lap("soft_labels");

    let combined = if cfg.pci_enabled.frame_combination {
        frame_combination(frame, scene.adjacent()).map_err(|e| e.in_stage("frame_combination"))?
    } else {
        frame.lidar.clone()
    };
    timer.lap("frame_combination");

    let hard = generate_hard_labels(&combined, &frame.boxes, cam, &cfg.bins, CONTEXT_STRIDE)
        .map_err(|e| e.in_stage("hard_labels"))?;
    timer.lap("hard_labels");

    let pseudo = if cfg.pci_enabled.pseudo_points {
        pseudo_point_assignment(&combined, &frame.boxes, cam, (cfg.bins.d_min, cfg.bins.d_max))
            .map_err(|e| e.in_stage("pseudo_points"))?
    } else {
        Vec::new()
    };
    let (hard, inject_report) = inject_pseudo_points(&hard, &pseudo, CONTEXT_STRIDE);
    let pci_report = build_report(&frame.boxes, &frame.lidar, &combined, pseudo.len());
    timer.lap("pseudo_points");

    let frustum = build_frustum(cam, &cfg.bins, CONTEXT_STRIDE).map_err(|e| e.in_stage("frustum"))?;
    timer.lap("frustum");

    let student = student_bev(&ctx, &soft_depth, &soft_seg, &frustum, &cfg.bev, cfg.seg_threshold)
        .map_err(|e| e.in_stage("pooling"))?;
    let teacher = teacher_bev(
        &ctx,
        &hard,
        &soft_depth,
        &soft_seg,
        &frustum,
        &cfg.bev,
        cfg.seg_threshold,
    )
    .map_err(|e| e.in_stage("pooling"))?;
    timer.lap("pooling");

    let encoder = cfg.encoder_kind.build();
    let (student_enc, teacher_enc) =
        encode_joint(encoder.as_ref(), &student, &teacher).map_err(|e| e.in_stage("encode"))?;
    timer.lap("encode");

    let loss = distillation_loss(&teacher_enc, &student_enc, cfg.eps)
        .map_err(|e| e.in_stage("distill"))?;
    timer.lap("distill");

    let result = PipelineResult {
        loss: loss.loss,
        included_cells: loss.included_cells,
        valid_cells: hard.valid_count(),
        pci_report,
        inject_report,
        msfe,
        bev_occupancy_student: student.occupancy(),
        bev_occupancy_teacher: teacher.occupancy(),
        timing: timer.stages,
    };
    let artifacts = PipelineArtifacts {
        soft_depth,
        soft_seg,
        hard,
        student,
        teacher,
        student_enc,
        teacher_enc,
        heatmap_target: target,
        heatmap_pred: pred,
    };
    Ok((result, artifacts))
}

/// A named on/off switch varied by [`ablation_sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Toggle {
    /// Frame combination.
    Fc,
    /// Pseudo point assignment.
    Ppa,
    /// Enhanced context features.
    Msfe,
    /// Box-blur encoder instead of identity.
    Blur,
}

impl Toggle {
    pub const ALL: [Toggle; 4] = [Toggle::Fc, Toggle::Ppa, Toggle::Msfe, Toggle::Blur];

    pub fn name(self) -> &'static str {
        match self {
            Toggle::Fc => "fc",
            Toggle::Ppa => "ppa",
            Toggle::Msfe => "msfe",
            Toggle::Blur => "blur",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Toggle::ALL
            .into_iter()
            .find(|t| t.name() == s.trim())
            .ok_or_else(|| {
                Error::invalid(
                    "toggles",
                    format!("unknown toggle `{s}` (expected fc, ppa, msfe or blur)"),
                )
            })
    }

    fn apply(self, cfg: &mut PipelineConfig, on: bool) {
        match self {
            Toggle::Fc => cfg.pci_enabled.frame_combination = on,
            Toggle::Ppa => cfg.pci_enabled.pseudo_points = on,
            Toggle::Msfe => cfg.msfe_context = on,
            Toggle::Blur => {
                cfg.encoder_kind = if on {
                    EncoderKind::BoxBlur
                } else {
                    EncoderKind::Identity
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub toggles: BTreeMap<String, bool>,
    pub result: PipelineResult,
}

/// Runs every on/off combination of `toggles` over `base`. Rows come in
/// binary counting order with the first toggle as the most significant
/// bit; with no toggles the single row is the base config as given.
pub fn ablation_sweep(base: &PipelineConfig, toggles: &[Toggle]) -> Result<Vec<SweepRow>> {
    let mut seen = toggles.to_vec();
    seen.sort();
    seen.dedup();
    if seen.len() != toggles.len() {
        return Err(Error::invalid("toggles", "duplicate toggle"));
    }
    let k = toggles.len();
    (0..1usize << k)
        .into_par_iter()
        .map(|mask| {
            let mut cfg = base.clone();
            let mut states = BTreeMap::new();
            for (i, t) in toggles.iter().enumerate() {
                let on = mask & (1 << (k - 1 - i)) != 0;
                t.apply(&mut cfg, on);
                states.insert(t.name().to_string(), on);
            }
            run_pipeline(&cfg).map(|result| SweepRow {
                toggles: states,
                result,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::LidarModel;

    fn quick() -> PipelineConfig {
        PipelineConfig {
            scene: SceneConfig {
                n_boxes: 10,
                n_cameras: 1,
                clutter_points: 400,
                ..Default::default()
            },
            bev: BevGridConfig {
                grid_h: 64,
                grid_w: 64,
                ..Default::default()
            },
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_without_timing() {
        let a = run_pipeline(&quick()).unwrap().without_timing();
        let b = run_pipeline(&quick()).unwrap().without_timing();
        assert_eq!(a, b);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn timings_cover_every_stage() {
        let r = run_pipeline(&quick()).unwrap();
        for s in ["scene", "pyramid", "msfe", "soft_labels", "hard_labels", "pooling", "distill"] {
            assert!(r.stage_millis(s).is_some(), "{s}");
        }
    }

    #[test]
    fn no_lidar_no_ppa_is_fixed_point() {
        let mut cfg = quick();
        cfg.scene.lidar_rays_per_box = 0;
        cfg.scene.clutter_points = 0;
        cfg.pci_enabled.pseudo_points = false;
        let (r, art) = run_pipeline_with_artifacts(&cfg).unwrap();
        assert_eq!(r.valid_cells, 0);
        assert_eq!(art.student, art.teacher);
        assert_eq!(r.loss, 0.0);
    }

    #[test]
    fn dense_noise_free_labels_nearly_agree() {
        let mut cfg = quick();
        cfg.scene.lidar_model = LidarModel::Dense;
        cfg.soft_noise = 0.0;
        cfg.pci_enabled = PciToggles {
            frame_combination: false,
            pseudo_points: false,
        };
        let r = run_pipeline(&cfg).unwrap();
        assert!(r.included_cells > 0);
        assert!(r.loss < 1e-3, "loss {}", r.loss);
    }

    #[test]
    fn bad_config_names_field() {
        let mut cfg = quick();
        cfg.beta = 1.5;
        let err = run_pipeline(&cfg).unwrap_err();
        assert!(err.to_string().contains("beta"), "{err}");
        assert!(err.is_validation());
    }

    #[test]
    fn sweep_rows_and_order() {
        let rows = ablation_sweep(&quick(), &[]).unwrap();
        assert_eq!(rows.len(), 1);
        let rows = ablation_sweep(&quick(), &[Toggle::Fc, Toggle::Ppa]).unwrap();
        let states: Vec<(bool, bool)> = rows
            .iter()
            .map(|r| (r.toggles["fc"], r.toggles["ppa"]))
            .collect();
        assert_eq!(
            states,
            vec![(false, false), (false, true), (true, false), (true, true)]
        );
        assert!(ablation_sweep(&quick(), &[Toggle::Fc, Toggle::Fc]).is_err());
        assert!(Toggle::parse("nope").is_err());
    }
}
