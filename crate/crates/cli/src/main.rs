//! `fgdistill` command-line front end.
//!
//! Exit codes: 0 on success, 1 when an input or flag is invalid, 2 on an
//! internal failure (including a failing self-check).

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fgdistill::distill::EncoderKind;
use fgdistill::geometry::{project_box3d_to_box2d, sample_augmentation};
use fgdistill::io::{write_depth_pgm, write_json, write_mask_pgm, write_prob_pgm};
use fgdistill::labels::{generate_hard_labels, DepthBinConfig};
use fgdistill::msfe::{elliptical_gaussian_heatmap, threshold_filter, DEFAULT_BETA, DEFAULT_SIGMA_DIVISOR};
use fgdistill::pci::{frame_combination, inject_pseudo_points, pci_statistics, pseudo_point_assignment, PciReport};
use fgdistill::pipeline::{ablation_sweep, run_pipeline, PipelineConfig, SweepRow, Toggle, CONTEXT_STRIDE, HEATMAP_STRIDE};
use fgdistill::scene::{generate_scene, Scene, SceneConfig};
use fgdistill::selfcheck;
use serde::de::DeserializeOwned;

/// Directory searched for config files given by a relative path that does
/// not exist in the working directory.
const CONFIG_DIR_VAR: &str = "FGDISTILL_CONFIG_DIR";

#[derive(Parser, Debug)]
#[command(name = "fgdistill", version, about = "Synthetic scenes, label intensification and BEV distillation runs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a scene from a SceneConfig JSON and write `scene.json`.
    GenScene(GenSceneArgs),
    /// Write hard-label depth, segmentation and valid-mask graymaps for one camera.
    Labels(LabelsArgs),
    /// Print the intensification report of a scene.
    PciStats(PciStatsArgs),
    /// Write the foreground heatmap and its β-filtered version as graymaps.
    Heatmap(HeatmapArgs),
    /// Run the pipeline and print the result as JSON.
    Pipeline(PipelineArgs),
    /// Run every on/off combination of the given toggles.
    Sweep(SweepArgs),
    /// Compare the library against its brute-force oracles.
    Selfcheck(SelfcheckArgs),
}

#[derive(Args, Debug)]
struct GenSceneArgs {
    /// SceneConfig JSON; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Scene seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct BinArgs {
    /// Nearest depth bin edge, meters.
    #[arg(long, default_value_t = DepthBinConfig::default().d_min)]
    d_min: f64,
    /// Far depth limit (exclusive), meters.
    #[arg(long, default_value_t = DepthBinConfig::default().d_max)]
    d_max: f64,
    /// Depth bin width, meters.
    #[arg(long, default_value_t = DepthBinConfig::default().bin_size)]
    bin_size: f64,
}

impl BinArgs {
    fn bins(&self) -> fgdistill::Result<DepthBinConfig> {
        DepthBinConfig::new(self.d_min, self.d_max, self.bin_size)
    }
}

#[derive(Args, Debug)]
struct LabelsArgs {
    /// Scene JSON written by `gen-scene`.
    #[arg(long)]
    scene: PathBuf,
    /// Camera index.
    #[arg(long, default_value_t = 0)]
    cam: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Skip frame combination.
    #[arg(long)]
    no_fc: bool,
    /// Skip pseudo point injection.
    #[arg(long)]
    no_ppa: bool,
    #[command(flatten)]
    bins: BinArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args, Debug)]
struct PciStatsArgs {
    /// Scene JSON written by `gen-scene`.
    #[arg(long)]
    scene: PathBuf,
    /// Camera used for pseudo point assignment.
    #[arg(long, default_value_t = 0)]
    cam: usize,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(flatten)]
    bins: BinArgs,
}

#[derive(Args, Debug)]
struct HeatmapArgs {
    /// Scene JSON written by `gen-scene`.
    #[arg(long)]
    scene: PathBuf,
    /// Foreground threshold.
    #[arg(long, default_value_t = DEFAULT_BETA)]
    beta: f64,
    /// Camera index.
    #[arg(long, default_value_t = 0)]
    cam: usize,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Apply a sampled image augmentation to the 2D boxes first.
    #[arg(long)]
    augment_seed: Option<u64>,
    /// Box size to Gaussian spread ratio.
    #[arg(long, default_value_t = DEFAULT_SIGMA_DIVISOR)]
    sigma_divisor: f64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Encoder {
    Identity,
    BoxBlur,
}

#[derive(Args, Debug)]
struct OverrideArgs {
    /// PipelineConfig JSON; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    cam: Option<usize>,
    #[arg(long, value_enum)]
    encoder: Option<Encoder>,
    #[arg(long)]
    soft_noise: Option<f64>,
    /// Disable frame combination.
    #[arg(long)]
    no_fc: bool,
    /// Disable pseudo point assignment.
    #[arg(long)]
    no_ppa: bool,
}

impl OverrideArgs {
    /// Flag over config file over default.
    fn resolve(&self, default_name: &str) -> Result<PipelineConfig, Failure> {
        let mut cfg: PipelineConfig = match self.config.as_deref() {
            Some(p) => read_config(&locate(p))?,
            None => match default_config(default_name) {
                Some(p) => read_config(&p)?,
                None => PipelineConfig::default(),
            },
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(b) = self.beta {
            cfg.beta = b;
        }
        if let Some(c) = self.cam {
            cfg.cam_index = c;
        }
        if let Some(e) = self.encoder {
            cfg.encoder_kind = match e {
                Encoder::Identity => EncoderKind::Identity,
                Encoder::BoxBlur => EncoderKind::BoxBlur,
            };
        }
        if let Some(n) = self.soft_noise {
            cfg.soft_noise = n;
        }
        if self.no_fc {
            cfg.pci_enabled.frame_combination = false;
        }
        if self.no_ppa {
            cfg.pci_enabled.pseudo_points = false;
        }
        cfg.validate().map_err(Failure::from)?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct PipelineArgs {
    #[command(flatten)]
    overrides: OverrideArgs,
    /// Include per-stage wall-clock times (output is then not reproducible).
    #[arg(long)]
    timings: bool,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    overrides: OverrideArgs,
    /// Comma-separated toggles from fc, ppa, msfe, blur.
    #[arg(long, value_delimiter = ',', default_value = "fc,ppa")]
    toggles: Vec<String>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Args, Debug)]
struct SelfcheckArgs {
    /// Print a JSON array instead of one line per check.
    #[arg(long)]
    json: bool,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn invalid(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }
}

impl From<fgdistill::Error> for Failure {
    fn from(e: fgdistill::Error) -> Self {
        if e.is_validation() {
            Failure::invalid(e.to_string())
        } else {
            Failure::internal(e.to_string())
        }
    }
}

fn locate(path: &Path) -> PathBuf {
    if path.is_relative() && !path.exists() {
        if let Some(dir) = std::env::var_os(CONFIG_DIR_VAR) {
            let candidate = Path::new(&dir).join(path);
            if candidate.exists() {
                return candidate;
            }
        }
    }
    path.to_path_buf()
}

fn default_config(name: &str) -> Option<PathBuf> {
    let dir = std::env::var_os(CONFIG_DIR_VAR)?;
    let p = Path::new(&dir).join(name);
    p.exists().then_some(p)
}

/// Reads JSON, reporting the path of the offending field on failure.
fn read_input<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::invalid(format!("cannot read {}: {e}", path.display())))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        Failure::invalid(format!("{}: field `{field}`: {}", path.display(), e.inner()))
    })
}

fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    read_input(path)
}

fn read_scene(path: &Path) -> Result<Scene, Failure> {
    let scene: Scene = read_input(path)?;
    scene.validate()?;
    Ok(scene)
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Failure::internal(format!("cannot create {}: {e}", dir.display())))
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::internal(e.to_string()))?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Failure::internal(e.to_string())),
        _ => Ok(()),
    }
}

fn gen_scene(a: &GenSceneArgs) -> Result<(), Failure> {
    let cfg: SceneConfig = match a.config.as_deref() {
        Some(p) => read_config(&locate(p))?,
        None => match default_config("scene.json") {
            Some(p) => read_config(&p)?,
            None => SceneConfig::default(),
        },
    };
    let scene = generate_scene(&cfg, a.seed)?;
    create_dir(&a.out)?;
    let path = a.out.join("scene.json");
    write_json(&path, &scene)?;
    println!("{}", path.display());
    Ok(())
}

fn labels(a: &LabelsArgs) -> Result<(), Failure> {
    let scene = read_scene(&a.scene)?;
    let bins = a.bins.bins()?;
    let frame = scene.current();
    let cam = frame.camera(a.cam)?;
    let cloud = if a.no_fc {
        frame.lidar.clone()
    } else {
        frame_combination(frame, scene.adjacent())?
    };
    let mut hard = generate_hard_labels(&cloud, &frame.boxes, cam, &bins, CONTEXT_STRIDE)?;
    if !a.no_ppa {
        let pseudo = pseudo_point_assignment(&cloud, &frame.boxes, cam, (bins.d_min, bins.d_max))?;
        hard = inject_pseudo_points(&hard, &pseudo, CONTEXT_STRIDE).0;
    }
    create_dir(&a.out)?;
    write_depth_pgm(&a.out.join("depth.pgm"), &hard.point_depth)?;
    write_prob_pgm(&a.out.join("seg.pgm"), &hard.seg.values)?;
    write_mask_pgm(&a.out.join("valid.pgm"), &hard.valid_mask)?;
    let (h, w) = hard.dims();
    println!("{w}x{h} cells, {} valid", hard.valid_count());
    Ok(())
}

fn pci_stats(a: &PciStatsArgs) -> Result<(), Failure> {
    let scene = read_scene(&a.scene)?;
    let bins = a.bins.bins()?;
    let cam = scene.current().camera(a.cam)?;
    let report = pci_statistics(&scene, cam, (bins.d_min, bins.d_max))?;
    match a.format {
        Format::Json => print_json(&report),
        Format::Csv => {
            let mut w = csv::Writer::from_writer(std::io::stdout());
            w.write_record(PciReport::CSV_HEADER)
                .and_then(|_| w.write_record(report.csv_row().map(|v| v.to_string())))
                .and_then(|_| w.flush().map_err(csv::Error::from))
                .map_err(|e| Failure::internal(e.to_string()))
        }
    }
}

fn heatmap(a: &HeatmapArgs) -> Result<(), Failure> {
    if !(0.0..=1.0).contains(&a.beta) {
        return Err(Failure::invalid(format!("invalid value for `beta`: {} outside [0, 1]", a.beta)));
    }
    let scene = read_scene(&a.scene)?;
    let frame = scene.current();
    let cam = frame.camera(a.cam)?;
    let (mut width, mut height) = (cam.image_width, cam.image_height);
    let mut boxes: Vec<_> = frame
        .boxes
        .iter()
        .filter_map(|b| project_box3d_to_box2d(cam, b))
        .collect();
    if let Some(seed) = a.augment_seed {
        let aug = sample_augmentation(seed);
        let affine = aug.image_affine(width, height);
        width = (f64::from(width) * aug.image_scale).round() as u32;
        height = (f64::from(height) * aug.image_scale).round() as u32;
        boxes = boxes.iter().map(|b| affine.apply_box(b).clipped(width, height)).collect();
    }
    let s = HEATMAP_STRIDE as u32;
    let target = elliptical_gaussian_heatmap(
        &boxes,
        height.div_ceil(s) as usize,
        width.div_ceil(s) as usize,
        HEATMAP_STRIDE,
        a.sigma_divisor,
    )?;
    let filtered = threshold_filter(&target, a.beta);
    create_dir(&a.out)?;
    write_prob_pgm(&a.out.join("s4.pgm"), &target.values)?;
    write_prob_pgm(&a.out.join("s4f.pgm"), &filtered.values)?;
    let kept = filtered.values.iter().filter(|&&v| v > 0.0).count();
    println!("{} boxes, {kept} of {} cells at or above beta", boxes.len(), filtered.values.len());
    Ok(())
}

fn pipeline(a: &PipelineArgs) -> Result<(), Failure> {
    let cfg = a.overrides.resolve("pipeline.json")?;
    let mut result = run_pipeline(&cfg)?;
    if !a.timings {
        result = result.without_timing();
    }
    print_json(&result)
}

fn sweep_csv(rows: &[SweepRow], toggles: &[Toggle]) -> Result<(), Failure> {
    let mut w = csv::Writer::from_writer(std::io::stdout());
    let mut header: Vec<String> = toggles.iter().map(|t| t.name().to_string()).collect();
    header.extend(
        ["loss", "included_cells", "valid_cells", "boxes_assigned_pseudo", "heatmap_focal_loss"]
            .map(String::from),
    );
    let run = |w: &mut csv::Writer<std::io::Stdout>| -> csv::Result<()> {
        w.write_record(&header)?;
        for row in rows {
            let mut rec: Vec<String> = toggles
                .iter()
                .map(|t| u8::from(row.toggles[t.name()]).to_string())
                .collect();
            let r = &row.result;
            rec.push(format!("{:e}", r.loss));
            rec.push(r.included_cells.to_string());
            rec.push(r.valid_cells.to_string());
            rec.push(r.pci_report.boxes_assigned_pseudo.to_string());
            rec.push(format!("{:e}", r.msfe.heatmap_focal_loss));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    };
    run(&mut w).map_err(|e| Failure::internal(e.to_string()))
}

fn sweep(a: &SweepArgs) -> Result<(), Failure> {
    let cfg = a.overrides.resolve("pipeline.json")?;
    let toggles = a
        .toggles
        .iter()
        .filter(|s| !s.trim().is_empty())
        .map(|s| Toggle::parse(s))
        .collect::<fgdistill::Result<Vec<_>>>()?;
    let rows: Vec<SweepRow> = ablation_sweep(&cfg, &toggles)?
        .into_iter()
        .map(|mut r| {
            r.result = r.result.without_timing();
            r
        })
        .collect();
    match a.format {
        Format::Json => print_json(&rows),
        Format::Csv => sweep_csv(&rows, &toggles),
    }
}

fn run_selfcheck(a: &SelfcheckArgs) -> Result<(), Failure> {
    let outcomes = selfcheck::run_all();
    if a.json {
        print_json(&outcomes)?;
    } else {
        let mut out = std::io::stdout().lock();
        for o in &outcomes {
            let tag = if o.passed { "PASS" } else { "FAIL" };
            let _ = writeln!(out, "{tag} {}: {}", o.name, o.detail);
        }
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    if failed > 0 {
        return Err(Failure::internal(format!("{failed} of {} checks failed", outcomes.len())));
    }
    eprintln!("{} checks passed", outcomes.len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match &cli.command {
        Command::GenScene(a) => gen_scene(a),
        Command::Labels(a) => labels(a),
        Command::PciStats(a) => pci_stats(a),
        Command::Heatmap(a) => heatmap(a),
        Command::Pipeline(a) => pipeline(a),
        Command::Sweep(a) => sweep(a),
        Command::Selfcheck(a) => run_selfcheck(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
