//! Command-line front end for the partvol renderer.
//!
//! Subcommands: `gen-synthetic` (procedural part sets), `render` (one posed
//! frame), `sweep` (a yaw sweep of frames), `metrics` (difference-map
//! metrics between two images) and `check-grad` (depth-smoothness gradient
//! verification). All commands are deterministic given their flags and the
//! seed, independent of thread count.

use std::f64::consts::FRAC_PI_2;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use partvol::analysis::{diff_metrics, l_ds_gradient_suite};
use partvol::camera::{CameraConfig, CameraPose};
use partvol::img;
use partvol::lifting::MappingFn;
use partvol::mask::MaskWeightMode;
use partvol::part::{load_part_set, save_part_set, synth_part_set, PartSet, SynthConfig};
use partvol::render::{render_frame, ActiveParts, RenderOptions, RenderedFrame};

/// Environment variable that overrides the default worker thread count.
const THREADS_ENV: &str = "PARTVOL_THREADS";

#[derive(Parser)]
#[command(
    name = "partvol",
    version,
    about = "Part-based compositional volume renderer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a procedural synthetic part set into a directory.
    GenSynthetic(GenArgs),
    /// Render one posed frame to PPM/PGM files plus frame.json.
    Render(RenderArgs),
    /// Render a sweep of frames across a yaw range to numbered files.
    Sweep(SweepArgs),
    /// Difference-map metrics between two images, printed as JSON.
    Metrics(MetricsArgs),
    /// Verify the depth-smoothness gradient against finite differences.
    CheckGrad(CheckGradArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Seed for the deterministic generator.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for the part set.
    #[arg(long)]
    out: PathBuf,
    /// Number of semantic parts (background and face base included).
    #[arg(long, default_value_t = 13)]
    parts: usize,
    /// Side length of the square 2D maps.
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Feature channels per part.
    #[arg(long, default_value_t = 16)]
    channels: usize,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum MaskModeArg {
    /// Transmittance-based weights from the fused density.
    Nerf,
    /// Uniform weights (occlusion-unaware ablation).
    Uniform,
}

impl MaskModeArg {
    fn to_mode(self) -> MaskWeightMode {
        match self {
            MaskModeArg::Nerf => MaskWeightMode::NerfWeights,
            MaskModeArg::Uniform => MaskWeightMode::Uniform,
        }
    }

    fn label(self) -> &'static str {
        match self {
            MaskModeArg::Nerf => "nerf",
            MaskModeArg::Uniform => "uniform",
        }
    }
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum FeatureVisArg {
    /// Map feature channels 0-2 to RGB after a per-frame affine rescale.
    First3,
    /// Map the per-pixel L2 feature norm to grayscale.
    Norm,
}

/// Flags shared by `render` and `sweep`.
#[derive(Args)]
struct SceneArgs {
    /// Part-set directory (from gen-synthetic or compatible).
    #[arg(long)]
    parts: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Samples per ray; defaults to the 36-sample test profile.
    #[arg(long, conflicts_with = "train_profile")]
    n_samples: Option<usize>,
    /// Use the 12-sample training profile.
    #[arg(long)]
    train_profile: bool,
    /// Mapping function: gaussian[:alpha] or invprop[:beta].
    #[arg(long, default_value = "gaussian:1")]
    mapping: String,
    /// Mask weighting mode.
    #[arg(long, value_enum, default_value_t = MaskModeArg::Nerf)]
    mask_mode: MaskModeArg,
    /// Active parts: "all" or a comma-separated list of indices or names.
    #[arg(long, default_value = "all")]
    active: String,
    /// Feature-map visualization.
    #[arg(long, value_enum, default_value_t = FeatureVisArg::First3)]
    feature_vis: FeatureVisArg,
    /// Worker threads; 0 lets rayon pick. Overrides PARTVOL_THREADS.
    #[arg(long)]
    threads: Option<usize>,
    /// Rendered image side length.
    #[arg(long, default_value_t = 64)]
    image_size: usize,
}

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    scene: SceneArgs,
    /// Camera yaw in radians (pi/2 is frontal).
    #[arg(long, default_value_t = FRAC_PI_2)]
    yaw: f64,
    /// Camera pitch in radians (pi/2 is frontal).
    #[arg(long, default_value_t = FRAC_PI_2)]
    pitch: f64,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    scene: SceneArgs,
    /// Number of frames in the sweep.
    #[arg(long, default_value_t = 10)]
    frames: usize,
    /// Yaw half-range: frames span pi/2 +- this value.
    #[arg(long, default_value_t = 0.3)]
    yaw_range: f64,
    /// Fixed camera pitch for all frames.
    #[arg(long, default_value_t = FRAC_PI_2)]
    pitch: f64,
}

#[derive(Args)]
struct MetricsArgs {
    /// First image (PPM).
    #[arg(long)]
    image_a: PathBuf,
    /// Second image (PPM).
    #[arg(long)]
    image_b: PathBuf,
    /// Optional edited-region mask (PGM; bytes >= 128 mark edited pixels,
    /// so both binary masks and exported soft masks threshold sensibly).
    #[arg(long)]
    edited: Option<PathBuf>,
}

#[derive(Args)]
struct CheckGradArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Number of random part sets to check.
    #[arg(long, default_value_t = 20)]
    trials: usize,
    /// Side length of the random depth maps.
    #[arg(long, default_value_t = 8)]
    size: usize,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-4)]
    step: f64,
    /// Maximum tolerated relative error.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenSynthetic(args) => gen_synthetic(args),
        Command::Render(args) => render(args),
        Command::Sweep(args) => sweep(args),
        Command::Metrics(args) => metrics(args),
        Command::CheckGrad(args) => check_grad(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn gen_synthetic(args: GenArgs) -> Result<()> {
    let config = SynthConfig::portrait_sized(args.seed, args.parts, args.size, args.channels);
    let set = synth_part_set(&config).context("generating part set")?;
    save_part_set(&set, &args.out)
        .with_context(|| format!("writing part set to {}", args.out.display()))?;
    println!(
        "wrote {} parts ({}x{}x{}) to {}",
        set.part_count(),
        set.height(),
        set.width(),
        set.channels(),
        args.out.display()
    );
    Ok(())
}

fn parse_mapping(text: &str) -> Result<MappingFn> {
    let (kind, value) = match text.split_once(':') {
        Some((k, v)) => (k, Some(v)),
        None => (text, None),
    };
    let param = |default: f64| -> Result<f64> {
        match value {
            None => Ok(default),
            Some(v) => v
                .parse::<f64>()
                .map_err(|_| anyhow!("invalid mapping parameter '{v}'")),
        }
    };
    let mapping = match kind {
        "gaussian" => MappingFn::gaussian(param(1.0)?),
        "invprop" => MappingFn::inverse_proportional(param(1.0)?),
        other => bail!("unknown mapping '{other}' (expected gaussian[:alpha] or invprop[:beta])"),
    };
    mapping.map_err(|e| anyhow!("{e}"))
}

fn parse_active(text: &str, set: &PartSet) -> Result<ActiveParts> {
    if text == "all" {
        return Ok(ActiveParts::All);
    }
    let mut indices = Vec::new();
    for token in text.split(',') {
        let token = token.trim();
        if token.is_empty() {
            continue;
        }
        let index = match token.parse::<usize>() {
            Ok(i) => i,
            Err(_) => set.index_of_name(token).ok_or_else(|| {
                let known: Vec<&str> = set.parts().iter().map(|p| p.id.name()).collect();
                anyhow!("unknown part '{token}'; known parts: {}", known.join(", "))
            })?,
        };
        indices.push(index);
    }
    if indices.is_empty() {
        bail!("--active must name at least one part");
    }
    Ok(ActiveParts::Subset(indices))
}

fn resolve_threads(flag: Option<usize>) -> Result<usize> {
    if let Some(t) = flag {
        return Ok(t);
    }
    match std::env::var(THREADS_ENV) {
        Ok(text) => text
            .parse::<usize>()
            .map_err(|_| anyhow!("{THREADS_ENV} must be an unsigned integer, got '{text}'")),
        Err(_) => Ok(0),
    }
}

struct ResolvedScene {
    set: PartSet,
    camera: CameraConfig,
    options: RenderOptions,
    mapping_label: String,
    mask_label: &'static str,
    feature_vis: FeatureVisArg,
    out: PathBuf,
}

fn resolve_scene(args: &SceneArgs) -> Result<ResolvedScene> {
    let set = load_part_set(&args.parts)
        .with_context(|| format!("loading part set from {}", args.parts.display()))?;
    if set.part_count() > 256 {
        bail!("label export supports at most 256 parts, got {}", set.part_count());
    }
    let n_samples = args
        .n_samples
        .unwrap_or(if args.train_profile { 12 } else { 36 });
    let camera = CameraConfig {
        image_w: args.image_size,
        image_h: args.image_size,
        n_samples,
        ..CameraConfig::default()
    };
    let mapping = parse_mapping(&args.mapping)?;
    let options = RenderOptions {
        mapping,
        mask_mode: args.mask_mode.to_mode(),
        active: parse_active(&args.active, &set)?,
        threads: resolve_threads(args.threads)?,
        ..RenderOptions::default()
    };
    Ok(ResolvedScene {
        set,
        camera,
        options,
        mapping_label: args.mapping.clone(),
        mask_label: args.mask_mode.label(),
        feature_vis: args.feature_vis,
        out: args.out.clone(),
    })
}

#[derive(Serialize)]
struct FrameRecord {
    yaw: f64,
    pitch: f64,
    n_samples: usize,
    mapping: String,
    mask_mode: String,
    active: Vec<usize>,
    image_w: usize,
    image_h: usize,
    channels: usize,
    parts: usize,
    covered_pixels: usize,
    /// Total softmax mask mass per part over the frame.
    mask_areas: Vec<f64>,
}

fn frame_record(scene: &ResolvedScene, frame: &RenderedFrame) -> Result<FrameRecord> {
    Ok(FrameRecord {
        yaw: frame.pose.yaw,
        pitch: frame.pose.pitch,
        n_samples: scene.camera.n_samples,
        mapping: scene.mapping_label.clone(),
        mask_mode: scene.mask_label.to_string(),
        active: scene.options.active.resolve(scene.set.part_count())?,
        image_w: frame.width(),
        image_h: frame.height(),
        channels: frame.channels(),
        parts: frame.mask.parts(),
        covered_pixels: frame.covered_pixels(),
        mask_areas: frame.mask.channel_areas(),
    })
}

fn unit_to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Feature visualization: either channels 0-2 rescaled jointly to [0, 1]
/// over the frame, or the per-pixel L2 norm rescaled by its frame maximum.
fn feature_rgb(frame: &RenderedFrame, vis: FeatureVisArg) -> Vec<u8> {
    let (w, h, c) = (frame.width(), frame.height(), frame.channels());
    match vis {
        FeatureVisArg::First3 => {
            let used = c.min(3);
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for v in 0..h {
                for u in 0..w {
                    for ch in 0..used {
                        let x = frame.feature_at(v, u, ch);
                        lo = lo.min(x);
                        hi = hi.max(x);
                    }
                }
            }
            let span = hi - lo;
            let rescale = |x: f64| if span > 0.0 { (x - lo) / span } else { 0.0 };
            let mut rgb = Vec::with_capacity(w * h * 3);
            for v in 0..h {
                for u in 0..w {
                    for ch in 0..3 {
                        let value = if ch < used {
                            rescale(frame.feature_at(v, u, ch))
                        } else {
                            0.0
                        };
                        rgb.push(unit_to_byte(value));
                    }
                }
            }
            rgb
        }
        FeatureVisArg::Norm => {
            let norms: Vec<f64> = (0..h)
                .flat_map(|v| (0..w).map(move |u| (v, u)))
                .map(|(v, u)| {
                    frame
                        .feature_pixel(v, u)
                        .iter()
                        .map(|x| x * x)
                        .sum::<f64>()
                        .sqrt()
                })
                .collect();
            let max = norms.iter().copied().fold(0.0f64, f64::max);
            let mut rgb = Vec::with_capacity(w * h * 3);
            for n in norms {
                let g = if max > 0.0 { unit_to_byte(n / max) } else { 0 };
                rgb.extend_from_slice(&[g, g, g]);
            }
            rgb
        }
    }
}

struct OutputNames<'a> {
    feature: &'a str,
    labels: &'a str,
    record: &'a str,
    per_part_masks: bool,
}

fn write_frame_files(scene: &ResolvedScene, frame: &RenderedFrame, names: OutputNames<'_>) -> Result<()> {
    let dir = &scene.out;
    std::fs::create_dir_all(dir)?;
    let (w, h) = (frame.width(), frame.height());

    let rgb = feature_rgb(frame, scene.feature_vis);
    img::write_ppm(&dir.join(names.feature), w, h, &rgb)?;

    let labels: Vec<u8> = frame.mask.argmax_labels().iter().map(|&l| l as u8).collect();
    img::write_pgm(&dir.join(names.labels), w, h, &labels)?;

    if names.per_part_masks {
        for part in 0..frame.mask.parts() {
            let gray: Vec<u8> = (0..h)
                .flat_map(|v| (0..w).map(move |u| (v, u)))
                .map(|(v, u)| unit_to_byte(frame.mask.at(v, u, part)))
                .collect();
            img::write_pgm(&dir.join(format!("mask_k{part}.pgm")), w, h, &gray)?;
        }
    }

    let record = frame_record(scene, frame)?;
    std::fs::write(dir.join(names.record), serde_json::to_string_pretty(&record)?)?;
    Ok(())
}

fn render(args: RenderArgs) -> Result<()> {
    let scene = resolve_scene(&args.scene)?;
    let pose = CameraPose {
        yaw: args.yaw,
        pitch: args.pitch,
    };
    let frame = render_frame(&scene.set, pose, &scene.camera, &scene.options)?;
    write_frame_files(
        &scene,
        &frame,
        OutputNames {
            feature: "frame_feature.ppm",
            labels: "mask_labels.pgm",
            record: "frame.json",
            per_part_masks: true,
        },
    )?;
    println!(
        "rendered {}x{} frame at yaw {:.4} pitch {:.4} to {}",
        frame.width(),
        frame.height(),
        args.yaw,
        args.pitch,
        scene.out.display()
    );
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    if args.frames == 0 {
        bail!("--frames must be at least 1");
    }
    let scene = resolve_scene(&args.scene)?;
    for i in 0..args.frames {
        let yaw = if args.frames == 1 {
            FRAC_PI_2
        } else {
            let t = i as f64 / (args.frames - 1) as f64;
            FRAC_PI_2 - args.yaw_range + 2.0 * args.yaw_range * t
        };
        let pose = CameraPose {
            yaw,
            pitch: args.pitch,
        };
        let frame = render_frame(&scene.set, pose, &scene.camera, &scene.options)?;
        write_frame_files(
            &scene,
            &frame,
            OutputNames {
                feature: &format!("frame_{i:03}_feature.ppm"),
                labels: &format!("frame_{i:03}_labels.pgm"),
                record: &format!("frame_{i:03}.json"),
                per_part_masks: false,
            },
        )?;
    }
    println!(
        "rendered {} frames across yaw pi/2 +- {} to {}",
        args.frames,
        args.yaw_range,
        scene.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct MetricsRecord {
    d_mean: f64,
    d_mean_masked: f64,
    w: usize,
    h: usize,
    masked_pixel_count: usize,
}

fn metrics(args: MetricsArgs) -> Result<()> {
    let (wa, ha, a) = img::read_ppm(&args.image_a)
        .with_context(|| format!("reading {}", args.image_a.display()))?;
    let (wb, hb, b) = img::read_ppm(&args.image_b)
        .with_context(|| format!("reading {}", args.image_b.display()))?;
    if (wa, ha) != (wb, hb) {
        bail!("image sizes differ: {wa}x{ha} vs {wb}x{hb}");
    }
    let edited = match &args.edited {
        Some(path) => {
            let (wm, hm, m) =
                img::read_pgm(path).with_context(|| format!("reading {}", path.display()))?;
            if (wm, hm) != (wa, ha) {
                bail!("edited mask is {wm}x{hm}, images are {wa}x{ha}");
            }
            Some(m.iter().map(|&px| px >= 128).collect::<Vec<bool>>())
        }
        None => None,
    };
    let result = diff_metrics(
        &img::bytes_to_unit(&a),
        &img::bytes_to_unit(&b),
        wa,
        ha,
        edited.as_deref(),
    )?;
    let record = MetricsRecord {
        d_mean: result.d_mean,
        d_mean_masked: result.d_mean_masked,
        w: result.w,
        h: result.h,
        masked_pixel_count: result.masked_pixel_count,
    };
    println!("{}", serde_json::to_string(&record)?);
    Ok(())
}

fn check_grad(args: CheckGradArgs) -> Result<()> {
    if args.size < 2 {
        bail!("--size must be at least 2");
    }
    let report = l_ds_gradient_suite(args.seed, args.trials, args.size, args.step, args.tolerance)?;
    println!(
        "{}",
        serde_json::json!({
            "max_abs_err": report.max_abs_err,
            "max_rel_err": report.max_rel_err,
            "n_probes": report.n_probes,
            "pass": report.pass,
        })
    );
    if !report.pass {
        bail!(
            "gradient check failed: max relative error {} exceeds {}",
            report.max_rel_err,
            args.tolerance
        );
    }
    Ok(())
}
