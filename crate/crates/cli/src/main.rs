use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::Rng;
use sparsedc::camera::{encode_depth_map, CameraIntrinsics};
use sparsedc::config::RunConfig;
use sparsedc::embed::{
    assemble_input, concat_weights, embed, load_weights, patch_aligned_size, save_weights, EmbedWeights, Image,
    DEFAULT_INIT_SCALE,
};
use sparsedc::eval::{dataset_eval, read_values_csv, rank_aggregate};
use sparsedc::io::{read_camera, read_depth, read_pgm, write_json, write_pfm};
use sparsedc::losses::{finite_diff_check, LossKind};
use sparsedc::raster::Raster;
use sparsedc::render::{generate_dataset, MANIFEST_FILE};
use sparsedc::seed::{rng_for, stream};
use sparsedc::sparse::{rasterize_channel, simulate_measurements, write_measurements_csv, SparseMeasurement};

/// Gradient-check failure threshold for `losscheck`.
const LOSSCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "sparsedc", version, about = "Sparse-measurement depth completion toolkit")]
struct Cli {
    /// JSON run configuration; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Copy)]
struct CameraArgs {
    /// Image width in pixels.
    #[arg(long, default_value_t = 640)]
    width: usize,
    /// Image height in pixels.
    #[arg(long, default_value_t = 480)]
    height: usize,
    /// Focal length in pixels (principal point at the image center).
    #[arg(long, default_value_t = 320.0)]
    focal: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset (depth, pose, proxy image per frame) from an OBJ mesh.
    GenData {
        #[arg(long)]
        mesh: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        frames: Option<usize>,
        #[command(flatten)]
        camera: CameraArgs,
    },
    /// Simulate sparse measurements for one frame and rasterize the sparse channel.
    SampleSparse {
        /// Proxy image (PGM).
        #[arg(long)]
        image: PathBuf,
        /// Ground-truth depth (PFM).
        #[arg(long)]
        depth: PathBuf,
        /// Camera JSON supplying the focal length.
        #[arg(long, conflicts_with = "focal")]
        camera: Option<PathBuf>,
        /// Focal length in pixels when no camera file is given.
        #[arg(long)]
        focal: Option<f64>,
        /// Frame index selecting the random streams.
        #[arg(long, default_value_t = 0)]
        frame: u64,
        #[arg(long, default_value_t = 14)]
        patch: usize,
        /// Output measurements CSV.
        #[arg(long)]
        out_csv: PathBuf,
        /// Output sparse channel (PFM, patch-aligned resolution).
        #[arg(long)]
        out_channel: PathBuf,
    },
    /// Convert a metric depth map into the normalized inverse canonical encoding.
    Encode {
        #[arg(long)]
        depth: PathBuf,
        #[arg(long, conflicts_with = "focal")]
        camera: Option<PathBuf>,
        #[arg(long)]
        focal: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare predicted and ground-truth depth maps matched by file name.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Output report JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Average per-column ranks of a method × metric CSV (best method last).
    Rank {
        #[arg(long)]
        values: PathBuf,
        /// Output CSV; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        higher_is_better: bool,
    },
    /// Finite-difference check of the training-loss gradients on random instances.
    Losscheck {
        /// Largest instance side length.
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 50)]
        instances: usize,
        #[arg(long, default_value_t = 1e-6)]
        epsilon: f64,
    },
    /// Check that a zero sparse channel leaves the 4-channel patch embedding unchanged.
    EmbedCheck {
        #[arg(long, default_value_t = 32)]
        embed_dim: usize,
        #[arg(long, default_value_t = 14)]
        patch: usize,
        #[arg(long, default_value_t = 20)]
        draws: usize,
        /// Also save the last 4-channel weights here and verify they reload bitwise.
        #[arg(long)]
        save_weights: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg.resolved())
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring thread pool")?;
    }
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::GenData { mesh, out, frames, camera } => gen_data(&cfg, mesh, out, frames, camera),
        Command::SampleSparse { image, depth, camera, focal, frame, patch, out_csv, out_channel } => {
            let focal = FocalSource::new(camera, focal)?;
            sample_sparse(&cfg, &image, &depth, focal, frame, patch, &out_csv, &out_channel)
        }
        Command::Encode { depth, camera, focal, out } => {
            let focal = FocalSource::new(camera, focal)?;
            encode(&cfg, &depth, focal, &out)
        }
        Command::Eval { pred, gt, out } => eval(&cfg, &pred, &gt, &out),
        Command::Rank { values, out, higher_is_better } => rank(&values, out.as_deref(), higher_is_better),
        Command::Losscheck { size, instances, epsilon } => losscheck(&cfg, size, instances, epsilon),
        Command::EmbedCheck { embed_dim, patch, draws, save_weights } => {
            embed_check(&cfg, embed_dim, patch, draws, save_weights.as_deref())
        }
    }
}

fn gen_data(
    cfg: &RunConfig,
    mesh: Option<PathBuf>,
    out: Option<PathBuf>,
    frames: Option<usize>,
    camera: CameraArgs,
) -> Result<ExitCode> {
    let mesh = mesh
        .or_else(|| cfg.paths.mesh.clone())
        .ok_or_else(|| anyhow!("no mesh given (--mesh or paths.mesh)"))?;
    let out = out
        .or_else(|| cfg.paths.out_dir.clone())
        .ok_or_else(|| anyhow!("no output directory given (--out or paths.out_dir)"))?;
    let mut pose_cfg = cfg.pose_sampler;
    if let Some(n) = frames {
        pose_cfg.n_frames = n;
    }
    let intr = CameraIntrinsics::centered(camera.focal, camera.width, camera.height)?;
    let start = Instant::now();
    let manifest = generate_dataset(&mesh, &pose_cfg, &intr, &out)?;
    eprintln!(
        "rendered {} frames of {}x{} in {:.2?}",
        manifest.n_frames,
        intr.width,
        intr.height,
        start.elapsed()
    );
    println!("{}", out.join(MANIFEST_FILE).display());
    Ok(ExitCode::SUCCESS)
}

enum FocalSource {
    Camera(CameraIntrinsics),
    Focal(f64),
}

impl FocalSource {
    fn new(camera: Option<PathBuf>, focal: Option<f64>) -> Result<Self> {
        match (camera, focal) {
            (Some(path), _) => Ok(Self::Camera(read_camera(&path)?.0)),
            (None, Some(f)) if f > 0.0 && f.is_finite() => Ok(Self::Focal(f)),
            (None, Some(f)) => bail!("focal length must be positive, got {f}"),
            (None, None) => bail!("a focal length is required (--camera or --focal)"),
        }
    }

    /// Intrinsics for an image of the given size, checked against the camera file.
    fn intrinsics(&self, width: usize, height: usize) -> Result<CameraIntrinsics> {
        match self {
            Self::Camera(intr) => {
                if (intr.width, intr.height) != (width, height) {
                    bail!(
                        "camera is {}x{} but the depth map is {width}x{height}",
                        intr.width,
                        intr.height
                    );
                }
                Ok(*intr)
            }
            Self::Focal(f) => Ok(CameraIntrinsics::centered(*f, width, height)?),
        }
    }
}

/// Maps a full-resolution pixel onto the resized grid by its center.
fn rescale_index(i: usize, from: usize, to: usize) -> usize {
    (((i as f64 + 0.5) * to as f64 / from as f64) as usize).min(to - 1)
}

#[allow(clippy::too_many_arguments)]
fn sample_sparse(
    cfg: &RunConfig,
    image_path: &Path,
    depth_path: &Path,
    focal: FocalSource,
    frame: u64,
    patch: usize,
    out_csv: &Path,
    out_channel: &Path,
) -> Result<ExitCode> {
    let image = read_pgm(image_path)?;
    let depth = read_depth(depth_path)?;
    if (image.width, image.height) != (depth.width, depth.height) {
        bail!(
            "image is {}x{} but depth is {}x{}",
            image.width,
            image.height,
            depth.width,
            depth.height
        );
    }
    let intr = focal.intrinsics(depth.width, depth.height)?;
    let measurements = simulate_measurements(&image, &depth, &cfg.sampler, frame);
    if measurements.is_empty() {
        eprintln!("warning: no usable corners in {}; writing an empty measurement set", image_path.display());
    }
    write_measurements_csv(out_csv, &measurements)?;

    let (w, h) = patch_aligned_size(depth.width, depth.height, patch);
    if w == 0 || h == 0 {
        bail!("{}x{} is smaller than one {patch}-pixel patch", depth.width, depth.height);
    }
    let resized = intr.scaled_to(w, h)?;
    let moved: Vec<SparseMeasurement> = measurements
        .iter()
        .map(|m| SparseMeasurement {
            u: rescale_index(m.u, depth.width, w),
            v: rescale_index(m.v, depth.height, h),
            ..*m
        })
        .collect();
    let (channel, stats) = rasterize_channel(&moved, w, h, patch, resized.focal(), &cfg.transform)?;
    write_pfm(out_channel, &channel.values)?;
    eprintln!(
        "{} measurements, channel {w}x{h}, {} patches encoded ({} clamped)",
        measurements.len(),
        stats.encoded,
        stats.clamped
    );
    Ok(ExitCode::SUCCESS)
}

fn encode(cfg: &RunConfig, depth_path: &Path, focal: FocalSource, out: &Path) -> Result<ExitCode> {
    let depth = read_depth(depth_path)?;
    let intr = focal.intrinsics(depth.width, depth.height)?;
    let (encoded, stats) = encode_depth_map(&depth, intr.focal(), &cfg.transform)?;
    write_pfm(out, &encoded)?;
    eprintln!("encoded {} pixels ({} clamped)", stats.encoded, stats.clamped);
    Ok(ExitCode::SUCCESS)
}

fn pfm_names(dir: &Path) -> Result<BTreeSet<String>> {
    let mut names = BTreeSet::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "pfm") {
            if let Some(name) = path.file_name() {
                names.insert(name.to_string_lossy().into_owned());
            }
        }
    }
    Ok(names)
}

fn eval(cfg: &RunConfig, pred_dir: &Path, gt_dir: &Path, out: &Path) -> Result<ExitCode> {
    let gt_names = pfm_names(gt_dir)?;
    let pred_names = pfm_names(pred_dir)?;
    if gt_names.is_empty() {
        bail!("no .pfm files in {}", gt_dir.display());
    }
    if let Some(missing) = gt_names.difference(&pred_names).next() {
        bail!("no prediction for {missing} in {}", pred_dir.display());
    }
    let extra = pred_names.difference(&gt_names).count();
    if extra > 0 {
        eprintln!("warning: ignoring {extra} predictions without ground truth");
    }
    let frames = gt_names
        .iter()
        .map(|name| Ok((read_depth(&pred_dir.join(name))?, read_depth(&gt_dir.join(name))?)))
        .collect::<Result<Vec<_>>>()?;
    let dataset = gt_dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let summary = dataset_eval(&dataset, &frames, Some(cfg.transform.d_max))?;
    write_json(out, &summary)?;
    eprintln!(
        "{}: {} frames, MAE {:.4} m, RMSE {:.4} m",
        summary.dataset, summary.n_frames, summary.mae_mean, summary.rmse_mean
    );
    Ok(ExitCode::SUCCESS)
}

fn rank(values: &Path, out: Option<&Path>, higher_is_better: bool) -> Result<ExitCode> {
    let (methods, columns, matrix) = read_values_csv(values)?;
    let table = rank_aggregate(methods, columns, matrix, !higher_is_better)?;
    let csv = table.to_csv();
    match out {
        Some(path) => fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{csv}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn losscheck(cfg: &RunConfig, size: usize, instances: usize, epsilon: f64) -> Result<ExitCode> {
    if size < 2 || instances == 0 {
        bail!("need --size >= 2 and --instances >= 1");
    }
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for k in 0..instances {
        let mut rng = rng_for(cfg.seed, stream::LOSSCHECK, k as u64);
        let (w, h) = (rng.gen_range(2..=size), rng.gen_range(2..=size));
        let masked = rng.gen_range(0.0..0.5);
        let pred = Raster::from_fn(w, h, |_, _| rng.gen_range(0.05..1.0));
        let gt = Raster::from_fn(w, h, |_, _| rng.gen_range(0.05..1.0));
        let mut mask = Raster::from_fn(w, h, |_, _| !rng.gen_bool(masked));
        mask.data[0] = true;
        for kind in [LossKind::ScaleInvariant, LossKind::GradientMatching, LossKind::Total] {
            worst = worst.max(finite_diff_check(kind, &pred, &gt, &mask, &cfg.loss, epsilon)?);
        }
    }
    println!("{worst:e}");
    eprintln!("{instances} instances up to {size}x{size} checked in {:.2?}", start.elapsed());
    if worst < LOSSCHECK_TOLERANCE {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("gradient check failed: max relative error {worst:e} >= {LOSSCHECK_TOLERANCE:e}");
        Ok(ExitCode::FAILURE)
    }
}

fn embed_check(
    cfg: &RunConfig,
    embed_dim: usize,
    patch: usize,
    draws: usize,
    save_to: Option<&Path>,
) -> Result<ExitCode> {
    if embed_dim == 0 || patch == 0 || draws == 0 {
        bail!("--embed-dim, --patch and --draws must be positive");
    }
    let mut mismatches = 0;
    let mut last = None;
    for k in 0..draws {
        let mut rng = rng_for(cfg.seed, stream::EMBED, k as u64);
        let w3 = EmbedWeights::random(embed_dim, 3, patch, DEFAULT_INIT_SCALE, &mut rng);
        let w4 = concat_weights(&w3, DEFAULT_INIT_SCALE, &mut rng)?;
        let (rows, cols) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
        let (h, w) = (rows * patch, cols * patch);
        let rgb = Image::from_vec(3, h, w, (0..3 * h * w).map(|_| rng.gen::<f64>()).collect())?;
        let zero = sparsedc::sparse::SparseDepthChannel {
            patch_size: patch,
            values: Raster::filled(w, h, 0.0),
        };
        let a = embed(&rgb, &w3)?;
        let b = embed(&assemble_input(&rgb, &zero)?, &w4)?;
        let same = a.tokens.len() == b.tokens.len()
            && a.tokens.iter().zip(&b.tokens).all(|(x, y)| x.to_bits() == y.to_bits());
        mismatches += (!same) as usize;
        last = Some(w4);
    }
    if let (Some(path), Some(w4)) = (save_to, last) {
        save_weights(path, &w4)?;
        let back = load_weights(path)?;
        let f32s = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<_>>();
        if back.shape() != w4.shape() || f32s(&w4.kernel) != f32s(&back.kernel) || f32s(&w4.bias) != f32s(&back.bias)
        {
            bail!("weights reloaded from {} differ from the saved ones", path.display());
        }
        eprintln!("saved 4-channel weights to {}", path.display());
    }
    println!("{}/{draws} draws identical", draws - mismatches);
    if mismatches == 0 {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("zero-channel equivalence failed on {mismatches} draws");
        Ok(ExitCode::FAILURE)
    }
}
