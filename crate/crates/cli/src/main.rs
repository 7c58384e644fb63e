use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use lwdec_core::harness::{self, BenchSpec, ReferenceTables};
use lwdec_core::loss::{combine_loss_terms, mse_loss, temporal_alignment_loss, LossComponents, LossSchedule};
use lwdec_core::media::{self, Latent};
use lwdec_core::metrics::{self, MetricReport};
use lwdec_core::{build_decoder, Arch, DecoderConfig, DecoderModel, Error, ExecMode, Kernel, Tensor, WeightSource};

#[derive(Parser)]
#[command(name = "lwdec", version, about = "Decode, benchmark and score lightweight latent-diffusion decoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Time decoders and print a comparison table.
    Bench(BenchArgs),
    /// Decode latents to PPM images or frame sequences.
    Decode(DecodeArgs),
    /// SSIM and PSNR between reference and candidate images.
    Metrics(MetricsArgs),
    /// Fréchet distance between two embedding sets.
    Frechet(FrechetArgs),
    /// Evaluate the composite reconstruction loss.
    Loss(LossArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ArchArg {
    Refvae,
    Tae192,
    Tae192t,
}

impl From<ArchArg> for Arch {
    fn from(a: ArchArg) -> Arch {
        match a {
            ArchArg::Refvae => Arch::RefVae,
            ArchArg::Tae192 => Arch::Tae192,
            ArchArg::Tae192t => Arch::Tae192Temporal,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Naive,
    Optimized,
}

#[derive(Args)]
struct ExecArgs {
    /// Kernel implementation.
    #[arg(long, value_enum, default_value = "optimized")]
    mode: ModeArg,
    /// Use a fixed work partition so outputs are bit-identical run to run.
    #[arg(long)]
    deterministic: bool,
    /// Worker threads for the decode.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Seed for synthetic weights and latents.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl ExecArgs {
    fn mode(&self) -> ExecMode {
        let kernel = match self.mode {
            ModeArg::Naive => Kernel::Naive,
            ModeArg::Optimized => Kernel::Optimized,
        };
        ExecMode::new(kernel, self.deterministic)
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        if self.threads == 0 {
            return Err(Error::Validation("--threads must be at least 1".into()).into());
        }
        Ok(rayon::ThreadPoolBuilder::new().num_threads(self.threads).build()?)
    }
}

#[derive(Args)]
struct BenchArgs {
    /// Decoder to time; repeat to compare several.
    #[arg(long, value_enum, required = true)]
    arch: Vec<ArchArg>,
    /// LWDC weights (only with a single --arch). Seeded weights otherwise.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// LATZ latents to decode; a seeded latent is synthesized when omitted.
    #[arg(long, num_args = 1..)]
    latent: Vec<PathBuf>,
    /// Output resolution in pixels, square.
    #[arg(long, default_value_t = 256)]
    resolution: usize,
    /// Frames per decode; 1 for images.
    #[arg(long, default_value_t = 1)]
    frames: usize,
    #[arg(long, default_value_t = harness::DEFAULT_TIMED)]
    iters: usize,
    #[arg(long, default_value_t = harness::DEFAULT_WARMUP)]
    warmup: usize,
    #[command(flatten)]
    exec: ExecArgs,
    /// Show published reference values; without a path the bundled table is used.
    #[arg(long, num_args = 0..=1, default_missing_value = "builtin")]
    paper_ref: Option<PathBuf>,
    /// Write one JSON record per row to this file.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long, value_enum)]
    arch: ArchArg,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, num_args = 1.., required = true)]
    latent: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Frame rate recorded in video manifests.
    #[arg(long, default_value_t = 8)]
    fps: u32,
    #[command(flatten)]
    exec: ExecArgs,
}

#[derive(Args)]
struct MetricsArgs {
    /// Reference PPM images or frame manifests.
    #[arg(long, num_args = 1.., required = true)]
    reference: Vec<PathBuf>,
    /// Candidate images, paired with references in order.
    #[arg(long, num_args = 1.., required = true)]
    candidate: Vec<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct FrechetArgs {
    /// EMBD embeddings of real samples.
    #[arg(long)]
    real: PathBuf,
    /// EMBD embeddings of generated samples.
    #[arg(long)]
    generated: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct LossArgs {
    /// Pixel MSE term; computed from --pred/--target when those are given.
    #[arg(long, default_value_t = 0.0)]
    mse: f64,
    #[arg(long, default_value_t = 0.0)]
    lpips: f64,
    #[arg(long, default_value_t = 0.0)]
    gan: f64,
    /// Training step for the adversarial gate.
    #[arg(long, default_value_t = 0)]
    step: u64,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 0.4)]
    beta: f64,
    #[arg(long, default_value_t = 0.8)]
    gamma: f64,
    #[arg(long, default_value_t = 10_000)]
    t0: u64,
    /// Predicted image (PPM) or frame manifest.
    #[arg(long, requires = "target")]
    pred: Option<PathBuf>,
    /// Target image (PPM) or frame manifest.
    #[arg(long, requires = "pred")]
    target: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
}

fn load_model(arch: Arch, weights: Option<&Path>, seed: u64) -> Result<DecoderModel> {
    let config = DecoderConfig::new(arch);
    Ok(match weights {
        Some(path) => {
            let container = lwdec_core::read_container(path)?;
            build_decoder(config, WeightSource::Container(&container))?
        }
        None => build_decoder(config, WeightSource::Seed(seed))?,
    })
}

fn write_report(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn bench(args: BenchArgs) -> Result<()> {
    if args.weights.is_some() && args.arch.len() != 1 {
        return Err(Error::Validation("--weights needs exactly one --arch".into()).into());
    }
    let reference = match &args.paper_ref {
        None => None,
        Some(p) if p.as_os_str() == "builtin" => Some(ReferenceTables::builtin()),
        Some(p) => Some(ReferenceTables::load(p)?),
    };
    let mut rows = Vec::with_capacity(args.arch.len());
    for &arch in &args.arch {
        let spec = BenchSpec {
            warmup_iters: args.warmup,
            timed_iters: args.iters,
            threads: args.exec.threads,
            mode: args.exec.mode(),
            seed: args.exec.seed,
            ..BenchSpec::new(arch.into(), (args.resolution, args.resolution), args.frames)
        };
        rows.push(harness::run_bench(&spec, args.weights.as_deref(), &args.latent)?);
    }
    let report = harness::compare_report(&rows, reference.as_ref())?;
    print!("{}", report.text);
    if let Some(path) = &args.report {
        write_report(path, &report.jsonl)?;
    }
    Ok(())
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "latent".into(), |s| s.to_string_lossy().into_owned())
}

fn decode(args: DecodeArgs) -> Result<()> {
    let arch: Arch = args.arch.into();
    let model = load_model(arch, args.weights.as_deref(), args.exec.seed)?;
    let latents = args
        .latent
        .iter()
        .map(|p| Ok((p, media::read_latent(p)?)))
        .collect::<Result<Vec<(&PathBuf, Latent)>>>()?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mode = args.exec.mode();
    let pool = args.exec.pool()?;
    for (path, latent) in latents {
        let stem = file_stem(path);
        if latent.is_video() {
            let frames = pool.install(|| model.decode_video(&latent.tensor, mode))?;
            let manifest = media::write_video_frames(&frames, args.out.join(&stem), args.fps)?;
            println!("{}", manifest.display());
        } else {
            let img = pool.install(|| model.decode_image(&latent.tensor, mode))?;
            let out = args.out.join(format!("{stem}.ppm"));
            media::write_image_ppm(&img, &out)?;
            println!("{}", out.display());
        }
    }
    Ok(())
}

/// Images from a PPM file, or every frame of a manifest.
fn load_images(path: &Path) -> Result<Vec<Tensor>> {
    if path.extension().is_some_and(|e| e == "ppm") {
        return Ok(vec![media::read_image_ppm(path)?]);
    }
    let (_, video) = media::read_video_frames(path)?;
    let (t, _, _, _) = video.tchw_dims()?;
    Ok((0..t).map(|i| video.frame(i)).collect::<lwdec_core::Result<_>>()?)
}

fn load_all(paths: &[PathBuf]) -> Result<Vec<Tensor>> {
    let mut out = Vec::new();
    for p in paths {
        out.extend(load_images(p)?);
    }
    Ok(out)
}

fn load_sequence(path: &Path) -> Result<Tensor> {
    let frames = load_images(path)?;
    Ok(if frames.len() == 1 {
        frames.into_iter().next().unwrap()
    } else {
        Tensor::stack_frames(&frames)?
    })
}

fn metrics_cmd(args: MetricsArgs) -> Result<()> {
    let reference = load_all(&args.reference)?;
    let candidate = load_all(&args.candidate)?;
    if reference.len() != candidate.len() {
        return Err(Error::Validation(format!(
            "{} reference images but {} candidates",
            reference.len(),
            candidate.len()
        ))
        .into());
    }
    let pairs: Vec<(Tensor, Tensor)> = reference.into_iter().zip(candidate).collect();
    let report: MetricReport = metrics::compare_images(&pairs)?;
    println!("pairs {}", pairs.len());
    println!("SSIM  {:.4} ± {:.4}", report.ssim_mean, report.ssim_std);
    println!("PSNR  {:.2} ± {:.2} dB", report.psnr_mean, report.psnr_std);
    if let Some(path) = &args.report {
        write_report(path, &format!("{}\n", serde_json::to_string(&report)?))?;
    }
    Ok(())
}

fn frechet(args: FrechetArgs) -> Result<()> {
    let real = media::read_embeddings(&args.real)?;
    let generated = media::read_embeddings(&args.generated)?;
    let d = metrics::frechet_from_embeddings(&real, &generated)?;
    println!("frechet {d:.6}");
    if let Some(path) = &args.report {
        let record = serde_json::json!({
            "frechet": d,
            "real_rows": real.rows(),
            "generated_rows": generated.rows(),
            "dim": real.dim(),
        });
        write_report(path, &format!("{record}\n"))?;
    }
    Ok(())
}

fn loss(args: LossArgs) -> Result<()> {
    let schedule = LossSchedule {
        alpha: args.alpha,
        beta: args.beta,
        gamma: args.gamma,
        t0: args.t0,
    };
    schedule.validate()?;
    for (name, v) in [("mse", args.mse), ("lpips", args.lpips)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::Validation(format!("--{name} must be finite and non-negative")).into());
        }
    }
    if !args.gan.is_finite() {
        return Err(Error::Validation("--gan must be finite".into()).into());
    }
    let mut mse = args.mse;
    let mut temporal = None;
    if let (Some(pred), Some(target)) = (&args.pred, &args.target) {
        let (p, t) = (load_sequence(pred)?, load_sequence(target)?);
        mse = mse_loss(&p, &t)?;
        if p.layout() == lwdec_core::Layout::Tchw {
            temporal = Some(temporal_alignment_loss(&p, &t)?);
        }
    }
    let terms = combine_loss_terms(&LossComponents::new(mse, args.lpips, args.gan), args.step, &schedule);
    println!("mse_term   {}", terms.mse);
    println!("lpips_term {}", terms.lpips);
    println!("gan_term   {}", terms.gan);
    println!("total      {}", terms.total());
    if let Some(t) = temporal {
        println!("temporal_alignment {t}");
    }
    if let Some(path) = &args.report {
        let record = serde_json::json!({
            "step": args.step,
            "schedule": schedule,
            "terms": terms,
            "total": terms.total(),
            "temporal_alignment": temporal,
        });
        write_report(path, &format!("{record}\n"))?;
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_validation() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Bench(a) => bench(a),
        Command::Decode(a) => decode(a),
        Command::Metrics(a) => metrics_cmd(a),
        Command::Frechet(a) => frechet(a),
        Command::Loss(a) => loss(a),
    };
    match result {
        Ok(()) => {
            let _ = std::io::stdout().flush();
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
