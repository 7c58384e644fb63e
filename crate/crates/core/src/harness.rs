//! Decode timing and report tables.
//!
//! Timing covers the decode call alone: latents are loaded and the model is
//! built before the clock starts, and nothing is written to disk.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoders::{build_decoder, Arch, DecoderConfig, DecoderModel, WeightSource, LATENT_CHANNELS, UPSCALE};
use crate::error::{Error, Result};
use crate::media::read_latent;
use crate::metrics::{aggregate, median};
use crate::tensor::{ExecMode, Tensor};
use crate::weights::{container_len, read_container, size_mb, DType};

pub const DEFAULT_WARMUP: usize = 2;
pub const DEFAULT_TIMED: usize = 10;
pub const MIN_TIMED: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSpec {
    pub arch: Arch,
    /// Output pixel dims `(H, W)`.
    pub resolution: (usize, usize),
    /// 1 for single images.
    pub frames: usize,
    pub warmup_iters: usize,
    pub timed_iters: usize,
    pub threads: usize,
    pub mode: ExecMode,
    pub seed: u64,
    /// Storage type assumed for `size_mb` when no weight file is given.
    pub size_dtype: DType,
}

impl BenchSpec {
    pub fn new(arch: Arch, resolution: (usize, usize), frames: usize) -> Self {
        BenchSpec {
            arch,
            resolution,
            frames,
            warmup_iters: DEFAULT_WARMUP,
            timed_iters: DEFAULT_TIMED,
            threads: 1,
            mode: ExecMode::optimized(),
            seed: 0,
            size_dtype: DType::F16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.resolution;
        if h == 0 || w == 0 || h % UPSCALE != 0 || w % UPSCALE != 0 {
            return Err(Error::SpecMismatch(format!(
                "resolution {h}x{w} must be positive and divisible by {UPSCALE}"
            )));
        }
        if self.timed_iters < MIN_TIMED {
            return Err(Error::SpecMismatch(format!(
                "need at least {MIN_TIMED} timed iterations, got {}",
                self.timed_iters
            )));
        }
        if self.frames == 0 {
            return Err(Error::SpecMismatch("frames must be at least 1".into()));
        }
        if self.threads == 0 {
            return Err(Error::SpecMismatch("threads must be at least 1".into()));
        }
        Ok(())
    }

    /// Shape every latent must have.
    pub fn latent_shape(&self) -> Vec<usize> {
        let (h, w) = (self.resolution.0 / UPSCALE, self.resolution.1 / UPSCALE);
        if self.is_video() {
            vec![self.frames, LATENT_CHANNELS, h, w]
        } else {
            vec![LATENT_CHANNELS, h, w]
        }
    }

    /// Temporal decoders always take frame sequences.
    pub fn is_video(&self) -> bool {
        self.frames > 1 || self.arch.is_temporal()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub arch: String,
    pub resolution: (usize, usize),
    pub frames: usize,
    pub mode: String,
    pub threads: usize,
    pub ssim: Option<MeanStd>,
    pub psnr: Option<MeanStd>,
    pub frechet: Option<f64>,
    /// Seconds per decode call (per image, or per `frames`-frame bunch).
    pub delta_t_mean: f64,
    pub delta_t_std: f64,
    pub delta_t_median: f64,
    pub size_mb: f64,
    pub param_count: usize,
    /// Checksum of the decoded output of every timed iteration.
    pub checksums: Vec<u64>,
}

impl BenchRow {
    /// True when every timed iteration produced bit-identical output.
    pub fn outputs_identical(&self) -> bool {
        self.checksums.windows(2).all(|w| w[0] == w[1])
    }
}

/// Seeded latents with values in `[-2, 2]`.
pub fn synthetic_latent(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Uniform::new_inclusive(-2.0f32, 2.0).expect("valid bounds");
    let n = shape.iter().product();
    let data = dist.sample_iter(&mut rng).take(n).collect();
    let layout = if shape.len() == 4 {
        crate::tensor::Layout::Tchw
    } else {
        crate::tensor::Layout::Chw
    };
    Tensor::new(shape.to_vec(), layout, data).expect("non-empty latent shape")
}

fn decode_once(model: &DecoderModel, latent: &Tensor, spec: &BenchSpec) -> Result<Tensor> {
    if spec.is_video() {
        model.decode_video(latent, spec.mode)
    } else {
        model.decode_image(latent, spec.mode)
    }
}

fn mode_label(mode: ExecMode) -> String {
    match (mode.is_naive(), mode.is_deterministic()) {
        (true, _) => "naive".into(),
        (false, true) => "optimized-deterministic".into(),
        (false, false) => "optimized".into(),
    }
}

/// Time an already-built model on in-memory latents.
pub fn bench_model(model: &DecoderModel, latents: &[Tensor], spec: &BenchSpec, size_mb: f64) -> Result<BenchRow> {
    spec.validate()?;
    if model.arch() != spec.arch {
        return Err(Error::SpecMismatch(format!(
            "model is `{}`, spec asks for `{}`",
            model.arch(),
            spec.arch
        )));
    }
    if latents.is_empty() {
        return Err(Error::SpecMismatch("no latents to decode".into()));
    }
    let expected = spec.latent_shape();
    if let Some(bad) = latents.iter().find(|l| l.shape() != expected.as_slice()) {
        return Err(Error::SpecMismatch(format!(
            "latent shape {:?} does not match the expected {expected:?}",
            bad.shape()
        )));
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.threads)
        .build()
        .map_err(|e| Error::SpecMismatch(format!("cannot start {} threads: {e}", spec.threads)))?;
    let (times, checksums) = pool.install(|| -> Result<(Vec<f64>, Vec<u64>)> {
        for i in 0..spec.warmup_iters {
            decode_once(model, &latents[i % latents.len()], spec)?;
        }
        let mut times = Vec::with_capacity(spec.timed_iters);
        let mut checksums = Vec::with_capacity(spec.timed_iters);
        for i in 0..spec.timed_iters {
            let latent = &latents[i % latents.len()];
            let start = Instant::now();
            let out = decode_once(model, latent, spec)?;
            times.push(start.elapsed().as_secs_f64());
            checksums.push(out.checksum());
        }
        Ok((times, checksums))
    })?;

    let (delta_t_mean, delta_t_std) = aggregate(&times)?;
    Ok(BenchRow {
        arch: spec.arch.id().to_string(),
        resolution: spec.resolution,
        frames: spec.frames,
        mode: mode_label(spec.mode),
        threads: spec.threads,
        ssim: None,
        psnr: None,
        frechet: None,
        delta_t_mean,
        delta_t_std,
        delta_t_median: median(&times)?,
        size_mb,
        param_count: model.param_count(),
        checksums,
    })
}

/// Build the decoder (from `weights` or the spec's seed), load latents (or
/// synthesize one when none are given) and time the decode.
pub fn run_bench(spec: &BenchSpec, weights: Option<&Path>, latents: &[PathBuf]) -> Result<BenchRow> {
    spec.validate()?;
    let config = DecoderConfig::new(spec.arch);
    let (model, bytes) = match weights {
        Some(path) => {
            let container = read_container(path)?;
            let model = build_decoder(config, WeightSource::Container(&container))?;
            let bytes = std::fs::metadata(path).map_err(|e| Error::io(path, e))?.len();
            (model, bytes)
        }
        None => {
            let model = build_decoder(config, WeightSource::Seed(spec.seed))?;
            let bytes = container_len(&model, spec.size_dtype)?;
            (model, bytes)
        }
    };
    let tensors = if latents.is_empty() {
        vec![synthetic_latent(&spec.latent_shape(), spec.seed)]
    } else {
        latents
            .iter()
            .map(|p| read_latent(p).map(|l| l.tensor))
            .collect::<Result<Vec<_>>>()?
    };
    bench_model(&model, &tensors, spec, size_mb(bytes))
}

/// Published reference values for one table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTable {
    pub id: String,
    pub caption: String,
    pub resolution: Option<usize>,
    pub frames: usize,
    pub delta_t_unit: String,
    pub rows: Vec<ReferenceRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub model: String,
    pub arch: Option<String>,
    #[serde(default)]
    pub ssim: Option<MeanStd>,
    #[serde(default)]
    pub psnr: Option<MeanStd>,
    pub fid: Option<f64>,
    pub delta_t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTables {
    pub tables: Vec<ReferenceTable>,
}

const BUILTIN_REFERENCE: &str = include_str!("../data/reference_tables.json");

impl ReferenceTables {
    /// The tables shipped with the crate.
    pub fn builtin() -> Self {
        serde_json::from_str(BUILTIN_REFERENCE).expect("bundled reference tables parse")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Validation(format!("{}: invalid reference table: {e}", path.display())))
    }

    pub fn table(&self, id: &str) -> Option<&ReferenceTable> {
        self.tables.iter().find(|t| t.id == id)
    }

    /// Reference row for a bench configuration: video tables match on frame
    /// count, image tables on square resolution.
    pub fn lookup(&self, arch: &str, resolution: (usize, usize), frames: usize) -> Option<&ReferenceRow> {
        self.tables
            .iter()
            .find(|t| {
                if frames > 1 || t.frames > 1 {
                    t.frames == frames
                } else {
                    t.resolution == Some(resolution.0) && resolution.0 == resolution.1
                }
            })?
            .rows
            .iter()
            .find(|r| r.arch.as_deref() == Some(arch))
    }
}

/// Rendered comparison: aligned text plus one JSON object per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub text: String,
    pub jsonl: String,
}

#[derive(Serialize)]
struct RecordLine<'a> {
    #[serde(flatten)]
    row: &'a BenchRow,
    ratio: f64,
    reference: Option<&'a ReferenceRow>,
}

fn fmt_mean_std(v: Option<MeanStd>, digits: usize) -> String {
    v.map_or("-".into(), |v| format!("{:.digits$} ± {:.digits$}", v.mean, v.std))
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or("-".into(), |v| format!("{v:.digits$}"))
}

/// Render rows as an aligned table, with a ratio column relative to the
/// first row and, given `reference`, the matching published values.
pub fn compare_report(rows: &[BenchRow], reference: Option<&ReferenceTables>) -> Result<Report> {
    let first = rows.first().ok_or(Error::EmptyInput)?;
    let mut header = vec!["Decoder", "Res", "T", "SSIM", "PSNR", "FID", "Δt (s)", "median", "ratio", "Size (MB)"];
    if reference.is_some() {
        header.extend(["Ref model", "Ref SSIM", "Ref PSNR", "Ref FID", "Ref Δt"]);
    }
    let mut table: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    let mut jsonl = String::new();
    for row in rows {
        let ratio = row.delta_t_mean / first.delta_t_mean;
        let mut cells = vec![
            row.arch.clone(),
            format!("{}x{}", row.resolution.0, row.resolution.1),
            row.frames.to_string(),
            fmt_mean_std(row.ssim, 4),
            fmt_mean_std(row.psnr, 2),
            fmt_opt(row.frechet, 4),
            format!("{:.5} ± {:.5}", row.delta_t_mean, row.delta_t_std),
            format!("{:.5}", row.delta_t_median),
            format!("{ratio:.2}"),
            format!("{:.2}", row.size_mb),
        ];
        let reference_row = reference.and_then(|r| r.lookup(&row.arch, row.resolution, row.frames));
        if reference.is_some() {
            match reference_row {
                Some(r) => cells.extend([
                    r.model.clone(),
                    fmt_mean_std(r.ssim, 4),
                    fmt_mean_std(r.psnr, 2),
                    fmt_opt(r.fid, 4),
                    format!("{}", r.delta_t),
                ]),
                None => cells.extend(std::iter::repeat_n("-".to_string(), 5)),
            }
        }
        table.push(cells);
        let line = RecordLine {
            row,
            ratio,
            reference: reference_row,
        };
        jsonl.push_str(&serde_json::to_string(&line).expect("bench rows serialize"));
        jsonl.push('\n');
    }

    let cols = table[0].len();
    let widths: Vec<usize> = (0..cols)
        .map(|c| table.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut text = String::new();
    for (i, r) in table.iter().enumerate() {
        let line: Vec<String> = r
            .iter()
            .zip(&widths)
            .map(|(cell, &w)| format!("{cell}{}", " ".repeat(w - cell.chars().count())))
            .collect();
        let _ = writeln!(text, "{}", line.join("  ").trim_end());
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
            let _ = writeln!(text, "{}", rule.join("  "));
        }
    }
    Ok(Report { text, jsonl })
}
