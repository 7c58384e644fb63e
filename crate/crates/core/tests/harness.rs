mod common;

use lwdec_core::harness::*;
use lwdec_core::media::write_latent;
use lwdec_core::weights::write_container;
use lwdec_core::*;

fn tiny_spec(arch: Arch) -> BenchSpec {
    BenchSpec {
        warmup_iters: 0,
        timed_iters: 3,
        ..BenchSpec::new(arch, (64, 64), 1)
    }
}

fn row(arch: &str, t: f64) -> BenchRow {
    BenchRow {
        arch: arch.into(),
        resolution: (256, 256),
        frames: 1,
        mode: "optimized".into(),
        threads: 1,
        ssim: None,
        psnr: None,
        frechet: None,
        delta_t_mean: t,
        delta_t_std: 0.0,
        delta_t_median: t,
        size_mb: 1.0,
        param_count: 10,
        checksums: vec![1, 1, 1],
    }
}

#[test]
fn run_bench_with_files() {
    let dir = tempfile::tempdir().unwrap();
    let spec = tiny_spec(Arch::Tae192);
    let model = build_decoder(DecoderConfig::new(Arch::Tae192), WeightSource::Seed(3)).unwrap();
    let weights = dir.path().join("tae.lwdc");
    let bytes = write_container(&model, DType::F16, &weights).unwrap();
    let latent = dir.path().join("a.latz");
    write_latent(&synthetic_latent(&spec.latent_shape(), 1), 1.0, &latent).unwrap();

    let r = run_bench(&spec, Some(&weights), &[latent]).unwrap();
    assert_eq!(r.arch, "tae192");
    assert_eq!(r.checksums.len(), 3);
    assert!(r.outputs_identical());
    assert!(r.delta_t_mean > 0.0 && r.delta_t_std >= 0.0);
    assert_eq!(r.param_count, model.param_count());
    let on_disk = std::fs::metadata(&weights).unwrap().len();
    assert_eq!(bytes, on_disk);
    assert!((r.size_mb - on_disk as f64 / 1048576.0).abs() < 0.1);
}

#[test]
fn run_bench_rejects_wrong_latent_shape() {
    let dir = tempfile::tempdir().unwrap();
    let latent = dir.path().join("a.latz");
    write_latent(&synthetic_latent(&[4, 16, 16], 1), 1.0, &latent).unwrap();
    let err = run_bench(&tiny_spec(Arch::Tae192), None, &[latent]).unwrap_err();
    assert!(matches!(err, Error::SpecMismatch(_)), "{err}");
    assert!(err.is_validation());
}

#[test]
fn spec_validation() {
    let bad = [
        BenchSpec { timed_iters: 2, ..tiny_spec(Arch::Tae192) },
        BenchSpec { resolution: (60, 64), ..tiny_spec(Arch::Tae192) },
        BenchSpec { frames: 0, ..tiny_spec(Arch::Tae192) },
        BenchSpec { threads: 0, ..tiny_spec(Arch::Tae192) },
    ];
    for s in bad {
        assert!(matches!(s.validate(), Err(Error::SpecMismatch(_))));
    }
    assert_eq!(tiny_spec(Arch::Tae192).latent_shape(), vec![4, 8, 8]);
    assert_eq!(tiny_spec(Arch::Tae192Temporal).latent_shape(), vec![1, 4, 8, 8]);
}

#[test]
fn report_single_row() {
    let rep = compare_report(&[row("tae192", 0.004)], None).unwrap();
    let lines: Vec<&str> = rep.text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("Decoder"));
    assert!(lines[1].chars().all(|c| c == '-' || c == ' '));
    assert!(lines[2].starts_with("tae192"));
    let v: serde_json::Value = serde_json::from_str(rep.jsonl.trim()).unwrap();
    assert_eq!(v["ratio"], 1.0);
    assert_eq!(v["arch"], "tae192");
}

#[test]
fn report_with_reference() {
    let rows = [row("refvae", 0.012), row("tae192", 0.004)];
    let rep = compare_report(&rows, Some(&ReferenceTables::builtin())).unwrap();
    assert!(rep.text.contains("0.7656 ± 0.0023"), "{}", rep.text);
    assert!(rep.text.lines().next().unwrap().contains("Ref SSIM"));
    let records: Vec<serde_json::Value> = rep.jsonl.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 2);
    assert!((records[1]["ratio"].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-12);
    assert_eq!(records[0]["reference"]["model"], "SDXL VAE");

    // Columns line up: every row has the same rendered width up to trailing space.
    let starts: Vec<usize> = rep.text.lines().map(|l| l.find("256x256").unwrap_or(usize::MAX)).collect();
    assert_eq!(starts[2], starts[3]);
}

#[test]
fn report_needs_rows() {
    assert!(matches!(compare_report(&[], None), Err(Error::EmptyInput)));
}

#[test]
fn reference_tables_load_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("ref.json");
    std::fs::write(&p, serde_json::to_string(&ReferenceTables::builtin()).unwrap()).unwrap();
    assert_eq!(ReferenceTables::load(&p).unwrap(), ReferenceTables::builtin());
    std::fs::write(&p, "{").unwrap();
    assert!(matches!(ReferenceTables::load(&p), Err(Error::Validation(_))));
}
