use std::path::{Path, PathBuf};
use std::process::Command;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use svigl::denoise::pg_synthesize;
use svigl::flow::FlowField;
use svigl::lop::PointCloud;
use svigl::Image;
use svigl_cli::args::{Optimizer, Task};
use svigl_cli::io::{self, PgmEncoding};
use svigl_cli::{parse_args, CliError, ParseFailure};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_svigl"))
}

fn scene(w: usize, h: usize) -> Image {
    Image::from_fn(w, h, |r, c| {
        let v = 0.2 + 0.5 * (r * c) as f64 / (w * h) as f64;
        if r > h / 3 && c < w / 2 {
            0.8
        } else {
            v
        }
    })
}

fn write_noisy(dir: &Path, w: usize, h: usize) -> (PathBuf, PathBuf) {
    let clean = scene(w, h);
    let noisy = pg_synthesize(&clean, 0.05, 1e-4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let (cp, np) = (dir.join("clean.pgm"), dir.join("noisy.pgm"));
    io::save_pgm(&cp, &clean, 65535).unwrap();
    io::save_pgm(&np, &noisy, 65535).unwrap();
    (cp, np)
}

fn args(list: &[&str]) -> Vec<String> {
    std::iter::once("svigl").chain(list.iter().copied()).map(String::from).collect()
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn denoise_flags_build_the_expected_config() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("noisy.pgm");
    io::save_pgm(&input, &scene(4, 4), 255).unwrap();
    let out = dir.path().join("mean.pgm");
    let sig = dir.path().join("sig.pgm");
    let cfg = parse_args(args(&[
        "denoise",
        "--in",
        input.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--sigma-out",
        sig.to_str().unwrap(),
        "--optimizer",
        "svigl",
        "--samples",
        "50",
        "--iters",
        "100",
        "--seed",
        "7",
    ]))
    .unwrap();
    let Task::Denoise(t) = cfg.task else { panic!("not a denoise task") };
    let Optimizer::Svigl(c) = t.run.optimizer else { panic!("not svigl") };
    assert_eq!((c.sample_count, c.iterations, c.seed), (50, 100, 7));
    assert!(cfg.timing);
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("noisy.pgm");
    io::save_pgm(&input, &scene(4, 4), 255).unwrap();
    let base = ["denoise", "--in", input.to_str().unwrap(), "--out", "m.pgm"];

    let mut omega = base.to_vec();
    omega.extend(["--sor-omega", "2.5"]);
    match parse_args(args(&omega)) {
        Err(e @ ParseFailure::Clap(_)) => assert_eq!(e.exit_code(), 2),
        other => panic!("expected a usage error, got {other:?}"),
    }

    match parse_args(args(&["denoise", "--in", "missing.pgm", "--out", "m.pgm"])) {
        Err(ParseFailure::Invalid(e @ CliError::Usage(_))) => assert_eq!(e.exit_code(), 2),
        other => panic!("expected a usage error, got {other:?}"),
    }

    let mut alpha = base.to_vec();
    alpha.extend(["--alpha", "1.5"]);
    assert_eq!(parse_args(args(&alpha)).unwrap_err().exit_code(), 2);

    let mut map_sigma = base.to_vec();
    map_sigma.extend(["--optimizer", "gl-map", "--sigma-out", "s.pgm"]);
    assert_eq!(parse_args(args(&map_sigma)).unwrap_err().exit_code(), 2);

    assert_eq!(parse_args(args(&["denoise", "--bogus"])).unwrap_err().exit_code(), 2);
}

#[test]
fn binary_without_arguments_prints_usage_and_fails() {
    let out = bin().output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let text = String::from_utf8_lossy(&out.stderr);
    assert!(text.contains("Usage"), "{text}");

    let out = bin().args(["denoise", "--in", "x.pgm", "--out", "y.pgm", "--sor-omega", "2.5"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_input_exits_with_three_and_reports_offset() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.pgm");
    std::fs::write(&bad, b"P5\n4 4\n255\n\x01\x02").unwrap();
    let out = bin()
        .args(["denoise", "--in", bad.to_str().unwrap(), "--out"])
        .arg(dir.path().join("m.pgm"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("byte 13"));
    assert!(!dir.path().join("m.pgm").exists());
}

#[test]
fn flo_with_wrong_magic_is_rejected_at_offset_zero() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.flo");
    let mut bytes = io::encode_flo(&FlowField::zeros(2, 2));
    bytes[0] = b'X';
    std::fs::write(&path, bytes).unwrap();
    match io::load_flo(&path) {
        Err(e @ CliError::Format { .. }) => {
            let CliError::Format { source, .. } = &e else { unreachable!() };
            assert_eq!(source.offset, 0);
            assert_eq!(e.exit_code(), 3);
        }
        other => panic!("expected a format error, got {other:?}"),
    }
}

#[test]
fn pgm_round_trips_within_quantization() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let img = Image::new(7, 5, (0..35).map(|_| rand::Rng::random_range(&mut rng, 0.0..1.0)).collect()).unwrap();
    for (maxval, enc) in [
        (255, PgmEncoding::Binary),
        (255, PgmEncoding::Ascii),
        (65535, PgmEncoding::Binary),
        (65535, PgmEncoding::Ascii),
    ] {
        let back = io::decode_pgm(&io::encode_pgm(&img, maxval, enc)).unwrap();
        assert_eq!((back.width(), back.height()), (7, 5));
        let err = img.pixels().iter().zip(back.pixels()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err <= 0.5 / maxval as f64 + 1e-15, "maxval {maxval}: {err}");
    }
}

proptest! {
    #[test]
    fn flo_round_trip_is_bit_exact(values in prop::collection::vec(-1e3f32..1e3, 96)) {
        let state: Vec<f64> = values.iter().map(|&v| v as f64).collect();
        let flow = FlowField::new(8, 6, state).unwrap();
        let back = io::decode_flo(&io::encode_flo(&flow)).unwrap();
        prop_assert_eq!((back.width(), back.height()), (8, 6));
        for (a, b) in flow.state().iter().zip(back.state()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn ply_round_trip_is_exact(coords in prop::collection::vec(-1e6f64..1e6, 3..60)) {
        let n = coords.len() / 3;
        let points: Vec<[f64; 3]> = coords.chunks_exact(3).take(n).map(|c| [c[0], c[1], c[2]]).collect();
        let cloud = PointCloud::new(points).unwrap();
        let back = io::decode_ply(&io::encode_ply(&cloud)).unwrap();
        prop_assert_eq!(back.points(), cloud.points());
    }
}

#[test]
fn atomic_writes_replace_whole_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.csv");
    io::write_atomic(&path, b"first version\n").unwrap();
    io::write_atomic(&path, b"2\n").unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), b"2\n");
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn noise_and_denoise_tasks_run_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let clean = d.join("clean.pgm");
    io::save_pgm(&clean, &scene(16, 12), 255).unwrap();
    let noisy = d.join("noisy.pgm");
    let out = bin()
        .args(["noise", "--seed", "3", "--in"])
        .arg(&clean)
        .arg("--out")
        .arg(&noisy)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    for optimizer in ["svigl", "adam", "sgd", "gl-map", "laplace"] {
        let mean = d.join(format!("{optimizer}.pgm"));
        let trace = d.join(format!("{optimizer}.csv"));
        let mut cmd = bin();
        cmd.args(["denoise", "--optimizer", optimizer, "--iters", "4", "--samples", "2", "--in"])
            .arg(&noisy)
            .arg("--out")
            .arg(&mean)
            .arg("--trace")
            .arg(&trace)
            .arg("--clean")
            .arg(&clean);
        if optimizer != "gl-map" {
            cmd.arg("--sigma-out").arg(d.join(format!("{optimizer}_sigma.pgm")));
        }
        let out = cmd.output().unwrap();
        assert!(out.status.success(), "{optimizer}: {}", String::from_utf8_lossy(&out.stderr));
        assert_eq!(io::load_pgm(&mean).unwrap().width(), 16);
        assert_eq!(read_csv(&trace)[0], ["iter", "kl", "seconds"]);
    }
}

#[test]
fn single_optimizer_compare_writes_one_trace_and_one_summary_row() {
    let dir = tempfile::tempdir().unwrap();
    let (clean, noisy) = write_noisy(dir.path(), 12, 10);
    let out = bin()
        .args(["compare", "--task", "denoise", "--run", "svigl:iters=3,samples=4", "--in"])
        .arg(&noisy)
        .arg("--clean")
        .arg(&clean)
        .arg("--out-dir")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = read_csv(&dir.path().join("summary.csv"));
    assert_eq!(summary[0], ["optimizer", "final_kl", "psnr_or_aepe", "seconds_total"]);
    assert_eq!(summary.len(), 2);
    let traces: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().starts_with("trace_"))
        .collect();
    assert_eq!(traces.len(), 1);
}

#[test]
fn compare_summary_matches_each_trace() {
    let dir = tempfile::tempdir().unwrap();
    let (clean, noisy) = write_noisy(dir.path(), 12, 10);
    let out = bin()
        .args([
            "compare",
            "--task",
            "denoise",
            "--run",
            "svigl:iters=4,samples=6",
            "--run",
            "adam:step=0.01,iters=10,samples=6",
            "--run",
            "sgd:iters=12,samples=6",
            "--run",
            "laplace",
            "--shared-samples",
            "--final-kl-samples",
            "20",
            "--in",
        ])
        .arg(&noisy)
        .arg("--clean")
        .arg(&clean)
        .arg("--out-dir")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = read_csv(&dir.path().join("summary.csv"));
    assert_eq!(summary.len(), 5);
    for row in &summary[1..] {
        let trace = read_csv(&dir.path().join(format!("trace_{}.csv", row[0])));
        assert_eq!(trace.last().unwrap()[1], row[1], "optimizer {}", row[0]);
        let psnr: f64 = row[2].parse().unwrap();
        assert!(psnr.is_finite());
    }
}

#[test]
fn shared_samples_requires_equal_counts() {
    let dir = tempfile::tempdir().unwrap();
    let (_, noisy) = write_noisy(dir.path(), 4, 4);
    let argv = args(&[
        "compare",
        "--task",
        "denoise",
        "--run",
        "svigl:samples=4",
        "--run",
        "adam:samples=6",
        "--shared-samples",
        "--in",
        noisy.to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(parse_args(argv).unwrap_err().exit_code(), 2);
}

#[test]
fn failing_optimizer_does_not_stop_the_others() {
    let dir = tempfile::tempdir().unwrap();
    let (_, noisy) = write_noisy(dir.path(), 8, 8);
    let out = bin()
        .args([
            "compare",
            "--task",
            "denoise",
            "--run",
            "adam:step=1e300,iters=5,samples=2",
            "--run",
            "svigl:iters=2,samples=2",
            "--in",
        ])
        .arg(&noisy)
        .arg("--out-dir")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = read_csv(&dir.path().join("summary.csv"));
    assert_eq!(summary.len(), 3);
    assert_eq!(summary[1][1], "nan");
    assert!(summary[2][1].parse::<f64>().unwrap().is_finite());
    assert!(dir.path().join("trace_svigl.csv").exists());
}

#[test]
fn flow_and_lop_tasks_run_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let tex = |x: f64, y: f64| 0.5 + 0.2 * (0.45 * x + 0.1 * y).sin() + 0.15 * (0.3 * y - 0.2 * x).cos();
    let (f1, f2) = (d.join("f1.pgm"), d.join("f2.pgm"));
    io::save_pgm(&f1, &Image::from_fn(16, 12, |r, c| tex(c as f64, r as f64)), 65535).unwrap();
    io::save_pgm(&f2, &Image::from_fn(16, 12, |r, c| tex(c as f64 - 0.5, r as f64)), 65535).unwrap();
    io::save_flo(&d.join("gt.flo"), &FlowField::constant(16, 12, 0.5, 0.0)).unwrap();
    for optimizer in ["svigl", "adam", "gl-map", "laplace"] {
        let out = bin()
            .args(["flow", "--optimizer", optimizer, "--iters", "3", "--samples", "2", "--frame1"])
            .arg(&f1)
            .arg("--frame2")
            .arg(&f2)
            .arg("--gt")
            .arg(d.join("gt.flo"))
            .arg("--out")
            .arg(d.join("flow.flo"))
            .output()
            .unwrap();
        assert!(out.status.success(), "{optimizer}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stdout).contains("aepe"));
        assert_eq!(io::load_flo(&d.join("flow.flo")).unwrap().width(), 16);
    }

    let points: Vec<[f64; 3]> = (0..60)
        .map(|k| {
            let t = k as f64 * 0.1047;
            let r = 1.0 + 0.02 * (7.0 * t).sin();
            [r * t.cos(), r * t.sin(), 0.0]
        })
        .collect();
    io::save_ply(&d.join("in.ply"), &PointCloud::new(points).unwrap()).unwrap();
    let out = bin()
        .args(["lop", "--seed-count", "20", "--outer", "3", "--in"])
        .arg(d.join("in.ply"))
        .arg("--out")
        .arg(d.join("out.ply"))
        .arg("--sigma-out")
        .arg(d.join("sigma.csv"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(io::load_ply(&d.join("out.ply")).unwrap().len(), 20);
    assert_eq!(read_csv(&d.join("sigma.csv")).len(), 21);
}
