//! The `ratiotune` binary, driven as a subprocess.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ratiotune::io::{load_raw, write_raw};
use ratiotune::report::{from_json, read_csv};
use ratiotune::synthetic::{drifting_series, smooth_field};
use ratiotune::ElementKind;

fn ratiotune(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ratiotune"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Two fields of three 32x32 steps each, as `{field}_{step}.f32`.
fn write_series(dir: &Path) -> String {
    for (name, seed) in [("temp", 1u64), ("wind", 2)] {
        let series = drifting_series(name, &smooth_field(&[32, 32], seed), 3, 0.05);
        for d in series.steps() {
            write_raw(dir.join(format!("{name}_{}.f32", d.time_step())), d).unwrap();
        }
    }
    dir.join("{field}_{step}.f32").display().to_string()
}

#[test]
fn tune_writes_one_row_per_step() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_series(dir.path());
    let out = ratiotune(&["tune", "--input", &input, "--shape", "32,32", "--target", "6", "--seed", "1", "--trace"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = from_json(&stdout(&out)).unwrap();
    assert_eq!(report.rows.len(), 6);
    assert!(report.rows.iter().all(|r| r.feasible && r.error.is_none()));
    assert!(report.rows.iter().all(|r| r.psnr.is_some() && r.max_abs_error.unwrap() <= r.error_bound));
    // one trace per training step, and every field trains at its first step
    let traces = report.traces.unwrap();
    assert_eq!(traces.len(), report.rows.iter().filter(|r| r.retrained).count());
    assert_eq!(traces.iter().filter(|t| t.time_step == 0).count(), 2);
    assert!(traces.iter().all(|t| !t.regions.is_empty()));
}

#[test]
fn infeasible_target_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_series(dir.path());
    // at most about 32x for float32 data under any bound
    let out = ratiotune(&["tune", "--input", &input, "--shape", "32,32", "--target", "5000", "--max-iters", "5"]);
    assert_eq!(out.status.code(), Some(3));
    let report = from_json(&stdout(&out)).unwrap();
    assert!(report.rows.iter().all(|r| !r.feasible));
}

#[test]
fn bad_input_exits_with_1() {
    let out = ratiotune(&["tune", "--input", "/nonexistent/data.f32", "--shape", "8", "--target", "4"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    let out = ratiotune(&["tune", "--input", "x.f32", "--shape", "8", "--target", "0.5"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_series(dir.path());
    let config = dir.path().join("run.conf");
    let report = dir.path().join("out.csv");
    fs::write(
        &config,
        format!(
            "# tuning settings\ninput = {input}\nshape = 32,32\ntarget = 4\nmax_iters = 30\nreport = {}\n",
            report.display()
        ),
    )
    .unwrap();
    let out = ratiotune(&["tune", "--config", config.to_str().unwrap(), "--target", "7", "--no-timings"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_csv(fs::File::open(&report).unwrap()).unwrap();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.rho_target == 7.0 && r.elapsed_seconds == 0.0));

    fs::write(&config, "target = 4\ncolour = blue\n").unwrap();
    let out = ratiotune(&["tune", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn sweep_prints_a_ratio_per_bound() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.f32");
    write_raw(&path, &smooth_field(&[4096], 3)).unwrap();
    let out = ratiotune(&[
        "sweep", "--input", path.to_str().unwrap(), "--shape", "4096", "--codec", "bt",
        "--lo", "1e-4", "--hi", "1e-1", "--points", "4", "--log",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "error_bound,ratio");
    let ratios: Vec<f64> = lines[1..].iter().map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(ratios.len(), 4);
    assert!(ratios.windows(2).all(|w| w[0] <= w[1]), "{ratios:?}");
}

#[test]
fn compress_decompress_and_metrics_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let original = dir.path().join("f.f32");
    let packed = dir.path().join("f.rtc");
    let decoded = dir.path().join("g.f32");
    let field = smooth_field(&[40, 50], 4);
    write_raw(&original, &field).unwrap();
    let bound = "0.001";
    for codec in ["pq", "bt"] {
        let out = ratiotune(&[
            "compress", "--input", original.to_str().unwrap(), "--shape", "40,50", "--codec", codec,
            "--bound", bound, "--output", packed.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        let out = ratiotune(&["decompress", "--input", packed.to_str().unwrap(), "--output", decoded.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        let back = load_raw(&decoded, &[40, 50], ElementKind::F32).unwrap();
        let err = field
            .values()
            .iter()
            .zip(back.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err <= 0.001, "{codec}: {err}");

        let out = ratiotune(&[
            "metrics", "--original", original.to_str().unwrap(), "--decoded", decoded.to_str().unwrap(),
            "--shape", "40,50",
        ]);
        assert_eq!(out.status.code(), Some(0));
        let m: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
        assert!(m["psnr"].as_f64().unwrap() > 40.0, "{m}");
    }
}
