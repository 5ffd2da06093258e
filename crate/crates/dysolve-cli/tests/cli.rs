//! End-to-end tests driving the compiled binary through temp directories.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use num_complex::Complex64 as C64;

use dysolve::core::{frobenius_distance, CMat, DriveChannel, SystemConfig, SystemModel, TWO_PI};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dysolve"))
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin()
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary failed to launch")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed\nstdout:\n{}\nstderr:\n{}",
        stdout(out),
        stderr(out)
    );
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("terminated by signal")
}

/// Pulls a numeric value out of a "key = value" stdout line.
fn field(out: &Output, key: &str) -> f64 {
    let text = stdout(out);
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix(&format!("{key} = ")) {
            return rest
                .split_whitespace()
                .next()
                .unwrap()
                .parse()
                .unwrap_or_else(|e| panic!("bad {key} value {rest:?}: {e}"));
        }
    }
    panic!("no `{key} = ...` line in:\n{text}");
}

fn resonant_qubit() -> SystemModel {
    let splitting = TWO_PI * 5.0;
    let mut x = CMat::zeros((2, 2));
    x[[0, 1]] = C64::new(1.0, 0.0);
    x[[1, 0]] = C64::new(1.0, 0.0);
    SystemModel::new(
        vec![0.0, splitting],
        vec![DriveChannel { dipole: x, carrier: splitting }],
    )
    .unwrap()
}

fn write_qubit_model(dir: &Path) -> PathBuf {
    let path = dir.join("qubit.json");
    let cfg = SystemConfig::from_model(&resonant_qubit());
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

/// Pulse JSON in the interface units: MHz amplitudes, GHz bandwidth.
fn write_pulses(
    dir: &Path,
    name: &str,
    pixels_mhz: &[[f64; 2]],
    pixel_width_ns: f64,
    subpixels: usize,
    bandwidth_ghz: Option<f64>,
) -> PathBuf {
    let path = dir.join(name);
    let cfg = serde_json::json!([{
        "pixels": pixels_mhz,
        "pixel_width_ns": pixel_width_ns,
        "subpixels_per_pixel": subpixels,
        "bandwidth_ghz": bandwidth_ghz,
        "interpolation": "constant",
    }]);
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn read_propagator(path: &Path) -> CMat {
    let bytes = std::fs::read(path).unwrap();
    assert_eq!(&bytes[..4], b"DYSU", "bad magic");
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    assert_eq!(crc32fast::hash(&bytes[..bytes.len() - 4]), stored, "bad checksum");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    assert_eq!(bytes.len(), 16 + n * n * 16);
    let mut m = CMat::zeros((n, n));
    let mut off = 12;
    for i in 0..n {
        for j in 0..n {
            let re = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
            let im = f64::from_le_bytes(bytes[off + 8..off + 16].try_into().unwrap());
            m[[i, j]] = C64::new(re, im);
            off += 16;
        }
    }
    m
}

#[test]
fn prepare_reports_operator_count_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &["model", "benchmark", "--dim", "4", "--seed", "7", "--out", "m.json",
          "--pulses-out", "p.json"],
    );
    assert_ok(&out);

    let prep = run_in(
        dir.path(),
        &["prepare", "--model", "m.json", "--dt", "2.5", "--order", "4",
          "--cache", "a.cache"],
    );
    assert_ok(&prep);
    // one channel at order 4: 2 + 4 + 8 + 16 chains plus the free term
    assert!(
        stdout(&prep).contains("R = 31"),
        "unexpected operator count:\n{}",
        stdout(&prep)
    );

    let again = run_in(
        dir.path(),
        &["prepare", "--model", "m.json", "--dt", "2.5", "--order", "4",
          "--cache", "b.cache"],
    );
    assert_ok(&again);
    let a = std::fs::read(dir.path().join("a.cache")).unwrap();
    let b = std::fs::read(dir.path().join("b.cache")).unwrap();
    assert_eq!(a, b, "cache bytes differ between identical prepare runs");
}

#[test]
fn prepare_rejects_order_five() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&run_in(
        dir.path(),
        &["model", "benchmark", "--dim", "3", "--out", "m.json", "--pulses-out", "p.json"],
    ));
    let out = run_in(
        dir.path(),
        &["prepare", "--model", "m.json", "--dt", "1.0", "--order", "5"],
    );
    assert_eq!(exit_code(&out), 2, "stderr:\n{}", stderr(&out));
    assert!(
        stderr(&out).contains("order"),
        "stderr does not mention the order:\n{}",
        stderr(&out)
    );
}

#[test]
fn propagate_zero_pulse_reproduces_free_evolution() {
    let dir = tempfile::tempdir().unwrap();
    let model_path = write_qubit_model(dir.path());
    let pulse_path =
        write_pulses(dir.path(), "p.json", &[[0.0, 0.0]; 10], 1.0, 4, None);
    let out = run_in(
        dir.path(),
        &["propagate", "--model", model_path.to_str().unwrap(), "--pulses",
          pulse_path.to_str().unwrap(), "--out", "u.bin"],
    );
    assert_ok(&out);
    let u = read_propagator(&dir.path().join("u.bin"));
    let drift = resonant_qubit().drift_unitary(10.0);
    assert!(
        frobenius_distance(&u, &drift) < 1e-12,
        "zero pulse deviates from free evolution by {:.3e}",
        frobenius_distance(&u, &drift)
    );
}

#[test]
fn finer_subpixels_approach_the_reference() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&run_in(
        dir.path(),
        &["model", "benchmark", "--dim", "5", "--seed", "3", "--duration", "100",
          "--pixels", "5", "--subpixels", "5", "--out", "m.json",
          "--pulses-out", "p.json"],
    ));
    assert_ok(&run_in(
        dir.path(),
        &["propagate", "--model", "m.json", "--pulses", "p.json",
          "--subpixels", "32", "--out", "ref.bin"],
    ));
    let coarse = run_in(
        dir.path(),
        &["propagate", "--model", "m.json", "--pulses", "p.json",
          "--subpixels", "1", "--out", "a.bin", "--reference", "ref.bin"],
    );
    assert_ok(&coarse);
    let fine = run_in(
        dir.path(),
        &["propagate", "--model", "m.json", "--pulses", "p.json",
          "--subpixels", "8", "--out", "b.bin", "--reference", "ref.bin"],
    );
    assert_ok(&fine);
    let d_coarse = field(&coarse, "distance");
    let d_fine = field(&fine, "distance");
    assert!(
        d_fine < d_coarse,
        "refining subpixels did not reduce the distance: {d_coarse:.3e} -> {d_fine:.3e}"
    );
}

#[test]
fn optimize_reaches_x90_and_warm_start_reproduces_fidelity() {
    let dir = tempfile::tempdir().unwrap();
    let model_path = write_qubit_model(dir.path());
    let pulse_path =
        write_pulses(dir.path(), "p.json", &[[4.0, 0.0]; 10], 1.0, 4, Some(1.0));
    let opt = run_in(
        dir.path(),
        &["optimize", "--model", model_path.to_str().unwrap(), "--pulses",
          pulse_path.to_str().unwrap(), "--target", "x90", "--epsilon", "0.3",
          "--max-iters", "500", "--grad-tol", "1e-9", "--infid-tol", "1e-9",
          "--trace", "trace.csv", "--out", "opt.json"],
    );
    assert_ok(&opt);
    let fidelity = field(&opt, "fidelity");
    assert!(
        1.0 - fidelity < 1e-4,
        "optimizer stopped at infidelity {:.3e}",
        1.0 - fidelity
    );

    let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next(), Some("#schema=1"));
    assert_eq!(lines.next(), Some("iteration,fidelity,step,grad_norm"));
    let fidelities: Vec<f64> = lines
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(fidelities.len() >= 2, "trace has no iterations");
    for w in fidelities.windows(2) {
        assert!(w[1] >= w[0], "trace fidelity decreased: {} -> {}", w[0], w[1]);
    }

    let eval = run_in(
        dir.path(),
        &["optimize", "--model", model_path.to_str().unwrap(), "--pulses",
          "opt.json", "--target", "x90", "--evaluate-only"],
    );
    assert_ok(&eval);
    let warm = field(&eval, "fidelity");
    assert!(
        (warm - fidelity).abs() < 1e-9,
        "warm-start fidelity {warm} disagrees with optimizer output {fidelity}"
    );
}

#[test]
fn gradcheck_passes_and_corrupt_filter_is_caught() {
    let dir = tempfile::tempdir().unwrap();
    let model_path = write_qubit_model(dir.path());
    let pulse_path =
        write_pulses(dir.path(), "p.json", &[[4.0, 1.0], [2.0, -3.0], [5.0, 0.5]], 2.0, 4, Some(0.5));
    let pass = run_in(
        dir.path(),
        &["gradcheck", "--model", model_path.to_str().unwrap(), "--pulses",
          pulse_path.to_str().unwrap(), "--target", "x90"],
    );
    assert_ok(&pass);
    assert!(stdout(&pass).contains("PASS"), "no PASS line:\n{}", stdout(&pass));

    let fail = run_in(
        dir.path(),
        &["gradcheck", "--model", model_path.to_str().unwrap(), "--pulses",
          pulse_path.to_str().unwrap(), "--target", "x90", "--corrupt-filter"],
    );
    assert_eq!(exit_code(&fail), 4, "stderr:\n{}", stderr(&fail));
    assert!(stdout(&fail).contains("FAIL"), "no FAIL line:\n{}", stdout(&fail));
}

#[test]
fn benchmark_model_generation_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["x", "y"] {
        assert_ok(&run_in(
            dir.path(),
            &["model", "benchmark", "--dim", "6", "--seed", "11", "--drives", "2",
              "--out", &format!("{name}.json"),
              "--pulses-out", &format!("{name}_p.json")],
        ));
    }
    let mx = std::fs::read(dir.path().join("x.json")).unwrap();
    let my = std::fs::read(dir.path().join("y.json")).unwrap();
    assert_eq!(mx, my, "model JSON differs between identical seeds");
    let px = std::fs::read(dir.path().join("x_p.json")).unwrap();
    let py = std::fs::read(dir.path().join("y_p.json")).unwrap();
    assert_eq!(px, py, "pulse JSON differs between identical seeds");

    assert_ok(&run_in(
        dir.path(),
        &["model", "benchmark", "--dim", "6", "--seed", "12", "--drives", "2",
          "--out", "z.json", "--pulses-out", "z_p.json"],
    ));
    let mz = std::fs::read(dir.path().join("z.json")).unwrap();
    assert_ne!(mx, mz, "different seeds produced identical models");

    // generated artifacts feed straight into propagation
    assert_ok(&run_in(
        dir.path(),
        &["propagate", "--model", "x.json", "--pulses", "x_p.json", "--out", "u.bin"],
    ));
}

#[test]
fn missing_model_file_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let pulse_path = write_pulses(dir.path(), "p.json", &[[1.0, 0.0]], 1.0, 1, None);
    let out = run_in(
        dir.path(),
        &["propagate", "--model", "nosuch.json", "--pulses",
          pulse_path.to_str().unwrap(), "--out", "u.bin"],
    );
    assert_eq!(exit_code(&out), 2, "stderr:\n{}", stderr(&out));
}

#[test]
fn benchmark_sweep_writes_deterministic_error_table() {
    let dir = tempfile::tempdir().unwrap();
    for sub in ["a", "b"] {
        let out = run_in(
            dir.path(),
            &["benchmark", "--seeds", "1", "--orders", "2,3", "--subpixels", "5,10",
              "--dim", "3", "--duration", "50", "--pixels", "5",
              "--out-dir", sub],
        );
        assert_ok(&out);
    }
    let ea = std::fs::read(dir.path().join("a/benchmark_error.csv")).unwrap();
    let eb = std::fs::read(dir.path().join("b/benchmark_error.csv")).unwrap();
    assert_eq!(ea, eb, "error CSV is not reproducible");
    let text = String::from_utf8(ea).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("#schema=1"));
    assert_eq!(lines.next(), Some("order,drives,subpixels,mean_error"));
    assert_eq!(lines.count(), 4, "expected one row per (order, subpixels) pair");

    assert!(dir.path().join("a/benchmark_timing.csv").exists());
    let meta: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("a/metadata.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(meta["seeds"], 1);
    assert!(meta["entries_per_order"].is_array());
}

#[test]
fn cross_resonance_model_and_target_are_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &["model", "cross-resonance", "--out", "cr.json", "--target-out", "t.json"],
    );
    assert_ok(&out);
    let cfg: SystemConfig = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("cr.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(cfg.eigenvalues_ghz.len(), 25, "five levels per transmon");
    assert_eq!(cfg.channels.len(), 2, "one drive line per transmon");

    let target: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("t.json")).unwrap(),
    )
    .unwrap();
    let indices: Vec<usize> = target["indices"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap() as usize)
        .collect();
    assert_eq!(indices.len(), 4);
    let mut sorted = indices.clone();
    sorted.sort_unstable();
    sorted.dedup();
    assert_eq!(sorted.len(), 4, "computational indices repeat");
    assert!(sorted.iter().all(|&i| i < 25));
    assert_eq!(target["unitary"].as_array().unwrap().len(), 16);
}

#[test]
fn config_file_supplies_fields_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&run_in(
        dir.path(),
        &["model", "benchmark", "--dim", "4", "--seed", "7", "--out", "m.json",
          "--pulses-out", "p.json"],
    ));
    std::fs::write(
        dir.path().join("job.json"),
        serde_json::json!({
            "model": "m.json",
            "dt": 2.5,
            "order": 4,
            "cache": "from_config.cache",
        })
        .to_string(),
    )
    .unwrap();

    // all parameters sourced from the config file
    let out = run_in(dir.path(), &["prepare", "--config", "job.json"]);
    assert_ok(&out);
    assert!(stdout(&out).contains("R = 31"), "stdout:\n{}", stdout(&out));
    assert!(dir.path().join("from_config.cache").exists());

    // a flag beats the config value: order 2 keeps 2 + 4 chains plus the free term
    let out = run_in(
        dir.path(),
        &["prepare", "--config", "job.json", "--order", "2", "--cache", "o2.cache"],
    );
    assert_ok(&out);
    assert!(stdout(&out).contains("R = 7"), "stdout:\n{}", stdout(&out));

    // unknown keys are configuration errors, not silent typos
    std::fs::write(
        dir.path().join("typo.json"),
        serde_json::json!({"model": "m.json", "dt": 2.5, "odrer": 3}).to_string(),
    )
    .unwrap();
    let out = run_in(dir.path(), &["prepare", "--config", "typo.json"]);
    assert_eq!(exit_code(&out), 2, "stderr:\n{}", stderr(&out));
    assert!(stderr(&out).contains("odrer"), "stderr:\n{}", stderr(&out));

    // a missing required field names the flag in the error
    std::fs::write(
        dir.path().join("nodt.json"),
        serde_json::json!({"model": "m.json"}).to_string(),
    )
    .unwrap();
    let out = run_in(dir.path(), &["prepare", "--config", "nodt.json"]);
    assert_eq!(exit_code(&out), 2, "stderr:\n{}", stderr(&out));
    assert!(stderr(&out).contains("--dt"), "stderr:\n{}", stderr(&out));
}
