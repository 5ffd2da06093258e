//! Command line for the dysolve library: model generation, cache
//! preparation, propagation, benchmark sweeps, gradient checking, and
//! GRAPE pulse optimization.
//!
//! Every subcommand also accepts `--config <path>` pointing at a JSON
//! object whose keys mirror the long flags (hyphens become underscores);
//! explicit flags override config values.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numeric failure,
//! 4 verification failure (corrupt or stale artifacts, failed checks).

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array2;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use dysolve::control::{
    fidelity_gradient, fidelity_gradient_with_filters, grape_optimize, pulse_fidelity,
    to_drift_frame, z_corrected_fidelity, Frame, GateTarget, GrapeSettings, StepPolicy,
};
use dysolve::core::{
    cmat_from_pairs, cmat_to_pairs, frobenius_distance, unitarity_defect, CMat, SystemConfig,
    SystemModel,
};
use dysolve::dyson::DysonExpansion;
use dysolve::models::{
    build_benchmark_ensemble, build_cross_resonance, calibrate_transmon, BenchmarkEnsembleSpec,
    CoupledSpec,
};
use dysolve::propagate::{fold_steps, step_propagators};
use dysolve::pulses::{filter_matrix, subpixel_amplitudes, Interpolation, PulseConfig, PulseSpec};
use dysolve::Error as LibError;

const CLI_MAX_ORDER: usize = 4;

// ---------------------------------------------------------------- errors

enum CliError {
    Config(String),
    Numeric(String),
    Verification(String),
}

type CliResult<T> = Result<T, CliError>;

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Verification(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Numeric(m) | CliError::Verification(m) => m,
        }
    }
}

impl From<LibError> for CliError {
    fn from(e: LibError) -> Self {
        let msg = e.to_string();
        match e {
            LibError::NoAscentDirection { .. }
            | LibError::NoConvergence(_)
            | LibError::CutoffTooSmall(_)
            | LibError::HybridizationAmbiguity(_)
            | LibError::StepLimitExceeded { .. }
            | LibError::ToleranceNotMet(_)
            | LibError::QuadratureNotConverged(_) => CliError::Numeric(msg),
            LibError::FingerprintMismatch
            | LibError::CorruptCache(_)
            | LibError::VersionMismatch { .. } => CliError::Verification(msg),
            _ => CliError::Config(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

fn require<T>(value: Option<T>, what: &str) -> CliResult<T> {
    value.ok_or_else(|| {
        CliError::Config(format!("missing {what}: pass the flag or set it in --config"))
    })
}

// ------------------------------------------------------------ interface

#[derive(Parser)]
#[command(
    name = "dysolve",
    version,
    about = "Semi-analytic propagators and pulse optimization for driven quantum systems"
)]
struct Cli {
    /// Worker threads for parallel sections (default: all logical cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate system models and companion files.
    #[command(subcommand)]
    Model(ModelCommand),
    /// Build the amplitude-independent operator cache for a system.
    Prepare(PrepareArgs),
    /// Contract a prepared expansion against a pulse into a propagator.
    Propagate(PropagateArgs),
    /// Accuracy and timing sweeps over subpixel counts and orders.
    Benchmark(BenchmarkArgs),
    /// Gradient-ascent pulse optimization toward a gate target.
    Optimize(OptimizeArgs),
    /// Compare analytic pulse gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Subcommand)]
enum ModelCommand {
    /// Random dense system with designated resonant transitions.
    Benchmark(ModelBenchmarkArgs),
    /// Calibrated two-transmon cross-resonance pair with its ZX90 target.
    CrossResonance(ModelCrArgs),
}

#[derive(Args, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ModelBenchmarkArgs {
    /// JSON file carrying these fields; explicit flags win.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Ensemble seed [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Hilbert-space dimension [default: 25].
    #[arg(long)]
    dim: Option<usize>,
    /// Number of drive lines [default: 1].
    #[arg(long)]
    drives: Option<usize>,
    /// Total pulse duration in ns [default: 100].
    #[arg(long)]
    duration: Option<f64>,
    /// Pixel count [default: 5].
    #[arg(long)]
    pixels: Option<usize>,
    /// Total subpixels over the duration, split evenly across pixels
    /// [default: 40].
    #[arg(long)]
    subpixels: Option<usize>,
    /// Output path for the system JSON [default: model.json].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output path for the pulse JSON [default: pulses.json].
    #[arg(long)]
    pulses_out: Option<PathBuf>,
}

impl ModelBenchmarkArgs {
    fn merged(self) -> CliResult<Self> {
        let Some(path) = self.config else { return Ok(self) };
        let cfg: Self = load_json(&path)?;
        Ok(Self {
            config: None,
            seed: self.seed.or(cfg.seed),
            dim: self.dim.or(cfg.dim),
            drives: self.drives.or(cfg.drives),
            duration: self.duration.or(cfg.duration),
            pixels: self.pixels.or(cfg.pixels),
            subpixels: self.subpixels.or(cfg.subpixels),
            out: self.out.or(cfg.out),
            pulses_out: self.pulses_out.or(cfg.pulses_out),
        })
    }
}

#[derive(Args, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ModelCrArgs {
    /// JSON file carrying these fields; explicit flags win.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Control qubit frequency in GHz [default: 5.1].
    #[arg(long, allow_hyphen_values = true)]
    control_freq: Option<f64>,
    /// Control qubit anharmonicity in GHz, negative [default: -0.355].
    #[arg(long, allow_hyphen_values = true)]
    control_alpha: Option<f64>,
    /// Target qubit frequency in GHz [default: 4.9].
    #[arg(long, allow_hyphen_values = true)]
    target_freq: Option<f64>,
    /// Target qubit anharmonicity in GHz, negative [default: -0.352].
    #[arg(long, allow_hyphen_values = true)]
    target_alpha: Option<f64>,
    /// Charge-charge coupling in GHz [default: 0.00429].
    #[arg(long)]
    coupling: Option<f64>,
    /// Levels kept per transmon [default: 5].
    #[arg(long)]
    levels: Option<usize>,
    /// Output path for the system JSON [default: model.json].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output path for the ZX90 gate-target JSON [default: target.json].
    #[arg(long)]
    target_out: Option<PathBuf>,
}

impl ModelCrArgs {
    fn merged(self) -> CliResult<Self> {
        let Some(path) = self.config else { return Ok(self) };
        let cfg: Self = load_json(&path)?;
        Ok(Self {
            config: None,
            control_freq: self.control_freq.or(cfg.control_freq),
            control_alpha: self.control_alpha.or(cfg.control_alpha),
            target_freq: self.target_freq.or(cfg.target_freq),
            target_alpha: self.target_alpha.or(cfg.target_alpha),
            coupling: self.coupling.or(cfg.coupling),
            levels: self.levels.or(cfg.levels),
            out: self.out.or(cfg.out),
            target_out: self.target_out.or(cfg.target_out),
        })
    }
}

#[derive(Args, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct PrepareArgs {
    /// JSON file carrying these fields; explicit flags win.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// System JSON path (required).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Subpixel width in ns (required).
    #[arg(long)]
    dt: Option<f64>,
    /// Truncation order, at most 4 [default: 4].
    #[arg(long)]
    order: Option<usize>,
    /// Also prepare the envelope-slope operators for linear interpolation.
    #[arg(long)]
    slopes: bool,
    /// Cache output path (default: auto-named under DYSOLVE_CACHE_DIR).
    #[arg(long)]
    cache: Option<PathBuf>,
}

impl PrepareArgs {
    fn merged(self) -> CliResult<Self> {
        let Some(path) = self.config else { return Ok(self) };
        let cfg: Self = load_json(&path)?;
        Ok(Self {
            config: None,
            model: self.model.or(cfg.model),
            dt: self.dt.or(cfg.dt),
            order: self.order.or(cfg.order),
            slopes: self.slopes || cfg.slopes,
            cache: self.cache.or(cfg.cache),
        })
    }
}

#[derive(Args, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct PropagateArgs {
    /// JSON file carrying these fields; explicit flags win.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// System JSON path (required).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Pulse JSON path (required).
    #[arg(long)]
    pulses: Option<PathBuf>,
    /// Prepared cache file; omitted, the expansion is built in memory.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Truncation order, caps a deeper cache [default: cache depth or 4].
    #[arg(long)]
    order: Option<usize>,
    /// Override subpixels per pixel on every channel.
    #[arg(long)]
    subpixels: Option<usize>,
    /// Propagator output path [default: propagator.bin].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Reference propagator file for a distance printout.
    #[arg(long)]
    reference: Option<PathBuf>,
}

impl PropagateArgs {
    fn merged(self) -> CliResult<Self> {
        let Some(path) = self.config else { return Ok(self) };
        let cfg: Self = load_json(&path)?;
        Ok(Self {
            config: None,
            model: self.model.or(cfg.model),
            pulses: self.pulses.or(cfg.pulses),
            cache: self.cache.or(cfg.cache),
            order: self.order.or(cfg.order),
            subpixels: self.subpixels.or(cfg.subpixels),
            out: self.out.or(cfg.out),
            reference: self.reference.or(cfg.reference),
        })
    }
}

#[derive(Args, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct BenchmarkArgs {
    /// JSON file carrying these fields; explicit flags win.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Number of random systems averaged, seeds 0..n [default: 3].
    #[arg(long)]
    seeds: Option<u64>,
    /// Truncation orders to sweep [default: 2,3,4].
    #[arg(long, value_delimiter = ',')]
    orders: Option<Vec<usize>>,
    /// Drive counts to sweep [default: 1].
    #[arg(long, value_delimiter = ',')]
    drives: Option<Vec<usize>>,
    /// Total subpixel counts to sweep [default: 10,20,40,80].
    #[arg(long, value_delimiter = ',')]
    subpixels: Option<Vec<usize>>,
    /// Hilbert-space dimension [default: 25].
    #[arg(long)]
    dim: Option<usize>,
    /// Pulse duration in ns [default: 100].
    #[arg(long)]
    duration: Option<f64>,
    /// Pixel count [default: 5].
    #[arg(long)]
    pixels: Option<usize>,
    /// Reference propagator: highest order at 10x the densest grid, or the
    /// adaptive integrator [default: self].
    #[arg(long, value_enum)]
    reference: Option<ReferenceKind>,
    /// Output directory [default: bench].
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl BenchmarkArgs {
    fn merged(self) -> CliResult<Self> {
        let Some(path) = self.config else { return Ok(self) };
        let cfg: Self = load_json(&path)?;
        Ok(Self {
            config: None,
            seeds: self.seeds.or(cfg.seeds),
            orders: self.orders.or(cfg.orders),
            drives: self.drives.or(cfg.drives),
            subpixels: self.subpixels.or(cfg.subpixels),
            dim: self.dim.or(cfg.dim),
            duration: self.duration.or(cfg.duration),
            pixels: self.pixels.or(cfg.pixels),
            reference: self.reference.or(cfg.reference),
            out_dir: self.out_dir.or(cfg.out_dir),
        })
    }
}

#[derive(ValueEnum, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
enum ReferenceKind {
    #[value(name = "self")]
    #[serde(rename = "self")]
    SelfRef,
    #[serde(rename = "oracle")]
    Oracle,
}

#[derive(ValueEnum, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum FrameArg {
    Lab,
    Drift,
}

impl From<FrameArg> for Frame {
    fn from(f: FrameArg) -> Frame {
        match f {
            FrameArg::Lab => Frame::Lab,
            FrameArg::Drift => Frame::Drift,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum PolicyArg {
    Fixed,
    Backtracking,
}

#[derive(Args, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct OptimizeArgs {
    /// JSON file carrying these fields; explicit flags win.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// System JSON path (required).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Initial pulses (required; feed a previous output back in to warm
    /// start).
    #[arg(long)]
    pulses: Option<PathBuf>,
    /// "x90", "zx90", or a path to a gate-target JSON (required).
    #[arg(long)]
    target: Option<String>,
    /// Subspace indices for the named targets.
    #[arg(long, value_delimiter = ',')]
    subspace: Option<Vec<usize>>,
    /// Fidelity frame [default: drift].
    #[arg(long, value_enum)]
    frame: Option<FrameArg>,
    /// Prepared cache file.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Truncation order [default: cache depth or 4].
    #[arg(long)]
    order: Option<usize>,
    /// Initial ascent step [default: 1e-3].
    #[arg(long)]
    epsilon: Option<f64>,
    /// Step policy [default: backtracking].
    #[arg(long, value_enum)]
    policy: Option<PolicyArg>,
    /// Iteration cap [default: 500].
    #[arg(long)]
    max_iters: Option<usize>,
    /// Stop when the gradient norm falls below this [default: 1e-10].
    #[arg(long)]
    grad_tol: Option<f64>,
    /// Stop when 1 - fidelity falls below this [default: 1e-6].
    #[arg(long)]
    infid_tol: Option<f64>,
    /// Evaluate the fidelity of the input pulses and stop.
    #[arg(long)]
    evaluate_only: bool,
    /// Also report the fidelity maximized over pre/post Z rotations
    /// (two-qubit targets only).
    #[arg(long)]
    z_corrected: bool,
    /// Iteration trace CSV path [default: trace.csv].
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Optimized pulse JSON path [default: pulses_out.json].
    #[arg(long)]
    out: Option<PathBuf>,
}

impl OptimizeArgs {
    fn merged(self) -> CliResult<Self> {
        let Some(path) = self.config else { return Ok(self) };
        let cfg: Self = load_json(&path)?;
        Ok(Self {
            config: None,
            model: self.model.or(cfg.model),
            pulses: self.pulses.or(cfg.pulses),
            target: self.target.or(cfg.target),
            subspace: self.subspace.or(cfg.subspace),
            frame: self.frame.or(cfg.frame),
            cache: self.cache.or(cfg.cache),
            order: self.order.or(cfg.order),
            epsilon: self.epsilon.or(cfg.epsilon),
            policy: self.policy.or(cfg.policy),
            max_iters: self.max_iters.or(cfg.max_iters),
            grad_tol: self.grad_tol.or(cfg.grad_tol),
            infid_tol: self.infid_tol.or(cfg.infid_tol),
            evaluate_only: self.evaluate_only || cfg.evaluate_only,
            z_corrected: self.z_corrected || cfg.z_corrected,
            trace: self.trace.or(cfg.trace),
            out: self.out.or(cfg.out),
        })
    }
}

#[derive(Args, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GradcheckArgs {
    /// JSON file carrying these fields; explicit flags win.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// System JSON path (required).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Pulse JSON path (required).
    #[arg(long)]
    pulses: Option<PathBuf>,
    /// "x90", "zx90", or a path to a gate-target JSON (required).
    #[arg(long)]
    target: Option<String>,
    /// Subspace indices for the named targets.
    #[arg(long, value_delimiter = ',')]
    subspace: Option<Vec<usize>>,
    /// Fidelity frame [default: drift].
    #[arg(long, value_enum)]
    frame: Option<FrameArg>,
    /// Truncation order [default: 4].
    #[arg(long)]
    order: Option<usize>,
    /// Central-difference step [default: 1e-6].
    #[arg(long)]
    fd_step: Option<f64>,
    /// Maximum tolerated relative disagreement [default: 1e-5].
    #[arg(long)]
    threshold: Option<f64>,
    /// Scale the gradient-path filter matrices away from the propagation
    /// path (negative control: the check must fail).
    #[arg(long, hide = true)]
    corrupt_filter: bool,
}

impl GradcheckArgs {
    fn merged(self) -> CliResult<Self> {
        let Some(path) = self.config else { return Ok(self) };
        let cfg: Self = load_json(&path)?;
        Ok(Self {
            config: None,
            model: self.model.or(cfg.model),
            pulses: self.pulses.or(cfg.pulses),
            target: self.target.or(cfg.target),
            subspace: self.subspace.or(cfg.subspace),
            frame: self.frame.or(cfg.frame),
            order: self.order.or(cfg.order),
            fd_step: self.fd_step.or(cfg.fd_step),
            threshold: self.threshold.or(cfg.threshold),
            corrupt_filter: self.corrupt_filter || cfg.corrupt_filter,
        })
    }
}

// ------------------------------------------------------------------ io

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn write_bytes_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = tempfile::NamedTempFile::new_in(dir.unwrap_or(Path::new(".")))?;
    tmp.write_all(bytes)?;
    tmp.persist(path).map_err(|e| CliError::Config(e.to_string()))?;
    Ok(())
}

fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Config(e.to_string()))?;
    text.push('\n');
    write_bytes_atomic(path, text.as_bytes())
}

fn load_model(path: &Path) -> CliResult<SystemModel> {
    let cfg: SystemConfig = load_json(path)?;
    Ok(cfg.to_model()?)
}

fn load_pulses(path: &Path) -> CliResult<Vec<PulseSpec>> {
    let cfgs: Vec<PulseConfig> = load_json(path)?;
    let mut specs = Vec::with_capacity(cfgs.len());
    for c in &cfgs {
        specs.push(c.to_spec()?);
    }
    if specs.is_empty() {
        return Err(CliError::Config(format!("{}: no pulse channels", path.display())));
    }
    Ok(specs)
}

/// Propagator files: "DYSU", format version, dimension, then the matrix in
/// the cache payload layout (row-major re/im f64 pairs), CRC-32 trailer.
const MAT_MAGIC: &[u8; 4] = b"DYSU";

fn write_matrix(path: &Path, m: &CMat) -> CliResult<()> {
    let n = m.nrows() as u32;
    let mut bytes = Vec::with_capacity(16 + m.len() * 16);
    bytes.extend_from_slice(MAT_MAGIC);
    bytes.extend_from_slice(&1u32.to_le_bytes());
    bytes.extend_from_slice(&n.to_le_bytes());
    for v in m.iter() {
        bytes.extend_from_slice(&v.re.to_le_bytes());
        bytes.extend_from_slice(&v.im.to_le_bytes());
    }
    let crc = crc32fast::hash(&bytes);
    bytes.extend_from_slice(&crc.to_le_bytes());
    write_bytes_atomic(path, &bytes)
}

fn read_matrix(path: &Path) -> CliResult<CMat> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let bad = |m: &str| CliError::Verification(format!("{}: {m}", path.display()));
    if bytes.len() < 16 || &bytes[..4] != MAT_MAGIC {
        return Err(bad("not a propagator file"));
    }
    let crc_stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    if crc32fast::hash(&bytes[..bytes.len() - 4]) != crc_stored {
        return Err(bad("checksum mismatch"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != 1 {
        return Err(bad(&format!("unsupported format version {version}")));
    }
    let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let need = 16 + n * n * 16;
    if bytes.len() != need {
        return Err(bad("truncated matrix payload"));
    }
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
    Ok(m)
}

/// On-disk gate target: row-major complex entries plus subspace indices.
#[derive(Serialize, Deserialize)]
struct TargetConfig {
    unitary: Vec<[f64; 2]>,
    indices: Vec<usize>,
}

impl TargetConfig {
    fn to_target(&self) -> CliResult<GateTarget> {
        let d = self.indices.len();
        let u = cmat_from_pairs(d, &self.unitary)?;
        Ok(GateTarget::new(u, self.indices.clone())?)
    }

    fn from_target(t: &GateTarget) -> Self {
        Self { unitary: cmat_to_pairs(&t.unitary), indices: t.indices.clone() }
    }
}

fn parse_target(name: &str, subspace: &Option<Vec<usize>>) -> CliResult<GateTarget> {
    match name.to_ascii_lowercase().as_str() {
        "x90" => {
            let idx = subspace.clone().unwrap_or_else(|| vec![0, 1]);
            if idx.len() != 2 {
                return Err(CliError::Config("x90 needs a 2-index subspace".into()));
            }
            Ok(GateTarget::x90(idx[0], idx[1]))
        }
        "zx90" => {
            let idx = subspace.clone().unwrap_or_else(|| vec![0, 1, 2, 3]);
            Ok(GateTarget::new(dysolve::models::zx90(), idx)?)
        }
        _ => {
            let cfg: TargetConfig = load_json(Path::new(name))?;
            if let Some(idx) = subspace {
                let mut t = cfg;
                t.indices = idx.clone();
                t.to_target()
            } else {
                cfg.to_target()
            }
        }
    }
}

fn common_subpixel_width(specs: &[PulseSpec]) -> CliResult<f64> {
    let dt = specs[0].subpixel_width();
    for s in specs {
        if (s.subpixel_width() - dt).abs() > 1e-12 * dt.abs() {
            return Err(CliError::Config(
                "pulse channels disagree on the subpixel width".into(),
            ));
        }
    }
    Ok(dt)
}

fn check_order(order: usize) -> CliResult<()> {
    if order > CLI_MAX_ORDER {
        return Err(CliError::Config(format!(
            "unsupported truncation order {order}: the command line caps expansions at \
             {CLI_MAX_ORDER}"
        )));
    }
    Ok(())
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn default_cache_path(expansion: &DysonExpansion) -> PathBuf {
    let dir = std::env::var_os("DYSOLVE_CACHE_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."));
    let fp = hex_string(&expansion.fingerprint[..8]);
    let slopes = if expansion.with_slopes { "s1" } else { "s0" };
    dir.join(format!(
        "dysolve-{fp}-o{}-dt{}-{slopes}.cache",
        expansion.max_order, expansion.dt
    ))
}

/// Loads a prepared cache if given, otherwise builds in memory at the
/// requested order (with slope operators when any channel interpolates).
fn obtain_expansion(
    cache: &Option<PathBuf>,
    model: &SystemModel,
    specs: &[PulseSpec],
    order: usize,
) -> CliResult<DysonExpansion> {
    let dt = common_subpixel_width(specs)?;
    match cache {
        Some(path) => {
            let e = DysonExpansion::load(path)?;
            e.verify_model(model)?;
            if (e.dt - dt).abs() > 1e-12 * dt.abs() {
                return Err(CliError::Config(format!(
                    "cache was prepared at dt = {} but the pulses need dt = {dt}",
                    e.dt
                )));
            }
            Ok(e)
        }
        None => {
            let slopes =
                specs.iter().any(|s| s.interpolation == Interpolation::Linear);
            Ok(DysonExpansion::build(model, dt, order, slopes)?)
        }
    }
}

// ------------------------------------------------------------- commands

fn cmd_model_benchmark(args: ModelBenchmarkArgs) -> CliResult<()> {
    let a = args.merged()?;
    let seed = a.seed.unwrap_or(0);
    let drives = a.drives.unwrap_or(1);
    let duration = a.duration.unwrap_or(100.0);
    let pixels = a.pixels.unwrap_or(5);
    let subpixels = a.subpixels.unwrap_or(40);
    let out = a.out.unwrap_or_else(|| PathBuf::from("model.json"));
    let pulses_out = a.pulses_out.unwrap_or_else(|| PathBuf::from("pulses.json"));
    if pixels == 0 || subpixels == 0 || subpixels % pixels != 0 {
        return Err(CliError::Config(format!(
            "total subpixels {subpixels} must be a positive multiple of the pixel \
             count {pixels}"
        )));
    }
    let spec = BenchmarkEnsembleSpec {
        seed,
        dim: a.dim.unwrap_or(25),
        num_drives: drives,
        num_pixels: pixels,
        pixel_width: duration / pixels as f64,
        subpixels_per_pixel: subpixels / pixels,
        ..Default::default()
    };
    let (model, pulses) = build_benchmark_ensemble(&spec)?;
    write_json_atomic(&out, &SystemConfig::from_model(&model))?;
    let pulse_cfgs: Vec<PulseConfig> = pulses.iter().map(PulseConfig::from_spec).collect();
    write_json_atomic(&pulses_out, &pulse_cfgs)?;
    println!("model: dim = {}, drives = {}, seed = {}", model.dim(), drives, seed);
    println!("wrote {} and {}", out.display(), pulses_out.display());
    Ok(())
}

fn cmd_model_cr(args: ModelCrArgs) -> CliResult<()> {
    let a = args.merged()?;
    let two_pi = std::f64::consts::TAU;
    let out = a.out.unwrap_or_else(|| PathBuf::from("model.json"));
    let target_out = a.target_out.unwrap_or_else(|| PathBuf::from("target.json"));
    let control = calibrate_transmon(
        two_pi * a.control_freq.unwrap_or(5.1),
        two_pi * a.control_alpha.unwrap_or(-0.355),
    )?;
    let target_q = calibrate_transmon(
        two_pi * a.target_freq.unwrap_or(4.9),
        two_pi * a.target_alpha.unwrap_or(-0.352),
    )?;
    let spec = CoupledSpec {
        control,
        target: target_q,
        g: two_pi * a.coupling.unwrap_or(0.00429),
        levels_per_qubit: a.levels.unwrap_or(5),
    };
    let sys = build_cross_resonance(&spec)?;
    write_json_atomic(&out, &SystemConfig::from_model(&sys.model))?;
    write_json_atomic(&target_out, &TargetConfig::from_target(&sys.target))?;
    println!(
        "dressed frequencies: control = {:.6} GHz, target = {:.6} GHz",
        sys.omega_c / two_pi,
        sys.omega_t / two_pi
    );
    println!("zz shift = {:.4} kHz", sys.zz_shift / two_pi * 1e6);
    println!("computational dressed states: {:?}", sys.computational);
    println!("wrote {} and {}", out.display(), target_out.display());
    Ok(())
}

fn cmd_prepare(args: PrepareArgs) -> CliResult<()> {
    let a = args.merged()?;
    let order = a.order.unwrap_or(4);
    check_order(order)?;
    let model = load_model(&require(a.model, "--model")?)?;
    let dt = require(a.dt, "--dt")?;
    let t0 = Instant::now();
    let expansion = DysonExpansion::build(&model, dt, order, a.slopes)?;
    let elapsed = t0.elapsed().as_secs_f64();
    let path = a.cache.unwrap_or_else(|| default_cache_path(&expansion));
    expansion.save(&path)?;
    // +1 counts the amplitude-independent free-evolution term
    println!("R = {} operators (including the free term)", expansion.entries.len() + 1);
    println!("preparation_seconds = {elapsed:.6}");
    println!("cache = {}", path.display());
    Ok(())
}

fn cmd_propagate(args: PropagateArgs) -> CliResult<()> {
    let a = args.merged()?;
    if let Some(order) = a.order {
        check_order(order)?;
    }
    let out = a.out.unwrap_or_else(|| PathBuf::from("propagator.bin"));
    let model = load_model(&require(a.model, "--model")?)?;
    let mut specs = load_pulses(&require(a.pulses, "--pulses")?)?;
    if let Some(ns) = a.subpixels {
        if ns == 0 {
            return Err(CliError::Config("subpixels must be positive".into()));
        }
        for s in &mut specs {
            s.subpixels_per_pixel = ns;
        }
    }
    let expansion = obtain_expansion(&a.cache, &model, &specs, a.order.unwrap_or(4))?;
    let t0 = Instant::now();
    let seqs = specs
        .iter()
        .map(subpixel_amplitudes)
        .collect::<Result<Vec<_>, _>>()?;
    let steps = step_propagators(&model, &expansion, &seqs, a.order)?;
    let u = fold_steps(&steps);
    let elapsed = t0.elapsed().as_secs_f64();
    write_matrix(&out, &u)?;
    println!("subpixels = {}", steps.len());
    println!("contraction_seconds = {elapsed:.6}");
    println!("unitarity_defect = {:.6e}", unitarity_defect(&u));
    if let Some(ref_path) = &a.reference {
        let r = read_matrix(ref_path)?;
        if r.nrows() != u.nrows() {
            return Err(CliError::Config(format!(
                "reference dimension {} does not match propagator dimension {}",
                r.nrows(),
                u.nrows()
            )));
        }
        println!("distance = {:.6e}", frobenius_distance(&u, &r));
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn csv_line(values: &[String]) -> String {
    values.join(",")
}

fn cmd_benchmark(args: BenchmarkArgs) -> CliResult<()> {
    let a = args.merged()?;
    let seeds = a.seeds.unwrap_or(3);
    let orders = a.orders.unwrap_or_else(|| vec![2, 3, 4]);
    let drive_counts = a.drives.unwrap_or_else(|| vec![1]);
    let subpixel_counts = a.subpixels.unwrap_or_else(|| vec![10, 20, 40, 80]);
    let dim = a.dim.unwrap_or(25);
    let duration = a.duration.unwrap_or(100.0);
    let pixels = a.pixels.unwrap_or(5);
    let reference_kind = a.reference.unwrap_or(ReferenceKind::SelfRef);
    let out_dir = a.out_dir.unwrap_or_else(|| PathBuf::from("bench"));

    for &o in &orders {
        check_order(o)?;
    }
    let max_ns = *subpixel_counts
        .iter()
        .max()
        .ok_or_else(|| CliError::Config("need at least one subpixel count".into()))?;
    for &ns in &subpixel_counts {
        if ns == 0 || ns % pixels != 0 {
            return Err(CliError::Config(format!(
                "subpixel count {ns} must be a positive multiple of the pixel count \
                 {pixels}"
            )));
        }
    }
    if seeds == 0 {
        return Err(CliError::Config("need at least one seed".into()));
    }
    let max_order = *orders.iter().max().unwrap_or(&4);
    std::fs::create_dir_all(&out_dir)?;

    // accumulators keyed by loop order: drives, order, subpixels
    let mut error_rows: Vec<(usize, usize, usize, f64)> = Vec::new();
    let mut timing_rows: Vec<(usize, usize, usize, f64, f64)> = Vec::new();
    let mut entry_counts: Vec<(usize, Vec<usize>)> = Vec::new();

    for &drives in &drive_counts {
        let mut per_order_entries: Option<Vec<usize>> = None;
        // mean accumulators indexed [order][ns]
        let mut err_acc = vec![vec![0.0; subpixel_counts.len()]; orders.len()];
        let mut contract_acc = vec![vec![0.0; subpixel_counts.len()]; orders.len()];
        let mut prep_acc = vec![0.0; subpixel_counts.len()];
        for seed in 0..seeds {
            let spec = BenchmarkEnsembleSpec {
                seed,
                dim,
                num_drives: drives,
                num_pixels: pixels,
                pixel_width: duration / pixels as f64,
                subpixels_per_pixel: 1,
                ..Default::default()
            };
            let (model, base_pulses) = build_benchmark_ensemble(&spec)?;

            let with_subpixels = |per_pixel: usize| -> Vec<PulseSpec> {
                base_pulses
                    .iter()
                    .map(|p| {
                        let mut s = p.clone();
                        s.subpixels_per_pixel = per_pixel;
                        s
                    })
                    .collect()
            };

            let reference = match reference_kind {
                ReferenceKind::SelfRef => {
                    let per_pixel = 10 * max_ns / pixels;
                    let specs = with_subpixels(per_pixel);
                    let dt = common_subpixel_width(&specs)?;
                    let e = DysonExpansion::build(&model, dt, max_order, false)?;
                    let seqs = specs
                        .iter()
                        .map(subpixel_amplitudes)
                        .collect::<Result<Vec<_>, _>>()?;
                    fold_steps(&step_propagators(&model, &e, &seqs, None)?)
                }
                ReferenceKind::Oracle => {
                    let specs = with_subpixels(1);
                    let seqs = specs
                        .iter()
                        .map(subpixel_amplitudes)
                        .collect::<Result<Vec<_>, _>>()?;
                    let envelopes: Vec<dysolve::oracle::DriveEnvelope> = seqs
                        .iter()
                        .map(|s| dysolve::oracle::DriveEnvelope::Staircase {
                            values: &s.values,
                            width: s.width,
                        })
                        .collect();
                    dysolve::oracle::reference_propagator(
                        &model,
                        &envelopes,
                        duration,
                        &dysolve::oracle::OracleSettings::default(),
                    )?
                }
            };

            for (ni, &ns) in subpixel_counts.iter().enumerate() {
                let specs = with_subpixels(ns / pixels);
                let dt = common_subpixel_width(&specs)?;
                let tp = Instant::now();
                let expansion = DysonExpansion::build(&model, dt, max_order, false)?;
                prep_acc[ni] += tp.elapsed().as_secs_f64();
                if per_order_entries.is_none() {
                    let mut counts = vec![0usize; max_order];
                    for e in &expansion.entries {
                        counts[e.order - 1] += 1;
                    }
                    per_order_entries = Some(counts);
                }
                let seqs = specs
                    .iter()
                    .map(subpixel_amplitudes)
                    .collect::<Result<Vec<_>, _>>()?;
                for (oi, &order) in orders.iter().enumerate() {
                    let tc = Instant::now();
                    let steps =
                        step_propagators(&model, &expansion, &seqs, Some(order))?;
                    let u = fold_steps(&steps);
                    contract_acc[oi][ni] += tc.elapsed().as_secs_f64();
                    err_acc[oi][ni] += frobenius_distance(&u, &reference);
                }
            }
            println!("drives = {drives}, seed = {seed}: done");
        }
        let denom = seeds as f64;
        for (oi, &order) in orders.iter().enumerate() {
            for (ni, &ns) in subpixel_counts.iter().enumerate() {
                error_rows.push((order, drives, ns, err_acc[oi][ni] / denom));
                timing_rows.push((
                    order,
                    drives,
                    ns,
                    contract_acc[oi][ni] / denom,
                    prep_acc[ni] / denom,
                ));
            }
        }
        entry_counts.push((drives, per_order_entries.unwrap_or_default()));
    }

    let mut error_csv = String::from("#schema=1\norder,drives,subpixels,mean_error\n");
    for (o, d, n, e) in &error_rows {
        error_csv.push_str(&csv_line(&[
            o.to_string(),
            d.to_string(),
            n.to_string(),
            format!("{e:.12e}"),
        ]));
        error_csv.push('\n');
    }
    write_bytes_atomic(&out_dir.join("benchmark_error.csv"), error_csv.as_bytes())?;

    let mut timing_csv = String::from(
        "#schema=1\norder,drives,subpixels,contraction_seconds,preparation_seconds\n",
    );
    for (o, d, n, c, p) in &timing_rows {
        timing_csv.push_str(&csv_line(&[
            o.to_string(),
            d.to_string(),
            n.to_string(),
            format!("{c:.6e}"),
            format!("{p:.6e}"),
        ]));
        timing_csv.push('\n');
    }
    write_bytes_atomic(&out_dir.join("benchmark_timing.csv"), timing_csv.as_bytes())?;

    let metadata = serde_json::json!({
        "timestamp_unix": std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        "seeds": seeds,
        "dim": dim,
        "duration_ns": duration,
        "pixels": pixels,
        "reference": match reference_kind {
            ReferenceKind::SelfRef => "self",
            ReferenceKind::Oracle => "oracle",
        },
        "threads": rayon::current_num_threads(),
        "entries_per_order": entry_counts
            .iter()
            .map(|(d, counts)| serde_json::json!({"drives": d, "counts": counts}))
            .collect::<Vec<_>>(),
    });
    write_json_atomic(&out_dir.join("metadata.json"), &metadata)?;
    println!("wrote benchmark CSVs to {}", out_dir.display());
    Ok(())
}

fn cmd_optimize(args: OptimizeArgs) -> CliResult<()> {
    let a = args.merged()?;
    if let Some(order) = a.order {
        check_order(order)?;
    }
    let model = load_model(&require(a.model, "--model")?)?;
    let specs = load_pulses(&require(a.pulses, "--pulses")?)?;
    let target = parse_target(&require(a.target, "--target")?, &a.subspace)?;
    let expansion = obtain_expansion(&a.cache, &model, &specs, a.order.unwrap_or(4))?;
    let frame: Frame = a.frame.unwrap_or(FrameArg::Drift).into();

    let z_score = |final_specs: &[PulseSpec]| -> CliResult<(f64, [f64; 4])> {
        let seqs = final_specs
            .iter()
            .map(subpixel_amplitudes)
            .collect::<Result<Vec<_>, _>>()?;
        let u = fold_steps(&step_propagators(&model, &expansion, &seqs, a.order)?);
        let total = seqs[0].len() as f64 * expansion.dt;
        let scored = match frame {
            Frame::Lab => u,
            Frame::Drift => to_drift_frame(&model, &u, total),
        };
        Ok(z_corrected_fidelity(&scored, &target)?)
    };

    if a.evaluate_only {
        let phi = pulse_fidelity(&model, &expansion, &specs, &target, frame, a.order)?;
        println!("fidelity = {phi:.12}");
        println!("infidelity = {:.6e}", 1.0 - phi);
        if a.z_corrected {
            let (zphi, angles) = z_score(&specs)?;
            println!("z_corrected_fidelity = {zphi:.12}");
            println!(
                "z_corrected_angles = {:.6},{:.6},{:.6},{:.6}",
                angles[0], angles[1], angles[2], angles[3]
            );
        }
        return Ok(());
    }

    let settings = GrapeSettings {
        epsilon: a.epsilon.unwrap_or(1e-3),
        policy: match a.policy.unwrap_or(PolicyArg::Backtracking) {
            PolicyArg::Fixed => StepPolicy::Fixed,
            PolicyArg::Backtracking => StepPolicy::Backtracking,
        },
        max_iters: a.max_iters.unwrap_or(500),
        grad_tolerance: a.grad_tol.unwrap_or(1e-10),
        infidelity_tolerance: a.infid_tol.unwrap_or(1e-6),
        frame,
        order_cap: a.order,
        ..Default::default()
    };
    let trace = grape_optimize(&model, &expansion, &specs, &target, &settings)?;

    let trace_path = a.trace.unwrap_or_else(|| PathBuf::from("trace.csv"));
    let out = a.out.unwrap_or_else(|| PathBuf::from("pulses_out.json"));
    let mut csv = String::from("#schema=1\niteration,fidelity,step,grad_norm\n");
    for (i, rec) in trace.iterations.iter().enumerate() {
        csv.push_str(&csv_line(&[
            i.to_string(),
            format!("{:.12e}", rec.fidelity),
            format!("{:.6e}", rec.step),
            format!("{:.6e}", rec.grad_norm),
        ]));
        csv.push('\n');
    }
    write_bytes_atomic(&trace_path, csv.as_bytes())?;
    let out_cfgs: Vec<PulseConfig> =
        trace.final_specs.iter().map(PulseConfig::from_spec).collect();
    write_json_atomic(&out, &out_cfgs)?;

    println!("fidelity = {:.12}", trace.fidelity);
    println!("infidelity = {:.6e}", 1.0 - trace.fidelity);
    println!("iterations = {}", trace.steps_taken());
    println!("converged = {:?}", trace.reason);
    if a.z_corrected {
        let (zphi, _) = z_score(&trace.final_specs)?;
        println!("z_corrected_fidelity = {zphi:.12}");
    }
    println!("wrote {} and {}", trace_path.display(), out.display());
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> CliResult<()> {
    let a = args.merged()?;
    if let Some(order) = a.order {
        check_order(order)?;
    }
    let model = load_model(&require(a.model, "--model")?)?;
    let specs = load_pulses(&require(a.pulses, "--pulses")?)?;
    let target = parse_target(&require(a.target, "--target")?, &a.subspace)?;
    let expansion = obtain_expansion(&None, &model, &specs, a.order.unwrap_or(4))?;
    let frame: Frame = a.frame.unwrap_or(FrameArg::Drift).into();

    let report = if a.corrupt_filter {
        let filters: Vec<Array2<f64>> = specs
            .iter()
            .map(|s| {
                filter_matrix(
                    s.num_pixels(),
                    s.pixel_width,
                    s.subpixels_per_pixel,
                    s.bandwidth,
                )
                .mapv(|v| 1.05 * v)
            })
            .collect();
        fidelity_gradient_with_filters(
            &model, &expansion, &specs, &filters, &target, frame, a.order,
        )?
    } else {
        fidelity_gradient(&model, &expansion, &specs, &target, frame, a.order)?
    };

    let mut scale = 0.0f64;
    for c in 0..specs.len() {
        for j in 0..specs[c].num_pixels() {
            scale = scale.max(report.grad_x[c][j].abs()).max(report.grad_y[c][j].abs());
        }
    }
    let h = a.fd_step.unwrap_or(1e-6);
    let threshold = a.threshold.unwrap_or(1e-5);
    let mut worst = 0.0f64;
    for c in 0..specs.len() {
        for j in 0..specs[c].num_pixels() {
            for quad in 0..2 {
                let bump = if quad == 0 { C64::new(h, 0.0) } else { C64::new(0.0, h) };
                let mut plus = specs.to_vec();
                plus[c].pixels[j] += bump;
                let mut minus = specs.to_vec();
                minus[c].pixels[j] -= bump;
                let fp = pulse_fidelity(&model, &expansion, &plus, &target, frame, a.order)?;
                let fm = pulse_fidelity(&model, &expansion, &minus, &target, frame, a.order)?;
                let fd = (fp - fm) / (2.0 * h);
                let an = if quad == 0 { report.grad_x[c][j] } else { report.grad_y[c][j] };
                scale = scale.max(fd.abs());
                worst = worst.max((an - fd).abs() / scale.max(1e-12));
            }
        }
    }
    println!("fidelity = {:.12}", report.fidelity);
    println!("max_rel_error = {worst:.6e}");
    if worst > threshold {
        println!("FAIL (threshold {threshold:.3e})");
        return Err(CliError::Verification(format!(
            "analytic and finite-difference gradients disagree: {worst:.3e} > \
             {threshold:.3e}"
        )));
    }
    println!("PASS (threshold {threshold:.3e})");
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("thread count must be positive".into()));
        }
        // ignore failure: the global pool may already exist in-process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Model(ModelCommand::Benchmark(a)) => cmd_model_benchmark(a),
        Command::Model(ModelCommand::CrossResonance(a)) => cmd_model_cr(a),
        Command::Prepare(a) => cmd_prepare(a),
        Command::Propagate(a) => cmd_propagate(a),
        Command::Benchmark(a) => cmd_benchmark(a),
        Command::Optimize(a) => cmd_optimize(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
