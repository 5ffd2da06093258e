//! System builders: single transmons, the coupled cross-resonance pair,
//! and the randomized dense benchmark ensemble.

use ndarray::Array2;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

use crate::control::GateTarget;
use crate::core::{CMat, DriveChannel, SystemModel, TWO_PI};
use crate::error::{Error, Result};
use crate::pulses::{Interpolation, PulseSpec};

/// A transmon parametrized by its circuit energies, in rad/ns.
#[derive(Debug, Clone, Copy)]
pub struct TransmonSpec {
    pub e_c: f64,
    pub e_j: f64,
    /// Charge basis runs -charge_cutoff ..= +charge_cutoff.
    pub charge_cutoff: usize,
    /// Number of low-lying eigenstates retained.
    pub keep_levels: usize,
}

impl TransmonSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.e_c > 0.0 && self.e_j > 0.0) {
            return Err(Error::InvalidInput("transmon energies must be positive".into()));
        }
        if self.e_j / self.e_c <= 1.0 {
            return Err(Error::InvalidInput("transmon regime needs E_J/E_C > 1".into()));
        }
        if self.charge_cutoff < 10 {
            return Err(Error::InvalidInput("charge cutoff must be at least 10".into()));
        }
        if self.keep_levels == 0 || self.keep_levels > 2 * self.charge_cutoff + 1 {
            return Err(Error::InvalidInput(format!(
                "cannot keep {} levels from a {}-state charge basis",
                self.keep_levels,
                2 * self.charge_cutoff + 1
            )));
        }
        Ok(())
    }
}

/// Diagonalized transmon: level energies (ground at zero) and the charge
/// operator in the energy eigenbasis.
#[derive(Debug, Clone)]
pub struct Transmon {
    pub levels: Vec<f64>,
    pub charge: Array2<f64>,
}

impl Transmon {
    pub fn omega01(&self) -> f64 {
        self.levels[1]
    }

    /// (E2 - E1) - (E1 - E0).
    pub fn anharmonicity(&self) -> f64 {
        self.levels[2] - 2.0 * self.levels[1]
    }
}

/// 4 E_C k^2 diagonal with -E_J/2 on the two off-diagonals, charge offset
/// zero; basis index k runs -cutoff ..= cutoff.
pub(crate) fn charge_basis_hamiltonian(e_c: f64, e_j: f64, cutoff: usize) -> Array2<f64> {
    let m = 2 * cutoff + 1;
    let mut h = Array2::<f64>::zeros((m, m));
    for (row, k) in (-(cutoff as i64)..=cutoff as i64).enumerate() {
        h[[row, row]] = 4.0 * e_c * (k * k) as f64;
        if row + 1 < m {
            h[[row, row + 1]] = -0.5 * e_j;
            h[[row + 1, row]] = -0.5 * e_j;
        }
    }
    h
}

/// Eigenvalues ascending and the matching eigenvector columns, each gauge
/// fixed so its first significant component is positive.
fn eigh_sorted(h: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = h.nrows();
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| h[[i, j]]);
    let eig = nalgebra::SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let mut vals = Vec::with_capacity(n);
    let mut vecs = Array2::<f64>::zeros((n, n));
    for (col, &k) in order.iter().enumerate() {
        vals.push(eig.eigenvalues[k]);
        let column = eig.eigenvectors.column(k);
        let mut sign = 1.0;
        for &v in column.iter() {
            if v.abs() > 1e-8 {
                sign = v.signum();
                break;
            }
        }
        for i in 0..n {
            vecs[[i, col]] = sign * column[i];
        }
    }
    (vals, vecs)
}

fn transmon_levels_and_charge(spec: &TransmonSpec, cutoff: usize) -> (Vec<f64>, Array2<f64>) {
    let h = charge_basis_hamiltonian(spec.e_c, spec.e_j, cutoff);
    let (vals, vecs) = eigh_sorted(&h);
    let keep = spec.keep_levels;
    let levels: Vec<f64> = vals[..keep].iter().map(|v| v - vals[0]).collect();
    // charge operator is diag(k) in the charge basis
    let m = 2 * cutoff + 1;
    let mut n_eig = Array2::<f64>::zeros((keep, keep));
    for a in 0..keep {
        for b in 0..keep {
            let mut acc = 0.0;
            for (row, k) in (-(cutoff as i64)..=cutoff as i64).enumerate() {
                acc += vecs[[row, a]] * k as f64 * vecs[[row, b]];
            }
            n_eig[[a, b]] = acc;
        }
    }
    debug_assert_eq!(m, vecs.nrows());
    (levels, n_eig)
}

/// Diagonalizes the charge-basis transmon and returns the kept levels and
/// the charge operator in the eigenbasis. Recomputes at cutoff + 5 and
/// rejects the result if any kept eigenvalue moves by more than 1e-8.
pub fn build_transmon(spec: &TransmonSpec) -> Result<Transmon> {
    spec.validate()?;
    let (levels, charge) = transmon_levels_and_charge(spec, spec.charge_cutoff);
    let (check, _) = transmon_levels_and_charge(spec, spec.charge_cutoff + 5);
    for (a, b) in levels.iter().zip(&check) {
        if (a - b).abs() > 1e-8 {
            return Err(Error::CutoffTooSmall(format!(
                "kept eigenvalue moved {:.3e} rad/ns when widening the charge basis; \
                 raise charge_cutoff above {}",
                (a - b).abs(),
                spec.charge_cutoff
            )));
        }
    }
    Ok(Transmon { levels, charge })
}

const CALIBRATION_CUTOFF: usize = 15;
const CALIBRATION_TOL: f64 = TWO_PI * 1e-6;

/// Finds (E_C, E_J) reproducing a measured qubit frequency and
/// anharmonicity (rad/ns) by Newton iteration in two dimensions.
pub fn calibrate_transmon(omega01: f64, alpha: f64) -> Result<TransmonSpec> {
    if !(alpha < 0.0 && alpha.abs() < omega01) {
        return Err(Error::InvalidInput(
            "calibration expects alpha < 0 and |alpha| < omega01".into(),
        ));
    }
    let observe = |e_c: f64, e_j: f64| -> Result<(f64, f64)> {
        let t = build_transmon(&TransmonSpec {
            e_c,
            e_j,
            charge_cutoff: CALIBRATION_CUTOFF,
            keep_levels: 3,
        })?;
        Ok((t.omega01(), t.anharmonicity()))
    };

    let mut e_c = -alpha;
    let mut e_j = (omega01 + e_c).powi(2) / (8.0 * e_c);
    for _ in 0..100 {
        let (w, a) = observe(e_c, e_j)?;
        let (fw, fa) = (w - omega01, a - alpha);
        if fw.abs() < CALIBRATION_TOL && fa.abs() < CALIBRATION_TOL {
            return Ok(TransmonSpec {
                e_c,
                e_j,
                charge_cutoff: CALIBRATION_CUTOFF,
                keep_levels: 5,
            });
        }
        let hc = e_c * 1e-6;
        let hj = e_j * 1e-6;
        let (wc, ac) = observe(e_c + hc, e_j)?;
        let (wj, aj) = observe(e_c, e_j + hj)?;
        let j11 = (wc - w) / hc;
        let j12 = (wj - w) / hj;
        let j21 = (ac - a) / hc;
        let j22 = (aj - a) / hj;
        let det = j11 * j22 - j12 * j21;
        if det.abs() < 1e-30 {
            return Err(Error::NoConvergence("singular calibration Jacobian".into()));
        }
        let dc = (j22 * fw - j12 * fa) / det;
        let dj = (-j21 * fw + j11 * fa) / det;
        e_c = (e_c - dc).max(1e-6);
        e_j = (e_j - dj).max(1e-6);
    }
    Err(Error::NoConvergence(
        "transmon calibration did not meet tolerance in 100 iterations".into(),
    ))
}

/// Two capacitively coupled transmons.
#[derive(Debug, Clone, Copy)]
pub struct CoupledSpec {
    pub control: TransmonSpec,
    pub target: TransmonSpec,
    /// Charge-charge coupling strength (rad/ns).
    pub g: f64,
    /// Levels kept per transmon in the product space.
    pub levels_per_qubit: usize,
}

impl CoupledSpec {
    pub fn validate(&self) -> Result<()> {
        self.control.validate()?;
        self.target.validate()?;
        if self.g == 0.0 {
            return Err(Error::InvalidInput("coupling g must be nonzero".into()));
        }
        if self.levels_per_qubit < 2 {
            return Err(Error::InvalidInput("need at least 2 levels per qubit".into()));
        }
        if self.levels_per_qubit > self.control.keep_levels
            || self.levels_per_qubit > self.target.keep_levels
        {
            return Err(Error::InvalidInput(
                "levels_per_qubit exceeds the kept transmon levels".into(),
            ));
        }
        Ok(())
    }
}

/// The dressed cross-resonance system: drive channels for both charge
/// operators carried at the dressed target frequency, plus the ZX90 target
/// on the four computational dressed states.
#[derive(Debug, Clone)]
pub struct CrossResonanceSystem {
    pub model: SystemModel,
    pub target: GateTarget,
    /// Dressed (energy-ordered) indices of the 00, 01, 10, 11 states.
    pub computational: [usize; 4],
    /// Dressed control and target qubit frequencies (rad/ns).
    pub omega_c: f64,
    pub omega_t: f64,
    /// ZZ interaction strength E11 - E10 - E01 + E00 (rad/ns).
    pub zz_shift: f64,
}

/// ZX90: a 90 degree X rotation on the target whose sense is conditioned
/// on the control state; basis order 00, 01, 10, 11.
pub fn zx90() -> CMat {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut u = CMat::zeros((4, 4));
    u[[0, 0]] = C64::new(s, 0.0);
    u[[0, 1]] = C64::new(0.0, -s);
    u[[1, 0]] = C64::new(0.0, -s);
    u[[1, 1]] = C64::new(s, 0.0);
    u[[2, 2]] = C64::new(s, 0.0);
    u[[2, 3]] = C64::new(0.0, s);
    u[[3, 2]] = C64::new(0.0, s);
    u[[3, 3]] = C64::new(s, 0.0);
    u
}

fn kron_real(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::<f64>::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            for k in 0..br {
                for l in 0..bc {
                    out[[i * br + k, j * bc + l]] = a[[i, j]] * b[[k, l]];
                }
            }
        }
    }
    out
}

fn real_to_cmat(a: &Array2<f64>) -> CMat {
    a.mapv(|v| C64::new(v, 0.0))
}

/// Finds the dressed (energy-ordered) state with maximal overlap on the
/// given bare product index, requiring the winner to beat the runner-up by
/// an absolute probability margin of 0.01.
fn assign_dressed(vecs: &Array2<f64>, bare: usize) -> Result<usize> {
    let n = vecs.ncols();
    let mut best = (0usize, -1.0f64);
    let mut second = -1.0f64;
    for d in 0..n {
        let p = vecs[[bare, d]] * vecs[[bare, d]];
        if p > best.1 {
            second = best.1;
            best = (d, p);
        } else if p > second {
            second = p;
        }
    }
    if best.1 - second < 0.01 {
        return Err(Error::HybridizationAmbiguity(format!(
            "bare state {bare}: top overlaps {:.4} and {:.4} are too close to label",
            best.1, second
        )));
    }
    Ok(best.0)
}

/// Builds the dressed two-transmon system and its ZX90 gate target.
pub fn build_cross_resonance(spec: &CoupledSpec) -> Result<CrossResonanceSystem> {
    spec.validate()?;
    let l = spec.levels_per_qubit;
    let tc = build_transmon(&spec.control)?;
    let tt = build_transmon(&spec.target)?;

    let truncate = |t: &Transmon| -> (Array2<f64>, Array2<f64>) {
        let mut e = Array2::<f64>::zeros((l, l));
        let mut n = Array2::<f64>::zeros((l, l));
        for a in 0..l {
            e[[a, a]] = t.levels[a];
            for b in 0..l {
                n[[a, b]] = t.charge[[a, b]];
            }
        }
        (e, n)
    };
    let (ec, nc) = truncate(&tc);
    let (et, nt) = truncate(&tt);
    let eye = Array2::<f64>::eye(l);

    let h0 = kron_real(&ec, &eye) + kron_real(&eye, &et) + kron_real(&nc, &nt).mapv(|v| spec.g * v);
    let (vals, vecs) = eigh_sorted(&h0);

    // bare product index (i, j) -> i * l + j, control first
    let d00 = assign_dressed(&vecs, 0)?;
    let d01 = assign_dressed(&vecs, 1)?;
    let d10 = assign_dressed(&vecs, l)?;
    let d11 = assign_dressed(&vecs, l + 1)?;
    let computational = [d00, d01, d10, d11];
    for (a, &i) in computational.iter().enumerate() {
        if computational[..a].contains(&i) {
            return Err(Error::HybridizationAmbiguity(
                "two computational labels claim the same dressed state".into(),
            ));
        }
    }

    let omega_t = vals[d01] - vals[d00];
    let omega_c = vals[d10] - vals[d00];
    let zz_shift = vals[d11] - vals[d10] - vals[d01] + vals[d00];

    // operators to the dressed basis: O -> V^T O V
    let to_dressed = |o: &Array2<f64>| -> Array2<f64> { vecs.t().dot(o).dot(&vecs) };
    let nc_dressed = to_dressed(&kron_real(&nc, &eye));
    let nt_dressed = to_dressed(&kron_real(&eye, &nt));

    let eigenvalues: Vec<f64> = vals.iter().map(|v| v - vals[0]).collect();
    let model = SystemModel::new(
        eigenvalues,
        vec![
            DriveChannel { dipole: real_to_cmat(&nc_dressed), carrier: omega_t },
            DriveChannel { dipole: real_to_cmat(&nt_dressed), carrier: omega_t },
        ],
    )?;
    let target = GateTarget::new(zx90(), computational.to_vec())?;
    Ok(CrossResonanceSystem { model, target, computational, omega_c, omega_t, zz_shift })
}

/// Cross-resonance pair at the published operating point: control
/// 5.1 GHz / -355 MHz, target 4.9 GHz / -352 MHz, g/2pi = 4.29 MHz.
pub fn paper_cross_resonance_spec() -> Result<CoupledSpec> {
    let control = calibrate_transmon(TWO_PI * 5.1, -TWO_PI * 0.355)?;
    let target = calibrate_transmon(TWO_PI * 4.9, -TWO_PI * 0.352)?;
    Ok(CoupledSpec { control, target, g: TWO_PI * 0.00429, levels_per_qubit: 5 })
}

/// Randomized dense benchmark system: a diagonal drift with normally
/// distributed eigenvalues and up to three dense drive operators pinned to
/// the 0-1, 2-3, 4-5 transitions.
#[derive(Debug, Clone)]
pub struct BenchmarkEnsembleSpec {
    pub seed: u64,
    pub dim: usize,
    pub num_drives: usize,
    /// Eigenvalue distribution (rad/ns).
    pub eigenvalue_mean: f64,
    pub eigenvalue_std: f64,
    /// Fraction of non-designated upper-triangle dipole entries populated.
    pub offresonant_fill: f64,
    /// Scale of the populated entries (dimensionless dipole units).
    pub offresonant_std: f64,
    /// Pixel amplitude distribution (rad/ns).
    pub amplitude_mean: f64,
    pub amplitude_std: f64,
    pub num_pixels: usize,
    pub pixel_width: f64,
    pub subpixels_per_pixel: usize,
    pub bandwidth: Option<f64>,
}

impl Default for BenchmarkEnsembleSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            dim: 25,
            num_drives: 1,
            eigenvalue_mean: TWO_PI * 7.0,
            eigenvalue_std: TWO_PI * 0.5,
            offresonant_fill: 0.2,
            offresonant_std: 0.1,
            amplitude_mean: TWO_PI * 0.04,
            amplitude_std: TWO_PI * 0.001,
            num_pixels: 5,
            pixel_width: 20.0,
            subpixels_per_pixel: 8,
            bandwidth: None,
        }
    }
}

impl BenchmarkEnsembleSpec {
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.num_drives) {
            return Err(Error::InvalidInput("num_drives must be 1, 2 or 3".into()));
        }
        if self.dim < 2 * self.num_drives {
            return Err(Error::InvalidInput(format!(
                "dimension {} cannot host {} designated transitions",
                self.dim, self.num_drives
            )));
        }
        if !(0.0..=1.0).contains(&self.offresonant_fill) {
            return Err(Error::InvalidInput("fill fraction must lie in [0, 1]".into()));
        }
        if self.num_pixels == 0 || self.subpixels_per_pixel == 0 || self.pixel_width <= 0.0 {
            return Err(Error::InvalidInput("benchmark pulse grid is empty".into()));
        }
        Ok(())
    }

    pub fn total_time(&self) -> f64 {
        self.num_pixels as f64 * self.pixel_width
    }

    /// Rabi oscillations a mean-amplitude resonant drive completes over the
    /// full duration (unit transition element).
    pub fn expected_rabi_oscillations(&self) -> f64 {
        self.amplitude_mean * self.total_time() / TWO_PI
    }
}

/// Deterministic draw keyed by the spec seed. Draw order: eigenvalues,
/// then each drive operator's fill, then each drive's pixel amplitudes.
pub fn build_benchmark_ensemble(
    spec: &BenchmarkEnsembleSpec,
) -> Result<(SystemModel, Vec<PulseSpec>)> {
    spec.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let n = spec.dim;

    let eig_dist = Normal::new(spec.eigenvalue_mean, spec.eigenvalue_std)
        .map_err(|e| Error::InvalidInput(format!("eigenvalue distribution: {e}")))?;
    let mut eigenvalues: Vec<f64> = (0..n).map(|_| eig_dist.sample(&mut rng)).collect();
    eigenvalues.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let fill_dist = Normal::new(0.0, spec.offresonant_std)
        .map_err(|e| Error::InvalidInput(format!("fill distribution: {e}")))?;
    let mut channels = Vec::with_capacity(spec.num_drives);
    for d in 0..spec.num_drives {
        let (lo, hi) = (2 * d, 2 * d + 1);
        let mut x = CMat::zeros((n, n));
        x[[lo, hi]] = C64::new(1.0, 0.0);
        x[[hi, lo]] = C64::new(1.0, 0.0);
        for i in 0..n {
            for j in (i + 1)..n {
                if (i, j) == (lo, hi) {
                    continue;
                }
                if rng.gen::<f64>() < spec.offresonant_fill {
                    let v = C64::new(fill_dist.sample(&mut rng), fill_dist.sample(&mut rng));
                    x[[i, j]] = v;
                    x[[j, i]] = v.conj();
                }
            }
        }
        let carrier = eigenvalues[hi] - eigenvalues[lo];
        channels.push(DriveChannel { dipole: x, carrier });
    }

    let amp_dist = Normal::new(spec.amplitude_mean, spec.amplitude_std)
        .map_err(|e| Error::InvalidInput(format!("amplitude distribution: {e}")))?;
    let mut pulses = Vec::with_capacity(spec.num_drives);
    for _ in 0..spec.num_drives {
        let pixels: Vec<C64> =
            (0..spec.num_pixels).map(|_| C64::new(amp_dist.sample(&mut rng), 0.0)).collect();
        pulses.push(PulseSpec {
            pixels,
            pixel_width: spec.pixel_width,
            subpixels_per_pixel: spec.subpixels_per_pixel,
            bandwidth: spec.bandwidth,
            interpolation: Interpolation::Constant,
        });
    }

    let model = SystemModel::new(eigenvalues, channels)?;
    Ok((model, pulses))
}
