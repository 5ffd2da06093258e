//! Reference integrators and quadratures.
//!
//! Everything here is deliberately independent of the divided-difference
//! machinery: brute-force time-ordered integration (adaptive Dormand-Prince
//! 5(4) and a fixed-step midpoint-exponential rule) and direct simplex
//! quadrature for low-order path operators. These are the yardsticks the
//! fast solver is tested against, and the fallback when someone wants a
//! second opinion on a propagator.

use ndarray::Array2;
use num_complex::Complex64 as C64;

use crate::core::{frobenius_distance, frobenius_norm, identity, CMat, SystemModel};
use crate::error::{Error, Result};
use crate::pulses::continuous_filtered_value;

/// Nodes and weights of the n-point Gauss-Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for k in 0..n {
        // Newton from the Chebyshev-like initial guess
        let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, x);
        nodes[n - 1 - k] = x;
        weights[n - 1 - k] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

pub use crate::core::expm;

/// Time-ordered simplex integral for a product of drive operators.
///
/// `assignment` lists (channel, signed carrier) pairs in time order:
/// position p carries operator X_{c_p} and phase e^{i w_p t_p}, with
/// 0 <= t_1 <= ... <= t_m <= dt and a prefactor (-i/2)^m, sandwiched
/// between free propagators. Supports m <= 2; the quadrature is run at
/// `points` and 2 * points nodes and must agree to `tol` in Frobenius
/// norm or the call reports failure.
pub fn simplex_path_operator(
    model: &SystemModel,
    assignment: &[(usize, f64)],
    dt: f64,
    points: usize,
    tol: f64,
) -> Result<CMat> {
    for &(c, _) in assignment {
        if c >= model.num_channels() {
            return Err(Error::IndexOutOfRange(format!(
                "channel {c} out of range for {}-channel model",
                model.num_channels()
            )));
        }
    }
    if assignment.len() > 2 {
        return Err(Error::UnsupportedOrder { order: assignment.len(), max: 2 });
    }
    let coarse = simplex_quadrature(model, assignment, dt, points);
    let fine = simplex_quadrature(model, assignment, dt, 2 * points);
    let dist = frobenius_distance(&coarse, &fine);
    let scale = frobenius_norm(&fine).max(1.0);
    if dist > tol * scale {
        return Err(Error::QuadratureNotConverged(format!(
            "simplex quadrature changed by {dist:.3e} between {points} and {} nodes",
            2 * points
        )));
    }
    Ok(fine)
}

fn simplex_quadrature(
    model: &SystemModel,
    assignment: &[(usize, f64)],
    dt: f64,
    points: usize,
) -> CMat {
    let minus_i_half = C64::new(0.0, -0.5);
    match assignment {
        [] => model.drift_unitary(dt),
        [(c1, w1)] => {
            let x1 = &model.channels[*c1].dipole;
            let (nodes, weights) = gauss_legendre(points);
            let mut acc = Array2::<C64>::zeros((model.dim(), model.dim()));
            for (&x, &w) in nodes.iter().zip(weights.iter()) {
                let t1 = 0.5 * dt * (x + 1.0);
                let jac = 0.5 * dt * w;
                let phase = (C64::new(0.0, 1.0) * (*w1) * t1).exp();
                let left = model.drift_unitary(dt - t1);
                let right = model.drift_unitary(t1);
                acc = acc + left.dot(x1).dot(&right).mapv(|z| z * (phase * jac));
            }
            acc.mapv(|z| z * minus_i_half)
        }
        [(c1, w1), (c2, w2)] => {
            // outer integral over t2 in [0, dt], inner over t1 in [0, t2]
            let x1 = &model.channels[*c1].dipole;
            let x2 = &model.channels[*c2].dipole;
            let (nodes, weights) = gauss_legendre(points);
            let mut acc = Array2::<C64>::zeros((model.dim(), model.dim()));
            for (&xo, &wo) in nodes.iter().zip(weights.iter()) {
                let t2 = 0.5 * dt * (xo + 1.0);
                let jac2 = 0.5 * dt * wo;
                let phase2 = (C64::new(0.0, 1.0) * (*w2) * t2).exp();
                let mut inner = Array2::<C64>::zeros((model.dim(), model.dim()));
                for (&xi, &wi) in nodes.iter().zip(weights.iter()) {
                    let t1 = 0.5 * t2 * (xi + 1.0);
                    let jac1 = 0.5 * t2 * wi;
                    let phase1 = (C64::new(0.0, 1.0) * (*w1) * t1).exp();
                    let seg = model.drift_unitary(t2 - t1).dot(x1).dot(&model.drift_unitary(t1));
                    inner = inner + seg.mapv(|z| z * (phase1 * jac1));
                }
                let outer = model.drift_unitary(dt - t2).dot(x2).dot(&inner);
                acc = acc + outer.mapv(|z| z * (phase2 * jac2));
            }
            acc.mapv(|z| z * (minus_i_half * minus_i_half))
        }
        _ => unreachable!("checked above"),
    }
}

/// Drive envelope fed to the reference integrators: the complex amplitude
/// y_c(t) multiplying e^{i w_c t} in H(t) = H_0 + sum_c X_c Re(y_c e^{i w_c t}).
#[derive(Debug, Clone)]
pub enum DriveEnvelope<'a> {
    Zero,
    Constant(C64),
    /// Piecewise-constant values on a uniform grid of the given width.
    Staircase { values: &'a [C64], width: f64 },
    /// Piecewise-linear: intercept + slope * (t - l * width) on subpixel l.
    Linear { intercepts: &'a [C64], slopes: &'a [C64], width: f64 },
    /// The smooth filtered envelope itself.
    Filtered { pixels: &'a [C64], pixel_width: f64, bandwidth: Option<f64> },
}

impl DriveEnvelope<'_> {
    /// Interior breakpoints where the envelope is non-smooth.
    fn breakpoints(&self, total: f64, out: &mut Vec<f64>) {
        match self {
            DriveEnvelope::Zero | DriveEnvelope::Constant(_) | DriveEnvelope::Filtered { .. } => {}
            DriveEnvelope::Staircase { values, width } => {
                for l in 1..values.len() {
                    let t = l as f64 * width;
                    if t < total {
                        out.push(t);
                    }
                }
            }
            DriveEnvelope::Linear { intercepts, width, .. } => {
                for l in 1..intercepts.len() {
                    let t = l as f64 * width;
                    if t < total {
                        out.push(t);
                    }
                }
            }
        }
    }

    /// Envelope value at time t. `probe` is any interior time of the current
    /// smooth segment, used to pick the piece so that segment-edge
    /// evaluations never read the neighboring piece.
    fn value(&self, probe: f64, t: f64) -> C64 {
        match self {
            DriveEnvelope::Zero => C64::new(0.0, 0.0),
            DriveEnvelope::Constant(y) => *y,
            DriveEnvelope::Staircase { values, width } => {
                let l = ((probe / width).floor() as usize).min(values.len() - 1);
                values[l]
            }
            DriveEnvelope::Linear { intercepts, slopes, width } => {
                let l = ((probe / width).floor() as usize).min(intercepts.len() - 1);
                intercepts[l] + slopes[l] * (t - l as f64 * width)
            }
            DriveEnvelope::Filtered { pixels, pixel_width, bandwidth } => {
                continuous_filtered_value(pixels, *pixel_width, *bandwidth, t)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMethod {
    /// Dormand-Prince 5(4) with adaptive step control.
    AdaptiveRk,
    /// Fixed-step second-order Magnus rule: exp(-i H(t_mid) h) per step.
    FixedMagnus2,
}

#[derive(Debug, Clone, Copy)]
pub struct OracleSettings {
    pub method: OracleMethod,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Fixed step width for `FixedMagnus2` (upper bound; steps divide
    /// each smooth segment evenly).
    pub fixed_step: f64,
    pub max_steps: usize,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self {
            method: OracleMethod::AdaptiveRk,
            rel_tol: 1e-12,
            abs_tol: 1e-12,
            fixed_step: 1e-3,
            max_steps: 10_000_000,
        }
    }
}

/// Integrates dU/dt = -i H(t) U over [0, total], H(t) = diag(eigenvalues)
/// + sum_c X_c Re(y_c(t) e^{i w_c t}), splitting at envelope breakpoints so
/// the integrator never steps across a discontinuity.
pub fn reference_propagator(
    model: &SystemModel,
    envelopes: &[DriveEnvelope<'_>],
    total: f64,
    settings: &OracleSettings,
) -> Result<CMat> {
    if envelopes.len() != model.num_channels() {
        return Err(Error::LengthMismatch(format!(
            "{} envelopes for {} channels",
            envelopes.len(),
            model.num_channels()
        )));
    }
    if !(total.is_finite() && total >= 0.0) {
        return Err(Error::InvalidInput("total time must be nonnegative".into()));
    }
    let mut cuts = vec![0.0, total];
    for env in envelopes {
        env.breakpoints(total, &mut cuts);
    }
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);

    let n = model.dim();
    let mut u = identity(n);
    let mut budget = settings.max_steps;
    for seg in cuts.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        if b - a < 1e-15 {
            continue;
        }
        let probe = 0.5 * (a + b);
        let ham = |t: f64, out: &mut CMat| {
            out.fill(C64::new(0.0, 0.0));
            for (k, &lam) in model.eigenvalues.iter().enumerate() {
                out[[k, k]] = C64::new(lam, 0.0);
            }
            for (c, env) in envelopes.iter().enumerate() {
                let y = env.value(probe, t);
                let carrier = (C64::new(0.0, 1.0) * model.channels[c].carrier * t).exp();
                let amp = (y * carrier).re;
                if amp != 0.0 {
                    out.scaled_add(C64::new(amp, 0.0), &model.channels[c].dipole);
                }
            }
        };
        u = match settings.method {
            OracleMethod::AdaptiveRk => {
                integrate_dp54(ham, a, b, u, settings, &mut budget)?
            }
            OracleMethod::FixedMagnus2 => {
                integrate_magnus2(ham, a, b, u, settings.fixed_step, &mut budget)?
            }
        };
    }
    Ok(u)
}

/// Dormand-Prince 5(4) on dU/dt = -i H(t) U.
fn integrate_dp54(
    ham: impl Fn(f64, &mut CMat),
    a: f64,
    b: f64,
    mut u: CMat,
    settings: &OracleSettings,
    budget: &mut usize,
) -> Result<CMat> {
    const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
    const A: [[f64; 6]; 7] = [
        [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    // fifth-order weights are row 7 of A; the embedded fourth-order weights:
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];

    let n = u.nrows();
    let mut h_mat = Array2::<C64>::zeros((n, n));
    let minus_i = C64::new(0.0, -1.0);
    let rhs = |t: f64, y: &CMat, h_mat: &mut CMat| -> CMat {
        ham(t, h_mat);
        h_mat.dot(y).mapv(|z| z * minus_i)
    };

    let mut t = a;
    let mut h = (b - a).min(0.1);
    let mut k: Vec<CMat> = Vec::with_capacity(7);
    while t < b - 1e-14 {
        if *budget == 0 {
            return Err(Error::StepLimitExceeded { limit: settings.max_steps });
        }
        *budget -= 1;
        h = h.min(b - t);
        if h < 1e-14 {
            break;
        }
        k.clear();
        for stage in 0..7 {
            let mut y = u.clone();
            for (j, kj) in k.iter().enumerate() {
                let coeff = A[stage][j];
                if coeff != 0.0 {
                    y.scaled_add(C64::new(h * coeff, 0.0), kj);
                }
            }
            k.push(rhs(t + C[stage] * h, &y, &mut h_mat));
        }
        // y5 uses row 7 of A (same as stage-7 input), y4 uses B4
        let mut y5 = u.clone();
        let mut err = Array2::<C64>::zeros((n, n));
        for (j, kj) in k.iter().enumerate() {
            if j < 6 && A[6][j] != 0.0 {
                y5.scaled_add(C64::new(h * A[6][j], 0.0), kj);
            }
            let diff = (if j < 6 { A[6][j] } else { 0.0 }) - B4[j];
            if diff != 0.0 {
                err.scaled_add(C64::new(h * diff, 0.0), kj);
            }
        }
        let mut scaled = 0.0f64;
        for (e, y) in err.iter().zip(y5.iter()) {
            let tol = settings.abs_tol + settings.rel_tol * y.norm();
            let r = e.norm() / tol;
            scaled += r * r;
        }
        let err_norm = (scaled / (n * n) as f64).sqrt();
        if err_norm <= 1.0 {
            t += h;
            u = y5;
        }
        let factor = if err_norm > 0.0 { 0.9 * err_norm.powf(-0.2) } else { 5.0 };
        h *= factor.clamp(0.2, 5.0);
    }
    Ok(u)
}

fn integrate_magnus2(
    ham: impl Fn(f64, &mut CMat),
    a: f64,
    b: f64,
    mut u: CMat,
    max_step: f64,
    budget: &mut usize,
) -> Result<CMat> {
    let n = u.nrows();
    let steps = ((b - a) / max_step).ceil().max(1.0) as usize;
    let h = (b - a) / steps as f64;
    let mut h_mat = Array2::<C64>::zeros((n, n));
    for s in 0..steps {
        if *budget == 0 {
            return Err(Error::StepLimitExceeded { limit: 0 });
        }
        *budget -= 1;
        let mid = a + (s as f64 + 0.5) * h;
        ham(mid, &mut h_mat);
        let gen = h_mat.mapv(|z| z * C64::new(0.0, -h));
        u = expm(&gen).dot(&u);
    }
    Ok(u)
}
