//! Assembles subpixel step propagators and folds them into gate unitaries.
//!
//! The exact propagator across subpixel l expands as
//!
//!   U_l = S^(0) + sum over entries r of W_r(l) S_r  (+ slope corrections),
//!
//! where S^(0) = diag(exp(-i lambda dt)) is the free step, S_r are the
//! amplitude-independent expansion operators, and the coefficient
//!
//!   W_r(l) = exp(i (sum of signed carriers) l dt)
//!            * prod over positions p of (s or conj s) at subpixel l
//!
//! carries all the pulse dependence. The phase factor re-anchors each
//! entry's simplex integral (computed in subpixel-local time) to absolute
//! time, so each U_l is the genuine lab-frame step and the ordered product
//! of steps (later steps on the left) is the lab-frame gate propagator.
//! No separate frame correction is applied here; gate-fidelity code that
//! wants a rotating frame strips the drift phases itself.
//!
//! For linearly interpolated drives each position's amplitude is
//! intercept + slope * tau and the first-order slope term pairs the
//! per-position slope with that entry's first-moment operator.
//!
//! `step_products` exposes the prefix/suffix products needed for exact
//! gradients: every step appears in the total exactly once as
//! suffix * step * prefix.

use num_complex::Complex64 as C64;

use crate::core::{CMat, SystemModel};
use crate::dyson::DysonExpansion;
use crate::error::{Error, Result};
use crate::pulses::SubpixelSequence;

/// Per-subpixel amplitude views: `a` is the constant part (sampled value,
/// or intercept for linear pulses), `b` the slope or None.
struct ChannelAmps<'a> {
    a: &'a [C64],
    b: Option<&'a [C64]>,
}

fn channel_amps<'a>(
    expansion: &DysonExpansion,
    seqs: &'a [SubpixelSequence],
) -> Result<(Vec<ChannelAmps<'a>>, usize)> {
    if seqs.len() != expansion.num_channels {
        return Err(Error::LengthMismatch(format!(
            "{} pulse sequences for {} drive channels",
            seqs.len(),
            expansion.num_channels
        )));
    }
    let p = seqs[0].len();
    let mut amps = Vec::with_capacity(seqs.len());
    for seq in seqs {
        if seq.len() != p {
            return Err(Error::LengthMismatch(
                "pulse sequences have different lengths".into(),
            ));
        }
        if (seq.width - expansion.dt).abs() > 1e-12 * expansion.dt.max(1.0) {
            return Err(Error::InvalidInput(format!(
                "sequence subpixel width {} does not match expansion step {}",
                seq.width, expansion.dt
            )));
        }
        if seq.is_linear() {
            if !expansion.with_slopes {
                return Err(Error::SlopeEntriesMissing);
            }
            amps.push(ChannelAmps {
                a: seq.intercepts.as_deref().unwrap(),
                b: Some(seq.slopes.as_deref().unwrap()),
            });
        } else {
            amps.push(ChannelAmps { a: &seq.values, b: None });
        }
    }
    if p == 0 {
        return Err(Error::InvalidInput("empty pulse sequence".into()));
    }
    Ok((amps, p))
}

/// Builds the P step propagators for the given pulse, truncating the
/// expansion at `order_cap` if one is given (otherwise every cached order
/// is used).
pub fn step_propagators(
    model: &SystemModel,
    expansion: &DysonExpansion,
    seqs: &[SubpixelSequence],
    order_cap: Option<usize>,
) -> Result<Vec<CMat>> {
    expansion.verify_model(model)?;
    let cap = order_cap.unwrap_or(expansion.max_order);
    if cap > expansion.max_order {
        return Err(Error::UnsupportedOrder { order: cap, max: expansion.max_order });
    }
    let (amps, p) = channel_amps(expansion, seqs)?;
    let n = expansion.dim;
    let dt = expansion.dt;

    let mut free = CMat::zeros((n, n));
    for (k, &lam) in model.eigenvalues.iter().enumerate() {
        free[[k, k]] = C64::from_polar(1.0, -lam * dt);
    }
    let carrier_sums: Vec<f64> =
        expansion.entries.iter().map(|e| e.carrier_sum(&expansion.carriers)).collect();

    let mut steps = Vec::with_capacity(p);
    for l in 0..p {
        let mut u = free.clone();
        for (e, &wsum) in expansion.entries.iter().zip(&carrier_sums) {
            if e.order > cap {
                continue;
            }
            let phase = C64::from_polar(1.0, wsum * l as f64 * dt);
            // product of per-position constant amplitudes
            let mut coeff = phase;
            for (&c, &s) in e.channels.iter().zip(&e.signs) {
                let a = amps[c].a[l];
                coeff *= if matches!(s, crate::dyson::Sign::Plus) { a } else { a.conj() };
                if coeff == C64::new(0.0, 0.0) {
                    break;
                }
            }
            if coeff != C64::new(0.0, 0.0) {
                u.scaled_add(coeff, &e.operator);
            }
            // first-order slope corrections
            if amps.iter().any(|ca| ca.b.is_some()) && !e.slope_operators.is_empty() {
                for (pos, d_op) in e.slope_operators.iter().enumerate() {
                    let (c_p, s_p) = (e.channels[pos], e.signs[pos]);
                    let Some(b_arr) = amps[c_p].b else { continue };
                    let b = b_arr[l];
                    let b_eff =
                        if matches!(s_p, crate::dyson::Sign::Plus) { b } else { b.conj() };
                    if b_eff == C64::new(0.0, 0.0) {
                        continue;
                    }
                    let mut term = phase * b_eff;
                    for (other, (&c, &s)) in
                        e.channels.iter().zip(&e.signs).enumerate()
                    {
                        if other == pos {
                            continue;
                        }
                        let a = amps[c].a[l];
                        term *=
                            if matches!(s, crate::dyson::Sign::Plus) { a } else { a.conj() };
                    }
                    if term != C64::new(0.0, 0.0) {
                        u.scaled_add(term, d_op);
                    }
                }
            }
        }
        steps.push(u);
    }
    Ok(steps)
}

/// Ordered product of step propagators, later steps on the left.
pub fn fold_steps(steps: &[CMat]) -> CMat {
    let n = steps[0].nrows();
    let mut total = crate::core::identity(n);
    for s in steps {
        total = s.dot(&total);
    }
    total
}

/// Full-pulse propagator in the rotating frame of the diagonal Hamiltonian
/// eigenvalues (multiply by the drift phases to return to the lab frame).
pub fn propagate(
    model: &SystemModel,
    expansion: &DysonExpansion,
    seqs: &[SubpixelSequence],
    order_cap: Option<usize>,
) -> Result<CMat> {
    let steps = step_propagators(model, expansion, seqs, order_cap)?;
    Ok(fold_steps(&steps))
}

/// Prefix and suffix products around every step: `prefixes[l]` multiplies
/// steps 0..l (identity at l = 0), `suffixes[l]` multiplies steps l+1..P
/// (identity at l = P-1), so total = suffixes[l] * steps[l] * prefixes[l].
pub struct StepProducts {
    pub prefixes: Vec<CMat>,
    pub suffixes: Vec<CMat>,
}

pub fn step_products(steps: &[CMat]) -> StepProducts {
    let p = steps.len();
    let n = steps[0].nrows();
    let mut prefixes = Vec::with_capacity(p);
    let mut acc = crate::core::identity(n);
    for s in steps.iter().take(p) {
        prefixes.push(acc.clone());
        acc = s.dot(&acc);
    }
    let mut suffixes = vec![crate::core::identity(n); p];
    let mut acc = crate::core::identity(n);
    for l in (0..p).rev() {
        suffixes[l] = acc.clone();
        acc = acc.dot(&steps[l]);
    }
    StepProducts { prefixes, suffixes }
}
