//! Pixel envelopes, bandwidth filtering, and subpixel resampling.
//!
//! A pulse is a sequence of N_p complex pixel amplitudes of width dt_pix.
//! The waveform generator's finite bandwidth w0 turns the pixel staircase
//! into a smooth envelope, modeled by convolving each pixel box with a
//! Gaussian: each pixel contributes
//!   u_j * (erf(w0 (t - j dt)/2) - erf(w0 (t - (j+1) dt)/2)) / 2.
//! Sampling that envelope on the subpixel grid is a linear map, the filter
//! matrix. Infinite bandwidth degenerates erf to sign with sign(0) = 0, so
//! subpixels that sit exactly on a pixel edge average the two neighbors;
//! this is the pointwise limit of the finite-bandwidth matrix and keeps the
//! two cases consistent. The t = 0 sample of a constant pulse is therefore
//! half the pixel value (the turn-on edge).
//!
//! Linear interpolation replaces the constant value on each subpixel by
//! intercept + slope * (t - l dt). Slopes are forward differences of the
//! sampled values; intercepts are fixed by matching the integral of the
//! smooth envelope over the subpixel (16-point Gauss-Legendre).

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::core::{ghz_to_rad_ns, mhz_to_rad_ns, TWO_PI};
use crate::error::{Error, Result};
use crate::oracle::gauss_legendre;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Constant,
    Linear,
}

/// One drive channel's pulse: pixel amplitudes in rad/ns plus the
/// discretization and filtering parameters.
#[derive(Debug, Clone)]
pub struct PulseSpec {
    pub pixels: Vec<C64>,
    /// Pixel width in ns.
    pub pixel_width: f64,
    pub subpixels_per_pixel: usize,
    /// Filter bandwidth w0 in rad/ns; `None` means unfiltered (infinite).
    pub bandwidth: Option<f64>,
    pub interpolation: Interpolation,
}

impl PulseSpec {
    pub fn validate(&self) -> Result<()> {
        if self.pixels.is_empty() {
            return Err(Error::InvalidInput("pulse has no pixels".into()));
        }
        if !self.pixels.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err(Error::InvalidInput("non-finite pixel amplitude".into()));
        }
        if !(self.pixel_width.is_finite() && self.pixel_width > 0.0) {
            return Err(Error::InvalidInput("pixel width must be positive".into()));
        }
        if self.subpixels_per_pixel == 0 {
            return Err(Error::InvalidInput("need at least one subpixel per pixel".into()));
        }
        if let Some(w0) = self.bandwidth {
            if !(w0.is_finite() && w0 > 0.0) {
                return Err(Error::InvalidInput("bandwidth must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn num_pixels(&self) -> usize {
        self.pixels.len()
    }

    pub fn subpixel_width(&self) -> f64 {
        self.pixel_width / self.subpixels_per_pixel as f64
    }

    pub fn num_subpixels(&self) -> usize {
        self.pixels.len() * self.subpixels_per_pixel
    }

    pub fn total_time(&self) -> f64 {
        self.pixels.len() as f64 * self.pixel_width
    }
}

/// Amplitudes on the subpixel grid. `intercepts`/`slopes` are present only
/// for linearly interpolated pulses.
#[derive(Debug, Clone)]
pub struct SubpixelSequence {
    pub values: Vec<C64>,
    pub intercepts: Option<Vec<C64>>,
    pub slopes: Option<Vec<C64>>,
    /// Subpixel width in ns; consumers check it against their step width.
    pub width: f64,
}

impl SubpixelSequence {
    /// A piecewise-constant sequence from raw subpixel values.
    pub fn constant(values: Vec<C64>, width: f64) -> Self {
        Self { values, intercepts: None, slopes: None, width }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_linear(&self) -> bool {
        self.intercepts.is_some() && self.slopes.is_some()
    }
}

/// erf(w0 x / 2), degenerating to sign(x) with sign(0) = 0 for w0 = None.
fn smoothed_step(bandwidth: Option<f64>, x: f64) -> f64 {
    match bandwidth {
        Some(w0) => erf(w0 * x / 2.0),
        None => {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        }
    }
}

/// P x N_p matrix taking pixel amplitudes to sampled subpixel amplitudes,
/// with P = num_pixels * subpixels_per_pixel.
pub fn filter_matrix(
    num_pixels: usize,
    pixel_width: f64,
    subpixels_per_pixel: usize,
    bandwidth: Option<f64>,
) -> ndarray::Array2<f64> {
    let p = num_pixels * subpixels_per_pixel;
    let dt = pixel_width / subpixels_per_pixel as f64;
    let mut t = ndarray::Array2::<f64>::zeros((p, num_pixels));
    for l in 0..p {
        let tl = l as f64 * dt;
        for j in 0..num_pixels {
            let left = tl - j as f64 * pixel_width;
            let right = tl - (j + 1) as f64 * pixel_width;
            t[[l, j]] =
                0.5 * (smoothed_step(bandwidth, left) - smoothed_step(bandwidth, right));
        }
    }
    t
}

/// The smooth filtered envelope at an arbitrary time.
pub fn continuous_filtered_value(
    pixels: &[C64],
    pixel_width: f64,
    bandwidth: Option<f64>,
    t: f64,
) -> C64 {
    let mut acc = C64::new(0.0, 0.0);
    for (j, &u) in pixels.iter().enumerate() {
        let left = t - j as f64 * pixel_width;
        let right = t - (j + 1) as f64 * pixel_width;
        acc += u * (0.5 * (smoothed_step(bandwidth, left) - smoothed_step(bandwidth, right)));
    }
    acc
}

/// Samples (and for linear pulses, locally linearizes) the filtered
/// envelope on the subpixel grid.
pub fn subpixel_amplitudes(spec: &PulseSpec) -> Result<SubpixelSequence> {
    spec.validate()?;
    let t = filter_matrix(
        spec.num_pixels(),
        spec.pixel_width,
        spec.subpixels_per_pixel,
        spec.bandwidth,
    );
    let p = spec.num_subpixels();
    let mut values = vec![C64::new(0.0, 0.0); p];
    for l in 0..p {
        let mut acc = C64::new(0.0, 0.0);
        for (j, &u) in spec.pixels.iter().enumerate() {
            acc += u * t[[l, j]];
        }
        values[l] = acc;
    }
    if spec.interpolation == Interpolation::Constant {
        return Ok(SubpixelSequence::constant(values, spec.subpixel_width()));
    }

    let dt = spec.subpixel_width();
    let mut slopes = vec![C64::new(0.0, 0.0); p];
    for l in 0..p - 1 {
        slopes[l] = (values[l + 1] - values[l]) / dt;
    }
    // intercept a_l from  a_l dt + b_l dt^2/2 = integral of the smooth
    // envelope over subpixel l
    let (nodes, weights) = gauss_legendre(16);
    let mut intercepts = vec![C64::new(0.0, 0.0); p];
    for l in 0..p {
        let t0 = l as f64 * dt;
        let mut integral = C64::new(0.0, 0.0);
        for (&x, &w) in nodes.iter().zip(weights.iter()) {
            // map [-1, 1] to [t0, t0 + dt]
            let tt = t0 + 0.5 * dt * (x + 1.0);
            integral += continuous_filtered_value(&spec.pixels, spec.pixel_width, spec.bandwidth, tt)
                * (0.5 * dt * w);
        }
        intercepts[l] = integral / dt - slopes[l] * (dt / 2.0);
    }
    Ok(SubpixelSequence {
        values,
        intercepts: Some(intercepts),
        slopes: Some(slopes),
        width: dt,
    })
}

/// On-disk pulse description. Pixel amplitudes in MHz, bandwidth in GHz,
/// times in ns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PulseConfig {
    pub pixels: Vec<[f64; 2]>,
    pub pixel_width_ns: f64,
    pub subpixels_per_pixel: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth_ghz: Option<f64>,
    pub interpolation: Interpolation,
}

impl PulseConfig {
    pub fn to_spec(&self) -> Result<PulseSpec> {
        let spec = PulseSpec {
            pixels: self
                .pixels
                .iter()
                .map(|p| C64::new(mhz_to_rad_ns(p[0]), mhz_to_rad_ns(p[1])))
                .collect(),
            pixel_width: self.pixel_width_ns,
            subpixels_per_pixel: self.subpixels_per_pixel,
            bandwidth: self.bandwidth_ghz.map(ghz_to_rad_ns),
            interpolation: self.interpolation,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_spec(spec: &PulseSpec) -> Self {
        Self {
            pixels: spec
                .pixels
                .iter()
                .map(|z| [z.re / (TWO_PI * 1e-3), z.im / (TWO_PI * 1e-3)])
                .collect(),
            pixel_width_ns: spec.pixel_width,
            subpixels_per_pixel: spec.subpixels_per_pixel,
            bandwidth_ghz: spec.bandwidth.map(|w| w / TWO_PI),
            interpolation: spec.interpolation,
        }
    }
}
