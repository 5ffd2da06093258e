//! System models and small dense complex-matrix helpers.
//!
//! Internal units everywhere: angular frequency in rad/ns, time in ns.
//! Config files speak GHz / MHz / ns and are converted here, once, at the
//! boundary.

use ndarray::Array2;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const TWO_PI: f64 = std::f64::consts::TAU;

/// Dense complex matrix, row-major.
pub type CMat = Array2<C64>;

/// GHz (ordinary frequency) to rad/ns (angular frequency).
pub fn ghz_to_rad_ns(f_ghz: f64) -> f64 {
    TWO_PI * f_ghz
}

/// MHz to rad/ns.
pub fn mhz_to_rad_ns(f_mhz: f64) -> f64 {
    TWO_PI * 1e-3 * f_mhz
}

/// One drive line: a Hermitian dipole operator in the drift eigenbasis and
/// the carrier angular frequency it is modulated at.
#[derive(Debug, Clone)]
pub struct DriveChannel {
    pub dipole: CMat,
    /// Carrier angular frequency in rad/ns, non-negative.
    pub carrier: f64,
}

/// Drift Hamiltonian eigenvalues plus the drive channels, all expressed in
/// the drift eigenbasis. The drift is diagonal by construction.
#[derive(Debug, Clone)]
pub struct SystemModel {
    pub eigenvalues: Vec<f64>,
    pub channels: Vec<DriveChannel>,
}

impl SystemModel {
    /// Validates dimensions, Hermiticity of every dipole, finiteness and
    /// carrier signs.
    pub fn new(eigenvalues: Vec<f64>, channels: Vec<DriveChannel>) -> Result<Self> {
        let model = Self { eigenvalues, channels };
        model.validate()?;
        Ok(model)
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.eigenvalues.len();
        if n == 0 {
            return Err(Error::DimensionMismatch("model has zero levels".into()));
        }
        if !self.eigenvalues.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidInput("non-finite eigenvalue".into()));
        }
        for (c, ch) in self.channels.iter().enumerate() {
            if ch.dipole.nrows() != n || ch.dipole.ncols() != n {
                return Err(Error::DimensionMismatch(format!(
                    "channel {c} dipole is {}x{}, expected {n}x{n}",
                    ch.dipole.nrows(),
                    ch.dipole.ncols()
                )));
            }
            if !ch.carrier.is_finite() || ch.carrier < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "channel {c} carrier must be finite and non-negative, got {}",
                    ch.carrier
                )));
            }
            let mut max_asym = 0.0f64;
            for i in 0..n {
                for j in 0..n {
                    let d = (ch.dipole[[i, j]] - ch.dipole[[j, i]].conj()).norm();
                    if !ch.dipole[[i, j]].re.is_finite() || !ch.dipole[[i, j]].im.is_finite() {
                        return Err(Error::InvalidInput(format!(
                            "channel {c} dipole has a non-finite entry at ({i},{j})"
                        )));
                    }
                    max_asym = max_asym.max(d);
                }
            }
            if max_asym > 1e-12 {
                return Err(Error::NonHermitianDipole { channel: c, max_asymmetry: max_asym });
            }
        }
        Ok(())
    }

    /// SHA-256 over a canonical little-endian serialization of the model.
    /// Identical models hash identically on every platform.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.dim() as u64).to_le_bytes());
        for &ev in &self.eigenvalues {
            h.update(ev.to_le_bytes());
        }
        h.update((self.channels.len() as u64).to_le_bytes());
        for ch in &self.channels {
            h.update(ch.carrier.to_le_bytes());
            for z in ch.dipole.iter() {
                h.update(z.re.to_le_bytes());
                h.update(z.im.to_le_bytes());
            }
        }
        h.finalize().into()
    }

    /// exp(-i H0 t) for the diagonal drift.
    pub fn drift_unitary(&self, t: f64) -> CMat {
        let n = self.dim();
        let mut u = CMat::zeros((n, n));
        for (k, &ev) in self.eigenvalues.iter().enumerate() {
            u[[k, k]] = C64::from_polar(1.0, -ev * t);
        }
        u
    }

    /// diag(exp(+i lambda_k t)), the inverse drift phase. Used to express a
    /// propagator in the frame co-rotating with the drift.
    pub fn drift_frame_rotation(&self, t: f64) -> CMat {
        let n = self.dim();
        let mut u = CMat::zeros((n, n));
        for (k, &ev) in self.eigenvalues.iter().enumerate() {
            u[[k, k]] = C64::from_polar(1.0, ev * t);
        }
        u
    }
}

pub fn identity(n: usize) -> CMat {
    Array2::eye(n).mapv(|x: f64| C64::new(x, 0.0))
}

/// a * b, both square and of equal dimension.
pub fn matmul(a: &CMat, b: &CMat) -> CMat {
    a.dot(b)
}

/// Conjugate transpose.
pub fn dagger(a: &CMat) -> CMat {
    let mut out = CMat::zeros((a.ncols(), a.nrows()));
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            out[[j, i]] = a[[i, j]].conj();
        }
    }
    out
}

pub fn frobenius_norm(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Dense matrix exponential by scaling and squaring around a Taylor core.
pub fn expm(a: &CMat) -> CMat {
    let n = a.nrows();
    let norm = frobenius_norm(a);
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil().max(0.0) as u32 } else { 0 };
    let scale = (0.5f64).powi(squarings as i32);
    let scaled = a.mapv(|z| z * scale);
    let mut result = identity(n);
    let mut term = identity(n);
    for k in 1..=24 {
        term = term.dot(&scaled).mapv(|z| z / k as f64);
        result += &term;
        if frobenius_norm(&term) < 1e-18 * frobenius_norm(&result) {
            break;
        }
    }
    for _ in 0..squarings {
        result = result.dot(&result);
    }
    result
}

/// tr(a b) in O(n^2) without forming the product.
pub fn trace_product(a: &CMat, b: &CMat) -> C64 {
    assert_eq!(a.ncols(), b.nrows(), "trace_product on incompatible shapes");
    assert_eq!(a.nrows(), b.ncols(), "trace_product on incompatible shapes");
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            acc += a[[i, j]] * b[[j, i]];
        }
    }
    acc
}

pub fn frobenius_distance(a: &CMat, b: &CMat) -> f64 {
    assert_eq!(a.dim(), b.dim(), "frobenius_distance on unequal shapes");
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm_sqr())
        .sum::<f64>()
        .sqrt()
}

/// || U^dag U - 1 ||_F, zero for exactly unitary U.
pub fn unitarity_defect(u: &CMat) -> f64 {
    let n = u.nrows();
    let mut g = dagger(u).dot(u);
    for k in 0..n {
        g[[k, k]] -= C64::new(1.0, 0.0);
    }
    frobenius_norm(&g)
}

/// The d x d sub-block of `a` picked out by `indices` (rows and columns).
pub fn extract_block(a: &CMat, indices: &[usize]) -> Result<CMat> {
    let n = a.nrows();
    for &i in indices {
        if i >= n {
            return Err(Error::IndexOutOfRange(format!("subspace index {i} >= dim {n}")));
        }
    }
    let d = indices.len();
    let mut out = CMat::zeros((d, d));
    for (r, &i) in indices.iter().enumerate() {
        for (c, &j) in indices.iter().enumerate() {
            out[[r, c]] = a[[i, j]];
        }
    }
    Ok(out)
}

/// Places a d x d matrix into an n x n zero matrix on the given indices.
pub fn embed_block(block: &CMat, indices: &[usize], n: usize) -> Result<CMat> {
    let d = indices.len();
    if block.nrows() != d || block.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "block is {}x{}, subspace has {d} indices",
            block.nrows(),
            block.ncols()
        )));
    }
    for &i in indices {
        if i >= n {
            return Err(Error::IndexOutOfRange(format!("subspace index {i} >= dim {n}")));
        }
    }
    let mut out = CMat::zeros((n, n));
    for (r, &i) in indices.iter().enumerate() {
        for (c, &j) in indices.iter().enumerate() {
            out[[i, j]] = block[[r, c]];
        }
    }
    Ok(out)
}

/// Complex entries serialized as [re, im] pairs, row-major.
pub fn cmat_to_pairs(a: &CMat) -> Vec<[f64; 2]> {
    a.iter().map(|z| [z.re, z.im]).collect()
}

pub fn cmat_from_pairs(n: usize, pairs: &[[f64; 2]]) -> Result<CMat> {
    if pairs.len() != n * n {
        return Err(Error::DimensionMismatch(format!(
            "expected {} matrix entries, got {}",
            n * n,
            pairs.len()
        )));
    }
    let data: Vec<C64> = pairs.iter().map(|p| C64::new(p[0], p[1])).collect();
    Array2::from_shape_vec((n, n), data)
        .map_err(|e| Error::DimensionMismatch(e.to_string()))
}

/// On-disk description of one drive channel: dipole entries as [re, im]
/// pairs (row-major, length N^2) and the carrier in GHz.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub dipole: Vec<[f64; 2]>,
    pub carrier_ghz: f64,
}

/// On-disk system description. Eigenvalues in GHz; converted to rad/ns by
/// `to_model`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemConfig {
    pub eigenvalues_ghz: Vec<f64>,
    #[serde(default)]
    pub channels: Vec<ChannelConfig>,
}

impl SystemConfig {
    pub fn to_model(&self) -> Result<SystemModel> {
        let n = self.eigenvalues_ghz.len();
        let eigenvalues = self.eigenvalues_ghz.iter().map(|&f| ghz_to_rad_ns(f)).collect();
        let mut channels = Vec::with_capacity(self.channels.len());
        for ch in &self.channels {
            channels.push(DriveChannel {
                dipole: cmat_from_pairs(n, &ch.dipole)?,
                carrier: ghz_to_rad_ns(ch.carrier_ghz),
            });
        }
        SystemModel::new(eigenvalues, channels)
    }

    pub fn from_model(model: &SystemModel) -> Self {
        Self {
            eigenvalues_ghz: model.eigenvalues.iter().map(|&w| w / TWO_PI).collect(),
            channels: model
                .channels
                .iter()
                .map(|ch| ChannelConfig {
                    dipole: cmat_to_pairs(&ch.dipole),
                    carrier_ghz: ch.carrier / TWO_PI,
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sigma_x() -> CMat {
        let mut x = CMat::zeros((2, 2));
        x[[0, 1]] = C64::new(1.0, 0.0);
        x[[1, 0]] = C64::new(1.0, 0.0);
        x
    }

    #[test]
    fn model_validation_accepts_hermitian() {
        let m = SystemModel::new(
            vec![0.0, 1.0],
            vec![DriveChannel { dipole: sigma_x(), carrier: 1.0 }],
        );
        assert!(m.is_ok());
    }

    #[test]
    fn model_validation_rejects_non_hermitian() {
        let mut x = sigma_x();
        x[[0, 1]] = C64::new(1.0, 0.5);
        let m = SystemModel::new(vec![0.0, 1.0], vec![DriveChannel { dipole: x, carrier: 1.0 }]);
        match m {
            Err(Error::NonHermitianDipole { channel: 0, .. }) => {}
            other => panic!("expected NonHermitianDipole, got {other:?}"),
        }
    }

    #[test]
    fn model_validation_rejects_bad_dims() {
        let m = SystemModel::new(
            vec![0.0, 1.0, 2.0],
            vec![DriveChannel { dipole: sigma_x(), carrier: 1.0 }],
        );
        assert!(matches!(m, Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn fingerprint_is_stable_and_sensitive() {
        let m1 = SystemModel::new(
            vec![0.0, 1.0],
            vec![DriveChannel { dipole: sigma_x(), carrier: 1.0 }],
        )
        .unwrap();
        let m2 = m1.clone();
        assert_eq!(m1.fingerprint(), m2.fingerprint());
        let mut m3 = m1.clone();
        m3.eigenvalues[1] += 1e-9;
        assert_ne!(m1.fingerprint(), m3.fingerprint());
    }

    #[test]
    fn drift_unitary_matches_phases() {
        let m = SystemModel::new(vec![0.0, 2.0], vec![]).unwrap();
        let u = m.drift_unitary(0.7);
        assert_relative_eq!(u[[1, 1]].re, (2.0f64 * 0.7).cos(), epsilon = 1e-15);
        assert_relative_eq!(u[[1, 1]].im, -(2.0f64 * 0.7).sin(), epsilon = 1e-15);
        assert_eq!(u[[0, 1]], C64::new(0.0, 0.0));
    }

    #[test]
    fn unitarity_defect_zero_for_identity() {
        assert_eq!(unitarity_defect(&identity(4)), 0.0);
    }

    #[test]
    fn block_roundtrip() {
        let mut a = CMat::zeros((3, 3));
        for i in 0..3 {
            for j in 0..3 {
                a[[i, j]] = C64::new((3 * i + j) as f64, 0.1);
            }
        }
        let b = extract_block(&a, &[0, 2]).unwrap();
        assert_eq!(b[[1, 0]], a[[2, 0]]);
        let e = embed_block(&b, &[0, 2], 3).unwrap();
        assert_eq!(e[[2, 0]], a[[2, 0]]);
        assert_eq!(e[[1, 1]], C64::new(0.0, 0.0));
    }

    #[test]
    fn trace_product_matches_full_multiply() {
        let mut a = CMat::zeros((3, 3));
        let mut b = CMat::zeros((3, 3));
        for i in 0..3 {
            for j in 0..3 {
                a[[i, j]] = C64::new(i as f64 - 0.5, j as f64 * 0.3);
                b[[i, j]] = C64::new(0.2 * (i * j) as f64, -(i as f64));
            }
        }
        let direct = trace_product(&a, &b);
        let full = a.dot(&b);
        let tr: C64 = (0..3).map(|k| full[[k, k]]).sum();
        assert!((direct - tr).norm() < 1e-14);
    }

    #[test]
    fn config_roundtrip_converts_units() {
        let cfg = SystemConfig {
            eigenvalues_ghz: vec![0.0, 5.0],
            channels: vec![ChannelConfig {
                dipole: vec![[0.0, 0.0], [1.0, 0.0], [1.0, 0.0], [0.0, 0.0]],
                carrier_ghz: 5.0,
            }],
        };
        let model = cfg.to_model().unwrap();
        assert_relative_eq!(model.eigenvalues[1], TWO_PI * 5.0, epsilon = 1e-12);
        assert_relative_eq!(model.channels[0].carrier, TWO_PI * 5.0, epsilon = 1e-12);
        let back = SystemConfig::from_model(&model);
        assert_relative_eq!(back.eigenvalues_ghz[1], 5.0, epsilon = 1e-12);
    }
}
