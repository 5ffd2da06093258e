//! Per-subpixel expansion operators.
//!
//! Over one subpixel of width dt the time-ordered propagator is expanded in
//! powers of the drive. Each order-m term factors into a complex coefficient
//! built from that subpixel's drive amplitudes and carrier phases, and a
//! model-dependent operator that is independent of the amplitudes. The
//! operators are what this module builds; they are computed once per
//! (model, dt, order) and reused for every subpixel and every pulse.
//!
//! An entry is labeled by the channel and the rotating (+) or
//! counter-rotating (-) sign of each of its m time-ordered interaction
//! positions. Writing w_p for the signed carrier of position p and
//! c_j = w_{j+1} + .. + w_m for the tail sums, the operator is
//!
//!   (-i dt/2)^m  sum over index chains k_0 -> k_1 -> .. -> k_m of
//!       f(nu_0, .., nu_m) prod_p X_{beta_p}[k_p, k_{p-1}]
//!
//! placed at row k_m, column k_0, with nodes nu_j = (lambda_{k_j} - c_j) dt
//! and f the oscillatory weighting function.
//!
//! Summing chains one at a time costs dim^(m+1) weighting calls per entry.
//! Instead each entry is read off a single matrix exponential: for the
//! block-bidiagonal matrix with diagonal blocks -i diag(nu_j) (latest node
//! first) and the dipoles on the superdiagonal, the top-right block of its
//! exponential is the simplex integral
//!
//!   int_{ordered} e^{-i nu_m (1 - s_m)} X e^{-i nu_{m-1}(s_m - s_{m-1})} ..
//!
//! which is exactly the chain sum: the ordered integral over a path's nodes
//! is that path's weighting f, so the entry operator is (-i dt/2)^m times
//! that block. One exponential of an (m+1) dim matrix replaces the walk.
//!
//! Linearly interpolated drives also need first-moment operators: position p
//! picking up a factor t_p is the same as differentiating its phase with
//! respect to w_p, which duplicates nodes under f:
//!
//!   D_p = (-i dt/2)^m dt  sum_chains  sum_{j < p} f(nu, nu_j) prod_p X[..]
//!
//! A duplicated node is one extra diagonal block with an identity coupling,
//! so each moment adds one exponential of an (m+2) dim matrix.
//!
//! Caches serialize to a single binary file with a trailing checksum so a
//! torn write or a stale model is caught before it corrupts a propagation.

use std::path::Path;

use ndarray::s;
use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::core::{expm, CMat, SystemModel};
use crate::error::{Error, Result};

/// Largest supported expansion order. Keeps entry counts and node-vector
/// lengths in a regime the weighting kernel is tested for.
pub const MAX_ORDER: usize = 8;

const MAGIC: &[u8; 4] = b"DYSN";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sign {
    Minus,
    Plus,
}

impl Sign {
    pub fn factor(self) -> f64 {
        match self {
            Sign::Minus => -1.0,
            Sign::Plus => 1.0,
        }
    }
}

/// One labeled term of the expansion: channels and signs are indexed by
/// time-ordered position (earliest first).
#[derive(Debug, Clone)]
pub struct DysonEntry {
    pub order: usize,
    pub channels: Vec<usize>,
    pub signs: Vec<Sign>,
    pub operator: CMat,
    /// First-moment operators D_1..D_m; empty unless the expansion was
    /// built with slope support.
    pub slope_operators: Vec<CMat>,
}

impl DysonEntry {
    /// Sum of signed carriers, the frequency of this entry's coefficient
    /// phase across subpixels.
    pub fn carrier_sum(&self, carriers: &[f64]) -> f64 {
        self.channels
            .iter()
            .zip(&self.signs)
            .map(|(&c, &s)| s.factor() * carriers[c])
            .sum()
    }
}

/// All expansion operators for one (model, dt) pair, orders 1..=max_order,
/// in canonical order: ascending order m, then lexicographic over positions
/// with digit channel * 2 + (sign == Plus), position 1 most significant.
#[derive(Debug, Clone)]
pub struct DysonExpansion {
    pub dim: usize,
    pub num_channels: usize,
    pub max_order: usize,
    pub dt: f64,
    pub with_slopes: bool,
    pub carriers: Vec<f64>,
    pub fingerprint: [u8; 32],
    pub entries: Vec<DysonEntry>,
}

fn entry_keys(num_channels: usize, max_order: usize) -> Vec<(Vec<usize>, Vec<Sign>)> {
    let radix = 2 * num_channels;
    let mut keys = Vec::new();
    for m in 1..=max_order {
        let count = radix.pow(m as u32);
        for code in 0..count {
            let mut channels = vec![0usize; m];
            let mut signs = vec![Sign::Minus; m];
            let mut rem = code;
            for p in (0..m).rev() {
                let digit = rem % radix;
                rem /= radix;
                channels[p] = digit / 2;
                signs[p] = if digit % 2 == 0 { Sign::Minus } else { Sign::Plus };
            }
            keys.push((channels, signs));
        }
    }
    keys
}

impl DysonExpansion {
    pub fn build(
        model: &SystemModel,
        dt: f64,
        max_order: usize,
        with_slopes: bool,
    ) -> Result<Self> {
        model.validate()?;
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidInput("subpixel width must be positive".into()));
        }
        if max_order > MAX_ORDER {
            return Err(Error::UnsupportedOrder { order: max_order, max: MAX_ORDER });
        }
        let radix = 2 * model.num_channels();
        if (radix as f64).powi(max_order as i32) > 1e6 {
            return Err(Error::InvalidInput(format!(
                "{} channels at order {max_order} gives too many expansion terms",
                model.num_channels()
            )));
        }

        let n = model.dim();
        let keys = entry_keys(model.num_channels(), max_order);
        let entries: Vec<DysonEntry> = keys
            .into_par_iter()
            .map(|(channels, signs)| build_entry(model, dt, channels, signs, with_slopes))
            .collect();

        Ok(Self {
            dim: n,
            num_channels: model.num_channels(),
            max_order,
            dt,
            with_slopes,
            carriers: model.channels.iter().map(|c| c.carrier).collect(),
            fingerprint: model.fingerprint(),
            entries,
        })
    }

    /// Checks that this expansion was built from the given model.
    pub fn verify_model(&self, model: &SystemModel) -> Result<()> {
        if self.fingerprint != model.fingerprint() {
            return Err(Error::FingerprintMismatch);
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes();
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        std::fs::create_dir_all(dir)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        std::io::Write::write_all(&mut tmp, &bytes)?;
        tmp.persist(path).map_err(|e| Error::Io(e.error))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }

    fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        push_u32(&mut buf, FORMAT_VERSION);
        buf.extend_from_slice(&self.fingerprint);
        push_u32(&mut buf, self.dim as u32);
        push_u32(&mut buf, self.num_channels as u32);
        push_u32(&mut buf, self.max_order as u32);
        push_u32(&mut buf, self.with_slopes as u32);
        push_f64(&mut buf, self.dt);
        for &w in &self.carriers {
            push_f64(&mut buf, w);
        }
        push_u32(&mut buf, self.entries.len() as u32);
        for e in &self.entries {
            push_u32(&mut buf, e.order as u32);
            for &c in &e.channels {
                push_u32(&mut buf, c as u32);
            }
            for &s in &e.signs {
                push_u32(&mut buf, matches!(s, Sign::Plus) as u32);
            }
            push_cmat(&mut buf, &e.operator);
            if self.with_slopes {
                for d in &e.slope_operators {
                    push_cmat(&mut buf, d);
                }
            }
        }
        let crc = crc32fast::hash(&buf);
        push_u32(&mut buf, crc);
        buf
    }

    fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 {
            return Err(Error::CorruptCache("file too short".into()));
        }
        let (payload, tail) = bytes.split_at(bytes.len() - 4);
        let stored_crc = u32::from_le_bytes(tail.try_into().unwrap());
        if crc32fast::hash(payload) != stored_crc {
            return Err(Error::CorruptCache("checksum mismatch".into()));
        }
        let mut r = Reader { buf: payload, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::CorruptCache("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch { found: version, expected: FORMAT_VERSION });
        }
        let mut fingerprint = [0u8; 32];
        fingerprint.copy_from_slice(r.take(32)?);
        let dim = r.u32()? as usize;
        let num_channels = r.u32()? as usize;
        let max_order = r.u32()? as usize;
        let with_slopes = match r.u32()? {
            0 => false,
            1 => true,
            v => return Err(Error::CorruptCache(format!("bad slope flag {v}"))),
        };
        let dt = r.f64()?;
        if dim == 0 || num_channels == 0 || max_order > MAX_ORDER || !(dt > 0.0) {
            return Err(Error::CorruptCache("implausible header".into()));
        }
        let carriers: Vec<f64> = (0..num_channels).map(|_| r.f64()).collect::<Result<_>>()?;
        let count = r.u32()? as usize;
        let keys = entry_keys(num_channels, max_order);
        if count != keys.len() {
            return Err(Error::CorruptCache(format!(
                "expected {} entries, file declares {count}",
                keys.len()
            )));
        }
        let mut entries = Vec::with_capacity(count);
        for (channels, signs) in keys {
            let m = channels.len();
            if r.u32()? as usize != m {
                return Err(Error::CorruptCache("entry order out of sequence".into()));
            }
            for &c in &channels {
                if r.u32()? as usize != c {
                    return Err(Error::CorruptCache("entry channels out of sequence".into()));
                }
            }
            for &s in &signs {
                if r.u32()? != matches!(s, Sign::Plus) as u32 {
                    return Err(Error::CorruptCache("entry signs out of sequence".into()));
                }
            }
            let operator = r.cmat(dim)?;
            let slope_operators = if with_slopes {
                (0..m).map(|_| r.cmat(dim)).collect::<Result<_>>()?
            } else {
                Vec::new()
            };
            entries.push(DysonEntry { order: m, channels, signs, operator, slope_operators });
        }
        if r.pos != payload.len() {
            return Err(Error::CorruptCache("trailing bytes".into()));
        }
        Ok(Self {
            dim,
            num_channels,
            max_order,
            dt,
            with_slopes,
            carriers,
            fingerprint,
            entries,
        })
    }
}

fn build_entry(
    model: &SystemModel,
    dt: f64,
    channels: Vec<usize>,
    signs: Vec<Sign>,
    with_slopes: bool,
) -> DysonEntry {
    let m = channels.len();
    // signed carriers per position and their tail sums c_j
    let w: Vec<f64> = channels
        .iter()
        .zip(&signs)
        .map(|(&c, &s)| s.factor() * model.channels[c].carrier)
        .collect();
    let mut c_tail = vec![0.0f64; m + 1];
    for j in (0..m).rev() {
        c_tail[j] = c_tail[j + 1] + w[j];
    }
    // grid[j][k] = (lambda_k - c_j) dt
    let grid: Vec<Vec<f64>> = (0..=m)
        .map(|j| model.eigenvalues.iter().map(|&lam| (lam - c_tail[j]) * dt).collect())
        .collect();

    // the corner blocks carry the weighting f already, so the prefactors
    // match the chain-sum form verbatim
    let prefactor = C64::new(0.0, -0.5 * dt).powu(m as u32);
    let operator = ordered_corner(model, &channels, &grid, None).mapv(|z| z * prefactor);

    // D_p needs the duplicated-node corners for j < p, so the prefix sums
    // over j give every moment operator from m extra exponentials
    let mut slope_operators = Vec::new();
    if with_slopes {
        let n = model.dim();
        let factor = prefactor * dt;
        let mut acc = CMat::zeros((n, n));
        for j in 0..m {
            acc += &ordered_corner(model, &channels, &grid, Some(j));
            slope_operators.push(acc.mapv(|z| z * factor));
        }
    }
    DysonEntry { order: m, channels, signs, operator, slope_operators }
}

/// Top-right block of the exponential of the block-bidiagonal matrix whose
/// diagonal holds -i diag(nu_j) in latest-node-first order and whose
/// superdiagonal holds the position dipoles. With `duplicate = Some(j)` the
/// j-th node block appears twice, identity-coupled, which turns the divided
/// difference over each path into the node-duplicated one.
fn ordered_corner(
    model: &SystemModel,
    channels: &[usize],
    grid: &[Vec<f64>],
    duplicate: Option<usize>,
) -> CMat {
    let n = model.dim();
    let m = channels.len();
    let blocks = m + 1 + usize::from(duplicate.is_some());

    // node row j for each block, latest first, the duplicate adjacent
    let mut rows: Vec<usize> = (0..=m).rev().collect();
    if let Some(j) = duplicate {
        rows.insert(m - j, j);
    }

    // centering the nodes keeps the exponential's scaling shallow; the
    // pure-imaginary shift comes back as a unit-modulus phase
    let lo = grid.iter().flatten().cloned().fold(f64::INFINITY, f64::min);
    let hi = grid.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mu = 0.5 * (lo + hi);

    let mut b = CMat::zeros((blocks * n, blocks * n));
    for (r, &j) in rows.iter().enumerate() {
        for k in 0..n {
            b[[r * n + k, r * n + k]] = C64::new(0.0, -(grid[j][k] - mu));
        }
    }
    for r in 0..blocks - 1 {
        if rows[r] == rows[r + 1] {
            // the two copies of a duplicated node couple through identity
            for k in 0..n {
                b[[r * n + k, (r + 1) * n + k]] = C64::new(1.0, 0.0);
            }
        } else {
            // coupling between node blocks j and j - 1 is position j's dipole
            let x = &model.channels[channels[rows[r] - 1]].dipole;
            b.slice_mut(s![r * n..(r + 1) * n, (r + 1) * n..(r + 2) * n]).assign(x);
        }
    }
    let phase = C64::from_polar(1.0, -mu);
    expm(&b).slice(s![0..n, (blocks - 1) * n..blocks * n]).mapv(|z| z * phase)
}

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_cmat(buf: &mut Vec<u8>, a: &CMat) {
    for z in a.iter() {
        push_f64(buf, z.re);
        push_f64(buf, z.im);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::CorruptCache("truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn cmat(&mut self, dim: usize) -> Result<CMat> {
        let mut a = CMat::zeros((dim, dim));
        for r in 0..dim {
            for c in 0..dim {
                let re = self.f64()?;
                let im = self.f64()?;
                a[[r, c]] = C64::new(re, im);
            }
        }
        Ok(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::{frobenius_distance, DriveChannel};
    use crate::oracle::simplex_path_operator;
    use ndarray::array;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn random_model(rng: &mut ChaCha12Rng, n: usize, q: usize) -> SystemModel {
        let eigenvalues: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let channels = (0..q)
            .map(|_| {
                let mut x = CMat::zeros((n, n));
                for r in 0..n {
                    for c in r..n {
                        let z = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                        let z = if r == c { C64::new(z.re, 0.0) } else { z };
                        x[[r, c]] = z;
                        x[[c, r]] = z.conj();
                    }
                }
                DriveChannel { dipole: x, carrier: rng.gen_range(0.5..6.0) }
            })
            .collect();
        SystemModel::new(eigenvalues, channels).unwrap()
    }

    #[test]
    fn canonical_entry_enumeration() {
        let keys = entry_keys(2, 2);
        assert_eq!(keys.len(), 4 + 16);
        // first four: order 1, digits 0..3
        assert_eq!(keys[0], (vec![0], vec![Sign::Minus]));
        assert_eq!(keys[1], (vec![0], vec![Sign::Plus]));
        assert_eq!(keys[2], (vec![1], vec![Sign::Minus]));
        assert_eq!(keys[3], (vec![1], vec![Sign::Plus]));
        // order 2 starts with position 1 most significant
        assert_eq!(keys[4], (vec![0, 0], vec![Sign::Minus, Sign::Minus]));
        assert_eq!(keys[5], (vec![0, 0], vec![Sign::Minus, Sign::Plus]));
        assert_eq!(keys[8], (vec![0, 0], vec![Sign::Plus, Sign::Minus]));
        assert_eq!(keys[12], (vec![1, 0], vec![Sign::Minus, Sign::Minus]));
    }

    #[test]
    fn degenerate_first_order_closed_form() {
        // zero eigenvalues and carrier: S1 = -i dt/2 X for both signs
        let sx = array![
            [C64::new(0.0, 0.0), C64::new(1.0, 0.0)],
            [C64::new(1.0, 0.0), C64::new(0.0, 0.0)]
        ];
        let model = SystemModel::new(
            vec![0.0, 0.0],
            vec![DriveChannel { dipole: sx.clone(), carrier: 0.0 }],
        )
        .unwrap();
        let dt = 0.3;
        let exp = DysonExpansion::build(&model, dt, 1, false).unwrap();
        for e in &exp.entries {
            let expect = sx.mapv(|z| z * C64::new(0.0, -0.5 * dt));
            assert!(frobenius_distance(&e.operator, &expect) < 1e-14);
        }
    }

    #[test]
    fn first_order_matches_quadrature() {
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        for _ in 0..6 {
            let model = random_model(&mut rng, 3, 1);
            let dt = rng.gen_range(0.05..0.4);
            let exp = DysonExpansion::build(&model, dt, 1, false).unwrap();
            for e in &exp.entries {
                let w = e.signs[0].factor() * model.channels[0].carrier;
                let oracle = simplex_path_operator(&model, &[(0, w)], dt, 32, 1e-11).unwrap();
                let d = frobenius_distance(&e.operator, &oracle);
                assert!(d < 1e-10, "first order off by {d}");
            }
        }
    }

    #[test]
    fn second_order_matches_quadrature() {
        let mut rng = ChaCha12Rng::seed_from_u64(22);
        for _ in 0..3 {
            let model = random_model(&mut rng, 3, 2);
            let dt = rng.gen_range(0.05..0.3);
            let exp = DysonExpansion::build(&model, dt, 2, false).unwrap();
            for e in exp.entries.iter().filter(|e| e.order == 2) {
                let assignment: Vec<(usize, f64)> = e
                    .channels
                    .iter()
                    .zip(&e.signs)
                    .map(|(&c, &s)| (c, s.factor() * model.channels[c].carrier))
                    .collect();
                let oracle =
                    simplex_path_operator(&model, &assignment, dt, 48, 1e-11).unwrap();
                let d = frobenius_distance(&e.operator, &oracle);
                assert!(d < 1e-10, "second order off by {d}");
            }
        }
    }

    #[test]
    fn slope_operator_matches_carrier_derivative() {
        // two channels sharing a dipole but with distinct carriers, so a
        // finite-difference step in one carrier isolates one position
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let base = random_model(&mut rng, 3, 1);
        let x = base.channels[0].dipole.clone();
        let mk = |wa: f64, wb: f64| {
            SystemModel::new(
                base.eigenvalues.clone(),
                vec![
                    DriveChannel { dipole: x.clone(), carrier: wa },
                    DriveChannel { dipole: x.clone(), carrier: wb },
                ],
            )
            .unwrap()
        };
        let (wa, wb) = (1.7, 2.9);
        let dt = 0.21;
        let h = 1e-6;
        let exp = DysonExpansion::build(&mk(wa, wb), dt, 2, true).unwrap();
        // pick the order-2 entry beta = (0, 1), signs = (+, +)
        let e = exp
            .entries
            .iter()
            .find(|e| {
                e.order == 2
                    && e.channels == [0, 1]
                    && e.signs == [Sign::Plus, Sign::Plus]
            })
            .unwrap();
        let same = |exp: &DysonExpansion| {
            exp.entries
                .iter()
                .find(|e| {
                    e.order == 2
                        && e.channels == [0, 1]
                        && e.signs == [Sign::Plus, Sign::Plus]
                })
                .unwrap()
                .operator
                .clone()
        };
        // D_1 = -i dS/dw_1: position 1 is channel 0 with sign +, so step wa
        let sp = same(&DysonExpansion::build(&mk(wa + h, wb), dt, 2, false).unwrap());
        let sm = same(&DysonExpansion::build(&mk(wa - h, wb), dt, 2, false).unwrap());
        let fd1 = (&sp - &sm).mapv(|z| z * C64::new(0.0, -1.0) / (2.0 * h));
        assert!(frobenius_distance(&e.slope_operators[0], &fd1) < 1e-7);
        // D_2 = -i dS/dw_2: position 2 is channel 1 with sign +, so step wb
        let sp = same(&DysonExpansion::build(&mk(wa, wb + h), dt, 2, false).unwrap());
        let sm = same(&DysonExpansion::build(&mk(wa, wb - h), dt, 2, false).unwrap());
        let fd2 = (&sp - &sm).mapv(|z| z * C64::new(0.0, -1.0) / (2.0 * h));
        assert!(frobenius_distance(&e.slope_operators[1], &fd2) < 1e-7);
    }

    #[test]
    fn sparse_dipoles_are_walked_sparsely() {
        // a dipole with a single off-diagonal pair reaches only chains that
        // alternate between the two coupled levels
        let mut x = CMat::zeros((4, 4));
        x[[0, 1]] = C64::new(1.0, 0.0);
        x[[1, 0]] = C64::new(1.0, 0.0);
        let model = SystemModel::new(
            vec![0.1, 0.4, -0.3, 2.0],
            vec![DriveChannel { dipole: x, carrier: 1.0 }],
        )
        .unwrap();
        let exp = DysonExpansion::build(&model, 0.2, 2, false).unwrap();
        for e in exp.entries.iter().filter(|e| e.order == 2) {
            // second order maps 0 -> 1 -> 0 and 1 -> 0 -> 1 only
            for r in 0..4 {
                for c in 0..4 {
                    let allowed = (r == c) && r < 2;
                    if !allowed {
                        assert_eq!(e.operator[[r, c]], C64::new(0.0, 0.0));
                    }
                }
            }
        }
    }

    #[test]
    fn save_load_roundtrip_is_bitwise() {
        let mut rng = ChaCha12Rng::seed_from_u64(24);
        let model = random_model(&mut rng, 3, 1);
        let exp = DysonExpansion::build(&model, 0.125, 3, true).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.dysn");
        exp.save(&path).unwrap();
        let back = DysonExpansion::load(&path).unwrap();
        assert_eq!(back.dim, exp.dim);
        assert_eq!(back.max_order, exp.max_order);
        assert_eq!(back.dt.to_bits(), exp.dt.to_bits());
        assert_eq!(back.fingerprint, exp.fingerprint);
        assert_eq!(back.entries.len(), exp.entries.len());
        for (a, b) in exp.entries.iter().zip(&back.entries) {
            assert_eq!(a.channels, b.channels);
            assert_eq!(a.signs, b.signs);
            for (x, y) in a.operator.iter().zip(b.operator.iter()) {
                assert_eq!(x.re.to_bits(), y.re.to_bits());
                assert_eq!(x.im.to_bits(), y.im.to_bits());
            }
            assert_eq!(a.slope_operators.len(), b.slope_operators.len());
        }
        back.verify_model(&model).unwrap();
    }

    #[test]
    fn corruption_is_detected() {
        let mut rng = ChaCha12Rng::seed_from_u64(25);
        let model = random_model(&mut rng, 2, 1);
        let exp = DysonExpansion::build(&model, 0.1, 1, false).unwrap();
        let bytes = exp.to_bytes();

        // flipped payload byte
        let mut bad = bytes.clone();
        bad[bytes.len() / 2] ^= 0x40;
        assert!(matches!(DysonExpansion::from_bytes(&bad), Err(Error::CorruptCache(_))));

        // truncation
        assert!(matches!(
            DysonExpansion::from_bytes(&bytes[..bytes.len() - 9]),
            Err(Error::CorruptCache(_))
        ));

        // future version with a valid checksum
        let mut versioned = bytes[..bytes.len() - 4].to_vec();
        versioned[4..8].copy_from_slice(&99u32.to_le_bytes());
        let crc = crc32fast::hash(&versioned);
        versioned.extend_from_slice(&crc.to_le_bytes());
        assert!(matches!(
            DysonExpansion::from_bytes(&versioned),
            Err(Error::VersionMismatch { found: 99, expected: 1 })
        ));
    }

    #[test]
    fn stale_model_is_rejected() {
        let mut rng = ChaCha12Rng::seed_from_u64(26);
        let model = random_model(&mut rng, 2, 1);
        let other = random_model(&mut rng, 2, 1);
        let exp = DysonExpansion::build(&model, 0.1, 1, false).unwrap();
        assert!(matches!(exp.verify_model(&other), Err(Error::FingerprintMismatch)));
    }

    #[test]
    fn build_rejects_bad_inputs() {
        let mut rng = ChaCha12Rng::seed_from_u64(27);
        let model = random_model(&mut rng, 2, 1);
        assert!(DysonExpansion::build(&model, 0.0, 1, false).is_err());
        assert!(matches!(
            DysonExpansion::build(&model, 0.1, MAX_ORDER + 1, false),
            Err(Error::UnsupportedOrder { .. })
        ));
    }
}
