//! The oscillatory weighting function and its high-precision reference.
//!
//! `weight` over nodes (x_0, .., x_n) equals i^n times the divided
//! difference of exp(-i x) over those nodes. It is symmetric under node
//! permutation, bounded by 1 in magnitude for real nodes, and obeys the
//! shift identity exp(i a) f(x) = f(x - a 1). Its derivative with respect
//! to node j duplicates that node: df/dx_j = -i f(x, x_j).
//!
//! Two evaluation strategies keep double precision honest:
//! - well-separated nodes go through the two-point recursion
//!   f(x_0..x_n) = i (f drop-one - f drop-other) / (node difference),
//! - clustered nodes (including exact repeats) are summed by the confluent
//!   total-degree series around the cluster mean, which has no cancellation
//!   for small cluster diameters.
//!
//! `divided_difference_reference` recomputes the same quantity with 256-bit
//! arithmetic and the plain recursive table. It exists as a test oracle.

use std::cell::RefCell;
use std::collections::HashMap;

use astro_float::{BigFloat, Consts, RoundingMode};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// Hard cap on node-vector length (subset masks are kept in a u32).
pub const MAX_NODES: usize = 28;

/// Node sets whose diameter (after centering) is below this are evaluated
/// by the confluent series. Far wider than strictly needed; the series is
/// accurate whenever it converges quickly, the recursion only when nodes
/// are well separated.
const CLUSTER_DIAMETER: f64 = 0.25;

/// Series terms. At diameter 0.25 the tail after 44 terms is ~1e-70.
const SERIES_TERMS: usize = 44;

const I: C64 = C64::new(0.0, 1.0);
const ONE: C64 = C64::new(1.0, 0.0);
const ZERO: C64 = C64::new(0.0, 0.0);

/// A validated, non-empty vector of complex nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeVector(Vec<C64>);

impl NodeVector {
    pub fn new(nodes: Vec<C64>) -> Result<Self> {
        validate(&nodes)?;
        Ok(Self(nodes))
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

fn validate(nodes: &[C64]) -> Result<()> {
    if nodes.is_empty() {
        return Err(Error::EmptyNodes);
    }
    if nodes.len() > MAX_NODES {
        return Err(Error::TooManyNodes(nodes.len()));
    }
    if !nodes.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        return Err(Error::InvalidInput("non-finite node".into()));
    }
    Ok(())
}

#[inline]
fn exp_mi(x: C64) -> C64 {
    // exp(-i x)
    (C64::new(x.im, -x.re)).exp()
}

#[inline]
fn minus_i_pow(k: usize) -> C64 {
    match k % 4 {
        0 => ONE,
        1 => C64::new(0.0, -1.0),
        2 => C64::new(-1.0, 0.0),
        _ => I,
    }
}

/// Reusable buffers so the hot path (order-4 chain walks) does not allocate.
#[derive(Default)]
pub(crate) struct WeightScratch {
    centered: Vec<C64>,
    xs: Vec<f64>,
    table: Vec<C64>,
}

/// Evaluates the weighting function over the given nodes.
pub fn weight(nodes: &[C64]) -> Result<C64> {
    validate(nodes)?;
    let mut scratch = WeightScratch::default();
    Ok(weight_with(&mut scratch, nodes))
}

/// df/dx_j, computed exactly via node duplication: -i f(nodes, nodes[j]).
pub fn weight_derivative(nodes: &[C64], j: usize) -> Result<C64> {
    validate(nodes)?;
    if j >= nodes.len() {
        return Err(Error::IndexOutOfRange(format!(
            "node index {j} >= length {}",
            nodes.len()
        )));
    }
    let mut extended = Vec::with_capacity(nodes.len() + 1);
    extended.extend_from_slice(nodes);
    extended.push(nodes[j]);
    validate(&extended)?;
    let mut scratch = WeightScratch::default();
    Ok(C64::new(0.0, -1.0) * weight_with(&mut scratch, &extended))
}

/// Returns the pair (exp(i a) f(nodes), f(nodes - a)). The two coincide;
/// exposing both lets callers and tests check the identity directly.
pub fn weight_shift_check(nodes: &[C64], a: C64) -> Result<(C64, C64)> {
    validate(nodes)?;
    let mut scratch = WeightScratch::default();
    let lhs = (I * a).exp() * weight_with(&mut scratch, nodes);
    let shifted: Vec<C64> = nodes.iter().map(|&z| z - a).collect();
    let rhs = weight_with(&mut scratch, &shifted);
    Ok((lhs, rhs))
}

/// Core evaluator. Input must be validated.
pub(crate) fn weight_with(scratch: &mut WeightScratch, nodes: &[C64]) -> C64 {
    let len = nodes.len();
    if len == 1 {
        return exp_mi(nodes[0]);
    }
    // Shift to the centroid first: exp(i a) f(x) = f(x - a) keeps all later
    // arithmetic on diameter-sized numbers.
    let mean = nodes.iter().sum::<C64>() / len as f64;
    scratch.centered.clear();
    scratch.centered.extend(nodes.iter().map(|&z| z - mean));
    let all_real = scratch.centered.iter().all(|z| z.im == 0.0);
    let f_centered = if all_real {
        real_sorted_eval(scratch)
    } else {
        pivot_eval(&scratch.centered)
    };
    exp_mi(mean) * f_centered
}

/// Confluent total-degree series around the cluster mean. Exact for
/// repeated nodes; no cancellation when the diameter is small.
fn series_eval(nodes: &[C64]) -> C64 {
    let n = nodes.len() - 1;
    let mean = nodes.iter().sum::<C64>() / nodes.len() as f64;
    // Complete homogeneous symmetric polynomials h_k of the residuals,
    // built by the one-node-at-a-time recurrence.
    let mut h = [ZERO; SERIES_TERMS + 1];
    h[0] = ONE;
    for &x in nodes {
        let y = x - mean;
        for m in 1..=SERIES_TERMS {
            h[m] = h[m] + y * h[m - 1];
        }
    }
    // f(residuals) = sum_k (-i)^k h_k / (n+k)!; the i^n in the definition
    // cancels the (-i)^n from expanding the exponential.
    let mut fact = 1.0f64;
    for k in 1..=n {
        fact *= k as f64;
    }
    let mut acc = ZERO;
    let mut fk = fact;
    for (k, hk) in h.iter().enumerate() {
        if k > 0 {
            fk *= (n + k) as f64;
        }
        acc += minus_i_pow(k) * hk / fk;
    }
    exp_mi(mean) * acc
}

/// Real nodes: sort ascending, then run the contiguous-span table. Sorted
/// real spans have endpoint separation equal to the span diameter, so every
/// division is by a well-scaled number; small spans fall back to the series.
fn real_sorted_eval(scratch: &mut WeightScratch) -> C64 {
    scratch
        .centered
        .sort_unstable_by(|a, b| a.re.total_cmp(&b.re));
    let n = scratch.centered.len();
    scratch.xs.clear();
    scratch.xs.extend(scratch.centered.iter().map(|z| z.re));
    scratch.table.clear();
    scratch
        .table
        .extend(scratch.centered.iter().map(|&z| exp_mi(z)));
    for s in 1..n {
        for i in 0..(n - s) {
            let j = i + s;
            let diam = scratch.xs[j] - scratch.xs[i];
            scratch.table[i] = if diam < CLUSTER_DIAMETER {
                series_eval(&scratch.centered[i..=j])
            } else {
                I * (scratch.table[i + 1] - scratch.table[i]) / diam
            };
        }
    }
    scratch.table[0]
}

/// Complex nodes: recursive evaluation that always splits on the
/// best-separated pair, memoized over subset masks. Removing either element
/// of the most separated pair keeps divisions well-scaled regardless of how
/// the remaining nodes cluster.
fn pivot_eval(nodes: &[C64]) -> C64 {
    let full: u32 = if nodes.len() == 32 {
        u32::MAX
    } else {
        (1u32 << nodes.len()) - 1
    };
    let mut memo: HashMap<u32, C64> = HashMap::new();
    pivot_go(nodes, full, &mut memo)
}

fn pivot_go(nodes: &[C64], mask: u32, memo: &mut HashMap<u32, C64>) -> C64 {
    if let Some(&v) = memo.get(&mask) {
        return v;
    }
    let members: Vec<usize> = (0..nodes.len()).filter(|&k| mask & (1 << k) != 0).collect();
    let v = if members.len() == 1 {
        exp_mi(nodes[members[0]])
    } else {
        let (mut best_a, mut best_b, mut best_sep) = (members[0], members[1], -1.0f64);
        for (ai, &a) in members.iter().enumerate() {
            for &b in &members[ai + 1..] {
                let sep = (nodes[a] - nodes[b]).norm();
                if sep > best_sep {
                    (best_a, best_b, best_sep) = (a, b, sep);
                }
            }
        }
        if best_sep < CLUSTER_DIAMETER {
            let cluster: Vec<C64> = members.iter().map(|&k| nodes[k]).collect();
            series_eval(&cluster)
        } else {
            let fa = pivot_go(nodes, mask & !(1 << best_b), memo);
            let fb = pivot_go(nodes, mask & !(1 << best_a), memo);
            I * (fa - fb) / (nodes[best_a] - nodes[best_b])
        }
    };
    memo.insert(mask, v);
    v
}

// ---------------------------------------------------------------------------
// 256-bit reference (test oracle)

const HP_BITS: usize = 256;
const RM: RoundingMode = RoundingMode::ToEven;

thread_local! {
    static HP_CONSTS: RefCell<Consts> =
        RefCell::new(Consts::new().expect("constants cache allocation"));
}

#[derive(Clone)]
struct HpC {
    re: BigFloat,
    im: BigFloat,
}

impl HpC {
    fn from_c64(z: C64) -> Self {
        Self {
            re: BigFloat::from_f64(z.re, HP_BITS),
            im: BigFloat::from_f64(z.im, HP_BITS),
        }
    }

    fn sub(&self, o: &Self) -> Self {
        Self {
            re: self.re.sub(&o.re, HP_BITS, RM),
            im: self.im.sub(&o.im, HP_BITS, RM),
        }
    }

    fn div(&self, o: &Self) -> Self {
        let cc = o.re.mul(&o.re, HP_BITS, RM);
        let dd = o.im.mul(&o.im, HP_BITS, RM);
        let denom = cc.add(&dd, HP_BITS, RM);
        let ac = self.re.mul(&o.re, HP_BITS, RM);
        let bd = self.im.mul(&o.im, HP_BITS, RM);
        let bc = self.im.mul(&o.re, HP_BITS, RM);
        let ad = self.re.mul(&o.im, HP_BITS, RM);
        Self {
            re: ac.add(&bd, HP_BITS, RM).div(&denom, HP_BITS, RM),
            im: bc.sub(&ad, HP_BITS, RM).div(&denom, HP_BITS, RM),
        }
    }

    fn scale(&self, k: f64) -> Self {
        let k = BigFloat::from_f64(k, HP_BITS);
        Self { re: self.re.mul(&k, HP_BITS, RM), im: self.im.mul(&k, HP_BITS, RM) }
    }

    /// Multiplication by i^k.
    fn rot_i(&self, k: usize) -> Self {
        match k % 4 {
            0 => self.clone(),
            1 => Self { re: self.im.neg(), im: self.re.clone() },
            2 => Self { re: self.re.neg(), im: self.im.neg() },
            _ => Self { re: self.im.clone(), im: self.re.neg() },
        }
    }

    /// exp(-i z) for z = a + i b: e^b (cos a - i sin a).
    fn exp_mi(z: &Self, cc: &mut Consts) -> Self {
        let eb = z.im.exp(HP_BITS, RM, cc);
        let ca = z.re.cos(HP_BITS, RM, cc);
        let sa = z.re.sin(HP_BITS, RM, cc);
        Self {
            re: eb.mul(&ca, HP_BITS, RM),
            im: eb.mul(&sa, HP_BITS, RM).neg(),
        }
    }

    fn to_c64(&self) -> C64 {
        let re: f64 = format!("{}", self.re).parse().unwrap_or(f64::NAN);
        let im: f64 = format!("{}", self.im).parse().unwrap_or(f64::NAN);
        C64::new(re, im)
    }
}

/// i^n times the divided difference of exp(-i x), evaluated with the plain
/// recursive table in 256-bit arithmetic (about 77 significant digits).
/// Exactly repeated nodes use the confluent derivative cell
/// (-i)^s exp(-i x) / s!. Test oracle; not used by the solver.
pub fn divided_difference_reference(nodes: &[C64]) -> Result<C64> {
    validate(nodes)?;
    let mut sorted = nodes.to_vec();
    sorted.sort_unstable_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    let n = sorted.len();
    HP_CONSTS.with(|cell| {
        let cc = &mut *cell.borrow_mut();
        let hp: Vec<HpC> = sorted.iter().map(|&z| HpC::from_c64(z)).collect();
        let mut d: Vec<HpC> = hp.iter().map(|z| HpC::exp_mi(z, cc)).collect();
        for s in 1..n {
            let mut fact_s = 1.0f64;
            for k in 1..=s {
                fact_s *= k as f64;
            }
            for i in 0..(n - s) {
                let j = i + s;
                d[i] = if sorted[i] == sorted[j] {
                    // whole span is one repeated node
                    HpC::exp_mi(&hp[i], cc).rot_i(4 - (s % 4)).scale(1.0 / fact_s)
                } else {
                    let num = d[i + 1].sub(&d[i]);
                    let den = hp[j].sub(&hp[i]);
                    num.div(&den)
                };
            }
        }
        Ok(d[0].rot_i((n - 1) % 4).to_c64())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn close(a: C64, b: C64, tol: f64) {
        let scale = a.norm().max(b.norm()).max(1e-300);
        assert!(
            (a - b).norm() / scale < tol,
            "mismatch: {a} vs {b}, rel {}",
            (a - b).norm() / scale
        );
    }

    #[test]
    fn single_node_is_exp() {
        let x = C64::new(1.3, 0.0);
        close(weight(&[x]).unwrap(), exp_mi(x), 1e-15);
        let z = C64::new(-0.4, 0.8);
        close(weight(&[z]).unwrap(), exp_mi(z), 1e-15);
    }

    #[test]
    fn two_nodes_zero_pi() {
        // i (e^0 - e^{-i pi}) / (0 - pi) = -2i/pi
        let got = weight(&[C64::new(0.0, 0.0), C64::new(std::f64::consts::PI, 0.0)]).unwrap();
        close(got, C64::new(0.0, -2.0 / std::f64::consts::PI), 1e-14);
    }

    #[test]
    fn two_nodes_match_closed_form() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..200 {
            let a = C64::new(rng.gen_range(-8.0..8.0), rng.gen_range(-3.0..3.0));
            let b = C64::new(rng.gen_range(-8.0..8.0), rng.gen_range(-3.0..3.0));
            if (a - b).norm() < 1e-3 {
                continue;
            }
            let direct = I * (exp_mi(a) - exp_mi(b)) / (a - b);
            close(weight(&[a, b]).unwrap(), direct, 1e-12);
        }
    }

    #[test]
    fn repeated_node_is_confluent() {
        let x = C64::new(2.1, 0.0);
        close(weight(&[x, x]).unwrap(), exp_mi(x), 1e-14);
        // triple repeat: i^2 * phi''(x)/2 = i^2 (-i)^2 e^{-ix}/2 = e^{-ix}/2
        close(weight(&[x, x, x]).unwrap(), exp_mi(x) * 0.5, 1e-14);
    }

    #[test]
    fn permutation_symmetry() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for _ in 0..50 {
            let mut nodes: Vec<C64> = (0..5)
                .map(|_| C64::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)))
                .collect();
            let a = weight(&nodes).unwrap();
            nodes.shuffle(&mut rng);
            let b = weight(&nodes).unwrap();
            close(a, b, 1e-12);
        }
    }

    #[test]
    fn shift_identity_holds() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        for _ in 0..50 {
            let nodes: Vec<C64> = (0..4)
                .map(|_| C64::new(rng.gen_range(-6.0..6.0), rng.gen_range(-2.0..2.0)))
                .collect();
            let a = C64::new(rng.gen_range(-5.0..5.0), rng.gen_range(-1.0..1.0));
            let (lhs, rhs) = weight_shift_check(&nodes, a).unwrap();
            close(lhs, rhs, 1e-12);
        }
    }

    #[test]
    fn real_nodes_bounded_by_one() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..300 {
            let n = rng.gen_range(1..=5);
            let nodes: Vec<C64> =
                (0..n).map(|_| C64::new(rng.gen_range(-10.0..10.0), 0.0)).collect();
            let f = weight(&nodes).unwrap();
            assert!(f.norm() <= 1.0 + 1e-12, "|f| = {} for {nodes:?}", f.norm());
        }
    }

    #[test]
    fn derivative_single_node() {
        // d/dx e^{-ix} = -i e^{-ix}; at x = pi this is i.
        let got = weight_derivative(&[C64::new(std::f64::consts::PI, 0.0)], 0).unwrap();
        close(got, I, 1e-14);
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        for _ in 0..40 {
            let n = rng.gen_range(1..=4);
            let nodes: Vec<C64> = (0..n)
                .map(|_| C64::new(rng.gen_range(-4.0..4.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let j = rng.gen_range(0..n);
            let h = 1e-5;
            let mut plus = nodes.clone();
            plus[j] += C64::new(h, 0.0);
            let mut minus = nodes.clone();
            minus[j] -= C64::new(h, 0.0);
            let fd = (weight(&plus).unwrap() - weight(&minus).unwrap()) / (2.0 * h);
            let exact = weight_derivative(&nodes, j).unwrap();
            close(exact, fd, 1e-7);
            // analytic in each node: imaginary-direction step agrees too
            let mut plus_i = nodes.clone();
            plus_i[j] += C64::new(0.0, h);
            let mut minus_i = nodes.clone();
            minus_i[j] -= C64::new(0.0, h);
            let fd_i =
                (weight(&plus_i).unwrap() - weight(&minus_i).unwrap()) / C64::new(0.0, 2.0 * h);
            close(exact, fd_i, 1e-7);
        }
    }

    #[test]
    fn matches_reference_on_mixed_sets() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        for trial in 0..150 {
            let n = rng.gen_range(1..=5);
            let mut nodes: Vec<C64> = (0..n)
                .map(|_| C64::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)))
                .collect();
            // every third trial, plant a tight cluster
            if trial % 3 == 0 && n >= 2 {
                nodes[1] = nodes[0] + C64::new(1e-8, -0.4e-8);
            }
            let fast = weight(&nodes).unwrap();
            let slow = divided_difference_reference(&nodes).unwrap();
            close(fast, slow, 1e-11);
        }
    }

    #[test]
    fn pathological_close_endpoints_far_middle() {
        // endpoints nearly coincide while the middle node is far away in the
        // imaginary direction; naive sorted recursion would divide by ~2e-9
        let d = 1e-9;
        let nodes = [C64::new(-d, 0.0), C64::new(0.0, 10.0), C64::new(d, 0.0)];
        let fast = weight(&nodes).unwrap();
        let slow = divided_difference_reference(&nodes).unwrap();
        close(fast, slow, 1e-10);
    }

    #[test]
    fn reference_confluent_cells() {
        let x = C64::new(1.7, 0.0);
        close(divided_difference_reference(&[x, x]).unwrap(), exp_mi(x), 1e-15);
        close(
            divided_difference_reference(&[x, x, x]).unwrap(),
            exp_mi(x) * 0.5,
            1e-15,
        );
        close(
            divided_difference_reference(&[C64::new(0.0, 0.0), C64::new(std::f64::consts::PI, 0.0)])
                .unwrap(),
            C64::new(0.0, -2.0 / std::f64::consts::PI),
            1e-15,
        );
    }

    #[test]
    fn errors_are_reported() {
        assert!(matches!(weight(&[]), Err(Error::EmptyNodes)));
        let too_many = vec![C64::new(0.0, 0.0); MAX_NODES + 1];
        assert!(matches!(weight(&too_many), Err(Error::TooManyNodes(_))));
        assert!(matches!(
            weight_derivative(&[C64::new(0.0, 0.0)], 1),
            Err(Error::IndexOutOfRange(_))
        ));
        assert!(NodeVector::new(vec![]).is_err());
        assert_eq!(NodeVector::new(vec![C64::new(1.0, 0.0)]).unwrap().len(), 1);
    }
}
