//! Quadrature rules: Gauss–Legendre nodes, adaptive Gauss–Kronrod (7/15) for
//! complex integrands, and cumulative trapezoid sums.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;

use crate::{Error, Result, C64};

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, z);
            let dz = p / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre(n, z);
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

fn legendre(n: usize, z: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, z);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    (p1, n as f64 * (z * p1 - p0) / (z * z - 1.0))
}

/// A fixed Gauss–Legendre rule mapped onto arbitrary intervals.
#[derive(Clone, Debug)]
pub struct GaussRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussRule {
    pub fn new(n: usize) -> Self {
        let (nodes, weights) = gauss_legendre(n);
        GaussRule { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Mapped nodes and weights on `[a, b]`.
    pub fn on(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        self.nodes.iter().zip(&self.weights).map(move |(x, w)| (c + h * x, h * w))
    }

    pub fn integrate<F: FnMut(f64) -> C64>(&self, a: f64, b: f64, mut f: F) -> C64 {
        self.on(a, b).map(|(x, w)| f(x) * w).sum()
    }
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn kronrod15<F: FnMut(f64) -> C64>(f: &mut F, a: f64, b: f64) -> (C64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut vals = [(C64::new(0.0, 0.0), 0.0); 15];
    let fc = f(c);
    vals[14] = (fc, WGK[7]);
    let mut k = fc * WGK[7];
    let mut g = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let (fl, fr) = (f(c - dx), f(c + dx));
        vals[2 * j] = (fl, WGK[j]);
        vals[2 * j + 1] = (fr, WGK[j]);
        k += (fl + fr) * WGK[j];
        if j % 2 == 1 {
            g += (fl + fr) * WG[j / 2];
        }
    }
    // QUADPACK error scaling and round-off floor
    let mean = k * 0.5;
    let resabs: f64 = vals.iter().map(|(v, w)| w * v.norm()).sum::<f64>() * h.abs();
    let resasc: f64 = vals.iter().map(|(v, w)| w * (v - mean).norm()).sum::<f64>() * h.abs();
    let mut err = ((k - g) * h).norm();
    if resasc != 0.0 && err != 0.0 {
        err = resasc * (200.0 * err / resasc).powf(1.5).min(1.0);
    }
    err = err.max(50.0 * f64::EPSILON * resabs);
    (k * h, err)
}

struct Piece {
    a: f64,
    b: f64,
    value: C64,
    err: f64,
}

impl PartialEq for Piece {
    fn eq(&self, o: &Self) -> bool {
        self.err == o.err
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Piece {
    fn cmp(&self, o: &Self) -> Ordering {
        self.err.total_cmp(&o.err)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Quadrature {
    pub value: C64,
    pub error: f64,
    pub evaluations: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_pieces: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance { abs: 1e-12, rel: 1e-12, max_pieces: 20_000 }
    }
}

impl Tolerance {
    pub fn new(abs: f64, rel: f64) -> Self {
        Tolerance { abs, rel, ..Default::default() }
    }
}

/// Adaptive Gauss–Kronrod integration of `f` over the partition given by
/// `breaks` (sorted, at least two points).
pub fn integrate_breaks<F: FnMut(f64) -> C64>(
    mut f: F,
    breaks: &[f64],
    tol: Tolerance,
) -> Result<Quadrature> {
    if breaks.len() < 2 {
        return Err(Error::Contract("need at least two break points".into()));
    }
    let mut heap = BinaryHeap::new();
    let mut total = C64::new(0.0, 0.0);
    let mut err = 0.0;
    let mut evals = 0;
    for w in breaks.windows(2) {
        if w[1] <= w[0] {
            continue;
        }
        let (v, e) = kronrod15(&mut f, w[0], w[1]);
        evals += 15;
        total += v;
        err += e;
        heap.push(Piece { a: w[0], b: w[1], value: v, err: e });
    }
    loop {
        if !total.re.is_finite() || !total.im.is_finite() {
            return Err(Error::Quadrature("non-finite integrand".into()));
        }
        if err <= tol.abs.max(tol.rel * total.norm()) {
            return Ok(Quadrature { value: total, error: err, evaluations: evals });
        }
        if heap.len() >= tol.max_pieces {
            return Err(Error::Quadrature(format!(
                "no convergence after {} pieces (error {err:.3e}, value {total:.6e})",
                heap.len()
            )));
        }
        let p = heap.pop().expect("heap is never empty here");
        let m = 0.5 * (p.a + p.b);
        if m <= p.a || m >= p.b {
            // interval exhausted at machine resolution
            return Ok(Quadrature { value: total, error: err, evaluations: evals });
        }
        let (v1, e1) = kronrod15(&mut f, p.a, m);
        let (v2, e2) = kronrod15(&mut f, m, p.b);
        evals += 30;
        total += v1 + v2 - p.value;
        err += e1 + e2 - p.err;
        heap.push(Piece { a: p.a, b: m, value: v1, err: e1 });
        heap.push(Piece { a: m, b: p.b, value: v2, err: e2 });
    }
}

pub fn integrate<F: FnMut(f64) -> C64>(f: F, a: f64, b: f64, tol: Tolerance) -> Result<Quadrature> {
    integrate_breaks(f, &[a, b], tol)
}

/// Integral over `[a, ∞)` for integrands that decay on the length `scale`.
/// Sums adaptive pieces on geometrically growing intervals until two
/// consecutive pieces fall below the tolerance.
pub fn integrate_to_infinity<F: FnMut(f64) -> C64>(
    mut f: F,
    a: f64,
    scale: f64,
    tol: Tolerance,
) -> Result<Quadrature> {
    let mut total = C64::new(0.0, 0.0);
    let mut err = 0.0;
    let mut evals = 0;
    let mut lo = a;
    let mut width = scale;
    let mut quiet = 0;
    for _ in 0..200 {
        let hi = lo + width;
        let piece_tol = Tolerance { abs: tol.abs * 0.1, ..tol };
        let q = integrate(&mut f, lo, hi, piece_tol)?;
        total += q.value;
        err += q.error;
        evals += q.evaluations;
        if q.value.norm() <= tol.abs.max(tol.rel * total.norm()) * 0.1 {
            quiet += 1;
            if quiet >= 2 {
                return Ok(Quadrature { value: total, error: err, evaluations: evals });
            }
        } else {
            quiet = 0;
        }
        lo = hi;
        width *= 2.0;
    }
    Err(Error::Quadrature("integrand does not decay".into()))
}

/// Cumulative trapezoid sums of uniformly spaced samples; `out[0] = 0`.
pub fn cumulative_trapezoid(y: &[f64], h: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(y.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in y.windows(2) {
        acc += 0.5 * h * (w[0] + w[1]);
        out.push(acc);
    }
    out.truncate(y.len());
    out
}

/// Trapezoid weights for (possibly nonuniform) sorted abscissae.
pub fn trapezoid_weights(t: &[f64]) -> Vec<f64> {
    let mut w = vec![0.0; t.len()];
    for i in 1..t.len() {
        let h = 0.5 * (t[i] - t[i - 1]);
        w[i - 1] += h;
        w[i] += h;
    }
    w
}
