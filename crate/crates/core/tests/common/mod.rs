//! Dense-matrix oracles and state builders shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use qsource_core::lattice::{GridSpec, HamiltonianSpec, WaveFunction};
use qsource_core::C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// `G = -iH + λ φφ*`.
pub fn generator(h: &DMatrix<C64>, phi: &DVector<C64>, lambda: f64) -> DMatrix<C64> {
    h.map(|z| z * C64::new(0.0, -1.0)) + phi * phi.adjoint() * c(lambda)
}

pub fn evolve(g: &DMatrix<C64>, psi: &DVector<C64>, t: f64) -> DVector<C64> {
    (g * c(t)).exp() * psi
}

/// Exact `ρ(t) = e^{Gt} ρ₀ e^{G*t} + 2|λ| ∫₀ᵗ e^{Gs} φφ* e^{G*s} ds` from the
/// exponential of the augmented Kronecker generator.
pub fn density(h: &DMatrix<C64>, phi: &DVector<C64>, lambda: f64, rho0: &DMatrix<C64>, t: f64) -> DMatrix<C64> {
    let n = h.nrows();
    let g = generator(h, phi, lambda);
    let id = DMatrix::<C64>::identity(n, n);
    // column-major vec: vec(Gρ + ρG*) = (I ⊗ G + conj(G) ⊗ I) vec(ρ)
    let k = id.kronecker(&g) + g.map(|z| z.conj()).kronecker(&id);
    let src = phi * phi.adjoint() * c(2.0 * lambda.abs());
    let mut aug = DMatrix::<C64>::zeros(n * n + 1, n * n + 1);
    aug.view_mut((0, 0), (n * n, n * n)).copy_from(&k);
    for (i, v) in src.iter().enumerate() {
        aug[(i, n * n)] = *v;
    }
    let e = (aug * c(t)).exp();
    let mut out = DMatrix::<C64>::zeros(n, n);
    let r0: Vec<C64> = rho0.iter().copied().collect();
    for i in 0..n * n {
        let mut v = e[(i, n * n)];
        for (j, r) in r0.iter().enumerate() {
            v += e[(i, j)] * r;
        }
        out[i] = v;
    }
    out
}

pub fn trace(m: &DMatrix<C64>) -> f64 {
    (0..m.nrows()).map(|i| m[(i, i)].re).sum()
}

/// Random Hermitian matrix with entries of unit scale.
pub fn random_hermitian(n: usize, seed: u64) -> DMatrix<C64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::from_fn(n, n, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    (&a + a.adjoint()) * c(0.5)
}

pub fn random_unit(n: usize, seed: u64) -> DVector<C64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = DVector::from_fn(n, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    let norm = v.norm();
    v / c(norm)
}

pub fn to_vec(v: &DVector<C64>) -> Vec<C64> {
    v.iter().copied().collect()
}

/// `H = x` on a line grid with `φ(x) = (π(1+x²))^{-1/2}` (not renormalized).
pub fn lorentzian_model(length: f64, dx: f64) -> (GridSpec, HamiltonianSpec, WaveFunction) {
    let n = (length / dx).round() as usize;
    let g = GridSpec::line(n, length).unwrap();
    let h = HamiltonianSpec::position_operator(g);
    let phi = WaveFunction::sample_position(g, |x| c(1.0 / (PI * (1.0 + x[0] * x[0])).sqrt()));
    (g, h, phi)
}

/// Normalized `(πσ²)^{-1/4} e^{-(x-x0)²/2σ² + ip0 x}`.
pub fn gaussian(g: GridSpec, sigma: f64, x0: f64, p0: f64) -> WaveFunction {
    WaveFunction::sample_position(g, |x| {
        C64::from_polar((PI * sigma * sigma).powf(-0.25) * (-0.5 * ((x[0] - x0) / sigma).powi(2)).exp(), p0 * x[0])
    })
}

pub fn max_abs_diff(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}
