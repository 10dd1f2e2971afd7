//! Eigenvalues of `iH + λP_φ` from the characteristic equation
//! `λ m̂(α) = 1`, with `m̂(α) = ⟨φ, (α - iH)^{-1} φ⟩ = ∫₀^∞ e^{-αt} m̄(t) dt`.
//!
//! The generator of the dynamics, `-iH + λP_φ`, has the conjugate eigenvalue
//! `ᾱ` with eigenvector `(ᾱ + iH)^{-1} φ`; both give the growth rate `2 Re α`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::lattice::{HamiltonianSpec, WaveFunction};
use crate::overlap::{OverlapFunction, OverlapKind};
use crate::quad::{self, Tolerance};
use crate::{Error, Result, C64};

/// Smallest admissible `Re α`.
pub const ALPHA_MIN: f64 = 1e-6;
const ROOT_TOL: f64 = 1e-10;
const RESIDUAL_TOL: f64 = 1e-6;
const CONTOUR_SAFETY: f64 = 1e-8;

fn check_alpha(alpha: C64) -> Result<()> {
    if !(alpha.re >= ALPHA_MIN * (1.0 - 1e-9)) || !alpha.im.is_finite() {
        return Err(Error::Contract(format!("Re α = {} below {ALPHA_MIN}", alpha.re)));
    }
    Ok(())
}

/// `m̂(α)` from the spectral measure of the overlap.
pub fn laplace_overlap(m: &OverlapFunction, alpha: C64) -> Result<C64> {
    check_alpha(alpha)?;
    match m.kind() {
        OverlapKind::ClosedLorentzian => Ok(1.0 / (alpha + 1.0)),
        OverlapKind::MatrixSpectral { frequencies, weights } | OverlapKind::GridNumeric { frequencies, weights } => {
            Ok(frequencies.iter().zip(weights).map(|(e, w)| *w / (alpha - C64::new(0.0, *e))).sum())
        }
        OverlapKind::GaussianFree { .. } | OverlapKind::RadialQuadrature { .. } => {
            let (profile, a) = m.radial_measure().expect("continuous overlaps carry a radial measure");
            let rc = profile.cutoff();
            let mut breaks: Vec<f64> = (0..=16).map(|i| rc * i as f64 / 16.0).collect();
            if alpha.im > 0.0 {
                // resolvent peak at a r² = Im α with half-width Re α / (2 a r0)
                let r0 = (alpha.im / a).sqrt();
                let width = alpha.re / (2.0 * a * r0);
                breaks.push(r0);
                for k in -2..=8 {
                    let d = width * 10f64.powi(k);
                    breaks.push(r0 - d);
                    breaks.push(r0 + d);
                }
            }
            breaks.retain(|r| (0.0..=rc).contains(r));
            breaks.sort_by(f64::total_cmp);
            breaks.dedup();
            let q = quad::integrate_breaks(
                |r| profile.radial_weight(r) / (alpha - C64::new(0.0, a * r * r)),
                &breaks,
                Tolerance { abs: 1e-14, rel: 1e-11, max_pieces: 50_000 },
            )?;
            Ok(q.value)
        }
    }
}

/// `m̂(α) = ∫₀^∞ e^{-αt} m̄(t) dt` by quadrature in time.
pub fn laplace_overlap_time(m: &OverlapFunction, alpha: C64) -> Result<C64> {
    check_alpha(alpha)?;
    let mut failure = None;
    let q = quad::integrate_to_infinity(
        |t| match m.eval(t) {
            Ok(z) => (-alpha * t).exp() * z.conj(),
            Err(e) => {
                failure.get_or_insert(e);
                C64::new(0.0, 0.0)
            }
        },
        0.0,
        (1.0 / alpha.norm()).min(1.0),
        Tolerance::new(1e-13, 1e-11),
    )?;
    match failure {
        Some(e) => Err(e),
        None => Ok(q.value),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Characteristic,
    Quartic,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RootDiagnostics {
    pub newton_iterations: usize,
    /// Depth of the rectangle bisection; 0 when Newton converged directly.
    pub bisection_depth: usize,
    /// Roots counted inside the search rectangle, when a count was needed.
    pub roots_in_contour: Option<usize>,
    /// `|λ m̂(α) - 1|`.
    pub characteristic_residual: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EigenvalueResult {
    pub lambda: f64,
    pub alpha: C64,
    pub method: Method,
    /// `‖(iH+λP)ψ - αψ‖/‖ψ‖` for `ψ = (α - iH)^{-1}φ` on validation nodes.
    pub residual: f64,
    pub diagnostics: RootDiagnostics,
}

impl EigenvalueResult {
    /// Growth rate `2 Re α` of `N(t)`.
    pub fn growth_rate(&self) -> f64 {
        2.0 * self.alpha.re
    }
}

/// Eigen-residual of `ψ = (α - iH)^{-1} φ`, written on the nodes of the
/// spectral measure where `H` acts by multiplication.
pub fn eigen_residual(m: &OverlapFunction, lambda: f64, alpha: C64) -> Result<f64> {
    let (e, w) = m.spectral_nodes(Some(alpha.im))?;
    let mut overlap = C64::new(0.0, 0.0);
    let (mut psi_sq, mut mass) = (0.0, 0.0);
    for (e, w) in e.iter().zip(&w) {
        let psi = 1.0 / (alpha - C64::new(0.0, *e));
        overlap += psi * w;
        psi_sq += psi.norm_sqr() * w;
        mass += w;
    }
    // (iH - α)ψ = -φ, so the residual vector is (λ⟨φ,ψ⟩ - 1) φ
    Ok((lambda * overlap - 1.0).norm() * mass.sqrt() / psi_sq.sqrt())
}

/// Rectangle `[re_min, re_max] × [im_min, im_max]` in the α-plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contour {
    pub re_min: f64,
    pub re_max: f64,
    pub im_min: f64,
    pub im_max: f64,
}

impl Contour {
    /// `[α_min, R] × [-R, R]`.
    pub fn half_plane(radius: f64) -> Self {
        Contour { re_min: ALPHA_MIN, re_max: radius, im_min: -radius, im_max: radius }
    }

    /// Search rectangle for a coupling: `Re α ≤ λ m(0)` for every root, and
    /// `Im α` is searched over the spectral range padded by `2λ m(0) + 1`
    /// (the range `[-10, 10]` stands in for continuous spectra).
    pub fn for_coupling(m: &OverlapFunction, lambda: f64) -> Self {
        let reach = lambda.abs() * m.mass();
        let (lo, hi) = match m.kind() {
            OverlapKind::MatrixSpectral { frequencies, .. } | OverlapKind::GridNumeric { frequencies, .. } => {
                let lo = frequencies.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = frequencies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (lo, hi)
            }
            _ => (-10.0, 10.0),
        };
        let pad = 2.0 * reach + 1.0;
        Contour { re_min: ALPHA_MIN, re_max: 2.0 * reach + 1.0, im_min: lo - pad, im_max: hi + pad }
    }

    fn corners(&self) -> [C64; 4] {
        [
            C64::new(self.re_min, self.im_min),
            C64::new(self.re_max, self.im_min),
            C64::new(self.re_max, self.im_max),
            C64::new(self.re_min, self.im_max),
        ]
    }

    fn split(&self, frac: f64) -> (Contour, Contour) {
        if self.re_max - self.re_min >= self.im_max - self.im_min {
            let x = self.re_min + frac * (self.re_max - self.re_min);
            (Contour { re_max: x, ..*self }, Contour { re_min: x, ..*self })
        } else {
            let y = self.im_min + frac * (self.im_max - self.im_min);
            (Contour { im_max: y, ..*self }, Contour { im_min: y, ..*self })
        }
    }

    fn centre(&self) -> C64 {
        C64::new(0.5 * (self.re_min + self.re_max), 0.5 * (self.im_min + self.im_max))
    }

    fn contains(&self, z: C64) -> bool {
        (self.re_min..=self.re_max).contains(&z.re) && (self.im_min..=self.im_max).contains(&z.im)
    }
}

/// Winding number of `f` around the rectangle and the smallest `|f|` seen.
fn winding<F: Fn(C64) -> Result<C64> + Sync>(f: &F, c: &Contour) -> Result<(i64, f64)> {
    let corners = c.corners();
    let mut total = 0.0;
    let mut min_abs = f64::INFINITY;
    for i in 0..4 {
        let (za, zb) = (corners[i], corners[(i + 1) % 4]);
        let samples = 64;
        let pts: Vec<(f64, C64)> = (0..=samples)
            .into_par_iter()
            .map(|k| {
                let s = k as f64 / samples as f64;
                f(za + (zb - za) * s).map(|v| (s, v))
            })
            .collect::<Result<_>>()?;
        for w in pts.windows(2) {
            total += refine_arg(f, za, zb, w[0], w[1], 0, &mut min_abs)?;
        }
        min_abs = min_abs.min(pts[0].1.norm());
    }
    Ok(((total / (2.0 * PI)).round() as i64, min_abs))
}

fn refine_arg<F: Fn(C64) -> Result<C64>>(
    f: &F,
    za: C64,
    zb: C64,
    (s0, f0): (f64, C64),
    (s1, f1): (f64, C64),
    depth: usize,
    min_abs: &mut f64,
) -> Result<f64> {
    *min_abs = min_abs.min(f1.norm());
    let step = (f1 / f0).arg();
    if step.abs() < PI / 4.0 || depth >= 40 {
        return Ok(step);
    }
    let sm = 0.5 * (s0 + s1);
    let fm = f(za + (zb - za) * sm)?;
    Ok(refine_arg(f, za, zb, (s0, f0), (sm, fm), depth + 1, min_abs)?
        + refine_arg(f, za, zb, (sm, fm), (s1, f1), depth + 1, min_abs)?)
}

fn characteristic(m: &OverlapFunction, lambda: f64) -> impl Fn(C64) -> Result<C64> + Sync + '_ {
    move |alpha| Ok(lambda * laplace_overlap(m, alpha)? - 1.0)
}

/// Zeros of `λ m̂(α) - 1` inside `contour`, by the argument principle.
/// A contour passing within the safety margin of a zero is enlarged slightly,
/// at most three times.
pub fn count_roots_halfplane(m: &OverlapFunction, lambda: f64, contour: &Contour) -> Result<usize> {
    let f = characteristic(m, lambda);
    let mut c = *contour;
    let mut min_abs = f64::INFINITY;
    for attempt in 0..=3 {
        let (n, low) = winding(&f, &c)?;
        if low > CONTOUR_SAFETY {
            return Ok(n.max(0) as usize);
        }
        min_abs = min_abs.min(low);
        let grow = 1.0 + 0.0173 * (attempt + 1) as f64;
        c = Contour {
            re_min: c.re_min * (1.0 + 0.37 * (attempt + 1) as f64),
            re_max: c.re_max * grow,
            im_min: c.im_min * grow - 1e-3,
            im_max: c.im_max * grow + 1e-3,
        };
    }
    Err(Error::ContourUnresolved { min_abs, attempts: 4 })
}

struct Newton {
    alpha: C64,
    iterations: usize,
    fabs: f64,
}

fn newton<F: Fn(C64) -> Result<C64>>(f: &F, start: C64) -> Result<Newton> {
    let mut alpha = start;
    let mut fa = f(alpha)?;
    for it in 1..=60 {
        let h = 1e-4 * alpha.re.min(alpha.norm()).max(1e-12);
        let d = (f(alpha + h)? - f(alpha - h)?) / (2.0 * h);
        if d.norm() == 0.0 || !d.re.is_finite() {
            break;
        }
        let mut next = alpha - fa / d;
        if next.re < ALPHA_MIN {
            // stay in the half-plane where m̂ is defined
            next.re = (0.5 * alpha.re).max(ALPHA_MIN);
        }
        let fn_ = f(next)?;
        let moved = (next - alpha).norm();
        alpha = next;
        fa = fn_;
        if fa.norm() <= 1e-13 || moved <= 1e-15 * alpha.norm() {
            return Ok(Newton { alpha, iterations: it, fabs: fa.norm() });
        }
    }
    if fa.norm() <= ROOT_TOL && alpha.re > ALPHA_MIN {
        return Ok(Newton { alpha, iterations: 60, fabs: fa.norm() });
    }
    Err(Error::NewtonDiverged(format!("|F| = {:.3e} at α = {alpha}", fa.norm())))
}

fn accept(n: &Newton) -> bool {
    n.fabs <= ROOT_TOL && n.alpha.re > ALPHA_MIN
}

/// Root of `λ m̂(α) = 1` with `Re α > 0`, by Newton from `guess` (default
/// `α₀ = λ`), falling back to rectangle bisection with root counts.
pub fn solve_characteristic(m: &OverlapFunction, lambda: f64, guess: Option<C64>) -> Result<EigenvalueResult> {
    if !lambda.is_finite() {
        return Err(Error::Contract("coupling must be finite".into()));
    }
    let f = characteristic(m, lambda);
    let mut diag = RootDiagnostics::default();
    if lambda <= 0.0 {
        let n = count_roots_halfplane(m, lambda, &Contour::for_coupling(m, lambda))?;
        if n == 0 {
            return Err(Error::NoRoot);
        }
        return Err(Error::Contract(format!("{n} roots counted for λ = {lambda} ≤ 0")));
    }
    let start = guess.unwrap_or(C64::new(lambda.max(ALPHA_MIN), 0.0));
    let found = match newton(&f, start) {
        Ok(n) if accept(&n) => {
            diag.newton_iterations = n.iterations;
            n
        }
        _ => {
            let mut rect = Contour::for_coupling(m, lambda);
            let total = count_roots_halfplane(m, lambda, &rect)?;
            diag.roots_in_contour = Some(total);
            if total == 0 {
                return Err(Error::NoRoot);
            }
            let mut hit = None;
            for depth in 1..=60 {
                diag.bisection_depth = depth;
                if let Ok(n) = newton(&f, rect.centre()) {
                    if accept(&n) && rect.contains(n.alpha) {
                        diag.newton_iterations += n.iterations;
                        hit = Some(n);
                        break;
                    }
                }
                let mut chosen = None;
                for k in 0..4 {
                    let (a, b) = rect.split(0.5 + 0.0131 * k as f64);
                    match winding(&f, &a) {
                        Ok((n, low)) if low > CONTOUR_SAFETY => {
                            chosen = Some(if n > 0 { a } else { b });
                            break;
                        }
                        Ok(_) => continue,
                        Err(e) => return Err(e),
                    }
                }
                rect = chosen.ok_or(Error::ContourUnresolved { min_abs: CONTOUR_SAFETY, attempts: 4 })?;
            }
            hit.ok_or_else(|| Error::NewtonDiverged("bisection exhausted".into()))?
        }
    };
    diag.characteristic_residual = found.fabs;
    let residual = eigen_residual(m, lambda, found.alpha)?;
    if residual > RESIDUAL_TOL {
        return Err(Error::NewtonDiverged(format!("eigen-residual {residual:.3e} at α = {}", found.alpha)));
    }
    Ok(EigenvalueResult { lambda, alpha: found.alpha, method: Method::Characteristic, residual, diagnostics: diag })
}

/// Normalized eigenvector `(ᾱ + iH)^{-1} φ` of the generator `-iH + λP_φ`,
/// the mode that dominates `ρ(t)` in the exponential regime.
pub fn condensate_mode(h: &HamiltonianSpec, phi: &WaveFunction, alpha: C64) -> Result<WaveFunction> {
    let f = h.to_frame(phi)?;
    let amps = f
        .iter()
        .zip(h.frequencies())
        .map(|(a, e)| a / (alpha.conj() + C64::new(0.0, e)))
        .collect();
    h.from_frame(amps, h.native_space())?.normalized()
}

/// Roots of `p(z) = z⁴ + 2iz³ + (λi-2)z² - (2λ+i)z - (3/2)λi`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuarticRoots {
    pub lambda: f64,
    pub roots: [C64; 4],
    /// Root with the largest (positive) imaginary part.
    pub selected: C64,
    /// `max_k |p(z_k)| / max |coefficient|`.
    pub polynomial_residual: f64,
    /// `(3/2π) ∫_ℝ dk / ((k⁶+1)(k² - z0²))`, expected to equal `-i/λ`.
    pub contour_identity: C64,
}

impl QuarticRoots {
    pub fn coefficients(lambda: f64) -> [C64; 5] {
        [
            C64::new(1.0, 0.0),
            C64::new(0.0, 2.0),
            C64::new(-2.0, lambda),
            C64::new(-2.0 * lambda, -1.0),
            C64::new(0.0, -1.5 * lambda),
        ]
    }

    pub fn eval(lambda: f64, z: C64) -> C64 {
        Self::coefficients(lambda).iter().fold(C64::new(0.0, 0.0), |acc, c| acc * z + c)
    }

    /// Relative error of the contour identity.
    pub fn identity_error(&self) -> f64 {
        let target = C64::new(0.0, -1.0 / self.lambda);
        (self.contour_identity - target).norm() / target.norm()
    }
}

fn quartic_derivative(lambda: f64, z: C64) -> C64 {
    let c = QuarticRoots::coefficients(lambda);
    ((c[0] * 4.0 * z + c[1] * 3.0) * z + c[2] * 2.0) * z + c[3]
}

fn contour_identity(z0: C64) -> Result<C64> {
    let z2 = z0 * z0;
    let g = |k: f64| C64::new(3.0 / PI / (k.powi(6) + 1.0), 0.0) / (k * k - z2);
    let r0 = z0.re.abs();
    let width = (z2.im.abs() / (2.0 * r0.max(1e-300))).max(1e-300);
    let outer = 4.0 + 2.0 * r0;
    let mut breaks: Vec<f64> = (0..=8).map(|i| outer * i as f64 / 8.0).collect();
    breaks.push(r0);
    for k in -2..=8 {
        let d = width * 10f64.powi(k);
        breaks.push(r0 - d);
        breaks.push(r0 + d);
    }
    breaks.retain(|r| (0.0..=outer).contains(r));
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let tol = Tolerance { abs: 1e-15, rel: 1e-12, max_pieces: 50_000 };
    let inner = quad::integrate_breaks(g, &breaks, tol)?;
    let tail = quad::integrate_to_infinity(g, outer, outer, tol)?;
    Ok(inner.value + tail.value)
}

/// Quartic route for the explicit `d = 3` profile with `a = 1`:
/// `α = i z0²`, eigenvector `(H₀ - z0²)^{-1} φ`.
pub fn quartic_alpha(lambda: f64) -> Result<(QuarticRoots, EigenvalueResult)> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Contract(format!("quartic route needs λ > 0 (got {lambda})")));
    }
    let c = QuarticRoots::coefficients(lambda);
    let companion = DMatrix::from_fn(4, 4, |i, j| {
        if i == 0 {
            -c[j + 1]
        } else if i == j + 1 {
            C64::new(1.0, 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    });
    let eig = companion
        .schur()
        .eigenvalues()
        .ok_or_else(|| Error::Contract("companion Schur form not triangular".into()))?;
    let mut roots = [C64::new(0.0, 0.0); 4];
    for (r, z) in roots.iter_mut().zip(eig.iter()) {
        let mut z = *z;
        for _ in 0..3 {
            let d = quartic_derivative(lambda, z);
            if d.norm() > 0.0 {
                z -= QuarticRoots::eval(lambda, z) / d;
            }
        }
        *r = z;
    }
    let cmax = c.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let polynomial_residual = roots.iter().map(|z| QuarticRoots::eval(lambda, *z).norm()).fold(0.0, f64::max) / cmax;
    let selected = *roots
        .iter()
        .filter(|z| z.im > 0.0)
        .max_by(|a, b| a.im.total_cmp(&b.im))
        .ok_or_else(|| Error::Contract(format!("no quartic root with Im z > 0 at λ = {lambda}")))?;
    let qr = QuarticRoots { lambda, roots, selected, polynomial_residual, contour_identity: contour_identity(selected)? };

    let alpha = C64::new(0.0, 1.0) * selected * selected;
    let m = OverlapFunction::radial(crate::overlap::RadialProfile::explicit(3), 1.0);
    let fabs = if alpha.re >= ALPHA_MIN { (lambda * laplace_overlap(&m, alpha)? - 1.0).norm() } else { f64::NAN };
    let residual = if alpha.re >= ALPHA_MIN { eigen_residual(&m, lambda, alpha)? } else { f64::NAN };
    let diagnostics = RootDiagnostics { characteristic_residual: fabs, ..Default::default() };
    Ok((qr, EigenvalueResult { lambda, alpha, method: Method::Quartic, residual, diagnostics }))
}
