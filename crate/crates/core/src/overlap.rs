//! Free overlap `m(t) = ⟨φ, e^{-iHt} φ⟩` and the transport constant
//! `τ = ∫₀^∞ |m(t)| dt`.
//!
//! Every overlap is backed by a spectral measure `w(E) dE` of `H` in the state
//! `φ`, so that `m(t) = ∫ w(E) e^{-iEt} dE`. The measure is exposed through
//! [`OverlapFunction::spectral_nodes`] for resolvent computations.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use crate::lattice::{HamiltonianSpec, WaveFunction};
use crate::quad::{self, GaussRule, Tolerance};
use crate::{Error, Result, C64};

/// Area of the unit sphere `S^{d-1}` (2 for `d = 1`).
pub fn sphere_area(dim: usize) -> f64 {
    match dim {
        1 => 2.0,
        2 => 2.0 * PI,
        3 => 4.0 * PI,
        _ => panic!("dimension {dim} not supported"),
    }
}

type ProfileFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum RadialShape {
    /// `|φ̂(r)|² = |S^{d-1}|^{-1} r^{1-d} · 3/(π(r⁶+1))`.
    Explicit,
    /// Momentum density of `φ(x) = (πσ²)^{-d/4} e^{-|x|²/2σ²}`.
    Gaussian { sigma: f64 },
    Custom(ProfileFn),
}

impl std::fmt::Debug for RadialShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RadialShape::Explicit => write!(f, "Explicit"),
            RadialShape::Gaussian { sigma } => write!(f, "Gaussian {{ sigma: {sigma} }}"),
            RadialShape::Custom(_) => write!(f, "Custom"),
        }
    }
}

/// Radially symmetric momentum density `r ↦ |φ̂(r)|²`.
#[derive(Clone, Debug)]
pub struct RadialProfile {
    dim: usize,
    shape: RadialShape,
    scale: f64,
    cutoff: f64,
}

const CUTOFF_LEVEL: f64 = 1e-14;

impl RadialProfile {
    pub fn explicit(dim: usize) -> Self {
        Self::build(dim, RadialShape::Explicit, 1.0)
    }

    pub fn gaussian(dim: usize, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Contract(format!("gaussian width {sigma} must be positive")));
        }
        Ok(Self::build(dim, RadialShape::Gaussian { sigma }, 1.0))
    }

    /// Wraps an arbitrary density and rescales it to unit norm.
    pub fn custom(dim: usize, density: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Result<Self> {
        let raw = Self::build(dim, RadialShape::Custom(Arc::new(density)), 1.0);
        let norm = raw.normalization()?;
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::NotNormalizable(format!("integral {norm}")));
        }
        Ok(Self::build(dim, raw.shape, 1.0 / norm))
    }

    fn build(dim: usize, shape: RadialShape, scale: f64) -> Self {
        assert!((1..=3).contains(&dim), "dimension {dim} not supported");
        let mut p = RadialProfile { dim, shape, scale, cutoff: 0.0 };
        p.cutoff = p.find_cutoff();
        p
    }

    fn find_cutoff(&self) -> f64 {
        let mut r = 1e-4;
        let mut last_big = 0.0;
        while r < 1e6 {
            if self.radial_weight(r) >= CUTOFF_LEVEL {
                last_big = r;
            }
            r *= 1.02;
        }
        last_big * 1.02
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn shape(&self) -> &RadialShape {
        &self.shape
    }

    /// Radius beyond which `S r^{d-1} |φ̂|²` stays below `1e-14`.
    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn density(&self, r: f64) -> f64 {
        let s = sphere_area(self.dim);
        match &self.shape {
            RadialShape::Explicit => 3.0 / (PI * (r.powi(6) + 1.0)) / (s * r.powi(self.dim as i32 - 1)),
            RadialShape::Gaussian { sigma } => {
                (sigma * sigma / PI).powf(0.5 * self.dim as f64) * (-(sigma * r).powi(2)).exp()
            }
            RadialShape::Custom(f) => self.scale * f(r),
        }
    }

    /// `S_{d-1} r^{d-1} |φ̂(r)|²`.
    pub fn radial_weight(&self, r: f64) -> f64 {
        match &self.shape {
            RadialShape::Explicit => 3.0 / (PI * (r.powi(6) + 1.0)),
            _ => sphere_area(self.dim) * r.powi(self.dim as i32 - 1) * self.density(r),
        }
    }

    pub fn normalization(&self) -> Result<f64> {
        let tol = Tolerance::new(1e-13, 1e-13);
        let hi = if self.cutoff > 0.0 { self.cutoff } else { 1.0 };
        let mut breaks: Vec<f64> = (0..=16).map(|i| hi * i as f64 / 16.0).collect();
        breaks.dedup();
        let q = quad::integrate_breaks(|r| C64::new(self.radial_weight(r), 0.0), &breaks, tol)?;
        Ok(q.value.re)
    }

    /// `m(t) = ∫₀^∞ S r^{d-1}|φ̂(r)|² e^{-iar²t} dr` on Gauss–Legendre panels
    /// with at most a quarter oscillation each. `None` when more than
    /// `budget` panels would be needed.
    pub fn panel_overlap(&self, a: f64, t: f64, budget: usize) -> Result<Option<C64>> {
        let rc = self.cutoff;
        let mut energy_panels = if t > 0.0 { (a * rc * rc * 2.0 * t / PI).ceil() as usize } else { 1 };
        let mut radial_panels = 32;
        let lo = GaussRule::new(10);
        let hi = GaussRule::new(20);
        loop {
            if energy_panels > budget {
                return Ok(None);
            }
            let de = a * rc * rc / energy_panels as f64;
            let mut breaks: Vec<f64> = (0..=energy_panels).map(|i| (i as f64 * de / a).sqrt()).collect();
            breaks.extend((1..radial_panels).map(|i| rc * i as f64 / radial_panels as f64));
            breaks.sort_by(f64::total_cmp);
            breaks.dedup_by(|x, y| (*x - *y).abs() < 1e-14 * rc);
            let f = |r: f64| C64::from_polar(self.radial_weight(r), -a * r * r * t);
            let (mut s_lo, mut s_hi) = (C64::new(0.0, 0.0), C64::new(0.0, 0.0));
            for w in breaks.windows(2) {
                s_lo += lo.integrate(w[0], w[1], f);
                s_hi += hi.integrate(w[0], w[1], f);
            }
            if (s_hi - s_lo).norm() <= 1e-10 {
                return Ok(Some(s_hi));
            }
            if energy_panels * 2 > budget && radial_panels >= 4096 {
                return Err(Error::Quadrature(format!(
                    "radial overlap at t = {t} not converged ({:.3e})",
                    (s_hi - s_lo).norm()
                )));
            }
            energy_panels *= 2;
            radial_panels *= 2;
        }
    }
}

/// `m(t)` of the explicit profile by rotating the radial contour onto
/// `r = s e^{-iπ/4}`, which crosses the pole at `e^{-iπ/6}`.
pub fn explicit_contour_overlap(a: f64, t: f64) -> Result<C64> {
    let rot = C64::from_polar(1.0, -PI / 4.0);
    let scale = if t > 0.0 { (a * t).sqrt().recip().min(1.0) } else { 1.0 };
    let q = quad::integrate_to_infinity(
        |s| (-a * s * s * t).exp() / C64::new(1.0, s.powi(6)),
        0.0,
        scale,
        Tolerance::new(1e-14, 1e-13),
    )?;
    let rp = C64::from_polar(1.0, -PI / 6.0);
    let residue = (C64::new(0.0, -a * t) * rp * rp).exp() / (6.0 * rp.powi(5));
    Ok((rot * q.value - C64::new(0.0, 2.0 * PI) * residue) * (3.0 / PI))
}

#[derive(Clone, Debug)]
pub enum OverlapKind {
    /// `m(t) = e^{-|t|}`: `H = x` with the Lorentzian `φ(x) = (π(1+x²))^{-1/2}`.
    ClosedLorentzian,
    /// Free dispersion `a|p|²` with a Gaussian of width `sigma` in `d` dimensions:
    /// `m(t) = (1 + iat/σ²)^{-d/2}`.
    GaussianFree { dim: usize, a: f64, sigma: f64 },
    RadialQuadrature { profile: RadialProfile, a: f64, budget: usize },
    MatrixSpectral { frequencies: Vec<f64>, weights: Vec<f64> },
    /// Discrete measure read off a grid state in the Hamiltonian's frame.
    GridNumeric { frequencies: Vec<f64>, weights: Vec<f64> },
}

/// Result of [`tau_estimate`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Tau {
    Finite { value: f64, error: f64 },
    Divergent { beta: f64 },
}

impl Tau {
    pub fn value(&self) -> Option<f64> {
        match self {
            Tau::Finite { value, .. } => Some(*value),
            Tau::Divergent { .. } => None,
        }
    }
}

#[derive(Debug)]
pub struct OverlapFunction {
    kind: OverlapKind,
    tau: OnceLock<Result<Tau>>,
}

impl Clone for OverlapFunction {
    fn clone(&self) -> Self {
        OverlapFunction { kind: self.kind.clone(), tau: OnceLock::new() }
    }
}

pub const DEFAULT_PANEL_BUDGET: usize = 4096;

impl OverlapFunction {
    pub fn new(kind: OverlapKind) -> Self {
        OverlapFunction { kind, tau: OnceLock::new() }
    }

    pub fn lorentzian() -> Self {
        Self::new(OverlapKind::ClosedLorentzian)
    }

    pub fn gaussian_free(dim: usize, a: f64, sigma: f64) -> Result<Self> {
        if !(1..=3).contains(&dim) || !(a > 0.0) || !(sigma > 0.0) {
            return Err(Error::Contract(format!("invalid gaussian overlap (d={dim}, a={a}, σ={sigma})")));
        }
        Ok(Self::new(OverlapKind::GaussianFree { dim, a, sigma }))
    }

    pub fn radial(profile: RadialProfile, a: f64) -> Self {
        Self::new(OverlapKind::RadialQuadrature { profile, a, budget: DEFAULT_PANEL_BUDGET })
    }

    pub fn spectral(frequencies: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if frequencies.len() != weights.len() || weights.iter().any(|w| *w < 0.0) {
            return Err(Error::Contract("spectral weights must be nonnegative and match the frequencies".into()));
        }
        Ok(Self::new(OverlapKind::MatrixSpectral { frequencies, weights }))
    }

    /// Overlap of a concrete state under a concrete Hamiltonian.
    pub fn from_state(h: &HamiltonianSpec, phi: &WaveFunction) -> Result<Self> {
        let amps = h.to_frame(phi)?;
        let w = h.frame_weight();
        let weights = amps.iter().map(|a| a.norm_sqr() * w).collect();
        let frequencies = h.frequencies();
        Ok(Self::new(match h {
            HamiltonianSpec::FiniteHermitian(_) => OverlapKind::MatrixSpectral { frequencies, weights },
            _ => OverlapKind::GridNumeric { frequencies, weights },
        }))
    }

    pub fn kind(&self) -> &OverlapKind {
        &self.kind
    }

    pub fn provenance(&self) -> &'static str {
        match self.kind {
            OverlapKind::ClosedLorentzian => "closed_lorentzian",
            OverlapKind::GaussianFree { .. } => "gaussian_free",
            OverlapKind::RadialQuadrature { .. } => "radial_quadrature",
            OverlapKind::MatrixSpectral { .. } => "matrix_spectral",
            OverlapKind::GridNumeric { .. } => "grid_numeric",
        }
    }

    /// `m(0) = ‖φ‖²`.
    pub fn mass(&self) -> f64 {
        match &self.kind {
            OverlapKind::MatrixSpectral { weights, .. } | OverlapKind::GridNumeric { weights, .. } => {
                weights.iter().sum()
            }
            _ => 1.0,
        }
    }

    pub fn eval(&self, t: f64) -> Result<C64> {
        if !t.is_finite() {
            return Err(Error::Contract("overlap time must be finite".into()));
        }
        if t < 0.0 {
            return self.eval(-t).map(|z| z.conj());
        }
        let m = match &self.kind {
            OverlapKind::ClosedLorentzian => C64::new((-t).exp(), 0.0),
            OverlapKind::GaussianFree { dim, a, sigma } => {
                C64::new(1.0, a * t / (sigma * sigma)).powf(-0.5 * *dim as f64)
            }
            OverlapKind::RadialQuadrature { profile, a, budget } => match profile.panel_overlap(*a, t, *budget)? {
                Some(z) => z,
                None => match profile.shape() {
                    RadialShape::Explicit => explicit_contour_overlap(*a, t)?,
                    _ => {
                        return Err(Error::Quadrature(format!(
                            "radial overlap at t = {t} needs more than {budget} panels"
                        )))
                    }
                },
            },
            OverlapKind::MatrixSpectral { frequencies, weights } | OverlapKind::GridNumeric { frequencies, weights } => {
                frequencies.iter().zip(weights).map(|(e, w)| C64::from_polar(*w, -e * t)).sum()
            }
        };
        if m.norm() > self.mass() * (1.0 + 1e-9) + 1e-12 {
            return Err(Error::Contract(format!("|m({t})| = {} exceeds the norm bound", m.norm())));
        }
        Ok(m)
    }

    /// `sup_t |m(t)| = m(0)`.
    pub fn sup(&self) -> f64 {
        self.mass()
    }

    /// Cached `τ` with default horizon.
    pub fn tau(&self) -> Result<Tau> {
        self.tau.get_or_init(|| tau_estimate(self, 1e4, 1e-9)).clone()
    }

    /// Quadrature nodes `(E_k, w_k)` of the spectral measure, refined around
    /// `focus` when given. Discrete measures are returned exactly.
    pub fn spectral_nodes(&self, focus: Option<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
        match &self.kind {
            OverlapKind::MatrixSpectral { frequencies, weights } | OverlapKind::GridNumeric { frequencies, weights } => {
                Ok((frequencies.clone(), weights.clone()))
            }
            OverlapKind::ClosedLorentzian => {
                // E = tan θ turns the Cauchy weight into dθ/π
                let centre = focus.map(f64::atan);
                let nodes = composite_nodes(-PI / 2.0, PI / 2.0, centre, 2048);
                Ok(nodes.into_iter().map(|(th, w)| (th.tan(), w / PI)).unzip())
            }
            OverlapKind::GaussianFree { dim, a, sigma } => {
                let profile = RadialProfile::gaussian(*dim, *sigma)?;
                Ok(radial_nodes(&profile, *a, focus))
            }
            OverlapKind::RadialQuadrature { profile, a, .. } => Ok(radial_nodes(profile, *a, focus)),
        }
    }

    /// Radial profile and dispersion behind a continuous overlap.
    pub(crate) fn radial_measure(&self) -> Option<(RadialProfile, f64)> {
        match &self.kind {
            OverlapKind::GaussianFree { dim, a, sigma } => Some((RadialProfile::gaussian(*dim, *sigma).ok()?, *a)),
            OverlapKind::RadialQuadrature { profile, a, .. } => Some((profile.clone(), *a)),
            _ => None,
        }
    }
}

pub fn compute_overlap(m: &OverlapFunction, t: f64) -> Result<C64> {
    m.eval(t)
}

fn composite_nodes(lo: f64, hi: f64, focus: Option<f64>, panels: usize) -> Vec<(f64, f64)> {
    let rule = GaussRule::new(16);
    let mut breaks: Vec<f64> = (0..=panels).map(|i| lo + (hi - lo) * i as f64 / panels as f64).collect();
    if let Some(c) = focus.filter(|c| *c > lo && *c < hi) {
        let h = (hi - lo) / panels as f64;
        let mut d = h;
        while d > 1e-9 * h {
            d *= 0.25;
            breaks.push((c - d).max(lo));
            breaks.push((c + d).min(hi));
        }
        breaks.push(c);
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    breaks.windows(2).flat_map(|w| rule.on(w[0], w[1]).collect::<Vec<_>>()).collect()
}

fn radial_nodes(profile: &RadialProfile, a: f64, focus: Option<f64>) -> (Vec<f64>, Vec<f64>) {
    let rc = profile.cutoff();
    let centre = focus.filter(|e| *e > 0.0).map(|e| (e / a).sqrt());
    composite_nodes(0.0, rc, centre, 2048)
        .into_iter()
        .map(|(r, w)| (a * r * r, w * profile.radial_weight(r)))
        .unzip()
}

/// Least-squares line `y = slope·x + intercept` with its rms residual.
fn line_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let rms = (xs.iter().zip(ys).map(|(x, y)| (y - my - slope * (x - mx)).powi(2)).sum::<f64>() / n).sqrt();
    (slope, my - slope * mx, rms)
}

/// Estimates `τ = ∫₀^∞ |m(t)| dt` from `[0, t_max]` plus a tail fitted on
/// the last decade (power law or exponential, whichever fits better).
pub fn tau_estimate(m: &OverlapFunction, t_max: f64, tail_tol: f64) -> Result<Tau> {
    if !(t_max > 0.0) {
        return Err(Error::Contract("tau horizon must be positive".into()));
    }
    let mut breaks: Vec<f64> = (0..40).map(|k| t_max * 0.5f64.powi(k)).collect();
    breaks.push(0.0);
    breaks.reverse();
    let mut failure = None;
    let q = quad::integrate_breaks(
        |t| match m.eval(t) {
            Ok(z) => C64::new(z.norm(), 0.0),
            Err(e) => {
                failure.get_or_insert(e);
                C64::new(0.0, 0.0)
            }
        },
        &breaks,
        Tolerance { abs: tail_tol * 0.1, rel: 1e-10, max_pieces: 20_000 },
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    let samples = 24;
    let mut xs = Vec::with_capacity(samples);
    let mut ys = Vec::with_capacity(samples);
    let mut biggest: f64 = 0.0;
    for i in 0..samples {
        let t = t_max * 10f64.powf(-1.0 + i as f64 / (samples - 1) as f64);
        let v = m.eval(t)?.norm();
        biggest = biggest.max(v);
        xs.push(t.ln());
        ys.push(v.max(1e-300).ln());
    }
    if biggest * t_max <= tail_tol {
        return Ok(Tau::Finite { value: q.value.re, error: q.error + tail_tol });
    }
    let ts: Vec<f64> = xs.iter().map(|x| x.exp()).collect();
    let (slope, intercept, rms) = line_fit(&xs, &ys);
    let (kappa_slope, kappa_intercept, kappa_rms) = line_fit(&ts, &ys);
    if kappa_rms < rms && kappa_rms <= 0.05 && kappa_slope < 0.0 {
        // exponential tail a·e^{-κt}
        let kappa = -kappa_slope;
        let tail = (kappa_intercept - kappa * t_max).exp() / kappa;
        return Ok(Tau::Finite { value: q.value.re + tail, error: q.error + tail * (1.0 + kappa_rms) });
    }
    let beta = -slope;
    if rms > 0.05 {
        return Err(Error::Indeterminate(format!(
            "tail of |m| is not a power law on [{:.3e}, {t_max:.3e}] (beta {beta:.3}, rms {rms:.3e})",
            t_max / 10.0
        )));
    }
    if beta <= 1.0 {
        return Ok(Tau::Divergent { beta });
    }
    let amp_at_end = (intercept + slope * t_max.ln()).exp();
    let tail = amp_at_end * t_max / (beta - 1.0);
    Ok(Tau::Finite { value: q.value.re + tail, error: q.error + tail * (rms + 1e-3) * 10.0 / (beta - 1.0) })
}
