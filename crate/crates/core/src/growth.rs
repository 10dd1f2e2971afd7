//! Particle-number growth without a spatial grid.
//!
//! With `ρ₀ = 0` everything follows from the scalar function
//! `u(t) = ⟨φ, e^{(-iH+λP_φ)t} φ⟩`, which solves the Volterra equation
//! `u(t) = m(t) + λ ∫₀ᵗ m(t-s) u(s) ds`. From it
//! `d/dt h² = 2λ|u|²` with `h²(0) = 1`, and `d/dt N = 2|λ| h²` with `N(0) = 0`.

use rayon::prelude::*;

use crate::overlap::OverlapFunction;
use crate::quad::cumulative_trapezoid;
use crate::{Error, Result, C64};

/// Volterra solution on the grid `t_j = j·dt`.
#[derive(Clone, Debug)]
pub struct VolterraSolution {
    pub lambda: f64,
    pub dt: f64,
    pub u: Vec<C64>,
    /// The run stopped early because `|u|` left the representable range.
    pub truncated: bool,
}

const OVERFLOW: f64 = 1e100;

fn step_count(dt: f64, t_max: f64) -> Result<usize> {
    if !(dt > 0.0 && dt.is_finite()) || !(t_max > 0.0 && t_max.is_finite()) {
        return Err(Error::Contract(format!("need dt > 0 and T > 0 (got dt = {dt}, T = {t_max})")));
    }
    let j = (t_max / dt).round();
    if (j * dt - t_max).abs() > 1e-6 * t_max || j < 1.0 {
        return Err(Error::Contract(format!("T = {t_max} is not a multiple of dt = {dt}")));
    }
    Ok(j as usize)
}

/// Product-trapezoid solution of `u = m + λ m * u` with the diagonal term
/// treated implicitly.
pub fn solve_volterra(m: &OverlapFunction, lambda: f64, dt: f64, t_max: f64) -> Result<VolterraSolution> {
    let steps = step_count(dt, t_max)?;
    if lambda.abs() * dt * m.sup() >= 0.5 {
        return Err(Error::StepTooCoarse(format!("|λ|·dt·sup|m| = {:.3} ≥ 1/2", lambda.abs() * dt * m.sup())));
    }
    let mvals: Vec<C64> = (0..=steps).into_par_iter().map(|j| m.eval(j as f64 * dt)).collect::<Result<_>>()?;
    let mut u = Vec::with_capacity(steps + 1);
    u.push(mvals[0]);
    if lambda == 0.0 {
        u.extend_from_slice(&mvals[1..]);
        return Ok(VolterraSolution { lambda, dt, u, truncated: false });
    }
    // reversed kernel so that m[j-k] for k = 1..j is a contiguous slice
    let (mr, mi): (Vec<f64>, Vec<f64>) = mvals.iter().rev().map(|z| (z.re, z.im)).unzip();
    let mut ur = vec![mvals[0].re];
    let mut ui = vec![mvals[0].im];
    let h = lambda * dt;
    let diag = C64::new(1.0, 0.0) - mvals[0] * (0.5 * h);
    let mut truncated = false;
    for j in 1..=steps {
        let lo = steps - j + 1;
        let hi = steps;
        let (a_re, a_im) = (&mr[lo..hi], &mi[lo..hi]);
        let (b_re, b_im) = (&ur[1..j], &ui[1..j]);
        let mut sr = 0.0;
        let mut si = 0.0;
        for k in 0..a_re.len() {
            sr += a_re[k] * b_re[k] - a_im[k] * b_im[k];
            si += a_re[k] * b_im[k] + a_im[k] * b_re[k];
        }
        let history = C64::new(sr, si) + mvals[j] * u[0] * 0.5;
        let uj = (mvals[j] + history * h) / diag;
        if !(uj.norm() < OVERFLOW) {
            truncated = true;
            break;
        }
        u.push(uj);
        ur.push(uj.re);
        ui.push(uj.im);
    }
    Ok(VolterraSolution { lambda, dt, u, truncated })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    Trapezoid,
    /// Trapezoid at `dt` and `dt/2` combined as `(4·fine − coarse)/3`.
    Richardson,
}

#[derive(Clone, Debug)]
pub struct GrowthTrace {
    pub lambda: f64,
    pub dt: f64,
    pub u: Vec<C64>,
    pub hsq: Vec<f64>,
    pub n: Vec<f64>,
    pub truncated: bool,
    pub scheme: Scheme,
    pub regime: Option<Regime>,
}

impl GrowthTrace {
    pub fn len(&self) -> usize {
        self.u.len()
    }
    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }
    pub fn time(&self, j: usize) -> f64 {
        j as f64 * self.dt
    }
    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|j| self.time(j)).collect()
    }
    /// `dN/dt = 2|λ| h²`.
    pub fn dndt(&self) -> Vec<f64> {
        self.hsq.iter().map(|h| 2.0 * self.lambda.abs() * h).collect()
    }
    pub fn horizon(&self) -> f64 {
        self.time(self.len().saturating_sub(1))
    }
}

/// Cumulative integrals `h²` and `N` from a Volterra solution.
pub fn integrate_growth(sol: &VolterraSolution) -> GrowthTrace {
    let l = sol.lambda;
    let abs_sq: Vec<f64> = sol.u.iter().map(|z| z.norm_sqr()).collect();
    let h0 = sol.u.first().map_or(1.0, |z| z.re);
    let hsq: Vec<f64> = cumulative_trapezoid(&abs_sq, sol.dt).into_iter().map(|s| h0 + 2.0 * l * s).collect();
    let n = if l == 0.0 {
        vec![0.0; hsq.len()]
    } else {
        cumulative_trapezoid(&hsq, sol.dt).into_iter().map(|s| 2.0 * l.abs() * s).collect()
    };
    GrowthTrace {
        lambda: l,
        dt: sol.dt,
        u: sol.u.clone(),
        hsq,
        n,
        truncated: sol.truncated,
        scheme: Scheme::Trapezoid,
        regime: None,
    }
}

/// Volterra solve plus integration, optionally Richardson-extrapolated.
pub fn solve_growth(m: &OverlapFunction, lambda: f64, dt: f64, t_max: f64, scheme: Scheme) -> Result<GrowthTrace> {
    let coarse = integrate_growth(&solve_volterra(m, lambda, dt, t_max)?);
    if scheme == Scheme::Trapezoid {
        return Ok(coarse);
    }
    let fine = integrate_growth(&solve_volterra(m, lambda, 0.5 * dt, t_max)?);
    let len = coarse.len().min(fine.len().div_ceil(2));
    let mix = |c: f64, f: f64| (4.0 * f - c) / 3.0;
    Ok(GrowthTrace {
        lambda,
        dt,
        u: (0..len).map(|j| (fine.u[2 * j] * 4.0 - coarse.u[j]) / 3.0).collect(),
        hsq: (0..len).map(|j| mix(coarse.hsq[j], fine.hsq[2 * j])).collect(),
        n: (0..len).map(|j| mix(coarse.n[j], fine.n[2 * j])).collect(),
        truncated: coarse.truncated || fine.truncated,
        scheme,
        regime: None,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Regime {
    Bounded { plateau: f64 },
    Sublinear { final_rate: f64 },
    Linear { rate: f64, spread: f64 },
    Exponential { rate: f64, spread: f64 },
}

impl Regime {
    pub fn label(&self) -> &'static str {
        match self {
            Regime::Bounded { .. } => "BOUNDED",
            Regime::Sublinear { .. } => "SUBLINEAR",
            Regime::Linear { .. } => "LINEAR",
            Regime::Exponential { .. } => "EXPONENTIAL",
        }
    }

    pub fn rate(&self) -> Option<f64> {
        match self {
            Regime::Linear { rate, .. } | Regime::Exponential { rate, .. } => Some(*rate),
            Regime::Sublinear { final_rate } => Some(*final_rate),
            Regime::Bounded { .. } => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Thresholds {
    /// Fraction of the trace forming the final window.
    pub window: f64,
    /// Maximal relative spread of a converged rate.
    pub spread: f64,
    /// Relative change of `N` over the window that counts as a plateau.
    pub plateau: f64,
    /// Smallest exponential rate that is reported as such.
    pub min_rate: f64,
    /// Required `log10(T/dt)`.
    pub min_decades: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { window: 0.25, spread: 0.05, plateau: 1e-4, min_rate: 1e-6, min_decades: 3.0 }
    }
}

fn spread_of(v: &[f64]) -> (f64, f64) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(*x), b.max(*x)));
    (mean, if mean != 0.0 { (hi - lo) / mean.abs() } else { f64::INFINITY })
}

/// Classifies the final window of a trace.
pub fn classify_regime(trace: &GrowthTrace, th: &Thresholds) -> Result<Regime> {
    let len = trace.len();
    if len < 8 {
        return Err(Error::Contract("trace too short to classify".into()));
    }
    if ((len - 1) as f64).log10() < th.min_decades {
        return Err(Error::Contract(format!(
            "trace spans {:.2} decades of dt, {} required",
            ((len - 1) as f64).log10(),
            th.min_decades
        )));
    }
    let start = ((1.0 - th.window) * (len - 1) as f64).floor() as usize;
    let rate: Vec<f64> = trace.dndt()[start..].to_vec();
    let n = &trace.n[start..];
    let n_end = *n.last().expect("window is nonempty");
    if n.iter().all(|v| *v > 0.0) {
        let g: Vec<f64> = rate.iter().zip(n).map(|(r, n)| r / n).collect();
        let (mean, spread) = spread_of(&g);
        if spread < th.spread && mean > th.min_rate {
            return Ok(Regime::Exponential { rate: mean, spread });
        }
    }
    let (mean, spread) = spread_of(&rate);
    let relative_change = if n_end > 0.0 { (n_end - n[0]) / n_end } else { 0.0 };
    let plateau = relative_change < th.plateau;
    if mean > 0.0 && spread < th.spread && !plateau {
        return Ok(Regime::Linear { rate: mean, spread });
    }
    let first = rate[0];
    let last = *rate.last().expect("window is nonempty");
    let decreasing = rate.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)) && last < first * (1.0 - th.spread);
    if decreasing && !plateau {
        return Ok(Regime::Sublinear { final_rate: last });
    }
    if plateau {
        return Ok(Regime::Bounded { plateau: n_end });
    }
    Err(Error::Indeterminate(format!(
        "λ = {}: rate spread {spread:.3e}, relative N change {relative_change:.3e}",
        trace.lambda
    )))
}

#[derive(Clone, Debug, PartialEq)]
pub enum Outcome {
    Classified(Regime),
    Indeterminate(String),
}

impl Outcome {
    pub fn label(&self) -> &'static str {
        match self {
            Outcome::Classified(r) => r.label(),
            Outcome::Indeterminate(_) => "INDETERMINATE",
        }
    }
    pub fn rate(&self) -> Option<f64> {
        match self {
            Outcome::Classified(r) => r.rate(),
            Outcome::Indeterminate(_) => None,
        }
    }
    fn is_linear(&self) -> bool {
        matches!(self, Outcome::Classified(Regime::Linear { .. }))
    }
    fn is_exponential(&self) -> bool {
        matches!(self, Outcome::Classified(Regime::Exponential { .. }))
    }
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub lambda: f64,
    pub outcome: Outcome,
    /// Added by bracket refinement rather than taken from the input grid.
    pub refined: bool,
}

#[derive(Clone, Debug)]
pub struct Sweep {
    pub rows: Vec<SweepRow>,
    pub bracket: (f64, f64),
}

impl Sweep {
    pub fn critical_estimate(&self) -> f64 {
        0.5 * (self.bracket.0 + self.bracket.1)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SweepSettings {
    pub dt: f64,
    pub t_max: f64,
    pub thresholds: Thresholds,
    /// Bracket width at which refinement stops; `None` disables refinement.
    pub refine_to: Option<f64>,
}

fn classify_at(m: &OverlapFunction, lambda: f64, s: &SweepSettings) -> Result<Outcome> {
    let trace = solve_growth(m, lambda, s.dt, s.t_max, Scheme::Trapezoid)?;
    match classify_regime(&trace, &s.thresholds) {
        Ok(r) => Ok(Outcome::Classified(r)),
        Err(Error::Indeterminate(msg)) => Ok(Outcome::Indeterminate(msg)),
        Err(e) => Err(e),
    }
}

/// Classifies every `λ` and locates the LINEAR → EXPONENTIAL flip.
pub fn sweep_lambda(m: &OverlapFunction, lambdas: &[f64], s: &SweepSettings) -> Result<Sweep> {
    if lambdas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Contract("λ grid must be strictly increasing".into()));
    }
    let outcomes: Vec<Outcome> = lambdas.par_iter().map(|l| classify_at(m, *l, s)).collect::<Result<_>>()?;
    let mut rows: Vec<SweepRow> = lambdas
        .iter()
        .zip(outcomes)
        .map(|(l, o)| SweepRow { lambda: *l, outcome: o, refined: false })
        .collect();
    let mut last_linear = None;
    let mut bracket = None;
    for r in &rows {
        if r.outcome.is_linear() {
            last_linear = Some(r.lambda);
        } else if r.outcome.is_exponential() {
            if let Some(lo) = last_linear {
                bracket = Some((lo, r.lambda));
                break;
            }
        }
    }
    let (mut lo, mut hi) = bracket.ok_or(Error::NoTransitionInRange)?;
    if let Some(width) = s.refine_to {
        while hi - lo > width {
            let mid = 0.5 * (lo + hi);
            let o = classify_at(m, mid, s)?;
            let (lin, exp) = (o.is_linear(), o.is_exponential());
            rows.push(SweepRow { lambda: mid, outcome: o, refined: true });
            if lin {
                lo = mid;
                continue;
            }
            if exp {
                hi = mid;
                continue;
            }
            let q = [lo + 0.25 * (hi - lo), hi - 0.25 * (hi - lo)];
            let probes: Vec<Outcome> = q.par_iter().map(|l| classify_at(m, *l, s)).collect::<Result<_>>()?;
            let moved_lo = probes[0].is_linear();
            let moved_hi = probes[1].is_exponential();
            for (l, o) in q.iter().zip(probes) {
                rows.push(SweepRow { lambda: *l, outcome: o, refined: true });
            }
            if moved_lo {
                lo = q[0];
            }
            if moved_hi {
                hi = q[1];
            }
            if !moved_lo && !moved_hi {
                break;
            }
        }
    }
    rows.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
    Ok(Sweep { rows, bracket: (lo, hi) })
}
