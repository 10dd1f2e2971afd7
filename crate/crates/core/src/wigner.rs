//! Wigner transforms of one-dimensional low-rank densities, the macroscopic
//! rescaling `f^ε(X,P) = ε^{-1} W(X/ε, P)`, and the classical limit
//! `f⁰` of the source dynamics paired with test functions.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;

use crate::lattice::{fft_nd, GridSpec, HamiltonianSpec, Space, WaveFunction};
use crate::propagator::{assemble_density, evolve_density, evolve_trajectory, LowRankDensity, PropagationOptions};
use crate::quad::GaussRule;
use crate::{Error, Result, C64};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Scale {
    Micro,
    Macro { eps: f64 },
}

/// Real samples on a tensor grid, stored position-major.
#[derive(Clone, Debug)]
pub struct PhaseSpaceField {
    xs: Vec<f64>,
    ps: Vec<f64>,
    values: Vec<f64>,
    scale: Scale,
    imag_residue: f64,
}

impl PhaseSpaceField {
    pub fn xs(&self) -> &[f64] {
        &self.xs
    }
    pub fn ps(&self) -> &[f64] {
        &self.ps
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn scale(&self) -> Scale {
        self.scale
    }
    /// Largest imaginary part discarded by the transform.
    pub fn imag_residue(&self) -> f64 {
        self.imag_residue
    }
    pub fn dx(&self) -> f64 {
        self.xs[1] - self.xs[0]
    }
    pub fn dp(&self) -> f64 {
        self.ps[1] - self.ps[0]
    }
    pub fn at(&self, i: usize, k: usize) -> f64 {
        self.values[i * self.ps.len() + k]
    }

    /// `Σ W dx dp`.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.dx() * self.dp()
    }

    /// `f^ε(X, P) = ε^{-1} W(X/ε, P)` on `X = εx`.
    pub fn to_macro(&self, eps: f64) -> Result<Self> {
        if self.scale != Scale::Micro {
            return Err(Error::Contract("field is already macroscopic".into()));
        }
        if !(eps > 0.0) {
            return Err(Error::Contract(format!("ε = {eps} must be positive")));
        }
        Ok(PhaseSpaceField {
            xs: self.xs.iter().map(|x| eps * x).collect(),
            ps: self.ps.clone(),
            values: self.values.iter().map(|w| w / eps).collect(),
            scale: Scale::Macro { eps },
            imag_residue: self.imag_residue / eps,
        })
    }
}

/// `ψ` sampled at spacing `dx/2` by zero-padding its momentum samples.
fn upsample(psi: &WaveFunction, grid: GridSpec) -> Result<Vec<C64>> {
    let n = grid.n();
    let hat = psi.to_momentum()?;
    let fine = GridSpec::line(2 * n, grid.length())?;
    let mut amps = vec![C64::new(0.0, 0.0); 2 * n];
    amps[n / 2..n / 2 + n].copy_from_slice(hat.amps());
    Ok(WaveFunction::momentum(fine, amps)?.to_position()?.into_amps())
}

/// `W(x,p) = (2π)^{-1} ∫ e^{-ipy} ρ(x+y/2, x-y/2) dy` on the position grid
/// and the momenta `p_q = πq/L`, `q ∈ [-n, n)`, using offsets `|y| < L/2`.
pub fn wigner_of_density(rho: &LowRankDensity, grid: GridSpec, budget: usize) -> Result<PhaseSpaceField> {
    if grid.dim() != 1 {
        return Err(Error::Contract("the Wigner transform is implemented for d = 1".into()));
    }
    if rho.rank() > budget {
        return Err(Error::RankBudget { rank: rho.rank(), budget });
    }
    if let Some(space) = rho.space() {
        if space.grid() != Some(grid) {
            return Err(Error::GridMismatch(format!("density on {space:?}, field on {grid:?}")));
        }
    }
    let n = grid.n();
    let two_n = 2 * n;
    let cols: Vec<Vec<C64>> = rho
        .columns()
        .par_iter()
        .zip(rho.weights())
        .map(|(c, w)| upsample(c, grid).map(|v| v.into_iter().map(|a| a * w.sqrt()).collect()))
        .collect::<Result<_>>()?;
    let xs = grid.xs();
    let ps: Vec<f64> = (0..two_n).map(|q| PI * (q as f64 - n as f64) / grid.length()).collect();
    let half = (n / 2) as isize;
    let scale = grid.dx() / (2.0 * PI);
    let rows: Vec<(Vec<f64>, f64)> = (0..n)
        .into_par_iter()
        .map(|j| {
            let c = 2 * j as isize;
            let mut buf = vec![C64::new(0.0, 0.0); two_n];
            for m in (1 - half)..half {
                let a = (c + m).rem_euclid(two_n as isize) as usize;
                let b = (c - m).rem_euclid(two_n as isize) as usize;
                let k: C64 = cols.iter().map(|v| v[a] * v[b].conj()).sum();
                buf[m.rem_euclid(two_n as isize) as usize] = k;
            }
            fft_nd(&mut buf, two_n, 1, true);
            let mut row = vec![0.0; two_n];
            let mut imag = 0.0f64;
            for (q, v) in buf.iter().enumerate() {
                // DFT index q holds p = πq/L for q < n and π(q-2n)/L above
                let slot = if q < n { q + n } else { q - n };
                row[slot] = v.re * scale;
                imag = imag.max((v.im * scale).abs());
            }
            (row, imag)
        })
        .collect();
    let imag_residue = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let values = rows.into_iter().flat_map(|r| r.0).collect();
    Ok(PhaseSpaceField { xs, ps, values, scale: Scale::Micro, imag_residue })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TestShape {
    /// `b((X-Xc)/Xw) b((P-Pc)/Pw)` with `b(u) = exp(1/(u²-1))` on `|u| < 1`.
    Bump,
    /// Indicator of the support box, for mass checks.
    Unit,
}

/// Test function `θ(X, P)` supported in `[Xc ± Xw] × [Pc ± Pw]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TestFunction {
    pub x_centre: f64,
    pub x_width: f64,
    pub p_centre: f64,
    pub p_width: f64,
    pub shape: TestShape,
}

fn bump(u: f64) -> f64 {
    if u.abs() < 1.0 {
        (1.0 / (u * u - 1.0)).exp()
    } else {
        0.0
    }
}

impl TestFunction {
    pub fn bump(x_centre: f64, x_width: f64, p_centre: f64, p_width: f64) -> Result<Self> {
        if !(x_width > 0.0 && p_width > 0.0) {
            return Err(Error::Contract("test function widths must be positive".into()));
        }
        Ok(TestFunction { x_centre, x_width, p_centre, p_width, shape: TestShape::Bump })
    }

    pub fn unit_box(x: (f64, f64), p: (f64, f64)) -> Result<Self> {
        if !(x.1 > x.0 && p.1 > p.0) {
            return Err(Error::Contract("empty box".into()));
        }
        Ok(TestFunction {
            x_centre: 0.5 * (x.0 + x.1),
            x_width: 0.5 * (x.1 - x.0),
            p_centre: 0.5 * (p.0 + p.1),
            p_width: 0.5 * (p.1 - p.0),
            shape: TestShape::Unit,
        })
    }

    pub fn eval(&self, x: f64, p: f64) -> f64 {
        let u = (x - self.x_centre) / self.x_width;
        let v = (p - self.p_centre) / self.p_width;
        match self.shape {
            TestShape::Bump => bump(u) * bump(v),
            TestShape::Unit => {
                if u.abs() <= 1.0 && v.abs() <= 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// `((X_lo, X_hi), (P_lo, P_hi))`.
    pub fn support(&self) -> ((f64, f64), (f64, f64)) {
        (
            (self.x_centre - self.x_width, self.x_centre + self.x_width),
            (self.p_centre - self.p_width, self.p_centre + self.p_width),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pairing {
    pub value: f64,
    pub error_estimate: f64,
    /// The support of θ reaches past the grid, where the field is negligible.
    pub clipped: bool,
}

/// `∫ f^ε θ dX dP`, computed as `∫ W(x,p) θ(εx, p) dx dp` for a microscopic
/// field. The error estimate compares with the sum on every other node.
pub fn pair_macro(w: &PhaseSpaceField, theta: &TestFunction, eps: f64) -> Result<Pairing> {
    let factor = match w.scale {
        Scale::Micro => eps,
        Scale::Macro { eps: e } => {
            if (e - eps).abs() > 1e-12 * eps {
                return Err(Error::Contract(format!("field scaled with ε = {e}, pairing asked at {eps}")));
            }
            1.0
        }
    };
    if !(eps > 0.0) {
        return Err(Error::Contract(format!("ε = {eps} must be positive")));
    }
    let np = w.ps.len();
    let ((xlo, xhi), (plo, phi)) = theta.support();
    let xmin = factor * w.xs[0];
    let xmax = factor * w.xs[w.xs.len() - 1];
    let clipped = xlo < xmin || xhi > xmax || plo < w.ps[0] || phi > w.ps[np - 1];
    let cell = w.dx() * w.dp();
    let (mut fine, mut coarse) = (0.0, 0.0);
    let mut edge = 0.0f64;
    let mut peak = 0.0f64;
    for (i, x) in w.xs.iter().enumerate() {
        let big_x = factor * x;
        if big_x < xlo || big_x > xhi {
            continue;
        }
        for (k, p) in w.ps.iter().enumerate() {
            let t = theta.eval(big_x, *p);
            if t == 0.0 {
                continue;
            }
            let v = w.at(i, k);
            peak = peak.max(v.abs());
            if i == 0 || i == w.xs.len() - 1 || k == 0 || k == np - 1 {
                edge = edge.max(v.abs());
            }
            fine += v * t;
            if i % 2 == 0 && k % 2 == 0 {
                coarse += v * t;
            }
        }
    }
    if clipped && edge > 1e-8 * peak.max(1e-300) {
        return Err(Error::SupportClipped(format!("field reaches {edge:.3e} on the clipped edge")));
    }
    let value = fine * cell;
    Ok(Pairing { value, error_estimate: (value - 4.0 * coarse * cell).abs(), clipped })
}

/// Macroscopic initial distribution `g(X, P)`.
#[derive(Clone)]
pub enum InitialDistribution {
    Zero,
    /// `M (2π s_X s_P)^{-1} exp(-(X-X₀)²/2s_X² - (P-P₀)²/2s_P²)`.
    Gaussian { x0: f64, p0: f64, sx: f64, sp: f64, mass: f64 },
    Custom(Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for InitialDistribution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InitialDistribution::Zero => write!(f, "Zero"),
            InitialDistribution::Gaussian { x0, p0, sx, sp, mass } => {
                write!(f, "Gaussian {{ x0: {x0}, p0: {p0}, sx: {sx}, sp: {sp}, mass: {mass} }}")
            }
            InitialDistribution::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl InitialDistribution {
    pub fn eval(&self, x: f64, p: f64) -> f64 {
        match self {
            InitialDistribution::Zero => 0.0,
            InitialDistribution::Gaussian { x0, p0, sx, sp, mass } => {
                mass / (2.0 * PI * sx * sp)
                    * (-0.5 * ((x - x0) / sx).powi(2) - 0.5 * ((p - p0) / sp).powi(2)).exp()
            }
            InitialDistribution::Custom(g) => g(x, p),
        }
    }

    /// Density `ρ₀^ε` with `ε^{-1} W[ρ₀^ε](X/ε, P) = g(X, P)`.
    pub fn micro_density(&self, grid: GridSpec, eps: f64) -> Result<LowRankDensity> {
        match self {
            InitialDistribution::Zero => Ok(LowRankDensity::empty()),
            InitialDistribution::Gaussian { x0, p0, sx, sp, mass } => {
                gaussian_state(grid, x0 / eps, *p0, sx / eps, *sp, *mass, 1e-12)
            }
            InitialDistribution::Custom(_) => {
                Err(Error::Contract("sampled initial distributions have no microscopic state".into()))
            }
        }
    }
}

/// Mixed Gaussian state whose Wigner function is
/// `M (2π σ_x σ_p)^{-1} exp(-(x-x₀)²/2σ_x² - (p-p₀)²/2σ_p²)`, as the
/// thermal series `M(1-q) Σ q^k |h_k⟩⟨h_k|` with `q = (ν-1)/(ν+1)`,
/// `ν = 2σ_xσ_p`, truncated where the remaining mass falls below `tail`.
pub fn gaussian_state(
    grid: GridSpec,
    x0: f64,
    p0: f64,
    sigma_x: f64,
    sigma_p: f64,
    mass: f64,
    tail: f64,
) -> Result<LowRankDensity> {
    let nu = 2.0 * sigma_x * sigma_p;
    if !(nu >= 1.0 - 1e-12) || !(mass >= 0.0) {
        return Err(Error::Contract(format!("σ_x σ_p = {} violates the uncertainty bound", 0.5 * nu)));
    }
    let nu = nu.max(1.0);
    let q = (nu - 1.0) / (nu + 1.0);
    let terms = if q == 0.0 { 1 } else { ((tail.ln() / q.ln()).ceil() as usize).max(1) };
    let s = (sigma_x / sigma_p).sqrt();
    let xs = grid.xs();
    let mut prev = vec![0.0; xs.len()];
    let mut cur: Vec<f64> =
        xs.iter().map(|x| PI.powf(-0.25) / s.sqrt() * (-0.5 * ((x - x0) / s).powi(2)).exp()).collect();
    let phase: Vec<C64> = xs.iter().map(|x| C64::from_polar(1.0, p0 * x)).collect();
    let (mut weights, mut columns) = (Vec::new(), Vec::new());
    for k in 0..terms {
        weights.push(mass * (1.0 - q) * q.powi(k as i32));
        let amps = cur.iter().zip(&phase).map(|(h, e)| e * *h).collect();
        columns.push(WaveFunction::position(grid, amps)?);
        let kf = k as f64;
        let next: Vec<f64> = xs
            .iter()
            .zip(cur.iter().zip(&prev))
            .map(|(x, (c, p))| {
                let u = (x - x0) / s;
                (2.0 / (kf + 1.0)).sqrt() * u * c - (kf / (kf + 1.0)).sqrt() * p
            })
            .collect();
        prev = std::mem::replace(&mut cur, next);
    }
    let times = vec![0.0; terms];
    LowRankDensity::new(weights, columns, times)
}

/// Composite Gauss–Legendre rule with `panels` equal pieces.
fn composite(rule: &GaussRule, lo: f64, hi: f64, panels: usize) -> Vec<(f64, f64)> {
    let h = (hi - lo) / panels as f64;
    (0..panels).flat_map(|i| rule.on(lo + i as f64 * h, lo + (i + 1) as f64 * h).collect::<Vec<_>>()).collect()
}

/// `∫ g(X - 2aPT, P) θ dX dP + 2|c| ∫₀ᵀ ∫ θ(2aPS, P) |φ̂(P)|² dP dS`, the
/// pairing of the classical limit with `θ` (`2aP` is the group velocity of
/// `ω = aP²`). Panels are doubled until two levels agree to `1e-10`.
pub fn classical_limit_pairing(
    g: &InitialDistribution,
    phi_hat_sq: &(dyn Fn(f64) -> f64 + Sync),
    a: f64,
    c: f64,
    t: f64,
    theta: &TestFunction,
) -> Result<Pairing> {
    if !(t >= 0.0) {
        return Err(Error::Contract("time horizon must be nonnegative".into()));
    }
    let rule = GaussRule::new(16);
    let ((xlo, xhi), (plo, phi)) = theta.support();
    let eval = |panels: usize| -> f64 {
        let xq = composite(&rule, xlo, xhi, panels);
        let pq = composite(&rule, plo, phi, panels);
        let transport: f64 = match g {
            InitialDistribution::Zero => 0.0,
            _ => pq
                .par_iter()
                .map(|(p, wp)| xq.iter().map(|(x, wx)| wx * g.eval(x - 2.0 * a * p * t, *p) * theta.eval(*x, *p)).sum::<f64>() * wp)
                .sum(),
        };
        let source = if t > 0.0 && c != 0.0 {
            let sq = composite(&rule, 0.0, t, panels);
            pq.par_iter()
                .map(|(p, wp)| {
                    let inner: f64 = sq.iter().map(|(s, ws)| ws * theta.eval(2.0 * a * p * s, *p)).sum();
                    inner * phi_hat_sq(*p) * wp
                })
                .sum::<f64>()
                * 2.0
                * c.abs()
        } else {
            0.0
        };
        transport + source
    };
    let mut panels = 4;
    let mut prev = eval(panels);
    loop {
        panels *= 2;
        let cur = eval(panels);
        let err = (cur - prev).abs();
        if err <= 1e-10 * cur.abs().max(1.0) {
            return Ok(Pairing { value: cur, error_estimate: err, clipped: false });
        }
        if panels >= 512 {
            if err <= 1e-6 {
                return Ok(Pairing { value: cur, error_estimate: err, clipped: false });
            }
            return Err(Error::Quadrature(format!("classical pairing not converged ({err:.3e})")));
        }
        prev = cur;
    }
}

/// Microscopic setting of a semiclassical study: `H = a p²` on a line grid,
/// `φ(x) = (πσ²)^{-1/4} e^{-x²/2σ²}`, coupling `λ = cε` and horizon `T/ε`.
#[derive(Clone, Debug)]
pub struct SemiclassicalScenario {
    pub a: f64,
    pub sigma: f64,
    pub c: f64,
    pub t_macro: f64,
    pub n: usize,
    pub length: f64,
    pub dt: f64,
    /// Snapshot spacing of the emission integral (microscopic time).
    pub ds: f64,
    pub initial: InitialDistribution,
}

impl SemiclassicalScenario {
    /// `|φ̂(P)|² = σ π^{-1/2} e^{-σ²P²}`.
    pub fn phi_hat_sq(&self) -> impl Fn(f64) -> f64 + Sync {
        let s = self.sigma;
        move |p| s / PI.sqrt() * (-(s * p).powi(2)).exp()
    }

    /// `ρ(T/ε)` at scale `ε`, with its grid.
    pub fn density(&self, eps: f64) -> Result<(GridSpec, LowRankDensity)> {
        let grid = GridSpec::line(self.n, self.length)?;
        let h = HamiltonianSpec::free(grid, self.a)?;
        let s = self.sigma;
        let phi = WaveFunction::sample_position(grid, |x| C64::new((PI * s * s).powf(-0.25) * (-0.5 * (x[0] / s).powi(2)).exp(), 0.0));
        let lambda = self.c * eps;
        let horizon = self.t_macro / eps;
        let stride = (self.ds / self.dt).round().max(1.0) as usize;
        let opts = PropagationOptions { dt: self.dt, stride, ..Default::default() };
        let traj = evolve_trajectory(&h, &phi, lambda, &phi, horizon, &opts)?;
        let mut rho = assemble_density(&traj.snapshots, lambda, horizon)?;
        let rho0 = self.initial.micro_density(grid, eps)?;
        if rho0.rank() > 0 {
            let rho0 = rho0.columns().iter().map(|c| c.to_space(Space::Momentum(grid))).collect::<Result<Vec<_>>>()
                .and_then(|cols| LowRankDensity::new(rho0.weights().to_vec(), cols, rho0.times().to_vec()))?;
            rho = rho.combine(evolve_density(&rho0, &h, &phi, lambda, horizon, &opts)?)?;
        }
        Ok((grid, rho))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeviationRow {
    pub eps: f64,
    pub theta: usize,
    pub pairing: f64,
    pub classical: f64,
    pub deviation: f64,
    /// Two-grid estimate of the pairing error.
    pub error_estimate: f64,
}

/// `|⟨f^ε(T), θ⟩ - ⟨f⁰(T), θ⟩|` for every `ε` and test function.
pub fn semiclassical_deviation(
    s: &SemiclassicalScenario,
    eps: &[f64],
    thetas: &[TestFunction],
    budget: usize,
) -> Result<Vec<DeviationRow>> {
    let phs = s.phi_hat_sq();
    let classical: Vec<Pairing> = thetas
        .iter()
        .map(|th| classical_limit_pairing(&s.initial, &phs, s.a, s.c, s.t_macro, th))
        .collect::<Result<_>>()?;
    let per_eps: Vec<Vec<DeviationRow>> = eps
        .par_iter()
        .map(|&e| {
            let (grid, rho) = s.density(e)?;
            let w = wigner_of_density(&rho, grid, budget)?;
            thetas
                .iter()
                .zip(&classical)
                .enumerate()
                .map(|(i, (th, cl))| {
                    let p = pair_macro(&w, th, e)?;
                    Ok(DeviationRow {
                        eps: e,
                        theta: i,
                        pairing: p.value,
                        classical: cl.value,
                        deviation: (p.value - cl.value).abs(),
                        error_estimate: p.error_estimate,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(per_eps.into_iter().flatten().collect())
}
