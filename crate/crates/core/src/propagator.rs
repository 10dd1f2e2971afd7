//! Grid trajectories `ψ(t) = e^{(-iH+λP_φ)t} ψ₀`, low-rank densities and
//! local particle numbers.
//!
//! A Strang step in the frame where `H` is diagonal: half phase, exact
//! rank-one update `ψ += (e^{λδ‖φ‖²} - 1)/‖φ‖² · ⟨φ,ψ⟩ φ`, half phase.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::lattice::{boundary_mass, free_step, HamiltonianSpec, Region, Space, WaveFunction};
use crate::quad::trapezoid_weights;
use crate::{Error, Result, C64};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PropagationOptions {
    pub dt: f64,
    /// Steps between stored snapshots; the emission spacing is `stride·dt`.
    pub stride: usize,
    /// Largest admissible norm² within two lattice spacings of the box faces.
    pub boundary_tol: f64,
}

impl Default for PropagationOptions {
    fn default() -> Self {
        PropagationOptions { dt: 1e-3, stride: 50, boundary_tol: 1e-6 }
    }
}

/// Largest Gram dimension accepted by [`fermionic_check`].
pub const DEFAULT_RANK_CAP: usize = 2048;

#[derive(Clone, Debug)]
pub struct Snapshot {
    pub t: f64,
    pub psi: WaveFunction,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub dt: f64,
    pub snapshots: Vec<Snapshot>,
    /// Largest boundary mass seen over the snapshots (0 without a grid).
    pub max_boundary_mass: f64,
}

impl Trajectory {
    pub fn last(&self) -> &Snapshot {
        self.snapshots.last().expect("a trajectory holds at least the initial state")
    }
}

fn steps_for(dt: f64, t_max: f64) -> Result<usize> {
    if !(dt > 0.0 && dt.is_finite()) || !(t_max >= 0.0 && t_max.is_finite()) {
        return Err(Error::Contract(format!("need dt > 0 and T ≥ 0 (got dt = {dt}, T = {t_max})")));
    }
    let n = (t_max / dt).round();
    if (n * dt - t_max).abs() > 1e-6 * t_max.max(dt) {
        return Err(Error::Contract(format!("T = {t_max} is not a multiple of dt = {dt}")));
    }
    Ok(n as usize)
}

fn guard(psi: &WaveFunction, t: f64, tol: f64) -> Result<f64> {
    if psi.space().grid().is_none() {
        return Ok(0.0);
    }
    let mass = boundary_mass(psi)?;
    if mass > tol * psi.norm_sq().max(1.0) {
        return Err(Error::BoxTooSmall { t, mass });
    }
    Ok(mass)
}

/// Integrates `dψ/dt = -iHψ + λ⟨φ,ψ⟩φ` from `ψ₀` up to `t_max`.
pub fn evolve_trajectory(
    h: &HamiltonianSpec,
    phi: &WaveFunction,
    lambda: f64,
    psi0: &WaveFunction,
    t_max: f64,
    opts: &PropagationOptions,
) -> Result<Trajectory> {
    let steps = steps_for(opts.dt, t_max)?;
    if lambda.abs() * opts.dt >= 0.5 {
        return Err(Error::StepTooCoarse(format!("|λ|·dt = {:.3} ≥ 1/2", lambda.abs() * opts.dt)));
    }
    if opts.stride == 0 {
        return Err(Error::Contract("snapshot stride must be positive".into()));
    }
    let native = h.native_space();
    let f = h.to_frame(phi)?;
    let mut psi = h.to_frame(psi0)?;
    let w = h.frame_weight();
    let phi_sq: f64 = f.iter().map(|z| z.norm_sqr()).sum::<f64>() * w;
    let dt = opts.dt;
    let kick = if phi_sq > 0.0 { ((lambda * dt * phi_sq).exp_m1() / phi_sq) * w } else { 0.0 };
    let half: Vec<C64> = h.frequencies().iter().map(|e| C64::from_polar(1.0, -0.5 * e * dt)).collect();

    let snap = |psi: &[C64], t: f64| -> Result<(Snapshot, f64)> {
        let state = h.from_frame(psi.to_vec(), native)?;
        let mass = guard(&state, t, opts.boundary_tol)?;
        Ok((Snapshot { t, psi: state }, mass))
    };
    let (first, mut worst) = snap(&psi, 0.0)?;
    let mut snapshots = vec![first];
    for step in 1..=steps {
        for (a, p) in psi.iter_mut().zip(&half) {
            *a *= p;
        }
        let ov: C64 = f.iter().zip(&psi).map(|(a, b)| a.conj() * b).sum();
        let c = ov * kick;
        for (a, b) in psi.iter_mut().zip(&f) {
            *a += c * b;
        }
        for (a, p) in psi.iter_mut().zip(&half) {
            *a *= p;
        }
        if step % opts.stride == 0 || step == steps {
            let (s, mass) = snap(&psi, step as f64 * dt)?;
            worst = worst.max(mass);
            snapshots.push(s);
        }
    }
    Ok(Trajectory { dt, snapshots, max_boundary_mass: worst })
}

/// `ρ = Σ_j w_j |χ_j⟩⟨χ_j|` with `w_j ≥ 0`.
#[derive(Clone, Debug, Default)]
pub struct LowRankDensity {
    weights: Vec<f64>,
    columns: Vec<WaveFunction>,
    times: Vec<f64>,
}

impl LowRankDensity {
    pub fn new(weights: Vec<f64>, columns: Vec<WaveFunction>, times: Vec<f64>) -> Result<Self> {
        if weights.len() != columns.len() || times.len() != columns.len() {
            return Err(Error::Contract("weights, columns and times must have equal length".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Contract("density weights must be nonnegative".into()));
        }
        if let Some(first) = columns.first() {
            if columns.iter().any(|c| c.space() != first.space()) {
                return Err(Error::GridMismatch("density columns live on different spaces".into()));
            }
        }
        Ok(LowRankDensity { weights, columns, times })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn columns(&self) -> &[WaveFunction] {
        &self.columns
    }
    /// Emission times of the columns (or the evolution time for evolved ρ₀ columns).
    pub fn times(&self) -> &[f64] {
        &self.times
    }
    pub fn rank(&self) -> usize {
        self.columns.len()
    }
    pub fn space(&self) -> Option<Space> {
        self.columns.first().map(|c| c.space())
    }

    pub fn trace(&self) -> f64 {
        self.weights.iter().zip(&self.columns).map(|(w, c)| w * c.norm_sq()).sum()
    }

    /// Columns with time below `t`.
    pub fn emitted_before(&self, t: f64) -> LowRankDensity {
        let keep: Vec<usize> = (0..self.rank()).filter(|&j| self.times[j] < t).collect();
        LowRankDensity {
            weights: keep.iter().map(|&j| self.weights[j]).collect(),
            columns: keep.iter().map(|&j| self.columns[j].clone()).collect(),
            times: keep.iter().map(|&j| self.times[j]).collect(),
        }
    }

    /// Sum of two densities on the same space.
    pub fn combine(mut self, other: LowRankDensity) -> Result<Self> {
        if let (Some(a), Some(b)) = (self.space(), other.space()) {
            if a != b {
                return Err(Error::GridMismatch(format!("{a:?} vs {b:?}")));
            }
        }
        self.weights.extend(other.weights);
        self.columns.extend(other.columns);
        self.times.extend(other.times);
        Ok(self)
    }
}

/// `ρ(t) = 2|λ| ∫₀ᵗ χ(s)χ(s)* ds` from snapshots `χ(s_j)` of the trajectory
/// started at `φ`, using trapezoid weights on `s_j ≤ t`.
pub fn assemble_density(snapshots: &[Snapshot], lambda: f64, t: f64) -> Result<LowRankDensity> {
    if snapshots.is_empty() {
        return Err(Error::Empty("no snapshots".into()));
    }
    let tol = 1e-9 * t.abs().max(1.0);
    if snapshots[0].t.abs() > tol {
        return Err(Error::Contract("snapshots must start at s = 0".into()));
    }
    let used: Vec<&Snapshot> = snapshots.iter().take_while(|s| s.t <= t + tol).collect();
    let last = used.last().expect("first snapshot is at 0").t;
    if (last - t).abs() > tol {
        return Err(Error::Contract(format!("snapshots end at {last}, not at t = {t}")));
    }
    let times: Vec<f64> = used.iter().map(|s| s.t).collect();
    let weights = trapezoid_weights(&times).into_iter().map(|w| 2.0 * lambda.abs() * w).collect();
    LowRankDensity::new(weights, used.iter().map(|s| s.psi.clone()).collect(), times)
}

/// Source density of the discrete dynamics, one column per Strang step.
///
/// With `U = V K V` the Strang step (`V` the half phase, `K` the rank-one
/// kick) one has `UU* = 1 + (e^{2λδ‖φ‖²} - 1)/‖φ‖² · Vφ(Vφ)*`, so
/// `ρ_{n+1} = Uρ_nU* + w Vφ(Vφ)*` with `w = |e^{2λδ‖φ‖²} - 1|/‖φ‖²` is the
/// exact lattice counterpart of the density equation. Its columns are the
/// trajectory started at `Vφ`, recorded every step. For `λ < 0` the result
/// satisfies `ρ ≤ 1` up to rounding, with no quadrature error.
///
/// Column times are the emission midpoints `(j + ½)δ`; use
/// [`LowRankDensity::emitted_before`] for `ρ(t)` at `t < t_max`.
pub fn source_density(
    h: &HamiltonianSpec,
    phi: &WaveFunction,
    lambda: f64,
    t_max: f64,
    opts: &PropagationOptions,
) -> Result<LowRankDensity> {
    let steps = steps_for(opts.dt, t_max)?;
    if steps == 0 {
        return Ok(LowRankDensity::empty());
    }
    let phi_sq = phi.norm_sq();
    let start = free_step(phi, 0.5 * opts.dt, h)?;
    let every = PropagationOptions { stride: 1, ..*opts };
    let tr = evolve_trajectory(h, phi, lambda, &start, (steps - 1) as f64 * opts.dt, &every)?;
    let w = if phi_sq > 0.0 { (2.0 * lambda * opts.dt * phi_sq).exp_m1().abs() / phi_sq } else { 0.0 };
    let times = tr.snapshots.iter().map(|s| s.t + 0.5 * opts.dt).collect();
    LowRankDensity::new(vec![w; tr.snapshots.len()], tr.snapshots.into_iter().map(|s| s.psi).collect(), times)
}

/// `e^{(-iH+λP)T} ρ₀ e^{(iH+λP)T}`: every column evolved, weights kept.
pub fn evolve_density(
    rho0: &LowRankDensity,
    h: &HamiltonianSpec,
    phi: &WaveFunction,
    lambda: f64,
    t_max: f64,
    opts: &PropagationOptions,
) -> Result<LowRankDensity> {
    let single = PropagationOptions { stride: usize::MAX, ..*opts };
    let cols: Vec<WaveFunction> = rho0
        .columns
        .par_iter()
        .map(|c| evolve_trajectory(h, phi, lambda, c, t_max, &single).map(|tr| tr.last().psi.clone()))
        .collect::<Result<_>>()?;
    LowRankDensity::new(rho0.weights.clone(), cols, vec![t_max; rho0.rank()])
}

/// Evolved ρ₀ at every snapshot time of `opts`.
pub fn evolve_density_history(
    rho0: &LowRankDensity,
    h: &HamiltonianSpec,
    phi: &WaveFunction,
    lambda: f64,
    t_max: f64,
    opts: &PropagationOptions,
) -> Result<Vec<(f64, LowRankDensity)>> {
    let runs: Vec<Trajectory> = rho0
        .columns
        .par_iter()
        .map(|c| evolve_trajectory(h, phi, lambda, c, t_max, opts))
        .collect::<Result<_>>()?;
    let Some(first) = runs.first() else {
        return Ok(Vec::new());
    };
    (0..first.snapshots.len())
        .map(|i| {
            let t = first.snapshots[i].t;
            let cols = runs.iter().map(|r| r.snapshots[i].psi.clone()).collect();
            LowRankDensity::new(rho0.weights.clone(), cols, vec![t; rho0.rank()]).map(|d| (t, d))
        })
        .collect()
}

/// `tr(P_Ω ρ P_Ω) = Σ w_j ‖P_Ω χ_j‖²`.
pub fn local_trace(rho: &LowRankDensity, region: &Region) -> Result<f64> {
    let masses: Vec<f64> = rho.columns.par_iter().map(|c| region.mass(c)).collect::<Result<_>>()?;
    Ok(rho.weights.iter().zip(masses).map(|(w, m)| w * m).sum())
}

/// Row of [`local_trace_history`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalSample {
    pub t: f64,
    pub trace: f64,
    pub local_trace: f64,
}

/// Total and local trace of `ρ(t)` at every snapshot time, reusing the
/// fact that the emitted columns do not depend on `t`.
pub fn local_trace_history(snapshots: &[Snapshot], lambda: f64, region: &Region) -> Result<Vec<LocalSample>> {
    let pairs: Vec<(f64, f64)> = snapshots
        .par_iter()
        .map(|s| Ok((s.psi.norm_sq(), region.mass(&s.psi)?)))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(snapshots.len());
    let (mut tr, mut loc) = (0.0, 0.0);
    for i in 0..snapshots.len() {
        if i > 0 {
            let h = lambda.abs() * (snapshots[i].t - snapshots[i - 1].t);
            tr += h * (pairs[i].0 + pairs[i - 1].0);
            loc += h * (pairs[i].1 + pairs[i - 1].1);
        }
        out.push(LocalSample { t: snapshots[i].t, trace: tr, local_trace: loc });
    }
    Ok(out)
}

/// Hermitian matrix whose nonzero spectrum is that of `ρ`, together with the
/// factor needed to map its eigenvectors back to states.
struct GramForm {
    gram: DMatrix<C64>,
    factor: DMatrix<C64>,
    rows: Vec<usize>,
    by_columns: bool,
}

fn gram_form(rho: &LowRankDensity, budget: usize) -> Result<GramForm> {
    let space = rho.space().expect("nonempty density");
    let n = space.len();
    let k = rho.rank();
    let rows: Vec<usize> =
        (0..n).filter(|&i| rho.columns.iter().any(|c| c.amps()[i] != C64::new(0.0, 0.0))).collect();
    let dim = rows.len().min(k);
    if dim > budget {
        return Err(Error::RankBudget { rank: dim, budget });
    }
    let sw = space.weight().sqrt();
    let factor = DMatrix::from_fn(rows.len(), k, |i, j| rho.columns[j].amps()[rows[i]] * (rho.weights[j].sqrt() * sw));
    let by_columns = k <= rows.len();
    let gram = if by_columns { factor.adjoint() * &factor } else { &factor * factor.adjoint() };
    let scale = gram.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1e-300);
    let defect = (&gram - gram.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max) / scale;
    if defect > 1e-10 {
        return Err(Error::NonHermitian(defect));
    }
    Ok(GramForm { gram, factor, rows, by_columns })
}

/// Largest eigenvalue of `ρ`; `ρ ≤ 1` holds iff the result is at most 1.
pub fn fermionic_check(rho: &LowRankDensity, budget: usize) -> Result<f64> {
    if rho.rank() == 0 {
        return Ok(0.0);
    }
    let g = gram_form(rho, budget)?;
    let herm = (&g.gram + g.gram.adjoint()).scale(0.5);
    let values = nalgebra::linalg::SymmetricEigen::new(herm).eigenvalues;
    Ok(values.iter().copied().fold(0.0, f64::max))
}

/// Largest eigenvalue of `ρ` and a normalized eigenvector.
pub fn dominant_mode(rho: &LowRankDensity, budget: usize) -> Result<(f64, WaveFunction)> {
    if rho.rank() == 0 {
        return Err(Error::Empty("density has no columns".into()));
    }
    let space = rho.space().expect("nonempty density");
    let g = gram_form(rho, budget)?;
    let herm = (&g.gram + g.gram.adjoint()).scale(0.5);
    let eig = nalgebra::linalg::SymmetricEigen::new(herm);
    let (imax, value) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if *v > acc.1 { (i, *v) } else { acc });
    let v = eig.eigenvectors.column(imax);
    let on_rows: Vec<C64> = if g.by_columns { (&g.factor * v).iter().copied().collect() } else { v.iter().copied().collect() };
    let mut amps = vec![C64::new(0.0, 0.0); space.len()];
    for (r, a) in g.rows.iter().zip(on_rows) {
        amps[*r] = a;
    }
    Ok((value, WaveFunction::new(space, amps)?.normalized()?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{free_step, inner_product, GridSpec};
    use std::f64::consts::PI;

    fn gaussian(grid: GridSpec, x0: f64) -> WaveFunction {
        WaveFunction::sample_position(grid, |x| C64::new(PI.powf(-0.25) * (-0.5 * (x[0] - x0).powi(2)).exp(), 0.0))
    }

    #[test]
    fn zero_coupling_is_free_evolution() {
        let g = GridSpec::line(256, 40.0).unwrap();
        let h = HamiltonianSpec::free(g, 1.0).unwrap();
        let phi = gaussian(g, 0.0);
        let psi0 = gaussian(g, 1.0);
        let opts = PropagationOptions { dt: 0.01, stride: 10, boundary_tol: 1e-6 };
        let tr = evolve_trajectory(&h, &phi, 0.0, &psi0, 0.5, &opts).unwrap();
        let exact = free_step(&psi0, 0.5, &h).unwrap();
        let got = tr.last().psi.to_position().unwrap();
        let err = got.amps().iter().zip(exact.amps()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-12);
        assert_eq!(tr.snapshots.len(), 6);
    }

    #[test]
    fn box_guard_trips() {
        let g = GridSpec::line(64, 8.0).unwrap();
        let h = HamiltonianSpec::free(g, 1.0).unwrap();
        let phi = gaussian(g, 0.0);
        let opts = PropagationOptions { dt: 0.01, stride: 10, boundary_tol: 1e-6 };
        let r = evolve_trajectory(&h, &phi, -0.5, &phi, 5.0, &opts);
        assert!(matches!(r, Err(Error::BoxTooSmall { .. })), "{r:?}");
        assert!(matches!(
            evolve_trajectory(&h, &phi, 10.0, &phi, 1.0, &PropagationOptions { dt: 0.1, ..opts }),
            Err(Error::StepTooCoarse(_))
        ));
    }

    #[test]
    fn density_trace_at_small_time() {
        let g = GridSpec::line(256, 40.0).unwrap();
        let h = HamiltonianSpec::free(g, 1.0).unwrap();
        let phi = gaussian(g, 0.0);
        let opts = PropagationOptions { dt: 1e-4, stride: 1, boundary_tol: 1e-6 };
        let tr = evolve_trajectory(&h, &phi, 1.0, &phi, 1e-3, &opts).unwrap();
        let rho = assemble_density(&tr.snapshots, 1.0, 1e-3).unwrap();
        assert!((rho.trace() - 2e-3).abs() < 1e-5);
        assert!(rho.weights().iter().all(|w| *w >= 0.0));
        assert!(assemble_density(&[], 1.0, 1.0).is_err());
    }

    #[test]
    fn local_trace_bounds() {
        let g = GridSpec::line(256, 40.0).unwrap();
        let h = HamiltonianSpec::free(g, 1.0).unwrap();
        let phi = gaussian(g, 0.0);
        let opts = PropagationOptions { dt: 1e-3, stride: 50, boundary_tol: 1e-6 };
        let tr = evolve_trajectory(&h, &phi, -1.0, &phi, 1.0, &opts).unwrap();
        let rho = assemble_density(&tr.snapshots, -1.0, 1.0).unwrap();
        let full = Region::full(Space::Position(g)).unwrap();
        let none = Region::empty(Space::Position(g)).unwrap();
        let left = Region::from_fn(g, |x| x[0] < 0.3);
        assert!((local_trace(&rho, &full).unwrap() - rho.trace()).abs() < 1e-12);
        assert_eq!(local_trace(&rho, &none).unwrap(), 0.0);
        let a = local_trace(&rho, &left).unwrap();
        let b = local_trace(&rho, &left.complement()).unwrap();
        assert!((a + b - rho.trace()).abs() < 1e-12);
        let hist = local_trace_history(&tr.snapshots, -1.0, &left).unwrap();
        assert!((hist.last().unwrap().local_trace - a).abs() < 1e-12);
        assert_eq!(fermionic_check(&LowRankDensity::empty(), 10).unwrap(), 0.0);
    }

    #[test]
    fn gram_sides_agree() {
        let g = GridSpec::line(64, 20.0).unwrap();
        let cols: Vec<WaveFunction> = (0..3).map(|i| gaussian(g, i as f64 - 1.0)).collect();
        let rho = LowRankDensity::new(vec![0.3, 0.5, 0.2], cols.clone(), vec![0.0; 3]).unwrap();
        let small = fermionic_check(&rho, 100).unwrap();
        // a wide factor forces the row-side Gram matrix
        let many: Vec<WaveFunction> = (0..81).map(|i| cols[i % 3].clone()).collect();
        let w: Vec<f64> = (0..81).map(|i| [0.3, 0.5, 0.2][i % 3] / 27.0).collect();
        let wide = LowRankDensity::new(w, many, vec![0.0; 81]).unwrap();
        assert!((fermionic_check(&wide, 100).unwrap() - small).abs() < 1e-12);
        let (val, v) = dominant_mode(&rho, 100).unwrap();
        assert!((val - small).abs() < 1e-12);
        // ⟨v, ρ v⟩ equals the eigenvalue
        let rv: f64 = rho
            .columns()
            .iter()
            .zip(rho.weights())
            .map(|(c, w)| w * inner_product(c, &v).unwrap().norm_sqr())
            .sum();
        assert!((rv - val).abs() < 1e-12);
    }
}
