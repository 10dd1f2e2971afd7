//! Periodic grids, wave functions in position/momentum/coefficient form, the
//! unitary Fourier transform, Hamiltonians and exact free evolution.
//!
//! Conventions: `x_j = -L/2 + j·dx`, `p_k = 2π(k - n/2)/L` per axis, and
//! `φ̂(p) = (2π)^{-d/2} ∫ e^{-ip·x} φ(x) dx`. Norms carry the measure of the
//! representation: `dx^d` in position space, `dp^d` in momentum space and 1
//! for coefficient vectors.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};
use rustfft::{Fft, FftPlanner};

use crate::{Error, Result, C64};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    dim: usize,
    n: usize,
    length: f64,
}

impl GridSpec {
    pub fn new(dim: usize, n: usize, length: f64) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::Contract(format!("dimension {dim} not in 1..=3")));
        }
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::Contract(format!("points per axis {n} must be a power of two ≥ 8")));
        }
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::Contract(format!("box length {length} must be positive")));
        }
        Ok(GridSpec { dim, n, length })
    }

    pub fn line(n: usize, length: f64) -> Result<Self> {
        Self::new(1, n, length)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn length(&self) -> f64 {
        self.length
    }
    pub fn dx(&self) -> f64 {
        self.length / self.n as f64
    }
    pub fn dp(&self) -> f64 {
        2.0 * PI / self.length
    }
    /// Total number of lattice points, `n^d`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }
    pub fn is_empty(&self) -> bool {
        false
    }
    pub fn position_weight(&self) -> f64 {
        self.dx().powi(self.dim as i32)
    }
    pub fn momentum_weight(&self) -> f64 {
        self.dp().powi(self.dim as i32)
    }

    pub fn axis_x(&self, j: usize) -> f64 {
        -0.5 * self.length + j as f64 * self.dx()
    }
    pub fn axis_p(&self, k: usize) -> f64 {
        (k as f64 - (self.n / 2) as f64) * self.dp()
    }
    pub fn xs(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.axis_x(j)).collect()
    }
    pub fn ps(&self) -> Vec<f64> {
        (0..self.n).map(|k| self.axis_p(k)).collect()
    }

    /// Per-axis indices of a flat (row-major) index.
    pub fn unravel(&self, mut flat: usize) -> [usize; 3] {
        let mut idx = [0; 3];
        for a in (0..self.dim).rev() {
            idx[a] = flat % self.n;
            flat /= self.n;
        }
        idx
    }

    pub fn position(&self, flat: usize) -> [f64; 3] {
        let idx = self.unravel(flat);
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = self.axis_x(idx[a]);
        }
        x
    }

    pub fn momentum(&self, flat: usize) -> [f64; 3] {
        let idx = self.unravel(flat);
        let mut p = [0.0; 3];
        for a in 0..self.dim {
            p[a] = self.axis_p(idx[a]);
        }
        p
    }

    /// Distance of a lattice point to the nearest box face.
    pub fn edge_distance(&self, flat: usize) -> f64 {
        let x = self.position(flat);
        (0..self.dim)
            .map(|a| (x[a] + 0.5 * self.length).min(0.5 * self.length - x[a]))
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Space {
    Position(GridSpec),
    Momentum(GridSpec),
    Coefficients(usize),
}

impl Space {
    pub fn len(&self) -> usize {
        match self {
            Space::Position(g) | Space::Momentum(g) => g.len(),
            Space::Coefficients(n) => *n,
        }
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn weight(&self) -> f64 {
        match self {
            Space::Position(g) => g.position_weight(),
            Space::Momentum(g) => g.momentum_weight(),
            Space::Coefficients(_) => 1.0,
        }
    }
    pub fn grid(&self) -> Option<GridSpec> {
        match self {
            Space::Position(g) | Space::Momentum(g) => Some(*g),
            Space::Coefficients(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WaveFunction {
    space: Space,
    amps: Vec<C64>,
}

impl WaveFunction {
    pub fn new(space: Space, amps: Vec<C64>) -> Result<Self> {
        if amps.len() != space.len() {
            return Err(Error::Contract(format!(
                "{} amplitudes for a space of size {}",
                amps.len(),
                space.len()
            )));
        }
        Ok(WaveFunction { space, amps })
    }

    pub fn position(grid: GridSpec, amps: Vec<C64>) -> Result<Self> {
        Self::new(Space::Position(grid), amps)
    }
    pub fn momentum(grid: GridSpec, amps: Vec<C64>) -> Result<Self> {
        Self::new(Space::Momentum(grid), amps)
    }
    pub fn coefficients(amps: Vec<C64>) -> Self {
        WaveFunction { space: Space::Coefficients(amps.len()), amps }
    }

    /// Samples `f(x)` on the position lattice.
    pub fn sample_position(grid: GridSpec, f: impl Fn(&[f64]) -> C64) -> Self {
        let amps = (0..grid.len()).map(|j| f(&grid.position(j)[..grid.dim()])).collect();
        WaveFunction { space: Space::Position(grid), amps }
    }

    /// Samples `f(p)` on the momentum lattice.
    pub fn sample_momentum(grid: GridSpec, f: impl Fn(&[f64]) -> C64) -> Self {
        let amps = (0..grid.len()).map(|k| f(&grid.momentum(k)[..grid.dim()])).collect();
        WaveFunction { space: Space::Momentum(grid), amps }
    }

    pub fn zeros_like(&self) -> Self {
        WaveFunction { space: self.space, amps: vec![C64::new(0.0, 0.0); self.amps.len()] }
    }

    pub fn space(&self) -> Space {
        self.space
    }
    pub fn amps(&self) -> &[C64] {
        &self.amps
    }
    pub fn amps_mut(&mut self) -> &mut [C64] {
        &mut self.amps
    }
    pub fn into_amps(self) -> Vec<C64> {
        self.amps
    }
    pub fn len(&self) -> usize {
        self.amps.len()
    }
    pub fn is_empty(&self) -> bool {
        self.amps.is_empty()
    }

    pub fn norm_sq(&self) -> f64 {
        self.space.weight() * self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>()
    }
    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn scaled(mut self, s: C64) -> Self {
        self.amps.iter_mut().for_each(|a| *a *= s);
        self
    }

    pub fn normalized(self) -> Result<Self> {
        let n = self.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::Contract("cannot normalize a zero or non-finite state".into()));
        }
        Ok(self.scaled(C64::new(1.0 / n, 0.0)))
    }

    /// Same state in position representation.
    pub fn to_position(&self) -> Result<Self> {
        match self.space {
            Space::Position(_) => Ok(self.clone()),
            Space::Momentum(_) => inverse_fourier_transform(self),
            Space::Coefficients(_) => Err(Error::Contract("coefficient vector has no position form".into())),
        }
    }

    pub fn to_momentum(&self) -> Result<Self> {
        match self.space {
            Space::Momentum(_) => Ok(self.clone()),
            Space::Position(_) => fourier_transform(self),
            Space::Coefficients(_) => Err(Error::Contract("coefficient vector has no momentum form".into())),
        }
    }

    /// Converts to the representation of `space` (same grid required).
    pub fn to_space(&self, space: Space) -> Result<Self> {
        match (self.space, space) {
            (a, b) if a == b => Ok(self.clone()),
            (Space::Position(g), Space::Momentum(h)) | (Space::Momentum(g), Space::Position(h)) if g == h => {
                match space {
                    Space::Position(_) => self.to_position(),
                    _ => self.to_momentum(),
                }
            }
            (a, b) => Err(Error::GridMismatch(format!("{a:?} vs {b:?}"))),
        }
    }
}

fn fft_plan(n: usize, forward: bool) -> Arc<dyn Fft<f64>> {
    type Cache = Mutex<(FftPlanner<f64>, HashMap<(usize, bool), Arc<dyn Fft<f64>>>)>;
    static PLANS: OnceLock<Cache> = OnceLock::new();
    let cache = PLANS.get_or_init(|| Mutex::new((FftPlanner::new(), HashMap::new())));
    let mut guard = cache.lock().expect("fft plan cache poisoned");
    let (planner, plans) = &mut *guard;
    plans
        .entry((n, forward))
        .or_insert_with(|| if forward { planner.plan_fft_forward(n) } else { planner.plan_fft_inverse(n) })
        .clone()
}

/// Unnormalized DFT along every axis of a row-major `n^d` array.
pub(crate) fn fft_nd(data: &mut [C64], n: usize, dim: usize, forward: bool) {
    let plan = fft_plan(n, forward);
    if dim == 1 {
        plan.process(data);
        return;
    }
    let total = data.len();
    let mut line = vec![C64::new(0.0, 0.0); n];
    for axis in 0..dim {
        let stride = n.pow((dim - 1 - axis) as u32);
        for start in 0..total {
            // first element of each line along `axis`
            if !(start / stride).is_multiple_of(n) {
                continue;
            }
            for (i, v) in line.iter_mut().enumerate() {
                *v = data[start + i * stride];
            }
            plan.process(&mut line);
            for (i, v) in line.iter().enumerate() {
                data[start + i * stride] = *v;
            }
        }
    }
}

fn parity(grid: &GridSpec, flat: usize) -> f64 {
    let idx = grid.unravel(flat);
    let s: usize = idx[..grid.dim()].iter().sum();
    if s.is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

fn transform(grid: GridSpec, amps: &[C64], forward: bool) -> Vec<C64> {
    let d = grid.dim();
    let half_shift = if (d * (grid.n() / 2)).is_multiple_of(2) { 1.0 } else { -1.0 };
    let mut data: Vec<C64> = amps.iter().enumerate().map(|(j, a)| a * parity(&grid, j)).collect();
    fft_nd(&mut data, grid.n(), d, forward);
    let h = if forward { grid.dx() } else { grid.dp() };
    let scale = (h / (2.0 * PI).sqrt()).powi(d as i32) * half_shift;
    for (k, v) in data.iter_mut().enumerate() {
        *v *= scale * parity(&grid, k);
    }
    data
}

/// Unitary Fourier transform from position to momentum representation.
pub fn fourier_transform(psi: &WaveFunction) -> Result<WaveFunction> {
    match psi.space {
        Space::Position(g) => Ok(WaveFunction { space: Space::Momentum(g), amps: transform(g, &psi.amps, true) }),
        other => Err(Error::Contract(format!("fourier_transform expects position representation, got {other:?}"))),
    }
}

pub fn inverse_fourier_transform(psi: &WaveFunction) -> Result<WaveFunction> {
    match psi.space {
        Space::Momentum(g) => Ok(WaveFunction { space: Space::Position(g), amps: transform(g, &psi.amps, false) }),
        other => Err(Error::Contract(format!(
            "inverse_fourier_transform expects momentum representation, got {other:?}"
        ))),
    }
}

/// Discrete `⟨ψ, χ⟩ = Σ conj(ψ_j) χ_j · w` with the representation weight `w`.
pub fn inner_product(psi: &WaveFunction, chi: &WaveFunction) -> Result<C64> {
    if psi.space != chi.space {
        return Err(Error::GridMismatch(format!("{:?} vs {:?}", psi.space, chi.space)));
    }
    let s: C64 = psi.amps.iter().zip(&chi.amps).map(|(a, b)| a.conj() * b).sum();
    Ok(s * psi.space.weight())
}

/// Hermitian matrix with its eigendecomposition `H = V diag(ω) V*`.
#[derive(Clone, Debug)]
pub struct HermitianMatrix {
    matrix: DMatrix<C64>,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<C64>,
}

impl HermitianMatrix {
    pub fn new(matrix: DMatrix<C64>) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(Error::Contract("hermitian matrix must be square and nonempty".into()));
        }
        let defect = (&matrix - matrix.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if defect > 1e-12 {
            return Err(Error::Contract(format!("matrix is not hermitian (defect {defect:.3e})")));
        }
        let herm = (&matrix + matrix.adjoint()).scale(0.5);
        let eig = nalgebra::linalg::SymmetricEigen::new(herm);
        Ok(HermitianMatrix { matrix, eigenvalues: eig.eigenvalues, eigenvectors: eig.eigenvectors })
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let n = values.len();
        let matrix = DMatrix::from_fn(n, n, |i, j| if i == j { C64::new(values[i], 0.0) } else { C64::new(0.0, 0.0) });
        HermitianMatrix {
            matrix,
            eigenvalues: DVector::from_column_slice(values),
            eigenvectors: DMatrix::identity(n, n),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }
    pub fn eigenvectors(&self) -> &DMatrix<C64> {
        &self.eigenvectors
    }
}

#[derive(Clone, Debug)]
pub enum HamiltonianSpec {
    /// `ω(p) = a|p|²` on a periodic grid.
    FreeDispersion { grid: GridSpec, a: f64 },
    /// Real potential `V(x_j)` acting by multiplication.
    Multiplication { grid: GridSpec, potential: Arc<[f64]> },
    FiniteHermitian(Arc<HermitianMatrix>),
}

/// Basis in which a Hamiltonian is diagonal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FrameKind {
    Momentum(GridSpec),
    Position(GridSpec),
    Eigen(usize),
}

impl HamiltonianSpec {
    pub fn free(grid: GridSpec, a: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::Contract(format!("dispersion coefficient {a} must be positive")));
        }
        Ok(HamiltonianSpec::FreeDispersion { grid, a })
    }

    pub fn multiplication(grid: GridSpec, potential: Vec<f64>) -> Result<Self> {
        if potential.len() != grid.len() {
            return Err(Error::GridMismatch(format!("{} samples for {} points", potential.len(), grid.len())));
        }
        if potential.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("potential samples must be finite reals".into()));
        }
        Ok(HamiltonianSpec::Multiplication { grid, potential: potential.into() })
    }

    /// Multiplication by the first coordinate, `H = x`.
    pub fn position_operator(grid: GridSpec) -> Self {
        let v = (0..grid.len()).map(|j| grid.position(j)[0]).collect();
        Self::multiplication(grid, v).expect("lattice coordinates are finite")
    }

    pub fn finite_hermitian(matrix: DMatrix<C64>) -> Result<Self> {
        Ok(HamiltonianSpec::FiniteHermitian(Arc::new(HermitianMatrix::new(matrix)?)))
    }

    pub fn frame(&self) -> FrameKind {
        match self {
            HamiltonianSpec::FreeDispersion { grid, .. } => FrameKind::Momentum(*grid),
            HamiltonianSpec::Multiplication { grid, .. } => FrameKind::Position(*grid),
            HamiltonianSpec::FiniteHermitian(h) => FrameKind::Eigen(h.dim()),
        }
    }

    pub fn grid(&self) -> Option<GridSpec> {
        match self {
            HamiltonianSpec::FreeDispersion { grid, .. } | HamiltonianSpec::Multiplication { grid, .. } => Some(*grid),
            HamiltonianSpec::FiniteHermitian(_) => None,
        }
    }

    /// Space in which states of this Hamiltonian are naturally expressed.
    pub fn native_space(&self) -> Space {
        match self {
            HamiltonianSpec::FreeDispersion { grid, .. } => Space::Momentum(*grid),
            HamiltonianSpec::Multiplication { grid, .. } => Space::Position(*grid),
            HamiltonianSpec::FiniteHermitian(h) => Space::Coefficients(h.dim()),
        }
    }

    /// Diagonal of `H` in its frame.
    pub fn frequencies(&self) -> Vec<f64> {
        match self {
            HamiltonianSpec::FreeDispersion { grid, a } => (0..grid.len())
                .map(|k| {
                    let p = grid.momentum(k);
                    a * (p[0] * p[0] + p[1] * p[1] + p[2] * p[2])
                })
                .collect(),
            HamiltonianSpec::Multiplication { potential, .. } => potential.to_vec(),
            HamiltonianSpec::FiniteHermitian(h) => h.eigenvalues.iter().copied().collect(),
        }
    }

    /// Inner-product weight of frame vectors.
    pub fn frame_weight(&self) -> f64 {
        match self {
            HamiltonianSpec::FreeDispersion { grid, .. } => grid.momentum_weight(),
            HamiltonianSpec::Multiplication { grid, .. } => grid.position_weight(),
            HamiltonianSpec::FiniteHermitian(_) => 1.0,
        }
    }

    fn check(&self, psi: &WaveFunction) -> Result<()> {
        let ok = match (self, psi.space) {
            (HamiltonianSpec::FreeDispersion { grid, .. }, Space::Position(g) | Space::Momentum(g))
            | (HamiltonianSpec::Multiplication { grid, .. }, Space::Position(g) | Space::Momentum(g)) => *grid == g,
            (HamiltonianSpec::FiniteHermitian(h), Space::Coefficients(n)) => h.dim() == n,
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("state on {:?} does not fit {:?}", psi.space, self.frame())))
        }
    }

    /// Amplitudes of `ψ` in the frame where `H` is diagonal.
    pub fn to_frame(&self, psi: &WaveFunction) -> Result<Vec<C64>> {
        self.check(psi)?;
        match self {
            HamiltonianSpec::FreeDispersion { .. } => Ok(psi.to_momentum()?.amps),
            HamiltonianSpec::Multiplication { .. } => Ok(psi.to_position()?.amps),
            HamiltonianSpec::FiniteHermitian(h) => {
                let v = DVector::from_column_slice(&psi.amps);
                Ok(h.eigenvectors.ad_mul(&v).iter().copied().collect())
            }
        }
    }

    /// Inverse of [`to_frame`](Self::to_frame), returned in `space`.
    pub fn from_frame(&self, amps: Vec<C64>, space: Space) -> Result<WaveFunction> {
        match self {
            HamiltonianSpec::FreeDispersion { grid, .. } => {
                WaveFunction { space: Space::Momentum(*grid), amps }.to_space(space)
            }
            HamiltonianSpec::Multiplication { grid, .. } => {
                WaveFunction { space: Space::Position(*grid), amps }.to_space(space)
            }
            HamiltonianSpec::FiniteHermitian(h) => {
                let v = &h.eigenvectors * DVector::from_vec(amps);
                if space != Space::Coefficients(h.dim()) {
                    return Err(Error::GridMismatch(format!("{space:?} for a matrix Hamiltonian")));
                }
                Ok(WaveFunction::coefficients(v.iter().copied().collect()))
            }
        }
    }
}

/// Exact `e^{-iH dt} ψ`, returned in the representation of `ψ`.
pub fn free_step(psi: &WaveFunction, dt: f64, h: &HamiltonianSpec) -> Result<WaveFunction> {
    if !dt.is_finite() {
        return Err(Error::Contract("time step must be finite".into()));
    }
    let mut v = h.to_frame(psi)?;
    for (a, w) in v.iter_mut().zip(h.frequencies()) {
        *a *= C64::from_polar(1.0, -w * dt);
    }
    h.from_frame(v, psi.space)
}

/// Membership mask over a position lattice or over coefficient indices.
#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    space: Space,
    mask: Vec<bool>,
}

impl Region {
    pub fn new(space: Space, mask: Vec<bool>) -> Result<Self> {
        if matches!(space, Space::Momentum(_)) {
            return Err(Error::Contract("regions live in position space".into()));
        }
        if mask.len() != space.len() {
            return Err(Error::GridMismatch(format!("mask of length {} for {} points", mask.len(), space.len())));
        }
        Ok(Region { space, mask })
    }

    pub fn from_fn(grid: GridSpec, inside: impl Fn(&[f64]) -> bool) -> Self {
        let mask = (0..grid.len()).map(|j| inside(&grid.position(j)[..grid.dim()])).collect();
        Region { space: Space::Position(grid), mask }
    }

    /// The box `[lo, hi]^d`.
    pub fn cube(grid: GridSpec, lo: f64, hi: f64) -> Self {
        Self::from_fn(grid, |x| x.iter().all(|&c| c >= lo && c <= hi))
    }

    pub fn full(space: Space) -> Result<Self> {
        Self::new(space, vec![true; space.len()])
    }

    pub fn empty(space: Space) -> Result<Self> {
        Self::new(space, vec![false; space.len()])
    }

    pub fn complement(&self) -> Self {
        Region { space: self.space, mask: self.mask.iter().map(|b| !b).collect() }
    }

    pub fn space(&self) -> Space {
        self.space
    }
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|b| **b).count()
    }

    /// `|Ω| = count · dx^d`.
    pub fn measure(&self) -> f64 {
        self.count() as f64 * self.space.weight()
    }

    /// `‖P_Ω ψ‖²` without materializing the projection.
    pub fn mass(&self, psi: &WaveFunction) -> Result<f64> {
        let p = if psi.space == self.space { psi.clone() } else { psi.to_space(self.space)? };
        let s: f64 = p.amps.iter().zip(&self.mask).filter(|(_, m)| **m).map(|(a, _)| a.norm_sqr()).sum();
        Ok(s * self.space.weight())
    }
}

/// Orthogonal projection `P_Ω ψ` (position representation).
pub fn project_region(psi: &WaveFunction, region: &Region) -> Result<WaveFunction> {
    if psi.space != region.space {
        return Err(Error::GridMismatch(format!("state on {:?}, region on {:?}", psi.space, region.space)));
    }
    let amps = psi
        .amps
        .iter()
        .zip(&region.mask)
        .map(|(a, m)| if *m { *a } else { C64::new(0.0, 0.0) })
        .collect();
    Ok(WaveFunction { space: psi.space, amps })
}

/// Norm² of `ψ` within two lattice spacings of the box faces.
pub fn boundary_mass(psi: &WaveFunction) -> Result<f64> {
    let pos = psi.to_position()?;
    let g = pos.space.grid().expect("position space has a grid");
    let band = 2.0 * g.dx() + 1e-12 * g.length();
    let s: f64 = pos
        .amps
        .iter()
        .enumerate()
        .filter(|(j, _)| g.edge_distance(*j) <= band)
        .map(|(_, a)| a.norm_sqr())
        .sum();
    Ok(s * g.position_weight())
}
