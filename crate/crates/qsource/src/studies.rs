use std::f64::consts::PI;

use nalgebra::DMatrix;
use qsource_core::growth::{classify_regime, solve_growth, sweep_lambda, Scheme, SweepSettings, Thresholds};
use qsource_core::lattice::{GridSpec, HamiltonianSpec, Region, Space, WaveFunction};
use qsource_core::overlap::{OverlapFunction, RadialProfile};
use qsource_core::propagator::{fermionic_check, source_density, PropagationOptions, DEFAULT_RANK_CAP};
use qsource_core::spectral::{quartic_alpha, solve_characteristic, EigenvalueResult, Method};
use qsource_core::wigner::{semiclassical_deviation, InitialDistribution, SemiclassicalScenario, TestFunction};
use qsource_core::{Error, Result, C64};
use rayon::prelude::*;

use crate::config::{Config, Hamiltonian, LocalRegion, SchemeName, Source, Study};
use crate::output::{num, Csv, KeyValues};

/// Files produced by a study, plus whether its analysis was conclusive.
pub struct Report {
    pub files: Vec<(String, String)>,
    pub inconclusive: Option<String>,
    pub warnings: Vec<String>,
}

impl Report {
    fn new() -> Self {
        Report { files: Vec::new(), inconclusive: None, warnings: Vec::new() }
    }
    fn file(&mut self, name: &str, body: String) {
        self.files.push((name.to_string(), body));
    }
}

pub fn run(cfg: &Config) -> Result<Report> {
    match cfg.study {
        Study::Growth => growth(cfg),
        Study::Sweep => sweep(cfg),
        Study::Spectrum => spectrum(cfg),
        Study::Local => local(cfg),
        Study::Semiclassical => semiclassical(cfg),
    }
}

fn grid(cfg: &Config) -> Result<GridSpec> {
    GridSpec::line(cfg.numerics.n, cfg.numerics.length)
}

fn dispersion(cfg: &Config) -> f64 {
    match cfg.hamiltonian {
        Hamiltonian::Free { a } => a,
        _ => 1.0,
    }
}

fn matrix_hamiltonian(cfg: &Config) -> Result<HamiltonianSpec> {
    let Hamiltonian::Matrix { re, im } = &cfg.hamiltonian else {
        return Err(Error::Contract("matrix source without a matrix Hamiltonian".into()));
    };
    let n = re.len();
    HamiltonianSpec::finite_hermitian(DMatrix::from_fn(n, n, |i, j| C64::new(re[i][j], im[i][j])))
}

/// `φ̂(p) ∝ exp(1/((p/K)² − 1))` on `|p| < K`, normalized on the grid.
fn band_limited(g: GridSpec, k: f64) -> Result<WaveFunction> {
    WaveFunction::sample_momentum(g, |p| {
        let u = p[0] / k;
        C64::new(if u.abs() < 1.0 { (1.0 / (u * u - 1.0)).exp() } else { 0.0 }, 0.0)
    })
    .normalized()
}

fn gaussian(g: GridSpec, sigma: f64) -> WaveFunction {
    WaveFunction::sample_position(g, |x| C64::new((PI * sigma * sigma).powf(-0.25) * (-0.5 * (x[0] / sigma).powi(2)).exp(), 0.0))
}

/// Hamiltonian and source state on the configured lattice.
fn lattice_model(cfg: &Config) -> Result<(HamiltonianSpec, WaveFunction)> {
    match &cfg.source {
        Source::Matrix { re, im } => {
            let phi = WaveFunction::coefficients(re.iter().zip(im).map(|(a, b)| C64::new(*a, *b)).collect());
            Ok((matrix_hamiltonian(cfg)?, phi))
        }
        Source::LorentzianX => {
            let g = grid(cfg)?;
            let phi = WaveFunction::sample_position(g, |x| C64::new(1.0 / (PI * (1.0 + x[0] * x[0])).sqrt(), 0.0));
            Ok((HamiltonianSpec::position_operator(g), phi))
        }
        Source::GaussianFree1d { sigma } => {
            let g = grid(cfg)?;
            Ok((HamiltonianSpec::free(g, dispersion(cfg))?, gaussian(g, *sigma)))
        }
        Source::BandLimited { k } => {
            let g = grid(cfg)?;
            Ok((HamiltonianSpec::free(g, dispersion(cfg))?, band_limited(g, *k)?))
        }
        Source::RadialD3Explicit => Err(Error::Contract("radial_d3_explicit has no lattice state".into())),
    }
}

fn overlap(cfg: &Config) -> Result<OverlapFunction> {
    match &cfg.source {
        Source::LorentzianX => Ok(OverlapFunction::lorentzian()),
        Source::GaussianFree1d { sigma } => OverlapFunction::gaussian_free(1, dispersion(cfg), *sigma),
        Source::RadialD3Explicit => Ok(OverlapFunction::radial(RadialProfile::explicit(3), dispersion(cfg))),
        Source::Matrix { .. } | Source::BandLimited { .. } => {
            let (h, phi) = lattice_model(cfg)?;
            OverlapFunction::from_state(&h, &phi)
        }
    }
}

fn scheme(cfg: &Config) -> Scheme {
    match cfg.numerics.scheme {
        SchemeName::Trapezoid => Scheme::Trapezoid,
        SchemeName::Richardson => Scheme::Richardson,
    }
}

fn growth(cfg: &Config) -> Result<Report> {
    let lambda = cfg.coupling.lambda.expect("validated");
    let n = &cfg.numerics;
    let tr = solve_growth(&overlap(cfg)?, lambda, n.dt, n.t_max, scheme(cfg))?;
    let dndt = tr.dndt();
    let mut csv = Csv::new(&["t", "re_u", "im_u", "hsq", "N", "dNdt"]);
    let last = tr.len() - 1;
    for j in (0..tr.len()).filter(|j| j % n.output_stride == 0 || *j == last) {
        csv.row(&[num(tr.time(j)), num(tr.u[j].re), num(tr.u[j].im), num(tr.hsq[j]), num(tr.n[j]), num(dndt[j])]);
    }
    let mut report = Report::new();
    report.file("trace.csv", csv.finish());

    let mut kv = KeyValues::default();
    kv.num("lambda", lambda).num("t_max", tr.horizon()).num("N_final", tr.n[last]).put("truncated", tr.truncated);
    match classify_regime(&tr, &Thresholds::default()) {
        Ok(r) => {
            kv.put("regime", r.label());
            if let Some(rate) = r.rate() {
                kv.num("rate", rate);
            }
            if let qsource_core::growth::Regime::Bounded { plateau } = r {
                kv.num("plateau", plateau);
            }
        }
        Err(Error::Indeterminate(msg)) => {
            kv.put("regime", "INDETERMINATE").put("reason", &msg);
            report.inconclusive = Some(msg);
        }
        Err(Error::Contract(msg)) => {
            kv.put("regime", "UNCLASSIFIED").put("reason", &msg);
            report.warnings.push(format!("regime not classified: {msg}"));
        }
        Err(e) => return Err(e),
    }
    report.file("regime.txt", kv.finish());
    Ok(report)
}

fn sweep(cfg: &Config) -> Result<Report> {
    let lambdas = cfg.coupling.lambdas.as_ref().expect("validated");
    let n = &cfg.numerics;
    let settings = SweepSettings { dt: n.dt, t_max: n.t_max, thresholds: Thresholds::default(), refine_to: n.refine_to };
    let mut report = Report::new();
    let s = match sweep_lambda(&overlap(cfg)?, lambdas, &settings) {
        Ok(s) => s,
        Err(Error::NoTransitionInRange) => {
            let mut kv = KeyValues::default();
            kv.put("transition", "NONE");
            report.file("regime.txt", kv.finish());
            report.inconclusive = Some("no LINEAR → EXPONENTIAL transition in the λ grid".into());
            return Ok(report);
        }
        Err(e) => return Err(e),
    };
    let mut csv = Csv::new(&["lambda", "regime", "rate", "refined"]);
    for r in &s.rows {
        csv.row(&[num(r.lambda), r.outcome.label().to_string(), num(r.outcome.rate().unwrap_or(f64::NAN)), r.refined.to_string()]);
    }
    report.file("sweep.csv", csv.finish());
    let mut kv = KeyValues::default();
    kv.put("transition", "LINEAR_TO_EXPONENTIAL")
        .num("bracket_lo", s.bracket.0)
        .num("bracket_hi", s.bracket.1)
        .num("lambda_c", s.critical_estimate());
    report.file("regime.txt", kv.finish());
    Ok(report)
}

fn spectrum_row(csv: &mut Csv, lambda: f64, r: &EigenvalueResult) {
    let method = match r.method {
        Method::Characteristic => "characteristic",
        Method::Quartic => "quartic",
    };
    csv.row(&[num(lambda), num(r.alpha.re), num(r.alpha.im), num(r.residual), method.to_string()]);
}

fn spectrum(cfg: &Config) -> Result<Report> {
    let lambdas = cfg.coupling.lambdas.as_ref().expect("validated");
    let m = overlap(cfg)?;
    let quartic = matches!(cfg.source, Source::RadialD3Explicit) && dispersion(cfg) == 1.0;
    let results: Vec<_> = lambdas.par_iter().map(|&l| solve_characteristic(&m, l, None)).collect();
    let mut report = Report::new();
    let mut csv = Csv::new(&["lambda", "re_alpha", "im_alpha", "residual", "method"]);
    let blank = |csv: &mut Csv, l: f64, what: &str| {
        csv.row(&[num(l), num(f64::NAN), num(f64::NAN), num(f64::NAN), what.to_string()]);
    };
    for (&l, res) in lambdas.iter().zip(results) {
        match res {
            Ok(r) => spectrum_row(&mut csv, l, &r),
            Err(Error::NoRoot) => blank(&mut csv, l, "no_root"),
            Err(e) if e.is_inconclusive() => {
                blank(&mut csv, l, "unresolved");
                report.inconclusive.get_or_insert(format!("λ = {l}: {e}"));
            }
            Err(e) => return Err(e),
        }
        if quartic {
            spectrum_row(&mut csv, l, &quartic_alpha(l)?.1);
        }
    }
    report.file("spectrum.csv", csv.finish());
    Ok(report)
}

fn local(cfg: &Config) -> Result<Report> {
    let lambda = cfg.coupling.lambda.expect("validated");
    let n = &cfg.numerics;
    let (h, phi) = lattice_model(cfg)?;
    let region = match cfg.local.as_ref().expect("validated") {
        LocalRegion::Interval([lo, hi]) => Region::cube(h.grid().expect("grid Hamiltonian"), *lo, *hi),
        LocalRegion::Indices(ix) => {
            let dim = phi.len();
            let mut mask = vec![false; dim];
            ix.iter().for_each(|i| mask[*i] = true);
            Region::new(Space::Coefficients(dim), mask)?
        }
    };
    let opts = PropagationOptions { dt: n.dt, stride: 1, boundary_tol: n.boundary_tol };
    let rho = source_density(&h, &phi, lambda, n.t_max, &opts)?;
    let masses: Vec<(f64, f64)> =
        rho.columns().par_iter().map(|c| Ok((c.norm_sq(), region.mass(c)?))).collect::<Result<_>>()?;

    let samples = (n.t_max / n.ds).round() as usize;
    let times: Vec<f64> = (0..=samples).map(|k| if k == samples { n.t_max } else { k as f64 * n.ds }).collect();
    let eigen: Vec<Result<f64>> = times.par_iter().map(|&t| fermionic_check(&rho.emitted_before(t), DEFAULT_RANK_CAP)).collect();

    let mut report = Report::new();
    let mut csv = Csv::new(&["t", "trace", "local_trace", "max_eigenvalue"]);
    let (mut tr, mut loc, mut j) = (0.0, 0.0, 0);
    let mut over_budget = None;
    for (t, e) in times.iter().zip(eigen) {
        while j < rho.rank() && rho.times()[j] < *t {
            tr += rho.weights()[j] * masses[j].0;
            loc += rho.weights()[j] * masses[j].1;
            j += 1;
        }
        let top = match e {
            Ok(v) => v,
            Err(Error::RankBudget { rank, budget }) => {
                over_budget.get_or_insert((rank, budget));
                f64::NAN
            }
            Err(e) => return Err(e),
        };
        csv.row(&[num(*t), num(tr), num(loc), num(top)]);
    }
    if let Some((rank, budget)) = over_budget {
        report.warnings.push(format!(
            "density rank {rank} exceeds the eigenvalue budget {budget}; max_eigenvalue is NaN from there on"
        ));
    }
    report.file("local.csv", csv.finish());
    Ok(report)
}

fn semiclassical(cfg: &Config) -> Result<Report> {
    let sc = cfg.semiclassical.as_ref().expect("validated");
    let Source::GaussianFree1d { sigma } = cfg.source else {
        return Err(Error::Contract("semiclassical study needs gaussian_free_1d".into()));
    };
    let n = &cfg.numerics;
    let initial = match sc.initial {
        Some(g) => InitialDistribution::Gaussian { x0: g.x0, p0: g.p0, sx: g.sx.0, sp: g.sp.0, mass: g.mass.0 },
        None => InitialDistribution::Zero,
    };
    let scenario = SemiclassicalScenario {
        a: dispersion(cfg),
        sigma,
        c: cfg.coupling.c.expect("validated"),
        t_macro: n.t_max,
        n: n.n,
        length: n.length,
        dt: n.dt,
        ds: n.ds,
        initial,
    };
    let thetas: Vec<TestFunction> =
        sc.thetas.iter().map(|t| TestFunction::bump(t[0], t[1], t[2], t[3])).collect::<Result<_>>()?;
    let rows = semiclassical_deviation(&scenario, &sc.eps, &thetas, sc.budget)?;
    let mut csv = Csv::new(&["epsilon", "theta_id", "pair_micro", "pair_classical", "deviation"]);
    for r in &rows {
        csv.row(&[num(r.eps), r.theta.to_string(), num(r.pairing), num(r.classical), num(r.deviation)]);
    }
    let mut report = Report::new();
    report.file("semiclassical.csv", csv.finish());
    Ok(report)
}
