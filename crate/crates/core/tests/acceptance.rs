//! Acceptance criteria. Each criterion prints one PASS/FAIL line; the
//! process exits nonzero when any criterion fails.

mod common;

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use qsource_core::growth::{classify_regime, solve_growth, solve_volterra, sweep_lambda, Outcome, Scheme, SweepSettings, Thresholds};
use qsource_core::lattice::{GridSpec, HamiltonianSpec, Region, WaveFunction};
use qsource_core::overlap::{OverlapFunction, Tau};
use qsource_core::propagator::{
    evolve_density_history, evolve_trajectory, fermionic_check, local_trace, source_density, LowRankDensity, PropagationOptions, DEFAULT_RANK_CAP,
};
use qsource_core::spectral::{count_roots_halfplane, quartic_alpha, solve_characteristic, Contour, QuarticRoots};
use qsource_core::wigner::{semiclassical_deviation, InitialDistribution, SemiclassicalScenario, TestFunction};
use qsource_core::C64;

use common::{c, density, evolve, generator, random_hermitian, to_vec, trace};

type Outcome_ = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome_ {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn tau_of(m: &OverlapFunction) -> f64 {
    match m.tau().expect("tau") {
        Tau::Finite { value, .. } => value,
        Tau::Divergent { beta } => panic!("tau diverges (β = {beta})"),
    }
}

/// Mean of `dN/dt` over the last quarter of a trace.
fn final_rate(tr: &qsource_core::growth::GrowthTrace) -> f64 {
    let r = tr.dndt();
    let start = 3 * r.len() / 4;
    r[start..].iter().sum::<f64>() / (r.len() - start) as f64
}

fn c01_exact_trace() -> Outcome_ {
    let m = OverlapFunction::lorentzian();
    let tr = solve_growth(&m, 1.0, 1e-3, 5.0, Scheme::Trapezoid).map_err(|e| e.to_string())?;
    let (mut stated, mut doubled) = (0.0f64, 0.0f64);
    for (j, n) in tr.n.iter().enumerate() {
        let t = tr.time(j);
        stated = stated.max((n - (t * t + t)).abs());
        doubled = doubled.max((n - 2.0 * (t * t + t)).abs());
    }
    check(
        stated <= 1e-4,
        format!("max|N-(t²+t)| = {stated:.3e} (tol 1e-4); max|N-2(t²+t)| = {doubled:.3e}; N(5) = {:.6}", tr.n.last().unwrap()),
    )
}

fn c02_volterra_oracle() -> Outcome_ {
    let m = OverlapFunction::lorentzian();
    let mut worst = 0.0f64;
    for lambda in [-2.0, 0.5, 1.0, 1.5] {
        let tr = solve_growth(&m, lambda, 1e-3, 5.0, Scheme::Richardson).map_err(|e| e.to_string())?;
        for (j, u) in tr.u.iter().enumerate() {
            let exact = ((lambda - 1.0) * tr.time(j)).exp();
            worst = worst.max((u - exact).norm() / exact);
        }
    }
    check(worst <= 1e-6, format!("max relative error of u = {worst:.3e} (tol 1e-6)"))
}

fn c03_fermionic_saturation() -> Outcome_ {
    let m = OverlapFunction::lorentzian();
    let mut parts = Vec::new();
    let mut ok = true;
    for lambda in [-1.0f64, -10.0, -100.0] {
        let tr = solve_growth(&m, lambda, 1e-3, 10.0, Scheme::Richardson).map_err(|e| e.to_string())?;
        let rate = *tr.dndt().last().unwrap();
        let expect = 2.0 * lambda.abs() / (1.0 + lambda.abs());
        ok &= (rate - expect).abs() <= 1e-3;
        parts.push(format!("λ={lambda}: {rate:.6} vs {expect:.6}"));
    }
    // H = diag(x_j) on [-1,1] with a Gaussian state, λ = -50
    let n = 64;
    let xs: Vec<f64> = (0..n).map(|j| -1.0 + 2.0 * j as f64 / (n - 1) as f64).collect();
    let amp: Vec<C64> = xs.iter().map(|x| c((-x * x / (4.0 * 0.3f64.powi(2))).exp())).collect();
    let h = HamiltonianSpec::finite_hermitian(DMatrix::from_diagonal(&DVector::from_iterator(n, xs.iter().map(|x| c(*x)))))
        .map_err(|e| e.to_string())?;
    let phi = WaveFunction::coefficients(amp).normalized().map_err(|e| e.to_string())?;
    let m = OverlapFunction::from_state(&h, &phi).map_err(|e| e.to_string())?;
    let tr = solve_growth(&m, -50.0, 1e-3, 20.0, Scheme::Richardson).map_err(|e| e.to_string())?;
    let rate = final_rate(&tr);
    let bound = 2.0 / 50.0 + 1e-3;
    ok &= rate <= bound;
    parts.push(format!("64×64 λ=-50: final rate {rate:.5} ≤ {bound:.5}"));
    check(ok, parts.join("; "))
}

fn c04_rate_sandwich() -> Outcome_ {
    let m = OverlapFunction::gaussian_free(3, 1.0, 0.5).map_err(|e| e.to_string())?;
    let tau = tau_of(&m);
    let mut ok = true;
    let mut parts = vec![format!("τ = {tau:.6}")];
    for lambda in [0.2f64, -0.2] {
        let tr = solve_growth(&m, lambda, 0.01, 200.0, Scheme::Trapezoid).map_err(|e| e.to_string())?;
        let rate = *tr.dndt().last().unwrap();
        let a = 2.0 * lambda.abs();
        let b = 2.0 * lambda.abs() / (1.0 - lambda * tau).powi(2);
        let (lo, hi) = (a.min(b), a.max(b));
        ok &= rate >= lo * 0.98 && rate <= hi * 1.02;
        parts.push(format!("λ={lambda}: rate {rate:.6} in [{lo:.6}, {hi:.6}]"));
    }
    check(ok, parts.join("; "))
}

fn c05_bounded_number() -> Outcome_ {
    let eig = [-1.0, -1.0, 0.5, 2.0, 2.0];
    let h = DMatrix::from_diagonal(&DVector::from_iterator(5, eig.iter().map(|e| c(*e))));
    let phi = DVector::from_element(5, c(1.0 / 5f64.sqrt()));
    let m = OverlapFunction::spectral(eig.to_vec(), vec![0.2; 5]).map_err(|e| e.to_string())?;
    let tr = solve_growth(&m, -1.0, 0.01, 100.0, Scheme::Richardson).map_err(|e| e.to_string())?;
    let n_end = *tr.n.last().unwrap();
    let mut oracle = 0.0f64;
    for t in [0.5, 2.0, 10.0, 40.0] {
        let j = (t / tr.dt).round() as usize;
        let exact = trace(&density(&h, &phi, -1.0, &DMatrix::zeros(5, 5), t));
        oracle = oracle.max((tr.n[j] - exact).abs());
    }
    check(
        (n_end - 3.0).abs() <= 1e-4 && oracle <= 1e-8,
        format!("N(100) = {n_end:.8} (3 ± 1e-4); max |N - dense oracle| = {oracle:.3e} (tol 1e-8)"),
    )
}

fn c06_sublinear_pure_point() -> Outcome_ {
    let h = HamiltonianSpec::finite_hermitian(random_hermitian(64, 6)).map_err(|e| e.to_string())?;
    let phi = WaveFunction::coefficients(vec![c(1.0 / 8.0); 64]);
    let m = OverlapFunction::from_state(&h, &phi).map_err(|e| e.to_string())?;
    let tr = solve_growth(&m, -1.0, 0.05, 2000.0, Scheme::Richardson).map_err(|e| e.to_string())?;
    let r = tr.dndt();
    let q = r.len() / 8;
    let means: Vec<f64> = (0..8).map(|k| r[k * q..(k + 1) * q].iter().sum::<f64>() / q as f64).collect();
    let decreasing = means.windows(2).all(|w| w[1] < w[0]);
    let last = *means.last().unwrap();
    check(
        decreasing && last < 0.1 * r[0],
        format!(
            "window means of dN/dt {:?}; final {last:.4} vs 10% of initial {:.4}; N(T) = {:.3}",
            means.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>(),
            0.1 * r[0],
            tr.n.last().unwrap()
        ),
    )
}

fn c07_quartic_route() -> Outcome_ {
    let m = OverlapFunction::radial(qsource_core::overlap::RadialProfile::explicit(3), 1.0);
    let mut ok = true;
    let mut parts = Vec::new();
    for lambda in [0.01, 0.1, 1.0, 10.0] {
        let (q, r) = quartic_alpha(lambda).map_err(|e| e.to_string())?;
        let ch = solve_characteristic(&m, lambda, None).map_err(|e| e.to_string())?;
        let rel = (ch.alpha - r.alpha).norm() / r.alpha.norm();
        let p0 = QuarticRoots::eval(lambda, q.selected).norm();
        ok &= q.selected.im > 0.0 && p0 <= 1e-10 && q.identity_error() <= 1e-6 && r.alpha.re > 0.0 && rel <= 1e-6;
        parts.push(format!(
            "λ={lambda}: z0={:.6e}, |p(z0)|={p0:.1e}, identity {:.1e}, α={:.6e}, rel {rel:.1e}",
            q.selected,
            q.identity_error(),
            r.alpha
        ));
    }
    check(ok, parts.join("; "))
}

fn c08_large_coupling() -> Outcome_ {
    let m = OverlapFunction::gaussian_free(1, 1.0, 1.0).map_err(|e| e.to_string())?;
    let a50 = solve_characteristic(&m, 50.0, None).map_err(|e| e.to_string())?;
    let a500 = solve_characteristic(&m, 500.0, None).map_err(|e| e.to_string())?;
    let d50 = (a50.alpha / 50.0 - 1.0).norm();
    let d500 = (a500.alpha / 500.0 - 1.0).norm();
    check(d50 <= 0.1 && d500 <= 0.01, format!("|α/λ-1| = {d50:.3e} at λ=50 (≤0.1), {d500:.3e} at λ=500 (≤0.01)"))
}

fn c09_no_root_certificate() -> Outcome_ {
    let mut ok = true;
    let mut parts = Vec::new();
    let cases = [
        ("lorentzian", OverlapFunction::lorentzian(), 0.01, 200.0),
        ("gaussian d=3", OverlapFunction::gaussian_free(3, 1.0, 0.5).unwrap(), 0.01, 200.0),
    ];
    for (name, m, dt, t) in cases {
        let lambda = 0.5 / tau_of(&m);
        let count = count_roots_halfplane(&m, lambda, &Contour::for_coupling(&m, lambda)).map_err(|e| format!("{name}: {e}"))?;
        let tr = solve_growth(&m, lambda, dt, t, Scheme::Trapezoid).map_err(|e| e.to_string())?;
        let regime = classify_regime(&tr, &Thresholds::default());
        let label = regime.as_ref().map(|r| r.label()).unwrap_or("INDETERMINATE");
        ok &= count == 0 && label == "LINEAR";
        parts.push(format!("{name}: λ={lambda:.4}, roots {count}, regime {label}"));
    }
    check(ok, parts.join("; "))
}

fn c10_transition_bracket() -> Outcome_ {
    let m = OverlapFunction::lorentzian();
    let lambdas: Vec<f64> = (0..11).map(|k| 0.5 + 0.1 * k as f64).collect();
    let s = SweepSettings { dt: 0.02, t_max: 200.0, thresholds: Thresholds::default(), refine_to: Some(0.05) };
    let sweep = sweep_lambda(&m, &lambdas, &s).map_err(|e| e.to_string())?;
    let (lo, hi) = sweep.bracket;
    let est = sweep.critical_estimate();
    let stray: Vec<f64> = sweep
        .rows
        .iter()
        .filter(|r| matches!(r.outcome, Outcome::Indeterminate(_)) && !(r.lambda > lo && r.lambda < hi))
        .map(|r| r.lambda)
        .collect();
    check(
        (est - 1.0).abs() <= 0.05 && stray.is_empty(),
        format!("bracket [{lo:.5}, {hi:.5}], λ_c ≈ {est:.5}; indeterminate outside bracket: {stray:?}"),
    )
}

fn c11_phase_space_bound() -> Outcome_ {
    let g = GridSpec::line(1024, 800.0).map_err(|e| e.to_string())?;
    let h = HamiltonianSpec::free(g, 1.0).map_err(|e| e.to_string())?;
    let bump = |p: f64| if p.abs() < 1.0 { (1.0 / (p * p - 1.0)).exp() } else { 0.0 };
    let phi = WaveFunction::sample_momentum(g, |p| c(bump(p[0]))).normalized().map_err(|e| e.to_string())?;
    let lambda = -4.0;
    let opts = PropagationOptions { dt: 0.01, stride: 1, boundary_tol: 1e-6 };
    let rho = source_density(&h, &phi, lambda, 100.0, &opts).map_err(|e| e.to_string())?;
    let omega = Region::cube(g, -5.0, 5.0);
    let masses: Vec<f64> = rho.columns().iter().map(|col| omega.mass(col)).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    let mut running = 0.0;
    let mut peak = 0.0f64;
    for (w, m) in rho.weights().iter().zip(&masses) {
        running += w * m;
        peak = peak.max(running);
    }
    let mut top = 0.0f64;
    for t in (1..=10).map(|k| 10.0 * k as f64) {
        top = top.max(fermionic_check(&rho.emitted_before(t), DEFAULT_RANK_CAP).map_err(|e| e.to_string())?);
    }
    let bound = 10.0 / PI + 1e-3;
    check(
        peak <= bound && top <= 1.0 + 1e-6,
        format!("local trace at T {running:.5}, max {peak:.5} (≤ {bound:.5}); max eigenvalue {top:.10} (≤ 1+1e-6)"),
    )
}

fn c12_initial_washout() -> Outcome_ {
    let g = GridSpec::line(8192, 2048.0).map_err(|e| e.to_string())?;
    let h = HamiltonianSpec::free(g, 1.0).map_err(|e| e.to_string())?;
    let phi = common::gaussian(g, 1.0, 0.0, 0.0);
    let cols = vec![common::gaussian(g, 1.0, -2.0, 0.5), common::gaussian(g, 1.5, 2.0, -0.3)];
    let rho0 = LowRankDensity::new(vec![0.6, 0.4], cols, vec![0.0, 0.0]).map_err(|e| e.to_string())?;
    let opts = PropagationOptions { dt: 0.005, stride: 200, boundary_tol: 1e-6 };
    let hist = evolve_density_history(&rho0, &h, &phi, -1.0, 50.0, &opts).map_err(|e| e.to_string())?;
    let omega = Region::cube(g, -5.0, 5.0);
    let loc: Vec<f64> = hist.iter().map(|(_, d)| local_trace(d, &omega)).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    let first = loc[0];
    let last = *loc.last().unwrap();
    let half = &loc[loc.len() / 2..];
    let monotone = half.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9));
    check(
        last <= 0.1 * first && monotone,
        format!("local trace {first:.5} → {last:.3e} at T=50 ({:.2}% ); nonincreasing over last half: {monotone}", 100.0 * last / first),
    )
}

fn c13_semiclassical() -> Outcome_ {
    let thetas = [
        TestFunction::bump(1.1, 1.0, 2.7, 0.5).unwrap(),
        TestFunction::bump(-1.2, 1.05, -2.9, 0.5).unwrap(),
        TestFunction::bump(1.3, 1.2, 3.2, 0.6).unwrap(),
    ];
    let eps = [0.4, 0.2, 0.1];
    let mut dev = Vec::new();
    for cc in [1.0, -1.0] {
        let s = SemiclassicalScenario {
            a: 0.5,
            sigma: 0.5,
            c: cc,
            t_macro: 1.0,
            n: 1024,
            length: 256.0,
            dt: 1e-3,
            ds: 0.05,
            initial: InitialDistribution::Zero,
        };
        dev.push(semiclassical_deviation(&s, &eps, &thetas, DEFAULT_RANK_CAP).map_err(|e| e.to_string())?);
    }
    let mut ok = true;
    let mut parts = Vec::new();
    for (ci, rows) in dev.iter().enumerate() {
        for th in 0..thetas.len() {
            let d: Vec<f64> = eps.iter().map(|e| rows.iter().find(|r| r.theta == th && r.eps == *e).unwrap().deviation).collect();
            let fin = rows.iter().find(|r| r.theta == th && r.eps == 0.1).unwrap();
            let rel = fin.deviation / fin.classical.abs();
            ok &= d[1] < d[0] && d[2] < d[1] && rel <= 0.05;
            parts.push(format!("c={} θ{th}: {:.2e}>{:.2e}>{:.2e} ({:.2}%)", if ci == 0 { "+1" } else { "-1" }, d[0], d[1], d[2], 100.0 * rel));
        }
    }
    for th in 0..thetas.len() {
        let dp = dev[0].iter().find(|r| r.theta == th && r.eps == 0.1).unwrap().deviation;
        let dm = dev[1].iter().find(|r| r.theta == th && r.eps == 0.1).unwrap().deviation;
        ok &= dp.max(dm) <= 2.0 * dp.min(dm);
    }
    check(ok, parts.join("; "))
}

fn c14_orders() -> Outcome_ {
    let m = OverlapFunction::lorentzian();
    let err = |dt: f64| -> f64 {
        let sol = solve_volterra(&m, 1.5, dt, 5.0).unwrap();
        sol.u.iter().enumerate().map(|(j, u)| (u - (0.5 * j as f64 * dt).exp()).norm()).fold(0.0, f64::max)
    };
    let (e1, e2) = (err(0.02), err(0.01));
    let volterra = (e1 / e2).log2();

    let hm = random_hermitian(6, 14);
    let phi = common::random_unit(6, 15);
    let psi0 = common::random_unit(6, 16);
    let h = HamiltonianSpec::finite_hermitian(hm.clone()).map_err(|e| e.to_string())?;
    let exact = to_vec(&evolve(&generator(&hm, &phi, 0.7), &psi0, 2.0));
    let phi_w = WaveFunction::coefficients(to_vec(&phi));
    let psi_w = WaveFunction::coefficients(to_vec(&psi0));
    let serr = |dt: f64| -> f64 {
        let opts = PropagationOptions { dt, stride: usize::MAX, boundary_tol: 1e-6 };
        let tr = evolve_trajectory(&h, &phi_w, 0.7, &psi_w, 2.0, &opts).unwrap();
        common::max_abs_diff(tr.last().psi.amps(), &exact)
    };
    let (s1, s2) = (serr(0.02), serr(0.01));
    let strang = (s1 / s2).log2();
    check(
        (volterra - 2.0).abs() <= 0.3 && (strang - 2.0).abs() <= 0.3,
        format!("Volterra order {volterra:.3} ({e1:.2e}→{e2:.2e}); Strang order {strang:.3} ({s1:.2e}→{s2:.2e})"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome_); 14] = [
        ("exact model trace", c01_exact_trace),
        ("volterra oracle", c02_volterra_oracle),
        ("fermionic saturation", c03_fermionic_saturation),
        ("rate sandwich", c04_rate_sandwich),
        ("bounded fermion number", c05_bounded_number),
        ("sublinear pure point", c06_sublinear_pure_point),
        ("quartic route", c07_quartic_route),
        ("large-coupling asymptotics", c08_large_coupling),
        ("no-root certificate", c09_no_root_certificate),
        ("transition bracket", c10_transition_bracket),
        ("phase-space bound", c11_phase_space_bound),
        ("initial-condition washout", c12_initial_washout),
        ("semiclassical convergence", c13_semiclassical),
        ("convergence orders", c14_orders),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = format!("{:02}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|p| id == *p || name.contains(p.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            Err(e.downcast_ref::<String>().cloned().or(e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {id} PASS {name} ({secs:.1}s): {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {id} FAIL {name} ({secs:.1}s): {d}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
