mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;
use qsource_core::growth::{solve_growth, solve_volterra, Scheme};
use qsource_core::lattice::{
    fourier_transform, free_step, inner_product, inverse_fourier_transform, project_region, GridSpec, HamiltonianSpec,
    Region, Space, WaveFunction,
};
use qsource_core::overlap::{OverlapFunction, RadialProfile};
use qsource_core::propagator::{
    assemble_density, evolve_trajectory, local_trace, LowRankDensity, PropagationOptions,
};
use qsource_core::spectral::{laplace_overlap, quartic_alpha, solve_characteristic, QuarticRoots};
use qsource_core::wigner::wigner_of_density;
use qsource_core::C64;

use common::{c, density, gaussian, random_hermitian, random_unit, to_vec, trace};

fn opts(dt: f64, stride: usize) -> PropagationOptions {
    PropagationOptions { dt, stride, boundary_tol: 1e-6 }
}

fn grid() -> GridSpec {
    GridSpec::line(256, 40.0).unwrap()
}

prop_compose! {
    fn packet()(sigma in 0.5f64..2.5, x0 in -8.0f64..8.0, p0 in -3.0f64..3.0) -> WaveFunction {
        gaussian(grid(), sigma, x0, p0)
    }
}

prop_compose! {
    fn matrix_model()(n in 2usize..=8, seed in any::<u64>()) -> (DMatrix<C64>, nalgebra::DVector<C64>) {
        (random_hermitian(n, seed), random_unit(n, seed.wrapping_add(1)))
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn transforms_are_unitary(psi in packet(), a in 0.1f64..2.0, t in -3.0f64..3.0) {
        let hat = fourier_transform(&psi).unwrap();
        prop_assert!((hat.norm_sq() - psi.norm_sq()).abs() <= 1e-12);
        prop_assert!(common::max_abs_diff(inverse_fourier_transform(&hat).unwrap().amps(), psi.amps()) <= 1e-12);
        let h = HamiltonianSpec::free(grid(), a).unwrap();
        prop_assert!((free_step(&psi, t, &h).unwrap().norm_sq() - psi.norm_sq()).abs() <= 1e-12);
    }

    #[test]
    fn free_steps_compose(psi in packet(), s in -2.0f64..2.0, t in -2.0f64..2.0) {
        let h = HamiltonianSpec::free(grid(), 0.8).unwrap();
        let once = free_step(&psi, s + t, &h).unwrap();
        let twice = free_step(&free_step(&psi, s, &h).unwrap(), t, &h).unwrap();
        prop_assert!(common::max_abs_diff(once.amps(), twice.amps()) <= 1e-12);
    }

    #[test]
    fn projections_are_self_adjoint(psi in packet(), chi in packet(), lo in -15.0f64..0.0, width in 0.5f64..15.0) {
        let omega = Region::cube(grid(), lo, lo + width);
        let p_psi = project_region(&psi, &omega).unwrap();
        prop_assert!(common::max_abs_diff(project_region(&p_psi, &omega).unwrap().amps(), p_psi.amps()) == 0.0);
        prop_assert!(p_psi.norm_sq() <= psi.norm_sq());
        let left = inner_product(&p_psi, &chi).unwrap();
        let right = inner_product(&psi, &project_region(&chi, &omega).unwrap()).unwrap();
        prop_assert!((left - right).norm() <= 1e-12);
    }

    #[test]
    fn overlaps_are_bounded_and_hermitian(t in 0.0f64..30.0, sigma in 0.3f64..2.0, dim in 1usize..=3) {
        let models = [
            OverlapFunction::lorentzian(),
            OverlapFunction::gaussian_free(dim, 1.0, sigma).unwrap(),
            OverlapFunction::radial(RadialProfile::gaussian(dim, sigma).unwrap(), 0.7),
        ];
        for m in &models {
            let z = m.eval(t).unwrap();
            prop_assert!(z.norm() <= 1.0 + 1e-12);
            prop_assert!((m.eval(-t).unwrap() - z.conj()).norm() <= 1e-12);
        }
    }

    #[test]
    fn volterra_respects_the_l2_bound(lambda in -5.0f64..-0.05, seed in any::<u64>()) {
        let h = HamiltonianSpec::finite_hermitian(random_hermitian(6, seed)).unwrap();
        let phi = WaveFunction::coefficients(to_vec(&random_unit(6, seed ^ 7)));
        let m = OverlapFunction::from_state(&h, &phi).unwrap();
        let dt = 0.01;
        let sol = solve_volterra(&m, lambda, dt, 20.0).unwrap();
        let sum: f64 = sol.u.iter().map(|u| u.norm_sqr()).sum::<f64>() * dt;
        prop_assert!(2.0 * lambda.abs() * sum <= 1.0 + 10.0 * dt * lambda.abs(), "{}", 2.0 * lambda.abs() * sum);
    }

    #[test]
    fn norm_square_is_monotone(lambda in -3.0f64..3.0, sigma in 0.5f64..2.0) {
        let m = OverlapFunction::gaussian_free(3, 1.0, sigma).unwrap();
        let tr = solve_growth(&m, lambda, 0.01, 10.0, Scheme::Trapezoid).unwrap();
        for w in tr.hsq.windows(2) {
            if lambda < 0.0 {
                prop_assert!(w[1] <= w[0]);
            } else {
                prop_assert!(w[1] >= w[0]);
            }
        }
    }

    #[test]
    fn negative_coupling_rate_sandwich(lambda in -5.0f64..-0.1) {
        let tr = solve_growth(&OverlapFunction::lorentzian(), lambda, 1e-3, 20.0, Scheme::Richardson).unwrap();
        let rate = *tr.dndt().last().unwrap();
        let tol = 1e-3;
        prop_assert!(rate >= 2.0 * lambda.abs() / (1.0 - lambda).powi(2) - tol);
        prop_assert!(rate <= 2.0 * lambda.abs() + tol);
    }

    #[test]
    fn particle_number_matches_dense_oracle((hm, phi) in matrix_model(), lambda in -2.0f64..1.0) {
        let n = hm.nrows();
        let h = HamiltonianSpec::finite_hermitian(hm.clone()).unwrap();
        let m = OverlapFunction::from_state(&h, &WaveFunction::coefficients(to_vec(&phi))).unwrap();
        let tr = solve_growth(&m, lambda, 1e-3, 2.0, Scheme::Richardson).unwrap();
        for t in [0.5, 2.0] {
            let j = (t / 1e-3f64).round() as usize;
            let exact = trace(&density(&hm, &phi, lambda, &DMatrix::zeros(n, n), t));
            prop_assert!((tr.n[j] - exact).abs() <= 1e-8, "t={}: {} vs {}", t, tr.n[j], exact);
        }
    }

    #[test]
    fn norm_derivative_matches_overlap(lambda in -3.0f64..3.0, psi0 in packet()) {
        let g = grid();
        let h = HamiltonianSpec::free(g, 1.0).unwrap();
        let phi = gaussian(g, 1.0, 0.0, 0.0);
        let dt = 1e-3;
        let tr = evolve_trajectory(&h, &phi, lambda, &psi0, 0.2, &opts(dt, 1)).unwrap();
        for j in (1..tr.snapshots.len() - 1).step_by(37) {
            let fd = (tr.snapshots[j + 1].psi.norm_sq() - tr.snapshots[j - 1].psi.norm_sq()) / (2.0 * dt);
            let ov = inner_product(&phi.to_momentum().unwrap(), &tr.snapshots[j].psi).unwrap();
            let exact = 2.0 * lambda * ov.norm_sqr();
            prop_assert!((fd - exact).abs() <= 1e-3 * exact.abs().max(1e-6), "{} vs {}", fd, exact);
        }
    }

    #[test]
    fn adjoint_pairing((hm, phi) in matrix_model(), lambda in -2.0f64..2.0, seed in any::<u64>()) {
        let n = hm.nrows();
        let psi = WaveFunction::coefficients(to_vec(&random_unit(n, seed)));
        let chi = WaveFunction::coefficients(to_vec(&random_unit(n, seed ^ 99)));
        let phi = WaveFunction::coefficients(to_vec(&phi));
        let fwd = HamiltonianSpec::finite_hermitian(hm.clone()).unwrap();
        let bwd = HamiltonianSpec::finite_hermitian(-hm).unwrap();
        let a = evolve_trajectory(&fwd, &phi, lambda, &psi, 1.0, &opts(1e-4, usize::MAX)).unwrap();
        let b = evolve_trajectory(&bwd, &phi, lambda, &chi, 1.0, &opts(1e-4, usize::MAX)).unwrap();
        let left = inner_product(&a.last().psi, &chi).unwrap();
        let right = inner_product(&psi, &b.last().psi).unwrap();
        prop_assert!((left - right).norm() <= 1e-8);
    }

    #[test]
    fn density_matches_dense_oracle((hm, phi) in matrix_model(), lambda in -2.0f64..1.0, mask in any::<u8>()) {
        let n = hm.nrows();
        let h = HamiltonianSpec::finite_hermitian(hm.clone()).unwrap();
        let phi_w = WaveFunction::coefficients(to_vec(&phi));
        let t = 1.0;
        let tr = evolve_trajectory(&h, &phi_w, lambda, &phi_w, t, &opts(2.5e-4, 1)).unwrap();
        let rho = assemble_density(&tr.snapshots, lambda, t).unwrap();
        let exact = density(&hm, &phi, lambda, &DMatrix::zeros(n, n), t);
        prop_assert!((rho.trace() - trace(&exact)).abs() <= 1e-6);
        let bits: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
        let omega = Region::new(Space::Coefficients(n), bits.clone()).unwrap();
        let dense_local: f64 = (0..n).filter(|i| bits[*i]).map(|i| exact[(i, i)].re).sum();
        prop_assert!((local_trace(&rho, &omega).unwrap() - dense_local).abs() <= 1e-6);
    }

    #[test]
    fn evolution_norm_is_bounded((hm, phi) in matrix_model(), lambda in -3.0f64..3.0, t in 0.1f64..3.0, seed in any::<u64>()) {
        let n = hm.nrows();
        let h = HamiltonianSpec::finite_hermitian(hm).unwrap();
        let psi = WaveFunction::coefficients(to_vec(&random_unit(n, seed)));
        let t = (t * 100.0).round() / 100.0;
        let tr = evolve_trajectory(&h, &WaveFunction::coefficients(to_vec(&phi)), lambda, &psi, t, &opts(0.01, 10)).unwrap();
        for s in &tr.snapshots {
            prop_assert!(s.psi.norm() <= (lambda.abs() * s.t).exp() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn local_trace_is_bounded_and_additive(a in packet(), b in packet(), w in 0.0f64..2.0, lo in -15.0f64..5.0, split in 0.0f64..10.0) {
        let rho = LowRankDensity::new(vec![1.0, w], vec![a, b], vec![0.0; 2]).unwrap();
        let left = Region::cube(grid(), lo, lo + split);
        let right = Region::cube(grid(), lo + split + 1e-9, lo + 10.0);
        let both = Region::cube(grid(), lo, lo + 10.0);
        let (l, r, t) = (local_trace(&rho, &left).unwrap(), local_trace(&rho, &right).unwrap(), local_trace(&rho, &both).unwrap());
        prop_assert!(l >= 0.0 && t <= rho.trace() * (1.0 + 1e-12));
        prop_assert!((l + r - t).abs() <= 1e-12);
        prop_assert!((local_trace(&rho, &both.complement()).unwrap() + t - rho.trace()).abs() <= 1e-12);
    }

    #[test]
    fn wigner_fields_are_real_with_the_trace_as_mass(a in packet(), b in packet(), w in 0.0f64..2.0) {
        let rho = LowRankDensity::new(vec![1.0, w], vec![a, b], vec![0.0; 2]).unwrap();
        let field = wigner_of_density(&rho, grid(), 10).unwrap();
        prop_assert!(field.imag_residue() <= 1e-10);
        prop_assert!((field.mass() - rho.trace()).abs() <= 1e-8);
    }

    #[test]
    fn quartic_roots_are_never_real(lambda in 1e-3f64..100.0) {
        let (q, r) = quartic_alpha(lambda).unwrap();
        prop_assert!(q.roots.iter().all(|z| z.im.abs() > 0.0));
        let min = (-20_000..=20_000)
            .map(|k| QuarticRoots::eval(lambda, c(k as f64 * 5e-4 * (1.0 + lambda.sqrt()))).norm())
            .fold(f64::INFINITY, f64::min);
        prop_assert!(min > 0.0);
        prop_assert!(r.alpha.re > 0.0);
    }

    #[test]
    fn accepted_roots_solve_the_characteristic_equation(lambda in 1.05f64..20.0) {
        let m = OverlapFunction::lorentzian();
        let r = solve_characteristic(&m, lambda, None).unwrap();
        prop_assert!((laplace_overlap(&m, r.alpha).unwrap() * lambda - 1.0).norm() <= 1e-10);
        prop_assert!(r.alpha.re > 0.0 && r.residual <= 1e-6);
    }
}
