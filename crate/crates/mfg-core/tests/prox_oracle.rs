//! Brute-force oracle for the pointwise proximal map: a two-variable
//! grid search over (density, flux magnitude) refined by zooming,
//! independent of the scalar-equation reduction used by the solver.

mod common;

use mfg_core::coupling::{project_onto_cone, prox_point, CouplingSpec};
use mfg_core::grid::GridSpec;
use rand::{rngs::StdRng, Rng, SeedableRng};

#[test]
fn prox_point_matches_brute_force_on_random_samples() {
    let grid = GridSpec::new(4, 2, 1.0, 0.3, 2.0).unwrap();
    let mut rng = StdRng::seed_from_u64(2024);
    for sample in 0..200 {
        let mbar = rng.gen_range(0.0..3.0);
        let wbar_norm_target = rng.gen_range(0.0..3.0);
        let raw: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let raw_norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
        let wbar: [f64; 4] = std::array::from_fn(|i| raw[i] / raw_norm * wbar_norm_target);
        let tau = rng.gen_range(0.01..2.0);
        let hbar = rng.gen_range(-3.0..3.0);

        let coupling = CouplingSpec::quadratic_congestion(2.0, vec![hbar; 16]);
        let got = prox_point(mbar, wbar, tau, 0, false, &coupling, &grid).unwrap();

        let pk = project_onto_cone(wbar);
        let pk_norm = pk.iter().map(|v| v * v).sum::<f64>().sqrt();
        let oracle = common::ProxBruteForce {
            pk_norm,
            wbar_norm_sq: wbar.iter().map(|v| v * v).sum(),
            mbar,
            tau,
            hbar,
            q: 2.0,
        };
        // the minimizer satisfies m <= mbar + tau (|hbar| + |pk|^2/(2 tau^2) tau ...);
        // a generous box suffices because the objective is coercive
        let m_hi = mbar + tau * (hbar.abs() + 3.0) + 3.0;
        let (m_brute, rho_brute) = oracle.minimize(m_hi, pk_norm);

        let rho_got = got.w.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(
            (got.m - m_brute).abs() <= 1e-4,
            "sample {sample}: m {} vs brute {m_brute} (mbar {mbar}, tau {tau}, hbar {hbar})",
            got.m
        );
        assert!(
            (rho_got - rho_brute).abs() <= 1e-4,
            "sample {sample}: |w| {rho_got} vs brute {rho_brute}"
        );
        // the implementation's value is never worse than the brute force's
        assert!(oracle.eval(got.m, rho_got) <= oracle.eval(m_brute, rho_brute) + 1e-8);
    }
}

#[test]
fn prox_point_terminal_cost_shifts_the_root() {
    // adding a terminal cost g = m scaled by 1/dt lowers the optimal m
    let grid = GridSpec::new(4, 2, 1.0, 0.3, 2.0).unwrap();
    let hbar = vec![0.5; 16];
    let plain = CouplingSpec::quadratic_congestion(2.0, hbar.clone());
    let with_terminal = CouplingSpec::new(
        2.0,
        hbar,
        std::sync::Arc::new(|_, m| m * m - 0.5),
        std::sync::Arc::new(|_, m| m * m * m / 3.0 - 0.5 * m),
        std::sync::Arc::new(|_, m| m),
        std::sync::Arc::new(|_, m| m * m / 2.0),
    );
    let a = prox_point(1.0, [0.4, -0.2, 0.0, 0.0], 0.5, 0, true, &plain, &grid).unwrap();
    let b =
        prox_point(1.0, [0.4, -0.2, 0.0, 0.0], 0.5, 0, true, &with_terminal, &grid).unwrap();
    assert!(b.m < a.m, "terminal cost must push the density down: {} vs {}", b.m, a.m);
}

#[test]
fn prox_point_general_exponent_reduces_to_quadratic_at_q2() {
    // the generic shrink path evaluated at q slightly above 2 stays close
    // to the closed-form quadratic path
    let grid = GridSpec::new(4, 2, 1.0, 0.3, 2.0).unwrap();
    let c2 = CouplingSpec::quadratic_congestion(2.0, vec![0.8; 16]);
    let c2eps = CouplingSpec::quadratic_congestion(2.0 + 1e-7, vec![0.8; 16]);
    let wbar = [0.9, -0.3, 0.2, -0.1];
    let a = prox_point(1.2, wbar, 0.7, 0, false, &c2, &grid).unwrap();
    let b = prox_point(1.2, wbar, 0.7, 0, false, &c2eps, &grid).unwrap();
    assert!((a.m - b.m).abs() < 1e-5);
    for c in 0..4 {
        assert!((a.w[c] - b.w[c]).abs() < 1e-5);
    }
}

#[test]
fn prox_point_general_exponent_satisfies_brute_force() {
    // spot-check the q != 2 route against the two-variable brute force
    let grid = GridSpec::new(4, 2, 1.0, 0.3, 1.5).unwrap();
    let coupling = CouplingSpec::quadratic_congestion(1.5, vec![1.0; 16]);
    let wbar = [1.2, -0.4, 0.0, -0.2];
    let tau = 0.6;
    let got = prox_point(0.8, wbar, tau, 0, false, &coupling, &grid).unwrap();

    let pk = project_onto_cone(wbar);
    let pk_norm = pk.iter().map(|v| v * v).sum::<f64>().sqrt();
    let oracle = common::ProxBruteForce {
        pk_norm,
        wbar_norm_sq: wbar.iter().map(|v| v * v).sum(),
        mbar: 0.8,
        tau,
        hbar: 1.0,
        q: 1.5,
    };
    let (m_brute, rho_brute) = oracle.minimize(4.0, pk_norm);
    let rho_got = got.w.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!((got.m - m_brute).abs() <= 1e-3, "m {} vs {}", got.m, m_brute);
    assert!((rho_got - rho_brute).abs() <= 1e-3, "|w| {} vs {}", rho_got, rho_brute);
}
