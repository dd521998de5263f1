//! Cross-module consistency: the resolvent realization of the time
//! integrals against the PDE semigroup, and the ensemble estimators against
//! the closed-form count statistics.

use bbm_core::moments;
use bbm_core::pde::{solve_rho_bar, BoundaryMode, InitialData, PdeProblem};
use bbm_core::potential::{Dim, Potential, Shape};
use bbm_core::sim::{self, MomentScaling, SimConfig};
use bbm_core::spectral::{self, Normalization};
use bbm_core::QuadGrid;

fn bump3() -> Potential {
    Potential::new(Dim::Three, Shape::Bump { center: 0.0, radius: 1.0, height: 1.0 }).unwrap()
}

/// `S_{2 lambda0} g = integral_0^infty e^{-2 lambda0 s} P_s g ds`, checked by
/// running the semigroup with the PDE oracle and integrating in time, with
/// the spectral tail appended beyond the horizon.
#[test]
fn resolvent_matches_time_integrated_semigroup() {
    let p = bump3();
    let grid = QuadGrid::support(&p, 128).unwrap();
    let op = spectral::assemble_k(0.5, 1.0, &p, &grid).unwrap();
    let beta = 1.0 / spectral::principal_eigen(&op).unwrap().0;
    let gs = spectral::ground_state(beta, &p, &grid, Normalization::L2).unwrap();
    let lambda0 = gs.lambda0;

    // source g = v (the bump itself), evolved by the linear equation
    let t_end = 14.0;
    let dt = 0.005;
    let sol = solve_rho_bar(&PdeProblem {
        potential: p.clone(),
        beta,
        t_end,
        mesh_h: 0.01,
        dt,
        n_max: 1,
        bc: BoundaryMode::Neumann,
        initial: InitialData::Bump { radius: 1.0, height: 1.0 },
        domain_l: None,
        probes: vec![0.0],
    })
    .unwrap();

    // trapezoid in t of e^{-2 lambda0 s} P_s g at the origin
    let series = &sol.probe_series[0][0];
    let mut integral = 0.0;
    for (i, w) in sol.times.windows(2).enumerate() {
        let f0 = (-2.0 * lambda0 * w[0]).exp() * series[i];
        let f1 = (-2.0 * lambda0 * w[1]).exp() * series[i + 1];
        integral += 0.5 * (w[1] - w[0]) * (f0 + f1);
    }
    // spectral tail: P_s g ~ e^{lambda0 s} <psi, g> psi beyond the horizon
    let g_grid = grid.sample(|r| p.eval_radial(r));
    let inner: f64 = grid.integrate(
        &g_grid
            .iter()
            .zip(&gs.psi)
            .map(|(&g, &ps)| g * ps)
            .collect::<Vec<_>>(),
    );
    integral += inner * gs.eval(0.0) * (-lambda0 * t_end).exp() / lambda0;

    let resolvent = spectral::resolvent_apply(2.0 * lambda0, beta, &p, &grid, &g_grid).unwrap();
    let direct = resolvent.eval(0.0);
    let rel = (integral - direct).abs() / direct;
    assert!(rel <= 0.01, "semigroup integral {integral} vs resolvent {direct} (rel {rel:.3e})");
}

/// Raw count moments assembled from the integrated hierarchy (Stirling
/// route) match the ensemble's second moment.
#[test]
fn stirling_assembly_matches_monte_carlo() {
    let p = bump3();
    let grid = QuadGrid::support(&p, 96).unwrap();
    let beta_cr = spectral::beta_critical(&p, &grid).unwrap();
    let beta = 1.3 * beta_cr;
    let t_end = 4.0;
    let sol = solve_rho_bar(&PdeProblem {
        potential: p.clone(),
        beta,
        t_end,
        mesh_h: 0.02,
        dt: 0.01,
        n_max: 2,
        bc: BoundaryMode::Neumann,
        initial: InitialData::Ones,
        domain_l: None,
        probes: vec![0.0],
    })
    .unwrap();
    let last = sol.times.len() - 1;
    let rho = [sol.probe_series[0][0][last], sol.probe_series[1][0][last]];
    let assembled = moments::raw_count_moments(&rho, 2).unwrap();

    let mut cfg = SimConfig::new(p, beta, &[0.0, 0.0, 0.0], t_end).unwrap();
    cfg.checkpoints = vec![t_end];
    cfg.replicas = 4000;
    cfg.base_seed = 99;
    let rep = sim::run_ensemble(&cfg).unwrap();
    let xs: Vec<f64> = rep.counts.iter().map(|r| r[0] as f64).collect();
    let m1 = bbm_core::stats::mean(&xs);
    let se1 = bbm_core::stats::standard_error(&xs);
    assert!(
        (m1 - assembled[0]).abs() <= 3.0 * se1,
        "mean {m1} vs rho_1 {}",
        assembled[0]
    );
    let sq: Vec<f64> = xs.iter().map(|&x| x * x).collect();
    let m2 = bbm_core::stats::mean(&sq);
    let se2 = bbm_core::stats::standard_error(&sq);
    assert!(
        (m2 - assembled[1]).abs() <= 3.0 * se2,
        "second moment {m2} vs assembly {}",
        assembled[1]
    );
}

/// Scaled empirical moments converge to the xi moments from the recursion
/// (first moment; the matching second moment is asserted by the acceptance
/// suite at full scale).
#[test]
fn scaled_first_moment_matches_xi() {
    let p = bump3();
    let grid = QuadGrid::support(&p, 96).unwrap();
    let op = spectral::assemble_k(0.5, 1.0, &p, &grid).unwrap();
    let beta = 1.0 / spectral::principal_eigen(&op).unwrap().0;
    let table = moments::supercritical_f(beta, 2, &[0.0], &p, &grid).unwrap();
    let xi = moments::xi_moments(&table, 0.0, 1).unwrap()[0];

    let gs = spectral::ground_state(beta, &p, &grid, Normalization::L2).unwrap();
    let mut cfg = SimConfig::new(p, beta, &[0.0, 0.0, 0.0], 9.0).unwrap();
    cfg.checkpoints = vec![7.0, 8.0, 9.0];
    cfg.replicas = 3000;
    cfg.base_seed = 4242;
    cfg.psi = Some(gs.tabulate(1e-3, grid.hi + 14.0 / gs.kappa()));
    let rep = sim::run_ensemble(&cfg).unwrap();
    let mm = sim::empirical_moments(&rep, MomentScaling::ExpLambda0).unwrap();
    let last = mm.last().unwrap();
    let half = 0.5 * (last.ci[0].1 - last.ci[0].0);
    assert!(
        (last.moments[0] - xi).abs() <= 3.0 * half,
        "scaled mean {} vs E xi {xi} (ci half-width {half})",
        last.moments[0]
    );
}
