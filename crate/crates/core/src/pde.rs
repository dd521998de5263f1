//! Independent finite-difference oracle for the integrated moment hierarchy:
//!
//! `d/dt rho_1 = Lap/2 rho_1 + beta v rho_1`, `rho_1(0) = 1`, and for n > 1
//! `d/dt rho_n = Lap/2 rho_n + beta v (rho_n + sum_k C(n,k) rho_k rho_{n-k})`,
//! `rho_n(0) = 0`.
//!
//! Crank-Nicolson in time with the linear potential term implicit; the
//! product source is explicit at the half step, which keeps the hierarchy
//! triangular: within each time step the orders are advanced in sequence,
//! each using the already-updated lower orders at both time levels. Dim 3 is
//! solved radially through `u = r rho`, reducing the Laplacian to `u''/2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potential::{Dim, Potential};
use crate::stats::{linear_fit, quadratic_fit};

/// Margin rule: the reflecting boundary sits at least `6 sqrt(t_end)` past
/// the support so boundary contamination stays below mesh error.
pub const MARGIN_SIGMAS: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryMode {
    /// Homogeneous Neumann on rho at the outer boundary (default).
    Neumann,
    /// Pin rho to its initial value at the outer boundary.
    Dirichlet,
}

/// Initial data for the first-order equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialData {
    /// `rho_1(0) = 1`: the integrated hierarchy (counts all particles).
    Ones,
    /// Compactly supported profile `h exp(1 - 1/(1 - (r/a)^2))`: the decay
    /// study mode.
    Bump { radius: f64, height: f64 },
}

#[derive(Debug, Clone)]
pub struct PdeProblem {
    pub potential: Potential,
    pub beta: f64,
    pub t_end: f64,
    /// Mesh width; the domain is `[0, L]` (dim 3, radial) or `[-L, L]` (dim 1).
    pub mesh_h: f64,
    pub dt: f64,
    /// Orders of the hierarchy to solve (`<= 3`).
    pub n_max: usize,
    pub bc: BoundaryMode,
    pub initial: InitialData,
    /// Outer boundary; `None` applies the margin rule.
    pub domain_l: Option<f64>,
    /// Points where every order is recorded at every step.
    pub probes: Vec<f64>,
}

impl PdeProblem {
    pub fn validate(&self) -> Result<f64> {
        if self.n_max == 0 || self.n_max > 3 {
            return Err(Error::validation("n_max must be 1..=3"));
        }
        if self.t_end <= 0.0 || self.mesh_h <= 0.0 || self.dt <= 0.0 {
            return Err(Error::validation("t_end, mesh_h, dt must be positive"));
        }
        if self.beta < 0.0 {
            return Err(Error::validation("beta must be >= 0"));
        }
        let l_min = self.potential.support_radius() + MARGIN_SIGMAS * self.t_end.sqrt();
        let l = self.domain_l.unwrap_or(l_min);
        if l < l_min {
            return Err(Error::validation(format!(
                "domain_l = {l} violates the margin rule; need at least {l_min:.3}"
            )));
        }
        // Accuracy guard on the explicitly treated reaction scale.
        let rate = self.beta * self.potential.v_max();
        if rate * self.dt > 0.5 {
            return Err(Error::validation(format!(
                "dt = {} too large for beta*v_max = {rate:.3}; suggested dt <= {:.3e}",
                self.dt,
                0.25 / rate
            )));
        }
        if matches!(self.initial, InitialData::Ones) && self.potential.dim() == Dim::One {
            // fine; both dims support both modes
        }
        Ok(l)
    }
}

/// Time series produced by one solve.
#[derive(Debug, Clone)]
pub struct PdeSolution {
    pub times: Vec<f64>,
    pub mesh: Vec<f64>,
    /// Snapshot of every order at `t_end`: `final_state[n-1][j]`.
    pub final_state: Vec<Vec<f64>>,
    /// `probe_series[n-1][p][step]` = rho_n at probe p.
    pub probe_series: Vec<Vec<Vec<f64>>>,
    /// `sup_series[n-1][step]` = sup over the mesh of rho_n.
    pub sup_series: Vec<Vec<f64>>,
    pub probes: Vec<f64>,
}

impl PdeSolution {
    /// Value of order `n` at probe index `p` at the time nearest `t`.
    pub fn probe_at(&self, n: usize, p: usize, t: f64) -> f64 {
        let step = self
            .times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().partial_cmp(&(b.1 - t).abs()).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        self.probe_series[n - 1][p][step]
    }
}

struct Tridiag {
    sub: Vec<f64>,
    diag: Vec<f64>,
    sup: Vec<f64>,
}

impl Tridiag {
    fn solve(&self, rhs: &[f64], out: &mut Vec<f64>) {
        let n = rhs.len();
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        c[0] = self.sup[0] / self.diag[0];
        d[0] = rhs[0] / self.diag[0];
        for i in 1..n {
            let m = self.diag[i] - self.sub[i] * c[i - 1];
            c[i] = self.sup[i] / m;
            d[i] = (rhs[i] - self.sub[i] * d[i - 1]) / m;
        }
        out.resize(n, 0.0);
        out[n - 1] = d[n - 1];
        for i in (0..n - 1).rev() {
            out[i] = d[i] - c[i] * out[i + 1];
        }
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    let mut out = 1.0;
    for j in 0..k.min(n - k) {
        out = out * (n - j) as f64 / (j + 1) as f64;
    }
    out
}

/// Solves the integrated hierarchy. Returns nonnegative solutions; the
/// comparison principle (`rho_1 >= 1` for ones data) holds up to scheme
/// error.
pub fn solve_rho_bar(problem: &PdeProblem) -> Result<PdeSolution> {
    let l = problem.validate()?;
    let p = &problem.potential;
    let dim = p.dim();
    let h = problem.mesh_h;
    let dt = problem.dt;
    let steps = (problem.t_end / dt).round() as usize;
    let (x_lo, n_mesh) = match dim {
        Dim::Three => (0.0, (l / h).round() as usize + 1),
        Dim::One => (-l, (2.0 * l / h).round() as usize + 1),
    };
    let mesh: Vec<f64> = (0..n_mesh).map(|j| x_lo + h * j as f64).collect();
    let vv: Vec<f64> = mesh.iter().map(|&x| problem.beta * p.eval_radial(x)).collect();

    // The evolved variable is w = rho (dim 1) or w = r * rho (dim 3).
    // A = D2/2 + diag(beta v) acts on w in both cases.
    let r = dt / (2.0 * h * h) * 0.5 * 2.0; // dt/(2) * (1/h^2) * (1/2) * 2 folded below
    let _ = r;
    let a_off = 0.5 / (h * h); // off-diagonal of D2/2
    let a_diag = -1.0 / (h * h); // diagonal of D2/2

    // Crank-Nicolson matrices: (I - dt/2 A) w+ = (I + dt/2 A) w + dt*src.
    let mut lhs = Tridiag {
        sub: vec![-0.5 * dt * a_off; n_mesh],
        diag: (0..n_mesh).map(|j| 1.0 - 0.5 * dt * (a_diag + vv[j])).collect(),
        sup: vec![-0.5 * dt * a_off; n_mesh],
    };

    // Boundary rows.
    match dim {
        Dim::Three => {
            // u(0) = 0 (regularity of rho at the origin)
            lhs.diag[0] = 1.0;
            lhs.sup[0] = 0.0;
            lhs.sub[0] = 0.0;
            match problem.bc {
                BoundaryMode::Neumann => {
                    // Neumann on rho: u'(L) = u(L)/L via ghost point
                    // u_{J+1} = u_{J-1} + 2h u_J / L
                    let j = n_mesh - 1;
                    lhs.sub[j] = -0.5 * dt * (2.0 * a_off);
                    lhs.diag[j] = 1.0 - 0.5 * dt * (a_diag + vv[j] + 2.0 * h / l * a_off);
                    lhs.sup[j] = 0.0;
                }
                BoundaryMode::Dirichlet => {
                    let j = n_mesh - 1;
                    lhs.sub[j] = 0.0;
                    lhs.diag[j] = 1.0;
                    lhs.sup[j] = 0.0;
                }
            }
        }
        Dim::One => match problem.bc {
            BoundaryMode::Neumann => {
                lhs.diag[0] = 1.0 - 0.5 * dt * (a_diag + vv[0]);
                lhs.sup[0] = -0.5 * dt * (2.0 * a_off);
                lhs.sub[0] = 0.0;
                let j = n_mesh - 1;
                lhs.sub[j] = -0.5 * dt * (2.0 * a_off);
                lhs.diag[j] = 1.0 - 0.5 * dt * (a_diag + vv[j]);
                lhs.sup[j] = 0.0;
            }
            BoundaryMode::Dirichlet => {
                lhs.diag[0] = 1.0;
                lhs.sup[0] = 0.0;
                let j = n_mesh - 1;
                lhs.sub[j] = 0.0;
                lhs.diag[j] = 1.0;
            }
        },
    }

    // RHS application of (I + dt/2 A) with matching boundary stencils.
    let apply_rhs = |w: &[f64], out: &mut Vec<f64>| {
        out.resize(n_mesh, 0.0);
        for j in 1..n_mesh - 1 {
            out[j] = w[j] * (1.0 + 0.5 * dt * (a_diag + vv[j]))
                + 0.5 * dt * a_off * (w[j - 1] + w[j + 1]);
        }
        match dim {
            Dim::Three => {
                out[0] = 0.0;
                let j = n_mesh - 1;
                match problem.bc {
                    BoundaryMode::Neumann => {
                        out[j] = w[j] * (1.0 + 0.5 * dt * (a_diag + vv[j] + 2.0 * h / l * a_off))
                            + 0.5 * dt * (2.0 * a_off) * w[j - 1];
                    }
                    BoundaryMode::Dirichlet => out[j] = w[j],
                }
            }
            Dim::One => {
                match problem.bc {
                    BoundaryMode::Neumann => {
                        out[0] = w[0] * (1.0 + 0.5 * dt * (a_diag + vv[0]))
                            + 0.5 * dt * (2.0 * a_off) * w[1];
                        let j = n_mesh - 1;
                        out[j] = w[j] * (1.0 + 0.5 * dt * (a_diag + vv[j]))
                            + 0.5 * dt * (2.0 * a_off) * w[j - 1];
                    }
                    BoundaryMode::Dirichlet => {
                        out[0] = w[0];
                        out[n_mesh - 1] = w[n_mesh - 1];
                    }
                }
            }
        }
    };

    // rho <-> evolved variable conversions.
    let to_rho = |w: &[f64], rho: &mut Vec<f64>| {
        rho.resize(n_mesh, 0.0);
        match dim {
            Dim::One => rho.copy_from_slice(w),
            Dim::Three => {
                for j in 1..n_mesh {
                    rho[j] = w[j] / mesh[j];
                }
                // even extension: rho(0) from the parabolic profile
                rho[0] = if n_mesh > 2 { (4.0 * rho[1] - rho[2]) / 3.0 } else { rho[1] };
            }
        }
    };

    let initial_rho = |x: f64| -> f64 {
        match &problem.initial {
            InitialData::Ones => 1.0,
            InitialData::Bump { radius, height } => {
                let q = x.abs() / radius;
                if q >= 1.0 {
                    0.0
                } else {
                    height * (1.0 - 1.0 / (1.0 - q * q)).exp()
                }
            }
        }
    };

    let n_orders = problem.n_max;
    let mut w: Vec<Vec<f64>> = Vec::with_capacity(n_orders);
    for n in 0..n_orders {
        let init: Vec<f64> = mesh
            .iter()
            .map(|&x| {
                let rho0 = if n == 0 { initial_rho(x) } else { 0.0 };
                match dim {
                    Dim::One => rho0,
                    Dim::Three => rho0 * x,
                }
            })
            .collect();
        w.push(init);
    }

    let probe_idx: Vec<usize> = problem
        .probes
        .iter()
        .map(|&q| ((q - x_lo) / h).round() as usize)
        .collect();
    if probe_idx.iter().any(|&j| j >= n_mesh) {
        return Err(Error::validation("probe outside the mesh"));
    }

    let mut rho_old: Vec<Vec<f64>> = vec![vec![0.0; n_mesh]; n_orders];
    let mut rho_new: Vec<Vec<f64>> = vec![vec![0.0; n_mesh]; n_orders];
    for n in 0..n_orders {
        to_rho(&w[n], &mut rho_old[n]);
    }

    let mut times = Vec::with_capacity(steps + 1);
    let mut probe_series = vec![vec![Vec::with_capacity(steps + 1); probe_idx.len()]; n_orders];
    let mut sup_series = vec![Vec::with_capacity(steps + 1); n_orders];
    let record =
        |t: f64,
         rho: &[Vec<f64>],
         times: &mut Vec<f64>,
         probe_series: &mut Vec<Vec<Vec<f64>>>,
         sup_series: &mut Vec<Vec<f64>>| {
            times.push(t);
            for n in 0..n_orders {
                for (pi, &j) in probe_idx.iter().enumerate() {
                    probe_series[n][pi].push(rho[n][j]);
                }
                sup_series[n].push(rho[n].iter().cloned().fold(f64::NEG_INFINITY, f64::max));
            }
        };
    record(0.0, &rho_old, &mut times, &mut probe_series, &mut sup_series);

    let mut rhs = vec![0.0; n_mesh];
    let mut scratch = vec![0.0; n_mesh];
    for step in 0..steps {
        let t_new = (step + 1) as f64 * dt;
        for n in 0..n_orders {
            apply_rhs(&w[n], &mut rhs);
            if n >= 1 {
                // explicit product source at the half step; lower orders are
                // already advanced within this step, so both levels exist
                let order = n + 1;
                for j in 1..n_mesh - 1 {
                    if vv[j] == 0.0 {
                        continue;
                    }
                    let mut src_old = 0.0;
                    let mut src_new = 0.0;
                    for k in 1..order {
                        let c = binomial(order, k);
                        src_old += c * rho_old[k - 1][j] * rho_old[order - k - 1][j];
                        src_new += c * rho_new[k - 1][j] * rho_new[order - k - 1][j];
                    }
                    let mut src = 0.5 * vv[j] * (src_old + src_new);
                    if dim == Dim::Three {
                        src *= mesh[j];
                    }
                    rhs[j] += dt * src;
                }
            }
            lhs.solve(&rhs, &mut scratch);
            std::mem::swap(&mut w[n], &mut scratch);
            to_rho(&w[n], &mut rho_new[n]);
            if w[n].iter().any(|x| !x.is_finite()) {
                return Err(Error::numerical(format!(
                    "hierarchy order {} lost finiteness at t = {t_new}",
                    n + 1
                )));
            }
        }
        for n in 0..n_orders {
            std::mem::swap(&mut rho_old[n], &mut rho_new[n]);
        }
        record(t_new, &rho_old, &mut times, &mut probe_series, &mut sup_series);
    }

    Ok(PdeSolution {
        times,
        mesh,
        final_state: rho_old,
        probe_series,
        sup_series,
        probes: problem.probes.clone(),
    })
}

/// Fitted power-law exponent of a positive series over a time window.
#[derive(Debug, Clone, Copy)]
pub struct DecayFit {
    pub exponent: f64,
    /// Quadratic coefficient of the log-log fit; large magnitude flags a
    /// non-power-law.
    pub curvature: f64,
    pub power_law: bool,
}

/// Least-squares slope of `log value` against `log t` over `window`.
pub fn decay_exponent(times: &[f64], values: &[f64], window: (f64, f64)) -> Result<DecayFit> {
    let mut xs = vec![];
    let mut ys = vec![];
    for (&t, &v) in times.iter().zip(values) {
        if t < window.0 || t > window.1 {
            continue;
        }
        if v <= 0.0 {
            return Err(Error::domain(format!("nonpositive series value {v} at t = {t}")));
        }
        if t <= 0.0 {
            continue;
        }
        xs.push(t.ln());
        ys.push(v.ln());
    }
    if xs.len() < 4 {
        return Err(Error::domain("window selects fewer than 4 points"));
    }
    let (_, slope) = linear_fit(&xs, &ys);
    let (_, _, curv) = quadratic_fit(&xs, &ys);
    Ok(DecayFit { exponent: slope, curvature: curv, power_law: curv.abs() <= 0.1 })
}
