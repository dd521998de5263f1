//! Limit-variable moment data.
//!
//! Supercritical: `f_1 = psi` (L2-normalized) and
//! `f_n = beta sum_{k=1}^{n-1} C(n,k) S_{n lambda0}(v f_k f_{n-k})`;
//! the moments of the scaled limit count are `(int psi)^n f_n(x)`.
//!
//! Subcritical (dim 3): `f_1 = 1 + phi_beta` with `phi_beta = S_0(beta v)`,
//! the same recursion with the resolvent at zero, and the limit count has
//! moments `m_n(x) = sum_k S(n,k) f_k(x)` through Stirling numbers of the
//! second kind. The same Stirling assembly turns integrated correlation
//! functions into raw count moments at finite time.

use crate::error::{Error, Result};
use crate::grid::QuadGrid;
use crate::potential::{Dim, Potential};
use crate::spectral::{self, Normalization};

/// Stirling number of the second kind via the triangular recurrence
/// `S(n,k) = k S(n-1,k) + S(n-1,k-1)`. Exact for `1 <= k <= n <= 30`.
pub fn stirling2(n: usize, k: usize) -> Result<u128> {
    if n < 1 || k < 1 || k > n || n > 30 {
        return Err(Error::domain(format!(
            "stirling2 requires 1 <= k <= n <= 30, got n={n} k={k}"
        )));
    }
    let mut row = vec![0u128; n + 1];
    row[1] = 1; // S(1,1)
    for m in 2..=n {
        for j in (1..=m.min(k)).rev() {
            row[j] = j as u128 * row[j] + row[j - 1];
        }
    }
    Ok(row[k])
}

fn binomial(n: usize, k: usize) -> u128 {
    let mut out = 1u128;
    for j in 0..k.min(n - k) {
        out = out * (n - j) as u128 / (j + 1) as u128;
    }
    out
}

/// Maximum recursion order: `f_n` grows factorially, so higher orders leave
/// the double-precision range on normalized inputs.
pub const MAX_ORDER: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Supercritical,
    Subcritical,
}

/// Diagnostics carried along with a table.
#[derive(Debug, Clone)]
pub struct TableDiagnostics {
    pub n_nodes: usize,
    pub lambda0: Option<f64>,
    pub max_resolvent_residual: f64,
    /// `A` fitted on orders <= 3 for the factorial envelope `A^(2n-1) n!`.
    pub envelope_a: f64,
}

/// Functions `f_1..f_N` on the grid and at query points, with the assembled
/// moment scale.
#[derive(Debug, Clone)]
pub struct MomentTable {
    pub regime: Regime,
    pub beta: f64,
    pub order: usize,
    pub points: Vec<f64>,
    /// `f[n-1][j] = f_n(points[j])`.
    pub f: Vec<Vec<f64>>,
    /// `f_n` sampled on the grid nodes, used by the recursion and profiles.
    pub f_grid: Vec<Vec<f64>>,
    /// `int psi` (supercritical only).
    pub mass: Option<f64>,
    pub diagnostics: TableDiagnostics,
}

impl MomentTable {
    pub fn f_at(&self, n: usize, x: f64) -> Result<f64> {
        if n < 1 || n > self.order {
            return Err(Error::domain(format!("order {n} outside table range")));
        }
        let j = self.point_index(x)?;
        Ok(self.f[n - 1][j])
    }

    pub fn point_index(&self, x: f64) -> Result<usize> {
        self.points
            .iter()
            .position(|&p| (p - x).abs() <= 1e-10 * p.abs().max(1.0))
            .ok_or_else(|| Error::domain(format!("x = {x} is not among the table's query points")))
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

/// Fits the envelope constant on `n <= 3` and verifies
/// `sup f_n <= A^(2n-1) n!` for every higher computed order.
///
/// `A` is the smallest constant consistent with the induction that produces
/// the factorial bound: the base `||f_1|| <= A` together with the one-step
/// recursion bound `||f_n|| <= A sum_k (n-1)!/(k!(n-k)!) ||f_k|| ||f_{n-k}||`
/// solved for `A` at `n = 2, 3`. (The minimal pointwise fit
/// `max_{n<=3} (f_n/n!)^{1/(2n-1)}` cannot work: that sequence increases
/// toward its limit, so order 4 always exceeds it.)
fn check_envelope(f_sup: &[f64]) -> Result<f64> {
    let mut a: f64 = f_sup[0];
    for n in 2..=3.min(f_sup.len()) {
        let mut denom = 0.0;
        for k in 1..n {
            denom += factorial(n - 1) / (factorial(k) * factorial(n - k))
                * f_sup[k - 1]
                * f_sup[n - k - 1];
        }
        a = a.max(f_sup[n - 1] / denom);
    }
    for (i, &s) in f_sup.iter().enumerate().skip(3) {
        let n = i + 1;
        let bound = a.powi(2 * n as i32 - 1) * factorial(n);
        if s > bound * (1.0 + 1e-9) {
            return Err(Error::numerical(format!(
                "factorial envelope violated at order {n}: sup f = {s:.6e} > {bound:.6e}"
            )));
        }
    }
    Ok(a)
}

fn run_recursion(
    regime: Regime,
    beta: f64,
    lambda_of_n: impl Fn(usize) -> f64,
    order: usize,
    points: &[f64],
    p: &Potential,
    grid: &QuadGrid,
    f1_grid: Vec<f64>,
    f1_points: Vec<f64>,
    mass: Option<f64>,
    lambda0: Option<f64>,
) -> Result<MomentTable> {
    if order < 1 || order > MAX_ORDER {
        return Err(Error::domain(format!(
            "order must be within 1..={MAX_ORDER}, got {order}"
        )));
    }
    let v: Vec<f64> = grid.sample(|x| p.eval_radial(x));
    let mut f_grid = vec![f1_grid];
    let mut f_pts = vec![f1_points];
    let mut max_resid: f64 = 0.0;
    for n in 2..=order {
        // summed source: sum_k C(n,k) v f_k f_{n-k}
        let mut src = vec![0.0; grid.n_nodes()];
        for k in 1..n {
            let c = binomial(n, k) as f64;
            let fk = &f_grid[k - 1];
            let fnk = &f_grid[n - k - 1];
            for (j, s) in src.iter_mut().enumerate() {
                *s += c * v[j] * fk[j] * fnk[j];
            }
        }
        let sol = spectral::resolvent_apply(lambda_of_n(n), beta, p, grid, &src)?;
        max_resid = max_resid.max(sol.residual);
        let grid_vals: Vec<f64> = grid.nodes.iter().map(|&x| beta * sol.eval(x)).collect();
        let pt_vals: Vec<f64> = points.iter().map(|&x| beta * sol.eval(x)).collect();
        if grid_vals.iter().chain(pt_vals.iter()).any(|x| !x.is_finite()) {
            return Err(Error::numerical(format!(
                "f_{n} overflowed double precision; reduce the order"
            )));
        }
        if grid_vals.iter().chain(pt_vals.iter()).any(|&x| x <= 0.0) {
            return Err(Error::numerical(format!("f_{n} lost positivity")));
        }
        f_grid.push(grid_vals);
        f_pts.push(pt_vals);
    }
    let sup_per_order: Vec<f64> = f_grid
        .iter()
        .zip(&f_pts)
        .map(|(g, q)| g.iter().chain(q.iter()).cloned().fold(0.0, f64::max))
        .collect();
    let envelope_a = check_envelope(&sup_per_order)?;
    Ok(MomentTable {
        regime,
        beta,
        order,
        points: points.to_vec(),
        f: f_pts,
        f_grid,
        mass,
        diagnostics: TableDiagnostics {
            n_nodes: grid.n_nodes(),
            lambda0,
            max_resolvent_residual: max_resid,
            envelope_a,
        },
    })
}

/// Supercritical table: `f_1 = psi`, `I_n` realized as the resolvent at
/// `n lambda0`.
pub fn supercritical_f(
    beta: f64,
    order: usize,
    points: &[f64],
    p: &Potential,
    grid: &QuadGrid,
) -> Result<MomentTable> {
    let gs = spectral::ground_state(beta, p, grid, Normalization::L2)?;
    let l0 = gs.lambda0;
    let f1_grid = gs.psi.clone();
    let f1_points: Vec<f64> = points.iter().map(|&x| gs.eval(x)).collect();
    run_recursion(
        Regime::Supercritical,
        beta,
        |n| n as f64 * l0,
        order,
        points,
        p,
        grid,
        f1_grid,
        f1_points,
        gs.mass,
        Some(l0),
    )
}

/// Subcritical table (dim 3, `0 < beta < beta_cr`): `f_1 = 1 + phi_beta`,
/// `phi_beta = S_0(beta v)`, resolvent at zero throughout.
pub fn subcritical_f(
    beta: f64,
    order: usize,
    points: &[f64],
    p: &Potential,
    grid: &QuadGrid,
) -> Result<MomentTable> {
    if p.dim() != Dim::Three {
        return Err(Error::domain("subcritical tables require dim 3"));
    }
    if beta <= 0.0 {
        return Err(Error::domain("subcritical tables require beta > 0"));
    }
    let beta_cr = spectral::beta_critical(p, grid)?;
    if beta >= beta_cr {
        return Err(Error::domain(format!(
            "beta = {beta} is not subcritical (beta_cr = {beta_cr:.8})"
        )));
    }
    let v: Vec<f64> = grid.sample(|x| p.eval_radial(x));
    let bv: Vec<f64> = v.iter().map(|&x| beta * x).collect();
    let phi = spectral::resolvent_apply(0.0, beta, p, grid, &bv)?;
    let f1_grid: Vec<f64> = grid.nodes.iter().map(|&x| 1.0 + phi.eval(x)).collect();
    let f1_points: Vec<f64> = points.iter().map(|&x| 1.0 + phi.eval(x)).collect();
    if f1_grid.iter().any(|&x| x < 1.0) {
        return Err(Error::numerical("phi_beta lost positivity"));
    }
    run_recursion(
        Regime::Subcritical,
        beta,
        |_| 0.0,
        order,
        points,
        p,
        grid,
        f1_grid,
        f1_points,
        None,
        None,
    )
}

/// Moments of the scaled supercritical limit: `E xi^n = (int psi)^n f_n(x)`.
pub fn xi_moments(table: &MomentTable, x: f64, order: usize) -> Result<Vec<f64>> {
    if table.regime != Regime::Supercritical {
        return Err(Error::contract("xi_moments needs a supercritical table"));
    }
    let mass = table.mass.ok_or_else(|| Error::contract("table lacks mass"))?;
    let j = table.point_index(x)?;
    (1..=order.min(table.order))
        .map(|n| Ok(mass.powi(n as i32) * table.f[n - 1][j]))
        .collect()
}

/// Moments of the subcritical limit count: `m_n(x) = sum_k S(n,k) f_k(x)`.
pub fn limit_moments_sub(table: &MomentTable, x: f64, order: usize) -> Result<Vec<f64>> {
    if table.regime != Regime::Subcritical {
        return Err(Error::contract("limit_moments_sub needs a subcritical table"));
    }
    let j = table.point_index(x)?;
    (1..=order.min(table.order))
        .map(|n| {
            let mut m = 0.0;
            for k in 1..=n {
                m += stirling2(n, k)? as f64 * table.f[k - 1][j];
            }
            Ok(m)
        })
        .collect()
}

/// Raw count moments from integrated correlation functions at fixed `(t, x)`:
/// `E n_t^j = sum_{k<=j} S(j,k) rho_bar_k`.
pub fn raw_count_moments(rho_bars: &[f64], j_max: usize) -> Result<Vec<f64>> {
    if j_max > rho_bars.len() {
        return Err(Error::contract(format!(
            "need rho_bar_1..rho_bar_{j_max}, got {}",
            rho_bars.len()
        )));
    }
    (1..=j_max)
        .map(|j| {
            let mut m = 0.0;
            for k in 1..=j {
                m += stirling2(j, k)? as f64 * rho_bars[k - 1];
            }
            Ok(m)
        })
        .collect()
}
