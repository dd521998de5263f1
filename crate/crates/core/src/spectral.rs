//! Nystrom discretization of the kernel operator `K_lambda = beta v G_lambda`,
//! its principal eigenvalue `mu(lambda)`, the critical intensity `beta_cr`,
//! the growth exponent `lambda0(beta)`, the ground state `psi`, and the
//! resolvent `S_lambda = (lambda - L)^{-1}` with `L = Laplacian/2 + beta v`.
//!
//! `mu(lambda)` is strictly decreasing, so `lambda0` is the unique root of
//! `beta * mu(lambda) = 1`; the ground state is reconstructed off-grid through
//! one application of the Green operator, `psi = G_{lambda0}(beta v psi)`,
//! which gives it the correct far-field tail for free.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::greenfn::{green_apply, green_row, GreenKernel};
use crate::grid::QuadGrid;
use crate::potential::{Dim, Potential};

use std::f64::consts::PI;

const POWER_TOL: f64 = 1e-12;
const POWER_MAX_ITER: usize = 100_000;
const SOLVE_RESIDUAL_TOL: f64 = 1e-10;
const LAMBDA0_REL_TOL: f64 = 1e-10;

/// Dense Nystrom matrix of `K_lambda`: `M[i][j] = beta v(x_i) G(x_i, x_j) w_j`
/// with the panel straddling each row's diagonal re-integrated by subdivided
/// Gauss quadrature.
#[derive(Debug, Clone)]
pub struct DiscretizedOperator {
    pub matrix: DMatrix<f64>,
    pub lambda: f64,
    pub beta: f64,
}

pub fn assemble_k(
    lambda: f64,
    beta: f64,
    p: &Potential,
    grid: &QuadGrid,
) -> Result<DiscretizedOperator> {
    assemble_k_opts(lambda, beta, p, grid, true)
}

/// Assembly with the straddle correction switchable; the plain variant keeps
/// the exact discrete similarity with the symmetrized matrix.
pub fn assemble_k_opts(
    lambda: f64,
    beta: f64,
    p: &Potential,
    grid: &QuadGrid,
    straddle_correction: bool,
) -> Result<DiscretizedOperator> {
    if beta < 0.0 || !beta.is_finite() {
        return Err(Error::domain(format!("beta must be >= 0, got {beta}")));
    }
    if p.dim() != grid.dim {
        return Err(Error::contract("potential and grid dimensions differ"));
    }
    let kern = GreenKernel::new(p.dim(), lambda)?;
    let n = grid.n_nodes();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        let scale = beta * p.eval_radial(grid.nodes[i]);
        if scale == 0.0 {
            continue;
        }
        let row = if straddle_correction {
            green_row(&kern, grid, grid.nodes[i])
        } else {
            grid.nodes
                .iter()
                .zip(&grid.weights)
                .map(|(&y, &w)| kern.reduced(grid.nodes[i], y) * w)
                .collect()
        };
        for (j, w) in row.into_iter().enumerate() {
            m[(i, j)] = scale * w;
        }
    }
    Ok(DiscretizedOperator { matrix: m, lambda, beta })
}

/// Symmetrized matrix `sqrt(beta v) G sqrt(beta v)` (plain quadrature), which
/// shares its nonzero spectrum with the plain `K`.
pub fn assemble_symmetrized(
    lambda: f64,
    beta: f64,
    p: &Potential,
    grid: &QuadGrid,
) -> Result<DMatrix<f64>> {
    let kern = GreenKernel::new(p.dim(), lambda)?;
    let n = grid.n_nodes();
    let s: Vec<f64> = grid
        .nodes
        .iter()
        .zip(&grid.weights)
        .map(|(&x, &w)| (beta * p.eval_radial(x) * w).sqrt())
        .collect();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = s[i] * kern.reduced(grid.nodes[i], grid.nodes[j]) * s[j];
        }
    }
    Ok(m)
}

/// Principal eigenvalue and positive eigenvector of a nonnegative-kernel
/// operator by power iteration. The eigenvector is sup-normalized.
pub fn principal_eigen(op: &DiscretizedOperator) -> Result<(f64, Vec<f64>)> {
    let m = &op.matrix;
    let n = m.nrows();
    if m.iter().all(|&e| e == 0.0) {
        return Err(Error::domain("principal_eigen: operator is identically zero"));
    }
    let mut h = DVector::from_element(n, 1.0);
    let mut mu = 0.0;
    let mut prev_resid = f64::INFINITY;
    let mut gap_estimate = f64::NAN;
    for _ in 0..POWER_MAX_ITER {
        let z = m * &h;
        let mu_new = z.amax();
        if !(mu_new > 0.0) {
            return Err(Error::numerical("principal_eigen: iterate collapsed to zero"));
        }
        let z = z / mu_new;
        let resid = (m * &z - mu_new * &z).amax();
        if resid.is_finite() && prev_resid.is_finite() && prev_resid > 0.0 {
            gap_estimate = (resid / prev_resid).min(1.0);
        }
        if resid <= POWER_TOL * mu_new {
            return Ok((mu_new, z.iter().cloned().collect()));
        }
        prev_resid = resid;
        h = z;
        mu = mu_new;
    }
    Err(Error::numerical(format!(
        "principal_eigen: no convergence in {POWER_MAX_ITER} iterations \
         (mu ~ {mu:.6e}, contraction ratio ~ {gap_estimate:.3})"
    )))
}

/// Principal eigenvalue of `K_lambda` at unit `beta`.
fn mu_of_lambda(lambda: f64, beta: f64, p: &Potential, grid: &QuadGrid) -> Result<f64> {
    let op = assemble_k(lambda, beta, p, grid)?;
    Ok(principal_eigen(&op)?.0)
}

/// Critical branching intensity: `1 / mu(0)` of `v G_0` in dim 3, zero in
/// dim 1 where any positive intensity creates a bound state.
pub fn beta_critical(p: &Potential, grid: &QuadGrid) -> Result<f64> {
    match p.dim() {
        Dim::One => Ok(0.0),
        Dim::Three => {
            let mu = mu_of_lambda(0.0, 1.0, p, grid)?;
            Ok(1.0 / mu)
        }
    }
}

/// Growth exponent: the unique `lambda > 0` with `beta * mu(lambda) = 1`,
/// found by bracketing plus a secant-bisection hybrid on the strictly
/// decreasing map `lambda -> mu(lambda)`.
pub fn lambda0(beta: f64, p: &Potential, grid: &QuadGrid) -> Result<f64> {
    if beta <= 0.0 {
        return Err(Error::domain("lambda0 requires beta > 0"));
    }
    // g(lambda) = beta * mu(lambda) - 1, strictly decreasing.
    let g = |lambda: f64| -> Result<f64> { Ok(beta * mu_of_lambda(lambda, 1.0, p, grid)? - 1.0) };

    let mut lo;
    match p.dim() {
        Dim::Three => {
            let g0 = g(0.0)?;
            if g0 <= 0.0 {
                return Err(Error::domain(
                    "subcritical/critical: lambda0 undefined/zero (beta <= beta_cr)",
                ));
            }
            lo = 0.0;
        }
        Dim::One => {
            // mu -> infinity as lambda -> 0+
            lo = 0.25 * beta * p.v_max();
            while g(lo)? <= 0.0 {
                lo *= 0.25;
                if lo < 1e-300 {
                    return Err(Error::numerical("lambda0: failed to bracket from below"));
                }
            }
        }
    }
    let mut hi = (beta * p.v_max()).max(1e-3);
    let mut g_hi = g(hi)?;
    while g_hi > 0.0 {
        hi *= 2.0;
        g_hi = g(hi)?;
        if hi > 1e12 {
            return Err(Error::numerical("lambda0: failed to bracket from above"));
        }
    }
    let mut g_lo = if lo == 0.0 { g(0.0)? } else { g(lo)? };

    // Secant step when it lands inside the bracket, bisection otherwise.
    for _ in 0..200 {
        if hi - lo <= LAMBDA0_REL_TOL * hi.max(1e-300) {
            break;
        }
        let mid_secant = lo - g_lo * (hi - lo) / (g_hi - g_lo);
        let safe = lo + 0.01 * (hi - lo) <= mid_secant && mid_secant <= hi - 0.01 * (hi - lo);
        let mid = if safe { mid_secant } else { 0.5 * (lo + hi) };
        let g_mid = g(mid)?;
        if g_mid > 0.0 {
            lo = mid;
            g_lo = g_mid;
        } else {
            hi = mid;
            g_hi = g_mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Relative change of the principal eigenvalue under grid doubling; stored by
/// callers as a convergence diagnostic.
pub fn refinement_diagnostic(
    lambda: f64,
    beta: f64,
    p: &Potential,
    n_nodes: usize,
) -> Result<f64> {
    let g1 = QuadGrid::support(p, n_nodes)?;
    let g2 = QuadGrid::support(p, 2 * n_nodes)?;
    let m1 = principal_eigen(&assemble_k(lambda, beta, p, &g1)?)?.0;
    let m2 = principal_eigen(&assemble_k(lambda, beta, p, &g2)?)?.0;
    Ok(((m1 - m2) / m2).abs())
}

/// Ground-state normalization modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// `||psi||_{L2} = 1` (supercritical).
    L2,
    /// `||beta v psi||_{L2} = 1` (critical, dim 3).
    Critical,
}

#[derive(Debug, Clone)]
enum Tail {
    /// dim 3: `psi(r) = c exp(-kappa r)/r` beyond the support.
    Radial { c: f64 },
    /// dim 1: `c_plus exp(-kappa x)` to the right, `c_minus exp(kappa x)` left.
    Line { c_plus: f64, c_minus: f64 },
}

/// The spectral output object: growth exponent, ground-state profile on the
/// grid, an off-grid evaluator with the exact far-field tail, and `mass`.
#[derive(Debug, Clone)]
pub struct GroundState {
    pub beta: f64,
    pub lambda0: f64,
    pub normalization: Normalization,
    /// psi at the grid nodes.
    pub psi: Vec<f64>,
    /// beta v psi at the grid nodes (compactly supported source of psi).
    pub h: Vec<f64>,
    /// integral of psi over space; `None` for the critical state (divergent in dim 3).
    pub mass: Option<f64>,
    /// sup-norm fixed-point residual `sup |psi - G(beta v psi)| / sup psi`.
    pub residual: f64,
    grid: QuadGrid,
    kern: GreenKernel,
    tail: Tail,
}

impl GroundState {
    /// Evaluates psi anywhere (radius in dim 3, coordinate in dim 1) through
    /// one application of the Green operator to `beta v psi`.
    pub fn eval(&self, x: f64) -> f64 {
        green_apply(&self.kern, &self.grid, &self.h, x)
    }

    pub fn grid(&self) -> &QuadGrid {
        &self.grid
    }

    pub fn kappa(&self) -> f64 {
        self.kern.kappa
    }

    /// Far-field coefficient: dim 3 `psi ~ c e^{-kappa r}/r`.
    pub fn tail_coefficient(&self) -> f64 {
        match self.tail {
            Tail::Radial { c } => c,
            Tail::Line { c_plus, .. } => c_plus,
        }
    }

    /// Uniform lookup table for hot loops (the simulator's score function).
    pub fn tabulate(&self, step: f64, r_max: f64) -> PsiTable {
        let (lo, hi) = match self.grid.dim {
            Dim::Three => (0.0, r_max),
            Dim::One => (-r_max, r_max),
        };
        let n = ((hi - lo) / step).ceil() as usize + 1;
        let values: Vec<f64> = (0..n)
            .map(|k| self.eval(lo + (hi - lo) * k as f64 / (n - 1) as f64))
            .collect();
        PsiTable {
            dim: self.grid.dim,
            lambda0: self.lambda0,
            kappa: self.kern.kappa,
            lo,
            hi,
            values,
            tail: self.tail.clone(),
        }
    }
}

/// Computes the ground state of `L = Laplacian/2 + beta v`.
///
/// Supercritical (`lambda0 > 0`): eigenvector of `K_{lambda0}`, `psi`
/// L2-normalized, `mass` filled including the exact exponential tail.
/// Critical (`Critical` normalization, dim 3): `lambda = 0` state normalized
/// by `||beta v psi||_{L2} = 1`; `psi ~ c/r` far out and `mass` is `None`.
pub fn ground_state(
    beta: f64,
    p: &Potential,
    grid: &QuadGrid,
    normalization: Normalization,
) -> Result<GroundState> {
    match normalization {
        Normalization::Critical => {
            if p.dim() != Dim::Three {
                return Err(Error::domain("critical ground state requires dim 3"));
            }
            let op = assemble_k(0.0, beta, p, grid)?;
            let (mu, h_raw) = principal_eigen(&op)?;
            if (mu - 1.0).abs() > 1e-6 {
                return Err(Error::domain(format!(
                    "critical normalization requires beta = beta_cr (beta*mu(0) = {mu:.8})"
                )));
            }
            build_state(beta, 0.0, p, grid, h_raw, normalization)
        }
        Normalization::L2 => {
            let l0 = lambda0(beta, p, grid)?;
            let op = assemble_k(l0, beta, p, grid)?;
            let (_, h_raw) = principal_eigen(&op)?;
            build_state(beta, l0, p, grid, h_raw, normalization)
        }
    }
}

fn build_state(
    beta: f64,
    lambda0: f64,
    p: &Potential,
    grid: &QuadGrid,
    h_raw: Vec<f64>,
    normalization: Normalization,
) -> Result<GroundState> {
    let kern = GreenKernel::new(p.dim(), lambda0)?;
    let kappa = kern.kappa;
    // psi = G h; rescale afterwards, h stays beta*v*psi.
    let mut psi: Vec<f64> = grid
        .nodes
        .iter()
        .map(|&x| green_apply(&kern, grid, &h_raw, x))
        .collect();
    let mut h: Vec<f64> = grid
        .nodes
        .iter()
        .zip(&psi)
        .map(|(&x, &ps)| beta * p.eval_radial(x) * ps)
        .collect();

    let scale = match (grid.dim, normalization) {
        (Dim::Three, Normalization::L2) => {
            let c = tail_coeff_radial(grid, &h, kappa);
            let interior: f64 = grid.integrate(&psi.iter().map(|&x| x * x).collect::<Vec<_>>());
            let tail = 4.0 * PI * c * c * (-2.0 * kappa * grid.hi).exp() / (2.0 * kappa);
            (interior + tail).sqrt()
        }
        (Dim::One, Normalization::L2) => {
            let (cp, cm) = tail_coeff_line(grid, &h, kappa);
            let interior: f64 = grid.integrate(&psi.iter().map(|&x| x * x).collect::<Vec<_>>());
            let tail = cp * cp * (-2.0 * kappa * grid.hi).exp() / (2.0 * kappa)
                + cm * cm * (2.0 * kappa * grid.lo).exp() / (2.0 * kappa);
            (interior + tail).sqrt()
        }
        (_, Normalization::Critical) => {
            let hh: Vec<f64> = h.iter().map(|&x| x * x).collect();
            grid.integrate(&hh).sqrt()
        }
    };
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::numerical("ground state normalization failed"));
    }
    for x in psi.iter_mut() {
        *x /= scale;
    }
    for x in h.iter_mut() {
        *x /= scale;
    }

    let (tail, mass) = match grid.dim {
        Dim::Three => {
            let c = tail_coeff_radial(grid, &h, kappa);
            let mass = if normalization == Normalization::L2 {
                let interior = grid.integrate(&psi);
                // int_R^inf 4 pi r^2 * c e^{-kappa r}/r dr
                let tail_mass = 4.0
                    * PI
                    * c
                    * (-kappa * grid.hi).exp()
                    * (grid.hi / kappa + 1.0 / (kappa * kappa));
                Some(interior + tail_mass)
            } else {
                None
            };
            (Tail::Radial { c }, mass)
        }
        Dim::One => {
            let (cp, cm) = tail_coeff_line(grid, &h, kappa);
            let interior = grid.integrate(&psi);
            let tail_mass =
                cp * (-kappa * grid.hi).exp() / kappa + cm * (kappa * grid.lo).exp() / kappa;
            (Tail::Line { c_plus: cp, c_minus: cm }, Some(interior + tail_mass))
        }
    };

    // Defining fixed point: psi == G(beta v psi) on the grid.
    let sup_psi = psi.iter().cloned().fold(0.0, f64::max);
    let residual = grid
        .nodes
        .iter()
        .zip(&psi)
        .map(|(&x, &ps)| (green_apply(&kern, grid, &h, x) - ps).abs())
        .fold(0.0, f64::max)
        / sup_psi;
    if !(residual <= 1e-8) {
        return Err(Error::numerical(format!(
            "ground state fixed-point residual {residual:.3e} exceeds 1e-8"
        )));
    }

    Ok(GroundState {
        beta,
        lambda0,
        normalization,
        psi,
        h,
        mass,
        residual,
        grid: grid.clone(),
        kern,
        tail,
    })
}

/// `psi(r) = c e^{-kappa r}/r` for `r >= hi`: `c = (1/kappa) int r h(r) 2 sinh(kappa r) dr`,
/// continuous at `kappa = 0` where it becomes `2 int r^2 h dr`.
fn tail_coeff_radial(grid: &QuadGrid, h: &[f64], kappa: f64) -> f64 {
    grid.nodes
        .iter()
        .zip(&grid.line_weights)
        .zip(h)
        .map(|((&r, &w), &hv)| {
            let z = kappa * r;
            let sinhc = if z < 1e-4 {
                r * (1.0 + z * z / 6.0)
            } else {
                z.sinh() / kappa
            };
            w * r * 2.0 * sinhc * hv
        })
        .sum()
}

fn tail_coeff_line(grid: &QuadGrid, h: &[f64], kappa: f64) -> (f64, f64) {
    let mut cp = 0.0;
    let mut cm = 0.0;
    for ((&y, &w), &hv) in grid.nodes.iter().zip(&grid.line_weights).zip(h) {
        cp += w * (kappa * y).exp() * hv / kappa;
        cm += w * (-kappa * y).exp() * hv / kappa;
    }
    (cp, cm)
}

/// Interpolation table for psi with the exact tail beyond its range.
#[derive(Debug, Clone)]
pub struct PsiTable {
    pub dim: Dim,
    pub lambda0: f64,
    pub kappa: f64,
    lo: f64,
    hi: f64,
    values: Vec<f64>,
    tail: Tail,
}

impl PsiTable {
    pub fn eval(&self, x: f64) -> f64 {
        if x > self.hi {
            return match &self.tail {
                Tail::Radial { c } => c * (-self.kappa * x).exp() / x,
                Tail::Line { c_plus, .. } => c_plus * (-self.kappa * x).exp(),
            };
        }
        if x < self.lo {
            return match &self.tail {
                Tail::Radial { c } => c * (-self.kappa * x.abs()).exp() / x.abs().max(1e-300),
                Tail::Line { c_minus, .. } => c_minus * (self.kappa * x).exp(),
            };
        }
        let t = (x - self.lo) / (self.hi - self.lo) * (self.values.len() - 1) as f64;
        let j = (t.floor() as usize).min(self.values.len() - 2);
        let frac = t - j as f64;
        self.values[j] * (1.0 - frac) + self.values[j + 1] * frac
    }

    pub fn eval_point(&self, x: &[f64]) -> f64 {
        match self.dim {
            Dim::One => self.eval(x[0]),
            Dim::Three => self.eval((x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()),
        }
    }
}

/// Result of one resolvent application `S_lambda g`; evaluable anywhere.
#[derive(Debug, Clone)]
pub struct ResolventSolution {
    pub lambda: f64,
    pub beta: f64,
    /// Solution of `(I - K_lambda) u = beta v G_lambda g` on the support grid.
    pub u: Vec<f64>,
    /// Relative residual of the dense solve.
    pub residual: f64,
    kern: GreenKernel,
    src_grid: QuadGrid,
    src_values: Vec<f64>,
    sol_grid: QuadGrid,
}

impl ResolventSolution {
    /// `S_lambda g (x) = (G g)(x) + (G u)(x)`.
    pub fn eval(&self, x: f64) -> f64 {
        green_apply(&self.kern, &self.src_grid, &self.src_values, x)
            + green_apply(&self.kern, &self.sol_grid, &self.u, x)
    }

    pub fn eval_on(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.eval(x)).collect()
    }
}

/// Applies `S_lambda = (lambda - L)^{-1}` to a source sampled on the grid
/// (the source must vanish outside the grid range).
///
/// `lambda` must lie strictly above the spectrum: above `lambda0(beta)` when
/// a bound state exists, else `lambda >= 0` (dim 3) / `lambda > 0` (dim 1);
/// violations are detected through the spectral radius of `K_lambda`.
pub fn resolvent_apply(
    lambda: f64,
    beta: f64,
    p: &Potential,
    grid: &QuadGrid,
    g_on_grid: &[f64],
) -> Result<ResolventSolution> {
    if g_on_grid.len() != grid.n_nodes() {
        return Err(Error::contract("source length does not match grid"));
    }
    solve_resolvent(lambda, beta, p, grid, grid.clone(), g_on_grid.to_vec())
}

/// Same, for sources reaching beyond the support; `g` is integrated over an
/// extended grid out to `g_extent` (outside which it must be negligible).
pub fn resolvent_apply_fn(
    lambda: f64,
    beta: f64,
    p: &Potential,
    grid: &QuadGrid,
    g: impl Fn(f64) -> f64,
    g_extent: f64,
) -> Result<ResolventSolution> {
    let kern = GreenKernel::new(p.dim(), lambda)?;
    let width = if kern.kappa > 0.0 {
        (2.0 / kern.kappa).min(g_extent)
    } else {
        0.25 * g_extent
    };
    let ext = QuadGrid::extended(p, grid.n_nodes(), g_extent, width)?;
    let values = ext.sample(&g);
    solve_resolvent(lambda, beta, p, grid, ext, values)
}

fn solve_resolvent(
    lambda: f64,
    beta: f64,
    p: &Potential,
    grid: &QuadGrid,
    src_grid: QuadGrid,
    src_values: Vec<f64>,
) -> Result<ResolventSolution> {
    let kern = GreenKernel::new(p.dim(), lambda)?;
    if beta == 0.0 {
        // S_lambda = G_lambda exactly
        return Ok(ResolventSolution {
            lambda,
            beta,
            u: vec![0.0; grid.n_nodes()],
            residual: 0.0,
            kern,
            src_grid,
            src_values,
            sol_grid: grid.clone(),
        });
    }
    let op = assemble_k(lambda, beta, p, grid)?;
    let (mu, _) = principal_eigen(&op)?;
    if mu >= 1.0 - 1e-9 {
        return Err(Error::domain(format!(
            "lambda = {lambda} is at or below the top of the spectrum \
             (spectral radius of K = {mu:.10}); resolvent pole"
        )));
    }
    // b_i = beta v(x_i) (G g)(x_i)
    let b: Vec<f64> = grid
        .nodes
        .iter()
        .map(|&x| beta * p.eval_radial(x) * green_apply(&kern, &src_grid, &src_values, x))
        .collect();
    let n = grid.n_nodes();
    let a = DMatrix::identity(n, n) - &op.matrix;
    let rhs = DVector::from_column_slice(&b);
    let lu = a.clone().lu();
    let u = lu
        .solve(&rhs)
        .ok_or_else(|| Error::numerical("resolvent solve: singular system"))?;
    let resid = (&a * &u - &rhs).amax();
    let scale = rhs.amax().max(1e-300);
    if resid / scale > SOLVE_RESIDUAL_TOL {
        return Err(Error::numerical(format!(
            "resolvent solve residual {:.3e} exceeds {SOLVE_RESIDUAL_TOL:.0e}",
            resid / scale
        )));
    }
    Ok(ResolventSolution {
        lambda,
        beta,
        u: u.iter().cloned().collect(),
        residual: resid / scale,
        kern,
        src_grid,
        src_values,
        sol_grid: grid.clone(),
    })
}

/// Distance from `lambda0` to the rest of the spectrum of `L`, from the
/// second eigenvalue of the symmetrized kernel matrix. Used to pick
/// spectrally justified comparison times.
pub fn spectral_gap(beta: f64, lambda0: f64, p: &Potential, grid: &QuadGrid) -> Result<f64> {
    // the symmetrized matrix already carries beta: a second bound state
    // exists iff its second eigenvalue exceeds 1
    let mu2_of = |lambda: f64| -> Result<f64> {
        let s = assemble_symmetrized(lambda, beta, p, grid)?;
        let eig = nalgebra::SymmetricEigen::new(s);
        let mut ev: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
        ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
        Ok(if ev.len() > 1 { ev[1] } else { 0.0 })
    };
    let probe = match p.dim() {
        Dim::Three => 0.0,
        Dim::One => 1e-6,
    };
    let lambda1 = if mu2_of(probe)? <= 1.0 {
        0.0
    } else {
        let mut lo = probe;
        let mut hi = lambda0;
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if mu2_of(mid)? > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    Ok(lambda0 - lambda1.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::Shape;
    use approx::assert_relative_eq;

    fn bump3() -> Potential {
        Potential::new(Dim::Three, Shape::Bump { center: 0.0, radius: 1.0, height: 1.0 }).unwrap()
    }

    fn ind1(eps: f64) -> Potential {
        Potential::new(
            Dim::One,
            Shape::IndicatorSmoothed { radius: 1.0, height: 1.0, smoothing: eps },
        )
        .unwrap()
    }

    #[test]
    fn zero_beta_gives_zero_matrix() {
        let p = bump3();
        let grid = QuadGrid::support(&p, 32).unwrap();
        let op = assemble_k(0.3, 0.0, &p, &grid).unwrap();
        assert!(op.matrix.iter().all(|&e| e == 0.0));
        assert!(principal_eigen(&op).is_err());
    }

    #[test]
    fn rejects_negative_lambda() {
        let p = bump3();
        let grid = QuadGrid::support(&p, 32).unwrap();
        assert!(assemble_k(-0.1, 1.0, &p, &grid).is_err());
    }

    #[test]
    fn entries_nonnegative() {
        for (p, lambda) in [(bump3(), 0.0), (bump3(), 0.7), (ind1(0.1), 0.4)] {
            let grid = QuadGrid::support(&p, 64).unwrap();
            let op = assemble_k(lambda, 1.3, &p, &grid).unwrap();
            let min = op.matrix.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(min >= 0.0, "min entry {min}");
        }
    }

    #[test]
    fn eigenvalue_homogeneous_in_scaling() {
        let p = bump3();
        let grid = QuadGrid::support(&p, 48).unwrap();
        let op = assemble_k(0.5, 1.0, &p, &grid).unwrap();
        let (mu, _) = principal_eigen(&op).unwrap();
        let op3 = DiscretizedOperator {
            matrix: &op.matrix * 3.0,
            lambda: op.lambda,
            beta: op.beta,
        };
        let (mu3, _) = principal_eigen(&op3).unwrap();
        assert_relative_eq!(mu3, 3.0 * mu, max_relative = 1e-11);
    }

    #[test]
    fn rank_one_kernel_eigenvalue_is_trace() {
        let mut m = DMatrix::zeros(5, 5);
        m[(2, 2)] = 0.37;
        let op = DiscretizedOperator { matrix: m, lambda: 0.0, beta: 1.0 };
        let (mu, _) = principal_eigen(&op).unwrap();
        assert_relative_eq!(mu, 0.37, max_relative = 1e-12);
    }

    #[test]
    fn matches_dense_eigensolver_oracle() {
        // full complex eigendecomposition of the 32x32 Nystrom matrix
        let p = bump3();
        let grid = QuadGrid::support(&p, 32).unwrap();
        for lambda in [0.0, 0.4, 1.1] {
            let op = assemble_k(lambda, 2.0, &p, &grid).unwrap();
            let (mu, _) = principal_eigen(&op).unwrap();
            let schur = op.matrix.clone().schur();
            let top = schur
                .complex_eigenvalues()
                .iter()
                .map(|z| z.re)
                .fold(f64::NEG_INFINITY, f64::max);
            assert_relative_eq!(mu, top, max_relative = 1e-9);
        }
    }

    #[test]
    fn symmetrized_route_agrees() {
        let p = bump3();
        let grid = QuadGrid::support(&p, 64).unwrap();
        let lambda = 0.3;
        let beta = 2.0;
        let plain = assemble_k_opts(lambda, beta, &p, &grid, false).unwrap();
        let (mu_plain, _) = principal_eigen(&plain).unwrap();
        let s = assemble_symmetrized(lambda, beta, &p, &grid).unwrap();
        let eig = nalgebra::SymmetricEigen::new(s);
        let mu_sym = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_relative_eq!(mu_plain, mu_sym, max_relative = 1e-8);
        // and the corrected assembly stays near the plain one (the plain
        // route carries the kink's quadrature error, a few 1e-4 at n = 64)
        let (mu_corr, _) = principal_eigen(&assemble_k(lambda, beta, &p, &grid).unwrap()).unwrap();
        assert_relative_eq!(mu_corr, mu_plain, max_relative = 1e-3);
    }

    #[test]
    fn beta_critical_dim1_is_zero() {
        let p = ind1(0.1);
        let grid = QuadGrid::support(&p, 32).unwrap();
        assert_eq!(beta_critical(&p, &grid).unwrap(), 0.0);
    }

    #[test]
    fn beta_critical_scales_inverse_square() {
        let p1 = bump3();
        let p2 = Potential::new(
            Dim::Three,
            Shape::Bump { center: 0.0, radius: 2.0, height: 1.0 },
        )
        .unwrap();
        let b1 = beta_critical(&p1, &QuadGrid::support(&p1, 96).unwrap()).unwrap();
        let b2 = beta_critical(&p2, &QuadGrid::support(&p2, 96).unwrap()).unwrap();
        assert_relative_eq!(b1 / b2, 4.0, max_relative = 0.01);
    }

    #[test]
    fn lambda0_monotone_in_beta() {
        let p = bump3();
        let grid = QuadGrid::support(&p, 64).unwrap();
        let bc = beta_critical(&p, &grid).unwrap();
        let mut prev = 0.0;
        for k in 1..=5 {
            let beta = bc * (1.0 + 0.35 * k as f64);
            let l = lambda0(beta, &p, &grid).unwrap();
            assert!(l > prev, "lambda0 not increasing at beta {beta}");
            prev = l;
        }
    }

    #[test]
    fn lambda0_vanishes_at_criticality() {
        let p = bump3();
        let grid = QuadGrid::support(&p, 64).unwrap();
        let bc = beta_critical(&p, &grid).unwrap();
        assert!(lambda0(bc * 0.999, &p, &grid).is_err());
        let l = lambda0(bc * 1.001, &p, &grid).unwrap();
        assert!(l > 0.0 && l < 5e-3, "lambda0 {l} should be tiny just above beta_cr");
    }

    #[test]
    fn grid_refinement_cauchy() {
        let p = bump3();
        let g64 = QuadGrid::support(&p, 64).unwrap();
        let g128 = QuadGrid::support(&p, 128).unwrap();
        let b1 = beta_critical(&p, &g64).unwrap();
        let b2 = beta_critical(&p, &g128).unwrap();
        assert!(((b1 - b2) / b2).abs() <= 1e-5, "beta_cr cauchy {}", ((b1 - b2) / b2).abs());
        let beta = 1.7 * b2;
        let l1 = lambda0(beta, &p, &g64).unwrap();
        let l2 = lambda0(beta, &p, &g128).unwrap();
        assert!(((l1 - l2) / l2).abs() <= 1e-5, "lambda0 cauchy {}", ((l1 - l2) / l2).abs());
        let s1 = ground_state(beta, &p, &g64, Normalization::L2).unwrap();
        let s2 = ground_state(beta, &p, &g128, Normalization::L2).unwrap();
        for r in [0.0, 0.3, 0.8, 1.5] {
            let (a, b) = (s1.eval(r), s2.eval(r));
            assert!(((a - b) / b).abs() <= 1e-5, "psi cauchy at {r}: {}", ((a - b) / b).abs());
        }
    }

    #[test]
    fn mu_strictly_decreasing_in_lambda() {
        let p = bump3();
        let grid = QuadGrid::support(&p, 64).unwrap();
        let mut prev = f64::INFINITY;
        for k in 0..10 {
            let lambda = 0.05 + 0.25 * k as f64;
            let mu = mu_of_lambda(lambda, 1.0, &p, &grid).unwrap();
            assert!(mu < prev);
            prev = mu;
        }
    }

    #[test]
    fn ground_state_invariants_supercritical() {
        let p = bump3();
        let grid = QuadGrid::support(&p, 96).unwrap();
        let bc = beta_critical(&p, &grid).unwrap();
        let gs = ground_state(1.7 * bc, &p, &grid, Normalization::L2).unwrap();
        assert!(gs.lambda0 > 0.0);
        assert!(gs.residual <= 1e-8);
        assert!(gs.psi.iter().all(|&x| x > 0.0));
        // far field: r psi(r) e^{kappa r} levels off over [2a, 5a]
        let kappa = gs.kappa();
        let vals: Vec<f64> = (0..=30)
            .map(|k| {
                let r = 2.0 + 3.0 * k as f64 / 30.0;
                r * gs.eval(r) * (kappa * r).exp()
            })
            .collect();
        let (lo, hi) = vals
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        assert!((hi - lo) / hi <= 0.05, "tail constancy {}", (hi - lo) / hi);
        // L2 normalization
        let mut l2 = grid.integrate(&gs.psi.iter().map(|&x| x * x).collect::<Vec<_>>());
        let c = gs.tail_coefficient();
        l2 += 4.0 * PI * c * c * (-2.0 * kappa * grid.hi).exp() / (2.0 * kappa);
        assert_relative_eq!(l2, 1.0, max_relative = 1e-9);
    }

    #[test]
    fn ground_state_critical_decay() {
        let p = bump3();
        let grid = QuadGrid::support(&p, 96).unwrap();
        let bc = beta_critical(&p, &grid).unwrap();
        let gs = ground_state(bc, &p, &grid, Normalization::Critical).unwrap();
        assert_eq!(gs.lambda0, 0.0);
        assert!(gs.mass.is_none());
        // psi ~ 1/r: fitted log-log slope over [2, 8]
        let pts: Vec<(f64, f64)> = (0..=20)
            .map(|k| {
                let r = 2.0 + 6.0 * k as f64 / 20.0;
                (r.ln(), gs.eval(r).ln())
            })
            .collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
            / pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum::<f64>();
        assert!((slope + 1.0).abs() <= 0.05, "critical decay exponent {slope}");
    }

    #[test]
    fn ground_state_rejects_subcritical() {
        let p = bump3();
        let grid = QuadGrid::support(&p, 64).unwrap();
        let bc = beta_critical(&p, &grid).unwrap();
        assert!(ground_state(0.5 * bc, &p, &grid, Normalization::L2).is_err());
        assert!(ground_state(0.5 * bc, &p, &grid, Normalization::Critical).is_err());
    }

    #[test]
    fn resolvent_beta_zero_reduces_to_green() {
        let p = bump3();
        let grid = QuadGrid::support(&p, 64).unwrap();
        let g = grid.sample(|r| p.eval_radial(r));
        let sol = resolvent_apply(0.8, 0.0, &p, &grid, &g).unwrap();
        let kern = GreenKernel::new(Dim::Three, 0.8).unwrap();
        for &r in &[0.0, 0.4, 0.9, 1.6] {
            assert_relative_eq!(
                sol.eval(r),
                green_apply(&kern, &grid, &g, r),
                max_relative = 1e-13
            );
        }
    }

    #[test]
    fn resolvent_eigenfunction_relation() {
        // S_lambda psi = psi / (lambda - lambda0)
        let p = bump3();
        let grid = QuadGrid::support(&p, 96).unwrap();
        let bc = beta_critical(&p, &grid).unwrap();
        let beta = 1.7 * bc;
        let gs = ground_state(beta, &p, &grid, Normalization::L2).unwrap();
        let lambda = 2.0 * gs.lambda0;
        let extent = grid.hi + 40.0 / gs.kappa();
        let sol = resolvent_apply_fn(lambda, beta, &p, &grid, |r| gs.eval(r), extent).unwrap();
        for &r in &[0.0, 0.3, 0.7, 1.2, 2.5] {
            let expect = gs.eval(r) / (lambda - gs.lambda0);
            assert_relative_eq!(sol.eval(r), expect, max_relative = 1e-6);
        }
    }

    #[test]
    fn resolvent_positivity_and_pole_detection() {
        let p = bump3();
        let grid = QuadGrid::support(&p, 64).unwrap();
        let bc = beta_critical(&p, &grid).unwrap();
        let beta = 1.7 * bc;
        let l0 = lambda0(beta, &p, &grid).unwrap();
        let g = grid.sample(|r| p.eval_radial(r));
        let sol = resolvent_apply(2.0 * l0, beta, &p, &grid, &g).unwrap();
        for &r in &[0.0, 0.5, 1.0, 2.0] {
            assert!(sol.eval(r) > 0.0);
        }
        assert!(resolvent_apply(0.5 * l0, beta, &p, &grid, &g).is_err());
    }

    #[test]
    fn resolvent_large_lambda_decay() {
        // sup |S_lambda psi| fitted decay exponent -1 over lambda in [10, 1000]
        let p = bump3();
        let grid = QuadGrid::support(&p, 64).unwrap();
        let bc = beta_critical(&p, &grid).unwrap();
        let beta = 1.7 * bc;
        let gs = ground_state(beta, &p, &grid, Normalization::L2).unwrap();
        let extent = grid.hi + 40.0 / gs.kappa();
        let mut pts = vec![];
        for k in 0..8 {
            let lambda = 10.0 * (100.0f64).powf(k as f64 / 7.0);
            let sol =
                resolvent_apply_fn(lambda, beta, &p, &grid, |r| gs.eval(r), extent).unwrap();
            let sup = (0..30)
                .map(|j| sol.eval(2.0 * j as f64 / 29.0))
                .fold(0.0, f64::max);
            pts.push((lambda.ln(), sup.ln()));
            let sup_g = 1.0; // psi peaks below 1 after L2 normalization here
            assert!(sup <= 2.0 * sup_g / lambda);
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
            / pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum::<f64>();
        assert!((slope + 1.0).abs() <= 0.05, "resolvent decay exponent {slope}");
    }

    #[test]
    fn psi_table_matches_evaluator() {
        let p = bump3();
        let grid = QuadGrid::support(&p, 64).unwrap();
        let bc = beta_critical(&p, &grid).unwrap();
        let gs = ground_state(1.7 * bc, &p, &grid, Normalization::L2).unwrap();
        let table = gs.tabulate(5e-4, grid.hi + 12.0 / gs.kappa());
        for &r in &[0.0, 0.37, 0.99, 2.4, 30.0] {
            let exact = gs.eval(r);
            assert_relative_eq!(table.eval(r), exact, max_relative = 1e-5);
        }
    }
}
