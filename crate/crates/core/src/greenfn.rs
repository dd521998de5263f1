//! Free heat kernel and the positive Green kernel `G_lambda` of
//! `(lambda - Laplacian/2)^{-1}` for real `lambda >= 0`, in closed form:
//!
//! - dim 1: `G(x, y) = exp(-kappa |x-y|) / kappa`
//! - dim 3: `G(x, y) = exp(-kappa |x-y|) / (2 pi |x-y|)`
//!
//! with `kappa = sqrt(2 lambda)`. For radial data in dim 3 the angular
//! integral collapses, leaving a bounded one-dimensional kernel; quadrature
//! against it subdivides the panel straddling the `|r - r'|` kink so that
//! composite Gauss-Legendre keeps its accuracy.

use crate::error::{Error, Result};
use crate::grid::{gauss_legendre, lagrange_basis_at, QuadGrid, PANEL_ORDER};
use crate::potential::Dim;

use std::f64::consts::PI;

/// Transition density of the driving Brownian motion at displacement norm `r`.
pub fn heat_kernel(t: f64, r: f64, dim: Dim) -> Result<f64> {
    if t <= 0.0 || !t.is_finite() {
        return Err(Error::domain(format!("heat kernel requires t > 0, got {t}")));
    }
    let d = dim.as_usize() as f64;
    Ok((2.0 * PI * t).powf(-0.5 * d) * (-r * r / (2.0 * t)).exp())
}

/// Point value of the Green kernel at separation `r`.
pub fn green_kernel(lambda: f64, r: f64, dim: Dim) -> Result<f64> {
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::domain(format!("lambda must be >= 0, got {lambda}")));
    }
    let kappa = (2.0 * lambda).sqrt();
    match dim {
        Dim::One => {
            if lambda == 0.0 {
                return Err(Error::domain("the 1D Green kernel diverges as lambda -> 0"));
            }
            Ok((-kappa * r.abs()).exp() / kappa)
        }
        Dim::Three => {
            if r <= 0.0 {
                return Err(Error::domain("the 3D Green kernel is singular at r = 0"));
            }
            Ok((-kappa * r).exp() / (2.0 * PI * r))
        }
    }
}

/// `sinh(z)/z`, stable near zero.
fn sinhc(z: f64) -> f64 {
    if z.abs() < 1e-4 {
        let z2 = z * z;
        1.0 + z2 / 6.0 + z2 * z2 / 120.0
    } else {
        z.sinh() / z
    }
}

/// The Green kernel of one dimension and spectral parameter, cached `kappa`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreenKernel {
    pub dim: Dim,
    pub lambda: f64,
    pub kappa: f64,
}

impl GreenKernel {
    pub fn new(dim: Dim, lambda: f64) -> Result<Self> {
        if lambda < 0.0 || !lambda.is_finite() {
            return Err(Error::domain(format!("lambda must be >= 0, got {lambda}")));
        }
        if dim == Dim::One && lambda == 0.0 {
            return Err(Error::domain("dim 1 requires lambda > 0"));
        }
        Ok(GreenKernel { dim, lambda, kappa: (2.0 * lambda).sqrt() })
    }

    /// Kernel against the grid's volume measure:
    /// `(G f)(x) = sum_j reduced(x, nodes[j]) * weights[j] * f_j`.
    ///
    /// dim 1: the point kernel itself. dim 3 (radial reduction): writing
    /// `m = min(r, r')`, `M = max(r, r')`,
    /// `G~(r, r') = sinhc(kappa m) * exp(-kappa M) / (2 pi M)`,
    /// which covers `r = 0` and `lambda = 0` (`G~ = m / (2 pi r r')`).
    pub fn reduced(&self, x: f64, y: f64) -> f64 {
        match self.dim {
            Dim::One => (-self.kappa * (x - y).abs()).exp() / self.kappa,
            Dim::Three => {
                let m = x.min(y);
                let hi = x.max(y);
                sinhc(self.kappa * m) * (-self.kappa * hi).exp() / (2.0 * PI * hi)
            }
        }
    }
}

/// Quadrature weights `W_j` such that `(G f)(x) ~= sum_j W_j f(nodes[j])`.
///
/// Panels not containing `x` use the plain node weights; the straddling
/// panel is re-integrated on the two sub-intervals split at `x`, with the
/// source interpolated from the panel's own nodes.
pub fn green_row(kern: &GreenKernel, grid: &QuadGrid, x: f64) -> Vec<f64> {
    let vol = grid.dim == Dim::Three;
    let mut row: Vec<f64> = grid
        .nodes
        .iter()
        .zip(&grid.weights)
        .map(|(&y, &w)| kern.reduced(x, y) * w)
        .collect();
    if let Some(k) = grid.panel_containing(x) {
        let p = grid.panels[k];
        let pn = grid.panel_nodes(k);
        let (gx, gw) = gauss_legendre(PANEL_ORDER + 2);
        let mut wk = [0.0; PANEL_ORDER];
        for (s0, s1) in [(p.lo, x), (x, p.hi)] {
            if s1 - s0 <= f64::EPSILON * (p.hi - p.lo) {
                continue;
            }
            let mid = 0.5 * (s0 + s1);
            let half = 0.5 * (s1 - s0);
            for (&g, &w) in gx.iter().zip(&gw) {
                let y = mid + half * g;
                let mut kv = kern.reduced(x, y) * half * w;
                if vol {
                    kv *= 4.0 * PI * y * y;
                }
                for (j, b) in lagrange_basis_at(pn, y).into_iter().enumerate() {
                    wk[j] += kv * b;
                }
            }
        }
        row[p.first..p.first + PANEL_ORDER].copy_from_slice(&wk);
    }
    row
}

/// Applies the Green operator to samples of `f` on the grid, evaluated at `x`.
/// dim 3: `x` is a radius (0 allowed); dim 1: a coordinate.
pub fn green_apply(kern: &GreenKernel, grid: &QuadGrid, values: &[f64], x: f64) -> f64 {
    debug_assert_eq!(values.len(), grid.n_nodes());
    green_row(kern, grid, x)
        .iter()
        .zip(values)
        .map(|(w, v)| w * v)
        .sum()
}

/// Radial application of the dim-3 Green operator on a grid; spec'd entry
/// point for `(G_lambda f)(r)` with `lambda >= 0`.
pub fn radial_green_apply(lambda: f64, values: &[f64], grid: &QuadGrid, r: f64) -> Result<f64> {
    if grid.dim != Dim::Three {
        return Err(Error::domain("radial_green_apply expects a dim-3 grid"));
    }
    let kern = GreenKernel::new(Dim::Three, lambda)?;
    Ok(green_apply(&kern, grid, values, r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::{Potential, Shape};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn heat_kernel_origin_values() {
        assert_relative_eq!(
            heat_kernel(1.0, 0.0, Dim::One).unwrap(),
            (2.0 * PI).powf(-0.5),
            max_relative = 1e-12
        );
        assert_relative_eq!(
            heat_kernel(2.0, 0.0, Dim::Three).unwrap(),
            (4.0 * PI).powf(-1.5),
            max_relative = 1e-12
        );
        assert!(heat_kernel(0.0, 1.0, Dim::One).is_err());
        assert!(heat_kernel(-1.0, 1.0, Dim::Three).is_err());
    }

    #[test]
    fn heat_kernel_normalized_dim1() {
        // integral over a wide interval by composite GL
        let (gx, gw) = gauss_legendre(32);
        let t = 0.7;
        let mut total = 0.0;
        let panels = 40;
        let (a, b) = (-12.0, 12.0);
        for k in 0..panels {
            let lo = a + (b - a) * k as f64 / panels as f64;
            let hi = a + (b - a) * (k + 1) as f64 / panels as f64;
            let mid = 0.5 * (lo + hi);
            let half = 0.5 * (hi - lo);
            for (&g, &w) in gx.iter().zip(&gw) {
                total += half * w * heat_kernel(t, (mid + half * g).abs(), Dim::One).unwrap();
            }
        }
        assert_relative_eq!(total, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn green_kernel_closed_form_values() {
        assert_relative_eq!(
            green_kernel(0.5, 1.0, Dim::Three).unwrap(),
            (-1.0f64).exp() / (2.0 * PI),
            max_relative = 1e-12
        );
        assert_relative_eq!(green_kernel(0.5, 0.0, Dim::One).unwrap(), 1.0, max_relative = 1e-12);
        assert_relative_eq!(
            green_kernel(0.0, 2.0, Dim::Three).unwrap(),
            1.0 / (4.0 * PI),
            max_relative = 1e-12
        );
        assert!(green_kernel(0.0, 1.0, Dim::One).is_err());
        assert!(green_kernel(0.5, 0.0, Dim::Three).is_err());
        assert!(green_kernel(-0.1, 1.0, Dim::One).is_err());
    }

    /// `integral G_lambda(x - y) (lambda - Lap/2) phi(y) dy = phi(x)` for a
    /// smooth compactly supported test function, dim 1.
    #[test]
    fn distributional_identity_dim1() {
        let lambda = 0.5;
        let kappa = (2.0f64 * lambda).sqrt();
        // phi = (1 - x^2)^4 on [-1, 1]; phi'' = -8(1-u)^3 + 48 x^2 (1-u)^2, u = x^2
        let phi = |x: f64| {
            let u = x * x;
            if u >= 1.0 { 0.0 } else { (1.0 - u).powi(4) }
        };
        let phi_xx = |x: f64| {
            let u = x * x;
            if u >= 1.0 {
                0.0
            } else {
                -8.0 * (1.0 - u).powi(3) + 48.0 * u * (1.0 - u).powi(2)
            }
        };
        let (gx, gw) = gauss_legendre(24);
        for &x0 in &[0.0f64, 0.4, -0.7, 1.5] {
            let mut total = 0.0;
            // panels split at the kernel kink x0
            let mut edges: Vec<f64> = (0..=40).map(|k| -1.0 + 2.0 * k as f64 / 40.0).collect();
            if x0.abs() < 1.0 {
                edges.push(x0);
                edges.sort_by(|a, b| a.partial_cmp(b).unwrap());
            }
            for w in edges.windows(2) {
                let mid = 0.5 * (w[0] + w[1]);
                let half = 0.5 * (w[1] - w[0]);
                for (&g, &wt) in gx.iter().zip(&gw) {
                    let y = mid + half * g;
                    let rhs = lambda * phi(y) - 0.5 * phi_xx(y);
                    total += half * wt * ((-kappa * (x0 - y).abs()).exp() / kappa) * rhs;
                }
            }
            assert_relative_eq!(total, phi(x0), epsilon = 1e-10);
        }
    }

    #[test]
    fn semigroup_resolvent_identity() {
        // integral_0^T exp(-lambda t) p_t(r) dt -> G_lambda(r)
        let (gx, gw) = gauss_legendre(32);
        for (dim, lambda) in [(Dim::One, 0.8), (Dim::Three, 0.5), (Dim::Three, 2.0)] {
            for k in 0..10 {
                let r = 0.2 + 0.35 * k as f64;
                let t_max = 60.0 / lambda;
                let mut total = 0.0;
                let panels = 600;
                for p in 0..panels {
                    // geometric panels resolve the t -> 0 boundary layer
                    let f0 = (p as f64 / panels as f64).powi(3);
                    let f1 = ((p + 1) as f64 / panels as f64).powi(3);
                    let (lo, hi) = (t_max * f0, t_max * f1);
                    let mid = 0.5 * (lo + hi);
                    let half = 0.5 * (hi - lo);
                    for (&g, &w) in gx.iter().zip(&gw) {
                        let t = mid + half * g;
                        total +=
                            half * w * (-lambda * t).exp() * heat_kernel(t, r, dim).unwrap();
                    }
                }
                let exact = green_kernel(lambda, r, dim).unwrap();
                assert_relative_eq!(total, exact, max_relative = 1e-6);
            }
        }
    }

    fn bump3() -> Potential {
        Potential::new(Dim::Three, Shape::Bump { center: 0.0, radius: 1.0, height: 1.0 }).unwrap()
    }

    /// Direct 3D quadrature of `e^{-kappa |x-y|} / (2 pi |x-y|)` against a
    /// radial source, via the substitution `u = cos(theta) = 1 - w^2`.
    fn direct_3d_oracle(r: f64, kappa: f64, f: impl Fn(f64) -> f64, s_max: f64) -> f64 {
        let (gx, gw) = gauss_legendre(24);
        let mut edges: Vec<f64> = (0..=30).map(|k| s_max * k as f64 / 30.0).collect();
        if r < s_max {
            edges.push(r);
            edges.sort_by(|a, b| a.partial_cmp(b).unwrap());
        }
        let sqrt2 = 2.0f64.sqrt();
        let w_edges: Vec<f64> = (0..=16).map(|k| sqrt2 * k as f64 / 16.0).collect();
        let mut total = 0.0;
        for se in edges.windows(2) {
            let smid = 0.5 * (se[0] + se[1]);
            let shalf = 0.5 * (se[1] - se[0]);
            for (&sg, &sw) in gx.iter().zip(&gw) {
                let s = smid + shalf * sg;
                let fs = f(s);
                if fs == 0.0 {
                    continue;
                }
                // angular integral: int_0^sqrt(2) 2 w e^{-kappa T}/T dw,
                // T = sqrt((r-s)^2 + 2 r s w^2)
                let mut ang = 0.0;
                for we in w_edges.windows(2) {
                    let wmid = 0.5 * (we[0] + we[1]);
                    let whalf = 0.5 * (we[1] - we[0]);
                    for (&wg, &ww) in gx.iter().zip(&gw) {
                        let wv = wmid + whalf * wg;
                        let t2 = (r - s) * (r - s) + 2.0 * r * s * wv * wv;
                        let t = t2.sqrt();
                        ang += whalf * ww * 2.0 * wv * (-kappa * t).exp() / t;
                    }
                }
                total += shalf * sw * s * s * fs * ang;
            }
        }
        total
    }

    #[test]
    fn radial_apply_matches_direct_3d_quadrature() {
        let p = bump3();
        let grid = QuadGrid::support(&p, 96).unwrap();
        let vals = grid.sample(|r| p.eval_radial(r));
        let lambda = 0.5;
        let kappa = (2.0f64 * lambda).sqrt();
        for &r in &[0.15, 0.3, 0.55, 0.7, 1.1] {
            let mine = radial_green_apply(lambda, &vals, &grid, r).unwrap();
            let oracle = direct_3d_oracle(r, kappa, |s| p.eval_radial(s), 1.0);
            assert_relative_eq!(mine, oracle, max_relative = 1e-6);
        }
    }

    #[test]
    fn radial_apply_zero_source() {
        let grid = QuadGrid::support(&bump3(), 64).unwrap();
        let vals = vec![0.0; grid.n_nodes()];
        for &r in &[0.0, 0.5, 2.0] {
            assert_eq!(radial_green_apply(0.7, &vals, &grid, r).unwrap(), 0.0);
        }
    }

    #[test]
    fn radial_apply_center_limit_lambda_zero() {
        // (G_0 1_{B_a})(0) = a^2 exactly
        let p = bump3();
        let grid = QuadGrid::support(&p, 64).unwrap();
        let ones = vec![1.0; grid.n_nodes()];
        let got = radial_green_apply(0.0, &ones, &grid, 0.0).unwrap();
        assert_relative_eq!(got, 1.0, max_relative = 1e-10);
    }

    #[test]
    fn resolvent_large_lambda_bound() {
        // sup |G_lambda f| <= sup|f|/lambda * (1 + o(1))
        let p = bump3();
        let grid = QuadGrid::support(&p, 128).unwrap();
        let vals = grid.sample(|r| p.eval_radial(r));
        let sup_f = 1.0;
        let mut prev = f64::INFINITY;
        for k in 0..12 {
            let lambda = 10.0 * (1000.0f64 / 10.0).powf(k as f64 / 11.0);
            let sup_gf = (0..40)
                .map(|j| {
                    radial_green_apply(lambda, &vals, &grid, j as f64 / 39.0).unwrap()
                })
                .fold(0.0, f64::max);
            assert!(sup_gf <= sup_f / lambda * 1.02, "lambda {lambda}: {sup_gf}");
            assert!(sup_gf < prev);
            prev = sup_gf;
        }
    }

    proptest! {
        #[test]
        fn kernel_positive_and_monotone(
            lambda1 in 0.05f64..4.0,
            dlam in 0.01f64..2.0,
            r1 in 0.01f64..4.0,
            dr in 0.01f64..2.0,
        ) {
            for dim in [Dim::One, Dim::Three] {
                let g11 = green_kernel(lambda1, r1, dim).unwrap();
                let g21 = green_kernel(lambda1 + dlam, r1, dim).unwrap();
                let g12 = green_kernel(lambda1, r1 + dr, dim).unwrap();
                prop_assert!(g11 > 0.0);
                prop_assert!(g21 < g11);
                prop_assert!(g12 < g11);
            }
        }
    }
}
