//! Composite Gauss-Legendre quadrature grids over the support of a branching
//! field. Panel boundaries align with the shape's breakpoints so that ramp
//! and table kinks never sit inside a panel.

use crate::error::{Error, Result};
use crate::potential::{Dim, Potential};

/// Gauss-Legendre nodes per panel.
pub const PANEL_ORDER: usize = 8;

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Newton iteration from the Chebyshev-based initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// One quadrature panel: `PANEL_ORDER` nodes starting at `first`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Panel {
    pub lo: f64,
    pub hi: f64,
    pub first: usize,
}

/// Quadrature nodes and weights covering (at least) the support of `v`.
///
/// In dim 1 the nodes are coordinates on the support interval; in dim 3 they
/// are radii in `(0, R]` and `weights` carry the angular factor `4 pi r^2`
/// so that `integral f dV ~= sum_i weights[i] f(nodes[i])`. `line_weights`
/// are the plain 1D panel weights.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadGrid {
    pub dim: Dim,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub line_weights: Vec<f64>,
    pub panels: Vec<Panel>,
    pub lo: f64,
    pub hi: f64,
}

impl QuadGrid {
    /// Grid over the support of `v` with roughly `n_nodes` nodes.
    pub fn support(p: &Potential, n_nodes: usize) -> Result<QuadGrid> {
        if n_nodes < 16 {
            return Err(Error::validation(format!(
                "n_nodes must be at least 16, got {n_nodes}"
            )));
        }
        let (lo, hi) = p.support_interval();
        Self::build(p.dim(), lo, hi, &p.breakpoints(), n_nodes)
    }

    /// Grid over the support of `v` extended out to `hi_ext`, keeping the
    /// support panel density inside and panels of width `<= ext_panel_width`
    /// outside. Used when integrating sources that reach beyond the support.
    pub fn extended(p: &Potential, n_nodes: usize, hi_ext: f64, ext_panel_width: f64) -> Result<QuadGrid> {
        let (slo, shi) = p.support_interval();
        if hi_ext <= shi {
            return Self::support(p, n_nodes);
        }
        let mut bks = p.breakpoints();
        bks.push(shi);
        let mut lo = slo;
        let hi = hi_ext;
        if p.dim() == Dim::One {
            lo = -hi_ext;
            bks.push(slo);
        }
        // extension panel boundaries
        let w = ext_panel_width.max(1e-8);
        let mut x = shi + w;
        while x < hi_ext {
            bks.push(x);
            x += w;
        }
        if p.dim() == Dim::One {
            let mut x = slo - w;
            while x > -hi_ext {
                bks.push(x);
                x -= w;
            }
        }
        let inner_frac = (shi - slo) / (hi - lo);
        let n_target = ((n_nodes as f64 / inner_frac).ceil() as usize).min(n_nodes * 8);
        Self::build(p.dim(), lo, hi, &bks, n_target)
    }

    fn build(dim: Dim, lo: f64, hi: f64, breakpoints: &[f64], n_nodes: usize) -> Result<QuadGrid> {
        let mut bks: Vec<f64> = vec![lo, hi];
        bks.extend(breakpoints.iter().copied().filter(|&b| b > lo && b < hi));
        bks.sort_by(|a, b| a.partial_cmp(b).unwrap());
        bks.dedup_by(|a, b| (*a - *b).abs() < 1e-14 * (hi - lo));

        let n_panels_target = n_nodes.div_ceil(PANEL_ORDER).max(bks.len() - 1);
        let total: f64 = hi - lo;
        // Distribute panels across breakpoint intervals proportionally to width.
        let mut counts: Vec<usize> = bks
            .windows(2)
            .map(|w| {
                (((w[1] - w[0]) / total) * n_panels_target as f64).round().max(1.0) as usize
            })
            .collect();
        let mut assigned: usize = counts.iter().sum();
        while assigned < n_panels_target {
            // widen the interval with the widest per-panel width
            let (j, _) = counts
                .iter()
                .enumerate()
                .map(|(j, &c)| (j, (bks[j + 1] - bks[j]) / c as f64))
                .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                .unwrap();
            counts[j] += 1;
            assigned += 1;
        }

        let (gx, gw) = gauss_legendre(PANEL_ORDER);
        let mut nodes = Vec::with_capacity(assigned * PANEL_ORDER);
        let mut line_weights = Vec::with_capacity(assigned * PANEL_ORDER);
        let mut panels = Vec::with_capacity(assigned);
        for (j, &c) in counts.iter().enumerate() {
            let (a, b) = (bks[j], bks[j + 1]);
            for k in 0..c {
                let p_lo = a + (b - a) * k as f64 / c as f64;
                let p_hi = a + (b - a) * (k + 1) as f64 / c as f64;
                let mid = 0.5 * (p_lo + p_hi);
                let half = 0.5 * (p_hi - p_lo);
                panels.push(Panel { lo: p_lo, hi: p_hi, first: nodes.len() });
                for q in 0..PANEL_ORDER {
                    nodes.push(mid + half * gx[q]);
                    line_weights.push(half * gw[q]);
                }
            }
        }
        let weights = match dim {
            Dim::One => line_weights.clone(),
            Dim::Three => nodes
                .iter()
                .zip(&line_weights)
                .map(|(&r, &w)| 4.0 * std::f64::consts::PI * r * r * w)
                .collect(),
        };
        Ok(QuadGrid { dim, nodes, weights, line_weights, panels, lo, hi })
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Sum of weights; approximates the support volume (dim 3) or length (dim 1).
    pub fn sum_weights(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Integrates grid samples against the volume measure.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }

    /// Integrates grid samples against the 1D line measure.
    pub fn integrate_line(&self, values: &[f64]) -> f64 {
        self.line_weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }

    /// Index of the panel whose open interior contains `x`, if any.
    pub fn panel_containing(&self, x: f64) -> Option<usize> {
        if x <= self.lo || x >= self.hi {
            return None;
        }
        self.panels
            .iter()
            .position(|p| p.lo < x && x < p.hi)
    }

    /// Node slice of a panel.
    pub fn panel_nodes(&self, k: usize) -> &[f64] {
        let p = &self.panels[k];
        &self.nodes[p.first..p.first + PANEL_ORDER]
    }

    /// Samples a function at every node.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.nodes.iter().map(|&x| f(x)).collect()
    }
}

/// Values of the Lagrange basis polynomials on `xs` at point `t`.
pub fn lagrange_basis_at(xs: &[f64], t: f64) -> Vec<f64> {
    let n = xs.len();
    let mut out = vec![1.0; n];
    for j in 0..n {
        for m in 0..n {
            if m != j {
                out[j] *= (t - xs[m]) / (xs[j] - xs[m]);
            }
        }
    }
    out
}
