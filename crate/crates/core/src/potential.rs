//! Branching fields: continuous, nonnegative, compactly supported rate shapes.
//!
//! Three shapes are supported; every 3D shape is radial so that the Green
//! operator reduces exactly to a one-dimensional kernel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spatial dimension of the model. Only 1 and 3 are supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dim {
    One,
    Three,
}

impl Dim {
    pub fn as_usize(self) -> usize {
        match self {
            Dim::One => 1,
            Dim::Three => 3,
        }
    }

    pub fn from_usize(d: usize) -> Result<Self> {
        match d {
            1 => Ok(Dim::One),
            3 => Ok(Dim::Three),
            other => Err(Error::validation(format!(
                "dim must be 1 or 3, got {other}"
            ))),
        }
    }
}

/// Shape of the branching field.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    /// `v(x) = h * exp(1 - 1/(1 - (rho/a)^2))` for `rho < a`, zero outside,
    /// where `rho = |x - center|`. Attains its sup `h` at the center.
    Bump { center: f64, radius: f64, height: f64 },
    /// Piecewise-linear table on sorted abscissae, clamped to zero outside.
    /// In 1D the abscissae are coordinates; in 3D they are radii.
    Table { xs: Vec<f64>, vs: Vec<f64> },
    /// Plateau of height `h` out to `a - eps`, cubic smoothstep ramp down to
    /// zero at `a`. Approaches the sharp indicator of the ball as `eps -> 0`.
    IndicatorSmoothed { radius: f64, height: f64, smoothing: f64 },
}

/// JSON wire form of a shape spec, e.g.
/// `{"dim":3,"shape":"bump","radius":1.0,"height":1.0}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PotentialSpec {
    pub dim: usize,
    #[serde(flatten)]
    pub shape: ShapeSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum ShapeSpec {
    Bump {
        radius: f64,
        height: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        center: Option<f64>,
    },
    Table {
        xs: Vec<f64>,
        vs: Vec<f64>,
    },
    IndicatorSmoothed {
        radius: f64,
        height: f64,
        smoothing: f64,
    },
}

/// A validated branching field `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Potential {
    dim: Dim,
    shape: Shape,
    v_max: f64,
    support_radius: f64,
    /// Support as an interval of the 1D coordinate (dim 1) or of the radius
    /// (dim 3, where `lo == 0`).
    support_lo: f64,
    support_hi: f64,
}

fn smoothstep(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

impl Potential {
    /// Validates and builds a branching field from a shape description.
    pub fn new(dim: Dim, shape: Shape) -> Result<Self> {
        match &shape {
            Shape::Bump { center, radius, height } => {
                if *radius <= 0.0 || *height <= 0.0 {
                    return Err(Error::validation("bump requires radius > 0 and height > 0"));
                }
                if dim == Dim::Three && *center != 0.0 {
                    return Err(Error::validation("3D shapes are radial: bump center must be 0"));
                }
                if !center.is_finite() || !radius.is_finite() || !height.is_finite() {
                    return Err(Error::validation("bump parameters must be finite"));
                }
                let (lo, hi) = match dim {
                    Dim::One => (center - radius, center + radius),
                    Dim::Three => (0.0, *radius),
                };
                Ok(Potential {
                    dim,
                    v_max: *height,
                    support_radius: match dim {
                        Dim::One => center.abs() + radius,
                        Dim::Three => *radius,
                    },
                    support_lo: lo,
                    support_hi: hi,
                    shape,
                })
            }
            Shape::IndicatorSmoothed { radius, height, smoothing } => {
                if *radius <= 0.0 || *height <= 0.0 {
                    return Err(Error::validation(
                        "indicator-smoothed requires radius > 0 and height > 0",
                    ));
                }
                if *smoothing <= 0.0 || *smoothing > *radius {
                    return Err(Error::validation(
                        "indicator-smoothed requires 0 < smoothing <= radius",
                    ));
                }
                let (lo, hi) = match dim {
                    Dim::One => (-radius, *radius),
                    Dim::Three => (0.0, *radius),
                };
                Ok(Potential {
                    dim,
                    v_max: *height,
                    support_radius: *radius,
                    support_lo: lo,
                    support_hi: hi,
                    shape,
                })
            }
            Shape::Table { xs, vs } => {
                if xs.len() != vs.len() {
                    return Err(Error::validation("table xs and vs must have equal length"));
                }
                if xs.len() < 2 {
                    return Err(Error::validation("table needs at least two knots"));
                }
                if xs.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::validation("table abscissae must be strictly increasing"));
                }
                if xs.iter().chain(vs.iter()).any(|x| !x.is_finite()) {
                    return Err(Error::validation("table entries must be finite"));
                }
                if vs.iter().any(|&v| v < 0.0) {
                    return Err(Error::validation("table values must be nonnegative"));
                }
                if vs.iter().all(|&v| v == 0.0) {
                    return Err(Error::validation("table has empty support (all values zero)"));
                }
                match dim {
                    Dim::One => {
                        if *vs.first().unwrap() != 0.0 || *vs.last().unwrap() != 0.0 {
                            return Err(Error::validation(
                                "continuity at the clamp boundary requires zero endpoint values",
                            ));
                        }
                    }
                    Dim::Three => {
                        if xs[0] < 0.0 {
                            return Err(Error::validation("3D table abscissae are radii, need xs >= 0"));
                        }
                        if *vs.last().unwrap() != 0.0 {
                            return Err(Error::validation(
                                "continuity at the clamp boundary requires a zero outer value",
                            ));
                        }
                        if xs[0] > 0.0 && vs[0] != 0.0 {
                            return Err(Error::validation(
                                "3D table with xs[0] > 0 requires a zero inner value",
                            ));
                        }
                    }
                }
                let v_max = vs.iter().cloned().fold(0.0, f64::max);
                // Trim zero runs at the ends: v vanishes identically outside
                // the knots adjacent to the nonzero block.
                let j0 = vs.iter().position(|&v| v > 0.0).unwrap();
                let j1 = vs.iter().rposition(|&v| v > 0.0).unwrap();
                let lo = if j0 == 0 { xs[0] } else { xs[j0 - 1] };
                let hi = if j1 + 1 >= xs.len() { *xs.last().unwrap() } else { xs[j1 + 1] };
                let (support_lo, support_hi, support_radius) = match dim {
                    Dim::One => (lo, hi, lo.abs().max(hi.abs())),
                    Dim::Three => (0.0, hi, hi),
                };
                Ok(Potential {
                    dim,
                    v_max,
                    support_radius,
                    support_lo,
                    support_hi,
                    shape,
                })
            }
        }
    }

    /// Builds from the JSON wire form.
    pub fn from_spec(spec: &PotentialSpec) -> Result<Self> {
        let dim = Dim::from_usize(spec.dim)?;
        let shape = match &spec.shape {
            ShapeSpec::Bump { radius, height, center } => Shape::Bump {
                center: center.unwrap_or(0.0),
                radius: *radius,
                height: *height,
            },
            ShapeSpec::Table { xs, vs } => Shape::Table { xs: xs.clone(), vs: vs.clone() },
            ShapeSpec::IndicatorSmoothed { radius, height, smoothing } => {
                Shape::IndicatorSmoothed {
                    radius: *radius,
                    height: *height,
                    smoothing: *smoothing,
                }
            }
        };
        Potential::new(dim, shape)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let spec: PotentialSpec = serde_json::from_str(json)
            .map_err(|e| Error::validation(format!("bad potential spec: {e}")))?;
        Potential::from_spec(&spec)
    }

    pub fn to_spec(&self) -> PotentialSpec {
        let shape = match &self.shape {
            Shape::Bump { center, radius, height } => ShapeSpec::Bump {
                radius: *radius,
                height: *height,
                center: if *center == 0.0 { None } else { Some(*center) },
            },
            Shape::Table { xs, vs } => ShapeSpec::Table { xs: xs.clone(), vs: vs.clone() },
            Shape::IndicatorSmoothed { radius, height, smoothing } => {
                ShapeSpec::IndicatorSmoothed {
                    radius: *radius,
                    height: *height,
                    smoothing: *smoothing,
                }
            }
        };
        PotentialSpec { dim: self.dim.as_usize(), shape }
    }

    pub fn dim(&self) -> Dim {
        self.dim
    }

    /// Exact supremum of `v`.
    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    /// Smallest `r` such that `v` vanishes identically outside `|x| <= r`.
    pub fn support_radius(&self) -> f64 {
        self.support_radius
    }

    /// Support as an interval of the grid coordinate: the 1D coordinate in
    /// dim 1, the radius in dim 3.
    pub fn support_interval(&self) -> (f64, f64) {
        (self.support_lo, self.support_hi)
    }

    /// Interior points where `v` is not smooth; quadrature panels align here.
    pub fn breakpoints(&self) -> Vec<f64> {
        let (lo, hi) = self.support_interval();
        let inside = |b: f64| b > lo && b < hi;
        match &self.shape {
            Shape::Bump { .. } => vec![],
            Shape::IndicatorSmoothed { radius, smoothing, .. } => {
                let mut b = vec![];
                match self.dim {
                    Dim::One => {
                        for c in [-(radius - smoothing), radius - smoothing] {
                            if inside(c) {
                                b.push(c);
                            }
                        }
                    }
                    Dim::Three => {
                        let c = radius - smoothing;
                        if inside(c) {
                            b.push(c);
                        }
                    }
                }
                b
            }
            Shape::Table { xs, .. } => xs.iter().cloned().filter(|&x| inside(x)).collect(),
        }
    }

    /// Evaluates `v` at a radius (dim 3) or signed coordinate (dim 1).
    pub fn eval_radial(&self, x: f64) -> f64 {
        match &self.shape {
            Shape::Bump { center, radius, height } => {
                let rho = match self.dim {
                    Dim::One => (x - center).abs(),
                    Dim::Three => x.abs(),
                };
                if rho >= *radius {
                    0.0
                } else {
                    let u = (rho / radius) * (rho / radius);
                    height * (1.0 - 1.0 / (1.0 - u)).exp()
                }
            }
            Shape::IndicatorSmoothed { radius, height, smoothing } => {
                let rho = x.abs();
                if rho >= *radius {
                    0.0
                } else {
                    height * smoothstep((radius - rho) / smoothing)
                }
            }
            Shape::Table { xs, vs } => {
                let q = match self.dim {
                    Dim::One => x,
                    Dim::Three => x.abs(),
                };
                if q < xs[0] || q > *xs.last().unwrap() {
                    return 0.0;
                }
                let j = match xs.binary_search_by(|a| a.partial_cmp(&q).unwrap()) {
                    Ok(j) => return vs[j],
                    Err(j) => j,
                };
                // xs[j-1] < q < xs[j]
                let t = (q - xs[j - 1]) / (xs[j] - xs[j - 1]);
                vs[j - 1] + t * (vs[j] - vs[j - 1])
            }
        }
    }

    /// Evaluates `v` at a point with the dimension's coordinate layout.
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self.dim {
            Dim::One => self.eval_radial(x[0]),
            Dim::Three => {
                let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
                self.eval_radial(r)
            }
        }
    }
}
