//! One-dimensional grids: uniform, hyperbolic-sinh and cubic stretched.
//!
//! All generators return a [`Grid1D`] whose nodes are strictly increasing and
//! whose first and last nodes are exactly the requested bounds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Strictly increasing node coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid1D {
    nodes: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StretchKind {
    Uniform,
    Sinh,
    Cubic,
}

/// How nodes are distributed over `[a, b]`.
///
/// `center` is where nodes concentrate. `lambda` is the sinh scale and
/// `alpha` the linear weight of the cubic map; each is ignored by the
/// kinds that do not use it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StretchSpec {
    pub kind: StretchKind,
    #[serde(default)]
    pub center: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_lambda() -> f64 {
    1.0
}

fn default_alpha() -> f64 {
    0.01
}

impl StretchSpec {
    pub fn uniform() -> Self {
        Self {
            kind: StretchKind::Uniform,
            center: 0.0,
            lambda: 1.0,
            alpha: default_alpha(),
        }
    }

    pub fn sinh(center: f64, lambda: f64) -> Self {
        Self {
            kind: StretchKind::Sinh,
            center,
            lambda,
            alpha: default_alpha(),
        }
    }

    pub fn cubic(center: f64, alpha: f64) -> Self {
        Self {
            kind: StretchKind::Cubic,
            center,
            lambda: 1.0,
            alpha,
        }
    }

    /// Asset grid concentrated at the strike with `lambda = K / 5`.
    pub fn foulon_x(strike: f64) -> Self {
        Self::sinh(strike, strike / 5.0)
    }

    /// Variance grid concentrated at `v_min` with `lambda = v_max / 500`.
    pub fn foulon_v(v_min: f64, v_max: f64) -> Self {
        Self::sinh(v_min, v_max / 500.0)
    }

    /// Milder variance stretching around `v0` with `lambda = 2 v0`.
    pub fn lefloch_v(v0: f64) -> Self {
        Self::sinh(v0, 2.0 * v0)
    }
}

impl Grid1D {
    /// Wraps explicit nodes, checking strict monotonicity.
    pub fn new(nodes: Vec<f64>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::InvalidGrid("grid has no nodes".into()));
        }
        if nodes.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidGrid("grid has non-finite nodes".into()));
        }
        if let Some(i) = nodes.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid(format!(
                "nodes not strictly increasing at index {}",
                i + 1
            )));
        }
        Ok(Self { nodes })
    }

    /// A single-node grid, used for the degenerate variance axis of 1-D models.
    pub fn point(x: f64) -> Self {
        Self { nodes: vec![x] }
    }

    pub fn from_spec(a: f64, b: f64, spec: &StretchSpec, m: usize) -> Result<Self> {
        match spec.kind {
            StretchKind::Uniform => make_uniform(a, b, m),
            StretchKind::Sinh => make_sinh(a, b, spec, m),
            StretchKind::Cubic => make_cubic(a, b, spec, m),
        }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Number of nodes (`m + 1`).
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of intervals `m`.
    pub fn intervals(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn first(&self) -> f64 {
        self.nodes[0]
    }

    pub fn last(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    /// Backward spacing `h_i = x_i - x_{i-1}`, for `1 <= i <= m`.
    pub fn spacing(&self, i: usize) -> f64 {
        self.nodes[i] - self.nodes[i - 1]
    }

    /// All spacings `h_1 .. h_m`.
    pub fn spacings(&self) -> Vec<f64> {
        self.nodes.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Index of the node closest to `x`.
    pub fn nearest_index(&self, x: f64) -> usize {
        let mut best = 0;
        for (i, &xi) in self.nodes.iter().enumerate() {
            if (xi - x).abs() < (self.nodes[best] - x).abs() {
                best = i;
            }
        }
        best
    }
}

fn check_domain(a: f64, b: f64, m: usize) -> Result<()> {
    if !(a.is_finite() && b.is_finite()) || a >= b {
        return Err(Error::InvalidDomain(format!("need a < b, got [{a}, {b}]")));
    }
    if m == 0 {
        return Err(Error::InvalidDomain("need at least one interval".into()));
    }
    Ok(())
}

/// Pins the endpoints and validates the result.
fn finish(mut nodes: Vec<f64>, a: f64, b: f64) -> Result<Grid1D> {
    let last = nodes.len() - 1;
    nodes[0] = a;
    nodes[last] = b;
    Grid1D::new(nodes)
}

pub fn make_uniform(a: f64, b: f64, m: usize) -> Result<Grid1D> {
    check_domain(a, b, m)?;
    let h = (b - a) / m as f64;
    finish((0..=m).map(|k| a + k as f64 * h).collect(), a, b)
}

/// `x(eta) = center + lambda * sinh((c2 - c1) * eta + c1)` with `eta` uniform on `[0, 1]`.
pub fn make_sinh(a: f64, b: f64, spec: &StretchSpec, m: usize) -> Result<Grid1D> {
    check_domain(a, b, m)?;
    if !(spec.lambda > 0.0 && spec.lambda.is_finite()) {
        return Err(Error::InvalidDomain(format!(
            "sinh lambda must be positive, got {}",
            spec.lambda
        )));
    }
    let (center, lambda) = (spec.center, spec.lambda);
    let c1 = ((a - center) / lambda).asinh();
    let c2 = ((b - center) / lambda).asinh();
    let nodes = (0..=m)
        .map(|k| {
            let eta = k as f64 / m as f64;
            center + lambda * ((c2 - c1) * eta + c1).sinh()
        })
        .collect();
    finish(nodes, a, b)
}

fn cubic_map(u: f64, alpha: f64) -> f64 {
    u * u * u + alpha * u
}

/// Cubic stretching `x(u) = center + lambda_c (u^3 + alpha u)`.
///
/// `u` runs uniformly over `[u_a, u_a + 1]`; `u_a` is found by bisection so
/// that both endpoints are hit, and `lambda_c` rescales to `b - a`.
pub fn make_cubic(a: f64, b: f64, spec: &StretchSpec, m: usize) -> Result<Grid1D> {
    check_domain(a, b, m)?;
    let (center, alpha) = (spec.center, spec.alpha);
    if !(center > a && center < b) {
        return Err(Error::InvalidDomain(format!(
            "cubic center {center} must lie strictly inside ({a}, {b})"
        )));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidDomain(format!(
            "cubic alpha must be positive, got {alpha}"
        )));
    }
    // residual < 0 at u_a = -1 and > 0 at u_a = 0
    let residual = |ua: f64| cubic_map(ua + 1.0, alpha) * (center - a) + cubic_map(ua, alpha) * (b - center);
    let (mut lo, mut hi) = (-1.0_f64, 0.0_f64);
    while hi - lo > 1e-14 {
        let mid = 0.5 * (lo + hi);
        if residual(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let ua = 0.5 * (lo + hi);
    let ub = ua + 1.0;
    let scale = (b - a) / (cubic_map(ub, alpha) - cubic_map(ua, alpha));
    let base = a - scale * cubic_map(ua, alpha);
    let nodes = (0..=m)
        .map(|k| {
            let u = ua + k as f64 / m as f64;
            base + scale * cubic_map(u, alpha)
        })
        .collect();
    finish(nodes, a, b)
}
