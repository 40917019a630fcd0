//! Spatial finite-difference operators for the Heston and Black–Scholes PDEs.
//!
//! The semi-discrete system is `f' = M f` in time-to-expiry, with
//! `M` stored as a nine-point stencil per node:
//!
//! ```text
//! (M f)_{i,j} = a f_{i-1,j} + b f_{i,j} + c f_{i+1,j} + d f_{i,j-1} + e f_{i,j+1}
//!             + ω (f_{i+1,j+1} - f_{i+1,j-1} - f_{i-1,j+1} + f_{i-1,j-1})
//! ```
//!
//! Coefficients carry no time-step factor; integrators scale by `dt`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid1D;
use crate::lattice::Lattice;
use crate::sparse::CooMatrix;

/// Heston model and contract parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HestonParams {
    pub v0: f64,
    pub theta: f64,
    pub kappa: f64,
    pub sigma: f64,
    pub rho: f64,
    pub r: f64,
    pub q: f64,
    pub spot: f64,
    pub strike: f64,
    pub expiry: f64,
}

impl Default for HestonParams {
    /// Low vol-of-variance case: `σ = 4%`, `κ = 3`, `ρ = 0.6`.
    fn default() -> Self {
        Self {
            v0: 0.12,
            theta: 0.12,
            kappa: 3.0,
            sigma: 0.04,
            rho: 0.6,
            r: 0.01,
            q: 0.04,
            spot: 100.0,
            strike: 100.0,
            expiry: 1.0,
        }
    }
}

impl HestonParams {
    /// Drift `r - q`.
    pub fn mu(&self) -> f64 {
        self.r - self.q
    }

    /// Range checks, reporting the offending field name.
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        let finite = [
            ("v0", self.v0),
            ("theta", self.theta),
            ("kappa", self.kappa),
            ("sigma", self.sigma),
            ("rho", self.rho),
            ("r", self.r),
            ("q", self.q),
            ("spot", self.spot),
            ("strike", self.strike),
            ("expiry", self.expiry),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err((name, format!("{name} must be finite")));
            }
        }
        if self.kappa < 0.0 {
            return Err(("kappa", format!("kappa must be >= 0, got {}", self.kappa)));
        }
        if self.sigma < 0.0 {
            return Err(("sigma", format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if self.rho.abs() > 1.0 {
            return Err(("rho", format!("|rho| must be <= 1, got {}", self.rho)));
        }
        if self.expiry <= 0.0 {
            return Err(("expiry", format!("expiry must be > 0, got {}", self.expiry)));
        }
        if self.v0 < 0.0 || self.theta < 0.0 {
            return Err(("v0", "variances must be non-negative".into()));
        }
        Ok(())
    }
}

/// Black–Scholes parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BsParams {
    pub sigma: f64,
    pub r: f64,
    pub q: f64,
    pub spot: f64,
    pub expiry: f64,
}

impl Default for BsParams {
    /// Small volatility, large rate: `σ = 2%`, `r = 10%`.
    fn default() -> Self {
        Self {
            sigma: 0.02,
            r: 0.10,
            q: 0.0,
            spot: 100.0,
            expiry: 1.0,
        }
    }
}

impl BsParams {
    pub fn mu(&self) -> f64 {
        self.r - self.q
    }

    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(("sigma", format!("sigma must be > 0, got {}", self.sigma)));
        }
        if !(self.expiry > 0.0 && self.expiry.is_finite()) {
            return Err(("expiry", format!("expiry must be > 0, got {}", self.expiry)));
        }
        if !(self.r.is_finite() && self.q.is_finite() && self.spot.is_finite()) {
            return Err(("r", "rates and spot must be finite".into()));
        }
        Ok(())
    }
}

/// Where and how advection is stabilised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpwindPolicy {
    /// Plain central differences everywhere.
    None,
    /// Exponential fitting in each direction whose cell Péclet number is at least 2.
    PartialFitting,
    /// Exponential fitting restricted to the rows `v = v_min` and `v > 1`.
    FoulonRegionFitting,
    /// First-order one-sided advection wherever the cell Péclet number is at least 2.
    OSullivanOneSided,
}

impl UpwindPolicy {
    pub const ALL: [UpwindPolicy; 4] = [
        UpwindPolicy::None,
        UpwindPolicy::PartialFitting,
        UpwindPolicy::FoulonRegionFitting,
        UpwindPolicy::OSullivanOneSided,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            UpwindPolicy::None => "none",
            UpwindPolicy::PartialFitting => "partial_fitting",
            UpwindPolicy::FoulonRegionFitting => "foulon_region_fitting",
            UpwindPolicy::OSullivanOneSided => "o_sullivan_one_sided",
        }
    }
}

/// Péclet threshold beyond which central differencing loses monotonicity.
pub const PECLET_LIMIT: f64 = 2.0;

/// Variance level above which the Foulon region applies fitting.
pub const FOULON_HIGH_VARIANCE: f64 = 1.0;

/// Exponential-fitting factor `(P/2) / tanh(P/2)`, equal to 1 at `P = 0`.
pub fn fitting_factor(p: f64) -> f64 {
    let half = 0.5 * p;
    if half.abs() < 1e-6 {
        1.0 + half * half / 3.0
    } else if half.abs() > 20.0 {
        // tanh saturates to ±1 in double precision
        half.abs()
    } else {
        half / half.tanh()
    }
}

/// Cell Péclet number `2 h A / S` of a direction with advection `A` and
/// second-derivative coefficient `S / 2`. Zero advection gives 0; zero
/// diffusion gives a signed infinity.
fn cell_peclet(adv: f64, diff: f64, spacing: f64) -> f64 {
    if adv == 0.0 {
        0.0
    } else if diff == 0.0 {
        adv.signum() * f64::INFINITY
    } else {
        2.0 * spacing * adv / diff
    }
}

/// Spacing that enters the Péclet number: the forward cell for positive
/// advection, the backward cell otherwise. This is the cell whose
/// off-diagonal coefficient turns negative once `|P| > 2`.
fn peclet_spacing(adv: f64, back: f64, fwd: f64) -> f64 {
    if adv > 0.0 {
        fwd
    } else {
        back
    }
}

/// Fitted diffusion `S β(P)`, continuous at `S = 0` where it tends to `h |A|`.
fn fitted_diffusion(adv: f64, diff: f64, spacing: f64) -> f64 {
    if diff == 0.0 {
        spacing * adv.abs()
    } else {
        diff * fitting_factor(cell_peclet(adv, diff, spacing))
    }
}

/// The nine coefficients at one node.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NodeStencil {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub omega: f64,
}

impl NodeStencil {
    /// `a + b + c + d + e`; the cross terms cancel pairwise.
    pub fn row_sum(&self) -> f64 {
        self.a + self.b + self.c + self.d + self.e
    }
}

/// How one direction of one node was discretised.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Treatment {
    Central,
    Fitted,
    OneSided,
    Boundary,
}

/// Assembled spatial operator.
#[derive(Debug, Clone)]
pub struct StencilOperator {
    nx: usize,
    nv: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    d: Vec<f64>,
    e: Vec<f64>,
    omega: Vec<f64>,
    treat_x: Vec<Treatment>,
    treat_v: Vec<Treatment>,
    gx: Grid1D,
    gv: Grid1D,
    rate: f64,
    policy: UpwindPolicy,
}

/// PDE coefficients shared by both models.
#[derive(Debug, Clone, Copy)]
struct Pde {
    mu: f64,
    r: f64,
    kappa: f64,
    theta: f64,
    sigma: f64,
    rho: f64,
}

/// Signed Péclet numbers `(P^x, P^v)` at interior node `(i, j)`, with unit fitting factors.
pub fn peclet(params: &HestonParams, gx: &Grid1D, gv: &Grid1D, i: usize, j: usize) -> Result<(f64, f64)> {
    let m = gx.intervals();
    let n = gv.intervals();
    if i == 0 || i >= m || j == 0 || j >= n {
        return Err(Error::InvalidInput(format!(
            "peclet needs an interior node, got ({i}, {j}) on {m}x{n}"
        )));
    }
    let (x, v) = (gx.nodes()[i], gv.nodes()[j]);
    let adv_x = params.mu() * x;
    let adv_v = params.kappa * (params.theta - v);
    let hx = peclet_spacing(adv_x, gx.spacing(i), gx.spacing(i + 1));
    let hv = peclet_spacing(adv_v, gv.spacing(j), gv.spacing(j + 1));
    Ok((
        cell_peclet(adv_x, v * x * x, hx),
        cell_peclet(adv_v, params.sigma * params.sigma * v, hv),
    ))
}

/// Assembles the Heston operator on `gx × gv`.
///
/// A single-node variance grid yields the 1-D operator at that fixed
/// variance.
pub fn assemble_heston(
    params: &HestonParams,
    gx: &Grid1D,
    gv: &Grid1D,
    policy: UpwindPolicy,
) -> Result<StencilOperator> {
    params
        .validate()
        .map_err(|(field, msg)| Error::InvalidInput(format!("{field}: {msg}")))?;
    let pde = Pde {
        mu: params.mu(),
        r: params.r,
        kappa: params.kappa,
        theta: params.theta,
        sigma: params.sigma,
        rho: params.rho,
    };
    assemble(pde, gx, gv, policy)
}

/// Assembles the Black–Scholes operator on `gx` (a one-row lattice).
pub fn assemble_bs(params: &BsParams, gx: &Grid1D, policy: UpwindPolicy) -> Result<StencilOperator> {
    params
        .validate()
        .map_err(|(field, msg)| Error::InvalidInput(format!("{field}: {msg}")))?;
    let pde = Pde {
        mu: params.mu(),
        r: params.r,
        kappa: 0.0,
        theta: 0.0,
        sigma: 0.0,
        rho: 0.0,
    };
    let gv = Grid1D::point(params.sigma * params.sigma);
    assemble(pde, gx, &gv, policy)
}

/// Central, fitted or one-sided three-point weights `(lower, diag, upper)`
/// for `adv ∂ + (diff/2) ∂²` on spacings `back`, `fwd`.
fn direction_weights(adv: f64, diff: f64, back: f64, fwd: f64, treat: Treatment) -> (f64, f64, f64) {
    let sum = back + fwd;
    match treat {
        Treatment::OneSided => {
            let lo = diff / (back * sum);
            let up = diff / (fwd * sum);
            let mut diag = -diff / (back * fwd);
            let (mut lo, mut up) = (lo, up);
            if adv > 0.0 {
                up += adv / fwd;
                diag -= adv / fwd;
            } else {
                lo -= adv / back;
                diag += adv / back;
            }
            (lo, diag, up)
        }
        _ => {
            let eff = if treat == Treatment::Fitted {
                fitted_diffusion(adv, diff, peclet_spacing(adv, back, fwd))
            } else {
                diff
            };
            let lo = -(adv * fwd - eff) / (back * sum);
            let up = (adv * back + eff) / (fwd * sum);
            let diag = -(adv * (back - fwd) + eff) / (back * fwd);
            (lo, diag, up)
        }
    }
}

fn choose_treatment(policy: UpwindPolicy, peclet: f64, in_foulon_region: bool) -> Treatment {
    let dominated = peclet.abs() >= PECLET_LIMIT;
    match policy {
        UpwindPolicy::None => Treatment::Central,
        UpwindPolicy::PartialFitting if dominated => Treatment::Fitted,
        UpwindPolicy::FoulonRegionFitting if in_foulon_region => Treatment::Fitted,
        UpwindPolicy::OSullivanOneSided if dominated => Treatment::OneSided,
        _ => Treatment::Central,
    }
}

fn assemble(pde: Pde, gx: &Grid1D, gv: &Grid1D, policy: UpwindPolicy) -> Result<StencilOperator> {
    let nx = gx.len();
    let nv = gv.len();
    if nx < 3 {
        return Err(Error::InvalidGrid(format!("need at least 3 x-nodes, got {nx}")));
    }
    let xs = gx.nodes();
    let vs = gv.nodes();
    if vs[0] < 0.0 {
        return Err(Error::InvalidGrid(format!(
            "variance grid starts below zero at {}",
            vs[0]
        )));
    }
    if nv > 1 {
        if let Some(j) = (1..nv - 1).find(|&j| vs[j] == 0.0) {
            return Err(Error::InvalidGrid(format!(
                "interior variance node {j} sits at v = 0; put v = 0 on the boundary"
            )));
        }
    }
    let size = nx * nv;
    let mut op = StencilOperator {
        nx,
        nv,
        a: vec![0.0; size],
        b: vec![0.0; size],
        c: vec![0.0; size],
        d: vec![0.0; size],
        e: vec![0.0; size],
        omega: vec![0.0; size],
        treat_x: vec![Treatment::Boundary; size],
        treat_v: vec![Treatment::Boundary; size],
        gx: gx.clone(),
        gv: gv.clone(),
        rate: pde.r,
        policy,
    };
    let m = nx - 1;
    let n = nv - 1;
    let v_min = vs[0];

    for i in 0..nx {
        let x = xs[i];
        let adv_x = pde.mu * x;
        for j in 0..nv {
            let k = i * nv + j;
            let v = vs[j];

            // x boundaries: pure advection and discount
            if i == 0 {
                let h = gx.spacing(1);
                op.b[k] = -(pde.r + adv_x / h);
                op.c[k] = adv_x / h;
                continue;
            }
            if i == m {
                let h = gx.spacing(m);
                op.a[k] = -adv_x / h;
                op.b[k] = -(pde.r - adv_x / h);
                continue;
            }

            let (hb, hf) = (gx.spacing(i), gx.spacing(i + 1));
            let diff_x = v * x * x;
            let in_region = v == v_min || v > FOULON_HIGH_VARIANCE;
            let px = cell_peclet(adv_x, diff_x, peclet_spacing(adv_x, hb, hf));
            let tx = choose_treatment(policy, px, in_region);
            let (lo, diag, up) = direction_weights(adv_x, diff_x, hb, hf, tx);
            op.a[k] = lo;
            op.c[k] = up;
            op.b[k] = diag - pde.r;
            op.treat_x[k] = tx;

            if nv == 1 {
                continue;
            }
            let adv_v = pde.kappa * (pde.theta - v);
            if j == 0 {
                let w = gv.spacing(1);
                op.e[k] = adv_v / w;
                op.b[k] -= adv_v / w;
                continue;
            }
            if j == n {
                let w = gv.spacing(n);
                op.d[k] = -adv_v / w;
                op.b[k] += adv_v / w;
                continue;
            }

            let (wb, wf) = (gv.spacing(j), gv.spacing(j + 1));
            let diff_v = pde.sigma * pde.sigma * v;
            let pv = cell_peclet(adv_v, diff_v, peclet_spacing(adv_v, wb, wf));
            let tv = choose_treatment(policy, pv, in_region);
            let (lo, diag, up) = direction_weights(adv_v, diff_v, wb, wf, tv);
            op.d[k] = lo;
            op.e[k] = up;
            op.b[k] += diag;
            op.treat_v[k] = tv;
            op.omega[k] = pde.rho * pde.sigma * x * v / ((hb + hf) * (wb + wf));
        }
    }
    Ok(op)
}

impl StencilOperator {
    /// Lattice shape `(m + 1, n + 1)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.nx, self.nv)
    }

    pub fn len(&self) -> usize {
        self.nx * self.nv
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn grid_x(&self) -> &Grid1D {
        &self.gx
    }

    pub fn grid_v(&self) -> &Grid1D {
        &self.gv
    }

    /// Discount rate `r`.
    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn policy(&self) -> UpwindPolicy {
        self.policy
    }

    pub fn stencil(&self, i: usize, j: usize) -> NodeStencil {
        let k = i * self.nv + j;
        NodeStencil {
            a: self.a[k],
            b: self.b[k],
            c: self.c[k],
            d: self.d[k],
            e: self.e[k],
            omega: self.omega[k],
        }
    }

    /// Discretisation used along `x` and `v` at a node.
    pub fn treatment(&self, i: usize, j: usize) -> (Treatment, Treatment) {
        let k = i * self.nv + j;
        (self.treat_x[k], self.treat_v[k])
    }

    /// Number of nodes where either direction is fitted or one-sided.
    pub fn stabilised_nodes(&self) -> usize {
        self.treat_x
            .iter()
            .zip(&self.treat_v)
            .filter(|(tx, tv)| {
                matches!(tx, Treatment::Fitted | Treatment::OneSided)
                    || matches!(tv, Treatment::Fitted | Treatment::OneSided)
            })
            .count()
    }

    /// `out = M f` on raw row-major slices.
    pub fn apply_slice(&self, f: &[f64], out: &mut [f64]) {
        let (nx, nv) = (self.nx, self.nv);
        debug_assert_eq!(f.len(), nx * nv);
        debug_assert_eq!(out.len(), nx * nv);
        for i in 0..nx {
            let interior_x = i > 0 && i + 1 < nx;
            for j in 0..nv {
                let k = i * nv + j;
                let mut acc = self.b[k] * f[k];
                if i > 0 {
                    acc += self.a[k] * f[k - nv];
                }
                if i + 1 < nx {
                    acc += self.c[k] * f[k + nv];
                }
                if j > 0 {
                    acc += self.d[k] * f[k - 1];
                }
                if j + 1 < nv {
                    acc += self.e[k] * f[k + 1];
                }
                let w = self.omega[k];
                if w != 0.0 && interior_x && j > 0 && j + 1 < nv {
                    acc += w * (f[k + nv + 1] - f[k + nv - 1] - f[k - nv + 1] + f[k - nv - 1]);
                }
                out[k] = acc;
            }
        }
    }

    pub fn apply(&self, field: &Lattice) -> Result<Lattice> {
        field.check_shape(self.shape())?;
        let mut out = Lattice::zeros(self.nx, self.nv);
        self.apply_slice(field.values(), out.values_mut());
        Ok(out)
    }

    /// Coordinate form of `M` under the lattice's row-major ordering.
    pub fn to_sparse(&self) -> CooMatrix {
        let (nx, nv) = (self.nx, self.nv);
        let mut coo = CooMatrix::new(nx * nv);
        for i in 0..nx {
            for j in 0..nv {
                let k = i * nv + j;
                let mut put = |col: usize, val: f64| {
                    if val != 0.0 {
                        coo.push(k, col, val);
                    }
                };
                if i > 0 {
                    put(k - nv, self.a[k]);
                }
                put(k, self.b[k]);
                if i + 1 < nx {
                    put(k + nv, self.c[k]);
                }
                if j > 0 {
                    put(k - 1, self.d[k]);
                }
                if j + 1 < nv {
                    put(k + 1, self.e[k]);
                }
                let w = self.omega[k];
                if w != 0.0 && i > 0 && i + 1 < nx && j > 0 && j + 1 < nv {
                    put(k + nv + 1, w);
                    put(k + nv - 1, -w);
                    put(k - nv + 1, -w);
                    put(k - nv - 1, w);
                }
            }
        }
        coo
    }

    /// Row-wise `|diag| + Σ|off-diag|`.
    pub fn absolute_row_sums(&self) -> Vec<f64> {
        (0..self.len())
            .map(|k| {
                self.a[k].abs()
                    + self.b[k].abs()
                    + self.c[k].abs()
                    + self.d[k].abs()
                    + self.e[k].abs()
                    + 4.0 * self.omega[k].abs()
            })
            .collect()
    }
}
