//! Stabilised explicit Runge–Kutta integrators.
//!
//! Every second-order family shares one construction. With an orthogonal
//! polynomial family `Q_j` obeying `Q_j(x) = A_j x Q_{j-1}(x) - B_j Q_{j-2}(x)`,
//! the stage polynomials are `P_j(z) = a_j + b_j Q_j(w0 + w1 z)` with
//!
//! ```text
//! w1  = Q_s'(w0) / Q_s''(w0)
//! b_j = Q_j''(w0) / Q_j'(w0)^2   (j >= 2),   b_0 = b_1 = b_2
//! a_j = 1 - b_j Q_j(w0)
//! ```
//!
//! which forces `P_s(0) = P_s'(0) = P_s''(0) = 1`. Chebyshev `T_j` gives RKC
//! (with `w0 = 1 + eps/s^2`), Legendre gives RKL, Gegenbauer `C_j^(g)` gives
//! RKG. The stages are run through the matching three-term recurrence.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::operator::StencilOperator;

/// Safety factor applied to the stability extent when choosing `s`.
pub const SAFETY: f64 = 0.95;

/// Explicit Euler's real stability extent.
pub const EULER_EXTENT: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum SchemeFamily {
    ExplicitEuler,
    /// Runge–Kutta–Chebyshev with damping shift `eps`.
    Rkc {
        eps: f64,
    },
    /// Runge–Kutta–Legendre.
    Rkl,
    /// Runge–Kutta–Gegenbauer with index `g`.
    Rkg {
        g: f64,
    },
}

impl SchemeFamily {
    pub const RKG_DEFAULT_G: f64 = 2.0;

    pub fn rkc(eps: f64) -> Self {
        SchemeFamily::Rkc { eps }
    }

    pub fn rkg() -> Self {
        SchemeFamily::Rkg { g: Self::RKG_DEFAULT_G }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SchemeFamily::ExplicitEuler => "euler",
            SchemeFamily::Rkc { .. } => "rkc",
            SchemeFamily::Rkl => "rkl",
            SchemeFamily::Rkg { .. } => "rkg",
        }
    }

    /// Damping shift or Gegenbauer index, when the family has one.
    pub fn parameter(&self) -> Option<f64> {
        match *self {
            SchemeFamily::Rkc { eps } => Some(eps),
            SchemeFamily::Rkg { g } => Some(g),
            _ => None,
        }
    }

    /// Short label such as `rkc(eps=10)`.
    pub fn label(&self) -> String {
        match *self {
            SchemeFamily::Rkc { eps } => format!("rkc(eps={eps})"),
            SchemeFamily::Rkg { g } => format!("rkg(g={g})"),
            _ => self.name().to_string(),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            SchemeFamily::Rkc { eps } if !(eps >= 0.0 && eps.is_finite()) => Err(Error::InvalidInput(format!(
                "RKC damping shift must be >= 0, got {eps}"
            ))),
            SchemeFamily::Rkg { g } if !(g > 0.0 && g.is_finite()) => {
                Err(Error::InvalidInput(format!("RKG index must be > 0, got {g}")))
            }
            _ => Ok(()),
        }
    }
}

/// Polynomial family behind a scheme.
#[derive(Debug, Clone, Copy)]
enum Basis {
    Chebyshev,
    Gegenbauer(f64),
}

impl Basis {
    /// `(A_j, B_j)` in `Q_j = A_j x Q_{j-1} - B_j Q_{j-2}`.
    fn recurrence(&self, j: usize) -> (f64, f64) {
        match *self {
            Basis::Chebyshev => {
                if j == 1 {
                    (1.0, 0.0)
                } else {
                    (2.0, 1.0)
                }
            }
            Basis::Gegenbauer(g) => {
                let jf = j as f64;
                if j == 1 {
                    (2.0 * g, 0.0)
                } else {
                    (2.0 * (jf - 1.0 + g) / jf, (jf - 2.0 + 2.0 * g) / jf)
                }
            }
        }
    }

    /// `Q_j`, `Q_j'`, `Q_j''` at `x` for `j = 0..=s`.
    fn values(&self, s: usize, x: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut q = vec![1.0];
        let mut dq = vec![0.0];
        let mut ddq = vec![0.0];
        for j in 1..=s {
            let (aj, bj) = self.recurrence(j);
            let (q2, dq2, ddq2) = if j >= 2 {
                (q[j - 2], dq[j - 2], ddq[j - 2])
            } else {
                (0.0, 0.0, 0.0)
            };
            q.push(aj * x * q[j - 1] - bj * q2);
            dq.push(aj * q[j - 1] + aj * x * dq[j - 1] - bj * dq2);
            ddq.push(2.0 * aj * dq[j - 1] + aj * x * ddq[j - 1] - bj * ddq2);
        }
        (q, dq, ddq)
    }
}

/// Three-term recurrence coefficients for one scheme at stage count `s`.
///
/// Vectors are indexed by stage `j = 0..=s`; entries without meaning for a
/// given `j` (e.g. `mu[0]`, `mu[1]`) are zero.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageCoefficients {
    pub family: SchemeFamily,
    pub s: usize,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    pub mu_tilde: Vec<f64>,
    pub gamma_tilde: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub w0: f64,
    pub w1: f64,
}

pub fn make_coefficients(family: SchemeFamily, s: usize) -> Result<StageCoefficients> {
    family.validate()?;
    if family == SchemeFamily::ExplicitEuler {
        if s != 1 {
            return Err(Error::InvalidInput(format!(
                "explicit Euler has one stage, got s = {s}"
            )));
        }
        return Ok(StageCoefficients {
            family,
            s: 1,
            mu: vec![0.0; 2],
            nu: vec![0.0; 2],
            mu_tilde: vec![0.0, 1.0],
            gamma_tilde: vec![0.0; 2],
            a: vec![0.0; 2],
            b: vec![1.0; 2],
            w0: 1.0,
            w1: 1.0,
        });
    }
    if s < 2 {
        return Err(Error::InvalidInput(format!(
            "{} needs at least 2 stages, got {s}",
            family.name()
        )));
    }
    let sf = s as f64;
    let (basis, w0) = match family {
        SchemeFamily::Rkc { eps } => (Basis::Chebyshev, 1.0 + eps / (sf * sf)),
        SchemeFamily::Rkl => (Basis::Gegenbauer(0.5), 1.0),
        SchemeFamily::Rkg { g } => (Basis::Gegenbauer(g), 1.0),
        SchemeFamily::ExplicitEuler => unreachable!(),
    };
    let (q, dq, ddq) = basis.values(s, w0);
    let w1 = dq[s] / ddq[s];

    let mut b = vec![0.0; s + 1];
    for j in 2..=s {
        b[j] = ddq[j] / (dq[j] * dq[j]);
    }
    b[0] = b[2];
    b[1] = b[2];
    let a: Vec<f64> = (0..=s).map(|j| 1.0 - b[j] * q[j]).collect();

    let mut mu = vec![0.0; s + 1];
    let mut nu = vec![0.0; s + 1];
    let mut mu_tilde = vec![0.0; s + 1];
    let mut gamma_tilde = vec![0.0; s + 1];
    mu_tilde[1] = b[1] * w1 * basis.recurrence(1).0;
    for j in 2..=s {
        let (aj, bj) = basis.recurrence(j);
        mu[j] = aj * w0 * b[j] / b[j - 1];
        nu[j] = -bj * b[j] / b[j - 2];
        mu_tilde[j] = aj * w1 * b[j] / b[j - 1];
        gamma_tilde[j] = -a[j - 1] * mu_tilde[j];
    }
    Ok(StageCoefficients {
        family,
        s,
        mu,
        nu,
        mu_tilde,
        gamma_tilde,
        a,
        b,
        w0,
        w1,
    })
}

/// Right-hand side `F` of `y' = F(y)` on flat state vectors.
pub trait Rhs {
    fn dim(&self) -> usize;
    fn eval(&self, y: &[f64], out: &mut [f64]);
}

impl Rhs for StencilOperator {
    fn dim(&self) -> usize {
        self.len()
    }

    fn eval(&self, y: &[f64], out: &mut [f64]) {
        self.apply_slice(y, out);
    }
}

/// `F(y) = L y + g`.
pub struct AffineRhs<'a, R: Rhs> {
    pub linear: &'a R,
    pub forcing: &'a [f64],
}

impl<R: Rhs> Rhs for AffineRhs<'_, R> {
    fn dim(&self) -> usize {
        self.linear.dim()
    }

    fn eval(&self, y: &[f64], out: &mut [f64]) {
        self.linear.eval(y, out);
        for (o, g) in out.iter_mut().zip(self.forcing) {
            *o += g;
        }
    }
}

/// Scalar test problem `y' = lambda y`.
#[derive(Debug, Clone, Copy)]
pub struct ScalarRhs(pub f64);

impl Rhs for ScalarRhs {
    fn dim(&self) -> usize {
        1
    }

    fn eval(&self, y: &[f64], out: &mut [f64]) {
        out[0] = self.0 * y[0];
    }
}

/// Reusable stage buffers for one state size.
struct Workspace {
    y0: Vec<f64>,
    f0: Vec<f64>,
    prev2: Vec<f64>,
    prev1: Vec<f64>,
    next: Vec<f64>,
    tmp: Vec<f64>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        Self {
            y0: vec![0.0; n],
            f0: vec![0.0; n],
            prev2: vec![0.0; n],
            prev1: vec![0.0; n],
            next: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Advances `state` in place by one macro-step. Returns the 1-based stage
/// index of the first non-finite value on failure.
fn step_in_place<R: Rhs>(
    coeffs: &StageCoefficients,
    rhs: &R,
    state: &mut [f64],
    dt: f64,
    ws: &mut Workspace,
) -> std::result::Result<(), usize> {
    let n = state.len();
    ws.y0.copy_from_slice(state);
    rhs.eval(&ws.y0, &mut ws.f0);
    let mt1 = coeffs.mu_tilde[1] * dt;
    for k in 0..n {
        ws.prev1[k] = ws.y0[k] + mt1 * ws.f0[k];
    }
    if !all_finite(&ws.prev1) {
        return Err(1);
    }
    ws.prev2.copy_from_slice(&ws.y0);
    for j in 2..=coeffs.s {
        rhs.eval(&ws.prev1, &mut ws.tmp);
        let mu = coeffs.mu[j];
        let nu = coeffs.nu[j];
        let keep = 1.0 - mu - nu;
        let mt = coeffs.mu_tilde[j] * dt;
        let gt = coeffs.gamma_tilde[j] * dt;
        for k in 0..n {
            ws.next[k] = mu * ws.prev1[k] + nu * ws.prev2[k] + keep * ws.y0[k] + mt * ws.tmp[k] + gt * ws.f0[k];
        }
        if !all_finite(&ws.next) {
            return Err(j);
        }
        std::mem::swap(&mut ws.prev2, &mut ws.prev1);
        std::mem::swap(&mut ws.prev1, &mut ws.next);
    }
    state.copy_from_slice(&ws.prev1);
    Ok(())
}

/// One macro-step of size `dt` through the stage recurrence.
pub fn super_step<R: Rhs>(coeffs: &StageCoefficients, rhs: &R, state: &Lattice, dt: f64) -> Result<Lattice> {
    if rhs.dim() != state.values().len() {
        return Err(Error::ShapeMismatch {
            expected: (rhs.dim(), 1),
            got: state.shape(),
        });
    }
    let mut out = state.clone();
    let mut ws = Workspace::new(rhs.dim());
    step_in_place(coeffs, rhs, out.values_mut(), dt, &mut ws).map_err(|stage| Error::Explosion { step: 1, stage })?;
    Ok(out)
}

/// `P_s(z)`: the stage recurrence applied to `y' = z y` with unit step.
pub fn stability_poly_eval(coeffs: &StageCoefficients, z: f64) -> f64 {
    let mut y0 = 1.0;
    let f0 = z * y0;
    let mut prev2 = y0;
    let mut prev1 = y0 + coeffs.mu_tilde[1] * f0;
    for j in 2..=coeffs.s {
        let mu = coeffs.mu[j];
        let nu = coeffs.nu[j];
        let next = mu * prev1
            + nu * prev2
            + (1.0 - mu - nu) * y0
            + coeffs.mu_tilde[j] * z * prev1
            + coeffs.gamma_tilde[j] * f0;
        prev2 = prev1;
        prev1 = next;
    }
    y0 = prev1;
    y0
}

/// Length of the largest interval `[-beta, 0]` on which `|P_s| <= 1`.
pub fn stability_extent(coeffs: &StageCoefficients) -> Result<f64> {
    const TOL: f64 = 1e-12;
    let stable = |x: f64| stability_poly_eval(coeffs, -x).abs() <= 1.0 + TOL;
    let guess = if coeffs.family == SchemeFamily::ExplicitEuler {
        EULER_EXTENT
    } else {
        (coeffs.w0 + 1.0) / coeffs.w1
    };
    let step = guess / 1e4;
    if !stable(step) {
        return Err(Error::UnstableAtOrigin);
    }
    let mut good = step;
    let mut bad = None;
    let mut k = 2usize;
    while k <= 200_000 {
        let x = k as f64 * step;
        if !stable(x) {
            bad = Some(x);
            break;
        }
        good = x;
        k += 1;
    }
    let mut hi = bad.ok_or(Error::UnstableAtOrigin)?;
    let mut lo = good;
    while hi - lo > 1e-9 * lo {
        let mid = 0.5 * (lo + hi);
        if stable(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StageSelection {
    pub s: usize,
    /// False only for explicit Euler when `dt * rho` exceeds its safe extent.
    pub feasible: bool,
}

/// Smallest `s` with `SAFETY * beta(s) >= dt * rho`.
pub fn select_stage_count(family: SchemeFamily, dt: f64, rho: f64) -> Result<StageSelection> {
    if !rho.is_finite() || rho < 0.0 {
        return Err(Error::InvalidInput(format!(
            "spectral radius must be finite and >= 0, got {rho}"
        )));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidInput(format!("dt must be > 0, got {dt}")));
    }
    let target = dt * rho;
    if family == SchemeFamily::ExplicitEuler {
        return Ok(StageSelection {
            s: 1,
            feasible: target <= SAFETY * EULER_EXTENT,
        });
    }
    let fits = |s: usize| -> Result<bool> { Ok(SAFETY * stability_extent(&make_coefficients(family, s)?)? >= target) };
    if fits(2)? {
        return Ok(StageSelection { s: 2, feasible: true });
    }
    // bracket, then bisect on s; the extent grows with s
    let mut lo = 2;
    let mut hi = 4;
    while !fits(hi)? {
        lo = hi;
        hi *= 2;
    }
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if fits(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(StageSelection { s: hi, feasible: true })
}

/// Where the integrator gets its spectral-radius bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RhoSource {
    Gershgorin,
    Fixed(f64),
}

/// Run record, serialised as one JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub family: String,
    pub eps_or_g: Option<f64>,
    pub l: usize,
    pub s_per_step: Vec<usize>,
    pub wall_time: f64,
    pub exploded: bool,
    pub explosion_step: Option<usize>,
    pub explosion_stage: Option<usize>,
}

impl RunLog {
    pub fn mean_stages(&self) -> f64 {
        if self.s_per_step.is_empty() {
            return 0.0;
        }
        self.s_per_step.iter().sum::<usize>() as f64 / self.s_per_step.len() as f64
    }
}

/// Integrates `f' = M f` from `initial` over `[0, horizon]` in `l` equal steps.
///
/// A blow-up stops the run and is reported in the log, with the returned
/// field holding the last finite state. Explicit Euler refuses step sizes
/// outside its stability extent.
pub fn run_integrator(
    family: SchemeFamily,
    op: &StencilOperator,
    initial: &Lattice,
    horizon: f64,
    l: usize,
    rho: RhoSource,
) -> Result<(Lattice, RunLog)> {
    run_integrator_rhs(family, op, op, initial, horizon, l, rho)
}

/// As [`run_integrator`] with an arbitrary right-hand side; `op` supplies the
/// spectral bound.
pub fn run_integrator_rhs<R: Rhs>(
    family: SchemeFamily,
    op: &StencilOperator,
    rhs: &R,
    initial: &Lattice,
    horizon: f64,
    l: usize,
    rho: RhoSource,
) -> Result<(Lattice, RunLog)> {
    if l == 0 {
        return Err(Error::InvalidInput("need at least one time step".into()));
    }
    initial.check_shape(op.shape())?;
    let started = Instant::now();
    let dt = horizon / l as f64;
    let radius = match rho {
        RhoSource::Gershgorin => crate::spectral::gershgorin_radius(op),
        RhoSource::Fixed(r) => r,
    };
    let selection = select_stage_count(family, dt, radius)?;
    if !selection.feasible {
        return Err(Error::Infeasible {
            dt_rho: dt * radius,
            limit: SAFETY * EULER_EXTENT,
        });
    }
    let coeffs = make_coefficients(family, selection.s)?;
    let mut state = initial.clone();
    let mut ws = Workspace::new(state.values().len());
    let mut log = RunLog {
        family: family.name().to_string(),
        eps_or_g: family.parameter(),
        l,
        s_per_step: Vec::with_capacity(l),
        wall_time: 0.0,
        exploded: false,
        explosion_step: None,
        explosion_stage: None,
    };
    for step in 1..=l {
        log.s_per_step.push(coeffs.s);
        if let Err(stage) = step_in_place(&coeffs, rhs, state.values_mut(), dt, &mut ws) {
            log.exploded = true;
            log.explosion_step = Some(step);
            log.explosion_stage = Some(stage);
            break;
        }
    }
    log.wall_time = started.elapsed().as_secs_f64();
    Ok((state, log))
}
