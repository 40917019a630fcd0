//! Payoffs, error and oscillation metrics, and the study drivers.

mod bs;
mod heston;

use std::time::Instant;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::grid::Grid1D;
use crate::lattice::Lattice;
use crate::operator::{BsParams, StencilOperator, UpwindPolicy};
use crate::reference::{crank_nicolson_run, trbdf2_run};
use crate::sts::{run_integrator, RhoSource, SchemeFamily};

pub use bs::{
    run_bs_study, vanilla_bs_check, BsGrid, BsScenario, BsScenarioResult, BsStudyConfig, VanillaCheck, BS_OSC_WINDOW,
};
pub use heston::{
    reference_self_check, run_delta_study, run_euler_study, run_restabilization, run_time_convergence, spectrum_for,
    ConvergenceConfig, DeltaStudy, EulerOutcome, HestonSetup,
};

/// Relative size, against the slice range, below which excess variation is
/// treated as rounding noise.
pub const OSC_NOISE_FLOOR: f64 = 1e-9;

/// Terminal payoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Payoff {
    Call {
        strike: f64,
    },
    Put {
        strike: f64,
    },
    /// Pays 1 when `low <= x <= high`.
    DigitalRange {
        low: f64,
        high: f64,
    },
}

impl Payoff {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Payoff::DigitalRange { low, high } if !(low < high) => Err(Error::InvalidInput(format!(
                "digital range needs low < high, got [{low}, {high}]"
            ))),
            _ => Ok(()),
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        match *self {
            Payoff::Call { strike } => (x - strike).max(0.0),
            Payoff::Put { strike } => (strike - x).max(0.0),
            Payoff::DigitalRange { low, high } => {
                if (low..=high).contains(&x) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Payoff on the `x` grid, broadcast over `nv` variance nodes.
pub fn payoff_eval(p: &Payoff, gx: &Grid1D, nv: usize) -> Lattice {
    Lattice::from_fn(gx.len(), nv, |i, _| p.value(gx.nodes()[i]))
}

/// Rectangle on which errors are measured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Roi {
    pub x_min: f64,
    pub x_max: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl Roi {
    /// `x` in `[K/2, 3K/2]`, `v` in `[0, 1]`.
    pub fn around_strike(strike: f64) -> Self {
        Self {
            x_min: 0.5 * strike,
            x_max: 1.5 * strike,
            v_min: 0.0,
            v_max: 1.0,
        }
    }

    /// Flat lattice indices of the nodes inside the rectangle.
    pub fn region(&self, gx: &Grid1D, gv: &Grid1D) -> Vec<usize> {
        let nv = gv.len();
        let mut out = Vec::new();
        for (i, &x) in gx.nodes().iter().enumerate() {
            if x < self.x_min || x > self.x_max {
                continue;
            }
            for (j, &v) in gv.nodes().iter().enumerate() {
                if v >= self.v_min && v <= self.v_max {
                    out.push(i * nv + j);
                }
            }
        }
        out
    }
}

/// Root-mean-square of `a - b` over the flat indices in `region`.
pub fn rms_error(a: &Lattice, b: &Lattice, region: &[usize]) -> Result<f64> {
    a.check_shape(b.shape())?;
    if region.is_empty() {
        return Err(Error::InvalidInput("error region is empty".into()));
    }
    let (av, bv) = (a.values(), b.values());
    let sum: f64 = region.iter().map(|&k| (av[k] - bv[k]).powi(2)).sum();
    Ok((sum / region.len() as f64).sqrt())
}

/// Forward-difference delta; the last `x` row copies its neighbour.
pub fn delta_surface(f: &Lattice, gx: &Grid1D) -> Result<Lattice> {
    let (nx, nv) = f.shape();
    if nx != gx.len() {
        return Err(Error::ShapeMismatch {
            expected: (gx.len(), nv),
            got: f.shape(),
        });
    }
    if nx < 3 {
        return Err(Error::InvalidGrid("delta needs at least 3 x nodes".into()));
    }
    let mut out = Lattice::zeros(nx, nv);
    for i in 0..nx - 1 {
        let h = gx.spacing(i + 1);
        for j in 0..nv {
            out.set(i, j, (f.get(i + 1, j) - f.get(i, j)) / h);
        }
    }
    for j in 0..nv {
        out.set(nx - 1, j, out.get(nx - 2, j));
    }
    Ok(out)
}

fn total_variation(v: &[f64]) -> f64 {
    v.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

pub(crate) fn span(v: &[f64]) -> f64 {
    let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
        (lo.min(x), hi.max(x))
    });
    hi - lo
}

/// Excess total variation of a 1-D slice.
///
/// A 5-point moving average locates the slice's large-scale turning points
/// (reversals larger than a quarter of the slice range); each is then moved
/// to the raw extremum within two nodes. Between consecutive turning points
/// the slice should be monotone, so `TV - (max - min)` per segment measures
/// the wiggles. Monotone and single-hump slices score 0.
pub fn oscillation_metric(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 3 || values.iter().any(|v| !v.is_finite()) {
        return if values.iter().all(|v| v.is_finite()) {
            0.0
        } else {
            f64::INFINITY
        };
    }
    let range = span(values);
    if range == 0.0 {
        return 0.0;
    }
    let smooth: Vec<f64> = (0..n)
        .map(|i| {
            let w = &values[i.saturating_sub(2)..(i + 3).min(n)];
            w.iter().sum::<f64>() / w.len() as f64
        })
        .collect();
    let reversal = 0.25 * range;

    // (index, is_peak)
    let mut turns: Vec<(usize, bool)> = Vec::new();
    let mut dir = 0i8;
    let (mut lo, mut hi) = (0usize, 0usize);
    let mut ext = 0usize;
    for i in 1..n {
        match dir {
            0 => {
                if smooth[i] < smooth[lo] {
                    lo = i;
                }
                if smooth[i] > smooth[hi] {
                    hi = i;
                }
                if smooth[i] - smooth[lo] > reversal {
                    if lo > 0 {
                        turns.push((lo, false));
                    }
                    dir = 1;
                    ext = i;
                } else if smooth[hi] - smooth[i] > reversal {
                    if hi > 0 {
                        turns.push((hi, true));
                    }
                    dir = -1;
                    ext = i;
                }
            }
            1 => {
                if smooth[i] >= smooth[ext] {
                    ext = i;
                } else if smooth[ext] - smooth[i] > reversal {
                    turns.push((ext, true));
                    dir = -1;
                    ext = i;
                }
            }
            _ => {
                if smooth[i] <= smooth[ext] {
                    ext = i;
                } else if smooth[i] - smooth[ext] > reversal {
                    turns.push((ext, false));
                    dir = 1;
                    ext = i;
                }
            }
        }
    }

    let mut cuts = vec![0usize];
    for (p, peak) in turns {
        let window = p.saturating_sub(2)..(p + 3).min(n);
        let mut best = p;
        for k in window {
            let better = if peak {
                values[k] > values[best]
            } else {
                values[k] < values[best]
            };
            if better {
                best = k;
            }
        }
        if best > *cuts.last().unwrap() && best < n - 1 {
            cuts.push(best);
        }
    }
    cuts.push(n - 1);

    let excess: f64 = cuts
        .windows(2)
        .map(|c| {
            let seg = &values[c[0]..=c[1]];
            (total_variation(seg) - span(seg)).max(0.0)
        })
        .sum();
    if excess < OSC_NOISE_FLOOR * range {
        0.0
    } else {
        excess
    }
}

/// Closed-form Black–Scholes value at spot.
pub fn bs_closed_form(params: &BsParams, payoff: &Payoff) -> Result<f64> {
    payoff.validate()?;
    let (s0, r, q, t) = (params.spot, params.r, params.q, params.expiry);
    let vol = params.sigma * t.sqrt();
    let df = (-r * t).exp();
    let fwd = s0 * ((r - q) * t).exp();
    if vol == 0.0 {
        // deterministic forward
        return Ok(df * payoff.value(fwd));
    }
    let n = Normal::new(0.0, 1.0).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let d1 = |k: f64| ((fwd / k).ln() + 0.5 * vol * vol) / vol;
    let d2 = |k: f64| d1(k) - vol;
    Ok(match *payoff {
        Payoff::Call { strike } => df * (fwd * n.cdf(d1(strike)) - strike * n.cdf(d2(strike))),
        Payoff::Put { strike } => df * (strike * n.cdf(-d2(strike)) - fwd * n.cdf(-d1(strike))),
        Payoff::DigitalRange { low, high } => {
            let upper = if low > 0.0 { n.cdf(d2(low)) } else { 1.0 };
            df * (upper - n.cdf(d2(high)))
        }
    })
}

/// Four-point Lagrange interpolation of nodal values at `x`.
pub fn interpolate(grid: &Grid1D, values: &[f64], x: f64) -> f64 {
    let nodes = grid.nodes();
    let n = nodes.len();
    if n == 1 {
        return values[0];
    }
    let idx = nodes.partition_point(|&xn| xn < x);
    let width = 4.min(n);
    let start = idx.saturating_sub(2).min(n - width);
    let pts = start..start + width;
    pts.clone()
        .map(|k| {
            let basis: f64 = pts
                .clone()
                .filter(|&m| m != k)
                .map(|m| (x - nodes[m]) / (nodes[k] - nodes[m]))
                .product();
            basis * values[k]
        })
        .sum()
}

/// Tensor-product interpolation of a lattice at `(x, v)`.
pub fn price_at(field: &Lattice, gx: &Grid1D, gv: &Grid1D, x: f64, v: f64) -> f64 {
    let along_v: Vec<f64> = (0..field.nx())
        .map(|i| {
            let row = &field.values()[i * field.nv()..(i + 1) * field.nv()];
            interpolate(gv, row, v)
        })
        .collect();
    interpolate(gx, &along_v, x)
}

/// Time integrator used for one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum Method {
    Explicit { scheme: SchemeFamily },
    CrankNicolson,
    TrBdf2,
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Explicit { scheme } => scheme.label(),
            Method::CrankNicolson => "crank_nicolson".into(),
            Method::TrBdf2 => "tr_bdf2".into(),
        }
    }
}

impl From<SchemeFamily> for Method {
    fn from(scheme: SchemeFamily) -> Self {
        Method::Explicit { scheme }
    }
}

/// Raw outcome of one integration.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub field: Lattice,
    pub exploded: bool,
    pub explosion_step: Option<usize>,
    pub explosion_stage: Option<usize>,
    pub mean_stages: f64,
    pub wall_time: f64,
}

pub fn run_method(
    method: Method,
    op: &StencilOperator,
    initial: &Lattice,
    horizon: f64,
    l: usize,
) -> Result<RunOutcome> {
    let started = Instant::now();
    let implicit = |field: Lattice| RunOutcome {
        exploded: !field.is_finite(),
        field,
        explosion_step: None,
        explosion_stage: None,
        mean_stages: 1.0,
        wall_time: started.elapsed().as_secs_f64(),
    };
    match method {
        Method::Explicit { scheme } => {
            let (field, log) = run_integrator(scheme, op, initial, horizon, l, RhoSource::Gershgorin)?;
            Ok(RunOutcome {
                field,
                exploded: log.exploded,
                explosion_step: log.explosion_step,
                explosion_stage: log.explosion_stage,
                mean_stages: log.mean_stages(),
                wall_time: log.wall_time,
            })
        }
        Method::CrankNicolson => Ok(implicit(crank_nicolson_run(op, initial, horizon, l)?)),
        Method::TrBdf2 => Ok(implicit(trbdf2_run(op, initial, horizon, l)?)),
    }
}

/// One run's summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub scheme: String,
    pub policy: UpwindPolicy,
    pub grid: String,
    pub l: usize,
    /// `+inf` when the run exploded.
    pub rms_error: f64,
    pub osc_metric: f64,
    pub exploded: bool,
    pub explosion_stage: Option<usize>,
    pub price_at_spot: f64,
    pub mean_stages: f64,
    pub wall_time: f64,
}

impl ExperimentReport {
    /// JSON line with the infinite sentinel spelled out.
    pub fn to_json_line(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        if !self.rms_error.is_finite() {
            v["rms_error"] = serde_json::Value::String(format!("{}", self.rms_error));
        }
        if !self.osc_metric.is_finite() {
            v["osc_metric"] = serde_json::Value::String(format!("{}", self.osc_metric));
        }
        Ok(serde_json::to_string(&v)?)
    }
}

/// `l,rms_error,exploded` table.
pub fn convergence_csv(reports: &[ExperimentReport]) -> String {
    let mut s = String::from("l,rms_error,exploded\n");
    for r in reports {
        s.push_str(&format!("{},{},{}\n", r.l, r.rms_error, r.exploded));
    }
    s
}

/// `x,v,value` rows for a whole lattice.
pub fn lattice_csv(field: &Lattice, gx: &Grid1D, gv: &Grid1D) -> String {
    let mut s = String::from("x,v,value\n");
    for (i, x) in gx.nodes().iter().enumerate() {
        for (j, v) in gv.nodes().iter().enumerate() {
            s.push_str(&format!("{x},{v},{}\n", field.get(i, j)));
        }
    }
    s
}
