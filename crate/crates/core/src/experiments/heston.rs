use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    delta_surface, oscillation_metric, payoff_eval, price_at, rms_error, run_method, ExperimentReport, Method, Payoff,
    Roi, RunOutcome,
};
use crate::error::{Error, Result};
use crate::grid::{Grid1D, StretchKind, StretchSpec};
use crate::lattice::Lattice;
use crate::operator::{assemble_heston, HestonParams, StencilOperator, UpwindPolicy};
use crate::reference::crank_nicolson_run;
use crate::spectral::{eigenvalues_dense, gershgorin_radius, Spectrum};
use crate::sts::{select_stage_count, SchemeFamily};

/// Heston problem: parameters, domain and grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HestonSetup {
    pub params: HestonParams,
    pub m: usize,
    pub n: usize,
    pub x_max: f64,
    pub v_max: f64,
    pub x_grid: StretchSpec,
    pub v_grid: StretchSpec,
}

impl Default for HestonSetup {
    /// `x` in `[0, 8K]`, `v` in `[0, 5]`, sinh grids concentrated at `K` and `v = 0`.
    fn default() -> Self {
        let params = HestonParams::default();
        Self {
            params,
            m: 100,
            n: 50,
            x_max: 8.0 * params.strike,
            v_max: 5.0,
            x_grid: StretchSpec::foulon_x(params.strike),
            v_grid: StretchSpec::foulon_v(0.0, 5.0),
        }
    }
}

fn kind_name(k: StretchKind) -> &'static str {
    match k {
        StretchKind::Uniform => "uniform",
        StretchKind::Sinh => "sinh",
        StretchKind::Cubic => "cubic",
    }
}

impl HestonSetup {
    pub fn grids(&self) -> Result<(Grid1D, Grid1D)> {
        let gx = Grid1D::from_spec(0.0, self.x_max, &self.x_grid, self.m)?;
        let gv = Grid1D::from_spec(0.0, self.v_max, &self.v_grid, self.n)?;
        Ok((gx, gv))
    }

    pub fn operator(&self, policy: UpwindPolicy) -> Result<StencilOperator> {
        let (gx, gv) = self.grids()?;
        assemble_heston(&self.params, &gx, &gv, policy)
    }

    /// Call payoff at the configured strike.
    pub fn payoff(&self) -> Payoff {
        Payoff::Call {
            strike: self.params.strike,
        }
    }

    pub fn initial(&self, gx: &Grid1D, gv: &Grid1D) -> Lattice {
        payoff_eval(&self.payoff(), gx, gv.len())
    }

    pub fn describe(&self) -> String {
        format!(
            "heston m={} n={} x={} v={}",
            self.m,
            self.n,
            kind_name(self.x_grid.kind),
            kind_name(self.v_grid.kind)
        )
    }

    /// Crank–Nicolson/Rannacher field at expiry with `l_ref` steps.
    pub fn reference(&self, policy: UpwindPolicy, l_ref: usize) -> Result<Lattice> {
        let op = self.operator(policy)?;
        let init = self.initial(op.grid_x(), op.grid_v());
        crank_nicolson_run(&op, &init, self.params.expiry, l_ref)
    }
}

/// Time-convergence study for one policy and scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceConfig {
    pub setup: HestonSetup,
    pub policy: UpwindPolicy,
    pub method: Method,
    pub ladder: Vec<usize>,
    pub l_ref: usize,
    pub roi: Roi,
}

struct Prepared {
    op: StencilOperator,
    initial: Lattice,
    region: Vec<usize>,
}

fn prepare(setup: &HestonSetup, policy: UpwindPolicy, roi: &Roi) -> Result<Prepared> {
    let op = setup.operator(policy)?;
    let initial = setup.initial(op.grid_x(), op.grid_v());
    let region = roi.region(op.grid_x(), op.grid_v());
    Ok(Prepared { op, initial, region })
}

fn report(
    setup: &HestonSetup,
    prep: &Prepared,
    method: Method,
    l: usize,
    out: &RunOutcome,
    reference: &Lattice,
) -> Result<ExperimentReport> {
    let (gx, gv) = (prep.op.grid_x(), prep.op.grid_v());
    let rms = if out.exploded {
        f64::INFINITY
    } else {
        rms_error(&out.field, reference, &prep.region)?
    };
    let osc = if out.exploded {
        f64::INFINITY
    } else {
        oscillation_metric(&delta_surface(&out.field, gx)?.column(0))
    };
    Ok(ExperimentReport {
        scheme: method.label(),
        policy: prep.op.policy(),
        grid: setup.describe(),
        l,
        rms_error: rms,
        osc_metric: osc,
        exploded: out.exploded,
        explosion_stage: out.explosion_stage,
        price_at_spot: price_at(&out.field, gx, gv, setup.params.spot, setup.params.v0),
        mean_stages: out.mean_stages,
        wall_time: out.wall_time,
    })
}

fn run_many(
    setup: &HestonSetup,
    prep: &Prepared,
    jobs: Vec<(Method, usize)>,
    reference: &Lattice,
) -> Result<Vec<ExperimentReport>> {
    jobs.into_par_iter()
        .map(|(method, l)| {
            let out = run_method(method, &prep.op, &prep.initial, setup.params.expiry, l)?;
            report(setup, prep, method, l, &out, reference)
        })
        .collect()
}

/// Runs the method at each ladder step against a Crank–Nicolson reference
/// on the same grid and policy. Reports come back in ladder order.
pub fn run_time_convergence(cfg: &ConvergenceConfig) -> Result<Vec<ExperimentReport>> {
    let prep = prepare(&cfg.setup, cfg.policy, &cfg.roi)?;
    if prep.region.is_empty() {
        return Err(Error::InvalidInput("region of interest contains no nodes".into()));
    }
    let reference = crank_nicolson_run(&prep.op, &prep.initial, cfg.setup.params.expiry, cfg.l_ref)?;
    let jobs = cfg.ladder.iter().map(|&l| (cfg.method, l)).collect();
    run_many(&cfg.setup, &prep, jobs, &reference)
}

/// RMS difference between the references at `l_ref` and `2 l_ref`.
pub fn reference_self_check(setup: &HestonSetup, policy: UpwindPolicy, l_ref: usize, roi: &Roi) -> Result<f64> {
    let prep = prepare(setup, policy, roi)?;
    let (a, b) = rayon::join(
        || crank_nicolson_run(&prep.op, &prep.initial, setup.params.expiry, l_ref),
        || crank_nicolson_run(&prep.op, &prep.initial, setup.params.expiry, 2 * l_ref),
    );
    rms_error(&a?, &b?, &prep.region)
}

/// Delta surfaces at expiry for several schemes at one step count.
#[derive(Debug, Clone)]
pub struct DeltaStudy {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub reports: Vec<ExperimentReport>,
    /// Full delta surface per scheme, in the order of `reports`.
    pub deltas: Vec<Lattice>,
}

impl DeltaStudy {
    /// Delta along `x` at the variance node closest to zero.
    pub fn slice(&self, k: usize) -> Vec<f64> {
        self.deltas[k].column(0)
    }
}

pub fn run_delta_study(
    setup: &HestonSetup,
    policy: UpwindPolicy,
    l: usize,
    schemes: &[SchemeFamily],
    reference: &Lattice,
    roi: &Roi,
) -> Result<DeltaStudy> {
    let prep = prepare(setup, policy, roi)?;
    let gx = prep.op.grid_x();
    let results: Vec<(ExperimentReport, Lattice)> = schemes
        .par_iter()
        .map(|&scheme| {
            let method = Method::from(scheme);
            let out = run_method(method, &prep.op, &prep.initial, setup.params.expiry, l)?;
            let rep = report(setup, &prep, method, l, &out, reference)?;
            Ok((rep, delta_surface(&out.field, gx)?))
        })
        .collect::<Result<_>>()?;
    let (reports, deltas) = results.into_iter().unzip();
    Ok(DeltaStudy {
        x: gx.nodes().to_vec(),
        v: prep.op.grid_v().nodes().to_vec(),
        reports,
        deltas,
    })
}

/// RKC at each damping shift, same step count; stage counts are in the reports.
pub fn run_restabilization(
    setup: &HestonSetup,
    policy: UpwindPolicy,
    l: usize,
    eps: &[f64],
    reference: &Lattice,
    roi: &Roi,
) -> Result<Vec<ExperimentReport>> {
    let prep = prepare(setup, policy, roi)?;
    let jobs = eps.iter().map(|&e| (Method::from(SchemeFamily::rkc(e)), l)).collect();
    run_many(setup, &prep, jobs, reference)
}

/// Explicit Euler at one step count; refused steps carry no report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EulerOutcome {
    pub l: usize,
    pub dt_rho: f64,
    pub feasible: bool,
    pub report: Option<ExperimentReport>,
}

pub fn run_euler_study(
    setup: &HestonSetup,
    policy: UpwindPolicy,
    ladder: &[usize],
    reference: &Lattice,
    roi: &Roi,
) -> Result<Vec<EulerOutcome>> {
    let prep = prepare(setup, policy, roi)?;
    let rho = gershgorin_radius(&prep.op);
    ladder
        .par_iter()
        .map(|&l| {
            let dt = setup.params.expiry / l as f64;
            let sel = select_stage_count(SchemeFamily::ExplicitEuler, dt, rho)?;
            let report = if sel.feasible {
                let method = Method::from(SchemeFamily::ExplicitEuler);
                let out = run_method(method, &prep.op, &prep.initial, setup.params.expiry, l)?;
                Some(report(setup, &prep, method, l, &out, reference)?)
            } else {
                None
            };
            Ok(EulerOutcome {
                l,
                dt_rho: dt * rho,
                feasible: sel.feasible,
                report,
            })
        })
        .collect()
}

/// Spectrum of `(T / l) M`.
pub fn spectrum_for(setup: &HestonSetup, policy: UpwindPolicy, l: usize) -> Result<Spectrum> {
    if l == 0 {
        return Err(Error::InvalidInput("l must be positive".into()));
    }
    let op = setup.operator(policy)?;
    eigenvalues_dense(&op.to_sparse(), setup.params.expiry / l as f64)
}
