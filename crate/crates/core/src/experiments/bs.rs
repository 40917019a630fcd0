use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    bs_closed_form, interpolate, oscillation_metric, payoff_eval, rms_error, run_method, span, ExperimentReport,
    Method, Payoff, OSC_NOISE_FLOOR,
};
use crate::error::{Error, Result};
use crate::grid::{Grid1D, StretchSpec};
use crate::lattice::Lattice;
use crate::operator::{assemble_bs, BsParams, UpwindPolicy};
use crate::reference::trbdf2_run;
use crate::spectral::{eigenvalues_dense, gershgorin_radius};
use crate::sts::SchemeFamily;

/// Asset window in which barrier-study oscillations are measured.
pub const BS_OSC_WINDOW: (f64, f64) = (50.0, 150.0);

/// Grid choice for a 1-D scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BsGrid {
    Uniform { m: usize },
    Sinh { m: usize, center: f64, lambda: f64 },
    Cubic { m: usize, center: f64, alpha: f64 },
}

impl BsGrid {
    pub fn build(&self, x_min: f64, x_max: f64) -> Result<Grid1D> {
        match *self {
            BsGrid::Uniform { m } => Grid1D::from_spec(x_min, x_max, &StretchSpec::uniform(), m),
            BsGrid::Sinh { m, center, lambda } => {
                Grid1D::from_spec(x_min, x_max, &StretchSpec::sinh(center, lambda), m)
            }
            BsGrid::Cubic { m, center, alpha } => {
                Grid1D::from_spec(x_min, x_max, &StretchSpec::cubic(center, alpha), m)
            }
        }
    }

    pub fn describe(&self) -> String {
        match *self {
            BsGrid::Uniform { m } => format!("bs uniform m={m}"),
            BsGrid::Sinh { m, center, lambda } => format!("bs sinh m={m} center={center} lambda={lambda}"),
            BsGrid::Cubic { m, center, alpha } => format!("bs cubic m={m} center={center} alpha={alpha}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BsScenario {
    pub name: String,
    pub grid: BsGrid,
    pub policy: UpwindPolicy,
    pub l: usize,
    pub methods: Vec<Method>,
}

/// Expiry-barrier study: one payoff, several grids, policies and step counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BsStudyConfig {
    pub params: BsParams,
    pub payoff: Payoff,
    pub x_max: f64,
    pub osc_window: (f64, f64),
    /// TR-BDF2 steps for the reference that sets each scenario's clean threshold.
    pub l_ref: usize,
    pub scenarios: Vec<BsScenario>,
}

fn barrier_methods() -> Vec<Method> {
    vec![
        SchemeFamily::Rkl.into(),
        SchemeFamily::rkg().into(),
        SchemeFamily::rkc(10.0).into(),
        Method::TrBdf2,
    ]
}

impl Default for BsStudyConfig {
    fn default() -> Self {
        let uniform = BsGrid::Uniform { m: 100 };
        let cubic = BsGrid::Cubic {
            m: 400,
            center: 100.0,
            alpha: 0.01,
        };
        let scenario = |name: &str, grid, policy, l| BsScenario {
            name: name.into(),
            grid,
            policy,
            l,
            methods: barrier_methods(),
        };
        Self {
            params: BsParams::default(),
            payoff: Payoff::DigitalRange { low: 10.0, high: 100.0 },
            x_max: 150.0,
            osc_window: BS_OSC_WINDOW,
            l_ref: 4000,
            scenarios: vec![
                scenario("uniform_none", uniform, UpwindPolicy::None, 100),
                scenario("uniform_partial", uniform, UpwindPolicy::PartialFitting, 100),
                scenario("cubic_partial_l20", cubic, UpwindPolicy::PartialFitting, 20),
                scenario("cubic_partial_l50", cubic, UpwindPolicy::PartialFitting, 50),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BsScenarioResult {
    pub name: String,
    pub reports: Vec<ExperimentReport>,
    /// Oscillation of the TR-BDF2 reference in the window.
    pub reference_osc: f64,
    /// `max(3 * reference_osc, noise floor)`; runs at or below it are clean.
    pub threshold: f64,
    pub gershgorin: f64,
    pub max_real: f64,
    pub max_abs_imag: f64,
    pub x: Vec<f64>,
    /// Price curve at expiry per report.
    pub prices: Vec<Vec<f64>>,
}

impl BsScenarioResult {
    pub fn report(&self, method: &str) -> Option<&ExperimentReport> {
        self.reports.iter().find(|r| r.scheme == method)
    }

    pub fn is_clean(&self, r: &ExperimentReport) -> bool {
        r.osc_metric <= self.threshold
    }
}

fn run_scenario(cfg: &BsStudyConfig, sc: &BsScenario) -> Result<BsScenarioResult> {
    let gx = sc.grid.build(0.0, cfg.x_max)?;
    let op = assemble_bs(&cfg.params, &gx, sc.policy)?;
    let init = payoff_eval(&cfg.payoff, &gx, 1);
    let (lo, hi) = cfg.osc_window;
    let window: Vec<usize> = (0..gx.len()).filter(|&i| (lo..=hi).contains(&gx.nodes()[i])).collect();
    if window.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "oscillation window [{lo}, {hi}] holds fewer than 3 nodes"
        )));
    }
    let slice = |f: &Lattice| -> Vec<f64> { window.iter().map(|&i| f.get(i, 0)).collect() };
    let reference = trbdf2_run(&op, &init, cfg.params.expiry, cfg.l_ref)?;
    let ref_slice = slice(&reference);
    let reference_osc = oscillation_metric(&ref_slice);
    let threshold = (3.0 * reference_osc).max(OSC_NOISE_FLOOR * span(&ref_slice));
    let spectrum = eigenvalues_dense(&op.to_sparse(), cfg.params.expiry / sc.l as f64)?;

    let runs: Vec<(ExperimentReport, Vec<f64>)> = sc
        .methods
        .par_iter()
        .map(|&method| {
            let out = run_method(method, &op, &init, cfg.params.expiry, sc.l)?;
            let rms = if out.exploded {
                f64::INFINITY
            } else {
                rms_error(&out.field, &reference, &window)?
            };
            let rep = ExperimentReport {
                scheme: method.label(),
                policy: sc.policy,
                grid: sc.grid.describe(),
                l: sc.l,
                rms_error: rms,
                osc_metric: oscillation_metric(&slice(&out.field)),
                exploded: out.exploded,
                explosion_stage: out.explosion_stage,
                price_at_spot: interpolate(&gx, out.field.values(), cfg.params.spot),
                mean_stages: out.mean_stages,
                wall_time: out.wall_time,
            };
            Ok((rep, out.field.into_vec()))
        })
        .collect::<Result<_>>()?;
    let (reports, prices) = runs.into_iter().unzip();
    Ok(BsScenarioResult {
        name: sc.name.clone(),
        reports,
        reference_osc,
        threshold,
        gershgorin: gershgorin_radius(&op),
        max_real: spectrum.max_real,
        max_abs_imag: spectrum.max_abs_imag,
        x: gx.nodes().to_vec(),
        prices,
    })
}

/// Runs every scenario; results keep the configured order.
pub fn run_bs_study(cfg: &BsStudyConfig) -> Result<Vec<BsScenarioResult>> {
    cfg.params
        .validate()
        .map_err(|(field, msg)| Error::InvalidInput(format!("params.{field}: {msg}")))?;
    cfg.payoff.validate()?;
    cfg.scenarios.par_iter().map(|sc| run_scenario(cfg, sc)).collect()
}

/// PDE price at spot against the closed form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VanillaCheck {
    pub pde: f64,
    pub exact: f64,
    pub rel_error: f64,
    pub exploded: bool,
}

/// Vanilla call `K = 100`, `σ = 20%`, `r = 5%`, `T = 1` on `[0, 4K]` with a
/// sinh grid concentrated at the strike.
pub fn vanilla_bs_check(method: Method, m: usize, l: usize) -> Result<VanillaCheck> {
    let params = BsParams {
        sigma: 0.2,
        r: 0.05,
        q: 0.0,
        spot: 100.0,
        expiry: 1.0,
    };
    let payoff = Payoff::Call { strike: 100.0 };
    let gx = Grid1D::from_spec(0.0, 400.0, &StretchSpec::foulon_x(100.0), m)?;
    let op = assemble_bs(&params, &gx, UpwindPolicy::None)?;
    let init = payoff_eval(&payoff, &gx, 1);
    let out = run_method(method, &op, &init, params.expiry, l)?;
    let pde = interpolate(&gx, out.field.values(), params.spot);
    let exact = bs_closed_form(&params, &payoff)?;
    Ok(VanillaCheck {
        pde,
        exact,
        rel_error: ((pde - exact) / exact).abs(),
        exploded: out.exploded,
    })
}
