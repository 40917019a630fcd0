//! Run configuration and command dispatch.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::{
    convergence_csv, lattice_csv, payoff_eval, run_bs_study, run_delta_study, run_method, run_time_convergence,
    spectrum_for, BsGrid, BsStudyConfig, ConvergenceConfig, ExperimentReport, HestonSetup, Method, Roi,
};
use crate::grid::{Grid1D, StretchSpec};
use crate::operator::{assemble_bs, HestonParams, UpwindPolicy};
use crate::spectral::eigenvalues_dense;
use crate::sts::SchemeFamily;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Heston,
    Bs,
}

/// Grid sizes, domain bounds and stretching per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub m: usize,
    pub n: usize,
    pub x_max: f64,
    pub v_max: f64,
    pub x: StretchSpec,
    pub v: StretchSpec,
}

impl Default for GridConfig {
    fn default() -> Self {
        let s = HestonSetup::default();
        Self {
            m: s.m,
            n: s.n,
            x_max: s.x_max,
            v_max: s.v_max,
            x: s.x_grid,
            v: s.v_grid,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReferenceConfig {
    /// Crank–Nicolson steps for Heston references.
    pub l_ref: usize,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self { l_ref: 4000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: Model,
    pub params: HestonParams,
    pub grid: GridConfig,
    pub policy: UpwindPolicy,
    pub schemes: Vec<SchemeFamily>,
    pub ladder: Vec<usize>,
    pub reference: ReferenceConfig,
    /// Defaults to `x` in `[K/2, 3K/2]`, `v` in `[0, 1]`.
    pub roi: Option<Roi>,
    /// Step count for `price`.
    pub price_l: usize,
    /// Step count whose `T / l` scales the matrix in `spectrum`.
    pub spectrum_l: usize,
    /// Step count for `delta`.
    pub delta_l: usize,
    pub bs: BsStudyConfig,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: Model::Heston,
            params: HestonParams::default(),
            grid: GridConfig::default(),
            policy: UpwindPolicy::PartialFitting,
            schemes: vec![SchemeFamily::rkc(10.0)],
            ladder: vec![10, 20, 40, 50, 80, 100, 200, 400, 800, 1600],
            reference: ReferenceConfig::default(),
            roi: None,
            price_l: 200,
            spectrum_l: 16,
            delta_l: 10,
            bs: BsStudyConfig::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

fn range_error(path: &str, msg: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        msg: msg.into(),
    }
}

impl RunConfig {
    pub fn setup(&self) -> HestonSetup {
        HestonSetup {
            params: self.params,
            m: self.grid.m,
            n: self.grid.n,
            x_max: self.grid.x_max,
            v_max: self.grid.v_max,
            x_grid: self.grid.x,
            v_grid: self.grid.v,
        }
    }

    pub fn roi(&self) -> Roi {
        self.roi.unwrap_or_else(|| Roi::around_strike(self.params.strike))
    }

    pub fn validate(&self) -> Result<()> {
        self.params
            .validate()
            .map_err(|(field, msg)| range_error(&format!("params.{field}"), msg))?;
        self.bs
            .params
            .validate()
            .map_err(|(field, msg)| range_error(&format!("bs.params.{field}"), msg))?;
        if self.grid.m < 2 {
            return Err(range_error("grid.m", "need at least 2 x intervals"));
        }
        if self.grid.n < 1 {
            return Err(range_error("grid.n", "need at least 1 v interval"));
        }
        if !(self.grid.x_max > 0.0) {
            return Err(range_error("grid.x_max", "must be > 0"));
        }
        if !(self.grid.v_max > 0.0) {
            return Err(range_error("grid.v_max", "must be > 0"));
        }
        if self.ladder.is_empty() {
            return Err(range_error("ladder", "must not be empty"));
        }
        if let Some(k) = self.ladder.windows(2).position(|w| w[1] <= w[0]) {
            return Err(range_error(
                &format!("ladder[{}]", k + 1),
                "step ladder must be strictly increasing",
            ));
        }
        if self.ladder[0] == 0 {
            return Err(range_error("ladder[0]", "step counts must be positive"));
        }
        if self.schemes.is_empty() {
            return Err(range_error("schemes", "must not be empty"));
        }
        for (k, s) in self.schemes.iter().enumerate() {
            match *s {
                SchemeFamily::Rkc { eps } if !(eps >= 0.0) => {
                    return Err(range_error(&format!("schemes[{k}].eps"), "must be >= 0"));
                }
                SchemeFamily::Rkg { g } if !(g > 0.0) => {
                    return Err(range_error(&format!("schemes[{k}].g"), "must be > 0"));
                }
                _ => {}
            }
        }
        if self.reference.l_ref < 3 {
            return Err(range_error("reference.l_ref", "must be >= 3"));
        }
        for (name, v) in [
            ("price_l", self.price_l),
            ("spectrum_l", self.spectrum_l),
            ("delta_l", self.delta_l),
        ] {
            if v == 0 {
                return Err(range_error(name, "must be positive"));
            }
        }
        if let Some(roi) = self.roi {
            if !(roi.x_min <= roi.x_max && roi.v_min <= roi.v_max) {
                return Err(range_error("roi", "bounds must be ordered"));
            }
        }
        self.bs
            .payoff
            .validate()
            .map_err(|e| range_error("bs.payoff", e.to_string()))?;
        Ok(())
    }
}

/// Parses JSON text, rejecting unknown keys, then range-checks.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::Config {
            path: if path.is_empty() { ".".into() } else { path },
            msg: e.into_inner().to_string(),
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text).map_err(|e| match e {
        Error::Config { path: p, msg } => Error::Config {
            path: format!("{}: {p}", path.display()),
            msg,
        },
        other => other,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Price at expiry with each configured scheme.
    Price,
    /// Time-convergence table against the Crank–Nicolson reference.
    Converge,
    /// Eigenvalues of (T / spectrum_l) M.
    Spectrum,
    /// Forward-difference delta surfaces.
    Delta,
    /// Black–Scholes expiry-barrier study.
    BsDemo,
}

#[derive(Debug, Parser)]
#[command(name = "stslab", version, about = "Super-time-stepping finite-difference laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, overriding the configuration.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Exit with a nonzero status when any run explodes.
    #[arg(long, global = true)]
    pub strict: bool,
    /// Worker threads for parallel runs.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

/// Files written and whether any run exploded.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DispatchOutcome {
    pub files: Vec<PathBuf>,
    pub exploded: bool,
}

struct Writer {
    dir: PathBuf,
    out: DispatchOutcome,
    log: String,
}

impl Writer {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            out: DispatchOutcome::default(),
            log: String::new(),
        })
    }

    fn file(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.out.files.push(path);
        Ok(())
    }

    fn reports(&mut self, reports: &[ExperimentReport]) -> Result<()> {
        for r in reports {
            self.out.exploded |= r.exploded;
            self.log.push_str(&r.to_json_line()?);
            self.log.push('\n');
        }
        Ok(())
    }

    fn finish(mut self) -> Result<DispatchOutcome> {
        if !self.log.is_empty() {
            let log = std::mem::take(&mut self.log);
            self.file("runs.jsonl", &log)?;
        }
        Ok(self.out)
    }
}

fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '_' })
        .collect::<String>()
        .trim_matches('_')
        .to_string()
}

fn bs_grid(cfg: &RunConfig) -> BsGrid {
    BsGrid::Uniform { m: cfg.grid.m }
}

/// Runs `cmd` and writes its artifacts into `out_dir`.
pub fn dispatch(cmd: Command, cfg: &RunConfig, out_dir: &Path) -> Result<DispatchOutcome> {
    let mut w = Writer::new(out_dir)?;
    let setup = cfg.setup();
    match (cmd, cfg.model) {
        (Command::Price, Model::Heston) => {
            let op = setup.operator(cfg.policy)?;
            let (gx, gv) = (op.grid_x().clone(), op.grid_v().clone());
            let init = setup.initial(&gx, &gv);
            for s in &cfg.schemes {
                let out = run_method((*s).into(), &op, &init, cfg.params.expiry, cfg.price_l)?;
                w.out.exploded |= out.exploded;
                w.file(
                    &format!("price_{}.csv", slug(&s.label())),
                    &lattice_csv(&out.field, &gx, &gv),
                )?;
            }
        }
        (Command::Price, Model::Bs) => {
            let gx = bs_grid(cfg).build(0.0, cfg.bs.x_max)?;
            let gv = Grid1D::point(cfg.bs.params.sigma.powi(2));
            let op = assemble_bs(&cfg.bs.params, &gx, cfg.policy)?;
            let init = payoff_eval(&cfg.bs.payoff, &gx, 1);
            for s in &cfg.schemes {
                let out = run_method((*s).into(), &op, &init, cfg.bs.params.expiry, cfg.price_l)?;
                w.out.exploded |= out.exploded;
                w.file(
                    &format!("price_{}.csv", slug(&s.label())),
                    &lattice_csv(&out.field, &gx, &gv),
                )?;
            }
        }
        (Command::Converge, Model::Heston) => {
            for s in &cfg.schemes {
                let reports = run_time_convergence(&ConvergenceConfig {
                    setup: setup.clone(),
                    policy: cfg.policy,
                    method: Method::from(*s),
                    ladder: cfg.ladder.clone(),
                    l_ref: cfg.reference.l_ref,
                    roi: cfg.roi(),
                })?;
                w.file(
                    &format!("convergence_{}.csv", slug(&s.label())),
                    &convergence_csv(&reports),
                )?;
                w.reports(&reports)?;
            }
        }
        (Command::Converge, Model::Bs) => {
            return Err(Error::InvalidInput(
                "converge is defined for model heston; use bs-demo for bs".into(),
            ));
        }
        (Command::Spectrum, model) => {
            let spectrum = match model {
                Model::Heston => spectrum_for(&setup, cfg.policy, cfg.spectrum_l)?,
                Model::Bs => {
                    let gx = bs_grid(cfg).build(0.0, cfg.bs.x_max)?;
                    let op = assemble_bs(&cfg.bs.params, &gx, cfg.policy)?;
                    eigenvalues_dense(&op.to_sparse(), cfg.bs.params.expiry / cfg.spectrum_l as f64)?
                }
            };
            spectrum.write(out_dir, "spectrum")?;
            w.out.files.push(out_dir.join("spectrum.csv"));
            w.out.files.push(out_dir.join("spectrum.json"));
        }
        (Command::Delta, Model::Heston) => {
            let reference = setup.reference(cfg.policy, cfg.reference.l_ref)?;
            let study = run_delta_study(&setup, cfg.policy, cfg.delta_l, &cfg.schemes, &reference, &cfg.roi())?;
            let (gx, gv) = setup.grids()?;
            for (r, d) in study.reports.iter().zip(&study.deltas) {
                w.file(&format!("delta_{}.csv", slug(&r.scheme)), &lattice_csv(d, &gx, &gv))?;
            }
            w.reports(&study.reports)?;
        }
        (Command::Delta, Model::Bs) => {
            return Err(Error::InvalidInput("delta is defined for model heston".into()));
        }
        (Command::BsDemo, _) => {
            let results = run_bs_study(&cfg.bs)?;
            let mut summary = String::from("scenario,scheme,l,osc_metric,threshold,clean,rms_error,exploded\n");
            for res in &results {
                let gx = Grid1D::new(res.x.clone())?;
                let gv = Grid1D::point(cfg.bs.params.sigma.powi(2));
                for (r, p) in res.reports.iter().zip(&res.prices) {
                    let field = crate::lattice::Lattice::from_vec(p.len(), 1, p.clone())?;
                    w.file(
                        &format!("bs_{}_{}.csv", res.name, slug(&r.scheme)),
                        &lattice_csv(&field, &gx, &gv),
                    )?;
                    summary.push_str(&format!(
                        "{},{},{},{},{},{},{},{}\n",
                        res.name,
                        r.scheme,
                        r.l,
                        r.osc_metric,
                        res.threshold,
                        res.is_clean(r),
                        r.rms_error,
                        r.exploded
                    ));
                }
                w.reports(&res.reports)?;
            }
            w.file("bs_summary.csv", &summary)?;
        }
    }
    w.finish()
}

/// Entry point behind `main`; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return 2;
        }
    }
    let cfg = match &cli.config {
        Some(p) => load_config(p),
        None => Ok(RunConfig::default()),
    };
    let cfg = match cfg {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let out_dir = cli.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    match dispatch(cli.command, &cfg, &out_dir) {
        Ok(outcome) => {
            for f in &outcome.files {
                println!("{}", f.display());
            }
            if cli.strict && outcome.exploded {
                eprintln!("error: at least one run produced non-finite values");
                return 3;
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
