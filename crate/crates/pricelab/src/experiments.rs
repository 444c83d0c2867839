//! Config-driven experiments: each kind runs a study, emits a table for CSV
//! output, a JSON summary and a list of pass/fail checks.

use crate::analysis::{
    bit_budget, cir_truncation, divergence_probe, gate_count, gbm_truncation_radius, heston_truncation, integrated_cir_tail, left_endpoint_bound,
    left_endpoint_check, cell_gradient_bounds, milstein_truncation, moment_explosion_raw, riccati_blowup_time, BitModel, ExplosionCase, GateSettings,
    ModelTag,
};
use crate::charinv::CharFunction;
use crate::core::{CirParams, GbmParams, HestonParams, Matrix, Payoff};
use crate::dists::{chi2_tail_bound, normal_pdf, sample_central_chi2, sf_chi2, ChiSquareSpec};
use crate::error::{Error, Result};
use crate::levy::{default_sampler, levy_char, levy_marginal_char};
use crate::mc::{fit_rates, mci_price, mlmc_schedule, mlmc_price, simulated_quantum_mlmc, MlmcProblem, Stats};
use crate::models::{
    bs_call, bs_put, cir_conditional_moments, cir_step, BkCharFn, CirFfConstants, CirModel, DriftMode, GbmModel, HestonModel, IcirSettings,
    IntegratedCirSampler, PathSource,
};
use crate::qsim::{build_qsample, qae_error_bound, qae_estimate, required_degree, stateprep_fidelity, DiscreteQsample, QaeDistribution, QsampleMode};
use crate::rng::{par_chunks, RngStream};
use crate::schemes::{fit_slope, strong_error_gbm, Scheme, SdeSpec, Stepper};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use std::path::Path;

// ------------------------------------------------------------------ config

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    /// Output directory; the CLI `--out-dir` flag takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    pub experiment: Experiment,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Experiment {
    Price(PriceCfg),
    StrongConvergence(StrongCfg),
    MlmcCost(MlmcCfg),
    QaeScaling(QaeCfg),
    TruncationCheck(TruncCfg),
    ResourceReport(ResourceCfg),
    CharValidate(CharCfg),
    MomentExplosion(MomentCfg),
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::Price(_) => "price",
            Experiment::StrongConvergence(_) => "strong_convergence",
            Experiment::MlmcCost(_) => "mlmc_cost",
            Experiment::QaeScaling(_) => "qae_scaling",
            Experiment::TruncationCheck(_) => "truncation_check",
            Experiment::ResourceReport(_) => "resource_report",
            Experiment::CharValidate(_) => "char_validate",
            Experiment::MomentExplosion(_) => "moment_explosion",
        }
    }
}

/// Target value with absolute tolerance.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expect {
    pub value: f64,
    pub tol: f64,
}

impl Expect {
    fn holds(&self, x: f64) -> bool {
        (x - self.value).abs() <= self.tol
    }

    fn describe(&self) -> String {
        format!("{} ± {}", self.value, self.tol)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelCfg {
    Gbm {
        s0: Vec<f64>,
        sigma: Vec<f64>,
        #[serde(default)]
        mu: Option<Vec<f64>>,
        #[serde(default)]
        corr: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        drift: DriftMode,
        t: usize,
        delta: f64,
    },
    Cir {
        kappa: f64,
        theta: f64,
        sigma: f64,
        v0: f64,
        delta: f64,
        t: usize,
    },
    Heston {
        kappa: Vec<f64>,
        theta: Vec<f64>,
        sigma: Vec<f64>,
        v0: Vec<f64>,
        rho: Vec<f64>,
        s0: Vec<f64>,
        #[serde(default)]
        mu: Option<Vec<f64>>,
        #[serde(default)]
        corr: Option<Vec<Vec<f64>>>,
        delta: f64,
        t: usize,
    },
}

fn corr_or_identity(corr: &Option<Vec<Vec<f64>>>, d: usize) -> Result<Matrix> {
    match corr {
        Some(rows) => Matrix::from_rows(rows),
        None => Ok(Matrix::identity(d)),
    }
}

impl ModelCfg {
    fn gbm_params(&self) -> Result<GbmParams> {
        match self {
            ModelCfg::Gbm { s0, sigma, mu, corr, .. } => {
                let d = s0.len();
                GbmParams::new(mu.clone().unwrap_or(vec![0.0; d]), sigma.clone(), corr_or_identity(corr, d)?, s0.clone())
            }
            _ => Err(Error::Config("expected a gbm model".into())),
        }
    }

    fn source(&self) -> Result<Box<dyn PathSource>> {
        Ok(match self {
            ModelCfg::Gbm { drift, t, delta, .. } => Box::new(GbmModel::new(self.gbm_params()?, *t, *delta, *drift)?),
            ModelCfg::Cir { kappa, theta, sigma, v0, delta, t } => Box::new(CirModel::new(CirParams::new(*kappa, *theta, *sigma, *v0, *delta)?, *t)?),
            ModelCfg::Heston { t, .. } => Box::new(HestonModel::new(self.heston_params()?, *t, IcirSettings::default())?),
        })
    }

    fn heston_params(&self) -> Result<HestonParams> {
        match self {
            ModelCfg::Heston { kappa, theta, sigma, v0, rho, s0, mu, corr, delta, .. } => {
                let d = s0.len();
                if [kappa.len(), theta.len(), sigma.len(), v0.len()].iter().any(|&n| n != d) {
                    return Err(Error::Config("heston parameter vectors must all have one entry per asset".into()));
                }
                let cir: Result<Vec<_>> = (0..d).map(|i| CirParams::new(kappa[i], theta[i], sigma[i], v0[i], *delta)).collect();
                HestonParams::new(cir?, mu.clone().unwrap_or(vec![0.0; d]), rho.clone(), corr_or_identity(corr, d)?, s0.clone())
            }
            _ => Err(Error::Config("expected a heston model".into())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayoffName {
    EuropeanCall,
    EuropeanPut,
    AsianCall,
    CustomPiecewiseLinear,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PayoffCfg {
    pub kind: PayoffName,
    #[serde(default)]
    pub strike: f64,
    #[serde(default)]
    pub knots: Vec<f64>,
    #[serde(default)]
    pub values: Vec<f64>,
}

impl PayoffCfg {
    fn build(&self) -> Result<Payoff> {
        Ok(match self.kind {
            PayoffName::EuropeanCall => Payoff::european_call(self.strike),
            PayoffName::EuropeanPut => Payoff::european_put(self.strike),
            PayoffName::AsianCall => Payoff::asian_call(self.strike),
            PayoffName::CustomPiecewiseLinear => Payoff::piecewise(self.knots.clone(), self.values.clone())?,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriceMethod {
    #[default]
    Mci,
    DiscreteSum,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriceCfg {
    pub model: ModelCfg,
    pub payoff: PayoffCfg,
    #[serde(default)]
    pub method: PriceMethod,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub eps_disc: Option<f64>,
    #[serde(default)]
    pub eps_trunc: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrderExpect {
    pub scheme: Scheme,
    pub order: f64,
    pub tol: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrongCfg {
    pub mu: f64,
    pub sigma: f64,
    pub x0: f64,
    pub t_end: f64,
    /// Step sizes 2^{−k}.
    pub h_exponents: Vec<u32>,
    pub n: usize,
    pub schemes: Vec<Scheme>,
    #[serde(default)]
    pub expect: Vec<OrderExpect>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlmcCfg {
    pub mu: f64,
    pub sigma: f64,
    pub x0: f64,
    pub strike: f64,
    pub t_mon: usize,
    pub h0: f64,
    pub scheme: Scheme,
    pub eps: Vec<f64>,
    /// Grid for the simulated-quantum estimator; defaults to `eps`.
    #[serde(default)]
    pub quantum_eps: Option<Vec<f64>>,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub pilot_n: usize,
    pub n_ref: usize,
    pub variance_levels: usize,
    pub variance_n: usize,
    #[serde(default)]
    pub expect_beta: Option<Expect>,
    #[serde(default)]
    pub expect_classical_slope: Option<Expect>,
    #[serde(default)]
    pub expect_quantum_slope: Option<Expect>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QaeCfg {
    pub amplitude: f64,
    pub m_bits: Vec<u32>,
    pub reps: usize,
    pub target_bits: u32,
    /// Repetitions per on-grid amplitude.
    pub on_grid_reps: usize,
    #[serde(default)]
    pub expect_slope: Option<Expect>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Chi2TailCfg {
    pub dof: Vec<f64>,
    pub b: Vec<f64>,
    pub n: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IcirTailCfg {
    pub kappa: f64,
    pub theta: f64,
    pub sigma: f64,
    pub delta: f64,
    pub v_start: f64,
    pub v_end: f64,
    /// Thresholds as multiples of the conditional mean.
    pub x_over_mean: Vec<f64>,
    pub n: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeftEndpointCfg {
    pub n: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GbmRadiusCase {
    pub t: usize,
    pub d: usize,
    pub sigma: f64,
    pub eps: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GbmRadiusCfg {
    pub cases: Vec<GbmRadiusCase>,
    pub n: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CirRadiusCfg {
    pub kappa: f64,
    pub theta: f64,
    pub sigma: f64,
    pub v0: f64,
    pub delta: f64,
    pub t: usize,
    pub b: f64,
    pub eps: f64,
    pub n: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MilsteinRadiusCfg {
    pub mu: f64,
    pub sigma: f64,
    pub x0: f64,
    pub strike: f64,
    pub t: usize,
    pub eps: f64,
    pub n: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HestonRadiusCfg {
    pub kappa: f64,
    pub theta: f64,
    pub sigma: f64,
    pub rho: f64,
    pub v0: f64,
    pub delta: f64,
    pub t: usize,
    pub b: f64,
    pub eps: f64,
    pub n: usize,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncCfg {
    #[serde(default)]
    pub chi2_tail: Option<Chi2TailCfg>,
    #[serde(default)]
    pub int_cir_tail: Option<IcirTailCfg>,
    #[serde(default)]
    pub left_endpoint: Option<LeftEndpointCfg>,
    #[serde(default)]
    pub gbm_radius: Option<GbmRadiusCfg>,
    #[serde(default)]
    pub cir_radius: Option<CirRadiusCfg>,
    #[serde(default)]
    pub milstein_radius: Option<MilsteinRadiusCfg>,
    #[serde(default)]
    pub heston_radius: Option<HestonRadiusCfg>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateCfg {
    pub model: ModelTag,
    pub settings: GateSettings,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BitCase {
    pub model: BitModel,
    pub b: f64,
    pub t: usize,
    pub d: usize,
    pub eps_disc: f64,
    pub eps_trunc: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatePrepCfg {
    /// Gaussian truncated to [−b, b] for each listed b.
    pub half_widths: Vec<f64>,
    pub eps: Vec<f64>,
    pub max_degree: usize,
    pub n_bits: u32,
    pub tvd_degrees: Vec<usize>,
    #[serde(default)]
    pub expect_slope_ratio: Option<Expect>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceCfg {
    #[serde(default)]
    pub gates: Vec<GateCfg>,
    #[serde(default)]
    pub bits: Vec<BitCase>,
    #[serde(default)]
    pub heston_feasibility: Vec<HestonRadiusCfg>,
    #[serde(default)]
    pub stateprep: Option<StatePrepCfg>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "target", rename_all = "snake_case", deny_unknown_fields)]
pub enum CharCfg {
    CirTransition {
        kappas: Vec<f64>,
        sigmas: Vec<f64>,
        theta: f64,
        v0: f64,
        dt: f64,
        n: usize,
        bands: f64,
    },
    IntCir {
        kappa: f64,
        theta: f64,
        sigma: f64,
        delta: f64,
        v_start: f64,
        v_end: f64,
        a: Vec<f64>,
        n: usize,
        tol: f64,
    },
    Levy {
        x: Vec<f64>,
        r2: Vec<f64>,
        n_cond: usize,
        tol: f64,
        mgf_x: f64,
        mgf_n: usize,
        mgf_tol: f64,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentCase {
    pub kappa: f64,
    pub sigma: f64,
    pub rho: f64,
    pub omega: f64,
    #[serde(default)]
    pub expect: Option<ExplosionCase>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeCfg {
    pub kappa: f64,
    pub theta: f64,
    pub sigma: f64,
    pub rho: f64,
    pub omega: f64,
    pub n0: usize,
    pub doublings: u32,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentCfg {
    pub cases: Vec<MomentCase>,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default)]
    pub probe: Option<ProbeCfg>,
}

fn default_rel_tol() -> f64 {
    1e-3
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

// ------------------------------------------------------------------ output

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    F(f64),
    I(i64),
    S(String),
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::F(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::I(x as i64)
    }
}

impl From<u64> for Cell {
    fn from(x: u64) -> Self {
        Cell::I(x as i64)
    }
}

impl From<u32> for Cell {
    fn from(x: u32) -> Self {
        Cell::I(x as i64)
    }
}

impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Cell::S(x.to_string())
    }
}

impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::S(x.to_string())
    }
}

impl From<String> for Cell {
    fn from(x: String) -> Self {
        Cell::S(x)
    }
}

/// Full-precision text: 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::F(x) => fmt_f64(*x),
            Cell::I(i) => i.to_string(),
            Cell::S(s) if s.contains([',', '"', '\n']) => format!("\"{}\"", s.replace('"', "\"\"")),
            Cell::S(s) => s.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub target: String,
    pub pass: bool,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    pub summary: Map<String, Value>,
    pub checks: Vec<Check>,
}

/// JSON number, or a string for non-finite values.
pub fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::String(fmt_f64(x))
    }
}

impl ExperimentOutput {
    fn new(columns: &[&str]) -> Self {
        ExperimentOutput { columns: columns.iter().map(|s| s.to_string()).collect(), rows: Vec::new(), summary: Map::new(), checks: Vec::new() }
    }

    fn row(&mut self, cells: Vec<Cell>) {
        debug_assert_eq!(cells.len(), self.columns.len());
        self.rows.push(cells);
    }

    fn check(&mut self, name: impl Into<String>, value: f64, target: impl Into<String>, pass: bool) {
        self.checks.push(Check { name: name.into(), value, target: target.into(), pass });
    }

    fn put(&mut self, key: &str, v: Value) {
        self.summary.insert(key.to_string(), v);
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check_named(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// CSV with the resolved config echoed as a leading comment line.
    pub fn to_csv(&self, cfg: &ExperimentConfig) -> String {
        let mut s = format!("# config: {}\n", serde_json::to_string(cfg).unwrap_or_default());
        s.push_str(&self.columns.join(","));
        s.push('\n');
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(Cell::render).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }

    pub fn to_json(&self, cfg: &ExperimentConfig) -> String {
        let mut m = Map::new();
        m.insert("name".into(), json!(cfg.name));
        m.insert("kind".into(), json!(cfg.experiment.kind()));
        m.insert("seed".into(), json!(cfg.seed));
        m.insert("config".into(), serde_json::to_value(cfg).unwrap_or(Value::Null));
        m.insert("pass".into(), json!(self.passed()));
        let checks: Vec<Value> = self
            .checks
            .iter()
            .map(|c| json!({"name": c.name, "value": num(c.value), "target": c.target, "pass": c.pass}))
            .collect();
        m.insert("checks".into(), Value::Array(checks));
        for (k, v) in &self.summary {
            m.insert(k.clone(), v.clone());
        }
        serde_json::to_string_pretty(&Value::Object(m)).unwrap_or_default() + "\n"
    }

    /// Writes `<dir>/<name>.csv` and `<dir>/<name>.json`.
    pub fn write(&self, cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
        let io = |e: std::io::Error| Error::Io(e.to_string());
        std::fs::create_dir_all(dir).map_err(io)?;
        std::fs::write(dir.join(format!("{}.csv", cfg.name)), self.to_csv(cfg)).map_err(io)?;
        std::fs::write(dir.join(format!("{}.json", cfg.name)), self.to_json(cfg)).map_err(io)?;
        Ok(())
    }
}

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;

pub fn exit_code(res: &Result<ExperimentOutput>) -> i32 {
    match res {
        Ok(o) if o.passed() => EXIT_PASS,
        Ok(_) => EXIT_CHECK_FAILED,
        Err(Error::Infeasible { .. }) => EXIT_INFEASIBLE,
        Err(_) => EXIT_CONFIG,
    }
}

// ---------------------------------------------------------------- registry

#[derive(Clone, Debug, Serialize)]
pub struct RegistryEntry {
    pub kind: &'static str,
    pub description: &'static str,
    pub columns: &'static [&'static str],
    pub example: &'static str,
}

pub fn list_experiments() -> Vec<RegistryEntry> {
    vec![
        RegistryEntry {
            kind: "price",
            description: "Monte Carlo price (method = mci) or discrete-sum qsample price (method = discrete_sum) with a closed-form oracle when one exists",
            columns: &["method", "estimate", "stderr", "ci_lo", "ci_hi", "oracle", "n", "bits", "radius"],
            example: r#"name = "price"
seed = 1
[experiment]
kind = "price"
n = 100000
model = { type = "gbm", s0 = [100.0], sigma = [0.2], t = 1, delta = 1.0 }
payoff = { kind = "european_call", strike = 100.0 }
"#,
        },
        RegistryEntry {
            kind: "strong_convergence",
            description: "Strong error of EM/Milstein against the exact scalar GBM path, with fitted orders",
            columns: &["scheme", "h", "strong_error", "fitted_slope"],
            example: r#"name = "strong"
seed = 1
[experiment]
kind = "strong_convergence"
mu = 0.05
sigma = 0.2
x0 = 1.0
t_end = 1.0
h_exponents = [3, 4, 5]
n = 1000
schemes = ["em", "milstein"]
"#,
        },
        RegistryEntry {
            kind: "mlmc_cost",
            description: "Level variance decay and classical / simulated-quantum MLMC cost against the target error",
            columns: &["section", "level_or_eps", "h", "mean", "variance", "estimate", "cost", "queries"],
            example: r#"name = "mlmc"
seed = 1
[experiment]
kind = "mlmc_cost"
mu = 0.05
sigma = 0.2
x0 = 1.0
strike = 1.0
t_mon = 1
h0 = 1.0
scheme = "milstein"
eps = [0.02, 0.01]
alpha = 1.0
beta = 2.0
gamma = 1.0
pilot_n = 2000
n_ref = 2000
variance_levels = 4
variance_n = 2000
"#,
        },
        RegistryEntry {
            kind: "qae_scaling",
            description: "Simulated amplitude estimation: RMSE against the grid size and exact recovery of on-grid amplitudes",
            columns: &["m_bits", "grid", "rmse", "exact_rmse", "bound", "queries"],
            example: r#"name = "qae"
seed = 1
[experiment]
kind = "qae_scaling"
amplitude = 0.3
m_bits = [4, 5, 6, 7]
reps = 1000
target_bits = 7
on_grid_reps = 10
"#,
        },
        RegistryEntry {
            kind: "truncation_check",
            description: "Tail bounds and truncation radii against measured tails and masked contributions",
            columns: &["family", "case", "measured", "bound", "pass"],
            example: r#"name = "trunc"
seed = 1
[experiment]
kind = "truncation_check"
left_endpoint = { n = [4, 8] }
"#,
        },
        RegistryEntry {
            kind: "resource_report",
            description: "Gate-count terms, bit budgets, Heston feasibility and state-preparation degree/TVD analysis",
            columns: &["section", "item", "key", "value"],
            example: r#"name = "resources"
seed = 1
[experiment]
kind = "resource_report"
[[experiment.gates]]
model = "cir"
settings = { t = 4, d = 1, log_n = 10, b = 20.0, r = 4.0, big_b = 1.0, eps = 0.001, n_f = 0.0, z_p = 1.0 }
"#,
        },
        RegistryEntry {
            kind: "char_validate",
            description: "Transition laws and characteristic functions against empirical draws",
            columns: &["target", "case", "empirical", "reference", "tolerance", "pass"],
            example: r#"name = "levy"
seed = 1
[experiment]
kind = "char_validate"
target = "levy"
x = [0.5]
r2 = [1.0]
n_cond = 1000
tol = 0.1
mgf_x = 0.5
mgf_n = 1000
mgf_tol = 0.1
"#,
        },
        RegistryEntry {
            kind: "moment_explosion",
            description: "Moment explosion times by case with a Riccati oracle, and an optional Monte Carlo divergence probe",
            columns: &["case", "kappa", "sigma", "rho", "omega", "a", "b", "c", "regime", "t_star", "riccati"],
            example: r#"name = "explosion"
seed = 1
[experiment]
kind = "moment_explosion"
cases = [{ kappa = 1.0, sigma = 0.5, rho = 0.2, omega = 1.0 }]
"#,
        },
    ]
}

// ------------------------------------------------------------------- run

pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let root = RngStream::new(cfg.seed, 0);
    match &cfg.experiment {
        Experiment::Price(c) => run_price(c, &root),
        Experiment::StrongConvergence(c) => run_strong(c, &root),
        Experiment::MlmcCost(c) => run_mlmc(c, &root),
        Experiment::QaeScaling(c) => run_qae(c, &root),
        Experiment::TruncationCheck(c) => run_trunc(c, &root),
        Experiment::ResourceReport(c) => run_resources(c),
        Experiment::CharValidate(c) => run_char(c, &root),
        Experiment::MomentExplosion(c) => run_moments(c, &root),
    }
}

/// Runs on a dedicated pool of `threads` workers.
pub fn run_with_threads(cfg: &ExperimentConfig, threads: usize) -> Result<ExperimentOutput> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| run(cfg))
}

/// Undiscounted closed-form price for a single-asset GBM European payoff.
fn gbm_oracle(model: &ModelCfg, payoff: &PayoffCfg) -> Option<f64> {
    let ModelCfg::Gbm { s0, sigma, mu, drift, t, delta, .. } = model else { return None };
    if s0.len() != 1 {
        return None;
    }
    let mu = mu.as_ref().map_or(0.0, |m| m[0]);
    let tt = *t as f64 * delta;
    let r = match drift {
        DriftMode::Martingale => mu,
        DriftMode::Raw => mu + 0.5 * sigma[0] * sigma[0],
    };
    let g = (r * tt).exp();
    match payoff.kind {
        PayoffName::EuropeanCall => Some(g * bs_call(s0[0], payoff.strike, r, sigma[0], tt)),
        PayoffName::EuropeanPut => Some(g * bs_put(s0[0], payoff.strike, r, sigma[0], tt)),
        _ => None,
    }
}

fn need<T: Copy>(x: Option<T>, what: &str) -> Result<T> {
    x.ok_or_else(|| Error::Config(format!("missing field `{what}`")))
}

fn run_price(c: &PriceCfg, root: &RngStream) -> Result<ExperimentOutput> {
    let payoff = c.payoff.build()?;
    let oracle = gbm_oracle(&c.model, &c.payoff);
    let mut out = ExperimentOutput::new(&["method", "estimate", "stderr", "ci_lo", "ci_hi", "oracle", "n", "bits", "radius"]);
    match c.method {
        PriceMethod::Mci => {
            let n = need(c.n, "n")?;
            let src = c.model.source()?;
            let rep = mci_price(src.as_ref(), &payoff, n, root)?;
            let (lo, hi) = rep.ci95();
            out.row(vec!["mci".into(), rep.estimate.into(), rep.stderr.into(), lo.into(), hi.into(), oracle.unwrap_or(f64::NAN).into(), rep.n.into(), Cell::I(0), f64::NAN.into()]);
            out.put("estimate", num(rep.estimate));
            out.put("stderr", num(rep.stderr));
            out.put("ci95", json!([num(lo), num(hi)]));
            if let Some(o) = oracle {
                out.put("oracle", num(o));
                out.check("ci_covers_oracle", o, format!("in [{}, {}]", fmt_f64(lo), fmt_f64(hi)), rep.covers(o));
            }
        }
        PriceMethod::DiscreteSum => {
            let ModelCfg::Gbm { s0, sigma, mu, drift, t, delta, .. } = &c.model else {
                return Err(Error::Config("discrete_sum pricing supports single-asset gbm".into()));
            };
            if s0.len() != 1 || !matches!(c.payoff.kind, PayoffName::EuropeanCall | PayoffName::EuropeanPut) {
                return Err(Error::Config("discrete_sum pricing supports single-asset European payoffs".into()));
            }
            let eps_disc = need(c.eps_disc, "eps_disc")?;
            let eps_trunc = need(c.eps_trunc, "eps_trunc")?;
            let (sig, mu0) = (sigma[0], mu.as_ref().map_or(0.0, |m| m[0]));
            let tt = *t as f64 * delta;
            let drift_t = match drift {
                DriftMode::Martingale => (mu0 - 0.5 * sig * sig) * tt,
                DriftMode::Raw => mu0 * tt,
            };
            let budget = bit_budget(BitModel::GbmRel { sigma: sig }, payoff.slope_bound, *t, 1, eps_disc, eps_trunc)?;
            let radius = gbm_truncation_radius(payoff.slope_bound, *t, 1, sig, eps_trunc)?;
            let s_0 = s0[0];
            let f = |z: &[f64]| {
                let s = s_0 * (drift_t + sig * tt.sqrt() * z[0]).exp();
                payoff.evaluate(&[s], 1, 1).unwrap_or(f64::NAN)
            };
            let price_at = |bits: u32| -> Result<f64> {
                let q = build_qsample(&normal_pdf, -radius, radius, bits, QsampleMode::LeftEndpoint)?;
                let dq = DiscreteQsample::product(vec![q])?;
                Ok(crate::qsim::encode_payoff_fn(&dq, &f, "gbm")?.price())
            };
            let bits = budget.bits_per_primitive;
            let p = price_at(bits)?;
            let fine = price_at(bits + 2)?;
            let rel = ((p - fine) / fine).abs();
            out.row(vec!["discrete_sum".into(), p.into(), 0.0.into(), p.into(), p.into(), oracle.unwrap_or(f64::NAN).into(), Cell::I(1 << bits), bits.into(), radius.into()]);
            out.row(vec!["discrete_sum_refined".into(), fine.into(), 0.0.into(), fine.into(), fine.into(), oracle.unwrap_or(f64::NAN).into(), Cell::I(1 << (bits + 2)), (bits + 2).into(), radius.into()]);
            out.put("estimate", num(p));
            out.put("bits", json!(bits));
            out.put("radius", num(radius));
            out.check("refinement_relative_error", rel, format!("<= eps_disc = {eps_disc}"), rel <= eps_disc);
            if let Some(o) = oracle {
                let err = (p - o).abs();
                out.put("oracle", num(o));
                out.put("abs_error", num(err));
                out.check("within_eps_total", err, format!("<= {}", eps_disc + eps_trunc), err <= eps_disc + eps_trunc);
            }
        }
    }
    Ok(out)
}

fn run_strong(c: &StrongCfg, root: &RngStream) -> Result<ExperimentOutput> {
    let mut out = ExperimentOutput::new(&["scheme", "h", "strong_error", "fitted_slope"]);
    let mut slopes = Map::new();
    for (si, &scheme) in c.schemes.iter().enumerate() {
        let mut lh = Vec::new();
        let mut le = Vec::new();
        let mut rows = Vec::new();
        for (hi, &k) in c.h_exponents.iter().enumerate() {
            let h = 2f64.powi(-(k as i32));
            let ms = strong_error_gbm(c.mu, c.sigma, c.x0, c.t_end, h, scheme, c.n, &root.child((si * 1000 + hi) as u64))?;
            let e = ms.sqrt();
            lh.push(h.ln());
            le.push(e.ln());
            rows.push((h, e));
        }
        let slope = fit_slope(&lh, &le);
        let name = scheme_name(scheme);
        for (h, e) in rows {
            out.row(vec![name.into(), h.into(), e.into(), slope.into()]);
        }
        slopes.insert(name.into(), num(slope));
        for ex in c.expect.iter().filter(|e| e.scheme == scheme) {
            out.check(format!("{name}_order"), slope, format!("{} ± {}", ex.order, ex.tol), (slope - ex.order).abs() <= ex.tol);
        }
    }
    out.put("fitted_slope", Value::Object(slopes));
    Ok(out)
}

fn scheme_name(s: Scheme) -> &'static str {
    match s {
        Scheme::Em => "em",
        Scheme::Milstein => "milstein",
    }
}

fn run_mlmc(c: &MlmcCfg, root: &RngStream) -> Result<ExperimentOutput> {
    let prob = MlmcProblem { spec: SdeSpec::gbm(c.mu, c.sigma, c.x0), scheme: c.scheme, t_mon: c.t_mon, h0: c.h0, payoff: Payoff::european_call(c.strike) };
    let mut out = ExperimentOutput::new(&["section", "level_or_eps", "h", "mean", "variance", "estimate", "cost", "queries"]);
    // level variance decay on a fixed sample size
    let probe = root.child(0);
    let mut levels = Vec::new();
    let mut hs = Vec::new();
    for l in 0..=c.variance_levels {
        let (y, steps) = prob.level_samples(l, c.variance_n, &probe.child(l as u64))?;
        let s = Stats::from_slice(&y);
        let h = c.h0 / (1u64 << l) as f64;
        out.row(vec!["level".into(), Cell::F(l as f64), h.into(), s.mean.into(), s.variance().into(), f64::NAN.into(), (steps as f64).into(), Cell::I(0)]);
        levels.push(crate::mc::LevelReport { level: l, n: s.n, mean: s.mean, variance: s.variance(), steps, cost: 0.0, queries: None });
        hs.push(h);
    }
    let (alpha_hat, beta_hat) = fit_rates(&levels, &hs);
    out.put("alpha_hat", num(alpha_hat));
    out.put("beta_hat", num(beta_hat));
    if let Some(e) = c.expect_beta {
        out.check("variance_slope_beta", beta_hat, e.describe(), e.holds(beta_hat));
    }
    let (c1, c2) = prob.pilot_constants(c.alpha, c.beta, c.pilot_n, &root.child(1))?;
    out.put("c1", num(c1));
    out.put("c2", num(c2));
    let (mut le, mut lc) = (Vec::new(), Vec::new());
    for (i, &eps) in c.eps.iter().enumerate() {
        let sch = mlmc_schedule(c1, c2, c.alpha, c.beta, c.gamma, 1.0, eps, 2, c.h0)?;
        let rep = mlmc_price(&prob, &sch, &root.child(2 + i as u64))?;
        out.row(vec!["classical".into(), eps.into(), f64::NAN.into(), f64::NAN.into(), f64::NAN.into(), rep.estimate.into(), rep.total_cost.into(), Cell::I(0)]);
        le.push(eps.ln());
        lc.push(rep.total_cost.ln());
    }
    let (mut lqe, mut lq, mut lqq) = (Vec::new(), Vec::new(), Vec::new());
    for (i, &eps) in c.quantum_eps.as_ref().unwrap_or(&c.eps).iter().enumerate() {
        let qsch = mlmc_schedule(c1, c2, c.alpha, c.beta, c.gamma, 2.0, eps, 2, c.h0)?;
        let qrep = simulated_quantum_mlmc(&prob, &qsch, c.n_ref, &root.child(1000 + i as u64))?;
        let queries = qrep.queries.unwrap_or(0);
        out.row(vec!["quantum".into(), eps.into(), f64::NAN.into(), f64::NAN.into(), f64::NAN.into(), qrep.estimate.into(), qrep.total_cost.into(), queries.into()]);
        lqe.push(eps.ln());
        lq.push(qrep.total_cost.ln());
        lqq.push((queries as f64).ln());
    }
    if le.len() >= 2 {
        let cs = fit_slope(&le, &lc);
        out.put("classical_cost_slope", num(cs));
        if let Some(e) = c.expect_classical_slope {
            out.check("classical_cost_slope", cs, e.describe(), e.holds(cs));
        }
    }
    if lqe.len() >= 2 {
        let qs = fit_slope(&lqe, &lq);
        let qq = fit_slope(&lqe, &lqq);
        out.put("quantum_cost_slope", num(qs));
        out.put("quantum_query_slope", num(qq));
        if let Some(e) = c.expect_quantum_slope {
            out.check("quantum_query_slope", qq, e.describe(), e.holds(qq));
        }
    }
    Ok(out)
}

fn run_qae(c: &QaeCfg, root: &RngStream) -> Result<ExperimentOutput> {
    let mut out = ExperimentOutput::new(&["m_bits", "grid", "rmse", "exact_rmse", "bound", "queries"]);
    let (mut lm, mut lr) = (Vec::new(), Vec::new());
    let mut within = Map::new();
    for (i, &m) in c.m_bits.iter().enumerate() {
        let mut s = root.child(i as u64);
        let mut sq = 0.0;
        let mut hits = 0usize;
        let bound = qae_error_bound(m);
        let mut queries = 0;
        for _ in 0..c.reps {
            let r = qae_estimate(c.amplitude, m, &mut s)?;
            let e = r.estimate - c.amplitude;
            sq += e * e;
            hits += (e.abs() <= bound) as usize;
            queries = r.queries;
        }
        let rmse = (sq / c.reps as f64).sqrt();
        let exact = QaeDistribution::new(c.amplitude, m)?.exact_moments().1.sqrt();
        out.row(vec![m.into(), Cell::I(1 << m), rmse.into(), exact.into(), bound.into(), queries.into()]);
        lm.push(((1u64 << m) as f64).ln());
        lr.push(rmse.ln());
        within.insert(m.to_string(), num(hits as f64 / c.reps as f64));
        if m == c.target_bits {
            out.put("rmse_at_target", num(rmse));
            out.put("exact_rmse_at_target", num(exact));
            out.check("rmse_within_bound", rmse, format!("<= pi/M + pi^2/M^2 = {}", fmt_f64(bound)), rmse <= bound);
        }
    }
    out.put("fraction_within_bound", Value::Object(within));
    let slope = fit_slope(&lm, &lr);
    out.put("rmse_slope", num(slope));
    if let Some(e) = c.expect_slope {
        out.check("rmse_slope_vs_grid", slope, e.describe(), e.holds(slope));
    }
    // on-grid amplitudes sin²(πy/M) are read out exactly
    let mut worst: f64 = 0.0;
    let mut s = root.child(1 << 20);
    for &m in &c.m_bits {
        let big_m = 1usize << m;
        for y in 0..=big_m / 2 {
            let a = (std::f64::consts::PI * y as f64 / big_m as f64).sin().powi(2);
            for _ in 0..c.on_grid_reps {
                worst = worst.max((qae_estimate(a, m, &mut s)?.estimate - a).abs());
            }
        }
    }
    out.put("on_grid_max_error", num(worst));
    out.check("on_grid_exact", worst, "<= 1e-12", worst <= 1e-12);
    Ok(out)
}

// -------------------------------------------------------- truncation check

fn run_trunc(c: &TruncCfg, root: &RngStream) -> Result<ExperimentOutput> {
    let mut out = ExperimentOutput::new(&["family", "case", "measured", "bound", "pass"]);
    let mut violations: Map<String, Value> = Map::new();
    let mut record = |out: &mut ExperimentOutput, family: &str, case: String, measured: f64, bound: f64| {
        let pass = measured <= bound;
        out.row(vec![family.into(), case.into(), measured.into(), bound.into(), pass.into()]);
        let e = violations.entry(family.to_string()).or_insert(json!(0));
        if !pass {
            *e = json!(e.as_u64().unwrap_or(0) + 1);
        }
    };

    if let Some(t) = &c.chi2_tail {
        for (i, &r) in t.dof.iter().enumerate() {
            let draws: Vec<f64> = par_chunks(t.n, &root.child(100 + i as u64), |rg, s| rg.map(|_| sample_central_chi2(r, s)).collect::<Vec<_>>())
                .into_iter()
                .flatten()
                .collect();
            for &b in &t.b {
                let bound = chi2_tail_bound(r, b);
                let exact = sf_chi2(&ChiSquareSpec::central(r), b)?;
                let freq = draws.iter().filter(|&&y| y >= b).count() as f64 / t.n as f64;
                record(&mut out, "chi2_tail_exact", format!("r={r} b={b}"), exact, bound);
                record(&mut out, "chi2_tail_mc", format!("r={r} b={b}"), freq, bound);
            }
        }
    }

    if let Some(t) = &c.int_cir_tail {
        let cir = CirParams::new(t.kappa, t.theta, t.sigma, t.v_start, t.delta)?;
        out.put("int_cir_tail_half_step", num(t.delta / 2.0));
        out.put("int_cir_tail_feller", json!(cir.feller()));
        let sampler = IntegratedCirSampler::new(cir, IcirSettings::default())?;
        let draws: Vec<f64> = par_chunks(t.n, &root.child(200), |rg, s| rg.map(|_| sampler.sample(t.v_start, t.v_end, s)).collect::<Result<Vec<_>>>())
            .into_iter()
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
        let mean = Stats::from_slice(&draws).mean;
        for &m in &t.x_over_mean {
            let x = m * mean;
            let freq = draws.iter().filter(|&&v| v >= x).count() as f64 / t.n as f64;
            record(&mut out, "int_cir_tail", format!("x={m}*mean"), freq, integrated_cir_tail(&cir, t.v_start, t.v_end, x));
        }
    }

    if let Some(t) = &c.left_endpoint {
        for &n in &t.n {
            for (name, lo, hi, exact) in left_endpoint_battery() {
                let (_, err) = left_endpoint_check(|x| battery_f(name, x), &lo, &hi, n, exact)?;
                let g = cell_gradient_bounds(&lo, &hi, n, |a, b| battery_grad(name, a, b));
                let bound = left_endpoint_bound(&g, &lo, &hi, n)?;
                record(&mut out, "left_endpoint", format!("{name} n={n}"), err, bound);
            }
        }
    }

    if let Some(g) = &c.gbm_radius {
        for (i, case) in g.cases.iter().enumerate() {
            let r = gbm_truncation_radius(1.0, case.t, case.d, case.sigma, case.eps)?;
            let masked = gbm_masked_contribution(case, r, g.n, &root.child(300 + i as u64));
            record(&mut out, "gbm_radius", format!("T={} d={} eps={}", case.t, case.d, case.eps), masked, case.eps);
        }
    }

    if let Some(g) = &c.cir_radius {
        let p = CirParams::new(g.kappa, g.theta, g.sigma, g.v0, g.delta)?;
        let tr = cir_truncation(g.b, g.t, p.eta() - 1.0, g.eps)?;
        let model = CirModel::new(p, g.t)?;
        let parts = par_chunks(g.n, &root.child(400), |rg, s| -> Result<f64> {
            let batch = model.simulate(rg.len(), s)?;
            let mut acc = 0.0;
            for path in 0..batch.n_paths {
                let r = path * g.t..(path + 1) * g.t;
                let masked = batch.increments.chi2[r.clone()].iter().any(|&y| y < tr.b_lower || y > tr.b_upper)
                    || batch.increments.gaussian[r].iter().any(|z| z.abs() > tr.a);
                if masked {
                    acc += g.b * batch.path(path).iter().sum::<f64>();
                }
            }
            Ok(acc)
        });
        let total: f64 = parts.into_iter().collect::<Result<Vec<_>>>()?.iter().sum();
        out.put("cir_truncation", json!({"b_lower": num(tr.b_lower), "b_upper": num(tr.b_upper), "a": num(tr.a)}));
        record(&mut out, "cir_radius", format!("eta={} T={} eps={}", p.eta(), g.t, g.eps), total / g.n as f64, g.eps);
    }

    if let Some(g) = &c.milstein_radius {
        let r = milstein_truncation(1.0, g.x0, g.t, 1, g.eps)?;
        let gap = milstein_truncation_gap(g, r, &root.child(500))?;
        record(&mut out, "milstein_radius", format!("T={} eps={}", g.t, g.eps), gap, g.eps);
    }

    if let Some(g) = &c.heston_radius {
        let cir = CirParams::new(g.kappa, g.theta, g.sigma, g.v0, g.delta)?;
        let params = HestonParams::single(cir, 0.0, g.rho, 1.0)?;
        let budget = heston_truncation(&params, g.b, g.t, 1, g.eps)?;
        let (a4, a3) = budget.int_cir.unwrap_or((0.0, f64::INFINITY));
        let rad = budget.gaussian.unwrap_or(f64::INFINITY);
        let model = HestonModel::new(params, g.t, IcirSettings::default())?;
        let parts = par_chunks(g.n, &root.child(600), |rg, s| -> Result<f64> {
            let batch = model.simulate(rg.len(), s)?;
            let mut acc = 0.0;
            for path in 0..batch.n_paths {
                let r = path * g.t..(path + 1) * g.t;
                let xs = &batch.increments.int_cir[r.clone()];
                let masked = batch.increments.gaussian[r].iter().any(|w| w.abs() > rad) || xs.iter().sum::<f64>() > a3 || xs.iter().any(|&x| x < a4);
                if masked {
                    acc += g.b * batch.path(path).iter().sum::<f64>();
                }
            }
            Ok(acc)
        });
        let total: f64 = parts.into_iter().collect::<Result<Vec<_>>>()?.iter().sum();
        out.put("heston_truncation", serde_json::to_value(&budget).unwrap_or(Value::Null));
        record(&mut out, "heston_radius", format!("T={} eps={}", g.t, g.eps), total / g.n as f64, g.eps);
    }

    let total: u64 = violations.values().map(|v| v.as_u64().unwrap_or(0)).sum();
    out.put("violations", Value::Object(violations));
    out.check("zero_violations", total as f64, "== 0", total == 0);
    Ok(out)
}

type BoxSpec = (&'static str, Vec<f64>, Vec<f64>, f64);

fn left_endpoint_battery() -> Vec<BoxSpec> {
    vec![
        ("x", vec![0.0], vec![1.0], 0.5),
        ("exp", vec![0.0], vec![2.0], 2f64.exp() - 1.0),
        ("xy", vec![0.0, 0.0], vec![1.0, 1.0], 0.25),
        ("sin_cos_sq", vec![0.0, 0.0, 0.0], vec![1.0, 1.0, 1.0], (1.0 - 1f64.cos()) + 1f64.sin() + 1.0 / 3.0),
    ]
}

fn battery_f(name: &str, x: &[f64]) -> f64 {
    match name {
        "x" => x[0],
        "exp" => x[0].exp(),
        "xy" => x[0] * x[1],
        _ => x[0].sin() + x[1].cos() + x[2] * x[2],
    }
}

/// sup‖∇f‖∞ over the cell [a, b]; all boxes sit in the positive orthant
/// inside [0, π/2] where these are monotone.
fn battery_grad(name: &str, a: &[f64], b: &[f64]) -> f64 {
    match name {
        "x" => 1.0,
        "exp" => b[0].exp(),
        "xy" => b[0].max(b[1]),
        _ => a[0].cos().max(b[1].sin()).max(2.0 * b[2]),
    }
}

/// E[f(S)·1{some Gaussian outside [−R, R]}] for a B = 1 call on an
/// equally weighted d-asset GBM basket over T unit steps.
fn gbm_masked_contribution(case: &GbmRadiusCase, r: f64, n: usize, stream: &RngStream) -> f64 {
    let (t, d, sig) = (case.t, case.d, case.sigma);
    let parts = par_chunks(n, stream, |rg, s| {
        let mut acc = 0.0;
        let mut logs = vec![0.0; d];
        for _ in rg {
            logs.fill(0.0);
            let mut masked = false;
            for _ in 0..t {
                for l in logs.iter_mut() {
                    let z = s.normal();
                    masked |= z.abs() > r;
                    *l += -0.5 * sig * sig + sig * z;
                }
            }
            if masked {
                let basket = logs.iter().map(|l| l.exp()).sum::<f64>() / d as f64;
                acc += (basket - 1.0).max(0.0);
            }
        }
        acc
    });
    parts.iter().sum::<f64>() / n as f64
}

/// |E[f(X̂_trunc)] − E[f(X̂)]| for scalar GBM under Milstein with unit
/// steps, where the truncated path clamps each normalized increment to R.
fn milstein_truncation_gap(g: &MilsteinRadiusCfg, r: f64, stream: &RngStream) -> Result<f64> {
    let spec = SdeSpec::gbm(g.mu, g.sigma, g.x0);
    let parts = par_chunks(g.n, stream, |rg, s| -> Result<f64> {
        let mut st = Stepper::new(&spec);
        let (mut x, mut y) = ([g.x0], [g.x0]);
        let mut o = [0.0];
        let mut acc = 0.0;
        for _ in rg {
            x[0] = g.x0;
            y[0] = g.x0;
            for _ in 0..g.t {
                let z = s.normal();
                st.milstein(&x, 1.0, &[z], None, &mut o)?;
                x[0] = o[0];
                st.milstein(&y, 1.0, &[z.clamp(-r, r)], None, &mut o)?;
                y[0] = o[0];
            }
            acc += (y[0] - g.strike).max(0.0) - (x[0] - g.strike).max(0.0);
        }
        Ok(acc)
    });
    let total: f64 = parts.into_iter().collect::<Result<Vec<_>>>()?.iter().sum();
    Ok((total / g.n as f64).abs())
}

// ------------------------------------------------------------- resources

fn run_resources(c: &ResourceCfg) -> Result<ExperimentOutput> {
    let mut out = ExperimentOutput::new(&["section", "item", "key", "value"]);
    let mut gate_reports = Vec::new();
    for (i, g) in c.gates.iter().enumerate() {
        let rep = gate_count(g.model, &g.settings)?;
        let item = format!("{i}:{:?}", g.model).to_lowercase();
        for t in &rep.terms {
            out.row(vec!["gates".into(), item.clone().into(), t.name.clone().into(), t.value.into()]);
        }
        out.row(vec!["gates".into(), item.clone().into(), "total".into(), rep.gate_total.into()]);
        out.row(vec!["gates".into(), item.clone().into(), "total_qubits".into(), (rep.total_qubits as f64).into()]);
        out.row(vec!["gates".into(), item.clone().into(), "qae_queries".into(), (rep.qae_queries as f64).into()]);
        let sum: f64 = rep.terms.iter().map(|t| t.value).sum();
        out.check(format!("{item}_total_is_sum"), rep.gate_total, format!("== {}", fmt_f64(sum)), rep.gate_total == sum);
        gate_reports.push(serde_json::to_value(&rep).unwrap_or(Value::Null));
    }
    if !gate_reports.is_empty() {
        out.put("gates", Value::Array(gate_reports));
    }
    let mut bits = Vec::new();
    for (i, b) in c.bits.iter().enumerate() {
        let bb = bit_budget(b.model, b.b, b.t, b.d, b.eps_disc, b.eps_trunc)?;
        let item = format!("{i}");
        out.row(vec!["bits".into(), item.clone().into(), "bits_per_primitive".into(), (bb.bits_per_primitive as f64).into()]);
        out.row(vec!["bits".into(), item.clone().into(), "total_qubits".into(), (bb.total_qubits as f64).into()]);
        if let BitModel::GbmRel { sigma } = b.model {
            let rel = gbm_refinement_error(sigma, b.t, bb.bits_per_primitive, b.eps_trunc)?;
            out.row(vec!["bits".into(), item.clone().into(), "refinement_relative_error".into(), rel.into()]);
            out.check(format!("bits_{i}_gbm_refinement"), rel, format!("<= {}", b.eps_disc), rel <= b.eps_disc);
        }
        bits.push(serde_json::to_value(&bb).unwrap_or(Value::Null));
    }
    if !bits.is_empty() {
        out.put("bits", Value::Array(bits));
    }
    for (i, h) in c.heston_feasibility.iter().enumerate() {
        let cir = CirParams::new(h.kappa, h.theta, h.sigma, h.v0, h.delta)?;
        let params = HestonParams::single(cir, 0.0, h.rho, 1.0)?;
        let budget = heston_truncation(&params, h.b, h.t, 1, h.eps)?;
        out.row(vec!["heston".into(), format!("{i}").into(), "radius".into(), budget.gaussian.unwrap_or(f64::NAN).into()]);
        out.put(&format!("heston_{i}"), serde_json::to_value(&budget).unwrap_or(Value::Null));
    }
    if let Some(sp) = &c.stateprep {
        run_stateprep(sp, &mut out)?;
    }
    Ok(out)
}

/// Relative change of a one-asset terminal call discrete sum when the grid
/// is refined 4×.
fn gbm_refinement_error(sigma: f64, t: usize, bits: u32, eps_trunc: f64) -> Result<f64> {
    let tt = t as f64;
    let r = gbm_truncation_radius(1.0, t, 1, sigma, eps_trunc)?;
    let f = |z: &[f64]| ((-0.5 * sigma * sigma * tt + sigma * tt.sqrt() * z[0]).exp() - 1.0).max(0.0);
    let price = |b: u32| -> Result<f64> {
        let q = DiscreteQsample::product(vec![build_qsample(&normal_pdf, -r, r, b, QsampleMode::LeftEndpoint)?])?;
        Ok(crate::qsim::encode_payoff_fn(&q, &f, "call")?.price())
    };
    let (p, fine) = (price(bits)?, price(bits + 2)?);
    Ok(((p - fine) / fine).abs())
}

fn run_stateprep(sp: &StatePrepCfg, out: &mut ExperimentOutput) -> Result<()> {
    let mut ratios = Map::new();
    let mut tvd_checked = 0usize;
    let mut tvd_violations = 0usize;
    for &b in &sp.half_widths {
        let (mut x, mut y) = (Vec::new(), Vec::new());
        for &eps in &sp.eps {
            if let Some(deg) = required_degree(&normal_pdf, -b, b, eps, sp.max_degree) {
                out.row(vec!["stateprep_degree".into(), format!("b={b}").into(), format!("eps={eps}").into(), (deg as f64).into()]);
                x.push((1.0 / eps).ln());
                y.push(deg as f64);
            } else {
                out.row(vec!["stateprep_degree".into(), format!("b={b}").into(), format!("eps={eps}").into(), f64::NAN.into()]);
            }
        }
        let slope = if x.len() >= 2 { fit_slope(&x, &y) } else { f64::NAN };
        let ratio = slope / b;
        out.row(vec!["stateprep_slope".into(), format!("b={b}").into(), "slope_over_b".into(), ratio.into()]);
        ratios.insert(format!("{b}"), num(ratio));
        if let Some(e) = sp.expect_slope_ratio {
            out.check(format!("degree_slope_b{b}"), ratio, e.describe(), e.holds(ratio));
        }
        for &deg in &sp.tvd_degrees {
            let rep = stateprep_fidelity(&normal_pdf, -b, b, sp.n_bits, deg)?;
            for &eps in &sp.eps {
                let delta = rep.delta_for(eps, 2.0 * b);
                if rep.uniform_error <= delta {
                    tvd_checked += 1;
                    let ok = rep.tvd <= eps;
                    tvd_violations += (!ok) as usize;
                    out.row(vec!["stateprep_tvd".into(), format!("b={b} degree={deg}").into(), format!("eps={eps}").into(), rep.tvd.into()]);
                }
            }
        }
    }
    out.put("degree_slope_over_b", Value::Object(ratios));
    out.put("tvd_contract_cases", json!(tvd_checked));
    out.check("tvd_contract", tvd_violations as f64, format!("0 violations over {tvd_checked} cases"), tvd_violations == 0 && tvd_checked > 0);
    Ok(())
}

// ----------------------------------------------------- char validation

fn run_char(c: &CharCfg, root: &RngStream) -> Result<ExperimentOutput> {
    let mut out = ExperimentOutput::new(&["target", "case", "empirical", "reference", "tolerance", "pass"]);
    let mut worst: f64 = 0.0;
    match c {
        CharCfg::CirTransition { kappas, sigmas, theta, v0, dt, n, bands } => {
            let mut idx = 0u64;
            for &k in kappas {
                for &s in sigmas {
                    let p = CirParams::new(k, *theta, s, *v0, *dt)?;
                    let kc = CirFfConstants::new(&p, *dt);
                    let draws: Vec<f64> = par_chunks(*n, &root.child(idx), |rg, st| rg.map(|_| cir_step(&kc, *v0, st)).collect::<Result<Vec<_>>>())
                        .into_iter()
                        .collect::<Result<Vec<_>>>()?
                        .into_iter()
                        .flatten()
                        .collect();
                    idx += 1;
                    let st = Stats::from_slice(&draws);
                    let var = st.variance();
                    let m4 = draws.iter().map(|x| (x - st.mean).powi(4)).sum::<f64>() / *n as f64;
                    let (em, ev) = cir_conditional_moments(&p, *v0, *dt);
                    let tm = bands * (var / *n as f64).sqrt();
                    let tv = bands * ((m4 - var * var).max(0.0) / *n as f64).sqrt();
                    let case = format!("kappa={k} sigma={s}");
                    let (pm, pv) = ((st.mean - em).abs() <= tm, (var - ev).abs() <= tv);
                    out.row(vec!["cir_mean".into(), case.clone().into(), st.mean.into(), em.into(), tm.into(), pm.into()]);
                    out.row(vec!["cir_variance".into(), case.into(), var.into(), ev.into(), tv.into(), pv.into()]);
                    worst = worst.max((st.mean - em).abs() / tm).max((var - ev).abs() / tv);
                }
            }
            out.put("max_band_fraction", num(worst));
            out.check("moments_within_bands", worst, "<= 1", worst <= 1.0);
        }
        CharCfg::IntCir { kappa, theta, sigma, delta, v_start, v_end, a, n, tol } => {
            let cir = CirParams::new(*kappa, *theta, *sigma, *v_start, *delta)?;
            let sampler = IntegratedCirSampler::new(cir, IcirSettings::default())?;
            let draws: Vec<f64> = par_chunks(*n, &root.child(0), |rg, st| rg.map(|_| sampler.sample(*v_start, *v_end, st)).collect::<Result<Vec<_>>>())
                .into_iter()
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .flatten()
                .collect();
            let phi = BkCharFn::new(&cir, *v_start, *v_end);
            for &u in a {
                let (re, im) = draws.iter().fold((0.0, 0.0), |(r, i), x| (r + (u * x).cos(), i + (u * x).sin()));
                let emp = num_complex::Complex64::new(re, im) / *n as f64;
                let reference = phi.eval(u);
                let d = (emp - reference).norm();
                worst = worst.max(d);
                out.row(vec!["int_cir_char".into(), format!("a={u}").into(), d.into(), reference.norm().into(), (*tol).into(), (d <= *tol).into()]);
            }
            out.put("max_abs_diff", num(worst));
            out.check("char_within_tol", worst, format!("<= {tol}"), worst <= *tol);
        }
        CharCfg::Levy { x, r2, n_cond, tol, mgf_x, mgf_n, mgf_tol } => {
            let lev = default_sampler()?;
            for (i, &r) in r2.iter().enumerate() {
                let draws: Vec<f64> = par_chunks(*n_cond, &root.child(i as u64), |rg, st| rg.map(|_| lev.quantile(r, st.uniform())).collect::<Result<Vec<_>>>())
                    .into_iter()
                    .collect::<Result<Vec<_>>>()?
                    .into_iter()
                    .flatten()
                    .collect();
                for &u in x {
                    let emp = draws.iter().map(|a| (u * a).cos()).sum::<f64>() / *n_cond as f64;
                    let reference = levy_char(u, r);
                    let d = (emp - reference).abs();
                    worst = worst.max(d);
                    out.row(vec!["levy_cond_char".into(), format!("r2={r} x={u}").into(), emp.into(), reference.into(), (*tol).into(), (d <= *tol).into()]);
                }
            }
            out.put("max_cond_diff", num(worst));
            out.check("conditional_char_within_tol", worst, format!("<= {tol}"), worst <= *tol);
            let parts = par_chunks(*mgf_n, &root.child(1 << 20), |rg, st| -> Result<f64> {
                let mut acc = 0.0;
                for _ in rg {
                    acc += (mgf_x * lev.sample_joint(1.0, st)?.2).exp();
                }
                Ok(acc)
            });
            let mgf = parts.into_iter().collect::<Result<Vec<_>>>()?.iter().sum::<f64>() / *mgf_n as f64;
            let reference = 1.0 / mgf_x.cos();
            let d = (mgf - reference).abs();
            let cf = levy_marginal_char(*mgf_x);
            out.row(vec!["levy_marginal_mgf".into(), format!("x={mgf_x}").into(), mgf.into(), reference.into(), (*mgf_tol).into(), (d <= *mgf_tol).into()]);
            out.put("marginal_mgf", num(mgf));
            out.put("marginal_char_at_x", num(cf));
            out.check("marginal_mgf_within_tol", d, format!("<= {mgf_tol}"), d <= *mgf_tol);
        }
    }
    Ok(out)
}

// ----------------------------------------------------- moment explosion

fn run_moments(c: &MomentCfg, root: &RngStream) -> Result<ExperimentOutput> {
    let mut out = ExperimentOutput::new(&["case", "kappa", "sigma", "rho", "omega", "a", "b", "c", "regime", "t_star", "riccati"]);
    let mut mismatches = 0usize;
    let mut cases = Vec::new();
    for (i, m) in c.cases.iter().enumerate() {
        let e = moment_explosion_raw(m.kappa, m.sigma, m.rho, m.omega)?;
        let oracle = if e.c == 0.0 { f64::INFINITY } else { riccati_blowup_time(e.a, e.b, e.c, 200.0) };
        let time_ok = if e.t_star.is_finite() { ((e.t_star - oracle) / e.t_star).abs() <= c.rel_tol } else { oracle.is_infinite() };
        let case_ok = m.expect.is_none_or(|x| x == e.case);
        mismatches += (!(time_ok && case_ok)) as usize;
        let regime = serde_json::to_value(e.case).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        out.row(vec![
            Cell::I(i as i64),
            m.kappa.into(),
            m.sigma.into(),
            m.rho.into(),
            m.omega.into(),
            e.a.into(),
            e.b.into(),
            e.c.into(),
            regime.clone().into(),
            e.t_star.into(),
            oracle.into(),
        ]);
        cases.push(json!({"T_star": num(e.t_star), "case": regime, "riccati": num(oracle)}));
    }
    if let Some(first) = cases.first() {
        out.put("T_star", first["T_star"].clone());
    }
    out.put("cases", Value::Array(cases));
    out.check("cases_match", mismatches as f64, "0 mismatches against expected case and Riccati time", mismatches == 0);
    if let Some(p) = &c.probe {
        let e = moment_explosion_raw(p.kappa, p.sigma, p.rho, p.omega)?;
        if !e.t_star.is_finite() {
            return Err(Error::Config("probe instance has no finite explosion time".into()));
        }
        let cir = CirParams::new(p.kappa, p.theta, p.sigma, p.theta, 1.0)?;
        let params = HestonParams::single(cir, 0.0, p.rho, 1.0)?;
        let mut probes = Map::new();
        for (j, f) in [0.5, 1.5].into_iter().enumerate() {
            let pr = divergence_probe(&params, p.omega, f * e.t_star, p.n0, p.doublings, &root.child(j as u64))?;
            let key = format!("t={f}T*");
            probes.insert(key.clone(), json!({"t": num(pr.t), "growth": num(pr.growth), "divergent": pr.divergent, "means": pr.means.iter().map(|&m| num(m)).collect::<Vec<_>>()}));
            if f < 1.0 {
                out.check("probe_clears_half", pr.growth, "growth < 2", !pr.divergent);
            } else {
                out.check("probe_flags_one_and_half", pr.growth, "growth >= 2", pr.divergent);
            }
        }
        out.put("probe_t_star", num(e.t_star));
        out.put("probe", Value::Object(probes));
    }
    Ok(out)
}
