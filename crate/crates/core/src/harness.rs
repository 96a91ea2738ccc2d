//! Sweeps over environment gaps, policy mixes, sample sizes and seeds.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{self, GridworldSpec, TransitionDataset};
use crate::error::{Error, Result};
use crate::features::{FeatureMap, Kernel};
use crate::mdp::{self, Policy, TabularMdp};
use crate::measure::{PairMeasure, StateMeasure, TransitionMeasure};
use crate::model::WeightModel;
use crate::qest;
use crate::ratio::{self, PositiveFunctionClass, RatioFitConfig};
use crate::rng;
use crate::weight::{self, MinimaxFitConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    BetaDiceLinear,
    BetaDiceRkhs,
    BetaGradientDice,
    QRoute,
    SimulatorOnly,
    VanillaMis,
    Oracle,
}

impl Estimator {
    pub const ALL: [Estimator; 7] = [
        Estimator::BetaDiceLinear,
        Estimator::BetaDiceRkhs,
        Estimator::BetaGradientDice,
        Estimator::QRoute,
        Estimator::SimulatorOnly,
        Estimator::VanillaMis,
        Estimator::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::BetaDiceLinear => "beta_dice_linear",
            Estimator::BetaDiceRkhs => "beta_dice_rkhs",
            Estimator::BetaGradientDice => "beta_gradient_dice",
            Estimator::QRoute => "q_route",
            Estimator::SimulatorOnly => "simulator_only",
            Estimator::VanillaMis => "vanilla_mis",
            Estimator::Oracle => "oracle",
        }
    }

    fn needs_beta(self) -> bool {
        matches!(self, Estimator::BetaDiceLinear | Estimator::BetaDiceRkhs | Estimator::BetaGradientDice | Estimator::QRoute)
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Estimator::ALL
            .iter()
            .copied()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown estimator '{s}'")))
    }
}

/// Feature class for the closed-form weight estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightFeatures {
    /// One indicator per state, shared across actions.
    StateIndicator,
    /// One indicator per state-action pair.
    OneHot,
}

impl WeightFeatures {
    pub fn build(self, n_states: usize, n_actions: usize) -> FeatureMap {
        match self {
            WeightFeatures::StateIndicator => FeatureMap::state_indicator(n_states, n_actions),
            WeightFeatures::OneHot => FeatureMap::one_hot(n_states, n_actions),
        }
    }
}

fn default_weight_features() -> WeightFeatures {
    WeightFeatures::StateIndicator
}

fn default_ratio() -> RatioFitConfig {
    RatioFitConfig { reg_lambda: 0.0, ..Default::default() }
}

fn default_master_seed() -> u64 {
    0
}

fn default_c_w() -> f64 {
    100.0
}

fn default_rkhs() -> MinimaxFitConfig {
    MinimaxFitConfig { learning_rate_w: 1.0, max_iters: 2000, ..Default::default() }
}

fn default_dice() -> MinimaxFitConfig {
    MinimaxFitConfig { learning_rate_w: 1.0, learning_rate_inner: 1.0, max_iters: 5000, ..Default::default() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub grid: GridworldSpec,
    pub eps_sim: f64,
    pub eps_real_list: Vec<f64>,
    pub delta_list: Vec<f64>,
    pub alpha_list: Vec<f64>,
    pub n_list: Vec<usize>,
    pub seeds: Vec<u64>,
    pub estimators: Vec<Estimator>,
    #[serde(default)]
    pub output_dir: Option<String>,
    #[serde(default = "default_master_seed")]
    pub master_seed: u64,
    /// Simulator-occupancy samples per cell; defaults to `n`.
    #[serde(default)]
    pub sim_samples: Option<usize>,
    /// Initial-state samples per cell; defaults to `n`.
    #[serde(default)]
    pub d0_samples: Option<usize>,
    #[serde(default = "default_ratio")]
    pub ratio: RatioFitConfig,
    /// Class shared by `beta_dice_linear` and `vanilla_mis`.
    #[serde(default = "default_weight_features")]
    pub weight_features: WeightFeatures,
    #[serde(default = "default_rkhs")]
    pub rkhs: MinimaxFitConfig,
    #[serde(default = "default_dice")]
    pub dice: MinimaxFitConfig,
    /// Upper clamp on kernel-fitted weights.
    #[serde(default = "default_c_w")]
    pub c_w: f64,
    /// Divide weight-route estimates by the mean fitted weight.
    #[serde(default)]
    pub normalize_weights: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {v} is outside [0, 1]")))
            }
        };
        unit("eps_sim", self.eps_sim)?;
        for (name, list) in [("eps_real_list", &self.eps_real_list), ("delta_list", &self.delta_list), ("alpha_list", &self.alpha_list)] {
            if list.is_empty() {
                return Err(Error::Config(format!("{name} is empty")));
            }
            for &v in list {
                unit(name, v)?;
            }
        }
        if self.n_list.is_empty() || self.n_list.contains(&0) {
            return Err(Error::Config("n_list must be nonempty with positive sizes".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds is empty".into()));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("estimators is empty".into()));
        }
        let mut ests = self.estimators.clone();
        ests.sort_unstable();
        ests.dedup();
        if ests.len() != self.estimators.len() {
            return Err(Error::Config("estimators must be distinct".into()));
        }
        if self.sim_samples == Some(0) || self.d0_samples == Some(0) {
            return Err(Error::Config("sample counts must be positive".into()));
        }
        if !(self.c_w > 0.0) {
            return Err(Error::Config("c_w must be positive".into()));
        }
        self.ratio.validate().map_err(as_config)?;
        self.rkhs.validate().map_err(as_config)?;
        self.dice.validate().map_err(as_config)?;
        Ok(())
    }

    /// `(eps_real, delta, alpha, n)` tuples in sweep order.
    pub fn env_cells(&self) -> Vec<(f64, f64, f64, usize)> {
        let mut cells = Vec::new();
        for &eps in &self.eps_real_list {
            for &delta in &self.delta_list {
                for &alpha in &self.alpha_list {
                    for &n in &self.n_list {
                        cells.push((eps, delta, alpha, n));
                    }
                }
            }
        }
        cells
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Config(m) => Error::Config(m),
        other => Error::Config(other.to_string()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub estimator: Estimator,
    pub eps_real: f64,
    pub delta: f64,
    pub alpha: f64,
    pub n: usize,
    pub seed: u64,
    pub j_hat: f64,
    pub j_te_exact: f64,
    pub abs_err: f64,
    pub sq_err: f64,
    /// Empty on success; otherwise the failure that replaced the estimate.
    pub error: String,
}

impl ResultRow {
    pub fn is_ok(&self) -> bool {
        self.error.is_empty()
    }
}

/// Everything an estimator may draw on inside one sweep cell.
pub struct CellInputs {
    pub mdp_tr: TabularMdp,
    pub mdp_te: TabularMdp,
    pub spec: GridworldSpec,
    pub target: Policy,
    pub j_te: f64,
    pub j_tr: f64,
    pub real_data: TransitionDataset,
    pub sim_data: TransitionDataset,
    pub d0_data: TransitionDataset,
    pub real: TransitionMeasure,
    pub sim: PairMeasure,
    pub d0: StateMeasure,
}

impl CellInputs {
    /// Builds the environment pair, policies and the three datasets of a cell.
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        spec: &GridworldSpec,
        eps_sim: f64,
        eps_real: f64,
        delta: f64,
        alpha: f64,
        n: usize,
        m: usize,
        n_d0: usize,
        seed: u64,
    ) -> Result<Self> {
        let (mdp_tr, mdp_te) = env::build_gridworld_pair(spec, eps_sim, eps_real)?;
        let base = env::optimal_policy(&mdp_tr)?;
        let behavior = env::mix_policy(&base, delta)?;
        let target = env::mix_policy(&base, alpha)?;
        let mu = mdp::state_action_occupancy(&mdp_te, &behavior)?;
        let j_te = mdp::policy_value(&mdp_te, &target)?;
        let j_tr = mdp::policy_value(&mdp_tr, &target)?;
        let real_data = env::sample_offline_dataset(&mdp_te, &mu, n, rng::derive_seed(seed, 0))?;
        let sim_data = env::sample_simulator_occupancy(&mdp_tr, &target, m, rng::derive_seed(seed, 1))?;
        let d0_data = env::sample_initial_states(&mdp_te, n_d0, rng::derive_seed(seed, 2))?;
        let real = TransitionMeasure::from_dataset(&real_data)?;
        let sim = PairMeasure::from_dataset(&sim_data)?;
        let d0 = StateMeasure::from_dataset(&d0_data)?;
        Ok(Self { mdp_tr, mdp_te, spec: spec.clone(), target, j_te, j_tr, real_data, sim_data, d0_data, real, sim, d0 })
    }

    /// Tabular `beta = d_tr / mu` fitted from simulator vs real samples.
    pub fn fit_beta(&self, cfg: &RatioFitConfig) -> Result<WeightModel> {
        Ok(ratio::fit_density_ratio(&self.sim_data, &self.real_data, &PositiveFunctionClass::tabular(), cfg)?.model)
    }

    pub fn gamma(&self) -> f64 {
        self.mdp_te.gamma()
    }
}

/// Exact `J_tr(pi)`: the value the simulator reports.
pub fn baseline_simulator_only(mdp_tr: &TabularMdp, pi: &Policy) -> Result<f64> {
    mdp::policy_value(mdp_tr, pi)
}

/// Single-ratio estimator: learns `d_te / mu` directly with the linear
/// closed form (`beta = 1`) and averages `w r` over the real data.
pub fn baseline_vanilla_mis(
    real: &TransitionMeasure,
    d0: &StateMeasure,
    pi: &Policy,
    gamma: f64,
    features: &FeatureMap,
    ridge_eps: f64,
) -> Result<f64> {
    let one = WeightModel::constant(real.n_states, real.n_actions, 1.0);
    let sol = weight::linear_weight_solve(features, features, &one, real, d0, pi, gamma, ridge_eps)?;
    weight::ope_estimate_real_rewards(&sol.model, &one, real)
}

fn weight_route(w: &WeightModel, inputs: &CellInputs, normalize: bool) -> Result<f64> {
    if normalize {
        weight::ope_estimate_normalized(w, &inputs.sim)
    } else {
        weight::ope_estimate(w, &inputs.sim)
    }
}

/// Runs one estimator on a prepared cell. `beta` is required by the
/// estimators that reweight with a fitted ratio.
pub fn run_estimator(est: Estimator, inputs: &CellInputs, beta: Option<&WeightModel>, cfg: &ExperimentConfig) -> Result<f64> {
    let (s_n, a_n) = (inputs.mdp_te.n_states(), inputs.mdp_te.n_actions());
    let gamma = inputs.gamma();
    let pi = &inputs.target;
    let beta = || beta.ok_or_else(|| Error::Invalid(format!("{est} needs a fitted ratio")));
    match est {
        Estimator::Oracle => Ok(inputs.j_te),
        Estimator::SimulatorOnly => baseline_simulator_only(&inputs.mdp_tr, pi),
        Estimator::VanillaMis => {
            let phi = cfg.weight_features.build(s_n, a_n);
            baseline_vanilla_mis(&inputs.real, &inputs.d0, pi, gamma, &phi, cfg.rkhs.ridge_eps)
        }
        Estimator::BetaDiceLinear => {
            let phi = cfg.weight_features.build(s_n, a_n);
            let sol = weight::linear_weight_solve(&phi, &phi, beta()?, &inputs.real, &inputs.d0, pi, gamma, cfg.rkhs.ridge_eps)?;
            weight_route(&sol.model, inputs, cfg.normalize_weights)
        }
        Estimator::BetaDiceRkhs => {
            let points: Vec<usize> = inputs.real.items.iter().map(|it| it.s * a_n + it.a).collect();
            let kernel = Kernel::with_median_bandwidth(FeatureMap::grid_embedding(&inputs.spec, a_n), &points)?;
            let init = WeightModel::constant(s_n, a_n, 1.0).with_clamp(Some(0.0), Some(cfg.c_w));
            let fit = weight::rkhs_weight_fit(&init, beta()?, &inputs.real, &inputs.d0, pi, gamma, &kernel, &cfg.rkhs)?;
            weight_route(&fit.model, inputs, cfg.normalize_weights)
        }
        Estimator::BetaGradientDice => {
            let tau = WeightModel::constant(s_n, a_n, 1.0);
            let f = WeightModel::constant(s_n, a_n, 0.0);
            let fit = weight::beta_gradient_dice_fit(&tau, &f, beta()?, &inputs.real, &inputs.sim, &inputs.d0, pi, gamma, &cfg.dice)?;
            weight_route(&fit.tau.with_clamp(Some(0.0), None), inputs, cfg.normalize_weights)
        }
        Estimator::QRoute => {
            let oh = FeatureMap::one_hot(s_n, a_n);
            let r_max = inputs.mdp_te.r_max();
            let sol = qest::linear_q_solve(&oh, &oh, beta()?, &inputs.real, &inputs.sim, pi, gamma, cfg.rkhs.ridge_eps, r_max)?;
            qest::ope_from_q(&sol.model, &inputs.d0, pi, gamma)
        }
    }
}

fn row(est: Estimator, cell: (f64, f64, f64, usize), seed: u64, j_te: f64, outcome: Result<f64>) -> ResultRow {
    let (eps_real, delta, alpha, n) = cell;
    let (j_hat, error) = match outcome {
        Ok(v) if v.is_finite() => (v, String::new()),
        Ok(v) => (f64::NAN, format!("non-finite estimate {v}")),
        Err(e) => (f64::NAN, e.to_string()),
    };
    let abs_err = (j_hat - j_te).abs();
    ResultRow { estimator: est, eps_real, delta, alpha, n, seed, j_hat, j_te_exact: j_te, abs_err, sq_err: abs_err * abs_err, error }
}

fn run_cell(cfg: &ExperimentConfig, cell_index: usize, cell: (f64, f64, f64, usize), seed: u64) -> Vec<ResultRow> {
    let (eps_real, delta, alpha, n) = cell;
    let cell_seed = rng::derive_seed(rng::derive_seed(cfg.master_seed, seed), cell_index as u64);
    let m = cfg.sim_samples.unwrap_or(n);
    let n_d0 = cfg.d0_samples.unwrap_or(n);
    let inputs = match CellInputs::build(&cfg.grid, cfg.eps_sim, eps_real, delta, alpha, n, m, n_d0, cell_seed) {
        Ok(i) => i,
        Err(e) => {
            let msg = e.to_string();
            return cfg
                .estimators
                .iter()
                .map(|&est| row(est, cell, seed, f64::NAN, Err(Error::Invalid(msg.clone()))))
                .collect();
        }
    };
    let beta = if cfg.estimators.iter().any(|e| e.needs_beta()) {
        Some(inputs.fit_beta(&cfg.ratio).map_err(|e| e.to_string()))
    } else {
        None
    };
    cfg.estimators
        .iter()
        .map(|&est| {
            let outcome = match (&beta, est.needs_beta()) {
                (Some(Err(msg)), true) => Err(Error::Invalid(format!("ratio fit failed: {msg}"))),
                (Some(Ok(b)), true) => run_estimator(est, &inputs, Some(b), cfg),
                _ => run_estimator(est, &inputs, None, cfg),
            };
            row(est, cell, seed, inputs.j_te, outcome)
        })
        .collect()
}

/// Runs every `(cell, seed, estimator)` combination. Rows come back in a
/// fixed order regardless of `jobs`; failures become rows with `error` set.
pub fn run_sweep(cfg: &ExperimentConfig, jobs: usize) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let mut tasks = Vec::new();
    for (i, cell) in cfg.env_cells().into_iter().enumerate() {
        for &seed in &cfg.seeds {
            tasks.push((i, cell, seed));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let rows: Vec<Vec<ResultRow>> =
        pool.install(|| tasks.par_iter().map(|&(i, cell, seed)| run_cell(cfg, i, cell, seed)).collect());
    Ok(rows.into_iter().flatten().collect())
}

pub fn write_rows_csv<W: Write>(rows: &[ResultRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows_csv<R: Read>(reader: R) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut rows = Vec::new();
    for r in rdr.deserialize() {
        rows.push(r?);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseEntry {
    pub estimator: Estimator,
    pub eps_real: f64,
    pub delta: f64,
    pub alpha: f64,
    pub n: usize,
    /// `log10` of the mean squared error; `-inf` when every error is zero.
    pub log10_mse: f64,
    pub rows: usize,
    pub failures: usize,
}

/// `log10(mean sq_err)` per estimator and cell. Failed rows are counted,
/// not averaged.
pub fn log10_mse_table(rows: &[ResultRow]) -> Vec<MseEntry> {
    type Key = (Estimator, u64, u64, u64, usize);
    // (sum of sq_err, ok rows, failed rows, cell coordinates)
    type Group = (f64, usize, usize, (f64, f64, f64));
    let mut groups: BTreeMap<Key, Group> = BTreeMap::new();
    for r in rows {
        let key = (r.estimator, r.eps_real.to_bits(), r.delta.to_bits(), r.alpha.to_bits(), r.n);
        let g = groups.entry(key).or_insert((0.0, 0, 0, (r.eps_real, r.delta, r.alpha)));
        if r.is_ok() {
            g.0 += r.sq_err;
            g.1 += 1;
        } else {
            g.2 += 1;
        }
    }
    groups
        .into_iter()
        .map(|((estimator, _, _, _, n), (sum, ok, failed, (eps_real, delta, alpha)))| MseEntry {
            estimator,
            eps_real,
            delta,
            alpha,
            n,
            log10_mse: if ok == 0 { f64::NAN } else { (sum / ok as f64).log10() },
            rows: ok,
            failures: failed,
        })
        .collect()
}

/// Formats a log10 value, spelling out the infinite cases.
pub fn format_log10(v: f64) -> String {
    if v == f64::NEG_INFINITY {
        "-inf".into()
    } else if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.4}")
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len().is_multiple_of(2) {
        0.5 * (values[mid - 1] + values[mid])
    } else {
        values[mid]
    }
}

/// Least-squares slope of `log10(y)` against `log10(x)`.
pub fn log_log_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::Domain("a slope needs at least two sample sizes".into()));
    }
    if points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(Error::Domain("log-log fit needs positive values".into()));
    }
    let lx: Vec<f64> = points.iter().map(|p| p.0.log10()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.log10()).collect();
    let k = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Domain("a slope needs at least two distinct sample sizes".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

/// Slope of `log10(median abs_err)` against `log10(n)` for one estimator.
pub fn rate_fit(rows: &[ResultRow], estimator: Estimator) -> Result<f64> {
    let mut by_n: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.estimator == estimator && r.is_ok()) {
        by_n.entry(r.n).or_default().push(r.abs_err);
    }
    let points: Vec<(f64, f64)> = by_n.into_iter().map(|(n, mut errs)| (n as f64, median(&mut errs))).collect();
    log_log_slope(&points)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub rows: usize,
    pub failures: usize,
    pub table: Vec<MseEntry>,
    pub rate_slopes: BTreeMap<String, Option<f64>>,
}

pub fn summarize(rows: &[ResultRow]) -> SweepSummary {
    let mut ests: Vec<Estimator> = rows.iter().map(|r| r.estimator).collect();
    ests.sort_unstable();
    ests.dedup();
    SweepSummary {
        rows: rows.len(),
        failures: rows.iter().filter(|r| !r.is_ok()).count(),
        table: log10_mse_table(rows),
        rate_slopes: ests.into_iter().map(|e| (e.name().to_string(), rate_fit(rows, e).ok())).collect(),
    }
}

/// Plain-text rendering of a summary.
pub fn render_report(summary: &SweepSummary) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<20} {:>8} {:>6} {:>6} {:>8} {:>10} {:>5} {:>5}\n",
        "estimator", "eps_real", "delta", "alpha", "n", "log10_mse", "rows", "fail"
    ));
    for e in &summary.table {
        out.push_str(&format!(
            "{:<20} {:>8} {:>6} {:>6} {:>8} {:>10} {:>5} {:>5}\n",
            e.estimator.name(),
            e.eps_real,
            e.delta,
            e.alpha,
            e.n,
            format_log10(e.log10_mse),
            e.rows,
            e.failures
        ));
    }
    out.push_str("\nrate slopes (log10 median abs_err vs log10 n)\n");
    for (name, slope) in &summary.rate_slopes {
        let s = slope.map_or("n/a".to_string(), |v| format!("{v:.4}"));
        out.push_str(&format!("{name:<20} {s}\n"));
    }
    out
}

pub fn write_table_csv<W: Write>(table: &[MseEntry], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["estimator", "eps_real", "delta", "alpha", "n", "log10_mse", "rows", "failures"])?;
    for e in table {
        w.write_record([
            e.estimator.name().to_string(),
            e.eps_real.to_string(),
            e.delta.to_string(),
            e.alpha.to_string(),
            e.n.to_string(),
            format_log10(e.log10_mse),
            e.rows.to_string(),
            e.failures.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `results.csv` and `summary.json` under `dir`.
pub fn write_sweep_outputs(rows: &[ResultRow], dir: &Path) -> Result<SweepSummary> {
    std::fs::create_dir_all(dir)?;
    write_rows_csv(rows, std::fs::File::create(dir.join("results.csv"))?)?;
    let summary = summarize(rows);
    std::fs::write(dir.join("summary.json"), summary_json(&summary)?)?;
    Ok(summary)
}

/// JSON for a summary; non-finite table values are written as strings.
pub fn summary_json(summary: &SweepSummary) -> Result<String> {
    let table: Vec<serde_json::Value> = summary
        .table
        .iter()
        .map(|e| {
            let v = if e.log10_mse.is_finite() {
                serde_json::json!(e.log10_mse)
            } else {
                serde_json::json!(format_log10(e.log10_mse))
            };
            serde_json::json!({
                "estimator": e.estimator,
                "eps_real": e.eps_real,
                "delta": e.delta,
                "alpha": e.alpha,
                "n": e.n,
                "log10_mse": v,
                "rows": e.rows,
                "failures": e.failures,
            })
        })
        .collect();
    Ok(serde_json::to_string_pretty(&serde_json::json!({
        "rows": summary.rows,
        "failures": summary.failures,
        "table": table,
        "rate_slopes": summary.rate_slopes,
    }))?)
}

/// Per-fit report written next to an objective trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationReport {
    pub estimator: String,
    pub n: usize,
    pub seed: u64,
    pub j_hat: f64,
    pub j_te_exact: Option<f64>,
    pub loss_trace_path: Option<String>,
}

/// Writes an `iter,objective` trace.
pub fn write_trace_csv<W: Write>(trace: &[f64], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["iter", "objective"])?;
    for (i, v) in trace.iter().enumerate() {
        w.write_record([i.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
