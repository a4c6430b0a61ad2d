//! Simulated grouped-regression datasets and the two p-value experiments:
//! the complete-null test with the group Lasso and the single-group test
//! with the de-biased group Lasso.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{
    cv_report, debias, draw_statistics, importance_sample, pvalue_from_statistics, ProposalComponent,
    ProposalMixture, SamplingOptions, StatisticKind, Target,
};
use crate::model::{build_design, GroupPartition, GroupedDesign};
use crate::noise::NoiseModel;
use crate::rng::child_seed;
use crate::solver::{select_lambda_with, BlockLassoFit, BlockLassoSolver, LambdaRule, LambdaSearch, SolverOptions};

/// Env var holding the worker count.
pub const THREADS_ENV: &str = "BLOCKAUG_THREADS";

/// Sign pattern placed on the first two groups.
pub const V_PATTERN: [f64; 10] = [1.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0, 0.0, 0.0];

const GROUP_TAG: u64 = 0x6772_6f75_70;
const DEBIAS_TAG: u64 = 0x6465_6269_6173;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightScheme {
    /// w_j = √p_j.
    #[default]
    SqrtSize,
    /// w_j = 1.
    Unit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BetaPattern {
    Null,
    HalfV,
    FullV,
}

/// Simulation and experiment settings, read from a TOML file.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub n: usize,
    pub p: usize,
    pub group_size: usize,
    /// Within-group correlation.
    pub rho1: f64,
    /// Between-group correlation.
    pub rho2: f64,
    pub sigma2: f64,
    pub pattern: BetaPattern,
    pub datasets: usize,
    /// Id of the first dataset; ids feed the per-dataset seeds.
    pub first_id: usize,
    pub seed: u64,
    pub active_groups: usize,
    pub lambda_rule: LambdaRule,
    pub weights: WeightScheme,
    pub n_draws: usize,
    pub replicates: usize,
    /// Variance multiplier of the complete-null proposal IS(0, M).
    pub is_multiplier: f64,
    /// Mixture weights and multipliers of the de-biased proposal.
    pub debias_weights: [f64; 2],
    pub debias_multipliers: [f64; 2],
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n: 30,
            p: 100,
            group_size: 10,
            rho1: 0.0,
            rho2: 0.0,
            sigma2: 1.0,
            pattern: BetaPattern::Null,
            datasets: 10,
            first_id: 1,
            seed: 1,
            active_groups: 2,
            lambda_rule: LambdaRule::Entry,
            weights: WeightScheme::SqrtSize,
            n_draws: 10_000,
            replicates: 10,
            is_multiplier: 5.0,
            debias_weights: [0.5, 0.5],
            debias_multipliers: [2.0, 4.0],
        }
    }
}

impl SimulationConfig {
    /// Settings of the three dataset classes: 1 (null), 11 (half v), 21 (full v, ρ₁ = 0.5).
    pub fn table_class(first_id: usize) -> Result<Self> {
        let base = Self::default();
        match first_id {
            1 => Ok(Self { first_id, ..base }),
            11 => Ok(Self { first_id, pattern: BetaPattern::HalfV, ..base }),
            21 => Ok(Self { first_id, pattern: BetaPattern::FullV, rho1: 0.5, ..base }),
            _ => Err(Error::Config(format!("no dataset class starts at {first_id}"))),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let c: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n == 0 || self.p == 0 || self.group_size == 0 {
            return bad("n, p and group_size must be positive");
        }
        if self.p % self.group_size != 0 {
            return bad("p must be a multiple of group_size");
        }
        if self.pattern != BetaPattern::Null && (self.group_size != V_PATTERN.len() || self.p < 2 * self.group_size) {
            return bad("signal patterns need group_size = 10 and at least two groups");
        }
        if !(self.sigma2 > 0.0) {
            return bad("sigma2 must be positive");
        }
        if self.active_groups == 0 || self.active_groups > self.p / self.group_size {
            return bad("active_groups out of range");
        }
        if self.n_draws == 0 || self.replicates < 2 {
            return bad("need n_draws >= 1 and replicates >= 2");
        }
        if !(self.is_multiplier > 0.0) || self.debias_multipliers.iter().any(|m| !(*m > 0.0)) {
            return bad("variance multipliers must be positive");
        }
        if (self.debias_weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 || self.debias_weights.iter().any(|a| !(*a > 0.0))
        {
            return bad("debias_weights must be positive and sum to 1");
        }
        Ok(())
    }

    pub fn num_groups(&self) -> usize {
        self.p / self.group_size
    }

    pub fn dataset_ids(&self) -> std::ops::Range<usize> {
        self.first_id..self.first_id + self.datasets
    }

    pub fn beta0(&self) -> DVector<f64> {
        let mut b = DVector::zeros(self.p);
        let scale = match self.pattern {
            BetaPattern::Null => return b,
            BetaPattern::HalfV => 0.5,
            BetaPattern::FullV => 1.0,
        };
        for k in 0..2 * self.group_size {
            b[k] = scale * V_PATTERN[k % self.group_size];
        }
        b
    }

    pub fn partition(&self) -> Result<GroupPartition> {
        let part = GroupPartition::from_sizes(&vec![self.group_size; self.num_groups()])?;
        match self.weights {
            WeightScheme::SqrtSize => Ok(part),
            WeightScheme::Unit => part.with_weights(vec![1.0; self.num_groups()]),
        }
    }
}

/// Population covariance of the rows of X with its square root and inverse.
#[derive(Debug, Clone)]
pub struct Population {
    pub sigma: DMatrix<f64>,
    pub sigma_sqrt: DMatrix<f64>,
    pub sigma_inv: DMatrix<f64>,
}

impl Population {
    pub fn new(config: &SimulationConfig) -> Result<Self> {
        let p = config.p;
        let g = config.group_size;
        let sigma = DMatrix::from_fn(p, p, |i, j| {
            if i == j {
                1.0
            } else if i / g == j / g {
                config.rho1
            } else {
                config.rho2
            }
        });
        let eig = SymmetricEigen::new(sigma.clone());
        let min = eig.eigenvalues.min();
        if !(min > 1e-12) {
            return Err(Error::Config(format!("covariance is not positive definite (smallest eigenvalue {min:e})")));
        }
        let v = &eig.eigenvectors;
        let root = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
        let inv = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l));
        Ok(Self { sigma_sqrt: v * root * v.transpose(), sigma_inv: v * inv * v.transpose(), sigma })
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub id: usize,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub beta0: DVector<f64>,
}

/// Dataset `id`, deterministic in (seed, id).
pub fn simulate_dataset(config: &SimulationConfig, id: usize) -> Result<Dataset> {
    config.validate()?;
    simulate_with(config, &Population::new(config)?, id)
}

pub fn simulate_with(config: &SimulationConfig, pop: &Population, id: usize) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(child_seed(config.seed, id as u64));
    let z = DMatrix::from_fn(config.n, config.p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let x = z * &pop.sigma_sqrt;
    let beta0 = config.beta0();
    let sd = config.sigma2.sqrt();
    let eps = DVector::from_fn(config.n, |_, _| sd * rng.sample::<f64, _>(StandardNormal));
    let y = &x * &beta0 + eps;
    Ok(Dataset { id, x, y, beta0 })
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetResult {
    pub dataset_id: usize,
    pub lambda: f64,
    pub stat_obs: f64,
    pub log10_qbar: f64,
    pub cv_is: f64,
    pub cv_pb_theory: f64,
    pub log10_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    GroupLasso,
    Debiased,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::GroupLasso => "group-lasso",
            Self::Debiased => "debiased",
        }
    }
}

/// Per-dataset details kept alongside the table row.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetDetail {
    pub pvalues: Vec<f64>,
    pub min_ess: f64,
    pub resampled: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub n_draws: usize,
    pub replicates: usize,
    pub rows: Vec<DatasetResult>,
    pub details: Vec<DatasetDetail>,
    /// (dataset id, reason) for datasets that could not be run.
    pub skipped: Vec<(usize, String)>,
}

impl ExperimentResult {
    pub fn empty(kind: ExperimentKind, seed: u64, n_draws: usize, replicates: usize) -> Self {
        Self { kind, seed, n_draws, replicates, rows: vec![], details: vec![], skipped: vec![] }
    }

    /// Concatenates results of the same kind, e.g. two dataset classes.
    pub fn merge(mut self, other: ExperimentResult) -> Self {
        self.rows.extend(other.rows);
        self.details.extend(other.details);
        self.skipped.extend(other.skipped);
        self
    }
}

fn observed_fit(config: &SimulationConfig, design: &GroupedDesign, y: &DVector<f64>) -> Result<BlockLassoFit> {
    let search = LambdaSearch { rule: config.lambda_rule, ..LambdaSearch::default() };
    let opts = SolverOptions::default();
    let lambda = select_lambda_with(design, y, config.active_groups, &search, &opts)?;
    BlockLassoSolver::with_options(design, opts).solve(y, lambda)
}

struct Plan {
    kind: StatisticKind,
    stat_obs: f64,
    target: Target,
    mixture: ProposalMixture,
    theta: Option<DMatrix<f64>>,
    seed: u64,
}

fn run_plan(
    config: &SimulationConfig,
    design: &GroupedDesign,
    lambda: f64,
    plan: &Plan,
    id: usize,
) -> Result<(DatasetResult, DatasetDetail)> {
    let reps: Vec<Result<(f64, f64, usize)>> = (0..config.replicates)
        .into_par_iter()
        .map(|r| {
            let mut opts = SamplingOptions::new(config.n_draws, plan.seed);
            opts.replicate = r as u64;
            opts.theta = plan.theta.clone();
            let set = importance_sample(design, &plan.target, &plan.mixture, lambda, &opts)?;
            let stats = draw_statistics(&set, plan.kind, design)?;
            let w = set.relative_weights();
            let p = pvalue_from_statistics(&stats, &w, plan.stat_obs)?;
            Ok((p.p_hat, set.ess, set.resampled))
        })
        .collect();
    let mut pvalues = Vec::with_capacity(reps.len());
    let mut min_ess = f64::INFINITY;
    let mut resampled = 0;
    for r in reps {
        let (p, ess, n) = r?;
        pvalues.push(p);
        min_ess = min_ess.min(ess);
        resampled += n;
    }
    let cv = cv_report(&pvalues, config.n_draws)?;
    let row = DatasetResult {
        dataset_id: id,
        lambda,
        stat_obs: plan.stat_obs,
        log10_qbar: cv.mean.log10(),
        cv_is: cv.cv.unwrap_or(f64::NAN),
        cv_pb_theory: cv.cv_pb_theory.unwrap_or(f64::NAN),
        log10_ratio: cv.log10_ratio.unwrap_or(f64::NAN),
    };
    Ok((row, DatasetDetail { pvalues, min_ess, resampled }))
}

fn group_plan(config: &SimulationConfig, design: &GroupedDesign, fit: &BlockLassoFit, id: usize) -> Result<Plan> {
    let kind = StatisticKind::SumBlockNorms;
    let zero = DVector::zeros(config.p);
    Ok(Plan {
        kind,
        stat_obs: kind.evaluate(design, &fit.beta_hat)?,
        target: Target { beta_tilde: zero.clone(), noise: NoiseModel::gaussian(config.sigma2)? },
        mixture: ProposalMixture::single(zero, config.is_multiplier)?,
        theta: None,
        seed: child_seed(config.seed ^ GROUP_TAG, id as u64),
    })
}

fn debias_plan(
    config: &SimulationConfig,
    pop: &Population,
    design: &GroupedDesign,
    fit: &BlockLassoFit,
    id: usize,
) -> Result<Plan> {
    let kind = StatisticKind::FittedNorm { group: 0 };
    let b_hat = debias(design, fit, &pop.sigma_inv)?;
    let mut bridge = fit.beta_hat.clone();
    for &k in design.partition().group(0) {
        bridge[k] *= 0.5;
    }
    let [a1, a2] = config.debias_weights;
    let [m1, m2] = config.debias_multipliers;
    Ok(Plan {
        kind,
        stat_obs: kind.evaluate(design, &b_hat)?,
        target: Target { beta_tilde: fit.beta_hat.clone(), noise: NoiseModel::gaussian(config.sigma2)? },
        mixture: ProposalMixture::new(vec![
            ProposalComponent { weight: a1, beta_dagger: fit.beta_hat.clone(), variance_multiplier: m1 },
            ProposalComponent { weight: a2, beta_dagger: bridge, variance_multiplier: m2 },
        ])?,
        theta: Some(pop.sigma_inv.clone()),
        seed: child_seed(config.seed ^ DEBIAS_TAG, id as u64),
    })
}

fn run_experiment(config: &SimulationConfig, kind: ExperimentKind) -> Result<ExperimentResult> {
    config.validate()?;
    let pop = Population::new(config)?;
    let partition = config.partition()?;
    let outcomes: Vec<(usize, Result<(DatasetResult, DatasetDetail)>)> = config
        .dataset_ids()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|id| {
            let run = || {
                let data = simulate_with(config, &pop, id)?;
                let design = build_design(data.x, partition.clone(), 2.0)?;
                let fit = observed_fit(config, &design, &data.y)?;
                let plan = match kind {
                    ExperimentKind::GroupLasso => group_plan(config, &design, &fit, id)?,
                    ExperimentKind::Debiased => debias_plan(config, &pop, &design, &fit, id)?,
                };
                run_plan(config, &design, fit.lambda, &plan, id)
            };
            (id, run())
        })
        .collect();
    let mut result = ExperimentResult::empty(kind, config.seed, config.n_draws, config.replicates);
    for (id, outcome) in outcomes {
        match outcome {
            Ok((row, detail)) => {
                result.rows.push(row);
                result.details.push(detail);
            }
            Err(e) => {
                log::warn!("dataset {id} skipped: {e}");
                result.skipped.push((id, e.to_string()));
            }
        }
    }
    Ok(result)
}

/// Complete-null test: T = Σ‖β̂_(j)‖, IS(0, M) proposal, β̃ = 0.
pub fn run_group_lasso_experiment(config: &SimulationConfig) -> Result<ExperimentResult> {
    run_experiment(config, ExperimentKind::GroupLasso)
}

/// Test of the first group with T₁ = ‖X_(1)b̂_(1)‖, Θ̂ = Σ⁻¹, β̃ = β̂ and a
/// two-component mixture whose second centre halves β̂_(1).
pub fn run_debiased_experiment(config: &SimulationConfig) -> Result<ExperimentResult> {
    run_experiment(config, ExperimentKind::Debiased)
}

pub const CSV_HEADER: [&str; 7] =
    ["dataset_id", "lambda", "stat_obs", "log10_qbar", "cv_is", "cv_pb_theory", "log10_ratio"];

fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// CSV text of a result: header, one row per dataset, then `# key = value` lines.
pub fn render_results(result: &ExperimentResult) -> String {
    let mut out = CSV_HEADER.join(",");
    out.push('\n');
    for r in &result.rows {
        let fields = [
            r.dataset_id.to_string(),
            fmt_float(r.lambda),
            fmt_float(r.stat_obs),
            fmt_float(r.log10_qbar),
            fmt_float(r.cv_is),
            fmt_float(r.cv_pb_theory),
            fmt_float(r.log10_ratio),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    if result.rows.is_empty() && result.skipped.is_empty() {
        return out;
    }
    let mut kv = |k: &str, v: String| out.push_str(&format!("# {k} = {v}\n"));
    kv("experiment", result.kind.name().to_string());
    kv("seed", result.seed.to_string());
    kv("n_draws", result.n_draws.to_string());
    kv("replicates", result.replicates.to_string());
    kv("datasets", result.rows.len().to_string());
    let mut ratios: Vec<f64> = result.rows.iter().map(|r| r.log10_ratio).filter(|x| x.is_finite()).collect();
    ratios.sort_by(f64::total_cmp);
    if let Some(m) = median_sorted(&ratios) {
        kv("median_log10_ratio", fmt_float(m));
    }
    let wins = result.rows.iter().filter(|r| r.cv_is <= r.cv_pb_theory).count();
    kv("cv_is_le_cv_pb", wins.to_string());
    if let (Some(lo), Some(hi)) = (
        result.rows.iter().map(|r| r.stat_obs).min_by(f64::total_cmp),
        result.rows.iter().map(|r| r.stat_obs).max_by(f64::total_cmp),
    ) {
        kv("stat_obs_range", format!("{lo:.4} {hi:.4}"));
    }
    for (id, reason) in &result.skipped {
        kv("skipped", format!("{id} {reason}"));
    }
    out
}

pub fn median_sorted(v: &[f64]) -> Option<f64> {
    match v.len() {
        0 => None,
        n if n % 2 == 1 => Some(v[n / 2]),
        n => Some(0.5 * (v[n / 2 - 1] + v[n / 2])),
    }
}

pub fn emit_results(result: &ExperimentResult, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(render_results(result).as_bytes())?;
    Ok(())
}

/// Reads the table back, skipping comment lines.
pub fn read_results(path: &Path) -> Result<Vec<DatasetResult>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let header = rdr.headers()?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::Config(format!("unexpected header {:?}", header)));
    }
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Builds the global worker pool from the env var, if set.
pub fn configure_threads() -> Result<Option<usize>> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(None);
    };
    let n: usize = v.trim().parse().map_err(|_| Error::Config(format!("{THREADS_ENV}={v} is not a count")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))?;
    Ok(Some(n))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> SimulationConfig {
        SimulationConfig {
            n: 12,
            p: 20,
            pattern: BetaPattern::FullV,
            datasets: 2,
            n_draws: 20,
            replicates: 2,
            ..SimulationConfig::default()
        }
    }

    #[test]
    fn config_parses_and_validates() {
        let c = SimulationConfig::from_toml_str(
            "n = 30\np = 100\nrho1 = 0.5\npattern = \"full-v\"\nlambda_rule = \"smallest\"\nseed = 7\n",
        )
        .unwrap();
        assert_eq!(c.pattern, BetaPattern::FullV);
        assert_eq!(c.lambda_rule, LambdaRule::Smallest);
        assert_eq!(c.group_size, 10);
        assert_eq!(c.weights, WeightScheme::SqrtSize);
        let u = SimulationConfig::from_toml_str("weights = \"unit\"").unwrap();
        assert_eq!(u.partition().unwrap().weight(3), 1.0);
        assert!(SimulationConfig::from_toml_str("bogus = 1").is_err());
        assert!(SimulationConfig::from_toml_str("p = 95").is_err());
        assert!(SimulationConfig::from_toml_str("rho2 = -0.5").is_ok());
        let c = SimulationConfig { rho1: -0.5, ..SimulationConfig::default() };
        assert!(matches!(Population::new(&c), Err(Error::Config(_))));
    }

    #[test]
    fn beta_patterns() {
        let mut c = SimulationConfig::table_class(11).unwrap();
        let b = c.beta0();
        assert_eq!(b[0], 0.5);
        assert_eq!(b[14], -0.5);
        assert_eq!(b[19], 0.0);
        assert!(b.rows(20, 80).iter().all(|&v| v == 0.0));
        c.pattern = BetaPattern::Null;
        assert_eq!(c.beta0().amax(), 0.0);
    }

    #[test]
    fn identity_covariance_gives_unit_column_variance() {
        let c = SimulationConfig { n: 4000, p: 20, ..SimulationConfig::default() };
        let d = simulate_dataset(&c, 3).unwrap();
        for j in 0..c.p {
            let v = d.x.column(j).norm_squared() / c.n as f64;
            assert!((v - 1.0).abs() < 0.1, "column {j}: {v}");
        }
    }

    #[test]
    fn within_group_correlation_is_recovered() {
        let c = SimulationConfig { n: 4000, p: 20, rho1: 0.5, ..SimulationConfig::default() };
        let d = simulate_dataset(&c, 0).unwrap();
        let cor = d.x.column(0).dot(&d.x.column(1)) / (d.x.column(0).norm() * d.x.column(1).norm());
        let across = d.x.column(0).dot(&d.x.column(15)) / (d.x.column(0).norm() * d.x.column(15).norm());
        assert!((cor - 0.5).abs() < 0.06, "{cor}");
        assert!(across.abs() < 0.06, "{across}");
    }

    #[test]
    fn smoke_runs_and_round_trip() {
        let c = small_config();
        let g = run_group_lasso_experiment(&c).unwrap();
        let d = run_debiased_experiment(&c).unwrap();
        assert_eq!(g.rows.len() + g.skipped.len(), 2);
        assert_eq!(d.rows.len() + d.skipped.len(), 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.csv");
        emit_results(&g, &path).unwrap();
        let back = read_results(&path).unwrap();
        assert_eq!(back.len(), g.rows.len());
        for (a, b) in back.iter().zip(&g.rows) {
            assert_eq!(a.dataset_id, b.dataset_id);
            for (x, y) in [(a.lambda, b.lambda), (a.stat_obs, b.stat_obs), (a.cv_is, b.cv_is)] {
                assert!(x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan()));
            }
        }
    }

    #[test]
    fn empty_result_is_header_only() {
        let r = ExperimentResult::empty(ExperimentKind::GroupLasso, 1, 10, 2);
        assert_eq!(render_results(&r), format!("{}\n", CSV_HEADER.join(",")));
    }
}
