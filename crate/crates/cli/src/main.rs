mod io;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use blockaug::density::{density, point_from_beta};
use blockaug::experiments::{
    configure_threads, emit_results, render_results, run_debiased_experiment, run_group_lasso_experiment,
    simulate_dataset, SimulationConfig,
};
use blockaug::inference::{
    debias, estimate_pvalue, importance_sample, parametric_bootstrap, ProposalComponent, ProposalMixture,
    SamplingOptions, StatisticKind, Target, TestSpec, WeightedSampleSet,
};
use blockaug::model::{build_design, GroupPartition, GroupedDesign};
use blockaug::noise::NoiseModel;
use blockaug::oracles::{run_oracle_checks, OracleSuiteOptions};
use blockaug::solver::{select_lambda_with, BlockLassoFit, BlockLassoSolver, LambdaRule, LambdaSearch, SolverOptions};

#[derive(Parser)]
#[command(name = "blockaug", version, about = "Block Lasso fitting, sampling densities and importance-sampling inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the block Lasso and write β̂, S and group norms.
    Fit(FitArgs),
    /// Evaluate the sampling density at a point (β̂, S).
    Density(DensityArgs),
    /// Parametric bootstrap draws with unit weights.
    SamplePb(SampleArgs),
    /// Importance sampling from a mixture proposal.
    SampleIs(SampleIsArgs),
    /// Write one simulated dataset as CSV.
    Simulate(SimulateArgs),
    /// Complete-null experiment with the group Lasso.
    ExperimentGroup(ExperimentArgs),
    /// Single-group experiment with the de-biased group Lasso.
    ExperimentDebias(ExperimentArgs),
    /// Closed forms vs quadrature vs simulation.
    OracleCheck(OracleArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum WeightArg {
    SqrtSize,
    Unit,
}

#[derive(Args)]
struct DesignArgs {
    /// Design matrix CSV, no header, rows are observations.
    #[arg(long)]
    x: PathBuf,
    /// Comma-separated group sizes over consecutive columns; singletons if omitted.
    #[arg(long)]
    groups: Option<String>,
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    #[arg(long, value_enum, default_value_t = WeightArg::SqrtSize)]
    weights: WeightArg,
}

impl DesignArgs {
    fn build(&self) -> Result<GroupedDesign> {
        let x = io::read_matrix(&self.x)?;
        let p = x.ncols();
        let mut part = match &self.groups {
            Some(spec) => GroupPartition::from_sizes(&io::parse_sizes(spec)?)?,
            None => GroupPartition::singletons(p)?,
        };
        if let WeightArg::Unit = self.weights {
            let j = part.num_groups();
            part = part.with_weights(vec![1.0; j])?;
        }
        Ok(build_design(x, part, self.alpha)?)
    }
}

#[derive(Args)]
struct LambdaArgs {
    #[arg(long, conflicts_with = "active_groups")]
    lambda: Option<f64>,
    /// Choose λ so that this many groups are active.
    #[arg(long)]
    active_groups: Option<usize>,
    #[arg(long, default_value = "entry")]
    lambda_rule: String,
}

impl LambdaArgs {
    fn resolve(&self, design: &GroupedDesign, y: Option<&DVector<f64>>) -> Result<f64> {
        match (self.lambda, self.active_groups) {
            (Some(l), _) => Ok(l),
            (None, Some(k)) => {
                let y = y.context("--active-groups needs --y")?;
                let rule = match self.lambda_rule.as_str() {
                    "entry" => LambdaRule::Entry,
                    "smallest" => LambdaRule::Smallest,
                    r => bail!("unknown lambda rule {r:?}"),
                };
                let search = LambdaSearch { rule, ..LambdaSearch::default() };
                Ok(select_lambda_with(design, y, k, &search, &SolverOptions::default())?)
            }
            (None, None) => bail!("give --lambda or --active-groups"),
        }
    }
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    design: DesignArgs,
    #[arg(long)]
    y: PathBuf,
    #[command(flatten)]
    lambda: LambdaArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DensityArgs {
    #[command(flatten)]
    design: DesignArgs,
    /// CSV with columns `beta` and `subgradient`, as written by `fit`.
    #[arg(long)]
    point: PathBuf,
    /// `zero` or a CSV vector.
    #[arg(long, default_value = "zero")]
    beta0: String,
    #[arg(long)]
    sigma2: f64,
    #[arg(long)]
    lambda: f64,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    design: DesignArgs,
    /// Observed response; used for --active-groups, `--beta-tilde fit` and the observed statistic.
    #[arg(long)]
    y: Option<PathBuf>,
    #[command(flatten)]
    lambda: LambdaArgs,
    /// `zero`, `fit` (the fit to --y) or a CSV vector.
    #[arg(long, default_value = "zero")]
    beta_tilde: String,
    #[arg(long)]
    sigma2: f64,
    #[arg(long, default_value_t = 10_000)]
    n_draws: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// `sum`, `fitted:J` or `block:J` with a 0-based group J.
    #[arg(long, default_value = "sum")]
    stat: String,
    /// Observed statistic; computed from the fit to --y when omitted.
    #[arg(long)]
    observed: Option<f64>,
    /// Θ̂ as a p x p CSV; draws then carry the de-biased estimate.
    #[arg(long)]
    theta: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SampleIsArgs {
    #[command(flatten)]
    common: SampleArgs,
    /// TOML file with one `[[component]]` table per mixture component.
    #[arg(long)]
    mixture: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    id: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    /// TOML config; defaults to the built-in settings of --class.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in dataset class: 1, 11 or 21.
    #[arg(long, default_value_t = 21)]
    class: usize,
    #[arg(long)]
    n_draws: Option<usize>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    datasets: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, default_value_t = 100_000)]
    draws: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    sigma2: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Fit(a) => fit(a)?,
        Command::Density(a) => density_cmd(a)?,
        Command::SamplePb(a) => sample(a, None)?,
        Command::SampleIs(a) => {
            let text = fs::read_to_string(&a.mixture).with_context(|| format!("reading {}", a.mixture.display()))?;
            sample(a.common, Some(text))?
        }
        Command::Simulate(a) => simulate(a)?,
        Command::ExperimentGroup(a) => experiment(a, false)?,
        Command::ExperimentDebias(a) => experiment(a, true)?,
        Command::OracleCheck(a) => return oracle_check(a),
    }
    Ok(ExitCode::SUCCESS)
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn fit_table(design: &GroupedDesign, fit: &BlockLassoFit) -> String {
    let mut s = String::from("index,group,beta,subgradient,gamma,active\n");
    let part = design.partition();
    for k in 0..design.p() {
        let j = part.group_of(k);
        let active = fit.active.contains(&j) as u8;
        writeln!(s, "{k},{j},{:.17e},{:.17e},{:.17e},{active}", fit.beta_hat[k], fit.subgradient[k], fit.gamma_hat[j])
            .unwrap();
    }
    writeln!(s, "# lambda = {:.17e}", fit.lambda).unwrap();
    s
}

fn fit(a: FitArgs) -> Result<()> {
    let design = a.design.build()?;
    let y = io::read_vector(&a.y)?;
    let lambda = a.lambda.resolve(&design, Some(&y))?;
    let fit = BlockLassoSolver::new(&design).solve(&y, lambda)?;
    eprintln!(
        "lambda = {lambda:.10e}, active groups = {:?}, KKT residual = {:.3e}, objective = {:.10e}",
        fit.active, fit.kkt_residual, fit.objective
    );
    write_or_print(a.out.as_deref(), &fit_table(&design, &fit))
}

fn density_cmd(a: DensityArgs) -> Result<()> {
    let design = a.design.build()?;
    let cols = io::read_columns(&a.point, &["beta", "subgradient"])?;
    let point = point_from_beta(&design, &cols[0], &cols[1])?;
    let beta0 = io::vector_arg(&a.beta0, design.p())?;
    let d = density(&point, &design, &beta0, a.lambda, &NoiseModel::gaussian(a.sigma2)?)?;
    println!("stratum = {:?}", point.active);
    println!("chart_free = {:?}", d.free);
    println!("jacobian = {:.17e}", d.jacobian);
    println!("density = {:.17e}", d.value);
    println!("log_density = {:.17e}", d.log_value);
    Ok(())
}

fn parse_stat(spec: &str) -> Result<StatisticKind> {
    let group = |s: &str| s.parse::<usize>().with_context(|| format!("bad group in --stat {spec:?}"));
    match spec.split_once(':') {
        None if spec == "sum" => Ok(StatisticKind::SumBlockNorms),
        Some(("fitted", g)) => Ok(StatisticKind::FittedNorm { group: group(g)? }),
        Some(("block", g)) => Ok(StatisticKind::BlockNorm { group: group(g)? }),
        _ => bail!("unknown statistic {spec:?}"),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MixtureFile {
    component: Vec<ComponentSpec>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ComponentSpec {
    weight: f64,
    /// `zero`, `beta-tilde` or a CSV path.
    center: String,
    multiplier: f64,
    /// Multiply one group's block of the centre by `scale`.
    scale_group: Option<usize>,
    scale: Option<f64>,
}

fn parse_mixture(text: &str, design: &GroupedDesign, beta_tilde: &DVector<f64>) -> Result<ProposalMixture> {
    let file: MixtureFile = toml::from_str(text).context("parsing mixture")?;
    let comps = file
        .component
        .into_iter()
        .map(|c| {
            let mut center = match c.center.as_str() {
                "beta-tilde" => beta_tilde.clone(),
                other => io::vector_arg(other, design.p())?,
            };
            if let Some(j) = c.scale_group {
                if j >= design.partition().num_groups() {
                    bail!("scale_group {j} out of range");
                }
                let f = c.scale.context("scale_group needs scale")?;
                for &k in design.partition().group(j) {
                    center[k] *= f;
                }
            }
            Ok(ProposalComponent { weight: c.weight, beta_dagger: center, variance_multiplier: c.multiplier })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProposalMixture::new(comps)?)
}

fn sample(a: SampleArgs, mixture: Option<String>) -> Result<()> {
    let design = a.design.build()?;
    let y = a.y.as_deref().map(io::read_vector).transpose()?;
    let lambda = a.lambda.resolve(&design, y.as_ref())?;
    let theta = a.theta.as_deref().map(io::read_matrix).transpose()?;
    if let Some(t) = &theta {
        if t.shape() != (design.p(), design.p()) {
            bail!("theta must be {} x {}", design.p(), design.p());
        }
    }
    let observed_fit = y.as_ref().map(|y| BlockLassoSolver::new(&design).solve(y, lambda)).transpose()?;
    let beta_tilde = match a.beta_tilde.as_str() {
        "fit" => observed_fit.as_ref().context("--beta-tilde fit needs --y")?.beta_hat.clone(),
        spec => io::vector_arg(spec, design.p())?,
    };
    let kind = parse_stat(&a.stat)?;
    let observed = match (a.observed, &observed_fit) {
        (Some(v), _) => v,
        (None, Some(fit)) => {
            let est = observed_estimate(&design, fit, theta.as_ref())?;
            kind.evaluate(&design, &est)?
        }
        (None, None) => bail!("give --observed or --y"),
    };
    let target = Target { beta_tilde: beta_tilde.clone(), noise: NoiseModel::gaussian(a.sigma2)? };
    let mut opts = SamplingOptions::new(a.n_draws, a.seed);
    opts.theta = theta;
    let set = match mixture {
        None => parametric_bootstrap(&design, &target, lambda, &opts)?,
        Some(text) => importance_sample(&design, &target, &parse_mixture(&text, &design, &beta_tilde)?, lambda, &opts)?,
    };
    let test = TestSpec { kind, observed };
    let p = estimate_pvalue(&set, &test, &design)?;
    let summary = format!(
        "{{\"p_hat\": {:.17e}, \"std_err\": {:.17e}, \"ess\": {:.17e}, \"n_draws\": {}, \"lambda\": {:.17e}, \"observed\": {:.17e}, \"low_ess\": {}, \"low_ess_in_tail\": {}}}",
        p.p_hat, p.std_err, set.ess, set.len(), lambda, observed, set.low_ess, p.low_ess_in_tail
    );
    if let Some(out) = &a.out {
        fs::write(out, draws_table(&set, kind, &design, &summary)?)?;
    }
    println!("{summary}");
    Ok(())
}

fn observed_estimate(design: &GroupedDesign, fit: &BlockLassoFit, theta: Option<&DMatrix<f64>>) -> Result<DVector<f64>> {
    Ok(match theta {
        Some(t) => debias(design, fit, t)?,
        None => fit.beta_hat.clone(),
    })
}

fn draws_table(set: &WeightedSampleSet, kind: StatisticKind, design: &GroupedDesign, summary: &str) -> Result<String> {
    let stats = blockaug::inference::draw_statistics(set, kind, design)?;
    let mut s = String::from("draw,component,active_size,statistic,log_weight\n");
    for (t, (d, h)) in set.draws.iter().zip(&stats).enumerate() {
        writeln!(s, "{t},{},{},{h:.17e},{:.17e}", d.component, d.active.len(), d.log_weight).unwrap();
    }
    writeln!(s, "# summary = {summary}").unwrap();
    Ok(s)
}

fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut s = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:.17e}")).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let config = SimulationConfig::from_file(&a.config)?;
    let data = simulate_dataset(&config, a.id)?;
    fs::create_dir_all(&a.out_dir)?;
    write_matrix(&a.out_dir.join("x.csv"), &data.x)?;
    write_matrix(&a.out_dir.join("y.csv"), &DMatrix::from_column_slice(data.y.len(), 1, data.y.as_slice()))?;
    write_matrix(&a.out_dir.join("beta0.csv"), &DMatrix::from_column_slice(data.beta0.len(), 1, data.beta0.as_slice()))?;
    eprintln!("wrote dataset {} ({} x {}) to {}", a.id, config.n, config.p, a.out_dir.display());
    Ok(())
}

fn experiment(a: ExperimentArgs, debiased: bool) -> Result<()> {
    let mut config = match &a.config {
        Some(p) => SimulationConfig::from_file(p)?,
        None => SimulationConfig::table_class(a.class)?,
    };
    if let Some(v) = a.n_draws {
        config.n_draws = v;
    }
    if let Some(v) = a.replicates {
        config.replicates = v;
    }
    if let Some(v) = a.datasets {
        config.datasets = v;
    }
    if let Some(v) = a.seed {
        config.seed = v;
    }
    config.validate()?;
    let result = if debiased { run_debiased_experiment(&config)? } else { run_group_lasso_experiment(&config)? };
    match &a.out {
        Some(p) => {
            emit_results(&result, p)?;
            eprintln!("wrote {} rows to {}", result.rows.len(), p.display());
        }
        None => print!("{}", render_results(&result)),
    }
    Ok(())
}

fn oracle_check(a: OracleArgs) -> Result<ExitCode> {
    let opts = OracleSuiteOptions { sigma2: a.sigma2, lambda: a.lambda, draws: a.draws, seed: a.seed, ..Default::default() };
    let rows = run_oracle_checks(&opts)?;
    println!("{:<40} {:>14} {:>14} {:>11}  result", "check", "reference", "value", "tolerance");
    for r in &rows {
        println!(
            "{:<40} {:>14.8e} {:>14.8e} {:>11.3e}  {}",
            r.name,
            r.reference,
            r.value,
            r.tolerance,
            if r.pass { "PASS" } else { "FAIL" }
        );
    }
    let failed = rows.iter().filter(|r| !r.pass).count();
    println!("{} of {} checks passed", rows.len() - failed, rows.len());
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
