//! Parametric bootstrap and importance sampling of the block-Lasso estimator,
//! the de-biased estimator, and the tail-probability and quantile estimates
//! built on weighted draws.
//!
//! With the proposal penalty equal to the target penalty, the Jacobian terms
//! of target and proposal densities coincide, so an importance weight is a
//! ratio of noise densities evaluated at H̃(β̂*, S*; β) for the target β̃ and
//! each proposal centre β†_k. When rank(X) = n that H̃ equals (y* − Xβ)/√n.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{lq_norm, GroupedDesign};
use crate::noise::{gram_cholesky, NoiseModel};
use crate::rng::draw_rng;
use crate::solver::{BlockLassoFit, BlockLassoSolver, SolverOptions};

/// ESS below this is flagged.
pub const LOW_ESS: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ProposalComponent {
    pub weight: f64,
    pub beta_dagger: DVector<f64>,
    /// Noise variance multiplier M_k.
    pub variance_multiplier: f64,
}

/// Mixture proposal Σ a_k q(·; β†_k, M_k σ²), sharing the target λ.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalMixture {
    components: Vec<ProposalComponent>,
}

impl ProposalMixture {
    pub fn new(components: Vec<ProposalComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidInput("mixture needs at least one component".into()));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!("mixture weights sum to {total}, not 1")));
        }
        for c in &components {
            if !(c.weight > 0.0) || !(c.variance_multiplier > 0.0 && c.variance_multiplier.is_finite()) {
                return Err(Error::InvalidInput("mixture weights and multipliers must be positive".into()));
            }
            if c.beta_dagger.len() != components[0].beta_dagger.len() {
                return Err(Error::DimensionMismatch("mixture centres differ in length".into()));
            }
            if c.beta_dagger.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("mixture centre"));
            }
        }
        Ok(Self { components })
    }

    pub fn single(beta_dagger: DVector<f64>, variance_multiplier: f64) -> Result<Self> {
        Self::new(vec![ProposalComponent { weight: 1.0, beta_dagger, variance_multiplier }])
    }

    pub fn components(&self) -> &[ProposalComponent] {
        &self.components
    }

    fn pick(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (k, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                return k;
            }
        }
        self.components.len() - 1
    }
}

/// Target law of y* = Xβ̃ + ε.
#[derive(Debug, Clone)]
pub struct Target {
    pub beta_tilde: DVector<f64>,
    pub noise: NoiseModel,
}

#[derive(Debug, Clone)]
pub struct SamplingOptions {
    pub n_draws: usize,
    pub seed: u64,
    /// Replicate index; separates independent runs that share a seed.
    pub replicate: u64,
    /// Θ̂ for the de-biased estimate; when set, draws carry b̂* instead of β̂*.
    pub theta: Option<DMatrix<f64>>,
    /// Keep y* on each draw (needed to re-derive weights).
    pub keep_response: bool,
    pub solver: SolverOptions,
}

impl SamplingOptions {
    pub fn new(n_draws: usize, seed: u64) -> Self {
        Self {
            n_draws,
            seed,
            replicate: 0,
            theta: None,
            keep_response: false,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Draw {
    /// β̂*, or b̂* when Θ̂ was supplied.
    pub estimate: DVector<f64>,
    pub beta_hat: DVector<f64>,
    pub subgradient: DVector<f64>,
    pub active: Vec<usize>,
    pub log_weight: f64,
    pub component: usize,
    pub response: Option<DVector<f64>>,
}

/// Weighted draws with their provenance.
#[derive(Debug, Clone)]
pub struct WeightedSampleSet {
    pub draws: Vec<Draw>,
    pub lambda: f64,
    pub beta_tilde: DVector<f64>,
    pub ess: f64,
    pub low_ess: bool,
    /// Draws whose first solve failed and were redrawn.
    pub resampled: usize,
    pub debiased: bool,
}

impl WeightedSampleSet {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    /// Weights scaled so the largest is 1.
    pub fn relative_weights(&self) -> Vec<f64> {
        relative_weights(&self.draws.iter().map(|d| d.log_weight).collect::<Vec<_>>())
    }

    /// Self-normalised weights summing to 1.
    pub fn normalized_weights(&self) -> Result<Vec<f64>> {
        let w = self.relative_weights();
        let total: f64 = w.iter().sum();
        if !(total > 0.0) {
            return Err(Error::ZeroTotalWeight);
        }
        Ok(w.into_iter().map(|x| x / total).collect())
    }
}

fn relative_weights(log_w: &[f64]) -> Vec<f64> {
    let m = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return vec![0.0; log_w.len()];
    }
    log_w.iter().map(|&l| (l - m).exp()).collect()
}

/// (Σw)²/Σw².
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let s: f64 = weights.iter().sum();
    let s2: f64 = weights.iter().map(|w| w * w).sum();
    if s2 > 0.0 {
        s * s / s2
    } else {
        0.0
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    if v.len() == 1 {
        return v[0];
    }
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Evaluates log g at H̃(·; β) for a response y*, using the noise law scaled
/// by a variance multiplier.
struct WeightEvaluator<'a> {
    design: &'a GroupedDesign,
    low_dim: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
}

impl<'a> WeightEvaluator<'a> {
    fn new(design: &'a GroupedDesign) -> Result<Self> {
        let low_dim = if design.is_high_dimensional() { None } else { Some(gram_cholesky(design.psi())?) };
        Ok(Self { design, low_dim })
    }

    fn log_g(&self, noise: &NoiseModel, multiplier: f64, y: &DVector<f64>, beta: &DVector<f64>) -> Result<f64> {
        let d = self.design;
        let n = d.n() as f64;
        let resid = y - d.x() * beta;
        match &self.low_dim {
            None => {
                let z = resid / n.sqrt();
                if multiplier == 1.0 {
                    return Ok(noise.log_density(z.as_slice()));
                }
                let scaled = &z / multiplier.sqrt();
                Ok(noise.log_density(scaled.as_slice()) - 0.5 * n * multiplier.ln())
            }
            Some(chol) => {
                let h = d.x().tr_mul(&resid) / n;
                let sigma2 = noise
                    .sigma2()
                    .ok_or_else(|| Error::Unsupported("p < n weights need Gaussian noise".into()))?;
                NoiseModel::Gaussian { sigma2: sigma2 * multiplier }.log_density_low_dim(h.as_slice(), chol, d.n())
            }
        }
    }

    fn log_weight(&self, target: &Target, mixture: &ProposalMixture, y: &DVector<f64>) -> Result<f64> {
        let num = self.log_g(&target.noise, 1.0, y, &target.beta_tilde)?;
        let terms: Vec<f64> = mixture
            .components
            .iter()
            .map(|c| Ok(c.weight.ln() + self.log_g(&target.noise, c.variance_multiplier, y, &c.beta_dagger)?))
            .collect::<Result<_>>()?;
        Ok(num - log_sum_exp(&terms))
    }
}

/// log W* for a response y* drawn from the mixture.
pub fn log_importance_weight(
    design: &GroupedDesign,
    target: &Target,
    mixture: &ProposalMixture,
    y: &DVector<f64>,
) -> Result<f64> {
    WeightEvaluator::new(design)?.log_weight(target, mixture, y)
}

/// b̂ = β̂ + λΘ̂WS.
pub fn debias(design: &GroupedDesign, fit: &BlockLassoFit, theta: &DMatrix<f64>) -> Result<DVector<f64>> {
    let p = design.p();
    if theta.shape() != (p, p) || fit.beta_hat.len() != p {
        return Err(Error::DimensionMismatch(format!("Theta must be {p} x {p}")));
    }
    let ws = design.weights().component_mul(&fit.subgradient);
    Ok(&fit.beta_hat + theta * ws * fit.lambda)
}

/// b̂ = β̂ + Θ̂Xᵀ(y − Xβ̂)/n.
pub fn debias_from_residual(
    design: &GroupedDesign,
    y: &DVector<f64>,
    beta_hat: &DVector<f64>,
    theta: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let p = design.p();
    if theta.shape() != (p, p) || beta_hat.len() != p || y.len() != design.n() {
        return Err(Error::DimensionMismatch("debias arguments".into()));
    }
    let g = design.x().tr_mul(&(y - design.x() * beta_hat)) / design.n() as f64;
    Ok(beta_hat + theta * g)
}

fn one_draw(
    design: &GroupedDesign,
    solver: &BlockLassoSolver<'_>,
    target: &Target,
    mixture: &ProposalMixture,
    weights: &WeightEvaluator<'_>,
    lambda: f64,
    opts: &SamplingOptions,
    rng: &mut ChaCha8Rng,
) -> Result<Draw> {
    let k = mixture.pick(rng.random::<f64>());
    let comp = &mixture.components[k];
    let mut eps = target.noise.sample(design.n(), rng);
    if comp.variance_multiplier != 1.0 {
        eps *= comp.variance_multiplier.sqrt();
    }
    let y = design.x() * &comp.beta_dagger + eps;
    let fit = solver.solve(&y, lambda)?;
    let log_weight = weights.log_weight(target, mixture, &y)?;
    let estimate = match &opts.theta {
        Some(theta) => debias(design, &fit, theta)?,
        None => fit.beta_hat.clone(),
    };
    Ok(Draw {
        estimate,
        beta_hat: fit.beta_hat,
        subgradient: fit.subgradient,
        active: fit.active,
        log_weight,
        component: k,
        response: opts.keep_response.then_some(y),
    })
}

/// Importance sampling from a mixture proposal. Draw t uses the stream
/// (seed, replicate, t); a failed solve is redrawn once from an alternate stream.
pub fn importance_sample(
    design: &GroupedDesign,
    target: &Target,
    mixture: &ProposalMixture,
    lambda: f64,
    opts: &SamplingOptions,
) -> Result<WeightedSampleSet> {
    if opts.n_draws == 0 {
        return Err(Error::EmptySample);
    }
    if target.beta_tilde.len() != design.p() || mixture.components[0].beta_dagger.len() != design.p() {
        return Err(Error::DimensionMismatch("target and proposal centres must have length p".into()));
    }
    let solver = BlockLassoSolver::with_options(design, opts.solver.clone());
    let weights = WeightEvaluator::new(design)?;
    let results: Vec<Result<(Draw, bool)>> = (0..opts.n_draws)
        .into_par_iter()
        .map(|t| {
            let mut rng = draw_rng(opts.seed, opts.replicate, t as u64);
            match one_draw(design, &solver, target, mixture, &weights, lambda, opts, &mut rng) {
                Ok(d) => Ok((d, false)),
                Err(first) => {
                    log::warn!("draw {t} failed ({first}); redrawing");
                    let mut rng = draw_rng(opts.seed, opts.replicate ^ (1 << 63), t as u64);
                    one_draw(design, &solver, target, mixture, &weights, lambda, opts, &mut rng).map(|d| (d, true))
                }
            }
        })
        .collect();
    let mut draws = Vec::with_capacity(opts.n_draws);
    let mut resampled = 0;
    for r in results {
        let (d, redrawn) = r?;
        resampled += redrawn as usize;
        draws.push(d);
    }
    let rel = relative_weights(&draws.iter().map(|d| d.log_weight).collect::<Vec<_>>());
    if rel.iter().sum::<f64>() <= 0.0 {
        return Err(Error::ZeroTotalWeight);
    }
    let ess = effective_sample_size(&rel);
    let low_ess = ess < LOW_ESS;
    if low_ess {
        log::warn!("effective sample size {ess:.1} is below {LOW_ESS}");
    }
    Ok(WeightedSampleSet {
        draws,
        lambda,
        beta_tilde: target.beta_tilde.clone(),
        ess,
        low_ess,
        resampled,
        debiased: opts.theta.is_some(),
    })
}

/// Parametric bootstrap: y* = Xβ̃ + ε*, all weights 1.
pub fn parametric_bootstrap(
    design: &GroupedDesign,
    target: &Target,
    lambda: f64,
    opts: &SamplingOptions,
) -> Result<WeightedSampleSet> {
    let mixture = ProposalMixture::single(target.beta_tilde.clone(), 1.0)?;
    importance_sample(design, target, &mixture, lambda, opts)
}

/// Test statistic h applied to a p-vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatisticKind {
    /// Σ_j ‖v_(j)‖_α.
    SumBlockNorms,
    /// ‖X_(j) v_(j)‖₂.
    FittedNorm { group: usize },
    /// ‖v_(j)‖_α.
    BlockNorm { group: usize },
}

impl StatisticKind {
    pub fn evaluate(&self, design: &GroupedDesign, v: &DVector<f64>) -> Result<f64> {
        let part = design.partition();
        let check = |g: usize| {
            if g < part.num_groups() {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!("group {g} out of range")))
            }
        };
        match *self {
            Self::SumBlockNorms => Ok(design.block_norms(v).iter().sum()),
            Self::FittedNorm { group } => {
                check(group)?;
                let idx = part.group(group);
                let mut out = DVector::zeros(design.n());
                for &k in idx {
                    out.axpy(v[k], &design.x().column(k), 1.0);
                }
                Ok(out.norm())
            }
            Self::BlockNorm { group } => {
                check(group)?;
                Ok(lq_norm(&part.block(v, group), design.alpha()))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestSpec {
    pub kind: StatisticKind,
    /// h evaluated at the observed estimate.
    pub observed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PValueEstimate {
    pub p_hat: f64,
    pub std_err: f64,
    pub tail_count: usize,
    pub tail_ess: f64,
    /// Fewer than [`LOW_ESS`] effective draws in the tail.
    pub low_ess_in_tail: bool,
}

/// h(estimate* − β̃) for every draw.
pub fn draw_statistics(samples: &WeightedSampleSet, kind: StatisticKind, design: &GroupedDesign) -> Result<Vec<f64>> {
    samples
        .draws
        .iter()
        .map(|d| kind.evaluate(design, &(&d.estimate - &samples.beta_tilde)))
        .collect()
}

/// Self-normalised estimate of P(h(estimate* − β̃) ≥ observed) with a
/// delta-method standard error.
pub fn estimate_pvalue(samples: &WeightedSampleSet, test: &TestSpec, design: &GroupedDesign) -> Result<PValueEstimate> {
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    let stats = draw_statistics(samples, test.kind, design)?;
    let w = samples.normalized_weights()?;
    pvalue_from_statistics(&stats, &w, test.observed)
}

/// As [`estimate_pvalue`], from precomputed statistics and weights on any
/// scale; they are normalised here.
pub fn pvalue_from_statistics(stats: &[f64], w: &[f64], observed: f64) -> Result<PValueEstimate> {
    if stats.is_empty() {
        return Err(Error::EmptySample);
    }
    if stats.len() != w.len() {
        return Err(Error::DimensionMismatch("one weight per statistic".into()));
    }
    let total: f64 = w.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::ZeroTotalWeight);
    }
    let w: Vec<f64> = w.iter().map(|x| x / total).collect();
    let mut p_hat = 0.0;
    let mut tail_w = Vec::new();
    for (&h, &wt) in stats.iter().zip(&w) {
        if h >= observed {
            p_hat += wt;
            tail_w.push(wt);
        }
    }
    let var: f64 = stats
        .iter()
        .zip(&w)
        .map(|(&h, &wt)| {
            let ind = if h >= observed { 1.0 } else { 0.0 };
            wt * wt * (ind - p_hat) * (ind - p_hat)
        })
        .sum();
    let tail_ess = effective_sample_size(&tail_w);
    Ok(PValueEstimate {
        p_hat: p_hat.min(1.0),
        std_err: var.sqrt(),
        tail_count: tail_w.len(),
        tail_ess,
        low_ess_in_tail: tail_ess < LOW_ESS,
    })
}

/// {θ : h(b̂ − θ) ≤ threshold}.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceRegion {
    pub kind: StatisticKind,
    pub center: DVector<f64>,
    pub threshold: f64,
    pub delta: f64,
    /// ESS·δ < 5.
    pub low_ess_warning: bool,
}

impl ConfidenceRegion {
    pub fn contains(&self, design: &GroupedDesign, theta: &DVector<f64>) -> Result<bool> {
        Ok(self.kind.evaluate(design, &(&self.center - theta))? <= self.threshold)
    }
}

/// Smallest x whose weighted CDF reaches q.
pub fn weighted_quantile(values: &[f64], weights: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptySample);
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroTotalWeight);
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut acc = 0.0;
    for &i in &order {
        acc += weights[i] / total;
        if acc >= q * (1.0 - 1e-12) {
            return Ok(values[i]);
        }
    }
    Ok(values[*order.last().unwrap()])
}

/// Region {θ : h(b̂ − θ) ≤ h_(1−δ)} with h_(1−δ) the weighted (1 − δ)-quantile
/// of h(estimate* − β̃).
pub fn confidence_region(
    samples: &WeightedSampleSet,
    kind: StatisticKind,
    center: &DVector<f64>,
    delta: f64,
    design: &GroupedDesign,
) -> Result<ConfidenceRegion> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidInput(format!("delta must lie in (0, 1], got {delta}")));
    }
    let stats = draw_statistics(samples, kind, design)?;
    let w = samples.relative_weights();
    let threshold = weighted_quantile(&stats, &w, 1.0 - delta)?;
    let low_ess_warning = samples.ess * delta < 5.0;
    if low_ess_warning {
        log::warn!("ESS {:.1} is small for a {delta} tail quantile", samples.ess);
    }
    Ok(ConfidenceRegion { kind, center: center.clone(), threshold, delta, low_ess_warning })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvReport {
    pub mean: f64,
    /// Sample sd / mean; None when the mean is 0.
    pub cv: Option<f64>,
    /// √((1 − q̄)/(N q̄)).
    pub cv_pb_theory: Option<f64>,
    /// log₁₀(cv_pb_theory / cv).
    pub log10_ratio: Option<f64>,
}

/// Replicate-level efficiency summary of p-value estimates from N draws each.
pub fn cv_report(estimates: &[f64], n_draws: usize) -> Result<CvReport> {
    if estimates.len() < 2 {
        return Err(Error::InvalidInput("cv needs at least two replicates".into()));
    }
    let r = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / r;
    let var = estimates.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (r - 1.0);
    if mean <= 0.0 {
        return Ok(CvReport { mean, cv: None, cv_pb_theory: None, log10_ratio: None });
    }
    let cv = var.sqrt() / mean;
    let cv_pb = ((1.0 - mean) / (n_draws as f64 * mean)).max(0.0).sqrt();
    let ratio = (cv_pb / cv).log10();
    Ok(CvReport { mean, cv: Some(cv), cv_pb_theory: Some(cv_pb), log10_ratio: Some(ratio) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_design, GroupPartition};
    use crate::oracles::example1_design;
    use crate::solver::{lambda_max, solve_block_lasso};
    use rand::SeedableRng;
    use rand_distr::StandardNormal;

    fn random_design(seed: u64, n: usize, sizes: &[usize]) -> GroupedDesign {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p: usize = sizes.iter().sum();
        let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        build_design(x, GroupPartition::from_sizes(sizes).unwrap(), 2.0).unwrap()
    }

    fn gaussian_target(p: usize) -> Target {
        Target { beta_tilde: DVector::zeros(p), noise: NoiseModel::gaussian(1.0).unwrap() }
    }

    #[test]
    fn proposal_equal_to_target_gives_unit_weights() {
        let d = example1_design();
        let target = gaussian_target(3);
        let mix = ProposalMixture::single(DVector::zeros(3), 1.0).unwrap();
        let s = importance_sample(&d, &target, &mix, 0.7, &SamplingOptions::new(200, 1)).unwrap();
        assert!(s.draws.iter().all(|d| d.log_weight == 0.0));
        assert_eq!(s.ess, 200.0);
    }

    #[test]
    fn mixture_validation() {
        let b = DVector::zeros(2);
        let comp = |w: f64, m: f64| ProposalComponent { weight: w, beta_dagger: b.clone(), variance_multiplier: m };
        assert!(ProposalMixture::new(vec![comp(0.5, 1.0), comp(0.4, 1.0)]).is_err());
        assert!(ProposalMixture::new(vec![comp(1.0, 0.0)]).is_err());
        assert!(ProposalMixture::new(vec![comp(0.5, 2.0), comp(0.5, 4.0)]).is_ok());
    }

    #[test]
    fn sampling_is_deterministic_across_thread_counts() {
        let d = random_design(3, 6, &[2, 2, 3, 3]);
        let target = gaussian_target(d.p());
        let mix = ProposalMixture::single(DVector::zeros(d.p()), 5.0).unwrap();
        let opts = SamplingOptions::new(64, 9);
        let a = importance_sample(&d, &target, &mix, 0.3, &opts).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| importance_sample(&d, &target, &mix, 0.3, &opts).unwrap());
        for (x, y) in a.draws.iter().zip(&b.draws) {
            assert_eq!(x.log_weight.to_bits(), y.log_weight.to_bits());
            assert_eq!(x.estimate, y.estimate);
        }
    }

    #[test]
    fn debias_identity_and_full_removal() {
        let d = random_design(4, 12, &[2, 2, 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = DVector::from_fn(12, |_, _| rng.sample::<f64, _>(StandardNormal));
        let fit = solve_block_lasso(&d, &y, 0.3 * lambda_max(&d, &y)).unwrap();
        let theta = d.psi().clone().try_inverse().unwrap();
        let a = debias(&d, &fit, &theta).unwrap();
        let b = debias_from_residual(&d, &y, &fit.beta_hat, &theta).unwrap();
        assert!((&a - &b).amax() < 1e-8);
        // Θ̂ = Ψ⁻¹ gives least squares
        let ls = theta * d.x().tr_mul(&y) / 12.0;
        assert!((a - ls).amax() < 1e-8);
    }

    fn unit_set(estimates: Vec<f64>) -> (WeightedSampleSet, GroupedDesign) {
        let x = DMatrix::from_element(1, 1, 1.0);
        let d = build_design(x, GroupPartition::singletons(1).unwrap(), 2.0).unwrap();
        let draws = estimates
            .into_iter()
            .map(|e| Draw {
                estimate: DVector::from_element(1, e),
                beta_hat: DVector::from_element(1, e),
                subgradient: DVector::zeros(1),
                active: vec![],
                log_weight: 0.0,
                component: 0,
                response: None,
            })
            .collect::<Vec<_>>();
        let n = draws.len() as f64;
        (
            WeightedSampleSet {
                draws,
                lambda: 1.0,
                beta_tilde: DVector::zeros(1),
                ess: n,
                low_ess: false,
                resampled: 0,
                debiased: false,
            },
            d,
        )
    }

    #[test]
    fn pvalue_edge_cases() {
        let (s, d) = unit_set(vec![0.5, -1.0, 2.0, 0.1]);
        let kind = StatisticKind::BlockNorm { group: 0 };
        let p = estimate_pvalue(&s, &TestSpec { kind, observed: 0.0 }, &d).unwrap();
        assert_eq!(p.p_hat, 1.0);
        let p = estimate_pvalue(&s, &TestSpec { kind, observed: 1e300 }, &d).unwrap();
        assert_eq!((p.p_hat, p.std_err), (0.0, 0.0));
        assert!(p.low_ess_in_tail);
        let p = estimate_pvalue(&s, &TestSpec { kind, observed: 1.0 }, &d).unwrap();
        assert_eq!(p.p_hat, 0.5);
    }

    #[test]
    fn quantile_conventions() {
        let (s, d) = unit_set((1..=10).map(|i| i as f64).collect());
        let kind = StatisticKind::BlockNorm { group: 0 };
        let c = DVector::zeros(1);
        assert_eq!(confidence_region(&s, kind, &c, 1.0, &d).unwrap().threshold, 1.0);
        // order statistic ⌈0.8·10⌉ = 8
        let r = confidence_region(&s, kind, &c, 0.2, &d).unwrap();
        assert_eq!(r.threshold, 8.0);
        assert!(r.contains(&d, &DVector::from_element(1, 7.5)).unwrap());
        assert!(!r.contains(&d, &DVector::from_element(1, -8.5)).unwrap());
        assert!(r.low_ess_warning);
    }

    #[test]
    fn cv_report_formulas() {
        let r = cv_report(&[0.25, 0.25, 0.25], 100).unwrap();
        assert_eq!(r.cv, Some(0.0));
        let r = cv_report(&[0.5, 0.5], 100_000).unwrap();
        assert!((r.cv_pb_theory.unwrap() - 0.003_162_277).abs() < 1e-8);
        let r = cv_report(&[1e-8, 1e-8], 100_000).unwrap();
        assert!((r.cv_pb_theory.unwrap() - 31.622_776).abs() < 1e-5);
        assert!(cv_report(&[0.0, 0.0], 10).unwrap().cv.is_none());
        assert!(cv_report(&[0.1], 10).is_err());
    }
}
