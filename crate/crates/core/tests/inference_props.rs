mod common;

use blockaug::density::{density, point_from_beta};
use blockaug::inference::{
    confidence_region, debias_from_residual, importance_sample, parametric_bootstrap, pvalue_from_statistics,
    ProposalComponent, ProposalMixture, SamplingOptions, StatisticKind, Target,
};
use blockaug::noise::NoiseModel;
use blockaug::oracles::{example1_design, example1_stratum_probability, orthogonal_design};
use blockaug::rng::draw_rng;
use blockaug::solver::solve_block_lasso;
use common::*;
use nalgebra::{DMatrix, DVector};

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[test]
fn bootstrap_weights_are_one() {
    let inst = random_instance(1, 20, &[5; 10], 2.0, (0.2, 0.4));
    let target = Target { beta_tilde: inst.beta0.clone(), noise: NoiseModel::gaussian(1.0).unwrap() };
    let s = parametric_bootstrap(&inst.design, &target, inst.lambda, &SamplingOptions::new(200, 3)).unwrap();
    assert!(s.draws.iter().all(|d| d.log_weight == 0.0));
    assert!((s.ess - 200.0).abs() < 1e-9);
}

/// The stored weight equals the ratio of augmented densities at the sampled
/// point, target over mixture; the Jacobians cancel.
#[test]
fn weights_match_augmented_density_ratio() {
    let inst = random_instance(5, 20, &[5; 10], 2.0, (0.2, 0.4));
    let sigma2 = 1.3;
    let target = Target { beta_tilde: inst.beta0.clone(), noise: NoiseModel::gaussian(sigma2).unwrap() };
    let mut alt = inst.beta0.clone();
    alt.rows_mut(0, 5).fill(0.4);
    let mixture = ProposalMixture::new(vec![
        ProposalComponent { weight: 0.3, beta_dagger: inst.beta0.clone(), variance_multiplier: 2.0 },
        ProposalComponent { weight: 0.7, beta_dagger: alt, variance_multiplier: 4.0 },
    ])
    .unwrap();
    let samples = importance_sample(&inst.design, &target, &mixture, inst.lambda, &SamplingOptions::new(100, 9)).unwrap();
    for d in &samples.draws {
        let pt = point_from_beta(&inst.design, &d.beta_hat, &d.subgradient).unwrap();
        let num = density(&pt, &inst.design, &inst.beta0, inst.lambda, &target.noise).unwrap().log_value;
        let terms: Vec<f64> = mixture
            .components()
            .iter()
            .map(|c| {
                let noise = NoiseModel::gaussian(sigma2 * c.variance_multiplier).unwrap();
                c.weight.ln() + density(&pt, &inst.design, &c.beta_dagger, inst.lambda, &noise).unwrap().log_value
            })
            .collect();
        let lw = num - log_sum_exp(&terms);
        assert!((lw - d.log_weight).abs() < 1e-8, "{lw} vs {}", d.log_weight);
    }
}

#[test]
fn debias_identity_on_sampled_fits() {
    let inst = random_instance(8, 30, &[10; 10], 2.0, (0.2, 0.4));
    let p = inst.design.p();
    let mut theta = DMatrix::<f64>::identity(p, p);
    for k in 0..p - 1 {
        theta[(k, k + 1)] = 0.3;
    }
    let target = Target { beta_tilde: inst.beta0.clone(), noise: NoiseModel::gaussian(1.0).unwrap() };
    let mixture = ProposalMixture::single(DVector::zeros(p), 3.0).unwrap();
    let mut opts = SamplingOptions::new(200, 4);
    opts.theta = Some(theta.clone());
    opts.keep_response = true;
    let s = importance_sample(&inst.design, &target, &mixture, inst.lambda, &opts).unwrap();
    assert!(s.debiased);
    for d in &s.draws {
        let y = d.response.as_ref().unwrap();
        let b = debias_from_residual(&inst.design, y, &d.beta_hat, &theta).unwrap();
        assert!((&b - &d.estimate).amax() < 1e-8);
    }
}

fn example1_is_estimate(n_draws: usize, replicate: u64, multiplier: f64) -> (f64, f64) {
    let d = example1_design();
    let target = Target { beta_tilde: DVector::zeros(3), noise: NoiseModel::gaussian(1.0).unwrap() };
    let mixture = ProposalMixture::single(DVector::zeros(3), multiplier).unwrap();
    let mut opts = SamplingOptions::new(n_draws, 11);
    opts.replicate = replicate;
    let s = importance_sample(&d, &target, &mixture, 1.0, &opts).unwrap();
    let hits: Vec<f64> = s.draws.iter().map(|d| if d.active == [0] { 1.0 } else { 0.0 }).collect();
    let e = pvalue_from_statistics(&hits, &s.relative_weights(), 0.5).unwrap();
    (e.p_hat, e.std_err)
}

#[test]
fn is_and_pb_agree_with_the_closed_form() {
    let exact = example1_stratum_probability(&[0], 1.0, 1.0).unwrap();
    for m in [1.0, 5.0] {
        let (p, se) = example1_is_estimate(20_000, 0, m);
        assert!((p - exact).abs() < 4.0 * se, "M {m}: {p} ± {se} vs {exact}");
    }
}

/// Replicate variance of the IS estimator falls like 1/N.
#[test]
fn is_variance_scales_inversely_with_draws() {
    let reps = 30;
    let sizes = [1_000usize, 10_000, 100_000];
    let log_var: Vec<f64> = sizes
        .iter()
        .map(|&n| {
            let est: Vec<f64> = (0..reps).map(|r| example1_is_estimate(n, r, 5.0).0).collect();
            let mean = est.iter().sum::<f64>() / reps as f64;
            let var = est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
            var.log10()
        })
        .collect();
    let slope = (log_var[2] - log_var[0]) / 2.0;
    assert!((slope + 1.0).abs() < 0.2, "slope {slope} from {log_var:?}");
}

#[test]
fn bootstrap_region_covers_at_nominal_rate() {
    let design = orthogonal_design(3, 5, 2).unwrap();
    let p = design.p();
    let noise = NoiseModel::gaussian(1.0).unwrap();
    let mut beta0 = DVector::zeros(p);
    beta0.rows_mut(0, 3).fill(0.5);
    let target = Target { beta_tilde: beta0.clone(), noise: noise.clone() };
    let lambda = 0.15;
    let reps = 300;
    let delta = 0.1;
    let mut covered = 0;
    for r in 0..reps {
        let mut rng = draw_rng(21, r, 0);
        let y = design.x() * &beta0 + noise.sample(design.n(), &mut rng);
        let fit = solve_block_lasso(&design, &y, lambda).unwrap();
        let mut opts = SamplingOptions::new(400, 22);
        opts.replicate = r;
        let pb = parametric_bootstrap(&design, &target, lambda, &opts).unwrap();
        let region = confidence_region(&pb, StatisticKind::SumBlockNorms, &fit.beta_hat, delta, &design).unwrap();
        covered += region.contains(&design, &beta0).unwrap() as usize;
    }
    let rate = covered as f64 / reps as f64;
    let se = (delta * (1.0 - delta) / reps as f64).sqrt();
    assert!((rate - (1.0 - delta)).abs() < 4.0 * se, "coverage {rate}");
}
