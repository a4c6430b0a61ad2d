#![allow(dead_code)]

use blockaug::density::{augment, lift, AugmentedPoint, Chart};
use blockaug::model::{build_design, GroupPartition, GroupedDesign};
use blockaug::rng::draw_rng;
use blockaug::solver::{lambda_max, solve_block_lasso, BlockLassoFit};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize, sd: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| sd * rng.sample::<f64, _>(StandardNormal))
}

pub fn grouped_design(rng: &mut ChaCha8Rng, n: usize, sizes: &[usize], alpha: f64) -> GroupedDesign {
    let p = sizes.iter().sum();
    let part = if alpha == 1.0 {
        GroupPartition::singletons(p).unwrap()
    } else {
        GroupPartition::from_sizes(sizes).unwrap()
    };
    build_design(gaussian_matrix(rng, n, p), part, alpha).unwrap()
}

/// Sparse β₀ with about `frac` of the groups nonzero.
pub fn sparse_beta(rng: &mut ChaCha8Rng, design: &GroupedDesign, frac: f64, scale: f64) -> DVector<f64> {
    let mut b = DVector::zeros(design.p());
    for j in 0..design.partition().num_groups() {
        if rng.random::<f64>() < frac {
            for &k in design.partition().group(j) {
                b[k] = scale * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    b
}

pub struct Instance {
    pub design: GroupedDesign,
    pub y: DVector<f64>,
    pub beta0: DVector<f64>,
    pub eps: DVector<f64>,
    pub lambda: f64,
}

/// A random grouped regression with λ a random fraction of λ_max.
pub fn random_instance(seed: u64, n: usize, sizes: &[usize], alpha: f64, ratio: (f64, f64)) -> Instance {
    let mut rng = draw_rng(seed, 0, 0);
    let design = grouped_design(&mut rng, n, sizes, alpha);
    let beta0 = sparse_beta(&mut rng, &design, 0.3, 1.0);
    let eps = gaussian_vector(&mut rng, n, 1.0);
    let y = design.x() * &beta0 + &eps;
    let r = rng.random_range(ratio.0..ratio.1);
    let lambda = r * lambda_max(&design, &y);
    Instance { design, y, beta0, eps, lambda }
}

pub fn fit(inst: &Instance) -> BlockLassoFit {
    solve_block_lasso(&inst.design, &inst.y, inst.lambda).unwrap()
}

/// Central-difference derivative of θ = (r_A, s_F) ↦ H̃.
pub fn fd_htilde_jacobian(
    point: &AugmentedPoint,
    chart: &Chart,
    design: &GroupedDesign,
    beta0: &DVector<f64>,
    lambda: f64,
) -> DMatrix<f64> {
    let na = point.active.len();
    let free = chart.free().to_vec();
    let theta: Vec<f64> = point.r.iter().copied().chain(free.iter().map(|&k| point.s[k])).collect();
    let dim = theta.len();
    let eval = |th: &[f64]| {
        let s = lift(design, &point.active, &free, &th[na..], &point.s).unwrap();
        let pt = AugmentedPoint { active: point.active.clone(), r: DVector::from_column_slice(&th[..na]), s };
        blockaug::density::htilde(&pt, design, beta0, lambda).unwrap()
    };
    let m = eval(&theta).len();
    let mut out = DMatrix::zeros(m, dim);
    for i in 0..dim {
        let h = 1e-6 * theta[i].abs().max(1e-2);
        let mut up = theta.clone();
        let mut dn = theta.clone();
        up[i] += h;
        dn[i] -= h;
        let col = (eval(&up) - eval(&dn)) / (2.0 * h);
        out.set_column(i, &col);
    }
    out
}

/// Stationarity violation of a fit, recomputed from scratch in the ∞-norm:
/// active groups need Xⱼᵀr/n = λwⱼ∂‖β̂ⱼ‖, inactive ones ‖Xⱼᵀr/n‖_{α*} ≤ λwⱼ.
pub fn independent_kkt(design: &GroupedDesign, y: &DVector<f64>, fit: &BlockLassoFit) -> f64 {
    let n = design.n() as f64;
    let c = design.x().tr_mul(&(y - design.x() * &fit.beta_hat)) / n;
    let part = design.partition();
    let mut worst = 0.0f64;
    for j in 0..part.num_groups() {
        let idx = part.group(j);
        let lw = fit.lambda * part.weight(j);
        let b: Vec<f64> = idx.iter().map(|&k| fit.beta_hat[k]).collect();
        let cj: Vec<f64> = idx.iter().map(|&k| c[k]).collect();
        let bn = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        if bn > 0.0 {
            for (ci, bi) in cj.iter().zip(&b) {
                let target = if design.alpha() == 1.0 { lw * bi.signum() } else { lw * bi / bn };
                worst = worst.max((ci - target).abs());
            }
        } else {
            let dual = if design.alpha() == 1.0 {
                cj.iter().fold(0.0f64, |m, v| m.max(v.abs()))
            } else {
                cj.iter().map(|v| v * v).sum::<f64>().sqrt()
            };
            worst = worst.max(dual - lw);
        }
    }
    worst
}

pub fn kkt_scale(design: &GroupedDesign, y: &DVector<f64>) -> f64 {
    1.0 + (design.x().tr_mul(y) / design.n() as f64).amax()
}

/// Interior points at (n, p) = (4, 8) bucketed by |A|.
pub fn small_points(alpha: f64, per_size: usize) -> Vec<(Instance, AugmentedPoint)> {
    let mut buckets: Vec<Vec<_>> = vec![Vec::new(), Vec::new(), Vec::new()];
    let mut seed = 0u64;
    while buckets.iter().any(|b| b.len() < per_size) {
        seed += 1;
        assert!(seed < 20_000, "could not fill strata: {:?}", buckets.iter().map(Vec::len).collect::<Vec<_>>());
        let inst = random_instance(seed, 4, &[2; 4], alpha, (0.02, 1.6));
        let Ok(f) = solve_block_lasso(&inst.design, &inst.y, inst.lambda) else { continue };
        let k = f.num_active();
        if k > 2 || buckets[k].len() >= per_size {
            continue;
        }
        let pt = augment(&f, &inst.design).unwrap();
        // skip points too close to a stratum boundary for a finite difference
        let dual = inst.design.dual_block_norms(&pt.s);
        if pt.active.is_empty() && dual.iter().any(|&v| v > 1.0 - 1e-3) {
            continue;
        }
        if pt.r.iter().any(|&r| r < 1e-3) {
            continue;
        }
        buckets[k].push((inst, pt));
    }
    buckets.into_iter().flatten().collect()
}
