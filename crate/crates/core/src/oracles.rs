//! Exact reference values: the two-group toy design with n = 2, the
//! orthogonal design, and plain Monte Carlo frequencies.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use statrs::function::erf::erfc;
use statrs::function::gamma::{gamma_ur, ln_gamma};

use crate::density::{event_probability_quadrature, Region, StratumSheet};
use crate::error::{Error, Result};
use crate::model::{build_design, GroupPartition, GroupedDesign};
use crate::noise::NoiseModel;
use crate::quad::{integrate, QuadOptions};
use crate::rng::draw_rng;
use crate::solver::{BlockLassoFit, BlockLassoSolver};

/// The four strata of the toy design.
pub const EXAMPLE1_STRATA: [&[usize]; 4] = [&[], &[0], &[1], &[0, 1]];

/// Standard normal upper tail 1 − Φ(x).
pub fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}

pub fn normal_cdf(x: f64) -> f64 {
    normal_sf(-x)
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// X/√2 = [[1,0,1],[0,1,1]], groups {0,1} and {2}, W = I, α = 2.
pub fn example1_design() -> GroupedDesign {
    let x = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 1.0]) * 2f64.sqrt();
    let part = GroupPartition::new(vec![vec![0, 1], vec![2]], vec![1.0, 1.0]).expect("valid partition");
    build_design(x, part, 2.0).expect("full-rank design")
}

/// Chart used by the closed forms: free coordinates per stratum.
pub fn example1_free(active: &[usize]) -> Result<Vec<usize>> {
    match active {
        [] => Ok(vec![0, 1]),
        [0] | [1] => Ok(vec![0]),
        [0, 1] => Ok(vec![]),
        _ => Err(Error::InvalidInput(format!("no such stratum {active:?}"))),
    }
}

const DOMAIN_TOL: f64 = 1e-9;

/// Closed-form f_A for the toy design, in the chart of [`example1_free`].
/// `r` holds r_j for the active groups, `s` the full subgradient.
pub fn example1_density(active: &[usize], r: &[f64], s: &[f64; 3], sigma2: f64, lambda: f64) -> Result<f64> {
    if r.len() != active.len() || r.iter().any(|&v| v <= 0.0) {
        return Err(Error::InvalidInput("r must be positive, one per active group".into()));
    }
    let [s1, s2, s3] = *s;
    let out = |msg: &str| Err(Error::OutsideSampleSpace(msg.to_string()));
    if (s1 + s2 - s3).abs() > DOMAIN_TOL {
        return out("s1 + s2 != s3");
    }
    let n1 = s1 * s1 + s2 * s2;
    let l2 = lambda * lambda;
    match active {
        [] => {
            if n1 > 1.0 || s3.abs() > 1.0 {
                return out("outside the empty-stratum domain");
            }
            Ok(l2 / (PI * sigma2) * (-l2 * n1 / sigma2).exp())
        }
        [0] => {
            if (n1 - 1.0).abs() > DOMAIN_TOL || s3.abs() > 1.0 {
                return out("outside the arcs of stratum {1}");
            }
            let a = r[0] + lambda;
            Ok((-a * a / sigma2).exp() * a / (PI * sigma2 * s2.abs()))
        }
        [1] => {
            if n1 > 1.0 || (s3.abs() - 1.0).abs() > DOMAIN_TOL {
                return out("outside the segments of stratum {2}");
            }
            let r2 = r[0];
            Ok(2.0 * lambda / (PI * sigma2) * (-2.0 * r2 * (r2 + lambda) / sigma2).exp() * (-l2 * n1 / sigma2).exp())
        }
        [0, 1] => {
            if (n1 - 1.0).abs() > DOMAIN_TOL || (s3.abs() - 1.0).abs() > DOMAIN_TOL {
                return out("not one of the four corner points");
            }
            let (r1, r2) = (r[0], r[1]);
            let a = r1 + r2 + lambda;
            Ok((-(a * a + r2 * r2) / sigma2).exp() / (PI * sigma2))
        }
        _ => Err(Error::InvalidInput(format!("no such stratum {active:?}"))),
    }
}

/// P(𝒜 = A) for the toy design with β₀ = 0, written through Z ∼ N₂(0, I)
/// and τ = √2λ/σ.
pub fn example1_stratum_probability(active: &[usize], sigma2: f64, lambda: f64) -> Result<f64> {
    let sigma = sigma2.sqrt();
    let tau = 2f64.sqrt() * lambda / sigma;
    let half = tau * FRAC_1_SQRT_2; // λ/σ
    let opts = QuadOptions { abs_tol: 1e-12, rel_tol: 1e-12, max_intervals: 2000 };
    match active {
        [0] => Ok(0.5 * (-lambda * lambda / sigma2).exp()),
        [] => {
            // u = (Z1+Z2)/√2, v = (Z1−Z2)/√2: ‖Z‖ ≤ τ and |u| ≤ τ/√2
            let mut f = |u: f64| Ok(normal_pdf(u) * (1.0 - 2.0 * normal_sf((tau * tau - u * u).max(0.0).sqrt())));
            Ok(integrate(&mut f, -half, half, &opts)?.value)
        }
        [1] => {
            // 2 P(u ≥ τ/√2, |v| ≤ τ/√2)
            Ok(2.0 * normal_sf(half) * (1.0 - 2.0 * normal_sf(half)))
        }
        [0, 1] => {
            // 4 P(Z1 ≥ 0, Z2 ≥ Z1 + τ)
            let mut f = |z: f64| Ok(normal_pdf(z) * normal_sf(z + tau));
            Ok(4.0 * integrate(&mut f, 0.0, f64::INFINITY, &opts)?.value)
        }
        _ => Err(Error::InvalidInput(format!("no such stratum {active:?}"))),
    }
}

/// Sheets covering stratum `active` of the toy design, in the chart of
/// [`example1_free`]. Coordinates are (r_A, s_F).
pub fn example1_sheets(active: &[usize]) -> Result<Vec<StratumSheet<'static>>> {
    let v = |x: [f64; 3]| DVector::from_column_slice(&x);
    let inf = f64::INFINITY;
    let sheet = |free: Vec<usize>, seed, region| StratumSheet { active: active.to_vec(), free, seed, region };
    match active {
        [] => {
            // ‖(s1, s2)‖ ≤ 1 and |s1 + s2| ≤ 1
            let outer = Box::new(|_: &[f64]| (-1.0, 1.0)) as crate::quad::Bound<'static>;
            let inner = Box::new(|t: &[f64]| {
                let s1 = t[0];
                let c = (1.0 - s1 * s1).max(0.0).sqrt();
                ((-c).max(-1.0 - s1), c.min(1.0 - s1))
            }) as crate::quad::Bound<'static>;
            Ok(vec![sheet(vec![0, 1], v([0.0; 3]), Region::new(vec![outer, inner]))])
        }
        [0] => Ok(vec![
            sheet(vec![0], v([-0.6, 0.8, 0.2]), Region::rectangle(&[(0.0, inf), (-1.0, 0.0)])),
            sheet(vec![0], v([0.6, -0.8, -0.2]), Region::rectangle(&[(0.0, inf), (0.0, 1.0)])),
        ]),
        [1] => Ok(vec![
            sheet(vec![0], v([0.5, 0.5, 1.0]), Region::rectangle(&[(0.0, inf), (0.0, 1.0)])),
            sheet(vec![0], v([-0.5, -0.5, -1.0]), Region::rectangle(&[(0.0, inf), (-1.0, 0.0)])),
        ]),
        [0, 1] => Ok([[1.0, 0.0, 1.0], [0.0, 1.0, 1.0], [-1.0, 0.0, -1.0], [0.0, -1.0, -1.0]]
            .into_iter()
            .map(|c| sheet(vec![], v(c), Region::rectangle(&[(0.0, inf), (0.0, inf)])))
            .collect()),
        _ => Err(Error::InvalidInput(format!("no such stratum {active:?}"))),
    }
}

/// P(𝒜 = A) for the toy design by quadrature of the general density.
pub fn example1_quadrature_probability(active: &[usize], sigma2: f64, lambda: f64, abs_tol: f64) -> Result<f64> {
    let d = example1_design();
    let noise = NoiseModel::gaussian(sigma2)?;
    let beta0 = DVector::zeros(3);
    let sheets = example1_sheets(active)?;
    let tol = abs_tol / sheets.len() as f64;
    sheets
        .iter()
        .map(|sh| event_probability_quadrature(&d, &beta0, lambda, &noise, sh, tol))
        .sum()
}

/// Survival function of the noncentral χ²_k(δ) at x, as a Poisson mixture of
/// central tails summed outward from the Poisson mode.
pub fn noncentral_chi2_sf(k: f64, delta: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let central = |j: f64| gamma_ur(0.5 * k + j, 0.5 * x);
    if delta == 0.0 {
        return central(0.0);
    }
    let mu = 0.5 * delta;
    let log_pois = |j: f64| -mu + j * mu.ln() - ln_gamma(j + 1.0);
    let mode = mu.floor();
    let mut total = 0.0;
    let mut j = mode;
    loop {
        let term = log_pois(j).exp() * central(j);
        total += term;
        if (log_pois(j).exp() < 1e-10 * total.max(1e-300) && j > mode) || j > mode + 10_000.0 {
            break;
        }
        j += 1.0;
    }
    let mut j = mode - 1.0;
    while j >= 0.0 {
        let w = log_pois(j).exp();
        total += w * central(j);
        if w < 1e-10 * total.max(1e-300) {
            break;
        }
        j -= 1.0;
    }
    total.min(1.0)
}

/// Exact laws for the orthogonal design Ψ = I, W = √m I, p = n = mJ.
#[derive(Debug, Clone)]
pub struct OrthogonalOracle {
    pub m: usize,
    pub n: usize,
    pub sigma2: f64,
    pub lambda: f64,
    /// (n/σ²)‖β₀(j)‖².
    pub noncentrality: f64,
}

impl OrthogonalOracle {
    pub fn new(m: usize, groups: usize, sigma2: f64, lambda: f64, beta0_j: &[f64]) -> Result<Self> {
        if beta0_j.len() != m || m == 0 || groups == 0 {
            return Err(Error::DimensionMismatch("beta0 block must have length m".into()));
        }
        let n = m * groups;
        let nc = n as f64 / sigma2 * beta0_j.iter().map(|v| v * v).sum::<f64>();
        Ok(Self { m, n, sigma2, lambda, noncentrality: nc })
    }

    fn threshold(&self) -> f64 {
        self.lambda * (self.m as f64).sqrt()
    }

    /// P(‖β̃_(j)‖ > c).
    fn ls_norm_sf(&self, c: f64) -> f64 {
        noncentral_chi2_sf(self.m as f64, self.noncentrality, self.n as f64 * c * c / self.sigma2)
    }

    /// P(β̂_(j) = 0) = P(‖β̃_(j)‖ ≤ λ√m).
    pub fn p_zero(&self) -> f64 {
        1.0 - self.ls_norm_sf(self.threshold())
    }

    /// P(‖β̂_(j)‖ > t) = P(‖β̃_(j)‖ > t + λ√m).
    pub fn tail_prob(&self, t: f64) -> f64 {
        self.ls_norm_sf(t.max(0.0) + self.threshold())
    }

    /// Marginal density of γ̂_j on r > 0, valid for β₀(j) = 0.
    pub fn marginal_density(&self, r: f64) -> Result<f64> {
        if self.noncentrality != 0.0 {
            return Err(Error::Unsupported("marginal density is available for beta0(j) = 0 only".into()));
        }
        if r <= 0.0 {
            return Ok(0.0);
        }
        let m = self.m as f64;
        let a = self.n as f64 / self.sigma2;
        let z = r + self.threshold();
        let log_c = 0.5 * m * a.ln() - (0.5 * m - 1.0) * 2f64.ln() - ln_gamma(0.5 * m);
        Ok((log_c + (m - 1.0) * z.ln() - 0.5 * a * z * z).exp())
    }
}

/// Orthogonal design Ψ = I with J groups of size m: X = √n·O for a fixed
/// orthogonal O, weights √m.
pub fn orthogonal_design(m: usize, groups: usize, seed: u64) -> Result<GroupedDesign> {
    use rand::Rng;
    use rand_distr::StandardNormal;
    let p = m * groups;
    let mut rng = draw_rng(seed, 0, 0);
    let g = DMatrix::from_fn(p, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = g.qr().q();
    let x = q * (p as f64).sqrt();
    build_design(x, GroupPartition::from_sizes(&vec![m; groups])?, 2.0)
}

/// Plain Monte Carlo estimate of P(event) under y = Xβ₀ + ε, with its
/// binomial standard error.
pub fn brute_force_event_probability<F>(
    design: &GroupedDesign,
    beta0: &DVector<f64>,
    noise: &NoiseModel,
    lambda: f64,
    event: F,
    draws: usize,
    seed: u64,
) -> Result<(f64, f64)>
where
    F: Fn(&BlockLassoFit) -> bool + Sync,
{
    if draws == 0 {
        return Err(Error::EmptySample);
    }
    let mean = design.x() * beta0;
    let hits: Result<Vec<bool>> = (0..draws)
        .into_par_iter()
        .map(|t| {
            let mut rng = draw_rng(seed, u64::MAX, t as u64);
            let y = &mean + noise.sample(design.n(), &mut rng);
            let fit = BlockLassoSolver::new(design).solve(&y, lambda)?;
            Ok(event(&fit))
        })
        .collect();
    let k = hits?.iter().filter(|&&h| h).count() as f64;
    let n = draws as f64;
    let p = k / n;
    Ok((p, (p * (1.0 - p) / n).sqrt()))
}

/// ‖β̂_(j)‖ for every group and draw under y = Xβ₀ + ε.
pub fn simulated_block_norms(
    design: &GroupedDesign,
    beta0: &DVector<f64>,
    noise: &NoiseModel,
    lambda: f64,
    draws: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let mean = design.x() * beta0;
    let solver = BlockLassoSolver::new(design);
    (0..draws)
        .into_par_iter()
        .map(|t| {
            let mut rng = draw_rng(seed, u64::MAX - 1, t as u64);
            let y = &mean + noise.sample(design.n(), &mut rng);
            Ok(design.block_norms(&solver.solve(&y, lambda)?.beta_hat))
        })
        .collect()
}

/// One row of the agreement table.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleCheck {
    pub name: String,
    pub reference: f64,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl OracleCheck {
    fn new(name: impl Into<String>, reference: f64, value: f64, tolerance: f64) -> Self {
        let pass = (reference - value).abs() <= tolerance;
        Self { name: name.into(), reference, value, tolerance, pass }
    }
}

#[derive(Debug, Clone)]
pub struct OracleSuiteOptions {
    pub sigma2: f64,
    pub lambda: f64,
    pub draws: usize,
    pub seed: u64,
    pub orth_m: usize,
    pub orth_groups: usize,
    pub orth_lambda: f64,
    /// β₀ block of the second orthogonal group; the first is zero.
    pub orth_signal: f64,
}

impl Default for OracleSuiteOptions {
    fn default() -> Self {
        Self {
            sigma2: 1.0,
            lambda: 1.0,
            draws: 100_000,
            seed: 1,
            orth_m: 5,
            orth_groups: 10,
            orth_lambda: 0.13,
            orth_signal: 0.25,
        }
    }
}

/// Closed form vs quadrature vs simulation on the toy design, and the
/// orthogonal-design laws vs simulation. Simulation checks use 3 binomial SE.
pub fn run_oracle_checks(opts: &OracleSuiteOptions) -> Result<Vec<OracleCheck>> {
    let mut out = Vec::new();
    let (s2, lam) = (opts.sigma2, opts.lambda);
    let d = example1_design();
    let noise = NoiseModel::gaussian(s2)?;
    let mut total = 0.0;
    for a in EXAMPLE1_STRATA {
        let exact = example1_stratum_probability(a, s2, lam)?;
        total += exact;
        let quad = example1_quadrature_probability(a, s2, lam, 1e-8)?;
        out.push(OracleCheck::new(format!("toy P(A={a:?}) quadrature"), exact, quad, 1e-6));
        let (mc, _) =
            brute_force_event_probability(&d, &DVector::zeros(3), &noise, lam, |f| f.active == a, opts.draws, opts.seed)?;
        let se = (exact * (1.0 - exact) / opts.draws as f64).sqrt();
        out.push(OracleCheck::new(format!("toy P(A={a:?}) simulation"), exact, mc, 3.0 * se));
    }
    out.push(OracleCheck::new("toy sum of P(A)", 1.0, total, 1e-7));

    let (m, groups) = (opts.orth_m, opts.orth_groups);
    let od = orthogonal_design(m, groups, opts.seed)?;
    let mut beta0 = DVector::zeros(m * groups);
    for k in m..2 * m {
        beta0[k] = opts.orth_signal;
    }
    let norms = simulated_block_norms(&od, &beta0, &noise, opts.orth_lambda, opts.draws, opts.seed)?;
    let n = opts.draws as f64;
    for j in 0..2 {
        let block: Vec<f64> = (j * m..(j + 1) * m).map(|k| beta0[k]).collect();
        let oracle = OrthogonalOracle::new(m, groups, s2, opts.orth_lambda, &block)?;
        let se = |p: f64| (p * (1.0 - p) / n).sqrt();
        let p0 = oracle.p_zero();
        let emp0 = norms.iter().filter(|v| v[j] == 0.0).count() as f64 / n;
        out.push(OracleCheck::new(format!("orthogonal group {j} P(zero)"), p0, emp0, 3.0 * se(p0)));
        for t in [0.0, 0.2, 0.5, 1.0] {
            let pt = oracle.tail_prob(t);
            let emp = norms.iter().filter(|v| v[j] > t).count() as f64 / n;
            out.push(OracleCheck::new(format!("orthogonal group {j} P(norm > {t})"), pt, emp, 3.0 * se(pt)));
        }
    }
    Ok(out)
}
