//! Block-Lasso solver for α ∈ {1, 2}, subgradient extraction, λ selection and
//! the uniqueness certificate.
//!
//! The solver runs a working-set loop around monotone FISTA on the restricted
//! problem. Once the active blocks are identified, a Newton step on the smooth
//! KKT system of the active blocks polishes the iterate to machine precision.
//! Convergence is judged on the KKT residual, never on objective change.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{lq_norm, GroupedDesign};

#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Total budget of proximal-gradient iterations across the working-set loop.
    pub max_iter: usize,
    /// KKT tolerance relative to 1 + ‖Xᵀy/n‖∞.
    pub kkt_rel_tol: f64,
    /// Groups with block norm below this are set exactly to zero.
    pub activity_tol: f64,
    pub max_outer: usize,
    /// Keep the objective value after every accepted iterate.
    pub record_objective: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iter: 200_000,
            kkt_rel_tol: 1e-9,
            activity_tol: 1e-10,
            max_outer: 200,
            record_objective: false,
        }
    }
}

/// A converged block-Lasso solution with its subgradient.
#[derive(Debug, Clone)]
pub struct BlockLassoFit {
    pub beta_hat: DVector<f64>,
    /// The unique subgradient S = (nλW)⁻¹Xᵀ(y − Xβ̂).
    pub subgradient: DVector<f64>,
    pub lambda: f64,
    pub alpha: f64,
    /// Active groups G(β̂), ascending.
    pub active: Vec<usize>,
    /// Block norms ‖β̂_(j)‖_α for every group.
    pub gamma_hat: Vec<f64>,
    pub kkt_residual: f64,
    /// The tolerance the residual was certified against.
    pub kkt_tol: f64,
    pub objective: f64,
    pub iterations: usize,
    pub objective_trace: Option<Vec<f64>>,
}

impl BlockLassoFit {
    pub fn num_active(&self) -> usize {
        self.active.len()
    }
}

/// λ_max = max_j ‖X_(j)ᵀy‖_{α*}/(n w_j): the smallest λ with β̂ = 0.
pub fn lambda_max(design: &GroupedDesign, y: &DVector<f64>) -> f64 {
    let c = design.x().tr_mul(y) / design.n() as f64;
    design
        .dual_block_norms(&c)
        .iter()
        .zip(design.partition().weights())
        .map(|(g, w)| g / w)
        .fold(0.0, f64::max)
}

/// S = (nλW)⁻¹Xᵀ(y − Xβ̂).
pub fn extract_subgradient(
    design: &GroupedDesign,
    y: &DVector<f64>,
    beta_hat: &DVector<f64>,
    lambda: f64,
) -> Result<DVector<f64>> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidInput(format!("lambda must be positive, got {lambda}")));
    }
    check_lengths(design, y, beta_hat)?;
    let resid = y - design.x() * beta_hat;
    let mut s = design.x().tr_mul(&resid);
    let scale = design.n() as f64 * lambda;
    s.iter_mut()
        .zip(design.weights().iter())
        .for_each(|(v, w)| *v /= scale * w);
    Ok(s)
}

fn check_lengths(design: &GroupedDesign, y: &DVector<f64>, beta: &DVector<f64>) -> Result<()> {
    if y.len() != design.n() {
        return Err(Error::DimensionMismatch(format!("y has length {}, expected {}", y.len(), design.n())));
    }
    if beta.len() != design.p() {
        return Err(Error::DimensionMismatch(format!(
            "beta has length {}, expected {}",
            beta.len(),
            design.p()
        )));
    }
    Ok(())
}

/// Penalty geometry shared by the full and restricted problems.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Penalty {
    /// ℓ1 inside every block.
    L1,
    /// ℓ2 block norm.
    L2,
}

impl Penalty {
    fn from_alpha(alpha: f64) -> Result<Self> {
        if alpha == 1.0 {
            Ok(Self::L1)
        } else if alpha == 2.0 {
            Ok(Self::L2)
        } else {
            Err(Error::Unsupported(format!(
                "the solver handles alpha in {{1, 2}} only, got {alpha}"
            )))
        }
    }

    fn block_norm(self, v: &[f64]) -> f64 {
        match self {
            Self::L1 => lq_norm(v, 1.0),
            Self::L2 => lq_norm(v, 2.0),
        }
    }

    /// In-place prox of τ‖·‖ on one block.
    fn prox(self, v: &mut [f64], tau: f64) {
        match self {
            Self::L1 => v.iter_mut().for_each(|x| *x = x.signum() * (x.abs() - tau).max(0.0)),
            Self::L2 => {
                let nrm = lq_norm(v, 2.0);
                let shrink = if nrm > tau { 1.0 - tau / nrm } else { 0.0 };
                v.iter_mut().for_each(|x| *x *= shrink);
            }
        }
    }

    /// ‖g − λw ∂‖·‖(β)‖∞ minimised over the subdifferential, for one block.
    fn block_kkt(self, beta: &[f64], grad: &[f64], lw: f64) -> f64 {
        match self {
            Self::L1 => beta
                .iter()
                .zip(grad)
                .map(|(&b, &g)| {
                    if b != 0.0 {
                        (g - lw * b.signum()).abs()
                    } else {
                        (g.abs() - lw).max(0.0)
                    }
                })
                .fold(0.0, f64::max),
            Self::L2 => {
                let nb = lq_norm(beta, 2.0);
                if nb > 0.0 {
                    beta.iter()
                        .zip(grad)
                        .map(|(&b, &g)| (g - lw * b / nb).abs())
                        .fold(0.0, f64::max)
                } else {
                    let ng = lq_norm(grad, 2.0);
                    if ng <= lw {
                        0.0
                    } else {
                        lq_norm(grad, f64::INFINITY) * (1.0 - lw / ng)
                    }
                }
            }
        }
    }
}

/// The problem restricted to a working set of groups.
struct Restricted {
    /// coordinate indices into the full problem
    idx: Vec<usize>,
    /// (start, end, weight) of each local block
    blocks: Vec<(usize, usize, f64)>,
    psi: DMatrix<f64>,
    c: DVector<f64>,
    lipschitz: f64,
}

impl Restricted {
    fn new(design: &GroupedDesign, c_full: &DVector<f64>, groups: &BTreeSet<usize>) -> Self {
        let part = design.partition();
        let mut idx = Vec::new();
        let mut blocks = Vec::with_capacity(groups.len());
        for &j in groups {
            let start = idx.len();
            idx.extend_from_slice(part.group(j));
            blocks.push((start, idx.len(), part.weight(j)));
        }
        let d = idx.len();
        let psi_full = design.psi();
        let psi = DMatrix::from_fn(d, d, |a, b| psi_full[(idx[a], idx[b])]);
        let c = DVector::from_iterator(d, idx.iter().map(|&k| c_full[k]));
        let lipschitz = if d <= 300 {
            psi.clone().symmetric_eigenvalues().max().max(f64::MIN_POSITIVE)
        } else {
            design.lipschitz()
        };
        Self { idx, blocks, psi, c, lipschitz }
    }

    fn penalty(&self, pen: Penalty, x: &DVector<f64>) -> f64 {
        self.blocks
            .iter()
            .map(|&(a, b, w)| w * pen.block_norm(&x.as_slice()[a..b]))
            .sum()
    }

    /// ½xᵀΨx − cᵀx + λ·pen(x), together with Ψx.
    fn objective(&self, pen: Penalty, lambda: f64, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let px = &self.psi * x;
        (0.5 * x.dot(&px) - self.c.dot(x) + lambda * self.penalty(pen, x), px)
    }

    fn kkt(&self, pen: Penalty, lambda: f64, x: &DVector<f64>, px: &DVector<f64>) -> f64 {
        let grad = &self.c - px;
        self.blocks
            .iter()
            .map(|&(a, b, w)| pen.block_kkt(&x.as_slice()[a..b], &grad.as_slice()[a..b], lambda * w))
            .fold(0.0, f64::max)
    }
}

struct RestrictedOutcome {
    iterations: usize,
    residual: f64,
}

/// Block-Lasso solver bound to one design. Holds no iterate state between calls.
#[derive(Debug, Clone)]
pub struct BlockLassoSolver<'a> {
    design: &'a GroupedDesign,
    options: SolverOptions,
}

impl<'a> BlockLassoSolver<'a> {
    pub fn new(design: &'a GroupedDesign) -> Self {
        Self { design, options: SolverOptions::default() }
    }

    pub fn with_options(design: &'a GroupedDesign, options: SolverOptions) -> Self {
        Self { design, options }
    }

    pub fn design(&self) -> &'a GroupedDesign {
        self.design
    }

    pub fn options(&self) -> &SolverOptions {
        &self.options
    }

    pub fn solve(&self, y: &DVector<f64>, lambda: f64) -> Result<BlockLassoFit> {
        let init = DVector::zeros(self.design.p());
        self.solve_from(y, lambda, &init)
    }

    /// Solves from a warm start.
    pub fn solve_from(&self, y: &DVector<f64>, lambda: f64, init: &DVector<f64>) -> Result<BlockLassoFit> {
        let design = self.design;
        let pen = Penalty::from_alpha(design.alpha())?;
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidInput(format!("lambda must be positive, got {lambda}")));
        }
        check_lengths(design, y, init)?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("response"));
        }
        if init.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("initial coefficients"));
        }
        let part = design.partition();
        let num_groups = part.num_groups();
        let nf = design.n() as f64;
        let c = design.x().tr_mul(y) / nf;
        let tol = self.options.kkt_rel_tol * (1.0 + c.amax());
        let y_sq = y.norm_squared() / (2.0 * nf);

        let mut beta = init.clone();
        let mut trace = self.options.record_objective.then(Vec::new);
        let mut working: BTreeSet<usize> = (0..num_groups)
            .filter(|&j| part.group(j).iter().any(|&k| beta[k] != 0.0))
            .collect();
        let mut iterations = 0;
        let mut inner_tol = 0.25 * tol;

        for _outer in 0..self.options.max_outer {
            let grad = &c - design.psi() * &beta;
            let mut violators: Vec<(f64, usize)> = Vec::new();
            let mut residual = 0.0_f64;
            for j in 0..num_groups {
                let g = part.group(j);
                let bj: Vec<f64> = g.iter().map(|&k| beta[k]).collect();
                let gj: Vec<f64> = g.iter().map(|&k| grad[k]).collect();
                let r = pen.block_kkt(&bj, &gj, lambda * part.weight(j));
                residual = residual.max(r);
                if !working.contains(&j) && r > 0.5 * tol {
                    violators.push((r, j));
                }
            }
            if residual <= tol && violators.is_empty() {
                return self.finish(y, lambda, pen, beta, tol, iterations, trace);
            }
            if violators.is_empty() {
                inner_tol *= 0.1;
                if inner_tol < 1e-6 * tol {
                    return Err(Error::NotConverged { iterations, residual });
                }
            } else {
                working.extend(violators.iter().map(|&(_, j)| j));
            }

            let restricted = Restricted::new(design, &c, &working);
            let mut x = DVector::from_iterator(restricted.idx.len(), restricted.idx.iter().map(|&k| beta[k]));
            let budget = self.options.max_iter.saturating_sub(iterations);
            let out = self.solve_restricted(&restricted, pen, lambda, &mut x, inner_tol, budget, y_sq, &mut trace);
            iterations += out.iterations;
            for (a, &k) in restricted.idx.iter().enumerate() {
                beta[k] = x[a];
            }
            if out.residual > inner_tol {
                return Err(Error::NotConverged { iterations, residual: out.residual });
            }
            // drop groups that ended at zero; they re-enter if they violate KKT
            working.retain(|&j| part.group(j).iter().any(|&k| beta[k] != 0.0));
        }
        let grad = &c - design.psi() * &beta;
        let residual = self.full_kkt(pen, lambda, &beta, &grad);
        Err(Error::NotConverged { iterations, residual })
    }

    fn full_kkt(&self, pen: Penalty, lambda: f64, beta: &DVector<f64>, grad: &DVector<f64>) -> f64 {
        let part = self.design.partition();
        (0..part.num_groups())
            .map(|j| {
                let g = part.group(j);
                let bj: Vec<f64> = g.iter().map(|&k| beta[k]).collect();
                let gj: Vec<f64> = g.iter().map(|&k| grad[k]).collect();
                pen.block_kkt(&bj, &gj, lambda * part.weight(j))
            })
            .fold(0.0, f64::max)
    }

    #[allow(clippy::too_many_arguments)]
    fn solve_restricted(
        &self,
        prob: &Restricted,
        pen: Penalty,
        lambda: f64,
        x: &mut DVector<f64>,
        tol: f64,
        budget: usize,
        y_sq: f64,
        trace: &mut Option<Vec<f64>>,
    ) -> RestrictedOutcome {
        let step = 1.0 / prob.lipschitz;
        let (mut fx, mut px) = prob.objective(pen, lambda, x);
        let mut residual = prob.kkt(pen, lambda, x, &px);
        if let Some(t) = trace.as_mut() {
            t.push(fx + y_sq);
        }
        if residual <= tol {
            return RestrictedOutcome { iterations: 0, residual };
        }
        let polish_gate = 1e-4 * (1.0 + prob.c.amax());
        let mut last_polish = (usize::MAX, f64::INFINITY);
        let mut stalled;
        let mut yv = x.clone();
        let mut t = 1.0_f64;
        let mut iters = 0;
        while iters < budget {
            iters += 1;
            let grad = &prob.psi * &yv - &prob.c;
            let mut z = &yv - grad * step;
            for &(a, b, w) in &prob.blocks {
                pen.prox(&mut z.as_mut_slice()[a..b], step * lambda * w);
            }
            let (fz, pz) = prob.objective(pen, lambda, &z);
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let x_prev = x.clone();
            if fz <= fx {
                stalled = false;
                *x = z.clone();
                fx = fz;
                px = pz;
                yv = &*x + (&*x - &x_prev) * ((t - 1.0) / t_next);
                t = t_next;
            } else {
                // monotone step rejected: restart momentum from the current iterate;
                // a rejection right after a restart means rounding blocks progress
                stalled = t == 1.0;
                yv = x.clone();
                t = 1.0;
            }
            if let Some(tr) = trace.as_mut() {
                tr.push(fx + y_sq);
            }
            if iters % 5 == 0 || t == 1.0 {
                residual = prob.kkt(pen, lambda, x, &px);
                if residual <= tol {
                    break;
                }
                let sig = support_signature(prob, x);
                let retry = sig != last_polish.0 || residual < 1e-2 * last_polish.1 || (stalled && residual < last_polish.1);
                if stalled && !retry {
                    break;
                }
                if residual < polish_gate && retry {
                    last_polish = (sig, residual);
                    // near a support change the smallest block may be spurious
                    let best = [false, true]
                        .into_iter()
                        .filter_map(|drop| self.polish(prob, pen, lambda, x, fx, drop))
                        .map(|(xn, fnew, pn)| {
                            let rn = prob.kkt(pen, lambda, &xn, &pn);
                            (xn, fnew, pn, rn)
                        })
                        .min_by(|a, b| a.3.total_cmp(&b.3));
                    if let Some((xn, fnew, pn, rn)) = best {
                        if rn < residual {
                            *x = xn;
                            fx = fnew;
                            px = pn;
                            residual = rn;
                            yv = x.clone();
                            t = 1.0;
                            if let Some(tr) = trace.as_mut() {
                                tr.push(fx + y_sq);
                            }
                            if residual <= tol {
                                break;
                            }
                        }
                    }
                }
            }
        }
        residual = prob.kkt(pen, lambda, x, &px);
        RestrictedOutcome { iterations: iters, residual }
    }

    /// Newton refinement on the active blocks. Returns a candidate only if it
    /// keeps the support and does not raise the objective.
    fn polish(
        &self,
        prob: &Restricted,
        pen: Penalty,
        lambda: f64,
        x: &DVector<f64>,
        fx: f64,
        drop_smallest: bool,
    ) -> Option<(DVector<f64>, f64, DVector<f64>)> {
        let mut cand = x.clone();
        if drop_smallest {
            let smallest = prob
                .blocks
                .iter()
                .map(|&(a, b, _)| (x.rows(a, b - a).amax(), a, b))
                .filter(|&(m, _, _)| m > 0.0)
                .min_by(|u, v| u.0.total_cmp(&v.0));
            let nonzero = prob.blocks.iter().filter(|&&(a, b, _)| x.rows(a, b - a).amax() > 0.0).count();
            match smallest {
                Some((_, a, b)) if nonzero > 1 => cand.rows_mut(a, b - a).fill(0.0),
                _ => return None,
            }
        }
        let x = &cand.clone();
        match pen {
            Penalty::L1 => {
                let support: Vec<usize> = (0..x.len()).filter(|&a| x[a] != 0.0).collect();
                if support.is_empty() {
                    return None;
                }
                let weight_of = |a: usize| {
                    prob.blocks.iter().find(|&&(s, e, _)| a >= s && a < e).map(|b| b.2).unwrap()
                };
                let sub = DMatrix::from_fn(support.len(), support.len(), |i, j| prob.psi[(support[i], support[j])]);
                let rhs = DVector::from_iterator(
                    support.len(),
                    support.iter().map(|&a| prob.c[a] - lambda * weight_of(a) * x[a].signum()),
                );
                let sol = robust_solve(sub, &rhs)?;
                for (i, &a) in support.iter().enumerate() {
                    if sol[i] == 0.0 || sol[i].signum() != x[a].signum() {
                        return None;
                    }
                    cand[a] = sol[i];
                }
            }
            Penalty::L2 => {
                let active: Vec<(usize, usize, f64)> = prob
                    .blocks
                    .iter()
                    .copied()
                    .filter(|&(a, b, _)| x.as_slice()[a..b].iter().any(|&v| v != 0.0))
                    .collect();
                if active.is_empty() {
                    return None;
                }
                let coords: Vec<usize> = active.iter().flat_map(|&(a, b, _)| a..b).collect();
                let d = coords.len();
                let sub_psi = DMatrix::from_fn(d, d, |i, j| prob.psi[(coords[i], coords[j])]);
                let sub_c = DVector::from_iterator(d, coords.iter().map(|&a| prob.c[a]));
                let mut v = DVector::from_iterator(d, coords.iter().map(|&a| x[a]));
                let residual_of = |v: &DVector<f64>| -> Option<DVector<f64>> {
                    let mut f = &sub_psi * v - &sub_c;
                    let mut off = 0;
                    for &(a, b, w) in &active {
                        let m = b - a;
                        let nrm = v.rows(off, m).norm();
                        if nrm <= 0.0 {
                            return None;
                        }
                        for i in off..off + m {
                            f[i] += lambda * w * v[i] / nrm;
                        }
                        off += m;
                    }
                    Some(f)
                };
                let mut f = residual_of(&v)?;
                for _ in 0..30 {
                    let fnorm = f.amax();
                    if fnorm < 1e-15 * (1.0 + sub_c.amax()) {
                        break;
                    }
                    let mut jac = sub_psi.clone();
                    let mut off = 0;
                    for &(a, b, w) in &active {
                        let m = b - a;
                        let blk = v.rows(off, m).into_owned();
                        let nrm = blk.norm();
                        let u = &blk / nrm;
                        let scale = lambda * w / nrm;
                        for i in 0..m {
                            for k in 0..m {
                                let id = if i == k { 1.0 } else { 0.0 };
                                jac[(off + i, off + k)] += scale * (id - u[i] * u[k]);
                            }
                        }
                        off += m;
                    }
                    let delta = robust_solve(jac, &f)?;
                    let mut stepsize = 1.0;
                    let mut accepted = false;
                    for _ in 0..40 {
                        let trial = &v - &delta * stepsize;
                        if let Some(ft) = residual_of(&trial) {
                            if ft.amax() < fnorm {
                                v = trial;
                                f = ft;
                                accepted = true;
                                break;
                            }
                        }
                        stepsize *= 0.5;
                    }
                    if !accepted {
                        break;
                    }
                }
                for (i, &a) in coords.iter().enumerate() {
                    cand[a] = v[i];
                }
            }
        }
        let (fc, pc) = prob.objective(pen, lambda, &cand);
        if fc <= fx + 1e-12 * (1.0 + fx.abs()) {
            Some((cand, fc, pc))
        } else {
            None
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        y: &DVector<f64>,
        lambda: f64,
        pen: Penalty,
        mut beta: DVector<f64>,
        tol: f64,
        iterations: usize,
        trace: Option<Vec<f64>>,
    ) -> Result<BlockLassoFit> {
        let design = self.design;
        let part = design.partition();
        let mut gamma = design.block_norms(&beta);
        for (j, g) in gamma.iter_mut().enumerate() {
            if *g < self.options.activity_tol {
                part.group(j).iter().for_each(|&k| beta[k] = 0.0);
                *g = 0.0;
            }
        }
        let active: Vec<usize> = (0..part.num_groups()).filter(|&j| gamma[j] > 0.0).collect();
        let subgradient = extract_subgradient(design, y, &beta, lambda)?;
        let grad = design.x().tr_mul(&(y - design.x() * &beta)) / design.n() as f64;
        let kkt_residual = self.full_kkt(pen, lambda, &beta, &grad);
        if kkt_residual > tol {
            return Err(Error::NotConverged { iterations, residual: kkt_residual });
        }
        let resid = y - design.x() * &beta;
        let objective = resid.norm_squared() / (2.0 * design.n() as f64) + lambda * design.penalty(&beta);
        Ok(BlockLassoFit {
            beta_hat: beta,
            subgradient,
            lambda,
            alpha: design.alpha(),
            active,
            gamma_hat: gamma,
            kkt_residual,
            kkt_tol: tol,
            objective,
            iterations,
            objective_trace: trace,
        })
    }
}

/// Minimum-norm least-squares solve; singular systems arise with
/// non-unique solutions, where LU returns finite garbage.
fn robust_solve(a: DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let svd = a.svd(true, true);
    let eps = 1e-12 * svd.singular_values.max();
    svd.solve(b, eps).ok().filter(|x| x.iter().all(|v| v.is_finite()))
}

fn support_signature(prob: &Restricted, x: &DVector<f64>) -> usize {
    // cheap hash of the active block pattern
    prob.blocks
        .iter()
        .enumerate()
        .filter(|(_, &(a, b, _))| x.as_slice()[a..b].iter().any(|&v| v != 0.0))
        .fold(17usize, |h, (i, _)| h.wrapping_mul(31).wrapping_add(i + 1))
}

/// Convenience wrapper: solve with default options.
pub fn solve_block_lasso(design: &GroupedDesign, y: &DVector<f64>, lambda: f64) -> Result<BlockLassoFit> {
    BlockLassoSolver::new(design).solve(y, lambda)
}

/// Which end of the k-active λ interval to return.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LambdaRule {
    /// Largest λ with exactly k active groups: the point where the k-th group
    /// enters. Every λ above it (beyond the bracket) has fewer than k active.
    #[default]
    Entry,
    /// Smallest λ with exactly k active groups: just above the point where a
    /// (k+1)-th group enters.
    Smallest,
}

/// Options for λ selection by active-group count.
#[derive(Debug, Clone)]
pub struct LambdaSearch {
    pub rule: LambdaRule,
    pub max_bisections: usize,
    pub rel_bracket: f64,
    /// Lower end of the search range relative to λ_max.
    pub min_ratio: f64,
}

impl Default for LambdaSearch {
    fn default() -> Self {
        Self { rule: LambdaRule::Entry, max_bisections: 60, rel_bracket: 1e-4, min_ratio: 1e-4 }
    }
}

/// λ at which the fit has exactly `k` active groups, located by bisection
/// on the active count below λ_max. See [`LambdaRule`] for which end of the
/// interval is returned.
pub fn select_lambda_by_active_groups(design: &GroupedDesign, y: &DVector<f64>, k: usize) -> Result<f64> {
    select_lambda_with(design, y, k, &LambdaSearch::default(), &SolverOptions::default())
}

pub fn select_lambda_with(
    design: &GroupedDesign,
    y: &DVector<f64>,
    k: usize,
    search: &LambdaSearch,
    options: &SolverOptions,
) -> Result<f64> {
    let num_groups = design.partition().num_groups();
    if k == 0 || k > num_groups {
        return Err(Error::InvalidInput(format!("k must lie in 1..={num_groups}, got {k}")));
    }
    let lmax = lambda_max(design, y);
    if lmax <= 0.0 {
        return Err(Error::LambdaSelection {
            k,
            detail: "response is orthogonal to every group (lambda_max = 0)".into(),
        });
    }
    let solver = BlockLassoSolver::with_options(design, options.clone());
    let mut warm = DVector::zeros(design.p());
    let count_at = |lam: f64, warm: &mut DVector<f64>| -> Result<usize> {
        let fit = solver.solve_from(y, lam, warm)?;
        *warm = fit.beta_hat.clone();
        Ok(fit.num_active())
    };
    // the bracket (lo, hi) straddles a count threshold: above(hi) and !above(lo)
    let threshold = match search.rule {
        LambdaRule::Entry => k,
        LambdaRule::Smallest => k + 1,
    };
    let lambda_min = search.min_ratio * lmax;
    let mut hi = lmax;
    let mut hi_count = 0;
    let mut lo = lmax;
    let mut lo_count;
    loop {
        lo *= 0.7;
        if lo < lambda_min {
            let c = count_at(lambda_min, &mut warm)?;
            if c == k && search.rule == LambdaRule::Smallest {
                return Ok(lambda_min);
            }
            return Err(Error::LambdaSelection {
                k,
                detail: format!("count stays at {c} down to lambda_min = {lambda_min:.4e}"),
            });
        }
        lo_count = count_at(lo, &mut warm)?;
        if lo_count >= threshold {
            break;
        }
        hi = lo;
        hi_count = lo_count;
    }
    for _ in 0..search.max_bisections {
        if (hi - lo) <= search.rel_bracket * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let c = count_at(mid, &mut warm)?;
        if c >= threshold {
            lo = mid;
            lo_count = c;
        } else {
            hi = mid;
            hi_count = c;
        }
    }
    let (lam, count) = match search.rule {
        LambdaRule::Entry => (lo, lo_count),
        LambdaRule::Smallest => (hi, hi_count),
    };
    if count == k {
        Ok(lam)
    } else {
        Err(Error::LambdaSelection {
            k,
            detail: format!(
                "active count jumps from {hi_count} at lambda = {hi:.6e} to {lo_count} at lambda = {lo:.6e}"
            ),
        })
    }
}

/// Result of the nul(Z) = {0} uniqueness check.
#[derive(Debug, Clone)]
pub struct UniquenessReport {
    /// Equicorrelation groups: ‖S_(j)‖_{α*} = 1 within tolerance.
    pub equicorrelation: Vec<usize>,
    /// Columns Z_j = X_(j)η(S_(j)); for α = 1 one column per equicorrelated coordinate.
    pub z: DMatrix<f64>,
    pub rank_z: usize,
    pub certified: bool,
    /// |G(β̂)| ≤ n ∧ J.
    pub active_bound_ok: bool,
}

/// Checks nul(Z) = {0}, which certifies that β̂ is the unique solution.
pub fn uniqueness_certificate(design: &GroupedDesign, fit: &BlockLassoFit) -> UniquenessReport {
    let part = design.partition();
    let n = design.n();
    let x = design.x();
    let s = &fit.subgradient;
    let band = 1e-7;
    let mut equicorrelation = Vec::new();
    let mut columns: Vec<DVector<f64>> = Vec::new();
    if design.alpha() == 1.0 {
        for j in 0..part.num_groups() {
            let mut hit = false;
            for &k in part.group(j) {
                if (s[k].abs() - 1.0).abs() < band {
                    hit = true;
                    columns.push(x.column(k) * s[k].signum());
                }
            }
            if hit {
                equicorrelation.push(j);
            }
        }
    } else {
        let astar = design.alpha_star();
        let rho = 1.0 / (design.alpha() - 1.0);
        for j in 0..part.num_groups() {
            let sj = part.block(s, j);
            if (lq_norm(&sj, astar) - 1.0).abs() < band {
                equicorrelation.push(j);
                let mut col = DVector::zeros(n);
                for (&k, &v) in part.group(j).iter().zip(&sj) {
                    col.axpy(v.signum() * v.abs().powf(rho), &x.column(k), 1.0);
                }
                columns.push(col);
            }
        }
    }
    let z = if columns.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&columns)
    };
    let (rank_z, certified) = if z.ncols() == 0 {
        (0, true)
    } else if z.ncols() > n {
        let sv = z.clone().svd(false, false).singular_values;
        let smax = sv.max();
        (sv.iter().filter(|&&v| v > 1e-8 * smax).count(), false)
    } else {
        let sv = z.clone().svd(false, false).singular_values;
        let smax = sv.max();
        let rank = sv.iter().filter(|&&v| v > 1e-8 * smax).count();
        (rank, rank == z.ncols() && smax > 0.0)
    };
    UniquenessReport {
        equicorrelation,
        z,
        rank_z,
        certified,
        active_bound_ok: fit.num_active() <= n.min(part.num_groups()),
    }
}
