//! The augmented estimator (γ̂_A, S, A) on its stratified sample space and
//! its exact sampling density.
//!
//! A point of stratum Ω_A is stored as (r_A, s). Densities are taken with
//! respect to dr_A ∧ ds_F for a chart F of free subgradient coordinates; the
//! remaining coordinates s_D are pinned by the constraints Qᵀs = 0 and
//! ‖s_(j)‖_{α*} = 1 for j ∈ A.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::GroupedDesign;
use crate::noise::{gram_cholesky, NoiseModel};
use crate::quad::{integrate_nested, Bound, QuadOptions};
use crate::solver::BlockLassoFit;

const POINT_TOL: f64 = 1e-8;
const BOUNDARY_RTOL: f64 = 1e-12;
const CHART_RCOND: f64 = 1e-12;

/// A value (r_A, s) of the augmented estimator in stratum A.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedPoint {
    /// Active groups, ascending.
    pub active: Vec<usize>,
    /// r_j > 0 for j ∈ A, in the order of `active`.
    pub r: DVector<f64>,
    pub s: DVector<f64>,
}

impl AugmentedPoint {
    /// Validates membership in Ω_A up to [`POINT_TOL`].
    pub fn new(design: &GroupedDesign, mut active: Vec<usize>, r: DVector<f64>, s: DVector<f64>) -> Result<Self> {
        let part = design.partition();
        if s.len() != design.p() {
            return Err(Error::DimensionMismatch(format!("s has length {}, expected {}", s.len(), design.p())));
        }
        if r.len() != active.len() {
            return Err(Error::DimensionMismatch(format!(
                "r has length {} but {} groups are active",
                r.len(),
                active.len()
            )));
        }
        let mut order: Vec<usize> = (0..active.len()).collect();
        order.sort_by_key(|&i| active[i]);
        let r = DVector::from_iterator(r.len(), order.iter().map(|&i| r[i]));
        active.sort_unstable();
        if active.windows(2).any(|w| w[0] == w[1]) || active.iter().any(|&j| j >= part.num_groups()) {
            return Err(Error::InvalidInput(format!("invalid active set {active:?}")));
        }
        if active.len() > design.sample_space_dim() {
            return Err(Error::ConstraintViolation(format!(
                "{} active groups exceed the stratum dimension {}",
                active.len(),
                design.sample_space_dim()
            )));
        }
        if s.iter().chain(r.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("augmented point"));
        }
        if r.iter().any(|&v| v <= 0.0) {
            return Err(Error::ConstraintViolation("r_A must be positive".into()));
        }
        let dual = design.dual_block_norms(&s);
        for (j, &d) in dual.iter().enumerate() {
            if active.binary_search(&j).is_ok() {
                if (d - 1.0).abs() > POINT_TOL {
                    return Err(Error::ConstraintViolation(format!("active group {j} has dual norm {d}")));
                }
            } else if d > 1.0 + POINT_TOL {
                return Err(Error::ConstraintViolation(format!("inactive group {j} has dual norm {d}")));
            }
        }
        let q = design.null_basis();
        if q.ncols() > 0 {
            let off = (q.transpose() * &s).amax();
            if off > POINT_TOL {
                return Err(Error::ConstraintViolation(format!("s is off the row space of XW^-1 by {off:.3e}")));
            }
        }
        Ok(Self { active, r, s })
    }

    pub fn stratum_size(&self) -> usize {
        self.active.len()
    }

    /// r_j for group j (0 when inactive).
    pub fn r_of(&self, j: usize) -> f64 {
        self.active.binary_search(&j).map(|i| self.r[i]).unwrap_or(0.0)
    }

    /// b with b_(j) = r_j η(s_(j)): the coefficient vector this point represents.
    pub fn beta(&self, design: &GroupedDesign) -> Result<DVector<f64>> {
        let eta = design.eta_map()?;
        let mut b = DVector::zeros(design.p());
        for (i, &j) in self.active.iter().enumerate() {
            for &k in design.partition().group(j) {
                b[k] = self.r[i] * eta.scalar(self.s[k]);
            }
        }
        Ok(b)
    }
}

/// Point for a coefficient vector and subgradient: A = groups with a nonzero
/// block, r_j = ‖β_(j)‖_α. Checks that β_(j) = r_j η(s_(j)).
pub fn point_from_beta(design: &GroupedDesign, beta: &DVector<f64>, s: &DVector<f64>) -> Result<AugmentedPoint> {
    if beta.len() != design.p() {
        return Err(Error::DimensionMismatch(format!("beta has length {}, expected {}", beta.len(), design.p())));
    }
    let norms = design.block_norms(beta);
    let active: Vec<usize> = (0..norms.len()).filter(|&j| norms[j] > 0.0).collect();
    let r = DVector::from_iterator(active.len(), active.iter().map(|&j| norms[j]));
    let point = AugmentedPoint::new(design, active, r, s.clone())?;
    let gap = (&point.beta(design)? - beta).amax();
    if gap > POINT_TOL * (1.0 + beta.amax()) {
        return Err(Error::ConstraintViolation(format!("beta is not r*eta(s) (gap {gap:.3e})")));
    }
    Ok(point)
}

/// (γ̂_A, S, A) of a converged fit.
pub fn augment(fit: &BlockLassoFit, design: &GroupedDesign) -> Result<AugmentedPoint> {
    let r = DVector::from_iterator(fit.active.len(), fit.active.iter().map(|&j| fit.gamma_hat[j]));
    let point = AugmentedPoint::new(design, fit.active.clone(), r, fit.subgradient.clone())?;
    let rebuilt = point.beta(design)?;
    let gap = (&rebuilt - &fit.beta_hat).amax();
    if gap > POINT_TOL {
        return Err(Error::ConstraintViolation(format!(
            "b = r*eta(s) misses beta_hat by {gap:.3e}; the fit is not converged"
        )));
    }
    Ok(point)
}

/// Constraint rows C: Qᵀ on top, then η(s_(j))ᵀ on the coordinates of each active group.
pub fn constraint_matrix(point: &AugmentedPoint, design: &GroupedDesign) -> Result<DMatrix<f64>> {
    let eta = design.eta_map()?;
    let q = design.null_basis();
    let p = design.p();
    let nq = q.ncols();
    let mut c = DMatrix::zeros(nq + point.active.len(), p);
    c.rows_mut(0, nq).copy_from(&q.transpose());
    for (i, &j) in point.active.iter().enumerate() {
        for &k in design.partition().group(j) {
            c[(nq + i, k)] = eta.scalar(point.s[k]);
        }
    }
    Ok(c)
}

/// Local parameterisation of ℳ_A by the free coordinates s_F.
#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    free: Vec<usize>,
    dependent: Vec<usize>,
    /// p × |F| tangent matrix with T_F = I.
    t: DMatrix<f64>,
}

impl Chart {
    pub fn free(&self) -> &[usize] {
        &self.free
    }

    pub fn dependent(&self) -> &[usize] {
        &self.dependent
    }

    pub fn tangent(&self) -> &DMatrix<f64> {
        &self.t
    }

    /// Identifier carried alongside chart-dependent density values.
    pub fn id(&self) -> String {
        let f: Vec<String> = self.free.iter().map(|k| k.to_string()).collect();
        format!("F={{{}}}", f.join(","))
    }
}

/// Canonical chart: each active group's largest |s_k| is dependent, then the
/// remaining dependent coordinates come from complete pivoting on the
/// row-space constraints.
pub fn choose_chart(point: &AugmentedPoint, design: &GroupedDesign) -> Result<Chart> {
    let c = constraint_matrix(point, design)?;
    let (rows, p) = c.shape();
    let nq = design.null_basis().ncols();
    let mut work = c.clone();
    let mut used = vec![false; p];
    let mut dependent = Vec::with_capacity(rows);
    let scale = c.amax().max(1.0);

    let pivot = |work: &mut DMatrix<f64>, row: usize, col: usize, others: &[usize]| {
        let pv = work[(row, col)];
        for &i in others {
            let factor = work[(i, col)] / pv;
            if factor != 0.0 {
                for k in 0..p {
                    let v = work[(row, k)];
                    work[(i, k)] -= factor * v;
                }
            }
        }
    };

    for (i, &j) in point.active.iter().enumerate() {
        let g = design.partition().group(j);
        let k = *g
            .iter()
            .max_by(|&&a, &&b| point.s[a].abs().total_cmp(&point.s[b].abs()))
            .expect("groups are non-empty");
        if point.s[k] == 0.0 {
            return Err(Error::DegenerateChart(format!("active group {j} has s = 0")));
        }
        used[k] = true;
        dependent.push(k);
        let q_rows: Vec<usize> = (0..nq).collect();
        pivot(&mut work, nq + i, k, &q_rows);
    }
    let mut remaining: Vec<usize> = (0..nq).collect();
    while !remaining.is_empty() {
        let mut best = (0.0_f64, 0usize, 0usize);
        for (ri, &i) in remaining.iter().enumerate() {
            for k in 0..p {
                if !used[k] && work[(i, k)].abs() > best.0 {
                    best = (work[(i, k)].abs(), ri, k);
                }
            }
        }
        if best.0 <= 1e-12 * scale {
            return Err(Error::DegenerateChart("constraint matrix is rank deficient".into()));
        }
        let row = remaining.swap_remove(best.1);
        used[best.2] = true;
        dependent.push(best.2);
        pivot(&mut work, row, best.2, &remaining);
    }
    let free: Vec<usize> = (0..p).filter(|&k| !used[k]).collect();
    chart_from_constraints(&c, free)
}

/// Chart with a caller-chosen free set F.
pub fn chart_with_free(point: &AugmentedPoint, design: &GroupedDesign, free: &[usize]) -> Result<Chart> {
    let c = constraint_matrix(point, design)?;
    let mut f = free.to_vec();
    f.sort_unstable();
    f.dedup();
    if f.len() != free.len() || f.iter().any(|&k| k >= design.p()) {
        return Err(Error::InvalidInput(format!("invalid free set {free:?}")));
    }
    let expected = design.sample_space_dim() - point.active.len();
    if f.len() != expected {
        return Err(Error::DimensionMismatch(format!(
            "chart needs {expected} free coordinates, got {}",
            f.len()
        )));
    }
    chart_from_constraints(&c, f)
}

fn chart_from_constraints(c: &DMatrix<f64>, free: Vec<usize>) -> Result<Chart> {
    let p = c.ncols();
    let dependent: Vec<usize> = (0..p).filter(|k| free.binary_search(k).is_err()).collect();
    if dependent.len() != c.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} dependent coordinates for {} constraints",
            dependent.len(),
            c.nrows()
        )));
    }
    let mut t = DMatrix::zeros(p, free.len());
    for (i, &k) in free.iter().enumerate() {
        t[(k, i)] = 1.0;
    }
    if !dependent.is_empty() {
        let cd = c.select_columns(&dependent);
        let sv = cd.clone().svd(false, false).singular_values;
        if sv.min() <= CHART_RCOND * sv.max() {
            return Err(Error::DegenerateChart(format!(
                "dependent block is singular (rcond {:.3e})",
                sv.min() / sv.max()
            )));
        }
        if !free.is_empty() {
            let rhs = -c.select_columns(&free);
            let td = cd
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::DegenerateChart("dependent block is singular".into()))?;
            for (i, &k) in dependent.iter().enumerate() {
                t.row_mut(k).copy_from(&td.row(i));
            }
        }
    }
    Ok(Chart { free, dependent, t })
}

/// Solves for the dependent coordinates given s_F, starting at `seed`.
///
/// The seed picks the sheet: the result is rejected if a dependent coordinate
/// of an active group changes sign relative to the seed.
pub fn lift(
    design: &GroupedDesign,
    active: &[usize],
    free: &[usize],
    free_values: &[f64],
    seed: &DVector<f64>,
) -> Result<DVector<f64>> {
    if free.len() != free_values.len() || seed.len() != design.p() {
        return Err(Error::DimensionMismatch("lift arguments".into()));
    }
    let eta = design.eta_map()?;
    // singleton groups under α = 1 share the α = 2 geometry
    let astar = if design.alpha() == 1.0 { 2.0 } else { design.alpha_star() };
    let q = design.null_basis();
    let nq = q.ncols();
    let p = design.p();
    let part = design.partition();
    let is_free = {
        let mut m = vec![false; p];
        free.iter().for_each(|&k| m[k] = true);
        m
    };
    let dependent: Vec<usize> = (0..p).filter(|&k| !is_free[k]).collect();
    let rows = nq + active.len();
    if dependent.len() != rows {
        return Err(Error::DimensionMismatch(format!(
            "{} dependent coordinates for {rows} constraints",
            dependent.len()
        )));
    }
    let mut s = seed.clone();
    for (&k, &v) in free.iter().zip(free_values) {
        s[k] = v;
    }
    if dependent.is_empty() {
        return Ok(s);
    }
    let residual = |s: &DVector<f64>| -> DVector<f64> {
        let mut g = DVector::zeros(rows);
        if nq > 0 {
            g.rows_mut(0, nq).copy_from(&(q.transpose() * s));
        }
        for (i, &j) in active.iter().enumerate() {
            let sum: f64 = part.group(j).iter().map(|&k| s[k].abs().powf(astar)).sum();
            g[nq + i] = sum - 1.0;
        }
        g
    };
    let mut g = residual(&s);
    for _ in 0..100 {
        let gn = g.amax();
        if gn < 1e-14 {
            break;
        }
        let mut jac = DMatrix::zeros(rows, dependent.len());
        for (c, &k) in dependent.iter().enumerate() {
            for i in 0..nq {
                jac[(i, c)] = q[(k, i)];
            }
        }
        for (i, &j) in active.iter().enumerate() {
            for (c, &k) in dependent.iter().enumerate() {
                if part.group_of(k) == j {
                    jac[(nq + i, c)] = astar * eta.scalar(s[k]);
                }
            }
        }
        let step = jac
            .lu()
            .solve(&g)
            .ok_or_else(|| Error::DegenerateChart("lift Jacobian is singular".into()))?;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let mut trial = s.clone();
            for (c, &k) in dependent.iter().enumerate() {
                trial[k] -= t * step[c];
            }
            let gt = residual(&trial);
            if gt.amax() < gn {
                s = trial;
                g = gt;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if g.amax() > 1e-11 {
        return Err(Error::ConstraintViolation(format!(
            "lift did not reach the manifold (residual {:.3e})",
            g.amax()
        )));
    }
    for &k in &dependent {
        if active.contains(&part.group_of(k)) && seed[k] != 0.0 && s[k].signum() != seed[k].signum() {
            return Err(Error::ConstraintViolation("lift left the sheet of the seed".into()));
        }
    }
    Ok(s)
}

/// The differential M = [(Ψ∘η)_A | {(r∘Ψ)D + λW}T], p × (|A| + |F|).
pub fn build_m(point: &AugmentedPoint, chart: &Chart, design: &GroupedDesign, lambda: f64) -> Result<DMatrix<f64>> {
    let eta = design.eta_map()?;
    let part = design.partition();
    let psi = design.psi();
    let p = design.p();
    let na = point.active.len();
    let nf = chart.free.len();
    let mut m = DMatrix::zeros(p, na + nf);
    let mut d = DVector::<f64>::zeros(p);
    for (i, &j) in point.active.iter().enumerate() {
        let g = part.group(j);
        let mut col = DVector::zeros(p);
        for &k in g {
            col.axpy(eta.scalar(point.s[k]), &psi.column(k), 1.0);
            d[k] = point.r[i] * eta.derivative(point.s[k])?;
        }
        m.set_column(i, &col);
    }
    let mut dt = chart.t.clone();
    for (k, mut row) in dt.row_iter_mut().enumerate() {
        row *= d[k];
    }
    let mut block = psi * dt;
    let w = design.weights();
    for k in 0..p {
        for c in 0..nf {
            block[(k, c)] += lambda * w[k] * chart.t[(k, c)];
        }
    }
    m.columns_mut(na, nf).copy_from(&block);
    Ok(m)
}

fn jacobian_of_m(design: &GroupedDesign, m: &DMatrix<f64>) -> Result<f64> {
    let dim = design.sample_space_dim();
    if m.ncols() != dim {
        return Err(Error::DimensionMismatch(format!("M has {} columns, expected {dim}", m.ncols())));
    }
    if design.is_high_dimensional() {
        Ok((design.b_matrix() * m).determinant())
    } else {
        Ok(m.determinant())
    }
}

/// Signed J_A = det(√n(Xᵀ)⁺M) for p ≥ n, det M for p < n.
pub fn jacobian(point: &AugmentedPoint, chart: &Chart, design: &GroupedDesign, lambda: f64) -> Result<f64> {
    let m = build_m(point, chart, design, lambda)?;
    jacobian_of_m(design, &m)
}

fn h_vector(point: &AugmentedPoint, design: &GroupedDesign, beta0: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    if beta0.len() != design.p() {
        return Err(Error::DimensionMismatch("beta0".into()));
    }
    let b = point.beta(design)?;
    let mut h = design.psi() * (b - beta0);
    h.axpy(lambda, &design.weights().component_mul(&point.s), 1.0);
    Ok(h)
}

/// H̃ = √n(Xᵀ)⁺H for p ≥ n, and H itself for p < n, where
/// H = Ψ(b − β₀) + λWs.
pub fn htilde(point: &AugmentedPoint, design: &GroupedDesign, beta0: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    let h = h_vector(point, design, beta0, lambda)?;
    Ok(if design.is_high_dimensional() { design.b_matrix() * h } else { h })
}

/// A density value with everything needed to interpret it.
#[derive(Debug, Clone)]
pub struct DensityEval {
    pub value: f64,
    pub log_value: f64,
    pub jacobian: f64,
    pub htilde: DVector<f64>,
    /// Chart the value refers to.
    pub free: Vec<usize>,
}

fn check_interior(point: &AugmentedPoint, design: &GroupedDesign) -> Result<()> {
    let dual = design.dual_block_norms(&point.s);
    for (j, &d) in dual.iter().enumerate() {
        if point.active.binary_search(&j).is_ok() {
            continue;
        }
        if d > 1.0 + BOUNDARY_RTOL {
            return Err(Error::OutsideSampleSpace(format!("inactive group {j} has dual norm {d}")));
        }
        if d >= 1.0 - BOUNDARY_RTOL {
            return Err(Error::Boundary(format!("inactive group {j} has dual norm 1")));
        }
    }
    Ok(())
}

fn log_noise(design: &GroupedDesign, noise: &NoiseModel, ht: &DVector<f64>) -> Result<f64> {
    if design.is_high_dimensional() {
        Ok(noise.log_density(ht.as_slice()))
    } else {
        let chol = gram_cholesky(design.psi())?;
        noise.log_density_low_dim(ht.as_slice(), &chol, design.n())
    }
}

fn assemble(log_g: f64, jac: f64, ht: DVector<f64>, free: Vec<usize>) -> DensityEval {
    let log_value = log_g + jac.abs().ln();
    DensityEval { value: log_value.exp(), log_value, jacobian: jac, htilde: ht, free }
}

/// f_A = g_n(H̃)|J_A| with respect to dr_A ∧ ds_F of the given chart.
pub fn density_in_chart(
    point: &AugmentedPoint,
    chart: &Chart,
    design: &GroupedDesign,
    beta0: &DVector<f64>,
    lambda: f64,
    noise: &NoiseModel,
) -> Result<DensityEval> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidInput("lambda must be positive".into()));
    }
    check_interior(point, design)?;
    let jac = jacobian(point, chart, design, lambda)?;
    let ht = htilde(point, design, beta0, lambda)?;
    let log_g = log_noise(design, noise, &ht)?;
    Ok(assemble(log_g, jac, ht, chart.free.clone()))
}

/// Density in the canonical chart.
pub fn density(
    point: &AugmentedPoint,
    design: &GroupedDesign,
    beta0: &DVector<f64>,
    lambda: f64,
    noise: &NoiseModel,
) -> Result<DensityEval> {
    check_interior(point, design)?;
    let chart = choose_chart(point, design)?;
    density_in_chart(point, &chart, design, beta0, lambda, noise)
}

/// Lasso form of the density for singleton groups: the Jacobian uses
/// [Ψ_A | λW_B T_B•] with T_A• = 0, so T depends on A only. Free coordinates
/// default to the canonical chart's.
pub fn lasso_density(
    point: &AugmentedPoint,
    design: &GroupedDesign,
    beta0: &DVector<f64>,
    lambda: f64,
    noise: &NoiseModel,
) -> Result<DensityEval> {
    check_interior(point, design)?;
    let chart = choose_chart(point, design)?;
    lasso_density_with_free(point, design, chart.free(), beta0, lambda, noise)
}

pub fn lasso_density_with_free(
    point: &AugmentedPoint,
    design: &GroupedDesign,
    free: &[usize],
    beta0: &DVector<f64>,
    lambda: f64,
    noise: &NoiseModel,
) -> Result<DensityEval> {
    if !design.partition().is_singletons() {
        return Err(Error::Unsupported("the Lasso density needs singleton groups".into()));
    }
    if beta0.len() != design.p() {
        return Err(Error::DimensionMismatch("beta0".into()));
    }
    check_interior(point, design)?;
    let p = design.p();
    let active_coord = |k: usize| point.active.binary_search(&k).is_ok();
    if free.iter().any(|&k| active_coord(k)) {
        return Err(Error::InvalidInput("free coordinates must be inactive".into()));
    }
    let inactive: Vec<usize> = (0..p).filter(|&k| !active_coord(k)).collect();
    let dep_b: Vec<usize> = inactive.iter().copied().filter(|k| !free.contains(k)).collect();
    // T_B from Q_Bᵀ T_B = 0 with T_F = I
    let q = design.null_basis();
    let mut t_b = DMatrix::<f64>::zeros(p, free.len());
    for (i, &k) in free.iter().enumerate() {
        t_b[(k, i)] = 1.0;
    }
    if !dep_b.is_empty() {
        let qd = q.select_rows(&dep_b).transpose();
        let rhs = -q.select_rows(free).transpose();
        let sol = qd
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::DegenerateChart("row-space block is singular".into()))?;
        for (i, &k) in dep_b.iter().enumerate() {
            t_b.row_mut(k).copy_from(&sol.row(i));
        }
    }
    let psi = design.psi();
    let w = design.weights();
    let na = point.active.len();
    let mut m = DMatrix::zeros(p, na + free.len());
    for (i, &k) in point.active.iter().enumerate() {
        m.set_column(i, &(psi.column(k) * point.s[k].signum()));
    }
    for c in 0..free.len() {
        for &k in &inactive {
            m[(k, na + c)] = lambda * w[k] * t_b[(k, c)];
        }
    }
    let jac = jacobian_of_m(design, &m)?;

    let mut b = DVector::zeros(p);
    for (i, &k) in point.active.iter().enumerate() {
        b[k] = point.r[i] * point.s[k].signum();
    }
    let h = psi * (b - beta0) + lambda * w.component_mul(&point.s);
    let ht = if design.is_high_dimensional() { design.b_matrix() * h } else { h };
    let log_g = log_noise(design, noise, &ht)?;
    Ok(assemble(log_g, jac, ht, free.to_vec()))
}

/// Integration region in chart coordinates θ = (r_A, s_F); each bound may
/// depend on the coordinates before it.
pub struct Region<'a> {
    pub bounds: Vec<Bound<'a>>,
}

impl<'a> Region<'a> {
    pub fn new(bounds: Vec<Bound<'a>>) -> Self {
        Self { bounds }
    }

    /// A box with constant bounds.
    pub fn rectangle(limits: &[(f64, f64)]) -> Region<'static> {
        Region {
            bounds: limits
                .iter()
                .map(|&(lo, hi)| Box::new(move |_: &[f64]| (lo, hi)) as Bound<'static>)
                .collect(),
        }
    }
}

/// Stratum-level specification for [`event_probability_quadrature`].
pub struct StratumSheet<'a> {
    pub active: Vec<usize>,
    pub free: Vec<usize>,
    /// Any point on the sheet; it selects the branch of the lift.
    pub seed: DVector<f64>,
    pub region: Region<'a>,
}

/// ∫ f_A dr_A ds_F over a region of one sheet of Ω_A, by nested adaptive
/// quadrature. Points outside the sample space contribute 0. Meant for small
/// n (at most 3 integration dimensions).
pub fn event_probability_quadrature(
    design: &GroupedDesign,
    beta0: &DVector<f64>,
    lambda: f64,
    noise: &NoiseModel,
    sheet: &StratumSheet<'_>,
    abs_tol: f64,
) -> Result<f64> {
    let na = sheet.active.len();
    let dim = design.sample_space_dim();
    if na + sheet.free.len() != dim || sheet.region.bounds.len() != dim {
        return Err(Error::DimensionMismatch(format!(
            "stratum of dimension {dim} needs {dim} coordinates and bounds"
        )));
    }
    if dim > 3 {
        return Err(Error::Unsupported("quadrature is limited to 3 dimensions".into()));
    }
    let mut active = sheet.active.clone();
    active.sort_unstable();
    if active != sheet.active {
        return Err(Error::InvalidInput("active groups must be ascending".into()));
    }
    let mut f = |theta: &[f64]| -> Result<f64> {
        let r = &theta[..na];
        if r.iter().any(|&v| v <= 0.0) {
            return Ok(0.0);
        }
        let s = lift(design, &active, &sheet.free, &theta[na..], &sheet.seed)?;
        if design
            .dual_block_norms(&s)
            .iter()
            .enumerate()
            .any(|(j, &d)| !active.contains(&j) && d > 1.0)
        {
            return Ok(0.0);
        }
        let point = AugmentedPoint { active: active.clone(), r: DVector::from_column_slice(r), s };
        let chart = chart_with_free(&point, design, &sheet.free)?;
        match density_in_chart(&point, &chart, design, beta0, lambda, noise) {
            Ok(d) => Ok(d.value),
            Err(Error::OutsideSampleSpace(_)) | Err(Error::Boundary(_)) => Ok(0.0),
            Err(e) => Err(e),
        }
    };
    let opts = QuadOptions { abs_tol, rel_tol: 0.0, max_intervals: 4000 };
    let out = integrate_nested(&sheet.region.bounds, &mut f, &opts)?;
    if !out.converged {
        log::warn!("stratum quadrature did not reach abs_tol {abs_tol:.1e}");
    }
    Ok(out.value)
}
