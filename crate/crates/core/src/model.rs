//! Grouped design matrices, block norms and the η power map.
//!
//! Everything downstream works with a [`GroupedDesign`]: the design matrix `X`
//! together with its group partition, block-norm index α and the dense factors
//! that the density and sampling code keep reusing (Gram matrix, scaled
//! pseudo-inverse of `Xᵀ`, null-space basis of `XW⁻¹`).

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative singular-value cutoff used for rank decisions.
pub const RANK_RTOL: f64 = 1e-10;

/// Conjugate exponent α* with 1/α + 1/α* = 1.
pub fn conjugate_exponent(alpha: f64) -> f64 {
    if alpha == 1.0 {
        f64::INFINITY
    } else if alpha.is_infinite() {
        1.0
    } else {
        alpha / (alpha - 1.0)
    }
}

/// ℓ_q norm of a slice; `q = ∞` gives the max norm.
pub fn lq_norm(v: &[f64], q: f64) -> f64 {
    if q.is_infinite() {
        v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    } else if q == 2.0 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    } else if q == 1.0 {
        v.iter().map(|x| x.abs()).sum()
    } else {
        let m = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        if m == 0.0 {
            return 0.0;
        }
        m * v.iter().map(|x| (x.abs() / m).powf(q)).sum::<f64>().powf(1.0 / q)
    }
}

/// The power map η(x; ρ) = sgn(x)|x|^ρ with ρ = α*/α.
///
/// η carries the unit ℓ_{α*} sphere onto the unit ℓ_α sphere, and on that
/// sphere ⟨η(v), v⟩ = 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EtaMap {
    pub rho: f64,
}

impl EtaMap {
    pub fn new(rho: f64) -> Result<Self> {
        if !(rho.is_finite() && rho > 0.0) {
            return Err(Error::InvalidInput(format!("eta exponent must be positive and finite, got {rho}")));
        }
        Ok(Self { rho })
    }

    /// Map for block norm index α ∈ (1, ∞): ρ = 1/(α − 1).
    pub fn for_alpha(alpha: f64) -> Result<Self> {
        if !(alpha > 1.0 && alpha.is_finite()) {
            return Err(Error::Unsupported(format!("eta map needs alpha in (1, inf), got {alpha}")));
        }
        Self::new(1.0 / (alpha - 1.0))
    }

    #[inline]
    pub fn scalar(&self, x: f64) -> f64 {
        if self.rho == 1.0 {
            x
        } else {
            x.signum() * x.abs().powf(self.rho)
        }
    }

    #[inline]
    pub fn scalar_inv(&self, x: f64) -> f64 {
        if self.rho == 1.0 {
            x
        } else {
            x.signum() * x.abs().powf(1.0 / self.rho)
        }
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        eta(v, self.rho)
    }

    pub fn inverse(&self, v: &[f64]) -> Result<Vec<f64>> {
        eta_inv(v, self.rho)
    }

    pub fn derivative(&self, x: f64) -> Result<f64> {
        eta_prime(x, self.rho)
    }
}

fn check_finite(v: &[f64], what: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Componentwise sgn(x)|x|^ρ.
pub fn eta(v: &[f64], rho: f64) -> Result<Vec<f64>> {
    check_finite(v, "eta input")?;
    let map = EtaMap::new(rho)?;
    Ok(v.iter().map(|&x| map.scalar(x)).collect())
}

/// Componentwise sgn(x)|x|^{1/ρ}.
pub fn eta_inv(v: &[f64], rho: f64) -> Result<Vec<f64>> {
    check_finite(v, "eta_inv input")?;
    let map = EtaMap::new(rho)?;
    Ok(v.iter().map(|&x| map.scalar_inv(x)).collect())
}

/// η′(x) = ρ|x|^{ρ−1}. Diverges at 0 when ρ < 1, which is reported as an error.
pub fn eta_prime(x: f64, rho: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::NonFinite("eta_prime input"));
    }
    EtaMap::new(rho)?;
    if rho == 1.0 {
        return Ok(1.0);
    }
    if x == 0.0 && rho < 1.0 {
        return Err(Error::Singularity(format!("eta'(0) diverges for rho = {rho}")));
    }
    Ok(rho * x.abs().powf(rho - 1.0))
}

/// Disjoint groups covering {0..p} with positive weights.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupPartition {
    groups: Vec<Vec<usize>>,
    weights: Vec<f64>,
    group_of: Vec<usize>,
}

impl GroupPartition {
    pub fn new(groups: Vec<Vec<usize>>, weights: Vec<f64>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::InvalidInput("partition has no groups".into()));
        }
        if groups.len() != weights.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} groups but {} weights",
                groups.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::InvalidInput(format!("group weight must be positive, got {w}")));
        }
        let p: usize = groups.iter().map(Vec::len).sum();
        let mut group_of = vec![usize::MAX; p];
        for (j, g) in groups.iter().enumerate() {
            if g.is_empty() {
                return Err(Error::InvalidInput(format!("group {j} is empty")));
            }
            for &k in g {
                if k >= p || group_of[k] != usize::MAX {
                    return Err(Error::InvalidInput(format!(
                        "groups must be disjoint and cover 0..{p}; index {k} repeated or out of range"
                    )));
                }
                group_of[k] = j;
            }
        }
        Ok(Self { groups, weights, group_of })
    }

    /// Contiguous groups of the given sizes with default weights w_j = √p_j.
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        let mut start = 0;
        let groups = sizes
            .iter()
            .map(|&m| {
                let g: Vec<usize> = (start..start + m).collect();
                start += m;
                g
            })
            .collect();
        let weights = sizes.iter().map(|&m| (m as f64).sqrt()).collect();
        Self::new(groups, weights)
    }

    /// Every coordinate in its own group, unit weights (the Lasso).
    pub fn singletons(p: usize) -> Result<Self> {
        Self::new((0..p).map(|k| vec![k]).collect(), vec![1.0; p])
    }

    pub fn with_weights(self, weights: Vec<f64>) -> Result<Self> {
        Self::new(self.groups, weights)
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn p(&self) -> usize {
        self.group_of.len()
    }

    pub fn group(&self, j: usize) -> &[usize] {
        &self.groups[j]
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn size(&self, j: usize) -> usize {
        self.groups[j].len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.groups.iter().map(Vec::len).collect()
    }

    pub fn weight(&self, j: usize) -> f64 {
        self.weights[j]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn group_of(&self, k: usize) -> usize {
        self.group_of[k]
    }

    pub fn is_singletons(&self) -> bool {
        self.groups.iter().all(|g| g.len() == 1)
    }

    pub fn max_size(&self) -> usize {
        self.groups.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Diagonal of W as a p-vector.
    pub fn weight_diagonal(&self) -> DVector<f64> {
        DVector::from_iterator(self.p(), self.group_of.iter().map(|&j| self.weights[j]))
    }

    /// Extracts block j of a p-vector.
    pub fn block(&self, v: &DVector<f64>, j: usize) -> Vec<f64> {
        self.groups[j].iter().map(|&k| v[k]).collect()
    }
}

/// A design matrix with its group structure and cached factors.
///
/// Immutable after construction; share it freely between worker threads.
#[derive(Debug)]
pub struct GroupedDesign {
    x: DMatrix<f64>,
    partition: GroupPartition,
    alpha: f64,
    psi: DMatrix<f64>,
    /// √n (Xᵀ)⁺, n × p.
    b: DMatrix<f64>,
    w_diag: DVector<f64>,
    lipschitz: f64,
    singular_values: DVector<f64>,
    // right singular vectors and singular values, used for Ψ⁺
    v_thin: DMatrix<f64>,
    q: OnceLock<DMatrix<f64>>,
    psi_pinv: OnceLock<DMatrix<f64>>,
}

impl GroupedDesign {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn partition(&self) -> &GroupPartition {
        &self.partition
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn alpha_star(&self) -> f64 {
        conjugate_exponent(self.alpha)
    }

    /// Gram matrix Ψ = XᵀX / n.
    pub fn psi(&self) -> &DMatrix<f64> {
        &self.psi
    }

    /// √n (Xᵀ)⁺ (n × p). Maps row(X) coordinates to noise coordinates.
    pub fn b_matrix(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// Diagonal of W.
    pub fn weights(&self) -> &DVector<f64> {
        &self.w_diag
    }

    /// Largest eigenvalue of Ψ.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn singular_values(&self) -> &DVector<f64> {
        &self.singular_values
    }

    pub fn is_high_dimensional(&self) -> bool {
        self.p() >= self.n()
    }

    /// Dimension of every stratum Ω_A: n when p ≥ n, p otherwise.
    pub fn sample_space_dim(&self) -> usize {
        self.n().min(self.p())
    }

    /// Orthonormal basis (p × (p − n)) of null(XW⁻¹); zero columns when p ≤ n.
    pub fn null_basis(&self) -> &DMatrix<f64> {
        self.q.get_or_init(|| null_basis_of_scaled(&self.x, &self.w_diag))
    }

    /// Moore–Penrose pseudo-inverse of Ψ.
    pub fn psi_pinv(&self) -> &DMatrix<f64> {
        self.psi_pinv.get_or_init(|| {
            let n = self.n() as f64;
            let mut vs = self.v_thin.clone();
            for (mut col, &s) in vs.column_iter_mut().zip(self.singular_values.iter()) {
                col *= n / (s * s);
            }
            &vs * self.v_thin.transpose()
        })
    }

    /// η exponent for the density geometry. α = 1 is only meaningful with
    /// singleton groups, where it coincides with the α = 2 geometry.
    pub fn eta_map(&self) -> Result<EtaMap> {
        if self.alpha == 1.0 {
            if self.partition.is_singletons() {
                return EtaMap::new(1.0);
            }
            return Err(Error::Unsupported(
                "density geometry for alpha = 1 requires singleton groups".into(),
            ));
        }
        EtaMap::for_alpha(self.alpha)
    }

    /// Block α-norm of every group of a p-vector.
    pub fn block_norms(&self, v: &DVector<f64>) -> Vec<f64> {
        (0..self.partition.num_groups())
            .map(|j| lq_norm(&self.partition.block(v, j), self.alpha))
            .collect()
    }

    /// Block α*-norm of every group of a p-vector.
    pub fn dual_block_norms(&self, v: &DVector<f64>) -> Vec<f64> {
        let q = self.alpha_star();
        (0..self.partition.num_groups())
            .map(|j| lq_norm(&self.partition.block(v, j), q))
            .collect()
    }

    /// Σ_j w_j ‖v_(j)‖_α.
    pub fn penalty(&self, v: &DVector<f64>) -> f64 {
        self.block_norms(v)
            .iter()
            .zip(self.partition.weights())
            .map(|(g, w)| g * w)
            .sum()
    }

    /// Columns of X belonging to group j (n × p_j).
    pub fn group_columns(&self, j: usize) -> DMatrix<f64> {
        self.x.select_columns(self.partition.group(j))
    }
}

fn null_basis_of_scaled(x: &DMatrix<f64>, w_diag: &DVector<f64>) -> DMatrix<f64> {
    let (n, p) = x.shape();
    if p <= n {
        return DMatrix::zeros(p, 0);
    }
    // (XW⁻¹)ᵀ padded to a square matrix so the SVD returns a full orthogonal U.
    let mut padded = DMatrix::<f64>::zeros(p, p);
    for i in 0..n {
        for k in 0..p {
            padded[(k, i)] = x[(i, k)] / w_diag[k];
        }
    }
    let svd = padded.svd(true, false);
    let u = svd.u.expect("requested U");
    let smax = svd.singular_values.max();
    let mut null_cols: Vec<usize> = (0..p)
        .filter(|&i| svd.singular_values[i] <= RANK_RTOL * smax)
        .collect();
    // the padding contributes exactly p − n zero singular values at full rank
    if null_cols.len() > p - n {
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
        null_cols = order[..p - n].to_vec();
    }
    u.select_columns(&null_cols)
}

/// Builds a [`GroupedDesign`], verifying rank(X) = min(n, p).
pub fn build_design(x: DMatrix<f64>, partition: GroupPartition, alpha: f64) -> Result<GroupedDesign> {
    let (n, p) = x.shape();
    if n == 0 || p == 0 {
        return Err(Error::InvalidInput("design matrix must be non-empty".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("design matrix"));
    }
    if partition.p() != p {
        return Err(Error::DimensionMismatch(format!(
            "partition covers {} coordinates but X has {p} columns",
            partition.p()
        )));
    }
    if !(alpha >= 1.0 && alpha.is_finite()) {
        return Err(Error::Unsupported(format!("block norm index must lie in [1, inf), got {alpha}")));
    }

    let svd = x.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V");
    let sv = svd.singular_values;
    let smax = sv.max();
    let rank = sv.iter().filter(|&&s| s > RANK_RTOL * smax).count();
    let required = n.min(p);
    if rank < required {
        return Err(Error::RankDeficient { rank, required });
    }

    let nf = n as f64;
    let psi = x.transpose() * &x / nf;
    // √n (Xᵀ)⁺ = √n U Σ⁻¹ Vᵀ
    let mut u_scaled = u.clone();
    for (mut col, &s) in u_scaled.column_iter_mut().zip(sv.iter()) {
        col *= nf.sqrt() / s;
    }
    let b = &u_scaled * &v_t;
    let lipschitz = smax * smax / nf;
    let w_diag = partition.weight_diagonal();

    Ok(GroupedDesign {
        x,
        partition,
        alpha,
        psi,
        b,
        w_diag,
        lipschitz,
        singular_values: sv,
        v_thin: v_t.transpose(),
        q: OnceLock::new(),
        psi_pinv: OnceLock::new(),
    })
}
