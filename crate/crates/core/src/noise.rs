//! Noise models: the law of ε, which fixes the density g_n of ε/√n used by
//! the sampling density and the importance weights.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, RngCore};
use rand_distr::{StandardNormal, StudentT};

use crate::error::{Error, Result};

/// A user-supplied law for ε.
pub trait NoiseDensity: Send + Sync + fmt::Debug {
    /// log g_n(z): log density of ε/√n at z, where z has length n.
    fn log_density(&self, z: &[f64]) -> f64;
    /// One draw of ε ∈ ℝⁿ.
    fn sample(&self, n: usize, rng: &mut dyn RngCore) -> DVector<f64>;
}

#[derive(Clone, Debug)]
pub enum NoiseModel {
    /// ε ∼ N(0, σ²Iₙ).
    Gaussian { sigma2: f64 },
    Custom(Arc<dyn NoiseDensity>),
}

impl NoiseModel {
    pub fn gaussian(sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::InvalidInput(format!("sigma2 must be positive, got {sigma2}")));
        }
        Ok(Self::Gaussian { sigma2 })
    }

    pub fn custom(density: impl NoiseDensity + 'static) -> Self {
        Self::Custom(Arc::new(density))
    }

    pub fn sigma2(&self) -> Option<f64> {
        match self {
            Self::Gaussian { sigma2 } => Some(*sigma2),
            Self::Custom(_) => None,
        }
    }

    /// log g_n(z).
    pub fn log_density(&self, z: &[f64]) -> f64 {
        match self {
            Self::Gaussian { sigma2 } => log_phi(z, *sigma2 / z.len() as f64),
            Self::Custom(d) => d.log_density(z),
        }
    }

    pub fn sample(&self, n: usize, rng: &mut dyn RngCore) -> DVector<f64> {
        match self {
            Self::Gaussian { sigma2 } => {
                let sd = sigma2.sqrt();
                DVector::from_fn(n, |_, _| sd * rng.sample::<f64, _>(StandardNormal))
            }
            Self::Custom(d) => d.sample(n, rng),
        }
    }

    /// log density of Xᵀε/n at h, for the p < n case. Only the Gaussian law
    /// has a closed form: N(0, σ²Ψ/n).
    pub fn log_density_low_dim(&self, h: &[f64], psi_chol: &Cholesky<f64, nalgebra::Dyn>, n: usize) -> Result<f64> {
        match self {
            Self::Gaussian { sigma2 } => {
                let p = h.len();
                let scale = sigma2 / n as f64;
                let l = psi_chol.l();
                let z = l
                    .solve_lower_triangular(&DVector::from_column_slice(h))
                    .ok_or_else(|| Error::Singularity("Cholesky factor of the Gram matrix".into()))?;
                let log_det_l: f64 = l.diagonal().iter().map(|d| d.ln()).sum();
                Ok(-0.5 * p as f64 * (2.0 * PI * scale).ln() - log_det_l - 0.5 * z.norm_squared() / scale)
            }
            Self::Custom(_) => Err(Error::Unsupported(
                "density for p < n needs the law of X'e/n, available for Gaussian noise only".into(),
            )),
        }
    }
}

/// log φ_m(z; v·I).
pub fn log_phi(z: &[f64], v: f64) -> f64 {
    let m = z.len() as f64;
    let ss: f64 = z.iter().map(|x| x * x).sum();
    -0.5 * m * (2.0 * PI * v).ln() - 0.5 * ss / v
}

/// Cholesky factor of Ψ, needed by [`NoiseModel::log_density_low_dim`].
pub fn gram_cholesky(psi: &DMatrix<f64>) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    Cholesky::new(psi.clone()).ok_or_else(|| Error::Singularity("Gram matrix is not positive definite".into()))
}

type LogPdf = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type Sampler = Arc<dyn Fn(&mut dyn RngCore) -> f64 + Send + Sync>;

/// ε with i.i.d. coordinates from a univariate law.
#[derive(Clone)]
pub struct IidNoise {
    name: String,
    log_pdf: LogPdf,
    sampler: Sampler,
}

impl fmt::Debug for IidNoise {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IidNoise").field("name", &self.name).finish()
    }
}

impl IidNoise {
    pub fn new(
        name: impl Into<String>,
        log_pdf: impl Fn(f64) -> f64 + Send + Sync + 'static,
        sampler: impl Fn(&mut dyn RngCore) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { name: name.into(), log_pdf: Arc::new(log_pdf), sampler: Arc::new(sampler) }
    }

    pub fn gaussian(sigma2: f64) -> Self {
        let sd = sigma2.sqrt();
        Self::new(
            "gaussian",
            move |x| -0.5 * (2.0 * PI * sigma2).ln() - 0.5 * x * x / sigma2,
            move |rng| sd * rng.sample::<f64, _>(StandardNormal),
        )
    }

    /// Scaled Student t with `df` degrees of freedom.
    pub fn student_t(df: f64, scale: f64) -> Result<Self> {
        if !(df > 0.0 && scale > 0.0) {
            return Err(Error::InvalidInput("t noise needs positive df and scale".into()));
        }
        let dist = StudentT::new(df).map_err(|e| Error::InvalidInput(e.to_string()))?;
        let c = statrs::function::gamma::ln_gamma(0.5 * (df + 1.0))
            - statrs::function::gamma::ln_gamma(0.5 * df)
            - 0.5 * (df * PI).ln()
            - scale.ln();
        Ok(Self::new(
            format!("student_t({df})"),
            move |x| {
                let u = x / scale;
                c - 0.5 * (df + 1.0) * (1.0 + u * u / df).ln()
            },
            move |rng| scale * rng.sample(dist),
        ))
    }
}

impl NoiseDensity for IidNoise {
    fn log_density(&self, z: &[f64]) -> f64 {
        // ε = √n z, so g_n(z) = n^{n/2} Π f(√n z_i)
        let n = z.len() as f64;
        let rn = n.sqrt();
        0.5 * n * n.ln() + z.iter().map(|&x| (self.log_pdf)(rn * x)).sum::<f64>()
    }

    fn sample(&self, n: usize, rng: &mut dyn RngCore) -> DVector<f64> {
        DVector::from_fn(n, |_, _| (self.sampler)(rng))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn iid_gaussian_matches_closed_form() {
        let g = NoiseModel::gaussian(1.7).unwrap();
        let c = NoiseModel::custom(IidNoise::gaussian(1.7));
        let z = [0.3, -0.2, 1.1, 0.05];
        assert!((g.log_density(&z) - c.log_density(&z)).abs() < 1e-12);
    }

    #[test]
    fn student_t_log_pdf_integrates_to_one() {
        let t = IidNoise::student_t(4.0, 1.3).unwrap();
        let mut f = |x: f64| Ok((t.log_pdf)(x).exp());
        let v = crate::quad::integrate(&mut f, f64::NEG_INFINITY, f64::INFINITY, &Default::default())
            .unwrap()
            .value;
        assert!((v - 1.0).abs() < 1e-8);
    }

    #[test]
    fn low_dim_density_is_normalised_in_one_dimension() {
        let psi = DMatrix::from_element(1, 1, 2.5);
        let chol = gram_cholesky(&psi).unwrap();
        let g = NoiseModel::gaussian(0.8).unwrap();
        let mut f = |x: f64| g.log_density_low_dim(&[x], &chol, 4).map(f64::exp);
        let v = crate::quad::integrate(&mut f, f64::NEG_INFINITY, f64::INFINITY, &Default::default())
            .unwrap()
            .value;
        assert!((v - 1.0).abs() < 1e-8);
    }

    #[test]
    fn gaussian_sampler_has_requested_variance() {
        let g = NoiseModel::gaussian(4.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let e = g.sample(20_000, &mut rng);
        let var = e.norm_squared() / e.len() as f64;
        assert!((var - 4.0).abs() < 0.15);
    }
}
