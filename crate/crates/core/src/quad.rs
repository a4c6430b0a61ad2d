//! Adaptive Gauss–Kronrod quadrature in one dimension and nested iterated
//! integrals over regions whose bounds depend on the outer coordinates.
//!
//! Finite intervals go through the smoothing substitution x = a + (b−a)u²(3−2u),
//! which removes inverse-square-root endpoint singularities. A semi-infinite
//! range is first mapped to [0, 1) with x = a + t/(1−t).

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self { abs_tol: 1e-10, rel_tol: 1e-10, max_intervals: 2000 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
    pub converged: bool,
}

type Integrand<'a> = dyn FnMut(f64) -> Result<f64> + 'a;

fn gk15(f: &mut Integrand<'_>, a: f64, b: f64) -> Result<(f64, f64)> {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c)?;
    let mut resk = fc * WGK[7];
    let mut resg = fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let pair = f(c - x)? + f(c + x)?;
        resk += WGK[j] * pair;
        if j % 2 == 1 {
            resg += WG[j / 2] * pair;
        }
    }
    Ok((resk * h, ((resk - resg) * h).abs()))
}

/// Globally adaptive GK15 on a finite interval, no substitution.
fn adaptive(f: &mut Integrand<'_>, a: f64, b: f64, opts: &QuadOptions) -> Result<QuadResult> {
    let mut intervals: Vec<(f64, f64, f64, f64)> = Vec::new();
    let (v, e) = gk15(f, a, b)?;
    intervals.push((a, b, v, e));
    let mut evaluations = 15;
    loop {
        let total: f64 = intervals.iter().map(|iv| iv.2).sum();
        let err: f64 = intervals.iter().map(|iv| iv.3).sum();
        if !total.is_finite() {
            return Err(Error::NonFinite("quadrature integrand"));
        }
        if err <= opts.abs_tol.max(opts.rel_tol * total.abs()) {
            return Ok(QuadResult { value: total, error: err, evaluations, converged: true });
        }
        if intervals.len() >= opts.max_intervals {
            return Ok(QuadResult { value: total, error: err, evaluations, converged: false });
        }
        let worst = intervals
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .map(|(i, _)| i)
            .unwrap();
        let (lo, hi, _, _) = intervals.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        if !(mid > lo && mid < hi) {
            // cannot split further in floating point
            let total: f64 = intervals.iter().map(|iv| iv.2).sum();
            return Ok(QuadResult { value: total, error: err, evaluations, converged: false });
        }
        let (v1, e1) = gk15(f, lo, mid)?;
        let (v2, e2) = gk15(f, mid, hi)?;
        evaluations += 30;
        intervals.push((lo, mid, v1, e1));
        intervals.push((mid, hi, v2, e2));
    }
}

/// ∫_a^b f(x) dx. `b` may be +∞ and `a` may be −∞ (not both).
pub fn integrate(f: &mut Integrand<'_>, a: f64, b: f64, opts: &QuadOptions) -> Result<QuadResult> {
    if a.is_nan() || b.is_nan() {
        return Err(Error::InvalidInput("NaN integration bound".into()));
    }
    if !(b > a) {
        return Ok(QuadResult { value: 0.0, error: 0.0, evaluations: 0, converged: true });
    }
    if a.is_infinite() && b.is_infinite() {
        let left = integrate(f, a, 0.0, opts)?;
        let right = integrate(f, 0.0, b, opts)?;
        return Ok(QuadResult {
            value: left.value + right.value,
            error: left.error + right.error,
            evaluations: left.evaluations + right.evaluations,
            converged: left.converged && right.converged,
        });
    }
    // u ∈ (0,1) ↦ t = u²(3−2u) ∈ (0,1), dt = 6u(1−u)du
    let smooth = |u: f64| (u * u * (3.0 - 2.0 * u), 6.0 * u * (1.0 - u));
    let mut g: Box<Integrand<'_>> = if b.is_infinite() {
        Box::new(move |u: f64| {
            let (t, dt) = smooth(u);
            let s = 1.0 - t;
            f(a + t / s).map(|v| v * dt / (s * s))
        })
    } else if a.is_infinite() {
        Box::new(move |u: f64| {
            let (t, dt) = smooth(u);
            let s = 1.0 - t;
            f(b - t / s).map(|v| v * dt / (s * s))
        })
    } else {
        let len = b - a;
        Box::new(move |u: f64| {
            let (t, dt) = smooth(u);
            f(a + len * t).map(|v| v * dt * len)
        })
    };
    let out = adaptive(&mut *g, 0.0, 1.0, opts)?;
    if !out.converged {
        log::warn!(
            "quadrature reached {} intervals with error estimate {:.3e}",
            opts.max_intervals,
            out.error
        );
    }
    Ok(out)
}

/// Bound of one coordinate given the values of the preceding coordinates.
pub type Bound<'a> = Box<dyn Fn(&[f64]) -> (f64, f64) + Send + Sync + 'a>;

/// Iterated integral ∫ dx₀ ∫ dx₁ … f(x₀, x₁, …) over nested bounds.
///
/// Inner integrals run at a tenth of the outer tolerances.
pub fn integrate_nested(
    bounds: &[Bound<'_>],
    f: &mut dyn FnMut(&[f64]) -> Result<f64>,
    opts: &QuadOptions,
) -> Result<QuadResult> {
    let mut prefix = Vec::with_capacity(bounds.len());
    let mut converged = true;
    let mut evals = 0usize;
    let value = nested_level(0, &mut prefix, bounds, f, opts, &mut converged, &mut evals)?;
    Ok(QuadResult { value, error: f64::NAN, evaluations: evals, converged })
}

fn nested_level(
    level: usize,
    prefix: &mut Vec<f64>,
    bounds: &[Bound<'_>],
    f: &mut dyn FnMut(&[f64]) -> Result<f64>,
    opts: &QuadOptions,
    converged: &mut bool,
    evals: &mut usize,
) -> Result<f64> {
    if level == bounds.len() {
        *evals += 1;
        return f(prefix);
    }
    let (lo, hi) = bounds[level](prefix);
    if !(hi > lo) {
        return Ok(0.0);
    }
    let inner = QuadOptions {
        abs_tol: opts.abs_tol * 0.1,
        rel_tol: opts.rel_tol * 0.1,
        max_intervals: opts.max_intervals,
    };
    let mut g = |x: f64| -> Result<f64> {
        prefix.push(x);
        let v = nested_level(level + 1, prefix, bounds, f, &inner, converged, evals);
        prefix.pop();
        v
    };
    let out = integrate(&mut g, lo, hi, opts)?;
    *converged &= out.converged;
    Ok(out.value)
}
