//! Scalar densities and the samplers shared by every Gibbs update.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Exp1, Gamma, StandardNormal};
use statrs::function::erf::{erfc, erfc_inv};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Past this many standard deviations into a tail the inverse-CDF path loses
/// all precision and a rejection sampler takes over.
const DEEP_TAIL: f64 = 37.0;

pub fn normal_log_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + var.ln()) - d * d / (2.0 * var)
}

/// Log density of the standard logistic distribution.
pub fn logistic_log_pdf(x: f64) -> f64 {
    let a = x.abs();
    -a - 2.0 * (-a).exp().ln_1p()
}

/// Inverse gamma log density, shape-scale form `x^-(shape+1) exp(-scale/x)`.
pub fn inverse_gamma_log_pdf(x: f64, shape: f64, scale: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * scale.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x
}

pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile. Accurate in the lower tail down to the smallest
/// normal `f64`.
pub fn std_normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

/// Draw from `N(mean, sd^2)` truncated to `[lower, upper]`; either bound may be
/// infinite.
///
/// Inverse CDF on whichever side of the mode keeps both tail probabilities
/// small (reflecting the interval if needed), so the quantile is evaluated
/// from a complementary probability rather than from `1 - p`.
pub fn truncated_normal<R: Rng + ?Sized>(
    rng: &mut R,
    mean: f64,
    sd: f64,
    lower: f64,
    upper: f64,
) -> f64 {
    debug_assert!(lower < upper, "empty truncation interval");
    debug_assert!(sd > 0.0);
    let a = (lower - mean) / sd;
    let b = (upper - mean) / sd;
    // Work on the side where |bounds| sit in the lower tail.
    let (lo, hi, flip) = if a > 0.0 { (-b, -a, true) } else { (a, b, false) };
    let x = std_truncated_lower_side(rng, lo, hi);
    let x = if flip { -x } else { x };
    (mean + sd * x).clamp(lower, upper)
}

// Standard normal truncated to [lo, hi] with lo <= 0.
fn std_truncated_lower_side<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi < -DEEP_TAIL {
        // Mirror into the right tail: sample y in [-hi, -lo], return -y.
        return -tail_rejection(rng, -hi, -lo);
    }
    let p_lo = std_normal_cdf(lo);
    let p_hi = std_normal_cdf(hi);
    let width = p_hi - p_lo;
    if width <= 0.0 || !width.is_finite() {
        // Interval narrower than f64 resolution of the CDF.
        return if lo.is_finite() { 0.5 * (lo + hi) } else { hi };
    }
    let u: f64 = rng.random();
    let x = std_normal_quantile(p_lo + u * width);
    x.clamp(lo, hi)
}

// Standard normal truncated to [lo, hi], lo > 0 and far in the tail.
// Exponential proposal (Robert 1995) or uniform proposal for narrow windows.
fn tail_rejection<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    let lambda = 0.5 * (lo + (lo * lo + 4.0).sqrt());
    if hi - lo < 1.0 / lambda {
        loop {
            let x = lo + rng.random::<f64>() * (hi - lo);
            let u: f64 = rng.random();
            if u.ln() <= -0.5 * (x * x - lo * lo) {
                return x;
            }
        }
    }
    loop {
        let e: f64 = Exp1.sample(rng);
        let x = lo + e / lambda;
        if x > hi {
            continue;
        }
        let u: f64 = rng.random();
        let d = x - lambda;
        if u.ln() <= -0.5 * d * d {
            return x;
        }
    }
}

/// Draw from the inverse gamma distribution with the given shape and scale.
pub fn inverse_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, scale: f64) -> f64 {
    let g: f64 = Gamma::new(shape, 1.0)
        .expect("positive inverse-gamma shape")
        .sample(rng);
    scale / g
}

pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Lower Cholesky factor, or an error naming what failed.
pub fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.clone()
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
}

/// Draw from `N(Q^-1 b, Q^-1)` given the precision `Q` and linear term `b`.
pub fn gaussian_from_precision<R: Rng + ?Sized>(
    rng: &mut R,
    precision: &DMatrix<f64>,
    linear: &DVector<f64>,
) -> Result<DVector<f64>> {
    let chol = precision
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("posterior precision".into()))?;
    let mean = chol.solve(linear);
    let eps = DVector::from_fn(linear.len(), |_, _| std_normal(rng));
    // L^T x = eps gives x ~ N(0, Q^-1)
    let dev = chol
        .l()
        .transpose()
        .solve_upper_triangular(&eps)
        .expect("triangular factor is nonsingular");
    Ok(mean + dev)
}

/// Draw from the inverse Wishart with `df` degrees of freedom and scale `psi`,
/// whose mean is `psi / (df - J - 1)`.
pub fn inverse_wishart<R: Rng + ?Sized>(
    rng: &mut R,
    df: f64,
    psi: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let dim = psi.nrows();
    if df <= dim as f64 - 1.0 {
        return Err(Error::InvalidArgument(format!(
            "inverse Wishart needs df > {}, got {df}",
            dim - 1
        )));
    }
    // W ~ Wishart(df, psi^-1) by Bartlett; Sigma = W^-1.
    let psi_inv = psi
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("inverse Wishart scale".into()))?
        .inverse();
    let l = cholesky(&psi_inv, "inverse Wishart scale inverse")?;
    let mut a = DMatrix::<f64>::zeros(dim, dim);
    for i in 0..dim {
        let chi: f64 = ChiSquared::new(df - i as f64)
            .expect("positive chi-square df")
            .sample(rng);
        a[(i, i)] = chi.sqrt();
        for j in 0..i {
            a[(i, j)] = std_normal(rng);
        }
    }
    let la = &l * a;
    let w = &la * la.transpose();
    let sigma = w
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("Wishart draw".into()))?
        .inverse();
    Ok(symmetrize(sigma))
}

pub fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

pub fn logit(rho: f64) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "logit needs a value in (0, 1), got {rho}"
        )));
    }
    Ok((rho / (1.0 - rho)).ln())
}

pub fn inverse_logit(gamma: f64) -> f64 {
    if gamma >= 0.0 {
        1.0 / (1.0 + (-gamma).exp())
    } else {
        let e = gamma.exp();
        e / (1.0 + e)
    }
}
