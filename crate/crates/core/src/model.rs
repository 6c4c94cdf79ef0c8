//! Domain types and densities of the ordinal spatio-temporal model.
//!
//! The latent series of a site follows
//! `Z_1 = x_1'b + e_1`, `Z_t = x_t'b + rho (Z_{t-1} - x_{t-1}'b) + e_t`,
//! `e_t ~ N(0, sigma2)`, and the observed level is the index of the cutoff
//! interval containing `Z_t`.

use serde::{Deserialize, Serialize};

use crate::dist::{inverse_gamma_log_pdf, inverse_logit, logistic_log_pdf, normal_log_pdf};
use crate::error::{invalid, Result};

/// Fixed cutoffs `(-inf, 0, 1, ..., J-1, +inf)` giving `J + 1` ordinal levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cutoffs {
    j: usize,
}

impl Cutoffs {
    pub fn new(j: usize) -> Result<Self> {
        if j == 0 || j > 254 {
            return Err(invalid(format!("number of finite cutoffs must be in 1..=254, got {j}")));
        }
        Ok(Cutoffs { j })
    }

    /// Number of finite cutpoints `J`.
    pub fn j(&self) -> usize {
        self.j
    }

    pub fn n_levels(&self) -> usize {
        self.j + 1
    }

    /// `alpha_k` for `k = 0..=J+1`.
    pub fn alpha(&self, k: usize) -> f64 {
        if k == 0 {
            f64::NEG_INFINITY
        } else if k > self.j {
            f64::INFINITY
        } else {
            (k - 1) as f64
        }
    }

    /// Level `y` with `alpha_y < z <= alpha_{y+1}`.
    pub fn ordinal_from_latent(&self, z: f64) -> u8 {
        (0..self.j).filter(|&c| (c as f64) < z).count() as u8
    }

    /// Latent interval `(alpha_y, alpha_{y+1}]` of a level.
    pub fn latent_bounds(&self, y: u8) -> Result<(f64, f64)> {
        let y = y as usize;
        if y > self.j {
            return Err(invalid(format!("level {y} outside 0..={}", self.j)));
        }
        Ok((self.alpha(y), self.alpha(y + 1)))
    }

    /// Deterministic start inside the interval of `y`.
    pub fn interior_point(&self, y: u8) -> f64 {
        let (lo, hi) = self.latent_bounds(y).expect("validated level");
        match (lo.is_finite(), hi.is_finite()) {
            (true, true) => 0.5 * (lo + hi),
            (false, true) => hi - 0.5,
            (true, false) => lo + 0.5,
            (false, false) => 0.0,
        }
    }
}

/// Observed series of one site. Covariate rows are stored row-major and
/// include the leading intercept column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SitePanel {
    y: Vec<u8>,
    x: Vec<f64>,
    n_coef: usize,
    cutoffs: Cutoffs,
}

impl SitePanel {
    /// `covariates[t]` holds the `P` covariates at time `t`, without the
    /// intercept.
    pub fn new(y: Vec<u8>, covariates: &[Vec<f64>], cutoffs: Cutoffs) -> Result<Self> {
        if y.is_empty() {
            return Err(invalid("panel needs at least one time point"));
        }
        if covariates.len() != y.len() {
            return Err(invalid(format!(
                "panel has {} levels but {} covariate rows",
                y.len(),
                covariates.len()
            )));
        }
        let p = covariates[0].len();
        let mut x = Vec::with_capacity(y.len() * (p + 1));
        for (t, row) in covariates.iter().enumerate() {
            if row.len() != p {
                return Err(invalid(format!("covariate row {t} has {} entries, expected {p}", row.len())));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("non-finite covariate at time {t}")));
            }
            x.push(1.0);
            x.extend_from_slice(row);
        }
        if let Some(&bad) = y.iter().find(|&&v| v as usize > cutoffs.j()) {
            return Err(invalid(format!("level {bad} outside 0..={}", cutoffs.j())));
        }
        Ok(SitePanel { y, x, n_coef: p + 1, cutoffs })
    }

    pub fn t_len(&self) -> usize {
        self.y.len()
    }

    /// `P + 1`, the number of regression coefficients.
    pub fn n_coef(&self) -> usize {
        self.n_coef
    }

    pub fn y(&self) -> &[u8] {
        &self.y
    }

    pub fn cutoffs(&self) -> Cutoffs {
        self.cutoffs
    }

    /// Covariate row at time `t`, intercept first.
    pub fn x_row(&self, t: usize) -> &[f64] {
        &self.x[t * self.n_coef..(t + 1) * self.n_coef]
    }

    /// Linear predictor `x_t'beta` for every `t`.
    pub fn linear_predictor(&self, beta: &[f64]) -> Vec<f64> {
        (0..self.t_len()).map(|t| dot(self.x_row(t), beta)).collect()
    }

    pub fn bounds(&self, t: usize) -> (f64, f64) {
        self.cutoffs.latent_bounds(self.y[t]).expect("validated level")
    }

    /// True when every `z_t` lies in the interval of `y_t`.
    pub fn latent_consistent(&self, z: &[f64]) -> bool {
        z.len() == self.t_len()
            && z.iter()
                .zip(&self.y)
                .all(|(&zt, &yt)| self.cutoffs.ordinal_from_latent(zt) == yt)
    }
}

/// Site parameters `(beta, gamma = logit(rho), sigma2)` with the latent series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteParams {
    pub beta: Vec<f64>,
    pub gamma: f64,
    pub sigma2: f64,
    pub z: Vec<f64>,
}

impl SiteParams {
    pub fn rho(&self) -> f64 {
        inverse_logit(self.gamma)
    }

    /// Starting point: `beta = 0`, `rho = 0.5`, `sigma2 = 1`, latent values
    /// at the interval midpoints.
    pub fn initial(panel: &SitePanel) -> Self {
        let cut = panel.cutoffs();
        SiteParams {
            beta: vec![0.0; panel.n_coef()],
            gamma: 0.0,
            sigma2: 1.0,
            z: panel.y().iter().map(|&y| cut.interior_point(y)).collect(),
        }
    }

    /// Checks the type invariants against a panel.
    pub fn validate(&self, panel: &SitePanel) -> Result<()> {
        if self.beta.len() != panel.n_coef() {
            return Err(invalid("beta length does not match the panel"));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) || !self.gamma.is_finite() {
            return Err(invalid("sigma2 must be positive and gamma finite"));
        }
        if !panel.latent_consistent(&self.z) {
            return Err(invalid("latent series inconsistent with observed levels"));
        }
        Ok(())
    }
}

/// ICAR variances of the full model: one for the `gamma` field and one per
/// regression coefficient field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub sigma2_gamma: f64,
    pub sigma2_beta: Vec<f64>,
}

impl HyperParams {
    pub fn constant(n_coef: usize, value: f64) -> Self {
        HyperParams {
            sigma2_gamma: value,
            sigma2_beta: vec![value; n_coef],
        }
    }
}

/// Independence prior of stage one: `beta_p ~ N(0, xi_p^2)`, standard
/// logistic `gamma`, and `sigma2 ~ IG(shape, scale)`. The same inverse gamma
/// is the `sigma2` prior of the full model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Prior {
    pub xi: Vec<f64>,
    pub ig_shape: f64,
    pub ig_scale: f64,
}

impl Stage1Prior {
    pub fn new(n_coef: usize) -> Self {
        Stage1Prior {
            xi: vec![3.0; n_coef],
            ig_shape: 0.5,
            ig_scale: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.xi.iter().any(|&x| !(x > 0.0)) || !(self.ig_shape > 0.0) || !(self.ig_scale > 0.0) {
            return Err(invalid("stage-one prior scales must be positive"));
        }
        Ok(())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Innovations `e_1 = d_1`, `e_t = d_t - rho d_{t-1}` with `d_t = z_t - x_t'beta`.
pub fn innovations(z: &[f64], beta: &[f64], rho: f64, panel: &SitePanel) -> Vec<f64> {
    let mut out = Vec::with_capacity(z.len());
    let mut prev = 0.0;
    for (t, &zt) in z.iter().enumerate() {
        let d = zt - dot(panel.x_row(t), beta);
        out.push(if t == 0 { d } else { d - rho * prev });
        prev = d;
    }
    out
}

/// Log density of the latent series under the AR(1) process model.
pub fn ar1_log_density(z: &[f64], beta: &[f64], gamma: f64, sigma2: f64, panel: &SitePanel) -> f64 {
    debug_assert_eq!(z.len(), panel.t_len());
    let rho = inverse_logit(gamma);
    let ss: f64 = innovations(z, beta, rho, panel).iter().map(|e| e * e).sum();
    let n = z.len() as f64;
    -0.5 * n * (2.0 * std::f64::consts::PI * sigma2).ln() - ss / (2.0 * sigma2)
}

/// `log f(Y | Z)`: zero when the latent series reproduces the levels.
pub fn ordinal_log_likelihood(z: &[f64], panel: &SitePanel) -> f64 {
    if panel.latent_consistent(z) {
        0.0
    } else {
        f64::NEG_INFINITY
    }
}

/// Stage-one log prior over the coefficients and `gamma` only; the `sigma2`
/// prior is shared with the full model.
pub fn stage1_log_prior_beta_gamma(beta: &[f64], gamma: f64, prior: &Stage1Prior) -> f64 {
    let b: f64 = beta
        .iter()
        .zip(&prior.xi)
        .map(|(&b, &xi)| normal_log_pdf(b, 0.0, xi * xi))
        .sum();
    b + logistic_log_pdf(gamma)
}

/// Full stage-one log prior of a site.
pub fn stage1_log_prior(params: &SiteParams, prior: &Stage1Prior) -> f64 {
    stage1_log_prior_beta_gamma(&params.beta, params.gamma, prior)
        + inverse_gamma_log_pdf(params.sigma2, prior.ig_shape, prior.ig_scale)
}
