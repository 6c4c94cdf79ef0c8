//! Stage one: independent per-site Gibbs samplers under the independence
//! prior, run in parallel. Their retained draws form each site's reservoir.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{gaussian_from_precision, inverse_gamma, logit, truncated_normal};
use crate::error::{invalid, Error, Result};
use crate::model::{innovations, SitePanel, SiteParams, Stage1Prior};

/// Chain length, burn-in and thinning for one sampler run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 {
            return Err(invalid("thin must be positive"));
        }
        if self.iterations > 0 && self.burn_in >= self.iterations {
            return Err(invalid(format!(
                "burn-in {} must be below the iteration count {}",
                self.burn_in, self.iterations
            )));
        }
        if self.retained() < 100 {
            log::warn!(
                "chain retains only {} draws (iterations {}, burn-in {}, thin {})",
                self.retained(),
                self.iterations,
                self.burn_in,
                self.thin
            );
        }
        Ok(())
    }

    /// Whether 1-based iteration `m` is stored.
    pub fn keeps(&self, m: usize) -> bool {
        m > self.burn_in && (m - self.burn_in) % self.thin == 0
    }

    pub fn retained(&self) -> usize {
        self.iterations.saturating_sub(self.burn_in) / self.thin
    }
}

/// Stored stage-one draws of one site; the stage-two proposal pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reservoir {
    pub site_id: u32,
    pub draws: Vec<SiteParams>,
}

impl Reservoir {
    pub fn n_draws(&self) -> usize {
        self.draws.len()
    }

    pub fn t_len(&self) -> usize {
        self.draws.first().map_or(0, |d| d.z.len())
    }

    pub fn n_coef(&self) -> usize {
        self.draws.first().map_or(0, |d| d.beta.len())
    }

    pub fn validate(&self, panel: &SitePanel) -> Result<()> {
        if self.draws.is_empty() {
            return Err(Error::EmptyReservoir(self.site_id));
        }
        self.draws.iter().try_for_each(|d| d.validate(panel))
    }
}

/// Independent RNG stream of a site, derived from the master seed.
pub fn site_rng(seed: u64, site_id: u32) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ splitmix64(site_id as u64))
}

pub(crate) fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mean and variance of the untruncated normal full conditional of `z_t`
/// given the rest of the series.
pub fn z_conditional_moments(params: &SiteParams, panel: &SitePanel, mu: &[f64], t: usize) -> (f64, f64) {
    let n = panel.t_len();
    let rho = params.rho();
    let s2 = params.sigma2;
    let dev = |k: usize| params.z[k] - mu[k];
    if n == 1 {
        (mu[0], s2)
    } else if t == 0 {
        (mu[0] + rho * dev(1) / (1.0 + rho * rho), s2 / (1.0 + rho * rho))
    } else if t + 1 == n {
        (mu[t] + rho * dev(t - 1), s2)
    } else {
        let m = rho * (dev(t - 1) + dev(t + 1)) / (1.0 + rho * rho);
        (mu[t] + m, s2 / (1.0 + rho * rho))
    }
}

/// One systematic sweep over the latent series. Each `z_t` is drawn from its
/// Gaussian full conditional truncated to the interval of `y_t`.
pub fn gibbs_update_z<R: Rng + ?Sized>(params: &mut SiteParams, panel: &SitePanel, rng: &mut R) {
    let mu = panel.linear_predictor(&params.beta);
    for t in 0..panel.t_len() {
        let (lo, hi) = panel.bounds(t);
        let (mean, var) = z_conditional_moments(params, panel, &mu, t);
        params.z[t] = truncated_normal(rng, mean, var.sqrt(), lo, hi);
    }
}

/// Whitened AR(1) regression: rows `x_1` and `x_t - rho x_{t-1}` with
/// responses `z_1` and `z_t - rho z_{t-1}`. Returns `(W'W, W'r)`.
fn whitened_normal_equations(params: &SiteParams, panel: &SitePanel) -> (DMatrix<f64>, DVector<f64>) {
    let k = panel.n_coef();
    let rho = params.rho();
    let mut gram = DMatrix::<f64>::zeros(k, k);
    let mut cross = DVector::<f64>::zeros(k);
    let mut w = vec![0.0; k];
    for t in 0..panel.t_len() {
        let row = panel.x_row(t);
        let r = if t == 0 {
            w.copy_from_slice(row);
            params.z[0]
        } else {
            let prev = panel.x_row(t - 1);
            for c in 0..k {
                w[c] = row[c] - rho * prev[c];
            }
            params.z[t] - rho * params.z[t - 1]
        };
        for a in 0..k {
            cross[a] += w[a] * r;
            for b in 0..=a {
                gram[(a, b)] += w[a] * w[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            gram[(b, a)] = gram[(a, b)];
        }
    }
    (gram, cross)
}

/// Columns that are (numerically) linear combinations of earlier columns.
pub(crate) fn collinear_columns(gram: &DMatrix<f64>) -> Vec<usize> {
    let k = gram.nrows();
    let mut l = DMatrix::<f64>::zeros(k, k);
    let mut independent: Vec<usize> = Vec::new();
    let mut dependent = Vec::new();
    for j in 0..k {
        let mut d = gram[(j, j)];
        for &c in &independent {
            d -= l[(j, c)] * l[(j, c)];
        }
        if !(d > 1e-10 * gram[(j, j)].max(f64::MIN_POSITIVE)) {
            dependent.push(j);
            continue;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..k {
            let mut s = gram[(i, j)];
            for &c in &independent {
                s -= l[(i, c)] * l[(j, c)];
            }
            l[(i, j)] = s / djj;
        }
        independent.push(j);
    }
    dependent
}

/// Conjugate normal draw of `beta` under an independent normal prior with the
/// given per-coefficient means and precisions.
pub fn gibbs_update_beta_with_prior<R: Rng + ?Sized>(
    params: &mut SiteParams,
    panel: &SitePanel,
    prior_mean: &[f64],
    prior_precision: &[f64],
    rng: &mut R,
) -> Result<()> {
    let (gram, cross) = whitened_normal_equations(params, panel);
    let dependent = collinear_columns(&gram);
    if !dependent.is_empty() {
        return Err(Error::RankDeficient { columns: dependent });
    }
    let inv_s2 = 1.0 / params.sigma2;
    let mut precision = gram * inv_s2;
    let mut linear = cross * inv_s2;
    for p in 0..panel.n_coef() {
        precision[(p, p)] += prior_precision[p];
        linear[p] += prior_precision[p] * prior_mean[p];
    }
    let draw = gaussian_from_precision(rng, &precision, &linear)?;
    params.beta.copy_from_slice(draw.as_slice());
    Ok(())
}

/// Stage-one `beta` update under `N(0, xi_p^2)` priors.
pub fn gibbs_update_beta<R: Rng + ?Sized>(
    params: &mut SiteParams,
    panel: &SitePanel,
    prior: &Stage1Prior,
    rng: &mut R,
) -> Result<()> {
    let mean = vec![0.0; panel.n_coef()];
    let prec: Vec<f64> = prior.xi.iter().map(|x| 1.0 / (x * x)).collect();
    gibbs_update_beta_with_prior(params, panel, &mean, &prec, rng)
}

/// Moments `(m, v)` of the untruncated normal conditional of `rho`, or `None`
/// when the lagged residuals are all zero.
pub fn rho_conditional_moments(params: &SiteParams, panel: &SitePanel) -> Option<(f64, f64)> {
    let mu = panel.linear_predictor(&params.beta);
    let d: Vec<f64> = params.z.iter().zip(&mu).map(|(z, m)| z - m).collect();
    let mut lag_ss = 0.0;
    let mut cross = 0.0;
    for t in 1..d.len() {
        lag_ss += d[t - 1] * d[t - 1];
        cross += d[t] * d[t - 1];
    }
    if !(lag_ss > 1e-300) {
        return None;
    }
    Some((cross / lag_ss, params.sigma2 / lag_ss))
}

/// Conjugate draw of `rho` on (0, 1) under a uniform prior, stored as
/// `gamma = logit(rho)`. Returns `true` when the degenerate fallback to a
/// prior draw was taken.
pub fn gibbs_update_rho<R: Rng + ?Sized>(params: &mut SiteParams, panel: &SitePanel, rng: &mut R) -> bool {
    let (rho, fallback) = match rho_conditional_moments(params, panel) {
        Some((m, v)) => (truncated_normal(rng, m, v.sqrt(), 0.0, 1.0), false),
        None => {
            log::debug!("all lagged residuals are zero; drawing rho from its prior");
            (rng.random::<f64>(), true)
        }
    };
    let rho = rho.clamp(f64::EPSILON, 1.0 - f64::EPSILON);
    params.gamma = logit(rho).expect("rho clamped into (0, 1)");
    fallback
}

/// Shape and scale of the inverse gamma conditional of `sigma2`.
pub fn sigma2_conditional(params: &SiteParams, panel: &SitePanel, prior: &Stage1Prior) -> (f64, f64) {
    let ss: f64 = innovations(&params.z, &params.beta, params.rho(), panel)
        .iter()
        .map(|e| e * e)
        .sum();
    (
        prior.ig_shape + 0.5 * panel.t_len() as f64,
        prior.ig_scale + 0.5 * ss,
    )
}

pub fn gibbs_update_sigma2<R: Rng + ?Sized>(
    params: &mut SiteParams,
    panel: &SitePanel,
    prior: &Stage1Prior,
    rng: &mut R,
) {
    let (shape, scale) = sigma2_conditional(params, panel, prior);
    params.sigma2 = inverse_gamma(rng, shape, scale);
}

/// Run the systematic-scan Gibbs sampler (latent sweep, `beta`, `rho`,
/// `sigma2`) for one site.
pub fn run_stage1_site<R: Rng + ?Sized>(
    site_id: u32,
    panel: &SitePanel,
    prior: &Stage1Prior,
    config: &ChainConfig,
    rng: &mut R,
) -> Result<Reservoir> {
    config.validate()?;
    prior.validate()?;
    if prior.xi.len() != panel.n_coef() {
        return Err(Error::DimensionMismatch(format!(
            "prior has {} coefficient scales, panel has {} coefficients",
            prior.xi.len(),
            panel.n_coef()
        )));
    }
    let mut params = SiteParams::initial(panel);
    let mut draws = Vec::with_capacity(config.retained());
    let mut fallbacks = 0usize;
    for m in 1..=config.iterations {
        gibbs_update_z(&mut params, panel, rng);
        gibbs_update_beta(&mut params, panel, prior, rng)?;
        fallbacks += gibbs_update_rho(&mut params, panel, rng) as usize;
        gibbs_update_sigma2(&mut params, panel, prior, rng);
        if config.keeps(m) {
            draws.push(params.clone());
        }
    }
    if fallbacks > 0 {
        log::warn!("site {site_id}: rho drawn from its prior in {fallbacks} degenerate iterations");
    }
    if draws.is_empty() {
        return Err(Error::EmptyReservoir(site_id));
    }
    Ok(Reservoir { site_id, draws })
}

#[derive(Debug)]
pub struct SiteFailure {
    pub site_id: u32,
    pub error: Error,
}

/// Reservoirs of every site that completed, in site order, plus the sites
/// that failed.
#[derive(Debug)]
pub struct Stage1Outcome {
    pub reservoirs: Vec<Reservoir>,
    pub failures: Vec<SiteFailure>,
}

/// Run stage one for every site on a pool of `workers` threads. Site `i`
/// (id `i + 1`) always uses the stream `site_rng(config.seed, i + 1)`, so the
/// output does not depend on the worker count.
pub fn run_stage1_all(
    panels: &[SitePanel],
    prior: &Stage1Prior,
    config: &ChainConfig,
    workers: usize,
) -> Result<Stage1Outcome> {
    let results = run_parallel(panels.len(), workers, |i| {
        let site_id = i as u32 + 1;
        let mut rng = site_rng(config.seed, site_id);
        run_stage1_site(site_id, &panels[i], prior, config, &mut rng)
    })?;
    let mut reservoirs = Vec::with_capacity(panels.len());
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(res) => reservoirs.push(res),
            Err(error) => failures.push(SiteFailure { site_id: i as u32 + 1, error }),
        }
    }
    Ok(Stage1Outcome { reservoirs, failures })
}

/// Map `task` over `0..n` on a bounded pool, keeping index order.
pub(crate) fn run_parallel<T, F>(n: usize, workers: usize, task: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if workers == 0 {
        return Err(invalid("worker count must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| invalid(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(|| (0..n).into_par_iter().map(&task).collect()))
}
