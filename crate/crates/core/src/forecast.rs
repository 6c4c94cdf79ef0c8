//! Posterior-predictive forecasts of the ordinal levels and the two
//! evaluation metrics (within-one probability, RMSE).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::covariate::{simulate_covariates_forward, FourierFit, VarStore};
use crate::dist::std_normal;
use crate::error::{invalid, Error, Result};
use crate::model::{dot, Cutoffs, SitePanel, SiteParams};
use crate::stage1::run_parallel;
use crate::store::DrawStore;

/// Where future covariates come from.
#[derive(Debug, Clone, Copy)]
pub enum CovariateSource<'a> {
    /// Simulated from the VAR posterior, paired with the ordinal draws by
    /// index.
    Var {
        store: &'a VarStore,
        fits: &'a [FourierFit],
        /// Detrended covariate vector at the last training week, per site.
        last_detrended: &'a [Vec<f64>],
        /// Number of training weeks.
        t_end: usize,
    },
    /// Known future covariates, `[site][horizon][covariate]`.
    Known(&'a [Vec<Vec<f64>>]),
}

/// Forecast draws laid out `[draw][site][horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastDraws {
    pub horizon: usize,
    pub n_sites: usize,
    pub n_draws: usize,
    pub n_cov: usize,
    pub z: Vec<f64>,
    pub y: Vec<u8>,
    /// Covariates used, `[draw][site][horizon][covariate]`.
    pub x: Vec<f64>,
}

impl ForecastDraws {
    fn index(&self, draw: usize, site: usize, h: usize) -> usize {
        (draw * self.n_sites + site) * self.horizon + h
    }

    /// Latent value of `draw` at `site` and 0-based step `h`.
    pub fn z_at(&self, draw: usize, site: usize, h: usize) -> f64 {
        self.z[self.index(draw, site, h)]
    }

    pub fn y_at(&self, draw: usize, site: usize, h: usize) -> u8 {
        self.y[self.index(draw, site, h)]
    }

    pub fn x_at(&self, draw: usize, site: usize, h: usize) -> &[f64] {
        let k = self.index(draw, site, h) * self.n_cov;
        &self.x[k..k + self.n_cov]
    }

    /// Ordinal draws at one site and step.
    pub fn levels(&self, site: usize, h: usize) -> Vec<u8> {
        (0..self.n_draws).map(|m| self.y_at(m, site, h)).collect()
    }

    /// Posterior-mean covariate forecast `[site][horizon][covariate]`.
    pub fn mean_covariates(&self) -> Vec<Vec<Vec<f64>>> {
        let mut out = vec![vec![vec![0.0; self.n_cov]; self.horizon]; self.n_sites];
        for m in 0..self.n_draws {
            for (i, site) in out.iter_mut().enumerate() {
                for (h, row) in site.iter_mut().enumerate() {
                    for (acc, v) in row.iter_mut().zip(self.x_at(m, i, h)) {
                        *acc += v / self.n_draws as f64;
                    }
                }
            }
        }
        out
    }
}

/// Propagate the latent AR(1) process from `z_last` given future covariate
/// rows (intercept included) and the current covariate row.
pub fn simulate_latent_path<R: Rng + ?Sized>(
    params: &SiteParams,
    z_last: f64,
    x_last: &[f64],
    x_future: &[Vec<f64>],
    rng: &mut R,
) -> Vec<f64> {
    let rho = params.rho();
    let sd = params.sigma2.sqrt();
    let mut prev_mean = dot(x_last, &params.beta);
    let mut prev_z = z_last;
    x_future
        .iter()
        .map(|x| {
            let mean = dot(x, &params.beta);
            let z = mean + rho * (prev_z - prev_mean) + sd * std_normal(rng);
            prev_mean = mean;
            prev_z = z;
            z
        })
        .collect()
}

fn draw_rng(seed: u64, draw: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(draw as u64 + 1);
    rng
}

/// Simulate `horizon` steps ahead for every posterior draw and site. Each
/// draw has its own RNG stream, so results do not depend on `workers`.
pub fn forecast_drought(
    store: &DrawStore,
    panels: &[SitePanel],
    covariates: CovariateSource<'_>,
    horizon: usize,
    seed: u64,
    workers: usize,
) -> Result<ForecastDraws> {
    if horizon == 0 {
        return Err(invalid("forecast horizon must be at least 1"));
    }
    let n_sites = store.n_sites();
    let n_draws = store.n_draws();
    if n_draws == 0 {
        return Err(invalid("forecast needs at least one posterior draw"));
    }
    if panels.len() != n_sites {
        return Err(Error::DimensionMismatch(format!("{} panels for {n_sites} stored sites", panels.len())));
    }
    let n_cov = panels[0].n_coef() - 1;
    match covariates {
        CovariateSource::Var { store: var, fits, last_detrended, .. } => {
            if var.n_draws() != n_draws {
                return Err(Error::DimensionMismatch(format!(
                    "{n_draws} ordinal draws but {} covariate draws",
                    var.n_draws()
                )));
            }
            if var.sites.len() != n_sites || fits.len() != n_sites || last_detrended.len() != n_sites {
                return Err(Error::DimensionMismatch("covariate model does not cover every site".into()));
            }
        }
        CovariateSource::Known(x) => {
            if x.len() != n_sites || x.iter().any(|s| s.len() < horizon || s.iter().any(|r| r.len() != n_cov)) {
                return Err(Error::DimensionMismatch("known covariates do not cover the horizon".into()));
            }
        }
    }

    let per_draw = run_parallel(n_draws, workers, |m| -> Result<(Vec<f64>, Vec<f64>)> {
        let mut rng = draw_rng(seed, m);
        let mut z = Vec::with_capacity(n_sites * horizon);
        let mut x = Vec::with_capacity(n_sites * horizon * n_cov);
        for i in 0..n_sites {
            let future: Vec<Vec<f64>> = match covariates {
                CovariateSource::Var { store: var, fits, last_detrended, t_end } => simulate_covariates_forward(
                    &last_detrended[i],
                    &var.sites[i].draws[m],
                    &fits[i],
                    t_end,
                    horizon,
                    &mut rng,
                )?,
                CovariateSource::Known(known) => known[i][..horizon].to_vec(),
            };
            let with_intercept: Vec<Vec<f64>> = future
                .iter()
                .map(|r| std::iter::once(1.0).chain(r.iter().copied()).collect())
                .collect();
            let params = &store.sites[i].draws[m];
            let panel = &panels[i];
            let t_last = panel.t_len() - 1;
            let path = simulate_latent_path(params, params.z[t_last], panel.x_row(t_last), &with_intercept, &mut rng);
            z.extend(path);
            x.extend(future.into_iter().flatten());
        }
        Ok((z, x))
    })?;

    let cutoffs: Vec<Cutoffs> = panels.iter().map(|p| p.cutoffs()).collect();
    let mut out = ForecastDraws {
        horizon,
        n_sites,
        n_draws,
        n_cov,
        z: Vec::with_capacity(n_draws * n_sites * horizon),
        y: Vec::with_capacity(n_draws * n_sites * horizon),
        x: Vec::with_capacity(n_draws * n_sites * horizon * n_cov),
    };
    for r in per_draw {
        let (z, x) = r?;
        for (k, &v) in z.iter().enumerate() {
            out.y.push(cutoffs[k / horizon].ordinal_from_latent(v));
        }
        out.z.extend(z);
        out.x.extend(x);
    }
    Ok(out)
}

/// Within-one probabilities per site and step, plus their spatial mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WithinOne {
    /// `[site][horizon]`
    pub per_site: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
}

/// Fraction of draws whose level is within one of the observed holdout
/// level (`holdout[site][horizon]`).
pub fn within_one_probability(draws: &ForecastDraws, holdout: &[Vec<u8>]) -> Result<WithinOne> {
    if holdout.len() != draws.n_sites || holdout.iter().any(|h| h.len() != draws.horizon) {
        return Err(Error::DimensionMismatch(format!(
            "holdout must be {} sites by {} steps",
            draws.n_sites, draws.horizon
        )));
    }
    let per_site: Vec<Vec<f64>> = (0..draws.n_sites)
        .map(|i| {
            (0..draws.horizon)
                .map(|h| {
                    let truth = holdout[i][h] as i32;
                    let hits = (0..draws.n_draws)
                        .filter(|&m| (draws.y_at(m, i, h) as i32 - truth).abs() <= 1)
                        .count();
                    hits as f64 / draws.n_draws as f64
                })
                .collect()
        })
        .collect();
    let mean = (0..draws.horizon)
        .map(|h| per_site.iter().map(|s| s[h]).sum::<f64>() / draws.n_sites as f64)
        .collect();
    Ok(WithinOne { per_site, mean })
}

/// Root mean squared error over sites, per step. Both inputs are
/// `[site][horizon]`.
pub fn rmse(forecast: &[Vec<f64>], holdout: &[Vec<f64>]) -> Result<Vec<f64>> {
    if forecast.is_empty() || forecast.len() != holdout.len() {
        return Err(Error::DimensionMismatch("forecast and holdout site counts differ".into()));
    }
    let horizon = forecast[0].len();
    if forecast.iter().chain(holdout).any(|r| r.len() != horizon) {
        return Err(Error::DimensionMismatch("forecast and holdout horizons differ".into()));
    }
    Ok((0..horizon)
        .map(|h| {
            let sse: f64 = forecast.iter().zip(holdout).map(|(f, o)| (f[h] - o[h]).powi(2)).sum();
            (sse / forecast.len() as f64).sqrt()
        })
        .collect())
}

/// Lower median of a set of ordinal levels.
pub fn median_level(levels: &[u8]) -> Result<u8> {
    if levels.is_empty() {
        return Err(invalid("median of an empty draw set"));
    }
    let mut counts = [0usize; 256];
    for &l in levels {
        counts[l as usize] += 1;
    }
    let target = (levels.len() + 1) / 2;
    let mut seen = 0;
    for (level, &c) in counts.iter().enumerate() {
        seen += c;
        if seen >= target {
            return Ok(level as u8);
        }
    }
    unreachable!()
}

/// Posterior predictive median level at one site and 0-based step.
pub fn posterior_median_level(draws: &ForecastDraws, site: usize, h: usize) -> Result<u8> {
    if site >= draws.n_sites || h >= draws.horizon {
        return Err(invalid(format!("no forecast at site index {site}, step {h}")));
    }
    median_level(&draws.levels(site, h))
}
