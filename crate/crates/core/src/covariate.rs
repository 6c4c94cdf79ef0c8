//! Covariate process: per-site Fourier detrending followed by a diagonal
//! VAR(1) on the detrended series, fitted with the same two-stage scheme as
//! the ordinal model.
//!
//! `X~_1 = w_1`, `X~_t = diag(delta) X~_{t-1} + w_t`, `w_t ~ MVN(0, Sigma)`.
//! Stage one uses independent `N(0, 3^2)` priors on every `delta_j`; the full
//! model puts an ICAR prior on each `delta_j` field. `Sigma` has an inverse
//! Wishart prior with `J` degrees of freedom and identity scale in both.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{gaussian_from_precision, inverse_wishart, normal_log_pdf, std_normal};
use crate::error::{invalid, Error, Result};
use crate::lattice::LatticeGraph;
use crate::stage1::{run_parallel, site_rng, ChainConfig};
use crate::stage2::{gibbs_update_hypervariance, AcceptanceStats, Stage2Config, HYPER_PRIOR, LOW_ACCEPTANCE};

/// Annual period in weeks.
pub const FOURIER_PERIOD: f64 = 365.0 / 7.0;
pub const N_HARMONICS: usize = 5;
/// Intercept plus a sine and a cosine per harmonic.
pub const N_FOURIER: usize = 1 + 2 * N_HARMONICS;

/// Fourier regressors at (1-based) week `t`: intercept, sines, cosines.
pub fn fourier_row(t: f64) -> [f64; N_FOURIER] {
    let mut row = [0.0; N_FOURIER];
    row[0] = 1.0;
    for k in 1..=N_HARMONICS {
        let angle = 2.0 * std::f64::consts::PI * k as f64 * t / FOURIER_PERIOD;
        row[k] = angle.sin();
        row[N_HARMONICS + k] = angle.cos();
    }
    row
}

/// Least-squares seasonal fit of each covariate of one site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierFit {
    pub zeta: Vec<[f64; N_FOURIER]>,
    pub period: f64,
}

impl FourierFit {
    pub fn n_cov(&self) -> usize {
        self.zeta.len()
    }

    /// Seasonal mean of covariate `j` at 1-based week `t`; valid beyond the
    /// fitted range.
    pub fn trend(&self, j: usize, t: usize) -> f64 {
        let row = fourier_row(t as f64);
        row.iter().zip(&self.zeta[j]).map(|(a, b)| a * b).sum()
    }
}

/// Fit the seasonal mean of each column of `series` (`T` rows of `J` values,
/// week `t = 1..T`) and return it with the detrended series.
pub fn fit_fourier_detrend(series: &[Vec<f64>]) -> Result<(FourierFit, Vec<Vec<f64>>)> {
    let t_len = series.len();
    if t_len < N_FOURIER + 1 {
        return Err(Error::RankDeficient { columns: (t_len..N_FOURIER).collect() });
    }
    let n_cov = series[0].len();
    let design = DMatrix::from_fn(t_len, N_FOURIER, |t, c| fourier_row((t + 1) as f64)[c]);
    let qr = design.clone().qr();
    let r = qr.r();
    let scale = (0..N_FOURIER).map(|c| r[(c, c)].abs()).fold(0.0, f64::max);
    let weak: Vec<usize> = (0..N_FOURIER).filter(|&c| r[(c, c)].abs() <= 1e-10 * scale).collect();
    if !weak.is_empty() {
        return Err(Error::RankDeficient { columns: weak });
    }
    let q = qr.q();
    let mut zeta = Vec::with_capacity(n_cov);
    let mut detrended = vec![vec![0.0; n_cov]; t_len];
    for j in 0..n_cov {
        let y = DVector::from_fn(t_len, |t, _| series[t][j]);
        let qty = q.transpose() * &y;
        let coef = r
            .solve_upper_triangular(&qty)
            .ok_or_else(|| Error::RankDeficient { columns: vec![] })?;
        let fitted = &design * &coef;
        for t in 0..t_len {
            detrended[t][j] = y[t] - fitted[t];
        }
        let mut z = [0.0; N_FOURIER];
        z.copy_from_slice(coef.as_slice());
        zeta.push(z);
    }
    Ok((FourierFit { zeta, period: FOURIER_PERIOD }, detrended))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarSiteParams {
    pub delta: Vec<f64>,
    pub sigma: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarReservoir {
    pub site_id: u32,
    pub draws: Vec<VarSiteParams>,
}

impl VarReservoir {
    pub fn n_cov(&self) -> usize {
        self.draws.first().map_or(0, |d| d.delta.len())
    }
}

/// Stage-one prior scale of every `delta_j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarPrior {
    pub delta_sd: f64,
}

impl Default for VarPrior {
    fn default() -> Self {
        VarPrior { delta_sd: 3.0 }
    }
}

/// Innovations `r_1 = X~_1`, `r_t = X~_t - diag(delta) X~_{t-1}`.
pub fn var_residuals(detrended: &[Vec<f64>], delta: &[f64]) -> Vec<Vec<f64>> {
    detrended
        .iter()
        .enumerate()
        .map(|(t, row)| {
            if t == 0 {
                row.clone()
            } else {
                row.iter()
                    .zip(&detrended[t - 1])
                    .zip(delta)
                    .map(|((x, prev), d)| x - d * prev)
                    .collect()
            }
        })
        .collect()
}

/// Inverse Wishart conditional of `Sigma` given the innovation rows:
/// `(J + n, I + sum r r')`.
pub fn iw_conditional(residuals: &[Vec<f64>], n_cov: usize) -> (f64, DMatrix<f64>) {
    let mut scale = DMatrix::<f64>::identity(n_cov, n_cov);
    for r in residuals {
        for a in 0..n_cov {
            for b in 0..n_cov {
                scale[(a, b)] += r[a] * r[b];
            }
        }
    }
    ((n_cov + residuals.len()) as f64, scale)
}

pub fn var_gibbs_update_sigma<R: Rng + ?Sized>(
    params: &mut VarSiteParams,
    detrended: &[Vec<f64>],
    rng: &mut R,
) -> Result<()> {
    let residuals = var_residuals(detrended, &params.delta);
    let (df, scale) = iw_conditional(&residuals, params.delta.len());
    params.sigma = inverse_wishart(rng, df, &scale)?;
    Ok(())
}

/// Joint normal draw of `delta` given `Sigma` under independent normal priors.
pub fn var_gibbs_update_delta_with_prior<R: Rng + ?Sized>(
    params: &mut VarSiteParams,
    detrended: &[Vec<f64>],
    prior_mean: &[f64],
    prior_precision: &[f64],
    rng: &mut R,
) -> Result<()> {
    let j = params.delta.len();
    let omega = params
        .sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("VAR innovation covariance".into()))?
        .inverse();
    let mut precision = DMatrix::<f64>::zeros(j, j);
    let mut linear = DVector::<f64>::zeros(j);
    for t in 1..detrended.len() {
        let prev = &detrended[t - 1];
        let cur = DVector::from_column_slice(&detrended[t]);
        let omega_x = &omega * cur;
        for a in 0..j {
            linear[a] += prev[a] * omega_x[a];
            for b in 0..j {
                precision[(a, b)] += prev[a] * omega[(a, b)] * prev[b];
            }
        }
    }
    for a in 0..j {
        precision[(a, a)] += prior_precision[a];
        linear[a] += prior_precision[a] * prior_mean[a];
    }
    let draw = gaussian_from_precision(rng, &precision, &linear)?;
    params.delta.copy_from_slice(draw.as_slice());
    Ok(())
}

pub fn var_initial(n_cov: usize) -> VarSiteParams {
    VarSiteParams {
        delta: vec![0.0; n_cov],
        sigma: DMatrix::identity(n_cov, n_cov),
    }
}

fn check_detrended(detrended: &[Vec<f64>]) -> Result<usize> {
    let n_cov = detrended.first().map_or(0, |r| r.len());
    if n_cov == 0 {
        return Err(invalid("VAR fit needs at least one covariate"));
    }
    if detrended.len() < n_cov + 2 {
        return Err(invalid(format!(
            "VAR fit needs T >= J + 2 = {}, got {}",
            n_cov + 2,
            detrended.len()
        )));
    }
    if detrended.iter().any(|r| r.len() != n_cov) {
        return Err(Error::DimensionMismatch("ragged detrended series".into()));
    }
    Ok(n_cov)
}

/// Stage-one Gibbs sampler of one site's VAR parameters.
pub fn var_stage1_site<R: Rng + ?Sized>(
    site_id: u32,
    detrended: &[Vec<f64>],
    prior: &VarPrior,
    config: &ChainConfig,
    rng: &mut R,
) -> Result<VarReservoir> {
    config.validate()?;
    let n_cov = check_detrended(detrended)?;
    let mean = vec![0.0; n_cov];
    let prec = vec![1.0 / (prior.delta_sd * prior.delta_sd); n_cov];
    let mut params = var_initial(n_cov);
    let mut draws = Vec::with_capacity(config.retained());
    for m in 1..=config.iterations {
        var_gibbs_update_delta_with_prior(&mut params, detrended, &mean, &prec, rng)?;
        var_gibbs_update_sigma(&mut params, detrended, rng)?;
        if config.keeps(m) {
            draws.push(params.clone());
        }
    }
    let explosive = draws.iter().filter(|d| d.delta.iter().any(|x| x.abs() >= 1.0)).count();
    if explosive > 0 {
        log::warn!("site {site_id}: {explosive} VAR draws have |delta| >= 1");
    }
    if draws.is_empty() {
        return Err(Error::EmptyReservoir(site_id));
    }
    Ok(VarReservoir { site_id, draws })
}

#[derive(Debug)]
pub struct VarStage1Outcome {
    pub reservoirs: Vec<VarReservoir>,
    pub failures: Vec<(u32, Error)>,
}

/// Stage one for every site in parallel; per-site streams as in the ordinal
/// model.
pub fn var_stage1_all(
    detrended: &[Vec<Vec<f64>>],
    prior: &VarPrior,
    config: &ChainConfig,
    workers: usize,
) -> Result<VarStage1Outcome> {
    let results = run_parallel(detrended.len(), workers, |i| {
        let site_id = i as u32 + 1;
        let mut rng = site_rng(config.seed, site_id);
        var_stage1_site(site_id, &detrended[i], prior, config, &mut rng)
    })?;
    let mut reservoirs = Vec::new();
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(res) => reservoirs.push(res),
            Err(e) => failures.push((i as u32 + 1, e)),
        }
    }
    Ok(VarStage1Outcome { reservoirs, failures })
}

/// Current VAR parameters of every site and the ICAR variance of each
/// `delta_j` field.
#[derive(Debug, Clone, PartialEq)]
pub struct VarState {
    pub sites: Vec<VarSiteParams>,
    pub hyper: Vec<f64>,
}

impl VarState {
    pub fn delta_field(&self, j: usize) -> Vec<f64> {
        self.sites.iter().map(|s| s.delta[j]).collect()
    }

    fn update_hyper<R: Rng + ?Sized>(&mut self, graph: &LatticeGraph, rng: &mut R) {
        for j in 0..self.hyper.len() {
            self.hyper[j] = gibbs_update_hypervariance(&self.delta_field(j), graph, HYPER_PRIOR, rng);
        }
    }
}

/// ICAR conditional log prior of a candidate `delta` at site `i`.
pub fn var_icar_log_prior_site(delta: &[f64], i: usize, state: &VarState, graph: &LatticeGraph) -> f64 {
    let nb = graph.neighbors(i);
    let degree = nb.len() as f64;
    delta
        .iter()
        .enumerate()
        .map(|(j, &d)| {
            let mean = nb.iter().map(|&k| state.sites[k].delta[j]).sum::<f64>() / degree;
            normal_log_pdf(d, mean, state.hyper[j] / degree)
        })
        .sum()
}

fn var_stage1_log_prior(delta: &[f64], prior: &VarPrior) -> f64 {
    let v = prior.delta_sd * prior.delta_sd;
    delta.iter().map(|&d| normal_log_pdf(d, 0.0, v)).sum()
}

/// Stage-two log acceptance ratio for the VAR model. The `Sigma` prior is
/// the same in both stages and cancels with the likelihood.
pub fn var_log_acceptance_ratio(
    proposed: &VarSiteParams,
    current: &VarSiteParams,
    i: usize,
    state: &VarState,
    graph: &LatticeGraph,
    prior: &VarPrior,
) -> f64 {
    var_icar_log_prior_site(&proposed.delta, i, state, graph)
        - var_icar_log_prior_site(&current.delta, i, state, graph)
        + var_stage1_log_prior(&current.delta, prior)
        - var_stage1_log_prior(&proposed.delta, prior)
}

/// Retained VAR draws of the full model.
#[derive(Debug, Clone, PartialEq)]
pub struct VarStore {
    pub sites: Vec<VarReservoir>,
    /// ICAR variance of each `delta_j` field, per retained draw.
    pub hyper: Vec<Vec<f64>>,
}

impl VarStore {
    fn new(n_sites: usize) -> Self {
        VarStore {
            sites: (0..n_sites)
                .map(|i| VarReservoir { site_id: i as u32 + 1, draws: Vec::new() })
                .collect(),
            hyper: Vec::new(),
        }
    }

    fn push(&mut self, state: &VarState) {
        for (s, p) in self.sites.iter_mut().zip(&state.sites) {
            s.draws.push(p.clone());
        }
        self.hyper.push(state.hyper.clone());
    }

    pub fn n_draws(&self) -> usize {
        self.sites.first().map_or(0, |s| s.draws.len())
    }
}

#[derive(Debug, Clone)]
pub struct VarStage2Output {
    pub store: VarStore,
    pub stats: AcceptanceStats,
    pub low_acceptance: Vec<u32>,
}

/// Stage two of the VAR model: hypervariance Gibbs then independence MH
/// swaps from each site's reservoir.
pub fn var_stage2(
    reservoirs: &[VarReservoir],
    graph: &LatticeGraph,
    config: &Stage2Config,
    prior: &VarPrior,
) -> Result<VarStage2Output> {
    let n = graph.n_sites();
    if reservoirs.len() != n {
        return Err(Error::DimensionMismatch(format!("{} VAR reservoirs for {n} sites", reservoirs.len())));
    }
    if let Some(r) = reservoirs.iter().find(|r| r.draws.is_empty()) {
        return Err(Error::EmptyReservoir(r.site_id));
    }
    let chain = &config.chain;
    chain.validate()?;
    let n_cov = reservoirs[0].n_cov();
    let mut rng = ChaCha8Rng::seed_from_u64(chain.seed);
    let mut state = VarState {
        sites: reservoirs.iter().map(|r| r.draws.last().unwrap().clone()).collect(),
        hyper: vec![1.0; n_cov],
    };
    let mut store = VarStore::new(n);
    let mut stats = AcceptanceStats::new(n);
    let mut post = AcceptanceStats::new(n);
    let mut order: Vec<usize> = (0..n).collect();
    for m in 1..=chain.iterations {
        state.update_hyper(graph, &mut rng);
        if config.randomized_scan {
            rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        }
        for &i in &order {
            let pool = &reservoirs[i].draws;
            let k = rng.random_range(0..pool.len());
            let log_r = var_log_acceptance_ratio(&pool[k], &state.sites[i], i, &state, graph, prior);
            let u: f64 = rng.random();
            let accept = log_r >= 0.0 || u.ln() < log_r;
            if accept {
                state.sites[i].clone_from(&pool[k]);
            }
            stats.record(i, accept);
            if m > chain.burn_in {
                post.record(i, accept);
            }
        }
        if chain.keeps(m) {
            store.push(&state);
        }
    }
    let low_acceptance: Vec<u32> = (0..n)
        .filter(|&i| post.proposed[i] > 0 && post.rate(i) < LOW_ACCEPTANCE)
        .map(|i| i as u32 + 1)
        .collect();
    if !low_acceptance.is_empty() {
        log::warn!("low VAR stage-two acceptance at sites {low_acceptance:?}");
    }
    Ok(VarStage2Output { store, stats, low_acceptance })
}

/// Single-stage Gibbs sampler of the spatial VAR model; reference for
/// [`var_stage2`].
pub fn var_single_stage(
    detrended: &[Vec<Vec<f64>>],
    graph: &LatticeGraph,
    config: &ChainConfig,
) -> Result<VarStore> {
    let n = graph.n_sites();
    if detrended.len() != n {
        return Err(Error::DimensionMismatch(format!("{} series for {n} sites", detrended.len())));
    }
    config.validate()?;
    let n_cov = check_detrended(&detrended[0])?;
    for d in detrended {
        if check_detrended(d)? != n_cov {
            return Err(Error::DimensionMismatch("sites disagree on the covariate count".into()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = VarState {
        sites: vec![var_initial(n_cov); n],
        hyper: vec![1.0; n_cov],
    };
    let mut store = VarStore::new(n);
    for m in 1..=config.iterations {
        state.update_hyper(graph, &mut rng);
        for i in 0..n {
            let nb = graph.neighbors(i);
            let degree = nb.len() as f64;
            let mean: Vec<f64> = (0..n_cov)
                .map(|j| nb.iter().map(|&k| state.sites[k].delta[j]).sum::<f64>() / degree)
                .collect();
            let prec: Vec<f64> = state.hyper.iter().map(|h| degree / h).collect();
            var_gibbs_update_delta_with_prior(&mut state.sites[i], &detrended[i], &mean, &prec, &mut rng)?;
            var_gibbs_update_sigma(&mut state.sites[i], &detrended[i], &mut rng)?;
        }
        if config.keeps(m) {
            store.push(&state);
        }
    }
    Ok(store)
}

/// Simulate `horizon` detrended steps ahead from the last detrended vector.
pub fn simulate_var_forward<R: Rng + ?Sized>(
    last: &[f64],
    params: &VarSiteParams,
    horizon: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if horizon == 0 {
        return Err(invalid("forecast horizon must be at least 1"));
    }
    let n_cov = last.len();
    let chol = params
        .sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("VAR innovation covariance".into()))?
        .l();
    let mut prev = last.to_vec();
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let eps = DVector::from_fn(n_cov, |_, _| std_normal(rng));
        let shock = &chol * eps;
        let next: Vec<f64> = (0..n_cov).map(|j| params.delta[j] * prev[j] + shock[j]).collect();
        out.push(next.clone());
        prev = next;
    }
    Ok(out)
}

/// Covariate forecasts on the original scale: simulated detrended steps plus
/// the seasonal mean extended past week `t_end`.
pub fn simulate_covariates_forward<R: Rng + ?Sized>(
    last_detrended: &[f64],
    params: &VarSiteParams,
    fit: &FourierFit,
    t_end: usize,
    horizon: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let path = simulate_var_forward(last_detrended, params, horizon, rng)?;
    Ok(path
        .into_iter()
        .enumerate()
        .map(|(h, row)| {
            row.iter()
                .enumerate()
                .map(|(j, v)| v + fit.trend(j, t_end + h + 1))
                .collect()
        })
        .collect())
}
