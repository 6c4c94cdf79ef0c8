//! Chain diagnostics: effective sample size, posterior summaries and
//! store-to-store comparisons.

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::store::DrawStore;

/// Shortest chain accepted by [`effective_sample_size`].
pub const MIN_ESS_LENGTH: usize = 10;

/// Sample autocovariances at lags `0..n` (divisor `n`), via FFT.
pub fn autocovariance(chain: &[f64]) -> Vec<f64> {
    let n = chain.len();
    let mean = chain.iter().sum::<f64>() / n as f64;
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = chain
        .iter()
        .map(|&x| Complex::new(x - mean, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    buf.iter().take(n).map(|c| c.re / (size as f64 * n as f64)).collect()
}

fn is_constant(chain: &[f64]) -> bool {
    chain.iter().all(|&x| x == chain[0])
}

/// Effective sample size with the initial positive sequence estimator:
/// autocovariances are summed in adjacent pairs until a pair sum turns
/// non-positive. A constant chain is given `N`. The result lies in `(0, N]`.
pub fn effective_sample_size(chain: &[f64]) -> Result<f64> {
    let n = chain.len();
    if n < MIN_ESS_LENGTH {
        return Err(invalid(format!("ESS needs at least {MIN_ESS_LENGTH} draws, got {n}")));
    }
    if chain.iter().any(|x| !x.is_finite()) {
        return Err(invalid("ESS of a chain with non-finite values"));
    }
    if is_constant(chain) {
        return Ok(n as f64);
    }
    let acov = autocovariance(chain);
    let mut pair_sum = 0.0;
    let mut m = 0;
    while 2 * m + 1 < n {
        let g = acov[2 * m] + acov[2 * m + 1];
        if g <= 0.0 {
            break;
        }
        pair_sum += g;
        m += 1;
    }
    let tau = -1.0 + 2.0 * pair_sum / acov[0];
    let ess = n as f64 / tau;
    Ok(if ess.is_finite() && ess > 0.0 { ess.min(n as f64) } else { n as f64 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    /// 0 for the lattice-wide ICAR variances.
    pub site_id: u32,
    pub parameter: String,
    pub mean: f64,
    pub sd: f64,
    pub ess: f64,
    pub mcse: f64,
    /// Set when the ESS is a convention rather than an estimate
    /// (`"short"` or `"constant"`).
    pub flag: Option<String>,
}

/// Average ESS of a parameter class across sites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEss {
    pub class: String,
    pub mean_ess: f64,
    pub ess_per_hour: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub rows: Vec<ParamSummary>,
    pub classes: Vec<ClassEss>,
    pub n_draws: usize,
    pub wall_seconds: Option<f64>,
}

impl ChainSummary {
    pub fn get(&self, site_id: u32, parameter: &str) -> Option<&ParamSummary> {
        self.rows.iter().find(|r| r.site_id == site_id && r.parameter == parameter)
    }
}

pub fn ess_per_hour(ess: f64, wall_seconds: f64) -> f64 {
    ess / (wall_seconds / 3600.0)
}

/// Mean, sd, ESS and MCSE of one trace.
pub fn summarize_chain(site_id: u32, parameter: &str, chain: &[f64]) -> Result<ParamSummary> {
    let n = chain.len();
    if n == 0 {
        return Err(invalid("cannot summarize an empty chain"));
    }
    let mean = chain.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (chain.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let (ess, flag) = if n < MIN_ESS_LENGTH {
        (n as f64, Some("short".to_string()))
    } else if is_constant(chain) {
        (n as f64, Some("constant".to_string()))
    } else {
        (effective_sample_size(chain)?, None)
    };
    Ok(ParamSummary {
        site_id,
        parameter: parameter.to_string(),
        mean,
        sd,
        ess,
        mcse: sd * (1.0 / ess).sqrt(),
        flag,
    })
}

/// Named traces of a store: per site `beta0..betaP, gamma, rho, sigma2`,
/// then lattice-wide `sigma2_gamma, sigma2_beta0..`.
pub fn store_traces(store: &DrawStore) -> Vec<(u32, String, Vec<f64>)> {
    let mut out = Vec::new();
    for site in &store.sites {
        let n_coef = site.n_coef();
        for p in 0..n_coef {
            out.push((site.site_id, format!("beta{p}"), site.draws.iter().map(|d| d.beta[p]).collect()));
        }
        out.push((site.site_id, "gamma".into(), site.draws.iter().map(|d| d.gamma).collect()));
        out.push((site.site_id, "rho".into(), site.draws.iter().map(|d| d.rho()).collect()));
        out.push((site.site_id, "sigma2".into(), site.draws.iter().map(|d| d.sigma2).collect()));
    }
    if !store.hyper.is_empty() {
        out.push((0, "sigma2_gamma".into(), store.hyper.iter().map(|h| h.sigma2_gamma).collect()));
        for p in 0..store.hyper[0].sigma2_beta.len() {
            out.push((0, format!("sigma2_beta{p}"), store.hyper.iter().map(|h| h.sigma2_beta[p]).collect()));
        }
    }
    out
}

/// Summarize traces and average the ESS of each site-level class.
pub fn summarize_traces(traces: &[(u32, String, Vec<f64>)], wall_seconds: Option<f64>) -> Result<ChainSummary> {
    if traces.is_empty() || traces[0].2.is_empty() {
        return Err(invalid("cannot summarize an empty store"));
    }
    let rows: Vec<ParamSummary> = traces
        .par_iter()
        .map(|(s, name, chain)| summarize_chain(*s, name, chain))
        .collect::<Result<_>>()?;
    let mut classes: Vec<ClassEss> = Vec::new();
    for row in rows.iter().filter(|r| r.site_id != 0) {
        if !classes.iter().any(|c| c.class == row.parameter) {
            let members: Vec<f64> = rows
                .iter()
                .filter(|r| r.site_id != 0 && r.parameter == row.parameter)
                .map(|r| r.ess)
                .collect();
            let mean_ess = members.iter().sum::<f64>() / members.len() as f64;
            classes.push(ClassEss {
                class: row.parameter.clone(),
                mean_ess,
                ess_per_hour: wall_seconds.map(|w| ess_per_hour(mean_ess, w)),
            });
        }
    }
    Ok(ChainSummary {
        rows,
        classes,
        n_draws: traces[0].2.len(),
        wall_seconds,
    })
}

pub fn summarize_store(store: &DrawStore, wall_seconds: Option<f64>) -> Result<ChainSummary> {
    if store.n_draws() == 0 {
        return Err(invalid("cannot summarize an empty store"));
    }
    summarize_traces(&store_traces(store), wall_seconds)
}

/// One parameter's posterior mean in two runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub site_id: u32,
    pub parameter: String,
    pub mean_a: f64,
    pub mean_b: f64,
    pub diff: f64,
    /// `sqrt(mcse_a^2 + mcse_b^2)`
    pub combined_mcse: f64,
}

impl ComparisonRow {
    /// `|diff| <= k * combined_mcse`
    pub fn within(&self, k: f64) -> bool {
        self.diff.abs() <= k * self.combined_mcse
    }
}

/// Join two summaries on `(site_id, parameter)`.
pub fn compare_summaries(a: &ChainSummary, b: &ChainSummary) -> Vec<ComparisonRow> {
    a.rows
        .iter()
        .filter_map(|ra| {
            b.get(ra.site_id, &ra.parameter).map(|rb| ComparisonRow {
                site_id: ra.site_id,
                parameter: ra.parameter.clone(),
                mean_a: ra.mean,
                mean_b: rb.mean,
                diff: ra.mean - rb.mean,
                combined_mcse: ra.mcse.hypot(rb.mcse),
            })
        })
        .collect()
}
