//! Independent reference implementations shared by the integration tests
//! and the acceptance harness. Densities here are written out from the
//! model definition rather than calling the library's own helpers.
#![allow(dead_code)]

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use twostage::lattice::LatticeGraph;
use twostage::model::{Cutoffs, HyperParams, SitePanel, SiteParams, Stage1Prior};
use twostage::stage2::FullModelState;

pub mod conditional_checks;

/// Kolmogorov-Smirnov distance between a sample and a CDF.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(k, &x)| {
            let f = cdf(x);
            (f - k as f64 / n).abs().max(((k + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Two-sample KS distance.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut b = b.to_vec();
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let n = b.len() as f64;
    let ecdf_b = |x: f64| b.partition_point(|&v| v <= x) as f64 / n;
    ks_statistic(a, ecdf_b)
}

/// CDF tabulated on a grid from an unnormalized log density.
pub struct GridCdf {
    xs: Vec<f64>,
    cdf: Vec<f64>,
}

impl GridCdf {
    pub fn from_log_density(lo: f64, hi: f64, n: usize, log_f: impl Fn(f64) -> f64) -> Self {
        let xs: Vec<f64> = (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect();
        let lf: Vec<f64> = xs.iter().map(|&x| log_f(x)).collect();
        Self::from_log_values(xs, lf)
    }

    fn from_log_values(xs: Vec<f64>, lf: Vec<f64>) -> Self {
        let max = lf.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let f: Vec<f64> = lf.iter().map(|v| (v - max).exp()).collect();
        let mut cdf = vec![0.0; xs.len()];
        for k in 1..xs.len() {
            cdf[k] = cdf[k - 1] + 0.5 * (f[k] + f[k - 1]) * (xs[k] - xs[k - 1]);
        }
        let total = *cdf.last().unwrap();
        for c in cdf.iter_mut() {
            *c /= total;
        }
        GridCdf { xs, cdf }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.xs[0] {
            return 0.0;
        }
        if x >= *self.xs.last().unwrap() {
            return 1.0;
        }
        let k = self.xs.partition_point(|&v| v <= x);
        let (x0, x1) = (self.xs[k - 1], self.xs[k]);
        let w = (x - x0) / (x1 - x0);
        self.cdf[k - 1] * (1.0 - w) + self.cdf[k] * w
    }

    pub fn mean(&self) -> f64 {
        let mut m = 0.0;
        for k in 1..self.xs.len() {
            m += 0.5 * (self.xs[k] + self.xs[k - 1]) * (self.cdf[k] - self.cdf[k - 1]);
        }
        m
    }
}

/// Marginal CDFs of both coordinates of a bivariate unnormalized log density.
pub fn grid_marginals_2d(
    (lo0, hi0): (f64, f64),
    (lo1, hi1): (f64, f64),
    n: usize,
    log_f: impl Fn(f64, f64) -> f64,
) -> (GridCdf, GridCdf) {
    let g0: Vec<f64> = (0..n).map(|k| lo0 + (hi0 - lo0) * k as f64 / (n - 1) as f64).collect();
    let g1: Vec<f64> = (0..n).map(|k| lo1 + (hi1 - lo1) * k as f64 / (n - 1) as f64).collect();
    let vals: Vec<Vec<f64>> = g0.iter().map(|&a| g1.iter().map(|&b| log_f(a, b)).collect()).collect();
    let max = vals.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
    let m0: Vec<f64> = vals.iter().map(|row| row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()).collect();
    let m1: Vec<f64> = (0..n).map(|k| vals.iter().map(|row| (row[k] - max).exp()).sum::<f64>().ln()).collect();
    (GridCdf::from_log_values(g0, m0), GridCdf::from_log_values(g1, m1))
}

pub fn normal_lpdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * PI * var).ln() - (x - mean) * (x - mean) / (2.0 * var)
}

/// Inverse gamma, shape-scale.
pub fn inv_gamma_lpdf(x: f64, shape: f64, scale: f64) -> f64 {
    shape * scale.ln() - statrs::function::gamma::ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x
}

pub fn inv_gamma_cdf(x: f64, shape: f64, scale: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        statrs::function::gamma::gamma_ur(shape, scale / x)
    }
}

pub fn normal_cdf(x: f64, mean: f64, var: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-(x - mean) / (2.0 * var).sqrt())
}

pub fn logistic_lpdf(g: f64) -> f64 {
    -g.abs() - 2.0 * (1.0 + (-g.abs()).exp()).ln()
}

fn row_dot(panel: &SitePanel, t: usize, beta: &[f64]) -> f64 {
    panel.x_row(t).iter().zip(beta).map(|(a, b)| a * b).sum()
}

/// Latent AR(1) log density: `Z_1 ~ N(x_1'b, s2)`,
/// `Z_t ~ N(x_t'b + rho (Z_{t-1} - x_{t-1}'b), s2)`.
pub fn ar1_lpdf(z: &[f64], beta: &[f64], rho: f64, sigma2: f64, panel: &SitePanel) -> f64 {
    let mut total = 0.0;
    for t in 0..z.len() {
        let mut mean = row_dot(panel, t, beta);
        if t > 0 {
            mean += rho * (z[t - 1] - row_dot(panel, t - 1, beta));
        }
        total += normal_lpdf(z[t], mean, sigma2);
    }
    total
}

/// Zero when every latent value lies in the interval of its level.
pub fn ordinal_lpmf(z: &[f64], panel: &SitePanel) -> f64 {
    let cut = panel.cutoffs();
    for (t, &v) in z.iter().enumerate() {
        let y = panel.y()[t] as usize;
        let lo = if y == 0 { f64::NEG_INFINITY } else { (y - 1) as f64 };
        let hi = if y == cut.j() { f64::INFINITY } else { y as f64 };
        if !(v > lo && v <= hi) {
            return f64::NEG_INFINITY;
        }
    }
    0.0
}

fn rho_of(gamma: f64) -> f64 {
    1.0 / (1.0 + (-gamma).exp())
}

/// Unnormalized stage-one posterior of one site.
pub fn stage1_lpdf(site: &SiteParams, panel: &SitePanel, prior: &Stage1Prior) -> f64 {
    let beta_prior: f64 = site.beta.iter().zip(&prior.xi).map(|(&b, &xi)| normal_lpdf(b, 0.0, xi * xi)).sum();
    ordinal_lpmf(&site.z, panel)
        + ar1_lpdf(&site.z, &site.beta, rho_of(site.gamma), site.sigma2, panel)
        + beta_prior
        + logistic_lpdf(site.gamma)
        + inv_gamma_lpdf(site.sigma2, prior.ig_shape, prior.ig_scale)
}

/// Joint ICAR log density of a field, `phi^{-I/2} exp(-sum_{i~j}(v_i-v_j)^2 / (2 phi))`.
pub fn icar_joint_lpdf(values: &[f64], phi: f64, graph: &LatticeGraph) -> f64 {
    let mut q = 0.0;
    for i in 0..graph.n_sites() {
        for &j in graph.neighbors(i) {
            if i < j {
                q += (values[i] - values[j]).powi(2);
            }
        }
    }
    -0.5 * values.len() as f64 * phi.ln() - q / (2.0 * phi)
}

/// Unnormalized full-model posterior of every site and hypervariance.
pub fn full_lpdf(state: &FullModelState, panels: &[SitePanel], graph: &LatticeGraph, prior: &Stage1Prior) -> f64 {
    let mut total = 0.0;
    for (s, p) in state.sites.iter().zip(panels) {
        total += ordinal_lpmf(&s.z, p)
            + ar1_lpdf(&s.z, &s.beta, rho_of(s.gamma), s.sigma2, p)
            + inv_gamma_lpdf(s.sigma2, prior.ig_shape, prior.ig_scale);
    }
    let gamma: Vec<f64> = state.sites.iter().map(|s| s.gamma).collect();
    total += icar_joint_lpdf(&gamma, state.hyper.sigma2_gamma, graph) + inv_gamma_lpdf(state.hyper.sigma2_gamma, 0.5, 0.5);
    for (p, &phi) in state.hyper.sigma2_beta.iter().enumerate() {
        let field: Vec<f64> = state.sites.iter().map(|s| s.beta[p]).collect();
        total += icar_joint_lpdf(&field, phi, graph) + inv_gamma_lpdf(phi, 0.5, 0.5);
    }
    total
}

/// Metropolis-Hastings log ratio for swapping `proposed` in at site `i`,
/// written as full posterior ratio times reverse over forward proposal
/// densities (the stage-one posteriors).
pub fn expanded_log_ratio(
    proposed: &SiteParams,
    i: usize,
    state: &FullModelState,
    panels: &[SitePanel],
    graph: &LatticeGraph,
    prior: &Stage1Prior,
) -> f64 {
    let mut next = state.clone();
    next.sites[i] = proposed.clone();
    full_lpdf(&next, panels, graph, prior) - full_lpdf(state, panels, graph, prior)
        + stage1_lpdf(&state.sites[i], &panels[i], prior)
        - stage1_lpdf(proposed, &panels[i], prior)
}

pub fn random_panel(rng: &mut ChaCha8Rng, t: usize, n_cov: usize, j: usize) -> SitePanel {
    let cut = Cutoffs::new(j).unwrap();
    let y: Vec<u8> = (0..t).map(|_| rng.random_range(0..=j as u8)).collect();
    let x: Vec<Vec<f64>> = (0..t).map(|_| (0..n_cov).map(|_| rng.random_range(-1.5..1.5)).collect()).collect();
    SitePanel::new(y, &x, cut).unwrap()
}

/// A latent series inside the intervals of the panel's levels.
pub fn consistent_latent(rng: &mut ChaCha8Rng, panel: &SitePanel) -> Vec<f64> {
    (0..panel.t_len())
        .map(|t| {
            let (lo, hi) = panel.bounds(t);
            let lo = if lo.is_finite() { lo } else { hi - 2.0 };
            let hi = if hi.is_finite() { hi } else { lo + 2.0 };
            rng.random_range(lo + 1e-6..hi)
        })
        .collect()
}

pub fn random_site(rng: &mut ChaCha8Rng, panel: &SitePanel) -> SiteParams {
    SiteParams {
        beta: (0..panel.n_coef()).map(|_| rng.random_range(-2.0..2.0)).collect(),
        gamma: rng.random_range(-3.0..3.0),
        sigma2: rng.random_range(0.1..3.0),
        z: consistent_latent(rng, panel),
    }
}

pub fn random_hyper(rng: &mut ChaCha8Rng, n_coef: usize) -> HyperParams {
    HyperParams {
        sigma2_gamma: rng.random_range(0.05..4.0),
        sigma2_beta: (0..n_coef).map(|_| rng.random_range(0.05..4.0)).collect(),
    }
}

/// A panel whose levels come from a simulated AR(1) latent path, returned
/// with that path so the pair is consistent.
pub fn ar1_panel(rng: &mut ChaCha8Rng, t: usize, beta: &[f64], rho: f64, sigma2: f64, j: usize) -> (SitePanel, Vec<f64>) {
    let cut = Cutoffs::new(j).unwrap();
    let x: Vec<Vec<f64>> = (0..t)
        .map(|_| (1..beta.len()).map(|_| rng.random_range(-1.5..1.5)).collect())
        .collect();
    let mean = |k: usize| beta[0] + x[k].iter().zip(&beta[1..]).map(|(a, b)| a * b).sum::<f64>();
    let sd = sigma2.sqrt();
    let mut z = Vec::with_capacity(t);
    for k in 0..t {
        let e: f64 = rng.sample::<f64, _>(rand_distr::StandardNormal) * sd;
        let v = if k == 0 { mean(0) + e } else { mean(k) + rho * (z[k - 1] - mean(k - 1)) + e };
        z.push(v);
    }
    let y: Vec<u8> = z.iter().map(|&v| cut.ordinal_from_latent(v)).collect();
    (SitePanel::new(y, &x, cut).unwrap(), z)
}

/// Stationary probability of each joint reservoir index under stage two,
/// with the ICAR variances integrated out against their IG(a, b) priors:
/// `prod_fields (b + Q/2)^-(a + I/2) / prod_sites stage1_prior(beta, gamma)`.
/// Indices are ordered with the first site varying slowest.
pub fn exact_index_weights(
    reservoirs: &[twostage::Reservoir],
    graph: &LatticeGraph,
    prior: &Stage1Prior,
) -> Vec<f64> {
    let sizes: Vec<usize> = reservoirs.iter().map(|r| r.draws.len()).collect();
    let total: usize = sizes.iter().product();
    let n = reservoirs.len();
    let n_coef = reservoirs[0].n_coef();
    let (a, b) = (0.5, 0.5);
    let mut logw = Vec::with_capacity(total);
    for flat in 0..total {
        let mut idx = vec![0; n];
        let mut rem = flat;
        for i in (0..n).rev() {
            idx[i] = rem % sizes[i];
            rem /= sizes[i];
        }
        let sites: Vec<&SiteParams> = idx.iter().enumerate().map(|(i, &k)| &reservoirs[i].draws[k]).collect();
        let mut fields: Vec<Vec<f64>> = vec![sites.iter().map(|s| s.gamma).collect()];
        for p in 0..n_coef {
            fields.push(sites.iter().map(|s| s.beta[p]).collect());
        }
        let mut lw = 0.0;
        for f in &fields {
            let mut q = 0.0;
            for i in 0..n {
                for &j in graph.neighbors(i) {
                    if i < j {
                        q += (f[i] - f[j]).powi(2);
                    }
                }
            }
            lw -= (a + 0.5 * n as f64) * (b + 0.5 * q).ln();
        }
        for s in &sites {
            lw -= logistic_lpdf(s.gamma);
            for (p, &beta) in s.beta.iter().enumerate() {
                lw -= normal_lpdf(beta, 0.0, prior.xi[p] * prior.xi[p]);
            }
        }
        logw.push(lw);
    }
    let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Empirical frequency of each joint index, ordered as in
/// [`exact_index_weights`].
pub fn index_frequencies(indices: &[Vec<u32>], sizes: &[usize]) -> Vec<f64> {
    let total: usize = sizes.iter().product();
    let mut counts = vec![0.0; total];
    for row in indices {
        let mut flat = 0;
        for (i, &k) in row.iter().enumerate() {
            flat = flat * sizes[i] + k as usize;
        }
        counts[flat] += 1.0;
    }
    let n = indices.len() as f64;
    counts.into_iter().map(|c| c / n).collect()
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Small reservoirs with spread-out `beta` and `gamma` and no covariates.
pub fn toy_reservoirs(rng: &mut ChaCha8Rng, n_sites: usize, t: usize, size: usize) -> Vec<twostage::Reservoir> {
    (0..n_sites)
        .map(|i| twostage::Reservoir {
            site_id: i as u32 + 1,
            draws: (0..size)
                .map(|_| SiteParams {
                    beta: vec![rng.random_range(-1.5..1.5)],
                    gamma: rng.random_range(-1.5..1.5),
                    sigma2: rng.random_range(0.2..2.0),
                    z: (0..t).map(|_| rng.random_range(-1.0..1.0)).collect(),
                })
                .collect(),
        })
        .collect()
}
