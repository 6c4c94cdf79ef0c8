//! Sampler-versus-oracle KS distances for every full conditional.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use twostage::covariate::{iw_conditional, var_gibbs_update_delta_with_prior, var_gibbs_update_sigma, var_residuals, VarSiteParams};
use twostage::dist::truncated_normal;
use twostage::lattice::LatticeGraph;
use twostage::model::{HyperParams, SitePanel, SiteParams, Stage1Prior};
use twostage::reference::{gibbs_update_beta_icar, mh_update_gamma_icar};
use twostage::stage1::{gibbs_update_beta, gibbs_update_rho, gibbs_update_sigma2, gibbs_update_z, z_conditional_moments};
use twostage::stage2::{gibbs_update_hypervariance, FullModelState};

use super::*;

pub const N: usize = 50_000;
pub const KS_MAX: f64 = 0.02;

pub struct Check {
    pub label: String,
    pub ks: f64,
    pub limit: f64,
}

impl Check {
    fn new(label: impl Into<String>, ks: f64, limit: f64) -> Self {
        Check { label: label.into(), ks, limit }
    }

    pub fn passed(&self) -> bool {
        self.ks < self.limit
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let s = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    (m, s)
}

fn ar1_site(seed: u64, t: usize) -> (SitePanel, SiteParams) {
    let mut r = rng(seed);
    let beta = [1.8, 0.7];
    let (panel, z) = ar1_panel(&mut r, t, &beta, 0.6, 0.5, 4);
    let site = SiteParams { beta: beta.to_vec(), gamma: (0.6f64 / 0.4).ln(), sigma2: 0.5, z };
    (panel, site)
}

fn finite_bounds(panel: &SitePanel, t: usize) -> (f64, f64) {
    let (lo, hi) = panel.bounds(t);
    let glo = if lo.is_finite() { lo } else { hi - 10.0 };
    let ghi = if hi.is_finite() { hi } else { lo + 10.0 };
    (glo, ghi)
}

fn latent_grid(panel: &SitePanel, site: &SiteParams, t: usize) -> GridCdf {
    let (lo, hi) = finite_bounds(panel, t);
    GridCdf::from_log_density(lo, hi, 20_001, |x| {
        let mut z = site.z.clone();
        z[t] = x;
        ar1_lpdf(&z, &site.beta, site.rho(), site.sigma2, panel)
    })
}

/// Latent moments at every position, plus the first draw of a full sweep.
pub fn latent() -> Vec<Check> {
    let (panel, site) = ar1_site(1, 5);
    let mu = panel.linear_predictor(&site.beta);
    let mut r = rng(2);
    let mut out = Vec::new();
    for t in 0..panel.t_len() {
        let (m, v) = z_conditional_moments(&site, &panel, &mu, t);
        let (lo, hi) = panel.bounds(t);
        let draws: Vec<f64> = (0..N).map(|_| truncated_normal(&mut r, m, v.sqrt(), lo, hi)).collect();
        let grid = latent_grid(&panel, &site, t);
        out.push(Check::new(format!("z[{t}]"), ks_statistic(&draws, |x| grid.cdf(x)), KS_MAX));
    }
    let draws: Vec<f64> = (0..N)
        .map(|_| {
            let mut s = site.clone();
            gibbs_update_z(&mut s, &panel, &mut r);
            s.z[0]
        })
        .collect();
    let grid = latent_grid(&panel, &site, 0);
    out.push(Check::new("z sweep", ks_statistic(&draws, |x| grid.cdf(x)), KS_MAX));
    out
}

pub fn beta() -> Vec<Check> {
    let (panel, site) = ar1_site(5, 5);
    let prior = Stage1Prior::new(2);
    let mut r = rng(6);
    let mut s = site.clone();
    let (mut b0, mut b1) = (Vec::with_capacity(N), Vec::with_capacity(N));
    for _ in 0..N {
        gibbs_update_beta(&mut s, &panel, &prior, &mut r).unwrap();
        b0.push(s.beta[0]);
        b1.push(s.beta[1]);
    }
    let ((m0, s0), (m1, s1)) = (mean_sd(&b0), mean_sd(&b1));
    let (g0, g1) = grid_marginals_2d((m0 - 8.0 * s0, m0 + 8.0 * s0), (m1 - 8.0 * s1, m1 + 8.0 * s1), 801, |a, b| {
        ar1_lpdf(&site.z, &[a, b], site.rho(), site.sigma2, &panel) + normal_lpdf(a, 0.0, 9.0) + normal_lpdf(b, 0.0, 9.0)
    });
    vec![
        Check::new("beta0", ks_statistic(&b0, |x| g0.cdf(x)), KS_MAX),
        Check::new("beta1", ks_statistic(&b1, |x| g1.cdf(x)), KS_MAX),
    ]
}

pub fn rho() -> Vec<Check> {
    [(7, 5), (8, 4)]
        .into_iter()
        .map(|(seed, t)| {
            let (panel, site) = ar1_site(seed, t);
            let mut r = rng(seed + 100);
            let mut s = site.clone();
            let draws: Vec<f64> = (0..N)
                .map(|_| {
                    gibbs_update_rho(&mut s, &panel, &mut r);
                    s.rho()
                })
                .collect();
            let grid = GridCdf::from_log_density(1e-9, 1.0 - 1e-9, 20_001, |rho| {
                ar1_lpdf(&site.z, &site.beta, rho, site.sigma2, &panel)
            });
            Check::new(format!("rho T={t}"), ks_statistic(&draws, |x| grid.cdf(x)), KS_MAX)
        })
        .collect()
}

pub fn sigma2() -> Vec<Check> {
    let (panel, site) = ar1_site(9, 5);
    let prior = Stage1Prior::new(2);
    let mut r = rng(10);
    let mut s = site.clone();
    let draws: Vec<f64> = (0..N)
        .map(|_| {
            gibbs_update_sigma2(&mut s, &panel, &prior, &mut r);
            s.sigma2.ln()
        })
        .collect();
    let grid = GridCdf::from_log_density(-10.0, 8.0, 20_001, |u| {
        let s2 = u.exp();
        ar1_lpdf(&site.z, &site.beta, site.rho(), s2, &panel) + inv_gamma_lpdf(s2, 0.5, 0.5) + u
    });
    vec![Check::new("sigma2", ks_statistic(&draws, |x| grid.cdf(x)), KS_MAX)]
}

pub fn hypervariance() -> Vec<Check> {
    let graph = LatticeGraph::regular(3, 3).unwrap();
    let field = [0.3, -0.2, 0.9, 1.1, 0.0, -0.7, 0.4, 0.5, -1.0];
    let mut r = rng(11);
    let draws: Vec<f64> = (0..N).map(|_| gibbs_update_hypervariance(&field, &graph, (0.5, 0.5), &mut r)).collect();
    let logs: Vec<f64> = draws.iter().map(|v| v.ln()).collect();
    let grid = GridCdf::from_log_density(-6.0, 6.0, 20_001, |u| {
        let phi = u.exp();
        icar_joint_lpdf(&field, phi, &graph) + inv_gamma_lpdf(phi, 0.5, 0.5) + u
    });
    // Count every queen pair directly from grid coordinates.
    let mut q = 0.0;
    for a in 0..9usize {
        for b in (a + 1)..9 {
            let (ra, ca, rb, cb) = (a / 3, a % 3, b / 3, b % 3);
            if ra.abs_diff(rb) <= 1 && ca.abs_diff(cb) <= 1 {
                q += (field[a] - field[b]).powi(2);
            }
        }
    }
    let (shape, scale) = (0.5 + 4.5, 0.5 + 0.5 * q);
    vec![
        Check::new("hypervariance grid", ks_statistic(&logs, |x| grid.cdf(x)), KS_MAX),
        Check::new("hypervariance closed form", ks_statistic(&draws, |x| inv_gamma_cdf(x, shape, scale)), KS_MAX),
    ]
}

fn three_site_state(seed: u64, t: usize) -> (LatticeGraph, Vec<SitePanel>, FullModelState) {
    let graph = LatticeGraph::regular(1, 3).unwrap();
    let mut r = rng(seed);
    let mut panels = Vec::new();
    let mut sites = Vec::new();
    for k in 0..3 {
        let beta = [1.5 + 0.2 * k as f64, 0.5];
        let (p, z) = ar1_panel(&mut r, t, &beta, 0.7, 0.4, 4);
        sites.push(SiteParams { beta: beta.to_vec(), gamma: 0.7 + 0.3 * k as f64, sigma2: 0.4, z });
        panels.push(p);
    }
    let state = FullModelState {
        sites,
        hyper: HyperParams { sigma2_gamma: 0.6, sigma2_beta: vec![0.3, 0.8] },
        iteration: 0,
    };
    (graph, panels, state)
}

fn icar_site_lpdf(values: &[f64], i: usize, v: f64, phi: f64, graph: &LatticeGraph) -> f64 {
    let mut field = values.to_vec();
    field[i] = v;
    icar_joint_lpdf(&field, phi, graph)
}

pub fn icar_beta() -> Vec<Check> {
    let (graph, panels, state) = three_site_state(12, 5);
    let i = 1;
    let field0: Vec<f64> = state.sites.iter().map(|s| s.beta[0]).collect();
    let field1: Vec<f64> = state.sites.iter().map(|s| s.beta[1]).collect();
    let site = state.sites[i].clone();
    let mut s = state.clone();
    let mut r = rng(13);
    let (mut b0, mut b1) = (Vec::with_capacity(N), Vec::with_capacity(N));
    for _ in 0..N {
        gibbs_update_beta_icar(i, &mut s, &panels[i], &graph, &mut r).unwrap();
        b0.push(s.sites[i].beta[0]);
        b1.push(s.sites[i].beta[1]);
    }
    let ((m0, s0), (m1, s1)) = (mean_sd(&b0), mean_sd(&b1));
    let (g0, g1) = grid_marginals_2d((m0 - 8.0 * s0, m0 + 8.0 * s0), (m1 - 8.0 * s1, m1 + 8.0 * s1), 801, |a, b| {
        ar1_lpdf(&site.z, &[a, b], site.rho(), site.sigma2, &panels[i])
            + icar_site_lpdf(&field0, i, a, 0.3, &graph)
            + icar_site_lpdf(&field1, i, b, 0.8, &graph)
    });
    vec![
        Check::new("icar beta0", ks_statistic(&b0, |x| g0.cdf(x)), KS_MAX),
        Check::new("icar beta1", ks_statistic(&b1, |x| g1.cdf(x)), KS_MAX),
    ]
}

fn gamma_chain(state: &FullModelState, panels: &[SitePanel], graph: &LatticeGraph, i: usize, thin: usize) -> Vec<f64> {
    let mut s = state.clone();
    let mut r = rng(14);
    for _ in 0..2_000 {
        mh_update_gamma_icar(i, &mut s, &panels[i], graph, 0.8, &mut r);
    }
    (0..N)
        .map(|_| {
            for _ in 0..thin {
                mh_update_gamma_icar(i, &mut s, &panels[i], graph, 0.8, &mut r);
            }
            s.sites[i].gamma
        })
        .collect()
}

/// Random-walk chains on `gamma`, thinned by 20. With one week the AR(1)
/// likelihood is flat in `gamma`, leaving the ICAR conditional.
pub fn icar_gamma() -> Vec<Check> {
    let (graph, panels, state) = three_site_state(15, 1);
    let draws = gamma_chain(&state, &panels, &graph, 0, 20);
    // Site 0 of a 1x3 row has the single neighbor site 1.
    let flat = Check::new("gamma T=1", ks_statistic(&draws, |x| normal_cdf(x, state.sites[1].gamma, 0.6)), KS_MAX);

    let (graph, panels, state) = three_site_state(16, 50);
    let i = 1;
    let draws = gamma_chain(&state, &panels, &graph, i, 20);
    let site = &state.sites[i];
    let gamma: Vec<f64> = state.sites.iter().map(|s| s.gamma).collect();
    let grid = GridCdf::from_log_density(-10.0, 15.0, 40_001, |g| {
        ar1_lpdf(&site.z, &site.beta, 1.0 / (1.0 + (-g).exp()), site.sigma2, &panels[i])
            + icar_site_lpdf(&gamma, i, g, 0.6, &graph)
    });
    vec![flat, Check::new("gamma T=50", ks_statistic(&draws, |x| grid.cdf(x)), 0.03)]
}

fn var_series(seed: u64, t: usize, delta: &[f64], chol: &[[f64; 2]; 2]) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    let j = delta.len();
    let mut x: Vec<Vec<f64>> = Vec::with_capacity(t);
    for k in 0..t {
        let e: Vec<f64> = (0..j).map(|_| r.sample(rand_distr::StandardNormal)).collect();
        let row: Vec<f64> = (0..j)
            .map(|a| {
                let shock: f64 = (0..=a).map(|b| chol[a][b] * e[b]).sum();
                let lag = if k == 0 { 0.0 } else { delta[a] * x[k - 1][a] };
                lag + shock
            })
            .collect();
        x.push(row);
    }
    x
}

pub fn var_delta() -> Vec<Check> {
    let x = var_series(17, 5, &[0.6], &[[0.9, 0.0], [0.0, 0.0]]);
    let mut params = VarSiteParams { delta: vec![0.0], sigma: DMatrix::from_element(1, 1, 0.7) };
    let mut r = rng(18);
    let draws: Vec<f64> = (0..N)
        .map(|_| {
            var_gibbs_update_delta_with_prior(&mut params, &x, &[0.0], &[1.0 / 9.0], &mut r).unwrap();
            params.delta[0]
        })
        .collect();
    let grid = GridCdf::from_log_density(-12.0, 12.0, 40_001, |d| {
        (1..x.len()).map(|t| normal_lpdf(x[t][0], d * x[t - 1][0], 0.7)).sum::<f64>() + normal_lpdf(d, 0.0, 9.0)
    });
    let one = Check::new("delta J=1", ks_statistic(&draws, |v| grid.cdf(v)), KS_MAX);

    let x = var_series(19, 5, &[0.5, -0.3], &[[1.0, 0.0], [0.4, 0.8]]);
    let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 0.8]);
    let det = 1.0 * 0.8 - 0.4 * 0.4;
    let inv = [[0.8 / det, -0.4 / det], [-0.4 / det, 1.0 / det]];
    let mut params = VarSiteParams { delta: vec![0.0, 0.0], sigma };
    let (mut d0, mut d1) = (Vec::with_capacity(N), Vec::with_capacity(N));
    for _ in 0..N {
        var_gibbs_update_delta_with_prior(&mut params, &x, &[0.0, 0.0], &[1.0 / 9.0, 1.0 / 9.0], &mut r).unwrap();
        d0.push(params.delta[0]);
        d1.push(params.delta[1]);
    }
    let ((m0, s0), (m1, s1)) = (mean_sd(&d0), mean_sd(&d1));
    let (g0, g1) = grid_marginals_2d((m0 - 8.0 * s0, m0 + 8.0 * s0), (m1 - 8.0 * s1, m1 + 8.0 * s1), 801, |a, b| {
        let mut ll = normal_lpdf(a, 0.0, 9.0) + normal_lpdf(b, 0.0, 9.0);
        for t in 1..x.len() {
            let e = [x[t][0] - a * x[t - 1][0], x[t][1] - b * x[t - 1][1]];
            let mut q = 0.0;
            for u in 0..2 {
                for v in 0..2 {
                    q += e[u] * inv[u][v] * e[v];
                }
            }
            ll -= 0.5 * q;
        }
        ll
    });
    vec![
        one,
        Check::new("delta1 J=2", ks_statistic(&d0, |v| g0.cdf(v)), KS_MAX),
        Check::new("delta2 J=2", ks_statistic(&d1, |v| g1.cdf(v)), KS_MAX),
    ]
}

pub fn var_sigma() -> Vec<Check> {
    let x = var_series(21, 5, &[0.6], &[[0.9, 0.0], [0.0, 0.0]]);
    let delta = 0.45;
    let mut params = VarSiteParams { delta: vec![delta], sigma: DMatrix::from_element(1, 1, 1.0) };
    let mut r = rng(22);
    let draws: Vec<f64> = (0..N)
        .map(|_| {
            var_gibbs_update_sigma(&mut params, &x, &mut r).unwrap();
            params.sigma[(0, 0)].ln()
        })
        .collect();
    // Innovations include the first row; the prior IW(1, 1) is IG(1/2, 1/2).
    let ss: f64 = (0..x.len())
        .map(|t| if t == 0 { x[0][0] } else { x[t][0] - delta * x[t - 1][0] })
        .map(|e| e * e)
        .sum();
    let grid = GridCdf::from_log_density(-10.0, 8.0, 20_001, |u| {
        let s2 = u.exp();
        -0.5 * x.len() as f64 * s2.ln() - ss / (2.0 * s2) + inv_gamma_lpdf(s2, 0.5, 0.5) + u
    });
    let one = Check::new("Sigma J=1", ks_statistic(&draws, |v| grid.cdf(v)), KS_MAX);

    let x = var_series(23, 5, &[0.5, -0.3], &[[1.0, 0.0], [0.4, 0.8]]);
    let delta = [0.4, -0.2];
    let mut params = VarSiteParams { delta: delta.to_vec(), sigma: DMatrix::identity(2, 2) };
    let draws: Vec<f64> = (0..N)
        .map(|_| {
            var_gibbs_update_sigma(&mut params, &x, &mut r).unwrap();
            params.sigma[(0, 0)]
        })
        .collect();
    let mut psi11 = 1.0;
    for t in 0..x.len() {
        let e = if t == 0 { x[0][0] } else { x[t][0] - delta[0] * x[t - 1][0] };
        psi11 += e * e;
    }
    // The (1,1) block of IW(nu, Psi) in dimension 2 is IG((nu - 1)/2, psi11/2).
    let nu = 2.0 + x.len() as f64;
    let (df, scale) = iw_conditional(&var_residuals(&x, &delta), 2);
    let ks = ks_statistic(&draws, |v| inv_gamma_cdf(v, (nu - 1.0) / 2.0, psi11 / 2.0));
    let consistent = df == nu && (scale[(0, 0)] - psi11).abs() < 1e-12;
    vec![one, Check::new("Sigma11 J=2", if consistent { ks } else { f64::INFINITY }, KS_MAX)]
}

/// Everything an exact or grid oracle covers, except the `gamma` random walk.
pub fn all_gibbs() -> Vec<Check> {
    [latent, beta, rho, sigma2, hypervariance, icar_beta, var_delta, var_sigma]
        .into_iter()
        .flat_map(|f| f())
        .collect()
}
