//! Stage two: Metropolis-within-Gibbs for the full spatial model.
//!
//! Each iteration first redraws the ICAR variances, then visits the sites in
//! turn and proposes a whole stage-one record `(z, beta, gamma, sigma2)` from
//! the site's reservoir. Because the proposal density is the stage-one
//! posterior, the likelihood and latent-process terms cancel and the
//! acceptance ratio only involves the ICAR conditionals and the stage-one
//! priors of `beta` and `gamma`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dist::inverse_gamma;
use crate::error::{Error, Result};
use crate::lattice::LatticeGraph;
use crate::model::{stage1_log_prior_beta_gamma, HyperParams, SiteParams, Stage1Prior};
use crate::stage1::{ChainConfig, Reservoir};
use crate::store::DrawStore;

/// Inverse gamma prior `(shape, scale)` of every ICAR variance.
pub const HYPER_PRIOR: (f64, f64) = (0.5, 0.5);

/// Sites with a post-burn-in acceptance rate under this trigger a warning.
pub const LOW_ACCEPTANCE: f64 = 0.01;

/// Current values of all site parameters and ICAR variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullModelState {
    pub sites: Vec<SiteParams>,
    pub hyper: HyperParams,
    pub iteration: usize,
}

impl FullModelState {
    pub fn gamma_field(&self) -> Vec<f64> {
        self.sites.iter().map(|s| s.gamma).collect()
    }

    pub fn beta_field(&self, p: usize) -> Vec<f64> {
        self.sites.iter().map(|s| s.beta[p]).collect()
    }

    pub fn n_coef(&self) -> usize {
        self.hyper.sigma2_beta.len()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptanceStats {
    pub proposed: Vec<u64>,
    pub accepted: Vec<u64>,
}

impl AcceptanceStats {
    pub fn new(n_sites: usize) -> Self {
        AcceptanceStats {
            proposed: vec![0; n_sites],
            accepted: vec![0; n_sites],
        }
    }

    pub fn record(&mut self, i: usize, accepted: bool) {
        self.proposed[i] += 1;
        self.accepted[i] += accepted as u64;
    }

    pub fn rate(&self, i: usize) -> f64 {
        if self.proposed[i] == 0 {
            0.0
        } else {
            self.accepted[i] as f64 / self.proposed[i] as f64
        }
    }
}

/// Shape and scale of the inverse gamma conditional of an ICAR variance.
pub fn hypervariance_conditional(field: &[f64], graph: &LatticeGraph, prior: (f64, f64)) -> (f64, f64) {
    (
        prior.0 + 0.5 * graph.n_sites() as f64,
        prior.1 + 0.5 * graph.pairwise_sq_diff(field),
    )
}

pub fn gibbs_update_hypervariance<R: Rng + ?Sized>(
    field: &[f64],
    graph: &LatticeGraph,
    prior: (f64, f64),
    rng: &mut R,
) -> f64 {
    let (shape, scale) = hypervariance_conditional(field, graph, prior);
    inverse_gamma(rng, shape, scale)
}

/// Redraw `sigma2_gamma` and every `sigma2_(p)` from their conditionals.
pub fn update_hyperparams<R: Rng + ?Sized>(state: &mut FullModelState, graph: &LatticeGraph, rng: &mut R) {
    state.hyper.sigma2_gamma = gibbs_update_hypervariance(&state.gamma_field(), graph, HYPER_PRIOR, rng);
    for p in 0..state.n_coef() {
        state.hyper.sigma2_beta[p] = gibbs_update_hypervariance(&state.beta_field(p), graph, HYPER_PRIOR, rng);
    }
}

fn neighbor_mean(graph: &LatticeGraph, i: usize, value: impl Fn(usize) -> f64) -> f64 {
    let nb = graph.neighbors(i);
    nb.iter().map(|&j| value(j)).sum::<f64>() / nb.len() as f64
}

/// Log of the ICAR conditional priors of `(beta, gamma)` for site `i`, taking
/// neighbor values from `state`.
pub fn icar_log_prior_site(
    candidate: &SiteParams,
    i: usize,
    state: &FullModelState,
    graph: &LatticeGraph,
) -> f64 {
    let degree = graph.degree(i) as f64;
    let gamma_mean = neighbor_mean(graph, i, |j| state.sites[j].gamma);
    let mut total =
        crate::dist::normal_log_pdf(candidate.gamma, gamma_mean, state.hyper.sigma2_gamma / degree);
    for (p, &s2) in state.hyper.sigma2_beta.iter().enumerate() {
        let mean = neighbor_mean(graph, i, |j| state.sites[j].beta[p]);
        total += crate::dist::normal_log_pdf(candidate.beta[p], mean, s2 / degree);
    }
    total
}

/// Log acceptance ratio of replacing `current` with `proposed` at site `i`:
/// ICAR conditionals at the proposal over those at the current value, times
/// the stage-one priors at the current value over those at the proposal.
pub fn log_acceptance_ratio(
    proposed: &SiteParams,
    current: &SiteParams,
    i: usize,
    state: &FullModelState,
    graph: &LatticeGraph,
    prior: &Stage1Prior,
) -> f64 {
    icar_log_prior_site(proposed, i, state, graph) - icar_log_prior_site(current, i, state, graph)
        + stage1_log_prior_beta_gamma(&current.beta, current.gamma, prior)
        - stage1_log_prior_beta_gamma(&proposed.beta, proposed.gamma, prior)
}

/// Independence Metropolis-Hastings step for site `i`. Draws a record
/// uniformly with replacement from the reservoir and swaps it in whole on
/// acceptance. Returns the drawn index and whether it was accepted.
pub fn mh_update_site<R: Rng + ?Sized>(
    i: usize,
    state: &mut FullModelState,
    reservoir: &Reservoir,
    graph: &LatticeGraph,
    prior: &Stage1Prior,
    rng: &mut R,
) -> Result<(usize, bool)> {
    if reservoir.draws.is_empty() {
        return Err(Error::EmptyReservoir(reservoir.site_id));
    }
    let k = rng.random_range(0..reservoir.draws.len());
    let proposed = &reservoir.draws[k];
    let log_r = log_acceptance_ratio(proposed, &state.sites[i], i, state, graph, prior);
    let u: f64 = rng.random();
    let accept = log_r >= 0.0 || u.ln() < log_r;
    if accept {
        state.sites[i].clone_from(proposed);
    }
    Ok((k, accept))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage2Config {
    pub chain: ChainConfig,
    /// Visit sites in a fresh random order each iteration instead of
    /// ascending id.
    #[serde(default)]
    pub randomized_scan: bool,
}

#[derive(Debug, Clone)]
pub struct Stage2Output {
    pub store: DrawStore,
    /// Reservoir index held by each site at each retained draw.
    pub indices: Vec<Vec<u32>>,
    pub stats: AcceptanceStats,
    pub post_burn_in: AcceptanceStats,
    /// Sites whose post-burn-in acceptance rate fell below [`LOW_ACCEPTANCE`].
    pub low_acceptance: Vec<u32>,
    pub final_state: FullModelState,
}

fn check_reservoirs(reservoirs: &[Reservoir], graph: &LatticeGraph) -> Result<()> {
    if reservoirs.len() != graph.n_sites() {
        return Err(Error::DimensionMismatch(format!(
            "{} reservoirs for {} lattice sites",
            reservoirs.len(),
            graph.n_sites()
        )));
    }
    let (t_len, n_coef) = (reservoirs[0].t_len(), reservoirs[0].n_coef());
    for (i, r) in reservoirs.iter().enumerate() {
        if r.site_id as usize != i + 1 {
            return Err(Error::DimensionMismatch(format!(
                "reservoir {} carries site id {}",
                i + 1,
                r.site_id
            )));
        }
        if r.draws.is_empty() {
            return Err(Error::EmptyReservoir(r.site_id));
        }
        if r.n_coef() != n_coef || r.t_len() != t_len {
            return Err(Error::DimensionMismatch(format!(
                "site {} reservoir shape differs from site 1",
                r.site_id
            )));
        }
    }
    Ok(())
}

/// Initial stage-two state: the last record of every reservoir, all ICAR
/// variances at 1.
pub fn initial_state(reservoirs: &[Reservoir]) -> FullModelState {
    let n_coef = reservoirs[0].n_coef();
    FullModelState {
        sites: reservoirs
            .iter()
            .map(|r| r.draws.last().expect("nonempty reservoir").clone())
            .collect(),
        hyper: HyperParams::constant(n_coef, 1.0),
        iteration: 0,
    }
}

/// Run the stage-two sampler.
pub fn run_stage2(
    reservoirs: &[Reservoir],
    graph: &LatticeGraph,
    config: &Stage2Config,
    prior: &Stage1Prior,
) -> Result<Stage2Output> {
    check_reservoirs(reservoirs, graph)?;
    let chain = &config.chain;
    chain.validate()?;
    let n = graph.n_sites();
    let mut rng = ChaCha8Rng::seed_from_u64(chain.seed);
    let mut state = initial_state(reservoirs);
    let mut current: Vec<u32> = reservoirs.iter().map(|r| r.draws.len() as u32 - 1).collect();
    let mut store = DrawStore::new(n);
    let mut indices = Vec::with_capacity(chain.retained());
    let mut stats = AcceptanceStats::new(n);
    let mut post = AcceptanceStats::new(n);
    let mut order: Vec<usize> = (0..n).collect();

    for m in 1..=chain.iterations {
        update_hyperparams(&mut state, graph, &mut rng);
        if config.randomized_scan {
            order.shuffle(&mut rng);
        }
        for &i in &order {
            let (k, accepted) = mh_update_site(i, &mut state, &reservoirs[i], graph, prior, &mut rng)?;
            if accepted {
                current[i] = k as u32;
            }
            stats.record(i, accepted);
            if m > chain.burn_in {
                post.record(i, accepted);
            }
        }
        state.iteration = m;
        if chain.keeps(m) {
            store.push(&state);
            indices.push(current.clone());
        }
    }

    let low_acceptance: Vec<u32> = (0..n)
        .filter(|&i| post.proposed[i] > 0 && post.rate(i) < LOW_ACCEPTANCE)
        .map(|i| i as u32 + 1)
        .collect();
    if !low_acceptance.is_empty() {
        log::warn!(
            "low stage-two acceptance (< {:.0}%) after burn-in at sites {:?}",
            LOW_ACCEPTANCE * 100.0,
            low_acceptance
        );
    }
    Ok(Stage2Output {
        store,
        indices,
        stats,
        post_burn_in: post,
        low_acceptance,
        final_state: state,
    })
}
