//! Single-stage Metropolis-within-Gibbs sampler of the full spatial
//! posterior. Only practical at desk scale; it serves as the reference that
//! the two-stage pipeline is checked against.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dist::normal_log_pdf;
use crate::error::{Error, Result};
use crate::lattice::LatticeGraph;
use crate::model::{ar1_log_density, HyperParams, SitePanel, SiteParams, Stage1Prior};
use crate::stage1::{gibbs_update_beta_with_prior, gibbs_update_sigma2, gibbs_update_z, ChainConfig};
use crate::stage2::{update_hyperparams, AcceptanceStats, FullModelState};
use crate::store::DrawStore;

/// Largest `I * T` accepted without `force`.
pub const SIZE_GUARD: usize = 1_000_000;

const ADAPT_BATCH: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingleStageConfig {
    pub chain: ChainConfig,
    /// Initial random-walk step on `gamma`.
    pub initial_step: f64,
    /// Acceptance rate the step is tuned towards during burn-in.
    pub target_acceptance: f64,
    pub force: bool,
}

impl SingleStageConfig {
    pub fn new(chain: ChainConfig) -> Self {
        SingleStageConfig {
            chain,
            initial_step: 0.5,
            target_acceptance: 0.4,
            force: false,
        }
    }
}

/// Conjugate `beta_i` draw whose prior is the ICAR conditional of each
/// coefficient field.
pub fn gibbs_update_beta_icar<R: Rng + ?Sized>(
    i: usize,
    state: &mut FullModelState,
    panel: &SitePanel,
    graph: &LatticeGraph,
    rng: &mut R,
) -> Result<()> {
    let degree = graph.degree(i) as f64;
    let n_coef = state.n_coef();
    let mut mean = Vec::with_capacity(n_coef);
    let mut precision = Vec::with_capacity(n_coef);
    for p in 0..n_coef {
        let nb = graph.neighbors(i);
        mean.push(nb.iter().map(|&j| state.sites[j].beta[p]).sum::<f64>() / degree);
        precision.push(degree / state.hyper.sigma2_beta[p]);
    }
    gibbs_update_beta_with_prior(&mut state.sites[i], panel, &mean, &precision, rng)
}

/// Unnormalized log conditional of `gamma_i`: AR(1) likelihood of the latent
/// series times the ICAR conditional.
pub fn gamma_log_target(
    gamma: f64,
    i: usize,
    state: &FullModelState,
    panel: &SitePanel,
    graph: &LatticeGraph,
) -> f64 {
    let site = &state.sites[i];
    let nb = graph.neighbors(i);
    let degree = nb.len() as f64;
    let mean = nb.iter().map(|&j| state.sites[j].gamma).sum::<f64>() / degree;
    ar1_log_density(&site.z, &site.beta, gamma, site.sigma2, panel)
        + normal_log_pdf(gamma, mean, state.hyper.sigma2_gamma / degree)
}

/// Random-walk Metropolis step on `gamma_i`. Returns whether it moved.
pub fn mh_update_gamma_icar<R: Rng + ?Sized>(
    i: usize,
    state: &mut FullModelState,
    panel: &SitePanel,
    graph: &LatticeGraph,
    step: f64,
    rng: &mut R,
) -> bool {
    debug_assert!(step > 0.0);
    let current = state.sites[i].gamma;
    let proposal = current + step * crate::dist::std_normal(rng);
    let log_r = gamma_log_target(proposal, i, state, panel, graph)
        - gamma_log_target(current, i, state, panel, graph);
    let u: f64 = rng.random();
    if log_r >= 0.0 || u.ln() < log_r {
        state.sites[i].gamma = proposal;
        true
    } else {
        false
    }
}

#[derive(Debug, Clone)]
pub struct SingleStageOutput {
    pub store: DrawStore,
    /// Post-burn-in acceptance of the `gamma` random walk per site.
    pub gamma_acceptance: AcceptanceStats,
    /// Step sizes frozen at the end of burn-in.
    pub steps: Vec<f64>,
}

/// Run the single-stage sampler. Each iteration sweeps the sites (latent
/// series, `beta`, `gamma`, `sigma2`) and then redraws the ICAR variances.
pub fn run_single_stage(
    panels: &[SitePanel],
    graph: &LatticeGraph,
    config: &SingleStageConfig,
    prior: &Stage1Prior,
) -> Result<SingleStageOutput> {
    let n = graph.n_sites();
    if panels.len() != n {
        return Err(Error::DimensionMismatch(format!("{} panels for {n} lattice sites", panels.len())));
    }
    let size = panels.iter().map(|p| p.t_len()).sum::<usize>();
    if size > SIZE_GUARD && !config.force {
        return Err(Error::SizeGuard { size, limit: SIZE_GUARD });
    }
    let chain = &config.chain;
    chain.validate()?;
    let n_coef = panels[0].n_coef();
    if panels.iter().any(|p| p.n_coef() != n_coef) {
        return Err(Error::DimensionMismatch("panels disagree on the covariate count".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(chain.seed);
    let mut state = FullModelState {
        sites: panels.iter().map(SiteParams::initial).collect(),
        hyper: HyperParams::constant(n_coef, 1.0),
        iteration: 0,
    };
    let mut steps = vec![config.initial_step; n];
    let mut batch_accepts = vec![0usize; n];
    let mut post = AcceptanceStats::new(n);
    let mut store = DrawStore::new(n);

    for m in 1..=chain.iterations {
        for i in 0..n {
            gibbs_update_z(&mut state.sites[i], &panels[i], &mut rng);
            gibbs_update_beta_icar(i, &mut state, &panels[i], graph, &mut rng)?;
            let moved = mh_update_gamma_icar(i, &mut state, &panels[i], graph, steps[i], &mut rng);
            gibbs_update_sigma2(&mut state.sites[i], &panels[i], prior, &mut rng);
            if m <= chain.burn_in {
                batch_accepts[i] += moved as usize;
            } else {
                post.record(i, moved);
            }
        }
        update_hyperparams(&mut state, graph, &mut rng);
        state.iteration = m;

        if m <= chain.burn_in && m % ADAPT_BATCH == 0 {
            let batch = (m / ADAPT_BATCH) as f64;
            for i in 0..n {
                let rate = batch_accepts[i] as f64 / ADAPT_BATCH as f64;
                steps[i] *= ((rate - config.target_acceptance) / batch.sqrt()).exp();
                batch_accepts[i] = 0;
            }
        }
        if chain.keeps(m) {
            store.push(&state);
        }
    }
    Ok(SingleStageOutput {
        store,
        gamma_acceptance: post,
        steps,
    })
}
