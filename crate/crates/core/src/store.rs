//! In-memory posterior draw stores.

use serde::{Deserialize, Serialize};

use crate::model::HyperParams;
use crate::stage1::Reservoir;
use crate::stage2::FullModelState;

/// Retained draws of the full model: per-site records (same layout as a
/// stage-one reservoir) and the ICAR variances of each retained iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawStore {
    pub sites: Vec<Reservoir>,
    pub hyper: Vec<HyperParams>,
}

impl DrawStore {
    pub fn new(n_sites: usize) -> Self {
        DrawStore {
            sites: (0..n_sites)
                .map(|i| Reservoir { site_id: i as u32 + 1, draws: Vec::new() })
                .collect(),
            hyper: Vec::new(),
        }
    }

    pub fn push(&mut self, state: &FullModelState) {
        for (site, params) in self.sites.iter_mut().zip(&state.sites) {
            site.draws.push(params.clone());
        }
        self.hyper.push(state.hyper.clone());
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn n_draws(&self) -> usize {
        self.sites.first().map_or(0, |s| s.draws.len())
    }
}
