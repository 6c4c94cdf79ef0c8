//! Forward simulation of the full generative model on a lattice, used for
//! tests, benchmarks and the `simulate` command.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariate::{fourier_row, N_FOURIER};
use crate::dist::{gaussian_from_precision, inverse_logit, logit, std_normal};
use crate::error::{invalid, Result};
use crate::io::ingest::Standardization;
use crate::io::tables::{write_data_csv, write_sites_csv};
use crate::io::Provenance;
use crate::lattice::{GridCell, LatticeGraph};
use crate::model::{dot, Cutoffs, SitePanel};
use crate::stage1::splitmix64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub weeks: usize,
    pub n_cov: usize,
    /// Highest ordinal level `J`.
    pub levels: usize,
    /// Lattice mean of each coefficient field, intercept first.
    pub beta_mean: Vec<f64>,
    /// Conditional variance scale of the coefficient fields.
    pub beta_field_var: f64,
    /// Lattice mean of `rho`; the `gamma` field is centred at its logit.
    pub rho_mean: f64,
    pub gamma_field_var: f64,
    /// `sigma2` of each site is uniform on this range.
    pub sigma2_range: (f64, f64),
    /// Diagonal added to `D - A` so the truth fields are proper.
    pub ridge: f64,
    /// Mean VAR coefficient; each site and covariate is jittered by up to
    /// `delta_jitter`.
    pub delta: f64,
    pub delta_jitter: f64,
    pub innovation_sd: f64,
    pub innovation_corr: f64,
    pub seasonal_amplitude: f64,
    /// Weeks used for covariate standardization; all weeks when `None`.
    pub train_weeks: Option<usize>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            weeks: 100,
            n_cov: 1,
            levels: 5,
            beta_mean: vec![2.0, 0.8],
            beta_field_var: 0.1,
            rho_mean: 0.8,
            gamma_field_var: 0.1,
            sigma2_range: (0.3, 0.6),
            ridge: 0.01,
            delta: 0.6,
            delta_jitter: 0.1,
            innovation_sd: 1.0,
            innovation_corr: 0.3,
            seasonal_amplitude: 1.0,
            train_weeks: None,
        }
    }
}

impl SyntheticSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| crate::error::Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.sigma2_range;
        if self.weeks == 0 {
            return Err(invalid("synthetic data needs at least one week"));
        }
        if self.beta_mean.len() != self.n_cov + 1 {
            return Err(invalid(format!("beta_mean needs {} entries", self.n_cov + 1)));
        }
        if !(self.rho_mean > 0.0 && self.rho_mean < 1.0) {
            return Err(invalid("rho_mean must lie in (0, 1)"));
        }
        if !(lo > 0.0 && hi >= lo) {
            return Err(invalid("sigma2_range must be positive and ordered"));
        }
        if self.beta_field_var < 0.0 || self.gamma_field_var < 0.0 || self.ridge <= 0.0 {
            return Err(invalid("field variances must be non-negative and ridge positive"));
        }
        if self.innovation_sd < 0.0 || self.innovation_corr.abs() >= 1.0 {
            return Err(invalid("innovation sd must be non-negative and |corr| < 1"));
        }
        if let Some(t) = self.train_weeks {
            if t == 0 || t > self.weeks {
                return Err(invalid("train_weeks must be in 1..=weeks"));
            }
        }
        Cutoffs::new(self.levels)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSite {
    pub site_id: u32,
    pub beta: Vec<f64>,
    pub gamma: f64,
    pub rho: f64,
    pub sigma2: f64,
    pub z: Vec<f64>,
    pub delta: Vec<f64>,
    /// Row-major `J x J` innovation covariance of the raw covariates.
    pub var_sigma: Vec<f64>,
    pub zeta: Vec<[f64; N_FOURIER]>,
}

/// Every latent quantity behind a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub spec: SyntheticSpec,
    pub seed: u64,
    pub sites: Vec<TruthSite>,
    /// The regression acts on covariates standardized with these constants.
    pub standardization: Standardization,
    pub note: String,
}

impl Truth {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub cells: Vec<GridCell>,
    pub y: Vec<Vec<u8>>,
    /// Raw covariates `[site][week][j]`, as written to the data file.
    pub raw: Vec<Vec<Vec<f64>>>,
    /// Standardized covariates the latent process was driven by.
    pub standardized: Vec<Vec<Vec<f64>>>,
    pub truth: Truth,
}

impl SyntheticDataset {
    pub fn cutoffs(&self) -> Cutoffs {
        Cutoffs::new(self.truth.spec.levels).expect("validated spec")
    }

    /// Panels over the first `weeks` weeks.
    pub fn panels(&self, weeks: usize) -> Result<Vec<SitePanel>> {
        self.y
            .iter()
            .zip(&self.standardized)
            .map(|(y, x)| SitePanel::new(y[..weeks].to_vec(), &x[..weeks], self.cutoffs()))
            .collect()
    }

    /// Write `data.csv`, `sites.csv` and `truth.json` into `dir`.
    pub fn write(&self, dir: &Path, prov: &Provenance) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_data_csv(&dir.join("data.csv"), &self.y, &self.raw, prov)?;
        write_sites_csv(&dir.join("sites.csv"), &self.cells, prov)?;
        let mut text = self.truth.to_json()?;
        text.push('\n');
        std::fs::write(dir.join("truth.json"), text)?;
        Ok(())
    }
}

/// Proper CAR draw with precision `(D - A + ridge I) / var`, centred and
/// shifted to `level`.
pub fn car_field<R: Rng + ?Sized>(graph: &LatticeGraph, var: f64, ridge: f64, level: f64, rng: &mut R) -> Result<Vec<f64>> {
    let n = graph.n_sites();
    if var == 0.0 {
        return Ok(vec![level; n]);
    }
    let mut q = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        q[(i, i)] = (graph.degree(i) as f64 + ridge) / var;
        for &j in graph.neighbors(i) {
            q[(i, j)] = -1.0 / var;
        }
    }
    let draw = gaussian_from_precision(rng, &q, &DVector::zeros(n))?;
    let mean = draw.mean();
    Ok(draw.iter().map(|v| v - mean + level).collect())
}

fn stream(seed: u64, site_id: u32, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ splitmix64(0x5EED_0000 + site_id as u64));
    rng.set_stream(stream);
    rng
}

struct RawSite {
    zeta: Vec<[f64; N_FOURIER]>,
    delta: Vec<f64>,
    sigma: DMatrix<f64>,
    series: Vec<Vec<f64>>,
}

fn simulate_covariates(spec: &SyntheticSpec, seed: u64, site_id: u32) -> RawSite {
    let mut rng = stream(seed, site_id, 1);
    let j = spec.n_cov;
    let zeta: Vec<[f64; N_FOURIER]> = (0..j)
        .map(|_| {
            let mut z = [0.0; N_FOURIER];
            z[0] = 0.5 * std_normal(&mut rng);
            z[1] = spec.seasonal_amplitude * rng.random_range(0.5..1.5);
            z[1 + crate::covariate::N_HARMONICS] = spec.seasonal_amplitude * rng.random_range(-0.5..0.5);
            z[2] = 0.2 * spec.seasonal_amplitude * std_normal(&mut rng);
            z
        })
        .collect();
    let delta: Vec<f64> = (0..j)
        .map(|_| spec.delta + spec.delta_jitter * rng.random_range(-1.0..1.0))
        .collect();
    let s2 = spec.innovation_sd * spec.innovation_sd;
    let sigma = DMatrix::from_fn(j, j, |a, b| if a == b { s2 } else { s2 * spec.innovation_corr });
    let chol = sigma.clone().cholesky().map(|c| c.l());
    let mut prev = vec![0.0; j];
    let mut series = Vec::with_capacity(spec.weeks);
    for t in 1..=spec.weeks {
        let eps = DVector::from_fn(j, |_, _| std_normal(&mut rng));
        let shock = chol.as_ref().map_or(DVector::zeros(j), |l| l * eps);
        let detrended: Vec<f64> = (0..j)
            .map(|k| if t == 1 { shock[k] } else { delta[k] * prev[k] + shock[k] })
            .collect();
        let row = fourier_row(t as f64);
        series.push(
            (0..j)
                .map(|k| detrended[k] + row.iter().zip(&zeta[k]).map(|(a, b)| a * b).sum::<f64>())
                .collect(),
        );
        prev = detrended;
    }
    RawSite { zeta, delta, sigma, series }
}

/// Simulate a dataset on `graph`. Sites use their own RNG streams, so the
/// result depends only on `spec`, `graph` and `seed`.
pub fn simulate_dataset(graph: &LatticeGraph, cells: &[GridCell], spec: &SyntheticSpec, seed: u64) -> Result<SyntheticDataset> {
    spec.validate()?;
    let n = graph.n_sites();
    if cells.len() != n {
        return Err(invalid("cell list does not match the lattice"));
    }
    let cutoffs = Cutoffs::new(spec.levels)?;
    let mut field_rng = ChaCha8Rng::seed_from_u64(seed);
    let beta_fields: Vec<Vec<f64>> = spec
        .beta_mean
        .iter()
        .map(|&m| car_field(graph, spec.beta_field_var, spec.ridge, m, &mut field_rng))
        .collect::<Result<_>>()?;
    let gamma_field = car_field(graph, spec.gamma_field_var, spec.ridge, logit(spec.rho_mean)?, &mut field_rng)?;

    let raw_sites: Vec<RawSite> = (0..n)
        .into_par_iter()
        .map(|i| simulate_covariates(spec, seed, i as u32 + 1))
        .collect();
    let raw: Vec<Vec<Vec<f64>>> = raw_sites.iter().map(|s| s.series.clone()).collect();
    let train = spec.train_weeks.unwrap_or(spec.weeks);
    let standardization = if spec.n_cov == 0 {
        Standardization { mean: vec![], sd: vec![], train_weeks: train }
    } else {
        Standardization::fit(&raw, train)?
    };
    let standardized: Vec<Vec<Vec<f64>>> = raw
        .iter()
        .map(|s| s.iter().map(|r| standardization.apply(r)).collect())
        .collect();

    let latent: Vec<(f64, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, i as u32 + 1, 2);
            let (lo, hi) = spec.sigma2_range;
            let sigma2 = if hi > lo { rng.random_range(lo..hi) } else { lo };
            let beta: Vec<f64> = beta_fields.iter().map(|f| f[i]).collect();
            let rho = inverse_logit(gamma_field[i]);
            let sd = sigma2.sqrt();
            let mut z = Vec::with_capacity(spec.weeks);
            let mut prev_mean = 0.0;
            for t in 0..spec.weeks {
                let x: Vec<f64> = std::iter::once(1.0).chain(standardized[i][t].iter().copied()).collect();
                let mean = dot(&x, &beta);
                let carry = if t == 0 { 0.0 } else { rho * (z[t - 1] - prev_mean) };
                z.push(mean + carry + sd * std_normal(&mut rng));
                prev_mean = mean;
            }
            (sigma2, z)
        })
        .collect();

    let mut sites = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for (i, ((sigma2, z), rs)) in latent.into_iter().zip(raw_sites).enumerate() {
        y.push(z.iter().map(|&v| cutoffs.ordinal_from_latent(v)).collect());
        sites.push(TruthSite {
            site_id: i as u32 + 1,
            beta: beta_fields.iter().map(|f| f[i]).collect(),
            gamma: gamma_field[i],
            rho: inverse_logit(gamma_field[i]),
            sigma2,
            z,
            delta: rs.delta,
            var_sigma: rs.sigma.transpose().as_slice().to_vec(),
            zeta: rs.zeta,
        });
    }
    Ok(SyntheticDataset {
        cells: cells.to_vec(),
        y,
        raw,
        standardized,
        truth: Truth {
            spec: spec.clone(),
            seed,
            sites,
            standardization,
            note: format!(
                "spatial fields drawn from a proper CAR with precision (D - A + {} I) / variance, then centred and shifted to their lattice means",
                spec.ridge
            ),
        },
    })
}

/// Simulate on a regular `rows x cols` grid.
pub fn simulate_grid(rows: usize, cols: usize, spec: &SyntheticSpec, seed: u64) -> Result<(LatticeGraph, SyntheticDataset)> {
    let cells = GridCell::regular(rows, cols);
    let graph = crate::lattice::build_queen_adjacency(&cells)?;
    let data = simulate_dataset(&graph, &cells, spec, seed)?;
    Ok((graph, data))
}
