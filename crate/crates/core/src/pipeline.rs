//! End-to-end steps behind the command line: each reads its inputs from the
//! output directory of the previous step and writes its own subdirectory.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::covariate::{
    fit_fourier_detrend, var_stage1_all, var_stage2, FourierFit, VarPrior, VarReservoir, VarStore,
};
use crate::diagnostics::{compare_summaries, summarize_store, summarize_traces, ChainSummary};
use crate::error::{invalid, Error, Result};
use crate::forecast::{forecast_drought, posterior_median_level, rmse, within_one_probability, CovariateSource, ForecastDraws, WithinOne};
use crate::io::binary::{
    read_manifest, read_reservoir_dir, read_var_reservoir_dir, write_reservoir_dir, write_var_reservoir_dir,
};
use crate::io::ingest::{ingest_files, Dataset};
use crate::io::tables::*;
use crate::io::Provenance;
use crate::reference::{run_single_stage, SingleStageConfig};
use crate::stage1::{run_stage1_all, Reservoir};
use crate::stage2::run_stage2;
use crate::store::DrawStore;

pub const STAGE1_DIR: &str = "stage1";
pub const STAGE2_DIR: &str = "stage2";
pub const SINGLE_STAGE_DIR: &str = "single_stage";
pub const COVARIATE_DIR: &str = "covariate";
pub const FORECAST_DIR: &str = "forecast";
pub const TIMING_FILE: &str = "timing.json";
const HYPER_FILE: &str = "hyper.csv";

/// Wall-clock record kept apart from the deterministic outputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_seconds: f64,
    pub workers: usize,
}

fn write_timing(dir: &Path, t: Timing) -> Result<()> {
    std::fs::write(dir.join(TIMING_FILE), serde_json::to_string_pretty(&t)? + "\n")?;
    Ok(())
}

pub fn read_timing(dir: &Path) -> Option<Timing> {
    let text = std::fs::read_to_string(dir.join(TIMING_FILE)).ok()?;
    serde_json::from_str(&text).ok()
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    ingest_files(&cfg.data, &cfg.sites, cfg.cutoffs()?, cfg.train_weeks)
}

fn subdir(cfg: &RunConfig, name: &str) -> Result<PathBuf> {
    let dir = cfg.output.join(name);
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

/// Sites that failed in stage one, with their error codes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedSite {
    pub site_id: u32,
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct Stage1Report {
    pub dir: PathBuf,
    pub failures: Vec<FailedSite>,
    pub wall_seconds: f64,
}

/// Stage one for every site; successful reservoirs are written even when
/// other sites fail.
pub fn stage1_step(cfg: &RunConfig, data: &Dataset, export_csv: bool) -> Result<Stage1Report> {
    cfg.validate()?;
    let panels = data.training_panels()?;
    let prior = cfg.stage1_prior(data.n_cov() + 1);
    let start = Instant::now();
    let outcome = run_stage1_all(&panels, &prior, &cfg.stage1_chain(), cfg.workers)?;
    let wall_seconds = start.elapsed().as_secs_f64();
    let dir = subdir(cfg, STAGE1_DIR)?;
    let prov = cfg.provenance();
    write_reservoir_dir(&dir, &outcome.reservoirs, &prov)?;
    if export_csv {
        write_reservoir_csv(&dir.join("reservoirs.csv"), &outcome.reservoirs, &prov)?;
    }
    let failures: Vec<FailedSite> = outcome
        .failures
        .iter()
        .map(|f| FailedSite { site_id: f.site_id, code: f.error.code().into(), message: f.error.to_string() })
        .collect();
    let mut w = crate::io::create_csv(&dir.join("failures.csv"), &prov)?;
    w.write_record(["site_id", "code", "message"])?;
    for f in &failures {
        w.write_record([f.site_id.to_string(), f.code.clone(), f.message.clone()])?;
    }
    w.flush()?;
    write_timing(&dir, Timing { wall_seconds, workers: cfg.workers })?;
    Ok(Stage1Report { dir, failures, wall_seconds })
}

/// Read a directory of `TSR1` files and its hyperparameter table, if any.
pub fn load_store(dir: &Path) -> Result<DrawStore> {
    let sites = read_reservoir_dir(dir)?;
    let hyper_path = dir.join(HYPER_FILE);
    let hyper = if hyper_path.exists() { read_hyper_csv(&hyper_path)? } else { Vec::new() };
    Ok(DrawStore { sites, hyper })
}

#[derive(Debug, Clone)]
pub struct Stage2Report {
    pub dir: PathBuf,
    pub low_acceptance: Vec<u32>,
    pub wall_seconds: f64,
}

pub fn stage2_step(cfg: &RunConfig, data: &Dataset) -> Result<Stage2Report> {
    cfg.validate()?;
    let reservoirs: Vec<Reservoir> = read_reservoir_dir(&cfg.output.join(STAGE1_DIR))?;
    let prior = cfg.stage1_prior(data.n_cov() + 1);
    let config = cfg.stage2_config();
    let start = Instant::now();
    let out = run_stage2(&reservoirs, &data.graph, &config, &prior)?;
    let wall_seconds = start.elapsed().as_secs_f64();
    let dir = subdir(cfg, STAGE2_DIR)?;
    let prov = cfg.provenance();
    write_reservoir_dir(&dir, &out.store.sites, &prov)?;
    write_hyper_csv(&dir.join(HYPER_FILE), &out.store.hyper, &config.chain, &prov)?;
    write_acceptance_csv(&dir.join("acceptance.csv"), &out.stats, &prov)?;
    write_timing(&dir, Timing { wall_seconds, workers: 1 })?;
    Ok(Stage2Report { dir, low_acceptance: out.low_acceptance, wall_seconds })
}

pub fn single_stage_step(cfg: &RunConfig, data: &Dataset, force: bool) -> Result<PathBuf> {
    cfg.validate()?;
    let panels = data.training_panels()?;
    let prior = cfg.stage1_prior(data.n_cov() + 1);
    let config = SingleStageConfig { force, ..SingleStageConfig::new(cfg.single_stage_chain()) };
    let start = Instant::now();
    let out = run_single_stage(&panels, &data.graph, &config, &prior)?;
    let wall_seconds = start.elapsed().as_secs_f64();
    let dir = subdir(cfg, SINGLE_STAGE_DIR)?;
    let prov = cfg.provenance();
    write_reservoir_dir(&dir, &out.store.sites, &prov)?;
    write_hyper_csv(&dir.join(HYPER_FILE), &out.store.hyper, &config.chain, &prov)?;
    write_acceptance_csv(&dir.join("gamma_acceptance.csv"), &out.gamma_acceptance, &prov)?;
    write_timing(&dir, Timing { wall_seconds, workers: 1 })?;
    Ok(dir)
}

/// Fourier fits and detrended training covariates of every site.
pub fn detrend_sites(data: &Dataset) -> Result<(Vec<FourierFit>, Vec<Vec<Vec<f64>>>)> {
    data.training_covariates()
        .iter()
        .map(|x| fit_fourier_detrend(x))
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().unzip())
}

pub fn covfit_step(cfg: &RunConfig, data: &Dataset) -> Result<PathBuf> {
    cfg.validate()?;
    if data.n_cov() == 0 {
        return Err(invalid("covariate model needs at least one covariate"));
    }
    let (fits, detrended) = detrend_sites(data)?;
    let prior = VarPrior { delta_sd: cfg.prior.delta_sd };
    let start = Instant::now();
    let s1 = var_stage1_all(&detrended, &prior, &cfg.covariate_stage1_chain(), cfg.workers)?;
    if let Some((site, e)) = s1.failures.first() {
        return Err(invalid(format!("covariate stage one failed at site {site}: {e}")));
    }
    let config = cfg.covariate_stage2_config();
    let s2 = var_stage2(&s1.reservoirs, &data.graph, &config, &prior)?;
    let wall_seconds = start.elapsed().as_secs_f64();

    let dir = subdir(cfg, COVARIATE_DIR)?;
    let prov = cfg.provenance();
    write_fourier_csv(&dir.join("fourier.csv"), &fits, &prov)?;
    write_var_reservoir_dir(&dir.join(STAGE1_DIR), &s1.reservoirs, &prov)?;
    let s2_dir = dir.join(STAGE2_DIR);
    write_var_reservoir_dir(&s2_dir, &s2.store.sites, &prov)?;
    write_var_hyper_csv(&s2_dir.join(HYPER_FILE), &s2.store.hyper, &config.chain, &prov)?;
    write_acceptance_csv(&s2_dir.join("acceptance.csv"), &s2.stats, &prov)?;
    write_timing(&dir, Timing { wall_seconds, workers: cfg.workers })?;
    Ok(dir)
}

fn truncate_store(store: &mut DrawStore, n: usize) {
    for s in &mut store.sites {
        s.draws.truncate(n);
    }
    store.hyper.truncate(n);
}

#[derive(Debug, Clone)]
pub struct ForecastReport {
    pub dir: PathBuf,
    pub draws: ForecastDraws,
    pub within_one: Option<WithinOne>,
}

/// Joint posterior-predictive simulation from the stage-two store and the
/// covariate store. With `draws`, both stores are cut to their first
/// `draws` records; otherwise their sizes must agree.
pub fn forecast_step(cfg: &RunConfig, data: &Dataset, horizon: usize, draws: Option<usize>) -> Result<ForecastReport> {
    cfg.validate()?;
    if horizon == 0 {
        return Err(invalid("forecast horizon must be at least 1"));
    }
    let holdout_len = data.weeks - data.train_weeks();
    if holdout_len > 0 && horizon > holdout_len {
        return Err(invalid(format!("horizon {horizon} exceeds the {holdout_len} holdout weeks")));
    }
    let mut store = load_store(&cfg.output.join(STAGE2_DIR))?;
    let var_sites = read_var_reservoir_dir(&cfg.output.join(COVARIATE_DIR).join(STAGE2_DIR))?;
    let mut var = VarStore { sites: var_sites, hyper: Vec::new() };
    if let Some(n) = draws {
        if n == 0 || n > store.n_draws() || n > var.n_draws() {
            return Err(invalid(format!(
                "--draws {n} must be in 1..={}",
                store.n_draws().min(var.n_draws())
            )));
        }
        truncate_store(&mut store, n);
        for s in &mut var.sites {
            s.draws.truncate(n);
        }
    }
    let (fits, detrended) = detrend_sites(data)?;
    let last: Vec<Vec<f64>> = detrended.iter().map(|d| d.last().cloned().unwrap_or_default()).collect();
    let panels = data.training_panels()?;
    let source = CovariateSource::Var { store: &var, fits: &fits, last_detrended: &last, t_end: data.train_weeks() };
    let f = forecast_drought(&store, &panels, source, horizon, cfg.forecast_seed(), cfg.workers)?;

    let dir = subdir(cfg, FORECAST_DIR)?;
    let prov = cfg.provenance();
    write_forecast_csv(&dir.join("forecast.csv"), &f, &prov)?;
    let within_one = if holdout_len > 0 {
        let holdout: Vec<Vec<u8>> = data.holdout_levels().into_iter().map(|h| h[..horizon].to_vec()).collect();
        let w1 = within_one_probability(&f, &holdout)?;
        let medians: Vec<Vec<f64>> = (0..f.n_sites)
            .map(|i| (0..horizon).map(|h| posterior_median_level(&f, i, h).map(f64::from)).collect())
            .collect::<Result<_>>()?;
        let truth: Vec<Vec<f64>> = holdout.iter().map(|h| h.iter().map(|&v| v as f64).collect()).collect();
        let level_rmse = rmse(&medians, &truth)?;
        write_site_metrics_csv(&dir.join("metrics_site.csv"), &w1, &prov)?;
        write_horizon_metrics_csv(&dir.join("metrics_horizon.csv"), &w1, &level_rmse, &prov)?;

        let mean_x = f.mean_covariates();
        let held_x = data.holdout_covariates();
        let cov_rmse: Vec<Vec<f64>> = (0..f.n_cov)
            .map(|j| {
                let fc: Vec<Vec<f64>> = mean_x.iter().map(|s| s.iter().map(|r| r[j]).collect()).collect();
                let obs: Vec<Vec<f64>> = held_x.iter().map(|s| s[..horizon].iter().map(|r| r[j]).collect()).collect();
                rmse(&fc, &obs)
            })
            .collect::<Result<_>>()?;
        write_covariate_rmse_csv(&dir.join("covariate_rmse.csv"), &cov_rmse, &prov)?;
        Some(w1)
    } else {
        None
    };
    Ok(ForecastReport { dir, draws: f, within_one })
}

/// Named traces of a VAR store: `delta_j` and the lower triangle of `Sigma`.
pub fn var_store_traces(sites: &[VarReservoir], hyper: &[Vec<f64>]) -> Vec<(u32, String, Vec<f64>)> {
    let mut out = Vec::new();
    for s in sites {
        let j = s.n_cov();
        for k in 0..j {
            out.push((s.site_id, format!("delta{}", k + 1), s.draws.iter().map(|d| d.delta[k]).collect()));
        }
        for a in 0..j {
            for b in 0..=a {
                out.push((s.site_id, format!("sigma{}{}", a + 1, b + 1), s.draws.iter().map(|d| d.sigma[(a, b)]).collect()));
            }
        }
    }
    if let Some(first) = hyper.first() {
        for k in 0..first.len() {
            out.push((0, format!("sigma2_delta{}", k + 1), hyper.iter().map(|h| h[k]).collect()));
        }
    }
    out
}

/// Summarize a store directory of either binary format.
pub fn summarize_dir(dir: &Path) -> Result<ChainSummary> {
    let manifest = read_manifest(dir)?;
    let wall = read_timing(dir).or_else(|| dir.parent().and_then(read_timing)).map(|t| t.wall_seconds);
    match manifest.format.as_str() {
        "TSR1" => summarize_store(&load_store(dir)?, wall),
        "TVR1" => {
            let sites = read_var_reservoir_dir(dir)?;
            if sites.first().map_or(true, |s| s.draws.is_empty()) {
                return Err(invalid("cannot summarize an empty store"));
            }
            summarize_traces(&var_store_traces(&sites, &[]), wall)
        }
        other => Err(Error::Format(format!("unknown store format {other}"))),
    }
}

/// Write `summary.csv` and `ess_classes.csv` for `store`, and
/// `comparison.csv` when a second store is given. Outputs go to `out`.
pub fn diagnose_step(store: &Path, compare: Option<&Path>, out: &Path) -> Result<ChainSummary> {
    let summary = summarize_dir(store)?;
    let manifest = read_manifest(store)?;
    let prov = Provenance { config_hash: manifest.config_hash, seed: manifest.seed };
    std::fs::create_dir_all(out)?;
    write_summary_csv(&out.join("summary.csv"), &summary, &prov)?;
    write_ess_classes_csv(&out.join("ess_classes.csv"), &summary, &prov)?;
    if let Some(other) = compare {
        let b = summarize_dir(other)?;
        write_comparison_csv(&out.join("comparison.csv"), &compare_summaries(&summary, &b), &prov)?;
    }
    Ok(summary)
}
