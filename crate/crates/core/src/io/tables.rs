//! CSV tables. Every writer starts with the provenance comment line.

use std::path::Path;

use crate::covariate::FourierFit;
use crate::diagnostics::{ChainSummary, ComparisonRow};
use crate::error::{Error, Result};
use crate::forecast::{ForecastDraws, WithinOne};
use crate::io::{create_csv, open_csv, Provenance};
use crate::lattice::GridCell;
use crate::model::HyperParams;
use crate::stage1::{ChainConfig, Reservoir};
use crate::stage2::AcceptanceStats;

fn num(v: f64) -> String {
    format!("{v}")
}

/// One row per draw: `site_id, draw, beta0..betaP, gamma, sigma2, z1..zT`.
pub fn write_reservoir_csv(path: &Path, reservoirs: &[Reservoir], prov: &Provenance) -> Result<()> {
    let mut w = create_csv(path, prov)?;
    let (n_coef, t) = reservoirs.first().map_or((0, 0), |r| (r.n_coef(), r.t_len()));
    let mut header = vec!["site_id".to_string(), "draw".into()];
    header.extend((0..n_coef).map(|p| format!("beta{p}")));
    header.extend(["gamma".into(), "sigma2".into()]);
    header.extend((1..=t).map(|k| format!("z{k}")));
    w.write_record(&header)?;
    for r in reservoirs {
        for (k, d) in r.draws.iter().enumerate() {
            let mut row = vec![r.site_id.to_string(), (k + 1).to_string()];
            row.extend(d.beta.iter().chain([d.gamma, d.sigma2].iter()).chain(&d.z).map(|&v| num(v)));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Iteration numbers of the retained draws of a chain.
pub fn retained_iterations(chain: &ChainConfig) -> impl Iterator<Item = usize> + '_ {
    (1..=chain.iterations).filter(|&m| chain.keeps(m))
}

/// `iteration, sigma2_gamma, sigma2_p0..sigma2_pP`
pub fn write_hyper_csv(path: &Path, hyper: &[HyperParams], chain: &ChainConfig, prov: &Provenance) -> Result<()> {
    let mut w = create_csv(path, prov)?;
    let n_coef = hyper.first().map_or(0, |h| h.sigma2_beta.len());
    let mut header = vec!["iteration".to_string(), "sigma2_gamma".into()];
    header.extend((0..n_coef).map(|p| format!("sigma2_p{p}")));
    w.write_record(&header)?;
    for (h, m) in hyper.iter().zip(retained_iterations(chain)) {
        let mut row = vec![m.to_string(), num(h.sigma2_gamma)];
        row.extend(h.sigma2_beta.iter().map(|&v| num(v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_hyper_csv(path: &Path) -> Result<Vec<HyperParams>> {
    let mut r = open_csv(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let v: Vec<f64> = rec
            .iter()
            .skip(1)
            .map(|s| s.parse().map_err(|_| Error::Format(format!("bad number {s:?} in {}", path.display()))))
            .collect::<Result<_>>()?;
        if v.is_empty() {
            return Err(Error::Format(format!("empty row in {}", path.display())));
        }
        out.push(HyperParams { sigma2_gamma: v[0], sigma2_beta: v[1..].to_vec() });
    }
    Ok(out)
}

/// `iteration, sigma2_delta1..sigma2_deltaJ`
pub fn write_var_hyper_csv(path: &Path, hyper: &[Vec<f64>], chain: &ChainConfig, prov: &Provenance) -> Result<()> {
    let mut w = create_csv(path, prov)?;
    let j = hyper.first().map_or(0, |h| h.len());
    let mut header = vec!["iteration".to_string()];
    header.extend((1..=j).map(|k| format!("sigma2_delta{k}")));
    w.write_record(&header)?;
    for (h, m) in hyper.iter().zip(retained_iterations(chain)) {
        let mut row = vec![m.to_string()];
        row.extend(h.iter().map(|&v| num(v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `site_id, proposed, accepted`
pub fn write_acceptance_csv(path: &Path, stats: &AcceptanceStats, prov: &Provenance) -> Result<()> {
    let mut w = create_csv(path, prov)?;
    w.write_record(["site_id", "proposed", "accepted"])?;
    for (i, (p, a)) in stats.proposed.iter().zip(&stats.accepted).enumerate() {
        w.write_record([(i + 1).to_string(), p.to_string(), a.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `site_id, parameter, mean, sd, ess, mcse, flag`
pub fn write_summary_csv(path: &Path, summary: &ChainSummary, prov: &Provenance) -> Result<()> {
    let mut w = create_csv(path, prov)?;
    w.write_record(["site_id", "parameter", "mean", "sd", "ess", "mcse", "flag"])?;
    for r in &summary.rows {
        w.write_record([
            r.site_id.to_string(),
            r.parameter.clone(),
            num(r.mean),
            num(r.sd),
            num(r.ess),
            num(r.mcse),
            r.flag.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `class, mean_ess, ess_per_hour`
pub fn write_ess_classes_csv(path: &Path, summary: &ChainSummary, prov: &Provenance) -> Result<()> {
    let mut w = create_csv(path, prov)?;
    w.write_record(["class", "mean_ess", "ess_per_hour"])?;
    for c in &summary.classes {
        w.write_record([c.class.clone(), num(c.mean_ess), c.ess_per_hour.map(num).unwrap_or_default()])?;
    }
    w.flush()?;
    Ok(())
}

/// `site_id, parameter, mean_a, mean_b, diff, combined_mcse, within_3mcse`
pub fn write_comparison_csv(path: &Path, rows: &[ComparisonRow], prov: &Provenance) -> Result<()> {
    let mut w = create_csv(path, prov)?;
    w.write_record(["site_id", "parameter", "mean_a", "mean_b", "diff", "combined_mcse", "within_3mcse"])?;
    for r in rows {
        w.write_record([
            r.site_id.to_string(),
            r.parameter.clone(),
            num(r.mean_a),
            num(r.mean_b),
            num(r.diff),
            num(r.combined_mcse),
            r.within(3.0).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `draw, site_id, horizon, z, y` with 1-based draw and horizon.
pub fn write_forecast_csv(path: &Path, f: &ForecastDraws, prov: &Provenance) -> Result<()> {
    let mut w = create_csv(path, prov)?;
    w.write_record(["draw", "site_id", "horizon", "z", "y"])?;
    for m in 0..f.n_draws {
        for i in 0..f.n_sites {
            for h in 0..f.horizon {
                w.write_record([
                    (m + 1).to_string(),
                    (i + 1).to_string(),
                    (h + 1).to_string(),
                    num(f.z_at(m, i, h)),
                    f.y_at(m, i, h).to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// `site_id, horizon, within_one_prob`
pub fn write_site_metrics_csv(path: &Path, w1: &WithinOne, prov: &Provenance) -> Result<()> {
    let mut w = create_csv(path, prov)?;
    w.write_record(["site_id", "horizon", "within_one_prob"])?;
    for (i, site) in w1.per_site.iter().enumerate() {
        for (h, p) in site.iter().enumerate() {
            w.write_record([(i + 1).to_string(), (h + 1).to_string(), num(*p)])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `horizon, mean_within_one_prob, rmse`
pub fn write_horizon_metrics_csv(path: &Path, w1: &WithinOne, rmse: &[f64], prov: &Provenance) -> Result<()> {
    let mut w = create_csv(path, prov)?;
    w.write_record(["horizon", "mean_within_one_prob", "rmse"])?;
    for (h, (p, r)) in w1.mean.iter().zip(rmse).enumerate() {
        w.write_record([(h + 1).to_string(), num(*p), num(*r)])?;
    }
    w.flush()?;
    Ok(())
}

/// `horizon, covariate, rmse` from `rmse[covariate][horizon]`.
pub fn write_covariate_rmse_csv(path: &Path, rmse: &[Vec<f64>], prov: &Provenance) -> Result<()> {
    let mut w = create_csv(path, prov)?;
    w.write_record(["horizon", "covariate", "rmse"])?;
    let horizon = rmse.first().map_or(0, |r| r.len());
    for h in 0..horizon {
        for (j, r) in rmse.iter().enumerate() {
            w.write_record([(h + 1).to_string(), format!("x{}", j + 1), num(r[h])])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `site_id, covariate, zeta_0..zeta_10`
pub fn write_fourier_csv(path: &Path, fits: &[FourierFit], prov: &Provenance) -> Result<()> {
    let mut w = create_csv(path, prov)?;
    let mut header = vec!["site_id".to_string(), "covariate".into()];
    header.extend((0..crate::covariate::N_FOURIER).map(|k| format!("zeta_{k}")));
    w.write_record(&header)?;
    for (i, fit) in fits.iter().enumerate() {
        for (j, z) in fit.zeta.iter().enumerate() {
            let mut row = vec![(i + 1).to_string(), format!("x{}", j + 1)];
            row.extend(z.iter().map(|&v| num(v)));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Panel in the ingestion schema; `covariates[site][week][j]`.
pub fn write_data_csv(path: &Path, y: &[Vec<u8>], covariates: &[Vec<Vec<f64>>], prov: &Provenance) -> Result<()> {
    let mut w = create_csv(path, prov)?;
    let n_cov = covariates.first().and_then(|s| s.first()).map_or(0, |r| r.len());
    let mut header = vec!["site_id".to_string(), "week".into(), "y".into()];
    header.extend((1..=n_cov).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    for (i, (ys, xs)) in y.iter().zip(covariates).enumerate() {
        for (t, (yt, xt)) in ys.iter().zip(xs).enumerate() {
            let mut row = vec![(i + 1).to_string(), (t + 1).to_string(), yt.to_string()];
            row.extend(xt.iter().map(|&v| num(v)));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `site_id, row, col`
pub fn write_sites_csv(path: &Path, cells: &[GridCell], prov: &Provenance) -> Result<()> {
    let mut w = create_csv(path, prov)?;
    w.write_record(["site_id", "row", "col"])?;
    for c in cells {
        w.write_record([c.site_id.to_string(), c.row.to_string(), c.col.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
