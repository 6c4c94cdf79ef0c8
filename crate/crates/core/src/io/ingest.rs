//! Long-format panel ingestion and covariate standardization.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{build_queen_adjacency, GridCell, LatticeGraph};
use crate::model::{Cutoffs, SitePanel};

/// Per-covariate centering and scaling constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    /// Weeks `1..=train_weeks` were used to compute the constants.
    pub train_weeks: usize,
}

impl Standardization {
    /// Pooled mean and sample sd over all sites and the first `train_weeks`
    /// weeks of `series[site][week][covariate]`.
    pub fn fit(series: &[Vec<Vec<f64>>], train_weeks: usize) -> Result<Self> {
        let n_cov = series.first().and_then(|s| s.first()).map_or(0, |r| r.len());
        let mut mean = vec![0.0; n_cov];
        let mut sd = vec![0.0; n_cov];
        let count = (series.len() * train_weeks) as f64;
        if count < 2.0 {
            return Err(Error::Ingest("standardization needs at least two training values".into()));
        }
        for j in 0..n_cov {
            let values = series.iter().flat_map(|s| s[..train_weeks].iter().map(move |r| r[j]));
            mean[j] = values.clone().sum::<f64>() / count;
            let ss: f64 = values.map(|v| (v - mean[j]).powi(2)).sum();
            sd[j] = (ss / (count - 1.0)).sqrt();
            if !(sd[j] > 0.0) {
                return Err(Error::Ingest(format!("covariate x{} has zero variance over the training weeks", j + 1)));
            }
        }
        Ok(Standardization { mean, sd, train_weeks })
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(self.mean.iter().zip(&self.sd)).map(|(v, (m, s))| (v - m) / s).collect()
    }
}

/// Everything read from a data CSV and a sites CSV.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub cells: Vec<GridCell>,
    pub graph: LatticeGraph,
    pub cutoffs: Cutoffs,
    /// `[site][week]`, all weeks.
    pub y: Vec<Vec<u8>>,
    /// `[site][week][covariate]` as read.
    pub raw: Vec<Vec<Vec<f64>>>,
    /// `[site][week][covariate]` after standardization, all weeks.
    pub standardized: Vec<Vec<Vec<f64>>>,
    pub standardization: Standardization,
    pub weeks: usize,
}

impl Dataset {
    pub fn n_sites(&self) -> usize {
        self.y.len()
    }

    pub fn n_cov(&self) -> usize {
        self.standardization.mean.len()
    }

    pub fn train_weeks(&self) -> usize {
        self.standardization.train_weeks
    }

    /// Panels over the training weeks.
    pub fn training_panels(&self) -> Result<Vec<SitePanel>> {
        let t = self.train_weeks();
        self.y
            .iter()
            .zip(&self.standardized)
            .map(|(y, x)| SitePanel::new(y[..t].to_vec(), &x[..t], self.cutoffs))
            .collect()
    }

    /// Observed levels after the training weeks, `[site][step]`.
    pub fn holdout_levels(&self) -> Vec<Vec<u8>> {
        self.y.iter().map(|y| y[self.train_weeks()..].to_vec()).collect()
    }

    /// Standardized covariates after the training weeks,
    /// `[site][step][covariate]`.
    pub fn holdout_covariates(&self) -> Vec<Vec<Vec<f64>>> {
        self.standardized.iter().map(|x| x[self.train_weeks()..].to_vec()).collect()
    }

    /// Standardized training covariates of every site.
    pub fn training_covariates(&self) -> Vec<Vec<Vec<f64>>> {
        self.standardized.iter().map(|x| x[..self.train_weeks()].to_vec()).collect()
    }
}

fn skip_comments<R: std::io::Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(reader)
}

/// Read `site_id,row,col`.
pub fn read_sites<R: std::io::Read>(reader: R) -> Result<Vec<GridCell>> {
    let mut rdr = skip_comments(reader);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["site_id", "row", "col"] {
        return Err(Error::Ingest(format!("sites header must be site_id,row,col, got {}", header.iter().collect::<Vec<_>>().join(","))));
    }
    let mut cells = Vec::new();
    for rec in rdr.deserialize::<(u32, i64, i64)>() {
        let (site_id, row, col) = rec?;
        cells.push(GridCell { site_id, row, col });
    }
    cells.sort_by_key(|c| c.site_id);
    Ok(cells)
}

/// Read the long-format panel `site_id,week,y,x1..xP` and the site grid,
/// validate both, and standardize covariates on weeks `1..=train_weeks`
/// (all weeks when `None`).
pub fn ingest<R1: std::io::Read, R2: std::io::Read>(
    data: R1,
    sites: R2,
    cutoffs: Cutoffs,
    train_weeks: Option<usize>,
) -> Result<Dataset> {
    let cells = read_sites(sites)?;
    let graph = build_queen_adjacency(&cells)?;
    let n_sites = cells.len();

    let mut rdr = skip_comments(data);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.len() < 3 || header[..3] != ["site_id", "week", "y"] {
        return Err(Error::Ingest("data header must start with site_id,week,y".into()));
    }
    let n_cov = header.len() - 3;
    for (k, name) in header[3..].iter().enumerate() {
        if *name != format!("x{}", k + 1) {
            return Err(Error::Ingest(format!("covariate column {} must be named x{}", k + 4, k + 1)));
        }
    }

    let mut rows: HashMap<u32, BTreeMap<usize, (u8, Vec<f64>)>> = HashMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |k: usize| rec.get(k).unwrap_or("");
        let bad = |what: &str| Error::Ingest(format!("data row {}: bad {what}", line + 1));
        let site: u32 = field(0).parse().map_err(|_| bad("site_id"))?;
        let week: usize = field(1).parse().map_err(|_| bad("week"))?;
        let y: u8 = field(2).parse().map_err(|_| bad("y"))?;
        if y as usize > cutoffs.j() {
            return Err(Error::Ingest(format!(
                "site {site} week {week}: level {y} outside 0..={}",
                cutoffs.j()
            )));
        }
        let x = (0..n_cov)
            .map(|j| {
                let v: f64 = field(3 + j).parse().map_err(|_| bad(&format!("x{}", j + 1)))?;
                if v.is_finite() { Ok(v) } else { Err(bad(&format!("x{}", j + 1))) }
            })
            .collect::<Result<Vec<f64>>>()?;
        if site == 0 || site as usize > n_sites {
            return Err(Error::Ingest(format!("data row {}: site {site} is not in the sites file", line + 1)));
        }
        if rows.entry(site).or_default().insert(week, (y, x)).is_some() {
            return Err(Error::Ingest(format!("duplicate row for site {site} week {week}")));
        }
    }

    let mut weeks = None;
    let mut y_all = Vec::with_capacity(n_sites);
    let mut raw = Vec::with_capacity(n_sites);
    for site in 1..=n_sites as u32 {
        let site_rows = rows
            .remove(&site)
            .ok_or_else(|| Error::Ingest(format!("site {site} has no data rows")))?;
        let t = site_rows.len();
        for (k, &week) in site_rows.keys().enumerate() {
            if week != k + 1 {
                return Err(Error::Ingest(format!("site {site}: weeks are not contiguous from 1 (missing week {})", k + 1)));
            }
        }
        match weeks {
            None => weeks = Some(t),
            Some(w) if w != t => {
                return Err(Error::Ingest(format!("site {site} has {t} weeks, other sites have {w}")));
            }
            _ => {}
        }
        let (y, x): (Vec<u8>, Vec<Vec<f64>>) = site_rows.into_values().unzip();
        y_all.push(y);
        raw.push(x);
    }
    let weeks = weeks.unwrap_or(0);
    let train = train_weeks.unwrap_or(weeks);
    if train == 0 || train > weeks {
        return Err(Error::Ingest(format!("training weeks {train} must be in 1..={weeks}")));
    }
    let standardization = if n_cov == 0 {
        Standardization { mean: vec![], sd: vec![], train_weeks: train }
    } else {
        Standardization::fit(&raw, train)?
    };
    let standardized = raw
        .iter()
        .map(|s| s.iter().map(|r| standardization.apply(r)).collect())
        .collect();
    Ok(Dataset {
        cells,
        graph,
        cutoffs,
        y: y_all,
        raw,
        standardized,
        standardization,
        weeks,
    })
}

pub fn ingest_files(data: &Path, sites: &Path, cutoffs: Cutoffs, train_weeks: Option<usize>) -> Result<Dataset> {
    let open = |p: &Path| {
        std::fs::File::open(p).map_err(|e| Error::Ingest(format!("cannot open {}: {e}", p.display())))
    };
    ingest(open(data)?, open(sites)?, cutoffs, train_weeks)
}
