use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use twostage::config::{ChainSettings, RunConfig};
use twostage::io::Provenance;
use twostage::pipeline;
use twostage::synthetic::{simulate_grid, SyntheticSpec};

#[derive(Parser)]
#[command(name = "twostage", version, about = "Two-stage MCMC for ordinal spatio-temporal lattice data")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[arg(long, global = true)]
    sites: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Highest ordinal level.
    #[arg(long, global = true)]
    levels: Option<usize>,
    /// Weeks used for fitting; later weeks are held out.
    #[arg(long, global = true)]
    train_weeks: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Copy, Default)]
struct ChainArgs {
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    burnin: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
}

impl ChainArgs {
    fn apply(&self, c: &mut ChainSettings) {
        if let Some(v) = self.iters {
            c.iterations = v;
        }
        if let Some(v) = self.burnin {
            c.burn_in = v;
        }
        if let Some(v) = self.thin {
            c.thin = v;
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (data.csv, sites.csv, truth.json).
    Simulate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        rows: usize,
        #[arg(long, default_value_t = 4)]
        cols: usize,
        #[arg(long)]
        weeks: Option<usize>,
        #[arg(long)]
        rho: Option<f64>,
        /// TOML file with synthetic settings.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Fit every site independently and store the reservoirs.
    Stage1 {
        #[command(flatten)]
        chain: ChainArgs,
        /// Also export the reservoirs as CSV.
        #[arg(long)]
        csv: bool,
    },
    /// Resample the reservoirs under the spatial model.
    Stage2 {
        #[command(flatten)]
        chain: ChainArgs,
        #[arg(long)]
        randomized_scan: bool,
    },
    /// Reference single-stage sampler of the full model.
    SingleStage {
        #[command(flatten)]
        chain: ChainArgs,
        /// Run even above the size guard.
        #[arg(long)]
        force: bool,
    },
    /// Fourier detrending and the two-stage covariate VAR fit.
    Covfit {
        #[command(flatten)]
        chain: ChainArgs,
    },
    /// Posterior-predictive forecasts and holdout metrics.
    Forecast {
        #[arg(long)]
        horizon: Option<usize>,
        /// Use only the first N draws of both stores.
        #[arg(long)]
        draws: Option<usize>,
    },
    /// Posterior summaries, ESS and optional store comparison.
    Diagnose {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        compare: Option<PathBuf>,
        /// Where to write the tables; defaults to the store directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn resolve_config(cli: &Cli) -> Result<RunConfig, twostage::Error> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = &cli.data {
        cfg.data = v.clone();
    }
    if let Some(v) = &cli.sites {
        cfg.sites = v.clone();
    }
    if let Some(v) = &cli.output {
        cfg.output = v.clone();
    }
    if let Some(v) = cli.seed {
        cfg.seed = v;
    }
    if let Some(v) = cli.workers {
        cfg.workers = v;
    }
    if let Some(v) = cli.levels {
        cfg.levels = v;
    }
    if cli.train_weeks.is_some() {
        cfg.train_weeks = cli.train_weeks;
    }
    match &cli.command {
        Command::Stage1 { chain, .. } => chain.apply(&mut cfg.stage1),
        Command::Stage2 { chain, randomized_scan } => {
            chain.apply(&mut cfg.stage2);
            cfg.randomized_scan |= randomized_scan;
        }
        Command::SingleStage { chain, .. } => chain.apply(&mut cfg.single_stage),
        Command::Covfit { chain } => {
            chain.apply(&mut cfg.covariate_stage1);
            chain.apply(&mut cfg.covariate_stage2);
        }
        Command::Forecast { horizon: Some(h), .. } => cfg.horizon = *h,
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Failure {
    code: String,
    message: String,
}

impl From<twostage::Error> for Failure {
    fn from(e: twostage::Error) -> Self {
        Failure { code: e.code().into(), message: e.to_string() }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Simulate { out, rows, cols, weeks, rho, spec } => {
            let mut s = match spec {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(twostage::Error::from)?;
                    SyntheticSpec::from_toml(&text)?
                }
                None => SyntheticSpec::default(),
            };
            if let Some(w) = weeks {
                s.weeks = *w;
            }
            if let Some(r) = rho {
                s.rho_mean = *r;
            }
            if let Some(l) = cli.levels {
                s.levels = l;
            }
            if cli.train_weeks.is_some() {
                s.train_weeks = cli.train_weeks;
            }
            let seed = cli.seed.unwrap_or(1);
            let (_, data) = simulate_grid(*rows, *cols, &s, seed)?;
            let hash = twostage::config::hash_json(&s)?;
            data.write(out, &Provenance { config_hash: hash, seed })?;
            log::info!("wrote synthetic dataset to {}", out.display());
        }
        Command::Stage1 { csv, .. } => {
            let cfg = resolve_config(&cli)?;
            let data = pipeline::load_dataset(&cfg)?;
            let report = pipeline::stage1_step(&cfg, &data, *csv)?;
            log::info!("stage one finished in {:.2}s", report.wall_seconds);
            if !report.failures.is_empty() {
                let ids: Vec<String> = report.failures.iter().map(|f| f.site_id.to_string()).collect();
                for f in &report.failures {
                    log::error!("site {}: [{}] {}", f.site_id, f.code, f.message);
                }
                return Err(Failure {
                    code: "E_SITE_FAILURES".into(),
                    message: format!("stage one failed at sites {}", ids.join(",")),
                });
            }
        }
        Command::Stage2 { .. } => {
            let cfg = resolve_config(&cli)?;
            let data = pipeline::load_dataset(&cfg)?;
            let report = pipeline::stage2_step(&cfg, &data)?;
            if !report.low_acceptance.is_empty() {
                log::warn!("acceptance below 1% at sites {:?}", report.low_acceptance);
            }
        }
        Command::SingleStage { force, .. } => {
            let cfg = resolve_config(&cli)?;
            let data = pipeline::load_dataset(&cfg)?;
            pipeline::single_stage_step(&cfg, &data, *force)?;
        }
        Command::Covfit { .. } => {
            let cfg = resolve_config(&cli)?;
            let data = pipeline::load_dataset(&cfg)?;
            pipeline::covfit_step(&cfg, &data)?;
        }
        Command::Forecast { draws, .. } => {
            let cfg = resolve_config(&cli)?;
            let data = pipeline::load_dataset(&cfg)?;
            let report = pipeline::forecast_step(&cfg, &data, cfg.horizon, *draws)?;
            if let Some(w) = report.within_one {
                for (h, p) in w.mean.iter().enumerate() {
                    println!("horizon {:>3}: mean within-one probability {p:.4}", h + 1);
                }
            }
        }
        Command::Diagnose { store, compare, out } => {
            let out = out.clone().unwrap_or_else(|| store.clone());
            let summary = pipeline::diagnose_step(store, compare.as_deref(), &out)?;
            for c in &summary.classes {
                match c.ess_per_hour {
                    Some(r) => println!("{:<10} mean ESS {:>10.1}  ESS/hour {:>12.1}", c.class, c.mean_ess, r),
                    None => println!("{:<10} mean ESS {:>10.1}", c.class, c.mean_ess),
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error[{}]: {}", f.code, f.message.replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
