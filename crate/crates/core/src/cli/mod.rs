//! The `procsim` command line.
//!
//! Exit status: 0 on success, 1 when a computation fails, 2 on usage errors
//! (bad flags, missing inputs). Pipeline stages record input and output
//! hashes in `manifest.json` so that reruns skip stages whose inputs are
//! unchanged; once a stage reruns, every later stage reruns too.

pub mod config;
pub mod manifest;
pub mod report;
pub mod stages;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::PathBuf;

use clap::{CommandFactory, Parser, Subcommand};

use crate::counterfactual::WicChoice;
use config::{OutputFormat, Overrides, RunConfig, OUT_DIR_ENV};
use manifest::{file_hash, file_key, Manifest, StageRecord};
use stages::{
    auctions_path, markets_path, AUCTION_DRAWS_FILE, BIDS_FILE, COSTS_FILE, DEMAND_FILE, RHO_FILE, SIMULATION_FILE,
    SUPPLY_FILE,
};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failed(_) => 1,
        }
    }
}

impl From<crate::Error> for CliError {
    fn from(e: crate::Error) -> Self {
        CliError::Failed(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failed(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "procsim", version, about = "Procurement counterfactuals for a differentiated-products market")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Market data (.csv or .json).
    #[arg(long, global = true)]
    markets: Option<PathBuf>,
    /// Auction records (.csv or .json).
    #[arg(long, global = true)]
    auctions: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = OUT_DIR_ENV)]
    out: Option<PathBuf>,
    /// Root seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Rebate draws per market in the auction simulation.
    #[arg(long, global = true)]
    draws: Option<usize>,
    /// Share of the retail price rebated under the predetermined mechanism.
    #[arg(long = "rebate-rate", global = true)]
    rebate_rate: Option<f64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// csv, json or text.
    #[arg(long, global = true)]
    format: Option<OutputFormat>,
    /// Simulated consumers per market.
    #[arg(long = "consumer-draws", global = true)]
    consumer_draws: Option<usize>,
    /// WIC consumer choice: logsum (taste shocks integrated) or argmax.
    #[arg(long = "wic-choice", global = true)]
    wic_choice: Option<WicChoice>,
    /// Key-value config file; explicit flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic world (markets, auctions, true parameters).
    Generate {
        /// Synthetic spec (JSON); defaults to the built-in world.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Estimate mixed-logit demand by two-step GMM.
    EstimateDemand,
    /// Recover marginal costs and fit the cost function.
    RecoverCosts,
    /// Fit the rebate regression on auction records.
    FitBids,
    /// Calibrate each firm's post-auction price adjustment.
    CalibrateRho,
    /// Simulate auction, voucher and predetermined-rebate outcomes.
    Simulate,
    /// Render comparison tables from simulation output.
    Report,
    /// Run all estimation and simulation stages, resuming where possible.
    Pipeline {
        /// Rerun every stage regardless of the manifest.
        #[arg(long)]
        force: bool,
        /// Skip report rendering after the last stage.
        #[arg(long = "no-report")]
        no_report: bool,
    },
}

pub const STAGES: [&str; 5] = ["estimate-demand", "recover-costs", "fit-bids", "calibrate-rho", "simulate"];

struct Stage {
    name: &'static str,
    inputs: Vec<PathBuf>,
    outputs: &'static [&'static str],
    params: String,
    run: fn(&RunConfig) -> Result<(), CliError>,
}

fn stage(cfg: &RunConfig, name: &str) -> Result<Stage, CliError> {
    let out = |f: &str| cfg.out.join(f);
    let consumers = format!("seed={};consumer_draws={}", cfg.seed, cfg.consumer_draws);
    Ok(match name {
        "estimate-demand" => Stage {
            name: "estimate-demand",
            inputs: vec![markets_path(cfg)?],
            outputs: &[DEMAND_FILE],
            params: format!("{consumers};linear_only={}", cfg.linear_only),
            run: stages::estimate_demand,
        },
        "recover-costs" => Stage {
            name: "recover-costs",
            inputs: vec![markets_path(cfg)?, out(DEMAND_FILE)],
            outputs: &[COSTS_FILE, SUPPLY_FILE],
            params: format!("{consumers};rho_initial={}", cfg.rho_initial),
            run: stages::recover,
        },
        "fit-bids" => Stage {
            name: "fit-bids",
            inputs: vec![markets_path(cfg)?, auctions_path(cfg)?],
            outputs: &[BIDS_FILE],
            params: String::new(),
            run: stages::fit_bids,
        },
        "calibrate-rho" => Stage {
            name: "calibrate-rho",
            inputs: vec![markets_path(cfg)?, auctions_path(cfg)?, out(DEMAND_FILE), out(SUPPLY_FILE)],
            outputs: &[RHO_FILE],
            params: consumers,
            run: stages::calibrate,
        },
        "simulate" => Stage {
            name: "simulate",
            inputs: vec![markets_path(cfg)?, out(DEMAND_FILE), out(SUPPLY_FILE), out(BIDS_FILE), out(RHO_FILE)],
            outputs: &[SIMULATION_FILE, AUCTION_DRAWS_FILE],
            params: format!(
                "{consumers};draws={};rebate_rate={};scales={:?};wic_choice={}",
                cfg.draws,
                cfg.rebate_rate,
                cfg.scales,
                cfg.wic_choice.as_str()
            ),
            run: stages::simulate,
        },
        other => return Err(CliError::Usage(format!("unknown stage {other}"))),
    })
}

/// Runs `names` in order. Returns the stages that actually ran.
fn run_stages(cfg: &RunConfig, names: &[&str], force: bool) -> Result<Vec<String>, CliError> {
    std::fs::create_dir_all(&cfg.out)?;
    let mut manifest = Manifest::load(&cfg.out)?;
    let mut ran = Vec::new();
    for name in names {
        let st = stage(cfg, name)?;
        for p in &st.inputs {
            stages::require(p).map_err(|e| CliError::Failed(format!("stage {}: {e}", st.name)))?;
        }
        let inputs: BTreeMap<String, String> =
            st.inputs.iter().map(|p| Ok((file_key(p), file_hash(p)?))).collect::<crate::Result<_>>()?;
        if !force && ran.is_empty() && manifest.is_current(st.name, &st.params, &inputs, &cfg.out) {
            println!("{}: up to date, skipped", st.name);
            continue;
        }
        (st.run)(cfg).map_err(|e| match e {
            CliError::Usage(m) => CliError::Usage(format!("stage {}: {m}", st.name)),
            CliError::Failed(m) => CliError::Failed(format!("stage {} failed: {m}", st.name)),
        })?;
        let outputs = st
            .outputs
            .iter()
            .map(|f| Ok((f.to_string(), file_hash(&cfg.out.join(f))?)))
            .collect::<crate::Result<_>>()?;
        manifest.put(StageRecord { name: st.name.into(), params: st.params, inputs, outputs });
        manifest.save(&cfg.out)?;
        println!("{}: done", st.name);
        ran.push(st.name.to_string());
    }
    Ok(ran)
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let mut flags = Overrides {
        markets: cli.markets,
        auctions: cli.auctions,
        out: cli.out,
        seed: cli.seed,
        draws: cli.draws,
        rebate_rate: cli.rebate_rate,
        threads: cli.threads,
        format: cli.format,
        consumer_draws: cli.consumer_draws,
        wic_choice: cli.wic_choice,
        spec: None,
    };
    if let Command::Generate { spec } = &cli.command {
        flags.spec = spec.clone();
    }
    let cfg = RunConfig::resolve(&flags, cli.config.as_deref())?;
    print!("{}", cfg.echo());
    if let Some(n) = cfg.threads {
        // a second initialisation in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Generate { .. } => {
            let s = stages::generate(&cfg)?;
            println!("generated {} markets, {} products, {} auction records", s.markets, s.products, s.auctions);
            for f in s.files {
                println!("wrote {}", f.display());
            }
        }
        Command::EstimateDemand => {
            run_stages(&cfg, &["estimate-demand"], true)?;
        }
        Command::RecoverCosts => {
            run_stages(&cfg, &["recover-costs"], true)?;
        }
        Command::FitBids => {
            run_stages(&cfg, &["fit-bids"], true)?;
        }
        Command::CalibrateRho => {
            run_stages(&cfg, &["calibrate-rho"], true)?;
        }
        Command::Simulate => {
            run_stages(&cfg, &["simulate"], true)?;
        }
        Command::Report => {
            for p in report::report(&cfg)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Pipeline { force, no_report } => {
            let ran = run_stages(&cfg, &STAGES, force)?;
            println!("{} of {} stages ran", ran.len(), STAGES.len());
            if !no_report {
                for p in report::report(&cfg)? {
                    println!("wrote {}", p.display());
                }
            }
        }
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs; returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Usage(_) = e {
                eprintln!("{}", Cli::command().render_usage());
            }
            e.exit_code()
        }
    }
}
