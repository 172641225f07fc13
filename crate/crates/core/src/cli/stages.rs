use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::config::{OutputFormat, RunConfig};
use super::CliError;
use crate::bidding::{fit_rebate_model, predict_rebates, write_auction_sims_csv, RebateModel};
use crate::counterfactual::{
    aggregate, program_size_sweep, simulate_markets, Aggregate, MarketInputs, MechanismConfig, MechanismKind,
    MechanismOutcome, Models, SweepTable,
};
use crate::demand::{
    exogenous_columns, gmm_estimate, ConsumerDraws, DemandEstimate, DemandParams, DrawConfig, GmmOptions,
    InstrumentSet, MarketModel,
};
use crate::error::{Error, Result};
use crate::market_data::synthetic::{generate_world, SyntheticSpec};
use crate::market_data::{
    load_auctions, load_markets, write_auctions, write_markets, AuctionRecord, DataFormat, MarketConfig,
};
use crate::supply::{
    calibrate_rho, fit_cost_function, recover_costs, CostFitOptions, CostPanel, CostRecovery, QuantityModel,
    RecoveryOptions, RhoCalibration, RhoInputs, SolverOptions, SupplyParams, RHO_GRID,
};

pub const DEMAND_FILE: &str = "demand.json";
pub const COSTS_FILE: &str = "costs.csv";
pub const SUPPLY_FILE: &str = "supply.json";
pub const BIDS_FILE: &str = "bids.json";
pub const RHO_FILE: &str = "rho.json";
pub const SIMULATION_FILE: &str = "simulation.json";
pub const AUCTION_DRAWS_FILE: &str = "auction_draws.csv";
pub const TRUTH_FILE: &str = "truth.json";

pub fn require(path: &Path) -> std::result::Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("missing input {}", path.display())))
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::File { path: path.display().to_string(), message: e.to_string() })?;
    serde_json::from_str(&text)
        .map_err(|e| Error::File { path: path.display().to_string(), message: format!("invalid JSON: {e}") })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::File { path: path.display().to_string(), message: e.to_string() })
}

fn format_of(path: &Path) -> DataFormat {
    DataFormat::from_path(path).unwrap_or(DataFormat::Csv)
}

pub fn markets_path(cfg: &RunConfig) -> std::result::Result<PathBuf, CliError> {
    let p = cfg.markets.clone().ok_or_else(|| CliError::Usage("--markets is required".into()))?;
    require(&p)?;
    Ok(p)
}

pub fn auctions_path(cfg: &RunConfig) -> std::result::Result<PathBuf, CliError> {
    let p = cfg.auctions.clone().ok_or_else(|| CliError::Usage("--auctions is required".into()))?;
    require(&p)?;
    Ok(p)
}

fn markets(cfg: &RunConfig) -> std::result::Result<Vec<MarketConfig>, CliError> {
    let p = markets_path(cfg)?;
    Ok(load_markets(&p, format_of(&p))?)
}

fn auctions(cfg: &RunConfig) -> std::result::Result<Vec<AuctionRecord>, CliError> {
    let p = auctions_path(cfg)?;
    Ok(load_auctions(&p, format_of(&p))?)
}

fn artifact<T: DeserializeOwned>(cfg: &RunConfig, name: &str) -> std::result::Result<T, CliError> {
    let p = cfg.out.join(name);
    require(&p)?;
    Ok(read_json(&p)?)
}

fn draw_config(cfg: &RunConfig) -> DrawConfig {
    DrawConfig { n_draws: cfg.consumer_draws, ..DrawConfig::default() }
}

fn market_models(cfg: &RunConfig, markets: &[MarketConfig], est: &DemandEstimate) -> Result<Vec<MarketModel>> {
    markets
        .iter()
        .map(|m| {
            let xi = est
                .xi_for(&m.market_id)
                .ok_or_else(|| Error::invariant(&m.market_id, "no demand residuals estimated for this market"))?;
            let draws = ConsumerDraws::for_market(&draw_config(cfg), cfg.seed, m)?;
            Ok(MarketModel { market: m.clone(), xi, draws })
        })
        .collect()
}

pub struct GenerateSummary {
    pub markets: usize,
    pub products: usize,
    pub auctions: usize,
    pub files: Vec<PathBuf>,
}

pub fn generate(cfg: &RunConfig) -> std::result::Result<GenerateSummary, CliError> {
    let spec: SyntheticSpec = match &cfg.spec {
        Some(p) => {
            require(p)?;
            read_json(p)?
        }
        None => SyntheticSpec::default(),
    };
    let world = generate_world(&spec, cfg.seed)?;
    fs::create_dir_all(&cfg.out)?;
    let (fmt, ext) = match cfg.format {
        OutputFormat::Json => (DataFormat::Json, "json"),
        _ => (DataFormat::Csv, "csv"),
    };
    let mp = cfg.out.join(format!("markets.{ext}"));
    let ap = cfg.out.join(format!("auctions.{ext}"));
    let tp = cfg.out.join(TRUTH_FILE);
    write_markets(&mp, fmt, &world.markets)?;
    write_auctions(&ap, fmt, &world.auctions)?;
    write_json(&tp, &world.truth)?;
    Ok(GenerateSummary {
        markets: world.markets.len(),
        products: world.markets.iter().map(|m| m.product_count()).sum(),
        auctions: world.auctions.len(),
        files: vec![mp, ap, tp],
    })
}

pub fn estimate_demand(cfg: &RunConfig) -> std::result::Result<(), CliError> {
    let markets = markets(cfg)?;
    let instruments = InstrumentSet::build(&markets)?;
    let (exog, names) = exogenous_columns(&markets);
    let z = instruments.assemble(&exog, &names)?;
    let draws: Vec<ConsumerDraws> =
        markets.iter().map(|m| ConsumerDraws::for_market(&draw_config(cfg), cfg.seed, m)).collect::<Result<_>>()?;
    let k = markets[0].characteristic_names.len();
    let mut init = DemandParams::logit(1.0, vec![0.0; k]);
    let options = if cfg.linear_only {
        GmmOptions::linear_only()
    } else {
        init.sigma_price = 0.5;
        init.sigma_const = 0.5;
        GmmOptions::default()
    };
    let est = gmm_estimate(&markets, &z, &draws, &init, &options)?;
    info!("demand: alpha = {:.4}, objective = {:.3e}", est.params.alpha, est.objective);
    write_json(&cfg.out.join(DEMAND_FILE), &est)?;
    Ok(())
}

fn write_costs_csv(path: &Path, recoveries: &[CostRecovery]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["market_id", "product_id", "cost", "markup", "method_tag"])?;
    for r in recoveries {
        for j in 0..r.product_ids.len() {
            w.write_record([
                r.market_id.as_str(),
                r.product_ids[j].as_str(),
                r.marginal_costs[j].to_string().as_str(),
                r.markups[j].to_string().as_str(),
                r.methods[j].as_str(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn recover(cfg: &RunConfig) -> std::result::Result<(), CliError> {
    let markets = markets(cfg)?;
    let est: DemandEstimate = artifact(cfg, DEMAND_FILE)?;
    let models = market_models(cfg, &markets, &est)?;
    let opts = RecoveryOptions::default();
    let recoveries: Vec<CostRecovery> = models
        .iter()
        .map(|mm| {
            let d = mm.observed_demand(&est.params)?;
            recover_costs(&mm.market, &d, &mm.market.prices, cfg.rho_initial, &opts)
        })
        .collect::<Result<_>>()?;
    let panel = CostPanel::from_recoveries(&markets, &recoveries)?;
    let supply = fit_cost_function(&panel, &CostFitOptions::default())?;
    write_costs_csv(&cfg.out.join(COSTS_FILE), &recoveries)?;
    write_json(&cfg.out.join(SUPPLY_FILE), &supply)?;
    Ok(())
}

pub fn fit_bids(cfg: &RunConfig) -> std::result::Result<(), CliError> {
    let markets = markets(cfg)?;
    let records = auctions(cfg)?;
    let model = fit_rebate_model(&records, &markets)?;
    write_json(&cfg.out.join(BIDS_FILE), &model)?;
    Ok(())
}

fn winning_rebates(records: &[AuctionRecord]) -> BTreeMap<String, f64> {
    records.iter().filter(|r| r.won).map(|r| (r.market_id.clone(), r.rebate)).collect()
}

pub fn calibrate(cfg: &RunConfig) -> std::result::Result<(), CliError> {
    let markets = markets(cfg)?;
    let records = auctions(cfg)?;
    let est: DemandEstimate = artifact(cfg, DEMAND_FILE)?;
    let supply: SupplyParams = artifact(cfg, SUPPLY_FILE)?;
    let models = market_models(cfg, &markets, &est)?;
    let rebates = winning_rebates(&records);
    let quantity = QuantityModel::default();
    let inputs = RhoInputs {
        models: &models,
        params: &est.params,
        savings: &supply.savings,
        rebates: &rebates,
        quantity: &quantity,
        recovery: RecoveryOptions::default(),
    };
    let calib = calibrate_rho(&inputs, &RHO_GRID)?;
    write_json(&cfg.out.join(RHO_FILE), &calib)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationResults {
    pub rebate_rate: f64,
    pub auction: Aggregate,
    pub voucher: Aggregate,
    pub predetermined: Aggregate,
    pub sweep: SweepTable,
    pub outcomes: BTreeMap<String, Vec<MechanismOutcome>>,
}

pub fn simulate(cfg: &RunConfig) -> std::result::Result<(), CliError> {
    let markets = markets(cfg)?;
    let est: DemandEstimate = artifact(cfg, DEMAND_FILE)?;
    let supply: SupplyParams = artifact(cfg, SUPPLY_FILE)?;
    let bids: RebateModel = artifact(cfg, BIDS_FILE)?;
    let calib: RhoCalibration = artifact(cfg, RHO_FILE)?;
    let models = market_models(cfg, &markets, &est)?;
    let shared = Models {
        params: est.params.clone(),
        savings: supply.savings.clone(),
        rho: calib.rho.clone(),
        rebate_model: bids,
        solver: SolverOptions::default(),
    };
    let opts = RecoveryOptions::default();
    let inputs = models.into_iter().map(|mm| MarketInputs::recover(mm, &shared, &opts)).collect::<Result<Vec<_>>>()?;
    let config = |kind| MechanismConfig {
        rebate_rate: cfg.rebate_rate,
        n_draws: cfg.draws,
        seed: cfg.seed,
        wic_choice: cfg.wic_choice,
        ..MechanismConfig::new(kind)
    };
    let mut outcomes = BTreeMap::new();
    let mut run = |kind: MechanismKind, label: String| -> Result<Aggregate> {
        let o = simulate_markets(&inputs, &shared, &config(kind))?;
        let agg = aggregate(&label, &o)?;
        outcomes.insert(label, o);
        Ok(agg)
    };
    let auction = run(MechanismKind::Auction, "auction".into())?;
    let voucher = run(MechanismKind::Voucher, "voucher".into())?;
    let predetermined = run(MechanismKind::Predetermined, format!("predetermined@{}", cfg.rebate_rate))?;
    let sweep = program_size_sweep(&inputs, &shared, &config(MechanismKind::Auction), &cfg.scales)?;

    let sims = markets
        .iter()
        .map(|m| predict_rebates(&shared.rebate_model, m, cfg.draws, cfg.seed, config(MechanismKind::Auction).resample))
        .collect::<Result<Vec<_>>>()?;
    let file = fs::File::create(cfg.out.join(AUCTION_DRAWS_FILE))?;
    write_auction_sims_csv(file, &sims)?;

    let results = SimulationResults { rebate_rate: cfg.rebate_rate, auction, voucher, predetermined, sweep, outcomes };
    write_json(&cfg.out.join(SIMULATION_FILE), &results)?;
    Ok(())
}
