//! Procurement mechanisms and their welfare accounts.
//!
//! Every mechanism reduces to a WIC assignment (which firms serve the segment
//! and with what weight), a set of brands whose retail price is scaled by the
//! owner's adjustment, and the set of brands WIC consumers may choose from.
//! Spillovers and cost shifts are prorated by the assignment weights.

mod auction;
mod compare;
mod entry;
mod predetermined;
mod voucher;
mod welfare;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bidding::{RebateModel, ResampleMode, DEFAULT_REBATE_DRAWS};
use crate::demand::{DemandParams, MarketDemand, MarketModel};
use crate::error::{Error, Result};
use crate::market_data::WicAssignment;
use crate::supply::{
    non_wic_profits, recover_costs, solve_sequential, CostSavings, FirmProfit, QuantityModel, RecoveryOptions,
    SolverOptions,
};

pub use auction::{simulate_auction, simulate_auction_modal, simulate_auction_with};
pub use compare::{
    aggregate, compare_mechanisms, program_size_sweep, write_long_csv, Aggregate, ComparisonRow, ComparisonTable,
    SweepTable,
};
pub use entry::{entry_equilibria_partial, entry_equilibrium, EntryResult, ProfitTable};
pub use predetermined::simulate_predetermined;
pub use voucher::simulate_voucher;
pub use welfare::{consumer_surplus_nonwic, consumer_surplus_wic, WicChoice, WicOutcome};

pub const DEFAULT_REBATE_RATE: f64 = 0.55;
pub const FAILURE_ABORT_RATE: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MechanismKind {
    Auction,
    Voucher,
    Predetermined,
}

impl MechanismKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MechanismKind::Auction => "auction",
            MechanismKind::Voucher => "voucher",
            MechanismKind::Predetermined => "predetermined",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MechanismConfig {
    pub kind: MechanismKind,
    /// Share of the retail price returned to the government (predetermined only).
    pub rebate_rate: f64,
    pub quantity: QuantityModel,
    pub wic_choice: WicChoice,
    /// Divisor turning WIC utility into dollars; `None` uses the market's mean price sensitivity.
    pub money_metric_alpha: Option<f64>,
    pub n_draws: usize,
    pub seed: u64,
    pub resample: ResampleMode,
}

impl MechanismConfig {
    pub fn new(kind: MechanismKind) -> Self {
        Self {
            kind,
            rebate_rate: DEFAULT_REBATE_RATE,
            quantity: QuantityModel::default(),
            wic_choice: WicChoice::LogSum,
            money_metric_alpha: None,
            n_draws: DEFAULT_REBATE_DRAWS,
            seed: 0,
            resample: ResampleMode::Independent,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rebate_rate) {
            return Err(Error::invalid(format!("rebate rate must lie in [0,1], got {}", self.rebate_rate)));
        }
        if self.n_draws == 0 && self.kind == MechanismKind::Auction {
            return Err(Error::invalid("auction simulation needs at least one draw"));
        }
        Ok(())
    }
}

/// Fitted models shared by all markets.
#[derive(Clone, Debug)]
pub struct Models {
    pub params: DemandParams,
    pub savings: CostSavings,
    pub rho: BTreeMap<String, f64>,
    pub rebate_model: RebateModel,
    pub solver: SolverOptions,
}

impl Models {
    pub fn rho_of(&self, firm: &str) -> f64 {
        self.rho.get(firm).copied().unwrap_or(0.0)
    }
}

/// One market with its marginal costs net of any WIC cost shifts.
#[derive(Clone, Debug)]
pub struct MarketInputs {
    pub model: MarketModel,
    pub base_costs: Vec<f64>,
}

impl MarketInputs {
    /// Costs recovered at observed prices under the winner's adjustment, net of
    /// the winner's cost shifts.
    pub fn recover(model: MarketModel, models: &Models, opts: &RecoveryOptions) -> Result<Self> {
        let m = &model.market;
        let demand = model.observed_demand(&models.params)?;
        let rho = m.winner.as_deref().map(|w| models.rho_of(w)).unwrap_or(0.0);
        let rec = recover_costs(m, &demand, &m.prices, rho, opts)?;
        let assignment = WicAssignment::from_option(m.winner.as_deref());
        let base_costs = models.savings.remove(&rec.marginal_costs, m, &assignment);
        Ok(Self { model, base_costs })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MechanismOutcome {
    pub market_id: String,
    pub mechanism: String,
    pub gexp: f64,
    pub cs_wic: f64,
    pub cs_nonwic: f64,
    pub cs_total: f64,
    pub profits: BTreeMap<String, FirmProfit>,
    pub pi_all: f64,
    /// `cs_total + pi_all`; government expenditure is reported separately.
    pub ts: f64,
    pub prices: Vec<f64>,
    pub participation: Vec<String>,
    /// All pure entry equilibria (predetermined only).
    pub equilibria: Vec<Vec<String>>,
    pub unique: bool,
    pub tie: bool,
    pub failed_draws: usize,
    pub total_draws: usize,
}

impl MechanismOutcome {
    /// Fills the derived totals from the components.
    pub fn finalize(mut self) -> Self {
        self.cs_total = self.cs_wic + self.cs_nonwic;
        self.pi_all = self.profits.values().map(|p| p.total).sum();
        self.ts = self.cs_total + self.pi_all;
        self
    }
}

/// Pricing and demand-side outcomes of one assignment.
#[derive(Clone, Debug)]
pub(crate) struct Configuration {
    pub prices: Vec<f64>,
    pub costs: Vec<f64>,
    pub cs_nonwic: f64,
    pub wic: WicOutcome,
    pub non_wic: BTreeMap<String, f64>,
}

/// Solves prices for `assignment`, scaling the auction brands of `adjusted`
/// firms, and evaluates both consumer segments with `available` brands open to WIC.
pub(crate) fn solve_configuration(
    inputs: &MarketInputs,
    models: &Models,
    config: &MechanismConfig,
    assignment: &WicAssignment,
    adjusted: &[String],
    available: &[usize],
) -> Result<Configuration> {
    let market = &inputs.model.market;
    let own = market.ownership();
    let demand: MarketDemand = inputs.model.demand(&models.params, assignment)?;
    let costs = models.savings.apply(&inputs.base_costs, market, assignment);
    let adjustments: Vec<(usize, f64)> = adjusted
        .iter()
        .map(|f| {
            let k = market
                .auction_brand_of(f)
                .ok_or_else(|| Error::invariant(&market.market_id, format!("firm {f} has no auction brand")))?;
            Ok((k, models.rho_of(f)))
        })
        .collect::<Result<_>>()?;
    let solved = solve_sequential(&demand, &own, &costs, &adjustments, &models.solver)?;
    let prices = solved.prices;
    let shares = demand.shares(&prices);
    let cs_nonwic = consumer_surplus_nonwic(&demand, &prices, market, &config.quantity)?;
    let money = config.money_metric_alpha.unwrap_or_else(|| demand.mean_price_sensitivity());
    let wic = consumer_surplus_wic(&demand, available, market, &config.quantity, money, config.wic_choice)?;
    let non_wic = non_wic_profits(&prices, &costs, &shares, market, &config.quantity)?;
    Ok(Configuration { prices, costs, cs_nonwic, wic, non_wic })
}

/// Dispatches on `config.kind`.
pub fn run_mechanism(inputs: &MarketInputs, models: &Models, config: &MechanismConfig) -> Result<MechanismOutcome> {
    match config.kind {
        MechanismKind::Auction => simulate_auction(inputs, models, config),
        MechanismKind::Voucher => simulate_voucher(inputs, models, config),
        MechanismKind::Predetermined => simulate_predetermined(inputs, models, config),
    }
}

/// Runs one mechanism on every market in parallel; results keep input order.
pub fn simulate_markets(
    inputs: &[MarketInputs],
    models: &Models,
    config: &MechanismConfig,
) -> Result<Vec<MechanismOutcome>> {
    inputs.par_iter().map(|m| run_mechanism(m, models, config)).collect()
}
