//! Pricing game, marginal-cost recovery, cost-function fit and WIC price-adjustment bounds.

mod cost_fit;
mod equilibrium;
mod profit;
mod recovery;
mod rho;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::market_data::{MarketConfig, WicAssignment};

pub use cost_fit::{fit_cost_function, CostFitOptions, CostObservation, CostPanel};
pub use equilibrium::{
    foc_residual, solve_bertrand, solve_post_auction, solve_sequential, PostAuctionPrices, SolverOptions,
};
pub use profit::{non_wic_profits, profit_decomposition, FirmProfit, QuantityModel};
pub use recovery::{
    recover_costs, recover_loser_costs, recover_winner_costs, winner_linear_map, CostRecovery, LinearMap, MethodTag,
    RecoveryOptions,
};
pub use rho::{calibrate_rho, firm_rho_profits, RhoCalibration, RhoInputs, RHO_GRID};

/// Additive marginal-cost shifts enjoyed by a WIC firm; negative values are savings.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CostSavings {
    /// Shift on every product of the firm.
    pub all_brands: BTreeMap<String, f64>,
    /// Further shift on the firm's auction brand.
    pub auction_brand: BTreeMap<String, f64>,
}

impl CostSavings {
    pub fn uniform(firms: &[String], all_brands: f64, auction_brand: f64) -> Self {
        Self {
            all_brands: firms.iter().map(|f| (f.clone(), all_brands)).collect(),
            auction_brand: firms.iter().map(|f| (f.clone(), auction_brand)).collect(),
        }
    }

    /// Shift for product `j` of `market` when its firm serves WIC with full weight.
    pub fn shift(&self, market: &MarketConfig, j: usize) -> f64 {
        let p = &market.products[j];
        let all = self.all_brands.get(&p.firm_id).copied().unwrap_or(0.0);
        let extra = if p.is_auction_brand { self.auction_brand.get(&p.firm_id).copied().unwrap_or(0.0) } else { 0.0 };
        all + extra
    }

    /// Base costs plus shifts prorated by WIC weights.
    pub fn apply(&self, base: &[f64], market: &MarketConfig, assignment: &WicAssignment) -> Vec<f64> {
        base.iter()
            .enumerate()
            .map(|(j, c)| c + assignment.weight(&market.products[j].firm_id) * self.shift(market, j))
            .collect()
    }

    /// Removes the shifts of the assignment from `costs`.
    pub fn remove(&self, costs: &[f64], market: &MarketConfig, assignment: &WicAssignment) -> Vec<f64> {
        costs
            .iter()
            .enumerate()
            .map(|(j, c)| c - assignment.weight(&market.products[j].firm_id) * self.shift(market, j))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupplyParams {
    /// Cost-function coefficients by design-column name.
    pub gamma: BTreeMap<String, f64>,
    pub gamma_std_errors: BTreeMap<String, f64>,
    /// Pooled win coefficient (all winner brands).
    pub delta_c_nonwic: f64,
    /// Pooled win × auction-brand coefficient.
    pub delta_c_wic: f64,
    /// Firm-specific shifts implied by the win interactions.
    pub savings: CostSavings,
    pub rho: BTreeMap<String, f64>,
    pub omega_sd: f64,
    /// Design columns dropped for lack of support.
    pub unidentified: Vec<String>,
}

impl SupplyParams {
    pub fn rho_of(&self, firm: &str) -> f64 {
        self.rho.get(firm).copied().unwrap_or(0.0)
    }
}
