use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::MarketConfig;

/// Converts infants and shares to ounces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantityModel {
    pub ounces_per_infant: f64,
}

impl Default for QuantityModel {
    fn default() -> Self {
        Self { ounces_per_infant: 400.0 }
    }
}

impl QuantityModel {
    pub fn non_wic_quantity(&self, market: &MarketConfig, share: f64) -> f64 {
        market.market_size * self.ounces_per_infant * share
    }

    pub fn wic_quantity(&self, market: &MarketConfig) -> f64 {
        market.wic_infants * self.ounces_per_infant
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FirmProfit {
    pub total: f64,
    pub wic: f64,
    pub non_wic: f64,
}

/// Non-WIC variable profit per firm.
pub fn non_wic_profits(
    prices: &[f64],
    costs: &[f64],
    shares: &[f64],
    market: &MarketConfig,
    quantity: &QuantityModel,
) -> Result<BTreeMap<String, f64>> {
    let n = market.product_count();
    for (what, v) in [("prices", prices), ("costs", costs), ("shares", shares)] {
        if v.len() != n {
            return Err(Error::Dimension { context: what, expected: n, found: v.len() });
        }
    }
    let mut out: BTreeMap<String, f64> = market.firms().into_iter().map(|f| (f, 0.0)).collect();
    for (j, p) in market.products.iter().enumerate() {
        *out.get_mut(&p.firm_id).expect("firm listed") +=
            (prices[j] - costs[j]) * quantity.non_wic_quantity(market, shares[j]);
    }
    Ok(out)
}

/// Per-firm profit when `winner` serves the WIC segment at net price `p − rebate`.
pub fn profit_decomposition(
    prices: &[f64],
    costs: &[f64],
    shares: &[f64],
    market: &MarketConfig,
    winner: Option<&str>,
    rebate: f64,
    quantity: &QuantityModel,
) -> Result<BTreeMap<String, FirmProfit>> {
    let non_wic = non_wic_profits(prices, costs, shares, market, quantity)?;
    let mut out: BTreeMap<String, FirmProfit> =
        non_wic.into_iter().map(|(f, v)| (f, FirmProfit { total: v, wic: 0.0, non_wic: v })).collect();
    if let Some(w) = winner {
        let k = market
            .auction_brand_of(w)
            .ok_or_else(|| Error::invariant(&market.market_id, format!("winner {w} has no auction brand")))?;
        let wic = (prices[k] - rebate - costs[k]) * quantity.wic_quantity(market);
        let entry = out.get_mut(w).expect("winner owns products");
        entry.wic = wic;
        entry.total = entry.non_wic + wic;
    }
    Ok(out)
}
