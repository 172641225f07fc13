use std::collections::BTreeMap;

use super::{solve_configuration, MarketInputs, MechanismConfig, MechanismOutcome, Models};
use crate::error::Result;
use crate::market_data::WicAssignment;
use crate::supply::FirmProfit;

/// Every firm's auction brand is open to WIC consumers; the government pays
/// the retail price and receives no rebate.
pub fn simulate_voucher(inputs: &MarketInputs, models: &Models, config: &MechanismConfig) -> Result<MechanismOutcome> {
    config.validate()?;
    let market = &inputs.model.market;
    let own = market.ownership();
    let firms = own.firms.clone();
    let assignment = WicAssignment::prorated(firms.iter().map(String::as_str));
    let cfg = solve_configuration(inputs, models, config, &assignment, &firms, &own.auction_brand)?;
    let mut gexp = 0.0;
    let mut profits = BTreeMap::new();
    for (f, firm) in firms.iter().enumerate() {
        let k = own.auction_brand[f];
        let q = cfg.wic.served[k];
        gexp += cfg.prices[k] * q;
        let wic = (cfg.prices[k] - cfg.costs[k]) * q;
        let non_wic = cfg.non_wic[firm];
        profits.insert(firm.clone(), FirmProfit { total: non_wic + wic, wic, non_wic });
    }
    Ok(MechanismOutcome {
        market_id: market.market_id.clone(),
        mechanism: config.kind.as_str().into(),
        gexp,
        cs_wic: cfg.wic.surplus,
        cs_nonwic: cfg.cs_nonwic,
        profits,
        prices: cfg.prices,
        participation: firms,
        unique: true,
        total_draws: 1,
        ..Default::default()
    }
    .finalize())
}
