use std::collections::BTreeMap;

use log::warn;

use super::entry::entry_equilibria_partial;
use super::{solve_configuration, MarketInputs, MechanismConfig, MechanismOutcome, Models};
use crate::error::{Error, Result};
use crate::market_data::WicAssignment;
use crate::supply::FirmProfit;

fn evaluate(
    inputs: &MarketInputs,
    models: &Models,
    config: &MechanismConfig,
    participants: &[String],
) -> Result<MechanismOutcome> {
    let market = &inputs.model.market;
    let own = market.ownership();
    let brands: Vec<usize> =
        participants.iter().map(|f| own.auction_brand[own.firm_index(f).expect("participant is a firm")]).collect();
    let assignment = WicAssignment::prorated(participants.iter().map(String::as_str));
    let cfg = solve_configuration(inputs, models, config, &assignment, participants, &brands)?;
    let keep = 1.0 - config.rebate_rate;
    let mut gexp = 0.0;
    let mut profits: BTreeMap<String, FirmProfit> =
        cfg.non_wic.iter().map(|(f, v)| (f.clone(), FirmProfit { total: *v, wic: 0.0, non_wic: *v })).collect();
    for (f, k) in participants.iter().zip(&brands) {
        let q = cfg.wic.served[*k];
        gexp += keep * cfg.prices[*k] * q;
        let wic = (keep * cfg.prices[*k] - cfg.costs[*k]) * q;
        let e = profits.get_mut(f).expect("participant is a firm");
        e.wic = wic;
        e.total += wic;
    }
    Ok(MechanismOutcome {
        market_id: market.market_id.clone(),
        mechanism: config.kind.as_str().into(),
        gexp,
        cs_wic: cfg.wic.surplus,
        cs_nonwic: cfg.cs_nonwic,
        profits,
        prices: cfg.prices,
        participation: participants.to_vec(),
        total_draws: 1,
        ..Default::default()
    }
    .finalize())
}

/// Evaluates every participation configuration, finds the pure entry
/// equilibria and reports the one with the most participants (ties: the
/// lowest bitmask over sorted firms).
pub fn simulate_predetermined(
    inputs: &MarketInputs,
    models: &Models,
    config: &MechanismConfig,
) -> Result<MechanismOutcome> {
    config.validate()?;
    let market = &inputs.model.market;
    let firms = market.firms();
    let n = firms.len();
    let members =
        |mask: usize| -> Vec<String> { (0..n).filter(|i| mask & (1 << i) != 0).map(|i| firms[i].clone()).collect() };
    let mut outcomes: Vec<Option<MechanismOutcome>> = Vec::with_capacity(1 << n);
    for mask in 0..(1usize << n) {
        match evaluate(inputs, models, config, &members(mask)) {
            Ok(o) => outcomes.push(Some(o)),
            Err(e) => {
                warn!("market {}: configuration {:?} failed: {e}", market.market_id, members(mask));
                outcomes.push(None);
            }
        }
    }
    let payoffs: Vec<Option<Vec<f64>>> =
        outcomes.iter().map(|o| o.as_ref().map(|o| firms.iter().map(|f| o.profits[f].total).collect())).collect();
    let eq = entry_equilibria_partial(n, &payoffs)?;
    let chosen = eq
        .iter()
        .copied()
        .max_by(|a, b| a.count_ones().cmp(&b.count_ones()).then(b.cmp(a)))
        .ok_or_else(|| Error::invariant(&market.market_id, "entry game has no pure-strategy equilibrium"))?;
    let mut out = outcomes[chosen].clone().expect("equilibria are solved configurations");
    out.equilibria = eq.iter().map(|m| members(*m)).collect();
    out.unique = eq.len() == 1;
    Ok(out)
}
