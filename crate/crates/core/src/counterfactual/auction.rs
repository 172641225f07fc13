use std::collections::BTreeMap;

use log::warn;

use super::{solve_configuration, MarketInputs, MechanismConfig, MechanismOutcome, Models, FAILURE_ABORT_RATE};
use crate::bidding::{predict_rebates, AuctionSim};
use crate::error::{Error, Result};
use crate::market_data::WicAssignment;
use crate::supply::FirmProfit;

/// Outcome when `winner` serves WIC at net price `p − rebate`.
fn outcome_for_winner(
    inputs: &MarketInputs,
    models: &Models,
    config: &MechanismConfig,
    winner: &str,
    rebate: f64,
) -> Result<MechanismOutcome> {
    let market = &inputs.model.market;
    let k = market
        .auction_brand_of(winner)
        .ok_or_else(|| Error::invariant(&market.market_id, format!("winner {winner} has no auction brand")))?;
    let cfg = solve_configuration(inputs, models, config, &WicAssignment::winner(winner), &[winner.to_string()], &[k])?;
    let q = cfg.wic.served[k];
    let mut profits: BTreeMap<String, FirmProfit> =
        cfg.non_wic.iter().map(|(f, v)| (f.clone(), FirmProfit { total: *v, wic: 0.0, non_wic: *v })).collect();
    let wic_profit = (cfg.prices[k] - rebate - cfg.costs[k]) * q;
    let entry = profits.get_mut(winner).expect("winner is a firm");
    entry.wic = wic_profit;
    entry.total += wic_profit;
    Ok(MechanismOutcome {
        market_id: market.market_id.clone(),
        mechanism: config.kind.as_str().into(),
        gexp: (cfg.prices[k] - rebate) * q,
        cs_wic: cfg.wic.surplus,
        cs_nonwic: cfg.cs_nonwic,
        profits,
        prices: cfg.prices,
        participation: vec![winner.to_string()],
        unique: true,
        total_draws: 1,
        ..Default::default()
    }
    .finalize())
}

/// Averages outcomes in order; fields that are not additive come from the first.
fn mean_outcome(parts: &[MechanismOutcome]) -> MechanismOutcome {
    let n = parts.len() as f64;
    let first = &parts[0];
    let mut out = MechanismOutcome {
        market_id: first.market_id.clone(),
        mechanism: first.mechanism.clone(),
        prices: vec![0.0; first.prices.len()],
        unique: true,
        ..Default::default()
    };
    for p in parts {
        out.gexp += p.gexp / n;
        out.cs_wic += p.cs_wic / n;
        out.cs_nonwic += p.cs_nonwic / n;
        for (a, b) in out.prices.iter_mut().zip(&p.prices) {
            *a += b / n;
        }
        for (f, v) in &p.profits {
            let e = out.profits.entry(f.clone()).or_default();
            e.total += v.total / n;
            e.wic += v.wic / n;
            e.non_wic += v.non_wic / n;
        }
    }
    out
}

/// Per-draw winners from simulated rebates; outcomes averaged over draws.
pub fn simulate_auction(inputs: &MarketInputs, models: &Models, config: &MechanismConfig) -> Result<MechanismOutcome> {
    config.validate()?;
    let market = &inputs.model.market;
    let sim = predict_rebates(&models.rebate_model, market, config.n_draws, config.seed, config.resample)?;
    simulate_auction_with(inputs, models, config, &sim)
}

/// As [`simulate_auction`] with given rebate draws.
pub fn simulate_auction_with(
    inputs: &MarketInputs,
    models: &Models,
    config: &MechanismConfig,
    sim: &AuctionSim,
) -> Result<MechanismOutcome> {
    let market = &inputs.model.market;
    let mut parts = Vec::with_capacity(sim.winners.len());
    let mut failed = 0;
    let mut tie = false;
    for (d, winner) in sim.winners.iter().enumerate() {
        let f = sim.firms.iter().position(|x| x == winner).expect("winner is a bidder");
        tie |= sim.ties[d];
        match outcome_for_winner(inputs, models, config, winner, sim.rebates[d][f]) {
            Ok(o) => parts.push(o),
            Err(e) => {
                warn!("market {} draw {d}: {e}", market.market_id);
                failed += 1;
            }
        }
    }
    let total = sim.winners.len();
    if parts.is_empty() || failed as f64 > FAILURE_ABORT_RATE * total as f64 {
        return Err(Error::TooManyFailures { failed, total });
    }
    let mut winners: Vec<String> = sim.winners.clone();
    winners.sort();
    winners.dedup();
    let mut out = mean_outcome(&parts);
    out.participation = winners;
    out.tie = tie;
    out.failed_draws = failed;
    out.total_draws = total;
    Ok(out.finalize())
}

/// Single evaluation at the modal winner and its mean winning rebate.
pub fn simulate_auction_modal(
    inputs: &MarketInputs,
    models: &Models,
    config: &MechanismConfig,
) -> Result<MechanismOutcome> {
    config.validate()?;
    let market = &inputs.model.market;
    let sim = predict_rebates(&models.rebate_model, market, config.n_draws, config.seed, config.resample)?;
    let winner = sim.modal_winner().ok_or_else(|| Error::invalid("no draws"))?.to_string();
    let f = sim.firms.iter().position(|x| *x == winner).expect("winner is a bidder");
    let won: Vec<f64> =
        sim.winners.iter().zip(&sim.rebates).filter(|(w, _)| **w == winner).map(|(_, r)| r[f]).collect();
    let rebate = won.iter().sum::<f64>() / won.len() as f64;
    let mut out = outcome_for_winner(inputs, models, config, &winner, rebate)?;
    out.mechanism = "auction_modal".into();
    Ok(out)
}
