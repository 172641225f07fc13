//! Lower bounds on the WIC price adjustment from the participation condition:
//! a firm's average profit in markets it won must be at least its expected
//! profit had one of its rivals (equally likely) won instead.

use std::collections::BTreeMap;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::equilibrium::solve_post_auction;
use super::profit::{non_wic_profits, profit_decomposition, QuantityModel};
use super::recovery::{recover_winner_costs, RecoveryOptions};
use super::CostSavings;
use crate::demand::{DemandParams, MarketModel};
use crate::error::{Error, Result};
use crate::market_data::WicAssignment;

pub const RHO_GRID: [f64; 20] = [
    0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.09, 0.10, 0.11, 0.12, 0.13, 0.14, 0.15, 0.16, 0.17, 0.18, 0.19,
    0.20,
];

pub struct RhoInputs<'a> {
    pub models: &'a [MarketModel],
    pub params: &'a DemandParams,
    pub savings: &'a CostSavings,
    /// Winning rebate per market id.
    pub rebates: &'a BTreeMap<String, f64>,
    pub quantity: &'a QuantityModel,
    pub recovery: RecoveryOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RhoCalibration {
    pub rho: BTreeMap<String, f64>,
    /// Firms for which no grid value satisfied the condition (set to the top of the grid).
    pub unsatisfied: Vec<String>,
    /// Firms that won no market; their bound is the bottom of the grid.
    pub unsupported: Vec<String>,
    pub win_profit: BTreeMap<String, f64>,
    pub lose_profit: BTreeMap<String, f64>,
    pub rounds: usize,
}

/// Average win and lose profits of `firm` over the markets it won.
pub fn firm_rho_profits(
    inputs: &RhoInputs,
    firm: &str,
    rho_own: f64,
    rho_all: &BTreeMap<String, f64>,
) -> Result<(f64, f64)> {
    let won: Vec<&MarketModel> = inputs.models.iter().filter(|m| m.market.winner.as_deref() == Some(firm)).collect();
    if won.is_empty() {
        return Err(Error::invalid(format!("firm {firm} wins no market")));
    }
    let per_market: Vec<Result<(f64, f64)>> = won
        .par_iter()
        .map(|mm| {
            let market = &mm.market;
            let assignment = WicAssignment::winner(firm);
            let demand = mm.demand(inputs.params, &assignment)?;
            let rec = recover_winner_costs(market, &demand, &market.prices, rho_own, &inputs.recovery)?;
            let shares = demand.shares(&market.prices);
            let rebate = *inputs
                .rebates
                .get(&market.market_id)
                .ok_or_else(|| Error::invariant(&market.market_id, "no winning rebate recorded"))?;
            let win = profit_decomposition(
                &market.prices,
                &rec.marginal_costs,
                &shares,
                market,
                Some(firm),
                rebate,
                inputs.quantity,
            )?[firm]
                .total;

            let base = inputs.savings.remove(&rec.marginal_costs, market, &assignment);
            let own = market.ownership();
            let rivals: Vec<String> = own.firms.iter().filter(|g| g.as_str() != firm).cloned().collect();
            let mut lose = 0.0;
            for g in &rivals {
                let alt = WicAssignment::winner(g);
                let d = mm.demand(inputs.params, &alt)?;
                let costs = inputs.savings.apply(&base, market, &alt);
                let k = own.auction_brand[own.firm_index(g).expect("rival present")];
                let rho_g = rho_all.get(g).copied().unwrap_or(0.0);
                let out = solve_post_auction(&d, &own, &costs, k, rho_g, &inputs.recovery.solver)?;
                let s = d.shares(&out.prices);
                lose += non_wic_profits(&out.prices, &costs, &s, market, inputs.quantity)?[firm];
            }
            if !rivals.is_empty() {
                lose /= rivals.len() as f64;
            }
            Ok((win, lose))
        })
        .collect();
    let mut win = 0.0;
    let mut lose = 0.0;
    for r in per_market {
        let (w, l) = r?;
        win += w;
        lose += l;
    }
    let n = won.len() as f64;
    Ok((win / n, lose / n))
}

/// Greedy firm-by-firm search over `grid`, repeated until no bound changes.
pub fn calibrate_rho(inputs: &RhoInputs, grid: &[f64]) -> Result<RhoCalibration> {
    if grid.is_empty() || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("rho grid must be nonempty and strictly ascending"));
    }
    let firms: Vec<String> = {
        let mut set = std::collections::BTreeSet::new();
        for m in inputs.models {
            set.extend(m.market.firms());
        }
        set.into_iter().collect()
    };
    let winners: Vec<String> = firms
        .iter()
        .filter(|f| inputs.models.iter().any(|m| m.market.winner.as_deref() == Some(f.as_str())))
        .cloned()
        .collect();
    let mut rho: BTreeMap<String, f64> = firms.iter().map(|f| (f.clone(), grid[0])).collect();
    let mut unsatisfied = Vec::new();
    let mut win_profit = BTreeMap::new();
    let mut lose_profit = BTreeMap::new();
    let max_rounds = 25;
    let mut rounds = 0;
    loop {
        rounds += 1;
        let mut changed = false;
        unsatisfied.clear();
        for f in &winners {
            let mut chosen = None;
            let mut last = (0.0, 0.0);
            for r in grid {
                let (w, l) = firm_rho_profits(inputs, f, *r, &rho)?;
                last = (w, l);
                if w >= l {
                    chosen = Some(*r);
                    break;
                }
            }
            let value = match chosen {
                Some(r) => r,
                None => {
                    warn!("firm {f}: win profit below lose profit on the whole grid");
                    unsatisfied.push(f.clone());
                    *grid.last().expect("nonempty grid")
                }
            };
            win_profit.insert(f.clone(), last.0);
            lose_profit.insert(f.clone(), last.1);
            if rho[f] != value {
                rho.insert(f.clone(), value);
                changed = true;
            }
        }
        if !changed || rounds >= max_rounds {
            if changed {
                warn!("rho calibration stopped after {rounds} rounds without settling");
            }
            break;
        }
    }
    let unsupported = firms.iter().filter(|f| !winners.contains(f)).cloned().collect();
    Ok(RhoCalibration { rho, unsatisfied, unsupported, win_profit, lose_profit, rounds })
}
