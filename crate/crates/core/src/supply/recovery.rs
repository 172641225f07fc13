use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::equilibrium::{solve_bertrand, SolverOptions};
use crate::demand::MarketDemand;
use crate::error::{Error, Result};
use crate::market_data::{MarketConfig, Ownership};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodTag {
    LoserFoc,
    WinnerLinearMap,
    WinnerWicRoot,
}

impl MethodTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            MethodTag::LoserFoc => "loser_foc",
            MethodTag::WinnerLinearMap => "winner_linear_map",
            MethodTag::WinnerWicRoot => "winner_wic_root",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostRecovery {
    pub market_id: String,
    pub product_ids: Vec<String>,
    pub marginal_costs: Vec<f64>,
    pub markups: Vec<f64>,
    pub winner_wic_cost: Option<f64>,
    pub methods: Vec<MethodTag>,
    /// More than one sign change was seen while bracketing the WIC-brand cost.
    pub multiple_roots: bool,
    pub bracket_expanded: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecoveryOptions {
    pub root_tol: f64,
    pub scan_points: usize,
    pub solver: SolverOptions,
}

impl Default for RecoveryOptions {
    fn default() -> Self {
        Self { root_tol: 1e-8, scan_points: 9, solver: SolverOptions::default() }
    }
}

/// `A[r][c] = ∂s_{products[c]}/∂p_{products[r]}`.
fn block(jac: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |r, c| jac[(cols[c], rows[r])])
}

/// Costs of every product whose firm is not `winner`, from that firm's own conditions.
pub fn recover_loser_costs(
    demand: &MarketDemand,
    own: &Ownership,
    prices: &[f64],
    winner: Option<usize>,
) -> Result<Vec<Option<f64>>> {
    let (s, jac) = demand.shares_jacobian(prices);
    let mut out = vec![None; prices.len()];
    for f in 0..own.firms.len() {
        if Some(f) == winner {
            continue;
        }
        let products = own.products_of(f);
        let a = block(&jac, &products, &products);
        let sf = DVector::from_iterator(products.len(), products.iter().map(|j| s[*j]));
        let x =
            a.lu().solve(&sf).ok_or_else(|| Error::Singular(format!("derivative block of firm {}", own.firms[f])))?;
        for (r, j) in products.iter().enumerate() {
            out[*j] = Some(prices[*j] + x[r]);
        }
    }
    Ok(out)
}

/// Costs of the winner's non-auction products as `a + b·c_wic`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearMap {
    pub products: Vec<usize>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl LinearMap {
    pub fn at(&self, c_wic: f64) -> Vec<f64> {
        self.a.iter().zip(&self.b).map(|(a, b)| a + b * c_wic).collect()
    }
}

pub fn winner_linear_map(demand: &MarketDemand, own: &Ownership, prices: &[f64], winner: usize) -> Result<LinearMap> {
    let k = own.auction_brand[winner];
    let others: Vec<usize> = own.products_of(winner).into_iter().filter(|j| *j != k).collect();
    if others.is_empty() {
        return Err(Error::invalid(format!("winner {} has no product besides its auction brand", own.firms[winner])));
    }
    let (s, jac) = demand.shares_jacobian(prices);
    let b_mat = block(&jac, &others, &others);
    let d = DVector::from_iterator(others.len(), others.iter().map(|j| jac[(k, *j)]));
    let rhs = DVector::from_iterator(others.len(), others.iter().map(|j| s[*j])) + &d * prices[k];
    let lu = b_mat.lu();
    let x = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Singular(format!("non-WIC derivative block of winner {}", own.firms[winner])))?;
    let y = lu
        .solve(&d)
        .ok_or_else(|| Error::Singular(format!("non-WIC derivative block of winner {}", own.firms[winner])))?;
    Ok(LinearMap {
        a: others.iter().enumerate().map(|(r, j)| prices[*j] + x[r]).collect(),
        b: (0..others.len()).map(|r| -y[r]).collect(),
        products: others,
    })
}

fn finish(
    market_id: &str,
    ids: Vec<String>,
    prices: &[f64],
    costs: Vec<f64>,
    methods: Vec<MethodTag>,
) -> Result<CostRecovery> {
    if costs.iter().any(|c| !c.is_finite()) {
        return Err(Error::invariant(market_id, "recovered a non-finite marginal cost"));
    }
    let markups = costs.iter().zip(prices).map(|(c, p)| (p - c) / p).collect();
    Ok(CostRecovery {
        market_id: market_id.to_string(),
        product_ids: ids,
        marginal_costs: costs,
        markups,
        winner_wic_cost: None,
        methods,
        multiple_roots: false,
        bracket_expanded: false,
    })
}

/// Costs of all products with the winner's WIC-brand cost found by matching
/// the perceived Bertrand price to `p_wic / (1 + rho)`.
pub fn recover_winner_costs(
    market: &MarketConfig,
    demand: &MarketDemand,
    prices: &[f64],
    rho: f64,
    opts: &RecoveryOptions,
) -> Result<CostRecovery> {
    let own = market.ownership();
    let winner_id = market
        .winner
        .as_deref()
        .ok_or_else(|| Error::invariant(&market.market_id, "no winner to recover costs for"))?;
    let w = own
        .firm_index(winner_id)
        .ok_or_else(|| Error::invariant(&market.market_id, format!("winner {winner_id} not present")))?;
    if !(rho >= 0.0) {
        return Err(Error::invalid(format!("rho must be nonnegative, got {rho}")));
    }
    let k = own.auction_brand[w];
    let losers = recover_loser_costs(demand, &own, prices, Some(w))?;
    let map = winner_linear_map(demand, &own, prices, w)?;
    let target = prices[k] / (1.0 + rho);

    let costs_at = |c_wic: f64| -> Vec<f64> {
        let mut c: Vec<f64> = losers.iter().map(|v| v.unwrap_or(0.0)).collect();
        for (j, v) in map.products.iter().zip(map.at(c_wic)) {
            c[*j] = v;
        }
        c[k] = c_wic;
        c
    };
    let residual = |c_wic: f64| -> Result<f64> {
        let p = solve_bertrand(demand, &own, &costs_at(c_wic), &opts.solver)?;
        Ok(p[k] - target)
    };

    let scan = |lo: f64, hi: f64| -> Result<(Vec<f64>, Vec<f64>)> {
        let n = opts.scan_points.max(2);
        let xs: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
        let rs = xs.iter().map(|x| residual(*x)).collect::<Result<Vec<_>>>()?;
        Ok((xs, rs))
    };
    let sign_changes = |rs: &[f64]| -> Vec<usize> {
        (0..rs.len() - 1).filter(|i| rs[*i] == 0.0 || (rs[*i] < 0.0) != (rs[*i + 1] < 0.0)).collect()
    };

    let (mut lo, mut hi) = (0.0, prices[k]);
    let (mut xs, mut rs) = scan(lo, hi)?;
    let mut changes = sign_changes(&rs);
    let mut expanded = false;
    if changes.is_empty() {
        warn!("market {}: no sign change for the WIC-brand cost on [{lo}, {hi}]; expanding once", market.market_id);
        let width = hi - lo;
        lo -= width;
        hi += width;
        expanded = true;
        (xs, rs) = scan(lo, hi)?;
        changes = sign_changes(&rs);
        if changes.is_empty() {
            return Err(Error::NoBracket { lo, hi, r_lo: rs[0], r_hi: *rs.last().unwrap_or(&f64::NAN) });
        }
    }
    let multiple = changes.len() > 1;
    if multiple {
        warn!(
            "market {}: {} sign changes for the WIC-brand cost; taking the lowest root",
            market.market_id,
            changes.len()
        );
    }
    let i = changes[0];
    let (mut a, mut b, mut ra) = (xs[i], xs[i + 1], rs[i]);
    let c_wic = if ra == 0.0 {
        a
    } else {
        while b - a > opts.root_tol {
            let mid = 0.5 * (a + b);
            let rm = residual(mid)?;
            if rm == 0.0 {
                a = mid;
                b = mid;
                break;
            }
            if (rm < 0.0) == (ra < 0.0) {
                a = mid;
                ra = rm;
            } else {
                b = mid;
            }
        }
        0.5 * (a + b)
    };

    let costs = costs_at(c_wic);
    let methods = (0..prices.len())
        .map(|j| {
            if j == k {
                MethodTag::WinnerWicRoot
            } else if own.firm_of[j] == w {
                MethodTag::WinnerLinearMap
            } else {
                MethodTag::LoserFoc
            }
        })
        .collect();
    let ids = market.products.iter().map(|p| p.product_id.clone()).collect();
    let mut rec = finish(&market.market_id, ids, prices, costs, methods)?;
    rec.winner_wic_cost = Some(c_wic);
    rec.multiple_roots = multiple;
    rec.bracket_expanded = expanded;
    Ok(rec)
}

/// Costs of a market at `prices`; markets without a winner are treated as full Bertrand.
pub fn recover_costs(
    market: &MarketConfig,
    demand: &MarketDemand,
    prices: &[f64],
    rho_winner: f64,
    opts: &RecoveryOptions,
) -> Result<CostRecovery> {
    if market.winner.is_some() {
        return recover_winner_costs(market, demand, prices, rho_winner, opts);
    }
    let own = market.ownership();
    let costs: Vec<f64> =
        recover_loser_costs(demand, &own, prices, None)?.into_iter().map(|c| c.unwrap_or(f64::NAN)).collect();
    let ids = market.products.iter().map(|p| p.product_id.clone()).collect();
    finish(&market.market_id, ids, prices, costs, vec![MethodTag::LoserFoc; prices.len()])
}
