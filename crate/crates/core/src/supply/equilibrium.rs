//! Bertrand–Nash pricing with optionally fixed prices.
//!
//! Row `j` of the first-order system is the condition for `p_j`:
//! `Σ_{j' same firm} ∂s_{j'}/∂p_j · (p_{j'} − c_{j'}) + s_j = 0`.
//! Prices held fixed contribute to their owner's conditions but have no row.

use log::debug;
use nalgebra::{DMatrix, DVector};

use crate::demand::MarketDemand;
use crate::error::{Error, Result};
use crate::market_data::Ownership;

#[derive(Clone, Debug, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 5000, damping: 0.5 }
    }
}

/// Residuals of the conditions for all products not in `fixed`, in product order.
pub fn foc_residual(
    demand: &MarketDemand,
    ownership: &Ownership,
    prices: &[f64],
    costs: &[f64],
    fixed: &[usize],
) -> Vec<f64> {
    let (s, jac) = demand.shares_jacobian(prices);
    residual_from(&s, &jac, ownership, prices, costs, fixed)
}

fn residual_from(
    s: &[f64],
    jac: &DMatrix<f64>,
    own: &Ownership,
    prices: &[f64],
    costs: &[f64],
    fixed: &[usize],
) -> Vec<f64> {
    let n = s.len();
    (0..n)
        .filter(|j| !fixed.contains(j))
        .map(|j| {
            let mut r = s[j];
            for k in 0..n {
                if own.same_firm(j, k) {
                    r += jac[(k, j)] * (prices[k] - costs[k]);
                }
            }
            r
        })
        .collect()
}

fn check_inputs(demand: &MarketDemand, own: &Ownership, costs: &[f64]) -> Result<()> {
    let n = demand.product_count();
    if costs.len() != n {
        return Err(Error::dimension("costs", n, costs.len()));
    }
    if own.product_count() != n {
        return Err(Error::dimension("ownership", n, own.product_count()));
    }
    if costs.iter().any(|c| !c.is_finite()) {
        return Err(Error::invalid("costs must be finite"));
    }
    Ok(())
}

/// Equilibrium with `fixed` prices held at the values in `start`.
pub fn solve_constrained(
    demand: &MarketDemand,
    own: &Ownership,
    costs: &[f64],
    start: &[f64],
    fixed: &[usize],
    opts: &SolverOptions,
) -> Result<Vec<f64>> {
    check_inputs(demand, own, costs)?;
    match fixed_point(demand, own, costs, start, fixed, opts) {
        Ok(p) => polish(demand, own, costs, p, fixed),
        Err(e) => {
            debug!("fixed point failed ({e}); trying Newton");
            let p = newton(demand, own, costs, start, fixed, opts)?;
            polish(demand, own, costs, p, fixed)
        }
    }
}

fn fixed_point(
    demand: &MarketDemand,
    own: &Ownership,
    costs: &[f64],
    start: &[f64],
    fixed: &[usize],
    opts: &SolverOptions,
) -> Result<Vec<f64>> {
    let n = costs.len();
    let mut p = start.to_vec();
    let blocks: Vec<Vec<usize>> =
        (0..own.firms.len()).map(|f| own.products_of(f).into_iter().filter(|j| !fixed.contains(j)).collect()).collect();
    let mut change = f64::INFINITY;
    for _ in 0..opts.max_iter {
        let (s, jac) = demand.shares_jacobian(&p);
        let mut target = p.clone();
        for (f, free) in blocks.iter().enumerate() {
            if free.is_empty() {
                continue;
            }
            let m = free.len();
            let a = DMatrix::from_fn(m, m, |r, c| jac[(free[c], free[r])]);
            let rhs = DVector::from_fn(m, |r, _| {
                let j = free[r];
                let mut v = s[j];
                for k in own.products_of(f) {
                    if fixed.contains(&k) {
                        v += jac[(k, j)] * (p[k] - costs[k]);
                    }
                }
                v
            });
            let markup = a
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::Singular(format!("own-price derivative block of firm {}", own.firms[f])))?;
            for (r, j) in free.iter().enumerate() {
                target[*j] = costs[*j] - markup[r];
            }
        }
        change = (0..n).map(|j| (target[j] - p[j]).abs()).fold(0.0, f64::max);
        if !change.is_finite() {
            break;
        }
        if change < opts.tol {
            return Ok(target);
        }
        for j in 0..n {
            p[j] += opts.damping * (target[j] - p[j]);
        }
    }
    Err(Error::NonConvergence { what: "price fixed point", iterations: opts.max_iter, residual: change, last: p })
}

fn free_residual(demand: &MarketDemand, own: &Ownership, costs: &[f64], p: &[f64], fixed: &[usize]) -> DVector<f64> {
    DVector::from_vec(foc_residual(demand, own, p, costs, fixed))
}

fn newton(
    demand: &MarketDemand,
    own: &Ownership,
    costs: &[f64],
    start: &[f64],
    fixed: &[usize],
    opts: &SolverOptions,
) -> Result<Vec<f64>> {
    let free: Vec<usize> = (0..costs.len()).filter(|j| !fixed.contains(j)).collect();
    let mut p = start.to_vec();
    let mut r = free_residual(demand, own, costs, &p, fixed);
    for _ in 0..200 {
        let norm = r.amax();
        if norm < 1e-13 {
            return Ok(p);
        }
        let jac = fd_jacobian(demand, own, costs, &p, fixed, &free);
        let step = jac.lu().solve(&(-&r)).ok_or_else(|| Error::Singular("first-order-condition Jacobian".into()))?;
        let mut t = 1.0;
        loop {
            let mut trial = p.clone();
            for (i, j) in free.iter().enumerate() {
                trial[*j] += t * step[i];
            }
            let rt = free_residual(demand, own, costs, &trial, fixed);
            if rt.iter().all(|v| v.is_finite()) && rt.amax() < norm {
                let small = step.amax() * t < opts.tol;
                p = trial;
                r = rt;
                if small {
                    return Ok(p);
                }
                break;
            }
            t *= 0.5;
            if t < 1e-8 {
                return Err(Error::NonConvergence {
                    what: "pricing Newton solve",
                    iterations: 200,
                    residual: norm,
                    last: p,
                });
            }
        }
    }
    Err(Error::NonConvergence { what: "pricing Newton solve", iterations: 200, residual: r.amax(), last: p })
}

fn fd_jacobian(
    demand: &MarketDemand,
    own: &Ownership,
    costs: &[f64],
    p: &[f64],
    fixed: &[usize],
    free: &[usize],
) -> DMatrix<f64> {
    let m = free.len();
    let mut jac = DMatrix::zeros(m, m);
    for (c, j) in free.iter().enumerate() {
        let h = 1e-7 * (1.0 + p[*j].abs());
        let mut up = p.to_vec();
        up[*j] += h;
        let mut dn = p.to_vec();
        dn[*j] -= h;
        let ru = free_residual(demand, own, costs, &up, fixed);
        let rd = free_residual(demand, own, costs, &dn, fixed);
        jac.set_column(c, &((ru - rd) / (2.0 * h)));
    }
    jac
}

/// A few Newton steps from a converged iterate to push the residual to rounding level.
fn polish(demand: &MarketDemand, own: &Ownership, costs: &[f64], mut p: Vec<f64>, fixed: &[usize]) -> Result<Vec<f64>> {
    let free: Vec<usize> = (0..costs.len()).filter(|j| !fixed.contains(j)).collect();
    let mut r = free_residual(demand, own, costs, &p, fixed);
    for _ in 0..3 {
        if r.amax() < 1e-13 {
            break;
        }
        let jac = fd_jacobian(demand, own, costs, &p, fixed, &free);
        let Some(step) = jac.lu().solve(&(-&r)) else { break };
        let mut trial = p.clone();
        for (i, j) in free.iter().enumerate() {
            trial[*j] += step[i];
        }
        let rt = free_residual(demand, own, costs, &trial, fixed);
        if !(rt.amax() < r.amax()) {
            break;
        }
        p = trial;
        r = rt;
    }
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite equilibrium price".into()));
    }
    Ok(p)
}

fn logit_start(demand: &MarketDemand, costs: &[f64]) -> Vec<f64> {
    let a = demand.mean_price_sensitivity().max(1e-3);
    costs.iter().map(|c| c + 1.0 / a).collect()
}

/// Unconstrained Bertrand–Nash prices.
pub fn solve_bertrand(demand: &MarketDemand, own: &Ownership, costs: &[f64], opts: &SolverOptions) -> Result<Vec<f64>> {
    check_inputs(demand, own, costs)?;
    let start = logit_start(demand, costs);
    solve_constrained(demand, own, costs, &start, &[], opts)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PostAuctionPrices {
    /// Full Bertrand prices of the first stage.
    pub perceived: Vec<f64>,
    pub prices: Vec<f64>,
}

/// Perceived Bertrand stage, scale each `(brand, rho)` price by `1 + rho`,
/// then re-solve the remaining products holding those prices fixed.
pub fn solve_sequential(
    demand: &MarketDemand,
    own: &Ownership,
    costs: &[f64],
    adjustments: &[(usize, f64)],
    opts: &SolverOptions,
) -> Result<PostAuctionPrices> {
    for (j, rho) in adjustments {
        if *j >= costs.len() {
            return Err(Error::invalid(format!("adjusted product index {j} out of range")));
        }
        if !(*rho >= 0.0 && rho.is_finite()) {
            return Err(Error::invalid(format!("price adjustment must be nonnegative, got {rho}")));
        }
    }
    let perceived = solve_bertrand(demand, own, costs, opts)?;
    if adjustments.is_empty() {
        return Ok(PostAuctionPrices { prices: perceived.clone(), perceived });
    }
    let mut start = perceived.clone();
    let fixed: Vec<usize> = adjustments.iter().map(|(j, _)| *j).collect();
    for (j, rho) in adjustments {
        start[*j] = (1.0 + rho) * perceived[*j];
    }
    let prices = solve_constrained(demand, own, costs, &start, &fixed, opts)?;
    Ok(PostAuctionPrices { perceived, prices })
}

pub fn solve_post_auction(
    demand: &MarketDemand,
    own: &Ownership,
    costs: &[f64],
    winner_brand: usize,
    rho_winner: f64,
    opts: &SolverOptions,
) -> Result<PostAuctionPrices> {
    solve_sequential(demand, own, costs, &[(winner_brand, rho_winner)], opts)
}
