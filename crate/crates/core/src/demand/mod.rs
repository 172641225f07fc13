//! Random-coefficients logit demand with winner spillovers.
//!
//! Utility of consumer `i` for product `j`:
//!
//! ```text
//! u_ij = x_j·beta − alpha·p_j + spill_j + xi_j
//!        + sigma_const·v_i1 + (sigma_price·v_i0 + pi_income·(inc_i − income_center))·p_j + e_ij
//! ```
//!
//! where `spill_j = delta0·w_f + delta1·w_f·[j is f's auction brand]` for the
//! firm `f` owning `j` and its WIC weight `w_f` (1 for an auction winner). The
//! outside good has utility `e_i0`. The auction-brand dummy in `beta` is a
//! permanent brand effect; `delta0`/`delta1` apply only while a contract is held.

mod draws;
mod gmm;
mod instruments;
mod shares;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::{MarketConfig, WicAssignment};

pub use draws::{ConsumerDraws, DrawConfig, DrawMethod};
pub use gmm::{exogenous_columns, gmm_estimate, DemandEstimate, GmmOptions, MarketXi};
pub use instruments::{InstrumentSet, Instruments};
pub use shares::MarketDemand;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemandParams {
    pub alpha: f64,
    pub beta: Vec<f64>,
    pub delta0: f64,
    pub delta1: f64,
    pub sigma_price: f64,
    pub sigma_const: f64,
    pub pi_income: f64,
    /// Income level subtracted before interacting with price.
    pub income_center: f64,
}

impl DemandParams {
    /// Plain logit with the given mean tastes.
    pub fn logit(alpha: f64, beta: Vec<f64>) -> Self {
        Self {
            alpha,
            beta,
            delta0: 0.0,
            delta1: 0.0,
            sigma_price: 0.0,
            sigma_const: 0.0,
            pi_income: 0.0,
            income_center: 0.0,
        }
    }

    pub fn validate(&self, n_characteristics: usize) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.beta.len() != n_characteristics {
            return Err(Error::dimension("beta", n_characteristics, self.beta.len()));
        }
        if self.sigma_price < 0.0 || self.sigma_const < 0.0 {
            return Err(Error::invalid("heterogeneity loadings must be nonnegative"));
        }
        Ok(())
    }
}

/// Mean-utility residual per product of one market.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Xi(pub Vec<f64>);

impl Xi {
    pub fn zeros(n: usize) -> Self {
        Xi(vec![0.0; n])
    }
}

/// Per-product spillover utility under a WIC assignment.
pub fn spillover(params: &DemandParams, market: &MarketConfig, assignment: &WicAssignment) -> Vec<f64> {
    market
        .products
        .iter()
        .map(|p| {
            let w = assignment.weight(&p.firm_id);
            let brand = if p.is_auction_brand { 1.0 } else { 0.0 };
            w * (params.delta0 + params.delta1 * brand)
        })
        .collect()
}

pub fn mean_utility(params: &DemandParams, market: &MarketConfig, xi: &Xi, winner: Option<&str>) -> Result<Vec<f64>> {
    MarketDemand::new(params, market, xi, &WicAssignment::from_option(winner), &ConsumerDraws::degenerate())
        .map(|d| d.mean_utility(&market.prices))
}

pub fn market_shares(
    params: &DemandParams,
    market: &MarketConfig,
    xi: &Xi,
    winner: Option<&str>,
    draws: &ConsumerDraws,
) -> Result<Vec<f64>> {
    let d = MarketDemand::new(params, market, xi, &WicAssignment::from_option(winner), draws)?;
    Ok(d.shares(&market.prices))
}

/// Mean utilities that reproduce `observed` at the market's prices.
pub fn invert_shares(
    observed: &[f64],
    params: &DemandParams,
    market: &MarketConfig,
    winner: Option<&str>,
    draws: &ConsumerDraws,
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let n = market.product_count();
    let d = MarketDemand::new(params, market, &Xi::zeros(n), &WicAssignment::from_option(winner), draws)?;
    d.invert(observed, &market.prices, tol, max_iter)
}

/// `E[i][j] = (p_j / s_i) · ∂s_i/∂p_j`.
pub fn elasticity_matrix(
    params: &DemandParams,
    market: &MarketConfig,
    xi: &Xi,
    winner: Option<&str>,
    draws: &ConsumerDraws,
) -> Result<nalgebra::DMatrix<f64>> {
    let d = MarketDemand::new(params, market, xi, &WicAssignment::from_option(winner), draws)?;
    d.elasticities(&market.prices).map_err(|e| match e {
        Error::Numerical(m) => Error::invariant(&market.market_id, m),
        other => other,
    })
}

pub const CONTRACTION_TOL: f64 = 1e-12;
pub const CONTRACTION_MAX_ITER: usize = 2000;

/// One market bundled with its demand residuals and consumer draws.
#[derive(Clone, Debug)]
pub struct MarketModel {
    pub market: MarketConfig,
    pub xi: Xi,
    pub draws: ConsumerDraws,
}

impl MarketModel {
    pub fn demand(&self, params: &DemandParams, assignment: &WicAssignment) -> Result<MarketDemand> {
        MarketDemand::new(params, &self.market, &self.xi, assignment, &self.draws)
    }

    /// Demand under the market's observed winner.
    pub fn observed_demand(&self, params: &DemandParams) -> Result<MarketDemand> {
        self.demand(params, &WicAssignment::from_option(self.market.winner.as_deref()))
    }
}
