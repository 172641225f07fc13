use nalgebra::DMatrix;

use super::{spillover, ConsumerDraws, DemandParams, Xi};
use crate::error::{Error, Result};
use crate::market_data::{MarketConfig, WicAssignment};

/// Demand of one market with parameters, residuals and WIC assignment bound.
/// Evaluates shares and derivatives at arbitrary prices.
#[derive(Clone, Debug)]
pub struct MarketDemand {
    alpha: f64,
    /// Price-free part of mean utility: `x·beta + spillover + xi`.
    base: Vec<f64>,
    /// Per-draw deviation of the price coefficient.
    slopes: Vec<f64>,
    /// Per-draw inside-good utility shift.
    shifts: Vec<f64>,
    weights: Vec<f64>,
    v_price: Vec<f64>,
    v_const: Vec<f64>,
    income_dev: Vec<f64>,
}

/// Per-draw choice probabilities written to `out`; returns the outside probability.
#[inline]
fn choice_probs(delta: &[f64], prices: &[f64], slope: f64, shift: f64, out: &mut [f64]) -> f64 {
    let mut m = 0.0f64;
    for j in 0..delta.len() {
        let u = delta[j] + shift + slope * prices[j];
        out[j] = u;
        if u > m {
            m = u;
        }
    }
    let e0 = (-m).exp();
    let mut total = e0;
    for u in out.iter_mut() {
        *u = (*u - m).exp();
        total += *u;
    }
    for u in out.iter_mut() {
        *u /= total;
    }
    e0 / total
}

impl MarketDemand {
    pub fn new(
        params: &DemandParams,
        market: &MarketConfig,
        xi: &Xi,
        assignment: &WicAssignment,
        draws: &ConsumerDraws,
    ) -> Result<Self> {
        params.validate(market.characteristic_names.len())?;
        let n = market.product_count();
        if xi.0.len() != n {
            return Err(Error::dimension("xi", n, xi.0.len()));
        }
        if market.prices.len() != n {
            return Err(Error::dimension("prices", n, market.prices.len()));
        }
        let spill = spillover(params, market, assignment);
        let base = market
            .products
            .iter()
            .zip(&spill)
            .zip(&xi.0)
            .map(|((p, s), x)| {
                if p.characteristics.len() != params.beta.len() {
                    return Err(Error::dimension("characteristics", params.beta.len(), p.characteristics.len()));
                }
                let xb: f64 = p.characteristics.iter().zip(&params.beta).map(|(a, b)| a * b).sum();
                Ok(xb + s + x)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_base(params, base, draws))
    }

    /// Demand from a price-free utility vector directly.
    pub fn from_base(params: &DemandParams, base: Vec<f64>, draws: &ConsumerDraws) -> Self {
        let n = draws.len();
        let v_price: Vec<f64> = (0..n).map(|i| draws.v[(i, 0)]).collect();
        let v_const: Vec<f64> = (0..n).map(|i| draws.v[(i, 1)]).collect();
        let income_dev: Vec<f64> = draws.income.iter().map(|y| y - params.income_center).collect();
        let slopes = (0..n).map(|i| params.sigma_price * v_price[i] + params.pi_income * income_dev[i]).collect();
        let shifts = v_const.iter().map(|v| params.sigma_const * v).collect();
        Self { alpha: params.alpha, base, slopes, shifts, weights: draws.weights.clone(), v_price, v_const, income_dev }
    }

    pub fn product_count(&self) -> usize {
        self.base.len()
    }

    pub fn draw_count(&self) -> usize {
        self.weights.len()
    }

    pub fn base(&self) -> &[f64] {
        &self.base
    }

    pub fn shifts(&self) -> &[f64] {
        &self.shifts
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Individual price sensitivities `alpha_i` (positive for downward-sloping demand).
    pub fn price_sensitivities(&self) -> Vec<f64> {
        self.slopes.iter().map(|s| self.alpha - s).collect()
    }

    pub fn mean_price_sensitivity(&self) -> f64 {
        self.weights.iter().zip(&self.slopes).map(|(w, s)| w * (self.alpha - s)).sum()
    }

    pub fn mean_utility(&self, prices: &[f64]) -> Vec<f64> {
        self.base.iter().zip(prices).map(|(b, p)| b - self.alpha * p).collect()
    }

    pub fn shares_at_delta(&self, delta: &[f64], prices: &[f64]) -> Vec<f64> {
        let j = delta.len();
        let mut s = vec![0.0; j];
        let mut buf = vec![0.0; j];
        for i in 0..self.weights.len() {
            choice_probs(delta, prices, self.slopes[i], self.shifts[i], &mut buf);
            let w = self.weights[i];
            for k in 0..j {
                s[k] += w * buf[k];
            }
        }
        s
    }

    pub fn shares(&self, prices: &[f64]) -> Vec<f64> {
        self.shares_at_delta(&self.mean_utility(prices), prices)
    }

    /// Shares and `jac[(j, k)] = ∂s_j/∂p_k`.
    pub fn shares_jacobian(&self, prices: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        let delta = self.mean_utility(prices);
        let n = delta.len();
        let mut s = vec![0.0; n];
        let mut jac = DMatrix::zeros(n, n);
        let mut buf = vec![0.0; n];
        for i in 0..self.weights.len() {
            choice_probs(&delta, prices, self.slopes[i], self.shifts[i], &mut buf);
            let w = self.weights[i];
            let coef = w * (self.slopes[i] - self.alpha);
            for j in 0..n {
                s[j] += w * buf[j];
                let a = coef * buf[j];
                for k in 0..n {
                    jac[(j, k)] -= a * buf[k];
                }
                jac[(j, j)] += a;
            }
        }
        (s, jac)
    }

    /// `∂s_j/∂delta_k` at mean utilities `delta`.
    pub fn delta_jacobian(&self, delta: &[f64], prices: &[f64]) -> DMatrix<f64> {
        let n = delta.len();
        let mut jac = DMatrix::zeros(n, n);
        let mut buf = vec![0.0; n];
        for i in 0..self.weights.len() {
            choice_probs(delta, prices, self.slopes[i], self.shifts[i], &mut buf);
            let w = self.weights[i];
            for j in 0..n {
                let a = w * buf[j];
                for k in 0..n {
                    jac[(j, k)] -= a * buf[k];
                }
                jac[(j, j)] += a;
            }
        }
        jac
    }

    /// Derivatives of shares at fixed `delta` with respect to
    /// `(sigma_price, sigma_const, pi_income)`; shape J×3.
    pub fn nonlinear_jacobian(&self, delta: &[f64], prices: &[f64]) -> DMatrix<f64> {
        let n = delta.len();
        let mut jac = DMatrix::zeros(n, 3);
        let mut buf = vec![0.0; n];
        for i in 0..self.weights.len() {
            choice_probs(delta, prices, self.slopes[i], self.shifts[i], &mut buf);
            let w = self.weights[i];
            let mean_p: f64 = buf.iter().zip(prices).map(|(s, p)| s * p).sum();
            let inside: f64 = buf.iter().sum();
            for j in 0..n {
                let a = w * buf[j];
                jac[(j, 0)] += a * self.v_price[i] * (prices[j] - mean_p);
                jac[(j, 1)] += a * self.v_const[i] * (1.0 - inside);
                jac[(j, 2)] += a * self.income_dev[i] * (prices[j] - mean_p);
            }
        }
        jac
    }

    pub fn elasticities(&self, prices: &[f64]) -> Result<DMatrix<f64>> {
        let (s, jac) = self.shares_jacobian(prices);
        if let Some(j) = s.iter().position(|v| *v <= 0.0) {
            return Err(Error::Numerical(format!("share of product {j} is zero; elasticity undefined")));
        }
        let n = s.len();
        Ok(DMatrix::from_fn(n, n, |i, j| prices[j] / s[i] * jac[(i, j)]))
    }

    /// BLP contraction from the plain-logit starting point.
    pub fn invert(&self, observed: &[f64], prices: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
        let n = self.base.len();
        if observed.len() != n {
            return Err(Error::dimension("observed shares", n, observed.len()));
        }
        if observed.iter().any(|s| !(*s > 0.0 && *s < 1.0)) {
            return Err(Error::invalid("observed shares must lie in (0,1)"));
        }
        let s0 = 1.0 - observed.iter().sum::<f64>();
        if s0 <= 0.0 {
            return Err(Error::invalid("observed inside shares must sum to less than 1"));
        }
        let log_obs: Vec<f64> = observed.iter().map(|s| s.ln()).collect();
        let mut delta: Vec<f64> = log_obs.iter().map(|l| l - s0.ln()).collect();
        let mut residual = f64::INFINITY;
        for _ in 0..=max_iter {
            let s = self.shares_at_delta(&delta, prices);
            residual = 0.0;
            for j in 0..n {
                let step = log_obs[j] - s[j].ln();
                residual = residual.max(step.abs());
                delta[j] += step;
            }
            if !residual.is_finite() {
                break;
            }
            if residual < tol {
                return Ok(delta);
            }
        }
        Err(Error::NonConvergence { what: "share inversion", iterations: max_iter, residual, last: delta })
    }

    /// Expected consumer surplus per consumer in dollars.
    pub fn surplus_per_consumer(&self, prices: &[f64]) -> Result<f64> {
        let delta = self.mean_utility(prices);
        let mut total = 0.0;
        for i in 0..self.weights.len() {
            let a_i = self.alpha - self.slopes[i];
            if a_i <= 0.0 {
                return Err(Error::Numerical(format!("consumer draw {i} has nonpositive price sensitivity {a_i}")));
            }
            let utils = delta.iter().zip(prices).map(|(d, p)| d + self.shifts[i] + self.slopes[i] * p);
            total += self.weights[i] * log_sum_with_outside(utils) / a_i;
        }
        Ok(total)
    }
}

/// `ln(1 + Σ exp(u))`, overflow safe.
pub(crate) fn log_sum_with_outside(utils: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = utils.clone().fold(0.0f64, f64::max);
    let sum: f64 = (-m).exp() + utils.map(|u| (u - m).exp()).sum::<f64>();
    m + sum.ln()
}
