use serde::{Deserialize, Serialize};

use crate::demand::MarketDemand;
use crate::error::{Error, Result};
use crate::market_data::MarketConfig;
use crate::supply::QuantityModel;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WicChoice {
    /// Taste shocks integrated out: expected maximum utility.
    #[default]
    LogSum,
    /// Each simulated consumer takes the best available product by mean utility.
    Argmax,
}

impl WicChoice {
    pub fn as_str(&self) -> &'static str {
        match self {
            WicChoice::LogSum => "logsum",
            WicChoice::Argmax => "argmax",
        }
    }
}

impl std::str::FromStr for WicChoice {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "logsum" => Ok(WicChoice::LogSum),
            "argmax" => Ok(WicChoice::Argmax),
            other => Err(format!("unknown WIC choice `{other}` (expected logsum or argmax)")),
        }
    }
}

/// Non-WIC consumer surplus in dollars.
pub fn consumer_surplus_nonwic(
    demand: &MarketDemand,
    prices: &[f64],
    market: &MarketConfig,
    quantity: &QuantityModel,
) -> Result<f64> {
    let per = demand.surplus_per_consumer(prices).map_err(|e| Error::invariant(&market.market_id, e.to_string()))?;
    Ok(quantity.non_wic_quantity(market, per))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WicOutcome {
    pub surplus: f64,
    /// Ounces served per product (zero for unavailable products).
    pub served: Vec<f64>,
    pub outside: f64,
}

/// WIC consumers pay nothing, so only the price-free part of utility matters.
pub fn consumer_surplus_wic(
    demand: &MarketDemand,
    available: &[usize],
    market: &MarketConfig,
    quantity: &QuantityModel,
    money_metric_alpha: f64,
    choice: WicChoice,
) -> Result<WicOutcome> {
    let n = demand.product_count();
    if available.iter().any(|j| *j >= n) {
        return Err(Error::invalid("available WIC product out of range"));
    }
    if !(money_metric_alpha > 0.0) {
        return Err(Error::invalid(format!(
            "money-metric price coefficient must be positive, got {money_metric_alpha}"
        )));
    }
    let q = quantity.wic_quantity(market);
    let base = demand.base();
    let mut served = vec![0.0; n];
    let mut outside = 0.0;
    let mut utility = 0.0;
    let mut buf = vec![0.0; available.len()];
    for (i, w) in demand.weights().iter().enumerate() {
        let shift = demand.shifts()[i];
        for (b, j) in buf.iter_mut().zip(available) {
            *b = base[*j] + shift;
        }
        match choice {
            WicChoice::LogSum => {
                let m = buf.iter().copied().fold(0.0f64, f64::max);
                let e0 = (-m).exp();
                let total: f64 = e0 + buf.iter().map(|u| (u - m).exp()).sum::<f64>();
                utility += w * (m + total.ln());
                for (b, j) in buf.iter().zip(available) {
                    served[*j] += w * (b - m).exp() / total;
                }
                outside += w * e0 / total;
            }
            WicChoice::Argmax => {
                let best = buf.iter().enumerate().fold(None, |acc: Option<(usize, f64)>, (r, u)| match acc {
                    Some((_, bu)) if bu >= *u => acc,
                    _ => Some((r, *u)),
                });
                match best {
                    Some((r, u)) if u > 0.0 => {
                        utility += w * u;
                        served[available[r]] += w;
                    }
                    _ => outside += w,
                }
            }
        }
    }
    Ok(WicOutcome {
        surplus: q * utility / money_metric_alpha,
        served: served.into_iter().map(|s| s * q).collect(),
        outside: outside * q,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::{ConsumerDraws, DemandParams};
    use crate::market_data::fixtures::three_firm_market;

    fn unit_market() -> MarketConfig {
        let mut m = three_firm_market();
        m.market_size = 1.0;
        m.wic_infants = 1.0;
        m
    }

    #[test]
    fn single_product_logsum() {
        let m = unit_market();
        let p = DemandParams::logit(1.0, vec![]);
        let d = MarketDemand::from_base(&p, vec![0.0; 6], &ConsumerDraws::degenerate());
        let q = QuantityModel { ounces_per_infant: 1.0 };
        let out = consumer_surplus_wic(&d, &[0], &m, &q, 2.0, WicChoice::LogSum).unwrap();
        assert!((out.surplus - 2f64.ln() / 2.0).abs() < 1e-15);
        assert!((out.served[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn more_products_never_hurt() {
        let m = unit_market();
        let p = DemandParams::logit(1.0, vec![]);
        let d = MarketDemand::from_base(&p, vec![0.3, -0.2, 1.0, 0.0, -1.0, 0.5], &ConsumerDraws::degenerate());
        let q = QuantityModel::default();
        for choice in [WicChoice::LogSum, WicChoice::Argmax] {
            let one = consumer_surplus_wic(&d, &[0], &m, &q, 1.0, choice).unwrap().surplus;
            let three = consumer_surplus_wic(&d, &[0, 2, 4], &m, &q, 1.0, choice).unwrap().surplus;
            assert!(three >= one);
        }
    }

    #[test]
    fn argmax_takes_positive_brand() {
        let m = unit_market();
        let p = DemandParams::logit(1.0, vec![]);
        let d = MarketDemand::from_base(&p, vec![0.1, 0.0, -0.5, 0.0, 0.2, 0.0], &ConsumerDraws::degenerate());
        let q = QuantityModel { ounces_per_infant: 1.0 };
        let out = consumer_surplus_wic(&d, &[0, 2, 4], &m, &q, 1.0, WicChoice::Argmax).unwrap();
        assert_eq!(out.outside, 0.0);
        assert_eq!(out.served[4], 1.0);
        let none = consumer_surplus_wic(&d, &[], &m, &q, 1.0, WicChoice::LogSum).unwrap();
        assert_eq!(none.surplus, 0.0);
        assert_eq!(none.outside, 1.0);
    }
}
