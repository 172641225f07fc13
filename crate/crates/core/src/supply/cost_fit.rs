use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{CostRecovery, CostSavings, SupplyParams};
use crate::error::{Error, Result};
use crate::linalg;
use crate::market_data::MarketConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostObservation {
    pub market_id: String,
    pub product_id: String,
    pub firm_id: String,
    pub is_auction_brand: bool,
    pub won: bool,
    pub characteristics: BTreeMap<String, f64>,
    pub shifters: BTreeMap<String, f64>,
    pub cost: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CostPanel {
    pub observations: Vec<CostObservation>,
}

impl CostPanel {
    pub fn from_recoveries(markets: &[MarketConfig], recoveries: &[CostRecovery]) -> Result<Self> {
        let mut observations = Vec::new();
        for rec in recoveries {
            let m = markets
                .iter()
                .find(|m| m.market_id == rec.market_id)
                .ok_or_else(|| Error::invariant(&rec.market_id, "recovery has no matching market"))?;
            for (j, p) in m.products.iter().enumerate() {
                observations.push(CostObservation {
                    market_id: m.market_id.clone(),
                    product_id: p.product_id.clone(),
                    firm_id: p.firm_id.clone(),
                    is_auction_brand: p.is_auction_brand,
                    won: m.winner.as_deref() == Some(p.firm_id.as_str()),
                    characteristics: m
                        .characteristic_names
                        .iter()
                        .cloned()
                        .zip(p.characteristics.iter().copied())
                        .collect(),
                    shifters: m.cost_shifters.get(&p.firm_id).cloned().unwrap_or_default(),
                    cost: rec.marginal_costs[j],
                });
            }
        }
        Ok(Self { observations })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostFitOptions {
    /// Characteristics entering the cost function. `None` takes all except
    /// `const`, `auction_brand` and `firm_*`, which the design already spans.
    pub characteristics: Option<Vec<String>>,
    pub shifter_squares: bool,
}

impl Default for CostFitOptions {
    fn default() -> Self {
        Self { characteristics: None, shifter_squares: true }
    }
}

fn is_spanned(name: &str) -> bool {
    name == "const" || name == "auction_brand" || name.starts_with("firm_")
}

/// Least squares of recovered costs on firm and win-interaction dummies,
/// characteristics and cost shifters.
pub fn fit_cost_function(panel: &CostPanel, opts: &CostFitOptions) -> Result<SupplyParams> {
    let obs = &panel.observations;
    if obs.is_empty() {
        return Err(Error::invalid("empty cost panel"));
    }
    let firms: Vec<String> = obs.iter().map(|o| o.firm_id.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let winners: BTreeSet<&str> = obs.iter().filter(|o| o.won).map(|o| o.firm_id.as_str()).collect();
    let base_win = firms.iter().find(|f| winners.contains(f.as_str())).cloned();
    let chars: Vec<String> = match &opts.characteristics {
        Some(c) => c.clone(),
        None => obs[0].characteristics.keys().filter(|k| !is_spanned(k)).cloned().collect(),
    };
    let shifters: Vec<String> = obs[0].shifters.keys().cloned().collect();

    let mut names: Vec<String> = vec!["const".into()];
    names.extend(firms.iter().skip(1).map(|f| format!("firm_{f}")));
    names.push("auction_brand".into());
    names.push("win".into());
    let interacted: Vec<&String> = firms.iter().filter(|f| Some(*f) != base_win.as_ref()).collect();
    names.extend(interacted.iter().map(|f| format!("win_x_firm_{f}")));
    names.push("win_x_auction_brand".into());
    names.extend(interacted.iter().map(|f| format!("win_x_auction_brand_x_firm_{f}")));
    names.extend(chars.iter().map(|c| format!("x_{c}")));
    for s in &shifters {
        names.push(format!("z_{s}"));
        if opts.shifter_squares {
            names.push(format!("z_{s}^2"));
        }
    }

    let n = obs.len();
    let mut x = DMatrix::zeros(n, names.len());
    let mut y = DVector::zeros(n);
    for (r, o) in obs.iter().enumerate() {
        let mut row: Vec<f64> = vec![1.0];
        row.extend(firms.iter().skip(1).map(|f| (o.firm_id == *f) as u8 as f64));
        let ab = o.is_auction_brand as u8 as f64;
        let win = o.won as u8 as f64;
        row.push(ab);
        row.push(win);
        row.extend(interacted.iter().map(|f| win * (o.firm_id == **f) as u8 as f64));
        row.push(win * ab);
        row.extend(interacted.iter().map(|f| win * ab * (o.firm_id == **f) as u8 as f64));
        for c in &chars {
            row.push(*o.characteristics.get(c).ok_or_else(|| {
                Error::invariant(&o.market_id, format!("product {} lacks characteristic {c}", o.product_id))
            })?);
        }
        for s in &shifters {
            let v = *o
                .shifters
                .get(s)
                .ok_or_else(|| Error::invariant(&o.market_id, format!("firm {} lacks cost shifter {s}", o.firm_id)))?;
            row.push(v);
            if opts.shifter_squares {
                row.push(v * v);
            }
        }
        for (c, v) in row.into_iter().enumerate() {
            x[(r, c)] = v;
        }
        y[r] = o.cost;
    }

    let keep: Vec<usize> = (0..names.len()).filter(|c| x.column(*c).iter().any(|v| *v != 0.0)).collect();
    let unidentified: Vec<String> = (0..names.len()).filter(|c| !keep.contains(c)).map(|c| names[c].clone()).collect();
    let kept_names: Vec<String> = keep.iter().map(|c| names[*c].clone()).collect();
    let fit = linalg::ols(&x.select_columns(keep.iter()), &y, &kept_names)?;

    let gamma: BTreeMap<String, f64> = kept_names.iter().cloned().zip(fit.coefficients.iter().copied()).collect();
    let gamma_std_errors = kept_names.iter().cloned().zip(fit.std_errors.iter().copied()).collect();
    let coef = |name: &str| gamma.get(name).copied().unwrap_or(0.0);
    let mut savings = CostSavings::default();
    for f in &firms {
        savings.all_brands.insert(f.clone(), coef("win") + coef(&format!("win_x_firm_{f}")));
        savings
            .auction_brand
            .insert(f.clone(), coef("win_x_auction_brand") + coef(&format!("win_x_auction_brand_x_firm_{f}")));
    }
    Ok(SupplyParams {
        delta_c_nonwic: coef("win"),
        delta_c_wic: coef("win_x_auction_brand"),
        gamma,
        gamma_std_errors,
        savings,
        rho: BTreeMap::new(),
        omega_sd: fit.sigma2.sqrt(),
        unidentified,
    })
}
