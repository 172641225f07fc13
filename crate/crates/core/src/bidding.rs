//! Reduced-form rebate bids and auction winners.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::market_data::{
    AuctionRecord, MarketConfig, DEMO_INCOME, SHIFTER_DISTANCE, SHIFTER_ELECTRICITY, SHIFTER_RAW_MILK,
};
use crate::seeds;

pub const DEFAULT_REBATE_DRAWS: usize = 50;

const BASE_COVARIATES: [&str; 10] = [
    "log_wholesale",
    "log_rival_wholesale",
    "log_distance",
    "log_rival_distance",
    "log_income",
    "log_wic_infants",
    "log_non_wic_infants",
    "log_raw_milk",
    "log_electricity",
    "log_contract_length",
];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResampleMode {
    /// Each firm draws its own residual.
    #[default]
    Independent,
    /// All firms take the residuals of one sampled auction.
    Joint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RebateModel {
    /// Covariates, then `firm_<id>` dummies for all but the first firm, then `const`.
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub firms: Vec<String>,
    pub residual_pool: Vec<f64>,
    /// Residuals grouped by auction for joint resampling.
    pub joint_pool: Vec<BTreeMap<String, f64>>,
    pub r2: f64,
    /// Contract length used for prediction when none is given.
    pub default_contract_length: f64,
}

fn positive_log(v: f64, what: &str, market_id: &str, firm: &str) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v.ln())
    } else {
        Err(Error::invariant(market_id, format!("record for firm {firm}: {what} = {v} cannot be logged")))
    }
}

/// Logged covariates of `firm` bidding in `market`, in `BASE_COVARIATES` order.
/// Rival values are averages over all other firms of the market.
pub fn bid_covariates(market: &MarketConfig, firm: &str, wholesale: f64, contract_length: f64) -> Result<Vec<f64>> {
    let id = market.market_id.as_str();
    let rivals: Vec<String> = market.firms().into_iter().filter(|f| f != firm).collect();
    if rivals.is_empty() {
        return Err(Error::invariant(id, "an auction needs at least two firms"));
    }
    let mut rival_w = 0.0;
    let mut rival_d = 0.0;
    for r in &rivals {
        rival_w += market.wholesale(r)?;
        rival_d += market.shifter(r, SHIFTER_DISTANCE)?;
    }
    let nr = rivals.len() as f64;
    Ok(vec![
        positive_log(wholesale, "wholesale", id, firm)?,
        positive_log(rival_w / nr, "rival wholesale", id, firm)?,
        positive_log(market.shifter(firm, SHIFTER_DISTANCE)?, "distance", id, firm)?,
        positive_log(rival_d / nr, "rival distance", id, firm)?,
        positive_log(market.demographic(DEMO_INCOME)?, "income", id, firm)?,
        positive_log(market.wic_infants, "WIC infants", id, firm)?,
        positive_log(market.non_wic_infants, "non-WIC infants", id, firm)?,
        positive_log(market.shifter(firm, SHIFTER_RAW_MILK)?, "raw milk price", id, firm)?,
        positive_log(market.shifter(firm, SHIFTER_ELECTRICITY)?, "electricity rate", id, firm)?,
        positive_log(contract_length, "contract length", id, firm)?,
    ])
}

impl RebateModel {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.coefficients[i])
    }

    fn design_row(&self, market: &MarketConfig, firm: &str, wholesale: f64, contract_length: f64) -> Result<Vec<f64>> {
        let mut row = bid_covariates(market, firm, wholesale, contract_length)?;
        row.extend(self.firms.iter().skip(1).map(|f| (f == firm) as u8 as f64));
        row.push(1.0);
        Ok(row)
    }

    /// `exp(x·coef)` for `firm` at its market wholesale price.
    pub fn point_prediction(&self, market: &MarketConfig, firm: &str, contract_length: f64) -> Result<f64> {
        let row = self.design_row(market, firm, market.wholesale(firm)?, contract_length)?;
        if row.len() != self.coefficients.len() {
            return Err(Error::dimension("rebate covariates", self.coefficients.len(), row.len()));
        }
        Ok(row.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum::<f64>().exp())
    }
}

/// Least squares of log rebate on logged covariates and firm dummies.
pub fn fit_rebate_model(records: &[AuctionRecord], markets: &[MarketConfig]) -> Result<RebateModel> {
    if records.is_empty() {
        return Err(Error::invalid("no auction records"));
    }
    let by_id: BTreeMap<&str, &MarketConfig> = markets.iter().map(|m| (m.market_id.as_str(), m)).collect();
    let firms: Vec<String> =
        records.iter().map(|r| r.firm_id.clone()).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    let mut names: Vec<String> = BASE_COVARIATES.iter().map(|s| s.to_string()).collect();
    names.extend(firms.iter().skip(1).map(|f| format!("firm_{f}")));
    names.push("const".into());
    let k = names.len();
    if records.len() < 2 * k {
        return Err(Error::invalid(format!(
            "{} auction records are too few for {k} coefficients (need {})",
            records.len(),
            2 * k
        )));
    }
    let template = RebateModel {
        names: names.clone(),
        coefficients: vec![0.0; k],
        std_errors: vec![0.0; k],
        firms: firms.clone(),
        residual_pool: Vec::new(),
        joint_pool: Vec::new(),
        r2: 0.0,
        default_contract_length: 1.0,
    };
    let mut x = DMatrix::zeros(records.len(), k);
    let mut y = DVector::zeros(records.len());
    let mut log_len = 0.0;
    for (i, r) in records.iter().enumerate() {
        r.validate()?;
        let m = by_id
            .get(r.market_id.as_str())
            .ok_or_else(|| Error::invariant(&r.market_id, "auction record has no matching market"))?;
        let row = template.design_row(m, &r.firm_id, r.wholesale, r.contract_length)?;
        for (c, v) in row.into_iter().enumerate() {
            x[(i, c)] = v;
        }
        y[i] = positive_log(r.rebate, "rebate", &r.market_id, &r.firm_id)?;
        log_len += r.contract_length.ln();
    }
    let fit = linalg::ols(&x, &y, &names)?;
    let residual_pool: Vec<f64> = fit.residuals.iter().copied().collect();
    let mut joint: BTreeMap<&str, BTreeMap<String, f64>> = BTreeMap::new();
    for (r, e) in records.iter().zip(&residual_pool) {
        joint.entry(r.market_id.as_str()).or_default().insert(r.firm_id.clone(), *e);
    }
    Ok(RebateModel {
        coefficients: fit.coefficients.iter().copied().collect(),
        std_errors: fit.std_errors.iter().copied().collect(),
        residual_pool,
        joint_pool: joint.into_values().collect(),
        r2: fit.r2,
        default_contract_length: (log_len / records.len() as f64).exp(),
        ..template
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuctionSim {
    pub market_id: String,
    pub firms: Vec<String>,
    pub wholesale: Vec<f64>,
    pub point: Vec<f64>,
    /// `rebates[d][f]`: draw `d`, firm `f`.
    pub rebates: Vec<Vec<f64>>,
    pub winners: Vec<String>,
    pub ties: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WinnerPick {
    pub firm: String,
    pub tie: bool,
}

/// Lowest net price `wholesale − rebate`; ties go to the lexicographically first firm.
pub fn determine_winner(wholesale: &BTreeMap<String, f64>, rebates: &BTreeMap<String, f64>) -> Result<WinnerPick> {
    if wholesale.is_empty() {
        return Err(Error::invalid("no bidders"));
    }
    if wholesale.len() != rebates.len() || wholesale.keys().ne(rebates.keys()) {
        return Err(Error::invalid("wholesale and rebate maps cover different firms"));
    }
    let mut best: Option<(&String, f64)> = None;
    let mut tie = false;
    for (f, w) in wholesale {
        let net = w - rebates[f];
        match best {
            None => best = Some((f, net)),
            Some((_, b)) if net < b => {
                best = Some((f, net));
                tie = false;
            }
            Some((_, b)) if net == b => tie = true,
            _ => {}
        }
    }
    let (firm, _) = best.expect("nonempty");
    Ok(WinnerPick { firm: firm.clone(), tie })
}

fn sample_residual<R: Rng>(model: &RebateModel, rng: &mut R) -> f64 {
    model.residual_pool[rng.random_range(0..model.residual_pool.len())]
}

/// Simulated rebates and winners for all firms of `market`.
pub fn predict_rebates(
    model: &RebateModel,
    market: &MarketConfig,
    n_draws: usize,
    seed: u64,
    mode: ResampleMode,
) -> Result<AuctionSim> {
    if model.residual_pool.is_empty() {
        return Err(Error::invalid("rebate model has an empty residual pool"));
    }
    if mode == ResampleMode::Joint && model.joint_pool.is_empty() {
        return Err(Error::invalid("rebate model has no grouped residuals for joint resampling"));
    }
    let firms = market.firms();
    let wholesale: Vec<f64> = firms.iter().map(|f| market.wholesale(f)).collect::<Result<_>>()?;
    let point: Vec<f64> = firms
        .iter()
        .map(|f| model.point_prediction(market, f, model.default_contract_length))
        .collect::<Result<_>>()?;
    let mut rng = seeds::rng(seed, "rebates", &market.market_id);
    let mut rebates = Vec::with_capacity(n_draws);
    let mut winners = Vec::with_capacity(n_draws);
    let mut ties = Vec::with_capacity(n_draws);
    let wmap: BTreeMap<String, f64> = firms.iter().cloned().zip(wholesale.iter().copied()).collect();
    for _ in 0..n_draws {
        let row: Vec<f64> = match mode {
            ResampleMode::Independent => {
                point.iter().map(|p| (p * sample_residual(model, &mut rng).exp()).max(0.0)).collect()
            }
            ResampleMode::Joint => {
                let group = &model.joint_pool[rng.random_range(0..model.joint_pool.len())];
                firms
                    .iter()
                    .zip(&point)
                    .map(|(f, p)| {
                        let e = match group.get(f) {
                            Some(e) => *e,
                            None => sample_residual(model, &mut rng),
                        };
                        (p * e.exp()).max(0.0)
                    })
                    .collect()
            }
        };
        let rmap: BTreeMap<String, f64> = firms.iter().cloned().zip(row.iter().copied()).collect();
        let pick = determine_winner(&wmap, &rmap)?;
        winners.push(pick.firm);
        ties.push(pick.tie);
        rebates.push(row);
    }
    Ok(AuctionSim { market_id: market.market_id.clone(), firms, wholesale, point, rebates, winners, ties })
}

impl AuctionSim {
    /// Most frequent winner; ties go to the lexicographically first firm.
    pub fn modal_winner(&self) -> Option<&str> {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for w in &self.winners {
            *counts.entry(w.as_str()).or_default() += 1;
        }
        let max = counts.values().copied().max()?;
        counts.into_iter().find(|(_, c)| *c == max).map(|(f, _)| f)
    }

    pub fn win_frequencies(&self) -> BTreeMap<String, f64> {
        let n = self.winners.len().max(1) as f64;
        let mut out: BTreeMap<String, f64> = self.firms.iter().map(|f| (f.clone(), 0.0)).collect();
        for w in &self.winners {
            *out.get_mut(w).expect("winner is a firm") += 1.0 / n;
        }
        out
    }
}

/// Rows `market_id, draw, firm, rebate, net_price, won`.
pub fn write_auction_sims_csv<W: Write>(writer: W, sims: &[AuctionSim]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["market_id", "draw", "firm", "rebate", "net_price", "won"])?;
    for s in sims {
        for (d, row) in s.rebates.iter().enumerate() {
            for (f, firm) in s.firms.iter().enumerate() {
                wtr.write_record([
                    s.market_id.clone(),
                    d.to_string(),
                    firm.clone(),
                    row[f].to_string(),
                    (s.wholesale[f] - row[f]).to_string(),
                    (s.winners[d] == *firm).to_string(),
                ])?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}
