//! Seeded synthetic worlds with known structural parameters.
//!
//! Each market is its own auction. Prices are the post-auction equilibrium of
//! the true model, and shares are the exact model shares at those prices.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{
    AuctionRecord, MarketConfig, Product, DEMO_INCOME, SHIFTER_DISTANCE, SHIFTER_ELECTRICITY, SHIFTER_RAW_MILK,
};
use crate::bidding::{bid_covariates, determine_winner};
use crate::demand::{ConsumerDraws, DemandParams, DrawConfig, MarketDemand, Xi};
use crate::error::{Error, Result};
use crate::market_data::WicAssignment;
use crate::seeds;
use crate::supply::{solve_post_auction, CostSavings, SolverOptions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FirmSpec {
    pub name: String,
    /// Taste, cost and log-rebate effects are taken relative to the first firm.
    pub taste: f64,
    pub cost: f64,
    pub rebate_effect: f64,
    pub wholesale_mean: f64,
    pub rho: f64,
}

impl Default for FirmSpec {
    fn default() -> Self {
        Self { name: "F".into(), taste: 0.0, cost: 0.0, rebate_effect: 0.0, wholesale_mean: 1.03, rho: 0.05 }
    }
}

/// A product attribute drawn once per product, uniform on `[lo, hi]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CharacteristicSpec {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    pub taste: f64,
    pub cost: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_states: usize,
    pub n_months: u32,
    pub year: u32,
    pub firms: Vec<FirmSpec>,
    pub products_per_firm: usize,
    pub characteristics: Vec<CharacteristicSpec>,

    pub alpha: f64,
    pub beta_const: f64,
    pub beta_auction_brand: f64,
    pub delta0: f64,
    pub delta1: f64,
    pub sigma_price: f64,
    pub sigma_const: f64,
    pub pi_income: f64,
    pub xi_sd: f64,
    pub draws: DrawConfig,

    pub cost_const: f64,
    pub cost_auction_brand: f64,
    /// Linear cost effect of each named shifter.
    pub cost_shifters: BTreeMap<String, f64>,
    pub omega_sd: f64,
    pub saving_all_brands: f64,
    pub saving_auction_brand: f64,

    /// Log-rebate slopes by covariate name; the constant is set from `rebate_ratio`.
    pub rebate_slopes: BTreeMap<String, f64>,
    pub rebate_ratio: f64,
    pub rebate_sd: f64,
    pub wholesale_sd: f64,
    pub contract_lengths: Vec<f64>,

    pub income_median: f64,
    pub income_spread: f64,
    pub wic_infants: (f64, f64),
    pub non_wic_per_wic: (f64, f64),
    pub formula_rate: f64,
    pub distance: (f64, f64),
    pub raw_milk: (f64, f64),
    pub electricity: (f64, f64),
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        let firm = |name: &str, taste, cost, rebate_effect, wholesale_mean, rho| FirmSpec {
            name: name.into(),
            taste,
            cost,
            rebate_effect,
            wholesale_mean,
            rho,
        };
        let slopes = [
            ("log_wholesale", 2.143),
            ("log_rival_wholesale", -1.129),
            ("log_distance", 0.048),
            ("log_rival_distance", -0.103),
            ("log_income", -0.327),
            ("log_wic_infants", -0.126),
            ("log_non_wic_infants", 0.182),
            ("log_raw_milk", -0.211),
            ("log_electricity", 0.023),
            ("log_contract_length", -0.066),
        ];
        Self {
            n_states: 10,
            n_months: 2,
            year: 2015,
            firms: vec![
                firm("Abbott", 0.0, 0.0, 0.0, 1.051, 0.07),
                firm("MJ", 0.05, 0.01, 0.035, 1.053, 0.01),
                firm("Nestle", -0.15, -0.02, 0.125, 0.993, 0.11),
            ],
            products_per_firm: 2,
            characteristics: vec![
                CharacteristicSpec { name: "spitup".into(), lo: 0.0, hi: 1.0, taste: 0.15, cost: 0.02 },
                CharacteristicSpec { name: "prebiotics".into(), lo: 0.0, hi: 1.0, taste: 0.2, cost: 0.03 },
            ],
            alpha: 2.5,
            beta_const: 1.9,
            beta_auction_brand: 0.1,
            delta0: 0.316,
            delta1: 0.9585,
            sigma_price: 0.3,
            sigma_const: 0.2,
            pi_income: 0.002,
            xi_sd: 0.1,
            draws: DrawConfig::default(),
            cost_const: 0.45,
            cost_auction_brand: 0.02,
            cost_shifters: BTreeMap::from([
                (SHIFTER_DISTANCE.to_string(), 0.003),
                (SHIFTER_RAW_MILK.to_string(), 0.004),
                (SHIFTER_ELECTRICITY.to_string(), 0.004),
            ]),
            omega_sd: 0.02,
            saving_all_brands: -0.01,
            saving_auction_brand: -0.02,
            rebate_slopes: slopes.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            rebate_ratio: 0.82,
            rebate_sd: 0.15,
            wholesale_sd: 0.06,
            contract_lengths: vec![2.0, 3.0, 4.0, 5.0],
            income_median: 52.0,
            income_spread: 0.15,
            wic_infants: (2_000.0, 40_000.0),
            non_wic_per_wic: (2.0, 4.0),
            formula_rate: 0.6,
            distance: (1.0, 20.0),
            raw_milk: (14.0, 20.0),
            electricity: (6.0, 12.0),
        }
    }
}

/// Parameters the world was generated from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub demand: DemandParams,
    pub draws: DrawConfig,
    /// Root seed of the consumer-draw streams.
    pub draw_seed: u64,
    pub xi: BTreeMap<String, Vec<f64>>,
    /// Marginal costs before any WIC cost shift.
    pub base_costs: BTreeMap<String, Vec<f64>>,
    pub cost_coefficients: BTreeMap<String, f64>,
    pub savings: CostSavings,
    pub rho: BTreeMap<String, f64>,
    pub rebate_coefficients: BTreeMap<String, f64>,
    pub rebate_sd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorld {
    pub markets: Vec<MarketConfig>,
    pub auctions: Vec<AuctionRecord>,
    pub truth: SyntheticTruth,
}

impl SyntheticWorld {
    /// Consumer draws of `market` as used during generation.
    pub fn draws_for(&self, market: &MarketConfig) -> Result<ConsumerDraws> {
        ConsumerDraws::for_market(&self.truth.draws, self.truth.draw_seed, market)
    }
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn log_uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    uniform(rng, (lo.ln(), hi.ln())).exp()
}

fn normal(sd: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, sd).map_err(|e| Error::invalid(format!("bad standard deviation {sd}: {e}")))
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.firms.is_empty() {
            return Err(Error::invalid("synthetic spec needs at least one firm"));
        }
        if self.firms.len() < 2 {
            return Err(Error::invalid("synthetic auctions need at least two firms"));
        }
        if self.products_per_firm == 0 {
            return Err(Error::invalid("synthetic spec needs at least one product per firm"));
        }
        if self.n_states == 0 || self.n_months == 0 {
            return Err(Error::invalid("synthetic spec needs at least one state and month"));
        }
        if self.contract_lengths.is_empty() || self.contract_lengths.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::invalid("contract lengths must be positive"));
        }
        let mut names: Vec<&str> = self.firms.iter().map(|f| f.name.as_str()).collect();
        names.sort();
        names.dedup();
        if names.len() != self.firms.len() {
            return Err(Error::invalid("firm names must be distinct"));
        }
        Ok(())
    }

    /// Firms sorted by name, as every other module orders them.
    fn sorted_firms(&self) -> Vec<&FirmSpec> {
        let mut f: Vec<&FirmSpec> = self.firms.iter().collect();
        f.sort_by(|a, b| a.name.cmp(&b.name));
        f
    }

    fn characteristic_names(&self) -> Vec<String> {
        let mut names = vec!["const".to_string(), "auction_brand".to_string()];
        names.extend(self.characteristics.iter().map(|c| c.name.clone()));
        names.extend(self.sorted_firms().iter().skip(1).map(|f| format!("firm_{}", f.name)));
        names
    }

    fn demand_params(&self, income_center: f64) -> DemandParams {
        let firms = self.sorted_firms();
        let mut beta = vec![self.beta_const, self.beta_auction_brand];
        beta.extend(self.characteristics.iter().map(|c| c.taste));
        beta.extend(firms.iter().skip(1).map(|f| f.taste - firms[0].taste));
        DemandParams {
            alpha: self.alpha,
            beta,
            delta0: self.delta0,
            delta1: self.delta1,
            sigma_price: self.sigma_price,
            sigma_const: self.sigma_const,
            pi_income: self.pi_income,
            income_center,
        }
    }

    /// Cost coefficients named as in the fitted cost function.
    fn cost_coefficients(&self) -> BTreeMap<String, f64> {
        let firms = self.sorted_firms();
        let mut g = BTreeMap::from([
            ("const".to_string(), self.cost_const),
            ("auction_brand".to_string(), self.cost_auction_brand),
        ]);
        for f in firms.iter().skip(1) {
            g.insert(format!("firm_{}", f.name), f.cost - firms[0].cost);
        }
        for c in &self.characteristics {
            g.insert(format!("x_{}", c.name), c.cost);
        }
        for (s, v) in &self.cost_shifters {
            g.insert(format!("z_{s}"), *v);
        }
        g
    }

    /// Log-rebate coefficients named as in the fitted bid function.
    fn rebate_coefficients(&self) -> BTreeMap<String, f64> {
        let firms = self.sorted_firms();
        let mut r = self.rebate_slopes.clone();
        for f in firms.iter().skip(1) {
            r.insert(format!("firm_{}", f.name), f.rebate_effect - firms[0].rebate_effect);
        }
        let w: f64 = self.firms.iter().map(|f| f.wholesale_mean).sum::<f64>() / self.firms.len() as f64;
        let mid = |(lo, hi): (f64, f64)| 0.5 * (lo + hi);
        let wic = (self.wic_infants.0 * self.wic_infants.1).sqrt();
        let len = self.contract_lengths.iter().map(|l| l.ln()).sum::<f64>() / self.contract_lengths.len() as f64;
        let centers = [
            ("log_wholesale", w.ln()),
            ("log_rival_wholesale", w.ln()),
            ("log_distance", mid(self.distance).ln()),
            ("log_rival_distance", mid(self.distance).ln()),
            ("log_income", self.income_median.ln()),
            ("log_wic_infants", wic.ln()),
            ("log_non_wic_infants", (wic * mid(self.non_wic_per_wic)).ln()),
            ("log_raw_milk", mid(self.raw_milk).ln()),
            ("log_electricity", mid(self.electricity).ln()),
            ("log_contract_length", len),
        ];
        let fitted: f64 = centers.iter().map(|(k, v)| self.rebate_slopes.get(*k).copied().unwrap_or(0.0) * v).sum();
        r.insert("const".into(), (self.rebate_ratio * w).ln() - fitted);
        r
    }
}

/// Generates markets, auction records and the generating parameters.
pub fn generate_world(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticWorld> {
    spec.validate()?;
    let firms = spec.sorted_firms();
    let firm_names: Vec<String> = firms.iter().map(|f| f.name.clone()).collect();
    let char_names = spec.characteristic_names();

    let mut products = Vec::new();
    let mut prod_rng = seeds::rng(seed, "synthetic", "products");
    for (fi, f) in firms.iter().enumerate() {
        for k in 0..spec.products_per_firm {
            let mut x = vec![1.0, (k == 0) as u8 as f64];
            x.extend(spec.characteristics.iter().map(|c| uniform(&mut prod_rng, (c.lo, c.hi))));
            x.extend((1..firms.len()).map(|g| (g == fi) as u8 as f64));
            products.push(Product {
                product_id: format!("{}-{}", f.name, k),
                firm_id: f.name.clone(),
                is_auction_brand: k == 0,
                characteristics: x,
            });
        }
    }

    let income_noise = normal(spec.income_spread)?;
    let wholesale_noise = normal(spec.wholesale_sd)?;
    let xi_noise = normal(spec.xi_sd)?;
    let omega_noise = normal(spec.omega_sd)?;
    let rebate_noise = normal(spec.rebate_sd)?;

    let mut markets = Vec::new();
    for state in 1..=spec.n_states {
        for month in 1..=spec.n_months {
            let id = format!("S{state:02}-{}-{month:02}", spec.year);
            let mut rng = seeds::rng(seed, "synthetic", &id);
            let income = spec.income_median * income_noise.sample(&mut rng).exp();
            let wic = log_uniform(&mut rng, spec.wic_infants);
            let non_wic = wic * uniform(&mut rng, spec.non_wic_per_wic);
            let mut cost_shifters = BTreeMap::new();
            let mut wholesale_prices = BTreeMap::new();
            for f in &firms {
                let z = BTreeMap::from([
                    (SHIFTER_DISTANCE.to_string(), uniform(&mut rng, spec.distance)),
                    (SHIFTER_RAW_MILK.to_string(), uniform(&mut rng, spec.raw_milk)),
                    (SHIFTER_ELECTRICITY.to_string(), uniform(&mut rng, spec.electricity)),
                ]);
                cost_shifters.insert(f.name.clone(), z);
                wholesale_prices
                    .insert(f.name.clone(), f.wholesale_mean * (1.0 + wholesale_noise.sample(&mut rng)).max(0.5));
            }
            let n = products.len();
            markets.push(MarketConfig {
                market_id: id,
                month,
                characteristic_names: char_names.clone(),
                products: products.clone(),
                prices: vec![1.0; n],
                shares: vec![0.5 / n as f64; n],
                market_size: non_wic * spec.formula_rate,
                wic_infants: wic,
                non_wic_infants: non_wic,
                demographics: BTreeMap::from([(DEMO_INCOME.to_string(), income)]),
                cost_shifters,
                wholesale_prices,
                winner: None,
            });
        }
    }

    let center = markets.iter().map(|m| m.demographics[DEMO_INCOME]).sum::<f64>() / markets.len() as f64;
    let params = spec.demand_params(center);
    let gamma = spec.cost_coefficients();
    let rebate_coef = spec.rebate_coefficients();
    let savings = CostSavings::uniform(&firm_names, spec.saving_all_brands, spec.saving_auction_brand);
    let rho: BTreeMap<String, f64> = firms.iter().map(|f| (f.name.clone(), f.rho)).collect();
    let solver = SolverOptions::default();

    let mut auctions = Vec::new();
    let mut xi_all = BTreeMap::new();
    let mut cost_all = BTreeMap::new();
    for m in markets.iter_mut() {
        let mut rng = seeds::rng(seed, "synthetic_outcomes", &m.market_id);
        let contract = spec.contract_lengths[rng.random_range(0..spec.contract_lengths.len())];
        let mut rebates = BTreeMap::new();
        for f in &firm_names {
            let w = m.wholesale(f)?;
            let cov = bid_covariates(m, f, w, contract)?;
            let slopes: f64 = [
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
            ]
            .iter()
            .zip(&cov)
            .map(|(k, v)| rebate_coef.get(*k).copied().unwrap_or(0.0) * v)
            .sum();
            let effect = rebate_coef.get(&format!("firm_{f}")).copied().unwrap_or(0.0);
            let log_r = slopes + effect + rebate_coef["const"] + rebate_noise.sample(&mut rng);
            rebates.insert(f.clone(), log_r.exp());
        }
        let winner = determine_winner(&m.wholesale_prices, &rebates)?.firm;
        for f in &firm_names {
            auctions.push(AuctionRecord {
                market_id: m.market_id.clone(),
                firm_id: f.clone(),
                wholesale: m.wholesale(f)?,
                rebate: rebates[f],
                contract_length: contract,
                won: *f == winner,
            });
        }

        let xi: Vec<f64> = (0..m.products.len()).map(|_| xi_noise.sample(&mut rng)).collect();
        let base: Vec<f64> = m
            .products
            .iter()
            .map(|p| {
                let mut c = gamma["const"];
                if p.is_auction_brand {
                    c += gamma["auction_brand"];
                }
                c += gamma.get(&format!("firm_{}", p.firm_id)).copied().unwrap_or(0.0);
                for (ci, cs) in spec.characteristics.iter().enumerate() {
                    c += cs.cost * p.characteristics[2 + ci];
                }
                for (s, v) in &spec.cost_shifters {
                    c += v * m.cost_shifters[&p.firm_id].get(s).copied().unwrap_or(0.0);
                }
                c + omega_noise.sample(&mut rng)
            })
            .collect();

        m.winner = Some(winner.clone());
        let assignment = WicAssignment::winner(&winner);
        let draws = ConsumerDraws::for_market(&spec.draws, seed, m)?;
        let demand = MarketDemand::new(&params, m, &Xi(xi.clone()), &assignment, &draws)?;
        let costs = savings.apply(&base, m, &assignment);
        let k = m.auction_brand_of(&winner).expect("every firm has an auction brand");
        let own = m.ownership();
        let solved = solve_post_auction(&demand, &own, &costs, k, rho[&winner], &solver)?;
        m.shares = demand.shares(&solved.prices);
        m.prices = solved.prices;
        m.validate()?;
        xi_all.insert(m.market_id.clone(), xi);
        cost_all.insert(m.market_id.clone(), base);
    }

    Ok(SyntheticWorld {
        markets,
        auctions,
        truth: SyntheticTruth {
            demand: params,
            draws: spec.draws.clone(),
            draw_seed: seed,
            xi: xi_all,
            base_costs: cost_all,
            cost_coefficients: gamma,
            savings,
            rho,
            rebate_coefficients: rebate_coef,
            rebate_sd: spec.rebate_sd,
        },
    })
}

/// Markets only.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Vec<MarketConfig>> {
    Ok(generate_world(spec, seed)?.markets)
}
