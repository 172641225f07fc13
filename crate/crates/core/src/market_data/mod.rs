//! Market data model: products, state-month markets and auction records.
//!
//! Prices, wholesale prices and rebates are in constant dollars per ounce. Inputs
//! are expected to be deflated and, where several brands serve the WIC segment
//! under one contract, pre-aggregated into a single auction brand per firm.
//! A multistate alliance is one market with averaged demographics.

mod io;
mod sales;
pub mod synthetic;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{
    load_auctions, load_markets, read_auctions_csv, read_markets_csv, write_auctions, write_auctions_csv,
    write_markets, write_markets_csv, DataFormat,
};
pub use sales::non_wic_sales;

pub const DEMO_INCOME: &str = "median_income";
pub const SHIFTER_DISTANCE: &str = "distance";
pub const SHIFTER_RAW_MILK: &str = "raw_milk";
pub const SHIFTER_ELECTRICITY: &str = "electricity";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Product {
    pub product_id: String,
    pub firm_id: String,
    pub is_auction_brand: bool,
    pub characteristics: Vec<f64>,
}

/// One state-month market.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarketConfig {
    pub market_id: String,
    pub month: u32,
    /// Names of the entries of every product's characteristic vector.
    pub characteristic_names: Vec<String>,
    pub products: Vec<Product>,
    pub prices: Vec<f64>,
    /// Observed non-WIC inside shares, one per product.
    pub shares: Vec<f64>,
    /// Formula-feeding non-WIC infants (the demand scale).
    pub market_size: f64,
    pub wic_infants: f64,
    pub non_wic_infants: f64,
    pub demographics: BTreeMap<String, f64>,
    /// Firm id to named cost shifters.
    pub cost_shifters: BTreeMap<String, BTreeMap<String, f64>>,
    pub wholesale_prices: BTreeMap<String, f64>,
    pub winner: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuctionRecord {
    pub market_id: String,
    pub firm_id: String,
    pub wholesale: f64,
    /// May exceed the wholesale price; never negative.
    pub rebate: f64,
    pub contract_length: f64,
    pub won: bool,
}

impl AuctionRecord {
    pub fn validate(&self) -> Result<()> {
        if !(self.wholesale > 0.0 && self.wholesale.is_finite()) {
            return Err(Error::invariant(
                &self.market_id,
                format!("firm {}: wholesale must be positive, got {}", self.firm_id, self.wholesale),
            ));
        }
        if !(self.rebate >= 0.0 && self.rebate.is_finite()) {
            return Err(Error::invariant(
                &self.market_id,
                format!("firm {}: rebate must be nonnegative, got {}", self.firm_id, self.rebate),
            ));
        }
        if !(self.contract_length > 0.0 && self.contract_length.is_finite()) {
            return Err(Error::invariant(
                &self.market_id,
                format!("firm {}: contract length must be positive", self.firm_id),
            ));
        }
        Ok(())
    }
}

/// Product ownership and auction brands of a market, with firms in sorted order.
#[derive(Clone, Debug, PartialEq)]
pub struct Ownership {
    pub firms: Vec<String>,
    pub firm_of: Vec<usize>,
    pub auction_brand: Vec<usize>,
}

impl Ownership {
    pub fn firm_index(&self, firm: &str) -> Option<usize> {
        self.firms.iter().position(|f| f == firm)
    }

    pub fn same_firm(&self, j: usize, k: usize) -> bool {
        self.firm_of[j] == self.firm_of[k]
    }

    pub fn products_of(&self, firm: usize) -> Vec<usize> {
        (0..self.firm_of.len()).filter(|j| self.firm_of[*j] == firm).collect()
    }

    pub fn product_count(&self) -> usize {
        self.firm_of.len()
    }
}

/// Which firms serve the WIC segment, each with the fraction of the winner
/// spillovers and cost savings it receives. An auction winner has weight 1;
/// `n` firms sharing the segment have weight `1/n` each.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WicAssignment {
    pub weights: BTreeMap<String, f64>,
}

impl WicAssignment {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn winner(firm: &str) -> Self {
        Self { weights: BTreeMap::from([(firm.to_string(), 1.0)]) }
    }

    pub fn from_option(winner: Option<&str>) -> Self {
        winner.map(Self::winner).unwrap_or_default()
    }

    /// Equal split across `firms`; empty input gives no assignment.
    pub fn prorated<'a>(firms: impl IntoIterator<Item = &'a str>) -> Self {
        let set: BTreeSet<&str> = firms.into_iter().collect();
        let w = 1.0 / set.len().max(1) as f64;
        Self { weights: set.into_iter().map(|f| (f.to_string(), w)).collect() }
    }

    pub fn weight(&self, firm: &str) -> f64 {
        self.weights.get(firm).copied().unwrap_or(0.0)
    }

    pub fn firms(&self) -> impl Iterator<Item = &str> {
        self.weights.keys().map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

impl MarketConfig {
    pub fn product_count(&self) -> usize {
        self.products.len()
    }

    pub fn firms(&self) -> Vec<String> {
        self.products.iter().map(|p| p.firm_id.clone()).collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn ownership(&self) -> Ownership {
        let firms = self.firms();
        let firm_of: Vec<usize> =
            self.products.iter().map(|p| firms.iter().position(|f| *f == p.firm_id).unwrap_or(0)).collect();
        let auction_brand = (0..firms.len())
            .map(|f| {
                (0..self.products.len()).find(|j| firm_of[*j] == f && self.products[*j].is_auction_brand).unwrap_or(0)
            })
            .collect();
        Ownership { firms, firm_of, auction_brand }
    }

    pub fn auction_brand_of(&self, firm: &str) -> Option<usize> {
        self.products.iter().position(|p| p.firm_id == firm && p.is_auction_brand)
    }

    pub fn winner_auction_brand(&self) -> Option<usize> {
        self.winner.as_deref().and_then(|w| self.auction_brand_of(w))
    }

    pub fn characteristic_index(&self, name: &str) -> Option<usize> {
        self.characteristic_names.iter().position(|n| n == name)
    }

    pub fn demographic(&self, name: &str) -> Result<f64> {
        self.demographics
            .get(name)
            .copied()
            .ok_or_else(|| Error::invariant(&self.market_id, format!("missing demographic `{name}`")))
    }

    pub fn shifter(&self, firm: &str, name: &str) -> Result<f64> {
        self.cost_shifters
            .get(firm)
            .and_then(|m| m.get(name))
            .copied()
            .ok_or_else(|| Error::invariant(&self.market_id, format!("missing cost shifter `{name}` for firm {firm}")))
    }

    pub fn wholesale(&self, firm: &str) -> Result<f64> {
        self.wholesale_prices
            .get(firm)
            .copied()
            .ok_or_else(|| Error::invariant(&self.market_id, format!("missing wholesale price for firm {firm}")))
    }

    pub fn validate(&self) -> Result<()> {
        let id = self.market_id.as_str();
        let n = self.products.len();
        if n == 0 {
            return Err(Error::invariant(id, "market has no products"));
        }
        if self.prices.len() != n {
            return Err(Error::invariant(id, format!("{} prices for {n} products", self.prices.len())));
        }
        if self.shares.len() != n {
            return Err(Error::invariant(id, format!("{} shares for {n} products", self.shares.len())));
        }
        let k = self.characteristic_names.len();
        let mut ids = BTreeSet::new();
        for p in &self.products {
            if p.characteristics.len() != k {
                return Err(Error::invariant(
                    id,
                    format!("product {} has {} characteristics, expected {k}", p.product_id, p.characteristics.len()),
                ));
            }
            if p.characteristics.iter().any(|v| !v.is_finite()) {
                return Err(Error::invariant(id, format!("product {}: non-finite characteristic", p.product_id)));
            }
            if !ids.insert(p.product_id.as_str()) {
                return Err(Error::invariant(id, format!("duplicate product id {}", p.product_id)));
            }
        }
        for (p, price) in self.products.iter().zip(&self.prices) {
            if !(*price > 0.0 && price.is_finite()) {
                return Err(Error::invariant(
                    id,
                    format!("field price: product {} has non-positive price {price}", p.product_id),
                ));
            }
        }
        let mut total = 0.0;
        for (p, s) in self.products.iter().zip(&self.shares) {
            if !(*s > 0.0 && *s < 1.0) {
                return Err(Error::invariant(
                    id,
                    format!("field share: product {} has share {s} outside (0,1)", p.product_id),
                ));
            }
            total += s;
        }
        if total >= 1.0 {
            return Err(Error::invariant(id, format!("field share: inside shares sum to {total} >= 1")));
        }
        if !(self.market_size > 0.0 && self.market_size.is_finite()) {
            return Err(Error::invariant(id, "field market_size: must be positive"));
        }
        if !(self.wic_infants >= 0.0 && self.wic_infants.is_finite()) {
            return Err(Error::invariant(id, "field wic_infants: must be nonnegative"));
        }
        if !(self.non_wic_infants >= 0.0 && self.non_wic_infants.is_finite()) {
            return Err(Error::invariant(id, "field non_wic_infants: must be nonnegative"));
        }
        let firms = self.firms();
        for f in &firms {
            let brands = self.products.iter().filter(|p| &p.firm_id == f && p.is_auction_brand).count();
            if brands != 1 {
                return Err(Error::invariant(id, format!("firm {f} has {brands} auction brands, expected 1")));
            }
            match self.wholesale_prices.get(f) {
                Some(w) if *w > 0.0 && w.is_finite() => {}
                Some(w) => return Err(Error::invariant(id, format!("field wholesale: firm {f} has {w}"))),
                None => return Err(Error::invariant(id, format!("field wholesale: missing for firm {f}"))),
            }
            if !self.cost_shifters.contains_key(f) {
                return Err(Error::invariant(id, format!("missing cost shifters for firm {f}")));
            }
        }
        if let Some(w) = &self.winner {
            if !firms.contains(w) {
                return Err(Error::invariant(id, format!("field winner: {w} owns no product in this market")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// Three firms, two products each; the first product of each firm is its auction brand.
    pub fn three_firm_market() -> MarketConfig {
        let firms = ["A", "B", "C"];
        let mut products = Vec::new();
        for f in firms {
            for k in 0..2 {
                products.push(Product {
                    product_id: format!("{f}{k}"),
                    firm_id: f.to_string(),
                    is_auction_brand: k == 0,
                    characteristics: vec![1.0, if k == 0 { 1.0 } else { 0.0 }],
                });
            }
        }
        let shifters = |d: f64| {
            BTreeMap::from([
                (SHIFTER_DISTANCE.to_string(), d),
                (SHIFTER_RAW_MILK.to_string(), 1.5),
                (SHIFTER_ELECTRICITY.to_string(), 0.08),
            ])
        };
        MarketConfig {
            market_id: "S1-2015-01".into(),
            month: 1,
            characteristic_names: vec!["const".into(), "auction_brand".into()],
            products,
            prices: vec![1.1, 1.0, 1.2, 0.9, 0.95, 0.85],
            shares: vec![0.15, 0.05, 0.12, 0.04, 0.08, 0.03],
            market_size: 20_000.0,
            wic_infants: 10_000.0,
            non_wic_infants: 30_000.0,
            demographics: BTreeMap::from([(DEMO_INCOME.to_string(), 52.0)]),
            cost_shifters: firms.iter().map(|f| (f.to_string(), shifters(0.9))).collect(),
            wholesale_prices: firms.iter().map(|f| (f.to_string(), 1.03)).collect(),
            winner: Some("B".into()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::three_firm_market;
    use super::*;

    #[test]
    fn fixture_is_valid() {
        three_firm_market().validate().unwrap();
    }

    #[test]
    fn negative_price_names_market_and_field() {
        let mut m = three_firm_market();
        m.prices[2] = -0.5;
        let err = m.validate().unwrap_err().to_string();
        assert!(err.contains("S1-2015-01") && err.contains("price"), "{err}");
    }

    #[test]
    fn absent_winner_is_rejected() {
        let mut m = three_firm_market();
        m.winner = Some("Z".into());
        let err = m.validate().unwrap_err().to_string();
        assert!(err.contains("winner"), "{err}");
    }

    #[test]
    fn two_auction_brands_rejected() {
        let mut m = three_firm_market();
        m.products[1].is_auction_brand = true;
        assert!(m.validate().is_err());
    }

    #[test]
    fn rebate_above_wholesale_is_allowed() {
        let r = AuctionRecord {
            market_id: "m".into(),
            firm_id: "A".into(),
            wholesale: 1.0,
            rebate: 1.052,
            contract_length: 3.0,
            won: true,
        };
        r.validate().unwrap();
    }

    #[test]
    fn prorated_assignment_splits_equally() {
        let a = WicAssignment::prorated(["A", "B", "C"]);
        assert!((a.weight("B") - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(a.weight("Z"), 0.0);
        assert!(WicAssignment::prorated(std::iter::empty()).is_empty());
    }
}
