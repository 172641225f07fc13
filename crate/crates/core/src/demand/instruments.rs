use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;
use crate::market_data::MarketConfig;

/// Excluded instruments grouped by type. Rows are product-market
/// observations stacked market by market in product order.
#[derive(Clone, Debug)]
pub struct InstrumentSet {
    pub cost_shifters: DMatrix<f64>,
    pub cost_names: Vec<String>,
    pub blp_sums: DMatrix<f64>,
    pub blp_names: Vec<String>,
    pub hausman_prices: DMatrix<f64>,
}

/// Full instrument matrix (exogenous regressors plus excluded instruments).
#[derive(Clone, Debug)]
pub struct Instruments {
    pub z: DMatrix<f64>,
    pub names: Vec<String>,
}

fn rows(markets: &[MarketConfig]) -> usize {
    markets.iter().map(|m| m.product_count()).sum()
}

impl InstrumentSet {
    /// Cost shifters of the owning firm with squares, sums of rival and
    /// own-firm characteristics, and the product's mean price elsewhere.
    pub fn build(markets: &[MarketConfig]) -> Result<Self> {
        let n = rows(markets);
        let first = markets.first().ok_or_else(|| Error::invalid("no markets"))?;
        let shifter_names: Vec<String> =
            first.cost_shifters.values().next().map(|m| m.keys().cloned().collect()).unwrap_or_default();
        let k = first.characteristic_names.len();

        let mut cost_names = Vec::new();
        for s in &shifter_names {
            cost_names.push(s.clone());
            cost_names.push(format!("{s}^2"));
        }
        let mut cost = DMatrix::zeros(n, cost_names.len());
        let mut blp_names = Vec::new();
        for name in &first.characteristic_names {
            blp_names.push(format!("rival_sum_{name}"));
            blp_names.push(format!("own_sum_{name}"));
        }
        let mut blp = DMatrix::zeros(n, 2 * k);

        // mean price of each product id: same month first, then all markets
        let mut by_month: BTreeMap<(String, u32), (f64, usize)> = BTreeMap::new();
        let mut by_all: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for m in markets {
            for (p, price) in m.products.iter().zip(&m.prices) {
                let e = by_month.entry((p.product_id.clone(), m.month)).or_insert((0.0, 0));
                e.0 += price;
                e.1 += 1;
                let e = by_all.entry(p.product_id.clone()).or_insert((0.0, 0));
                e.0 += price;
                e.1 += 1;
            }
        }
        let mut hausman = DMatrix::zeros(n, 1);

        let mut row = 0;
        for m in markets {
            if m.characteristic_names.len() != k {
                return Err(Error::invariant(&m.market_id, "characteristic layout differs across markets"));
            }
            for (j, p) in m.products.iter().enumerate() {
                for (c, s) in shifter_names.iter().enumerate() {
                    let v = m.shifter(&p.firm_id, s)?;
                    cost[(row, 2 * c)] = v;
                    cost[(row, 2 * c + 1)] = v * v;
                }
                for (q, other) in m.products.iter().enumerate() {
                    if q == j {
                        continue;
                    }
                    let off = if other.firm_id == p.firm_id { 1 } else { 0 };
                    for c in 0..k {
                        blp[(row, 2 * c + off)] += other.characteristics[c];
                    }
                }
                let price = m.prices[j];
                let (sum_m, cnt_m) = by_month[&(p.product_id.clone(), m.month)];
                let (sum_a, cnt_a) = by_all[&p.product_id];
                hausman[(row, 0)] = if cnt_m > 1 {
                    (sum_m - price) / (cnt_m - 1) as f64
                } else if cnt_a > 1 {
                    (sum_a - price) / (cnt_a - 1) as f64
                } else {
                    0.0
                };
                row += 1;
            }
        }
        Ok(Self { cost_shifters: cost, cost_names, blp_sums: blp, blp_names, hausman_prices: hausman })
    }

    /// Stacks exogenous regressors with the excluded instruments and drops
    /// columns that add no rank.
    pub fn assemble(&self, exogenous: &DMatrix<f64>, exogenous_names: &[String]) -> Result<Instruments> {
        let n = exogenous.nrows();
        for (what, m) in [
            ("cost shifters", &self.cost_shifters),
            ("BLP sums", &self.blp_sums),
            ("Hausman prices", &self.hausman_prices),
        ] {
            if m.nrows() != n {
                return Err(Error::Dimension { context: what, expected: n, found: m.nrows() });
            }
        }
        let cols = exogenous.ncols() + self.cost_shifters.ncols() + self.blp_sums.ncols() + 1;
        let mut z = DMatrix::zeros(n, cols);
        let mut names = Vec::with_capacity(cols);
        let mut c = 0;
        for (m, nm) in [
            (exogenous, exogenous_names.to_vec()),
            (&self.cost_shifters, self.cost_names.clone()),
            (&self.blp_sums, self.blp_names.clone()),
            (&self.hausman_prices, vec!["hausman_price".to_string()]),
        ] {
            for k in 0..m.ncols() {
                z.set_column(c, &m.column(k));
                names.push(nm.get(k).cloned().unwrap_or_else(|| format!("z{c}")));
                c += 1;
            }
        }
        let keep = linalg::independent_columns(&z);
        Ok(Instruments { z: z.select_columns(keep.iter()), names: keep.iter().map(|i| names[*i].clone()).collect() })
    }
}

impl Instruments {
    pub fn new(z: DMatrix<f64>, names: Vec<String>) -> Result<Self> {
        if names.len() != z.ncols() {
            return Err(Error::dimension("instrument names", z.ncols(), names.len()));
        }
        Ok(Self { z, names })
    }
}
