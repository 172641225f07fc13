#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use procurement_core::demand::{ConsumerDraws, DemandParams};
use procurement_core::market_data::{
    MarketConfig, Product, DEMO_INCOME, SHIFTER_DISTANCE, SHIFTER_ELECTRICITY, SHIFTER_RAW_MILK,
};

pub const INCOME_CENTER: f64 = 50.0;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn firm_name(i: usize) -> String {
    ((b'A' + i as u8) as char).to_string()
}

/// A market with `firms × per_firm` products; characteristics `const` and `quality`.
/// Product 0 of each firm is its auction brand.
pub fn random_market(
    r: &mut ChaCha8Rng,
    id: &str,
    firms: usize,
    per_firm: usize,
    winner: Option<usize>,
) -> MarketConfig {
    let mut products = Vec::new();
    for f in 0..firms {
        for k in 0..per_firm {
            products.push(Product {
                product_id: format!("{}{k}", firm_name(f)),
                firm_id: firm_name(f),
                is_auction_brand: k == 0,
                characteristics: vec![1.0, r.random_range(-1.0..1.0)],
            });
        }
    }
    let n = products.len();
    let names: Vec<String> = (0..firms).map(firm_name).collect();
    let shifters = |r: &mut ChaCha8Rng| {
        BTreeMap::from([
            (SHIFTER_DISTANCE.to_string(), r.random_range(1.0..20.0)),
            (SHIFTER_RAW_MILK.to_string(), r.random_range(14.0..20.0)),
            (SHIFTER_ELECTRICITY.to_string(), r.random_range(6.0..12.0)),
        ])
    };
    let wic = r.random_range(1_000.0..20_000.0);
    let non_wic = wic * r.random_range(2.0..4.0);
    MarketConfig {
        market_id: id.to_string(),
        month: 1,
        characteristic_names: vec!["const".into(), "quality".into()],
        products,
        prices: (0..n).map(|_| r.random_range(0.8..1.6)).collect(),
        shares: vec![0.5 / n as f64; n],
        market_size: 0.6 * non_wic,
        wic_infants: wic,
        non_wic_infants: non_wic,
        demographics: BTreeMap::from([(DEMO_INCOME.to_string(), INCOME_CENTER * r.random_range(0.8..1.2))]),
        cost_shifters: names.iter().map(|f| (f.clone(), shifters(r))).collect(),
        wholesale_prices: names.iter().map(|f| (f.clone(), r.random_range(0.95..1.1))).collect(),
        winner: winner.map(firm_name),
    }
}

/// Mixed-logit parameters with every consumer's price sensitivity well above zero.
pub fn random_params(r: &mut ChaCha8Rng) -> DemandParams {
    DemandParams {
        alpha: r.random_range(3.0..5.0),
        beta: vec![r.random_range(1.0..3.0), r.random_range(-0.5..0.5)],
        delta0: r.random_range(0.0..0.4),
        delta1: r.random_range(0.0..0.8),
        sigma_price: r.random_range(0.0..0.4),
        sigma_const: r.random_range(0.0..0.5),
        pi_income: r.random_range(-0.002..0.002),
        income_center: INCOME_CENTER,
    }
}

pub fn random_draws(r: &mut ChaCha8Rng, n: usize) -> ConsumerDraws {
    ConsumerDraws::simulate(r, n, INCOME_CENTER, 0.5)
}

pub fn random_xi(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-0.2..0.2)).collect()
}

/// Parses a table CSV into `metric -> values` (one per numeric column, in order).
pub fn parse_table(text: &str) -> Vec<(String, Vec<f64>)> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    rdr.records()
        .map(|rec| {
            let rec = rec.expect("valid csv row");
            let metric = rec[0].to_string();
            let vals =
                rec.iter().skip(1).filter(|v| !v.is_empty()).map(|v| v.parse::<f64>().expect("number")).collect();
            (metric, vals)
        })
        .collect()
}

/// Checks `CS = CS_WIC + CS_nonWIC`, `pi_all = Σ pi_f` and `TS = CS + pi_all`
/// exactly, for each of the first `columns` value columns of a table.
pub fn check_identities(rows: &[(String, Vec<f64>)], columns: usize) -> Result<(), String> {
    let get = |name: &str| -> Result<&Vec<f64>, String> {
        rows.iter().find(|(m, _)| m == name).map(|(_, v)| v).ok_or_else(|| format!("row {name} missing"))
    };
    let firms: Vec<&Vec<f64>> =
        rows.iter().filter(|(m, _)| m.starts_with("pi_") && m != "pi_all").map(|(_, v)| v).collect();
    for c in 0..columns {
        let cs = get("CS")?[c];
        let wic = get("CS_WIC")?[c];
        let non = get("CS_nonWIC")?[c];
        let pi = get("pi_all")?[c];
        let ts = get("TS")?[c];
        let sum_pi = firms.iter().fold(0.0, |acc, v| acc + v[c]);
        if cs != wic + non {
            return Err(format!("column {c}: CS {cs} != {wic} + {non}"));
        }
        if pi != sum_pi {
            return Err(format!("column {c}: pi_all {pi} != sum {sum_pi}"));
        }
        if ts != cs + pi {
            return Err(format!("column {c}: TS {ts} != {cs} + {pi}"));
        }
    }
    Ok(())
}
