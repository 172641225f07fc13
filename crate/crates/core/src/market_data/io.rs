//! CSV and JSON readers/writers for markets and auction records.
//!
//! `markets.csv` holds one row per product per market. Market-level columns are
//! repeated on every row of the market; `z_*` cost shifters and `wholesale`
//! are repeated on every row of the same firm. Characteristic columns carry an
//! `x_` prefix, demographics `d_`, cost shifters `z_`. An empty `winner`
//! means no contract is in force.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{AuctionRecord, MarketConfig, Product};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Csv,
    Json,
}

impl DataFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "csv" => Some(DataFormat::Csv),
            "json" => Some(DataFormat::Json),
            _ => None,
        }
    }
}

impl FromStr for DataFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(DataFormat::Csv),
            "json" => Ok(DataFormat::Json),
            other => Err(Error::invalid(format!("unknown data format `{other}`"))),
        }
    }
}

const FIXED_COLUMNS: [&str; 12] = [
    "market_id",
    "month",
    "firm_id",
    "product_id",
    "is_auction_brand",
    "price",
    "share",
    "market_size",
    "wic_infants",
    "non_wic_infants",
    "wholesale",
    "winner",
];

fn file_error(path: &Path, message: impl std::fmt::Display) -> Error {
    Error::File { path: path.display().to_string(), message: message.to_string() }
}

pub fn load_markets(path: &Path, format: DataFormat) -> Result<Vec<MarketConfig>> {
    let mut file = File::open(path).map_err(|e| file_error(path, e))?;
    let markets = match format {
        DataFormat::Csv => read_markets_csv(&mut file)?,
        DataFormat::Json => {
            let mut text = String::new();
            file.read_to_string(&mut text)?;
            serde_json::from_str(&text).map_err(|e| file_error(path, e))?
        }
    };
    for m in &markets {
        m.validate()?;
    }
    Ok(markets)
}

pub fn write_markets(path: &Path, format: DataFormat, markets: &[MarketConfig]) -> Result<()> {
    let mut file = File::create(path).map_err(|e| file_error(path, e))?;
    match format {
        DataFormat::Csv => write_markets_csv(&mut file, markets),
        DataFormat::Json => {
            serde_json::to_writer_pretty(&mut file, markets)?;
            file.write_all(b"\n")?;
            Ok(())
        }
    }
}

struct Columns {
    index: BTreeMap<String, usize>,
    characteristics: Vec<(String, usize)>,
    demographics: Vec<(String, usize)>,
    shifters: Vec<(String, usize)>,
}

impl Columns {
    fn from_headers(headers: &csv::StringRecord) -> Result<Self> {
        let mut index = BTreeMap::new();
        let mut characteristics = Vec::new();
        let mut demographics = Vec::new();
        let mut shifters = Vec::new();
        for (i, h) in headers.iter().enumerate() {
            let h = h.trim();
            if let Some(name) = h.strip_prefix("x_") {
                characteristics.push((name.to_string(), i));
            } else if let Some(name) = h.strip_prefix("d_") {
                demographics.push((name.to_string(), i));
            } else if let Some(name) = h.strip_prefix("z_") {
                shifters.push((name.to_string(), i));
            }
            index.insert(h.to_string(), i);
        }
        for col in FIXED_COLUMNS {
            if !index.contains_key(col) {
                return Err(Error::Schema {
                    row: 1,
                    field: col.to_string(),
                    message: "missing required column".into(),
                });
            }
        }
        Ok(Self { index, characteristics, demographics, shifters })
    }

    fn get<'r>(&self, record: &'r csv::StringRecord, field: &str, row: usize) -> Result<&'r str> {
        let i = self.index[field];
        record.get(i).map(str::trim).ok_or_else(|| Error::Schema {
            row,
            field: field.to_string(),
            message: "missing value".into(),
        })
    }
}

fn parse_f64(text: &str, row: usize, field: &str) -> Result<f64> {
    text.parse::<f64>().map_err(|_| Error::Schema {
        row,
        field: field.to_string(),
        message: format!("`{text}` is not a number"),
    })
}

fn parse_bool(text: &str, row: usize, field: &str) -> Result<bool> {
    match text {
        "true" | "1" | "TRUE" | "True" => Ok(true),
        "false" | "0" | "FALSE" | "False" => Ok(false),
        _ => Err(Error::Schema { row, field: field.to_string(), message: format!("`{text}` is not a boolean") }),
    }
}

fn agree<T: PartialEq + std::fmt::Debug>(existing: &T, new: &T, row: usize, field: &str) -> Result<()> {
    if existing != new {
        return Err(Error::Schema {
            row,
            field: field.to_string(),
            message: format!("value {new:?} conflicts with {existing:?} given earlier for the same market/firm"),
        });
    }
    Ok(())
}

pub fn read_markets_csv<R: Read>(reader: R) -> Result<Vec<MarketConfig>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let cols = Columns::from_headers(&headers)?;
    let mut markets: Vec<MarketConfig> = Vec::new();
    let mut position: BTreeMap<String, usize> = BTreeMap::new();

    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        // line 1 is the header
        let row = i + 2;
        let market_id = cols.get(&record, "market_id", row)?.to_string();
        if market_id.is_empty() {
            return Err(Error::Schema { row, field: "market_id".into(), message: "empty".into() });
        }
        let month: u32 = cols.get(&record, "month", row)?.parse().map_err(|_| Error::Schema {
            row,
            field: "month".into(),
            message: "not an integer".into(),
        })?;
        let firm_id = cols.get(&record, "firm_id", row)?.to_string();
        let product_id = cols.get(&record, "product_id", row)?.to_string();
        let is_auction_brand = parse_bool(cols.get(&record, "is_auction_brand", row)?, row, "is_auction_brand")?;
        let price = parse_f64(cols.get(&record, "price", row)?, row, "price")?;
        let share = parse_f64(cols.get(&record, "share", row)?, row, "share")?;
        let market_size = parse_f64(cols.get(&record, "market_size", row)?, row, "market_size")?;
        let wic_infants = parse_f64(cols.get(&record, "wic_infants", row)?, row, "wic_infants")?;
        let non_wic_infants = parse_f64(cols.get(&record, "non_wic_infants", row)?, row, "non_wic_infants")?;
        let wholesale = parse_f64(cols.get(&record, "wholesale", row)?, row, "wholesale")?;
        let winner_text = cols.get(&record, "winner", row)?;
        let winner = (!winner_text.is_empty()).then(|| winner_text.to_string());

        let mut characteristics = Vec::with_capacity(cols.characteristics.len());
        for (name, idx) in &cols.characteristics {
            let field = format!("x_{name}");
            characteristics.push(parse_f64(record.get(*idx).unwrap_or("").trim(), row, &field)?);
        }
        let mut demographics = BTreeMap::new();
        for (name, idx) in &cols.demographics {
            let field = format!("d_{name}");
            demographics.insert(name.clone(), parse_f64(record.get(*idx).unwrap_or("").trim(), row, &field)?);
        }
        let mut shifters = BTreeMap::new();
        for (name, idx) in &cols.shifters {
            let field = format!("z_{name}");
            shifters.insert(name.clone(), parse_f64(record.get(*idx).unwrap_or("").trim(), row, &field)?);
        }

        let m = match position.get(&market_id) {
            Some(&p) => {
                let m = &mut markets[p];
                agree(&m.month, &month, row, "month")?;
                agree(&m.market_size, &market_size, row, "market_size")?;
                agree(&m.wic_infants, &wic_infants, row, "wic_infants")?;
                agree(&m.non_wic_infants, &non_wic_infants, row, "non_wic_infants")?;
                agree(&m.winner, &winner, row, "winner")?;
                agree(&m.demographics, &demographics, row, "demographics")?;
                m
            }
            None => {
                position.insert(market_id.clone(), markets.len());
                markets.push(MarketConfig {
                    market_id: market_id.clone(),
                    month,
                    characteristic_names: cols.characteristics.iter().map(|(n, _)| n.clone()).collect(),
                    products: Vec::new(),
                    prices: Vec::new(),
                    shares: Vec::new(),
                    market_size,
                    wic_infants,
                    non_wic_infants,
                    demographics,
                    cost_shifters: BTreeMap::new(),
                    wholesale_prices: BTreeMap::new(),
                    winner,
                });
                markets.last_mut().expect("just pushed")
            }
        };
        match m.wholesale_prices.get(&firm_id) {
            Some(w) => agree(w, &wholesale, row, "wholesale")?,
            None => {
                m.wholesale_prices.insert(firm_id.clone(), wholesale);
            }
        }
        match m.cost_shifters.get(&firm_id) {
            Some(z) => agree(z, &shifters, row, "cost shifters")?,
            None => {
                m.cost_shifters.insert(firm_id.clone(), shifters);
            }
        }
        m.products.push(Product { product_id, firm_id, is_auction_brand, characteristics });
        m.prices.push(price);
        m.shares.push(share);
    }
    Ok(markets)
}

/// All markets must share characteristic names, demographic keys and shifter keys.
pub fn write_markets_csv<W: Write>(writer: W, markets: &[MarketConfig]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let Some(first) = markets.first() else {
        wtr.write_record(FIXED_COLUMNS)?;
        wtr.flush()?;
        return Ok(());
    };
    let x_names = first.characteristic_names.clone();
    let d_names: Vec<String> = first.demographics.keys().cloned().collect();
    let z_names: Vec<String> =
        first.cost_shifters.values().next().map(|m| m.keys().cloned().collect()).unwrap_or_default();

    let mut header: Vec<String> = ["market_id", "month", "firm_id", "product_id", "is_auction_brand", "price", "share"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(x_names.iter().map(|n| format!("x_{n}")));
    header.extend(["market_size", "wic_infants", "non_wic_infants"].iter().map(|s| s.to_string()));
    header.extend(d_names.iter().map(|n| format!("d_{n}")));
    header.extend(z_names.iter().map(|n| format!("z_{n}")));
    header.extend(["wholesale", "winner"].iter().map(|s| s.to_string()));
    wtr.write_record(&header)?;

    for m in markets {
        if m.characteristic_names != x_names
            || m.demographics.keys().ne(d_names.iter())
            || m.cost_shifters.values().any(|z| z.keys().ne(z_names.iter()))
        {
            return Err(Error::invariant(
                &m.market_id,
                "column layout differs from the first market; cannot share a CSV header",
            ));
        }
        for (j, p) in m.products.iter().enumerate() {
            let mut row: Vec<String> = vec![
                m.market_id.clone(),
                m.month.to_string(),
                p.firm_id.clone(),
                p.product_id.clone(),
                p.is_auction_brand.to_string(),
                m.prices[j].to_string(),
                m.shares[j].to_string(),
            ];
            row.extend(p.characteristics.iter().map(|v| v.to_string()));
            row.push(m.market_size.to_string());
            row.push(m.wic_infants.to_string());
            row.push(m.non_wic_infants.to_string());
            row.extend(m.demographics.values().map(|v| v.to_string()));
            let z = m.cost_shifters.get(&p.firm_id).ok_or_else(|| {
                Error::invariant(&m.market_id, format!("missing cost shifters for firm {}", p.firm_id))
            })?;
            row.extend(z.values().map(|v| v.to_string()));
            row.push(m.wholesale(&p.firm_id)?.to_string());
            row.push(m.winner.clone().unwrap_or_default());
            wtr.write_record(&row)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_auctions_csv<R: Read>(reader: R) -> Result<Vec<AuctionRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<AuctionRecord>().enumerate() {
        let rec = rec.map_err(|e| Error::Schema {
            row: i + 2,
            field: e.position().map(|_| "record".to_string()).unwrap_or_else(|| "record".into()),
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_auctions_csv<W: Write>(writer: W, records: &[AuctionRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    if records.is_empty() {
        wtr.write_record(["market_id", "firm_id", "wholesale", "rebate", "contract_length", "won"])?;
    }
    for r in records {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn load_auctions(path: &Path, format: DataFormat) -> Result<Vec<AuctionRecord>> {
    let mut file = File::open(path).map_err(|e| file_error(path, e))?;
    let records: Vec<AuctionRecord> = match format {
        DataFormat::Csv => read_auctions_csv(&mut file)?,
        DataFormat::Json => {
            let mut text = String::new();
            file.read_to_string(&mut text)?;
            serde_json::from_str(&text).map_err(|e| file_error(path, e))?
        }
    };
    for r in &records {
        r.validate()?;
    }
    Ok(records)
}

pub fn write_auctions(path: &Path, format: DataFormat, records: &[AuctionRecord]) -> Result<()> {
    let mut file = File::create(path).map_err(|e| file_error(path, e))?;
    match format {
        DataFormat::Csv => write_auctions_csv(&mut file, records),
        DataFormat::Json => {
            serde_json::to_writer_pretty(&mut file, records)?;
            file.write_all(b"\n")?;
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::fixtures::three_firm_market;

    fn two_markets() -> Vec<MarketConfig> {
        let a = three_firm_market();
        let mut b = three_firm_market();
        b.market_id = "S2-2015-01".into();
        b.winner = None;
        b.prices[0] = 1.234_567_890_123;
        b.cost_shifters.get_mut("C").unwrap().insert("distance".into(), 1.7);
        vec![a, b]
    }

    #[test]
    fn csv_round_trip_two_markets() {
        let markets = two_markets();
        let mut buf = Vec::new();
        write_markets_csv(&mut buf, &markets).unwrap();
        let back = read_markets_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back, markets);
    }

    #[test]
    fn json_round_trip() {
        let markets = two_markets();
        let text = serde_json::to_string(&markets).unwrap();
        let back: Vec<MarketConfig> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, markets);
    }

    #[test]
    fn negative_price_in_file_is_reported() {
        let mut markets = two_markets();
        markets[1].prices[3] = -1.0;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_markets(&path, DataFormat::Csv, &markets).unwrap();
        let err = load_markets(&path, DataFormat::Csv).unwrap_err().to_string();
        assert!(err.contains("S2-2015-01") && err.contains("price"), "{err}");
    }

    #[test]
    fn absent_winner_in_file_is_reported() {
        let mut markets = two_markets();
        markets[0].winner = Some("Q".into());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        write_markets(&path, DataFormat::Json, &markets).unwrap();
        let err = load_markets(&path, DataFormat::Json).unwrap_err().to_string();
        assert!(err.contains("winner"), "{err}");
    }

    #[test]
    fn bad_number_names_row_and_field() {
        let markets = two_markets();
        let mut buf = Vec::new();
        write_markets_csv(&mut buf, &markets).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[3] = lines[3].replacen("1.2", "abc", 1);
        let err = read_markets_csv(lines.join("\n").as_bytes()).unwrap_err();
        match err {
            Error::Schema { row, field, .. } => {
                assert_eq!(row, 4);
                assert_eq!(field, "price");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn conflicting_firm_wholesale_is_schema_error() {
        let markets = two_markets();
        let mut buf = Vec::new();
        write_markets_csv(&mut buf, &markets[..1]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        // second product of firm A: change the trailing wholesale field
        let mut fields: Vec<String> = lines[2].split(',').map(String::from).collect();
        let n = fields.len();
        fields[n - 2] = "9.9".into();
        lines[2] = fields.join(",");
        let err = read_markets_csv(lines.join("\n").as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Schema { row: 3, .. }), "{err:?}");
    }

    #[test]
    fn auctions_round_trip() {
        let recs = vec![
            AuctionRecord {
                market_id: "m1".into(),
                firm_id: "A".into(),
                wholesale: 1.05,
                rebate: 0.84,
                contract_length: 3.0,
                won: false,
            },
            AuctionRecord {
                market_id: "m1".into(),
                firm_id: "B".into(),
                wholesale: 0.99,
                rebate: 0.88,
                contract_length: 3.0,
                won: true,
            },
        ];
        let mut buf = Vec::new();
        write_auctions_csv(&mut buf, &recs).unwrap();
        assert_eq!(read_auctions_csv(buf.as_slice()).unwrap(), recs);
    }
}
