use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{simulate_markets, MarketInputs, MechanismConfig, MechanismKind, MechanismOutcome, Models};
use crate::error::{Error, Result};

/// Per-market means of one mechanism's outcomes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub label: String,
    pub n_markets: usize,
    pub gexp: f64,
    pub cs_wic: f64,
    pub cs_nonwic: f64,
    pub profits: BTreeMap<String, f64>,
    pub failed_draws: usize,
    pub total_draws: usize,
}

impl Aggregate {
    pub fn cs(&self) -> f64 {
        self.cs_wic + self.cs_nonwic
    }

    pub fn pi_all(&self) -> f64 {
        self.profits.values().sum()
    }

    pub fn ts(&self) -> f64 {
        self.cs() + self.pi_all()
    }

    /// Table rows in display order; totals are formed from the components here.
    pub fn metrics(&self) -> Vec<(String, f64)> {
        table_column(self.gexp, self.cs_wic, self.cs_nonwic, &self.profits)
    }
}

/// Full column from its additive components, so every total is an exact sum
/// of the entries shown beneath it.
fn table_column(gexp: f64, cs_wic: f64, cs_nonwic: f64, profits: &BTreeMap<String, f64>) -> Vec<(String, f64)> {
    let cs = cs_wic + cs_nonwic;
    let pi_all: f64 = profits.values().sum();
    let mut rows = vec![
        ("GEXP".to_string(), gexp),
        ("TS".to_string(), cs + pi_all),
        ("CS".to_string(), cs),
        ("pi_all".to_string(), pi_all),
        ("CS_WIC".to_string(), cs_wic),
        ("CS_nonWIC".to_string(), cs_nonwic),
    ];
    rows.extend(profits.iter().map(|(f, v)| (format!("pi_{f}"), *v)));
    rows
}

pub fn aggregate(label: &str, outcomes: &[MechanismOutcome]) -> Result<Aggregate> {
    if outcomes.is_empty() {
        return Err(Error::invalid("cannot aggregate zero markets"));
    }
    let n = outcomes.len() as f64;
    let mut agg = Aggregate {
        label: label.to_string(),
        n_markets: outcomes.len(),
        gexp: 0.0,
        cs_wic: 0.0,
        cs_nonwic: 0.0,
        profits: BTreeMap::new(),
        failed_draws: 0,
        total_draws: 0,
    };
    for o in outcomes {
        agg.gexp += o.gexp;
        agg.cs_wic += o.cs_wic;
        agg.cs_nonwic += o.cs_nonwic;
        for (f, p) in &o.profits {
            *agg.profits.entry(f.clone()).or_default() += p.total;
        }
        agg.failed_draws += o.failed_draws;
        agg.total_draws += o.total_draws;
    }
    agg.gexp /= n;
    agg.cs_wic /= n;
    agg.cs_nonwic /= n;
    for v in agg.profits.values_mut() {
        *v /= n;
    }
    Ok(agg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub metric: String,
    pub base: f64,
    pub alt: f64,
    pub diff: f64,
    /// `diff / base`; absent when the base is zero.
    pub pct: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub base: String,
    pub alt: String,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn new(base: &Aggregate, alt: &Aggregate) -> Self {
        let firms: BTreeSet<&String> = base.profits.keys().chain(alt.profits.keys()).collect();
        let profits = |a: &Aggregate| -> BTreeMap<String, f64> {
            firms.iter().map(|f| ((*f).clone(), a.profits.get(*f).copied().unwrap_or(0.0))).collect()
        };
        let (pb, pa) = (profits(base), profits(alt));
        let pd: BTreeMap<String, f64> = pb.iter().map(|(f, v)| (f.clone(), pa[f] - v)).collect();
        let b = table_column(base.gexp, base.cs_wic, base.cs_nonwic, &pb);
        let a = table_column(alt.gexp, alt.cs_wic, alt.cs_nonwic, &pa);
        let d = table_column(alt.gexp - base.gexp, alt.cs_wic - base.cs_wic, alt.cs_nonwic - base.cs_nonwic, &pd);
        let rows = b
            .into_iter()
            .zip(a)
            .zip(d)
            .map(|(((metric, b), (_, a)), (_, diff))| ComparisonRow {
                metric,
                base: b,
                alt: a,
                diff,
                pct: (b != 0.0).then(|| diff / b),
            })
            .collect();
        Self { base: base.label.clone(), alt: alt.label.clone(), rows }
    }

    pub fn row(&self, metric: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.metric == metric)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["metric", &self.base, &self.alt, "diff", "pct"])?;
        for r in &self.rows {
            w.write_record([
                r.metric.clone(),
                r.base.to_string(),
                r.alt.to_string(),
                r.diff.to_string(),
                r.pct.map(|p| p.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<12} {:>14} {:>14} {:>14} {:>9}", "", self.base, self.alt, "diff", "%");
        for r in &self.rows {
            let pct = r.pct.map(|p| format!("{:.1}%", 100.0 * p)).unwrap_or_else(|| "-".into());
            let _ = writeln!(s, "{:<12} {:>14.3} {:>14.3} {:>14.3} {:>9}", r.metric, r.base, r.alt, r.diff, pct);
        }
        s
    }
}

/// Simulates both mechanisms on every market and tabulates `alt − base`.
pub fn compare_mechanisms(
    inputs: &[MarketInputs],
    models: &Models,
    base: &MechanismConfig,
    alt: &MechanismConfig,
) -> Result<ComparisonTable> {
    let b = aggregate(&config_label(base), &simulate_markets(inputs, models, base)?)?;
    let a = aggregate(&config_label(alt), &simulate_markets(inputs, models, alt)?)?;
    Ok(ComparisonTable::new(&b, &a))
}

pub(crate) fn config_label(config: &MechanismConfig) -> String {
    match config.kind {
        MechanismKind::Predetermined => format!("predetermined@{}", config.rebate_rate),
        k => k.as_str().to_string(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub scales: Vec<f64>,
    pub columns: Vec<Aggregate>,
}

impl SweepTable {
    /// Column index of the unit scale, if swept.
    pub fn baseline(&self) -> Option<usize> {
        self.scales.iter().position(|s| *s == 1.0)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["metric".to_string()];
        header.extend(self.scales.iter().map(|s| format!("scale_{s}")));
        w.write_record(&header)?;
        let metrics: Vec<Vec<(String, f64)>> = self.columns.iter().map(Aggregate::metrics).collect();
        for (r, (name, _)) in metrics[0].iter().enumerate() {
            let mut rec = vec![name.clone()];
            rec.extend(metrics.iter().map(|m| m[r].1.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{:<12}", "");
        for sc in &self.scales {
            let _ = write!(s, " {:>14}", format!("x{sc}"));
        }
        s.push('\n');
        let metrics: Vec<Vec<(String, f64)>> = self.columns.iter().map(Aggregate::metrics).collect();
        for (r, (name, _)) in metrics[0].iter().enumerate() {
            let _ = write!(s, "{name:<12}");
            for m in &metrics {
                let _ = write!(s, " {:>14.3}", m[r].1);
            }
            s.push('\n');
        }
        s
    }
}

/// Re-runs the auction mechanism with WIC enrolment scaled by each factor.
pub fn program_size_sweep(
    inputs: &[MarketInputs],
    models: &Models,
    config: &MechanismConfig,
    scales: &[f64],
) -> Result<SweepTable> {
    if scales.is_empty() || scales.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::invalid("scale factors must be positive"));
    }
    let mut columns = Vec::with_capacity(scales.len());
    for &scale in scales {
        let scaled: Vec<MarketInputs> = inputs
            .iter()
            .map(|m| {
                let mut m = m.clone();
                m.model.market.wic_infants *= scale;
                m
            })
            .collect();
        let outcomes = simulate_markets(&scaled, models, config)?;
        columns.push(aggregate(&format!("x{scale}"), &outcomes)?);
    }
    Ok(SweepTable { scales: scales.to_vec(), columns })
}

/// Plot-ready rows `(mechanism, metric, value)`.
pub fn write_long_csv<W: Write>(writer: W, aggregates: &[Aggregate]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["mechanism", "metric", "value"])?;
    for a in aggregates {
        for (metric, v) in a.metrics() {
            w.write_record([a.label.as_str(), metric.as_str(), v.to_string().as_str()])?;
        }
    }
    w.flush()?;
    Ok(())
}
