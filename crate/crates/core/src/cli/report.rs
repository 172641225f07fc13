use std::fs;
use std::path::PathBuf;

use super::config::{OutputFormat, RunConfig};
use super::manifest::{file_hash, Manifest};
use super::stages::{read_json, require, write_json, SimulationResults, SIMULATION_FILE};
use super::CliError;
use crate::counterfactual::{write_long_csv, Aggregate, ComparisonTable};

pub const REPORT_TEXT_FILE: &str = "report.txt";
pub const LONG_FILE: &str = "long.csv";

/// Comparison tables in display order: name, title, base, alternative.
fn comparisons(r: &SimulationResults) -> Vec<(&'static str, &'static str, ComparisonTable)> {
    vec![
        ("voucher_vs_auction", "Impact of the auction (base: voucher)", ComparisonTable::new(&r.voucher, &r.auction)),
        (
            "auction_vs_predetermined",
            "Predetermined rebate (base: auction)",
            ComparisonTable::new(&r.auction, &r.predetermined),
        ),
        (
            "voucher_vs_predetermined",
            "Predetermined rebate (base: voucher)",
            ComparisonTable::new(&r.voucher, &r.predetermined),
        ),
    ]
}

pub fn report(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let sim_path = cfg.out.join(SIMULATION_FILE);
    require(&sim_path)?;
    let manifest = Manifest::load(&cfg.out)?;
    if let Some(rec) = manifest.get("simulate") {
        let recorded = rec.outputs.get(SIMULATION_FILE);
        if recorded.is_some_and(|h| *h != file_hash(&sim_path).unwrap_or_default()) {
            return Err(CliError::Failed(format!(
                "{} does not match the hash recorded in the manifest",
                sim_path.display()
            )));
        }
    }
    let results: SimulationResults = read_json(&sim_path)?;
    let tables = comparisons(&results);
    let mut written = Vec::new();

    let mut text = String::new();
    for (_, title, t) in &tables {
        text.push_str(title);
        text.push('\n');
        text.push_str(&t.render_text());
        text.push('\n');
    }
    text.push_str("Program size (auction; WIC infants scaled)\n");
    text.push_str(&results.sweep.render_text());
    let p = cfg.out.join(REPORT_TEXT_FILE);
    fs::write(&p, text)?;
    written.push(p);

    match cfg.format {
        OutputFormat::Csv => {
            for (name, _, t) in &tables {
                let p = cfg.out.join(format!("table_{name}.csv"));
                t.write_csv(fs::File::create(&p)?)?;
                written.push(p);
            }
            let p = cfg.out.join("table_program_size.csv");
            results.sweep.write_csv(fs::File::create(&p)?)?;
            written.push(p);
        }
        OutputFormat::Json => {
            for (name, _, t) in &tables {
                let p = cfg.out.join(format!("table_{name}.json"));
                write_json(&p, t)?;
                written.push(p);
            }
            let p = cfg.out.join("table_program_size.json");
            write_json(&p, &results.sweep)?;
            written.push(p);
        }
        OutputFormat::Text => {}
    }

    let mut long: Vec<Aggregate> =
        vec![results.auction.clone(), results.voucher.clone(), results.predetermined.clone()];
    for (s, col) in results.sweep.scales.iter().zip(&results.sweep.columns) {
        let mut c = col.clone();
        c.label = format!("auction_scale_{s}");
        long.push(c);
    }
    let p = cfg.out.join(LONG_FILE);
    write_long_csv(fs::File::create(&p)?, &long)?;
    written.push(p);
    Ok(written)
}
