use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::CliError;
use crate::bidding::DEFAULT_REBATE_DRAWS;
use crate::counterfactual::{WicChoice, DEFAULT_REBATE_RATE};

pub const OUT_DIR_ENV: &str = "PROCSIM_OUT_DIR";
const DEFAULT_OUT: &str = "procsim-out";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
    Text,
}

impl FromStr for OutputFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            "text" => Ok(OutputFormat::Text),
            other => Err(format!("unknown format `{other}` (expected csv, json or text)")),
        }
    }
}

impl OutputFormat {
    pub fn as_str(&self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
            OutputFormat::Text => "text",
        }
    }
}

/// Values given on the command line; `None` falls back to the config file, then defaults.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub markets: Option<PathBuf>,
    pub auctions: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub draws: Option<usize>,
    pub rebate_rate: Option<f64>,
    pub threads: Option<usize>,
    pub format: Option<OutputFormat>,
    pub consumer_draws: Option<usize>,
    pub wic_choice: Option<WicChoice>,
    pub spec: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub markets: Option<PathBuf>,
    pub auctions: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub draws: usize,
    pub rebate_rate: f64,
    /// `None` uses every available core.
    pub threads: Option<usize>,
    pub format: OutputFormat,
    pub consumer_draws: usize,
    pub rho_initial: f64,
    pub scales: Vec<f64>,
    pub linear_only: bool,
    pub wic_choice: WicChoice,
    pub spec: Option<PathBuf>,
}

/// `key = value` lines; `#` starts a comment.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| format!("line {}: expected `key = value`", i + 1))?;
        map.insert(k.trim().replace('-', "_"), v.trim().to_string());
    }
    Ok(map)
}

fn parse<T: FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    map.get(key).map(|v| v.parse::<T>().map_err(|e| CliError::Usage(format!("config key `{key}`: {e}")))).transpose()
}

const KNOWN_KEYS: [&str; 14] = [
    "auctions",
    "consumer_draws",
    "draws",
    "format",
    "linear_only",
    "markets",
    "out",
    "rebate_rate",
    "rho_initial",
    "scales",
    "seed",
    "spec",
    "threads",
    "wic_choice",
];

impl RunConfig {
    pub fn resolve(flags: &Overrides, config_file: Option<&Path>) -> Result<Self, CliError> {
        let file = match config_file {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                parse_config(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
            }
            None => BTreeMap::new(),
        };
        if let Some(k) = file.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
            return Err(CliError::Usage(format!("unknown config key `{k}`")));
        }
        let env_out = std::env::var_os(OUT_DIR_ENV).map(PathBuf::from);
        let scales = match file.get("scales") {
            Some(s) => s
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| CliError::Usage(format!("config key `scales`: {e}")))?,
            None => vec![0.9, 1.0, 1.1],
        };
        let cfg = Self {
            markets: flags.markets.clone().or(parse(&file, "markets")?),
            auctions: flags.auctions.clone().or(parse(&file, "auctions")?),
            out: flags.out.clone().or(parse(&file, "out")?).or(env_out).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
            seed: flags.seed.or(parse(&file, "seed")?).unwrap_or(0),
            draws: flags.draws.or(parse(&file, "draws")?).unwrap_or(DEFAULT_REBATE_DRAWS),
            rebate_rate: flags.rebate_rate.or(parse(&file, "rebate_rate")?).unwrap_or(DEFAULT_REBATE_RATE),
            threads: flags.threads.or(parse(&file, "threads")?),
            format: flags.format.or(parse(&file, "format")?).unwrap_or(OutputFormat::Csv),
            consumer_draws: flags.consumer_draws.or(parse(&file, "consumer_draws")?).unwrap_or(200),
            rho_initial: parse(&file, "rho_initial")?.unwrap_or(0.05),
            scales,
            linear_only: parse(&file, "linear_only")?.unwrap_or(false),
            wic_choice: flags.wic_choice.or(parse(&file, "wic_choice")?).unwrap_or_default(),
            spec: flags.spec.clone().or(parse(&file, "spec")?),
        };
        if !(0.0..=1.0).contains(&cfg.rebate_rate) {
            return Err(CliError::Usage(format!("rebate rate {} outside [0, 1]", cfg.rebate_rate)));
        }
        if cfg.draws == 0 || cfg.consumer_draws == 0 {
            return Err(CliError::Usage("draw counts must be positive".into()));
        }
        if cfg.threads == Some(0) {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        if cfg.scales.is_empty() || cfg.scales.iter().any(|s| !(*s > 0.0)) {
            return Err(CliError::Usage("scales must be positive".into()));
        }
        Ok(cfg)
    }

    pub fn echo(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "-".into());
        let mut s = String::new();
        let _ = writeln!(s, "auctions = {}", path(&self.auctions));
        let _ = writeln!(s, "consumer_draws = {}", self.consumer_draws);
        let _ = writeln!(s, "draws = {}", self.draws);
        let _ = writeln!(s, "format = {}", self.format.as_str());
        let _ = writeln!(s, "linear_only = {}", self.linear_only);
        let _ = writeln!(s, "markets = {}", path(&self.markets));
        let _ = writeln!(s, "out = {}", self.out.display());
        let _ = writeln!(s, "rebate_rate = {}", self.rebate_rate);
        let _ = writeln!(s, "rho_initial = {}", self.rho_initial);
        let scales: Vec<String> = self.scales.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "scales = {}", scales.join(","));
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "spec = {}", path(&self.spec));
        let threads = self.threads.map(|t| t.to_string()).unwrap_or_else(|| "auto".into());
        let _ = writeln!(s, "threads = {threads}");
        let _ = writeln!(s, "wic_choice = {}", self.wic_choice.as_str());
        s
    }
}
