//! Pure-strategy equilibria of the participation game.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Participation set to per-firm payoff.
pub type ProfitTable = BTreeMap<BTreeSet<String>, BTreeMap<String, f64>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntryResult {
    pub equilibria: Vec<BTreeSet<String>>,
    pub unique: bool,
}

/// Equilibrium bitmasks over `n` players. `payoffs[mask][i]` is player `i`'s
/// payoff when the players in `mask` participate; `None` marks an unsolved
/// configuration, which cannot be an equilibrium. A solved configuration with
/// an unsolved deviation is an error.
pub fn entry_equilibria_partial(n: usize, payoffs: &[Option<Vec<f64>>]) -> Result<Vec<usize>> {
    if payoffs.len() != 1 << n {
        return Err(Error::dimension("entry payoff table", 1 << n, payoffs.len()));
    }
    let mut out = Vec::new();
    for (mask, entry) in payoffs.iter().enumerate() {
        let Some(here) = entry else { continue };
        if here.len() != n {
            return Err(Error::dimension("entry payoffs per configuration", n, here.len()));
        }
        let mut stable = true;
        for i in 0..n {
            let dev = mask ^ (1 << i);
            let there = payoffs[dev].as_ref().ok_or_else(|| {
                Error::Numerical(format!("configuration {dev:#b} unsolved but needed to test {mask:#b}"))
            })?;
            if there[i] > here[i] {
                stable = false;
                break;
            }
        }
        if stable {
            out.push(mask);
        }
    }
    Ok(out)
}

pub fn entry_equilibrium(table: &ProfitTable) -> Result<EntryResult> {
    let firms: Vec<String> = table.keys().flatten().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let n = firms.len();
    let mut payoffs: Vec<Option<Vec<f64>>> = vec![None; 1 << n];
    for (mask, slot) in payoffs.iter_mut().enumerate() {
        let set: BTreeSet<String> = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| firms[i].clone()).collect();
        let row = table.get(&set).ok_or_else(|| Error::invalid(format!("profit table lacks configuration {set:?}")))?;
        let vals = firms
            .iter()
            .map(|f| {
                row.get(f).copied().ok_or_else(|| Error::invalid(format!("profit table lacks firm {f} in {set:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        *slot = Some(vals);
    }
    let masks = entry_equilibria_partial(n, &payoffs)?;
    let equilibria: Vec<BTreeSet<String>> =
        masks.iter().map(|m| (0..n).filter(|i| m & (1 << i) != 0).map(|i| firms[i].clone()).collect()).collect();
    Ok(EntryResult { unique: equilibria.len() == 1, equilibria })
}
