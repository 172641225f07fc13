use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::market_data::{MarketConfig, DEMO_INCOME};
use crate::seeds;

/// Simulated consumers of one market. Column 0 of `v` loads on price,
/// column 1 on the inside-good constant.
#[derive(Clone, Debug, PartialEq)]
pub struct ConsumerDraws {
    pub v: DMatrix<f64>,
    pub income: Vec<f64>,
    pub weights: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DrawMethod {
    #[default]
    Pseudo,
    Halton,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrawConfig {
    pub n_draws: usize,
    pub method: DrawMethod,
    /// Standard deviation of log income around the market median.
    pub income_log_sd: f64,
}

impl Default for DrawConfig {
    fn default() -> Self {
        Self { n_draws: 200, method: DrawMethod::Pseudo, income_log_sd: 0.5 }
    }
}

impl ConsumerDraws {
    pub fn new(v: DMatrix<f64>, income: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let n = v.nrows();
        if v.ncols() != 2 {
            return Err(Error::dimension("draw columns", 2, v.ncols()));
        }
        if income.len() != n {
            return Err(Error::dimension("income draws", n, income.len()));
        }
        if weights.len() != n {
            return Err(Error::dimension("draw weights", n, weights.len()));
        }
        if n == 0 {
            return Err(Error::invalid("at least one consumer draw is required"));
        }
        if weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::invalid("draw weights must be nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("draw weights sum to {total}, not 1")));
        }
        Ok(Self { v, income, weights })
    }

    /// A single representative consumer with zero deviations.
    pub fn degenerate() -> Self {
        Self { v: DMatrix::zeros(1, 2), income: vec![0.0], weights: vec![1.0] }
    }

    /// Uniformly weighted draws with standard normal tastes and lognormal income
    /// around `median_income`.
    pub fn simulate<R: Rng>(rng: &mut R, n: usize, median_income: f64, income_log_sd: f64) -> Self {
        let mut v = DMatrix::zeros(n, 2);
        let mut income = Vec::with_capacity(n);
        for i in 0..n {
            v[(i, 0)] = StandardNormal.sample(rng);
            v[(i, 1)] = StandardNormal.sample(rng);
            let e: f64 = StandardNormal.sample(rng);
            income.push(median_income * (income_log_sd * e).exp());
        }
        Self { v, income, weights: vec![1.0 / n as f64; n] }
    }

    /// Scrambled Halton points in bases 2, 3, 5 mapped through the normal quantile.
    pub fn halton<R: Rng>(rng: &mut R, n: usize, median_income: f64, income_log_sd: f64) -> Self {
        let normal = Normal::standard();
        let shifts: [f64; 3] = [rng.random(), rng.random(), rng.random()];
        let mut v = DMatrix::zeros(n, 2);
        let mut income = Vec::with_capacity(n);
        for i in 0..n {
            let u: Vec<f64> = [2u64, 3, 5]
                .iter()
                .zip(shifts)
                .map(|(b, s)| {
                    let x = (radical_inverse(i as u64 + 1, *b) + s).fract();
                    x.clamp(1e-12, 1.0 - 1e-12)
                })
                .collect();
            v[(i, 0)] = normal.inverse_cdf(u[0]);
            v[(i, 1)] = normal.inverse_cdf(u[1]);
            income.push(median_income * (income_log_sd * normal.inverse_cdf(u[2])).exp());
        }
        Self { v, income, weights: vec![1.0 / n as f64; n] }
    }

    /// Draws for `market`, seeded by its id.
    pub fn for_market(config: &DrawConfig, root_seed: u64, market: &MarketConfig) -> Result<Self> {
        if config.n_draws == 0 {
            return Err(Error::invalid("n_draws must be positive"));
        }
        let median = market.demographics.get(DEMO_INCOME).copied().unwrap_or(0.0);
        let mut rng = seeds::rng(root_seed, "consumer_draws", &market.market_id);
        Ok(match config.method {
            DrawMethod::Pseudo => Self::simulate(&mut rng, config.n_draws, median, config.income_log_sd),
            DrawMethod::Halton => Self::halton(&mut rng, config.n_draws, median, config.income_log_sd),
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut inv = 1.0 / base as f64;
    let mut out = 0.0;
    while i > 0 {
        out += (i % base) as f64 * inv;
        i /= base;
        inv /= base as f64;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn radical_inverse_base2() {
        assert_eq!(radical_inverse(1, 2), 0.5);
        assert_eq!(radical_inverse(2, 2), 0.25);
        assert_eq!(radical_inverse(3, 2), 0.75);
    }

    #[test]
    fn weights_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for d in [ConsumerDraws::simulate(&mut rng, 37, 50.0, 0.4), ConsumerDraws::halton(&mut rng, 37, 50.0, 0.4)] {
            assert!((d.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(d.income.iter().all(|x| *x > 0.0));
        }
    }

    #[test]
    fn halton_moments_are_close() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = ConsumerDraws::halton(&mut rng, 4000, 1.0, 0.0);
        let mean: f64 = d.v.column(0).mean();
        let var: f64 = d.v.column(0).iter().map(|x| x * x).sum::<f64>() / 4000.0;
        assert!(mean.abs() < 0.01 && (var - 1.0).abs() < 0.02, "{mean} {var}");
    }

    #[test]
    fn bad_weights_rejected() {
        let v = DMatrix::zeros(2, 2);
        assert!(ConsumerDraws::new(v, vec![1.0, 1.0], vec![0.6, 0.6]).is_err());
    }
}
