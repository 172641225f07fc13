mod common;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use common::{random_draws, random_market, rng};
use procurement_core::demand::{
    exogenous_columns, gmm_estimate, market_shares, ConsumerDraws, DemandParams, GmmOptions, Instruments, Xi,
};
use procurement_core::error::Error;
use procurement_core::market_data::MarketConfig;

fn truth() -> DemandParams {
    DemandParams { delta0: 0.3, delta1: 0.5, ..DemandParams::logit(4.0, vec![1.5, 0.4]) }
}

/// Markets with exogenous prices; winners rotate and every third market has none.
fn markets(r: &mut ChaCha8Rng, n: usize) -> Vec<MarketConfig> {
    (0..n)
        .map(|i| {
            let winner = (i % 3 != 2).then(|| r.random_range(0..3));
            random_market(r, &format!("m{i:03}"), 3, 2, winner)
        })
        .collect()
}

/// Exogenous regressors plus price, which is its own instrument here.
fn instruments(ms: &[MarketConfig]) -> Instruments {
    let (exog, mut names) = exogenous_columns(ms);
    let prices: Vec<f64> = ms.iter().flat_map(|m| m.prices.iter().copied()).collect();
    let mut z = exog.clone().insert_column(exog.ncols(), 0.0);
    z.set_column(exog.ncols(), &DVector::from_vec(prices));
    names.push("price".into());
    Instruments::new(z, names).unwrap()
}

/// Sets observed shares from `params` and per-row unobservables `xi`.
fn fill_shares(ms: &mut [MarketConfig], params: &DemandParams, xi: &[f64], draws: &[ConsumerDraws]) {
    let mut row = 0;
    for (m, d) in ms.iter_mut().zip(draws) {
        let n = m.product_count();
        let x = Xi(xi[row..row + n].to_vec());
        m.shares = market_shares(params, m, &x, m.winner.as_deref(), d).unwrap();
        row += n;
    }
}

fn draws_for(r: &mut ChaCha8Rng, n: usize) -> Vec<ConsumerDraws> {
    (0..n).map(|_| random_draws(r, 5)).collect()
}

fn estimate_of(est: &procurement_core::demand::DemandEstimate, name: &str) -> (f64, Option<f64>) {
    let i = est.names.iter().position(|n| n == name).unwrap_or_else(|| panic!("{name} not reported"));
    (est.estimates[i], est.std_errors[i])
}

const LINEAR: [&str; 5] = ["beta_const", "beta_quality", "alpha", "delta0", "delta1"];

fn truth_of(p: &DemandParams, name: &str) -> f64 {
    match name {
        "beta_const" => p.beta[0],
        "beta_quality" => p.beta[1],
        "alpha" => p.alpha,
        "delta0" => p.delta0,
        _ => p.delta1,
    }
}

/// Unobservables orthogonal to every instrument: the moments vanish at the
/// truth, so linear IV recovers it exactly.
#[test]
fn linear_parameters_recovered_exactly_with_orthogonal_unobservables() {
    let mut r = rng(21);
    let mut ms = markets(&mut r, 40);
    let z = instruments(&ms);
    let e = DVector::from_iterator(z.z.nrows(), (0..z.z.nrows()).map(|_| r.random_range(-0.3..0.3)));
    let ztz = z.z.transpose() * &z.z;
    let coef = ztz.lu().solve(&(z.z.transpose() * &e)).unwrap();
    let xi = &e - &z.z * coef;
    let draws = draws_for(&mut r, ms.len());
    let p = truth();
    fill_shares(&mut ms, &p, xi.as_slice(), &draws);

    let est = gmm_estimate(&ms, &z, &draws, &p, &GmmOptions::linear_only()).unwrap();
    for name in LINEAR {
        let (b, _) = estimate_of(&est, name);
        let t = truth_of(&p, name);
        assert!((b - t).abs() < 1e-8, "{name}: {b} vs {t}");
    }
    let recovered: Vec<f64> = est.xi.iter().flat_map(|m| m.xi.iter().copied()).collect();
    for (a, b) in recovered.iter().zip(xi.iter()) {
        assert!((a - b).abs() < 1e-8);
    }
}

#[test]
fn estimates_fall_within_sampling_error() {
    let mut r = rng(22);
    let mut ms = markets(&mut r, 150);
    let z = instruments(&ms);
    let xi: Vec<f64> = (0..z.z.nrows()).map(|_| r.random_range(-0.3..0.3)).collect();
    let draws = draws_for(&mut r, ms.len());
    let p = truth();
    fill_shares(&mut ms, &p, &xi, &draws);

    let est = gmm_estimate(&ms, &z, &draws, &p, &GmmOptions::linear_only()).unwrap();
    for name in LINEAR {
        let (b, se) = estimate_of(&est, name);
        let se = se.expect("standard error for a supported parameter");
        let t = truth_of(&p, name);
        assert!(se > 0.0 && se.is_finite(), "{name}: se {se}");
        assert!((b - t).abs() < 4.0 * se, "{name}: {b} vs {t} (se {se})");
    }
    assert!(estimate_of(&est, "sigma_price").1.is_none());
}

#[test]
fn duplicated_instrument_is_rank_deficient() {
    let mut r = rng(23);
    let ms = markets(&mut r, 10);
    let base = instruments(&ms);
    let k = base.z.ncols();
    let mut z = base.z.clone().insert_column(k, 0.0);
    z.set_column(k, &base.z.column(0).into_owned());
    let mut names = base.names.clone();
    names.push("copy".into());
    let dup = Instruments::new(z, names).unwrap();
    let draws = draws_for(&mut r, ms.len());
    let err = gmm_estimate(&ms, &dup, &draws, &truth(), &GmmOptions::linear_only()).unwrap_err();
    assert!(matches!(err, Error::RankDeficient { .. }), "{err}");
}

#[test]
fn too_few_instruments_is_rejected() {
    let mut r = rng(24);
    let ms = markets(&mut r, 10);
    let (exog, names) = exogenous_columns(&ms);
    let z = Instruments::new(exog, names).unwrap();
    let draws = draws_for(&mut r, ms.len());
    let err = gmm_estimate(&ms, &z, &draws, &truth(), &GmmOptions::linear_only()).unwrap_err();
    assert!(matches!(err, Error::RankDeficient { .. }), "{err}");
}

#[test]
fn mismatched_instrument_rows_are_rejected() {
    let mut r = rng(25);
    let ms = markets(&mut r, 10);
    let z = Instruments::new(DMatrix::from_element(3, 1, 1.0), vec!["one".into()]).unwrap();
    let draws = draws_for(&mut r, ms.len());
    assert!(gmm_estimate(&ms, &z, &draws, &truth(), &GmmOptions::linear_only()).is_err());
}

#[test]
fn nonlinear_estimation_is_bitwise_reproducible() {
    let mut r = rng(26);
    let mut ms = markets(&mut r, 30);
    let p = DemandParams { sigma_price: 0.3, income_center: common::INCOME_CENTER, ..truth() };
    let xi: Vec<f64> = ms.iter().flat_map(|m| common::random_xi(&mut r, m.product_count())).collect();
    let draws: Vec<ConsumerDraws> = (0..ms.len()).map(|_| random_draws(&mut r, 40)).collect();
    fill_shares(&mut ms, &p, &xi, &draws);
    let set = procurement_core::demand::InstrumentSet::build(&ms).unwrap();
    let (exog, names) = exogenous_columns(&ms);
    let z = set.assemble(&exog, &names).unwrap();
    let options = GmmOptions { estimate_nonlinear: [true, false, false], max_iter: 60, ..GmmOptions::default() };
    let init = DemandParams { sigma_price: 0.1, ..p.clone() };
    let a = gmm_estimate(&ms, &z, &draws, &init, &options).unwrap();
    let b = gmm_estimate(&ms, &z, &draws, &init, &options).unwrap();
    assert_eq!(a, b);
    assert!(a.objective.is_finite() && a.objective >= 0.0);
    assert!(estimate_of(&a, "sigma_price").1.is_some());
}
