//! Property tests over randomly drawn markets.

mod common;

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::Rng;

use common::{firm_name, random_draws, random_market, random_params, random_xi, rng};
use procurement_core::counterfactual::{entry_equilibrium, ProfitTable};
use procurement_core::demand::{
    invert_shares, mean_utility, DemandParams, MarketModel, Xi, CONTRACTION_MAX_ITER, CONTRACTION_TOL,
};
use procurement_core::market_data::{MarketConfig, WicAssignment};
use procurement_core::supply::{
    foc_residual, recover_costs, solve_bertrand, solve_sequential, CostSavings, RecoveryOptions, SolverOptions,
};

struct Case {
    market: MarketConfig,
    params: DemandParams,
    model: MarketModel,
    costs: Vec<f64>,
}

fn case(seed: u64, firms: usize, per_firm: usize, winner: Option<usize>) -> Case {
    let mut r = rng(seed);
    let market = random_market(&mut r, "m", firms, per_firm, winner);
    let params = random_params(&mut r);
    let n = market.product_count();
    let model = MarketModel { market: market.clone(), xi: Xi(random_xi(&mut r, n)), draws: random_draws(&mut r, 25) };
    let costs = (0..n).map(|_| r.random_range(0.3..0.8)).collect();
    Case { market, params, model, costs }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shares_are_positive_and_leave_room_for_the_outside_good(seed in any::<u64>(), firms in 1usize..4, per in 1usize..4) {
        let c = case(seed, firms, per, Some(0));
        let d = c.model.observed_demand(&c.params).unwrap();
        let s = d.shares(&c.market.prices);
        prop_assert!(s.iter().all(|x| *x > 0.0));
        prop_assert!(s.iter().sum::<f64>() < 1.0);
    }

    #[test]
    fn own_derivatives_negative_and_substitutes_positive(seed in any::<u64>()) {
        let c = case(seed, 3, 2, None);
        let d = c.model.observed_demand(&c.params).unwrap();
        let (_, jac) = d.shares_jacobian(&c.market.prices);
        let n = c.market.product_count();
        for j in 0..n {
            for k in 0..n {
                if j == k {
                    prop_assert!(jac[(j, k)] < 0.0);
                } else {
                    prop_assert!(jac[(j, k)] > 0.0);
                }
            }
        }
    }

    #[test]
    fn share_inversion_recovers_mean_utility(seed in any::<u64>()) {
        let c = case(seed, 3, 2, Some(1));
        let d = c.model.observed_demand(&c.params).unwrap();
        let observed = d.shares(&c.market.prices);
        let w = c.market.winner.as_deref();
        let delta = invert_shares(&observed, &c.params, &c.market, w, &c.model.draws, CONTRACTION_TOL, CONTRACTION_MAX_ITER).unwrap();
        let truth = mean_utility(&c.params, &c.market, &c.model.xi, w).unwrap();
        for (a, b) in delta.iter().zip(&truth) {
            prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
        }
    }

    #[test]
    fn bertrand_prices_solve_every_first_order_condition(seed in any::<u64>(), per in 1usize..3) {
        let c = case(seed, 3, per, None);
        let d = c.model.observed_demand(&c.params).unwrap();
        let own = c.market.ownership();
        let p = solve_bertrand(&d, &own, &c.costs, &SolverOptions::default()).unwrap();
        prop_assert!(max_abs(&foc_residual(&d, &own, &p, &c.costs, &[])) < 1e-9);
        prop_assert!(p.iter().zip(&c.costs).all(|(p, c)| p > c));
    }

    #[test]
    fn adjusted_brand_is_scaled_and_the_rest_re_solve(seed in any::<u64>(), rho in 0.0..0.3f64, w in 0usize..3) {
        let c = case(seed, 3, 2, Some(w));
        let d = c.model.observed_demand(&c.params).unwrap();
        let own = c.market.ownership();
        let k = own.auction_brand[w];
        let out = solve_sequential(&d, &own, &c.costs, &[(k, rho)], &SolverOptions::default()).unwrap();
        prop_assert!((out.prices[k] - (1.0 + rho) * out.perceived[k]).abs() < 1e-12 * out.prices[k]);
        let res = foc_residual(&d, &own, &out.prices, &c.costs, &[k]);
        prop_assert!(max_abs(&res) < 1e-9);
    }

    #[test]
    fn costs_recovered_from_bertrand_prices(seed in any::<u64>()) {
        let c = case(seed, 3, 2, None);
        let d = c.model.observed_demand(&c.params).unwrap();
        let own = c.market.ownership();
        let p = solve_bertrand(&d, &own, &c.costs, &SolverOptions::default()).unwrap();
        let rec = recover_costs(&c.market, &d, &p, 0.0, &RecoveryOptions::default()).unwrap();
        for (a, b) in rec.marginal_costs.iter().zip(&c.costs) {
            prop_assert!((a - b).abs() < 1e-8);
        }
        prop_assert!(rec.markups.iter().all(|m| *m < 1.0));
    }

    #[test]
    fn cost_shifts_apply_and_remove_exactly(seed in any::<u64>(), a in -0.2..0.2f64, b in -0.2..0.2f64, w in 0usize..3) {
        let c = case(seed, 3, 2, Some(w));
        let firms: Vec<String> = (0..3).map(firm_name).collect();
        let savings = CostSavings::uniform(&firms, a, b);
        for assignment in [WicAssignment::winner(&firm_name(w)), WicAssignment::prorated(firms.iter().map(String::as_str))] {
            let shifted = savings.apply(&c.costs, &c.market, &assignment);
            let back = savings.remove(&shifted, &c.market, &assignment);
            for (x, y) in back.iter().zip(&c.costs) {
                prop_assert!((x - y).abs() < 1e-15);
            }
        }
        // losers are untouched under a single winner
        let shifted = savings.apply(&c.costs, &c.market, &WicAssignment::winner(&firm_name(w)));
        for (j, p) in c.market.products.iter().enumerate() {
            if p.firm_id != firm_name(w) {
                prop_assert_eq!(shifted[j], c.costs[j]);
            }
        }
    }

    #[test]
    fn dominant_participation_is_the_unique_equilibrium(seed in any::<u64>(), n in 1usize..5) {
        let mut r = rng(seed);
        let firms: Vec<String> = (0..n).map(firm_name).collect();
        let mut table = ProfitTable::new();
        // a participant earns a bonus over any profit it could earn outside
        for mask in 0..(1usize << n) {
            let set: BTreeSet<String> = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| firms[i].clone()).collect();
            let row: BTreeMap<String, f64> = firms
                .iter()
                .map(|f| {
                    let base = r.random_range(0.0..1.0);
                    (f.clone(), if set.contains(f) { 2.0 + base } else { base })
                })
                .collect();
            table.insert(set, row);
        }
        let eq = entry_equilibrium(&table).unwrap();
        prop_assert!(eq.unique);
        prop_assert_eq!(eq.equilibria[0].len(), n);
    }

    #[test]
    fn entry_equilibria_ignore_firm_specific_constants(seed in any::<u64>(), shift in -5.0..5.0f64, who in 0usize..3) {
        let mut r = rng(seed);
        let firms: Vec<String> = (0..3).map(firm_name).collect();
        let mut table = ProfitTable::new();
        for mask in 0..8usize {
            let set: BTreeSet<String> = (0..3).filter(|i| mask & (1 << i) != 0).map(|i| firms[i].clone()).collect();
            let row = firms.iter().map(|f| (f.clone(), r.random_range(-1.0..1.0))).collect();
            table.insert(set, row);
        }
        let before = entry_equilibrium(&table).unwrap();
        let mut moved = table.clone();
        for row in moved.values_mut() {
            *row.get_mut(&firms[who]).unwrap() += shift;
        }
        let after = entry_equilibrium(&moved).unwrap();
        prop_assert_eq!(before, after);
    }
}
