mod common;

use proptest::prelude::*;

use common::{random_draws, random_market, random_params, random_xi, rng};
use procurement_core::bidding::{fit_rebate_model, predict_rebates, AuctionSim, ResampleMode};
use procurement_core::counterfactual::{
    consumer_surplus_wic, run_mechanism, simulate_auction, simulate_auction_with, MarketInputs, MechanismConfig,
    MechanismKind, MechanismOutcome, Models, WicChoice,
};
use procurement_core::demand::{MarketModel, Xi};
use procurement_core::market_data::synthetic::{generate_world, SyntheticSpec};
use procurement_core::market_data::WicAssignment;
use procurement_core::supply::{QuantityModel, SolverOptions};

struct Setup {
    inputs: Vec<MarketInputs>,
    models: Models,
}

fn setup(spec: SyntheticSpec, seed: u64) -> Setup {
    let world = generate_world(&spec, seed).unwrap();
    let rebate_model = fit_rebate_model(&world.auctions, &world.markets).unwrap();
    let models = Models {
        params: world.truth.demand.clone(),
        savings: world.truth.savings.clone(),
        rho: world.truth.rho.clone(),
        rebate_model,
        solver: SolverOptions::default(),
    };
    let inputs = world
        .markets
        .iter()
        .map(|m| MarketInputs {
            model: MarketModel {
                market: m.clone(),
                xi: Xi(world.truth.xi[&m.market_id].clone()),
                draws: world.draws_for(m).unwrap(),
            },
            base_costs: world.truth.base_costs[&m.market_id].clone(),
        })
        .collect();
    Setup { inputs, models }
}

fn small_spec() -> SyntheticSpec {
    SyntheticSpec { n_states: 12, n_months: 1, ..Default::default() }
}

fn config(kind: MechanismKind) -> MechanismConfig {
    MechanismConfig { n_draws: 20, seed: 3, ..MechanismConfig::new(kind) }
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

/// A simulation in which `winner` wins every draw with the given rebates.
fn fixed_sim(inputs: &MarketInputs, winner: &str, rebates: &[f64]) -> AuctionSim {
    let firms = inputs.model.market.firms();
    let f = firms.iter().position(|x| x == winner).unwrap();
    AuctionSim {
        market_id: inputs.model.market.market_id.clone(),
        wholesale: vec![1.0; firms.len()],
        point: vec![0.0; firms.len()],
        rebates: rebates
            .iter()
            .map(|r| {
                let mut row = vec![0.0; firms.len()];
                row[f] = *r;
                row
            })
            .collect(),
        winners: vec![winner.to_string(); rebates.len()],
        ties: vec![false; rebates.len()],
        firms,
    }
}

#[test]
fn mechanisms_coincide_without_procurement_distortions() {
    let mut spec = small_spec();
    spec.delta0 = 0.0;
    spec.delta1 = 0.0;
    spec.saving_all_brands = 0.0;
    spec.saving_auction_brand = 0.0;
    for f in &mut spec.firms {
        f.rho = 0.0;
    }
    let s = setup(spec, 5);
    for mi in &s.inputs {
        let prices: Vec<Vec<f64>> = [MechanismKind::Auction, MechanismKind::Voucher, MechanismKind::Predetermined]
            .into_iter()
            .map(|k| run_mechanism(mi, &s.models, &config(k)).unwrap().prices)
            .collect();
        for other in &prices[1..] {
            for (a, b) in prices[0].iter().zip(other) {
                assert!(close(*a, *b, 1e-9), "market {}: {a} vs {b}", mi.model.market.market_id);
            }
        }
    }
}

#[test]
fn full_rebate_makes_the_program_free() {
    let s = setup(small_spec(), 6);
    for mi in &s.inputs {
        for winner in mi.model.market.firms() {
            let k = mi.model.market.auction_brand_of(&winner).unwrap();
            let cfg = config(MechanismKind::Auction);
            let free = simulate_auction_with(mi, &s.models, &cfg, &fixed_sim(mi, &winner, &[0.0])).unwrap();
            let price = free.prices[k];
            let full = simulate_auction_with(mi, &s.models, &cfg, &fixed_sim(mi, &winner, &[price])).unwrap();
            assert!(full.gexp.abs() <= 1e-9 * free.gexp, "gexp {} with rebate equal to price", full.gexp);
            assert!(free.gexp > 0.0);
        }
    }
}

#[test]
fn auction_is_reproducible_for_a_fixed_seed() {
    let s = setup(small_spec(), 7);
    let cfg = config(MechanismKind::Auction);
    for mi in &s.inputs {
        let a = simulate_auction(mi, &s.models, &cfg).unwrap();
        let b = simulate_auction(mi, &s.models, &cfg).unwrap();
        assert_eq!(a, b);
    }
}

/// Per-winner outcomes at zero rebate, combined by hand over the draws.
#[test]
fn auction_matches_draw_by_draw_enumeration() {
    let s = setup(small_spec(), 8);
    let cfg = config(MechanismKind::Auction);
    for mi in &s.inputs {
        let m = &mi.model.market;
        let sim = predict_rebates(&s.models.rebate_model, m, 40, 9, ResampleMode::Independent).unwrap();
        let got = simulate_auction_with(mi, &s.models, &cfg, &sim).unwrap();

        let zero: Vec<(String, MechanismOutcome)> = m
            .firms()
            .into_iter()
            .map(|f| {
                let o = simulate_auction_with(mi, &s.models, &cfg, &fixed_sim(mi, &f, &[0.0])).unwrap();
                (f, o)
            })
            .collect();
        let n = sim.winners.len() as f64;
        let (mut gexp, mut cs_wic, mut pi_all) = (0.0, 0.0, 0.0);
        for (d, w) in sim.winners.iter().enumerate() {
            let o = &zero.iter().find(|(f, _)| f == w).unwrap().1;
            let k = m.auction_brand_of(w).unwrap();
            let f = sim.firms.iter().position(|x| x == w).unwrap();
            let served = o.gexp / o.prices[k];
            let rebate = sim.rebates[d][f];
            gexp += (o.gexp - rebate * served) / n;
            cs_wic += o.cs_wic / n;
            pi_all += (o.pi_all - rebate * served) / n;
        }
        assert!(close(got.gexp, gexp, 1e-9), "gexp {} vs {gexp}", got.gexp);
        assert!(close(got.cs_wic, cs_wic, 1e-9), "cs_wic {} vs {cs_wic}", got.cs_wic);
        assert!(close(got.pi_all, pi_all, 1e-9), "pi_all {} vs {pi_all}", got.pi_all);
        assert_eq!(got.total_draws, sim.winners.len());
    }
}

#[test]
fn zero_rebate_rate_draws_every_firm_in() {
    let s = setup(small_spec(), 10);
    for mi in &s.inputs {
        let pre =
            run_mechanism(mi, &s.models, &MechanismConfig { rebate_rate: 0.0, ..config(MechanismKind::Predetermined) })
                .unwrap();
        let voucher = run_mechanism(mi, &s.models, &config(MechanismKind::Voucher)).unwrap();
        assert_eq!(pre.participation, mi.model.market.firms());
        assert!(close(pre.gexp, voucher.gexp, 1e-12));
        assert!(close(pre.ts, voucher.ts, 1e-12));
    }
}

/// With an unchanged participation set, prices do not depend on the rate, so
/// the rebate only moves money between the government and the firms.
#[test]
fn predetermined_rebate_is_a_pure_transfer() {
    let s = setup(small_spec(), 11);
    let rate = 0.1;
    let mut checked = 0;
    for mi in &s.inputs {
        let at = |r: f64| {
            run_mechanism(mi, &s.models, &MechanismConfig { rebate_rate: r, ..config(MechanismKind::Predetermined) })
                .unwrap()
        };
        let (base, with) = (at(0.0), at(rate));
        if with.participation != base.participation {
            continue;
        }
        checked += 1;
        assert!(close(with.gexp, (1.0 - rate) * base.gexp, 1e-12), "gexp {} vs {}", with.gexp, base.gexp);
        assert!(close(with.pi_all, base.pi_all - rate * base.gexp, 1e-12));
        assert!(close(with.cs_total, base.cs_total, 1e-12));
    }
    assert!(checked > 0, "no market kept full participation at rate {rate}");
}

#[test]
fn predetermined_outcome_is_an_equilibrium() {
    let s = setup(small_spec(), 12);
    for mi in &s.inputs {
        let o = run_mechanism(mi, &s.models, &config(MechanismKind::Predetermined)).unwrap();
        assert!(!o.equilibria.is_empty());
        assert!(o.equilibria.contains(&o.participation));
        let most = o.equilibria.iter().map(Vec::len).max().unwrap();
        assert_eq!(o.participation.len(), most);
        assert_eq!(o.unique, o.equilibria.len() == 1);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn wider_wic_choice_never_lowers_surplus(seed in any::<u64>(), keep in 1usize..6) {
        let mut r = rng(seed);
        let m = random_market(&mut r, "m", 3, 2, Some(0));
        let params = random_params(&mut r);
        let draws = random_draws(&mut r, 30);
        let xi = Xi(random_xi(&mut r, m.product_count()));
        let model = MarketModel { market: m.clone(), xi, draws };
        let d = model.demand(&params, &WicAssignment::from_option(m.winner.as_deref())).unwrap();
        let q = QuantityModel::default();
        let all: Vec<usize> = (0..m.product_count()).collect();
        let narrow = &all[..keep];
        for choice in [WicChoice::LogSum, WicChoice::Argmax] {
            let small = consumer_surplus_wic(&d, narrow, &m, &q, params.alpha, choice).unwrap();
            let big = consumer_surplus_wic(&d, &all, &m, &q, params.alpha, choice).unwrap();
            prop_assert!(big.surplus >= small.surplus - 1e-9 * small.surplus.abs());
            let served: f64 = big.served.iter().sum::<f64>() + big.outside;
            prop_assert!((served - q.wic_quantity(&m)).abs() <= 1e-9 * q.wic_quantity(&m));
            for j in all.iter().filter(|j| !narrow.contains(j)) {
                prop_assert_eq!(small.served[*j], 0.0);
            }
        }
    }
}
