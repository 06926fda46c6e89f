use proptest::prelude::*;

use shadowprice::oracle;
use shadowprice::price_system::{self, DEFAULT_TOL};
use shadowprice::superhedge;
use shadowprice::utility::{self, Drift, VhatSolver};
use shadowprice::{MarketParams, NodeIndex, PathWord, Payoff, PortfolioState, PowerUtility, Strategy as TradePlan};

fn market(horizon: std::ops::RangeInclusive<usize>, costly: bool) -> impl Strategy<Value = MarketParams> {
    let costs = if costly { 0.0..0.1 } else { 0.0..1e-300 };
    (1.02f64..1.5, 0.6f64..0.98, 0.1f64..0.9, horizon, 20.0f64..200.0, costs.clone(), costs).prop_map(
        |(u, d, p, t, s0, lb, ls)| {
            let (lb, ls) = if lb < 1e-200 { (0.0, 0.0) } else { (lb, ls) };
            MarketParams::new(u, d, p, t, s0, lb, ls).unwrap()
        },
    )
}

/// Payoff tables with a nonnegative share leg.
fn long_payoff(horizon: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (
        prop::collection::vec(-30.0f64..30.0, horizon + 1),
        prop::collection::vec(0.0f64..2.0, horizon + 1),
    )
}

fn crr(params: &MarketParams, payoff: &Payoff) -> f64 {
    let free = params.with_costs(0.0, 0.0).unwrap();
    let (pi, _) = superhedge::price(&free, payoff).unwrap();
    pi
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cost_function_is_monotone_and_sublinear(lb in 0.0f64..0.5, ls in 0.0f64..0.9, a in -50.0f64..50.0, b in -50.0f64..50.0) {
        let params = MarketParams::new(1.1, 0.9, 0.5, 1, 100.0, lb, ls).unwrap();
        let free = params.with_costs(0.0, 0.0).unwrap();
        prop_assert_eq!(free.transaction_cost_h(a), a);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(params.transaction_cost_h(lo) <= params.transaction_cost_h(hi));
        prop_assert!(params.transaction_cost_h(a) + params.transaction_cost_h(b)
            >= params.transaction_cost_h(a + b) - 1e-12 * (1.0 + a.abs() + b.abs()));
    }

    #[test]
    fn liquidation_is_monotone(params in market(1..=1, true), x0 in -100.0f64..100.0, x1 in -3.0f64..3.0,
                               dx0 in 0.0f64..10.0, dx1 in 0.0f64..3.0, s in 1.0f64..300.0) {
        let base = params.liquidation_value(PortfolioState::new(x0, x1), s);
        prop_assert!(params.liquidation_value(PortfolioState::new(x0 + dx0, x1), s) >= base);
        prop_assert!(params.liquidation_value(PortfolioState::new(x0, x1 + dx1), s) >= base - 1e-12 * base.abs());
    }

    #[test]
    fn node_strategies_recombine(params in market(2..=6, true), trades in prop::collection::vec(-2.0f64..2.0, 28), seed in any::<u64>()) {
        let t = params.horizon;
        let strat = TradePlan::from_node_fn(t, |n: NodeIndex| trades[(n.k * (n.k + 1) / 2 + n.j) % trades.len()]);
        let x = PortfolioState::new(500.0, 1.0);
        // a random path and the path with the same number of ups taken first
        let a = PathWord::from_index(t, (seed as usize) % (1 << t));
        let ups = a.ups();
        let b = PathWord::from_index(t, (1usize << t) - 1 - ((1usize << (t - ups)) - 1));
        prop_assert_eq!(b.ups(), ups);
        let ea = params.portfolio_evolution(x, &strat, &a).unwrap();
        let eb = params.portfolio_evolution(x, &strat, &b).unwrap();
        // states up to date k depend on the prefix only
        for k in 0..=t {
            if a.prefix(k) == b.prefix(k) {
                prop_assert_eq!(ea[k], eb[k]);
            }
        }
        prop_assert_eq!(ea.len(), t + 1);
    }

    #[test]
    fn generated_trees_telescope(params in market(0..=7, true), seed in any::<u64>()) {
        let controls = price_system::sample_random_controls(&params, seed).unwrap();
        let tree = price_system::generate(&params, &controls).unwrap();
        let report = price_system::validate(&params, &tree, DEFAULT_TOL);
        prop_assert!(report.is_valid(), "{:?}", report.violations);
        let (lo, hi) = params.unit_band();
        let t = params.horizon;
        for k in 0..=t {
            for (i, node) in tree.levels()[k].iter().enumerate() {
                prop_assert!(node.r >= lo - 1e-12 && node.r <= hi + 1e-12);
                // conditional expectation of the terminal densities given node (k, i)
                let mut e0 = 0.0;
                let mut e1 = 0.0;
                let width = 1usize << (t - k);
                for w in i * width..(i + 1) * width {
                    let word = PathWord::from_index(t - k, w - i * width);
                    let prob = params.with_horizon(t - k).path_probability(&word).unwrap();
                    e0 += prob * tree.terminal()[w].rho0;
                    e1 += prob * tree.terminal()[w].rho1;
                }
                prop_assert!((e0 - node.rho0).abs() <= 1e-10 * node.rho0);
                prop_assert!((e1 - node.rho1).abs() <= 1e-10 * node.rho1.abs());
            }
        }
    }

    #[test]
    fn frictionless_trees_are_the_martingale_measure(params in market(0..=6, false), seed in any::<u64>()) {
        let controls = price_system::sample_random_controls(&params, seed).unwrap();
        let tree = price_system::generate(&params, &controls).unwrap();
        let crr = price_system::from_martingale_measure(&params, params.risk_neutral_q()).unwrap();
        for (a, b) in tree.levels().iter().flatten().zip(crr.levels().iter().flatten()) {
            prop_assert!((a.rho0 - b.rho0).abs() <= 1e-12 * b.rho0);
            prop_assert!((a.a - b.a).abs() <= 1e-12 * b.a);
        }
    }

    #[test]
    fn sampled_price_systems_stay_below_the_price(params in market(1..=5, true), table in long_payoff(5), seed in any::<u64>()) {
        let t = params.horizon;
        let payoff = Payoff::from_table(table.0[..=t].to_vec(), table.1[..=t].to_vec(), t).unwrap();
        let (pi, _) = superhedge::price(&params, &payoff).unwrap();
        for s in 0..20 {
            let controls = price_system::sample_random_controls(&params, seed.wrapping_add(s)).unwrap();
            let tree = price_system::generate(&params, &controls).unwrap();
            let v = price_system::dual_payoff_expectation(&params, &tree, &payoff).unwrap();
            prop_assert!(v <= pi + 1e-9 * (1.0 + pi.abs()), "{v} > {pi}");
        }
    }

    #[test]
    fn price_is_monotone_in_costs(params in market(1..=8, true), strike in 0.7f64..1.3, extra_b in 0.0f64..0.05, extra_s in 0.0f64..0.05) {
        let payoff = Payoff::call_physical(&params, strike * params.s0);
        let (pi, _) = superhedge::price(&params, &payoff).unwrap();
        let buy = params.with_costs(params.lambda_buy + extra_b, params.lambda_sell).unwrap();
        let sell = params.with_costs(params.lambda_buy, params.lambda_sell + extra_s).unwrap();
        let tol = 1e-10 * (1.0 + pi.abs());
        prop_assert!(superhedge::price(&buy, &payoff).unwrap().0 >= pi - tol);
        prop_assert!(superhedge::price(&sell, &payoff).unwrap().0 >= pi - tol);
    }

    #[test]
    fn price_is_sandwiched(params in market(1..=8, true), table in long_payoff(8)) {
        let t = params.horizon;
        let payoff = Payoff::from_table(table.0[..=t].to_vec(), table.1[..=t].to_vec(), t).unwrap();
        let (pi, surface) = superhedge::price(&params, &payoff).unwrap();
        let shares = payoff.y1.iter().cloned().fold(0.0, f64::max);
        let cash = payoff.y0.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let static_cost = shares * (1.0 + params.lambda_buy) * params.s0 + cash;
        let tol = 1e-9 * (1.0 + pi.abs());
        prop_assert!(crr(&params, &payoff) <= pi + tol);
        prop_assert!(pi <= static_cost + tol);
        for level in surface.levels() {
            for w in level {
                prop_assert!(w.slopes().windows(2).all(|s| s[1] < s[0]));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn lp_matches_recursion(params in market(1..=3, true), table in long_payoff(3), short in prop::bool::ANY) {
        let t = params.horizon;
        let mut y1 = table.1[..=t].to_vec();
        if short {
            y1.iter_mut().for_each(|y| *y -= 1.0);
        }
        let payoff = Payoff::from_table(table.0[..=t].to_vec(), y1, t).unwrap();
        let (pi, _) = superhedge::price(&params, &payoff).unwrap();
        let lp = oracle::superreplication_lp(&payoff, &params).unwrap();
        prop_assert!((pi - lp).abs() <= 1e-6, "{pi} vs {lp}");
        if !short {
            prop_assert!(lp >= crr(&params, &payoff) - 1e-9 * (1.0 + lp.abs()));
        }
    }

    #[test]
    fn extraction_attains_the_price(params in market(1..=6, true), table in long_payoff(6)) {
        let t = params.horizon;
        let payoff = Payoff::from_table(table.0[..=t].to_vec(), table.1[..=t].to_vec(), t).unwrap();
        let (pi, surface) = superhedge::price(&params, &payoff).unwrap();
        let tree = superhedge::extract_worst_case_price_system(&params, &surface).unwrap();
        prop_assert!(price_system::validate(&params, &tree, DEFAULT_TOL).is_valid());
        let dual = price_system::dual_payoff_expectation(&params, &tree, &payoff).unwrap();
        prop_assert!((dual - pi).abs() <= 1e-6, "{dual} vs {pi}");
    }
}

fn quick_solver() -> VhatSolver {
    VhatSolver {
        alpha_grid: 64,
        ..VhatSolver::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn vhat_structure(params in market(1..=3, true), gamma in 0.1f64..0.9) {
        let putil = PowerUtility::new(gamma).unwrap();
        let curves = utility::vhat_recursion_with(&params, &putil, 61, quick_solver()).unwrap();
        prop_assert!(curves[params.horizon].values().iter().all(|v| *v == 1.0));
        let direction = utility::drift_direction(&params);
        for curve in &curves {
            prop_assert!(curve.values().iter().all(|v| *v >= 1.0 - 1e-9));
            for w in curve.values().windows(2) {
                match direction {
                    Drift::Up => prop_assert!(w[1] <= w[0] + 1e-9),
                    Drift::Down => prop_assert!(w[1] >= w[0] - 1e-9),
                    Drift::Neutral => {}
                }
            }
        }
        for pair in curves.windows(2) {
            for (now, later) in pair[0].values().iter().zip(pair[1].values()) {
                prop_assert!(*now >= *later - 1e-9);
            }
        }
    }

    #[test]
    fn band_clipping_loses_nothing(params in market(2..=3, true), gamma in 0.1f64..0.9, pick in 0usize..61) {
        let putil = PowerUtility::new(gamma).unwrap();
        let curves = utility::vhat_recursion_with(&params, &putil, 61, quick_solver()).unwrap();
        let next = &curves[1];
        let a = curves[0].abscissa(pick);
        let clipped = utility::backstep_vhat_with(next, &params, &putil, quick_solver()).unwrap().eval(a);
        let extended = utility::extended_backstep_value(next, &params, &putil, a).unwrap();
        prop_assert!((clipped - extended).abs() <= 1e-7 * clipped, "{clipped} vs {extended}");
    }

    #[test]
    fn weak_duality_for_idle_and_closing(params in market(1..=3, true), gamma in 0.1f64..0.9,
                                         x0 in 10.0f64..300.0, x1 in 0.0f64..2.0, xi_exp in -3.0f64..1.0, seed in any::<u64>()) {
        let putil = PowerUtility::new(gamma).unwrap();
        let controls = price_system::sample_random_controls(&params, seed).unwrap();
        let tree = price_system::generate(&params, &controls).unwrap();
        let xi = 10f64.powf(xi_exp);
        let t = params.horizon;
        let close = TradePlan::from_fn(t, |k, _| if k == 0 { -x1 } else { 0.0 });
        for strat in [TradePlan::zero(t), close] {
            prop_assert!(utility::verify_duality_bound(&strat, &tree, xi, x0, x1, &params, &putil).unwrap());
        }
    }

    #[test]
    fn cash_value_falls_with_costs(params in market(1..=2, true), gamma in 0.2f64..0.8, extra in 0.01f64..0.05) {
        let putil = PowerUtility::new(gamma).unwrap();
        let value = |p: &MarketParams| {
            let curves = utility::vhat_recursion_with(p, &putil, 201, quick_solver()).unwrap();
            utility::value_function(100.0, 0.0, p, &putil, &curves[0]).unwrap()
        };
        let v = value(&params);
        let buy = params.with_costs(params.lambda_buy + extra, params.lambda_sell).unwrap();
        let sell = params.with_costs(params.lambda_buy, params.lambda_sell + extra).unwrap();
        prop_assert!(value(&buy) <= v * (1.0 + 1e-6));
        prop_assert!(value(&sell) <= v * (1.0 + 1e-6));
    }
}
