use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use netbid::analysis::{evolve_gaps, GapVector};
use netbid::engine::{execute_trade, pooled_price, run_to_convergence, step};
use netbid::market::{Configuration, NodeState};
use netbid::strategy::{
    bayes_nash_bid, compute_bid_fixed_c, deviation_d, estimate_bidders_method2, Strategy,
    StrategyKind,
};
use netbid::topology::{
    make_complete, make_cycle, make_grid, make_klink, make_path, max_chords, FamilySpec, Topology,
};

fn topology(kind: u8, n: usize, seed: u64) -> Topology {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind % 5 {
        0 => make_path(n),
        1 => make_cycle(n.max(3)),
        2 => make_grid(n).or_else(|_| make_grid(4 * n.div_ceil(4))),
        3 => make_klink(n.max(3), (n / 4).min(max_chords(n.max(3))), &mut rng),
        _ => make_complete(n),
    }
    .unwrap()
}

fn config(topo: &Topology, pairs: &[(f64, f64)]) -> Configuration {
    let states = (0..topo.n())
        .map(|i| {
            let (f, q) = pairs[i % pairs.len()];
            NodeState::new(q, f)
        })
        .collect();
    Configuration::new(states)
}

fn strategy_kind(s: u8, c: f64) -> StrategyKind {
    match s % 3 {
        0 => StrategyKind::FixedC(c),
        1 => StrategyKind::parse("bayes-m1", c).unwrap(),
        _ => StrategyKind::parse("bayes-m2", c).unwrap(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn step_conserves_totals_and_narrows_spread(
        kind in 0u8..5,
        n in 2usize..40,
        seed in any::<u64>(),
        pairs in prop::collection::vec((1.0f64..1e5, 1.0f64..200.0), 1..40),
        s in 0u8..3,
        c in 1.0f64..6.0,
    ) {
        let topo = topology(kind, n, seed);
        let mut cfg = config(&topo, &pairs);
        let mut strategy = Strategy::new(strategy_kind(s, c)).unwrap();
        let (f0, q0) = (cfg.total_funds(), cfg.total_coins());
        for _ in 0..20 {
            let (hi, lo) = cfg.price_extent();
            let out = step(&cfg, &topo, &mut strategy, 1.0).unwrap();
            let (hi2, lo2) = out.config.price_extent();
            prop_assert!(hi2 <= hi && lo2 >= lo);
            prop_assert!((out.config.total_funds() - f0).abs() <= 1e-9 * f0);
            prop_assert!((out.config.total_coins() - q0).abs() <= 1e-9 * q0);
            cfg = out.config;
        }
    }

    #[test]
    fn contracts_are_disjoint_and_priced_between(
        kind in 0u8..5,
        n in 2usize..40,
        seed in any::<u64>(),
        pairs in prop::collection::vec((1.0f64..1e5, 1.0f64..200.0), 1..40),
        c in 1.0f64..6.0,
    ) {
        let topo = topology(kind, n, seed);
        let cfg = config(&topo, &pairs);
        let mut strategy = Strategy::new(StrategyKind::FixedC(c)).unwrap();
        let out = step(&cfg, &topo, &mut strategy, 1.0).unwrap();
        let mut seen = vec![false; topo.n()];
        for k in &out.contracts {
            prop_assert!(!seen[k.seller] && !seen[k.buyer]);
            seen[k.seller] = true;
            seen[k.buyer] = true;
            prop_assert!(topo.has_edge(k.seller, k.buyer));
            let (ps, pb) = (cfg.price(k.seller), cfg.price(k.buyer));
            prop_assert!(pb - ps >= 1.0);
            prop_assert!(ps <= k.bid_price && k.bid_price <= pb);
            prop_assert!(k.quantity > 0.0);
        }
    }

    #[test]
    fn trade_equalizes_at_pooled_price(
        fs in 1.0f64..1e5, qs in 1.0f64..500.0,
        fb in 1.0f64..1e5, qb in 1.0f64..500.0,
        t in 0.0f64..=1.0,
    ) {
        let (seller, buyer) = (NodeState::new(qs, fs), NodeState::new(qb, fb));
        prop_assume!(buyer.price() - seller.price() >= 1e-3 * buyer.price());
        let bid = seller.price() + t * (buyer.price() - seller.price());
        let (s, b) = execute_trade(seller, buyer, bid).unwrap();
        let p = pooled_price(&seller, &buyer);
        prop_assert!((s.price() - p).abs() <= 1e-9 * p);
        prop_assert!((b.price() - p).abs() <= 1e-9 * p);
        prop_assert!((s.f + b.f - fs - fb).abs() <= 1e-9 * (fs + fb));
        prop_assert!((s.q + b.q - qs - qb).abs() <= 1e-9 * (qs + qb));
        prop_assert!(s.q < qs && b.q > qb);
    }

    #[test]
    fn bids_stay_between_prices(
        ps in 0.1f64..1e4, gap in 1e-6f64..1e4, c in 1.0f64..50.0, b in 1usize..60,
    ) {
        let pb = ps + gap;
        let fixed = compute_bid_fixed_c(pb, ps, c).unwrap();
        prop_assert!(ps <= fixed && fixed <= pb);
        let bn = bayes_nash_bid(pb, ps, b).unwrap();
        prop_assert!(ps <= bn && bn <= pb);
        let steeper = compute_bid_fixed_c(pb, ps, c + 1.0).unwrap();
        prop_assert!(steeper <= fixed);
        let more = bayes_nash_bid(pb, ps, b + 1).unwrap();
        prop_assert!(more >= bn);
    }

    #[test]
    fn deviation_is_bounded(
        kind in 0u8..5, n in 2usize..40, seed in any::<u64>(),
        raw in prop::collection::vec((0usize..100, 0usize..100), 40),
    ) {
        let topo = topology(kind, n, seed);
        let clamp = |v: usize, i: usize| v % (topo.degree(i) + 1);
        let est: Vec<usize> = (0..topo.n()).map(|i| clamp(raw[i % raw.len()].0, i)).collect();
        let act: Vec<usize> = (0..topo.n()).map(|i| clamp(raw[i % raw.len()].1, i)).collect();
        let d = deviation_d(&est, &act, &topo).unwrap();
        prop_assert!(d >= 0.0 && d <= topo.n() as f64);
        prop_assert_eq!(deviation_d(&act, &act, &topo).unwrap(), 0.0);
    }

    #[test]
    fn method2_estimate_within_degree(
        kind in 0u8..5, n in 2usize..40, seed in any::<u64>(),
        pairs in prop::collection::vec((1.0f64..1e5, 1.0f64..200.0), 1..40),
    ) {
        let topo = topology(kind, n, seed);
        let cfg = config(&topo, &pairs);
        for h in 0..topo.n() {
            let e = estimate_bidders_method2(&cfg, &topo, h);
            prop_assert!(e >= 1 && e <= topo.degree(h));
        }
    }

    #[test]
    fn gaps_stay_nonnegative_and_sum_drops(gaps in prop::collection::vec(0.0f64..100.0, 2..80)) {
        let g = GapVector::new(gaps.clone()).unwrap();
        let next = evolve_gaps(&g).unwrap();
        prop_assert!(next.gaps.iter().all(|&d| d >= 0.0));
        let expected = g.sum() - 0.25 * (gaps[0] + gaps[gaps.len() - 1]);
        prop_assert!((next.sum() - expected).abs() <= 1e-9 * g.sum().max(1.0));
        prop_assert_eq!(next.t, g.t + 1);
    }

    #[test]
    fn klink_is_reproducible_and_shaped(n in 3usize..120, frac in 0.0f64..=1.0, seed in any::<u64>()) {
        let k = (frac * max_chords(n) as f64) as usize;
        let a = make_klink(n, k, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = make_klink(n, k, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(a.edges(), b.edges());
        prop_assert_eq!(a.edge_count(), n + k);
        prop_assert!(a.is_connected());
        for i in 0..n {
            prop_assert!(a.has_edge(i, (i + 1) % n));
        }
    }

    #[test]
    fn family_specs_build_connected_graphs(name in "(path|cycle|grid|klink|complete)", n in 4usize..150, seed in any::<u64>()) {
        let spec = FamilySpec::parse(&name).unwrap();
        if let Ok(t) = spec.build(n, &mut ChaCha8Rng::seed_from_u64(seed)) {
            prop_assert_eq!(t.n(), n);
            prop_assert!(t.is_connected());
        } else {
            prop_assert_eq!(name.as_str(), "grid");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn every_run_terminates_legitimate(
        kind in 0u8..5,
        n in 2usize..=50,
        seed in any::<u64>(),
        pairs in prop::collection::vec((100.0f64..1e5, 1.0f64..200.0), 1..50),
        s in 0u8..3,
    ) {
        let topo = topology(kind, n, seed);
        let cfg = config(&topo, &pairs);
        let pe = cfg.equilibrium_price();
        let mut strategy = Strategy::new(strategy_kind(s, 2.0)).unwrap();
        let r = run_to_convergence(cfg, &topo, &mut strategy, 1.0, 1_000_000).unwrap();
        prop_assert!(r.converged, "{} n={} did not converge", topo.family(), topo.n());
        prop_assert!(r.final_config.is_legitimate(&topo, 1.0));
        prop_assert!((r.equilibrium_price - pe).abs() <= 1e-9 * pe);
    }
}
