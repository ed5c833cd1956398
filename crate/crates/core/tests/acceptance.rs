//! Acceptance suite: one test per verification criterion, each printing a
//! pass line with the measured quantities. Run with
//! `cargo test -p prequal-core --test acceptance -- --nocapture`.

mod common;

use std::time::Instant;

use num::{BigRational, One};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::*;
use prequal_core::model::{parse_policy, Policy, Query};
use prequal_core::num::ratio;
use prequal_core::prcheck::{
    check_gpr, check_spr, check_spr_singleton, verify_witness, GprOutcome, GprSearchConfig,
};
use prequal_core::quality::{
    average_measure, causal_volume, confusion, gpr_predicate, measure_exact, polytope,
    spr_predicate, MeasureKind, MeasureValue, PrMode, SprEngine,
};
use prequal_core::solve::{enumerate_md_optimum, optimal_reach, reach_under_policy, Sense};
use prequal_core::transform::canonical;

fn pq_policy(m: &prequal_core::model::Mdp, p: BigRational, q: BigRational) -> Policy<BigRational> {
    let mut rows: Vec<Vec<BigRational>> = vec![Vec::new(); m.n_states()];
    rows[m.state_id("send").unwrap()] = vec![BigRational::one()];
    rows[m.state_id("A").unwrap()] = vec![p.clone(), BigRational::one() - p];
    rows[m.state_id("B").unwrap()] = vec![q.clone(), BigRational::one() - q];
    Policy::from_rows(m, rows).unwrap()
}

/// Midpoint tensor-grid quadrature with step 1/512 over [0,1]^2.
fn quadrature_512(f: impl Fn(f64, f64) -> f64) -> f64 {
    let n = 512;
    let h = 1.0 / n as f64;
    let mut acc = 0.0;
    for i in 0..n {
        let p = (i as f64 + 0.5) * h;
        for j in 0..n {
            let q = (j as f64 + 0.5) * h;
            acc += f(p, q);
        }
    }
    acc * h * h
}

#[test]
fn criterion_01_average_fscore_predictor_a() {
    let m = network();
    let q = network_query(&m, "A");
    let started = Instant::now();
    let r = average_measure(&m, &q, MeasureKind::Fscore, 1_000_000, 7, 1).unwrap();
    let elapsed = started.elapsed().as_secs_f64();
    assert!(
        (r.estimate - 0.43).abs() <= 0.01,
        "estimate {} not within 0.01 of 0.43",
        r.estimate
    );
    assert!(elapsed < 60.0, "took {elapsed:.1}s, budget is 60s");
    println!(
        "ACCEPTANCE 01 average f-score for {{A}}: PASS (estimate {:.5}, stderr {:.1e}, {:.1}s)",
        r.estimate, r.stderr, elapsed
    );
}

#[test]
fn criterion_02_average_fscore_predictor_b_with_quadrature() {
    let m = network();
    let rb = average_measure(&m, &network_query(&m, "B"), MeasureKind::Fscore, 1_000_000, 7, 1)
        .unwrap();
    assert!(
        (rb.estimate - 0.60).abs() <= 0.01,
        "estimate {} not within 0.01 of 0.60",
        rb.estimate
    );
    // Deterministic cross-check of both estimates against tensor-grid
    // quadrature of the closed-form integrands.
    let quad_a = quadrature_512(|p, q| (2.0 + 2.0 * p) / (7.0 + p - q));
    let quad_b = quadrature_512(|p, q| (4.0 - 2.0 * q) / (5.0 + p - q));
    let ra = average_measure(&m, &network_query(&m, "A"), MeasureKind::Fscore, 1_000_000, 7, 1)
        .unwrap();
    assert!(
        (ra.estimate - quad_a).abs() <= 0.005,
        "MC {} vs quadrature {quad_a}",
        ra.estimate
    );
    assert!(
        (rb.estimate - quad_b).abs() <= 0.005,
        "MC {} vs quadrature {quad_b}",
        rb.estimate
    );
    println!(
        "ACCEPTANCE 02 average f-score for {{B}}: PASS (estimate {:.5}, quadrature A {quad_a:.5} / B {quad_b:.5})",
        rb.estimate
    );
}

#[test]
fn criterion_03_confusion_closed_forms() {
    let m = network();
    let q = network_query(&m, "A");
    for (pn, pd) in [(0i64, 1i64), (1, 2), (1, 1)] {
        for (qn, qd) in [(0i64, 1i64), (1, 2), (1, 1)] {
            let p = ratio(pn, pd);
            let qq = ratio(qn, qd);
            let cm = confusion(&m, &q, &pq_policy(&m, p.clone(), qq.clone())).unwrap();
            assert_eq!(cm.tp, (ratio(1, 1) + &p) / ratio(6, 1));
            assert_eq!(cm.fp, (ratio(3, 1) - &p) / ratio(6, 1));
            assert_eq!(cm.fn_, (ratio(2, 1) - &qq) / ratio(6, 1));
            assert_eq!(cm.tn, qq / ratio(6, 1));
        }
    }
    println!("ACCEPTANCE 03 confusion closed forms on the 9-point grid: PASS (exact)");
}

#[test]
fn criterion_04_example_inequality() {
    let m = network();
    let q = network_query(&m, "B");
    let gamma_beta = parse_policy(r#"{"A":{"gamma":"1"},"B":{"beta":"1"}}"#, &m).unwrap();
    let cm = confusion(&m, &q, &gamma_beta).unwrap();
    assert_eq!(
        measure_exact(&cm, MeasureKind::Precision).unwrap(),
        MeasureValue::Exact(ratio(1, 2))
    );
    assert_eq!(cm.effect_probability(), ratio(1, 3));
    assert!(spr_predicate(&m, &q, &gamma_beta).unwrap());
    assert!(gpr_predicate(&m, &q, &gamma_beta).unwrap());
    let alpha_beta = parse_policy(r#"{"A":{"alpha":"1"},"B":{"beta":"1"}}"#, &m).unwrap();
    assert!(!gpr_predicate(&m, &q, &alpha_beta).unwrap());
    println!(
        "ACCEPTANCE 04 example inequality: PASS (precision 1/2 > effect probability 1/3, raising under gamma/beta only)"
    );
}

#[test]
fn criterion_05_causal_volumes() {
    let m = network();
    let qb = network_query(&m, "B");
    let sv = causal_volume(&m, &qb, PrMode::Spr, 10_000, 0, 1).unwrap();
    let gv = causal_volume(&m, &qb, PrMode::Gpr, 10_000, 0, 1).unwrap();
    assert_eq!(sv.estimate, 1.0, "sV({{B}}) = {}", sv.estimate);
    assert_eq!(gv.estimate, 1.0, "gV({{B}}) = {}", gv.estimate);
    let qa = network_query(&m, "A");
    let ga = causal_volume(&m, &qa, PrMode::Gpr, 10_000, 0, 1).unwrap();
    assert_eq!(ga.estimate, 0.0, "gV({{A}}) = {}", ga.estimate);
    println!("ACCEPTANCE 05 causal volumes: PASS (sV(B) = gV(B) = 1.0, gV(A) = 0.0)");
}

#[test]
fn criterion_06_spr_decisions() {
    let m = network();
    let qb = network_query(&m, "B");
    let vb = check_spr(&m, &qb).unwrap();
    assert!(vb.exists);
    assert_eq!(vb.p_star, ratio(1, 1));
    assert_eq!(vb.min_value, ratio(1, 2));

    let qa = network_query(&m, "A");
    let va = check_spr(&m, &qa).unwrap();
    assert!(!va.exists);
    assert_eq!(va.p_star, ratio(1, 2));
    assert_eq!(va.min_value, ratio(1, 2));

    // Singleton fast path agrees.
    assert_eq!(check_spr_singleton(&m, &qb).unwrap().exists, true);
    assert_eq!(check_spr_singleton(&m, &qa).unwrap().exists, false);

    // The emitted witness verifies exactly on the canonical model.
    let witness = vb.witness.as_ref().unwrap();
    let report = verify_witness(
        &vb.canonical.mdp,
        &vb.canonical.canonical_query(),
        witness,
        PrMode::Spr,
    )
    .unwrap();
    assert!(report.satisfied);
    println!(
        "ACCEPTANCE 06 SPR decisions: PASS (B: 1/2 < 1 yes with verified witness; A: 1/2 < 1/2 fails)"
    );
}

#[test]
fn criterion_07_gpr_search() {
    let m = network();
    let started = Instant::now();
    let vb = check_gpr(&m, &network_query(&m, "B"), &GprSearchConfig::default()).unwrap();
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 1.0, "took {elapsed:.2}s, budget 1s");
    assert_eq!(vb.outcome, GprOutcome::Found);
    assert!(vb.witness_report.unwrap().satisfied);

    let va = check_gpr(&m, &network_query(&m, "A"), &GprSearchConfig::default()).unwrap();
    assert_eq!(va.outcome, GprOutcome::NotFound);
    assert!(va.oracle_complete, "singleton delegation is definitive");
    println!(
        "ACCEPTANCE 07 GPR search: PASS (B found in {elapsed:.2}s via {}, A definitively absent)",
        vb.trace.route
    );
}

#[test]
fn criterion_08_polytope_volumes() {
    let m = network();
    let spec = polytope(&m);
    assert_eq!(spec.volume, ratio(1, 1));
    assert_eq!(spec.dimension, 2);

    let three = prequal_core::model::parse_model(
        r#"{
        "states": ["s","a","b","c"],
        "init": "s",
        "transitions": [
            {"from":"s","action":"x","to":{"a":"1"}},
            {"from":"s","action":"y","to":{"b":"1"}},
            {"from":"s","action":"z","to":{"c":"1"}}
        ]}"#,
    )
    .unwrap();
    assert_eq!(polytope(&three).volume, ratio(1, 2));
    println!("ACCEPTANCE 08 polytope volumes: PASS (network 1, three-action state 1/2, exact)");
}

#[test]
fn criterion_09a_reachability_vs_path_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(901);
    for trial in 0..50 {
        let m = random_mdp(&mut rng, GenParams::acyclic(12));
        let x = random_exact_policy(&mut rng, &m);
        let terminals = m.terminal_states();
        let target = vec![terminals[trial % terminals.len()]];
        let table = reach_under_policy(&m, &x, &target);
        for s in 0..m.n_states() {
            let oracle = path_enumeration_reach(&m, &x, &target, s);
            assert_eq!(
                table.values[s], oracle,
                "trial {trial}, state {s}: solver vs path enumeration"
            );
        }
    }
    println!("ACCEPTANCE 09a reachability vs path enumeration on 50 acyclic models: PASS (exact)");
}

#[test]
fn criterion_09b_optimal_reach_vs_md_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(902);
    let mut done = 0;
    while done < 50 {
        let m = random_mdp(&mut rng, GenParams::cyclic(6));
        let nonterminal = (0..m.n_states()).filter(|&s| !m.is_terminal(s)).count();
        if nonterminal > 5 {
            continue;
        }
        let terminals = m.terminal_states();
        let target = vec![terminals[done % terminals.len()]];
        for sense in [Sense::Min, Sense::Max] {
            let fast = optimal_reach(&m, &target, sense);
            let (oracle, _) = enumerate_md_optimum(&m, &target, sense).unwrap();
            assert_eq!(fast.values, oracle, "sense {sense:?} disagrees with enumeration");
        }
        done += 1;
    }
    println!("ACCEPTANCE 09b optimal reachability vs MD enumeration on 50 models: PASS (exact)");
}

#[test]
fn criterion_09c_canonical_preserves_extremal_effect_reachability() {
    let mut rng = ChaCha8Rng::seed_from_u64(903);
    let mut done = 0;
    while done < 50 {
        let m = random_mdp(&mut rng, GenParams::cyclic(6));
        let nonterminal = (0..m.n_states()).filter(|&s| !m.is_terminal(s)).count();
        if nonterminal > 5 {
            continue;
        }
        let Some(q) = random_query(&mut rng, &m) else {
            continue;
        };
        let cm = match canonical(&m, &q) {
            Ok(cm) => cm,
            Err(_) => continue,
        };
        let effect = cm.effect();
        for sense in [Sense::Min, Sense::Max] {
            let original = optimal_reach(&m, &q.effect, sense).values[m.init()].clone();
            let transformed =
                optimal_reach(&cm.mdp, &effect, sense).values[cm.mdp.init()].clone();
            assert_eq!(
                original, transformed,
                "extremal effect probability changed under the canonical transformation"
            );
        }
        done += 1;
    }
    println!("ACCEPTANCE 09c canonical preserves min/max effect reachability on 50 models: PASS");
}

#[test]
fn criterion_09d_spr_check_vs_grid_brute_force() {
    let mut corpus: Vec<(prequal_core::model::Mdp, Query)> = Vec::new();
    // Both paper models have polytope dimension 2; they anchor the corpus
    // with known yes-instances.
    let net = network();
    let qb = network_query(&net, "B");
    let qa = network_query(&net, "A");
    corpus.push((net.clone(), qb));
    corpus.push((net, qa));
    let sb = suzy_billy();
    let qs = Query::from_names(&sb, &["ST".to_string()], &["Shatter".to_string()]).unwrap();
    corpus.push((sb, qs));

    let mut rng = ChaCha8Rng::seed_from_u64(904);
    while corpus.len() < 25 {
        let m = random_mdp(&mut rng, GenParams::cyclic(6));
        if polytope(&m).dimension > 3 {
            continue;
        }
        let Some(q) = random_query(&mut rng, &m) else {
            continue;
        };
        if check_spr(&m, &q).is_err() {
            continue;
        }
        corpus.push((m, q));
    }

    let mut yes = 0;
    for (m, q) in &corpus {
        let verdict = check_spr(m, q).unwrap();
        let engine = SprEngine::new(m, q).unwrap();
        let grid_witness = grid_policies(m, 8).iter().any(|x| engine.eval(x));
        if grid_witness {
            assert!(
                verdict.exists,
                "grid found an SPR witness but check_spr answered no"
            );
        }
        if !verdict.exists {
            assert!(
                !grid_witness,
                "check_spr answered no but the grid found a witness"
            );
        }
        if verdict.exists {
            yes += 1;
            // Soundness: the emitted witness verifies exactly.
            assert!(verdict.witness_report.unwrap().satisfied);
        }
    }
    assert!(yes >= 3, "corpus should contain yes-instances, got {yes}");
    println!(
        "ACCEPTANCE 09d SPR check vs 1/8-grid brute force on 25 models: PASS ({yes} yes-instances)"
    );
}

#[test]
fn criterion_09_suzy_billy_cross_check() {
    // The second paper model exercises the same machinery end to end.
    let m = suzy_billy();
    let q = Query::from_names(&m, &["ST".to_string()], &["Shatter".to_string()]).unwrap();
    let v = check_spr(&m, &q).unwrap();
    assert!(v.exists);
    // Both-throw: conditional 4/5 vs global 13/25.
    let both_throw = parse_policy(r#"{"Suzy":{"t":"1"},"Billy":{"t":"1"}}"#, &m).unwrap();
    let report = verify_witness(&m, &q, &both_throw, PrMode::Spr).unwrap();
    assert!(report.satisfied);
    assert_eq!(report.global_effect, ratio(13, 25));
    assert_eq!(report.per_cause[0].conditional, Some(ratio(4, 5)));
    println!("ACCEPTANCE 09e rock-throwing model cross-check: PASS (4/5 > 13/25)");
}
