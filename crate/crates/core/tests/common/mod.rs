//! Shared fixtures, random model generators with exact rational
//! probabilities, and independent oracles used by the property and
//! acceptance suites.

#![allow(dead_code)]

use num::{BigRational, One, Zero};
use rand::prelude::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use prequal_core::model::{parse_model, Mdp, MdpBuilder, Policy, Query};
use prequal_core::num::ratio;

pub const NETWORK: &str = include_str!("../data/network.json");
pub const SUZY_BILLY: &str = include_str!("../data/suzy_billy.json");

pub fn network() -> Mdp {
    parse_model(NETWORK).unwrap()
}

pub fn suzy_billy() -> Mdp {
    parse_model(SUZY_BILLY).unwrap()
}

pub fn network_query(m: &Mdp, c: &str) -> Query {
    Query::from_names(m, &[c.to_string()], &["lost".to_string()]).unwrap()
}

#[derive(Clone, Copy)]
pub struct GenParams {
    pub max_states: usize,
    pub max_actions: usize,
    pub max_succ: usize,
    pub acyclic: bool,
}

impl GenParams {
    pub fn acyclic(max_states: usize) -> Self {
        GenParams {
            max_states,
            max_actions: 3,
            max_succ: 3,
            acyclic: true,
        }
    }

    pub fn cyclic(max_states: usize) -> Self {
        GenParams {
            max_states,
            max_actions: 3,
            max_succ: 3,
            acyclic: false,
        }
    }
}

/// A random MDP with exact rational transition probabilities (weights 1..=6
/// normalized per distribution). Acyclic generation only allows forward
/// edges, so those models are DAGs and in particular EC-free. The last state
/// is always terminal.
pub fn random_mdp(rng: &mut ChaCha8Rng, params: GenParams) -> Mdp {
    let n = rng.random_range(2..=params.max_states.max(2));
    let mut b = MdpBuilder::new();
    let name = |i: usize| format!("s{i}");
    for i in 0..n {
        b.state(&name(i));
    }
    b.init(&name(0));
    for s in 0..n {
        let terminal = s + 1 == n || (s > 0 && rng.random_bool(0.25));
        if terminal {
            continue;
        }
        let candidates: Vec<usize> = if params.acyclic {
            (s + 1..n).collect()
        } else {
            (0..n).collect()
        };
        if candidates.is_empty() {
            continue;
        }
        let n_actions = rng.random_range(1..=params.max_actions);
        for a in 0..n_actions {
            let k = rng.random_range(1..=params.max_succ.min(candidates.len()));
            let mut targets: Vec<usize> = Vec::new();
            while targets.len() < k {
                let t = *candidates.choose(rng).unwrap();
                if !targets.contains(&t) {
                    targets.push(t);
                }
            }
            targets.sort_unstable();
            let weights: Vec<i64> = (0..targets.len())
                .map(|_| rng.random_range(1..=6))
                .collect();
            let total: i64 = weights.iter().sum();
            let succ: Vec<(String, BigRational)> = targets
                .iter()
                .zip(&weights)
                .map(|(&t, &w)| (name(t), ratio(w, total)))
                .collect();
            b.choice(&name(s), &format!("a{a}"), succ);
        }
    }
    b.build().expect("generated model is valid")
}

/// A random valid query: a nonempty terminal effect set and a nonempty
/// disjoint predictor set. `None` when the model has no terminal state that
/// leaves room for a predictor.
pub fn random_query(rng: &mut ChaCha8Rng, m: &Mdp) -> Option<Query> {
    let terminals = m.terminal_states();
    if terminals.is_empty() {
        return None;
    }
    let n_effect = rng.random_range(1..=terminals.len());
    let mut effect = terminals.clone();
    while effect.len() > n_effect {
        let i = rng.random_range(0..effect.len());
        effect.remove(i);
    }
    // Prefer non-terminal predictors; terminal ones are rarely interesting.
    let interior: Vec<usize> = (0..m.n_states())
        .filter(|&s| !effect.contains(&s) && !m.is_terminal(s))
        .collect();
    let fallback: Vec<usize> = (0..m.n_states())
        .filter(|s| !effect.contains(s))
        .collect();
    let candidates = if interior.is_empty() { fallback } else { interior };
    if candidates.is_empty() {
        return None;
    }
    let n_pred = rng.random_range(1..=2.min(candidates.len()));
    let mut predictor = Vec::new();
    while predictor.len() < n_pred {
        let c = *candidates.choose(rng).unwrap();
        if !predictor.contains(&c) {
            predictor.push(c);
        }
    }
    Some(Query::new(predictor, effect))
}

/// A random MR policy with exact rational weights.
pub fn random_exact_policy(rng: &mut ChaCha8Rng, m: &Mdp) -> Policy<BigRational> {
    let rows: Vec<Vec<BigRational>> = (0..m.n_states())
        .map(|s| {
            let k = m.choices(s).len();
            if k == 0 {
                return Vec::new();
            }
            let weights: Vec<i64> = (0..k).map(|_| rng.random_range(1..=6)).collect();
            let total: i64 = weights.iter().sum();
            weights.iter().map(|&w| ratio(w, total)).collect()
        })
        .collect();
    Policy::from_rows(m, rows).unwrap()
}

/// Independent oracle for reachability under a policy on acyclic models:
/// exhaustive enumeration of maximal paths, summing the probability of every
/// path that hits the target.
pub fn path_enumeration_reach(
    m: &Mdp,
    x: &Policy<BigRational>,
    target: &[usize],
    from: usize,
) -> BigRational {
    let is_target = |s: usize| target.contains(&s);
    let mut total = BigRational::zero();
    // Stack of (state, probability of the path prefix).
    let mut stack: Vec<(usize, BigRational)> = vec![(from, BigRational::one())];
    while let Some((s, prob)) = stack.pop() {
        if is_target(s) {
            total += prob;
            continue;
        }
        if m.is_terminal(s) {
            continue;
        }
        for (c, ch) in m.choices(s).iter().enumerate() {
            let w = &x.row(s)[c];
            if w.is_zero() {
                continue;
            }
            for (t, p) in &ch.succ {
                stack.push((*t, &prob * w * p));
            }
        }
    }
    total
}

/// All MR policies whose simplex coordinates are multiples of 1/step.
pub fn grid_policies(m: &Mdp, step: i64) -> Vec<Policy<BigRational>> {
    fn compositions(total: i64, parts: usize) -> Vec<Vec<i64>> {
        if parts == 1 {
            return vec![vec![total]];
        }
        let mut out = Vec::new();
        for head in 0..=total {
            for mut rest in compositions(total - head, parts - 1) {
                let mut v = vec![head];
                v.append(&mut rest);
                out.push(v);
            }
        }
        out
    }

    let mut rows_per_state: Vec<Vec<Vec<BigRational>>> = Vec::new();
    for s in 0..m.n_states() {
        let k = m.choices(s).len();
        if k == 0 {
            rows_per_state.push(vec![Vec::new()]);
        } else if k == 1 {
            rows_per_state.push(vec![vec![BigRational::one()]]);
        } else {
            rows_per_state.push(
                compositions(step, k)
                    .into_iter()
                    .map(|c| c.into_iter().map(|w| ratio(w, step)).collect())
                    .collect(),
            );
        }
    }

    let mut policies = vec![Vec::new()];
    for options in rows_per_state {
        let mut next = Vec::with_capacity(policies.len() * options.len());
        for partial in &policies {
            for opt in &options {
                let mut rows: Vec<Vec<BigRational>> = partial.clone();
                rows.push(opt.clone());
                next.push(rows);
            }
        }
        policies = next;
    }
    policies
        .into_iter()
        .map(|rows| Policy::from_rows(m, rows).unwrap())
        .collect()
}
