//! Quantitative solvers: reachability probabilities under a fixed MR policy,
//! optimal (min/max) reachability with MD witness policies, and the
//! state-action frequency system (S1)-(S3).
//!
//! Everything is generic over the arithmetic backend. The exact backend
//! solves the induced linear systems in rational arithmetic; the float
//! backend uses dense factorization up to [`DENSE_LIMIT`] unknowns and a
//! monotone Jacobi iteration beyond that.

use num::BigRational;

use crate::error::{Error, Result};
use crate::graph;
use crate::linalg;
use crate::model::{MdPolicy, Mdp, Policy};
use crate::num::Scalar;

/// Above this number of unknowns the float backend switches from dense
/// Gaussian elimination to Jacobi iteration (residual 1e-12, cap 10^6).
pub const DENSE_LIMIT: usize = 2000;

/// Per-state probabilities of eventually reaching a recorded target set.
#[derive(Debug, Clone, PartialEq)]
pub struct ReachabilityTable<S> {
    pub values: Vec<S>,
    pub target: Vec<usize>,
}

impl<S: Scalar> ReachabilityTable<S> {
    pub fn value(&self, s: usize) -> &S {
        &self.values[s]
    }
}

/// Probability to eventually reach `target` from every state under `policy`,
/// computed by zeroing the states that cannot reach the target in the induced
/// chain and solving the remaining linear system.
pub fn reach_under_policy<S: Scalar>(
    m: &Mdp,
    policy: &Policy<S>,
    target: &[usize],
) -> ReachabilityTable<S> {
    let n = m.n_states();
    let mut is_target = vec![false; n];
    for &t in target {
        is_target[t] = true;
    }
    let zero = graph::zero_mask(m, policy, target);

    let mut idx = vec![usize::MAX; n];
    let mut unknown: Vec<usize> = Vec::new();
    for s in 0..n {
        if !is_target[s] && !zero[s] {
            idx[s] = unknown.len();
            unknown.push(s);
        }
    }
    let mut values: Vec<S> = (0..n)
        .map(|s| if is_target[s] { S::one() } else { S::zero() })
        .collect();
    let k = unknown.len();
    if k == 0 {
        return ReachabilityTable {
            values,
            target: target.to_vec(),
        };
    }

    if S::EXACT || k <= DENSE_LIMIT {
        let mut a = vec![vec![S::zero(); k]; k];
        let mut b = vec![S::zero(); k];
        for (i, &s) in unknown.iter().enumerate() {
            a[i][i] = S::one();
            for (c, ch) in m.choices(s).iter().enumerate() {
                let w = policy.row(s)[c].clone();
                if !w.is_positive_value() {
                    continue;
                }
                for (t, p) in &ch.succ {
                    let coeff = w.clone() * S::from_rational(p);
                    if is_target[*t] {
                        b[i] = b[i].clone() + coeff;
                    } else if !zero[*t] {
                        let j = idx[*t];
                        a[i][j] = a[i][j].clone() - coeff;
                    }
                }
            }
        }
        let x = linalg::solve_dense(a, b)
            .expect("reachability system is nonsingular after zero-state elimination");
        for (i, &s) in unknown.iter().enumerate() {
            values[s] = x[i].clone();
        }
    } else {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); k];
        let mut c0 = vec![0.0_f64; k];
        for (i, &s) in unknown.iter().enumerate() {
            for (c, ch) in m.choices(s).iter().enumerate() {
                let w = policy.row(s)[c].to_f64();
                if w <= 0.0 {
                    continue;
                }
                for (t, p) in &ch.succ {
                    let coeff = w * p.to_f64();
                    if is_target[*t] {
                        c0[i] += coeff;
                    } else if !zero[*t] {
                        rows[i].push((idx[*t], coeff));
                    }
                }
            }
        }
        let x = linalg::solve_fixpoint_jacobi(&rows, &c0);
        for (i, &s) in unknown.iter().enumerate() {
            values[s] = S::from_f64(x[i]);
        }
    }
    ReachabilityTable {
        values,
        target: target.to_vec(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Min,
    Max,
}

/// Exact optimal reachability values plus one optimal MD policy.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalReach {
    pub values: Vec<BigRational>,
    pub policy: MdPolicy,
}

fn exact_q(m: &Mdp, v: &[BigRational], s: usize, c: usize) -> BigRational {
    m.choices(s)[c]
        .succ
        .iter()
        .map(|(t, p)| p * &v[*t])
        .sum()
}

fn evaluate_md(m: &Mdp, sigma: &MdPolicy, target: &[usize]) -> Vec<BigRational> {
    let policy: Policy<BigRational> = sigma.to_policy(m);
    reach_under_policy(m, &policy, target).values
}

/// Optimal reachability: float value iteration identifies the optimal action
/// graph, then the induced chain is solved exactly and confirmed (and, where
/// needed, repaired) by exact policy iteration. Among equally optimal actions
/// the smallest action index is preferred wherever that choice still attains
/// the optimum.
pub fn optimal_reach(m: &Mdp, target: &[usize], sense: Sense) -> OptimalReach {
    let n = m.n_states();
    let mut is_target = vec![false; n];
    for &t in target {
        is_target[t] = true;
    }
    let zero: Vec<bool> = match sense {
        Sense::Max => {
            let can = graph::can_reach_mask(m, target);
            (0..n).map(|s| !can[s] && !is_target[s]).collect()
        }
        Sense::Min => graph::sure_avoid(m, &is_target),
    };

    // Float value iteration from below.
    let mut v = vec![0.0_f64; n];
    for s in 0..n {
        if is_target[s] {
            v[s] = 1.0;
        }
    }
    for _ in 0..100_000 {
        let mut residual = 0.0_f64;
        for s in 0..n {
            if is_target[s] || zero[s] || m.is_terminal(s) {
                continue;
            }
            let mut best = match sense {
                Sense::Min => f64::INFINITY,
                Sense::Max => f64::NEG_INFINITY,
            };
            for ch in m.choices(s) {
                let q: f64 = ch
                    .succ
                    .iter()
                    .map(|(t, p)| p.to_f64() * v[*t])
                    .sum();
                best = match sense {
                    Sense::Min => best.min(q),
                    Sense::Max => best.max(q),
                };
            }
            residual = residual.max((best - v[s]).abs());
            v[s] = best;
        }
        if residual < 1e-13 {
            break;
        }
    }

    // Greedy extraction, smallest index within a small tolerance.
    let mut sigma = MdPolicy {
        choice: vec![0; n],
    };
    for s in 0..n {
        if m.is_terminal(s) || is_target[s] {
            continue;
        }
        if zero[s] && sense == Sense::Min {
            // Stay inside the sure-avoidance region.
            let c = m
                .choices(s)
                .iter()
                .position(|ch| ch.succ.iter().all(|&(t, _)| zero[t]))
                .expect("states in the sure-avoidance region have a region-preserving action");
            sigma.choice[s] = c;
            continue;
        }
        let mut best = f64::NAN;
        let mut best_c = 0;
        for (c, ch) in m.choices(s).iter().enumerate() {
            let q: f64 = ch.succ.iter().map(|(t, p)| p.to_f64() * v[*t]).sum();
            let better = if best.is_nan() {
                true
            } else {
                match sense {
                    Sense::Min => q < best - 1e-9,
                    Sense::Max => q > best + 1e-9,
                }
            };
            if better {
                best = q;
                best_c = c;
            }
        }
        sigma.choice[s] = best_c;
    }

    // Exact policy iteration until Bellman-optimal.
    let mut values = evaluate_md(m, &sigma, target);
    let mut rounds = 0usize;
    loop {
        rounds += 1;
        assert!(
            rounds <= 10_000,
            "policy iteration failed to converge; this indicates a solver bug"
        );
        let mut changed = false;
        let mut proposal = sigma.clone();
        for s in 0..n {
            if m.is_terminal(s) || is_target[s] || (sense == Sense::Min && zero[s]) {
                continue;
            }
            let current = values[s].clone();
            let mut best = current.clone();
            let mut best_c = proposal.choice[s];
            for c in 0..m.choices(s).len() {
                let q = exact_q(m, &values, s, c);
                let improves = match sense {
                    Sense::Min => q < best,
                    Sense::Max => q > best,
                };
                if improves {
                    best = q;
                    best_c = c;
                }
            }
            if best_c != proposal.choice[s] {
                proposal.choice[s] = best_c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let proposed_values = evaluate_md(m, &proposal, target);
        let monotone_ok = values.iter().zip(&proposed_values).all(|(old, new)| match sense {
            Sense::Min => new <= old,
            Sense::Max => new >= old,
        });
        if monotone_ok {
            sigma = proposal;
            values = proposed_values;
        } else {
            // A batched switch stranded some state; fall back to exhaustive
            // enumeration, which is feasible at the scale where this occurs.
            let (vals, pol) = enumerate_md_optimum(m, target, sense)
                .expect("policy iteration stalled on a model too large to enumerate");
            return OptimalReach {
                values: vals,
                policy: pol,
            };
        }
    }

    // Prefer the smallest action index among exactly optimal actions when
    // that still attains the optimal values.
    let mut canonical = MdPolicy {
        choice: vec![0; n],
    };
    for s in 0..n {
        if m.is_terminal(s) || is_target[s] {
            continue;
        }
        let c = (0..m.choices(s).len())
            .find(|&c| exact_q(m, &values, s, c) == values[s])
            .unwrap_or(sigma.choice[s]);
        canonical.choice[s] = c;
    }
    if canonical != sigma {
        let check = evaluate_md(m, &canonical, target);
        if check == values {
            sigma = canonical;
        }
    }

    OptimalReach {
        values,
        policy: sigma,
    }
}

/// Exhaustive pointwise optimum over all MD policies: the returned vector is
/// the per-state extreme, the returned policy attains the extreme at init.
/// Exponential; used as a last resort and by tests as an oracle. Returns
/// `None` when the policy space exceeds 2^20.
pub fn enumerate_md_optimum(
    m: &Mdp,
    target: &[usize],
    sense: Sense,
) -> Option<(Vec<BigRational>, MdPolicy)> {
    let n = m.n_states();
    let mut total: u128 = 1;
    for s in 0..n {
        if !m.is_terminal(s) {
            total = total.saturating_mul(m.choices(s).len().max(1) as u128);
            if total > 1 << 20 {
                return None;
            }
        }
    }
    let mut extremes: Option<Vec<BigRational>> = None;
    let mut best_at_init: Option<(BigRational, MdPolicy)> = None;
    let mut sigma = MdPolicy { choice: vec![0; n] };
    loop {
        let values = evaluate_md(m, &sigma, target);
        match &mut extremes {
            None => extremes = Some(values.clone()),
            Some(ext) => {
                for (e, v) in ext.iter_mut().zip(&values) {
                    let better = match sense {
                        Sense::Min => v < e,
                        Sense::Max => v > e,
                    };
                    if better {
                        *e = v.clone();
                    }
                }
            }
        }
        let at_init = values[m.init()].clone();
        let better = match &best_at_init {
            None => true,
            Some((b, _)) => match sense {
                Sense::Min => at_init < *b,
                Sense::Max => at_init > *b,
            },
        };
        if better {
            best_at_init = Some((at_init, sigma.clone()));
        }
        // Advance the mixed-radix counter.
        let mut s = 0;
        loop {
            if s == n {
                return Some((extremes.unwrap(), best_at_init.unwrap().1));
            }
            if m.is_terminal(s) || m.choices(s).len() <= 1 {
                s += 1;
                continue;
            }
            sigma.choice[s] += 1;
            if sigma.choice[s] < m.choices(s).len() {
                break;
            }
            sigma.choice[s] = 0;
            s += 1;
        }
    }
}

/// Expected state-action visit frequencies and per-state inflow under an MR
/// policy. The inflow of the initial state includes the unit source term of
/// (S2), so the stored vector satisfies (S1)-(S3) verbatim.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencySolution<S> {
    /// Parallel to `Mdp::choices`.
    pub pair: Vec<Vec<S>>,
    /// Per state: visit count for non-terminals, absorption mass plus the
    /// init source for terminals.
    pub state: Vec<S>,
}

impl<S: Scalar> FrequencySolution<S> {
    /// Derives per-state inflows from raw pair frequencies.
    pub fn from_pairs(m: &Mdp, pair: Vec<Vec<S>>) -> Self {
        let n = m.n_states();
        let mut state = vec![S::zero(); n];
        for s in 0..n {
            if m.is_terminal(s) {
                let mut inflow = if s == m.init() { S::one() } else { S::zero() };
                for u in 0..n {
                    for (c, ch) in m.choices(u).iter().enumerate() {
                        for (t, p) in &ch.succ {
                            if *t == s {
                                inflow = inflow + pair[u][c].clone() * S::from_rational(p);
                            }
                        }
                    }
                }
                state[s] = inflow;
            } else {
                state[s] = pair[s]
                    .iter()
                    .fold(S::zero(), |acc, x| acc + x.clone());
            }
        }
        FrequencySolution { pair, state }
    }

    pub fn state_value(&self, s: usize) -> &S {
        &self.state[s]
    }
}

/// Expected visit counts per state-action pair under `policy`, obtained by
/// solving the transposed flow system. Requires an EC-free model; otherwise
/// frequencies may diverge and an error is returned.
pub fn frequencies_of<S: Scalar>(m: &Mdp, policy: &Policy<S>) -> Result<FrequencySolution<S>> {
    if !graph::mec_decomposition(m).is_empty() {
        return Err(Error::EndComponents);
    }
    let n = m.n_states();
    let mut idx = vec![usize::MAX; n];
    let mut nonterm: Vec<usize> = Vec::new();
    for s in 0..n {
        if !m.is_terminal(s) {
            idx[s] = nonterm.len();
            nonterm.push(s);
        }
    }
    let k = nonterm.len();
    let mut mu: Vec<S> = Vec::new();
    if k > 0 {
        // (I - M^T) mu = e_init over non-terminal states.
        let mut a = vec![vec![S::zero(); k]; k];
        let mut b = vec![S::zero(); k];
        // Columns are source states, rows are destinations.
        for (j, &u) in nonterm.iter().enumerate() {
            a[j][j] = S::one();
            for (c, ch) in m.choices(u).iter().enumerate() {
                let w = policy.row(u)[c].clone();
                if !w.is_positive_value() {
                    continue;
                }
                for (t, p) in &ch.succ {
                    if !m.is_terminal(*t) {
                        let i = idx[*t];
                        a[i][j] = a[i][j].clone() - w.clone() * S::from_rational(p);
                    }
                }
            }
        }
        if !m.is_terminal(m.init()) {
            b[idx[m.init()]] = S::one();
        }
        mu = linalg::solve_dense(a, b)
            .expect("visit-count system is nonsingular in EC-free models");
    }

    let pair: Vec<Vec<S>> = (0..n)
        .map(|s| {
            if m.is_terminal(s) {
                Vec::new()
            } else {
                let visits = mu[idx[s]].clone();
                policy
                    .row(s)
                    .iter()
                    .map(|w| visits.clone() * w.clone())
                    .collect()
            }
        })
        .collect();
    Ok(FrequencySolution::from_pairs(m, pair))
}

/// Residual tolerance for the float backend when checking (S1)-(S3).
const FREQ_TOLERANCE: f64 = 1e-9;

/// Recovers the MR policy from a frequency vector: `x_{s,a} / x_s` where the
/// state mass is positive, the uniform distribution elsewhere. Fails when
/// (S1)-(S3) are violated beyond tolerance (exactly, for the exact backend).
pub fn policy_from_frequencies<S: Scalar>(
    m: &Mdp,
    f: &FrequencySolution<S>,
) -> Result<Policy<S>> {
    let n = m.n_states();
    if f.pair.len() != n {
        return Err(Error::InfeasibleFrequencies(
            "frequency vector shape does not match the model".into(),
        ));
    }
    // (S1) nonnegativity.
    for s in 0..n {
        if f.pair[s].len() != m.choices(s).len() {
            return Err(Error::InfeasibleFrequencies(format!(
                "state `{}` has {} pairs, expected {}",
                m.state_name(s),
                f.pair[s].len(),
                m.choices(s).len()
            )));
        }
        for x in &f.pair[s] {
            let negative = if S::EXACT {
                *x < S::zero()
            } else {
                x.to_f64() < -FREQ_TOLERANCE
            };
            if negative {
                return Err(Error::InfeasibleFrequencies(format!(
                    "(S1) violated at state `{}`",
                    m.state_name(s)
                )));
            }
        }
    }
    // (S2)/(S3) balance at non-terminal states.
    for s in 0..n {
        if m.is_terminal(s) {
            continue;
        }
        let mut balance = if s == m.init() { S::one() } else { S::zero() };
        for u in 0..n {
            for (c, ch) in m.choices(u).iter().enumerate() {
                for (t, p) in &ch.succ {
                    if *t == s {
                        balance = balance + f.pair[u][c].clone() * S::from_rational(p);
                    }
                }
            }
        }
        let outflow = f.pair[s]
            .iter()
            .fold(S::zero(), |acc, x| acc + x.clone());
        let ok = if S::EXACT {
            outflow == balance
        } else {
            (outflow.to_f64() - balance.to_f64()).abs() <= FREQ_TOLERANCE
        };
        if !ok {
            let which = if s == m.init() { "S2" } else { "S3" };
            return Err(Error::InfeasibleFrequencies(format!(
                "({which}) violated at state `{}`",
                m.state_name(s)
            )));
        }
    }

    let rows: Vec<Vec<S>> = (0..n)
        .map(|s| {
            let k = m.choices(s).len();
            if k == 0 {
                return Vec::new();
            }
            let mass = f.pair[s]
                .iter()
                .fold(S::zero(), |acc, x| acc + x.clone());
            let positive = if S::EXACT {
                mass.is_positive_value()
            } else {
                mass.to_f64() > 0.0
            };
            if positive {
                f.pair[s]
                    .iter()
                    .map(|x| {
                        let w = x.clone() / mass.clone();
                        if w < S::zero() {
                            S::zero()
                        } else {
                            w
                        }
                    })
                    .collect()
            } else {
                let share = S::one() / S::from_usize(k);
                vec![share; k]
            }
        })
        .collect();
    Policy::from_rows(m, rows)
}
