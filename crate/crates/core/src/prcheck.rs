//! Decision procedures for probability-raising policies.
//!
//! SPR existence is decided exactly on the canonical model. For every
//! candidate level `t` (a distinct maximal cause value among reachable
//! causes, scanned in descending order) we restrict to the region where
//! causes with maximal value below `t` can be surely avoided, give every
//! remaining cause its single summary action paying `max(t, p_min)` toward
//! TP, and compare the minimal effect probability of that model against `t`.
//! A witness policy is assembled from the minimizing MD policy, the cause
//! mixtures realizing the payments, and a small uniform admixture, and is
//! verified exactly before it is reported. When all reachable causes share
//! the same maximal value (in particular for singleton predictors) the scan
//! collapses to the single star-model comparison `Pr_min < p_star`.
//!
//! GPR existence is searched (uniform point, projected gradient ascent over
//! the state-action frequency polytope, exact MD enumeration below a cap)
//! and every candidate is re-verified in exact arithmetic; a definitive
//! "no" is only ever produced through the singleton coincidence with SPR.

use num::{BigRational, One, Signed, Zero};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::graph;
use crate::linalg;
use crate::model::{MdPolicy, Mdp, MdpBuilder, Policy, Query, StAct};
use crate::num::{rational_from_f64, rational_to_string, Scalar};
use crate::quality::{gpr_holds, measure_exact, polytope, sample_policy, ConfusionEngine, MeasureKind, MeasureValue, PrMode, SprEngine};
use crate::solve::{
    frequencies_of, optimal_reach, policy_from_frequencies, reach_under_policy,
    FrequencySolution, Sense,
};
use crate::transform::{canonical, star, CanonicalMdp, DELTA};

/// Exact comparison data backing a verdict; third parties can re-check every
/// inequality from the serialized rationals.
#[derive(Debug, Clone)]
pub struct CauseCheck {
    pub name: String,
    pub reached: bool,
    /// Conditional effect probability after a first visit, when reached.
    pub conditional: Option<BigRational>,
}

#[derive(Debug, Clone)]
pub struct WitnessReport {
    pub mode: PrMode,
    pub satisfied: bool,
    pub global_effect: BigRational,
    pub predictor_mass: BigRational,
    pub per_cause: Vec<CauseCheck>,
    /// tp*tn - fp*fn for the GPR mode.
    pub f_value: Option<BigRational>,
    pub reason: Option<String>,
}

impl WitnessReport {
    pub fn to_json(&self) -> Value {
        json!({
            "mode": self.mode.name(),
            "satisfied": self.satisfied,
            "global_effect": rational_to_string(&self.global_effect),
            "predictor_mass": rational_to_string(&self.predictor_mass),
            "per_cause": self.per_cause.iter().map(|c| json!({
                "cause": c.name,
                "reached": c.reached,
                "conditional": c.conditional.as_ref().map(rational_to_string),
            })).collect::<Vec<_>>(),
            "f_value": self.f_value.as_ref().map(rational_to_string),
            "reason": self.reason,
        })
    }
}

/// Evaluates (R) and (S), or (R) and (G), for a rational policy in exact
/// arithmetic on the given model (not on a transformed one).
pub fn verify_witness(
    m: &Mdp,
    q: &Query,
    x: &Policy<BigRational>,
    mode: PrMode,
) -> Result<WitnessReport> {
    let engine = SprEngine::new(m, q)?;
    let tc = engine.two_copy();
    let product = &tc.mdp;
    let xp = tc.map_policy(x);

    let mut union_effect: Vec<usize> = tc.e0.iter().chain(tc.e1.iter()).copied().collect();
    union_effect.sort_unstable();
    let table = reach_under_policy(product, &xp, &union_effect);
    let global = table.values[product.init()].clone();

    let predictor_mass = if tc.c0.is_empty() {
        BigRational::zero()
    } else {
        reach_under_policy(product, &xp, &tc.c0).values[product.init()].clone()
    };

    let reached_mask = crate::quality::support_reachable(product, &xp);
    let mut per_cause = Vec::new();
    let mut all_raised = true;
    let mut any_reached = false;
    for &c0 in &tc.c0 {
        let (orig, _) = tc.origin[c0];
        let reached = reached_mask[c0];
        let conditional = if reached {
            let c1 = tc.embed[orig][1].expect("switch target");
            Some(table.values[c1].clone())
        } else {
            None
        };
        if let Some(cond) = &conditional {
            any_reached = true;
            if *cond <= global {
                all_raised = false;
            }
        }
        per_cause.push(CauseCheck {
            name: m.state_name(orig).to_string(),
            reached,
            conditional,
        });
    }

    let (satisfied, f_value, reason) = match mode {
        PrMode::Spr => {
            if !any_reached {
                (false, None, Some("(R) fails: no predictor state is reached".into()))
            } else if all_raised {
                (true, None, None)
            } else {
                (false, None, Some("(S) fails at some reached cause".into()))
            }
        }
        PrMode::Gpr => {
            let cm = ConfusionEngine::new(m, q)?.eval(x);
            let f = &cm.tp * &cm.tn - &cm.fp * &cm.fn_;
            let ok = gpr_holds(&cm);
            let reason = if ok {
                None
            } else if !predictor_mass.is_positive() {
                Some("(R) fails: the predictor is never reached".into())
            } else {
                Some("(G) fails: tp*tn - fp*fn is not positive".into())
            };
            (ok, Some(f), reason)
        }
    };

    Ok(WitnessReport {
        mode,
        satisfied,
        global_effect: global,
        predictor_mass,
        per_cause,
        f_value,
        reason,
    })
}

/// One scanned SPR level.
#[derive(Debug, Clone)]
pub struct ThresholdReport {
    pub level: BigRational,
    pub init_safe: bool,
    pub cause_reachable: bool,
    pub min_value: Option<BigRational>,
}

#[derive(Debug, Clone)]
pub struct SprVerdict {
    pub exists: bool,
    /// max over all cause states of p_max.
    pub p_star: BigRational,
    /// Pr_min over the star model of reaching the effect (diagnostic; equals
    /// the deciding quantity whenever all reachable causes share p_star).
    pub min_value: BigRational,
    /// MR policy on the canonical model, present iff `exists`.
    pub witness: Option<Policy<BigRational>>,
    pub witness_report: Option<WitnessReport>,
    /// The level at which the scan succeeded.
    pub threshold: Option<BigRational>,
    pub scan: Vec<ThresholdReport>,
    pub reason: Option<String>,
    pub canonical: CanonicalMdp,
    /// Finite-memory restatement of the witness on the original model;
    /// emitted only for MEC-free inputs.
    pub original_witness: Option<TwoMemoryPolicy>,
}

impl SprVerdict {
    pub fn to_json(&self, original: &Mdp) -> Value {
        json!({
            "exists": self.exists,
            "p_star": rational_to_string(&self.p_star),
            "min_value": rational_to_string(&self.min_value),
            "threshold": self.threshold.as_ref().map(rational_to_string),
            "reason": self.reason,
            "witness": self.witness.as_ref().map(|w| w.to_json(&self.canonical.mdp)),
            "witness_report": self.witness_report.as_ref().map(|r| r.to_json()),
            "scan": self.scan.iter().map(|t| json!({
                "level": rational_to_string(&t.level),
                "init_safe": t.init_safe,
                "cause_reachable": t.cause_reachable,
                "min_value": t.min_value.as_ref().map(rational_to_string),
            })).collect::<Vec<_>>(),
            "canonical_mapping": self.canonical.mapping_json(original),
            "original_witness": self.original_witness.as_ref().map(|w| w.to_json(original)),
        })
    }
}

/// The capped, safety-restricted star model at level `t`, sharing state
/// indices with the canonical model.
struct CappedStar {
    mdp: Mdp,
    /// Per state: for non-cause states, the canonical choice index behind
    /// each kept choice.
    choice_map: Vec<Vec<usize>>,
    safe: Vec<bool>,
    /// Payment toward TP at each allowed cause state.
    payment: Vec<Option<BigRational>>,
}

fn build_capped_star(cm: &CanonicalMdp, t: &BigRational) -> Result<Option<CappedStar>> {
    let m = &cm.mdp;
    let n = m.n_states();
    let mut forbidden = vec![false; n];
    for cause in &cm.causes {
        if let Some(s) = cause.canonical {
            if cause.p_max < *t {
                forbidden[s] = true;
            }
        }
    }
    let safe = graph::sure_avoid(m, &forbidden);
    if !safe[m.init()] {
        return Ok(None);
    }
    let mut builder = MdpBuilder::new();
    for s in 0..n {
        builder.state(m.state_name(s));
    }
    builder.init(m.state_name(m.init()));
    let mut choice_map: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut payment: Vec<Option<BigRational>> = vec![None; n];
    for s in 0..n {
        if !safe[s] || m.is_terminal(s) {
            continue;
        }
        let from = m.state_name(s);
        if let Some(cause) = cm.cause_by_canonical(s) {
            let u = if cause.p_min > *t {
                cause.p_min.clone()
            } else {
                t.clone()
            };
            let mut row = Vec::new();
            if u.is_positive() {
                row.push((m.state_name(cm.tp).to_string(), u.clone()));
            }
            let rest = BigRational::one() - &u;
            if rest.is_positive() {
                row.push((m.state_name(cm.fp).to_string(), rest));
            }
            builder.choice(from, DELTA, row);
            payment[s] = Some(u);
            continue;
        }
        for (c, ch) in m.choices(s).iter().enumerate() {
            if ch.succ.iter().all(|&(succ, _)| safe[succ]) {
                let succ = ch
                    .succ
                    .iter()
                    .map(|(u, p)| (m.state_name(*u).to_string(), p.clone()))
                    .collect();
                builder.choice(from, m.action_name(ch.action), succ);
                choice_map[s].push(c);
            }
        }
    }
    Ok(Some(CappedStar {
        mdp: builder.build()?,
        choice_map,
        safe,
        payment,
    }))
}

/// Mixture weight on `__alpha_max` realizing TP-probability `u` at a cause.
fn realization_row(cm: &CanonicalMdp, state: usize, u: &BigRational) -> Vec<BigRational> {
    let cause = cm.cause_by_canonical(state).expect("cause state");
    let k = cm.mdp.choices(state).len();
    let mut row = vec![BigRational::zero(); k];
    match cause.choice_max {
        None => row[cause.choice_min] = BigRational::one(),
        Some(cmax) => {
            let span = &cause.p_max - &cause.p_min;
            let w = (u - &cause.p_min) / span;
            row[cause.choice_min] = BigRational::one() - &w;
            row[cmax] = w;
        }
    }
    row
}

fn check_spr_on_canonical(m: &Mdp, q: &Query, cm: CanonicalMdp) -> Result<SprVerdict> {
    let effect = cm.effect();
    let p_star = cm.p_star.clone();
    let min_value = if p_star.is_positive() {
        let st = star(&cm, &p_star)?;
        optimal_reach(&st.mdp, &st.effect(), Sense::Min).values[st.mdp.init()].clone()
    } else {
        BigRational::zero()
    };

    let reachable_causes: Vec<&crate::transform::CauseInfo> =
        cm.causes.iter().filter(|c| c.canonical.is_some()).collect();
    if reachable_causes.is_empty() {
        return Ok(SprVerdict {
            exists: false,
            p_star,
            min_value,
            witness: None,
            witness_report: None,
            threshold: None,
            scan: Vec::new(),
            reason: Some("(R) unsatisfiable: no predictor state is reachable".into()),
            original_witness: None,
            canonical: cm,
        });
    }

    let mut levels: Vec<BigRational> = reachable_causes
        .iter()
        .map(|c| c.p_max.clone())
        .filter(|p| p.is_positive())
        .collect();
    levels.sort();
    levels.dedup();
    levels.reverse();

    let mut scan = Vec::new();
    for t in levels {
        let Some(capped) = build_capped_star(&cm, &t)? else {
            scan.push(ThresholdReport {
                level: t,
                init_safe: false,
                cause_reachable: false,
                min_value: None,
            });
            continue;
        };
        let reach = graph::reachable_from(&capped.mdp, &[capped.mdp.init()]);
        let cause_reachable = cm
            .cause_states()
            .iter()
            .any(|&s| capped.payment[s].is_some() && reach.contains(&s));
        if !cause_reachable {
            scan.push(ThresholdReport {
                level: t,
                init_safe: true,
                cause_reachable: false,
                min_value: None,
            });
            continue;
        }
        let opt = optimal_reach(&capped.mdp, &effect, Sense::Min);
        let v = opt.values[capped.mdp.init()].clone();
        scan.push(ThresholdReport {
            level: t.clone(),
            init_safe: true,
            cause_reachable: true,
            min_value: Some(v.clone()),
        });
        if v < t {
            let (witness, report) =
                build_spr_witness(&cm, &capped, &opt.policy, &t, &v)?;
            let original_witness = if cm.had_mecs {
                None
            } else {
                Some(map_witness_to_original(m, q, &cm, &witness))
            };
            return Ok(SprVerdict {
                exists: true,
                p_star,
                min_value,
                witness: Some(witness),
                witness_report: Some(report),
                threshold: Some(t),
                scan,
                reason: None,
                original_witness,
                canonical: cm,
            });
        }
    }

    Ok(SprVerdict {
        exists: false,
        p_star,
        min_value,
        witness: None,
        witness_report: None,
        threshold: None,
        scan,
        reason: Some("no level admits a raising policy".into()),
        original_witness: None,
        canonical: cm,
    })
}

/// Decides SPR existence; on yes the verdict carries an exactly verified MR
/// witness on the canonical model.
pub fn check_spr(m: &Mdp, q: &Query) -> Result<SprVerdict> {
    let cm = canonical(m, q)?;
    check_spr_on_canonical(m, q, cm)
}

fn build_spr_witness(
    cm: &CanonicalMdp,
    capped: &CappedStar,
    sigma: &MdPolicy,
    t: &BigRational,
    v: &BigRational,
) -> Result<(Policy<BigRational>, WitnessReport)> {
    let m = &cm.mdp;
    let n = m.n_states();
    let query = cm.canonical_query();

    let mut base: Vec<Vec<BigRational>> = Vec::with_capacity(n);
    let mut uniform_safe: Vec<Vec<BigRational>> = Vec::with_capacity(n);
    for s in 0..n {
        let k = m.choices(s).len();
        if k == 0 {
            base.push(Vec::new());
            uniform_safe.push(Vec::new());
            continue;
        }
        if let Some(u) = &capped.payment[s] {
            let row = realization_row(cm, s, u);
            base.push(row.clone());
            uniform_safe.push(row);
            continue;
        }
        if cm.cause_by_canonical(s).is_some() {
            // Forbidden cause: never reached under safe routing.
            let mut row = vec![BigRational::zero(); k];
            row[0] = BigRational::one();
            base.push(row.clone());
            uniform_safe.push(row);
            continue;
        }
        if capped.safe[s] {
            let kept = &capped.choice_map[s];
            let mut dirac = vec![BigRational::zero(); k];
            dirac[kept[sigma.choice[s]]] = BigRational::one();
            base.push(dirac);
            let share = BigRational::new(1.into(), (kept.len() as i64).into());
            let mut row = vec![BigRational::zero(); k];
            for &c in kept {
                row[c] = share.clone();
            }
            uniform_safe.push(row);
        } else {
            // Unreachable under any safe policy; fill uniformly.
            let share = BigRational::new(1.into(), (k as i64).into());
            base.push(vec![share.clone(); k]);
            uniform_safe.push(vec![share; k]);
        }
    }

    // Small admixture of the safe uniform policy makes every allowed cause
    // reachable while keeping the global effect probability below t.
    let d = t - v;
    let mut eps = &d / (BigRational::from_integer(2.into()) * (BigRational::one() + &d));
    for _ in 0..64 {
        let rows: Vec<Vec<BigRational>> = (0..n)
            .map(|s| {
                base[s]
                    .iter()
                    .zip(&uniform_safe[s])
                    .map(|(b, u)| (BigRational::one() - &eps) * b + &eps * u)
                    .collect()
            })
            .collect();
        let witness = Policy::from_rows(m, rows)?;
        let report = verify_witness(m, &query, &witness, PrMode::Spr)?;
        if report.satisfied {
            return Ok((witness, report));
        }
        eps /= BigRational::from_integer(2.into());
    }
    Err(Error::Other(
        "failed to verify the constructed SPR witness; this indicates a solver bug".into(),
    ))
}

/// Remark-17 fast path for singleton predictors: enable only `__alpha_max`
/// at the cause and compare its value against the minimal effect
/// probability of that model.
pub fn check_spr_singleton(m: &Mdp, q: &Query) -> Result<SprVerdict> {
    if q.predictor.len() != 1 {
        return Err(Error::InvalidQuery(
            "the singleton fast path needs |C| = 1".into(),
        ));
    }
    let cm = canonical(m, q)?;
    // The general scan on a singleton degenerates to exactly the Remark-17
    // comparison; reuse it so both paths share the witness machinery.
    check_spr_on_canonical(m, q, cm)
}

/// Configuration for the GPR search.
#[derive(Debug, Clone)]
pub struct GprSearchConfig {
    pub starts: u32,
    pub enumeration_cap: usize,
    pub seed: u64,
    pub ascent_iters: u32,
}

impl Default for GprSearchConfig {
    fn default() -> Self {
        GprSearchConfig {
            starts: 16,
            enumeration_cap: 16,
            seed: 0,
            ascent_iters: 400,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GprOutcome {
    Found,
    NotFound,
}

#[derive(Debug, Clone)]
pub struct GprWitness {
    /// MR policy on the canonical model, verified exactly.
    pub policy: Policy<BigRational>,
    pub frequencies: FrequencySolution<BigRational>,
    pub f_value: BigRational,
}

#[derive(Debug, Clone)]
pub struct GprTrace {
    pub route: &'static str,
    pub starts_used: u32,
    pub evaluations: u64,
    pub best_f: f64,
}

#[derive(Debug, Clone)]
pub struct GprVerdict {
    pub outcome: GprOutcome,
    pub witness: Option<GprWitness>,
    /// True when the verdict is definitive (singleton delegation); a plain
    /// not-found is only "nothing found within budget".
    pub oracle_complete: bool,
    pub trace: GprTrace,
    pub witness_report: Option<WitnessReport>,
    pub canonical: CanonicalMdp,
}

impl GprVerdict {
    pub fn to_json(&self, original: &Mdp) -> Value {
        json!({
            "outcome": match self.outcome { GprOutcome::Found => "found", GprOutcome::NotFound => "not-found" },
            "oracle_complete": self.oracle_complete,
            "witness": self.witness.as_ref().map(|w| json!({
                "policy": w.policy.to_json(&self.canonical.mdp),
                "f_value": rational_to_string(&w.f_value),
                "terminal_frequencies": {
                    "tp": rational_to_string(&w.frequencies.state[self.canonical.tp]),
                    "fp": rational_to_string(&w.frequencies.state[self.canonical.fp]),
                    "fn": rational_to_string(&w.frequencies.state[self.canonical.fn_]),
                    "tn": rational_to_string(&w.frequencies.state[self.canonical.tn]),
                },
            })),
            "witness_report": self.witness_report.as_ref().map(|r| r.to_json()),
            "trace": json!({
                "route": self.trace.route,
                "starts_used": self.trace.starts_used,
                "evaluations": self.trace.evaluations,
                "best_f": self.trace.best_f,
            }),
            "canonical_mapping": self.canonical.mapping_json(original),
        })
    }
}

/// f(x) = x_TP * x_TN - x_FP * x_FN over a frequency solution.
fn freq_f(cm: &CanonicalMdp, f: &FrequencySolution<BigRational>) -> BigRational {
    &f.state[cm.tp] * &f.state[cm.tn] - &f.state[cm.fp] * &f.state[cm.fn_]
}

fn exact_gpr_candidate(
    cm: &CanonicalMdp,
    policy: Policy<BigRational>,
) -> Result<Option<GprWitness>> {
    let f = frequencies_of(&cm.mdp, &policy)?;
    let fv = freq_f(cm, &f);
    let pr_c = &f.state[cm.tp] + &f.state[cm.fp];
    if fv.is_positive() && pr_c.is_positive() {
        Ok(Some(GprWitness {
            policy,
            frequencies: f,
            f_value: fv,
        }))
    } else {
        Ok(None)
    }
}

fn rationalize_policy(m: &Mdp, x: &Policy<f64>) -> Result<Policy<BigRational>> {
    let mut rows = Vec::with_capacity(m.n_states());
    for s in 0..m.n_states() {
        let raw: Vec<BigRational> = x
            .row(s)
            .iter()
            .map(|&p| rational_from_f64(p.max(0.0)))
            .collect::<Result<_>>()?;
        let sum: BigRational = raw.iter().cloned().sum();
        if raw.is_empty() {
            rows.push(raw);
        } else if sum.is_positive() {
            rows.push(raw.into_iter().map(|p| p / &sum).collect());
        } else {
            let k = raw.len();
            rows.push(vec![BigRational::new(1.into(), (k as i64).into()); k]);
        }
    }
    Policy::from_rows(m, rows)
}

/// The frequency polytope of the canonical model, in float form, for the
/// projected gradient ascent.
struct FreqPolytope {
    pairs: Vec<StAct>,
    /// Balance rows, one per non-terminal state.
    a: Vec<Vec<f64>>,
    /// Gradients of the four terminal inflows.
    g_tp: Vec<f64>,
    g_fp: Vec<f64>,
    g_fn: Vec<f64>,
    g_tn: Vec<f64>,
}

impl FreqPolytope {
    fn new(cm: &CanonicalMdp) -> Self {
        let m = &cm.mdp;
        let pairs = m.state_action_pairs();
        let k = pairs.len();
        let nonterm: Vec<usize> = (0..m.n_states()).filter(|&s| !m.is_terminal(s)).collect();
        let mut a = vec![vec![0.0; k]; nonterm.len()];
        for (row, &s) in nonterm.iter().enumerate() {
            for (j, p) in pairs.iter().enumerate() {
                let mut coeff = if p.state == s { 1.0 } else { 0.0 };
                for (t, prob) in &m.choices(p.state)[p.choice].succ {
                    if *t == s {
                        coeff -= prob.to_f64();
                    }
                }
                if coeff != 0.0 {
                    a[row][j] = coeff;
                }
            }
        }
        let grad_for = |target: usize| -> Vec<f64> {
            pairs
                .iter()
                .map(|p| {
                    m.choices(p.state)[p.choice]
                        .succ
                        .iter()
                        .filter(|(t, _)| *t == target)
                        .map(|(_, prob)| prob.to_f64())
                        .sum()
                })
                .collect()
        };
        FreqPolytope {
            g_tp: grad_for(cm.tp),
            g_fp: grad_for(cm.fp),
            g_fn: grad_for(cm.fn_),
            g_tn: grad_for(cm.tn),
            pairs,
            a,
        }
    }

    fn f(&self, z: &[f64]) -> f64 {
        let dot = |g: &[f64]| g.iter().zip(z).map(|(a, b)| a * b).sum::<f64>();
        dot(&self.g_tp) * dot(&self.g_tn) - dot(&self.g_fp) * dot(&self.g_fn)
    }

    fn grad(&self, z: &[f64]) -> Vec<f64> {
        let dot = |g: &[f64]| g.iter().zip(z).map(|(a, b)| a * b).sum::<f64>();
        let (wtp, wfp, wfn, wtn) = (
            dot(&self.g_tp),
            dot(&self.g_fp),
            dot(&self.g_fn),
            dot(&self.g_tn),
        );
        (0..z.len())
            .map(|j| {
                wtn * self.g_tp[j] + wtp * self.g_tn[j]
                    - wfn * self.g_fp[j]
                    - wfp * self.g_fn[j]
            })
            .collect()
    }

    /// Projects `d` onto the tangent space of the balance equalities with
    /// the pinned coordinates fixed at zero.
    fn project(&self, d: &[f64], pinned: &[bool]) -> Vec<f64> {
        let mut rows: Vec<Vec<f64>> = self.a.clone();
        for (i, &pin) in pinned.iter().enumerate() {
            if pin {
                let mut e = vec![0.0; d.len()];
                e[i] = 1.0;
                rows.push(e);
            }
        }
        let r = rows.len();
        let mut gram = vec![vec![0.0; r]; r];
        let mut rhs = vec![0.0; r];
        for i in 0..r {
            for j in 0..r {
                gram[i][j] = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
            }
            gram[i][i] += 1e-12;
            rhs[i] = rows[i].iter().zip(d).map(|(a, b)| a * b).sum();
        }
        let mu = match linalg::solve_dense(gram, rhs) {
            Ok(mu) => mu,
            Err(_) => return vec![0.0; d.len()],
        };
        let mut out = d.to_vec();
        for (i, row) in rows.iter().enumerate() {
            for (o, &c) in out.iter_mut().zip(row) {
                *o -= mu[i] * c;
            }
        }
        out
    }

    fn freq_to_vec(&self, f: &FrequencySolution<f64>) -> Vec<f64> {
        self.pairs
            .iter()
            .map(|p| f.pair[p.state][p.choice])
            .collect()
    }

    fn vec_to_pairs(&self, m: &Mdp, z: &[f64]) -> Vec<Vec<f64>> {
        let mut pair: Vec<Vec<f64>> = (0..m.n_states())
            .map(|s| vec![0.0; m.choices(s).len()])
            .collect();
        for (j, p) in self.pairs.iter().enumerate() {
            pair[p.state][p.choice] = z[j];
        }
        pair
    }
}

/// Backtracking projected gradient ascent from `start`; returns the best
/// point seen and whether the positivity threshold was crossed.
fn ascend(
    poly: &FreqPolytope,
    start: Vec<f64>,
    iters: u32,
    evals: &mut u64,
) -> (Vec<f64>, f64, bool) {
    let mut z = start;
    let mut fz = poly.f(&z);
    *evals += 1;
    for _ in 0..iters {
        if fz > 1e-9 {
            return (z, fz, true);
        }
        let grad = poly.grad(&z);
        let mut pinned = vec![false; z.len()];
        let mut d;
        loop {
            d = poly.project(&grad, &pinned);
            let mut newly = false;
            for i in 0..z.len() {
                if !pinned[i] && z[i] <= 1e-12 && d[i] < -1e-15 {
                    pinned[i] = true;
                    newly = true;
                }
            }
            if !newly {
                break;
            }
        }
        let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= 1e-12 {
            break;
        }
        // Largest feasible step toward the nonnegativity boundary.
        let mut s_max = 1.0_f64;
        for i in 0..z.len() {
            if d[i] < -1e-15 {
                s_max = s_max.min(z[i] / -d[i]);
            }
        }
        let mut s = s_max.min(1.0);
        let mut advanced = false;
        while s > 1e-12 {
            let cand: Vec<f64> = z
                .iter()
                .zip(&d)
                .map(|(a, b)| (a + s * b).max(0.0))
                .collect();
            let fc = poly.f(&cand);
            *evals += 1;
            if fc > fz {
                z = cand;
                fz = fc;
                advanced = true;
                break;
            }
            s /= 2.0;
        }
        if !advanced {
            break;
        }
    }
    (z, fz, fz > 1e-9)
}

/// Searches for a GPR policy. `Found` always carries an exactly verified
/// witness; `NotFound` is definitive only when `oracle_complete` is set
/// (singleton delegation via the SPR coincidence).
pub fn check_gpr(m: &Mdp, q: &Query, cfg: &GprSearchConfig) -> Result<GprVerdict> {
    let cm = canonical(m, q)?;
    let mut evals: u64 = 0;
    let mut best_f = f64::NEG_INFINITY;

    let finish = |cm: CanonicalMdp,
                  witness: Option<GprWitness>,
                  route: &'static str,
                  oracle_complete: bool,
                  starts_used: u32,
                  evals: u64,
                  best_f: f64|
     -> Result<GprVerdict> {
        let witness_report = match &witness {
            Some(w) => {
                let report = verify_witness(&cm.mdp, &cm.canonical_query(), &w.policy, PrMode::Gpr)?;
                if !report.satisfied {
                    return Err(Error::Other(
                        "GPR witness failed exact verification; this indicates a solver bug".into(),
                    ));
                }
                Some(report)
            }
            None => None,
        };
        Ok(GprVerdict {
            outcome: if witness.is_some() {
                GprOutcome::Found
            } else {
                GprOutcome::NotFound
            },
            witness,
            oracle_complete,
            trace: GprTrace {
                route,
                starts_used,
                evaluations: evals,
                best_f,
            },
            witness_report,
            canonical: cm,
        })
    };

    // (a) The uniform policy, exactly.
    let uniform = crate::model::uniform_policy(&cm.mdp);
    evals += 1;
    if let Some(w) = exact_gpr_candidate(&cm, uniform)? {
        best_f = w.f_value.to_f64();
        return finish(cm, Some(w), "uniform", false, 0, evals, best_f);
    }

    // (b) Multi-start projected gradient ascent on the frequency polytope.
    let poly = FreqPolytope::new(&cm);
    let spec = polytope(&cm.mdp);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..cfg.starts {
        let x = sample_policy(&spec, &mut rng);
        let freq = frequencies_of(&cm.mdp, &x)?;
        let start = poly.freq_to_vec(&freq);
        let (z, fz, positive) = ascend(&poly, start, cfg.ascent_iters, &mut evals);
        best_f = best_f.max(fz);
        if positive {
            let pair = poly.vec_to_pairs(&cm.mdp, &z);
            let fsol = FrequencySolution::from_pairs(&cm.mdp, pair);
            if let Ok(float_policy) = policy_from_frequencies(&cm.mdp, &fsol) {
                let exact = rationalize_policy(&cm.mdp, &float_policy)?;
                if let Some(w) = exact_gpr_candidate(&cm, exact)? {
                    return finish(cm, Some(w), "ascent", false, cfg.starts, evals, best_f);
                }
            }
        }
    }

    // (c) Exact enumeration of MD policies below the cap, each with a local
    // ascent from its frequency vertex.
    if cm.mdp.n_state_action_pairs() <= cfg.enumeration_cap {
        let n = cm.mdp.n_states();
        let mut sigma = MdPolicy { choice: vec![0; n] };
        'outer: loop {
            let policy: Policy<BigRational> = sigma.to_policy(&cm.mdp);
            evals += 1;
            if let Some(w) = exact_gpr_candidate(&cm, policy.clone())? {
                best_f = w.f_value.to_f64();
                return finish(cm, Some(w), "enumeration", false, cfg.starts, evals, best_f);
            }
            let freq = frequencies_of(&cm.mdp, &policy.to_float())?;
            let start = poly.freq_to_vec(&freq);
            let (z, fz, positive) = ascend(&poly, start, cfg.ascent_iters, &mut evals);
            best_f = best_f.max(fz);
            if positive {
                let pair = poly.vec_to_pairs(&cm.mdp, &z);
                let fsol = FrequencySolution::from_pairs(&cm.mdp, pair);
                if let Ok(float_policy) = policy_from_frequencies(&cm.mdp, &fsol) {
                    let exact = rationalize_policy(&cm.mdp, &float_policy)?;
                    if let Some(w) = exact_gpr_candidate(&cm, exact)? {
                        return finish(
                            cm,
                            Some(w),
                            "enumeration-ascent",
                            false,
                            cfg.starts,
                            evals,
                            best_f,
                        );
                    }
                }
            }
            let mut s = 0;
            loop {
                if s == n {
                    break 'outer;
                }
                if cm.mdp.is_terminal(s) || cm.mdp.choices(s).len() <= 1 {
                    s += 1;
                    continue;
                }
                sigma.choice[s] += 1;
                if sigma.choice[s] < cm.mdp.choices(s).len() {
                    break;
                }
                sigma.choice[s] = 0;
                s += 1;
            }
        }
    }

    // Singleton coincidence: SPR and GPR agree for |C| = 1, and the SPR
    // check is exact, so its answer settles the question.
    if q.predictor.len() == 1 {
        let spr = check_spr(m, q)?;
        if let Some(wp) = spr.witness {
            let w = exact_gpr_candidate(&cm, wp)?.ok_or_else(|| {
                Error::Other(
                    "singleton SPR witness failed the GPR check; this indicates a solver bug"
                        .into(),
                )
            })?;
            best_f = w.f_value.to_f64();
            return finish(cm, Some(w), "singleton", true, cfg.starts, evals, best_f);
        }
        return finish(cm, None, "singleton", true, cfg.starts, evals, best_f);
    }

    finish(cm, None, "budget-exhausted", false, cfg.starts, evals, best_f)
}

/// Exact extremal value of a linear-rational measure (precision, recall,
/// f-score) over all policies: the extreme is attained at a vertex of the
/// frequency polytope, i.e. at an MD policy of the canonical model, so
/// enumeration below the cap is exact. MD policies whose measure is
/// undefined are skipped.
pub fn extremal_measure(
    m: &Mdp,
    q: &Query,
    kind: MeasureKind,
    sense: Sense,
    enumeration_cap: usize,
) -> Result<(MeasureValue, MdPolicy)> {
    if kind == MeasureKind::Mcc {
        return Err(Error::Other(
            "mcc is not linear-rational in the confusion entries; extremal values are not \
             supported"
                .into(),
        ));
    }
    let cm = canonical(m, q)?;
    if cm.mdp.n_state_action_pairs() > enumeration_cap {
        return Err(Error::Other(format!(
            "canonical model has {} state-action pairs, above the enumeration cap {}",
            cm.mdp.n_state_action_pairs(),
            enumeration_cap
        )));
    }
    let n = cm.mdp.n_states();
    let mut best: Option<(BigRational, MdPolicy)> = None;
    let mut sigma = MdPolicy { choice: vec![0; n] };
    loop {
        let policy: Policy<BigRational> = sigma.to_policy(&cm.mdp);
        let f = frequencies_of(&cm.mdp, &policy)?;
        let entries = crate::quality::ConfusionMatrix {
            tp: f.state[cm.tp].clone(),
            fp: f.state[cm.fp].clone(),
            fn_: f.state[cm.fn_].clone(),
            tn: f.state[cm.tn].clone(),
        };
        if let Some(MeasureValue::Exact(v)) = measure_exact(&entries, kind) {
            let better = match &best {
                None => true,
                Some((b, _)) => match sense {
                    Sense::Min => v < *b,
                    Sense::Max => v > *b,
                },
            };
            if better {
                best = Some((v, sigma.clone()));
            }
        }
        let mut s = 0;
        loop {
            if s == n {
                return best
                    .map(|(v, p)| (MeasureValue::Exact(v), p))
                    .ok_or_else(|| {
                        Error::MeasureUndefinedEverywhere(kind.name().to_string())
                    });
            }
            if cm.mdp.is_terminal(s) || cm.mdp.choices(s).len() <= 1 {
                s += 1;
                continue;
            }
            sigma.choice[s] += 1;
            if sigma.choice[s] < cm.mdp.choices(s).len() {
                break;
            }
            sigma.choice[s] = 0;
            s += 1;
        }
    }
}

/// Finite-memory restatement of a canonical witness on the original model:
/// play `tracking` until the first predictor state, commit there to the
/// maximizing branch with the realization weight (otherwise the minimizing
/// branch), then follow the committed MD policy forever.
#[derive(Debug, Clone)]
pub struct TwoMemoryPolicy {
    pub tracking: Policy<BigRational>,
    /// (original cause state, weight on the maximizing branch).
    pub commit_max: Vec<(usize, BigRational)>,
    pub committed_max: MdPolicy,
    pub committed_min: MdPolicy,
}

impl TwoMemoryPolicy {
    pub fn to_json(&self, m: &Mdp) -> Value {
        let md_table = |p: &MdPolicy| -> Value {
            let mut obj = serde_json::Map::new();
            for s in 0..m.n_states() {
                if m.is_terminal(s) {
                    continue;
                }
                let action = m.action_name(m.choices(s)[p.choice[s]].action);
                obj.insert(m.state_name(s).to_string(), Value::String(action.into()));
            }
            Value::Object(obj)
        };
        json!({
            "memory_states": ["tracking", "committed-max", "committed-min"],
            "update": "stay in `tracking` outside the predictor; on the first visit of a \
                       predictor state commit to `committed-max` with the listed weight and to \
                       `committed-min` otherwise; committed memories never change",
            "tracking": self.tracking.to_json(m),
            "commit_max": self.commit_max.iter().map(|(s, w)| json!({
                "state": m.state_name(*s),
                "weight": rational_to_string(w),
            })).collect::<Vec<_>>(),
            "committed_max": md_table(&self.committed_max),
            "committed_min": md_table(&self.committed_min),
        })
    }

    /// Exact SPR evaluation of this finite-memory policy on the original
    /// model, via the induced chain over (state, memory).
    pub fn verify_spr_on_original(&self, m: &Mdp, q: &Query) -> Result<WitnessReport> {
        let chain = self.product_chain(m, q)?;
        let product = &chain.mdp;
        let trivial = crate::model::uniform_policy(product);
        let table = reach_under_policy(product, &trivial, &chain.effect_states);
        let global = table.values[product.init()].clone();
        let predictor_mass = if chain.cause_states.is_empty() {
            BigRational::zero()
        } else {
            let targets: Vec<usize> = chain.cause_states.iter().map(|&(_, t)| t).collect();
            reach_under_policy(product, &trivial, &targets).values[product.init()].clone()
        };

        let reachable = graph::reachable_from(product, &[product.init()]);
        let mut per_cause = Vec::new();
        let mut any_reached = false;
        let mut all_raised = true;
        for &(orig, tracked) in &chain.cause_states {
            let reached = reachable.contains(&tracked);
            let conditional = reached.then(|| table.values[tracked].clone());
            if let Some(cond) = &conditional {
                any_reached = true;
                if *cond <= global {
                    all_raised = false;
                }
            }
            per_cause.push(CauseCheck {
                name: m.state_name(orig).to_string(),
                reached,
                conditional,
            });
        }
        let satisfied = any_reached && all_raised;
        Ok(WitnessReport {
            mode: PrMode::Spr,
            satisfied,
            global_effect: global,
            predictor_mass,
            per_cause,
            f_value: None,
            reason: if satisfied {
                None
            } else {
                Some("finite-memory witness fails (R) or (S) on the original model".into())
            },
        })
    }

    /// The Markov chain induced on (state, memory) triples. Memory 0 tracks,
    /// memories 1/2 follow the committed extremal MD policies.
    fn product_chain(&self, m: &Mdp, q: &Query) -> Result<ProductChain> {
        let n = m.n_states();
        let name = |s: usize, mem: usize| format!("{}__m{}", m.state_name(s), mem);
        let mut b = MdpBuilder::new();
        for mem in 0..3 {
            for s in 0..n {
                b.state(&name(s, mem));
            }
        }
        b.init(&name(m.init(), 0));

        let commit: std::collections::HashMap<usize, &BigRational> = self
            .commit_max
            .iter()
            .map(|(s, w)| (*s, w))
            .collect();

        for s in 0..n {
            if m.is_terminal(s) {
                continue;
            }
            // Tracking memory.
            if q.predictor_contains(s) {
                let w = commit.get(&s).copied().cloned().unwrap_or_else(BigRational::zero);
                let mut acc: std::collections::BTreeMap<String, BigRational> =
                    std::collections::BTreeMap::new();
                if w.is_positive() {
                    let ch = &m.choices(s)[self.committed_max.choice[s]];
                    for (t, p) in &ch.succ {
                        *acc.entry(name(*t, 1)).or_insert_with(BigRational::zero) += &w * p;
                    }
                }
                let rest = BigRational::one() - &w;
                if rest.is_positive() {
                    let ch = &m.choices(s)[self.committed_min.choice[s]];
                    for (t, p) in &ch.succ {
                        *acc.entry(name(*t, 2)).or_insert_with(BigRational::zero) += &rest * p;
                    }
                }
                b.choice(&name(s, 0), "step", acc.into_iter().collect());
            } else {
                let mut acc: std::collections::BTreeMap<String, BigRational> =
                    std::collections::BTreeMap::new();
                for (c, ch) in m.choices(s).iter().enumerate() {
                    let weight = &self.tracking.row(s)[c];
                    if !weight.is_positive() {
                        continue;
                    }
                    for (t, p) in &ch.succ {
                        *acc.entry(name(*t, 0)).or_insert_with(BigRational::zero) += weight * p;
                    }
                }
                b.choice(&name(s, 0), "step", acc.into_iter().collect());
            }
            // Committed memories.
            for (mem, md) in [(1usize, &self.committed_max), (2usize, &self.committed_min)] {
                let ch = &m.choices(s)[md.choice[s]];
                let succ = ch
                    .succ
                    .iter()
                    .map(|(t, p)| (name(*t, mem), p.clone()))
                    .collect();
                b.choice(&name(s, mem), "step", succ);
            }
        }
        let mdp = b.build()?;
        let effect_states: Vec<usize> = q
            .effect
            .iter()
            .flat_map(|&e| (0..3).map(move |mem| (e, mem)))
            .map(|(e, mem)| mdp.state_id(&name(e, mem)).unwrap())
            .collect();
        let cause_states: Vec<(usize, usize)> = q
            .predictor
            .iter()
            .map(|&c| (c, mdp.state_id(&name(c, 0)).unwrap()))
            .collect();
        Ok(ProductChain {
            mdp,
            effect_states,
            cause_states,
        })
    }
}

struct ProductChain {
    mdp: Mdp,
    effect_states: Vec<usize>,
    /// (original cause state, product index of its tracking copy).
    cause_states: Vec<(usize, usize)>,
}

/// Restates a canonical-model witness as a two-memory policy on the
/// original model. Only emitted for MEC-free inputs, where canonical states
/// correspond one-to-one to surviving original states.
fn map_witness_to_original(
    m: &Mdp,
    q: &Query,
    cm: &CanonicalMdp,
    witness: &Policy<BigRational>,
) -> TwoMemoryPolicy {
    let committed_max = optimal_reach(m, &q.effect, Sense::Max).policy;
    let committed_min = optimal_reach(m, &q.effect, Sense::Min).policy;

    let mut tracking_rows: Vec<Vec<BigRational>> = Vec::with_capacity(m.n_states());
    for s in 0..m.n_states() {
        let k = m.choices(s).len();
        if k == 0 {
            tracking_rows.push(Vec::new());
            continue;
        }
        if q.predictor_contains(s) {
            // Unused in tracking memory: commitment happens on entry.
            tracking_rows.push(uniform_row(k));
            continue;
        }
        match cm.state_map[s] {
            Some(cs) if !cm.mdp.is_terminal(cs) => {
                // MEC-free: the canonical choices of a surviving non-cause
                // state are the original ones in order.
                tracking_rows.push(witness.row(cs).to_vec());
            }
            _ => tracking_rows.push(uniform_row(k)),
        }
    }

    let commit_max = cm
        .causes
        .iter()
        .map(|cause| {
            let w = match (cause.canonical, cause.choice_max) {
                (Some(cs), Some(cmax)) => witness.row(cs)[cmax].clone(),
                _ => BigRational::zero(),
            };
            (cause.original, w)
        })
        .collect();

    TwoMemoryPolicy {
        tracking: Policy::from_rows_unchecked(tracking_rows),
        commit_max,
        committed_max,
        committed_min,
    }
}

fn uniform_row(k: usize) -> Vec<BigRational> {
    vec![BigRational::new(1.into(), (k as i64).into()); k]
}
