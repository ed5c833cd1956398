//! Model transformations: the two-copy MDP (reaching the predictor becomes
//! plain reachability of designated copy-1 states), the canonical MDP
//! (cause states summarized by extremal actions, end components collapsed,
//! exactly four terminals TP/FP/FN/TN), and the star MDP family used by the
//! probability-raising checks.

use std::collections::BTreeMap;

use num::{BigRational, One, Signed, Zero};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::graph;
use crate::model::{has_errors, Mdp, MdpBuilder, Policy, Query, Severity};
use crate::num::{rational_to_string, Scalar};
use crate::solve::{optimal_reach, Sense};

pub const TP_NAME: &str = "__TP";
pub const FP_NAME: &str = "__FP";
pub const FN_NAME: &str = "__FN";
pub const TN_NAME: &str = "__TN";
pub const ALPHA_MIN: &str = "__alpha_min";
pub const ALPHA_MAX: &str = "__alpha_max";
pub const TAU: &str = "__tau";
pub const DELTA: &str = "__delta";
pub const SWITCH: &str = "__switch";

fn copy_name(name: &str, copy: u8) -> String {
    format!("{name}__c{copy}")
}

fn require_error_free(m: &Mdp, q: &Query) -> Result<()> {
    let diags = crate::model::validate_query(m, q);
    if has_errors(&diags) {
        let msgs: Vec<String> = diags
            .iter()
            .filter(|d| d.severity == Severity::Error)
            .map(|d| d.to_string())
            .collect();
        return Err(Error::InvalidQuery(msgs.join("; ")));
    }
    Ok(())
}

/// The two-copy MDP: copy 0 until the predictor is hit, then a forced switch
/// into copy 1. Confusion-matrix entries become reachability probabilities
/// of the designated sets.
#[derive(Debug, Clone)]
pub struct TwoCopyMdp {
    pub mdp: Mdp,
    /// Product state -> (original state, copy).
    pub origin: Vec<(usize, u8)>,
    /// (original state, copy) -> product state, when kept.
    pub embed: Vec<[Option<usize>; 2]>,
    /// Predictor states present in copy 0 (each has only the switch action).
    pub c0: Vec<usize>,
    /// Predictor copies in copy 1 (entry points after the switch).
    pub c1: Vec<usize>,
    pub e0: Vec<usize>,
    pub e1: Vec<usize>,
}

impl TwoCopyMdp {
    /// Interprets a policy of the original model on the product: both copies
    /// mimic it, switch states have a single action.
    pub fn map_policy<S: Scalar>(&self, x: &Policy<S>) -> Policy<S> {
        let rows = self
            .origin
            .iter()
            .enumerate()
            .map(|(p, &(s, _))| {
                if self.mdp.choices(p).is_empty() {
                    Vec::new()
                } else if self.mdp.choices(p).len() == 1
                    && self.mdp.action_name(self.mdp.choices(p)[0].action) == SWITCH
                {
                    vec![S::one()]
                } else {
                    x.row(s).to_vec()
                }
            })
            .collect();
        Policy::from_rows_unchecked(rows)
    }

    /// The copy-1 state a first visit of cause `c` (original index) leads to.
    pub fn switch_target(&self, c_original: usize) -> Option<usize> {
        self.embed[c_original][1]
    }

    pub fn mapping_json(&self) -> Value {
        let mut states = Map::new();
        for (p, &(s, copy)) in self.origin.iter().enumerate() {
            states.insert(
                self.mdp.state_name(p).to_string(),
                json!({"original": copy_source_name(&self.mdp, p, s), "copy": copy}),
            );
        }
        Value::Object(states)
    }
}

fn copy_source_name(product: &Mdp, p: usize, _s: usize) -> String {
    let name = product.state_name(p);
    name.trim_end_matches("__c0")
        .trim_end_matches("__c1")
        .to_string()
}

/// Builds the two-copy MDP of `m` with respect to the predictor of `q`.
/// States unreachable in the product are pruned. An empty predictor yields
/// copy 0 alone (the identity construction).
pub fn two_copy(m: &Mdp, q: &Query) -> Result<TwoCopyMdp> {
    for &e in &q.effect {
        if !m.is_terminal(e) {
            return Err(Error::InvalidQuery(format!(
                "effect state `{}` is not terminal",
                m.state_name(e)
            )));
        }
    }
    if let Some(&s) = q.predictor.iter().find(|s| q.effect_contains(**s)) {
        return Err(Error::InvalidQuery(format!(
            "C and E intersect at `{}`",
            m.state_name(s)
        )));
    }
    if m.actions().iter().any(|a| a == SWITCH) {
        return Err(Error::NameCollision(SWITCH.into()));
    }

    let n = m.n_states();
    let is_cause: Vec<bool> = (0..n).map(|s| q.predictor_contains(s)).collect();

    // Forward closure over both copies.
    let mut reach = vec![[false; 2]; n];
    let mut stack: Vec<(usize, u8)> = vec![(m.init(), 0)];
    reach[m.init()][0] = true;
    while let Some((s, copy)) = stack.pop() {
        if copy == 0 && is_cause[s] {
            if !reach[s][1] {
                reach[s][1] = true;
                stack.push((s, 1));
            }
            continue;
        }
        for ch in m.choices(s) {
            for &(t, _) in &ch.succ {
                if !reach[t][copy as usize] {
                    reach[t][copy as usize] = true;
                    stack.push((t, copy as u8));
                }
            }
        }
    }

    let mut builder = MdpBuilder::new();
    let mut embed: Vec<[Option<usize>; 2]> = vec![[None; 2]; n];
    let mut origin: Vec<(usize, u8)> = Vec::new();
    for copy in 0..2u8 {
        for s in 0..n {
            if reach[s][copy as usize] {
                builder.state(&copy_name(m.state_name(s), copy));
                embed[s][copy as usize] = Some(origin.len());
                origin.push((s, copy));
            }
        }
    }
    builder.init(&copy_name(m.state_name(m.init()), 0));

    for &(s, copy) in &origin {
        let from = copy_name(m.state_name(s), copy);
        if copy == 0 && is_cause[s] {
            builder.choice(
                &from,
                SWITCH,
                vec![(copy_name(m.state_name(s), 1), BigRational::one())],
            );
            continue;
        }
        for ch in m.choices(s) {
            let succ = ch
                .succ
                .iter()
                .map(|(t, p)| (copy_name(m.state_name(*t), copy), p.clone()))
                .collect();
            builder.choice(&from, m.action_name(ch.action), succ);
        }
    }
    let mdp = builder.build()?;

    let collect = |set: &[usize], copy: usize| -> Vec<usize> {
        set.iter().filter_map(|&s| embed[s][copy]).collect()
    };
    Ok(TwoCopyMdp {
        c0: collect(&q.predictor, 0),
        c1: collect(&q.predictor, 1),
        e0: collect(&q.effect, 0),
        e1: collect(&q.effect, 1),
        mdp,
        origin,
        embed,
    })
}

/// Extremal one-step summary of a cause state in the canonical MDP.
#[derive(Debug, Clone)]
pub struct CauseInfo {
    pub original: usize,
    /// Canonical state index; `None` when the cause was pruned as
    /// unreachable after step (i).
    pub canonical: Option<usize>,
    pub name: String,
    pub p_min: BigRational,
    pub p_max: BigRational,
    /// Choice index of `__alpha_min` in the canonical state.
    pub choice_min: usize,
    /// Choice index of `__alpha_max`; `None` when both extremes coincide and
    /// only `__alpha_min` is emitted.
    pub choice_max: Option<usize>,
}

/// The canonical MDP of Definition-12 shape: cause states carry only the
/// extremal actions into TP/FP, end components are collapsed with an escape
/// action into TN, and TP/FP/FN/TN are the only terminals.
#[derive(Debug, Clone)]
pub struct CanonicalMdp {
    pub mdp: Mdp,
    pub causes: Vec<CauseInfo>,
    /// max over all cause states of `p_max`.
    pub p_star: BigRational,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    /// Original state -> canonical state (terminals fold into FN/TN, MEC
    /// members onto their representative, pruned states to `None`).
    pub state_map: Vec<Option<usize>>,
    /// Original states dropped as unreachable after step (i).
    pub pruned: Vec<usize>,
    pub had_mecs: bool,
}

impl CanonicalMdp {
    /// E' = {TP, FN}: reaching the effect in the canonical model.
    pub fn effect(&self) -> Vec<usize> {
        let mut v = vec![self.tp, self.fn_];
        v.sort_unstable();
        v
    }

    /// Canonical cause states (indices into the canonical model).
    pub fn cause_states(&self) -> Vec<usize> {
        self.causes.iter().filter_map(|c| c.canonical).collect()
    }

    pub fn cause_by_canonical(&self, state: usize) -> Option<&CauseInfo> {
        self.causes.iter().find(|c| c.canonical == Some(state))
    }

    /// The query solved on the canonical model: the surviving causes against
    /// E' = {TP, FN}.
    pub fn canonical_query(&self) -> Query {
        Query::new(self.cause_states(), self.effect())
    }

    pub fn mapping_json(&self, original: &Mdp) -> Value {
        let mut state_map = Map::new();
        for (s, target) in self.state_map.iter().enumerate() {
            state_map.insert(
                original.state_name(s).to_string(),
                match target {
                    Some(t) => Value::String(self.mdp.state_name(*t).to_string()),
                    None => Value::Null,
                },
            );
        }
        let causes: Vec<Value> = self
            .causes
            .iter()
            .map(|c| {
                json!({
                    "state": c.name,
                    "p_min": rational_to_string(&c.p_min),
                    "p_max": rational_to_string(&c.p_max),
                    "kept": c.canonical.is_some(),
                })
            })
            .collect();
        json!({
            "state_map": Value::Object(state_map),
            "causes": causes,
            "p_star": rational_to_string(&self.p_star),
            "pruned": self
                .pruned
                .iter()
                .map(|&s| original.state_name(s).to_string())
                .collect::<Vec<_>>(),
            "had_mecs": self.had_mecs,
        })
    }
}

/// Definition-12 canonical construction: (i) replace cause-state behavior by
/// the extremal actions, (ii) collapse maximal end components, (iii) merge
/// terminals into the four designated ones. Unreachable fragments are pruned
/// after step (i) and recorded.
pub fn canonical(m: &Mdp, q: &Query) -> Result<CanonicalMdp> {
    require_error_free(m, q)?;
    for reserved in [TP_NAME, FP_NAME, FN_NAME, TN_NAME] {
        if m.state_id(reserved).is_some() {
            return Err(Error::NameCollision(reserved.into()));
        }
    }
    for reserved in [ALPHA_MIN, ALPHA_MAX, TAU] {
        if m.actions().iter().any(|a| a == reserved) {
            return Err(Error::NameCollision(reserved.into()));
        }
    }

    let n = m.n_states();
    let min_table = optimal_reach(m, &q.effect, Sense::Min);
    let max_table = optimal_reach(m, &q.effect, Sense::Max);

    // Step (i) on an implicit intermediate model: cause states now lead only
    // to TP/FP. Reachability for pruning is computed on that intermediate.
    let is_cause: Vec<bool> = (0..n).map(|s| q.predictor_contains(s)).collect();
    let mut reach = vec![false; n];
    let mut stack = vec![m.init()];
    reach[m.init()] = true;
    while let Some(s) = stack.pop() {
        if is_cause[s] {
            continue; // successors are the fresh terminals only
        }
        for ch in m.choices(s) {
            for &(t, _) in &ch.succ {
                if !reach[t] {
                    reach[t] = true;
                    stack.push(t);
                }
            }
        }
    }
    let pruned: Vec<usize> = (0..n).filter(|&s| !reach[s]).collect();

    // Step (ii): MEC decomposition of the reachable intermediate part. Cause
    // states cannot lie in an end component (their actions leak to fresh
    // terminals), so the decomposition of the restricted original suffices.
    let restricted = restrict_for_mecs(m, &reach, &is_cause)?;
    let mecs = graph::mec_decomposition(&restricted);
    let had_mecs = !mecs.is_empty();
    // Representative: smallest state index of the MEC.
    let mut rep_of: Vec<usize> = (0..n).collect();
    let mut is_rep_mec = vec![false; n];
    for mec in &mecs.mecs {
        let rep = mec.states[0];
        is_rep_mec[rep] = true;
        for &s in &mec.states {
            rep_of[s] = rep;
        }
    }
    let mec_index_of = |s: usize| mecs.membership[s];

    // Which original states survive as canonical states: reachable,
    // non-terminal in the intermediate (causes count as non-terminal), and
    // either outside every MEC or their MEC's representative.
    let survives = |s: usize| -> bool {
        reach[s]
            && (is_cause[s] || !m.is_terminal(s))
            && (mec_index_of(s).is_none() || rep_of[s] == s)
    };

    let mut builder = MdpBuilder::new();
    for s in 0..n {
        if survives(s) {
            builder.state(m.state_name(s));
        }
    }
    for name in [TP_NAME, FP_NAME, FN_NAME, TN_NAME] {
        builder.state(name);
    }

    // Terminal folding for step (iii).
    let canon_name = |t: usize| -> String {
        let t = rep_of[t];
        if q.effect_contains(t) {
            FN_NAME.to_string()
        } else if m.is_terminal(t) && !is_cause[t] {
            TN_NAME.to_string()
        } else {
            m.state_name(t).to_string()
        }
    };

    if q.effect_contains(m.init()) {
        builder.init(FN_NAME);
    } else if m.is_terminal(m.init()) && !is_cause[m.init()] {
        builder.init(TN_NAME);
    } else {
        builder.init(&canon_name(m.init()));
    }

    for s in 0..n {
        if !survives(s) || is_cause[s] {
            continue;
        }
        let from = m.state_name(s);
        if let Some(mec_id) = mec_index_of(s) {
            // Representative of a MEC: re-target all external actions of the
            // component, then add the escape action into TN.
            let mec = &mecs.mecs[mec_id];
            let single = mec.states.len() == 1;
            let internal: std::collections::HashSet<(usize, usize)> = mec
                .pairs
                .iter()
                .map(|p| (p.state, p.choice))
                .collect();
            for &u in &mec.states {
                for (c, ch) in m.choices(u).iter().enumerate() {
                    if internal.contains(&(u, c)) {
                        continue;
                    }
                    let action = if single {
                        m.action_name(ch.action).to_string()
                    } else {
                        format!("{}__{}", m.state_name(u), m.action_name(ch.action))
                    };
                    builder.choice(from, &action, merge_succ(ch, &canon_name));
                }
            }
            builder.choice(from, TAU, vec![(TN_NAME.to_string(), BigRational::one())]);
        } else {
            for ch in m.choices(s) {
                builder.choice(from, m.action_name(ch.action), merge_succ(ch, &canon_name));
            }
        }
    }

    // Step (i) rows for surviving cause states.
    let mut causes: Vec<CauseInfo> = Vec::new();
    for &c in &q.predictor {
        let p_min = min_table.values[c].clone();
        let p_max = max_table.values[c].clone();
        let kept = survives(c);
        if kept {
            let from = m.state_name(c);
            builder.choice(from, ALPHA_MIN, tp_fp_row(&p_min));
            if p_max != p_min {
                builder.choice(from, ALPHA_MAX, tp_fp_row(&p_max));
            }
        }
        causes.push(CauseInfo {
            original: c,
            canonical: None, // filled in below once indices are known
            name: m.state_name(c).to_string(),
            choice_min: 0,
            choice_max: if p_max != p_min { Some(1) } else { None },
            p_min,
            p_max,
        });
    }

    let mdp = builder.build()?;
    let tp = mdp.state_id(TP_NAME).unwrap();
    let fp = mdp.state_id(FP_NAME).unwrap();
    let fn_ = mdp.state_id(FN_NAME).unwrap();
    let tn = mdp.state_id(TN_NAME).unwrap();

    for cause in &mut causes {
        if survives(cause.original) {
            cause.canonical = mdp.state_id(m.state_name(cause.original));
        }
    }

    let mut state_map: Vec<Option<usize>> = vec![None; n];
    for s in 0..n {
        if !reach[s] {
            continue;
        }
        state_map[s] = mdp.state_id(&canon_name(s));
    }

    let p_star = causes
        .iter()
        .map(|c| c.p_max.clone())
        .max()
        .unwrap_or_else(BigRational::zero);

    Ok(CanonicalMdp {
        mdp,
        causes,
        p_star,
        tp,
        fp,
        fn_,
        tn,
        state_map,
        pruned,
        had_mecs,
    })
}

fn tp_fp_row(p: &BigRational) -> Vec<(String, BigRational)> {
    let mut row = Vec::new();
    if p.is_positive() {
        row.push((TP_NAME.to_string(), p.clone()));
    }
    let rest = BigRational::one() - p;
    if rest.is_positive() {
        row.push((FP_NAME.to_string(), rest));
    }
    row
}

fn merge_succ(
    ch: &crate::model::Choice,
    canon_name: &dyn Fn(usize) -> String,
) -> Vec<(String, BigRational)> {
    let mut acc: BTreeMap<String, BigRational> = BTreeMap::new();
    for (t, p) in &ch.succ {
        *acc.entry(canon_name(*t)).or_insert_with(BigRational::zero) += p;
    }
    acc.into_iter().collect()
}

/// Sub-model used only to find the end components of the intermediate model:
/// unreachable states are cut off and cause states lose their actions
/// (their fresh actions lead out of every component anyway).
fn restrict_for_mecs(m: &Mdp, reach: &[bool], is_cause: &[bool]) -> Result<Mdp> {
    let mut b = MdpBuilder::new();
    for s in 0..m.n_states() {
        b.state(m.state_name(s));
    }
    b.init(m.state_name(m.init()));
    for s in 0..m.n_states() {
        if !reach[s] || is_cause[s] {
            continue;
        }
        for ch in m.choices(s) {
            let succ = ch
                .succ
                .iter()
                .map(|(t, p)| (m.state_name(*t).to_string(), p.clone()))
                .collect();
            b.choice(m.state_name(s), m.action_name(ch.action), succ);
        }
    }
    b.build()
}

/// The star MDP `M_p`: every cause state keeps a single action leading to TP
/// with probability `max(p, p_min)`. `star(cm, p_star)` is the model used by
/// the SPR characterization.
#[derive(Debug, Clone)]
pub struct StarMdp {
    pub mdp: Mdp,
    pub p: BigRational,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl StarMdp {
    pub fn effect(&self) -> Vec<usize> {
        let mut v = vec![self.tp, self.fn_];
        v.sort_unstable();
        v
    }
}

pub fn star(cm: &CanonicalMdp, p: &BigRational) -> Result<StarMdp> {
    if !p.is_positive() || p > &cm.p_star {
        return Err(Error::StarParameter {
            p: rational_to_string(p),
            p_star: rational_to_string(&cm.p_star),
        });
    }
    if cm.mdp.actions().iter().any(|a| a == DELTA) {
        return Err(Error::NameCollision(DELTA.into()));
    }
    let m = &cm.mdp;
    let mut b = MdpBuilder::new();
    for s in 0..m.n_states() {
        b.state(m.state_name(s));
    }
    b.init(m.state_name(m.init()));
    for s in 0..m.n_states() {
        let from = m.state_name(s);
        if let Some(cause) = cm.cause_by_canonical(s) {
            let weight = if cause.p_min > *p {
                cause.p_min.clone()
            } else {
                p.clone()
            };
            let mut row = Vec::new();
            if weight.is_positive() {
                row.push((m.state_name(cm.tp).to_string(), weight.clone()));
            }
            let rest = BigRational::one() - &weight;
            if rest.is_positive() {
                row.push((m.state_name(cm.fp).to_string(), rest));
            }
            b.choice(from, DELTA, row);
            continue;
        }
        for ch in m.choices(s) {
            let succ = ch
                .succ
                .iter()
                .map(|(t, q)| (m.state_name(*t).to_string(), q.clone()))
                .collect();
            b.choice(from, m.action_name(ch.action), succ);
        }
    }
    Ok(StarMdp {
        mdp: b.build()?,
        p: p.clone(),
        tp: cm.tp,
        fp: cm.fp,
        fn_: cm.fn_,
        tn: cm.tn,
    })
}
