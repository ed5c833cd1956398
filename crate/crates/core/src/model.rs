//! Core MDP and policy data types, text-format parsing, and structural
//! validation.
//!
//! A model is a finite set of states, a finite set of actions, an initial
//! state and a transition function mapping enabled (state, action) pairs to
//! exact rational distributions over states. A state with no enabled action
//! is terminal. Probabilities are kept as exact rationals throughout;
//! decimal input is converted exactly (`0.25` becomes `1/4`) so that the
//! strict inequalities evaluated downstream never suffer float rounding.

use std::collections::{HashMap, HashSet};
use std::fmt;

use num::{BigRational, One, Signed, Zero};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::num::{parse_rational, rational_to_string, Scalar};

/// One enabled action of a state together with its successor distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Choice {
    /// Index into [`Mdp::actions`].
    pub action: usize,
    /// Successor distribution; probabilities sum to exactly 1.
    pub succ: Vec<(usize, BigRational)>,
}

/// A state-action pair addressed by state index and position in the state's
/// choice list. The order of all pairs (states in input order, choices in
/// input order) fixes the coordinate layout of the policy polytope.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StAct {
    pub state: usize,
    pub choice: usize,
}

/// A finite Markov decision process.
#[derive(Debug, Clone)]
pub struct Mdp {
    states: Vec<String>,
    actions: Vec<String>,
    init: usize,
    choices: Vec<Vec<Choice>>,
    labels: Vec<Vec<String>>,
    state_index: HashMap<String, usize>,
}

impl PartialEq for Mdp {
    fn eq(&self, other: &Self) -> bool {
        self.states == other.states
            && self.actions == other.actions
            && self.init == other.init
            && self.choices == other.choices
            && self.labels == other.labels
    }
}

impl Mdp {
    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn init(&self) -> usize {
        self.init
    }

    pub fn state_name(&self, s: usize) -> &str {
        &self.states[s]
    }

    pub fn state_names(&self) -> &[String] {
        &self.states
    }

    pub fn action_name(&self, a: usize) -> &str {
        &self.actions[a]
    }

    pub fn actions(&self) -> &[String] {
        &self.actions
    }

    pub fn state_id(&self, name: &str) -> Option<usize> {
        self.state_index.get(name).copied()
    }

    pub fn choices(&self, s: usize) -> &[Choice] {
        &self.choices[s]
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.choices[s].is_empty()
    }

    pub fn terminal_states(&self) -> Vec<usize> {
        (0..self.n_states()).filter(|&s| self.is_terminal(s)).collect()
    }

    pub fn labels_of(&self, s: usize) -> &[String] {
        &self.labels[s]
    }

    /// All state-action pairs in polytope layout order.
    pub fn state_action_pairs(&self) -> Vec<StAct> {
        let mut out = Vec::new();
        for (s, cs) in self.choices.iter().enumerate() {
            for c in 0..cs.len() {
                out.push(StAct { state: s, choice: c });
            }
        }
        out
    }

    pub fn n_state_action_pairs(&self) -> usize {
        self.choices.iter().map(Vec::len).sum()
    }

    /// Resolves a user-facing name to a set of states. A name that matches a
    /// state is that state; a name that matches a label is every state
    /// carrying the label; matching both is ambiguous and rejected.
    pub fn resolve_state_set(&self, names: &[String]) -> Result<Vec<usize>> {
        let mut set = Vec::new();
        let mut seen = HashSet::new();
        for name in names {
            let as_state = self.state_id(name);
            let by_label: Vec<usize> = (0..self.n_states())
                .filter(|&s| self.labels[s].iter().any(|l| l == name))
                .collect();
            let resolved: Vec<usize> = match (as_state, by_label.is_empty()) {
                (Some(_), false) => {
                    return Err(Error::InvalidQuery(format!(
                        "`{name}` names both a state and a label"
                    )))
                }
                (Some(s), true) => vec![s],
                (None, false) => by_label,
                (None, true) => {
                    return Err(Error::UnknownState {
                        name: name.clone(),
                        context: "in a state-set argument".to_string(),
                    })
                }
            };
            for s in resolved {
                if seen.insert(s) {
                    set.push(s);
                }
            }
        }
        set.sort_unstable();
        Ok(set)
    }

    /// Serializes in the same JSON schema accepted by [`parse_model`].
    pub fn to_json(&self) -> Value {
        let mut transitions = Vec::new();
        for (s, cs) in self.choices.iter().enumerate() {
            for ch in cs {
                let mut to = Map::new();
                for (t, p) in &ch.succ {
                    to.insert(self.states[*t].clone(), Value::String(rational_to_string(p)));
                }
                transitions.push(json!({
                    "from": self.states[s].clone(),
                    "action": self.actions[ch.action].clone(),
                    "to": Value::Object(to),
                }));
            }
        }
        let mut doc = Map::new();
        doc.insert("states".into(), json!(self.states));
        doc.insert("init".into(), json!(self.states[self.init]));
        doc.insert("transitions".into(), Value::Array(transitions));
        if self.labels.iter().any(|l| !l.is_empty()) {
            let mut labels = Map::new();
            for (s, ls) in self.labels.iter().enumerate() {
                if !ls.is_empty() {
                    labels.insert(self.states[s].clone(), json!(ls));
                }
            }
            doc.insert("labels".into(), Value::Object(labels));
        }
        Value::Object(doc)
    }

    pub fn to_json_string(&self) -> String {
        self.to_json().to_string()
    }
}

/// Incremental construction of an [`Mdp`]; used by the parser, the model
/// transformations and tests.
#[derive(Debug, Default)]
pub struct MdpBuilder {
    states: Vec<String>,
    state_index: HashMap<String, usize>,
    actions: Vec<String>,
    action_index: HashMap<String, usize>,
    init: Option<String>,
    rows: Vec<(String, String, Vec<(String, BigRational)>)>,
    labels: HashMap<String, Vec<String>>,
}

impl MdpBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn state(&mut self, name: &str) -> &mut Self {
        if !self.state_index.contains_key(name) {
            self.state_index.insert(name.to_string(), self.states.len());
            self.states.push(name.to_string());
        }
        self
    }

    pub fn init(&mut self, name: &str) -> &mut Self {
        self.init = Some(name.to_string());
        self
    }

    pub fn choice(
        &mut self,
        from: &str,
        action: &str,
        succ: Vec<(String, BigRational)>,
    ) -> &mut Self {
        if !self.action_index.contains_key(action) {
            self.action_index
                .insert(action.to_string(), self.actions.len());
            self.actions.push(action.to_string());
        }
        self.rows
            .push((from.to_string(), action.to_string(), succ));
        self
    }

    pub fn label(&mut self, state: &str, label: &str) -> &mut Self {
        self.labels
            .entry(state.to_string())
            .or_default()
            .push(label.to_string());
        self
    }

    pub fn has_state(&self, name: &str) -> bool {
        self.state_index.contains_key(name)
    }

    pub fn build(self) -> Result<Mdp> {
        let init_name = self
            .init
            .ok_or_else(|| Error::Schema("missing `init` state".into()))?;
        let init = *self
            .state_index
            .get(&init_name)
            .ok_or_else(|| Error::UnknownState {
                name: init_name.clone(),
                context: "as `init`".into(),
            })?;

        let mut choices: Vec<Vec<Choice>> = vec![Vec::new(); self.states.len()];
        let mut seen_pairs = HashSet::new();
        for (from, action, succ) in self.rows {
            let s = *self.state_index.get(&from).ok_or_else(|| Error::UnknownState {
                name: from.clone(),
                context: "as a transition source".into(),
            })?;
            let a = self.action_index[&action];
            if !seen_pairs.insert((s, a)) {
                return Err(Error::DuplicateTransition {
                    state: from,
                    action,
                });
            }
            let mut dist = Vec::new();
            let mut sum = BigRational::zero();
            for (target, p) in succ {
                let t = *self
                    .state_index
                    .get(&target)
                    .ok_or_else(|| Error::UnknownState {
                        name: target.clone(),
                        context: format!("as a successor of `{from}` under `{action}`"),
                    })?;
                if !p.is_positive() {
                    return Err(Error::BadProbability(format!(
                        "P({from}, {action}, {target}) = {} must be positive",
                        rational_to_string(&p)
                    )));
                }
                if dist.iter().any(|(u, _)| *u == t) {
                    return Err(Error::Schema(format!(
                        "duplicate successor `{target}` for `{from}` under `{action}`"
                    )));
                }
                sum += &p;
                dist.push((t, p));
            }
            if !sum.is_one() {
                return Err(Error::DistributionSum {
                    state: from,
                    action,
                    sum: rational_to_string(&sum),
                });
            }
            dist.sort_by_key(|(t, _)| *t);
            choices[s].push(Choice { action: a, succ: dist });
        }

        let mut labels = vec![Vec::new(); self.states.len()];
        for (state, ls) in self.labels {
            let s = *self
                .state_index
                .get(&state)
                .ok_or_else(|| Error::UnknownState {
                    name: state,
                    context: "in `labels`".into(),
                })?;
            labels[s] = ls;
        }

        Ok(Mdp {
            states: self.states,
            actions: self.actions,
            init,
            choices,
            labels,
            state_index: self.state_index,
        })
    }
}

fn value_to_probability_text(v: &Value) -> Result<String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        // With `arbitrary_precision` the literal text of the number survives,
        // so decimals convert exactly.
        Value::Number(n) => Ok(n.to_string()),
        other => Err(Error::Schema(format!(
            "probability must be a string or number, got {other}"
        ))),
    }
}

/// Parses a model document in the JSON schema described in the crate docs.
pub fn parse_model(text: &str) -> Result<Mdp> {
    let doc: Value = serde_json::from_str(text).map_err(|e| Error::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let obj = doc
        .as_object()
        .ok_or_else(|| Error::Schema("top-level value must be an object".into()))?;

    let mut builder = MdpBuilder::new();

    let states = obj
        .get("states")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Schema("`states` must be an array of names".into()))?;
    for s in states {
        let name = s
            .as_str()
            .ok_or_else(|| Error::Schema("state names must be strings".into()))?;
        if builder.has_state(name) {
            return Err(Error::Schema(format!("duplicate state `{name}`")));
        }
        builder.state(name);
    }

    let init = obj
        .get("init")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::Schema("`init` must be a state name".into()))?;
    builder.init(init);

    let transitions = obj
        .get("transitions")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Schema("`transitions` must be an array".into()))?;
    for tr in transitions {
        let tr = tr
            .as_object()
            .ok_or_else(|| Error::Schema("each transition must be an object".into()))?;
        let from = tr
            .get("from")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Schema("transition missing `from`".into()))?;
        let action = tr
            .get("action")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Schema("transition missing `action`".into()))?;
        let to = tr
            .get("to")
            .and_then(Value::as_object)
            .ok_or_else(|| Error::Schema("transition missing `to` object".into()))?;
        let mut succ = Vec::new();
        for (target, p) in to {
            let prob = parse_rational(&value_to_probability_text(p)?)?;
            succ.push((target.clone(), prob));
        }
        builder.choice(from, action, succ);
    }

    if let Some(labels) = obj.get("labels") {
        let labels = labels
            .as_object()
            .ok_or_else(|| Error::Schema("`labels` must map states to tag arrays".into()))?;
        for (state, tags) in labels {
            let tags = tags
                .as_array()
                .ok_or_else(|| Error::Schema("label tags must be an array".into()))?;
            for t in tags {
                let tag = t
                    .as_str()
                    .ok_or_else(|| Error::Schema("label tags must be strings".into()))?;
                builder.label(state, tag);
            }
        }
    }

    builder.build()
}

/// A predictor/effect query: how well does reaching `predictor` predict
/// reaching `effect`?
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub predictor: Vec<usize>,
    pub effect: Vec<usize>,
}

impl Query {
    pub fn new(mut predictor: Vec<usize>, mut effect: Vec<usize>) -> Self {
        predictor.sort_unstable();
        predictor.dedup();
        effect.sort_unstable();
        effect.dedup();
        Query { predictor, effect }
    }

    pub fn from_names(m: &Mdp, predictor: &[String], effect: &[String]) -> Result<Self> {
        Ok(Query::new(
            m.resolve_state_set(predictor)?,
            m.resolve_state_set(effect)?,
        ))
    }

    pub fn predictor_contains(&self, s: usize) -> bool {
        self.predictor.binary_search(&s).is_ok()
    }

    pub fn effect_contains(&self, s: usize) -> bool {
        self.effect.binary_search(&s).is_ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

/// One validation finding; `validate_query` reports violations instead of
/// failing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub severity: Severity,
    pub code: &'static str,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{tag}[{}]: {}", self.code, self.message)
    }
}

impl Diagnostic {
    fn error(code: &'static str, message: String) -> Self {
        Diagnostic {
            severity: Severity::Error,
            code,
            message,
        }
    }

    fn warning(code: &'static str, message: String) -> Self {
        Diagnostic {
            severity: Severity::Warning,
            code,
            message,
        }
    }
}

/// Checks a query against a model. Returns an empty list iff the effect set
/// consists of terminal states, the predictor and effect are disjoint and
/// both are nonempty sets of model states. Warnings never make the list
/// nonempty on their own account — they are reported alongside.
pub fn validate_query(m: &Mdp, q: &Query) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    if q.predictor.is_empty() {
        out.push(Diagnostic::error(
            "empty-predictor",
            "the predictor set C is empty".into(),
        ));
    }
    if q.effect.is_empty() {
        out.push(Diagnostic::error(
            "empty-effect",
            "the effect set E is empty".into(),
        ));
    }
    for &s in &q.effect {
        if s >= m.n_states() {
            out.push(Diagnostic::error(
                "unknown-state",
                format!("effect state index {s} out of range"),
            ));
        } else if !m.is_terminal(s) {
            out.push(Diagnostic::error(
                "effect-not-terminal",
                format!("effect state `{}` is not terminal", m.state_name(s)),
            ));
        }
    }
    for &s in &q.predictor {
        if s >= m.n_states() {
            out.push(Diagnostic::error(
                "unknown-state",
                format!("predictor state index {s} out of range"),
            ));
        } else if q.effect_contains(s) {
            out.push(Diagnostic::error(
                "predictor-effect-intersect",
                format!("C and E intersect at `{}`", m.state_name(s)),
            ));
        }
    }
    if out.is_empty() {
        let reach = crate::graph::reachable_from(m, &[m.init()]);
        if !q.predictor.iter().any(|&c| reach.contains(&c)) {
            out.push(Diagnostic::warning(
                "predictor-unreachable",
                "no predictor state is reachable from init".into(),
            ));
        }
    }
    out
}

/// Model-level findings: unreachable states and end components are legal but
/// worth surfacing.
pub fn model_diagnostics(m: &Mdp) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let reach = crate::graph::reachable_from(m, &[m.init()]);
    for s in 0..m.n_states() {
        if !reach.contains(&s) {
            out.push(Diagnostic::warning(
                "unreachable-state",
                format!("state `{}` is unreachable from init", m.state_name(s)),
            ));
        }
    }
    let mecs = crate::graph::mec_decomposition(m);
    for mec in &mecs.mecs {
        let names: Vec<&str> = mec.states.iter().map(|&s| m.state_name(s)).collect();
        out.push(Diagnostic::warning(
            "end-component",
            format!(
                "maximal end component on {{{}}}; frequency-based analyses reject this model",
                names.join(", ")
            ),
        ));
    }
    out
}

pub fn has_errors(diags: &[Diagnostic]) -> bool {
    diags.iter().any(|d| d.severity == Severity::Error)
}

/// A memoryless randomized policy: one distribution over enabled actions per
/// non-terminal state. Rows are parallel to [`Mdp::choices`].
#[derive(Debug, Clone, PartialEq)]
pub struct Policy<S> {
    rows: Vec<Vec<S>>,
}

impl<S: Scalar> Policy<S> {
    /// Builds a policy from raw rows after checking shape, nonnegativity and
    /// row sums. Float rows may be off by up to 1e-12 and are renormalized;
    /// exact rows must sum to exactly one.
    pub fn from_rows(m: &Mdp, mut rows: Vec<Vec<S>>) -> Result<Self> {
        if rows.len() != m.n_states() {
            return Err(Error::InvalidPolicy(format!(
                "expected {} rows, got {}",
                m.n_states(),
                rows.len()
            )));
        }
        for (s, row) in rows.iter_mut().enumerate() {
            let k = m.choices(s).len();
            if row.len() != k {
                return Err(Error::InvalidPolicy(format!(
                    "state `{}` has {} enabled actions but the policy row has {}",
                    m.state_name(s),
                    k,
                    row.len()
                )));
            }
            if k == 0 {
                continue;
            }
            let mut sum = S::zero();
            for p in row.iter() {
                if *p < S::zero() {
                    return Err(Error::InvalidPolicy(format!(
                        "negative probability at state `{}`",
                        m.state_name(s)
                    )));
                }
                sum = sum + p.clone();
            }
            if S::EXACT {
                if sum != S::one() {
                    return Err(Error::InvalidPolicy(format!(
                        "probabilities at state `{}` do not sum to 1",
                        m.state_name(s)
                    )));
                }
            } else {
                let drift = (sum.to_f64() - 1.0).abs();
                if drift > 1e-12 {
                    return Err(Error::InvalidPolicy(format!(
                        "probabilities at state `{}` sum to {} (drift {drift:e} beyond 1e-12)",
                        m.state_name(s),
                        sum.to_f64()
                    )));
                }
                for p in row.iter_mut() {
                    *p = p.clone() / sum.clone();
                }
            }
        }
        Ok(Policy { rows })
    }

    /// Unchecked constructor for rows produced by internal code paths that
    /// already guarantee the invariants.
    pub(crate) fn from_rows_unchecked(rows: Vec<Vec<S>>) -> Self {
        Policy { rows }
    }

    pub fn row(&self, s: usize) -> &[S] {
        &self.rows[s]
    }

    pub fn rows(&self) -> &[Vec<S>] {
        &self.rows
    }

    pub fn prob(&self, p: StAct) -> &S {
        &self.rows[p.state][p.choice]
    }

    /// Actions with strictly positive probability at `s`.
    pub fn support(&self, s: usize) -> impl Iterator<Item = usize> + '_ {
        self.rows[s]
            .iter()
            .enumerate()
            .filter(|(_, p)| p.is_positive_value())
            .map(|(c, _)| c)
    }

    pub fn to_float(&self) -> Policy<f64> {
        Policy {
            rows: self
                .rows
                .iter()
                .map(|row| row.iter().map(Scalar::to_f64).collect())
                .collect(),
        }
    }
}

impl Policy<BigRational> {
    pub fn to_json(&self, m: &Mdp) -> Value {
        let mut doc = Map::new();
        for (s, row) in self.rows.iter().enumerate() {
            if row.is_empty() {
                continue;
            }
            let mut dist = Map::new();
            for (c, p) in row.iter().enumerate() {
                let action = m.action_name(m.choices(s)[c].action);
                dist.insert(action.to_string(), Value::String(rational_to_string(p)));
            }
            doc.insert(m.state_name(s).to_string(), Value::Object(dist));
        }
        Value::Object(doc)
    }
}

/// A policy tagged with its arithmetic representation.
#[derive(Debug, Clone, PartialEq)]
pub enum MrPolicy {
    Exact(Policy<BigRational>),
    Float(Policy<f64>),
}

impl MrPolicy {
    pub fn to_float(&self) -> Policy<f64> {
        match self {
            MrPolicy::Exact(p) => p.to_float(),
            MrPolicy::Float(p) => p.clone(),
        }
    }

    pub fn as_exact(&self) -> Option<&Policy<BigRational>> {
        match self {
            MrPolicy::Exact(p) => Some(p),
            MrPolicy::Float(_) => None,
        }
    }
}

/// The uniform policy: each non-terminal state distributes evenly over its
/// enabled actions, as exact rationals.
pub fn uniform_policy(m: &Mdp) -> Policy<BigRational> {
    let rows = m
        .choices
        .iter()
        .map(|cs| {
            let k = cs.len();
            (0..k)
                .map(|_| BigRational::new(1.into(), (k as i64).into()))
                .collect()
        })
        .collect();
    Policy { rows }
}

/// A memoryless deterministic policy: one enabled-action index per
/// non-terminal state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MdPolicy {
    pub choice: Vec<usize>,
}

impl MdPolicy {
    pub fn to_policy<S: Scalar>(&self, m: &Mdp) -> Policy<S> {
        let rows = m
            .choices
            .iter()
            .enumerate()
            .map(|(s, cs)| {
                (0..cs.len())
                    .map(|c| if c == self.choice[s] { S::one() } else { S::zero() })
                    .collect()
            })
            .collect();
        Policy { rows }
    }
}

/// Parses a policy document `{"state": {"action": "1/3", ...}, ...}`.
///
/// States with a single enabled action may be omitted; every state with a
/// genuine choice must be present.
pub fn parse_policy(text: &str, m: &Mdp) -> Result<Policy<BigRational>> {
    let doc: Value = serde_json::from_str(text).map_err(|e| Error::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let obj = doc
        .as_object()
        .ok_or_else(|| Error::InvalidPolicy("policy document must be an object".into()))?;

    let mut rows: Vec<Option<Vec<BigRational>>> = vec![None; m.n_states()];
    for (state, dist) in obj {
        let s = m.state_id(state).ok_or_else(|| Error::UnknownState {
            name: state.clone(),
            context: "in a policy document".into(),
        })?;
        if m.is_terminal(s) {
            return Err(Error::InvalidPolicy(format!(
                "state `{state}` is terminal and takes no action"
            )));
        }
        let dist = dist
            .as_object()
            .ok_or_else(|| Error::InvalidPolicy(format!("`{state}` must map to an object")))?;
        let mut row = vec![BigRational::zero(); m.choices(s).len()];
        for (action, p) in dist {
            let c = m
                .choices(s)
                .iter()
                .position(|ch| m.action_name(ch.action) == action)
                .ok_or_else(|| Error::UnknownAction {
                    name: action.clone(),
                    context: format!("(not enabled in state `{state}`)"),
                })?;
            row[c] = parse_rational(&value_to_probability_text(p)?)?;
        }
        rows[s] = Some(row);
    }

    let rows: Vec<Vec<BigRational>> = rows
        .into_iter()
        .enumerate()
        .map(|(s, row)| match row {
            Some(r) => Ok(r),
            None => {
                let k = m.choices(s).len();
                match k {
                    0 => Ok(Vec::new()),
                    1 => Ok(vec![BigRational::one()]),
                    _ => Err(Error::InvalidPolicy(format!(
                        "state `{}` has {} enabled actions but no distribution was given",
                        m.state_name(s),
                        k
                    ))),
                }
            }
        })
        .collect::<Result<_>>()?;

    Policy::from_rows(m, rows)
}
