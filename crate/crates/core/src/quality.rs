//! Confusion matrices, the four quality measures, the policy polytope with
//! its volume, uniform policy sampling, Monte-Carlo averaging of measures,
//! and causal-volume estimation.
//!
//! All confusion entries are computed on the two-copy model, where they are
//! plain reachability probabilities:
//! tp = Pr(<>E1), fn = Pr(<>E0), fp = Pr(<>C0) - tp, tn = the remainder.
//!
//! Monte-Carlo runs are deterministic for a fixed seed independently of the
//! thread count: samples are drawn in fixed blocks, each block owns a ChaCha
//! stream derived from (seed, block index), and the block statistics are
//! reduced by a fixed pairwise tree.

use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use num::bigint::BigInt;
use num::{BigRational, One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::graph;
use crate::model::{has_errors, validate_query, Mdp, Policy, Query, Severity};
use crate::num::{exact_sqrt, rational_to_string, Scalar};
use crate::solve::reach_under_policy;
use crate::transform::{two_copy, TwoCopyMdp};

/// The four joint probabilities of reaching the predictor and the effect.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix<S> {
    pub tp: S,
    pub fp: S,
    pub fn_: S,
    pub tn: S,
}

impl<S: Scalar> ConfusionMatrix<S> {
    pub fn sum(&self) -> S {
        self.tp.clone() + self.fp.clone() + self.fn_.clone() + self.tn.clone()
    }

    pub fn to_float(&self) -> ConfusionMatrix<f64> {
        ConfusionMatrix {
            tp: self.tp.to_f64(),
            fp: self.fp.to_f64(),
            fn_: self.fn_.to_f64(),
            tn: self.tn.to_f64(),
        }
    }

    /// Probability of the effect regardless of the predictor.
    pub fn effect_probability(&self) -> S {
        self.tp.clone() + self.fn_.clone()
    }

    /// Probability of reaching the predictor at all.
    pub fn predictor_probability(&self) -> S {
        self.tp.clone() + self.fp.clone()
    }
}

impl ConfusionMatrix<BigRational> {
    pub fn to_json(&self) -> Value {
        json!({
            "tp": rational_to_string(&self.tp),
            "fp": rational_to_string(&self.fp),
            "fn": rational_to_string(&self.fn_),
            "tn": rational_to_string(&self.tn),
        })
    }
}

/// Prebuilt two-copy model for repeated confusion evaluations under varying
/// policies (the Monte-Carlo hot path).
pub struct ConfusionEngine {
    tc: TwoCopyMdp,
}

impl ConfusionEngine {
    pub fn new(m: &Mdp, q: &Query) -> Result<Self> {
        Ok(ConfusionEngine {
            tc: two_copy(m, q)?,
        })
    }

    pub fn two_copy(&self) -> &TwoCopyMdp {
        &self.tc
    }

    /// Lemma-4 style evaluation with three reachability solves. The per-cause
    /// sum over first visits collapses to Pr(<>C0) - Pr(<>E1).
    pub fn eval<S: Scalar>(&self, x: &Policy<S>) -> ConfusionMatrix<S> {
        let m = &self.tc.mdp;
        let init = m.init();
        let xp = self.tc.map_policy(x);
        let tp = reach_under_policy(m, &xp, &self.tc.e1).values[init].clone();
        let fn_ = reach_under_policy(m, &xp, &self.tc.e0).values[init].clone();
        let reach_c = if self.tc.c0.is_empty() {
            S::zero()
        } else {
            reach_under_policy(m, &xp, &self.tc.c0).values[init].clone()
        };
        let fp = reach_c - tp.clone();
        let tn = S::one() - tp.clone() - fp.clone() - fn_.clone();
        ConfusionMatrix { tp, fp, fn_, tn }
    }
}

/// Confusion matrix of a single policy; exact when model and policy are.
pub fn confusion<S: Scalar>(m: &Mdp, q: &Query, x: &Policy<S>) -> Result<ConfusionMatrix<S>> {
    Ok(ConfusionEngine::new(m, q)?.eval(x))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasureKind {
    Precision,
    Recall,
    Fscore,
    Mcc,
}

impl MeasureKind {
    pub const ALL: [MeasureKind; 4] = [
        MeasureKind::Precision,
        MeasureKind::Recall,
        MeasureKind::Fscore,
        MeasureKind::Mcc,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            MeasureKind::Precision => "precision",
            MeasureKind::Recall => "recall",
            MeasureKind::Fscore => "fscore",
            MeasureKind::Mcc => "mcc",
        }
    }
}

impl FromStr for MeasureKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "precision" => Ok(MeasureKind::Precision),
            "recall" => Ok(MeasureKind::Recall),
            "fscore" | "f-score" | "f1" => Ok(MeasureKind::Fscore),
            "mcc" => Ok(MeasureKind::Mcc),
            other => Err(Error::Other(format!("unknown measure `{other}`"))),
        }
    }
}

/// Float measure; `None` when the defining denominator vanishes
/// (MCC instead takes the value 0 by convention).
pub fn measure_f64(cm: &ConfusionMatrix<f64>, kind: MeasureKind) -> Option<f64> {
    let ConfusionMatrix { tp, fp, fn_, tn } = *cm;
    match kind {
        MeasureKind::Precision => {
            let d = tp + fp;
            (d != 0.0).then(|| tp / d)
        }
        MeasureKind::Recall => {
            let d = tp + fn_;
            (d != 0.0).then(|| tp / d)
        }
        MeasureKind::Fscore => {
            let d = 2.0 * tp + fp + fn_;
            (d != 0.0).then(|| 2.0 * tp / d)
        }
        MeasureKind::Mcc => {
            let f = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
            if f == 0.0 {
                Some(0.0)
            } else {
                Some((tp * tn - fp * fn_) / f.sqrt())
            }
        }
    }
}

/// Exact measure value; MCC falls back to a float when the square root is
/// irrational.
#[derive(Debug, Clone, PartialEq)]
pub enum MeasureValue {
    Exact(BigRational),
    Approx(f64),
}

impl MeasureValue {
    pub fn to_f64(&self) -> f64 {
        match self {
            MeasureValue::Exact(r) => r.to_f64(),
            MeasureValue::Approx(x) => *x,
        }
    }

    /// Canonical text: the exact fraction when available.
    pub fn display(&self) -> String {
        match self {
            MeasureValue::Exact(r) => rational_to_string(r),
            MeasureValue::Approx(x) => format!("{x}"),
        }
    }
}

pub fn measure_exact(
    cm: &ConfusionMatrix<BigRational>,
    kind: MeasureKind,
) -> Option<MeasureValue> {
    let tp = &cm.tp;
    let fp = &cm.fp;
    let fn_ = &cm.fn_;
    let tn = &cm.tn;
    match kind {
        MeasureKind::Precision => {
            let d = tp + fp;
            (!d.is_zero()).then(|| MeasureValue::Exact(tp / d))
        }
        MeasureKind::Recall => {
            let d = tp + fn_;
            (!d.is_zero()).then(|| MeasureValue::Exact(tp / d))
        }
        MeasureKind::Fscore => {
            let d = tp + tp + fp + fn_;
            (!d.is_zero()).then(|| MeasureValue::Exact((tp + tp) / d))
        }
        MeasureKind::Mcc => {
            let factors = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
            if factors.is_zero() {
                return Some(MeasureValue::Exact(BigRational::zero()));
            }
            let numer = tp * tn - fp * fn_;
            Some(match exact_sqrt(&factors) {
                Some(root) => MeasureValue::Exact(numer / root),
                None => MeasureValue::Approx(numer.to_f64() / factors.to_f64().sqrt()),
            })
        }
    }
}

/// The product-of-simplices description of the MR policy polytope.
#[derive(Debug, Clone, PartialEq)]
pub struct PolytopeSpec {
    /// (state, n(s)) with n(s) = |Act(s)| - 1, for every non-terminal state.
    pub entries: Vec<(usize, usize)>,
    /// Sum of the simplex dimensions: |StAct| - |S \ T|.
    pub dimension: usize,
    /// Product of 1/n(s)! as an exact rational.
    pub volume: BigRational,
    pub num_states: usize,
}

pub fn polytope(m: &Mdp) -> PolytopeSpec {
    let mut entries = Vec::new();
    let mut dimension = 0usize;
    let mut denom = BigInt::one();
    for s in 0..m.n_states() {
        let k = m.choices(s).len();
        if k == 0 {
            continue;
        }
        entries.push((s, k - 1));
        dimension += k - 1;
        denom *= factorial(k - 1);
    }
    PolytopeSpec {
        entries,
        dimension,
        volume: BigRational::new(BigInt::one(), denom),
        num_states: m.n_states(),
    }
}

fn factorial(n: usize) -> BigInt {
    (2..=n).fold(BigInt::one(), |acc, k| acc * BigInt::from(k))
}

/// One uniform sample from the polytope: per state, a uniform point of the
/// action simplex via sorted uniform gaps (symmetric Dirichlet with unit
/// parameters).
pub fn sample_policy<R: Rng + ?Sized>(spec: &PolytopeSpec, rng: &mut R) -> Policy<f64> {
    let mut rows: Vec<Vec<f64>> = vec![Vec::new(); spec.num_states];
    for &(s, n) in &spec.entries {
        let k = n + 1;
        if k == 1 {
            rows[s] = vec![1.0];
            continue;
        }
        let mut cuts: Vec<f64> = (0..k - 1).map(|_| rng.random::<f64>()).collect();
        cuts.sort_unstable_by(f64::total_cmp);
        let mut row = Vec::with_capacity(k);
        let mut prev = 0.0;
        for &c in &cuts {
            row.push(c - prev);
            prev = c;
        }
        row.push(1.0 - prev);
        rows[s] = row;
    }
    Policy::from_rows_unchecked(rows)
}

/// A Monte-Carlo estimate with enough context to reproduce it.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub estimate: f64,
    pub stderr: f64,
    pub samples: u64,
    pub skipped: u64,
    pub seed: u64,
    pub seconds: f64,
    pub warnings: Vec<String>,
}

impl EstimateReport {
    /// Equality on everything except the wall-time field.
    pub fn same_modulo_time(&self, other: &EstimateReport) -> bool {
        self.estimate == other.estimate
            && self.stderr == other.stderr
            && self.samples == other.samples
            && self.skipped == other.skipped
            && self.seed == other.seed
            && self.warnings == other.warnings
    }

    pub fn to_json(&self) -> Value {
        let mut v = json!({
            "estimate": self.estimate,
            "stderr": self.stderr,
            "samples": self.samples,
            "skipped": self.skipped,
            "seed": self.seed,
            "seconds": self.seconds,
        });
        if !self.warnings.is_empty() {
            v["warnings"] = json!(self.warnings);
        }
        v
    }
}

const BLOCK: u64 = 1024;

#[derive(Debug, Clone, Copy)]
struct BlockStats {
    sum: f64,
    sumsq: f64,
    n: u64,
    skipped: u64,
    min: f64,
    max: f64,
}

impl BlockStats {
    fn empty() -> Self {
        BlockStats {
            sum: 0.0,
            sumsq: 0.0,
            n: 0,
            skipped: 0,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        }
    }

    fn add(&mut self, v: f64) {
        self.sum += v;
        self.sumsq += v * v;
        self.n += 1;
        self.min = self.min.min(v);
        self.max = self.max.max(v);
    }

    fn merge(a: BlockStats, b: BlockStats) -> BlockStats {
        BlockStats {
            sum: a.sum + b.sum,
            sumsq: a.sumsq + b.sumsq,
            n: a.n + b.n,
            skipped: a.skipped + b.skipped,
            min: a.min.min(b.min),
            max: a.max.max(b.max),
        }
    }
}

fn pairwise_merge(blocks: &[BlockStats]) -> BlockStats {
    match blocks.len() {
        0 => BlockStats::empty(),
        1 => blocks[0],
        n => BlockStats::merge(
            pairwise_merge(&blocks[..n / 2]),
            pairwise_merge(&blocks[n / 2..]),
        ),
    }
}

fn run_block<F>(block: u64, total: u64, seed: u64, eval: &F) -> BlockStats
where
    F: Fn(&mut ChaCha8Rng) -> Option<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(block + 1);
    let start = block * BLOCK;
    let end = (start + BLOCK).min(total);
    let mut acc = BlockStats::empty();
    for _ in start..end {
        match eval(&mut rng) {
            Some(v) => acc.add(v),
            None => acc.skipped += 1,
        }
    }
    acc
}

/// Runs `total` evaluations across `threads` workers. The result is
/// bit-identical for any thread count: blocks own independent RNG streams
/// and the reduction tree is fixed.
fn mc_run<F>(total: u64, seed: u64, threads: usize, eval: F) -> BlockStats
where
    F: Fn(&mut ChaCha8Rng) -> Option<f64> + Sync,
{
    let blocks = total.div_ceil(BLOCK);
    let mut accs = vec![BlockStats::empty(); blocks as usize];
    let threads = threads.max(1);
    if threads == 1 || blocks <= 1 {
        for (b, slot) in accs.iter_mut().enumerate() {
            *slot = run_block(b as u64, total, seed, &eval);
        }
    } else {
        let next = AtomicU64::new(0);
        let eval_ref = &eval;
        let results: Vec<Vec<(u64, BlockStats)>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..threads)
                .map(|_| {
                    let next = &next;
                    scope.spawn(move || {
                        let mut mine = Vec::new();
                        loop {
                            let b = next.fetch_add(1, Ordering::Relaxed);
                            if b >= blocks {
                                return mine;
                            }
                            mine.push((b, run_block(b, total, seed, eval_ref)));
                        }
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        for worker in results {
            for (b, acc) in worker {
                accs[b as usize] = acc;
            }
        }
    }
    pairwise_merge(&accs)
}

fn finish_report(
    stats: BlockStats,
    total: u64,
    seed: u64,
    started: Instant,
    mut warnings: Vec<String>,
) -> EstimateReport {
    let n = stats.n;
    let (estimate, stderr) = if n == 0 {
        (f64::NAN, f64::NAN)
    } else if stats.min == stats.max {
        // Constant integrand (e.g. a Markov chain has a single policy).
        (stats.min, 0.0)
    } else {
        let mean = stats.sum / n as f64;
        let var = ((stats.sumsq - stats.sum * stats.sum / n as f64) / (n as f64 - 1.0)).max(0.0);
        (mean, (var / n as f64).sqrt())
    };
    if stats.skipped * 100 > total {
        warnings.push(format!(
            "{} of {} samples had an undefined measure and were skipped",
            stats.skipped, total
        ));
    }
    EstimateReport {
        estimate,
        stderr,
        samples: total,
        skipped: stats.skipped,
        seed,
        seconds: started.elapsed().as_secs_f64(),
        warnings,
    }
}

fn query_errors(m: &Mdp, q: &Query) -> Result<Vec<String>> {
    let diags = validate_query(m, q);
    if has_errors(&diags) {
        let msgs: Vec<String> = diags
            .iter()
            .filter(|d| d.severity == Severity::Error)
            .map(|d| d.to_string())
            .collect();
        return Err(Error::InvalidQuery(msgs.join("; ")));
    }
    Ok(diags.iter().map(|d| d.to_string()).collect())
}

fn ec_warning(m: &Mdp) -> Option<String> {
    if graph::mec_decomposition(m).is_empty() {
        None
    } else {
        Some(
            "model contains end components; behavior trapped there counts toward the \
             true-negative mass"
                .to_string(),
        )
    }
}

/// Monte-Carlo average of a quality measure over the uniform distribution on
/// the policy polytope. Undefined samples are skipped and counted.
pub fn average_measure(
    m: &Mdp,
    q: &Query,
    kind: MeasureKind,
    samples: u64,
    seed: u64,
    threads: usize,
) -> Result<EstimateReport> {
    if samples < 2 {
        return Err(Error::Other("averaging needs at least 2 samples".into()));
    }
    let mut warnings = query_errors(m, q)?;
    warnings.extend(ec_warning(m));
    let engine = ConfusionEngine::new(m, q)?;
    let spec = polytope(m);
    let started = Instant::now();
    let stats = mc_run(samples, seed, threads, |rng| {
        let x = sample_policy(&spec, rng);
        measure_f64(&engine.eval(&x), kind)
    });
    if stats.n == 0 {
        return Err(Error::MeasureUndefinedEverywhere(kind.name().into()));
    }
    Ok(finish_report(stats, samples, seed, started, warnings))
}

/// Prebuilt evaluator for the strict probability-raising predicate.
///
/// Condition (r): some first visit of a cause state has positive
/// probability; condition (s): for every cause state hit first with positive
/// probability, the conditional effect probability after that visit strictly
/// exceeds the unconditional one. First-visit semantics live on the two-copy
/// model: reaching `c0` is exactly "no predictor state before c, then c".
pub struct SprEngine {
    tc: TwoCopyMdp,
    union_effect: Vec<usize>,
    cause_pairs: Vec<(usize, usize)>,
}

impl SprEngine {
    pub fn two_copy(&self) -> &TwoCopyMdp {
        &self.tc
    }

    pub fn new(m: &Mdp, q: &Query) -> Result<Self> {
        let tc = two_copy(m, q)?;
        let mut union_effect: Vec<usize> = tc.e0.iter().chain(tc.e1.iter()).copied().collect();
        union_effect.sort_unstable();
        let cause_pairs = tc
            .c0
            .iter()
            .map(|&c0| {
                let (orig, _) = tc.origin[c0];
                (c0, tc.embed[orig][1].expect("switch target exists"))
            })
            .collect();
        Ok(SprEngine {
            tc,
            union_effect,
            cause_pairs,
        })
    }

    pub fn eval<S: Scalar>(&self, x: &Policy<S>) -> bool {
        let m = &self.tc.mdp;
        let xp = self.tc.map_policy(x);
        let reached = support_reachable(m, &xp);
        let hit: Vec<&(usize, usize)> = self
            .cause_pairs
            .iter()
            .filter(|(c0, _)| reached[*c0])
            .collect();
        if hit.is_empty() {
            return false;
        }
        let table = reach_under_policy(m, &xp, &self.union_effect);
        let global = &table.values[m.init()];
        hit.iter().all(|(_, c1)| table.values[*c1] > *global)
    }
}

pub(crate) fn support_reachable<S: Scalar>(m: &Mdp, x: &Policy<S>) -> Vec<bool> {
    let mut seen = vec![false; m.n_states()];
    let mut stack = vec![m.init()];
    seen[m.init()] = true;
    while let Some(s) = stack.pop() {
        for c in x.support(s) {
            for &(t, _) in &m.choices(s)[c].succ {
                if !seen[t] {
                    seen[t] = true;
                    stack.push(t);
                }
            }
        }
    }
    seen
}

/// Strict probability-raising predicate for a single policy.
pub fn spr_predicate<S: Scalar>(m: &Mdp, q: &Query, x: &Policy<S>) -> Result<bool> {
    Ok(SprEngine::new(m, q)?.eval(x))
}

/// Global probability-raising predicate: tp*tn - fp*fn > 0 together with
/// Pr(<>C) > 0, evaluated on the confusion matrix.
pub fn gpr_predicate<S: Scalar>(m: &Mdp, q: &Query, x: &Policy<S>) -> Result<bool> {
    let engine = ConfusionEngine::new(m, q)?;
    Ok(gpr_holds(&engine.eval(x)))
}

pub fn gpr_holds<S: Scalar>(cm: &ConfusionMatrix<S>) -> bool {
    let f = cm.tp.clone() * cm.tn.clone() - cm.fp.clone() * cm.fn_.clone();
    f > S::zero() && cm.predictor_probability() > S::zero()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrMode {
    Spr,
    Gpr,
}

impl PrMode {
    pub fn name(&self) -> &'static str {
        match self {
            PrMode::Spr => "spr",
            PrMode::Gpr => "gpr",
        }
    }
}

impl FromStr for PrMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spr" => Ok(PrMode::Spr),
            "gpr" => Ok(PrMode::Gpr),
            other => Err(Error::Other(format!("unknown mode `{other}`"))),
        }
    }
}

/// Fraction of uniformly sampled policies satisfying the chosen
/// probability-raising predicate. Boundary ties are a null set and decided
/// by raw strict float comparison.
pub fn causal_volume(
    m: &Mdp,
    q: &Query,
    mode: PrMode,
    samples: u64,
    seed: u64,
    threads: usize,
) -> Result<EstimateReport> {
    if samples < 1 {
        return Err(Error::Other("volume estimation needs at least 1 sample".into()));
    }
    let mut warnings = query_errors(m, q)?;
    warnings.extend(ec_warning(m));
    let spec = polytope(m);
    let started = Instant::now();
    let stats = match mode {
        PrMode::Spr => {
            let engine = SprEngine::new(m, q)?;
            mc_run(samples, seed, threads, |rng| {
                let x = sample_policy(&spec, rng);
                Some(if engine.eval(&x) { 1.0 } else { 0.0 })
            })
        }
        PrMode::Gpr => {
            let engine = ConfusionEngine::new(m, q)?;
            mc_run(samples, seed, threads, |rng| {
                let x = sample_policy(&spec, rng);
                Some(if gpr_holds(&engine.eval(&x)) { 1.0 } else { 0.0 })
            })
        }
    };
    Ok(finish_report(stats, samples, seed, started, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{parse_model, parse_policy, uniform_policy};
    use crate::num::ratio;

    const NETWORK: &str = include_str!("../tests/data/network.json");

    fn network() -> Mdp {
        parse_model(NETWORK).unwrap()
    }

    fn query(m: &Mdp, c: &str) -> Query {
        Query::from_names(m, &[c.to_string()], &["lost".to_string()]).unwrap()
    }

    /// Exact policy (p, q): p on alpha at A, q on beta at B.
    fn pq_policy(m: &Mdp, p: BigRational, q: BigRational) -> Policy<BigRational> {
        let mut rows: Vec<Vec<BigRational>> = vec![Vec::new(); m.n_states()];
        rows[m.state_id("send").unwrap()] = vec![BigRational::one()];
        rows[m.state_id("A").unwrap()] = vec![p.clone(), BigRational::one() - p];
        rows[m.state_id("B").unwrap()] = vec![q.clone(), BigRational::one() - q];
        Policy::from_rows(m, rows).unwrap()
    }

    #[test]
    fn confusion_closed_forms_for_predictor_a() {
        let m = network();
        let qy = query(&m, "A");
        let engine = ConfusionEngine::new(&m, &qy).unwrap();
        for (pn, pd) in [(0i64, 1i64), (1, 2), (1, 1)] {
            for (qn, qd) in [(0i64, 1i64), (1, 2), (1, 1)] {
                let p = ratio(pn, pd);
                let q = ratio(qn, qd);
                let cm = engine.eval(&pq_policy(&m, p.clone(), q.clone()));
                assert_eq!(cm.tp, (ratio(1, 1) + &p) / ratio(6, 1));
                assert_eq!(cm.fp, (ratio(3, 1) - &p) / ratio(6, 1));
                assert_eq!(cm.fn_, (ratio(2, 1) - &q) / ratio(6, 1));
                assert_eq!(cm.tn, q / ratio(6, 1));
                assert_eq!(cm.sum(), ratio(1, 1));
            }
        }
    }

    #[test]
    fn confusion_for_predictor_b_under_gamma_beta() {
        let m = network();
        let x = parse_policy(r#"{"A":{"gamma":"1"},"B":{"beta":"1"}}"#, &m).unwrap();
        let cm = confusion(&m, &query(&m, "B"), &x).unwrap();
        assert_eq!(cm.tp, ratio(1, 6));
        assert_eq!(cm.fp, ratio(1, 6));
        assert_eq!(cm.fn_, ratio(1, 6));
        assert_eq!(cm.tn, ratio(1, 2));
    }

    #[test]
    fn unreachable_predictor_forces_the_degenerate_matrix() {
        // C unreachable under x: tp = fp = 0, fn = Pr(<>E), tn = 1 - fn.
        let m = network();
        let x = parse_policy(r#"{"A":{"gamma":"1"},"B":{"beta":"1"}}"#, &m).unwrap();
        // lost3 is only reachable via delta; predictor {lost3}? Terminal
        // states cannot be predictors against E... use a fresh model state:
        // predictor lost2 is unreachable under alpha-only policies.
        let x_alpha = parse_policy(r#"{"A":{"alpha":"1"},"B":{"beta":"1"}}"#, &m).unwrap();
        let q = Query::new(
            vec![m.state_id("lost2").unwrap()],
            vec![m.state_id("lost1").unwrap(), m.state_id("lost3").unwrap()],
        );
        let cm = confusion(&m, &q, &x_alpha).unwrap();
        assert_eq!(cm.tp, ratio(0, 1));
        assert_eq!(cm.fp, ratio(0, 1));
        assert_eq!(cm.fn_, ratio(1, 2));
        assert_eq!(cm.tn, ratio(1, 2));
        let _ = x;
    }

    #[test]
    fn measure_values_match_the_paper_examples() {
        let m = network();
        let x = parse_policy(r#"{"A":{"gamma":"1"},"B":{"beta":"1"}}"#, &m).unwrap();
        let cm = confusion(&m, &query(&m, "B"), &x).unwrap();
        assert_eq!(
            measure_exact(&cm, MeasureKind::Precision).unwrap(),
            MeasureValue::Exact(ratio(1, 2))
        );
        // MCC of (1/6, 1/6, 1/6, 1/2) is exactly 1/4.
        assert_eq!(
            measure_exact(&cm, MeasureKind::Mcc).unwrap(),
            MeasureValue::Exact(ratio(1, 4))
        );

        let perfect = ConfusionMatrix {
            tp: ratio(1, 1),
            fp: ratio(0, 1),
            fn_: ratio(0, 1),
            tn: ratio(0, 1),
        };
        assert_eq!(
            measure_exact(&perfect, MeasureKind::Fscore).unwrap(),
            MeasureValue::Exact(ratio(1, 1))
        );
        // Degenerate row: precision undefined, MCC defined as 0.
        let empty = ConfusionMatrix {
            tp: ratio(0, 1),
            fp: ratio(0, 1),
            fn_: ratio(1, 2),
            tn: ratio(1, 2),
        };
        assert!(measure_exact(&empty, MeasureKind::Precision).is_none());
        assert_eq!(
            measure_exact(&empty, MeasureKind::Mcc).unwrap(),
            MeasureValue::Exact(ratio(0, 1))
        );
        // Recall and f-score lose their denominators when neither the
        // predictor nor the effect is ever reached.
        let nothing = ConfusionMatrix {
            tp: ratio(0, 1),
            fp: ratio(0, 1),
            fn_: ratio(0, 1),
            tn: ratio(1, 1),
        };
        assert!(measure_exact(&nothing, MeasureKind::Recall).is_none());
        assert!(measure_exact(&nothing, MeasureKind::Fscore).is_none());
        assert!(measure_f64(&nothing.to_float(), MeasureKind::Fscore).is_none());
    }

    #[test]
    fn polytope_of_the_network_and_friends() {
        let m = network();
        let spec = polytope(&m);
        assert_eq!(spec.dimension, 2);
        assert_eq!(spec.volume, ratio(1, 1));

        let three = parse_model(
            r#"{
            "states": ["s","a","b","c"],
            "init": "s",
            "transitions": [
                {"from":"s","action":"x","to":{"a":"1"}},
                {"from":"s","action":"y","to":{"b":"1"}},
                {"from":"s","action":"z","to":{"c":"1"}}
            ]
        }"#,
        )
        .unwrap();
        let spec = polytope(&three);
        assert_eq!(spec.dimension, 2);
        assert_eq!(spec.volume, ratio(1, 2));

        let chain = parse_model(
            r#"{"states":["i","t"],"init":"i",
                "transitions":[{"from":"i","action":"a","to":{"t":"1"}}]}"#,
        )
        .unwrap();
        let spec = polytope(&chain);
        assert_eq!(spec.dimension, 0);
        assert_eq!(spec.volume, ratio(1, 1));
    }

    #[test]
    fn sampled_policies_live_on_the_simplex_product() {
        let m = network();
        let spec = polytope(&m);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let x = sample_policy(&spec, &mut rng);
            for &(s, _) in &spec.entries {
                let sum: f64 = x.row(s).iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
                assert!(x.row(s).iter().all(|&p| (0.0..=1.0).contains(&p)));
            }
        }
    }

    #[test]
    fn simplex_sampling_is_uniform_on_average() {
        let m = network();
        let spec = polytope(&m);
        let a = m.state_id("A").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mean: f64 = (0..n)
            .map(|_| sample_policy(&spec, &mut rng).row(a)[0])
            .sum::<f64>()
            / n as f64;
        assert!((mean - 0.5).abs() < 0.005, "mean {mean}");
    }

    #[test]
    fn average_fscore_is_near_the_reported_values() {
        let m = network();
        let ra = average_measure(&m, &query(&m, "A"), MeasureKind::Fscore, 20_000, 1, 1).unwrap();
        assert!((ra.estimate - 0.4266).abs() < 0.02, "got {}", ra.estimate);
        let rb = average_measure(&m, &query(&m, "B"), MeasureKind::Fscore, 20_000, 1, 1).unwrap();
        assert!((rb.estimate - 0.5973).abs() < 0.02, "got {}", rb.estimate);
        assert_eq!(ra.skipped, 0);
    }

    #[test]
    fn measure_undefined_almost_everywhere_is_an_error() {
        // The predictor is unreachable, so precision (tp/(tp+fp)) is
        // undefined under every sampled policy.
        let doc = r#"{
            "states": ["i","c","e","t"],
            "init": "i",
            "transitions": [
                {"from":"i","action":"a","to":{"e":"1/2","t":"1/2"}},
                {"from":"c","action":"b","to":{"e":"1"}}
            ]
        }"#;
        let m = parse_model(doc).unwrap();
        let q = Query::new(
            vec![m.state_id("c").unwrap()],
            vec![m.state_id("e").unwrap()],
        );
        match average_measure(&m, &q, MeasureKind::Precision, 100, 0, 1) {
            Err(Error::MeasureUndefinedEverywhere(_)) => {}
            other => panic!("expected undefined-everywhere error, got {other:?}"),
        }
    }

    #[test]
    fn averaging_a_markov_chain_has_no_variance() {
        let doc = r#"{
            "states": ["i","c","e","t"],
            "init": "i",
            "transitions": [
                {"from":"i","action":"a","to":{"c":"1/2","t":"1/2"}},
                {"from":"c","action":"b","to":{"e":"2/3","t":"1/3"}}
            ]
        }"#;
        let m = parse_model(doc).unwrap();
        let q = Query::new(
            vec![m.state_id("c").unwrap()],
            vec![m.state_id("e").unwrap()],
        );
        let r = average_measure(&m, &q, MeasureKind::Precision, 100, 3, 1).unwrap();
        assert_eq!(r.stderr, 0.0);
        assert!((r.estimate - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn estimates_are_deterministic_across_seeds_and_threads() {
        let m = network();
        let q = query(&m, "B");
        let a = average_measure(&m, &q, MeasureKind::Fscore, 5_000, 42, 1).unwrap();
        let b = average_measure(&m, &q, MeasureKind::Fscore, 5_000, 42, 1).unwrap();
        assert!(a.same_modulo_time(&b));
        let c = average_measure(&m, &q, MeasureKind::Fscore, 5_000, 42, 3).unwrap();
        assert!(a.same_modulo_time(&c));
        let d = average_measure(&m, &q, MeasureKind::Fscore, 5_000, 43, 1).unwrap();
        assert!(!a.same_modulo_time(&d));
    }

    #[test]
    fn spr_predicate_matches_example_4() {
        let m = network();
        let q = query(&m, "B");
        let gamma_beta = parse_policy(r#"{"A":{"gamma":"1"},"B":{"beta":"1"}}"#, &m).unwrap();
        assert!(spr_predicate(&m, &q, &gamma_beta).unwrap());
        let alpha_beta = parse_policy(r#"{"A":{"alpha":"1"},"B":{"beta":"1"}}"#, &m).unwrap();
        assert!(!spr_predicate(&m, &q, &alpha_beta).unwrap());
        // Predictor unreachable: (r) fails.
        let q_lost2 = Query::new(
            vec![m.state_id("lost2").unwrap()],
            vec![m.state_id("lost1").unwrap()],
        );
        assert!(!spr_predicate(&m, &q_lost2, &alpha_beta).unwrap());
    }

    #[test]
    fn gpr_predicate_closed_forms() {
        let m = network();
        // C = {B}: f = (6 - 2p - 4q)/36.
        let qb = query(&m, "B");
        let engine = ConfusionEngine::new(&m, &qb).unwrap();
        let cm = engine.eval(&pq_policy(&m, ratio(1, 2), ratio(1, 2)));
        let f = &cm.tp * &cm.tn - &cm.fp * &cm.fn_;
        assert_eq!(f, ratio(3, 36));
        assert!(gpr_holds(&cm));
        // alpha/beta (p = q = 1) hits the boundary: f = 0, not raising.
        let cm = engine.eval(&pq_policy(&m, ratio(1, 1), ratio(1, 1)));
        assert!(!gpr_holds(&cm));

        // C = {A}: f = (4q + 2p - 6)/36 <= 0 everywhere.
        let qa = query(&m, "A");
        let engine = ConfusionEngine::new(&m, &qa).unwrap();
        for (p, q) in [(0, 0), (1, 2), (2, 2), (1, 1)] {
            let cm = engine.eval(&pq_policy(&m, ratio(p, 2), ratio(q, 2)));
            assert!(!gpr_holds(&cm));
        }
    }

    #[test]
    fn singleton_predicates_coincide_on_samples() {
        let m = network();
        let q = query(&m, "B");
        let spr = SprEngine::new(&m, &q).unwrap();
        let gpr = ConfusionEngine::new(&m, &q).unwrap();
        let spec = polytope(&m);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let x = sample_policy(&spec, &mut rng);
            assert_eq!(spr.eval(&x), gpr_holds(&gpr.eval(&x)));
        }
    }

    #[test]
    fn causal_volumes_on_the_network() {
        let m = network();
        let qb = query(&m, "B");
        let sv = causal_volume(&m, &qb, PrMode::Spr, 2_000, 9, 1).unwrap();
        assert_eq!(sv.estimate, 1.0);
        let gv = causal_volume(&m, &qb, PrMode::Gpr, 2_000, 9, 1).unwrap();
        assert_eq!(gv.estimate, 1.0);
        let qa = query(&m, "A");
        let ga = causal_volume(&m, &qa, PrMode::Gpr, 2_000, 9, 1).unwrap();
        assert_eq!(ga.estimate, 0.0);
    }

    #[test]
    fn uniform_policy_average_equals_exact_measure_on_chains() {
        // Markov chain: the Monte-Carlo average must equal the unique
        // policy's exact value.
        let doc = r#"{
            "states": ["i","c","e","t"],
            "init": "i",
            "transitions": [
                {"from":"i","action":"a","to":{"c":"1/2","t":"1/2"}},
                {"from":"c","action":"b","to":{"e":"2/3","t":"1/3"}}
            ]
        }"#;
        let m = parse_model(doc).unwrap();
        let q = Query::new(
            vec![m.state_id("c").unwrap()],
            vec![m.state_id("e").unwrap()],
        );
        let u = uniform_policy(&m);
        let cm = confusion(&m, &q, &u).unwrap();
        let exact = measure_exact(&cm, MeasureKind::Precision).unwrap().to_f64();
        let r = average_measure(&m, &q, MeasureKind::Precision, 50, 0, 1).unwrap();
        assert!((r.estimate - exact).abs() < 1e-12);
    }
}
