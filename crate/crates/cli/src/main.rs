//! `prequal`: quantify how well reaching a set of states in an MDP predicts
//! reaching a terminal effect set.
//!
//! Subcommands: `validate`, `measure`, `causal-volume`, `check`,
//! `transform`, `confusion`. All JSON outputs are single-line documents with
//! a `schema_version` field; identical invocations produce identical output
//! except for the wall-time `seconds` field. Exit codes: 0 success,
//! 1 semantic error, 2 I/O or parse error.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use prequal_core::model::{
    has_errors, model_diagnostics, parse_model, parse_policy, validate_query, Mdp, Policy, Query,
    Severity,
};
use prequal_core::num::{parse_rational, rational_to_string};
use prequal_core::prcheck::{check_gpr, check_spr, GprOutcome, GprSearchConfig};
use prequal_core::quality::{
    average_measure, causal_volume, confusion, measure_exact, MeasureKind, PrMode,
};
use prequal_core::transform::{canonical, star, two_copy};
use num::BigRational;

const SCHEMA_VERSION: u64 = 1;

#[derive(Parser)]
#[command(
    name = "prequal",
    version,
    about = "Predictor quality measures and probability-raising analysis for MDPs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a model file (and optionally a query) for structural problems
    Validate(ValidateArgs),
    /// Exact single-policy measure, or its Monte-Carlo average over all
    /// memoryless policies
    Measure(MeasureArgs),
    /// Estimate the fraction of policies under which the predictor raises
    /// the effect probability
    CausalVolume(CausalVolumeArgs),
    /// Decide whether a probability-raising policy exists
    Check(CheckArgs),
    /// Dump a transformed model in the model schema, with a mapping sidecar
    Transform(TransformArgs),
    /// Exact confusion matrix of a given policy
    Confusion(ConfusionArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Json,
    Text,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Spr,
    Gpr,
}

impl From<ModeArg> for PrMode {
    fn from(m: ModeArg) -> PrMode {
        match m {
            ModeArg::Spr => PrMode::Spr,
            ModeArg::Gpr => PrMode::Gpr,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MeasureArg {
    Precision,
    Recall,
    Fscore,
    Mcc,
}

impl From<MeasureArg> for MeasureKind {
    fn from(m: MeasureArg) -> MeasureKind {
        match m {
            MeasureArg::Precision => MeasureKind::Precision,
            MeasureArg::Recall => MeasureKind::Recall,
            MeasureArg::Fscore => MeasureKind::Fscore,
            MeasureArg::Mcc => MeasureKind::Mcc,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TransformKind {
    TwoCopy,
    Canonical,
    Star,
}

#[derive(Args)]
struct CommonArgs {
    /// Model file in the JSON schema
    #[arg(long)]
    model: PathBuf,
    /// Output format
    #[arg(long, value_enum, default_value_t = OutputFormat::Json)]
    output: OutputFormat,
}

#[derive(Args)]
struct QueryArgs {
    /// Predictor states C: comma-separated state names or labels
    #[arg(long, value_delimiter = ',')]
    predictor: Vec<String>,
    /// Effect states E: comma-separated state names or labels
    #[arg(long, value_delimiter = ',')]
    effect: Vec<String>,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_delimiter = ',')]
    predictor: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    effect: Vec<String>,
}

#[derive(Args)]
struct MeasureArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    query: QueryArgs,
    /// Quality measure to evaluate
    #[arg(long, value_enum)]
    measure: MeasureArg,
    /// Policy file: evaluate exactly under this single policy instead of
    /// averaging
    #[arg(long)]
    policy: Option<PathBuf>,
    #[arg(long, default_value_t = 100_000)]
    samples: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args)]
struct CausalVolumeArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    query: QueryArgs,
    /// Raising condition: strict (per first-visited cause) or global
    #[arg(long, value_enum)]
    mode: ModeArg,
    #[arg(long, default_value_t = 100_000)]
    samples: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    query: QueryArgs,
    #[arg(long, value_enum)]
    mode: ModeArg,
    /// Multi-start budget of the GPR gradient search
    #[arg(long, default_value_t = 16)]
    starts: u32,
    /// Exact MD enumeration bound (state-action pairs) for the GPR search
    #[arg(long, default_value_t = 16)]
    enumeration_cap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TransformArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    query: QueryArgs,
    #[arg(long, value_enum)]
    kind: TransformKind,
    /// Star parameter p as `n/d` (defaults to p_star)
    #[arg(long)]
    p: Option<String>,
}

#[derive(Args)]
struct ConfusionArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    query: QueryArgs,
    /// Policy file with exact rational probabilities
    #[arg(long)]
    policy: PathBuf,
}

/// Errors with their exit class already decided: the stage that produced an
/// error determines whether it is an I/O-or-parse failure (2) or a semantic
/// one (1).
enum CliError {
    IoOrParse(String),
    Semantic(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::IoOrParse(_) => 2,
            CliError::Semantic(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::IoOrParse(m) | CliError::Semantic(m) => m,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn load_model(path: &PathBuf) -> CliResult<Mdp> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::IoOrParse(format!("cannot read {}: {e}", path.display())))?;
    parse_model(&text).map_err(|e| CliError::IoOrParse(format!("{}: {e}", path.display())))
}

fn load_policy(path: &PathBuf, m: &Mdp) -> CliResult<Policy<BigRational>> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::IoOrParse(format!("cannot read {}: {e}", path.display())))?;
    parse_policy(&text, m).map_err(|e| CliError::IoOrParse(format!("{}: {e}", path.display())))
}

fn resolve_query(m: &Mdp, q: &QueryArgs) -> CliResult<Query> {
    let query = Query::from_names(m, &q.predictor, &q.effect)
        .map_err(|e| CliError::Semantic(e.to_string()))?;
    let diags = validate_query(m, &query);
    if has_errors(&diags) {
        let msgs: Vec<String> = diags
            .iter()
            .filter(|d| d.severity == Severity::Error)
            .map(|d| d.to_string())
            .collect();
        return Err(CliError::Semantic(msgs.join("; ")));
    }
    Ok(query)
}

fn semantic<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Semantic(e.to_string())
}

fn names(m: &Mdp, set: &[usize]) -> Vec<String> {
    set.iter().map(|&s| m.state_name(s).to_string()).collect()
}

struct Rendered {
    json: Value,
    text: String,
    /// Exit status for outcomes that still produce a report (validate).
    exit: u8,
}

impl Rendered {
    fn ok(json: Value, text: String) -> Self {
        Rendered { json, text, exit: 0 }
    }
}

fn cmd_validate(args: &ValidateArgs) -> CliResult<Rendered> {
    let m = load_model(&args.common.model)?;
    let mut diags = model_diagnostics(&m);
    if !args.predictor.is_empty() || !args.effect.is_empty() {
        match Query::from_names(&m, &args.predictor, &args.effect) {
            Ok(q) => diags.extend(validate_query(&m, &q)),
            Err(e) => return Err(semantic(e)),
        }
    }
    let valid = !has_errors(&diags);
    Ok(Rendered {
        json: json!({
            "schema_version": SCHEMA_VERSION,
            "command": "validate",
            "valid": valid,
            "states": m.n_states(),
            "state_action_pairs": m.n_state_action_pairs(),
            "diagnostics": diags.iter().map(|d| json!({
                "severity": match d.severity { Severity::Error => "error", Severity::Warning => "warning" },
                "code": d.code,
                "message": d.message,
            })).collect::<Vec<_>>(),
        }),
        text: if diags.is_empty() {
            "ok".to_string()
        } else {
            diags
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join("\n")
        },
        exit: if valid { 0 } else { 1 },
    })
}

fn cmd_measure(args: &MeasureArgs) -> CliResult<Rendered> {
    let m = load_model(&args.common.model)?;
    let q = resolve_query(&m, &args.query)?;
    let kind: MeasureKind = args.measure.into();
    if let Some(policy_path) = &args.policy {
        let policy = load_policy(policy_path, &m)?;
        let cm = confusion(&m, &q, &policy).map_err(semantic)?;
        let value = measure_exact(&cm, kind)
            .ok_or_else(|| CliError::Semantic(format!("{} is undefined here", kind.name())))?;
        let text = value.display();
        return Ok(Rendered::ok(
            json!({
                "schema_version": SCHEMA_VERSION,
                "command": "measure",
                "measure": kind.name(),
                "predictor": names(&m, &q.predictor),
                "effect": names(&m, &q.effect),
                "policy": policy_path.display().to_string(),
                "value": value.display(),
                "value_float": value.to_f64(),
            }),
            text,
        ));
    }
    let report = average_measure(&m, &q, kind, args.samples, args.seed, args.threads)
        .map_err(semantic)?;
    let mut json = json!({
        "schema_version": SCHEMA_VERSION,
        "command": "measure",
        "measure": kind.name(),
        "predictor": names(&m, &q.predictor),
        "effect": names(&m, &q.effect),
        "threads": args.threads,
    });
    merge(&mut json, report.to_json());
    Ok(Rendered::ok(
        json,
        format!(
            "estimate {} stderr {} samples {} skipped {} seed {}",
            report.estimate, report.stderr, report.samples, report.skipped, report.seed
        ),
    ))
}

fn cmd_causal_volume(args: &CausalVolumeArgs) -> CliResult<Rendered> {
    let m = load_model(&args.common.model)?;
    let q = resolve_query(&m, &args.query)?;
    let mode: PrMode = args.mode.into();
    let report = causal_volume(&m, &q, mode, args.samples, args.seed, args.threads)
        .map_err(semantic)?;
    let mut json = json!({
        "schema_version": SCHEMA_VERSION,
        "command": "causal-volume",
        "mode": mode.name(),
        "predictor": names(&m, &q.predictor),
        "effect": names(&m, &q.effect),
        "threads": args.threads,
    });
    merge(&mut json, report.to_json());
    Ok(Rendered::ok(
        json,
        format!(
            "estimate {} stderr {} samples {} skipped {} seed {}",
            report.estimate, report.stderr, report.samples, report.skipped, report.seed
        ),
    ))
}

fn cmd_check(args: &CheckArgs) -> CliResult<Rendered> {
    let m = load_model(&args.common.model)?;
    let q = resolve_query(&m, &args.query)?;
    match args.mode {
        ModeArg::Spr => {
            let verdict = check_spr(&m, &q).map_err(semantic)?;
            let mut json = json!({
                "schema_version": SCHEMA_VERSION,
                "command": "check",
                "mode": "spr",
                "predictor": names(&m, &q.predictor),
                "effect": names(&m, &q.effect),
            });
            merge(&mut json, verdict.to_json(&m));
            Ok(Rendered::ok(
                json,
                format!(
                    "exists: {} (p_star {}, min over star model {})",
                    verdict.exists,
                    rational_to_string(&verdict.p_star),
                    rational_to_string(&verdict.min_value),
                ),
            ))
        }
        ModeArg::Gpr => {
            let cfg = GprSearchConfig {
                starts: args.starts,
                enumeration_cap: args.enumeration_cap,
                seed: args.seed,
                ..GprSearchConfig::default()
            };
            let verdict = check_gpr(&m, &q, &cfg).map_err(semantic)?;
            let mut json = json!({
                "schema_version": SCHEMA_VERSION,
                "command": "check",
                "mode": "gpr",
                "predictor": names(&m, &q.predictor),
                "effect": names(&m, &q.effect),
                "seed": args.seed,
                "starts": args.starts,
                "enumeration_cap": args.enumeration_cap,
            });
            merge(&mut json, verdict.to_json(&m));
            Ok(Rendered::ok(
                json,
                format!(
                    "outcome: {} (definitive: {}, route: {})",
                    match verdict.outcome {
                        GprOutcome::Found => "found",
                        GprOutcome::NotFound => "not-found",
                    },
                    verdict.oracle_complete,
                    verdict.trace.route,
                ),
            ))
        }
    }
}

fn cmd_transform(args: &TransformArgs) -> CliResult<Rendered> {
    let m = load_model(&args.common.model)?;
    let q = Query::from_names(&m, &args.query.predictor, &args.query.effect)
        .map_err(semantic)?;
    let (kind, model_json, sidecar) = match args.kind {
        TransformKind::TwoCopy => {
            let tc = two_copy(&m, &q).map_err(semantic)?;
            let sidecar = json!({
                "states": tc.mapping_json(),
                "c0": names(&tc.mdp, &tc.c0),
                "c1": names(&tc.mdp, &tc.c1),
                "e0": names(&tc.mdp, &tc.e0),
                "e1": names(&tc.mdp, &tc.e1),
            });
            ("two-copy", tc.mdp.to_json(), sidecar)
        }
        TransformKind::Canonical => {
            let cm = canonical(&m, &q).map_err(semantic)?;
            ("canonical", cm.mdp.to_json(), cm.mapping_json(&m))
        }
        TransformKind::Star => {
            let cm = canonical(&m, &q).map_err(semantic)?;
            let p = match &args.p {
                Some(text) => parse_rational(text).map_err(semantic)?,
                None => cm.p_star.clone(),
            };
            let st = star(&cm, &p).map_err(semantic)?;
            let sidecar = json!({
                "p": rational_to_string(&p),
                "canonical": cm.mapping_json(&m),
            });
            ("star", st.mdp.to_json(), sidecar)
        }
    };
    let doc = json!({
        "schema_version": SCHEMA_VERSION,
        "command": "transform",
        "kind": kind,
        "model": model_json,
        "sidecar": sidecar,
    });
    let text = serde_json::to_string_pretty(&doc).expect("serializable");
    Ok(Rendered::ok(doc, text))
}

fn cmd_confusion(args: &ConfusionArgs) -> CliResult<Rendered> {
    let m = load_model(&args.common.model)?;
    let q = resolve_query(&m, &args.query)?;
    let policy = load_policy(&args.policy, &m)?;
    let cm = confusion(&m, &q, &policy).map_err(semantic)?;
    let float = cm.to_float();
    let mut json = json!({
        "schema_version": SCHEMA_VERSION,
        "command": "confusion",
        "predictor": names(&m, &q.predictor),
        "effect": names(&m, &q.effect),
        "policy": args.policy.display().to_string(),
    });
    merge(&mut json, cm.to_json());
    json["float"] = json!({
        "tp": float.tp, "fp": float.fp, "fn": float.fn_, "tn": float.tn,
    });
    Ok(Rendered::ok(
        json,
        format!(
            "tp={} fp={} fn={} tn={}",
            rational_to_string(&cm.tp),
            rational_to_string(&cm.fp),
            rational_to_string(&cm.fn_),
            rational_to_string(&cm.tn),
        ),
    ))
}

fn merge(into: &mut Value, from: Value) {
    if let (Value::Object(dst), Value::Object(src)) = (into, from) {
        for (k, v) in src {
            dst.insert(k, v);
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (output, result) = match &cli.command {
        Command::Validate(a) => (a.common.output, cmd_validate(a)),
        Command::Measure(a) => (a.common.output, cmd_measure(a)),
        Command::CausalVolume(a) => (a.common.output, cmd_causal_volume(a)),
        Command::Check(a) => (a.common.output, cmd_check(a)),
        Command::Transform(a) => (a.common.output, cmd_transform(a)),
        Command::Confusion(a) => (a.common.output, cmd_confusion(a)),
    };
    match result {
        Ok(rendered) => {
            match output {
                OutputFormat::Json => println!("{}", rendered.json),
                OutputFormat::Text => println!("{}", rendered.text),
            }
            ExitCode::from(rendered.exit)
        }
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
