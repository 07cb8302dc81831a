//! The `check` subcommand: decide one property of a flat machine.
//!
//! Queries follow the grammar `reach | csr | repeated-csr | cyclic |
//! terminate | bounded | channel-bounded c | letter-bounded c a`. Under
//! perfect semantics every query dispatches to the symbolic engine;
//! lossy semantics supports `reach` and `csr`, front-lossy supports
//! `csr`. Budget exhaustion is reported as inconclusive, exit 2.

use clap::{Args, ValueEnum};
use serde_json::json;
use std::path::PathBuf;

use flatfifo::lossy::{
    decide_frontlossy_csr, decide_lossy_reachability, lossy_reach_set, BoundedAnswer, LossyError,
    DEFAULT_FIXPOINT_BUDGET, DEFAULT_TAPE_BOUND,
};
use flatfifo::model::{
    ChannelId, Config, FifoMachine, LetterId, Semantics, StateId, TransId,
};
use flatfifo::symbolic::{
    decide_channel_unbounded, decide_csr, decide_letter_unbounded, decide_nontermination,
    decide_reachability, decide_repeated_csr, decide_unboundedness, ReachWitness, SymError,
    DEFAULT_BUDGET,
};
use flatfifo::words::cyclic;

use crate::input::{config_to_string, input_error, load_machine, parse_config, InputError};
use crate::report::{Format, Outcome, Report};

/// Property selector, shared by `check` and `verify-general`.
#[derive(Copy, Clone, PartialEq, Eq, Debug, ValueEnum)]
pub enum QueryKind {
    /// Is a full configuration reachable? Needs --target.
    Reach,
    /// Is a control state reachable? Needs --state.
    Csr,
    /// Is a control state visitable infinitely often? Needs --state.
    RepeatedCsr,
    /// Can a configuration reach itself again? Uses --config, default initial.
    Cyclic,
    /// Does every run terminate?
    Terminate,
    /// Are all channel contents bounded?
    Bounded,
    /// Is one channel's content bounded? Needs --channel.
    ChannelBounded,
    /// Is one letter's multiplicity bounded? Needs --letter.
    LetterBounded,
}

/// Raw query arguments before name resolution.
#[derive(Args, Debug)]
pub struct QueryArgs {
    /// Property to decide
    #[arg(long, value_enum)]
    pub query: QueryKind,

    /// Target configuration `(state, w1, w2, ...)` for `reach`
    #[arg(long)]
    pub target: Option<String>,

    /// Control state for `csr` and `repeated-csr`
    #[arg(long)]
    pub state: Option<String>,

    /// Start configuration for `cyclic`; defaults to the initial one
    #[arg(long)]
    pub config: Option<String>,

    /// Channel name for `channel-bounded` (optional for `letter-bounded`)
    #[arg(long)]
    pub channel: Option<String>,

    /// Letter name for `letter-bounded`
    #[arg(long)]
    pub letter: Option<String>,
}

/// A resolved query; every name has been checked against the machine.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Query {
    Reach(Config),
    Csr(StateId),
    RepeatedCsr(StateId),
    Cyclic(Config),
    Terminate,
    Bounded,
    ChannelBounded(ChannelId),
    LetterBounded(LetterId),
}

/// Resolves the raw arguments against `m`, rejecting unknown names and
/// missing required arguments with exit 3.
pub fn resolve_query(m: &FifoMachine, args: &QueryArgs) -> Result<Query, InputError> {
    let state = |field: &Option<String>| -> Result<StateId, InputError> {
        let Some(name) = field else {
            return input_error(format!("--query {:?} needs --state", args.query));
        };
        m.state_by_name(name).ok_or_else(|| InputError(format!("unknown state `{name}`")))
    };
    match args.query {
        QueryKind::Reach => {
            let Some(text) = &args.target else {
                return input_error("--query reach needs --target \"(state, w1, ...)\"");
            };
            Ok(Query::Reach(parse_config(m, text)?))
        }
        QueryKind::Csr => Ok(Query::Csr(state(&args.state)?)),
        QueryKind::RepeatedCsr => Ok(Query::RepeatedCsr(state(&args.state)?)),
        QueryKind::Cyclic => Ok(Query::Cyclic(match &args.config {
            Some(text) => parse_config(m, text)?,
            None => Config::initial(m),
        })),
        QueryKind::Terminate => Ok(Query::Terminate),
        QueryKind::Bounded => Ok(Query::Bounded),
        QueryKind::ChannelBounded => {
            let Some(name) = &args.channel else {
                return input_error("--query channel-bounded needs --channel");
            };
            let c = m
                .channel_by_name(name)
                .ok_or_else(|| InputError(format!("unknown channel `{name}`")))?;
            Ok(Query::ChannelBounded(c))
        }
        QueryKind::LetterBounded => {
            let Some(name) = &args.letter else {
                return input_error("--query letter-bounded needs --letter");
            };
            let a = m
                .letter_by_name(name)
                .ok_or_else(|| InputError(format!("unknown letter `{name}`")))?;
            if let Some(chan) = &args.channel {
                let c = m
                    .channel_by_name(chan)
                    .ok_or_else(|| InputError(format!("unknown channel `{chan}`")))?;
                if m.letter_channel(a) != c {
                    return input_error(format!(
                        "letter `{name}` belongs to channel `{}`, not `{chan}`",
                        m.channel_name(m.letter_channel(a))
                    ));
                }
            }
            Ok(Query::LetterBounded(a))
        }
    }
}

/// Human description of a resolved query, used as the report header.
pub fn describe_query(m: &FifoMachine, q: &Query) -> String {
    match q {
        Query::Reach(cfg) => format!("reach {}", config_to_string(m, cfg)),
        Query::Csr(q) => format!("csr {}", m.state_name(*q)),
        Query::RepeatedCsr(q) => format!("repeated-csr {}", m.state_name(*q)),
        Query::Cyclic(cfg) => format!("cyclic {}", config_to_string(m, cfg)),
        Query::Terminate => "terminate".to_string(),
        Query::Bounded => "bounded".to_string(),
        Query::ChannelBounded(c) => format!("channel-bounded {}", m.channel_name(*c)),
        Query::LetterBounded(a) => format!(
            "letter-bounded {} {}",
            m.channel_name(m.letter_channel(*a)),
            m.letter_name(*a)
        ),
    }
}

/// Execution semantics flag.
#[derive(Copy, Clone, PartialEq, Eq, Debug, ValueEnum)]
pub enum Sem {
    Perfect,
    Lossy,
    FrontLossy,
}

impl Sem {
    pub fn to_model(self) -> Semantics {
        match self {
            Sem::Perfect => Semantics::Perfect,
            Sem::Lossy => Semantics::Lossy,
            Sem::FrontLossy => Semantics::FrontLossy,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Sem::Perfect => "perfect",
            Sem::Lossy => "lossy",
            Sem::FrontLossy => "front-lossy",
        }
    }
}

#[derive(Args, Debug)]
pub struct CheckArgs {
    /// Machine file, text or JSON (`-` for stdin)
    pub machine: PathBuf,

    #[command(flatten)]
    pub query: QueryArgs,

    #[arg(long, value_enum, default_value_t = Sem::Perfect)]
    pub semantics: Sem,

    /// Unrolling budget for symbolic loop acceleration
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    pub budget_accel: usize,

    /// Fixpoint budget for the lossy reach-set computation
    #[arg(long, default_value_t = DEFAULT_FIXPOINT_BUDGET)]
    pub budget_lossy: usize,

    /// Tape bound for front-lossy and lossy-reach searches
    #[arg(long, default_value_t = DEFAULT_TAPE_BOUND)]
    pub budget_tape: usize,
}

/// A fully resolved `check` invocation.
pub struct VerifyRequest {
    pub machine: FifoMachine,
    pub query: Query,
    pub semantics: Sem,
    pub budget_accel: usize,
    pub budget_lossy: usize,
    pub budget_tape: usize,
}

impl VerifyRequest {
    pub fn from_args(args: &CheckArgs) -> Result<Self, InputError> {
        let machine = load_machine(&args.machine)?;
        let query = resolve_query(&machine, &args.query)?;
        Ok(VerifyRequest {
            machine,
            query,
            semantics: args.semantics,
            budget_accel: args.budget_accel,
            budget_lossy: args.budget_lossy,
            budget_tape: args.budget_tape,
        })
    }
}

/// JSON and text forms of a symbolic reachability witness.
pub fn witness_forms(m: &FifoMachine, w: &ReachWitness) -> (serde_json::Value, String) {
    let names: Vec<&str> = w.transitions.iter().map(|&t| m.trans(t).name.as_str()).collect();
    let loops: Vec<serde_json::Value> = w
        .loops
        .iter()
        .map(|&(q, n)| json!({ "anchor": m.state_name(q), "times": n }))
        .collect();
    let mut text = names.join(" ");
    if text.is_empty() {
        text = "(empty run)".to_string();
    }
    if !w.loops.is_empty() {
        let parts: Vec<String> =
            w.loops.iter().map(|&(q, n)| format!("{}*{}", m.state_name(q), n)).collect();
        text.push_str(&format!(" [{}]", parts.join(", ")));
    }
    (json!({ "transitions": names, "loops": loops }), text)
}

/// Same for a bare firing sequence, as the bounded searches return.
pub fn tape_forms(m: &FifoMachine, tape: &[TransId]) -> (serde_json::Value, String) {
    let names: Vec<&str> = tape.iter().map(|&t| m.trans(t).name.as_str()).collect();
    let text =
        if names.is_empty() { "(empty run)".to_string() } else { names.join(" ") };
    (json!({ "transitions": names }), text)
}

/// Budget errors are inconclusive; everything else rejects the input.
fn sym_outcome(e: SymError) -> Result<Outcome, InputError> {
    match e {
        SymError::AccelerationBudgetExceeded { .. } | SymError::UnionCapExceeded { .. } => {
            Ok(Outcome::Inconclusive(e.to_string()))
        }
        other => Err(InputError(other.to_string())),
    }
}

fn lossy_outcome(e: LossyError) -> Result<Outcome, InputError> {
    match e {
        LossyError::FixpointBudgetExceeded { .. } | LossyError::UnionCapExceeded { .. } => {
            Ok(Outcome::Inconclusive(e.to_string()))
        }
        other => Err(InputError(other.to_string())),
    }
}

fn from_decider(r: Result<bool, SymError>, negate: bool) -> Result<Outcome, InputError> {
    match r {
        Ok(b) => Ok(Outcome::from_bool(b != negate)),
        Err(e) => sym_outcome(e),
    }
}

pub fn cmd_check(req: &VerifyRequest, format: Format) -> Result<i32, InputError> {
    let m = &req.machine;
    let init = Config::initial(m);
    let mut witness = None;
    let mut witness_text = None;
    let mut budget_detail: (&'static str, usize) = ("budget_accel", req.budget_accel);

    let outcome = match req.semantics {
        Sem::Perfect => match &req.query {
            Query::Reach(target) => {
                match decide_reachability(m, &init, target, req.budget_accel) {
                    Ok(ans) => {
                        if let Some(w) = &ans.witness {
                            let (j, t) = witness_forms(m, w);
                            witness = Some(j);
                            witness_text = Some(t);
                        }
                        Outcome::from_bool(ans.reachable)
                    }
                    Err(e) => sym_outcome(e)?,
                }
            }
            Query::Csr(q) => from_decider(decide_csr(m, &init, *q, req.budget_accel), false)?,
            Query::RepeatedCsr(q) => {
                from_decider(decide_repeated_csr(m, &init, *q, req.budget_accel), false)?
            }
            Query::Cyclic(cfg) => match cyclic(m, cfg) {
                Ok(b) => Outcome::from_bool(b),
                Err(e) => return Err(InputError(e.to_string())),
            },
            Query::Terminate => {
                from_decider(decide_nontermination(m, &init, req.budget_accel), true)?
            }
            Query::Bounded => {
                from_decider(decide_unboundedness(m, &init, req.budget_accel), true)?
            }
            Query::ChannelBounded(c) => {
                from_decider(decide_channel_unbounded(m, &init, *c, req.budget_accel), true)?
            }
            Query::LetterBounded(a) => {
                from_decider(decide_letter_unbounded(m, &init, *a, req.budget_accel), true)?
            }
        },
        Sem::Lossy => match &req.query {
            Query::Reach(target) => {
                budget_detail = ("budget_tape", req.budget_tape);
                match decide_lossy_reachability(m, &init, target, req.budget_tape) {
                    Ok(BoundedAnswer::Yes(tape)) => {
                        let (j, t) = tape_forms(m, &tape);
                        witness = Some(j);
                        witness_text = Some(t);
                        Outcome::Holds
                    }
                    Ok(BoundedAnswer::NoWithinBound) => Outcome::Inconclusive(format!(
                        "no reaching run within tape bound {}",
                        req.budget_tape
                    )),
                    Err(e) => lossy_outcome(e)?,
                }
            }
            Query::Csr(q) => {
                budget_detail = ("budget_lossy", req.budget_lossy);
                match lossy_reach_set(m, &init, req.budget_lossy) {
                    Ok(reach) => Outcome::from_bool(reach.at(*q).is_some()),
                    Err(e) => lossy_outcome(e)?,
                }
            }
            _ => {
                return input_error(format!(
                    "query `{}` is only supported under perfect semantics",
                    describe_query(m, &req.query)
                ))
            }
        },
        Sem::FrontLossy => match &req.query {
            Query::Csr(q) => {
                budget_detail = ("budget_tape", req.budget_tape);
                match decide_frontlossy_csr(m, &init, *q, req.budget_tape) {
                    Ok(BoundedAnswer::Yes(tape)) => {
                        let (j, t) = tape_forms(m, &tape);
                        witness = Some(j);
                        witness_text = Some(t);
                        Outcome::Holds
                    }
                    Ok(BoundedAnswer::NoWithinBound) => Outcome::Inconclusive(format!(
                        "no reaching run within tape bound {}",
                        req.budget_tape
                    )),
                    Err(e) => lossy_outcome(e)?,
                }
            }
            _ => {
                return input_error(format!(
                    "query `{}` is only supported under perfect semantics",
                    describe_query(m, &req.query)
                ))
            }
        },
    };

    let mut report = Report::new("check", describe_query(m, &req.query), req.semantics.name(), outcome)
        .detail(budget_detail.0, json!(budget_detail.1));
    report.witness = witness;
    report.witness_text = witness_text;
    Ok(report.print(format))
}
