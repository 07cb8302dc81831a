//! The `gadget` subcommand: reduction gadgets and corpus generation as
//! files. Machines are emitted in the text format (or wrapped in JSON
//! with their side data under `--format json`); auxiliary facts such as
//! the query a gadget answers go to stderr in text mode so the emitted
//! machine stays parseable.

use clap::{Args, Subcommand, ValueEnum};
use serde_json::{json, Value};
use std::path::PathBuf;

use flatfifo::model::{machine_to_json, render_machine, FifoMachine};
use flatfifo::reductions::{
    annotations_to_json, cnf_from_dimacs, csr_to_reach, gen_corpus, rcsr_gadget, reach_to_csr,
    sat3_to_flat_fifo, witness_candidates, CorpusParams, GadgetQuery, RcsrWitness, SatVariant,
};

use crate::input::{
    config_to_json, config_to_string, input_error, load_machine, parse_config, read_source,
    write_output, InputError,
};
use crate::report::{Format, EXIT_FAILS};

#[derive(Copy, Clone, PartialEq, Eq, Debug, ValueEnum)]
pub enum Variant {
    Reach,
    Unbounded,
    Nonterm,
    RepeatedCsr,
}

impl Variant {
    fn to_sat(self) -> SatVariant {
        match self {
            Variant::Reach => SatVariant::Reach,
            Variant::Unbounded => SatVariant::Unbounded,
            Variant::Nonterm => SatVariant::NonTerm,
            Variant::RepeatedCsr => SatVariant::RepeatedCsr,
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum GadgetCmd {
    /// Encode a 3-CNF formula (DIMACS file) as a flat machine
    Sat3 {
        /// DIMACS CNF file (`-` for stdin)
        cnf: PathBuf,
        /// Which property tracks satisfiability
        #[arg(long, value_enum, default_value_t = Variant::Reach)]
        variant: Variant,
        /// Output file (default stdout)
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Reduce configuration reachability to control-state reachability
    ReachToCsr {
        machine: PathBuf,
        /// Target configuration `(state, w1, ...)`
        #[arg(long)]
        target: String,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Reduce control-state reachability to configuration reachability
    CsrToReach {
        machine: PathBuf,
        /// Control state whose reachability is asked
        #[arg(long)]
        state: String,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Render one guess of the repeated-reachability check as plain
    /// control-state reachability
    Rcsr {
        machine: PathBuf,
        /// Loop anchor state
        #[arg(long)]
        state: String,
        /// Which candidate witness to encode (see the emitted count)
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Generate an annotated random corpus of flat machines
    Corpus(CorpusArgs),
}

#[derive(Args, Debug)]
pub struct CorpusArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long, default_value_t = 5)]
    pub max_states: usize,
    #[arg(long, default_value_t = 2)]
    pub max_loops: usize,
    #[arg(long, default_value_t = 2)]
    pub max_channels: usize,
    /// Letters per channel
    #[arg(long, default_value_t = 2)]
    pub max_letters: usize,
    /// Directory the corpus is written into
    #[arg(long)]
    pub out: PathBuf,
}

/// Emits a gadget machine plus its side facts. Text mode writes the
/// machine alone and logs the facts; JSON mode wraps both in one object.
fn emit_gadget(
    m: &FifoMachine,
    meta: Vec<(&'static str, Value, String)>,
    out: Option<&PathBuf>,
    format: Format,
) -> Result<i32, InputError> {
    match format {
        Format::Text => {
            for (key, _, line) in &meta {
                eprintln!("{key}: {line}");
            }
            write_output(out, &render_machine(m))?;
        }
        Format::Json => {
            let machine: Value =
                serde_json::from_str(&machine_to_json(m)).expect("emitted JSON parses");
            let mut doc = json!({ "machine": machine });
            let map = doc.as_object_mut().expect("object literal");
            for (key, value, _) in meta {
                map.insert(key.into(), value);
            }
            write_output(out, &serde_json::to_string_pretty(&doc).expect("serializable"))?;
        }
    }
    Ok(0)
}

fn query_meta(m: &FifoMachine, q: &GadgetQuery) -> (&'static str, Value, String) {
    match q {
        GadgetQuery::Reach(cfg) => (
            "query",
            json!({ "kind": "reach", "target": config_to_json(m, cfg) }),
            format!("reach {}", config_to_string(m, cfg)),
        ),
        GadgetQuery::Unbounded => ("query", json!({ "kind": "unbounded" }), "unbounded".into()),
        GadgetQuery::NonTerminating => {
            ("query", json!({ "kind": "non-terminating" }), "non-terminating".into())
        }
        GadgetQuery::RepeatedControl(q) => (
            "query",
            json!({ "kind": "repeated-csr", "state": m.state_name(*q) }),
            format!("repeated-csr {}", m.state_name(*q)),
        ),
    }
}

fn witnesses_json(m: &FifoMachine, ws: &[RcsrWitness]) -> Value {
    let items: Vec<Value> = ws
        .iter()
        .map(|w| {
            json!({
                "channel": m.channel_name(w.channel),
                "x_prime": w.x_prime.iter().map(|&a| m.letter_name(a)).collect::<Vec<_>>(),
                "z": w.z.iter().map(|&a| m.letter_name(a)).collect::<Vec<_>>(),
            })
        })
        .collect();
    Value::Array(items)
}

pub fn cmd_gadget(cmd: &GadgetCmd, format: Format) -> Result<i32, InputError> {
    match cmd {
        GadgetCmd::Sat3 { cnf, variant, out } => {
            let text = read_source(cnf)?;
            let f = cnf_from_dimacs(&text).map_err(|e| InputError(e.to_string()))?;
            let g = sat3_to_flat_fifo(&f, variant.to_sat());
            let meta = vec![query_meta(&g.machine, &g.query)];
            emit_gadget(&g.machine, meta, out.as_ref(), format)
        }
        GadgetCmd::ReachToCsr { machine, target, out } => {
            let m = load_machine(machine)?;
            let cfg = parse_config(&m, target)?;
            let g = reach_to_csr(&m, &cfg);
            let stop = g.machine.state_name(g.stop).to_string();
            let meta = vec![("stop", json!(stop), stop.clone())];
            emit_gadget(&g.machine, meta, out.as_ref(), format)
        }
        GadgetCmd::CsrToReach { machine, state, out } => {
            let m = load_machine(machine)?;
            let Some(q) = m.state_by_name(state) else {
                return input_error(format!("unknown state `{state}`"));
            };
            let g = csr_to_reach(&m, q);
            let meta = vec![
                (
                    "target",
                    config_to_json(&g.machine, &g.target),
                    config_to_string(&g.machine, &g.target),
                ),
                ("flat", json!(g.flat), g.flat.to_string()),
            ];
            emit_gadget(&g.machine, meta, out.as_ref(), format)
        }
        GadgetCmd::Rcsr { machine, state, index, out } => {
            let m = load_machine(machine)?;
            let Some(q) = m.state_by_name(state) else {
                return input_error(format!("unknown state `{state}`"));
            };
            let candidates = witness_candidates(&m, q).map_err(|e| InputError(e.to_string()))?;
            if candidates.is_empty() {
                eprintln!(
                    "the loop at {state} cannot iterate forever from any content; no gadget exists"
                );
                return Ok(EXIT_FAILS);
            }
            let Some(witness) = candidates.get(*index) else {
                return input_error(format!(
                    "--index {index} out of range; {} candidate witnesses exist",
                    candidates.len()
                ));
            };
            let g = rcsr_gadget(&m, q, witness).map_err(|e| InputError(e.to_string()))?;
            let final_name = g.machine.state_name(g.final_state).to_string();
            let meta = vec![
                ("final", json!(final_name), final_name.clone()),
                (
                    "witness",
                    witnesses_json(&m, witness),
                    format!("{} of {} candidates", index, candidates.len()),
                ),
                ("candidates", json!(candidates.len()), candidates.len().to_string()),
            ];
            emit_gadget(&g.machine, meta, out.as_ref(), format)
        }
        GadgetCmd::Corpus(args) => cmd_corpus(args, format),
    }
}

fn cmd_corpus(args: &CorpusArgs, format: Format) -> Result<i32, InputError> {
    let params = CorpusParams {
        count: args.count,
        max_states: args.max_states,
        max_loops: args.max_loops,
        max_channels: args.max_channels,
        max_letters: args.max_letters,
        ..CorpusParams::default()
    };
    let entries = gen_corpus(args.seed, &params);
    std::fs::create_dir_all(&args.out)
        .map_err(|e| InputError(format!("cannot create {}: {e}", args.out.display())))?;
    for (i, entry) in entries.iter().enumerate() {
        let machine_path = args.out.join(format!("{i:03}.machine.txt"));
        let ann_path = args.out.join(format!("{i:03}.annotations.json"));
        std::fs::write(&machine_path, render_machine(&entry.machine))
            .map_err(|e| InputError(format!("cannot write {}: {e}", machine_path.display())))?;
        std::fs::write(&ann_path, annotations_to_json(&entry.machine, &entry.annotations))
            .map_err(|e| InputError(format!("cannot write {}: {e}", ann_path.display())))?;
    }
    match format {
        Format::Text => println!("wrote {} machines to {}", entries.len(), args.out.display()),
        Format::Json => println!(
            "{}",
            serde_json::to_string_pretty(&json!({
                "count": entries.len(),
                "dir": args.out.display().to_string(),
                "seed": args.seed,
            }))
            .expect("serializable")
        ),
    }
    Ok(0)
}
