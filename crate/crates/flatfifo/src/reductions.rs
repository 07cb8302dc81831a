//! Problem reductions and gadget generators.
//!
//! Each construction here turns one decision problem into another while
//! preserving the answer, and doubles as a test harness: the output
//! machines are fed back to the explorer and the symbolic deciders, which
//! must agree. [`reach_to_csr`] and [`csr_to_reach`] connect
//! configuration reachability with control-state reachability,
//! [`sat3_to_flat_fifo`] produces the hardness gadgets that tie
//! satisfiability to reachability, boundedness, termination and repeated
//! control-state reachability, and [`rcsr_gadget`] renders the
//! guess-and-check algorithm for repeated control-state reachability as
//! a plain reachability instance. [`gen_corpus`] generates deterministic
//! pseudo-random flat machines with explorer-certified annotations.
//!
//! Fresh names introduced by the constructions live in reserved
//! namespaces: `__hash` for end-of-content markers, `__p` suffixes for
//! shadow channels and their letters, `__`-prefixed states and
//! transitions for glue. Collisions with user names are resolved by
//! appending `x`, so composition never fails.

use crate::explorer::{explore, oracle_cyclic, Answer, ExploreBounds};
use crate::model::{
    builder_from, check_flat, fresh_channel_name, fresh_letter_name, fresh_state_name,
    fresh_trans_name, is_flat, loop_of, Action, ChannelId, ChannelValuation, Config,
    FifoMachine, LetterId, MachineBuilder, ModelError, Semantics, StateId, Word,
};
use crate::words::{loop_projection, Decomposition};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum ReductionError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("state {state} lies on no loop")]
    NoLoopAt { state: String },
    #[error("witness for channel {channel}: {reason}")]
    BadWitness { channel: String, reason: String },
    #[error("malformed formula: {message}")]
    BadCnf { message: String },
}

// ---------------------------------------------------------------------
// Reachability <-> control-state reachability
// ---------------------------------------------------------------------

/// Output of [`reach_to_csr`].
#[derive(Debug)]
pub struct ReachToCsr {
    pub machine: FifoMachine,
    /// Reachable iff the original target configuration was.
    pub stop: StateId,
}

/// Reduces configuration reachability to control-state reachability.
///
/// Appends a verification path to `target.state`: per channel, send a
/// fresh marker `__hash`, retrieve the expected content letter by
/// letter, then retrieve the marker. The final state `stop` is reachable
/// iff `target` is: the marker pins the channel length, so the drain
/// succeeds exactly when the content matched. Every added state is
/// fresh and the path is acyclic, so flatness is preserved.
pub fn reach_to_csr(m: &FifoMachine, target: &Config) -> ReachToCsr {
    let mut b = builder_from(m);
    b.initial(m.initial()).expect("copied initial");
    // Marker letters first; the verification path below drains w(c) between
    // the matching send and retrieve.
    let mut steps: Vec<Action> = Vec::new();
    let mut first = true;
    for c in m.channels() {
        let base =
            if first { "__hash".to_string() } else { format!("__hash__{}", m.channel_name(c)) };
        first = false;
        let hash = b.letter(c, &fresh_letter_name(&b, &base)).expect("fresh letter");
        steps.push(Action::Send(c, hash));
        for &a in target.channels.content(c) {
            steps.push(Action::Retrieve(c, a));
        }
        steps.push(Action::Retrieve(c, hash));
    }
    let mut prev = target.state;
    for (i, &act) in steps.iter().enumerate() {
        let base = if i + 1 == steps.len() { "__stop".to_string() } else { format!("__v{}", i + 1) };
        let next = b.state(&fresh_state_name(&b, &base)).expect("fresh state");
        let name = fresh_trans_name(&b, &format!("__t{}", i + 1));
        b.transition(&name, prev, next, act).expect("fresh transition");
        prev = next;
    }
    let machine = b.finish().expect("well-formed extension");
    debug_assert!(!is_flat(m) || is_flat(&machine));
    ReachToCsr { machine, stop: prev }
}

/// Output of [`csr_to_reach`].
#[derive(Debug)]
pub struct CsrToReach {
    pub machine: FifoMachine,
    /// Reachable iff the control state was reachable in the input.
    pub target: Config,
    /// The draining loops usually break flatness; true when the output
    /// machine still is flat.
    pub flat: bool,
}

/// Reduces control-state reachability of `q` to reachability of the
/// configuration `(q, all channels empty)`.
///
/// Adds one draining self-loop at `q` per letter of every channel. Any
/// content present on reaching `q` can then be discarded. The loops put
/// `q` on one cycle per letter, so the output is generally not flat;
/// the `flat` flag reports whether it happens to be.
pub fn csr_to_reach(m: &FifoMachine, q: StateId) -> CsrToReach {
    let mut b = builder_from(m);
    b.initial(m.initial()).expect("copied initial");
    let mut k = 0;
    for c in m.channels() {
        for &a in m.channel_letters(c) {
            k += 1;
            let name = fresh_trans_name(&b, &format!("__drain{k}"));
            b.transition(&name, q, q, Action::Retrieve(c, a)).expect("fresh transition");
        }
    }
    let machine = b.finish().expect("well-formed extension");
    let flat = is_flat(&machine);
    let target = Config { state: q, channels: ChannelValuation::empty(m.n_channels()) };
    CsrToReach { machine, target, flat }
}

// ---------------------------------------------------------------------
// 3-CNF formulas
// ---------------------------------------------------------------------

/// A 3-CNF formula. Literals are signed 1-based variable indices, so
/// clause `[1, -2, 3]` reads x1 or not-x2 or x3.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Cnf {
    vars: usize,
    clauses: Vec<Vec<i32>>,
}

impl Cnf {
    /// Validates that every literal references a variable in `1..=vars`
    /// and every clause carries one to three literals.
    pub fn new(vars: usize, clauses: Vec<Vec<i32>>) -> Result<Cnf, ReductionError> {
        if vars == 0 {
            return Err(ReductionError::BadCnf { message: "at least one variable".into() });
        }
        for (j, clause) in clauses.iter().enumerate() {
            if clause.is_empty() {
                return Err(ReductionError::BadCnf { message: format!("clause {} is empty", j + 1) });
            }
            if clause.len() > 3 {
                return Err(ReductionError::BadCnf {
                    message: format!("clause {} has more than 3 literals", j + 1),
                });
            }
            for &lit in clause {
                if lit == 0 || lit.unsigned_abs() as usize > vars {
                    return Err(ReductionError::BadCnf {
                        message: format!("literal {lit} out of range in clause {}", j + 1),
                    });
                }
            }
        }
        Ok(Cnf { vars, clauses })
    }

    pub fn vars(&self) -> usize {
        self.vars
    }

    pub fn clauses(&self) -> &[Vec<i32>] {
        &self.clauses
    }
}

/// Parses DIMACS CNF text: `c` comment lines, one `p cnf <vars>
/// <clauses>` header, then whitespace-separated literals with `0`
/// closing each clause. A line starting with `%` ends the input (some
/// benchmark archives append one). The declared clause count must match.
pub fn cnf_from_dimacs(text: &str) -> Result<Cnf, ReductionError> {
    let bad = |message: String| ReductionError::BadCnf { message };
    let mut declared: Option<(usize, usize)> = None;
    let mut lits: Vec<i32> = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('c') {
            continue;
        }
        if line.starts_with('%') {
            break;
        }
        if let Some(rest) = line.strip_prefix('p') {
            if declared.is_some() {
                return Err(bad("duplicate p header".into()));
            }
            let mut toks = rest.split_whitespace();
            if toks.next() != Some("cnf") {
                return Err(bad(format!("unsupported problem line {line:?}")));
            }
            let vars = toks
                .next()
                .and_then(|t| t.parse::<usize>().ok())
                .ok_or_else(|| bad(format!("bad variable count in {line:?}")))?;
            let count = toks
                .next()
                .and_then(|t| t.parse::<usize>().ok())
                .ok_or_else(|| bad(format!("bad clause count in {line:?}")))?;
            if toks.next().is_some() {
                return Err(bad(format!("trailing tokens in {line:?}")));
            }
            declared = Some((vars, count));
            continue;
        }
        if declared.is_none() {
            return Err(bad(format!("clause data before p header: {line:?}")));
        }
        for tok in line.split_whitespace() {
            lits.push(tok.parse::<i32>().map_err(|_| bad(format!("bad literal {tok:?}")))?);
        }
    }
    let (vars, count) = declared.ok_or_else(|| bad("missing p cnf header".into()))?;
    let mut clauses: Vec<Vec<i32>> = Vec::new();
    let mut cur: Vec<i32> = Vec::new();
    for lit in lits {
        if lit == 0 {
            clauses.push(std::mem::take(&mut cur));
        } else {
            cur.push(lit);
        }
    }
    if !cur.is_empty() {
        return Err(bad("unterminated clause".into()));
    }
    if clauses.len() != count {
        return Err(bad(format!("header declares {count} clauses, found {}", clauses.len())));
    }
    Cnf::new(vars, clauses)
}

/// Reference satisfiability decision by assignment enumeration.
/// Exponential in the variable count; for cross-checking only.
pub fn sat_brute_force(f: &Cnf) -> bool {
    assert!(f.vars <= 24, "enumeration limited to small formulas");
    (0u64..1 << f.vars).any(|bits| {
        f.clauses.iter().all(|clause| {
            clause.iter().any(|&lit| {
                let v = lit.unsigned_abs() as usize;
                (bits >> (v - 1)) & 1 == u64::from(lit > 0)
            })
        })
    })
}

// ---------------------------------------------------------------------
// Satisfiability gadgets
// ---------------------------------------------------------------------

/// Which property of the gadget machine encodes satisfiability.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SatVariant {
    Reach,
    Unbounded,
    NonTerm,
    RepeatedCsr,
}

/// The question to ask of a gadget machine, with its parameters
/// resolved against the machine.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum GadgetQuery {
    Reach(Config),
    Unbounded,
    NonTerminating,
    RepeatedControl(StateId),
}

/// Output of [`sat3_to_flat_fifo`].
#[derive(Debug)]
pub struct SatGadget {
    pub machine: FifoMachine,
    pub query: GadgetQuery,
}

/// Encodes 3-CNF satisfiability into a flat FIFO machine.
///
/// One channel per variable, alphabet `{0, 1}` (suffixed with the
/// channel name beyond the first, since letter names are global). The
/// machine first guesses an assignment by sending one bit per channel
/// (two parallel transitions), then checks each clause by retrieving
/// and re-sending the bit of one of its literals, then drains every
/// channel. The last state is reachable iff the formula is satisfiable,
/// and its channels are necessarily empty there. The non-`Reach`
/// variants add a send self-loop at the last state, making
/// satisfiability equivalent to unboundedness, non-termination and
/// repeated control-state reachability in turn.
pub fn sat3_to_flat_fifo(f: &Cnf, variant: SatVariant) -> SatGadget {
    let n = f.vars();
    let mut b = MachineBuilder::new();
    let mut chans = Vec::with_capacity(n);
    let mut bits = Vec::with_capacity(n);
    for i in 1..=n {
        let c = b.channel(&format!("x{i}")).expect("fresh channel");
        let zero = if i == 1 { "0".to_string() } else { format!("0__x{i}") };
        let one = if i == 1 { "1".to_string() } else { format!("1__x{i}") };
        let l0 = b.letter(c, &zero).expect("fresh letter");
        let l1 = b.letter(c, &one).expect("fresh letter");
        chans.push(c);
        bits.push([l0, l1]);
    }
    let mut prev = b.state("s0").expect("fresh state");
    b.initial(prev).expect("one initial");
    for i in 1..=n {
        let next = b.state(&format!("v{i}")).expect("fresh state");
        for bit in 0..2 {
            let name = format!("g{i}_{bit}");
            b.transition(&name, prev, next, Action::Send(chans[i - 1], bits[i - 1][bit]))
                .expect("fresh transition");
        }
        prev = next;
    }
    for (j, clause) in f.clauses().iter().enumerate() {
        let exit = b.state(&format!("c{}", j + 1)).expect("fresh state");
        for (k, &lit) in clause.iter().enumerate() {
            let i = lit.unsigned_abs() as usize;
            let bit = bits[i - 1][usize::from(lit > 0)];
            let mid = b.state(&format!("c{}_l{}", j + 1, k + 1)).expect("fresh state");
            b.transition(
                &format!("r{}_{}", j + 1, k + 1),
                prev,
                mid,
                Action::Retrieve(chans[i - 1], bit),
            )
            .expect("fresh transition");
            b.transition(&format!("w{}_{}", j + 1, k + 1), mid, exit, Action::Send(chans[i - 1], bit))
                .expect("fresh transition");
        }
        prev = exit;
    }
    for i in 1..=n {
        let next = b.state(&format!("u{i}")).expect("fresh state");
        for bit in 0..2 {
            let name = format!("d{i}_{bit}");
            b.transition(&name, prev, next, Action::Retrieve(chans[i - 1], bits[i - 1][bit]))
                .expect("fresh transition");
        }
        prev = next;
    }
    let query = match variant {
        SatVariant::Reach => GadgetQuery::Reach(Config {
            state: prev,
            channels: ChannelValuation::empty(n),
        }),
        SatVariant::Unbounded | SatVariant::NonTerm | SatVariant::RepeatedCsr => {
            b.transition("pump", prev, prev, Action::Send(chans[0], bits[0][1]))
                .expect("fresh transition");
            match variant {
                SatVariant::Unbounded => GadgetQuery::Unbounded,
                SatVariant::NonTerm => GadgetQuery::NonTerminating,
                _ => GadgetQuery::RepeatedControl(prev),
            }
        }
    };
    let machine = b.finish().expect("well-formed gadget");
    debug_assert!(is_flat(&machine));
    SatGadget { machine, query }
}

// ---------------------------------------------------------------------
// Repeated control-state reachability gadget
// ---------------------------------------------------------------------

/// One guessed decomposition for a channel the anchor loop retrieves
/// from: the cut `x = x_prime x_dprime` plus the common root `z` with
/// `x_dprime x_prime` and the loop's sent word both powers of `z`.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct RcsrWitness {
    pub channel: ChannelId,
    pub x_prime: Word,
    pub z: Word,
}

/// Output of [`rcsr_gadget`].
#[derive(Debug)]
pub struct RcsrGadget {
    pub machine: FifoMachine,
    /// Reachable iff some reachable configuration at the anchor has, on
    /// every checked channel, content in `x* x_prime` and lets the loop
    /// fire once.
    pub final_state: StateId,
}

/// Renders one guess of the repeated-reachability check as plain
/// control-state reachability.
///
/// For each channel the anchor loop retrieves `x` from (per iteration;
/// it must send at least as much back, or the loop starves and the
/// witness is rejected), the gadget appends: send a `__hash` marker,
/// a self-loop shuttling one `x` block onto a fresh shadow channel,
/// a chain shuttling `x_prime`, then retrieve the marker. That accepts
/// exactly the contents in `x* x_prime`, moving them onto the shadow.
/// A copy of the loop body over shadow channels then checks single
/// fireability, landing in `final_state`.
///
/// Reaching `final_state` therefore proves the anchor is visitable
/// infinitely often. The converse holds for *some* valid witness (the
/// cut is a guess), not necessarily for each one.
pub fn rcsr_gadget(
    m: &FifoMachine,
    q: StateId,
    witnesses: &[RcsrWitness],
) -> Result<RcsrGadget, ReductionError> {
    let bad = |c: ChannelId, reason: &str| ReductionError::BadWitness {
        channel: m.channel_name(c).to_string(),
        reason: reason.to_string(),
    };
    let sigma = loop_of(m, q)?
        .ok_or_else(|| ReductionError::NoLoopAt { state: m.state_name(q).to_string() })?;
    let mut by_channel: BTreeMap<ChannelId, &RcsrWitness> = BTreeMap::new();
    for w in witnesses {
        if by_channel.insert(w.channel, w).is_some() {
            return Err(bad(w.channel, "two witnesses for one channel"));
        }
    }
    for c in m.channels() {
        let (x, y) = loop_projection(m, &sigma, c);
        if x.is_empty() {
            if by_channel.contains_key(&c) {
                return Err(bad(c, "the loop retrieves nothing from this channel"));
            }
            continue;
        }
        let w = *by_channel.get(&c).ok_or_else(|| bad(c, "missing witness"))?;
        if x.len() > y.len() {
            return Err(bad(c, "the loop retrieves more than it sends, so it cannot iterate forever"));
        }
        if w.z.is_empty() || w.x_prime.len() > x.len() {
            return Err(bad(c, "decomposition equations fail"));
        }
        let rot_len = x.len();
        if rot_len % w.z.len() != 0 || y.len() % w.z.len() != 0 {
            return Err(bad(c, "decomposition equations fail"));
        }
        let dec = Decomposition {
            x_prime: w.x_prime.clone(),
            x_dprime: x[w.x_prime.len()..].to_vec(),
            z: w.z.clone(),
            j: rot_len / w.z.len(),
            k: y.len() / w.z.len(),
            s: None,
        };
        if !dec.check(&x, None, &y) {
            return Err(bad(c, "decomposition equations fail"));
        }
    }

    let mut b = builder_from(m);
    b.initial(m.initial()).expect("copied initial");
    let shadow_ch: Vec<ChannelId> = m
        .channels()
        .map(|c| {
            let name = fresh_channel_name(&b, &format!("{}__p", m.channel_name(c)));
            b.channel(&name).expect("fresh channel")
        })
        .collect();
    let shadow_letter: Vec<LetterId> = m
        .letters()
        .map(|a| {
            let name = fresh_letter_name(&b, &format!("{}__p", m.letter_name(a)));
            b.letter(shadow_ch[m.letter_channel(a).0], &name).expect("fresh letter")
        })
        .collect();

    let mut st = 0usize;
    let mut tr = 0usize;
    let add_state = |b: &mut MachineBuilder, st: &mut usize| {
        *st += 1;
        let name = fresh_state_name(b, &format!("__g{st}"));
        b.state(&name).expect("fresh state")
    };
    let add_trans =
        |b: &mut MachineBuilder, tr: &mut usize, src: StateId, dst: StateId, act: Action| {
            *tr += 1;
            let name = fresh_trans_name(b, &format!("__t{tr}"));
            b.transition(&name, src, dst, act).expect("fresh transition");
        };

    let mut prev = q;
    let mut first = true;
    for c in m.channels() {
        let (x, _) = loop_projection(m, &sigma, c);
        if x.is_empty() {
            continue;
        }
        let w = by_channel[&c];
        let base =
            if first { "__hash".to_string() } else { format!("__hash__{}", m.channel_name(c)) };
        first = false;
        let hash = b.letter(c, &fresh_letter_name(&b, &base)).expect("fresh letter");
        let g = add_state(&mut b, &mut st);
        add_trans(&mut b, &mut tr, prev, g, Action::Send(c, hash));
        // One x block per turn of the self-loop at g, echoed letter by
        // letter onto the shadow channel.
        let mut cur = g;
        for (i, &a) in x.iter().enumerate() {
            let mid = add_state(&mut b, &mut st);
            add_trans(&mut b, &mut tr, cur, mid, Action::Retrieve(c, a));
            let next = if i + 1 == x.len() { g } else { add_state(&mut b, &mut st) };
            add_trans(&mut b, &mut tr, mid, next, Action::Send(shadow_ch[c.0], shadow_letter[a.0]));
            cur = next;
        }
        let mut cur = g;
        for &a in &w.x_prime {
            let mid = add_state(&mut b, &mut st);
            add_trans(&mut b, &mut tr, cur, mid, Action::Retrieve(c, a));
            let next = add_state(&mut b, &mut st);
            add_trans(&mut b, &mut tr, mid, next, Action::Send(shadow_ch[c.0], shadow_letter[a.0]));
            cur = next;
        }
        let done = add_state(&mut b, &mut st);
        add_trans(&mut b, &mut tr, cur, done, Action::Retrieve(c, hash));
        prev = done;
    }
    let final_state = b.state(&fresh_state_name(&b, "__qf")).expect("fresh state");
    for (i, &t) in sigma.body.iter().enumerate() {
        let act = match m.trans(t).action {
            Action::Internal => Action::Internal,
            Action::Send(c, a) => Action::Send(shadow_ch[c.0], shadow_letter[a.0]),
            Action::Retrieve(c, a) => Action::Retrieve(shadow_ch[c.0], shadow_letter[a.0]),
        };
        let next = if i + 1 == sigma.body.len() { final_state } else { add_state(&mut b, &mut st) };
        add_trans(&mut b, &mut tr, prev, next, act);
        prev = next;
    }
    let machine = b.finish().expect("well-formed gadget");
    debug_assert!(!is_flat(m) || is_flat(&machine));
    Ok(RcsrGadget { machine, final_state })
}

/// All valid witnesses per checked channel of the loop at `q`: one
/// inner list per channel the loop retrieves from, in channel order.
/// An empty inner list means no decomposition exists for that channel
/// (including the starving `|x| > |y|` case), so the anchor cannot be
/// repeatable; otherwise the anchor is repeatable iff some combination
/// of one witness per channel yields a reachable gadget final state.
pub fn witness_candidates(
    m: &FifoMachine,
    q: StateId,
) -> Result<Vec<Vec<RcsrWitness>>, ReductionError> {
    let sigma = loop_of(m, q)?
        .ok_or_else(|| ReductionError::NoLoopAt { state: m.state_name(q).to_string() })?;
    let mut out = Vec::new();
    for c in m.channels() {
        let (x, y) = loop_projection(m, &sigma, c);
        if x.is_empty() {
            continue;
        }
        let mut cuts = Vec::new();
        if x.len() <= y.len() {
            for cut in 0..=x.len() {
                let mut rot = x[cut..].to_vec();
                rot.extend_from_slice(&x[..cut]);
                let z = primitive_root(&rot).to_vec();
                if y.len() % z.len() == 0 && y.chunks(z.len()).all(|ch| ch == &z[..]) {
                    cuts.push(RcsrWitness { channel: c, x_prime: x[..cut].to_vec(), z });
                }
            }
        }
        out.push(cuts);
    }
    Ok(out)
}

/// Shortest prefix whose repetition spells out `w`. `w` itself when
/// primitive.
fn primitive_root(w: &[LetterId]) -> &[LetterId] {
    for d in 1..w.len() {
        if w.len() % d == 0 && w.chunks(d).all(|ch| ch == &w[..d]) {
            return &w[..d];
        }
    }
    w
}

// ---------------------------------------------------------------------
// Benchmark corpus
// ---------------------------------------------------------------------

/// Corpus generation bounds.
#[derive(Clone, Copy, Debug)]
pub struct CorpusParams {
    pub count: usize,
    pub max_states: usize,
    /// Loops per machine; intervals are kept disjoint so the result is
    /// flat by construction.
    pub max_loops: usize,
    pub max_channels: usize,
    /// Letters per channel.
    pub max_letters: usize,
    /// Exploration bounds used while annotating.
    pub explore: ExploreBounds,
}

impl Default for CorpusParams {
    fn default() -> Self {
        CorpusParams {
            count: 100,
            max_states: 5,
            max_loops: 2,
            max_channels: 2,
            max_letters: 2,
            explore: ExploreBounds { max_configs: 2000, max_channel_len: 12, max_depth: 100_000 },
        }
    }
}

/// Ground truth recorded for one corpus machine, certified by bounded
/// exploration. `None` fields were inconclusive within the bounds.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Annotations {
    /// The exploration covered the whole reachability set.
    pub closed: bool,
    pub bounded: Option<bool>,
    pub terminating: Option<bool>,
    /// Whether the initial configuration can reach itself again.
    pub cyclic: Option<bool>,
    /// A reachable configuration (the last one discovered).
    pub target_in: Config,
    /// A configuration certified unreachable; only available when the
    /// exploration closed.
    pub target_out: Option<Config>,
}

/// One corpus machine with its annotations.
#[derive(Debug)]
pub struct CorpusEntry {
    pub machine: FifoMachine,
    pub annotations: Annotations,
}

/// Generates `params.count` deterministic pseudo-random flat machines.
/// Identical seeds and params give identical corpora. Every machine is
/// a forward spine `q0 .. qk` with up to `max_loops` back edges over
/// disjoint state intervals, which keeps each state on at most one
/// cycle.
pub fn gen_corpus(seed: u64, params: &CorpusParams) -> Vec<CorpusEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..params.count).map(|_| gen_one(&mut rng, params)).collect()
}

fn gen_one(rng: &mut ChaCha8Rng, p: &CorpusParams) -> CorpusEntry {
    let n_states = rng.gen_range(1..=p.max_states.max(1));
    let n_channels = if p.max_channels == 0 { 0 } else { rng.gen_range(1..=p.max_channels) };
    let mut b = MachineBuilder::new();
    let mut pairs: Vec<(ChannelId, LetterId)> = Vec::new();
    let mut letter_no = 0usize;
    for i in 1..=n_channels {
        let c = b.channel(&format!("c{i}")).expect("fresh channel");
        let n_letters = if p.max_letters == 0 { 0 } else { rng.gen_range(1..=p.max_letters) };
        for _ in 0..n_letters {
            let name = if letter_no < 26 {
                ((b'a' + letter_no as u8) as char).to_string()
            } else {
                format!("l{letter_no}")
            };
            letter_no += 1;
            let a = b.letter(c, &name).expect("fresh letter");
            pairs.push((c, a));
        }
    }
    let states: Vec<StateId> =
        (0..n_states).map(|i| b.state(&format!("q{i}")).expect("fresh state")).collect();
    b.initial(states[0]).expect("one initial");
    let mut t = 0usize;
    let action = |rng: &mut ChaCha8Rng| -> Action {
        if pairs.is_empty() {
            return Action::Internal;
        }
        let (c, a) = pairs[rng.gen_range(0..pairs.len())];
        match rng.gen_range(0..10) {
            0..=3 => Action::Send(c, a),
            4..=7 => Action::Retrieve(c, a),
            _ => Action::Internal,
        }
    };
    for i in 0..n_states - 1 {
        t += 1;
        b.transition(&format!("t{t}"), states[i], states[i + 1], action(rng))
            .expect("fresh transition");
    }
    let loops = if p.max_loops == 0 { 0 } else { rng.gen_range(0..=p.max_loops) };
    let mut taken: Vec<(usize, usize)> = Vec::new();
    let mut attempts = 0;
    while taken.len() < loops && attempts < 4 * loops.max(1) {
        attempts += 1;
        let i = rng.gen_range(0..n_states);
        let j = rng.gen_range(i..n_states);
        if taken.iter().any(|&(lo, hi)| i <= hi && lo <= j) {
            continue;
        }
        t += 1;
        b.transition(&format!("t{t}"), states[j], states[i], action(rng))
            .expect("fresh transition");
        taken.push((i, j));
    }
    let machine = b.finish().expect("well-formed corpus machine");
    assert!(check_flat(&machine).is_ok(), "generator must produce flat machines");
    let annotations = annotate(&machine, &p.explore);
    CorpusEntry { machine, annotations }
}

fn annotate(m: &FifoMachine, bounds: &ExploreBounds) -> Annotations {
    let init = Config::initial(m);
    let g = explore(m, &init, Semantics::Perfect, bounds);
    let closed = !g.truncated;
    let mut graph = petgraph::graph::DiGraph::<(), ()>::new();
    let nodes: Vec<_> = (0..g.len()).map(|_| graph.add_node(())).collect();
    for &(src, _, dst) in g.edges() {
        graph.add_edge(nodes[src], nodes[dst], ());
    }
    let has_cycle = petgraph::algo::is_cyclic_directed(&graph);
    let terminating = if has_cycle {
        Some(false)
    } else if closed {
        Some(true)
    } else {
        None
    };
    let cyclic = match oracle_cyclic(m, &init, bounds) {
        Answer::Yes => Some(true),
        Answer::No => Some(false),
        Answer::Unknown => None,
    };
    let target_in = g.configs().last().expect("initial config present").clone();
    let target_out = if closed {
        unreachable_candidate(m, &g)
    } else {
        None
    };
    Annotations { closed, bounded: closed.then_some(true), terminating, cyclic, target_in, target_out }
}

/// First configuration, by a fixed small enumeration, that a closed
/// exploration proves unreachable.
fn unreachable_candidate(m: &FifoMachine, g: &crate::explorer::ReachGraph) -> Option<Config> {
    let mut contents: Vec<ChannelValuation> = vec![ChannelValuation::empty(m.n_channels())];
    for a in m.letters() {
        let mut v = ChannelValuation::empty(m.n_channels());
        v.content_mut(m.letter_channel(a)).push(a);
        contents.push(v);
    }
    for q in m.states() {
        for v in &contents {
            let cfg = Config { state: q, channels: v.clone() };
            if !g.contains(&cfg) {
                return Some(cfg);
            }
        }
    }
    None
}

/// JSON rendering of one annotation record. Unknown fields are null;
/// configurations carry the state name and per-channel letter arrays.
pub fn annotations_to_json(m: &FifoMachine, a: &Annotations) -> String {
    use serde_json::{json, Value};
    let config = |cfg: &Config| -> Value {
        let channels: serde_json::Map<String, Value> = m
            .channels()
            .map(|c| {
                let letters: Vec<Value> = cfg
                    .channels
                    .content(c)
                    .iter()
                    .map(|&a| Value::String(m.letter_name(a).to_string()))
                    .collect();
                (m.channel_name(c).to_string(), Value::Array(letters))
            })
            .collect();
        json!({ "state": m.state_name(cfg.state), "channels": channels })
    };
    let doc = json!({
        "closed": a.closed,
        "bounded": a.bounded,
        "terminating": a.terminating,
        "cyclic": a.cyclic,
        "target_in": config(&a.target_in),
        "target_out": a.target_out.as_ref().map(config),
    });
    serde_json::to_string_pretty(&doc).expect("serializable document")
}
