//! Lossy-semantics analysis: downward-closed channel languages and a
//! two-head pushdown check for front-lossy control-state reachability.
//!
//! When letters may vanish from channels, every reachable set of channel
//! contents is closed under subwords. Such languages are exactly the
//! finite sums of products over two kinds of atoms, `(a+e)` and
//! `(a1+..+ak)*`, and this module computes them for flat machines:
//! inclusion and membership tests, the star of a loop, and full per-state
//! reach sets. For the front-lossy variant, where letters are discarded
//! only in front of a retrieve, control-state reachability is compiled
//! into an emptiness check over pushdown automata with two reading heads
//! on a shared tape of transition names, decided here by bounded tape
//! enumeration.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde_json::{json, Value};
use thiserror::Error;

use crate::model::{
    builder_from, check_flat, fresh_letter_name, fresh_state_name, path_schemas, Action,
    ChannelId, Config, ElementaryLoop, FifoMachine, LetterId, ModelError, PathSchema, StateId,
    TransId, Word,
};
use crate::words::loop_projection;

/// Rounds a loop-star iteration may run before giving up.
pub const DEFAULT_FIXPOINT_BUDGET: usize = 1024;

/// Hard cap on the number of products accumulated per state.
pub const PRODUCT_CAP: usize = 4096;

/// Default tape length bound for front-lossy reachability checks.
pub const DEFAULT_TAPE_BOUND: usize = 12;

#[derive(Debug, Error)]
pub enum LossyError {
    #[error(transparent)]
    Model(#[from] ModelError),
    /// The loop-star iteration did not stabilize within its budget. The
    /// theory guarantees a fixpoint exists; hitting this is diagnostic.
    #[error("loop star did not stabilize within {budget} rounds")]
    FixpointBudgetExceeded { budget: usize },
    /// A per-state language outgrew [`PRODUCT_CAP`].
    #[error("state language exceeded {cap} products")]
    UnionCapExceeded { cap: usize },
    /// The start configuration has nonempty channels and the caller did
    /// not ask for a filler path.
    #[error("start configuration has nonempty channels")]
    NonEmptyInit,
}

// ---------------------------------------------------------------------
// Downward-closed languages
// ---------------------------------------------------------------------

/// One factor of a product.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub enum Atom {
    /// `(a+e)`: the letter or nothing.
    Choice(LetterId),
    /// `(a1+..+ak)*`: any word over the set.
    Star(BTreeSet<LetterId>),
}

impl Atom {
    fn can_produce(&self, a: LetterId) -> bool {
        match self {
            Atom::Choice(b) => *b == a,
            Atom::Star(s) => s.contains(&a),
        }
    }
}

/// A concatenation of atoms. Every atom accepts the empty word, so the
/// denotation is downward closed for the subword order.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub struct Product(Vec<Atom>);

impl Product {
    /// Builds a product in normal form: empty stars dropped, choices
    /// swallowed by a neighbouring star that contains their letter, and
    /// adjacent stars merged when one set contains the other (all three
    /// rewrites preserve the language).
    pub fn new(atoms: Vec<Atom>) -> Product {
        let mut out: Vec<Atom> = Vec::new();
        for atom in atoms {
            match atom {
                Atom::Star(s) if s.is_empty() => {}
                Atom::Star(s) => {
                    while let Some(prev) = out.last() {
                        let absorbed = match prev {
                            Atom::Choice(c) => s.contains(c),
                            Atom::Star(t) => t.is_subset(&s),
                        };
                        if absorbed {
                            out.pop();
                        } else {
                            break;
                        }
                    }
                    match out.last() {
                        Some(Atom::Star(t)) if s.is_subset(t) => {}
                        _ => out.push(Atom::Star(s)),
                    }
                }
                Atom::Choice(a) => match out.last() {
                    Some(Atom::Star(t)) if t.contains(&a) => {}
                    _ => out.push(Atom::Choice(a)),
                },
            }
        }
        Product(out)
    }

    /// The single-word product `(w1+e)...(wn+e)`, the least downward-closed
    /// language containing `w`.
    pub fn word(w: &[LetterId]) -> Product {
        Product::new(w.iter().map(|&a| Atom::Choice(a)).collect())
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.0
    }

    fn appended(&self, atom: Atom) -> Product {
        let mut atoms = self.0.clone();
        atoms.push(atom);
        Product::new(atoms)
    }
}

/// Does every word of `p` belong to `q`? Greedy left-to-right scan: a
/// choice consumes an equal choice or sits on a star containing it, a
/// star sits on a star containing its set, anything else skips the next
/// `q` atom (every atom covers the empty word).
fn product_included(p: &Product, q: &Product) -> bool {
    let mut j = 0;
    'atoms: for atom in &p.0 {
        while j < q.0.len() {
            match (atom, &q.0[j]) {
                (Atom::Choice(a), Atom::Choice(b)) if a == b => {
                    j += 1;
                    continue 'atoms;
                }
                (Atom::Choice(a), Atom::Star(t)) if t.contains(a) => continue 'atoms,
                (Atom::Star(s), Atom::Star(t)) if s.is_subset(t) => continue 'atoms,
                _ => j += 1,
            }
        }
        return false;
    }
    true
}

/// A finite union of products, kept normalized: no duplicate products and
/// no product included in another. The empty union denotes the empty
/// language; every nonempty value contains the empty word.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub struct Sre {
    products: Vec<Product>,
}

impl Sre {
    /// The empty language.
    pub fn empty() -> Sre {
        Sre { products: Vec::new() }
    }

    /// The language `{ε}`.
    pub fn epsilon() -> Sre {
        Sre::from_products(vec![Product::new(Vec::new())])
    }

    /// The downward closure of a single word.
    pub fn word(w: &[LetterId]) -> Sre {
        Sre::from_products(vec![Product::word(w)])
    }

    /// The language of all words over `set`.
    pub fn star(set: BTreeSet<LetterId>) -> Sre {
        Sre::from_products(vec![Product::new(vec![Atom::Star(set)])])
    }

    /// Normalizing constructor; removes duplicates and subsumed products.
    pub fn from_products(products: Vec<Product>) -> Sre {
        let mut ps = products;
        ps.sort();
        ps.dedup();
        let mut keep = vec![true; ps.len()];
        for i in 0..ps.len() {
            if !keep[i] {
                continue;
            }
            for j in 0..ps.len() {
                if i != j && keep[j] && product_included(&ps[i], &ps[j]) {
                    keep[i] = false;
                    break;
                }
            }
        }
        let products =
            ps.into_iter().zip(keep).filter_map(|(p, k)| k.then_some(p)).collect::<Vec<_>>();
        Sre { products }
    }

    pub fn products(&self) -> &[Product] {
        &self.products
    }

    /// True for the empty language (distinct from `{ε}`).
    pub fn is_empty(&self) -> bool {
        self.products.is_empty()
    }

    /// Union of both languages.
    pub fn union(&self, other: &Sre) -> Sre {
        let mut ps = self.products.clone();
        ps.extend(other.products.iter().cloned());
        Sre::from_products(ps)
    }
}

/// Language inclusion. A product is included in a union iff it is
/// included in a single member, so the check is a product-wise scan.
pub fn sre_includes(l1: &Sre, l2: &Sre) -> bool {
    l1.products.iter().all(|p| l2.products.iter().any(|q| product_included(p, q)))
}

/// Word membership, decided as the inclusion of the word's own product.
pub fn sre_member(w: &[LetterId], l: &Sre) -> bool {
    sre_includes(&Sre::word(w), l)
}

/// All members over `alphabet` of length at most `max_len`. Test and
/// cross-check helper; exponential in `max_len`.
pub fn sre_words_upto(l: &Sre, alphabet: &[LetterId], max_len: usize) -> BTreeSet<Word> {
    let mut out = BTreeSet::new();
    let mut layer: Vec<Word> = vec![Vec::new()];
    for len in 0..=max_len {
        for w in &layer {
            if sre_member(w, l) {
                out.insert(w.clone());
            }
        }
        if len == max_len {
            break;
        }
        layer = layer
            .iter()
            .flat_map(|w| {
                alphabet.iter().map(move |&a| {
                    let mut v = w.clone();
                    v.push(a);
                    v
                })
            })
            .collect();
    }
    out
}

// ---------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------

/// Text form in the `(a+e).(b+c)*` style; `e` is the empty product and
/// `0` the empty language.
pub fn sre_to_string(m: &FifoMachine, l: &Sre) -> String {
    if l.products.is_empty() {
        return "0".into();
    }
    let prod = |p: &Product| {
        if p.0.is_empty() {
            return "e".to_string();
        }
        p.0.iter()
            .map(|atom| match atom {
                Atom::Choice(a) => format!("({}+e)", m.letter_name(*a)),
                Atom::Star(s) => {
                    let inner =
                        s.iter().map(|&a| m.letter_name(a)).collect::<Vec<_>>().join("+");
                    format!("({inner})*")
                }
            })
            .collect::<Vec<_>>()
            .join(".")
    };
    l.products.iter().map(prod).collect::<Vec<_>>().join(" + ")
}

/// JSON form mirroring the atom structure.
pub fn sre_to_json(m: &FifoMachine, l: &Sre) -> Value {
    let products: Vec<Value> = l
        .products
        .iter()
        .map(|p| {
            let atoms: Vec<Value> = p
                .0
                .iter()
                .map(|atom| match atom {
                    Atom::Choice(a) => json!({ "choice": m.letter_name(*a) }),
                    Atom::Star(s) => json!({
                        "star": s.iter().map(|&a| m.letter_name(a)).collect::<Vec<_>>()
                    }),
                })
                .collect();
            Value::Array(atoms)
        })
        .collect();
    Value::Array(products)
}

// ---------------------------------------------------------------------
// One-step images
// ---------------------------------------------------------------------

/// Image of a product under a retrieve of `a`: for each atom that can
/// produce `a`, everything before it is dropped (those letters are lost),
/// a choice is consumed, a star stays.
fn product_after_retrieve(p: &Product, a: LetterId) -> Vec<Product> {
    let mut out = Vec::new();
    for (i, atom) in p.0.iter().enumerate() {
        if !atom.can_produce(a) {
            continue;
        }
        let from = match atom {
            Atom::Choice(_) => i + 1,
            Atom::Star(_) => i,
        };
        out.push(Product::new(p.0[from..].to_vec()));
    }
    out
}

fn sre_after_retrieve(l: &Sre, a: LetterId) -> Sre {
    Sre::from_products(l.products.iter().flat_map(|p| product_after_retrieve(p, a)).collect())
}

/// Image under a send of `a`: the new letter may itself be lost, so the
/// closure of `L·a` is `L·(a+e)`.
fn sre_after_send(l: &Sre, a: LetterId) -> Sre {
    Sre::from_products(l.products.iter().map(|p| p.appended(Atom::Choice(a))).collect())
}

/// Exact image of per-channel languages under one pass of `body`, or
/// `None` when no member can serve some retrieve. Transforms are applied
/// transition by transition, so sends earlier in the body can feed later
/// retrieves exactly as in the step semantics.
fn fire_body(m: &FifoMachine, state: &[Sre], body: &[TransId]) -> Option<Vec<Sre>> {
    let mut cur = state.to_vec();
    for &t in body {
        match m.trans(t).action {
            Action::Internal => {}
            Action::Send(c, a) => cur[c.0] = sre_after_send(&cur[c.0], a),
            Action::Retrieve(c, a) => {
                let next = sre_after_retrieve(&cur[c.0], a);
                if next.is_empty() {
                    return None;
                }
                cur[c.0] = next;
            }
        }
    }
    Some(cur)
}

fn included_all(xs: &[Sre], ys: &[Sre]) -> bool {
    xs.iter().zip(ys).all(|(x, y)| sre_includes(x, y))
}

fn union_all(xs: &[Sre], ys: &[Sre]) -> Vec<Sre> {
    xs.iter().zip(ys).map(|(x, y)| x.union(y)).collect()
}

// ---------------------------------------------------------------------
// Loop star
// ---------------------------------------------------------------------

/// All channel contents reachable at the anchor of `l` by iterating its
/// body any number of times from `start` (one language per channel).
///
/// The exact one-pass image is iterated; shrinking and balanced loops
/// reach a fixpoint because descending chains of downward-closed sets are
/// finite. A channel where the body sends more than it retrieves grows
/// forever instead, so its frontier is widened with a star over the sent
/// letters. The widened frontier is returned only when it has settled:
/// the image of the frontier widens to the same value, and one more body
/// pass maps the widened set into itself. Settling ensures transient
/// letters (present in early contents but not resendable) have been
/// consumed out of the frontier before the star is attached, which keeps
/// the result exact rather than an upper bound.
pub fn lossy_loop_star(
    m: &FifoMachine,
    l: &ElementaryLoop,
    start: &[Sre],
    budget: usize,
) -> Result<Vec<Sre>, LossyError> {
    assert_eq!(start.len(), m.n_channels(), "one language per channel");
    let body = l.label();
    let mut grow = vec![false; m.n_channels()];
    let mut star_sets: Vec<BTreeSet<LetterId>> = vec![BTreeSet::new(); m.n_channels()];
    for c in m.channels() {
        let (x, y) = loop_projection(m, l, c);
        if y.len() > x.len() {
            grow[c.0] = true;
            star_sets[c.0] = y.iter().copied().collect();
        }
    }
    let widen = |state: &[Sre]| -> Vec<Sre> {
        state
            .iter()
            .enumerate()
            .map(|(c, sre)| {
                if !grow[c] || sre.is_empty() {
                    return sre.clone();
                }
                Sre::from_products(
                    sre.products
                        .iter()
                        .map(|p| p.appended(Atom::Star(star_sets[c].clone())))
                        .collect(),
                )
            })
            .collect()
    };

    let mut acc: Vec<Sre> = start.to_vec();
    let mut frontier = acc.clone();
    for _ in 0..budget {
        let Some(next) = fire_body(m, &frontier, body) else {
            return Ok(acc);
        };
        if included_all(&next, &acc) {
            return Ok(acc);
        }
        if grow.iter().any(|&g| g) {
            let starred = widen(&next);
            let settled = match fire_body(m, &next, body) {
                Some(next2) => widen(&next2) == starred,
                None => false,
            };
            if settled {
                if let Some(after) = fire_body(m, &starred, body) {
                    if included_all(&after, &starred) {
                        return Ok(union_all(&acc, &starred));
                    }
                }
            }
        }
        acc = union_all(&acc, &next);
        frontier = next;
    }
    Err(LossyError::FixpointBudgetExceeded { budget })
}

// ---------------------------------------------------------------------
// Reach sets
// ---------------------------------------------------------------------

/// Per-state, per-channel languages of lossy-reachable contents.
///
/// Channels are stored independently: each entry is the exact projection
/// of the reachable set onto that channel, but the product of the entries
/// may pair contents that no single run produces together.
pub struct LossyReach {
    init: Config,
    per_state: BTreeMap<StateId, Vec<Sre>>,
}

impl LossyReach {
    pub fn init(&self) -> &Config {
        &self.init
    }

    /// Languages at `q`, one per channel; `None` when `q` is unreachable.
    pub fn at(&self, q: StateId) -> Option<&[Sre]> {
        self.per_state.get(&q).map(|v| v.as_slice())
    }

    pub fn states(&self) -> impl Iterator<Item = StateId> + '_ {
        self.per_state.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (StateId, &[Sre])> {
        self.per_state.iter().map(|(&q, v)| (q, v.as_slice()))
    }
}

/// Computes [`LossyReach`] for a flat machine by walking simple paths
/// from the start state and taking the loop star at the first entry of
/// each cycle; on a flat machine every run decomposes this way.
pub fn lossy_reach_set(
    m: &FifoMachine,
    init: &Config,
    budget: usize,
) -> Result<LossyReach, LossyError> {
    assert_eq!(init.channels.n_channels(), m.n_channels(), "config arity");
    let analysis = check_flat(m).map_err(|w| {
        LossyError::Model(ModelError::NotFlat { state: m.state_name(w.state).to_string() })
    })?;

    let start: Vec<Sre> =
        m.channels().map(|c| Sre::word(init.channels.content(c))).collect();
    let mut per_state: BTreeMap<StateId, Vec<Sre>> = BTreeMap::new();
    let mut on_path = BTreeSet::from([init.state]);
    let mut attached = BTreeSet::new();

    fn record(
        per_state: &mut BTreeMap<StateId, Vec<Sre>>,
        n_channels: usize,
        q: StateId,
        cur: &[Sre],
    ) -> Result<(), LossyError> {
        let entry = per_state.entry(q).or_insert_with(|| vec![Sre::empty(); n_channels]);
        let mut total = 0;
        for (e, c) in entry.iter_mut().zip(cur) {
            *e = e.union(c);
            total += e.products().len();
        }
        if total > PRODUCT_CAP {
            return Err(LossyError::UnionCapExceeded { cap: PRODUCT_CAP });
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn visit(
        m: &FifoMachine,
        analysis: &crate::model::FlatAnalysis,
        budget: usize,
        q: StateId,
        mut cur: Vec<Sre>,
        on_path: &mut BTreeSet<StateId>,
        attached: &mut BTreeSet<usize>,
        per_state: &mut BTreeMap<StateId, Vec<Sre>>,
    ) -> Result<(), LossyError> {
        let scc = analysis.scc_of(q);
        let mut did_attach = false;
        if let Some(l) = analysis.loop_at(q) {
            if !attached.contains(&scc) {
                cur = lossy_loop_star(m, l, &cur, budget)?;
                attached.insert(scc);
                did_attach = true;
            }
        }
        record(per_state, m.n_channels(), q, &cur)?;
        for &t in m.out(q) {
            let tr = m.trans(t);
            if on_path.contains(&tr.target) {
                continue;
            }
            let next = match tr.action {
                Action::Internal => cur.clone(),
                Action::Send(c, a) => {
                    let mut n = cur.clone();
                    n[c.0] = sre_after_send(&n[c.0], a);
                    n
                }
                Action::Retrieve(c, a) => {
                    let after = sre_after_retrieve(&cur[c.0], a);
                    if after.is_empty() {
                        continue;
                    }
                    let mut n = cur.clone();
                    n[c.0] = after;
                    n
                }
            };
            on_path.insert(tr.target);
            visit(m, analysis, budget, tr.target, next, on_path, attached, per_state)?;
            on_path.remove(&tr.target);
        }
        if did_attach {
            attached.remove(&scc);
        }
        Ok(())
    }

    visit(
        m,
        &analysis,
        budget,
        init.state,
        start,
        &mut on_path,
        &mut attached,
        &mut per_state,
    )?;
    Ok(LossyReach { init: init.clone(), per_state })
}

/// JSON export: `{state: {channel: products}}`.
pub fn lossy_reach_to_json(m: &FifoMachine, reach: &LossyReach) -> String {
    let mut states = serde_json::Map::new();
    for (q, sres) in reach.iter() {
        let mut chans = serde_json::Map::new();
        for c in m.channels() {
            chans.insert(m.channel_name(c).to_string(), sre_to_json(m, &sres[c.0]));
        }
        states.insert(m.state_name(q).to_string(), Value::Object(chans));
    }
    serde_json::to_string_pretty(&json!({
        "start": m.state_name(reach.init().state),
        "states": Value::Object(states),
    }))
    .expect("serializable")
}

// ---------------------------------------------------------------------
// Multi-head pushdown automata
// ---------------------------------------------------------------------

/// What a rule reads: a tape symbol, the endmarker, or nothing.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub enum HpdaInput {
    Letter(usize),
    End,
    Silent,
}

/// One rule: in `from`, reading `input` through the state's head with
/// `pop` on top of the stack, move to `to` and replace the top by `push`.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct HpdaRule {
    pub from: usize,
    pub input: HpdaInput,
    pub pop: usize,
    pub to: usize,
    pub push: Vec<usize>,
}

/// Pushdown automaton with several reading heads on one shared tape that
/// ends with an endmarker. Each state reads through the single head
/// `head_of[state]`; reading a symbol or the endmarker advances that
/// head, silent rules do not. A head is off the tape once its position is
/// at or past the endmarker; acceptance requires a final state with every
/// head off.
#[derive(Clone, Debug)]
pub struct Hpda {
    pub states: Vec<String>,
    pub tape_alphabet: Vec<String>,
    pub stack_alphabet: Vec<String>,
    pub n_heads: usize,
    pub head_of: Vec<usize>,
    pub rules: Vec<HpdaRule>,
    pub start: usize,
    pub stack_init: usize,
    pub finals: BTreeSet<usize>,
}

/// A subject of the step relation: control state, head positions
/// (0-based; the endmarker sits at the tape length), and the stack with
/// its top at the end.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub struct HpdaId {
    pub state: usize,
    pub pos: Vec<usize>,
    pub stack: Vec<usize>,
}

fn hpda_initial(a: &Hpda) -> HpdaId {
    HpdaId { state: a.start, pos: vec![0; a.n_heads], stack: vec![a.stack_init] }
}

fn hpda_accepting(a: &Hpda, tape_len: usize, id: &HpdaId) -> bool {
    a.finals.contains(&id.state) && id.pos.iter().all(|&p| p >= tape_len)
}

fn hpda_successors(a: &Hpda, tape: &[usize], id: &HpdaId, out: &mut Vec<HpdaId>) {
    let head = a.head_of[id.state];
    let p = id.pos[head];
    let Some(&top) = id.stack.last() else { return };
    for rule in a.rules.iter().filter(|r| r.from == id.state && r.pop == top) {
        let advances = match rule.input {
            HpdaInput::Silent => false,
            HpdaInput::Letter(x) => {
                if p >= tape.len() || tape[p] != x {
                    continue;
                }
                true
            }
            HpdaInput::End => {
                if p != tape.len() {
                    continue;
                }
                true
            }
        };
        let mut stack = id.stack[..id.stack.len() - 1].to_vec();
        stack.extend_from_slice(&rule.push);
        let mut pos = id.pos.clone();
        if advances {
            pos[head] += 1;
        }
        out.push(HpdaId { state: rule.to, pos, stack });
    }
}

/// Every subject reachable from the initial one on `tape`. The stack is
/// capped at a bound no run respecting one-push-per-move can exceed, so
/// silent push cycles cannot diverge.
pub fn hpda_reachable_ids(a: &Hpda, tape: &[usize]) -> BTreeSet<HpdaId> {
    run(a, tape, false).1
}

/// Does the automaton accept `tape`?
pub fn hpda_accepts(a: &Hpda, tape: &[usize]) -> bool {
    run(a, tape, true).0
}

fn run(a: &Hpda, tape: &[usize], stop_on_accept: bool) -> (bool, BTreeSet<HpdaId>) {
    let max_push = a.rules.iter().map(|r| r.push.len()).max().unwrap_or(1).max(1);
    let stack_cap = (tape.len() + 2) * a.n_heads * max_push;
    let mut seen = BTreeSet::new();
    let mut queue = VecDeque::new();
    let init = hpda_initial(a);
    seen.insert(init.clone());
    queue.push_back(init);
    let mut buf = Vec::new();
    while let Some(id) = queue.pop_front() {
        if hpda_accepting(a, tape.len(), &id) && stop_on_accept {
            return (true, seen);
        }
        buf.clear();
        hpda_successors(a, tape, &id, &mut buf);
        for next in buf.drain(..) {
            if next.stack.len() > stack_cap {
                continue;
            }
            if seen.insert(next.clone()) {
                queue.push_back(next);
            }
        }
    }
    let accepted = seen.iter().any(|id| hpda_accepting(a, tape.len(), id));
    (accepted, seen)
}

/// Single-head automaton accepting exactly the transition sequences that
/// form a control path from `from` to `to`. The stack is never used
/// beyond its base symbol.
fn path_hpda(m: &FifoMachine, from: StateId, to: StateId) -> Hpda {
    let ok = m.n_states();
    let mut rules = Vec::new();
    for t in m.transitions() {
        rules.push(HpdaRule {
            from: t.source.0,
            input: HpdaInput::Letter(t.id.0),
            pop: 0,
            to: t.target.0,
            push: vec![0],
        });
    }
    rules.push(HpdaRule { from: to.0, input: HpdaInput::End, pop: 0, to: ok, push: vec![0] });
    Hpda {
        states: m
            .states()
            .map(|q| m.state_name(q).to_string())
            .chain(["ok".to_string()])
            .collect(),
        tape_alphabet: m.transitions().iter().map(|t| t.name.clone()).collect(),
        stack_alphabet: vec!["base".into()],
        n_heads: 1,
        head_of: vec![0; m.n_states() + 1],
        rules,
        start: from.0,
        stack_init: 0,
        finals: BTreeSet::from([ok]),
    }
}

const BASE: usize = 0;
const GAP: usize = 1;

/// Two-head automaton accepting the transition sequences that are viable
/// for channel `c` under front-lossy semantics.
///
/// The leading head `H` scans in state `front`, pushing one `gap` symbol
/// per cell, and jumps to `match_a` on a retrieve of `a`. There the
/// trailing head `h` looks for a send of `a` strictly behind `H`,
/// popping one `gap` per cell; skipped sends are exactly the letters a
/// front-lossy retrieve discards. Outside `done` the number of `gap`
/// symbols equals the distance between the heads, so `h` can never pass
/// `H`. After `H` reads the endmarker, `done` lets `h` drain the rest of
/// the tape.
fn channel_hpda(m: &FifoMachine, c: ChannelId) -> Hpda {
    let letters = m.channel_letters(c);
    let front = 0;
    let match_state =
        |a: LetterId| 1 + letters.iter().position(|&b| b == a).expect("letter of channel");
    let done = 1 + letters.len();

    let mut rules = Vec::new();
    for t in m.transitions() {
        let sym = HpdaInput::Letter(t.id.0);
        for gamma in [BASE, GAP] {
            // H scans every cell, pushing the gap below keeps the head
            // distance equal to the gap count.
            let to = match t.action {
                Action::Retrieve(c2, a) if c2 == c => match_state(a),
                _ => front,
            };
            rules.push(HpdaRule {
                from: front,
                input: sym,
                pop: gamma,
                to,
                push: vec![gamma, GAP],
            });
            rules.push(HpdaRule { from: done, input: sym, pop: gamma, to: done, push: vec![gamma] });
        }
        for (i, &a) in letters.iter().enumerate() {
            let state = 1 + i;
            // h consumes one gap per cell; on the matching send it
            // returns control to the scanning state.
            rules.push(HpdaRule { from: state, input: sym, pop: GAP, to: state, push: vec![] });
            if t.action == Action::Send(c, a) {
                rules.push(HpdaRule { from: state, input: sym, pop: GAP, to: front, push: vec![] });
            }
        }
    }
    for gamma in [BASE, GAP] {
        rules.push(HpdaRule { from: front, input: HpdaInput::End, pop: gamma, to: done, push: vec![gamma] });
        rules.push(HpdaRule { from: done, input: HpdaInput::End, pop: gamma, to: done, push: vec![gamma] });
    }

    let mut states = vec!["front".to_string()];
    states.extend(letters.iter().map(|&a| format!("match_{}", m.letter_name(a))));
    states.push("done".to_string());
    let mut head_of = vec![1; states.len()];
    head_of[front] = 0;
    Hpda {
        states,
        tape_alphabet: m.transitions().iter().map(|t| t.name.clone()).collect(),
        stack_alphabet: vec!["base".into(), "gap".into()],
        n_heads: 2,
        head_of,
        rules,
        start: front,
        stack_init: BASE,
        finals: BTreeSet::from([done]),
    }
}

// ---------------------------------------------------------------------
// Path expressions and the front-lossy decision
// ---------------------------------------------------------------------

/// A segment of a path language: a fixed connector or an iterated loop
/// body.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum PathSeg {
    Fixed(Vec<TransId>),
    Star(Vec<TransId>),
}

/// Union over path schemas of bounded languages `w0 (l1)* w1 (l2)* ...`;
/// for a flat machine this is exactly the set of control paths between
/// two states.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct PathExpr {
    pub branches: Vec<Vec<PathSeg>>,
}

impl PathExpr {
    fn from_schemas(schemas: &[PathSchema]) -> PathExpr {
        let branches = schemas
            .iter()
            .map(|s| {
                let mut segs = Vec::new();
                if !s.prefix.is_empty() {
                    segs.push(PathSeg::Fixed(s.prefix.clone()));
                }
                for (l, seg) in &s.parts {
                    segs.push(PathSeg::Star(l.label().to_vec()));
                    if !seg.is_empty() {
                        segs.push(PathSeg::Fixed(seg.clone()));
                    }
                }
                segs
            })
            .collect();
        PathExpr { branches }
    }

    /// Every member of length at most `max_len`.
    pub fn tapes_upto(&self, max_len: usize) -> BTreeSet<Vec<TransId>> {
        fn rec(
            segs: &[PathSeg],
            cur: &mut Vec<TransId>,
            max_len: usize,
            out: &mut BTreeSet<Vec<TransId>>,
        ) {
            match segs.first() {
                None => {
                    out.insert(cur.clone());
                }
                Some(PathSeg::Fixed(w)) => {
                    if cur.len() + w.len() <= max_len {
                        cur.extend_from_slice(w);
                        rec(&segs[1..], cur, max_len, out);
                        cur.truncate(cur.len() - w.len());
                    }
                }
                Some(PathSeg::Star(w)) => {
                    rec(&segs[1..], cur, max_len, out);
                    let mut copies = 0;
                    while cur.len() + w.len() <= max_len {
                        cur.extend_from_slice(w);
                        copies += 1;
                        rec(&segs[1..], cur, max_len, out);
                    }
                    cur.truncate(cur.len() - copies * w.len());
                }
            }
        }
        let mut out = BTreeSet::new();
        for branch in &self.branches {
            rec(branch, &mut Vec::new(), max_len, &mut out);
        }
        out
    }

    pub fn render(&self, m: &FifoMachine) -> String {
        let seg = |s: &PathSeg| match s {
            PathSeg::Fixed(w) => {
                w.iter().map(|&t| m.trans(t).name.clone()).collect::<Vec<_>>().join(" ")
            }
            PathSeg::Star(w) => format!(
                "({})*",
                w.iter().map(|&t| m.trans(t).name.clone()).collect::<Vec<_>>().join(" ")
            ),
        };
        self.branches
            .iter()
            .map(|b| {
                if b.is_empty() {
                    "e".to_string()
                } else {
                    b.iter().map(seg).collect::<Vec<_>>().join(" ")
                }
            })
            .collect::<Vec<_>>()
            .join(" | ")
    }
}

/// The compiled front-lossy reachability check: a working machine (the
/// input, extended with a filler path when the start contents were
/// nonempty), the path language between start and target, and one
/// automaton per aspect — `automata[0]` checks path consistency, then one
/// per channel checks front-lossy viability. The target is reachable iff
/// some member of `expr` is accepted by every automaton.
pub struct FrontLossyCheck {
    pub machine: FifoMachine,
    pub start: StateId,
    pub target: StateId,
    pub automata: Vec<Hpda>,
    pub expr: PathExpr,
}

/// Builds the automata and path expression deciding front-lossy
/// reachability of `target` from `init`. When `init` has channel contents
/// and `fill_init` is set, a fresh path that sends them is prepended;
/// without the flag that case is an error.
pub fn build_frontlossy_hpda(
    m: &FifoMachine,
    init: &Config,
    target: StateId,
    fill_init: bool,
) -> Result<FrontLossyCheck, LossyError> {
    assert_eq!(init.channels.n_channels(), m.n_channels(), "config arity");
    let (machine, start) = if init.channels.is_all_empty() {
        (m.clone(), init.state)
    } else if !fill_init {
        return Err(LossyError::NonEmptyInit);
    } else {
        let mut b = builder_from(m);
        let mut chain = Vec::new();
        let total: usize = m.channels().map(|c| init.channels.content(c).len()).sum();
        for i in 0..total {
            let name = fresh_state_name(&b, &format!("boot_{i}"));
            chain.push(b.state(&name)?);
        }
        let mut sends = Vec::new();
        for c in m.channels() {
            for &a in init.channels.content(c) {
                sends.push(Action::Send(c, a));
            }
        }
        for (i, action) in sends.into_iter().enumerate() {
            let src = chain[i];
            let tgt = if i + 1 < chain.len() { chain[i + 1] } else { init.state };
            b.transition(&format!("boot_t{i}"), src, tgt, action)?;
        }
        b.initial(chain[0])?;
        (b.finish()?, chain[0])
    };

    let schemas = path_schemas(&machine, start, target)?;
    let expr = PathExpr::from_schemas(&schemas);
    let mut automata = vec![path_hpda(&machine, start, target)];
    automata.extend(machine.channels().map(|c| channel_hpda(&machine, c)));
    Ok(FrontLossyCheck { machine, start, target, automata, expr })
}

/// Outcome of a bounded search: a witness, or silence up to the bound.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum BoundedAnswer {
    Yes(Vec<TransId>),
    NoWithinBound,
}

impl BoundedAnswer {
    pub fn is_yes(&self) -> bool {
        matches!(self, BoundedAnswer::Yes(_))
    }
}

/// Is `target` reachable from `init` under front-lossy semantics? Decided
/// by enumerating the path language up to `tape_bound` and checking each
/// tape against every automaton; `Yes` carries the accepted tape. A
/// negative answer only covers tapes within the bound.
pub fn decide_frontlossy_csr(
    m: &FifoMachine,
    init: &Config,
    target: StateId,
    tape_bound: usize,
) -> Result<BoundedAnswer, LossyError> {
    let chk = build_frontlossy_hpda(m, init, target, true)?;
    let mut tapes: Vec<Vec<TransId>> = chk.expr.tapes_upto(tape_bound).into_iter().collect();
    tapes.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    for tape in tapes {
        let syms: Vec<usize> = tape.iter().map(|t| t.0).collect();
        if chk.automata.iter().all(|a| hpda_accepts(a, &syms)) {
            return Ok(BoundedAnswer::Yes(tape));
        }
    }
    Ok(BoundedAnswer::NoWithinBound)
}

// ---------------------------------------------------------------------
// Reachability as control-state reachability
// ---------------------------------------------------------------------

/// Extends `m` with a drain path from `target.state` to a fresh `stop`
/// state: per channel, send a fresh end marker, retrieve the target
/// content letter by letter, then retrieve the marker. Under lossy or
/// front-lossy semantics `stop` is reachable iff `target` is, and the
/// added path is acyclic so flatness is preserved.
pub fn lossy_reach_to_csr(m: &FifoMachine, target: &Config) -> (FifoMachine, StateId) {
    assert_eq!(target.channels.n_channels(), m.n_channels(), "config arity");
    let mut b = builder_from(m);
    let marks: Vec<LetterId> = m
        .channels()
        .map(|c| {
            let name = fresh_letter_name(&b, &format!("end_{}", m.channel_name(c)));
            b.letter(c, &name).expect("fresh letter")
        })
        .collect();

    let mut actions = Vec::new();
    for c in m.channels() {
        actions.push(Action::Send(c, marks[c.0]));
        for &a in target.channels.content(c) {
            actions.push(Action::Retrieve(c, a));
        }
        actions.push(Action::Retrieve(c, marks[c.0]));
    }
    let stop_name = fresh_state_name(&b, "stop");
    let stop = b.state(&stop_name).expect("fresh state");
    let mut hops = Vec::new();
    for i in 0..actions.len() - 1 {
        let name = fresh_state_name(&b, &format!("drain_{i}"));
        hops.push(b.state(&name).expect("fresh state"));
    }
    let mut src = target.state;
    for (i, action) in actions.into_iter().enumerate() {
        let tgt = hops.get(i).copied().unwrap_or(stop);
        b.transition(&format!("drain_t{i}"), src, tgt, action).expect("fresh transition");
        src = tgt;
    }
    b.initial(m.initial()).expect("kept initial");
    (b.finish().expect("extended machine is valid"), stop)
}

/// Is the full configuration `target` reachable from `init` under lossy
/// semantics? Decided through [`lossy_reach_to_csr`] followed by the
/// bounded front-lossy check; losses before retrieves are the only ones
/// that can change control flow, so the two semantics agree on
/// control-state reachability.
pub fn decide_lossy_reachability(
    m: &FifoMachine,
    init: &Config,
    target: &Config,
    tape_bound: usize,
) -> Result<BoundedAnswer, LossyError> {
    let (m2, stop) = lossy_reach_to_csr(m, target);
    decide_frontlossy_csr(&m2, init, stop, tape_bound)
}
