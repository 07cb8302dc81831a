//! Counter-system translations of FIFO machines.
//!
//! A machine with message alphabet `M` and transition set `D` induces the
//! counter family `K = M x D`: counter `(a,t)` counts the occurrences of
//! `a` currently queued that were sent by transition `t`. Two components
//! are built over `K` and composed by rendez-vous:
//!
//! * [`build_counting_abstraction`]: a counter machine on the original
//!   control graph that updates `K` but forgets message order. Each
//!   retrieve becomes one guarded decrement per possible sender.
//! * [`build_order_machine`]: one machine per channel that tracks where
//!   in the control graph the current channel front was sent. It replays
//!   control transitions, emitting a synchronization letter on sends to
//!   its channel, and re-imposes FIFO order through zero-test guards on
//!   the edges that leave an elementary loop: the front may move past a
//!   loop only once everything the loop sent has been consumed.
//! * [`build_sync`]: the synchronized product. Decrements pair with the
//!   matching send edge of the order machine; everything else moves solo.
//!
//! For flat machines the product is weakly bisimilar to the FIFO machine
//! under the correspondence [`correspondence_h`], which reconstructs the
//! channel contents from the counters and the order positions;
//! [`check_weak_bisim`] verifies the simulation conditions up to a depth
//! bound. [`build_modified_sync`] merges the endpoints of silent order
//! edges and re-attaches their guards further along the control flow,
//! which removes silent moves altogether and upgrades the relationship to
//! a bisimulation ([`check_bisim`]).
//!
//! Finally, [`trace_flatten`] unrolls a synchronized system over a flat
//! machine into a single flat counter machine with the same observable
//! traces, so FIFO questions reduce to reachability in flat counter
//! machines. [`export_counter_system`] serializes any of these objects.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::rc::Rc;

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use thiserror::Error;

use crate::model::{
    check_flat, machine_from_json, machine_to_json, path_schemas, step, successors, Action,
    ChannelId, ChannelValuation, Config, FifoMachine, FlatAnalysis, LetterId, ModelError,
    PathSchema, Semantics, StateId, TransId,
};

/// Default state budget for [`trace_flatten`].
pub const DEFAULT_FLATTEN_BUDGET: usize = 50_000;

/// Visited-node cap for the exact trace enumerations.
const TRACE_NODE_CAP: usize = 1_000_000;

/// Errors from the counter constructions.
#[derive(Debug, Error)]
pub enum CounterError {
    #[error(transparent)]
    Model(#[from] ModelError),
    /// The flattening grew past its state budget.
    #[error("flattening budget exceeded after {size} states")]
    BudgetExceeded { size: usize },
    #[error("unknown export format {format:?}, expected \"fast\" or \"json\"")]
    UnknownFormat { format: String },
    /// A counter-system document failed to parse or resolve.
    #[error("malformed counter system document: {message}")]
    Document { message: String },
}

// ---------------------------------------------------------------------------
// Counter space

/// Index of a counter within a [`CounterSpace`].
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct CounterId(pub usize);

/// The canonical counter family of a machine: one counter per
/// (letter, transition) pair, letter-major, named `(a,t1)`. Separately
/// built components over the same machine agree on ids and names.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct CounterSpace {
    pairs: Vec<(LetterId, TransId)>,
    names: Vec<String>,
    index: BTreeMap<(LetterId, TransId), CounterId>,
}

impl CounterSpace {
    pub fn new(m: &FifoMachine) -> Self {
        let mut pairs = Vec::with_capacity(m.n_letters() * m.n_transitions());
        for a in m.letters() {
            for t in m.transitions() {
                pairs.push((a, t.id));
            }
        }
        let names = pairs
            .iter()
            .map(|&(a, t)| format!("({},{})", m.letter_name(a), m.trans(t).name))
            .collect();
        let index = pairs.iter().enumerate().map(|(k, &p)| (p, CounterId(k))).collect();
        CounterSpace { pairs, names, index }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// The counter of a (letter, transition) pair. Both ids must belong
    /// to the machine the space was built from.
    pub fn id(&self, a: LetterId, t: TransId) -> CounterId {
        self.index[&(a, t)]
    }

    pub fn pair(&self, k: CounterId) -> (LetterId, TransId) {
        self.pairs[k.0]
    }

    pub fn name(&self, k: CounterId) -> &str {
        &self.names[k.0]
    }

    pub fn by_name(&self, name: &str) -> Option<CounterId> {
        self.names.iter().position(|n| n == name).map(CounterId)
    }

    /// The all-zero valuation.
    pub fn zeros(&self) -> Vec<u64> {
        vec![0; self.pairs.len()]
    }
}

// ---------------------------------------------------------------------------
// Guards, edges, machines

/// A conjunctive guard over counters: the listed sum is zero and every
/// `pos` counter is positive. Both lists empty means `true`. Since
/// counters are nonnegative, a conjunction of zero-sum constraints is
/// again a single zero-sum constraint over the union, so one list
/// suffices.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default)]
pub struct Guard {
    pub zero_sum: Vec<CounterId>,
    pub pos: Vec<CounterId>,
}

impl Guard {
    pub fn zero_of(mut counters: Vec<CounterId>) -> Self {
        counters.sort();
        counters.dedup();
        Guard { zero_sum: counters, pos: Vec::new() }
    }

    pub fn pos_of(k: CounterId) -> Self {
        Guard { zero_sum: Vec::new(), pos: vec![k] }
    }

    pub fn is_true(&self) -> bool {
        self.zero_sum.is_empty() && self.pos.is_empty()
    }

    pub fn and(&self, other: &Guard) -> Guard {
        let mut zero_sum = self.zero_sum.clone();
        zero_sum.extend_from_slice(&other.zero_sum);
        zero_sum.sort();
        zero_sum.dedup();
        let mut pos = self.pos.clone();
        pos.extend_from_slice(&other.pos);
        pos.sort();
        pos.dedup();
        Guard { zero_sum, pos }
    }

    pub fn sat(&self, nu: &[u64]) -> bool {
        self.zero_sum.iter().all(|k| nu[k.0] == 0) && self.pos.iter().all(|k| nu[k.0] > 0)
    }

    pub fn render(&self, space: &CounterSpace) -> String {
        if self.is_true() {
            return "true".into();
        }
        let mut parts = Vec::new();
        if !self.zero_sum.is_empty() {
            let sum: Vec<&str> = self.zero_sum.iter().map(|&k| space.name(k)).collect();
            parts.push(format!("{}=0", sum.join("+")));
        }
        for &k in &self.pos {
            parts.push(format!("{}>0", space.name(k)));
        }
        parts.join(" & ")
    }
}

/// One edge of a counter machine. `psi` is the rendez-vous letter (`None`
/// renders as tau), `fifo` the FIFO transition the edge was derived from.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct CounterEdge {
    pub id: usize,
    pub source: usize,
    pub target: usize,
    pub guard: Guard,
    pub update: Vec<(CounterId, i64)>,
    pub psi: Option<(LetterId, TransId)>,
    pub fifo: Option<TransId>,
}

/// A counter machine whose local states carry the FIFO control states
/// they stand for (`members`, a singleton unless states were merged).
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct LabeledCounterMachine {
    pub name: String,
    pub states: Vec<String>,
    pub members: Vec<Vec<StateId>>,
    pub initial: usize,
    pub n_counters: usize,
    pub edges: Vec<CounterEdge>,
}

impl LabeledCounterMachine {
    pub fn state_by_name(&self, name: &str) -> Option<usize> {
        self.states.iter().position(|s| s == name)
    }

    /// Edge ids leaving `state`.
    pub fn out(&self, state: usize) -> Vec<usize> {
        self.edges.iter().filter(|e| e.source == state).map(|e| e.id).collect()
    }
}

/// A counter-machine configuration: local state plus counter valuation.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub struct CounterConfig {
    pub state: usize,
    pub nu: Vec<u64>,
}

/// The initial configuration with all counters zero.
pub fn counter_initial(cm: &LabeledCounterMachine) -> CounterConfig {
    CounterConfig { state: cm.initial, nu: vec![0; cm.n_counters] }
}

fn apply_update(nu: &[u64], update: &[(CounterId, i64)]) -> Option<Vec<u64>> {
    let mut out = nu.to_vec();
    for &(k, d) in update {
        let v = &mut out[k.0];
        *v = v.checked_add_signed(d)?;
    }
    Some(out)
}

/// Fires one edge: `None` when the edge does not exist, does not leave
/// the current state, its guard fails, or a counter would go negative.
pub fn counter_step(
    cm: &LabeledCounterMachine,
    cfg: &CounterConfig,
    edge: usize,
) -> Option<CounterConfig> {
    let e = cm.edges.get(edge)?;
    if e.source != cfg.state || !e.guard.sat(&cfg.nu) {
        return None;
    }
    let nu = apply_update(&cfg.nu, &e.update)?;
    Some(CounterConfig { state: e.target, nu })
}

/// Control-flow flatness: every state lies on at most one elementary
/// cycle. Parallel edges count separately, so two guarded decrements
/// between the same pair of states already break flatness.
pub fn counter_is_flat(cm: &LabeledCounterMachine) -> bool {
    let mut g: DiGraph<(), ()> = DiGraph::new();
    let nodes: Vec<_> = cm.states.iter().map(|_| g.add_node(())).collect();
    for e in &cm.edges {
        g.add_edge(nodes[e.source], nodes[e.target], ());
    }
    for scc in tarjan_scc(&g) {
        let set: BTreeSet<usize> = scc.iter().map(|n| n.index()).collect();
        let mut internal = 0usize;
        let mut deg: BTreeMap<usize, usize> = BTreeMap::new();
        for e in &cm.edges {
            if set.contains(&e.source) && set.contains(&e.target) {
                internal += 1;
                *deg.entry(e.source).or_insert(0) += 1;
            }
        }
        if internal == 0 {
            continue;
        }
        // A strongly connected component whose every state has internal
        // out-degree one is a single cycle.
        if set.iter().any(|q| deg.get(q).copied().unwrap_or(0) != 1) {
            return false;
        }
    }
    true
}

// ---------------------------------------------------------------------------
// Counting abstraction and order machines

fn singleton_members(m: &FifoMachine) -> Vec<Vec<StateId>> {
    m.states().map(|q| vec![q]).collect()
}

fn state_names(m: &FifoMachine) -> Vec<String> {
    m.states().map(|q| m.state_name(q).to_string()).collect()
}

/// The counters `(a,t)` for the send transitions of a loop body, across
/// all channels. Their sum being zero means everything the loop sent has
/// been consumed. Loops that send nothing yield the empty sum, which is
/// trivially zero.
fn after_loop_counters(m: &FifoMachine, space: &CounterSpace, body: &[TransId]) -> Vec<CounterId> {
    let mut ks: Vec<CounterId> = body
        .iter()
        .filter_map(|&t| match m.trans(t).action {
            Action::Send(_, a) => Some(space.id(a, t)),
            _ => None,
        })
        .collect();
    ks.sort();
    ks.dedup();
    ks
}

/// The counting abstraction: same control graph, counters instead of
/// channels. Sends increment their counter, retrieves of `a` on `c`
/// become one guarded decrement per transition that sends `a` on `c`,
/// labeled by the chosen sender. The result need not be flat even when
/// the machine is: distinct senders yield parallel edges.
pub fn build_counting_abstraction(m: &FifoMachine) -> LabeledCounterMachine {
    let space = CounterSpace::new(m);
    let mut edges = Vec::new();
    let mut push = |source: StateId, target: StateId, guard, update, psi, fifo| {
        let id = edges.len();
        edges.push(CounterEdge { id, source: source.0, target: target.0, guard, update, psi, fifo });
    };
    for t in m.transitions() {
        match t.action {
            Action::Send(_, a) => {
                let k = space.id(a, t.id);
                push(t.source, t.target, Guard::default(), vec![(k, 1)], None, Some(t.id));
            }
            Action::Internal => {
                push(t.source, t.target, Guard::default(), Vec::new(), None, Some(t.id));
            }
            Action::Retrieve(c, a) => {
                for sender in m.transitions() {
                    if sender.action == Action::Send(c, a) {
                        let k = space.id(a, sender.id);
                        push(
                            t.source,
                            t.target,
                            Guard::pos_of(k),
                            vec![(k, -1)],
                            Some((a, sender.id)),
                            Some(t.id),
                        );
                    }
                }
            }
        }
    }
    LabeledCounterMachine {
        name: "count".into(),
        states: state_names(m),
        members: singleton_members(m),
        initial: m.initial().0,
        n_counters: space.len(),
        edges,
    }
}

fn not_flat(m: &FifoMachine, state: StateId) -> ModelError {
    ModelError::NotFlat { state: m.state_name(state).to_string() }
}

/// The order machine of channel `c`: it walks the control graph one
/// transition behind the consumption frontier of `c`. Sends to `c` carry
/// the synchronization letter `(a,t)` and only move together with the
/// matching decrement of the abstraction; every other transition is a
/// silent edge. Edges that leave an elementary loop other than by its
/// own body are guarded by the loop's zero test. Requires a flat machine.
pub fn build_order_machine(
    m: &FifoMachine,
    c: ChannelId,
) -> Result<LabeledCounterMachine, CounterError> {
    let analysis = check_flat(m).map_err(|w| not_flat(m, w.state))?;
    let space = CounterSpace::new(m);
    let mut edges = Vec::new();
    for t in m.transitions() {
        let psi = match t.action {
            Action::Send(cc, a) if cc == c => Some((a, t.id)),
            _ => None,
        };
        let guard = match analysis.loop_at(t.source) {
            Some(l) if !l.label().contains(&t.id) => {
                Guard::zero_of(after_loop_counters(m, &space, l.label()))
            }
            _ => Guard::default(),
        };
        let id = edges.len();
        edges.push(CounterEdge {
            id,
            source: t.source.0,
            target: t.target.0,
            guard,
            update: Vec::new(),
            psi,
            fifo: Some(t.id),
        });
    }
    Ok(LabeledCounterMachine {
        name: format!("order_{}", m.channel_name(c)),
        states: state_names(m),
        members: singleton_members(m),
        initial: m.initial().0,
        n_counters: space.len(),
        edges,
    })
}

// ---------------------------------------------------------------------------
// Synchronized product

/// One move of the product: the participating edges (at most one per
/// component), the conjoined guard, the counter update, and the FIFO
/// transition observed (`None` for silent moves).
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct SyncTransition {
    pub id: usize,
    pub count_edge: Option<usize>,
    /// One slot per channel, `Some` when that order machine participates.
    pub order_edges: Vec<Option<usize>>,
    pub guard: Guard,
    pub update: Vec<(CounterId, i64)>,
    pub label: Option<TransId>,
}

/// The synchronized product of the counting abstraction with one order
/// machine per channel.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct SyncSystem {
    pub machine: FifoMachine,
    pub space: CounterSpace,
    pub count: LabeledCounterMachine,
    pub orders: Vec<LabeledCounterMachine>,
    pub transitions: Vec<SyncTransition>,
    /// Whether the order machines went through silent-edge elimination.
    pub modified: bool,
}

/// A product configuration: local state per component (abstraction
/// first, then one per channel) and the shared counter valuation.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub struct SyncConfig {
    pub global: Vec<usize>,
    pub nu: Vec<u64>,
}

fn assemble(
    m: &FifoMachine,
    space: CounterSpace,
    count: LabeledCounterMachine,
    orders: Vec<LabeledCounterMachine>,
    modified: bool,
) -> SyncSystem {
    let p = orders.len();
    let mut transitions = Vec::new();
    let mut push = |count_edge, order_edges, guard, update, label| {
        let id = transitions.len();
        transitions.push(SyncTransition { id, count_edge, order_edges, guard, update, label });
    };
    for e in &count.edges {
        match e.psi {
            // Increments and internal moves run solo, labeled.
            None => push(Some(e.id), vec![None; p], e.guard.clone(), e.update.clone(), e.fifo),
            // Decrements pair with the matching send edge of the order
            // machine of the letter's channel. The pairing partner always
            // exists: the sender is a transition of the machine.
            Some((a, sender)) => {
                let c = m.letter_channel(a).0;
                let partner = orders[c]
                    .edges
                    .iter()
                    .find(|oe| oe.psi == Some((a, sender)))
                    .expect("order machine has an edge per send");
                let mut oes = vec![None; p];
                oes[c] = Some(partner.id);
                push(Some(e.id), oes, e.guard.and(&partner.guard), e.update.clone(), e.fifo);
            }
        }
    }
    // Remaining silent order edges run solo and unlabeled.
    for (c, om) in orders.iter().enumerate() {
        for oe in &om.edges {
            if oe.psi.is_none() {
                let mut oes = vec![None; p];
                oes[c] = Some(oe.id);
                push(None, oes, oe.guard.clone(), Vec::new(), None);
            }
        }
    }
    SyncSystem { machine: m.clone(), space, count, orders, transitions, modified }
}

/// Builds the synchronized system of a flat machine.
pub fn build_sync(m: &FifoMachine) -> Result<SyncSystem, CounterError> {
    let count = build_counting_abstraction(m);
    let orders = m
        .channels()
        .map(|c| build_order_machine(m, c))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(assemble(m, CounterSpace::new(m), count, orders, false))
}

/// The initial product configuration: every component at its initial
/// state, all counters zero.
pub fn sync_initial(sys: &SyncSystem) -> SyncConfig {
    let mut global = Vec::with_capacity(1 + sys.orders.len());
    global.push(sys.count.initial);
    global.extend(sys.orders.iter().map(|o| o.initial));
    SyncConfig { global, nu: sys.space.zeros() }
}

/// Whether the participants of `ts` are at their source states in
/// `global`, guards aside.
fn control_applicable(sys: &SyncSystem, ts: &SyncTransition, global: &[usize]) -> bool {
    if let Some(e) = ts.count_edge {
        if sys.count.edges[e].source != global[0] {
            return false;
        }
    }
    for (c, oe) in ts.order_edges.iter().enumerate() {
        if let Some(e) = *oe {
            if sys.orders[c].edges[e].source != global[1 + c] {
                return false;
            }
        }
    }
    true
}

fn apply_control(sys: &SyncSystem, ts: &SyncTransition, global: &[usize]) -> Vec<usize> {
    let mut out = global.to_vec();
    if let Some(e) = ts.count_edge {
        out[0] = sys.count.edges[e].target;
    }
    for (c, oe) in ts.order_edges.iter().enumerate() {
        if let Some(e) = *oe {
            out[1 + c] = sys.orders[c].edges[e].target;
        }
    }
    out
}

/// Fires product transition `ts`; `None` when control, guard, or a
/// counter floor blocks it.
pub fn sync_step(sys: &SyncSystem, sc: &SyncConfig, ts: usize) -> Option<SyncConfig> {
    let tr = sys.transitions.get(ts)?;
    if !control_applicable(sys, tr, &sc.global) || !tr.guard.sat(&sc.nu) {
        return None;
    }
    let nu = apply_update(&sc.nu, &tr.update)?;
    Some(SyncConfig { global: apply_control(sys, tr, &sc.global), nu })
}

/// Ids of the product transitions enabled at `sc`.
pub fn sync_enabled(sys: &SyncSystem, sc: &SyncConfig) -> Vec<usize> {
    (0..sys.transitions.len()).filter(|&i| sync_step(sys, sc, i).is_some()).collect()
}

/// Enabled transitions together with their successors.
pub fn sync_successors(sys: &SyncSystem, sc: &SyncConfig) -> Vec<(usize, SyncConfig)> {
    (0..sys.transitions.len()).filter_map(|i| sync_step(sys, sc, i).map(|s| (i, s))).collect()
}

// ---------------------------------------------------------------------------
// Correspondence

/// Reconstructs the FIFO configuration a product configuration stands
/// for, or `None` when none is consistent. The control state comes from
/// the abstraction component. Channel `c`'s content is rebuilt by picking
/// a control path from the order position of `c` to the control state
/// and choosing loop iteration counts so that every transition sending
/// `a` on `c` occurs exactly `nu(a,t)` times along it; the content is
/// the sequence of letters sent on the way. The first consistent choice
/// wins (candidates are scanned in state and schema order).
pub fn correspondence_h(sys: &SyncSystem, sc: &SyncConfig) -> Option<Config> {
    Correspondence::new(sys).h(sc)
}

/// Memoizing wrapper around the correspondence: path schemas are shared
/// across queries, which matters inside the bisimulation checkers.
struct Correspondence<'a> {
    sys: &'a SyncSystem,
    schemas: BTreeMap<(StateId, StateId), Rc<Vec<PathSchema>>>,
    memo: BTreeMap<SyncConfig, Option<Config>>,
}

impl<'a> Correspondence<'a> {
    fn new(sys: &'a SyncSystem) -> Self {
        Correspondence { sys, schemas: BTreeMap::new(), memo: BTreeMap::new() }
    }

    fn schemas_for(&mut self, from: StateId, to: StateId) -> Rc<Vec<PathSchema>> {
        if let Some(v) = self.schemas.get(&(from, to)) {
            return Rc::clone(v);
        }
        let v = Rc::new(
            path_schemas(&self.sys.machine, from, to).expect("product machine is flat"),
        );
        self.schemas.insert((from, to), Rc::clone(&v));
        v
    }

    fn h(&mut self, sc: &SyncConfig) -> Option<Config> {
        if let Some(v) = self.memo.get(sc) {
            return v.clone();
        }
        let v = self.compute(sc);
        self.memo.insert(sc.clone(), v.clone());
        v
    }

    fn compute(&mut self, sc: &SyncConfig) -> Option<Config> {
        let m = &self.sys.machine;
        // The abstraction component is never merged.
        let q0 = self.sys.count.members[sc.global[0]][0];
        let mut contents = Vec::with_capacity(m.n_channels());
        for c in m.channels() {
            let local = sc.global[1 + c.0];
            let members = self.sys.orders[c.0].members[local].clone();
            let mut found = None;
            'members: for s in members {
                let schemas = self.schemas_for(s, q0);
                for schema in schemas.iter() {
                    if let Some(w) = solve_schema(m, &self.sys.space, c, schema, &sc.nu) {
                        found = Some(w);
                        break 'members;
                    }
                }
            }
            contents.push(found?);
        }
        Some(Config::new(q0, ChannelValuation::new(contents)))
    }
}

/// Chooses iteration counts for `schema` so that each send transition of
/// `c` occurs exactly as often as its counters demand, then reads off
/// the sent letters. `None` when the demands are inconsistent.
fn solve_schema(
    m: &FifoMachine,
    space: &CounterSpace,
    c: ChannelId,
    schema: &PathSchema,
    nu: &[u64],
) -> Option<Vec<LetterId>> {
    let mut required: BTreeMap<TransId, u64> = BTreeMap::new();
    for t in m.transitions() {
        if let Action::Send(cc, a) = t.action {
            if cc == c {
                required.insert(t.id, nu[space.id(a, t.id).0]);
            }
        }
    }
    // Occurrences outside loop bodies. A transition can sit both in a
    // body and in a connecting segment; the body then has to supply the
    // difference.
    let mut base: BTreeMap<TransId, u64> = BTreeMap::new();
    let segments = schema.prefix.iter().chain(schema.parts.iter().flat_map(|(_, seg)| seg.iter()));
    for &t in segments {
        *base.entry(t).or_insert(0) += 1;
    }
    let mut iters = Vec::with_capacity(schema.parts.len());
    let mut pinned: BTreeSet<TransId> = BTreeSet::new();
    for (l, _) in &schema.parts {
        let mut n: Option<u64> = None;
        for &t in l.label() {
            if let Some(&req) = required.get(&t) {
                let outside = base.get(&t).copied().unwrap_or(0);
                let want = req.checked_sub(outside)?;
                match n {
                    Some(prev) if prev != want => return None,
                    _ => n = Some(want),
                }
                pinned.insert(t);
            }
        }
        iters.push(n.unwrap_or(0));
    }
    for (&t, &req) in &required {
        if !pinned.contains(&t) && base.get(&t).copied().unwrap_or(0) != req {
            return None;
        }
    }
    let word = schema
        .expand(&iters)
        .iter()
        .filter_map(|&t| match m.trans(t).action {
            Action::Send(cc, a) if cc == c => Some(a),
            _ => None,
        })
        .collect();
    Some(word)
}

// ---------------------------------------------------------------------------
// Bisimulation checks

/// Which simulation condition a violation breaks.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum BisimCondition {
    /// No FIFO configuration corresponds to a reachable product one.
    CorrespondenceUndefined,
    /// A FIFO move has no (weak) match in the product.
    FifoMoveUnmatched,
    /// A silent product move changed the corresponding configuration.
    SilentMoveChangesImage,
    /// A labeled product move disagrees with the FIFO step.
    SyncMoveUnmatched,
    /// A silent move exists where none is allowed.
    SilentMovePresent,
}

/// A counterexample to (weak) bisimilarity.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct BisimViolation {
    pub sync: SyncConfig,
    pub fifo: Option<Config>,
    pub condition: BisimCondition,
    pub detail: String,
}

/// Outcome of a bounded bisimulation check.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum BisimReport {
    /// Every product configuration within the depth satisfied the
    /// conditions; `pairs` were checked.
    Verified { pairs: usize },
    Violation(Box<BisimViolation>),
}

impl BisimReport {
    pub fn is_ok(&self) -> bool {
        matches!(self, BisimReport::Verified { .. })
    }
}

struct BisimChecker<'a> {
    m: &'a FifoMachine,
    sys: &'a SyncSystem,
    corr: Correspondence<'a>,
    closures: BTreeMap<SyncConfig, Rc<Vec<SyncConfig>>>,
    weak: bool,
}

impl BisimChecker<'_> {
    fn violation(
        &self,
        sc: &SyncConfig,
        fifo: Option<Config>,
        condition: BisimCondition,
        detail: String,
    ) -> BisimReport {
        BisimReport::Violation(Box::new(BisimViolation {
            sync: sc.clone(),
            fifo,
            condition,
            detail,
        }))
    }

    /// Configurations reachable from `sc` through silent moves whose
    /// image stays `cfg`. A silent move that loses the image leaves the
    /// relation, so it takes part in no weak match.
    fn image_closure(&mut self, sc: &SyncConfig, cfg: &Config) -> Rc<Vec<SyncConfig>> {
        if let Some(v) = self.closures.get(sc) {
            return Rc::clone(v);
        }
        let mut seen: BTreeSet<SyncConfig> = BTreeSet::new();
        seen.insert(sc.clone());
        let mut queue = VecDeque::from([sc.clone()]);
        while let Some(cur) = queue.pop_front() {
            for (i, nxt) in sync_successors(self.sys, &cur) {
                if self.sys.transitions[i].label.is_none()
                    && !seen.contains(&nxt)
                    && self.corr.h(&nxt).as_ref() == Some(cfg)
                {
                    seen.insert(nxt.clone());
                    queue.push_back(nxt);
                }
            }
        }
        let v = Rc::new(seen.into_iter().collect::<Vec<_>>());
        self.closures.insert(sc.clone(), Rc::clone(&v));
        v
    }

    /// Checks the simulation conditions at one product configuration
    /// whose image is `cfg`: every FIFO move from `cfg` is matched
    /// (weakly or directly), silent product moves keep the image or drop
    /// out of the relation (and are forbidden outright in the strict
    /// variant), and labeled product moves agree with the FIFO step and
    /// stay inside the relation.
    fn check_pair(&mut self, sc: &SyncConfig, cfg: &Config) -> Option<BisimReport> {
        for (t, cfg2) in successors(self.m, cfg, Semantics::Perfect) {
            if !self.fifo_move_matched(sc, cfg, t, &cfg2) {
                return Some(self.violation(
                    sc,
                    Some(cfg.clone()),
                    BisimCondition::FifoMoveUnmatched,
                    format!("transition {} has no product match", self.m.trans(t).name),
                ));
            }
        }
        for ts in sync_enabled(self.sys, sc) {
            let sc2 = sync_step(self.sys, sc, ts).expect("enabled transition fires");
            match self.sys.transitions[ts].label {
                None => {
                    if !self.weak {
                        return Some(self.violation(
                            sc,
                            Some(cfg.clone()),
                            BisimCondition::SilentMovePresent,
                            format!("silent product transition {ts} enabled"),
                        ));
                    }
                    // A silent move may run the order component past
                    // content it can no longer account for; the result
                    // has no image and never regains one, so it sits
                    // outside the relation rather than violating it.
                    if let Some(img) = self.corr.h(&sc2) {
                        if img != *cfg {
                            return Some(self.violation(
                                sc,
                                Some(cfg.clone()),
                                BisimCondition::SilentMoveChangesImage,
                                format!("silent product transition {ts} moved the image"),
                            ));
                        }
                    }
                }
                Some(t) => {
                    let nexts = step(self.m, cfg, t, Semantics::Perfect);
                    let image = self.corr.h(&sc2);
                    if nexts.len() != 1 || image.as_ref() != nexts.first() {
                        return Some(self.violation(
                            sc,
                            Some(cfg.clone()),
                            BisimCondition::SyncMoveUnmatched,
                            format!(
                                "product fires {} but the machine cannot follow",
                                self.m.trans(t).name
                            ),
                        ));
                    }
                }
            }
        }
        None
    }

    fn fifo_move_matched(&mut self, sc: &SyncConfig, cfg: &Config, t: TransId, cfg2: &Config) -> bool {
        if self.weak {
            let from = self.image_closure(sc, cfg);
            for s1 in from.iter() {
                for ts in sync_enabled(self.sys, s1) {
                    if self.sys.transitions[ts].label != Some(t) {
                        continue;
                    }
                    let mid = sync_step(self.sys, s1, ts).expect("enabled transition fires");
                    // Silent moves never change an image, so closing
                    // after the labeled step cannot reach `cfg2` unless
                    // the step itself already did.
                    if self.corr.h(&mid).as_ref() == Some(cfg2) {
                        return true;
                    }
                }
            }
            false
        } else {
            sync_successors(self.sys, sc).into_iter().any(|(ts, s2)| {
                self.sys.transitions[ts].label == Some(t)
                    && self.corr.h(&s2).as_ref() == Some(cfg2)
            })
        }
    }
}

fn check_bisim_bounded(
    m: &FifoMachine,
    sys: &SyncSystem,
    depth: usize,
    weak: bool,
) -> BisimReport {
    let mut checker = BisimChecker {
        m,
        sys,
        corr: Correspondence::new(sys),
        closures: BTreeMap::new(),
        weak,
    };
    let init = sync_initial(sys);
    if depth > 0 && checker.corr.h(&init).is_none() {
        return checker.violation(
            &init,
            None,
            BisimCondition::CorrespondenceUndefined,
            "initial configuration has no image".into(),
        );
    }
    let mut visited: BTreeSet<SyncConfig> = BTreeSet::new();
    visited.insert(init.clone());
    let mut frontier = vec![init];
    let mut pairs = 0usize;
    for _ in 0..depth {
        let mut next = Vec::new();
        for sc in &frontier {
            // Configurations without an image are outside the relation:
            // they are traversed so labeled escapes get flagged at their
            // source, but carry no conditions of their own.
            if let Some(cfg) = checker.corr.h(sc) {
                if let Some(v) = checker.check_pair(sc, &cfg) {
                    return v;
                }
                pairs += 1;
            }
            for (_, sc2) in sync_successors(sys, sc) {
                if visited.insert(sc2.clone()) {
                    next.push(sc2);
                }
            }
        }
        frontier = next;
        if frontier.is_empty() {
            break;
        }
    }
    BisimReport::Verified { pairs }
}

/// Checks the weak bisimulation between a machine and its synchronized
/// system on every product configuration within `depth` breadth-first
/// levels (depth 0 checks nothing). The relation pairs a product
/// configuration with its image, so configurations without one carry no
/// conditions; FIFO moves may be matched through image-preserving silent
/// product moves before the labeled one.
pub fn check_weak_bisim(m: &FifoMachine, sys: &SyncSystem, depth: usize) -> BisimReport {
    check_bisim_bounded(m, sys, depth, true)
}

/// The strict variant for silent-free systems: moves must match one for
/// one and any enabled silent transition is itself a violation.
pub fn check_bisim(m: &FifoMachine, sys: &SyncSystem, depth: usize) -> BisimReport {
    check_bisim_bounded(m, sys, depth, false)
}

// ---------------------------------------------------------------------------
// Modified product (silent-edge elimination)

/// Union-find over FIFO state ids with deterministic representative
/// naming: cycle states win over plain ones, earlier ids break ties,
/// and when neither endpoint lies on a cycle the edge target wins.
struct Classes {
    parent: Vec<usize>,
    rep: Vec<usize>,
}

impl Classes {
    fn new(n: usize) -> Self {
        Classes { parent: (0..n).collect(), rep: (0..n).collect() }
    }

    fn find(&mut self, x: usize) -> usize {
        if self.parent[x] != x {
            let r = self.find(self.parent[x]);
            self.parent[x] = r;
        }
        self.parent[x]
    }

    fn union(&mut self, source: usize, target: usize, on_cycle: &dyn Fn(usize) -> bool) {
        let a = self.find(source);
        let b = self.find(target);
        if a == b {
            return;
        }
        let (ra, rb) = (self.rep[a], self.rep[b]);
        let rep = match (on_cycle(ra), on_cycle(rb)) {
            (true, false) => ra,
            (false, true) => rb,
            (true, true) => ra.min(rb),
            (false, false) => rb,
        };
        self.parent[b] = a;
        self.rep[a] = rep;
    }
}

/// Merges the endpoints of every silent edge of the order machine and
/// drops the edge, re-attaching loop zero tests to the send edges that
/// can only run after the loop: an edge whose FIFO transition lies
/// outside a loop body but whose source is control-reachable from the
/// loop is guarded by that loop's sum.
fn build_modified_order(
    m: &FifoMachine,
    analysis: &FlatAnalysis,
    space: &CounterSpace,
    c: ChannelId,
) -> Result<LabeledCounterMachine, CounterError> {
    let base = build_order_machine(m, c)?;
    let n = m.n_states();
    let mut classes = Classes::new(n);
    let on_cycle = |q: usize| analysis.loop_at(StateId(q)).is_some();
    for e in &base.edges {
        if e.psi.is_none() {
            classes.union(e.source, e.target, &on_cycle);
        }
    }
    // Classes sorted by representative id become the new states.
    let roots: Vec<usize> = (0..n).map(|q| classes.find(q)).collect();
    let mut by_root: BTreeMap<usize, Vec<StateId>> = BTreeMap::new();
    for q in 0..n {
        by_root.entry(roots[q]).or_default().push(StateId(q));
    }
    let mut ordered: Vec<(usize, Vec<StateId>)> = by_root
        .into_iter()
        .map(|(root, members)| (classes.rep[root], members))
        .collect();
    ordered.sort();
    let local_of = {
        let mut map = vec![usize::MAX; n];
        for (i, (_, members)) in ordered.iter().enumerate() {
            for &q in members {
                map[q.0] = i;
            }
        }
        map
    };
    let states: Vec<String> =
        ordered.iter().map(|&(rep, _)| m.state_name(StateId(rep)).to_string()).collect();
    let members: Vec<Vec<StateId>> = ordered.into_iter().map(|(_, ms)| ms).collect();

    // Keep the send edges, rerouted through the classes, with the loop
    // guards pushed onto everything that runs after the loop.
    let mut sums: Vec<(Vec<StateId>, Vec<CounterId>)> = Vec::new();
    let mut seen_sccs = BTreeSet::new();
    for q in m.states() {
        if let Some(l) = analysis.loop_at(q) {
            if seen_sccs.insert(analysis.scc_of(q)) {
                sums.push((l.states(m), after_loop_counters(m, space, l.label())));
            }
        }
    }
    let reachable_from = |starts: &[StateId]| -> BTreeSet<StateId> {
        let mut seen: BTreeSet<StateId> = starts.iter().copied().collect();
        let mut queue: VecDeque<StateId> = seen.iter().copied().collect();
        while let Some(q) = queue.pop_front() {
            for &t in m.out(q) {
                let tgt = m.trans(t).target;
                if seen.insert(tgt) {
                    queue.push_back(tgt);
                }
            }
        }
        seen
    };
    let mut edges = Vec::new();
    for e in &base.edges {
        if e.psi.is_none() {
            continue;
        }
        let t = e.fifo.expect("order edges track transitions");
        let mut guard = e.guard.clone();
        for (loop_states, sum) in &sums {
            let body_loop = analysis.loop_at(loop_states[0]).expect("states lie on their loop");
            if body_loop.label().contains(&t) {
                continue;
            }
            if reachable_from(loop_states).contains(&m.trans(t).source) {
                guard = guard.and(&Guard::zero_of(sum.clone()));
            }
        }
        let id = edges.len();
        edges.push(CounterEdge {
            id,
            source: local_of[e.source],
            target: local_of[e.target],
            guard,
            update: Vec::new(),
            psi: e.psi,
            fifo: e.fifo,
        });
    }
    Ok(LabeledCounterMachine {
        name: format!("order_{}", m.channel_name(c)),
        states,
        members,
        initial: local_of[m.initial().0],
        n_counters: space.len(),
        edges,
    })
}

/// Builds the synchronized system with silent-free order machines. Every
/// product transition of the result is labeled.
pub fn build_modified_sync(m: &FifoMachine) -> Result<SyncSystem, CounterError> {
    let analysis = check_flat(m).map_err(|w| not_flat(m, w.state))?;
    let space = CounterSpace::new(m);
    let count = build_counting_abstraction(m);
    let orders = m
        .channels()
        .map(|c| build_modified_order(m, &analysis, &space, c))
        .collect::<Result<Vec<_>, _>>()?;
    let sys = assemble(m, space, count, orders, true);
    debug_assert!(sys.transitions.iter().all(|t| t.label.is_some()));
    Ok(sys)
}

// ---------------------------------------------------------------------------
// Trace flattening

/// A flat counter machine together with the maps tying it back to the
/// synchronized system it was unrolled from: `state_map` sends each flat
/// state to the product control tuple it copies, `trans_map` each flat
/// edge to the product transition it fires.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct FlatteningMap {
    pub flat: LabeledCounterMachine,
    pub state_map: Vec<Vec<usize>>,
    pub trans_map: Vec<usize>,
}

struct Flattener<'a> {
    sys: &'a SyncSystem,
    analysis: FlatAnalysis,
    budget: usize,
    globals: Vec<Vec<usize>>,
    names: Vec<String>,
    name_uses: BTreeMap<String, usize>,
    edges: Vec<CounterEdge>,
    trans_map: Vec<usize>,
}

impl Flattener<'_> {
    fn global_name(&self, g: &[usize]) -> String {
        let mut parts = vec![self.sys.count.states[g[0]].clone()];
        for (c, &q) in g[1..].iter().enumerate() {
            parts.push(self.sys.orders[c].states[q].clone());
        }
        format!("({})", parts.join(","))
    }

    fn add_state(&mut self, g: Vec<usize>) -> Result<usize, CounterError> {
        if self.globals.len() >= self.budget {
            return Err(CounterError::BudgetExceeded { size: self.globals.len() });
        }
        let base = self.global_name(&g);
        let uses = self.name_uses.entry(base.clone()).or_insert(0);
        let name = if *uses == 0 { base.clone() } else { format!("{base}#{}", *uses) };
        *uses += 1;
        self.globals.push(g);
        self.names.push(name);
        Ok(self.globals.len() - 1)
    }

    fn add_edge(&mut self, source: usize, target: usize, ts: usize) {
        let tr = &self.sys.transitions[ts];
        let id = self.edges.len();
        self.edges.push(CounterEdge {
            id,
            source,
            target,
            guard: tr.guard.clone(),
            update: tr.update.clone(),
            psi: None,
            fifo: tr.label,
        });
        self.trans_map.push(ts);
    }

    /// The FIFO transitions the participants of `ts` are derived from.
    fn participant_fifo(&self, ts: &SyncTransition) -> Vec<TransId> {
        let mut out = Vec::new();
        if let Some(e) = ts.count_edge {
            out.extend(self.sys.count.edges[e].fifo);
        }
        for (c, oe) in ts.order_edges.iter().enumerate() {
            if let Some(e) = *oe {
                out.extend(self.sys.orders[c].edges[e].fifo);
            }
        }
        out
    }

    /// A move leaves the current lasso when some participant steps off
    /// its elementary loop other than along the loop body.
    fn is_exit(&self, ts: &SyncTransition) -> bool {
        self.participant_fifo(ts).iter().any(|&t| {
            match self.analysis.loop_at(self.sys.machine.trans(t).source) {
                Some(l) => !l.label().contains(&t),
                None => false,
            }
        })
    }

    /// Unrolls one lasso: follows forced moves from `g0` until the
    /// control tuple revisits the path, recording every branching move
    /// for later expansion. A branching move whose target already lies
    /// on the path closes the lasso itself when nothing else has, which
    /// keeps mutually exclusive cycle moves from unrolling forever.
    /// Returns the entry state and the branches still to expand.
    fn walk(&mut self, g0: Vec<usize>) -> Result<(usize, Vec<(usize, usize)>), CounterError> {
        let entry = self.add_state(g0.clone())?;
        let mut branches: Vec<(usize, usize)> = Vec::new();
        let mut cycled = false;
        // (control tuple, state, whether the incoming move was silent)
        let mut path: Vec<(Vec<usize>, usize, bool)> = vec![(g0, entry, false)];
        loop {
            let (gcur, cur) = {
                let last = path.last().expect("path never empties");
                (last.0.clone(), last.1)
            };
            let moves: Vec<usize> = (0..self.sys.transitions.len())
                .filter(|&i| control_applicable(self.sys, &self.sys.transitions[i], &gcur))
                .collect();
            let mut rest = Vec::new();
            for i in moves {
                if self.is_exit(&self.sys.transitions[i]) {
                    branches.push((cur, i));
                } else {
                    rest.push(i);
                }
            }
            // Single-file discipline: fire only when the choice cannot
            // matter. Moves sharing a component, several observable
            // moves, or a guarded silent next to anything else may
            // interleave in semantically different orders, so each goes
            // to its own branch. Unguarded silents commute with
            // everything (no updates, no guard to invalidate).
            let mut comp_count: BTreeMap<usize, usize> = BTreeMap::new();
            for &i in &rest {
                let ts = &self.sys.transitions[i];
                if ts.count_edge.is_some() {
                    *comp_count.entry(0).or_insert(0) += 1;
                }
                for (c, oe) in ts.order_edges.iter().enumerate() {
                    if oe.is_some() {
                        *comp_count.entry(1 + c).or_insert(0) += 1;
                    }
                }
            }
            let conflict = comp_count.values().any(|&k| k >= 2);
            let observables =
                rest.iter().filter(|&&i| self.sys.transitions[i].label.is_some()).count();
            let guarded_silent = rest.iter().any(|&i| {
                let ts = &self.sys.transitions[i];
                ts.label.is_none() && !ts.guard.is_true()
            });
            if conflict || (rest.len() >= 2 && (observables >= 2 || guarded_silent)) {
                branches.extend(rest.iter().map(|&i| (cur, i)));
                break;
            }
            let mut fire = None;
            for &i in &rest {
                if self.sys.transitions[i].label.is_some() {
                    continue;
                }
                let gt = apply_control(self.sys, &self.sys.transitions[i], &gcur);
                // Skip silents that would only close a silent cycle:
                // they cannot change anything observable.
                let pos = path.iter().rposition(|(g, _, _)| *g == gt);
                let pure = pos.is_some_and(|p| path[p + 1..].iter().all(|&(_, _, s)| s));
                if !pure {
                    fire = Some(i);
                    break;
                }
            }
            if fire.is_none() {
                fire = rest.iter().copied().find(|&i| self.sys.transitions[i].label.is_some());
            }
            let Some(i) = fire else { break };
            let silent = self.sys.transitions[i].label.is_none();
            let gt = apply_control(self.sys, &self.sys.transitions[i], &gcur);
            if let Some(&(_, idx, _)) = path.iter().find(|(g, _, _)| *g == gt) {
                self.add_edge(cur, idx, i);
                cycled = true;
                break;
            }
            let idx = self.add_state(gt.clone())?;
            self.add_edge(cur, idx, i);
            path.push((gt, idx, silent));
        }
        // At most one cycle per fragment keeps the result flat, so after
        // a close every further revisit unrolls into a fresh copy.
        let mut out = Vec::new();
        for (src, ts) in branches {
            let gt = apply_control(self.sys, &self.sys.transitions[ts], &self.globals[src]);
            if !cycled {
                if let Some(&(_, idx, _)) = path.iter().find(|(g, _, _)| *g == gt) {
                    self.add_edge(src, idx, ts);
                    cycled = true;
                    continue;
                }
            }
            out.push((src, ts));
        }
        Ok((entry, out))
    }
}

/// Unrolls a synchronized system over a flat machine into a flat counter
/// machine with the same observable traces from `init`. Each elementary
/// behavior becomes one lasso; moves that leave a loop or compete for a
/// component fork off fresh copies, so the result is a tree of lassos.
/// Fails with [`CounterError::BudgetExceeded`] once `budget` states have
/// been created ([`DEFAULT_FLATTEN_BUDGET`] is a reasonable bound).
pub fn trace_flatten(
    sys: &SyncSystem,
    init: &SyncConfig,
    budget: usize,
) -> Result<FlatteningMap, CounterError> {
    let analysis = check_flat(&sys.machine).map_err(|w| not_flat(&sys.machine, w.state))?;
    let mut fl = Flattener {
        sys,
        analysis,
        budget,
        globals: Vec::new(),
        names: Vec::new(),
        name_uses: BTreeMap::new(),
        edges: Vec::new(),
        trans_map: Vec::new(),
    };
    let mut queue: VecDeque<(usize, usize)> = VecDeque::new();
    let (root, branches) = fl.walk(init.global.clone())?;
    queue.extend(branches);
    while let Some((src, ts)) = queue.pop_front() {
        let g = apply_control(sys, &sys.transitions[ts], &fl.globals[src]);
        let (entry, branches) = fl.walk(g)?;
        fl.add_edge(src, entry, ts);
        queue.extend(branches);
    }
    let members = fl
        .globals
        .iter()
        .map(|g| sys.count.members[g[0]].clone())
        .collect();
    let flat = LabeledCounterMachine {
        name: "flat".into(),
        states: fl.names,
        members,
        initial: root,
        n_counters: sys.space.len(),
        edges: fl.edges,
    };
    Ok(FlatteningMap { flat, state_map: fl.globals, trans_map: fl.trans_map })
}

/// Structural soundness of a flattening: the result is flat and every
/// edge projects to a product transition applicable at the source image
/// and landing on the target image with the same guard and update.
pub fn is_flattening(sys: &SyncSystem, map: &FlatteningMap) -> bool {
    if !counter_is_flat(&map.flat) {
        return false;
    }
    if map.state_map.len() != map.flat.states.len()
        || map.trans_map.len() != map.flat.edges.len()
    {
        return false;
    }
    map.flat.edges.iter().all(|e| {
        let Some(&ts) = map.trans_map.get(e.id) else { return false };
        let Some(tr) = sys.transitions.get(ts) else { return false };
        let src = &map.state_map[e.source];
        control_applicable(sys, tr, src)
            && apply_control(sys, tr, src) == map.state_map[e.target]
            && e.guard == tr.guard
            && e.update == tr.update
            && e.fifo == tr.label
    })
}

// ---------------------------------------------------------------------------
// Observable traces

/// All observable transition sequences of length at most `max_len` the
/// product can perform from `init`, silent moves elided. The enumeration
/// is exact: silent moves never change counters, so the search space per
/// trace is finite.
pub fn sync_obs_traces(
    sys: &SyncSystem,
    init: &SyncConfig,
    max_len: usize,
) -> Result<BTreeSet<Vec<TransId>>, CounterError> {
    let mut traces = BTreeSet::new();
    let mut seen: BTreeSet<(SyncConfig, Vec<TransId>)> = BTreeSet::new();
    seen.insert((init.clone(), Vec::new()));
    let mut queue = VecDeque::from([(init.clone(), Vec::new())]);
    traces.insert(Vec::new());
    while let Some((sc, trace)) = queue.pop_front() {
        if seen.len() > TRACE_NODE_CAP {
            return Err(CounterError::BudgetExceeded { size: seen.len() });
        }
        for (ts, sc2) in sync_successors(sys, &sc) {
            let mut trace2 = trace.clone();
            if let Some(t) = sys.transitions[ts].label {
                if trace.len() == max_len {
                    continue;
                }
                trace2.push(t);
            }
            traces.insert(trace2.clone());
            if seen.insert((sc2.clone(), trace2.clone())) {
                queue.push_back((sc2, trace2));
            }
        }
    }
    Ok(traces)
}

/// The counter-machine analogue of [`sync_obs_traces`]: edges with a
/// `fifo` label are observable, the rest silent. Exactness requires
/// silent edges not to update counters, which holds for every machine
/// built here.
pub fn counter_obs_traces(
    cm: &LabeledCounterMachine,
    init: &CounterConfig,
    max_len: usize,
) -> Result<BTreeSet<Vec<TransId>>, CounterError> {
    let mut traces = BTreeSet::new();
    let mut seen: BTreeSet<(CounterConfig, Vec<TransId>)> = BTreeSet::new();
    seen.insert((init.clone(), Vec::new()));
    let mut queue = VecDeque::from([(init.clone(), Vec::new())]);
    traces.insert(Vec::new());
    while let Some((cfg, trace)) = queue.pop_front() {
        if seen.len() > TRACE_NODE_CAP {
            return Err(CounterError::BudgetExceeded { size: seen.len() });
        }
        for e in 0..cm.edges.len() {
            let Some(cfg2) = counter_step(cm, &cfg, e) else { continue };
            let mut trace2 = trace.clone();
            if let Some(t) = cm.edges[e].fifo {
                if trace.len() == max_len {
                    continue;
                }
                trace2.push(t);
            }
            traces.insert(trace2.clone());
            if seen.insert((cfg2.clone(), trace2.clone())) {
                queue.push_back((cfg2, trace2));
            }
        }
    }
    Ok(traces)
}

// ---------------------------------------------------------------------------
// Export

/// What to serialize: a synchronized system, or a flattening together
/// with the system it unrolls (the system supplies the counter names).
#[derive(Clone, Copy)]
pub enum CounterExport<'a> {
    Sync(&'a SyncSystem),
    Flattening(&'a SyncSystem, &'a FlatteningMap),
}

fn render_update(space: &CounterSpace, update: &[(CounterId, i64)]) -> String {
    let mut parts = Vec::new();
    for &(k, d) in update {
        match d {
            1 => parts.push(format!("inc {}", space.name(k))),
            -1 => parts.push(format!("dec {}", space.name(k))),
            _ => parts.push(format!("add {} {}", space.name(k), d)),
        }
    }
    parts.join(" ")
}

/// Renders one labeled counter machine in the fast-to-read text style:
/// one `state` line per state (merged members listed) and one `edge`
/// line per edge with its guard, update, synchronization letter and
/// originating transition.
pub fn render_counter_machine(
    space: &CounterSpace,
    m: &FifoMachine,
    cm: &LabeledCounterMachine,
) -> String {
    let mut out = String::new();
    render_lcm(&mut out, space, m, cm);
    out
}

fn render_lcm(out: &mut String, space: &CounterSpace, m: &FifoMachine, cm: &LabeledCounterMachine) {
    let _ = writeln!(out, "machine {}", cm.name);
    for (i, name) in cm.states.iter().enumerate() {
        let _ = write!(out, "  state {name}");
        if i == cm.initial {
            let _ = write!(out, " init");
        }
        if cm.members[i].len() != 1 {
            let names: Vec<&str> = cm.members[i].iter().map(|&q| m.state_name(q)).collect();
            let _ = write!(out, " members {}", names.join(" "));
        }
        let _ = writeln!(out);
    }
    for e in &cm.edges {
        let _ = write!(out, "  edge e{} {} -> {}", e.id, cm.states[e.source], cm.states[e.target]);
        if !e.guard.is_true() {
            let _ = write!(out, " guard {}", e.guard.render(space));
        }
        if !e.update.is_empty() {
            let _ = write!(out, " {}", render_update(space, &e.update));
        }
        if let Some((a, t)) = e.psi {
            let _ = write!(out, " psi ({},{})", m.letter_name(a), m.trans(t).name);
        }
        if let Some(t) = e.fifo {
            let _ = write!(out, " fifo {}", m.trans(t).name);
        }
        let _ = writeln!(out);
    }
}

fn render_sync_fast(sys: &SyncSystem) -> String {
    let m = &sys.machine;
    let mut out = String::new();
    let _ = writeln!(out, "system {}", if sys.modified { "sync modified" } else { "sync" });
    let names: Vec<&str> = (0..sys.space.len()).map(|k| sys.space.name(CounterId(k))).collect();
    let _ = writeln!(out, "counters {}", names.join(" "));
    render_lcm(&mut out, &sys.space, m, &sys.count);
    for om in &sys.orders {
        render_lcm(&mut out, &sys.space, m, om);
    }
    let _ = writeln!(out, "sync");
    for tr in &sys.transitions {
        let _ = write!(out, "  trans s{}", tr.id);
        if let Some(e) = tr.count_edge {
            let _ = write!(out, " count e{e}");
        }
        for (c, oe) in tr.order_edges.iter().enumerate() {
            if let Some(e) = *oe {
                let _ = write!(out, " order[{}] e{e}", m.channel_name(ChannelId(c)));
            }
        }
        match tr.label {
            Some(t) => {
                let _ = writeln!(out, " label {}", m.trans(t).name);
            }
            None => {
                let _ = writeln!(out, " silent");
            }
        }
    }
    out
}

fn render_flattening_fast(sys: &SyncSystem, map: &FlatteningMap) -> String {
    let m = &sys.machine;
    let cm = &map.flat;
    let mut out = String::new();
    let _ = writeln!(out, "system flattening");
    let names: Vec<&str> = (0..sys.space.len()).map(|k| sys.space.name(CounterId(k))).collect();
    let _ = writeln!(out, "counters {}", names.join(" "));
    let _ = writeln!(out, "machine {}", cm.name);
    for (i, name) in cm.states.iter().enumerate() {
        let image: Vec<&str> = {
            let g = &map.state_map[i];
            let mut parts = vec![sys.count.states[g[0]].as_str()];
            parts.extend(g[1..].iter().enumerate().map(|(c, &q)| sys.orders[c].states[q].as_str()));
            parts
        };
        let _ = write!(out, "  state {name}");
        if i == cm.initial {
            let _ = write!(out, " init");
        }
        let _ = writeln!(out, " image ({})", image.join(","));
    }
    for e in &cm.edges {
        let _ = write!(
            out,
            "  edge e{} {} -> {} via s{}",
            e.id, cm.states[e.source], cm.states[e.target], map.trans_map[e.id]
        );
        if !e.guard.is_true() {
            let _ = write!(out, " guard {}", e.guard.render(&sys.space));
        }
        if !e.update.is_empty() {
            let _ = write!(out, " {}", render_update(&sys.space, &e.update));
        }
        match e.fifo {
            Some(t) => {
                let _ = writeln!(out, " label {}", m.trans(t).name);
            }
            None => {
                let _ = writeln!(out, " silent");
            }
        }
    }
    out
}

fn guard_json(space: &CounterSpace, g: &Guard) -> serde_json::Value {
    serde_json::json!({
        "zero_sum": g.zero_sum.iter().map(|&k| space.name(k)).collect::<Vec<_>>(),
        "pos": g.pos.iter().map(|&k| space.name(k)).collect::<Vec<_>>(),
    })
}

fn update_json(space: &CounterSpace, u: &[(CounterId, i64)]) -> serde_json::Value {
    serde_json::Value::Array(
        u.iter()
            .map(|&(k, d)| serde_json::json!([space.name(k), d]))
            .collect(),
    )
}

fn lcm_json(space: &CounterSpace, m: &FifoMachine, cm: &LabeledCounterMachine) -> serde_json::Value {
    serde_json::json!({
        "name": cm.name,
        "states": cm.states,
        "members": cm.members.iter().map(|ms| {
            ms.iter().map(|&q| m.state_name(q)).collect::<Vec<_>>()
        }).collect::<Vec<_>>(),
        "initial": cm.initial,
        "edges": cm.edges.iter().map(|e| serde_json::json!({
            "id": e.id,
            "source": e.source,
            "target": e.target,
            "guard": guard_json(space, &e.guard),
            "update": update_json(space, &e.update),
            "psi": e.psi.map(|(a, t)| format!("({},{})", m.letter_name(a), m.trans(t).name)),
            "fifo": e.fifo.map(|t| m.trans(t).name.clone()),
        })).collect::<Vec<_>>(),
    })
}

fn sync_json(sys: &SyncSystem) -> serde_json::Value {
    let m = &sys.machine;
    let machine: serde_json::Value =
        serde_json::from_str(&machine_to_json(m)).expect("machine document is json");
    serde_json::json!({
        "machine": machine,
        "modified": sys.modified,
        "counters": (0..sys.space.len()).map(|k| sys.space.name(CounterId(k))).collect::<Vec<_>>(),
        "count": lcm_json(&sys.space, m, &sys.count),
        "orders": sys.orders.iter().map(|om| lcm_json(&sys.space, m, om)).collect::<Vec<_>>(),
        "transitions": sys.transitions.iter().map(|tr| serde_json::json!({
            "id": tr.id,
            "count_edge": tr.count_edge,
            "order_edges": tr.order_edges,
            "guard": guard_json(&sys.space, &tr.guard),
            "update": update_json(&sys.space, &tr.update),
            "label": tr.label.map(|t| m.trans(t).name.clone()),
        })).collect::<Vec<_>>(),
    })
}

fn flattening_json(sys: &SyncSystem, map: &FlatteningMap) -> serde_json::Value {
    let m = &sys.machine;
    serde_json::json!({
        "system": "flattening",
        "counters": (0..sys.space.len()).map(|k| sys.space.name(CounterId(k))).collect::<Vec<_>>(),
        "flat": lcm_json(&sys.space, m, &map.flat),
        "state_map": map.state_map,
        "trans_map": map.trans_map,
    })
}

/// Serializes a counter system. `format` is `"fast"` for the line-based
/// text format or `"json"` for the document format; JSON sync documents
/// round-trip through [`sync_from_json`].
pub fn export_counter_system(what: CounterExport, format: &str) -> Result<String, CounterError> {
    match format {
        "fast" => Ok(match what {
            CounterExport::Sync(sys) => render_sync_fast(sys),
            CounterExport::Flattening(sys, map) => render_flattening_fast(sys, map),
        }),
        "json" => {
            let v = match what {
                CounterExport::Sync(sys) => sync_json(sys),
                CounterExport::Flattening(sys, map) => flattening_json(sys, map),
            };
            Ok(serde_json::to_string_pretty(&v).expect("document serializes"))
        }
        other => Err(CounterError::UnknownFormat { format: other.to_string() }),
    }
}

fn doc_err<T: std::fmt::Display>(message: T) -> CounterError {
    CounterError::Document { message: message.to_string() }
}

fn as_usize(v: &serde_json::Value, what: &str) -> Result<usize, CounterError> {
    v.as_u64().map(|n| n as usize).ok_or_else(|| doc_err(format!("{what} is not an index")))
}

fn guard_from_json(space: &CounterSpace, v: &serde_json::Value) -> Result<Guard, CounterError> {
    let list = |field: &str| -> Result<Vec<CounterId>, CounterError> {
        v.get(field)
            .and_then(|x| x.as_array())
            .ok_or_else(|| doc_err(format!("guard lacks {field}")))?
            .iter()
            .map(|n| {
                let name = n.as_str().ok_or_else(|| doc_err("guard entry is not a name"))?;
                space.by_name(name).ok_or_else(|| doc_err(format!("unknown counter {name}")))
            })
            .collect()
    };
    Ok(Guard { zero_sum: list("zero_sum")?, pos: list("pos")? })
}

fn update_from_json(
    space: &CounterSpace,
    v: &serde_json::Value,
) -> Result<Vec<(CounterId, i64)>, CounterError> {
    v.as_array()
        .ok_or_else(|| doc_err("update is not an array"))?
        .iter()
        .map(|pair| {
            let arr = pair.as_array().filter(|a| a.len() == 2);
            let arr = arr.ok_or_else(|| doc_err("update entry is not a pair"))?;
            let name = arr[0].as_str().ok_or_else(|| doc_err("update counter is not a name"))?;
            let k = space.by_name(name).ok_or_else(|| doc_err(format!("unknown counter {name}")))?;
            let d = arr[1].as_i64().ok_or_else(|| doc_err("update delta is not an integer"))?;
            Ok((k, d))
        })
        .collect()
}

fn lcm_from_json(
    space: &CounterSpace,
    m: &FifoMachine,
    v: &serde_json::Value,
) -> Result<LabeledCounterMachine, CounterError> {
    let name = v
        .get("name")
        .and_then(|x| x.as_str())
        .ok_or_else(|| doc_err("machine lacks a name"))?
        .to_string();
    let states: Vec<String> = v
        .get("states")
        .and_then(|x| x.as_array())
        .ok_or_else(|| doc_err("machine lacks states"))?
        .iter()
        .map(|s| {
            s.as_str().map(str::to_string).ok_or_else(|| doc_err("state is not a name"))
        })
        .collect::<Result<_, _>>()?;
    let members: Vec<Vec<StateId>> = v
        .get("members")
        .and_then(|x| x.as_array())
        .ok_or_else(|| doc_err("machine lacks members"))?
        .iter()
        .map(|ms| {
            ms.as_array()
                .ok_or_else(|| doc_err("members entry is not a list"))?
                .iter()
                .map(|s| {
                    let name = s.as_str().ok_or_else(|| doc_err("member is not a name"))?;
                    m.state_by_name(name)
                        .ok_or_else(|| doc_err(format!("unknown control state {name}")))
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;
    if members.len() != states.len() {
        return Err(doc_err("members do not match states"));
    }
    let initial = as_usize(v.get("initial").unwrap_or(&serde_json::Value::Null), "initial")?;
    if initial >= states.len() {
        return Err(doc_err("initial state out of range"));
    }
    let edges: Vec<CounterEdge> = v
        .get("edges")
        .and_then(|x| x.as_array())
        .ok_or_else(|| doc_err("machine lacks edges"))?
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let source = as_usize(e.get("source").unwrap_or(&serde_json::Value::Null), "source")?;
            let target = as_usize(e.get("target").unwrap_or(&serde_json::Value::Null), "target")?;
            if source >= states.len() || target >= states.len() {
                return Err(doc_err("edge endpoint out of range"));
            }
            let guard = guard_from_json(
                space,
                e.get("guard").ok_or_else(|| doc_err("edge lacks a guard"))?,
            )?;
            let update = update_from_json(
                space,
                e.get("update").ok_or_else(|| doc_err("edge lacks an update"))?,
            )?;
            let psi = match e.get("psi") {
                None | Some(serde_json::Value::Null) => None,
                Some(p) => {
                    let name = p.as_str().ok_or_else(|| doc_err("psi is not a name"))?;
                    let k = space
                        .by_name(name)
                        .ok_or_else(|| doc_err(format!("unknown synchronization letter {name}")))?;
                    Some(space.pair(k))
                }
            };
            let fifo = match e.get("fifo") {
                None | Some(serde_json::Value::Null) => None,
                Some(t) => {
                    let name = t.as_str().ok_or_else(|| doc_err("fifo is not a name"))?;
                    Some(
                        m.trans_by_name(name)
                            .ok_or_else(|| doc_err(format!("unknown transition {name}")))?,
                    )
                }
            };
            Ok(CounterEdge { id: i, source, target, guard, update, psi, fifo })
        })
        .collect::<Result<_, _>>()?;
    Ok(LabeledCounterMachine {
        name,
        states,
        members,
        initial,
        n_counters: space.len(),
        edges,
    })
}

/// Parses a synchronized system from its JSON document. The embedded
/// machine is rebuilt first; counter names must match its canonical
/// counter space.
pub fn sync_from_json(text: &str) -> Result<SyncSystem, CounterError> {
    let v: serde_json::Value = serde_json::from_str(text).map_err(doc_err)?;
    let machine_doc = v.get("machine").ok_or_else(|| doc_err("document lacks a machine"))?;
    let m = machine_from_json(&machine_doc.to_string())?;
    let space = CounterSpace::new(&m);
    let counters = v
        .get("counters")
        .and_then(|x| x.as_array())
        .ok_or_else(|| doc_err("document lacks counters"))?;
    if counters.len() != space.len()
        || counters
            .iter()
            .zip(0..space.len())
            .any(|(n, k)| n.as_str() != Some(space.name(CounterId(k))))
    {
        return Err(doc_err("counters do not match the machine"));
    }
    let modified = v.get("modified").and_then(|x| x.as_bool()).unwrap_or(false);
    let count =
        lcm_from_json(&space, &m, v.get("count").ok_or_else(|| doc_err("document lacks count"))?)?;
    let orders: Vec<LabeledCounterMachine> = v
        .get("orders")
        .and_then(|x| x.as_array())
        .ok_or_else(|| doc_err("document lacks orders"))?
        .iter()
        .map(|o| lcm_from_json(&space, &m, o))
        .collect::<Result<_, _>>()?;
    if orders.len() != m.n_channels() {
        return Err(doc_err("one order machine per channel expected"));
    }
    let transitions: Vec<SyncTransition> = v
        .get("transitions")
        .and_then(|x| x.as_array())
        .ok_or_else(|| doc_err("document lacks transitions"))?
        .iter()
        .enumerate()
        .map(|(i, tr)| {
            let count_edge = match tr.get("count_edge") {
                None | Some(serde_json::Value::Null) => None,
                Some(e) => Some(as_usize(e, "count_edge")?),
            };
            let order_edges: Vec<Option<usize>> = tr
                .get("order_edges")
                .and_then(|x| x.as_array())
                .ok_or_else(|| doc_err("transition lacks order_edges"))?
                .iter()
                .map(|e| match e {
                    serde_json::Value::Null => Ok(None),
                    other => as_usize(other, "order edge").map(Some),
                })
                .collect::<Result<_, _>>()?;
            if order_edges.len() != orders.len() {
                return Err(doc_err("order_edges do not match the channels"));
            }
            if let Some(e) = count_edge {
                if e >= count.edges.len() {
                    return Err(doc_err("count edge out of range"));
                }
            }
            for (c, oe) in order_edges.iter().enumerate() {
                if let Some(e) = *oe {
                    if e >= orders[c].edges.len() {
                        return Err(doc_err("order edge out of range"));
                    }
                }
            }
            let guard = guard_from_json(
                &space,
                tr.get("guard").ok_or_else(|| doc_err("transition lacks a guard"))?,
            )?;
            let update = update_from_json(
                &space,
                tr.get("update").ok_or_else(|| doc_err("transition lacks an update"))?,
            )?;
            let label = match tr.get("label") {
                None | Some(serde_json::Value::Null) => None,
                Some(t) => {
                    let name = t.as_str().ok_or_else(|| doc_err("label is not a name"))?;
                    Some(
                        m.trans_by_name(name)
                            .ok_or_else(|| doc_err(format!("unknown transition {name}")))?,
                    )
                }
            };
            Ok(SyncTransition { id: i, count_edge, order_edges, guard, update, label })
        })
        .collect::<Result<_, _>>()?;
    Ok(SyncSystem { machine: m, space, count, orders, transitions, modified })
}

/// Renders the control tuples and moves reachable from the initial
/// configuration when every counter is capped at `cap` (the product has
/// infinitely many configurations otherwise). Configurations without an
/// image are skipped: an order component that outran the recorded
/// content stands for nothing and never recovers. Deterministic breadth
/// first discovery order.
pub fn render_sync_reachable(sys: &SyncSystem, cap: u64) -> String {
    let m = &sys.machine;
    let tuple_name = |g: &[usize]| -> String {
        let mut parts = vec![sys.count.states[g[0]].clone()];
        for (c, &q) in g[1..].iter().enumerate() {
            parts.push(sys.orders[c].states[q].clone());
        }
        format!("({})", parts.join(","))
    };
    let mut corr = Correspondence::new(sys);
    let init = sync_initial(sys);
    let mut seen: BTreeSet<SyncConfig> = BTreeSet::new();
    seen.insert(init.clone());
    let mut queue = VecDeque::from([init.clone()]);
    let mut states: Vec<Vec<usize>> = vec![init.global.clone()];
    let mut state_set: BTreeSet<Vec<usize>> = BTreeSet::new();
    state_set.insert(init.global.clone());
    let mut moves: Vec<(Vec<usize>, usize, Vec<usize>)> = Vec::new();
    let mut move_set: BTreeSet<(Vec<usize>, usize, Vec<usize>)> = BTreeSet::new();
    while let Some(sc) = queue.pop_front() {
        for (ts, sc2) in sync_successors(sys, &sc) {
            if sc2.nu.iter().any(|&v| v > cap) || corr.h(&sc2).is_none() {
                continue;
            }
            if state_set.insert(sc2.global.clone()) {
                states.push(sc2.global.clone());
            }
            let mv = (sc.global.clone(), ts, sc2.global.clone());
            if move_set.insert(mv.clone()) {
                moves.push(mv);
            }
            if seen.insert(sc2.clone()) {
                queue.push_back(sc2);
            }
        }
    }
    let mut out = String::new();
    let _ = writeln!(out, "reachable control tuples, counters capped at {cap}");
    for (i, g) in states.iter().enumerate() {
        let _ = write!(out, "state {}", tuple_name(g));
        if i == 0 {
            let _ = write!(out, " init");
        }
        let _ = writeln!(out);
    }
    for (gs, ts, gt) in &moves {
        let _ = write!(out, "edge {} -> {} trans s{}", tuple_name(gs), tuple_name(gt), ts);
        match sys.transitions[*ts].label {
            Some(t) => {
                let _ = writeln!(out, " label {}", m.trans(t).name);
            }
            None => {
                let _ = writeln!(out, " silent");
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{letters, pump_retrieve};
    use crate::model::parse_machine;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn pump_sync() -> (FifoMachine, SyncSystem) {
        let m = pump_retrieve();
        let sys = build_sync(&m).expect("pump machine is flat");
        (m, sys)
    }

    fn tid(m: &FifoMachine, name: &str) -> TransId {
        m.trans_by_name(name).expect("known transition")
    }

    fn st(m: &FifoMachine, name: &str) -> usize {
        m.state_by_name(name).expect("known state").0
    }

    fn cnt(sys: &SyncSystem, name: &str) -> CounterId {
        sys.space.by_name(name).expect("known counter")
    }

    /// Fires the unique enabled transition labeled `t`.
    fn fire_label(sys: &SyncSystem, sc: &SyncConfig, t: TransId) -> SyncConfig {
        let hits: Vec<_> = sync_successors(sys, sc)
            .into_iter()
            .filter(|(ts, _)| sys.transitions[*ts].label == Some(t))
            .collect();
        assert_eq!(hits.len(), 1, "expected a unique move labeled {t:?}");
        hits.into_iter().next().unwrap().1
    }

    fn fire_silent(sys: &SyncSystem, sc: &SyncConfig) -> SyncConfig {
        let hits: Vec<_> = sync_successors(sys, sc)
            .into_iter()
            .filter(|(ts, _)| sys.transitions[*ts].label.is_none())
            .collect();
        assert_eq!(hits.len(), 1, "expected a unique silent move");
        hits.into_iter().next().unwrap().1
    }

    #[test]
    fn space_orders_pairs_letter_major() {
        let m = pump_retrieve();
        let space = CounterSpace::new(&m);
        assert_eq!(space.len(), 2 * 5);
        let a = m.letter_by_name("a").unwrap();
        let t1 = tid(&m, "t1");
        assert_eq!(space.name(space.id(a, t1)), "(a,t1)");
        assert_eq!(space.by_name("(b,t5)"), Some(CounterId(9)));
        assert_eq!(space.by_name("(z,t1)"), None);
        let (la, lt) = space.pair(space.id(a, t1));
        assert_eq!((la, lt), (a, t1));
    }

    #[test]
    fn guard_renders_and_evaluates() {
        let (_, sys) = pump_sync();
        let g = Guard::zero_of(vec![cnt(&sys, "(b,t2)"), cnt(&sys, "(a,t1)")])
            .and(&Guard::pos_of(cnt(&sys, "(a,t3)")));
        assert_eq!(g.render(&sys.space), "(a,t1)+(b,t2)=0 & (a,t3)>0");
        let mut nu = sys.space.zeros();
        assert!(!g.sat(&nu));
        nu[cnt(&sys, "(a,t3)").0] = 1;
        assert!(g.sat(&nu));
        nu[cnt(&sys, "(b,t2)").0] = 1;
        assert!(!g.sat(&nu));
        assert!(Guard::default().is_true());
        assert_eq!(Guard::default().render(&sys.space), "true");
    }

    #[test]
    fn counting_abstraction_splits_retrieves_by_sender() {
        let (m, sys) = pump_sync();
        let cm = &sys.count;
        // Three sends, one internal, and the retrieve split two ways.
        assert_eq!(cm.edges.len(), 6);
        let t4 = tid(&m, "t4");
        let decs: Vec<&CounterEdge> =
            cm.edges.iter().filter(|e| e.fifo == Some(t4)).collect();
        assert_eq!(decs.len(), 2);
        let t1 = tid(&m, "t1");
        let t3 = tid(&m, "t3");
        let a = m.letter_by_name("a").unwrap();
        let psis: BTreeSet<_> = decs.iter().map(|e| e.psi.unwrap()).collect();
        assert_eq!(psis, BTreeSet::from([(a, t1), (a, t3)]));
        for e in decs {
            let (k, d) = e.update[0];
            assert_eq!(d, -1);
            assert_eq!(e.guard, Guard::pos_of(k));
        }
    }

    #[test]
    fn count_machine_of_send_only_loop_is_flat() {
        let m = parse_machine(
            "channels c\nalphabet c: a\nstate q1 init\ntrans t1 q1 q1 c!a\n",
        )
        .unwrap();
        assert!(counter_is_flat(&build_counting_abstraction(&m)));
    }

    #[test]
    fn count_machine_with_two_senders_is_not_flat() {
        // The retrieve splits into parallel decrements between q4 and q3,
        // putting those states on two cycles.
        let (_, sys) = pump_sync();
        assert!(!counter_is_flat(&sys.count));
    }

    #[test]
    fn counter_step_respects_guard_and_floor() {
        let (m, sys) = pump_sync();
        let cm = &sys.count;
        let init = counter_initial(cm);
        assert_eq!(init.state, st(&m, "q1"));
        let t1_edge = cm.edges.iter().find(|e| e.fifo == Some(tid(&m, "t1"))).unwrap().id;
        let dec_edge = cm
            .edges
            .iter()
            .find(|e| e.fifo == Some(tid(&m, "t4")) && e.psi.unwrap().1 == tid(&m, "t1"))
            .unwrap()
            .id;
        // Wrong source state.
        assert_eq!(counter_step(cm, &init, dec_edge), None);
        let at_q4 = CounterConfig { state: st(&m, "q4"), nu: sys.space.zeros() };
        // Guard fails on the zero valuation.
        assert_eq!(counter_step(cm, &at_q4, dec_edge), None);
        let mut loaded = at_q4.clone();
        loaded.nu[cnt(&sys, "(a,t1)").0] = 1;
        let after = counter_step(cm, &loaded, dec_edge).expect("decrement fires");
        assert_eq!(after.state, st(&m, "q3"));
        assert_eq!(after.nu, sys.space.zeros());
        // Increments always fire from their source.
        let stepped = counter_step(cm, &init, t1_edge).expect("increment fires");
        assert_eq!(stepped.nu[cnt(&sys, "(a,t1)").0], 1);
        assert_eq!(counter_step(cm, &init, 999), None);
    }

    #[test]
    fn order_machine_guards_edges_leaving_loops() {
        let (m, _) = pump_sync();
        let om = build_order_machine(&m, ChannelId(0)).unwrap();
        let space = CounterSpace::new(&m);
        let by_fifo = |name: &str| {
            om.edges.iter().find(|e| e.fifo == Some(tid(&m, name))).expect("edge per transition")
        };
        // The bridge leaves the send loop: it waits for the loop's sum.
        assert_eq!(by_fifo("t5").guard.render(&space), "(a,t1)+(b,t2)=0");
        assert!(by_fifo("t5").psi.is_none());
        // Loop body edges stay unguarded.
        assert!(by_fifo("t1").guard.is_true());
        assert!(by_fifo("t2").guard.is_true());
        assert!(by_fifo("t3").guard.is_true());
        assert!(by_fifo("t4").guard.is_true());
        // Sends carry their synchronization letter, the rest are silent.
        let a = m.letter_by_name("a").unwrap();
        let b = m.letter_by_name("b").unwrap();
        assert_eq!(by_fifo("t1").psi, Some((a, tid(&m, "t1"))));
        assert_eq!(by_fifo("t2").psi, Some((b, tid(&m, "t2"))));
        assert_eq!(by_fifo("t3").psi, Some((a, tid(&m, "t3"))));
        assert!(by_fifo("t4").psi.is_none());
    }

    #[test]
    fn order_machine_of_loop_free_machine_has_no_guards() {
        let m = parse_machine(
            "channels c\nalphabet c: a\nstate q1 init\nstate q2\nstate q3\n\
             trans t1 q1 q2 c!a\ntrans t2 q2 q3 c?a\n",
        )
        .unwrap();
        let om = build_order_machine(&m, ChannelId(0)).unwrap();
        assert!(om.edges.iter().all(|e| e.guard.is_true()));
    }

    #[test]
    fn internal_only_loop_yields_vacuous_guard() {
        let m = parse_machine(
            "channels c\nalphabet c: a\nstate q1 init\nstate q2\nstate q3\n\
             trans t1 q1 q2 tau\ntrans t2 q2 q1 tau\ntrans t3 q1 q3 c!a\n",
        )
        .unwrap();
        let om = build_order_machine(&m, ChannelId(0)).unwrap();
        let exit = om.edges.iter().find(|e| e.fifo == Some(tid(&m, "t3"))).unwrap();
        // The loop sends nothing, so its sum is empty and always zero.
        assert!(exit.guard.is_true());
    }

    #[test]
    fn order_machine_rejects_non_flat() {
        let m = parse_machine(
            "channels c\nalphabet c: a\nstate u init\n\
             trans t1 u u tau\ntrans t2 u u c!a\n",
        )
        .unwrap();
        let err = build_order_machine(&m, ChannelId(0)).unwrap_err();
        assert!(matches!(err, CounterError::Model(ModelError::NotFlat { .. })));
    }

    #[test]
    fn sync_initial_is_all_initial_and_zero() {
        let (m, sys) = pump_sync();
        let init = sync_initial(&sys);
        assert_eq!(init.global, vec![st(&m, "q1"), st(&m, "q1")]);
        assert!(init.nu.iter().all(|&v| v == 0));
    }

    #[test]
    fn sync_increment_runs_solo() {
        let (m, sys) = pump_sync();
        let init = sync_initial(&sys);
        let after = fire_label(&sys, &init, tid(&m, "t1"));
        assert_eq!(after.global, vec![st(&m, "q2"), st(&m, "q1")]);
        assert_eq!(after.nu[cnt(&sys, "(a,t1)").0], 1);
    }

    #[test]
    fn sync_decrement_pairs_with_sender() {
        let (m, sys) = pump_sync();
        let t4 = tid(&m, "t4");
        let paired: Vec<&SyncTransition> =
            sys.transitions.iter().filter(|tr| tr.label == Some(t4)).collect();
        assert_eq!(paired.len(), 2);
        for tr in paired {
            assert!(tr.count_edge.is_some());
            let oe = tr.order_edges[0].expect("order machine participates");
            let count_psi = sys.count.edges[tr.count_edge.unwrap()].psi;
            assert_eq!(sys.orders[0].edges[oe].psi, count_psi);
            assert_eq!(tr.guard.pos.len(), 1);
        }
    }

    #[test]
    fn sync_zero_test_gates_the_bridge() {
        let (m, sys) = pump_sync();
        let init = sync_initial(&sys);
        // The order machine may hop over the bridge while nothing is
        // queued, but not once the send loop has run.
        assert!(sync_successors(&sys, &init)
            .iter()
            .any(|(ts, _)| sys.transitions[*ts].label.is_none()));
        let after = fire_label(&sys, &init, tid(&m, "t1"));
        assert!(sync_successors(&sys, &after)
            .iter()
            .all(|(ts, _)| sys.transitions[*ts].label.is_some()));
    }

    #[test]
    fn sync_reaches_retrieve_after_silent_hop() {
        let (m, sys) = pump_sync();
        let mut sc = sync_initial(&sys);
        sc = fire_label(&sys, &sc, tid(&m, "t5"));
        sc = fire_label(&sys, &sc, tid(&m, "t3"));
        // The retrieve is blocked until the order machine catches up.
        assert!(!sync_successors(&sys, &sc)
            .iter()
            .any(|(ts, _)| sys.transitions[*ts].label == Some(tid(&m, "t4"))));
        sc = fire_silent(&sys, &sc);
        sc = fire_label(&sys, &sc, tid(&m, "t4"));
        assert_eq!(sc.global, vec![st(&m, "q3"), st(&m, "q4")]);
        assert!(sc.nu.iter().all(|&v| v == 0));
    }

    #[test]
    fn correspondence_of_initial_is_initial() {
        let (m, sys) = pump_sync();
        let h = correspondence_h(&sys, &sync_initial(&sys)).expect("defined at the start");
        assert_eq!(h, Config::initial(&m));
    }

    #[test]
    fn correspondence_rebuilds_interleaved_content() {
        let (m, sys) = pump_sync();
        let mut nu = sys.space.zeros();
        nu[cnt(&sys, "(a,t1)").0] = 2;
        nu[cnt(&sys, "(b,t2)").0] = 3;
        nu[cnt(&sys, "(a,t3)").0] = 1;
        let sc = SyncConfig { global: vec![st(&m, "q3"), st(&m, "q2")], nu };
        let h = correspondence_h(&sys, &sc).expect("consistent contents");
        assert_eq!(h.state, StateId(st(&m, "q3")));
        assert_eq!(h.channels.content(ChannelId(0)), &letters(&m, "bababa"));
    }

    #[test]
    fn correspondence_rejects_unreachable_demand() {
        let (m, sys) = pump_sync();
        let mut nu = sys.space.zeros();
        nu[cnt(&sys, "(a,t3)").0] = 5;
        let sc = SyncConfig { global: vec![st(&m, "q1"), st(&m, "q1")], nu };
        // No path from q1 back to q1 passes through the inner send loop.
        assert_eq!(correspondence_h(&sys, &sc), None);
    }

    #[test]
    fn correspondence_commutes_with_random_runs() {
        let (m, sys) = pump_sync();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut corr = Correspondence::new(&sys);
        let mut checked = 0usize;
        for _ in 0..40 {
            let mut sc = sync_initial(&sys);
            for _ in 0..24 {
                let succs = sync_successors(&sys, &sc);
                if succs.is_empty() {
                    break;
                }
                let (_, next) = succs[rng.gen_range(0..succs.len())].clone();
                sc = next;
                // Silent moves can run the order component ahead of the
                // content; from there the image stays undefined, so the
                // run has left the meaningful region for good.
                let Some(cfg) = corr.h(&sc) else { break };
                checked += 1;
                // Counters sum to the queued occurrences per letter.
                for letter in m.letters() {
                    let total: u64 = m
                        .transitions()
                        .iter()
                        .map(|t| sc.nu[sys.space.id(letter, t.id).0])
                        .sum();
                    let queued = cfg.channels.letter_count(letter) as u64;
                    assert_eq!(total, queued);
                }
            }
        }
        assert!(checked > 100, "too few runs stayed in the defined region: {checked}");
    }

    #[test]
    fn weak_bisim_holds_on_pump() {
        let (m, sys) = pump_sync();
        let report = check_weak_bisim(&m, &sys, 8);
        match report {
            BisimReport::Verified { pairs } => assert!(pairs > 15, "pairs = {pairs}"),
            BisimReport::Violation(v) => panic!("unexpected violation: {v:?}"),
        }
    }

    #[test]
    fn weak_bisim_depth_zero_checks_nothing() {
        let (m, sys) = pump_sync();
        assert_eq!(check_weak_bisim(&m, &sys, 0), BisimReport::Verified { pairs: 0 });
    }

    #[test]
    fn weak_bisim_flags_dropped_decrement() {
        let (m, sys) = pump_sync();
        let mut bad = sys.clone();
        let t4 = tid(&m, "t4");
        let victim = bad
            .transitions
            .iter()
            .position(|tr| {
                tr.label == Some(t4)
                    && bad.count.edges[tr.count_edge.unwrap()].psi.unwrap().1 == tid(&m, "t1")
            })
            .unwrap();
        bad.transitions[victim].update.clear();
        let report = check_weak_bisim(&m, &bad, 8);
        assert!(!report.is_ok(), "forgetting the decrement must be caught");
    }

    #[test]
    fn modified_sync_is_silent_free_and_merges() {
        let (m, _) = pump_sync();
        let sys = build_modified_sync(&m).unwrap();
        assert!(sys.modified);
        assert!(sys.transitions.iter().all(|tr| tr.label.is_some()));
        let om = &sys.orders[0];
        assert_eq!(om.states, vec!["q1".to_string(), "q2".to_string()]);
        assert_eq!(
            om.members[0],
            vec![StateId(st(&m, "q1")), StateId(st(&m, "q3")), StateId(st(&m, "q4"))]
        );
        // The inner send loop is reachable from the outer one, so its
        // self-loop waits for the outer loop's sum.
        let inner = om.edges.iter().find(|e| e.fifo == Some(tid(&m, "t3"))).unwrap();
        assert_eq!(inner.source, 0);
        assert_eq!(inner.target, 0);
        assert_eq!(inner.guard.render(&sys.space), "(a,t1)+(b,t2)=0");
        // The silent edges and their states are gone.
        assert!(om.edges.iter().all(|e| e.psi.is_some()));
    }

    #[test]
    fn strict_bisim_holds_on_modified_pump() {
        let (m, _) = pump_sync();
        let sys = build_modified_sync(&m).unwrap();
        let report = check_bisim(&m, &sys, 8);
        match report {
            BisimReport::Verified { pairs } => assert!(pairs > 12, "pairs = {pairs}"),
            BisimReport::Violation(v) => panic!("unexpected violation: {v:?}"),
        }
    }

    #[test]
    fn strict_bisim_rejects_silent_moves() {
        let (m, sys) = pump_sync();
        let report = check_bisim(&m, &sys, 4);
        match report {
            BisimReport::Violation(v) => {
                assert_eq!(v.condition, BisimCondition::SilentMovePresent)
            }
            ok => panic!("expected a silent-move violation, got {ok:?}"),
        }
    }

    #[test]
    fn flattening_of_linear_machine_is_its_run() {
        let m = parse_machine(
            "channels c\nalphabet c: a\nstate q1 init\nstate q2\nstate q3\n\
             trans t1 q1 q2 c!a\ntrans t2 q2 q3 c?a\n",
        )
        .unwrap();
        let sys = build_sync(&m).unwrap();
        let init = sync_initial(&sys);
        let map = trace_flatten(&sys, &init, DEFAULT_FLATTEN_BUDGET).unwrap();
        assert!(is_flattening(&sys, &map));
        assert_eq!(map.flat.states.len(), 4);
        let got = counter_obs_traces(
            &map.flat,
            &CounterConfig { state: map.flat.initial, nu: init.nu.clone() },
            4,
        )
        .unwrap();
        assert_eq!(got, sync_obs_traces(&sys, &init, 4).unwrap());
    }

    #[test]
    fn flattening_of_pump_is_flat_and_maps_back() {
        let (_, sys) = pump_sync();
        let init = sync_initial(&sys);
        let map = trace_flatten(&sys, &init, DEFAULT_FLATTEN_BUDGET).unwrap();
        assert!(counter_is_flat(&map.flat));
        assert!(is_flattening(&sys, &map));
    }

    #[test]
    fn flattening_contains_drain_cycle() {
        let (m, sys) = pump_sync();
        let init = sync_initial(&sys);
        let map = trace_flatten(&sys, &init, DEFAULT_FLATTEN_BUDGET).unwrap();
        // Drained consumption alternates retrieve and send between the
        // two loops: a three-state cycle over (q4,q3), (q3,q4), (q3,q3).
        let image = |i: usize| (map.state_map[i][0], map.state_map[i][1]);
        let want = [
            (st(&m, "q4"), st(&m, "q3")),
            (st(&m, "q3"), st(&m, "q4")),
            (st(&m, "q3"), st(&m, "q3")),
        ];
        let mut found = false;
        'outer: for e1 in &map.flat.edges {
            for e2 in &map.flat.edges {
                if e2.source != e1.target {
                    continue;
                }
                for e3 in &map.flat.edges {
                    if e3.source == e2.target
                        && e3.target == e1.source
                        && [image(e1.source), image(e2.source), image(e3.source)]
                            .iter()
                            .collect::<BTreeSet<_>>()
                            == want.iter().collect::<BTreeSet<_>>()
                    {
                        found = true;
                        break 'outer;
                    }
                }
            }
        }
        assert!(found, "expected the drain cycle in the flattening");
    }

    #[test]
    fn flattening_traces_match_sync() {
        let (_, sys) = pump_sync();
        let init = sync_initial(&sys);
        let map = trace_flatten(&sys, &init, DEFAULT_FLATTEN_BUDGET).unwrap();
        let want = sync_obs_traces(&sys, &init, 5).unwrap();
        let got = counter_obs_traces(
            &map.flat,
            &CounterConfig { state: map.flat.initial, nu: init.nu.clone() },
            5,
        )
        .unwrap();
        assert_eq!(got, want);
    }

    #[test]
    fn modified_flattening_traces_match() {
        let (m, _) = pump_sync();
        let sys = build_modified_sync(&m).unwrap();
        let init = sync_initial(&sys);
        let map = trace_flatten(&sys, &init, DEFAULT_FLATTEN_BUDGET).unwrap();
        assert!(is_flattening(&sys, &map));
        let want = sync_obs_traces(&sys, &init, 5).unwrap();
        let got = counter_obs_traces(
            &map.flat,
            &CounterConfig { state: map.flat.initial, nu: init.nu.clone() },
            5,
        )
        .unwrap();
        assert_eq!(got, want);
    }

    #[test]
    fn flattening_budget_is_honest() {
        let (_, sys) = pump_sync();
        let init = sync_initial(&sys);
        let err = trace_flatten(&sys, &init, 3).unwrap_err();
        assert!(matches!(err, CounterError::BudgetExceeded { size: 3 }));
    }

    #[test]
    fn export_fast_shows_guards_and_pairs() {
        let (_, sys) = pump_sync();
        let text = export_counter_system(CounterExport::Sync(&sys), "fast").unwrap();
        assert!(text.contains("guard (a,t1)+(b,t2)=0"));
        assert!(text.contains("dec (a,t1)"));
        assert!(text.contains("dec (a,t3)"));
        assert!(text.contains("psi (a,t1)"));
        assert!(text.contains("order[c]"));
        assert!(text.contains(" silent"));
    }

    #[test]
    fn export_json_round_trips() {
        let (m, sys) = pump_sync();
        let text = export_counter_system(CounterExport::Sync(&sys), "json").unwrap();
        let back = sync_from_json(&text).unwrap();
        assert_eq!(back, sys);
        let modified = build_modified_sync(&m).unwrap();
        let text = export_counter_system(CounterExport::Sync(&modified), "json").unwrap();
        assert_eq!(sync_from_json(&text).unwrap(), modified);
    }

    #[test]
    fn export_rejects_unknown_format() {
        let (_, sys) = pump_sync();
        let err = export_counter_system(CounterExport::Sync(&sys), "xml").unwrap_err();
        assert!(matches!(err, CounterError::UnknownFormat { format } if format == "xml"));
    }

    #[test]
    fn export_flattening_lists_images() {
        let (_, sys) = pump_sync();
        let init = sync_initial(&sys);
        let map = trace_flatten(&sys, &init, DEFAULT_FLATTEN_BUDGET).unwrap();
        let text =
            export_counter_system(CounterExport::Flattening(&sys, &map), "fast").unwrap();
        assert!(text.contains("system flattening"));
        assert!(text.contains("image (q1,q1)"));
        assert!(text.contains(" via s"));
        let json = export_counter_system(CounterExport::Flattening(&sys, &map), "json").unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["trans_map"].as_array().unwrap().len(), map.flat.edges.len());
    }

    #[test]
    fn reachable_render_lists_control_tuples() {
        let (_, sys) = pump_sync();
        let text = render_sync_reachable(&sys, 2);
        assert!(text.contains("state (q1,q1) init"));
        assert!(text.contains("state (q3,q3)"));
        assert!(text.contains("state (q4,q3)"));
        assert!(text.contains("label t4"));
        assert!(text.contains("silent"));
        // Deterministic output.
        assert_eq!(text, render_sync_reachable(&sys, 2));
    }
}
