//! FIFO machine model: finite control, named FIFO channels, and a
//! channel-partitioned alphabet.
//!
//! The module owns the concrete representation used everywhere else:
//! interned ids for states, channels, letters and transitions, a text
//! format and a JSON mirror, stepping under the three supported semantics,
//! asynchronous products, flatness analysis and path-schema enumeration.
//!
//! Flatness is the structural property the whole crate depends on: a
//! machine is flat when no control state lies on two distinct cycles.
//! Cycles of a flat machine are vertex disjoint, so every strongly
//! connected component is either a single state or a single elementary
//! loop, and every run follows a simple path with loops iterated at the
//! states it visits.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use thiserror::Error;

/// Index of a control state within its machine.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct StateId(pub usize);

/// Index of a channel within its machine.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct ChannelId(pub usize);

/// Index of a letter. Letters are global to the machine; each belongs to
/// exactly one channel (the alphabet is partitioned by channel).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct LetterId(pub usize);

/// Index of a transition within its machine.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct TransId(pub usize);

/// A channel content or any other finite letter sequence.
pub type Word = Vec<LetterId>;

/// What a transition does to the channels.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Action {
    /// Append the letter at the tail of the channel.
    Send(ChannelId, LetterId),
    /// Remove the letter from the head of the channel.
    Retrieve(ChannelId, LetterId),
    /// Change control state only.
    Internal,
}

impl Action {
    pub fn channel(&self) -> Option<ChannelId> {
        match *self {
            Action::Send(c, _) | Action::Retrieve(c, _) => Some(c),
            Action::Internal => None,
        }
    }

    pub fn letter(&self) -> Option<LetterId> {
        match *self {
            Action::Send(_, a) | Action::Retrieve(_, a) => Some(a),
            Action::Internal => None,
        }
    }

    pub fn is_send(&self) -> bool {
        matches!(self, Action::Send(..))
    }

    pub fn is_retrieve(&self) -> bool {
        matches!(self, Action::Retrieve(..))
    }

    pub fn is_internal(&self) -> bool {
        matches!(self, Action::Internal)
    }
}

/// A named transition of the control graph.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Transition {
    pub id: TransId,
    pub name: String,
    pub source: StateId,
    pub target: StateId,
    pub action: Action,
}

/// Execution semantics for [`step`].
///
/// `Lossy` steps are identical to `Perfect` steps; message losses are
/// modeled as the separate [`lose`] pseudo-steps that an explorer
/// interleaves between transitions. `FrontLossy` retrieval of `a` discards
/// the (possibly empty) prefix before an occurrence of `a` together with
/// that occurrence, one successor per occurrence.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Semantics {
    Perfect,
    Lossy,
    FrontLossy,
}

/// One word per channel.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct ChannelValuation {
    contents: Vec<Word>,
}

impl ChannelValuation {
    pub fn empty(n_channels: usize) -> Self {
        ChannelValuation { contents: vec![Vec::new(); n_channels] }
    }

    pub fn new(contents: Vec<Word>) -> Self {
        ChannelValuation { contents }
    }

    pub fn n_channels(&self) -> usize {
        self.contents.len()
    }

    pub fn content(&self, c: ChannelId) -> &Word {
        &self.contents[c.0]
    }

    pub fn content_mut(&mut self, c: ChannelId) -> &mut Word {
        &mut self.contents[c.0]
    }

    pub fn contents(&self) -> &[Word] {
        &self.contents
    }

    pub fn total_len(&self) -> usize {
        self.contents.iter().map(|w| w.len()).sum()
    }

    pub fn is_all_empty(&self) -> bool {
        self.contents.iter().all(|w| w.is_empty())
    }

    /// Occurrences of the letter across all channels. Letters live on a
    /// single channel, so this equals the count in the letter's channel.
    pub fn letter_count(&self, a: LetterId) -> usize {
        self.contents.iter().map(|w| w.iter().filter(|&&x| x == a).count()).sum()
    }
}

/// A control state together with channel contents.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Config {
    pub state: StateId,
    pub channels: ChannelValuation,
}

impl Config {
    pub fn new(state: StateId, channels: ChannelValuation) -> Self {
        Config { state, channels }
    }

    /// Initial state with all channels empty.
    pub fn initial(m: &FifoMachine) -> Self {
        Config { state: m.initial(), channels: ChannelValuation::empty(m.n_channels()) }
    }
}

/// An elementary loop, stored as its rotation anchored at one state: the
/// body starts and ends at `anchor` and visits every other loop state
/// exactly once.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct ElementaryLoop {
    pub anchor: StateId,
    pub body: Vec<TransId>,
}

impl ElementaryLoop {
    /// The loop label, i.e. the transition sequence of one iteration.
    pub fn label(&self) -> &[TransId] {
        &self.body
    }

    /// States visited by one iteration, starting with the anchor.
    pub fn states(&self, m: &FifoMachine) -> Vec<StateId> {
        let mut out = vec![self.anchor];
        for &t in &self.body[..self.body.len().saturating_sub(1)] {
            out.push(m.trans(t).target);
        }
        out
    }
}

/// A simple path decorated with the elementary loops met along it:
/// `prefix (l_1)* p_1 (l_2)* p_2 ...` where `prefix` leads from `start` to
/// the first loop anchor and each `p_i` continues from the previous
/// anchor. Every run of a flat machine follows some path schema, with the
/// loops iterated zero or more times.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct PathSchema {
    pub start: StateId,
    pub prefix: Vec<TransId>,
    pub parts: Vec<(ElementaryLoop, Vec<TransId>)>,
}

impl PathSchema {
    /// Final control state of the underlying path.
    pub fn end(&self, m: &FifoMachine) -> StateId {
        if let Some((l, seg)) = self.parts.last() {
            match seg.last() {
                Some(&t) => m.trans(t).target,
                None => l.anchor,
            }
        } else {
            match self.prefix.last() {
                Some(&t) => m.trans(t).target,
                None => self.start,
            }
        }
    }

    /// Loops of the schema in visiting order.
    pub fn loops(&self) -> impl Iterator<Item = &ElementaryLoop> {
        self.parts.iter().map(|(l, _)| l)
    }

    /// Expand to a flat transition sequence, iterating the i-th loop
    /// `iters[i]` times. `iters` must have one entry per loop.
    pub fn expand(&self, iters: &[u64]) -> Vec<TransId> {
        assert_eq!(iters.len(), self.parts.len());
        let mut out = self.prefix.clone();
        for ((l, seg), &n) in self.parts.iter().zip(iters) {
            for _ in 0..n {
                out.extend_from_slice(&l.body);
            }
            out.extend_from_slice(seg);
        }
        out
    }

    /// Checks the strict shape: segments and loops only share anchors, so
    /// loop interiors appear nowhere else in the schema. Machines built
    /// from a schema satisfy this; schemas extracted from arbitrary flat
    /// machines may route segments through loop states and fail it.
    pub fn is_strict(&self, m: &FifoMachine) -> bool {
        let mut seg_states: BTreeSet<StateId> = BTreeSet::new();
        seg_states.insert(self.start);
        for &t in &self.prefix {
            seg_states.insert(m.trans(t).target);
        }
        for (_, seg) in &self.parts {
            for &t in seg {
                seg_states.insert(m.trans(t).target);
            }
        }
        for (l, _) in &self.parts {
            for q in l.states(m).into_iter().skip(1) {
                if seg_states.contains(&q) {
                    return false;
                }
            }
        }
        true
    }
}

/// Errors from parsing, validation, and structural analyses.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("parse error at line {line}, column {col}: {message}")]
    Parse { line: usize, col: usize, message: String },
    #[error("validation failed: {rule}")]
    Validation { rule: String },
    #[error("letter {letter} belongs to channel {first} but is used on channel {second}")]
    AlphabetClash { letter: String, first: String, second: String },
    #[error("machine is not flat: state {state} lies on two distinct cycles")]
    NotFlat { state: String },
}

/// Certificate of non-flatness: two distinct cycles through one state.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct NonFlatWitness {
    pub state: StateId,
    pub cycle_a: Vec<TransId>,
    pub cycle_b: Vec<TransId>,
}

/// A FIFO machine. Construct with [`MachineBuilder`], [`parse_machine`]
/// or [`machine_from_json`]; instances are immutable afterwards.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct FifoMachine {
    state_names: Vec<String>,
    channel_names: Vec<String>,
    letter_names: Vec<String>,
    letter_channels: Vec<ChannelId>,
    channel_letters: Vec<Vec<LetterId>>,
    transitions: Vec<Transition>,
    initial: StateId,
    out: Vec<Vec<TransId>>,
}

impl FifoMachine {
    pub fn n_states(&self) -> usize {
        self.state_names.len()
    }

    pub fn n_channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn n_letters(&self) -> usize {
        self.letter_names.len()
    }

    pub fn n_transitions(&self) -> usize {
        self.transitions.len()
    }

    pub fn initial(&self) -> StateId {
        self.initial
    }

    pub fn states(&self) -> impl Iterator<Item = StateId> {
        (0..self.state_names.len()).map(StateId)
    }

    pub fn channels(&self) -> impl Iterator<Item = ChannelId> {
        (0..self.channel_names.len()).map(ChannelId)
    }

    pub fn letters(&self) -> impl Iterator<Item = LetterId> {
        (0..self.letter_names.len()).map(LetterId)
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn trans(&self, t: TransId) -> &Transition {
        &self.transitions[t.0]
    }

    pub fn state_name(&self, q: StateId) -> &str {
        &self.state_names[q.0]
    }

    pub fn channel_name(&self, c: ChannelId) -> &str {
        &self.channel_names[c.0]
    }

    pub fn letter_name(&self, a: LetterId) -> &str {
        &self.letter_names[a.0]
    }

    pub fn letter_channel(&self, a: LetterId) -> ChannelId {
        self.letter_channels[a.0]
    }

    pub fn channel_letters(&self, c: ChannelId) -> &[LetterId] {
        &self.channel_letters[c.0]
    }

    /// Outgoing transitions of a state, in transition-id order.
    pub fn out(&self, q: StateId) -> &[TransId] {
        &self.out[q.0]
    }

    pub fn state_by_name(&self, name: &str) -> Option<StateId> {
        self.state_names.iter().position(|n| n == name).map(StateId)
    }

    pub fn channel_by_name(&self, name: &str) -> Option<ChannelId> {
        self.channel_names.iter().position(|n| n == name).map(ChannelId)
    }

    pub fn letter_by_name(&self, name: &str) -> Option<LetterId> {
        self.letter_names.iter().position(|n| n == name).map(LetterId)
    }

    pub fn trans_by_name(&self, name: &str) -> Option<TransId> {
        self.transitions.iter().position(|t| t.name == name).map(TransId)
    }

    /// Renders an action in the text-format syntax, e.g. `c!a` or `tau`.
    pub fn display_action(&self, action: Action) -> String {
        match action {
            Action::Send(c, a) => format!("{}!{}", self.channel_name(c), self.letter_name(a)),
            Action::Retrieve(c, a) => {
                format!("{}?{}", self.channel_name(c), self.letter_name(a))
            }
            Action::Internal => "tau".to_string(),
        }
    }

    /// Renders a word as the concatenation of its letter names.
    pub fn display_word(&self, w: &[LetterId]) -> String {
        w.iter().map(|&a| self.letter_name(a)).collect::<Vec<_>>().join("")
    }
}

fn valid_ident(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| !c.is_whitespace() && !matches!(c, '!' | '?' | ':' | '#'))
}

/// Incremental constructor enforcing the model invariants: unique names,
/// one channel per letter, actions consistent with the letter's channel.
pub struct MachineBuilder {
    state_names: Vec<String>,
    channel_names: Vec<String>,
    letter_names: Vec<String>,
    letter_channels: Vec<ChannelId>,
    channel_letters: Vec<Vec<LetterId>>,
    transitions: Vec<Transition>,
    initial: Option<StateId>,
    state_index: BTreeMap<String, StateId>,
    channel_index: BTreeMap<String, ChannelId>,
    letter_index: BTreeMap<String, LetterId>,
    trans_names: BTreeSet<String>,
}

impl MachineBuilder {
    pub fn new() -> Self {
        MachineBuilder {
            state_names: Vec::new(),
            channel_names: Vec::new(),
            letter_names: Vec::new(),
            letter_channels: Vec::new(),
            channel_letters: Vec::new(),
            transitions: Vec::new(),
            initial: None,
            state_index: BTreeMap::new(),
            channel_index: BTreeMap::new(),
            letter_index: BTreeMap::new(),
            trans_names: BTreeSet::new(),
        }
    }

    pub fn channel(&mut self, name: &str) -> Result<ChannelId, ModelError> {
        if !valid_ident(name) {
            return Err(ModelError::Validation { rule: format!("invalid channel name {name:?}") });
        }
        if self.channel_index.contains_key(name) {
            return Err(ModelError::Validation { rule: format!("duplicate channel {name}") });
        }
        let id = ChannelId(self.channel_names.len());
        self.channel_names.push(name.to_string());
        self.channel_letters.push(Vec::new());
        self.channel_index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn letter(&mut self, channel: ChannelId, name: &str) -> Result<LetterId, ModelError> {
        if !valid_ident(name) {
            return Err(ModelError::Validation { rule: format!("invalid letter name {name:?}") });
        }
        if let Some(&prev) = self.letter_index.get(name) {
            let first = self.letter_channels[prev.0];
            if first == channel {
                return Err(ModelError::Validation {
                    rule: format!(
                        "duplicate letter {name} on channel {}",
                        self.channel_names[channel.0]
                    ),
                });
            }
            return Err(ModelError::AlphabetClash {
                letter: name.to_string(),
                first: self.channel_names[first.0].clone(),
                second: self.channel_names[channel.0].clone(),
            });
        }
        let id = LetterId(self.letter_names.len());
        self.letter_names.push(name.to_string());
        self.letter_channels.push(channel);
        self.channel_letters[channel.0].push(id);
        self.letter_index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn state(&mut self, name: &str) -> Result<StateId, ModelError> {
        if !valid_ident(name) {
            return Err(ModelError::Validation { rule: format!("invalid state name {name:?}") });
        }
        if self.state_index.contains_key(name) {
            return Err(ModelError::Validation { rule: format!("duplicate state {name}") });
        }
        let id = StateId(self.state_names.len());
        self.state_names.push(name.to_string());
        self.state_index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn initial(&mut self, q: StateId) -> Result<(), ModelError> {
        if self.initial.is_some() {
            return Err(ModelError::Validation { rule: "two initial states".into() });
        }
        self.initial = Some(q);
        Ok(())
    }

    pub fn transition(
        &mut self,
        name: &str,
        source: StateId,
        target: StateId,
        action: Action,
    ) -> Result<TransId, ModelError> {
        if !valid_ident(name) {
            return Err(ModelError::Validation {
                rule: format!("invalid transition name {name:?}"),
            });
        }
        if !self.trans_names.insert(name.to_string()) {
            return Err(ModelError::Validation { rule: format!("duplicate transition {name}") });
        }
        if source.0 >= self.state_names.len() || target.0 >= self.state_names.len() {
            return Err(ModelError::Validation {
                rule: format!("transition {name} references an unknown state"),
            });
        }
        if let (Some(c), Some(a)) = (action.channel(), action.letter()) {
            if c.0 >= self.channel_names.len() || a.0 >= self.letter_names.len() {
                return Err(ModelError::Validation {
                    rule: format!("transition {name} references an unknown channel or letter"),
                });
            }
            if self.letter_channels[a.0] != c {
                return Err(ModelError::AlphabetClash {
                    letter: self.letter_names[a.0].clone(),
                    first: self.channel_names[self.letter_channels[a.0].0].clone(),
                    second: self.channel_names[c.0].clone(),
                });
            }
        }
        let id = TransId(self.transitions.len());
        self.transitions.push(Transition {
            id,
            name: name.to_string(),
            source,
            target,
            action,
        });
        Ok(id)
    }

    pub fn find_state(&self, name: &str) -> Option<StateId> {
        self.state_index.get(name).copied()
    }

    pub fn find_transition(&self, name: &str) -> Option<TransId> {
        self.transitions.iter().find(|t| t.name == name).map(|t| t.id)
    }

    pub fn find_channel(&self, name: &str) -> Option<ChannelId> {
        self.channel_index.get(name).copied()
    }

    pub fn find_letter(&self, name: &str) -> Option<LetterId> {
        self.letter_index.get(name).copied()
    }

    pub fn finish(self) -> Result<FifoMachine, ModelError> {
        let initial = self
            .initial
            .ok_or(ModelError::Validation { rule: "no initial state".into() })?;
        let mut out = vec![Vec::new(); self.state_names.len()];
        for t in &self.transitions {
            out[t.source.0].push(t.id);
        }
        Ok(FifoMachine {
            state_names: self.state_names,
            channel_names: self.channel_names,
            letter_names: self.letter_names,
            letter_channels: self.letter_channels,
            channel_letters: self.channel_letters,
            transitions: self.transitions,
            initial,
            out,
        })
    }
}

impl Default for MachineBuilder {
    fn default() -> Self {
        MachineBuilder::new()
    }
}

// ---------------------------------------------------------------------------
// Stepping

/// Fires one transition from a configuration. Returns all successors
/// (empty when the transition is disabled). Perfect and lossy semantics
/// yield at most one successor; front-lossy retrieval yields one per
/// occurrence of the retrieved letter.
pub fn step(m: &FifoMachine, cfg: &Config, t: TransId, sem: Semantics) -> Vec<Config> {
    let tr = m.trans(t);
    if tr.source != cfg.state {
        return Vec::new();
    }
    match tr.action {
        Action::Internal => {
            let mut next = cfg.clone();
            next.state = tr.target;
            vec![next]
        }
        Action::Send(c, a) => {
            let mut next = cfg.clone();
            next.state = tr.target;
            next.channels.content_mut(c).push(a);
            vec![next]
        }
        Action::Retrieve(c, a) => match sem {
            Semantics::Perfect | Semantics::Lossy => {
                let w = cfg.channels.content(c);
                if w.first() == Some(&a) {
                    let mut next = cfg.clone();
                    next.state = tr.target;
                    next.channels.content_mut(c).remove(0);
                    vec![next]
                } else {
                    Vec::new()
                }
            }
            Semantics::FrontLossy => {
                let w = cfg.channels.content(c);
                let mut succs = Vec::new();
                for (i, &x) in w.iter().enumerate() {
                    if x == a {
                        let mut next = cfg.clone();
                        next.state = tr.target;
                        *next.channels.content_mut(c) = w[i + 1..].to_vec();
                        succs.push(next);
                    }
                }
                succs
            }
        },
    }
}

/// All `(transition, successor)` pairs from a configuration. Loss
/// pseudo-steps of the lossy semantics are not included; see
/// [`lose_steps`].
pub fn successors(m: &FifoMachine, cfg: &Config, sem: Semantics) -> Vec<(TransId, Config)> {
    let mut out = Vec::new();
    for &t in m.out(cfg.state) {
        for next in step(m, cfg, t, sem) {
            out.push((t, next));
        }
    }
    out
}

/// Removes the letter at `index` from channel `c`, or `None` if out of
/// range. This is the elementary loss pseudo-step of the lossy semantics.
pub fn lose(cfg: &Config, c: ChannelId, index: usize) -> Option<Config> {
    if index >= cfg.channels.content(c).len() {
        return None;
    }
    let mut next = cfg.clone();
    next.channels.content_mut(c).remove(index);
    Some(next)
}

/// Replays a transition sequence under perfect semantics, where every
/// step has at most one successor. `None` as soon as a step is disabled.
pub fn fire_sequence(m: &FifoMachine, cfg: &Config, seq: &[TransId]) -> Option<Config> {
    let mut cur = cfg.clone();
    for &t in seq {
        cur = step(m, &cur, t, Semantics::Perfect).into_iter().next()?;
    }
    Some(cur)
}

/// Every single-letter loss from a configuration.
pub fn lose_steps(cfg: &Config) -> Vec<((ChannelId, usize), Config)> {
    let mut out = Vec::new();
    for c in 0..cfg.channels.n_channels() {
        let c = ChannelId(c);
        for i in 0..cfg.channels.content(c).len() {
            let next = lose(cfg, c, i).expect("index in range");
            out.push(((c, i), next));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Text format

/// Options for [`parse_machine_with`].
#[derive(Clone, Copy, Default)]
pub struct ParseOptions {
    /// Rename a letter that appears in a second channel's alphabet to
    /// `<letter>__<channel>` instead of rejecting the input. Actions keep
    /// referring to the original name; only the stored letter name changes.
    pub rename_cross_channel_letters: bool,
}

/// Parses the text format with default (strict) options.
///
/// ```text
/// # a machine with one channel
/// channels c
/// alphabet c: a b
/// state q1 init
/// state q2
/// trans t1 q1 q2 c!a
/// trans t2 q2 q1 c!b
/// ```
pub fn parse_machine(text: &str) -> Result<FifoMachine, ModelError> {
    parse_machine_with(text, ParseOptions::default())
}

/// Parses the text format. Lines: `channels <name>...`,
/// `alphabet <channel>: <letter>...`, `state <name> [init]`,
/// `trans <name> <source> <target> <action>` with actions `c!a`, `c?a` or
/// `tau`. `#` starts a comment. Declarations must precede uses.
pub fn parse_machine_with(text: &str, opts: ParseOptions) -> Result<FifoMachine, ModelError> {
    let mut b = MachineBuilder::new();
    // Per-channel view of original letter names; diverges from the stored
    // names only under the rename option.
    let mut chan_letters: BTreeMap<(ChannelId, String), LetterId> = BTreeMap::new();
    let mut letter_home: BTreeMap<String, ChannelId> = BTreeMap::new();

    let err = |line: usize, col: usize, message: String| ModelError::Parse { line, col, message };

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let mut toks: Vec<(usize, &str)> = Vec::new();
        let mut pos = 0;
        for piece in raw.split_whitespace() {
            let col = raw[pos..].find(piece).map(|i| pos + i).unwrap_or(pos);
            pos = col + piece.len();
            if piece.starts_with('#') {
                break;
            }
            toks.push((col + 1, piece));
        }
        if toks.is_empty() {
            continue;
        }
        let (_, head) = toks[0];
        match head {
            "channels" => {
                for &(col, name) in &toks[1..] {
                    b.channel(name).map_err(|e| err(line, col, e.to_string()))?;
                }
            }
            "alphabet" => {
                if toks.len() < 2 {
                    return Err(err(line, 1, "alphabet needs a channel".into()));
                }
                let (ccol, mut cname) = toks[1];
                let mut rest = &toks[2..];
                if let Some(stripped) = cname.strip_suffix(':') {
                    cname = stripped;
                } else if rest.first().map(|&(_, t)| t) == Some(":") {
                    rest = &rest[1..];
                } else {
                    return Err(err(line, ccol, format!("expected `{cname}:`")));
                }
                let c = b
                    .find_channel(cname)
                    .ok_or_else(|| err(line, ccol, format!("unknown channel {cname}")))?;
                for &(col, name) in rest {
                    if let Some(&home) = letter_home.get(name) {
                        if home != c && opts.rename_cross_channel_letters {
                            let fresh = format!("{}__{}", name, b.channel_name_of(c));
                            let id = b.letter(c, &fresh).map_err(|e| err(line, col, e.to_string()))?;
                            chan_letters.insert((c, name.to_string()), id);
                            continue;
                        }
                    }
                    let id = b.letter(c, name).map_err(|e| err(line, col, e.to_string()))?;
                    chan_letters.insert((c, name.to_string()), id);
                    letter_home.insert(name.to_string(), c);
                }
            }
            "state" => {
                if toks.len() < 2 || toks.len() > 3 {
                    return Err(err(line, 1, "expected `state <name> [init]`".into()));
                }
                let (col, name) = toks[1];
                let q = b.state(name).map_err(|e| err(line, col, e.to_string()))?;
                if let Some(&(icol, word)) = toks.get(2) {
                    if word != "init" {
                        return Err(err(line, icol, format!("expected `init`, found {word}")));
                    }
                    b.initial(q).map_err(|e| err(line, icol, e.to_string()))?;
                }
            }
            "trans" => {
                if toks.len() != 5 {
                    return Err(err(
                        line,
                        1,
                        "expected `trans <name> <source> <target> <action>`".into(),
                    ));
                }
                let (ncol, name) = toks[1];
                let (scol, sname) = toks[2];
                let (tcol, tname) = toks[3];
                let (acol, atext) = toks[4];
                let source = b
                    .find_state(sname)
                    .ok_or_else(|| err(line, scol, format!("unknown state {sname}")))?;
                let target = b
                    .find_state(tname)
                    .ok_or_else(|| err(line, tcol, format!("unknown state {tname}")))?;
                let action = if atext == "tau" {
                    Action::Internal
                } else {
                    let (idx, send) = match (atext.find('!'), atext.find('?')) {
                        (Some(i), None) => (i, true),
                        (None, Some(i)) => (i, false),
                        _ => {
                            return Err(err(
                                line,
                                acol,
                                format!("expected `chan!letter`, `chan?letter` or `tau`, found {atext}"),
                            ))
                        }
                    };
                    let cname = &atext[..idx];
                    let lname = &atext[idx + 1..];
                    let c = b
                        .find_channel(cname)
                        .ok_or_else(|| err(line, acol, format!("unknown channel {cname}")))?;
                    let a = chan_letters
                        .get(&(c, lname.to_string()))
                        .copied()
                        .ok_or_else(|| {
                            err(line, acol, format!("letter {lname} not in channel {cname}"))
                        })?;
                    if send {
                        Action::Send(c, a)
                    } else {
                        Action::Retrieve(c, a)
                    }
                };
                b.transition(name, source, target, action)
                    .map_err(|e| err(line, ncol, e.to_string()))?;
            }
            other => {
                return Err(err(line, toks[0].0, format!("unknown directive {other}")));
            }
        }
    }
    b.finish()
}

impl MachineBuilder {
    fn channel_name_of(&self, c: ChannelId) -> &str {
        &self.channel_names[c.0]
    }
}

/// Renders the canonical text format; `parse_machine` inverts it.
pub fn render_machine(m: &FifoMachine) -> String {
    let mut s = String::new();
    if m.n_channels() > 0 {
        s.push_str("channels");
        for c in m.channels() {
            s.push(' ');
            s.push_str(m.channel_name(c));
        }
        s.push('\n');
        for c in m.channels() {
            s.push_str(&format!("alphabet {}:", m.channel_name(c)));
            for &a in m.channel_letters(c) {
                s.push(' ');
                s.push_str(m.letter_name(a));
            }
            s.push('\n');
        }
    }
    for q in m.states() {
        s.push_str("state ");
        s.push_str(m.state_name(q));
        if q == m.initial() {
            s.push_str(" init");
        }
        s.push('\n');
    }
    for t in m.transitions() {
        s.push_str(&format!(
            "trans {} {} {} {}\n",
            t.name,
            m.state_name(t.source),
            m.state_name(t.target),
            m.display_action(t.action)
        ));
    }
    s
}

// ---------------------------------------------------------------------------
// JSON mirror

#[derive(Serialize, Deserialize)]
struct MachineDoc {
    channels: Vec<String>,
    alphabet: Vec<AlphabetDoc>,
    states: Vec<StateDoc>,
    transitions: Vec<TransDoc>,
}

#[derive(Serialize, Deserialize)]
struct AlphabetDoc {
    channel: String,
    letters: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct StateDoc {
    name: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    initial: bool,
}

#[derive(Serialize, Deserialize)]
struct TransDoc {
    name: String,
    source: String,
    target: String,
    action: String,
}

/// Serializes a machine to the JSON document format.
pub fn machine_to_json(m: &FifoMachine) -> String {
    let doc = MachineDoc {
        channels: m.channels().map(|c| m.channel_name(c).to_string()).collect(),
        alphabet: m
            .channels()
            .map(|c| AlphabetDoc {
                channel: m.channel_name(c).to_string(),
                letters: m.channel_letters(c).iter().map(|&a| m.letter_name(a).to_string()).collect(),
            })
            .collect(),
        states: m
            .states()
            .map(|q| StateDoc { name: m.state_name(q).to_string(), initial: q == m.initial() })
            .collect(),
        transitions: m
            .transitions()
            .iter()
            .map(|t| TransDoc {
                name: t.name.clone(),
                source: m.state_name(t.source).to_string(),
                target: m.state_name(t.target).to_string(),
                action: m.display_action(t.action),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("document serializes")
}

/// Parses the JSON document format.
pub fn machine_from_json(text: &str) -> Result<FifoMachine, ModelError> {
    let doc: MachineDoc = serde_json::from_str(text).map_err(|e| ModelError::Parse {
        line: e.line(),
        col: e.column(),
        message: e.to_string(),
    })?;
    // Reassemble as the text format and reuse its resolution logic.
    let mut s = String::new();
    if !doc.channels.is_empty() {
        s.push_str("channels");
        for c in &doc.channels {
            s.push(' ');
            s.push_str(c);
        }
        s.push('\n');
    }
    for a in &doc.alphabet {
        s.push_str(&format!("alphabet {}:", a.channel));
        for l in &a.letters {
            s.push(' ');
            s.push_str(l);
        }
        s.push('\n');
    }
    let mut init_count = 0;
    for q in &doc.states {
        s.push_str("state ");
        s.push_str(&q.name);
        if q.initial {
            s.push_str(" init");
            init_count += 1;
        }
        s.push('\n');
    }
    if init_count == 0 {
        return Err(ModelError::Validation { rule: "no initial state".into() });
    }
    for t in &doc.transitions {
        s.push_str(&format!("trans {} {} {} {}\n", t.name, t.source, t.target, t.action));
    }
    parse_machine(&s)
}

// ---------------------------------------------------------------------------
// Product

/// Asynchronous product of machines communicating over shared (same-name)
/// channels. Global states are tuples, named by joining component names
/// with `|`; each component transition becomes one global transition per
/// combination of the other components' states.
pub fn product(machines: &[&FifoMachine]) -> Result<FifoMachine, ModelError> {
    if machines.is_empty() {
        return Err(ModelError::Validation { rule: "product of zero machines".into() });
    }
    let mut b = MachineBuilder::new();
    // Channel and letter maps from (machine index, local id) to global id.
    let mut chan_map: Vec<Vec<ChannelId>> = Vec::new();
    let mut letter_map: Vec<Vec<LetterId>> = Vec::new();
    for m in machines {
        let mut cm = Vec::new();
        for c in m.channels() {
            let name = m.channel_name(c);
            let id = match b.find_channel(name) {
                Some(id) => id,
                None => b.channel(name)?,
            };
            cm.push(id);
        }
        chan_map.push(cm);
    }
    for (i, m) in machines.iter().enumerate() {
        let mut lm = Vec::new();
        for a in m.letters() {
            let name = m.letter_name(a);
            let home = chan_map[i][m.letter_channel(a).0];
            let id = match b.find_letter(name) {
                Some(id) => id,
                None => b.letter(home, name)?,
            };
            lm.push(id);
        }
        letter_map.push(lm);
    }
    // Letters resolved by name must agree on the channel; the builder only
    // catches fresh insertions, so re-check resolved ids here.
    for (i, m) in machines.iter().enumerate() {
        for a in m.letters() {
            let global = letter_map[i][a.0];
            let want = chan_map[i][m.letter_channel(a).0];
            // Builder stores the home channel of the first occurrence.
            if b.letter_channel_of(global) != want {
                return Err(ModelError::AlphabetClash {
                    letter: m.letter_name(a).to_string(),
                    first: b.channel_name_of(b.letter_channel_of(global)).to_string(),
                    second: b.channel_name_of(want).to_string(),
                });
            }
        }
    }

    // Global states in row-major order over component state lists.
    let dims: Vec<usize> = machines.iter().map(|m| m.n_states()).collect();
    let total: usize = dims.iter().product();
    let tuple_of = |mut idx: usize| -> Vec<StateId> {
        let mut t = vec![StateId(0); dims.len()];
        for i in (0..dims.len()).rev() {
            t[i] = StateId(idx % dims[i]);
            idx /= dims[i];
        }
        t
    };
    let index_of = |t: &[StateId]| -> usize {
        let mut idx = 0;
        for (i, q) in t.iter().enumerate() {
            idx = idx * dims[i] + q.0;
        }
        idx
    };
    let mut global_states = Vec::with_capacity(total);
    for idx in 0..total {
        let tuple = tuple_of(idx);
        let name = tuple
            .iter()
            .enumerate()
            .map(|(i, &q)| machines[i].state_name(q))
            .collect::<Vec<_>>()
            .join("|");
        global_states.push(b.state(&name)?);
    }
    let init_tuple: Vec<StateId> = machines.iter().map(|m| m.initial()).collect();
    b.initial(global_states[index_of(&init_tuple)])?;

    for (i, m) in machines.iter().enumerate() {
        for t in m.transitions() {
            // Enumerate combinations of the other components' states.
            let mut combo: Vec<usize> = vec![0; dims.len()];
            loop {
                let mut src_tuple: Vec<StateId> = combo.iter().map(|&x| StateId(x)).collect();
                src_tuple[i] = t.source;
                let mut tgt_tuple = src_tuple.clone();
                tgt_tuple[i] = t.target;
                let src = global_states[index_of(&src_tuple)];
                let tgt = global_states[index_of(&tgt_tuple)];
                let action = match t.action {
                    Action::Internal => Action::Internal,
                    Action::Send(c, a) => Action::Send(chan_map[i][c.0], letter_map[i][a.0]),
                    Action::Retrieve(c, a) => {
                        Action::Retrieve(chan_map[i][c.0], letter_map[i][a.0])
                    }
                };
                let name = format!(
                    "{}@{}",
                    t.name,
                    src_tuple
                        .iter()
                        .enumerate()
                        .map(|(k, &q)| machines[k].state_name(q))
                        .collect::<Vec<_>>()
                        .join("|")
                );
                b.transition(&name, src, tgt, action)?;
                // Advance the mixed-radix counter, skipping component i.
                let mut j = dims.len();
                loop {
                    if j == 0 {
                        break;
                    }
                    j -= 1;
                    if j == i {
                        continue;
                    }
                    combo[j] += 1;
                    if combo[j] < dims[j] {
                        break;
                    }
                    combo[j] = 0;
                }
                let done = (0..dims.len()).filter(|&k| k != i).all(|k| combo[k] == 0);
                if done {
                    break;
                }
            }
        }
    }
    b.finish()
}

impl MachineBuilder {
    fn letter_channel_of(&self, a: LetterId) -> ChannelId {
        self.letter_channels[a.0]
    }
}

/// A state name starting from `base` that is unused in `b`.
pub fn fresh_state_name(b: &MachineBuilder, base: &str) -> String {
    let mut name = base.to_string();
    while b.find_state(&name).is_some() {
        name.push('x');
    }
    name
}

/// A channel name starting from `base` that is unused in `b`.
pub fn fresh_channel_name(b: &MachineBuilder, base: &str) -> String {
    let mut name = base.to_string();
    while b.find_channel(&name).is_some() {
        name.push('x');
    }
    name
}

/// A letter name starting from `base` that is unused in `b`.
pub fn fresh_letter_name(b: &MachineBuilder, base: &str) -> String {
    let mut name = base.to_string();
    while b.find_letter(&name).is_some() {
        name.push('x');
    }
    name
}

/// A transition name starting from `base` that is unused in `b`.
pub fn fresh_trans_name(b: &MachineBuilder, base: &str) -> String {
    let mut name = base.to_string();
    while b.find_transition(&name).is_some() {
        name.push('x');
    }
    name
}

/// Rebuilds `m` in a builder, preserving every id. The initial state is
/// left unset so extensions can pick their own.
pub fn builder_from(m: &FifoMachine) -> MachineBuilder {
    let mut b = MachineBuilder::new();
    for c in m.channels() {
        b.channel(m.channel_name(c)).expect("copied channel");
    }
    for a in m.letters() {
        b.letter(m.letter_channel(a), m.letter_name(a)).expect("copied letter");
    }
    for q in m.states() {
        b.state(m.state_name(q)).expect("copied state");
    }
    for t in m.transitions() {
        b.transition(&t.name, t.source, t.target, t.action).expect("copied transition");
    }
    b
}

// ---------------------------------------------------------------------------
// Flatness

/// Per-state cycle structure of a flat machine.
#[derive(Debug)]
pub struct FlatAnalysis {
    /// Elementary loop anchored at each state, when the state lies on one.
    loop_at: Vec<Option<ElementaryLoop>>,
    /// Strongly connected component index per state.
    scc_of: Vec<usize>,
}

impl FlatAnalysis {
    pub fn loop_at(&self, q: StateId) -> Option<&ElementaryLoop> {
        self.loop_at[q.0].as_ref()
    }

    pub fn scc_of(&self, q: StateId) -> usize {
        self.scc_of[q.0]
    }
}

fn sccs(m: &FifoMachine) -> Vec<usize> {
    let mut g = petgraph::graph::DiGraph::<(), ()>::new();
    let nodes: Vec<_> = (0..m.n_states()).map(|_| g.add_node(())).collect();
    for t in m.transitions() {
        g.add_edge(nodes[t.source.0], nodes[t.target.0], ());
    }
    let comps = petgraph::algo::tarjan_scc(&g);
    let mut scc_of = vec![0; m.n_states()];
    for (i, comp) in comps.iter().enumerate() {
        for &n in comp {
            scc_of[n.index()] = i;
        }
    }
    scc_of
}

/// Shortest transition path from `from` to `to` using only transitions
/// within one component. `None` when unreachable inside the component.
fn scc_path(m: &FifoMachine, scc_of: &[usize], from: StateId, to: StateId) -> Option<Vec<TransId>> {
    if from == to {
        return Some(Vec::new());
    }
    let comp = scc_of[from.0];
    let mut prev: BTreeMap<StateId, (StateId, TransId)> = BTreeMap::new();
    let mut queue = VecDeque::new();
    queue.push_back(from);
    let mut seen = BTreeSet::new();
    seen.insert(from);
    while let Some(q) = queue.pop_front() {
        if q == to {
            let mut path = Vec::new();
            let mut cur = to;
            while cur != from {
                let &(p, t) = prev.get(&cur)?;
                path.push(t);
                cur = p;
            }
            path.reverse();
            return Some(path);
        }
        for &t in m.out(q) {
            let tgt = m.trans(t).target;
            if scc_of[tgt.0] == comp && seen.insert(tgt) {
                prev.insert(tgt, (q, t));
                queue.push_back(tgt);
            }
        }
    }
    None
}

/// Checks flatness; on failure returns a state together with two distinct
/// cycles through it.
pub fn check_flat(m: &FifoMachine) -> Result<FlatAnalysis, NonFlatWitness> {
    let scc_of = sccs(m);
    // A machine is flat iff every state has at most one outgoing
    // transition staying in its component: inside a component every edge
    // lies on a cycle, and following unique within-component edges shows
    // each nontrivial component is a single elementary cycle.
    let mut inner: Vec<Vec<TransId>> = vec![Vec::new(); m.n_states()];
    for t in m.transitions() {
        if scc_of[t.source.0] == scc_of[t.target.0] {
            inner[t.source.0].push(t.id);
        }
    }
    for q in m.states() {
        if inner[q.0].len() >= 2 {
            let t1 = inner[q.0][0];
            let t2 = inner[q.0][1];
            let back1 = scc_path(m, &scc_of, m.trans(t1).target, q).unwrap_or_default();
            let back2 = scc_path(m, &scc_of, m.trans(t2).target, q).unwrap_or_default();
            let mut cycle_a = vec![t1];
            cycle_a.extend(back1);
            let mut cycle_b = vec![t2];
            cycle_b.extend(back2);
            return Err(NonFlatWitness { state: q, cycle_a, cycle_b });
        }
    }
    // Flat: each nontrivial component is one cycle; record rotations.
    let mut loop_at: Vec<Option<ElementaryLoop>> = vec![None; m.n_states()];
    for q in m.states() {
        if loop_at[q.0].is_some() {
            continue;
        }
        let Some(&t0) = inner[q.0].first() else { continue };
        // Walk the unique cycle through q; it returns to q because the
        // component is strongly connected and out-degrees within it are 1.
        let mut body = vec![t0];
        let mut cur = m.trans(t0).target;
        while cur != q {
            let t = inner[cur.0][0];
            body.push(t);
            cur = m.trans(t).target;
        }
        // Anchor a rotation at every state of the cycle.
        let states: Vec<StateId> =
            std::iter::once(q).chain(body[..body.len() - 1].iter().map(|&t| m.trans(t).target)).collect();
        for (i, &s) in states.iter().enumerate() {
            let mut rot = body[i..].to_vec();
            rot.extend_from_slice(&body[..i]);
            loop_at[s.0] = Some(ElementaryLoop { anchor: s, body: rot });
        }
    }
    Ok(FlatAnalysis { loop_at, scc_of })
}

/// True when no control state lies on two distinct cycles.
pub fn is_flat(m: &FifoMachine) -> bool {
    check_flat(m).is_ok()
}

fn not_flat_err(m: &FifoMachine, w: &NonFlatWitness) -> ModelError {
    ModelError::NotFlat { state: m.state_name(w.state).to_string() }
}

/// The elementary loop through `q`, as a rotation anchored at `q`, or
/// `None` when `q` lies on no cycle. Errors when the machine is not flat.
pub fn loop_of(m: &FifoMachine, q: StateId) -> Result<Option<ElementaryLoop>, ModelError> {
    let analysis = check_flat(m).map_err(|w| not_flat_err(m, &w))?;
    Ok(analysis.loop_at(q).cloned())
}

/// Enumerates the path schemas from `from` to `to`: one per simple path,
/// in lexicographic transition-id order, with each elementary loop met
/// along the path attached at its first entry state. Iterating a loop at
/// a later state of the same cycle is equivalent to iterating at the
/// entry (the walked arc commutes with full rotations), so this set of
/// schemas covers every run along the path.
pub fn path_schemas(
    m: &FifoMachine,
    from: StateId,
    to: StateId,
) -> Result<Vec<PathSchema>, ModelError> {
    let analysis = check_flat(m).map_err(|w| not_flat_err(m, &w))?;
    let mut result = Vec::new();
    // Depth-first enumeration of simple paths; `path` holds transitions,
    // `visited` the states on the current path.
    let mut path: Vec<TransId> = Vec::new();
    let mut visited: BTreeSet<StateId> = BTreeSet::new();
    visited.insert(from);
    fn dfs(
        m: &FifoMachine,
        analysis: &FlatAnalysis,
        cur: StateId,
        to: StateId,
        path: &mut Vec<TransId>,
        visited: &mut BTreeSet<StateId>,
        result: &mut Vec<PathSchema>,
    ) {
        if cur == to {
            result.push(schema_of_path(m, analysis, if path.is_empty() { cur } else { m.trans(path[0]).source }, path));
        }
        for &t in m.out(cur) {
            let tgt = m.trans(t).target;
            if visited.contains(&tgt) {
                continue;
            }
            visited.insert(tgt);
            path.push(t);
            dfs(m, analysis, tgt, to, path, visited, result);
            path.pop();
            visited.remove(&tgt);
        }
    }
    dfs(m, &analysis, from, to, &mut path, &mut visited, &mut result);
    Ok(result)
}

/// Decorates a simple path with loops at first-entry states.
fn schema_of_path(
    m: &FifoMachine,
    analysis: &FlatAnalysis,
    start: StateId,
    path: &[TransId],
) -> PathSchema {
    let mut states = vec![start];
    for &t in path {
        states.push(m.trans(t).target);
    }
    let mut prefix = Vec::new();
    let mut parts: Vec<(ElementaryLoop, Vec<TransId>)> = Vec::new();
    let mut attached_sccs: BTreeSet<usize> = BTreeSet::new();
    for (i, &q) in states.iter().enumerate() {
        let attach = match analysis.loop_at(q) {
            Some(_) => attached_sccs.insert(analysis.scc_of(q)),
            None => false,
        };
        if attach {
            let l = analysis.loop_at(q).expect("loop present").clone();
            parts.push((l, Vec::new()));
        }
        if i < path.len() {
            match parts.last_mut() {
                Some((_, seg)) => seg.push(path[i]),
                None => prefix.push(path[i]),
            }
        }
    }
    PathSchema { start, prefix, parts }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{letters, pump_retrieve};

    #[test]
    fn parse_basics() {
        let m = pump_retrieve();
        assert_eq!(m.n_states(), 4);
        assert_eq!(m.n_channels(), 1);
        assert_eq!(m.n_letters(), 2);
        assert_eq!(m.n_transitions(), 5);
        assert_eq!(m.state_name(m.initial()), "q1");
        let t5 = m.trans_by_name("t5").unwrap();
        assert!(m.trans(t5).action.is_internal());
    }

    #[test]
    fn render_round_trip() {
        let m = pump_retrieve();
        let again = parse_machine(&render_machine(&m)).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn json_round_trip() {
        let m = pump_retrieve();
        let again = machine_from_json(&machine_to_json(&m)).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn parse_reports_position() {
        let text = "channels c\nalphabet c: a\nstate q0 init\ntrans t q0 qX c!a\n";
        match parse_machine(text) {
            Err(ModelError::Parse { line, col, message }) => {
                assert_eq!(line, 4);
                assert_eq!(col, 12);
                assert!(message.contains("qX"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn letter_partition_enforced() {
        let text = "channels c d\nalphabet c: a\nalphabet d: a\nstate q0 init\n";
        match parse_machine(text) {
            Err(ModelError::Parse { message, .. }) => {
                assert!(message.contains("channel"), "{message}");
            }
            other => panic!("expected clash, got {other:?}"),
        }
        let opts = ParseOptions { rename_cross_channel_letters: true };
        let m = parse_machine_with(text, opts).unwrap();
        assert_eq!(m.n_letters(), 2);
        assert!(m.letter_by_name("a__d").is_some());
    }

    #[test]
    fn step_perfect() {
        let m = pump_retrieve();
        let t1 = m.trans_by_name("t1").unwrap();
        let t3 = m.trans_by_name("t3").unwrap();
        let t4 = m.trans_by_name("t4").unwrap();
        let init = Config::initial(&m);
        let next = step(&m, &init, t1, Semantics::Perfect);
        assert_eq!(next.len(), 1);
        assert_eq!(next[0].state, m.state_by_name("q2").unwrap());
        assert_eq!(next[0].channels.content(ChannelId(0)), &letters(&m, "a"));

        let q3 = m.state_by_name("q3").unwrap();
        let cfg = Config::new(q3, ChannelValuation::new(vec![letters(&m, "a")]));
        let sent = step(&m, &cfg, t3, Semantics::Perfect);
        assert_eq!(sent[0].channels.content(ChannelId(0)), &letters(&m, "aa"));
        let got = step(&m, &sent[0], t4, Semantics::Perfect);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].state, q3);
        assert_eq!(got[0].channels.content(ChannelId(0)), &letters(&m, "a"));

        // Retrieval blocks on a mismatched head.
        let q4 = m.state_by_name("q4").unwrap();
        let blocked = Config::new(q4, ChannelValuation::new(vec![letters(&m, "ba")]));
        assert!(step(&m, &blocked, t4, Semantics::Perfect).is_empty());
    }

    #[test]
    fn step_front_lossy() {
        let m = pump_retrieve();
        let t4 = m.trans_by_name("t4").unwrap();
        let q4 = m.state_by_name("q4").unwrap();
        let cfg = Config::new(q4, ChannelValuation::new(vec![letters(&m, "baa")]));
        let succs = step(&m, &cfg, t4, Semantics::FrontLossy);
        assert_eq!(succs.len(), 2);
        assert_eq!(succs[0].channels.content(ChannelId(0)), &letters(&m, "a"));
        assert!(succs[1].channels.content(ChannelId(0)).is_empty());
        // Perfect semantics blocks here.
        assert!(step(&m, &cfg, t4, Semantics::Perfect).is_empty());
    }

    #[test]
    fn lose_removes_one_letter() {
        let m = pump_retrieve();
        let cfg = Config::new(m.initial(), ChannelValuation::new(vec![letters(&m, "ab")]));
        let all = lose_steps(&cfg);
        assert_eq!(all.len(), 2);
        assert_eq!(all[0].1.channels.content(ChannelId(0)), &letters(&m, "b"));
        assert_eq!(all[1].1.channels.content(ChannelId(0)), &letters(&m, "a"));
        assert!(lose(&cfg, ChannelId(0), 2).is_none());
    }

    #[test]
    fn product_counts() {
        let left = parse_machine(
            "channels c\nalphabet c: a\nstate p0 init\nstate p1\ntrans s p0 p1 c!a\n",
        )
        .unwrap();
        let right = parse_machine(
            "channels c\nalphabet c:\nstate r0 init\nstate r1\nstate r2\ntrans u r0 r1 tau\ntrans v r1 r2 tau\n",
        )
        .unwrap();
        let p = product(&[&left, &right]).unwrap();
        assert_eq!(p.n_states(), 6);
        // 1 transition x 3 peer states + 2 transitions x 2 peer states.
        assert_eq!(p.n_transitions(), 7);
        assert_eq!(p.state_name(p.initial()), "p0|r0");
        assert_eq!(p.n_channels(), 1);
        let round = parse_machine(&render_machine(&p)).unwrap();
        assert_eq!(p, round);
    }

    #[test]
    fn product_rejects_cross_channel_letters() {
        let left =
            parse_machine("channels c\nalphabet c: a\nstate p0 init\n").unwrap();
        let right =
            parse_machine("channels d\nalphabet d: a\nstate r0 init\n").unwrap();
        match product(&[&left, &right]) {
            Err(ModelError::AlphabetClash { letter, .. }) => assert_eq!(letter, "a"),
            other => panic!("expected clash, got {other:?}"),
        }
    }

    #[test]
    fn flatness_of_disjoint_loops() {
        let m = pump_retrieve();
        assert!(is_flat(&m));
    }

    #[test]
    fn two_self_loops_are_not_flat() {
        let text = "channels c\nalphabet c: x y\nstate q init\ntrans t1 q q c!x\ntrans t2 q q c?y\n";
        let m = parse_machine(text).unwrap();
        let w = check_flat(&m).unwrap_err();
        assert_eq!(w.state, m.initial());
        assert_eq!(w.cycle_a, vec![TransId(0)]);
        assert_eq!(w.cycle_b, vec![TransId(1)]);
    }

    #[test]
    fn overlapping_cycles_are_not_flat() {
        // q0 -> q1 -> q0 and q0 -> q1 -> q2 -> q0 share the edge q0 -> q1.
        let text = "state q0 init\nstate q1\nstate q2\n\
                    trans a q0 q1 tau\ntrans b q1 q0 tau\ntrans c q1 q2 tau\ntrans d q2 q0 tau\n";
        let m = parse_machine(text).unwrap();
        let w = check_flat(&m).unwrap_err();
        assert_eq!(w.state, m.state_by_name("q1").unwrap());
        assert_ne!(w.cycle_a, w.cycle_b);
        // Both certificates really are cycles through the state.
        for cyc in [&w.cycle_a, &w.cycle_b] {
            let mut cur = w.state;
            for &t in cyc {
                assert_eq!(m.trans(t).source, cur);
                cur = m.trans(t).target;
            }
            assert_eq!(cur, w.state);
        }
    }

    #[test]
    fn loop_rotations() {
        let m = pump_retrieve();
        let q3 = m.state_by_name("q3").unwrap();
        let q4 = m.state_by_name("q4").unwrap();
        let t3 = m.trans_by_name("t3").unwrap();
        let t4 = m.trans_by_name("t4").unwrap();
        assert_eq!(loop_of(&m, q3).unwrap().unwrap().body, vec![t3, t4]);
        assert_eq!(loop_of(&m, q4).unwrap().unwrap().body, vec![t4, t3]);
        // A state on no cycle.
        let lone = parse_machine("state a init\nstate b\ntrans t a b tau\n").unwrap();
        assert!(loop_of(&lone, StateId(1)).unwrap().is_none());
    }

    #[test]
    fn schemas_of_pump_retrieve() {
        let m = pump_retrieve();
        let q1 = m.state_by_name("q1").unwrap();
        let q3 = m.state_by_name("q3").unwrap();
        let schemas = path_schemas(&m, q1, q3).unwrap();
        assert_eq!(schemas.len(), 1);
        let s = &schemas[0];
        assert!(s.prefix.is_empty());
        assert_eq!(s.parts.len(), 2);
        assert_eq!(s.parts[0].0.body, vec![TransId(0), TransId(1)]);
        assert_eq!(s.parts[0].1, vec![TransId(4)]);
        assert_eq!(s.parts[1].0.body, vec![TransId(2), TransId(3)]);
        assert!(s.parts[1].1.is_empty());
        assert_eq!(s.end(&m), q3);
        assert_eq!(
            s.expand(&[1, 1]),
            vec![TransId(0), TransId(1), TransId(4), TransId(2), TransId(3)]
        );
    }

    /// Two elementary loops off a four-state chain, with a direct chord,
    /// a bridge between the loops, and an exit from the second loop.
    fn two_loop_ladder() -> FifoMachine {
        let text = "\
state q0 init
state u01
state q1
state u12
state q2
state u23
state q3
state u14
state q4
state p14
state u25
state q5
state q6
trans e1 q0 u01 tau
trans e2 u01 q1 tau
trans e3 q1 u12 tau
trans e4 u12 q2 tau
trans e5 q2 u23 tau
trans e6 u23 q3 tau
trans l1a q1 u14 tau
trans l1b u14 q4 tau
trans l1c q4 p14 tau
trans l1d p14 q1 tau
trans l2a q2 u25 tau
trans l2b u25 q5 tau
trans l2c q5 q6 tau
trans l2d q6 q2 tau
trans chord q1 q3 tau
trans bridge q4 q5 tau
trans exit q6 q3 tau
";
        parse_machine(text).unwrap()
    }

    #[test]
    fn schemas_of_two_loop_ladder() {
        let m = two_loop_ladder();
        let q0 = m.state_by_name("q0").unwrap();
        let q3 = m.state_by_name("q3").unwrap();
        let schemas = path_schemas(&m, q0, q3).unwrap();
        // Five simple paths: the chord, the bottom chain, the chain into
        // the second loop's arc with the q6 exit, and two routes through
        // the bridge (exiting the second loop at q6 or at q2).
        assert_eq!(schemas.len(), 5);
        for s in &schemas {
            assert_eq!(s.start, q0);
            assert_eq!(s.end(&m), q3);
        }
        let loop_counts: Vec<usize> = schemas.iter().map(|s| s.parts.len()).collect();
        assert_eq!(loop_counts.iter().filter(|&&n| n == 1).count(), 1);
        assert_eq!(loop_counts.iter().filter(|&&n| n == 2).count(), 4);
    }

    #[test]
    fn schema_machine_has_one_schema() {
        let m = two_loop_ladder();
        // Drop the chord, bridge and exit: what remains is shaped like a
        // schema, so exactly one schema comes back, and it is strict.
        let keep: Vec<&Transition> = m
            .transitions()
            .iter()
            .filter(|t| !matches!(t.name.as_str(), "chord" | "bridge" | "exit"))
            .collect();
        let mut b = MachineBuilder::new();
        for q in m.states() {
            b.state(m.state_name(q)).unwrap();
        }
        b.initial(m.initial()).unwrap();
        for t in keep {
            b.transition(&t.name, t.source, t.target, t.action).unwrap();
        }
        let schema_machine = b.finish().unwrap();
        let q0 = schema_machine.state_by_name("q0").unwrap();
        let q3 = schema_machine.state_by_name("q3").unwrap();
        let schemas = path_schemas(&schema_machine, q0, q3).unwrap();
        assert_eq!(schemas.len(), 1);
        assert!(schemas[0].is_strict(&schema_machine));
        assert_eq!(schemas[0].parts.len(), 2);
    }

    #[test]
    fn schema_at_same_state() {
        let m = pump_retrieve();
        let q1 = m.state_by_name("q1").unwrap();
        let schemas = path_schemas(&m, q1, q1).unwrap();
        assert_eq!(schemas.len(), 1);
        assert!(schemas[0].prefix.is_empty());
        assert_eq!(schemas[0].parts.len(), 1);
        assert_eq!(schemas[0].end(&m), q1);
    }

    #[test]
    fn non_flat_analyses_report_the_state() {
        let text = "state q init\ntrans a q q tau\ntrans b q q tau\n";
        let m = parse_machine(text).unwrap();
        assert!(matches!(loop_of(&m, StateId(0)), Err(ModelError::NotFlat { .. })));
        assert!(matches!(path_schemas(&m, StateId(0), StateId(0)), Err(ModelError::NotFlat { .. })));
    }
}
