//! Bounded explicit-state exploration.
//!
//! The explorer is the crate's ground truth: a naive breadth-first
//! closure of [`step`] under explicit bounds. Symbolic procedures are
//! validated against it, so it stays deliberately simple. Lossy
//! exploration inserts single-letter loss edges between transition
//! steps; front-lossy branching comes out of `step` itself.

use crate::model::{
    lose_steps, successors, ChannelId, Config, FifoMachine, LetterId, Semantics, TransId,
};
use std::collections::{BTreeMap, VecDeque};

/// Exploration limits. A search that never hits any of them has computed
/// the exact reachability set.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct ExploreBounds {
    pub max_configs: usize,
    pub max_channel_len: usize,
    pub max_depth: usize,
}

impl Default for ExploreBounds {
    fn default() -> Self {
        ExploreBounds { max_configs: 50_000, max_channel_len: 20, max_depth: 100_000 }
    }
}

/// Edge label of the reach graph: a machine transition or an explicit
/// loss of the letter at `index` of `channel`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub enum EdgeLabel {
    Trans(TransId),
    Lose(ChannelId, usize),
}

/// Explored configurations and edges. Configurations are stored once,
/// in discovery order; edges refer to them by index.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ReachGraph {
    configs: Vec<Config>,
    index: BTreeMap<Config, usize>,
    edges: Vec<(usize, EdgeLabel, usize)>,
    /// True when some successor was dropped because a bound was hit.
    pub truncated: bool,
}

impl ReachGraph {
    pub fn configs(&self) -> &[Config] {
        &self.configs
    }

    pub fn edges(&self) -> &[(usize, EdgeLabel, usize)] {
        &self.edges
    }

    pub fn contains(&self, cfg: &Config) -> bool {
        self.index.contains_key(cfg)
    }

    pub fn index_of(&self, cfg: &Config) -> Option<usize> {
        self.index.get(cfg).copied()
    }

    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }
}

/// Three-valued oracle verdict.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Answer {
    Yes,
    No,
    Unknown,
}

fn explore_with(
    m: &FifoMachine,
    init: &Config,
    sem: Semantics,
    b: &ExploreBounds,
    mut on_skipped: impl FnMut(&Config),
) -> ReachGraph {
    let mut g = ReachGraph {
        configs: vec![init.clone()],
        index: BTreeMap::new(),
        edges: Vec::new(),
        truncated: false,
    };
    g.index.insert(init.clone(), 0);
    let mut queue: VecDeque<(usize, usize)> = VecDeque::new();
    queue.push_back((0, 0));
    while let Some((src, depth)) = queue.pop_front() {
        let cfg = g.configs[src].clone();
        let mut succs: Vec<(EdgeLabel, Config)> = successors(m, &cfg, sem)
            .into_iter()
            .map(|(t, c)| (EdgeLabel::Trans(t), c))
            .collect();
        if sem == Semantics::Lossy {
            succs.extend(
                lose_steps(&cfg).into_iter().map(|((c, i), next)| (EdgeLabel::Lose(c, i), next)),
            );
        }
        // Canonical frontier order: label order first regenerates the
        // deterministic successor enumeration, then configs themselves.
        succs.sort_by(|(la, ca), (lb, cb)| (ca, la).cmp(&(cb, lb)));
        for (label, next) in succs {
            if depth + 1 > b.max_depth
                || next.channels.contents().iter().any(|w| w.len() > b.max_channel_len)
            {
                g.truncated = true;
                on_skipped(&next);
                continue;
            }
            let idx = match g.index.get(&next) {
                Some(&i) => i,
                None => {
                    if g.configs.len() >= b.max_configs {
                        g.truncated = true;
                        on_skipped(&next);
                        continue;
                    }
                    let i = g.configs.len();
                    g.configs.push(next.clone());
                    g.index.insert(next.clone(), i);
                    queue.push_back((i, depth + 1));
                    i
                }
            };
            g.edges.push((src, label, idx));
        }
    }
    g
}

/// Breadth-first closure of `step` (plus loss edges under the lossy
/// semantics) from `init`, stopping at the bounds.
pub fn explore(m: &FifoMachine, init: &Config, sem: Semantics, b: &ExploreBounds) -> ReachGraph {
    explore_with(m, init, sem, b, |_| {})
}

/// Is `target` reachable from `init`? `Unknown` when the search was
/// truncated before finding it.
pub fn oracle_reachable(
    m: &FifoMachine,
    init: &Config,
    target: &Config,
    sem: Semantics,
    b: &ExploreBounds,
) -> Answer {
    let g = explore(m, init, sem, b);
    if g.contains(target) {
        Answer::Yes
    } else if !g.truncated {
        Answer::No
    } else {
        Answer::Unknown
    }
}

/// Is there a non-empty run from `cfg` back to itself (perfect
/// semantics)?
pub fn oracle_cyclic(m: &FifoMachine, cfg: &Config, b: &ExploreBounds) -> Answer {
    let g = explore(m, cfg, Semantics::Perfect, b);
    let back = g.index_of(cfg).expect("initial config present");
    if g.edges().iter().any(|&(_, _, dst)| dst == back) {
        Answer::Yes
    } else if !g.truncated {
        Answer::No
    } else {
        Answer::Unknown
    }
}

/// Largest observed occurrence count of `letter` in `channel` over the
/// explored set (perfect semantics). `saturated` is true when the search
/// was truncated while the count was still live at the frontier: some
/// dropped successor carried a positive count matching or exceeding the
/// reported maximum, so the maximum cannot be certified.
pub fn oracle_max_letter_count(
    m: &FifoMachine,
    init: &Config,
    channel: ChannelId,
    letter: LetterId,
    b: &ExploreBounds,
) -> (usize, bool) {
    debug_assert_eq!(m.letter_channel(letter), channel);
    let count =
        |cfg: &Config| cfg.channels.content(channel).iter().filter(|&&a| a == letter).count();
    let mut max_skipped = 0usize;
    let g = explore_with(m, init, Semantics::Perfect, b, |cfg| {
        max_skipped = max_skipped.max(count(cfg));
    });
    let max_seen = g.configs().iter().map(count).max().unwrap_or(0);
    (max_seen, g.truncated && max_skipped > 0 && max_skipped >= max_seen)
}

/// JSON rendering of a reach graph: configuration list (state name plus
/// per-channel letter arrays), edge triples over configuration indices,
/// and the truncation flag.
pub fn reach_graph_to_json(m: &FifoMachine, g: &ReachGraph) -> String {
    use serde_json::{json, Value};
    let configs: Vec<Value> = g
        .configs()
        .iter()
        .map(|cfg| {
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
        })
        .collect();
    let edges: Vec<Value> = g
        .edges()
        .iter()
        .map(|&(src, label, dst)| match label {
            EdgeLabel::Trans(t) => {
                json!({ "from": src, "to": dst, "trans": m.trans(t).name })
            }
            EdgeLabel::Lose(c, i) => {
                json!({ "from": src, "to": dst, "lose": { "channel": m.channel_name(c), "index": i } })
            }
        })
        .collect();
    serde_json::to_string_pretty(&json!({
        "configs": configs,
        "edges": edges,
        "truncated": g.truncated,
    }))
    .expect("graph serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{letters, pump_retrieve};
    use crate::model::{parse_machine, step, ChannelValuation};

    fn bounds(configs: usize, len: usize) -> ExploreBounds {
        ExploreBounds { max_configs: configs, max_channel_len: len, max_depth: 100_000 }
    }

    #[test]
    fn explores_pumping_loop_until_truncation() {
        let m = pump_retrieve();
        let g = explore(&m, &Config::initial(&m), Semantics::Perfect, &bounds(10_000, 6));
        assert!(g.truncated);
        let q1 = m.state_by_name("q1").unwrap();
        let q3 = m.state_by_name("q3").unwrap();
        let has = |q, s: &str| {
            g.contains(&Config::new(q, ChannelValuation::new(vec![letters(&m, s)])))
        };
        assert!(has(q1, "ab"));
        assert!(has(q3, "abab"));
        assert!(!has(q1, "ba"));
    }

    #[test]
    fn no_transitions_means_singleton() {
        let m = parse_machine("state q init\n").unwrap();
        let g = explore(&m, &Config::initial(&m), Semantics::Perfect, &ExploreBounds::default());
        assert_eq!(g.len(), 1);
        assert!(!g.truncated);
    }

    #[test]
    fn steady_loop_is_finite() {
        // Just the send/retrieve loop: two configurations, no truncation.
        let m = parse_machine(
            "channels c\nalphabet c: a\nstate q3 init\nstate q4\ntrans t3 q3 q4 c!a\ntrans t4 q4 q3 c?a\n",
        )
        .unwrap();
        let init = Config::new(m.initial(), ChannelValuation::new(vec![letters(&m, "a")]));
        let g = explore(&m, &init, Semantics::Perfect, &ExploreBounds::default());
        assert!(!g.truncated);
        assert_eq!(g.len(), 2);
        let q4 = m.state_by_name("q4").unwrap();
        assert!(g.contains(&Config::new(q4, ChannelValuation::new(vec![letters(&m, "aa")]))));
    }

    #[test]
    fn edges_replay_through_step() {
        let m = pump_retrieve();
        let g = explore(&m, &Config::initial(&m), Semantics::Lossy, &bounds(300, 4));
        for &(src, label, dst) in g.edges() {
            let from = &g.configs()[src];
            let to = &g.configs()[dst];
            match label {
                EdgeLabel::Trans(t) => {
                    assert!(step(&m, from, t, Semantics::Lossy).contains(to))
                }
                EdgeLabel::Lose(c, i) => {
                    assert_eq!(crate::model::lose(from, c, i).as_ref(), Some(to))
                }
            }
        }
    }

    #[test]
    fn deterministic_replay() {
        let m = pump_retrieve();
        let b = bounds(500, 5);
        let g1 = explore(&m, &Config::initial(&m), Semantics::FrontLossy, &b);
        let g2 = explore(&m, &Config::initial(&m), Semantics::FrontLossy, &b);
        assert_eq!(g1, g2);
    }

    #[test]
    fn perfect_reach_is_inside_weaker_semantics() {
        let m = pump_retrieve();
        let b = bounds(5_000, 5);
        let perfect = explore(&m, &Config::initial(&m), Semantics::Perfect, &b);
        let lossy = explore(&m, &Config::initial(&m), Semantics::Lossy, &b);
        let front = explore(&m, &Config::initial(&m), Semantics::FrontLossy, &b);
        for cfg in perfect.configs() {
            assert!(lossy.contains(cfg));
            assert!(front.contains(cfg));
        }
    }

    #[test]
    fn reachability_answers() {
        let m = pump_retrieve();
        let init = Config::initial(&m);
        let q3 = m.state_by_name("q3").unwrap();
        let q1 = m.state_by_name("q1").unwrap();
        let target = Config::new(q3, ChannelValuation::new(vec![letters(&m, "ab")]));
        let b = bounds(10_000, 8);
        assert_eq!(oracle_reachable(&m, &init, &target, Semantics::Perfect, &b), Answer::Yes);
        // FIFO order never produces b before a.
        let bad = Config::new(q1, ChannelValuation::new(vec![letters(&m, "ba")]));
        assert_ne!(oracle_reachable(&m, &init, &bad, Semantics::Perfect, &b), Answer::Yes);
        assert_eq!(oracle_reachable(&m, &init, &init, Semantics::Perfect, &b), Answer::Yes);
    }

    #[test]
    fn cyclicity_answers() {
        let m = pump_retrieve();
        let q3 = m.state_by_name("q3").unwrap();
        let hold = Config::new(q3, ChannelValuation::new(vec![letters(&m, "a")]));
        assert_eq!(oracle_cyclic(&m, &hold, &bounds(1_000, 6)), Answer::Yes);
        // Contents strictly grow from (q1, ε), so no cycle within bound.
        assert_ne!(oracle_cyclic(&m, &Config::initial(&m), &bounds(1_000, 6)), Answer::Yes);
        let lone = parse_machine("state a init\nstate b\ntrans t a b tau\n").unwrap();
        assert_eq!(oracle_cyclic(&lone, &Config::initial(&lone), &bounds(10, 2)), Answer::No);
    }

    #[test]
    fn letter_count_saturation() {
        let m = pump_retrieve();
        let c = crate::model::ChannelId(0);
        let b_letter = m.letter_by_name("b").unwrap();
        let (count, saturated) =
            oracle_max_letter_count(&m, &Config::initial(&m), c, b_letter, &bounds(50_000, 10));
        assert!(count >= 5, "count = {count}");
        assert!(saturated);

        // The steady loop machine: the count tops out at 2, unsaturated.
        let steady = parse_machine(
            "channels c\nalphabet c: a\nstate q3 init\nstate q4\ntrans t3 q3 q4 c!a\ntrans t4 q4 q3 c?a\n",
        )
        .unwrap();
        let init = Config::new(
            steady.initial(),
            ChannelValuation::new(vec![letters(&steady, "a")]),
        );
        let sa = steady.letter_by_name("a").unwrap();
        let (count, saturated) =
            oracle_max_letter_count(&steady, &init, c, sa, &ExploreBounds::default());
        assert_eq!((count, saturated), (2, false));

        // A declared but never-sent letter.
        let dead = parse_machine(
            "channels c\nalphabet c: a d\nstate q init\ntrans t q q c!a\n",
        )
        .unwrap();
        let d_letter = dead.letter_by_name("d").unwrap();
        let (count, saturated) =
            oracle_max_letter_count(&dead, &Config::initial(&dead), c, d_letter, &bounds(100, 5));
        assert_eq!((count, saturated), (0, false));
    }

    #[test]
    fn graph_json_mentions_members() {
        let m = pump_retrieve();
        let g = explore(&m, &Config::initial(&m), Semantics::Perfect, &bounds(50, 3));
        let text = reach_graph_to_json(&m, &g);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["configs"].as_array().unwrap().len(), g.len());
        assert_eq!(v["truncated"], serde_json::Value::Bool(g.truncated));
        assert_eq!(v["configs"][0]["state"], "q1");
    }
}
