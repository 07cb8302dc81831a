//! Word combinatorics behind loop acceleration.
//!
//! Iterating a loop that retrieves `x` and sends `y` on a channel keeps
//! the channel content inside an ultimately periodic language. The key
//! fact is the prefix equation: `x^w = w . y^w` holds iff `x` splits as
//! `x'x''` with `x''x'` and `y` powers of one primitive word `z` and
//! `w` in `x* x'`. This module decides that equation, derives the
//! iterability test and the exact closed form for accelerated contents,
//! and decides cyclicity of a configuration in one loop firing.
//!
//! All word functions are generic in the letter type; machine-level
//! wrappers operate on [`Word`] and [`Config`].

use crate::model::{
    self, fire_sequence, Action, ChannelId, Config, ElementaryLoop, FifoMachine, ModelError, Word,
};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WordError {
    #[error("empty word has no primitive root")]
    EmptyWord,
    #[error("loop is not infinitely iterable from the given configuration")]
    NotIterable,
}

/// Witness for `x^w = w . y^w`: `x = x'x''`, `x''x' = z^j`, `y = z^k`,
/// `w = x^s x'`, with `z` primitive.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Decomposition<T> {
    pub x_prime: Vec<T>,
    pub x_dprime: Vec<T>,
    pub z: Vec<T>,
    pub j: usize,
    pub k: usize,
    /// Number of leading `x` blocks of `w`; `None` when the witness was
    /// built without reference to a concrete `w`.
    pub s: Option<usize>,
}

impl<T: Eq + Clone> Decomposition<T> {
    /// Recomputes the defining equations; used by tests and callers that
    /// treat decompositions as untrusted certificates.
    pub fn check(&self, x: &[T], w: Option<&[T]>, y: &[T]) -> bool {
        let mut xx = self.x_prime.clone();
        xx.extend_from_slice(&self.x_dprime);
        if xx != x {
            return false;
        }
        let mut rot = self.x_dprime.clone();
        rot.extend_from_slice(&self.x_prime);
        if rot != power(&self.z, self.j) {
            return false;
        }
        if y != power(&self.z, self.k) {
            return false;
        }
        match (w, self.s) {
            (Some(w), Some(s)) => {
                let mut blocks = power(x, s);
                blocks.extend_from_slice(&self.x_prime);
                blocks == w
            }
            (None, _) => true,
            (Some(_), None) => false,
        }
    }
}

/// Exact content family of an iterated loop on one channel: after `n`
/// iterations the content is `base . period^n`, and `period = z^stride`
/// for the primitive `z` of the loop's decomposition.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct PeriodicContent {
    pub base: Word,
    pub period: Word,
    pub stride: usize,
}

fn power<T: Clone>(z: &[T], e: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(z.len() * e);
    for _ in 0..e {
        out.extend_from_slice(z);
    }
    out
}

/// The primitive root of a nonempty word: the shortest `z` with
/// `w = z^e`. Checks every divisor period.
pub fn primitive_root<T: Eq + Clone>(w: &[T]) -> Result<(Vec<T>, usize), WordError> {
    if w.is_empty() {
        return Err(WordError::EmptyWord);
    }
    let n = w.len();
    for p in 1..=n {
        if n % p != 0 {
            continue;
        }
        if (p..n).all(|i| w[i] == w[i - p]) {
            return Ok((w[..p].to_vec(), n / p));
        }
    }
    unreachable!("p = n always matches");
}

/// Direct prefix comparison of `x^w` and `w . y^w` up to `len` symbols.
/// With `len = |w| + |x| + |y| + lcm(|x|,|y|)` this decides the full
/// equation; [`omega_prefix_eq`] is validated against it.
pub fn omega_prefix_eq_bounded<T: Eq>(x: &[T], w: &[T], y: &[T], len: usize) -> bool {
    assert!(!x.is_empty() && !y.is_empty());
    (0..len).all(|i| {
        let lhs = &x[i % x.len()];
        let rhs = if i < w.len() { &w[i] } else { &y[(i - w.len()) % y.len()] };
        lhs == rhs
    })
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// The decision length used by the exhaustive prefix oracle.
pub fn omega_decision_len(x_len: usize, w_len: usize, y_len: usize) -> usize {
    w_len + x_len + y_len + x_len / gcd(x_len, y_len) * y_len
}

/// Decides `x^w = w . y^w` and returns a witnessing decomposition.
///
/// Tries the `|x|+1` splits `x = x'x''` in order of increasing `|x'|`;
/// for a given split the primitive root of `x''x'` forces `z`, and the
/// lengths of `w` and `y` force `s` and `k`, so the enumeration is
/// complete.
pub fn omega_prefix_eq<T: Eq + Clone>(x: &[T], w: &[T], y: &[T]) -> Option<Decomposition<T>> {
    assert!(!x.is_empty() && !y.is_empty());
    for cut in 0..=x.len() {
        let (x_prime, x_dprime) = x.split_at(cut);
        // w must be x^s x'.
        if w.len() < x_prime.len() || (w.len() - x_prime.len()) % x.len() != 0 {
            continue;
        }
        let s = (w.len() - x_prime.len()) / x.len();
        let mut expect_w = power(x, s);
        expect_w.extend_from_slice(x_prime);
        if expect_w != w {
            continue;
        }
        let mut rot = x_dprime.to_vec();
        rot.extend_from_slice(x_prime);
        let (z, j) = primitive_root(&rot).expect("rotation of nonempty x");
        if y.len() % z.len() != 0 {
            continue;
        }
        let k = y.len() / z.len();
        if power(&z, k) != y {
            continue;
        }
        return Some(Decomposition {
            x_prime: x_prime.to_vec(),
            x_dprime: x_dprime.to_vec(),
            z,
            j,
            k,
            s: Some(s),
        });
    }
    None
}

/// The per-channel projection of one loop iteration: `x` the letters
/// retrieved from `c` and `y` the letters sent to `c`, in firing order.
pub fn loop_projection(m: &FifoMachine, l: &ElementaryLoop, c: ChannelId) -> (Word, Word) {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for &t in &l.body {
        match m.trans(t).action {
            Action::Retrieve(tc, a) if tc == c => x.push(a),
            Action::Send(tc, a) if tc == c => y.push(a),
            _ => {}
        }
    }
    (x, y)
}

/// Per-channel effect of one loop iteration, retrieved minus sent
/// lengths. Negative entries mean the loop grows the channel.
pub fn loop_effect(m: &FifoMachine, l: &ElementaryLoop) -> Vec<i64> {
    m.channels()
        .map(|c| {
            let (x, y) = loop_projection(m, l, c);
            x.len() as i64 - y.len() as i64
        })
        .collect()
}

/// Decides whether the loop can be fired infinitely often from `cfg`
/// (which must sit at the loop's anchor). Iterability holds iff the loop
/// fires once and, per channel, either nothing is retrieved or the
/// content satisfies the prefix equation against the loop projections
/// with `|x| <= |y|`. Returns the per-channel decompositions for the
/// channels that retrieve.
pub fn infinitely_iterable(
    m: &FifoMachine,
    l: &ElementaryLoop,
    cfg: &Config,
) -> Option<BTreeMap<ChannelId, Decomposition<crate::model::LetterId>>> {
    debug_assert_eq!(cfg.state, l.anchor);
    let mut witnesses = BTreeMap::new();
    let mut any_retrieve = false;
    for c in m.channels() {
        let (x, y) = loop_projection(m, l, c);
        if x.is_empty() {
            continue;
        }
        any_retrieve = true;
        if x.len() > y.len() {
            return None;
        }
        let d = omega_prefix_eq(&x, cfg.channels.content(c), &y)?;
        witnesses.insert(c, d);
    }
    if any_retrieve && fire_sequence(m, cfg, &l.body).is_none() {
        return None;
    }
    Some(witnesses)
}

/// Closed form of the channel contents at the anchor over all iteration
/// counts: after `n` firings channel `c` holds `base . period^n`.
/// Requires [`infinitely_iterable`].
pub fn accelerate_contents(
    m: &FifoMachine,
    l: &ElementaryLoop,
    cfg: &Config,
) -> Result<Vec<PeriodicContent>, WordError> {
    let witnesses = infinitely_iterable(m, l, cfg).ok_or(WordError::NotIterable)?;
    let mut out = Vec::with_capacity(m.n_channels());
    for c in m.channels() {
        let (x, y) = loop_projection(m, l, c);
        let base = cfg.channels.content(c).clone();
        let content = if x.is_empty() {
            if y.is_empty() {
                PeriodicContent { base, period: Vec::new(), stride: 0 }
            } else {
                // One iteration appends y verbatim; count in copies of
                // its primitive root for a canonical stride.
                let (_, k) = primitive_root(&y).expect("y nonempty");
                PeriodicContent { base, period: y, stride: k }
            }
        } else {
            let d = &witnesses[&c];
            let stride = d.k - d.j;
            PeriodicContent { base, period: power(&d.z, stride), stride }
        };
        out.push(content);
    }
    Ok(out)
}

/// Whether `cfg` lies on a non-empty run back to itself. In a flat
/// machine this happens iff the unique loop through `cfg.state` fires
/// once and restores the configuration, so one firing decides it.
pub fn cyclic(m: &FifoMachine, cfg: &Config) -> Result<bool, ModelError> {
    match model::loop_of(m, cfg.state)? {
        None => Ok(false),
        Some(l) => Ok(fire_sequence(m, cfg, &l.body).as_ref() == Some(cfg)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{letters, pump_retrieve};
    use crate::model::{loop_of, ChannelValuation, StateId};
    use proptest::prelude::*;

    fn w(s: &str) -> Vec<char> {
        s.chars().collect()
    }

    #[test]
    fn primitive_roots() {
        assert_eq!(primitive_root(&w("abab")).unwrap(), (w("ab"), 2));
        assert_eq!(primitive_root(&w("a")).unwrap(), (w("a"), 1));
        assert_eq!(primitive_root(&w("aabaab")).unwrap(), (w("aab"), 2));
        assert_eq!(primitive_root(&w("aba")).unwrap(), (w("aba"), 1));
        assert_eq!(primitive_root::<char>(&[]), Err(WordError::EmptyWord));
    }

    #[test]
    fn omega_identity_case() {
        let d = omega_prefix_eq(&w("ab"), &w(""), &w("ab")).unwrap();
        assert_eq!(d.x_prime, w(""));
        assert_eq!(d.x_dprime, w("ab"));
        assert_eq!(d.z, w("ab"));
        assert_eq!((d.j, d.k, d.s), (1, 1, Some(0)));
    }

    #[test]
    fn omega_rotation_case() {
        let d = omega_prefix_eq(&w("ab"), &w("a"), &w("ba")).unwrap();
        assert_eq!(d.x_prime, w("a"));
        assert_eq!(d.x_dprime, w("b"));
        assert_eq!(d.z, w("ba"));
        assert_eq!((d.j, d.k, d.s), (1, 1, Some(0)));
        assert!(d.check(&w("ab"), Some(&w("a")), &w("ba")));
    }

    #[test]
    fn omega_mismatch_case() {
        assert_eq!(omega_prefix_eq(&w("ab"), &w("b"), &w("ab")), None);
    }

    #[test]
    fn omega_longer_offsets() {
        // x^w = (ab)^w; w = abab a works with y = ba.
        let d = omega_prefix_eq(&w("ab"), &w("ababa"), &w("ba")).unwrap();
        assert_eq!(d.s, Some(2));
        assert!(d.check(&w("ab"), Some(&w("ababa")), &w("ba")));
        // A y of doubled period still matches.
        let d2 = omega_prefix_eq(&w("ab"), &w("a"), &w("baba")).unwrap();
        assert_eq!((d2.j, d2.k), (1, 2));
    }

    proptest! {
        /// The solver agrees with the defining prefix comparison.
        #[test]
        fn solver_matches_prefix_oracle(
            x in proptest::collection::vec(prop_oneof![Just('a'), Just('b')], 1..=4),
            ww in proptest::collection::vec(prop_oneof![Just('a'), Just('b')], 0..=6),
            y in proptest::collection::vec(prop_oneof![Just('a'), Just('b')], 1..=4),
        ) {
            let len = omega_decision_len(x.len(), ww.len(), y.len());
            let oracle = omega_prefix_eq_bounded(&x, &ww, &y, len);
            let solved = omega_prefix_eq(&x, &ww, &y);
            prop_assert_eq!(oracle, solved.is_some());
            if let Some(d) = solved {
                prop_assert!(d.check(&x, Some(&ww), &y));
                let (root, _) = primitive_root(&d.z).unwrap();
                prop_assert_eq!(root, d.z);
            }
        }
    }

    #[test]
    fn projections_and_effects() {
        let m = pump_retrieve();
        let c = ChannelId(0);
        let l34 = loop_of(&m, m.state_by_name("q3").unwrap()).unwrap().unwrap();
        let (x, y) = loop_projection(&m, &l34, c);
        assert_eq!(m.display_word(&x), "a");
        assert_eq!(m.display_word(&y), "a");
        assert_eq!(loop_effect(&m, &l34), vec![0]);

        let l12 = loop_of(&m, m.state_by_name("q1").unwrap()).unwrap().unwrap();
        let (x, y) = loop_projection(&m, &l12, c);
        assert!(x.is_empty());
        assert_eq!(m.display_word(&y), "ab");
        assert_eq!(loop_effect(&m, &l12), vec![-2]);
    }

    #[test]
    fn iterability() {
        let m = pump_retrieve();
        let q1 = m.state_by_name("q1").unwrap();
        let q3 = m.state_by_name("q3").unwrap();
        let l34 = loop_of(&m, q3).unwrap().unwrap();
        let l12 = loop_of(&m, q1).unwrap().unwrap();

        let at = |q, content: &str| {
            Config::new(q, ChannelValuation::new(vec![letters(&m, content)]))
        };
        let wit = infinitely_iterable(&m, &l34, &at(q3, "a")).expect("iterable");
        assert_eq!(wit.len(), 1);
        assert!(wit[&ChannelId(0)].check(&letters(&m, "a"), Some(&letters(&m, "a")), &letters(&m, "a")));
        assert!(infinitely_iterable(&m, &l34, &at(q3, "b")).is_none());
        // No retrieve: iterable from anything, no witnesses.
        assert_eq!(infinitely_iterable(&m, &l12, &at(q1, "")).unwrap().len(), 0);
    }

    #[test]
    fn iterability_needs_one_firing() {
        // The loop sends a and retrieves b; the prefix equation on the
        // mixed channel holds only if the content starts appropriately,
        // and the single firing check rules out an empty channel.
        let m = crate::model::parse_machine(
            "channels c\nalphabet c: a b\nstate q init\nstate r\n\
             trans s q r c!b\ntrans t r q c?b\n",
        )
        .unwrap();
        let l = loop_of(&m, StateId(0)).unwrap().unwrap();
        let empty = Config::initial(&m);
        // From empty content: fires (send first), x="b", y="b", w=ε: the
        // equation b^w = y^w holds, so the loop is iterable.
        assert!(infinitely_iterable(&m, &l, &empty).is_some());

        // Retrieve-first variant blocks on the empty channel.
        let m2 = crate::model::parse_machine(
            "channels c\nalphabet c: a b\nstate q init\nstate r\n\
             trans s q r c?b\ntrans t r q c!b\n",
        )
        .unwrap();
        let l2 = loop_of(&m2, StateId(0)).unwrap().unwrap();
        assert!(infinitely_iterable(&m2, &l2, &Config::initial(&m2)).is_none());
        let primed = Config::new(
            StateId(0),
            ChannelValuation::new(vec![letters(&m2, "b")]),
        );
        assert!(infinitely_iterable(&m2, &l2, &primed).is_some());
    }

    #[test]
    fn acceleration_closed_forms() {
        let m = pump_retrieve();
        let q1 = m.state_by_name("q1").unwrap();
        let q3 = m.state_by_name("q3").unwrap();
        let l34 = loop_of(&m, q3).unwrap().unwrap();
        let l12 = loop_of(&m, q1).unwrap().unwrap();

        let steady = accelerate_contents(
            &m,
            &l34,
            &Config::new(q3, ChannelValuation::new(vec![letters(&m, "a")])),
        )
        .unwrap();
        assert_eq!(steady[0], PeriodicContent { base: letters(&m, "a"), period: vec![], stride: 0 });

        let pump = accelerate_contents(&m, &l12, &Config::initial(&m)).unwrap();
        assert_eq!(
            pump[0],
            PeriodicContent { base: vec![], period: letters(&m, "ab"), stride: 1 }
        );

        let blocked = accelerate_contents(
            &m,
            &l34,
            &Config::new(q3, ChannelValuation::new(vec![letters(&m, "b")])),
        );
        assert_eq!(blocked.unwrap_err(), WordError::NotIterable);
    }

    #[test]
    fn acceleration_matches_replay() {
        let m = pump_retrieve();
        for (state, content) in [("q1", ""), ("q3", "a"), ("q3", "aa")] {
            let q = m.state_by_name(state).unwrap();
            let l = loop_of(&m, q).unwrap().unwrap();
            let cfg = Config::new(q, ChannelValuation::new(vec![letters(&m, content)]));
            let Ok(pc) = accelerate_contents(&m, &l, &cfg) else { continue };
            let mut cur = cfg.clone();
            for n in 0..=10 {
                let mut expect = pc[0].base.clone();
                for _ in 0..n {
                    expect.extend_from_slice(&pc[0].period);
                }
                assert_eq!(cur.channels.content(ChannelId(0)), &expect, "n = {n}");
                cur = fire_sequence(&m, &cur, &l.body).expect("iterable loop fires");
            }
        }
    }

    #[test]
    fn cyclicity() {
        let m = pump_retrieve();
        let q3 = m.state_by_name("q3").unwrap();
        let hold = Config::new(q3, ChannelValuation::new(vec![letters(&m, "a")]));
        assert!(cyclic(&m, &hold).unwrap());
        assert!(!cyclic(&m, &Config::initial(&m)).unwrap());
        // q2 lies on the sending loop; contents grow, so never cyclic.
        let q2 = m.state_by_name("q2").unwrap();
        let sent = Config::new(q2, ChannelValuation::new(vec![letters(&m, "a")]));
        assert!(!cyclic(&m, &sent).unwrap());
        // Loop-free states are never cyclic.
        let lone = crate::model::parse_machine("state a init\nstate b\ntrans t a b tau\n").unwrap();
        assert!(!cyclic(&lone, &Config::initial(&lone)).unwrap());
    }
}
