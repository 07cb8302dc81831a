//! Symbolic reachability for flat machines.
//!
//! Channel contents are represented exactly as `prefix · period^count ·
//! suffix` where `count` is an affine expression over parameters ranging
//! over the naturals. A [`SymbolicConfig`] bundles one such descriptor per
//! channel with a satisfiable linear constraint system over the shared
//! parameters, so a single config denotes a (possibly infinite) set of
//! concrete configurations at one control state.
//!
//! [`sym_post`] is the exact one-step image, [`sym_accelerate`] closes a
//! set under iterating an elementary loop by generalizing unrolled chains
//! with a fresh parameter and verifying the generalization, and
//! [`reach_set`] walks every simple path of a flat machine, accelerating
//! at the first visit of each cycle. The `decide_*` functions answer
//! reachability, control-state reachability and its repeated variant,
//! termination, and boundedness questions on top of that, with witnesses
//! replayable on the concrete machine.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::json;
use thiserror::Error;

use crate::model::{
    check_flat, fire_sequence, Action, ChannelValuation, Config, ElementaryLoop, FifoMachine,
    FlatAnalysis, ModelError, StateId, TransId, Word,
};
use crate::words::{infinitely_iterable, loop_projection, primitive_root};

/// Default number of loop-body unrollings [`sym_accelerate`] attempts
/// before giving up.
pub const DEFAULT_BUDGET: usize = 64;

/// Hard cap on the number of symbolic configs carried along one schema.
pub const UNION_CAP: usize = 4096;

/// Errors from the symbolic engine.
#[derive(Debug, Error)]
pub enum SymError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("acceleration did not stabilize within {budget} unrollings")]
    AccelerationBudgetExceeded { budget: usize },
    #[error("symbolic state set exceeded {cap} members on one path")]
    UnionCapExceeded { cap: usize },
    #[error("linear system dimensions are inconsistent")]
    DimensionMismatch,
}

// ---------------------------------------------------------------------
// Affine expressions and constraints
// ---------------------------------------------------------------------

/// Parameter of a symbolic configuration; every parameter ranges over ℕ.
#[derive(Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct ParamId(pub usize);

/// `constant + Σ coeff·param`. Parameter coefficients stay positive
/// under every operation in this module; the constant may go negative
/// (e.g. a decremented count), in which case a constraint keeps the
/// evaluated value nonnegative.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default)]
pub struct AffineExpr {
    pub constant: i64,
    pub coeffs: BTreeMap<ParamId, i64>,
}

impl AffineExpr {
    pub fn constant(c: i64) -> Self {
        AffineExpr { constant: c, coeffs: BTreeMap::new() }
    }

    pub fn param(p: ParamId) -> Self {
        AffineExpr { constant: 0, coeffs: BTreeMap::from([(p, 1)]) }
    }

    pub fn is_constant(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn coeff(&self, p: ParamId) -> i64 {
        self.coeffs.get(&p).copied().unwrap_or(0)
    }

    pub fn add_const(mut self, d: i64) -> Self {
        self.constant += d;
        self
    }

    pub fn add_param(mut self, p: ParamId, d: i64) -> Self {
        let e = self.coeffs.entry(p).or_insert(0);
        *e += d;
        if *e == 0 {
            self.coeffs.remove(&p);
        }
        self
    }

    pub fn scale(mut self, f: i64) -> Self {
        self.constant *= f;
        for v in self.coeffs.values_mut() {
            *v *= f;
        }
        self.coeffs.retain(|_, v| *v != 0);
        self
    }

    pub fn neg(self) -> Self {
        self.scale(-1)
    }

    pub fn eval(&self, model: &[i64]) -> i64 {
        let mut v = self.constant;
        for (&ParamId(p), &c) in &self.coeffs {
            v += c * model.get(p).copied().unwrap_or(0);
        }
        v
    }
}

/// Relation of a [`Constraint`]'s expression to zero.
#[derive(Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Relation {
    GeZero,
    EqZero,
}

/// A single linear constraint `expr ≥ 0` or `expr = 0`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Constraint {
    pub expr: AffineExpr,
    pub rel: Relation,
}

impl Constraint {
    pub fn ge(expr: AffineExpr) -> Self {
        Constraint { expr, rel: Relation::GeZero }
    }

    pub fn eq(expr: AffineExpr) -> Self {
        Constraint { expr, rel: Relation::EqZero }
    }

    pub fn holds(&self, model: &[i64]) -> bool {
        let v = self.expr.eval(model);
        match self.rel {
            Relation::GeZero => v >= 0,
            Relation::EqZero => v == 0,
        }
    }

    /// Truth value when the expression is constant.
    fn decided(&self) -> Option<bool> {
        if !self.expr.is_constant() {
            return None;
        }
        Some(match self.rel {
            Relation::GeZero => self.expr.constant >= 0,
            Relation::EqZero => self.expr.constant == 0,
        })
    }
}

// ---------------------------------------------------------------------
// Bounded constraint solving
// ---------------------------------------------------------------------

/// Bezout-style search bound: max |constant| times the product of the
/// per-constraint maximal |coefficient|, floored at 8 and capped at 4096.
pub(crate) fn bezout_bound(constraints: &[Constraint]) -> i64 {
    let mut maxc: i64 = 1;
    let mut prod: i64 = 1;
    for c in constraints {
        maxc = maxc.max(c.expr.constant.abs());
        let m = c.expr.coeffs.values().map(|v| v.abs()).max().unwrap_or(1).max(1);
        prod = prod.saturating_mul(m);
    }
    maxc.saturating_mul(prod).clamp(8, 4096)
}

/// Depth-first enumeration of assignments in `[0, bound]^n_params` with
/// interval pruning per constraint. `visit` returns `true` to stop; the
/// return value says whether it did. Complete within the bound; callers
/// choose bounds large enough for the minimal models of the systems this
/// module builds.
pub(crate) fn solve_bounded(
    n_params: usize,
    constraints: &[Constraint],
    bound: i64,
    visit: &mut dyn FnMut(&[i64]) -> bool,
) -> bool {
    fn feasible_interval(c: &Constraint, partial: &[i64], n: usize, bound: i64) -> bool {
        let mut lo = c.expr.constant;
        let mut hi = c.expr.constant;
        for (&ParamId(p), &f) in &c.expr.coeffs {
            if p < partial.len() {
                lo = lo.saturating_add(f.saturating_mul(partial[p]));
                hi = hi.saturating_add(f.saturating_mul(partial[p]));
            } else if p < n {
                if f > 0 {
                    hi = hi.saturating_add(f.saturating_mul(bound));
                } else {
                    lo = lo.saturating_add(f.saturating_mul(bound));
                }
            }
        }
        match c.rel {
            Relation::GeZero => hi >= 0,
            Relation::EqZero => lo <= 0 && hi >= 0,
        }
    }

    fn rec(
        partial: &mut Vec<i64>,
        n: usize,
        constraints: &[Constraint],
        bound: i64,
        visit: &mut dyn FnMut(&[i64]) -> bool,
    ) -> bool {
        if !constraints.iter().all(|c| feasible_interval(c, partial, n, bound)) {
            return false;
        }
        if partial.len() == n {
            return visit(partial);
        }
        for v in 0..=bound {
            partial.push(v);
            if rec(partial, n, constraints, bound, visit) {
                partial.pop();
                return true;
            }
            partial.pop();
        }
        false
    }

    rec(&mut Vec::with_capacity(n_params), n_params, constraints, bound, visit)
}

pub(crate) fn satisfiable(n_params: usize, constraints: &[Constraint]) -> bool {
    solve_bounded(n_params, constraints, bezout_bound(constraints), &mut |_| true)
}

pub(crate) fn first_model(
    n_params: usize,
    constraints: &[Constraint],
    bound: i64,
) -> Option<Vec<i64>> {
    let mut found = None;
    solve_bounded(n_params, constraints, bound, &mut |m| {
        found = Some(m.to_vec());
        true
    });
    found
}

/// `assume ⟹ c`, decided by unsatisfiability of `assume ∧ ¬c`.
pub(crate) fn implies(n_params: usize, assume: &[Constraint], c: &Constraint) -> bool {
    let refuted = |extra: Constraint| {
        let mut cs = assume.to_vec();
        cs.push(extra);
        !satisfiable(n_params, &cs)
    };
    match c.rel {
        Relation::GeZero => refuted(Constraint::ge(c.expr.clone().neg().add_const(-1))),
        Relation::EqZero => {
            refuted(Constraint::ge(c.expr.clone().add_const(-1)))
                && refuted(Constraint::ge(c.expr.clone().neg().add_const(-1)))
        }
    }
}

// ---------------------------------------------------------------------
// Content descriptors
// ---------------------------------------------------------------------

/// One channel's content, `prefix · period^count · suffix`.
///
/// Canonical form (established by [`ContentDescriptor::normalize`]):
/// a constant count folds the period into the prefix, the period is
/// primitive, no whole period copy remains at the tail of the prefix or
/// the head of the suffix, and an empty period forces `count = 0` with
/// an empty suffix.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct ContentDescriptor {
    pub prefix: Word,
    pub period: Word,
    pub count: AffineExpr,
    pub suffix: Word,
}

impl ContentDescriptor {
    pub fn concrete(w: Word) -> Self {
        ContentDescriptor {
            prefix: w,
            period: Vec::new(),
            count: AffineExpr::constant(0),
            suffix: Vec::new(),
        }
    }

    pub fn periodic(prefix: Word, period: Word, count: AffineExpr, suffix: Word) -> Self {
        let mut d = ContentDescriptor { prefix, period, count, suffix };
        d.normalize();
        d
    }

    pub fn is_concrete(&self) -> bool {
        self.period.is_empty()
    }

    pub fn normalize(&mut self) {
        if self.period.is_empty() {
            self.prefix.append(&mut self.suffix);
            self.count = AffineExpr::constant(0);
            return;
        }
        if self.count.is_constant() {
            let n = self.count.constant;
            if n >= 0 {
                for _ in 0..n {
                    self.prefix.extend_from_slice(&self.period);
                }
                self.prefix.append(&mut self.suffix);
                self.period.clear();
                self.count = AffineExpr::constant(0);
            }
            // A negative constant count denotes nothing; the branch that
            // built it carries an unsatisfiable constraint and is dropped.
            return;
        }
        let (z, e) = primitive_root(&self.period).expect("period is nonempty");
        if e > 1 {
            self.period = z;
            self.count = std::mem::take(&mut self.count).scale(e as i64);
        }
        let plen = self.period.len();
        while self.prefix.len() >= plen && self.prefix[self.prefix.len() - plen..] == self.period {
            self.prefix.truncate(self.prefix.len() - plen);
            self.count = std::mem::take(&mut self.count).add_const(1);
        }
        while self.suffix.len() >= plen && self.suffix[..plen] == self.period {
            self.suffix.drain(..plen);
            self.count = std::mem::take(&mut self.count).add_const(1);
        }
    }

    /// Concrete word at a parameter assignment.
    pub fn instantiate(&self, model: &[i64]) -> Word {
        let mut w = self.prefix.clone();
        let n = self.count.eval(model).max(0);
        for _ in 0..n {
            w.extend_from_slice(&self.period);
        }
        w.extend_from_slice(&self.suffix);
        w
    }
}

// ---------------------------------------------------------------------
// Symbolic configurations
// ---------------------------------------------------------------------

/// One step of a symbolic run, enough to replay it concretely.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum TraceStep {
    Fire(TransId),
    Iterate { anchor: StateId, body: Vec<TransId>, times: AffineExpr },
}

/// A set of configurations at one control state: a content descriptor
/// per channel, counts sharing parameters, and a linear constraint
/// system over those parameters. Every constructor in this module keeps
/// the constraint system satisfiable, so a stored config is never empty.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct SymbolicConfig {
    pub state: StateId,
    pub contents: Vec<ContentDescriptor>,
    pub n_params: usize,
    pub constraints: Vec<Constraint>,
    pub trace: Vec<TraceStep>,
}

impl SymbolicConfig {
    pub fn concrete(cfg: &Config) -> Self {
        SymbolicConfig {
            state: cfg.state,
            contents: cfg
                .channels
                .contents()
                .iter()
                .map(|w| ContentDescriptor::concrete(w.clone()))
                .collect(),
            n_params: 0,
            constraints: Vec::new(),
            trace: Vec::new(),
        }
    }

    pub fn is_satisfiable(&self) -> bool {
        satisfiable(self.n_params, &self.constraints)
    }

    pub fn instantiate(&self, model: &[i64]) -> Config {
        Config::new(
            self.state,
            ChannelValuation::new(self.contents.iter().map(|d| d.instantiate(model)).collect()),
        )
    }

    /// Members with parameter values up to `value_bound`, deduplicated,
    /// at most `cap` of them.
    pub fn members(&self, value_bound: i64, cap: usize) -> Vec<Config> {
        let mut out = BTreeSet::new();
        solve_bounded(self.n_params, &self.constraints, value_bound, &mut |m| {
            out.insert(self.instantiate(m));
            out.len() >= cap
        });
        out.into_iter().collect()
    }

    /// Canonical key: parameters renumbered in first-appearance order,
    /// unused ones dropped, constraints sorted with tautologies removed.
    fn canon(&self) -> CanonConfig {
        let mut order: Vec<ParamId> = Vec::new();
        let mut seen: BTreeSet<ParamId> = BTreeSet::new();
        let note = |e: &AffineExpr, order: &mut Vec<ParamId>, seen: &mut BTreeSet<ParamId>| {
            for &p in e.coeffs.keys() {
                if seen.insert(p) {
                    order.push(p);
                }
            }
        };
        for d in &self.contents {
            note(&d.count, &mut order, &mut seen);
        }
        for c in &self.constraints {
            note(&c.expr, &mut order, &mut seen);
        }
        let map: BTreeMap<ParamId, ParamId> =
            order.iter().enumerate().map(|(i, &p)| (p, ParamId(i))).collect();
        let remap = |e: &AffineExpr| AffineExpr {
            constant: e.constant,
            coeffs: e.coeffs.iter().map(|(p, &c)| (map[p], c)).collect(),
        };
        let mut constraints: Vec<Constraint> = self
            .constraints
            .iter()
            .filter(|c| c.decided() != Some(true))
            .map(|c| Constraint { expr: remap(&c.expr), rel: c.rel })
            .collect();
        constraints.sort();
        constraints.dedup();
        CanonConfig {
            state: self.state,
            contents: self
                .contents
                .iter()
                .map(|d| ContentDescriptor {
                    prefix: d.prefix.clone(),
                    period: d.period.clone(),
                    count: remap(&d.count),
                    suffix: d.suffix.clone(),
                })
                .collect(),
            n_params: order.len(),
            constraints,
        }
    }

    /// True when every member of `other` is provably a member of `self`.
    /// Detected syntactically (equality, a uniform shift of one
    /// parameter, or instantiation of one parameter); sound, not
    /// complete, and used only to prune redundant configs.
    pub fn subsumes(&self, other: &Self) -> bool {
        subsumes_canon(&self.canon(), &other.canon())
    }
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
struct CanonConfig {
    state: StateId,
    contents: Vec<ContentDescriptor>,
    n_params: usize,
    constraints: Vec<Constraint>,
}

fn subsumes_canon(g: &CanonConfig, s: &CanonConfig) -> bool {
    if g.state != s.state || g.contents.len() != s.contents.len() {
        return false;
    }
    if g == s {
        return true;
    }
    if g.n_params == s.n_params && shift_subsumes(g, s) {
        return true;
    }
    if g.n_params == s.n_params + 1 && instantiation_subsumes(g, s) {
        return true;
    }
    false
}

/// `s = g[p := p + d]` for a single parameter `p` and constant `d ≥ 0`.
fn shift_subsumes(g: &CanonConfig, s: &CanonConfig) -> bool {
    'params: for pi in 0..g.n_params {
        let p = ParamId(pi);
        let mut d: Option<i64> = None;
        for (dg, ds) in g.contents.iter().zip(&s.contents) {
            if dg.prefix != ds.prefix
                || dg.period != ds.period
                || dg.suffix != ds.suffix
                || dg.count.coeffs != ds.count.coeffs
            {
                continue 'params;
            }
            let diff = ds.count.constant - dg.count.constant;
            let cf = dg.count.coeff(p);
            if cf == 0 {
                if diff != 0 {
                    continue 'params;
                }
            } else {
                if diff % cf != 0 || diff / cf < 0 {
                    continue 'params;
                }
                match d {
                    None => d = Some(diff / cf),
                    Some(x) if x != diff / cf => continue 'params,
                    _ => {}
                }
            }
        }
        let Some(d) = d else { continue };
        if d == 0 {
            continue;
        }
        let shifted: Vec<Constraint> = g
            .constraints
            .iter()
            .map(|c| Constraint {
                expr: c.expr.clone().add_const(d * c.expr.coeff(p)),
                rel: c.rel,
            })
            .collect();
        let mut shifted = shifted;
        shifted.sort();
        shifted.dedup();
        if shifted == s.constraints {
            return true;
        }
    }
    false
}

/// `s = g[q := κ]` for a single parameter `q` and constant `κ ≥ 0`,
/// with the remaining parameters renumbered down past `q`.
fn instantiation_subsumes(g: &CanonConfig, s: &CanonConfig) -> bool {
    'params: for qi in 0..g.n_params {
        let q = ParamId(qi);
        let subst = |e: &AffineExpr, k: i64| -> AffineExpr {
            let mut out = AffineExpr::constant(e.constant + k * e.coeff(q));
            for (&ParamId(p), &c) in &e.coeffs {
                if p != qi {
                    let np = if p > qi { p - 1 } else { p };
                    out = out.add_param(ParamId(np), c);
                }
            }
            out
        };
        // Derive κ from any count or constraint that references q.
        let mut kappa: Option<i64> = None;
        for (dg, ds) in g.contents.iter().zip(&s.contents) {
            let cf = dg.count.coeff(q);
            if cf == 0 {
                continue;
            }
            // Compare lengths; normalization may have folded the period
            // away on the instantiated side, so constants are matched
            // through the member length rather than the raw count.
            let glen = dg.prefix.len() as i64
                + dg.suffix.len() as i64
                + dg.period.len() as i64 * dg.count.constant;
            let slen = ds.prefix.len() as i64
                + ds.suffix.len() as i64
                + ds.period.len() as i64 * ds.count.constant;
            let per = dg.period.len() as i64 * cf;
            if per == 0 {
                continue;
            }
            let diff = slen - glen;
            if diff % per != 0 || diff / per < 0 {
                continue 'params;
            }
            match kappa {
                None => kappa = Some(diff / per),
                Some(x) if x != diff / per => continue 'params,
                _ => {}
            }
        }
        if kappa.is_none() {
            for c in &g.constraints {
                if c.expr.coeff(q) != 0 {
                    // Constraint-only parameters admit no cheap inverse.
                    continue 'params;
                }
            }
            kappa = Some(0);
        }
        let k = kappa.unwrap();
        for (dg, ds) in g.contents.iter().zip(&s.contents) {
            let mut cand = ContentDescriptor {
                prefix: dg.prefix.clone(),
                period: dg.period.clone(),
                count: subst(&dg.count, k),
                suffix: dg.suffix.clone(),
            };
            cand.normalize();
            if cand != *ds {
                continue 'params;
            }
        }
        let mut inst: Vec<Constraint> = g
            .constraints
            .iter()
            .map(|c| Constraint { expr: subst(&c.expr, k), rel: c.rel })
            .filter(|c| c.decided() != Some(true))
            .collect();
        inst.sort();
        inst.dedup();
        if inst == s.constraints {
            return true;
        }
    }
    false
}

fn subsumed_by_any(set: &[SymbolicConfig], s: &SymbolicConfig) -> bool {
    set.iter().any(|g| g.subsumes(s))
}

/// Drops every config subsumed by another member, keeping first writers.
fn retain_maximal(v: Vec<SymbolicConfig>) -> Vec<SymbolicConfig> {
    let mut keep = vec![true; v.len()];
    for j in 0..v.len() {
        for i in 0..v.len() {
            if i != j && keep[i] && keep[j] && v[i].subsumes(&v[j]) {
                if i < j || !v[j].subsumes(&v[i]) {
                    keep[j] = false;
                    break;
                }
            }
        }
    }
    v.into_iter().zip(keep).filter_map(|(s, k)| k.then_some(s)).collect()
}

// ---------------------------------------------------------------------
// Symbolic post
// ---------------------------------------------------------------------

/// Exact one-step image of `s` through transition `t`.
///
/// Retrieval from a channel whose descriptor starts with a periodic
/// block splits on `count = 0` (the period is skipped) versus
/// `count ≥ 1` (one period copy rotates into the prefix and the count
/// decrements). Branches whose constraint system becomes unsatisfiable
/// are dropped, so the union of the returned denotations equals the
/// concrete step image. Constraint vectors only grow; a successor
/// carries its parent's constraints as a prefix.
pub fn sym_post(m: &FifoMachine, s: &SymbolicConfig, t: TransId) -> Vec<SymbolicConfig> {
    let tr = m.trans(t);
    if tr.source != s.state {
        return Vec::new();
    }
    let mut out: Vec<SymbolicConfig> = Vec::new();
    let mut push = |contents: Vec<ContentDescriptor>, constraints: Vec<Constraint>| {
        if !satisfiable(s.n_params, &constraints) {
            return;
        }
        let mut trace = s.trace.clone();
        trace.push(TraceStep::Fire(t));
        out.push(SymbolicConfig {
            state: tr.target,
            contents,
            n_params: s.n_params,
            constraints,
            trace,
        });
    };
    match tr.action {
        Action::Internal => push(s.contents.clone(), s.constraints.clone()),
        Action::Send(c, a) => {
            let mut contents = s.contents.clone();
            contents[c.0].suffix.push(a);
            contents[c.0].normalize();
            push(contents, s.constraints.clone());
        }
        Action::Retrieve(c, a) => {
            let d = &s.contents[c.0];
            if !d.prefix.is_empty() {
                if d.prefix[0] == a {
                    let mut contents = s.contents.clone();
                    contents[c.0].prefix.remove(0);
                    contents[c.0].normalize();
                    push(contents, s.constraints.clone());
                }
            } else if !d.period.is_empty() {
                // count = 0: the periodic block is absent.
                if !d.suffix.is_empty() && d.suffix[0] == a {
                    let mut contents = s.contents.clone();
                    contents[c.0] = ContentDescriptor::concrete(d.suffix[1..].to_vec());
                    let mut cs = s.constraints.clone();
                    cs.push(Constraint::eq(d.count.clone()));
                    push(contents, cs);
                }
                // count ≥ 1: one period copy rotates into the prefix.
                if d.period[0] == a {
                    let dec = d.count.clone().add_const(-1);
                    let mut contents = s.contents.clone();
                    contents[c.0] = ContentDescriptor {
                        prefix: d.period[1..].to_vec(),
                        period: d.period.clone(),
                        count: dec.clone(),
                        suffix: d.suffix.clone(),
                    };
                    contents[c.0].normalize();
                    let mut cs = s.constraints.clone();
                    cs.push(Constraint::ge(dec));
                    push(contents, cs);
                }
            }
            // Empty prefix and period means an empty channel: blocked.
        }
    }
    dedup_by_canon(out)
}

fn dedup_by_canon(v: Vec<SymbolicConfig>) -> Vec<SymbolicConfig> {
    let mut seen = BTreeSet::new();
    v.into_iter().filter(|s| seen.insert(s.canon())).collect()
}

/// Image of `s` through a fixed transition sequence, all branches.
fn sym_post_seq(m: &FifoMachine, s: &SymbolicConfig, seq: &[TransId]) -> Vec<SymbolicConfig> {
    let mut cur = vec![s.clone()];
    for &t in seq {
        cur = dedup_by_canon(cur.iter().flat_map(|c| sym_post(m, c, t)).collect());
        if cur.is_empty() {
            break;
        }
    }
    cur
}

// ---------------------------------------------------------------------
// Acceleration
// ---------------------------------------------------------------------

/// Per-channel difference between consecutive unrollings of a loop body.
enum Delta {
    Same,
    Stride(i64),
    Append(Word),
}

/// Closes `set` under firing `l.body` any finite number of times.
///
/// Unrolls the body, and whenever a successor differs from its parent
/// only by a constant count stride or a constant appended block on each
/// channel, proposes a generalization with a fresh parameter μ and keeps
/// it only after verifying that one more body firing maps the family to
/// itself with μ shifted by one (any extra branch constraints must be
/// implied by the family's constraints together with μ ≥ 1). Fails with
/// [`SymError::AccelerationBudgetExceeded`] when the frontier survives
/// `budget` rounds and with [`SymError::UnionCapExceeded`] past
/// [`UNION_CAP`] configs.
pub fn sym_accelerate(
    m: &FifoMachine,
    set: &[SymbolicConfig],
    l: &ElementaryLoop,
    budget: usize,
) -> Result<Vec<SymbolicConfig>, SymError> {
    let mut result: Vec<SymbolicConfig> = Vec::new();
    let mut frontier: Vec<usize> = Vec::new();
    for s in set {
        debug_assert_eq!(s.state, l.anchor);
        if s.state == l.anchor && !subsumed_by_any(&result, s) {
            result.push(s.clone());
            frontier.push(result.len() - 1);
        }
    }
    for _ in 0..budget {
        if frontier.is_empty() {
            return Ok(retain_maximal(result));
        }
        let mut next = Vec::new();
        for idx in frontier {
            let s = result[idx].clone();
            for b in sym_post_seq(m, &s, &l.body) {
                if subsumed_by_any(&result, &b) {
                    continue;
                }
                let add = match try_generalize(m, l, &s, &b) {
                    Some(g) if !subsumed_by_any(&result, &g) => g,
                    Some(_) => continue,
                    None => b,
                };
                result.push(add);
                next.push(result.len() - 1);
                if result.len() > UNION_CAP {
                    return Err(SymError::UnionCapExceeded { cap: UNION_CAP });
                }
            }
        }
        frontier = next;
    }
    if frontier.is_empty() {
        Ok(retain_maximal(result))
    } else {
        Err(SymError::AccelerationBudgetExceeded { budget })
    }
}

/// Builds and verifies a parametric family covering the chain `s`, `b`,
/// and every further body firing along the same branch pattern.
fn try_generalize(
    m: &FifoMachine,
    l: &ElementaryLoop,
    s: &SymbolicConfig,
    b: &SymbolicConfig,
) -> Option<SymbolicConfig> {
    if b.state != s.state || b.n_params != s.n_params || b.constraints != s.constraints {
        return None;
    }
    let mut deltas = Vec::with_capacity(s.contents.len());
    let mut moved = false;
    for (ds, db) in s.contents.iter().zip(&b.contents) {
        if ds == db {
            deltas.push(Delta::Same);
        } else if ds.prefix == db.prefix
            && ds.period == db.period
            && ds.suffix == db.suffix
            && !ds.period.is_empty()
            && ds.count.coeffs == db.count.coeffs
            && db.count.constant > ds.count.constant
        {
            deltas.push(Delta::Stride(db.count.constant - ds.count.constant));
            moved = true;
        } else if ds.is_concrete()
            && db.is_concrete()
            && db.prefix.len() > ds.prefix.len()
            && db.prefix.starts_with(&ds.prefix)
        {
            deltas.push(Delta::Append(db.prefix[ds.prefix.len()..].to_vec()));
            moved = true;
        } else {
            return None;
        }
    }
    if !moved {
        return None;
    }
    let mu = ParamId(s.n_params);
    let mut contents = Vec::with_capacity(s.contents.len());
    for (ds, delta) in s.contents.iter().zip(&deltas) {
        match delta {
            Delta::Same => contents.push(ds.clone()),
            Delta::Stride(d) => {
                let mut nd = ds.clone();
                nd.count = std::mem::take(&mut nd.count).add_param(mu, *d);
                nd.normalize();
                contents.push(nd);
            }
            Delta::Append(u) => {
                let (z, e) = primitive_root(u).expect("append block is nonempty");
                contents.push(ContentDescriptor::periodic(
                    ds.prefix.clone(),
                    z,
                    AffineExpr::param(mu).scale(e as i64),
                    Vec::new(),
                ));
            }
        }
    }
    let mut trace = s.trace.clone();
    trace.push(TraceStep::Iterate {
        anchor: l.anchor,
        body: l.body.clone(),
        times: AffineExpr::param(mu),
    });
    let gen = SymbolicConfig {
        state: s.state,
        contents,
        n_params: s.n_params + 1,
        constraints: s.constraints.clone(),
        trace,
    };
    // Verify: one more firing must reproduce the family at μ + 1.
    let expected: Vec<ContentDescriptor> = gen
        .contents
        .iter()
        .map(|d| {
            let shift = d.count.coeff(mu);
            let mut nd = d.clone();
            nd.count = std::mem::take(&mut nd.count).add_const(shift);
            nd
        })
        .collect();
    let mut assume = gen.constraints.clone();
    assume.push(Constraint::ge(AffineExpr::param(mu).add_const(-1)));
    for p in sym_post_seq(m, &gen, &l.body) {
        if p.contents != expected {
            continue;
        }
        let extra = &p.constraints[gen.constraints.len()..];
        if extra.iter().all(|c| implies(gen.n_params, &assume, c)) {
            return Some(gen);
        }
    }
    None
}

// ---------------------------------------------------------------------
// Reachability sets
// ---------------------------------------------------------------------

/// Symbolic reachability set of a flat machine: finitely many
/// [`SymbolicConfig`]s per control state whose denotations union to the
/// exact reachable set under the perfect semantics.
#[derive(Clone, Debug)]
pub struct SymReach {
    init: Config,
    per_state: BTreeMap<StateId, Vec<SymbolicConfig>>,
}

impl SymReach {
    pub fn init(&self) -> &Config {
        &self.init
    }

    pub fn at(&self, q: StateId) -> &[SymbolicConfig] {
        self.per_state.get(&q).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn states(&self) -> impl Iterator<Item = StateId> + '_ {
        self.per_state.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (StateId, &SymbolicConfig)> + '_ {
        self.per_state.iter().flat_map(|(&q, v)| v.iter().map(move |s| (q, s)))
    }

    pub fn total(&self) -> usize {
        self.per_state.values().map(Vec::len).sum()
    }
}

fn flat(m: &FifoMachine) -> Result<FlatAnalysis, SymError> {
    check_flat(m).map_err(|w| {
        SymError::Model(ModelError::NotFlat { state: m.state_name(w.state).to_string() })
    })
}

/// Exact symbolic reachability set from `init`.
///
/// Walks every simple path from the initial state in transition order.
/// At the first visit of a state carrying an elementary loop the current
/// set is accelerated; later states of the same cycle reuse that closure
/// (a path cannot leave a cycle's component and return, and iterations
/// at a later cycle state commute with the connecting arc).
pub fn reach_set(m: &FifoMachine, init: &Config, budget: usize) -> Result<SymReach, SymError> {
    assert_eq!(init.channels.n_channels(), m.n_channels(), "config shape matches machine");
    let analysis = flat(m)?;
    let mut walker = Walker {
        m,
        analysis: &analysis,
        budget,
        acc: BTreeMap::new(),
        on_path: vec![false; m.n_states()],
    };
    let s0 = SymbolicConfig::concrete(init);
    let mut attached = BTreeSet::new();
    walker.go(init.state, vec![s0], &mut attached)?;
    Ok(SymReach { init: init.clone(), per_state: walker.acc })
}

struct Walker<'a> {
    m: &'a FifoMachine,
    analysis: &'a FlatAnalysis,
    budget: usize,
    acc: BTreeMap<StateId, Vec<SymbolicConfig>>,
    on_path: Vec<bool>,
}

impl Walker<'_> {
    fn go(
        &mut self,
        q: StateId,
        mut set: Vec<SymbolicConfig>,
        attached: &mut BTreeSet<usize>,
    ) -> Result<(), SymError> {
        let scc = self.analysis.scc_of(q);
        let mut did_attach = false;
        if let Some(l) = self.analysis.loop_at(q) {
            if attached.insert(scc) {
                set = sym_accelerate(self.m, &set, l, self.budget)?;
                did_attach = true;
            }
        }
        let entry = self.acc.entry(q).or_default();
        for s in &set {
            if !subsumed_by_any(entry, s) {
                entry.push(s.clone());
            }
        }
        self.on_path[q.0] = true;
        for &t in self.m.out(q) {
            let tgt = self.m.trans(t).target;
            if self.on_path[tgt.0] {
                continue;
            }
            let next = dedup_by_canon(set.iter().flat_map(|s| sym_post(self.m, s, t)).collect());
            if next.len() > UNION_CAP {
                self.on_path[q.0] = false;
                return Err(SymError::UnionCapExceeded { cap: UNION_CAP });
            }
            if !next.is_empty() {
                self.go(tgt, next, attached)?;
            }
        }
        self.on_path[q.0] = false;
        if did_attach {
            attached.remove(&scc);
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------
// Decision procedures
// ---------------------------------------------------------------------

/// Replayable evidence for a reachability answer.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ReachWitness {
    /// Concrete firing sequence from the initial configuration.
    pub transitions: Vec<TransId>,
    /// Loop anchors and iteration counts, in firing order.
    pub loops: Vec<(StateId, u64)>,
}

/// Outcome of [`decide_reachability`].
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ReachAnswer {
    pub reachable: bool,
    pub witness: Option<ReachWitness>,
}

fn witness_from(cfg: &SymbolicConfig, model: &[i64]) -> ReachWitness {
    let mut transitions = Vec::new();
    let mut loops = Vec::new();
    for step in &cfg.trace {
        match step {
            TraceStep::Fire(t) => transitions.push(*t),
            TraceStep::Iterate { anchor, body, times } => {
                let n = times.eval(model).max(0) as u64;
                loops.push((*anchor, n));
                for _ in 0..n {
                    transitions.extend_from_slice(body);
                }
            }
        }
    }
    ReachWitness { transitions, loops }
}

/// Membership of a concrete configuration in a computed reach set,
/// with a replay-checked witness on success.
pub fn membership(m: &FifoMachine, reach: &SymReach, target: &Config) -> Option<ReachWitness> {
    for cfg in reach.at(target.state) {
        let Some(model) = member_model(cfg, target) else { continue };
        let w = witness_from(cfg, &model);
        if fire_sequence(m, reach.init(), &w.transitions).as_ref() == Some(target) {
            return Some(w);
        }
    }
    None
}

fn member_model(cfg: &SymbolicConfig, target: &Config) -> Option<Vec<i64>> {
    let mut cs = cfg.constraints.clone();
    for (d, w) in cfg.contents.iter().zip(target.channels.contents()) {
        if d.period.is_empty() {
            if &d.prefix != w {
                return None;
            }
            continue;
        }
        let base = d.prefix.len() + d.suffix.len();
        if w.len() < base || (w.len() - base) % d.period.len() != 0 {
            return None;
        }
        let n = ((w.len() - base) / d.period.len()) as i64;
        if !w.starts_with(&d.prefix) || !w.ends_with(&d.suffix) {
            return None;
        }
        let mid = &w[d.prefix.len()..w.len() - d.suffix.len()];
        if !mid.chunks(d.period.len()).all(|ch| ch == d.period) {
            return None;
        }
        cs.push(Constraint::eq(d.count.clone().add_const(-n)));
    }
    first_model(cfg.n_params, &cs, bezout_bound(&cs))
}

/// Is the target configuration reachable from `init`? Yes-answers come
/// with a concrete firing sequence that has been replayed and checked.
pub fn decide_reachability(
    m: &FifoMachine,
    init: &Config,
    target: &Config,
    budget: usize,
) -> Result<ReachAnswer, SymError> {
    let reach = reach_set(m, init, budget)?;
    Ok(match membership(m, &reach, target) {
        Some(w) => ReachAnswer { reachable: true, witness: Some(w) },
        None => ReachAnswer { reachable: false, witness: None },
    })
}

/// Control-state reachability: is some configuration at `q` reachable?
pub fn decide_csr(
    m: &FifoMachine,
    init: &Config,
    q: StateId,
    budget: usize,
) -> Result<bool, SymError> {
    Ok(!reach_set(m, init, budget)?.at(q).is_empty())
}

/// Repeated control-state reachability: can a run visit `q` infinitely
/// often? In a flat machine this means some reachable configuration at
/// `q` lets the loop anchored there fire forever. States without a loop
/// answer `false`.
pub fn decide_repeated_csr(
    m: &FifoMachine,
    init: &Config,
    q: StateId,
    budget: usize,
) -> Result<bool, SymError> {
    let analysis = flat(m)?;
    let reach = reach_set(m, init, budget)?;
    Ok(rcsr_at(m, &analysis, &reach, q))
}

fn rcsr_at(m: &FifoMachine, analysis: &FlatAnalysis, reach: &SymReach, q: StateId) -> bool {
    let Some(l) = analysis.loop_at(q) else { return false };
    for c in m.channels() {
        let (x, y) = loop_projection(m, l, c);
        if x.len() > y.len() {
            return false;
        }
    }
    reach.at(q).iter().any(|cfg| iterable_member_exists(m, l, cfg))
}

/// Searches the config's members for one from which the loop fires
/// forever. Counts are enumerated up to a transient-plus-period bound
/// per channel; beyond it the iterability predicate repeats, so for the
/// descriptor shapes [`reach_set`] produces the search is exhaustive.
fn iterable_member_exists(m: &FifoMachine, l: &ElementaryLoop, cfg: &SymbolicConfig) -> bool {
    let bound = member_bound(m, l, cfg);
    let mut seen: BTreeSet<Vec<i64>> = BTreeSet::new();
    let mut found = false;
    solve_bounded(cfg.n_params, &cfg.constraints, bound, &mut |model| {
        let counts: Vec<i64> = cfg.contents.iter().map(|d| d.count.eval(model)).collect();
        if !seen.insert(counts) {
            return false;
        }
        let concrete = cfg.instantiate(model);
        if infinitely_iterable(m, l, &concrete).is_some() {
            found = true;
        }
        found
    });
    found
}

fn lcm(a: usize, b: usize) -> usize {
    fn gcd(a: usize, b: usize) -> usize {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    if a == 0 || b == 0 {
        0
    } else {
        a / gcd(a, b) * b
    }
}

fn member_bound(m: &FifoMachine, l: &ElementaryLoop, cfg: &SymbolicConfig) -> i64 {
    let mut b: i64 = 8;
    for c in m.channels() {
        let (x, y) = loop_projection(m, l, c);
        let d = &cfg.contents[c.0];
        if d.period.is_empty() {
            continue;
        }
        let plen = d.period.len();
        let transient = ((d.prefix.len() + d.suffix.len() + x.len() + y.len()) / plen + 2) as i64;
        let period = (lcm(x.len().max(1), plen) / plen) as i64;
        b = b.max(transient + 2 * period);
    }
    for c in &cfg.constraints {
        b = b.max(1 + c.expr.constant.abs());
    }
    b.min(64)
}

/// Does some infinite run exist?
pub fn decide_nontermination(
    m: &FifoMachine,
    init: &Config,
    budget: usize,
) -> Result<bool, SymError> {
    let analysis = flat(m)?;
    let reach = reach_set(m, init, budget)?;
    Ok(m.states().any(|q| rcsr_at(m, &analysis, &reach, q)))
}

/// Is some channel's content unbounded along some run? True exactly
/// when a loop that can fire forever sends strictly more onto some
/// channel than it retrieves from it.
pub fn decide_unboundedness(
    m: &FifoMachine,
    init: &Config,
    budget: usize,
) -> Result<bool, SymError> {
    let analysis = flat(m)?;
    let reach = reach_set(m, init, budget)?;
    for q in m.states() {
        let Some(l) = analysis.loop_at(q) else { continue };
        let grows = m.channels().any(|c| {
            let (x, y) = loop_projection(m, l, c);
            y.len() > x.len()
        });
        if grows && rcsr_at(m, &analysis, &reach, q) {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Is the number of occurrences of `a` in its channel unbounded over the
/// reachable configurations? Reduces to unboundedness of an affine
/// objective (occurrences contributed by active periods) over a config's
/// constraint system.
pub fn decide_letter_unbounded(
    m: &FifoMachine,
    init: &Config,
    a: crate::model::LetterId,
    budget: usize,
) -> Result<bool, SymError> {
    let ch = m.letter_channel(a);
    let reach = reach_set(m, init, budget)?;
    for (_, cfg) in reach.iter() {
        let d = &cfg.contents[ch.0];
        let occ = d.period.iter().filter(|&&x| x == a).count() as i64;
        if occ == 0 || d.count.is_constant() {
            continue;
        }
        let sys = objective_system(cfg, &d.count, occ);
        if integer_objective_unbounded(&sys)? {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Is the total content of channel `c` unbounded over the reachable
/// configurations?
pub fn decide_channel_unbounded(
    m: &FifoMachine,
    init: &Config,
    c: crate::model::ChannelId,
    budget: usize,
) -> Result<bool, SymError> {
    for &a in m.channel_letters(c) {
        if decide_letter_unbounded(m, init, a, budget)? {
            return Ok(true);
        }
    }
    Ok(false)
}

fn objective_system(cfg: &SymbolicConfig, count: &AffineExpr, occ: i64) -> LinearSystem {
    let r = cfg.n_params;
    let mut a = Vec::new();
    let mut b = Vec::new();
    let add_ge = |expr: &AffineExpr, a: &mut Vec<Vec<i64>>, b: &mut Vec<i64>| {
        let mut row = vec![0i64; r];
        for (&ParamId(p), &c) in &expr.coeffs {
            row[p] = c;
        }
        a.push(row);
        b.push(-expr.constant);
    };
    for c in &cfg.constraints {
        add_ge(&c.expr, &mut a, &mut b);
        if c.rel == Relation::EqZero {
            add_ge(&c.expr.clone().neg(), &mut a, &mut b);
        }
    }
    for i in 0..r {
        let mut row = vec![0i64; r];
        row[i] = 1;
        a.push(row);
        b.push(0);
    }
    let mut k = vec![0i64; r];
    for (&ParamId(p), &c) in &count.coeffs {
        k[p] = occ * c;
    }
    LinearSystem { a, b, k }
}

// ---------------------------------------------------------------------
// Linear systems
// ---------------------------------------------------------------------

/// `A·x ≥ b` with objective row `k`, over as many variables as `k` has
/// entries.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct LinearSystem {
    pub a: Vec<Vec<i64>>,
    pub b: Vec<i64>,
    pub k: Vec<i64>,
}

fn validate(sys: &LinearSystem) -> Result<usize, SymError> {
    let r = sys.k.len();
    if sys.a.len() != sys.b.len() || sys.a.iter().any(|row| row.len() != r) {
        return Err(SymError::DimensionMismatch);
    }
    Ok(r)
}

/// Finds an integer point of `A·x ≥ b` with `x ≥ 0`, searching the box
/// `[0, Σ|b|·Π max(1,|A_ij|)]` (floored at 8, capped at 4096). Every
/// system this crate builds constrains its variables to ℕ, so the
/// nonnegative box is the intended solution space.
pub fn integer_feasible_point(sys: &LinearSystem) -> Result<Option<Vec<i64>>, SymError> {
    let r = validate(sys)?;
    let mut constraints = Vec::with_capacity(sys.a.len());
    for (row, &bi) in sys.a.iter().zip(&sys.b) {
        let mut e = AffineExpr::constant(-bi);
        for (j, &c) in row.iter().enumerate() {
            if c != 0 {
                e = e.add_param(ParamId(j), c);
            }
        }
        constraints.push(Constraint::ge(e));
    }
    let mut bound: i64 = sys.b.iter().map(|v| v.abs()).sum();
    for row in &sys.a {
        for &c in row {
            bound = bound.saturating_mul(c.abs().max(1));
        }
    }
    Ok(first_model(r, &constraints, bound.clamp(8, 4096)))
}

/// Is there a rational direction `d` with `A·d ≥ 0` and `k·d ≥ 1`?
/// Decided exactly by Fourier-Motzkin elimination in integer arithmetic.
pub fn objective_ray_exists(sys: &LinearSystem) -> Result<bool, SymError> {
    let r = validate(sys)?;
    // Rows encode coeffs·d + c ≥ 0.
    let mut rows: BTreeSet<(Vec<i128>, i128)> = BTreeSet::new();
    for row in &sys.a {
        rows.insert(normalize_row(row.iter().map(|&v| v as i128).collect(), 0));
    }
    rows.insert(normalize_row(sys.k.iter().map(|&v| v as i128).collect(), -1));
    for j in 0..r {
        let mut kept: BTreeSet<(Vec<i128>, i128)> = BTreeSet::new();
        let mut pos: Vec<(Vec<i128>, i128)> = Vec::new();
        let mut neg: Vec<(Vec<i128>, i128)> = Vec::new();
        for row in rows {
            match row.0[j].cmp(&0) {
                std::cmp::Ordering::Equal => {
                    kept.insert(row);
                }
                std::cmp::Ordering::Greater => pos.push(row),
                std::cmp::Ordering::Less => neg.push(row),
            }
        }
        for p in &pos {
            for n in &neg {
                let (a, b) = (-n.0[j], p.0[j]);
                let coeffs: Vec<i128> =
                    p.0.iter().zip(&n.0).map(|(&x, &y)| a * x + b * y).collect();
                let c = a * p.1 + b * n.1;
                kept.insert(normalize_row(coeffs, c));
            }
        }
        rows = kept;
    }
    Ok(rows.iter().all(|(_, c)| *c >= 0))
}

fn normalize_row(coeffs: Vec<i128>, c: i128) -> (Vec<i128>, i128) {
    fn gcd(a: i128, b: i128) -> i128 {
        if b == 0 {
            a.abs()
        } else {
            gcd(b, a % b)
        }
    }
    let mut g = c;
    for &v in &coeffs {
        g = gcd(v, g);
    }
    let g = g.abs();
    if g > 1 {
        (coeffs.into_iter().map(|v| v / g).collect(), c / g)
    } else {
        (coeffs, c)
    }
}

/// Is the objective `k·x` unbounded above over the integer points of
/// `A·x ≥ b, x ≥ 0`? True exactly when the system has an integer point
/// and the recession cone contains a direction of positive objective.
pub fn integer_objective_unbounded(sys: &LinearSystem) -> Result<bool, SymError> {
    validate(sys)?;
    Ok(integer_feasible_point(sys)?.is_some() && objective_ray_exists(sys)?)
}

// ---------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------

/// Renders an affine expression with parameters named `n1`, `n2`, ...
pub fn expr_to_string(e: &AffineExpr) -> String {
    let mut out = String::new();
    for (&ParamId(p), &c) in &e.coeffs {
        if !out.is_empty() {
            out.push_str(if c < 0 { " - " } else { " + " });
        } else if c < 0 {
            out.push('-');
        }
        if c.abs() != 1 {
            out.push_str(&format!("{}*", c.abs()));
        }
        out.push_str(&format!("n{}", p + 1));
    }
    if e.constant != 0 || out.is_empty() {
        if out.is_empty() {
            out.push_str(&e.constant.to_string());
        } else {
            out.push_str(if e.constant < 0 { " - " } else { " + " });
            out.push_str(&e.constant.abs().to_string());
        }
    }
    out
}

pub fn constraint_to_string(c: &Constraint) -> String {
    let rel = match c.rel {
        Relation::GeZero => ">=",
        Relation::EqZero => "=",
    };
    format!("{} {} 0", expr_to_string(&c.expr), rel)
}

/// JSON rendering of a symbolic reach set, one entry per control state.
pub fn reach_to_json(m: &FifoMachine, reach: &SymReach) -> String {
    let mut states = serde_json::Map::new();
    for q in reach.states() {
        let cfgs: Vec<_> = reach
            .at(q)
            .iter()
            .map(|cfg| {
                let mut contents = serde_json::Map::new();
                for (c, d) in cfg.contents.iter().enumerate() {
                    contents.insert(
                        m.channel_name(crate::model::ChannelId(c)).to_string(),
                        json!({
                            "prefix": m.display_word(&d.prefix),
                            "period": m.display_word(&d.period),
                            "count": expr_to_string(&d.count),
                            "suffix": m.display_word(&d.suffix),
                        }),
                    );
                }
                let trace: Vec<serde_json::Value> = cfg
                    .trace
                    .iter()
                    .map(|s| match s {
                        TraceStep::Fire(t) => json!(m.trans(*t).name),
                        TraceStep::Iterate { anchor, body, times } => json!({
                            "loop": m.state_name(*anchor),
                            "body": body.iter().map(|&t| m.trans(t).name.clone()).collect::<Vec<_>>(),
                            "times": expr_to_string(times),
                        }),
                    })
                    .collect();
                json!({
                    "contents": contents,
                    "constraints": cfg
                        .constraints
                        .iter()
                        .map(constraint_to_string)
                        .collect::<Vec<_>>(),
                    "trace": trace,
                })
            })
            .collect();
        states.insert(m.state_name(q).to_string(), json!(cfgs));
    }
    serde_json::to_string_pretty(&json!({ "states": states })).expect("serializable")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explorer::{explore, ExploreBounds};
    use crate::fixtures::{letters, pump_retrieve};
    use crate::model::{loop_of, parse_machine, Semantics};

    fn desc(m: &FifoMachine, prefix: &str, period: &str, count: AffineExpr, suffix: &str) -> ContentDescriptor {
        ContentDescriptor::periodic(
            letters(m, prefix),
            letters(m, period),
            count,
            letters(m, suffix),
        )
    }

    fn at(m: &FifoMachine, name: &str) -> StateId {
        m.state_by_name(name).unwrap()
    }

    fn cfg_words(m: &FifoMachine, state: &str, w: &str) -> Config {
        Config::new(at(m, state), ChannelValuation::new(vec![letters(m, w)]))
    }

    // -- descriptors --

    #[test]
    fn normalization_folds_constant_counts() {
        let m = pump_retrieve();
        let d = desc(&m, "", "ab", AffineExpr::constant(2), "a");
        assert!(d.is_concrete());
        assert_eq!(d.prefix, letters(&m, "ababa"));
    }

    #[test]
    fn normalization_makes_periods_primitive() {
        let m = pump_retrieve();
        let n = AffineExpr::param(ParamId(0));
        let d = desc(&m, "", "abab", n.clone(), "");
        assert_eq!(d.period, letters(&m, "ab"));
        assert_eq!(d.count, n.scale(2));
    }

    #[test]
    fn normalization_folds_border_period_copies() {
        let m = pump_retrieve();
        let n = AffineExpr::param(ParamId(0));
        let d = desc(&m, "aab", "ab", n.clone(), "aba");
        // prefix tail "ab" and suffix head "ab" both fold into the count
        assert_eq!(d.prefix, letters(&m, "a"));
        assert_eq!(d.suffix, letters(&m, "a"));
        assert_eq!(d.count, n.add_const(2));
    }

    #[test]
    fn instantiation_matches_the_shape() {
        let m = pump_retrieve();
        let n = AffineExpr::param(ParamId(0));
        let d = desc(&m, "b", "ab", n, "a");
        assert_eq!(d.instantiate(&[0]), letters(&m, "ba"));
        assert_eq!(d.instantiate(&[3]), letters(&m, "babababa"));
    }

    // -- solver --

    #[test]
    fn solver_finds_minimal_models_first() {
        let cs = vec![Constraint::ge(AffineExpr::param(ParamId(0)).add_const(-2))];
        assert_eq!(first_model(1, &cs, 10), Some(vec![2]));
    }

    #[test]
    fn solver_rejects_unsatisfiable_systems() {
        // p + 1 = 0 has no solution over the naturals
        let cs = vec![Constraint::eq(AffineExpr::param(ParamId(0)).add_const(1))];
        assert!(!satisfiable(1, &cs));
    }

    #[test]
    fn implication_check() {
        let assume = vec![Constraint::ge(AffineExpr::param(ParamId(0)).add_const(-3))];
        assert!(implies(1, &assume, &Constraint::ge(AffineExpr::param(ParamId(0)).add_const(-1))));
        assert!(!implies(1, &assume, &Constraint::ge(AffineExpr::param(ParamId(0)).add_const(-5))));
    }

    // -- post --

    #[test]
    fn post_send_appends() {
        let m = pump_retrieve();
        let s0 = SymbolicConfig::concrete(&Config::initial(&m));
        let t1 = m.trans_by_name("t1").unwrap();
        let out = sym_post(&m, &s0, t1);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].state, at(&m, "q2"));
        assert_eq!(out[0].contents[0].prefix, letters(&m, "a"));
        assert_eq!(out[0].trace, vec![TraceStep::Fire(t1)]);
    }

    #[test]
    fn post_retrieve_pops_a_concrete_prefix() {
        let m = pump_retrieve();
        let t4 = m.trans_by_name("t4").unwrap();
        let s = SymbolicConfig::concrete(&cfg_words(&m, "q4", "ab"));
        let out = sym_post(&m, &s, t4);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].contents[0].prefix, letters(&m, "b"));
        // wrong head letter blocks
        let s = SymbolicConfig::concrete(&cfg_words(&m, "q4", "ba"));
        assert!(sym_post(&m, &s, t4).is_empty());
    }

    #[test]
    fn post_retrieve_splits_on_the_period() {
        let m = pump_retrieve();
        let t4 = m.trans_by_name("t4").unwrap();
        let n = AffineExpr::param(ParamId(0));
        let s = SymbolicConfig {
            state: at(&m, "q4"),
            contents: vec![desc(&m, "", "ab", n.clone(), "")],
            n_params: 1,
            constraints: vec![],
            trace: vec![],
        };
        let out = sym_post(&m, &s, t4);
        // count = 0 leaves an empty channel (blocked); only count ≥ 1 fires
        assert_eq!(out.len(), 1);
        let d = &out[0].contents[0];
        assert_eq!(d.prefix, letters(&m, "b"));
        assert_eq!(d.period, letters(&m, "ab"));
        assert_eq!(d.count, n.clone().add_const(-1));
        assert_eq!(out[0].constraints, vec![Constraint::ge(n.add_const(-1))]);
    }

    #[test]
    fn post_retrieve_case_split_reaches_the_suffix() {
        let m = pump_retrieve();
        let t4 = m.trans_by_name("t4").unwrap();
        let n = AffineExpr::param(ParamId(0));
        // content b(ab)^n a at q4 wait; need head a: use (ab)^n a
        let s = SymbolicConfig {
            state: at(&m, "q4"),
            contents: vec![desc(&m, "", "ab", n.clone(), "a")],
            n_params: 1,
            constraints: vec![],
            trace: vec![],
        };
        let out = sym_post(&m, &s, t4);
        assert_eq!(out.len(), 2);
        // count = 0: content was "a", now empty
        assert!(out.iter().any(|o| {
            o.contents[0].prefix.is_empty()
                && o.contents[0].is_concrete()
                && o.constraints == vec![Constraint::eq(n.clone())]
        }));
        // count ≥ 1: b(ab)^(n-1)a remains
        assert!(out.iter().any(|o| {
            o.contents[0].prefix == letters(&m, "b")
                && o.contents[0].count == n.clone().add_const(-1)
                && o.constraints == vec![Constraint::ge(n.clone().add_const(-1))]
        }));
    }

    #[test]
    fn post_drops_unsatisfiable_branches() {
        let m = pump_retrieve();
        let t4 = m.trans_by_name("t4").unwrap();
        let n = AffineExpr::param(ParamId(0));
        // constraint n = 0 forces the count ≥ 1 branch out
        let s = SymbolicConfig {
            state: at(&m, "q4"),
            contents: vec![desc(&m, "", "ab", n.clone(), "a")],
            n_params: 1,
            constraints: vec![Constraint::eq(n.clone())],
            trace: vec![],
        };
        let out = sym_post(&m, &s, t4);
        assert_eq!(out.len(), 1);
        assert!(out[0].contents[0].prefix.is_empty());
    }

    // -- acceleration --

    #[test]
    fn accelerate_generalizes_a_send_loop() {
        let m = pump_retrieve();
        let l = loop_of(&m, at(&m, "q1")).unwrap().unwrap();
        let s0 = SymbolicConfig::concrete(&Config::initial(&m));
        let out = sym_accelerate(&m, &[s0], &l, DEFAULT_BUDGET).unwrap();
        assert_eq!(out.len(), 1);
        let d = &out[0].contents[0];
        assert!(d.prefix.is_empty() && d.suffix.is_empty());
        assert_eq!(d.period, letters(&m, "ab"));
        assert_eq!(d.count, AffineExpr::param(ParamId(0)));
        assert!(matches!(out[0].trace[0], TraceStep::Iterate { .. }));
    }

    #[test]
    fn accelerate_balanced_loop_closes_without_parameters() {
        let m = pump_retrieve();
        let l = loop_of(&m, at(&m, "q3")).unwrap().unwrap();
        // from ε the loop returns to ε: a singleton closure
        let s0 = SymbolicConfig::concrete(&cfg_words(&m, "q3", ""));
        let out = sym_accelerate(&m, &[s0.clone()], &l, DEFAULT_BUDGET).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].contents, s0.contents);
    }

    #[test]
    fn accelerate_blocked_loop_returns_the_input() {
        let m = pump_retrieve();
        let l = loop_of(&m, at(&m, "q3")).unwrap().unwrap();
        let s0 = SymbolicConfig::concrete(&cfg_words(&m, "q3", "b"));
        let out = sym_accelerate(&m, &[s0.clone()], &l, DEFAULT_BUDGET).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].contents, s0.contents);
    }

    #[test]
    fn accelerate_matches_explicit_iteration() {
        let m = pump_retrieve();
        let l = loop_of(&m, at(&m, "q3")).unwrap().unwrap();
        let init = cfg_words(&m, "q3", "ab");
        let s0 = SymbolicConfig::concrete(&init);
        let out = sym_accelerate(&m, &[s0], &l, DEFAULT_BUDGET).unwrap();
        // concrete iteration: ab -> (aba) -> ba -> (baa) -> blocked
        let mut expect: BTreeSet<Config> = BTreeSet::new();
        let mut cur = init.clone();
        expect.insert(cur.clone());
        while let Some(next) = fire_sequence(&m, &cur, &l.body) {
            if !expect.insert(next.clone()) {
                break;
            }
            cur = next;
        }
        let mut got: BTreeSet<Config> = BTreeSet::new();
        for s in &out {
            got.extend(s.members(8, 1000));
        }
        assert_eq!(got, expect);
    }

    // -- reach sets --

    #[test]
    fn reach_on_a_loop_free_machine_matches_the_explorer() {
        let text = "\
channels c
alphabet c: a b
state s0 init
state s1
state s2
trans u1 s0 s1 c!a
trans u2 s1 s2 c!b
trans u3 s0 s2 c!b
";
        let m = parse_machine(text).unwrap();
        let init = Config::initial(&m);
        let reach = reach_set(&m, &init, DEFAULT_BUDGET).unwrap();
        let g = explore(&m, &init, Semantics::Perfect, &ExploreBounds::default());
        assert!(!g.truncated);
        let mut sym: BTreeSet<Config> = BTreeSet::new();
        for (_, cfg) in reach.iter() {
            assert!(cfg.contents.iter().all(|d| d.is_concrete()));
            sym.extend(cfg.members(4, 100));
        }
        let exp: BTreeSet<Config> = g.configs().iter().cloned().collect();
        assert_eq!(sym, exp);
    }

    #[test]
    fn reach_set_of_the_pump_machine_is_exact_up_to_length_four() {
        let m = pump_retrieve();
        let init = Config::initial(&m);
        let reach = reach_set(&m, &init, DEFAULT_BUDGET).unwrap();
        // contents only ever grow along a run, so a channel cap of 8
        // collects every reachable config of length ≤ 7
        let bounds = ExploreBounds { max_configs: 100_000, max_channel_len: 8, max_depth: 100_000 };
        let g = explore(&m, &init, Semantics::Perfect, &bounds);
        let words = all_words(&m, 4);
        for q in m.states() {
            for w in &words {
                let target = Config::new(q, ChannelValuation::new(vec![w.clone()]));
                let symbolic = membership(&m, &reach, &target).is_some();
                let explicit = g.contains(&target);
                assert_eq!(symbolic, explicit, "state {} word {:?}", m.state_name(q), w);
            }
        }
    }

    fn all_words(m: &FifoMachine, max_len: usize) -> Vec<Word> {
        let alphabet: Vec<_> = m.letters().collect();
        let mut out: Vec<Word> = vec![Vec::new()];
        let mut layer: Vec<Word> = vec![Vec::new()];
        for _ in 0..max_len {
            let mut next = Vec::new();
            for w in &layer {
                for &a in &alphabet {
                    let mut v = w.clone();
                    v.push(a);
                    next.push(v);
                }
            }
            out.extend(next.iter().cloned());
            layer = next;
        }
        out
    }

    // -- decisions --

    #[test]
    fn reachability_with_a_replayed_witness() {
        let m = pump_retrieve();
        let init = Config::initial(&m);
        let target = cfg_words(&m, "q3", "abab");
        let ans = decide_reachability(&m, &init, &target, DEFAULT_BUDGET).unwrap();
        assert!(ans.reachable);
        let w = ans.witness.unwrap();
        assert_eq!(fire_sequence(&m, &init, &w.transitions), Some(target));
        assert_eq!(w.loops, vec![(at(&m, "q1"), 2)]);
    }

    #[test]
    fn reachability_rejects_odd_contents() {
        let m = pump_retrieve();
        let init = Config::initial(&m);
        // "ba" never occurs at q1: the loop emits (ab)^n
        let target = cfg_words(&m, "q1", "ba");
        let ans = decide_reachability(&m, &init, &target, DEFAULT_BUDGET).unwrap();
        assert!(!ans.reachable);
        assert!(ans.witness.is_none());
    }

    #[test]
    fn csr_distinguishes_reachable_states() {
        let text = "\
channels c
alphabet c: a
state s0 init
state s1
state dead
trans u1 s0 s1 c!a
trans u2 dead s0 c!a
";
        let m = parse_machine(text).unwrap();
        let init = Config::initial(&m);
        assert!(decide_csr(&m, &init, at(&m, "s1"), DEFAULT_BUDGET).unwrap());
        assert!(!decide_csr(&m, &init, at(&m, "dead"), DEFAULT_BUDGET).unwrap());
    }

    #[test]
    fn repeated_csr_on_the_pump_machine() {
        let m = pump_retrieve();
        let init = Config::initial(&m);
        // q1's loop only sends: it can fire forever
        assert!(decide_repeated_csr(&m, &init, at(&m, "q1"), DEFAULT_BUDGET).unwrap());
        // q3's loop keeps the content balanced; from ε it cycles forever
        assert!(decide_repeated_csr(&m, &init, at(&m, "q3"), DEFAULT_BUDGET).unwrap());
        // q2 sits on the same cycle as q1, so it recurs as well
        assert!(decide_repeated_csr(&m, &init, at(&m, "q2"), DEFAULT_BUDGET).unwrap());
    }

    #[test]
    fn repeated_csr_is_false_off_every_cycle() {
        let text = "\
channels c
alphabet c: a
state s0 init
state s1
state s2
trans u1 s0 s1 c!a
trans u2 s1 s1 c!a
trans u3 s1 s2 tau
";
        let m = parse_machine(text).unwrap();
        let init = Config::initial(&m);
        assert!(decide_repeated_csr(&m, &init, at(&m, "s1"), DEFAULT_BUDGET).unwrap());
        // s0 and s2 lie on no cycle
        assert!(!decide_repeated_csr(&m, &init, at(&m, "s0"), DEFAULT_BUDGET).unwrap());
        assert!(!decide_repeated_csr(&m, &init, at(&m, "s2"), DEFAULT_BUDGET).unwrap());
    }

    #[test]
    fn repeated_csr_rejects_a_shrinking_loop() {
        let text = "\
channels c
alphabet c: a
state s0 init
state s1
state s2
trans u1 s0 s1 c!a
trans u2 s1 s2 c?a
trans u3 s2 s1 tau
";
        let m = parse_machine(text).unwrap();
        let init = Config::initial(&m);
        // the loop at s1 retrieves one a per turn and sends nothing
        assert!(!decide_repeated_csr(&m, &init, at(&m, "s1"), DEFAULT_BUDGET).unwrap());
        assert!(decide_csr(&m, &init, at(&m, "s2"), DEFAULT_BUDGET).unwrap());
    }

    #[test]
    fn nontermination_and_unboundedness_on_the_pump_machine() {
        let m = pump_retrieve();
        let init = Config::initial(&m);
        assert!(decide_nontermination(&m, &init, DEFAULT_BUDGET).unwrap());
        assert!(decide_unboundedness(&m, &init, DEFAULT_BUDGET).unwrap());
        let a = m.letter_by_name("a").unwrap();
        let b = m.letter_by_name("b").unwrap();
        assert!(decide_letter_unbounded(&m, &init, a, DEFAULT_BUDGET).unwrap());
        assert!(decide_letter_unbounded(&m, &init, b, DEFAULT_BUDGET).unwrap());
        let c = m.channel_by_name("c").unwrap();
        assert!(decide_channel_unbounded(&m, &init, c, DEFAULT_BUDGET).unwrap());
    }

    #[test]
    fn a_balanced_system_is_bounded() {
        let text = "\
channels c
alphabet c: a
state s0 init
state s1
trans u1 s0 s1 c!a
trans u2 s1 s0 c?a
";
        let m = parse_machine(text).unwrap();
        let init = Config::initial(&m);
        assert!(decide_nontermination(&m, &init, DEFAULT_BUDGET).unwrap());
        assert!(!decide_unboundedness(&m, &init, DEFAULT_BUDGET).unwrap());
        let a = m.letter_by_name("a").unwrap();
        assert!(!decide_letter_unbounded(&m, &init, a, DEFAULT_BUDGET).unwrap());
    }

    // -- linear systems --

    #[test]
    fn objective_unbounded_examples() {
        // x ≥ 0, maximize x: unbounded
        let s1 = LinearSystem { a: vec![vec![1]], b: vec![0], k: vec![1] };
        assert!(integer_objective_unbounded(&s1).unwrap());
        // x ≥ 0 and -x ≥ -5 (x ≤ 5): bounded
        let s2 = LinearSystem { a: vec![vec![1], vec![-1]], b: vec![0, -5], k: vec![1] };
        assert!(!integer_objective_unbounded(&s2).unwrap());
        // x + y ≤ 10 bounds x + y; dropping the cap unbounds it
        let s3 = LinearSystem {
            a: vec![vec![1, 0], vec![0, 1], vec![-1, -1]],
            b: vec![0, 0, -10],
            k: vec![1, 1],
        };
        assert!(!integer_objective_unbounded(&s3).unwrap());
        let s4 = LinearSystem { a: vec![vec![1, 0], vec![0, 1]], b: vec![0, 0], k: vec![1, 1] };
        assert!(integer_objective_unbounded(&s4).unwrap());
    }

    #[test]
    fn infeasible_systems_are_never_unbounded() {
        // x ≥ 3 and -x ≥ -1 (x ≤ 1): empty
        let s = LinearSystem { a: vec![vec![1], vec![-1]], b: vec![3, -1], k: vec![1] };
        assert_eq!(integer_feasible_point(&s).unwrap(), None);
        assert!(!integer_objective_unbounded(&s).unwrap());
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let s = LinearSystem { a: vec![vec![1, 2]], b: vec![0], k: vec![1] };
        assert!(matches!(integer_objective_unbounded(&s), Err(SymError::DimensionMismatch)));
    }

    #[test]
    fn feasible_point_satisfies_the_system() {
        let s = LinearSystem {
            a: vec![vec![2, -1], vec![-1, 0], vec![0, 1]],
            b: vec![1, -6, 2],
            k: vec![0, 0],
        };
        let p = integer_feasible_point(&s).unwrap().unwrap();
        for (row, &bi) in s.a.iter().zip(&s.b) {
            let v: i64 = row.iter().zip(&p).map(|(&a, &x)| a * x).sum();
            assert!(v >= bi);
        }
    }

    // -- rendering --

    #[test]
    fn expressions_render_readably() {
        let e = AffineExpr::param(ParamId(0)).scale(2).add_param(ParamId(2), 1).add_const(-1);
        assert_eq!(expr_to_string(&e), "2*n1 + n3 - 1");
        assert_eq!(expr_to_string(&AffineExpr::constant(0)), "0");
        assert_eq!(
            constraint_to_string(&Constraint::ge(AffineExpr::param(ParamId(0)).add_const(-1))),
            "n1 - 1 >= 0"
        );
    }

    #[test]
    fn reach_set_exports_as_json() {
        let m = pump_retrieve();
        let reach = reach_set(&m, &Config::initial(&m), DEFAULT_BUDGET).unwrap();
        let text = reach_to_json(&m, &reach);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let q1 = &v["states"]["q1"];
        assert!(q1.is_array());
        assert_eq!(q1[0]["contents"]["c"]["period"], "ab");
        assert_eq!(q1[0]["contents"]["c"]["count"], "n1");
    }
}
