//! Action-labelled continuous-time Markov chains, the Erlang DELAY
//! building blocks and the synchronized parallel product.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt::Write as _;

use fixedbitset::FixedBitSet;
use statrs::function::factorial::ln_factorial;

/// Proposition carried by the last stage of a DELAY chain.
pub const ELAPSED: &str = "elapsed";
pub const TRIGGER: &str = "trigger";
pub const MOVE: &str = "move";

/// Default rate of the start-up `trigger` transition (per day).
pub const DEFAULT_MU: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CtmcError {
    #[error("rate {rate} on {src} -[{action}]-> {dst} must be finite and > 0")]
    InvalidRate {
        src: usize,
        action: String,
        dst: usize,
        rate: f64,
    },
    #[error("state index {0} out of range")]
    InvalidState(usize),
    #[error("chain has no states")]
    Empty,
    #[error("synchronized action `{0}` is not in both alphabets")]
    SyncNotShared(String),
    #[error("reset action set is empty")]
    NoResetActions,
    #[error("immediate transitions from the initial state do not resolve to a single state")]
    AmbiguousInitial,
    #[error("cycle of immediate transitions through state {0}")]
    ImmediateCycle(usize),
    #[error("unknown proposition `{0}`")]
    UnknownProposition(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub action: u32,
    pub rate: f64,
    pub target: u32,
}

/// A labelled CTMC `(S, s0, Act, AP, L, R)` stored as per-state adjacency.
///
/// Duplicate `(s, a, s')` entries are merged by summing their rates.
/// Self-loops are kept: they do not change the state distribution but do
/// count for transition rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct Ctmc {
    initial: usize,
    actions: Vec<String>,
    propositions: Vec<String>,
    labels: Vec<FixedBitSet>,
    offsets: Vec<usize>,
    edges: Vec<Edge>,
    state_names: Vec<String>,
}

impl Ctmc {
    pub fn num_states(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_transitions(&self) -> usize {
        self.edges.len()
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn actions(&self) -> &[String] {
        &self.actions
    }

    pub fn action_name(&self, id: u32) -> &str {
        &self.actions[id as usize]
    }

    pub fn action_id(&self, name: &str) -> Option<u32> {
        self.actions.iter().position(|a| a == name).map(|i| i as u32)
    }

    pub fn propositions(&self) -> &[String] {
        &self.propositions
    }

    pub fn proposition_id(&self, name: &str) -> Option<usize> {
        self.propositions.iter().position(|p| p == name)
    }

    /// States satisfying a proposition.
    pub fn states_with(&self, prop: &str) -> Result<&FixedBitSet, CtmcError> {
        self.proposition_id(prop)
            .map(|i| &self.labels[i])
            .ok_or_else(|| CtmcError::UnknownProposition(prop.to_string()))
    }

    pub fn has_label(&self, state: usize, prop: &str) -> bool {
        self.proposition_id(prop)
            .is_some_and(|i| self.labels[i].contains(state))
    }

    pub fn labels_of(&self, state: usize) -> Vec<&str> {
        self.propositions
            .iter()
            .zip(&self.labels)
            .filter(|(_, set)| set.contains(state))
            .map(|(p, _)| p.as_str())
            .collect()
    }

    pub fn edges(&self, state: usize) -> &[Edge] {
        &self.edges[self.offsets[state]..self.offsets[state + 1]]
    }

    pub fn transitions(&self) -> impl Iterator<Item = (usize, &Edge)> + '_ {
        (0..self.num_states()).flat_map(move |s| self.edges(s).iter().map(move |e| (s, e)))
    }

    /// Total rate of leaving `state` (self-loops excluded).
    pub fn exit_rate(&self, state: usize) -> f64 {
        self.edges(state)
            .iter()
            .filter(|e| e.target as usize != state)
            .map(|e| e.rate)
            .sum()
    }

    pub fn rate(&self, src: usize, action: &str, dst: usize) -> f64 {
        let Some(a) = self.action_id(action) else {
            return 0.0;
        };
        self.edges(src)
            .iter()
            .filter(|e| e.action == a && e.target as usize == dst)
            .map(|e| e.rate)
            .sum()
    }

    pub fn state_name(&self, state: usize) -> String {
        self.state_names
            .get(state)
            .cloned()
            .unwrap_or_else(|| format!("s{state}"))
    }

    pub fn state_by_name(&self, name: &str) -> Option<usize> {
        self.state_names.iter().position(|n| n == name)
    }

    pub fn has_state_names(&self) -> bool {
        !self.state_names.is_empty()
    }

    pub fn with_initial(mut self, initial: usize) -> Result<Self, CtmcError> {
        if initial >= self.num_states() {
            return Err(CtmcError::InvalidState(initial));
        }
        self.initial = initial;
        Ok(self)
    }

    pub fn with_state_names(mut self, names: Vec<String>) -> Result<Self, CtmcError> {
        if names.len() != self.num_states() {
            return Err(CtmcError::InvalidState(names.len()));
        }
        self.state_names = names;
        Ok(self)
    }

    /// Same chain with every state satisfying `prop` made absorbing.
    pub fn make_absorbing(&self, prop: &str) -> Result<Ctmc, CtmcError> {
        let target = self.states_with(prop)?.clone();
        let mut b = self.to_builder();
        b.transitions.retain(|t| !target.contains(t.0));
        b.build()
    }

    pub fn to_builder(&self) -> CtmcBuilder {
        let mut b = CtmcBuilder::new();
        b.names = if self.state_names.is_empty() {
            (0..self.num_states()).map(|s| format!("s{s}")).collect()
        } else {
            self.state_names.clone()
        };
        b.keep_names = !self.state_names.is_empty();
        b.initial = self.initial;
        for a in &self.actions {
            b.declare_action(a);
        }
        for (p, set) in self.propositions.iter().zip(&self.labels) {
            let pid = b.declare_proposition(p);
            for s in set.ones() {
                b.label_pairs.push((s, pid));
            }
        }
        for (s, e) in self.transitions() {
            b.transitions.push((s, e.action, e.rate, e.target as usize));
        }
        b
    }

    /// Plain-text edge list `src action rate dst` followed by a label table.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# states {} initial {}", self.num_states(), self.state_name(self.initial));
        for (s, e) in self.transitions() {
            let _ = writeln!(
                out,
                "{} {} {} {}",
                self.state_name(s),
                self.action_name(e.action),
                e.rate,
                self.state_name(e.target as usize)
            );
        }
        out.push_str("# labels\n");
        for s in 0..self.num_states() {
            let labels = self.labels_of(s);
            if !labels.is_empty() {
                let _ = writeln!(out, "{}: {}", self.state_name(s), labels.join(" "));
            }
        }
        out
    }
}

/// Incremental constructor for [`Ctmc`].
#[derive(Debug, Clone, Default)]
pub struct CtmcBuilder {
    names: Vec<String>,
    keep_names: bool,
    initial: usize,
    actions: Vec<String>,
    action_index: HashMap<String, u32>,
    propositions: Vec<String>,
    prop_index: HashMap<String, usize>,
    label_pairs: Vec<(usize, usize)>,
    transitions: Vec<(usize, u32, f64, usize)>,
}

impl CtmcBuilder {
    pub fn new() -> Self {
        Self {
            keep_names: true,
            ..Self::default()
        }
    }

    /// Builder for chains too large to name every state.
    pub fn anonymous(states: usize) -> Self {
        Self {
            names: vec![String::new(); states],
            keep_names: false,
            ..Self::default()
        }
    }

    pub fn add_state(&mut self, name: impl Into<String>) -> usize {
        self.names.push(name.into());
        self.names.len() - 1
    }

    pub fn num_states(&self) -> usize {
        self.names.len()
    }

    pub fn declare_action(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.action_index.get(name) {
            return id;
        }
        let id = self.actions.len() as u32;
        self.actions.push(name.to_string());
        self.action_index.insert(name.to_string(), id);
        id
    }

    pub fn declare_proposition(&mut self, name: &str) -> usize {
        if let Some(&id) = self.prop_index.get(name) {
            return id;
        }
        let id = self.propositions.len();
        self.propositions.push(name.to_string());
        self.prop_index.insert(name.to_string(), id);
        id
    }

    pub fn transition(&mut self, src: usize, action: &str, rate: f64, dst: usize) -> &mut Self {
        let a = self.declare_action(action);
        self.transitions.push((src, a, rate, dst));
        self
    }

    pub fn transition_id(&mut self, src: usize, action: u32, rate: f64, dst: usize) -> &mut Self {
        self.transitions.push((src, action, rate, dst));
        self
    }

    pub fn label(&mut self, state: usize, prop: &str) -> &mut Self {
        let p = self.declare_proposition(prop);
        self.label_pairs.push((state, p));
        self
    }

    pub fn label_id(&mut self, state: usize, prop: usize) -> &mut Self {
        self.label_pairs.push((state, prop));
        self
    }

    pub fn initial(&mut self, state: usize) -> &mut Self {
        self.initial = state;
        self
    }

    /// Rewrites or drops existing transitions. The closure receives
    /// `(src, action, rate, dst)` and returns the replacement.
    pub fn map_transitions(
        &mut self,
        mut f: impl FnMut(usize, &str, f64, usize) -> Option<(String, f64, usize)>,
    ) -> &mut Self {
        let old = std::mem::take(&mut self.transitions);
        for (s, a, r, d) in old {
            let name = self.actions[a as usize].clone();
            if let Some((na, nr, nd)) = f(s, &name, r, d) {
                let id = self.declare_action(&na);
                self.transitions.push((s, id, nr, nd));
            }
        }
        self
    }

    pub fn build(self) -> Result<Ctmc, CtmcError> {
        let n = self.names.len();
        if n == 0 {
            return Err(CtmcError::Empty);
        }
        if self.initial >= n {
            return Err(CtmcError::InvalidState(self.initial));
        }
        let mut trans = self.transitions;
        for &(s, a, r, d) in &trans {
            if s >= n {
                return Err(CtmcError::InvalidState(s));
            }
            if d >= n {
                return Err(CtmcError::InvalidState(d));
            }
            if !(r.is_finite() && r > 0.0) {
                return Err(CtmcError::InvalidRate {
                    src: s,
                    action: self.actions[a as usize].clone(),
                    dst: d,
                    rate: r,
                });
            }
        }
        trans.sort_by(|x, y| (x.0, x.1, x.3).cmp(&(y.0, y.1, y.3)));
        let mut edges: Vec<Edge> = Vec::with_capacity(trans.len());
        let mut offsets = vec![0usize; n + 1];
        let mut last: Option<(usize, u32, usize)> = None;
        for (s, a, r, d) in trans {
            if last == Some((s, a, d)) {
                edges.last_mut().expect("merged edge").rate += r;
                continue;
            }
            last = Some((s, a, d));
            edges.push(Edge {
                action: a,
                rate: r,
                target: d as u32,
            });
            offsets[s + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        let mut labels = vec![FixedBitSet::with_capacity(n); self.propositions.len()];
        for (s, p) in self.label_pairs {
            if s >= n {
                return Err(CtmcError::InvalidState(s));
            }
            labels[p].insert(s);
        }
        Ok(Ctmc {
            initial: self.initial,
            actions: self.actions,
            propositions: self.propositions,
            labels,
            offsets,
            edges,
            state_names: if self.keep_names { self.names } else { Vec::new() },
        })
    }
}

/// Erlang(k, λ) distribution function `1 - Σ_{n<k} e^{-λt} (λt)^n / n!`.
///
/// Evaluated as a Poisson tail so that neither large `k` nor large `λt`
/// overflows; whichever tail is smaller is summed directly.
pub fn erlang_cdf(t: f64, k: u32, lambda: f64) -> f64 {
    if t <= 0.0 || lambda <= 0.0 {
        return 0.0;
    }
    if k == 0 {
        return 1.0;
    }
    let x = lambda * t;
    if !x.is_finite() {
        return 1.0;
    }
    let log_pmf = |n: u64| -x + n as f64 * x.ln() - ln_factorial(n);
    let k = k as u64;
    if x < k as f64 {
        // P(Poisson(x) >= k): terms decrease geometrically past k
        let mut term = log_pmf(k).exp();
        let mut sum = 0.0;
        let mut n = k;
        while term > 0.0 && term > sum * 1e-18 {
            sum += term;
            n += 1;
            term *= x / n as f64;
        }
        sum.min(1.0)
    } else {
        // 1 - P(Poisson(x) <= k-1): terms decrease walking down from k-1
        let mut term = log_pmf(k - 1).exp();
        let mut sum = 0.0;
        let mut n = k - 1;
        loop {
            sum += term;
            if n == 0 || term <= sum * 1e-18 {
                break;
            }
            term *= n as f64 / x;
            n -= 1;
        }
        (1.0 - sum).clamp(0.0, 1.0)
    }
}

/// A deterministic delay `t` approximated by `stages` exponential phases.
#[derive(Debug, Clone, PartialEq)]
pub struct DelaySpec {
    pub t: f64,
    pub stages: u32,
    pub extended: bool,
    pub mu: f64,
}

impl DelaySpec {
    pub fn new(t: f64, stages: u32) -> Self {
        Self {
            t,
            stages,
            extended: false,
            mu: DEFAULT_MU,
        }
    }

    pub fn stage_rate(&self) -> f64 {
        self.stages as f64 / self.t
    }
}

/// DELAY chain `d0 .. d_{N+1}`: `trigger` at rate μ from `d0`, then `move`
/// at rate `N/T` along the chain and from `d_{N+1}` back to `d1`.
/// Only `d_{N+1}` carries [`ELAPSED`].
pub fn delay_module(spec: &DelaySpec) -> Result<Ctmc, CtmcError> {
    let n = spec.stages.max(1) as usize;
    let rate = spec.stage_rate();
    let mut b = CtmcBuilder::new();
    for i in 0..=n + 1 {
        b.add_state(format!("d{i}"));
    }
    b.declare_action(TRIGGER);
    b.declare_action(MOVE);
    b.transition(0, TRIGGER, spec.mu, 1);
    for i in 1..=n {
        b.transition(i, MOVE, rate, i + 1);
    }
    b.transition(n + 1, MOVE, rate, 1);
    b.declare_proposition(ELAPSED);
    b.label(n + 1, ELAPSED);
    b.initial(0);
    b.build()
}

/// Extended DELAY: [`delay_module`] plus, for each reset action, a rate-1
/// transition from every `d_i` with `2 <= i <= N+1` back to `d1`.
pub fn delay_module_ext(spec: &DelaySpec, reset_actions: &BTreeSet<String>) -> Result<Ctmc, CtmcError> {
    if reset_actions.is_empty() {
        return Err(CtmcError::NoResetActions);
    }
    let n = spec.stages.max(1) as usize;
    let mut b = delay_module(spec)?.to_builder();
    for action in reset_actions {
        for i in 2..=n + 1 {
            b.transition(i, action, 1.0, 1);
        }
    }
    b.build()
}

/// Synchronized product: actions in `sync` fire jointly at the product of
/// the two rates, all other actions interleave. Only states reachable from
/// the joint initial state are built; labels are the union.
pub fn compose(c1: &Ctmc, c2: &Ctmc, sync: &BTreeSet<String>) -> Result<Ctmc, CtmcError> {
    for a in sync {
        if c1.action_id(a).is_none() || c2.action_id(a).is_none() {
            return Err(CtmcError::SyncNotShared(a.clone()));
        }
    }
    let sync1: Vec<bool> = c1.actions.iter().map(|a| sync.contains(a)).collect();
    let sync2: Vec<bool> = c2.actions.iter().map(|a| sync.contains(a)).collect();

    fn visit(
        b: &mut CtmcBuilder,
        index: &mut HashMap<(usize, usize), usize>,
        order: &mut Vec<(usize, usize)>,
        names: (&Ctmc, &Ctmc),
        s: (usize, usize),
    ) -> usize {
        *index.entry(s).or_insert_with(|| {
            order.push(s);
            b.add_state(format!("{}|{}", names.0.state_name(s.0), names.1.state_name(s.1)))
        })
    }
    let mut b = CtmcBuilder::new();
    let mut index: HashMap<(usize, usize), usize> = HashMap::new();
    let mut order: Vec<(usize, usize)> = Vec::new();
    visit(&mut b, &mut index, &mut order, (c1, c2), (c1.initial, c2.initial));
    let mut src = 0;
    while src < order.len() {
        let (s1, s2) = order[src];
        let mut moves: Vec<(&str, f64, (usize, usize))> = Vec::new();
        for e1 in c1.edges(s1) {
            let name = c1.action_name(e1.action);
            if sync1[e1.action as usize] {
                let a2 = c2.action_id(name).expect("checked shared");
                for e2 in c2.edges(s2).iter().filter(|e| e.action == a2) {
                    moves.push((name, e1.rate * e2.rate, (e1.target as usize, e2.target as usize)));
                }
            } else {
                moves.push((name, e1.rate, (e1.target as usize, s2)));
            }
        }
        for e2 in c2.edges(s2).iter().filter(|e| !sync2[e.action as usize]) {
            moves.push((c2.action_name(e2.action), e2.rate, (s1, e2.target as usize)));
        }
        for (name, rate, t) in moves {
            let dst = visit(&mut b, &mut index, &mut order, (c1, c2), t);
            b.transition(src, name, rate, dst);
        }
        src += 1;
    }
    for a in c1.actions.iter().chain(&c2.actions) {
        b.declare_action(a);
    }
    for (c, side) in [(c1, 0usize), (c2, 1usize)] {
        for p in &c.propositions {
            b.declare_proposition(p);
        }
        for (i, &(s1, s2)) in order.iter().enumerate() {
            let local = if side == 0 { s1 } else { s2 };
            for p in c.labels_of(local) {
                b.label(i, p);
            }
        }
    }
    b.initial(0);
    b.build()
}

/// Drops states not reachable from the initial state.
pub fn restrict_reachable(c: &Ctmc) -> Ctmc {
    let n = c.num_states();
    let mut seen = FixedBitSet::with_capacity(n);
    let mut order = Vec::new();
    let mut queue = VecDeque::from([c.initial]);
    seen.insert(c.initial);
    while let Some(s) = queue.pop_front() {
        order.push(s);
        for e in c.edges(s) {
            let t = e.target as usize;
            if !seen.contains(t) {
                seen.insert(t);
                queue.push_back(t);
            }
        }
    }
    if order.len() == n {
        return c.clone();
    }
    order.sort_unstable();
    let mut remap = vec![usize::MAX; n];
    for (new, &old) in order.iter().enumerate() {
        remap[old] = new;
    }
    let mut b = CtmcBuilder::new();
    b.keep_names = c.has_state_names();
    for &old in &order {
        b.add_state(c.state_name(old));
    }
    for a in &c.actions {
        b.declare_action(a);
    }
    for (p, set) in c.propositions.iter().zip(&c.labels) {
        let pid = b.declare_proposition(p);
        for s in set.ones().filter(|&s| remap[s] != usize::MAX) {
            b.label_id(remap[s], pid);
        }
    }
    for &old in &order {
        for e in c.edges(old) {
            b.transition_id(remap[old], e.action, e.rate, remap[e.target as usize]);
        }
    }
    b.initial(remap[c.initial]);
    b.build().expect("restriction of a valid chain")
}

/// Removes vanishing states: a state with an enabled action from
/// `immediate` is left instantly, branching in proportion to the immediate
/// rates, and competing timed transitions are discarded. This is the limit
/// of the chain as the immediate rates grow without bound.
pub fn eliminate_immediate(c: &Ctmc, immediate: &BTreeSet<String>) -> Result<Ctmc, CtmcError> {
    let imm: Vec<bool> = c.actions.iter().map(|a| immediate.contains(a)).collect();
    let n = c.num_states();
    let vanishing: Vec<bool> = (0..n)
        .map(|s| c.edges(s).iter().any(|e| imm[e.action as usize]))
        .collect();
    if !vanishing.iter().any(|&v| v) {
        return Ok(c.clone());
    }
    let mut memo: HashMap<usize, Vec<(usize, f64)>> = HashMap::new();
    fn resolve(
        c: &Ctmc,
        s: usize,
        imm: &[bool],
        vanishing: &[bool],
        memo: &mut HashMap<usize, Vec<(usize, f64)>>,
        depth: usize,
    ) -> Result<Vec<(usize, f64)>, CtmcError> {
        if !vanishing[s] {
            return Ok(vec![(s, 1.0)]);
        }
        if let Some(d) = memo.get(&s) {
            return Ok(d.clone());
        }
        if depth > c.num_states() {
            return Err(CtmcError::ImmediateCycle(s));
        }
        let total: f64 = c
            .edges(s)
            .iter()
            .filter(|e| imm[e.action as usize])
            .map(|e| e.rate)
            .sum();
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for e in c.edges(s).iter().filter(|e| imm[e.action as usize]) {
            if e.target as usize == s {
                return Err(CtmcError::ImmediateCycle(s));
            }
            for (t, p) in resolve(c, e.target as usize, imm, vanishing, memo, depth + 1)? {
                *acc.entry(t).or_default() += p * e.rate / total;
            }
        }
        let dist: Vec<(usize, f64)> = acc.into_iter().collect();
        memo.insert(s, dist.clone());
        Ok(dist)
    }

    let init = resolve(c, c.initial, &imm, &vanishing, &mut memo, 0)?;
    if init.len() != 1 {
        return Err(CtmcError::AmbiguousInitial);
    }
    let mut b = CtmcBuilder::new();
    b.keep_names = c.has_state_names();
    let mut remap = vec![usize::MAX; n];
    for s in (0..n).filter(|&s| !vanishing[s]) {
        remap[s] = b.add_state(c.state_name(s));
    }
    for a in &c.actions {
        b.declare_action(a);
    }
    for (p, set) in c.propositions.iter().zip(&c.labels) {
        let pid = b.declare_proposition(p);
        for s in set.ones().filter(|&s| !vanishing[s]) {
            b.label_id(remap[s], pid);
        }
    }
    for s in (0..n).filter(|&s| !vanishing[s]) {
        for e in c.edges(s) {
            for (t, p) in resolve(c, e.target as usize, &imm, &vanishing, &mut memo, 0)? {
                b.transition_id(remap[s], e.action, e.rate * p, remap[t]);
            }
        }
    }
    b.initial(remap[init[0].0]);
    Ok(restrict_reachable(&b.build()?))
}
