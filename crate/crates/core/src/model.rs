//! Fault maintenance tree domain types and structural validation.
//!
//! A model is a tree of OR gates over extended basic events (EBEs), plus
//! RDEP gates that hang off the tree: an RDEP watches one trigger EBE and,
//! once it has failed, accelerates the degradation of its dependents. The
//! repair and inspection modules are global and live in [`MaintenancePolicy`].
//!
//! All durations are in days.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

pub type NodeId = String;

pub const DAYS_PER_MONTH: f64 = 30.42;
pub const DAYS_PER_YEAR: f64 = 365.0;

/// Extended basic event: a component with `levels` discrete degradation
/// levels whose time to failure is approximated by `Erlang(levels, levels / t_deg)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EbeSpec {
    pub id: NodeId,
    pub levels: u32,
    pub t_deg: f64,
    pub t_clean: f64,
    pub t_replace: f64,
    /// Whether the global repair/inspection modules act on this event.
    /// Abstracted sub-trees are inserted as unmaintained events.
    pub maintained: bool,
}

impl EbeSpec {
    pub fn new(id: impl Into<NodeId>, levels: u32, t_deg: f64, t_clean: f64, t_replace: f64) -> Self {
        Self {
            id: id.into(),
            levels,
            t_deg,
            t_clean,
            t_replace,
            maintained: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GateKind {
    Or,
    Rdep { gamma: f64, dependents: Vec<NodeId> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateSpec {
    pub id: NodeId,
    pub kind: GateKind,
    /// OR: the failure inputs. RDEP: exactly one trigger event.
    pub inputs: Vec<NodeId>,
}

impl GateSpec {
    pub fn or(id: impl Into<NodeId>, inputs: &[&str]) -> Self {
        Self {
            id: id.into(),
            kind: GateKind::Or,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn rdep(id: impl Into<NodeId>, trigger: &str, dependents: &[&str], gamma: f64) -> Self {
        Self {
            id: id.into(),
            kind: GateKind::Rdep {
                gamma,
                dependents: dependents.iter().map(|s| s.to_string()).collect(),
            },
            inputs: vec![trigger.to_string()],
        }
    }

    pub fn is_rdep(&self) -> bool {
        matches!(self.kind, GateKind::Rdep { .. })
    }

    pub fn trigger(&self) -> Option<&str> {
        match self.kind {
            GateKind::Rdep { .. } => self.inputs.first().map(String::as_str),
            GateKind::Or => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Ebe(EbeSpec),
    Gate(GateSpec),
}

impl Node {
    pub fn id(&self) -> &str {
        match self {
            Node::Ebe(e) => &e.id,
            Node::Gate(g) => &g.id,
        }
    }

    pub fn inputs(&self) -> &[NodeId] {
        match self {
            Node::Ebe(_) => &[],
            Node::Gate(g) => &g.inputs,
        }
    }

    pub fn as_ebe(&self) -> Option<&EbeSpec> {
        match self {
            Node::Ebe(e) => Some(e),
            Node::Gate(_) => None,
        }
    }

    pub fn as_gate(&self) -> Option<&GateSpec> {
        match self {
            Node::Gate(g) => Some(g),
            Node::Ebe(_) => None,
        }
    }
}

/// Timing of the periodic repair (cleaning), overhaul (replacement) and
/// inspection signals. `f64::INFINITY` disables a timer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaintenancePolicy {
    pub t_rep: f64,
    pub t_oh: f64,
    pub t_insp: f64,
    pub timer_stages: u32,
}

impl MaintenancePolicy {
    /// No periodic maintenance at all.
    pub fn disabled() -> Self {
        Self {
            t_rep: f64::INFINITY,
            t_oh: f64::INFINITY,
            t_insp: f64::INFINITY,
            timer_stages: 3,
        }
    }

    pub fn is_disabled(&self) -> bool {
        !self.t_rep.is_finite() && !self.t_oh.is_finite() && !self.t_insp.is_finite()
    }
}

impl Default for MaintenancePolicy {
    fn default() -> Self {
        Self::disabled()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub cost_repair: f64,
    pub cost_replace: f64,
    pub cost_operational_per_day: f64,
    pub cost_failure_per_day: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            cost_repair: 100.0,
            cost_replace: 5000.0,
            cost_operational_per_day: 0.0,
            cost_failure_per_day: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FmtModel {
    pub nodes: BTreeMap<NodeId, Node>,
    pub top_event: NodeId,
    pub policy: MaintenancePolicy,
    pub costs: CostModel,
    /// Declaration line per node when the model came from source text.
    #[serde(default)]
    pub source_lines: BTreeMap<NodeId, usize>,
}

/// Structural equality; source positions are ignored.
impl PartialEq for FmtModel {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes
            && self.top_event == other.top_event
            && self.policy == other.policy
            && self.costs == other.costs
    }
}

impl FmtModel {
    pub fn new(top_event: impl Into<NodeId>, policy: MaintenancePolicy) -> Self {
        Self {
            nodes: BTreeMap::new(),
            top_event: top_event.into(),
            policy,
            costs: CostModel::default(),
            source_lines: BTreeMap::new(),
        }
    }

    pub fn with_node(mut self, node: Node) -> Self {
        self.insert(node);
        self
    }

    pub fn with_ebe(self, ebe: EbeSpec) -> Self {
        self.with_node(Node::Ebe(ebe))
    }

    pub fn with_gate(self, gate: GateSpec) -> Self {
        self.with_node(Node::Gate(gate))
    }

    pub fn insert(&mut self, node: Node) {
        self.nodes.insert(node.id().to_string(), node);
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.get(id)
    }

    pub fn ebe(&self, id: &str) -> Option<&EbeSpec> {
        self.nodes.get(id).and_then(Node::as_ebe)
    }

    pub fn ebes(&self) -> impl Iterator<Item = &EbeSpec> {
        self.nodes.values().filter_map(Node::as_ebe)
    }

    pub fn gates(&self) -> impl Iterator<Item = &GateSpec> {
        self.nodes.values().filter_map(Node::as_gate)
    }

    pub fn rdeps(&self) -> impl Iterator<Item = &GateSpec> {
        self.gates().filter(|g| g.is_rdep())
    }

    /// Tree parents: the OR gates listing a node as an input.
    pub fn or_parents(&self) -> BTreeMap<&str, Vec<&str>> {
        let mut parents: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for g in self.gates().filter(|g| !g.is_rdep()) {
            for input in &g.inputs {
                parents.entry(input.as_str()).or_default().push(&g.id);
            }
        }
        parents
    }

    /// Events in the failure tree below `id` (following OR inputs only).
    pub fn events_below(&self, id: &str) -> BTreeSet<NodeId> {
        let mut out = BTreeSet::new();
        let mut stack = vec![id];
        let mut seen = BTreeSet::new();
        while let Some(cur) = stack.pop() {
            if !seen.insert(cur) {
                continue;
            }
            match self.nodes.get(cur) {
                Some(Node::Ebe(e)) => {
                    out.insert(e.id.clone());
                }
                Some(Node::Gate(g)) if !g.is_rdep() => {
                    stack.extend(g.inputs.iter().map(String::as_str));
                }
                _ => {}
            }
        }
        out
    }

    /// Largest cleaning and replacement durations over maintained events.
    /// Maintenance acts on all components at once, so it lasts as long as
    /// the slowest one.
    pub fn maintenance_durations(&self) -> Option<(f64, f64)> {
        let mut it = self.ebes().filter(|e| e.maintained).peekable();
        it.peek()?;
        let (c, r) = it.fold((0.0f64, 0.0f64), |(c, r), e| (c.max(e.t_clean), r.max(e.t_replace)));
        Some((c, r))
    }

    pub fn num_rdeps(&self) -> usize {
        self.rdeps().count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    MissingTopEvent,
    MultipleTopEvents(Vec<NodeId>),
    TopEventHasParent,
    TopEventIsRdep,
    UnknownReference(NodeId),
    Cycle,
    EmptyOr,
    RdepArity,
    RdepTriggerNotEbe,
    RdepDependentNotEbe(NodeId),
    RdepSelfDependency,
    RdepUsedAsInput,
    GammaOutOfRange(f64),
    SharedNode(Vec<NodeId>),
    InvalidEbe(String),
    InvalidPolicy(String),
    InvalidCost(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub node: Option<NodeId>,
    pub kind: ViolationKind,
    pub line: Option<usize>,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViolationKind::MissingTopEvent => write!(f, "top event is not declared"),
            ViolationKind::MultipleTopEvents(roots) => {
                write!(f, "multiple top events: {}", roots.join(", "))
            }
            ViolationKind::TopEventHasParent => write!(f, "top event is used as a gate input"),
            ViolationKind::TopEventIsRdep => write!(f, "top event cannot be an RDEP gate"),
            ViolationKind::UnknownReference(id) => write!(f, "unknown reference `{id}`"),
            ViolationKind::Cycle => write!(f, "graph contains a cycle"),
            ViolationKind::EmptyOr => write!(f, "OR gate has no inputs"),
            ViolationKind::RdepArity => write!(f, "RDEP must have exactly one trigger input"),
            ViolationKind::RdepTriggerNotEbe => write!(f, "RDEP trigger must be EBE"),
            ViolationKind::RdepDependentNotEbe(id) => {
                write!(f, "RDEP dependent `{id}` must be EBE")
            }
            ViolationKind::RdepSelfDependency => write!(f, "RDEP trigger cannot be its own dependent"),
            ViolationKind::RdepUsedAsInput => write!(f, "RDEP gate has no output and cannot be an input"),
            ViolationKind::GammaOutOfRange(g) => write!(f, "RDEP gamma {g} must be finite and >= 1"),
            ViolationKind::SharedNode(parents) => {
                write!(f, "node has multiple parents: {}", parents.join(", "))
            }
            ViolationKind::InvalidEbe(msg) => write!(f, "invalid EBE: {msg}"),
            ViolationKind::InvalidPolicy(msg) => write!(f, "invalid policy: {msg}"),
            ViolationKind::InvalidCost(msg) => write!(f, "invalid costs: {msg}"),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(line) = self.line {
            write!(f, "line {line}: ")?;
        }
        if let Some(node) = &self.node {
            write!(f, "{node}: ")?;
        }
        write!(f, "{}", self.kind)
    }
}

struct Checker<'a> {
    model: &'a FmtModel,
    out: Vec<Violation>,
}

impl<'a> Checker<'a> {
    fn push(&mut self, node: Option<&str>, kind: ViolationKind) {
        let line = node.and_then(|n| self.model.source_lines.get(n).copied());
        self.out.push(Violation {
            node: node.map(str::to_string),
            kind,
            line,
        });
    }
}

/// Returns every structural rule the model violates. An empty list means
/// the model is well formed.
pub fn validate(model: &FmtModel) -> Vec<Violation> {
    let mut ck = Checker {
        model,
        out: Vec::new(),
    };

    for (id, node) in &model.nodes {
        match node {
            Node::Ebe(e) => check_ebe(&mut ck, e),
            Node::Gate(g) => {
                for input in &g.inputs {
                    if !model.nodes.contains_key(input) {
                        ck.push(Some(id), ViolationKind::UnknownReference(input.clone()));
                    }
                }
                match &g.kind {
                    GateKind::Or => {
                        if g.inputs.is_empty() {
                            ck.push(Some(id), ViolationKind::EmptyOr);
                        }
                    }
                    GateKind::Rdep { gamma, dependents } => {
                        check_rdep(&mut ck, g, *gamma, dependents);
                    }
                }
            }
        }
    }

    let or_parents = model.or_parents();
    for (child, parents) in &or_parents {
        if let Some(Node::Gate(g)) = model.nodes.get(*child) {
            if g.is_rdep() {
                ck.push(Some(child), ViolationKind::RdepUsedAsInput);
            }
        }
        if parents.len() > 1 {
            ck.push(
                Some(child),
                ViolationKind::SharedNode(parents.iter().map(|s| s.to_string()).collect()),
            );
        }
    }

    match model.nodes.get(&model.top_event) {
        None => ck.push(Some(&model.top_event), ViolationKind::MissingTopEvent),
        Some(Node::Gate(g)) if g.is_rdep() => {
            ck.push(Some(&model.top_event), ViolationKind::TopEventIsRdep)
        }
        Some(_) => {
            if or_parents.contains_key(model.top_event.as_str()) {
                ck.push(Some(&model.top_event), ViolationKind::TopEventHasParent);
            }
        }
    }

    // RDEP gates carry no output, so they are exempt from the single-root rule.
    let roots: Vec<NodeId> = model
        .nodes
        .values()
        .filter(|n| !matches!(n, Node::Gate(g) if g.is_rdep()))
        .filter(|n| !or_parents.contains_key(n.id()))
        .map(|n| n.id().to_string())
        .collect();
    if roots.len() > 1 {
        ck.push(None, ViolationKind::MultipleTopEvents(roots));
    }

    if has_cycle(model) {
        ck.push(None, ViolationKind::Cycle);
    }

    check_policy(&mut ck, &model.policy);
    check_costs(&mut ck, &model.costs);
    ck.out
}

fn check_ebe(ck: &mut Checker<'_>, e: &EbeSpec) {
    let id = e.id.as_str();
    if e.levels == 0 {
        ck.push(Some(id), ViolationKind::InvalidEbe("levels must be >= 1".into()));
    }
    // An infinite degradation delay is allowed: the event never degrades.
    if e.t_deg.is_nan() || e.t_deg <= 0.0 {
        ck.push(Some(id), ViolationKind::InvalidEbe("tdeg must be > 0".into()));
    }
    for (name, v) in [("tclean", e.t_clean), ("treplace", e.t_replace)] {
        if !(v.is_finite() && v > 0.0) {
            ck.push(Some(id), ViolationKind::InvalidEbe(format!("{name} must be finite and > 0")));
        }
    }
    if e.maintained && e.t_clean == e.t_replace {
        ck.push(
            Some(id),
            ViolationKind::InvalidEbe("tclean and treplace must differ".into()),
        );
    }
}

fn check_rdep(ck: &mut Checker<'_>, g: &GateSpec, gamma: f64, dependents: &[NodeId]) {
    let id = g.id.as_str();
    let model = ck.model;
    if g.inputs.len() != 1 {
        ck.push(Some(id), ViolationKind::RdepArity);
    }
    if let Some(trigger) = g.inputs.first() {
        if matches!(model.nodes.get(trigger), Some(Node::Gate(_))) {
            ck.push(Some(id), ViolationKind::RdepTriggerNotEbe);
        }
        if dependents.contains(trigger) {
            ck.push(Some(id), ViolationKind::RdepSelfDependency);
        }
    }
    if !(gamma.is_finite() && gamma >= 1.0) {
        ck.push(Some(id), ViolationKind::GammaOutOfRange(gamma));
    }
    if dependents.is_empty() {
        ck.push(Some(id), ViolationKind::RdepDependentNotEbe(String::new()));
    }
    for d in dependents {
        match model.nodes.get(d) {
            None => ck.push(Some(id), ViolationKind::UnknownReference(d.clone())),
            Some(Node::Gate(_)) => ck.push(Some(id), ViolationKind::RdepDependentNotEbe(d.clone())),
            Some(Node::Ebe(_)) => {}
        }
    }
}

fn check_policy(ck: &mut Checker<'_>, p: &MaintenancePolicy) {
    for (name, v) in [("trep", p.t_rep), ("toh", p.t_oh), ("tinsp", p.t_insp)] {
        if v.is_nan() || v <= 0.0 {
            ck.push(None, ViolationKind::InvalidPolicy(format!("{name} must be > 0")));
        }
    }
    if p.timer_stages == 0 {
        ck.push(None, ViolationKind::InvalidPolicy("stages must be >= 1".into()));
    }
}

fn check_costs(ck: &mut Checker<'_>, c: &CostModel) {
    for (name, v) in [
        ("repair", c.cost_repair),
        ("replace", c.cost_replace),
        ("operational", c.cost_operational_per_day),
        ("failure", c.cost_failure_per_day),
    ] {
        if !(v.is_finite() && v >= 0.0) {
            ck.push(None, ViolationKind::InvalidCost(format!("{name} must be finite and >= 0")));
        }
    }
}

fn has_cycle(model: &FmtModel) -> bool {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Open,
        Done,
    }
    let mut marks: BTreeMap<&str, Mark> = BTreeMap::new();
    for start in model.nodes.keys() {
        if marks.contains_key(start.as_str()) {
            continue;
        }
        // iterative DFS with explicit exit markers
        let mut stack: Vec<(&str, bool)> = vec![(start.as_str(), false)];
        while let Some((id, exiting)) = stack.pop() {
            if exiting {
                marks.insert(id, Mark::Done);
                continue;
            }
            match marks.get(id) {
                Some(Mark::Done) => continue,
                Some(Mark::Open) => continue,
                None => {}
            }
            marks.insert(id, Mark::Open);
            stack.push((id, true));
            if let Some(node) = model.nodes.get(id) {
                for child in node.inputs() {
                    match marks.get(child.as_str()) {
                        Some(Mark::Open) => return true,
                        Some(Mark::Done) => {}
                        None => {
                            if model.nodes.contains_key(child) {
                                stack.push((child.as_str(), false));
                            }
                        }
                    }
                }
            }
        }
    }
    false
}

/// Non-fatal policy observations: inspection is expected at least as often
/// as repair, and repair at least as often as overhaul.
pub fn policy_warnings(policy: &MaintenancePolicy) -> Vec<String> {
    let mut out = Vec::new();
    if policy.t_insp > policy.t_rep {
        out.push(format!(
            "inspection interval {} d exceeds repair interval {} d",
            policy.t_insp, policy.t_rep
        ));
    }
    if policy.t_rep > policy.t_oh {
        out.push(format!(
            "repair interval {} d exceeds overhaul interval {} d",
            policy.t_rep, policy.t_oh
        ));
    }
    out
}

/// Vertex of the decomposition graph produced by [`to_dag`].
#[derive(Debug, Clone, PartialEq)]
pub struct DagNode {
    pub id: NodeId,
    pub node: Node,
    pub children: Vec<usize>,
    /// For RDEP trigger copies: index of the original event.
    pub duplicate_of: Option<usize>,
}

/// Tree-shaped view of a model in which every RDEP owns a private copy of
/// its trigger event.
#[derive(Debug, Clone, PartialEq)]
pub struct Dag {
    pub nodes: Vec<DagNode>,
    pub top: usize,
}

impl Dag {
    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn parents(&self) -> Vec<Vec<usize>> {
        let mut parents = vec![Vec::new(); self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            for &c in &n.children {
                parents[c].push(i);
            }
        }
        parents
    }

    /// Kahn topological order (parents before children); `None` on a cycle.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let n = self.nodes.len();
        let mut indeg = vec![0usize; n];
        for node in &self.nodes {
            for &c in &node.children {
                indeg[c] += 1;
            }
        }
        let mut queue: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(i) = queue.pop() {
            order.push(i);
            for &c in &self.nodes[i].children {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    queue.push(c);
                }
            }
        }
        (order.len() == n).then_some(order)
    }

    /// Original event id for a node, resolving trigger copies.
    pub fn original_id(&self, idx: usize) -> &str {
        match self.nodes[idx].duplicate_of {
            Some(o) => &self.nodes[o].id,
            None => &self.nodes[idx].id,
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("model is not valid: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
pub struct InvalidModel(pub Vec<Violation>);

/// Builds the decomposition graph: the OR tree plus, for each RDEP, a fresh
/// copy of its trigger wired directly to the RDEP vertex.
pub fn to_dag(model: &FmtModel) -> Result<Dag, InvalidModel> {
    let violations = validate(model);
    if !violations.is_empty() {
        return Err(InvalidModel(violations));
    }
    let mut nodes: Vec<DagNode> = model
        .nodes
        .values()
        .map(|n| DagNode {
            id: n.id().to_string(),
            node: n.clone(),
            children: Vec::new(),
            duplicate_of: None,
        })
        .collect();
    let index: BTreeMap<String, usize> = nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.id.clone(), i))
        .collect();

    let original_len = nodes.len();
    for i in 0..original_len {
        let node = nodes[i].node.clone();
        let Node::Gate(g) = node else { continue };
        match g.kind {
            GateKind::Or => {
                nodes[i].children = g.inputs.iter().map(|c| index[c]).collect();
            }
            GateKind::Rdep { .. } => {
                let trigger = index[&g.inputs[0]];
                let copy_id = unique_copy_id(&nodes, &nodes[trigger].id, &g.id);
                let mut copy = nodes[trigger].clone();
                copy.id = copy_id;
                copy.children.clear();
                copy.duplicate_of = Some(trigger);
                nodes.push(copy);
                let copy_idx = nodes.len() - 1;
                nodes[i].children = vec![copy_idx];
            }
        }
    }
    Ok(Dag {
        top: index[&model.top_event],
        nodes,
    })
}

fn unique_copy_id(nodes: &[DagNode], base: &str, rdep: &str) -> String {
    let mut candidate = format!("{base}'{rdep}");
    let mut k = 1;
    while nodes.iter().any(|n| n.id == candidate) {
        k += 1;
        candidate = format!("{base}'{rdep}{k}");
    }
    candidate
}

/// Structural checks on a decomposition graph: acyclic, a single non-RDEP
/// root, RDEPs fed by exactly one event, events are leaves.
pub fn validate_dag(dag: &Dag) -> Vec<String> {
    let mut out = Vec::new();
    if dag.topological_order().is_none() {
        out.push("graph contains a cycle".to_string());
    }
    let parents = dag.parents();
    let roots: Vec<&str> = dag
        .nodes
        .iter()
        .enumerate()
        .filter(|(i, n)| parents[*i].is_empty() && !matches!(&n.node, Node::Gate(g) if g.is_rdep()))
        .map(|(_, n)| n.id.as_str())
        .collect();
    if roots.len() != 1 || roots[0] != dag.nodes[dag.top].id {
        out.push(format!("expected exactly one top event, found {roots:?}"));
    }
    for (i, n) in dag.nodes.iter().enumerate() {
        match &n.node {
            Node::Ebe(_) => {
                if !n.children.is_empty() {
                    out.push(format!("{}: event is not a leaf", n.id));
                }
            }
            Node::Gate(g) if g.is_rdep() => {
                if n.children.len() != 1 || !matches!(dag.nodes[n.children[0]].node, Node::Ebe(_)) {
                    out.push(format!("{}: RDEP trigger must be EBE", n.id));
                }
            }
            Node::Gate(_) => {
                if n.children.is_empty() {
                    out.push(format!("{}: OR gate has no inputs", n.id));
                }
            }
        }
        if parents[i].len() > 1 {
            out.push(format!("{}: node has multiple parents", n.id));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ebe(id: &str) -> EbeSpec {
        EbeSpec::new(id, 3, 7300.0, 1.0, 7.0)
    }

    #[test]
    fn single_ebe_top_is_valid() {
        let m = FmtModel::new("a", MaintenancePolicy::disabled()).with_ebe(ebe("a"));
        assert!(validate(&m).is_empty());
    }

    #[test]
    fn two_roots_reported() {
        let m = FmtModel::new("a", MaintenancePolicy::disabled())
            .with_ebe(ebe("a"))
            .with_ebe(ebe("b"));
        let v = validate(&m);
        assert_eq!(v.len(), 1);
        assert!(matches!(v[0].kind, ViolationKind::MultipleTopEvents(_)));
        assert!(v[0].to_string().contains("multiple top events"));
    }

    #[test]
    fn rdep_on_gate_rejected() {
        let m = FmtModel::new("top", MaintenancePolicy::disabled())
            .with_gate(GateSpec::or("top", &["g", "c"]))
            .with_gate(GateSpec::or("g", &["a", "b"]))
            .with_gate(GateSpec::rdep("r", "g", &["c"], 2.0))
            .with_ebe(ebe("a"))
            .with_ebe(ebe("b"))
            .with_ebe(ebe("c"));
        let v = validate(&m);
        assert!(v.iter().any(|v| v.kind == ViolationKind::RdepTriggerNotEbe));
        assert!(v.iter().any(|v| v.to_string().contains("RDEP trigger must be EBE")));
    }

    #[test]
    fn cycle_detected() {
        let m = FmtModel::new("top", MaintenancePolicy::disabled())
            .with_gate(GateSpec::or("top", &["g"]))
            .with_gate(GateSpec::or("g", &["h"]))
            .with_gate(GateSpec::or("h", &["g"]));
        assert!(validate(&m).iter().any(|v| v.kind == ViolationKind::Cycle));
    }

    #[test]
    fn unknown_and_shared_inputs() {
        let m = FmtModel::new("top", MaintenancePolicy::disabled())
            .with_gate(GateSpec::or("top", &["g", "a", "zz"]))
            .with_gate(GateSpec::or("g", &["a"]))
            .with_ebe(ebe("a"));
        let v = validate(&m);
        assert!(v.iter().any(|v| v.kind == ViolationKind::UnknownReference("zz".into())));
        assert!(v.iter().any(|v| matches!(v.kind, ViolationKind::SharedNode(_))));
    }

    #[test]
    fn ebe_parameter_checks() {
        let mut bad = ebe("a");
        bad.levels = 0;
        bad.t_replace = bad.t_clean;
        let m = FmtModel::new("a", MaintenancePolicy::disabled()).with_ebe(bad);
        assert_eq!(validate(&m).len(), 2);
    }

    #[test]
    fn policy_ordering_is_only_a_warning() {
        let p = MaintenancePolicy {
            t_rep: 182.0,
            t_oh: 7300.0,
            t_insp: 730.0,
            timer_stages: 3,
        };
        let m = FmtModel::new("a", p.clone()).with_ebe(ebe("a"));
        assert!(validate(&m).is_empty());
        assert_eq!(policy_warnings(&p).len(), 1);
    }

    fn rdep_model() -> FmtModel {
        FmtModel::new("top", MaintenancePolicy::disabled())
            .with_gate(GateSpec::or("top", &["a", "b", "c"]))
            .with_gate(GateSpec::rdep("r1", "a", &["b"], 2.0))
            .with_gate(GateSpec::rdep("r2", "a", &["c"], 3.0))
            .with_ebe(ebe("a"))
            .with_ebe(ebe("b"))
            .with_ebe(ebe("c"))
    }

    #[test]
    fn to_dag_without_rdep_is_identity() {
        let m = FmtModel::new("top", MaintenancePolicy::disabled())
            .with_gate(GateSpec::or("top", &["a", "b"]))
            .with_ebe(ebe("a"))
            .with_ebe(ebe("b"));
        let dag = to_dag(&m).unwrap();
        assert_eq!(dag.nodes.len(), 3);
        assert!(dag.nodes.iter().all(|n| n.duplicate_of.is_none()));
        let top = &dag.nodes[dag.top];
        let kids: BTreeSet<&str> = top.children.iter().map(|&c| dag.nodes[c].id.as_str()).collect();
        assert_eq!(kids, BTreeSet::from(["a", "b"]));
    }

    #[test]
    fn shared_trigger_gets_one_copy_per_rdep() {
        let m = rdep_model();
        let dag = to_dag(&m).unwrap();
        assert_eq!(dag.nodes.len(), m.nodes.len() + 2);
        let a = dag.index_of("a").unwrap();
        for r in ["r1", "r2"] {
            let ri = dag.index_of(r).unwrap();
            let kids = &dag.nodes[ri].children;
            assert_eq!(kids.len(), 1);
            assert_eq!(dag.nodes[kids[0]].duplicate_of, Some(a));
            assert_eq!(dag.original_id(kids[0]), "a");
        }
        assert!(dag.topological_order().is_some());
        assert!(validate_dag(&dag).is_empty(), "{:?}", validate_dag(&dag));
    }

    #[test]
    fn to_dag_rejects_invalid() {
        let m = FmtModel::new("a", MaintenancePolicy::disabled())
            .with_ebe(ebe("a"))
            .with_ebe(ebe("b"));
        assert!(to_dag(&m).is_err());
    }
}
