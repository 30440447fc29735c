//! Parallel composition of the element CTMCs of an FMT into one chain.
//!
//! The product is explored on the fly from the initial state. A composite
//! state is the vector of local states, packed into a mixed-radix `u128`.
//! Guards are evaluated on the source state of each transition, so the
//! guarded synchronizations of the repair and inspection modules and the
//! RDEP rate acceleration are resolved during exploration.

use std::collections::{BTreeMap, HashMap};

use fixedbitset::FixedBitSet;

use super::elements::*;
use super::guards::EbeLabel;
use crate::ctmc::{Ctmc, CtmcBuilder, CtmcError, DEFAULT_MU, MOVE, TRIGGER};
use crate::error::{Error, Result};
use crate::model::{validate, CostModel, FmtModel, InvalidModel, NodeId};

pub const TOP_FAILED: &str = "top_failed";
pub const DEFAULT_BUDGET: usize = 2_000_000;

/// Treatment of the instantaneous start-up and maintenance-start actions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TriggerMode {
    /// Start every delay in its first stage and eliminate `trigger_clean`/
    /// `trigger_replace` as immediate transitions.
    Collapsed,
    /// Keep the start-up stage and fire the triggers at rate `mu`.
    Exact { mu: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompileOptions {
    pub trigger: TriggerMode,
    pub clean: CleanMode,
    /// Maximum number of composite states before giving up.
    pub budget: usize,
    /// Stop exploring at states where the top event has failed.
    pub absorbing_top: bool,
}

impl Default for CompileOptions {
    fn default() -> Self {
        Self {
            trigger: TriggerMode::Collapsed,
            clean: CleanMode::StepBack,
            budget: DEFAULT_BUDGET,
            absorbing_top: false,
        }
    }
}

/// One synchronized action: the participating elements, each either
/// required (blocks the action when it has no enabled transition) or
/// optional (stays put instead).
#[derive(Debug, Clone, PartialEq)]
pub struct SyncAction {
    pub action: String,
    pub participants: Vec<(usize, bool)>,
    pub immediate: bool,
}

/// Where an EBE lives in the element list.
#[derive(Debug, Clone, PartialEq)]
pub struct EbeSlot {
    pub id: NodeId,
    pub element: usize,
    pub delay: Option<usize>,
    pub levels: u32,
    pub maintained: bool,
    pub under_top: bool,
}

/// An RDEP acceleration acting on one degradation delay.
#[derive(Debug, Clone, PartialEq)]
pub struct Acceleration {
    pub delay_element: usize,
    pub trigger_slot: usize,
    pub gamma: f64,
}

/// The elements of a model and their synchronization table.
#[derive(Debug, Clone)]
pub struct ElementSystem {
    pub elements: Vec<ElementCtmc>,
    pub syncs: Vec<SyncAction>,
    pub ebes: Vec<EbeSlot>,
    pub accelerations: Vec<Acceleration>,
    /// Inspection timer element and its elapsed stage.
    pub inspection_timer: Option<(usize, usize)>,
    pub rm: Option<usize>,
}

/// Builds and wires the element CTMCs of `model`.
pub fn build_elements(model: &FmtModel, opts: &CompileOptions) -> Result<ElementSystem> {
    let violations = validate(model);
    if !violations.is_empty() {
        return Err(InvalidModel(violations).into());
    }
    let exact = matches!(opts.trigger, TriggerMode::Exact { .. });
    let mu = match opts.trigger {
        TriggerMode::Exact { mu } => mu,
        TriggerMode::Collapsed => DEFAULT_MU,
    };
    let mut leader_taken = false;
    let mut start_rate = || {
        if exact && !leader_taken {
            leader_taken = true;
            mu
        } else {
            1.0
        }
    };
    // periodic delays either keep d0 and trigger, or start in d1
    let periodic = |e: ElementCtmc| -> Result<ElementCtmc, CtmcError> {
        if exact {
            Ok(e)
        } else {
            e.retain_actions(|a| a != TRIGGER)?.starting_at(1)
        }
    };

    let top_events = model.events_below(&model.top_event);
    let policy = &model.policy;
    let mut elements = Vec::new();
    let mut ebes = Vec::new();
    for spec in model.ebes() {
        let degrade = degrade_action(&spec.id);
        let mut ebe = ebe_ctmc(spec)?;
        if !spec.maintained {
            ebe = ebe.retain_actions(|a| a != PERFORM_CLEAN && a != PERFORM_REPLACE)?;
        }
        if !spec.t_deg.is_finite() {
            ebe = ebe.retain_actions(|a| a != degrade)?;
        }
        elements.push(ebe);
        let element = elements.len() - 1;
        let delay = if spec.t_deg.is_finite() {
            let mut d = periodic(tdeg_ctmc(spec, opts.clean, start_rate())?)?;
            if !spec.maintained {
                d = d.retain_actions(|a| a != PERFORM_CLEAN && a != PERFORM_REPLACE)?;
            }
            elements.push(d);
            Some(elements.len() - 1)
        } else {
            None
        };
        ebes.push(EbeSlot {
            id: spec.id.clone(),
            element,
            delay,
            levels: spec.levels.max(1),
            maintained: spec.maintained,
            under_top: top_events.contains(&spec.id),
        });
    }

    let mut accelerations = Vec::new();
    for rdep in model.rdeps() {
        let crate::model::GateKind::Rdep { gamma, dependents } = &rdep.kind else {
            continue;
        };
        let trigger = rdep.trigger().expect("validated RDEP has a trigger");
        let trigger_slot = ebes.iter().position(|s| s.id == trigger).expect("validated trigger");
        for d in dependents {
            if let Some(delay_element) = ebes.iter().find(|s| &s.id == d).and_then(|s| s.delay) {
                accelerations.push(Acceleration {
                    delay_element,
                    trigger_slot,
                    gamma: *gamma,
                });
            }
        }
    }

    let stages = policy.timer_stages.max(1);
    let durations = model.maintenance_durations();
    let any_timer = policy.t_rep.is_finite() || policy.t_oh.is_finite() || policy.t_insp.is_finite();
    let mut syncs = Vec::new();
    let (mut rm, mut inspection_timer) = (None, None);
    if let (Some((t_clean, t_replace)), true) = (durations, any_timer) {
        let add = |elements: &mut Vec<ElementCtmc>, e: ElementCtmc| {
            elements.push(e);
            elements.len() - 1
        };
        let trp = if policy.t_rep.is_finite() {
            let e = periodic(timer_ctmc(Role::DelayTrp, policy.t_rep, stages, CHECK_CLEAN, start_rate())?)?;
            Some(add(&mut elements, e))
        } else {
            None
        };
        let toh = if policy.t_oh.is_finite() {
            let e = periodic(timer_ctmc(Role::DelayToh, policy.t_oh, stages, CHECK_REPLACE, start_rate())?)?;
            Some(add(&mut elements, e))
        } else {
            None
        };
        let tin = if policy.t_insp.is_finite() {
            let e = periodic(timer_ctmc(Role::DelayTin, policy.t_insp, stages, INSPECT, start_rate())?)?;
            Some(add(&mut elements, e))
        } else {
            None
        };
        let tcln = if trp.is_some() || tin.is_some() {
            let e = oneshot_ctmc(Role::DelayTcln, t_clean, stages, TRIGGER_CLEAN, PERFORM_CLEAN, mu)?;
            Some(add(&mut elements, e))
        } else {
            None
        };
        let trpl = if toh.is_some() {
            let e = oneshot_ctmc(Role::DelayTrpl, t_replace, stages, TRIGGER_REPLACE, PERFORM_REPLACE, mu)?;
            Some(add(&mut elements, e))
        } else {
            None
        };
        let rm_el = add(&mut elements, rm_ctmc(policy)?);
        let im = match tin {
            Some(_) => Some(add(&mut elements, im_ctmc(policy)?)),
            None => None,
        };
        rm = Some(rm_el);
        inspection_timer = tin.map(|t| (t, stages as usize + 1));

        let sync = |action: &str, participants: Vec<(usize, bool)>, immediate: bool| SyncAction {
            action: action.to_string(),
            participants,
            immediate,
        };
        if let Some(t) = trp {
            syncs.push(sync(CHECK_CLEAN, vec![(t, true), (rm_el, true)], false));
        }
        if let Some(t) = toh {
            syncs.push(sync(CHECK_REPLACE, vec![(t, true), (rm_el, true)], false));
        }
        if let (Some(t), Some(im)) = (tin, im) {
            syncs.push(sync(INSPECT, vec![(t, true), (rm_el, true), (im, true)], false));
        }
        for (delay, start, done) in [(tcln, TRIGGER_CLEAN, PERFORM_CLEAN), (trpl, TRIGGER_REPLACE, PERFORM_REPLACE)] {
            let Some(delay) = delay else { continue };
            syncs.push(sync(start, vec![(rm_el, true), (delay, true)], !exact));
            let mut parts = vec![(delay, true), (rm_el, true)];
            parts.extend(im.map(|i| (i, false)));
            for slot in ebes.iter().filter(|s| s.maintained) {
                parts.push((slot.element, false));
                parts.extend(slot.delay.map(|d| (d, false)));
            }
            syncs.push(sync(done, parts, false));
        }
    }
    for slot in &ebes {
        if let Some(d) = slot.delay {
            syncs.push(SyncAction {
                action: degrade_action(&slot.id),
                participants: vec![(slot.element, true), (d, true)],
                immediate: false,
            });
        }
    }
    if exact {
        let parts: Vec<(usize, bool)> = elements
            .iter()
            .enumerate()
            .filter(|(_, e)| e.ctmc.transitions().any(|(_, t)| e.ctmc.action_name(t.action) == TRIGGER))
            .map(|(i, _)| (i, true))
            .collect();
        if !parts.is_empty() {
            syncs.push(SyncAction {
                action: TRIGGER.to_string(),
                participants: parts,
                immediate: false,
            });
        }
    }
    // an element keeps only its local stage moves and the actions it is
    // wired to; anything else has no partner and must never fire
    for (i, e) in elements.iter_mut().enumerate() {
        let wired: Vec<&str> = syncs
            .iter()
            .filter(|s| s.participants.iter().any(|p| p.0 == i))
            .map(|s| s.action.as_str())
            .collect();
        if e.ctmc.actions().iter().any(|a| a != MOVE && !wired.contains(&a.as_str())) {
            *e = e.retain_actions(|a| a == MOVE || wired.contains(&a))?;
        }
    }
    Ok(ElementSystem {
        elements,
        syncs,
        ebes,
        accelerations,
        inspection_timer,
        rm,
    })
}

/// A state reward per state plus a transition reward per edge, in the
/// order of [`Ctmc::transitions`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RewardStructure {
    pub state: Vec<f64>,
    pub transition: Vec<f64>,
}

impl RewardStructure {
    /// Reward accrual rate per state: state reward plus the expected
    /// transition reward per unit time.
    pub fn rates(&self, c: &Ctmc) -> Vec<f64> {
        let mut out = if self.state.is_empty() {
            vec![0.0; c.num_states()]
        } else {
            self.state.clone()
        };
        if !self.transition.is_empty() {
            for ((s, e), r) in c.transitions().zip(&self.transition) {
                out[s] += e.rate * r;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rewards {
    pub availability: RewardStructure,
    pub cost: RewardStructure,
    pub failures: RewardStructure,
}

/// The composed chain of a model with its metric labels and rewards.
#[derive(Debug, Clone)]
pub struct CompiledModel {
    pub ctmc: Ctmc,
    pub rewards: Rewards,
    pub system: ElementSystem,
    codes: Vec<u128>,
    radices: Vec<u128>,
}

impl CompiledModel {
    pub fn num_states(&self) -> usize {
        self.ctmc.num_states()
    }

    pub fn top_failed(&self) -> &FixedBitSet {
        self.ctmc.states_with(TOP_FAILED).expect("compiled chains carry top_failed")
    }

    /// Local state of element `element` in composite state `state`.
    pub fn local_state(&self, state: usize, element: usize) -> usize {
        decode(self.codes[state], &self.radices)[element] as usize
    }

    /// Degradation level of every EBE in `state`, keyed by EBE id.
    pub fn ebe_levels(&self, state: usize) -> BTreeMap<NodeId, u32> {
        let local = decode(self.codes[state], &self.radices);
        self.system
            .ebes
            .iter()
            .map(|s| (s.id.clone(), local[s.element] as u32))
            .collect()
    }

    pub fn describe(&self, state: usize) -> String {
        let local = decode(self.codes[state], &self.radices);
        self.system
            .elements
            .iter()
            .zip(&local)
            .map(|(e, &l)| {
                let owner = if e.owner == "policy" { String::new() } else { format!(":{}", e.owner) };
                format!("{}{}={}", e.role.as_str(), owner, e.ctmc.state_name(l as usize))
            })
            .collect::<Vec<_>>()
            .join(",")
    }

    /// The chain with descriptive state names, for dumps.
    pub fn named_ctmc(&self) -> Ctmc {
        let names = (0..self.num_states()).map(|s| self.describe(s)).collect();
        self.ctmc.clone().with_state_names(names).expect("one name per state")
    }
}

#[derive(Clone, Copy)]
struct LocalEdge {
    action: u16,
    rate: f64,
    target: u16,
    guard: Guard,
    accelerated: bool,
}

#[derive(Clone, Copy)]
struct Signals {
    failed: u64,
    trig: bool,
    thresh: bool,
    inspection_due: bool,
    top_failed: bool,
}

struct Explorer<'a> {
    system: &'a ElementSystem,
    sync_of: Vec<Option<usize>>,
    sync_ids: Vec<u16>,
    local: Vec<Vec<Vec<LocalEdge>>>,
    accel: Vec<Vec<(usize, f64)>>,
    radices: Vec<u128>,
    top_mask: u64,
}

impl<'a> Explorer<'a> {
    fn new(system: &'a ElementSystem, actions: &[String]) -> Result<Self> {
        if system.ebes.len() > 64 {
            return Err(Error::EncodingOverflow);
        }
        let action_index: HashMap<&str, u16> = actions.iter().enumerate().map(|(i, a)| (a.as_str(), i as u16)).collect();
        let mut sync_of = vec![None; actions.len()];
        let mut sync_ids = Vec::new();
        for (k, s) in system.syncs.iter().enumerate() {
            let id = action_index[s.action.as_str()];
            sync_of[id as usize] = Some(k);
            sync_ids.push(id);
        }
        let mut local = Vec::new();
        let mut accel = vec![Vec::new(); system.elements.len()];
        for a in &system.accelerations {
            accel[a.delay_element].push((a.trigger_slot, a.gamma));
        }
        for e in &system.elements {
            let degrade = degrade_action(&e.owner);
            let mut per_state = vec![Vec::new(); e.ctmc.num_states()];
            for ((s, edge), g) in e.ctmc.transitions().zip(&e.guards) {
                let name = e.ctmc.action_name(edge.action);
                per_state[s].push(LocalEdge {
                    action: action_index[name],
                    rate: edge.rate,
                    target: edge.target as u16,
                    guard: *g,
                    accelerated: e.role == Role::DelayTdeg && name == degrade,
                });
            }
            local.push(per_state);
        }
        let mut radices = Vec::new();
        let mut span: u128 = 1;
        for e in &system.elements {
            let r = e.ctmc.num_states() as u128;
            span = span.checked_mul(r).ok_or(Error::EncodingOverflow)?;
            radices.push(r);
        }
        let top_mask = system
            .ebes
            .iter()
            .enumerate()
            .filter(|(_, s)| s.under_top)
            .fold(0u64, |m, (i, _)| m | (1 << i));
        Ok(Self {
            system,
            sync_of,
            sync_ids,
            local,
            accel,
            radices,
            top_mask,
        })
    }

    fn signals(&self, st: &[u16]) -> Signals {
        let mut sig = Signals {
            failed: 0,
            trig: false,
            thresh: false,
            inspection_due: false,
            top_failed: false,
        };
        for (i, slot) in self.system.ebes.iter().enumerate() {
            let label = EbeLabel::of_level(st[slot.element] as u32, slot.levels);
            if label == EbeLabel::Failed {
                sig.failed |= 1 << i;
            }
            if slot.maintained {
                sig.trig |= label != EbeLabel::New;
                sig.thresh |= label == EbeLabel::Thresh;
            }
        }
        sig.top_failed = sig.failed & self.top_mask != 0;
        if let Some((tin, elapsed)) = self.system.inspection_timer {
            sig.inspection_due = sig.thresh && st[tin] as usize == elapsed;
        }
        sig
    }

    fn factor(&self, element: usize, edge: &LocalEdge, sig: &Signals) -> f64 {
        if !edge.accelerated {
            return 1.0;
        }
        self.accel[element]
            .iter()
            .filter(|(slot, _)| sig.failed & (1 << slot) != 0)
            .map(|(_, g)| g)
            .product()
    }

    /// Enabled transitions of `st`: timed ones, or only immediate ones.
    fn successors(&self, st: &[u16], sig: &Signals, immediate: bool) -> Vec<(u16, f64, Vec<u16>)> {
        let mut out = Vec::new();
        let enabled = |e: &LocalEdge| e.guard.holds(sig.trig, sig.thresh, sig.inspection_due);
        if !immediate {
            for (i, edges) in self.local.iter().enumerate() {
                for e in edges[st[i] as usize].iter().filter(|e| self.sync_of[e.action as usize].is_none()) {
                    if enabled(e) {
                        let mut next = st.to_vec();
                        next[i] = e.target;
                        out.push((e.action, e.rate * self.factor(i, e, sig), next));
                    }
                }
            }
        }
        for (k, sync) in self.system.syncs.iter().enumerate() {
            if sync.immediate != immediate {
                continue;
            }
            let id = self.sync_ids[k];
            let mut combos: Vec<(f64, Vec<u16>)> = vec![(1.0, st.to_vec())];
            let mut blocked = false;
            for &(i, required) in &sync.participants {
                let options: Vec<&LocalEdge> = self.local[i][st[i] as usize]
                    .iter()
                    .filter(|e| e.action == id && enabled(e))
                    .collect();
                if options.is_empty() {
                    if required {
                        blocked = true;
                        break;
                    }
                    continue;
                }
                let mut next = Vec::with_capacity(combos.len() * options.len());
                for (rate, state) in &combos {
                    for e in &options {
                        let mut s = state.clone();
                        s[i] = e.target;
                        next.push((rate * e.rate * self.factor(i, e, sig), s));
                    }
                }
                combos = next;
            }
            if !blocked {
                out.extend(combos.into_iter().map(|(r, s)| (id, r, s)));
            }
        }
        out
    }

    /// Follows immediate transitions until only tangible states remain.
    fn settle(&self, st: Vec<u16>, depth: usize) -> Result<Vec<(Vec<u16>, f64)>> {
        let sig = self.signals(&st);
        let imm = self.successors(&st, &sig, true);
        if imm.is_empty() {
            return Ok(vec![(st, 1.0)]);
        }
        if depth > 64 {
            return Err(CtmcError::ImmediateCycle(0).into());
        }
        let total: f64 = imm.iter().map(|x| x.1).sum();
        let mut acc: Vec<(Vec<u16>, f64)> = Vec::new();
        for (_, r, next) in imm {
            for (s, p) in self.settle(next, depth + 1)? {
                match acc.iter_mut().find(|(x, _)| *x == s) {
                    Some(entry) => entry.1 += p * r / total,
                    None => acc.push((s, p * r / total)),
                }
            }
        }
        Ok(acc)
    }

    fn encode(&self, st: &[u16]) -> u128 {
        st.iter()
            .zip(&self.radices)
            .rev()
            .fold(0u128, |code, (&l, &r)| code * r + l as u128)
    }
}

fn decode(mut code: u128, radices: &[u128]) -> Vec<u16> {
    radices
        .iter()
        .map(|&r| {
            let l = (code % r) as u16;
            code /= r;
            l
        })
        .collect()
}

/// Composes the elements of `model` into a single labelled CTMC and
/// attaches the availability, cost and failure rewards.
pub fn compile(model: &FmtModel, cost: &CostModel, opts: &CompileOptions) -> Result<CompiledModel> {
    let system = build_elements(model, opts)?;
    let mut actions: Vec<String> = Vec::new();
    for e in &system.elements {
        for a in e.ctmc.actions() {
            if !actions.contains(a) {
                actions.push(a.clone());
            }
        }
    }
    let explorer = Explorer::new(&system, &actions)?;

    let init: Vec<u16> = system.elements.iter().map(|e| e.ctmc.initial() as u16).collect();
    let settled = explorer.settle(init, 0)?;
    if settled.len() != 1 {
        return Err(CtmcError::AmbiguousInitial.into());
    }
    let mut index: HashMap<u128, u32> = HashMap::new();
    let mut codes: Vec<u128> = Vec::new();
    let mut failed_flags: Vec<bool> = Vec::new();
    let mut in_maintenance: Vec<bool> = Vec::new();
    let mut transitions: Vec<(u32, u16, f64, u32)> = Vec::new();

    let intern = |st: &[u16], index: &mut HashMap<u128, u32>, codes: &mut Vec<u128>| -> Result<u32> {
        let code = explorer.encode(st);
        if let Some(&i) = index.get(&code) {
            return Ok(i);
        }
        if codes.len() >= opts.budget {
            return Err(Error::BudgetExceeded { limit: opts.budget });
        }
        codes.push(code);
        index.insert(code, codes.len() as u32 - 1);
        Ok(codes.len() as u32 - 1)
    };
    intern(&settled[0].0, &mut index, &mut codes)?;
    let mut cursor = 0;
    while cursor < codes.len() {
        let st = decode(codes[cursor], &explorer.radices);
        let sig = explorer.signals(&st);
        failed_flags.push(sig.top_failed);
        in_maintenance.push(system.rm.is_some_and(|rm| st[rm] != 0));
        if !(opts.absorbing_top && sig.top_failed) {
            for (a, r, next) in explorer.successors(&st, &sig, false) {
                for (s, p) in explorer.settle(next, 0)? {
                    let dst = intern(&s, &mut index, &mut codes)?;
                    transitions.push((cursor as u32, a, r * p, dst));
                }
            }
        }
        cursor += 1;
    }
    drop(index);

    let mut b = CtmcBuilder::anonymous(codes.len());
    for a in &actions {
        b.declare_action(a);
    }
    let top = b.declare_proposition(TOP_FAILED);
    let maint = b.declare_proposition(MAINTENANCE);
    for (s, (&f, &m)) in failed_flags.iter().zip(&in_maintenance).enumerate() {
        if f {
            b.label_id(s, top);
        }
        if m {
            b.label_id(s, maint);
        }
    }
    for (s, a, r, d) in transitions {
        b.transition_id(s as usize, a as u32, r, d as usize);
    }
    b.initial(0);
    let ctmc = b.build()?;
    let rewards = rewards(&ctmc, &failed_flags, cost);
    let radices = explorer.radices;
    Ok(CompiledModel {
        ctmc,
        rewards,
        system,
        codes,
        radices,
    })
}

fn rewards(c: &Ctmc, failed: &[bool], cost: &CostModel) -> Rewards {
    let clean = c.action_id(PERFORM_CLEAN);
    let replace = c.action_id(PERFORM_REPLACE);
    let mut cost_t = Vec::with_capacity(c.num_transitions());
    let mut fail_t = Vec::with_capacity(c.num_transitions());
    for (s, e) in c.transitions() {
        cost_t.push(if Some(e.action) == clean {
            cost.cost_repair
        } else if Some(e.action) == replace {
            cost.cost_replace
        } else {
            0.0
        });
        fail_t.push(if !failed[s] && failed[e.target as usize] { 1.0 } else { 0.0 });
    }
    Rewards {
        availability: RewardStructure {
            state: failed.iter().map(|&f| if f { 0.0 } else { 1.0 }).collect(),
            transition: Vec::new(),
        },
        cost: RewardStructure {
            state: failed
                .iter()
                .map(|&f| cost.cost_operational_per_day + if f { cost.cost_failure_per_day } else { 0.0 })
                .collect(),
            transition: cost_t,
        },
        failures: RewardStructure {
            state: Vec::new(),
            transition: fail_t,
        },
    }
}
