//! CTMCs of the individual FMT elements: EBEs, their degradation delays,
//! the maintenance timers, and the repair and inspection modules.

use std::collections::{BTreeSet, HashMap};

use crate::ctmc::{delay_module, delay_module_ext, Ctmc, CtmcBuilder, CtmcError, DelaySpec, MOVE, TRIGGER};
use crate::model::{EbeSpec, MaintenancePolicy};

pub const CHECK_CLEAN: &str = "check_clean";
pub const CHECK_REPLACE: &str = "check_replace";
pub const INSPECT: &str = "inspect";
pub const TRIGGER_CLEAN: &str = "trigger_clean";
pub const TRIGGER_REPLACE: &str = "trigger_replace";
pub const PERFORM_CLEAN: &str = "perform_clean";
pub const PERFORM_REPLACE: &str = "perform_replace";
pub const MAINTENANCE: &str = "maintenance";

pub fn degrade_action(ebe: &str) -> String {
    format!("degrade_{ebe}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    Ebe,
    Rm,
    Im,
    DelayTdeg,
    DelayTcln,
    DelayTrpl,
    DelayTrp,
    DelayToh,
    DelayTin,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Ebe => "ebe",
            Role::Rm => "rm",
            Role::Im => "im",
            Role::DelayTdeg => "tdeg",
            Role::DelayTcln => "tcln",
            Role::DelayTrpl => "trpl",
            Role::DelayTrp => "trp",
            Role::DelayToh => "toh",
            Role::DelayTin => "tin",
        }
    }
}

/// Condition on the global maintenance signals under which a transition
/// may take part in a synchronization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Guard {
    Always,
    Trig(bool),
    Thresh(bool),
    /// `trig = 1` and no inspection-initiated repair pending.
    TrigNoInspection,
}

impl Guard {
    pub fn holds(self, trig: bool, thresh: bool, inspection_due: bool) -> bool {
        match self {
            Guard::Always => true,
            Guard::Trig(v) => trig == v,
            Guard::Thresh(v) => thresh == v,
            Guard::TrigNoInspection => trig && !inspection_due,
        }
    }
}

/// How the degradation delay reacts to a cleaning that moves its EBE back
/// one level.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum CleanMode {
    /// Step the delay back one stage as well, keeping it in lockstep.
    #[default]
    StepBack,
    /// Restart the delay at its first stage.
    Restart,
}

/// An element CTMC plus the guard of each of its transitions, in the order
/// of [`Ctmc::transitions`].
#[derive(Debug, Clone)]
pub struct ElementCtmc {
    pub ctmc: Ctmc,
    pub role: Role,
    pub owner: String,
    pub guards: Vec<Guard>,
}

impl ElementCtmc {
    fn new(ctmc: Ctmc, role: Role, owner: &str, guards: &HashMap<(usize, String, usize), Guard>) -> Self {
        let guards = ctmc
            .transitions()
            .map(|(s, e)| {
                let key = (s, ctmc.action_name(e.action).to_string(), e.target as usize);
                guards.get(&key).copied().unwrap_or(Guard::Always)
            })
            .collect();
        Self {
            ctmc,
            role,
            owner: owner.to_string(),
            guards,
        }
    }

    fn unguarded(ctmc: Ctmc, role: Role, owner: &str) -> Self {
        Self::new(ctmc, role, owner, &HashMap::new())
    }

    /// Drops every transition whose action fails `keep`.
    pub fn retain_actions(&self, keep: impl Fn(&str) -> bool) -> Result<Self, CtmcError> {
        let mut guards = HashMap::new();
        for ((s, e), g) in self.ctmc.transitions().zip(&self.guards) {
            guards.insert((s, self.ctmc.action_name(e.action).to_string(), e.target as usize), *g);
        }
        let mut b = self.ctmc.to_builder();
        b.map_transitions(|_, a, r, d| keep(a).then(|| (a.to_string(), r, d)));
        Ok(Self::new(b.build()?, self.role, &self.owner, &guards))
    }

    /// Moves the initial state, e.g. to skip the start-up stage of a delay.
    pub fn starting_at(mut self, state: usize) -> Result<Self, CtmcError> {
        self.ctmc = self.ctmc.with_initial(state)?;
        Ok(self)
    }
}

/// EBE chain `s0 .. sN`: `degrade` moves one level up, `perform_clean` one
/// level down, `perform_replace` back to `s0`. All rates are 1; the
/// partner delays carry the real rates.
pub fn ebe_ctmc(spec: &EbeSpec) -> Result<ElementCtmc, CtmcError> {
    let n = spec.levels.max(1) as usize;
    let degrade = degrade_action(&spec.id);
    let mut b = CtmcBuilder::new();
    for j in 0..=n {
        b.add_state(format!("s{j}"));
    }
    b.declare_action(&degrade);
    b.declare_action(PERFORM_CLEAN);
    b.declare_action(PERFORM_REPLACE);
    for j in 0..n {
        b.transition(j, &degrade, 1.0, j + 1);
    }
    for j in 1..=n {
        b.transition(j, PERFORM_CLEAN, 1.0, j - 1);
        b.transition(j, PERFORM_REPLACE, 1.0, 0);
    }
    b.label(0, "new");
    for j in 1..n {
        b.label(j, "thresh");
    }
    b.label(n, "failed");
    Ok(ElementCtmc::unguarded(b.build()?, Role::Ebe, &spec.id))
}

/// Extended degradation delay of an EBE: an `Erlang(N, N/T_deg)` chain
/// whose steps are all `degrade_<id>`, reset to `d1` by `perform_replace`
/// and moved back by `perform_clean` according to `clean`.
pub fn tdeg_ctmc(spec: &EbeSpec, clean: CleanMode, mu: f64) -> Result<ElementCtmc, CtmcError> {
    let delay = DelaySpec {
        t: spec.t_deg,
        stages: spec.levels.max(1),
        extended: true,
        mu,
    };
    let n = delay.stages as usize;
    let degrade = degrade_action(&spec.id);
    let resets: BTreeSet<String> = [PERFORM_REPLACE.to_string()].into();
    let mut b = delay_module_ext(&delay, &resets)?.to_builder();
    b.map_transitions(|_, a, r, d| Some((if a == MOVE { degrade.clone() } else { a.to_string() }, r, d)));
    for i in 2..=n + 1 {
        let back = match clean {
            CleanMode::StepBack => i - 1,
            CleanMode::Restart => 1,
        };
        b.transition(i, PERFORM_CLEAN, 1.0, back);
    }
    Ok(ElementCtmc::unguarded(b.build()?, Role::DelayTdeg, &spec.id))
}

/// Periodic timer: internal stages interleave as `move`; the wrap-around
/// from the elapsed stage is labelled `action`.
pub fn timer_ctmc(role: Role, t: f64, stages: u32, action: &str, mu: f64) -> Result<ElementCtmc, CtmcError> {
    let delay = DelaySpec {
        mu,
        ..DelaySpec::new(t, stages)
    };
    let last = delay.stages.max(1) as usize + 1;
    let mut b = delay_module(&delay)?.to_builder();
    b.map_transitions(|s, a, r, d| {
        let a = if s == last && a == MOVE { action } else { a };
        Some((a.to_string(), r, d))
    });
    Ok(ElementCtmc::unguarded(b.build()?, role, "policy"))
}

/// One-shot delay for a maintenance action: `start` leaves `d0`, the
/// elapsed stage completes with `done` and returns to `d0`.
pub fn oneshot_ctmc(role: Role, t: f64, stages: u32, start: &str, done: &str, mu: f64) -> Result<ElementCtmc, CtmcError> {
    let delay = DelaySpec {
        mu,
        ..DelaySpec::new(t, stages)
    };
    let last = delay.stages.max(1) as usize + 1;
    let mut b = delay_module(&delay)?.to_builder();
    b.map_transitions(|s, a, r, d| {
        if a == TRIGGER {
            Some((start.to_string(), r, d))
        } else if s == last {
            Some((done.to_string(), r, 0))
        } else {
            Some((a.to_string(), r, d))
        }
    });
    Ok(ElementCtmc::unguarded(b.build()?, role, "policy"))
}

/// Repair module. `rm1_clean` and `rm1_replace` remember which action was
/// requested; both carry the `maintenance` label. Transitions driven by a
/// disabled timer are left out.
pub fn rm_ctmc(policy: &MaintenancePolicy) -> Result<ElementCtmc, CtmcError> {
    let mut b = CtmcBuilder::new();
    let idle = b.add_state("rm0");
    let clean = b.add_state("rm1_clean");
    let replace = b.add_state("rm1_replace");
    b.label(clean, MAINTENANCE).label(replace, MAINTENANCE);
    let mut guards = HashMap::new();
    let mut add = |b: &mut CtmcBuilder, s: usize, a: &str, d: usize, g: Guard| {
        b.transition(s, a, 1.0, d);
        guards.insert((s, a.to_string(), d), g);
    };
    let cleans = policy.t_rep.is_finite() || policy.t_insp.is_finite();
    if policy.t_rep.is_finite() {
        add(&mut b, idle, CHECK_CLEAN, idle, Guard::Trig(false));
        add(&mut b, idle, CHECK_CLEAN, clean, Guard::TrigNoInspection);
    }
    if policy.t_oh.is_finite() {
        add(&mut b, idle, CHECK_REPLACE, idle, Guard::Trig(false));
        add(&mut b, idle, CHECK_REPLACE, replace, Guard::TrigNoInspection);
        add(&mut b, replace, TRIGGER_REPLACE, replace, Guard::Always);
        add(&mut b, replace, PERFORM_REPLACE, idle, Guard::Always);
    }
    if policy.t_insp.is_finite() {
        add(&mut b, idle, INSPECT, idle, Guard::Thresh(false));
        add(&mut b, idle, INSPECT, clean, Guard::Thresh(true));
    }
    if cleans {
        add(&mut b, clean, TRIGGER_CLEAN, clean, Guard::Always);
        add(&mut b, clean, PERFORM_CLEAN, idle, Guard::Always);
    }
    Ok(ElementCtmc::new(b.build()?, Role::Rm, "policy", &guards))
}

/// Inspection module: `inspect` with `thresh = 1` moves to `im1`, which the
/// completion of either maintenance action resets.
pub fn im_ctmc(policy: &MaintenancePolicy) -> Result<ElementCtmc, CtmcError> {
    let mut b = CtmcBuilder::new();
    let idle = b.add_state("im0");
    let busy = b.add_state("im1");
    let mut guards = HashMap::new();
    if policy.t_insp.is_finite() {
        b.transition(idle, INSPECT, 1.0, idle).transition(idle, INSPECT, 1.0, busy);
        guards.insert((idle, INSPECT.to_string(), idle), Guard::Thresh(false));
        guards.insert((idle, INSPECT.to_string(), busy), Guard::Thresh(true));
    }
    b.transition(busy, PERFORM_CLEAN, 1.0, idle);
    b.transition(busy, PERFORM_REPLACE, 1.0, idle);
    Ok(ElementCtmc::new(b.build()?, Role::Im, "policy", &guards))
}
