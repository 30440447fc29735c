//! Guard signals evaluated on a composite state: RDEP activation and
//! acceleration, OR failure, and the `thresh`/`trig` maintenance signals.

use std::collections::{BTreeMap, BTreeSet};

use crate::model::{FmtModel, GateKind, GateSpec, Node, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EbeLabel {
    New,
    Thresh,
    Failed,
}

impl EbeLabel {
    /// Label of level `level` of an EBE with `levels` degradation levels.
    pub fn of_level(level: u32, levels: u32) -> Self {
        if level == 0 {
            EbeLabel::New
        } else if level >= levels {
            EbeLabel::Failed
        } else {
            EbeLabel::Thresh
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EbeLabel::New => "new",
            EbeLabel::Thresh => "thresh",
            EbeLabel::Failed => "failed",
        }
    }
}

/// Current label of every EBE. Events marked unmonitored (abstracted
/// sub-trees) count for failure propagation but raise no maintenance signal.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GuardContext {
    labels: BTreeMap<NodeId, EbeLabel>,
    unmonitored: BTreeSet<NodeId>,
}

impl GuardContext {
    pub fn new() -> Self {
        Self::default()
    }

    /// Every EBE of `model` in its new state.
    pub fn all_new(model: &FmtModel) -> Self {
        let mut ctx = Self::new();
        for e in model.ebes() {
            ctx.labels.insert(e.id.clone(), EbeLabel::New);
            if !e.maintained {
                ctx.unmonitored.insert(e.id.clone());
            }
        }
        ctx
    }

    pub fn with(mut self, id: &str, label: EbeLabel) -> Self {
        self.set(id, label);
        self
    }

    pub fn set(&mut self, id: &str, label: EbeLabel) {
        self.labels.insert(id.to_string(), label);
    }

    pub fn unmonitor(&mut self, id: &str) {
        self.unmonitored.insert(id.to_string());
    }

    pub fn label(&self, id: &str) -> EbeLabel {
        self.labels.get(id).copied().unwrap_or(EbeLabel::New)
    }

    fn monitored(&self) -> impl Iterator<Item = EbeLabel> + '_ {
        self.labels
            .iter()
            .filter(|(id, _)| !self.unmonitored.contains(*id))
            .map(|(_, l)| *l)
    }
}

/// 1 iff the RDEP's trigger event is failed.
pub fn guard_in(ctx: &GuardContext, rdep: &GateSpec) -> bool {
    rdep.trigger().is_some_and(|t| ctx.label(t) == EbeLabel::Failed)
}

/// Effective degradation delay of each dependent: `T_deg / gamma` while the
/// trigger is failed, `T_deg` otherwise.
pub fn guard_accel(ctx: &GuardContext, rdep: &GateSpec, model: &FmtModel) -> Vec<(NodeId, f64)> {
    let GateKind::Rdep { gamma, dependents } = &rdep.kind else {
        return Vec::new();
    };
    let factor = if guard_in(ctx, rdep) { *gamma } else { 1.0 };
    dependents
        .iter()
        .filter_map(|d| model.ebe(d).map(|e| (d.clone(), e.t_deg / factor)))
        .collect()
}

/// Failure of an OR gate: any input failed, gates evaluated recursively.
pub fn guard_fail(ctx: &GuardContext, model: &FmtModel, gate: &GateSpec) -> bool {
    match gate.kind {
        GateKind::Or => gate.inputs.iter().any(|i| node_failed(ctx, model, i)),
        GateKind::Rdep { .. } => false,
    }
}

/// Failure status of any node. RDEP gates have no failure output.
pub fn node_failed(ctx: &GuardContext, model: &FmtModel, id: &str) -> bool {
    match model.node(id) {
        Some(Node::Ebe(_)) => ctx.label(id) == EbeLabel::Failed,
        Some(Node::Gate(g)) => guard_fail(ctx, model, g),
        None => false,
    }
}

/// 1 iff some monitored EBE is past new but not failed.
pub fn guard_thresh(ctx: &GuardContext) -> bool {
    ctx.monitored().any(|l| l == EbeLabel::Thresh)
}

/// 1 iff some monitored EBE is not new.
pub fn guard_trig(ctx: &GuardContext) -> bool {
    ctx.monitored().any(|l| l != EbeLabel::New)
}
