//! Export of the element system as a PRISM-language CTMC with the four
//! metric properties. The exported model keeps the start-up stage (exact
//! trigger mode) since PRISM has no immediate transitions.

use std::fmt::Write as _;

use super::compile::{build_elements, CompileOptions, ElementSystem, TriggerMode};
use super::elements::{Guard, Role, PERFORM_CLEAN, PERFORM_REPLACE};
use crate::ctmc::DEFAULT_MU;
use crate::error::Result;
use crate::model::{CostModel, FmtModel};

/// PRISM model text and properties text.
pub fn export_prism(model: &FmtModel, cost: &CostModel) -> Result<(String, String)> {
    let opts = CompileOptions {
        trigger: TriggerMode::Exact { mu: DEFAULT_MU },
        ..CompileOptions::default()
    };
    let system = build_elements(model, &opts)?;
    Ok((model_text(model, &system, cost), properties_text()))
}

fn var_name(system: &ElementSystem, i: usize) -> String {
    let e = &system.elements[i];
    match e.role {
        Role::Ebe | Role::DelayTdeg => format!("{}_{}", e.role.as_str(), e.owner),
        _ => e.role.as_str().to_string(),
    }
}

fn guard_expr(g: Guard) -> &'static str {
    match g {
        Guard::Always => "true",
        Guard::Trig(true) => "trig",
        Guard::Trig(false) => "!trig",
        Guard::Thresh(true) => "thresh",
        Guard::Thresh(false) => "!thresh",
        Guard::TrigNoInspection => "trig & !inspection_due",
    }
}

fn disjunction(terms: &[String]) -> String {
    if terms.is_empty() {
        "false".to_string()
    } else {
        terms.join(" | ")
    }
}

fn model_text(model: &FmtModel, system: &ElementSystem, cost: &CostModel) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "// fault maintenance tree `{}`", model.top_event);
    out.push_str("ctmc\n\n");

    let level = |slot: &super::compile::EbeSlot| var_name(system, slot.element);
    let monitored: Vec<_> = system.ebes.iter().filter(|s| s.maintained).collect();
    let trig: Vec<String> = monitored.iter().map(|s| format!("{}>0", level(s))).collect();
    let thresh: Vec<String> = monitored
        .iter()
        .map(|s| format!("({v}>0 & {v}<{n})", v = level(s), n = s.levels))
        .collect();
    let failed: Vec<String> = system
        .ebes
        .iter()
        .filter(|s| s.under_top)
        .map(|s| format!("{}={}", level(s), s.levels))
        .collect();
    let _ = writeln!(out, "formula trig = {};", disjunction(&trig));
    let _ = writeln!(out, "formula thresh = {};", disjunction(&thresh));
    match system.inspection_timer {
        Some((tin, elapsed)) => {
            let _ = writeln!(out, "formula inspection_due = thresh & {}={};", var_name(system, tin), elapsed);
        }
        None => out.push_str("formula inspection_due = false;\n"),
    }
    let _ = writeln!(out, "formula top_failed = {};", disjunction(&failed));
    for (i, _) in system.elements.iter().enumerate() {
        let factors: Vec<String> = system
            .accelerations
            .iter()
            .filter(|a| a.delay_element == i)
            .map(|a| {
                let s = &system.ebes[a.trigger_slot];
                format!("({}={} ? {:?} : 1)", level(s), s.levels, a.gamma)
            })
            .collect();
        if !factors.is_empty() {
            let _ = writeln!(out, "formula accel_{} = {};", var_name(system, i), factors.join(" * "));
        }
    }
    out.push('\n');

    for (i, e) in system.elements.iter().enumerate() {
        let var = var_name(system, i);
        let accelerated = system.accelerations.iter().any(|a| a.delay_element == i);
        let _ = writeln!(out, "module {var}_module");
        let _ = writeln!(out, "  {var} : [0..{}] init {};", e.ctmc.num_states() - 1, e.ctmc.initial());
        for ((s, edge), g) in e.ctmc.transitions().zip(&e.guards) {
            let action = e.ctmc.action_name(edge.action);
            let synced = system.syncs.iter().any(|x| x.action == action);
            let label = if synced { action } else { "" };
            let guard = match g {
                Guard::Always => String::new(),
                g => format!(" & {}", guard_expr(*g)),
            };
            let rate = if accelerated && action.starts_with("degrade_") {
                format!("{:?} * accel_{var}", edge.rate)
            } else {
                format!("{:?}", edge.rate)
            };
            let _ = writeln!(out, "  [{label}] {var}={s}{guard} -> {rate} : ({var}'={});", edge.target);
        }
        // optional participants stay put when they have nothing to do
        for sync in &system.syncs {
            if !sync.participants.iter().any(|&(p, req)| p == i && !req) {
                continue;
            }
            for s in 0..e.ctmc.num_states() {
                let enabled: Vec<String> = e
                    .ctmc
                    .transitions()
                    .zip(&e.guards)
                    .filter(|((src, edge), _)| *src == s && e.ctmc.action_name(edge.action) == sync.action)
                    .map(|(_, g)| format!("({})", guard_expr(*g)))
                    .collect();
                let guard = if enabled.is_empty() {
                    String::new()
                } else {
                    format!(" & !({})", enabled.join(" | "))
                };
                let _ = writeln!(out, "  [{}] {var}={s}{guard} -> 1 : true;", sync.action);
            }
        }
        out.push_str("endmodule\n\n");
    }

    out.push_str("label \"top_failed\" = top_failed;\n\n");
    out.push_str("rewards \"availability\"\n  !top_failed : 1;\nendrewards\n\n");
    out.push_str("rewards \"cost\"\n");
    let _ = writeln!(out, "  true : {:?};", cost.cost_operational_per_day);
    let _ = writeln!(out, "  top_failed : {:?};", cost.cost_failure_per_day);
    let _ = writeln!(out, "  [{PERFORM_CLEAN}] true : {:?};", cost.cost_repair);
    let _ = writeln!(out, "  [{PERFORM_REPLACE}] true : {:?};", cost.cost_replace);
    out.push_str("endrewards\n\n");
    out.push_str("rewards \"failures\"\n");
    for s in system.ebes.iter().filter(|s| s.under_top && s.delay.is_some()) {
        let _ = writeln!(out, "  [degrade_{}] !top_failed & {}={} : 1;", s.id, level(s), s.levels - 1);
    }
    out.push_str("endrewards\n");
    out
}

fn properties_text() -> String {
    [
        "const double T;",
        "",
        "// reliability is one minus this probability",
        "P=? [ F<=T \"top_failed\" ]",
        "// availability: divide by T",
        "R{\"availability\"}=? [ C<=T ]",
        "R{\"cost\"}=? [ C<=T ]",
        "R{\"failures\"}=? [ C<=T ]",
        "",
    ]
    .join("\n")
}
