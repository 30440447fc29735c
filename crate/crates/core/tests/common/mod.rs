#![allow(dead_code)]

use faultmaint::model::{EbeSpec, FmtModel, GateSpec, MaintenancePolicy};
use faultmaint::{Ctmc, CtmcBuilder};
use rand::seq::SliceRandom;
use rand::Rng;

pub const ACTIONS: [&str; 3] = ["a0", "a1", "a2"];

/// Random OR tree over `events` EBEs, optionally with one RDEP.
pub fn random_model(rng: &mut impl Rng, events: usize, policy: MaintenancePolicy, rdep: bool) -> FmtModel {
    let mut open: Vec<String> = (0..events).map(|i| format!("e{i}")).collect();
    let mut m = FmtModel::new("placeholder", policy);
    for id in &open {
        let spec = EbeSpec {
            maintained: rng.gen_bool(0.85),
            ..EbeSpec::new(
                id.as_str(),
                rng.gen_range(1..=4),
                rng.gen_range(50.0..2000.0f64).round(),
                1.0,
                rng.gen_range(2..=10) as f64,
            )
        };
        m.insert(faultmaint::Node::Ebe(spec));
    }
    let mut gates = 0;
    loop {
        open.shuffle(rng);
        let k = if open.len() == 1 { 1 } else { rng.gen_range(2..=open.len().min(3)) };
        let inputs: Vec<String> = open.drain(..k).collect();
        let id = format!("g{gates}");
        gates += 1;
        let refs: Vec<&str> = inputs.iter().map(String::as_str).collect();
        m.insert(faultmaint::Node::Gate(GateSpec::or(id.as_str(), &refs)));
        if open.is_empty() {
            m.top_event = id;
            break;
        }
        open.push(id);
    }
    if rdep && events >= 2 {
        let t = rng.gen_range(0..events);
        let d = (t + rng.gen_range(1..events)) % events;
        let gamma = rng.gen_range(1.0..4.0f64);
        m.insert(faultmaint::Node::Gate(GateSpec::rdep(
            "r0",
            &format!("e{t}"),
            &[&format!("e{d}")],
            (gamma * 4.0).round() / 4.0,
        )));
    }
    m
}

/// Random chain on `n` states over [`ACTIONS`], every state reachable.
pub fn random_chain(rng: &mut impl Rng, n: usize, density: f64) -> Ctmc {
    let mut b = CtmcBuilder::new();
    for i in 0..n {
        b.add_state(format!("x{i}"));
    }
    for a in ACTIONS {
        b.declare_action(a);
    }
    for s in 1..n {
        // spanning edge so the chain is connected from state 0
        let src = rng.gen_range(0..s);
        b.transition(src, ACTIONS[rng.gen_range(0..3)], rng.gen_range(0.1..5.0), s);
    }
    for s in 0..n {
        for d in 0..n {
            if s != d && rng.gen_bool(density) {
                b.transition(s, ACTIONS[rng.gen_range(0..3)], rng.gen_range(0.1..5.0), d);
            }
        }
    }
    b.initial(0);
    b.build().expect("valid random chain")
}
