mod common;

use std::collections::BTreeSet;

use faultmaint::analysis::{compute_metric_many, AnalysisOptions};
use faultmaint::model::{to_dag, Dag, EbeSpec, GateSpec, MaintenancePolicy, Node};
use faultmaint::*;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

/// Linear-time module detection by first/last visit dates: a gate roots a
/// module iff every descendant is first reached after the gate's first
/// visit and last reached before its second visit.
fn visit_date_modules(dag: &Dag) -> BTreeSet<String> {
    let n = dag.nodes.len();
    let (mut first, mut second, mut last) = (vec![0usize; n], vec![0usize; n], vec![0usize; n]);
    fn walk(dag: &Dag, v: usize, date: &mut usize, first: &mut [usize], second: &mut [usize], last: &mut [usize]) {
        *date += 1;
        if first[v] == 0 {
            first[v] = *date;
            for &c in &dag.nodes[v].children {
                walk(dag, c, date, first, second, last);
            }
            *date += 1;
            second[v] = *date;
        }
        last[v] = *date;
    }
    let mut date = 0;
    walk(dag, dag.top, &mut date, &mut first, &mut second, &mut last);
    let mut modules = BTreeSet::new();
    for v in 0..n {
        if dag.nodes[v].children.is_empty() || first[v] == 0 {
            continue;
        }
        let mut stack = dag.nodes[v].children.clone();
        let (mut lo, mut hi) = (usize::MAX, 0);
        while let Some(d) = stack.pop() {
            lo = lo.min(first[d]);
            hi = hi.max(last[d]);
            stack.extend(&dag.nodes[d].children);
        }
        if first[v] < lo && hi < second[v] {
            modules.insert(dag.nodes[v].id.clone());
        }
    }
    modules
}

fn events_under(m: &FmtModel, id: &str) -> usize {
    m.events_below(id).len()
}

#[test]
fn split_points_match_visit_date_modules() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(3);
    for _ in 0..200 {
        let events = rng.gen_range(1..12);
        let m = common::random_model(&mut rng, events, MaintenancePolicy::disabled(), false);
        let dag = to_dag(&m).unwrap();
        let parent_of = |id: &str| m.gates().find(|g| g.inputs.iter().any(|i| i == id)).map(|g| g.id.clone());
        // keep proper modules with two or more events, outermost of a pass-through chain
        let expected: BTreeSet<String> = visit_date_modules(&dag)
            .into_iter()
            .filter(|id| *id != m.top_event && events_under(&m, id) >= 2)
            .filter(|id| parent_of(id).is_some_and(|p| events_under(&m, &p) > events_under(&m, id)))
            .collect();
        let d = decompose(&dag);
        let got: BTreeSet<String> = d.subgraphs.iter().map(|s| s.top.clone()).filter(|t| *t != m.top_event).collect();
        assert_eq!(got, expected, "{}", serialize(&m));
    }
}

fn two_module(rng: &mut impl Rng) -> FmtModel {
    let policy = MaintenancePolicy {
        t_rep: 180.0,
        t_oh: f64::INFINITY,
        t_insp: 30.0,
        timer_stages: 1,
    };
    let mut m = FmtModel::new("top", policy)
        .with_gate(GateSpec::or("top", &["a", "b", "sub"]))
        .with_gate(GateSpec::or("sub", &["c", "d"]));
    for id in ["a", "b", "c", "d"] {
        let t = rng.gen_range(400.0..2000.0f64).round();
        m.insert(Node::Ebe(EbeSpec::new(id, rng.gen_range(1..=3), t, 1.0, 3.0)));
    }
    m
}

#[test]
fn abstraction_stays_close_on_random_two_module_trees() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(17);
    for _ in 0..4 {
        let m = two_module(&mut rng);
        let max_t = m.ebes().map(|e| e.t_deg).fold(0.0, f64::max);
        let horizons = [0.25 * max_t, 0.5 * max_t, 0.75 * max_t];
        let rows = compare(&m, Metric::Reliability, &horizons, &m.costs, &DecompositionOptions::default()).unwrap();
        for r in &rows {
            assert!(r.deviation <= 0.05, "{r:?}");
            assert!(r.abstract_states < r.original_states);
        }
    }
}

#[test]
fn single_subgraph_is_plain_analysis() {
    let m = FmtModel::new("top", MaintenancePolicy::disabled())
        .with_gate(GateSpec::or("top", &["a", "b"]))
        .with_ebe(EbeSpec::new("a", 2, 100.0, 1.0, 2.0))
        .with_ebe(EbeSpec::new("b", 3, 300.0, 1.0, 2.0));
    let hs = [0.0, 50.0, 200.0];
    for metric in Metric::ALL {
        let plain = compute_metric_many(&m, metric, &hs, &m.costs, &AnalysisOptions::default()).unwrap();
        let abs = abstract_analyze(&m, metric, &hs, &m.costs, &DecompositionOptions::default()).unwrap();
        for (p, a) in plain.iter().zip(&abs.results) {
            assert_eq!(p.value, a.value);
        }
    }
}

#[test]
fn certain_failure_is_reported() {
    let mut m = FmtModel::new("top", MaintenancePolicy::disabled())
        .with_gate(GateSpec::or("top", &["a", "sub"]))
        .with_gate(GateSpec::or("sub", &["b", "c"]))
        .with_ebe(EbeSpec::new("a", 1, 1e9, 1.0, 2.0))
        .with_ebe(EbeSpec::new("b", 1, 1e-3, 1.0, 2.0))
        .with_ebe(EbeSpec::new("c", 1, 1e-3, 1.0, 2.0));
    m.policy = MaintenancePolicy::disabled();
    let err = abstract_analyze(&m, Metric::Reliability, &[1000.0], &m.costs, &DecompositionOptions::default()).unwrap_err();
    assert!(matches!(err, Error::CertainFailure { ref node } if node == "sub"), "{err}");
}
