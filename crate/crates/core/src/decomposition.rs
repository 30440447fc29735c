//! Splitting an FMT into independent modules and the bottom-up abstract
//! analysis: each lower module is analysed on its own, summarized by a
//! constant failure rate, and inserted into its parent as a single event.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{compute_metric_many, equivalent_failure_rate, AnalysisOptions, AnalysisResult, Metric};
use crate::error::{Error, Result};
use crate::model::{to_dag, CostModel, Dag, EbeSpec, FmtModel, GateKind, Node, NodeId};

/// A piece of the decomposition: the nodes of one module that are not
/// inside a nested module. Nested modules appear as boundary events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubGraph {
    /// Top node of the module (the root sub-graph carries the top event).
    pub top: NodeId,
    /// OR gates and events belonging directly to this sub-graph.
    pub nodes: BTreeSet<NodeId>,
    /// RDEP gates whose trigger and dependents all live here.
    pub rdeps: Vec<NodeId>,
    /// Tops of the child sub-graphs, replaced by abstract events.
    pub boundary: Vec<NodeId>,
    pub level: usize,
    pub parent: Option<usize>,
}

/// Sub-graphs ordered bottom-up: every child precedes its parent, the
/// root sub-graph is last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub subgraphs: Vec<SubGraph>,
}

impl Decomposition {
    pub fn root(&self) -> &SubGraph {
        self.subgraphs.last().expect("at least the root sub-graph")
    }

    pub fn len(&self) -> usize {
        self.subgraphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subgraphs.is_empty()
    }

    pub fn index_of(&self, top: &str) -> Option<usize> {
        self.subgraphs.iter().position(|s| s.top == top)
    }
}

/// Gates that can be cut out as modules: not the top event, at least two
/// events below, no RDEP straddling the boundary, and not merely a
/// pass-through of a single-input parent (the outermost gate wins).
fn module_tops(dag: &Dag) -> BTreeSet<usize> {
    let parents = dag.parents();
    let n = dag.nodes.len();
    let mut below: Vec<Option<BTreeSet<NodeId>>> = vec![None; n];
    fn events(dag: &Dag, i: usize, memo: &mut Vec<Option<BTreeSet<NodeId>>>) -> BTreeSet<NodeId> {
        if let Some(s) = &memo[i] {
            return s.clone();
        }
        let out = match &dag.nodes[i].node {
            Node::Ebe(_) => [dag.original_id(i).to_string()].into(),
            Node::Gate(g) if g.is_rdep() => BTreeSet::new(),
            Node::Gate(_) => {
                let mut acc = BTreeSet::new();
                for &c in &dag.nodes[i].children {
                    acc.extend(events(dag, c, memo));
                }
                acc
            }
        };
        memo[i] = Some(out.clone());
        out
    }
    let rdep_events: Vec<BTreeSet<NodeId>> = dag
        .nodes
        .iter()
        .filter_map(|n| match &n.node {
            Node::Gate(g) => match &g.kind {
                GateKind::Rdep { dependents, .. } => {
                    let mut s: BTreeSet<NodeId> = dependents.iter().cloned().collect();
                    s.insert(g.inputs[0].clone());
                    Some(s)
                }
                GateKind::Or => None,
            },
            Node::Ebe(_) => None,
        })
        .collect();
    let mut tops = BTreeSet::new();
    for i in 0..n {
        let Node::Gate(g) = &dag.nodes[i].node else { continue };
        if g.is_rdep() || i == dag.top {
            continue;
        }
        let ev = events(dag, i, &mut below);
        if ev.len() < 2 {
            continue;
        }
        if rdep_events.iter().any(|r| !r.is_subset(&ev) && !r.is_disjoint(&ev)) {
            continue;
        }
        let pass_through = parents[i]
            .iter()
            .any(|&p| events(dag, p, &mut below).len() == ev.len());
        if pass_through {
            continue;
        }
        tops.insert(i);
    }
    tops
}

/// Splits the model graph at every module boundary.
pub fn decompose(dag: &Dag) -> Decomposition {
    let tops = module_tops(dag);
    let mut subgraphs: Vec<SubGraph> = Vec::new();
    // depth-first from the top event; a module top starts a new sub-graph
    fn visit(dag: &Dag, tops: &BTreeSet<usize>, start: usize, level: usize, parent: Option<usize>, out: &mut Vec<SubGraph>) -> usize {
        let me = out.len();
        out.push(SubGraph {
            top: dag.nodes[start].id.clone(),
            nodes: BTreeSet::new(),
            rdeps: Vec::new(),
            boundary: Vec::new(),
            level,
            parent,
        });
        let mut stack = vec![start];
        let mut nested = Vec::new();
        while let Some(i) = stack.pop() {
            out[me].nodes.insert(dag.nodes[i].id.clone());
            for &c in dag.nodes[i].children.iter().rev() {
                if tops.contains(&c) {
                    out[me].boundary.push(dag.nodes[c].id.clone());
                    nested.push(c);
                } else {
                    stack.push(c);
                }
            }
        }
        for c in nested {
            visit(dag, tops, c, level + 1, Some(me), out);
        }
        me
    }
    visit(dag, &tops, dag.top, 0, None, &mut subgraphs);

    // each RDEP goes to the deepest sub-graph holding all of its events
    for node in &dag.nodes {
        let Node::Gate(g) = &node.node else { continue };
        let GateKind::Rdep { dependents, .. } = &g.kind else { continue };
        let home = subgraphs
            .iter()
            .enumerate()
            .filter(|(_, s)| s.nodes.contains(&g.inputs[0]) && dependents.iter().all(|d| s.nodes.contains(d)))
            .max_by_key(|(_, s)| s.level)
            .map(|(i, _)| i)
            .unwrap_or(0);
        subgraphs[home].rdeps.push(g.id.clone());
    }

    // bottom-up order: deeper levels first, root last
    let mut order: Vec<usize> = (0..subgraphs.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(subgraphs[i].level), i));
    let mut remap = vec![0; subgraphs.len()];
    for (new, &old) in order.iter().enumerate() {
        remap[old] = new;
    }
    let mut sorted: Vec<SubGraph> = order.iter().map(|&i| subgraphs[i].clone()).collect();
    for s in &mut sorted {
        s.parent = s.parent.map(|p| remap[p]);
    }
    Decomposition { subgraphs: sorted }
}

/// Equivalent exponential event standing in for an analysed sub-graph.
pub fn abstract_event(id: &str, rate: f64, stages: u32) -> EbeSpec {
    let stages = stages.max(1);
    let t_deg = if rate > 0.0 { 1.0 / rate } else { f64::INFINITY };
    EbeSpec {
        maintained: false,
        ..EbeSpec::new(id, stages, t_deg, 1.0, 2.0)
    }
}

/// The stand-alone model of one sub-graph, with each boundary replaced by
/// an abstract event of the given rate.
pub fn submodel(model: &FmtModel, sub: &SubGraph, rates: &BTreeMap<NodeId, f64>, stages: u32) -> FmtModel {
    let mut m = FmtModel::new(sub.top.clone(), model.policy.clone());
    m.costs = model.costs.clone();
    for id in sub.nodes.iter().chain(&sub.rdeps) {
        if let Some(node) = model.node(id) {
            m.insert(node.clone());
        }
    }
    for b in &sub.boundary {
        let rate = rates.get(b).copied().unwrap_or(0.0);
        m.insert(Node::Ebe(abstract_event(b, rate, stages)));
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub top: NodeId,
    pub level: usize,
    pub states: usize,
    pub time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbstractResult {
    pub results: Vec<AnalysisResult>,
    /// Per sub-graph statistics at the last horizon.
    pub levels: Vec<LevelStats>,
    /// Time spent on the lower sub-graphs (equivalent-rate computation).
    pub mttf_time_ms: f64,
    pub total_time_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DecompositionOptions {
    pub analysis: AnalysisOptions,
    /// Erlang stages of the abstract events (1 = exponential).
    pub abstract_stages: u32,
}

/// Bottom-up analysis of `metric` at each horizon: lower sub-graphs give
/// their failure probability at the horizon, converted to an equivalent
/// rate for the abstract event in the parent, up to the root.
///
/// Expected cost adds the maintenance costs of the lower sub-graphs to the
/// root's; failures and availability refer to the root only.
pub fn abstract_analyze(
    model: &FmtModel,
    metric: Metric,
    horizons: &[f64],
    cost: &CostModel,
    opts: &DecompositionOptions,
) -> Result<AbstractResult> {
    let start = Instant::now();
    let dag = to_dag(model)?;
    let dec = decompose(&dag);
    let stages = opts.abstract_stages.max(1);
    let name = model.top_event.clone();
    if dec.len() == 1 {
        let results = compute_metric_many(model, metric, horizons, cost, &opts.analysis)?;
        let states = results.first().map_or(0, |r| r.states);
        let total = start.elapsed().as_secs_f64() * 1e3;
        return Ok(AbstractResult {
            levels: vec![LevelStats {
                top: name,
                level: 0,
                states,
                time_ms: total,
            }],
            results,
            mttf_time_ms: 0.0,
            total_time_ms: total,
        });
    }
    let lower_cost = CostModel {
        cost_operational_per_day: 0.0,
        cost_failure_per_day: 0.0,
        ..cost.clone()
    };
    let root = dec.len() - 1;
    let is_leaf = |i: usize| dec.subgraphs[i].boundary.is_empty();

    // leaf sub-graphs do not depend on the horizon: one sweep each
    let leaves: Vec<usize> = (0..root).filter(|&i| is_leaf(i)).collect();
    let leaf_runs: Vec<(usize, Vec<AnalysisResult>, Option<Vec<AnalysisResult>>, f64)> = leaves
        .par_iter()
        .map(|&i| {
            let t = Instant::now();
            let m = submodel(model, &dec.subgraphs[i], &BTreeMap::new(), stages);
            let rel = compute_metric_many(&m, Metric::Reliability, horizons, &lower_cost, &opts.analysis)?;
            let costs = if metric == Metric::ExpectedCost {
                Some(compute_metric_many(&m, Metric::ExpectedCost, horizons, &lower_cost, &opts.analysis)?)
            } else {
                None
            };
            Ok((i, rel, costs, t.elapsed().as_secs_f64() * 1e3))
        })
        .collect::<Result<_>>()?;

    let mut stats: BTreeMap<usize, LevelStats> = BTreeMap::new();
    let mut mttf_time = 0.0;
    // per horizon: unreliability and maintenance cost of every lower sub-graph
    let mut unrel: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); horizons.len()];
    let mut lower_costs: Vec<f64> = vec![0.0; horizons.len()];
    for (i, rel, costs, ms) in leaf_runs {
        mttf_time += ms;
        stats.insert(i, level_stats(&dec, i, rel[0].states, ms));
        for (h, r) in rel.iter().enumerate() {
            unrel[h].insert(i, 1.0 - r.value);
        }
        if let Some(c) = costs {
            for (h, r) in c.iter().enumerate() {
                lower_costs[h] += r.value;
            }
        }
    }

    let mut results = Vec::with_capacity(horizons.len());
    for (h, &t) in horizons.iter().enumerate() {
        let rate_of = |unrel: &BTreeMap<usize, f64>, child: usize| -> Result<f64> {
            if t == 0.0 {
                return Ok(0.0);
            }
            // within the truncation error of certain failure
            let de = unrel[&child];
            let de = if 1.0 - de <= opts.analysis.transient.tolerance { 1.0 } else { de };
            equivalent_failure_rate(de, t).map_err(|e| match e {
                Error::CertainFailure { .. } => Error::CertainFailure {
                    node: dec.subgraphs[child].top.clone(),
                },
                other => other,
            })
        };
        let rates_for = |unrel: &BTreeMap<usize, f64>, i: usize| -> Result<BTreeMap<NodeId, f64>> {
            dec.subgraphs[i]
                .boundary
                .iter()
                .map(|b| {
                    let child = dec.index_of(b).expect("boundary names a sub-graph");
                    Ok((b.clone(), rate_of(unrel, child)?))
                })
                .collect()
        };
        for i in (0..root).filter(|&i| !is_leaf(i)) {
            let tm = Instant::now();
            let m = submodel(model, &dec.subgraphs[i], &rates_for(&unrel[h], i)?, stages);
            let rel = compute_metric_many(&m, Metric::Reliability, &[t], &lower_cost, &opts.analysis)?;
            if metric == Metric::ExpectedCost {
                lower_costs[h] += compute_metric_many(&m, Metric::ExpectedCost, &[t], &lower_cost, &opts.analysis)?[0].value;
            }
            unrel[h].insert(i, 1.0 - rel[0].value);
            let ms = tm.elapsed().as_secs_f64() * 1e3;
            mttf_time += ms;
            stats.insert(i, level_stats(&dec, i, rel[0].states, ms));
        }
        let tm = Instant::now();
        let m = submodel(model, &dec.subgraphs[root], &rates_for(&unrel[h], root)?, stages);
        let mut r = compute_metric_many(&m, metric, &[t], cost, &opts.analysis)?.remove(0);
        if metric == Metric::ExpectedCost {
            r.value += lower_costs[h];
        }
        stats.insert(root, level_stats(&dec, root, r.states, tm.elapsed().as_secs_f64() * 1e3));
        r.model = name.clone();
        results.push(r);
    }
    let levels: Vec<LevelStats> = stats.into_values().collect();
    let total_states: usize = levels.iter().map(|l| l.states).sum();
    let total = start.elapsed().as_secs_f64() * 1e3;
    for r in &mut results {
        r.states = total_states;
        r.time_ms = total;
    }
    Ok(AbstractResult {
        results,
        levels,
        mttf_time_ms: mttf_time,
        total_time_ms: total,
    })
}

fn level_stats(dec: &Decomposition, i: usize, states: usize, time_ms: f64) -> LevelStats {
    LevelStats {
        top: dec.subgraphs[i].top.clone(),
        level: dec.subgraphs[i].level,
        states,
        time_ms,
    }
}

/// One row of the monolithic versus abstract comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub horizon: f64,
    pub original_time: f64,
    pub original_value: f64,
    pub original_states: usize,
    pub mttf_time: f64,
    pub abstract_time: f64,
    pub abstract_value: f64,
    pub abstract_states: usize,
    /// Relative deviation of the abstract value from the original.
    pub deviation: f64,
}

impl ComparisonRow {
    pub const CSV_HEADER: &'static str =
        "horizon,original_time,original_value,original_states,mttf_time,abstract_time,abstract_value,abstract_states,deviation";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.3},{},{},{:.3},{:.3},{},{},{}",
            self.horizon,
            self.original_time,
            self.original_value,
            self.original_states,
            self.mttf_time,
            self.abstract_time,
            self.abstract_value,
            self.abstract_states,
            self.deviation
        )
    }
}

/// Runs the monolithic and the abstract analysis side by side.
pub fn compare(
    model: &FmtModel,
    metric: Metric,
    horizons: &[f64],
    cost: &CostModel,
    opts: &DecompositionOptions,
) -> Result<Vec<ComparisonRow>> {
    let original = compute_metric_many(model, metric, horizons, cost, &opts.analysis)?;
    let abs = abstract_analyze(model, metric, horizons, cost, opts)?;
    Ok(original
        .iter()
        .zip(&abs.results)
        .map(|(o, a)| ComparisonRow {
            horizon: o.horizon_days,
            original_time: o.time_ms,
            original_value: o.value,
            original_states: o.states,
            mttf_time: abs.mttf_time_ms,
            abstract_time: abs.total_time_ms,
            abstract_value: a.value,
            abstract_states: a.states,
            deviation: if o.value != 0.0 {
                (a.value - o.value).abs() / o.value.abs()
            } else {
                (a.value - o.value).abs()
            },
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GateSpec, MaintenancePolicy};

    fn ebe(id: &str) -> EbeSpec {
        EbeSpec::new(id, 2, 1000.0, 1.0, 7.0)
    }

    fn nested() -> FmtModel {
        FmtModel::new("top", MaintenancePolicy::disabled())
            .with_gate(GateSpec::or("top", &["a", "m1"]))
            .with_gate(GateSpec::or("m1", &["b", "m2"]))
            .with_gate(GateSpec::or("m2", &["c", "d"]))
            .with_ebe(ebe("a"))
            .with_ebe(ebe("b"))
            .with_ebe(ebe("c"))
            .with_ebe(ebe("d"))
    }

    #[test]
    fn flat_tree_is_one_subgraph() {
        let m = FmtModel::new("top", MaintenancePolicy::disabled())
            .with_gate(GateSpec::or("top", &["a", "b"]))
            .with_ebe(ebe("a"))
            .with_ebe(ebe("b"));
        let d = decompose(&to_dag(&m).unwrap());
        assert_eq!(d.len(), 1);
        assert!(d.root().boundary.is_empty());
    }

    #[test]
    fn nested_modules_bottom_up() {
        let d = decompose(&to_dag(&nested()).unwrap());
        let tops: Vec<&str> = d.subgraphs.iter().map(|s| s.top.as_str()).collect();
        assert_eq!(tops, vec!["m2", "m1", "top"]);
        assert_eq!(d.subgraphs[1].boundary, vec!["m2".to_string()]);
        assert_eq!(d.subgraphs[2].boundary, vec!["m1".to_string()]);
        assert_eq!(d.subgraphs[0].parent, Some(1));
        let all: BTreeSet<&String> = d.subgraphs.iter().flat_map(|s| &s.nodes).collect();
        assert_eq!(all.len(), 7);
    }

    #[test]
    fn straddling_rdep_blocks_split() {
        let m = nested().with_gate(GateSpec::rdep("r", "a", &["c"], 2.0));
        let d = decompose(&to_dag(&m).unwrap());
        assert_eq!(d.len(), 1);
        assert_eq!(d.root().rdeps, vec!["r".to_string()]);
        let inner = nested().with_gate(GateSpec::rdep("r", "c", &["d"], 2.0));
        let d = decompose(&to_dag(&inner).unwrap());
        assert_eq!(d.len(), 3);
        assert_eq!(d.subgraphs[0].rdeps, vec!["r".to_string()]);
    }

    #[test]
    fn single_input_parent_keeps_outer_boundary() {
        let m = FmtModel::new("top", MaintenancePolicy::disabled())
            .with_gate(GateSpec::or("top", &["a", "w"]))
            .with_gate(GateSpec::or("w", &["g"]))
            .with_gate(GateSpec::or("g", &["b", "c"]))
            .with_ebe(ebe("a"))
            .with_ebe(ebe("b"))
            .with_ebe(ebe("c"));
        let d = decompose(&to_dag(&m).unwrap());
        let tops: Vec<&str> = d.subgraphs.iter().map(|s| s.top.as_str()).collect();
        assert_eq!(tops, vec!["w", "top"]);
    }

    #[test]
    fn submodel_inserts_abstract_event() {
        let m = nested();
        let d = decompose(&to_dag(&m).unwrap());
        let rates = BTreeMap::from([("m2".to_string(), 0.01)]);
        let sub = submodel(&m, &d.subgraphs[1], &rates, 1);
        assert_eq!(sub.top_event, "m1");
        let v = sub.ebe("m2").unwrap();
        assert!(!v.maintained);
        assert!((v.t_deg - 100.0).abs() < 1e-12);
        assert!(crate::model::validate(&sub).is_empty());
        assert!(abstract_event("x", 0.0, 1).t_deg.is_infinite());
    }
}
