//! Transient analysis by uniformization and the dependability metrics.
//!
//! All horizons of a query are served by one uniformization sweep: the
//! scalar observables `p_k · v` are recorded for every step `k` and then
//! combined with the Poisson weights of each horizon.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ctmc::{restrict_reachable, Ctmc};
use crate::error::{Error, Result};
use crate::model::{CostModel, FmtModel};
use crate::semantics::{compile, CompileOptions, RewardStructure, TOP_FAILED};

/// Headroom of the uniformization rate over the largest exit rate.
const RATE_MARGIN: f64 = 1.02;
/// Chains smaller than this are stepped on one thread.
const PARALLEL_STATES: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransientOptions {
    pub tolerance: f64,
    pub max_uniformization_steps: usize,
}

impl Default for TransientOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_uniformization_steps: 20_000_000,
        }
    }
}

/// Truncated Poisson probabilities `weights[k - left]` for `k` in
/// `left..=right`, with at most `tolerance` mass cut from the two tails.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonWeights {
    pub left: usize,
    pub right: usize,
    pub weights: Vec<f64>,
}

impl PoissonWeights {
    pub fn new(lambda: f64, tolerance: f64) -> Self {
        if lambda <= 0.0 {
            return Self {
                left: 0,
                right: 0,
                weights: vec![1.0],
            };
        }
        // walk outwards from the mode with the ratio recurrence until the
        // terms are negligible against the mode, then normalize
        let mode = lambda.floor() as usize;
        let cutoff = 1e-40;
        let mut below = Vec::new();
        let mut w = 1.0;
        let mut k = mode;
        while k > 0 {
            w *= k as f64 / lambda;
            if w < cutoff {
                break;
            }
            below.push(w);
            k -= 1;
        }
        let left = mode - below.len();
        let mut weights: Vec<f64> = below.into_iter().rev().collect();
        weights.push(1.0);
        let mut w = 1.0;
        let mut k = mode;
        loop {
            w *= lambda / (k + 1) as f64;
            if w < cutoff {
                break;
            }
            weights.push(w);
            k += 1;
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);

        // trim each tail while its mass stays below half the tolerance
        let (mut lo, mut hi) = (0, weights.len() - 1);
        let mut cut = 0.0;
        while lo < hi && cut + weights[lo] < tolerance / 2.0 {
            cut += weights[lo];
            lo += 1;
        }
        cut = 0.0;
        while hi > lo && cut + weights[hi] < tolerance / 2.0 {
            cut += weights[hi];
            hi -= 1;
        }
        Self {
            left: left + lo,
            right: left + hi,
            weights: weights[lo..=hi].to_vec(),
        }
    }

    pub fn weight(&self, k: usize) -> f64 {
        if k < self.left || k > self.right {
            0.0
        } else {
            self.weights[k - self.left]
        }
    }

    /// `P(N > k)` for each `k` in `0..=right`.
    fn tails(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.right + 1];
        let mut acc = 0.0;
        for k in (0..=self.right).rev() {
            out[k] = acc;
            acc += self.weight(k);
        }
        // below the window the tail is the whole (normalized) mass
        for v in out.iter_mut().take(self.left) {
            *v = 1.0;
        }
        out
    }
}

/// Uniformized one-step matrix stored by incoming edges so each entry of
/// the next vector is an independent dot product.
struct Uniformized {
    q: f64,
    stay: Vec<f64>,
    offsets: Vec<usize>,
    sources: Vec<u32>,
    probs: Vec<f64>,
}

impl Uniformized {
    fn new(c: &Ctmc) -> Self {
        let n = c.num_states();
        let max_exit = (0..n).map(|s| c.exit_rate(s)).fold(0.0, f64::max);
        let q = max_exit * RATE_MARGIN;
        let mut counts = vec![0usize; n + 1];
        for (s, e) in c.transitions() {
            if e.target as usize != s {
                counts[e.target as usize + 1] += 1;
            }
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let offsets = counts.clone();
        let mut fill = counts;
        let mut sources = vec![0u32; offsets[n]];
        let mut probs = vec![0.0; offsets[n]];
        for (s, e) in c.transitions() {
            let t = e.target as usize;
            if t != s {
                sources[fill[t]] = s as u32;
                probs[fill[t]] = e.rate / q;
                fill[t] += 1;
            }
        }
        let stay = (0..n)
            .map(|s| if q > 0.0 { 1.0 - c.exit_rate(s) / q } else { 1.0 })
            .collect();
        Self {
            q,
            stay,
            offsets,
            sources,
            probs,
        }
    }

    fn step(&self, p: &[f64], next: &mut [f64]) {
        let row = |j: usize| {
            let mut acc = p[j] * self.stay[j];
            for k in self.offsets[j]..self.offsets[j + 1] {
                acc += p[self.sources[k] as usize] * self.probs[k];
            }
            acc
        };
        if p.len() >= PARALLEL_STATES {
            next.par_iter_mut().enumerate().for_each(|(j, v)| *v = row(j));
        } else {
            next.iter_mut().enumerate().for_each(|(j, v)| *v = row(j));
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_horizons(horizons: &[f64]) -> Result<()> {
    match horizons.iter().find(|h| !(h.is_finite() && **h >= 0.0)) {
        Some(h) => Err(Error::Argument(format!("horizon {h} must be finite and >= 0"))),
        None => Ok(()),
    }
}

/// Records `p_k · v` for every observable up to the largest right
/// truncation point any horizon needs. Stops stepping early once the
/// distribution is stationary.
fn sweep(c: &Ctmc, observables: &[&[f64]], horizons: &[f64], opts: &TransientOptions) -> Result<(f64, Vec<Vec<f64>>)> {
    check_horizons(horizons)?;
    let u = Uniformized::new(c);
    let max_t = horizons.iter().copied().fold(0.0, f64::max);
    let steps = PoissonWeights::new(u.q * max_t, opts.tolerance).right;
    if steps > opts.max_uniformization_steps {
        return Err(Error::StepLimit {
            needed: steps,
            cap: opts.max_uniformization_steps,
        });
    }
    let mut p = vec![0.0; c.num_states()];
    p[c.initial()] = 1.0;
    let mut next = vec![0.0; p.len()];
    let mut series: Vec<Vec<f64>> = vec![Vec::with_capacity(steps + 1); observables.len()];
    for k in 0..=steps {
        for (s, o) in series.iter_mut().zip(observables) {
            s.push(dot(&p, o));
        }
        if k == steps {
            break;
        }
        u.step(&p, &mut next);
        let change: f64 = p.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut p, &mut next);
        // the l1 change per step never grows, so the remaining drift is
        // bounded by change x remaining steps
        if change * ((steps - k) as f64) < opts.tolerance * 1e-2 {
            for (s, o) in series.iter_mut().zip(observables) {
                let v = dot(&p, o);
                s.resize(steps + 1, v);
            }
            break;
        }
    }
    Ok((u.q, series))
}

fn instantaneous(q: f64, series: &[f64], t: f64, tol: f64) -> f64 {
    let w = PoissonWeights::new(q * t, tol);
    (w.left..=w.right).map(|k| w.weight(k) * series[k]).sum()
}

fn cumulative(q: f64, series: &[f64], t: f64, tol: f64) -> f64 {
    if t == 0.0 {
        return 0.0;
    }
    if q == 0.0 {
        return series[0] * t;
    }
    let w = PoissonWeights::new(q * t, tol);
    let tails = w.tails();
    (0..=w.right).map(|k| tails[k] * series[k]).sum::<f64>() / q
}

/// Transient distribution at time `t`.
pub fn transient(c: &Ctmc, t: f64, opts: &TransientOptions) -> Result<Vec<f64>> {
    check_horizons(&[t])?;
    let u = Uniformized::new(c);
    let w = PoissonWeights::new(u.q * t, opts.tolerance);
    if w.right > opts.max_uniformization_steps {
        return Err(Error::StepLimit {
            needed: w.right,
            cap: opts.max_uniformization_steps,
        });
    }
    let mut p = vec![0.0; c.num_states()];
    p[c.initial()] = 1.0;
    let mut next = vec![0.0; p.len()];
    let mut out = vec![0.0; p.len()];
    for k in 0..=w.right {
        let wk = w.weight(k);
        if wk > 0.0 {
            out.iter_mut().zip(&p).for_each(|(o, x)| *o += wk * x);
        }
        if k < w.right {
            u.step(&p, &mut next);
            std::mem::swap(&mut p, &mut next);
        }
    }
    Ok(out)
}

/// Probability of reaching a state labelled `target` within each horizon.
pub fn bounded_reach_many(c: &Ctmc, target: &str, horizons: &[f64], opts: &TransientOptions) -> Result<Vec<f64>> {
    let absorbing = restrict_reachable(&c.make_absorbing(target)?);
    let set = absorbing.states_with(target)?;
    let indicator: Vec<f64> = (0..absorbing.num_states())
        .map(|s| if set.contains(s) { 1.0 } else { 0.0 })
        .collect();
    let (q, series) = sweep(&absorbing, &[&indicator], horizons, opts)?;
    Ok(horizons
        .iter()
        .map(|&t| instantaneous(q, &series[0], t, opts.tolerance).clamp(0.0, 1.0))
        .collect())
}

pub fn bounded_reach(c: &Ctmc, target: &str, t: f64, opts: &TransientOptions) -> Result<f64> {
    Ok(bounded_reach_many(c, target, &[t], opts)?[0])
}

/// Expected reward accumulated over `[0, T]` for each horizon.
pub fn cumulative_reward_many(c: &Ctmc, rewards: &RewardStructure, horizons: &[f64], opts: &TransientOptions) -> Result<Vec<f64>> {
    if rewards.state.is_empty() && rewards.transition.is_empty() {
        return Err(Error::Argument("reward structure is empty".into()));
    }
    let rates = rewards.rates(c);
    let (q, series) = sweep(c, &[&rates], horizons, opts)?;
    Ok(horizons.iter().map(|&t| cumulative(q, &series[0], t, opts.tolerance)).collect())
}

pub fn cumulative_reward(c: &Ctmc, rewards: &RewardStructure, t: f64, opts: &TransientOptions) -> Result<f64> {
    Ok(cumulative_reward_many(c, rewards, &[t], opts)?[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Reliability,
    Availability,
    ExpectedCost,
    ExpectedFailures,
}

impl Metric {
    pub const ALL: [Metric; 4] = [
        Metric::Reliability,
        Metric::Availability,
        Metric::ExpectedCost,
        Metric::ExpectedFailures,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Reliability => "reliability",
            Metric::Availability => "availability",
            Metric::ExpectedCost => "expected_cost",
            Metric::ExpectedFailures => "expected_failures",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.replace('-', "_").as_str() {
            "reliability" => Ok(Metric::Reliability),
            "availability" => Ok(Metric::Availability),
            "expected_cost" | "cost" => Ok(Metric::ExpectedCost),
            "expected_failures" | "failures" => Ok(Metric::ExpectedFailures),
            other => Err(format!("unknown metric `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricQuery {
    pub kind: Metric,
    pub horizon: f64,
    pub cost: CostModel,
}

impl MetricQuery {
    pub fn new(kind: Metric, horizon: f64) -> Self {
        Self {
            kind,
            horizon,
            cost: CostModel::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnalysisOptions {
    pub compile: CompileOptions,
    pub transient: TransientOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisResult {
    pub model: String,
    pub metric: Metric,
    pub horizon_days: f64,
    pub value: f64,
    pub states: usize,
    pub time_ms: f64,
}

impl AnalysisResult {
    pub const CSV_HEADER: &'static str = "model,metric,horizon_days,value,states,time_ms";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.3}",
            self.model, self.metric, self.horizon_days, self.value, self.states, self.time_ms
        )
    }
}

/// One metric of `model` at several horizons from a single compilation
/// and a single uniformization sweep.
pub fn compute_metric_many(
    model: &FmtModel,
    metric: Metric,
    horizons: &[f64],
    cost: &CostModel,
    opts: &AnalysisOptions,
) -> Result<Vec<AnalysisResult>> {
    check_horizons(horizons)?;
    let start = Instant::now();
    let copts = CompileOptions {
        absorbing_top: metric == Metric::Reliability,
        ..opts.compile.clone()
    };
    let compiled = compile(model, cost, &copts)?;
    let c = &compiled.ctmc;
    let tol = opts.transient.tolerance;
    let values: Vec<f64> = match metric {
        Metric::Reliability => {
            let failed = c.states_with(TOP_FAILED)?;
            let indicator: Vec<f64> = (0..c.num_states())
                .map(|s| if failed.contains(s) { 1.0 } else { 0.0 })
                .collect();
            let (q, series) = sweep(c, &[&indicator], horizons, &opts.transient)?;
            horizons
                .iter()
                .map(|&t| (1.0 - instantaneous(q, &series[0], t, tol)).clamp(0.0, 1.0))
                .collect()
        }
        Metric::Availability => {
            let rates = compiled.rewards.availability.rates(c);
            let (q, series) = sweep(c, &[&rates], horizons, &opts.transient)?;
            horizons
                .iter()
                .map(|&t| {
                    if t == 0.0 {
                        series[0][0]
                    } else {
                        (cumulative(q, &series[0], t, tol) / t).clamp(0.0, 1.0)
                    }
                })
                .collect()
        }
        Metric::ExpectedCost | Metric::ExpectedFailures => {
            let r = if metric == Metric::ExpectedCost {
                &compiled.rewards.cost
            } else {
                &compiled.rewards.failures
            };
            let rates = r.rates(c);
            let (q, series) = sweep(c, &[&rates], horizons, &opts.transient)?;
            horizons.iter().map(|&t| cumulative(q, &series[0], t, tol)).collect()
        }
    };
    let time_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(horizons
        .iter()
        .zip(values)
        .map(|(&h, value)| AnalysisResult {
            model: model.top_event.clone(),
            metric,
            horizon_days: h,
            value,
            states: c.num_states(),
            time_ms,
        })
        .collect())
}

pub fn compute_metric(model: &FmtModel, q: &MetricQuery, opts: &AnalysisOptions) -> Result<AnalysisResult> {
    Ok(compute_metric_many(model, q.kind, &[q.horizon], &q.cost, opts)?.remove(0))
}

/// Constant failure rate with the same failure probability `de` at `t`:
/// `-ln(1 - de) / t`.
pub fn equivalent_failure_rate(de: f64, t: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&de) || !(t > 0.0 && t.is_finite()) {
        return Err(Error::Argument(format!("need 0 <= De < 1 and T > 0, got De={de}, T={t}")));
    }
    if de >= 1.0 {
        return Err(Error::CertainFailure {
            node: "abstracted node".into(),
        });
    }
    Ok(-(-de).ln_1p() / t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctmc::{delay_module, CtmcBuilder, DelaySpec, ELAPSED};

    fn birth(rate: f64) -> Ctmc {
        let mut b = CtmcBuilder::new();
        b.add_state("a");
        b.add_state("b");
        b.transition(0, "go", rate, 1).label(1, "done");
        b.build().unwrap()
    }

    #[test]
    fn poisson_weights_sum_to_one() {
        for lambda in [0.0, 0.3, 5.0, 120.0, 3.0e4] {
            let w = PoissonWeights::new(lambda, 1e-12);
            let total: f64 = w.weights.iter().sum();
            assert!((total - 1.0).abs() < 1e-11, "lambda {lambda}: {total}");
        }
        let w = PoissonWeights::new(2.0, 1e-15);
        assert!((w.weight(0) - (-2.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn time_zero_is_point_mass() {
        let p = transient(&birth(1.0), 0.0, &TransientOptions::default()).unwrap();
        assert_eq!(p, vec![1.0, 0.0]);
    }

    #[test]
    fn birth_process() {
        let p = transient(&birth(0.7), 3.0, &TransientOptions::default()).unwrap();
        assert!((p[1] - (1.0 - (-2.1f64).exp())).abs() < 1e-10);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn delay_first_passage() {
        let c = delay_module(&DelaySpec::new(7.0, 3)).unwrap().with_initial(1).unwrap();
        let v = bounded_reach(&c, ELAPSED, 7.0, &TransientOptions::default()).unwrap();
        assert!((v - crate::ctmc::erlang_cdf(7.0, 3, 3.0 / 7.0)).abs() < 1e-9);
        assert!((v - 0.5768).abs() < 1e-4);
    }

    #[test]
    fn reach_edge_cases() {
        let c = birth(1.0);
        let mut b = c.to_builder();
        b.label(0, "start");
        let c = b.build().unwrap();
        assert_eq!(bounded_reach(&c, "start", 5.0, &TransientOptions::default()).unwrap(), 1.0);
        let mut b = CtmcBuilder::new();
        b.add_state("a");
        b.add_state("b");
        b.label(1, "never");
        let iso = b.build().unwrap();
        assert_eq!(bounded_reach(&iso, "never", 5.0, &TransientOptions::default()).unwrap(), 0.0);
        assert!(bounded_reach(&iso, "nope", 1.0, &TransientOptions::default()).is_err());
    }

    #[test]
    fn cumulative_total_time_and_single_event() {
        let c = birth(2.0);
        let ones = RewardStructure {
            state: vec![1.0, 1.0],
            transition: Vec::new(),
        };
        let v = cumulative_reward(&c, &ones, 4.5, &TransientOptions::default()).unwrap();
        assert!((v - 4.5).abs() < 1e-9);
        let event = RewardStructure {
            state: Vec::new(),
            transition: vec![1.0],
        };
        let v = cumulative_reward(&c, &event, 50.0, &TransientOptions::default()).unwrap();
        assert!((v - 1.0).abs() < 1e-9);
        let partial = cumulative_reward(&c, &event, 0.5, &TransientOptions::default()).unwrap();
        assert!((partial - (1.0 - (-1.0f64).exp())).abs() < 1e-9);
    }

    #[test]
    fn many_horizons_match_single() {
        let c = delay_module(&DelaySpec::new(10.0, 4)).unwrap().with_initial(1).unwrap();
        let opts = TransientOptions::default();
        let hs = [0.0, 2.0, 10.0, 30.0];
        let many = bounded_reach_many(&c, ELAPSED, &hs, &opts).unwrap();
        for (h, m) in hs.iter().zip(&many) {
            assert!((bounded_reach(&c, ELAPSED, *h, &opts).unwrap() - m).abs() < 1e-12);
        }
        assert!(many.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn step_cap_reported() {
        let opts = TransientOptions {
            max_uniformization_steps: 10,
            ..TransientOptions::default()
        };
        assert!(matches!(transient(&birth(1.0), 100.0, &opts), Err(Error::StepLimit { .. })));
    }

    #[test]
    fn equivalent_rate() {
        assert!((equivalent_failure_rate(1.0 - (-2.0f64).exp(), 1.0).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(equivalent_failure_rate(0.0, 10.0).unwrap(), 0.0);
        assert!(matches!(equivalent_failure_rate(1.0, 10.0), Err(Error::CertainFailure { .. })));
        let lam = equivalent_failure_rate(0.0158, 5.0 * 365.0).unwrap();
        assert!((lam - 8.727e-6).abs() < 1e-9);
    }

    #[test]
    fn metric_names_round_trip() {
        for m in Metric::ALL {
            assert_eq!(m.as_str().parse::<Metric>().unwrap(), m);
        }
        assert!("mtbf".parse::<Metric>().is_err());
    }
}
