//! Monte Carlo simulation of an FMT at the component level, independent of
//! the CTMC construction.
//!
//! The default mode uses the true deterministic delays: every degradation
//! level takes exactly `T_deg / N` (scaled by active RDEP factors), timers
//! fire with fixed periods and maintenance takes fixed time. Erlang mode
//! samples each delay from the same phase-type law as the numeric engine,
//! so its estimates converge to the numeric values.
//!
//! Simultaneous events are ordered: maintenance completion, inspection,
//! overhaul check, repair check, degradation.

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_distr::{Distribution, Exp1, Gamma};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::analysis::Metric;
use crate::error::{Error, Result};
use crate::model::{validate, CostModel, FmtModel, GateKind, InvalidModel};

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub runs: usize,
    pub horizon: f64,
    pub seed: u64,
    pub confidence: f64,
    /// Erlang-distributed delays (matching the CTMC) instead of fixed ones.
    pub erlang_mode: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            runs: 10_000,
            horizon: 365.0,
            seed: 0,
            confidence: 0.99,
            erlang_mode: false,
        }
    }
}

/// Point estimate with a two-sided normal-approximation interval. With a
/// single run the interval is unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Estimate {
    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }

    pub fn half_width(&self) -> f64 {
        (self.upper - self.lower) / 2.0
    }
}

/// Outcome of one simulated history.
#[derive(Debug, Default, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run: usize,
    pub survived: bool,
    pub up_time: f64,
    pub cost: f64,
    pub failures: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub model: String,
    pub runs: usize,
    pub horizon_days: f64,
    pub seed: u64,
    pub confidence: f64,
    pub erlang_mode: bool,
    pub reliability: Estimate,
    pub availability: Estimate,
    pub expected_cost: Estimate,
    pub expected_failures: Estimate,
    pub time_ms: f64,
}

impl SimResult {
    pub fn estimate(&self, metric: Metric) -> &Estimate {
        match metric {
            Metric::Reliability => &self.reliability,
            Metric::Availability => &self.availability,
            Metric::ExpectedCost => &self.expected_cost,
            Metric::ExpectedFailures => &self.expected_failures,
        }
    }
}

// timer slots, in tie-break priority order
const TIN: usize = 0;
const TOH: usize = 1;
const TRP: usize = 2;

#[derive(Debug, Clone)]
struct SimEbe {
    levels: u32,
    /// Duration of one degradation level; infinite when it never degrades.
    stage: f64,
    maintained: bool,
    under_top: bool,
    /// (trigger index, gamma) of the RDEPs accelerating this event.
    accel: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
struct System {
    ebes: Vec<SimEbe>,
    timers: [Option<f64>; 3],
    stages: u32,
    durations: Option<(f64, f64)>,
    cost: CostModel,
}

impl System {
    fn new(model: &FmtModel, cost: &CostModel) -> Result<Self> {
        let violations = validate(model);
        if !violations.is_empty() {
            return Err(InvalidModel(violations).into());
        }
        let top = model.events_below(&model.top_event);
        let ids: Vec<&str> = model.ebes().map(|e| e.id.as_str()).collect();
        let mut ebes: Vec<SimEbe> = model
            .ebes()
            .map(|e| {
                let n = e.levels.max(1);
                SimEbe {
                    levels: n,
                    stage: e.t_deg / n as f64,
                    maintained: e.maintained,
                    under_top: top.contains(&e.id),
                    accel: Vec::new(),
                }
            })
            .collect();
        for g in model.rdeps() {
            let GateKind::Rdep { gamma, dependents } = &g.kind else { continue };
            let trig = ids.iter().position(|&i| Some(i) == g.trigger()).expect("validated trigger");
            for d in dependents {
                let k = ids.iter().position(|i| i == d).expect("validated dependent");
                ebes[k].accel.push((trig, *gamma));
            }
        }
        let p = &model.policy;
        let durations = model.maintenance_durations();
        let finite = |t: f64| t.is_finite().then_some(t);
        let mut timers = [finite(p.t_insp), finite(p.t_oh), finite(p.t_rep)];
        if durations.is_none() {
            timers = [None; 3];
        }
        Ok(Self {
            ebes,
            timers,
            stages: p.timer_stages.max(1),
            durations,
            cost: cost.clone(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Repair {
    Idle,
    Clean,
    Replace,
}

struct Run<'a, R: Rng> {
    sys: &'a System,
    rng: R,
    erlang: bool,
    level: Vec<u32>,
    /// Progress within the current level, deterministic mode only.
    progress: Vec<f64>,
    next: [f64; 3],
    waiting: [bool; 3],
    repair: Repair,
    inspecting: bool,
    done_at: f64,
}

impl<R: Rng> Run<'_, R> {
    fn new(sys: &System, rng: R, erlang: bool) -> Run<'_, R> {
        Run {
            sys,
            rng,
            erlang,
            level: vec![0; sys.ebes.len()],
            progress: vec![0.0; sys.ebes.len()],
            next: [f64::INFINITY; 3],
            waiting: [false; 3],
            repair: Repair::Idle,
            inspecting: false,
            done_at: f64::INFINITY,
        }
    }

    /// `shape` stages of equal length summing to `mean` on average.
    fn phases(&mut self, shape: u32, mean: f64) -> f64 {
        if !self.erlang {
            return mean;
        }
        let g = Gamma::new(shape as f64, mean / shape as f64).expect("positive parameters");
        g.sample(&mut self.rng)
    }

    fn failed(&self, i: usize) -> bool {
        self.level[i] >= self.sys.ebes[i].levels
    }

    fn top_failed(&self) -> bool {
        (0..self.level.len()).any(|i| self.sys.ebes[i].under_top && self.failed(i))
    }

    /// (trig, thresh) over the maintained events.
    fn signals(&self) -> (bool, bool) {
        let mut trig = false;
        let mut thresh = false;
        for (e, &l) in self.sys.ebes.iter().zip(&self.level) {
            if e.maintained {
                trig |= l > 0;
                thresh |= l > 0 && l < e.levels;
            }
        }
        (trig, thresh)
    }

    fn wrap_enabled(&self, k: usize, trig: bool, thresh: bool) -> bool {
        if !self.waiting[k] || self.repair != Repair::Idle {
            return false;
        }
        let inspection_due = thresh && self.waiting[TIN];
        match k {
            TIN => !self.inspecting,
            _ => !(trig && inspection_due),
        }
    }

    fn start(&mut self, now: f64, repair: Repair) {
        let (t_clean, t_replace) = self.sys.durations.expect("timers imply maintained events");
        let n = self.sys.stages;
        let t = if repair == Repair::Clean { t_clean } else { t_replace };
        // the Erlang completion is one more stage after the elapsed stage
        let d = if self.erlang {
            self.phases(n + 1, t * (n + 1) as f64 / n as f64)
        } else {
            t
        };
        self.repair = repair;
        self.done_at = now + d;
    }

    fn wrap(&mut self, k: usize, now: f64, trig: bool, thresh: bool) {
        self.waiting[k] = false;
        let t = self.sys.timers[k].expect("wrapping timer is enabled");
        let n = self.sys.stages;
        self.next[k] = now + self.phases(n, t);
        match k {
            TIN if thresh => {
                self.inspecting = true;
                self.start(now, Repair::Clean);
            }
            TOH if trig => self.start(now, Repair::Replace),
            TRP if trig => self.start(now, Repair::Clean),
            _ => {}
        }
    }

    fn complete(&mut self, out: &mut RunSummary) {
        for (i, e) in self.sys.ebes.iter().enumerate() {
            if !e.maintained {
                continue;
            }
            match self.repair {
                Repair::Clean => self.level[i] = self.level[i].saturating_sub(1),
                Repair::Replace => {
                    self.level[i] = 0;
                    self.progress[i] = 0.0;
                }
                Repair::Idle => {}
            }
        }
        out.cost += match self.repair {
            Repair::Clean => self.sys.cost.cost_repair,
            Repair::Replace => self.sys.cost.cost_replace,
            Repair::Idle => 0.0,
        };
        self.repair = Repair::Idle;
        self.inspecting = false;
        self.done_at = f64::INFINITY;
    }

    /// Degradation speed of event `i` relative to its nominal pace.
    fn speed(&self, i: usize) -> f64 {
        let e = &self.sys.ebes[i];
        if self.failed(i) || !e.stage.is_finite() {
            return 0.0;
        }
        e.accel
            .iter()
            .filter(|(trig, _)| self.failed(*trig))
            .fold(1.0, |r, (_, g)| r * g)
    }

    fn simulate(mut self, run: usize, horizon: f64) -> RunSummary {
        let mut out = RunSummary {
            run,
            survived: true,
            ..Default::default()
        };
        let n_timer = self.sys.stages;
        for k in 0..3 {
            if let Some(t) = self.sys.timers[k] {
                self.next[k] = self.phases(n_timer, t);
            }
        }
        let n = self.level.len();
        let mut now = 0.0;
        let mut down = self.top_failed();
        let mut rates = vec![0.0; n + 3];
        let mut speed = vec![0.0; n];
        loop {
            let (trig, thresh) = self.signals();
            if !self.erlang {
                // fixed-delay timers signal as soon as the signal can be taken
                if let Some(k) = (0..3).find(|&k| self.wrap_enabled(k, trig, thresh)) {
                    self.wrap(k, now, trig, thresh);
                    continue;
                }
            }
            for i in 0..n {
                speed[i] = self.speed(i);
            }
            // exponential clocks (Erlang mode) and the earliest fixed degradation
            let mut total = 0.0;
            let mut deg = (f64::INFINITY, n);
            if self.erlang {
                for i in 0..n {
                    rates[i] = speed[i] / self.sys.ebes[i].stage;
                }
                for k in 0..3 {
                    rates[n + k] = match self.sys.timers[k] {
                        Some(t) if self.wrap_enabled(k, trig, thresh) => n_timer as f64 / t,
                        _ => 0.0,
                    };
                }
                total = rates.iter().sum();
            } else {
                for i in 0..n {
                    if speed[i] > 0.0 {
                        let at = now + (self.sys.ebes[i].stage - self.progress[i]).max(0.0) / speed[i];
                        if at < deg.0 {
                            deg = (at, i);
                        }
                    }
                }
            }
            let t_exp = if total > 0.0 {
                let e: f64 = self.rng.sample(Exp1);
                now + e / total
            } else {
                f64::INFINITY
            };
            // scheduled events, ties broken by completion, then timer slot
            let mut sched = (self.done_at, 0usize);
            for k in 0..3 {
                if !self.waiting[k] && self.sys.timers[k].is_some() && self.next[k] < sched.0 {
                    sched = (self.next[k], k + 1);
                }
            }
            let t_next = t_exp.min(sched.0).min(deg.0);
            let step = t_next.min(horizon) - now;
            if !down {
                out.up_time += step;
            }
            if !self.erlang {
                for i in 0..n {
                    self.progress[i] += speed[i] * step;
                }
            }
            if t_next > horizon {
                break;
            }
            now = t_next;
            if sched.0 <= t_exp && sched.0 <= deg.0 {
                match sched.1 {
                    0 => self.complete(&mut out),
                    k => self.waiting[k - 1] = true,
                }
            } else if deg.0 < t_exp {
                self.level[deg.1] += 1;
                self.progress[deg.1] = 0.0;
            } else {
                let mut pick = self.rng.gen::<f64>() * total;
                let mut chosen = rates.len() - 1;
                for (j, r) in rates.iter().enumerate() {
                    if *r > 0.0 {
                        chosen = j;
                        if pick < *r {
                            break;
                        }
                        pick -= r;
                    }
                }
                if chosen < n {
                    self.level[chosen] += 1;
                } else {
                    self.wrap(chosen - n, now, trig, thresh);
                }
            }
            let now_down = self.top_failed();
            if now_down && !down {
                out.failures += 1;
                out.survived = false;
            }
            down = now_down;
        }
        let c = &self.sys.cost;
        out.cost += c.cost_operational_per_day * horizon + c.cost_failure_per_day * (horizon - out.up_time);
        out
    }
}

fn run_seed(seed: u64, run: usize) -> u64 {
    seed ^ (run as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Pairwise summation, independent of how the runs were scheduled.
fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

fn estimate(xs: &[f64], z: f64) -> Estimate {
    let n = xs.len() as f64;
    let mean = pairwise_sum(xs) / n;
    if xs.len() < 2 {
        return Estimate {
            mean,
            std_err: f64::INFINITY,
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
        };
    }
    let dev: Vec<f64> = xs.iter().map(|x| (x - mean).powi(2)).collect();
    let se = (pairwise_sum(&dev) / (n - 1.0) / n).sqrt();
    Estimate {
        mean,
        std_err: se,
        lower: mean - z * se,
        upper: mean + z * se,
    }
}

/// Runs every history and returns the per-run summaries in run order.
/// Results depend only on the seed, not on the thread count.
pub fn simulate_runs(model: &FmtModel, cost: &CostModel, cfg: &SimConfig) -> Result<Vec<RunSummary>> {
    if cfg.runs == 0 {
        return Err(Error::Argument("at least one run is needed".into()));
    }
    if !(cfg.horizon >= 0.0 && cfg.horizon.is_finite()) {
        return Err(Error::Argument(format!("horizon must be finite and non-negative, got {}", cfg.horizon)));
    }
    let sys = System::new(model, cost)?;
    Ok((0..cfg.runs)
        .into_par_iter()
        .map(|r| {
            let rng = Xoshiro256PlusPlus::seed_from_u64(run_seed(cfg.seed, r));
            Run::new(&sys, rng, cfg.erlang_mode).simulate(r, cfg.horizon)
        })
        .collect())
}

/// Aggregates per-run summaries into the four metric estimates.
pub fn summarize(model: &FmtModel, runs: &[RunSummary], cfg: &SimConfig) -> Result<SimResult> {
    if !(cfg.confidence > 0.0 && cfg.confidence < 1.0) {
        return Err(Error::Argument(format!("confidence must lie in (0, 1), got {}", cfg.confidence)));
    }
    let z = Normal::new(0.0, 1.0)
        .expect("standard normal")
        .inverse_cdf(0.5 + cfg.confidence / 2.0);
    let column = |f: &dyn Fn(&RunSummary) -> f64| runs.iter().map(f).collect::<Vec<_>>();
    let h = cfg.horizon;
    let survived = column(&|o| if o.survived { 1.0 } else { 0.0 });
    Ok(SimResult {
        model: model.top_event.clone(),
        runs: runs.len(),
        horizon_days: h,
        seed: cfg.seed,
        confidence: cfg.confidence,
        erlang_mode: cfg.erlang_mode,
        reliability: estimate(&survived, z),
        availability: if h > 0.0 {
            estimate(&column(&|o| o.up_time / h), z)
        } else {
            estimate(&survived, z)
        },
        expected_cost: estimate(&column(&|o| o.cost), z),
        expected_failures: estimate(&column(&|o| o.failures as f64), z),
        time_ms: 0.0,
    })
}

/// Simulates `cfg.runs` independent histories up to `cfg.horizon` days.
pub fn simulate(model: &FmtModel, cost: &CostModel, cfg: &SimConfig) -> Result<SimResult> {
    let start = Instant::now();
    if !(cfg.confidence > 0.0 && cfg.confidence < 1.0) {
        return Err(Error::Argument(format!("confidence must lie in (0, 1), got {}", cfg.confidence)));
    }
    let runs = simulate_runs(model, cost, cfg)?;
    let mut res = summarize(model, &runs, cfg)?;
    res.time_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EbeSpec, GateSpec, MaintenancePolicy};

    fn single(levels: u32, t_deg: f64) -> FmtModel {
        FmtModel::new("top", MaintenancePolicy::disabled())
            .with_gate(GateSpec::or("top", &["a"]))
            .with_ebe(EbeSpec::new("a", levels, t_deg, 1.0, 7.0))
    }

    fn cfg(runs: usize, horizon: f64, erlang_mode: bool) -> SimConfig {
        SimConfig {
            runs,
            horizon,
            seed: 7,
            erlang_mode,
            ..SimConfig::default()
        }
    }

    #[test]
    fn same_seed_same_result() {
        let m = single(3, 100.0);
        for erlang in [false, true] {
            let a = simulate(&m, &CostModel::default(), &cfg(500, 80.0, erlang)).unwrap();
            let b = simulate(&m, &CostModel::default(), &cfg(500, 80.0, erlang)).unwrap();
            assert_eq!(a.reliability, b.reliability);
            assert_eq!(a.availability, b.availability);
        }
    }

    #[test]
    fn exponential_event_matches_closed_form() {
        let m = single(1, 100.0);
        let r = simulate(&m, &CostModel::default(), &cfg(20_000, 50.0, true)).unwrap();
        let exact = (-0.5f64).exp();
        assert!(r.reliability.contains(exact), "{:?} vs {exact}", r.reliability);
        // mean up-time fraction of an exponential lifetime
        let avail = 100.0 * (1.0 - exact) / 50.0;
        assert!(r.availability.contains(avail), "{:?} vs {avail}", r.availability);
        assert!(r.expected_failures.contains(1.0 - exact));
    }

    #[test]
    fn deterministic_lifetime() {
        let m = single(4, 100.0);
        let before = simulate(&m, &CostModel::default(), &cfg(10, 99.0, false)).unwrap();
        let after = simulate(&m, &CostModel::default(), &cfg(10, 101.0, false)).unwrap();
        assert_eq!(before.reliability.mean, 1.0);
        assert_eq!(before.reliability.half_width(), 0.0);
        assert_eq!(after.reliability.mean, 0.0);
        assert!((after.availability.mean - 100.0 / 101.0).abs() < 1e-12);
    }

    #[test]
    fn erlang_gap_shrinks_with_levels() {
        // at 80% of the lifetime the deterministic model has not failed yet
        let gap = |n| {
            let m = single(n, 100.0);
            let det = simulate(&m, &CostModel::default(), &cfg(4_000, 80.0, false)).unwrap();
            let erl = simulate(&m, &CostModel::default(), &cfg(4_000, 80.0, true)).unwrap();
            (det.reliability.mean - erl.reliability.mean).abs()
        };
        let gaps: Vec<f64> = [1, 3, 10, 30].into_iter().map(gap).collect();
        assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
    }

    #[test]
    fn rdep_accelerates_deterministic_degradation() {
        let m = FmtModel::new("top", MaintenancePolicy::disabled())
            .with_gate(GateSpec::or("top", &["a", "b"]))
            .with_gate(GateSpec::rdep("r", "a", &["b"], 2.0))
            .with_ebe(EbeSpec::new("a", 1, 50.0, 1.0, 7.0))
            .with_ebe(EbeSpec::new("b", 2, 100.0, 1.0, 7.0));
        let runs = simulate_runs(&m, &CostModel::default(), &cfg(3, 200.0, false)).unwrap();
        // top fails at 50 when `a` fails; b would then finish at 50 + 50/2
        assert!(runs.iter().all(|r| r.failures == 1 && (r.up_time - 50.0).abs() < 1e-9));
    }

    #[test]
    fn maintenance_improves_reliability() {
        let policy = MaintenancePolicy {
            t_rep: 30.0,
            t_oh: f64::INFINITY,
            t_insp: 7.0,
            timer_stages: 3,
        };
        let unmaintained = single(3, 100.0);
        let mut m2 = unmaintained.clone();
        m2.policy = policy;
        let c = CostModel::default();
        for erlang in [false, true] {
            let a = simulate(&unmaintained, &c, &cfg(3_000, 365.0, erlang)).unwrap();
            let b = simulate(&m2, &c, &cfg(3_000, 365.0, erlang)).unwrap();
            assert!(b.reliability.mean > a.reliability.mean + 0.2);
            assert!(b.expected_cost.mean > 0.0);
        }
    }

    #[test]
    fn single_run_and_bad_config() {
        let m = single(1, 10.0);
        let one = simulate(&m, &CostModel::default(), &cfg(1, 1.0, true)).unwrap();
        assert!(one.reliability.lower.is_infinite() && one.reliability.upper.is_infinite());
        assert!(simulate(&m, &CostModel::default(), &cfg(0, 1.0, true)).is_err());
        assert!(simulate(&m, &CostModel::default(), &SimConfig { confidence: 1.0, ..cfg(10, 1.0, true) }).is_err());
    }
}
