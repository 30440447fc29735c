use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use faultmaint::analysis::{compute_metric_many, AnalysisOptions};
use faultmaint::model::{policy_warnings, validate, InvalidModel};
use faultmaint::parser::parse_duration;
use faultmaint::semantics::{export_prism, DEFAULT_BUDGET};
use faultmaint::{
    abstract_analyze, compare, compile, parse, simulate_runs, summarize, AnalysisResult, CompileOptions, CostModel,
    DecompositionOptions, Error, FmtModel, GateKind, Metric, Node, ParseError, SimConfig, SimResult, Strategy,
    StrategySet, TransientOptions,
};

const EXIT_RUNTIME: u8 = 1;
const EXIT_IO: u8 = 2;
const EXIT_INPUT: u8 = 3;
const EXIT_BUDGET: u8 = 4;

#[derive(Parser)]
#[command(name = "faultmaint", version, about = "Fault maintenance tree analysis")]
struct Cli {
    /// Worker threads for analysis and simulation (default: all cores).
    #[arg(long, global = true, env = "FAULTMAINT_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a model.
    Check { model: PathBuf },
    /// Compute metrics over a set of horizons.
    Analyze(AnalyzeArgs),
    /// Monolithic versus decomposed analysis, side by side.
    Compare(CompareArgs),
    /// Expected cost and failures for every strategy of a strategy file.
    Sweep(SweepArgs),
    /// Monte Carlo estimates of the four metrics.
    Simulate(SimulateArgs),
    /// Write the model as a PRISM CTMC plus its properties.
    ExportPrism(ExportArgs),
    /// Print the composed CTMC.
    DumpCtmc(DumpArgs),
}

#[derive(Args)]
struct ModelArgs {
    model: PathBuf,
    /// Strategy file overriding the maintenance periods.
    #[arg(long)]
    strategies: Option<PathBuf>,
    /// Strategy to apply from --strategies (default: the first one).
    #[arg(long, requires = "strategies")]
    strategy: Option<String>,
    /// Cost overrides, e.g. `repair=100,replace=5000,operational=1,failure=50`.
    #[arg(long, value_parser = parse_costs_arg)]
    costs: Option<CostOverride>,
}

#[derive(Args, Clone)]
struct EngineArgs {
    /// Maximum number of composite states.
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    budget: usize,
    /// Poisson truncation tolerance of uniformization.
    #[arg(long, default_value_t = 1e-10)]
    tolerance: f64,
    /// Analyse module by module through equivalent failure rates.
    #[arg(long)]
    decompose: bool,
    /// Erlang stages of the abstract events used by --decompose.
    #[arg(long, default_value_t = 1)]
    abstract_stages: u32,
}

#[derive(Args)]
struct OutputArgs {
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Write to a file instead of stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Comma-separated metrics: reliability, availability, expected_cost, expected_failures.
    #[arg(long, value_delimiter = ',', default_value = "reliability")]
    metric: Vec<Metric>,
    /// Horizons such as `0:25:5y`, `1y,10y` or `365`.
    #[arg(long, value_parser = parse_horizons_arg)]
    horizons: Horizons,
    #[command(flatten)]
    engine: EngineArgs,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value = "reliability")]
    metric: Metric,
    #[arg(long, value_parser = parse_horizons_arg)]
    horizons: Horizons,
    #[command(flatten)]
    engine: EngineArgs,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct SweepArgs {
    model: PathBuf,
    #[arg(long)]
    strategies: PathBuf,
    #[arg(long, value_parser = parse_horizons_arg)]
    horizons: Horizons,
    #[arg(long, value_parser = parse_costs_arg)]
    costs: Option<CostOverride>,
    #[command(flatten)]
    engine: EngineArgs,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_parser = parse_duration_arg)]
    horizon: f64,
    #[arg(long, default_value_t = 10_000)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.99)]
    confidence: f64,
    /// Erlang-distributed delays, matching the numeric model.
    #[arg(long)]
    erlang: bool,
    /// Also run the numeric engine and report the gap per metric.
    #[arg(long)]
    compare: bool,
    /// Write the per-run summaries to this CSV file.
    #[arg(long)]
    runs_csv: Option<PathBuf>,
    #[command(flatten)]
    engine: EngineArgs,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Model file (stdout when absent).
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Properties file.
    #[arg(long)]
    props: Option<PathBuf>,
}

#[derive(Args)]
struct DumpArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    budget: usize,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Clone, Debug)]
struct Horizons(Vec<f64>);

#[derive(Clone, Debug, Default)]
struct CostOverride {
    repair: Option<f64>,
    replace: Option<f64>,
    operational: Option<f64>,
    failure: Option<f64>,
}

impl CostOverride {
    fn apply(&self, base: &CostModel) -> CostModel {
        CostModel {
            cost_repair: self.repair.unwrap_or(base.cost_repair),
            cost_replace: self.replace.unwrap_or(base.cost_replace),
            cost_operational_per_day: self.operational.unwrap_or(base.cost_operational_per_day),
            cost_failure_per_day: self.failure.unwrap_or(base.cost_failure_per_day),
        }
    }
}

/// Malformed user input outside the model text (strategy files).
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct InputError(String);

fn parse_duration_arg(s: &str) -> Result<f64, String> {
    parse_duration(s.trim()).map_err(|e| e.to_string())
}

/// `a:b:step` ranges take the unit of their last part when the others have
/// none; lists are comma separated and may mix ranges and single values.
fn parse_horizons_arg(s: &str) -> Result<Horizons, String> {
    let mut out = Vec::new();
    for item in s.split(',').map(str::trim).filter(|i| !i.is_empty()) {
        let parts: Vec<&str> = item.split(':').collect();
        match parts.len() {
            1 => out.push(parse_duration_arg(item)?),
            3 => {
                let unit: String = parts[2].chars().skip_while(|c| c.is_ascii_digit() || *c == '.').collect();
                let with_unit = |p: &str| {
                    if p.ends_with(|c: char| c.is_ascii_digit()) {
                        format!("{p}{unit}")
                    } else {
                        p.to_string()
                    }
                };
                let start = parse_duration_arg(&with_unit(parts[0]))?;
                let stop = parse_duration_arg(&with_unit(parts[1]))?;
                let step = parse_duration_arg(parts[2])?;
                if !(step > 0.0) || stop < start || !stop.is_finite() {
                    return Err(format!("bad range `{item}`"));
                }
                let n = ((stop - start) / step + 1e-9).floor() as usize;
                out.extend((0..=n).map(|k| start + k as f64 * step));
            }
            _ => return Err(format!("bad horizon `{item}`; use `t`, `a:b:step` or a comma list")),
        }
    }
    if out.is_empty() {
        return Err("no horizons given".into());
    }
    if let Some(bad) = out.iter().find(|h| !(h.is_finite() && **h >= 0.0)) {
        return Err(format!("horizon {bad} is not a finite non-negative time"));
    }
    Ok(Horizons(out))
}

fn parse_costs_arg(s: &str) -> Result<CostOverride, String> {
    let mut c = CostOverride::default();
    for item in s.split(',').map(str::trim).filter(|i| !i.is_empty()) {
        let (key, value) = item.split_once('=').ok_or_else(|| format!("expected key=value, got `{item}`"))?;
        let v: f64 = value.trim().parse().map_err(|_| format!("bad number `{value}`"))?;
        if !(v.is_finite() && v >= 0.0) {
            return Err(format!("cost `{key}` must be finite and non-negative"));
        }
        let slot = match key.trim() {
            "repair" => &mut c.repair,
            "replace" => &mut c.replace,
            "operational" => &mut c.operational,
            "failure" => &mut c.failure,
            other => return Err(format!("unknown cost `{other}`")),
        };
        *slot = Some(v);
    }
    Ok(c)
}

fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn load_model(path: &Path) -> anyhow::Result<FmtModel> {
    let text = read(path)?;
    let model = parse(&text).with_context(|| format!("{}: parse error", path.display()))?;
    let violations = validate(&model);
    if !violations.is_empty() {
        return Err(anyhow::Error::new(InvalidModel(violations)).context(format!("{}: invalid model", path.display())));
    }
    Ok(model)
}

fn load_strategies(path: &Path) -> anyhow::Result<Vec<Strategy>> {
    let text = read(path)?;
    let set: StrategySet = toml::from_str(&text)
        .map_err(|e| InputError(format!("{}: malformed strategy file: {e}", path.display())))?;
    if set.strategy.is_empty() {
        return Err(InputError(format!("{}: no strategies", path.display())).into());
    }
    Ok(set.strategy)
}

/// The model with the chosen strategy applied, and the effective costs.
fn prepare(args: &ModelArgs) -> anyhow::Result<(FmtModel, CostModel)> {
    let mut model = load_model(&args.model)?;
    if let Some(path) = &args.strategies {
        let all = load_strategies(path)?;
        let chosen = match &args.strategy {
            Some(name) => all
                .iter()
                .find(|s| &s.name == name)
                .ok_or_else(|| InputError(format!("strategy `{name}` not found in {}", path.display())))?,
            None => &all[0],
        };
        model = chosen.apply(&model);
    }
    let cost = args.costs.clone().unwrap_or_default().apply(&model.costs);
    Ok((model, cost))
}

fn analysis_options(e: &EngineArgs) -> DecompositionOptions {
    DecompositionOptions {
        analysis: AnalysisOptions {
            compile: CompileOptions {
                budget: e.budget,
                ..CompileOptions::default()
            },
            transient: TransientOptions {
                tolerance: e.tolerance,
                ..TransientOptions::default()
            },
        },
        abstract_stages: e.abstract_stages,
    }
}

fn run_metric(
    model: &FmtModel,
    metric: Metric,
    horizons: &[f64],
    cost: &CostModel,
    engine: &EngineArgs,
) -> anyhow::Result<Vec<AnalysisResult>> {
    let opts = analysis_options(engine);
    let res = if engine.decompose {
        abstract_analyze(model, metric, horizons, cost, &opts).map(|r| r.results)
    } else {
        compute_metric_many(model, metric, horizons, cost, &opts.analysis)
    };
    res.map_err(|e| {
        let hint = matches!(e, Error::BudgetExceeded { .. }) && !engine.decompose;
        let err = anyhow::Error::new(e);
        if hint {
            err.context("analysis exceeded the state budget; rerun with --decompose or a larger --budget")
        } else {
            err
        }
    })
}

fn sink(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(io::BufWriter::new(
            fs::File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(io::BufWriter::new(io::stdout().lock())),
    })
}

fn emit<T: Serialize>(rows: &[T], out: &OutputArgs) -> anyhow::Result<()> {
    write_rows(rows, out.format, out.output.as_deref())
}

fn write_rows<T: Serialize>(rows: &[T], format: Format, path: Option<&Path>) -> anyhow::Result<()> {
    let mut w = sink(path)?;
    match format {
        Format::Csv => {
            let mut csv = csv::Writer::from_writer(&mut w);
            for r in rows {
                csv.serialize(r)?;
            }
            csv.flush()?;
        }
        Format::Json => {
            serde_json::to_writer_pretty(&mut w, rows)?;
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_check(path: &Path) -> anyhow::Result<()> {
    let model = load_model(path)?;
    let (mut events, mut gates, mut rdeps) = (0, 0, 0);
    for n in model.nodes.values() {
        match n {
            Node::Ebe(_) => events += 1,
            Node::Gate(g) if matches!(g.kind, GateKind::Rdep { .. }) => rdeps += 1,
            Node::Gate(_) => gates += 1,
        }
    }
    println!(
        "{}: ok, top `{}`, {events} events, {gates} OR gates, {rdeps} RDEPs",
        path.display(),
        model.top_event
    );
    for w in policy_warnings(&model.policy) {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn cmd_analyze(a: &AnalyzeArgs) -> anyhow::Result<()> {
    let (model, cost) = prepare(&a.model)?;
    let mut rows = Vec::new();
    for &m in &a.metric {
        rows.extend(run_metric(&model, m, &a.horizons.0, &cost, &a.engine)?);
    }
    emit(&rows, &a.out)
}

fn cmd_compare(a: &CompareArgs) -> anyhow::Result<()> {
    let (model, cost) = prepare(&a.model)?;
    let rows = compare(&model, a.metric, &a.horizons.0, &cost, &analysis_options(&a.engine))?;
    emit(&rows, &a.out)
}

#[derive(Debug, Clone, Serialize)]
struct SweepRow {
    strategy: String,
    horizon_days: f64,
    expected_cost: f64,
    expected_failures: f64,
    /// Not dominated in (cost, failures) by another strategy at the last horizon.
    frontier: bool,
}

/// Indices of the points no other point beats in both coordinates.
fn pareto(points: &[(f64, f64)]) -> Vec<bool> {
    points
        .iter()
        .map(|&(c, f)| {
            !points
                .iter()
                .any(|&(c2, f2)| c2 <= c && f2 <= f && (c2 < c || f2 < f))
        })
        .collect()
}

fn cmd_sweep(a: &SweepArgs) -> anyhow::Result<()> {
    let model = load_model(&a.model)?;
    let strategies = load_strategies(&a.strategies)?;
    let horizons = &a.horizons.0;
    let per: Vec<(Vec<AnalysisResult>, Vec<AnalysisResult>)> = strategies
        .par_iter()
        .map(|s| {
            let m = s.apply(&model);
            let cost = a.costs.clone().unwrap_or_default().apply(&m.costs);
            let c = run_metric(&m, Metric::ExpectedCost, horizons, &cost, &a.engine)?;
            let f = run_metric(&m, Metric::ExpectedFailures, horizons, &cost, &a.engine)?;
            Ok((c, f))
        })
        .collect::<anyhow::Result<_>>()?;
    let last: Vec<(f64, f64)> = per
        .iter()
        .map(|(c, f)| (c.last().map_or(0.0, |r| r.value), f.last().map_or(0.0, |r| r.value)))
        .collect();
    let front = pareto(&last);
    let mut rows = Vec::new();
    for ((s, (c, f)), &frontier) in strategies.iter().zip(&per).zip(&front) {
        for (rc, rf) in c.iter().zip(f) {
            rows.push(SweepRow {
                strategy: s.name.clone(),
                horizon_days: rc.horizon_days,
                expected_cost: rc.value,
                expected_failures: rf.value,
                frontier,
            });
        }
    }
    emit(&rows, &a.out)
}

#[derive(Debug, Clone, Serialize)]
struct Gap {
    metric: Metric,
    numeric: f64,
    simulated: f64,
    lower: f64,
    upper: f64,
    gap: f64,
    within_ci: bool,
}

#[derive(Debug, Serialize)]
struct SimOutput {
    #[serde(flatten)]
    result: SimResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    comparison: Option<Vec<Gap>>,
}

#[derive(Debug, Serialize)]
struct EstimateRow {
    metric: Metric,
    mean: f64,
    std_err: f64,
    lower: f64,
    upper: f64,
    numeric: Option<f64>,
    within_ci: Option<bool>,
}

fn cmd_simulate(a: &SimulateArgs) -> anyhow::Result<()> {
    let (model, cost) = prepare(&a.model)?;
    let cfg = SimConfig {
        runs: a.runs,
        horizon: a.horizon,
        seed: a.seed,
        confidence: a.confidence,
        erlang_mode: a.erlang,
    };
    let runs = simulate_runs(&model, &cost, &cfg)?;
    let result = summarize(&model, &runs, &cfg)?;
    if let Some(path) = &a.runs_csv {
        write_rows(&runs, Format::Csv, Some(path))?;
    }
    let comparison = if a.compare {
        let mut gaps = Vec::new();
        for m in Metric::ALL {
            let numeric = run_metric(&model, m, &[a.horizon], &cost, &a.engine)?[0].value;
            let e = result.estimate(m);
            gaps.push(Gap {
                metric: m,
                numeric,
                simulated: e.mean,
                lower: e.lower,
                upper: e.upper,
                gap: e.mean - numeric,
                within_ci: e.contains(numeric),
            });
        }
        Some(gaps)
    } else {
        None
    };
    match a.format {
        Format::Json => {
            let mut w = sink(a.output.as_deref())?;
            serde_json::to_writer_pretty(&mut w, &SimOutput { result, comparison })?;
            writeln!(w)?;
            w.flush()?;
            Ok(())
        }
        Format::Csv => {
            let rows: Vec<EstimateRow> = Metric::ALL
                .iter()
                .map(|&m| {
                    let e = result.estimate(m);
                    let g = comparison.as_ref().and_then(|c| c.iter().find(|g| g.metric == m));
                    EstimateRow {
                        metric: m,
                        mean: e.mean,
                        std_err: e.std_err,
                        lower: e.lower,
                        upper: e.upper,
                        numeric: g.map(|g| g.numeric),
                        within_ci: g.map(|g| g.within_ci),
                    }
                })
                .collect();
            write_rows(&rows, Format::Csv, a.output.as_deref())
        }
    }
}

fn cmd_export_prism(a: &ExportArgs) -> anyhow::Result<()> {
    let (model, cost) = prepare(&a.model)?;
    let (text, props) = export_prism(&model, &cost)?;
    let mut w = sink(a.output.as_deref())?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    if let Some(p) = &a.props {
        fs::write(p, props).with_context(|| format!("cannot write {}", p.display()))?;
    }
    Ok(())
}

fn cmd_dump_ctmc(a: &DumpArgs) -> anyhow::Result<()> {
    let (model, cost) = prepare(&a.model)?;
    let opts = CompileOptions {
        budget: a.budget,
        ..CompileOptions::default()
    };
    let compiled = compile(&model, &cost, &opts)?;
    let mut w = sink(a.output.as_deref())?;
    w.write_all(compiled.named_ctmc().dump().as_bytes())?;
    w.flush()?;
    Ok(())
}

/// Exit code for an error chain: the first recognised cause wins.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<io::Error>() {
            return EXIT_IO;
        }
        if cause.is::<ParseError>() || cause.is::<InvalidModel>() || cause.is::<InputError>() {
            return EXIT_INPUT;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::BudgetExceeded { .. } => EXIT_BUDGET,
                Error::Invalid(_) => EXIT_INPUT,
                _ => EXIT_RUNTIME,
            };
        }
    }
    EXIT_RUNTIME
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| anyhow!("cannot start {n} worker threads: {e}"))?;
    }
    match &cli.command {
        Command::Check { model } => cmd_check(model),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Simulate(a) => {
            if a.runs == 0 {
                bail!(InputError("--runs must be positive".into()));
            }
            cmd_simulate(a)
        }
        Command::ExportPrism(a) => cmd_export_prism(a),
        Command::DumpCtmc(a) => cmd_dump_ctmc(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_RUNTIME) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(InvalidModel(vs)) = e.chain().find_map(|c| c.downcast_ref::<InvalidModel>()) {
                eprintln!("error: {e}");
                for v in vs {
                    eprintln!("  {v}");
                }
            } else {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_take_the_unit_of_the_step() {
        let h = parse_horizons_arg("0:25:5y").unwrap().0;
        assert_eq!(h.len(), 6);
        assert_eq!(h[5], 25.0 * 365.0);
        assert_eq!(parse_horizons_arg("0,10,1y").unwrap().0, vec![0.0, 10.0, 365.0]);
        assert_eq!(parse_horizons_arg("1:3:1,7d").unwrap().0, vec![1.0, 2.0, 3.0, 7.0]);
    }

    #[test]
    fn bad_horizons_are_rejected() {
        for s in ["", "5:1:1", "0:5:0", "1:2", "inf", "-3", "3x"] {
            assert!(parse_horizons_arg(s).is_err(), "{s}");
        }
    }

    #[test]
    fn cost_overrides() {
        let c = parse_costs_arg("repair=1, failure=2").unwrap().apply(&CostModel::default());
        assert_eq!(c.cost_repair, 1.0);
        assert_eq!(c.cost_failure_per_day, 2.0);
        assert_eq!(c.cost_replace, CostModel::default().cost_replace);
        assert!(parse_costs_arg("labour=3").is_err());
        assert!(parse_costs_arg("repair=-1").is_err());
    }

    #[test]
    fn pareto_front() {
        let f = pareto(&[(1.0, 5.0), (2.0, 2.0), (3.0, 3.0), (5.0, 1.0)]);
        assert_eq!(f, vec![true, true, false, true]);
    }
}
