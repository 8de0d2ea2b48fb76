use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use ecogrid::contingency::{survivability, ElementClass, EvaluationOptions};
use ecogrid::eco_matrix::{
    build_eco_matrix_with, conservation_report, AbsorbedReactive, FlowType, MatrixConventions,
    RedundancyMode,
};
use ecogrid::metadata::{Conventions, Metadata};
use ecogrid::powerflow::{solve, PowerFlowError, PowerFlowSolution, SolverOptions};
use ecogrid::stats::{self, CaseReport, ComparisonReport};
use ecogrid::{load_case, LoadedCase};

#[derive(Parser)]
#[command(
    name = "ecogrid",
    version,
    about = "Ecological robustness of power-grid operating points"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the AC power flow.
    Pf(PfArgs),
    /// Build one ecological flow matrix and write it as CSV.
    Matrix(MatrixArgs),
    /// Robustness metrics for one or all flow type / mode combinations.
    Reco(RecoArgs),
    /// Branch-flow statistics.
    Stats(StatsArgs),
    /// N-x survivability study.
    Contingency(ContingencyArgs),
    /// Combined robustness, statistics and survivability report.
    Report(ReportArgs),
}

#[derive(Args, Clone)]
struct SolveArgs {
    /// Largest nodal mismatch accepted, per unit.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 30)]
    max_iter: usize,
    /// Do not switch PV buses to PQ at reactive limits.
    #[arg(long)]
    no_q_limits: bool,
    /// Start from the case voltages instead of a flat profile.
    #[arg(long)]
    warm_start: bool,
}

impl SolveArgs {
    fn options(&self) -> SolverOptions {
        SolverOptions {
            tolerance: self.tol,
            max_iterations: self.max_iter,
            flat_start: !self.warm_start,
            enforce_q_limits: !self.no_q_limits,
        }
    }
}

#[derive(Args, Clone)]
struct MatrixOpts {
    /// Sink for power absorbed by generators.
    #[arg(long, default_value = "dissipation")]
    absorbed: AbsorbedReactive,
}

impl MatrixOpts {
    fn conventions(&self) -> MatrixConventions {
        MatrixConventions {
            absorbed_reactive: self.absorbed,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct PfArgs {
    /// Case file path or built-in alias (ieee24).
    #[arg(long)]
    case: String,
    #[command(flatten)]
    solve: SolveArgs,
    /// Write the solution JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write per-branch flows as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct MatrixArgs {
    #[arg(long)]
    case: String,
    #[arg(long)]
    flow: FlowType,
    #[arg(long)]
    mode: RedundancyMode,
    #[command(flatten)]
    solve: SolveArgs,
    #[command(flatten)]
    matrix: MatrixOpts,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RecoArgs {
    #[arg(long)]
    case: String,
    #[arg(long, required_unless_present = "all")]
    flow: Option<FlowType>,
    #[arg(long, required_unless_present = "all")]
    mode: Option<RedundancyMode>,
    /// All three flow types under both modes.
    #[arg(long, conflicts_with_all = ["flow", "mode"])]
    all: bool,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    #[command(flatten)]
    solve: SolveArgs,
    #[command(flatten)]
    matrix: MatrixOpts,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    /// Repeat for several cases.
    #[arg(long, required = true)]
    case: Vec<String>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    #[command(flatten)]
    solve: SolveArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct StudyArgs {
    /// Largest outage size; depths 1..=depth are run.
    #[arg(long, default_value_t = 1)]
    depth: usize,
    #[arg(long, value_delimiter = ',', default_value = "branch,gen")]
    classes: Vec<ElementClass>,
    /// Sample at most this many outages per depth.
    #[arg(long)]
    cap: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, env = "ECOGRID_JOBS", default_value_t = 1)]
    jobs: usize,
    /// Lower voltage limit overriding the case values, pu.
    #[arg(long, requires = "vmax")]
    vmin: Option<f64>,
    #[arg(long, requires = "vmin")]
    vmax: Option<f64>,
}

impl StudyArgs {
    fn voltage_limits(&self) -> Result<Option<(f64, f64)>> {
        match (self.vmin, self.vmax) {
            (Some(lo), Some(hi)) if lo < hi => Ok(Some((lo, hi))),
            (Some(lo), Some(hi)) => bail!("--vmin {lo} must be below --vmax {hi}"),
            _ => Ok(None),
        }
    }
}

#[derive(Args)]
struct ContingencyArgs {
    #[arg(long)]
    case: String,
    #[command(flatten)]
    study: StudyArgs,
    #[command(flatten)]
    solve: SolveArgs,
    /// Summary report JSON; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-contingency CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, required = true)]
    case: Vec<String>,
    /// Include an N-x survivability summary.
    #[arg(long)]
    survivability: bool,
    #[command(flatten)]
    study: StudyArgs,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    #[command(flatten)]
    solve: SolveArgs,
    #[command(flatten)]
    matrix: MatrixOpts,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn emit(out: Option<&PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output serialises");
    s.push('\n');
    s
}

fn load(arg: &str) -> Result<LoadedCase> {
    Ok(load_case(arg)?)
}

fn solved(case: &LoadedCase, args: &SolveArgs) -> Result<PowerFlowSolution> {
    solve(&case.network, &args.options()).with_context(|| format!("solving {}", case.source))
}

#[derive(Serialize)]
struct PfOutput<'a> {
    metadata: Metadata,
    options: SolverOptions,
    #[serde(flatten)]
    solution: &'a PowerFlowSolution,
}

fn run_pf(a: PfArgs) -> Result<()> {
    let case = load(&a.case)?;
    let sol = solved(&case, &a.solve)?;
    if let Some(path) = &a.csv {
        emit(Some(path), &stats::branch_flows_csv(&sol.branches))?;
    }
    let out = PfOutput {
        metadata: Metadata::for_case(&case, Conventions::default()),
        options: a.solve.options(),
        solution: &sol,
    };
    emit(a.out.as_ref(), &to_json(&out))
}

fn run_matrix(a: MatrixArgs) -> Result<()> {
    let case = load(&a.case)?;
    let sol = solved(&case, &a.solve)?;
    let m = build_eco_matrix_with(&case.network, &sol, a.flow, a.mode, &a.matrix.conventions())?;
    let report = conservation_report(&m, 1e-6);
    if let Some(v) = report.violations().first() {
        bail!("actor {} is out of balance by {}", v.actor, v.imbalance);
    }
    emit(a.out.as_ref(), &m.to_csv())
}

#[derive(Serialize)]
struct RecoOutput {
    metadata: Metadata,
    case: String,
    results: Vec<stats::RecoEntry>,
}

fn run_reco(a: RecoArgs) -> Result<()> {
    let case = load(&a.case)?;
    let sol = solved(&case, &a.solve)?;
    let conv = a.matrix.conventions();
    let results: Vec<stats::RecoEntry> = if a.all {
        stats::reco_table(&case.network, &sol, &conv)?
    } else {
        let (flow, mode) = (a.flow.expect("required"), a.mode.expect("required"));
        let m = build_eco_matrix_with(&case.network, &sol, flow, mode, &conv)?;
        vec![stats::RecoEntry {
            flow,
            mode,
            actors: m.actors.len(),
            metrics: m.metrics()?,
        }]
    };
    let text = match a.format {
        Format::Json => to_json(&RecoOutput {
            metadata: Metadata::for_case(&case, Conventions::new(&conv)),
            case: case.network.name.clone(),
            results,
        }),
        Format::Csv => {
            let mut wtr = csv::Writer::from_writer(Vec::new());
            wtr.write_record([
                "flow",
                "mode",
                "actors",
                "tstp",
                "asc",
                "dc",
                "ratio",
                "robustness",
            ])?;
            for e in &results {
                let m = &e.metrics;
                wtr.write_record([
                    e.flow.to_string(),
                    e.mode.to_string(),
                    e.actors.to_string(),
                    m.tstp.to_string(),
                    m.asc.to_string(),
                    m.dc.to_string(),
                    m.ratio.to_string(),
                    m.robustness.to_string(),
                ])?;
            }
            String::from_utf8(wtr.into_inner()?)?
        }
    };
    emit(a.out.as_ref(), &text)
}

#[derive(Serialize)]
struct StatsOutput {
    metadata: Metadata,
    cases: Vec<StatsRow>,
}

#[derive(Serialize)]
struct StatsRow {
    case: String,
    stats: [stats::FlowStats; 3],
}

fn run_stats(a: StatsArgs) -> Result<()> {
    let mut rows = Vec::new();
    let mut infos = Vec::new();
    for arg in &a.case {
        let case = load(arg)?;
        let sol = solved(&case, &a.solve)?;
        rows.push((
            case.network.name.clone(),
            stats::table_stats(&sol.branches)?,
        ));
        infos.extend(Metadata::for_case(&case, Conventions::default()).cases);
    }
    let text = match a.format {
        Format::Csv => stats::stats_csv(&rows),
        Format::Json => to_json(&StatsOutput {
            metadata: Metadata::new(infos, Conventions::default()),
            cases: rows
                .into_iter()
                .map(|(case, stats)| StatsRow { case, stats })
                .collect(),
        }),
    };
    emit(a.out.as_ref(), &text)
}

#[derive(Serialize)]
struct ContingencyOutput<'a> {
    metadata: Metadata,
    #[serde(flatten)]
    report: &'a ecogrid::SurvivabilityReport,
}

fn study(
    case: &LoadedCase,
    s: &StudyArgs,
    solve: &SolveArgs,
) -> Result<ecogrid::SurvivabilityReport> {
    if s.jobs == 0 {
        bail!("--jobs must be at least 1");
    }
    let options = EvaluationOptions {
        solver: solve.options(),
        voltage_limits: s.voltage_limits()?,
    };
    Ok(survivability(
        &case.network,
        s.depth,
        &s.classes,
        &options,
        s.cap,
        s.seed,
        s.jobs,
    )?)
}

fn run_contingency(a: ContingencyArgs) -> Result<()> {
    let case = load(&a.case)?;
    let report = study(&case, &a.study, &a.solve)?;
    if let Some(path) = &a.csv {
        emit(Some(path), &report.results_csv())?;
    }
    emit(
        a.out.as_ref(),
        &to_json(&ContingencyOutput {
            metadata: Metadata::for_case(&case, Conventions::default()),
            report: &report,
        }),
    )
}

fn run_report(a: ReportArgs) -> Result<()> {
    let conv = a.matrix.conventions();
    let mut cases = Vec::new();
    let mut infos = Vec::new();
    for arg in &a.case {
        let case = load(arg)?;
        let sol = solved(&case, &a.solve)?;
        let mut rep = CaseReport::build(&case.network.name, &case.network, &sol, &conv)?;
        if a.survivability {
            rep.survivability = Some(study(&case, &a.study, &a.solve)?.depths);
        }
        cases.push(rep);
        infos.extend(Metadata::for_case(&case, Conventions::new(&conv)).cases);
    }
    let report = ComparisonReport {
        metadata: Metadata::new(infos, Conventions::new(&conv)),
        cases,
    };
    let text = match a.format {
        Format::Json => {
            let mut s = report.to_json();
            s.push('\n');
            s
        }
        Format::Csv => report.to_csv(),
    };
    emit(a.out.as_ref(), &text)
}

fn is_divergence(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        matches!(
            e.downcast_ref::<PowerFlowError>(),
            Some(PowerFlowError::Diverged { .. } | PowerFlowError::SingularJacobian { .. })
        ) || matches!(
            e.downcast_ref::<ecogrid::Error>(),
            Some(ecogrid::Error::PowerFlow(
                PowerFlowError::Diverged { .. } | PowerFlowError::SingularJacobian { .. }
            ))
        )
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Pf(a) => run_pf(a),
        Command::Matrix(a) => run_matrix(a),
        Command::Reco(a) => run_reco(a),
        Command::Stats(a) => run_stats(a),
        Command::Contingency(a) => run_contingency(a),
        Command::Report(a) => run_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if is_divergence(&err) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
