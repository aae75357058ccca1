//! `tpath`: validate inputs, run pathways, regenerate reports, generate fixtures.
//!
//! Exit codes: 0 success, 1 invalid input, 2 unreadable or corrupt file,
//! 3 no building could be solved in some stage.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use milp::external::{solve_lp_file, ExternalBackend};
use milp::{Backend, ReferenceBackend};
use tpath::catalog::Catalog;
use tpath::fixture::{generate, write_fixture, FixtureConfig};
use tpath::model::ObjectiveMode;
use tpath::pathway::{run_pathway_with_backend, PathwayConfig, RankingMode, TransformationPath};
use tpath::report::{export_csv, export_geojson, export_measures_csv};
use tpath::scenario::ScenarioFrame;
use tpath::timegrid::Resolution;
use tpath::twin::{load_twin_file, EnergyTwin};

const EXIT_INVALID: u8 = 1;
const EXIT_IO: u8 = 2;
const EXIT_UNSOLVED: u8 = 3;

#[derive(Parser)]
#[command(name = "tpath", version, about = "Multi-stage building-stock transformation pathways")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and check a twin together with a catalog and a scenario.
    Validate(InputArgs),
    /// Optimize all stages and write the path document and exports.
    Pathway(PathwayArgs),
    /// Regenerate CSV and GeoJSON exports from a stored path document.
    Report(ReportArgs),
    /// Write a synthetic twin with sidecar profile CSVs.
    GenFixture(FixtureArgs),
    /// Solve an LP file with the reference solver (external backend protocol).
    #[command(hide = true)]
    SolveLp { model: PathBuf, result: PathBuf },
}

#[derive(Args)]
struct InputArgs {
    /// Twin JSON document.
    #[arg(long)]
    twin: PathBuf,
    /// Technology catalog TOML; the built-in catalog when omitted.
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Scenario TOML; the built-in reference trajectory when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Cost,
    Emission,
    Weighted,
}

#[derive(Clone, Copy, ValueEnum)]
enum RankingArg {
    Cost,
    Emission,
    Lexicographic,
}

#[derive(Args)]
struct PathwayArgs {
    #[command(flatten)]
    inputs: InputArgs,
    /// Output directory, created if missing.
    #[arg(long, short)]
    out: PathBuf,
    /// Run settings TOML; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated stage years, e.g. 2023,2030,2045.
    #[arg(long, value_delimiter = ',')]
    periods: Option<Vec<i32>>,
    /// `full-year` or `rep-days:<days>x<minutes>`.
    #[arg(long)]
    resolution: Option<String>,
    #[arg(long, value_enum)]
    objective: Option<ObjectiveArg>,
    #[arg(long, value_enum)]
    ranking: Option<RankingArg>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    mip_gap: Option<f64>,
    /// Per-model time limit in seconds.
    #[arg(long, env = "TPATH_TIME_LIMIT")]
    time_limit: Option<f64>,
    /// Annual renovation rate cap as a fraction.
    #[arg(long)]
    refurb_cap: Option<f64>,
    /// Annual plant conversion rate cap as a fraction.
    #[arg(long)]
    conversion_cap: Option<f64>,
    /// `reference` or an external command such as `highs-bridge --threads 1`.
    #[arg(long, env = "TPATH_SOLVER", default_value = "reference")]
    solver: String,
    /// Worker threads; all cores when omitted.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    /// Path document written by `pathway`.
    #[arg(long)]
    path: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
    /// Only export this stage year.
    #[arg(long)]
    year: Option<i32>,
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    buildings: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 2023)]
    base_year: i32,
    /// Days of hourly data.
    #[arg(long, default_value_t = 365)]
    days: usize,
    /// Gas boilers everywhere and no heat network.
    #[arg(long)]
    gas_dominated: bool,
}

/// Error carrying its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Failure { code, error: error.into() }
    }

    fn from_core(e: tpath::Error) -> Self {
        let code = if e.is_io() { EXIT_IO } else { EXIT_INVALID };
        Failure::new(code, anyhow::anyhow!(e.to_string()))
    }
}

type CmdResult = Result<(), Failure>;

fn io_err<'a>(path: &'a Path, what: &str) -> impl FnOnce(std::io::Error) -> Failure + 'a {
    let what = what.to_string();
    move |e| Failure::new(EXIT_IO, anyhow::Error::new(e).context(format!("{what} {}", path.display())))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Validate(a) => cmd_validate(&a),
        Command::Pathway(a) => cmd_pathway(&a),
        Command::Report(a) => cmd_report(&a),
        Command::GenFixture(a) => cmd_gen_fixture(&a),
        Command::SolveLp { model, result } => {
            solve_lp_file(&model, &result).map(|_| ()).map_err(|e| Failure::new(EXIT_INVALID, e))
        }
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn load_inputs(a: &InputArgs) -> Result<(EnergyTwin, Catalog, ScenarioFrame), Failure> {
    let twin = load_twin_file(&a.twin).map_err(Failure::from_core)?;
    let catalog = match &a.catalog {
        Some(p) => Catalog::load_file(p).map_err(Failure::from_core)?,
        None => Catalog::default_catalog(),
    };
    let frame = match &a.scenario {
        Some(p) => ScenarioFrame::load_file(p).map_err(Failure::from_core)?,
        None => ScenarioFrame::reference(),
    };
    twin.validate().map_err(Failure::from_core)?;
    catalog.validate().map_err(Failure::from_core)?;
    frame.validate().map_err(Failure::from_core)?;
    for b in &twin.buildings {
        for inst in &b.installed {
            catalog.tech(&inst.tech_id).map_err(|e| Failure::new(EXIT_INVALID, anyhow::Error::new(e).context(format!("building {}", b.id))))?;
        }
    }
    Ok((twin, catalog, frame))
}

fn cmd_validate(a: &InputArgs) -> CmdResult {
    let (twin, catalog, frame) = load_inputs(a)?;
    println!(
        "ok: {} buildings, {} technologies, scenario {} ({}..={})",
        twin.buildings.len(),
        catalog.technologies.len(),
        frame.id,
        frame.periods[0],
        frame.periods[frame.periods.len() - 1]
    );
    Ok(())
}

fn run_config(a: &PathwayArgs) -> Result<PathwayConfig, Failure> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(io_err(p, "cannot read config"))?;
            toml::from_str(&text).with_context(|| format!("config {}", p.display())).map_err(|e| Failure::new(EXIT_INVALID, e))?
        }
        None => PathwayConfig::default(),
    };
    if let Some(p) = &a.periods {
        cfg.periods = Some(p.clone());
    }
    if let Some(r) = &a.resolution {
        cfg.resolution = Resolution::parse(r)
            .ok_or_else(|| Failure::new(EXIT_INVALID, anyhow::anyhow!("resolution '{r}': expected full-year or rep-days:<days>x<minutes>")))?;
    }
    if let Some(o) = a.objective {
        cfg.objective_mode = match o {
            ObjectiveArg::Cost => ObjectiveMode::Cost,
            ObjectiveArg::Emission => ObjectiveMode::Emission,
            ObjectiveArg::Weighted => ObjectiveMode::Weighted,
        };
    }
    if let Some(r) = a.ranking {
        cfg.ranking_mode = match r {
            RankingArg::Cost => RankingMode::Cost,
            RankingArg::Emission => RankingMode::Emission,
            RankingArg::Lexicographic => RankingMode::Lexicographic,
        };
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(g) = a.mip_gap {
        cfg.mip_gap = g;
    }
    if let Some(t) = a.time_limit {
        cfg.time_limit_s = t;
    }
    if let Some(c) = a.refurb_cap {
        cfg.refurb_rate_cap = Some(c);
    }
    if let Some(c) = a.conversion_cap {
        cfg.conversion_rate_cap = Some(c);
    }
    if !(cfg.mip_gap >= 0.0 && cfg.time_limit_s > 0.0) {
        return Err(Failure::new(EXIT_INVALID, anyhow::anyhow!("mip gap must be >= 0 and time limit > 0")));
    }
    Ok(cfg)
}

fn backend(spec: &str) -> Result<Box<dyn Backend>, Failure> {
    if spec == "reference" {
        return Ok(Box::new(ReferenceBackend));
    }
    ExternalBackend::from_command_line(spec).map(|b| Box::new(b) as Box<dyn Backend>).map_err(|e| Failure::new(EXIT_INVALID, e))
}

fn cmd_pathway(a: &PathwayArgs) -> CmdResult {
    let (twin, catalog, frame) = load_inputs(&a.inputs)?;
    let cfg = run_config(a)?;
    let backend = backend(&a.solver)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = a.jobs {
        pool = pool.num_threads(j.max(1));
    }
    let pool = pool.build().map_err(|e| Failure::new(EXIT_INVALID, e))?;
    let path = pool
        .install(|| run_pathway_with_backend(&twin, &catalog, &frame, &cfg, backend.as_ref()))
        .map_err(Failure::from_core)?;

    fs::create_dir_all(&a.out).map_err(io_err(&a.out, "cannot create"))?;
    let doc = a.out.join("path.json");
    let mut text = path.to_json().map_err(Failure::from_core)?;
    text.push('\n');
    fs::write(&doc, text).map_err(io_err(&doc, "cannot write"))?;
    write_exports(&path, &a.out, None)?;
    print_summary(&path);
    for d in &path.diagnostics {
        eprintln!("warning: {} {}: {}", d.stage_year, d.building_id, d.message);
    }
    if let Some(s) = path.stages.iter().find(|s| s.solutions.is_empty() && !path.buildings.is_empty()) {
        return Err(Failure::new(EXIT_UNSOLVED, anyhow::anyhow!("no building could be solved in stage {}", s.year)));
    }
    Ok(())
}

fn print_summary(path: &TransformationPath) {
    println!("{:>6} {:>9} {:>16} {:>16}", "year", "measures", "cost_eur", "emissions_kg");
    for s in &path.stages {
        println!("{:>6} {:>9} {:>16.2} {:>16.2}", s.year, s.measures.len(), s.report.cost_total, s.report.emission_sum);
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, Failure> {
    fs::File::create(path).map(BufWriter::new).map_err(io_err(path, "cannot write"))
}

/// Per stage: `report_<year>.csv`, `measures_<year>.csv`, `buildings_<year>.geojson`.
fn write_exports(path: &TransformationPath, out: &Path, year: Option<i32>) -> CmdResult {
    let years: Vec<i32> = path.stages.iter().map(|s| s.year).filter(|y| year.map_or(true, |w| w == *y)).collect();
    if let (Some(y), true) = (year, years.is_empty()) {
        return Err(Failure::new(EXIT_INVALID, anyhow::anyhow!("path has no stage {y}")));
    }
    for y in years {
        let file = out.join(format!("report_{y}.csv"));
        let mut w = create(&file)?;
        export_csv(path, Some(y), &mut w).map_err(Failure::from_core)?;
        w.flush().map_err(io_err(&file, "cannot write"))?;

        let file = out.join(format!("measures_{y}.csv"));
        let mut w = create(&file)?;
        export_measures_csv(path, Some(y), &mut w).map_err(Failure::from_core)?;
        w.flush().map_err(io_err(&file, "cannot write"))?;

        let file = out.join(format!("buildings_{y}.geojson"));
        let mut w = create(&file)?;
        export_geojson(path, y, &mut w).map_err(Failure::from_core)?;
        w.flush().map_err(io_err(&file, "cannot write"))?;
    }
    Ok(())
}

fn cmd_report(a: &ReportArgs) -> CmdResult {
    let text = fs::read_to_string(&a.path).map_err(io_err(&a.path, "cannot read"))?;
    let path = TransformationPath::from_json(&text).map_err(|e| Failure::new(EXIT_IO, e))?;
    fs::create_dir_all(&a.out).map_err(io_err(&a.out, "cannot create"))?;
    write_exports(&path, &a.out, a.year)
}

fn cmd_gen_fixture(a: &FixtureArgs) -> CmdResult {
    if a.buildings == 0 || a.days == 0 {
        return Err(Failure::new(EXIT_INVALID, anyhow::anyhow!("buildings and days must be positive")));
    }
    let cfg = FixtureConfig { buildings: a.buildings, seed: a.seed, base_year: a.base_year, gas_dominated: a.gas_dominated, days: a.days };
    let fixture = generate(&cfg);
    fs::create_dir_all(&a.out).map_err(io_err(&a.out, "cannot create"))?;
    let twin = write_fixture(&fixture.twin, &a.out).map_err(Failure::from_core)?;
    println!("wrote {} buildings to {}", fixture.twin.buildings.len(), twin.display());
    Ok(())
}
