//! The `pcit` command line.
//!
//! Budget flags fall back to the environment (`PCIT_TC`, `PCIT_TV`,
//! `PCIT_REPETITIONS`, `PCIT_PHASES`, `PCIT_BLOCK`), then to the scenario's
//! `[defaults]`, then to built-in values.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::construct::{
    parse_duration, plan_budget, BudgetPlan, ConstructOptions, Constructor, Method, Normalization, PortfolioFile,
    DEFAULT_PHASES, DEFAULT_REPETITIONS,
};
use crate::error::{Error, Result};
use crate::evaluation::{compare_reports, test_portfolio, TestReport};
use crate::scenario::{load_scenario, write_synthetic, Defaults, LoadedScenario};
use crate::synthetic::{generate, SynthParams};

#[derive(Debug, Parser)]
#[command(name = "pcit", version, about = "Automatic construction of parallel algorithm portfolios")]
pub struct Cli {
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    pub cores: Option<usize>,
    /// Directory for artifacts.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a portfolio and write it with its construction log.
    Construct(ConstructArgs),
    /// Test a portfolio on the scenario's test instances.
    Test(TestArgs),
    /// Paired permutation tests between two test reports.
    Compare(CompareArgs),
    /// Generate a planted synthetic scenario.
    SynthGen(SynthArgs),
    /// Print the budget plan of a method.
    Plan(PlanArgs),
}

#[derive(Debug, Args)]
pub struct BudgetArgs {
    /// Configuration budget, e.g. `36h`, `90m`, `20s`.
    #[arg(long, env = "PCIT_TC")]
    pub tc: Option<String>,
    /// Validation budget per candidate.
    #[arg(long, env = "PCIT_TV")]
    pub tv: Option<String>,
    /// Independent repetitions.
    #[arg(long = "r", env = "PCIT_REPETITIONS")]
    pub repetitions: Option<usize>,
    /// PCIT phase count.
    #[arg(long = "n", env = "PCIT_PHASES")]
    pub phases: Option<usize>,
    /// PARHYDRA block size.
    #[arg(long = "b", env = "PCIT_BLOCK")]
    pub block: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ConstructArgs {
    #[arg(long)]
    pub method: Method,
    #[arg(long)]
    pub scenario: PathBuf,
    #[command(flatten)]
    pub budget: BudgetArgs,
    #[arg(long)]
    pub normalization: Option<Normalization>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    #[arg(long)]
    pub portfolio: PathBuf,
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub repetitions: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long, num_args = 2, value_names = ["A", "B"])]
    pub reports: Vec<PathBuf>,
    #[arg(long, default_value_t = 100_000)]
    pub permutations: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 4)]
    pub families: usize,
    /// Values of the `heuristic` parameter.
    #[arg(long, default_value_t = 4)]
    pub configs: usize,
    /// Training instances (the test set has as many).
    #[arg(long, default_value_t = 80)]
    pub instances: usize,
    #[arg(long, default_value_t = 4)]
    pub features: usize,
    #[arg(long, default_value_t = 10.0)]
    pub cutoff: f64,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Portfolio size written into the scenario (default: families).
    #[arg(long)]
    pub k: Option<usize>,
    /// Drop the real-valued `alpha` parameter.
    #[arg(long)]
    pub categorical_only: bool,
    #[arg(long, default_value = "synthetic")]
    pub name: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[arg(long)]
    pub method: Method,
    #[arg(long)]
    pub k: usize,
    #[command(flatten)]
    pub budget: BudgetArgs,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> Result<String>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(cli),
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => Ok(e.to_string()),
        Err(e) => Err(Error::Usage(e.to_string())),
    }
}

pub fn execute(cli: Cli) -> Result<String> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.cores {
        if n == 0 {
            return Err(Error::invalid("--cores must be positive"));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Error::invalid(e.to_string()))?;
    let out_dir = cli.out_dir;
    pool.install(|| match cli.command {
        Command::Construct(a) => construct(&out_dir, a),
        Command::Test(a) => test(&out_dir, a),
        Command::Compare(a) => compare(&out_dir, a),
        Command::SynthGen(a) => synth_gen(&out_dir, a),
        Command::Plan(a) => plan(a),
    })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))
}

/// Resolves budget flags against scenario defaults.
fn resolve_plan(method: Method, k: usize, b: &BudgetArgs, d: &Defaults) -> Result<BudgetPlan> {
    let tc = b
        .tc
        .as_deref()
        .or(d.t_c.as_deref())
        .ok_or_else(|| Error::invalid("no configuration budget: pass --tc or set PCIT_TC"))?;
    let tv = b.tv.as_deref().or(d.t_v.as_deref()).unwrap_or("0");
    plan_budget(
        method,
        k,
        parse_duration(tc)?,
        parse_duration(tv)?,
        b.repetitions.or(d.repetitions).unwrap_or(DEFAULT_REPETITIONS),
        match method {
            Method::Pcit => b.phases.or(d.phases).unwrap_or(DEFAULT_PHASES),
            _ => 1,
        },
        match method {
            Method::Global => k,
            _ => b.block.or(d.block).unwrap_or(1),
        },
    )
}

fn construct(out_dir: &Path, a: ConstructArgs) -> Result<String> {
    let LoadedScenario {
        scenario,
        backend,
        defaults,
        ..
    } = load_scenario(&a.scenario)?;
    let plan = resolve_plan(a.method, scenario.k, &a.budget, &defaults)?;
    let normalization = match (a.normalization, &defaults.normalization) {
        (Some(n), _) => n,
        (None, Some(text)) => text.parse()?,
        (None, None) => Normalization::Linear,
    };
    let seed = a.seed.or(defaults.seed).unwrap_or(0);
    ensure_dir(out_dir)?;
    let constructor = Constructor::new(&scenario, backend.as_ref())?.with_rundata_dir(out_dir.join(format!("{}-rundata", a.method)));
    let result = constructor.construct(&plan, ConstructOptions { normalization, seed })?;
    let portfolio_path = out_dir.join(format!("{}-portfolio.json", a.method));
    let log_path = out_dir.join(format!("{}-log.json", a.method));
    PortfolioFile::new(&scenario.name, &result.portfolio).save(&portfolio_path)?;
    result.log.save(&log_path)?;
    let mut msg = format!(
        "{} portfolio for `{}` ({} components, {:.1}s solver time)\n",
        a.method,
        scenario.name,
        result.portfolio.k(),
        result.portfolio.consumed_cpu_time
    );
    for (i, c) in result.portfolio.components.iter().enumerate() {
        msg.push_str(&format!("  c{}: {c}\n", i + 1));
    }
    msg.push_str(&format!("wrote {} and {}\n", portfolio_path.display(), log_path.display()));
    Ok(msg)
}

fn test(out_dir: &Path, a: TestArgs) -> Result<String> {
    let loaded = load_scenario(&a.scenario)?;
    let file = PortfolioFile::load(&a.portfolio)?;
    let portfolio = file.to_portfolio(&loaded.scenario.space)?;
    let sc = &loaded.scenario;
    if sc.test_instances.is_empty() {
        return Err(Error::Scenario("scenario has no test instances".into()));
    }
    let mut report = test_portfolio(
        loaded.backend.as_ref(),
        &portfolio.components,
        &sc.test_instances,
        sc.test_cutoff,
        a.repetitions,
        a.seed,
    )?;
    report.scenario = sc.name.clone();
    report.method = file.method.clone();
    ensure_dir(out_dir)?;
    let json = out_dir.join(format!("{}-report.json", file.method));
    let txt = out_dir.join(format!("{}-report.txt", file.method));
    report.save(&json)?;
    let table = TestReport::table(&[&report]);
    fs::write(&txt, &table).map_err(|e| Error::file(&txt, e))?;
    Ok(format!("{table}wrote {} and {}\n", json.display(), txt.display()))
}

fn compare(out_dir: &Path, a: CompareArgs) -> Result<String> {
    let ra = TestReport::load(&a.reports[0])?;
    let rb = TestReport::load(&a.reports[1])?;
    let c = compare_reports(&ra, &rb, a.permutations, a.alpha, a.seed)?;
    ensure_dir(out_dir)?;
    let path = out_dir.join("comparison.json");
    fs::write(&path, serde_json::to_string_pretty(&c)?).map_err(|e| Error::file(&path, e))?;
    let mut out = TestReport::table(&[&ra, &rb]);
    for (name, r) in [("#TOs", c.timeouts), ("PAR-10", c.par10), ("PAR-1", c.par1)] {
        out.push_str(&format!(
            "{name:<7} p = {:.5}{}\n",
            r.p_value,
            if r.significant { " (significant)" } else { "" }
        ));
    }
    out.push_str(&format!("wrote {}\n", path.display()));
    Ok(out)
}

fn synth_gen(out_dir: &Path, a: SynthArgs) -> Result<String> {
    let generated = generate(&SynthParams {
        families: a.families,
        configs: a.configs,
        instances: a.instances,
        feature_dimension: a.features,
        numeric: !a.categorical_only,
        cutoff: a.cutoff,
        noise: a.noise,
        seed: a.seed,
        ..SynthParams::default()
    })?;
    let path = write_synthetic(out_dir, &a.name, &generated, a.k.unwrap_or(a.families), Defaults::default())?;
    Ok(format!("wrote {}\n", path.display()))
}

/// Seconds shown in the unit the budgets were given in.
fn in_unit(seconds: f64, unit: f64, suffix: &str) -> String {
    let v = seconds / unit;
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    format!("{s}{suffix}")
}

fn plan(a: PlanArgs) -> Result<String> {
    let p = resolve_plan(a.method, a.k, &a.budget, &Defaults::default())?;
    let hours = a.budget.tc.as_deref().is_some_and(|t| t.trim().ends_with('h'));
    let (unit, suffix) = if hours { (3600.0, "h") } else { (1.0, "s") };
    let fmt = |v: &[f64]| v.iter().map(|x| in_unit(*x, unit, suffix)).collect::<Vec<_>>().join(", ");
    Ok(format!(
        "method: {}\nk: {}\nt_c: {}\nt_v: {}\nrepetitions: {}\nphases: {}\nblock: {}\nstage budgets: {}\nconfiguration cpu per call: {}\nvalidation cpu per candidate: {}\ntotal {}\n",
        p.method,
        p.k,
        in_unit(p.t_c, unit, suffix),
        in_unit(p.t_v, unit, suffix),
        p.repetitions,
        p.phases,
        p.block,
        fmt(&p.stage_budgets),
        fmt(&p.stage_cpu),
        fmt(&p.validation_cpu),
        in_unit(p.total_cpu, unit, suffix)
    ))
}
