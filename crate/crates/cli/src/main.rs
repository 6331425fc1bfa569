mod external;

use std::collections::BTreeSet;
use std::fs;
use std::io::{self, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use chrono::{NaiveDate, TimeZone, Utc};
use clap::{Args, Parser, Subcommand};
use patchrepro_analytics::{build_table, load_run_set, Analysis, Format, ReportOptions, RunRecord};
use patchrepro_core::codebrowse::CodeIndex;
use patchrepro_core::envprep::{
    self, apply_capability_profile, apply_metadata, find_metadata, prepare_environment, read_sidecar, resolve_task,
    BuilderSpec, PatchTask, ReproEnvironment,
};
use patchrepro_core::guestvm::Transcript;
use patchrepro_core::profile::{CapabilityProfile, ProfileId};
use patchrepro_core::sessionrunner::{run_session, Budget, ModelClient, PriceTable, RunOptions, ScriptedModel, SessionError};
use patchrepro_core::toolserver::{SessionOptions, ToolSession, INDEX_FILE};
use patchrepro_core::trace::TraceRecorder;
use patchrepro_core::verdict::{decide, write_verdict, VerdictFile};
use rust_decimal::Decimal;

#[derive(Parser)]
#[command(name = "patchrepro", version, about = "Reproduce kernel vulnerabilities from their fix commits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Resolve a fix commit and build its reproduction environment.
    Prepare(PrepareArgs),
    /// Build the symbol index for a prepared environment.
    Index {
        #[arg(long)]
        env: PathBuf,
    },
    /// Serve the tool protocol on stdin/stdout.
    ServeTools {
        #[arg(long)]
        env: PathBuf,
        #[arg(long, default_value = "baseline")]
        profile: String,
    },
    /// Run one reproduction session and judge it.
    Run(RunArgs),
    /// Judge a finished session directory.
    Verdict {
        session_dir: PathBuf,
        /// environment directory holding task.json
        #[arg(long)]
        env: PathBuf,
    },
    /// Aggregate run sets into analysis tables.
    Analyze(AnalyzeArgs),
}

#[derive(Args)]
struct BuildArgs {
    /// repository holding the fix commit
    #[arg(long)]
    repo: PathBuf,
    #[arg(long)]
    commit: String,
    /// mock scenario file; shorthand for a fixture builder
    #[arg(long, conflicts_with = "builder")]
    scenario: Option<PathBuf>,
    /// builder spec JSON file
    #[arg(long)]
    builder: Option<PathBuf>,
    /// case metadata file (JSON array)
    #[arg(long)]
    sidecar: Option<PathBuf>,
}

#[derive(Args)]
struct PrepareArgs {
    #[command(flatten)]
    build: BuildArgs,
    /// directory under which the environment is created
    #[arg(long)]
    work: PathBuf,
    /// profiles whose ablations are recorded on the task
    #[arg(long = "ablation")]
    ablations: Vec<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    build: BuildArgs,
    #[arg(long, default_value = "baseline")]
    profile: String,
    /// `scripted:<file>` or `external:<http endpoint>`
    #[arg(long)]
    model: String,
    #[arg(long, default_value_t = 10.0)]
    budget_hours: f64,
    /// session artifact directory
    #[arg(long)]
    out: PathBuf,
    /// environment work root; defaults to `<out>/env`
    #[arg(long)]
    work: Option<PathBuf>,
    /// price per million input tokens
    #[arg(long, default_value = "0")]
    price_in: Decimal,
    /// price per million output tokens
    #[arg(long, default_value = "0")]
    price_out: Decimal,
    #[arg(long)]
    cost_limit: Option<Decimal>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// one directory per run set, in run order
    #[arg(required = true)]
    runs_dirs: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "overall,subsystem,race,type,cutoff,commitmsg,convergence")]
    tables: Vec<String>,
    /// last submission day counted as pre-cutoff
    #[arg(long, default_value = "2024-09-30")]
    cutoff_date: NaiveDate,
    #[arg(long, default_value = "tsv")]
    format: String,
    /// sidecar overriding `<runs-dir>/cases.json`
    #[arg(long)]
    sidecar: Option<PathBuf>,
    /// output directory; tables go to stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
}

fn builder_spec(args: &BuildArgs) -> Result<BuilderSpec> {
    match (&args.scenario, &args.builder) {
        (Some(s), None) => Ok(BuilderSpec::fixture(&fs::canonicalize(s).with_context(|| s.display().to_string())?)),
        (None, Some(b)) => {
            let text = fs::read_to_string(b).with_context(|| b.display().to_string())?;
            serde_json::from_str(&text).with_context(|| format!("builder spec {}", b.display()))
        }
        _ => bail!("exactly one of --scenario or --builder is required"),
    }
}

fn task_for(args: &BuildArgs, ablations: &BTreeSet<ProfileId>) -> Result<PatchTask> {
    let mut task = resolve_task(&args.repo, &args.commit, ablations)?;
    if let Some(path) = &args.sidecar {
        let records = read_sidecar(path)?;
        if let Some(meta) = find_metadata(&records, &task.commit_id) {
            apply_metadata(&mut task, meta);
        }
    }
    Ok(task)
}

fn prepare(args: &BuildArgs, work: &Path, ablations: &BTreeSet<ProfileId>) -> Result<(PatchTask, ReproEnvironment)> {
    let task = task_for(args, ablations)?;
    let builder = builder_spec(args)?;
    let env = prepare_environment(&args.repo, &task, &builder, work)?;
    Ok((task, env))
}

fn model_client(spec: &str) -> Result<Box<dyn ModelClient>> {
    match spec.split_once(':') {
        Some(("scripted", file)) => Ok(Box::new(ScriptedModel::from_file(Path::new(file))?)),
        Some(("external", endpoint)) => Ok(Box::new(external::HttpModel::new(endpoint))),
        _ => bail!("--model must be scripted:<file> or external:<endpoint>"),
    }
}

fn run(args: RunArgs) -> Result<()> {
    let profile = CapabilityProfile::from_id(&args.profile)?;
    if !(args.budget_hours > 0.0 && args.budget_hours.is_finite()) {
        bail!("--budget-hours must be positive");
    }
    let mut model = model_client(&args.model)?;
    let ablations = BTreeSet::from([profile.id]);
    let work = args.work.clone().unwrap_or_else(|| args.out.join("env"));
    let (task, env) = prepare(&args.build, &work, &ablations)?;
    let env = apply_capability_profile(&env, &profile)?;
    let budget = Budget {
        wall_clock_limit: Duration::from_secs_f64(args.budget_hours * 3600.0),
        cost_limit: args.cost_limit,
        price_table: PriceTable::per_million(args.price_in, args.price_out),
    };
    let artifacts = match run_session(&task, &env, model.as_mut(), &profile, &budget, &args.out, &RunOptions::default()) {
        Ok(a) => a,
        Err(SessionError::FatalToolServerError(a)) => {
            eprintln!("tool server failed; partial artifacts in {}", a.dir.display());
            *a
        }
        Err(e) => return Err(e.into()),
    };
    let verdict = decide(&artifacts.dir, &task)?;
    write_verdict(&artifacts.dir, &verdict)?;
    println!("{}", serde_json::to_string_pretty(&VerdictFile::from(&verdict))?);
    Ok(())
}

fn analyze(args: AnalyzeArgs) -> Result<()> {
    let format = Format::from_str(&args.format).map_err(anyhow::Error::msg)?;
    let analyses = args
        .tables
        .iter()
        .map(|t| Analysis::from_str(t.trim()).map_err(anyhow::Error::msg))
        .collect::<Result<Vec<_>>>()?;
    let end_of_day = args.cutoff_date.and_hms_opt(23, 59, 59).expect("valid time");
    let opts = ReportOptions { cutoff: Utc.from_utc_datetime(&end_of_day) };
    let mut sets: Vec<Vec<RunRecord>> = Vec::new();
    for (i, dir) in args.runs_dirs.iter().enumerate() {
        sets.push(load_run_set(dir, i as u32, args.sidecar.as_deref())?.records);
    }
    if let Some(out) = &args.out {
        fs::create_dir_all(out)?;
    }
    for a in analyses {
        let table = build_table(a, &sets, &opts).with_context(|| format!("table {a}"))?;
        let text = table.render(format);
        match &args.out {
            Some(out) => fs::write(out.join(format!("{a}.{}", format.extension())), text)?,
            None => print!("# {a}\n{text}"),
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Prepare(args) => {
            let ablations =
                args.ablations.iter().map(|a| a.parse::<ProfileId>()).collect::<Result<BTreeSet<_>, _>>()?;
            let (_, env) = prepare(&args.build, &args.work, &ablations)?;
            println!("{}", env.env_dir.display());
        }
        Command::Index { env } => {
            let env = ReproEnvironment::load(&env)?;
            let index = CodeIndex::build(&env.source_root)?;
            index.save(&env.env_dir.join(INDEX_FILE))?;
            println!("{} symbols in {} files", index.entry_count(), index.file_count());
        }
        Command::ServeTools { env, profile } => {
            let profile = CapabilityProfile::from_id(&profile)?;
            let env = envprep::load_for_profile(&env, profile.id)?;
            let mut session = ToolSession::new(
                env,
                profile,
                TraceRecorder::new(),
                Transcript::new(),
                SessionOptions::default(),
            );
            session.serve(BufReader::new(io::stdin().lock()), io::stdout().lock())?;
            session.shutdown();
        }
        Command::Run(args) => run(args)?,
        Command::Verdict { session_dir, env } => {
            let task = ReproEnvironment::load(&env)?.task()?;
            let verdict = decide(&session_dir, &task)?;
            write_verdict(&session_dir, &verdict)?;
            println!("{}", serde_json::to_string_pretty(&VerdictFile::from(&verdict))?);
        }
        Command::Analyze(args) => analyze(args)?,
    }
    Ok(())
}
