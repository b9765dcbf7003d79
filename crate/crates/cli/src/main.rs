//! Command-line experiment runner for the fusesim simulator.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use fusesim::config::{load_campaign, load_experiment, load_platform, load_workload};
use fusesim::experiment::{
    campaign_summary_rows, compare_setups, comparison_setups, render_billing_csv,
    render_call_graph_json, render_records_jsonl, render_requests_csv, render_summary_csv,
    run_opt_campaign, ExperimentError,
};
use fusesim::optimizer::{brute_force_optimal, Objective};
use fusesim::workloads::{Protocol, ScheduleGen};
use fusesim::{format_setup, format_setup_with_memory, parse_setup_notation, validate_setup};

#[derive(Parser)]
#[command(
    name = "fusesim",
    about = "Simulate FaaS applications and optimize their fusion setups",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config file.
    Run {
        /// Path to the experiment config.
        config: PathBuf,
    },
    /// Replay one schedule against explicit setups and print a summary table.
    Compare(CompareArgs),
    /// Exhaustively search every fusion setup of a small application.
    Oracle(OracleArgs),
    /// Validate configuration files without running anything.
    Validate {
        /// Experiment config, application file, or platform file.
        config: PathBuf,
    },
}

#[derive(Args)]
struct CompareArgs {
    /// Builtin app name (tree, iot, web) or application file path.
    #[arg(long)]
    app: String,
    /// Setup notations, e.g. "(A,B)@128-(C)@1024". Repeatable.
    #[arg(long = "setup", required = true)]
    setups: Vec<String>,
    #[arg(long, value_parser = parse_protocol)]
    protocol: Protocol,
    #[arg(long)]
    platform: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    /// Write requests.csv and summary.csv here (prints to stdout otherwise).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    /// Builtin app name or application file path (at most 6 tasks).
    #[arg(long)]
    app: String,
    #[arg(long)]
    platform: Option<PathBuf>,
    #[arg(long, default_value_t = 60)]
    requests: u64,
    #[arg(long)]
    seed: u64,
}

fn parse_protocol(s: &str) -> Result<Protocol, String> {
    s.parse()
}

/// Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 runtime error.
fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let category = categorize(&err);
            eprintln!("error: {category}: {err:#}");
            ExitCode::from(match category {
                "config" => 2,
                "io" => 3,
                _ => 4,
            })
        }
    }
}

fn categorize(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if cause.is::<std::io::Error>() {
            return "io";
        }
        if cause.is::<fusesim::config::ConfigError>() || cause.is::<fusesim::NotationError>() {
            return "config";
        }
        if let Some(e) = cause.downcast_ref::<ExperimentError>() {
            return match e {
                ExperimentError::Config(_) | ExperimentError::MissingPriorCampaign(_) => "config",
                _ => "runtime",
            };
        }
    }
    "runtime"
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run { config } => run(&config),
        Command::Compare(args) => compare(args),
        Command::Oracle(args) => oracle(args),
        Command::Validate { config } => validate(&config),
    }
}

fn write_file(dir: &Path, name: &str, content: &str) -> anyhow::Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, content).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn run(config_path: &Path) -> anyhow::Result<()> {
    let config = load_experiment(config_path)?;
    let workload = load_workload(&config.app)?;
    let cfg = load_platform(config.platform.as_deref())?;
    std::fs::create_dir_all(&config.output_dir)
        .with_context(|| format!("creating {}", config.output_dir.display()))?;

    match config.protocol {
        Protocol::Opt => {
            let (campaign, requests, world) = run_opt_campaign(
                &workload,
                &cfg,
                &config.objective,
                &config.cadence,
                config.seed,
            )?;
            let summary = campaign_summary_rows(&campaign);
            write_file(
                &config.output_dir,
                "campaign.json",
                &serde_json::to_string_pretty(&campaign)?,
            )?;
            write_file(
                &config.output_dir,
                "requests.csv",
                &render_requests_csv(&requests),
            )?;
            write_file(
                &config.output_dir,
                "summary.csv",
                &render_summary_csv(&summary),
            )?;
            if config.emit_records {
                write_file(
                    &config.output_dir,
                    "records.jsonl",
                    &render_records_jsonl(&world),
                )?;
                write_file(&config.output_dir, "billing.csv", &render_billing_csv(&world))?;
                write_file(
                    &config.output_dir,
                    "graph.json",
                    &render_call_graph_json(&world),
                )?;
            }
            let final_entry = campaign.final_entry();
            println!(
                "final setup: {} ({} windows)",
                final_entry.notation_mem,
                campaign.entries.len()
            );
        }
        Protocol::Cold | Protocol::Scale => {
            let protocol_name = match config.protocol {
                Protocol::Cold => "cold",
                _ => "scale",
            };
            let campaign_path = config.opt_campaign.clone().ok_or_else(|| {
                anyhow::Error::new(ExperimentError::MissingPriorCampaign(
                    protocol_name.to_string(),
                ))
            })?;
            let campaign = load_campaign(&campaign_path)?;
            let setups = comparison_setups(&workload, &cfg, &campaign);
            let (rows, requests) =
                compare_setups(&workload, &setups, config.protocol, &cfg, config.seed)?;
            let summary: Vec<_> = rows
                .iter()
                .map(|(label, snap)| {
                    let setup = &setups.iter().find(|(l, _)| l == label).unwrap().1;
                    (
                        label.clone(),
                        format_setup(setup),
                        format_setup_with_memory(setup),
                        snap.clone(),
                    )
                })
                .collect();
            write_file(
                &config.output_dir,
                "requests.csv",
                &render_requests_csv(&requests),
            )?;
            write_file(
                &config.output_dir,
                "summary.csv",
                &render_summary_csv(&summary),
            )?;
            print!("{}", render_summary_csv(&summary));
        }
    }
    Ok(())
}

fn compare(args: CompareArgs) -> anyhow::Result<()> {
    let workload = load_workload(&args.app)?;
    let cfg = load_platform(args.platform.as_deref())?;
    let mut setups = Vec::new();
    for notation in &args.setups {
        let setup = parse_setup_notation(notation, &workload.app)
            .map_err(|e| anyhow!(e).context(format!("setup `{notation}`")))?;
        setups.push((format_setup_with_memory(&setup), setup));
    }
    let (rows, requests) = compare_setups(&workload, &setups, args.protocol, &cfg, args.seed)?;
    let summary: Vec<_> = rows
        .iter()
        .map(|(label, snap)| {
            let setup = &setups.iter().find(|(l, _)| l == label).unwrap().1;
            (
                label.clone(),
                format_setup(setup),
                format_setup_with_memory(setup),
                snap.clone(),
            )
        })
        .collect();
    let table = render_summary_csv(&summary);
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
        write_file(dir, "requests.csv", &render_requests_csv(&requests))?;
        write_file(dir, "summary.csv", &table)?;
    }
    print!("{table}");
    Ok(())
}

fn oracle(args: OracleArgs) -> anyhow::Result<()> {
    let workload = load_workload(&args.app)?;
    let cfg = load_platform(args.platform.as_deref())?;
    let mut gen = ScheduleGen::new(&workload.ops, args.seed);
    let arrivals = gen.opt_window(0.0, args.requests);
    let (best, snap) = brute_force_optimal(&workload.app, &arrivals, &cfg, &Objective::default())
        .map_err(|e| anyhow!(e.to_string()))?;
    println!("optimal setup: {}", format_setup_with_memory(&best));
    println!(
        "rr_med={:.3}ms rr_p95={:.3}ms cost={:.4}$pmi",
        snap.rr_med_ms, snap.rr_p95_ms, snap.mean_cost_pmi
    );
    Ok(())
}

fn validate(path: &Path) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))?;

    // experiment config?
    if value.get("protocol").is_some() {
        let config = load_experiment(path)?;
        let workload = load_workload(&config.app)?;
        let cfg = load_platform(config.platform.as_deref())?;
        config
            .objective
            .validate()
            .map_err(ExperimentError::Config)?;
        workload.app.validate()?;
        cfg.validate()?;
        println!(
            "ok: experiment config ({} tasks, protocol {:?})",
            workload.app.tasks.len(),
            config.protocol
        );
        return Ok(());
    }
    // application file?
    if value.get("tasks").is_some() {
        let workload = load_workload(path.to_str().unwrap_or_default())?;
        let base = fusesim::FusionSetup::all_singletons(&workload.app, 128);
        let violations = validate_setup(&base, &workload.app);
        if !violations.is_empty() {
            return Err(anyhow!("setup violations: {violations:?}"));
        }
        println!("ok: application with {} tasks", workload.app.tasks.len());
        return Ok(());
    }
    // platform file
    let cfg = load_platform(Some(path))?;
    println!(
        "ok: platform config ({} memory sizes)",
        cfg.memory_sizes_mb.len()
    );
    Ok(())
}
