mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use nes_core::dataset::{
    build_dataset, to_records, write_dataset, DatasetMeta, LabelingMode, SessionTrace, Task,
};
use nes_core::diff::render_nes_diff;
use nes_core::eval::{
    emit_report, emit_sweep, run_eval, scripted_for_records, EvalConfig, MockPolicy, ReportFormat,
};
use nes_core::model_io::{CompletionBackend, ScriptedBackend};
use nes_core::trajectory::{read_event_log, replay_events};
use nes_core::{
    apply_diff, compute_diff, parse_nes_diff, text_sha256, CodeSnapshot, HistoryWindow,
};
use nes_service::SuggestionService;

use config::{CliConfig, Overrides};

#[derive(Debug, Parser)]
#[command(name = "nes", version, about = "Next-edit suggestion toolkit")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML configuration file.
    #[arg(long, global = true, env = "NES_CONFIG")]
    config: Option<PathBuf>,
    /// Print the effective configuration as TOML and exit.
    #[arg(long, global = true)]
    dump_config: bool,
    /// Number of past edits shown to the model (K).
    #[arg(long, global = true, env = "NES_HISTORY_WINDOW")]
    history_window: Option<usize>,
    #[arg(long, global = true, env = "NES_KEEP_RATIO")]
    keep_ratio: Option<f64>,
    #[arg(long, global = true, env = "NES_LABELING_MODE")]
    labeling_mode: Option<LabelingMode>,
    /// OpenAI-compatible base URL, e.g. http://127.0.0.1:8000/v1.
    #[arg(long, global = true, env = "NES_BACKEND_URL")]
    backend_url: Option<String>,
    /// Answer model calls from a scripted JSONL table instead of HTTP.
    #[arg(
        long,
        global = true,
        env = "NES_MOCK_TABLE",
        conflicts_with = "backend_url"
    )]
    mock_table: Option<PathBuf>,
    #[arg(long, global = true, env = "NES_SEED")]
    seed: Option<u64>,
    /// Report format: markdown, csv or json.
    #[arg(long, global = true, env = "NES_FORMAT")]
    format: Option<ReportFormat>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the line diff between two files in NES format.
    Diff { pre: PathBuf, post: PathBuf },
    /// Apply an NES diff file to a text file and print the result.
    Apply { pre: PathBuf, diff: PathBuf },
    /// Replay an event log and print the resulting edit history.
    Replay {
        events: PathBuf,
        /// Merge edits separated by at most this many unchanged lines.
        #[arg(long, default_value_t = 0)]
        merge_gap: usize,
        #[arg(long)]
        json: bool,
    },
    #[command(subcommand)]
    Dataset(DatasetCommand),
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Run the suggestion HTTP service.
    Serve {
        #[arg(long, env = "NES_BIND")]
        bind: Option<String>,
    },
    /// Serve a scripted table as an OpenAI-compatible chat endpoint.
    MockBackend {
        table: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8000")]
        bind: String,
    },
}

#[derive(Debug, Subcommand)]
enum DatasetCommand {
    /// Build a labeled dataset from event logs, one editing session per file.
    Build {
        #[arg(required = true)]
        events: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "location,edit")]
        tasks: Vec<Task>,
        /// Language for events that do not name one.
        #[arg(long, default_value = "")]
        language: String,
    },
    /// Write a seeded synthetic dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Instances per task.
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "Python,TypeScript,Java,Go"
        )]
        languages: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "location,edit")]
        tasks: Vec<Task>,
    },
}

#[derive(Debug, Subcommand)]
enum EvalCommand {
    /// Evaluate a backend on one task of a dataset.
    Run {
        dataset: PathBuf,
        #[arg(long)]
        task: Task,
        /// Evaluate once per history window and print a combined table.
        #[arg(long, value_delimiter = ',')]
        sweep: Vec<usize>,
        /// Answer from a built-in policy instead of a backend.
        #[arg(long, value_parser = parse_policy)]
        mock_policy: Option<MockPolicy>,
        #[arg(long)]
        concurrency: Option<usize>,
        #[arg(long)]
        max_error_rate: Option<f64>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_policy(s: &str) -> Result<MockPolicy, String> {
    match s {
        "oracle" => Ok(MockPolicy::Oracle),
        "never-edit" | "never_edit" => Ok(MockPolicy::NeverEdit),
        other => Err(format!("unknown policy {other:?} (oracle, never-edit)")),
    }
}

impl GlobalArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            history_window: self.history_window,
            keep_ratio: self.keep_ratio,
            labeling_mode: self.labeling_mode,
            backend_url: self.backend_url.clone(),
            mock_table: self.mock_table.clone(),
            seed: self.seed,
            format: self.format,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("NES_LOG", "warn")).init();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let mut cfg = CliConfig::load(cli.global.config.as_deref())?;
    cfg.apply(&cli.global.overrides())?;
    if cli.global.dump_config {
        print!("{}", cfg.to_toml()?);
        return Ok(ExitCode::SUCCESS);
    }
    let Some(command) = cli.command else {
        use clap::CommandFactory;
        Cli::command()
            .error(
                clap::error::ErrorKind::MissingSubcommand,
                "a subcommand is required",
            )
            .exit();
    };
    match command {
        Command::Diff { pre, post } => {
            let delta = compute_diff(&read(&pre)?, &read(&post)?);
            print_text(&render_nes_diff(&delta))?;
        }
        Command::Apply { pre, diff } => {
            let delta = parse_nes_diff(&read(&diff)?)?;
            print!("{}", apply_diff(&read(&pre)?, &delta)?);
        }
        Command::Replay {
            events,
            merge_gap,
            json,
        } => replay(&events, merge_gap, json)?,
        Command::Dataset(DatasetCommand::Build {
            events,
            out,
            tasks,
            language,
        }) => dataset_build(&cfg, &events, &out, &tasks, &language)?,
        Command::Dataset(DatasetCommand::Synth {
            out,
            count,
            languages,
            tasks,
        }) => {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.dataset.seed);
            let langs: Vec<&str> = languages.iter().map(String::as_str).collect();
            let records =
                nes_core::synth::synthetic_dataset(&mut rng, count, &langs, &tasks, &cfg.dataset);
            let n = write_dataset(&records, &out)?;
            eprintln!("wrote {n} records to {}", out.display());
        }
        Command::Eval(EvalCommand::Run {
            dataset,
            task,
            sweep,
            mock_policy,
            concurrency,
            max_error_rate,
            out,
        }) => {
            if let Some(c) = concurrency {
                cfg.eval.concurrency = c;
            }
            if let Some(r) = max_error_rate {
                cfg.eval.max_error_rate = r;
            }
            return eval_run(&cfg, &dataset, task, &sweep, mock_policy, out.as_deref());
        }
        Command::Serve { bind } => {
            if let Some(bind) = bind {
                cfg.service.bind = bind;
            }
            serve(cfg)?;
        }
        Command::MockBackend { table, bind } => mock_backend(&table, &bind)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn read(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn print_text(text: &str) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    if !text.is_empty() {
        writeln!(out, "{text}")?;
    }
    Ok(())
}

fn replay(path: &Path, merge_gap: usize, json: bool) -> anyhow::Result<()> {
    let records = read_event_log(path).with_context(|| format!("reading {}", path.display()))?;
    let (initial, mut state) = replay_events(&records, merge_gap)?;
    let final_text = state.current_text().to_owned();
    let trajectory = state.finalize();
    let rendered: Vec<String> = trajectory.deltas.iter().map(render_nes_diff).collect();
    debug_assert_eq!(
        trajectory.replay(&initial).ok().as_deref(),
        Some(final_text.as_str())
    );
    if json {
        let value = serde_json::json!({
            "events": records.len(),
            "edits": rendered,
            "final_sha256": text_sha256(&final_text),
        });
        println!("{}", serde_json::to_string_pretty(&value)?);
        return Ok(());
    }
    println!("{} events, {} edits", records.len(), rendered.len());
    for (i, diff) in rendered.iter().enumerate() {
        println!("### edit {}\n{diff}", i + 1);
    }
    Ok(())
}

fn dataset_build(
    cfg: &CliConfig,
    events: &[PathBuf],
    out: &Path,
    tasks: &[Task],
    language: &str,
) -> anyhow::Result<()> {
    let mut sessions = Vec::new();
    for path in events {
        let records =
            read_event_log(path).with_context(|| format!("reading {}", path.display()))?;
        if records.is_empty() {
            log::warn!("{}: no events, skipped", path.display());
            continue;
        }
        let lang = records[0]
            .language
            .clone()
            .unwrap_or_else(|| language.to_owned());
        let (initial, mut state) =
            replay_events(&records, 0).with_context(|| format!("replaying {}", path.display()))?;
        sessions.push(SessionTrace {
            initial: CodeSnapshot::new(initial).with_language(lang),
            trajectory: state.finalize(),
        });
    }
    let judge = match cfg.dataset.labeling_mode {
        LabelingMode::RelevanceJudge => Some(cfg.backend.build()?),
        LabelingMode::LocationChange => None,
    };
    let output = build_dataset(&sessions, judge.as_deref(), &cfg.dataset)?;
    let meta = DatasetMeta::from_config(&cfg.dataset);
    let records = to_records(&output.instances, tasks, &meta);
    let n = write_dataset(&records, out)?;
    eprintln!(
        "{} sessions, {} instances, {} quarantined; wrote {n} records to {}",
        sessions.len(),
        output.instances.len(),
        output.quarantined.len(),
        out.display()
    );
    Ok(())
}

fn eval_run(
    cfg: &CliConfig,
    path: &Path,
    task: Task,
    sweep: &[usize],
    policy: Option<MockPolicy>,
    out: Option<&Path>,
) -> anyhow::Result<ExitCode> {
    let records = nes_core::dataset::read_dataset(path)?;
    let windows: Vec<Option<HistoryWindow>> = if sweep.is_empty() {
        vec![None]
    } else {
        sweep
            .iter()
            .map(|&k| HistoryWindow::new(k).map(Some))
            .collect::<Result<_, _>>()
            .context("sweep values must be at least 1")?
    };
    let shared = match policy {
        Some(_) => None,
        None => Some(cfg.backend.build()?),
    };

    let mut reports = Vec::new();
    for window in windows {
        let mut ecfg = EvalConfig::new(task).with_concurrency(cfg.eval.concurrency);
        ecfg.history_override = window;
        let backend: Arc<dyn CompletionBackend> = match (policy, &shared) {
            (Some(p), _) => Arc::new(scripted_for_records(&records, &ecfg, p)?),
            (None, Some(b)) => b.clone(),
            (None, None) => unreachable!("a backend is built when no policy is given"),
        };
        let report = run_eval(&records, backend.as_ref(), &ecfg)?;
        let label = match window {
            Some(k) => format!("{} K={}", report.backend, k.max_edits()),
            None => report.backend.clone(),
        };
        reports.push((label, report));
    }

    let text = if reports.len() == 1 {
        emit_report(&reports[0].1, cfg.eval.format)
    } else {
        emit_sweep(&reports, cfg.eval.format)
    };
    match out {
        Some(path) => {
            std::fs::write(path, &text).with_context(|| format!("writing {}", path.display()))?
        }
        None => print!("{text}"),
    }

    let worst = reports
        .iter()
        .map(|(_, r)| r.error_rate())
        .fold(0.0, f64::max);
    if worst > cfg.eval.max_error_rate {
        eprintln!(
            "error: {:.1}% of samples failed (threshold {:.1}%)",
            worst * 100.0,
            cfg.eval.max_error_rate * 100.0
        );
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn runtime() -> anyhow::Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?)
}

async fn shutdown_signal() {
    if let Err(err) = tokio::signal::ctrl_c().await {
        log::error!("cannot listen for ctrl-c: {err}");
        std::future::pending::<()>().await;
    }
}

fn serve(cfg: CliConfig) -> anyhow::Result<()> {
    let bind = cfg.service.bind.clone();
    let service = Arc::new(SuggestionService::from_config(cfg.service)?);
    runtime()?.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&bind)
            .await
            .with_context(|| format!("binding {bind}"))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        nes_service::http::serve(listener, service, shutdown_signal()).await?;
        Ok(())
    })
}

fn mock_backend(table: &Path, bind: &str) -> anyhow::Result<()> {
    let table = Arc::new(ScriptedBackend::load(table)?);
    if table.is_empty() {
        bail!("mock table is empty");
    }
    runtime()?.block_on(async move {
        let listener = tokio::net::TcpListener::bind(bind)
            .await
            .with_context(|| format!("binding {bind}"))?;
        eprintln!(
            "serving {} scripted responses on http://{}/v1",
            table.len(),
            listener.local_addr()?
        );
        nes_service::mock_server::serve(listener, table, shutdown_signal()).await?;
        Ok(())
    })
}
