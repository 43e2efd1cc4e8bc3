use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use icrl_drive::icrl::Strategy;
use icrl_drive::llm::HttpConfig;
use icrl_drive::road_net::MapArchetype;
use icrl_drive::runner::{
    emit_reports, replay_transcript, run_matrix, run_scenario, MatrixSpec, PolicyConfig, RunResult, ScenarioConfig,
    ScriptName,
};
use icrl_drive::sim::WeatherTier;
use serde_json::json;

#[derive(Parser)]
#[command(name = "icrl-drive", version, about = "Closed-loop prompt-driven driving experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single scenario and write its transcript.
    Run {
        /// Scenario TOML; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Sweep weather × density × map × strategy × seeds and write reports.
    Matrix {
        /// Matrix TOML; defaults to the full 4 × 3 × 2 sweep with ICRL.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        parallelism: usize,
        /// Repetitions per cell.
        #[arg(long)]
        seeds: Option<u32>,
        /// Applied to the base scenario; weather, density, strategy and map also pin that axis.
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Recompute a transcript's metrics and re-execute it against its recorded responses.
    Replay {
        transcript: PathBuf,
        /// Where to write the re-executed transcript; defaults to a sibling `replays/` directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Only recompute metrics from the recorded trace.
        #[arg(long)]
        metrics_only: bool,
    },
    /// Build metrics.csv, table.md and curves.csv from transcripts (files or directories).
    Report {
        #[arg(required = true)]
        transcripts: Vec<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Args, Default)]
struct Overrides {
    #[arg(long)]
    weather: Option<WeatherTier>,
    #[arg(long)]
    density: Option<u32>,
    /// icrl, cot, best-of-n[:N], self-refine[:N] or no-icrl.
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long)]
    seed: Option<u64>,
    /// highway or intersection.
    #[arg(long)]
    map: Option<String>,
    #[arg(long)]
    horizon: Option<u32>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    run_id: Option<String>,
    /// Use a bundled script: expert, too-late-merge, constant or learner.
    #[arg(long, conflicts_with = "endpoint")]
    script: Option<String>,
    /// Chat-completion endpoint; the token is read from ICRL_DRIVE_API_KEY.
    #[arg(long, requires = "model")]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
}

fn parse_map(name: &str) -> Result<MapArchetype> {
    Ok(match name {
        "highway" | "highway-junction" => MapArchetype::highway(),
        "intersection" | "four-way-intersection" => MapArchetype::intersection(),
        other => bail!("unknown map {other:?} (expected highway or intersection)"),
    })
}

fn parse_script(name: &str) -> Result<ScriptName> {
    serde_json::from_value(json!(name)).with_context(|| format!("unknown script {name:?}"))
}

impl Overrides {
    fn apply(&self, cfg: &mut ScenarioConfig) -> Result<()> {
        if let Some(w) = self.weather {
            cfg.weather = w;
        }
        if let Some(d) = self.density {
            cfg.density = d;
        }
        if let Some(s) = self.strategy {
            cfg.strategy = s;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(m) = &self.map {
            cfg.map = parse_map(m)?;
        }
        if let Some(h) = self.horizon {
            cfg.horizon = h;
        }
        if self.temperature.is_some() {
            cfg.temperature = self.temperature;
        }
        if self.run_id.is_some() {
            cfg.run_id = self.run_id.clone();
        }
        if let Some(s) = &self.script {
            cfg.policy = PolicyConfig::scripted(parse_script(s)?);
        }
        if let (Some(endpoint), Some(model)) = (&self.endpoint, &self.model) {
            let retry = match &cfg.policy {
                PolicyConfig::Http { retry, .. } => retry.clone(),
                _ => Default::default(),
            };
            let http = HttpConfig { endpoint: endpoint.clone(), model: model.clone(), ..Default::default() };
            cfg.policy = PolicyConfig::Http { http, retry };
        }
        Ok(())
    }
}

fn summary(r: &RunResult) -> serde_json::Value {
    json!({
        "run_id": r.run_id,
        "decisions": r.decisions(),
        "metrics": r.metrics,
        "transcript": r.transcript_path,
        "transcript_sha256": r.transcript_hash,
        "duration_ms": r.duration.as_millis() as u64,
    })
}

fn collect_transcripts(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = vec![];
    for p in paths {
        if p.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(p)
                .with_context(|| format!("reading {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "jsonl"))
                .collect();
            files.sort();
            out.extend(files);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn print(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json values print"));
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run { config, out, overrides } => {
            let mut cfg = match config {
                Some(path) => ScenarioConfig::load(&path)?,
                None => ScenarioConfig::default(),
            };
            overrides.apply(&mut cfg)?;
            let result = run_scenario(&cfg, &out)?;
            print(&summary(&result));
        }
        Command::Matrix { spec, out, parallelism, seeds, overrides } => {
            let mut spec = match spec {
                Some(path) => MatrixSpec::load(&path)?,
                None => MatrixSpec::default(),
            };
            if let Some(n) = seeds {
                spec.seeds = n;
            }
            overrides.apply(&mut spec.base)?;
            // An axis given on the command line collapses that axis of the sweep.
            if let Some(w) = overrides.weather {
                spec.weathers = vec![w];
            }
            if let Some(d) = overrides.density {
                spec.densities = vec![d];
            }
            if let Some(s) = overrides.strategy {
                spec.strategies = vec![s];
            }
            if let Some(m) = &overrides.map {
                spec.maps = vec![parse_map(m)?];
            }
            if let Some(s) = overrides.seed {
                spec.first_seed = s;
            }
            let outcome = run_matrix(&spec, parallelism, &out)?;
            for f in &outcome.failures {
                eprintln!("cell {} failed after {} attempt(s): {}", f.run_id, f.attempts, f.error);
            }
            if outcome.results.is_empty() {
                bail!("every cell failed");
            }
            let files = emit_reports(&outcome.results, &out)?;
            print(&json!({
                "runs": outcome.results.len(),
                "failed": outcome.failures.iter().map(|f| &f.run_id).collect::<Vec<_>>(),
                "metrics": files.metrics,
                "table": files.table,
                "curves": files.curves,
            }));
            if !outcome.failures.is_empty() {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Replay { transcript, out, metrics_only } => {
            let recorded = RunResult::from_transcript(&transcript)?;
            if metrics_only {
                print(&summary(&recorded));
            } else {
                let out = out.unwrap_or_else(|| replay_path(&transcript));
                let replayed = replay_transcript(&transcript, &out)?;
                print(&json!({
                    "recorded": summary(&recorded),
                    "replayed": summary(&replayed),
                    "identical_transcript": recorded.transcript_hash == replayed.transcript_hash,
                }));
            }
        }
        Command::Report { transcripts, out } => {
            let files = collect_transcripts(&transcripts)?;
            let results = files
                .iter()
                .map(|f| RunResult::from_transcript(f).with_context(|| format!("loading {}", f.display())))
                .collect::<Result<Vec<_>>>()?;
            let written = emit_reports(&results, &out)?;
            print(&json!({
                "runs": results.len(),
                "metrics": written.metrics,
                "table": written.table,
                "curves": written.curves,
            }));
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// `out/transcripts/x.jsonl` replays into `out/replays/x.jsonl`.
fn replay_path(transcript: &Path) -> PathBuf {
    let name = transcript.file_name().map(PathBuf::from).unwrap_or_else(|| "transcript.jsonl".into());
    let root = transcript.parent().and_then(Path::parent).unwrap_or(Path::new("."));
    root.join("replays").join(name)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
