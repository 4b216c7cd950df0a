mod server;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mtprompt::llmclient::{EndpointKind, MockMode};
use mtprompt::metrics::bootstrap::BootstrapParams;
use mtprompt::metrics::MetricKind;
use mtprompt::postedit::Catalog;
use mtprompt::prompt::Strategy;
use mtprompt::runner::{
    compare_journals, emit, read_journal, run_experiment, scrub_stats, temperature_sweep, EmitFormat, Emittable,
    ExperimentConfig, RunOptions, RunnerError, SelectionConfig, TokenizeSetting, STANDARD_GRID,
};
use mtprompt::select::{SelectionMethod, Similarity};

/// Prompting experiments for LLM machine translation.
#[derive(Parser)]
#[command(name = "mtprompt", version)]
struct Cli {
    /// More log output; repeat for debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its journal and report.
    Run(ExperimentArgs),
    /// Run one experiment per temperature and write the curve.
    Sweep {
        #[command(flatten)]
        experiment: ExperimentArgs,
        /// Temperatures to visit.
        #[arg(long, value_delimiter = ',', default_values_t = STANDARD_GRID)]
        grid: Vec<f64>,
    },
    /// Paired bootstrap significance of systems against a baseline journal.
    Compare {
        /// Journals (or run directories) of the systems to test.
        #[arg(required = true)]
        systems: Vec<PathBuf>,
        #[arg(long, value_name = "JOURNAL")]
        baseline: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "bleu,chrf")]
        metrics: Vec<MetricKind>,
        #[arg(long, default_value_t = mtprompt::metrics::bootstrap::DEFAULT_RESAMPLES)]
        resamples: usize,
        #[arg(long, default_value_t = mtprompt::metrics::bootstrap::DEFAULT_SAMPLE_RATIO)]
        sample_ratio: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// auto, intl13a or cjk_char.
        #[arg(long, default_value = "auto", value_parser = parse_tokenize)]
        tokenize: TokenizeSetting,
        /// Also write compare.json here.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Count scrubbed outputs per run and direction.
    ScrubStats {
        #[arg(required = true)]
        journals: Vec<PathBuf>,
        /// Re-scrub the raw outputs with this catalog instead.
        #[arg(long)]
        catalog: Option<PathBuf>,
    },
    /// Render reports or a sweep as tables.
    Emit {
        /// report.json, sweep.json or a directory holding one.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// md, csv or json.
        #[arg(long, default_value = "md")]
        format: EmitFormat,
        #[arg(long, value_name = "DIR", default_value = ".")]
        out: PathBuf,
    },
    /// Serve the mock endpoint over HTTP.
    MockServer(server::ServerArgs),
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// baseline, tsp, dsp, fdsp, few_shot, zero_shot_cot or one_shot_cot.
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long)]
    temperature: Option<f64>,
    /// Number of demonstrations for few_shot.
    #[arg(long)]
    shots: Option<usize>,
    #[arg(long)]
    selector: Option<SelectionMethod>,
    #[arg(long)]
    seed: Option<u64>,
    /// Use the built-in mock endpoint in this mode, e.g. planted or
    /// temperature-noise=0.3.
    #[arg(long, value_name = "MODE")]
    mock: Option<MockMode>,
    #[arg(long, value_name = "JOURNAL")]
    baseline: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Stop after journaling this many new records; rerun to continue.
    #[arg(long, value_name = "N")]
    max_records: Option<usize>,
}

fn parse_tokenize(s: &str) -> Result<TokenizeSetting, String> {
    match s {
        "auto" => Ok(TokenizeSetting::Auto),
        "intl13a" | "13a" => Ok(TokenizeSetting::Intl13a),
        "cjk_char" | "zh" => Ok(TokenizeSetting::CjkChar),
        other => Err(format!("unknown tokenizer `{other}`")),
    }
}

fn absolute(path: &Path) -> Result<PathBuf> {
    std::path::absolute(path).with_context(|| format!("cannot resolve {}", path.display()))
}

impl ExperimentArgs {
    fn load(&self) -> Result<(ExperimentConfig, RunOptions)> {
        let mut config = ExperimentConfig::load(&self.config)?;
        if let Some(strategy) = self.strategy {
            config.strategy = strategy;
        }
        if let Some(t) = self.temperature {
            config.temperature = t;
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if self.shots.is_some() || self.selector.is_some() {
            let selection = config.selection.get_or_insert(SelectionConfig {
                method: SelectionMethod::Topk,
                k: 1,
                seed: None,
                similarity: Similarity::default(),
            });
            if let Some(k) = self.shots {
                selection.k = k;
            }
            if let Some(method) = self.selector {
                selection.method = method;
            }
        }
        if let Some(mode) = &self.mock {
            config.endpoint.kind = EndpointKind::Mock;
            config.endpoint.mock.mode = mode.clone();
        }
        if let Some(baseline) = &self.baseline {
            config.baseline = Some(absolute(baseline)?);
        }
        if let Some(out) = &self.out {
            config.output_dir = absolute(out)?;
        }
        Ok((config, RunOptions { max_new_records: self.max_records }))
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => {
            let (config, options) = args.load()?;
            let outcome = run_experiment(&config, &options)?;
            print!("{}", Emittable::Reports(vec![outcome.report]).render(EmitFormat::Markdown));
            println!("\nwritten to {}", outcome.output_dir.display());
        }
        Command::Sweep { experiment, grid } => {
            let (config, options) = experiment.load()?;
            let sweep = temperature_sweep(&config, &grid, &options)?;
            let what = Emittable::Sweep(sweep);
            let out = config.output_path();
            for format in [EmitFormat::Csv, EmitFormat::Markdown] {
                emit(&what, format, &out)?;
            }
            print!("{}", what.render(EmitFormat::Markdown));
            println!("\nwritten to {}", out.display());
        }
        Command::Compare { systems, baseline, metrics, resamples, sample_ratio, seed, tokenize, out } => {
            let params = BootstrapParams { resamples, sample_ratio, seed };
            let mut comparisons = Vec::new();
            println!("| system | metric | system score | baseline score | delta | p | significant |");
            println!("|---|---|---|---|---|---|---|");
            for system in &systems {
                let c = compare_journals(system, &baseline, &metrics, tokenize, &params)?;
                for (metric, r) in &c.results {
                    let [a, b] = c.scores[metric];
                    println!(
                        "| {} | {metric} | {a:.2} | {b:.2} | {:+.2} | {:.4} | {} |",
                        c.system,
                        r.delta,
                        r.p_value,
                        if r.significant { "yes" } else { "no" }
                    );
                }
                comparisons.push(c);
            }
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
                let path = dir.join("compare.json");
                std::fs::write(&path, serde_json::to_string_pretty(&comparisons)? + "\n")
                    .with_context(|| format!("cannot write {}", path.display()))?;
            }
        }
        Command::ScrubStats { journals, catalog } => {
            let catalog = catalog.map(|p| Catalog::load(&p)).transpose().map_err(RunnerError::Catalog)?;
            let mut all = serde_json::Map::new();
            for journal in &journals {
                let records = read_journal(journal)?;
                let stats = scrub_stats(&records, catalog.as_ref())?;
                all.insert(journal.display().to_string(), serde_json::to_value(stats)?);
            }
            println!("{}", serde_json::to_string_pretty(&all)?);
        }
        Command::Emit { inputs, format, out } => {
            let mut reports = Vec::new();
            for input in &inputs {
                match Emittable::load(input)? {
                    Emittable::Reports(r) => reports.extend(r),
                    sweep @ Emittable::Sweep(_) => {
                        if inputs.len() > 1 {
                            bail!("{} is a sweep; emit sweeps one at a time", input.display());
                        }
                        println!("{}", emit(&sweep, format, &out)?.display());
                        return Ok(());
                    }
                }
            }
            println!("{}", emit(&Emittable::Reports(reports), format, &out)?.display());
        }
        Command::MockServer(args) => server::serve(args)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<RunnerError>() {
                Some(r) if r.is_partial() => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
