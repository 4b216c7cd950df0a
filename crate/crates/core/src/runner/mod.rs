//! End-to-end experiments: prompt, translate, scrub, journal, score.

mod config;
mod journal;
mod report;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{ExperimentConfig, ScorerCommand, SelectionConfig, SignificanceConfig, SubsetConfig, TokenizeSetting};
pub use journal::{journal_path, read_journal, JournalWriter, Provenance, TranslationRecord, JOURNAL_FILE};
pub use report::{
    emit, CurveRow, EmitFormat, Emittable, ExperimentReport, RunScores, RunStats, SignificanceSummary, SweepPoint,
    SweepReport, STANDARD_GRID,
};

use crate::corpus::{CorpusError, Manifest, ParallelCorpus, Segment};
use crate::llmclient::{cache_key, Client, LlmError};
use crate::metrics::bootstrap::{paired_bootstrap_scores, BootstrapParams};
use crate::metrics::{
    corpus_bleu, corpus_chrf, external_score, paired_bootstrap, Bleu, Chrf, EvalPair, MetricError, MetricKind,
    MetricReport, ScorerClient, SignificanceResult, TokenScheme,
};
use crate::postedit::{count_edits, default_catalog, Catalog, CompiledCatalog, PostEditError};
use crate::prompt::{build_prompt, wrong_domain, PromptError, PromptSpec, Strategy};
use crate::select::{select_demos, SelectError, SelectionSpec};

pub const REPORT_FILE: &str = "report.json";
pub const STATS_FILE: &str = "run_stats.json";

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("scrub catalog: {0}")]
    Catalog(PostEditError),
    #[error("run {run}, segment {segment}: {source}")]
    Prompt { run: usize, segment: usize, source: PromptError },
    #[error("run {run}, segment {segment}: {source}")]
    Select { run: usize, segment: usize, source: SelectError },
    #[error("run {run}, segment {segment}: {source}")]
    Llm { run: usize, segment: usize, source: LlmError },
    #[error("run {run}, segment {segment}: {source}")]
    PostEdit { run: usize, segment: usize, source: PostEditError },
    #[error("endpoint: {0}")]
    Endpoint(LlmError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("partial run: {written} of {total} records journaled, scoring skipped ({cause})")]
    PartialRun { written: usize, total: usize, cause: String },
    #[error("stopped after {written} of {total} records")]
    Interrupted { written: usize, total: usize },
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("journal {path}: {message}")]
    Journal { path: PathBuf, message: String },
    #[error("{dir} holds a run of a different configuration ({journaled}); current is {current}")]
    ConfigChanged { dir: PathBuf, journaled: String, current: String },
    #[error("baseline: {0}")]
    Baseline(String),
    #[error("temperature grid is empty")]
    EmptyGrid,
    #[error("cannot write {path}: {message}")]
    OutputUnwritable { path: PathBuf, message: String },
}

impl RunnerError {
    /// Whether the journal is intact and a rerun would continue it.
    pub fn is_partial(&self) -> bool {
        matches!(self, RunnerError::PartialRun { .. } | RunnerError::Interrupted { .. })
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Stop after journaling this many new records, as if killed.
    pub max_new_records: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub report: ExperimentReport,
    pub stats: RunStats,
    pub output_dir: PathBuf,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Demonstration seed for one segment: run `r` starts from `seed + r`.
pub fn derive_seed(seed: u64, run: usize, segment: usize) -> u64 {
    splitmix64(splitmix64(seed.wrapping_add(run as u64)) ^ segment as u64)
}

/// Everything a worker needs to turn one segment into a record.
struct Context<'a> {
    spec: PromptSpec,
    pool: Option<&'a ParallelCorpus>,
    selection: Option<SelectionSpec>,
    client: &'a Client,
    catalog: &'a CompiledCatalog,
    temperature: f64,
    direction: String,
}

impl Context<'_> {
    fn translate(&self, run: usize, seg: &Segment) -> Result<(TranslationRecord, Provenance), RunnerError> {
        let segment = seg.id;
        let mut spec = self.spec.clone();
        if let (Some(pool), Some(sel)) = (self.pool, &self.selection) {
            let seed = derive_seed(sel.seed, run, seg.id);
            spec.demos = select_demos(pool, &seg.source, sel, seed).map_err(|source| RunnerError::Select {
                run,
                segment,
                source,
            })?;
        }
        let messages =
            build_prompt(&spec, &seg.source).map_err(|source| RunnerError::Prompt { run, segment, source })?;
        let request = self.client.request(messages, self.temperature);
        let key = cache_key(&request);
        let result = self.client.complete(&request).map_err(|source| RunnerError::Llm { run, segment, source })?;
        let scrubbed =
            self.catalog.scrub(&result.text).map_err(|source| RunnerError::PostEdit { run, segment, source })?;
        let record = TranslationRecord {
            run,
            segment_id: seg.id,
            direction: self.direction.clone(),
            source: seg.source.clone(),
            reference: seg.reference.clone(),
            messages: request.messages,
            raw: result.text,
            text: scrubbed.text,
            edited: scrubbed.edited,
            rules_fired: scrubbed.rules_fired,
            cache_key: key,
        };
        let provenance = Provenance {
            run,
            segment_id: seg.id,
            cached: result.cached,
            latency_ms: result.latency_ms,
            attempt_count: result.attempt_count,
        };
        Ok((record, provenance))
    }
}

struct Inputs {
    test: ParallelCorpus,
    pool: Option<ParallelCorpus>,
    spec: PromptSpec,
    catalog: Catalog,
}

fn load_inputs(config: &ExperimentConfig) -> Result<Inputs, RunnerError> {
    let manifest = Manifest::load(&config.resolve(&config.manifest))?;
    let (test, pool) = match (&config.dev_corpus, config.strategy) {
        (Some(dev), Strategy::FewShot) => {
            let (t, d) = manifest.load_test_dev(&config.corpus, dev)?;
            (t, Some(d))
        }
        _ => (manifest.load_corpus(&config.corpus)?, None),
    };
    let test = match &config.subset {
        Some(sub) if sub.size < test.len() => test.subset(sub.size, sub.seed),
        _ => test,
    };
    let true_domain = config.domain.clone().unwrap_or_else(|| test.domain().to_string());
    let mut spec = PromptSpec::new(config.strategy, test.pair().clone());
    spec.with_task_system = config.with_task_system;
    spec.cot_demo = config.cot_demo.clone();
    match config.strategy {
        Strategy::Dsp => spec.domain = Some(true_domain),
        Strategy::Fdsp => {
            let mut set: BTreeSet<String> = match &config.domain_set {
                Some(list) => list.iter().cloned().collect(),
                None => manifest.domains(),
            };
            set.insert(true_domain.clone());
            let wrong = wrong_domain(&true_domain, &set).map_err(|e| RunnerError::Config(e.to_string()))?;
            log::info!("fdsp: {true_domain} sentences prompted as {wrong}");
            spec.domain = Some(wrong);
        }
        _ => {}
    }
    let catalog = match &config.scrub_catalog {
        Some(path) => Catalog::load(&config.resolve(path)).map_err(RunnerError::Catalog)?,
        None => default_catalog(),
    };
    Ok(Inputs { test, pool, spec, catalog })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunnerError> {
    let text = serde_json::to_string_pretty(value).expect("serializes") + "\n";
    std::fs::write(path, text)
        .map_err(|e| RunnerError::OutputUnwritable { path: path.to_path_buf(), message: e.to_string() })
}

/// Translates every test segment once per run, journaling as it goes, then
/// scores the journal and writes `report.json` and `run_stats.json`.
///
/// Segments already in the journal are not requested again.
pub fn run_experiment(config: &ExperimentConfig, options: &RunOptions) -> Result<RunOutcome, RunnerError> {
    let started = Instant::now();
    config.validate()?;
    let inputs = load_inputs(config)?;
    let pair = inputs.test.pair().clone();
    let direction = pair.direction();
    let out = config.output_path();

    let mut endpoint = config.endpoint.clone();
    endpoint.cache_dir = Some(config.cache_path());
    let planted = inputs.test.segments().iter().map(|s| (s.source.clone(), s.reference.clone()));
    let client = Client::from_config(&endpoint, planted).map_err(RunnerError::Endpoint)?;
    let catalog = inputs.catalog.compile(&pair);

    let digest = config.digest();
    let (mut writer, existing) = JournalWriter::open(&out, &digest)?;
    let items: Vec<(usize, &Segment)> =
        (0..config.runs).flat_map(|r| inputs.test.segments().iter().map(move |s| (r, s))).collect();
    let total = items.len();
    if existing.len() > total {
        return Err(RunnerError::Journal {
            path: writer.path().to_path_buf(),
            message: format!("{} records but the experiment has only {total}", existing.len()),
        });
    }
    for (rec, (run, seg)) in existing.iter().zip(&items) {
        if rec.run != *run || rec.segment_id != seg.id || rec.source != seg.source {
            return Err(RunnerError::Journal {
                path: writer.path().to_path_buf(),
                message: format!("record for run {} segment {} is out of order", rec.run, rec.segment_id),
            });
        }
    }
    let resumed = existing.len();
    let pending = &items[resumed..];

    let ctx = Context {
        spec: inputs.spec.clone(),
        pool: inputs.pool.as_ref(),
        selection: config.selection_spec(),
        client: &client,
        catalog: &catalog,
        temperature: config.temperature,
        direction: direction.clone(),
    };
    let limit = options.max_new_records.unwrap_or(usize::MAX);
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let workers = endpoint.concurrency.min(pending.len()).max(1);

    let (written_new, failure) = std::thread::scope(|s| {
        let (tx, rx) = mpsc::channel();
        for _ in 0..workers {
            let tx = tx.clone();
            let (ctx, next, stop) = (&ctx, &next, &stop);
            s.spawn(move || loop {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((run, seg)) = pending.get(i) else { break };
                if tx.send((i, ctx.translate(*run, seg))).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        // Records are journaled strictly in item order.
        let mut buffer = BTreeMap::new();
        let mut expected = 0usize;
        let mut written = 0usize;
        let mut failure: Option<RunnerError> = None;
        for (i, result) in rx {
            if failure.is_some() || written >= limit {
                continue;
            }
            buffer.insert(i, result);
            while let Some(result) = buffer.remove(&expected) {
                if written >= limit {
                    stop.store(true, Ordering::SeqCst);
                    break;
                }
                match result.and_then(|(rec, prov)| writer.append(&rec, &prov)) {
                    Ok(()) => {
                        written += 1;
                        expected += 1;
                    }
                    Err(e) => {
                        stop.store(true, Ordering::SeqCst);
                        failure = Some(e);
                        break;
                    }
                }
            }
            if written >= limit {
                stop.store(true, Ordering::SeqCst);
            }
        }
        (written, failure)
    });

    let journaled = resumed + written_new;
    if let Some(e) = failure {
        return Err(match e {
            RunnerError::Llm { source: LlmError::RateLimitedExhausted { .. }, run, segment } => {
                RunnerError::PartialRun {
                    written: journaled,
                    total,
                    cause: format!("run {run}, segment {segment}: endpoint retries exhausted"),
                }
            }
            other => other,
        });
    }
    if journaled < total {
        return Err(RunnerError::Interrupted { written: journaled, total });
    }

    let records = read_journal(writer.path())?;
    drop(writer);
    let scheme = config.tokenize.scheme(&pair.tgt);
    let mut scorer = Scorers::new(config)?;
    let mut runs = Vec::with_capacity(config.runs);
    for run in 0..config.runs {
        let recs: Vec<&TranslationRecord> = records.iter().filter(|r| r.run == run).collect();
        let mut metrics = BTreeMap::new();
        for &metric in &config.metrics {
            metrics.insert(metric.to_string(), scorer.score(metric, &recs, scheme)?);
        }
        runs.push(RunScores { run, metrics, post_edits: recs.iter().filter(|r| r.edited).count() });
    }
    let mut mean = BTreeMap::new();
    for metric in &config.metrics {
        let key = metric.to_string();
        let sum: f64 = runs.iter().map(|r| r.metrics[&key].corpus_score).sum();
        mean.insert(key, sum / runs.len() as f64);
    }
    let significance = match &config.baseline {
        Some(baseline) => Some(significance_vs_baseline(config, baseline, &records, &runs, &mut scorer, scheme)?),
        None => None,
    };

    let report = ExperimentReport {
        name: config.display_name(),
        config_digest: digest,
        corpus: config.corpus.clone(),
        direction: direction.clone(),
        strategy: config.strategy,
        temperature: config.temperature,
        segments: inputs.test.len(),
        runs,
        mean,
        significance,
        post_edits: count_edits(&records),
        journal: JOURNAL_FILE.to_string(),
    };
    let client_stats = client.stats();
    let stats = RunStats {
        wall_clock_ms: started.elapsed().as_millis() as u64,
        records: total,
        resumed_records: resumed,
        completions: client_stats.completions,
        cache_hits: client_stats.cache_hits,
        network_requests: client_stats.network_requests,
        cache_hit_ratio: (client_stats.completions > 0)
            .then(|| client_stats.cache_hits as f64 / client_stats.completions as f64),
    };
    write_json(&out.join(REPORT_FILE), &report)?;
    write_json(&out.join(STATS_FILE), &stats)?;
    Ok(RunOutcome { report, stats, output_dir: out })
}

/// Metric evaluation with a lazily started external scorer.
struct Scorers<'a> {
    config: &'a ExperimentConfig,
    external: Option<ScorerClient<std::io::BufReader<std::process::ChildStdout>, std::process::ChildStdin>>,
}

impl<'a> Scorers<'a> {
    fn new(config: &'a ExperimentConfig) -> Result<Self, RunnerError> {
        Ok(Scorers { config, external: None })
    }

    fn score(
        &mut self,
        metric: MetricKind,
        recs: &[&TranslationRecord],
        scheme: TokenScheme,
    ) -> Result<MetricReport, RunnerError> {
        let pairs: Vec<EvalPair> = recs.iter().map(|r| EvalPair::new(r.text.as_str(), r.reference.as_str())).collect();
        Ok(match metric {
            MetricKind::Bleu => corpus_bleu(&pairs, scheme)?,
            MetricKind::Chrf => corpus_chrf(&pairs)?,
            MetricKind::External => {
                let sources: Vec<String> = recs.iter().map(|r| r.source.clone()).collect();
                external_score(&pairs, &sources, self.external()?)?
            }
        })
    }

    fn external(
        &mut self,
    ) -> Result<&mut ScorerClient<std::io::BufReader<std::process::ChildStdout>, std::process::ChildStdin>, RunnerError>
    {
        if self.external.is_none() {
            let cmd = self
                .config
                .external_scorer
                .as_ref()
                .ok_or_else(|| RunnerError::Config("no external scorer configured".into()))?;
            let client = ScorerClient::spawn(&cmd.program, &cmd.args)?;
            log::info!("external scorer {} {}", client.name(), client.version());
            self.external = Some(client);
        }
        Ok(self.external.as_mut().expect("just set"))
    }
}

/// Baseline records for `ours`, matched by segment id.
fn align<'a>(
    ours: &[&TranslationRecord],
    baseline: &'a [TranslationRecord],
) -> Result<Vec<&'a TranslationRecord>, RunnerError> {
    let base: HashMap<usize, &TranslationRecord> =
        baseline.iter().filter(|r| r.run == 0).map(|r| (r.segment_id, r)).collect();
    ours.iter()
        .map(|r| {
            let b = base
                .get(&r.segment_id)
                .ok_or_else(|| RunnerError::Baseline(format!("segment {} missing from baseline", r.segment_id)))?;
            if b.reference != r.reference {
                return Err(RunnerError::Baseline(format!("segment {} has a different reference", r.segment_id)));
            }
            Ok(*b)
        })
        .collect()
}

fn bootstrap_lexical(
    metric: MetricKind,
    ours: &[&TranslationRecord],
    theirs: &[&TranslationRecord],
    scheme: TokenScheme,
    params: &BootstrapParams,
) -> Result<SignificanceResult, RunnerError> {
    let refs: Vec<String> = ours.iter().map(|r| r.reference.clone()).collect();
    let hyps_a: Vec<String> = ours.iter().map(|r| r.text.clone()).collect();
    let hyps_b: Vec<String> = theirs.iter().map(|r| r.text.clone()).collect();
    Ok(match metric {
        MetricKind::Bleu => paired_bootstrap(&Bleu { scheme }, &hyps_a, &hyps_b, &refs, params)?,
        MetricKind::Chrf => paired_bootstrap(&Chrf, &hyps_a, &hyps_b, &refs, params)?,
        MetricKind::External => {
            return Err(RunnerError::Config("the external metric needs a scorer process".into()));
        }
    })
}

fn significance_vs_baseline(
    config: &ExperimentConfig,
    baseline: &Path,
    records: &[TranslationRecord],
    runs: &[RunScores],
    scorers: &mut Scorers<'_>,
    scheme: TokenScheme,
) -> Result<SignificanceSummary, RunnerError> {
    let base_records = read_journal(&config.resolve(baseline))?;
    let ours: Vec<&TranslationRecord> = records.iter().filter(|r| r.run == 0).collect();
    let theirs = align(&ours, &base_records)?;
    let params = config.bootstrap_params();
    let mut results: BTreeMap<String, SignificanceResult> = BTreeMap::new();
    for &metric in &config.metrics {
        let result = match metric {
            MetricKind::External => {
                let a = runs[0].metrics[metric.as_str()].segment_scores.clone().unwrap_or_default();
                let b = scorers.score(metric, &theirs, scheme)?.segment_scores.unwrap_or_default();
                paired_bootstrap_scores(&a, &b, &params)?
            }
            lexical => bootstrap_lexical(lexical, &ours, &theirs, scheme, &params)?,
        };
        results.insert(metric.to_string(), result);
    }
    Ok(SignificanceSummary {
        baseline: baseline.display().to_string(),
        resamples: params.resamples,
        sample_ratio: params.sample_ratio,
        seed: params.seed,
        results,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub system: String,
    pub baseline: String,
    pub direction: String,
    pub segments: usize,
    /// Corpus score of the system and of the baseline per metric.
    pub scores: BTreeMap<String, [f64; 2]>,
    pub results: BTreeMap<String, SignificanceResult>,
}

/// Paired bootstrap of run 0 of one journal against run 0 of another,
/// over the lexical metrics.
pub fn compare_journals(
    system: &Path,
    baseline: &Path,
    metrics: &[MetricKind],
    tokenize: TokenizeSetting,
    params: &BootstrapParams,
) -> Result<Comparison, RunnerError> {
    let records = read_journal(system)?;
    let base_records = read_journal(baseline)?;
    let ours: Vec<&TranslationRecord> = records.iter().filter(|r| r.run == 0).collect();
    let first = ours
        .first()
        .ok_or_else(|| RunnerError::Journal { path: journal_path(system), message: "no records for run 0".into() })?;
    let direction = first.direction.clone();
    let tgt = direction.split_once('-').map_or(direction.as_str(), |(_, t)| t);
    let scheme = tokenize.scheme(tgt);
    let theirs = align(&ours, &base_records)?;
    let mut scores = BTreeMap::new();
    let mut results = BTreeMap::new();
    for &metric in metrics {
        let score = |recs: &[&TranslationRecord]| -> Result<f64, RunnerError> {
            let pairs: Vec<EvalPair> =
                recs.iter().map(|r| EvalPair::new(r.text.as_str(), r.reference.as_str())).collect();
            Ok(match metric {
                MetricKind::Bleu => corpus_bleu(&pairs, scheme)?.corpus_score,
                MetricKind::Chrf => corpus_chrf(&pairs)?.corpus_score,
                MetricKind::External => {
                    return Err(RunnerError::Config("the external metric needs a scorer process".into()));
                }
            })
        };
        scores.insert(metric.to_string(), [score(&ours)?, score(&theirs)?]);
        results.insert(metric.to_string(), bootstrap_lexical(metric, &ours, &theirs, scheme, params)?);
    }
    Ok(Comparison {
        system: system.display().to_string(),
        baseline: baseline.display().to_string(),
        direction,
        segments: ours.len(),
        scores,
        results,
    })
}

/// Runs one experiment per temperature. Point `t` writes to
/// `<output_dir>/t=<t>` and caches under `<cache>/t=<t>`.
pub fn temperature_sweep(
    base: &ExperimentConfig,
    grid: &[f64],
    options: &RunOptions,
) -> Result<SweepReport, RunnerError> {
    if grid.is_empty() {
        return Err(RunnerError::EmptyGrid);
    }
    let cache_root = base.cache_path();
    let mut points = Vec::with_capacity(grid.len());
    for &t in grid {
        let mut config = base.clone();
        config.temperature = t;
        config.output_dir = base.output_dir.join(format!("t={t}"));
        config.endpoint.cache_dir = Some(cache_root.join(format!("t={t}")));
        config.validate()?;
        let outcome = run_experiment(&config, options)?;
        points.push(SweepPoint { temperature: t, report: outcome.report });
    }
    let sweep = SweepReport::new(base.display_name(), points);
    let out = base.output_path();
    std::fs::create_dir_all(&out)
        .map_err(|e| RunnerError::OutputUnwritable { path: out.clone(), message: e.to_string() })?;
    write_json(&out.join("sweep.json"), &sweep)?;
    Ok(sweep)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditCounts {
    pub run: usize,
    pub counts: BTreeMap<String, usize>,
}

/// Post-edit counts per run and direction, optionally re-scrubbing the raw
/// outputs with another catalog.
pub fn scrub_stats(records: &[TranslationRecord], catalog: Option<&Catalog>) -> Result<Vec<EditCounts>, RunnerError> {
    let mut by_run: BTreeMap<usize, Vec<TranslationRecord>> = BTreeMap::new();
    for r in records {
        let mut r = r.clone();
        if let Some(catalog) = catalog {
            let (src, tgt) = r.direction.split_once('-').unwrap_or((r.direction.as_str(), ""));
            let tgt_name = r
                .messages
                .iter()
                .rev()
                .find_map(|m| crate::prompt::extract_target_name(&m.content))
                .unwrap_or(tgt)
                .to_string();
            let pair = crate::corpus::LanguagePair::new(src, tgt, &tgt_name)?;
            let scrubbed = crate::postedit::scrub(&r.raw, &pair, catalog).map_err(|source| RunnerError::PostEdit {
                run: r.run,
                segment: r.segment_id,
                source,
            })?;
            r.edited = scrubbed.edited;
        }
        by_run.entry(r.run).or_default().push(r);
    }
    Ok(by_run.into_iter().map(|(run, recs)| EditCounts { run, counts: count_edits(&recs) }).collect())
}
