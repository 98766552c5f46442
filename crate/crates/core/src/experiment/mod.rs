//! Batch experiments: repeated splits, training, evaluation and reports.
//!
//! Output files under the configured `out` directory:
//!
//! * `results.tsv`: one row per (repetition, target) and a final
//!   mean ± standard-error row; deterministic for a fixed config;
//! * `timings.tsv`: wall-clock seconds per row;
//! * `em_sweep.tsv`: perplexity per test-time EM step count (optional);
//! * `models/`, `logs/`, `topics/`: trained prior networks, training logs
//!   and fitted topic models (when `save_models` is set).

mod config;
mod topics;

pub use config::{EpisodeSettings, ExperimentConfig};
pub use topics::{format_topics, read_topic_model, write_topic_model};

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::{load_corpus, make_data_split, CorpusSet, DataSplit, SplitPlan};
use crate::error::{Error, Result};
use crate::lda::{lda_baseline, LdaMode};
use crate::metatrainer::{evaluate_target, evaluate_target_steps, train, Method, TrainLog};
use crate::priornet::{write_params, PriorNetParams};
use crate::topicmodel::TopicModel;

/// Validation categories drawn when the config names none.
const RANDOM_VALIDATION: usize = 3;
const SPLIT_STREAM: u64 = 100;
const LDA_STREAM: u64 = 200;
const VALIDATION_PICK_STREAM: u64 = 300;

/// Environment variable capping concurrent repetitions.
pub const THREADS_ENV: &str = "FEWSHOT_THREADS";

#[derive(Debug, Clone)]
pub struct ResultRow {
    pub target: String,
    pub repetition: usize,
    /// Perplexity, or the failure message.
    pub outcome: std::result::Result<f64, String>,
    pub train_seconds: f64,
    pub eval_seconds: f64,
    /// Perplexity per extra EM step count, in `em_sweep` order.
    pub sweep: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub method: Method,
    pub dataset: String,
    pub rows: Vec<ResultRow>,
    pub em_sweep: Vec<usize>,
}

/// Sample mean and standard error (`sd / sqrt(n)`, zero for one value).
pub fn mean_se(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, (var / n).sqrt()))
}

impl RunReport {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.outcome.is_err()).count()
    }

    pub fn perplexities(&self) -> Vec<f64> {
        self.rows
            .iter()
            .filter_map(|r| r.outcome.as_ref().ok().copied())
            .collect()
    }

    pub fn summary(&self) -> Option<(f64, f64)> {
        mean_se(&self.perplexities())
    }

    /// Mean ± standard error per step count of the EM sweep.
    pub fn sweep_summary(&self) -> Vec<(usize, f64, f64)> {
        self.em_sweep
            .iter()
            .enumerate()
            .filter_map(|(i, &t)| {
                let v: Vec<f64> = self.rows.iter().filter_map(|r| r.sweep.get(i).copied()).collect();
                mean_se(&v).map(|(m, se)| (t, m, se))
            })
            .collect()
    }

    pub fn results_tsv(&self) -> String {
        let mut out = String::new();
        out.push_str("# columns: method dataset target repetition perplexity; last row: mean ± standard error over successful rows\n");
        out.push_str("method\tdataset\ttarget\trepetition\tperplexity\n");
        for r in &self.rows {
            let value = match &r.outcome {
                Ok(p) => format!("{p:.6}"),
                Err(_) => "FAILED".to_string(),
            };
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{value}",
                self.method, self.dataset, r.target, r.repetition
            );
        }
        let summary = match self.summary() {
            Some((m, se)) => format!("{m:.6} ± {se:.6}"),
            None => "NA".to_string(),
        };
        let _ = writeln!(out, "{}\t{}\tall\tmean\t{summary}", self.method, self.dataset);
        for r in &self.rows {
            if let Err(msg) = &r.outcome {
                let _ = writeln!(out, "# failed: target {} repetition {}: {msg}", r.target, r.repetition);
            }
        }
        out
    }

    pub fn timings_tsv(&self) -> String {
        let mut out = String::from("method\ttarget\trepetition\ttrain_seconds\teval_seconds\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{:.3}\t{:.3}",
                self.method, r.target, r.repetition, r.train_seconds, r.eval_seconds
            );
        }
        out
    }

    pub fn sweep_tsv(&self) -> String {
        let mut out = String::from("target\trepetition\tem_steps\tperplexity\n");
        for r in &self.rows {
            for (t, p) in self.em_sweep.iter().zip(&r.sweep) {
                let _ = writeln!(out, "{}\t{}\t{t}\t{p:.6}", r.target, r.repetition);
            }
        }
        for (t, m, se) in self.sweep_summary() {
            let _ = writeln!(out, "all\tmean\t{t}\t{m:.6} ± {se:.6}");
        }
        out
    }
}

/// Repetition parallelism from [`THREADS_ENV`], defaulting to all cores.
pub fn threads_from_env() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Config(format!(
                "{THREADS_ENV} must be a positive integer, got '{v}'"
            ))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

type Trained = std::result::Result<(Arc<PriorNetParams>, Arc<TrainLog>, f64), String>;

struct Repetition<'a> {
    config: &'a ExperimentConfig,
    set: &'a CorpusSet,
    index: usize,
    seed: u64,
    trained: HashMap<(Vec<String>, Vec<String>), (usize, Trained)>,
}

impl Repetition<'_> {
    fn validation_for(&self, target_index: usize) -> Result<Vec<String>> {
        let c = self.config;
        if !c.validation.is_empty() {
            return Ok(c.validation.clone());
        }
        let target = &c.targets[target_index];
        let pool: Vec<&str> = self
            .set
            .names()
            .filter(|n| {
                if c.exclude_all_targets {
                    !c.targets.iter().any(|t| t == n)
                } else {
                    n != target
                }
            })
            .collect();
        if pool.len() <= RANDOM_VALIDATION {
            return Err(Error::Data(format!(
                "need more than {RANDOM_VALIDATION} non-target categories to draw validation data"
            )));
        }
        // With every target excluded, one draw per repetition keeps the
        // training set shared across targets.
        let stream = if c.exclude_all_targets {
            VALIDATION_PICK_STREAM
        } else {
            VALIDATION_PICK_STREAM + 1 + target_index as u64
        };
        let mut rng = rng_for(self.seed, stream);
        let mut picked: Vec<usize> = index::sample(&mut rng, pool.len(), RANDOM_VALIDATION).into_vec();
        picked.sort_unstable();
        Ok(picked.into_iter().map(|i| pool[i].to_string()).collect())
    }

    fn split(&self, target_index: usize) -> Result<DataSplit> {
        let c = self.config;
        let target = &c.targets[target_index];
        let excluded = if c.exclude_all_targets {
            c.targets.iter().filter(|t| *t != target).cloned().collect()
        } else {
            Vec::new()
        };
        let plan = SplitPlan {
            target: target.clone(),
            validation: self.validation_for(target_index)?,
            excluded,
            target_docs: c.target_docs,
            heldout: c.heldout,
        };
        let mut rng = rng_for(self.seed, SPLIT_STREAM + target_index as u64);
        make_data_split(self.set, &plan, &mut rng)
    }

    fn train_for(&mut self, split: &DataSplit) -> Result<Trained> {
        let key = (
            split.training.names().map(str::to_string).collect::<Vec<_>>(),
            split.validation.names().map(str::to_string).collect::<Vec<_>>(),
        );
        if let Some((_, t)) = self.trained.get(&key) {
            return Ok(t.clone());
        }
        let c = self.config;
        let episode = c.episode.for_method(c.method, c.heldout, self.seed)?;
        let start = Instant::now();
        let outcome = train(&split.training, &split.validation, &episode)
            .map(|(p, log)| (Arc::new(p), Arc::new(log), start.elapsed().as_secs_f64()))
            .map_err(|e| e.to_string());
        let group = self.trained.len();
        if c.save_models {
            if let Ok((params, log, _)) = &outcome {
                let stem = format!("rep{}-g{group}", self.index);
                write_params(params, &c.out.join("models").join(format!("{stem}.priornet")))?;
                log.save(&c.out.join("logs").join(format!("{stem}.tsv")))?;
            }
        }
        self.trained.insert(key, (group, outcome.clone()));
        Ok(outcome)
    }

    fn evaluate(&mut self, target_index: usize) -> Result<ResultRow> {
        let c = self.config;
        let split = self.split(target_index)?;
        let mut row = ResultRow {
            target: split.target_name.clone(),
            repetition: self.index,
            outcome: Err(String::new()),
            train_seconds: 0.0,
            eval_seconds: 0.0,
            sweep: Vec::new(),
        };
        let model: TopicModel;
        match c.method {
            Method::LdaInd | Method::LdaAll => {
                let mode = if c.method == Method::LdaInd {
                    LdaMode::Individual
                } else {
                    LdaMode::All
                };
                let mut rng = rng_for(self.seed, LDA_STREAM + target_index as u64);
                let start = Instant::now();
                let out = lda_baseline(mode, &split, c.episode.topics, &c.gibbs, &mut rng)?;
                row.eval_seconds = start.elapsed().as_secs_f64();
                row.outcome = Ok(out.perplexity);
                model = out.model;
            }
            method => {
                let (params, _, seconds) = self.train_for(&split)?.map_err(Error::Data)?;
                row.train_seconds = seconds;
                let episode = c.episode.for_method(method, c.heldout, self.seed)?;
                let start = Instant::now();
                let ev = evaluate_target(&split.target_support, &split.target_eval, &params, &episode)?;
                row.eval_seconds = start.elapsed().as_secs_f64();
                for &steps in &c.em_sweep {
                    let p = evaluate_target_steps(&split.target_support, &split.target_eval, &params, &episode, steps)?;
                    row.sweep.push(p.perplexity);
                }
                row.outcome = Ok(ev.perplexity);
                model = ev.model;
            }
        }
        if c.save_models {
            let path = c
                .out
                .join("topics")
                .join(format!("{}-rep{}.topics", row.target, self.index));
            write_topic_model(&path, &self.set.vocab, &model)?;
        }
        Ok(row)
    }
}

/// Runs every (repetition, target) pair and writes the report files.
pub fn run_experiment(config: &ExperimentConfig, threads: usize) -> Result<RunReport> {
    config.check()?;
    let set = load_corpus(&config.data)?;
    for t in config.targets.iter().chain(&config.validation) {
        if set.get(t).is_none() {
            return Err(Error::Config(format!("unknown category '{t}'")));
        }
    }
    for dir in ["models", "logs", "topics"].iter().filter(|_| config.save_models) {
        std::fs::create_dir_all(config.out.join(dir)).map_err(|e| Error::io(config.out.join(dir), e))?;
    }
    std::fs::create_dir_all(&config.out).map_err(|e| Error::io(&config.out, e))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let per_rep: Vec<Vec<ResultRow>> = pool.install(|| {
        (0..config.repetitions)
            .into_par_iter()
            .map(|r| run_repetition(config, &set, r))
            .collect()
    });
    let report = RunReport {
        method: config.method,
        dataset: config.dataset.clone(),
        rows: per_rep.into_iter().flatten().collect(),
        em_sweep: if config.method.variant().is_some() {
            config.em_sweep.clone()
        } else {
            Vec::new()
        },
    };
    write_report(&report, &config.out)?;
    Ok(report)
}

fn run_repetition(config: &ExperimentConfig, set: &CorpusSet, r: usize) -> Vec<ResultRow> {
    let mut rep = Repetition {
        config,
        set,
        index: r,
        seed: config.base_seed.wrapping_add(r as u64),
        trained: HashMap::new(),
    };
    (0..config.targets.len())
        .map(|ti| {
            rep.evaluate(ti).unwrap_or_else(|e| {
                log::error!("target {} repetition {r}: {e}", config.targets[ti]);
                ResultRow {
                    target: config.targets[ti].clone(),
                    repetition: r,
                    outcome: Err(e.to_string()),
                    train_seconds: 0.0,
                    eval_seconds: 0.0,
                    sweep: Vec::new(),
                }
            })
        })
        .collect()
}

fn write_report(report: &RunReport, out: &Path) -> Result<()> {
    let write = |name: &str, text: String| {
        let path = out.join(name);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    };
    write("results.tsv", report.results_tsv())?;
    write("timings.tsv", report.timings_tsv())?;
    if !report.em_sweep.is_empty() {
        write("em_sweep.tsv", report.sweep_tsv())?;
    }
    Ok(())
}
