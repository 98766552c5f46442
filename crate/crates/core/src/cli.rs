//! Command-line front end.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::corpus::{filter_corpus, load_corpus, write_corpus, DatasetPaths};
use crate::error::{Error, Result};
use crate::experiment::{format_topics, read_topic_model, run_experiment, threads_from_env, ExperimentConfig};
use crate::synthetic::{generate, SyntheticConfig};

/// Exit code when some repetitions failed.
pub const EXIT_FAILURES: i32 = 1;
/// Exit code for usage, input and configuration errors.
pub const EXIT_ERROR: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "fewtopic",
    version,
    about = "Few-shot topic modeling with learned Dirichlet priors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Filter a raw dataset and write it in canonical form.
    Prepare {
        /// Directory holding docword.txt, vocab.txt and labels.txt.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, required_unless_present = "input")]
        docword: Option<PathBuf>,
        #[arg(long, required_unless_present = "input")]
        vocab: Option<PathBuf>,
        #[arg(long, required_unless_present = "input")]
        labels: Option<PathBuf>,
        /// Drop documents with fewer distinct terms.
        #[arg(long, default_value_t = 30)]
        min_doc_terms: usize,
        /// Drop terms occurring in fewer documents.
        #[arg(long, default_value_t = 30)]
        min_term_docs: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an experiment described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `base_seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `out`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `method`.
        #[arg(long)]
        method: Option<String>,
        /// Extra `key=value` settings applied after the file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// List the most probable terms of every topic in a topic-model file.
    Topics {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
    /// Write a synthetic multi-corpus dataset.
    GenSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 43)]
        corpora: usize,
        #[arg(long, default_value_t = 40)]
        docs: usize,
        /// Topics per corpus.
        #[arg(long, default_value_t = 3)]
        topics: usize,
        #[arg(long, default_value_t = 12)]
        pool_topics: usize,
        #[arg(long, default_value_t = 50)]
        terms: usize,
        #[arg(long, default_value_t = 80.0)]
        doc_length: f64,
        /// Dirichlet concentration of pool topics over terms.
        #[arg(long, default_value_t = SyntheticConfig::default().topic_concentration)]
        topic_concentration: f64,
        /// Dirichlet concentration of document topic proportions.
        #[arg(long, default_value_t = SyntheticConfig::default().doc_concentration)]
        doc_concentration: f64,
    },
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { 0 };
            let text = e.render().to_string();
            let sink: &mut dyn Write = if e.use_stderr() { stderr } else { stdout };
            let _ = sink.write_all(text.as_bytes());
            return code;
        }
    };
    match dispatch(cli.command, stdout) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_ERROR
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Prepare {
            input,
            docword,
            vocab,
            labels,
            min_doc_terms,
            min_term_docs,
            out: dir,
        } => {
            let mut paths = input
                .map(DatasetPaths::in_dir)
                .unwrap_or_else(|| DatasetPaths::in_dir("."));
            if let Some(p) = docword {
                paths.docword = p;
            }
            if let Some(p) = vocab {
                paths.vocab = p;
            }
            if let Some(p) = labels {
                paths.labels = p;
            }
            cmd_prepare(&paths, min_doc_terms, min_term_docs, &dir, out)?;
            Ok(0)
        }
        Command::Run {
            config,
            seed,
            out: out_dir,
            method,
            set,
        } => cmd_run(&config, seed, out_dir, method, &set, out),
        Command::Topics { model, top } => {
            cmd_topics(&model, top, out)?;
            Ok(0)
        }
        Command::GenSynthetic {
            out: dir,
            seed,
            corpora,
            docs,
            topics,
            pool_topics,
            terms,
            doc_length,
            topic_concentration,
            doc_concentration,
        } => {
            let config = SyntheticConfig {
                seed,
                corpora,
                docs_per_corpus: docs,
                topics_per_corpus: topics,
                pool_topics,
                terms,
                doc_length,
                topic_concentration,
                doc_concentration,
            };
            let set = generate(&config)?;
            create_dir(&dir)?;
            write_corpus(&set, &DatasetPaths::in_dir(&dir))?;
            let _ = writeln!(
                out,
                "wrote {} corpora, {} terms to {}",
                set.len(),
                set.n_terms(),
                dir.display()
            );
            Ok(0)
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn cmd_prepare(
    paths: &DatasetPaths,
    min_doc_terms: usize,
    min_term_docs: usize,
    dir: &Path,
    out: &mut dyn Write,
) -> Result<()> {
    let raw = load_corpus(paths)?;
    let filtered = filter_corpus(&raw, min_doc_terms, min_term_docs)?;
    create_dir(dir)?;
    write_corpus(&filtered, &DatasetPaths::in_dir(dir))?;
    let docs: usize = filtered.corpora.iter().map(|c| c.counts.n_docs()).sum();
    let _ = writeln!(out, "corpora\t{}", filtered.len());
    let _ = writeln!(out, "documents\t{docs}");
    let _ = writeln!(out, "terms\t{}", filtered.n_terms());
    for c in &filtered.corpora {
        let _ = writeln!(out, "corpus\t{}\t{}", c.name, c.counts.n_docs());
    }
    Ok(())
}

pub fn cmd_run(
    config_path: &Path,
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
    method: Option<String>,
    settings: &[String],
    out: &mut dyn Write,
) -> Result<i32> {
    let mut config = ExperimentConfig::load(config_path)?;
    let cwd = Path::new(".");
    for s in settings {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got '{s}'")))?;
        config.set(k.trim(), v.trim(), cwd)?;
    }
    if let Some(seed) = seed {
        config.base_seed = seed;
    }
    if let Some(dir) = out_dir {
        config.out = dir;
    }
    if let Some(m) = method {
        config.method = m.parse()?;
    }
    config.check()?;
    let report = run_experiment(&config, threads_from_env()?)?;
    match report.summary() {
        Some((m, se)) => {
            let _ = writeln!(out, "{}\t{}\t{m:.4} ± {se:.4}", report.method, report.dataset);
        }
        None => {
            let _ = writeln!(out, "{}\t{}\tNA", report.method, report.dataset);
        }
    }
    for (t, m, se) in report.sweep_summary() {
        let _ = writeln!(out, "em_steps {t}\t{m:.4} ± {se:.4}");
    }
    let failures = report.failures();
    if failures > 0 {
        let _ = writeln!(out, "{failures} of {} runs failed; see results.tsv", report.rows.len());
        return Ok(EXIT_FAILURES);
    }
    Ok(0)
}

pub fn cmd_topics(model: &Path, top: usize, out: &mut dyn Write) -> Result<()> {
    if top == 0 {
        return Err(Error::Config("--top must be at least 1".into()));
    }
    let (vocab, model) = read_topic_model(model)?;
    for line in format_topics(&vocab, &model, top)? {
        let _ = writeln!(out, "{line}");
    }
    Ok(())
}
