//! Acceptance suite. Every test prints one `criterion N: PASS|FAIL ...`
//! line before asserting. Run with
//! `cargo test --test acceptance -- --nocapture --test-threads 1`.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use fewtopic::corpus::{split_words, write_corpus, CountMatrix, DatasetPaths};
use fewtopic::experiment::{run_experiment, ExperimentConfig, RunReport};
use fewtopic::lda::{gibbs_train, GibbsConfig};
use fewtopic::metatrainer::{episode_loss, episode_loss_grad, EpisodeConfig, Method};
use fewtopic::synthetic::{generate, SyntheticConfig};
use fewtopic::topicmodel::{e_step, init_params, log_posterior, lower_bound_q, m_step, PriorPair};
use ndarray::Array2;
use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Uniform};

fn report(id: u32, pass: bool, detail: String) {
    println!("criterion {id}: {} {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {id} failed: {detail}");
}

fn random_counts(n: usize, j: usize, hi: u32, rng: &mut ChaCha8Rng) -> CountMatrix {
    let rows: Vec<Vec<u32>> = (0..n)
        .map(|_| (0..j).map(|_| rng.random_range(0..=hi)).collect())
        .collect();
    CountMatrix::from_dense(&rows).unwrap()
}

#[test]
fn criterion_1_gradients_match_finite_differences() {
    let start = Instant::now();
    let config = EpisodeConfig {
        topics: 2,
        em_steps: 3,
        hidden: 8,
        repr_dim: 8,
        seed: 3,
        ..EpisodeConfig::new(Method::Ours).unwrap()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut params = config.init_params(10).unwrap();
    // Positive biases keep most ReLU units away from their kinks.
    for t in params.tensors_mut() {
        if t.nrows() == 1 {
            t.fill(0.1);
        }
    }
    let support = random_counts(3, 10, 4, &mut rng);
    let query = random_counts(3, 10, 2, &mut rng);
    let (_, grads) = episode_loss_grad(&support, &query, &params, &config, false, &mut rng).unwrap();

    let h = 1e-5;
    let loss = |p: &fewtopic::priornet::PriorNetParams| {
        episode_loss(&support, &query, p, &config, false, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    };
    let (mut worst, mut checked) = (0.0f64, 0usize);
    for (ti, grad) in grads.iter().enumerate() {
        for (idx, &an) in grad.iter().enumerate() {
            let (r, c) = (idx / grad.ncols(), idx % grad.ncols());
            let mut up = params.clone();
            up.tensors_mut()[ti][[r, c]] += h;
            let mut down = params.clone();
            down.tensors_mut()[ti][[r, c]] -= h;
            let fd = (loss(&up) - loss(&down)) / (2.0 * h);
            // Gradients below 1e-6 in magnitude are compared absolutely.
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        1,
        worst <= 1e-4 && secs < 10.0,
        format!("{checked} parameters, max relative error {worst:.2e}, {secs:.2}s"),
    );
}

struct Instance {
    x: CountMatrix,
    priors: PriorPair,
}

/// 200 random problems with N <= 5, J <= 20, K <= 3 and Gamma-distributed
/// priors.
fn em_instances() -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let gamma = Gamma::new(0.7, 1.5).unwrap();
    (0..200)
        .map(|_| {
            let n = rng.random_range(1..=5);
            let j = rng.random_range(2..=20);
            let k = rng.random_range(1..=3);
            let x = random_counts(n, j, 6, &mut rng);
            let mut draw = |rows, cols| Array2::from_shape_fn((rows, cols), |_| gamma.sample(&mut rng));
            let priors = PriorPair {
                alpha: draw(n, k),
                beta: draw(k, j),
            };
            Instance { x, priors }
        })
        .collect()
}

struct EmTrace {
    worst_drop: f64,
    worst_norm: f64,
    worst_gap: f64,
}

fn trace_em() -> &'static (EmTrace, f64) {
    static TRACE: OnceLock<(EmTrace, f64)> = OnceLock::new();
    TRACE.get_or_init(|| {
        let start = Instant::now();
        let mut t = EmTrace {
            worst_drop: 0.0,
            worst_norm: 0.0,
            worst_gap: 0.0,
        };
        for inst in em_instances() {
            let mut model = init_params(&inst.priors).unwrap();
            t.worst_norm = t.worst_norm.max(model.max_normalization_error());
            let mut prev = log_posterior(&inst.x, &model, &inst.priors).unwrap();
            for _ in 0..10 {
                let gamma = e_step(&inst.x, &model).unwrap();
                t.worst_norm = t.worst_norm.max(gamma.max_normalization_error());
                let q = lower_bound_q(&inst.x, &model, &gamma, &inst.priors).unwrap();
                t.worst_gap = t.worst_gap.max((q - prev).abs());
                model = m_step(&inst.x, &gamma, &inst.priors).unwrap();
                t.worst_norm = t.worst_norm.max(model.max_normalization_error());
                let next = log_posterior(&inst.x, &model, &inst.priors).unwrap();
                t.worst_drop = t.worst_drop.max(prev - next);
                prev = next;
            }
        }
        (t, start.elapsed().as_secs_f64())
    })
}

#[test]
fn criterion_2_em_is_monotone() {
    let (t, secs) = trace_em();
    report(
        2,
        t.worst_drop <= 1e-8 && *secs < 5.0,
        format!(
            "largest log-posterior decrease {:.2e} over 200 instances x 10 steps, {secs:.2}s",
            t.worst_drop.max(0.0)
        ),
    );
}

#[test]
fn criterion_3_normalization_invariants() {
    let (t, _) = trace_em();
    report(
        3,
        t.worst_norm <= 1e-9,
        format!("max row/topic-sum error {:.2e}", t.worst_norm),
    );
}

#[test]
fn criterion_4_lower_bound_is_tight_after_e_step() {
    let (t, _) = trace_em();
    report(
        4,
        t.worst_gap <= 1e-9,
        format!("max |Q - log posterior| {:.2e}", t.worst_gap),
    );
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

struct Benchmark {
    reports: Vec<(Method, RunReport)>,
    seconds: f64,
}

/// Runs the shipped benchmark config for every compared method on freshly
/// generated synthetic data.
fn benchmark() -> &'static Benchmark {
    static BENCH: OnceLock<Benchmark> = OnceLock::new();
    BENCH.get_or_init(|| {
        let start = Instant::now();
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("synthetic");
        let set = generate(&SyntheticConfig::default()).unwrap();
        write_corpus(&set, &DatasetPaths::in_dir(&data)).unwrap();
        let base = ExperimentConfig::load(&workspace_root().join("configs/synthetic-benchmark.cfg")).unwrap();
        let reports = [Method::Ours, Method::Dir, Method::Nn, Method::NnE, Method::LdaInd]
            .into_iter()
            .map(|method| {
                let mut c = base.clone();
                c.set("data", data.to_str().unwrap(), Path::new(".")).unwrap();
                c.method = method;
                c.out = dir.path().join(method.as_str());
                let r = run_experiment(&c, 1).unwrap();
                assert_eq!(r.failures(), 0);
                (method, r)
            })
            .collect();
        Benchmark {
            reports,
            seconds: start.elapsed().as_secs_f64(),
        }
    })
}

fn bench_mean(b: &Benchmark, m: Method) -> (f64, f64) {
    let r = &b.reports.iter().find(|(x, _)| *x == m).unwrap().1;
    assert_eq!(r.rows.len(), 30, "10 targets x 3 seeds");
    r.summary().unwrap()
}

#[test]
fn criterion_5_synthetic_benchmark_orderings() {
    let b = benchmark();
    let mean = |m| bench_mean(b, m).0;
    for (m, _) in &b.reports {
        let (p, se) = bench_mean(b, *m);
        println!("  {m:8} {p:.4} ± {se:.4}");
    }
    let checks = [
        ("ours < dir", mean(Method::Ours) < mean(Method::Dir)),
        ("ours < nn", mean(Method::Ours) < mean(Method::Nn)),
        ("nn-e < nn", mean(Method::NnE) < mean(Method::Nn)),
        ("ours < lda-ind", mean(Method::Ours) < mean(Method::LdaInd)),
    ];
    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    let detail = if failed.is_empty() {
        format!("all orderings hold, {:.0}s", b.seconds)
    } else {
        format!("violated: {}; {:.0}s", failed.join(", "), b.seconds)
    };
    report(5, failed.is_empty() && b.seconds < 900.0, detail);
}

#[test]
fn criterion_6_more_em_steps_do_not_hurt() {
    let b = benchmark();
    let ours = &b.reports.iter().find(|(m, _)| *m == Method::Ours).unwrap().1;
    let curve = ours.sweep_summary();
    for (t, m, se) in &curve {
        println!("  T={t:<2} {m:.4} ± {se:.4}");
    }
    let at = |steps| curve.iter().find(|(t, _, _)| *t == steps).map(|c| c.1).unwrap();
    let (t0, t10) = (at(0), at(10));
    report(6, t10 <= t0, format!("T=0 {t0:.4}, T=10 {t10:.4}"));
}

#[test]
fn criterion_7_split_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    // 20 documents x 50 terms x 10 tokens = 10 000 tokens.
    let x = CountMatrix::from_dense(&vec![vec![10u32; 50]; 20]).unwrap();
    assert_eq!(x.total(), 10_000);
    let (s, q) = split_words(&x, 0.8, &mut rng).unwrap();
    let exact = (0..20).all(|n| (0..50).all(|j| s.get(n, j) + q.get(n, j) == x.get(n, j)));
    let frac = s.total() as f64 / x.total() as f64;
    report(
        7,
        exact && (frac - 0.8).abs() <= 0.01,
        format!("support fraction {frac:.4}, cellwise sum exact: {exact}"),
    );
}

/// Two topics over disjoint halves of a 20-term vocabulary.
fn separable_corpus(seed: u64) -> (CountMatrix, [Vec<f64>; 2]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let topic = |lo: usize| -> Vec<f64> {
        (0..20)
            .map(|j| if (lo..lo + 10).contains(&j) { 0.1 } else { 0.0 })
            .collect()
    };
    let truth = [topic(0), topic(10)];
    let mix = Uniform::new(0.0, 1.0).unwrap();
    let rows: Vec<Vec<u32>> = (0..200)
        .map(|_| {
            let w: f64 = mix.sample(&mut rng);
            let p: Vec<f64> = (0..20).map(|j| w * truth[0][j] + (1.0 - w) * truth[1][j]).collect();
            let words = WeightedIndex::new(&p).unwrap();
            let mut row = vec![0u32; 20];
            for _ in 0..60 {
                row[words.sample(&mut rng)] += 1;
            }
            row
        })
        .collect();
    (CountMatrix::from_dense(&rows).unwrap(), truth)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (norm(a) * norm(b))
}

#[test]
fn criterion_8_lda_recovers_separable_topics() {
    let start = Instant::now();
    let mut scores = Vec::new();
    for seed in 0..3 {
        let (x, truth) = separable_corpus(seed);
        let model = gibbs_train(
            &x,
            2,
            &GibbsConfig::default(),
            &mut ChaCha8Rng::seed_from_u64(seed + 100),
        )
        .unwrap();
        let rows: Vec<Vec<f64>> = (0..2).map(|k| model.phi.row(k).to_vec()).collect();
        let direct = cosine(&rows[0], &truth[0]).min(cosine(&rows[1], &truth[1]));
        let swapped = cosine(&rows[0], &truth[1]).min(cosine(&rows[1], &truth[0]));
        scores.push(direct.max(swapped));
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        8,
        scores.iter().all(|&c| c >= 0.9) && secs < 30.0,
        format!("worst per-topic cosine per seed {scores:.4?}, {secs:.2}s"),
    );
}

#[test]
fn criterion_9_runs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let set = generate(&SyntheticConfig {
        corpora: 8,
        docs_per_corpus: 10,
        terms: 20,
        pool_topics: 5,
        doc_length: 40.0,
        ..SyntheticConfig::default()
    })
    .unwrap();
    write_corpus(&set, &DatasetPaths::in_dir(dir.path().join("data"))).unwrap();
    let cfg = dir.path().join("det.cfg");
    std::fs::write(
        &cfg,
        "data = data\ntargets = c07 c06\nrepetitions = 3\ntopics = 3\nhidden = 16\nrepr_dim = 8\n\
         max_epochs = 40\nval_interval = 5\nval_episodes = 5\nem_sweep = 0 5\nsave_models = false\n",
    )
    .unwrap();
    let files = ["results.tsv", "em_sweep.tsv"];
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let code = fewtopic::cli::cmd_run(&cfg, Some(5), Some(out.clone()), None, &[], &mut Vec::new()).unwrap();
        assert_eq!(code, 0);
        outputs.push(files.map(|f| std::fs::read(out.join(f)).unwrap()));
    }
    let same = outputs[0] == outputs[1];
    report(
        9,
        same,
        format!("{} byte-identical across two runs: {same}", files.join(", ")),
    );
}

/// Needs a 20 Newsgroups dataset prepared with `fewtopic prepare` (default
/// thresholds) in the directory named by `FEWTOPIC_20NEWS`, plus a config
/// listing its categories in `FEWTOPIC_20NEWS_CONFIG`. Takes hours.
#[test]
#[ignore]
fn criterion_10_twenty_newsgroups_ordering() {
    let (Ok(data), Ok(cfg)) = (
        std::env::var("FEWTOPIC_20NEWS"),
        std::env::var("FEWTOPIC_20NEWS_CONFIG"),
    ) else {
        println!("criterion 10: SKIP FEWTOPIC_20NEWS and FEWTOPIC_20NEWS_CONFIG not set");
        return;
    };
    let out = tempfile::tempdir().unwrap();
    let base = ExperimentConfig::load(Path::new(&cfg)).unwrap();
    let methods = [Method::Ours, Method::NnE, Method::Nn, Method::LdaInd];
    let means: Vec<f64> = methods
        .iter()
        .map(|&method| {
            let mut c = base.clone();
            c.set("data", &data, Path::new(".")).unwrap();
            c.method = method;
            c.out = out.path().join(method.as_str());
            let r = run_experiment(&c, fewtopic::experiment::threads_from_env().unwrap()).unwrap();
            let (m, se) = r.summary().unwrap();
            println!("  {method:8} {m:.1} ± {se:.1}");
            m
        })
        .collect();
    let ordered = means.windows(2).all(|w| w[0] < w[1]);
    report(10, ordered, format!("ours < nn-e < nn < lda-ind: {ordered}"));
}
