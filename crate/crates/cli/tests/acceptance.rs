//! Acceptance criteria, one PASS/FAIL line each. Reference values come from
//! oracles written here, independent of the library code paths they check.

use std::collections::BTreeMap;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Beta as BetaDist, Distribution};
use serde::Deserialize;
use statrs::distribution::{Beta, Continuous, ContinuousCDF};
use statrs::function::beta::ln_beta;

use mpg_cli::{
    cmd_run, cmd_synth_corpus, Draws, QpsModeArg, RunArgs, SamplerArgs, SynthCorpusArgs,
};
use mpg_core::aggregator::{posterior_greater, sample_root, summarize, DEFAULT_LEVEL};
use mpg_core::corpus::HierarchyConfig;
use mpg_core::harness::{evaluate_model, RunConfig};
use mpg_core::prompting::score_response;
use mpg_core::stats::{compare, format_table, pearson_slices, spearman_slices, ScoreSeries};
use mpg_core::synthoracle::{synthetic_corpus, LatencyDist, SyntheticModel};
use mpg_core::{LeafCounts, ModelSpec, Question, SamplerConfig, ScoringOutcome};

type Criterion = (&'static str, fn() -> Verdict);

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let (lo, frac) = (h.floor() as usize, h - h.floor());
    if lo + 1 >= sorted.len() {
        sorted[lo]
    } else {
        sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac
    }
}

fn tiered_accuracies(h: &HierarchyConfig) -> BTreeMap<String, f64> {
    let mut acc = BTreeMap::new();
    for (sd, a) in h.subdomains().iter().zip([0.9, 0.6, 0.3]) {
        for leaf in &sd.leaves {
            acc.insert(leaf.clone(), a);
        }
    }
    acc
}

fn synthetic(
    name: &str,
    acc: BTreeMap<String, f64>,
    seed: u64,
    failure_rate: f64,
) -> SyntheticModel {
    SyntheticModel {
        name: name.into(),
        accuracy_by_benchmark: acc,
        latency: LatencyDist {
            mean: 0.25,
            jitter: 0.0,
        },
        seed,
        garbage_mode: false,
        failure_rate,
    }
}

fn calibration() -> Verdict {
    const RUNS: u64 = 200;
    const TRUTH: f64 = 0.6;
    let started = Instant::now();
    let h = HierarchyConfig::mpg_default();
    let shape: Vec<usize> = h.subdomains().iter().map(|s| s.leaves.len()).collect();
    assert_eq!(shape, vec![6, 6, 2]);
    let corpus = synthetic_corpus(&h, 50, 7).unwrap();
    let acc = tiered_accuracies(&h);
    let rt = tokio::runtime::Runtime::new().unwrap();
    let (mut covered, mut close) = (0, 0);
    let mut worst: f64 = 0.0;
    for i in 0..RUNS {
        let model = synthetic("calib", acc.clone(), 1000 + i, 0.0);
        let run = rt
            .block_on(evaluate_model(
                &ModelSpec::synthetic(&model),
                &corpus,
                &h,
                &RunConfig::default(),
            ))
            .unwrap();
        let samples = sample_root(&run.leaf_counts, &h, &SamplerConfig::with_seed(i)).unwrap();
        let s = summarize(&samples, DEFAULT_LEVEL).unwrap();
        if s.ci_low <= TRUTH && TRUTH <= s.ci_high {
            covered += 1;
        }
        let err = (s.mean - TRUTH).abs();
        worst = worst.max(err);
        if err <= 0.03 {
            close += 1;
        }
    }
    let elapsed = started.elapsed();
    let coverage = covered as f64 / RUNS as f64;
    let coverage_ok = (0.90..=0.98).contains(&coverage);
    let per_run_ok = close == RUNS;
    let fast = elapsed < Duration::from_secs(120);
    verdict(
        coverage_ok && per_run_ok && fast,
        format!(
            "coverage {covered}/{RUNS} [{}]; root mean within 0.03 of m* in {close}/{RUNS} runs, worst {worst:.4} [{}]; {:.1}s [{}]",
            ok(coverage_ok),
            ok(per_run_ok),
            elapsed.as_secs_f64(),
            ok(fast)
        ),
    )
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "FAIL"
    }
}

/// Reference sampler: one subdomain over two leaves of size 4, question-count
/// latent draws, explicit Bernoulli loops.
fn reference_root(counts: [(u64, u64); 2], reps: usize, seed: u64) -> Vec<f64> {
    const EPS: f64 = 0.5;
    let floor = |s: u64, n: u64| {
        let a = if s == 0 { EPS } else { s as f64 };
        let b = if s == n { EPS } else { (n - s) as f64 };
        BetaDist::new(a, b).unwrap()
    };
    let leaves = counts.map(|(s, n)| floor(s, n));
    let n_d: u64 = counts.iter().map(|c| c.1).sum();
    let per_leaf = [n_d / 2 + n_d % 2, n_d / 2];
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..reps)
        .map(|_| {
            let mut z = 0;
            for (leaf, k) in leaves.iter().zip(per_leaf) {
                let p = leaf.sample(&mut rng);
                for _ in 0..k {
                    if rng.random::<f64>() < p {
                        z += 1;
                    }
                }
            }
            let p_d = floor(z, n_d).sample(&mut rng);
            let mut big_z = 0;
            for _ in 0..n_d {
                if rng.random::<f64>() < p_d {
                    big_z += 1;
                }
            }
            let a = if big_z == 0 { EPS } else { big_z as f64 };
            let b = if big_z == n_d {
                EPS
            } else {
                (n_d - big_z) as f64
            };
            a / (a + b)
        })
        .collect()
}

fn brute_force_equivalence() -> Verdict {
    let h = HierarchyConfig::new(
        "R",
        vec![("S".to_string(), vec!["a".to_string(), "b".to_string()])],
    )
    .unwrap();
    let counts: BTreeMap<String, LeafCounts> = [
        ("a".to_string(), LeafCounts::new(3, 4).unwrap()),
        ("b".to_string(), LeafCounts::new(1, 4).unwrap()),
    ]
    .into_iter()
    .collect();
    let cfg = SamplerConfig {
        replications: 5000,
        subdomain_draws: None,
        root_draws: None,
        ..SamplerConfig::with_seed(2024)
    };
    let mut ours = sample_root(&counts, &h, &cfg).unwrap();
    let mut reference = reference_root([(3, 4), (1, 4)], 1_000_000, 99);
    ours.sort_by(f64::total_cmp);
    reference.sort_by(f64::total_cmp);
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let dm = (mean(&ours) - mean(&reference)).abs();
    let dlo = (quantile(&ours, 0.025) - quantile(&reference, 0.025)).abs();
    let dhi = (quantile(&ours, 0.975) - quantile(&reference, 0.975)).abs();
    verdict(
        dm <= 0.01 && dlo <= 0.02 && dhi <= 0.02,
        format!("|Δmean| {dm:.4} (≤0.01), |Δq2.5| {dlo:.4}, |Δq97.5| {dhi:.4} (≤0.02)"),
    )
}

/// Adaptive Simpson on [a, b].
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn step(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = (a + b) / 2.0;
        let (lm, rm) = ((a + m) / 2.0, (m + b) / 2.0);
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            left + right + (left + right - whole) / 15.0
        } else {
            step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    let (fa, fb, fm) = (f(a), f(b), f((a + b) / 2.0));
    step(
        f,
        a,
        b,
        fa,
        fm,
        fb,
        (b - a) / 6.0 * (fa + 4.0 * fm + fb),
        tol,
        50,
    )
}

/// `P(X > Y)` for independent Betas: the integral of `f_X(x) F_Y(x)`.
fn exact_greater(x: (f64, f64), y: (f64, f64)) -> f64 {
    let bx = Beta::new(x.0, x.1).unwrap();
    let by = Beta::new(y.0, y.1).unwrap();
    let f = move |t: f64| {
        if t <= 0.0 || t >= 1.0 {
            0.0
        } else {
            bx.pdf(t) * by.cdf(t)
        }
    };
    simpson(&f, 0.0, 1.0, 1e-12)
}

fn dominance() -> Verdict {
    let c = |s, n| LeafCounts::new(s, n).unwrap();
    let same = posterior_greater(c(50, 100), c(50, 100), 100_000, 11, 0.5).unwrap();
    let strong = posterior_greater(c(99, 100), c(1, 100), 100_000, 11, 0.5).unwrap();
    let exact = exact_greater((99.0, 1.0), (1.0, 99.0));
    // Beta(99,1) vs Beta(1,99) has the closed form 1 - 99 B(99, 100).
    let closed = 1.0 - 99.0 * ln_beta(99.0, 100.0).exp();
    let quad_ok = (exact - closed).abs() <= 1e-6;
    let mid = exact_greater((7.0, 3.0), (5.0, 5.0));
    let mid_mc = posterior_greater(c(7, 10), c(5, 10), 200_000, 5, 0.5).unwrap();
    let se = (mid * (1.0 - mid) / 200_000.0).sqrt();
    let pass = (same - 0.5).abs() <= 0.02
        && strong >= 0.999
        && exact >= 0.999
        && quad_ok
        && (mid_mc - mid).abs() <= 4.0 * se;
    verdict(
        pass,
        format!(
            "identical {same:.4}; (99,100) vs (1,100) MC {strong:.6}, quadrature {exact:.9}, |quadrature - closed form| {:.1e}; (7,10) vs (5,10) MC {mid_mc:.4} vs quadrature {mid:.4}",
            (exact - closed).abs()
        ),
    )
}

fn brute_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov = x
        .iter()
        .zip(y)
        .map(|(a, b)| (a - mx) * (b - my))
        .sum::<f64>()
        / (n - 1.0);
    let sx = (x.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let sy = (y.iter().map(|b| (b - my).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    cov / (sx * sy)
}

/// Rank = 1 + number strictly below + half the other ties.
fn brute_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|v| {
            let below = x.iter().filter(|w| *w < v).count() as f64;
            let equal = x.iter().filter(|w| *w == v).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

fn correlation_oracle() -> Verdict {
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    let mut identity_exact = true;
    let mut series = 0;
    while series < 100 {
        let n = rng.random_range(5..=20);
        // Half the series draw from a small grid, so ties are common.
        let grid = series % 2 == 0;
        let draw = |rng: &mut ChaCha20Rng| {
            if grid {
                rng.random_range(0..6) as f64 / 2.0
            } else {
                rng.random::<f64>() * 10.0 - 5.0
            }
        };
        let x: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
        let y: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
        let (Ok(raw), Ok(rank)) = (pearson_slices(&x, &y), spearman_slices(&x, &y)) else {
            continue;
        };
        worst = worst
            .max((raw.r - brute_pearson(&x, &y)).abs())
            .max((rank.r - brute_pearson(&brute_ranks(&x), &brute_ranks(&y))).abs());
        identity_exact &= pearson_slices(&x, &x).unwrap().r == 1.0;
        identity_exact &= spearman_slices(&x, &x).unwrap().r == 1.0;
        series += 1;
    }

    let load = |f: &str| ScoreSeries::load(&fixtures().join(f)).unwrap();
    let (mpg, arena, mmlu) = (
        load("mpg_scores.csv"),
        load("arena_scores.csv"),
        load("mmlu_scores.csv"),
    );
    let rows = vec![
        compare("MPG vs Arena Score", &mpg, &arena).unwrap(),
        compare("MPG vs MMLU", &mpg, &mmlu).unwrap(),
        compare("Arena Score vs MMLU", &arena, &mmlu).unwrap(),
    ];
    let table = format_table(&rows);
    let expected =
        std::fs::read_to_string(fixtures().join("comparison_table_expected.csv")).unwrap();
    let table_ok = table == expected;
    verdict(
        worst <= 1e-12 && identity_exact && table_ok,
        format!(
            "100 series, max |Δr| {worst:.2e}; identity r == 1 exactly: {identity_exact}; table fixture byte-identical: {table_ok}"
        ),
    )
}

#[derive(Deserialize)]
struct Golden {
    note: String,
    question: Question,
    response: String,
    expected: ScoringOutcome,
}

fn scoring_goldens() -> Verdict {
    let text = std::fs::read_to_string(fixtures().join("scoring_goldens.jsonl")).unwrap();
    let goldens: Vec<Golden> = text
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let score_all = || -> Vec<ScoringOutcome> {
        goldens
            .iter()
            .map(|g| score_response(&g.question, &g.response))
            .collect()
    };
    let first = score_all();
    let mismatches: Vec<&str> = goldens
        .iter()
        .zip(&first)
        .filter(|(g, got)| g.expected != **got)
        .map(|(g, _)| g.note.as_str())
        .collect();
    let rerun_identical =
        serde_json::to_string(&first).unwrap() == serde_json::to_string(&score_all()).unwrap();
    verdict(
        goldens.len() == 40 && mismatches.is_empty() && rerun_identical,
        format!(
            "{} pairs, {} mismatches {:?}; rerun bit-identical: {rerun_identical}",
            goldens.len(),
            mismatches.len(),
            mismatches
        ),
    )
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
    corpus: PathBuf,
    hierarchy: PathBuf,
}

fn workspace() -> Workspace {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let hierarchy = root.join("hierarchy.toml");
    std::fs::write(&hierarchy, HierarchyConfig::mpg_default().to_toml_string()).unwrap();
    let corpus = root.join("corpus");
    cmd_synth_corpus(&SynthCorpusArgs {
        hierarchy: hierarchy.clone(),
        per_leaf: 50,
        seed: 3,
        out: corpus.clone(),
    })
    .unwrap();
    Workspace {
        _dir: dir,
        root,
        corpus,
        hierarchy,
    }
}

fn run_args(ws: &Workspace, model: &Path, out: &str, seed: u64) -> RunArgs {
    RunArgs {
        model: model.to_path_buf(),
        corpus: ws.corpus.clone(),
        hierarchy: ws.hierarchy.clone(),
        sampler: SamplerArgs {
            seed,
            replications: 2000,
            epsilon: 0.5,
            subdomain_draws: Draws::Fixed(1_000_000),
            root_draws: None,
        },
        parallelism: 1,
        qps_mode: QpsModeArg::Sequential,
        max_retries: 3,
        timeout: 60.0,
        out: ws.root.join(out),
    }
}

fn write_model(ws: &Workspace, file: &str, model: &SyntheticModel) -> PathBuf {
    let path = ws.root.join(file);
    std::fs::write(&path, ModelSpec::synthetic(model).to_toml_string()).unwrap();
    path
}

fn end_to_end_determinism() -> Verdict {
    let ws = workspace();
    let h = HierarchyConfig::mpg_default();
    let model = write_model(
        &ws,
        "model.toml",
        &synthetic("synth", tiered_accuracies(&h), 5, 0.0),
    );
    let a = cmd_run(&run_args(&ws, &model, "a", 42)).unwrap();
    let b = cmd_run(&run_args(&ws, &model, "b", 42)).unwrap();
    let bytes_a = std::fs::read(&a.report_path).unwrap();
    let bytes_b = std::fs::read(&b.report_path).unwrap();
    let identical = bytes_a == bytes_b;
    let qps = a.report.qps;
    let subdomains = a.report.subdomains.len();
    verdict(
        identical && qps == 4.0 && subdomains == 3,
        format!(
            "reports byte-identical: {identical} ({} bytes); qps {qps:?} (want 4.0 exactly); {subdomains} subdomain summaries",
            bytes_a.len()
        ),
    )
}

fn failure_policy() -> Verdict {
    let ws = workspace();
    let h = HierarchyConfig::mpg_default();
    let clean = synthetic("clean", tiered_accuracies(&h), 8, 0.0);
    let flaky = synthetic("flaky", tiered_accuracies(&h), 8, 0.2);
    let clean_path = write_model(&ws, "clean.toml", &clean);
    let flaky_path = write_model(&ws, "flaky.toml", &flaky);
    let base = cmd_run(&run_args(&ws, &clean_path, "clean", 42)).unwrap();
    let hit = cmd_run(&run_args(&ws, &flaky_path, "flaky", 42)).unwrap();

    let totals_ok = base
        .report
        .leaves
        .iter()
        .zip(&hit.report.leaves)
        .all(|(a, b)| a.benchmark == b.benchmark && a.total == 50 && b.total == 50);
    let run = mpg_core::RunResult::read(&hit.run_path).unwrap();
    let failed = run.records.iter().filter(|r| r.failed()).count();
    let expected_failures = run
        .records
        .iter()
        .filter(|r| flaky.fails_on(&r.benchmark_id, &r.question_id))
        .count();
    let warnings_ok = hit.report.warnings == failed && failed == expected_failures && failed > 0;
    let lower = hit.report.goodness.mean < base.report.goodness.mean;
    verdict(
        totals_ok && warnings_ok && lower,
        format!(
            "totals all 50: {totals_ok}; warnings {} = failures {failed} of {}; goodness {:.4} < {:.4}: {lower}",
            hit.report.warnings,
            run.records.len(),
            hit.report.goodness.mean,
            base.report.goodness.mean
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 7] = [
        ("calibration", calibration),
        ("brute-force equivalence", brute_force_equivalence),
        ("posterior_greater", dominance),
        ("correlation oracle", correlation_oracle),
        ("scoring goldens", scoring_goldens),
        ("end-to-end determinism", end_to_end_determinism),
        ("failure policy", failure_policy),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let v = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        if !v.pass {
            failures += 1;
        }
        println!(
            "acceptance {} {name}: {} ({})",
            i + 1,
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
    }
    println!(
        "acceptance: {} passed, {failures} failed",
        criteria.len() - failures
    );
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
