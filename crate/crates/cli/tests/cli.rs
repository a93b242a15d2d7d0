use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chrono::{TimeZone, Utc};
use mpg_core::corpus::HierarchyConfig;
use mpg_core::harness::{tally, EvalRecord};
use mpg_core::stats::{pearson, ScoreSeries};
use mpg_core::synthoracle::{LatencyDist, SyntheticModel};
use mpg_core::{ModelSpec, ParseStatus, Report, RunResult, ScoringOutcome};

fn mpg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mpg"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let f = Self {
            dir: tempfile::tempdir().unwrap(),
        };
        let out = mpg(&[
            "synth-corpus",
            "--hierarchy",
            s(&configs().join("mpg_hierarchy.toml")),
            "--per-leaf",
            "20",
            "--seed",
            "1",
            "--out",
            s(&f.path("corpus")),
        ]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        f
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn model(&self, name: &str, accuracy: f64, latency: f64) -> PathBuf {
        let h = HierarchyConfig::mpg_default();
        let model = SyntheticModel {
            name: name.into(),
            accuracy_by_benchmark: h.leaves().map(|l| (l.to_string(), accuracy)).collect(),
            latency: LatencyDist {
                mean: latency,
                jitter: 0.0,
            },
            seed: 3,
            garbage_mode: false,
            failure_rate: 0.0,
        };
        let path = self.path(&format!("{name}.toml"));
        std::fs::write(&path, ModelSpec::synthetic(&model).to_toml_string()).unwrap();
        path
    }

    fn run(&self, model: &Path, out: &str, extra: &[&str]) -> Output {
        let (corpus, hierarchy, out) = (
            self.path("corpus"),
            configs().join("mpg_hierarchy.toml"),
            self.path(out),
        );
        let mut args = vec![
            "run",
            "--model",
            s(model),
            "--corpus",
            s(&corpus),
            "--hierarchy",
            s(&hierarchy),
            "--replications",
            "500",
            "--out",
            s(&out),
        ];
        args.extend_from_slice(extra);
        mpg(&args)
    }
}

#[test]
fn shipped_model_specs_parse() {
    let synth = ModelSpec::load(&configs().join("synthetic_model.toml")).unwrap();
    synth.validate().unwrap();
    let model = synth.synthetic_model().unwrap();
    model.validate().unwrap();
    model
        .check_benchmarks(HierarchyConfig::mpg_default().leaves())
        .unwrap();
    let http = ModelSpec::load(&configs().join("http_model.example.toml")).unwrap();
    http.validate().unwrap();
}

#[test]
fn missing_hierarchy_file_is_named() {
    let f = Fixture::new();
    let model = f.model("m", 0.5, 0.1);
    let missing = f.path("nope/hierarchy.toml");
    let out = mpg(&[
        "run",
        "--model",
        s(&model),
        "--corpus",
        s(&f.path("corpus")),
        "--hierarchy",
        s(&missing),
        "--out",
        s(&f.path("out")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(s(&missing)), "{err}");
    assert!(err.contains("corpus:"), "{err}");
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(mpg(&["run", "--model"]).status.code(), Some(1));
    assert_eq!(mpg(&["bogus"]).status.code(), Some(1));
    assert_eq!(
        mpg(&[
            "aggregate",
            "--run",
            "r",
            "--hierarchy",
            "h",
            "--subdomain-draws",
            "zero"
        ])
        .status
        .code(),
        Some(1)
    );
    let help = mpg(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&help.stdout).contains("compare"));
}

#[test]
fn missing_credentials_are_a_provider_failure() {
    let f = Fixture::new();
    let spec = f.path("http.toml");
    std::fs::write(
        &spec,
        "name = \"remote\"\nprovider_kind = \"http_chat\"\nendpoint = \"http://127.0.0.1:9/v1/chat/completions\"\n\
         auth_env_var = \"MPG_CLI_TEST_UNSET_TOKEN\"\n\n[request_params]\nmodel = \"x\"\n",
    )
    .unwrap();
    let out = f.run(&spec, "out", &[]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("MPG_CLI_TEST_UNSET_TOKEN"), "{err}");
}

#[test]
fn unreachable_endpoint_fails_every_question() {
    let f = Fixture::new();
    let spec = f.path("http.toml");
    std::fs::write(
        &spec,
        "name = \"remote\"\nprovider_kind = \"http_chat\"\nendpoint = \"http://127.0.0.1:9/v1/chat/completions\"\n\n\
         [request_params]\nmodel = \"x\"\n",
    )
    .unwrap();
    let out = f.run(&spec, "out", &["--max-retries", "0", "--parallelism", "8"]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    // The run file is still written for inspection.
    assert!(f.path("out/run.jsonl").exists());
}

#[test]
fn run_then_aggregate_reproduces_report() {
    let f = Fixture::new();
    let model = f.model("m", 0.7, 0.5);
    let out = f.run(&model, "out", &["--seed", "5"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("qps 2.0000"), "{stdout}");

    let report_path = f.path("out/report.json");
    let report = Report::read(&report_path).unwrap();
    assert_eq!(report.subdomains.len(), 3);
    assert_eq!(report.qps, 2.0);

    let hierarchy = configs().join("mpg_hierarchy.toml");
    let run = f.path("out/run.jsonl");
    let like = mpg(&[
        "aggregate",
        "--run",
        s(&run),
        "--hierarchy",
        s(&hierarchy),
        "--like",
        s(&report_path),
    ]);
    assert!(
        like.status.success(),
        "{}",
        String::from_utf8_lossy(&like.stderr)
    );
    assert_eq!(like.stdout, std::fs::read(&report_path).unwrap());

    let flags = mpg(&[
        "aggregate",
        "--run",
        s(&run),
        "--hierarchy",
        s(&hierarchy),
        "--seed",
        "5",
        "--replications",
        "500",
    ]);
    assert_eq!(flags.stdout, std::fs::read(&report_path).unwrap());

    let other_seed = mpg(&[
        "aggregate",
        "--run",
        s(&run),
        "--hierarchy",
        s(&hierarchy),
        "--seed",
        "6",
        "--replications",
        "500",
    ]);
    assert_ne!(other_seed.stdout, flags.stdout);
}

#[test]
fn aggregate_rejects_hierarchy_mismatch() {
    let f = Fixture::new();
    let model = f.model("m", 0.7, 0.5);
    assert!(f.run(&model, "out", &[]).status.success());
    let h = f.path("extra.toml");
    std::fs::write(
        &h,
        "root = \"R\"\n[subdomains]\nS = [\"squad\", \"not_in_run\"]\n",
    )
    .unwrap();
    let out = mpg(&[
        "aggregate",
        "--run",
        s(&f.path("out/run.jsonl")),
        "--hierarchy",
        s(&h),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not_in_run"));
}

#[test]
fn compare_emits_correlations_and_frontier() {
    let f = Fixture::new();
    let models = [
        ("a", 0.2, 0.5),
        ("b", 0.45, 0.25),
        ("c", 0.7, 1.0),
        ("d", 0.95, 2.0),
    ];
    let mut reports = Vec::new();
    for (name, acc, lat) in models {
        let m = f.model(name, acc, lat);
        let out = f.run(&m, name, &["--seed", "1"]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        reports.push(f.path(&format!("{name}/report.json")));
    }
    let goodness: Vec<(String, f64)> = reports
        .iter()
        .map(|p| {
            let r = Report::read(p).unwrap();
            (r.model, r.goodness.mean)
        })
        .collect();

    let same = f.path("same.csv");
    let lines: String = goodness.iter().map(|(m, g)| format!("{m},{g}\n")).collect();
    std::fs::write(&same, format!("model,score\n{lines}")).unwrap();
    let permuted = f.path("perm.csv");
    std::fs::write(&permuted, "a,3\nb,1\nc,4\nd,2\n").unwrap();

    let mut args = vec!["compare".to_string()];
    for r in &reports {
        args.push("--report".into());
        args.push(s(r).into());
    }
    args.push("--score".into());
    args.push(format!("Same={}", s(&same)));
    args.push("--score".into());
    args.push(format!("Perm={}", s(&permuted)));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let out = mpg(&refs);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("Comparison,Raw Pearson corr,p-value,Rank Pearson corr,p-value")
    );
    let same_row = lines.next().unwrap();
    assert!(
        same_row.starts_with("MPG vs Same,1.0000,0.0000,1.0000,"),
        "{same_row}"
    );

    let mpg_series = ScoreSeries::new(goodness.clone()).unwrap();
    let perm_series = ScoreSeries::load(&permuted).unwrap();
    let oracle = pearson(&mpg_series, &perm_series).unwrap();
    let perm_row = lines.next().unwrap();
    assert!(
        perm_row.starts_with(&format!("MPG vs Perm,{:.4},{:.4},", oracle.r, oracle.p)),
        "{perm_row}"
    );
    assert!(lines.next().unwrap().starts_with("Same vs Perm,"));
    assert_eq!(lines.next(), Some(""));
    assert_eq!(
        lines.next(),
        Some("model,qps,log10_qps,goodness,ci_low,ci_high")
    );
    let b = lines.find(|l| l.starts_with("b,")).unwrap();
    assert!(b.starts_with("b,4.000000,0.602060,"), "{b}");

    let few = mpg(&[
        "compare",
        "--report",
        s(&reports[0]),
        "--report",
        s(&reports[1]),
        "--score",
        &format!("Perm={}", s(&permuted)),
    ]);
    assert_eq!(few.status.code(), Some(2));
}

fn handmade_run(model: &str, counts: &[(&str, u64, u64)]) -> RunResult {
    let mut records = Vec::new();
    for (bench, succ, total) in counts {
        for i in 0..*total {
            records.push(EvalRecord {
                benchmark_id: bench.to_string(),
                question_id: format!("{i:04}"),
                prompt: "p".into(),
                response: if i < *succ { "B" } else { "A" }.into(),
                outcome: if i < *succ {
                    ScoringOutcome::correct()
                } else {
                    ScoringOutcome::zero(ParseStatus::Clean)
                },
                latency: 0.5,
                error: None,
            });
        }
    }
    let at = Utc.with_ymd_and_hms(2024, 6, 1, 0, 0, 0).unwrap();
    RunResult {
        model: model.into(),
        leaf_counts: tally(&records),
        records,
        qps: 2.0,
        started_at: at,
        finished_at: at,
        seed: 0,
        warnings: 0,
    }
}

#[test]
fn social_table_has_race_so_ses_columns() {
    let f = tempfile::tempdir().unwrap();
    let run = handmade_run(
        "probe",
        &[
            ("bbq_race_ambig", 100, 100),
            ("bbq_race_disambig", 50, 100),
            ("bbq_sexuality_ambig", 40, 80),
            ("bbq_sexuality_disambig", 40, 80),
            ("bbq_ses_ambig", 10, 100),
            ("bbq_ses_disambig", 90, 100),
        ],
    );
    let path = f.path().join("probe.jsonl");
    run.write(&path).unwrap();
    let out = mpg(&["social", "--run", s(&path), "--seed", "4"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(
        String::from_utf8(out.stdout).unwrap(),
        "Model,Race,SO,SES\nprobe,1.00,0.50,0.00\n"
    );

    let pairs = f.path().join("pairs.toml");
    std::fs::write(
        &pairs,
        "[[category]]\nname = \"X\"\nambiguous = \"bbq_race_ambig\"\nunambiguous = \"missing_bench\"\n",
    )
    .unwrap();
    let bad = mpg(&["social", "--run", s(&path), "--pairs", s(&pairs)]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("missing_bench"));

    let shipped = mpg(&[
        "social",
        "--run",
        s(&path),
        "--seed",
        "4",
        "--pairs",
        s(&configs().join("bbq_pairs.toml")),
    ]);
    assert_eq!(
        shipped.stdout,
        mpg(&["social", "--run", s(&path), "--seed", "4"]).stdout
    );
}
