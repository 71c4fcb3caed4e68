use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rankguide_core::generator::{gen_synthetic_trace, CollapseSegment, GeneratorSpec};
use rankguide_core::rgt::save_rgt;
use rankguide_core::simulator::SimulationReport;
use rankguide_core::steering::SteeringVector;
use rankguide_core::trace::{save_trace, TraceRole};
use rankguide_core::Tensor;
use serde_json::Value;

fn rankguide(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rankguide"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small signal geometry used throughout: W = 4, d_hid = 16 = 2 * 2 * 4.
const SMALL: [&str; 6] = ["--w", "4", "--d1", "2", "--d2", "2"];

fn small_trace(dir: &Path, name: &str, spec: GeneratorSpec, seed: u64) -> std::path::PathBuf {
    let path = dir.join(name);
    save_trace(&gen_synthetic_trace(&spec, seed).unwrap(), &path).unwrap();
    path
}

#[test]
fn decompose_outputs_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let ones = dir.path().join("ones.rgt");
    save_rgt(&Tensor::new(&[10, 16, 16, 6], &vec![1.0; 15360]).unwrap(), &ones).unwrap();
    let o = rankguide(&["decompose", "--input", p(&ones), "--epsilon", "0.1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["ranks"], serde_json::json!([1, 1, 1]));
    assert_eq!(v["epsilon"], 0.1);

    let rand_path = dir.path().join("rand.rgt");
    let data: Vec<f64> = (0..15360).map(|i| ((i * 7919) % 1013) as f64 / 1013.0 - 0.5).collect();
    save_rgt(&Tensor::new(&[10, 16, 16, 6], &data).unwrap(), &rand_path).unwrap();
    let out = dir.path().join("d.json");
    let o = rankguide(&["decompose", "--input", p(&rand_path), "--epsilon", "0.1", "--json-out", p(&out)]);
    assert!(o.status.success());
    let v: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert!(v["rel_error"].as_f64().unwrap() <= 0.1);

    let o = rankguide(&["decompose", "--input", p(&ones), "--epsilon", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("invalid epsilon"), "{}", stderr(&o));

    let bad = dir.path().join("bad.rgt");
    fs::write(&bad, b"NOPE").unwrap();
    assert_eq!(rankguide(&["decompose", "--input", p(&bad), "--epsilon", "0.1"]).status.code(), Some(2));
    let missing = dir.path().join("missing.rgt");
    assert_eq!(rankguide(&["decompose", "--input", p(&missing), "--epsilon", "0.1"]).status.code(), Some(4));
}

#[test]
fn signal_reports_warmup_and_collapse() {
    let dir = tempfile::tempdir().unwrap();
    let spec = GeneratorSpec {
        n_steps: 20,
        d_hid: 16,
        collapse: vec![CollapseSegment { start: 6, len: 12, dim: 2, noise: 0.0 }],
        ..GeneratorSpec::default()
    };
    let trace = small_trace(dir.path(), "t.jsonl", spec, 1);
    let mut args = vec!["signal", "--trace", p(&trace)];
    args.extend(SMALL);
    let o = rankguide(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows: Vec<Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 20);
    for (t, row) in rows.iter().enumerate() {
        assert_eq!(row["step"], t);
        if t < 3 {
            assert!(row["r1"].is_null() && row["r2"].is_null());
        } else {
            assert!(row["r1"].is_u64());
        }
        // Windows entirely inside the collapse.
        if (9..18).contains(&t) {
            assert!(row["r1"].as_u64().unwrap() <= 2);
        }
    }

    // Constant logits have maximal entropy.
    let mut t = gen_synthetic_trace(&GeneratorSpec { n_steps: 2, d_hid: 16, ..GeneratorSpec::default() }, 0).unwrap();
    t.steps.iter_mut().for_each(|s| s.topk_logits = vec![0.5; 20]);
    let flat = dir.path().join("flat.jsonl");
    save_trace(&t, &flat).unwrap();
    let o = rankguide(&["signal", "--trace", p(&flat), "--w", "4", "--d1", "2", "--d2", "2"]);
    for l in stdout(&o).lines() {
        let v: Value = serde_json::from_str(l).unwrap();
        assert!((v["entropy"].as_f64().unwrap() - 20f64.ln()).abs() < 1e-12);
    }
}

#[test]
fn steer_extract_filters_and_records() {
    let dir = tempfile::tempdir().unwrap();
    let calib = dir.path().join("calib");
    fs::create_dir(&calib).unwrap();
    for i in 0..8 {
        let spec = GeneratorSpec {
            n_steps: 8,
            d_hid: 16,
            validation_ratio: Some(0.25),
            collapse: if i % 4 == 0 {
                vec![CollapseSegment { start: 1, len: 6, dim: 1, noise: 0.0 }]
            } else {
                vec![]
            },
            ..GeneratorSpec::default()
        };
        small_trace(&calib, &format!("s{i}.jsonl"), spec, 40 + i);
    }
    let out = dir.path().join("sv.json");
    let mut args = vec!["steer-extract", "--calib", p(&calib), "--t-r1", "3", "--t-r2", "1", "--out", p(&out)];
    args.extend(SMALL);
    let o = rankguide(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let sv = SteeringVector::load(&out).unwrap();
    assert_eq!(sv.provenance.samples_total, 8);
    assert_eq!(sv.provenance.samples_kept, 6);
    assert_eq!(sv.alpha_default, 1.0);
    assert_eq!(sv.provenance.n_exe + sv.provenance.n_val, 6 * 8);

    // Keywords that never match leave the validation class empty.
    let kw = dir.path().join("kw.txt");
    fs::write(&kw, "# custom\nzyzzyva\n").unwrap();
    let mut args = vec![
        "steer-extract", "--calib", p(&calib), "--keywords", p(&kw), "--t-r1", "3", "--t-r2", "1", "--out", p(&out),
    ];
    args.extend(SMALL);
    let o = rankguide(&args);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Validation"), "{}", stderr(&o));

    // Default thresholds reject every 16-dimensional sample.
    let mut args = vec!["steer-extract", "--calib", p(&calib), "--out", p(&out)];
    args.extend(SMALL);
    let o = rankguide(&args);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("rank filtering"), "{}", stderr(&o));
}

fn sim_fixture(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let srm = small_trace(
        dir,
        "srm.jsonl",
        GeneratorSpec {
            n_steps: 40,
            d_hid: 16,
            healthy_entropy: [1.0, 1.3],
            collapse: vec![
                CollapseSegment { start: 5, len: 6, dim: 1, noise: 0.0 },
                CollapseSegment { start: 22, len: 6, dim: 1, noise: 0.0 },
            ],
            validation_ratio: Some(0.25),
            ..GeneratorSpec::default()
        },
        5,
    );
    let lrm = small_trace(
        dir,
        "lrm.jsonl",
        GeneratorSpec {
            n_steps: 40,
            d_hid: 16,
            role: TraceRole::Lrm,
            ..GeneratorSpec::default()
        },
        6,
    );
    (srm, lrm)
}

fn run_sim(srm: &Path, lrm: &Path, report: &Path, extra: &[&str]) -> SimulationReport {
    let mut args = vec!["simulate", "--srm", p(srm), "--lrm", p(lrm), "--report", p(report), "--collapse-window", "4"];
    args.extend(SMALL);
    args.extend(extra);
    let o = rankguide(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    SimulationReport::load(report).unwrap()
}

#[test]
fn simulate_modes_and_degenerate_config() {
    let dir = tempfile::tempdir().unwrap();
    let (srm, lrm) = sim_fixture(dir.path());
    let r = dir.path().join("r.json");

    let off = run_sim(&srm, &lrm, &r, &["--t-e", "inf", "--t-r1", "0", "--t-r2", "0"]);
    let s = &off.samples[0];
    assert_eq!((s.steps_lrm, s.steps_total), (0, 40));

    // Healthy steps all carry entropy >= 1.0, so entropy-only routes every other step.
    let ent = run_sim(&srm, &lrm, &r, &["--mode", "entropy_only", "--t-e", "0.9"]);
    let full = run_sim(&srm, &lrm, &r, &["--mode", "full", "--t-e", "0.9", "--t-r1", "3", "--t-r2", "1"]);
    assert_eq!(ent.config_id, "entropy_only");
    assert!(ent.samples[0].decisions.iter().all(|d| d.r1.is_none()));
    assert!(full.samples[0].rank_computations > 0);
}

#[test]
fn config_file_precedence_and_rejections() {
    let dir = tempfile::tempdir().unwrap();
    let (srm, lrm) = sim_fixture(dir.path());
    let r = dir.path().join("r.json");
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, "[simulate]\nmode = \"entropy_only\"\nconfig_id = \"from-file\"\nt_e = 5.0\n").unwrap();

    let file_only = run_sim(&srm, &lrm, &r, &["--config", p(&cfg)]);
    assert_eq!(file_only.config_id, "from-file");
    assert_eq!(file_only.samples[0].steps_lrm, 0);
    let flag = run_sim(&srm, &lrm, &r, &["--config", p(&cfg), "--config-id", "flag", "--t-e", "0.9"]);
    assert_eq!(flag.config_id, "flag");
    assert!(flag.samples[0].steps_lrm > 0);

    fs::write(&cfg, "[simulate]\nthreshold = 1\n").unwrap();
    let o = rankguide(&["--config", p(&cfg), "simulate", "--srm", p(&srm), "--lrm", p(&lrm), "--report", p(&r)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("threshold"), "{}", stderr(&o));

    let o = rankguide(&["simulate", "--reset-on-route", "--no-reset-on-route"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("--reset-on-route") && err.contains("--no-reset-on-route"), "{err}");

    let o = rankguide(&["simulate", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn report_sorts_and_computes_speedup() {
    let dir = tempfile::tempdir().unwrap();
    let (srm, lrm) = sim_fixture(dir.path());
    let runs = dir.path().join("runs");
    fs::create_dir(&runs).unwrap();
    run_sim(&srm, &lrm, &runs.join("a.json"), &["--config-id", "srm", "--t-e", "inf", "--t-r1", "0", "--t-r2", "0"]);
    run_sim(&srm, &lrm, &runs.join("b.json"), &["--config-id", "ent", "--mode", "entropy_only"]);
    run_sim(&srm, &lrm, &runs.join("c.json"), &["--config-id", "full", "--t-r1", "3", "--t-r2", "1"]);
    let pattern = format!("{}/*.json", runs.display());
    let csv = dir.path().join("cmp.csv");
    let o = rankguide(&["report", "--runs", &pattern, "--baseline", "ent", "--csv", p(&csv)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&csv).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3);
    let lat: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    assert!(lat.windows(2).all(|w| w[0] <= w[1]));
    let ent = rows.iter().find(|r| r[0] == "ent").unwrap();
    assert_eq!(ent[5], "1.0");

    let o = rankguide(&["report", "--runs", &format!("{}/*.none", runs.display())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gen_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");
    fs::write(&spec, "n_steps = 12\nd_hid = 16\nvalidation_ratio = 0.25\n[[collapse]]\nstart = 2\nlen = 5\ndim = 2\n").unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    let c = dir.path().join("c.jsonl");
    for (out, seed) in [(&a, "7"), (&b, "7"), (&c, "8")] {
        let o = rankguide(&["gen", "--spec", p(&spec), "--seed", seed, "--out", p(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());

    fs::write(&spec, "n_steps = 5\n[[collapse]]\nstart = 3\nlen = 5\ndim = 2\n").unwrap();
    let o = rankguide(&["gen", "--spec", p(&spec), "--out", p(&a)]);
    assert_eq!(o.status.code(), Some(2));
}
