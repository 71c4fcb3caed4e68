use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rankguide_core::generator::{gen_synthetic_trace, GeneratorSpec};
use rankguide_core::rgt::load_rgt;
use rankguide_core::routing::{RoutingConfig, RoutingMode};
use rankguide_core::signals::{SignalConfig, SignalExtractor, StepHidden};
use rankguide_core::simulator::{
    compare_runs, comparison_csv, AccuracyPolicy, CostModel, SimulationReport, Simulator, Steering, TracePair,
};
use rankguide_core::steering::{build_steering_vector, CalibrationSample, KeywordClassifier, SteeringVector};
use rankguide_core::trace::{load_trace, save_trace, save_trace_with_sidecar};
use rankguide_core::{relative_error, tt_decompose, tt_reconstruct};
use serde::Serialize;

use crate::config::{required, FileConfig, SignalFile};
use crate::error::CliError;
use crate::{Command, DecomposeArgs, GenArgs, ReportArgs, SignalArgs, SimulateArgs, SteerArgs, WindowArgs};

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cmd: Command, file: &FileConfig) -> Result<()> {
    match cmd {
        Command::Decompose(a) => decompose(a, file),
        Command::Signal(a) => signal(a, file),
        Command::SteerExtract(a) => steer_extract(a, file),
        Command::Simulate(a) => simulate(a, file),
        Command::Report(a) => report(a, file),
        Command::Gen(a) => generate(a, file),
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string(v).map_err(|e| CliError::Usage(format!("cannot serialize output: {e}")))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_file(p, text),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .map_err(|e| CliError::io("<stdout>", e))
        }
    }
}

fn signal_config(flags: &WindowArgs, file: &SignalFile, entropy_k: usize) -> SignalConfig {
    let d = SignalConfig::default();
    SignalConfig {
        window: flags.w.or(file.w).unwrap_or(d.window),
        d1: flags.d1.or(file.d1).unwrap_or(d.d1),
        d2: flags.d2.or(file.d2).unwrap_or(d.d2),
        epsilon: flags.epsilon.or(file.epsilon).unwrap_or(d.epsilon),
        entropy_k,
    }
}

fn load_keywords(path: Option<&Path>) -> Result<KeywordClassifier> {
    let Some(path) = path else {
        return Ok(KeywordClassifier::default_keywords());
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let words: Vec<&str> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect();
    Ok(KeywordClassifier::new(&words)?)
}

fn jsonl_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.extension().is_some_and(|x| x == "jsonl") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned())
}

#[derive(Serialize)]
struct DecomposeOut<'a> {
    ranks: &'a [usize],
    rel_error: f64,
    epsilon: f64,
}

fn decompose(a: DecomposeArgs, file: &FileConfig) -> Result<()> {
    let f = &file.decompose;
    let input = required(a.input, f.input.clone(), "input")?;
    let epsilon = required(a.epsilon, f.epsilon, "epsilon")?;
    let tensor = load_rgt(&input)?;
    let d = tt_decompose(&tensor, epsilon)?;
    let rel_error = relative_error(&tensor, &tt_reconstruct(&d)?)?;
    let line = to_json(&DecomposeOut {
        ranks: d.ranks(),
        rel_error,
        epsilon,
    })?;
    if let Some(p) = a.json_out.or(f.json_out.clone()) {
        write_file(&p, &format!("{line}\n"))?;
    }
    emit(None, &format!("{line}\n"))
}

#[derive(Serialize)]
struct SignalOut {
    step: u64,
    r1: Option<usize>,
    r2: Option<usize>,
    entropy: f64,
}

fn signal(a: SignalArgs, file: &FileConfig) -> Result<()> {
    let f = &file.signal;
    let path = required(a.trace, f.trace.clone(), "trace")?;
    let trace = load_trace(&path)?;
    let cfg = signal_config(&a.window, f, trace.header.entropy_k);
    let mut ex = SignalExtractor::new(cfg, trace.header.d_hid)?;
    let mut out = String::new();
    for s in &trace.steps {
        let sig = ex.push(StepHidden::new(s.step_index, s.hidden.clone()), &s.topk_logits, true)?;
        out.push_str(&to_json(&SignalOut {
            step: sig.step,
            r1: sig.rank.map(|r| r.r1),
            r2: sig.rank.map(|r| r.r2),
            entropy: sig.entropy,
        })?);
        out.push('\n');
    }
    emit(a.out.or(f.out.clone()).as_deref(), &out)
}

fn steer_extract(a: SteerArgs, file: &FileConfig) -> Result<()> {
    let f = &file.steer_extract;
    let dir = required(a.calib, f.calib.clone(), "calib")?;
    let out = required(a.out, f.out.clone(), "out")?;
    let defaults = RoutingConfig::default();
    let t_r1 = a.t_r1.or(f.t_r1).unwrap_or(defaults.t_r1);
    let t_r2 = a.t_r2.or(f.t_r2).unwrap_or(defaults.t_r2);
    let classifier = load_keywords(a.keywords.or(f.keywords.clone()).as_deref())?;
    let window_file = SignalFile {
        w: f.w,
        d1: f.d1,
        d2: f.d2,
        epsilon: f.epsilon,
        ..SignalFile::default()
    };

    let files = jsonl_files(&dir)?;
    if files.is_empty() {
        return Err(CliError::Usage(format!("no .jsonl traces in {}", dir.display())));
    }
    let mut samples = Vec::with_capacity(files.len());
    for path in &files {
        let trace = load_trace(path)?;
        let cfg = signal_config(&a.window, &window_file, trace.header.entropy_k);
        samples.push(CalibrationSample::from_trace(stem(path), &trace, &classifier, &cfg)?);
    }
    let sv = build_steering_vector(&samples, t_r1, t_r2, &classifier)?;
    sv.save(&out)?;
    emit(None, &format!("{}\n", to_json(&sv.provenance)?))
}

fn load_pairs(srm: &Path, lrm: &Path) -> Result<Vec<TracePair>> {
    if srm.is_dir() {
        if !lrm.is_dir() {
            return Err(CliError::Usage("--srm is a directory, so --lrm must be one too".into()));
        }
        let mut pairs = Vec::new();
        for s in jsonl_files(srm)? {
            let name = s.file_name().expect("listed file has a name");
            let l = lrm.join(name);
            if !l.exists() {
                return Err(CliError::Usage(format!(
                    "no LRM trace {} paired with {}",
                    l.display(),
                    s.display()
                )));
            }
            pairs.push(TracePair {
                sample_id: stem(&s),
                srm: load_trace(&s)?,
                lrm: load_trace(&l)?,
            });
        }
        if pairs.is_empty() {
            return Err(CliError::Usage(format!("no .jsonl traces in {}", srm.display())));
        }
        Ok(pairs)
    } else {
        Ok(vec![TracePair {
            sample_id: stem(srm),
            srm: load_trace(srm)?,
            lrm: load_trace(lrm)?,
        }])
    }
}

fn simulate(a: SimulateArgs, file: &FileConfig) -> Result<()> {
    let f = &file.simulate;
    let srm = required(a.srm, f.srm.clone(), "srm")?;
    let lrm = required(a.lrm, f.lrm.clone(), "lrm")?;
    let report_path = required(a.report, f.report.clone(), "report")?;
    let pairs = load_pairs(&srm, &lrm)?;

    let window_file = SignalFile {
        w: f.w,
        d1: f.d1,
        d2: f.d2,
        epsilon: f.epsilon,
        ..SignalFile::default()
    };
    let signal = signal_config(&a.window, &window_file, pairs[0].srm.header.entropy_k);

    let d = RoutingConfig::default();
    let mode: RoutingMode = match a.mode.or(f.mode.clone()) {
        Some(m) => m.parse()?,
        None => d.mode,
    };
    let reset_on_route = if a.reset_on_route {
        true
    } else if a.no_reset_on_route {
        false
    } else {
        f.reset_on_route.unwrap_or(d.reset_on_route)
    };
    let routing = RoutingConfig {
        t_r1: a.t_r1.or(f.t_r1).unwrap_or(d.t_r1),
        t_r2: a.t_r2.or(f.t_r2).unwrap_or(d.t_r2),
        t_e: a.t_e.or(f.t_e).unwrap_or(d.t_e),
        window: signal.window,
        collapse_window: a.collapse_window.or(f.collapse_window).unwrap_or(d.collapse_window),
        mode,
        reset_on_route,
    };
    let cost = match a.cost.or(f.cost.clone()) {
        Some(p) => {
            let text = fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?;
            toml::from_str::<CostModel>(&text).map_err(|e| CliError::Usage(format!("{}: {}", p.display(), e.message())))?
        }
        None => CostModel::default(),
    };
    let steer_path = if a.no_steer { None } else { a.steer.or(f.steer.clone()) };
    let steering = match steer_path {
        Some(p) => {
            let sv = SteeringVector::load(&p)?;
            Some(match a.alpha.or(f.alpha) {
                Some(alpha) => Steering::new(sv, alpha)?,
                None => Steering::with_default_alpha(sv)?,
            })
        }
        None => {
            if a.alpha.is_some() {
                return Err(CliError::Usage("--alpha needs a steering vector (--steer)".into()));
            }
            None
        }
    };
    let policy: AccuracyPolicy = match a.accuracy_policy.or(f.accuracy_policy.clone()) {
        Some(p) => p.parse()?,
        None => AccuracyPolicy::default(),
    };
    let classifier = load_keywords(a.keywords.or(f.keywords.clone()).as_deref())?;

    let sim = Simulator::new(routing, signal, cost)?
        .with_steering(steering)
        .with_policy(policy)
        .with_classifier(classifier);
    let config_id = a.config_id.or(f.config_id.clone()).unwrap_or_else(|| mode_id(mode));
    let report = sim.run(&config_id, &pairs)?;
    report.save(&report_path)?;
    if let Some(p) = a.decisions.or(f.decisions.clone()) {
        write_file(&p, &report.decision_log()?)?;
    }

    #[derive(Serialize)]
    struct Summary<'a> {
        config_id: &'a str,
        samples: usize,
        accuracy_proxy: Option<f64>,
        mean_latency: f64,
        mean_steps: f64,
        validation_ratio: f64,
    }
    let line = to_json(&Summary {
        config_id: &report.config_id,
        samples: report.samples.len(),
        accuracy_proxy: report.accuracy_proxy,
        mean_latency: report.mean_latency,
        mean_steps: report.mean_steps,
        validation_ratio: report.validation_ratio,
    })?;
    emit(None, &format!("{line}\n"))
}

fn mode_id(mode: RoutingMode) -> String {
    match mode {
        RoutingMode::Full => "full",
        RoutingMode::EntropyOnly => "entropy_only",
        RoutingMode::RankOnly => "rank_only",
    }
    .to_string()
}

fn report(a: ReportArgs, file: &FileConfig) -> Result<()> {
    let f = &file.report;
    let pattern = required(a.runs, f.runs.clone(), "runs")?;
    let paths = glob::glob(&pattern).map_err(|e| CliError::Usage(format!("bad --runs pattern: {e}")))?;
    let mut files = Vec::new();
    for p in paths {
        files.push(p.map_err(|e| { let path = e.path().to_path_buf(); CliError::io(path, e.into()) })?);
    }
    files.sort();
    if files.is_empty() {
        return Err(CliError::Usage(format!("--runs {pattern:?} matched no files")));
    }
    let reports = files
        .iter()
        .map(SimulationReport::load)
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let rows = compare_runs(&reports, a.baseline.or(f.baseline.clone()).as_deref())?;
    emit(a.csv.or(f.csv.clone()).as_deref(), &comparison_csv(&rows)?)
}

fn generate(a: GenArgs, file: &FileConfig) -> Result<()> {
    let f = &file.gen;
    let out = required(a.out, f.out.clone(), "out")?;
    let spec = match a.spec.or(f.spec.clone()) {
        Some(p) => {
            let text = fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?;
            toml::from_str::<GeneratorSpec>(&text)
                .map_err(|e| CliError::Usage(format!("{}: {}", p.display(), e.message())))?
        }
        None => GeneratorSpec::default(),
    };
    let seed = a.seed.or(f.seed).unwrap_or(0);
    let trace = gen_synthetic_trace(&spec, seed)?;
    if a.sidecar || f.sidecar.unwrap_or(false) {
        save_trace_with_sidecar(&trace, &out)?;
    } else {
        save_trace(&trace, &out)?;
    }
    Ok(())
}
