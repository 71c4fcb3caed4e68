//! Trace-replay simulator for SRM/LRM collaboration.
//!
//! Replay cannot regenerate text, so a `RouteLRM` decision splices in the
//! next unconsumed step of the paired LRM trace. The SRM cursor advances in
//! lockstep with the global step index: an SRM step whose slot was taken by
//! an LRM step is skipped, not deferred. Replay ends when the SRM trace runs
//! out or the router terminates.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::routing::{Action, DecisionRecord, Router, RoutingConfig};
use crate::signals::{SignalConfig, SignalExtractor, StepHidden};
use crate::steering::{apply_steering, KeywordClassifier, StepClass, SteeringVector};
use crate::trace::Trace;

/// Environment variable bounding the worker pool used by batch replay.
pub const THREADS_ENV: &str = "RANKGUIDE_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostModel {
    pub srm_step_cost: f64,
    pub lrm_step_cost: f64,
    /// Charged once per rank computation.
    pub signal_cost: f64,
    /// Charged once per switch between SRM and LRM.
    pub route_overhead: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            srm_step_cost: 1.0,
            lrm_step_cost: 5.0,
            signal_cost: 0.05,
            route_overhead: 0.5,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("srm_step_cost", self.srm_step_cost),
            ("lrm_step_cost", self.lrm_step_cost),
            ("signal_cost", self.signal_cost),
            ("route_overhead", self.route_overhead),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("cost {name} = {v} must be finite and non-negative")));
            }
        }
        Ok(())
    }

    /// Total latency for the given event counts.
    pub fn latency(&self, steps_srm: usize, steps_lrm: usize, rank_computations: usize, switches: usize) -> f64 {
        steps_srm as f64 * self.srm_step_cost
            + steps_lrm as f64 * self.lrm_step_cost
            + rank_computations as f64 * self.signal_cost
            + switches as f64 * self.route_overhead
    }
}

/// Which label stands in for pass@1 on a replayed sample.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccuracyPolicy {
    /// LRM label once any step was routed, SRM label otherwise.
    #[default]
    LrmIfRouted,
    SrmOnly,
}

impl std::str::FromStr for AccuracyPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lrm_if_routed" => Ok(Self::LrmIfRouted),
            "srm_only" => Ok(Self::SrmOnly),
            other => Err(Error::Config(format!(
                "unknown accuracy policy `{other}` (expected lrm_if_routed or srm_only)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepSource {
    Srm,
    Lrm,
}

/// Steering vector plus the strength it is injected with.
#[derive(Debug, Clone, PartialEq)]
pub struct Steering {
    pub vector: SteeringVector,
    pub alpha: f64,
}

impl Steering {
    pub fn new(vector: SteeringVector, alpha: f64) -> Result<Self> {
        vector.validate()?;
        if !alpha.is_finite() {
            return Err(Error::Config(format!("steering alpha {alpha} must be finite")));
        }
        Ok(Self { vector, alpha })
    }

    /// Uses the vector's recorded default strength.
    pub fn with_default_alpha(vector: SteeringVector) -> Result<Self> {
        let alpha = vector.alpha_default;
        Self::new(vector, alpha)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsumedStep {
    pub step: u64,
    pub source: StepSource,
    /// Index of the step inside its source trace.
    pub source_index: usize,
    pub class: StepClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub sample_id: String,
    pub decisions: Vec<DecisionRecord>,
    pub consumed: Vec<ConsumedStep>,
    pub steps_total: usize,
    pub steps_srm: usize,
    pub steps_lrm: usize,
    pub validation_steps: usize,
    pub rank_computations: usize,
    pub switches: usize,
    pub terminated_early: bool,
    pub latency: f64,
    pub correct: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub config_id: String,
    pub samples: Vec<SampleReport>,
    /// Mean label over samples that carry one; `None` when none do.
    pub accuracy_proxy: Option<f64>,
    pub mean_latency: f64,
    pub mean_steps: f64,
    /// Pooled over every consumed step of every sample.
    pub validation_ratio: f64,
}

impl SimulationReport {
    pub fn from_samples(config_id: impl Into<String>, samples: Vec<SampleReport>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("simulation samples"));
        }
        let n = samples.len() as f64;
        let labels: Vec<bool> = samples.iter().filter_map(|s| s.correct).collect();
        let accuracy_proxy = if labels.is_empty() {
            None
        } else {
            Some(labels.iter().filter(|&&c| c).count() as f64 / labels.len() as f64)
        };
        let mut latency = 0.0;
        let mut steps = 0usize;
        let mut val = 0usize;
        for s in &samples {
            latency += s.latency;
            steps += s.steps_total;
            val += s.validation_steps;
        }
        if steps == 0 {
            return Err(Error::EmptyInput("consumed steps"));
        }
        Ok(Self {
            config_id: config_id.into(),
            accuracy_proxy,
            mean_latency: latency / n,
            mean_steps: steps as f64 / n,
            validation_ratio: val as f64 / steps as f64,
            samples,
        })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Serialize(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Decision log of every sample, one JSON object per line.
    pub fn decision_log(&self) -> Result<String> {
        let mut out = String::new();
        for s in &self.samples {
            for d in &s.decisions {
                out.push_str(&serde_json::to_string(d).map_err(|e| Error::Serialize(e.to_string()))?);
                out.push('\n');
            }
        }
        Ok(out)
    }
}

/// Fraction of steps classified as validation.
pub fn validation_ratio<S: AsRef<str>>(steps: &[S], classifier: &KeywordClassifier) -> Result<f64> {
    if steps.is_empty() {
        return Err(Error::EmptyInput("step list"));
    }
    let val = steps
        .iter()
        .filter(|s| classifier.classify(s.as_ref()) == StepClass::Validation)
        .count();
    Ok(val as f64 / steps.len() as f64)
}

/// Everything a replay needs besides the traces.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub routing: RoutingConfig,
    pub signal: SignalConfig,
    pub cost: CostModel,
    pub steering: Option<Steering>,
    pub policy: AccuracyPolicy,
    pub classifier: KeywordClassifier,
}

impl Simulator {
    pub fn new(routing: RoutingConfig, signal: SignalConfig, cost: CostModel) -> Result<Self> {
        routing.validate()?;
        signal.validate()?;
        cost.validate()?;
        if routing.window != signal.window {
            return Err(Error::Config(format!(
                "routing window {} differs from signal window {}",
                routing.window, signal.window
            )));
        }
        Ok(Self {
            routing,
            signal,
            cost,
            steering: None,
            policy: AccuracyPolicy::default(),
            classifier: KeywordClassifier::default_keywords(),
        })
    }

    pub fn with_steering(mut self, steering: Option<Steering>) -> Self {
        self.steering = steering;
        self
    }

    pub fn with_policy(mut self, policy: AccuracyPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_classifier(mut self, classifier: KeywordClassifier) -> Self {
        self.classifier = classifier;
        self
    }

    pub fn run_sample(&self, sample_id: &str, srm: &Trace, lrm: &Trace) -> Result<SampleReport> {
        let d_hid = srm.header.d_hid;
        if lrm.header.d_hid != d_hid {
            return Err(Error::Config(format!(
                "sample {sample_id}: SRM d_hid {d_hid} differs from LRM d_hid {}",
                lrm.header.d_hid
            )));
        }
        if lrm.header.delimiter != srm.header.delimiter {
            return Err(Error::Config(format!("sample {sample_id}: SRM and LRM delimiters differ")));
        }
        if srm.steps.is_empty() {
            return Err(Error::EmptyInput("SRM trace"));
        }
        if let Some(s) = &self.steering {
            if s.vector.d_hid != d_hid {
                return Err(Error::DimMismatch(format!(
                    "steering vector has d_hid {} but traces have {d_hid}",
                    s.vector.d_hid
                )));
            }
        }

        let with_rank = self.routing.mode.uses_rank();
        let mut extractor = SignalExtractor::new(self.signal, d_hid)?;
        let mut router = Router::new(self.routing)?;
        let mut decisions = Vec::with_capacity(srm.steps.len());
        let mut consumed = Vec::with_capacity(srm.steps.len());
        let mut lrm_cursor = 0usize;
        let mut next = StepSource::Srm;
        let mut terminated_early = false;
        let (mut steps_srm, mut steps_lrm, mut validation_steps, mut ranks, mut switches) = (0, 0, 0, 0, 0);

        for t in 0..srm.steps.len() {
            let (record, source_index) = match next {
                StepSource::Srm => (&srm.steps[t], t),
                StepSource::Lrm => {
                    let rec = lrm.steps.get(lrm_cursor).ok_or(Error::TraceExhausted {
                        requested: lrm_cursor + 1,
                        available: lrm.steps.len(),
                    })?;
                    lrm_cursor += 1;
                    (rec, lrm_cursor - 1)
                }
            };
            if let Some(prev) = consumed.last().map(|c: &ConsumedStep| c.source) {
                if prev != next {
                    switches += 1;
                }
            }
            let hidden = match (&self.steering, next) {
                (Some(s), StepSource::Srm) => apply_steering(&record.hidden, &s.vector, s.alpha, record.is_boundary)?,
                _ => record.hidden.clone(),
            };
            let class = self.classifier.classify(&record.text);
            if class == StepClass::Validation {
                validation_steps += 1;
            }
            match next {
                StepSource::Srm => steps_srm += 1,
                StepSource::Lrm => steps_lrm += 1,
            }
            consumed.push(ConsumedStep {
                step: t as u64,
                source: next,
                source_index,
                class,
            });

            let signal = extractor.push(StepHidden::new(t as u64, hidden), &record.topk_logits, with_rank)?;
            if signal.rank.is_some() {
                ranks += 1;
            }
            let decision = router.step(signal.rank.as_ref(), signal.entropy)?;
            decisions.push(DecisionRecord::new(
                &decision,
                signal.rank.as_ref(),
                signal.entropy,
                router.state().consecutive_low_rank,
            ));
            match decision.action {
                Action::Terminate => {
                    terminated_early = true;
                    break;
                }
                Action::RouteLrm => next = StepSource::Lrm,
                Action::ContinueSrm => next = StepSource::Srm,
            }
        }

        let correct = match self.policy {
            AccuracyPolicy::LrmIfRouted if steps_lrm > 0 => lrm.final_answer_correct,
            _ => srm.final_answer_correct,
        };
        Ok(SampleReport {
            sample_id: sample_id.to_string(),
            steps_total: consumed.len(),
            latency: self.cost.latency(steps_srm, steps_lrm, ranks, switches),
            decisions,
            consumed,
            steps_srm,
            steps_lrm,
            validation_steps,
            rank_computations: ranks,
            switches,
            terminated_early,
            correct,
        })
    }

    /// Replays every pair, in parallel when allowed, and aggregates in input order.
    pub fn run(&self, config_id: &str, pairs: &[TracePair]) -> Result<SimulationReport> {
        let work = || -> Result<Vec<SampleReport>> {
            pairs
                .par_iter()
                .map(|p| self.run_sample(&p.sample_id, &p.srm, &p.lrm))
                .collect()
        };
        let samples = match thread_limit()? {
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?
                .install(work)?,
            None => work()?,
        };
        SimulationReport::from_samples(config_id, samples)
    }
}

fn thread_limit() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Config(format!("{THREADS_ENV}={v:?} is not a positive integer"))),
        },
        Err(_) => Ok(None),
    }
}

#[derive(Debug, Clone)]
pub struct TracePair {
    pub sample_id: String,
    pub srm: Trace,
    pub lrm: Trace,
}

/// Single-pair replay.
pub fn simulate(
    srm: &Trace,
    lrm: &Trace,
    routing: &RoutingConfig,
    signal: &SignalConfig,
    steering: Option<&Steering>,
    cost: &CostModel,
) -> Result<SimulationReport> {
    let sim = Simulator::new(*routing, *signal, *cost)?.with_steering(steering.cloned());
    let sample = sim.run_sample(&srm.header.model_tag, srm, lrm)?;
    SimulationReport::from_samples("run", vec![sample])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub config_id: String,
    pub accuracy_proxy: Option<f64>,
    pub latency: f64,
    pub steps: f64,
    pub validation_ratio: f64,
    pub speedup: f64,
}

/// One row per report, sorted by latency then config id. `baseline` names the
/// reference run; the first report is used when it is `None`.
pub fn compare_runs(reports: &[SimulationReport], baseline: Option<&str>) -> Result<Vec<ComparisonRow>> {
    let first = reports.first().ok_or(Error::EmptyInput("reports"))?;
    let base = match baseline {
        Some(id) => reports
            .iter()
            .find(|r| r.config_id == id)
            .ok_or_else(|| Error::Config(format!("baseline run {id:?} not among the reports")))?,
        None => first,
    };
    let mut rows: Vec<ComparisonRow> = reports
        .iter()
        .map(|r| ComparisonRow {
            config_id: r.config_id.clone(),
            accuracy_proxy: r.accuracy_proxy,
            latency: r.mean_latency,
            steps: r.mean_steps,
            validation_ratio: r.validation_ratio,
            speedup: speedup(base.mean_latency, r.mean_latency),
        })
        .collect();
    rows.sort_by(|a, b| match a.latency.total_cmp(&b.latency) {
        Ordering::Equal => a.config_id.cmp(&b.config_id),
        o => o,
    });
    Ok(rows)
}

fn speedup(baseline: f64, run: f64) -> f64 {
    if baseline == run {
        1.0
    } else {
        baseline / run
    }
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| Error::Serialize(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Serialize(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Serialize(e.to_string()))
}
