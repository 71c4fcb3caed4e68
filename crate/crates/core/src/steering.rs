//! Rank-filtered steering vectors.
//!
//! Offline, calibration steps are labelled execution or validation by
//! keyword matching, samples containing any low-rank window are dropped, and
//! the steering vector is the pooled mean hidden state of execution steps
//! minus that of validation steps. Online, the vector is added (scaled by
//! `alpha`) to the hidden state at every step boundary.

use std::fs;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals::{RankSignal, SignalConfig, SignalExtractor, StepHidden};
use crate::trace::{StepRecord, Trace};

pub const DEFAULT_KEYWORDS: &[&str] = &[
    "alternatively",
    "wait",
    "verify",
    "let me check",
    "double-check",
    "but wait",
    "hold on",
    "re-examine",
];

pub const DEFAULT_ALPHA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StepClass {
    Execution,
    Validation,
}

/// Case-insensitive whole-word keyword matcher.
#[derive(Debug, Clone)]
pub struct KeywordClassifier {
    keywords: Vec<String>,
    pattern: Regex,
}

impl KeywordClassifier {
    pub fn new<S: AsRef<str>>(keywords: &[S]) -> Result<Self> {
        let keywords: Vec<String> = keywords
            .iter()
            .map(|k| k.as_ref().trim().to_string())
            .filter(|k| !k.is_empty())
            .collect();
        if keywords.is_empty() {
            return Err(Error::Config("validation keyword list is empty".into()));
        }
        let alternation = keywords
            .iter()
            .map(|k| regex::escape(k))
            .collect::<Vec<_>>()
            .join("|");
        // \b only anchors where the keyword starts/ends with a word character,
        // so emulate it with explicit look-around on word characters.
        let pattern = Regex::new(&format!(r"(?i)(?:^|[^\w])(?:{alternation})(?:$|[^\w])"))
            .map_err(|e| Error::Config(format!("bad keyword pattern: {e}")))?;
        Ok(Self { keywords, pattern })
    }

    pub fn default_keywords() -> Self {
        Self::new(DEFAULT_KEYWORDS).expect("default keywords form a valid pattern")
    }

    pub fn keywords(&self) -> &[String] {
        &self.keywords
    }

    pub fn classify(&self, text: &str) -> StepClass {
        if self.pattern.is_match(text) {
            StepClass::Validation
        } else {
            StepClass::Execution
        }
    }
}

pub fn classify_step<S: AsRef<str>>(text: &str, validation_keywords: &[S]) -> Result<StepClass> {
    Ok(KeywordClassifier::new(validation_keywords)?.classify(text))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationStep {
    pub record: StepRecord,
    pub class: StepClass,
    /// Present once the window ending at this step is full.
    pub rank: Option<RankSignal>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSample {
    pub sample_id: String,
    /// Window length the rank signals were computed with.
    pub window: usize,
    pub steps: Vec<CalibrationStep>,
}

impl CalibrationSample {
    pub fn new(sample_id: impl Into<String>, window: usize, steps: Vec<CalibrationStep>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::EmptyInput("calibration sample steps"));
        }
        Ok(Self {
            sample_id: sample_id.into(),
            window,
            steps,
        })
    }

    /// Labels every step with `classifier` and computes its window rank signal.
    pub fn from_trace(
        sample_id: impl Into<String>,
        trace: &Trace,
        classifier: &KeywordClassifier,
        cfg: &SignalConfig,
    ) -> Result<Self> {
        let mut extractor = SignalExtractor::new(*cfg, trace.header.d_hid)?;
        let mut steps = Vec::with_capacity(trace.steps.len());
        for rec in &trace.steps {
            let sig = extractor.push(
                StepHidden::new(rec.step_index, rec.hidden.clone()),
                &rec.topk_logits,
                true,
            )?;
            steps.push(CalibrationStep {
                class: classifier.classify(&rec.text),
                record: rec.clone(),
                rank: sig.rank,
            });
        }
        Self::new(sample_id, cfg.window, steps)
    }

    /// Whether step `pos` (0-based within the sample) has a full window.
    pub fn is_eligible(&self, pos: usize) -> bool {
        pos + 1 >= self.window
    }
}

/// Why a sample was dropped by the rank filter.
#[derive(Debug, Clone, PartialEq)]
pub struct Exclusion {
    pub sample: usize,
    pub witness_step: u64,
    pub signal: RankSignal,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FilterOutcome {
    /// Indices of retained samples, in input order.
    pub kept: Vec<usize>,
    pub excluded: Vec<Exclusion>,
}

/// Splits samples into high-rank (kept) and those with a low-rank witness step.
pub fn partition_calibration(samples: &[CalibrationSample], t_r1: usize, t_r2: usize) -> Result<FilterOutcome> {
    let mut out = FilterOutcome::default();
    for (i, sample) in samples.iter().enumerate() {
        let mut witness = None;
        for (pos, step) in sample.steps.iter().enumerate() {
            match &step.rank {
                Some(sig) => {
                    if witness.is_none() && sig.is_low_rank(t_r1, t_r2) {
                        witness = Some(Exclusion {
                            sample: i,
                            witness_step: step.record.step_index,
                            signal: *sig,
                        });
                    }
                }
                None if sample.is_eligible(pos) => {
                    return Err(Error::MissingRankSignals {
                        sample: sample.sample_id.clone(),
                        step: step.record.step_index,
                    });
                }
                None => {}
            }
        }
        match witness {
            Some(w) => out.excluded.push(w),
            None => out.kept.push(i),
        }
    }
    Ok(out)
}

pub fn filter_calibration(
    samples: &[CalibrationSample],
    t_r1: usize,
    t_r2: usize,
) -> Result<Vec<&CalibrationSample>> {
    let outcome = partition_calibration(samples, t_r1, t_r2)?;
    Ok(outcome.kept.into_iter().map(|i| &samples[i]).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Thresholds {
    #[serde(rename = "T_r1")]
    pub t_r1: usize,
    #[serde(rename = "T_r2")]
    pub t_r2: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub n_exe: usize,
    pub n_val: usize,
    pub samples_kept: usize,
    pub samples_total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringVector {
    pub d_hid: usize,
    pub vector: Vec<f64>,
    pub alpha_default: f64,
    pub keywords: Vec<String>,
    pub thresholds: Thresholds,
    pub provenance: Provenance,
}

impl SteeringVector {
    pub fn zeros(d_hid: usize) -> Self {
        Self {
            d_hid,
            vector: vec![0.0; d_hid],
            alpha_default: DEFAULT_ALPHA,
            keywords: Vec::new(),
            thresholds: Thresholds::default(),
            provenance: Provenance {
                n_exe: 0,
                n_val: 0,
                samples_kept: 0,
                samples_total: 0,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vector.len() != self.d_hid {
            return Err(Error::DimMismatch(format!(
                "steering vector has {} entries, d_hid is {}",
                self.vector.len(),
                self.d_hid
            )));
        }
        if self.vector.iter().any(|x| !x.is_finite()) || !self.alpha_default.is_finite() {
            return Err(Error::Config("steering vector contains non-finite values".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Serialize(e.to_string()))?;
        fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let sv: SteeringVector = serde_json::from_str(&text).map_err(|e| Error::TraceFormat {
            line: e.line(),
            message: format!("{}: {e}", path.display()),
        })?;
        sv.validate()?;
        Ok(sv)
    }
}

/// Pooled execution-minus-validation mean over every step of `filtered`.
///
/// Sums are accumulated in sample order, then step order.
pub fn extract_steering_vector(filtered: &[&CalibrationSample]) -> Result<SteeringVector> {
    let d_hid = filtered
        .iter()
        .flat_map(|s| s.steps.first())
        .map(|st| st.record.hidden.len())
        .next()
        .ok_or(Error::EmptyInput("calibration samples after rank filtering"))?;
    let mut exe = vec![0.0; d_hid];
    let mut val = vec![0.0; d_hid];
    let (mut n_exe, mut n_val) = (0usize, 0usize);
    for sample in filtered {
        for step in &sample.steps {
            let h = &step.record.hidden;
            if h.len() != d_hid {
                return Err(Error::DimMismatch(format!(
                    "sample {} step {} has hidden size {}, expected {d_hid}",
                    sample.sample_id,
                    step.record.step_index,
                    h.len()
                )));
            }
            let (acc, n) = match step.class {
                StepClass::Execution => (&mut exe, &mut n_exe),
                StepClass::Validation => (&mut val, &mut n_val),
            };
            acc.iter_mut().zip(h).for_each(|(a, x)| *a += x);
            *n += 1;
        }
    }
    if n_exe == 0 {
        return Err(Error::EmptyClass(StepClass::Execution));
    }
    if n_val == 0 {
        return Err(Error::EmptyClass(StepClass::Validation));
    }
    let vector = exe
        .iter()
        .zip(&val)
        .map(|(e, v)| e / n_exe as f64 - v / n_val as f64)
        .collect();
    Ok(SteeringVector {
        d_hid,
        vector,
        alpha_default: DEFAULT_ALPHA,
        keywords: Vec::new(),
        thresholds: Thresholds::default(),
        provenance: Provenance {
            n_exe,
            n_val,
            samples_kept: filtered.len(),
            samples_total: filtered.len(),
        },
    })
}

/// Filter then extract, recording thresholds, keywords and sample counts.
pub fn build_steering_vector(
    samples: &[CalibrationSample],
    t_r1: usize,
    t_r2: usize,
    classifier: &KeywordClassifier,
) -> Result<SteeringVector> {
    let kept = filter_calibration(samples, t_r1, t_r2)?;
    let mut sv = extract_steering_vector(&kept)?;
    sv.thresholds = Thresholds { t_r1, t_r2 };
    sv.keywords = classifier.keywords().to_vec();
    sv.provenance.samples_total = samples.len();
    Ok(sv)
}

/// `h + alpha * v` at step boundaries, `h` elsewhere.
pub fn apply_steering(h: &[f64], sv: &SteeringVector, alpha: f64, is_boundary: bool) -> Result<Vec<f64>> {
    let mut out = h.to_vec();
    apply_steering_in_place(&mut out, sv, alpha, is_boundary)?;
    Ok(out)
}

pub fn apply_steering_in_place(h: &mut [f64], sv: &SteeringVector, alpha: f64, is_boundary: bool) -> Result<()> {
    if h.len() != sv.vector.len() {
        return Err(Error::DimMismatch(format!(
            "hidden state of length {} vs steering vector of length {}",
            h.len(),
            sv.vector.len()
        )));
    }
    if is_boundary {
        h.iter_mut().zip(&sv.vector).for_each(|(x, v)| *x += alpha * v);
    }
    Ok(())
}
