//! Synthetic traces with planted failure modes.
//!
//! Healthy steps carry i.i.d. Gaussian hidden states, so any full window of
//! them is full-rank along the step mode. A collapse segment draws its hidden
//! states from a fixed low-dimensional subspace (plus optional isotropic
//! noise), so windows inside it have step-mode rank at most the subspace
//! dimension. Entropy targets are hit exactly by solving for the leading
//! logit of a `[a, 0, …, 0]` logit vector.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals::entropy;
use crate::steering::StepClass;
use crate::trace::{StepRecord, Trace, TraceHeader, TraceRole};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollapseSegment {
    pub start: usize,
    pub len: usize,
    /// Dimension of the subspace the hidden states are confined to.
    pub dim: usize,
    /// Standard deviation of per-entry noise added on top of the subspace.
    #[serde(default)]
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSpec {
    pub n_steps: usize,
    pub d_hid: usize,
    pub entropy_k: usize,
    pub model_tag: String,
    pub role: TraceRole,
    pub layer_index: i64,
    pub delimiter: String,
    pub hidden_scale: f64,
    pub collapse: Vec<CollapseSegment>,
    pub high_entropy: Vec<Segment>,
    pub healthy_entropy: [f64; 2],
    pub collapsed_entropy: [f64; 2],
    pub high_entropy_range: [f64; 2],
    /// Give collapsed steps `collapsed_entropy` instead of `healthy_entropy`.
    pub overconfident: bool,
    /// Fraction of all steps that carry validation keywords.
    pub validation_ratio: Option<f64>,
    /// Validation steps are placed at or after this step.
    pub validation_suffix_start: usize,
    pub final_answer_correct: Option<bool>,
    /// Every `boundary_every`-th step ends at a delimiter (1 = all steps).
    pub boundary_every: usize,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            n_steps: 30,
            d_hid: 256,
            entropy_k: 20,
            model_tag: "synthetic".into(),
            role: TraceRole::Srm,
            layer_index: 0,
            delimiter: "\n\n".into(),
            hidden_scale: 1.0,
            collapse: Vec::new(),
            high_entropy: Vec::new(),
            healthy_entropy: [0.5, 0.8],
            collapsed_entropy: [0.2, 0.4],
            high_entropy_range: [1.0, 1.5],
            overconfident: true,
            validation_ratio: None,
            validation_suffix_start: 0,
            final_answer_correct: None,
            boundary_every: 1,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Spec(m));
        if self.n_steps == 0 || self.d_hid == 0 || self.entropy_k == 0 {
            return err("n_steps, d_hid and entropy_k must be positive".into());
        }
        if !(self.hidden_scale.is_finite() && self.hidden_scale > 0.0) {
            return err(format!("hidden_scale {} must be positive", self.hidden_scale));
        }
        if self.boundary_every == 0 {
            return err("boundary_every must be at least 1".into());
        }
        let mut covered = vec![false; self.n_steps];
        for c in &self.collapse {
            if c.len == 0 || c.start + c.len > self.n_steps {
                return err(format!(
                    "collapse segment {}..{} does not fit in {} steps",
                    c.start,
                    c.start + c.len,
                    self.n_steps
                ));
            }
            if c.dim == 0 || c.dim > self.d_hid {
                return err(format!("collapse dim {} outside 1..={}", c.dim, self.d_hid));
            }
            if !(c.noise.is_finite() && c.noise >= 0.0) {
                return err(format!("collapse noise {} must be non-negative", c.noise));
            }
            for flag in &mut covered[c.start..c.start + c.len] {
                if *flag {
                    return err(format!("collapse segment starting at {} overlaps another", c.start));
                }
                *flag = true;
            }
        }
        for h in &self.high_entropy {
            if h.len == 0 || h.start + h.len > self.n_steps {
                return err(format!("high-entropy segment at {} does not fit", h.start));
            }
        }
        let max_h = (self.entropy_k as f64).ln();
        for (name, [lo, hi]) in [
            ("healthy_entropy", self.healthy_entropy),
            ("collapsed_entropy", self.collapsed_entropy),
            ("high_entropy_range", self.high_entropy_range),
        ] {
            if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
                return err(format!("{name} [{lo}, {hi}] is not a valid range"));
            }
            if lo > max_h {
                return err(format!("{name} lower bound {lo} exceeds ln(k) = {max_h:.4}"));
            }
        }
        if let Some(r) = self.validation_ratio {
            if !(0.0..=1.0).contains(&r) {
                return err(format!("validation_ratio {r} outside [0, 1]"));
            }
            let count = self.validation_count();
            if self.validation_suffix_start > self.n_steps || count > self.n_steps - self.validation_suffix_start {
                return err(format!(
                    "{count} validation steps do not fit after step {}",
                    self.validation_suffix_start
                ));
            }
        }
        Ok(())
    }

    /// Number of validation steps the ratio asks for.
    pub fn validation_count(&self) -> usize {
        self.validation_ratio
            .map_or(0, |r| (r * self.n_steps as f64).round() as usize)
    }
}

const EXECUTION_TEMPLATES: &[&str] = &[
    "Compute the sum of the first {} terms.",
    "Substitute x = {} into the equation.",
    "Multiply both sides by {} and simplify.",
    "Expand the product to obtain {} as the constant term.",
    "Divide the remaining total by {}.",
    "So the area of the region equals {}.",
];

const VALIDATION_TEMPLATES: &[&str] = &[
    "Wait, let me double-check step {}.",
    "Let me verify that the value {} is consistent.",
    "Alternatively, consider the case n = {}.",
    "Hold on, re-examine the bound {}.",
    "But wait, is {} really correct?",
];

/// Leading logit `a` such that `[a, 0, …, 0]` (length `k`) has entropy `target`.
pub fn logits_for_entropy(target: f64, k: usize) -> Vec<f64> {
    let mut z = vec![0.0; k];
    if k <= 1 {
        return z;
    }
    let max_h = (k as f64).ln();
    if target >= max_h {
        return z;
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    z[0] = hi;
    while entropy(&z) > target {
        hi *= 2.0;
        z[0] = hi;
        if hi > 1e4 {
            break;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        z[0] = mid;
        if entropy(&z) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    z[0] = 0.5 * (lo + hi);
    z
}

fn sample_in(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

pub fn gen_synthetic_trace(spec: &GeneratorSpec, seed: u64) -> Result<Trace> {
    spec.validate()?;
    let stream = |s: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        r.set_stream(s);
        r
    };
    let mut hidden_rng = stream(1);
    let mut entropy_rng = stream(2);
    let mut text_rng = stream(3);
    let mut choice_rng = stream(4);

    let n = spec.n_steps;
    let d = spec.d_hid;

    // step -> (segment index)
    let mut segment_of = vec![None; n];
    let mut bases = Vec::with_capacity(spec.collapse.len());
    for (si, c) in spec.collapse.iter().enumerate() {
        for slot in &mut segment_of[c.start..c.start + c.len] {
            *slot = Some(si);
        }
        let basis: Vec<Vec<f64>> = (0..c.dim)
            .map(|_| (0..d).map(|_| hidden_rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        bases.push(basis);
    }
    let mut high = vec![false; n];
    for h in &spec.high_entropy {
        high[h.start..h.start + h.len].iter_mut().for_each(|f| *f = true);
    }
    let mut validation = vec![false; n];
    let count = spec.validation_count();
    if count > 0 {
        let pool = n - spec.validation_suffix_start;
        for i in index::sample(&mut choice_rng, pool, count).into_iter() {
            validation[spec.validation_suffix_start + i] = true;
        }
    }

    let mut steps = Vec::with_capacity(n);
    for t in 0..n {
        let hidden: Vec<f64> = match segment_of[t] {
            Some(si) => {
                let seg = &spec.collapse[si];
                let coeffs: Vec<f64> = (0..seg.dim)
                    .map(|_| hidden_rng.sample::<f64, _>(StandardNormal) / (seg.dim as f64).sqrt())
                    .collect();
                (0..d)
                    .map(|j| {
                        let mut x: f64 = coeffs.iter().zip(&bases[si]).map(|(c, b)| c * b[j]).sum();
                        if seg.noise > 0.0 {
                            x += seg.noise * hidden_rng.sample::<f64, _>(StandardNormal);
                        }
                        x * spec.hidden_scale
                    })
                    .collect()
            }
            None => (0..d)
                .map(|_| spec.hidden_scale * hidden_rng.sample::<f64, _>(StandardNormal))
                .collect(),
        };

        let range = if high[t] {
            spec.high_entropy_range
        } else if segment_of[t].is_some() && spec.overconfident {
            spec.collapsed_entropy
        } else {
            spec.healthy_entropy
        };
        let target = sample_in(&mut entropy_rng, range);
        let topk_logits = logits_for_entropy(target, spec.entropy_k);

        let (templates, class) = if validation[t] {
            (VALIDATION_TEMPLATES, StepClass::Validation)
        } else {
            (EXECUTION_TEMPLATES, StepClass::Execution)
        };
        let template = templates[text_rng.gen_range(0..templates.len())];
        let text = template.replace("{}", &text_rng.gen_range(2..100).to_string());

        steps.push(StepRecord {
            step_index: t as u64,
            hidden,
            topk_logits,
            text,
            is_boundary: (t + 1) % spec.boundary_every == 0,
            gold_class: Some(class),
            correct: None,
        });
    }

    let mut header = TraceHeader::new(spec.model_tag.clone(), d, spec.entropy_k, spec.role);
    header.layer_index = spec.layer_index;
    header.delimiter = spec.delimiter.clone();
    Ok(Trace {
        header,
        steps,
        final_answer_correct: spec.final_answer_correct,
    })
}
