//! Per-step routing signals: the sliding-window tensor-rank signal and the
//! next-token entropy over the collected top-k logits.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::tt::{tt_decompose, validate_epsilon};

/// Hidden state captured at one step's delimiter position.
#[derive(Debug, Clone, PartialEq)]
pub struct StepHidden {
    pub step_index: u64,
    pub vector: Vec<f64>,
}

impl StepHidden {
    pub fn new(step_index: u64, vector: Vec<f64>) -> Self {
        Self { step_index, vector }
    }
}

/// FIFO of the most recent `capacity` step hidden states.
#[derive(Debug, Clone)]
pub struct WindowBuffer {
    capacity: usize,
    d_hid: usize,
    entries: VecDeque<StepHidden>,
}

impl WindowBuffer {
    pub fn new(capacity: usize, d_hid: usize) -> Result<Self> {
        if capacity == 0 || d_hid == 0 {
            return Err(Error::Config(format!(
                "window capacity ({capacity}) and d_hid ({d_hid}) must be positive"
            )));
        }
        Ok(Self {
            capacity,
            d_hid,
            entries: VecDeque::with_capacity(capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn d_hid(&self) -> usize {
        self.d_hid
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() == self.capacity
    }

    pub fn entries(&self) -> impl Iterator<Item = &StepHidden> {
        self.entries.iter()
    }

    pub fn last_step(&self) -> Option<u64> {
        self.entries.back().map(|e| e.step_index)
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// Appends `h`, evicting the oldest entry when the buffer is full.
    pub fn push(&mut self, h: StepHidden) -> Result<()> {
        if h.vector.len() != self.d_hid {
            return Err(Error::DimMismatch(format!(
                "hidden state of length {} pushed into window with d_hid {}",
                h.vector.len(),
                self.d_hid
            )));
        }
        if let Some(pos) = h.vector.iter().position(|x| !x.is_finite()) {
            return Err(Error::DimMismatch(format!(
                "hidden state for step {} has non-finite entry at {pos}",
                h.step_index
            )));
        }
        if let Some(prev) = self.last_step() {
            if h.step_index <= prev {
                return Err(Error::NonMonotonicStep {
                    prev,
                    got: h.step_index,
                });
            }
        }
        if self.is_full() {
            self.entries.pop_front();
        }
        self.entries.push_back(h);
        Ok(())
    }
}

/// Top-k logits in descending order.
#[derive(Debug, Clone, PartialEq)]
pub struct TopKLogits {
    values: Vec<f64>,
}

impl TopKLogits {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("top-k logits"));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("top-k logits must be finite".into()));
        }
        if values.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::Config("top-k logits must be sorted non-increasing".into()));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn k(&self) -> usize {
        self.values.len()
    }

    pub fn entropy(&self) -> f64 {
        entropy(&self.values)
    }
}

/// Shannon entropy in nats of the softmax over `logits`.
///
/// Order-independent; returns 0 for an empty or single-entry slice. The
/// result is clamped into `[0, ln k]` to absorb rounding.
pub fn entropy(logits: &[f64]) -> f64 {
    let k = logits.len();
    if k <= 1 {
        return 0.0;
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    let mut weighted = 0.0;
    for &z in logits {
        let shifted = z - max;
        let w = shifted.exp();
        sum += w;
        weighted += w * shifted;
    }
    // H = ln S − Σ w_i (z_i − max) / S
    let h = sum.ln() - weighted / sum;
    h.clamp(0.0, (k as f64).ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalConfig {
    /// Window length `W`.
    pub window: usize,
    /// Leading hidden-factor sizes `(d1, d2)`; `d3 = d_hid / (d1 * d2)`.
    pub d1: usize,
    pub d2: usize,
    pub epsilon: f64,
    pub entropy_k: usize,
}

impl Default for SignalConfig {
    fn default() -> Self {
        Self {
            window: 10,
            d1: 16,
            d2: 16,
            epsilon: 0.1,
            entropy_k: 20,
        }
    }
}

impl SignalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 2 {
            return Err(Error::Config(format!("window {} must be at least 2", self.window)));
        }
        if self.d1 == 0 || self.d2 == 0 {
            return Err(Error::Config("factor dims must be positive".into()));
        }
        if self.entropy_k == 0 {
            return Err(Error::Config("entropy_k must be at least 1".into()));
        }
        validate_epsilon(self.epsilon)
    }

    /// `[d1, d2, d3]` for a hidden size, failing if `d1 * d2` does not divide it.
    pub fn factor_dims(&self, d_hid: usize) -> Result<[usize; 3]> {
        self.validate()?;
        let lead = self.d1 * self.d2;
        if d_hid == 0 || !d_hid.is_multiple_of(lead) {
            return Err(Error::Config(format!(
                "d_hid {d_hid} is not divisible by d1*d2 = {}*{} = {lead}",
                self.d1, self.d2
            )));
        }
        Ok([self.d1, self.d2, d_hid / lead])
    }
}

/// Leading TT ranks of the current window tensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankSignal {
    /// Rank across the reasoning-step mode.
    pub r1: usize,
    /// First hidden-feature rank.
    pub r2: usize,
    pub epsilon: f64,
    pub window_end_step: u64,
}

impl RankSignal {
    pub fn is_low_rank(&self, t_r1: usize, t_r2: usize) -> bool {
        low_rank_predicate(self, t_r1, t_r2)
    }
}

/// `r1 < t_r1 || r2 < t_r2`.
pub fn low_rank_predicate(sig: &RankSignal, t_r1: usize, t_r2: usize) -> bool {
    sig.r1 < t_r1 || sig.r2 < t_r2
}

/// Stacks a full window into a `(W, d1, d2, d3)` tensor, oldest step first.
pub fn window_tensorize(buf: &WindowBuffer, cfg: &SignalConfig) -> Result<Tensor> {
    if !buf.is_full() {
        return Err(Error::WindowNotFull {
            len: buf.len(),
            capacity: buf.capacity(),
        });
    }
    if buf.capacity() != cfg.window {
        return Err(Error::Config(format!(
            "window buffer capacity {} differs from configured window {}",
            buf.capacity(),
            cfg.window
        )));
    }
    let [d1, d2, d3] = cfg.factor_dims(buf.d_hid())?;
    let mut data = Vec::with_capacity(buf.capacity() * buf.d_hid());
    for e in buf.entries() {
        data.extend_from_slice(&e.vector);
    }
    Tensor::from_vec(vec![buf.capacity(), d1, d2, d3], data)
}

/// TT ranks of the window tensor, or the full rank list when more than the
/// leading pair is wanted.
pub fn window_ranks(buf: &WindowBuffer, cfg: &SignalConfig) -> Result<Vec<usize>> {
    let t = window_tensorize(buf, cfg)?;
    Ok(tt_decompose(&t, cfg.epsilon)?.ranks().to_vec())
}

pub fn rank_signal(buf: &WindowBuffer, cfg: &SignalConfig) -> Result<RankSignal> {
    let ranks = window_ranks(buf, cfg)?;
    Ok(RankSignal {
        r1: ranks[0],
        r2: ranks[1],
        epsilon: cfg.epsilon,
        window_end_step: buf.last_step().expect("full window is non-empty"),
    })
}

/// Signals observed at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSignal {
    pub step: u64,
    pub rank: Option<RankSignal>,
    pub entropy: f64,
}

/// Streaming extractor: push one step at a time and read back its signals.
#[derive(Debug, Clone)]
pub struct SignalExtractor {
    cfg: SignalConfig,
    buffer: WindowBuffer,
}

impl SignalExtractor {
    pub fn new(cfg: SignalConfig, d_hid: usize) -> Result<Self> {
        cfg.factor_dims(d_hid)?;
        let buffer = WindowBuffer::new(cfg.window, d_hid)?;
        Ok(Self { cfg, buffer })
    }

    pub fn config(&self) -> &SignalConfig {
        &self.cfg
    }

    pub fn buffer(&self) -> &WindowBuffer {
        &self.buffer
    }

    pub fn reset(&mut self) {
        self.buffer.clear();
    }

    /// Pushes a step; the rank is computed only when `with_rank` is set and
    /// the window is full.
    pub fn push(&mut self, h: StepHidden, logits: &[f64], with_rank: bool) -> Result<StepSignal> {
        let step = h.step_index;
        self.buffer.push(h)?;
        let rank = if with_rank && self.buffer.is_full() {
            Some(rank_signal(&self.buffer, &self.cfg)?)
        } else {
            None
        };
        Ok(StepSignal {
            step,
            rank,
            entropy: entropy(logits),
        })
    }
}
