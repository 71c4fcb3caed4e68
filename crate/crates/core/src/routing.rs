//! Two-stage SRM/LRM routing policy.
//!
//! Each step first updates a counter of consecutive low-rank windows; when it
//! reaches `collapse_window` the SRM trajectory is considered collapsed and
//! generation terminates. Otherwise the step is routed to the LRM when the
//! window is low-rank or the next-token entropy reaches `t_e`.
//!
//! Rank comparisons are strict (`r < T`), the entropy comparison is not
//! (`H >= T_e`). Before the window fills only the entropy clause applies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals::RankSignal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoutingMode {
    Full,
    /// Entropy threshold only; rank signals are ignored and termination never fires.
    EntropyOnly,
    /// Rank predicate only; entropy is ignored.
    RankOnly,
}

impl RoutingMode {
    pub fn uses_rank(self) -> bool {
        !matches!(self, RoutingMode::EntropyOnly)
    }

    pub fn uses_entropy(self) -> bool {
        !matches!(self, RoutingMode::RankOnly)
    }
}

impl std::str::FromStr for RoutingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(RoutingMode::Full),
            "entropy_only" => Ok(RoutingMode::EntropyOnly),
            "rank_only" => Ok(RoutingMode::RankOnly),
            other => Err(Error::Config(format!(
                "unknown routing mode `{other}` (expected full, entropy_only or rank_only)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoutingConfig {
    pub t_r1: usize,
    pub t_r2: usize,
    pub t_e: f64,
    pub window: usize,
    pub collapse_window: usize,
    pub mode: RoutingMode,
    /// Zero the collapse counter whenever a step is routed to the LRM.
    #[serde(default)]
    pub reset_on_route: bool,
}

impl Default for RoutingConfig {
    fn default() -> Self {
        Self {
            t_r1: 8,
            t_r2: 60,
            t_e: 0.9,
            window: 10,
            collapse_window: 10,
            mode: RoutingMode::Full,
            reset_on_route: false,
        }
    }
}

impl RoutingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_e.is_nan() || self.t_e <= 0.0 {
            return Err(Error::Config(format!("entropy threshold {} must be > 0", self.t_e)));
        }
        if self.collapse_window == 0 {
            return Err(Error::Config("collapse_window must be at least 1".into()));
        }
        if self.window == 0 {
            return Err(Error::Config("window must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    #[serde(rename = "ContinueSRM")]
    ContinueSrm,
    #[serde(rename = "RouteLRM")]
    RouteLrm,
    Terminate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Trigger {
    None,
    LowRank,
    HighEntropy,
    PersistentCollapse,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteDecision {
    pub action: Action,
    pub trigger: Trigger,
    pub step_index: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RouterState {
    pub consecutive_low_rank: usize,
    pub steps_seen: usize,
    pub last_decision: Option<RouteDecision>,
    pub terminated: bool,
}

impl RouterState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// Advances `state` by one step and returns the decision for it.
pub fn route_step(
    state: &mut RouterState,
    sig: Option<&RankSignal>,
    entropy: f64,
    cfg: &RoutingConfig,
) -> Result<RouteDecision> {
    if state.terminated {
        return Err(Error::RouterTerminated);
    }
    if entropy.is_nan() || entropy < 0.0 {
        return Err(Error::Config(format!("entropy {entropy} must be a non-negative number")));
    }
    let step_index = state.steps_seen as u64;
    if cfg.mode.uses_rank() && sig.is_none() && state.steps_seen >= cfg.window {
        return Err(Error::MissingSignal { step: step_index });
    }

    let low_rank = cfg.mode.uses_rank() && sig.is_some_and(|s| s.is_low_rank(cfg.t_r1, cfg.t_r2));
    let high_entropy = cfg.mode.uses_entropy() && entropy >= cfg.t_e;

    if low_rank {
        state.consecutive_low_rank += 1;
    } else {
        state.consecutive_low_rank = 0;
    }

    let (action, trigger) = if state.consecutive_low_rank >= cfg.collapse_window {
        (Action::Terminate, Trigger::PersistentCollapse)
    } else {
        match (low_rank, high_entropy) {
            (true, true) => (Action::RouteLrm, Trigger::Both),
            (true, false) => (Action::RouteLrm, Trigger::LowRank),
            (false, true) => (Action::RouteLrm, Trigger::HighEntropy),
            (false, false) => (Action::ContinueSrm, Trigger::None),
        }
    };

    if action == Action::RouteLrm && cfg.reset_on_route {
        state.consecutive_low_rank = 0;
    }
    state.terminated = action == Action::Terminate;
    state.steps_seen += 1;
    let decision = RouteDecision {
        action,
        trigger,
        step_index,
    };
    state.last_decision = Some(decision);
    Ok(decision)
}

pub fn router_reset(state: &mut RouterState) {
    *state = RouterState::default();
}

/// Owns a config and a state; the usual entry point for replay loops.
#[derive(Debug, Clone)]
pub struct Router {
    cfg: RoutingConfig,
    state: RouterState,
}

impl Router {
    pub fn new(cfg: RoutingConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            state: RouterState::default(),
        })
    }

    pub fn config(&self) -> &RoutingConfig {
        &self.cfg
    }

    pub fn state(&self) -> &RouterState {
        &self.state
    }

    pub fn step(&mut self, sig: Option<&RankSignal>, entropy: f64) -> Result<RouteDecision> {
        route_step(&mut self.state, sig, entropy, &self.cfg)
    }

    pub fn reset(&mut self) {
        router_reset(&mut self.state);
    }
}

/// One line of the decision log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub step: u64,
    pub action: Action,
    pub trigger: Trigger,
    pub r1: Option<usize>,
    pub r2: Option<usize>,
    pub entropy: f64,
    pub counter: usize,
}

impl DecisionRecord {
    pub fn new(decision: &RouteDecision, sig: Option<&RankSignal>, entropy: f64, counter: usize) -> Self {
        Self {
            step: decision.step_index,
            action: decision.action,
            trigger: decision.trigger,
            r1: sig.map(|s| s.r1),
            r2: sig.map(|s| s.r2),
            entropy,
            counter,
        }
    }
}
