use proptest::prelude::*;
use rankguide_core::generator::{gen_synthetic_trace, CollapseSegment, GeneratorSpec, Segment};
use rankguide_core::routing::{Action, RoutingConfig, RoutingMode};
use rankguide_core::signals::SignalConfig;
use rankguide_core::simulator::{
    simulate, validation_ratio, CostModel, SampleReport, Simulator, Steering, StepSource,
};
use rankguide_core::steering::{KeywordClassifier, SteeringVector};
use rankguide_core::trace::{Trace, TraceRole};

fn signal() -> SignalConfig {
    SignalConfig {
        window: 4,
        d1: 2,
        d2: 2,
        epsilon: 0.1,
        entropy_k: 20,
    }
}

fn routing(mode: RoutingMode) -> RoutingConfig {
    RoutingConfig {
        t_r1: 3,
        t_r2: 1,
        t_e: 1.0,
        window: 4,
        collapse_window: 4,
        mode,
        reset_on_route: false,
    }
}

fn pair(seed: u64) -> (Trace, Trace) {
    let srm = gen_synthetic_trace(
        &GeneratorSpec {
            n_steps: 30,
            d_hid: 16,
            high_entropy: vec![Segment { start: 2, len: 3 }],
            collapse: vec![CollapseSegment { start: 12, len: 6, dim: 1, noise: 0.0 }],
            validation_ratio: Some(0.3),
            final_answer_correct: Some(false),
            boundary_every: 2,
            ..GeneratorSpec::default()
        },
        seed,
    )
    .unwrap();
    let lrm = gen_synthetic_trace(
        &GeneratorSpec {
            n_steps: 30,
            d_hid: 16,
            role: TraceRole::Lrm,
            final_answer_correct: Some(true),
            ..GeneratorSpec::default()
        },
        seed ^ 0xabcd,
    )
    .unwrap();
    (srm, lrm)
}

/// Recomputes the cost from the consumed-step log alone.
fn independent_latency(s: &SampleReport, c: &CostModel) -> f64 {
    let (mut n_srm, mut n_lrm, mut n_sw) = (0usize, 0usize, 0usize);
    let mut prev = None;
    for step in &s.consumed {
        match step.source {
            StepSource::Srm => n_srm += 1,
            StepSource::Lrm => n_lrm += 1,
        }
        if prev.is_some_and(|p| p != step.source) {
            n_sw += 1;
        }
        prev = Some(step.source);
    }
    let n_rank = s.decisions.iter().filter(|d| d.r1.is_some()).count();
    let mut acc = 0.0;
    for (n, cost) in [
        (n_srm, c.srm_step_cost),
        (n_lrm, c.lrm_step_cost),
        (n_rank, c.signal_cost),
        (n_sw, c.route_overhead),
    ] {
        acc += n as f64 * cost;
    }
    acc
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn conservation_and_cost_additivity(
        seed in any::<u64>(),
        mode in prop_oneof![Just(RoutingMode::Full), Just(RoutingMode::EntropyOnly), Just(RoutingMode::RankOnly)],
        costs in prop::array::uniform4(0.0f64..10.0),
        reset in any::<bool>(),
    ) {
        let (srm, lrm) = pair(seed);
        let cost = CostModel { srm_step_cost: costs[0], lrm_step_cost: costs[1], signal_cost: costs[2], route_overhead: costs[3] };
        let r = RoutingConfig { reset_on_route: reset, ..routing(mode) };
        let s = Simulator::new(r, signal(), cost).unwrap().run_sample("p", &srm, &lrm).unwrap();
        prop_assert_eq!(s.steps_srm + s.steps_lrm, s.steps_total);
        prop_assert_eq!(s.consumed.len(), s.steps_total);
        prop_assert_eq!(s.decisions.len(), s.steps_total);
        prop_assert_eq!(s.latency.to_bits(), independent_latency(&s, &cost).to_bits());
        prop_assert_eq!(s.terminated_early, s.decisions.last().unwrap().action == Action::Terminate);
        for (i, c) in s.consumed.iter().enumerate() {
            let want = if i > 0 && s.decisions[i - 1].action == Action::RouteLrm { StepSource::Lrm } else { StepSource::Srm };
            prop_assert_eq!(c.source, want);
            prop_assert_eq!(c.step, i as u64);
        }
    }

    #[test]
    fn zero_and_boundary_off_steering_are_no_ops(seed in any::<u64>()) {
        let (srm, lrm) = pair(seed);
        let sim = Simulator::new(routing(RoutingMode::Full), signal(), CostModel::default()).unwrap();
        let plain = sim.run_sample("p", &srm, &lrm).unwrap();

        let zero = Steering::new(SteeringVector::zeros(16), 1.0).unwrap();
        let with_zero = sim.clone().with_steering(Some(zero)).run_sample("p", &srm, &lrm).unwrap();
        prop_assert_eq!(&plain, &with_zero);

        let mut v = SteeringVector::zeros(16);
        v.vector = (0..16).map(|i| (i as f64 - 7.5) * 0.3).collect();
        let mut no_boundaries = srm.clone();
        no_boundaries.steps.iter_mut().for_each(|s| s.is_boundary = false);
        let steer = Steering::new(v, 2.0).unwrap();
        let a = sim.run_sample("p", &no_boundaries, &lrm).unwrap();
        let b = sim.clone().with_steering(Some(steer)).run_sample("p", &no_boundaries, &lrm).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn replay_is_deterministic() {
    let (srm, lrm) = pair(77);
    let run = || {
        simulate(&srm, &lrm, &routing(RoutingMode::Full), &signal(), None, &CostModel::default()).unwrap()
    };
    let a = serde_json::to_string(&run()).unwrap();
    let b = serde_json::to_string(&run()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn twenty_nine_percent_validation() {
    let trace = gen_synthetic_trace(
        &GeneratorSpec {
            n_steps: 100,
            d_hid: 16,
            validation_ratio: Some(0.29),
            ..GeneratorSpec::default()
        },
        29,
    )
    .unwrap();
    let clf = KeywordClassifier::default_keywords();
    let texts: Vec<&str> = trace.steps.iter().map(|s| s.text.as_str()).collect();
    assert_eq!(validation_ratio(&texts, &clf).unwrap(), 0.29);

    let off = RoutingConfig {
        t_r1: 0,
        t_r2: 0,
        t_e: f64::INFINITY,
        ..routing(RoutingMode::Full)
    };
    let r = simulate(&trace, &trace, &off, &signal(), None, &CostModel::default()).unwrap();
    assert_eq!(r.validation_ratio, 0.29);
    assert_eq!(r.samples[0].steps_lrm, 0);
}
