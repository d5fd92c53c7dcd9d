use car_core::engine::{parse_event_log, AllocationEvent};
use car_core::policies::minimization::{rmm_difference, rmm_prob};
use car_core::policies::ThetaSpec;
use car_core::{Arm, FeasibleConfig, FeatureMap, PolicySpec, Ratio, RngStream, TrialConfig, TrialState};
use proptest::prelude::*;

fn config(policy: PolicySpec, feature_map: FeatureMap, covariates: Option<usize>, seed: u64) -> TrialConfig {
    TrialConfig {
        name: None,
        rho: Ratio::new(2.0 / 3.0).unwrap(),
        policy,
        feature_map,
        covariates,
        seed,
        stream: 3,
        warmup: None,
    }
}

fn ps_config(seed: u64) -> TrialConfig {
    let fm: FeatureMap = serde_json::from_str(r#"{"kind":"pocock_simon","scheme":{"levels":[2,3],"weights_marginal":[1,2]}}"#).unwrap();
    let policy: PolicySpec = serde_json::from_str(r#"{"kind":"pocock_simon","rho1":0.95,"imb_kind":"square"}"#).unwrap();
    config(policy, fm, None, seed)
}

fn policies() -> Vec<PolicySpec> {
    let mut fixed = FeasibleConfig::new(0.2);
    fixed.theta = ThetaSpec::Fixed {
        xis: vec![vec![1.0, 0.3, 0.0], vec![0.2, 1.0, 0.1], vec![0.0, 0.0, 1.0]],
    };
    vec![
        PolicySpec::CompleteRandomization,
        PolicySpec::Minimization { rho1: 0.9 },
        PolicySpec::Feasible(FeasibleConfig::new(0.2)),
        PolicySpec::Feasible(fixed),
    ]
}

fn run_live(conf: &TrialConfig, records: &[Vec<f64>]) -> (TrialState, Vec<AllocationEvent>) {
    let mut t = TrialState::new(conf.clone()).unwrap();
    let log = records.iter().map(|r| t.enroll(r).unwrap().1).collect();
    (t, log)
}

fn to_text(log: &[AllocationEvent]) -> String {
    log.iter().map(|e| e.to_json_line() + "\n").collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn replay_equals_live(policy_idx in 0usize..4, seed in any::<u64>(), xs in prop::collection::vec(prop::collection::vec(-4.0f64..4.0, 3), 0..80)) {
        let conf = config(policies()[policy_idx].clone(), FeatureMap::Identity, Some(3), seed);
        let (live, log) = run_live(&conf, &xs);
        let parsed = parse_event_log(&to_text(&log)).unwrap();
        prop_assert_eq!(&parsed, &log);
        let replayed = TrialState::replay(conf, &parsed).unwrap();
        prop_assert_eq!(replayed.snapshot(), live.snapshot());
        prop_assert_eq!(replayed.theta(), live.theta());
        for (a, b) in replayed.imbalance().lambda.iter().zip(&live.imbalance().lambda) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn replay_equals_live_discrete(seed in any::<u64>(), xs in prop::collection::vec((1u8..=2, 1u8..=3), 0..80)) {
        let conf = ps_config(seed);
        let records: Vec<Vec<f64>> = xs.iter().map(|&(a, b)| vec![a as f64, b as f64]).collect();
        let (live, log) = run_live(&conf, &records);
        let replayed = TrialState::replay(conf, &parse_event_log(&to_text(&log)).unwrap()).unwrap();
        prop_assert_eq!(replayed.snapshot(), live.snapshot());
    }

    #[test]
    fn theta_ignores_assignment_stream(s1 in any::<u64>(), s2 in any::<u64>(), xs in prop::collection::vec(prop::collection::vec(-4.0f64..4.0, 3), 1..60)) {
        let p = PolicySpec::Feasible(FeasibleConfig::new(0.2));
        let mut a = TrialState::new(config(p.clone(), FeatureMap::Identity, Some(3), s1)).unwrap();
        let mut b = TrialState::new(config(p, FeatureMap::Identity, Some(3), s2)).unwrap();
        for x in &xs {
            a.enroll(x).unwrap();
            b.enroll(x).unwrap();
            prop_assert_eq!(a.theta(), b.theta());
        }
    }

    #[test]
    fn rmm_whatif_branch(seed in any::<u64>(), xs in prop::collection::vec(prop::collection::vec(-4.0f64..4.0, 3), 2..40), probe in prop::collection::vec(-4.0f64..4.0, 3)) {
        let conf = config(PolicySpec::Minimization { rho1: 0.9 }, FeatureMap::Identity, Some(3), seed);
        let (t, _) = run_live(&conf, &xs);
        let w = t.whatif(&probe).unwrap();
        let nt: f64 = w.lambda_if_treat.iter().map(|v| v * v).sum();
        let nc: f64 = w.lambda_if_control.iter().map(|v| v * v).sum();
        let lambda = &t.imbalance().lambda;
        prop_assert_eq!(w.prob_treatment, rmm_prob(lambda, &probe, 2.0 / 3.0, 0.9));
        let diff = rmm_difference(lambda, &probe, 2.0 / 3.0);
        prop_assert!((diff - (nt - nc)).abs() < 1e-9 * (1.0 + nt + nc));
        if (nt - nc).abs() > 1e-9 * (1.0 + nt + nc) {
            let expect = if nt < nc { 0.9 } else { 1.0 - 0.9 };
            prop_assert_eq!(w.prob_treatment, expect);
        }
    }
}

#[test]
fn complete_randomization_ratio() {
    let conf = config(PolicySpec::CompleteRandomization, FeatureMap::Identity, Some(1), 2024);
    let mut t = TrialState::new(conf).unwrap();
    let n = 10_000;
    for i in 0..n {
        t.enroll(&[i as f64]).unwrap();
    }
    let rho = 2.0 / 3.0;
    let frac = t.imbalance().n_treat as f64 / n as f64;
    assert!((frac - rho).abs() < 4.0 * (rho * (1.0 - rho) / n as f64).sqrt(), "{frac}");
}

#[test]
fn first_unit_prob_is_rho_for_every_policy() {
    for p in policies() {
        let mut t = TrialState::new(config(p, FeatureMap::Identity, Some(3), 1)).unwrap();
        assert_eq!(t.enroll(&[1.0, 2.0, 3.0]).unwrap().0.prob_used, 2.0 / 3.0);
    }
    let mut t = TrialState::new(ps_config(1)).unwrap();
    assert_eq!(t.enroll(&[2.0, 3.0]).unwrap().0.prob_used, 2.0 / 3.0);
}

#[test]
fn discrete_margins_sum_to_total() {
    let mut t = TrialState::new(ps_config(9)).unwrap();
    let mut rng = RngStream::new(1, 1);
    for _ in 0..300 {
        let rec = [1.0 + rng.below(2) as f64, 1.0 + rng.below(3) as f64];
        t.enroll(&rec).unwrap();
    }
    let snap = t.snapshot();
    let total = snap.n_treat as f64 - 2.0 / 3.0 * snap.n as f64;
    let margins = snap.margins.unwrap();
    assert!(margins.integer.is_none());
    for cov in &margins.weighted {
        assert!((cov.iter().sum::<f64>() - total).abs() < 1e-9);
    }
}

#[test]
fn external_draws_reproduce_arms() {
    let conf = config(PolicySpec::Minimization { rho1: 0.9 }, FeatureMap::Identity, Some(2), 5);
    let xs: Vec<Vec<f64>> = (0..50).map(|i| vec![(i as f64).sin(), (i as f64 * 0.3).cos()]).collect();
    let (_, log) = run_live(&conf, &xs);
    let mut other = TrialState::new(TrialConfig { seed: 999, ..conf }).unwrap();
    for ev in &log {
        let (a, e) = other.enroll_with_draw(&ev.x_origin, Some(ev.u)).unwrap();
        assert_eq!(a.arm, ev.arm);
        assert_eq!(e.lambda, ev.lambda);
    }
}

#[test]
fn rejected_record_leaves_state_untouched() {
    let mut t = TrialState::new(ps_config(2)).unwrap();
    t.enroll(&[1.0, 2.0]).unwrap();
    let before = t.snapshot();
    assert!(t.enroll(&[3.0, 1.0]).is_err());
    assert!(t.enroll(&[1.5, 1.0]).is_err());
    assert!(t.whatif(&[1.0]).is_err());
    assert_eq!(t.snapshot(), before);
}

#[test]
fn tampered_arm_is_detected() {
    let conf = config(PolicySpec::CompleteRandomization, FeatureMap::Identity, Some(1), 8);
    let (_, mut log) = run_live(&conf, &[vec![1.0], vec![2.0], vec![3.0]]);
    log[1].arm = match log[1].arm {
        Arm::Treatment => Arm::Control,
        Arm::Control => Arm::Treatment,
    };
    assert_eq!(TrialState::replay(conf, &log).unwrap_err().code(), "integrity");
}

#[test]
fn event_field_names_are_fixed() {
    let conf = config(PolicySpec::CompleteRandomization, FeatureMap::Identity, Some(1), 8);
    let (_, log) = run_live(&conf, &[vec![1.0]]);
    let v: serde_json::Value = serde_json::from_str(&log[0].to_json_line()).unwrap();
    let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    keys.sort_unstable();
    assert_eq!(keys, ["arm", "lambda", "prob", "ts", "u", "unit_index", "x", "x_origin"]);
    assert!(v["arm"].is_u64());
}
