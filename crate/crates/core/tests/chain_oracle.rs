mod support;

use percheck_core::chain::{
    relevant_band, successors, transition_prob_class, transition_prob_prop, STOCHASTIC_TOL,
};
use percheck_core::cm::{
    ClassSet, CmMode, ConfusionMatrix, DistanceBands, DistanceParamCm, PropSet, ZeroColumnPolicy,
};
use percheck_core::model::{
    stop_feasible, Accel, AgentState, Controller, EnvState, Observation, Policy, ScenarioConfig,
    SystemState,
};
use percheck_core::safety::{bad_states, prob_safe, SafetySpec};
use percheck_core::{build_chain, PerceptionModel, StateLabels};
use rand::Rng;
use support::{class_near, classes, env, prop_near, scenario, seeded, single_band};

fn tens() -> DistanceBands {
    DistanceBands::uniform(10.0, 10).unwrap()
}

fn state(cell: u32, speed: u32, env: &EnvState) -> SystemState {
    SystemState {
        agent: AgentState::new(cell, speed),
        env: env.clone(),
    }
}

#[test]
fn band_of_the_crosswalk_distance() {
    let mut cfg = scenario(CmMode::Class, env(&["ped"]), tens(), 1, 1);
    cfg.cell_length_m = 10.0;
    assert_eq!(relevant_band(AgentState::new(5, 1), &cfg), 0);
    assert_eq!(relevant_band(AgentState::new(1, 1), &cfg), 4);
    assert_eq!(relevant_band(AgentState::new(6, 0), &cfg), 0);
    assert_eq!(relevant_band(AgentState::new(8, 1), &cfg), 0);
}

/// Two cells (10 m) before the crosswalk the near band applies; a reported
/// pedestrian makes the controller brake onto the stop line, anything else
/// keeps it cruising.
#[test]
fn near_band_prop_transition() {
    let ped = env(&["ped"]);
    let cfg = scenario(CmMode::Prop, ped.clone(), DistanceBands::new(vec![10.0, 1000.0]).unwrap(), 1, 1);
    let far = ConfusionMatrix::identity(CmMode::Prop, classes(), 1).unwrap();
    let dp = DistanceParamCm::new(cfg.bands.clone(), vec![prop_near(), far]).unwrap();
    let model = PerceptionModel::banded(&dp, ZeroColumnPolicy::Strict);
    let ctl = Controller::for_classes(&cfg, &classes()).unwrap();
    let s1 = state(4, 1, &ped);
    let brake = transition_prob_prop(&s1, &state(5, 0, &ped), &model, &cfg, &ctl).unwrap();
    let cruise = transition_prob_prop(&s1, &state(5, 1, &ped), &model, &cfg, &ctl).unwrap();
    assert!((brake - 22.0 / 85.0).abs() < 1e-15);
    assert!((cruise - 63.0 / 85.0).abs() < 1e-15);
    let other = transition_prob_prop(&s1, &state(6, 1, &ped), &model, &cfg, &ctl).unwrap();
    assert_eq!(other, 0.0);
}

#[test]
fn near_band_class_transition() {
    let ped = env(&["ped"]);
    let cfg = scenario(CmMode::Class, ped.clone(), DistanceBands::new(vec![10.0, 1000.0]).unwrap(), 1, 1);
    let far = ConfusionMatrix::identity(CmMode::Class, classes(), 1).unwrap();
    let dp = DistanceParamCm::new(cfg.bands.clone(), vec![class_near(), far]).unwrap();
    let model = PerceptionModel::banded(&dp, ZeroColumnPolicy::Strict);
    let ctl = Controller::for_classes(&cfg, &classes()).unwrap();
    let s1 = state(4, 1, &ped);
    let brake = transition_prob_class(&s1, &state(5, 0, &ped), &model, &cfg, &ctl).unwrap();
    let cruise = transition_prob_class(&s1, &state(5, 1, &ped), &model, &cfg, &ctl).unwrap();
    assert!((brake - 31.0 / 158.0).abs() < 1e-15);
    assert!((cruise - 127.0 / 158.0).abs() < 1e-15);
}

#[test]
fn two_objects_are_detected_independently() {
    let model = PerceptionModel::banded(&single_band(class_near()), ZeroColumnPolicy::Strict);
    let both = env(&["ped", "obs"]);
    let dist = model.observation_distribution(0, &both).unwrap();
    assert_eq!(dist.len(), 9);
    let p = dist
        .iter()
        .find(|(o, _)| *o == Observation::Class(vec![2, 1]))
        .map(|(_, p)| *p)
        .unwrap();
    let expected = (127.0 / 158.0) * (191.0 / 925.0);
    assert!((p - expected).abs() < 1e-15);
    // (127 * 191) / (158 * 925) ~= 0.165973
    assert!((p - 24257.0 / 146150.0).abs() < 1e-15);
    let total: f64 = dist.iter().map(|(_, p)| p).sum();
    assert!((total - 1.0).abs() < 1e-12);
}

/// Maps every observation to an acceleration through a random table.
struct TablePolicy {
    prop: Vec<Accel>,
    class: Vec<Accel>,
}

impl TablePolicy {
    fn random(rng: &mut impl Rng) -> Self {
        let mut pick = || Accel::ALL[rng.random_range(0..3)];
        TablePolicy {
            prop: (0..4).map(|_| pick()).collect(),
            class: (0..9).map(|_| pick()).collect(),
        }
    }
}

impl Policy for TablePolicy {
    fn accel(&self, _: AgentState, obs: &Observation) -> Accel {
        match obs {
            Observation::Prop(set) => self.prop[set.bits() as usize],
            Observation::Class(t) => self.class[t.iter().fold(0, |acc, &c| acc * 3 + c)],
        }
    }
}

fn random_counts(rng: &mut impl Rng, dim: usize) -> Vec<u64> {
    (0..dim * dim).map(|_| rng.random_range(1..50)).collect()
}

#[test]
fn prop_transitions_match_enumeration() {
    let mut rng = seeded(3);
    for _ in 0..200 {
        let counts = random_counts(&mut rng, 4);
        let cm = ConfusionMatrix::from_counts(CmMode::Prop, classes(), counts.clone()).unwrap();
        let model = PerceptionModel::banded(&single_band(cm.clone()), ZeroColumnPolicy::Strict);
        let truth_bits = rng.random_range(0..4u32);
        let e = EnvState::new(PropSet::from_bits(truth_bits).members().collect());
        let cfg = scenario(CmMode::Prop, e.clone(), DistanceBands::new(vec![1000.0]).unwrap(), 3, 1);
        let policy = TablePolicy::random(&mut rng);
        let s1 = state(rng.random_range(1..6), rng.random_range(0..4), &e);

        let j = cm.prop_index(PropSet::from_bits(truth_bits));
        let col: u64 = (0..4).map(|i| counts[i * 4 + j]).sum();
        let mut expected = std::collections::BTreeMap::new();
        for bits in 0..4u32 {
            let set = PropSet::from_bits(bits);
            let i = cm.prop_index(set);
            let next = cfg.step(s1.agent, policy.prop[bits as usize]);
            *expected.entry(next).or_insert(0.0) += counts[i * 4 + j] as f64 / col as f64;
        }
        for (next, p) in &expected {
            let got = transition_prob_prop(&s1, &state(next.cell, next.speed, &e), &model, &cfg, &policy).unwrap();
            assert!((got - p).abs() < 1e-12);
        }
        let succ = successors(s1.agent, &cfg, &model, &policy).unwrap();
        assert_eq!(succ.len(), expected.len());
        for (a, p) in succ {
            assert!((expected[&a] - p).abs() < 1e-12);
        }
    }
}

#[test]
fn class_transitions_match_enumeration() {
    let mut rng = seeded(4);
    let both = env(&["ped", "obs"]);
    for _ in 0..200 {
        let counts = random_counts(&mut rng, 3);
        let cm = ConfusionMatrix::from_counts(CmMode::Class, classes(), counts.clone()).unwrap();
        let model = PerceptionModel::banded(&single_band(cm), ZeroColumnPolicy::Strict);
        let cfg = scenario(CmMode::Class, both.clone(), DistanceBands::new(vec![1000.0]).unwrap(), 3, 1);
        let policy = TablePolicy::random(&mut rng);
        let s1 = state(rng.random_range(1..6), rng.random_range(0..4), &both);
        let mu = |pred: usize, truth: usize| {
            let col: u64 = (0..3).map(|i| counts[i * 3 + truth]).sum();
            counts[pred * 3 + truth] as f64 / col as f64
        };
        let mut expected = std::collections::BTreeMap::new();
        for a in 0..3 {
            for b in 0..3 {
                let next = cfg.step(s1.agent, policy.class[a * 3 + b]);
                *expected.entry(next).or_insert(0.0) += mu(a, 0) * mu(b, 1);
            }
        }
        for (next, p) in &expected {
            let got = transition_prob_class(&s1, &state(next.cell, next.speed, &both), &model, &cfg, &policy).unwrap();
            assert!((got - p).abs() < 1e-12);
        }
    }
}

#[test]
fn single_object_prop_and_class_chains_coincide() {
    let peds = ClassSet::new(["ped"]).unwrap();
    let mut rng = seeded(8);
    for _ in 0..20 {
        let counts: Vec<u64> = (0..4).map(|_| rng.random_range(1..100)).collect();
        let bands = DistanceBands::new(vec![10.0, 1000.0]).unwrap();
        let mk = |mode| {
            let near = ConfusionMatrix::from_counts(mode, peds.clone(), counts.clone()).unwrap();
            let far = ConfusionMatrix::from_counts(mode, peds.clone(), vec![9, 1, 2, 8]).unwrap();
            DistanceParamCm::new(bands.clone(), vec![near, far]).unwrap()
        };
        for v_max in 1..=3 {
            let e = EnvState::from_names(&peds, &["ped"]).unwrap();
            let cfg_c = scenario(CmMode::Class, e.clone(), bands.clone(), v_max, 1);
            let cfg_p = ScenarioConfig { mode: CmMode::Prop, ..cfg_c.clone() };
            let mc = PerceptionModel::banded(&mk(CmMode::Class), ZeroColumnPolicy::Strict);
            let mp = PerceptionModel::banded(&mk(CmMode::Prop), ZeroColumnPolicy::Strict);
            let ctl = Controller::for_classes(&cfg_c, &peds).unwrap();
            let a = build_chain(&cfg_c, &mc, &ctl).unwrap();
            let b = build_chain(&cfg_p, &mp, &ctl).unwrap();
            assert_eq!(a, b);
        }
    }
}

fn identity_model(mode: CmMode) -> PerceptionModel {
    let dp = DistanceParamCm::new(
        tens(),
        (0..10)
            .map(|_| ConfusionMatrix::identity(mode, classes(), 5).unwrap())
            .collect(),
    )
    .unwrap();
    PerceptionModel::banded(&dp, ZeroColumnPolicy::Strict)
}

#[test]
fn perfect_perception_is_safe_and_deterministic() {
    for mode in [CmMode::Class, CmMode::Prop] {
        for names in [&["ped"][..], &[], &["obs"], &["ped", "obs"]] {
            for v_max in 1..=3 {
                for v0 in 1..=v_max {
                    let cfg = scenario(mode, env(names), tens(), v_max, v0);
                    if !stop_feasible(cfg.initial_agent(), &cfg) {
                        continue;
                    }
                    let model = identity_model(mode);
                    let ctl = Controller::for_classes(&cfg, &classes()).unwrap();
                    let chain = build_chain(&cfg, &model, &ctl).unwrap();
                    for s in 0..chain.len() {
                        assert_eq!(chain.transitions(s).len(), 1);
                    }
                    let last = chain.len() - 1;
                    assert!(chain.dtmc().is_absorbing(last));
                    if names.contains(&"ped") {
                        assert_eq!(chain.agent(last), cfg.stop_target());
                        assert!(chain.labels(last).contains(StateLabels::STOPPED_AT_CW));
                    } else {
                        assert_eq!(chain.agent(last).cell, cfg.n_cells);
                    }
                    let bad = bad_states(&chain, SafetySpec::All);
                    assert_eq!(prob_safe(chain.dtmc(), &bad.states).unwrap().probability, 1.0);
                }
            }
        }
    }
}

#[test]
fn error_free_empty_column_cruises_through() {
    let cfg = scenario(CmMode::Class, EnvState::empty(), DistanceBands::new(vec![1000.0]).unwrap(), 2, 1);
    let model = PerceptionModel::banded(&single_band(class_near()), ZeroColumnPolicy::Strict);
    let ctl = Controller::for_classes(&cfg, &classes()).unwrap();
    let chain = build_chain(&cfg, &model, &ctl).unwrap();
    for s in 0..chain.len() {
        assert_eq!(chain.transitions(s).len(), 1);
    }
    assert_eq!(chain.agent(chain.len() - 1).cell, cfg.n_cells);
}

#[test]
fn random_models_give_stochastic_bounded_chains() {
    let mut rng = seeded(21);
    for _ in 0..100 {
        let mode = if rng.random_bool(0.5) { CmMode::Class } else { CmMode::Prop };
        let dim = if mode == CmMode::Class { 3 } else { 4 };
        let bands = DistanceBands::uniform(5.0, 4).unwrap();
        let dp = DistanceParamCm::new(
            bands.clone(),
            (0..4)
                .map(|_| ConfusionMatrix::from_counts(mode, classes(), random_counts(&mut rng, dim)).unwrap())
                .collect(),
        )
        .unwrap();
        let names: &[&str] = [&["ped"][..], &[], &["obs"], &["ped", "obs"]][rng.random_range(0..4)];
        let v_max = rng.random_range(1..=4);
        let cfg = ScenarioConfig {
            n_cells: rng.random_range(6..12),
            crosswalk_cell: 5,
            cell_length_m: rng.random_range(1.0..8.0),
            ..scenario(mode, env(names), bands, v_max, rng.random_range(1..=v_max))
        };
        let model = PerceptionModel::banded(&dp, ZeroColumnPolicy::Strict);
        let ctl = Controller::for_classes(&cfg, &classes()).unwrap();
        let chain = build_chain(&cfg, &model, &ctl).unwrap();
        chain.dtmc().check_stochastic(STOCHASTIC_TOL).unwrap();
        assert!(chain.len() <= cfg.state_count());
        assert_eq!(chain, build_chain(&cfg, &model, &ctl).unwrap());

        let all = prob_safe(chain.dtmc(), &bad_states(&chain, SafetySpec::All).states).unwrap();
        for spec in SafetySpec::COMPONENTS {
            let p = prob_safe(chain.dtmc(), &bad_states(&chain, spec).states).unwrap();
            assert!(all.probability <= p.probability + 1e-12);
        }
    }
}

#[test]
fn mode_mismatch_is_rejected() {
    let cfg = scenario(CmMode::Class, env(&["ped"]), tens(), 1, 1);
    let model = identity_model(CmMode::Prop);
    let ctl = Controller::for_classes(&cfg, &classes()).unwrap();
    assert!(build_chain(&cfg, &model, &ctl).is_err());
    let wrong_bands = scenario(CmMode::Prop, env(&["ped"]), DistanceBands::uniform(5.0, 10).unwrap(), 1, 1);
    assert!(build_chain(&wrong_bands, &model, &ctl).is_err());
}
