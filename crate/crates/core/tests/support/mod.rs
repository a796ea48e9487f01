//! Shared fixtures and oracles for the integration tests.
#![allow(dead_code)]

use percheck_core::chain::Dtmc;
use percheck_core::cm::{ClassSet, CmMode, ConfusionMatrix, DistanceBands, DistanceParamCm};
use percheck_core::model::{EnvState, ScenarioConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn classes() -> ClassSet {
    ClassSet::new(["ped", "obs"]).unwrap()
}

pub fn env(names: &[&str]) -> EnvState {
    EnvState::from_names(&classes(), names).unwrap()
}

/// Class-labeled counts for d <= 10 m of the front camera table.
pub fn class_near() -> ConfusionMatrix {
    ConfusionMatrix::from_counts(
        CmMode::Class,
        classes(),
        vec![31, 0, 0, 0, 191, 0, 127, 734, 3227],
    )
    .unwrap()
}

/// Proposition-labeled counts for d <= 10 m of the front camera table.
pub fn prop_near() -> ConfusionMatrix {
    ConfusionMatrix::from_counts(
        CmMode::Prop,
        classes(),
        vec![22, 0, 5, 0, 0, 184, 4, 0, 0, 0, 0, 0, 63, 354, 13, 3227],
    )
    .unwrap()
}

/// One matrix for every distance.
pub fn single_band(cm: ConfusionMatrix) -> DistanceParamCm {
    DistanceParamCm::new(DistanceBands::new(vec![1000.0]).unwrap(), vec![cm]).unwrap()
}

pub fn scenario(mode: CmMode, env: EnvState, bands: DistanceBands, v_max: u32, v0: u32) -> ScenarioConfig {
    ScenarioConfig {
        n_cells: 8,
        crosswalk_cell: 6,
        v_max,
        cell_length_m: 5.0,
        v0,
        mode,
        bands,
        env,
        cruise_speed: v_max,
    }
}

/// Random chain on `n` states. The last two states are absorbing; every
/// other state has an edge (mass >= 0.1) to a higher-numbered state plus
/// up to three arbitrary edges, so absorption is certain. Returns the chain
/// and a bad set containing one absorbing state and sometimes a transient
/// one.
pub fn random_chain(rng: &mut ChaCha8Rng, n: usize) -> (Dtmc, Vec<usize>) {
    assert!(n >= 3);
    let mut rows = Vec::with_capacity(n);
    for s in 0..n {
        if s >= n - 2 {
            rows.push(vec![(s, 1.0)]);
            continue;
        }
        let forward = rng.random_range(s + 1..n);
        let mut weights = vec![(forward, rng.random_range(0.1..1.0))];
        for _ in 0..rng.random_range(0..4) {
            weights.push((rng.random_range(0..n), rng.random_range(0.0..1.0)));
        }
        let total: f64 = weights.iter().map(|(_, w)| w).sum();
        let mut merged: Vec<(usize, f64)> = Vec::new();
        for (t, w) in weights {
            match merged.iter_mut().find(|(u, _)| *u == t) {
                Some(e) => e.1 += w / total,
                None => merged.push((t, w / total)),
            }
        }
        rows.push(merged);
    }
    let mut bad = vec![n - 1];
    if rng.random_bool(0.5) {
        bad.push(rng.random_range(1..n - 2));
    }
    (Dtmc::new(rows, 0).unwrap(), bad)
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Probability of ever reaching `bad` by pushing probability mass forward
/// step by step until all but `1 - coverage` of it has been absorbed.
pub fn path_mass_oracle(dtmc: &Dtmc, bad: &[usize], coverage: f64) -> f64 {
    let n = dtmc.len();
    let mut mass = vec![0.0; n];
    mass[dtmc.init()] = 1.0;
    let mut reached = 0.0;
    let mut settled = 0.0;
    for _ in 0..10_000_000 {
        let mut next = vec![0.0; n];
        for (s, &m) in mass.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            if bad.contains(&s) {
                reached += m;
                settled += m;
            } else if dtmc.is_absorbing(s) {
                settled += m;
            } else {
                for &(t, p) in dtmc.row(s) {
                    next[t] += m * p;
                }
            }
        }
        mass = next;
        if settled >= coverage {
            return reached;
        }
    }
    panic!("mass did not settle");
}
