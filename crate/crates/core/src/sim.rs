//! Seeded Monte Carlo simulation of the closed loop.
//!
//! Each trial runs the car from its initial state, sampling a fresh
//! observation per step from the detection probabilities of the current band
//! and feeding it to the controller. It is an independent route to the
//! satisfaction probability: no chain is built and nothing is solved.
//!
//! Randomness: trial `t` draws from `ChaCha8Rng::seed_from_u64(seed)` with
//! stream `t`, so any partition of the trials over threads yields the same
//! outcome per trial. Categorical draws use inverse-CDF sampling over the
//! canonical label order with one uniform `f64` per draw.

use alloc::vec::Vec;
use core::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chain::PerceptionModel;
use crate::cm::CmMode;
use crate::model::{observed_slots, AgentState, Observation, Policy, ScenarioConfig, PEDESTRIAN};
use crate::safety::{is_bad, SafetySpec};
use crate::{Error, Result};

/// Trials longer than `HORIZON_FACTOR * n_cells` steps are cut off.
pub const HORIZON_FACTOR: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimEstimate {
    pub trials: u64,
    pub successes: u64,
    pub estimate: f64,
    pub std_error: f64,
    pub seed: u64,
    /// Trials stopped by the horizon cap rather than by absorption.
    pub horizon_hits: u64,
}

impl SimEstimate {
    pub fn from_counts(trials: u64, successes: u64, horizon_hits: u64, seed: u64) -> Self {
        let estimate = successes as f64 / trials as f64;
        let std_error = libm::sqrt(estimate * (1.0 - estimate) / trials as f64);
        SimEstimate {
            trials,
            successes,
            estimate,
            std_error,
            seed,
            horizon_hits,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TrialTally {
    pub successes: u64,
    pub horizon_hits: u64,
}

impl TrialTally {
    pub fn merge(self, other: TrialTally) -> TrialTally {
        TrialTally {
            successes: self.successes + other.successes,
            horizon_hits: self.horizon_hits + other.horizon_hits,
        }
    }
}

/// Cumulative distributions for one band: a single one over proposition
/// sets, or one per object in class mode.
struct BandSampler {
    cdfs: Vec<Vec<f64>>,
}

fn cdf(probs: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    probs
        .iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect()
}

fn draw(cdf: &[f64], probs_nonzero_last: usize, rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    cdf.iter()
        .position(|&c| u < c)
        .unwrap_or(probs_nonzero_last)
}

struct Sampler<'a> {
    cfg: &'a ScenarioConfig,
    model: &'a PerceptionModel,
    bands: Vec<Option<(BandSampler, Vec<usize>)>>,
}

impl<'a> Sampler<'a> {
    fn new(cfg: &'a ScenarioConfig, model: &'a PerceptionModel) -> Self {
        let count = model.bands().map_or(1, |b| b.len());
        Sampler {
            cfg,
            model,
            bands: (0..count).map(|_| None).collect(),
        }
    }

    fn prepare(&mut self, band: usize) -> Result<()> {
        if self.bands[band].is_some() {
            return Ok(());
        }
        let cm = self.model.matrix(band);
        let env = &self.cfg.env;
        let truths = match cm.mode() {
            CmMode::Prop => alloc::vec![cm.prop_index(env.props())],
            CmMode::Class => observed_slots(env, cm.classes().len()),
        };
        let mut cdfs = Vec::new();
        let mut last_nonzero = Vec::new();
        for truth in truths {
            let col = self.model.column(band, truth)?;
            last_nonzero.push(
                col.probs()
                    .iter()
                    .rposition(|&p| p > 0.0)
                    .expect("normalized column has mass"),
            );
            cdfs.push(cdf(col.probs()));
        }
        self.bands[band] = Some((BandSampler { cdfs }, last_nonzero));
        Ok(())
    }

    fn sample(&mut self, agent: AgentState, rng: &mut ChaCha8Rng) -> Result<Observation> {
        let band = self.model.band_for(agent, self.cfg);
        self.prepare(band)?;
        let (sampler, last) = self.bands[band].as_ref().expect("prepared");
        let cm = self.model.matrix(band);
        Ok(match cm.mode() {
            CmMode::Prop => Observation::Prop(cm.prop_at(draw(&sampler.cdfs[0], last[0], rng))),
            CmMode::Class => Observation::Class(
                sampler
                    .cdfs
                    .iter()
                    .zip(last)
                    .map(|(c, &l)| draw(c, l, rng))
                    .collect(),
            ),
        })
    }
}

/// Estimate the probability that a run never visits a bad state of `spec`.
pub fn simulate(
    cfg: &ScenarioConfig,
    model: &PerceptionModel,
    policy: &dyn Policy,
    spec: SafetySpec,
    trials: u64,
    seed: u64,
) -> Result<SimEstimate> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let tally = simulate_trials(cfg, model, policy, spec, seed, 0..trials)?;
    Ok(SimEstimate::from_counts(
        trials,
        tally.successes,
        tally.horizon_hits,
        seed,
    ))
}

/// Runs the trials with indices in `trials`; callers may split the range
/// across threads and merge the tallies.
pub fn simulate_trials(
    cfg: &ScenarioConfig,
    model: &PerceptionModel,
    policy: &dyn Policy,
    spec: SafetySpec,
    seed: u64,
    trials: Range<u64>,
) -> Result<TrialTally> {
    cfg.validate()?;
    let ped_env = model
        .classes()
        .index_of(PEDESTRIAN)
        .is_some_and(|p| cfg.env.contains(p));
    let k = cfg.crosswalk_cell;
    let horizon = HORIZON_FACTOR * cfg.n_cells;
    let mut sampler = Sampler::new(cfg, model);
    let mut tally = TrialTally::default();

    for trial in trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(trial);
        let mut agent = cfg.initial_agent();
        let mut violated = is_bad(agent, ped_env, k, spec);
        let mut steps = 0;
        while !violated && agent.cell != cfg.n_cells && agent != cfg.stop_target() {
            if steps == horizon {
                tally.horizon_hits += 1;
                break;
            }
            let obs = sampler.sample(agent, &mut rng)?;
            agent = cfg.step(agent, policy.accel(agent, &obs));
            violated = is_bad(agent, ped_env, k, spec);
            steps += 1;
        }
        if !violated {
            tally.successes += 1;
        }
    }
    Ok(tally)
}
