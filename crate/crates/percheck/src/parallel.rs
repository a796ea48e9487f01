//! Multi-threaded drivers. Results do not depend on the thread count: Monte
//! Carlo trials use per-trial random streams, and grid points are collected
//! in input order.

use rayon::prelude::*;

use percheck_core::chain::PerceptionModel;
use percheck_core::model::{Policy, ScenarioConfig};
use percheck_core::sim::{simulate_trials, SimEstimate, TrialTally};
use percheck_core::{Error, SafetySpec};

use crate::error::Result;

/// Trials per rayon task.
const BATCH: u64 = 4096;

pub fn simulate<P: Policy + Sync>(
    cfg: &ScenarioConfig,
    model: &PerceptionModel,
    policy: &P,
    spec: SafetySpec,
    trials: u64,
    seed: u64,
) -> Result<SimEstimate> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()).into());
    }
    let batches = trials.div_ceil(BATCH);
    let tally = (0..batches)
        .into_par_iter()
        .map(|b| {
            let range = b * BATCH..((b + 1) * BATCH).min(trials);
            simulate_trials(cfg, model, policy, spec, seed, range)
        })
        .try_reduce(TrialTally::default, |a, b| Ok(a.merge(b)))?;
    Ok(SimEstimate::from_counts(
        trials,
        tally.successes,
        tally.horizon_hits,
        seed,
    ))
}
