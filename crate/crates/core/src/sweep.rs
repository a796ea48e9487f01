//! Grid evaluation over confusion-matrix variants, environments and speeds.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::chain::{build_chain, MarkovChain, PerceptionModel};
use crate::cm::{aggregate, CmMode, DistanceParamCm, ZeroColumnPolicy};
use crate::model::{Controller, EnvState, ScenarioConfig};
use crate::safety::{bad_states, prob_safe, SafetySpec, SatisfactionResult};
use crate::{Error, Result};

/// Which confusion matrix drives perception.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Class,
    ClassDistance,
    Prop,
    PropDistance,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Class,
        Variant::ClassDistance,
        Variant::Prop,
        Variant::PropDistance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Class => "class",
            Variant::ClassDistance => "class_dist",
            Variant::Prop => "prop",
            Variant::PropDistance => "prop_dist",
        }
    }

    pub fn mode(self) -> CmMode {
        match self {
            Variant::Class | Variant::ClassDistance => CmMode::Class,
            Variant::Prop | Variant::PropDistance => CmMode::Prop,
        }
    }

    pub fn distance_parametrized(self) -> bool {
        matches!(self, Variant::ClassDistance | Variant::PropDistance)
    }

    /// The counterpart with the other distance treatment.
    pub fn counterpart(self) -> Variant {
        match self {
            Variant::Class => Variant::ClassDistance,
            Variant::ClassDistance => Variant::Class,
            Variant::Prop => Variant::PropDistance,
            Variant::PropDistance => Variant::Prop,
        }
    }

    pub fn model(
        self,
        class_cm: &DistanceParamCm,
        prop_cm: &DistanceParamCm,
        policy: ZeroColumnPolicy,
    ) -> Result<PerceptionModel> {
        let dp = match self.mode() {
            CmMode::Class => class_cm,
            CmMode::Prop => prop_cm,
        };
        if dp.mode() != self.mode() {
            return Err(Error::ModeMismatch {
                expected: self.mode().as_str(),
                found: dp.mode().as_str(),
            });
        }
        Ok(if self.distance_parametrized() {
            PerceptionModel::banded(dp, policy)
        } else {
            PerceptionModel::aggregated(aggregate(dp)?, policy)
        })
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl core::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidArgument(alloc::format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub variants: Vec<Variant>,
    /// Environments by class name; an empty list is the empty crosswalk.
    pub envs: Vec<Vec<String>>,
    pub v_max: Vec<u32>,
    pub spec: SafetySpec,
    pub zero_column: ZeroColumnPolicy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub variant: Variant,
    pub env: EnvState,
    pub env_name: String,
    pub cfg: ScenarioConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub variant: Variant,
    pub env: String,
    pub v_max: u32,
    pub v0: u32,
    pub result: SatisfactionResult,
    pub states: usize,
    pub bad_states: usize,
}

impl SweepGrid {
    /// Grid points in output order: variant, environment, `v_max`, `v0`.
    pub fn points(&self, base: &ScenarioConfig, class_cm: &DistanceParamCm) -> Result<Vec<GridPoint>> {
        let classes = class_cm.classes();
        let mut out = Vec::new();
        for &variant in &self.variants {
            for names in &self.envs {
                let env = EnvState::from_names(classes, names)?;
                for &v_max in &self.v_max {
                    for v0 in 1..=v_max {
                        let cfg = ScenarioConfig {
                            v_max,
                            v0,
                            mode: variant.mode(),
                            env: env.clone(),
                            cruise_speed: base.cruise_speed.min(v_max).max(1),
                            ..base.clone()
                        };
                        out.push(GridPoint {
                            variant,
                            env_name: env.display(classes),
                            env: env.clone(),
                            cfg,
                        });
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Chain and its perception model for one grid point.
pub fn chain_for_point(
    point: &GridPoint,
    class_cm: &DistanceParamCm,
    prop_cm: &DistanceParamCm,
    zero_column: ZeroColumnPolicy,
) -> Result<(MarkovChain, PerceptionModel, Controller)> {
    let model = point.variant.model(class_cm, prop_cm, zero_column)?;
    let controller = Controller::for_classes(&point.cfg, model.classes())?;
    let chain = build_chain(&point.cfg, &model, &controller)?;
    Ok((chain, model, controller))
}

/// Satisfaction probability at every grid point. `base` supplies the road
/// geometry, bands and cruise speed (capped at each `v_max`).
pub fn sweep(
    base: &ScenarioConfig,
    grid: &SweepGrid,
    class_cm: &DistanceParamCm,
    prop_cm: &DistanceParamCm,
) -> Result<Vec<SweepRow>> {
    if class_cm.classes() != prop_cm.classes() {
        return Err(Error::LabelMismatch);
    }
    grid.points(base, class_cm)?
        .into_iter()
        .map(|point| {
            let (chain, _, _) = chain_for_point(&point, class_cm, prop_cm, grid.zero_column)?;
            let bad = bad_states(&chain, grid.spec);
            let result = prob_safe(chain.dtmc(), &bad.states)?;
            Ok(SweepRow {
                variant: point.variant,
                env: point.env_name,
                v_max: point.cfg.v_max,
                v0: point.cfg.v0,
                result,
                states: chain.len(),
                bad_states: bad.states.len(),
            })
        })
        .collect()
}
