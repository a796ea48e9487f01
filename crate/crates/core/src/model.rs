//! The discrete car / pedestrian system.
//!
//! The road is a line of cells `1..=n_cells`. A crosswalk sits at cell `k`;
//! when a pedestrian is waiting there the car must come to rest exactly at
//! cell `k - 1`, and otherwise it must never stop. The environment is fixed
//! for the whole run and observed (possibly wrongly) once per step.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::cm::{canonical_prop_order, ClassSet, CmMode, DistanceBands, PropSet};
use crate::{Error, Result};

/// Class name the controller and the requirements treat as a pedestrian.
pub const PEDESTRIAN: &str = "ped";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AgentState {
    pub cell: u32,
    pub speed: u32,
}

impl AgentState {
    pub const fn new(cell: u32, speed: u32) -> Self {
        AgentState { cell, speed }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Accel {
    Decelerate,
    Hold,
    Accelerate,
}

impl Accel {
    pub const ALL: [Accel; 3] = [Accel::Decelerate, Accel::Hold, Accel::Accelerate];

    pub fn delta(self) -> i64 {
        match self {
            Accel::Decelerate => -1,
            Accel::Hold => 0,
            Accel::Accelerate => 1,
        }
    }
}

/// Move at the current speed, then apply the acceleration. Both position and
/// speed are clamped to the state space.
pub fn step_dynamics(agent: AgentState, accel: Accel, n_cells: u32, v_max: u32) -> AgentState {
    let cell = agent.cell.saturating_add(agent.speed).min(n_cells);
    let speed = (agent.speed as i64 + accel.delta()).clamp(0, v_max as i64) as u32;
    AgentState { cell, speed }
}

/// True objects waiting at the crosswalk, as class indices. Order matters in
/// class mode (observations are tuples); an empty list means nothing is there.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct EnvState {
    pub objects: Vec<usize>,
}

impl EnvState {
    pub fn empty() -> Self {
        EnvState::default()
    }

    pub fn new(objects: Vec<usize>) -> Self {
        EnvState { objects }
    }

    pub fn from_names<S: AsRef<str>>(classes: &ClassSet, names: &[S]) -> Result<Self> {
        let objects = names
            .iter()
            .map(|n| {
                classes
                    .index_of(n.as_ref())
                    .ok_or_else(|| Error::UnknownLabel(n.as_ref().into()))
            })
            .collect::<Result<_>>()?;
        Ok(EnvState { objects })
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn contains(&self, class: usize) -> bool {
        self.objects.contains(&class)
    }

    pub fn props(&self) -> PropSet {
        self.objects
            .iter()
            .fold(PropSet::EMPTY, |set, &c| set.with(c))
    }

    /// Human-readable form: `ped+obs`, or `emp` when empty.
    pub fn display(&self, classes: &ClassSet) -> alloc::string::String {
        if self.objects.is_empty() {
            return crate::cm::EMPTY_LABEL.into();
        }
        let names: Vec<&str> = self.objects.iter().map(|&c| classes.name(c)).collect();
        names.join("+")
    }
}

/// A state of the closed loop: the car plus the (fixed) true environment.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SystemState {
    pub agent: AgentState,
    pub env: EnvState,
}

/// What perception reports about the crosswalk in one step.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Observation {
    /// Set of propositions reported true.
    Prop(PropSet),
    /// One predicted class label per true object; the value `n_classes`
    /// stands for `emp`. An empty environment is observed through a single
    /// pseudo-object.
    Class(Vec<usize>),
}

impl Observation {
    pub fn contains(&self, class: usize) -> bool {
        match self {
            Observation::Prop(set) => set.contains(class),
            Observation::Class(tuple) => tuple.contains(&class),
        }
    }
}

/// True labels the perception model is queried with, one per observed slot.
pub fn observed_slots(env: &EnvState, n_classes: usize) -> Vec<usize> {
    if env.is_empty() {
        vec![n_classes]
    } else {
        env.objects.clone()
    }
}

/// All outcomes perception can report for `env`.
pub fn observation_space(mode: CmMode, env: &EnvState, n_classes: usize) -> Vec<Observation> {
    match mode {
        CmMode::Prop => canonical_prop_order(n_classes)
            .into_iter()
            .map(Observation::Prop)
            .collect(),
        CmMode::Class => {
            let len = observed_slots(env, n_classes).len();
            let base = n_classes + 1;
            let count = base.pow(len as u32);
            (0..count)
                .map(|mut code| {
                    let mut tuple = vec![0; len];
                    for slot in tuple.iter_mut().rev() {
                        *slot = code % base;
                        code /= base;
                    }
                    Observation::Class(tuple)
                })
                .collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub n_cells: u32,
    pub crosswalk_cell: u32,
    pub v_max: u32,
    pub cell_length_m: f64,
    pub v0: u32,
    pub mode: CmMode,
    pub bands: DistanceBands,
    pub env: EnvState,
    /// Speed the controller accelerates to when no pedestrian is seen.
    pub cruise_speed: u32,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: alloc::string::String| Err(Error::InvalidScenario(msg));
        if self.n_cells < 3 {
            return fail(format!("n_cells = {} must be at least 3", self.n_cells));
        }
        if self.crosswalk_cell < 3 || self.crosswalk_cell > self.n_cells {
            return fail(format!(
                "crosswalk_cell = {} must lie in [3, n_cells = {}]",
                self.crosswalk_cell, self.n_cells
            ));
        }
        if self.v_max < 1 {
            return fail("v_max must be at least 1".into());
        }
        if self.v0 < 1 || self.v0 > self.v_max {
            return fail(format!(
                "v0 = {} must lie in [1, v_max = {}]",
                self.v0, self.v_max
            ));
        }
        if !(self.cell_length_m.is_finite() && self.cell_length_m > 0.0) {
            return fail(format!(
                "cell_length_m = {} must be positive",
                self.cell_length_m
            ));
        }
        if self.cruise_speed < 1 || self.cruise_speed > self.v_max {
            return fail(format!(
                "cruise speed {} must lie in [1, v_max = {}]",
                self.cruise_speed, self.v_max
            ));
        }
        Ok(())
    }

    pub fn step(&self, agent: AgentState, accel: Accel) -> AgentState {
        step_dynamics(agent, accel, self.n_cells, self.v_max)
    }

    pub fn initial_agent(&self) -> AgentState {
        AgentState::new(1, self.v0)
    }

    /// Resting spot in front of the crosswalk.
    pub fn stop_target(&self) -> AgentState {
        AgentState::new(self.crosswalk_cell - 1, 0)
    }

    pub fn state_count(&self) -> usize {
        self.n_cells as usize * (self.v_max as usize + 1)
    }

    pub fn state_index(&self, agent: AgentState) -> usize {
        (agent.cell as usize - 1) * (self.v_max as usize + 1) + agent.speed as usize
    }

    pub fn all_agents(&self) -> impl Iterator<Item = AgentState> + '_ {
        (1..=self.n_cells)
            .flat_map(move |cell| (0..=self.v_max).map(move |speed| AgentState::new(cell, speed)))
    }

    /// States a stopping plan may pass through: short of the crosswalk and
    /// not at rest before the stop line.
    fn stop_path_allowed(&self, s: AgentState) -> bool {
        let k = self.crosswalk_cell;
        s.cell < k && !(s.speed == 0 && s.cell + 1 < k)
    }
}

/// Whether the car can still come to rest exactly at cell `k - 1`.
///
/// Breadth-first search over the deterministic transition graph; no state on
/// the way may be at rest before `k - 1` or at/after the crosswalk.
pub fn stop_feasible(agent: AgentState, cfg: &ScenarioConfig) -> bool {
    let target = cfg.stop_target();
    if agent == target {
        return true;
    }
    if agent.cell >= cfg.crosswalk_cell {
        return false;
    }
    let mut seen = vec![false; cfg.state_count()];
    seen[cfg.state_index(agent)] = true;
    let mut queue = VecDeque::from([agent]);
    while let Some(s) = queue.pop_front() {
        for a in Accel::ALL {
            let next = cfg.step(s, a);
            if next == target {
                return true;
            }
            let idx = cfg.state_index(next);
            if cfg.stop_path_allowed(next) && !seen[idx] {
                seen[idx] = true;
                queue.push_back(next);
            }
        }
    }
    false
}

/// A deterministic closed-loop policy.
pub trait Policy {
    fn accel(&self, agent: AgentState, obs: &Observation) -> Accel;
}

/// Stopping controller that satisfies all three requirements whenever its
/// observations are truthful.
///
/// * Pedestrian observed: keep a stop at `k - 1` reachable, preferring to
///   decelerate, then hold, then accelerate. If no plan exists, brake.
/// * No pedestrian: accelerate towards the cruise speed, never coming to
///   rest before the crosswalk.
/// * At or past the crosswalk, or resting at `k - 1`: hold.
#[derive(Debug, Clone)]
pub struct Controller {
    cfg: ScenarioConfig,
    pedestrian: usize,
    feasible: Vec<bool>,
}

impl Controller {
    pub fn new(cfg: &ScenarioConfig, pedestrian: usize) -> Self {
        let mut feasible = vec![false; cfg.state_count()];
        for agent in cfg.all_agents() {
            feasible[cfg.state_index(agent)] = stop_feasible(agent, cfg);
        }
        Controller {
            cfg: cfg.clone(),
            pedestrian,
            feasible,
        }
    }

    /// Controller for a class set containing [`PEDESTRIAN`].
    pub fn for_classes(cfg: &ScenarioConfig, classes: &ClassSet) -> Result<Self> {
        let ped = classes
            .index_of(PEDESTRIAN)
            .ok_or_else(|| Error::UnknownLabel(PEDESTRIAN.into()))?;
        Ok(Self::new(cfg, ped))
    }

    pub fn stop_feasible(&self, agent: AgentState) -> bool {
        self.feasible[self.cfg.state_index(agent)]
    }

    fn keeps_stop_reachable(&self, next: AgentState) -> bool {
        next == self.cfg.stop_target()
            || (self.cfg.stop_path_allowed(next) && self.stop_feasible(next))
    }
}

impl Policy for Controller {
    fn accel(&self, agent: AgentState, obs: &Observation) -> Accel {
        let k = self.cfg.crosswalk_cell;
        if agent.cell >= k || agent == self.cfg.stop_target() {
            return Accel::Hold;
        }
        if obs.contains(self.pedestrian) {
            return Accel::ALL
                .into_iter()
                .find(|&a| self.keeps_stop_reachable(self.cfg.step(agent, a)))
                .unwrap_or(Accel::Decelerate);
        }
        let a = if agent.speed < self.cfg.cruise_speed {
            Accel::Accelerate
        } else {
            Accel::Hold
        };
        let next = self.cfg.step(agent, a);
        if next.speed == 0 && next.cell < k {
            Accel::Accelerate
        } else {
            a
        }
    }
}
