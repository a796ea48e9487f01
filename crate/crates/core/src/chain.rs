//! Explicit-state DTMC of the closed loop.
//!
//! Every step the true environment is observed through the confusion matrix
//! of the band that contains the car's distance to the crosswalk; the
//! controller reacts to the observation and the dynamics move the car.
//! Observations are drawn independently per step, so the transition
//! probability from `s1` to `s2` is the total detection probability of all
//! observations that steer the controller from `s1` to `s2`.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::vec;
use alloc::vec::Vec;

use crate::cm::{
    band_for_distance, normalize_column, ClassSet, CmMode, ColumnDistribution, ConfusionMatrix,
    DistanceBands, DistanceParamCm, ZeroColumnPolicy,
};
use crate::model::{
    observation_space, observed_slots, AgentState, PEDESTRIAN, EnvState, Observation, Policy, ScenarioConfig,
    SystemState,
};
use crate::safety::{is_bad, SafetySpec};
use crate::{Error, Result};

/// Slack allowed on row sums.
pub const STOCHASTIC_TOL: f64 = 1e-9;

/// Column-normalized detection probabilities, either one matrix per distance
/// band or a single matrix used at every distance.
#[derive(Debug, Clone)]
pub struct PerceptionModel {
    bands: Option<DistanceBands>,
    matrices: Vec<ConfusionMatrix>,
    policy: ZeroColumnPolicy,
}

impl PerceptionModel {
    pub fn banded(dp: &DistanceParamCm, policy: ZeroColumnPolicy) -> Self {
        PerceptionModel {
            bands: Some(dp.bands().clone()),
            matrices: dp.per_band().to_vec(),
            policy,
        }
    }

    pub fn aggregated(cm: ConfusionMatrix, policy: ZeroColumnPolicy) -> Self {
        PerceptionModel {
            bands: None,
            matrices: vec![cm],
            policy,
        }
    }

    pub fn mode(&self) -> CmMode {
        self.matrices[0].mode()
    }

    pub fn classes(&self) -> &ClassSet {
        self.matrices[0].classes()
    }

    pub fn bands(&self) -> Option<&DistanceBands> {
        self.bands.as_ref()
    }

    pub fn matrix(&self, band: usize) -> &ConfusionMatrix {
        &self.matrices[band]
    }

    /// Band whose matrix governs observations made from `agent`.
    pub fn band_for(&self, agent: AgentState, cfg: &ScenarioConfig) -> usize {
        match &self.bands {
            Some(bands) => relevant_band_in(bands, agent, cfg),
            None => 0,
        }
    }

    pub fn column(&self, band: usize, truth: usize) -> Result<ColumnDistribution> {
        normalize_column(&self.matrices[band], truth, self.policy)
    }

    /// Distribution over all observations of `env` at `band`, in the
    /// canonical order of [`observation_space`]. Zero-probability outcomes
    /// are kept.
    pub fn observation_distribution(
        &self,
        band: usize,
        env: &EnvState,
    ) -> Result<Vec<(Observation, f64)>> {
        let cm = &self.matrices[band];
        let n = cm.classes().len();
        let outcomes = observation_space(cm.mode(), env, n);
        match cm.mode() {
            CmMode::Prop => {
                let col = self.column(band, cm.prop_index(env.props()))?;
                Ok(outcomes
                    .into_iter()
                    .enumerate()
                    .map(|(i, o)| (o, col.prob(i)))
                    .collect())
            }
            CmMode::Class => {
                let columns = observed_slots(env, n)
                    .into_iter()
                    .map(|truth| self.column(band, truth))
                    .collect::<Result<Vec<_>>>()?;
                Ok(outcomes
                    .into_iter()
                    .map(|o| {
                        let p = match &o {
                            Observation::Class(tuple) => tuple
                                .iter()
                                .zip(&columns)
                                .map(|(&pred, col)| col.prob(pred))
                                .product(),
                            Observation::Prop(_) => unreachable!(),
                        };
                        (o, p)
                    })
                    .collect())
            }
        }
    }

    fn check_against(&self, cfg: &ScenarioConfig) -> Result<()> {
        if self.mode() != cfg.mode {
            return Err(Error::ModeMismatch {
                expected: cfg.mode.as_str(),
                found: self.mode().as_str(),
            });
        }
        if let Some(bands) = &self.bands {
            if bands != &cfg.bands {
                return Err(Error::InvalidBands(
                    "confusion matrix bands differ from the scenario bands".into(),
                ));
            }
        }
        if let Some(&c) = cfg.env.objects.iter().find(|&&c| c >= self.classes().len()) {
            return Err(Error::InvalidScenario(alloc::format!(
                "environment class index {c} is outside the class set"
            )));
        }
        Ok(())
    }
}

/// Band of the ego-to-crosswalk distance; at or past the crosswalk the
/// nearest band applies.
pub fn relevant_band(agent: AgentState, cfg: &ScenarioConfig) -> usize {
    relevant_band_in(&cfg.bands, agent, cfg)
}

fn relevant_band_in(bands: &DistanceBands, agent: AgentState, cfg: &ScenarioConfig) -> usize {
    if agent.cell >= cfg.crosswalk_cell {
        return 0;
    }
    let cells = (cfg.crosswalk_cell - agent.cell).max(1);
    band_for_distance(bands, cells as f64 * cfg.cell_length_m)
        .expect("positive cell length gives a positive distance")
}

/// Successor distribution of `agent` under `policy`, merged per successor
/// and sorted by successor. Zero-mass successors are dropped.
pub fn successors(
    agent: AgentState,
    cfg: &ScenarioConfig,
    model: &PerceptionModel,
    policy: &dyn Policy,
) -> Result<Vec<(AgentState, f64)>> {
    let band = model.band_for(agent, cfg);
    let mut acc: BTreeMap<AgentState, f64> = BTreeMap::new();
    for (obs, p) in model.observation_distribution(band, &cfg.env)? {
        if p == 0.0 {
            continue;
        }
        let next = cfg.step(agent, policy.accel(agent, &obs));
        *acc.entry(next).or_insert(0.0) += p;
    }
    Ok(acc.into_iter().collect())
}

fn transition_prob(
    s1: &SystemState,
    s2: &SystemState,
    model: &PerceptionModel,
    cfg: &ScenarioConfig,
    policy: &dyn Policy,
    mode: CmMode,
) -> Result<f64> {
    if model.mode() != mode {
        return Err(Error::ModeMismatch {
            expected: mode.as_str(),
            found: model.mode().as_str(),
        });
    }
    if s1.env != s2.env {
        return Ok(0.0);
    }
    let band = model.band_for(s1.agent, cfg);
    let mut total = 0.0;
    for (obs, p) in model.observation_distribution(band, &s1.env)? {
        if cfg.step(s1.agent, policy.accel(s1.agent, &obs)) == s2.agent {
            total += p;
        }
    }
    Ok(total)
}

/// Transition probability under a proposition-labeled model: the summed
/// probability of every reported proposition set that leads from `s1` to
/// `s2`.
pub fn transition_prob_prop(
    s1: &SystemState,
    s2: &SystemState,
    model: &PerceptionModel,
    cfg: &ScenarioConfig,
    policy: &dyn Policy,
) -> Result<f64> {
    transition_prob(s1, s2, model, cfg, policy, CmMode::Prop)
}

/// Transition probability under a class-labeled model. Objects are detected
/// independently, so each observation tuple weighs the product of its
/// per-object detection probabilities.
pub fn transition_prob_class(
    s1: &SystemState,
    s2: &SystemState,
    model: &PerceptionModel,
    cfg: &ScenarioConfig,
    policy: &dyn Policy,
) -> Result<f64> {
    transition_prob(s1, s2, model, cfg, policy, CmMode::Class)
}

/// Atomic propositions attached to chain states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct StateLabels(u8);

impl StateLabels {
    pub const INIT: StateLabels = StateLabels(1);
    /// Violates the combined requirement for the chain's environment.
    pub const BAD: StateLabels = StateLabels(1 << 1);
    pub const STOPPED_AT_CW: StateLabels = StateLabels(1 << 2);
    pub const PED_ENV: StateLabels = StateLabels(1 << 3);
    pub const PAST_CW: StateLabels = StateLabels(1 << 4);
    pub const STOPPED_EARLY: StateLabels = StateLabels(1 << 5);

    pub const NAMED: [(StateLabels, &'static str); 6] = [
        (Self::INIT, "init"),
        (Self::BAD, "bad"),
        (Self::STOPPED_AT_CW, "stopped_at_cw"),
        (Self::PED_ENV, "ped_env"),
        (Self::PAST_CW, "past_cw"),
        (Self::STOPPED_EARLY, "stopped_early"),
    ];

    pub fn empty() -> Self {
        StateLabels(0)
    }

    pub fn contains(self, other: StateLabels) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn insert(&mut self, other: StateLabels) {
        self.0 |= other.0;
    }

    pub fn from_name(name: &str) -> Option<StateLabels> {
        Self::NAMED
            .iter()
            .find(|(_, n)| *n == name)
            .map(|(l, _)| *l)
    }

    pub fn names(self) -> impl Iterator<Item = &'static str> {
        Self::NAMED
            .into_iter()
            .filter(move |(l, _)| self.contains(*l))
            .map(|(_, n)| n)
    }

    pub fn for_state(agent: AgentState, ped_env: bool, crosswalk_cell: u32) -> Self {
        let k = crosswalk_cell;
        let mut l = StateLabels::empty();
        if agent.cell + 1 == k && agent.speed == 0 {
            l.insert(Self::STOPPED_AT_CW);
        }
        if ped_env {
            l.insert(Self::PED_ENV);
        }
        if agent.cell >= k {
            l.insert(Self::PAST_CW);
        }
        if agent.speed == 0 && agent.cell + 2 <= k {
            l.insert(Self::STOPPED_EARLY);
        }
        if is_bad(agent, ped_env, k, SafetySpec::All) {
            l.insert(Self::BAD);
        }
        l
    }
}

/// Generic DTMC: sparse rows of `(target, probability)` and a point initial
/// distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Dtmc {
    rows: Vec<Vec<(usize, f64)>>,
    init: usize,
}

impl Dtmc {
    pub fn new(rows: Vec<Vec<(usize, f64)>>, init: usize) -> Result<Self> {
        let n = rows.len();
        if init >= n {
            return Err(Error::StateOutOfRange(init));
        }
        for row in &rows {
            if let Some(&(t, _)) = row.iter().find(|(t, _)| *t >= n) {
                return Err(Error::StateOutOfRange(t));
            }
        }
        Ok(Dtmc { rows, init })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn init(&self) -> usize {
        self.init
    }

    pub fn row(&self, state: usize) -> &[(usize, f64)] {
        &self.rows[state]
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    pub fn transition_count(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn check_stochastic(&self, tol: f64) -> Result<()> {
        for (state, row) in self.rows.iter().enumerate() {
            let sum: f64 = row.iter().map(|(_, p)| p).sum();
            let in_range = row.iter().all(|(_, p)| (0.0..=1.0 + tol).contains(p));
            if !in_range || (sum - 1.0).abs() > tol {
                return Err(Error::NotStochastic { state, sum });
            }
        }
        Ok(())
    }

    pub fn is_absorbing(&self, state: usize) -> bool {
        matches!(self.rows[state][..], [(t, p)] if t == state && p == 1.0)
    }
}

/// The closed-loop chain with its car-level state information.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChain {
    dtmc: Dtmc,
    agents: Vec<AgentState>,
    env: EnvState,
    ped_env: bool,
    crosswalk_cell: u32,
    labels: Vec<StateLabels>,
}

impl MarkovChain {
    /// Assembles a chain from explicit parts; labels are recomputed from the
    /// states.
    pub fn from_parts(
        dtmc: Dtmc,
        agents: Vec<AgentState>,
        env: EnvState,
        ped_env: bool,
        crosswalk_cell: u32,
    ) -> Result<Self> {
        if agents.len() != dtmc.len() {
            return Err(Error::Shape {
                expected: dtmc.len(),
                found: agents.len(),
            });
        }
        let labels = agents
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                let mut l = StateLabels::for_state(a, ped_env, crosswalk_cell);
                if i == dtmc.init() {
                    l.insert(StateLabels::INIT);
                }
                l
            })
            .collect();
        Ok(MarkovChain {
            dtmc,
            agents,
            env,
            ped_env,
            crosswalk_cell,
            labels,
        })
    }

    pub fn dtmc(&self) -> &Dtmc {
        &self.dtmc
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn init(&self) -> usize {
        self.dtmc.init()
    }

    pub fn agent(&self, state: usize) -> AgentState {
        self.agents[state]
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn state(&self, index: usize) -> SystemState {
        SystemState {
            agent: self.agents[index],
            env: self.env.clone(),
        }
    }

    pub fn env(&self) -> &EnvState {
        &self.env
    }

    pub fn ped_env(&self) -> bool {
        self.ped_env
    }

    pub fn crosswalk_cell(&self) -> u32 {
        self.crosswalk_cell
    }

    pub fn labels(&self, state: usize) -> StateLabels {
        self.labels[state]
    }

    pub fn transitions(&self, state: usize) -> &[(usize, f64)] {
        self.dtmc.row(state)
    }

    pub fn index_of(&self, agent: AgentState) -> Option<usize> {
        self.agents.iter().position(|&a| a == agent)
    }
}

fn is_terminal(agent: AgentState, cfg: &ScenarioConfig) -> bool {
    agent.cell == cfg.n_cells || agent == cfg.stop_target()
}

/// Breadth-first construction from `(cell 1, v0)`. States are numbered in
/// discovery order with successors visited in ascending `(cell, speed)`, so
/// the numbering is canonical. Resting at the stop line and reaching the end
/// of the road are absorbing.
pub fn build_chain(
    cfg: &ScenarioConfig,
    model: &PerceptionModel,
    policy: &dyn Policy,
) -> Result<MarkovChain> {
    cfg.validate()?;
    model.check_against(cfg)?;
    let ped_env = cfg
        .env
        .objects
        .iter()
        .any(|&c| model.classes().name(c) == PEDESTRIAN);

    let bound = cfg.state_count();
    let mut index: Vec<Option<usize>> = vec![None; bound];
    let mut agents = Vec::new();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let start = cfg.initial_agent();
    index[cfg.state_index(start)] = Some(0);
    agents.push(start);
    let mut queue = VecDeque::from([0usize]);

    while let Some(i) = queue.pop_front() {
        let agent = agents[i];
        let succ = if is_terminal(agent, cfg) {
            vec![(agent, 1.0)]
        } else {
            successors(agent, cfg, model, policy)?
        };
        let mut row = Vec::with_capacity(succ.len());
        for (next, p) in succ {
            let slot = cfg.state_index(next);
            let j = match index[slot] {
                Some(j) => j,
                None => {
                    if agents.len() >= bound {
                        return Err(Error::StateSpaceBlowup(bound));
                    }
                    agents.push(next);
                    index[slot] = Some(agents.len() - 1);
                    queue.push_back(agents.len() - 1);
                    agents.len() - 1
                }
            };
            row.push((j, p));
        }
        row.sort_by_key(|&(j, _)| j);
        if rows.len() <= i {
            rows.resize(i + 1, Vec::new());
        }
        rows[i] = row;
    }
    rows.resize(agents.len(), Vec::new());

    let dtmc = Dtmc::new(rows, 0)?;
    MarkovChain::from_parts(dtmc, agents, cfg.env.clone(), ped_env, cfg.crosswalk_cell)
}
