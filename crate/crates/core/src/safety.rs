//! Safety requirements and the probability of never violating them.
//!
//! All requirements are invariants `always not bad`, so the probability of
//! satisfying one from the initial state is one minus the probability of
//! ever reaching a bad state:
//!
//! 1. make bad states absorbing;
//! 2. find every state that cannot reach a bad state (probability 0);
//! 3. solve `x = A x + b` over the remaining states, where `A` restricts the
//!    transition matrix to them and `b` is the one-step mass into bad states.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::chain::{Dtmc, MarkovChain, STOCHASTIC_TOL};
use crate::model::AgentState;
use crate::{Error, Result};

/// Systems above this many unknowns are solved iteratively.
pub const GAUSS_LIMIT: usize = 2000;
/// Convergence threshold of value iteration (max-norm update).
pub const VALUE_ITERATION_TOL: f64 = 1e-12;
const VALUE_ITERATION_MAX_STEPS: usize = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SafetySpec {
    /// No pedestrian: never rest at the stop line.
    Phi1,
    /// Pedestrian: never reach the stop line or beyond except at rest there.
    Phi2,
    /// Never rest before the stop line (cells `1..=k-2`).
    Phi3,
    /// Conjunction of the requirements that apply to the environment.
    All,
}

impl SafetySpec {
    pub const COMPONENTS: [SafetySpec; 3] = [SafetySpec::Phi1, SafetySpec::Phi2, SafetySpec::Phi3];

    pub fn name(self) -> &'static str {
        match self {
            SafetySpec::Phi1 => "phi1",
            SafetySpec::Phi2 => "phi2",
            SafetySpec::Phi3 => "phi3",
            SafetySpec::All => "phi_all",
        }
    }

    /// Whether the requirement constrains runs in this environment.
    pub fn applies(self, ped_env: bool) -> bool {
        match self {
            SafetySpec::Phi1 => !ped_env,
            SafetySpec::Phi2 => ped_env,
            SafetySpec::Phi3 | SafetySpec::All => true,
        }
    }
}

impl fmt::Display for SafetySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl core::str::FromStr for SafetySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "phi1" => Ok(SafetySpec::Phi1),
            "phi2" => Ok(SafetySpec::Phi2),
            "phi3" => Ok(SafetySpec::Phi3),
            "phi_all" | "all" => Ok(SafetySpec::All),
            other => Err(Error::InvalidArgument(alloc::format!(
                "unknown requirement `{other}`"
            ))),
        }
    }
}

/// Bad-state predicate; depends only on the car state, whether a pedestrian
/// is present, and the crosswalk cell `k`.
pub fn is_bad(agent: AgentState, ped_env: bool, crosswalk_cell: u32, spec: SafetySpec) -> bool {
    let k = crosswalk_cell;
    let at_stop_line = agent.cell + 1 == k && agent.speed == 0;
    match spec {
        SafetySpec::Phi1 => !ped_env && at_stop_line,
        SafetySpec::Phi2 => ped_env && agent.cell + 1 >= k && !at_stop_line,
        SafetySpec::Phi3 => agent.speed == 0 && agent.cell + 2 <= k,
        SafetySpec::All => SafetySpec::COMPONENTS
            .iter()
            .any(|&s| is_bad(agent, ped_env, k, s)),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BadSet {
    pub states: Vec<usize>,
    /// The requirement does not apply to this chain's environment; the set
    /// is empty.
    pub guard_mismatch: bool,
}

pub fn bad_states(chain: &MarkovChain, spec: SafetySpec) -> BadSet {
    if !spec.applies(chain.ped_env()) {
        return BadSet {
            states: Vec::new(),
            guard_mismatch: true,
        };
    }
    let states = (0..chain.len())
        .filter(|&i| is_bad(chain.agent(i), chain.ped_env(), chain.crosswalk_cell(), spec))
        .collect();
    BadSet {
        states,
        guard_mismatch: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Solver {
    /// Gaussian elimination up to [`GAUSS_LIMIT`] unknowns, value iteration
    /// beyond.
    #[default]
    Auto,
    Gauss,
    ValueIteration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SatisfactionResult {
    /// Probability of never visiting a bad state, clamped to `[0, 1]`.
    pub probability: f64,
    /// Max-norm residual of the linear system (0 when nothing was solved).
    pub residual: f64,
    pub transient: usize,
    pub absorbing: usize,
    /// Unknowns of the linear system after the graph precomputation.
    pub unknowns: usize,
}

/// Probability of never reaching `bad` from the initial state.
pub fn prob_safe(dtmc: &Dtmc, bad: &[usize]) -> Result<SatisfactionResult> {
    prob_safe_with(dtmc, bad, Solver::Auto)
}

pub fn prob_safe_with(dtmc: &Dtmc, bad: &[usize], solver: Solver) -> Result<SatisfactionResult> {
    let (reach, residual, unknowns) = reach_probabilities(dtmc, bad, solver)?;
    let n = dtmc.len();
    let mut is_bad = vec![false; n];
    for &b in bad {
        is_bad[b] = true;
    }
    let absorbing = (0..n)
        .filter(|&s| is_bad[s] || dtmc.is_absorbing(s))
        .count();
    Ok(SatisfactionResult {
        probability: (1.0 - reach[dtmc.init()]).clamp(0.0, 1.0),
        residual,
        transient: n - absorbing,
        absorbing,
        unknowns,
    })
}

/// Probability of eventually reaching `bad`, for every state. Also returns
/// the residual and the number of unknowns solved for.
pub fn reach_probabilities(
    dtmc: &Dtmc,
    bad: &[usize],
    solver: Solver,
) -> Result<(Vec<f64>, f64, usize)> {
    dtmc.check_stochastic(STOCHASTIC_TOL)?;
    let n = dtmc.len();
    let mut is_bad = vec![false; n];
    for &b in bad {
        if b >= n {
            return Err(Error::StateOutOfRange(b));
        }
        is_bad[b] = true;
    }

    // Backward search: states with a positive-probability path into `bad`.
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (s, row) in dtmc.rows().iter().enumerate() {
        if is_bad[s] {
            continue;
        }
        for &(t, p) in row {
            if p > 0.0 {
                preds[t].push(s);
            }
        }
    }
    let mut can_reach = is_bad.clone();
    let mut stack: Vec<usize> = bad.to_vec();
    while let Some(t) = stack.pop() {
        for &s in &preds[t] {
            if !can_reach[s] {
                can_reach[s] = true;
                stack.push(s);
            }
        }
    }

    let unknown: Vec<usize> = (0..n).filter(|&s| can_reach[s] && !is_bad[s]).collect();
    let mut slot = vec![usize::MAX; n];
    for (i, &s) in unknown.iter().enumerate() {
        slot[s] = i;
    }
    let system = System::assemble(dtmc, &unknown, &slot, &is_bad);

    let use_gauss = match solver {
        Solver::Gauss => true,
        Solver::ValueIteration => false,
        Solver::Auto => unknown.len() <= GAUSS_LIMIT,
    };
    let x = if use_gauss {
        system.solve_gauss()?
    } else {
        system.solve_value_iteration()
    };
    let residual = system.residual(&x);

    let mut reach = vec![0.0; n];
    for s in 0..n {
        if is_bad[s] {
            reach[s] = 1.0;
        } else if slot[s] != usize::MAX {
            reach[s] = x[slot[s]];
        }
    }
    Ok((reach, residual, unknown.len()))
}

/// `x = A x + b` restricted to the unknown states.
struct System {
    a: Vec<Vec<(usize, f64)>>,
    b: Vec<f64>,
}

impl System {
    fn assemble(dtmc: &Dtmc, unknown: &[usize], slot: &[usize], is_bad: &[bool]) -> Self {
        let mut a = Vec::with_capacity(unknown.len());
        let mut b = Vec::with_capacity(unknown.len());
        for &s in unknown {
            let mut row = Vec::new();
            let mut to_bad = 0.0;
            for &(t, p) in dtmc.row(s) {
                if is_bad[t] {
                    to_bad += p;
                } else if slot[t] != usize::MAX {
                    row.push((slot[t], p));
                }
            }
            a.push(row);
            b.push(to_bad);
        }
        System { a, b }
    }

    fn len(&self) -> usize {
        self.b.len()
    }

    /// Dense Gaussian elimination with partial pivoting on `(I - A) x = b`.
    fn solve_gauss(&self) -> Result<Vec<f64>> {
        let n = self.len();
        let w = n + 1;
        let mut m = vec![0.0; n * w];
        for i in 0..n {
            m[i * w + i] = 1.0;
            for &(j, p) in &self.a[i] {
                m[i * w + j] -= p;
            }
            m[i * w + n] = self.b[i];
        }
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&r, &s| m[r * w + col].abs().total_cmp(&m[s * w + col].abs()))
                .expect("non-empty pivot range");
            if m[pivot * w + col].abs() < f64::MIN_POSITIVE {
                return Err(Error::Singular {
                    residual: f64::INFINITY,
                });
            }
            if pivot != col {
                for c in 0..w {
                    m.swap(pivot * w + c, col * w + c);
                }
            }
            let diag = m[col * w + col];
            for r in col + 1..n {
                let factor = m[r * w + col] / diag;
                if factor == 0.0 {
                    continue;
                }
                for c in col..w {
                    m[r * w + c] -= factor * m[col * w + c];
                }
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut acc = m[i * w + n];
            for j in i + 1..n {
                acc -= m[i * w + j] * x[j];
            }
            x[i] = acc / m[i * w + i];
        }
        let residual = self.residual(&x);
        if !residual.is_finite() {
            return Err(Error::Singular { residual });
        }
        Ok(x)
    }

    fn solve_value_iteration(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.len()];
        let mut next = x.clone();
        for _ in 0..VALUE_ITERATION_MAX_STEPS {
            let mut delta: f64 = 0.0;
            for (i, row) in self.a.iter().enumerate() {
                let v = self.b[i] + row.iter().map(|&(j, p)| p * x[j]).sum::<f64>();
                delta = delta.max((v - x[i]).abs());
                next[i] = v;
            }
            core::mem::swap(&mut x, &mut next);
            if delta < VALUE_ITERATION_TOL {
                break;
            }
        }
        x
    }

    fn residual(&self, x: &[f64]) -> f64 {
        self.a
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let ax: f64 = row.iter().map(|&(j, p)| p * x[j]).sum();
                (x[i] - ax - self.b[i]).abs()
            })
            .fold(0.0, f64::max)
    }
}
