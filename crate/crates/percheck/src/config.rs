//! JSON run configuration.
//!
//! ```json
//! {
//!   "n_cells": 8, "crosswalk_cell": 6, "v_max": 1, "cell_length_m": 5.0,
//!   "v0": 1, "mode": "class", "band_edges_m": [10, 20, 30],
//!   "env": ["ped"], "cm_path": "../fixtures/cam_front_class.cm",
//!   "zero_column_fallback": false
//! }
//! ```
//!
//! Optional keys: `distance_parametrized` (default true; false aggregates
//! the bands), `cruise_speed` (default `v_max`), `spec`, `trials`, `seed`,
//! `iou_threshold`, and a `sweep` object. Relative paths are resolved
//! against the directory of the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use percheck_core::cm::{aggregate, CmMode, DistanceBands, DistanceParamCm, ZeroColumnPolicy};
use percheck_core::detection::DEFAULT_IOU_THRESHOLD;
use percheck_core::model::{EnvState, ScenarioConfig};
use percheck_core::{PerceptionModel, SafetySpec, SweepGrid, Variant};

use crate::error::{CliError, Result};
use crate::fixture::{self, CmFile};

pub const DEFAULT_TRIALS: u64 = 100_000;
pub const DEFAULT_SEED: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub n_cells: Option<u32>,
    pub crosswalk_cell: Option<u32>,
    pub v_max: Option<u32>,
    pub cell_length_m: Option<f64>,
    pub v0: Option<u32>,
    pub mode: Option<String>,
    pub band_edges_m: Option<Vec<f64>>,
    pub env: Option<Vec<String>>,
    pub cm_path: Option<PathBuf>,
    pub zero_column_fallback: Option<bool>,
    pub distance_parametrized: Option<bool>,
    pub cruise_speed: Option<u32>,
    pub spec: Option<String>,
    pub trials: Option<u64>,
    pub seed: Option<u64>,
    pub iou_threshold: Option<f64>,
    pub sweep: Option<RawSweep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSweep {
    pub variants: Option<Vec<String>>,
    pub envs: Vec<Vec<String>>,
    pub v_max: Vec<u32>,
    pub spec: Option<String>,
    pub class_cm_path: PathBuf,
    pub prop_cm_path: PathBuf,
}

/// A validated configuration with fixtures loaded.
#[derive(Debug, Clone)]
pub struct Config {
    pub path: PathBuf,
    pub scenario: ScenarioConfig,
    pub cm_path: PathBuf,
    pub cm: CmFile,
    pub distance_parametrized: bool,
    pub zero_column: ZeroColumnPolicy,
    pub env_names: Vec<String>,
    pub spec: SafetySpec,
    pub trials: u64,
    pub seed: u64,
    pub iou_threshold: f64,
    pub sweep: Option<SweepSetup>,
}

#[derive(Debug, Clone)]
pub struct SweepSetup {
    pub grid: SweepGrid,
    pub class_cm_path: PathBuf,
    pub prop_cm_path: PathBuf,
    pub class_cm: DistanceParamCm,
    pub prop_cm: DistanceParamCm,
}

impl Config {
    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text, path)
    }

    /// Parses and validates; `path` locates relative fixture paths.
    pub fn from_json(text: &str, path: &Path) -> Result<Config> {
        let raw: RawConfig = serde_json::from_str(text).map_err(|e| {
            CliError::Parse {
                line: e.line(),
                msg: e.to_string(),
            }
            .in_file(path)
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        resolve(raw, path, base)
    }

    pub fn perception_model(&self) -> Result<PerceptionModel> {
        let dp = self.cm.clone().into_distance_param()?;
        Ok(if self.distance_parametrized {
            PerceptionModel::banded(&dp, self.zero_column)
        } else {
            PerceptionModel::aggregated(aggregate(&dp)?, self.zero_column)
        })
    }
}

/// Collects every problem before failing, so one run lists all offending
/// keys.
#[derive(Default)]
struct Problems(Vec<String>);

impl Problems {
    fn push(&mut self, key: &str, msg: impl std::fmt::Display) {
        self.0.push(format!("`{key}`: {msg}"));
    }

    fn require<T: Clone>(&mut self, key: &str, v: &Option<T>) -> Option<T> {
        if v.is_none() {
            self.push(key, "missing");
        }
        v.clone()
    }
}

fn resolve_path(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn resolve(raw: RawConfig, path: &Path, base: &Path) -> Result<Config> {
    let mut bad = Problems::default();
    let n_cells = bad.require("n_cells", &raw.n_cells);
    let crosswalk_cell = bad.require("crosswalk_cell", &raw.crosswalk_cell);
    let v_max = bad.require("v_max", &raw.v_max);
    let cell_length_m = bad.require("cell_length_m", &raw.cell_length_m);
    let v0 = bad.require("v0", &raw.v0);
    let mode_name = bad.require("mode", &raw.mode);
    let edges = bad.require("band_edges_m", &raw.band_edges_m);
    let env_names = bad.require("env", &raw.env);
    let cm_path = bad.require("cm_path", &raw.cm_path).map(|p| resolve_path(base, &p));

    if let (Some(n), Some(k)) = (n_cells, crosswalk_cell) {
        if n < 3 {
            bad.push("n_cells", format!("{n} must be at least 3"));
        }
        if k < 3 || k > n {
            bad.push("crosswalk_cell", format!("{k} must lie in [3, n_cells = {n}]"));
        }
    }
    if let Some(vm) = v_max {
        if vm < 1 {
            bad.push("v_max", "must be at least 1");
        }
        if let Some(v0) = v0 {
            if v0 < 1 || v0 > vm {
                bad.push("v0", format!("{v0} must lie in [1, v_max = {vm}]"));
            }
        }
        if let Some(c) = raw.cruise_speed {
            if c < 1 || c > vm {
                bad.push("cruise_speed", format!("{c} must lie in [1, v_max = {vm}]"));
            }
        }
    }
    if let Some(len) = cell_length_m {
        if !(len.is_finite() && len > 0.0) {
            bad.push("cell_length_m", format!("{len} must be positive"));
        }
    }
    let mode = mode_name.and_then(|m| match m.parse::<CmMode>() {
        Ok(mode) => Some(mode),
        Err(_) => {
            bad.push("mode", format!("`{m}` is not `class` or `prop`"));
            None
        }
    });
    let bands = edges.and_then(|e| match DistanceBands::new(e) {
        Ok(b) => Some(b),
        Err(err) => {
            bad.push("band_edges_m", err);
            None
        }
    });
    let spec = match raw.spec.as_deref().unwrap_or("phi_all").parse::<SafetySpec>() {
        Ok(s) => s,
        Err(e) => {
            bad.push("spec", e);
            SafetySpec::All
        }
    };
    let iou_threshold = raw.iou_threshold.unwrap_or(DEFAULT_IOU_THRESHOLD);
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        bad.push("iou_threshold", format!("{iou_threshold} must lie in (0, 1]"));
    }
    let trials = raw.trials.unwrap_or(DEFAULT_TRIALS);
    if trials == 0 {
        bad.push("trials", "must be at least 1");
    }

    let cm = cm_path.as_ref().and_then(|p| match fixture::load(p) {
        Ok(cm) => Some(cm),
        Err(e) => {
            bad.push("cm_path", e);
            None
        }
    });
    let distance_parametrized = raw.distance_parametrized.unwrap_or(true);
    let mut env = None;
    if let Some(cm) = &cm {
        if let Some(mode) = mode {
            if cm.mode() != mode {
                bad.push(
                    "mode",
                    format!("`{}` but the fixture is {}-labeled", mode.as_str(), cm.mode().as_str()),
                );
            }
        }
        match (&cm.bands, &bands) {
            (Some(fb), Some(b)) if fb != b => bad.push(
                "band_edges_m",
                format!("{:?} differ from the fixture's {:?}", b.edges(), fb.edges()),
            ),
            (None, _) => bad.push("cm_path", "fixture has no `bands:` line"),
            _ => {}
        }
        if let Some(names) = &env_names {
            match EnvState::from_names(cm.matrices[0].classes(), names) {
                Ok(e) => env = Some(e),
                Err(e) => bad.push("env", e),
            }
        }
    }

    let sweep = raw.sweep.as_ref().and_then(|s| match resolve_sweep(s, base) {
        Ok(setup) => Some(setup),
        Err(msgs) => {
            for (key, msg) in msgs {
                bad.push(&format!("sweep.{key}"), msg);
            }
            None
        }
    });
    if let (Some(s), Some(cm)) = (&sweep, &cm) {
        if let Some(b) = &cm.bands {
            if s.class_cm.bands() != b || s.prop_cm.bands() != b {
                bad.push("sweep", "sweep fixtures must use the same bands as `cm_path`");
            }
        }
    }

    if !bad.0.is_empty() {
        return Err(CliError::validation(format!(
            "{}: {}",
            path.display(),
            bad.0.join("; ")
        )));
    }
    let zero_column = if raw.zero_column_fallback.unwrap_or(false) {
        ZeroColumnPolicy::EmptyFallback
    } else {
        ZeroColumnPolicy::Strict
    };
    let sweep = sweep.map(|mut s| {
        s.grid.zero_column = zero_column;
        s
    });
    let v_max = v_max.unwrap();
    let scenario = ScenarioConfig {
        n_cells: n_cells.unwrap(),
        crosswalk_cell: crosswalk_cell.unwrap(),
        v_max,
        cell_length_m: cell_length_m.unwrap(),
        v0: v0.unwrap(),
        mode: mode.unwrap(),
        bands: bands.unwrap(),
        env: env.unwrap(),
        cruise_speed: raw.cruise_speed.unwrap_or(v_max),
    };
    scenario.validate()?;
    Ok(Config {
        path: path.to_path_buf(),
        scenario,
        cm_path: cm_path.unwrap(),
        cm: cm.unwrap(),
        distance_parametrized,
        zero_column,
        env_names: env_names.unwrap(),
        spec,
        trials,
        seed: raw.seed.unwrap_or(DEFAULT_SEED),
        iou_threshold,
        sweep,
    })
}

fn resolve_sweep(
    raw: &RawSweep,
    base: &Path,
) -> std::result::Result<SweepSetup, Vec<(&'static str, String)>> {
    let mut bad = Vec::new();
    let variants = match &raw.variants {
        None => Variant::ALL.to_vec(),
        Some(names) => names
            .iter()
            .filter_map(|n| match n.parse::<Variant>() {
                Ok(v) => Some(v),
                Err(e) => {
                    bad.push(("variants", e.to_string()));
                    None
                }
            })
            .collect(),
    };
    if variants.is_empty() && raw.variants.is_some() && bad.is_empty() {
        bad.push(("variants", "empty".to_string()));
    }
    if raw.envs.is_empty() {
        bad.push(("envs", "empty".to_string()));
    }
    if raw.v_max.is_empty() || raw.v_max.contains(&0) {
        bad.push(("v_max", "must be a non-empty list of positive speeds".to_string()));
    }
    let spec = match raw.spec.as_deref().unwrap_or("phi_all").parse::<SafetySpec>() {
        Ok(s) => s,
        Err(e) => {
            bad.push(("spec", e.to_string()));
            SafetySpec::All
        }
    };
    let class_cm_path = resolve_path(base, &raw.class_cm_path);
    let prop_cm_path = resolve_path(base, &raw.prop_cm_path);
    let load = |p: &Path, mode: CmMode, key: &'static str, bad: &mut Vec<(&'static str, String)>| {
        let dp = fixture::load(p).and_then(CmFile::into_distance_param);
        match dp {
            Ok(dp) if dp.mode() == mode => Some(dp),
            Ok(_) => {
                bad.push((key, format!("{} is not {}-labeled", p.display(), mode.as_str())));
                None
            }
            Err(e) => {
                bad.push((key, e.to_string()));
                None
            }
        }
    };
    let class_cm = load(&class_cm_path, CmMode::Class, "class_cm_path", &mut bad);
    let prop_cm = load(&prop_cm_path, CmMode::Prop, "prop_cm_path", &mut bad);
    if let (Some(c), Some(p)) = (&class_cm, &prop_cm) {
        if c.classes() != p.classes() {
            bad.push(("prop_cm_path", "class sets of the two fixtures differ".to_string()));
        }
        for names in &raw.envs {
            if let Err(e) = EnvState::from_names(c.classes(), names) {
                bad.push(("envs", e.to_string()));
            }
        }
    }
    if !bad.is_empty() {
        return Err(bad);
    }
    Ok(SweepSetup {
        grid: SweepGrid {
            variants,
            envs: raw.envs.clone(),
            v_max: raw.v_max.clone(),
            spec,
            // Replaced by the top-level `zero_column_fallback`.
            zero_column: ZeroColumnPolicy::Strict,
        },
        class_cm_path,
        prop_cm_path,
        class_cm: class_cm.unwrap(),
        prop_cm: prop_cm.unwrap(),
    })
}
