//! Subcommand implementations. Each returns the text report for stdout and
//! writes its files (plus a [`RunManifest`]) into the output directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use percheck_core::cm::{ClassSet, CmMode, DistanceBands};
use percheck_core::detection::{build_class_cm, build_prop_cm, DEFAULT_IOU_THRESHOLD};
use percheck_core::model::{stop_feasible, Controller};
use percheck_core::safety::{bad_states, prob_safe, SafetySpec, SatisfactionResult};
use percheck_core::sim::SimEstimate;
use percheck_core::sweep::{chain_for_point, GridPoint};
use percheck_core::{build_chain, MarkovChain, Variant};

use crate::config::Config;
use crate::error::{CliError, Result};
use crate::export::{self, ExportFiles};
use crate::fixture::{self, band_caption, render_table, CmFile};
use crate::ingest;
use crate::manifest::RunManifest;
use crate::parallel;

pub const DEFAULT_CLASSES: &str = "ped,obs";

/// Flags shared by all subcommands.
#[derive(Debug, Clone, Default)]
pub struct Global {
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub verbose: bool,
}

impl Global {
    fn load_config(&self) -> Result<Config> {
        let path = self
            .config
            .as_deref()
            .ok_or_else(|| CliError::validation("this subcommand needs --config"))?;
        Config::load(path)
    }

    fn prepare_out(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out).map_err(|e| CliError::io(&self.out, e))
    }

    fn write(&self, name: &str, text: &str) -> Result<PathBuf> {
        let path = self.out.join(name);
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    fn manifest(&self, subcommand: &str) -> RunManifest {
        RunManifest::new(subcommand, self.config.as_deref(), &self.out)
    }
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

#[derive(Debug, Clone)]
pub struct BuildCmArgs {
    pub gt: PathBuf,
    pub pred: PathBuf,
    pub mode: CmMode,
    /// Band edges; taken from the config when absent.
    pub bands: Option<Vec<f64>>,
    pub classes: String,
    pub iou: Option<f64>,
    /// Output fixture; defaults to `<out>/cm_<mode>.cm`.
    pub output: Option<PathBuf>,
}

pub fn build_cm(g: &Global, args: &BuildCmArgs) -> Result<String> {
    let config = g.config.as_ref().map(|_| g.load_config()).transpose()?;
    let bands = match (&args.bands, &config) {
        (Some(edges), _) => DistanceBands::new(edges.clone())?,
        (None, Some(c)) => c.scenario.bands.clone(),
        (None, None) => return Err(CliError::validation("give --bands or --config")),
    };
    let iou = args
        .iou
        .or(config.as_ref().map(|c| c.iou_threshold))
        .unwrap_or(DEFAULT_IOU_THRESHOLD);
    if !(iou > 0.0 && iou <= 1.0) {
        return Err(CliError::validation(format!("--iou {iou} must lie in (0, 1]")));
    }
    let classes = ClassSet::new(args.classes.split(',').map(str::trim))?;
    let corpus = ingest::load_corpus(&args.gt, &args.pred, &classes)?;
    let dp = match args.mode {
        CmMode::Class => build_class_cm(&corpus, &classes, &bands, iou)?,
        CmMode::Prop => build_prop_cm(&corpus, &classes, &bands, iou)?,
    };

    g.prepare_out()?;
    let output = args
        .output
        .clone()
        .unwrap_or_else(|| g.out.join(format!("cm_{}.cm", args.mode.as_str())));
    let file = CmFile::banded(&dp);
    fixture::save(&output, &file)?;

    let mut report = String::new();
    for (k, cm) in dp.per_band().iter().enumerate() {
        report.push_str(&render_table(cm, &band_caption(Some(dp.bands()), k)));
        report.push('\n');
    }
    writeln!(
        report,
        "{} frames, wrote {}",
        corpus.frames().len(),
        output.display()
    )
    .unwrap();

    let mut m = g.manifest("build-cm");
    m.fixtures = vec![display(&args.gt), display(&args.pred), display(&output)];
    m.write(&g.out)?;
    Ok(report)
}

/// Probability of the initial state of `chain` for one requirement.
fn check(chain: &MarkovChain, spec: SafetySpec) -> Result<(SatisfactionResult, usize, bool)> {
    let bad = bad_states(chain, spec);
    let r = prob_safe(chain.dtmc(), &bad.states)?;
    Ok((r, bad.states.len(), !bad.guard_mismatch))
}

const SPECS: [SafetySpec; 4] = [
    SafetySpec::Phi1,
    SafetySpec::Phi2,
    SafetySpec::Phi3,
    SafetySpec::All,
];

pub fn eval(g: &Global) -> Result<String> {
    let cfg = g.load_config()?;
    let model = cfg.perception_model()?;
    let ctl = Controller::for_classes(&cfg.scenario, model.classes())?;
    let chain = build_chain(&cfg.scenario, &model, &ctl)?;

    let mut csv = String::from("spec,applies,prob,bad_states,states\n");
    let mut report = String::new();
    writeln!(
        report,
        "env {}, v0 {}, v_max {}, {} states, {} transitions",
        cfg.scenario.env.display(model.classes()),
        cfg.scenario.v0,
        cfg.scenario.v_max,
        chain.len(),
        chain.dtmc().transition_count()
    )
    .unwrap();
    if !stop_feasible(cfg.scenario.initial_agent(), &cfg.scenario) {
        report.push_str("note: no stop at the crosswalk is reachable from the initial state\n");
    }
    for spec in SPECS {
        let (r, bad, applies) = check(&chain, spec)?;
        writeln!(csv, "{},{},{},{},{}", spec, applies, r.probability, bad, chain.len()).unwrap();
        if applies {
            writeln!(report, "P({spec}) = {:.10}", r.probability).unwrap();
        } else {
            writeln!(report, "P({spec}) = 1 (does not apply to this environment)").unwrap();
        }
        if g.verbose {
            writeln!(
                report,
                "    {bad} bad states, {} unknowns, residual {:.2e}",
                r.unknowns, r.residual
            )
            .unwrap();
        }
    }
    g.prepare_out()?;
    let path = g.write("eval.csv", &csv)?;
    writeln!(report, "wrote {}", path.display()).unwrap();

    let mut m = g.manifest("eval");
    m.fixtures = vec![display(&cfg.cm_path)];
    m.write(&g.out)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub variant: Variant,
    pub env: String,
    pub v_max: u32,
    pub v0: u32,
    pub feasible: bool,
    pub prob: f64,
    pub states: usize,
    /// Per-requirement probability and bad-state count, in [`SPECS`] order.
    pub per_spec: Vec<(SafetySpec, f64, usize)>,
    pub mc: Option<SimEstimate>,
}

/// Evaluates the sweep grid of `cfg`. With `trials`, each point is also
/// estimated by simulation.
pub fn sweep_points(cfg: &Config, trials: Option<u64>, seed: u64) -> Result<Vec<SweepPoint>> {
    let setup = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::validation(format!("{}: `sweep`: missing", cfg.path.display())))?;
    let grid = &setup.grid;
    let points: Vec<GridPoint> = grid.points(&cfg.scenario, &setup.class_cm)?;
    points
        .par_iter()
        .map(|point| {
            let (chain, model, ctl) =
                chain_for_point(point, &setup.class_cm, &setup.prop_cm, grid.zero_column)?;
            let (r, _, _) = check(&chain, grid.spec)?;
            let per_spec = SPECS
                .iter()
                .map(|&s| check(&chain, s).map(|(r, bad, _)| (s, r.probability, bad)))
                .collect::<Result<Vec<_>>>()?;
            let mc = trials
                .map(|t| parallel::simulate(&point.cfg, &model, &ctl, grid.spec, t, seed))
                .transpose()?;
            Ok(SweepPoint {
                variant: point.variant,
                env: point.env_name.clone(),
                v_max: point.cfg.v_max,
                v0: point.cfg.v0,
                feasible: ctl.stop_feasible(point.cfg.initial_agent()),
                prob: r.probability,
                states: chain.len(),
                per_spec,
                mc,
            })
        })
        .collect()
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let with_mc = points.iter().any(|p| p.mc.is_some());
    let mut csv = String::from("variant,env,v_max,v0,prob");
    if with_mc {
        csv.push_str(",mc_estimate,mc_stderr");
    }
    csv.push('\n');
    for p in points {
        write!(csv, "{},{},{},{},{}", p.variant, p.env, p.v_max, p.v0, p.prob).unwrap();
        if let Some(mc) = &p.mc {
            write!(csv, ",{},{}", mc.estimate, mc.std_error).unwrap();
        }
        csv.push('\n');
    }
    csv
}

fn lookup<'a>(
    points: &'a [SweepPoint],
    variant: Variant,
    env: &str,
    v_max: u32,
    v0: u32,
) -> Option<&'a SweepPoint> {
    points
        .iter()
        .find(|p| p.variant == variant && p.env == env && p.v_max == v_max && p.v0 == v0)
}

/// Qualitative checks over a sweep, restricted to initial speeds from which
/// a stop is reachable.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrendReport {
    /// `(variant, env, v_max, v0)` where the probability rose from `v0 - 1`.
    pub increases: Vec<(Variant, String, u32, u32)>,
    /// `(env, v_max, v0, class variant)` where prop < class.
    pub prop_below_class: Vec<(String, u32, u32, Variant)>,
    /// `(distance variant, env, v_max, ratio)` at `v0 = 1`.
    pub ratios: Vec<(Variant, String, u32, f64)>,
}

pub fn trends(points: &[SweepPoint]) -> TrendReport {
    let mut t = TrendReport::default();
    for p in points.iter().filter(|p| p.feasible && p.v0 > 1) {
        if let Some(prev) = lookup(points, p.variant, &p.env, p.v_max, p.v0 - 1) {
            if prev.feasible && p.prob > prev.prob + 1e-12 {
                t.increases.push((p.variant, p.env.clone(), p.v_max, p.v0));
            }
        }
    }
    let pairs = [
        (Variant::Prop, Variant::Class),
        (Variant::PropDistance, Variant::ClassDistance),
    ];
    for p in points.iter().filter(|p| p.feasible) {
        for (prop, class) in pairs {
            if p.variant != prop {
                continue;
            }
            if let Some(c) = lookup(points, class, &p.env, p.v_max, p.v0) {
                if p.prob + 1e-12 < c.prob {
                    t.prop_below_class.push((p.env.clone(), p.v_max, p.v0, class));
                }
            }
        }
    }
    for p in points.iter().filter(|p| p.v0 == 1 && p.variant.distance_parametrized()) {
        if let Some(agg) = lookup(points, p.variant.counterpart(), &p.env, p.v_max, 1) {
            t.ratios.push((p.variant, p.env.clone(), p.v_max, p.prob / agg.prob));
        }
    }
    t
}

fn sweep_summary(points: &[SweepPoint], verbose: bool) -> String {
    let mut out = String::new();
    let variants: Vec<Variant> = Variant::ALL
        .into_iter()
        .filter(|v| points.iter().any(|p| p.variant == *v))
        .collect();
    write!(out, "{:<6} {:>5} {:>3}", "env", "v_max", "v0").unwrap();
    for v in &variants {
        write!(out, " {:>12}", v.name()).unwrap();
    }
    out.push('\n');
    let mut keys: Vec<(String, u32, u32)> = Vec::new();
    for p in points {
        let key = (p.env.clone(), p.v_max, p.v0);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    for (env, v_max, v0) in &keys {
        write!(out, "{env:<6} {v_max:>5} {v0:>3}").unwrap();
        let mut feasible = true;
        for &v in &variants {
            match lookup(points, v, env, *v_max, *v0) {
                Some(p) => {
                    feasible &= p.feasible;
                    write!(out, " {:>12.6}", p.prob).unwrap();
                }
                None => write!(out, " {:>12}", "-").unwrap(),
            }
        }
        if !feasible {
            out.push_str("  (no stop reachable from v0)");
        }
        out.push('\n');
    }

    let t = trends(points);
    out.push_str("\nmonotonicity in v0 (reachable-stop speeds only): ");
    if t.increases.is_empty() {
        out.push_str("non-increasing everywhere\n");
    } else {
        out.push_str("VIOLATED\n");
        for (v, env, vm, v0) in &t.increases {
            writeln!(out, "  {v} env {env} v_max {vm}: rises at v0 = {v0}").unwrap();
        }
    }
    out.push_str("prop vs class: ");
    if t.prop_below_class.is_empty() {
        out.push_str("prop >= class everywhere\n");
    } else {
        out.push_str("VIOLATED\n");
        for (env, vm, v0, class) in &t.prop_below_class {
            writeln!(out, "  env {env} v_max {vm} v0 {v0}: below {class}").unwrap();
        }
    }
    out.push_str("distance / aggregated ratio at v0 = 1:\n");
    for (v, env, vm, r) in &t.ratios {
        writeln!(out, "  {v} env {env} v_max {vm}: {r:.3}").unwrap();
    }

    let mc: Vec<&SweepPoint> = points.iter().filter(|p| p.mc.is_some()).collect();
    if !mc.is_empty() {
        let worst = mc
            .iter()
            .map(|p| {
                let e = p.mc.as_ref().unwrap();
                let diff = (p.prob - e.estimate).abs();
                if e.std_error > 0.0 {
                    diff / e.std_error
                } else if diff == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            })
            .fold(0.0, f64::max);
        writeln!(out, "simulation: largest |prob - estimate| = {worst:.2} standard errors").unwrap();
    }

    if verbose {
        out.push_str("\nper requirement (probability / bad states):\n");
        for p in points {
            write!(out, "  {} {} v_max {} v0 {} ({} states):", p.variant, p.env, p.v_max, p.v0, p.states).unwrap();
            for (s, prob, bad) in &p.per_spec {
                write!(out, " {s}={prob:.6}/{bad}").unwrap();
            }
            out.push('\n');
        }
    }
    out
}

pub fn sweep(g: &Global, trials: Option<u64>) -> Result<String> {
    let cfg = g.load_config()?;
    let seed = g.seed.unwrap_or(cfg.seed);
    let points = sweep_points(&cfg, trials, seed)?;
    g.prepare_out()?;
    let path = g.write("sweep.csv", &sweep_csv(&points))?;
    let mut report = sweep_summary(&points, g.verbose);
    writeln!(report, "wrote {}", path.display()).unwrap();

    let setup = cfg.sweep.as_ref().expect("checked by sweep_points");
    let mut m = g.manifest("sweep");
    m.fixtures = vec![display(&setup.class_cm_path), display(&setup.prop_cm_path)];
    m.seed = trials.map(|_| seed);
    m.write(&g.out)?;
    Ok(report)
}

pub fn simulate(g: &Global, trials: Option<u64>, spec: Option<SafetySpec>) -> Result<String> {
    let cfg = g.load_config()?;
    let seed = g.seed.unwrap_or(cfg.seed);
    let trials = trials.unwrap_or(cfg.trials);
    let spec = spec.unwrap_or(cfg.spec);
    let model = cfg.perception_model()?;
    let ctl = Controller::for_classes(&cfg.scenario, model.classes())?;
    let chain = build_chain(&cfg.scenario, &model, &ctl)?;
    let (exact, _, _) = check(&chain, spec)?;
    let est = parallel::simulate(&cfg.scenario, &model, &ctl, spec, trials, seed)?;

    let mut report = String::new();
    writeln!(report, "{spec}: chain {:.10}", exact.probability).unwrap();
    writeln!(
        report,
        "{spec}: simulation {:.10} +- {:.2e} ({} of {} trials, seed {seed})",
        est.estimate, est.std_error, est.successes, est.trials
    )
    .unwrap();
    if est.horizon_hits > 0 {
        writeln!(
            report,
            "warning: {} trials hit the step horizon before absorbing",
            est.horizon_hits
        )
        .unwrap();
    }
    let csv = format!(
        "spec,prob,mc_estimate,mc_stderr,trials,seed\n{spec},{},{},{},{trials},{seed}\n",
        exact.probability, est.estimate, est.std_error
    );
    g.prepare_out()?;
    let path = g.write("simulate.csv", &csv)?;
    writeln!(report, "wrote {}", path.display()).unwrap();

    let mut m = g.manifest("simulate");
    m.fixtures = vec![display(&cfg.cm_path)];
    m.seed = Some(seed);
    m.write(&g.out)?;
    Ok(report)
}

pub fn export(g: &Global) -> Result<String> {
    let cfg = g.load_config()?;
    let model = cfg.perception_model()?;
    let ctl = Controller::for_classes(&cfg.scenario, model.classes())?;
    let chain = build_chain(&cfg.scenario, &model, &ctl)?;
    g.prepare_out()?;
    let files = ExportFiles::with_stem(&g.out, "chain");
    export::export(&chain, model.classes(), cfg.scenario.n_cells, &files)?;

    let mut report = format!(
        "{} states, {} transitions\nwrote {}, {}, {}\n",
        chain.len(),
        chain.dtmc().transition_count(),
        files.transitions.display(),
        files.labels.display(),
        files.states.display()
    );
    if g.verbose {
        let (r, bad, _) = check(&chain, cfg.spec)?;
        writeln!(report, "P({}) = {:.10} over {bad} bad states", cfg.spec, r.probability).unwrap();
    }
    let mut m = g.manifest("export");
    m.fixtures = vec![display(&cfg.cm_path)];
    m.write(&g.out)?;
    Ok(report)
}
