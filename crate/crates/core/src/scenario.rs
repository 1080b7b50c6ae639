//! Scenario-driven front end: strict TOML configs, named pipelines, and a
//! manifest that echoes the fully resolved configuration so any run can be
//! reproduced byte-for-byte from its output directory alone.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::coeffs::{self, ValidationOptions};
use crate::engine::{self, InitialLaw, Partition, SimConfig};
use crate::error::{Error, Result};
use crate::estimators::{self, GaussMode, TestFunction};
use crate::levy::{self, ThetaOptions};
use crate::metrics::{self, RateRegime, SlicedOptions, Theta};
use crate::models::{self, CoeffConfig, LevyConfig};
use crate::snapshot;

pub const SCHEMA_VERSION: u32 = 1;

/// Attached to every report carrying the noise-growth diagnostic.
const THETA_NOTE: &str =
    "finite-grid level-set diagnostic; an estimate used for validity windows, not a proof";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Simulate,
    Density,
    TvEstimate,
    ConvergenceStudy,
    ValidateModel,
    TailQuantities,
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Scenario::Simulate => "simulate",
            Scenario::Density => "density",
            Scenario::TvEstimate => "tv-estimate",
            Scenario::ConvergenceStudy => "convergence-study",
            Scenario::ValidateModel => "validate-model",
            Scenario::TailQuantities => "tail-quantities",
        };
        f.write_str(s)
    }
}

fn default_out_dir() -> String {
    "out".to_string()
}
fn default_particles() -> usize {
    1000
}
fn default_horizon() -> f64 {
    1.0
}
fn default_ring_cutoff() -> usize {
    3
}
fn default_micro_factor() -> u64 {
    1
}
fn default_grid_points() -> usize {
    61
}
fn default_epsilon() -> f64 {
    0.5
}
fn default_ladder() -> Vec<f64> {
    vec![0.08, 0.04, 0.02, 0.01]
}
fn default_study_seeds() -> usize {
    20
}
fn default_target_slope() -> f64 {
    0.7
}
fn default_budget() -> usize {
    2000
}
fn default_fd_step() -> f64 {
    1e-5
}
fn default_slack() -> f64 {
    0.05
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    /// Uniform step; mutually exclusive with `grid`.
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub grid: Option<Vec<f64>>,
    #[serde(default = "default_ring_cutoff")]
    pub ring_cutoff: usize,
    #[serde(default = "default_particles")]
    pub particles: usize,
    #[serde(default = "default_micro_factor")]
    pub micro_factor: u64,
    #[serde(default)]
    pub sample_event_times: bool,
    /// Defaults to the horizon.
    #[serde(default)]
    pub record_times: Vec<f64>,
    #[serde(default)]
    pub write_binary: bool,
    pub initial: InitialLaw,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            horizon: 1.0,
            dt: Some(0.01),
            grid: None,
            ring_cutoff: 3,
            particles: 1000,
            micro_factor: 1,
            sample_event_times: false,
            record_times: Vec::new(),
            write_binary: false,
            initial: InitialLaw::Point { at: vec![0.0] },
        }
    }
}

fn default_estimator_seeds() -> usize {
    1
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSection {
    #[serde(default)]
    pub romberg: bool,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Estimation time; defaults to the horizon.
    #[serde(default)]
    pub time: Option<f64>,
    #[serde(default)]
    pub grid_min: Vec<f64>,
    #[serde(default)]
    pub grid_max: Vec<f64>,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    /// Independent ensembles averaged for error bars (density scenario).
    #[serde(default = "default_estimator_seeds")]
    pub seeds: usize,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        EstimatorSection {
            romberg: false,
            epsilon: 0.5,
            time: None,
            grid_min: vec![-3.0],
            grid_max: vec![3.0],
            grid_points: 61,
            seeds: 1,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    #[serde(default = "default_ladder")]
    pub ladder: Vec<f64>,
    #[serde(default = "default_study_seeds")]
    pub seeds: usize,
    #[serde(default = "default_target_slope")]
    pub target_slope: f64,
}

impl Default for StudySection {
    fn default() -> Self {
        StudySection {
            ladder: default_ladder(),
            seeds: default_study_seeds(),
            target_slope: default_target_slope(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ValidateSection {
    #[serde(default = "default_budget")]
    pub sample_budget: usize,
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
    #[serde(default = "default_slack")]
    pub slack: f64,
}

impl Default for ValidateSection {
    fn default() -> Self {
        ValidateSection {
            sample_budget: default_budget(),
            fd_step: default_fd_step(),
            slack: default_slack(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub scenario: Scenario,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: String,
    /// Worker cap for the process; 0 = library default. Must not change
    /// results, only timing.
    #[serde(default)]
    pub threads: usize,
    pub model: LevyConfig,
    #[serde(default)]
    pub coefficients: CoeffConfig,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub estimator: EstimatorSection,
    #[serde(default)]
    pub study: StudySection,
    #[serde(default)]
    pub validate: ValidateSection,
}

/// Strict parse: unknown keys, bad types and range violations are errors.
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    if text.trim().is_empty() {
        return Err(Error::config("empty configuration"));
    }
    let cfg: ScenarioConfig =
        toml::from_str(text).map_err(|e| Error::config(format!("config parse error: {e}")))?;
    if cfg.schema_version != SCHEMA_VERSION {
        return Err(Error::config(format!(
            "unsupported schema_version {} (expected {SCHEMA_VERSION})",
            cfg.schema_version
        )));
    }
    validate_ranges(&cfg)?;
    Ok(cfg)
}

pub fn parse_config_file(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

fn validate_ranges(cfg: &ScenarioConfig) -> Result<()> {
    if cfg.sim.particles < 1 {
        return Err(Error::config(
            "sim.particles must be >= 1 (documented range: N >= 1)",
        ));
    }
    if !(cfg.sim.horizon >= 0.0) {
        return Err(Error::config("sim.horizon must be nonnegative"));
    }
    match (&cfg.sim.dt, &cfg.sim.grid) {
        (Some(dt), None) => {
            if !(*dt > 0.0) {
                return Err(Error::config("sim.dt must be positive"));
            }
        }
        (None, Some(_)) => {}
        (Some(_), Some(_)) => {
            return Err(Error::config("sim.dt and sim.grid are mutually exclusive"))
        }
        (None, None) => return Err(Error::config("one of sim.dt or sim.grid is required")),
    }
    if cfg.sim.ring_cutoff < 1 || cfg.sim.ring_cutoff > cfg.model.max_ring {
        return Err(Error::config(format!(
            "sim.ring_cutoff must lie in 1..={} (model.max_ring)",
            cfg.model.max_ring
        )));
    }
    if cfg.sim.micro_factor < 1 {
        return Err(Error::config("sim.micro_factor must be >= 1"));
    }
    if cfg.estimator.grid_points < 1 {
        return Err(Error::config("estimator.grid_points must be >= 1"));
    }
    if !(cfg.estimator.epsilon > 0.0 && cfg.estimator.epsilon < 1.0) {
        return Err(Error::config("estimator.epsilon must lie in (0, 1)"));
    }
    if cfg.estimator.seeds < 1 {
        return Err(Error::config("estimator.seeds must be >= 1"));
    }
    if cfg.study.ladder.len() < 2 {
        return Err(Error::config("study.ladder needs at least 2 step sizes"));
    }
    if cfg.study.seeds < 1 {
        return Err(Error::config("study.seeds must be >= 1"));
    }
    Ok(())
}

fn partition(cfg: &ScenarioConfig) -> Partition {
    match (&cfg.sim.dt, &cfg.sim.grid) {
        (Some(dt), None) => Partition::Uniform { dt: *dt },
        (None, Some(grid)) => Partition::Explicit { times: grid.clone() },
        _ => unreachable!("validated"),
    }
}

fn sim_config(cfg: &ScenarioConfig, particles: usize, seed: u64, micro_factor: u64) -> SimConfig {
    SimConfig {
        horizon: cfg.sim.horizon,
        partition: partition(cfg),
        ring_cutoff: cfg.sim.ring_cutoff,
        particles,
        seed,
        initial: cfg.sim.initial.clone(),
        micro_factor,
        sample_event_times: cfg.sim.sample_event_times,
    }
}

/// Run manifest: inputs echoed, outputs listed. `wall_secs` is timing
/// metadata and is the one field expected to differ between reruns.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub library_version: String,
    pub scenario: String,
    pub seed: u64,
    /// The fully resolved configuration as TOML; reparsing it reproduces
    /// the run.
    pub config_toml: String,
    pub files: Vec<String>,
    pub wall_secs: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub struct ScenarioOutcome {
    pub manifest: Manifest,
    pub out_dir: PathBuf,
}

struct Emitter {
    dir: PathBuf,
    files: Vec<String>,
}

impl Emitter {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Emitter {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.path(name);
        let text = serde_json::to_string_pretty(value)
            .map_err(|e| Error::numeric(format!("json encode: {e}")))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}

/// Execute a scenario, writing outputs and a manifest into `out_dir`.
///
/// The manifest is written even when the pipeline fails; the error is
/// recorded in it and returned.
pub fn run_scenario(cfg: &ScenarioConfig, out_dir: &Path) -> Result<ScenarioOutcome> {
    let started = std::time::Instant::now();
    let mut emitter = Emitter::new(out_dir)?;
    let result = dispatch(cfg, &mut emitter);
    let config_toml = toml::to_string_pretty(cfg)
        .map_err(|e| Error::numeric(format!("config echo encode: {e}")))?;
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        library_version: crate::VERSION.to_string(),
        scenario: cfg.scenario.to_string(),
        seed: cfg.seed,
        config_toml,
        files: emitter.files.clone(),
        wall_secs: started.elapsed().as_secs_f64(),
        error: result.as_ref().err().map(|e| e.to_string()),
    };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::numeric(format!("manifest encode: {e}")))?;
    std::fs::write(out_dir.join("manifest.json"), text + "\n")?;
    result.map(|_| ScenarioOutcome {
        manifest,
        out_dir: out_dir.to_path_buf(),
    })
}

fn dispatch(cfg: &ScenarioConfig, emitter: &mut Emitter) -> Result<()> {
    match cfg.scenario {
        Scenario::Simulate => scenario_simulate(cfg, emitter),
        Scenario::Density => scenario_density(cfg, emitter),
        Scenario::TvEstimate => scenario_tv(cfg, emitter),
        Scenario::ConvergenceStudy => scenario_study(cfg, emitter),
        Scenario::ValidateModel => scenario_validate(cfg, emitter),
        Scenario::TailQuantities => scenario_tails(cfg, emitter),
    }
}

fn record_times(cfg: &ScenarioConfig) -> Vec<f64> {
    if cfg.sim.record_times.is_empty() {
        vec![cfg.sim.horizon]
    } else {
        cfg.sim.record_times.clone()
    }
}

fn scenario_simulate(cfg: &ScenarioConfig, emitter: &mut Emitter) -> Result<()> {
    let bundle = models::build_bundle(&cfg.model, &cfg.coefficients)?;
    let sim = sim_config(cfg, cfg.sim.particles, cfg.seed, cfg.sim.micro_factor);
    let out = engine::run_simulation(&bundle.levy, &bundle.coeffs, &sim, &record_times(cfg))?;
    for (time, positions) in &out.snapshots {
        let name = format!("snapshot_t{time:.6}.csv");
        snapshot::write_positions_csv(&emitter.path(&name), positions, bundle.levy.dim())?;
        if cfg.sim.write_binary {
            let bname = format!("snapshot_t{time:.6}.bin");
            snapshot::write_positions_binary(
                &emitter.path(&bname),
                positions,
                bundle.levy.dim(),
                *time,
            )?;
        }
    }
    #[derive(Serialize)]
    struct SimReport {
        total_events: u64,
        tail_sigma: f64,
        particles: usize,
        mesh: f64,
    }
    emitter.write_json(
        "sim_report.json",
        &SimReport {
            total_events: out.total_events,
            tail_sigma: out.tail_sigma,
            particles: cfg.sim.particles,
            mesh: sim.partition.mesh(cfg.sim.horizon)?,
        },
    )?;
    Ok(())
}

fn estimation_grid(cfg: &ScenarioConfig, dim: usize) -> Result<Vec<f64>> {
    let lo = &cfg.estimator.grid_min;
    let hi = &cfg.estimator.grid_max;
    if lo.len() != dim || hi.len() != dim {
        return Err(Error::config(format!(
            "estimator grid bounds must have dimension {dim}"
        )));
    }
    if lo.iter().zip(hi).any(|(a, b)| a >= b) {
        return Err(Error::config("estimator grid_min must be below grid_max"));
    }
    let g = cfg.estimator.grid_points;
    if dim == 1 {
        return Ok((0..g)
            .map(|i| {
                if g == 1 {
                    0.5 * (lo[0] + hi[0])
                } else {
                    lo[0] + (hi[0] - lo[0]) * i as f64 / (g - 1) as f64
                }
            })
            .collect());
    }
    // tensor grid with g points per axis; kept modest for d >= 2
    let per_axis = g;
    let mut points = vec![Vec::new()];
    for a in 0..dim {
        let axis: Vec<f64> = (0..per_axis)
            .map(|i| {
                if per_axis == 1 {
                    0.5 * (lo[a] + hi[a])
                } else {
                    lo[a] + (hi[a] - lo[a]) * i as f64 / (per_axis - 1) as f64
                }
            })
            .collect();
        let mut next = Vec::with_capacity(points.len() * per_axis);
        for p in &points {
            for v in &axis {
                let mut q = p.clone();
                q.push(*v);
                next.push(q);
            }
        }
        points = next;
    }
    Ok(points.into_iter().flatten().collect())
}

fn theta_for(cfg: &ScenarioConfig) -> Result<(levy::ThetaDiagnostic, Theta)> {
    let bundle = models::build_bundle(&cfg.model, &cfg.coefficients)?;
    let diag = levy::theta_diagnostic(&bundle.levy, bundle.coeffs.cunder(), &ThetaOptions::default())?;
    let theta = match diag.estimate {
        None => Theta::Infinite,
        Some(v) => Theta::Finite(v),
    };
    Ok((diag, theta))
}

fn scenario_density(cfg: &ScenarioConfig, emitter: &mut Emitter) -> Result<()> {
    let bundle = models::build_bundle(&cfg.model, &cfg.coefficients)?;
    let dim = bundle.levy.dim();
    let mesh = partition(cfg).mesh(cfg.sim.horizon)?;
    let eps = levy::epsilon_m(&bundle.levy, bundle.coeffs.cbar(), cfg.sim.ring_cutoff)?;
    let params = estimators::select_density_params(mesh, eps, dim, cfg.estimator.romberg)?;
    let particles = params.n_required.max(cfg.sim.particles);
    let time = cfg.estimator.time.unwrap_or(cfg.sim.horizon);
    let grid = estimation_grid(cfg, dim)?;
    // optional multi-seed averaging for error bars; seed s shifts the base
    let runs = cfg.estimator.seeds;
    let mut mean = vec![0.0f64; grid.len() / dim];
    let mut sq = vec![0.0f64; grid.len() / dim];
    let mut est = None;
    for s in 0..runs {
        let sim = sim_config(
            cfg,
            particles,
            cfg.seed.wrapping_add(s as u64),
            cfg.sim.micro_factor,
        );
        let out = engine::run_simulation(&bundle.levy, &bundle.coeffs, &sim, &[time])?;
        let (_, positions) = &out.snapshots[0];
        let e =
            estimators::kde_estimate(positions, dim, &grid, params.delta, cfg.estimator.romberg)?;
        for ((m, q), v) in mean.iter_mut().zip(sq.iter_mut()).zip(&e.values) {
            *m += v;
            *q += v * v;
        }
        est = Some(e);
    }
    let mut est = est.expect("at least one seed");
    let std_errors: Option<Vec<f64>> = if runs > 1 {
        for m in mean.iter_mut() {
            *m /= runs as f64;
        }
        let se = mean
            .iter()
            .zip(&sq)
            .map(|(m, q)| {
                let var = (q / runs as f64 - m * m).max(0.0) * runs as f64 / (runs - 1) as f64;
                (var / runs as f64).sqrt()
            })
            .collect();
        est.values = mean;
        est.has_negative = est.values.iter().any(|v| *v < 0.0);
        Some(se)
    } else {
        None
    };
    snapshot::write_density_csv(&emitter.path("density.csv"), &est)?;

    let (diag, theta) = theta_for(cfg)?;
    let regime = if cfg.estimator.romberg {
        RateRegime::DensityRomberg
    } else {
        RateRegime::DensityPlain
    };
    let threshold = metrics::validity_threshold(regime, dim, theta, None).ok();
    #[derive(Serialize)]
    struct DensityReport {
        params: estimators::EstimatorParams,
        particles_used: usize,
        estimation_time: f64,
        eps_m: f64,
        mesh: f64,
        averaging_seeds: usize,
        /// Per-grid-point standard errors when averaging_seeds > 1.
        #[serde(skip_serializing_if = "Option::is_none")]
        std_errors: Option<Vec<f64>>,
        theta_note: &'static str,
        theta: levy::ThetaDiagnostic,
        /// Minimal time for the rate statement; None when theta = 0.
        validity_threshold: Option<f64>,
        time_in_validity_window: Option<bool>,
        has_negative: bool,
    }
    emitter.write_json(
        "density_report.json",
        &DensityReport {
            params,
            particles_used: particles,
            estimation_time: time,
            eps_m: eps,
            mesh,
            averaging_seeds: runs,
            std_errors,
            theta_note: THETA_NOTE,
            theta: diag,
            validity_threshold: threshold,
            time_in_validity_window: threshold.map(|t| time > t),
            has_negative: est.has_negative,
        },
    )?;
    Ok(())
}

fn scenario_tv(cfg: &ScenarioConfig, emitter: &mut Emitter) -> Result<()> {
    let bundle = models::build_bundle(&cfg.model, &cfg.coefficients)?;
    let dim = bundle.levy.dim();
    let mesh = partition(cfg).mesh(cfg.sim.horizon)?;
    let eps = levy::epsilon_m(&bundle.levy, bundle.coeffs.cbar(), cfg.sim.ring_cutoff)?;
    let params = estimators::select_tv_params(
        mesh,
        eps,
        dim,
        cfg.estimator.epsilon,
        cfg.estimator.romberg,
    )?;
    let particles = params.n_required.max(cfg.sim.particles);
    let time = cfg.estimator.time.unwrap_or(cfg.sim.horizon);
    let sim = sim_config(cfg, particles, cfg.seed, cfg.sim.micro_factor);
    let out = engine::run_simulation(&bundle.levy, &bundle.coeffs, &sim, &[time])?;
    let (_, positions) = &out.snapshots[0];

    // fixed battery of bounded test functions: half-spaces + trigonometric
    let mut battery: Vec<(String, TestFunction)> = Vec::new();
    for q in [-1.0, -0.5, 0.0, 0.5, 1.0] {
        let mut lower = vec![f64::NEG_INFINITY; dim];
        let mut upper = vec![f64::INFINITY; dim];
        lower[0] = f64::NEG_INFINITY;
        upper[0] = q;
        battery.push((
            format!("indicator(x0 <= {q})"),
            TestFunction::Box { lower, upper },
        ));
    }
    for freq in [1.0, 2.0] {
        let mut f = vec![0.0; dim];
        f[0] = freq;
        battery.push((
            format!("cos({freq} x0)"),
            TestFunction::Trig {
                freq: f.clone(),
                phase: 0.0,
            },
        ));
        battery.push((
            format!("sin({freq} x0)"),
            TestFunction::Trig {
                freq: f,
                phase: -std::f64::consts::FRAC_PI_2,
            },
        ));
    }
    #[derive(Serialize)]
    struct BatteryEntry {
        name: String,
        value: f64,
    }
    let mut entries = Vec::new();
    for (name, f) in &battery {
        let value = estimators::smoothed_expectation(
            positions,
            dim,
            f,
            params.delta,
            cfg.estimator.romberg,
            GaussMode::Analytic,
        )?;
        entries.push(BatteryEntry {
            name: name.clone(),
            value,
        });
    }
    let (diag, theta) = theta_for(cfg)?;
    let threshold =
        metrics::validity_threshold(RateRegime::SmoothedTv, dim, theta, Some(cfg.estimator.epsilon))
            .ok();
    #[derive(Serialize)]
    struct TvReport {
        /// These values are smoothed-functional proxies for TV-distance
        /// testing, not a direct TV estimate.
        label: String,
        params: estimators::EstimatorParams,
        particles_used: usize,
        estimation_time: f64,
        functions: Vec<BatteryEntry>,
        theta_note: &'static str,
        theta: levy::ThetaDiagnostic,
        validity_threshold: Option<f64>,
        time_in_validity_window: Option<bool>,
    }
    emitter.write_json(
        "tv_report.json",
        &TvReport {
            label: "smoothed-tv-proxy".to_string(),
            params,
            particles_used: particles,
            estimation_time: time,
            functions: entries,
            theta_note: THETA_NOTE,
            theta: diag,
            validity_threshold: threshold,
            time_in_validity_window: threshold.map(|t| time > t),
        },
    )?;
    Ok(())
}

fn scenario_study(cfg: &ScenarioConfig, emitter: &mut Emitter) -> Result<()> {
    let bundle = models::build_bundle(&cfg.model, &cfg.coefficients)?;
    let dim = bundle.levy.dim();
    let horizon = cfg.sim.horizon;
    let mut ladder = cfg.study.ladder.clone();
    ladder.sort_by(|a, b| b.total_cmp(a));
    // nested uniform grids: every dt must divide the horizon and the finest
    // grid must refine each rung
    let mut steps = Vec::new();
    for &dt in &ladder {
        let n = horizon / dt;
        if (n - n.round()).abs() > 1e-9 || n.round() < 1.0 {
            return Err(Error::config(format!(
                "study ladder dt={dt} does not divide the horizon {horizon}"
            )));
        }
        steps.push(n.round() as u64);
    }
    let n_max = *steps.last().unwrap();
    if steps.iter().any(|n| n_max % n != 0) {
        return Err(Error::config(
            "study ladder must form nested partitions (each step count divides the finest)",
        ));
    }

    let mut rung_errors = vec![0.0f64; ladder.len() - 1];
    for s in 0..cfg.study.seeds {
        let seed = cfg.seed.wrapping_add(s as u64);
        let mut snapshots: Vec<Vec<f64>> = Vec::with_capacity(ladder.len());
        for (&dt, &n) in ladder.iter().zip(&steps) {
            let mut sim = sim_config(cfg, cfg.sim.particles, seed, n_max / n);
            sim.partition = Partition::Uniform { dt };
            let out = engine::run_simulation(&bundle.levy, &bundle.coeffs, &sim, &[horizon])?;
            snapshots.push(out.snapshots[0].1.clone());
        }
        let finest = snapshots.last().unwrap();
        for (j, snap) in snapshots[..ladder.len() - 1].iter().enumerate() {
            let w = metrics::wasserstein1(snap, finest, dim, &SlicedOptions::default())?;
            rung_errors[j] += w.value;
        }
    }
    for e in rung_errors.iter_mut() {
        *e /= cfg.study.seeds as f64;
    }
    let rungs: Vec<(f64, f64)> = ladder[..ladder.len() - 1]
        .iter()
        .copied()
        .zip(rung_errors.iter().copied())
        .collect();
    let report = metrics::convergence_slope(&rungs)?.with_target(
        cfg.study.target_slope,
        0.0,
        false,
    );
    emitter.write_json("study.json", &report)?;
    let mut csv = String::from("dt,w1_error\n");
    for (p, e) in &rungs {
        csv.push_str(&format!(
            "{},{}\n",
            snapshot::fmt_f64(*p),
            snapshot::fmt_f64(*e)
        ));
    }
    std::fs::write(emitter.path("study_rungs.csv"), csv)?;
    Ok(())
}

fn scenario_validate(cfg: &ScenarioConfig, emitter: &mut Emitter) -> Result<()> {
    let bundle = models::build_bundle(&cfg.model, &cfg.coefficients)?;
    let opts = ValidationOptions {
        sample_budget: cfg.validate.sample_budget,
        fd_step: cfg.validate.fd_step,
        slack: cfg.validate.slack,
        seed: cfg.seed,
        ..Default::default()
    };
    let report = coeffs::validate_hypotheses(&bundle.coeffs, &bundle.levy, &opts)?;
    let (diag, _) = theta_for(cfg)?;
    #[derive(Serialize)]
    struct ValidationOut {
        all_passed: bool,
        report: coeffs::ValidationReport,
        /// Heuristic level-set diagnostic; not a proof of the noise-growth
        /// hypothesis.
        theta_note: &'static str,
        theta: levy::ThetaDiagnostic,
    }
    emitter.write_json(
        "validation.json",
        &ValidationOut {
            all_passed: report.all_passed(),
            report,
            theta_note: THETA_NOTE,
            theta: diag,
        },
    )?;
    Ok(())
}

fn scenario_tails(cfg: &ScenarioConfig, emitter: &mut Emitter) -> Result<()> {
    let bundle = models::build_bundle(&cfg.model, &cfg.coefficients)?;
    let tq = levy::tail_quantities(
        &bundle.levy,
        bundle.coeffs.cbar(),
        bundle.coeffs.cunder(),
        cfg.sim.ring_cutoff,
        cfg.sim.horizon,
    )?;
    let ring_masses: Vec<f64> = (1..=cfg.sim.ring_cutoff)
        .map(|k| bundle.levy.annulus_mass(k))
        .collect::<Result<_>>()?;
    let mut moments = Vec::new();
    for p in [1.0, 2.0] {
        if let Ok(m) = levy::cbar_moment(&bundle.levy, bundle.coeffs.cbar(), p) {
            moments.push((p, m.value, m.tail_remainder_bound));
        }
    }
    let (diag, _) = theta_for(cfg)?;
    #[derive(Serialize)]
    struct TailsReport {
        tail_sigma: f64,
        epsilon_m: f64,
        ring_cutoff: usize,
        horizon: f64,
        ring_masses: Vec<f64>,
        /// (order p, moment value, tail remainder bound)
        cbar_moments: Vec<(f64, f64, f64)>,
        theta_note: &'static str,
        theta: levy::ThetaDiagnostic,
        quadrature_abs_tol: f64,
    }
    emitter.write_json(
        "tails.json",
        &TailsReport {
            tail_sigma: tq.tail_sigma,
            epsilon_m: tq.epsilon_m,
            ring_cutoff: tq.ring_cutoff,
            horizon: tq.horizon,
            ring_masses,
            cbar_moments: moments,
            theta_note: THETA_NOTE,
            theta: diag,
            quadrature_abs_tol: tq.quadrature_abs_tol,
        },
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1
scenario = "simulate"
seed = 1

[model]
name = "lebesgue"
d = 1
max_ring = 4

[coefficients]
name = "zero"

[sim]
horizon = 1.0
dt = 0.1
ring_cutoff = 1
particles = 10

[sim.initial]
point = { at = [0.0] }
"#;

    #[test]
    fn minimal_config_parses() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.scenario, Scenario::Simulate);
        assert_eq!(cfg.sim.particles, 10);
    }

    #[test]
    fn empty_config_is_error() {
        assert!(matches!(parse_config(""), Err(Error::Config(_))));
        assert!(matches!(parse_config("   \n"), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_keys_are_errors() {
        let bad = MINIMAL.replace("[sim]", "[sim]\nbogus_key = 3");
        assert!(matches!(parse_config(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn zero_particles_is_range_error() {
        let bad = MINIMAL.replace("particles = 10", "particles = 0");
        let err = parse_config(&bad).unwrap_err();
        assert!(err.to_string().contains("N >= 1"), "{err}");
    }

    #[test]
    fn unknown_scenario_is_error() {
        let bad = MINIMAL.replace("\"simulate\"", "\"frobnicate\"");
        assert!(matches!(parse_config(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn minimal_run_produces_snapshot() {
        let cfg = parse_config(MINIMAL).unwrap();
        let dir = std::env::temp_dir().join("mvjump-scenario-minimal");
        std::fs::remove_dir_all(&dir).ok();
        let outcome = run_scenario(&cfg, &dir).unwrap();
        assert!(outcome.manifest.files.iter().any(|f| f.starts_with("snapshot_")));
        let snap = std::fs::read_to_string(dir.join("snapshot_t1.000000.csv")).unwrap();
        assert_eq!(snap.lines().count(), 11); // header + 10 particles
        let manifest_text = std::fs::read_to_string(dir.join("manifest.json")).unwrap();
        let m: Manifest = serde_json::from_str(&manifest_text).unwrap();
        assert_eq!(m.scenario, "simulate");
        assert!(m.error.is_none());
        // every emitted file is listed and exists
        for f in &m.files {
            assert!(dir.join(f).exists(), "{f} listed but missing");
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn rerun_from_manifest_is_byte_identical() {
        let cfg = parse_config(MINIMAL).unwrap();
        let dir1 = std::env::temp_dir().join("mvjump-scenario-rerun-1");
        let dir2 = std::env::temp_dir().join("mvjump-scenario-rerun-2");
        std::fs::remove_dir_all(&dir1).ok();
        std::fs::remove_dir_all(&dir2).ok();
        let out1 = run_scenario(&cfg, &dir1).unwrap();
        let cfg2 = parse_config(&out1.manifest.config_toml).unwrap();
        let out2 = run_scenario(&cfg2, &dir2).unwrap();
        assert_eq!(out1.manifest.files, out2.manifest.files);
        for f in &out1.manifest.files {
            let a = std::fs::read(dir1.join(f)).unwrap();
            let b = std::fs::read(dir2.join(f)).unwrap();
            assert_eq!(a, b, "file {f} differs between reruns");
        }
        std::fs::remove_dir_all(&dir1).ok();
        std::fs::remove_dir_all(&dir2).ok();
    }

    #[test]
    fn tails_scenario_closed_form_values() {
        let text = r#"
schema_version = 1
scenario = "tail-quantities"
seed = 1

[model]
name = "example1-exp"
d = 1
a1 = 1.0
a2 = 2.0
p_decay = 1.0

[coefficients]
name = "zero"

[sim]
horizon = 1.0
dt = 0.1
ring_cutoff = 5
particles = 1

[sim.initial]
point = { at = [0.0] }
"#;
        let cfg = parse_config(text).unwrap();
        let dir = std::env::temp_dir().join("mvjump-scenario-tails");
        std::fs::remove_dir_all(&dir).ok();
        run_scenario(&cfg, &dir).unwrap();
        let report: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.join("tails.json")).unwrap())
                .unwrap();
        let a = report["tail_sigma"].as_f64().unwrap();
        let eps = report["epsilon_m"].as_f64().unwrap();
        let e5 = (-5.0f64).exp();
        assert!((a - e5).abs() < 1e-6 * e5, "tail_sigma {a}");
        assert!((eps - 18.0 * e5).abs() < 1e-6 * 18.0 * e5, "epsilon_m {eps}");
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn density_multi_seed_averaging() {
        let text = r#"
schema_version = 1
scenario = "density"
seed = 9

[model]
name = "lebesgue"
d = 1
max_ring = 6

[coefficients]
name = "zero"

[sim]
horizon = 1.0
dt = 0.05
ring_cutoff = 5
particles = 50

[sim.initial]
gauss = { mean = [0.0], var = [1.0] }

[estimator]
grid_min = [-1.0]
grid_max = [1.0]
grid_points = 5
seeds = 3
"#;
        let cfg = parse_config(text).unwrap();
        let dir = std::env::temp_dir().join("mvjump-scenario-multiseed");
        std::fs::remove_dir_all(&dir).ok();
        run_scenario(&cfg, &dir).unwrap();
        let report: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.join("density_report.json")).unwrap())
                .unwrap();
        assert_eq!(report["averaging_seeds"].as_u64(), Some(3));
        let ses = report["std_errors"].as_array().unwrap();
        assert_eq!(ses.len(), 5);
        assert!(ses.iter().all(|v| v.as_f64().unwrap() >= 0.0));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn failed_run_still_writes_manifest() {
        // record time off the grid -> numeric config failure inside the run
        let bad = MINIMAL.replace("[sim]", "[sim]\nrecord_times = [0.55]");
        let cfg = parse_config(&bad).unwrap();
        let dir = std::env::temp_dir().join("mvjump-scenario-failed");
        std::fs::remove_dir_all(&dir).ok();
        assert!(run_scenario(&cfg, &dir).is_err());
        let manifest_text = std::fs::read_to_string(dir.join("manifest.json")).unwrap();
        let m: Manifest = serde_json::from_str(&manifest_text).unwrap();
        assert!(m.error.is_some());
        std::fs::remove_dir_all(&dir).ok();
    }
}
