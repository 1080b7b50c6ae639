//! Python bindings for the jump-SDE particle simulator: built-in model
//! bundles, the particle engine, kernel density estimation, selection rules
//! and the empirical Wasserstein-1 distance.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use mvjump::engine::{self, InitialLaw, Partition, SimConfig};
use mvjump::estimators;
use mvjump::levy::{self, ThetaOptions};
use mvjump::metrics;
use mvjump::models::{self, CoeffConfig, LevyConfig};

fn err(e: mvjump::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A named (intensity measure, coefficients) bundle.
#[pyclass]
struct Model {
    bundle: models::ModelBundle,
}

#[pymethods]
impl Model {
    #[new]
    #[pyo3(signature = (levy="lebesgue", coeffs="zero", d=1, max_ring=16,
                        a1=1.0, a2=2.0, p_decay=1.0, alpha=0.5,
                        decay=1.0, sigma_lo=1.0, sigma_hi=2.0,
                        mean_revert_drift=false))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        levy: &str,
        coeffs: &str,
        d: usize,
        max_ring: usize,
        a1: f64,
        a2: f64,
        p_decay: f64,
        alpha: f64,
        decay: f64,
        sigma_lo: f64,
        sigma_hi: f64,
        mean_revert_drift: bool,
    ) -> PyResult<Self> {
        let levy_cfg = LevyConfig {
            name: levy.to_string(),
            d,
            max_ring,
            a1,
            a2,
            p_decay,
            alpha,
        };
        let coeff_cfg = CoeffConfig {
            name: coeffs.to_string(),
            decay,
            sigma_lo,
            sigma_hi,
            mean_revert_drift,
            cbar: None,
            cunder: None,
            cbreve: None,
        };
        Ok(Model {
            bundle: models::build_bundle(&levy_cfg, &coeff_cfg).map_err(err)?,
        })
    }

    fn dim(&self) -> usize {
        self.bundle.levy.dim()
    }

    fn annulus_mass(&self, k: usize) -> PyResult<f64> {
        self.bundle.levy.annulus_mass(k).map_err(err)
    }

    fn ball_mass(&self, m: usize) -> PyResult<f64> {
        self.bundle.levy.ball_mass(m).map_err(err)
    }

    fn tail_sigma(&self, ring_cutoff: usize, horizon: f64) -> PyResult<f64> {
        levy::tail_sigma(
            &self.bundle.levy,
            self.bundle.coeffs.cunder(),
            ring_cutoff,
            horizon,
        )
        .map_err(err)
    }

    fn epsilon_m(&self, ring_cutoff: usize) -> PyResult<f64> {
        levy::epsilon_m(&self.bundle.levy, self.bundle.coeffs.cbar(), ring_cutoff).map_err(err)
    }

    /// (estimate or None, is_infinite) from the level-set diagnostic.
    fn theta(&self) -> PyResult<(Option<f64>, bool)> {
        let diag = levy::theta_diagnostic(
            &self.bundle.levy,
            self.bundle.coeffs.cunder(),
            &ThetaOptions::default(),
        )
        .map_err(err)?;
        Ok((diag.estimate, diag.is_infinite()))
    }
}

/// Run the particle system and return recorded snapshots as
/// [(time, [[coords...] per particle]), ...].
#[pyfunction]
#[pyo3(signature = (model, horizon, dt, ring_cutoff, particles, seed,
                    initial_point=None, initial_mean=None, initial_var=None,
                    record_times=None, micro_factor=1))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    model: &Model,
    horizon: f64,
    dt: f64,
    ring_cutoff: usize,
    particles: usize,
    seed: u64,
    initial_point: Option<Vec<f64>>,
    initial_mean: Option<Vec<f64>>,
    initial_var: Option<Vec<f64>>,
    record_times: Option<Vec<f64>>,
    micro_factor: u64,
) -> PyResult<Vec<(f64, Vec<Vec<f64>>)>> {
    let d = model.bundle.levy.dim();
    let initial = match (initial_point, initial_mean) {
        (Some(at), None) => InitialLaw::Point { at },
        (None, Some(mean)) => InitialLaw::Gauss {
            mean,
            var: initial_var.unwrap_or_else(|| vec![1.0; d]),
        },
        (None, None) => InitialLaw::Point { at: vec![0.0; d] },
        _ => {
            return Err(PyValueError::new_err(
                "give either initial_point or initial_mean, not both",
            ))
        }
    };
    let cfg = SimConfig {
        horizon,
        partition: Partition::Uniform { dt },
        ring_cutoff,
        particles,
        seed,
        initial,
        micro_factor,
        sample_event_times: false,
    };
    let record = record_times.unwrap_or_else(|| vec![horizon]);
    let out = engine::run_simulation(&model.bundle.levy, &model.bundle.coeffs, &cfg, &record)
        .map_err(err)?;
    Ok(out
        .snapshots
        .into_iter()
        .map(|(t, flat)| {
            let rows = flat.chunks_exact(d).map(|r| r.to_vec()).collect();
            (t, rows)
        })
        .collect())
}

/// Gaussian-kernel density estimate at the grid points.
#[pyfunction]
#[pyo3(signature = (positions, grid, delta, romberg=false))]
fn kde(
    positions: Vec<Vec<f64>>,
    grid: Vec<Vec<f64>>,
    delta: f64,
    romberg: bool,
) -> PyResult<Vec<f64>> {
    if positions.is_empty() || grid.is_empty() {
        return Err(PyValueError::new_err("positions and grid must be nonempty"));
    }
    let dim = positions[0].len();
    if dim == 0 || positions.iter().any(|p| p.len() != dim) || grid.iter().any(|g| g.len() != dim)
    {
        return Err(PyValueError::new_err("inconsistent dimensions"));
    }
    let flat_pos: Vec<f64> = positions.into_iter().flatten().collect();
    let flat_grid: Vec<f64> = grid.into_iter().flatten().collect();
    let est = estimators::kde_estimate(&flat_pos, dim, &flat_grid, delta, romberg).map_err(err)?;
    Ok(est.values)
}

/// Exact empirical Wasserstein-1 distance between two 1-d samples.
#[pyfunction]
fn wasserstein1_1d(sample_a: Vec<f64>, sample_b: Vec<f64>) -> PyResult<f64> {
    metrics::wasserstein1_1d(&sample_a, &sample_b).map_err(err)
}

/// Empirical-measure convergence rate V_N.
#[pyfunction]
fn v_n(n: usize, d: usize) -> f64 {
    estimators::v_n(n, d)
}

/// Density-estimator selection rule: returns (delta, minimal N).
#[pyfunction]
#[pyo3(signature = (mesh, eps_m, d, romberg=false))]
fn select_density_params(mesh: f64, eps_m: f64, d: usize, romberg: bool) -> PyResult<(f64, usize)> {
    let p = estimators::select_density_params(mesh, eps_m, d, romberg).map_err(err)?;
    Ok((p.delta, p.n_required))
}

/// Smoothed-functional selection rule: returns (delta, minimal N).
#[pyfunction]
#[pyo3(signature = (mesh, eps_m, d, epsilon, romberg=false))]
fn select_tv_params(
    mesh: f64,
    eps_m: f64,
    d: usize,
    epsilon: f64,
    romberg: bool,
) -> PyResult<(f64, usize)> {
    let p = estimators::select_tv_params(mesh, eps_m, d, epsilon, romberg).map_err(err)?;
    Ok((p.delta, p.n_required))
}

#[pyfunction]
fn version() -> &'static str {
    mvjump::VERSION
}

#[pymodule]
fn mvjump_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(kde, m)?)?;
    m.add_function(wrap_pyfunction!(wasserstein1_1d, m)?)?;
    m.add_function(wrap_pyfunction!(v_n, m)?)?;
    m.add_function(wrap_pyfunction!(select_density_params, m)?)?;
    m.add_function(wrap_pyfunction!(select_tv_params, m)?)?;
    m.add_function(wrap_pyfunction!(version, m)?)?;
    Ok(())
}
