//! Convergence diagnostics: empirical Wasserstein-1 distance, the weak-form
//! generator residual, log-log slope fits, and time-validity thresholds for
//! the density/TV rate regimes.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::coeffs::{CoefficientModel, MeasureSummary};
use crate::error::{Error, Result};
use crate::levy::LevyMeasureModel;
use crate::stream::{Purpose, StreamFamily};

/// Exact 1-d empirical W1 via quantile coupling.
///
/// Equal sizes reduce to the mean absolute difference of the sorted samples;
/// unequal sizes integrate |F_a^{-1} - F_b^{-1}| piecewise over the merged
/// quantile grid.
pub fn wasserstein1_1d(sample_a: &[f64], sample_b: &[f64]) -> Result<f64> {
    if sample_a.is_empty() || sample_b.is_empty() {
        return Err(Error::config("empty sample"));
    }
    let mut a = sample_a.to_vec();
    let mut b = sample_b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    if a.len() == b.len() {
        let n = a.len() as f64;
        return Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / n);
    }
    let (n, m) = (a.len(), b.len());
    let mut total = 0.0;
    let mut u = 0.0f64;
    let (mut i, mut j) = (0usize, 0usize);
    while i < n && j < m {
        let qa = (i + 1) as f64 / n as f64;
        let qb = (j + 1) as f64 / m as f64;
        let next = qa.min(qb);
        total += (next - u) * (a[i] - b[j]).abs();
        u = next;
        if qa <= next + 1e-18 {
            i += 1;
        }
        if qb <= next + 1e-18 {
            j += 1;
        }
    }
    Ok(total)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct SlicedOptions {
    pub directions: usize,
    pub seed: u64,
}

impl Default for SlicedOptions {
    fn default() -> Self {
        SlicedOptions {
            directions: 64,
            seed: 0xD1CE,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct W1Result {
    pub value: f64,
    /// "exact-1d" or "sliced(K)"; sliced values are an approximation of W1,
    /// not the exact optimal-transport distance.
    pub method: String,
}

/// Empirical W1 between two d-dimensional samples (flat row-major).
///
/// d = 1 is exact; d >= 2 averages exact 1-d distances over random unit
/// projection directions and is labeled as such.
pub fn wasserstein1(
    sample_a: &[f64],
    sample_b: &[f64],
    dim: usize,
    opts: &SlicedOptions,
) -> Result<W1Result> {
    if dim == 0 || sample_a.len() % dim != 0 || sample_b.len() % dim != 0 {
        return Err(Error::config("sample length not divisible by dimension"));
    }
    if sample_a.is_empty() || sample_b.is_empty() {
        return Err(Error::config("empty sample"));
    }
    if dim == 1 {
        return Ok(W1Result {
            value: wasserstein1_1d(sample_a, sample_b)?,
            method: "exact-1d".to_string(),
        });
    }
    if opts.directions == 0 {
        return Err(Error::config("need at least one projection direction"));
    }
    let fam = StreamFamily::new(opts.seed);
    let values: Result<Vec<f64>> = (0..opts.directions)
        .into_par_iter()
        .map(|k| {
            let mut rng = fam.stream(Purpose::Direction, k as u64, 0, 0);
            let mut dir = vec![0.0; dim];
            loop {
                let mut sq = 0.0;
                for c in dir.iter_mut() {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    *c = g;
                    sq += g * g;
                }
                if sq > 1e-24 {
                    let inv = sq.sqrt().recip();
                    for c in dir.iter_mut() {
                        *c *= inv;
                    }
                    break;
                }
            }
            let project = |s: &[f64]| -> Vec<f64> {
                s.chunks_exact(dim)
                    .map(|p| p.iter().zip(&dir).map(|(a, b)| a * b).sum())
                    .collect()
            };
            wasserstein1_1d(&project(sample_a), &project(sample_b))
        })
        .collect();
    let values = values?;
    Ok(W1Result {
        value: values.iter().sum::<f64>() / values.len() as f64,
        method: format!("sliced({})", opts.directions),
    })
}

// ---------------------------------------------------------------------------
// weak-form residual

pub type ScalarFn = std::sync::Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type GradientFn = std::sync::Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Smooth scalar test function with an analytic gradient.
#[derive(Clone)]
pub struct SmoothTest {
    pub name: String,
    pub f: ScalarFn,
    pub grad: GradientFn,
}

impl SmoothTest {
    /// phi(x) = x_j.
    pub fn coordinate(j: usize) -> Self {
        SmoothTest {
            name: format!("x[{j}]"),
            f: std::sync::Arc::new(move |x| x[j]),
            grad: std::sync::Arc::new(move |_, g| {
                g.fill(0.0);
                g[j] = 1.0;
            }),
        }
    }

    /// phi(x) = cos(x_j).
    pub fn cos_coordinate(j: usize) -> Self {
        SmoothTest {
            name: format!("cos(x[{j}])"),
            f: std::sync::Arc::new(move |x| x[j].cos()),
            grad: std::sync::Arc::new(move |x, g| {
                g.fill(0.0);
                g[j] = -x[j].sin();
            }),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct WeakResidual {
    /// Paired finite difference (mean phi(X_{t+h}) - mean phi(X_t)) / h.
    pub fd: f64,
    pub fd_se: f64,
    /// Generator applied to the empirical measure at t: drift part (exact
    /// particle average) plus Monte Carlo jump part.
    pub rhs_drift: f64,
    pub rhs_jump: f64,
    pub rhs_jump_se: f64,
    pub residual: f64,
    pub combined_se: f64,
    /// Jump intensity mass kept by the ring truncation.
    pub truncated_mass: f64,
}

/// Residual of the weak-form time derivative against the generator.
///
/// The jump term integrates over pairs from the ensemble and ring-weighted
/// amplitudes restricted to the cutoff ball; the truncation mass is reported
/// alongside. Positions at t and t + h must come from the same ensemble so
/// the finite difference can be paired per particle.
#[allow(clippy::too_many_arguments)]
pub fn weak_residual(
    positions_t: &[f64],
    positions_th: &[f64],
    h: f64,
    at_time: f64,
    levy: &LevyMeasureModel,
    coeffs: &CoefficientModel,
    ring_cutoff: usize,
    phi: &SmoothTest,
    mc_budget: usize,
    seed: u64,
) -> Result<WeakResidual> {
    if mc_budget < 100 {
        return Err(Error::config("jump-term Monte Carlo budget must be >= 100"));
    }
    if !(h > 0.0) {
        return Err(Error::config("time increment h must be positive"));
    }
    let d = levy.dim();
    if positions_t.len() != positions_th.len() || positions_t.len() % d != 0 {
        return Err(Error::config("snapshots must have matching N x d layout"));
    }
    let n = positions_t.len() / d;

    // paired finite difference
    let diffs: Vec<f64> = (0..n)
        .map(|i| {
            ((phi.f)(&positions_th[i * d..(i + 1) * d]) - (phi.f)(&positions_t[i * d..(i + 1) * d]))
                / h
        })
        .collect();
    let fd = diffs.iter().sum::<f64>() / n as f64;
    let fd_var = diffs.iter().map(|v| (v - fd) * (v - fd)).sum::<f64>() / (n - 1).max(1) as f64;
    let fd_se = (fd_var / n as f64).sqrt();

    let rho = MeasureSummary::new(positions_t, d);

    // exact drift part
    let mut drift = vec![0.0; d];
    let mut grad = vec![0.0; d];
    let mut rhs_drift = 0.0;
    for i in 0..n {
        let x = &positions_t[i * d..(i + 1) * d];
        coeffs.eval_drift(at_time, x, &rho, &mut drift)?;
        (phi.grad)(x, &mut grad);
        rhs_drift += drift.iter().zip(&grad).map(|(a, b)| a * b).sum::<f64>();
    }
    rhs_drift /= n as f64;

    // Monte Carlo jump part: pairs (i, u) uniform, ring proportional to its
    // mass, amplitude in-ring; importance weight mu(B_M)
    let ball = levy.ball_mass(ring_cutoff)?;
    let masses: Vec<f64> = (1..=ring_cutoff)
        .map(|k| levy.annulus_mass(k))
        .collect::<Result<_>>()?;
    let fam = StreamFamily::new(seed);
    let samples: Result<Vec<f64>> = (0..mc_budget)
        .into_par_iter()
        .map(|m| {
            let mut rng = fam.stream(Purpose::Diagnostic, m as u64, 0, 1);
            let i = rand::RngExt::random_range(&mut rng, 0..n);
            let u = rand::RngExt::random_range(&mut rng, 0..n);
            let pick: f64 = rand::RngExt::random::<f64>(&mut rng) * ball;
            let mut acc = 0.0;
            let mut ring = ring_cutoff;
            for (idx, mass) in masses.iter().enumerate() {
                acc += mass;
                if pick <= acc {
                    ring = idx + 1;
                    break;
                }
            }
            let z = levy.sample_in_annulus(ring, &mut rng)?;
            let x = &positions_t[i * d..(i + 1) * d];
            let v = &positions_t[u * d..(u + 1) * d];
            let mut c = vec![0.0; d];
            coeffs.eval_jump(at_time, v, &z, x, &rho, &mut c)?;
            let moved: Vec<f64> = x.iter().zip(&c).map(|(a, b)| a + b).collect();
            Ok(((phi.f)(&moved) - (phi.f)(x)) * ball)
        })
        .collect();
    let samples = samples?;
    let rhs_jump = samples.iter().sum::<f64>() / mc_budget as f64;
    let jump_var = samples
        .iter()
        .map(|v| (v - rhs_jump) * (v - rhs_jump))
        .sum::<f64>()
        / (mc_budget - 1) as f64;
    let rhs_jump_se = (jump_var / mc_budget as f64).sqrt();

    let residual = (fd - rhs_drift - rhs_jump).abs();
    Ok(WeakResidual {
        fd,
        fd_se,
        rhs_drift,
        rhs_jump,
        rhs_jump_se,
        residual,
        combined_se: (fd_se * fd_se + rhs_jump_se * rhs_jump_se).sqrt(),
        truncated_mass: ball,
    })
}

// ---------------------------------------------------------------------------
// slope fits

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceReport {
    pub ladder: Vec<f64>,
    pub errors: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual of the log-log fit.
    pub fit_residual: f64,
    pub target: Option<f64>,
    pub tolerance: Option<f64>,
    pub pass: Option<bool>,
}

/// Least-squares fit of log(error) against log(parameter).
pub fn convergence_slope(rungs: &[(f64, f64)]) -> Result<ConvergenceReport> {
    if rungs.len() < 3 {
        return Err(Error::config("slope fit needs at least 3 rungs"));
    }
    let mono_inc = rungs.windows(2).all(|w| w[1].0 > w[0].0);
    let mono_dec = rungs.windows(2).all(|w| w[1].0 < w[0].0);
    if !mono_inc && !mono_dec {
        return Err(Error::config("ladder must be strictly monotone"));
    }
    if rungs.iter().any(|(p, e)| *p <= 0.0 || *e <= 0.0) {
        return Err(Error::numeric(
            "slope fit needs positive parameters and errors (add Monte Carlo averaging if an error underflowed)",
        ));
    }
    let n = rungs.len() as f64;
    let xs: Vec<f64> = rungs.iter().map(|(p, _)| p.ln()).collect();
    let ys: Vec<f64> = rungs.iter().map(|(_, e)| e.ln()).collect();
    let xm = xs.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xm) * (x - xm)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let fit_residual = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let p = intercept + slope * x;
            (y - p) * (y - p)
        })
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(ConvergenceReport {
        ladder: rungs.iter().map(|(p, _)| *p).collect(),
        errors: rungs.iter().map(|(_, e)| *e).collect(),
        slope,
        intercept,
        fit_residual,
        target: None,
        tolerance: None,
        pass: None,
    })
}

impl ConvergenceReport {
    /// Attach a target slope and tolerance; `pass` means |slope - target|
    /// within tolerance when `two_sided`, else slope >= target.
    pub fn with_target(mut self, target: f64, tolerance: f64, two_sided: bool) -> Self {
        self.target = Some(target);
        self.tolerance = Some(tolerance);
        self.pass = Some(if two_sided {
            (self.slope - target).abs() <= tolerance
        } else {
            self.slope >= target
        });
        self
    }
}

// ---------------------------------------------------------------------------
// validity thresholds

/// Rate regimes whose time-validity thresholds scale with 8d/theta.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateRegime {
    /// Existence of an l-times differentiable density: t > 8d(l+d)/theta.
    DensitySmoothness { order: usize },
    /// TV convergence of the (truncated) grid scheme:
    /// t > (8d/theta)(8/eps + 1).
    SchemeTv,
    /// Plain kernel density rate: t > (8d/theta)(2 + d).
    DensityPlain,
    /// Extrapolated kernel density rate: t > (8d/theta)(4 + d).
    DensityRomberg,
    /// Smoothed-functional rate: t > (8d/theta)(16/eps + 1).
    SmoothedTv,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Theta {
    Finite(f64),
    Infinite,
}

/// Minimal time after which the regime's rate statement applies.
///
/// Infinite theta means every positive time is valid; theta = 0 has no
/// validity window at all and is an error.
pub fn validity_threshold(
    regime: RateRegime,
    dim: usize,
    theta: Theta,
    epsilon: Option<f64>,
) -> Result<f64> {
    let th = match theta {
        Theta::Infinite => return Ok(0.0),
        Theta::Finite(t) if t > 0.0 => t,
        _ => {
            return Err(Error::numeric(
                "theta = 0: no validity window for this model",
            ))
        }
    };
    let d = dim as f64;
    let scale = 8.0 * d / th;
    let factor = match regime {
        RateRegime::DensitySmoothness { order } => order as f64 + d,
        RateRegime::SchemeTv => {
            let eps = epsilon.ok_or_else(|| Error::config("epsilon required for this regime"))?;
            if !(eps > 0.0) {
                return Err(Error::config("epsilon must be positive"));
            }
            8.0 / eps + 1.0
        }
        RateRegime::DensityPlain => 2.0 + d,
        RateRegime::DensityRomberg => 4.0 + d,
        RateRegime::SmoothedTv => {
            let eps = epsilon.ok_or_else(|| Error::config("epsilon required for this regime"))?;
            if !(eps > 0.0) {
                return Err(Error::config("epsilon must be positive"));
            }
            16.0 / eps + 1.0
        }
    };
    Ok(scale * factor)
}
