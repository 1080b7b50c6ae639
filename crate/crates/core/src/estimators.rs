//! Density and smoothed-functional estimators over particle ensembles.
//!
//! The density estimator is the Gaussian-kernel average
//! (1/N) sum_i phi_delta(X^i - x); the extrapolated variant
//! 2 * plain(delta/sqrt(2)) - plain(delta) cancels the delta^2 bias term.
//! Bandwidths and minimal particle counts come from the selection rules
//! driven by the simulation mesh and the truncation tail error.

use std::collections::HashMap;
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::stream::{Purpose, StreamFamily};

/// Empirical-measure convergence rate V_N.
pub fn v_n(n: usize, dim: usize) -> f64 {
    let nf = n as f64;
    match dim {
        1 => nf.powf(-0.5),
        2 => nf.powf(-0.5) * (1.0 + nf).ln(),
        _ => nf.powf(-1.0 / dim as f64),
    }
}

/// Relative slack when inverting V_N <= bound, absorbing float rounding in
/// the bound without ever skipping a whole integer step at realistic N.
const VN_INVERSION_SLACK: f64 = 1e-9;

/// Minimal N with V_N <= bound.
fn minimal_n(bound: f64, dim: usize) -> Result<usize> {
    if !(bound > 0.0) {
        return Err(Error::numeric("degenerate selection: bound must be positive"));
    }
    let guess = match dim {
        1 => bound.powi(-2),
        2 => {
            // bisection on the monotone decreasing V_N
            let mut lo = 1.0f64;
            let mut hi = 2.0f64;
            while v_n(hi as usize, 2) > bound {
                hi *= 2.0;
                if hi > 1e15 {
                    return Err(Error::numeric("selection rule requires N > 1e15"));
                }
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if v_n(mid as usize, 2) > bound {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            hi
        }
        d => bound.powi(-(d as i32)),
    };
    if !guess.is_finite() || guess > 4e15 {
        return Err(Error::numeric("selection rule requires N beyond 2^52"));
    }
    let mut n = (guess.floor() as i64 - 8).max(1) as usize;
    loop {
        if v_n(n, dim) <= bound * (1.0 + VN_INVERSION_SLACK) {
            return Ok(n);
        }
        n += 1;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionRule {
    DensityPlain,
    DensityRomberg,
    SmoothedTvPlain,
    SmoothedTvRomberg,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct EstimatorParams {
    pub rule: SelectionRule,
    /// The driving error scale: mesh + sqrt(eps_M) for densities,
    /// mesh + eps_M for the smoothed functionals.
    pub base: f64,
    pub delta: f64,
    pub n_required: usize,
    pub epsilon: Option<f64>,
    /// Set when base > 1 (outside the rules' standing assumption); the
    /// reported delta uses base clamped to 1.
    pub clamped: bool,
}

/// Bandwidth/particle-count rule for the density estimator.
pub fn select_density_params(
    mesh: f64,
    eps_m: f64,
    dim: usize,
    romberg: bool,
) -> Result<EstimatorParams> {
    if mesh < 0.0 || eps_m < 0.0 {
        return Err(Error::config("mesh and eps_m must be nonnegative"));
    }
    let raw = mesh + eps_m.sqrt();
    if raw <= 0.0 {
        return Err(Error::numeric(
            "degenerate selection: mesh + sqrt(eps_m) is zero",
        ));
    }
    let clamped = raw > 1.0;
    let base = raw.min(1.0);
    let exponent = if romberg {
        1.0 / (dim as f64 + 5.0)
    } else {
        1.0 / (dim as f64 + 3.0)
    };
    Ok(EstimatorParams {
        rule: if romberg {
            SelectionRule::DensityRomberg
        } else {
            SelectionRule::DensityPlain
        },
        base,
        delta: base.powf(exponent),
        n_required: minimal_n(base, dim)?,
        epsilon: None,
        clamped,
    })
}

/// Bandwidth/particle-count rule for the smoothed-functional estimator.
pub fn select_tv_params(
    mesh: f64,
    eps_m: f64,
    dim: usize,
    epsilon: f64,
    romberg: bool,
) -> Result<EstimatorParams> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::config("epsilon must lie in (0, 1)"));
    }
    if mesh < 0.0 || eps_m < 0.0 {
        return Err(Error::config("mesh and eps_m must be nonnegative"));
    }
    let raw = mesh + eps_m;
    if raw <= 0.0 {
        return Err(Error::numeric("degenerate selection: mesh + eps_m is zero"));
    }
    let clamped = raw > 1.0;
    let base = raw.min(1.0);
    let d = dim as f64;
    let (delta_exp, vn_exp) = if romberg {
        let e_lo = epsilon * epsilon / (2.0 - epsilon);
        let e_hi = (8.0 * epsilon + (d - 3.0) * epsilon * epsilon) / ((d + 5.0) * (2.0 - epsilon));
        (0.25 * (1.0 - e_lo), (d + 5.0) / 4.0 * (1.0 - e_hi))
    } else {
        let e_lo = epsilon / (2.0 - epsilon);
        let e_hi = ((d + 5.0) * epsilon - 2.0 * epsilon * epsilon) / ((d + 3.0) * (2.0 - epsilon));
        (0.5 * (1.0 - e_lo), (d + 3.0) / 2.0 * (1.0 - e_hi))
    };
    Ok(EstimatorParams {
        rule: if romberg {
            SelectionRule::SmoothedTvRomberg
        } else {
            SelectionRule::SmoothedTvPlain
        },
        base,
        delta: base.powf(delta_exp),
        n_required: minimal_n(base.powf(vn_exp), dim)?,
        epsilon: Some(epsilon),
        clamped,
    })
}

// ---------------------------------------------------------------------------
// kernel density estimation

/// Contributions beyond this many bandwidths are dropped (< e^-32 each).
const KERNEL_CUTOFF: f64 = 8.0;

#[derive(Clone, Debug, Serialize)]
pub struct DensityEstimate {
    pub dim: usize,
    /// Flat row-major G x d evaluation points.
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub method: String,
    pub delta: f64,
    pub particles: usize,
    /// Extrapolated estimates are signed; negative values are reported
    /// as-is and flagged, not clipped.
    pub has_negative: bool,
}

fn kernel_norm(dim: usize, delta: f64) -> f64 {
    (2.0 * std::f64::consts::PI).powf(-0.5 * dim as f64) * delta.powi(-(dim as i32))
}

/// Plain kernel sum at the grid points, bucketed by coordinate (d = 1) or a
/// uniform spatial hash (d >= 2). The same cutoff is applied in every code
/// path, so bucketed and brute-force sums agree to rounding.
fn kde_values(positions: &[f64], dim: usize, grid: &[f64], delta: f64) -> Vec<f64> {
    let n = positions.len() / dim;
    let norm = kernel_norm(dim, delta);
    let inv2d2 = 1.0 / (2.0 * delta * delta);
    let cutoff = KERNEL_CUTOFF * delta;

    if dim == 1 {
        let mut sorted: Vec<f64> = positions.to_vec();
        sorted.sort_by(f64::total_cmp);
        grid.par_iter()
            .map(|&x| {
                let lo = sorted.partition_point(|&p| p < x - cutoff);
                let hi = sorted.partition_point(|&p| p <= x + cutoff);
                let mut sum = 0.0;
                for &p in &sorted[lo..hi] {
                    let d = p - x;
                    sum += (-d * d * inv2d2).exp();
                }
                sum * norm / n as f64
            })
            .collect()
    } else {
        let cell = cutoff.max(1e-300);
        let key = |p: &[f64]| -> Vec<i64> { p.iter().map(|c| (c / cell).floor() as i64).collect() };
        let mut hash: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
        for i in 0..n {
            hash.entry(key(&positions[i * dim..(i + 1) * dim]))
                .or_default()
                .push(i);
        }
        let points: Vec<&[f64]> = grid.chunks_exact(dim).collect();
        points
            .par_iter()
            .map(|x| {
                let base = key(x);
                let mut candidates: Vec<usize> = Vec::new();
                let mut offsets = vec![-1i64; dim];
                loop {
                    let probe: Vec<i64> = base.iter().zip(&offsets).map(|(b, o)| b + o).collect();
                    if let Some(list) = hash.get(&probe) {
                        candidates.extend_from_slice(list);
                    }
                    let mut carry = 0;
                    while carry < dim {
                        offsets[carry] += 1;
                        if offsets[carry] <= 1 {
                            break;
                        }
                        offsets[carry] = -1;
                        carry += 1;
                    }
                    if carry == dim {
                        break;
                    }
                }
                candidates.sort_unstable();
                let mut sum = 0.0;
                for i in candidates {
                    let p = &positions[i * dim..(i + 1) * dim];
                    let mut sq = 0.0;
                    for (pc, xc) in p.iter().zip(x.iter()) {
                        let d = pc - xc;
                        sq += d * d;
                    }
                    if sq <= cutoff * cutoff {
                        sum += (-sq * inv2d2).exp();
                    }
                }
                sum * norm / n as f64
            })
            .collect()
    }
}

/// Reference kernel sum without bucketing (same cutoff), for tests and for
/// quadrature over the estimate.
pub fn kde_values_bruteforce(positions: &[f64], dim: usize, grid: &[f64], delta: f64) -> Vec<f64> {
    let n = positions.len() / dim;
    let norm = kernel_norm(dim, delta);
    let inv2d2 = 1.0 / (2.0 * delta * delta);
    let cutoff2 = (KERNEL_CUTOFF * delta).powi(2);
    grid.chunks_exact(dim)
        .map(|x| {
            let mut sum = 0.0;
            for p in positions.chunks_exact(dim) {
                let mut sq = 0.0;
                for (pc, xc) in p.iter().zip(x.iter()) {
                    let d = pc - xc;
                    sq += d * d;
                }
                if sq <= cutoff2 {
                    sum += (-sq * inv2d2).exp();
                }
            }
            sum * norm / n as f64
        })
        .collect()
}

/// Kernel density estimate on a grid of points (flat, row-major G x d).
///
/// With `romberg` set, returns 2 * plain(delta/sqrt(2)) - plain(delta)
/// pointwise.
pub fn kde_estimate(
    positions: &[f64],
    dim: usize,
    grid: &[f64],
    delta: f64,
    romberg: bool,
) -> Result<DensityEstimate> {
    if !(delta > 0.0) {
        return Err(Error::config("delta must be positive"));
    }
    if dim == 0 || positions.len() % dim != 0 || grid.len() % dim != 0 {
        return Err(Error::config("positions/grid not divisible by dimension"));
    }
    if positions.is_empty() {
        return Err(Error::config("empty ensemble"));
    }
    let values = if romberg {
        let fine = kde_values(positions, dim, grid, delta / 2.0f64.sqrt());
        let coarse = kde_values(positions, dim, grid, delta);
        fine.iter().zip(&coarse).map(|(f, c)| 2.0 * f - c).collect()
    } else {
        kde_values(positions, dim, grid, delta)
    };
    let has_negative = values.iter().any(|v| *v < 0.0);
    Ok(DensityEstimate {
        dim,
        grid: grid.to_vec(),
        values,
        method: if romberg { "romberg" } else { "plain" }.to_string(),
        delta,
        particles: positions.len() / dim,
        has_negative,
    })
}

// ---------------------------------------------------------------------------
// smoothed functionals

pub type BoundedFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Bounded test function for the smoothed-functional estimator.
#[derive(Clone)]
pub enum TestFunction {
    /// Indicator of an axis-aligned box; use +-infinity for half-spaces.
    Box { lower: Vec<f64>, upper: Vec<f64> },
    /// cos(<freq, x> + phase).
    Trig { freq: Vec<f64>, phase: f64 },
    /// Arbitrary bounded function (Monte Carlo smoothing only).
    Custom { f: BoundedFn, bound: f64 },
}

impl TestFunction {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            TestFunction::Box { lower, upper } => {
                let inside = x
                    .iter()
                    .zip(lower.iter().zip(upper))
                    .all(|(c, (l, u))| *c > *l && *c <= *u);
                if inside {
                    1.0
                } else {
                    0.0
                }
            }
            TestFunction::Trig { freq, phase } => {
                let dot: f64 = x.iter().zip(freq).map(|(a, b)| a * b).sum();
                (dot + phase).cos()
            }
            TestFunction::Custom { f, .. } => f(x),
        }
    }

    pub fn bound(&self) -> f64 {
        match self {
            TestFunction::Box { .. } | TestFunction::Trig { .. } => 1.0,
            TestFunction::Custom { bound, .. } => *bound,
        }
    }

    /// E f(x + delta * G), G standard Gaussian, when a closed form exists.
    fn smoothed_at(&self, x: &[f64], delta: f64) -> Option<f64> {
        match self {
            TestFunction::Box { lower, upper } => {
                let mut prod = 1.0;
                for (c, (l, u)) in x.iter().zip(lower.iter().zip(upper)) {
                    let hi = if u.is_infinite() && *u > 0.0 {
                        1.0
                    } else {
                        normal_cdf((u - c) / delta)
                    };
                    let lo = if l.is_infinite() && *l < 0.0 {
                        0.0
                    } else {
                        normal_cdf((l - c) / delta)
                    };
                    prod *= hi - lo;
                }
                Some(prod)
            }
            TestFunction::Trig { freq, phase } => {
                let dot: f64 = x.iter().zip(freq).map(|(a, b)| a * b).sum();
                let a2: f64 = freq.iter().map(|f| f * f).sum();
                Some((dot + phase).cos() * (-0.5 * delta * delta * a2).exp())
            }
            TestFunction::Custom { .. } => None,
        }
    }
}

/// How the inner Gaussian expectation is evaluated.
#[derive(Clone, Copy, Debug)]
pub enum GaussMode {
    /// Closed form; only for box indicators and trigonometric functions.
    Analytic,
    /// Shared antithetic Gaussian draws across all particles.
    MonteCarlo { budget: usize, seed: u64 },
}

fn smoothed_plain(
    positions: &[f64],
    dim: usize,
    f: &TestFunction,
    delta: f64,
    mode: GaussMode,
) -> Result<f64> {
    let n = positions.len() / dim;
    match mode {
        GaussMode::Analytic => {
            let sums: Option<Vec<f64>> = positions
                .par_chunks_exact(dim)
                .map(|x| f.smoothed_at(x, delta))
                .collect();
            match sums {
                Some(s) => Ok(s.iter().sum::<f64>() / n as f64),
                None => Err(Error::config(
                    "analytic smoothing needs a box or trigonometric test function",
                )),
            }
        }
        GaussMode::MonteCarlo { budget, seed } => {
            if budget < 2 {
                return Err(Error::config("gaussian budget must be >= 2"));
            }
            let pairs = budget / 2;
            let fam = StreamFamily::new(seed);
            let mut rng = fam.stream(Purpose::Smoothing, 0, 0, 0);
            let mut draws = vec![0.0; pairs * dim];
            for g in draws.iter_mut() {
                *g = StandardNormal.sample(&mut rng);
            }
            let total: f64 = positions
                .par_chunks_exact(dim)
                .map(|x| {
                    let mut acc = 0.0;
                    let mut shifted = vec![0.0; dim];
                    for m in 0..pairs {
                        let g = &draws[m * dim..(m + 1) * dim];
                        for j in 0..dim {
                            shifted[j] = x[j] + delta * g[j];
                        }
                        acc += f.eval(&shifted);
                        for j in 0..dim {
                            shifted[j] = x[j] - delta * g[j];
                        }
                        acc += f.eval(&shifted);
                    }
                    acc / (2 * pairs) as f64
                })
                .sum();
            Ok(total / n as f64)
        }
    }
}

/// Smoothed expectation (1/N) sum_i E f(X^i + delta G).
///
/// With `romberg`, returns 2 * plain(delta/sqrt(2)) - plain(delta); in Monte
/// Carlo mode both bandwidths share the same draws.
pub fn smoothed_expectation(
    positions: &[f64],
    dim: usize,
    f: &TestFunction,
    delta: f64,
    romberg: bool,
    mode: GaussMode,
) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::config("delta must be positive"));
    }
    if positions.is_empty() || dim == 0 || positions.len() % dim != 0 {
        return Err(Error::config("invalid ensemble"));
    }
    if romberg {
        let fine = smoothed_plain(positions, dim, f, delta / 2.0f64.sqrt(), mode)?;
        let coarse = smoothed_plain(positions, dim, f, delta, mode)?;
        Ok(2.0 * fine - coarse)
    } else {
        smoothed_plain(positions, dim, f, delta, mode)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::{self, QuadTol};

    const INV_SQRT_2PI: f64 = 0.3989422804014327;

    #[test]
    fn v_n_values() {
        assert!((v_n(10_000, 1) - 0.01).abs() < 1e-15);
        assert!((v_n(100, 2) - 0.1 * 101.0f64.ln()).abs() < 1e-12);
        assert!((v_n(1000, 3) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn density_selection_worked_values() {
        let p = select_density_params(0.01, 1e-4, 1, false).unwrap();
        assert!((p.base - 0.02).abs() < 1e-15);
        assert!((p.delta / 0.02f64.powf(0.25) - 1.0).abs() < 1e-12);
        assert_eq!(p.n_required, 2500);

        let pr = select_density_params(0.01, 1e-4, 1, true).unwrap();
        assert!((pr.delta / 0.02f64.powf(1.0 / 6.0) - 1.0).abs() < 1e-12);
        assert_eq!(pr.n_required, 2500);

        let p3 = select_density_params(0.02, 0.0, 3, false).unwrap();
        assert_eq!(p3.n_required, 125_000);
    }

    #[test]
    fn density_selection_d2_bisection() {
        let p = select_density_params(0.02, 0.0, 2, false).unwrap();
        assert!(v_n(p.n_required, 2) <= 0.02 * (1.0 + 1e-9));
        assert!(v_n(p.n_required - 1, 2) > 0.02);
    }

    #[test]
    fn tv_selection_worked_values() {
        let p = select_tv_params(0.001, 0.0, 1, 0.5, false).unwrap();
        assert!((p.delta / 0.001f64.powf(1.0 / 3.0) - 1.0).abs() < 1e-12);
        assert_eq!(p.n_required, 10_000_000);

        let pr = select_tv_params(0.001, 0.0, 1, 0.5, true).unwrap();
        assert!((pr.delta / 10f64.powf(-0.625) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tv_selection_small_epsilon_limit() {
        let p = select_tv_params(0.04, 0.0, 1, 1e-9, false).unwrap();
        assert!((p.delta - 0.04f64.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn selection_rejects_degenerate_base() {
        assert!(select_density_params(0.0, 0.0, 1, false).is_err());
        assert!(select_tv_params(0.0, 0.0, 1, 0.5, false).is_err());
        assert!(select_tv_params(0.01, 0.0, 1, 1.5, false).is_err());
    }

    #[test]
    fn selection_clamps_large_base() {
        let p = select_density_params(1.5, 0.0, 1, false).unwrap();
        assert!(p.clamped);
        assert!((p.base - 1.0).abs() < 1e-15);
    }

    #[test]
    fn kernel_at_center() {
        let est = kde_estimate(&[0.0], 1, &[0.0], 1.0, false).unwrap();
        assert!((est.values[0] - INV_SQRT_2PI).abs() < 1e-15);
    }

    #[test]
    fn romberg_all_particles_at_origin() {
        // 2 phi_{0.5/sqrt2}(0) - phi_{0.5}(0) = (4 sqrt2 - 2) / sqrt(2 pi)
        let positions = vec![0.0; 100];
        let est = kde_estimate(&positions, 1, &[0.0], 0.5, true).unwrap();
        let expect = (4.0 * 2.0f64.sqrt() - 2.0) * INV_SQRT_2PI;
        assert!((est.values[0] - expect).abs() < 1e-12, "{}", est.values[0]);
        assert!((expect - 1.4588737733881597).abs() < 1e-12);
        assert!(!est.has_negative);
    }

    #[test]
    fn romberg_negative_values_are_flagged_not_clipped() {
        // a lone particle: the extrapolated estimate is negative a few
        // bandwidths away from it
        let est = kde_estimate(&[0.0], 1, &[1.0], 0.4, true).unwrap();
        assert!(est.values[0] < 0.0, "{}", est.values[0]);
        assert!(est.has_negative);
    }

    #[test]
    fn romberg_identity_pointwise() {
        let fam = StreamFamily::new(9);
        let mut rng = fam.stream(Purpose::Diagnostic, 0, 0, 0);
        let positions: Vec<f64> = (0..400).map(|_| StandardNormal.sample(&mut rng)).collect();
        let grid: Vec<f64> = (-8..=8).map(|i| 0.4 * i as f64).collect();
        let plain_fine = kde_estimate(&positions, 1, &grid, 0.3 / 2.0f64.sqrt(), false).unwrap();
        let plain = kde_estimate(&positions, 1, &grid, 0.3, false).unwrap();
        let romberg = kde_estimate(&positions, 1, &grid, 0.3, true).unwrap();
        for ((r, f), c) in romberg
            .values
            .iter()
            .zip(&plain_fine.values)
            .zip(&plain.values)
        {
            assert_eq!(*r, 2.0 * f - c);
        }
    }

    #[test]
    fn bucketing_matches_bruteforce() {
        let fam = StreamFamily::new(10);
        let mut rng = fam.stream(Purpose::Diagnostic, 0, 0, 0);
        // d = 1
        let positions: Vec<f64> = (0..5000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let grid: Vec<f64> = (-10..=10).map(|i| 0.3 * i as f64).collect();
        let fast = kde_values(&positions, 1, &grid, 0.2);
        let slow = kde_values_bruteforce(&positions, 1, &grid, 0.2);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() <= 1e-12);
        }
        // d = 2
        let positions2: Vec<f64> = (0..6000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let grid2: Vec<f64> =
            vec![0.0, 0.0, 0.5, -0.3, -1.0, 1.2, 2.0, 2.0, -2.5, 0.1, 0.7, 0.7];
        let fast2 = kde_values(&positions2, 2, &grid2, 0.25);
        let slow2 = kde_values_bruteforce(&positions2, 2, &grid2, 0.25);
        for (a, b) in fast2.iter().zip(&slow2) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn gaussian_ensemble_matches_convolution() {
        // particles iid N(0,1): expected estimate at 0 is N(0, 1+delta^2)(0)
        let n = 1_000_000usize;
        let fam = StreamFamily::new(77);
        let positions: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = fam.stream(Purpose::Diagnostic, i as u64, 0, 0);
                StandardNormal.sample(&mut rng)
            })
            .collect();
        let delta = 0.5;
        let est = kde_estimate(&positions, 1, &[0.0], delta, false).unwrap();
        let expect = INV_SQRT_2PI / (1.0 + delta * delta).sqrt();
        // analytic variance of the kernel average under the Gaussian law
        let e2 = 0.5 / (std::f64::consts::PI.sqrt() * delta) * INV_SQRT_2PI
            / (1.0 + 0.5 * delta * delta).sqrt();
        let se = ((e2 - expect * expect) / n as f64).sqrt();
        assert!(
            (est.values[0] - expect).abs() < 3.0 * se,
            "{} vs {expect} (se {se})",
            est.values[0]
        );
    }

    #[test]
    fn plain_estimate_integrates_to_one() {
        let fam = StreamFamily::new(31);
        let mut rng = fam.stream(Purpose::Diagnostic, 0, 0, 0);
        let positions: Vec<f64> = (0..2000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let delta = 0.3;
        let integral = quad::integrate(
            |x| kde_values_bruteforce(&positions, 1, &[x], delta)[0],
            -10.0,
            10.0,
            QuadTol {
                abs: 1e-6,
                rel: 1e-6,
            },
        )
        .unwrap();
        assert!((integral - 1.0).abs() < 1e-3, "integral {integral}");
    }

    #[test]
    fn smoothed_constant_is_exact() {
        let f = TestFunction::Box {
            lower: vec![f64::NEG_INFINITY],
            upper: vec![f64::INFINITY],
        };
        let v = smoothed_expectation(&[0.3, -0.7, 2.0], 1, &f, 0.5, false, GaussMode::Analytic)
            .unwrap();
        assert_eq!(v, 1.0);
    }

    #[test]
    fn smoothed_half_space_symmetry() {
        let f = TestFunction::Box {
            lower: vec![f64::NEG_INFINITY],
            upper: vec![0.0],
        };
        let v = smoothed_expectation(&[0.0], 1, &f, 0.7, false, GaussMode::Analytic).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn smoothed_half_space_cdf_value() {
        let f = TestFunction::Box {
            lower: vec![f64::NEG_INFINITY],
            upper: vec![1.0],
        };
        let v = smoothed_expectation(&[0.0], 1, &f, 1.0, false, GaussMode::Analytic).unwrap();
        assert!((v - 0.8413447460685429).abs() < 1e-12);
    }

    #[test]
    fn monte_carlo_smoothing_converges_to_analytic() {
        let f = TestFunction::Box {
            lower: vec![-0.5],
            upper: vec![0.8],
        };
        let positions = vec![0.1, -0.4, 0.9, 2.0];
        let exact =
            smoothed_expectation(&positions, 1, &f, 0.6, false, GaussMode::Analytic).unwrap();
        let mc = smoothed_expectation(
            &positions,
            1,
            &f,
            0.6,
            false,
            GaussMode::MonteCarlo {
                budget: 400_000,
                seed: 4,
            },
        )
        .unwrap();
        assert!((mc - exact).abs() < 5e-3, "{mc} vs {exact}");
        assert!(smoothed_expectation(
            &positions,
            1,
            &f,
            0.6,
            false,
            GaussMode::MonteCarlo { budget: 1, seed: 4 }
        )
        .is_err());
    }

    #[test]
    fn smoothed_box_equals_kde_integral() {
        let fam = StreamFamily::new(13);
        let mut rng = fam.stream(Purpose::Diagnostic, 0, 0, 0);
        let positions: Vec<f64> = (0..300).map(|_| StandardNormal.sample(&mut rng)).collect();
        let (a, b) = (-0.8, 1.1);
        let delta = 0.4;
        let f = TestFunction::Box {
            lower: vec![a],
            upper: vec![b],
        };
        let smoothed =
            smoothed_expectation(&positions, 1, &f, delta, false, GaussMode::Analytic).unwrap();
        let integral = quad::integrate(
            |x| kde_values_bruteforce(&positions, 1, &[x], delta)[0],
            a,
            b,
            QuadTol {
                abs: 1e-13,
                rel: 1e-13,
            },
        )
        .unwrap();
        assert!(
            (smoothed - integral).abs() < 1e-10,
            "{smoothed} vs {integral}"
        );
    }

    #[test]
    fn trig_smoothing_closed_form() {
        let f = TestFunction::Trig {
            freq: vec![2.0],
            phase: 0.3,
        };
        let x = [0.7f64];
        let delta = 0.4f64;
        let exact = (2.0 * x[0] + 0.3).cos() * (-0.5 * delta * delta * 4.0).exp();
        let v = smoothed_expectation(&x, 1, &f, delta, false, GaussMode::Analytic).unwrap();
        assert!((v - exact).abs() < 1e-14);
        let mc = smoothed_expectation(
            &x,
            1,
            &f,
            delta,
            false,
            GaussMode::MonteCarlo {
                budget: 200_000,
                seed: 8,
            },
        )
        .unwrap();
        assert!((mc - exact).abs() < 5e-3);
    }
}
