//! Independent reference values for tests: compound-Poisson moments by
//! quadrature, closed moment ODEs for drift-only mean-field models, exact
//! Gaussian-convolution densities, and an exact small-n assignment solver.
//!
//! Deliberately slow and simple: no bucketing, no parallelism, no shared
//! numerical kernels with the code under test beyond the intensity-measure
//! quadrature.

use serde::Serialize;

use crate::envelope::Envelope;
use crate::error::{Error, Result};
use crate::levy::{self, LevyMeasureModel};
use crate::quad::{self, QuadTol};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleMethod {
    Analytic,
    DirectMc,
    Ode,
}

#[derive(Clone, Debug, Serialize)]
pub struct OracleResult {
    pub quantity: String,
    pub value: f64,
    /// Zero for analytic results.
    pub std_error: f64,
    pub method: OracleMethod,
}

/// Mean and variance of the 1-d state-independent-jump scheme at time t:
/// X_t = X_0 + a Delta + sum of gamma(|z|) over truncated jumps.
///
/// mean = E X_0 + t * int_{B_M} gamma dmu,
/// var  = Var X_0 + a^2 + t * int_{B_M} gamma^2 dmu.
#[allow(clippy::too_many_arguments)]
pub fn compound_poisson_moments(
    levy: &LevyMeasureModel,
    cunder: &Envelope,
    gamma: impl Fn(f64) -> f64,
    ring_cutoff: usize,
    t: f64,
    horizon: f64,
    init_mean: f64,
    init_var: f64,
) -> Result<(OracleResult, OracleResult)> {
    if levy.dim() != 1 {
        return Err(Error::config(
            "compound-Poisson oracle is implemented for d = 1",
        ));
    }
    let tol = QuadTol::default();
    let lo = levy.support_lower_radius();
    let hi = ring_cutoff as f64;
    let profile = |r: f64| levy.radial_profile(r).expect("radial model");
    let first = if hi > lo {
        2.0 * quad::integrate(|r| gamma(r) * profile(r), lo, hi, tol)?
    } else {
        0.0
    };
    let second = if hi > lo {
        2.0 * quad::integrate(|r| gamma(r) * gamma(r) * profile(r), lo, hi, tol)?
    } else {
        0.0
    };
    let a = levy::tail_sigma(levy, cunder, ring_cutoff, horizon)?;
    Ok((
        OracleResult {
            quantity: "mean".to_string(),
            value: init_mean + t * first,
            std_error: 0.0,
            method: OracleMethod::Analytic,
        },
        OracleResult {
            quantity: "variance".to_string(),
            value: init_var + a * a + t * second,
            std_error: 0.0,
            method: OracleMethod::Analytic,
        },
    ))
}

/// Closed moment ODEs for the drift-only model b = A mean(rho) + B x (d = 1):
/// mean' = (A + B) mean, var' = 2 B var, integrated with fixed-step RK4.
pub fn meanfield_ode(
    a_coef: f64,
    b_coef: f64,
    t: f64,
    init_mean: f64,
    init_var: f64,
) -> (OracleResult, OracleResult) {
    let steps = 10_000usize;
    let h = t / steps as f64;
    let mean_rhs = |m: f64| (a_coef + b_coef) * m;
    let var_rhs = |v: f64| 2.0 * b_coef * v;
    let mut mean = init_mean;
    let mut var = init_var;
    for _ in 0..steps {
        let k1 = mean_rhs(mean);
        let k2 = mean_rhs(mean + 0.5 * h * k1);
        let k3 = mean_rhs(mean + 0.5 * h * k2);
        let k4 = mean_rhs(mean + h * k3);
        mean += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        let l1 = var_rhs(var);
        let l2 = var_rhs(var + 0.5 * h * l1);
        let l3 = var_rhs(var + 0.5 * h * l2);
        let l4 = var_rhs(var + h * l3);
        var += h / 6.0 * (l1 + 2.0 * l2 + 2.0 * l3 + l4);
    }
    (
        OracleResult {
            quantity: "mean".to_string(),
            value: mean,
            std_error: 0.0,
            method: OracleMethod::Ode,
        },
        OracleResult {
            quantity: "variance".to_string(),
            value: var,
            std_error: 0.0,
            method: OracleMethod::Ode,
        },
    )
}

// ---------------------------------------------------------------------------
// Gaussian convolution closed forms

pub fn gaussian_density(var: f64, x: f64) -> f64 {
    (2.0 * std::f64::consts::PI * var).powf(-0.5) * (-0.5 * x * x / var).exp()
}

/// Expected plain kernel estimate at x when the ensemble law is N(0, var).
pub fn smoothed_gaussian_density(var: f64, delta: f64, x: f64) -> f64 {
    gaussian_density(var + delta * delta, x)
}

/// Expected extrapolated kernel estimate at x under the N(0, var) law.
pub fn romberg_smoothed_gaussian_density(var: f64, delta: f64, x: f64) -> f64 {
    2.0 * smoothed_gaussian_density(var, delta / 2.0f64.sqrt(), x)
        - smoothed_gaussian_density(var, delta, x)
}

pub fn plain_kernel_bias(var: f64, delta: f64, x: f64) -> f64 {
    smoothed_gaussian_density(var, delta, x) - gaussian_density(var, x)
}

pub fn romberg_kernel_bias(var: f64, delta: f64, x: f64) -> f64 {
    romberg_smoothed_gaussian_density(var, delta, x) - gaussian_density(var, x)
}

/// Standard error of the plain kernel estimator at x for N particles drawn
/// from N(0, var).
pub fn plain_kernel_se(var: f64, delta: f64, x: f64, n: usize) -> f64 {
    let mean = smoothed_gaussian_density(var, delta, x);
    let second = 0.5 / (std::f64::consts::PI.sqrt() * delta)
        * gaussian_density(var + 0.5 * delta * delta, x);
    ((second - mean * mean).max(0.0) / n as f64).sqrt()
}

// ---------------------------------------------------------------------------
// exact assignment (for transport-distance oracles)

/// Minimal-cost perfect assignment on a square cost matrix (row-major),
/// O(n^3) potentials method. Returns column assigned to each row.
pub fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n);
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1]; // row assigned to column j (1-based)
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Exact empirical W1 between two equal-size samples via optimal assignment.
pub fn exact_w1_matching(sample_a: &[f64], sample_b: &[f64], dim: usize) -> Result<f64> {
    if dim == 0 || sample_a.len() % dim != 0 || sample_b.len() != sample_a.len() {
        return Err(Error::config("matching oracle needs equal N x d samples"));
    }
    let n = sample_a.len() / dim;
    if n == 0 {
        return Err(Error::config("empty sample"));
    }
    if n > 64 {
        return Err(Error::config("matching oracle is restricted to n <= 64"));
    }
    let mut cost = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut sq = 0.0;
            for c in 0..dim {
                let diff = sample_a[i * dim + c] - sample_b[j * dim + c];
                sq += diff * diff;
            }
            cost[i * n + j] = sq.sqrt();
        }
    }
    let assignment = hungarian(&cost, n);
    Ok(assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i * n + j])
        .sum::<f64>()
        / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::{Purpose, StreamFamily};
    use rand::RngExt;

    #[test]
    fn compound_poisson_closed_form() {
        let levy = LevyMeasureModel::lebesgue(1, 8).unwrap();
        let (mean, var) = compound_poisson_moments(
            &levy,
            &Envelope::Zero,
            |r| (-r).exp(),
            5,
            1.0,
            1.0,
            0.0,
            0.0,
        )
        .unwrap();
        let expect_mean = 2.0 * (1.0 - (-5.0f64).exp());
        let expect_var = 1.0 - (-10.0f64).exp();
        assert!((mean.value - expect_mean).abs() < 1e-9, "{}", mean.value);
        assert!((var.value - expect_var).abs() < 1e-9, "{}", var.value);
        assert_eq!(mean.method, OracleMethod::Analytic);
    }

    #[test]
    fn compound_poisson_zero_gamma() {
        let levy = LevyMeasureModel::lebesgue(1, 8).unwrap();
        let cunder = Envelope::Exp {
            amp: 1.0,
            rate: 2.0,
            power: 1.0,
        };
        let (mean, var) =
            compound_poisson_moments(&levy, &cunder, |_| 0.0, 5, 1.0, 1.0, 0.7, 0.2).unwrap();
        assert!((mean.value - 0.7).abs() < 1e-12);
        let a2 = (-10.0f64).exp();
        assert!((var.value - (0.2 + a2)).abs() < 1e-12);
    }

    #[test]
    fn compound_poisson_time_scaling() {
        let levy = LevyMeasureModel::lebesgue(1, 8).unwrap();
        let (m1, v1) = compound_poisson_moments(
            &levy,
            &Envelope::Zero,
            |r| (-r).exp(),
            5,
            1.0,
            1.0,
            0.0,
            0.0,
        )
        .unwrap();
        let (m2, v2) = compound_poisson_moments(
            &levy,
            &Envelope::Zero,
            |r| (-r).exp(),
            5,
            2.0,
            1.0,
            0.0,
            0.0,
        )
        .unwrap();
        assert!((m2.value - 2.0 * m1.value).abs() < 1e-12);
        assert!((v2.value - 2.0 * v1.value).abs() < 1e-12);
    }

    #[test]
    fn meanfield_ode_solutions() {
        // A = 1, B = -1: mean constant, var decays as e^{-2t}
        let (mean, var) = meanfield_ode(1.0, -1.0, 1.0, 0.5, 1.0);
        assert!((mean.value - 0.5).abs() < 1e-10);
        assert!((var.value - (-2.0f64).exp()).abs() < 1e-10);
        // b = 0
        let (m0, v0) = meanfield_ode(0.0, 0.0, 3.0, 0.4, 0.9);
        assert!((m0.value - 0.4).abs() < 1e-12);
        assert!((v0.value - 0.9).abs() < 1e-12);
        // b = -x: mean decays as e^{-t}
        let (m1, _) = meanfield_ode(0.0, -1.0, 1.0, 1.0, 0.0);
        assert!((m1.value - (-1.0f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn gaussian_forms() {
        let p0 = gaussian_density(1.0, 0.0);
        assert!((p0 - 0.3989422804014327).abs() < 1e-15);
        let sm = smoothed_gaussian_density(1.0, 0.5, 0.0);
        assert!((sm - 0.3989422804014327 / 1.25f64.sqrt()).abs() < 1e-15);
        // extrapolation halves at the matched bandwidth pair
        let r = romberg_smoothed_gaussian_density(1.0, 0.5, 0.0);
        assert!((r - (2.0 * gaussian_density(1.125, 0.0) - gaussian_density(1.25, 0.0))).abs() < 1e-15);
    }

    #[test]
    fn hungarian_matches_bruteforce() {
        fn permutations(n: usize) -> Vec<Vec<usize>> {
            if n == 1 {
                return vec![vec![0]];
            }
            let mut out = Vec::new();
            for p in permutations(n - 1) {
                for pos in 0..n {
                    let mut q: Vec<usize> = p
                        .iter()
                        .map(|&v| if v >= pos { v + 1 } else { v })
                        .collect();
                    q.insert(0, pos);
                    out.push(q);
                }
            }
            out
        }
        let fam = StreamFamily::new(21);
        let mut rng = fam.stream(Purpose::Diagnostic, 0, 0, 0);
        for trial in 0..20 {
            let n = 2 + (trial % 5);
            let cost: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>()).collect();
            let assignment = hungarian(&cost, n);
            let total: f64 = assignment
                .iter()
                .enumerate()
                .map(|(i, &j)| cost[i * n + j])
                .sum();
            let best = permutations(n)
                .into_iter()
                .map(|p| p.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            assert!((total - best).abs() < 1e-12, "n={n}: {total} vs {best}");
        }
    }

    #[test]
    fn matching_oracle_on_single_atoms() {
        assert_eq!(exact_w1_matching(&[0.0], &[1.0], 1).unwrap(), 1.0);
        // {0,2} vs {1,3}: optimal is the sorted pairing, cost 1
        let v = exact_w1_matching(&[0.0, 2.0], &[1.0, 3.0], 1).unwrap();
        assert_eq!(v, 1.0);
    }
}
