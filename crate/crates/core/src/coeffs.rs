//! Drift and jump coefficients, their declared envelopes, and numeric
//! validation of the regularity/ellipticity/inverse-flow hypotheses.
//!
//! The empirical measure enters coefficients only through [`MeasureSummary`]
//! (a read-only view of the particle positions plus cached moments). The
//! built-in models use only the mean, but user models may scan positions.

use std::sync::Arc;

use rand::RngExt;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::envelope::Envelope;
use crate::error::{Error, Result};
use crate::levy::{self, LevyMeasureModel};
use crate::stream::{Purpose, StreamFamily};

/// Read-only snapshot of an empirical measure: positions plus cached mean
/// and second-moment matrix.
pub struct MeasureSummary<'a> {
    positions: &'a [f64],
    count: usize,
    dim: usize,
    mean: Vec<f64>,
    second_moment: Vec<f64>,
}

impl<'a> MeasureSummary<'a> {
    pub fn new(positions: &'a [f64], dim: usize) -> Self {
        assert!(dim > 0 && positions.len() % dim == 0);
        let count = positions.len() / dim;
        let mut mean = vec![0.0; dim];
        let mut second_moment = vec![0.0; dim * dim];
        for p in positions.chunks_exact(dim) {
            for (m, x) in mean.iter_mut().zip(p) {
                *m += x;
            }
            for i in 0..dim {
                for j in 0..dim {
                    second_moment[i * dim + j] += p[i] * p[j];
                }
            }
        }
        let inv = if count > 0 { 1.0 / count as f64 } else { 0.0 };
        for m in mean.iter_mut() {
            *m *= inv;
        }
        for s in second_moment.iter_mut() {
            *s *= inv;
        }
        MeasureSummary {
            positions,
            count,
            dim,
            mean,
            second_moment,
        }
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Row-major d x d matrix of E[X_i X_j].
    pub fn second_moment(&self) -> &[f64] {
        &self.second_moment
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn positions(&self) -> &[f64] {
        self.positions
    }
}

pub type DriftFn =
    Arc<dyn Fn(f64, &[f64], &MeasureSummary<'_>, &mut [f64]) + Send + Sync>;
pub type JumpFn =
    Arc<dyn Fn(f64, &[f64], &[f64], &[f64], &MeasureSummary<'_>, &mut [f64]) + Send + Sync>;

pub struct CoefficientModel {
    name: String,
    dim: usize,
    drift: DriftFn,
    jump: JumpFn,
    cbar: Envelope,
    cunder: Envelope,
    cbreve: Option<Envelope>,
    lipschitz_b: f64,
    check_envelope: bool,
}

impl CoefficientModel {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        drift: DriftFn,
        jump: JumpFn,
        cbar: Envelope,
        cunder: Envelope,
    ) -> Self {
        CoefficientModel {
            name: name.into(),
            dim,
            drift,
            jump,
            cbar,
            cunder,
            cbreve: None,
            lipschitz_b: 0.0,
            check_envelope: true,
        }
    }

    pub fn with_cbar(mut self, e: Envelope) -> Self {
        self.cbar = e;
        self
    }

    pub fn with_cunder(mut self, e: Envelope) -> Self {
        self.cunder = e;
        self
    }

    pub fn with_cbreve(mut self, e: Envelope) -> Self {
        self.cbreve = Some(e);
        self
    }

    pub fn with_lipschitz_b(mut self, l: f64) -> Self {
        self.lipschitz_b = l;
        self
    }

    /// Disable the debug-build envelope assertion (for deliberately
    /// non-conforming test models).
    pub fn without_envelope_check(mut self) -> Self {
        self.check_envelope = false;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cbar(&self) -> &Envelope {
        &self.cbar
    }

    pub fn cunder(&self) -> &Envelope {
        &self.cunder
    }

    /// Inverse-flow bound; defaults to the upper envelope when not declared.
    pub fn cbreve(&self) -> &Envelope {
        self.cbreve.as_ref().unwrap_or(&self.cbar)
    }

    pub fn lipschitz_b(&self) -> f64 {
        self.lipschitz_b
    }

    /// Drift b(r, x, rho) written into `out`.
    pub fn eval_drift(
        &self,
        r: f64,
        x: &[f64],
        rho: &MeasureSummary<'_>,
        out: &mut [f64],
    ) -> Result<()> {
        (self.drift)(r, x, rho, out);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "drift of model {} at r={r}, x={x:?}",
                self.name
            )));
        }
        Ok(())
    }

    /// Jump coefficient c(r, v, z, x, rho) written into `out`.
    pub fn eval_jump(
        &self,
        r: f64,
        v: &[f64],
        z: &[f64],
        x: &[f64],
        rho: &MeasureSummary<'_>,
        out: &mut [f64],
    ) -> Result<()> {
        (self.jump)(r, v, z, x, rho, out);
        if out.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite(format!(
                "jump coefficient of model {} at r={r}, v={v:?}, z={z:?}, x={x:?}",
                self.name
            )));
        }
        #[cfg(debug_assertions)]
        if self.check_envelope {
            let bound = self.cbar.eval(norm(z));
            let len = norm(out);
            if len > bound * (1.0 + 1e-9) + 1e-12 {
                return Err(Error::NonFinite(format!(
                    "jump coefficient of model {} exceeds its declared envelope: |c|={len} > cbar={bound} at z={z:?}",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

// ---------------------------------------------------------------------------
// built-in models

/// b = 0, c = 0.
pub fn zero(dim: usize) -> CoefficientModel {
    CoefficientModel::new(
        "zero",
        dim,
        Arc::new(|_, _, _, out: &mut [f64]| out.fill(0.0)),
        Arc::new(|_, _, _, _, _, out: &mut [f64]| out.fill(0.0)),
        Envelope::Zero,
        Envelope::Zero,
    )
}

/// Mean-reverting drift b = mean(rho) - x, no jumps.
pub fn mean_revert(dim: usize) -> CoefficientModel {
    CoefficientModel::new(
        "mean-revert",
        dim,
        Arc::new(|_, x: &[f64], rho: &MeasureSummary<'_>, out: &mut [f64]| {
            for ((o, m), xi) in out.iter_mut().zip(rho.mean()).zip(x) {
                *o = m - xi;
            }
        }),
        Arc::new(|_, _, _, _, _, out: &mut [f64]| out.fill(0.0)),
        Envelope::Zero,
        Envelope::Zero,
    )
    .with_lipschitz_b(1.0)
}

/// Declared envelope amplitude for the pair-interaction model: the honest
/// bound scales with |v - x|, which is unbounded, so the declared envelope
/// assumes ensembles of diameter at most this value.
pub const PAIR_ENVELOPE_DIAMETER: f64 = 64.0;

/// Pair interaction c = exp(-decay |z|) (v - x), no drift.
pub fn kac(dim: usize, decay: f64) -> CoefficientModel {
    CoefficientModel::new(
        format!("kac(decay={decay})"),
        dim,
        Arc::new(|_, _, _, out: &mut [f64]| out.fill(0.0)),
        Arc::new(
            move |_, v: &[f64], z: &[f64], x: &[f64], _: &MeasureSummary<'_>, out: &mut [f64]| {
                let a = (-decay * norm(z)).exp();
                for ((o, vi), xi) in out.iter_mut().zip(v).zip(x) {
                    *o = a * (vi - xi);
                }
            },
        ),
        Envelope::Exp {
            amp: PAIR_ENVELOPE_DIAMETER,
            rate: decay,
            power: 1.0,
        },
        Envelope::Zero,
    )
}

/// State-independent jumps c = exp(-decay |z|) e_1, no drift.
pub fn gamma_exp(dim: usize, decay: f64) -> CoefficientModel {
    CoefficientModel::new(
        format!("gamma-exp(decay={decay})"),
        dim,
        Arc::new(|_, _, _, out: &mut [f64]| out.fill(0.0)),
        Arc::new(
            move |_, _: &[f64], z: &[f64], _: &[f64], _: &MeasureSummary<'_>, out: &mut [f64]| {
                out.fill(0.0);
                out[0] = (-decay * norm(z)).exp();
            },
        ),
        Envelope::Exp {
            amp: 1.0,
            rate: decay,
            power: 1.0,
        },
        Envelope::Zero,
    )
}

/// The 1-d inverse-amplitude model c = sigma(x)/z with
/// sigma(x) = lo + (hi - lo) * (1 + tanh x) / 2, for amplitudes |z| >= 1.
pub fn sigma_inverse(sigma_lo: f64, sigma_hi: f64) -> CoefficientModel {
    let span = sigma_hi - sigma_lo;
    CoefficientModel::new(
        format!("sigma-inverse({sigma_lo},{sigma_hi})"),
        1,
        Arc::new(|_, _, _, out: &mut [f64]| out.fill(0.0)),
        Arc::new(
            move |_, _: &[f64], z: &[f64], x: &[f64], _: &MeasureSummary<'_>, out: &mut [f64]| {
                let sigma = sigma_lo + span * 0.5 * (1.0 + x[0].tanh());
                out[0] = sigma / z[0];
            },
        ),
        Envelope::InvPower {
            amp: sigma_hi,
            power: 1.0,
        },
        Envelope::InvPower {
            amp: sigma_lo,
            power: 4.0,
        },
    )
}

/// Attach a mean-reverting drift to an existing jump model.
pub fn with_mean_revert_drift(model: CoefficientModel) -> CoefficientModel {
    let name = format!("{}+mean-revert", model.name);
    CoefficientModel {
        name,
        drift: Arc::new(|_, x: &[f64], rho: &MeasureSummary<'_>, out: &mut [f64]| {
            for ((o, m), xi) in out.iter_mut().zip(rho.mean()).zip(x) {
                *o = m - xi;
            }
        }),
        lipschitz_b: 1.0,
        ..model
    }
}

// ---------------------------------------------------------------------------
// hypothesis validation

#[derive(Clone, Debug)]
pub struct ValidationOptions {
    pub sample_budget: usize,
    /// Base finite-difference step; scaled by (1 + |argument|) per point.
    pub fd_step: f64,
    /// Relative slack applied to the declared bounds.
    pub slack: f64,
    pub seed: u64,
    pub time_horizon: f64,
    /// Scale of the Gaussian cloud used to draw positions and partners.
    pub state_scale: f64,
    /// Number of random unit directions per sample point (ellipticity).
    pub directions: usize,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        ValidationOptions {
            sample_budget: 2000,
            fd_step: 1e-5,
            slack: 0.05,
            seed: 0x51_AC4,
            time_horizon: 1.0,
            state_scale: 2.0,
            directions: 4,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Witness {
    pub r: f64,
    pub v: Vec<f64>,
    pub z: Vec<f64>,
    pub x: Vec<f64>,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct HypothesisCheck {
    pub name: String,
    pub passed: bool,
    pub samples: usize,
    pub failures: usize,
    /// Smallest slack-adjusted margin seen (negative = violation).
    pub worst_margin: f64,
    pub witness: Option<Witness>,
}

impl HypothesisCheck {
    fn new(name: &str) -> Self {
        HypothesisCheck {
            name: name.to_string(),
            passed: true,
            samples: 0,
            failures: 0,
            worst_margin: f64::INFINITY,
            witness: None,
        }
    }

    fn record(&mut self, margin: f64, witness: impl FnOnce() -> Witness) {
        self.samples += 1;
        if margin < self.worst_margin {
            self.worst_margin = margin;
            if margin < 0.0 {
                self.witness = Some(witness());
            }
        }
        if margin < 0.0 {
            self.failures += 1;
            self.passed = false;
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    /// Coefficient and first-derivative bounds against the upper envelope.
    pub regularity: HypothesisCheck,
    /// Lower bound on the z-gradient quadratic form.
    pub ellipticity: HypothesisCheck,
    /// Operator-norm bound on grad_x c (I + grad_x c)^{-1}.
    pub inverse_flow: HypothesisCheck,
    /// cunder(z) <= cbar(z)^2 at sampled amplitudes.
    pub envelope_order: HypothesisCheck,
    /// Envelope moments (p, value) for p = 1, 2.
    pub moments: Vec<(f64, f64)>,
    pub moment_failures: Vec<String>,
    /// Conditions the sampler cannot check numerically.
    pub unvalidated: Vec<String>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.regularity.passed
            && self.ellipticity.passed
            && self.inverse_flow.passed
            && self.envelope_order.passed
            && self.moment_failures.is_empty()
    }
}

/// Central-difference Jacobian of c in its z argument (columns = d/dz_j).
pub fn fd_jacobian_z(
    model: &CoefficientModel,
    r: f64,
    v: &[f64],
    z: &[f64],
    x: &[f64],
    rho: &MeasureSummary<'_>,
    step: f64,
) -> Result<Vec<f64>> {
    let d = model.dim;
    let mut jac = vec![0.0; d * d];
    let mut zp = z.to_vec();
    let mut plus = vec![0.0; d];
    let mut minus = vec![0.0; d];
    for j in 0..d {
        let h = step * (1.0 + z[j].abs());
        zp[j] = z[j] + h;
        model.eval_jump(r, v, &zp, x, rho, &mut plus)?;
        zp[j] = z[j] - h;
        model.eval_jump(r, v, &zp, x, rho, &mut minus)?;
        zp[j] = z[j];
        for i in 0..d {
            jac[i * d + j] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

fn fd_jacobian_x(
    model: &CoefficientModel,
    r: f64,
    v: &[f64],
    z: &[f64],
    x: &[f64],
    rho: &MeasureSummary<'_>,
    step: f64,
) -> Result<Vec<f64>> {
    let d = model.dim;
    let mut jac = vec![0.0; d * d];
    let mut xp = x.to_vec();
    let mut plus = vec![0.0; d];
    let mut minus = vec![0.0; d];
    for j in 0..d {
        let h = step * (1.0 + x[j].abs());
        xp[j] = x[j] + h;
        model.eval_jump(r, v, z, &xp, rho, &mut plus)?;
        xp[j] = x[j] - h;
        model.eval_jump(r, v, z, &xp, rho, &mut minus)?;
        xp[j] = x[j];
        for i in 0..d {
            jac[i * d + j] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// A (I + A)^{-1}, or None when I + A is singular. A commutes with I + A,
/// so solving (I + A) Y = A gives the same matrix.
fn flow_matrix(a: &[f64], d: usize) -> Option<Vec<f64>> {
    // Gauss-Jordan with partial pivoting on [I + A | A]
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            m[i * d + j] = a[i * d + j] + if i == j { 1.0 } else { 0.0 };
        }
    }
    let mut rhs = a.to_vec();
    for col in 0..d {
        let mut piv = col;
        for row in col + 1..d {
            if m[row * d + col].abs() > m[piv * d + col].abs() {
                piv = row;
            }
        }
        if m[piv * d + col].abs() < 1e-12 {
            return None;
        }
        if piv != col {
            for j in 0..d {
                m.swap(col * d + j, piv * d + j);
                rhs.swap(col * d + j, piv * d + j);
            }
        }
        let inv = 1.0 / m[col * d + col];
        for row in 0..d {
            if row == col {
                continue;
            }
            let f = m[row * d + col] * inv;
            if f == 0.0 {
                continue;
            }
            for j in 0..d {
                m[row * d + j] -= f * m[col * d + j];
                rhs[row * d + j] -= f * rhs[col * d + j];
            }
        }
    }
    // the eliminated matrix is diagonal; finish by scaling each row
    for col in 0..d {
        let inv = 1.0 / m[col * d + col];
        for j in 0..d {
            rhs[col * d + j] *= inv;
        }
    }
    Some(rhs)
}

/// Spectral norm by power iteration on A^T A.
fn operator_norm(a: &[f64], d: usize) -> f64 {
    let mut v: Vec<f64> = (0..d).map(|i| 1.0 / (1.0 + i as f64)).collect();
    let mut tmp = vec![0.0; d];
    let mut w = vec![0.0; d];
    let mut lambda = 0.0;
    for _ in 0..128 {
        // tmp = A v; w = A^T tmp
        for i in 0..d {
            tmp[i] = (0..d).map(|j| a[i * d + j] * v[j]).sum();
        }
        for j in 0..d {
            w[j] = (0..d).map(|i| a[i * d + j] * tmp[i]).sum();
        }
        let n = norm(&w);
        if n < 1e-300 {
            return 0.0;
        }
        lambda = n;
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / n;
        }
    }
    lambda.sqrt()
}

/// Draw random evaluation tuples and check the declared hypotheses by
/// central finite differences.
///
/// Every eighth sample deliberately sets the partner equal to the position,
/// so pair-interaction models that are elliptic only away from v = x get
/// flagged (reported, not fatal).
pub fn validate_hypotheses(
    model: &CoefficientModel,
    levy: &LevyMeasureModel,
    opts: &ValidationOptions,
) -> Result<ValidationReport> {
    if opts.sample_budget < 1000 {
        return Err(Error::config("validation sample budget must be >= 1000"));
    }
    let d = model.dim;
    let fam = StreamFamily::new(opts.seed);
    let mut rng = fam.stream(Purpose::Probe, 0, 0, 0);

    // fixed background ensemble for the measure argument
    let n_rho = 16;
    let mut rho_positions = vec![0.0; n_rho * d];
    for p in rho_positions.iter_mut() {
        let g: f64 = StandardNormal.sample(&mut rng);
        *p = g;
    }
    let rho = MeasureSummary::new(&rho_positions, d);

    let rings: Vec<usize> = (1..=levy.max_ring().min(6))
        .filter(|&k| levy.annulus_mass(k).map(|m| m > 0.0).unwrap_or(false))
        .collect();
    if rings.is_empty() {
        return Err(Error::numeric("no ring with positive mass to sample from"));
    }

    let mut regularity = HypothesisCheck::new("regularity-envelope");
    let mut ellipticity = HypothesisCheck::new("ellipticity");
    let mut inverse_flow = HypothesisCheck::new("inverse-flow");
    let mut envelope_order = HypothesisCheck::new("cunder <= cbar^2");

    let mut c = vec![0.0; d];
    let mut zeta = vec![0.0; d];
    for s in 0..opts.sample_budget {
        let r = opts.time_horizon * rng.random::<f64>();
        let mut x = vec![0.0; d];
        for xi in x.iter_mut() {
            let g: f64 = StandardNormal.sample(&mut rng);
            *xi = opts.state_scale * g;
        }
        let v = if s % 8 == 7 {
            x.clone()
        } else {
            let mut v = vec![0.0; d];
            for vi in v.iter_mut() {
                let g: f64 = StandardNormal.sample(&mut rng);
                *vi = opts.state_scale * g;
            }
            v
        };
        let ring = rings[s % rings.len()];
        let z = levy.sample_in_annulus(ring, &mut rng)?;
        let zr = norm(&z);
        let cbar = model.cbar().eval(zr);
        let cunder = model.cunder().eval(zr);
        let cbreve = model.cbreve().eval(zr);

        let witness = |detail: String| {
            let (v, z, x) = (v.clone(), z.clone(), x.clone());
            move || Witness { r, v, z, x, detail }
        };

        // (a) |c| and first derivatives against the upper envelope
        (model.jump)(r, &v, &z, &x, &rho, &mut c);
        if c.iter().any(|ci| !ci.is_finite()) {
            regularity.record(
                f64::NEG_INFINITY,
                witness("non-finite coefficient".to_string()),
            );
            continue;
        }
        let jz = fd_jacobian_z(model, r, &v, &z, &x, &rho, opts.fd_step)?;
        let jx = fd_jacobian_x(model, r, &v, &z, &x, &rho, opts.fd_step)?;
        let mut sup = norm(&c);
        for j in 0..d {
            let col_z: f64 = (0..d).map(|i| jz[i * d + j].powi(2)).sum::<f64>().sqrt();
            let col_x: f64 = (0..d).map(|i| jx[i * d + j].powi(2)).sum::<f64>().sqrt();
            sup = sup.max(col_z).max(col_x);
        }
        regularity.record(
            cbar * (1.0 + opts.slack) - sup,
            witness(format!("|c| or first derivative {sup:.6e} vs cbar {cbar:.6e}")),
        );

        // (b) ellipticity of the z-gradient quadratic form
        for _ in 0..opts.directions {
            loop {
                let mut sq = 0.0;
                for zi in zeta.iter_mut() {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    *zi = g;
                    sq += g * g;
                }
                if sq > 1e-12 {
                    let inv = sq.sqrt().recip();
                    for zi in zeta.iter_mut() {
                        *zi *= inv;
                    }
                    break;
                }
            }
            let mut quad = 0.0;
            for j in 0..d {
                let dot: f64 = (0..d).map(|i| jz[i * d + j] * zeta[i]).sum();
                quad += dot * dot;
            }
            ellipticity.record(
                quad - cunder * (1.0 - opts.slack),
                witness(format!(
                    "gradient form {quad:.6e} vs cunder {cunder:.6e}"
                )),
            );
        }

        // (c) inverse tangent flow
        match flow_matrix(&jx, d) {
            Some(b) => {
                let nb = operator_norm(&b, d);
                inverse_flow.record(
                    cbreve * (1.0 + opts.slack) - nb,
                    witness(format!("|grad_x c (I+grad_x c)^-1| = {nb:.6e} vs cbreve {cbreve:.6e}")),
                );
            }
            None => {
                inverse_flow.record(
                    f64::NEG_INFINITY,
                    witness("singular I + grad_x c".to_string()),
                );
            }
        }

        // envelope ordering at the sampled amplitude
        envelope_order.record(
            cbar * cbar * (1.0 + opts.slack) - cunder,
            witness(format!("cunder {cunder:.6e} vs cbar^2 {:.6e}", cbar * cbar)),
        );
    }

    let mut moments = Vec::new();
    let mut moment_failures = Vec::new();
    for p in [1.0, 2.0] {
        match levy::cbar_moment(levy, model.cbar(), p) {
            Ok(m) => moments.push((p, m.value)),
            Err(e) => moment_failures.push(format!("moment p={p}: {e}")),
        }
    }

    Ok(ValidationReport {
        regularity,
        ellipticity,
        inverse_flow,
        envelope_order,
        moments,
        moment_failures,
        unvalidated: vec![
            "Lipschitz dependence on the measure argument (quantifies over all measure pairs)"
                .to_string(),
            "derivative bounds beyond first order".to_string(),
        ],
    })
}
