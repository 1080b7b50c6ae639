//! The jump intensity measure mu(dz) = h(z) dz, its ring decomposition,
//! amplitude samplers, and truncation/tail quantities.
//!
//! Amplitudes are split over rings: ring 1 is the unit ball, ring k for
//! k >= 2 is the shell of radii (k-1, k]. Each ring drives an independent
//! Poisson process of rate mu(ring), which is what the event generator and
//! the compound-Poisson representation consume.
//!
//! Radial densities h(z) = g(|z|) get an inverse-transform sampler from a
//! tabulated per-ring CDF of r^{d-1} g(r); non-radial densities fall back to
//! rejection from the uniform proposal on the ring.

use std::sync::Arc;

use rand::RngExt;
use rand_distr::{Distribution, StandardNormal};

use crate::envelope::Envelope;
use crate::error::{Error, Result};
use crate::quad::{self, QuadTol};

pub type RadialProfile = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type DensityFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

const TABLE_RES: usize = 4096;
const REJECTION_FLOOR: f64 = 1e-3;

enum DensityKind {
    Radial { profile: RadialProfile },
    General { density: DensityFn },
}

/// Per-ring inverse-transform table for the radial weight r^{d-1} g(r).
struct RadialCdfTable {
    lo: f64,
    hi: f64,
    cdf: Vec<f64>,
}

impl RadialCdfTable {
    fn build(lo: f64, hi: f64, dim: usize, profile: &RadialProfile) -> Option<Self> {
        let mut weights = Vec::with_capacity(TABLE_RES + 1);
        let step = (hi - lo) / TABLE_RES as f64;
        for i in 0..=TABLE_RES {
            let r = lo + step * i as f64;
            let w = r.powi(dim as i32 - 1) * profile(r);
            weights.push(if w.is_finite() && w > 0.0 { w } else { 0.0 });
        }
        let mut cdf = vec![0.0; TABLE_RES + 1];
        for i in 1..=TABLE_RES {
            cdf[i] = cdf[i - 1] + 0.5 * (weights[i - 1] + weights[i]) * step;
        }
        let total = cdf[TABLE_RES];
        if !(total > 0.0) {
            return None;
        }
        for v in cdf.iter_mut() {
            *v /= total;
        }
        Some(RadialCdfTable { lo, hi, cdf })
    }

    fn invert(&self, u: f64) -> f64 {
        let cdf = &self.cdf;
        let mut lo = 0usize;
        let mut hi = TABLE_RES;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if cdf[mid] < u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let span = cdf[hi] - cdf[lo];
        let frac = if span > 0.0 { (u - cdf[lo]) / span } else { 0.5 };
        let step = (self.hi - self.lo) / TABLE_RES as f64;
        self.lo + step * (lo as f64 + frac)
    }

    fn cdf_at(&self, r: f64) -> f64 {
        if r <= self.lo {
            return 0.0;
        }
        if r >= self.hi {
            return 1.0;
        }
        let step = (self.hi - self.lo) / TABLE_RES as f64;
        let pos = (r - self.lo) / step;
        let idx = (pos.floor() as usize).min(TABLE_RES - 1);
        let frac = pos - idx as f64;
        self.cdf[idx] + frac * (self.cdf[idx + 1] - self.cdf[idx])
    }
}

pub struct LevyMeasureModel {
    name: String,
    dim: usize,
    kind: DensityKind,
    support_lower_radius: f64,
    max_ring: usize,
    quad_tol: QuadTol,
    /// Declared bound on the derivatives of ln h, reported by the validator.
    ln_density_grad_bound: f64,
    ring_masses: Vec<f64>,
    cumulative_masses: Vec<f64>,
    tables: Vec<Option<RadialCdfTable>>,
    rejection_sup: Vec<f64>,
}

/// Bounds (inner, outer) of ring k, clipped to the support.
fn ring_bounds(k: usize, support_lower: f64) -> (f64, f64) {
    let lo = ((k - 1) as f64).max(support_lower);
    (lo, k as f64)
}

impl LevyMeasureModel {
    pub fn radial(
        name: impl Into<String>,
        dim: usize,
        profile: impl Fn(f64) -> f64 + Send + Sync + 'static,
        support_lower_radius: f64,
        max_ring: usize,
    ) -> Result<Self> {
        Self::radial_impl(
            name.into(),
            dim,
            Arc::new(profile),
            support_lower_radius,
            max_ring,
            None,
        )
    }

    /// Radial model with closed-form ring masses supplied by the caller.
    pub fn radial_with_masses(
        name: impl Into<String>,
        dim: usize,
        profile: impl Fn(f64) -> f64 + Send + Sync + 'static,
        support_lower_radius: f64,
        max_ring: usize,
        masses: impl Fn(usize) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        Self::radial_impl(
            name.into(),
            dim,
            Arc::new(profile),
            support_lower_radius,
            max_ring,
            Some(Arc::new(masses)),
        )
    }

    fn radial_impl(
        name: String,
        dim: usize,
        profile: RadialProfile,
        support_lower_radius: f64,
        max_ring: usize,
        closed_masses: Option<Arc<dyn Fn(usize) -> f64 + Send + Sync>>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("dimension must be >= 1"));
        }
        if max_ring == 0 {
            return Err(Error::config("max_ring must be >= 1"));
        }
        let quad_tol = QuadTol::default();
        let area = quad::unit_sphere_area(dim);
        let mut ring_masses = Vec::with_capacity(max_ring);
        let mut tables = Vec::with_capacity(max_ring);
        for k in 1..=max_ring {
            let (lo, hi) = ring_bounds(k, support_lower_radius);
            let mass = if lo >= hi {
                0.0
            } else if let Some(cm) = &closed_masses {
                let m = cm(k);
                if !m.is_finite() || m < 0.0 {
                    return Err(Error::numeric(format!(
                        "closed-form ring mass for ring {k} is invalid: {m}"
                    )));
                }
                m
            } else {
                let p = profile.clone();
                area * quad::integrate(
                    move |r| r.powi(dim as i32 - 1) * p(r),
                    lo,
                    hi,
                    quad_tol,
                )?
            };
            ring_masses.push(mass);
            tables.push(if mass > 0.0 && lo < hi {
                RadialCdfTable::build(lo, hi, dim, &profile)
            } else {
                None
            });
        }
        let cumulative_masses = cumulative(&ring_masses);
        Ok(LevyMeasureModel {
            name,
            dim,
            kind: DensityKind::Radial { profile },
            support_lower_radius,
            max_ring,
            quad_tol,
            ln_density_grad_bound: f64::NAN,
            ring_masses,
            cumulative_masses,
            tables,
            rejection_sup: Vec::new(),
        })
    }

    /// Non-radial density; supported for d = 1 and d = 2.
    ///
    /// Ring masses use adaptive quadrature (polar with a periodic trapezoid
    /// rule in the angle for d = 2); sampling is rejection from the uniform
    /// proposal with a sup bound obtained by grid scan at construction.
    pub fn general(
        name: impl Into<String>,
        dim: usize,
        density: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        support_lower_radius: f64,
        max_ring: usize,
    ) -> Result<Self> {
        if dim == 0 || dim > 2 {
            return Err(Error::config(
                "general (non-radial) densities are supported for d <= 2; use a radial model or closed-form masses",
            ));
        }
        if max_ring == 0 {
            return Err(Error::config("max_ring must be >= 1"));
        }
        let density: DensityFn = Arc::new(density);
        let quad_tol = QuadTol::default();
        let mut ring_masses = Vec::with_capacity(max_ring);
        let mut rejection_sup = Vec::with_capacity(max_ring);
        for k in 1..=max_ring {
            let (lo, hi) = ring_bounds(k, support_lower_radius);
            if lo >= hi {
                ring_masses.push(0.0);
                rejection_sup.push(0.0);
                continue;
            }
            let mass = match dim {
                1 => {
                    let d = density.clone();
                    let pos = quad::integrate(move |r| d(&[r]), lo, hi, quad_tol)?;
                    let d = density.clone();
                    let neg = quad::integrate(move |r| d(&[-r]), lo, hi, quad_tol)?;
                    pos + neg
                }
                2 => {
                    let d = density.clone();
                    quad::integrate(
                        move |r| r * angular_mean_2d(&d, r),
                        lo,
                        hi,
                        quad_tol,
                    )? * 2.0
                        * std::f64::consts::PI
                }
                _ => unreachable!(),
            };
            ring_masses.push(mass);
            rejection_sup.push(scan_sup(&density, dim, lo, hi) * 1.05);
        }
        let cumulative_masses = cumulative(&ring_masses);
        Ok(LevyMeasureModel {
            name: name.into(),
            dim,
            kind: DensityKind::General { density },
            support_lower_radius,
            max_ring,
            quad_tol,
            ln_density_grad_bound: f64::NAN,
            ring_masses,
            cumulative_masses,
            tables: Vec::new(),
            rejection_sup,
        })
    }

    /// Lebesgue measure (h = 1) in dimension d, with closed-form ring masses.
    pub fn lebesgue(dim: usize, max_ring: usize) -> Result<Self> {
        let ball = quad::unit_ball_volume(dim);
        let d = dim as i32;
        let mut model = Self::radial_with_masses(
            format!("lebesgue-d{dim}"),
            dim,
            |_| 1.0,
            0.0,
            max_ring,
            move |k| ball * ((k as f64).powi(d) - ((k - 1) as f64).powi(d)),
        )?;
        model.ln_density_grad_bound = 0.0;
        Ok(model)
    }

    /// The transformed truncated alpha-stable intensity: h(z) = |z|^(alpha-1)
    /// on |z| >= 1, in dimension 1.
    pub fn alpha_stable_tail(alpha: f64, max_ring: usize) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::config(format!(
                "alpha must lie in (0, 1), got {alpha}"
            )));
        }
        let mut model = Self::radial_with_masses(
            format!("alpha-stable-tail({alpha})"),
            1,
            move |r| r.powf(alpha - 1.0),
            1.0,
            max_ring,
            move |k| {
                if k < 2 {
                    0.0
                } else {
                    2.0 * ((k as f64).powf(alpha) - ((k - 1) as f64).powf(alpha)) / alpha
                }
            },
        )?;
        model.ln_density_grad_bound = (1.0 - alpha).abs();
        Ok(model)
    }

    pub fn with_ln_density_grad_bound(mut self, bound: f64) -> Self {
        self.ln_density_grad_bound = bound;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn max_ring(&self) -> usize {
        self.max_ring
    }

    pub fn support_lower_radius(&self) -> f64 {
        self.support_lower_radius
    }

    pub fn ln_density_grad_bound(&self) -> f64 {
        self.ln_density_grad_bound
    }

    pub fn quad_tol(&self) -> QuadTol {
        self.quad_tol
    }

    pub fn is_radial(&self) -> bool {
        matches!(self.kind, DensityKind::Radial { .. })
    }

    /// Density h evaluated at a point.
    pub fn density(&self, z: &[f64]) -> f64 {
        let r = norm(z);
        if r < self.support_lower_radius {
            return 0.0;
        }
        match &self.kind {
            DensityKind::Radial { profile } => profile(r),
            DensityKind::General { density } => density(z),
        }
    }

    /// Radial profile g(|z|); available on radial models only.
    pub fn radial_profile(&self, r: f64) -> Option<f64> {
        match &self.kind {
            DensityKind::Radial { profile } => Some(if r < self.support_lower_radius {
                0.0
            } else {
                profile(r)
            }),
            DensityKind::General { .. } => None,
        }
    }

    /// mu(ring k); rings are 1-based.
    pub fn annulus_mass(&self, k: usize) -> Result<f64> {
        if k == 0 || k > self.max_ring {
            return Err(Error::config(format!(
                "ring index {k} outside 1..={}",
                self.max_ring
            )));
        }
        Ok(self.ring_masses[k - 1])
    }

    /// mu(ball of radius m) = sum of the first m ring masses.
    pub fn ball_mass(&self, m: usize) -> Result<f64> {
        if m == 0 || m > self.max_ring {
            return Err(Error::config(format!(
                "ball radius {m} outside 1..={}",
                self.max_ring
            )));
        }
        Ok(self.cumulative_masses[m - 1])
    }

    /// CDF of |Z| within ring k (diagnostic; radial models only).
    pub fn ring_radial_cdf(&self, k: usize, r: f64) -> Result<f64> {
        if k == 0 || k > self.max_ring {
            return Err(Error::config(format!("ring index {k} out of range")));
        }
        match self.tables.get(k - 1).and_then(|t| t.as_ref()) {
            Some(t) => Ok(t.cdf_at(r)),
            None => Err(Error::numeric(format!(
                "ring {k} has no radial table (empty ring or non-radial model)"
            ))),
        }
    }

    /// Draw one amplitude from ring k into `out`.
    pub fn sample_in_annulus_into<R: RngExt>(
        &self,
        k: usize,
        rng: &mut R,
        out: &mut [f64],
    ) -> Result<()> {
        assert_eq!(out.len(), self.dim);
        let mass = self.annulus_mass(k)?;
        if !(mass > 0.0) {
            return Err(Error::numeric(format!(
                "ring {k} of model {} has zero mass; cannot sample",
                self.name
            )));
        }
        match &self.kind {
            DensityKind::Radial { .. } => {
                let table = self.tables[k - 1]
                    .as_ref()
                    .expect("positive-mass radial ring has a table");
                let u: f64 = rng.random();
                let r = table.invert(u);
                random_direction(self.dim, rng, out);
                for c in out.iter_mut() {
                    *c *= r;
                }
                Ok(())
            }
            DensityKind::General { density } => {
                let sup = self.rejection_sup[k - 1];
                let (lo, hi) = ring_bounds(k, self.support_lower_radius);
                let attempts_cap = (20.0 / REJECTION_FLOOR) as usize;
                for attempt in 1..=attempts_cap {
                    uniform_in_shell(self.dim, lo, hi, rng, out);
                    let accept: f64 = rng.random();
                    if accept * sup <= density(out) {
                        return Ok(());
                    }
                    if attempt == attempts_cap {
                        break;
                    }
                }
                Err(Error::RejectionFloor {
                    ring: k,
                    rate: 1.0 / attempts_cap as f64,
                    floor: REJECTION_FLOOR,
                })
            }
        }
    }

    /// Convenience wrapper returning a fresh vector.
    pub fn sample_in_annulus<R: RngExt>(&self, k: usize, rng: &mut R) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.sample_in_annulus_into(k, rng, &mut out)?;
        Ok(out)
    }

    /// Integral of env(|z|)^power against mu over {|z| > from}.
    ///
    /// Requires a radial measure (all built-ins are radial).
    pub fn tail_envelope_integral(
        &self,
        env: &Envelope,
        power: f64,
        from: f64,
    ) -> Result<quad::TailIntegral> {
        if env.is_zero() {
            return Ok(quad::TailIntegral {
                value: 0.0,
                remainder_bound: 0.0,
                chunks: 0,
            });
        }
        let profile = match &self.kind {
            DensityKind::Radial { profile } => profile.clone(),
            DensityKind::General { .. } => {
                return Err(Error::numeric(
                    "tail integrals require a radial intensity model",
                ))
            }
        };
        let area = quad::unit_sphere_area(self.dim);
        let dim = self.dim as i32;
        let start = from.max(self.support_lower_radius);
        let env = env.clone();
        let t = quad::integrate_tail(
            move |r| r.powi(dim - 1) * profile(r) * env.eval(r).powf(power),
            start,
            self.quad_tol,
        )?;
        Ok(quad::TailIntegral {
            value: area * t.value,
            remainder_bound: area * t.remainder_bound,
            chunks: t.chunks,
        })
    }

    /// Integral of env(|z|)^power against mu over the ball {|z| <= to}.
    pub fn ball_envelope_integral(&self, env: &Envelope, power: f64, to: f64) -> Result<f64> {
        if env.is_zero() {
            return Ok(0.0);
        }
        let profile = match &self.kind {
            DensityKind::Radial { profile } => profile.clone(),
            DensityKind::General { .. } => {
                return Err(Error::numeric(
                    "envelope integrals require a radial intensity model",
                ))
            }
        };
        let area = quad::unit_sphere_area(self.dim);
        let dim = self.dim as i32;
        let lo = self.support_lower_radius;
        if to <= lo {
            return Ok(0.0);
        }
        let env = env.clone();
        Ok(area
            * quad::integrate(
                move |r| r.powi(dim - 1) * profile(r) * env.eval(r).powf(power),
                lo,
                to,
                self.quad_tol,
            )?)
    }
}

fn cumulative(masses: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    masses
        .iter()
        .map(|m| {
            acc += m;
            acc
        })
        .collect()
}

fn norm(z: &[f64]) -> f64 {
    z.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// Uniform direction on the unit sphere.
fn random_direction<R: RngExt>(dim: usize, rng: &mut R, out: &mut [f64]) {
    if dim == 1 {
        out[0] = if rng.random::<f64>() < 0.5 { -1.0 } else { 1.0 };
        return;
    }
    loop {
        let mut sq = 0.0;
        for c in out.iter_mut() {
            let g: f64 = StandardNormal.sample(rng);
            *c = g;
            sq += g * g;
        }
        if sq > 1e-24 {
            let inv = sq.sqrt().recip();
            for c in out.iter_mut() {
                *c *= inv;
            }
            return;
        }
    }
}

/// Uniform point in the shell lo < |z| <= hi (volume-proportional radius).
fn uniform_in_shell<R: RngExt>(dim: usize, lo: f64, hi: f64, rng: &mut R, out: &mut [f64]) {
    let d = dim as f64;
    let u: f64 = rng.random();
    let r = (lo.powf(d) + u * (hi.powf(d) - lo.powf(d))).powf(1.0 / d);
    random_direction(dim, rng, out);
    for c in out.iter_mut() {
        *c *= r;
    }
}

/// Mean of the density over the circle of radius r (trapezoid in the angle,
/// spectrally accurate for smooth periodic integrands).
fn angular_mean_2d(density: &DensityFn, r: f64) -> f64 {
    const NA: usize = 256;
    let mut sum = 0.0;
    for j in 0..NA {
        let phi = 2.0 * std::f64::consts::PI * j as f64 / NA as f64;
        sum += density(&[r * phi.cos(), r * phi.sin()]);
    }
    sum / NA as f64
}

fn scan_sup(density: &DensityFn, dim: usize, lo: f64, hi: f64) -> f64 {
    const NR: usize = 128;
    let mut sup = 0.0f64;
    match dim {
        1 => {
            for i in 0..=NR {
                let r = lo + (hi - lo) * i as f64 / NR as f64;
                sup = sup.max(density(&[r])).max(density(&[-r]));
            }
        }
        2 => {
            const NA: usize = 128;
            for i in 0..=NR {
                let r = lo + (hi - lo) * i as f64 / NR as f64;
                for j in 0..NA {
                    let phi = 2.0 * std::f64::consts::PI * j as f64 / NA as f64;
                    sup = sup.max(density(&[r * phi.cos(), r * phi.sin()]));
                }
            }
        }
        _ => unreachable!(),
    }
    sup
}

/// Truncation quantities for a cutoff ring M and horizon T.
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct TailQuantities {
    pub ring_cutoff: usize,
    pub horizon: f64,
    /// Standard deviation of the Gaussian replacing the discarded big jumps.
    pub tail_sigma: f64,
    /// Second-moment tail error of the truncation.
    pub epsilon_m: f64,
    pub quadrature_abs_tol: f64,
}

/// sigma for the tail-compensating Gaussian: sqrt(T * int_{|z|>M} cunder dmu).
pub fn tail_sigma(
    levy: &LevyMeasureModel,
    cunder: &Envelope,
    ring_cutoff: usize,
    horizon: f64,
) -> Result<f64> {
    if horizon < 0.0 {
        return Err(Error::config("horizon must be nonnegative"));
    }
    let t = levy.tail_envelope_integral(cunder, 1.0, ring_cutoff as f64)?;
    Ok((horizon * t.value).sqrt())
}

/// Tail truncation error: int_{|z|>M} cbar^2 dmu + (int_{|z|>M} cbar dmu)^2.
pub fn epsilon_m(levy: &LevyMeasureModel, cbar: &Envelope, ring_cutoff: usize) -> Result<f64> {
    let sq = levy.tail_envelope_integral(cbar, 2.0, ring_cutoff as f64)?;
    let lin = levy.tail_envelope_integral(cbar, 1.0, ring_cutoff as f64)?;
    Ok(sq.value + lin.value * lin.value)
}

pub fn tail_quantities(
    levy: &LevyMeasureModel,
    cbar: &Envelope,
    cunder: &Envelope,
    ring_cutoff: usize,
    horizon: f64,
) -> Result<TailQuantities> {
    Ok(TailQuantities {
        ring_cutoff,
        horizon,
        tail_sigma: tail_sigma(levy, cunder, ring_cutoff, horizon)?,
        epsilon_m: epsilon_m(levy, cbar, ring_cutoff)?,
        quadrature_abs_tol: levy.quad_tol().abs,
    })
}

/// Moment of the upper envelope: int cbar^p dmu (ball part to max_ring plus
/// tail extrapolation), with the tail remainder bound reported.
#[derive(Clone, Copy, Debug)]
pub struct MomentEstimate {
    pub value: f64,
    pub tail_remainder_bound: f64,
}

pub fn cbar_moment(levy: &LevyMeasureModel, cbar: &Envelope, p: f64) -> Result<MomentEstimate> {
    if p < 1.0 {
        return Err(Error::config("moment order must be >= 1"));
    }
    if cbar.is_zero() {
        return Ok(MomentEstimate {
            value: 0.0,
            tail_remainder_bound: 0.0,
        });
    }
    let cut = levy.max_ring() as f64;
    let ball = levy.ball_envelope_integral(cbar, p, cut)?;
    let tail = levy
        .tail_envelope_integral(cbar, p, cut)
        .map_err(|e| match e {
            Error::NonConvergentTail { .. } => Error::DivergentMoment(format!(
                "envelope moment p={p} does not converge (regularity moment bound fails)"
            )),
            other => other,
        })?;
    Ok(MomentEstimate {
        value: ball + tail.value,
        tail_remainder_bound: tail.remainder_bound,
    })
}

/// Options for the noise-growth diagnostic.
#[derive(Clone, Debug)]
pub struct ThetaOptions {
    /// Level-set scales u; the diagnostic evaluates nu{cunder >= 1/u}/ln(u).
    pub u_grid: Vec<f64>,
    /// Declare "infinite" when the tail-window values are increasing and
    /// grow by at least this factor across the window.
    pub growth_threshold: f64,
    /// Number of trailing grid points examined.
    pub tail_window: usize,
}

impl Default for ThetaOptions {
    fn default() -> Self {
        ThetaOptions {
            u_grid: (1..=8).map(|j| 10f64.powi(j)).collect(),
            growth_threshold: 1.25,
            tail_window: 3,
        }
    }
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct ThetaDiagnostic {
    /// (u, nu{cunder >= 1/u} / ln u) along the grid.
    pub values: Vec<(f64, f64)>,
    /// None means the sequence is still growing: theta is reported infinite.
    pub estimate: Option<f64>,
}

impl ThetaDiagnostic {
    pub fn is_infinite(&self) -> bool {
        self.estimate.is_none()
    }
}

/// Finite-grid estimate of the noise-growth rate theta.
///
/// This is a heuristic diagnostic, not a proof: it evaluates the shell
/// measure of the ellipticity level sets on a finite grid of scales and
/// inspects the trailing growth. Models whose level-set mass keeps growing
/// are reported as "infinite".
pub fn theta_diagnostic(
    levy: &LevyMeasureModel,
    cunder: &Envelope,
    opts: &ThetaOptions,
) -> Result<ThetaDiagnostic> {
    if opts.u_grid.len() < 3 {
        return Err(Error::config("theta diagnostic needs at least 3 grid points"));
    }
    if opts.u_grid.windows(2).any(|w| w[1] <= w[0]) || opts.u_grid[0] <= 1.0 {
        return Err(Error::config("u grid must be increasing with u > 1"));
    }
    let mut values = Vec::with_capacity(opts.u_grid.len());
    for &u in &opts.u_grid {
        let mass = shell_level_set_mass(levy, cunder, 1.0 / u)?;
        if !mass.is_finite() {
            return Err(Error::numeric("level-set quadrature returned non-finite mass"));
        }
        values.push((u, mass / u.ln()));
    }
    let w = opts.tail_window.min(values.len());
    let tail = &values[values.len() - w..];
    let increasing = tail.windows(2).all(|p| p[1].1 > p[0].1);
    let first = tail.first().map(|p| p.1).unwrap_or(0.0);
    let last = tail.last().map(|p| p.1).unwrap_or(0.0);
    let estimate = if increasing && first > 0.0 && last / first >= opts.growth_threshold {
        None
    } else {
        Some(tail.iter().map(|p| p.1).fold(f64::INFINITY, f64::min))
    };
    Ok(ThetaDiagnostic { values, estimate })
}

/// nu{cunder >= level} where nu restricts mu to the shells [k-3/4, k-1/4].
///
/// Composite midpoint rule on each shell with the level-set indicator; the
/// shell loop stops after a run of empty shells once past the support.
fn shell_level_set_mass(
    levy: &LevyMeasureModel,
    cunder: &Envelope,
    level: f64,
) -> Result<f64> {
    const PANELS: usize = 1024;
    const EMPTY_RUN: usize = 8;
    const MAX_SHELL: usize = 65_536;
    let profile = match &levy.kind {
        DensityKind::Radial { profile } => profile.clone(),
        DensityKind::General { .. } => {
            return Err(Error::numeric(
                "theta diagnostic requires a radial intensity model",
            ))
        }
    };
    let area = quad::unit_sphere_area(levy.dim);
    let dim = levy.dim as i32;
    let lower = levy.support_lower_radius;
    let mut total = 0.0;
    let mut empty_streak = 0usize;
    for k in 1..=MAX_SHELL {
        let lo = (k as f64 - 0.75).max(lower);
        let hi = k as f64 - 0.25;
        let mut shell = 0.0;
        if lo < hi {
            let h = (hi - lo) / PANELS as f64;
            for i in 0..PANELS {
                let r = lo + h * (i as f64 + 0.5);
                if cunder.eval(r) >= level {
                    shell += r.powi(dim - 1) * profile(r) * h;
                }
            }
        }
        total += area * shell;
        if shell == 0.0 && k as f64 - 0.75 > lower {
            empty_streak += 1;
            if empty_streak >= EMPTY_RUN {
                return Ok(total);
            }
        } else {
            empty_streak = 0;
        }
    }
    Err(Error::numeric(
        "theta diagnostic: level set extends past the shell cap",
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::{Purpose, StreamFamily};

    fn fam() -> StreamFamily {
        StreamFamily::new(2024)
    }

    #[test]
    fn lebesgue_ring_masses() {
        let m = LevyMeasureModel::lebesgue(1, 8).unwrap();
        // d=1 ring 3: intervals (2,3] and [-3,-2), total length 2
        assert!((m.annulus_mass(3).unwrap() - 2.0).abs() < 1e-12);
        let m2 = LevyMeasureModel::lebesgue(2, 8).unwrap();
        // d=2 ring 2: area of 1 < |z| <= 2 is 3 pi
        assert!((m2.annulus_mass(2).unwrap() - 3.0 * std::f64::consts::PI).abs() < 1e-10);
    }

    #[test]
    fn alpha_stable_ring_mass_matches_antiderivative() {
        let m = LevyMeasureModel::alpha_stable_tail(0.5, 8).unwrap();
        let expected = 4.0 * (2.0f64.sqrt() - 1.0);
        assert!((m.annulus_mass(2).unwrap() - expected).abs() < 1e-12);
        assert_eq!(m.annulus_mass(1).unwrap(), 0.0);
    }

    #[test]
    fn quadrature_masses_match_closed_forms() {
        // same model built without closed forms
        let m = LevyMeasureModel::radial("alpha-quad", 1, |r| r.powf(-0.5), 1.0, 6).unwrap();
        let closed = LevyMeasureModel::alpha_stable_tail(0.5, 6).unwrap();
        for k in 1..=6 {
            let a = m.annulus_mass(k).unwrap();
            let b = closed.annulus_mass(k).unwrap();
            assert!((a - b).abs() <= 1e-9 * b.abs() + 1e-12, "ring {k}: {a} vs {b}");
        }
    }

    #[test]
    fn disjoint_cover_sums_to_ball_mass() {
        for dim in [1usize, 2, 3] {
            let m = LevyMeasureModel::lebesgue(dim, 5).unwrap();
            for cap in 1..=5usize {
                let sum: f64 = (1..=cap).map(|k| m.annulus_mass(k).unwrap()).sum();
                let ball = quad::unit_ball_volume(dim) * (cap as f64).powi(dim as i32);
                assert!((sum - ball).abs() < 1e-10 * ball.max(1.0));
                assert!((m.ball_mass(cap).unwrap() - ball).abs() < 1e-10 * ball.max(1.0));
            }
        }
    }

    #[test]
    fn samples_stay_in_their_ring() {
        let fam = fam();
        let models = [
            LevyMeasureModel::lebesgue(1, 4).unwrap(),
            LevyMeasureModel::lebesgue(3, 4).unwrap(),
            LevyMeasureModel::alpha_stable_tail(0.5, 4).unwrap(),
        ];
        for m in &models {
            for k in 1..=4usize {
                if m.annulus_mass(k).unwrap() == 0.0 {
                    continue;
                }
                let mut rng = fam.stream(Purpose::Amplitude, k as u64, 0, 0);
                for _ in 0..500 {
                    let z = m.sample_in_annulus(k, &mut rng).unwrap();
                    let r = norm(&z);
                    assert!(r <= k as f64 + 1e-12, "{} ring {k}: |z|={r}", m.name());
                    assert!(r >= (k - 1) as f64 - 1e-12, "{} ring {k}: |z|={r}", m.name());
                }
            }
        }
    }

    #[test]
    fn empty_ring_sampling_is_an_error() {
        let m = LevyMeasureModel::alpha_stable_tail(0.5, 4).unwrap();
        let mut rng = fam().stream(Purpose::Amplitude, 0, 0, 0);
        assert!(m.sample_in_annulus(1, &mut rng).is_err());
    }

    #[test]
    fn uniform_ring_mean_abs() {
        // h = 1, d = 1, ring 2: |Z| uniform on (1, 2], mean 1.5
        let m = LevyMeasureModel::lebesgue(1, 4).unwrap();
        let mut rng = fam().stream(Purpose::Amplitude, 7, 0, 0);
        let n = 100_000usize;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let z = m.sample_in_annulus(2, &mut rng).unwrap();
            let a = z[0].abs();
            sum += a;
            sumsq += a * a;
        }
        let mean = sum / n as f64;
        let sd = (sumsq / n as f64 - mean * mean).sqrt();
        assert!(
            (mean - 1.5).abs() <= 3.0 * sd / (n as f64).sqrt(),
            "mean {mean}"
        );
    }

    #[test]
    fn alpha_stable_ring_mean_abs() {
        // ring 2 of the alpha=1/2 model: closed-form mean of |Z|
        let m = LevyMeasureModel::alpha_stable_tail(0.5, 4).unwrap();
        let expected = (2.0 / 3.0) * (2.0f64.powf(1.5) - 1.0) / (2.0 * (2.0f64.sqrt() - 1.0));
        let mut rng = fam().stream(Purpose::Amplitude, 8, 0, 0);
        let n = 100_000usize;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let z = m.sample_in_annulus(2, &mut rng).unwrap();
            let a = z[0].abs();
            sum += a;
            sumsq += a * a;
        }
        let mean = sum / n as f64;
        let sd = (sumsq / n as f64 - mean * mean).sqrt();
        assert!(
            (mean - expected).abs() <= 3.0 * sd / (n as f64).sqrt(),
            "mean {mean} vs {expected}"
        );
    }

    /// One-sample KS test of |Z| against the analytic in-ring radial CDF.
    fn ks_statistic(model: &LevyMeasureModel, k: usize, n: usize, cdf: impl Fn(f64) -> f64) -> f64 {
        let mut rng = fam().stream(Purpose::Amplitude, 100 + k as u64, 0, 0);
        let mut radii: Vec<f64> = (0..n)
            .map(|_| norm(&model.sample_in_annulus(k, &mut rng).unwrap()))
            .collect();
        radii.sort_by(f64::total_cmp);
        let mut d = 0.0f64;
        for (i, r) in radii.iter().enumerate() {
            let f = cdf(*r);
            let lo = i as f64 / n as f64;
            let hi = (i + 1) as f64 / n as f64;
            d = d.max((f - lo).abs()).max((hi - f).abs());
        }
        d
    }

    #[test]
    fn sampler_ks_tests() {
        let n = 100_000usize;
        // critical value at significance 1e-3
        let crit = (0.5 * (2.0f64 / 1e-3).ln()).sqrt() / (n as f64).sqrt();

        for dim in [1usize, 2, 3] {
            let m = LevyMeasureModel::lebesgue(dim, 4).unwrap();
            for k in 1..=4usize {
                let a = (k - 1) as f64;
                let b = k as f64;
                let d = dim as f64;
                let stat = ks_statistic(&m, k, n, |r| {
                    (r.powf(d) - a.powf(d)) / (b.powf(d) - a.powf(d))
                });
                assert!(stat < crit, "lebesgue d={dim} ring {k}: KS {stat} >= {crit}");
            }
        }

        let m = LevyMeasureModel::alpha_stable_tail(0.5, 4).unwrap();
        for k in 2..=4usize {
            let a = (k - 1) as f64;
            let b = k as f64;
            let stat = ks_statistic(&m, k, n, |r| {
                (r.sqrt() - a.sqrt()) / (b.sqrt() - a.sqrt())
            });
            assert!(stat < crit, "alpha ring {k}: KS {stat} >= {crit}");
        }
    }

    #[test]
    fn general_density_matches_radial_equivalent() {
        let g = LevyMeasureModel::general("gen-exp", 1, |z: &[f64]| (-z[0].abs()).exp(), 0.0, 5)
            .unwrap();
        let r = LevyMeasureModel::radial("rad-exp", 1, |r| (-r).exp(), 0.0, 5).unwrap();
        for k in 1..=5 {
            let a = g.annulus_mass(k).unwrap();
            let b = r.annulus_mass(k).unwrap();
            assert!((a - b).abs() < 1e-9, "ring {k}: {a} vs {b}");
        }
        // rejection sampler stays in ring and roughly matches the radial law
        let mut rng = fam().stream(Purpose::Amplitude, 55, 0, 0);
        let mut sum = 0.0;
        let n = 20_000;
        for _ in 0..n {
            let z = g.sample_in_annulus(2, &mut rng).unwrap();
            assert!(z[0].abs() > 1.0 && z[0].abs() <= 2.0);
            sum += z[0].abs();
        }
        // E|Z| in ring 2 for e^{-r}: int r e^-r / int e^-r on (1,2)
        let num = quad::integrate(|r| r * (-r).exp(), 1.0, 2.0, QuadTol::default()).unwrap();
        let den = quad::integrate(|r| (-r).exp(), 1.0, 2.0, QuadTol::default()).unwrap();
        let mean = sum / n as f64;
        assert!((mean - num / den).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn tail_sigma_closed_form() {
        let levy = LevyMeasureModel::lebesgue(1, 8).unwrap();
        let cunder = Envelope::Exp {
            amp: 1.0,
            rate: 2.0,
            power: 1.0,
        };
        // int_{|z|>5} e^{-2|z|} dz = e^{-10}; a = sqrt(T e^{-10})
        let a = tail_sigma(&levy, &cunder, 5, 1.0).unwrap();
        let exact = (-5.0f64).exp();
        assert!((a - exact).abs() <= 1e-6 * exact);
        let a4 = tail_sigma(&levy, &cunder, 5, 4.0).unwrap();
        assert!((a4 - 2.0 * exact).abs() <= 1e-6 * exact);
        assert_eq!(tail_sigma(&levy, &Envelope::Zero, 5, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn epsilon_m_closed_form() {
        let levy = LevyMeasureModel::lebesgue(1, 8).unwrap();
        // |cbar|^2 = e^{-|z|}  =>  cbar = e^{-|z|/2}
        let cbar = Envelope::Exp {
            amp: 1.0,
            rate: 0.5,
            power: 1.0,
        };
        let eps = epsilon_m(&levy, &cbar, 5).unwrap();
        let exact = 18.0 * (-5.0f64).exp();
        assert!((eps - exact).abs() <= 1e-6 * exact, "{eps} vs {exact}");
        assert_eq!(epsilon_m(&levy, &Envelope::Zero, 5).unwrap(), 0.0);
        // monotone in the cutoff
        let eps6 = epsilon_m(&levy, &cbar, 6).unwrap();
        assert!(eps6 <= eps);
    }

    #[test]
    fn tail_additivity() {
        let levy = LevyMeasureModel::lebesgue(1, 8).unwrap();
        let cunder = Envelope::Exp {
            amp: 1.0,
            rate: 2.0,
            power: 1.0,
        };
        let t = 1.0;
        let a5 = tail_sigma(&levy, &cunder, 5, t).unwrap();
        let a3 = tail_sigma(&levy, &cunder, 3, t).unwrap();
        let mid = levy.ball_envelope_integral(&cunder, 1.0, 5.0).unwrap()
            - levy.ball_envelope_integral(&cunder, 1.0, 3.0).unwrap();
        assert!((a5 * a5 / t + mid - a3 * a3 / t).abs() < 1e-10);
    }

    #[test]
    fn cbar_moments() {
        let levy = LevyMeasureModel::lebesgue(1, 8).unwrap();
        // example family with |cbar|^2 = e^{-|z|}: moment p=2 is 2
        let cbar = Envelope::Exp {
            amp: 1.0,
            rate: 0.5,
            power: 1.0,
        };
        let m2 = cbar_moment(&levy, &cbar, 2.0).unwrap();
        assert!((m2.value - 2.0).abs() < 1e-8, "{}", m2.value);
        // |cbar|^2 = 1/(1+z^4): moment p=2 is pi/sqrt(2)
        let cbar_poly = Envelope::PolyDecay {
            amp: 1.0,
            power: 4.0,
            exponent: 0.5,
        };
        let m2p = cbar_moment(&levy, &cbar_poly, 2.0).unwrap();
        let exact = std::f64::consts::PI / 2.0f64.sqrt();
        assert!((m2p.value - exact).abs() < 1e-6, "{} vs {exact}", m2p.value);
        assert_eq!(cbar_moment(&levy, &Envelope::Zero, 3.0).unwrap().value, 0.0);
    }

    #[test]
    fn divergent_moment_is_caught() {
        let levy = LevyMeasureModel::lebesgue(1, 4).unwrap();
        // cbar = 1/(1+r^0.5)^1: cbar^1 tail behaves like r^{-1/2}, divergent
        let bad = Envelope::PolyDecay {
            amp: 1.0,
            power: 0.5,
            exponent: 1.0,
        };
        assert!(matches!(
            cbar_moment(&levy, &bad, 1.0),
            Err(Error::DivergentMoment(_))
        ));
    }

    #[test]
    fn theta_exponential_at_critical_decay() {
        // h = 1, d = 1, cunder = e^{-2|z|}: diagnostic should sit near 1/2
        let levy = LevyMeasureModel::lebesgue(1, 8).unwrap();
        let cunder = Envelope::Exp {
            amp: 1.0,
            rate: 2.0,
            power: 1.0,
        };
        let diag = theta_diagnostic(&levy, &cunder, &ThetaOptions::default()).unwrap();
        let est = diag.estimate.expect("finite");
        assert!((est - 0.5).abs() < 0.05, "theta {est}");
    }

    #[test]
    fn theta_polynomial_is_infinite() {
        let levy = LevyMeasureModel::lebesgue(1, 8).unwrap();
        let cunder = Envelope::PolyDecay {
            amp: 1.0,
            power: 4.0,
            exponent: 1.0,
        };
        let diag = theta_diagnostic(&levy, &cunder, &ThetaOptions::default()).unwrap();
        assert!(diag.is_infinite(), "values {:?}", diag.values);
    }

    #[test]
    fn theta_alpha_stable_is_infinite() {
        let levy = LevyMeasureModel::alpha_stable_tail(0.5, 8).unwrap();
        let cunder = Envelope::InvPower {
            amp: 1.0,
            power: 4.0,
        };
        let diag = theta_diagnostic(&levy, &cunder, &ThetaOptions::default()).unwrap();
        assert!(diag.is_infinite(), "values {:?}", diag.values);
    }

    #[test]
    fn theta_finite_total_mass_reports_near_zero() {
        // integrable h: nu(R) is finite, so the diagnostic decays like 1/ln u
        let levy = LevyMeasureModel::radial("finite", 1, |r| (-r).exp(), 0.0, 8).unwrap();
        let cunder = Envelope::PolyDecay {
            amp: 1.0,
            power: 2.0,
            exponent: 1.0,
        };
        let diag = theta_diagnostic(&levy, &cunder, &ThetaOptions::default()).unwrap();
        let est = diag.estimate.expect("finite");
        assert!(est < 0.1, "theta {est}");
    }

    #[test]
    fn rejection_floor_triggers_on_spiky_density() {
        // nearly all mass in a sliver: acceptance rate ~ 1e-6 under the
        // uniform proposal, far below the configured floor
        let m = LevyMeasureModel::general(
            "spike",
            1,
            |z: &[f64]| {
                if (z[0] - 1.5).abs() < 1e-6 {
                    1.0
                } else {
                    1e-12
                }
            },
            0.0,
            3,
        )
        .unwrap();
        let mut rng = fam().stream(Purpose::Amplitude, 0, 0, 0);
        let e = m.sample_in_annulus(2, &mut rng);
        assert!(matches!(e, Err(Error::RejectionFloor { ring: 2, .. })), "{e:?}");
    }

    #[test]
    fn general_2d_matches_radial_equivalent() {
        let g = LevyMeasureModel::general(
            "gen-exp-2d",
            2,
            |z: &[f64]| (-(z[0] * z[0] + z[1] * z[1]).sqrt()).exp(),
            0.0,
            4,
        )
        .unwrap();
        let r = LevyMeasureModel::radial("rad-exp-2d", 2, |r| (-r).exp(), 0.0, 4).unwrap();
        for k in 1..=4 {
            let a = g.annulus_mass(k).unwrap();
            let b = r.annulus_mass(k).unwrap();
            assert!((a - b).abs() < 1e-8 * b.max(1.0), "ring {k}: {a} vs {b}");
        }
        let mut rng = fam().stream(Purpose::Amplitude, 9, 0, 0);
        let z = g.sample_in_annulus(2, &mut rng).unwrap();
        let rad = (z[0] * z[0] + z[1] * z[1]).sqrt();
        assert!(rad > 1.0 && rad <= 2.0);
    }

    #[test]
    fn theta_options_are_validated() {
        let levy = LevyMeasureModel::lebesgue(1, 4).unwrap();
        let cunder = Envelope::Exp {
            amp: 1.0,
            rate: 2.0,
            power: 1.0,
        };
        let too_few = ThetaOptions {
            u_grid: vec![10.0, 100.0],
            ..Default::default()
        };
        assert!(theta_diagnostic(&levy, &cunder, &too_few).is_err());
        let not_increasing = ThetaOptions {
            u_grid: vec![10.0, 10.0, 100.0],
            ..Default::default()
        };
        assert!(theta_diagnostic(&levy, &cunder, &not_increasing).is_err());
    }

    #[test]
    fn moment_order_below_one_is_rejected() {
        let levy = LevyMeasureModel::lebesgue(1, 4).unwrap();
        let cbar = Envelope::Exp {
            amp: 1.0,
            rate: 1.0,
            power: 1.0,
        };
        assert!(cbar_moment(&levy, &cbar, 0.5).is_err());
    }

    #[test]
    fn sampler_is_deterministic() {
        let m = LevyMeasureModel::lebesgue(2, 4).unwrap();
        let fam = fam();
        let mut a = fam.stream(Purpose::Amplitude, 1, 2, 3);
        let mut b = fam.stream(Purpose::Amplitude, 1, 2, 3);
        for _ in 0..32 {
            assert_eq!(
                m.sample_in_annulus(2, &mut a).unwrap(),
                m.sample_in_annulus(2, &mut b).unwrap()
            );
        }
    }
}
