//! Named model registry: builds (intensity measure, coefficients) pairs from
//! config descriptions.
//!
//! Intensity models:
//!   - "lebesgue": h = 1 in dimension d
//!   - "example1-exp": Lebesgue measure with exponential-decay envelopes
//!     |cbar|^2 = exp(-a1 |z|^p), cunder = exp(-a2 |z|^p)
//!   - "example1-poly": Lebesgue measure with polynomial-decay envelopes
//!     |cbar|^2 = a1/(1+|z|^p), cunder = a2/(1+|z|^p)
//!   - "example2-alpha-stable": the transformed truncated alpha-stable
//!     intensity |z|^(alpha-1) on |z| >= 1 (d = 1), with envelopes
//!     cbar = sigma_hi/|z|, cunder = sigma_lo/|z|^4
//!
//! Coefficient models: "zero", "kac", "gamma-exp", "mean-revert",
//! "sigma-inverse". Envelope declarations follow the intensity bundle unless
//! the coefficient config overrides them.

use serde::{Deserialize, Serialize};

use crate::coeffs::{self, CoefficientModel};
use crate::envelope::Envelope;
use crate::error::{Error, Result};
use crate::levy::LevyMeasureModel;

fn default_dim() -> usize {
    1
}
fn default_max_ring() -> usize {
    16
}
fn default_a1() -> f64 {
    1.0
}
fn default_a2() -> f64 {
    2.0
}
fn default_p() -> f64 {
    1.0
}
fn default_alpha() -> f64 {
    0.5
}
fn default_sigma_lo() -> f64 {
    1.0
}
fn default_sigma_hi() -> f64 {
    2.0
}
fn default_decay() -> f64 {
    1.0
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LevyConfig {
    /// lebesgue | example1-exp | example1-poly | example2-alpha-stable
    pub name: String,
    #[serde(default = "default_dim")]
    pub d: usize,
    #[serde(default = "default_max_ring")]
    pub max_ring: usize,
    #[serde(default = "default_a1")]
    pub a1: f64,
    #[serde(default = "default_a2")]
    pub a2: f64,
    #[serde(default = "default_p")]
    pub p_decay: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

impl Default for LevyConfig {
    fn default() -> Self {
        LevyConfig {
            name: "lebesgue".to_string(),
            d: 1,
            max_ring: 16,
            a1: 1.0,
            a2: 2.0,
            p_decay: 1.0,
            alpha: 0.5,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CoeffConfig {
    /// zero | kac | gamma-exp | mean-revert | sigma-inverse
    pub name: String,
    #[serde(default = "default_decay")]
    pub decay: f64,
    #[serde(default = "default_sigma_lo")]
    pub sigma_lo: f64,
    #[serde(default = "default_sigma_hi")]
    pub sigma_hi: f64,
    /// Optional mean-reverting drift on top of a jump model.
    #[serde(default)]
    pub mean_revert_drift: bool,
    /// Envelope overrides; default to the bundle's declarations.
    #[serde(default)]
    pub cbar: Option<Envelope>,
    #[serde(default)]
    pub cunder: Option<Envelope>,
    #[serde(default)]
    pub cbreve: Option<Envelope>,
}

impl Default for CoeffConfig {
    fn default() -> Self {
        CoeffConfig {
            name: "zero".to_string(),
            decay: 1.0,
            sigma_lo: 1.0,
            sigma_hi: 2.0,
            mean_revert_drift: false,
            cbar: None,
            cunder: None,
            cbreve: None,
        }
    }
}

pub struct ModelBundle {
    pub levy: LevyMeasureModel,
    pub coeffs: CoefficientModel,
}

/// Envelopes implied by the intensity bundle name, if any.
fn bundle_envelopes(cfg: &LevyConfig) -> Option<(Envelope, Envelope)> {
    match cfg.name.as_str() {
        "example1-exp" => Some((
            Envelope::Exp {
                amp: 1.0,
                rate: 0.5 * cfg.a1,
                power: cfg.p_decay,
            },
            Envelope::Exp {
                amp: 1.0,
                rate: cfg.a2,
                power: cfg.p_decay,
            },
        )),
        "example1-poly" => Some((
            Envelope::PolyDecay {
                amp: cfg.a1.sqrt(),
                power: cfg.p_decay,
                exponent: 0.5,
            },
            Envelope::PolyDecay {
                amp: cfg.a2,
                power: cfg.p_decay,
                exponent: 1.0,
            },
        )),
        _ => None,
    }
}

pub fn build_levy(cfg: &LevyConfig) -> Result<LevyMeasureModel> {
    match cfg.name.as_str() {
        "lebesgue" | "example1-exp" | "example1-poly" => {
            if cfg.name.starts_with("example1") {
                if cfg.a1 <= 0.0 || cfg.a2 <= 0.0 || cfg.p_decay <= 0.0 {
                    return Err(Error::config(
                        "example1 parameters a1, a2, p_decay must be positive (documented range: > 0)",
                    ));
                }
                if cfg.name == "example1-exp" && cfg.a1 > cfg.a2 {
                    return Err(Error::config(
                        "example1-exp requires a1 <= a2 (envelope ordering)",
                    ));
                }
                if cfg.name == "example1-poly" && cfg.a2 > cfg.a1 {
                    return Err(Error::config(
                        "example1-poly requires a2 <= a1 (envelope ordering)",
                    ));
                }
            }
            LevyMeasureModel::lebesgue(cfg.d, cfg.max_ring)
        }
        "example2-alpha-stable" => {
            if cfg.d != 1 {
                return Err(Error::config("example2-alpha-stable is 1-dimensional"));
            }
            LevyMeasureModel::alpha_stable_tail(cfg.alpha, cfg.max_ring)
        }
        other => Err(Error::config(format!(
            "unknown intensity model '{other}' (known: lebesgue, example1-exp, example1-poly, example2-alpha-stable)"
        ))),
    }
}

pub fn build_coeffs(cfg: &CoeffConfig, levy_cfg: &LevyConfig) -> Result<CoefficientModel> {
    let dim = levy_cfg.d;
    let mut model = match cfg.name.as_str() {
        "zero" => coeffs::zero(dim),
        "kac" => coeffs::kac(dim, cfg.decay),
        "gamma-exp" => coeffs::gamma_exp(dim, cfg.decay),
        "mean-revert" => coeffs::mean_revert(dim),
        "sigma-inverse" => {
            if dim != 1 {
                return Err(Error::config("sigma-inverse is 1-dimensional"));
            }
            if !(cfg.sigma_lo > 0.0 && cfg.sigma_hi >= cfg.sigma_lo) {
                return Err(Error::config(
                    "sigma-inverse needs 0 < sigma_lo <= sigma_hi",
                ));
            }
            coeffs::sigma_inverse(cfg.sigma_lo, cfg.sigma_hi)
        }
        other => {
            return Err(Error::config(format!(
                "unknown coefficient model '{other}' (known: zero, kac, gamma-exp, mean-revert, sigma-inverse)"
            )))
        }
    };
    if cfg.mean_revert_drift {
        model = coeffs::with_mean_revert_drift(model);
    }
    // envelope precedence: explicit override > intensity-bundle declaration
    let bundle = bundle_envelopes(levy_cfg);
    if let Some(cbar) = cfg.cbar.clone().or_else(|| bundle.clone().map(|b| b.0)) {
        model = model.with_cbar(cbar);
    }
    if let Some(cunder) = cfg.cunder.clone().or_else(|| bundle.map(|b| b.1)) {
        model = model.with_cunder(cunder);
    }
    if let Some(cbreve) = cfg.cbreve.clone() {
        model = model.with_cbreve(cbreve);
    }
    Ok(model)
}

pub fn build_bundle(levy_cfg: &LevyConfig, coeff_cfg: &CoeffConfig) -> Result<ModelBundle> {
    Ok(ModelBundle {
        levy: build_levy(levy_cfg)?,
        coeffs: build_coeffs(coeff_cfg, levy_cfg)?,
    })
}
