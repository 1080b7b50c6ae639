//! Declared radial envelopes for jump coefficients.
//!
//! An envelope is a nonnegative function of the jump amplitude radius |z|.
//! Models declare an upper envelope (bounding the coefficient and its
//! derivatives), an ellipticity lower bound, and optionally an inverse-flow
//! bound. The typed forms below cover the built-in model families and keep
//! tail integrals well defined.

use serde::{Deserialize, Serialize};

fn default_power() -> f64 {
    1.0
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "form", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Envelope {
    /// Identically zero.
    Zero,
    /// `amp * exp(-rate * r^power)`
    Exp {
        amp: f64,
        rate: f64,
        #[serde(default = "default_power")]
        power: f64,
    },
    /// `amp * (1 + r^power)^(-exponent)`
    PolyDecay { amp: f64, power: f64, exponent: f64 },
    /// `amp * r^(-power)`; only meaningful when the measure vanishes near 0.
    InvPower { amp: f64, power: f64 },
}

impl Envelope {
    pub fn eval(&self, r: f64) -> f64 {
        match *self {
            Envelope::Zero => 0.0,
            Envelope::Exp { amp, rate, power } => amp * (-rate * r.powf(power)).exp(),
            Envelope::PolyDecay {
                amp,
                power,
                exponent,
            } => amp * (1.0 + r.powf(power)).powf(-exponent),
            Envelope::InvPower { amp, power } => amp * r.powf(-power),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Envelope::Zero)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forms_evaluate() {
        let e = Envelope::Exp {
            amp: 1.0,
            rate: 2.0,
            power: 1.0,
        };
        assert!((e.eval(1.0) - (-2.0f64).exp()).abs() < 1e-15);
        let p = Envelope::PolyDecay {
            amp: 4.0,
            power: 4.0,
            exponent: 0.5,
        };
        assert!((p.eval(1.0) - 4.0 / 2.0f64.sqrt()).abs() < 1e-15);
        let i = Envelope::InvPower {
            amp: 1.0,
            power: 4.0,
        };
        assert!((i.eval(2.0) - 1.0 / 16.0).abs() < 1e-15);
        assert_eq!(Envelope::Zero.eval(3.0), 0.0);
    }

    #[test]
    fn toml_round_trip() {
        let e = Envelope::Exp {
            amp: 1.0,
            rate: 2.0,
            power: 1.0,
        };
        let s = toml::to_string(&e).unwrap();
        let back: Envelope = toml::from_str(&s).unwrap();
        assert_eq!(e, back);
    }
}
