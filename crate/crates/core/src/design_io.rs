//! JSON design documents shared by the command-line tool and the bindings.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::curves::PolynomialCurve;
use crate::error::{Error, Result};
use crate::ho_design::{ErmakovDesign, OmegaRamp};
use crate::tls_design::{
    preset_fig1, preset_fig2, preset_tracking, AngleDesign, CurveSchedule, MixingSchedule, ReferenceSchedule,
};

/// Which Hamiltonian drives a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Invariant,
    Counterdiabatic,
    ReferenceOnly,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "invariant" => Ok(Self::Invariant),
            "counterdiabatic" => Ok(Self::Counterdiabatic),
            "reference_only" => Ok(Self::ReferenceOnly),
            _ => Err(Error::InvalidArgument(format!("unknown method {s:?}"))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Invariant => "invariant",
            Self::Counterdiabatic => "counterdiabatic",
            Self::ReferenceOnly => "reference_only",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OscillatorDocument {
    pub omega0: f64,
    pub omega_f: f64,
    pub t_f: f64,
    /// Scaling factor b(t) of the invariant route.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_coefficients: Option<Vec<f64>>,
    /// Reference frequency ramp ω(t) of the tracking route.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_coefficients: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReferenceDocument {
    Curves {
        delta_coefficients: Vec<f64>,
        omega_r_coefficients: Vec<f64>,
        phi_coefficients: Vec<f64>,
    },
    Mixing {
        theta_coefficients: Vec<f64>,
        omega_coefficients: Vec<f64>,
        phi_coefficients: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoLevelDocument {
    pub t_f: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_coefficients: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_coefficients: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi_coefficients: Option<Vec<f64>>,
    #[serde(rename = "Omega0", default = "unit")]
    pub omega0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceDocument>,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "system", rename_all = "snake_case")]
pub enum DesignDocument {
    Oscillator(OscillatorDocument),
    TwoLevel(TwoLevelDocument),
}

fn curve(c: &[f64]) -> PolynomialCurve {
    PolynomialCurve::new(c.to_vec())
}

impl DesignDocument {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidArgument(format!("malformed design document: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("design documents serialize")
    }

    pub fn t_f(&self) -> f64 {
        match self {
            Self::Oscillator(d) => d.t_f,
            Self::TwoLevel(d) => d.t_f,
        }
    }

    /// Polynomial b(t) oscillator design, with the matching quintic ω ramp.
    pub fn oscillator(omega0: f64, omega_f: f64, t_f: f64, degree: usize) -> Result<Self> {
        let design = ErmakovDesign::polynomial(omega0, omega_f, t_f, degree)?;
        let ramp = OmegaRamp::smoothstep(omega0, omega_f, t_f)?;
        Ok(Self::Oscillator(OscillatorDocument {
            omega0,
            omega_f,
            t_f,
            b_coefficients: Some(design.b().coefficients().to_vec()),
            omega_coefficients: Some(ramp.omega().coefficients().to_vec()),
        }))
    }

    pub fn from_angles(design: &AngleDesign) -> Self {
        Self::TwoLevel(TwoLevelDocument {
            t_f: design.t_f(),
            gamma_coefficients: Some(design.gamma().coefficients().to_vec()),
            beta_coefficients: Some(design.beta().coefficients().to_vec()),
            phi_coefficients: Some(design.phi().coefficients().to_vec()),
            omega0: design.omega0(),
            reference: None,
        })
    }

    pub fn from_reference(reference: &ReferenceSchedule) -> Self {
        let (t_f, doc) = match reference {
            ReferenceSchedule::Curves(c) => (
                c.t_f,
                ReferenceDocument::Curves {
                    delta_coefficients: c.delta.coefficients().to_vec(),
                    omega_r_coefficients: c.omega_r.coefficients().to_vec(),
                    phi_coefficients: c.phi.coefficients().to_vec(),
                },
            ),
            ReferenceSchedule::Mixing(m) => (
                m.t_f,
                ReferenceDocument::Mixing {
                    theta_coefficients: m.theta.coefficients().to_vec(),
                    omega_coefficients: m.omega.coefficients().to_vec(),
                    phi_coefficients: m.phi.coefficients().to_vec(),
                },
            ),
        };
        Self::TwoLevel(TwoLevelDocument {
            t_f,
            gamma_coefficients: None,
            beta_coefficients: None,
            phi_coefficients: None,
            omega0: 1.0,
            reference: Some(doc),
        })
    }

    /// Named two-level presets: `fig1`, `fig2`, `tracking`.
    pub fn two_level_preset(name: &str, t_f: f64) -> Result<Self> {
        match name {
            "fig1" => Ok(Self::from_angles(&preset_fig1(t_f)?)),
            "fig2" => Ok(Self::from_angles(&preset_fig2(t_f)?)),
            "tracking" => Ok(Self::from_reference(&ReferenceSchedule::Mixing(preset_tracking(t_f)?))),
            _ => Err(Error::InvalidArgument(format!("unknown preset {name:?}"))),
        }
    }

    pub fn ermakov(&self) -> Result<Option<ErmakovDesign>> {
        match self {
            Self::Oscillator(d) => d
                .b_coefficients
                .as_ref()
                .map(|b| ErmakovDesign::from_parts(d.omega0, d.omega_f, d.t_f, curve(b)))
                .transpose(),
            Self::TwoLevel(_) => Ok(None),
        }
    }

    pub fn ramp(&self) -> Result<Option<OmegaRamp>> {
        match self {
            Self::Oscillator(d) => d.omega_coefficients.as_ref().map(|w| OmegaRamp::new(curve(w), d.t_f)).transpose(),
            Self::TwoLevel(_) => Ok(None),
        }
    }

    pub fn angles(&self) -> Result<Option<AngleDesign>> {
        let Self::TwoLevel(d) = self else {
            return Ok(None);
        };
        let (Some(g), Some(b)) = (&d.gamma_coefficients, &d.beta_coefficients) else {
            return Ok(None);
        };
        let phi = d.phi_coefficients.as_deref().map(curve).unwrap_or_else(|| PolynomialCurve::constant(0.0));
        AngleDesign::new(curve(g), curve(b), phi, d.omega0, d.t_f).map(Some)
    }

    pub fn reference(&self) -> Option<ReferenceSchedule> {
        let Self::TwoLevel(d) = self else {
            return None;
        };
        let t_f = d.t_f;
        d.reference.as_ref().map(|r| match r {
            ReferenceDocument::Curves {
                delta_coefficients,
                omega_r_coefficients,
                phi_coefficients,
            } => ReferenceSchedule::Curves(CurveSchedule {
                delta: curve(delta_coefficients),
                omega_r: curve(omega_r_coefficients),
                phi: curve(phi_coefficients),
                t_f,
            }),
            ReferenceDocument::Mixing {
                theta_coefficients,
                omega_coefficients,
                phi_coefficients,
            } => ReferenceSchedule::Mixing(MixingSchedule {
                theta: curve(theta_coefficients),
                omega: curve(omega_coefficients),
                phi: curve(phi_coefficients),
                t_f,
            }),
        })
    }

    /// Method used when none is requested.
    pub fn default_method(&self) -> Method {
        match self {
            Self::Oscillator(d) if d.b_coefficients.is_none() => Method::Counterdiabatic,
            Self::TwoLevel(d) if d.gamma_coefficients.is_none() => Method::Counterdiabatic,
            _ => Method::Invariant,
        }
    }

    /// Rejects method/document combinations that lack the needed curves.
    pub fn check_method(&self, method: Method) -> Result<()> {
        let ok = match (self, method) {
            (Self::Oscillator(d), Method::Invariant) => d.b_coefficients.is_some(),
            (Self::Oscillator(d), _) => d.omega_coefficients.is_some(),
            (Self::TwoLevel(d), Method::Invariant) => d.gamma_coefficients.is_some() && d.beta_coefficients.is_some(),
            (Self::TwoLevel(d), Method::Counterdiabatic) => {
                d.reference.is_some() || (d.gamma_coefficients.is_some() && d.beta_coefficients.is_some())
            }
            (Self::TwoLevel(d), Method::ReferenceOnly) => d.reference.is_some(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("method {method} needs curves this design does not provide")))
        }
    }
}
