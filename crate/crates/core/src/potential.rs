//! External potentials `V(x)` and their first two derivatives.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;
use std::sync::Arc;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// User-supplied potential. `d2v` may be omitted, in which case the second
/// derivative is taken by central differences of `dv`.
#[derive(Clone)]
pub struct CustomPotential {
    pub label: String,
    pub v: ScalarFn,
    pub dv: ScalarFn,
    pub d2v: Option<ScalarFn>,
}

impl fmt::Debug for CustomPotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomPotential")
            .field("label", &self.label)
            .field("analytic_d2v", &self.d2v.is_some())
            .finish()
    }
}

#[derive(Debug, Clone)]
pub enum Potential {
    Free,
    /// `V = alpha x`
    Linear { alpha: f64 },
    /// `V = kappa x^4`
    Quartic { kappa: f64 },
    Custom(CustomPotential),
}

impl PartialEq for Potential {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Potential::Free, Potential::Free) => true,
            (Potential::Linear { alpha: a }, Potential::Linear { alpha: b }) => a == b,
            (Potential::Quartic { kappa: a }, Potential::Quartic { kappa: b }) => a == b,
            (Potential::Custom(a), Potential::Custom(b)) => {
                let d2v_eq = match (&a.d2v, &b.d2v) {
                    (Some(f), Some(g)) => Arc::ptr_eq(f, g),
                    (None, None) => true,
                    _ => false,
                };
                a.label == b.label && Arc::ptr_eq(&a.v, &b.v) && Arc::ptr_eq(&a.dv, &b.dv) && d2v_eq
            }
            _ => false,
        }
    }
}

impl Potential {
    pub fn custom<V, DV>(label: impl Into<String>, v: V, dv: DV) -> Self
    where
        V: Fn(f64) -> f64 + Send + Sync + 'static,
        DV: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Potential::Custom(CustomPotential {
            label: label.into(),
            v: Arc::new(v),
            dv: Arc::new(dv),
            d2v: None,
        })
    }

    pub fn with_d2v<F>(self, d2v: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        match self {
            Potential::Custom(mut c) => {
                c.d2v = Some(Arc::new(d2v));
                Potential::Custom(c)
            }
            other => other,
        }
    }

    pub fn label(&self) -> &str {
        match self {
            Potential::Free => "free",
            Potential::Linear { .. } => "linear",
            Potential::Quartic { .. } => "quartic",
            Potential::Custom(c) => &c.label,
        }
    }

    pub fn is_free(&self) -> bool {
        matches!(self, Potential::Free)
    }

    pub fn v(&self, x: f64) -> f64 {
        match self {
            Potential::Free => 0.0,
            Potential::Linear { alpha } => alpha * x,
            Potential::Quartic { kappa } => kappa * x.powi(4),
            Potential::Custom(c) => (c.v)(x),
        }
    }

    pub fn dv(&self, x: f64) -> f64 {
        match self {
            Potential::Free => 0.0,
            Potential::Linear { alpha } => *alpha,
            Potential::Quartic { kappa } => 4.0 * kappa * x.powi(3),
            Potential::Custom(c) => (c.dv)(x),
        }
    }

    pub fn d2v(&self, x: f64) -> f64 {
        match self {
            Potential::Free | Potential::Linear { .. } => 0.0,
            Potential::Quartic { kappa } => 12.0 * kappa * x * x,
            Potential::Custom(c) => match &c.d2v {
                Some(f) => f(x),
                None => {
                    let h = 1e-5 * x.abs().max(1.0);
                    ((c.dv)(x + h) - (c.dv)(x - h)) / (2.0 * h)
                }
            },
        }
    }

    fn parameters_finite(&self) -> bool {
        match self {
            Potential::Linear { alpha } => alpha.is_finite(),
            Potential::Quartic { kappa } => kappa.is_finite(),
            _ => true,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
enum PotentialSpec {
    Free,
    Linear { alpha: f64 },
    Quartic { kappa: f64 },
}

impl Serialize for Potential {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let spec = match self {
            Potential::Free => PotentialSpec::Free,
            Potential::Linear { alpha } => PotentialSpec::Linear { alpha: *alpha },
            Potential::Quartic { kappa } => PotentialSpec::Quartic { kappa: *kappa },
            Potential::Custom(c) => {
                return Err(serde::ser::Error::custom(format!(
                    "custom potential '{}' cannot be serialized",
                    c.label
                )))
            }
        };
        spec.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Potential {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let p = match PotentialSpec::deserialize(d)? {
            PotentialSpec::Free => Potential::Free,
            PotentialSpec::Linear { alpha } => Potential::Linear { alpha },
            PotentialSpec::Quartic { kappa } => Potential::Quartic { kappa },
        };
        if !p.parameters_finite() {
            return Err(D::Error::custom("potential parameters must be finite"));
        }
        Ok(p)
    }
}
