use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::AttackError;

/// Supported perturbation norms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Norm {
    L2,
    LInf,
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Norm::L2 => "2",
            Norm::LInf => "inf",
        })
    }
}

impl FromStr for Norm {
    type Err = AttackError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "2" | "l2" => Ok(Norm::L2),
            "inf" | "linf" | "infinity" => Ok(Norm::LInf),
            other => Err(AttackError::UnsupportedNorm(other.to_owned())),
        }
    }
}

impl Serialize for Norm {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Norm {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl Norm {
    pub fn of(self, v: &[f64]) -> f64 {
        match self {
            Norm::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            Norm::LInf => v.iter().fold(0.0, |m, x| m.max(x.abs())),
        }
    }
}

/// Closed ℓp ball of radius `xi` on the `[0, 1]` pixel scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBudget", into = "RawBudget")]
pub struct PerturbationBudget {
    norm: Norm,
    xi: f64,
}

#[derive(Serialize, Deserialize)]
struct RawBudget {
    p: Norm,
    xi: f64,
    #[serde(default, skip_deserializing)]
    epsilon: f64,
}

impl TryFrom<RawBudget> for PerturbationBudget {
    type Error = AttackError;

    fn try_from(raw: RawBudget) -> Result<Self, Self::Error> {
        PerturbationBudget::new(raw.p, raw.xi)
    }
}

impl From<PerturbationBudget> for RawBudget {
    fn from(b: PerturbationBudget) -> Self {
        RawBudget {
            p: b.norm,
            xi: b.xi,
            epsilon: b.epsilon(),
        }
    }
}

impl PerturbationBudget {
    pub fn new(norm: Norm, xi: f64) -> Result<Self, AttackError> {
        if !(xi > 0.0 && xi.is_finite()) {
            return Err(AttackError::InvalidBudget(format!("radius must be positive and finite, got {xi}")));
        }
        Ok(Self { norm, xi })
    }

    pub fn linf(xi: f64) -> Result<Self, AttackError> {
        Self::new(Norm::LInf, xi)
    }

    /// Budget expressed on the 8-bit scale, `ε = 255 · ξ`.
    pub fn from_epsilon(norm: Norm, epsilon: f64) -> Result<Self, AttackError> {
        Self::new(norm, epsilon / 255.0)
    }

    pub fn norm(&self) -> Norm {
        self.norm
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn epsilon(&self) -> f64 {
        self.xi * 255.0
    }

    pub fn contains(&self, nu: &[f64]) -> bool {
        self.norm.of(nu) <= self.xi
    }
}

/// Euclidean projection onto the budget ball.
///
/// ℓ∞ clamps each coordinate to `[−ξ, ξ]`; ℓ2 rescales radially when
/// `‖ν‖₂ > ξ`. Points already inside are returned unchanged, so the map is
/// idempotent bit for bit.
pub fn project(nu: &[f64], budget: &PerturbationBudget) -> Vec<f64> {
    let xi = budget.xi();
    match budget.norm() {
        Norm::LInf => nu.iter().map(|v| v.clamp(-xi, xi)).collect(),
        Norm::L2 => {
            let norm = Norm::L2.of(nu);
            if norm <= xi {
                return nu.to_vec();
            }
            // Rounding can leave the rescaled norm a few ulps above ξ.
            let mut factor = xi / norm;
            loop {
                let out: Vec<f64> = nu.iter().map(|v| v * factor).collect();
                if Norm::L2.of(&out) <= xi {
                    return out;
                }
                factor *= 1.0 - f64::EPSILON;
            }
        }
    }
}
