use serde::{Deserialize, Serialize};

use super::KernelError;

/// Closed-form or tabulated shape of a scale function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScaleForm {
    /// `φ(r) = r^α`.
    Power { alpha: f64 },
    /// `φ(r) = 1/(1 - log r)` for `r ≤ 1` and `r^α` beyond.
    GeometricStable { alpha: f64 },
    /// `φ(r) = r^α`; the decay parameters only act as a kernel temper.
    TemperedPower { alpha: f64, lambda: f64, beta: f64 },
    /// Monotone table interpolated piecewise-linearly in `(log r, log φ)`.
    Tabulated { points: Vec<(f64, f64)> },
}

/// An increasing scale function with `φ(0) = 0` and `φ(1) = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleFunction {
    pub form: ScaleForm,
    /// Declared `(c, β)` with `φ(R)/φ(r) ≤ c (R/r)^β`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doubling_upper: Option<(f64, f64)>,
    /// Declared `(C₁, C₂)` with `φ(C₁ r) ≥ C₂ φ(r)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reverse_doubling: Option<(f64, f64)>,
}

impl ScaleFunction {
    pub fn new(form: ScaleForm) -> Self {
        Self {
            form,
            doubling_upper: None,
            reverse_doubling: None,
        }
    }

    pub fn power(alpha: f64) -> Self {
        Self {
            form: ScaleForm::Power { alpha },
            doubling_upper: Some((1.0, alpha)),
            reverse_doubling: Some((2.0, 2f64.powf(alpha))),
        }
    }

    pub fn geometric_stable(alpha: f64) -> Self {
        Self::new(ScaleForm::GeometricStable { alpha })
    }

    pub fn tabulated(points: Vec<(f64, f64)>) -> Result<Self, KernelError> {
        let s = Self::new(ScaleForm::Tabulated { points });
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        match &self.form {
            ScaleForm::Power { alpha }
            | ScaleForm::GeometricStable { alpha }
            | ScaleForm::TemperedPower { alpha, .. } => {
                if !(*alpha > 0.0 && alpha.is_finite()) {
                    return Err(KernelError::InvalidParameter(format!(
                        "scale exponent must be positive, got {alpha}"
                    )));
                }
            }
            ScaleForm::Tabulated { points } => {
                if points.len() < 2 {
                    return Err(KernelError::Invariant(
                        "tabulated scale function needs at least two points".into(),
                    ));
                }
                for (i, w) in points.windows(2).enumerate() {
                    if !(w[1].0 > w[0].0) || !(w[1].1 > w[0].1) {
                        return Err(KernelError::Invariant(format!(
                            "tabulated scale function is not strictly increasing at entry {}",
                            i + 1
                        )));
                    }
                }
                if points[0].0 <= 0.0 || points[0].1 <= 0.0 {
                    return Err(KernelError::Invariant(
                        "tabulated radii and values must be positive".into(),
                    ));
                }
                let (lo, hi) = (points[0].0, points[points.len() - 1].0);
                if lo <= 1.0 && 1.0 <= hi {
                    let one = self.eval(1.0)?;
                    if (one - 1.0).abs() > 1e-12 {
                        return Err(KernelError::Invariant(format!(
                            "tabulated scale function must satisfy φ(1) = 1, got {one}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Radii over which `eval` is defined (excluding `r = 0`).
    pub fn support(&self) -> (f64, f64) {
        match &self.form {
            ScaleForm::Tabulated { points } => (points[0].0, points[points.len() - 1].0),
            _ => (0.0, f64::INFINITY),
        }
    }

    pub fn eval(&self, r: f64) -> Result<f64, KernelError> {
        if r == 0.0 {
            return Ok(0.0);
        }
        if !(r > 0.0) {
            return Err(KernelError::Domain(format!("scale function needs r ≥ 0, got {r}")));
        }
        Ok(match &self.form {
            ScaleForm::Power { alpha } | ScaleForm::TemperedPower { alpha, .. } => r.powf(*alpha),
            ScaleForm::GeometricStable { alpha } => {
                if r <= 1.0 {
                    1.0 / (1.0 - r.ln())
                } else {
                    r.powf(*alpha)
                }
            }
            ScaleForm::Tabulated { points } => {
                let (lo, hi) = (points[0].0, points[points.len() - 1].0);
                if r < lo || r > hi {
                    return Err(KernelError::Extrapolation { r, lo, hi });
                }
                let i = points.partition_point(|p| p.0 <= r);
                if i >= points.len() {
                    return Ok(points[points.len() - 1].1);
                }
                let (r0, f0) = points[i - 1];
                let (r1, f1) = points[i];
                let t = (r.ln() - r0.ln()) / (r1.ln() - r0.ln());
                (f0.ln() + t * (f1.ln() - f0.ln())).exp()
            }
        })
    }

    /// Exponent of the pure-power part, when the form has one.
    pub fn alpha(&self) -> Option<f64> {
        match &self.form {
            ScaleForm::Power { alpha }
            | ScaleForm::GeometricStable { alpha }
            | ScaleForm::TemperedPower { alpha, .. } => Some(*alpha),
            ScaleForm::Tabulated { .. } => None,
        }
    }
}
