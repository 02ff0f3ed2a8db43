use serde::{Deserialize, Serialize};

use super::{KernelError, ScaleFunction};
use crate::geometry::{ball_volume, dist, norm, random_in_ball, sphere_area, sphere_directions};
use crate::quadrature::{integrate, QuadError, QuadOptions};
use crate::rng::StreamKey;
use crate::stats::Moments;

/// Coefficient `κ(x, z)` of a jump density, bounded in `[lo, hi]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Kappa {
    Constant {
        value: f64,
    },
    /// `lo` or `hi` by the parity of the cell of the base point `x`.
    Checkerboard {
        lo: f64,
        hi: f64,
        cell: f64,
    },
    /// Piecewise-linear in `|z|`, held constant outside the table.
    RadialTable {
        lo: f64,
        hi: f64,
        points: Vec<(f64, f64)>,
    },
    /// `hi` for jumps with `z·direction > 0`, `lo` otherwise. Not symmetric in `z`.
    Skewed {
        lo: f64,
        hi: f64,
        direction: Vec<f64>,
    },
}

impl Kappa {
    pub fn bounds(&self) -> (f64, f64) {
        match self {
            Kappa::Constant { value } => (*value, *value),
            Kappa::Checkerboard { lo, hi, .. } | Kappa::RadialTable { lo, hi, .. } | Kappa::Skewed { lo, hi, .. } => {
                (*lo, *hi)
            }
        }
    }

    #[inline]
    pub fn eval(&self, x: &[f64], z: &[f64]) -> f64 {
        match self {
            Kappa::Constant { value } => *value,
            Kappa::Checkerboard { lo, hi, cell } => {
                let parity: i64 = x.iter().map(|v| (v / cell).floor() as i64).sum();
                if parity.rem_euclid(2) == 0 {
                    *lo
                } else {
                    *hi
                }
            }
            Kappa::RadialTable { points, .. } => {
                let s = norm(z);
                let i = points.partition_point(|p| p.0 <= s);
                if i == 0 {
                    points[0].1
                } else if i == points.len() {
                    points[points.len() - 1].1
                } else {
                    let (s0, k0) = points[i - 1];
                    let (s1, k1) = points[i];
                    k0 + (k1 - k0) * (s - s0) / (s1 - s0)
                }
            }
            Kappa::Skewed { lo, hi, direction } => {
                if crate::geometry::dot(z, direction) > 0.0 {
                    *hi
                } else {
                    *lo
                }
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Kappa::Constant { .. })
    }

    pub fn symmetric_in_z(&self) -> bool {
        !matches!(self, Kappa::Skewed { .. })
    }

    pub fn validate(&self, dim: usize) -> Result<(), KernelError> {
        let (lo, hi) = self.bounds();
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(KernelError::InvalidParameter(format!(
                "coefficient bounds must satisfy 0 < lo ≤ hi < ∞, got [{lo}, {hi}]"
            )));
        }
        match self {
            Kappa::Checkerboard { cell, .. } if !(*cell > 0.0) => Err(KernelError::InvalidParameter(
                "checkerboard cell must be positive".into(),
            )),
            Kappa::RadialTable { points, .. } => {
                if points.is_empty() || points.windows(2).any(|w| !(w[1].0 > w[0].0)) {
                    return Err(KernelError::InvalidParameter(
                        "radial table radii must be strictly increasing".into(),
                    ));
                }
                if points.iter().any(|p| p.1 < lo || p.1 > hi) {
                    return Err(KernelError::InvalidParameter(
                        "radial table values outside declared bounds".into(),
                    ));
                }
                Ok(())
            }
            Kappa::Skewed { direction, .. } if direction.len() != dim => Err(KernelError::InvalidParameter(
                "skew direction has the wrong dimension".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// Large-jump damping `T(s) = exp(λ s^β)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Temper {
    #[default]
    None,
    Exponential {
        lambda: f64,
        beta: f64,
    },
}

impl Temper {
    #[inline]
    pub fn factor(&self, s: f64) -> f64 {
        match self {
            Temper::None => 1.0,
            Temper::Exponential { lambda, beta } => (lambda * s.powf(*beta)).exp(),
        }
    }
}

/// Radial shape of the density before the coefficient and temper are applied.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Profile {
    /// `1 / (s^d φ(s))` with the kernel's scale function.
    #[default]
    Scale,
    /// `s^{-d} ∧ s^{-d-α}`, the geometric-stable comparison density.
    GeometricStable { alpha: f64 },
}

/// A jump density `j(x, z) = κ(x, z) · profile(|z|) / T(|z|)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpKernelSpec {
    pub dim: usize,
    pub kappa: Kappa,
    pub scale: ScaleFunction,
    #[serde(default)]
    pub temper: Temper,
    #[serde(default)]
    pub profile: Profile,
}

impl JumpKernelSpec {
    /// `κ/|z|^{d+α}` with constant `κ`.
    pub fn stable(dim: usize, alpha: f64, kappa: f64) -> Self {
        Self {
            dim,
            kappa: Kappa::Constant { value: kappa },
            scale: ScaleFunction::power(alpha),
            temper: Temper::None,
            profile: Profile::Scale,
        }
    }

    pub fn tempered_stable(dim: usize, alpha: f64, kappa: f64, lambda: f64, beta: f64) -> Self {
        Self {
            temper: Temper::Exponential { lambda, beta },
            ..Self::stable(dim, alpha, kappa)
        }
    }

    /// `κ (|z|^{-d} ∧ |z|^{-d-α})` paired with the geometric-stable scale function.
    pub fn geometric_stable(dim: usize, alpha: f64, kappa: f64) -> Self {
        Self {
            dim,
            kappa: Kappa::Constant { value: kappa },
            scale: ScaleFunction::geometric_stable(alpha),
            temper: Temper::None,
            profile: Profile::GeometricStable { alpha },
        }
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        if self.dim == 0 {
            return Err(KernelError::InvalidParameter("dimension must be at least 1".into()));
        }
        self.kappa.validate(self.dim)?;
        self.scale.validate()?;
        if let Temper::Exponential { lambda, beta } = self.temper {
            if !(lambda > 0.0 && beta > 0.0 && beta <= 1.0) {
                return Err(KernelError::InvalidParameter(format!(
                    "temper needs λ > 0 and β ∈ (0, 1], got λ = {lambda}, β = {beta}"
                )));
            }
        }
        if let Profile::GeometricStable { alpha } = self.profile {
            if !(alpha > 0.0) {
                return Err(KernelError::InvalidParameter(
                    "profile exponent must be positive".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn symmetric_in_z(&self) -> bool {
        self.kappa.symmetric_in_z()
    }

    pub fn is_isotropic(&self) -> bool {
        self.kappa.is_constant()
    }

    /// Radial factor `profile(s)/T(s)`, without the coefficient.
    #[inline]
    pub fn radial(&self, s: f64) -> Result<f64, KernelError> {
        let d = self.dim as i32;
        let base = match self.profile {
            Profile::Scale => 1.0 / (s.powi(d) * self.scale.eval(s)?),
            Profile::GeometricStable { alpha } => {
                if s <= 1.0 {
                    s.powi(-d)
                } else {
                    s.powf(-(d as f64) - alpha)
                }
            }
        };
        Ok(base / self.temper.factor(s))
    }

    /// Density of a jump from `x` by `z`.
    pub fn density(&self, x: &[f64], z: &[f64]) -> Result<f64, KernelError> {
        let s = norm(z);
        if s == 0.0 {
            return Err(KernelError::Domain("jump density is undefined at z = 0".into()));
        }
        Ok(self.kappa.eval(x, z) * self.radial(s)?)
    }

    /// Radially symmetric upper envelope `κ_hi · profile(s)/T(s)`.
    pub fn envelope(&self, s: f64) -> Result<f64, KernelError> {
        Ok(self.kappa.bounds().1 * self.radial(s)?)
    }
}

/// A deterministic integral with its relative error estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mass {
    pub value: f64,
    pub rel_err: f64,
}

/// Integration controls for radial masses.
#[derive(Clone, Copy, Debug)]
pub struct MassOptions {
    pub rel_tol: f64,
    /// Decades beyond the inner radius after which a still-growing tail is divergent.
    pub max_decades: f64,
}

impl Default for MassOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            max_decades: 80.0,
        }
    }
}

/// Declared accuracy of every radial mass.
pub const MASS_REL_TOL: f64 = 1e-6;

/// `∫_a^b g(s) ds` in the variable `u = log s`, chunked by decades.
pub(crate) fn radial_integral<G>(g: G, a: f64, b: Option<f64>, opts: MassOptions) -> Result<Mass, KernelError>
where
    G: Fn(f64) -> Result<f64, KernelError>,
{
    if !(a > 0.0) {
        return Err(KernelError::Domain(format!("radius must be positive, got {a}")));
    }
    let step = std::f64::consts::LN_10;
    let u0 = a.ln();
    let u_end = b.map(f64::ln).unwrap_or(f64::INFINITY);
    if u_end <= u0 {
        return Ok(Mass {
            value: 0.0,
            rel_err: 0.0,
        });
    }
    let h = |u: f64| -> f64 {
        let s = u.exp();
        g(s).map(|v| v * s).unwrap_or(f64::NAN)
    };
    let quad = QuadOptions {
        rel_tol: opts.rel_tol,
        abs_tol: 1e-300,
        max_intervals: 2000,
    };
    let mut total = 0.0;
    let mut err = 0.0;
    let mut prev_chunk: Option<f64> = None;
    let mut lo = u0;
    let mut chunks = 0usize;
    let first = (u0 / step).floor() as i64 + 1;
    loop {
        let edge = (first + chunks as i64) as f64 * step;
        let hi = edge.min(u_end);
        let r = match integrate(h, lo, hi, quad) {
            Ok(r) => r,
            Err(QuadError::NonFinite { x }) => {
                // NaN marks a failed evaluation; surface the underlying error
                return Err(match g(x.exp()) {
                    Err(e) => e,
                    Ok(_) => KernelError::Quadrature(format!("integrand not finite at s = {}", x.exp())),
                });
            }
            Err(e) => return Err(KernelError::Quadrature(e.to_string())),
        };
        total += r.value;
        err += r.abs_err;
        chunks += 1;
        if hi >= u_end {
            break;
        }
        if chunks >= 2 && r.value.abs() <= 1e-15 * total.abs() {
            break;
        }
        if hi - u0 > opts.max_decades * step {
            let q = prev_chunk
                .map(|p| if p > 0.0 { r.value / p } else { 0.0 })
                .unwrap_or(1.0);
            if q < 1.0 - 1e-3 {
                let rem = r.value * q / (1.0 - q);
                total += rem;
                err += 0.1 * rem;
                break;
            }
            return Err(KernelError::Divergent { radius: a });
        }
        prev_chunk = Some(r.value);
        lo = hi;
    }
    let rel_err = if total == 0.0 { 0.0 } else { err / total.abs() };
    Ok(Mass { value: total, rel_err })
}

/// Angular mean of `κ(x, sθ) w(θ)` over the unit sphere.
fn angular_mean<W: Fn(&[f64]) -> f64>(j: &JumpKernelSpec, x: &[f64], s: f64, dirs: &[Vec<f64>], w: &W) -> f64 {
    let mut z = vec![0.0; j.dim];
    let mut acc = 0.0;
    for th in dirs {
        for (zi, ti) in z.iter_mut().zip(th) {
            *zi = s * ti;
        }
        acc += j.kappa.eval(x, &z) * w(th);
    }
    acc / dirs.len() as f64
}

/// `∫_{a<|z|<b} w(z/|z|) j(x, z) dz` (with `b = None` meaning `∞`).
pub fn shell_mass<W>(
    j: &JumpKernelSpec,
    x: &[f64],
    a: f64,
    b: Option<f64>,
    weight: Option<W>,
) -> Result<Mass, KernelError>
where
    W: Fn(&[f64]) -> f64,
{
    let sigma = sphere_area(j.dim);
    let d = j.dim as i32;
    match weight {
        None if j.kappa.is_constant() => {
            let kappa = j.kappa.bounds().0;
            radial_integral(
                |s| Ok(sigma * kappa * s.powi(d - 1) * j.radial(s)?),
                a,
                b,
                MassOptions::default(),
            )
        }
        None => {
            let dirs = sphere_directions(j.dim);
            let one = |_: &[f64]| 1.0;
            radial_integral(
                |s| Ok(sigma * angular_mean(j, x, s, &dirs, &one) * s.powi(d - 1) * j.radial(s)?),
                a,
                b,
                MassOptions::default(),
            )
        }
        Some(w) => {
            let dirs = sphere_directions(j.dim);
            radial_integral(
                |s| Ok(sigma * angular_mean(j, x, s, &dirs, &w) * s.powi(d - 1) * j.radial(s)?),
                a,
                b,
                MassOptions::default(),
            )
        }
    }
}

/// `J(x, B(x,r)^c) = ∫_{|z|>r} j(x, z) dz`.
pub fn tail_mass(j: &JumpKernelSpec, x: &[f64], r: f64) -> Result<Mass, KernelError> {
    if !(r > 0.0) {
        return Err(KernelError::Domain(format!("tail mass needs r > 0, got {r}")));
    }
    if x.len() != j.dim {
        return Err(KernelError::Domain("base point has the wrong dimension".into()));
    }
    shell_mass::<fn(&[f64]) -> f64>(j, x, r, None, None)
}

/// `J(x, B(y, s))` with its uncertainty.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallMass {
    pub value: f64,
    pub stderr: f64,
    pub monte_carlo: bool,
}

/// Points used for Monte Carlo ball masses in `d ≥ 2`.
pub const BALL_MASS_POINTS: u64 = 100_000;

/// `J(x, B(y, s))`: quadrature in `d = 1`, uniform Monte Carlo over the ball otherwise.
pub fn ball_mass(j: &JumpKernelSpec, x: &[f64], y: &[f64], s: f64, key: StreamKey) -> Result<BallMass, KernelError> {
    if !(s > 0.0) {
        return Err(KernelError::Domain(format!("ball radius must be positive, got {s}")));
    }
    if dist(x, y) <= s {
        return Err(KernelError::Domain("base point lies inside the target ball".into()));
    }
    if j.dim == 1 {
        let f = |z: f64| j.density(x, &[z - x[0]]).unwrap_or(f64::NAN);
        let r = integrate(f, y[0] - s, y[0] + s, QuadOptions::rel(1e-12))
            .map_err(|e| KernelError::Quadrature(e.to_string()))?;
        return Ok(BallMass {
            value: r.value,
            stderr: r.abs_err,
            monte_carlo: false,
        });
    }
    let mut rng = key.rng();
    let mut m = Moments::default();
    let mut z = vec![0.0; j.dim];
    for _ in 0..BALL_MASS_POINTS {
        let p = random_in_ball(&mut rng, y, s);
        for ((zi, pi), xi) in z.iter_mut().zip(&p).zip(x) {
            *zi = pi - xi;
        }
        m.push(j.density(x, &z)?);
    }
    let vol = ball_volume(j.dim) * s.powi(j.dim as i32);
    Ok(BallMass {
        value: vol * m.mean,
        stderr: vol * m.stderr(),
        monte_carlo: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_tail_closed_form_1d() {
        let j = JumpKernelSpec::stable(1, 1.0, 1.0);
        let t1 = tail_mass(&j, &[0.0], 1.0).unwrap();
        let t2 = tail_mass(&j, &[0.0], 2.0).unwrap();
        assert!((t1.value - 2.0).abs() < 1e-10, "{t1:?}");
        assert!((t2.value - 1.0).abs() < 1e-10);
        assert!(t1.rel_err <= MASS_REL_TOL);
    }

    #[test]
    fn stable_tail_closed_form_3d() {
        // 4π κ r^{-α}/α
        let j = JumpKernelSpec::stable(3, 1.5, 0.7);
        let t = tail_mass(&j, &[0.1, 0.2, 0.3], 0.4).unwrap();
        let exact = 4.0 * std::f64::consts::PI * 0.7 * 0.4f64.powf(-1.5) / 1.5;
        assert!((t.value / exact - 1.0).abs() < 1e-9);
    }

    #[test]
    fn tempered_tail_matches_brute_force() {
        // 2 ∫_1^∞ e^{-s} s^{-2} ds by plain trapezoid on a fine grid
        let j = JumpKernelSpec::tempered_stable(1, 1.0, 1.0, 1.0, 1.0);
        let t = tail_mass(&j, &[0.0], 1.0).unwrap();
        let n = 2_000_000;
        let h = 60.0 / n as f64;
        let f = |s: f64| (-s).exp() / (s * s);
        let mut acc = 0.5 * (f(1.0) + f(61.0));
        for k in 1..n {
            acc += f(1.0 + k as f64 * h);
        }
        let brute = 2.0 * acc * h;
        assert!((t.value / brute - 1.0).abs() < 1e-8, "{} vs {}", t.value, brute);
    }

    #[test]
    fn tail_of_log_kernel_diverges() {
        // κ |z|^{-d} with a profile exponent ~ 0 is not integrable at infinity
        let mut j = JumpKernelSpec::geometric_stable(1, 1.0, 1.0);
        j.profile = Profile::GeometricStable { alpha: 1e-9 };
        let t = tail_mass(&j, &[0.0], 1.0);
        assert!(matches!(t, Err(KernelError::Divergent { .. })), "{t:?}");
        assert!(matches!(tail_mass(&j, &[0.0], 0.0), Err(KernelError::Domain(_))));
    }

    #[test]
    fn ball_mass_1d_closed_form() {
        // ∫_9^11 t^{-2} dt = 1/9 - 1/11
        let j = JumpKernelSpec::stable(1, 1.0, 1.0);
        let m = ball_mass(&j, &[0.0], &[10.0], 1.0, StreamKey::new(0, 0)).unwrap();
        assert!((m.value - (1.0 / 9.0 - 1.0 / 11.0)).abs() < 1e-13);
        assert!(ball_mass(&j, &[0.0], &[0.5], 1.0, StreamKey::new(0, 0)).is_err());
    }

    #[test]
    fn ball_mass_2d_monte_carlo_near_point_mass() {
        // far ball: J(x, B(y,s)) ≈ |B| j(y - x)
        let j = JumpKernelSpec::stable(2, 1.0, 1.0);
        let m = ball_mass(&j, &[0.0, 0.0], &[20.0, 0.0], 0.5, StreamKey::new(1, 2)).unwrap();
        let approx = std::f64::consts::PI * 0.25 / 20f64.powi(3);
        assert!((m.value / approx - 1.0).abs() < 0.01);
        assert!(m.monte_carlo && m.stderr > 0.0);
    }

    #[test]
    fn variable_kappa_tail_between_envelopes() {
        let mut j = JumpKernelSpec::stable(2, 1.2, 1.0);
        j.kappa = Kappa::RadialTable {
            lo: 0.5,
            hi: 2.0,
            points: vec![(0.0, 0.5), (1.0, 2.0)],
        };
        let t = tail_mass(&j, &[0.0, 0.0], 0.3).unwrap().value;
        let base = std::f64::consts::TAU * 0.3f64.powf(-1.2) / 1.2;
        assert!(t > 0.5 * base && t < 2.0 * base);
    }
}
