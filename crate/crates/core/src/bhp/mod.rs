//! Regular harmonic functions, boundary Harnack ratio scans, the approximate
//! factorization and the layered box and chain quantities.

mod boxes;
mod factor;
mod scan;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use boxes::{box_diagnostics, chain_decay, gamma_radius, BoxDiagnostics, ChainDecay, Layer};
pub use factor::{factorization_check, FactorizationPoint, FactorizationReport};
pub use scan::{bhp_scan, bhp_series, BhpReport, BhpSeries, ScanConfig};

use crate::domains::Domain;
use crate::exitstats::{fold_exits_until, EstimationError};
use crate::geometry::{dist, dot, Point};
use crate::kernel::{shell_mass, JumpKernelSpec, KernelError, Temper};
use crate::rng::StreamKey;
use crate::sampler::{Exactness, ProcessModel, SamplerError};
use crate::stats::{Estimate, Merge, Moments, Precision};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BhpError {
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("underpowered: {0}")]
    Underpowered(String),
}

impl From<SamplerError> for BhpError {
    fn from(e: SamplerError) -> Self {
        BhpError::Estimation(e.into())
    }
}

/// Nonnegative exterior data `g = a · 1{|y−ξ| ≥ inner} · 1{|y−ξ| < outer} · 1{(y−ξ)·side > 0}`.
///
/// With `inner ≥ 2r` the regular harmonic function it induces in
/// `D ∩ B(ξ, 2r)` vanishes on `B(ξ, 2r) ∖ D`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryData {
    pub center: Point,
    pub inner: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outer: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub side: Option<Point>,
    #[serde(default = "unit")]
    pub scale: f64,
}

fn unit() -> f64 {
    1.0
}

impl BoundaryData {
    /// Indicator of the far field `|y − ξ| ≥ 2r`.
    pub fn far_field(xi: &[f64], r: f64) -> Self {
        Self {
            center: xi.to_vec(),
            inner: 2.0 * r,
            outer: None,
            side: None,
            scale: 1.0,
        }
    }

    /// Far field restricted to the half-space `(y − ξ)·side > 0`.
    pub fn far_half(xi: &[f64], r: f64, side: Point) -> Self {
        Self {
            side: Some(side),
            ..Self::far_field(xi, r)
        }
    }

    pub fn scaled(mut self, a: f64) -> Self {
        self.scale *= a;
        self
    }

    #[inline]
    pub fn eval(&self, y: &[f64]) -> f64 {
        let s = dist(y, &self.center);
        if s < self.inner || self.outer.is_some_and(|o| s >= o) {
            return 0.0;
        }
        if let Some(side) = &self.side {
            let z: Point = y.iter().zip(&self.center).map(|(a, b)| a - b).collect();
            if dot(&z, side) <= 0.0 {
                return 0.0;
            }
        }
        self.scale
    }

    pub fn sup(&self) -> f64 {
        self.scale
    }

    /// Checks that `g` vanishes on `B(ξ, 2r)`.
    pub fn validate(&self, xi: &[f64], r: f64) -> Result<(), BhpError> {
        if !(self.scale > 0.0) {
            return Err(BhpError::Precondition("boundary data scale must be positive".into()));
        }
        let offset = dist(xi, &self.center);
        if self.inner - offset < 2.0 * r * (1.0 - 1e-12) {
            return Err(BhpError::Precondition(format!(
                "boundary data must vanish on B(ξ, 2r): inner radius {} about a center {offset} away, 2r = {}",
                self.inner,
                2.0 * r
            )));
        }
        Ok(())
    }

    /// `∫_{B(ξ, ρ)^c} g(y) J(ξ, dy)`.
    pub fn kernel_integral(&self, j: &JumpKernelSpec, xi: &[f64], rho: f64) -> Result<f64, KernelError> {
        if dist(xi, &self.center) > 0.0 {
            return Err(KernelError::Domain("kernel integral needs data centered at ξ".into()));
        }
        let a = self.inner.max(rho);
        if self.outer.is_some_and(|o| o <= a) {
            return Ok(0.0);
        }
        let m = match &self.side {
            None => shell_mass::<fn(&[f64]) -> f64>(j, xi, a, self.outer, None)?,
            Some(side) => {
                let w = |u: &[f64]| if dot(u, side) > 0.0 { 1.0 } else { 0.0 };
                shell_mass(j, xi, a, self.outer, Some(w))?
            }
        };
        Ok(self.scale * m.value)
    }
}

/// Checks the radius restriction of the model and labels approximate samplers.
pub(crate) fn check_radius(model: &ProcessModel, r: f64) -> Result<Option<String>, BhpError> {
    if !(r > 0.0) {
        return Err(BhpError::Precondition("radius must be positive".into()));
    }
    if let Ok(j) = model.kernel() {
        if j.temper != Temper::None && r > 1.0 {
            return Err(BhpError::Precondition(format!(
                "tempered kernels are only verified for r ≤ 1, got r = {r}"
            )));
        }
    }
    Ok(match model.exactness() {
        Exactness::ExactExitLaw => None,
        Exactness::WeakApproximation { .. } => Some("approximation-grade sampler".into()),
    })
}

#[derive(Default, Clone)]
pub(crate) struct MultiMoments(pub Vec<Moments>);

impl Merge for MultiMoments {
    fn merge(&mut self, o: Self) {
        if self.0.is_empty() {
            self.0 = o.0;
            return;
        }
        for (a, b) in self.0.iter_mut().zip(o.0) {
            a.merge(b);
        }
    }
}

fn relative(m: &Moments) -> f64 {
    if m.n < 2 || m.mean == 0.0 {
        f64::INFINITY
    } else {
        m.stderr() / m.mean.abs()
    }
}

/// Estimates `h_k(x) = E_x[g_k(X_{τ_U})]`, `U = D ∩ B(ξ, 2r)`, for several
/// data from common random numbers, escalating until each relative standard
/// error is below the target.
pub fn eval_harmonic_multi(
    model: &ProcessModel,
    domain: &Domain,
    xi: &[f64],
    r: f64,
    data: &[BoundaryData],
    x: &[f64],
    precision: Precision,
    key: StreamKey,
) -> Result<(Vec<Estimate>, bool), BhpError> {
    for g in data {
        g.validate(xi, r)?;
    }
    let u = domain.truncate(xi, 2.0 * r);
    if !u.contains(x) {
        return Err(BhpError::Precondition(format!("{x:?} is not in D ∩ B(ξ, 2r)")));
    }
    let k = data.len();
    let (acc, stalls, _, capped) = fold_exits_until(
        model,
        &u,
        x,
        precision,
        key,
        |s, acc: &mut MultiMoments| {
            if acc.0.is_empty() {
                acc.0 = vec![Moments::default(); k];
            }
            for (m, g) in acc.0.iter_mut().zip(data) {
                m.push(g.eval(&s.y));
            }
        },
        |acc| acc.0.iter().all(|m| relative(m) < precision.target_rel),
    )?;
    Ok((
        acc.0.iter().map(|m| Estimate::mean(m).with_stalls(stalls)).collect(),
        capped,
    ))
}

/// Estimate of the regular harmonic function induced by `g` at `x`.
pub fn eval_harmonic(
    model: &ProcessModel,
    domain: &Domain,
    xi: &[f64],
    r: f64,
    g: &BoundaryData,
    x: &[f64],
    n: u64,
    key: StreamKey,
) -> Result<Estimate, BhpError> {
    let (mut v, _) = eval_harmonic_multi(
        model,
        domain,
        xi,
        r,
        std::slice::from_ref(g),
        x,
        Precision::fixed(n),
        key,
    )?;
    Ok(v.remove(0))
}

/// Grid points of `D ∩ B(ξ, radius)` with `δ(x) ≥ min_delta`, from the
/// smallest regular lattice over the bounding box yielding `target` points.
///
/// The lattice is fixed in units of `radius`, so scaling `ξ`-centered data
/// by `s` scales the grid by `s`.
pub fn grid_points(domain: &Domain, xi: &[f64], radius: f64, target: usize, min_delta: f64) -> Vec<Point> {
    let d = xi.len();
    let mut best = Vec::new();
    for m in 2usize..=256 {
        let total = m.checked_pow(d as u32).unwrap_or(usize::MAX);
        if total > 4_000_000 {
            break;
        }
        let mut pts = Vec::new();
        let mut idx = vec![0usize; d];
        'outer: loop {
            let x: Point = idx
                .iter()
                .zip(xi)
                .map(|(&i, c)| c + radius * (-1.0 + (2.0 * i as f64 + 1.0) / m as f64))
                .collect();
            if dist(&x, xi) < radius && domain.dist_lb(&x).is_ok_and(|delta| delta >= min_delta) {
                pts.push(x);
            }
            for v in idx.iter_mut() {
                *v += 1;
                if *v < m {
                    continue 'outer;
                }
                *v = 0;
            }
            break;
        }
        if pts.len() >= target {
            return pts;
        }
        if pts.len() > best.len() {
            best = pts;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn far_field_vanishes_near_center() {
        let g = BoundaryData::far_half(&[0.0, 0.0], 0.5, vec![0.0, 1.0]);
        assert_eq!(g.eval(&[0.0, 0.99]), 0.0);
        assert_eq!(g.eval(&[0.0, 1.0]), 1.0);
        assert_eq!(g.eval(&[0.0, -3.0]), 0.0);
        assert!(g.validate(&[0.0, 0.0], 0.5).is_ok());
        assert!(g.validate(&[0.0, 0.0], 0.6).is_err());
        let mut rng = crate::rng::RngStream::new(0, 0);
        for _ in 0..10_000 {
            let y = crate::geometry::random_in_ball(&mut rng, &[0.0, 0.0], 1.0);
            assert_eq!(g.eval(&y), 0.0);
        }
    }

    #[test]
    fn kernel_integral_of_half_far_field_is_half_the_tail() {
        let j = JumpKernelSpec::stable(2, 1.5, 1.0);
        let xi = [0.0, 0.0];
        let all = BoundaryData::far_field(&xi, 0.5)
            .kernel_integral(&j, &xi, 0.75)
            .unwrap();
        let up = BoundaryData::far_half(&xi, 0.5, vec![0.0, 1.0])
            .kernel_integral(&j, &xi, 0.75)
            .unwrap();
        let tail = crate::kernel::tail_mass(&j, &xi, 1.0).unwrap().value;
        assert!((all / tail - 1.0).abs() < 1e-9);
        assert!((up / all - 0.5).abs() < 1e-9);
    }

    #[test]
    fn conservative_data_gives_one() {
        let m = ProcessModel::isotropic(1.5, 2).unwrap();
        let d = Domain::ball(vec![0.0, 0.0], 10.0);
        let g = BoundaryData::far_field(&[0.0, 0.0], 1.0);
        let h = eval_harmonic(&m, &d, &[0.0, 0.0], 1.0, &g, &[0.3, 0.2], 2000, StreamKey::new(0, 1)).unwrap();
        assert_eq!(h.value, 1.0);
    }

    #[test]
    fn linearity_under_common_random_numbers() {
        let m = ProcessModel::isotropic(1.5, 2).unwrap();
        let xi = [0.0, 0.0];
        let data = [
            BoundaryData::far_half(&xi, 0.5, vec![0.0, 1.0]),
            BoundaryData::far_half(&xi, 0.5, vec![0.0, -1.0]),
            BoundaryData::far_field(&xi, 0.5),
        ];
        let (h, _) = eval_harmonic_multi(
            &m,
            &Domain::SlitPlane,
            &xi,
            0.5,
            &data,
            &[0.2, 0.1],
            Precision::fixed(4000),
            StreamKey::new(5, 5),
        )
        .unwrap();
        assert!((h[0].value + h[1].value - h[2].value).abs() < 1e-12);
    }

    #[test]
    fn grid_scales_with_radius() {
        let a = grid_points(&Domain::SlitPlane, &[0.0, 0.0], 0.4, 12, 0.4 / 64.0);
        let b = grid_points(&Domain::SlitPlane, &[0.0, 0.0], 0.2, 12, 0.2 / 64.0);
        assert!(a.len() >= 12);
        assert_eq!(a.len(), b.len());
        for (p, q) in a.iter().zip(&b) {
            assert!((p[0] - 2.0 * q[0]).abs() < 1e-15 && (p[1] - 2.0 * q[1]).abs() < 1e-15);
        }
    }
}
