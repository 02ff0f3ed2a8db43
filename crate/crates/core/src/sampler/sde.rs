use nalgebra::DMatrix;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::{stable_increment, ExitSample, SamplerError, StepLimit, Trace};
use crate::domains::Domain;
use crate::geometry::{dist, Point};
use crate::rng::RngStream;

/// Matrix field `σ(x)` driving `dX = σ(X₋) dZ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SigmaField {
    Constant {
        matrix: Vec<Vec<f64>>,
    },
    /// `lo` or `hi` by the parity of the unit cell of size `cell` containing `x`.
    Checkerboard {
        lo: Vec<Vec<f64>>,
        hi: Vec<Vec<f64>>,
        cell: f64,
    },
}

impl SigmaField {
    pub fn identity(d: usize) -> Self {
        Self::scalar(d, 1.0)
    }

    pub fn scalar(d: usize, c: f64) -> Self {
        let matrix = (0..d)
            .map(|i| (0..d).map(|j| if i == j { c } else { 0.0 }).collect())
            .collect();
        SigmaField::Constant { matrix }
    }

    fn matrices(&self) -> Vec<&Vec<Vec<f64>>> {
        match self {
            SigmaField::Constant { matrix } => vec![matrix],
            SigmaField::Checkerboard { lo, hi, .. } => vec![lo, hi],
        }
    }
}

fn to_matrix(rows: &[Vec<f64>], d: usize) -> Result<DMatrix<f64>, SamplerError> {
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        return Err(SamplerError::Config(format!("σ must be a {d}×{d} matrix")));
    }
    Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
}

/// Euler scheme with exact isotropic α-stable increments.
#[derive(Clone, Debug)]
pub struct SdeStable {
    pub alpha: f64,
    pub dim: usize,
    pub dt: f64,
    field: SigmaField,
    mats: Vec<DMatrix<f64>>,
    cell: f64,
}

impl SdeStable {
    pub fn new(
        alpha: f64,
        dim: usize,
        sigma: SigmaField,
        ellipticity: (f64, f64),
        dt: f64,
    ) -> Result<Self, SamplerError> {
        if !(alpha > 0.0 && alpha < 2.0) || dim == 0 || !(dt > 0.0) {
            return Err(SamplerError::Config("SDE needs α ∈ (0,2), d ≥ 1 and dt > 0".into()));
        }
        let (lo, hi) = ellipticity;
        if !(lo > 0.0 && hi >= lo) {
            return Err(SamplerError::Config(
                "ellipticity bounds must satisfy 0 < lo ≤ hi".into(),
            ));
        }
        let mut mats = Vec::new();
        for rows in sigma.matrices() {
            let m = to_matrix(rows, dim)?;
            let sv = m.clone().svd(false, false).singular_values;
            let (smin, smax) = (sv.min(), sv.max());
            if smin <= 0.0 {
                return Err(SamplerError::Config("σ is singular".into()));
            }
            if smin < lo * (1.0 - 1e-12) || smax > hi * (1.0 + 1e-12) {
                return Err(SamplerError::Config(format!(
                    "σ singular values [{smin}, {smax}] violate the declared ellipticity [{lo}, {hi}]"
                )));
            }
            mats.push(m);
        }
        let cell = match &sigma {
            SigmaField::Checkerboard { cell, .. } if !(*cell > 0.0) => {
                return Err(SamplerError::Config("checkerboard cell must be positive".into()))
            }
            SigmaField::Checkerboard { cell, .. } => *cell,
            SigmaField::Constant { .. } => 1.0,
        };
        Ok(Self {
            alpha,
            dim,
            dt,
            field: sigma,
            mats,
            cell,
        })
    }

    fn sigma_at(&self, x: &[f64]) -> &DMatrix<f64> {
        match self.field {
            SigmaField::Constant { .. } => &self.mats[0],
            SigmaField::Checkerboard { .. } => {
                let parity: i64 = x.iter().map(|v| (v / self.cell).floor() as i64).sum();
                &self.mats[parity.rem_euclid(2) as usize]
            }
        }
    }

    /// `c` when `σ ≡ c·I`.
    pub fn scalar_sigma(&self) -> Option<f64> {
        if self.mats.len() != 1 {
            return None;
        }
        let m = &self.mats[0];
        let c = m[(0, 0)];
        let scalar = (0..self.dim).all(|i| (0..self.dim).all(|j| m[(i, j)] == if i == j { c } else { 0.0 }));
        scalar.then_some(c.abs())
    }

    /// `x' = x + σ(x) ΔZ` with `ΔZ` an exact stable increment over `dt`.
    pub fn step(&self, x: &[f64], dt: f64, rng: &mut RngStream, out: &mut [f64]) {
        let mut z = [0.0; 8];
        let mut zv;
        let z: &mut [f64] = if self.dim <= 8 {
            &mut z[..self.dim]
        } else {
            zv = vec![0.0; self.dim];
            &mut zv
        };
        stable_increment(self.alpha, dt, rng, z);
        let s = self.sigma_at(x);
        for i in 0..self.dim {
            out[i] = x[i] + (0..self.dim).map(|j| s[(i, j)] * z[j]).sum::<f64>();
        }
    }
}

/// Stable process of index α run by a Gamma subordinator: the increment over
/// `dt` is `G^{1/α} Z` with `G ~ Gamma(dt, 1)` and `Z` a unit stable variate.
#[derive(Clone, Debug)]
pub struct GeoStable {
    pub alpha: f64,
    pub dim: usize,
    pub dt: f64,
}

impl GeoStable {
    pub fn new(alpha: f64, dim: usize, dt: f64) -> Result<Self, SamplerError> {
        if !(alpha > 0.0 && alpha < 2.0) || dim == 0 || !(dt > 0.0) {
            return Err(SamplerError::Config(
                "geometric stable needs α ∈ (0,2), d ≥ 1 and dt > 0".into(),
            ));
        }
        Ok(Self { alpha, dim, dt })
    }

    pub fn step(&self, x: &[f64], dt: f64, rng: &mut RngStream, out: &mut [f64]) {
        let g = Gamma::new(dt, 1.0).expect("positive shape").sample(rng);
        if g > 0.0 {
            stable_increment(self.alpha, g, rng, out);
        } else {
            out.iter_mut().for_each(|v| *v = 0.0);
        }
        out.iter_mut().zip(x).for_each(|(o, xi)| *o += xi);
    }
}

pub(crate) fn time_stepped_exit<S>(
    step: S,
    dt: f64,
    domain: &Domain,
    x: &[f64],
    limit: StepLimit,
    rng: &mut RngStream,
    mut trace: Option<&mut Trace>,
) -> Result<ExitSample, SamplerError>
where
    S: Fn(&[f64], &mut RngStream, &mut [f64]),
{
    if !domain.contains(x) {
        return Err(SamplerError::Domain(format!("start {x:?} is outside the domain")));
    }
    let mut cur: Point = x.to_vec();
    let mut next = vec![0.0; x.len()];
    let mut recent = limit.recorder();
    for steps in 1..=limit.max_steps {
        step(&cur, rng, &mut next);
        if let Some(t) = trace.as_deref_mut() {
            t.push(steps, &cur, &next, steps as f64 * dt);
        }
        if !domain.contains(&next) {
            return Ok(ExitSample {
                y: next,
                via_jump: true,
                weight: steps as f64 * dt,
                steps,
            });
        }
        recent.push(&next);
        std::mem::swap(&mut cur, &mut next);
    }
    Err(SamplerError::Stall {
        steps: limit.max_steps,
        path: recent.into_path(),
    })
}

/// Whether the discretely monitored path leaves `B(x, r)` within `n` steps.
pub(crate) fn time_stepped_survival<S>(step: S, x: &[f64], r: f64, n: u64, rng: &mut RngStream) -> bool
where
    S: Fn(&[f64], &mut RngStream, &mut [f64]),
{
    let mut cur = x.to_vec();
    let mut next = vec![0.0; x.len()];
    for _ in 0..n {
        step(&cur, rng, &mut next);
        if dist(&next, x) >= r {
            return true;
        }
        std::mem::swap(&mut cur, &mut next);
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::ks_two_sample;

    #[test]
    fn identity_sde_matches_single_increment() {
        let s = SdeStable::new(1.5, 1, SigmaField::identity(1), (1.0, 1.0), 0.1).unwrap();
        let mut rng = RngStream::new(1, 0);
        let n = 20_000;
        let mut a = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        let mut out = [0.0];
        for _ in 0..n {
            let mut x = [0.0];
            for _ in 0..10 {
                s.step(&x.clone(), 0.1, &mut rng, &mut out);
                x = out;
            }
            a.push(x[0]);
            stable_increment(1.5, 1.0, &mut rng, &mut out);
            b.push(out[0]);
        }
        assert!(ks_two_sample(&mut a, &mut b).p_value > 0.001);
    }

    #[test]
    fn ellipticity_is_enforced() {
        assert!(SdeStable::new(1.0, 2, SigmaField::scalar(2, 3.0), (0.5, 2.0), 0.1).is_err());
        assert!(SdeStable::new(1.0, 2, SigmaField::scalar(2, 0.0), (0.5, 2.0), 0.1).is_err());
        assert!(SdeStable::new(1.0, 2, SigmaField::scalar(2, 2.0), (0.5, 2.0), 0.1).is_ok());
    }

    #[test]
    fn sigma_two_doubles_quantiles() {
        let one = SdeStable::new(1.0, 1, SigmaField::identity(1), (1.0, 1.0), 1.0).unwrap();
        let two = SdeStable::new(1.0, 1, SigmaField::scalar(1, 2.0), (2.0, 2.0), 1.0).unwrap();
        let mut rng = RngStream::new(3, 0);
        let mut out = [0.0];
        let n = 100_000;
        let mut q = |s: &SdeStable| {
            let mut v: Vec<f64> = (0..n)
                .map(|_| {
                    s.step(&[0.0], 1.0, &mut rng, &mut out);
                    out[0].abs()
                })
                .collect();
            v.sort_by(f64::total_cmp);
            v[n / 2]
        };
        let ratio = q(&two) / q(&one);
        assert!((ratio / 2.0 - 1.0).abs() < 0.02, "{ratio}");
    }
}
