//! Isotropic α-stable variates and the exact exit law of balls.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Beta, Distribution, Exp1, StandardNormal};
use statrs::function::gamma::gamma;

use super::{ExitSample, SamplerError, StepLimit, Trace};
use crate::domains::Domain;
use crate::geometry::{dist, norm, random_direction, Point};
use crate::rng::RngStream;

/// Rejection attempts allowed before an off-center ball exit is declared stalled.
pub const MAX_REJECTIONS: u64 = 1_000_000;

/// Jump-density constant `A(d,α)` of the process with symbol `|ξ|^α`.
pub fn jump_constant(d: usize, alpha: f64) -> f64 {
    let d = d as f64;
    alpha * 2f64.powf(alpha - 1.0) * gamma((d + alpha) / 2.0) / (PI.powf(d / 2.0) * gamma(1.0 - alpha / 2.0))
}

/// Constant `C(d,α)` of the Poisson kernel of the unit ball.
pub fn poisson_constant(d: usize, alpha: f64) -> f64 {
    let h = d as f64 / 2.0;
    gamma(h) * PI.powf(-h - 1.0) * (PI * alpha / 2.0).sin()
}

/// `C_E(d,α)` in `E_x τ_{B(0,r)} = C_E (r² − |x|²)^{α/2}`.
pub fn mean_exit_constant(d: usize, alpha: f64) -> f64 {
    let d = d as f64;
    gamma(d / 2.0) / (2f64.powf(alpha) * gamma(1.0 + alpha / 2.0) * gamma((d + alpha) / 2.0))
}

/// Density of the unit-ball exit position started at `x`, for `|y| > 1`.
pub fn poisson_kernel(d: usize, alpha: f64, x: &[f64], y: &[f64]) -> f64 {
    let (nx, ny) = (norm(x), norm(y));
    if ny <= 1.0 || nx >= 1.0 {
        return 0.0;
    }
    poisson_constant(d, alpha) * ((1.0 - nx * nx) / (ny * ny - 1.0)).powf(alpha / 2.0) * dist(x, y).powi(-(d as i32))
}

/// A positive `β`-stable variate with `E e^{-λS} = e^{-λ^β}` (Kanter's representation).
pub fn positive_stable(beta: f64, rng: &mut RngStream) -> f64 {
    debug_assert!(beta > 0.0 && beta < 1.0);
    let u = PI * rng.open01();
    let e: f64 = rng.sample(Exp1);
    let a = (beta * u).sin() / u.sin().powf(1.0 / beta);
    let b = ((1.0 - beta) * u).sin() / e;
    a * b.powf((1.0 - beta) / beta)
}

/// Fills `out` with an isotropic α-stable variate whose characteristic
/// function is `e^{-t|ξ|^α}`, as the sub-Gaussian mixture `√(2 t^{2/α} S) G`.
pub fn stable_increment(alpha: f64, t: f64, rng: &mut RngStream, out: &mut [f64]) {
    let scale = if alpha >= 2.0 {
        (2.0 * t).sqrt()
    } else {
        (2.0 * positive_stable(alpha / 2.0, rng)).sqrt() * t.powf(1.0 / alpha)
    };
    for v in out.iter_mut() {
        let g: f64 = rng.sample(StandardNormal);
        *v = scale * g;
    }
}

/// Exact exit sampler for balls under the isotropic α-stable process.
#[derive(Clone, Debug)]
pub struct BallExit {
    pub alpha: f64,
    pub dim: usize,
    radial: Beta<f64>,
    mean_exit: f64,
}

impl BallExit {
    pub fn new(alpha: f64, dim: usize) -> Result<Self, SamplerError> {
        if !(alpha > 0.0 && alpha < 2.0) || dim == 0 {
            return Err(SamplerError::Config(format!(
                "isotropic stable needs α ∈ (0,2) and d ≥ 1, got α={alpha}, d={dim}"
            )));
        }
        let radial =
            Beta::new(alpha / 2.0, 1.0 - alpha / 2.0).map_err(|e| SamplerError::Config(format!("radial law: {e}")))?;
        Ok(Self {
            alpha,
            dim,
            radial,
            mean_exit: mean_exit_constant(dim, alpha),
        })
    }

    /// `E_0 τ_{B(0,ρ)}`.
    #[inline]
    pub fn mean_exit_time(&self, rho: f64) -> f64 {
        self.mean_exit * rho.powf(self.alpha)
    }

    /// Exit position of `B(0,1)` from the center: `|Y|^{-2} ~ Beta(α/2, 1−α/2)`.
    #[inline]
    pub fn centered(&self, rng: &mut RngStream, out: &mut [f64]) {
        let u = loop {
            let u = self.radial.sample(rng);
            if u > 0.0 {
                break u;
            }
        };
        random_direction(rng, out);
        let rho = u.sqrt().recip();
        out.iter_mut().for_each(|v| *v *= rho);
    }

    /// Exit position of `B(0,1)` started at `x_rel`, `|x_rel| < 1`.
    ///
    /// Draws from the centered law and accepts with probability
    /// `((1−|x|)|y| / |x−y|)^d`, which is the density ratio divided by its
    /// bound `(1−|x|²)^{α/2}/(1−|x|)^d`.
    pub fn from_point(&self, x_rel: &[f64], rng: &mut RngStream) -> Result<Point, SamplerError> {
        let nx = norm(x_rel);
        if x_rel.len() != self.dim || !(nx < 1.0) {
            return Err(SamplerError::Domain(format!("ball exit needs |x| < 1, got {x_rel:?}")));
        }
        let mut y = vec![0.0; self.dim];
        if nx == 0.0 {
            self.centered(rng, &mut y);
            return Ok(y);
        }
        for _ in 0..MAX_REJECTIONS {
            self.centered(rng, &mut y);
            let acc = ((1.0 - nx) * norm(&y) / dist(x_rel, &y)).powi(self.dim as i32);
            if rng.open01() < acc {
                return Ok(y);
            }
        }
        Err(SamplerError::Stall {
            steps: MAX_REJECTIONS,
            path: vec![x_rel.to_vec()],
        })
    }

    /// Envelope constant of [`from_point`](Self::from_point) at `|x| = nx`.
    pub fn envelope(&self, nx: f64) -> f64 {
        (1.0 - nx * nx).powf(self.alpha / 2.0) / (1.0 - nx).powi(self.dim as i32)
    }

    /// Exact sample of `X_{τ_D}` by iterating centered ball exits on
    /// `B(x_k, ρ δ(x_k))`, accumulating `w += C_E (ρ δ(x_k))^α`.
    ///
    /// With `shell > 0` the walk is absorbed once `δ(x_k) ≤ shell`, returning
    /// the current point with `via_jump = false`.
    pub fn walk_on_balls(
        &self,
        domain: &Domain,
        x: &[f64],
        rho: f64,
        shell: f64,
        limit: StepLimit,
        rng: &mut RngStream,
        mut trace: Option<&mut Trace>,
    ) -> Result<ExitSample, SamplerError> {
        let mut cur = x.to_vec();
        let mut delta = domain.dist_lb(&cur).map_err(|e| SamplerError::Domain(e.to_string()))?;
        let mut y = vec![0.0; self.dim];
        let mut w = 0.0;
        let mut steps = 0u64;
        let mut recent = limit.recorder();
        loop {
            if delta <= shell {
                return Ok(ExitSample {
                    y: cur,
                    via_jump: false,
                    weight: w,
                    steps,
                });
            }
            if steps >= limit.max_steps {
                return Err(SamplerError::Stall {
                    steps,
                    path: recent.into_path(),
                });
            }
            let radius = rho * delta;
            self.centered(rng, &mut y);
            for (yi, ci) in y.iter_mut().zip(&cur) {
                *yi = ci + radius * *yi;
            }
            w += self.mean_exit_time(radius);
            steps += 1;
            if let Some(t) = trace.as_deref_mut() {
                t.push(steps, &cur, &y, w);
            }
            let sd = domain.signed_distance(&y);
            if sd <= crate::domains::BOUNDARY_EPS {
                return Ok(ExitSample {
                    y,
                    via_jump: true,
                    weight: w,
                    steps,
                });
            }
            recent.push(&y);
            std::mem::swap(&mut cur, &mut y);
            delta = sd;
        }
    }
}
