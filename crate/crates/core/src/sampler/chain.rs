use rand::Rng;
use rand_distr::Exp1;

use super::{ExitSample, SamplerError, StepLimit, Trace, MAX_REJECTIONS};
use crate::domains::Domain;
use crate::geometry::{dist, random_direction, sphere_area, Point};
use crate::kernel::{JumpKernelSpec, MassOptions, Profile, ScaleForm};
use crate::rng::RngStream;

/// Continuous-time Markov chain on the lattice `hℤ^d`.
///
/// Jumps are proposed from the radial envelope `κ_hi h^d/(|z|^d φ(|z|))` over
/// lattice offsets with `|z| ≤ R_c`, plus one aggregated far jump carrying the
/// exact envelope mass of `|z| > R_c`; a proposal is kept with probability
/// `κ(x,z)/κ_hi`, which thins the envelope to the target rates exactly.
#[derive(Clone, Debug)]
pub struct LatticeChain {
    kernel: JumpKernelSpec,
    pitch: f64,
    cutoff: f64,
    offsets: Vec<f64>,
    cdf: Vec<f64>,
    near_rate: f64,
    far_rate: f64,
    far_index: f64,
    kappa_hi: f64,
}

/// Index `a` with envelope radial density `∝ s^{-1-a}` beyond the cutoff.
fn tail_index(kernel: &JumpKernelSpec, cutoff: f64) -> Result<f64, SamplerError> {
    let piecewise = |alpha: f64| {
        if cutoff >= 1.0 {
            Ok(alpha)
        } else {
            Err(SamplerError::Config("geometric-stable chains need a cutoff ≥ 1".into()))
        }
    };
    match kernel.profile {
        Profile::GeometricStable { alpha } => piecewise(alpha),
        Profile::Scale => match kernel.scale.form {
            ScaleForm::Power { alpha } | ScaleForm::TemperedPower { alpha, .. } => Ok(alpha),
            ScaleForm::GeometricStable { alpha } => piecewise(alpha),
            ScaleForm::Tabulated { .. } => Err(SamplerError::Config(
                "a tabulated scale function has no tail beyond its table; chains need an analytic φ".into(),
            )),
        },
    }
}

impl LatticeChain {
    pub fn new(kernel: JumpKernelSpec, pitch: f64, cutoff: f64) -> Result<Self, SamplerError> {
        kernel.validate()?;
        if !(pitch > 0.0) || !(cutoff >= pitch) {
            return Err(SamplerError::Config("chain needs pitch > 0 and cutoff ≥ pitch".into()));
        }
        let far_index = tail_index(&kernel, cutoff)?;
        if far_index >= 1.0 && !kernel.symmetric_in_z() {
            return Err(SamplerError::Config(
                "α ≥ 1 chains need a coefficient symmetric in z (no compensator is simulated)".into(),
            ));
        }
        let d = kernel.dim;
        let m = (cutoff / pitch).floor() as i64;
        let side = (2 * m + 1) as u64;
        if side.checked_pow(d as u32).is_none_or(|c| c > 50_000_000) {
            return Err(SamplerError::Config(
                "lattice table too large; raise the pitch or lower the cutoff".into(),
            ));
        }
        let kappa_hi = kernel.kappa.bounds().1;
        let cell = pitch.powi(d as i32);
        let mut offsets = Vec::new();
        let mut cdf = Vec::new();
        let mut acc = 0.0;
        let mut k = vec![-m; d];
        'outer: loop {
            let z: Vec<f64> = k.iter().map(|&v| v as f64 * pitch).collect();
            let s = crate::geometry::norm(&z);
            if s > 0.0 && s <= cutoff {
                acc += kappa_hi * cell * kernel.radial(s)?;
                offsets.extend_from_slice(&z);
                cdf.push(acc);
            }
            for ki in k.iter_mut() {
                if *ki < m {
                    *ki += 1;
                    continue 'outer;
                }
                *ki = -m;
            }
            break;
        }
        let radial = |s: f64| Ok(s.powi(d as i32 - 1) * kernel.radial(s)?);
        let far = crate::kernel::radial_integral(radial, cutoff, None, MassOptions::default())?;
        let far_rate = kappa_hi * sphere_area(d) * far.value;
        if !(acc + far_rate > 0.0) || !(acc + far_rate).is_finite() {
            return Err(SamplerError::Config("chain has zero or infinite total rate".into()));
        }
        Ok(Self {
            kernel,
            pitch,
            cutoff,
            offsets,
            cdf,
            near_rate: acc,
            far_rate,
            far_index,
            kappa_hi,
        })
    }

    pub fn kernel(&self) -> &JumpKernelSpec {
        &self.kernel
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    /// Total proposal rate of the envelope.
    pub fn envelope_rate(&self) -> f64 {
        self.near_rate + self.far_rate
    }

    /// `Σ_y q(x,y)`; the far part uses the angular mean of `κ` at the cutoff.
    pub fn total_rate(&self, x: &[f64]) -> f64 {
        let d = self.kernel.dim;
        let near: f64 = self
            .offsets
            .chunks_exact(d)
            .zip(std::iter::once(0.0).chain(self.cdf.iter().copied()))
            .zip(&self.cdf)
            .map(|((z, lo), hi)| (hi - lo) * self.kernel.kappa.eval(x, z) / self.kappa_hi)
            .sum();
        let dirs = crate::geometry::sphere_directions(d);
        let far_kappa = dirs
            .iter()
            .map(|u| {
                let z: Vec<f64> = u.iter().map(|v| v * self.cutoff).collect();
                self.kernel.kappa.eval(x, &z)
            })
            .sum::<f64>()
            / dirs.len() as f64;
        near + self.far_rate * far_kappa / self.kappa_hi
    }

    /// Nearest lattice point.
    pub fn snap(&self, x: &[f64]) -> Point {
        x.iter().map(|v| (v / self.pitch).round() * self.pitch).collect()
    }

    fn far_jump(&self, x: &[f64], rng: &mut RngStream) -> Point {
        let d = self.kernel.dim;
        let t0 = self.kernel.temper.factor(self.cutoff);
        let s = loop {
            let s = self.cutoff * rng.open01().powf(-1.0 / self.far_index);
            if rng.open01() * self.kernel.temper.factor(s) <= t0 {
                break s;
            }
        };
        let mut u = vec![0.0; d];
        random_direction(rng, &mut u);
        let y: Point = x.iter().zip(&u).map(|(a, e)| a + s * e).collect();
        self.snap(&y)
    }

    /// One jump from the lattice point `x`: the new point and the holding time.
    pub fn step(&self, x: &[f64], rng: &mut RngStream) -> Result<(Point, f64), SamplerError> {
        let d = self.kernel.dim;
        let total = self.envelope_rate();
        let mut t = 0.0;
        let thin = !self.kernel.kappa.is_constant();
        for _ in 0..MAX_REJECTIONS {
            let e: f64 = rng.sample(Exp1);
            t += e / total;
            let u = rng.open01() * total;
            let y: Point = if u < self.near_rate {
                let i = self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1);
                let z = &self.offsets[i * d..(i + 1) * d];
                x.iter().zip(z).map(|(a, b)| a + b).collect()
            } else {
                self.far_jump(x, rng)
            };
            if thin {
                let z: Point = y.iter().zip(x).map(|(a, b)| a - b).collect();
                if rng.open01() * self.kappa_hi > self.kernel.kappa.eval(x, &z) {
                    continue;
                }
            }
            return Ok((y, t));
        }
        Err(SamplerError::Stall {
            steps: MAX_REJECTIONS,
            path: vec![x.to_vec()],
        })
    }

    fn start(&self, domain: Option<&Domain>, x: &[f64]) -> Result<Point, SamplerError> {
        let x0 = self.snap(x);
        if let Some(d) = domain {
            if !d.contains(&x0) {
                return Err(SamplerError::Domain(format!(
                    "lattice start {x0:?} is outside the domain"
                )));
            }
        }
        Ok(x0)
    }

    pub(crate) fn exit(
        &self,
        domain: &Domain,
        x: &[f64],
        limit: StepLimit,
        rng: &mut RngStream,
        mut trace: Option<&mut Trace>,
    ) -> Result<ExitSample, SamplerError> {
        let mut cur = self.start(Some(domain), x)?;
        let mut time = 0.0;
        let mut recent = limit.recorder();
        for steps in 1..=limit.max_steps {
            let (y, dt) = self.step(&cur, rng)?;
            time += dt;
            if let Some(t) = trace.as_deref_mut() {
                t.push(steps, &cur, &y, time);
            }
            if !domain.contains(&y) {
                return Ok(ExitSample {
                    y,
                    via_jump: true,
                    weight: time,
                    steps,
                });
            }
            recent.push(&y);
            cur = y;
        }
        Err(SamplerError::Stall {
            steps: limit.max_steps,
            path: recent.into_path(),
        })
    }

    pub(crate) fn exits_ball_before(
        &self,
        x: &[f64],
        r: f64,
        t: f64,
        limit: StepLimit,
        rng: &mut RngStream,
    ) -> Result<bool, SamplerError> {
        let x0 = self.start(None, x)?;
        let mut cur = x0.clone();
        let mut time = 0.0;
        for _ in 0..limit.max_steps {
            let (y, dt) = self.step(&cur, rng)?;
            time += dt;
            if time >= t {
                return Ok(false);
            }
            if dist(&y, &x0) >= r {
                return Ok(true);
            }
            cur = y;
        }
        Err(SamplerError::Stall {
            steps: limit.max_steps,
            path: vec![cur],
        })
    }
}
