//! Exact and approximate simulation of jump processes.
//!
//! [`ModelSpec`] is the serializable description of a process; building a
//! [`ProcessModel`] validates it and precomputes whatever tables the sampler
//! needs. Every sampler is a pure function of its state and an [`RngStream`].

mod chain;
mod sde;
mod stable;

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use chain::LatticeChain;
pub use sde::{GeoStable, SdeStable, SigmaField};
pub use stable::{
    jump_constant, mean_exit_constant, poisson_constant, poisson_kernel, positive_stable, stable_increment, BallExit,
    MAX_REJECTIONS,
};

use crate::domains::Domain;
use crate::geometry::Point;
use crate::kernel::{JumpKernelSpec, KernelError, ScaleFunction};
use crate::rng::{RngStream, StreamKey};
use crate::stats::{par_blocks, Estimate, Merge};

pub const DEFAULT_MAX_STEPS: u64 = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("capability error: {0}")]
    Capability(String),
    #[error("sampler stalled after {steps} steps")]
    Stall { steps: u64, path: Vec<Point> },
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Serializable process description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelSpec {
    /// Rotationally invariant α-stable process with symbol `|ξ|^α`, sampled
    /// exactly by walk on balls with ball factor `rho`.
    IsotropicStable {
        alpha: f64,
        dim: usize,
        #[serde(default = "one")]
        rho: f64,
        #[serde(default)]
        shell: f64,
    },
    /// Continuous-time chain on `hℤ^d` with rates `κ(x,z) h^d/(|z|^d φ(|z|))`
    /// inside `|z| ≤ cutoff` plus an aggregated far jump.
    StableLikeChain {
        kernel: JumpKernelSpec,
        pitch: f64,
        cutoff: f64,
    },
    /// The lattice chain of a kernel with an exponential temper.
    TemperedChain {
        kernel: JumpKernelSpec,
        pitch: f64,
        cutoff: f64,
    },
    /// Euler scheme for `dX = σ(X₋) dZ` with exact stable increments.
    SdeStable {
        alpha: f64,
        dim: usize,
        sigma: SigmaField,
        ellipticity: (f64, f64),
        dt: f64,
    },
    /// Stable process time-changed by a Gamma subordinator, stepped by `dt`.
    GeometricStable { alpha: f64, dim: usize, dt: f64 },
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Exactness {
    ExactExitLaw,
    WeakApproximation { knobs: BTreeMap<String, f64> },
}

/// Exit position `X_{τ_D}` with the accumulated time weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExitSample {
    pub y: Point,
    pub via_jump: bool,
    /// Conditional expected elapsed time for exact samplers, elapsed time otherwise.
    pub weight: f64,
    pub steps: u64,
}

/// Step cap with a short memory of the most recent states for stall reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepLimit {
    pub max_steps: u64,
}

impl Default for StepLimit {
    fn default() -> Self {
        Self {
            max_steps: DEFAULT_MAX_STEPS,
        }
    }
}

impl StepLimit {
    pub(crate) fn recorder(&self) -> Recent {
        Recent::default()
    }
}

const RECENT: usize = 16;

#[derive(Default)]
pub(crate) struct Recent {
    buf: Vec<Point>,
    next: usize,
}

impl Recent {
    #[inline]
    pub(crate) fn push(&mut self, x: &[f64]) {
        if self.buf.len() < RECENT {
            self.buf.push(x.to_vec());
        } else {
            self.buf[self.next].copy_from_slice(x);
        }
        self.next = (self.next + 1) % RECENT;
    }

    pub(crate) fn into_path(mut self) -> Vec<Point> {
        if self.buf.len() == RECENT {
            self.buf.rotate_left(self.next);
        }
        self.buf
    }
}

/// One row of a trajectory dump.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub step: u64,
    pub x: Point,
    pub y: Point,
    pub weight: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
}

impl Trace {
    pub(crate) fn push(&mut self, step: u64, x: &[f64], y: &[f64], weight: f64) {
        self.rows.push(TraceRow {
            step,
            x: x.to_vec(),
            y: y.to_vec(),
            weight,
        });
    }

    /// CSV with columns `step, x1..xd, y1..yd, weight`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let d = self.rows.first().map(|r| r.x.len()).unwrap_or(0);
        let mut header = vec!["step".to_string()];
        header.extend((1..=d).map(|i| format!("x{i}")));
        header.extend((1..=d).map(|i| format!("y{i}")));
        header.push("weight".into());
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.step.to_string()];
            rec.extend(r.x.iter().map(f64::to_string));
            rec.extend(r.y.iter().map(f64::to_string));
            rec.push(r.weight.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
enum Runtime {
    Stable { exit: BallExit, rho: f64, shell: f64 },
    Chain(LatticeChain),
    Sde(SdeStable),
    Geo(GeoStable),
}

/// A validated, simulatable process.
#[derive(Clone, Debug)]
pub struct ProcessModel {
    spec: ModelSpec,
    runtime: Runtime,
    pub limit: StepLimit,
}

impl ProcessModel {
    pub fn new(spec: ModelSpec) -> Result<Self, SamplerError> {
        let runtime = match &spec {
            ModelSpec::IsotropicStable { alpha, dim, rho, shell } => {
                if !(*rho > 0.0 && *rho <= 1.0) || !(*shell >= 0.0) {
                    return Err(SamplerError::Config(
                        "walk-on-balls needs ρ ∈ (0,1] and shell ≥ 0".into(),
                    ));
                }
                Runtime::Stable {
                    exit: BallExit::new(*alpha, *dim)?,
                    rho: *rho,
                    shell: *shell,
                }
            }
            ModelSpec::StableLikeChain { kernel, pitch, cutoff } => {
                Runtime::Chain(LatticeChain::new(kernel.clone(), *pitch, *cutoff)?)
            }
            ModelSpec::TemperedChain { kernel, pitch, cutoff } => {
                if kernel.temper == crate::kernel::Temper::None {
                    return Err(SamplerError::Config("tempered chain needs a temper".into()));
                }
                Runtime::Chain(LatticeChain::new(kernel.clone(), *pitch, *cutoff)?)
            }
            ModelSpec::SdeStable {
                alpha,
                dim,
                sigma,
                ellipticity,
                dt,
            } => Runtime::Sde(SdeStable::new(*alpha, *dim, sigma.clone(), *ellipticity, *dt)?),
            ModelSpec::GeometricStable { alpha, dim, dt } => Runtime::Geo(GeoStable::new(*alpha, *dim, *dt)?),
        };
        Ok(Self {
            spec,
            runtime,
            limit: StepLimit::default(),
        })
    }

    pub fn isotropic(alpha: f64, dim: usize) -> Result<Self, SamplerError> {
        Self::new(ModelSpec::IsotropicStable {
            alpha,
            dim,
            rho: 1.0,
            shell: 0.0,
        })
    }

    pub fn with_max_steps(mut self, max_steps: u64) -> Self {
        self.limit.max_steps = max_steps;
        self
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        match &self.runtime {
            Runtime::Stable { exit, .. } => exit.dim,
            Runtime::Chain(c) => c.kernel().dim,
            Runtime::Sde(s) => s.dim,
            Runtime::Geo(g) => g.dim,
        }
    }

    pub fn exactness(&self) -> Exactness {
        let knobs = |pairs: &[(&str, f64)]| Exactness::WeakApproximation {
            knobs: pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        };
        match &self.runtime {
            Runtime::Stable { shell, .. } if *shell == 0.0 => Exactness::ExactExitLaw,
            Runtime::Stable { shell, .. } => knobs(&[("shell", *shell)]),
            Runtime::Chain(c) => knobs(&[("pitch", c.pitch()), ("cutoff", c.cutoff())]),
            Runtime::Sde(s) => knobs(&[("dt", s.dt)]),
            Runtime::Geo(g) => knobs(&[("dt", g.dt)]),
        }
    }

    /// The scale function `φ` of the realized kernel.
    pub fn scale_function(&self) -> ScaleFunction {
        match &self.runtime {
            Runtime::Stable { exit, .. } => ScaleFunction::power(exit.alpha),
            Runtime::Chain(c) => c.kernel().scale.clone(),
            Runtime::Sde(s) => ScaleFunction::power(s.alpha),
            Runtime::Geo(g) => ScaleFunction::geometric_stable(g.alpha),
        }
    }

    /// The jump kernel the process realizes, when it is of the supported form.
    pub fn kernel(&self) -> Result<JumpKernelSpec, SamplerError> {
        match &self.runtime {
            Runtime::Stable { exit, .. } => Ok(JumpKernelSpec::stable(
                exit.dim,
                exit.alpha,
                jump_constant(exit.dim, exit.alpha),
            )),
            Runtime::Chain(c) => Ok(c.kernel().clone()),
            Runtime::Sde(s) => match s.scalar_sigma() {
                Some(c) => Ok(JumpKernelSpec::stable(
                    s.dim,
                    s.alpha,
                    jump_constant(s.dim, s.alpha) * c.powf(s.alpha),
                )),
                None => Err(SamplerError::Capability(
                    "a matrix-valued σ does not give a radial kernel".into(),
                )),
            },
            Runtime::Geo(g) => Ok(JumpKernelSpec::geometric_stable(g.dim, g.alpha, 1.0)),
        }
    }

    /// The lattice chain, when the model is one.
    pub fn chain(&self) -> Option<&LatticeChain> {
        match &self.runtime {
            Runtime::Chain(c) => Some(c),
            _ => None,
        }
    }

    /// The exact ball-exit sampler, when the model is isotropic stable.
    pub fn ball_exit(&self) -> Option<&BallExit> {
        match &self.runtime {
            Runtime::Stable { exit, .. } => Some(exit),
            _ => None,
        }
    }

    pub fn exit_sample(&self, domain: &Domain, x: &[f64], rng: &mut RngStream) -> Result<ExitSample, SamplerError> {
        self.exit_sample_traced(domain, x, rng, None)
    }

    /// [`exit_sample`](Self::exit_sample), recording every step into `trace`.
    pub fn exit_sample_traced(
        &self,
        domain: &Domain,
        x: &[f64],
        rng: &mut RngStream,
        trace: Option<&mut Trace>,
    ) -> Result<ExitSample, SamplerError> {
        if x.len() != self.dim() || domain.dim() != self.dim() {
            return Err(SamplerError::Domain(
                "dimension mismatch between model, domain and start".into(),
            ));
        }
        match &self.runtime {
            Runtime::Stable { exit, rho, shell } => exit.walk_on_balls(domain, x, *rho, *shell, self.limit, rng, trace),
            Runtime::Chain(c) => c.exit(domain, x, self.limit, rng, trace),
            Runtime::Sde(s) => sde::time_stepped_exit(
                |x, rng, out| s.step(x, s.dt, rng, out),
                s.dt,
                domain,
                x,
                self.limit,
                rng,
                trace,
            ),
            Runtime::Geo(g) => sde::time_stepped_exit(
                |x, rng, out| g.step(x, g.dt, rng, out),
                g.dt,
                domain,
                x,
                self.limit,
                rng,
                trace,
            ),
        }
    }

    /// Whether the process started at `x` leaves `B(x, r)` before time `t`.
    ///
    /// Time-stepped models are monitored on their own grid; the isotropic
    /// model uses the exact-increment scheme with `t/monitor_steps` steps.
    pub fn exits_ball_before(
        &self,
        x: &[f64],
        r: f64,
        t: f64,
        monitor_steps: u64,
        rng: &mut RngStream,
    ) -> Result<bool, SamplerError> {
        match &self.runtime {
            Runtime::Stable { exit, .. } => {
                let dt = t / monitor_steps as f64;
                Ok(sde::time_stepped_survival(
                    |x, rng, out| {
                        stable_increment(exit.alpha, dt, rng, out);
                        out.iter_mut().zip(x).for_each(|(o, xi)| *o += xi);
                    },
                    x,
                    r,
                    monitor_steps,
                    rng,
                ))
            }
            Runtime::Sde(s) => {
                let n = (t / s.dt).ceil().max(1.0) as u64;
                let dt = t / n as f64;
                Ok(sde::time_stepped_survival(
                    |x, rng, out| s.step(x, dt, rng, out),
                    x,
                    r,
                    n,
                    rng,
                ))
            }
            Runtime::Geo(g) => {
                let n = (t / g.dt).ceil().max(1.0) as u64;
                let dt = t / n as f64;
                Ok(sde::time_stepped_survival(
                    |x, rng, out| g.step(x, dt, rng, out),
                    x,
                    r,
                    n,
                    rng,
                ))
            }
            Runtime::Chain(c) => c.exits_ball_before(x, r, t, self.limit, rng),
        }
    }
}

/// Rescaled time of the unit-ball problem: `P₀(τ_{B(0,r)} < t) = P₀(τ_{B(0,1)} < t/r^α)`.
pub fn stable_time_scale(alpha: f64, r: f64, t: f64) -> f64 {
    t / r.powf(alpha)
}

#[derive(Default)]
struct Hits {
    hits: u64,
    n: u64,
}

impl Merge for Hits {
    fn merge(&mut self, o: Self) {
        self.hits += o.hits;
        self.n += o.n;
    }
}

/// Monitoring steps used by [`survival_prob_ball`] for the isotropic model.
pub const MONITOR_STEPS: u64 = 256;

/// Estimate of `P_x(τ_{B(x,r)} < t)`.
pub fn survival_prob_ball(
    model: &ProcessModel,
    x: &[f64],
    r: f64,
    t: f64,
    n: u64,
    key: StreamKey,
) -> Result<Estimate, SamplerError> {
    if !(r > 0.0) || !(t >= 0.0) || n == 0 {
        return Err(SamplerError::Domain(
            "survival probability needs r > 0, t ≥ 0, n ≥ 1".into(),
        ));
    }
    if t == 0.0 {
        return Ok(Estimate::proportion(0, n));
    }
    let h: Hits = par_blocks(key, n, |rng, acc: &mut Hits| {
        acc.hits += model.exits_ball_before(x, r, t, MONITOR_STEPS, rng)? as u64;
        acc.n += 1;
        Ok::<_, SamplerError>(())
    })?;
    Ok(Estimate::proportion(h.hits, h.n))
}
