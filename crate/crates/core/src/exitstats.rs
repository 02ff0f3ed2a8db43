//! Monte Carlo estimators for exit distributions, exit times and the exit
//! probability inequalities built from them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domains::Domain;
use crate::geometry::{dist, dot, norm, Point};
use crate::rng::StreamKey;
use crate::sampler::{survival_prob_ball, ExitSample, ProcessModel, SamplerError};
use crate::stats::{escalate_blocks, Estimate, Merge, Moments, Precision};

/// Stall fraction above which an estimate carries a reliability warning.
pub const STALL_WARN: f64 = 1e-3;
/// Stall fraction above which an estimate is refused.
pub const STALL_FAIL: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error("{stalls} of {n} samples stalled")]
    Unreliable { stalls: u64, n: u64 },
    #[error("precondition failed: {0}")]
    Precondition(String),
}

/// A measurable subset of the exterior, given as a predicate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TargetSet {
    Everything,
    /// `{y : n·y > offset}`.
    HalfSpace {
        normal: Point,
        offset: f64,
    },
    /// `{y : |y − c| ≥ radius}`.
    OutsideBall {
        center: Point,
        radius: f64,
    },
    /// `{y : |y − c| < radius}`.
    InsideBall {
        center: Point,
        radius: f64,
    },
    /// `{y : lo < y[axis] < hi}`.
    Band {
        axis: usize,
        lo: f64,
        hi: f64,
    },
    Not {
        set: Box<TargetSet>,
    },
    All {
        sets: Vec<TargetSet>,
    },
    Any {
        sets: Vec<TargetSet>,
    },
}

impl TargetSet {
    pub fn contains(&self, y: &[f64]) -> bool {
        match self {
            TargetSet::Everything => true,
            TargetSet::HalfSpace { normal, offset } => dot(normal, y) > *offset,
            TargetSet::OutsideBall { center, radius } => dist(y, center) >= *radius,
            TargetSet::InsideBall { center, radius } => dist(y, center) < *radius,
            TargetSet::Band { axis, lo, hi } => y[*axis] > *lo && y[*axis] < *hi,
            TargetSet::Not { set } => !set.contains(y),
            TargetSet::All { sets } => sets.iter().all(|s| s.contains(y)),
            TargetSet::Any { sets } => sets.iter().any(|s| s.contains(y)),
        }
    }

    /// A lower bound on `d(U, W)` for catalog pairs, `None` when unknown.
    pub fn distance_from(&self, u: &Domain) -> Option<f64> {
        if let Domain::Intersection { parts } = u {
            return parts.iter().filter_map(|p| self.distance_from(p)).reduce(f64::max);
        }
        match self {
            TargetSet::All { sets } => {
                return sets.iter().filter_map(|s| s.distance_from(u)).reduce(f64::max);
            }
            TargetSet::Any { sets } => {
                return sets
                    .iter()
                    .map(|s| s.distance_from(u))
                    .try_fold(f64::INFINITY, |m, d| d.map(|d| m.min(d)));
            }
            _ => {}
        }
        let Domain::Ball { center: c, radius: rho } = u else {
            return None;
        };
        let gap = match self {
            TargetSet::Band { axis, lo, hi } => (lo - (c[*axis] + rho)).max((c[*axis] - rho) - hi),
            TargetSet::OutsideBall { center, radius } => radius - dist(c, center) - rho,
            TargetSet::InsideBall { center, radius } => dist(c, center) - rho - radius,
            TargetSet::HalfSpace { normal, offset } => (offset - dot(normal, c)) / norm(normal) - rho,
            _ => return None,
        };
        Some(gap.max(0.0))
    }
}

#[derive(Default)]
struct Tally<A> {
    acc: A,
    stalls: u64,
}

impl<A: Merge> Merge for Tally<A> {
    fn merge(&mut self, o: Self) {
        self.acc.merge(o.acc);
        self.stalls += o.stalls;
    }
}

/// Elementwise counts over a fixed number of bins.
#[derive(Default, Clone, Debug)]
struct Counts(Vec<u64>);

impl Merge for Counts {
    fn merge(&mut self, o: Self) {
        if self.0.len() < o.0.len() {
            self.0.resize(o.0.len(), 0);
        }
        self.0.iter_mut().zip(o.0).for_each(|(a, b)| *a += b);
    }
}

/// Draws `n` exit samples from `domain` started at `x`, folding each into an
/// accumulator; stalled samples are counted and skipped.
pub fn fold_exits<A, F>(
    model: &ProcessModel,
    domain: &Domain,
    x: &[f64],
    n: u64,
    key: StreamKey,
    fold: F,
) -> Result<(A, u64), EstimationError>
where
    A: Merge,
    F: Fn(&ExitSample, &mut A) + Sync,
{
    let (acc, stalls, _, _) = fold_exits_until(model, domain, x, Precision::fixed(n), key, fold, |_| true)?;
    Ok((acc, stalls))
}

/// [`fold_exits`] under an escalation policy: blocks are added until
/// `done(acc)` or the cap. Returns `(acc, stalls, n, capped)`.
pub fn fold_exits_until<A, F, D>(
    model: &ProcessModel,
    domain: &Domain,
    x: &[f64],
    precision: Precision,
    key: StreamKey,
    fold: F,
    done: D,
) -> Result<(A, u64, u64, bool), EstimationError>
where
    A: Merge,
    F: Fn(&ExitSample, &mut A) + Sync,
    D: Fn(&A) -> bool,
{
    if !domain.contains(x) {
        return Err(EstimationError::Precondition(format!(
            "start {x:?} is outside the domain"
        )));
    }
    if precision.n0 == 0 {
        return Err(EstimationError::Precondition("need at least one sample".into()));
    }
    let (t, n, capped) = escalate_blocks(
        key,
        precision,
        |t: &Tally<A>| done(&t.acc),
        |rng, t: &mut Tally<A>| {
            match model.exit_sample(domain, x, rng) {
                Ok(s) => fold(&s, &mut t.acc),
                Err(SamplerError::Stall { .. }) => t.stalls += 1,
                Err(e) => return Err(e),
            }
            Ok(())
        },
    )?;
    if t.stalls as f64 > STALL_FAIL * n as f64 || t.stalls == n {
        return Err(EstimationError::Unreliable { stalls: t.stalls, n });
    }
    Ok((t.acc, t.stalls, n, capped))
}

/// Reliability warning for estimates whose stall rate exceeds [`STALL_WARN`].
pub fn stall_warning(e: &Estimate) -> Option<String> {
    let total = e.n + e.stalls;
    (e.stalls as f64 > STALL_WARN * total as f64)
        .then(|| format!("{} of {} samples stalled; estimate may be biased", e.stalls, total))
}

/// `P_x(X_{τ_D} ∈ A_k)` for each set of a family, from shared samples.
pub fn harmonic_measure_family(
    model: &ProcessModel,
    domain: &Domain,
    x: &[f64],
    sets: &[TargetSet],
    n: u64,
    key: StreamKey,
) -> Result<Vec<Estimate>, EstimationError> {
    let k = sets.len();
    let (c, stalls): ((Counts, u64), u64) = fold_exits(model, domain, x, n, key, |s, acc: &mut (Counts, u64)| {
        if acc.0 .0.len() < k {
            acc.0 .0.resize(k, 0);
        }
        for (i, set) in sets.iter().enumerate() {
            if set.contains(&s.y) {
                acc.0 .0[i] += 1;
            }
        }
        acc.1 += 1;
    })?;
    let mut counts = c.0 .0;
    counts.resize(k, 0);
    Ok(counts
        .into_iter()
        .map(|h| Estimate::proportion(h, c.1).with_stalls(stalls))
        .collect())
}

/// `P_x(X_{τ_D} ∈ A)`.
pub fn harmonic_measure(
    model: &ProcessModel,
    domain: &Domain,
    x: &[f64],
    target: &TargetSet,
    n: u64,
    key: StreamKey,
) -> Result<Estimate, EstimationError> {
    Ok(harmonic_measure_family(model, domain, x, std::slice::from_ref(target), n, key)?.remove(0))
}

/// `E_x[τ_D]` as the mean of the per-sample time weights.
pub fn mean_exit_time(
    model: &ProcessModel,
    domain: &Domain,
    x: &[f64],
    n: u64,
    key: StreamKey,
) -> Result<Estimate, EstimationError> {
    let (m, stalls): (Moments, u64) = fold_exits(model, domain, x, n, key, |s, m: &mut Moments| m.push(s.weight))?;
    Ok(Estimate::mean(&m).with_stalls(stalls))
}

/// Joint estimates of `P_x(τ_D > τ_{B_D(ξ,r)})` and `E_x[τ_{B_D(ξ,r)}]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubdomainStats {
    pub survive: Estimate,
    pub mean_exit: Estimate,
}

pub fn subdomain_stats(
    model: &ProcessModel,
    domain: &Domain,
    xi: &[f64],
    r: f64,
    x: &[f64],
    n: u64,
    key: StreamKey,
) -> Result<SubdomainStats, EstimationError> {
    let u = domain.truncate(xi, r);
    if !u.contains(x) {
        return Err(EstimationError::Precondition(format!("{x:?} is not in B_D(ξ, r)")));
    }
    let ((hits, m), stalls): ((u64, Moments), u64) =
        fold_exits(model, &u, x, n, key, |s, acc: &mut (u64, Moments)| {
            acc.0 += domain.contains(&s.y) as u64;
            acc.1.push(s.weight);
        })?;
    Ok(SubdomainStats {
        survive: Estimate::proportion(hits, m.n).with_stalls(stalls),
        mean_exit: Estimate::mean(&m).with_stalls(stalls),
    })
}

/// `P_x(τ_D > τ_{B_D(ξ,r)})`: the walk leaves `B(ξ,r)` while still in `D`.
pub fn exit_before_subdomain(
    model: &ProcessModel,
    domain: &Domain,
    xi: &[f64],
    r: f64,
    x: &[f64],
    n: u64,
    key: StreamKey,
) -> Result<Estimate, EstimationError> {
    Ok(subdomain_stats(model, domain, xi, r, x, n, key)?.survive)
}

/// Both sides of `P_x(X_{τ_U} ∈ W) ≤ C E_x[τ_U]/φ(d(U,W) ∧ r̄)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExitTailBound {
    pub lhs: Estimate,
    pub mean_exit: Estimate,
    pub distance: f64,
    pub rhs: f64,
    pub implied_constant: f64,
}

pub fn exit_tail_bounds(
    model: &ProcessModel,
    u: &Domain,
    w: &TargetSet,
    x: &[f64],
    r_bar: Option<f64>,
    n: u64,
    key: StreamKey,
) -> Result<ExitTailBound, EstimationError> {
    let distance = w
        .distance_from(u)
        .ok_or_else(|| EstimationError::Precondition("d(U, W) is not computable for this pair".into()))?;
    if !(distance > 0.0) {
        return Err(EstimationError::Precondition(
            "W must be at positive distance from U".into(),
        ));
    }
    let (acc, stalls): ((u64, Moments), u64) = fold_exits(model, u, x, n, key, |s, acc: &mut (u64, Moments)| {
        acc.0 += w.contains(&s.y) as u64;
        acc.1.push(s.weight);
    })?;
    let lhs = Estimate::proportion(acc.0, acc.1.n).with_stalls(stalls);
    let mean_exit = Estimate::mean(&acc.1).with_stalls(stalls);
    let phi = model
        .scale_function()
        .eval(r_bar.map_or(distance, |rb| distance.min(rb)))
        .map_err(SamplerError::from)?;
    let rhs = mean_exit.value / phi;
    Ok(ExitTailBound {
        implied_constant: lhs.value / rhs,
        lhs,
        mean_exit,
        distance,
        rhs,
    })
}

/// `P̂_x(τ_{B(x,r)} < t) · φ(r)/t`, the normalized (EP) quantity.
pub fn ep_normalized(
    model: &ProcessModel,
    x: &[f64],
    r: f64,
    t: f64,
    n: u64,
    key: StreamKey,
) -> Result<(Estimate, Estimate), EstimationError> {
    let p = survival_prob_ball(model, x, r, t, n, key)?;
    let phi = model.scale_function().eval(r).map_err(SamplerError::from)?;
    let c = phi / t;
    let scaled = Estimate {
        value: p.value * c,
        stderr: p.stderr * c,
        n: p.n,
        ci95: (p.ci95.0 * c, p.ci95.1 * c),
        method: crate::stats::Method::Derived,
        stalls: 0,
    };
    Ok((p, scaled))
}
