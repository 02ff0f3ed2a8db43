use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{check_radius, grid_points, BhpError};
use crate::domains::Domain;
use crate::exitstats::{fold_exits_until, EstimationError, STALL_FAIL};
use crate::geometry::{dist, Point};
use crate::rng::StreamKey;
use crate::sampler::{ProcessModel, SamplerError};
use crate::stats::{escalate_blocks, weighted_line_fit, Estimate, LineFit, Merge, Moments, Precision};

/// Estimates at one grid point of `B_D(ξ, 3r/4)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxPoint {
    pub x: Point,
    /// `P̂_x(τ_D > τ_{B_D(ξ,r)})`.
    pub survive: Estimate,
    /// `Ê_x[τ_{B_D(ξ,r)}]`.
    pub mean_exit: Estimate,
    /// `P̂ + Ê/φ(r)`, the layer score.
    pub score: f64,
    pub powered: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub j: usize,
    /// Radius `ρ_j` of the ball holding `U_j`.
    pub radius: f64,
    /// Indices into [`BoxDiagnostics::points`].
    pub u: Vec<usize>,
    pub v: Vec<usize>,
    pub w: Vec<usize>,
    /// `λ̂_j`; `None` stands for `+∞`.
    pub lambda: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxDiagnostics {
    pub xi: Point,
    pub r: f64,
    pub phi_r: f64,
    pub points: Vec<BoxPoint>,
    pub layers: Vec<Layer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// `ρ_j = 3r/4 − Σ_{k=1}^j 3r/(2π²k²)`, decreasing to `r/2`.
fn layer_radius(r: f64, j: usize) -> f64 {
    let s: f64 = (1..=j).map(|k| 1.0 / (k * k) as f64).sum();
    0.75 * r - 1.5 * r * s / (PI * PI)
}

#[derive(Default)]
struct Joint {
    hits: u64,
    m: Moments,
}

impl Merge for Joint {
    fn merge(&mut self, o: Self) {
        self.hits += o.hits;
        self.m.merge(o.m);
    }
}

/// Layered decomposition of `B_D(ξ, 3r/4)` by the score `P̂ + Ê/φ(r)` with
/// the infima `λ̂_j` over `V_j = ∪_{k<j} U_k`.
#[allow(clippy::too_many_arguments)]
pub fn box_diagnostics(
    model: &ProcessModel,
    domain: &Domain,
    xi: &[f64],
    r: f64,
    j_max: usize,
    grid: usize,
    precision: Precision,
    gate: f64,
    key: StreamKey,
) -> Result<BoxDiagnostics, BhpError> {
    let note = check_radius(model, r)?;
    let phi_r = model.scale_function().eval(r)?;
    let outer = 0.75 * r;
    let xs = grid_points(domain, xi, outer, grid, outer / 64.0);
    let u = domain.truncate(xi, r);
    let mut points = Vec::with_capacity(xs.len());
    for (i, x) in xs.into_iter().enumerate() {
        let (acc, stalls, _, _) = fold_exits_until(
            model,
            &u,
            &x,
            precision,
            key.child(i as u64),
            |s, a: &mut Joint| {
                a.hits += domain.contains(&s.y) as u64;
                a.m.push(s.weight);
            },
            |a| {
                let p = a.hits as f64 / a.m.n as f64;
                let rel_p = ((1.0 - p) / (a.hits.max(1) as f64)).sqrt();
                a.m.n > 1
                    && a.hits > 0
                    && rel_p < precision.target_rel
                    && a.m.stderr() < precision.target_rel * a.m.mean
            },
        )?;
        let survive = Estimate::proportion(acc.hits, acc.m.n).with_stalls(stalls);
        let mean_exit = Estimate::mean(&acc.m).with_stalls(stalls);
        let powered = survive.rel_stderr() < gate && mean_exit.rel_stderr() < gate;
        points.push(BoxPoint {
            score: survive.value + mean_exit.value / phi_r,
            x,
            survive,
            mean_exit,
            powered,
        });
    }
    let in_ball = |p: &BoxPoint, rho: f64| dist(&p.x, xi) < rho;
    let mut layers = Vec::with_capacity(j_max + 1);
    let mut v: Vec<usize> = Vec::new();
    for j in 0..=j_max {
        let radius = layer_radius(r, j);
        let lo = 0.5f64.powi(j as i32 + 1);
        let hi = 0.5f64.powi(j as i32);
        let members: Vec<usize> = (0..points.len())
            .filter(|&i| {
                let p = &points[i];
                if j == 0 {
                    p.score >= lo
                } else {
                    in_ball(p, radius) && p.score >= lo && p.score < hi
                }
            })
            .collect();
        let w_radius = if j == 0 { radius } else { layer_radius(r, j - 1) };
        let w = (0..points.len())
            .filter(|i| in_ball(&points[*i], w_radius) && !v.contains(i))
            .collect();
        let lambda = v
            .iter()
            .map(|&i| &points[i])
            .filter(|p| p.survive.value > 0.0)
            .map(|p| p.mean_exit.value / (phi_r * p.survive.value))
            .reduce(f64::min);
        layers.push(Layer {
            j,
            radius,
            u: members.clone(),
            v: v.clone(),
            w,
            lambda,
        });
        v.extend(members);
        v.sort_unstable();
        v.dedup();
    }
    Ok(BoxDiagnostics {
        xi: xi.to_vec(),
        r,
        phi_r,
        points,
        layers,
        note,
    })
}

/// `γ(s) = ⅛(2 − s/r)² r` for `s < 2r`, zero beyond.
pub fn gamma_radius(s: f64, r: f64) -> f64 {
    if s < 2.0 * r {
        0.125 * (2.0 - s / r).powi(2) * r
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainDecay {
    pub x: Point,
    pub r: f64,
    /// `P̂(∩_{k≤m} A_k)` for `m = 1..=M`.
    pub survival: Vec<Estimate>,
    /// Fit of `log P̂_m` against `m` over the rows with positive counts.
    pub fit: LineFit,
    /// `exp(slope)`, the fitted per-step decay rate.
    pub rate: f64,
    /// One-sided 95% upper bound on the rate.
    pub rate_upper: f64,
    pub decays: bool,
    pub stalls: u64,
}

#[derive(Default)]
struct Survival {
    counts: Vec<u64>,
    n: u64,
    stalls: u64,
}

impl Merge for Survival {
    fn merge(&mut self, o: Self) {
        if self.counts.len() < o.counts.len() {
            self.counts.resize(o.counts.len(), 0);
        }
        for (a, b) in self.counts.iter_mut().zip(o.counts) {
            *a += b;
        }
        self.n += o.n;
        self.stalls += o.stalls;
    }
}

/// Simulates `Y_n`, the exit of `D ∩ B(Y_{n−1}, R_{n−1})` with
/// `R = γ(|Y − ξ|)`, and tabulates the survival of
/// `A_n = {Y_n ∈ D, |Y_n − ξ| < 3r/2 or |Y_n − Y_{n−1}| < 2R_{n−1}}`.
#[allow(clippy::too_many_arguments)]
pub fn chain_decay(
    model: &ProcessModel,
    domain: &Domain,
    xi: &[f64],
    r: f64,
    x: &[f64],
    steps: usize,
    n: u64,
    key: StreamKey,
) -> Result<ChainDecay, BhpError> {
    check_radius(model, r)?;
    if !(domain.contains(x) && dist(x, xi) < r) {
        return Err(BhpError::Precondition(format!("{x:?} is not in B_D(ξ, r)")));
    }
    if steps < 3 {
        return Err(BhpError::Precondition(
            "need at least three chain steps for a rate fit".into(),
        ));
    }
    let (acc, _, _) = escalate_blocks(
        key,
        Precision::fixed(n),
        |_| true,
        |rng, acc: &mut Survival| {
            if acc.counts.is_empty() {
                acc.counts = vec![0; steps];
            }
            let mut y = x.to_vec();
            let mut survived = 0;
            for _ in 0..steps {
                let radius = gamma_radius(dist(&y, xi), r);
                let next = if radius > 0.0 {
                    match model.exit_sample(&domain.truncate(&y, radius), &y, rng) {
                        Ok(s) => s.y,
                        Err(SamplerError::Stall { .. }) => {
                            acc.stalls += 1;
                            return Ok(());
                        }
                        Err(e) => return Err(e),
                    }
                } else {
                    y.clone()
                };
                let ok = domain.contains(&next) && (dist(&next, xi) < 1.5 * r || dist(&next, &y) < 2.0 * radius);
                if !ok {
                    break;
                }
                survived += 1;
                y = next;
            }
            for c in acc.counts.iter_mut().take(survived) {
                *c += 1;
            }
            acc.n += 1;
            Ok(())
        },
    )
    .map_err(EstimationError::from)?;
    if acc.n == 0 || acc.stalls as f64 > STALL_FAIL * (acc.n + acc.stalls) as f64 {
        return Err(EstimationError::Unreliable {
            stalls: acc.stalls,
            n: acc.n + acc.stalls,
        }
        .into());
    }
    let survival: Vec<Estimate> = acc
        .counts
        .iter()
        .map(|&c| Estimate::proportion(c, acc.n).with_stalls(acc.stalls))
        .collect();
    let rows: Vec<(f64, f64, f64)> = acc
        .counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(m, &c)| {
            let p = c as f64 / acc.n as f64;
            ((m + 1) as f64, p.ln(), ((1.0 - p) / c as f64).max(1.0 / (acc.n as f64)))
        })
        .collect();
    if rows.len() < 3 {
        return Err(BhpError::Underpowered(format!(
            "only {} chain steps have surviving samples",
            rows.len()
        )));
    }
    let (ms, rest): (Vec<f64>, Vec<(f64, f64)>) = rows.into_iter().map(|(m, l, v)| (m, (l, v))).unzip();
    let (logs, vars): (Vec<f64>, Vec<f64>) = rest.into_iter().unzip();
    let fit = weighted_line_fit(&ms, &logs, &vars);
    let upper = fit.slope + 1.645 * fit.slope_stderr;
    Ok(ChainDecay {
        x: x.to_vec(),
        r,
        survival,
        rate: fit.slope.exp(),
        rate_upper: upper.exp(),
        decays: upper < 0.0,
        fit,
        stalls: acc.stalls,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_radii_decrease_to_half() {
        let r = 2.0;
        assert_eq!(layer_radius(r, 0), 1.5);
        let mut prev = 1.5;
        for j in 1..50 {
            let rho = layer_radius(r, j);
            assert!(rho < prev && rho > 1.0);
            prev = rho;
        }
        assert!((layer_radius(r, 100_000) - 1.0).abs() < 1e-4);
    }

    #[test]
    fn gamma_vanishes_beyond_two_r() {
        assert_eq!(gamma_radius(0.0, 1.0), 0.5);
        assert_eq!(gamma_radius(2.0, 1.0), 0.0);
        assert!((gamma_radius(1.0, 1.0) - 0.125).abs() < 1e-15);
    }

    #[test]
    fn bounded_domain_gives_infinite_lambda() {
        let m = ProcessModel::isotropic(1.5, 2).unwrap();
        let d = Domain::ball(vec![0.0, 0.0], 0.4);
        let p = Precision::fixed(512);
        let b = box_diagnostics(&m, &d, &[0.0, 0.0], 1.0, 4, 6, p, 0.5, StreamKey::new(1, 0)).unwrap();
        assert!(b.points.iter().all(|p| p.survive.value == 0.0));
        assert!(b.layers.iter().all(|l| l.lambda.is_none()));
    }

    #[test]
    fn v_layers_are_nested() {
        let m = ProcessModel::isotropic(1.5, 2).unwrap();
        let d = Domain::upper_half_space(2);
        let p = Precision::fixed(512);
        let b = box_diagnostics(&m, &d, &[0.0, 0.0], 1.0, 5, 16, p, 0.5, StreamKey::new(1, 1)).unwrap();
        for w in b.layers.windows(2) {
            assert!(w[0].v.iter().all(|i| w[1].v.contains(i)));
        }
        assert!(b.layers[0].v.is_empty());
        for l in &b.layers {
            if !l.v.is_empty() {
                assert!(l.lambda.unwrap() > 0.0);
            }
        }
    }

    #[test]
    fn chain_table_is_nonincreasing() {
        let m = ProcessModel::isotropic(1.5, 2).unwrap();
        let c = chain_decay(
            &m,
            &Domain::SlitPlane,
            &[0.0, 0.0],
            1.0,
            &[-0.3, 0.2],
            8,
            4096,
            StreamKey::new(9, 9),
        )
        .unwrap();
        for w in c.survival.windows(2) {
            assert!(w[1].value <= w[0].value);
        }
        assert!(c.rate < 1.0);
    }
}
