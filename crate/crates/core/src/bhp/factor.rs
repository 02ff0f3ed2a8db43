use serde::{Deserialize, Serialize};

use super::{check_radius, eval_harmonic_multi, grid_points, BhpError, BoundaryData};
use crate::domains::Domain;
use crate::exitstats::fold_exits_until;
use crate::geometry::Point;
use crate::rng::StreamKey;
use crate::sampler::ProcessModel;
use crate::stats::{Estimate, Moments, Precision};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorizationPoint {
    pub x: Point,
    pub h: Estimate,
    /// `Ê_x[τ_{B_D(x, c1 r)}]`.
    pub mean_exit: Estimate,
    pub rho: Estimate,
    pub powered: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorizationReport {
    pub xi: Point,
    pub r: f64,
    pub c: [f64; 3],
    /// `∫_{B(ξ, c2 r)^c} g(y) J(ξ, dy)`.
    pub kernel_integral: f64,
    pub points: Vec<FactorizationPoint>,
    /// `max ρ / min ρ` over the powered points.
    pub band: f64,
    pub powered_points: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Compares `ĥ(x)` with `Ê_x[τ_{B_D(x, c1 r)}] · ∫_{B(ξ, c2 r)^c} g dJ(ξ, ·)`
/// over a grid of `D ∩ B(ξ, c3 r)`.
#[allow(clippy::too_many_arguments)]
pub fn factorization_check(
    model: &ProcessModel,
    domain: &Domain,
    xi: &[f64],
    r: f64,
    c: [f64; 3],
    g: &BoundaryData,
    grid: usize,
    precision: Precision,
    gate: f64,
    key: StreamKey,
) -> Result<FactorizationReport, BhpError> {
    let note = check_radius(model, r)?;
    let [c1, c2, c3] = c;
    if !(c1 > 0.0 && c3 > 0.0 && c1 + c3 < c2 && c2 < 2.0) {
        return Err(BhpError::Precondition(format!(
            "need 0 < c1, c3 and c1 + c3 < c2 < 2, got {c:?}"
        )));
    }
    g.validate(xi, r)?;
    let j = model.kernel()?;
    let integral = g.kernel_integral(&j, xi, c2 * r)?;
    if !(integral > 0.0) {
        return Err(BhpError::Precondition("boundary data carries no jump mass".into()));
    }
    let radius = c3 * r;
    let xs = grid_points(domain, xi, radius, grid, radius / 64.0);
    if xs.is_empty() {
        return Err(BhpError::Underpowered(
            "no grid point clears the boundary resolution".into(),
        ));
    }
    let data = std::slice::from_ref(g);
    let mut points = Vec::with_capacity(xs.len());
    for (i, x) in xs.into_iter().enumerate() {
        let k = key.child(i as u64);
        let (mut hs, _) = eval_harmonic_multi(model, domain, xi, r, data, &x, precision, k.tagged("h"))?;
        let h = hs.remove(0);
        let ball = domain.truncate(&x, c1 * r);
        let (m, stalls, _, _) = fold_exits_until(
            model,
            &ball,
            &x,
            precision,
            k.tagged("tau"),
            |s, m: &mut Moments| m.push(s.weight),
            |m| m.n > 1 && m.stderr() < precision.target_rel * m.mean,
        )?;
        let mean_exit = Estimate::mean(&m).with_stalls(stalls);
        let value = h.value / (mean_exit.value * integral);
        let rel = (h.rel_stderr().powi(2) + mean_exit.rel_stderr().powi(2)).sqrt();
        let rho = Estimate::derived(value, value * rel, h.n.min(mean_exit.n));
        let powered = h.rel_stderr() < gate && mean_exit.rel_stderr() < gate;
        points.push(FactorizationPoint {
            x,
            h,
            mean_exit,
            rho,
            powered,
        });
    }
    let powered: Vec<f64> = points.iter().filter(|p| p.powered).map(|p| p.rho.value).collect();
    if powered.len() < 2 {
        return Err(BhpError::Underpowered(format!(
            "only {} of {} grid points pass the {gate} precision gate",
            powered.len(),
            points.len()
        )));
    }
    let hi = powered.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = powered.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(FactorizationReport {
        xi: xi.to_vec(),
        r,
        c,
        kernel_integral: integral,
        band: hi / lo,
        powered_points: powered.len(),
        points,
        note,
    })
}
