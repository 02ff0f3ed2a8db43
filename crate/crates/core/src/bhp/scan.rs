use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{check_radius, eval_harmonic_multi, grid_points, BhpError, BoundaryData};
use crate::domains::Domain;
use crate::geometry::Point;
use crate::rng::StreamKey;
use crate::sampler::ProcessModel;
use crate::stats::{Estimate, Precision};

/// Grid and precision controls shared by the scans.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    /// Minimum number of grid points requested.
    pub grid_points: usize,
    /// Points need `δ(x) ≥ min_delta_frac · (scan radius)`.
    pub min_delta_frac: f64,
    pub precision: Precision,
    /// Estimates with relative standard error at or above this are excluded.
    pub gate: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            grid_points: 12,
            min_delta_frac: 1.0 / 64.0,
            precision: Precision::default(),
            gate: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BhpReport {
    pub xi: Point,
    pub r: f64,
    pub kappa: f64,
    pub grid: Vec<Point>,
    pub h1: Vec<Estimate>,
    pub h2: Vec<Estimate>,
    /// `R(x_i, x_j) = ĥ1(x_i) ĥ2(x_j) / (ĥ1(x_j) ĥ2(x_i))`.
    pub ratio: Vec<Vec<f64>>,
    pub c_hat: f64,
    /// Delta-method standard error of `log Ĉ`.
    pub c_hat_log_stderr: f64,
    pub argmax: (usize, usize),
    pub powered_points: usize,
    pub excluded_pairs: usize,
    /// Points whose escalation hit the sample cap.
    pub capped_points: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl BhpReport {
    /// Flattened `(x, y, h1(x), h2(x), h1(y), h2(y), ratio)` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let d = self.xi.len();
        let mut header: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
        header.extend((1..=d).map(|i| format!("y{i}")));
        header.extend(["h1_x", "h2_x", "h1_y", "h2_y", "ratio"].map(String::from));
        w.write_record(&header)?;
        for (i, x) in self.grid.iter().enumerate() {
            for (j, y) in self.grid.iter().enumerate() {
                let mut rec: Vec<String> = x.iter().chain(y).map(f64::to_string).collect();
                for v in [
                    self.h1[i].value,
                    self.h2[i].value,
                    self.h1[j].value,
                    self.h2[j].value,
                    self.ratio[i][j],
                ] {
                    rec.push(v.to_string());
                }
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Empirical boundary Harnack constant over a grid of `D ∩ B(ξ, κr)`.
#[allow(clippy::too_many_arguments)]
pub fn bhp_scan(
    model: &ProcessModel,
    domain: &Domain,
    xi: &[f64],
    r: f64,
    kappa: f64,
    g1: &BoundaryData,
    g2: &BoundaryData,
    cfg: &ScanConfig,
    key: StreamKey,
) -> Result<BhpReport, BhpError> {
    let note = check_radius(model, r)?;
    if !(kappa > 0.0 && kappa < 2.0) {
        return Err(BhpError::Precondition("κ must lie in (0, 2)".into()));
    }
    let radius = kappa * r;
    let grid = grid_points(domain, xi, radius, cfg.grid_points, cfg.min_delta_frac * radius);
    if grid.is_empty() {
        return Err(BhpError::Underpowered(
            "no grid point clears the boundary resolution".into(),
        ));
    }
    // ratios come from unit-scale data so that rescaling g leaves them bit-identical
    let unit = |g: &BoundaryData| BoundaryData {
        scale: 1.0,
        ..g.clone()
    };
    let data = [unit(g1), unit(g2)];
    let mut h1 = Vec::with_capacity(grid.len());
    let mut h2 = Vec::with_capacity(grid.len());
    let mut capped_points = 0;
    for (i, x) in grid.iter().enumerate() {
        let (mut est, capped) =
            eval_harmonic_multi(model, domain, xi, r, &data, x, cfg.precision, key.child(i as u64))?;
        capped_points += capped as usize;
        h2.push(est.pop().expect("two estimates"));
        h1.push(est.pop().expect("two estimates"));
    }
    let ratio_of = |i: usize, j: usize| (h1[i].value * h2[j].value) / (h1[j].value * h2[i].value);
    let k = grid.len();
    let powered: Vec<bool> = (0..k)
        .map(|i| Estimate::rel_stderr(&h1[i]) < cfg.gate && Estimate::rel_stderr(&h2[i]) < cfg.gate)
        .collect();
    let mut ratio = vec![vec![1.0; k]; k];
    let mut c_hat = f64::NEG_INFINITY;
    let mut argmax = (0, 0);
    let mut excluded = 0;
    for i in 0..k {
        for j in 0..k {
            if i != j {
                ratio[i][j] = ratio_of(i, j);
                if !(powered[i] && powered[j]) {
                    excluded += 1;
                    continue;
                }
            } else if !powered[i] {
                continue;
            }
            if ratio[i][j] > c_hat {
                c_hat = ratio[i][j];
                argmax = (i, j);
            }
        }
    }
    let powered_points = powered.iter().filter(|&&p| p).count();
    if powered_points < 2 {
        return Err(BhpError::Underpowered(format!(
            "only {powered_points} of {k} grid points pass the {} precision gate",
            cfg.gate
        )));
    }
    let (a, b) = argmax;
    let c_hat_log_stderr = if a == b {
        0.0
    } else {
        [
            Estimate::rel_stderr(&h1[a]),
            Estimate::rel_stderr(&h2[a]),
            Estimate::rel_stderr(&h1[b]),
            Estimate::rel_stderr(&h2[b]),
        ]
        .iter()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
    };
    let rescale = |h: Vec<Estimate>, a: f64| -> Vec<Estimate> {
        h.into_iter()
            .map(|e| Estimate {
                value: a * e.value,
                stderr: a * e.stderr,
                ci95: (a * e.ci95.0, a * e.ci95.1),
                ..e
            })
            .collect()
    };
    let h1 = rescale(h1, g1.scale);
    let h2 = rescale(h2, g2.scale);
    Ok(BhpReport {
        xi: xi.to_vec(),
        r,
        kappa,
        grid,
        h1,
        h2,
        ratio,
        c_hat,
        c_hat_log_stderr,
        argmax,
        powered_points,
        excluded_pairs: excluded,
        capped_points,
        note,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BhpSeries {
    pub radii: Vec<f64>,
    pub c_hat: Vec<f64>,
    /// `max Ĉ / min Ĉ` over the series.
    pub spread: f64,
    pub reports: Vec<BhpReport>,
}

/// [`bhp_scan`] over a series of radii, with data built per radius by `data`.
#[allow(clippy::too_many_arguments)]
pub fn bhp_series<G>(
    model: &ProcessModel,
    domain: &Domain,
    xi: &[f64],
    radii: &[f64],
    kappa: f64,
    data: G,
    cfg: &ScanConfig,
    key: StreamKey,
) -> Result<BhpSeries, BhpError>
where
    G: Fn(f64) -> (BoundaryData, BoundaryData),
{
    let mut reports = Vec::with_capacity(radii.len());
    for (i, &r) in radii.iter().enumerate() {
        let (g1, g2) = data(r);
        reports.push(bhp_scan(
            model,
            domain,
            xi,
            r,
            kappa,
            &g1,
            &g2,
            cfg,
            key.child(i as u64),
        )?);
    }
    let c_hat: Vec<f64> = reports.iter().map(|r| r.c_hat).collect();
    let hi = c_hat.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = c_hat.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(BhpSeries {
        radii: radii.to_vec(),
        spread: hi / lo,
        c_hat,
        reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ScanConfig {
        ScanConfig {
            grid_points: 4,
            precision: Precision::fixed(2048),
            gate: 0.5,
            ..ScanConfig::default()
        }
    }

    #[test]
    fn identical_data_give_unit_constant() {
        let m = ProcessModel::isotropic(1.5, 2).unwrap();
        let d = Domain::upper_half_space(2);
        let xi = [0.0, 0.0];
        let g = BoundaryData::far_field(&xi, 0.5);
        let rep = bhp_scan(&m, &d, &xi, 0.5, 1.0, &g, &g, &small(), StreamKey::new(1, 1)).unwrap();
        assert_eq!(rep.c_hat, 1.0);
    }

    #[test]
    fn ratio_matrix_is_antisymmetric_and_scale_free() {
        let m = ProcessModel::isotropic(1.5, 2).unwrap();
        let d = Domain::SlitPlane;
        let xi = [0.0, 0.0];
        let g1 = BoundaryData::far_half(&xi, 0.5, vec![0.0, 1.0]);
        let g2 = BoundaryData::far_half(&xi, 0.5, vec![0.0, -1.0]);
        let key = StreamKey::new(2, 2);
        let rep = bhp_scan(&m, &d, &xi, 0.5, 1.0, &g1, &g2, &small(), key).unwrap();
        for i in 0..rep.grid.len() {
            assert_eq!(rep.ratio[i][i], 1.0);
            for j in 0..rep.grid.len() {
                assert!((rep.ratio[i][j] * rep.ratio[j][i] - 1.0).abs() < 1e-10);
            }
        }
        let swapped = bhp_scan(&m, &d, &xi, 0.5, 1.0, &g2, &g1, &small(), key).unwrap();
        for i in 0..rep.grid.len() {
            for j in 0..rep.grid.len() {
                assert!((rep.ratio[i][j] * swapped.ratio[i][j] - 1.0).abs() < 1e-10);
            }
        }
        let scaled = bhp_scan(&m, &d, &xi, 0.5, 1.0, &g1.clone().scaled(7.0), &g2, &small(), key).unwrap();
        assert_eq!(scaled.c_hat, rep.c_hat);
        assert_eq!(scaled.ratio, rep.ratio);
    }

    #[test]
    fn tempered_models_are_limited_to_unit_radius() {
        let j = crate::kernel::JumpKernelSpec::tempered_stable(1, 1.0, 1.0, 1.0, 1.0);
        let m = ProcessModel::new(crate::sampler::ModelSpec::TemperedChain {
            kernel: j,
            pitch: 0.05,
            cutoff: 2.0,
        })
        .unwrap();
        let d = Domain::upper_half_space(1);
        let g = BoundaryData::far_field(&[0.0], 2.0);
        let err = bhp_scan(&m, &d, &[0.0], 2.0, 1.0, &g, &g, &small(), StreamKey::new(0, 0)).unwrap_err();
        assert!(matches!(err, BhpError::Precondition(_)));
    }

    #[test]
    fn csv_has_one_row_per_pair() {
        let m = ProcessModel::isotropic(1.0, 1).unwrap();
        let d = Domain::upper_half_space(1);
        let g = BoundaryData::far_field(&[0.0], 0.5);
        let rep = bhp_scan(&m, &d, &[0.0], 0.5, 1.0, &g, &g, &small(), StreamKey::new(0, 3)).unwrap();
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        let lines = String::from_utf8(buf).unwrap().lines().count();
        assert_eq!(lines, 1 + rep.grid.len() * rep.grid.len());
    }
}
