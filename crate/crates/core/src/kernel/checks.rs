//! Sampled certificates for the structural kernel conditions.
//!
//! A verdict of `holds-numerically` only means no violation was found over
//! the declared grid or sample; `violated` always carries a witness that can
//! be re-evaluated with [`reproduce_witness`].

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ball_mass, tail_mass, JumpKernelSpec, KernelError, ScaleFunction};
use crate::geometry::{ball_volume, dist, norm, random_direction, random_in_ball, Point};
use crate::rng::StreamKey;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConditionId {
    #[serde(rename = "Jc.1")]
    Jc1,
    #[serde(rename = "Jc.2")]
    Jc2,
    #[serde(rename = "Jt")]
    Jt,
    #[serde(rename = "phi-doubling")]
    PhiDoubling,
    #[serde(rename = "phi-reverse-doubling")]
    PhiReverseDoubling,
    #[serde(rename = "J_phi")]
    JPhi,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    HoldsNumerically,
    Violated,
    Inconclusive,
}

/// Inputs of a violating inequality; a violation always reads `lhs > rhs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub params: BTreeMap<String, Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stream: Option<StreamKey>,
    pub lhs: f64,
    pub rhs: f64,
}

/// Points, radii and sample counts a check was run on.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TestSet {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub radii: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub points: Vec<Point>,
    #[serde(default)]
    pub samples: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stream: Option<StreamKey>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: ConditionId,
    pub verdict: Verdict,
    pub constants: BTreeMap<String, f64>,
    pub test_set: TestSet,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub witnesses: Vec<Witness>,
}

fn decades(grid: &[f64]) -> Result<f64, KernelError> {
    if grid.iter().any(|r| !(*r > 0.0)) {
        return Err(KernelError::Domain("radius grid must be positive".into()));
    }
    let lo = grid.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = grid.iter().cloned().fold(0.0, f64::max);
    Ok((hi / lo).log10())
}

fn params(entries: &[(&str, Vec<f64>)]) -> BTreeMap<String, Vec<f64>> {
    entries.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

/// Log-spaced radii `lo · (hi/lo)^{k/(n-1)}`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2);
    (0..n).map(|k| lo * (hi / lo).powf(k as f64 / (n - 1) as f64)).collect()
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct JtOptions {
    /// Largest `Ĉ₅/Ĉ₄` accepted as bounded.
    pub ratio_cap: f64,
}

impl Default for JtOptions {
    fn default() -> Self {
        Self { ratio_cap: 100.0 }
    }
}

/// Two-sided tail estimate `C₄/φ(r) ≤ J(x, B(x,r)^c) ≤ C₅/φ(r)` over a grid.
pub fn check_jt(
    j: &JumpKernelSpec,
    phi: &ScaleFunction,
    r_grid: &[f64],
    xs: &[Point],
    opts: JtOptions,
) -> Result<ConditionReport, KernelError> {
    if decades(r_grid)? < 3.0 - 1e-9 {
        return Err(KernelError::Precondition(
            "(Jt) grid must span at least 3 decades".into(),
        ));
    }
    if xs.is_empty() {
        return Err(KernelError::Precondition("(Jt) needs at least one base point".into()));
    }
    let mut lo = (f64::INFINITY, 0usize, 0.0);
    let mut hi = (f64::NEG_INFINITY, 0usize, 0.0);
    let mut max_rel_err: f64 = 0.0;
    for (i, x) in xs.iter().enumerate() {
        for &r in r_grid {
            let t = tail_mass(j, x, r)?;
            max_rel_err = max_rel_err.max(t.rel_err);
            let m = t.value * phi.eval(r)?;
            if m < lo.0 {
                lo = (m, i, r);
            }
            if m > hi.0 {
                hi = (m, i, r);
            }
        }
    }
    let ratio = hi.0 / lo.0;
    let holds = lo.0 > 0.0 && hi.0.is_finite() && ratio <= opts.ratio_cap;
    let mut constants = BTreeMap::new();
    constants.insert("C4".into(), lo.0);
    constants.insert("C5".into(), hi.0);
    constants.insert("ratio".into(), ratio);
    constants.insert("ratio_cap".into(), opts.ratio_cap);
    constants.insert("max_rel_err".into(), max_rel_err);
    let witnesses = if holds {
        vec![]
    } else {
        vec![Witness {
            params: params(&[
                ("x_hi", xs[hi.1].clone()),
                ("r_hi", vec![hi.2]),
                ("x_lo", xs[lo.1].clone()),
                ("r_lo", vec![lo.2]),
                ("cap", vec![opts.ratio_cap]),
            ]),
            stream: None,
            lhs: hi.0,
            rhs: opts.ratio_cap * lo.0,
        }]
    };
    Ok(ConditionReport {
        condition: ConditionId::Jt,
        verdict: if holds {
            Verdict::HoldsNumerically
        } else {
            Verdict::Violated
        },
        constants,
        test_set: TestSet {
            radii: r_grid.to_vec(),
            points: xs.to_vec(),
            ..TestSet::default()
        },
        witnesses,
    })
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Jc1Config {
    pub samples: u64,
    /// Triples satisfy `|x - y| < r_bar`; zero forces `y = x`.
    pub r_bar: f64,
    /// Base points are drawn from `[-spread, spread]^d`.
    pub spread: f64,
    /// Exponents above this count as a violation.
    pub theta_max: f64,
    pub stream: StreamKey,
}

impl Jc1Config {
    pub fn new(samples: u64, r_bar: f64, stream: StreamKey) -> Self {
        Self {
            samples,
            r_bar,
            spread: 4.0,
            theta_max: 16.0,
            stream,
        }
    }
}

struct Triple {
    x: Point,
    y: Point,
    z: Point,
    ratio: f64,
    q: f64,
}

/// Comparability `j(x,z) ≤ C₁ (1 + |y-z|/|x-z|)^θ j(y,z)` on sampled triples.
///
/// `θ̂` is the slope of the per-decade maxima of `log(j(x,z)/j(y,z))` against
/// `log(1 + q)` for `q ≥ 100`; `Ĉ₁` is then the smallest constant valid on
/// every sample.
pub fn check_jc1(j: &JumpKernelSpec, cfg: &Jc1Config) -> Result<ConditionReport, KernelError> {
    let d = j.dim;
    let mut rng = cfg.stream.rng();
    let mut triples = Vec::with_capacity(cfg.samples as usize);
    let mut u = vec![0.0; d];
    while (triples.len() as u64) < cfg.samples {
        let x: Point = (0..d).map(|_| cfg.spread * (2.0 * rng.open01() - 1.0)).collect();
        let y = if cfg.r_bar > 0.0 {
            random_in_ball(&mut rng, &x, cfg.r_bar)
        } else {
            x.clone()
        };
        let base = if cfg.r_bar > 0.0 { dist(&x, &y).max(1e-300) } else { 1.0 };
        random_direction(&mut rng, &mut u);
        let rho = base * 10f64.powf(rng.random_range(-6.0..3.0));
        let z: Point = x.iter().zip(&u).map(|(a, e)| a + rho * e).collect();
        let (dxz, dyz) = (dist(&x, &z), dist(&y, &z));
        if dxz == 0.0 || dyz == 0.0 {
            continue;
        }
        let jx = j.density(&x, &crate::geometry::sub(&z, &x))?;
        let jy = j.density(&y, &crate::geometry::sub(&z, &y))?;
        if jy == 0.0 {
            continue;
        }
        triples.push(Triple {
            x,
            y,
            z,
            ratio: jx / jy,
            q: dyz / dxz,
        });
    }

    // upper envelope per decade of q, for q ≥ 100
    let mut bins: BTreeMap<i64, (f64, f64)> = BTreeMap::new();
    for t in triples.iter().filter(|t| t.q >= 100.0 && t.ratio > 0.0) {
        let key = t.q.log10().floor() as i64;
        let e = bins.entry(key).or_insert((f64::NEG_INFINITY, 0.0));
        if t.ratio.ln() > e.0 {
            *e = (t.ratio.ln(), (1.0 + t.q).ln());
        }
    }
    let theta = if bins.len() >= 2 {
        let xs: Vec<f64> = bins.values().map(|b| b.1).collect();
        let ys: Vec<f64> = bins.values().map(|b| b.0).collect();
        crate::stats::weighted_line_fit(&xs, &ys, &vec![1.0; xs.len()])
            .slope
            .max(0.0)
    } else {
        0.0
    };
    let mut worst = (f64::NEG_INFINITY, 0usize);
    let mut worst_ratio: f64 = 0.0;
    for (i, t) in triples.iter().enumerate() {
        let c = t.ratio / (1.0 + t.q).powf(theta);
        if c > worst.0 {
            worst = (c, i);
        }
        worst_ratio = worst_ratio.max(t.ratio);
    }
    let c1 = worst.0;
    let holds = theta <= cfg.theta_max && c1.is_finite();
    let mut constants = BTreeMap::new();
    constants.insert("C1".into(), c1);
    constants.insert("theta".into(), theta);
    constants.insert("worst_ratio".into(), worst_ratio);
    let witnesses = if holds {
        vec![]
    } else {
        let t = &triples[worst.1];
        vec![Witness {
            params: params(&[
                ("x", t.x.clone()),
                ("y", t.y.clone()),
                ("z", t.z.clone()),
                ("theta", vec![cfg.theta_max]),
                ("cap", vec![1.0]),
            ]),
            stream: None,
            lhs: t.ratio,
            rhs: (1.0 + t.q).powf(cfg.theta_max),
        }]
    };
    Ok(ConditionReport {
        condition: ConditionId::Jc1,
        verdict: if holds {
            Verdict::HoldsNumerically
        } else {
            Verdict::Violated
        },
        constants,
        test_set: TestSet {
            samples: cfg.samples,
            stream: Some(cfg.stream),
            ..TestSet::default()
        },
        witnesses,
    })
}

/// One `(r, s, x, y)` configuration for (Jc.2).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Jc2Config {
    pub r: f64,
    pub s: f64,
    pub x: Point,
    pub y: Point,
}

/// Ball-versus-tail domination `J(x, B(y,s)) ≤ C₂ J(x, B(x,r)^c)` for separated configurations.
pub fn check_jc2(
    j: &JumpKernelSpec,
    configs: &[Jc2Config],
    c3: f64,
    stream: StreamKey,
) -> Result<ConditionReport, KernelError> {
    if configs.is_empty() {
        return Err(KernelError::Precondition(
            "(Jc.2) needs at least one configuration".into(),
        ));
    }
    let mut worst = (f64::NEG_INFINITY, 0usize, 0.0, 0.0);
    for (i, c) in configs.iter().enumerate() {
        let sep = dist(&c.x, &c.y);
        if !(sep > c.s + c3 * c.r) {
            return Err(KernelError::Domain(format!(
                "configuration {i} violates d(x,y) > s + C₃ r ({sep} ≤ {} + {c3}·{})",
                c.s, c.r
            )));
        }
        let ball = ball_mass(j, &c.x, &c.y, c.s, stream.child(i as u64))?;
        let tail = tail_mass(j, &c.x, c.r)?;
        let ratio = ball.value / tail.value;
        if ratio > worst.0 {
            worst = (ratio, i, ball.value, tail.value);
        }
    }
    let holds = worst.0 < 1.0;
    let mut constants = BTreeMap::new();
    constants.insert("C2".into(), worst.0);
    constants.insert("C3".into(), c3);
    let c = &configs[worst.1];
    let witnesses = if holds {
        vec![]
    } else {
        vec![Witness {
            params: params(&[
                ("x", c.x.clone()),
                ("y", c.y.clone()),
                ("r", vec![c.r]),
                ("s", vec![c.s]),
            ]),
            stream: Some(stream.child(worst.1 as u64)),
            lhs: worst.2,
            rhs: worst.3,
        }]
    };
    Ok(ConditionReport {
        condition: ConditionId::Jc2,
        verdict: if holds {
            Verdict::HoldsNumerically
        } else {
            Verdict::Violated
        },
        constants,
        test_set: TestSet {
            points: configs.iter().flat_map(|c| [c.x.clone(), c.y.clone()]).collect(),
            radii: configs.iter().flat_map(|c| [c.r, c.s]).collect(),
            samples: configs.len() as u64,
            stream: Some(stream),
        },
        witnesses,
    })
}

/// Separation constant `C₃ = C₁^k`, `k = ⌊log(2C₅/C₄)/log C₂⌋ + 1`, under
/// which (Jt) and reverse doubling `φ(C₁r) ≥ C₂φ(r)` give (Jc.2) with `C₂ = 1/2`.
pub fn jc2_separation(c4: f64, c5: f64, rd_c1: f64, rd_c2: f64) -> f64 {
    let k = ((2.0 * c5 / c4).ln() / rd_c2.ln()).floor() + 1.0;
    rd_c1.powf(k)
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PhiOptions {
    /// Largest accepted doubling ratio `φ(2r)/φ(r)` when none is declared.
    pub doubling_cap: f64,
    pub check_reverse: bool,
    /// Smallest accepted per-decade lower index `log₁₀(φ(10r)/φ(r))`.
    pub lower_index_floor: f64,
}

impl Default for PhiOptions {
    fn default() -> Self {
        Self {
            doubling_cap: 256.0,
            check_reverse: true,
            lower_index_floor: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhiReport {
    pub doubling: ConditionReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reverse_doubling: Option<ConditionReport>,
}

/// Upper scaling `(ĉ, β̂)`, doubling and (optionally) reverse doubling of `φ`.
pub fn check_phi(phi: &ScaleFunction, r_grid: &[f64], opts: PhiOptions) -> Result<PhiReport, KernelError> {
    phi.validate()?;
    if decades(r_grid)? < 4.0 - 1e-9 {
        return Err(KernelError::Precondition("φ grid must span at least 4 decades".into()));
    }
    let mut grid = r_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let vals: Vec<f64> = grid.iter().map(|&r| phi.eval(r)).collect::<Result<_, _>>()?;
    for w in vals.windows(2) {
        if !(w[1] > w[0]) {
            return Err(KernelError::Invariant(
                "scale function is not strictly increasing on the grid".into(),
            ));
        }
    }
    let lx: Vec<f64> = grid.iter().map(|r| r.ln()).collect();
    let ly: Vec<f64> = vals.iter().map(|v| v.ln()).collect();
    let beta = crate::stats::weighted_line_fit(&lx, &ly, &vec![1.0; lx.len()]).slope;
    let mut c_hat: f64 = 0.0;
    for i in 0..grid.len() {
        for k in i + 1..grid.len() {
            c_hat = c_hat.max(vals[k] / vals[i] * (grid[i] / grid[k]).powf(beta));
        }
    }
    let (_, top) = phi.support();
    let mut dbl = (f64::NEG_INFINITY, 0.0);
    for &r in grid.iter().filter(|&&r| 2.0 * r <= top) {
        let q = phi.eval(2.0 * r)? / phi.eval(r)?;
        if q > dbl.0 {
            dbl = (q, r);
        }
    }
    let cap = match phi.doubling_upper {
        Some((c, b)) => c * 2f64.powf(b) * (1.0 + 1e-9),
        None => opts.doubling_cap,
    };
    let dbl_holds = dbl.0.is_finite() && dbl.0 <= cap;
    let mut constants = BTreeMap::new();
    constants.insert("c".into(), c_hat);
    constants.insert("beta".into(), beta);
    constants.insert("doubling".into(), dbl.0);
    constants.insert("doubling_cap".into(), cap);
    let doubling = ConditionReport {
        condition: ConditionId::PhiDoubling,
        verdict: if dbl_holds {
            Verdict::HoldsNumerically
        } else {
            Verdict::Violated
        },
        constants,
        test_set: TestSet {
            radii: grid.clone(),
            ..TestSet::default()
        },
        witnesses: if dbl_holds {
            vec![]
        } else {
            vec![Witness {
                params: params(&[("r", vec![dbl.1]), ("cap", vec![cap])]),
                stream: None,
                lhs: phi.eval(2.0 * dbl.1)?,
                rhs: cap * phi.eval(dbl.1)?,
            }]
        },
    };

    let reverse_doubling = if opts.check_reverse {
        let mut low = (f64::INFINITY, 0.0);
        for &r in grid
            .iter()
            .filter(|&&r| 10.0 * r <= top && 10.0 * r <= grid[grid.len() - 1] * (1.0 + 1e-12))
        {
            let idx = (phi.eval(10.0 * r)? / phi.eval(r)?).log10();
            if idx < low.0 {
                low = (idx, r);
            }
        }
        if !low.0.is_finite() {
            return Err(KernelError::Precondition("no full decade inside the φ grid".into()));
        }
        let holds = low.0 >= opts.lower_index_floor;
        let mut constants = BTreeMap::new();
        constants.insert("beta_lower".into(), low.0);
        constants.insert("C1".into(), 10.0);
        constants.insert("C2".into(), 10f64.powf(low.0));
        constants.insert("floor".into(), opts.lower_index_floor);
        Some(ConditionReport {
            condition: ConditionId::PhiReverseDoubling,
            verdict: if holds {
                Verdict::HoldsNumerically
            } else {
                Verdict::Violated
            },
            constants,
            test_set: TestSet {
                radii: grid.clone(),
                ..TestSet::default()
            },
            witnesses: if holds {
                vec![]
            } else {
                vec![Witness {
                    params: params(&[("r", vec![low.1]), ("floor", vec![opts.lower_index_floor])]),
                    stream: None,
                    lhs: 10f64.powf(opts.lower_index_floor),
                    rhs: phi.eval(10.0 * low.1)? / phi.eval(low.1)?,
                }]
            },
        })
    } else {
        None
    };
    Ok(PhiReport {
        doubling,
        reverse_doubling,
    })
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct JphiConfig {
    pub samples: u64,
    pub r_min: f64,
    pub r_max: f64,
    pub spread: f64,
    pub ratio_cap: f64,
    pub stream: StreamKey,
}

/// Two-sided density bound `j(x,z) ≍ 1/(V(|z|) φ(|z|))` with `V(r) = ω_d r^d`.
pub fn check_jphi(j: &JumpKernelSpec, phi: &ScaleFunction, cfg: &JphiConfig) -> Result<ConditionReport, KernelError> {
    let d = j.dim;
    let omega = ball_volume(d);
    let mut rng = cfg.stream.rng();
    let mut u = vec![0.0; d];
    let mut lo = (f64::INFINITY, vec![], vec![]);
    let mut hi = (f64::NEG_INFINITY, vec![], vec![]);
    for _ in 0..cfg.samples {
        let x: Point = (0..d).map(|_| cfg.spread * (2.0 * rng.open01() - 1.0)).collect();
        random_direction(&mut rng, &mut u);
        let s = cfg.r_min * (cfg.r_max / cfg.r_min).powf(rng.open01());
        let z: Point = u.iter().map(|e| s * e).collect();
        let m = j.density(&x, &z)? * omega * norm(&z).powi(d as i32) * phi.eval(s)?;
        if m < lo.0 {
            lo = (m, x.clone(), z.clone());
        }
        if m > hi.0 {
            hi = (m, x, z);
        }
    }
    let ratio = hi.0 / lo.0;
    let holds = lo.0 > 0.0 && ratio <= cfg.ratio_cap;
    let mut constants = BTreeMap::new();
    constants.insert("C_lower".into(), lo.0);
    constants.insert("C_upper".into(), hi.0);
    constants.insert("ratio".into(), ratio);
    Ok(ConditionReport {
        condition: ConditionId::JPhi,
        verdict: if holds {
            Verdict::HoldsNumerically
        } else {
            Verdict::Violated
        },
        constants,
        test_set: TestSet {
            radii: vec![cfg.r_min, cfg.r_max],
            samples: cfg.samples,
            stream: Some(cfg.stream),
            ..TestSet::default()
        },
        witnesses: if holds {
            vec![]
        } else {
            vec![Witness {
                params: params(&[
                    ("x_hi", hi.1),
                    ("z_hi", hi.2),
                    ("x_lo", lo.1),
                    ("z_lo", lo.2),
                    ("cap", vec![cfg.ratio_cap]),
                ]),
                stream: None,
                lhs: hi.0,
                rhs: cfg.ratio_cap * lo.0,
            }]
        },
    })
}

/// Re-evaluates a witness from scratch, returning `(lhs, rhs)`.
pub fn reproduce_witness(
    condition: ConditionId,
    w: &Witness,
    j: &JumpKernelSpec,
    phi: &ScaleFunction,
) -> Result<(f64, f64), KernelError> {
    let p = |k: &str| -> Result<&Vec<f64>, KernelError> {
        w.params
            .get(k)
            .ok_or_else(|| KernelError::InvalidParameter(format!("witness lacks `{k}`")))
    };
    let s = |k: &str| -> Result<f64, KernelError> { Ok(p(k)?[0]) };
    match condition {
        ConditionId::Jt => {
            let m_hi = tail_mass(j, p("x_hi")?, s("r_hi")?)?.value * phi.eval(s("r_hi")?)?;
            let m_lo = tail_mass(j, p("x_lo")?, s("r_lo")?)?.value * phi.eval(s("r_lo")?)?;
            Ok((m_hi, s("cap")? * m_lo))
        }
        ConditionId::Jc1 => {
            let (x, y, z) = (p("x")?, p("y")?, p("z")?);
            let q = dist(y, z) / dist(x, z);
            let jx = j.density(x, &crate::geometry::sub(z, x))?;
            let jy = j.density(y, &crate::geometry::sub(z, y))?;
            Ok((jx / jy, s("cap")? * (1.0 + q).powf(s("theta")?)))
        }
        ConditionId::Jc2 => {
            let key = w
                .stream
                .ok_or_else(|| KernelError::InvalidParameter("(Jc.2) witness lacks its stream".into()))?;
            let ball = ball_mass(j, p("x")?, p("y")?, s("s")?, key)?;
            let tail = tail_mass(j, p("x")?, s("r")?)?;
            Ok((ball.value, tail.value))
        }
        ConditionId::PhiDoubling => {
            let r = s("r")?;
            Ok((phi.eval(2.0 * r)?, s("cap")? * phi.eval(r)?))
        }
        ConditionId::PhiReverseDoubling => {
            let r = s("r")?;
            Ok((10f64.powf(s("floor")?), phi.eval(10.0 * r)? / phi.eval(r)?))
        }
        ConditionId::JPhi => {
            let d = j.dim as i32;
            let omega = ball_volume(j.dim);
            let m = |x: &[f64], z: &[f64]| -> Result<f64, KernelError> {
                Ok(j.density(x, z)? * omega * norm(z).powi(d) * phi.eval(norm(z))?)
            };
            Ok((m(p("x_hi")?, p("z_hi")?)?, s("cap")? * m(p("x_lo")?, p("z_lo")?)?))
        }
    }
}
