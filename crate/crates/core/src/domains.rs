//! Open subsets of `ℝ^d` with membership, a distance-to-complement lower
//! bound and boundary anchor points.
//!
//! Membership is strict: a point whose distance to the complement is at most
//! [`BOUNDARY_EPS`] counts as outside.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{dist, dot, norm, Point};

/// Points this close to a descriptor surface are classified outside.
pub const BOUNDARY_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("point {0:?} is not in the domain")]
    Outside(Point),
    #[error("invalid domain: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Domain {
    Ball {
        center: Point,
        radius: f64,
    },
    /// `{x : n·x > offset}` for a unit normal `n`.
    HalfSpace {
        normal: Point,
        offset: f64,
    },
    /// `ℝ² ∖ {(t, 0) : t ≥ 0}`.
    SlitPlane,
    /// Points whose angle to `axis` seen from `vertex` is below `half_angle`.
    Cone {
        vertex: Point,
        axis: Point,
        half_angle: f64,
    },
    /// The unit square `(0,1)²` minus `teeth` vertical segments
    /// `{k/(teeth+1)} × [gap, 1]` hanging from the top edge.
    Comb {
        teeth: usize,
        gap: f64,
    },
    /// `ℝ^d` minus finitely many closed segments.
    SegmentsComplement {
        segments: Vec<(Point, Point)>,
    },
    Intersection {
        parts: Vec<Domain>,
    },
    Union {
        parts: Vec<Domain>,
    },
}

fn segment_distance(x: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let ab: Point = b.iter().zip(a).map(|(p, q)| p - q).collect();
    let ax: Point = x.iter().zip(a).map(|(p, q)| p - q).collect();
    let len2 = dot(&ab, &ab);
    let t = if len2 > 0.0 {
        (dot(&ax, &ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ax.iter().zip(&ab).map(|(p, q)| (p - t * q).powi(2)).sum::<f64>().sqrt()
}

impl Domain {
    pub fn ball(center: Point, radius: f64) -> Self {
        Domain::Ball { center, radius }
    }

    /// The interval `(lo, hi)` as a one-dimensional ball.
    pub fn interval(lo: f64, hi: f64) -> Self {
        Domain::Ball {
            center: vec![0.5 * (lo + hi)],
            radius: 0.5 * (hi - lo),
        }
    }

    /// `{x : x₁ > 0}` in `ℝ^d`.
    pub fn upper_half_space(dim: usize) -> Self {
        let mut normal = vec![0.0; dim];
        normal[0] = 1.0;
        Domain::HalfSpace { normal, offset: 0.0 }
    }

    pub fn dim(&self) -> usize {
        match self {
            Domain::Ball { center, .. } => center.len(),
            Domain::HalfSpace { normal, .. } => normal.len(),
            Domain::SlitPlane | Domain::Comb { .. } => 2,
            Domain::Cone { vertex, .. } => vertex.len(),
            Domain::SegmentsComplement { segments } => segments.first().map(|s| s.0.len()).unwrap_or(0),
            Domain::Intersection { parts } | Domain::Union { parts } => parts.first().map(Domain::dim).unwrap_or(0),
        }
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        let bad = |m: &str| Err(DomainError::Invalid(m.into()));
        match self {
            Domain::Ball { center, radius } => {
                if center.is_empty() || !(*radius > 0.0) {
                    return bad("ball needs a center and a positive radius");
                }
            }
            Domain::HalfSpace { normal, .. } => {
                if normal.is_empty() || !(norm(normal) > 0.0) {
                    return bad("half-space normal must be nonzero");
                }
            }
            Domain::SlitPlane => {}
            Domain::Cone {
                vertex,
                axis,
                half_angle,
            } => {
                if vertex.len() != axis.len() || !(norm(axis) > 0.0) {
                    return bad("cone axis must be nonzero and match the vertex dimension");
                }
                if !(*half_angle > 0.0 && *half_angle < std::f64::consts::PI) {
                    return bad("cone half-angle must lie in (0, π)");
                }
            }
            Domain::Comb { teeth, gap } => {
                if *teeth == 0 || !(*gap > 0.0 && *gap < 1.0) {
                    return bad("comb needs at least one tooth and a gap in (0, 1)");
                }
            }
            Domain::SegmentsComplement { segments } => {
                let d = self.dim();
                if d == 0 || segments.iter().any(|(a, b)| a.len() != d || b.len() != d) {
                    return bad("segments must be nonempty and share one dimension");
                }
            }
            Domain::Intersection { parts } | Domain::Union { parts } => {
                if parts.is_empty() {
                    return bad("composite domain needs at least one part");
                }
                let d = parts[0].dim();
                for p in parts {
                    p.validate()?;
                    if p.dim() != d {
                        return bad("composite parts differ in dimension");
                    }
                }
            }
        }
        Ok(())
    }

    /// Signed lower bound on the distance to the complement: positive inside,
    /// nonpositive outside. Exact for the primitive shapes.
    pub fn signed_distance(&self, x: &[f64]) -> f64 {
        match self {
            Domain::Ball { center, radius } => radius - dist(x, center),
            Domain::HalfSpace { normal, offset } => (dot(normal, x) - offset) / norm(normal),
            Domain::SlitPlane => {
                if x[0] >= 0.0 {
                    x[1].abs()
                } else {
                    norm(x)
                }
            }
            Domain::Cone {
                vertex,
                axis,
                half_angle,
            } => {
                let p: Point = x.iter().zip(vertex).map(|(a, b)| a - b).collect();
                let r = norm(&p);
                if r == 0.0 {
                    return 0.0;
                }
                let c = (dot(&p, axis) / (r * norm(axis))).clamp(-1.0, 1.0);
                let gap = half_angle - c.acos();
                if gap <= 0.0 {
                    -r * (-gap).min(std::f64::consts::FRAC_PI_2).sin()
                } else if gap >= std::f64::consts::FRAC_PI_2 {
                    r
                } else {
                    r * gap.sin()
                }
            }
            Domain::Comb { teeth, gap } => {
                let boxd = x[0].min(1.0 - x[0]).min(x[1]).min(1.0 - x[1]);
                if boxd <= 0.0 {
                    return boxd;
                }
                let n = *teeth as f64 + 1.0;
                (1..=*teeth).fold(boxd, |m, k| {
                    let t = k as f64 / n;
                    m.min(segment_distance(x, &[t, *gap], &[t, 1.0]))
                })
            }
            Domain::SegmentsComplement { segments } => segments
                .iter()
                .map(|(a, b)| segment_distance(x, a, b))
                .fold(f64::INFINITY, f64::min),
            Domain::Intersection { parts } => parts.iter().map(|p| p.signed_distance(x)).fold(f64::INFINITY, f64::min),
            Domain::Union { parts } => parts
                .iter()
                .map(|p| p.signed_distance(x))
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }

    #[inline]
    pub fn contains(&self, x: &[f64]) -> bool {
        self.signed_distance(x) > BOUNDARY_EPS
    }

    /// `δ(x)` with `0 < δ(x) ≤ d(x, D^c)`.
    pub fn dist_lb(&self, x: &[f64]) -> Result<f64, DomainError> {
        let s = self.signed_distance(x);
        if s > BOUNDARY_EPS {
            Ok(s)
        } else {
            Err(DomainError::Outside(x.to_vec()))
        }
    }

    /// `D ∩ B(ξ, r)`.
    pub fn truncate(&self, xi: &[f64], r: f64) -> Domain {
        let ball = Domain::Ball {
            center: xi.to_vec(),
            radius: r,
        };
        match self {
            Domain::Intersection { parts } if parts.last() == Some(&ball) => self.clone(),
            _ => Domain::Intersection {
                parts: vec![self.clone(), ball],
            },
        }
    }

    /// Finitely many points of `∂D`.
    pub fn boundary_anchors(&self) -> Vec<Point> {
        match self {
            Domain::Ball { center, radius } => {
                let mut plus = center.clone();
                plus[0] += radius;
                let mut minus = center.clone();
                minus[0] -= radius;
                vec![plus, minus]
            }
            Domain::HalfSpace { normal, offset } => {
                let n2 = dot(normal, normal);
                vec![normal.iter().map(|v| v * offset / n2).collect()]
            }
            Domain::SlitPlane => vec![vec![0.0, 0.0], vec![0.5, 0.0], vec![1.0, 0.0]],
            Domain::Cone { vertex, .. } => vec![vertex.clone()],
            Domain::Comb { teeth, gap } => {
                let n = *teeth as f64 + 1.0;
                let mut out: Vec<Point> = (1..=*teeth).map(|k| vec![k as f64 / n, *gap]).collect();
                out.push(vec![0.5 / n, 0.0]);
                out
            }
            Domain::SegmentsComplement { segments } => {
                segments.iter().flat_map(|(a, b)| [a.clone(), b.clone()]).collect()
            }
            Domain::Intersection { parts } => parts
                .iter()
                .flat_map(|p| p.boundary_anchors())
                .filter(|a| parts.iter().all(|q| q.signed_distance(a) >= -BOUNDARY_EPS))
                .collect(),
            Domain::Union { parts } => parts
                .iter()
                .flat_map(|p| p.boundary_anchors())
                .filter(|a| !parts.iter().any(|q| q.contains(a)))
                .collect(),
        }
    }

    /// Radius of a ball about the origin containing `D`, if bounded.
    pub fn bounding_radius(&self) -> Option<f64> {
        match self {
            Domain::Ball { center, radius } => Some(norm(center) + radius),
            Domain::Comb { .. } => Some(2f64.sqrt()),
            Domain::Intersection { parts } => parts.iter().filter_map(Domain::bounding_radius).reduce(f64::min),
            Domain::Union { parts } => parts
                .iter()
                .map(Domain::bounding_radius)
                .try_fold(0.0, |m, r| r.map(|r| f64::max(m, r))),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::random_direction;
    use crate::rng::RngStream;

    fn catalog() -> Vec<Domain> {
        vec![
            Domain::ball(vec![0.2, -0.1], 1.0),
            Domain::upper_half_space(2),
            Domain::SlitPlane,
            Domain::Cone {
                vertex: vec![0.0, 0.0],
                axis: vec![0.0, 1.0],
                half_angle: 2.0,
            },
            Domain::Comb { teeth: 5, gap: 0.1 },
            Domain::SegmentsComplement {
                segments: vec![(vec![-1.0, 0.0], vec![1.0, 0.0]), (vec![0.0, 0.5], vec![0.0, 2.0])],
            },
            Domain::SlitPlane.truncate(&[0.0, 0.0], 0.5),
            Domain::Union {
                parts: vec![Domain::ball(vec![0.0, 0.0], 1.0), Domain::ball(vec![1.5, 0.0], 1.0)],
            },
        ]
    }

    #[test]
    fn exact_distances() {
        assert_eq!(Domain::upper_half_space(3).dist_lb(&[0.3, 5.0, -2.0]).unwrap(), 0.3);
        assert_eq!(Domain::ball(vec![0.0, 0.0], 1.0).dist_lb(&[0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(Domain::SlitPlane.dist_lb(&[1.0, 0.5]).unwrap(), 0.5);
        assert!(Domain::upper_half_space(2).dist_lb(&[-0.1, 0.0]).is_err());
    }

    #[test]
    fn slit_distance_matches_brute_force() {
        let mut rng = RngStream::new(3, 0);
        for _ in 0..200 {
            let x = [4.0 * rng.open01() - 2.0, 4.0 * rng.open01() - 2.0];
            let brute = (0..=40_000)
                .map(|k| {
                    let t = k as f64 * 1e-4;
                    ((x[0] - t).powi(2) + x[1] * x[1]).sqrt()
                })
                .fold(f64::INFINITY, f64::min);
            let sd = Domain::SlitPlane.signed_distance(&x);
            assert!((sd - brute).abs() < 1e-4, "{x:?}: {sd} vs {brute}");
        }
    }

    #[test]
    fn truncated_slit_membership() {
        let t = Domain::SlitPlane.truncate(&[0.0, 0.0], 0.5);
        assert!(t.contains(&[0.25, 1e-6]));
        assert!(!t.contains(&[0.25, 0.0]));
        assert!(!t.contains(&[0.0, 0.6]));
    }

    #[test]
    fn anchors_are_outside() {
        for d in catalog() {
            d.validate().unwrap();
            let anchors = d.boundary_anchors();
            assert!(!anchors.is_empty(), "{d:?}");
            for a in anchors {
                assert!(!d.contains(&a), "{d:?} contains anchor {a:?}");
            }
        }
    }

    #[test]
    fn balls_of_radius_delta_stay_inside() {
        let mut rng = RngStream::new(9, 1);
        let mut u = vec![0.0; 2];
        for d in catalog() {
            let mut tried = 0;
            while tried < 300 {
                let x = [3.0 * rng.open01() - 1.5, 3.0 * rng.open01() - 1.5];
                let Ok(delta) = d.dist_lb(&x) else { continue };
                tried += 1;
                for _ in 0..20 {
                    random_direction(&mut rng, &mut u);
                    let s = delta * (1.0 - 1e-9) * rng.open01();
                    let y = [x[0] + s * u[0], x[1] + s * u[1]];
                    assert!(d.signed_distance(&y) > 0.0, "{d:?}: {x:?} -> {y:?}");
                }
            }
        }
    }

    #[test]
    fn truncation_is_contained_and_idempotent() {
        let mut rng = RngStream::new(4, 2);
        for d in catalog() {
            let xi = d.boundary_anchors()[0].clone();
            let t1 = d.truncate(&xi, 0.7);
            let t2 = t1.truncate(&xi, 0.7);
            for _ in 0..10_000 {
                let x = [4.0 * rng.open01() - 2.0, 4.0 * rng.open01() - 2.0];
                assert_eq!(t1.contains(&x), t2.contains(&x));
                if t1.contains(&x) {
                    assert!(dist(&x, &xi) < 0.7);
                    assert!(d.contains(&x));
                }
            }
        }
    }

    #[test]
    fn cone_distance_is_exact_on_axis_plane() {
        let c = Domain::Cone {
            vertex: vec![0.0, 0.0],
            axis: vec![0.0, 1.0],
            half_angle: std::f64::consts::FRAC_PI_4,
        };
        let s = c.dist_lb(&[0.0, 1.0]).unwrap();
        assert!((s - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn serde_round_trip() {
        for d in catalog() {
            let s = serde_json::to_string(&d).unwrap();
            assert_eq!(serde_json::from_str::<Domain>(&s).unwrap(), d);
        }
    }
}
