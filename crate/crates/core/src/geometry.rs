//! Small vector helpers on `&[f64]` points.

use rand::Rng;
use rand_distr::StandardNormal;
use statrs::function::gamma::gamma;

use crate::rng::RngStream;

pub type Point = Vec<f64>;

#[inline]
pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[inline]
pub fn dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

#[inline]
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub fn sub(x: &[f64], y: &[f64]) -> Point {
    x.iter().zip(y).map(|(a, b)| a - b).collect()
}

pub fn scale(x: &[f64], s: f64) -> Point {
    x.iter().map(|v| v * s).collect()
}

/// Surface area of the unit sphere in `ℝ^d`.
pub fn sphere_area(d: usize) -> f64 {
    let h = d as f64 / 2.0;
    2.0 * std::f64::consts::PI.powf(h) / gamma(h)
}

/// Volume of the unit ball in `ℝ^d`.
pub fn ball_volume(d: usize) -> f64 {
    let h = d as f64 / 2.0;
    std::f64::consts::PI.powf(h) / gamma(h + 1.0)
}

/// Writes a uniformly distributed unit vector into `out`.
#[inline]
pub fn random_direction(rng: &mut RngStream, out: &mut [f64]) {
    match out.len() {
        1 => out[0] = if rng.random::<bool>() { 1.0 } else { -1.0 },
        2 => {
            let t = std::f64::consts::TAU * rng.open01();
            out[0] = t.cos();
            out[1] = t.sin();
        }
        _ => loop {
            for v in out.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let n = norm(out);
            if n > 1e-12 {
                out.iter_mut().for_each(|v| *v /= n);
                return;
            }
        },
    }
}

/// A uniform point in the ball `B(center, radius)`.
pub fn random_in_ball(rng: &mut RngStream, center: &[f64], radius: f64) -> Point {
    let d = center.len();
    let mut u = vec![0.0; d];
    random_direction(rng, &mut u);
    let rho = radius * rng.open01().powf(1.0 / d as f64);
    center.iter().zip(&u).map(|(c, e)| c + rho * e).collect()
}

/// Deterministic, near-uniform directions on the unit sphere (equal weights).
pub fn sphere_directions(d: usize) -> Vec<Point> {
    match d {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..256)
            .map(|k| {
                let t = std::f64::consts::TAU * (k as f64 + 0.5) / 256.0;
                vec![t.cos(), t.sin()]
            })
            .collect(),
        3 => {
            let n = 1024;
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..n)
                .map(|k| {
                    let z = 1.0 - (2.0 * k as f64 + 1.0) / n as f64;
                    let r = (1.0 - z * z).sqrt();
                    let t = golden * k as f64;
                    vec![r * t.cos(), r * t.sin(), z]
                })
                .collect()
        }
        _ => {
            let mut rng = RngStream::new(0x5eed, d as u64);
            (0..4096)
                .map(|_| {
                    let mut u = vec![0.0; d];
                    random_direction(&mut rng, &mut u);
                    u
                })
                .collect()
        }
    }
}
