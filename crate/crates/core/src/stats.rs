//! Monte Carlo accumulation, confidence intervals and goodness-of-fit tests.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::rng::{RngStream, StreamKey};

/// Samples per reproducibility block; each block draws from its own child stream.
pub const BLOCK: u64 = 1024;

const Z95: f64 = 1.959_963_984_540_054;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Binomial proportion with a Wilson score interval.
    Wilson,
    /// Sample mean with a Student-t interval.
    StudentT,
    /// Derived from other estimates (delta method).
    Derived,
}

/// A Monte Carlo value with its uncertainty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub n: u64,
    pub ci95: (f64, f64),
    pub method: Method,
    /// Samples discarded because the sampler stalled.
    #[serde(default)]
    pub stalls: u64,
}

impl Estimate {
    pub fn proportion(hits: u64, n: u64) -> Self {
        assert!(n >= 1, "a proportion needs at least one sample");
        let nf = n as f64;
        let p = hits as f64 / nf;
        let stderr = (p * (1.0 - p) / nf).sqrt();
        let z2 = Z95 * Z95;
        let denom = 1.0 + z2 / nf;
        let center = (p + z2 / (2.0 * nf)) / denom;
        let half = Z95 / denom * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
        let ci = ((center - half).max(0.0).min(p), (center + half).min(1.0).max(p));
        Self {
            value: p,
            stderr,
            n,
            ci95: ci,
            method: Method::Wilson,
            stalls: 0,
        }
    }

    pub fn mean(m: &Moments) -> Self {
        assert!(m.n >= 1, "a mean needs at least one sample");
        let stderr = m.stderr();
        let half = if m.n > 1 {
            let t = StudentsT::new(0.0, 1.0, (m.n - 1) as f64)
                .expect("positive degrees of freedom")
                .inverse_cdf(0.975);
            t * stderr
        } else {
            f64::INFINITY
        };
        Self {
            value: m.mean,
            stderr,
            n: m.n,
            ci95: (m.mean - half, m.mean + half),
            method: Method::StudentT,
            stalls: 0,
        }
    }

    /// An estimate computed from others with a propagated standard error.
    pub fn derived(value: f64, stderr: f64, n: u64) -> Self {
        let half = Z95 * stderr;
        Self {
            value,
            stderr,
            n: n.max(1),
            ci95: (value - half, value + half),
            method: Method::Derived,
            stalls: 0,
        }
    }

    pub fn with_stalls(mut self, stalls: u64) -> Self {
        self.stalls = stalls;
        self
    }

    pub fn rel_stderr(&self) -> f64 {
        if self.value == 0.0 {
            f64::INFINITY
        } else {
            self.stderr / self.value.abs()
        }
    }

    /// `|self - other|` measured in joint standard errors.
    pub fn z_distance(&self, other: &Estimate) -> f64 {
        let s = (self.stderr.powi(2) + other.stderr.powi(2)).sqrt();
        let d = (self.value - other.value).abs();
        if s == 0.0 {
            if d == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            d / s
        }
    }

    /// `|self - target|` measured in standard errors of `self`.
    pub fn z_to(&self, target: f64) -> f64 {
        let d = (self.value - target).abs();
        if self.stderr == 0.0 {
            if d == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            d / self.stderr
        }
    }
}

/// Partial results that merge associatively.
pub trait Merge: Default + Send {
    fn merge(&mut self, other: Self);
}

/// Streaming mean and variance (Welford, merged with Chan's formula).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub n: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    #[inline]
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).max(0.0)
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.n == 0 {
            f64::INFINITY
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

impl Merge for Moments {
    fn merge(&mut self, other: Self) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = other;
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        let nf = n as f64;
        self.mean += delta * other.n as f64 / nf;
        self.m2 += other.m2 + delta * delta * (self.n as f64) * (other.n as f64) / nf;
        self.n = n;
    }
}

impl<A: Merge, B: Merge> Merge for (A, B) {
    fn merge(&mut self, other: Self) {
        self.0.merge(other.0);
        self.1.merge(other.1);
    }
}

impl<T: Send> Merge for Vec<T> {
    fn merge(&mut self, mut other: Self) {
        self.append(&mut other);
    }
}

impl Merge for u64 {
    fn merge(&mut self, other: Self) {
        *self += other;
    }
}

/// Runs `n` draws of `sample` split into [`BLOCK`]-sized blocks.
///
/// Block `b` uses the stream `key.child(b)` and block results are merged in
/// block order, so the outcome is independent of the thread count.
pub fn par_blocks<A, E, F>(key: StreamKey, n: u64, sample: F) -> Result<A, E>
where
    A: Merge,
    E: Send,
    F: Fn(&mut RngStream, &mut A) -> Result<(), E> + Sync,
{
    par_blocks_from(key, 0, n, sample)
}

/// [`par_blocks`] starting at block `first`, so that a run can be extended
/// with fresh blocks without repeating earlier ones.
pub fn par_blocks_from<A, E, F>(key: StreamKey, first: u64, n: u64, sample: F) -> Result<A, E>
where
    A: Merge,
    E: Send,
    F: Fn(&mut RngStream, &mut A) -> Result<(), E> + Sync,
{
    let blocks = n.div_ceil(BLOCK);
    let parts: Result<Vec<A>, E> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = key.child(first + b).rng();
            let mut acc = A::default();
            let count = BLOCK.min(n - b * BLOCK);
            for _ in 0..count {
                sample(&mut rng, &mut acc)?;
            }
            Ok(acc)
        })
        .collect();
    Ok(parts?.into_iter().fold(A::default(), |mut acc, p| {
        acc.merge(p);
        acc
    }))
}

/// Sample-size policy: start at `n0`, double until `target_rel` relative
/// standard error or `cap` samples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Precision {
    pub n0: u64,
    pub cap: u64,
    pub target_rel: f64,
}

impl Default for Precision {
    fn default() -> Self {
        Self {
            n0: 4 * BLOCK,
            cap: 10_000_000,
            target_rel: 0.02,
        }
    }
}

impl Precision {
    pub fn fixed(n: u64) -> Self {
        Self {
            n0: n,
            cap: n,
            target_rel: 0.0,
        }
    }
}

/// Accumulates whole blocks, doubling the total until `done` or the cap.
///
/// Returns the accumulator, the number of samples drawn and whether the cap
/// stopped the escalation.
pub fn escalate_blocks<A, E, F, D>(key: StreamKey, p: Precision, done: D, sample: F) -> Result<(A, u64, bool), E>
where
    A: Merge,
    E: Send,
    F: Fn(&mut RngStream, &mut A) -> Result<(), E> + Sync,
    D: Fn(&A) -> bool,
{
    let cap = p.cap.max(1);
    let mut n = p.n0.clamp(1, cap);
    let mut acc: A = par_blocks_from(key, 0, n, &sample)?;
    loop {
        if done(&acc) {
            return Ok((acc, n, false));
        }
        if n >= cap {
            return Ok((acc, n, true));
        }
        // extend only by whole blocks so block b always sees stream b
        let start = n.div_ceil(BLOCK) * BLOCK;
        let target = (2 * start).min(cap.div_ceil(BLOCK) * BLOCK);
        if target <= start {
            return Ok((acc, n, true));
        }
        let more: A = par_blocks_from(key, start / BLOCK, target - start, &sample)?;
        acc.merge(more);
        n = target;
    }
}

/// Kolmogorov limiting survival function `Q(λ) = 2 Σ (-1)^{k-1} e^{-2k²λ²}`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    if lambda < 0.3 {
        // the alternating series converges poorly here; use the dual form
        let x = std::f64::consts::PI * std::f64::consts::PI / (8.0 * lambda * lambda);
        let mut s = 0.0;
        for k in 0..50 {
            let j = (2 * k + 1) as f64;
            s += (-j * j * x).exp();
        }
        let cdf = (2.0 * std::f64::consts::PI).sqrt() / lambda * s;
        return (1.0 - cdf).clamp(0.0, 1.0);
    }
    let mut s = 0.0;
    for k in 1..200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// One-sample Kolmogorov–Smirnov test against a continuous CDF.
pub fn ks_one_sample<F: Fn(f64) -> f64>(sample: &mut [f64], cdf: F) -> KsResult {
    sample.sort_by(f64::total_cmp);
    let n = sample.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sample.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let en = n.sqrt();
    KsResult {
        statistic: d,
        p_value: kolmogorov_sf((en + 0.12 + 0.11 / en) * d),
    }
}

/// Two-sample Kolmogorov–Smirnov test.
pub fn ks_two_sample(a: &mut [f64], b: &mut [f64]) -> KsResult {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n as f64 * m as f64 / (n + m) as f64).sqrt();
    KsResult {
        statistic: d,
        p_value: kolmogorov_sf((ne + 0.12 + 0.11 / ne) * d),
    }
}

/// Weighted least-squares line fit `y = a + b x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
    pub slope_stderr: f64,
}

/// Fits with weights `1/var_i`; the slope error is the model-based one.
pub fn weighted_line_fit(x: &[f64], y: &[f64], var: &[f64]) -> LineFit {
    let (mut sw, mut swx, mut swy, mut swxx, mut swxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for ((&xi, &yi), &vi) in x.iter().zip(y).zip(var) {
        let w = 1.0 / vi;
        sw += w;
        swx += w * xi;
        swy += w * yi;
        swxx += w * xi * xi;
        swxy += w * xi * yi;
    }
    let det = sw * swxx - swx * swx;
    let slope = (sw * swxy - swx * swy) / det;
    let intercept = (swy - slope * swx) / sw;
    LineFit {
        intercept,
        slope,
        slope_stderr: (sw / det).sqrt(),
    }
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn kolmogorov_known_values() {
        // Q(1.36) ≈ 0.0494, Q(1.63) ≈ 0.0098
        assert!((kolmogorov_sf(1.358) - 0.05).abs() < 1e-3);
        assert!((kolmogorov_sf(1.628) - 0.01).abs() < 5e-4);
        // continuity across the branch point
        assert!((kolmogorov_sf(0.2999999) - kolmogorov_sf(0.3000001)).abs() < 1e-6);
    }

    #[test]
    fn ks_uniform_sample_accepted() {
        let mut rng = RngStream::new(3, 0);
        let mut xs: Vec<f64> = (0..5000).map(|_| rng.open01()).collect();
        let r = ks_one_sample(&mut xs, |x| x.clamp(0.0, 1.0));
        assert!(r.p_value > 0.01, "{r:?}");
        let mut ys: Vec<f64> = xs.iter().map(|x| x * x).collect();
        let r = ks_one_sample(&mut ys, |x| x.clamp(0.0, 1.0));
        assert!(r.p_value < 1e-6);
    }

    #[test]
    fn wilson_contains_value_at_edges() {
        for (h, n) in [(0, 10), (10, 10), (3, 7), (1, 1)] {
            let e = Estimate::proportion(h, n);
            assert!(e.ci95.0 <= e.value && e.value <= e.ci95.1);
            assert!(e.stderr >= 0.0);
        }
    }

    #[test]
    fn par_blocks_independent_of_thread_count() {
        let run = |threads| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                par_blocks::<Moments, (), _>(StreamKey::new(1, 2), 10_000, |rng, m| {
                    m.push(rng.open01());
                    Ok(())
                })
                .unwrap()
            })
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert_eq!(a.m2.to_bits(), b.m2.to_bits());
        assert_eq!(a.n, 10_000);
    }

    #[test]
    fn line_fit_recovers_slope() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 0.5 - 0.25 * v).collect();
        let f = weighted_line_fit(&x, &y, &[1.0; 4]);
        assert!((f.slope + 0.25).abs() < 1e-14);
        assert!((f.intercept - 0.5).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn moments_merge_matches_sequential(xs in proptest::collection::vec(-1e3f64..1e3, 2..200), split in 0usize..200) {
            let split = split.min(xs.len());
            let mut all = Moments::default();
            xs.iter().for_each(|&x| all.push(x));
            let mut a = Moments::default();
            let mut b = Moments::default();
            xs[..split].iter().for_each(|&x| a.push(x));
            xs[split..].iter().for_each(|&x| b.push(x));
            a.merge(b);
            prop_assert_eq!(a.n, all.n);
            prop_assert!((a.mean - all.mean).abs() <= 1e-9 * (1.0 + all.mean.abs()));
            prop_assert!((a.m2 - all.m2).abs() <= 1e-7 * (1.0 + all.m2.abs()));
        }
    }
}
