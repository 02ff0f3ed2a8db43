//! Globally adaptive Gauss–Kronrod (7/15) quadrature.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];

// Gauss weights for the odd Kronrod nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Clone, Copy, Debug)]
pub struct QuadOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-300,
            max_intervals: 4000,
        }
    }
}

impl QuadOptions {
    pub fn rel(rel_tol: f64) -> Self {
        Self {
            rel_tol,
            ..Self::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub abs_err: f64,
    pub intervals: usize,
}

impl QuadResult {
    pub fn rel_err(&self) -> f64 {
        if self.value == 0.0 {
            if self.abs_err == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            self.abs_err / self.value.abs()
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadError {
    #[error("integrand is not finite at x = {x}")]
    NonFinite { x: f64 },
    #[error("tolerance not reached after {intervals} intervals (value {value}, error {abs_err})")]
    NotConverged { value: f64, abs_err: f64, intervals: usize },
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.total_cmp(&other.err)
    }
}

fn kronrod15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Result<(f64, f64), QuadError> {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    if !fc.is_finite() {
        return Err(QuadError::NonFinite { x: center });
    }
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for (j, (&x, &w)) in XGK.iter().zip(WGK.iter()).take(7).enumerate() {
        let dx = half * x;
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        if !f1.is_finite() {
            return Err(QuadError::NonFinite { x: center - dx });
        }
        if !f2.is_finite() {
            return Err(QuadError::NonFinite { x: center + dx });
        }
        kron += w * (f1 + f2);
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    Ok((kron * half, ((kron - gauss) * half).abs()))
}

/// Integrates `f` over the finite interval `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, opts: QuadOptions) -> Result<QuadResult, QuadError> {
    if a == b {
        return Ok(QuadResult {
            value: 0.0,
            abs_err: 0.0,
            intervals: 0,
        });
    }
    if b < a {
        let r = integrate(f, b, a, opts)?;
        return Ok(QuadResult { value: -r.value, ..r });
    }
    let (value, err) = kronrod15(&f, a, b)?;
    let mut heap = BinaryHeap::new();
    heap.push(Segment { a, b, value, err });
    let mut total = value;
    let mut total_err = err;
    let mut intervals = 1;
    while total_err > opts.abs_tol.max(opts.rel_tol * total.abs()) {
        if intervals >= opts.max_intervals {
            return Err(QuadError::NotConverged {
                value: total,
                abs_err: total_err,
                intervals,
            });
        }
        let seg = heap.pop().expect("heap holds at least one segment");
        let mid = 0.5 * (seg.a + seg.b);
        if mid <= seg.a || mid >= seg.b {
            // interval collapsed to machine precision; accept what we have
            heap.push(seg);
            break;
        }
        let (v1, e1) = kronrod15(&f, seg.a, mid)?;
        let (v2, e2) = kronrod15(&f, mid, seg.b)?;
        total += v1 + v2 - seg.value;
        total_err += e1 + e2 - seg.err;
        heap.push(Segment {
            a: seg.a,
            b: mid,
            value: v1,
            err: e1,
        });
        heap.push(Segment {
            a: mid,
            b: seg.b,
            value: v2,
            err: e2,
        });
        intervals += 1;
    }
    // re-sum to limit drift from the running updates
    let value: f64 = heap.iter().map(|s| s.value).sum();
    let abs_err: f64 = heap.iter().map(|s| s.err).sum();
    Ok(QuadResult {
        value,
        abs_err,
        intervals,
    })
}

/// Integrates `f` over `[a, ∞)` through the map `x = a + (1 - t)/t`.
pub fn integrate_to_infinity<F: Fn(f64) -> f64>(f: F, a: f64, opts: QuadOptions) -> Result<QuadResult, QuadError> {
    integrate(
        |t| {
            let x = a + (1.0 - t) / t;
            let v = f(x) / (t * t);
            if v.is_finite() {
                v
            } else {
                0.0
            }
        },
        0.0,
        1.0,
        opts,
    )
}
