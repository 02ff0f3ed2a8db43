//! Acceptance gate. Each test prints one `PASS`/`FAIL` line straight to
//! stderr, so the lines show up in `cargo test` output even when the test
//! harness captures `println!`.

use std::f64::consts::PI;
use std::io::Write;
use std::time::Instant;

use bhplab::bhp::{bhp_series, chain_decay, factorization_check, BoundaryData, ScanConfig};
use bhplab::domains::Domain;
use bhplab::exitstats::{harmonic_measure_family, mean_exit_time, subdomain_stats, TargetSet};
use bhplab::experiment::{run_experiment, strip_timestamp, ExperimentConfig};
use bhplab::kernel::{
    check_jt, check_phi, log_grid, tail_mass, JtOptions, JumpKernelSpec, PhiOptions, ScaleFunction, Verdict,
};
use bhplab::quadrature::{integrate_to_infinity, QuadOptions};
use bhplab::rng::StreamKey;
use bhplab::sampler::{survival_prob_ball, ModelSpec, ProcessModel, SigmaField};
use bhplab::stats::{ks_two_sample, normal_quantile, Estimate, Precision};
use statrs::function::gamma::gamma;

fn verdict(id: u32, pass: bool, detail: String, start: Instant) {
    let line = format!(
        "\n{} criterion {id}: {detail} [{:.1}s]\n",
        if pass { "PASS" } else { "FAIL" },
        start.elapsed().as_secs_f64()
    );
    std::io::stderr().write_all(line.as_bytes()).unwrap();
    assert!(pass, "criterion {id} failed: {detail}");
}

fn walk(alpha: f64, dim: usize, rho: f64) -> ProcessModel {
    ProcessModel::new(ModelSpec::IsotropicStable {
        alpha,
        dim,
        rho,
        shell: 0.0,
    })
    .unwrap()
}

fn max_over_min(v: &[f64]) -> f64 {
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    hi / lo
}

/// Exit density of the standard Cauchy process from 0 out of (−1, 1).
fn cauchy_exit_density(y: f64) -> f64 {
    1.0 / (PI * y.abs() * (y * y - 1.0).sqrt())
}

#[test]
fn criterion_01_cauchy_exit_law() {
    let start = Instant::now();
    let opts = QuadOptions::rel(1e-12);
    // substitute y = cosh(u) to remove the endpoint singularity
    let sub = |u: f64| cauchy_exit_density(u.cosh()) * u.sinh();
    let far = 2.0 * integrate_to_infinity(sub, 2f64.acosh(), opts).unwrap().value;
    let right = integrate_to_infinity(sub, 0.0, opts).unwrap().value;
    assert!((far - 1.0 / 3.0).abs() < 1e-9 && (right - 0.5).abs() < 1e-9);

    let m = walk(1.0, 1, 0.5);
    let sets = [
        TargetSet::Not {
            set: Box::new(TargetSet::InsideBall {
                center: vec![0.0],
                radius: 2.0,
            }),
        },
        TargetSet::HalfSpace {
            normal: vec![1.0],
            offset: 1.0,
        },
    ];
    let est = harmonic_measure_family(
        &m,
        &Domain::interval(-1.0, 1.0),
        &[0.0],
        &sets,
        1_000_000,
        StreamKey::new(1, 0),
    )
    .unwrap();
    let (z_far, z_right) = (est[0].z_to(far), est[1].z_to(right));
    verdict(
        1,
        z_far < 3.0 && z_right < 3.0,
        format!(
            "P(|X|>2) = {:.5} ± {:.5} vs {far:.5} ({z_far:.2}σ); P(X>1) = {:.5} vs {right:.5} ({z_right:.2}σ)",
            est[0].value, est[0].stderr, est[1].value
        ),
        start,
    );
}

#[test]
fn criterion_02_mean_exit_time() {
    let start = Instant::now();
    let m = walk(1.0, 1, 0.5);
    let e1 = mean_exit_time(&m, &Domain::interval(-1.0, 1.0), &[0.0], 200_000, StreamKey::new(2, 0)).unwrap();
    let first = (e1.value - 1.0).abs() < 0.01;
    let radii = [0.5, 1.0, 2.0];
    let ests: Vec<Estimate> = radii
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            mean_exit_time(
                &m,
                &Domain::interval(-r, r),
                &[0.0],
                200_000,
                StreamKey::new(2, 1 + i as u64),
            )
            .unwrap()
        })
        .collect();
    // least squares for c in E(r) = c r with relative residuals
    let c = ests.iter().zip(&radii).map(|(e, r)| e.value / r).sum::<f64>() / radii.len() as f64;
    let resid = ests
        .iter()
        .zip(&radii)
        .map(|(e, r)| (e.value / (c * r) - 1.0).abs())
        .fold(0.0, f64::max);
    verdict(
        2,
        first && resid < 0.03,
        format!(
            "E0[τ] = {:.4} ± {:.4}; fit c = {c:.4}, max relative residual {resid:.4}",
            e1.value, e1.stderr
        ),
        start,
    );
}

#[test]
fn criterion_03_tail_mass_identity() {
    let start = Instant::now();
    let j = JumpKernelSpec::stable(1, 1.0, 1.0);
    let worst = log_grid(1e-2, 1e2, 41)
        .into_iter()
        .map(|r| (tail_mass(&j, &[0.0], r).unwrap().value * r - 2.0).abs())
        .fold(0.0, f64::max);
    verdict(
        3,
        worst < 1e-5,
        format!("max |tail(r)·r − 2| = {worst:.2e} over r ∈ [1e-2, 1e2]"),
        start,
    );
}

fn sde_cauchy(dt: f64) -> ProcessModel {
    ProcessModel::new(ModelSpec::SdeStable {
        alpha: 1.0,
        dim: 1,
        sigma: SigmaField::identity(1),
        ellipticity: (1.0, 1.0),
        dt,
    })
    .unwrap()
}

#[test]
fn criterion_04_ep_property() {
    let start = Instant::now();
    // Lévy's maximal inequality and P(|X_t| > r) ≤ 2t/(πr) for the Cauchy process
    let bound = 4.0 / PI;
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for (i, &r) in [0.25, 1.0, 4.0].iter().enumerate() {
        for (k, &frac) in log_grid(1e-3, 1e-1, 5).iter().enumerate() {
            let t = frac * r;
            let m = sde_cauchy(t / 256.0);
            let p = survival_prob_ball(&m, &[0.0], r, t, 40_000, StreamKey::new(4, (10 * i + k) as u64)).unwrap();
            let norm = p.value * r / t;
            worst = worst.max(norm);
            ok &= norm - 3.0 * p.stderr * r / t <= bound;
        }
    }
    let a = survival_prob_ball(
        &sde_cauchy(2.0 / 256.0),
        &[0.0],
        2.0,
        2.0,
        40_000,
        StreamKey::new(4, 100),
    )
    .unwrap();
    let b = survival_prob_ball(
        &sde_cauchy(1.0 / 256.0),
        &[0.0],
        1.0,
        1.0,
        40_000,
        StreamKey::new(4, 101),
    )
    .unwrap();
    let z = a.z_distance(&b);
    verdict(
        4,
        ok && z < 3.0,
        format!(
            "max P·r/t = {worst:.4} (bound 4/π = {bound:.4}); collapse {:.4} vs {:.4} ({z:.2} joint σ)",
            a.value, b.value
        ),
        start,
    );
}

#[test]
fn criterion_05_chain_matches_walk() {
    let start = Instant::now();
    let d = Domain::interval(-1.0, 1.0);
    let bins = |lo: f64, hi: f64| TargetSet::Band { axis: 0, lo, hi };
    let sets = [
        bins(f64::NEG_INFINITY, -2.0),
        bins(-2.0, -1.0 + 1e-9),
        bins(1.0 - 1e-9, 2.0),
        bins(2.0, f64::INFINITY),
    ];
    let chain = ProcessModel::new(ModelSpec::StableLikeChain {
        kernel: JumpKernelSpec::stable(1, 1.0, 1.0),
        pitch: 2f64.powi(-8),
        cutoff: 4.0,
    })
    .unwrap();
    let n = 100_000;
    let a = harmonic_measure_family(&chain, &d, &[0.0], &sets, n, StreamKey::new(5, 0)).unwrap();
    let b = harmonic_measure_family(&walk(1.0, 1, 1.0), &d, &[0.0], &sets, n, StreamKey::new(5, 1)).unwrap();
    let tv = 0.5 * a.iter().zip(&b).map(|(p, q)| (p.value - q.value).abs()).sum::<f64>();
    let fmt = |v: &[Estimate]| {
        v.iter()
            .map(|e| format!("{:.4}", e.value))
            .collect::<Vec<_>>()
            .join("/")
    };
    verdict(
        5,
        tv < 0.02,
        format!("TV = {tv:.4}; chain {} vs walk {}", fmt(&a), fmt(&b)),
        start,
    );
}

#[test]
fn criterion_06_walk_factor_invariance() {
    let start = Instant::now();
    let d = Domain::ball(vec![0.0, 0.0], 1.0);
    let draw = |rho: f64, stream: u64| -> Vec<f64> {
        let m = walk(1.5, 2, rho);
        let mut rng = StreamKey::new(6, stream).rng();
        (0..100_000)
            .map(|_| bhplab::geometry::norm(&m.exit_sample(&d, &[0.0, 0.0], &mut rng).unwrap().y))
            .collect()
    };
    let mut a = draw(1.0, 0);
    let mut b = draw(0.5, 1);
    let ks = ks_two_sample(&mut a, &mut b);
    verdict(
        6,
        ks.p_value > 0.01,
        format!("two-sample KS on |Y|: D = {:.5}, p = {:.3}", ks.statistic, ks.p_value),
        start,
    );
}

fn scan_config() -> ScanConfig {
    ScanConfig {
        grid_points: 12,
        precision: Precision {
            n0: 4096,
            cap: 1 << 18,
            target_rel: 0.02,
        },
        ..ScanConfig::default()
    }
}

#[test]
fn criterion_07_uniform_bhp() {
    let start = Instant::now();
    let m = walk(1.5, 2, 1.0);
    let xi = [0.0, 0.0];
    let radii = [0.4, 0.2, 0.1, 0.05];
    let cfg = scan_config();
    let halves = |r: f64| {
        (
            BoundaryData::far_half(&xi, r, vec![0.0, 1.0]),
            BoundaryData::far_half(&xi, r, vec![0.0, -1.0]),
        )
    };
    let slit = bhp_series(
        &m,
        &Domain::SlitPlane,
        &xi,
        &radii,
        1.0,
        halves,
        &cfg,
        StreamKey::new(7, 0),
    )
    .unwrap();
    let slit_powered = slit.reports.iter().map(|r| r.powered_points).min().unwrap();

    // half-space {x₁ > 0}: the data split along the boundary direction
    let tangential = |r: f64| {
        (
            BoundaryData::far_half(&xi, r, vec![0.0, 1.0]),
            BoundaryData::far_half(&xi, r, vec![0.0, -1.0]),
        )
    };
    let hs = Domain::upper_half_space(2);
    let half = bhp_series(&m, &hs, &xi, &radii, 1.0, tangential, &cfg, StreamKey::new(7, 1)).unwrap();
    let half_powered = half.reports.iter().map(|r| r.powered_points).min().unwrap();

    // h at (x, r) and at (x/2, r/2) have the same law; compare on independent streams
    let (small, big) = (&half.reports[2], &half.reports[1]);
    let mut zs = Vec::new();
    for (i, x) in small.grid.iter().enumerate() {
        let j = big
            .grid
            .iter()
            .position(|y| (y[0] - 2.0 * x[0]).abs() < 1e-12 && (y[1] - 2.0 * x[1]).abs() < 1e-12)
            .expect("grids scale with r");
        zs.push(small.h1[i].z_distance(&big.h1[j]));
        zs.push(small.h2[i].z_distance(&big.h2[j]));
    }
    let z_cut = normal_quantile(1.0 - 0.01 / (2.0 * zs.len() as f64));
    let z_max = zs.iter().cloned().fold(0.0, f64::max);
    let pass = slit.spread < 2.0 && half.spread < 2.0 && slit_powered >= 12 && half_powered >= 12 && z_max < z_cut;
    verdict(
        7,
        pass,
        format!(
            "slit Ĉ = {:?} (max/min {:.3}, ≥{slit_powered} powered); half-space Ĉ = {:?} (max/min {:.3}, ≥{half_powered} powered); collapse max |z| = {z_max:.2} < {z_cut:.2}",
            slit.c_hat.iter().map(|c| (c * 1e3).round() / 1e3).collect::<Vec<_>>(),
            slit.spread,
            half.c_hat.iter().map(|c| (c * 1e3).round() / 1e3).collect::<Vec<_>>(),
            half.spread
        ),
        start,
    );
}

#[test]
fn criterion_08_factorization_band() {
    let start = Instant::now();
    let m = walk(1.5, 2, 1.0);
    let xi = [0.0, 0.0];
    let hs = Domain::upper_half_space(2);
    let c = [0.5, 1.5, 2.0 / 3.0];
    let p = Precision {
        n0: 4096,
        cap: 1 << 18,
        target_rel: 0.02,
    };
    let run = |r: f64, stream: u64| {
        factorization_check(
            &m,
            &hs,
            &xi,
            r,
            c,
            &BoundaryData::far_field(&xi, r),
            12,
            p,
            0.05,
            StreamKey::new(8, stream),
        )
        .unwrap()
    };
    let a = run(0.5, 0);
    let b = run(1.0, 1);
    // ∫_{|z| ≥ 2r} A |z|^{-2-α} dz = 2πA (2r)^{-α}/α with the isotropic jump constant A
    let a_const = 1.5 * 2f64.powf(0.5) * gamma(1.75) / (PI * gamma(0.25));
    let closed = 2.0 * PI * a_const / 1.5;
    assert!(
        (a.kernel_integral / closed - 1.0).abs() < 1e-6,
        "{} vs {closed}",
        a.kernel_integral
    );
    let change = (a.band / b.band - 1.0).abs();
    verdict(
        8,
        a.band < 10.0 && b.band < 10.0 && change < 0.5,
        format!(
            "band {:.3} at r = 0.5 ({} powered), {:.3} at r = 1 ({} powered), change {:.1}%",
            a.band,
            a.powered_points,
            b.band,
            b.powered_points,
            100.0 * change
        ),
        start,
    );
}

#[test]
fn criterion_09_exit_ratio_band() {
    let start = Instant::now();
    let m = walk(1.5, 2, 1.0);
    let hs = Domain::upper_half_space(2);
    let phi = ScaleFunction::power(1.5);
    let mut vals = Vec::new();
    for (i, &r) in [0.4, 0.2, 0.1, 0.05].iter().enumerate() {
        let s = subdomain_stats(
            &m,
            &hs,
            &[0.0, 0.0],
            r,
            &[r / 2.0, 0.0],
            100_000,
            StreamKey::new(9, i as u64),
        )
        .unwrap();
        vals.push(s.survive.value * phi.eval(r).unwrap() / s.mean_exit.value);
    }
    let spread = max_over_min(&vals);
    verdict(
        9,
        spread < 2.0,
        format!(
            "P·φ(r)/E = {:?}, max/min {spread:.4}",
            vals.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>()
        ),
        start,
    );
}

#[test]
fn criterion_10_chain_decay() {
    let start = Instant::now();
    let m = walk(1.5, 2, 1.0);
    let r = 1.0;
    let c = chain_decay(
        &m,
        &Domain::SlitPlane,
        &[0.0, 0.0],
        r,
        &[-0.25, 0.25],
        8,
        100_000,
        StreamKey::new(10, 0),
    )
    .unwrap();
    verdict(
        10,
        c.decays,
        format!(
            "P(∩A_k) = {:?}; rate {:.4}, 95% upper {:.4}",
            c.survival
                .iter()
                .map(|e| (e.value * 1e4).round() / 1e4)
                .collect::<Vec<_>>(),
            c.rate,
            c.rate_upper
        ),
        start,
    );
}

#[test]
fn criterion_11_determinism() {
    let start = Instant::now();
    let cfg: ExperimentConfig = serde_json::from_str(
        r#"{
            "kind": "bhp-scan",
            "model": {"kind": "isotropic-stable", "alpha": 1.5, "dim": 2},
            "domain": {"kind": "slit-plane"},
            "params": {"xi": [0.0, 0.0], "r": 0.2, "kappa": 1.0, "grid": 6, "target_rel": 0.05, "cap": 16384},
            "seed": 11,
            "workers": 2
        }"#,
    )
    .unwrap();
    let a = strip_timestamp(&run_experiment(&cfg).unwrap().report);
    let b = strip_timestamp(&run_experiment(&cfg).unwrap().report);
    let (sa, sb) = (serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    verdict(
        11,
        sa == sb,
        format!(
            "two runs give {} and {} byte reports, identical: {}",
            sa.len(),
            sb.len(),
            sa == sb
        ),
        start,
    );
}

#[test]
fn criterion_12_condition_sensitivity() {
    let start = Instant::now();
    let j = JumpKernelSpec::tempered_stable(1, 1.0, 1.0, 1.0, 1.0);
    let phi = ScaleFunction::power(1.0);
    let xs = vec![vec![0.0], vec![1.5]];
    let local = check_jt(&j, &phi, &log_grid(1e-3, 1.0, 31), &xs, JtOptions::default()).unwrap();
    let global = check_jt(&j, &phi, &log_grid(1e-3, 1e3, 61), &xs, JtOptions::default()).unwrap();
    let geo = check_phi(
        &ScaleFunction::geometric_stable(1.0),
        &log_grid(1e-8, 1e2, 101),
        PhiOptions::default(),
    )
    .unwrap();
    let reverse = geo.reverse_doubling.as_ref().map(|r| r.verdict);
    let pass = local.verdict == Verdict::HoldsNumerically
        && global.verdict == Verdict::Violated
        && reverse == Some(Verdict::Violated);
    verdict(
        12,
        pass,
        format!(
            "tempered (Jt) on r ≤ 1: {:?}, on [1e-3, 1e3]: {:?}; geometric-stable reverse doubling: {reverse:?}",
            local.verdict, global.verdict
        ),
        start,
    );
}
