//! Reproducible experiment runs: JSON configs in, versioned JSON reports out.
//!
//! A report carries the fully resolved config, a flat table of scalar
//! metrics and the detailed result of the underlying operation. The
//! timestamp is the only field that differs between identical runs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::bhp::{
    bhp_series, box_diagnostics, chain_decay, factorization_check, BhpError, BhpReport, BoundaryData, ScanConfig,
};
use crate::domains::Domain;
use crate::exitstats::{
    ep_normalized, harmonic_measure_family, mean_exit_time, stall_warning, subdomain_stats, EstimationError, TargetSet,
};
use crate::geometry::Point;
use crate::kernel::{
    check_jc1, check_jphi, check_jt, check_phi, log_grid, ConditionReport, Jc1Config, JphiConfig, JtOptions,
    JumpKernelSpec, KernelError, PhiOptions, Verdict,
};
use crate::rng::StreamKey;
use crate::sampler::{ModelSpec, ProcessModel, SamplerError, MONITOR_STEPS};
use crate::stats::Precision;

pub const SCHEMA: &str = "bhplab/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    CheckKernel,
    ExitStats,
    EpCheck,
    BhpScan,
    Factorization,
    BoxMethod,
    ChainDecay,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::CheckKernel => "check-kernel",
            ExperimentKind::ExitStats => "exit-stats",
            ExperimentKind::EpCheck => "ep-check",
            ExperimentKind::BhpScan => "bhp-scan",
            ExperimentKind::Factorization => "factorization",
            ExperimentKind::BoxMethod => "box-method",
            ExperimentKind::ChainDecay => "chain-decay",
        }
    }
}

/// Which pair of boundary data a scan compares.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DataPair {
    /// Far-field indicators of the half-spaces `±n·(y−ξ) > 0`.
    Halves { normal: Point },
    /// Explicit data, used at every radius of the series.
    Explicit { g1: BoundaryData, g2: BoundaryData },
}

/// Experiment parameters. Unset fields take per-kind defaults in
/// [`ExperimentConfig::resolve`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi: Option<Point>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Point>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_series: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
    /// Relative standard error targeted by escalating estimators.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_rel: Option<f64>,
    /// Sample cap of escalating estimators.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<u64>,
    /// Precision gate excluding noisy estimates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataPair>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<Vec<TargetSet>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_fracs: Option<Vec<f64>>,
    /// Permits ep-check on the isotropic model via its time-stepped scheme.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sde_fallback: Option<bool>,
    /// Time steps per horizon for time-stepped models in ep-check.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monitor_steps: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    /// Kernel to check; defaults to the one the model realizes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<JumpKernelSpec>,
    /// `[lo, hi]` radius range for the kernel checks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_range: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<Point>>,
}

/// A declared acceptance threshold on a report metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Check {
    pub metric: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<ExperimentKind>,
    pub model: ModelSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<Domain>,
    #[serde(default)]
    pub params: Params,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    /// Base sample count: fixed-size estimators use it directly and
    /// escalating ones start from it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub acceptance: Vec<Check>,
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
    #[error("underpowered: {0}")]
    Underpowered(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl ExperimentError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 1,
            ExperimentError::Runtime(_) | ExperimentError::Io { .. } => 2,
            ExperimentError::Underpowered(_) => 3,
        }
    }
}

impl From<KernelError> for ExperimentError {
    fn from(e: KernelError) -> Self {
        match e {
            KernelError::Precondition(_) | KernelError::InvalidParameter(_) | KernelError::Domain(_) => {
                ExperimentError::Config(e.to_string())
            }
            _ => ExperimentError::Runtime(e.to_string()),
        }
    }
}

impl From<SamplerError> for ExperimentError {
    fn from(e: SamplerError) -> Self {
        match e {
            SamplerError::Kernel(k) => k.into(),
            SamplerError::Config(_) | SamplerError::Capability(_) | SamplerError::Domain(_) => {
                ExperimentError::Config(e.to_string())
            }
            SamplerError::Stall { .. } => ExperimentError::Runtime(e.to_string()),
        }
    }
}

impl From<EstimationError> for ExperimentError {
    fn from(e: EstimationError) -> Self {
        match e {
            EstimationError::Sampler(s) => s.into(),
            EstimationError::Precondition(_) => ExperimentError::Config(e.to_string()),
            EstimationError::Unreliable { .. } => ExperimentError::Runtime(e.to_string()),
        }
    }
}

impl From<BhpError> for ExperimentError {
    fn from(e: BhpError) -> Self {
        match e {
            BhpError::Estimation(e) => e.into(),
            BhpError::Kernel(k) => k.into(),
            BhpError::Precondition(_) => ExperimentError::Config(e.to_string()),
            BhpError::Underpowered(msg) => ExperimentError::Underpowered(msg),
        }
    }
}

fn config_err(msg: impl Into<String>) -> ExperimentError {
    ExperimentError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        serde_json::from_str(text).map_err(|e| config_err(format!("invalid config JSON: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(|source| ExperimentError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Fills every parameter the experiment kind reads with its default and
    /// checks that the config is runnable.
    pub fn resolve(mut self) -> Result<Self, ExperimentError> {
        let kind = self.kind.ok_or_else(|| config_err("experiment kind is not set"))?;
        let model = ProcessModel::new(self.model.clone())?;
        let d = model.dim();
        if let Some(domain) = &self.domain {
            domain.validate().map_err(|e| config_err(e.to_string()))?;
            if domain.dim() != d {
                return Err(config_err(format!(
                    "domain is {}-dimensional, model is {d}-dimensional",
                    domain.dim()
                )));
            }
        }
        let needs_domain = !matches!(kind, ExperimentKind::CheckKernel | ExperimentKind::EpCheck);
        if needs_domain && self.domain.is_none() {
            return Err(config_err(format!("{} needs a domain", kind.name())));
        }
        self.workers = Some(self.workers.unwrap_or(1).max(1));
        let p = &mut self.params;
        let origin = vec![0.0; d];
        match kind {
            ExperimentKind::CheckKernel => {
                if p.kernel.is_none() {
                    p.kernel = Some(model.kernel()?);
                }
                p.r_range.get_or_insert([1e-3, 1e3]);
                p.points.get_or_insert_with(|| vec![origin.clone()]);
                self.n.get_or_insert(20_000);
            }
            ExperimentKind::ExitStats => {
                let domain = self.domain.as_ref().expect("checked above");
                let x = p.x.get_or_insert_with(|| origin.clone());
                if !domain.contains(x) {
                    return Err(config_err("start point x lies outside the domain"));
                }
                p.targets.get_or_insert_with(Vec::new);
                self.n.get_or_insert(100_000);
            }
            ExperimentKind::EpCheck => {
                if matches!(self.model, ModelSpec::IsotropicStable { .. }) && p.sde_fallback != Some(true) {
                    return Err(config_err(
                        "ep-check on the isotropic model needs params.sde_fallback = true",
                    ));
                }
                p.x.get_or_insert_with(|| origin.clone());
                p.r_series.get_or_insert_with(|| vec![0.25, 1.0, 4.0]);
                p.t_fracs.get_or_insert_with(|| log_grid(1e-3, 1e-1, 5));
                p.monitor_steps.get_or_insert(MONITOR_STEPS);
                self.n.get_or_insert(20_000);
            }
            ExperimentKind::BhpScan => {
                p.xi.get_or_insert_with(|| origin.clone());
                if p.r_series.is_none() {
                    p.r_series = Some(vec![p.r.unwrap_or(0.5)]);
                }
                p.kappa.get_or_insert(1.0);
                p.grid.get_or_insert(12);
                p.target_rel.get_or_insert(0.02);
                p.cap.get_or_insert(1 << 18);
                p.gate.get_or_insert(0.05);
                if p.data.is_none() {
                    let mut normal = vec![0.0; d];
                    normal[d - 1] = 1.0;
                    p.data = Some(DataPair::Halves { normal });
                }
                self.n.get_or_insert(4096);
            }
            ExperimentKind::Factorization => {
                p.xi.get_or_insert_with(|| origin.clone());
                if p.r_series.is_none() {
                    p.r_series = Some(vec![p.r.unwrap_or(0.5)]);
                }
                p.c.get_or_insert([0.5, 1.5, 2.0 / 3.0]);
                p.grid.get_or_insert(12);
                p.target_rel.get_or_insert(0.02);
                p.cap.get_or_insert(1 << 18);
                p.gate.get_or_insert(0.05);
                self.n.get_or_insert(4096);
            }
            ExperimentKind::BoxMethod => {
                p.xi.get_or_insert_with(|| origin.clone());
                if p.r_series.is_none() {
                    p.r_series = Some(vec![p.r.unwrap_or(0.5)]);
                }
                p.j_max.get_or_insert(6);
                p.grid.get_or_insert(24);
                p.target_rel.get_or_insert(0.05);
                p.cap.get_or_insert(1 << 16);
                p.gate.get_or_insert(0.1);
                self.n.get_or_insert(4096);
            }
            ExperimentKind::ChainDecay => {
                let xi = p.xi.get_or_insert_with(|| origin.clone()).clone();
                let r = *p.r.get_or_insert(1.0);
                p.x.get_or_insert_with(|| {
                    let mut x = xi.clone();
                    x[0] -= r / 4.0;
                    x[d - 1] += r / 4.0;
                    x
                });
                p.steps.get_or_insert(8);
                self.n.get_or_insert(100_000);
            }
        }
        if let Some(rs) = &p.r_series {
            if rs.is_empty() || rs.iter().any(|r| !(*r > 0.0)) {
                return Err(config_err("r-series must be a non-empty list of positive radii"));
            }
        }
        for pt in [&p.x, &p.xi].into_iter().flatten() {
            if pt.len() != d {
                return Err(config_err(format!("point {pt:?} is not {d}-dimensional")));
            }
        }
        if self.n == Some(0) {
            return Err(config_err("n must be positive"));
        }
        Ok(self)
    }

    fn precision(&self) -> Precision {
        let p = &self.params;
        let n0 = self.n.unwrap_or(4096);
        Precision {
            n0,
            cap: p.cap.unwrap_or(n0).max(n0),
            target_rel: p.target_rel.unwrap_or(0.0),
        }
    }
}

/// Outcome of a check against the report metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub metric: String,
    pub value: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub pass: bool,
}

pub fn evaluate_checks(checks: &[Check], metrics: &BTreeMap<String, f64>) -> Vec<CheckOutcome> {
    checks
        .iter()
        .map(|c| {
            let value = metrics.get(&c.metric).copied();
            let pass = value.is_some_and(|v| c.min.is_none_or(|lo| v >= lo) && c.max.is_none_or(|hi| v <= hi));
            CheckOutcome {
                metric: c.metric.clone(),
                value,
                min: c.min,
                max: c.max,
                pass,
            }
        })
        .collect()
}

/// A finished run: the JSON report plus optional CSV side outputs.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: Value,
    pub csv: Vec<(String, String)>,
}

struct Collected {
    result: Value,
    metrics: BTreeMap<String, f64>,
    warnings: Vec<String>,
    csv: Vec<(String, String)>,
}

impl Collected {
    fn new() -> Self {
        Self {
            result: Value::Null,
            metrics: BTreeMap::new(),
            warnings: Vec::new(),
            csv: Vec::new(),
        }
    }

    fn metric(&mut self, name: impl Into<String>, v: f64) {
        if v.is_finite() {
            self.metrics.insert(name.into(), v);
        }
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

fn spread(v: &[f64]) -> f64 {
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    hi / lo
}

fn verdict_flag(v: Verdict) -> f64 {
    match v {
        Verdict::HoldsNumerically => 1.0,
        Verdict::Violated => 0.0,
        Verdict::Inconclusive => 0.5,
    }
}

fn run_check_kernel(cfg: &ExperimentConfig, key: StreamKey, out: &mut Collected) -> Result<(), ExperimentError> {
    let p = &cfg.params;
    let j = p.kernel.clone().expect("resolved");
    j.validate()?;
    let [lo, hi] = p.r_range.expect("resolved");
    let decades = (hi / lo).log10();
    let grid = log_grid(lo, hi, (10.0 * decades).ceil() as usize + 1);
    let points = p.points.clone().expect("resolved");
    let n = cfg.n.expect("resolved");
    let mut reports: Vec<ConditionReport> = Vec::new();
    let jt = check_jt(&j, &j.scale, &grid, &points, JtOptions::default())?;
    for (name, value) in &jt.constants {
        out.metric(format!("jt.{name}"), *value);
    }
    out.metric("jt.holds", verdict_flag(jt.verdict));
    reports.push(jt);
    let jc1 = check_jc1(&j, &Jc1Config::new(n, 1.0, key.tagged("jc1")))?;
    out.metric("jc1.holds", verdict_flag(jc1.verdict));
    reports.push(jc1);
    let jphi = check_jphi(
        &j,
        &j.scale,
        &JphiConfig {
            samples: n,
            r_min: lo,
            r_max: hi,
            spread: 4.0,
            ratio_cap: 100.0,
            stream: key.tagged("jphi"),
        },
    )?;
    out.metric("jphi.holds", verdict_flag(jphi.verdict));
    reports.push(jphi);
    let phi_grid = if decades >= 4.0 {
        grid.clone()
    } else {
        log_grid(lo, lo * 1e4, 41)
    };
    let phi = check_phi(&j.scale, &phi_grid, PhiOptions::default())?;
    out.metric("phi.doubling.holds", verdict_flag(phi.doubling.verdict));
    if let Some(rev) = &phi.reverse_doubling {
        out.metric("phi.reverse_doubling.holds", verdict_flag(rev.verdict));
    }
    reports.push(phi.doubling);
    reports.extend(phi.reverse_doubling);
    out.result = json!({ "kernel": to_value(&j), "conditions": to_value(&reports) });
    Ok(())
}

fn run_exit_stats(
    cfg: &ExperimentConfig,
    model: &ProcessModel,
    key: StreamKey,
    out: &mut Collected,
) -> Result<(), ExperimentError> {
    let p = &cfg.params;
    let domain = cfg.domain.as_ref().expect("resolved");
    let x = p.x.as_ref().expect("resolved");
    let n = cfg.n.expect("resolved");
    let targets = p.targets.clone().expect("resolved");
    let probs = if targets.is_empty() {
        Vec::new()
    } else {
        harmonic_measure_family(model, domain, x, &targets, n, key.tagged("harmonic"))?
    };
    for (i, e) in probs.iter().enumerate() {
        out.metric(format!("p.{i}"), e.value);
        out.warnings.extend(stall_warning(e));
    }
    let tau = if domain.bounding_radius().is_some() {
        let e = mean_exit_time(model, domain, x, n, key.tagged("tau"))?;
        out.metric("mean_exit", e.value);
        out.metric("mean_exit.stderr", e.stderr);
        out.warnings.extend(stall_warning(&e));
        Some(e)
    } else {
        None
    };
    out.result =
        json!({ "targets": to_value(&targets), "probabilities": to_value(&probs), "mean_exit": to_value(&tau) });
    Ok(())
}

/// The model with its time step refined to `t/steps` when it is time-stepped.
fn stepped_for(model: &ProcessModel, t: f64, steps: u64) -> Result<ProcessModel, ExperimentError> {
    let mut spec = model.spec().clone();
    match &mut spec {
        ModelSpec::SdeStable { dt, .. } | ModelSpec::GeometricStable { dt, .. } => *dt = dt.min(t / steps as f64),
        _ => return Ok(model.clone()),
    }
    Ok(ProcessModel::new(spec)?)
}

fn run_ep_check(
    cfg: &ExperimentConfig,
    model: &ProcessModel,
    key: StreamKey,
    out: &mut Collected,
) -> Result<(), ExperimentError> {
    let p = &cfg.params;
    let x = p.x.as_ref().expect("resolved");
    let n = cfg.n.expect("resolved");
    let steps = p.monitor_steps.expect("resolved");
    let phi = model.scale_function();
    let ep = |r: f64, t: f64, key: StreamKey| -> Result<_, ExperimentError> {
        Ok(ep_normalized(&stepped_for(model, t, steps)?, x, r, t, n, key)?)
    };
    let mut rows = Vec::new();
    let mut worst = f64::NEG_INFINITY;
    for (i, &r) in p.r_series.as_ref().expect("resolved").iter().enumerate() {
        let phi_r = phi.eval(r).map_err(SamplerError::from)?;
        for (k, &frac) in p.t_fracs.as_ref().expect("resolved").iter().enumerate() {
            let t = frac * phi_r;
            let (prob, scaled) = ep(r, t, key.child(i as u64).child(k as u64))?;
            worst = worst.max(scaled.value);
            rows.push(json!({ "r": r, "t": t, "prob": to_value(&prob), "normalized": to_value(&scaled) }));
        }
    }
    out.metric("ep.max", worst);
    let collapse = if let Some(alpha) = phi.alpha() {
        // P(τ_{B(x,2r)} < 2^α t) = P(τ_{B(x,r)} < t) under exact self-similarity
        let a = ep(1.0, 1.0, key.tagged("collapse-a"))?.0;
        let b = ep(2.0, 2f64.powf(alpha), key.tagged("collapse-b"))?.0;
        out.metric("ep.collapse_z", a.z_distance(&b));
        json!({ "unit": to_value(&a), "doubled": to_value(&b) })
    } else {
        Value::Null
    };
    out.result = json!({ "rows": rows, "collapse": collapse });
    Ok(())
}

fn data_for(pair: &DataPair, xi: &[f64], r: f64) -> (BoundaryData, BoundaryData) {
    match pair {
        DataPair::Halves { normal } => (
            BoundaryData::far_half(xi, r, normal.clone()),
            BoundaryData::far_half(xi, r, normal.iter().map(|v| -v).collect()),
        ),
        DataPair::Explicit { g1, g2 } => (g1.clone(), g2.clone()),
    }
}

fn scan_csv(rep: &BhpReport) -> String {
    let mut buf = Vec::new();
    rep.write_csv(&mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("csv is utf-8")
}

fn run_bhp_scan(
    cfg: &ExperimentConfig,
    model: &ProcessModel,
    key: StreamKey,
    out: &mut Collected,
) -> Result<(), ExperimentError> {
    let p = &cfg.params;
    let domain = cfg.domain.as_ref().expect("resolved");
    let xi = p.xi.as_ref().expect("resolved");
    let radii = p.r_series.as_ref().expect("resolved");
    let pair = p.data.as_ref().expect("resolved");
    let scan = ScanConfig {
        grid_points: p.grid.expect("resolved"),
        precision: cfg.precision(),
        gate: p.gate.expect("resolved"),
        ..ScanConfig::default()
    };
    let series = bhp_series(
        model,
        domain,
        xi,
        radii,
        p.kappa.expect("resolved"),
        |r| data_for(pair, xi, r),
        &scan,
        key,
    )?;
    for (i, rep) in series.reports.iter().enumerate() {
        out.metric(format!("c_hat.{i}"), rep.c_hat);
        out.metric(format!("powered.{i}"), rep.powered_points as f64);
        if rep.capped_points > 0 {
            out.warnings.push(format!(
                "r = {}: {} grid points hit the sample cap",
                rep.r, rep.capped_points
            ));
        }
        out.warnings.extend(rep.note.clone());
        out.csv.push((format!("bhp-scan-r{i}.csv"), scan_csv(rep)));
    }
    out.metric(
        "c_hat.max",
        series.c_hat.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    out.metric("c_hat.spread", series.spread);
    out.metric(
        "powered.min",
        series.reports.iter().map(|r| r.powered_points).min().unwrap_or(0) as f64,
    );
    out.result = to_value(&series);
    Ok(())
}

fn run_factorization(
    cfg: &ExperimentConfig,
    model: &ProcessModel,
    key: StreamKey,
    out: &mut Collected,
) -> Result<(), ExperimentError> {
    let p = &cfg.params;
    let domain = cfg.domain.as_ref().expect("resolved");
    let xi = p.xi.as_ref().expect("resolved");
    let mut reports = Vec::new();
    for (i, &r) in p.r_series.as_ref().expect("resolved").iter().enumerate() {
        let rep = factorization_check(
            model,
            domain,
            xi,
            r,
            p.c.expect("resolved"),
            &BoundaryData::far_field(xi, r),
            p.grid.expect("resolved"),
            cfg.precision(),
            p.gate.expect("resolved"),
            key.child(i as u64),
        )?;
        out.metric(format!("band.{i}"), rep.band);
        out.warnings.extend(rep.note.clone());
        reports.push(rep);
    }
    let bands: Vec<f64> = reports.iter().map(|r| r.band).collect();
    out.metric("band.max", bands.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    out.metric("band.change", spread(&bands) - 1.0);
    out.result = to_value(&reports);
    Ok(())
}

fn run_box_method(
    cfg: &ExperimentConfig,
    model: &ProcessModel,
    key: StreamKey,
    out: &mut Collected,
) -> Result<(), ExperimentError> {
    let p = &cfg.params;
    let domain = cfg.domain.as_ref().expect("resolved");
    let xi = p.xi.as_ref().expect("resolved");
    let phi = model.scale_function();
    let inward = domain_inward(domain, xi);
    let mut boxes = Vec::new();
    let mut ratios = Vec::new();
    for (i, &r) in p.r_series.as_ref().expect("resolved").iter().enumerate() {
        let k = key.child(i as u64);
        let b = box_diagnostics(
            model,
            domain,
            xi,
            r,
            p.j_max.expect("resolved"),
            p.grid.expect("resolved"),
            cfg.precision(),
            p.gate.expect("resolved"),
            k.tagged("box"),
        )?;
        let lambdas: Vec<f64> = b.layers.iter().filter_map(|l| l.lambda).collect();
        if let Some(m) = lambdas.iter().cloned().reduce(f64::min) {
            out.metric(format!("lambda_min.{i}"), m);
        }
        out.warnings.extend(b.note.clone());
        boxes.push(b);
        if let Some(n) = &inward {
            let x: Point = xi.iter().zip(n).map(|(a, b)| a + 0.5 * r * b).collect();
            let s = subdomain_stats(model, domain, xi, r, &x, cfg.n.expect("resolved"), k.tagged("ratio"))?;
            let v = s.survive.value * phi.eval(r).map_err(SamplerError::from)? / s.mean_exit.value;
            out.metric(format!("ratio.{i}"), v);
            ratios.push(json!({ "r": r, "x": x, "stats": to_value(&s), "ratio": v }));
        }
    }
    let all: Vec<f64> = (0..boxes.len())
        .filter_map(|i| out.metrics.get(&format!("lambda_min.{i}")).copied())
        .collect();
    if let Some(m) = all.iter().cloned().reduce(f64::min) {
        out.metric("lambda_min", m);
    }
    let rv: Vec<f64> = ratios.iter().filter_map(|r| r["ratio"].as_f64()).collect();
    if !rv.is_empty() {
        out.metric("ratio.spread", spread(&rv));
    }
    out.result = json!({ "boxes": to_value(&boxes), "exit_ratio": ratios });
    Ok(())
}

/// Inward unit normal at `ξ` for domains where it is well defined.
fn domain_inward(domain: &Domain, xi: &[f64]) -> Option<Point> {
    match domain {
        Domain::HalfSpace { normal, offset } => {
            let on = (crate::geometry::dot(normal, xi) - offset).abs() < 1e-9;
            let len = crate::geometry::norm(normal);
            on.then(|| normal.iter().map(|v| v / len).collect())
        }
        _ => None,
    }
}

fn run_chain_decay(
    cfg: &ExperimentConfig,
    model: &ProcessModel,
    key: StreamKey,
    out: &mut Collected,
) -> Result<(), ExperimentError> {
    let p = &cfg.params;
    let c = chain_decay(
        model,
        cfg.domain.as_ref().expect("resolved"),
        p.xi.as_ref().expect("resolved"),
        p.r.expect("resolved"),
        p.x.as_ref().expect("resolved"),
        p.steps.expect("resolved"),
        cfg.n.expect("resolved"),
        key,
    )?;
    out.metric("rate", c.rate);
    out.metric("rate_upper", c.rate_upper);
    out.metric("decays", c.decays as u8 as f64);
    for (m, e) in c.survival.iter().enumerate() {
        out.metric(format!("survival.{}", m + 1), e.value);
    }
    out.result = to_value(&c);
    Ok(())
}

/// Runs a resolved config on a worker pool of the configured size.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput, ExperimentError> {
    let cfg = cfg.clone().resolve()?;
    let kind = cfg.kind.expect("resolved");
    let model = ProcessModel::new(cfg.model.clone())?;
    let key = StreamKey::new(cfg.seed, 0).tagged(kind.name());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.expect("resolved"))
        .build()
        .map_err(|e| ExperimentError::Runtime(format!("cannot start worker pool: {e}")))?;
    let mut out = Collected::new();
    pool.install(|| match kind {
        ExperimentKind::CheckKernel => run_check_kernel(&cfg, key, &mut out),
        ExperimentKind::ExitStats => run_exit_stats(&cfg, &model, key, &mut out),
        ExperimentKind::EpCheck => run_ep_check(&cfg, &model, key, &mut out),
        ExperimentKind::BhpScan => run_bhp_scan(&cfg, &model, key, &mut out),
        ExperimentKind::Factorization => run_factorization(&cfg, &model, key, &mut out),
        ExperimentKind::BoxMethod => run_box_method(&cfg, &model, key, &mut out),
        ExperimentKind::ChainDecay => run_chain_decay(&cfg, &model, key, &mut out),
    })?;
    let checks = evaluate_checks(&cfg.acceptance, &out.metrics);
    let report = json!({
        "schema": SCHEMA,
        "kind": kind.name(),
        "timestamp": chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
        "seed": cfg.seed,
        "workers": cfg.workers,
        "exactness": to_value(&model.exactness()),
        "config": to_value(&cfg),
        "metrics": to_value(&out.metrics),
        "checks": to_value(&checks),
        "warnings": out.warnings,
        "result": out.result,
    });
    Ok(RunOutput { report, csv: out.csv })
}

/// The report without its timestamp, the canonical form for comparisons.
pub fn strip_timestamp(report: &Value) -> Value {
    let mut v = report.clone();
    if let Some(obj) = v.as_object_mut() {
        obj.remove("timestamp");
    }
    v
}

/// Writes `<kind>-<seed>.json` and any CSV side outputs into `dir`.
pub fn write_outputs(output: &RunOutput, dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ExperimentError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let kind = output.report["kind"].as_str().unwrap_or("report");
    let seed = output.report["seed"].as_u64().unwrap_or(0);
    let stem = format!("{kind}-{seed}");
    let mut written = Vec::new();
    let path = dir.join(format!("{stem}.json"));
    let text = serde_json::to_string_pretty(&output.report).expect("reports serialize");
    fs::write(&path, text + "\n").map_err(io(&path))?;
    written.push(path);
    for (name, body) in &output.csv {
        let path = dir.join(format!("{stem}-{name}"));
        fs::write(&path, body).map_err(io(&path))?;
        written.push(path);
    }
    Ok(written)
}

/// One row of a summary table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub report: String,
    pub kind: String,
    pub check: CheckOutcome,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
    pub failed: usize,
}

/// Re-evaluates each report's declared checks against its metrics.
pub fn summarize(paths: &[PathBuf]) -> Result<Summary, ExperimentError> {
    if paths.is_empty() {
        return Err(config_err("summarize needs at least one report path"));
    }
    let mut rows = Vec::new();
    for path in paths {
        let text = fs::read_to_string(path).map_err(|source| ExperimentError::Io {
            path: path.clone(),
            source,
        })?;
        let report: Value = serde_json::from_str(&text)
            .map_err(|e| config_err(format!("{} is not a JSON report: {e}", path.display())))?;
        if report["schema"] != SCHEMA {
            return Err(config_err(format!("{} does not carry schema {SCHEMA}", path.display())));
        }
        let cfg: ExperimentConfig = serde_json::from_value(report["config"].clone())
            .map_err(|e| config_err(format!("{}: embedded config does not parse: {e}", path.display())))?;
        let metrics: BTreeMap<String, f64> = serde_json::from_value(report["metrics"].clone())
            .map_err(|e| config_err(format!("{}: metrics table does not parse: {e}", path.display())))?;
        let kind = report["kind"].as_str().unwrap_or("?").to_string();
        for check in evaluate_checks(&cfg.acceptance, &metrics) {
            rows.push(SummaryRow {
                report: path.display().to_string(),
                kind: kind.clone(),
                check,
            });
        }
    }
    let failed = rows.iter().filter(|r| !r.check.pass).count();
    Ok(Summary { rows, failed })
}

impl Summary {
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<6} {:<14} {:<28} {:>14} {:>22}  report\n",
            "status", "kind", "metric", "value", "range"
        );
        for r in &self.rows {
            let c = &r.check;
            let bound = |b: Option<f64>| b.map_or("·".to_string(), |v| format!("{v}"));
            s.push_str(&format!(
                "{:<6} {:<14} {:<28} {:>14} {:>22}  {}\n",
                if c.pass { "PASS" } else { "FAIL" },
                r.kind,
                c.metric,
                c.value.map_or("missing".to_string(), |v| format!("{v:.6}")),
                format!("[{}, {}]", bound(c.min), bound(c.max)),
                r.report
            ));
        }
        s.push_str(&format!("{} checks, {} failed\n", self.rows.len(), self.failed));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exit_cfg() -> ExperimentConfig {
        ExperimentConfig::from_json(
            r#"{
                "kind": "exit-stats",
                "model": {"kind": "isotropic-stable", "alpha": 1.0, "dim": 1},
                "domain": {"kind": "ball", "center": [0.0], "radius": 1.0},
                "params": {"targets": [{"kind": "half-space", "normal": [1.0], "offset": 0.0}]},
                "n": 4096,
                "acceptance": [{"metric": "p.0", "min": 0.45, "max": 0.55}]
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn config_round_trips() {
        let cfg = exit_cfg().resolve().unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.clone().resolve().unwrap(), cfg);
    }

    #[test]
    fn unknown_fields_are_config_errors() {
        let e = ExperimentConfig::from_json(
            r#"{"model": {"kind": "isotropic-stable", "alpha": 1.0, "dim": 1}, "bogus": 1}"#,
        )
        .unwrap_err();
        assert_eq!(e.exit_code(), 1);
        let e = ExperimentConfig::from_json(
            r#"{"kind": "nonsense", "model": {"kind": "isotropic-stable", "alpha": 1.0, "dim": 1}}"#,
        )
        .unwrap_err();
        assert_eq!(e.exit_code(), 1);
    }

    #[test]
    fn report_carries_schema_config_and_checks() {
        let out = run_experiment(&exit_cfg()).unwrap();
        let r = &out.report;
        assert_eq!(r["schema"], SCHEMA);
        assert_eq!(r["seed"], 0);
        assert_eq!(r["workers"], 1);
        assert_eq!(r["config"]["params"]["x"], json!([0.0]));
        assert_eq!(r["checks"][0]["pass"], true);
        let mean = r["metrics"]["mean_exit"].as_f64().unwrap();
        assert!((mean - 1.0).abs() < 0.1);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let mut a = exit_cfg();
        a.workers = Some(1);
        let mut b = exit_cfg();
        b.workers = Some(3);
        let ra = run_experiment(&a).unwrap().report;
        let rb = run_experiment(&b).unwrap().report;
        assert_eq!(ra["metrics"], rb["metrics"]);
        assert_eq!(ra["result"], rb["result"]);
    }

    #[test]
    fn ep_check_on_walk_needs_fallback() {
        let mut cfg = exit_cfg();
        cfg.kind = Some(ExperimentKind::EpCheck);
        let e = run_experiment(&cfg).unwrap_err();
        assert_eq!(e.exit_code(), 1);
    }

    #[test]
    fn check_kernel_reports_exact_constants() {
        let cfg = ExperimentConfig::from_json(
            r#"{
                "kind": "check-kernel",
                "model": {"kind": "isotropic-stable", "alpha": 1.0, "dim": 1},
                "params": {"kernel": {"dim": 1, "kappa": {"kind": "constant", "value": 1.0},
                           "scale": {"form": {"kind": "power", "alpha": 1.0}}}},
                "n": 2000
            }"#,
        )
        .unwrap();
        let r = run_experiment(&cfg).unwrap().report;
        let c4 = r["metrics"]["jt.C4"].as_f64().unwrap();
        let c5 = r["metrics"]["jt.C5"].as_f64().unwrap();
        assert!((c4 - 2.0).abs() < 1e-5 && (c5 - 2.0).abs() < 1e-5);
    }

    #[test]
    fn error_classes_map_to_exit_codes() {
        let stall = EstimationError::Unreliable { stalls: 10, n: 20 };
        assert_eq!(ExperimentError::from(stall).exit_code(), 2);
        let weak = BhpError::Underpowered("no powered points".into());
        assert_eq!(ExperimentError::from(weak).exit_code(), 3);
        let cap = SamplerError::Capability("no kernel".into());
        assert_eq!(ExperimentError::from(cap).exit_code(), 1);
    }

    #[test]
    fn summarize_rejects_empty_lists() {
        assert_eq!(summarize(&[]).unwrap_err().exit_code(), 1);
    }
}
