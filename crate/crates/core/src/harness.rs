//! Closed-loop experiment runner.
//!
//! Each step runs: select control, build regressor, step plant, linearize the
//! observation, denoise it, update the posterior, log metrics. Replicas are
//! independent and run in parallel; within a replica the loop is sequential.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::control::{select_control, StrategyKind, StrategySpec};
use crate::dynamics::{build_regressor, linearize_observation, stack_parameters, step, History, ModelSpec};
use crate::error::{Error, Result};
use crate::estimator::PosteriorState;

/// Environment variable capping replica parallelism.
pub const THREADS_ENV: &str = "ACTIVE_SYSID_THREADS";

/// Metrics recorded after one post-warm-up step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// Time index of the observation `r_t`.
    pub t: usize,
    /// Control `u_t` that entered this step.
    pub u: Vec<f64>,
    pub r: Vec<f64>,
    pub y: Vec<f64>,
    /// `‖A_true − M_t‖_F` after absorbing step `t`.
    pub param_error: f64,
    /// `‖e_t − ê_t‖₂`.
    pub noise_error: f64,
    #[serde(rename = "logdetK")]
    pub logdet_k: f64,
    #[serde(rename = "logdetQ")]
    pub logdet_q: f64,
    pub joint_entropy: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaTrace {
    pub replica: usize,
    /// `‖A_true − M_0‖_F`.
    pub initial_param_error: f64,
    pub records: Vec<TraceRecord>,
    /// Set when the replica aborted early.
    pub failure: Option<String>,
}

impl ReplicaTrace {
    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    /// Latest record with `t ≤ checkpoint`.
    pub fn at(&self, checkpoint: usize) -> Option<&TraceRecord> {
        self.records.iter().rev().find(|r| r.t <= checkpoint)
    }
}

/// SplitMix64 finalizer; derives independent stream seeds from the root seed.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn noise_seed(root: u64, replica: usize) -> u64 {
    mix(mix(root) ^ (replica as u64).wrapping_mul(2).wrapping_add(1))
}

pub fn strategy_seed(root: u64, strategy_seed: u64, replica: usize) -> u64 {
    mix(mix(root ^ mix(strategy_seed)) ^ (replica as u64).wrapping_mul(2).wrapping_add(2))
}

fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

fn par_map<T: Send, F: Fn(usize) -> T + Sync + Send>(n: usize, f: F) -> Vec<T> {
    match thread_cap() {
        Some(threads) => match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
            Ok(pool) => pool.install(|| (0..n).into_par_iter().map(&f).collect()),
            Err(_) => (0..n).map(f).collect(),
        },
        None => (0..n).into_par_iter().map(f).collect(),
    }
}

/// Run every replica of `cfg`; traces come back in replica order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ReplicaTrace>> {
    cfg.validate()?;
    let model = cfg.model.build()?;
    Ok(par_map(cfg.replicas, |r| run_replica(cfg, &model, r)))
}

/// One closed-loop run. Failures end the trace and are reported in `failure`.
pub fn run_replica(cfg: &ExperimentConfig, model: &ModelSpec, replica: usize) -> ReplicaTrace {
    run_replica_with_state(cfg, model, replica).0
}

/// As [`run_replica`], also returning the last posterior reached.
pub fn run_replica_with_state(
    cfg: &ExperimentConfig,
    model: &ModelSpec,
    replica: usize,
) -> (ReplicaTrace, Option<PosteriorState>) {
    let a_true = stack_parameters(model);
    let mut trace = ReplicaTrace { replica, initial_param_error: f64::NAN, records: Vec::new(), failure: None };
    let mut post = match cfg.prior.build(model.d(), model.regressor_dim()) {
        Ok(p) => p.with_refresh_interval(cfg.estimator.refresh_interval),
        Err(e) => {
            trace.failure = Some(format!("prior: {e}"));
            return (trace, None);
        }
    };
    trace.initial_param_error = (&a_true - post.mean()).norm();
    if let Err((k, e)) = closed_loop(cfg, model, &a_true, &mut post, replica, &mut trace.records) {
        trace.failure = Some(format!("step {k}: {e}"));
    }
    (trace, Some(post))
}

/// All replicas with their final posteriors.
pub fn run_experiment_with_states(cfg: &ExperimentConfig) -> Result<Vec<(ReplicaTrace, Option<PosteriorState>)>> {
    cfg.validate()?;
    let model = cfg.model.build()?;
    Ok(par_map(cfg.replicas, |r| run_replica_with_state(cfg, &model, r)))
}

fn closed_loop(
    cfg: &ExperimentConfig,
    model: &ModelSpec,
    a_true: &DMatrix<f64>,
    post: &mut PosteriorState,
    replica: usize,
    records: &mut Vec<TraceRecord>,
) -> std::result::Result<(), (usize, Error)> {
    let mut noise_rng = ChaCha8Rng::seed_from_u64(noise_seed(cfg.seed, replica));
    let mut control_rng = ChaCha8Rng::seed_from_u64(strategy_seed(cfg.seed, cfg.strategy.seed, replica));
    let mut hist = History::new(model);
    let warmup = model.warmup_steps();
    for k in 0..cfg.horizon {
        let at = |e| (k, e);
        let u = if k < warmup {
            DVector::zeros(model.c())
        } else {
            select_control(&cfg.strategy, post, &hist, k, &mut control_rng).map_err(at)?
        };
        let x = build_regressor(&hist, &u).map_err(at)?;
        let (r, e) = step(model, &hist, &u, &mut noise_rng).map_err(at)?;
        let y = linearize_observation(model, &r).map_err(at)?;
        let e_hat = post.estimate_noise_with(&x, &y, cfg.estimator.noise_timing).map_err(at)?;
        let (next, diag) = post.update(&x, &y).map_err(at)?;
        *post = next;
        if k >= warmup {
            let record = TraceRecord {
                t: k + 1,
                u: u.as_slice().to_vec(),
                r: r.as_slice().to_vec(),
                y: y.as_slice().to_vec(),
                param_error: (a_true - post.mean()).norm(),
                noise_error: (&e - &e_hat).norm(),
                logdet_k: post.logdet_precision().map_err(at)?,
                logdet_q: post.logdet_scatter().map_err(at)?,
                joint_entropy: diag.entropy_after,
                gamma: diag.gamma,
            };
            if ![record.param_error, record.noise_error, record.logdet_k, record.logdet_q, record.joint_entropy]
                .iter()
                .all(|v| v.is_finite())
            {
                return Err(at(Error::Numerical("non-finite metric".into())));
            }
            records.push(record);
        }
        hist.push(r, u);
    }
    Ok(())
}

/// Trace columns for `c` controls and `d` units.
pub fn trace_header(c: usize, d: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((0..c).map(|i| format!("u_{i}")));
    h.extend((0..d).map(|i| format!("r_{i}")));
    h.extend((0..d).map(|i| format!("y_{i}")));
    h.extend(
        ["param_error", "noise_error", "logdetK", "logdetQ", "joint_entropy", "gamma"]
            .iter()
            .map(|s| s.to_string()),
    );
    h
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// CSV with one row per record.
pub fn write_trace_csv<W: Write>(records: &[TraceRecord], c: usize, d: usize, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trace_header(c, d)).map_err(csv_err)?;
    for rec in records {
        let mut row = vec![rec.t.to_string()];
        row.extend(rec.u.iter().chain(&rec.r).chain(&rec.y).map(f64::to_string));
        row.extend(
            [rec.param_error, rec.noise_error, rec.logdet_k, rec.logdet_q, rec.joint_entropy, rec.gamma]
                .iter()
                .map(f64::to_string),
        );
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Open-loop rollout record.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutRecord {
    pub t: usize,
    pub u: DVector<f64>,
    pub r: DVector<f64>,
    pub e: DVector<f64>,
}

/// Plant rollout without estimation. Controls come from the configured
/// strategy when it is open-loop (`zero`, `random`), otherwise uniform random.
pub fn simulate_open_loop(cfg: &ExperimentConfig, replica: usize) -> Result<Vec<RolloutRecord>> {
    cfg.validate()?;
    let model = cfg.model.build()?;
    let strategy = match cfg.strategy.kind {
        StrategyKind::Zero | StrategyKind::Random => cfg.strategy,
        _ => StrategySpec { kind: StrategyKind::Random, ..cfg.strategy },
    };
    let mut noise_rng = ChaCha8Rng::seed_from_u64(noise_seed(cfg.seed, replica));
    let mut control_rng = ChaCha8Rng::seed_from_u64(strategy_seed(cfg.seed, strategy.seed, replica));
    let mut hist = History::new(&model);
    let mut out = Vec::with_capacity(cfg.horizon);
    for k in 0..cfg.horizon {
        let u = match strategy.kind {
            StrategyKind::Random if k >= model.warmup_steps() => {
                strategy.domain.sample_uniform(model.c(), &mut control_rng)
            }
            _ => DVector::zeros(model.c()),
        };
        let (r, e) = step(&model, &hist, &u, &mut noise_rng)?;
        hist.push(r.clone(), u.clone());
        out.push(RolloutRecord { t: k + 1, u, r, e });
    }
    Ok(out)
}

pub fn write_rollout_csv<W: Write>(records: &[RolloutRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let (c, d) = records.first().map_or((0, 0), |r| (r.u.len(), r.r.len()));
    let mut header = vec!["t".to_string()];
    header.extend((0..c).map(|i| format!("u_{i}")));
    header.extend((0..d).map(|i| format!("r_{i}")));
    header.extend((0..d).map(|i| format!("e_{i}")));
    w.write_record(&header).map_err(csv_err)?;
    for rec in records {
        let mut row = vec![rec.t.to_string()];
        row.extend(rec.u.iter().chain(rec.r.iter()).chain(rec.e.iter()).map(f64::to_string));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Median and quartiles across replicas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

/// Linear-interpolation quantile of unsorted data.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Self {
        Self { median: quantile(values, 0.5), q25: quantile(values, 0.25), q75: quantile(values, 0.75) }
    }
}

/// strategy label → checkpoint → metric → quartiles.
pub type Summary = BTreeMap<String, BTreeMap<String, BTreeMap<String, Quartiles>>>;

pub const SUMMARY_METRICS: [&str; 2] = ["param_error", "noise_error"];

/// Checkpoints `{T/4, T/2, T}`.
pub fn checkpoints(horizon: usize) -> Vec<usize> {
    let mut cps = vec![horizon / 4, horizon / 2, horizon];
    cps.dedup();
    cps
}

/// Quartiles of each metric at each checkpoint, over replicas that reached it.
pub fn summarize(traces: &[ReplicaTrace], horizon: usize) -> BTreeMap<String, BTreeMap<String, Quartiles>> {
    let mut out = BTreeMap::new();
    for cp in checkpoints(horizon) {
        let at: Vec<&TraceRecord> = traces.iter().filter_map(|tr| tr.at(cp)).collect();
        if at.is_empty() {
            continue;
        }
        let mut metrics = BTreeMap::new();
        metrics.insert("param_error".into(), Quartiles::of(&at.iter().map(|r| r.param_error).collect::<Vec<_>>()));
        metrics.insert("noise_error".into(), Quartiles::of(&at.iter().map(|r| r.noise_error).collect::<Vec<_>>()));
        out.insert(cp.to_string(), metrics);
    }
    out
}

/// Run configurations that differ only in strategy and summarize each.
pub fn compare_strategies(cfgs: &[ExperimentConfig]) -> Result<Summary> {
    let first = cfgs
        .first()
        .ok_or_else(|| Error::InvalidParameter("compare needs at least one configuration".into()))?;
    for (i, c) in cfgs.iter().enumerate().skip(1) {
        let mismatch = |what: &str| Error::Config {
            path: format!("strategies.{i}"),
            message: format!("{what} differs from the first configuration"),
        };
        if c.model != first.model {
            return Err(mismatch("model"));
        }
        if c.seed != first.seed || c.replicas != first.replicas || c.horizon != first.horizon {
            return Err(mismatch("seed, replicas or horizon"));
        }
        if c.prior != first.prior || c.estimator != first.estimator {
            return Err(mismatch("prior or estimator"));
        }
    }
    let mut summary = Summary::new();
    for cfg in cfgs {
        let traces = run_experiment(cfg)?;
        let mut label = cfg.strategy.label();
        let mut n = 2;
        while summary.contains_key(&label) {
            label = format!("{}#{n}", cfg.strategy.label());
            n += 1;
        }
        summary.insert(label, summarize(&traces, cfg.horizon));
    }
    Ok(summary)
}

/// Configurations for `compare`: `cfg.strategies`, or a default line-up.
pub fn comparison_configs(cfg: &ExperimentConfig) -> Vec<ExperimentConfig> {
    let tau = cfg.strategy.tau.unwrap_or(cfg.horizon / 4);
    let domain = cfg.strategy.domain;
    let lineup: Vec<StrategySpec> = if cfg.strategies.is_empty() {
        vec![
            StrategySpec::new(StrategyKind::Infomax),
            StrategySpec::new(StrategyKind::NoiseOptimal),
            StrategySpec::new(StrategyKind::TauInfomax).with_tau(tau),
            StrategySpec::new(StrategyKind::TauZero).with_tau(tau),
            StrategySpec::new(StrategyKind::Random),
            StrategySpec::new(StrategyKind::Zero),
        ]
        .into_iter()
        .map(|s| s.with_domain(domain))
        .collect()
    } else {
        cfg.strategies.clone()
    };
    lineup.into_iter().map(|strategy| ExperimentConfig { strategy, ..cfg.clone() }).collect()
}

/// Configurations for the noise study: noise-optimal and both switching heuristics.
pub fn noise_study_configs(cfg: &ExperimentConfig) -> Vec<ExperimentConfig> {
    let tau = cfg.strategy.tau.unwrap_or(cfg.horizon / 4);
    [
        StrategySpec::new(StrategyKind::NoiseOptimal),
        StrategySpec::new(StrategyKind::TauInfomax).with_tau(tau),
        StrategySpec::new(StrategyKind::TauZero).with_tau(tau),
    ]
    .into_iter()
    .map(|s| ExperimentConfig { strategy: s.with_domain(cfg.strategy.domain), ..cfg.clone() })
    .collect()
}

pub fn summary_json(summary: &Summary) -> String {
    serde_json::to_string_pretty(summary).expect("summary serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.horizon = 60;
        cfg.replicas = 2;
        cfg.model.generator.d = 2;
        cfg.model.generator.c = 1;
        cfg
    }

    #[test]
    fn quantiles() {
        let v = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert!((quantile(&v, 0.25) - 1.75).abs() < 1e-15);
        assert!(quantile(&[], 0.5).is_nan());
    }

    #[test]
    fn empty_trace_when_horizon_is_warmup() {
        let mut cfg = small_cfg();
        cfg.horizon = cfg.warmup_steps();
        let traces = run_experiment(&cfg).unwrap();
        assert!(traces.iter().all(|t| t.records.is_empty() && t.failure.is_none()));
    }

    #[test]
    fn one_record_per_post_warmup_step() {
        let cfg = small_cfg();
        let traces = run_experiment(&cfg).unwrap();
        for tr in &traces {
            assert!(tr.failure.is_none());
            assert_eq!(tr.records.len(), cfg.horizon - cfg.warmup_steps());
            assert_eq!(tr.records.first().unwrap().t, cfg.warmup_steps() + 1);
        }
    }

    #[test]
    fn csv_header_names() {
        let mut buf = Vec::new();
        write_trace_csv(&[], 2, 3, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap().trim_end(),
            "t,u_0,u_1,r_0,r_1,r_2,y_0,y_1,y_2,param_error,noise_error,logdetK,logdetQ,joint_entropy,gamma"
        );
    }

    #[test]
    fn compare_rejects_mismatched_models() {
        let a = small_cfg();
        let mut b = a.clone();
        b.model.seed += 1;
        assert!(compare_strategies(&[a.clone(), b]).is_err());
        let single = compare_strategies(&[a]).unwrap();
        assert_eq!(single.len(), 1);
    }

    #[test]
    fn seeds_are_distinct_streams() {
        assert_ne!(noise_seed(0, 0), noise_seed(0, 1));
        assert_ne!(noise_seed(0, 0), strategy_seed(0, 0, 0));
        assert_ne!(strategy_seed(0, 1, 0), strategy_seed(0, 2, 0));
    }
}
