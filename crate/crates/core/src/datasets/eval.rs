//! Baselines, heldout predictive scoring and recovery summaries.

use std::str::FromStr;

use serde::Serialize;

use super::holdout::{HeldEntry, HoldoutPlan};
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::likelihoods::{ModelHyper, ObservationSet};
use crate::mcmc::{Layout, Sampler, SamplerOptions, Trace, TraceRecord};
use crate::partition::{adjusted_rand_index, AssignmentField, Partition};
use crate::rng::derive_seed;
use crate::special::log_sum_exp;

/// Model variants compared in heldout evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// One partition per source, coupled through the kernel.
    Dependent,
    /// One partition shared by every source.
    Shared,
    /// An unrelated partition for every source.
    Independent,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Dependent => "dependent",
            Method::Shared => "shared",
            Method::Independent => "independent",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dependent" | "mcm" | "ecs" => Ok(Method::Dependent),
            "shared" | "baseline-shared" => Ok(Method::Shared),
            "independent" | "baseline-independent" => Ok(Method::Independent),
            _ => Err(Error::Config(format!("unknown method '{s}'"))),
        }
    }
}

/// A fitted chain: its trace and where each source reads its labels.
#[derive(Debug, Clone)]
pub struct Fit {
    pub trace: Trace,
    pub layout: Layout,
}

fn merge_records(parts: Vec<TraceRecord>) -> TraceRecord {
    let k = parts.len() as f64;
    let mut out = TraceRecord {
        iteration: parts[0].iteration,
        loglik: 0.0,
        log_prior: Default::default(),
        alpha: 0.0,
        kernel: Default::default(),
        cluster_counts: Vec::new(),
        assignments: None,
    };
    let mut rows = Vec::new();
    let mut complete = true;
    for p in parts {
        out.loglik += p.loglik;
        out.log_prior.sticks += p.log_prior.sticks;
        out.log_prior.alpha += p.log_prior.alpha;
        out.alpha += p.alpha / k;
        out.cluster_counts.extend(p.cluster_counts);
        match p.assignments {
            Some(a) => rows.push(a.row(0).to_vec()),
            None => complete = false,
        }
    }
    if complete {
        out.assignments = Some(AssignmentField::from_rows(rows));
    }
    out
}

/// Fits one of the two baselines. Independent chains get derived seeds and
/// are merged record by record (log likelihoods summed, α averaged, one
/// assignment row per source).
pub fn fit_baseline(method: Method, data: &ObservationSet, options: &SamplerOptions) -> Result<Fit> {
    match method {
        Method::Shared => {
            let layout = Layout::shared(data.n_sources());
            let trace = Sampler::new(data.clone(), layout.clone(), KernelSpec::independent(1), options.clone())?.run()?;
            Ok(Fit { trace, layout })
        }
        Method::Independent => {
            let traces = (0..data.n_sources())
                .map(|s| {
                    let opts = SamplerOptions {
                        seed: derive_seed(options.seed, s as u64),
                        ..options.clone()
                    };
                    Sampler::new(data.single(s), Layout::shared(1), KernelSpec::independent(1), opts)?.run()
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Fit {
                trace: merge_traces(traces),
                layout: Layout::dependent(data.n_sources()),
            })
        }
        Method::Dependent => Err(Error::Config("the dependent model is not a baseline".into())),
    }
}

/// Record-wise merge of per-source single-location traces.
pub fn merge_traces(traces: Vec<Trace>) -> Trace {
    let len = traces.iter().map(Trace::len).min().unwrap_or(0);
    let mut its: Vec<_> = traces.iter().map(|t| t.records.iter()).collect();
    let records = (0..len)
        .map(|_| merge_records(its.iter_mut().map(|it| it.next().expect("length checked").clone()).collect()))
        .collect();
    let n_iter = traces.iter().map(|t| t.iteration_times.len()).min().unwrap_or(0);
    let iteration_times = (0..n_iter)
        .map(|i| traces.iter().map(|t| t.iteration_times[i]).sum())
        .collect();
    Trace {
        records,
        sigma_mean: vec![1.0],
        iteration_times,
    }
}

/// Fits any method.
pub fn fit(method: Method, data: &ObservationSet, kernel: &KernelSpec, options: &SamplerOptions) -> Result<Fit> {
    match method {
        Method::Dependent => {
            let layout = Layout::dependent(data.n_sources());
            let trace = Sampler::new(data.clone(), layout.clone(), kernel.clone(), options.clone())?.run()?;
            Ok(Fit { trace, layout })
        }
        _ => fit_baseline(method, data, options),
    }
}

/// Per-entry log of the mean predictive over samples, averaged over entries.
/// `per_sample[e][s]` is the log predictive of entry `e` under sample `s`.
pub fn average_log_predictive(per_sample: &[Vec<f64>]) -> Result<f64> {
    if per_sample.is_empty() {
        return Err(Error::Config("no heldout entries".into()));
    }
    let mut total = 0.0;
    for lp in per_sample {
        if lp.is_empty() {
            return Err(Error::EmptyTrace);
        }
        total += log_sum_exp(lp) - (lp.len() as f64).ln();
    }
    Ok(total / per_sample.len() as f64)
}

/// Heldout log predictive likelihood per entry: for each retained sample the
/// collapsed statistics are rebuilt from `train` under its assignments.
pub fn heldout_log_predictive(
    fit: &Fit,
    train: &ObservationSet,
    held: &[HeldEntry],
    hyper: &ModelHyper,
) -> Result<f64> {
    let snapshots: Vec<&AssignmentField> = fit.trace.records.iter().filter_map(|r| r.assignments.as_ref()).collect();
    if snapshots.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let mut models = train.source_models(hyper);
    let mut per_entry = vec![Vec::with_capacity(snapshots.len()); held.len()];
    for field in snapshots {
        let locs = fit.layout.locations();
        for (s, m) in models.iter_mut().enumerate() {
            m.rebuild(field.row(locs[s]));
        }
        for (e, out) in held.iter().zip(per_entry.iter_mut()) {
            let labels = field.row(locs[e.source]);
            out.push(models[e.source].log_predictive_entry(e.row, e.col, e.value, labels));
        }
    }
    average_log_predictive(&per_entry)
}

/// Mean and standard error (sample sd / √n).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub method: Method,
    pub mean: f64,
    pub stderr: f64,
    pub repeats: usize,
    pub per_repeat: Vec<f64>,
}

/// Score of one method on one repeat of the plan.
pub fn evaluate_repeat(
    method: Method,
    data: &ObservationSet,
    kernel: &KernelSpec,
    options: &SamplerOptions,
    plan: &HoldoutPlan,
    repeat: usize,
) -> Result<f64> {
    let split = plan.split(data, repeat)?;
    let opts = SamplerOptions {
        seed: derive_seed(options.seed, repeat as u64),
        keep_assignments: true,
        ..options.clone()
    };
    let fit = fit(method, &split.train, kernel, &opts)?;
    heldout_log_predictive(&fit, &split.train, &split.held, &options.hyper)
}

/// Sequential evaluation of every method over every repeat.
pub fn evaluate(
    methods: &[Method],
    data: &ObservationSet,
    kernel: &KernelSpec,
    options: &SamplerOptions,
    plan: &HoldoutPlan,
) -> Result<Vec<EvalRow>> {
    plan.validate()?;
    methods
        .iter()
        .map(|&m| {
            let scores = (0..plan.repeats)
                .map(|r| evaluate_repeat(m, data, kernel, options, plan, r))
                .collect::<Result<Vec<_>>>()?;
            Ok(eval_row(m, scores))
        })
        .collect()
}

pub fn eval_row(method: Method, per_repeat: Vec<f64>) -> EvalRow {
    let (mean, stderr) = mean_stderr(&per_repeat);
    EvalRow {
        method,
        mean,
        stderr,
        repeats: per_repeat.len(),
        per_repeat,
    }
}

/// Mean over locations of the ARI between estimated and true labels.
pub fn mean_ari(field: &AssignmentField, truth: &[Vec<usize>]) -> Result<f64> {
    if truth.len() != field.n_locations() {
        return Err(Error::Shape(format!(
            "{} truth rows for {} locations",
            truth.len(),
            field.n_locations()
        )));
    }
    let mut total = 0.0;
    for (row, t) in field.rows().zip(truth) {
        total += adjusted_rand_index(&Partition::from_labels(row), &Partition::from_labels(t))?;
    }
    Ok(total / truth.len() as f64)
}
