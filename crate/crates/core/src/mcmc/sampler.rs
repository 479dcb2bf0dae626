//! The posterior sampler: elliptical slice updates of the function values,
//! slice updates of stick lengths, kernel hyperparameters and α.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dpm::{collapsed_gibbs_dpm, relabel_by_size};
use super::slice::{slice_sample, SliceConfig};
use super::trace::{LogPrior, Trace, TraceRecord};
use crate::error::{Error, Result};
use crate::kernels::{kernel_log_prior, GramMatrix, KernelSpec};
use crate::likelihoods::{ModelHyper, ObservationSet, SourceModel};
use crate::partition::{
    assign_strided, logit, threshold_of_logit, AssignmentField, FunctionMatrix, StickWeights, TruncationConfig,
    DEFAULT_TRUNCATION,
};
use crate::rng::{stream, ChainRng, Stream};
use crate::special::{
    beta_cdf, beta_ln_pdf_parts, beta_quantile, ln_gamma, normal_cdf, normal_quantile, softplus, truncated_mean_above,
    truncated_mean_below,
};

/// Shrinkage steps allowed in one elliptical slice update.
pub const MAX_ESS_SHRINK: usize = 1000;
/// Range of stick lengths produced by the shared-partition initialiser.
pub const INIT_STICK_RANGE: (f64, f64) = (0.02, 0.98);

/// How the function values are swept in each iteration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FSchedule {
    /// One elliptical slice update per object, in order.
    #[default]
    PerObject,
    /// One elliptical slice update of all function values and sticks jointly.
    Global,
    /// Per-object on even iterations, global on odd ones.
    Alternating,
}

impl std::str::FromStr for FSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-object" => Ok(FSchedule::PerObject),
            "global" => Ok(FSchedule::Global),
            "alternating" => Ok(FSchedule::Alternating),
            _ => Err(Error::Config(format!(
                "unknown schedule '{s}' (expected per-object, global or alternating)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Init {
    /// Collapsed Gibbs on a single partition shared by all locations.
    #[default]
    SharedDpm,
    /// A draw from the prior.
    Prior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerOptions {
    pub iterations: usize,
    pub burnin: usize,
    pub thin: usize,
    pub seed: u64,
    /// Number of clusters K, including the overflow cluster.
    pub truncation: usize,
    /// Initial concentration.
    pub alpha: f64,
    pub discount: f64,
    /// Gamma(shape, rate) prior on α.
    pub alpha_prior: (f64, f64),
    pub slice: SliceConfig,
    pub schedule: FSchedule,
    pub update_functions: bool,
    pub update_sticks: bool,
    pub update_kernel: bool,
    pub update_alpha: bool,
    pub init: Init,
    pub dpm_sweeps: usize,
    /// Redraw function values of sticks no object reaches after each kernel
    /// update, which makes the truncated kernel update an exact Gibbs step.
    pub refresh_inactive_sticks: bool,
    /// Follow each kernel update with one in which the whitened functions
    /// stay fixed.
    pub whitened_kernel_update: bool,
    pub check_consistency: bool,
    pub keep_assignments: bool,
    pub hyper: ModelHyper,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        SamplerOptions {
            iterations: 1000,
            burnin: 500,
            thin: 1,
            seed: 0,
            truncation: DEFAULT_TRUNCATION,
            alpha: 1.0,
            discount: 0.0,
            alpha_prior: (1.0, 1.0),
            slice: SliceConfig::default(),
            schedule: FSchedule::PerObject,
            update_functions: true,
            update_sticks: true,
            update_kernel: true,
            update_alpha: true,
            init: Init::SharedDpm,
            dpm_sweeps: 100,
            refresh_inactive_sticks: true,
            whitened_kernel_update: true,
            check_consistency: false,
            keep_assignments: true,
            hyper: ModelHyper::default(),
        }
    }
}

impl SamplerOptions {
    pub fn validate(&self) -> Result<()> {
        if self.burnin >= self.iterations {
            return Err(Error::Config(format!(
                "burn-in ({}) must be smaller than the number of iterations ({})",
                self.burnin, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(Error::Config("thinning interval must be at least 1".into()));
        }
        if !(self.slice.width > 0.0) || self.slice.max_steps == 0 {
            return Err(Error::Config("slice width and step count must be positive".into()));
        }
        if !(self.alpha_prior.0 > 0.0 && self.alpha_prior.1 > 0.0) {
            return Err(Error::Config("alpha prior shape and rate must be positive".into()));
        }
        self.truncation_config().validate()
    }

    pub fn truncation_config(&self) -> TruncationConfig {
        TruncationConfig {
            k: self.truncation,
            alpha: self.alpha,
            discount: self.discount,
        }
    }

    fn checks_enabled(&self) -> bool {
        self.check_consistency || cfg!(feature = "consistency-checks")
    }
}

/// Which location each source is observed at.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    locations: Vec<usize>,
    n_locations: usize,
}

impl Layout {
    pub fn new(locations: Vec<usize>, n_locations: usize) -> Result<Self> {
        if let Some(&bad) = locations.iter().find(|&&l| l >= n_locations) {
            return Err(Error::Shape(format!(
                "source location {bad} outside 0..{n_locations}"
            )));
        }
        Ok(Layout {
            locations,
            n_locations,
        })
    }

    /// Source s at location s.
    pub fn dependent(n_sources: usize) -> Self {
        Layout {
            locations: (0..n_sources).collect(),
            n_locations: n_sources,
        }
    }

    /// Every source at a single location.
    pub fn shared(n_sources: usize) -> Self {
        Layout {
            locations: vec![0; n_sources],
            n_locations: 1,
        }
    }

    pub fn locations(&self) -> &[usize] {
        &self.locations
    }

    pub fn n_locations(&self) -> usize {
        self.n_locations
    }
}

struct Streams {
    functions: ChainRng,
    sticks: ChainRng,
    kernel: ChainRng,
    alpha: ChainRng,
}

/// Chain state plus caches.
pub struct Sampler {
    options: SamplerOptions,
    config: TruncationConfig,
    data: ObservationSet,
    layout: Layout,
    by_location: Vec<Vec<usize>>,
    f: FunctionMatrix,
    sticks: StickWeights,
    kernel: KernelSpec,
    gram: GramMatrix,
    alpha: f64,
    field: AssignmentField,
    models: Vec<Box<dyn SourceModel>>,
    source_ll: Vec<f64>,
    ll_dirty: bool,
    rngs: Streams,
    iteration: usize,
}

/// Shared-partition state: sticks from empirical fractions and function
/// values at truncated-normal means, constant across locations. `labels` must
/// already be ranked (0 = largest block); ranks beyond the truncation join the
/// overflow cluster.
pub fn shared_partition_state(
    labels: &[usize],
    config: &TruncationConfig,
    n_locations: usize,
) -> (StickWeights, FunctionMatrix, Vec<usize>) {
    let ks = config.n_sticks();
    let labels: Vec<usize> = labels.iter().map(|&c| c.min(ks)).collect();
    let mut sizes = vec![0usize; ks + 1];
    for &c in &labels {
        sizes[c] += 1;
    }
    let (lo, hi) = INIT_STICK_RANGE;
    let mut remaining = labels.len();
    let v: Vec<f64> = (0..ks)
        .map(|k| {
            let v = if remaining == 0 || (sizes[k] == 0 && sizes[k..].iter().all(|&s| s == 0)) {
                let (a, b) = config.stick_prior(k, config.alpha);
                a / (a + b)
            } else {
                sizes[k] as f64 / remaining as f64
            };
            remaining -= sizes[k];
            v.clamp(lo, hi)
        })
        .collect();
    let sticks = StickWeights::new(v);
    let mut f = FunctionMatrix::zeros(n_locations, labels.len(), ks);
    for (n, &c) in labels.iter().enumerate() {
        for k in 0..ks {
            let eta = sticks.thresholds()[k];
            let value = if k < c {
                truncated_mean_above(eta)
            } else if k == c {
                truncated_mean_below(eta)
            } else {
                0.0
            };
            f.function_mut(n, k).iter_mut().for_each(|x| *x = value);
        }
    }
    (sticks, f, labels)
}

impl Sampler {
    pub fn new(data: ObservationSet, layout: Layout, kernel: KernelSpec, options: SamplerOptions) -> Result<Self> {
        options.validate()?;
        data.validate()?;
        if layout.locations().len() != data.n_sources() {
            return Err(Error::Shape(format!(
                "layout places {} sources, data has {}",
                layout.locations().len(),
                data.n_sources()
            )));
        }
        if kernel.dim() != layout.n_locations() {
            return Err(Error::Shape(format!(
                "kernel is over {} locations, layout has {}",
                kernel.dim(),
                layout.n_locations()
            )));
        }
        let config = options.truncation_config();
        let gram = kernel.gram()?;
        gram.cholesky()?;
        let t = layout.n_locations();
        let n = data.n_objects();
        let mut by_location = vec![Vec::new(); t];
        for (s, &l) in layout.locations().iter().enumerate() {
            by_location[l].push(s);
        }
        let seed = options.seed;
        let mut init_rng = stream(seed, Stream::Init);
        let (sticks, f) = match options.init {
            Init::Prior => {
                let sticks = StickWeights::sample_prior(&config, config.alpha, &mut init_rng);
                let f = FunctionMatrix::sample_prior(&gram, n, config.n_sticks(), &mut init_rng)?;
                (sticks, f)
            }
            Init::SharedDpm => {
                let mut pooled = data.source_models(&options.hyper);
                // singletons merge readily; a single block rarely splits
                let labels = collapsed_gibbs_dpm(
                    &mut pooled,
                    (0..n).collect(),
                    config.alpha,
                    options.dpm_sweeps,
                    &mut init_rng,
                    |_, _, _| {},
                );
                let (sticks, f, _) = shared_partition_state(&relabel_by_size(&labels), &config, t);
                (sticks, f)
            }
        };
        let field = AssignmentField::compute(&f, &sticks);
        let models = data.source_models(&options.hyper);
        let mut sampler = Sampler {
            alpha: config.alpha,
            config,
            data,
            layout,
            by_location,
            f,
            sticks,
            kernel,
            gram,
            field,
            source_ll: vec![0.0; models.len()],
            models,
            ll_dirty: true,
            rngs: Streams {
                functions: stream(seed, Stream::Functions),
                sticks: stream(seed, Stream::Sticks),
                kernel: stream(seed, Stream::Kernel),
                alpha: stream(seed, Stream::Alpha),
            },
            iteration: 0,
            options,
        };
        sampler.rebuild_models();
        sampler.check("initialisation")?;
        Ok(sampler)
    }

    pub fn options(&self) -> &SamplerOptions {
        &self.options
    }

    pub fn data(&self) -> &ObservationSet {
        &self.data
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn functions(&self) -> &FunctionMatrix {
        &self.f
    }

    pub fn sticks(&self) -> &StickWeights {
        &self.sticks
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn gram(&self) -> &GramMatrix {
        &self.gram
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn assignments(&self) -> &AssignmentField {
        &self.field
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Labels of every object for source `s`.
    pub fn source_labels(&self, s: usize) -> &[usize] {
        self.field.row(self.layout.locations()[s])
    }

    /// Collapsed log likelihood of all sources under the current assignments.
    pub fn loglik(&mut self) -> f64 {
        self.refresh_ll();
        self.source_ll.iter().sum()
    }

    /// Log predictive of one entry of source `s` given the current state.
    pub fn log_predictive_entry(&self, s: usize, row: usize, col: usize, value: f64) -> f64 {
        self.models[s].log_predictive_entry(row, col, value, self.source_labels(s))
    }

    /// Replaces the observations (same shapes) and rebuilds all statistics.
    pub fn replace_data(&mut self, data: ObservationSet) -> Result<()> {
        data.validate()?;
        if data.n_sources() != self.data.n_sources() || data.n_objects() != self.data.n_objects() {
            return Err(Error::Shape("replacement data has a different shape".into()));
        }
        self.models = data.source_models(&self.options.hyper);
        self.data = data;
        self.rebuild_models();
        Ok(())
    }

    /// Sets the full chain state (used by tests and joint-distribution checks).
    pub fn set_state(&mut self, f: FunctionMatrix, sticks: StickWeights, kernel: KernelSpec, alpha: f64) -> Result<()> {
        if f.n_objects() != self.data.n_objects()
            || f.n_locations() != self.layout.n_locations()
            || f.n_sticks() != self.config.n_sticks()
            || sticks.len() != self.config.n_sticks()
            || kernel.dim() != self.layout.n_locations()
        {
            return Err(Error::Shape("state does not match the sampler dimensions".into()));
        }
        let gram = kernel.gram()?;
        gram.cholesky()?;
        self.f = f;
        self.sticks = sticks;
        self.kernel = kernel;
        self.gram = gram;
        self.alpha = alpha;
        self.field = AssignmentField::compute(&self.f, &self.sticks);
        self.rebuild_models();
        Ok(())
    }

    fn rebuild_models(&mut self) {
        for (s, m) in self.models.iter_mut().enumerate() {
            m.rebuild(self.field.row(self.layout.locations[s]));
        }
        self.ll_dirty = true;
        self.refresh_ll();
    }

    fn refresh_ll(&mut self) {
        if self.ll_dirty {
            for (ll, m) in self.source_ll.iter_mut().zip(&self.models) {
                *ll = m.log_marginal();
            }
            self.ll_dirty = false;
        }
    }

    /// Verifies every cache against a full recomputation.
    pub fn check_consistency(&mut self) -> Result<()> {
        let fresh = AssignmentField::compute(&self.f, &self.sticks);
        if fresh != self.field {
            return Err(Error::Numerical("cached assignments differ from recomputation".into()));
        }
        let gram = self.kernel.gram()?;
        if gram.as_slice() != self.gram.as_slice() {
            return Err(Error::Numerical("cached Gram matrix differs from the kernel".into()));
        }
        self.refresh_ll();
        for (s, m) in self.models.iter().enumerate() {
            let full = m.score(self.source_labels(s));
            let tol = 1e-7 * full.abs().max(1.0);
            if (full - m.log_marginal()).abs() > tol || (full - self.source_ll[s]).abs() > tol {
                return Err(Error::Numerical(format!(
                    "source {s}: cached log likelihood {} differs from recomputation {full}",
                    self.source_ll[s]
                )));
            }
        }
        Ok(())
    }

    fn check(&mut self, _after: &str) -> Result<()> {
        if self.options.checks_enabled() {
            self.check_consistency()?;
        }
        Ok(())
    }

    /// One elliptical slice update of all function values of object `n`.
    pub fn ess_update_object(&mut self, n: usize) -> Result<()> {
        let t = self.layout.n_locations();
        let ks = self.config.n_sticks();
        let nl = ks + 1;
        let locations = &self.layout.locations;
        for (s, m) in self.models.iter_mut().enumerate() {
            m.remove(n, self.field.row(locations[s]));
        }
        let mut table = vec![0.0; t * nl];
        for (s, m) in self.models.iter().enumerate() {
            let l = locations[s];
            m.add_predictive(n, self.field.row(l), &mut table[l * nl..(l + 1) * nl]);
        }
        let thresholds = self.sticks.thresholds();
        let loglik = |values: &[f64]| -> f64 {
            (0..t)
                .map(|tau| table[tau * nl + assign_strided(values, tau, t, thresholds)])
                .sum()
        };
        let chol = self.gram.cholesky()?;
        let current = self.f.object(n).to_vec();
        let mut nu = vec![0.0; current.len()];
        let mut z = vec![0.0; t];
        let rng = &mut self.rngs.functions;
        for k in 0..ks {
            z.iter_mut().for_each(|x| *x = rng.sample(StandardNormal));
            chol.mul_into(&z, &mut nu[k * t..(k + 1) * t]);
        }
        let e: f64 = Exp1.sample(rng);
        let level = loglik(&current) - e;
        let mut theta = rng.random::<f64>() * 2.0 * PI;
        let (mut lo, mut hi) = (theta - 2.0 * PI, theta);
        let mut proposal = vec![0.0; current.len()];
        let mut accepted = false;
        for _ in 0..MAX_ESS_SHRINK {
            let (sin, cos) = theta.sin_cos();
            for ((p, &c), &v) in proposal.iter_mut().zip(&current).zip(&nu) {
                *p = c * cos + v * sin;
            }
            if loglik(&proposal) > level {
                accepted = true;
                break;
            }
            if theta < 0.0 {
                lo = theta;
            } else {
                hi = theta;
            }
            theta = lo + (hi - lo) * rng.random::<f64>();
        }
        if !accepted {
            // restore statistics before reporting
            for (s, m) in self.models.iter_mut().enumerate() {
                let l = locations[s];
                m.insert(n, self.field.get(l, n), self.field.row(l));
            }
            return Err(Error::Numerical(format!(
                "elliptical slice update of object {n} exceeded {MAX_ESS_SHRINK} shrinkage steps"
            )));
        }
        let new: Vec<usize> = (0..t).map(|tau| assign_strided(&proposal, tau, t, thresholds)).collect();
        self.f.object_mut(n).copy_from_slice(&proposal);
        for (s, m) in self.models.iter_mut().enumerate() {
            let l = locations[s];
            m.insert(n, new[l], self.field.row(l));
        }
        for (tau, &c) in new.iter().enumerate() {
            self.field.set(tau, n, c);
        }
        self.ll_dirty = true;
        Ok(())
    }

    /// Maps stick `k` to the standard-normal coordinate with the same prior
    /// quantile.
    fn stick_to_normal(&self, k: usize) -> f64 {
        let (a, b) = self.config.stick_prior(k, self.alpha);
        if self.config.discount == 0.0 {
            // Beta(1, α): upper tail (1 - v)^α, kept in log space
            let ln_1mv = -softplus(self.sticks.logits()[k]);
            -normal_quantile((b * ln_1mv).exp().max(f64::MIN_POSITIVE))
        } else {
            normal_quantile(beta_cdf(self.sticks.values()[k], a, b))
        }
    }

    /// Inverse of [`Self::stick_to_normal`], returning the stick's logit.
    fn normal_to_logit(&self, k: usize, u: f64) -> f64 {
        let (a, b) = self.config.stick_prior(k, self.alpha);
        if self.config.discount == 0.0 {
            let ln_1mv = normal_cdf(-u).ln() / b;
            let ln_v = (-ln_1mv.exp_m1()).ln();
            ln_v - ln_1mv
        } else {
            logit(beta_quantile(normal_cdf(u), a, b))
        }
    }

    /// One elliptical slice update of all function values and stick lengths
    /// jointly; sticks are represented by their normal quantile coordinates.
    pub fn ess_global(&mut self) -> Result<()> {
        let t = self.layout.n_locations();
        let ks = self.config.n_sticks();
        let n = self.data.n_objects();
        let chol = self.gram.cholesky()?.clone();
        let cur_f = self.f.as_slice().to_vec();
        let cur_u: Vec<f64> = (0..ks).map(|k| self.stick_to_normal(k)).collect();
        let rng = &mut self.rngs.functions;
        let mut nu_f = vec![0.0; cur_f.len()];
        let mut z = vec![0.0; t];
        for block in nu_f.chunks_mut(t) {
            z.iter_mut().for_each(|x| *x = rng.sample(StandardNormal));
            chol.mul_into(&z, block);
        }
        let nu_u: Vec<f64> = (0..ks).map(|_| rng.sample(StandardNormal)).collect();
        let e: f64 = Exp1.sample(rng);
        let mut theta = rng.random::<f64>() * 2.0 * PI;
        let (mut lo, mut hi) = (theta - 2.0 * PI, theta);

        let mut scratch_f = FunctionMatrix::zeros(t, n, ks);
        let evaluate = |this: &Self, f: &FunctionMatrix, u: &[f64]| -> (StickWeights, AssignmentField, f64) {
            let sticks = StickWeights::from_logits((0..ks).map(|k| this.normal_to_logit(k, u[k])).collect());
            let field = AssignmentField::compute(f, &sticks);
            let ll = this
                .models
                .iter()
                .enumerate()
                .map(|(s, m)| m.score(field.row(this.layout.locations[s])))
                .sum();
            (sticks, field, ll)
        };
        self.refresh_ll();
        let level = self.source_ll.iter().sum::<f64>() - e;
        let mut prop_u = vec![0.0; ks];
        for _ in 0..MAX_ESS_SHRINK {
            let (sin, cos) = theta.sin_cos();
            for ((p, &c), &v) in scratch_f.as_mut_slice().iter_mut().zip(&cur_f).zip(&nu_f) {
                *p = c * cos + v * sin;
            }
            for ((p, &c), &v) in prop_u.iter_mut().zip(&cur_u).zip(&nu_u) {
                *p = c * cos + v * sin;
            }
            let (sticks, field, ll) = evaluate(self, &scratch_f, &prop_u);
            if ll > level {
                self.f = scratch_f;
                self.sticks = sticks;
                self.field = field;
                self.rebuild_models();
                return Ok(());
            }
            if theta < 0.0 {
                lo = theta;
            } else {
                hi = theta;
            }
            theta = lo + (hi - lo) * self.rngs.functions.random::<f64>();
        }
        Err(Error::Numerical(format!(
            "joint elliptical slice update exceeded {MAX_ESS_SHRINK} shrinkage steps"
        )))
    }

    /// Sweeps the function values under `mode`; alternating mode picks by
    /// iteration parity.
    pub fn sweep_f(&mut self, mode: FSchedule) -> Result<()> {
        let global = match mode {
            FSchedule::PerObject => false,
            FSchedule::Global => true,
            FSchedule::Alternating => self.iteration % 2 == 1,
        };
        if global {
            self.ess_global()?;
        } else {
            for n in 0..self.data.n_objects() {
                self.ess_update_object(n)?;
            }
        }
        self.check("function sweep")
    }

    /// Labels that change at each location if stick `k` gets threshold `eta`.
    fn stick_changes(&self, k: usize, eta: f64) -> Vec<(usize, Vec<usize>)> {
        let t = self.layout.n_locations();
        let thresholds = self.sticks.thresholds();
        let mut out = Vec::new();
        for tau in 0..t {
            let mut row: Option<Vec<usize>> = None;
            for n in 0..self.data.n_objects() {
                let c = self.field.get(tau, n);
                if c < k {
                    continue;
                }
                let value = self.f.get(tau, n, k);
                let new = if value < eta {
                    k
                } else if c == k {
                    // next stick whose threshold the function falls below
                    let obj = self.f.object(n);
                    (k + 1..thresholds.len())
                        .find(|&j| obj[j * t + tau] < thresholds[j])
                        .unwrap_or(thresholds.len())
                } else {
                    c
                };
                if new != c {
                    row.get_or_insert_with(|| self.field.row(tau).to_vec())[n] = new;
                }
            }
            if let Some(r) = row {
                out.push((tau, r));
            }
        }
        out
    }

    fn changes_loglik_delta(&self, changes: &[(usize, Vec<usize>)]) -> f64 {
        changes
            .iter()
            .flat_map(|(tau, row)| {
                self.by_location[*tau]
                    .iter()
                    .map(move |&s| self.models[s].score(row) - self.source_ll[s])
            })
            .sum()
    }

    /// Slice-samples each stick length in turn on the logit scale.
    pub fn slice_sample_v(&mut self) -> Result<()> {
        self.refresh_ll();
        let width = self.options.slice;
        for k in 0..self.config.n_sticks() {
            let (a, b) = self.config.stick_prior(k, self.alpha);
            let x0 = self.sticks.logits()[k];
            let mut rng = std::mem::replace(&mut self.rngs.sticks, stream(0, Stream::Sticks));
            let result = slice_sample(
                x0,
                |x| {
                    let (ln_v, ln_1mv) = (-softplus(-x), -softplus(x));
                    let eta = threshold_of_logit(x);
                    beta_ln_pdf_parts(ln_v, ln_1mv, a, b)
                        + ln_v
                        + ln_1mv
                        + self.changes_loglik_delta(&self.stick_changes(k, eta))
                },
                width,
                &mut rng,
            );
            self.rngs.sticks = rng;
            let x = result?;
            let changes = self.stick_changes(k, threshold_of_logit(x));
            self.sticks.set_logit(k, x);
            for (tau, row) in changes {
                self.field.row_mut(tau).copy_from_slice(&row);
                for &s in &self.by_location[tau] {
                    self.models[s].rebuild(&row);
                    self.source_ll[s] = self.models[s].log_marginal();
                }
            }
        }
        self.check("stick update")
    }

    /// Index of the last stick that some object reaches.
    fn last_active_stick(&self) -> usize {
        self.field.max_label().min(self.config.n_sticks() - 1)
    }

    fn function_loglik(&self, gram: &GramMatrix, last: usize) -> f64 {
        let chol = match gram.cholesky() {
            Ok(c) => c,
            Err(_) => return f64::NEG_INFINITY,
        };
        let t = gram.dim();
        let norm = -0.5 * chol.log_det() - 0.5 * t as f64 * (2.0 * PI).ln();
        let mut scratch = vec![0.0; t];
        let mut total = 0.0;
        for n in 0..self.data.n_objects() {
            for k in 0..=last {
                total += norm - 0.5 * chol.quad_form(self.f.function(n, k), &mut scratch);
            }
        }
        total
    }

    /// Slice-samples each kernel hyperparameter coordinate. The function
    /// likelihood only includes sticks up to the last one any object reaches.
    pub fn slice_sample_kernel(&mut self) -> Result<()> {
        let coords = self.kernel.n_coordinates();
        if coords == 0 {
            return Ok(());
        }
        let last = self.last_active_stick();
        let width = self.options.slice;
        for i in 0..coords {
            let x0 = self.kernel.coordinate(i);
            let mut rng = std::mem::replace(&mut self.rngs.kernel, stream(0, Stream::Kernel));
            let result = slice_sample(
                x0,
                |x| match self.kernel.with_coordinate(i, x) {
                    None => f64::NEG_INFINITY,
                    Some(spec) => {
                        let prior = kernel_log_prior(&spec);
                        if !prior.is_finite() {
                            return f64::NEG_INFINITY;
                        }
                        match spec.gram() {
                            Ok(g) => prior + spec.coordinate_log_jacobian(x) + self.function_loglik(&g, last),
                            Err(_) => f64::NEG_INFINITY,
                        }
                    }
                },
                width,
                &mut rng,
            );
            self.rngs.kernel = rng;
            let x = result?;
            let spec = self
                .kernel
                .with_coordinate(i, x)
                .ok_or_else(|| Error::Numerical("slice sampler left the kernel support".into()))?;
            let gram = spec.gram()?;
            gram.cholesky()?;
            self.kernel = spec;
            self.gram = gram;
        }
        if self.options.refresh_inactive_sticks {
            let t = self.layout.n_locations();
            let chol = self.gram.cholesky()?;
            let mut z = vec![0.0; t];
            for n in 0..self.data.n_objects() {
                for k in last + 1..self.config.n_sticks() {
                    z.iter_mut().for_each(|x| *x = self.rngs.kernel.sample(StandardNormal));
                    chol.mul_into(&z, self.f.function_mut(n, k));
                }
            }
        }
        self.check("kernel update")
    }

    /// Slice-samples each kernel coordinate with the whitened functions
    /// z = L⁻¹ f held fixed: the functions move with the kernel, and the
    /// target is the data likelihood through the implied assignments. This
    /// complements the update above, which mixes slowly when the functions
    /// pin the kernel down.
    pub fn slice_sample_kernel_whitened(&mut self) -> Result<()> {
        let coords = self.kernel.n_coordinates();
        if coords == 0 {
            return Ok(());
        }
        let t = self.layout.n_locations();
        let mut z = self.f.as_slice().to_vec();
        let chol = self.gram.cholesky()?;
        for block in z.chunks_mut(t) {
            chol.solve_lower_in_place(block);
        }
        let colour = |gram: &GramMatrix, f: &mut FunctionMatrix| -> Result<()> {
            let chol = gram.cholesky()?;
            for (out, zb) in f.as_mut_slice().chunks_mut(t).zip(z.chunks(t)) {
                chol.mul_into(zb, out);
            }
            Ok(())
        };
        let width = self.options.slice;
        let mut scratch = self.f.clone();
        for i in 0..coords {
            let x0 = self.kernel.coordinate(i);
            let mut rng = std::mem::replace(&mut self.rngs.kernel, stream(0, Stream::Kernel));
            let result = slice_sample(
                x0,
                |x| {
                    let Some(spec) = self.kernel.with_coordinate(i, x) else {
                        return f64::NEG_INFINITY;
                    };
                    let prior = kernel_log_prior(&spec);
                    let gram = match spec.gram() {
                        Ok(g) if prior.is_finite() => g,
                        _ => return f64::NEG_INFINITY,
                    };
                    if colour(&gram, &mut scratch).is_err() {
                        return f64::NEG_INFINITY;
                    }
                    let field = AssignmentField::compute(&scratch, &self.sticks);
                    let ll: f64 = self
                        .models
                        .iter()
                        .enumerate()
                        .map(|(s, m)| m.score(field.row(self.layout.locations[s])))
                        .sum();
                    prior + spec.coordinate_log_jacobian(x) + ll
                },
                width,
                &mut rng,
            );
            self.rngs.kernel = rng;
            let x = result?;
            let spec = self
                .kernel
                .with_coordinate(i, x)
                .ok_or_else(|| Error::Numerical("slice sampler left the kernel support".into()))?;
            let gram = spec.gram()?;
            colour(&gram, &mut self.f)?;
            self.kernel = spec;
            self.gram = gram;
        }
        self.field = AssignmentField::compute(&self.f, &self.sticks);
        self.rebuild_models();
        self.check("whitened kernel update")
    }

    fn sticks_log_prior(&self, alpha: f64) -> f64 {
        sticks_log_prior(&self.sticks, alpha, self.config.discount)
    }

    fn alpha_log_prior(&self, alpha: f64) -> f64 {
        gamma_log_pdf(alpha, self.options.alpha_prior)
    }

    /// Slice-samples α on the log scale given the stick lengths.
    pub fn slice_sample_alpha(&mut self) -> Result<()> {
        self.alpha = sample_alpha(
            self.alpha,
            &self.sticks,
            self.config.discount,
            self.options.alpha_prior,
            self.options.slice,
            &mut self.rngs.alpha,
        )?;
        self.config.alpha = self.alpha;
        self.check("concentration update")
    }

    /// One full iteration in the fixed order: functions, sticks, kernel, α.
    pub fn step(&mut self) -> Result<()> {
        if self.options.update_functions {
            self.sweep_f(self.options.schedule)?;
        }
        if self.options.update_sticks {
            self.slice_sample_v()?;
        }
        if self.options.update_kernel {
            self.slice_sample_kernel()?;
            if self.options.whitened_kernel_update {
                self.slice_sample_kernel_whitened()?;
            }
        }
        if self.options.update_alpha {
            self.slice_sample_alpha()?;
        }
        self.iteration += 1;
        Ok(())
    }

    /// Trace record of the current state.
    pub fn record(&mut self) -> TraceRecord {
        let loglik = self.loglik();
        TraceRecord {
            iteration: self.iteration,
            loglik,
            log_prior: LogPrior {
                sticks: self.sticks_log_prior(self.alpha),
                alpha: self.alpha_log_prior(self.alpha),
                kernel: kernel_log_prior(&self.kernel),
            },
            alpha: self.alpha,
            kernel: self.kernel.params().into_iter().map(|p| (p.name, p.value)).collect::<BTreeMap<_, _>>(),
            cluster_counts: (0..self.layout.n_locations()).map(|l| self.field.n_clusters(l)).collect(),
            assignments: self.options.keep_assignments.then(|| self.field.clone()),
        }
    }

    /// Runs the remaining iterations, calling `on_retained` with each
    /// retained record.
    pub fn run_with<F>(&mut self, mut on_retained: F) -> Result<Trace>
    where
        F: FnMut(&TraceRecord, &Sampler) -> Result<()>,
    {
        let mut trace = Trace::default();
        let dim = self.layout.n_locations();
        let mut sigma_sum = vec![0.0; dim * dim];
        let mut retained = 0usize;
        while self.iteration < self.options.iterations {
            let start = Instant::now();
            self.step()?;
            trace.iteration_times.push(start.elapsed());
            let i = self.iteration - 1;
            if i >= self.options.burnin && (i - self.options.burnin).is_multiple_of(self.options.thin) {
                let rec = self.record();
                if !rec.loglik.is_finite() {
                    return Err(Error::Numerical(format!("non-finite log likelihood at iteration {i}")));
                }
                on_retained(&rec, self)?;
                sigma_sum.iter_mut().zip(self.gram.as_slice()).for_each(|(a, b)| *a += b);
                retained += 1;
                trace.records.push(TraceRecord { iteration: i, ..rec });
            }
        }
        if retained > 0 {
            trace.sigma_mean = sigma_sum.into_iter().map(|x| x / retained as f64).collect();
        }
        Ok(trace)
    }

    pub fn run(&mut self) -> Result<Trace> {
        self.run_with(|_, _| Ok(()))
    }
}

/// Σ_k log Beta(v_k | 1 - d, α + (k+1) d)
pub fn sticks_log_prior(sticks: &StickWeights, alpha: f64, discount: f64) -> f64 {
    sticks
        .ln_values()
        .zip(sticks.ln_complements())
        .enumerate()
        .map(|(k, (ln_v, ln_1mv))| {
            let b = alpha + (k + 1) as f64 * discount;
            beta_ln_pdf_parts(ln_v, ln_1mv, 1.0 - discount, b)
        })
        .sum()
}

/// Gamma(shape, rate) log density.
pub fn gamma_log_pdf(x: f64, (shape, rate): (f64, f64)) -> f64 {
    if !(x > 0.0) {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// One slice update of α on the log scale, targeting the Gamma prior times
/// the stick-length likelihood.
pub fn sample_alpha<R: Rng + ?Sized>(
    alpha: f64,
    sticks: &StickWeights,
    discount: f64,
    prior: (f64, f64),
    slice: SliceConfig,
    rng: &mut R,
) -> Result<f64> {
    let x = slice_sample(
        alpha.ln(),
        |x| {
            let a = x.exp();
            if !(a > 0.0 && a.is_finite()) {
                return f64::NEG_INFINITY;
            }
            gamma_log_pdf(a, prior) + x + sticks_log_prior(sticks, a, discount)
        },
        slice,
        rng,
    )?;
    Ok(x.exp())
}

/// Initialises a sampler and runs it to completion.
pub fn run(data: ObservationSet, layout: Layout, kernel: KernelSpec, options: SamplerOptions) -> Result<Trace> {
    Sampler::new(data, layout, kernel, options)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::similarity_gram;
    use crate::likelihoods::MaskedMatrix;
    use crate::partition::{crp_log_prob, Partition};
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::Normal;
    use std::collections::HashMap;

    fn empty_multitask(n: usize, sources: usize) -> ObservationSet {
        ObservationSet::multitask(vec![MaskedMatrix::missing(n, 1); sources]).unwrap()
    }

    fn clusters(seed: u64, n: usize, sources: usize) -> (ObservationSet, Vec<usize>) {
        let mut rng = stream(seed, Stream::Data);
        let truth: Vec<usize> = (0..n).map(|i| i * 3 / n).collect();
        let mats = (0..sources)
            .map(|_| {
                let mut values = Vec::new();
                for &c in &truth {
                    for _ in 0..2 {
                        values.push(Normal::new([-3.0, 0.0, 3.0][c], 0.5).unwrap().sample(&mut rng));
                    }
                }
                MaskedMatrix::dense(n, 2, values).unwrap()
            })
            .collect();
        (ObservationSet::multitask(mats).unwrap(), truth)
    }

    fn only(update: &str) -> SamplerOptions {
        SamplerOptions {
            update_functions: update.contains('f'),
            update_sticks: update.contains('v'),
            update_kernel: update.contains('k'),
            update_alpha: update.contains('a'),
            init: Init::Prior,
            iterations: 2,
            burnin: 0,
            ..SamplerOptions::default()
        }
    }

    #[test]
    fn options_validation() {
        let bad = SamplerOptions {
            burnin: 10,
            iterations: 10,
            ..SamplerOptions::default()
        };
        assert!(bad.validate().is_err());
        assert!(SamplerOptions {
            thin: 0,
            ..SamplerOptions::default()
        }
        .validate()
        .is_err());
        assert!(SamplerOptions::default().validate().is_ok());
        assert_eq!("alternating".parse::<FSchedule>().unwrap(), FSchedule::Alternating);
        assert!("sometimes".parse::<FSchedule>().is_err());
    }

    #[test]
    fn layout_and_kernel_shapes_checked() {
        let data = empty_multitask(4, 2);
        let err = Sampler::new(data.clone(), Layout::dependent(2), KernelSpec::independent(3), only("f"));
        assert!(matches!(err, Err(Error::Shape(_))));
        assert!(Layout::new(vec![0, 2], 2).is_err());
        assert!(Sampler::new(data, Layout::shared(2), KernelSpec::independent(1), only("f")).is_ok());
    }

    #[test]
    fn ess_preserves_prior_without_data() {
        let data = empty_multitask(3, 2);
        let kernel = KernelSpec::Similarity {
            dim: 2,
            offdiag: vec![0.6],
        };
        let options = SamplerOptions {
            truncation: 3,
            ..only("f")
        };
        let mut s = Sampler::new(data, Layout::dependent(2), kernel, options).unwrap();
        let (mut m, mut v, mut c, mut count) = ([0.0; 2], [0.0; 2], 0.0, 0.0);
        for _ in 0..5000 {
            s.sweep_f(FSchedule::PerObject).unwrap();
            for n in 0..3 {
                for k in 0..2 {
                    let f = s.functions().function(n, k);
                    for t in 0..2 {
                        m[t] += f[t];
                        v[t] += f[t] * f[t];
                    }
                    c += f[0] * f[1];
                    count += 1.0;
                }
            }
        }
        for t in 0..2 {
            assert!((m[t] / count).abs() < 0.05, "mean {}", m[t] / count);
            assert!((v[t] / count - 1.0).abs() < 0.1, "var {}", v[t] / count);
        }
        assert!((c / count - 0.6).abs() < 0.05, "corr {}", c / count);
    }

    #[test]
    fn single_object_update_is_local() {
        let (data, _) = clusters(1, 12, 2);
        let mut s = Sampler::new(data, Layout::dependent(2), KernelSpec::independent(2), only("f")).unwrap();
        let before = s.functions().clone();
        let sticks = s.sticks().clone();
        s.ess_update_object(4).unwrap();
        for n in (0..12).filter(|&n| n != 4) {
            assert_eq!(before.object(n), s.functions().object(n));
        }
        assert_eq!(&sticks, s.sticks());
        s.check_consistency().unwrap();
    }

    #[test]
    fn sweeps_touch_only_their_fields() {
        let (data, _) = clusters(2, 10, 2);
        let mut s = Sampler::new(data, Layout::dependent(2), KernelSpec::independent(2), only("f")).unwrap();
        let (sticks, kernel, alpha) = (s.sticks().clone(), s.kernel().clone(), s.alpha());
        s.sweep_f(FSchedule::PerObject).unwrap();
        assert_eq!(&sticks, s.sticks());
        s.sweep_f(FSchedule::Global).unwrap();
        assert_eq!((&kernel, alpha), (s.kernel(), s.alpha()));
        s.check_consistency().unwrap();
    }

    fn prior_stick_mean(alpha: f64) -> f64 {
        let options = SamplerOptions {
            alpha,
            truncation: 5,
            ..only("v")
        };
        let mut s = Sampler::new(empty_multitask(4, 1), Layout::shared(1), KernelSpec::independent(1), options).unwrap();
        let mut total = 0.0;
        let sweeps = 10_000;
        for _ in 0..sweeps {
            s.slice_sample_v().unwrap();
            total += s.sticks().values().iter().sum::<f64>() / 4.0;
        }
        total / sweeps as f64
    }

    #[test]
    fn stick_update_preserves_beta_prior() {
        assert!((prior_stick_mean(1.0) - 0.5).abs() < 0.02);
        assert!((prior_stick_mean(3.0) - 0.25).abs() < 0.02);
    }

    #[test]
    fn stick_update_far_from_thresholds_keeps_assignments() {
        let mut s = Sampler::new(empty_multitask(6, 2), Layout::dependent(2), KernelSpec::independent(2), only("v"))
            .unwrap();
        let mut f = FunctionMatrix::zeros(2, 6, 29);
        for n in 0..6 {
            for k in 0..29 {
                let value = if k == n { -100.0 } else { 100.0 };
                f.function_mut(n, k).iter_mut().for_each(|x| *x = value);
            }
        }
        let sticks = s.sticks().clone();
        s.set_state(f, sticks, KernelSpec::independent(2), 1.0).unwrap();
        let before = s.assignments().clone();
        for _ in 0..20 {
            s.slice_sample_v().unwrap();
        }
        assert_eq!(&before, s.assignments());
    }

    #[test]
    fn kernel_update_matches_grid_posterior_on_active_stick() {
        // all objects stop at stick 0, so only f_{n,0} informs the lengthscale
        let locations = vec![0.0, 1.0, 2.0];
        let n = 20;
        let mut rng = stream(3, Stream::Data);
        let truth = crate::kernels::se_gram(&locations, 1.5);
        let mut f = FunctionMatrix::sample_prior(&truth, n, 2, &mut rng).unwrap();
        for obj in 0..n {
            // keep every object below the first threshold
            for x in f.function_mut(obj, 0) {
                *x = x.min(4.0);
            }
        }
        let sticks = StickWeights::new(vec![1.0 - 1e-9, 0.5]);
        let options = SamplerOptions {
            truncation: 3,
            ..only("k")
        };
        let kernel = KernelSpec::squared_exponential(locations.clone(), 1.0);
        let mut s = Sampler::new(empty_multitask(n, 3), Layout::dependent(3), kernel.clone(), options).unwrap();
        s.set_state(f.clone(), sticks, kernel, 1.0).unwrap();
        assert_eq!(s.assignments().max_label(), 0);

        // grid oracle: Exp(1) prior times Π_n N(f_n0 | 0, Σ(l))
        let log_post = |l: f64| {
            let g = crate::kernels::se_gram(&locations, l);
            let chol = g.cholesky().unwrap();
            let mut scratch = vec![0.0; 3];
            -l + (0..n)
                .map(|o| {
                    -0.5 * chol.quad_form(f.function(o, 0), &mut scratch)
                        - 0.5 * chol.log_det()
                        - 1.5 * (2.0 * PI).ln()
                })
                .sum::<f64>()
        };
        let grid: Vec<f64> = (1..4000).map(|i| i as f64 * 0.002).collect();
        let lp: Vec<f64> = grid.iter().map(|&l| log_post(l)).collect();
        let max = lp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = lp.iter().map(|x| (x - max).exp()).collect();
        let z: f64 = w.iter().sum();
        let mean: f64 = grid.iter().zip(&w).map(|(l, w)| l * w).sum::<f64>() / z;
        let var: f64 = grid.iter().zip(&w).map(|(l, w)| (l - mean).powi(2) * w).sum::<f64>() / z;

        let stick1_before: Vec<f64> = (0..n).flat_map(|o| s.functions().function(o, 1).to_vec()).collect();
        let mut draws = Vec::new();
        for _ in 0..6000 {
            s.slice_sample_kernel().unwrap();
            if let KernelSpec::SquaredExponential { lengthscale, .. } = s.kernel() {
                draws.push(*lengthscale);
            }
        }
        let est = draws.iter().sum::<f64>() / draws.len() as f64;
        // slice draws of a scalar mix fast; allow a generous effective size
        let se = (var / 1000.0).sqrt();
        assert!((est - mean).abs() < 4.0 * se, "sampled {est}, grid {mean} ± {se}");
        let stick1_after: Vec<f64> = (0..n).flat_map(|o| s.functions().function(o, 1).to_vec()).collect();
        assert_ne!(stick1_before, stick1_after, "inactive stick should be refreshed");
        for o in 0..n {
            assert_eq!(s.functions().function(o, 0), f.function(o, 0));
        }
        assert_eq!(s.assignments().max_label(), 0);
    }

    fn alpha_grid(v: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let sticks = StickWeights::new(v.to_vec());
        let grid: Vec<f64> = (1..=6000).map(|i| i as f64 * 0.005).collect();
        let lp: Vec<f64> = grid
            .iter()
            .map(|&a| gamma_log_pdf(a, (1.0, 1.0)) + sticks_log_prior(&sticks, a, 0.0))
            .collect();
        let max = lp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = lp.iter().map(|x| (x - max).exp()).collect();
        let z: f64 = w.iter().sum();
        (grid, w.into_iter().map(|x| x / z).collect())
    }

    fn alpha_chain(v: &[f64], draws: usize, seed: u64) -> Vec<f64> {
        let mut rng = stream(seed, Stream::Alpha);
        let sticks = StickWeights::new(v.to_vec());
        let mut a = 1.0;
        (0..draws)
            .map(|_| {
                a = sample_alpha(a, &sticks, 0.0, (1.0, 1.0), SliceConfig::default(), &mut rng).unwrap();
                a
            })
            .collect()
    }

    #[test]
    fn alpha_histogram_matches_grid() {
        let v = vec![0.5; 10];
        let (grid, p) = alpha_grid(&v);
        let draws = alpha_chain(&v, 40_000, 1);
        let bins = 30;
        let width = 30.0 / bins as f64;
        let mut expected = vec![0.0; bins];
        for (a, w) in grid.iter().zip(&p) {
            expected[((a / width) as usize).min(bins - 1)] += w;
        }
        let mut observed = vec![0.0; bins];
        for a in &draws {
            observed[((a / width) as usize).min(bins - 1)] += 1.0 / draws.len() as f64;
        }
        let tv: f64 = 0.5 * expected.iter().zip(&observed).map(|(e, o)| (e - o).abs()).sum::<f64>();
        assert!(tv < 0.05, "tv = {tv}");
    }

    #[test]
    fn alpha_without_sticks_follows_prior() {
        let draws = alpha_chain(&[], 40_000, 2);
        let m = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|a| (a - m).powi(2)).sum::<f64>() / draws.len() as f64;
        assert!((m - 1.0).abs() < 0.05, "{m}");
        assert!((var - 1.0).abs() < 0.15, "{var}");
    }

    #[test]
    fn alpha_grows_when_sticks_shrink() {
        let mean_of = |v: &[f64]| {
            let (g, p) = alpha_grid(v);
            g.iter().zip(&p).map(|(a, w)| a * w).sum::<f64>()
        };
        let (large, small) = (vec![0.5; 10], vec![0.1; 10]);
        assert!(mean_of(&small) > mean_of(&large));
        let sampled = |v: &[f64]| alpha_chain(v, 20_000, 3).iter().sum::<f64>() / 20_000.0;
        assert!(sampled(&small) > sampled(&large));
        assert!((sampled(&small) - mean_of(&small)).abs() < 0.1 * mean_of(&small));
    }

    #[test]
    fn shared_initialisation_matches_dpm_partition() {
        let (data, truth) = clusters(4, 30, 3);
        let options = SamplerOptions {
            init: Init::SharedDpm,
            ..only("f")
        };
        let s = Sampler::new(data, Layout::dependent(3), KernelSpec::independent(3), options).unwrap();
        let field = s.assignments();
        assert_eq!(field.row(0), field.row(1));
        assert_eq!(field.row(0), field.row(2));
        assert_eq!(&AssignmentField::compute(s.functions(), s.sticks()), field);
        let ari = crate::partition::adjusted_rand_index(
            &Partition::from_labels(field.row(0)),
            &Partition::from_labels(&truth),
        )
        .unwrap();
        assert!(ari > 0.9, "{ari}");
    }

    proptest! {
        #[test]
        fn shared_state_reproduces_any_ranked_partition(
            raw in proptest::collection::vec(0usize..8, 1..25),
            k in 2usize..7,
            t in 1usize..4,
        ) {
            let ranked = relabel_by_size(&raw);
            let config = TruncationConfig::new(k, 1.0, 0.0).unwrap();
            let (sticks, f, merged) = shared_partition_state(&ranked, &config, t);
            let field = AssignmentField::compute(&f, &sticks);
            for loc in 0..t {
                prop_assert_eq!(field.row(loc), &merged[..]);
            }
            for (&r, &m) in ranked.iter().zip(&merged) {
                prop_assert_eq!(m, r.min(k - 1));
            }
            prop_assert!(sticks.values().iter().all(|&v| (INIT_STICK_RANGE.0..=INIT_STICK_RANGE.1).contains(&v)));
        }
    }

    #[test]
    fn identical_seeds_give_identical_traces() {
        let (data, _) = clusters(5, 12, 2);
        let options = SamplerOptions {
            iterations: 15,
            burnin: 5,
            seed: 77,
            ..SamplerOptions::default()
        };
        let kernel = KernelSpec::squared_exponential(vec![0.0, 1.0], 1.0);
        let text = |trace: Trace| {
            let mut buf = Vec::new();
            trace.write_jsonl(&mut buf).unwrap();
            buf
        };
        let a = text(run(data.clone(), Layout::dependent(2), kernel.clone(), options.clone()).unwrap());
        let b = text(run(data.clone(), Layout::dependent(2), kernel.clone(), options.clone()).unwrap());
        assert_eq!(a, b);
        let c = text(run(data, Layout::dependent(2), kernel, SamplerOptions { seed: 78, ..options }).unwrap());
        assert_ne!(a, c);
    }

    #[test]
    fn thinning_and_burnin_select_records() {
        let options = SamplerOptions {
            iterations: 20,
            burnin: 5,
            thin: 4,
            ..SamplerOptions::default()
        };
        let trace = run(empty_multitask(5, 1), Layout::shared(1), KernelSpec::independent(1), options).unwrap();
        let its: Vec<usize> = trace.records.iter().map(|r| r.iteration).collect();
        assert_eq!(its, vec![5, 9, 13, 17]);
        assert_eq!(trace.iteration_times.len(), 20);
        assert_eq!(trace.sigma_mean, vec![1.0]);
    }

    #[test]
    fn prior_only_run_recovers_crp_marginals() {
        let options = SamplerOptions {
            iterations: 20_000,
            burnin: 100,
            truncation: 50,
            update_alpha: false,
            update_kernel: false,
            init: Init::Prior,
            ..SamplerOptions::default()
        };
        let kernel = KernelSpec::Similarity {
            dim: 2,
            offdiag: vec![0.5],
        };
        let trace = run(empty_multitask(3, 2), Layout::dependent(2), kernel, options).unwrap();
        for loc in 0..2 {
            let mut counts: HashMap<Partition, f64> = HashMap::new();
            for r in &trace.records {
                let p = Partition::from_labels(r.assignments.as_ref().unwrap().row(loc));
                *counts.entry(p).or_default() += 1.0;
            }
            let total = trace.len() as f64;
            let tv: f64 = 0.5
                * crate::partition::all_partitions(3)
                    .iter()
                    .map(|p| (counts.get(p).copied().unwrap_or(0.0) / total - crp_log_prob(p, 1.0).exp()).abs())
                    .sum::<f64>();
            assert!(tv < 0.02, "location {loc}: tv = {tv}");
        }
    }

    #[test]
    fn caches_stay_consistent_across_modes() {
        let mut rng = stream(6, Stream::Data);
        let mut snaps = Vec::new();
        for _ in 0..3 {
            let mut m = MaskedMatrix::missing(8, 8);
            for i in 0..8 {
                for j in i + 1..8 {
                    if rng.random::<f64>() < 0.9 {
                        let y = f64::from(u8::from(rng.random::<f64>() < 0.4));
                        m.set(i, j, Some(y));
                        m.set(j, i, Some(y));
                    }
                }
            }
            snaps.push(m);
        }
        for (symmetric, schedule) in [(true, FSchedule::PerObject), (true, FSchedule::Alternating), (false, FSchedule::Global)] {
            let data = ObservationSet::network(snaps.clone(), symmetric).unwrap();
            let options = SamplerOptions {
                iterations: 12,
                burnin: 0,
                schedule,
                check_consistency: true,
                truncation: 6,
                ..SamplerOptions::default()
            };
            let kernel = KernelSpec::squared_exponential(vec![0.0, 1.0, 2.0], 1.0);
            let mut s = Sampler::new(data, Layout::dependent(3), kernel, options).unwrap();
            s.run().unwrap();
            s.check_consistency().unwrap();
        }
        let (data, _) = clusters(7, 15, 3);
        let kernel = KernelSpec::Similarity {
            dim: 3,
            offdiag: vec![0.2, 0.1, 0.3],
        };
        assert!(similarity_gram(3, &[0.2, 0.1, 0.3]).is_ok());
        let options = SamplerOptions {
            iterations: 12,
            burnin: 0,
            schedule: FSchedule::Alternating,
            check_consistency: true,
            ..SamplerOptions::default()
        };
        Sampler::new(data, Layout::dependent(3), kernel, options).unwrap().run().unwrap();
    }
}
