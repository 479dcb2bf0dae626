//! Synthetic data: separated Gaussian clusters, a three-task variant with one
//! unstructured task, evolving block-structured networks, and draws from the
//! model itself.

use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, Normal, StandardNormal};

use super::Dataset;
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::likelihoods::{MaskedMatrix, ModelHyper, ObservationSet};
use crate::partition::{sample_prior, TruncationConfig};

pub const CLUSTER_OBJECTS: usize = 30;
pub const CLUSTER_DIM: usize = 5;
pub const CLUSTER_OFFSET: f64 = 3.0;
pub const DEFAULT_P_IN: f64 = 0.9;
pub const DEFAULT_P_OUT: f64 = 0.05;

fn three_clusters<R: Rng + ?Sized>(rng: &mut R) -> (MaskedMatrix, Vec<usize>) {
    let truth: Vec<usize> = (0..CLUSTER_OBJECTS).map(|i| i * 3 / CLUSTER_OBJECTS).collect();
    let mut values = Vec::with_capacity(CLUSTER_OBJECTS * CLUSTER_DIM);
    for &c in &truth {
        let mean = (c as f64 - 1.0) * CLUSTER_OFFSET;
        for _ in 0..CLUSTER_DIM {
            values.push(mean + rng.sample::<f64, _>(StandardNormal));
        }
    }
    let m = MaskedMatrix::dense(CLUSTER_OBJECTS, CLUSTER_DIM, values).expect("shape is fixed");
    (m, truth)
}

/// 30 objects in three clusters of ten, 5-dimensional, means -3, 0, +3 in
/// every coordinate, unit isotropic noise.
pub fn gen_gaussian_clusters<R: Rng + ?Sized>(rng: &mut R) -> Dataset {
    let (m, truth) = three_clusters(rng);
    Dataset {
        data: ObservationSet::Multitask { sources: vec![m] },
        locations: vec![0.0],
        truth: Some(vec![truth]),
        standardization: None,
    }
}

/// Three tasks over the same 30 objects: the first two share the
/// three-cluster structure (independent noise), the third is one cluster
/// N(0, I).
pub fn gen_multitask_t3<R: Rng + ?Sized>(rng: &mut R) -> Dataset {
    let (a, truth) = three_clusters(rng);
    let (b, _) = three_clusters(rng);
    let c_values: Vec<f64> = (0..CLUSTER_OBJECTS * CLUSTER_DIM)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    let c = MaskedMatrix::dense(CLUSTER_OBJECTS, CLUSTER_DIM, c_values).expect("shape is fixed");
    Dataset {
        data: ObservationSet::Multitask { sources: vec![a, b, c] },
        locations: vec![0.0, 1.0, 2.0],
        truth: Some(vec![truth.clone(), truth, vec![0; CLUSTER_OBJECTS]]),
        standardization: None,
    }
}

/// Six snapshots of 30 objects: two halves at the start, with a third group
/// growing out of the middle by one object from each side per step.
pub fn default_ecs_schedule() -> Vec<Vec<usize>> {
    let n = 30;
    (0..6)
        .map(|step| {
            let half = step; // third group has 2 * step members
            (0..n)
                .map(|i| {
                    if i + half >= n / 2 && i < n / 2 + half {
                        2
                    } else if i < n / 2 {
                        0
                    } else {
                        1
                    }
                })
                .collect()
        })
        .collect()
}

/// Binary snapshots with link probability `p_in` inside blocks and `p_out`
/// between them; diagonal unobserved. Times are 0, 1, 2, ...
pub fn gen_evolving_network<R: Rng + ?Sized>(
    schedule: &[Vec<usize>],
    p_in: f64,
    p_out: f64,
    symmetric: bool,
    rng: &mut R,
) -> Result<Dataset> {
    if !(0.0 <= p_out && p_out < p_in && p_in <= 1.0) {
        return Err(Error::Config(format!(
            "need 0 <= p_out < p_in <= 1, got p_in = {p_in}, p_out = {p_out}"
        )));
    }
    network_from_schedule(schedule, |a, b| if a == b { p_in } else { p_out }, symmetric, rng)
}

fn network_from_schedule<R, P>(schedule: &[Vec<usize>], prob: P, symmetric: bool, rng: &mut R) -> Result<Dataset>
where
    R: Rng + ?Sized,
    P: Fn(usize, usize) -> f64,
{
    let n = schedule.first().map_or(0, Vec::len);
    if schedule.is_empty() || schedule.iter().any(|p| p.len() != n) {
        return Err(Error::Shape("schedule partitions must be non-empty and over the same objects".into()));
    }
    let snapshots = schedule
        .iter()
        .map(|labels| {
            let mut m = MaskedMatrix::missing(n, n);
            for i in 0..n {
                for j in 0..n {
                    if i == j || (symmetric && j < i) {
                        continue;
                    }
                    let y = f64::from(u8::from(rng.random::<f64>() < prob(labels[i], labels[j])));
                    m.set(i, j, Some(y));
                    if symmetric {
                        m.set(j, i, Some(y));
                    }
                }
            }
            m
        })
        .collect();
    Ok(Dataset {
        data: ObservationSet::network(snapshots, symmetric)?,
        locations: (0..schedule.len()).map(|t| t as f64).collect(),
        truth: Some(schedule.to_vec()),
        standardization: None,
    })
}

/// Settings of the surrogate network series: ground-truth partitions are a
/// prior draw of the dependent process with a squared-exponential kernel.
/// The defaults give sparse, noisy waves similar in size and density to the
/// friendship survey.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateConfig {
    pub n: usize,
    pub times: Vec<f64>,
    pub lengthscale: f64,
    pub truncation: usize,
    pub alpha: f64,
    pub p_in: f64,
    pub p_out: f64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            n: 32,
            times: super::vdb::VDB_TIMES.to_vec(),
            lengthscale: 8.0,
            truncation: 8,
            alpha: 2.0,
            p_in: 0.35,
            p_out: 0.05,
        }
    }
}

pub fn gen_se_surrogate<R: Rng + ?Sized>(config: &SurrogateConfig, rng: &mut R) -> Result<Dataset> {
    let kernel = KernelSpec::squared_exponential(config.times.clone(), config.lengthscale);
    let truncation = TruncationConfig::new(config.truncation, config.alpha, 0.0)?;
    let (_, _, field) = sample_prior(&truncation, &kernel.gram()?, config.n, rng)?;
    let schedule: Vec<Vec<usize>> = field.rows().map(<[usize]>::to_vec).collect();
    let mut d = gen_evolving_network(&schedule, config.p_in, config.p_out, true, rng)?;
    d.locations = config.times.clone();
    Ok(d)
}

/// Fresh observations from the collapsed model's generative process given
/// labels per source, keeping the mask of `template`.
pub fn sample_observations<R: Rng + ?Sized>(
    template: &ObservationSet,
    labels: &[&[usize]],
    hyper: &ModelHyper,
    rng: &mut R,
) -> Result<ObservationSet> {
    if labels.len() != template.n_sources() {
        return Err(Error::Shape("one label vector per source required".into()));
    }
    let bad = |e: rand_distr::GammaError| Error::Config(e.to_string());
    match template {
        ObservationSet::Multitask { sources } => {
            let h = hyper.gaussian;
            let gamma = Gamma::new(h.alpha0, 1.0 / h.beta0).map_err(bad)?;
            let out = sources
                .iter()
                .zip(labels)
                .map(|(m, lab)| {
                    let k = lab.iter().copied().max().map_or(0, |x| x + 1);
                    let params: Vec<(f64, f64)> = (0..k * m.cols())
                        .map(|_| {
                            let lam: f64 = gamma.sample(rng);
                            let mu = h.mu0 + rng.sample::<f64, _>(StandardNormal) / (h.kappa0 * lam).sqrt();
                            (mu, 1.0 / lam.sqrt())
                        })
                        .collect();
                    let mut out = MaskedMatrix::missing(m.rows(), m.cols());
                    for (i, j, _) in m.entries() {
                        let (mu, sd) = params[lab[i] * m.cols() + j];
                        out.set(i, j, Some(Normal::new(mu, sd).expect("finite").sample(rng)));
                    }
                    out
                })
                .collect();
            ObservationSet::multitask(out)
        }
        ObservationSet::Network { snapshots, symmetric } => {
            let h = hyper.network;
            let beta = Beta::new(h.a, h.b).map_err(|e| Error::Config(e.to_string()))?;
            let out = snapshots
                .iter()
                .zip(labels)
                .map(|(m, lab)| {
                    let k = lab.iter().copied().max().map_or(0, |x| x + 1);
                    let theta: Vec<f64> = (0..k * k).map(|_| beta.sample(rng)).collect();
                    let mut out = MaskedMatrix::missing(m.rows(), m.cols());
                    for (i, j, _) in m.entries() {
                        if i == j || (*symmetric && j < i) {
                            continue;
                        }
                        let (a, b) = if *symmetric {
                            (lab[i].min(lab[j]), lab[i].max(lab[j]))
                        } else {
                            (lab[i], lab[j])
                        };
                        let y = f64::from(u8::from(rng.random::<f64>() < theta[a * k + b]));
                        out.set(i, j, Some(y));
                        if *symmetric {
                            out.set(j, i, Some(y));
                        }
                    }
                    out
                })
                .collect();
            ObservationSet::network(out, *symmetric)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::{adjusted_rand_index, Partition};
    use crate::rng::{stream, Stream};

    #[test]
    fn cluster_means_and_sizes() {
        let d = gen_gaussian_clusters(&mut stream(1, Stream::Data));
        let m = &d.data.sources()[0];
        let truth = &d.truth.as_ref().unwrap()[0];
        assert_eq!(Partition::from_labels(truth).block_sizes(), vec![10, 10, 10]);
        let bound = 3.0 / 10f64.sqrt() * 5f64.sqrt();
        let mut means = [[0.0; CLUSTER_DIM]; 3];
        for (i, &c) in truth.iter().enumerate() {
            for j in 0..CLUSTER_DIM {
                means[c][j] += m.get(i, j).unwrap() / 10.0;
            }
        }
        for (c, mean) in means.iter().enumerate() {
            let target = (c as f64 - 1.0) * 3.0;
            let dist = mean.iter().map(|x| (x - target).powi(2)).sum::<f64>().sqrt();
            assert!(dist < bound, "cluster {c}: {dist}");
        }
        let centre_gap = (2.0 * 9.0 * CLUSTER_DIM as f64 / 2.0).sqrt();
        assert!((centre_gap - 6.708).abs() < 1e-3);
    }

    #[test]
    fn t3_structure() {
        let d = gen_multitask_t3(&mut stream(2, Stream::Data));
        let truth = d.truth.as_ref().unwrap();
        let p = |l: &Vec<usize>| Partition::from_labels(l);
        assert_eq!(adjusted_rand_index(&p(&truth[0]), &p(&truth[1])).unwrap(), 1.0);
        assert_eq!(p(&truth[2]).n_blocks(), 1);
        assert!(d.data.sources().iter().all(|m| m.rows() == 30 && m.cols() == 5));
    }

    #[test]
    fn default_schedule_grows_a_middle_group() {
        let s = default_ecs_schedule();
        assert_eq!(s.len(), 6);
        for (step, labels) in s.iter().enumerate() {
            let c = labels.iter().filter(|&&l| l == 2).count();
            assert_eq!(c, 2 * step);
            assert_eq!(labels.iter().filter(|&&l| l == 0).count(), 15 - step);
            assert_eq!(labels.iter().filter(|&&l| l == 1).count(), 15 - step);
        }
        assert_eq!(&s[1][14..16], &[2, 2]);
    }

    #[test]
    fn deterministic_limit_is_block_diagonal() {
        let schedule = default_ecs_schedule();
        let d = gen_evolving_network(&schedule, 1.0, 0.0, true, &mut stream(3, Stream::Data)).unwrap();
        for (m, labels) in d.data.sources().iter().zip(&schedule) {
            for i in 0..30 {
                assert_eq!(m.get(i, i), None);
                for j in (0..30).filter(|&j| j != i) {
                    assert_eq!(m.get(i, j), Some(f64::from(u8::from(labels[i] == labels[j]))));
                }
            }
        }
    }

    #[test]
    fn within_block_rate_matches_p_in() {
        let schedule = default_ecs_schedule();
        let d = gen_evolving_network(&schedule, 0.9, 0.05, true, &mut stream(4, Stream::Data)).unwrap();
        let (mut links, mut pairs) = (0.0, 0.0);
        for (m, labels) in d.data.sources().iter().zip(&schedule) {
            for (i, j, y) in m.entries().filter(|&(i, j, _)| i < j && labels[i] == labels[j]) {
                let _ = (i, j);
                links += y;
                pairs += 1.0;
            }
        }
        let rate = links / pairs;
        let se = (0.9f64 * 0.1 / pairs).sqrt();
        assert!((rate - 0.9).abs() < 3.0 * se, "{rate} over {pairs}");
    }

    #[test]
    fn invalid_probabilities_and_schedules_rejected() {
        let mut rng = stream(5, Stream::Data);
        assert!(gen_evolving_network(&default_ecs_schedule(), 0.3, 0.3, true, &mut rng).is_err());
        assert!(gen_evolving_network(&[vec![0, 1], vec![0]], 0.9, 0.1, true, &mut rng).is_err());
    }

    #[test]
    fn generators_are_seed_deterministic() {
        let a = gen_multitask_t3(&mut stream(6, Stream::Data));
        let b = gen_multitask_t3(&mut stream(6, Stream::Data));
        assert_eq!(a.data, b.data);
        let c = gen_se_surrogate(&SurrogateConfig::default(), &mut stream(6, Stream::Data)).unwrap();
        let d = gen_se_surrogate(&SurrogateConfig::default(), &mut stream(6, Stream::Data)).unwrap();
        assert_eq!(c.data, d.data);
        assert_eq!(c.locations, super::super::vdb::VDB_TIMES.to_vec());
    }

    #[test]
    fn model_draws_keep_the_mask() {
        let mut rng = stream(7, Stream::Data);
        let mut template = MaskedMatrix::dense(4, 2, vec![0.0; 8]).unwrap();
        template.set(1, 1, None);
        let set = ObservationSet::multitask(vec![template]).unwrap();
        let out = sample_observations(&set, &[&[0, 0, 1, 1]], &ModelHyper::default(), &mut rng).unwrap();
        assert_eq!(out.sources()[0].observed(), set.sources()[0].observed());
    }
}
