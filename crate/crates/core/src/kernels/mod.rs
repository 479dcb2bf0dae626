//! Covariance over covariate locations.
//!
//! All kernels produce a unit-diagonal Gram matrix: the partition process is
//! invariant to the marginal scale of the latent functions, so only
//! correlations are modelled.

mod cholesky;
mod tree;

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cholesky::{Cholesky, JITTER_LADDER};
pub use tree::{Tree, TreeNode, HEIGHT_TOLERANCE};

/// Default rate of the exponential prior on the squared-exponential
/// lengthscale, in covariate units.
pub const DEFAULT_LENGTHSCALE_RATE: f64 = 1.0;

/// Symmetric unit-diagonal covariance over `dim` locations with a lazily
/// computed Cholesky factor.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    dim: usize,
    sigma: Vec<f64>,
    chol: OnceLock<std::result::Result<Cholesky, usize>>,
}

impl PartialEq for GramMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.sigma == other.sigma
    }
}

impl GramMatrix {
    /// Builds from a row-major matrix, forcing exact symmetry (upper
    /// triangle mirrored from the lower) and an exact unit diagonal.
    pub fn from_row_major(dim: usize, mut sigma: Vec<f64>) -> Self {
        assert_eq!(sigma.len(), dim * dim, "gram matrix must be dim × dim");
        for i in 0..dim {
            sigma[i * dim + i] = 1.0;
            for j in 0..i {
                sigma[j * dim + i] = sigma[i * dim + j];
            }
        }
        GramMatrix {
            dim,
            sigma,
            chol: OnceLock::new(),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_row_major(dim, vec![0.0; dim * dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.sigma[i * self.dim + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.sigma
    }

    /// Cholesky factor (with the jitter ladder), computed once.
    pub fn cholesky(&self) -> Result<&Cholesky> {
        self.chol
            .get_or_init(|| {
                Cholesky::factor(&self.sigma, self.dim).map_err(|e| match e {
                    Error::NotPsd { minor } => minor,
                    _ => unreachable!("factor only reports NotPsd"),
                })
            })
            .as_ref()
            .map_err(|&minor| Error::NotPsd { minor })
    }
}

/// Factor of `gram`; the factor is cached on the matrix, so it is shared by
/// every latent function that uses this covariance.
pub fn chol(gram: &GramMatrix) -> Result<&Cholesky> {
    gram.cholesky()
}

/// Squared-exponential Gram matrix `exp(-(t - t')² / 2l²)`.
pub fn se_gram(locations: &[f64], lengthscale: f64) -> GramMatrix {
    let t = locations.len();
    let mut sigma = vec![0.0; t * t];
    let denom = 2.0 * lengthscale * lengthscale;
    for i in 0..t {
        for j in 0..t {
            let d = locations[i] - locations[j];
            sigma[i * t + j] = (-d * d / denom).exp();
        }
    }
    GramMatrix::from_row_major(t, sigma)
}

/// Number of unordered pairs of `dim` locations.
pub fn n_pairs(dim: usize) -> usize {
    dim * dim.saturating_sub(1) / 2
}

/// Unit-diagonal matrix from its off-diagonal entries, listed for pairs
/// (0,1), (0,2), …, (0,T-1), (1,2), … in that order. Fails with
/// [`Error::NotPsd`] when the assembled matrix is not PSD.
pub fn similarity_gram(dim: usize, offdiag: &[f64]) -> Result<GramMatrix> {
    if offdiag.len() != n_pairs(dim) {
        return Err(Error::Shape(format!(
            "{} off-diagonal entries given for {dim} locations (need {})",
            offdiag.len(),
            n_pairs(dim)
        )));
    }
    if let Some(bad) = offdiag.iter().find(|r| !(r.abs() <= 1.0)) {
        return Err(Error::Config(format!(
            "similarity entry {bad} outside [-1, 1]"
        )));
    }
    let mut sigma = vec![0.0; dim * dim];
    for ((i, j), &r) in pair_indices(dim).zip(offdiag) {
        sigma[i * dim + j] = r;
        sigma[j * dim + i] = r;
    }
    let gram = GramMatrix::from_row_major(dim, sigma);
    gram.cholesky()?;
    Ok(gram)
}

/// Unordered location pairs in the order used by [`similarity_gram`].
pub fn pair_indices(dim: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..dim).flat_map(move |i| (i + 1..dim).map(move |j| (i, j)))
}

/// Covariance of a Brownian-style diffusion down `tree`: entry (τ, τ') is the
/// depth of the leaves' most recent common ancestor.
pub fn tree_gram(tree: &Tree) -> Result<GramMatrix> {
    tree.validate()?;
    Ok(GramMatrix::from_row_major(
        tree.n_leaves(),
        tree.shared_depths(),
    ))
}

/// Kernel family together with its current hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelSpec {
    SquaredExponential {
        locations: Vec<f64>,
        lengthscale: f64,
        prior_rate: f64,
    },
    Similarity {
        dim: usize,
        offdiag: Vec<f64>,
    },
    Tree(Tree),
}

/// One named hyperparameter value, as reported in traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParam {
    pub name: String,
    pub value: f64,
}

impl KernelSpec {
    pub fn squared_exponential(locations: Vec<f64>, lengthscale: f64) -> Self {
        KernelSpec::SquaredExponential {
            locations,
            lengthscale,
            prior_rate: DEFAULT_LENGTHSCALE_RATE,
        }
    }

    /// Similarity kernel with all correlations at zero.
    pub fn independent(dim: usize) -> Self {
        KernelSpec::Similarity {
            dim,
            offdiag: vec![0.0; n_pairs(dim)],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            KernelSpec::SquaredExponential { locations, .. } => locations.len(),
            KernelSpec::Similarity { dim, .. } => *dim,
            KernelSpec::Tree(tree) => tree.n_leaves(),
        }
    }

    pub fn gram(&self) -> Result<GramMatrix> {
        match self {
            KernelSpec::SquaredExponential {
                locations,
                lengthscale,
                ..
            } => {
                if !(*lengthscale > 0.0) {
                    return Err(Error::Config(format!(
                        "lengthscale must be positive, got {lengthscale}"
                    )));
                }
                Ok(se_gram(locations, *lengthscale))
            }
            KernelSpec::Similarity { dim, offdiag } => similarity_gram(*dim, offdiag),
            KernelSpec::Tree(tree) => tree_gram(tree),
        }
    }

    /// Named hyperparameter values.
    pub fn params(&self) -> Vec<KernelParam> {
        match self {
            KernelSpec::SquaredExponential { lengthscale, .. } => vec![KernelParam {
                name: "lengthscale".into(),
                value: *lengthscale,
            }],
            KernelSpec::Similarity { dim, offdiag } => pair_indices(*dim)
                .zip(offdiag)
                .map(|((i, j), &r)| KernelParam {
                    name: format!("rho_{}_{}", i + 1, j + 1),
                    value: r,
                })
                .collect(),
            KernelSpec::Tree(tree) => tree
                .nodes()
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != tree.root())
                .map(|(i, node)| KernelParam {
                    name: format!("branch_{}", tree.node_label(i)),
                    value: node.branch_length,
                })
                .collect(),
        }
    }

    /// Number of scalar coordinates updated by the hyperparameter sampler.
    pub fn n_coordinates(&self) -> usize {
        match self {
            KernelSpec::SquaredExponential { .. } => 1,
            KernelSpec::Similarity { offdiag, .. } => offdiag.len(),
            KernelSpec::Tree(tree) => tree.free_nodes().len(),
        }
    }

    /// Sampling-scale value of coordinate `i`: log lengthscale, a raw
    /// correlation, or the depth of a free internal tree node.
    pub fn coordinate(&self, i: usize) -> f64 {
        match self {
            KernelSpec::SquaredExponential { lengthscale, .. } => lengthscale.ln(),
            KernelSpec::Similarity { offdiag, .. } => offdiag[i],
            KernelSpec::Tree(tree) => tree.depths()[tree.free_nodes()[i]],
        }
    }

    /// The kernel with coordinate `i` replaced, or `None` outside the support.
    pub fn with_coordinate(&self, i: usize, x: f64) -> Option<KernelSpec> {
        match self {
            KernelSpec::SquaredExponential {
                locations,
                prior_rate,
                ..
            } => {
                let lengthscale = x.exp();
                (lengthscale > 0.0 && lengthscale.is_finite()).then(|| {
                    KernelSpec::SquaredExponential {
                        locations: locations.clone(),
                        lengthscale,
                        prior_rate: *prior_rate,
                    }
                })
            }
            KernelSpec::Similarity { dim, offdiag } => {
                if !(x.abs() <= 1.0) {
                    return None;
                }
                let mut offdiag = offdiag.clone();
                offdiag[i] = x;
                Some(KernelSpec::Similarity { dim: *dim, offdiag })
            }
            KernelSpec::Tree(tree) => tree
                .with_node_depth(tree.free_nodes()[i], x)
                .map(KernelSpec::Tree),
        }
    }

    /// Log Jacobian of the map from sampling coordinate to hyperparameter.
    pub fn coordinate_log_jacobian(&self, x: f64) -> f64 {
        match self {
            KernelSpec::SquaredExponential { .. } => x,
            _ => 0.0,
        }
    }
}

/// Log prior density of the hyperparameters: exponential on the
/// lengthscale, uniform over the valid region for correlations and branch
/// lengths, `-inf` outside it.
pub fn kernel_log_prior(spec: &KernelSpec) -> f64 {
    match spec {
        KernelSpec::SquaredExponential {
            lengthscale,
            prior_rate,
            ..
        } => {
            if *lengthscale > 0.0 {
                prior_rate.ln() - prior_rate * lengthscale
            } else {
                f64::NEG_INFINITY
            }
        }
        KernelSpec::Similarity { dim, offdiag } => match similarity_gram(*dim, offdiag) {
            Ok(_) => 0.0,
            Err(_) => f64::NEG_INFINITY,
        },
        KernelSpec::Tree(tree) => match tree.validate() {
            Ok(()) => 0.0,
            Err(_) => f64::NEG_INFINITY,
        },
    }
}
