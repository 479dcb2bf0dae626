use crate::error::{Error, Result};

/// Jitter levels tried in order before a matrix is declared non-PSD.
pub const JITTER_LADDER: [f64; 3] = [0.0, 1e-10, 1e-8];

/// Lower-triangular factor `L` with `L Lᵀ = Σ + jitter·I`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky {
    dim: usize,
    lower: Vec<f64>,
    jitter: f64,
}

impl Cholesky {
    /// Factors a row-major symmetric `dim × dim` matrix, escalating the
    /// diagonal jitter along [`JITTER_LADDER`].
    pub fn factor(sigma: &[f64], dim: usize) -> Result<Self> {
        assert_eq!(sigma.len(), dim * dim);
        let mut failed = 0;
        for &jitter in &JITTER_LADDER {
            match try_factor(sigma, dim, jitter) {
                Ok(lower) => return Ok(Cholesky { dim, lower, jitter }),
                Err(minor) => failed = minor,
            }
        }
        Err(Error::NotPsd { minor: failed })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.lower[i * self.dim + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.lower
    }

    /// out = L z
    pub fn mul_into(&self, z: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for i in 0..d {
            let row = &self.lower[i * d..i * d + i + 1];
            out[i] = row.iter().zip(z).map(|(l, z)| l * z).sum();
        }
    }

    /// Solves L x = b in place.
    pub fn solve_lower_in_place(&self, b: &mut [f64]) {
        let d = self.dim;
        for i in 0..d {
            let row = &self.lower[i * d..i * d + i];
            let s: f64 = row.iter().zip(&b[..i]).map(|(l, x)| l * x).sum();
            b[i] = (b[i] - s) / self.lower[i * d + i];
        }
    }

    /// log det(L Lᵀ)
    pub fn log_det(&self) -> f64 {
        (0..self.dim)
            .map(|i| self.lower[i * self.dim + i].ln())
            .sum::<f64>()
            * 2.0
    }

    /// Squared Mahalanobis norm xᵀ(LLᵀ)⁻¹x, using `scratch` for the solve.
    pub fn quad_form(&self, x: &[f64], scratch: &mut [f64]) -> f64 {
        scratch.copy_from_slice(x);
        self.solve_lower_in_place(scratch);
        scratch.iter().map(|v| v * v).sum()
    }

    /// Reconstructs L Lᵀ (row-major).
    pub fn reconstruct(&self) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = (0..=i.min(j)).map(|k| self.get(i, k) * self.get(j, k)).sum();
            }
        }
        out
    }
}

fn try_factor(sigma: &[f64], dim: usize, jitter: f64) -> std::result::Result<Vec<f64>, usize> {
    let mut l = vec![0.0; dim * dim];
    for j in 0..dim {
        let mut diag = sigma[j * dim + j] + jitter;
        for k in 0..j {
            diag -= l[j * dim + k] * l[j * dim + k];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(j);
        }
        let ljj = diag.sqrt();
        l[j * dim + j] = ljj;
        for i in j + 1..dim {
            let mut s = sigma[i * dim + j];
            for k in 0..j {
                s -= l[i * dim + k] * l[j * dim + k];
            }
            l[i * dim + j] = s / ljj;
        }
    }
    Ok(l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_factor_is_identity() {
        let eye = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let c = Cholesky::factor(&eye, 3).unwrap();
        assert_eq!(c.as_slice(), eye.as_slice());
        assert_eq!(c.jitter(), 0.0);
    }

    #[test]
    fn two_by_two_closed_form() {
        let c = Cholesky::factor(&[1.0, 0.6, 0.6, 1.0], 2).unwrap();
        let expect = [1.0, 0.0, 0.6, 0.8];
        for (a, b) in c.as_slice().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn singular_psd_accepted_with_jitter() {
        let c = Cholesky::factor(&[1.0, 1.0, 1.0, 1.0], 2).unwrap();
        assert!(c.jitter() > 0.0);
    }

    #[test]
    fn indefinite_reports_minor() {
        let err = Cholesky::factor(&[1.0, 2.0, 2.0, 1.0], 2).unwrap_err();
        assert!(matches!(err, Error::NotPsd { minor: 1 }));
    }

    #[test]
    fn solve_and_log_det() {
        let sigma = [2.0, 0.5, 0.5, 1.0];
        let c = Cholesky::factor(&sigma, 2).unwrap();
        assert!((c.log_det() - (2.0f64 - 0.25).ln()).abs() < 1e-14);
        let x = [1.0, -1.0];
        let mut s = [0.0; 2];
        // inverse of sigma = [[1, -0.5], [-0.5, 2]] / 1.75
        let expect = (1.0 + 1.0 + 2.0) / 1.75;
        assert!((c.quad_form(&x, &mut s) - expect).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn reconstructs_random_psd(entries in proptest::collection::vec(-1.0f64..1.0, 16)) {
            // Σ = A Aᵀ + 0.1 I is PSD
            let d = 4;
            let mut sigma = vec![0.0; d * d];
            for i in 0..d {
                for j in 0..d {
                    sigma[i * d + j] = (0..d).map(|k| entries[i * d + k] * entries[j * d + k]).sum::<f64>()
                        + if i == j { 0.1 } else { 0.0 };
                }
            }
            let c = Cholesky::factor(&sigma, d).unwrap();
            let back = c.reconstruct();
            for (a, b) in back.iter().zip(&sigma) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }
    }
}
