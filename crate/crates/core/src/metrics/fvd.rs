//! Frechet distance between Gaussian fits of two feature sets:
//! ||mu_r - mu_g||^2 + Tr(S_r + S_g - 2 (S_r S_g)^{1/2}), with 1/(n-1)
//! covariance, epsilon-shrinkage so small sample counts stay defined, and
//! the matrix square root taken through a symmetric eigendecomposition of
//! S_r^{1/2} S_g S_r^{1/2} with negative eigenvalues clipped at zero.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Covariance shrinkage added to every diagonal.
pub const FVD_SHRINKAGE: f64 = 1e-6;

/// Feature rows: n samples by d dims.
pub struct FeatureSet {
    pub rows: Vec<Vec<f64>>,
}

impl FeatureSet {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<FeatureSet> {
        if rows.len() < 2 {
            return Err(Error::dim(format!(
                "covariance needs >= 2 feature rows, got {}",
                rows.len()
            )));
        }
        let d = rows[0].len();
        if d == 0 || rows.iter().any(|r| r.len() != d) {
            return Err(Error::dim("feature rows must share a nonzero dim".to_string()));
        }
        Ok(FeatureSet { rows })
    }

    pub fn from_f32(rows: &[Vec<f32>]) -> Result<FeatureSet> {
        FeatureSet::new(
            rows.iter()
                .map(|r| r.iter().map(|&v| v as f64).collect())
                .collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.rows[0].len()
    }

    /// Sample mean and shrunk 1/(n-1) covariance.
    fn moments(&self) -> (DVector<f64>, DMatrix<f64>) {
        let (n, d) = (self.rows.len(), self.dim());
        let mut mean = DVector::zeros(d);
        for r in &self.rows {
            for (i, &v) in r.iter().enumerate() {
                mean[i] += v;
            }
        }
        mean /= n as f64;
        let mut cov = DMatrix::zeros(d, d);
        for r in &self.rows {
            let c = DVector::from_iterator(d, r.iter().cloned()) - &mean;
            cov.syger(1.0 / (n as f64 - 1.0), &c, &c, 1.0);
        }
        // syger fills the lower triangle; mirror it.
        for i in 0..d {
            for j in (i + 1)..d {
                cov[(i, j)] = cov[(j, i)];
            }
        }
        for i in 0..d {
            cov[(i, i)] += FVD_SHRINKAGE;
        }
        (mean, cov)
    }
}

/// Symmetric PSD square root; negative eigenvalues clip to zero.
fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let vals = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

pub fn fvd(real: &FeatureSet, generated: &FeatureSet) -> Result<f64> {
    if real.dim() != generated.dim() {
        return Err(Error::dim(format!(
            "feature dims differ: {} vs {}",
            real.dim(),
            generated.dim()
        )));
    }
    let (mu_r, cov_r) = real.moments();
    let (mu_g, cov_g) = generated.moments();
    let mean_term = (&mu_r - &mu_g).norm_squared();
    let sr = sqrt_psd(&cov_r);
    let inner = &sr * &cov_g * &sr;
    // inner is symmetric up to roundoff; symmetrize before eigen.
    let inner = (&inner + inner.transpose()) * 0.5;
    let eig = SymmetricEigen::new(inner);
    let trace_sqrt: f64 = eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).sum();
    let trace_term = cov_r.trace() + cov_g.trace() - 2.0 * trace_sqrt;
    Ok((mean_term + trace_term).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn random_set(n: usize, d: usize, rng: &mut SeededRng, shift: f64) -> FeatureSet {
        let rows = (0..n)
            .map(|_| (0..d).map(|_| rng.normal() + shift).collect())
            .collect();
        FeatureSet::new(rows).unwrap()
    }

    #[test]
    fn identical_sets_are_zero() {
        let mut rng = SeededRng::new(3, "fvd");
        let a = random_set(40, 8, &mut rng, 0.0);
        let b = FeatureSet::new(a.rows.clone()).unwrap();
        assert!(fvd(&a, &b).unwrap() <= 1e-6);
    }

    #[test]
    fn symmetric_within_tolerance() {
        let mut rng = SeededRng::new(5, "fvd");
        let a = random_set(30, 6, &mut rng, 0.0);
        let b = random_set(25, 6, &mut rng, 0.4);
        let ab = fvd(&a, &b).unwrap();
        let ba = fvd(&b, &a).unwrap();
        assert!(ab > 0.1);
        assert!((ab - ba).abs() <= 1e-6, "{ab} vs {ba}");
    }

    #[test]
    fn equal_covariances_reduce_to_mean_shift() {
        let mut rng = SeededRng::new(7, "fvd");
        let a = random_set(20, 4, &mut rng, 0.0);
        let delta = [0.5, -0.25, 1.0, 0.0];
        let rows = a
            .rows
            .iter()
            .map(|r| r.iter().zip(delta).map(|(&v, d)| v + d).collect())
            .collect();
        let b = FeatureSet::new(rows).unwrap();
        let want: f64 = delta.iter().map(|d| d * d).sum();
        let got = fvd(&a, &b).unwrap();
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }

    #[test]
    fn one_dimensional_closed_form() {
        let mut rng = SeededRng::new(9, "fvd");
        let a = random_set(200, 1, &mut rng, 0.3);
        let b = random_set(150, 1, &mut rng, -0.2);
        let stats = |s: &FeatureSet| {
            let n = s.rows.len() as f64;
            let mu: f64 = s.rows.iter().map(|r| r[0]).sum::<f64>() / n;
            let var: f64 =
                s.rows.iter().map(|r| (r[0] - mu).powi(2)).sum::<f64>() / (n - 1.0);
            (mu, (var + FVD_SHRINKAGE).sqrt())
        };
        let (m1, s1) = stats(&a);
        let (m2, s2) = stats(&b);
        let want = (m1 - m2).powi(2) + (s1 - s2).powi(2);
        let got = fvd(&a, &b).unwrap();
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }

    #[test]
    fn input_contracts() {
        assert!(FeatureSet::new(vec![vec![1.0]]).is_err());
        assert!(FeatureSet::new(vec![vec![1.0], vec![1.0, 2.0]]).is_err());
        let mut rng = SeededRng::new(11, "fvd");
        let a = random_set(10, 3, &mut rng, 0.0);
        let b = random_set(10, 4, &mut rng, 0.0);
        assert!(matches!(fvd(&a, &b), Err(Error::Dim(_))));
    }

    #[test]
    fn nonnegative_under_degenerate_covariance() {
        // Constant rows: covariance is pure shrinkage; distance is the mean
        // gap and never negative.
        let a = FeatureSet::new(vec![vec![1.0, 2.0]; 5]).unwrap();
        let b = FeatureSet::new(vec![vec![1.0, 2.5]; 7]).unwrap();
        let got = fvd(&a, &b).unwrap();
        assert!(got >= 0.0);
        assert!((got - 0.25).abs() < 1e-6);
    }
}
