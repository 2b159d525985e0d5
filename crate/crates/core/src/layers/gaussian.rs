//! Gaussian heads over LSTM outputs, reparameterized sampling, and the
//! diagonal-Gaussian KL divergence of the training objective.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::graph::Var;
use crate::tensor::Tensor;

use super::{conv3, init_conv, VarMap};

pub const LOG_SIGMA_MIN: f32 = -10.0;
pub const LOG_SIGMA_MAX: f32 = 2.0;

#[derive(Clone)]
pub struct GaussianParams {
    /// mu_phi(t) or mu_psi(t): [B, z_dim, Hb, Wb]
    pub mean: Var,
    /// log sigma, clamped to [-10, 2]
    pub log_sigma: Var,
}

pub fn init_gaussian_head(
    store: &mut BTreeMap<String, Tensor>,
    prefix: &str,
    cin: usize,
    z_dim: usize,
    rng: &SeededRng,
) {
    init_conv(store, &format!("{prefix}.mean"), z_dim, cin, 3, rng);
    init_conv(store, &format!("{prefix}.logs"), z_dim, cin, 3, rng);
}

/// Two parallel 3x3 convs produce mean and clamped log_sigma.
pub fn gaussian_head(vars: &VarMap, prefix: &str, x: &Var) -> Result<GaussianParams> {
    let mean = conv3(vars, &format!("{prefix}.mean"), x)?;
    let log_sigma = conv3(vars, &format!("{prefix}.logs"), x)?.clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX);
    Ok(GaussianParams { mean, log_sigma })
}

/// z = mean + exp(log_sigma) .* eps for a caller-supplied noise map;
/// differentiable w.r.t. mean and log_sigma.
pub fn sample_with_eps(g: &GaussianParams, eps: &Var) -> Result<Var> {
    if eps.shape() != g.mean.shape() {
        return Err(Error::dim(format!(
            "eps shape {:?} != mean shape {:?}",
            eps.shape(),
            g.mean.shape()
        )));
    }
    g.mean.add(&g.log_sigma.exp().mul(eps)?)
}

/// Draws eps ~ N(0,1) from the latent stream and reparameterizes.
pub fn sample_reparameterized(g: &GaussianParams, rng: &mut SeededRng) -> Result<Var> {
    let eps = Var::constant(Tensor::randn(g.mean.shape(), 1.0, rng));
    sample_with_eps(g, &eps)
}

/// Sum over all latent elements of
///   log(sigma_p/sigma_q) + (sigma_q^2 + (mu_q - mu_p)^2) / (2 sigma_p^2) - 1/2
/// expressed through exp of log-sigma differences (no ln/div graph ops).
pub fn kl_diag_gaussians(q: &GaussianParams, p: &GaussianParams) -> Result<Var> {
    if q.mean.shape() != p.mean.shape() || q.log_sigma.shape() != p.log_sigma.shape() {
        return Err(Error::dim(format!(
            "KL shapes differ: q {:?}/{:?} vs p {:?}/{:?}",
            q.mean.shape(),
            q.log_sigma.shape(),
            p.mean.shape(),
            p.log_sigma.shape()
        )));
    }
    // log(sigma_p / sigma_q)
    let t1 = p.log_sigma.sub(&q.log_sigma)?;
    // sigma_q^2 / (2 sigma_p^2) = exp(2 (lsq - lsp)) / 2
    let t2 = q.log_sigma.sub(&p.log_sigma)?.scale(2.0).exp().scale(0.5);
    // (mu_q - mu_p)^2 / (2 sigma_p^2)
    let d = q.mean.sub(&p.mean)?;
    let t3 = d.mul(&d)?.mul(&p.log_sigma.scale(-2.0).exp())?.scale(0.5);
    t1.add(&t2)?.add(&t3)?.add_scalar(-0.5).sum_all()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::check_gradients;

    fn params_from(mean: Vec<f32>, log_sigma: Vec<f32>, shape: &[usize]) -> GaussianParams {
        GaussianParams {
            mean: Var::leaf(Tensor::new(shape, mean).unwrap()),
            log_sigma: Var::leaf(Tensor::new(shape, log_sigma).unwrap()),
        }
    }

    #[test]
    fn kl_of_identical_distributions_is_zero() {
        let mut rng = SeededRng::new(30, "kl");
        let shape = [2, 4, 3, 3];
        let mean = Tensor::randn(&shape, 1.0, &mut rng);
        let ls = Tensor::randn(&shape, 0.5, &mut rng);
        let q = GaussianParams {
            mean: Var::constant(mean.clone()),
            log_sigma: Var::constant(ls.clone()),
        };
        let p = GaussianParams {
            mean: Var::constant(mean),
            log_sigma: Var::constant(ls),
        };
        let kl = kl_diag_gaussians(&q, &p).unwrap();
        assert_eq!(kl.value().item().unwrap(), 0.0);
    }

    #[test]
    fn kl_closed_forms() {
        // one element, mu_q=0 mu_p=1, sigmas 1 -> 1/2
        let q = params_from(vec![0.0], vec![0.0], &[1, 1, 1, 1]);
        let p = params_from(vec![1.0], vec![0.0], &[1, 1, 1, 1]);
        let kl = kl_diag_gaussians(&q, &p).unwrap().value().item().unwrap();
        assert!((kl - 0.5).abs() < 1e-7, "{kl}");

        // sigma_q=2, sigma_p=1, means equal -> ln(1/2) + 2 - 1/2 = 0.80685...
        let q = params_from(vec![0.3], vec![(2.0f32).ln()], &[1, 1, 1, 1]);
        let p = params_from(vec![0.3], vec![0.0], &[1, 1, 1, 1]);
        let kl = kl_diag_gaussians(&q, &p).unwrap().value().item().unwrap();
        let want = (0.5f64).ln() + 2.0 - 0.5;
        assert!((kl as f64 - want).abs() < 1e-6, "{kl} vs {want}");
    }

    #[test]
    fn kl_nonnegative_over_random_draws() {
        let mut rng = SeededRng::new(31, "kl");
        for _ in 0..1000 {
            let shape = [1, 2, 2, 2];
            let q = GaussianParams {
                mean: Var::constant(Tensor::randn(&shape, 1.5, &mut rng)),
                log_sigma: Var::constant(Tensor::randn(&shape, 1.0, &mut rng)),
            };
            let p = GaussianParams {
                mean: Var::constant(Tensor::randn(&shape, 1.5, &mut rng)),
                log_sigma: Var::constant(Tensor::randn(&shape, 1.0, &mut rng)),
            };
            let kl = kl_diag_gaussians(&q, &p).unwrap().value().item().unwrap();
            assert!(kl >= -1e-9, "negative KL {kl}");
        }
    }

    #[test]
    fn head_zero_params_give_unit_prior() {
        let z_dim = 3;
        let mut store = BTreeMap::new();
        store.insert("h.mean.w".to_string(), Tensor::zeros(&[z_dim, 4, 3, 3]));
        store.insert("h.mean.b".to_string(), Tensor::zeros(&[z_dim]));
        store.insert("h.logs.w".to_string(), Tensor::zeros(&[z_dim, 4, 3, 3]));
        store.insert("h.logs.b".to_string(), Tensor::zeros(&[z_dim]));
        let vars = VarMap::bind(&store, false);
        let mut rng = SeededRng::new(32, "data");
        let x = Var::constant(Tensor::randn(&[1, 4, 2, 2], 1.0, &mut rng));
        let g = gaussian_head(&vars, "h", &x).unwrap();
        assert!(g.mean.value().data().iter().all(|&v| v == 0.0));
        assert!(g.log_sigma.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn log_sigma_clamps_at_two() {
        let z_dim = 1;
        let mut store = BTreeMap::new();
        store.insert("h.mean.w".to_string(), Tensor::zeros(&[z_dim, 1, 3, 3]));
        store.insert("h.mean.b".to_string(), Tensor::zeros(&[z_dim]));
        store.insert("h.logs.w".to_string(), Tensor::zeros(&[z_dim, 1, 3, 3]));
        store.insert("h.logs.b".to_string(), Tensor::new(&[z_dim], vec![5.0]).unwrap());
        let vars = VarMap::bind(&store, false);
        let x = Var::constant(Tensor::zeros(&[1, 1, 2, 2]));
        let g = gaussian_head(&vars, "h", &x).unwrap();
        assert!(g.log_sigma.value().data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn sampling_limits() {
        let shape = [1, 2, 2, 2];
        let mean = Tensor::new(&shape, (0..8).map(|i| i as f32 * 0.1).collect()).unwrap();
        let g = GaussianParams {
            mean: Var::constant(mean.clone()),
            log_sigma: Var::constant(Tensor::zeros(&shape)),
        };
        // eps forced to zero -> z = mean
        let z = sample_with_eps(&g, &Var::constant(Tensor::zeros(&shape))).unwrap();
        assert!(z.value().bitwise_eq(&mean));
        // log_sigma = -10 -> z within 5e-5 of mean; seed chosen so all eps
        // draws stay within one sigma (exp(-10) ~ 4.5e-5)
        let tiny = GaussianParams {
            mean: Var::constant(mean.clone()),
            log_sigma: Var::constant(Tensor::full(&shape, -10.0)),
        };
        let mut rng = SeededRng::new(36, "latent");
        let z = sample_reparameterized(&tiny, &mut rng).unwrap();
        for (zv, mv) in z.value().data().iter().zip(mean.data()) {
            assert!((zv - mv).abs() < 5e-5, "{zv} vs {mv}");
        }
    }

    #[test]
    fn sampling_monte_carlo_moments() {
        let n = 100_000;
        let shape = [1, 1, 1, n];
        let g = GaussianParams {
            mean: Var::constant(Tensor::zeros(&shape)),
            log_sigma: Var::constant(Tensor::zeros(&shape)),
        };
        let mut rng = SeededRng::new(34, "latent");
        let z = sample_reparameterized(&g, &mut rng).unwrap();
        let data = z.value().data();
        let mean: f64 = data.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        let var: f64 = data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.03, "var {var}");
    }

    #[test]
    fn gradients_flow_through_head_and_kl() {
        // raw log_sigma values stay inside the clamp interval with margin
        let mut rng = SeededRng::new(35, "gc");
        let shape = [1, 2, 2, 2];
        let n = 8;
        let mk = |rng: &mut SeededRng, lo: f64, hi: f64| {
            Var::leaf(Tensor::new(&shape, (0..n).map(|_| rng.uniform(lo, hi) as f32).collect()).unwrap())
        };
        let (qm, qls) = (mk(&mut rng, -1.0, 1.0), mk(&mut rng, -1.5, 0.5));
        let (pm, pls) = (mk(&mut rng, -1.0, 1.0), mk(&mut rng, -1.5, 0.5));
        let q = GaussianParams {
            mean: qm.clone(),
            log_sigma: qls.clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX),
        };
        let p = GaussianParams {
            mean: pm.clone(),
            log_sigma: pls.clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX),
        };
        let eps = Var::constant(Tensor::randn(&shape, 1.0, &mut rng));
        let z = sample_with_eps(&q, &eps).unwrap();
        let loss = kl_diag_gaussians(&q, &p)
            .unwrap()
            .add(&z.mul(&z).unwrap().sum_all().unwrap())
            .unwrap();
        let wrts = [
            ("q.mean", &qm),
            ("q.log_sigma", &qls),
            ("p.mean", &pm),
            ("p.log_sigma", &pls),
        ];
        for (name, err) in check_gradients(&loss, &wrts, 1e-3, 1e-3).unwrap() {
            assert!(err < 1e-4, "{name}: {err:.3e}");
        }
    }
}
