use nalgebra::{SMatrix, SVector};

use super::GmmModel;

pub type Vec6 = SVector<f64, 6>;
pub type Mat6 = SMatrix<f64, 6, 6>;

#[derive(Debug, Clone, PartialEq)]
pub struct GmrOutput {
    pub mu_h: Vec6,
    pub sigma_hh: Mat6,
    /// Component responsibilities `beta_k(t)`.
    pub beta: Vec<f64>,
}

/// `beta_k(t) = pi_k N(t | mu_t,k, S_tt,k) / sum_j pi_j N(t | mu_t,j, S_tt,j)`,
/// evaluated in the log domain so far-away queries do not underflow.
pub fn gmr_weights(model: &GmmModel, t: f64) -> Vec<f64> {
    let logs: Vec<f64> = (0..model.k())
        .map(|k| {
            let var = model.covariances[k][(0, 0)];
            let d = t - model.means[k][0];
            model.priors[k].ln() - 0.5 * (var.ln() + d * d / var)
        })
        .collect();
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// Gaussian mixture regression of `h` on `t`.
///
/// `mu_h = sum beta_k (mu_h,k + S_ht,k S_tt,k^-1 (t - mu_t,k))` and
/// `Sigma_hh = sum beta_k^2 (S_hh,k - S_ht,k S_tt,k^-1 S_th,k)`.
pub fn gmr(model: &GmmModel, t: f64) -> GmrOutput {
    let beta = gmr_weights(model, t);
    let mut mu_h = Vec6::zeros();
    let mut sigma_hh = Mat6::zeros();
    for (k, b) in beta.iter().enumerate() {
        let mean = &model.means[k];
        let cov = &model.covariances[k];
        let s_tt = cov[(0, 0)];
        let s_ht: Vec6 = cov.fixed_view::<6, 1>(1, 0).into();
        let s_hh: Mat6 = cov.fixed_view::<6, 6>(1, 1).into();
        let mu_hk: Vec6 = mean.fixed_rows::<6>(1).into();
        mu_h += *b * (mu_hk + s_ht * ((t - mean[0]) / s_tt));
        let cond = s_hh - s_ht * s_ht.transpose() / s_tt;
        sigma_hh += (b * b) * cond;
    }
    GmrOutput {
        mu_h,
        sigma_hh: 0.5 * (sigma_hh + sigma_hh.transpose()),
        beta,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lfd::gmm::{Mat7, Point7};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_model(rng: &mut ChaCha8Rng, k: usize) -> GmmModel {
        let mut priors: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..1.0)).collect();
        let s: f64 = priors.iter().sum();
        priors.iter_mut().for_each(|p| *p /= s);
        let means = (0..k)
            .map(|_| Point7::from_fn(|_, _| rng.gen_range(-5.0..5.0)))
            .collect();
        let covariances = (0..k)
            .map(|_| {
                let a = Mat7::from_fn(|_, _| rng.gen_range(-1.0..1.0));
                a * a.transpose() + Mat7::identity() * 0.05
            })
            .collect();
        GmmModel {
            priors,
            means,
            covariances,
            epsilon: 0.0,
            seed: 0,
        }
    }

    #[test]
    fn single_component_is_conditional_gaussian() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let m = random_model(&mut rng, 1);
        let c = &m.covariances[0];
        for i in 0..20 {
            let t = -5.0 + i as f64 * 0.5;
            let out = gmr(&m, t);
            for r in 0..6 {
                let expect = m.means[0][r + 1] + c[(r + 1, 0)] / c[(0, 0)] * (t - m.means[0][0]);
                assert!((out.mu_h[r] - expect).abs() < 1e-9);
                for s in 0..6 {
                    let e = c[(r + 1, s + 1)] - c[(r + 1, 0)] * c[(0, s + 1)] / c[(0, 0)];
                    assert!((out.sigma_hh[(r, s)] - e).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn weights_normalized_and_covariance_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let k = rng.gen_range(1..6);
            let m = random_model(&mut rng, k);
            for _ in 0..20 {
                let t = rng.gen_range(-50.0..50.0);
                let out = gmr(&m, t);
                let s: f64 = out.beta.iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
                assert!(out.beta.iter().all(|b| (0.0..=1.0).contains(b)));
                let ev = out.sigma_hh.symmetric_eigenvalues();
                assert!(ev.min() >= -1e-10);
            }
        }
    }

    #[test]
    fn far_query_does_not_underflow() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let m = random_model(&mut rng, 3);
        let out = gmr(&m, 1e6);
        assert!(out.mu_h.iter().all(|x| x.is_finite()));
        assert!((out.beta.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
