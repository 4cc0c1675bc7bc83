use nalgebra::{Cholesky, SMatrix, SVector};
use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::par::{self, Execution};

use super::LfdError;

/// `(t, x, y, z, alpha, beta, theta)`.
pub type Point7 = SVector<f64, 7>;
pub type Mat7 = SMatrix<f64, 7, 7>;

/// Diagonal regularization, as a fraction of each dimension's data variance.
pub const EPSILON_FACTOR: f64 = 1e-6;

/// Minimum points per component.
const POINTS_PER_COMPONENT: usize = 8;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Gaussian mixture over `(t, h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    pub priors: Vec<f64>,
    pub means: Vec<Point7>,
    pub covariances: Vec<Mat7>,
    /// Regularization factor (see [`EPSILON_FACTOR`]).
    pub epsilon: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmmOptions {
    /// Stop when the mean per-point log-likelihood improves by less.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub epsilon: f64,
}

impl Default for GmmOptions {
    fn default() -> Self {
        GmmOptions {
            tolerance: 1e-8,
            max_iterations: 500,
            epsilon: EPSILON_FACTOR,
        }
    }
}

struct Component {
    log_norm: f64,
    chol: Cholesky<f64, nalgebra::Const<7>>,
}

impl Component {
    fn new(cov: &Mat7, index: usize) -> Result<Self, LfdError> {
        let chol = Cholesky::new(*cov).ok_or(LfdError::SingularComponent(index))?;
        let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(Component {
            log_norm: -0.5 * (7.0 * LN_2PI + log_det),
            chol,
        })
    }

    fn log_density(&self, mean: &Point7, x: &Point7) -> f64 {
        let d = x - mean;
        let y = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&d)
            .expect("cholesky factor has a positive diagonal");
        self.log_norm - 0.5 * y.norm_squared()
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl GmmModel {
    pub fn k(&self) -> usize {
        self.priors.len()
    }

    fn components(&self) -> Result<Vec<Component>, LfdError> {
        self.covariances
            .iter()
            .enumerate()
            .map(|(k, c)| Component::new(c, k))
            .collect()
    }

    /// Mean per-point log-likelihood.
    pub fn mean_log_likelihood(&self, points: &[Point7]) -> Result<f64, LfdError> {
        let comps = self.components()?;
        let log_pi: Vec<f64> = self.priors.iter().map(|p| p.ln()).collect();
        let mut buf = vec![0.0; self.k()];
        let mut total = 0.0;
        for x in points {
            for k in 0..self.k() {
                buf[k] = log_pi[k] + comps[k].log_density(&self.means[k], x);
            }
            total += log_sum_exp(&buf);
        }
        Ok(total / points.len() as f64)
    }

    /// Checks priors sum to one and covariances are symmetric positive
    /// definite.
    pub fn validate(&self) -> Result<(), LfdError> {
        let k = self.k();
        if k == 0 || self.means.len() != k || self.covariances.len() != k {
            return Err(LfdError::InvalidArgument("inconsistent component counts".into()));
        }
        let s: f64 = self.priors.iter().sum();
        if (s - 1.0).abs() > 1e-9 || self.priors.iter().any(|p| !(*p > 0.0)) {
            return Err(LfdError::InvalidArgument(format!("priors sum to {s}")));
        }
        for (i, c) in self.covariances.iter().enumerate() {
            if (c - c.transpose()).amax() > 1e-9 * c.amax().max(1.0) {
                return Err(LfdError::SingularComponent(i));
            }
            Component::new(c, i)?;
        }
        Ok(())
    }
}

/// Per-dimension population variance.
fn dim_variance(points: &[Point7]) -> Point7 {
    let n = points.len() as f64;
    let mean = points.iter().sum::<Point7>() / n;
    points
        .iter()
        .map(|p| (p - mean).component_mul(&(p - mean)))
        .sum::<Point7>()
        / n
}

fn sample_covariance(points: &[Point7], weights: &[f64], mean: &Point7, total: f64) -> Mat7 {
    let mut cov = Mat7::zeros();
    for (p, w) in points.iter().zip(weights) {
        if *w > 0.0 {
            let d = p - mean;
            cov += (*w / total) * d * d.transpose();
        }
    }
    cov
}

/// k-means++ seeding plus a few Lloyd iterations on standardized data;
/// returns hard labels.
fn kmeans_labels(points: &[Point7], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let var = dim_variance(points);
    let scale = var.map(|v| if v > 0.0 { 1.0 / v.sqrt() } else { 1.0 });
    let z: Vec<Point7> = points.iter().map(|p| p.component_mul(&scale)).collect();

    let mut centres = vec![z[rng.gen_range(0..z.len())]];
    let mut d2: Vec<f64> = z.iter().map(|p| (p - centres[0]).norm_squared()).collect();
    while centres.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.gen_range(0.0..total);
            let mut pick = z.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if r < *d {
                    pick = i;
                    break;
                }
                r -= d;
            }
            pick
        } else {
            rng.gen_range(0..z.len())
        };
        centres.push(z[next]);
        for (d, p) in d2.iter_mut().zip(&z) {
            *d = d.min((p - z[next]).norm_squared());
        }
    }

    let mut labels = vec![0usize; z.len()];
    for _ in 0..20 {
        let mut changed = false;
        for (l, p) in labels.iter_mut().zip(&z) {
            let best = (0..k)
                .map(|c| (c, (p - centres[c]).norm_squared()))
                .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a })
                .0;
            if best != *l {
                *l = best;
                changed = true;
            }
        }
        for (c, centre) in centres.iter_mut().enumerate() {
            let members: Vec<&Point7> =
                z.iter().zip(&labels).filter(|(_, l)| **l == c).map(|(p, _)| p).collect();
            if !members.is_empty() {
                *centre = members.iter().copied().sum::<Point7>() / members.len() as f64;
            }
        }
        if !changed {
            break;
        }
    }
    labels
}

/// Fits a `k`-component GMM with EM; deterministic for a given seed.
pub fn fit_gmm(points: &[Point7], k: usize, seed: u64) -> Result<GmmModel, LfdError> {
    fit_gmm_traced(points, k, seed, GmmOptions::default()).map(|(m, _)| m)
}

/// [`fit_gmm`] with explicit options; also returns the mean per-point
/// log-likelihood after every EM iteration.
pub fn fit_gmm_traced(
    points: &[Point7],
    k: usize,
    seed: u64,
    options: GmmOptions,
) -> Result<(GmmModel, Vec<f64>), LfdError> {
    if k == 0 {
        return Err(LfdError::InvalidArgument("K must be at least 1".into()));
    }
    let needed = k * POINTS_PER_COMPONENT;
    if points.len() < needed {
        return Err(LfdError::TooFewPoints {
            needed,
            got: points.len(),
        });
    }
    let n = points.len();
    let global_var = dim_variance(points);
    let reg = Mat7::from_diagonal(&global_var.map(|v| {
        let e = options.epsilon * v;
        if e > 0.0 {
            e
        } else {
            options.epsilon.max(1e-12)
        }
    }));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = kmeans_labels(points, k, &mut rng);
    let global_mean = points.iter().sum::<Point7>() / n as f64;
    let global_cov = sample_covariance(points, &vec![1.0; n], &global_mean, n as f64);

    let mut model = GmmModel {
        priors: vec![0.0; k],
        means: vec![global_mean; k],
        covariances: vec![global_cov + reg; k],
        epsilon: options.epsilon,
        seed,
    };
    for c in 0..k {
        let w: Vec<f64> = labels.iter().map(|&l| if l == c { 1.0 } else { 0.0 }).collect();
        let nk: f64 = w.iter().sum();
        model.priors[c] = nk.max(1.0) / n as f64;
        if nk >= 2.0 {
            let mean = points.iter().zip(&w).map(|(p, w)| p * *w).sum::<Point7>() / nk;
            model.means[c] = mean;
            model.covariances[c] = sample_covariance(points, &w, &mean, nk) + reg;
        }
    }
    let s: f64 = model.priors.iter().sum();
    model.priors.iter_mut().for_each(|p| *p /= s);

    let mut resp = vec![vec![0.0; n]; k];
    let mut history = Vec::new();
    let mut prev = f64::NEG_INFINITY;
    let mut buf = vec![0.0; k];
    for _ in 0..options.max_iterations {
        // E-step
        let comps = model.components()?;
        let log_pi: Vec<f64> = model.priors.iter().map(|p| p.ln()).collect();
        let mut ll = 0.0;
        for (i, x) in points.iter().enumerate() {
            for c in 0..k {
                buf[c] = log_pi[c] + comps[c].log_density(&model.means[c], x);
            }
            let lse = log_sum_exp(&buf);
            ll += lse;
            for c in 0..k {
                resp[c][i] = (buf[c] - lse).exp();
            }
        }
        let ll = ll / n as f64;
        if !ll.is_finite() {
            return Err(LfdError::SingularComponent(0));
        }
        // The covariance floor makes the M-step a slightly perturbed
        // maximizer, so near convergence the likelihood can dip by a tiny
        // amount; the first non-improving step ends the iteration.
        history.push(ll);
        if ll - prev < options.tolerance {
            break;
        }
        prev = ll;

        // M-step
        for c in 0..k {
            let nk: f64 = resp[c].iter().sum();
            if nk < 1e-10 {
                // empty component: keep its parameters, vanishing weight
                model.priors[c] = 1e-300;
                continue;
            }
            let mean = points
                .iter()
                .zip(&resp[c])
                .map(|(p, r)| p * *r)
                .sum::<Point7>()
                / nk;
            let cov = sample_covariance(points, &resp[c], &mean, nk);
            model.priors[c] = nk / n as f64;
            model.means[c] = mean;
            model.covariances[c] = 0.5 * (cov + cov.transpose()) + reg;
        }
        let s: f64 = model.priors.iter().sum();
        model.priors.iter_mut().for_each(|p| *p /= s);
    }
    Ok((model, history))
}

/// Held-out mean log-likelihood for each candidate `K` (5-fold CV unless
/// `folds` says otherwise), in candidate order.
pub fn select_k_scored(
    points: &[Point7],
    candidates: &[usize],
    folds: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<(usize, f64)>, LfdError> {
    if candidates.is_empty() || folds < 2 {
        return Err(LfdError::InvalidArgument(
            "need at least one candidate and two folds".into(),
        ));
    }
    let max_k = *candidates.iter().max().expect("non-empty");
    let needed = folds * max_k * POINTS_PER_COMPONENT;
    if points.len() < needed {
        return Err(LfdError::TooFewPoints {
            needed,
            got: points.len(),
        });
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let fold_of: Vec<usize> = {
        let mut f = vec![0; points.len()];
        for (rank, &i) in order.iter().enumerate() {
            f[i] = rank % folds;
        }
        f
    };
    let jobs: Vec<(usize, usize)> = candidates
        .iter()
        .flat_map(|&k| (0..folds).map(move |f| (k, f)))
        .collect();
    let scores = par::map_slice(exec, &jobs, |&(k, f)| -> Result<f64, LfdError> {
        let train: Vec<Point7> = points
            .iter()
            .zip(&fold_of)
            .filter(|(_, &g)| g != f)
            .map(|(p, _)| *p)
            .collect();
        let test: Vec<Point7> = points
            .iter()
            .zip(&fold_of)
            .filter(|(_, &g)| g == f)
            .map(|(p, _)| *p)
            .collect();
        let model = fit_gmm(&train, k, seed.wrapping_add(f as u64))?;
        model.mean_log_likelihood(&test)
    });
    let mut out = Vec::with_capacity(candidates.len());
    for (ci, &k) in candidates.iter().enumerate() {
        let mut sum = 0.0;
        for f in 0..folds {
            sum += scores[ci * folds + f].clone()?;
        }
        out.push((k, sum / folds as f64));
    }
    Ok(out)
}

/// Chooses `K` by cross-validated held-out log-likelihood; ties go to the
/// smaller `K`.
pub fn select_k(
    points: &[Point7],
    candidates: &[usize],
    folds: usize,
    seed: u64,
    exec: Execution,
) -> Result<usize, LfdError> {
    let scored = select_k_scored(points, candidates, folds, seed, exec)?;
    let mut best = scored[0];
    for &(k, s) in &scored[1..] {
        if s > best.1 || (s == best.1 && k < best.0) {
            best = (k, s);
        }
    }
    Ok(best.0)
}
