use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    free_parameters, log_sum_exp, FitReport, Gaussian, MixtureModel, COV_REGULARIZATION, DEFAULT_MAX_ITER, DEFAULT_TOL,
    LN_2PI,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub seed: u64,
    /// Stop once the relative log-likelihood improvement falls below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { seed: 0, tol: DEFAULT_TOL, max_iter: DEFAULT_MAX_ITER }
    }
}

/// Fits a `k`-component full-covariance mixture by EM with k-means++ seeding.
pub fn em_fit(
    data: &[DVector<f64>],
    k: usize,
    seed: u64,
    tol: f64,
    max_iter: usize,
) -> Result<(MixtureModel, FitReport)> {
    em_fit_with(data, k, &FitOptions { seed, tol, max_iter })
}

pub fn em_fit_with(data: &[DVector<f64>], k: usize, opts: &FitOptions) -> Result<(MixtureModel, FitReport)> {
    if k == 0 {
        return Err(Error::invalid("component count must be >= 1"));
    }
    if opts.max_iter == 0 {
        return Err(Error::invalid("max_iter must be >= 1"));
    }
    let flat = Flat::new(data)?;
    if flat.n < k {
        return Err(Error::NotEnoughData { needed: k, got: flat.n });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let centers = kmeans_pp(&flat, k, &mut rng);
    let global = flat.covariance();

    let mut resp = hard_assignment(&flat, &centers);
    let mut params = m_step(&flat, &resp, k, &Fallback::Centers(&centers, &global));
    let mut ll = e_step(&flat, &params, &mut resp)?;
    let mut trace = vec![ll];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iter {
        let next = m_step(&flat, &resp, k, &Fallback::Previous(&params));
        let next_ll = e_step(&flat, &next, &mut resp)?;
        let gain = next_ll - ll;
        if gain < 0.0 {
            // the ridge added after the M-step can push an already converged
            // fit slightly downhill: keep the better parameters
            converged = true;
            break;
        }
        iterations += 1;
        trace.push(next_ll);
        params = next;
        ll = next_ll;
        if gain < opts.tol * ll.abs().max(1.0) {
            converged = true;
            break;
        }
    }

    let model = params.into_model()?;
    let p = free_parameters(k, flat.d) as f64;
    let bic = -2.0 * ll + p * (flat.n as f64).ln();
    Ok((model, FitReport { log_likelihood: ll, iterations, converged, bic, trace }))
}

/// Row-major copy of the data set for tight inner loops.
struct Flat {
    n: usize,
    d: usize,
    x: Vec<f64>,
}

impl Flat {
    fn new(data: &[DVector<f64>]) -> Result<Self> {
        let n = data.len();
        if n == 0 {
            return Err(Error::NotEnoughData { needed: 1, got: 0 });
        }
        let d = data[0].len();
        if d == 0 {
            return Err(Error::invalid("data dimension must be >= 1"));
        }
        let mut x = Vec::with_capacity(n * d);
        for v in data {
            if v.len() != d {
                return Err(Error::DimensionMismatch { expected: d, actual: v.len() });
            }
            if v.iter().any(|c| !c.is_finite()) {
                return Err(Error::NonFinite("mixture data"));
            }
            x.extend(v.iter());
        }
        Ok(Flat { n, d, x })
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    fn mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.d];
        for i in 0..self.n {
            for (m, v) in mean.iter_mut().zip(self.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= self.n as f64);
        mean
    }

    fn covariance(&self) -> DMatrix<f64> {
        let d = self.d;
        let mean = self.mean();
        let mut cov = DMatrix::zeros(d, d);
        for i in 0..self.n {
            let r = self.row(i);
            for a in 0..d {
                for b in 0..=a {
                    cov[(a, b)] += (r[a] - mean[a]) * (r[b] - mean[b]);
                }
            }
        }
        for a in 0..d {
            for b in 0..=a {
                let v = cov[(a, b)] / self.n as f64;
                cov[(a, b)] = v;
                cov[(b, a)] = v;
            }
            cov[(a, a)] += COV_REGULARIZATION;
        }
        cov
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeans_pp(flat: &Flat, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(flat.row(rng.random_range(0..flat.n)).to_vec());
    let mut d2: Vec<f64> = (0..flat.n).map(|i| sq_dist(flat.row(i), &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = flat.n - 1;
            for (i, w) in d2.iter().enumerate() {
                if *w > 0.0 && target < *w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            // rounding can run past the end; step back to a point with mass
            while d2[pick] == 0.0 && pick > 0 {
                pick -= 1;
            }
            pick
        } else {
            rng.random_range(0..flat.n)
        };
        let c = flat.row(idx).to_vec();
        for (i, w) in d2.iter_mut().enumerate() {
            *w = w.min(sq_dist(flat.row(i), &c));
        }
        centers.push(c);
    }
    centers
}

fn hard_assignment(flat: &Flat, centers: &[Vec<f64>]) -> Vec<f64> {
    let k = centers.len();
    let mut resp = vec![0.0; flat.n * k];
    for i in 0..flat.n {
        let r = flat.row(i);
        let best = (0..k).min_by(|&a, &b| sq_dist(r, &centers[a]).total_cmp(&sq_dist(r, &centers[b]))).unwrap_or(0);
        resp[i * k + best] = 1.0;
    }
    resp
}

struct Params {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    covs: Vec<DMatrix<f64>>,
}

impl Params {
    fn from_model(m: &MixtureModel) -> Self {
        Params {
            weights: m.weights().to_vec(),
            means: m.components().iter().map(|g| g.mean().as_slice().to_vec()).collect(),
            covs: m.components().iter().map(|g| g.cov().clone()).collect(),
        }
    }

    fn into_model(self) -> Result<MixtureModel> {
        let comps = self
            .means
            .into_iter()
            .zip(self.covs)
            .map(|(m, c)| Gaussian::new_unchecked(DVector::from_vec(m), c))
            .collect();
        MixtureModel::new(self.weights, comps)
    }
}

enum Fallback<'a> {
    Centers(&'a [Vec<f64>], &'a DMatrix<f64>),
    Previous(&'a Params),
}

/// Components whose total responsibility falls below this keep their previous shape.
const MIN_MASS: f64 = 1e-10;

fn m_step(flat: &Flat, resp: &[f64], k: usize, fallback: &Fallback) -> Params {
    let (n, d) = (flat.n, flat.d);
    let mut mass = vec![0.0; k];
    let mut means = vec![vec![0.0; d]; k];
    for i in 0..n {
        let r = flat.row(i);
        for c in 0..k {
            let w = resp[i * k + c];
            mass[c] += w;
            for (m, v) in means[c].iter_mut().zip(r) {
                *m += w * v;
            }
        }
    }
    let mut covs = Vec::with_capacity(k);
    for c in 0..k {
        if mass[c] < MIN_MASS {
            let (m, cov) = match fallback {
                Fallback::Centers(centers, global) => (centers[c].clone(), (*global).clone()),
                Fallback::Previous(p) => (p.means[c].clone(), p.covs[c].clone()),
            };
            means[c] = m;
            covs.push(cov);
            mass[c] = MIN_MASS;
            continue;
        }
        means[c].iter_mut().for_each(|m| *m /= mass[c]);
        let mu = &means[c];
        let mut cov = DMatrix::zeros(d, d);
        for i in 0..n {
            let w = resp[i * k + c];
            if w == 0.0 {
                continue;
            }
            let r = flat.row(i);
            for a in 0..d {
                let da = w * (r[a] - mu[a]);
                for b in 0..=a {
                    cov[(a, b)] += da * (r[b] - mu[b]);
                }
            }
        }
        for a in 0..d {
            for b in 0..=a {
                let v = cov[(a, b)] / mass[c];
                cov[(a, b)] = v;
                cov[(b, a)] = v;
            }
            cov[(a, a)] += COV_REGULARIZATION;
        }
        covs.push(cov);
    }
    let total: f64 = mass.iter().sum();
    let weights = mass.iter().map(|m| m / total).collect();
    Params { weights, means, covs }
}

/// Fills `resp` with posterior responsibilities and returns the data log-likelihood.
fn e_step(flat: &Flat, params: &Params, resp: &mut [f64]) -> Result<f64> {
    resp.iter_mut().for_each(|r| *r = 0.0);
    add_log_densities(flat, params, resp)?;
    normalize_responsibilities(&params.weights, resp)
}

/// Adds `log N(x_i | mu_c, cov_c)` to `acc[i * k + c]`.
fn add_log_densities(flat: &Flat, params: &Params, acc: &mut [f64]) -> Result<()> {
    let (n, d) = (flat.n, flat.d);
    let k = params.means.len();
    // Lower Cholesky factor per component, row-major, plus log normaliser.
    let mut factors = Vec::with_capacity(k);
    let mut offsets = Vec::with_capacity(k);
    for c in 0..k {
        let chol = Cholesky::new(params.covs[c].clone()).ok_or(Error::NotPositiveDefinite)?;
        let l = chol.l();
        let mut flat_l = vec![0.0; d * d];
        let mut log_det = 0.0;
        for a in 0..d {
            for b in 0..=a {
                flat_l[a * d + b] = l[(a, b)];
            }
            log_det += 2.0 * l[(a, a)].ln();
        }
        factors.push(flat_l);
        offsets.push(-0.5 * (log_det + d as f64 * LN_2PI));
    }

    let mut z = vec![0.0; d];
    for i in 0..n {
        let r = flat.row(i);
        for c in 0..k {
            let l = &factors[c];
            let mu = &params.means[c];
            let mut maha = 0.0;
            for a in 0..d {
                let mut s = r[a] - mu[a];
                for b in 0..a {
                    s -= l[a * d + b] * z[b];
                }
                z[a] = s / l[a * d + a];
                maha += z[a] * z[a];
            }
            acc[i * k + c] += offsets[c] - 0.5 * maha;
        }
    }
    Ok(())
}

/// Turns per-component log densities into responsibilities in place and
/// returns the log-likelihood.
fn normalize_responsibilities(weights: &[f64], acc: &mut [f64]) -> Result<f64> {
    let k = weights.len();
    let log_w: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
    let mut ll = 0.0;
    for row in acc.chunks_mut(k) {
        for (t, lw) in row.iter_mut().zip(&log_w) {
            *t += lw;
        }
        let lse = log_sum_exp(row);
        ll += lse;
        for t in row.iter_mut() {
            *t = (*t - lse).exp();
        }
    }
    if !ll.is_finite() {
        return Err(Error::NonFinite("log-likelihood"));
    }
    Ok(ll)
}

/// Starting assignment for [`em_fit_joint`].
#[derive(Debug, Clone, Copy)]
pub enum JointInit<'a> {
    /// k-means++ (seeded by `FitOptions::seed`) on the first view.
    KMeansPP,
    /// Responsibilities of an existing model on the first view.
    Model(&'a MixtureModel),
    /// Hard component label per row.
    Labels(&'a [usize]),
}

/// EM for mixtures that share one latent assignment across several views of
/// the same samples: row `i` of every view belongs to the same draw, and a
/// component's responsibility is driven by the product of its densities in
/// all views.
pub fn em_fit_joint(
    views: &[Vec<DVector<f64>>],
    k: usize,
    opts: &FitOptions,
    init: JointInit<'_>,
) -> Result<(Vec<MixtureModel>, FitReport)> {
    if views.is_empty() {
        return Err(Error::invalid("joint fit needs at least one view"));
    }
    if k == 0 {
        return Err(Error::invalid("component count must be >= 1"));
    }
    if opts.max_iter == 0 {
        return Err(Error::invalid("max_iter must be >= 1"));
    }
    let flats: Vec<Flat> = views.iter().map(|v| Flat::new(v)).collect::<Result<_>>()?;
    let n = flats[0].n;
    if let Some(f) = flats.iter().find(|f| f.n != n) {
        return Err(Error::DimensionMismatch { expected: n, actual: f.n });
    }
    if n < k {
        return Err(Error::NotEnoughData { needed: k, got: n });
    }

    let mut resp = match init {
        JointInit::Model(m) => {
            if m.k() != k {
                return Err(Error::DimensionMismatch { expected: k, actual: m.k() });
            }
            if m.dim() != flats[0].d {
                return Err(Error::DimensionMismatch { expected: flats[0].d, actual: m.dim() });
            }
            let p = Params::from_model(m);
            let mut r = vec![0.0; n * k];
            e_step(&flats[0], &p, &mut r)?;
            r
        }
        JointInit::KMeansPP => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let centers = kmeans_pp(&flats[0], k, &mut rng);
            hard_assignment(&flats[0], &centers)
        }
        JointInit::Labels(labels) => {
            if labels.len() != n {
                return Err(Error::DimensionMismatch { expected: n, actual: labels.len() });
            }
            let mut r = vec![0.0; n * k];
            for (i, &c) in labels.iter().enumerate() {
                if c >= k {
                    return Err(Error::IndexOutOfRange { index: c, len: k });
                }
                r[i * k + c] = 1.0;
            }
            r
        }
    };

    let m_all = |resp: &[f64], prev: Option<&[Params]>| -> Vec<Params> {
        flats
            .iter()
            .enumerate()
            .map(|(j, f)| match prev {
                Some(p) => m_step(f, resp, k, &Fallback::Previous(&p[j])),
                None => {
                    let cov = f.covariance();
                    let centers = vec![f.mean(); k];
                    m_step(f, resp, k, &Fallback::Centers(&centers, &cov))
                }
            })
            .collect()
    };
    let joint_e = |params: &[Params], resp: &mut [f64]| -> Result<f64> {
        resp.iter_mut().for_each(|r| *r = 0.0);
        for (f, p) in flats.iter().zip(params) {
            add_log_densities(f, p, resp)?;
        }
        normalize_responsibilities(&params[0].weights, resp)
    };

    let mut params = m_all(&resp, None);
    let mut ll = joint_e(&params, &mut resp)?;
    let mut trace = vec![ll];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        let next = m_all(&resp, Some(&params));
        let next_ll = joint_e(&next, &mut resp)?;
        let gain = next_ll - ll;
        if gain < 0.0 {
            converged = true;
            break;
        }
        iterations += 1;
        trace.push(next_ll);
        params = next;
        ll = next_ll;
        if gain < opts.tol * ll.abs().max(1.0) {
            converged = true;
            break;
        }
    }

    let p: usize = (k - 1) + flats.iter().map(|f| free_parameters(k, f.d) - (k - 1)).sum::<usize>();
    let bic = -2.0 * ll + p as f64 * (n as f64).ln();
    let models = params.into_iter().map(Params::into_model).collect::<Result<_>>()?;
    Ok((models, FitReport { log_likelihood: ll, iterations, converged, bic, trace }))
}
