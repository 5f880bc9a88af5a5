//! Density models with analytic derivatives.
//!
//! Both model kinds are sums of Gaussian terms. Evaluation runs in log space:
//! each term contributes a log-weight `l_i`, the gradient of its log `a_i` and
//! the Hessian of its log `B_i`. With softmax weights `w_i = exp(l_i - L)`,
//!
//! ```text
//! p      = e^L * sum w_i
//! grad p = e^L * sum w_i a_i
//! hess p = e^L * sum w_i (a_i a_i^T + B_i)
//! ```
//!
//! so the same accumulators also give `log p` and its derivatives without
//! underflow in the tails or in high dimension.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{all_finite, max_asymmetry, sym_eigenvalues, sym_spectral_norm, Point};

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Densities below this are treated as zero when forming ratios.
pub const DENSITY_FLOOR: f64 = 1e-300;

/// Density, gradient and Hessian at a point.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub density: f64,
    pub gradient: Point,
    pub hessian: DMatrix<f64>,
}

/// `log p`, `grad log p` and `hess log p` at a point.
#[derive(Clone, Debug)]
pub struct LogEvaluation {
    pub log_density: f64,
    pub gradient: Point,
    pub hessian: DMatrix<f64>,
}

/// Uniform interface over the ground-truth mixture and the kernel estimate.
///
/// Methods assume `x.len() == self.dim()` and finite coordinates; the checked
/// entry points are [`gm_eval`], [`kde_eval`] and [`checked_eval`].
pub trait DensityModel: Send + Sync {
    fn dim(&self) -> usize;

    fn log_density(&self, x: &Point) -> f64;

    /// `(log p, grad log p)`.
    fn log_gradient(&self, x: &Point) -> (f64, Point);

    fn log_eval(&self, x: &Point) -> LogEvaluation;

    fn density(&self, x: &Point) -> f64 {
        self.log_density(x).exp()
    }

    /// `(p, grad p)`.
    fn gradient(&self, x: &Point) -> (f64, Point) {
        let (lp, g) = self.log_gradient(x);
        let p = lp.exp();
        (p, g * p)
    }

    fn eval(&self, x: &Point) -> Evaluation {
        let le = self.log_eval(x);
        let p = le.log_density.exp();
        let hessian = (&le.hessian + &le.gradient * le.gradient.transpose()) * p;
        Evaluation { density: p, gradient: le.gradient * p, hessian }
    }
}

fn check_point(dim: usize, x: &Point) -> Result<()> {
    if x.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: x.len() });
    }
    if !all_finite(x.as_slice()) {
        return Err(Error::NonFinite("evaluation point".into()));
    }
    Ok(())
}

/// Evaluates any model after validating the point.
pub fn checked_eval(model: &dyn DensityModel, x: &Point) -> Result<Evaluation> {
    check_point(model.dim(), x)?;
    Ok(model.eval(x))
}

// ---------------------------------------------------------------------------
// Gaussian mixture
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
struct Component {
    weight: f64,
    mean: Point,
    cov: DMatrix<f64>,
    chol_lower: DMatrix<f64>,
    precision: DMatrix<f64>,
    /// log(weight) + log N normalizer.
    log_scale: f64,
}

/// Finite mixture of full-covariance Gaussians.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMixture {
    dim: usize,
    components: Vec<Component>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Point>, covariances: Vec<DMatrix<f64>>) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::invalid("mixture needs at least one component"));
        }
        if means.len() != k || covariances.len() != k {
            return Err(Error::invalid(format!(
                "mixture has {k} weights, {} means and {} covariances",
                means.len(),
                covariances.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::invalid("mixture weights must be strictly positive"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("mixture weights sum to {total}, not 1")));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        let mut components = Vec::with_capacity(k);
        for (j, ((weight, mean), cov)) in weights.into_iter().zip(means).zip(covariances).enumerate() {
            if mean.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: mean.len() });
            }
            if !all_finite(mean.as_slice()) || !all_finite(cov.as_slice()) {
                return Err(Error::NonFinite(format!("component {j}")));
            }
            if cov.nrows() != dim || cov.ncols() != dim {
                return Err(Error::invalid(format!("covariance {j} is {}x{}, expected {dim}x{dim}", cov.nrows(), cov.ncols())));
            }
            let asym = max_asymmetry(&cov);
            if asym >= 1e-12 {
                return Err(Error::invalid(format!("covariance {j} is not symmetric (asymmetry {asym:e})")));
            }
            let min_eig = sym_eigenvalues(&cov)[0];
            if min_eig <= 0.0 {
                return Err(Error::invalid(format!("covariance {j} is not positive definite (min eigenvalue {min_eig:e})")));
            }
            let chol = Cholesky::<f64, Dyn>::new(cov.clone())
                .ok_or_else(|| Error::invalid(format!("covariance {j} has no Cholesky factor")))?;
            let chol_lower = chol.l();
            let log_det: f64 = 2.0 * chol_lower.diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let precision = chol.inverse();
            let precision = (&precision + precision.transpose()) * 0.5;
            let log_scale = weight.ln() - 0.5 * (dim as f64 * LN_2PI + log_det);
            components.push(Component { weight, mean, cov, chol_lower, precision, log_scale });
        }
        Ok(Self { dim, components })
    }

    /// Mixture whose components all have covariance `sigma^2 I`.
    pub fn spherical(weights: Vec<f64>, means: Vec<Point>, sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::invalid("sigma must be positive"));
        }
        let d = means.first().map_or(0, |m| m.len());
        let covs = vec![DMatrix::identity(d, d) * (sigma * sigma); means.len()];
        Self::new(weights, means, covs)
    }

    /// Equal-weight two-component mixture with means `±separation/2 · e_1`
    /// and identity covariances.
    pub fn symmetric_pair(dim: usize, separation: f64) -> Result<Self> {
        let mut a = DVector::zeros(dim);
        a[0] = -separation / 2.0;
        let b = -a.clone();
        Self::spherical(vec![0.5, 0.5], vec![a, b], 1.0)
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    pub fn means(&self) -> Vec<Point> {
        self.components.iter().map(|c| c.mean.clone()).collect()
    }

    pub fn covariances(&self) -> Vec<DMatrix<f64>> {
        self.components.iter().map(|c| c.cov.clone()).collect()
    }

    /// Common `sigma` if every covariance equals `sigma^2 I` exactly.
    pub fn spherical_sigma(&self) -> Option<f64> {
        let s2 = self.components[0].cov[(0, 0)];
        let ident = DMatrix::<f64>::identity(self.dim, self.dim) * s2;
        self.components.iter().all(|c| (&c.cov - &ident).abs().max() == 0.0).then(|| s2.sqrt())
    }

    /// i.i.d. draws: component by weight, then `mean + L z`.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Point> {
        (0..n).map(|_| self.sample_one(rng).1).collect()
    }

    /// One draw together with its component index.
    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, Point) {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut j = self.components.len() - 1;
        for (i, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                j = i;
                break;
            }
        }
        let c = &self.components[j];
        let z = DVector::from_fn(self.dim, |_, _| StandardNormal.sample(rng));
        (j, &c.mean + &c.chol_lower * z)
    }

    /// The exact expectation of the Gaussian-kernel estimate at bandwidth `h`:
    /// the same mixture with every covariance inflated by `h^2 I`.
    pub fn smooth(&self, h: f64) -> Result<Self> {
        if !(h.is_finite() && h >= 0.0) {
            return Err(Error::invalid("smoothing bandwidth must be non-negative"));
        }
        if h == 0.0 {
            return Ok(self.clone());
        }
        let add = DMatrix::<f64>::identity(self.dim, self.dim) * (h * h);
        Self::new(self.weights(), self.means(), self.covariances().into_iter().map(|c| c + &add).collect())
    }

    /// Applies `x -> rotation * x + shift` to the whole mixture.
    pub fn transformed(&self, rotation: &DMatrix<f64>, shift: &Point) -> Result<Self> {
        let means = self.components.iter().map(|c| rotation * &c.mean + shift).collect();
        let covs = self
            .components
            .iter()
            .map(|c| {
                let m = rotation * &c.cov * rotation.transpose();
                (&m + m.transpose()) * 0.5
            })
            .collect();
        Self::new(self.weights(), means, covs)
    }

    /// Same mixture with components listed in `order`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let weights = order.iter().map(|&i| self.components[i].weight).collect();
        let means = order.iter().map(|&i| self.components[i].mean.clone()).collect();
        let covs = order.iter().map(|&i| self.components[i].cov.clone()).collect();
        Self::new(weights, means, covs)
    }

    fn log_terms(&self, x: &Point) -> (Vec<f64>, Vec<Point>) {
        let mut logs = Vec::with_capacity(self.components.len());
        let mut slopes = Vec::with_capacity(self.components.len());
        for c in &self.components {
            let r = x - &c.mean;
            let s = &c.precision * &r;
            logs.push(c.log_scale - 0.5 * r.dot(&s));
            slopes.push(-s);
        }
        (logs, slopes)
    }
}

fn softmax_in_place(logs: &mut [f64]) -> (f64, f64) {
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for l in logs.iter_mut() {
        *l = (*l - max).exp();
        sum += *l;
    }
    (max, sum)
}

impl DensityModel for GaussianMixture {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, x: &Point) -> f64 {
        let (mut logs, _) = self.log_terms(x);
        let (max, sum) = softmax_in_place(&mut logs);
        max + sum.ln()
    }

    fn log_gradient(&self, x: &Point) -> (f64, Point) {
        let (mut logs, slopes) = self.log_terms(x);
        let (max, sum) = softmax_in_place(&mut logs);
        let mut g = DVector::zeros(self.dim);
        for (w, a) in logs.iter().zip(&slopes) {
            g.axpy(*w / sum, a, 1.0);
        }
        (max + sum.ln(), g)
    }

    fn log_eval(&self, x: &Point) -> LogEvaluation {
        let (mut logs, slopes) = self.log_terms(x);
        let (max, sum) = softmax_in_place(&mut logs);
        let d = self.dim;
        let mut g = DVector::zeros(d);
        let mut second = DMatrix::zeros(d, d);
        for ((w, a), c) in logs.iter().zip(&slopes).zip(&self.components) {
            let w = *w / sum;
            g.axpy(w, a, 1.0);
            second.ger(w, a, a, 1.0);
            second -= &c.precision * w;
        }
        second.ger(-1.0, &g, &g, 1.0);
        LogEvaluation { log_density: max + sum.ln(), gradient: g, hessian: second }
    }
}

/// Checked mixture evaluation.
pub fn gm_eval(gm: &GaussianMixture, x: &Point) -> Result<Evaluation> {
    checked_eval(gm, x)
}

// ---------------------------------------------------------------------------
// Kernel density estimate
// ---------------------------------------------------------------------------

/// Gaussian-kernel density estimate with the full `(2 pi)^{-d/2} h^{-d}`
/// normalizer, so it integrates to one.
#[derive(Clone, Debug)]
pub struct KernelDensityEstimate {
    dim: usize,
    bandwidth: f64,
    samples: Vec<Point>,
    flat: Vec<f64>,
    log_norm: f64,
}

impl KernelDensityEstimate {
    pub fn new(samples: Vec<Point>, bandwidth: f64) -> Result<Self> {
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(Error::invalid(format!("bandwidth must be positive, got {bandwidth}")));
        }
        let dim = samples.first().map(|s| s.len()).ok_or_else(|| Error::invalid("KDE needs at least one sample"))?;
        if dim == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        let mut flat = Vec::with_capacity(samples.len() * dim);
        for s in &samples {
            if s.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: s.len() });
            }
            if !all_finite(s.as_slice()) {
                return Err(Error::NonFinite("KDE sample".into()));
            }
            flat.extend_from_slice(s.as_slice());
        }
        let n = samples.len() as f64;
        let log_norm = -n.ln() - 0.5 * dim as f64 * LN_2PI - dim as f64 * bandwidth.ln();
        Ok(Self { dim, bandwidth, samples, flat, log_norm })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn samples(&self) -> &[Point] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub(crate) fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.flat.chunks_exact(self.dim)
    }

    /// Unnormalized log kernel values `-|x - X_i|^2 / (2h^2)`.
    pub(crate) fn log_kernels(&self, x: &[f64]) -> Vec<f64> {
        let scale = -0.5 / (self.bandwidth * self.bandwidth);
        self.rows().map(|row| scale * crate::linalg::dist2(x, row)).collect()
    }

    pub(crate) fn log_norm(&self) -> f64 {
        self.log_norm
    }
}

impl DensityModel for KernelDensityEstimate {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, x: &Point) -> f64 {
        let mut logs = self.log_kernels(x.as_slice());
        let (max, sum) = softmax_in_place(&mut logs);
        self.log_norm + max + sum.ln()
    }

    fn log_gradient(&self, x: &Point) -> (f64, Point) {
        let mut logs = self.log_kernels(x.as_slice());
        let (max, sum) = softmax_in_place(&mut logs);
        let h2 = self.bandwidth * self.bandwidth;
        let xs = x.as_slice();
        let mut g = vec![0.0; self.dim];
        for (w, row) in logs.iter().zip(self.rows()) {
            for k in 0..self.dim {
                g[k] += w * (row[k] - xs[k]);
            }
        }
        let g = DVector::from_iterator(self.dim, g.into_iter().map(|v| v / (sum * h2)));
        (self.log_norm + max + sum.ln(), g)
    }

    fn log_eval(&self, x: &Point) -> LogEvaluation {
        let mut logs = self.log_kernels(x.as_slice());
        let (max, sum) = softmax_in_place(&mut logs);
        let d = self.dim;
        let h2 = self.bandwidth * self.bandwidth;
        let xs = x.as_slice();
        let mut g = DVector::zeros(d);
        let mut second = DMatrix::zeros(d, d);
        let mut a = DVector::zeros(d);
        for (w, row) in logs.iter().zip(self.rows()) {
            let w = w / sum;
            if w == 0.0 {
                continue;
            }
            for k in 0..d {
                a[k] = (row[k] - xs[k]) / h2;
            }
            g.axpy(w, &a, 1.0);
            second.ger(w, &a, &a, 1.0);
        }
        for k in 0..d {
            second[(k, k)] -= 1.0 / h2;
        }
        second.ger(-1.0, &g, &g, 1.0);
        LogEvaluation { log_density: self.log_norm + max + sum.ln(), gradient: g, hessian: second }
    }
}

/// Checked KDE evaluation.
pub fn kde_eval(kde: &KernelDensityEstimate, x: &Point) -> Result<Evaluation> {
    checked_eval(kde, x)
}

// ---------------------------------------------------------------------------
// Discrepancies
// ---------------------------------------------------------------------------

/// Probe-set maxima of the value, gradient and Hessian gaps between two models.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Discrepancy {
    pub eta0: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub eta: f64,
}

impl Discrepancy {
    pub fn new(eta0: f64, eta1: f64, eta2: f64) -> Self {
        Self { eta0, eta1, eta2, eta: eta0.max(eta1).max(eta2) }
    }
}

/// Maxima over `probe` of `|p - q|`, `|grad p - grad q|_2` and the spectral
/// norm of the Hessian difference.
pub fn sup_discrepancy(p: &dyn DensityModel, q: &dyn DensityModel, probe: &[Point]) -> Result<Discrepancy> {
    if probe.is_empty() {
        return Err(Error::invalid("probe set is empty"));
    }
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch { expected: p.dim(), got: q.dim() });
    }
    for x in probe {
        check_point(p.dim(), x)?;
    }
    let (e0, e1, e2) = probe
        .par_iter()
        .map(|x| {
            let a = p.eval(x);
            let b = q.eval(x);
            ((a.density - b.density).abs(), (&a.gradient - &b.gradient).norm(), sym_spectral_norm(&(&a.hessian - &b.hessian)))
        })
        .reduce(|| (0.0, 0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1), a.2.max(b.2)));
    Ok(Discrepancy::new(e0, e1, e2))
}

/// Default probe set: the data, any extra points (e.g. model means) and, for
/// `d <= 2`, a regular grid over the data bounding box padded by `3h` with
/// `per_axis` points per axis.
pub fn probe_set(data: &[Point], extra: &[Point], h: f64, per_axis: usize) -> Vec<Point> {
    let mut probe: Vec<Point> = data.iter().chain(extra).cloned().collect();
    let Some(d) = probe.first().map(|p| p.len()) else {
        return probe;
    };
    if d <= 2 && per_axis >= 2 && !data.is_empty() {
        let (lo, hi) = bounding_box(data);
        let lo: Vec<f64> = lo.iter().map(|v| v - 3.0 * h).collect();
        let hi: Vec<f64> = hi.iter().map(|v| v + 3.0 * h).collect();
        probe.extend(grid_points(&lo, &hi, per_axis));
    }
    probe
}

pub fn bounding_box(points: &[Point]) -> (Vec<f64>, Vec<f64>) {
    let d = points[0].len();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for p in points {
        for k in 0..d {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    (lo, hi)
}

/// Regular grid with `per_axis` points per axis, first axis varying slowest.
pub fn grid_points(lo: &[f64], hi: &[f64], per_axis: usize) -> Vec<Point> {
    let d = lo.len();
    let total = per_axis.pow(d as u32);
    (0..total)
        .map(|mut idx| {
            let mut coords = vec![0.0; d];
            for k in (0..d).rev() {
                let i = idx % per_axis;
                idx /= per_axis;
                coords[k] = lo[k] + (hi[k] - lo[k]) * i as f64 / (per_axis - 1) as f64;
            }
            DVector::from_vec(coords)
        })
        .collect()
}

/// Monte Carlo total variation `1/2 int |p - q|` using the identity
/// `TV = E_p[(1 - q(X)/p(X))_+]` with `X ~ p`. Returns `(estimate, stderr)`.
pub fn total_variation_mc<R: Rng + ?Sized>(p: &GaussianMixture, q: &dyn DensityModel, draws: usize, rng: &mut R) -> (f64, f64) {
    let xs = p.sample(draws, rng);
    let terms: Vec<f64> = xs
        .par_iter()
        .map(|x| {
            let ratio = (q.log_density(x) - p.log_density(x)).exp();
            (1.0 - ratio).max(0.0)
        })
        .collect();
    mean_and_stderr(&terms)
}

/// Sample mean and standard error (NaN stderr for fewer than two values).
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use approx::assert_abs_diff_eq;
    use nalgebra::dvector;

    fn std_normal_1d() -> GaussianMixture {
        GaussianMixture::spherical(vec![1.0], vec![dvector![0.0]], 1.0).unwrap()
    }

    #[test]
    fn standard_normal_at_origin() {
        let e = gm_eval(&std_normal_1d(), &dvector![0.0]).unwrap();
        let inv_sqrt_2pi = 0.398_942_280_401_432_7;
        assert_abs_diff_eq!(e.density, inv_sqrt_2pi, epsilon = 1e-15);
        assert_abs_diff_eq!(e.gradient[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(e.hessian[(0, 0)], -inv_sqrt_2pi, epsilon = 1e-15);
    }

    #[test]
    fn symmetric_pair_origin_is_saddle() {
        let gm = GaussianMixture::symmetric_pair(2, 5.0).unwrap();
        let e = gm_eval(&gm, &dvector![0.0, 0.0]).unwrap();
        assert!(e.gradient.norm() < 1e-15);
        let ev = sym_eigenvalues(&e.hessian);
        assert!(ev[0] < 0.0 && ev[1] > 0.0, "{ev:?}");
    }

    #[test]
    fn rejects_bad_mixtures() {
        let m = vec![dvector![0.0]];
        assert!(GaussianMixture::new(vec![0.9], m.clone(), vec![DMatrix::identity(1, 1)]).is_err());
        assert!(GaussianMixture::new(vec![1.0], m.clone(), vec![DMatrix::from_element(1, 1, -1.0)]).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(GaussianMixture::new(vec![1.0], vec![dvector![0.0, 0.0]], vec![asym]).is_err());
        assert!(GaussianMixture::new(vec![0.5, 0.5], vec![dvector![0.0], dvector![0.0, 1.0]], vec![DMatrix::identity(1, 1); 2])
            .is_err());
    }

    #[test]
    fn eval_rejects_dimension_mismatch_and_nan() {
        let gm = std_normal_1d();
        assert!(matches!(gm_eval(&gm, &dvector![0.0, 1.0]), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(gm_eval(&gm, &dvector![f64::NAN]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn sampling_moments_and_determinism() {
        let gm = std_normal_1d();
        let n = 100_000;
        let xs = gm.sample(n, &mut RngStream::from_seed(11));
        let vals: Vec<f64> = xs.iter().map(|x| x[0]).collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        assert!(mean.abs() < 4.0 / (n as f64).sqrt());
        // sd of the sample variance is sqrt(2/n) for a standard normal
        assert!((var - 1.0).abs() < 4.0 * (2.0 / n as f64).sqrt());
        let again = gm.sample(n, &mut RngStream::from_seed(11));
        assert!(xs.iter().zip(&again).all(|(a, b)| a[0].to_bits() == b[0].to_bits()));
    }

    #[test]
    fn component_counts_are_binomial() {
        let gm = GaussianMixture::symmetric_pair(2, 5.0).unwrap();
        let n = 100_000;
        let mut rng = RngStream::from_seed(5);
        let ones = (0..n).filter(|_| gm.sample_one(&mut rng).0 == 0).count() as f64;
        assert!((ones - n as f64 / 2.0).abs() < 4.0 * (n as f64 * 0.25).sqrt());
    }

    #[test]
    fn single_sample_kde_is_the_kernel() {
        let kde = KernelDensityEstimate::new(vec![dvector![0.0]], 1.0).unwrap();
        let e = kde_eval(&kde, &dvector![0.0]).unwrap();
        assert_abs_diff_eq!(e.density, 0.398_942_280_401_432_7, epsilon = 1e-15);
    }

    #[test]
    fn two_sample_kde_symmetric() {
        let kde = KernelDensityEstimate::new(vec![dvector![-1.0], dvector![1.0]], 1.0).unwrap();
        let e = kde_eval(&kde, &dvector![0.0]).unwrap();
        assert_abs_diff_eq!(e.gradient[0], 0.0, epsilon = 1e-16);
        assert_abs_diff_eq!(kde.density(&dvector![0.7]), kde.density(&dvector![-0.7]), epsilon = 1e-16);
    }

    #[test]
    fn kde_rejects_bad_input() {
        assert!(KernelDensityEstimate::new(vec![], 1.0).is_err());
        assert!(KernelDensityEstimate::new(vec![dvector![0.0]], 0.0).is_err());
        assert!(KernelDensityEstimate::new(vec![dvector![0.0], dvector![0.0, 1.0]], 1.0).is_err());
        let kde = KernelDensityEstimate::new(vec![dvector![0.0]], 1.0).unwrap();
        assert!(kde_eval(&kde, &dvector![0.0, 0.0]).is_err());
    }

    #[test]
    fn smoothing_closed_forms() {
        let gm = std_normal_1d();
        let same = gm.smooth(0.0).unwrap();
        assert_eq!(same.covariances()[0][(0, 0)], 1.0);
        let s = gm.smooth(1.0).unwrap();
        assert_abs_diff_eq!(s.density(&dvector![0.0]), 1.0 / (4.0 * std::f64::consts::PI).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn smoothing_matches_numerical_convolution() {
        // trapezoid convolution of the 1-d mixture with N(0, h^2) on a fine grid
        let gm = GaussianMixture::new(
            vec![0.3, 0.7],
            vec![dvector![-1.5], dvector![2.0]],
            vec![DMatrix::from_element(1, 1, 0.6), DMatrix::from_element(1, 1, 1.7)],
        )
        .unwrap();
        let h = 0.4;
        let smooth = gm.smooth(h).unwrap();
        let step = 1e-3;
        for &x in &[-3.0, -1.0, 0.0, 0.5, 2.2, 4.0] {
            let mut acc = 0.0;
            let m = (12.0 / step) as i64;
            for i in -m..=m {
                let u = i as f64 * step;
                let w = if i.abs() == m { 0.5 } else { 1.0 };
                let k = (-u * u / (2.0 * h * h)).exp() / (h * (2.0 * std::f64::consts::PI).sqrt());
                acc += w * k * gm.density(&dvector![x - u]);
            }
            acc *= step;
            assert!((acc - smooth.density(&dvector![x])).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn discrepancy_identity_and_normal_pair() {
        let p = std_normal_1d();
        let probe: Vec<Point> = (0..=1000).map(|i| dvector![-5.0 + 0.01 * i as f64]).collect();
        let same = sup_discrepancy(&p, &p, &probe).unwrap();
        assert_eq!((same.eta0, same.eta1, same.eta2), (0.0, 0.0, 0.0));

        let q = p.smooth(1.0).unwrap();
        // grid scan oracle for the location of max |p - q|
        let (arg, _) = probe.iter().map(|x| (x[0], (p.density(x) - q.density(x)).abs())).fold((0.0, -1.0), |acc, v| {
            if v.1 > acc.1 {
                v
            } else {
                acc
            }
        });
        assert_abs_diff_eq!(arg, 0.0, epsilon = 1e-9);
        let disc = sup_discrepancy(&p, &q, &probe).unwrap();
        assert_abs_diff_eq!(disc.eta0, 0.398_942_280_401_432_7 - 0.282_094_791_773_878_1, epsilon = 1e-12);
        assert_eq!(disc.eta, disc.eta0.max(disc.eta1).max(disc.eta2));
        assert!(sup_discrepancy(&p, &q, &[]).is_err());
    }

    #[test]
    fn log_space_survives_far_tails() {
        let gm = std_normal_1d();
        let (lp, g) = gm.log_gradient(&dvector![60.0]);
        assert_abs_diff_eq!(lp, -0.5 * LN_2PI - 1800.0, epsilon = 1e-9);
        assert_abs_diff_eq!(g[0], -60.0, epsilon = 1e-12);
        assert_eq!(gm.density(&dvector![60.0]), 0.0);
    }

    #[test]
    fn probe_grid_dimensions() {
        let data = vec![dvector![0.0, 0.0], dvector![1.0, 2.0]];
        let probe = probe_set(&data, &[], 0.5, 10);
        assert_eq!(probe.len(), 2 + 100);
        let data5 = vec![DVector::zeros(5)];
        assert_eq!(probe_set(&data5, &data5, 0.5, 10).len(), 2);
    }
}
