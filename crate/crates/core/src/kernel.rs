//! Gaussian kernels, kernel expansions over ancestor centers and the
//! low-rank representer basis used by the semi-parametric fitters.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

/// Gaussian kernel `k(u, v) = exp{-(u - v)^2 / (2 l^2)}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Kernel {
    bandwidth: f64,
}

impl Kernel {
    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(Error::invalid(format!("kernel bandwidth must be positive, got {bandwidth}")));
        }
        Ok(Kernel { bandwidth })
    }

    /// Gaussian kernel with the median-heuristic bandwidth of `points`.
    pub fn from_median(points: &[f64]) -> Result<Self> {
        Self::gaussian(median_bandwidth(points)?)
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    #[inline]
    pub fn eval(&self, u: f64, v: f64) -> f64 {
        let d = (u - v) / self.bandwidth;
        (-0.5 * d * d).exp()
    }

    pub fn gram(&self, points: &[f64]) -> DMatrix<f64> {
        let n = points.len();
        DMatrix::from_fn(n, n, |i, j| self.eval(points[i], points[j]))
    }

    pub fn cross(&self, rows: &[f64], cols: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), cols.len(), |i, j| self.eval(rows[i], cols[j]))
    }
}

/// `chi(u) = sum_t alpha_t k(u, center_t)`.
#[derive(Debug, Clone, Serialize)]
pub struct KernelExpansion {
    centers: Vec<f64>,
    alpha: Vec<f64>,
    kernel: Kernel,
}

impl KernelExpansion {
    pub fn new(kernel: Kernel, centers: Vec<f64>, alpha: Vec<f64>) -> Result<Self> {
        if centers.len() != alpha.len() {
            return Err(Error::LengthMismatch { expected: centers.len(), got: alpha.len() });
        }
        if alpha.iter().chain(&centers).any(|v| !v.is_finite()) {
            return Err(Error::numerical("kernel expansion has non-finite entries"));
        }
        Ok(KernelExpansion { centers, alpha, kernel })
    }

    pub fn zero(kernel: Kernel, centers: Vec<f64>) -> Self {
        let alpha = vec![0.0; centers.len()];
        KernelExpansion { centers, alpha, kernel }
    }

    /// Expansion interpolating `values` at `centers` (jittered Gram solve).
    pub fn interpolate(kernel: Kernel, centers: Vec<f64>, values: &[f64]) -> Result<Self> {
        if centers.len() != values.len() {
            return Err(Error::LengthMismatch { expected: centers.len(), got: values.len() });
        }
        let ch = jittered_cholesky(&kernel.gram(&centers))?;
        let alpha = ch.solve(&DVector::from_column_slice(values));
        Self::new(kernel, centers, alpha.iter().copied().collect())
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    pub fn eval(&self, u: f64) -> f64 {
        self.centers.iter().zip(&self.alpha).map(|(&c, &a)| a * self.kernel.eval(u, c)).sum()
    }

    /// Squared RKHS norm `alpha^T K alpha`.
    pub fn rkhs_norm_sq(&self) -> Result<f64> {
        let k = self.kernel.gram(&self.centers);
        let a = DVector::from_column_slice(&self.alpha);
        let q = a.dot(&(&k * &a));
        let scale = a.norm_squared() * k.diagonal().amax().max(1.0);
        if q < -1e-10 * scale.max(1e-300) {
            return Err(Error::numerical(format!("Gram matrix is not positive semi-definite (alpha^T K alpha = {q})")));
        }
        Ok(q.max(0.0))
    }
}

/// Relative jitter added to a Gram diagonal before factorisation.
pub const GRAM_JITTER: f64 = 1e-10;

pub(crate) fn jittered_cholesky(gram: &DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let n = gram.nrows().max(1);
    let jitter = GRAM_JITTER * gram.trace() / n as f64;
    let mut k = gram.clone();
    for i in 0..k.nrows() {
        k[(i, i)] += jitter;
    }
    k.cholesky()
        .ok_or_else(|| Error::numerical("Gram matrix is not positive definite after jitter"))
}

/// Maximum number of ancestors used by [`median_bandwidth`].
pub const MEDIAN_SUBSAMPLE: usize = 1000;

/// Median of pairwise absolute differences among (up to 1000 subsampled)
/// points. The subsample is drawn with a fixed seed, so the result is a
/// deterministic function of the input.
pub fn median_bandwidth(points: &[f64]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::invalid("median bandwidth needs at least two points"));
    }
    let chosen: Vec<f64> = if points.len() > MEDIAN_SUBSAMPLE {
        let mut rng = ChaCha8Rng::seed_from_u64(0x6d65_6469_616e);
        sample_indices(&mut rng, points.len(), MEDIAN_SUBSAMPLE).into_iter().map(|i| points[i]).collect()
    } else {
        points.to_vec()
    };
    let mut diffs = Vec::with_capacity(chosen.len() * (chosen.len() - 1) / 2);
    for i in 0..chosen.len() {
        for j in (i + 1)..chosen.len() {
            diffs.push((chosen[i] - chosen[j]).abs());
        }
    }
    diffs.sort_by(|a, b| a.total_cmp(b));
    let m = diffs.len();
    let med = if m % 2 == 1 { diffs[m / 2] } else { 0.5 * (diffs[m / 2 - 1] + diffs[m / 2]) };
    if med <= 0.0 {
        if diffs[m - 1] <= 0.0 {
            return Err(Error::invalid("median bandwidth undefined: all points identical"));
        }
        // More than half the pairs coincide; fall back to the smallest positive gap.
        let pos = diffs.iter().copied().find(|&d| d > 0.0).unwrap_or(diffs[m - 1]);
        return Ok(pos);
    }
    Ok(med)
}

/// Tolerance on the residual kernel diagonal at which pivoting stops.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

/// Representer basis over a set of centers, reduced by pivoted Cholesky.
///
/// For centers `c_1..c_n` with Gram matrix `K`, greedy pivoting picks the
/// subset `P` until the residual diagonal drops below [`PIVOT_TOLERANCE`].
/// Then `K[:, P] = L L_P^T` exactly, so for `chi = sum_{p in P} a_p k(., c_p)`
/// with `beta = L_P^T a` one has `chi(c_t) = (L beta)_t` and
/// `||chi||_H^2 = |beta|^2`.
#[derive(Debug, Clone)]
pub struct RepresenterBasis {
    kernel: Kernel,
    centers: Vec<f64>,
    pivots: Vec<usize>,
    /// `n x r` factor.
    factor: DMatrix<f64>,
    /// Rows of `factor` at the pivots, `r x r` lower triangular.
    pivot_block: DMatrix<f64>,
}

impl RepresenterBasis {
    pub fn new(kernel: Kernel, centers: Vec<f64>) -> Result<Self> {
        let n = centers.len();
        if n == 0 {
            return Err(Error::invalid("representer basis needs at least one center"));
        }
        let mut diag = vec![1.0_f64; n];
        let mut cols: Vec<Vec<f64>> = Vec::new();
        let mut pivots = Vec::new();
        loop {
            let (p, &dmax) = diag
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .expect("non-empty");
            if dmax <= PIVOT_TOLERANCE || pivots.len() == n {
                break;
            }
            let root = dmax.sqrt();
            let mut col = vec![0.0; n];
            for i in 0..n {
                let mut v = kernel.eval(centers[i], centers[p]);
                for c in &cols {
                    v -= c[i] * c[p];
                }
                col[i] = v / root;
            }
            col[p] = root;
            for i in 0..n {
                diag[i] -= col[i] * col[i];
            }
            diag[p] = 0.0;
            for &q in &pivots {
                diag[q] = 0.0;
            }
            pivots.push(p);
            cols.push(col);
        }
        let r = pivots.len();
        let factor = DMatrix::from_fn(n, r, |i, j| cols[j][i]);
        let pivot_block = DMatrix::from_fn(r, r, |i, j| if j <= i { cols[j][pivots[i]] } else { 0.0 });
        Ok(RepresenterBasis { kernel, centers, pivots, factor, pivot_block })
    }

    pub fn rank(&self) -> usize {
        self.pivots.len()
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    /// `n x r` matrix mapping `beta` to `chi` at the centers.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    /// Feature vector `phi(u)` with `chi(u) = phi(u)^T beta`.
    pub fn features(&self, u: f64) -> DVector<f64> {
        let k = DVector::from_iterator(
            self.rank(),
            self.pivots.iter().map(|&p| self.kernel.eval(u, self.centers[p])),
        );
        self.pivot_block
            .solve_lower_triangular(&k)
            .unwrap_or_else(|| DVector::zeros(self.rank()))
    }

    /// Kernel expansion over the pivot centers for coefficients `beta`.
    pub fn expansion(&self, beta: &DVector<f64>) -> Result<KernelExpansion> {
        let a = self
            .pivot_block
            .transpose()
            .solve_upper_triangular(beta)
            .ok_or_else(|| Error::numerical("singular pivot block"))?;
        let centers = self.pivots.iter().map(|&p| self.centers[p]).collect();
        KernelExpansion::new(self.kernel, centers, a.iter().copied().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn median_bandwidth_examples() {
        assert_eq!(median_bandwidth(&[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(median_bandwidth(&[0.0, 1.0, 2.0]).unwrap(), 1.0);
        assert!(median_bandwidth(&[0.5, 0.5, 0.5]).is_err());
        assert!(median_bandwidth(&[0.5]).is_err());
    }

    #[test]
    fn median_bandwidth_of_uniform_sample() {
        // Median of |U - U'| for independent U(-1, 1) is 2 - sqrt(2) ~ 0.586
        // on the full pair set; brute force over the subsample reproduces it.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<f64> = (0..10_000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bw = median_bandwidth(&pts).unwrap();
        let exact = 2.0 - 2f64.sqrt();
        assert!((bw - exact).abs() < 0.02, "bw={bw}");
    }

    #[test]
    fn interpolation_hits_targets() {
        let k = Kernel::gaussian(0.5).unwrap();
        let centers = vec![-0.9, -0.2, 0.3, 0.8];
        let vals = [1.0, -0.5, 0.25, 2.0];
        let e = KernelExpansion::interpolate(k, centers.clone(), &vals).unwrap();
        for (c, v) in centers.iter().zip(vals) {
            assert!((e.eval(*c) - v).abs() < 1e-6);
        }
        assert!(e.rkhs_norm_sq().unwrap() > 0.0);
        assert_eq!(KernelExpansion::zero(k, centers).rkhs_norm_sq().unwrap(), 0.0);
    }

    #[test]
    fn representer_basis_reproduces_gram() {
        let k = Kernel::gaussian(0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let centers: Vec<f64> = (0..300).map(|_| rng.random_range(-1.0..1.0)).collect();
        let basis = RepresenterBasis::new(k, centers.clone()).unwrap();
        assert!(basis.rank() < 120, "rank {}", basis.rank());
        let l = basis.factor();
        let approx = l * l.transpose();
        let exact = k.gram(&centers);
        assert!((approx - exact).amax() < 1e-10);

        let beta = DVector::from_fn(basis.rank(), |i, _| ((i * 7 % 5) as f64 - 2.0) * 0.1);
        let chi = basis.expansion(&beta).unwrap();
        let at_centers = l * &beta;
        for (t, &c) in centers.iter().enumerate().step_by(17) {
            assert!((chi.eval(c) - at_centers[t]).abs() < 1e-6);
            assert!((basis.features(c).dot(&beta) - at_centers[t]).abs() < 1e-8);
        }
        assert!((chi.rkhs_norm_sq().unwrap() - beta.norm_squared()).abs() < 1e-4 * beta.norm_squared());
    }

    #[test]
    fn duplicate_centers_collapse_rank() {
        let k = Kernel::gaussian(0.5).unwrap();
        let basis = RepresenterBasis::new(k, vec![0.1, 0.1, 0.4]).unwrap();
        assert_eq!(basis.rank(), 2);
    }
}
