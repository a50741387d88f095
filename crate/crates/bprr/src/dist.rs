//! Seeded random sampling for every distribution family the sampler draws
//! from, plus the matching log densities.
//!
//! All randomness flows through [`RngHandle`], a counter-based generator
//! addressed by `(seed, stream_id)`: identical handles replay identical draw
//! sequences, and distinct stream ids give independent streams for parallel
//! replicates.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta as BetaDist, ChiSquared, Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::LN_2PI;

/// Deterministic, splittable random stream.
#[derive(Debug, Clone)]
pub struct RngHandle {
    rng: ChaCha8Rng,
    seed: u64,
    stream_id: u64,
}

impl RngHandle {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self { rng, seed, stream_id }
    }

    /// Fresh handle on another stream of the same seed.
    pub fn substream(&self, stream_id: u64) -> Self {
        Self::new(self.seed, stream_id)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }
}

impl RngCore for RngHandle {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }
}

/// Draw from `N_k(mean, cov)` via the Cholesky factor of `cov`.
pub fn mvn_sample(mean: &DVector<f64>, cov: &DMatrix<f64>, rng: &mut RngHandle) -> Result<DVector<f64>> {
    if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
        return Err(Error::DimensionMismatch(format!(
            "mean of length {} with {}x{} covariance",
            mean.len(),
            cov.nrows(),
            cov.ncols()
        )));
    }
    let chol = Cholesky::new(cov.clone())
        .ok_or_else(|| Error::NotSpd("mvn covariance".into()))?;
    let z = standard_normal_vector(mean.len(), rng);
    Ok(mean + chol.l() * z)
}

/// Multivariate normal log density.
pub fn mvn_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let k = x.len();
    if mean.len() != k || cov.nrows() != k || cov.ncols() != k {
        return Err(Error::DimensionMismatch("mvn_logpdf shapes".into()));
    }
    let chol = Cholesky::new(cov.clone())
        .ok_or_else(|| Error::NotSpd("mvn covariance".into()))?;
    let log_det = 2.0 * chol.l_dirty().diagonal().map(f64::ln).sum();
    let diff = x - mean;
    let z = chol
        .l_dirty()
        .solve_lower_triangular(&diff)
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    Ok(-0.5 * (k as f64) * LN_2PI - 0.5 * log_det - 0.5 * z.norm_squared())
}

pub fn standard_normal_vector(k: usize, rng: &mut RngHandle) -> DVector<f64> {
    DVector::from_fn(k, |_, _| StandardNormal.sample(rng))
}

pub fn standard_normal_matrix(nr: usize, nc: usize, rng: &mut RngHandle) -> DMatrix<f64> {
    DMatrix::from_fn(nr, nc, |_, _| StandardNormal.sample(rng))
}

/// Draw from the inverse Wishart `IW_q(nu, psi)`.
///
/// Bartlett decomposition of the Wishart on `psi^{-1}` followed by inversion
/// of the factor: with `psi^{-1} = L L'` and `A` the Bartlett triangle,
/// `W = (L A)(L A)' ~ W_q(nu, psi^{-1})`, so `W^{-1} ~ IW_q(nu, psi)`.
pub fn inv_wishart_sample(nu: f64, psi: &DMatrix<f64>, rng: &mut RngHandle) -> Result<DMatrix<f64>> {
    let q = psi.nrows();
    if psi.ncols() != q {
        return Err(Error::DimensionMismatch("psi must be square".into()));
    }
    if !(nu > (q as f64) - 1.0) {
        return Err(Error::InvalidArgument(format!(
            "inverse Wishart needs nu > q - 1 = {}, got {nu}",
            q - 1
        )));
    }
    let psi_chol = Cholesky::new(psi.clone()).ok_or_else(|| Error::NotSpd("psi".into()))?;
    // psi^{-1} = L^{-T} L^{-1} for psi = L L'; its lower Cholesky factor is
    // the lower factor of that product.
    let psi_inv = psi_chol.inverse();
    let l = Cholesky::new(psi_inv)
        .ok_or_else(|| Error::NotSpd("psi inverse".into()))?
        .l();

    let mut a = DMatrix::<f64>::zeros(q, q);
    for i in 0..q {
        let chi = ChiSquared::new(nu - i as f64)
            .map_err(|e| Error::InvalidArgument(format!("chi-squared dof: {e}")))?;
        a[(i, i)] = chi.sample(rng).max(1e-300).sqrt();
        for j in 0..i {
            a[(i, j)] = StandardNormal.sample(rng);
        }
    }
    let m = l * a; // lower triangular, W = M M'
    // W^{-1} = M^{-T} M^{-1}; build via triangular solve against I.
    let m_inv = m
        .solve_lower_triangular(&DMatrix::identity(q, q))
        .ok_or_else(|| Error::Numerical("singular Bartlett factor".into()))?;
    let sigma = m_inv.transpose() * m_inv;
    // Symmetrize away round-off drift.
    Ok(0.5 * (&sigma + sigma.transpose()))
}

/// Draw from `Beta(a, b)`.
pub fn beta_sample(a: f64, b: f64, rng: &mut RngHandle) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::InvalidArgument(format!("Beta needs a, b > 0, got ({a}, {b})")));
    }
    let dist = BetaDist::new(a, b).map_err(|e| Error::InvalidArgument(format!("Beta: {e}")))?;
    Ok(dist.sample(rng))
}

pub fn bernoulli(p: f64, rng: &mut RngHandle) -> u8 {
    u8::from(rng.random::<f64>() < p)
}

/// Samples an index proportional to `exp(log_weights)`.
///
/// Normalization subtracts the maximum, so adding any constant to all
/// weights leaves the draw (and the consumed RNG state) unchanged. Exactly
/// one uniform is consumed per call.
pub fn categorical(log_weights: &[f64], rng: &mut RngHandle) -> Result<usize> {
    let m = log_weights.iter().copied().filter(|w| w.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    let u: f64 = rng.random();
    if !m.is_finite() {
        return Err(Error::Numerical("categorical: all log weights are non-finite".into()));
    }
    let probs: Vec<f64> = log_weights.iter().map(|&w| (w - m).exp()).collect();
    let total: f64 = probs.iter().sum();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p / total;
        if u < acc {
            return Ok(i);
        }
    }
    Ok(probs.iter().rposition(|&p| p > 0.0).unwrap_or(log_weights.len() - 1))
}

/// `log(sum(exp(v)))` with max subtraction.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().filter(|w| w.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return f64::NEG_INFINITY;
    }
    m + v.iter().map(|&w| (w - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn reproducibility_and_stream_independence() {
        let mut a = RngHandle::new(99, 1);
        let mut b = RngHandle::new(99, 1);
        let xs: Vec<f64> = (0..100).map(|_| a.random::<f64>()).collect();
        let ys: Vec<f64> = (0..100).map(|_| b.random::<f64>()).collect();
        assert_eq!(xs, ys);

        let mut s1 = RngHandle::new(99, 1);
        let mut s2 = RngHandle::new(99, 2);
        let n = 10_000;
        let u: Vec<f64> = (0..n).map(|_| s1.random::<f64>()).collect();
        let v: Vec<f64> = (0..n).map(|_| s2.random::<f64>()).collect();
        let mu = 0.5;
        let num: f64 = u.iter().zip(&v).map(|(a, b)| (a - mu) * (b - mu)).sum();
        let du: f64 = u.iter().map(|a| (a - mu) * (a - mu)).sum();
        let dv: f64 = v.iter().map(|b| (b - mu) * (b - mu)).sum();
        let corr = num / (du.sqrt() * dv.sqrt());
        assert!(corr.abs() < 0.05, "cross-stream correlation {corr}");
    }

    #[test]
    fn mvn_rejects_non_spd_and_handles_point_mass() {
        let mut rng = RngHandle::new(1, 0);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(mvn_sample(&DVector::zeros(2), &bad, &mut rng).is_err());

        let tiny = DMatrix::from_element(1, 1, 1e-12);
        let draw = mvn_sample(&DVector::from_element(1, 5.0), &tiny, &mut rng).unwrap();
        assert!((draw[0] - 5.0).abs() < 1e-5);
    }

    #[test]
    fn mvn_moment_oracle() {
        let mut rng = RngHandle::new(2, 0);
        let mean = DVector::from_column_slice(&[1.0, 2.0]);
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let n = 10_000;
        let mut sum = DVector::zeros(2);
        let mut cross = DMatrix::zeros(2, 2);
        for _ in 0..n {
            let d = mvn_sample(&mean, &cov, &mut rng).unwrap();
            assert!(mvn_logpdf(&d, &mean, &cov).unwrap().is_finite());
            sum += &d;
            cross += &d * d.transpose();
        }
        let m = sum / n as f64;
        let c = cross / n as f64 - &m * m.transpose();
        assert!((m - &mean).amax() < 0.05);
        assert!((c - cov).amax() < 0.1);
    }

    #[test]
    fn inv_wishart_scalar_reduces_to_inverse_gamma() {
        // q = 1: IW(nu, psi) = InvGamma(nu/2, psi/2) with mean psi/(nu-2).
        let mut rng = RngHandle::new(3, 0);
        let (nu, psi_val) = (6.0, 2.0);
        let psi = DMatrix::from_element(1, 1, psi_val);
        let n = 10_000;
        let draws: Vec<f64> = (0..n).map(|_| inv_wishart_sample(nu, &psi, &mut rng).unwrap()[(0, 0)]).collect();
        let mean: f64 = draws.iter().sum::<f64>() / n as f64;
        let expected = psi_val / (nu - 2.0);
        let var: f64 = draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - expected).abs() < 3.0 * se, "mean {mean} vs {expected} (se {se})");
    }

    #[test]
    fn inv_wishart_known_moment_and_spd() {
        let q = 3;
        let nu = (q + 4) as f64;
        let mut psi = DMatrix::from_row_slice(
            3,
            3,
            &[2.0, 0.3, 0.0, 0.3, 1.5, -0.2, 0.0, -0.2, 1.0],
        );
        psi = 0.5 * (&psi + psi.transpose());
        let expected = &psi / (nu - q as f64 - 1.0);
        let mut rng = RngHandle::new(4, 0);
        let n = 20_000;
        let mut sum = DMatrix::zeros(q, q);
        for i in 0..n {
            let d = inv_wishart_sample(nu, &psi, &mut rng).unwrap();
            if i % 500 == 0 {
                assert!(Cholesky::new(d.clone()).is_some(), "draw not SPD");
            }
            sum += d;
        }
        let mean = sum / n as f64;
        for i in 0..q {
            for j in 0..q {
                let e = expected[(i, j)];
                let tol = 0.05 * e.abs().max(0.05);
                assert!(
                    (mean[(i, j)] - e).abs() < tol,
                    "entry ({i},{j}): {} vs {e}",
                    mean[(i, j)]
                );
            }
        }
    }

    #[test]
    fn inv_wishart_rejects_bad_dof() {
        let mut rng = RngHandle::new(5, 0);
        let psi = DMatrix::identity(3, 3);
        assert!(inv_wishart_sample(1.5, &psi, &mut rng).is_err());
    }

    #[test]
    fn beta_uniform_moment() {
        let mut rng = RngHandle::new(6, 0);
        let n = 10_000;
        let mean: f64 = (0..n).map(|_| beta_sample(1.0, 1.0, &mut rng).unwrap()).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.02);
    }

    #[test]
    fn categorical_point_mass_and_frequencies() {
        let mut rng = RngHandle::new(7, 0);
        for _ in 0..100 {
            assert_eq!(categorical(&[0.0, f64::NEG_INFINITY], &mut rng).unwrap(), 0);
        }
        let lw = [0.2f64.ln(), 0.3f64.ln(), 0.5f64.ln()];
        let n = 20_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[categorical(&lw, &mut rng).unwrap()] += 1;
        }
        for (c, p) in counts.iter().zip([0.2, 0.3, 0.5]) {
            let freq = *c as f64 / n as f64;
            assert!((freq - p).abs() < 0.02, "freq {freq} vs {p}");
        }
        assert!(categorical(&[f64::NEG_INFINITY, f64::NEG_INFINITY], &mut rng).is_err());
    }

    #[test]
    fn categorical_shift_invariance() {
        // Dyadic shift keeps every float addition exact, so the sampled
        // index and the RNG state must match bit for bit.
        let lw = [-101.25, -99.5, -100.125, -103.75];
        let shifted: Vec<f64> = lw.iter().map(|w| w + 64.0).collect();
        let mut r1 = RngHandle::new(8, 0);
        let mut r2 = RngHandle::new(8, 0);
        for _ in 0..1000 {
            let a = categorical(&lw, &mut r1).unwrap();
            let b = categorical(&shifted, &mut r2).unwrap();
            assert_eq!(a, b);
        }
        assert_eq!(r1.random::<u64>(), r2.random::<u64>());
    }

    #[test]
    fn log_sum_exp_matches_naive() {
        let v = [-2.0f64, -1.5, -3.0];
        let naive = v.iter().map(|w| w.exp()).sum::<f64>().ln();
        assert_relative_eq!(log_sum_exp(&v), naive, epsilon = 1e-14);
    }
}
