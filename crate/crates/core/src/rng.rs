//! Deterministic-seeded sampling and density primitives.
//!
//! Every stochastic routine in the crate draws through [`Rng`], a thin
//! wrapper over a ChaCha20 stream seeded from a single `u64`. Identical
//! seeds produce identical draw sequences across runs and platforms, which
//! is what makes whole chains byte-reproducible.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Beta as BetaDist, Distribution, Gamma as GammaDist, StandardNormal};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Truncation side for one-sided truncated normal draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Condition on the draw being strictly positive.
    Positive,
    /// Condition on the draw being non-positive.
    Negative,
}

/// A symmetric positive definite matrix, validated on construction.
///
/// Holds every covariance-like quantity in the model (random-effect and
/// interaction covariances, per-cluster assignment covariances, prior scale
/// matrices).
#[derive(Debug, Clone, PartialEq)]
pub struct CovMatrix {
    m: DMatrix<f64>,
}

impl CovMatrix {
    /// Validates symmetry (1e-12 relative tolerance) and positive
    /// definiteness via Cholesky.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::NotPositiveDefinite);
        }
        let d = m.nrows();
        for i in 0..d {
            for j in (i + 1)..d {
                let a = m[(i, j)];
                let b = m[(j, i)];
                if !a.is_finite() || !b.is_finite() {
                    return Err(Error::NotPositiveDefinite);
                }
                if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                    return Err(Error::NotPositiveDefinite);
                }
            }
        }
        // Exact symmetrization so downstream factorizations see one value.
        let sym = (&m + m.transpose()) * 0.5;
        if d > 0 && Cholesky::new(sym.clone()).is_none() {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(Self { m: sym })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            m: DMatrix::identity(dim, dim),
        }
    }

    pub fn scaled_identity(dim: usize, scale: f64) -> Result<Self> {
        if !(scale > 0.0) {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(Self {
            m: DMatrix::identity(dim, dim) * scale,
        })
    }

    /// SPD repair used after any update that produces a covariance:
    /// symmetrize, and if Cholesky fails once add `1e-10 * tr(A)/d` to the
    /// diagonal; a second failure is a hard error.
    pub fn repair(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() || m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotPositiveDefinite);
        }
        let d = m.nrows();
        let sym = (&m + m.transpose()) * 0.5;
        if d == 0 || Cholesky::new(sym.clone()).is_some() {
            return Ok(Self { m: sym });
        }
        let jitter = 1e-10 * sym.trace().abs().max(1e-300) / d as f64;
        let repaired = &sym + DMatrix::identity(d, d) * jitter;
        if Cholesky::new(repaired.clone()).is_some() {
            Ok(Self { m: repaired })
        } else {
            Err(Error::NotPositiveDefinite)
        }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }

    /// Cholesky factor; always succeeds because construction validated it.
    pub fn cholesky(&self) -> Cholesky<f64, Dyn> {
        Cholesky::new(self.m.clone()).expect("validated SPD matrix")
    }

    /// Inverse computed through the Cholesky factor.
    pub fn inverse(&self) -> DMatrix<f64> {
        let d = self.dim();
        self.cholesky().solve(&DMatrix::identity(d, d))
    }

    pub fn log_det(&self) -> f64 {
        self.cholesky()
            .l()
            .diagonal()
            .iter()
            .map(|v| 2.0 * v.ln())
            .sum()
    }
}

impl Serialize for CovMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = (0..self.m.nrows())
            .map(|i| self.m.row(i).iter().copied().collect())
            .collect();
        rows.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for CovMatrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(deserializer)?;
        let d = rows.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(D::Error::custom("covariance matrix must be square"));
        }
        let m = DMatrix::from_fn(d, d, |i, j| rows[i][j]);
        CovMatrix::new(m).map_err(|e| D::Error::custom(e.to_string()))
    }
}

/// Deterministic random stream. One instance drives one chain; parallel
/// chains use independently seeded instances.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha20Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Rewind to the start of the stream for this seed.
    pub fn reset(&mut self) {
        self.inner = ChaCha20Rng::seed_from_u64(self.seed);
    }

    pub fn draw_uniform(&mut self) -> f64 {
        self.inner.random()
    }

    pub fn draw_standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn draw_normal(&mut self, mean: f64, sd: f64) -> f64 {
        mean + sd * self.draw_standard_normal()
    }

    /// Gamma draw in shape/rate parameterization. The result is clamped
    /// away from exact zero: tiny shapes (e.g. the 1e-6 defaults) underflow
    /// to 0.0 in double precision and would poison downstream reciprocals.
    pub fn draw_gamma(&mut self, shape: f64, rate: f64) -> f64 {
        assert!(
            shape > 0.0 && rate > 0.0,
            "gamma parameters must be positive"
        );
        let g = GammaDist::new(shape, 1.0 / rate).expect("valid gamma parameters");
        g.sample(&mut self.inner).max(1e-300)
    }

    /// Inverse-gamma draw (shape/rate on the reciprocal scale): pdf
    /// proportional to x^{-shape-1} exp(-rate/x).
    pub fn draw_inv_gamma(&mut self, shape: f64, rate: f64) -> f64 {
        1.0 / self.draw_gamma(shape, rate)
    }

    pub fn draw_beta(&mut self, a: f64, b: f64) -> f64 {
        assert!(a > 0.0 && b > 0.0, "beta parameters must be positive");
        let d = BetaDist::new(a, b).expect("valid beta parameters");
        d.sample(&mut self.inner)
    }

    pub fn draw_chi_squared(&mut self, dof: f64) -> f64 {
        self.draw_gamma(dof / 2.0, 0.5)
    }

    /// Categorical draw over unnormalized non-negative weights.
    pub fn draw_categorical(&mut self, weights: &[f64]) -> Result<usize> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::AllZeroWeights);
        }
        let mut u = self.draw_uniform() * total;
        for (k, w) in weights.iter().enumerate() {
            u -= w;
            if u <= 0.0 {
                return Ok(k);
            }
        }
        Ok(weights.len() - 1)
    }

    /// Categorical draw from unnormalized log-weights, stabilized by
    /// max-subtraction. Fails only if every weight underflows afterwards,
    /// which signals numerical corruption upstream.
    pub fn draw_categorical_from_log(&mut self, log_weights: &[f64]) -> Result<usize> {
        let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::AllZeroWeights);
        }
        let weights: Vec<f64> = log_weights.iter().map(|lw| (lw - max).exp()).collect();
        self.draw_categorical(&weights)
    }

    pub fn draw_dirichlet(&mut self, alpha: &[f64]) -> Result<DVector<f64>> {
        if alpha.is_empty() || alpha.iter().any(|&a| !(a > 0.0)) {
            return Err(Error::NonPositiveAlpha);
        }
        if alpha.len() == 1 {
            return Ok(DVector::from_element(1, 1.0));
        }
        let draws: Vec<f64> = alpha.iter().map(|&a| self.draw_gamma(a, 1.0)).collect();
        let total: f64 = draws.iter().sum();
        Ok(DVector::from_iterator(
            draws.len(),
            draws.iter().map(|g| g / total),
        ))
    }

    /// One-sided truncated normal. Uses plain rejection when the
    /// truncation point sits below the mode and Robert's shifted
    /// exponential proposal in the tail, so it stays exact and fast for
    /// |mean|/sd well past 30.
    pub fn draw_truncated_normal(&mut self, mean: f64, sd: f64, side: Side) -> f64 {
        assert!(sd > 0.0, "truncated normal sd must be positive");
        match side {
            Side::Positive => {
                let z = self.std_normal_lower_tail(-mean / sd);
                let x = mean + sd * z;
                // Guard against catastrophic cancellation collapsing to 0.
                if x > 0.0 {
                    x
                } else {
                    f64::MIN_POSITIVE
                }
            }
            Side::Negative => {
                let z = self.std_normal_lower_tail(mean / sd);
                let x = -(-mean + sd * z);
                if x <= 0.0 {
                    x
                } else {
                    0.0
                }
            }
        }
    }

    /// Standard normal conditioned on z >= a.
    fn std_normal_lower_tail(&mut self, a: f64) -> f64 {
        if a <= 0.0 {
            loop {
                let z = self.draw_standard_normal();
                if z >= a {
                    return z;
                }
            }
        } else {
            // Robert (1995): exponential proposal shifted to a with rate
            // lambda; acceptance probability is bounded away from 0 for
            // every a > 0.
            let lambda = 0.5 * (a + (a * a + 4.0).sqrt());
            loop {
                let e = -self.draw_uniform().max(f64::MIN_POSITIVE).ln();
                let x = a + e / lambda;
                let d = x - lambda;
                if self.draw_uniform() <= (-0.5 * d * d).exp() {
                    return x;
                }
            }
        }
    }

    /// Multivariate normal draw.
    pub fn draw_mvn(&mut self, mean: &DVector<f64>, cov: &CovMatrix) -> DVector<f64> {
        assert_eq!(mean.len(), cov.dim(), "mvn dimension mismatch");
        self.draw_mvn_chol(mean, cov.cholesky().l_dirty())
    }

    /// Multivariate normal draw given the lower Cholesky factor of the
    /// covariance.
    pub fn draw_mvn_chol(&mut self, mean: &DVector<f64>, chol_l: &DMatrix<f64>) -> DVector<f64> {
        let d = mean.len();
        let z = DVector::from_fn(d, |_, _| self.draw_standard_normal());
        mean + chol_l * z
    }

    /// Draw from N(mean, P^{-1}) given the Cholesky factorization of the
    /// precision matrix P = L L': returns mean + L^{-T} z.
    pub fn draw_mvn_from_precision_chol(
        &mut self,
        mean: &DVector<f64>,
        prec_chol: &Cholesky<f64, Dyn>,
    ) -> DVector<f64> {
        let d = mean.len();
        let z = DVector::from_fn(d, |_, _| self.draw_standard_normal());
        let w = prec_chol
            .l()
            .transpose()
            .solve_upper_triangular(&z)
            .expect("nonsingular Cholesky factor");
        mean + w
    }

    /// Inverse-Wishart draw: sample W ~ Wishart(scale^{-1}, dof) by the
    /// Bartlett construction, then invert through a dense solve.
    pub fn draw_inverse_wishart(&mut self, scale: &CovMatrix, dof: f64) -> Result<CovMatrix> {
        let d = scale.dim();
        if dof < d as f64 {
            return Err(Error::DofTooSmall { dof, dim: d });
        }
        if d == 0 {
            return Ok(CovMatrix::identity(0));
        }
        // Factor of scale^{-1}: if scale = L L', then scale^{-1} = M M'
        // with M = L^{-T} (upper triangular).
        let l = scale.cholesky().l();
        let m_factor = l
            .transpose()
            .solve_upper_triangular(&DMatrix::identity(d, d))
            .ok_or(Error::NotPositiveDefinite)?;
        // Bartlett lower-triangular factor.
        let mut a = DMatrix::zeros(d, d);
        for i in 0..d {
            a[(i, i)] = self.draw_chi_squared(dof - i as f64).sqrt();
            for j in 0..i {
                a[(i, j)] = self.draw_standard_normal();
            }
        }
        let b = m_factor * a;
        let w = &b * b.transpose();
        let w_inv = Cholesky::new(w)
            .ok_or(Error::NotPositiveDefinite)?
            .solve(&DMatrix::identity(d, d));
        CovMatrix::repair(w_inv)
    }
}

/// Log-density of a univariate normal with the given variance.
pub fn log_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + d * d / var)
}

/// Log-density of a multivariate normal given a precomputed Cholesky
/// factorization of the covariance.
pub fn log_mvn_pdf(x: &DVector<f64>, mean: &DVector<f64>, chol: &Cholesky<f64, Dyn>) -> f64 {
    let d = x.len() as f64;
    let diff = x - mean;
    let half = chol
        .l_dirty()
        .solve_lower_triangular(&diff)
        .expect("nonsingular Cholesky factor");
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + log_det + half.norm_squared())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use statrs::distribution::{Beta, ContinuousCDF, Gamma, Normal};

    fn ks_statistic<F: Fn(f64) -> f64>(draws: &mut [f64], cdf: F) -> f64 {
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = draws.len() as f64;
        let mut stat = 0.0_f64;
        for (i, &x) in draws.iter().enumerate() {
            let c = cdf(x);
            stat = stat.max((c - i as f64 / n).abs());
            stat = stat.max(((i + 1) as f64 / n - c).abs());
        }
        stat
    }

    // KS critical value at significance 1e-3.
    fn ks_crit(n: usize) -> f64 {
        (-(0.5e-3_f64).ln() / 2.0).sqrt() / (n as f64).sqrt()
    }

    #[test]
    fn determinism_same_seed_same_sequence() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..100 {
            assert_eq!(a.draw_uniform(), b.draw_uniform());
            assert_eq!(a.draw_standard_normal(), b.draw_standard_normal());
        }
        let mean = DVector::from_vec(vec![1.0, -2.0]);
        let cov = CovMatrix::identity(2);
        let mut r = Rng::new(7);
        let x = r.draw_mvn(&mean, &cov);
        r.reset();
        let y = r.draw_mvn(&mean, &cov);
        assert_eq!(x, y);
    }

    #[test]
    fn mvn_degenerate_covariance_returns_mean() {
        let mut rng = Rng::new(1);
        let mean = DVector::from_vec(vec![3.0, -1.5, 0.25]);
        let cov = CovMatrix::scaled_identity(3, 1e-30).unwrap();
        let x = rng.draw_mvn(&mean, &cov);
        for i in 0..3 {
            assert!((x[i] - mean[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn mvn_sample_mean_clt_bound() {
        let mut rng = Rng::new(2);
        let mean = DVector::zeros(2);
        let cov = CovMatrix::identity(2);
        let n = 100_000;
        let mut sum = DVector::zeros(2);
        for _ in 0..n {
            sum += rng.draw_mvn(&mean, &cov);
        }
        let bound = 4.0 / (n as f64).sqrt();
        for i in 0..2 {
            assert!(
                (sum[i] / n as f64).abs() < bound,
                "coordinate {i} mean {} exceeds CLT bound {bound}",
                sum[i] / n as f64
            );
        }
    }

    #[test]
    fn inverse_wishart_mean_matches_analytic() {
        let mut rng = Rng::new(3);
        let scale = CovMatrix::scaled_identity(1, 2.0).unwrap();
        let n = 100_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let s = rng.draw_inverse_wishart(&scale, 5.0).unwrap();
            assert_eq!(s.dim(), 1);
            acc += s.as_matrix()[(0, 0)];
        }
        let mean = acc / n as f64;
        let expected = 2.0 / (5.0 - 1.0 - 1.0);
        assert!(
            (mean - expected).abs() < 0.05 * expected,
            "IW mean {mean} vs analytic {expected}"
        );
    }

    #[test]
    fn inverse_wishart_output_is_spd() {
        let mut rng = Rng::new(4);
        let scale = CovMatrix::new(DMatrix::from_row_slice(3, 3, &[
            2.0, 0.3, 0.1, //
            0.3, 1.5, -0.2, //
            0.1, -0.2, 1.0,
        ]))
        .unwrap();
        for _ in 0..200 {
            let s = rng.draw_inverse_wishart(&scale, 4.0).unwrap();
            // CovMatrix construction re-validates SPD.
            assert!(CovMatrix::new(s.as_matrix().clone()).is_ok());
        }
    }

    #[test]
    fn inverse_wishart_dof_below_dim_rejected() {
        let mut rng = Rng::new(5);
        let scale = CovMatrix::identity(3);
        let err = rng.draw_inverse_wishart(&scale, 2.0).unwrap_err();
        assert!(matches!(err, Error::DofTooSmall { .. }));
    }

    #[test]
    fn dirichlet_dimension_one_is_degenerate() {
        let mut rng = Rng::new(6);
        let x = rng.draw_dirichlet(&[1.0]).unwrap();
        assert_eq!(x.len(), 1);
        assert_eq!(x[0], 1.0);
    }

    #[test]
    fn dirichlet_concentration_pins_to_center() {
        let mut rng = Rng::new(7);
        for _ in 0..100 {
            let x = rng.draw_dirichlet(&[1e6, 1e6]).unwrap();
            assert!((x[0] - 0.5).abs() < 0.01);
            assert!((x[1] - 0.5).abs() < 0.01);
        }
    }

    #[test]
    fn dirichlet_coordinate_means() {
        let mut rng = Rng::new(8);
        let n = 100_000;
        let mut acc = [0.0; 3];
        for _ in 0..n {
            let x = rng.draw_dirichlet(&[1.0, 1.0, 1.0]).unwrap();
            for k in 0..3 {
                acc[k] += x[k];
            }
            let sum: f64 = x.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
        for (k, a) in acc.iter().enumerate() {
            assert!(
                (a / n as f64 - 1.0 / 3.0).abs() < 0.01,
                "coordinate {k} mean off"
            );
        }
    }

    #[test]
    fn dirichlet_rejects_non_positive_alpha() {
        let mut rng = Rng::new(9);
        assert!(matches!(
            rng.draw_dirichlet(&[1.0, 0.0]),
            Err(Error::NonPositiveAlpha)
        ));
    }

    #[test]
    fn truncated_normal_half_normal_mean() {
        let mut rng = Rng::new(10);
        let n = 100_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let x = rng.draw_truncated_normal(0.0, 1.0, Side::Positive);
            assert!(x > 0.0);
            acc += x;
        }
        let expected = (2.0 / std::f64::consts::PI).sqrt();
        assert!((acc / n as f64 - expected).abs() < 0.02 * expected);
    }

    #[test]
    fn truncated_normal_inactive_truncation() {
        let mut rng = Rng::new(11);
        let n = 10_000;
        let mut acc = 0.0;
        for _ in 0..n {
            acc += rng.draw_truncated_normal(50.0, 1.0, Side::Positive);
        }
        assert!((acc / n as f64 - 50.0).abs() < 0.05);
    }

    #[test]
    fn truncated_normal_sides_respected() {
        let mut rng = Rng::new(12);
        for _ in 0..5_000 {
            assert!(rng.draw_truncated_normal(-2.0, 0.5, Side::Positive) > 0.0);
            assert!(rng.draw_truncated_normal(3.0, 2.0, Side::Negative) <= 0.0);
        }
    }

    #[test]
    fn truncated_normal_deep_tail_is_stable() {
        let mut rng = Rng::new(13);
        for _ in 0..2_000 {
            let x = rng.draw_truncated_normal(-30.0, 1.0, Side::Positive);
            assert!(x.is_finite() && x > 0.0 && x < 1.0);
        }
    }

    #[test]
    fn categorical_degenerate_weight() {
        let mut rng = Rng::new(14);
        for _ in 0..100 {
            assert_eq!(rng.draw_categorical(&[0.0, 0.0, 1.0]).unwrap(), 2);
        }
        assert!(matches!(
            rng.draw_categorical(&[0.0, 0.0]),
            Err(Error::AllZeroWeights)
        ));
    }

    #[test]
    fn gamma_mean_matches_analytic() {
        let mut rng = Rng::new(15);
        let n = 100_000;
        let mut acc = 0.0;
        for _ in 0..n {
            acc += rng.draw_gamma(3.0, 2.0);
        }
        assert!((acc / n as f64 - 1.5).abs() < 0.02 * 1.5);
    }

    #[test]
    fn beta_one_one_is_uniform_ks() {
        let mut rng = Rng::new(16);
        let n = 10_000;
        let mut draws: Vec<f64> = (0..n).map(|_| rng.draw_beta(1.0, 1.0)).collect();
        let stat = ks_statistic(&mut draws, |x| x.clamp(0.0, 1.0));
        assert!(stat < 1.63 / (n as f64).sqrt(), "KS statistic {stat}");
    }

    // Sampler/density consistency suite: each sampler against the matching
    // distribution function at the 1e-3 level with 1e5 draws.
    #[test]
    fn goodness_of_fit_normal() {
        let mut rng = Rng::new(17);
        let n = 100_000;
        let dist = Normal::new(1.5, 2.0).unwrap();
        let mut draws: Vec<f64> = (0..n).map(|_| rng.draw_normal(1.5, 2.0)).collect();
        assert!(ks_statistic(&mut draws, |x| dist.cdf(x)) < ks_crit(n));
    }

    #[test]
    fn goodness_of_fit_gamma() {
        let mut rng = Rng::new(18);
        let n = 100_000;
        let dist = Gamma::new(3.0, 2.0).unwrap(); // statrs uses shape/rate
        let mut draws: Vec<f64> = (0..n).map(|_| rng.draw_gamma(3.0, 2.0)).collect();
        assert!(ks_statistic(&mut draws, |x| dist.cdf(x)) < ks_crit(n));
    }

    #[test]
    fn goodness_of_fit_beta() {
        let mut rng = Rng::new(19);
        let n = 100_000;
        let dist = Beta::new(2.5, 0.8).unwrap();
        let mut draws: Vec<f64> = (0..n).map(|_| rng.draw_beta(2.5, 0.8)).collect();
        assert!(ks_statistic(&mut draws, |x| dist.cdf(x)) < ks_crit(n));
    }

    #[test]
    fn goodness_of_fit_truncated_normal() {
        let mut rng = Rng::new(20);
        let n = 100_000;
        let norm = Normal::new(0.0, 1.0).unwrap();
        // X ~ N(1, 2^2) | X > 0, CDF = (Phi(z) - Phi(a)) / (1 - Phi(a)).
        let (mean, sd) = (1.0, 2.0);
        let a = norm.cdf(-mean / sd);
        let mut draws: Vec<f64> = (0..n)
            .map(|_| rng.draw_truncated_normal(mean, sd, Side::Positive))
            .collect();
        let stat = ks_statistic(&mut draws, |x| {
            ((norm.cdf((x - mean) / sd) - a) / (1.0 - a)).clamp(0.0, 1.0)
        });
        assert!(stat < ks_crit(n), "KS statistic {stat}");
    }

    #[test]
    fn goodness_of_fit_inverse_wishart_1d() {
        // 1-d inverse-Wishart(psi, nu) is inverse-gamma(nu/2, psi/2), so
        // the reciprocal draws follow Gamma(nu/2, rate psi/2).
        let mut rng = Rng::new(21);
        let n = 100_000;
        let scale = CovMatrix::scaled_identity(1, 2.0).unwrap();
        let dist = Gamma::new(2.5, 1.0).unwrap();
        let mut draws: Vec<f64> = (0..n)
            .map(|_| 1.0 / rng.draw_inverse_wishart(&scale, 5.0).unwrap().as_matrix()[(0, 0)])
            .collect();
        assert!(ks_statistic(&mut draws, |x| dist.cdf(x)) < ks_crit(n));
    }

    #[test]
    fn goodness_of_fit_categorical_chi_squared() {
        let mut rng = Rng::new(22);
        let weights = [0.2, 0.5, 0.1, 0.2];
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[rng.draw_categorical(&weights).unwrap()] += 1;
        }
        let chi2: f64 = weights
            .iter()
            .zip(counts.iter())
            .map(|(&w, &c)| {
                let e = w * n as f64;
                (c as f64 - e).powi(2) / e
            })
            .sum();
        // chi-squared(3) 0.999 quantile.
        assert!(chi2 < 16.27, "chi-squared statistic {chi2}");
    }

    #[test]
    fn log_mvn_pdf_matches_univariate() {
        let cov = CovMatrix::scaled_identity(1, 4.0).unwrap();
        let chol = cov.cholesky();
        let x = DVector::from_vec(vec![0.7]);
        let mean = DVector::from_vec(vec![-0.2]);
        assert_relative_eq!(
            log_mvn_pdf(&x, &mean, &chol),
            log_normal_pdf(0.7, -0.2, 4.0),
            epsilon = 1e-12
        );
    }

    #[test]
    fn cov_matrix_rejects_asymmetry_and_non_spd() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.2, 1.0]);
        assert!(CovMatrix::new(m).is_err());
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(CovMatrix::new(m).is_err());
    }

    #[test]
    fn cov_matrix_repair_fixes_roundoff() {
        // Slightly indefinite by roundoff-scale perturbation.
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0 + 1e-16, 1.0, 1.0]);
        let c = CovMatrix::repair(m).unwrap();
        assert!(Cholesky::new(c.as_matrix().clone()).is_some());
    }
}
