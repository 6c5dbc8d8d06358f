//! Prior hyperparameters, sampler state, and prior-draw initialization.
//!
//! Defaults deliberately follow the package's vague-prior convention:
//! normal-gamma over the fixed effects and error variance, inverse-Wishart
//! over random-effect and interaction covariances, normal-inverse-Wishart
//! over continuous assignment parameters, Dirichlet over categorical
//! probabilities, and a Gamma(sqrt(C), sqrt(C)) prior on the
//! Dirichlet-process concentration.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, ModelSpec, RegressionType};
use crate::rng::{CovMatrix, Rng, Side};

/// NormGamma(0, lambda, a, b) prior on (beta, sigma^2): sigma^2 is
/// inverse-gamma(a, b) and beta | sigma^2 is N(0, sigma^2/lambda * I).
/// Probit models fix sigma^2 = 1 and read only lambda: beta ~ N(0, I/lambda).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FePrior {
    pub lambda: f64,
    pub a: f64,
    pub b: f64,
}

/// Inverse-Wishart prior on a covariance matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IwPrior {
    pub psi: CovMatrix,
    pub nu: f64,
}

/// Normal-inverse-Wishart prior on per-cluster (mu_c, Sigma_c).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NiwPrior {
    pub lambda0: f64,
    pub nu0: f64,
    pub phi0: CovMatrix,
    pub mu0: Vec<f64>,
}

/// Dirichlet concentration shared by every categorical clustering covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatPrior {
    pub rho: f64,
}

/// Gamma(a, b) prior (shape/rate) on the DP concentration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpPrior {
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub fe: FePrior,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub re: Option<IwPrior>,
    pub int: IwPrior,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assign_cont: Option<NiwPrior>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assign_cat: Option<CatPrior>,
    pub dp: DpPrior,
}

impl PriorSpec {
    /// Checks positivity and dimension constraints against a compiled model.
    pub fn validate(&self, data: &Dataset) -> Result<()> {
        let positive = |v: f64, what: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidSpec(format!("{what} must be positive")))
            }
        };
        positive(self.fe.lambda, "fe.lambda")?;
        positive(self.fe.a, "fe.a")?;
        positive(self.fe.b, "fe.b")?;
        positive(self.dp.a, "dp.a")?;
        positive(self.dp.b, "dp.b")?;
        match (&self.re, data.random_effects_enabled()) {
            (Some(re), true) => {
                if re.psi.dim() != data.q_re() || re.nu < data.q_re() as f64 {
                    return Err(Error::InvalidSpec(
                        "re prior dimensions incompatible with model".into(),
                    ));
                }
            }
            (None, true) => {
                return Err(Error::InvalidSpec(
                    "model has random effects but prior.re is absent".into(),
                ))
            }
            (Some(_), false) => {
                return Err(Error::InvalidSpec(
                    "prior.re given but the model has no random effects".into(),
                ))
            }
            (None, false) => {}
        }
        if self.int.psi.dim() != data.q_int() || self.int.nu < data.q_int() as f64 {
            return Err(Error::InvalidSpec(
                "int prior dimensions incompatible with model".into(),
            ));
        }
        match (&self.assign_cont, data.q_uc() > 0) {
            (Some(ac), true) => {
                positive(ac.lambda0, "assign_cont.lambda0")?;
                if ac.phi0.dim() != data.q_uc()
                    || ac.nu0 < data.q_uc() as f64
                    || ac.mu0.len() != data.q_uc()
                {
                    return Err(Error::InvalidSpec(
                        "assign_cont prior dimensions incompatible with model".into(),
                    ));
                }
            }
            (None, true) => {
                return Err(Error::InvalidSpec(
                    "model has continuous clustering covariates but prior.assign_cont is absent"
                        .into(),
                ))
            }
            (Some(_), false) => {
                return Err(Error::InvalidSpec(
                    "prior.assign_cont given but the model has no continuous clustering covariates"
                        .into(),
                ))
            }
            (None, false) => {}
        }
        match (&self.assign_cat, !data.u_cat.is_empty()) {
            (Some(ac), true) => positive(ac.rho, "assign_cat.rho")?,
            (None, true) => {
                return Err(Error::InvalidSpec(
                    "model has categorical clustering covariates but prior.assign_cat is absent"
                        .into(),
                ))
            }
            (Some(_), false) => {
                return Err(Error::InvalidSpec(
                    "prior.assign_cat given but the model has no categorical clustering covariates"
                        .into(),
                ))
            }
            (None, false) => {}
        }
        Ok(())
    }
}

/// Tabled default priors, with dimensions taken from the compiled data.
pub fn default_priors(spec: &ModelSpec, data: &Dataset) -> PriorSpec {
    let c = spec.n_clusters_max as f64;
    PriorSpec {
        fe: FePrior {
            lambda: 1e-6,
            a: 1e-6,
            b: 1e-6,
        },
        re: data.random_effects_enabled().then(|| IwPrior {
            psi: CovMatrix::identity(data.q_re()),
            nu: data.q_re() as f64,
        }),
        int: IwPrior {
            psi: CovMatrix::identity(data.q_int()),
            nu: data.q_int() as f64,
        },
        assign_cont: (data.q_uc() > 0).then(|| NiwPrior {
            lambda0: 1.0,
            nu0: data.q_uc() as f64,
            phi0: CovMatrix::identity(data.q_uc()),
            mu0: vec![0.0; data.q_uc()],
        }),
        assign_cat: (!data.u_cat.is_empty()).then(|| CatPrior { rho: 1.0 }),
        dp: DpPrior {
            a: c.sqrt(),
            b: c.sqrt(),
        },
    }
}

/// One full draw of every model parameter plus latent allocations.
///
/// Cluster-indexed fields always carry all `C = n_clusters_max` slots;
/// unoccupied clusters hold live prior draws.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamState {
    /// Fixed-effect coefficients, length q_fe.
    pub beta: DVector<f64>,
    /// Error variance; fixed at 1.0 for probit models.
    pub sigma2: f64,
    /// Random effects, one row per unit (m x q_re).
    pub eta: DMatrix<f64>,
    /// Random-effect covariance (q_re x q_re).
    pub w_re: CovMatrix,
    /// Cluster-interaction coefficients, one row per cluster (C x q_int).
    pub gamma: DMatrix<f64>,
    /// Prior covariance of the interaction coefficients.
    pub w_int: CovMatrix,
    /// Per categorical covariate j: row-stochastic C x K_j matrix.
    pub phi: Vec<DMatrix<f64>>,
    /// Assignment means, one row per cluster (C x q_uc).
    pub mu: DMatrix<f64>,
    /// Assignment covariances, one per cluster.
    pub sigma: Vec<CovMatrix>,
    /// Stick fractions, length C with the last pinned to 1.
    pub v: DVector<f64>,
    /// Mixture weights implied by the sticks.
    pub pi: DVector<f64>,
    /// DP concentration.
    pub zeta: f64,
    /// Latent allocations, 0-based cluster indices, length n.
    pub z: Vec<usize>,
    /// Probit latent outcomes (empty for linear models).
    pub ystar: DVector<f64>,
}

impl ParamState {
    pub fn n_clusters(&self) -> usize {
        self.pi.len()
    }

    /// Occupancy counts n_c.
    pub fn cluster_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_clusters()];
        for &z in &self.z {
            counts[z] += 1;
        }
        counts
    }
}

/// Mixture weights from stick fractions: pi_1 = V_1,
/// pi_c = V_c * prod_{j<c} (1 - V_j).
pub fn stick_weights(v: &DVector<f64>) -> DVector<f64> {
    let c = v.len();
    let mut pi = DVector::zeros(c);
    let mut remaining = 1.0;
    for k in 0..c {
        pi[k] = v[k] * remaining;
        remaining *= 1.0 - v[k];
    }
    pi
}

/// Initializes the sampler state with draws from the prior. The draw order
/// is fixed so a given seed always produces the same state.
pub fn theta_init(
    rng: &mut Rng,
    priors: &PriorSpec,
    spec: &ModelSpec,
    data: &Dataset,
) -> Result<ParamState> {
    priors.validate(data)?;
    let c = spec.n_clusters_max;
    let q_fe = data.q_fe();
    let q_int = data.q_int();

    // Outcome block.
    let sigma2 = match spec.regression_type {
        RegressionType::Linear => rng.draw_inv_gamma(priors.fe.a, priors.fe.b),
        RegressionType::Probit => 1.0,
    };
    let beta_sd = match spec.regression_type {
        RegressionType::Linear => (sigma2 / priors.fe.lambda).sqrt(),
        RegressionType::Probit => (1.0 / priors.fe.lambda).sqrt(),
    };
    let beta = DVector::from_fn(q_fe, |_, _| rng.draw_normal(0.0, beta_sd));

    let (w_re, eta) = match &priors.re {
        Some(re) => {
            let w = rng.draw_inverse_wishart(&re.psi, re.nu)?;
            let chol = w.cholesky();
            let q_re = data.q_re();
            let mut eta = DMatrix::zeros(data.m, q_re);
            for j in 0..data.m {
                let draw = rng.draw_mvn_chol(&DVector::zeros(q_re), chol.l_dirty());
                eta.row_mut(j).copy_from(&draw.transpose());
            }
            (w, eta)
        }
        None => (CovMatrix::identity(0), DMatrix::zeros(0, 0)),
    };

    let w_int = rng.draw_inverse_wishart(&priors.int.psi, priors.int.nu)?;
    let w_int_chol = w_int.cholesky();
    let mut gamma = DMatrix::zeros(c, q_int);
    for k in 0..c {
        let draw = rng.draw_mvn_chol(&DVector::zeros(q_int), w_int_chol.l_dirty());
        gamma.row_mut(k).copy_from(&draw.transpose());
    }

    // Assignment block.
    let q_uc = data.q_uc();
    let mut mu = DMatrix::zeros(c, q_uc);
    let mut sigma = Vec::with_capacity(c);
    if let Some(ac) = &priors.assign_cont {
        let mu0 = DVector::from_vec(ac.mu0.clone());
        for k in 0..c {
            let s = rng.draw_inverse_wishart(&ac.phi0, ac.nu0)?;
            let mean_cov = CovMatrix::repair(s.as_matrix() / ac.lambda0)?;
            let m_draw = rng.draw_mvn(&mu0, &mean_cov);
            mu.row_mut(k).copy_from(&m_draw.transpose());
            sigma.push(s);
        }
    } else {
        sigma = vec![CovMatrix::identity(0); c];
    }

    let mut phi = Vec::new();
    if let Some(cat) = &priors.assign_cat {
        for &k_j in &data.cat_counts() {
            let mut p = DMatrix::zeros(c, k_j);
            for cl in 0..c {
                let row = rng.draw_dirichlet(&vec![cat.rho; k_j])?;
                p.row_mut(cl).copy_from(&row.transpose());
            }
            phi.push(p);
        }
    }

    // Mixture block.
    let zeta = rng.draw_gamma(priors.dp.a, priors.dp.b);
    let mut v = DVector::zeros(c);
    for k in 0..c - 1 {
        v[k] = rng.draw_beta(1.0, zeta);
    }
    v[c - 1] = 1.0;
    let pi = stick_weights(&v);
    let weights: Vec<f64> = pi.iter().copied().collect();
    let mut z = Vec::with_capacity(data.n);
    for _ in 0..data.n {
        z.push(rng.draw_categorical(&weights)?);
    }

    // Probit latents consistent with the observed outcome.
    let ystar = if spec.regression_type == RegressionType::Probit {
        let mut ystar = DVector::zeros(data.n);
        for i in 0..data.n {
            let mut mean = data.x_fe.row(i).transpose().dot(&beta);
            if data.random_effects_enabled() {
                mean += data.x_re.row(i).dot(&eta.row(data.g[i]));
            }
            mean += data.x_int.row(i).dot(&gamma.row(z[i]));
            let side = if data.y[i] == 1.0 {
                Side::Positive
            } else {
                Side::Negative
            };
            ystar[i] = rng.draw_truncated_normal(mean, 1.0, side);
        }
        ystar
    } else {
        DVector::zeros(0)
    };

    Ok(ParamState {
        beta,
        sigma2,
        eta,
        w_re,
        gamma,
        w_int,
        phi,
        mu,
        sigma,
        v,
        pi,
        zeta,
        z,
        ystar,
    })
}

fn check_spd(m: &DMatrix<f64>, what: &str, out: &mut Vec<String>) {
    if m.iter().any(|v| !v.is_finite()) {
        out.push(format!("{what} has non-finite entries"));
        return;
    }
    if CovMatrix::new(m.clone()).is_err() {
        out.push(format!("{what} is not symmetric positive definite"));
    }
}

/// Checks every state invariant; returns all violations found (empty means
/// the state is valid).
pub fn validate_state(state: &ParamState, spec: &ModelSpec, data: &Dataset) -> Vec<String> {
    let mut out = Vec::new();
    let c = spec.n_clusters_max;

    if state.beta.len() != data.q_fe() {
        out.push("beta has wrong dimension".into());
    }
    if state.beta.iter().any(|v| !v.is_finite()) {
        out.push("beta has non-finite entries".into());
    }
    if !(state.sigma2 > 0.0 && state.sigma2.is_finite()) {
        out.push("sigma2 is not positive".into());
    }
    if !(state.zeta > 0.0 && state.zeta.is_finite()) {
        out.push("zeta is not positive".into());
    }
    if state.gamma.nrows() != c || state.gamma.ncols() != data.q_int() {
        out.push("gamma has wrong shape".into());
    }
    if state.gamma.iter().any(|v| !v.is_finite()) {
        out.push("gamma has non-finite entries".into());
    }
    if data.random_effects_enabled() {
        if state.eta.nrows() != data.m || state.eta.ncols() != data.q_re() {
            out.push("eta has wrong shape".into());
        }
        if state.eta.iter().any(|v| !v.is_finite()) {
            out.push("eta has non-finite entries".into());
        }
        check_spd(state.w_re.as_matrix(), "w_re", &mut out);
    }
    check_spd(state.w_int.as_matrix(), "w_int", &mut out);

    if data.q_uc() > 0 {
        if state.mu.nrows() != c || state.mu.ncols() != data.q_uc() {
            out.push("mu has wrong shape".into());
        }
        if state.mu.iter().any(|v| !v.is_finite()) {
            out.push("mu has non-finite entries".into());
        }
        if state.sigma.len() != c {
            out.push("sigma has wrong cluster count".into());
        }
        for (k, s) in state.sigma.iter().enumerate() {
            check_spd(s.as_matrix(), &format!("sigma[{k}]"), &mut out);
        }
    }
    for (j, (p, &k_j)) in state.phi.iter().zip(&data.cat_counts()).enumerate() {
        if p.nrows() != c || p.ncols() != k_j {
            out.push(format!("phi[{j}] has wrong shape"));
            continue;
        }
        for cl in 0..c {
            let row_sum: f64 = p.row(cl).iter().sum();
            if (row_sum - 1.0).abs() > 1e-12 {
                out.push(format!(
                    "phi row (cluster {cl}, covariate {j}) sums to {row_sum}"
                ));
            }
            if p.row(cl).iter().any(|&v| v < 0.0) {
                out.push(format!(
                    "phi row (cluster {cl}, covariate {j}) has negative entries"
                ));
            }
        }
    }

    if state.v.len() != c || state.pi.len() != c {
        out.push("stick vectors have wrong length".into());
    } else {
        if state.v[c - 1] != 1.0 {
            out.push("last stick fraction is not pinned to 1".into());
        }
        let expected = stick_weights(&state.v);
        for k in 0..c {
            if (state.pi[k] - expected[k]).abs() > 1e-12 {
                out.push(format!("pi[{k}] violates the stick identity"));
            }
        }
        let total: f64 = state.pi.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            out.push(format!("pi sums to {total}"));
        }
    }

    if state.z.len() != data.n {
        out.push("z has wrong length".into());
    } else if state.z.iter().any(|&z| z >= c) {
        out.push("z contains an out-of-range cluster index".into());
    }

    if spec.regression_type == RegressionType::Probit {
        if state.ystar.len() != data.n {
            out.push("ystar has wrong length".into());
        } else {
            for i in 0..data.n {
                let consistent = if data.y[i] == 1.0 {
                    state.ystar[i] > 0.0
                } else {
                    state.ystar[i] <= 0.0
                };
                if !consistent {
                    out.push(format!(
                        "ystar[{i}] = {} inconsistent with y[{i}] = {}",
                        state.ystar[i], data.y[i]
                    ));
                }
            }
        }
    }

    out
}
