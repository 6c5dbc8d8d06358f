//! Blocked Gibbs sampler over all model parameters.
//!
//! One sweep updates, in fixed order: allocations, stick fractions and
//! mixture weights, DP concentration, assignment parameters, (probit
//! latents,) outcome parameters. Every conditional is an exact conjugate
//! draw, which is what the prior-reproduction and successive-conditional
//! tests lean on.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::chain::{fingerprint, ChainDims, McmcChain};
use crate::error::{Error, Result};
use crate::model::{Dataset, ModelSpec, RegressionType};
use crate::priors::{stick_weights, validate_state, ParamState, PriorSpec};
use crate::rng::{log_normal_pdf, CovMatrix, Rng, Side};

fn is_probit(spec: &ModelSpec) -> bool {
    spec.regression_type == RegressionType::Probit
}

/// Working response of the outcome regression: the observed outcome for
/// linear models, the latent outcome for probit models.
fn response<'a>(state: &'a ParamState, data: &'a Dataset, spec: &ModelSpec) -> &'a DVector<f64> {
    if is_probit(spec) {
        &state.ystar
    } else {
        &data.y
    }
}

/// response - (optional fe) - (optional re) - (optional interaction) per
/// observation; the outcome blocks regress on whichever piece is left out.
fn partial_residual(
    state: &ParamState,
    data: &Dataset,
    spec: &ModelSpec,
    subtract_fe: bool,
    subtract_re: bool,
    subtract_int: bool,
) -> DVector<f64> {
    let mut r = response(state, data, spec).clone();
    if subtract_fe {
        r -= &data.x_fe * &state.beta;
    }
    if subtract_re && data.random_effects_enabled() {
        for i in 0..data.n {
            r[i] -= data.x_re.row(i).dot(&state.eta.row(data.g[i]));
        }
    }
    if subtract_int {
        for i in 0..data.n {
            r[i] -= data.x_int.row(i).dot(&state.gamma.row(state.z[i]));
        }
    }
    r
}

/// Full linear predictor for observation i under the current state.
fn predictor(state: &ParamState, data: &Dataset, i: usize) -> f64 {
    let mut m = data.x_fe.row(i).transpose().dot(&state.beta);
    if data.random_effects_enabled() {
        m += data.x_re.row(i).dot(&state.eta.row(data.g[i]));
    }
    m + data.x_int.row(i).dot(&state.gamma.row(state.z[i]))
}

/// Resamples every latent allocation from its exact conditional. Weights
/// are accumulated in log space and normalized by max-subtraction.
pub fn update_allocations(
    rng: &mut Rng,
    state: &mut ParamState,
    data: &Dataset,
    spec: &ModelSpec,
) -> Result<()> {
    let c = state.n_clusters();
    let n = data.n;
    if n == 0 {
        return Ok(());
    }
    let q_uc = data.q_uc();
    let sigma2 = if is_probit(spec) { 1.0 } else { state.sigma2 };

    // Response net of fixed and random effects; only the interaction term
    // varies with the candidate cluster.
    let base = partial_residual(state, data, spec, true, true, false);
    // n x C matrix of interaction contributions.
    let int_means = &data.x_int * state.gamma.transpose();

    let mut logw = vec![0.0_f64; n * c];
    let mut diff = DVector::zeros(q_uc);
    for k in 0..c {
        let lpi = state.pi[k].ln();
        let (chol_l, log_det) = if q_uc > 0 {
            let chol = state.sigma[k].cholesky();
            let log_det = state.sigma[k].log_det();
            (Some(chol), log_det)
        } else {
            (None, 0.0)
        };
        let norm_const = -0.5 * (q_uc as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
        for i in 0..n {
            let mut lw = lpi + log_normal_pdf(base[i], int_means[(i, k)], sigma2);
            if let Some(chol) = &chol_l {
                for d in 0..q_uc {
                    diff[d] = data.u_cont[(i, d)] - state.mu[(k, d)];
                }
                if !chol.l_dirty().solve_lower_triangular_mut(&mut diff) {
                    return Err(Error::RankDeficientBlock(format!("sigma[{k}]")));
                }
                lw += norm_const - 0.5 * diff.norm_squared();
            }
            for (j, codes) in data.u_cat.iter().enumerate() {
                lw += state.phi[j][(k, codes[i] as usize)].ln();
            }
            logw[i * c + k] = lw;
        }
    }

    for i in 0..n {
        state.z[i] = rng.draw_categorical_from_log(&logw[i * c..(i + 1) * c])?;
    }
    Ok(())
}

/// Resamples the stick fractions from their Beta conditionals and
/// recomputes the mixture weights through the stick identity. The last
/// fraction stays pinned to 1 so the weights sum to one exactly.
pub fn update_sticks_and_weights(rng: &mut Rng, state: &mut ParamState) {
    let c = state.n_clusters();
    let counts = state.cluster_counts();
    let mut tail: f64 = 0.0;
    let mut tails = vec![0.0; c];
    for k in (0..c).rev() {
        tails[k] = tail;
        tail += counts[k] as f64;
    }
    for k in 0..c - 1 {
        state.v[k] = rng.draw_beta(1.0 + counts[k] as f64, state.zeta + tails[k]);
    }
    state.v[c - 1] = 1.0;
    state.pi = stick_weights(&state.v);
}

/// Resamples the DP concentration from its Gamma conditional.
pub fn update_concentration(rng: &mut Rng, state: &mut ParamState, priors: &PriorSpec) {
    let c = state.n_clusters();
    let mut log_sum = 0.0;
    for k in 0..c - 1 {
        let v = state.v[k].min(1.0 - 1e-12);
        log_sum += (1.0 - v).ln();
    }
    state.zeta = rng.draw_gamma(priors.dp.a + (c as f64 - 1.0), priors.dp.b - log_sum);
}

/// Resamples per-cluster assignment parameters: normal-inverse-Wishart
/// posteriors for (mu_c, Sigma_c) and Dirichlet posteriors for each
/// phi_{c,j}. Empty clusters are refreshed from the prior, which keeps
/// them available for re-occupation.
pub fn update_assignment_params(
    rng: &mut Rng,
    state: &mut ParamState,
    data: &Dataset,
    priors: &PriorSpec,
) -> Result<()> {
    let c = state.n_clusters();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (i, &z) in state.z.iter().enumerate() {
        members[z].push(i);
    }

    if let Some(ac) = &priors.assign_cont {
        let q = data.q_uc();
        let mu0 = DVector::from_vec(ac.mu0.clone());
        for k in 0..c {
            let n_k = members[k].len();
            let (scale, dof, mean, lambda_n) = if n_k == 0 {
                (ac.phi0.clone(), ac.nu0, mu0.clone(), ac.lambda0)
            } else {
                let nf = n_k as f64;
                let mut ubar = DVector::zeros(q);
                for &i in &members[k] {
                    for d in 0..q {
                        ubar[d] += data.u_cont[(i, d)];
                    }
                }
                ubar /= nf;
                let mut scatter = DMatrix::zeros(q, q);
                let mut diff = DVector::zeros(q);
                for &i in &members[k] {
                    for d in 0..q {
                        diff[d] = data.u_cont[(i, d)] - ubar[d];
                    }
                    scatter.syger(1.0, &diff, &diff, 1.0);
                }
                let lambda_n = ac.lambda0 + nf;
                let mean = (&mu0 * ac.lambda0 + &ubar * nf) / lambda_n;
                let dbar = &ubar - &mu0;
                let phi_n = ac.phi0.as_matrix()
                    + scatter
                    + (ac.lambda0 * nf / lambda_n) * (&dbar * dbar.transpose());
                (CovMatrix::repair(phi_n)?, ac.nu0 + nf, mean, lambda_n)
            };
            let sigma_k = rng.draw_inverse_wishart(&scale, dof)?;
            let mu_cov = CovMatrix::repair(sigma_k.as_matrix() / lambda_n)?;
            let mu_k = rng.draw_mvn(&mean, &mu_cov);
            state.mu.row_mut(k).copy_from(&mu_k.transpose());
            state.sigma[k] = sigma_k;
        }
    }

    if let Some(cat) = &priors.assign_cat {
        for (j, codes) in data.u_cat.iter().enumerate() {
            let k_j = data.cat_levels[j].len();
            for k in 0..c {
                let mut alpha = vec![cat.rho; k_j];
                for &i in &members[k] {
                    alpha[codes[i] as usize] += 1.0;
                }
                let row = rng.draw_dirichlet(&alpha)?;
                state.phi[j].row_mut(k).copy_from(&row.transpose());
            }
        }
    }
    Ok(())
}

/// Joint (beta, sigma^2) draw from the normal-gamma conditional, with the
/// random-effect and interaction contributions subtracted from the working
/// response. Probit models keep sigma^2 = 1 and draw beta alone.
pub fn update_beta_sigma(
    rng: &mut Rng,
    state: &mut ParamState,
    data: &Dataset,
    spec: &ModelSpec,
    priors: &PriorSpec,
) -> Result<()> {
    let q = data.q_fe();
    let r = partial_residual(state, data, spec, false, true, true);
    let mut lambda_n = data.x_fe.transpose() * &data.x_fe;
    for d in 0..q {
        lambda_n[(d, d)] += priors.fe.lambda;
    }
    let xtr = data.x_fe.transpose() * &r;
    let chol = Cholesky::new(lambda_n.clone()).ok_or(Error::RankDeficientBlock("beta".into()))?;
    let beta_hat = chol.solve(&xtr);

    if is_probit(spec) {
        state.beta = rng.draw_mvn_from_precision_chol(&beta_hat, &chol);
        return Ok(());
    }

    let quad = (r.norm_squared() - beta_hat.dot(&(&lambda_n * &beta_hat))).max(0.0);
    let a_n = priors.fe.a + data.n as f64 / 2.0;
    let b_n = priors.fe.b + 0.5 * quad;
    state.sigma2 = rng.draw_inv_gamma(a_n, b_n);
    let sd = state.sigma2.sqrt();
    // beta | sigma^2 ~ N(beta_hat, sigma^2 Lambda_n^{-1}).
    let z = DVector::from_fn(q, |_, _| rng.draw_standard_normal() * sd);
    let w = chol
        .l()
        .transpose()
        .solve_upper_triangular(&z)
        .ok_or(Error::RankDeficientBlock("beta".into()))?;
    state.beta = beta_hat + w;
    Ok(())
}

/// Conditional mean and precision of one unit's random-effect vector.
/// Exposed so the precision-weighted formula can be checked against an
/// independent dense implementation.
pub fn random_effect_conditional(
    state: &ParamState,
    data: &Dataset,
    spec: &ModelSpec,
    unit: usize,
) -> (DVector<f64>, DMatrix<f64>) {
    let q = data.q_re();
    let sigma2 = if is_probit(spec) { 1.0 } else { state.sigma2 };
    let r = partial_residual(state, data, spec, true, false, true);
    let mut prec = state.w_re.inverse();
    let mut lin = DVector::zeros(q);
    for i in 0..data.n {
        if data.g[i] != unit {
            continue;
        }
        let x = data.x_re.row(i).transpose();
        prec.syger(1.0 / sigma2, &x, &x, 1.0);
        lin += x * (r[i] / sigma2);
    }
    prec = (&prec + prec.transpose()) * 0.5;
    let chol = Cholesky::new(prec.clone()).expect("random-effect precision is SPD");
    (chol.solve(&lin), prec)
}

/// Resamples every unit's random-effect vector from its multivariate
/// normal conditional.
pub fn update_random_effects(
    rng: &mut Rng,
    state: &mut ParamState,
    data: &Dataset,
    spec: &ModelSpec,
) -> Result<()> {
    if !data.random_effects_enabled() {
        return Ok(());
    }
    let q = data.q_re();
    let sigma2 = if is_probit(spec) { 1.0 } else { state.sigma2 };
    let r = partial_residual(state, data, spec, true, false, true);
    let w_inv = state.w_re.inverse();

    let mut precs: Vec<DMatrix<f64>> = vec![w_inv; data.m];
    let mut lins: Vec<DVector<f64>> = vec![DVector::zeros(q); data.m];
    for i in 0..data.n {
        let j = data.g[i];
        let x = data.x_re.row(i).transpose();
        precs[j].syger(1.0 / sigma2, &x, &x, 1.0);
        lins[j] += x * (r[i] / sigma2);
    }
    for j in 0..data.m {
        let sym = (&precs[j] + precs[j].transpose()) * 0.5;
        let chol =
            Cholesky::new(sym).ok_or_else(|| Error::RankDeficientBlock(format!("eta[{j}]")))?;
        let mean = chol.solve(&lins[j]);
        let draw = rng.draw_mvn_from_precision_chol(&mean, &chol);
        state.eta.row_mut(j).copy_from(&draw.transpose());
    }
    Ok(())
}

/// Resamples the random-effect covariance from its inverse-Wishart
/// conditional.
pub fn update_w_re(
    rng: &mut Rng,
    state: &mut ParamState,
    data: &Dataset,
    priors: &PriorSpec,
) -> Result<()> {
    let Some(re) = &priors.re else {
        return Ok(());
    };
    let q = data.q_re();
    let mut scale = re.psi.as_matrix().clone();
    for j in 0..data.m {
        let eta_j = state.eta.row(j).transpose();
        scale.syger(1.0, &eta_j, &eta_j, 1.0);
    }
    let _ = q;
    state.w_re = rng.draw_inverse_wishart(&CovMatrix::repair(scale)?, re.nu + data.m as f64)?;
    Ok(())
}

/// Resamples each cluster's interaction coefficients; clusters with no
/// observations fall back to their prior N(0, W_int).
pub fn update_gamma(
    rng: &mut Rng,
    state: &mut ParamState,
    data: &Dataset,
    spec: &ModelSpec,
) -> Result<()> {
    let c = state.n_clusters();
    let q = data.q_int();
    let sigma2 = if is_probit(spec) { 1.0 } else { state.sigma2 };
    let r = partial_residual(state, data, spec, true, true, false);
    let w_inv = state.w_int.inverse();
    let prior_chol = state.w_int.cholesky();

    let mut precs: Vec<DMatrix<f64>> = vec![w_inv; c];
    let mut lins: Vec<DVector<f64>> = vec![DVector::zeros(q); c];
    let mut occupied = vec![false; c];
    for i in 0..data.n {
        let k = state.z[i];
        occupied[k] = true;
        let x = data.x_int.row(i).transpose();
        precs[k].syger(1.0 / sigma2, &x, &x, 1.0);
        lins[k] += x * (r[i] / sigma2);
    }
    for k in 0..c {
        let draw = if occupied[k] {
            let sym = (&precs[k] + precs[k].transpose()) * 0.5;
            let chol = Cholesky::new(sym)
                .ok_or_else(|| Error::RankDeficientBlock(format!("gamma[{k}]")))?;
            let mean = chol.solve(&lins[k]);
            rng.draw_mvn_from_precision_chol(&mean, &chol)
        } else {
            rng.draw_mvn_chol(&DVector::zeros(q), prior_chol.l_dirty())
        };
        state.gamma.row_mut(k).copy_from(&draw.transpose());
    }
    Ok(())
}

/// Resamples the interaction covariance from its inverse-Wishart
/// conditional. All C cluster vectors enter the scatter (unoccupied ones
/// are live prior draws in the state), so the degrees of freedom grow by C.
pub fn update_w_int(
    rng: &mut Rng,
    state: &mut ParamState,
    priors: &PriorSpec,
) -> Result<()> {
    let c = state.n_clusters();
    let mut scale = priors.int.psi.as_matrix().clone();
    for k in 0..c {
        let g = state.gamma.row(k).transpose();
        scale.syger(1.0, &g, &g, 1.0);
    }
    state.w_int =
        rng.draw_inverse_wishart(&CovMatrix::repair(scale)?, priors.int.nu + c as f64)?;
    Ok(())
}

/// Sequential conjugate outcome blocks: (beta, sigma^2), random effects,
/// W_re, per-cluster gamma, W_int.
pub fn update_outcome_params(
    rng: &mut Rng,
    state: &mut ParamState,
    data: &Dataset,
    spec: &ModelSpec,
    priors: &PriorSpec,
) -> Result<()> {
    update_beta_sigma(rng, state, data, spec, priors)?;
    update_random_effects(rng, state, data, spec)?;
    update_w_re(rng, state, data, priors)?;
    update_gamma(rng, state, data, spec)?;
    update_w_int(rng, state, priors)
}

/// Albert-Chib data augmentation: resamples each latent outcome from a
/// unit-variance normal truncated to the side implied by the observed
/// binary outcome.
pub fn update_probit_latents(rng: &mut Rng, state: &mut ParamState, data: &Dataset) {
    for i in 0..data.n {
        let m = predictor(state, data, i);
        let side = if data.y[i] == 1.0 {
            Side::Positive
        } else {
            Side::Negative
        };
        state.ystar[i] = rng.draw_truncated_normal(m, 1.0, side);
    }
}

/// One full Gibbs sweep in the sampler's fixed block order.
pub fn sweep(
    rng: &mut Rng,
    state: &mut ParamState,
    data: &Dataset,
    spec: &ModelSpec,
    priors: &PriorSpec,
) -> Result<()> {
    update_allocations(rng, state, data, spec)?;
    update_sticks_and_weights(rng, state);
    update_concentration(rng, state, priors);
    update_assignment_params(rng, state, data, priors)?;
    if is_probit(spec) {
        update_probit_latents(rng, state, data);
    }
    update_outcome_params(rng, state, data, spec, priors)
}

/// Runs the sampler for `n_it` sweeps and retains every post-burn-in
/// state. Progress is reported as `Iteration: k` every `progress_every`
/// sweeps (0 disables reporting). Every stored state is validated; a
/// violation aborts the chain with the failing iteration index.
#[allow(clippy::too_many_arguments)]
pub fn run_chain(
    rng: &mut Rng,
    spec: &ModelSpec,
    data: &Dataset,
    priors: &PriorSpec,
    init: ParamState,
    n_it: usize,
    n_burn_in: usize,
    progress_every: usize,
) -> Result<McmcChain> {
    if n_it <= n_burn_in {
        return Err(Error::InvalidArgument(format!(
            "n_it ({n_it}) must exceed n_burn_in ({n_burn_in}) so at least one draw is retained"
        )));
    }
    let mut state = init;
    let mut draws = Vec::with_capacity(n_it - n_burn_in);
    for it in 0..n_it {
        if progress_every > 0 && it % progress_every == 0 {
            eprintln!("Iteration: {it}");
        }
        sweep(rng, &mut state, data, spec, priors).map_err(|e| Error::ChainAborted {
            iteration: it,
            source: Box::new(e),
        })?;
        if it >= n_burn_in {
            let violations = validate_state(&state, spec, data);
            if !violations.is_empty() {
                return Err(Error::InvalidState {
                    iteration: it,
                    violations,
                });
            }
            draws.push(state.clone());
        }
    }
    Ok(McmcChain {
        dims: ChainDims::from_model(spec, data),
        draws,
        n_iterations: n_it,
        n_burn_in,
        seed: rng.seed(),
        spec_fingerprint: fingerprint(spec),
        prior_fingerprint: fingerprint(priors),
    })
}
