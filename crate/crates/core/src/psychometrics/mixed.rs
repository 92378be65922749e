//! Random-intercept linear mixed model fitted by restricted maximum
//! likelihood.
//!
//! The model is `y = b0 + sum_c b_c 1[context = c] + gamma_user + eps` with
//! `gamma_user ~ N(0, sigma_u^2)`. Because the only random effect is a
//! per-user intercept, the covariance `V = sigma_e^2 (I + lambda Z Z')` is
//! block diagonal per user, with `lambda = sigma_u^2 / sigma_e^2`, and every
//! quantity the REML criterion needs reduces to per-user rank-1 corrections:
//!
//! * `X' V^-1 X = X'X - sum_u c_u s_u s_u'` with `c_u = lambda / (1 + lambda n_u)`
//! * `log|V| = sum_u log(1 + lambda n_u)`
//!
//! where `s_u = X_u' 1`. The likelihood is profiled over `lambda` and
//! maximized with a golden-section search on `ln lambda`, bracketing
//! `lambda` in [1e-8, 1e8] to a relative tolerance of 1e-10; fixed effects
//! come from generalized least squares at the optimum, with Wald 95%
//! intervals and normal-approximation p-values.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::psychometrics::dist::normal_cdf;

/// One fixed-effect estimate with Wald statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixedEffect {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
}

/// A fitted random-intercept model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixedModelFit {
    pub beta: Vec<FixedEffect>,
    /// Random-intercept variance.
    pub sigma_u2: f64,
    /// Residual variance.
    pub sigma_e2: f64,
    /// Variance ratio sigma_u2 / sigma_e2 at the REML optimum.
    pub lambda: f64,
    pub converged: bool,
    pub diagnostics: Option<String>,
    pub n_obs: usize,
    pub n_users: usize,
    /// Profiled -2 restricted log-likelihood (up to a constant).
    pub reml_criterion: f64,
}

impl MixedModelFit {
    pub fn effect(&self, name: &str) -> Option<&FixedEffect> {
        self.beta.iter().find(|e| e.name == name)
    }
}

const LAMBDA_LO: f64 = 1e-8;
const LAMBDA_HI: f64 = 1e8;

struct DesignSummary {
    names: Vec<String>,
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
    /// Per user: (n_u, X_u' 1, 1' y_u).
    users: Vec<(f64, DVector<f64>, f64)>,
    n_obs: usize,
}

fn build_summary(
    outcome: &[f64],
    context_labels: &[String],
    user_labels: &[String],
    baseline_context: &str,
) -> Result<DesignSummary> {
    let n = outcome.len();
    if n == 0 || context_labels.len() != n || user_labels.len() != n {
        return Err(Error::Precondition(
            "outcome, context and user vectors must be non-empty and equal length".into(),
        ));
    }
    if outcome.iter().any(|v| !v.is_finite()) {
        return Err(Error::Precondition("outcome contains non-finite values".into()));
    }

    let mut levels: Vec<&String> = context_labels.iter().collect();
    levels.sort();
    levels.dedup();
    if !levels.iter().any(|l| l.as_str() == baseline_context) {
        return Err(Error::Design(format!(
            "baseline context '{baseline_context}' not present in the data"
        )));
    }
    let predictors: Vec<String> = levels
        .into_iter()
        .filter(|l| l.as_str() != baseline_context)
        .cloned()
        .collect();

    let p = 1 + predictors.len();
    if n <= p {
        return Err(Error::Design(format!(
            "need more observations ({n}) than fixed effects ({p})"
        )));
    }

    let mut names = vec!["(Intercept)".to_string()];
    names.extend(predictors.iter().cloned());

    let column_of = |ctx: &str| -> Option<usize> {
        predictors.iter().position(|c| c == ctx).map(|i| i + 1)
    };

    // Row for observation i: intercept + one-hot context dummy.
    let row = |i: usize| -> DVector<f64> {
        let mut x = DVector::zeros(p);
        x[0] = 1.0;
        if let Some(j) = column_of(&context_labels[i]) {
            x[j] = 1.0;
        }
        x
    };

    let mut xtx = DMatrix::zeros(p, p);
    let mut xty = DVector::zeros(p);
    let mut yty = 0.0;

    let mut user_index: std::collections::BTreeMap<&str, usize> = std::collections::BTreeMap::new();
    let mut users: Vec<(f64, DVector<f64>, f64)> = Vec::new();
    for i in 0..n {
        let xi = row(i);
        xtx += &xi * xi.transpose();
        xty += &xi * outcome[i];
        yty += outcome[i] * outcome[i];

        let slot = *user_index.entry(user_labels[i].as_str()).or_insert_with(|| {
            users.push((0.0, DVector::zeros(p), 0.0));
            users.len() - 1
        });
        users[slot].0 += 1.0;
        users[slot].1 += xi;
        users[slot].2 += outcome[i];
    }

    Ok(DesignSummary {
        names,
        xtx,
        xty,
        yty,
        users,
        n_obs: n,
    })
}

struct Profiled {
    criterion: f64,
    beta: DVector<f64>,
    a_inv: DMatrix<f64>,
    sigma_e2: f64,
}

fn profile_at(summary: &DesignSummary, lambda: f64) -> Result<Profiled> {
    let p = summary.xtx.nrows();
    let mut a = summary.xtx.clone();
    let mut b = summary.xty.clone();
    let mut q = summary.yty;
    let mut log_det_v = 0.0;

    for (n_u, s_u, t_u) in &summary.users {
        let c_u = lambda / (1.0 + lambda * n_u);
        a -= s_u * s_u.transpose() * c_u;
        b -= s_u * (c_u * t_u);
        q -= c_u * t_u * t_u;
        log_det_v += (1.0 + lambda * n_u).ln();
    }

    let chol = a.clone().cholesky().ok_or_else(|| {
        Error::Design("singular design matrix (aliased or empty context level)".into())
    })?;
    let log_det_a = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let a_inv = chol.inverse();
    let beta = &a_inv * &b;

    let rss = (q - beta.dot(&b)).max(0.0);
    let df = (summary.n_obs - p) as f64;
    let sigma_e2 = rss / df;
    let criterion = if sigma_e2 > 0.0 {
        df * sigma_e2.ln() + log_det_v + log_det_a
    } else {
        f64::NEG_INFINITY
    };

    Ok(Profiled {
        criterion,
        beta,
        a_inv,
        sigma_e2,
    })
}

/// Fit the random-intercept model by REML. `baseline_context` is the omitted
/// dummy level; its mean is absorbed by the intercept.
pub fn fit_random_intercept(
    outcome: &[f64],
    context_labels: &[String],
    user_labels: &[String],
    baseline_context: &str,
) -> Result<MixedModelFit> {
    let summary = build_summary(outcome, context_labels, user_labels, baseline_context)?;

    // Golden-section search on ln(lambda). The criterion is unimodal in
    // lambda for this model class.
    let inv_phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let mut lo = LAMBDA_LO.ln();
    let mut hi = LAMBDA_HI.ln();
    let mut m1 = hi - inv_phi * (hi - lo);
    let mut m2 = lo + inv_phi * (hi - lo);
    let mut f1 = profile_at(&summary, m1.exp())?.criterion;
    let mut f2 = profile_at(&summary, m2.exp())?.criterion;

    // 1e-10 relative tolerance on lambda: |hi - lo| < ln(1 + 1e-10).
    let tol = 1e-10f64.ln_1p();
    while hi - lo > tol {
        if f1 <= f2 {
            hi = m2;
            m2 = m1;
            f2 = f1;
            m1 = hi - inv_phi * (hi - lo);
            f1 = profile_at(&summary, m1.exp())?.criterion;
        } else {
            lo = m1;
            m1 = m2;
            f1 = f2;
            m2 = lo + inv_phi * (hi - lo);
            f2 = profile_at(&summary, m2.exp())?.criterion;
        }
    }
    let mut lambda = ((lo + hi) / 2.0).exp();
    let mut best = profile_at(&summary, lambda)?;

    // When the criterion is flat (e.g. one observation per user, where
    // sigma_u2 is unidentifiable) prefer the parsimonious boundary
    // lambda -> 0 so sigma_u2 collapses to zero instead of an arbitrary
    // interior point.
    let at_lo = profile_at(&summary, LAMBDA_LO)?;
    if at_lo.criterion <= best.criterion + 1e-7 * (1.0 + best.criterion.abs()) {
        lambda = LAMBDA_LO;
        best = at_lo;
    }

    let sigma_e2 = best.sigma_e2;
    let sigma_u2 = lambda * sigma_e2;

    let mut converged = true;
    let mut diagnostics = None;
    if !best.criterion.is_finite() || sigma_e2 <= f64::MIN_POSITIVE {
        converged = false;
        diagnostics = Some(format!(
            "degenerate fit: residual variance {sigma_e2:.3e}, criterion {:.3e}",
            best.criterion
        ));
    }

    let mut beta = Vec::with_capacity(summary.names.len());
    for (j, name) in summary.names.iter().enumerate() {
        let estimate = best.beta[j];
        let variance = (sigma_e2 * best.a_inv[(j, j)]).max(0.0);
        let std_error = variance.sqrt();
        let (ci_low, ci_high) = (estimate - 1.96 * std_error, estimate + 1.96 * std_error);
        let p_value = if std_error > 0.0 {
            let z = (estimate / std_error).abs();
            (2.0 * (1.0 - normal_cdf(z))).clamp(0.0, 1.0)
        } else {
            f64::NAN
        };
        if !estimate.is_finite() {
            converged = false;
            diagnostics = Some(format!("non-finite estimate for '{name}'"));
        }
        beta.push(FixedEffect {
            name: name.clone(),
            estimate,
            std_error,
            ci_low,
            ci_high,
            p_value,
        });
    }

    Ok(MixedModelFit {
        beta,
        sigma_u2,
        sigma_e2,
        lambda,
        converged,
        diagnostics,
        n_obs: summary.n_obs,
        n_users: summary.users.len(),
        reml_criterion: best.criterion,
    })
}
