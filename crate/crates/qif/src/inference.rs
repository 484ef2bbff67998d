//! Hypothesis tests, goodness of fit, standard errors and the chi-squared
//! distribution routines they rely on.

use nalgebra::{DMatrix, DVector};

use crate::corrbasis::BasisSet;
use crate::error::{QifError, Result};
use crate::model::{Family, LongitudinalDataset};
use crate::solver::{
    fit, pinv_psd_unchecked, FitOptions, FitResult, LinearConstraint, PINV_REL_CUTOFF,
};

/// Outcome of testing L' beta = b.
#[derive(Debug, Clone)]
pub struct TestResult {
    pub t_n: f64,
    pub df: usize,
    pub p_value: f64,
    pub q_restricted: f64,
    pub q_unrestricted: f64,
    pub fit_unrestricted: FitResult,
    pub fit_restricted: FitResult,
}

/// Goodness-of-fit summary for an unconstrained minimum.
#[derive(Debug, Clone)]
pub struct GofResult {
    pub q_at_min: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Inputs for a theoretical power computation.
#[derive(Debug, Clone, Copy)]
pub struct PowerSpec {
    pub df: usize,
    pub ncp: f64,
    pub alpha: f64,
}

// Lanczos approximation, g = 7, n = 9.
const LANCZOS: [f64; 9] = [
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
];

fn ln_gamma(x: f64) -> f64 {
    // x > 0 only, which is all this crate needs
    debug_assert!(x > 0.0);
    if x < 0.5 {
        // reflection
        return std::f64::consts::PI.ln()
            - (std::f64::consts::PI * x).sin().ln()
            - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized lower incomplete gamma P(a, x), by the series expansion.
fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut term = 1.0 / a;
    let mut sum = term;
    let mut denom = a;
    for _ in 0..500 {
        denom += 1.0;
        term *= x / denom;
        sum += term;
        if term.abs() < sum.abs() * 1e-16 {
            break;
        }
    }
    sum * (a * x.ln() - x - ln_gamma(a)).exp()
}

/// Regularized upper incomplete gamma Q(a, x), by the continued fraction.
fn gamma_q_cf(a: f64, x: f64) -> f64 {
    let tiny = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..500 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h * (a * x.ln() - x - ln_gamma(a)).exp()
}

fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else if x < a + 1.0 {
        1.0 - gamma_p_series(a, x)
    } else {
        gamma_q_cf(a, x)
    }
}

/// Upper-tail probability of the central chi-squared law with `df` degrees of
/// freedom.
pub fn chi2_sf(x: f64, df: usize) -> Result<f64> {
    if df == 0 {
        return Err(QifError::DomainError("df must be positive".into()));
    }
    if !x.is_finite() || x < 0.0 {
        return Err(QifError::DomainError(format!("chi2_sf requires x >= 0, got {x}")));
    }
    Ok(gamma_q(df as f64 / 2.0, x / 2.0))
}

fn chi2_pdf(x: f64, df: usize) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let a = df as f64 / 2.0;
    ((a - 1.0) * x.ln() - x / 2.0 - a * 2.0_f64.ln() - ln_gamma(a)).exp()
}

/// Quantile of the central chi-squared law: chi2_sf(result, df) = 1 - prob.
pub fn chi2_quantile(prob: f64, df: usize) -> Result<f64> {
    if !(0.0..1.0).contains(&prob) || prob <= 0.0 {
        return Err(QifError::DomainError(format!(
            "chi2_quantile requires prob in (0, 1), got {prob}"
        )));
    }
    let target = 1.0 - prob; // survival value at the quantile
    // bracket
    let mut lo = 0.0_f64;
    let mut hi = df as f64;
    while chi2_sf(hi, df)? > target {
        hi *= 2.0;
        if hi > 1e8 {
            break;
        }
    }
    // bisection
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if chi2_sf(mid, df)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 * hi.max(1.0) {
            break;
        }
    }
    // Newton polish on sf(x) - target
    let mut x = 0.5 * (lo + hi);
    for _ in 0..5 {
        let f = chi2_sf(x, df)? - target;
        let d = -chi2_pdf(x, df);
        if d == 0.0 {
            break;
        }
        let next = x - f / d;
        if next > lo && next < hi {
            x = next;
        } else {
            break;
        }
    }
    Ok(x)
}

/// Upper-tail probability of the noncentral chi-squared law, computed as a
/// Poisson mixture of central laws. Truncated when the remaining Poisson
/// mass drops below 1e-12.
pub fn noncentral_chi2_sf(x: f64, df: usize, ncp: f64) -> Result<f64> {
    if !ncp.is_finite() || ncp < 0.0 {
        return Err(QifError::DomainError(format!("ncp must be >= 0, got {ncp}")));
    }
    if ncp == 0.0 {
        return chi2_sf(x, df);
    }
    let lambda = ncp / 2.0;
    let mut log_weight = -lambda; // log of Poisson(k) mass at k = 0
    let mut cumulative = 0.0;
    let mut total = 0.0;
    for k in 0..10_000 {
        let weight = log_weight.exp();
        cumulative += weight;
        total += weight * chi2_sf(x, df + 2 * k)?;
        if 1.0 - cumulative < 1e-12 && k as f64 > lambda {
            break;
        }
        log_weight += lambda.ln() - (k as f64 + 1.0).ln();
    }
    Ok(total)
}

/// Run unconstrained and constrained fits and assemble the test statistic
/// T_N = Q(restricted) - Q(unrestricted), asymptotically chi-squared with
/// p = rank(L) degrees of freedom.
pub fn test_linear(
    family: Family,
    basis: &BasisSet,
    dataset: &LongitudinalDataset,
    constraint: &LinearConstraint,
    init: Option<&DVector<f64>>,
    options: &FitOptions,
) -> Result<TestResult> {
    let p = constraint.n_constraints();
    if p == 0 || constraint.rank() < p {
        return Err(QifError::RankDeficientConstraint);
    }
    let unrestricted = fit(family, basis, dataset, init, None, options)?;
    if !unrestricted.converged {
        return Err(QifError::NotConverged("unconstrained fit".into()));
    }
    let restricted = fit(family, basis, dataset, init, Some(constraint), options)?;
    if !restricted.converged {
        return Err(QifError::NotConverged("constrained fit".into()));
    }
    let mut t_n = restricted.q_min - unrestricted.q_min;
    if t_n < 0.0 {
        if t_n > -1e-6 {
            t_n = 0.0;
        } else {
            return Err(QifError::NotConverged(format!(
                "restricted minimum beats unrestricted by {t_n:e}"
            )));
        }
    }
    let p_value = chi2_sf(t_n, p)?;
    Ok(TestResult {
        t_n,
        df: p,
        p_value,
        q_restricted: restricted.q_min,
        q_unrestricted: unrestricted.q_min,
        fit_unrestricted: unrestricted,
        fit_restricted: restricted,
    })
}

/// Goodness-of-fit test: Q_N at the unconstrained minimum is asymptotically
/// chi-squared with r - q degrees of freedom.
pub fn goodness_of_fit(fit: &FitResult, score_dim: usize, n_params: usize) -> Result<GofResult> {
    if score_dim == n_params {
        return Err(QifError::DegenerateDf);
    }
    if score_dim < n_params {
        return Err(QifError::DomainError(format!(
            "score dimension {score_dim} below parameter dimension {n_params}"
        )));
    }
    let df = score_dim - n_params;
    let q = fit.q_min.max(0.0);
    Ok(GofResult { q_at_min: q, df, p_value: chi2_sf(q, df)? })
}

fn regularized_pinv(j_hat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let max_eig = j_hat
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(0.0_f64, f64::max);
    if !(max_eig > 0.0) {
        return Err(QifError::SingularCurvature);
    }
    Ok(pinv_psd_unchecked(j_hat, PINV_REL_CUTOFF))
}

/// Standard errors: sqrt of the diagonal of pinv(J_hat) / N.
pub fn standard_errors(fit: &FitResult, n_subjects: usize) -> Result<DVector<f64>> {
    let inv = regularized_pinv(&fit.j_hat_at_min)?;
    let n = n_subjects as f64;
    Ok(DVector::from_fn(inv.nrows(), |k, _| (inv[(k, k)] / n).sqrt()))
}

/// Estimated non-centrality parameter
/// N (L' d)' {L' pinv(J) L}^{-1} (L' d) for a drift d in beta.
pub fn estimate_ncp(
    delta_beta: &DVector<f64>,
    constraint: &LinearConstraint,
    j_hat: &DMatrix<f64>,
    n_subjects: usize,
) -> Result<f64> {
    let j_inv = regularized_pinv(j_hat)?;
    let lt_d = constraint.l.transpose() * delta_beta;
    let inner = constraint.l.transpose() * j_inv * &constraint.l;
    let solved = inner
        .cholesky()
        .map(|ch| ch.solve(&lt_d))
        .ok_or(QifError::SingularCurvature)?;
    Ok(n_subjects as f64 * lt_d.dot(&solved))
}

/// Power of the level-alpha chi-squared test at the given non-centrality.
pub fn theoretical_power(spec: &PowerSpec) -> Result<f64> {
    if !(0.0..1.0).contains(&spec.alpha) || spec.alpha <= 0.0 {
        return Err(QifError::DomainError(format!(
            "alpha must lie in (0, 1), got {}",
            spec.alpha
        )));
    }
    let critical = chi2_quantile(1.0 - spec.alpha, spec.df)?;
    noncentral_chi2_sf(critical, spec.df, spec.ncp)
}
