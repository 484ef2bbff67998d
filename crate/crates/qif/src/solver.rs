//! Evaluation and minimization of the quadratic inference function
//!
//!   Q_N(beta) = N gbar' pinv(C_hat) gbar,
//!
//! by iteratively reweighted generalized least squares with step
//! safeguarding. Linear equality constraints L' beta = b are handled by
//! null-space reparameterization: beta = beta_p + B gamma with B an
//! orthonormal basis of null(L').

use nalgebra::{DMatrix, DVector};

use crate::corrbasis::BasisSet;
use crate::error::{QifError, Result};
use crate::model::{Family, LongitudinalDataset};
use crate::score::{score_state, ScoreState};

/// Relative spectral cutoff for the Moore-Penrose pseudo-inverse. Separates
/// exact rank deficiency (e.g. a duplicated basis matrix) from genuinely
/// small eigenvalues at desk scale.
pub const PINV_REL_CUTOFF: f64 = 1e-10;

/// Q_N value and, when requested, its exact gradient.
#[derive(Debug, Clone)]
pub struct QifEval {
    pub q_value: f64,
    pub gradient: Option<DVector<f64>>,
}

/// Linear equality constraint L' beta = b, with L of size q x p.
#[derive(Debug, Clone)]
pub struct LinearConstraint {
    pub l: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl LinearConstraint {
    pub fn new(l: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if l.ncols() != b.len() {
            return Err(QifError::DomainError(format!(
                "constraint dimension mismatch: L has {} columns, b has {} entries",
                l.ncols(),
                b.len()
            )));
        }
        if l.ncols() == 0 || l.ncols() > l.nrows() {
            return Err(QifError::RankDeficientConstraint);
        }
        Ok(Self { l, b })
    }

    pub fn n_constraints(&self) -> usize {
        self.l.ncols()
    }

    /// Numerical rank of L.
    pub fn rank(&self) -> usize {
        self.l.clone().svd(false, false).rank(1e-10 * self.l.amax().max(1.0))
    }
}

/// Solver knobs; defaults make the acceptance tests deterministic.
#[derive(Debug, Clone)]
pub struct FitOptions {
    pub gradient_tol: f64,
    /// Looser gradient tolerance applied only when step halving stalls:
    /// near the minimum Q is flat to roundoff, so a strict decrease may be
    /// unattainable while the gradient is still a few ulps above
    /// `gradient_tol`.
    pub stall_gradient_tol: f64,
    pub step_tol: f64,
    pub max_iterations: usize,
    pub max_halvings: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            gradient_tol: 1e-6,
            stall_gradient_tol: 1e-4,
            step_tol: 1e-10,
            max_iterations: 200,
            max_halvings: 30,
        }
    }
}

/// Converged (or best-effort) minimizer of Q_N.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub beta_hat: DVector<f64>,
    pub q_min: f64,
    pub iterations: usize,
    pub converged: bool,
    pub j_hat_at_min: DMatrix<f64>,
    /// Infinity norm of the (projected, if constrained) gradient at the end.
    pub gradient_norm: f64,
    pub constraint: Option<LinearConstraint>,
    /// Q at the starting point and at every accepted iterate, in order.
    pub q_trace: Vec<f64>,
}

/// Moore-Penrose pseudo-inverse of a symmetric PSD matrix by symmetric
/// eigendecomposition; eigenvalues below rel_cutoff times the largest are
/// treated as zero.
pub fn pinv_psd(m: &DMatrix<f64>, rel_cutoff: f64) -> Result<DMatrix<f64>> {
    let scale = m.abs().max().max(1.0);
    let asym = (m - m.transpose()).abs().max() / scale;
    if asym > 1e-8 {
        return Err(QifError::NotSymmetric(asym));
    }
    Ok(pinv_psd_unchecked(m, rel_cutoff))
}

/// Same as [`pinv_psd`] without the symmetry check; for internal use on
/// matrices that are symmetric by construction.
pub fn pinv_psd_unchecked(m: &DMatrix<f64>, rel_cutoff: f64) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let max_eig = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let cutoff = rel_cutoff * max_eig;
    let n = m.nrows();
    let mut out = DMatrix::zeros(n, n);
    for (idx, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > cutoff {
            let v = eig.eigenvectors.column(idx);
            out.ger(1.0 / lambda, &v, &v, 1.0);
        }
    }
    (&out + out.transpose()) * 0.5
}

/// Q_N and its exact gradient from an already-assembled score state.
pub fn qif_from_state(state: &ScoreState) -> QifEval {
    let n = state.n_subjects as f64;
    let c_pinv = pinv_psd_unchecked(&state.c_hat, PINV_REL_CUTOFF);
    let cg = &c_pinv * &state.gbar;
    let q_value = n * state.gbar.dot(&cg);

    let gradient = state.gbar_jac.as_ref().map(|jac| {
        let partials = state
            .c_hat_partials
            .as_ref()
            .expect("c_hat_partials present when jacobian is");
        let q = jac.ncols();
        DVector::from_fn(q, |k, _| {
            // d(C^+)/db = -C^+ dC C^+ on the range of C
            2.0 * n * cg.dot(&jac.column(k)) - n * cg.dot(&(&partials[k] * &cg))
        })
    });
    QifEval { q_value, gradient }
}

/// Evaluate Q_N (and optionally its gradient) at `beta`.
pub fn qif_value(
    family: Family,
    basis: &BasisSet,
    dataset: &LongitudinalDataset,
    beta: &DVector<f64>,
    want_gradient: bool,
) -> Result<QifEval> {
    let state = score_state(family, basis, dataset, beta, want_gradient)?;
    Ok(qif_from_state(&state))
}

/// Orthonormal basis of null(L') and the least-norm solution of L' beta = b.
fn null_space_parameterization(
    constraint: &LinearConstraint,
    q: usize,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let p = constraint.n_constraints();
    let lt = constraint.l.transpose(); // p x q
    let svd = lt.clone().svd(true, true);
    let tol = 1e-10 * svd.singular_values.max().max(1.0);
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if rank < p {
        return Err(QifError::RankDeficientConstraint);
    }
    // least-norm particular solution
    let beta_p = svd
        .solve(&constraint.b, tol)
        .map_err(|e| QifError::DomainError(e.to_string()))?;
    // null space: rows of V^T beyond the rank
    let v_t = svd.v_t.as_ref().expect("svd with v_t");
    let m = q - rank;
    let mut basis = DMatrix::zeros(q, m);
    for (out_col, row) in (rank..v_t.nrows()).enumerate() {
        basis.column_mut(out_col).copy_from(&v_t.row(row).transpose());
    }
    // v_t from a thin SVD of a p x q matrix may only carry p rows; complete
    // the basis by orthogonalizing the complement if needed.
    if v_t.nrows() < q {
        let mut cols: Vec<DVector<f64>> = (0..rank)
            .map(|i| v_t.row(i).transpose())
            .collect();
        let mut extra = Vec::new();
        for j in 0..q {
            let mut e = DVector::zeros(q);
            e[j] = 1.0;
            for c in cols.iter().chain(extra.iter()) {
                let proj = c.dot(&e);
                e -= c * proj;
            }
            let norm = e.norm();
            if norm > 1e-8 {
                extra.push(e / norm);
                if cols.len() + extra.len() == q {
                    break;
                }
            }
        }
        cols.clear();
        for (out_col, e) in extra.iter().enumerate() {
            basis.column_mut(out_col).copy_from(e);
        }
    }
    Ok((beta_p, basis))
}

/// Regularized solve of J delta = rhs for a symmetric PSD curvature J.
fn solve_curvature(j: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let m = j.nrows();
    let sym = (j + j.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    let max_eig = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    if !(max_eig > 0.0) {
        return Err(QifError::SingularCurvature);
    }
    let min_eig = eig.eigenvalues.min();
    let work = if min_eig < 1e-10 * max_eig {
        let ridge = 1e-8 * sym.trace() / m as f64;
        &sym + DMatrix::identity(m, m) * ridge
    } else {
        sym
    };
    work.cholesky()
        .map(|ch| ch.solve(rhs))
        .ok_or(QifError::SingularCurvature)
}

/// Minimize Q_N by IRGLS, unconstrained or subject to L' beta = b.
pub fn fit(
    family: Family,
    basis: &BasisSet,
    dataset: &LongitudinalDataset,
    init: Option<&DVector<f64>>,
    constraint: Option<&LinearConstraint>,
    options: &FitOptions,
) -> Result<FitResult> {
    let q = dataset.n_covariates;
    let default_init = DVector::zeros(q);
    let init = init.unwrap_or(&default_init);
    if init.len() != q {
        return Err(QifError::DomainError(format!(
            "init has {} entries, model has {q} parameters",
            init.len()
        )));
    }

    // beta = beta_p + B gamma; unconstrained fits use beta_p = init, B = I.
    let (beta_p, b_mat) = match constraint {
        None => (init.clone(), DMatrix::identity(q, q)),
        Some(c) => {
            if c.l.nrows() != q {
                return Err(QifError::DomainError(format!(
                    "constraint matrix has {} rows, model has {q} parameters",
                    c.l.nrows()
                )));
            }
            let (least_norm, b_mat) = null_space_parameterization(c, q)?;
            // start from the projection of init onto the constraint set
            let gamma0 = b_mat.transpose() * (init - &least_norm);
            (&least_norm + &b_mat * gamma0, b_mat)
        }
    };
    let free_dims = b_mat.ncols();
    let n = dataset.n_subjects() as f64;

    let mut beta = beta_p.clone();
    let mut state = score_state(family, basis, dataset, &beta, true)?;
    let mut eval = qif_from_state(&state);
    let mut iterations = 0;
    let mut converged = false;
    let mut grad_norm;
    let mut q_trace = vec![eval.q_value];

    loop {
        let grad = eval.gradient.as_ref().expect("gradient requested");
        let proj_grad = b_mat.transpose() * grad;
        grad_norm = proj_grad.amax();
        if grad_norm <= options.gradient_tol * eval.q_value.max(1.0) {
            converged = true;
            break;
        }
        if iterations >= options.max_iterations || free_dims == 0 {
            break;
        }
        iterations += 1;

        let j_hat = state.j_hat.as_ref().expect("j_hat requested");
        let j_proj = b_mat.transpose() * j_hat * &b_mat;
        let step_gamma = solve_curvature(&j_proj, &proj_grad)? * (-1.0 / (2.0 * n));
        let step = &b_mat * step_gamma;

        // Step safeguarding: accept only on decrease; otherwise halve.
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=options.max_halvings {
            let candidate = &beta + &step * scale;
            match score_state(family, basis, dataset, &candidate, true) {
                Ok(new_state) => {
                    let new_eval = qif_from_state(&new_state);
                    if new_eval.q_value < eval.q_value {
                        accepted = Some((candidate, new_state, new_eval));
                        break;
                    }
                }
                Err(QifError::NonFiniteInput(_)) => {}
                Err(e) => return Err(e),
            }
            scale *= 0.5;
        }

        match accepted {
            Some((new_beta, new_state, new_eval)) => {
                let step_norm = (&new_beta - &beta).norm();
                debug_assert!(new_eval.q_value <= eval.q_value);
                beta = new_beta;
                state = new_state;
                eval = new_eval;
                q_trace.push(eval.q_value);
                if step_norm <= options.step_tol {
                    let grad = eval.gradient.as_ref().unwrap();
                    grad_norm = (b_mat.transpose() * grad).amax();
                    converged = grad_norm <= options.stall_gradient_tol * eval.q_value.max(1.0);
                    break;
                }
            }
            None => {
                // no decrease possible along the IRGLS direction
                converged = grad_norm <= options.stall_gradient_tol * eval.q_value.max(1.0);
                break;
            }
        }
    }

    Ok(FitResult {
        beta_hat: beta,
        q_min: eval.q_value,
        iterations,
        converged,
        j_hat_at_min: state.j_hat.clone().expect("j_hat requested"),
        gradient_norm: grad_norm,
        constraint: constraint.cloned(),
        q_trace,
    })
}

/// Fit from a small fixed grid of starting points (the origin-centered
/// 2q+1 grid init, init +/- e_k) and keep the best converged result.
pub fn fit_multistart(
    family: Family,
    basis: &BasisSet,
    dataset: &LongitudinalDataset,
    init: Option<&DVector<f64>>,
    constraint: Option<&LinearConstraint>,
    options: &FitOptions,
) -> Result<FitResult> {
    let q = dataset.n_covariates;
    let center = init.cloned().unwrap_or_else(|| DVector::zeros(q));
    let mut starts = vec![center.clone()];
    for k in 0..q {
        for sign in [1.0, -1.0] {
            let mut p = center.clone();
            p[k] += sign;
            starts.push(p);
        }
    }
    let mut best: Option<FitResult> = None;
    let mut last_err = None;
    for start in &starts {
        match fit(family, basis, dataset, Some(start), constraint, options) {
            Ok(res) => {
                let better = match &best {
                    None => true,
                    Some(b) => {
                        (res.converged && !b.converged)
                            || (res.converged == b.converged && res.q_min < b.q_min)
                    }
                };
                if better {
                    best = Some(res);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap_or(QifError::SingularCurvature))
}
