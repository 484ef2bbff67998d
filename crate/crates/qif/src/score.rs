//! Extended score stack: per-subject scores g_i, their mean, second-moment
//! matrix, exact Jacobians and the information-like matrix J_hat.
//!
//! The per-subject score stacks one block per basis matrix,
//!
//!   g_i block j = grad_h_i' A_i^{-1/2} M_j A_i^{-1/2} (y_i - h_i).
//!
//! The Jacobian of g_i in beta is exact: it carries the h''(eta) term from
//! grad_h_i, the derivative of both A_i^{-1/2} factors and the residual term.
//! The exact gradient of Q_N depends on all of them.

use nalgebra::{DMatrix, DVector};

use crate::corrbasis::BasisSet;
use crate::error::Result;
use crate::model::{Family, LongitudinalDataset, SubjectRecord};
use crate::solver::{pinv_psd_unchecked, PINV_REL_CUTOFF};

/// Everything the solver needs at one beta.
#[derive(Debug, Clone)]
pub struct ScoreState {
    pub beta: DVector<f64>,
    /// Mean extended score, length r = q*s.
    pub gbar: DVector<f64>,
    /// Second-moment matrix (1/N) sum g_i g_i', r x r.
    pub c_hat: DMatrix<f64>,
    /// Exact Jacobian of gbar, r x q. Present when derivatives were requested.
    pub gbar_jac: Option<DMatrix<f64>>,
    /// Partial derivatives of c_hat in each beta_k.
    pub c_hat_partials: Option<Vec<DMatrix<f64>>>,
    /// J_hat = gbar_jac' pinv(c_hat) gbar_jac, q x q.
    pub j_hat: Option<DMatrix<f64>>,
    pub n_subjects: usize,
}

impl ScoreState {
    pub fn score_dim(&self) -> usize {
        self.gbar.len()
    }
}

/// Per-subject score, and optionally its exact r x q Jacobian in beta.
fn subject_terms(
    family: Family,
    basis: &BasisSet,
    subject: &SubjectRecord,
    beta: &DVector<f64>,
    want_jac: bool,
) -> Result<(DVector<f64>, Option<DMatrix<f64>>)> {
    let eval = crate::model::evaluate_subject(family, subject, beta)?;
    let n = subject.y.len();
    let q = beta.len();
    let s = basis.len();
    let r = q * s;

    let residual = &subject.y - &eval.h;
    let w = &eval.a_inv_sqrt;
    // weighted residual W e
    let we = DVector::from_fn(n, |t, _| w[t] * residual[t]);

    // Per-time scalars for the chain rule.
    let (h_prime, h_second, w_prime): (DVector<f64>, DVector<f64>, DVector<f64>) = if want_jac {
        let mut hp = DVector::zeros(n);
        let mut hs = DVector::zeros(n);
        let mut wp = DVector::zeros(n);
        for t in 0..n {
            let eta: f64 = subject.x.column(t).dot(beta);
            let mu = family.h(eta);
            let v = family.variance(mu);
            hp[t] = family.h_prime(eta);
            hs[t] = family.h_second(eta);
            // d/deta v(h(eta))^{-1/2}
            wp[t] = -0.5 * v.powf(-1.5) * family.variance_prime(mu) * hp[t];
        }
        (hp, hs, wp)
    } else {
        (DVector::zeros(0), DVector::zeros(0), DVector::zeros(0))
    };

    let mut g = DVector::zeros(r);
    let mut jac = if want_jac { Some(DMatrix::zeros(r, q)) } else { None };

    for (j, m) in basis.matrices.iter().enumerate() {
        let u = m * &we; // M_j W e
        let f = DVector::from_fn(n, |t, _| w[t] * u[t]); // W M_j W e
        let block = eval.grad_h.transpose() * &f;
        g.rows_mut(j * q, q).copy_from(&block);

        if let Some(jac) = jac.as_mut() {
            for k in 0..q {
                // eta_t varies with beta_k at rate x_{k,t}
                let xk = subject.x.row(k);
                // d(W e)/dbeta_k = w' x_k . e - w h' x_k
                let dwe = DVector::from_fn(n, |t, _| {
                    xk[t] * (w_prime[t] * residual[t] - w[t] * h_prime[t])
                });
                let mdwe = m * &dwe;
                let mut col = DVector::zeros(q);
                for l in 0..q {
                    let mut acc = 0.0;
                    for t in 0..n {
                        // d(grad_h)' term + W-factor term + residual chain
                        acc += h_second[t] * xk[t] * subject.x[(l, t)] * f[t]
                            + eval.grad_h[(t, l)] * (w_prime[t] * xk[t] * u[t] + w[t] * mdwe[t]);
                    }
                    col[l] = acc;
                }
                jac.view_mut((j * q, k), (q, 1)).copy_from(&col);
            }
        }
    }
    Ok((g, jac))
}

/// Extended score for one subject; block j equals
/// grad_h' A^{-1/2} M_j A^{-1/2} (y - h).
pub fn subject_score(
    family: Family,
    basis: &BasisSet,
    subject: &SubjectRecord,
    beta: &DVector<f64>,
) -> Result<DVector<f64>> {
    subject_terms(family, basis, subject, beta, false).map(|(g, _)| g)
}

/// Assemble gbar, C_hat and (optionally) exact derivatives and J_hat over the
/// whole dataset. Accumulation runs in fixed subject order so results are
/// deterministic.
pub fn score_state(
    family: Family,
    basis: &BasisSet,
    dataset: &LongitudinalDataset,
    beta: &DVector<f64>,
    with_derivatives: bool,
) -> Result<ScoreState> {
    let n_subjects = dataset.n_subjects();
    assert!(n_subjects > 0, "dataset must be nonempty");
    let q = beta.len();
    let s = basis.len();
    let r = q * s;

    let mut gbar = DVector::zeros(r);
    let mut c_hat = DMatrix::zeros(r, r);
    let mut gbar_jac = if with_derivatives { Some(DMatrix::zeros(r, q)) } else { None };
    let mut c_partials =
        if with_derivatives { Some(vec![DMatrix::zeros(r, r); q]) } else { None };

    for subject in &dataset.subjects {
        let (g, jac) = subject_terms(family, basis, subject, beta, with_derivatives)?;
        gbar += &g;
        c_hat.ger(1.0, &g, &g, 1.0);
        if let (Some(total_jac), Some(partials), Some(jac)) =
            (gbar_jac.as_mut(), c_partials.as_mut(), jac.as_ref())
        {
            *total_jac += jac;
            for k in 0..q {
                let dk = jac.column(k);
                for a in 0..r {
                    for b in 0..r {
                        partials[k][(a, b)] += dk[a] * g[b] + g[a] * dk[b];
                    }
                }
            }
        }
    }

    let scale = 1.0 / n_subjects as f64;
    gbar *= scale;
    c_hat *= scale;
    if let Some(j) = gbar_jac.as_mut() {
        *j *= scale;
    }
    if let Some(ps) = c_partials.as_mut() {
        for p in ps.iter_mut() {
            *p *= scale;
        }
    }

    let j_hat = gbar_jac.as_ref().map(|jac| {
        let c_pinv = pinv_psd_unchecked(&c_hat, PINV_REL_CUTOFF);
        let jtc = jac.transpose() * c_pinv;
        let j = &jtc * jac;
        (&j + j.transpose()) * 0.5
    });

    Ok(ScoreState {
        beta: beta.clone(),
        gbar,
        c_hat,
        gbar_jac,
        c_hat_partials: c_partials,
        j_hat,
        n_subjects,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corrbasis::{make_basis, BasisLabel, BasisSet};
    use crate::model::{LongRow, SubjectRecord};
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn swap_basis_2() -> BasisSet {
        BasisSet {
            n: 2,
            matrices: vec![
                DMatrix::identity(2, 2),
                DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
            ],
            label: BasisLabel::Custom,
        }
    }

    #[test]
    fn hand_computed_score_two_blocks() {
        // Gaussian, n=2, q=1, X=(1,1), Y=(1,3), beta=0:
        // block1 = 1*1 + 1*3 = 4, block2 = 1*3 + 1*1 = 4.
        let subject = SubjectRecord {
            id: "s".into(),
            y: DVector::from_vec(vec![1.0, 3.0]),
            x: DMatrix::from_element(1, 2, 1.0),
        };
        let g = subject_score(
            Family::GaussianIdentity,
            &swap_basis_2(),
            &subject,
            &DVector::zeros(1),
        )
        .unwrap();
        assert_eq!(g, DVector::from_vec(vec![4.0, 4.0]));
    }

    #[test]
    fn zero_residual_means_zero_score() {
        let beta = DVector::from_vec(vec![0.3]);
        let x = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let y = DVector::from_fn(2, |t, _| x.column(t).dot(&beta));
        let subject = SubjectRecord { id: "s".into(), y, x };
        let g =
            subject_score(Family::GaussianIdentity, &swap_basis_2(), &subject, &beta).unwrap();
        assert!(g.amax() < 1e-14);
    }

    #[test]
    fn identity_basis_is_ols_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let basis = make_basis(BasisLabel::Identity, 3).unwrap();
        let beta = DVector::from_vec(vec![0.4, -0.2]);
        let x = DMatrix::from_fn(2, 3, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let subject = SubjectRecord { id: "s".into(), y: y.clone(), x: x.clone() };
        let g = subject_score(Family::GaussianIdentity, &basis, &subject, &beta).unwrap();
        let expected = &x * (&y - x.transpose() * &beta);
        assert_relative_eq!(g, expected, epsilon = 1e-12);
    }

    fn gaussian_n3_dataset() -> LongitudinalDataset {
        let rows: Vec<LongRow> = (1..=3)
            .map(|i| LongRow {
                subject: format!("s{i}"),
                time: 1,
                y: i as f64,
                x: vec![1.0],
            })
            .collect();
        crate::model::load_dataset(&rows, vec![]).unwrap()
    }

    #[test]
    fn hand_computed_state_n3() {
        let ds = gaussian_n3_dataset();
        let basis = make_basis(BasisLabel::Identity, 1).unwrap();
        let state = score_state(
            Family::GaussianIdentity,
            &basis,
            &ds,
            &DVector::zeros(1),
            true,
        )
        .unwrap();
        assert_relative_eq!(state.gbar[0], 2.0);
        assert_relative_eq!(state.c_hat[(0, 0)], 14.0 / 3.0);
        assert_relative_eq!(state.gbar_jac.as_ref().unwrap()[(0, 0)], -1.0);
        assert_relative_eq!(state.j_hat.as_ref().unwrap()[(0, 0)], 3.0 / 14.0, epsilon = 1e-12);

        let at_mean = score_state(
            Family::GaussianIdentity,
            &basis,
            &ds,
            &DVector::from_vec(vec![2.0]),
            true,
        )
        .unwrap();
        assert_relative_eq!(at_mean.gbar[0], 0.0);
        assert_relative_eq!(at_mean.c_hat[(0, 0)], 2.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(at_mean.j_hat.as_ref().unwrap()[(0, 0)], 1.5, epsilon = 1e-12);
    }

    #[test]
    fn duplicated_subjects_leave_averages_unchanged() {
        let ds = gaussian_n3_dataset();
        let mut doubled = ds.clone();
        let mut extra = ds.subjects.clone();
        for (i, s) in extra.iter_mut().enumerate() {
            s.id = format!("dup{i}");
        }
        doubled.subjects.extend(extra);

        let basis = make_basis(BasisLabel::Identity, 1).unwrap();
        let beta = DVector::from_vec(vec![0.7]);
        let a = score_state(Family::GaussianIdentity, &basis, &ds, &beta, true).unwrap();
        let b = score_state(Family::GaussianIdentity, &basis, &doubled, &beta, true).unwrap();
        assert_relative_eq!(a.gbar, b.gbar, epsilon = 1e-12);
        assert_relative_eq!(a.c_hat, b.c_hat, epsilon = 1e-12);
        assert_relative_eq!(
            a.j_hat.as_ref().unwrap(),
            b.j_hat.as_ref().unwrap(),
            epsilon = 1e-12
        );
    }

    fn random_instance(
        rng: &mut ChaCha8Rng,
        family: Family,
    ) -> (LongitudinalDataset, BasisSet, DVector<f64>) {
        let n_subjects = rng.random_range(4..12);
        let n = rng.random_range(2..5);
        let q = rng.random_range(1..3);
        let s_label = [BasisLabel::Identity, BasisLabel::Ar1][rng.random_range(0..2)];
        let basis = make_basis(s_label, n).unwrap();
        let beta = DVector::from_fn(q, |_, _| rng.random_range(-0.5..0.5));
        let mut subjects = Vec::new();
        for i in 0..n_subjects {
            let x = DMatrix::from_fn(q, n, |_, _| rng.random_range(-1.0..1.0));
            let y = DVector::from_fn(n, |_, _| match family {
                Family::GaussianIdentity => rng.random_range(-2.0..2.0),
                Family::BernoulliLogit => {
                    if rng.random_bool(0.5) {
                        1.0
                    } else {
                        0.0
                    }
                }
            });
            subjects.push(SubjectRecord { id: format!("s{i}"), y, x });
        }
        let ds = LongitudinalDataset {
            subjects,
            n_times: n,
            n_covariates: q,
            covariate_names: (1..=q).map(|k| format!("x{k}")).collect(),
        };
        (ds, basis, beta)
    }

    #[test]
    fn gbar_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for family in [Family::GaussianIdentity, Family::BernoulliLogit] {
            for _ in 0..25 {
                let (ds, basis, beta) = random_instance(&mut rng, family);
                let state = score_state(family, &basis, &ds, &beta, true).unwrap();
                let jac = state.gbar_jac.as_ref().unwrap();
                let step = 1e-5;
                for k in 0..beta.len() {
                    let mut bp = beta.clone();
                    bp[k] += step;
                    let mut bm = beta.clone();
                    bm[k] -= step;
                    let gp = score_state(family, &basis, &ds, &bp, false).unwrap().gbar;
                    let gm = score_state(family, &basis, &ds, &bm, false).unwrap().gbar;
                    let fd = (gp - gm) / (2.0 * step);
                    let scale = jac.column(k).amax().max(1.0);
                    assert!(
                        (jac.column(k) - &fd).amax() <= 1e-6 * scale,
                        "jacobian mismatch: {:?} vs {:?}",
                        jac.column(k),
                        fd
                    );
                }
            }
        }
    }

    #[test]
    fn c_hat_partials_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for family in [Family::GaussianIdentity, Family::BernoulliLogit] {
            for _ in 0..15 {
                let (ds, basis, beta) = random_instance(&mut rng, family);
                let state = score_state(family, &basis, &ds, &beta, true).unwrap();
                let partials = state.c_hat_partials.as_ref().unwrap();
                let step = 1e-5;
                for k in 0..beta.len() {
                    let mut bp = beta.clone();
                    bp[k] += step;
                    let mut bm = beta.clone();
                    bm[k] -= step;
                    let cp = score_state(family, &basis, &ds, &bp, false).unwrap().c_hat;
                    let cm = score_state(family, &basis, &ds, &bm, false).unwrap().c_hat;
                    let fd = (cp - cm) / (2.0 * step);
                    let scale = partials[k].abs().max().max(1.0);
                    assert!(
                        (&partials[k] - &fd).abs().max() <= 1e-5 * scale,
                        "c_hat partial mismatch (k = {k})"
                    );
                }
            }
        }
    }

    #[test]
    fn c_hat_is_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..20 {
            let (ds, basis, beta) = random_instance(&mut rng, Family::GaussianIdentity);
            let state = score_state(Family::GaussianIdentity, &basis, &ds, &beta, false).unwrap();
            let eig = state.c_hat.clone().symmetric_eigen();
            let min = eig.eigenvalues.min();
            assert!(min >= -1e-10 * state.c_hat.trace().max(1.0), "min eig {min}");
        }
    }

    #[test]
    fn basis_rescaling_leaves_j_hat_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let (ds, mut basis, beta) = random_instance(&mut rng, Family::GaussianIdentity);
        let base = score_state(Family::GaussianIdentity, &basis, &ds, &beta, true).unwrap();
        let c = 3.5;
        for m in basis.matrices.iter_mut() {
            *m *= c;
        }
        let scaled = score_state(Family::GaussianIdentity, &basis, &ds, &beta, true).unwrap();
        assert_relative_eq!(scaled.gbar, &base.gbar * c, epsilon = 1e-10, max_relative = 1e-10);
        assert_relative_eq!(
            scaled.c_hat,
            &base.c_hat * (c * c),
            epsilon = 1e-8,
            max_relative = 1e-10
        );
        assert_relative_eq!(
            scaled.j_hat.as_ref().unwrap(),
            base.j_hat.as_ref().unwrap(),
            epsilon = 1e-9,
            max_relative = 1e-9
        );
    }

    #[test]
    fn gbar_shrinks_at_true_beta_as_n_grows() {
        // ||gbar(beta0)|| should decay roughly like N^{-1/2}.
        let basis = make_basis(BasisLabel::Ar1, 4).unwrap();
        let beta0 = DVector::from_vec(vec![0.5, -0.3]);
        let norm_at = |n_subjects: usize, seed: u64| -> f64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut subjects = Vec::new();
            for i in 0..n_subjects {
                let x = DMatrix::from_fn(2, 4, |_, _| rng.random_range(-1.0..1.0));
                let y = DVector::from_fn(4, |t, _| {
                    x.column(t).dot(&beta0) + rng.random_range(-1.0..1.0)
                });
                subjects.push(SubjectRecord { id: format!("s{i}"), y, x });
            }
            let ds = LongitudinalDataset {
                subjects,
                n_times: 4,
                n_covariates: 2,
                covariate_names: vec!["x1".into(), "x2".into()],
            };
            score_state(Family::GaussianIdentity, &basis, &ds, &beta0, false)
                .unwrap()
                .gbar
                .norm()
        };
        let mut small: Vec<f64> = (0..15).map(|s| norm_at(1000, s)).collect();
        let mut large: Vec<f64> = (0..15).map(|s| norm_at(4000, s + 1000)).collect();
        small.sort_by(f64::total_cmp);
        large.sort_by(f64::total_cmp);
        assert!(
            large[7] < 0.5 * small[7],
            "median at N=4000 ({}) not below half of N=1000 ({})",
            large[7],
            small[7]
        );
    }
}
