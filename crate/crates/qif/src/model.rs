//! Longitudinal data representation and GLM family evaluation.
//!
//! A dataset is a balanced panel: `N` subjects each observed at the same `n`
//! time points with `q` covariates. The family bundles the inverse link and
//! variance function used to form per-subject means, mean Jacobians and the
//! diagonal weight matrix `A_i^{-1/2}`.

use nalgebra::{DMatrix, DVector};
use std::io::Read;
use std::path::Path;

use crate::error::{QifError, Result};

/// Linear predictors beyond this magnitude are clamped before exponentiation
/// in the logit link.
pub const ETA_CLAMP: f64 = 30.0;

/// Marginal variances below this are treated as degenerate weights.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// GLM link/variance bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// Identity link, unit variance.
    GaussianIdentity,
    /// Logit link, variance mu*(1-mu).
    BernoulliLogit,
}

impl Family {
    /// Inverse link: mu = h(eta).
    pub fn h(&self, eta: f64) -> f64 {
        match self {
            Family::GaussianIdentity => eta,
            Family::BernoulliLogit => {
                let e = eta.clamp(-ETA_CLAMP, ETA_CLAMP);
                1.0 / (1.0 + (-e).exp())
            }
        }
    }

    /// dmu/deta.
    pub fn h_prime(&self, eta: f64) -> f64 {
        match self {
            Family::GaussianIdentity => 1.0,
            Family::BernoulliLogit => {
                let mu = self.h(eta);
                mu * (1.0 - mu)
            }
        }
    }

    /// d2mu/deta2.
    pub fn h_second(&self, eta: f64) -> f64 {
        match self {
            Family::GaussianIdentity => 0.0,
            Family::BernoulliLogit => {
                let mu = self.h(eta);
                mu * (1.0 - mu) * (1.0 - 2.0 * mu)
            }
        }
    }

    /// Variance function v(mu).
    pub fn variance(&self, mu: f64) -> f64 {
        match self {
            Family::GaussianIdentity => 1.0,
            Family::BernoulliLogit => mu * (1.0 - mu),
        }
    }

    /// dv/dmu.
    pub fn variance_prime(&self, mu: f64) -> f64 {
        match self {
            Family::GaussianIdentity => 0.0,
            Family::BernoulliLogit => 1.0 - 2.0 * mu,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Family::GaussianIdentity => "gaussian",
            Family::BernoulliLogit => "binomial",
        }
    }
}

/// One subject: response vector (length n) and covariate matrix (q x n).
#[derive(Debug, Clone)]
pub struct SubjectRecord {
    pub id: String,
    pub y: DVector<f64>,
    /// Covariates, one column per time point.
    pub x: DMatrix<f64>,
}

/// Balanced panel of longitudinal observations.
#[derive(Debug, Clone)]
pub struct LongitudinalDataset {
    pub subjects: Vec<SubjectRecord>,
    pub n_times: usize,
    pub n_covariates: usize,
    /// Covariate labels, from the CSV header or "x1".."xq".
    pub covariate_names: Vec<String>,
}

impl LongitudinalDataset {
    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }
}

/// Per-subject mean/variance quantities at a given beta.
#[derive(Debug, Clone)]
pub struct SubjectModelEval {
    /// Mean vector h_i (length n).
    pub h: DVector<f64>,
    /// n x q Jacobian of the mean in beta; row t is h'(eta_t) * X_it.
    pub grad_h: DMatrix<f64>,
    /// Diagonal of A_i^{-1/2}, i.e. v(mu_t)^{-1/2}.
    pub a_inv_sqrt: DVector<f64>,
}

/// Evaluate the mean model for one subject at `beta`. Dispersion is fixed at 1.
pub fn evaluate_subject(
    family: Family,
    subject: &SubjectRecord,
    beta: &DVector<f64>,
) -> Result<SubjectModelEval> {
    let n = subject.y.len();
    let q = subject.x.nrows();
    debug_assert_eq!(subject.x.ncols(), n);
    debug_assert_eq!(beta.len(), q);

    if beta.iter().any(|b| !b.is_finite()) {
        return Err(QifError::NonFiniteInput("beta".into()));
    }

    let mut h = DVector::zeros(n);
    let mut grad_h = DMatrix::zeros(n, q);
    let mut a_inv_sqrt = DVector::zeros(n);
    for t in 0..n {
        let eta: f64 = subject.x.column(t).dot(beta);
        if !eta.is_finite() {
            return Err(QifError::NonFiniteInput(format!(
                "linear predictor for subject {} at time {}",
                subject.id,
                t + 1
            )));
        }
        let mu = family.h(eta);
        let v = family.variance(mu);
        if !v.is_finite() || v < VARIANCE_FLOOR {
            return Err(QifError::NonFiniteInput(format!(
                "degenerate variance {v:e} for subject {} at time {}",
                subject.id,
                t + 1
            )));
        }
        h[t] = mu;
        a_inv_sqrt[t] = 1.0 / v.sqrt();
        let hp = family.h_prime(eta);
        for k in 0..q {
            grad_h[(t, k)] = hp * subject.x[(k, t)];
        }
    }
    Ok(SubjectModelEval { h, grad_h, a_inv_sqrt })
}

/// One long-format record: (subject, 1-based time index, response, covariates).
#[derive(Debug, Clone)]
pub struct LongRow {
    pub subject: String,
    pub time: usize,
    pub y: f64,
    pub x: Vec<f64>,
}

/// Assemble a balanced panel from long-format rows. Subjects are ordered by
/// first appearance; every subject must cover time indices 1..n exactly once.
pub fn load_dataset(rows: &[LongRow], covariate_names: Vec<String>) -> Result<LongitudinalDataset> {
    if rows.is_empty() {
        return Err(QifError::UnbalancedPanel("no data rows".into()));
    }
    let q = rows[0].x.len();
    if q == 0 {
        return Err(QifError::RaggedCovariates("no covariate columns".into()));
    }

    let mut order: Vec<String> = Vec::new();
    let mut grouped: std::collections::HashMap<String, Vec<&LongRow>> =
        std::collections::HashMap::new();
    for row in rows {
        if row.x.len() != q {
            return Err(QifError::RaggedCovariates(format!(
                "subject {} has {} covariates, expected {}",
                row.subject,
                row.x.len(),
                q
            )));
        }
        if !row.y.is_finite() || row.x.iter().any(|v| !v.is_finite()) {
            return Err(QifError::NonFiniteInput(format!(
                "subject {} time {}",
                row.subject, row.time
            )));
        }
        grouped
            .entry(row.subject.clone())
            .or_insert_with(|| {
                order.push(row.subject.clone());
                Vec::new()
            })
            .push(row);
    }

    let n = grouped[&order[0]].len();
    let mut subjects = Vec::with_capacity(order.len());
    for id in &order {
        let mut recs = grouped.remove(id).unwrap();
        if recs.len() != n {
            return Err(QifError::UnbalancedPanel(format!(
                "subject {} has {} observations, expected {}",
                id,
                recs.len(),
                n
            )));
        }
        recs.sort_by_key(|r| r.time);
        let mut y = DVector::zeros(n);
        let mut x = DMatrix::zeros(q, n);
        for (t, rec) in recs.iter().enumerate() {
            if rec.time != t + 1 {
                return Err(QifError::UnbalancedPanel(format!(
                    "subject {} missing or duplicating time index {}",
                    id,
                    t + 1
                )));
            }
            y[t] = rec.y;
            for k in 0..q {
                x[(k, t)] = rec.x[k];
            }
        }
        subjects.push(SubjectRecord { id: id.clone(), y, x });
    }

    let names = if covariate_names.len() == q {
        covariate_names
    } else {
        (1..=q).map(|k| format!("x{k}")).collect()
    };
    Ok(LongitudinalDataset {
        subjects,
        n_times: n,
        n_covariates: q,
        covariate_names: names,
    })
}

/// Read a long-format CSV with header `subject,time,y,<name1>,...,<nameq>`.
/// Lines starting with `#` are ignored.
pub fn read_csv(path: &Path) -> Result<LongitudinalDataset> {
    let file = std::fs::File::open(path)?;
    read_csv_from(file)
}

pub fn read_csv_from<R: Read>(reader: R) -> Result<LongitudinalDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);

    let headers = rdr.headers()?.clone();
    if headers.len() < 4 {
        return Err(QifError::Parse(
            "expected header subject,time,y,x1,... with at least one covariate".into(),
        ));
    }
    for (i, want) in ["subject", "time", "y"].iter().enumerate() {
        if !headers[i].eq_ignore_ascii_case(want) {
            return Err(QifError::Parse(format!(
                "column {} must be named '{}', found '{}'",
                i + 1,
                want,
                &headers[i]
            )));
        }
    }
    let covariate_names: Vec<String> = headers.iter().skip(3).map(str::to_owned).collect();

    let mut rows = Vec::new();
    for (lineno, record) in rdr.records().enumerate() {
        let record = record?;
        let context = |field: &str| format!("line {}: bad {}", lineno + 2, field);
        if record.len() != headers.len() {
            return Err(QifError::Parse(format!(
                "line {}: expected {} fields, found {}",
                lineno + 2,
                headers.len(),
                record.len()
            )));
        }
        let time: usize = record[1]
            .parse()
            .map_err(|_| QifError::Parse(context("time index")))?;
        let y: f64 = record[2]
            .parse()
            .map_err(|_| QifError::Parse(context("response")))?;
        let mut x = Vec::with_capacity(covariate_names.len());
        for v in record.iter().skip(3) {
            x.push(
                v.parse::<f64>()
                    .map_err(|_| QifError::Parse(context("covariate")))?,
            );
        }
        rows.push(LongRow {
            subject: record[0].to_owned(),
            time,
            y,
            x,
        });
    }
    load_dataset(&rows, covariate_names)
}

/// Validate responses for the Bernoulli family: every y must be 0 or 1.
pub fn check_family_support(family: Family, dataset: &LongitudinalDataset) -> Result<()> {
    if family == Family::BernoulliLogit {
        for s in &dataset.subjects {
            if s.y.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(QifError::DomainError(format!(
                    "subject {}: binomial responses must be 0 or 1",
                    s.id
                )));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ones_subject(n: usize) -> SubjectRecord {
        SubjectRecord {
            id: "s1".into(),
            y: DVector::zeros(n),
            x: DMatrix::from_element(1, n, 1.0),
        }
    }

    #[test]
    fn gaussian_identity_at_zero() {
        let s = ones_subject(2);
        let eval = evaluate_subject(Family::GaussianIdentity, &s, &DVector::zeros(1)).unwrap();
        assert_eq!(eval.h, DVector::zeros(2));
        assert_eq!(eval.grad_h, DMatrix::from_element(2, 1, 1.0));
        assert_eq!(eval.a_inv_sqrt, DVector::from_element(2, 1.0));
    }

    #[test]
    fn logit_at_zero() {
        let s = SubjectRecord {
            id: "s1".into(),
            y: DVector::zeros(3),
            x: DMatrix::from_element(1, 3, 0.0),
        };
        let eval = evaluate_subject(Family::BernoulliLogit, &s, &DVector::from_element(1, 1.0)).unwrap();
        for t in 0..3 {
            assert_relative_eq!(eval.h[t], 0.5);
            assert_relative_eq!(eval.a_inv_sqrt[t], 2.0);
        }
    }

    #[test]
    fn logit_scalar_hand_value() {
        // q=1, n=1, x=2, beta=0.5 -> eta=1
        let s = SubjectRecord {
            id: "s1".into(),
            y: DVector::zeros(1),
            x: DMatrix::from_element(1, 1, 2.0),
        };
        let eval = evaluate_subject(Family::BernoulliLogit, &s, &DVector::from_element(1, 0.5)).unwrap();
        assert_relative_eq!(eval.h[0], 0.731059, epsilon = 1e-6);
        assert_relative_eq!(eval.grad_h[(0, 0)], 0.393224, epsilon = 1e-6);
        // (mu (1 - mu))^{-1/2} = 0.1966119^{-1/2}
        assert_relative_eq!(eval.a_inv_sqrt[0], 2.2552519, epsilon = 1e-6);
    }

    #[test]
    fn logit_weight_bounded_below_by_two() {
        let s = ones_subject(1);
        for &beta in &[-4.0, -1.0, 0.0, 0.3, 2.5] {
            let eval =
                evaluate_subject(Family::BernoulliLogit, &s, &DVector::from_element(1, beta))
                    .unwrap();
            assert!(eval.a_inv_sqrt[0] >= 2.0 - 1e-12);
        }
        let at_zero = evaluate_subject(Family::BernoulliLogit, &s, &DVector::zeros(1)).unwrap();
        assert_relative_eq!(at_zero.a_inv_sqrt[0], 2.0);
    }

    #[test]
    fn grad_h_matches_finite_differences() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for family in [Family::GaussianIdentity, Family::BernoulliLogit] {
            for _ in 0..20 {
                let n = rng.random_range(1..5);
                let q = rng.random_range(1..4);
                let x = DMatrix::from_fn(q, n, |_, _| rng.random_range(-1.0..1.0));
                let beta = DVector::from_fn(q, |_, _| rng.random_range(-1.0..1.0));
                let s = SubjectRecord { id: "s".into(), y: DVector::zeros(n), x };
                let eval = evaluate_subject(family, &s, &beta).unwrap();
                let step = 1e-6;
                for k in 0..q {
                    let mut bp = beta.clone();
                    bp[k] += step;
                    let mut bm = beta.clone();
                    bm[k] -= step;
                    let hp = evaluate_subject(family, &s, &bp).unwrap().h;
                    let hm = evaluate_subject(family, &s, &bm).unwrap().h;
                    for t in 0..n {
                        let fd = (hp[t] - hm[t]) / (2.0 * step);
                        assert_relative_eq!(eval.grad_h[(t, k)], fd, epsilon = 1e-6, max_relative = 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn nonfinite_beta_rejected() {
        let s = ones_subject(2);
        let err = evaluate_subject(Family::GaussianIdentity, &s, &DVector::from_element(1, f64::NAN));
        assert!(matches!(err, Err(QifError::NonFiniteInput(_))));
    }

    fn row(subject: &str, time: usize, y: f64, x: &[f64]) -> LongRow {
        LongRow { subject: subject.into(), time, y, x: x.to_vec() }
    }

    #[test]
    fn minimal_panel_loads() {
        let rows = vec![
            row("a", 1, 0.1, &[1.0]),
            row("a", 2, 0.2, &[1.0]),
            row("b", 1, 0.3, &[2.0]),
            row("b", 2, 0.4, &[2.0]),
        ];
        let ds = load_dataset(&rows, vec![]).unwrap();
        assert_eq!(ds.n_subjects(), 2);
        assert_eq!(ds.n_times, 2);
        assert_eq!(ds.n_covariates, 1);
        assert_eq!(ds.covariate_names, vec!["x1"]);
        assert_eq!(ds.subjects[0].id, "a");
    }

    #[test]
    fn duplicate_time_index_rejected() {
        let rows = vec![
            row("a", 1, 0.1, &[1.0]),
            row("a", 1, 0.2, &[1.0]),
            row("a", 2, 0.3, &[1.0]),
            row("b", 1, 0.1, &[1.0]),
            row("b", 2, 0.2, &[1.0]),
            row("b", 3, 0.3, &[1.0]),
        ];
        assert!(matches!(
            load_dataset(&rows, vec![]),
            Err(QifError::UnbalancedPanel(_))
        ));
    }

    #[test]
    fn ragged_covariates_rejected() {
        let rows = vec![
            row("a", 1, 0.1, &[1.0, 2.0]),
            row("b", 1, 0.2, &[1.0, 2.0, 3.0]),
        ];
        assert!(matches!(
            load_dataset(&rows, vec![]),
            Err(QifError::RaggedCovariates(_))
        ));
    }

    #[test]
    fn csv_round_trip_with_comments() {
        let data = "\
# toy fixture
subject,time,y,age
a,1,1.5,0.2
a,2,2.5,0.3
b,1,0.5,-0.1
b,2,1.0,0.0
";
        let ds = read_csv_from(data.as_bytes()).unwrap();
        assert_eq!(ds.n_subjects(), 2);
        assert_eq!(ds.covariate_names, vec!["age"]);
        assert_eq!(ds.subjects[1].y[1], 1.0);
    }

    #[test]
    fn csv_bad_field_names_line() {
        let data = "subject,time,y,x1\na,1,zork,1.0\n";
        match read_csv_from(data.as_bytes()) {
            Err(QifError::Parse(msg)) => assert!(msg.contains("line 2"), "{msg}"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
