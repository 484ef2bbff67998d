//! Seeded synthetic-data generators and the Monte Carlo size/power harness.
//!
//! Each replication draws its own RNG stream from `seed ^ replication_index`,
//! so a study is reproducible and the result is bitwise identical regardless
//! of how many worker threads run the replications.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::corrbasis::{make_basis, BasisLabel};
use crate::error::{QifError, Result};
use crate::inference::{chi2_quantile, estimate_ncp, noncentral_chi2_sf, test_linear};
use crate::model::{Family, LongitudinalDataset, SubjectRecord};
use crate::solver::{FitOptions, LinearConstraint};

/// One cell of the simulation design.
#[derive(Debug, Clone)]
pub struct SimulationDesign {
    pub family: Family,
    pub n_subjects: usize,
    pub n_times: usize,
    /// AR-1 autocorrelation of the generated responses.
    pub rho: f64,
    /// True intercept.
    pub beta0: f64,
    /// True slope; the tested hypothesis is H0: beta1 = 0.
    pub beta1: f64,
    pub basis: BasisLabel,
    pub n_reps: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for SimulationDesign {
    fn default() -> Self {
        Self {
            family: Family::BernoulliLogit,
            n_subjects: 50,
            n_times: 5,
            rho: 0.0,
            beta0: 0.0,
            beta1: 0.0,
            basis: BasisLabel::Identity,
            n_reps: 10_000,
            alpha: 0.05,
            seed: 0,
        }
    }
}

/// Aggregate outcome of a study.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyReport {
    pub rejection_rate: f64,
    pub mean_ncp_hat: f64,
    pub theoretical_power: f64,
    pub n_failed_fits: usize,
    pub monte_carlo_se: f64,
    pub n_reps: usize,
}

impl StudyReport {
    pub fn csv_header() -> &'static str {
        "rejection_rate,mean_ncp_hat,theoretical_power,n_failed_fits,monte_carlo_se,n_reps"
    }

    pub fn to_csv_row(&self) -> String {
        format!(
            "{:.16e},{:.16e},{:.16e},{},{:.16e},{}",
            self.rejection_rate,
            self.mean_ncp_hat,
            self.theoretical_power,
            self.n_failed_fits,
            self.monte_carlo_se,
            self.n_reps
        )
    }
}

/// Stationary two-state Markov chain with mean `mu` and lag-1 correlation
/// `rho`: P(1|1) = rho + (1-rho) mu, P(1|0) = (1-rho) mu.
pub fn gen_binary_ar1(mu: f64, rho: f64, n: usize, rng: &mut impl Rng) -> Result<DVector<f64>> {
    if !(0.0..1.0).contains(&mu) || mu <= 0.0 {
        return Err(QifError::DomainError(format!("mu must lie in (0, 1), got {mu}")));
    }
    if !(0.0..1.0).contains(&rho) {
        return Err(QifError::DomainError(format!("rho must lie in [0, 1), got {rho}")));
    }
    let mut y = DVector::zeros(n);
    let mut prev = rng.random_bool(mu);
    y[0] = prev as u8 as f64;
    for t in 1..n {
        let p_one = if prev { rho + (1.0 - rho) * mu } else { (1.0 - rho) * mu };
        prev = rng.random_bool(p_one);
        y[t] = prev as u8 as f64;
    }
    Ok(y)
}

/// Stationary Gaussian AR-1 noise with unit marginal variance.
pub fn gen_gaussian_ar1(rho: f64, n: usize, rng: &mut impl Rng) -> Result<DVector<f64>> {
    if !(0.0..1.0).contains(&rho) {
        return Err(QifError::DomainError(format!("rho must lie in [0, 1), got {rho}")));
    }
    let mut eps = DVector::zeros(n);
    let mut prev: f64 = rng.sample(StandardNormal);
    eps[0] = prev;
    let innovation_sd = (1.0 - rho * rho).sqrt();
    for t in 1..n {
        let z: f64 = rng.sample(StandardNormal);
        prev = rho * prev + innovation_sd * z;
        eps[t] = prev;
    }
    Ok(eps)
}

/// Generate one dataset under the design: intercept plus a single
/// time-independent covariate equally spaced on [-1, 1].
pub fn gen_dataset(design: &SimulationDesign, rng: &mut impl Rng) -> Result<LongitudinalDataset> {
    let n_subjects = design.n_subjects;
    let n = design.n_times;
    let mut subjects = Vec::with_capacity(n_subjects);
    for i in 0..n_subjects {
        let covariate = if n_subjects == 1 {
            0.0
        } else {
            -1.0 + 2.0 * i as f64 / (n_subjects - 1) as f64
        };
        let eta = design.beta0 + design.beta1 * covariate;
        let y = match design.family {
            Family::BernoulliLogit => {
                let mu = 1.0 / (1.0 + (-eta).exp());
                gen_binary_ar1(mu, design.rho, n, rng)?
            }
            Family::GaussianIdentity => {
                let mut eps = gen_gaussian_ar1(design.rho, n, rng)?;
                eps.add_scalar_mut(eta);
                eps
            }
        };
        let mut x = DMatrix::zeros(2, n);
        for t in 0..n {
            x[(0, t)] = 1.0;
            x[(1, t)] = covariate;
        }
        subjects.push(SubjectRecord { id: format!("s{}", i + 1), y, x });
    }
    Ok(LongitudinalDataset {
        subjects,
        n_times: n,
        n_covariates: 2,
        covariate_names: vec!["intercept".into(), "x".into()],
    })
}

struct RepOutcome {
    rejected: bool,
    ncp_hat: f64,
}

fn run_replication(design: &SimulationDesign, rep: usize, critical: f64) -> Result<RepOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(design.seed ^ rep as u64);
    let dataset = gen_dataset(design, &mut rng)?;
    let basis = make_basis(design.basis, design.n_times)?;
    let constraint = LinearConstraint::new(
        DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
        DVector::zeros(1),
    )?;
    // constrained fits under a strong alternative are badly misspecified and
    // converge slowly; give them more headroom than the interactive default
    let options = FitOptions { max_iterations: 2000, ..FitOptions::default() };
    let test = test_linear(design.family, &basis, &dataset, &constraint, None, &options)?;
    let drift = DVector::from_vec(vec![0.0, design.beta1]);
    let ncp_hat = estimate_ncp(
        &drift,
        &constraint,
        &test.fit_unrestricted.j_hat_at_min,
        design.n_subjects,
    )?;
    Ok(RepOutcome { rejected: test.t_n > critical, ncp_hat })
}

/// Run the full study. Replications execute in parallel on the current rayon
/// pool; the reduction runs in replication order, so the report is
/// deterministic for a given design and seed.
pub fn run_study(design: &SimulationDesign) -> Result<StudyReport> {
    if design.n_reps == 0 {
        return Err(QifError::DomainError("n_reps must be at least 1".into()));
    }
    let critical = chi2_quantile(1.0 - design.alpha, 1)?;
    let outcomes: Vec<Option<RepOutcome>> = (0..design.n_reps)
        .into_par_iter()
        .map(|rep| run_replication(design, rep, critical).ok())
        .collect();

    let mut rejections = 0usize;
    let mut failed = 0usize;
    let mut ncp_sum = 0.0;
    let mut ncp_comp = 0.0; // Kahan compensation
    for outcome in &outcomes {
        match outcome {
            None => failed += 1,
            Some(o) => {
                if o.rejected {
                    rejections += 1;
                }
                let y = o.ncp_hat - ncp_comp;
                let t = ncp_sum + y;
                ncp_comp = (t - ncp_sum) - y;
                ncp_sum = t;
            }
        }
    }
    let effective = design.n_reps - failed;
    if effective == 0 {
        return Err(QifError::NotConverged("every replication failed".into()));
    }
    let rejection_rate = rejections as f64 / effective as f64;
    let mean_ncp_hat = ncp_sum / effective as f64;
    let theoretical_power = noncentral_chi2_sf(critical, 1, mean_ncp_hat)?;
    let monte_carlo_se = (rejection_rate * (1.0 - rejection_rate) / effective as f64).sqrt();
    Ok(StudyReport {
        rejection_rate,
        mean_ncp_hat,
        theoretical_power,
        n_failed_fits: failed,
        monte_carlo_se,
        n_reps: design.n_reps,
    })
}

/// The 18 size/power cells: both families, rho in {0.2, 0.5, 0.8}, and the
/// identity / AR-1 / AR-2 basis sets.
pub fn study_grid() -> Vec<(Family, f64, BasisLabel)> {
    let mut cells = Vec::new();
    for family in [Family::BernoulliLogit, Family::GaussianIdentity] {
        for rho in [0.2, 0.5, 0.8] {
            for basis in [BasisLabel::Identity, BasisLabel::Ar1, BasisLabel::Ar2] {
                cells.push((family, rho, basis));
            }
        }
    }
    cells
}
