//! Command-line front end: fit, test, gof, simulate and power subcommands.
//!
//! Exit codes: 0 success, 1 input or domain error, 2 non-convergence.

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use std::path::PathBuf;

use crate::corrbasis::{make_basis, read_custom_basis, BasisLabel, BasisSet};
use crate::error::{QifError, Result};
use crate::inference::{
    chi2_quantile, goodness_of_fit, noncentral_chi2_sf, standard_errors, test_linear,
};
use crate::mcstudy::{run_study, study_grid, SimulationDesign, StudyReport};
use crate::model::{check_family_support, read_csv, Family, LongitudinalDataset};
use crate::solver::{fit, fit_multistart, qif_value, FitOptions, LinearConstraint};

#[derive(Parser)]
#[command(name = "qif", version, about = "Marginal regression for correlated longitudinal data")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Gaussian,
    Binomial,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Family {
        match f {
            FamilyArg::Gaussian => Family::GaussianIdentity,
            FamilyArg::Binomial => Family::BernoulliLogit,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BasisArg {
    Identity,
    Exchangeable,
    Ar1,
    Ar2,
}

impl From<BasisArg> for BasisLabel {
    fn from(b: BasisArg) -> BasisLabel {
        match b {
            BasisArg::Identity => BasisLabel::Identity,
            BasisArg::Exchangeable => BasisLabel::Exchangeable,
            BasisArg::Ar1 => BasisLabel::Ar1,
            BasisArg::Ar2 => BasisLabel::Ar2,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum OutputArg {
    Text,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum TruthArg {
    H0,
    H1,
}

#[derive(Args)]
struct ModelArgs {
    /// Long-format CSV: subject,time,y,<covariates...>
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    family: FamilyArg,
    /// Built-in basis set
    #[arg(long, value_enum, default_value = "ar1", conflicts_with = "basis_file")]
    basis: BasisArg,
    /// Custom basis file: `n s` then s blocks of n rows
    #[arg(long)]
    basis_file: Option<PathBuf>,
    /// Starting values, comma separated (default: all zeros)
    #[arg(long, value_delimiter = ',')]
    init: Option<Vec<f64>>,
    /// Also try the 2q+1 fixed grid of starting points and keep the best fit
    #[arg(long)]
    multistart: bool,
    #[arg(long, value_enum, default_value = "text")]
    output: OutputArg,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the marginal regression and print coefficient estimates
    Fit {
        #[command(flatten)]
        model: ModelArgs,
        /// Dump Q_N over a grid instead of fitting: "coef:min:max:steps"
        #[arg(long)]
        grid: Option<String>,
    },
    /// Test a linear hypothesis L' beta = b
    Test {
        #[command(flatten)]
        model: ModelArgs,
        /// Pin the named covariates to zero (shorthand for L' beta = 0)
        #[arg(long, value_delimiter = ',', conflicts_with = "constraint_file")]
        pin: Option<Vec<String>>,
        /// File with p lines `l1 ... lq b` describing general constraints
        #[arg(long)]
        constraint_file: Option<PathBuf>,
    },
    /// Goodness-of-fit test for the unconstrained model
    Gof {
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Run a Monte Carlo size/power study
    Simulate {
        #[arg(long, value_enum, default_value = "binomial")]
        family: FamilyArg,
        #[arg(long, default_value_t = 0.0)]
        rho: f64,
        #[arg(long, value_enum, default_value = "identity")]
        basis: BasisArg,
        /// h0: beta = (0, 0); h1: beta = (0, 0.5)
        #[arg(long, value_enum, default_value = "h0")]
        truth: TruthArg,
        #[arg(long, default_value_t = 10_000)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 0.0)]
        beta0: f64,
        /// Overrides the slope implied by --truth when given
        #[arg(long)]
        beta1: Option<f64>,
        #[arg(long, default_value_t = 50)]
        subjects: usize,
        #[arg(long, default_value_t = 5)]
        times: usize,
        /// Worker threads (default: all cores)
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long, value_enum, default_value = "text")]
        output: OutputArg,
        /// Run every (family, rho, basis) cell under H0 and H1
        #[arg(long, conflicts_with = "table4")]
        table3: bool,
        /// Run every cell under H1 and report mean ncp / theoretical power
        #[arg(long)]
        table4: bool,
    },
    /// Theoretical power of the level-alpha chi-squared test
    Power {
        #[arg(long)]
        df: usize,
        #[arg(long)]
        ncp: f64,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
}

/// Parse argv and run; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                QifError::MaxIterationsExceeded | QifError::NotConverged(_) => 2,
                _ => 1,
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Fit { model, grid } => cmd_fit(&model, grid.as_deref()),
        Command::Test { model, pin, constraint_file } => {
            cmd_test(&model, pin.as_deref(), constraint_file.as_deref())
        }
        Command::Gof { model } => cmd_gof(&model),
        Command::Simulate {
            family,
            rho,
            basis,
            truth,
            reps,
            seed,
            alpha,
            beta0,
            beta1,
            subjects,
            times,
            threads,
            output,
            table3,
            table4,
        } => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads.unwrap_or(0))
                .build()
                .map_err(|e| QifError::DomainError(e.to_string()))?;
            let base = SimulationDesign {
                family: family.into(),
                n_subjects: subjects,
                n_times: times,
                rho,
                beta0,
                beta1: beta1.unwrap_or(match truth {
                    TruthArg::H0 => 0.0,
                    TruthArg::H1 => 0.5,
                }),
                basis: basis.into(),
                n_reps: reps,
                alpha,
                seed,
            };
            pool.install(|| {
                if table3 {
                    cmd_table3(&base, output)
                } else if table4 {
                    cmd_table4(&base, output)
                } else {
                    cmd_simulate(&base, output)
                }
            })
        }
        Command::Power { df, ncp, alpha } => cmd_power(df, ncp, alpha),
    }
}

fn load_inputs(model: &ModelArgs) -> Result<(LongitudinalDataset, Family, BasisSet)> {
    let dataset = read_csv(&model.data)?;
    let family: Family = model.family.into();
    check_family_support(family, &dataset)?;
    let basis = match &model.basis_file {
        Some(path) => {
            let b = read_custom_basis(path)?;
            if b.n != dataset.n_times {
                return Err(QifError::UnsupportedDimension(format!(
                    "basis dimension {} does not match panel length {}",
                    b.n, dataset.n_times
                )));
            }
            b
        }
        None => make_basis(model.basis.into(), dataset.n_times)?,
    };
    Ok((dataset, family, basis))
}

fn init_vector(model: &ModelArgs, q: usize) -> Result<Option<DVector<f64>>> {
    match &model.init {
        None => Ok(None),
        Some(values) => {
            if values.len() != q {
                return Err(QifError::DomainError(format!(
                    "--init has {} entries, model has {q} covariates",
                    values.len()
                )));
            }
            Ok(Some(DVector::from_vec(values.clone())))
        }
    }
}

fn run_fit(
    model: &ModelArgs,
    dataset: &LongitudinalDataset,
    family: Family,
    basis: &BasisSet,
    constraint: Option<&LinearConstraint>,
) -> Result<crate::solver::FitResult> {
    let init = init_vector(model, dataset.n_covariates)?;
    let options = FitOptions::default();
    if model.multistart {
        fit_multistart(family, basis, dataset, init.as_ref(), constraint, &options)
    } else {
        fit(family, basis, dataset, init.as_ref(), constraint, &options)
    }
}

fn fmt(v: f64, output: OutputArg) -> String {
    match output {
        OutputArg::Text => format!("{v:.5}"),
        // 17 significant digits round-trip f64 exactly
        OutputArg::Csv => format!("{v:.16e}"),
    }
}

fn cmd_fit(model: &ModelArgs, grid: Option<&str>) -> Result<i32> {
    let (dataset, family, basis) = load_inputs(model)?;
    if let Some(spec) = grid {
        return cmd_grid(model, &dataset, family, &basis, spec);
    }
    let result = run_fit(model, &dataset, family, &basis, None)?;
    let se = standard_errors(&result, dataset.n_subjects())?;
    match model.output {
        OutputArg::Text => {
            println!("{:<16} {:>12} {:>12} {:>12}", "coefficient", "estimate", "std_error", "t_ratio");
            for (k, name) in dataset.covariate_names.iter().enumerate() {
                println!(
                    "{:<16} {:>12.5} {:>12.5} {:>12.5}",
                    name,
                    result.beta_hat[k],
                    se[k],
                    result.beta_hat[k] / se[k]
                );
            }
            println!(
                "Q_min = {:.5}  iterations = {}  converged = {}",
                result.q_min, result.iterations, result.converged
            );
        }
        OutputArg::Csv => {
            println!("name,estimate,std_error,t_ratio");
            for (k, name) in dataset.covariate_names.iter().enumerate() {
                println!(
                    "{name},{},{},{}",
                    fmt(result.beta_hat[k], OutputArg::Csv),
                    fmt(se[k], OutputArg::Csv),
                    fmt(result.beta_hat[k] / se[k], OutputArg::Csv)
                );
            }
            println!(
                "# q_min={} iterations={} converged={}",
                fmt(result.q_min, OutputArg::Csv),
                result.iterations,
                result.converged
            );
        }
    }
    Ok(if result.converged { 0 } else { 2 })
}

fn cmd_grid(
    model: &ModelArgs,
    dataset: &LongitudinalDataset,
    family: Family,
    basis: &BasisSet,
    spec: &str,
) -> Result<i32> {
    // "coef:min:max:steps"; remaining coefficients stay at --init (or zero)
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 4 {
        return Err(QifError::Parse("--grid expects coef:min:max:steps".into()));
    }
    let q = dataset.n_covariates;
    let coef = dataset
        .covariate_names
        .iter()
        .position(|n| n == parts[0])
        .or_else(|| parts[0].parse::<usize>().ok().filter(|&k| k < q))
        .ok_or_else(|| QifError::Parse(format!("unknown coefficient '{}'", parts[0])))?;
    let min: f64 = parts[1].parse().map_err(|_| QifError::Parse("bad grid min".into()))?;
    let max: f64 = parts[2].parse().map_err(|_| QifError::Parse("bad grid max".into()))?;
    let steps: usize = parts[3].parse().map_err(|_| QifError::Parse("bad grid steps".into()))?;
    if steps < 2 || !(max > min) {
        return Err(QifError::Parse("--grid needs max > min and steps >= 2".into()));
    }
    let mut beta = init_vector(model, q)?.unwrap_or_else(|| DVector::zeros(q));
    println!("beta,q_value");
    for i in 0..steps {
        let value = min + (max - min) * i as f64 / (steps - 1) as f64;
        beta[coef] = value;
        let eval = qif_value(family, basis, dataset, &beta, false)?;
        println!("{},{}", fmt(value, OutputArg::Csv), fmt(eval.q_value, OutputArg::Csv));
    }
    Ok(0)
}

fn build_constraint(
    dataset: &LongitudinalDataset,
    pin: Option<&[String]>,
    constraint_file: Option<&std::path::Path>,
) -> Result<LinearConstraint> {
    let q = dataset.n_covariates;
    if let Some(names) = pin {
        if names.is_empty() {
            return Err(QifError::DomainError("--pin needs at least one name".into()));
        }
        let mut l = DMatrix::zeros(q, names.len());
        for (j, name) in names.iter().enumerate() {
            let k = dataset
                .covariate_names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| {
                    QifError::DomainError(format!(
                        "unknown covariate '{name}' (have: {})",
                        dataset.covariate_names.join(", ")
                    ))
                })?;
            l[(k, j)] = 1.0;
        }
        return LinearConstraint::new(l, DVector::zeros(names.len()));
    }
    let path = constraint_file
        .ok_or_else(|| QifError::DomainError("test requires --pin or --constraint-file".into()))?;
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let values: std::result::Result<Vec<f64>, _> =
            line.split_whitespace().map(str::parse).collect();
        let values = values.map_err(|_| QifError::Parse(format!("bad constraint line: {line}")))?;
        if values.len() != q + 1 {
            return Err(QifError::Parse(format!(
                "constraint line needs {} coefficients plus b, found {}",
                q,
                values.len()
            )));
        }
        rows.push(values);
    }
    if rows.is_empty() {
        return Err(QifError::Parse("constraint file has no rows".into()));
    }
    let p = rows.len();
    let mut l = DMatrix::zeros(q, p);
    let mut b = DVector::zeros(p);
    for (j, row) in rows.iter().enumerate() {
        for k in 0..q {
            l[(k, j)] = row[k];
        }
        b[j] = row[q];
    }
    LinearConstraint::new(l, b)
}

fn cmd_test(
    model: &ModelArgs,
    pin: Option<&[String]>,
    constraint_file: Option<&std::path::Path>,
) -> Result<i32> {
    let (dataset, family, basis) = load_inputs(model)?;
    let constraint = build_constraint(&dataset, pin, constraint_file)?;
    let init = init_vector(model, dataset.n_covariates)?;
    let result = test_linear(
        family,
        &basis,
        &dataset,
        &constraint,
        init.as_ref(),
        &FitOptions::default(),
    )?;
    match model.output {
        OutputArg::Text => {
            println!("Q_restricted   = {:.5}", result.q_restricted);
            println!("Q_unrestricted = {:.5}", result.q_unrestricted);
            println!("T_N            = {:.5}", result.t_n);
            println!("df             = {}", result.df);
            println!("P              = {:.5}", result.p_value);
        }
        OutputArg::Csv => {
            println!("q_restricted,q_unrestricted,t_n,df,p_value");
            println!(
                "{},{},{},{},{}",
                fmt(result.q_restricted, OutputArg::Csv),
                fmt(result.q_unrestricted, OutputArg::Csv),
                fmt(result.t_n, OutputArg::Csv),
                result.df,
                fmt(result.p_value, OutputArg::Csv)
            );
        }
    }
    Ok(0)
}

fn cmd_gof(model: &ModelArgs) -> Result<i32> {
    let (dataset, family, basis) = load_inputs(model)?;
    let result = run_fit(model, &dataset, family, &basis, None)?;
    if !result.converged {
        return Err(QifError::NotConverged("unconstrained fit".into()));
    }
    let r = dataset.n_covariates * basis.len();
    let gof = goodness_of_fit(&result, r, dataset.n_covariates)?;
    match model.output {
        OutputArg::Text => {
            println!("Q  = {:.5}", gof.q_at_min);
            println!("df = {}", gof.df);
            println!("P  = {:.5}", gof.p_value);
        }
        OutputArg::Csv => {
            println!("q,df,p_value");
            println!(
                "{},{},{}",
                fmt(gof.q_at_min, OutputArg::Csv),
                gof.df,
                fmt(gof.p_value, OutputArg::Csv)
            );
        }
    }
    Ok(0)
}

fn print_report(report: &StudyReport, output: OutputArg) {
    match output {
        OutputArg::Text => {
            println!("rejection_rate    = {:.4}", report.rejection_rate);
            println!("monte_carlo_se    = {:.4}", report.monte_carlo_se);
            println!("mean_ncp_hat      = {:.4}", report.mean_ncp_hat);
            println!("theoretical_power = {:.4}", report.theoretical_power);
            println!("failed_fits       = {} / {}", report.n_failed_fits, report.n_reps);
        }
        OutputArg::Csv => {
            println!("{}", StudyReport::csv_header());
            println!("{}", report.to_csv_row());
        }
    }
}

fn cmd_simulate(design: &SimulationDesign, output: OutputArg) -> Result<i32> {
    let report = run_study(design)?;
    print_report(&report, output);
    Ok(0)
}

fn cmd_table3(base: &SimulationDesign, output: OutputArg) -> Result<i32> {
    if matches!(output, OutputArg::Csv) {
        println!("family,rho,basis,truth,{}", StudyReport::csv_header());
    } else {
        println!(
            "{:<10} {:<5} {:<10} {:<6} {:>10} {:>10}",
            "family", "rho", "basis", "truth", "rej_rate", "mc_se"
        );
    }
    for (cell_idx, (family, rho, basis)) in study_grid().iter().enumerate() {
        for (truth_idx, beta1) in [0.0, 0.5].iter().enumerate() {
            let design = SimulationDesign {
                family: *family,
                rho: *rho,
                basis: *basis,
                beta1: *beta1,
                seed: base.seed.wrapping_add((2 * cell_idx + truth_idx) as u64) << 20,
                ..base.clone()
            };
            let report = run_study(&design)?;
            let truth = if truth_idx == 0 { "h0" } else { "h1" };
            if matches!(output, OutputArg::Csv) {
                println!(
                    "{},{rho},{},{truth},{}",
                    family.name(),
                    basis.name(),
                    report.to_csv_row()
                );
            } else {
                println!(
                    "{:<10} {:<5} {:<10} {:<6} {:>10.4} {:>10.4}",
                    family.name(),
                    rho,
                    basis.name(),
                    truth,
                    report.rejection_rate,
                    report.monte_carlo_se
                );
            }
        }
    }
    Ok(0)
}

fn cmd_table4(base: &SimulationDesign, output: OutputArg) -> Result<i32> {
    if matches!(output, OutputArg::Csv) {
        println!("family,rho,basis,{}", StudyReport::csv_header());
    } else {
        println!(
            "{:<10} {:<5} {:<10} {:>10} {:>10}",
            "family", "rho", "basis", "ncp_hat", "power"
        );
    }
    for (cell_idx, (family, rho, basis)) in study_grid().iter().enumerate() {
        let design = SimulationDesign {
            family: *family,
            rho: *rho,
            basis: *basis,
            beta1: 0.5,
            seed: base.seed.wrapping_add(cell_idx as u64) << 20,
            ..base.clone()
        };
        let report = run_study(&design)?;
        if matches!(output, OutputArg::Csv) {
            println!("{},{rho},{},{}", family.name(), basis.name(), report.to_csv_row());
        } else {
            println!(
                "{:<10} {:<5} {:<10} {:>10.3} {:>10.3}",
                family.name(),
                rho,
                basis.name(),
                report.mean_ncp_hat,
                report.theoretical_power
            );
        }
    }
    Ok(0)
}

fn cmd_power(df: usize, ncp: f64, alpha: f64) -> Result<i32> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(QifError::DomainError(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let critical = chi2_quantile(1.0 - alpha, df)?;
    let power = noncentral_chi2_sf(critical, df, ncp)?;
    println!("{power:.3}");
    Ok(0)
}
