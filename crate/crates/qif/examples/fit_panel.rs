//! Fit a marginal regression to a small longitudinal panel and print
//! coefficients with robust standard errors.

use qif::*;

static DATA: &str = "\
subject,time,y,intercept,dose
a,1,1.8,1,0.0
a,2,2.4,1,0.5
a,3,3.1,1,1.0
b,1,0.9,1,0.0
b,2,1.9,1,0.5
b,3,2.6,1,1.0
c,1,1.2,1,0.0
c,2,2.2,1,0.5
c,3,3.4,1,1.0
d,1,1.5,1,0.0
d,2,1.7,1,0.5
d,3,2.9,1,1.0
";

fn main() -> Result<()> {
    let dataset = model::read_csv_from(DATA.as_bytes())?;
    let basis = make_basis(BasisLabel::Ar1, dataset.n_times)?;

    let result = fit(
        Family::GaussianIdentity,
        &basis,
        &dataset,
        None,
        None,
        &FitOptions::default(),
    )?;
    let se = standard_errors(&result, dataset.n_subjects())?;

    println!("converged in {} iterations, Q = {:.4}", result.iterations, result.q_min);
    for (k, name) in dataset.covariate_names.iter().enumerate() {
        println!("{name:<10} {:>8.4} (se {:.4})", result.beta_hat[k], se[k]);
    }
    Ok(())
}
