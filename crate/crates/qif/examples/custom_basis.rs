//! Supply a custom basis for the inverse working correlation: identity plus
//! an exchangeable (all-ones) component, built by hand instead of with
//! `make_basis`.

use nalgebra::DMatrix;
use qif::mcstudy::gen_dataset;
use qif::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let design = SimulationDesign {
        family: Family::GaussianIdentity,
        n_subjects: 100,
        rho: 0.4,
        beta1: 0.2,
        ..SimulationDesign::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let dataset = gen_dataset(&design, &mut rng)?;

    let n = design.n_times;
    let basis = BasisSet {
        n,
        matrices: vec![DMatrix::identity(n, n), DMatrix::from_element(n, n, 1.0)],
        label: BasisLabel::Custom,
    };

    let result = fit(
        design.family,
        &basis,
        &dataset,
        None,
        None,
        &FitOptions::default(),
    )?;
    let se = standard_errors(&result, dataset.n_subjects())?;
    for (k, name) in dataset.covariate_names.iter().enumerate() {
        println!("{name:<10} {:>8.4} (se {:.4})", result.beta_hat[k], se[k]);
    }
    Ok(())
}
