//! Dump Q_N over a slope grid (intercept held at its estimate) for external
//! plotting; the objective is smooth and convex near the minimum.

use nalgebra::DVector;
use qif::mcstudy::gen_dataset;
use qif::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let design = SimulationDesign {
        family: Family::BernoulliLogit,
        n_subjects: 100,
        rho: 0.5,
        beta1: 0.5,
        basis: BasisLabel::Ar1,
        ..SimulationDesign::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let dataset = gen_dataset(&design, &mut rng)?;
    let basis = make_basis(design.basis, design.n_times)?;

    let fitres = fit(
        design.family,
        &basis,
        &dataset,
        None,
        None,
        &FitOptions::default(),
    )?;

    println!("slope,q_value");
    let mut beta = DVector::from_vec(vec![fitres.beta_hat[0], 0.0]);
    for i in 0..=60 {
        beta[1] = -1.0 + 3.0 * i as f64 / 60.0;
        let eval = qif_value(design.family, &basis, &dataset, &beta, false)?;
        println!("{:.4},{:.6}", beta[1], eval.q_value);
    }
    Ok(())
}
