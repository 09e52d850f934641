//! Fit the principal stratification model to a simulated trial and print
//! convergence diagnostics per parameter.

use psurv::data::StrataConfig;
use psurv::model::{Family, Model, PriorSpec};
use psurv::sampler::{run_chains, HmcConfig};
use psurv::simulate::{generate, preset};

fn main() -> psurv::Result<()> {
    let mut scenario = preset("sim1_er")?;
    scenario.n = 600;
    let (data, _) = generate(&scenario)?;

    let model = Model::new(StrataConfig::standard(true, true), Family::Weibull, Vec::new());
    let hmc = HmcConfig {
        chains: 4,
        iterations: 600,
        warmup: 300,
        seed: 42,
        ..HmcConfig::default()
    };
    let (draws, diag) = run_chains(&data, &model, &PriorSpec::default(), &hmc)?;

    println!("{:<24} {:>9} {:>8} {:>7} {:>7}", "parameter", "mean", "sd", "rhat", "ess");
    for (j, name) in diag.param_names.iter().enumerate() {
        let xs: Vec<f64> = draws.iter_draws().map(|d| d[j]).collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        println!("{name:<24} {mean:>9.4} {sd:>8.4} {:>7.4} {:>7.0}", diag.rhat[j], diag.ess[j]);
    }
    println!("divergences: {}", diag.total_divergences());
    Ok(())
}
