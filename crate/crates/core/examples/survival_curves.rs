//! Posterior survival curves by stratum and arm, and the complier survival
//! effect, next to the simulated truth.

use psurv::data::{StrataConfig, Stratum};
use psurv::estimands::{spce, strata_proportions, survival_posterior, time_grid};
use psurv::model::{Family, Model, PriorSpec};
use psurv::sampler::{run_chains, HmcConfig};
use psurv::simulate::{generate, preset};

fn main() -> psurv::Result<()> {
    let mut scenario = preset("sim1_er")?;
    scenario.n = 800;
    let (data, _) = generate(&scenario)?;
    let model = Model::new(StrataConfig::standard(true, true), Family::Weibull, Vec::new());
    let hmc = HmcConfig {
        chains: 4,
        iterations: 600,
        warmup: 300,
        seed: 7,
        ..HmcConfig::default()
    };
    let (draws, _) = run_chains(&data, &model, &PriorSpec::default(), &hmc)?;

    let props = strata_proportions(&data, &draws, &model)?;
    for (k, s) in model.config().active().iter().enumerate() {
        let mean = props.iter().map(|p| p[k]).sum::<f64>() / props.len() as f64;
        println!("pi[{}] = {mean:.3}", s.name());
    }

    let times = time_grid(4.0, 9)?;
    let c1 = survival_posterior(&data, &draws, &model, Stratum::Complier, 1, &times)?;
    let c0 = survival_posterior(&data, &draws, &model, Stratum::Complier, 0, &times)?;
    let truth1 = scenario.stratum_survival(&data, Stratum::Complier, 1, &times)?;
    let effect = spce(&c1, &c0)?;

    println!("{:>5} {:>8} {:>17} {:>8} {:>9}", "t", "G(t;c,1)", "95% band", "truth", "SPCE");
    for (i, t) in times.iter().enumerate() {
        println!(
            "{t:>5.2} {:>8.4} [{:>6.4}, {:>6.4}] {:>8.4} {:>9.4}",
            c1.summary.mean[i], c1.summary.lo[i], c1.summary.hi[i], truth1[i], effect.summary.mean[i]
        );
    }
    Ok(())
}
