//! Simulate a two-arm trial with noncompliance and compare the realised
//! event rate with its expectation.
//!
//! cargo run --example simulate_trial -- [preset] [n]

use psurv::simulate::{expected_event_rate, generate, preset, preset_names};

fn main() -> psurv::Result<()> {
    let mut args = std::env::args().skip(1);
    let name = args.next().unwrap_or_else(|| "sim1_er".into());
    let mut scenario = preset(&name)?;
    if let Some(n) = args.next() {
        scenario.n = n.parse().expect("n must be an integer");
    }
    println!("presets: {}", preset_names().join(", "));

    let (data, truth) = generate(&scenario)?;
    let strata = scenario.strata_order();
    let shares = truth.stratum_shares(&strata);
    println!("{} units from {}", data.len(), scenario.name);
    for (s, p) in strata.iter().zip(&shares) {
        println!("  {:<13} {:.3}", s.name(), p);
    }

    let counts = data.cell_counts();
    println!("cells (z, d): (0,0)={} (0,1)={} (1,0)={} (1,1)={}", counts[0][0], counts[0][1], counts[1][0], counts[1][1]);
    let events = data.units().iter().filter(|u| !u.censored).count() as f64 / data.len() as f64;
    let expected = expected_event_rate(&scenario, scenario.censoring_rate)?;
    println!("event rate {events:.3} (expected {expected:.3})");
    Ok(())
}
