//! Product-limit survival by randomised arm with Greenwood standard errors.

use psurv::estimands::kaplan_meier;
use psurv::simulate::{generate, preset};

fn main() -> psurv::Result<()> {
    let (data, _) = generate(&preset("sim2_noer")?)?;
    for arm in [0u8, 1] {
        let km = kaplan_meier(&data, arm)?;
        println!("arm {arm}: {} units, {} event times", data.arm_count(arm), km.times.len());
        for t in [0.5, 1.0, 2.0, 3.0, 4.0] {
            let i = km.times.iter().rposition(|&e| e <= t);
            let se = i.map_or(0.0, |i| km.variance[i].sqrt());
            println!("  S({t}) = {:.4} (se {:.4})", km.eval(t), se);
        }
    }
    Ok(())
}
