//! Restricted mean survival under a Weibull model: the incomplete-gamma
//! closed form against trapezoid and Simpson quadrature.

use psurv::estimands::weibull_restricted_mean;
use psurv::model::Family;
use psurv::special::{QuadratureGrid, Rule};

fn main() -> psurv::Result<()> {
    let (lin, log_shape) = (-3.0, 2.0f64.ln());
    println!("{:>4} {:>8} {:>14} {:>11} {:>11}", "t", "K", "closed form", "trap err", "simpson err");
    for t in [0.5, 1.0, 2.0, 4.0] {
        let exact = weibull_restricted_mean(t, lin, log_shape);
        for k in [10, 100, 1000] {
            let grid = QuadratureGrid::new(t, k)?;
            let s: Vec<f64> = grid
                .nodes()
                .iter()
                .map(|&u| Family::Weibull.log_survival(u, lin, log_shape).exp())
                .collect();
            let trap = Rule::Trapezoid.integrate(&s, &grid)?;
            let simp = Rule::Simpson.integrate(&s, &grid)?;
            println!("{t:>4} {k:>8} {exact:>14.10} {:>11.2e} {:>11.2e}", trap - exact, simp - exact);
        }
    }
    Ok(())
}
