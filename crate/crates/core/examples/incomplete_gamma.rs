//! Regularized lower incomplete gamma function on a small table.

use psurv::special::{ln_gamma, reg_lower_inc_gamma};

fn main() -> psurv::Result<()> {
    let xs = [0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 30.0];
    print!("{:>6}", "a \\ x");
    for x in xs {
        print!("{x:>12}");
    }
    println!();
    for a in [0.25, 0.5, 1.0, 2.5, 5.0, 20.0] {
        print!("{a:>6}");
        for x in xs {
            print!("{:>12.8}", reg_lower_inc_gamma(a, x)?);
        }
        println!();
    }
    println!("ln Gamma(0.5) = {:.15} (ln sqrt(pi) = {:.15})", ln_gamma(0.5)?, 0.5 * std::f64::consts::PI.ln());
    Ok(())
}
