//! Converts between the dimensionless absorption of the model and dB/cm.
//!
//!     cargo run --example absorption_units

use std::f64::consts::PI;

use ustomo::grid::{alpha_to_tau, tau_to_alpha};

fn main() -> ustomo::Result<()> {
    let c = 1540.0;
    println!("{:>8} {:>8} {:>10}", "tau", "f_MHz", "dB/cm");
    for tau in [0.003, 0.006] {
        for f_mhz in [1.0, 1.5, 2.0, 2.5] {
            let alpha = tau_to_alpha(tau, c, 2.0 * PI * f_mhz * 1e6)?;
            println!("{tau:>8} {f_mhz:>8} {alpha:>10.4}");
        }
    }
    let back = alpha_to_tau(1.0, c, 2.0 * PI * 1e6)?;
    println!("1 dB/cm at 1 MHz is tau = {back:.6}");
    Ok(())
}
