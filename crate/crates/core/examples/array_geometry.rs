//! Places the source and sensor arrays at several rotation angles and
//! integrates a constant field over each sensor aperture.
//!
//!     cargo run --example array_geometry

use num_complex::Complex64;
use ustomo::acquisition::{place_arrays, sensor_quadrature, ArrayGeometry};
use ustomo::grid::Grid;
use ustomo::helmholtz::PmlSpec;

fn main() -> ustomo::Result<()> {
    let geometry = ArrayGeometry {
        n_sources: 10,
        n_sensors: 10,
        array_length: 30.0,
        separation: 30.0,
        sensor_width: 5.0,
        center: [0.0, 0.0],
    };
    // big enough for every rotated element
    let grid = Grid::centered(320, 320, 0.15625, 0.15625)?;
    for theta in [0.0, 30.0, 90.0, 172.5] {
        let p = place_arrays(&geometry, theta);
        let s0 = p.sources[0];
        let m0 = p.sensors[0];
        println!("theta {theta:>6}: source 0 at ({:7.3}, {:7.3}) mm, sensor 0 centred at ({:7.3}, {:7.3}) mm", s0[0], s0[1], m0.center[0], m0.center[1]);
        let ones = vec![Complex64::new(1.0, 0.0); grid.len()];
        let lengths: Vec<f64> = p
            .sensors
            .iter()
            .map(|seg| sensor_quadrature(&grid, seg, &PmlSpec::default()).map(|w| w.integrate(&ones).re))
            .collect::<ustomo::Result<_>>()?;
        println!("    integral of 1 over each aperture (mm): {:?}", lengths.iter().map(|l| format!("{l:.6}")).collect::<Vec<_>>());
    }
    Ok(())
}
