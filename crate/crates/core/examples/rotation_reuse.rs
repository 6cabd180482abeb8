//! Builds Jacobian rows for rotated arrays by rotating the rows of the
//! reference angle, and compares them with rows computed directly. Uses a
//! well-resolved low-frequency setup where rotated rows are accurate.
//!
//!     cargo run --release --example rotation_reuse

use std::time::Instant;

use ustomo::acquisition::{AcquisitionProtocol, ArrayGeometry, SensorType};
use ustomo::domain::{Padding, SimulationOptions};
use ustomo::grid::{Grid, MediumMap};
use ustomo::helmholtz::PmlSpec;
use ustomo::jacobian::{assemble_jacobian, Reuse};

fn main() -> ustomo::Result<()> {
    let grid = Grid::centered(64, 64, 0.15625, 0.15625)?;
    let tau0 = MediumMap::homogeneous(grid, 0.003, 1540.0)?;
    let opts = SimulationOptions {
        pml: PmlSpec { width_px: 90, strength: 1.0 },
        padding: Padding::Fixed(130),
        ..Default::default()
    };
    for sensor_type in [SensorType::Ps, SensorType::Pi] {
        let proto = AcquisitionProtocol {
            geometry: ArrayGeometry { n_sources: 3, n_sensors: 3, array_length: 6.0, separation: 16.0, sensor_width: 1.0, center: [0.0, 0.0] },
            frequencies_hz: vec![0.25e6],
            angles_deg: vec![0.0, 30.0, 45.0, 90.0],
            sensor_type,
            source_amplitude: 1.0,
        };
        let t = Instant::now();
        let direct = assemble_jacobian(&tau0, &proto, &opts, Reuse::Never)?;
        let t_direct = t.elapsed().as_secs_f64();
        let t = Instant::now();
        let rotated = assemble_jacobian(&tau0, &proto, &opts, Reuse::Always)?;
        let t_rot = t.elapsed().as_secs_f64();
        println!("{sensor_type}: direct {t_direct:.1} s {:?}, rotated {t_rot:.1} s {:?}", direct.solve_counts(), rotated.solve_counts());
        let per_angle = direct.rows() / proto.angles_deg.len();
        for (a, theta) in proto.angles_deg.iter().enumerate() {
            let (mut num, mut den) = (0.0, 0.0);
            for r in a * per_angle..(a + 1) * per_angle {
                let (d, q) = (direct.row(r), rotated.row(r));
                for (x, y) in d.values.values().iter().zip(q.values.values()) {
                    num += (x - y).norm_sqr();
                    den += x.norm_sqr();
                }
            }
            println!("    {theta:>5} deg: relative row difference {:.4}", (num / den).sqrt());
        }
    }
    Ok(())
}
