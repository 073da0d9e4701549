//! Homogenizes a few seed cells and checks the solid cell against the
//! plane-stress constituent.
//!
//! `cargo run --release --example homogenize_cells -- [size]`

use metadesign::microstructure::seeds::SeedFamily;
use metadesign::{Homogenizer, MaterialSpec, Microstructure, Side, StrainCase};
use std::time::Instant;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let size: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(50);
    let mat = MaterialSpec::default();
    let hom = Homogenizer::new(size, size, mat)?;

    let solid = hom.homogenize(&Microstructure::filled(size, size, true))?;
    let c = mat.constituent();
    println!("solid cell     C11 {:.6} C12 {:.6} C22 {:.6} C33 {:.6}", solid.c11, solid.c12, solid.c22, solid.c33);
    println!("constituent    C11 {:.6} C12 {:.6} C22 {:.6} C33 {:.6}", c.c11, c.c12, c.c22, c.c33);

    let h = size / 5;
    let seeds = [
        SeedFamily::Cross { horizontal: h, vertical: h / 2 },
        SeedFamily::XBrace { thickness: h as f64, hub: h as f64 },
        SeedFamily::HolePlate { rx: 0.4 * size as f64, ry: 0.2 * size as f64 },
        SeedFamily::Frame { horizontal: h / 2, vertical: h, fillet: 2.0 },
    ];
    for s in seeds {
        let m = s.render(size, size)?;
        let t = Instant::now();
        let p = hom.homogenize(&m)?;
        let secs = t.elapsed().as_secs_f64();
        let traces = hom.boundary_stress_traces(&m)?;
        let peak = traces.get(Side::Right, StrainCase::E11).iter().fold(0.0f64, |a, b| a.max(*b));
        println!(
            "{:<10} vf {:.3}  C11 {:.4} C12 {:.4} C22 {:.4} C33 {:.4}  peak right-face trace {peak:.3}  ({secs:.2} s)",
            s.name(),
            m.volume_fraction(),
            p.c11,
            p.c12,
            p.c22,
            p.c33
        );
    }
    Ok(())
}
