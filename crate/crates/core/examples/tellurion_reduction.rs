//! Build a one-degree-of-freedom "tellurion" from a recorded orbit: every
//! coordinate becomes a function of the Earth's unwrapped angle.
//!
//! ```bash
//! cargo run -p obsim --example tellurion_reduction
//! ```

use obsim::dynamics::{simulate, Integrator};
use obsim::reduction::{build_reduced, detect_drive_coordinate, playback, ChartRequest};
use obsim::scenario::{moon_period, paper_sem, paper_sem_init};

fn main() {
    let tm = moon_period();
    let rec = simulate(&paper_sem(), &paper_sem_init(), 3.0 * tm, tm / 1000.0, Integrator::Rk4).unwrap();

    let charts = [
        ChartRequest::Cylindrical("Earth".into()),
        ChartRequest::Cylindrical("Moon".into()),
    ];
    let drive = detect_drive_coordinate(&rec, &charts).unwrap();
    println!("drive: {} (margin {:.4})", drive.chart, drive.margin);

    let model = build_reduced(&rec, &drive).unwrap();
    println!(
        "model: {} coordinates, {} knots, {} slaved, dof {}",
        model.n(),
        model.knot_count(),
        model.slave_count(),
        model.dof()
    );

    // Between knots the curve is interpolated; compare against a finer run.
    let fine = simulate(&paper_sem(), &paper_sem_init(), 3.0 * tm, tm / 4000.0, Integrator::Rk4).unwrap();
    let back = playback(&model, &fine.times()).unwrap();
    let worst = fine
        .samples
        .iter()
        .zip(&back.samples)
        .flat_map(|(a, b)| a.q.iter().zip(&b.q).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);
    println!("max playback error on a 4x finer grid: {worst:.2e}");
}
