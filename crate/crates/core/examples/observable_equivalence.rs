//! A coarse observer cannot tell the tellurion's playback from the real
//! orbit; a fine one can.
//!
//! ```bash
//! cargo run -p obsim --example observable_equivalence
//! ```

use obsim::dynamics::{simulate, Integrator};
use obsim::observer::{measure, observably_equal, Resolution};
use obsim::reduction::{build_reduced, detect_drive_coordinate, playback, ChartRequest};
use obsim::scenario::{moon_period, paper_sem, paper_sem_init};

fn main() {
    let tm = moon_period();
    let rec = simulate(&paper_sem(), &paper_sem_init(), 3.0 * tm, tm / 1000.0, Integrator::Rk4).unwrap();
    let drive = detect_drive_coordinate(&rec, &[ChartRequest::Cylindrical("Earth".into())]).unwrap();
    let model = build_reduced(&rec, &drive).unwrap();

    let dt = tm / 2000.0;
    let real = simulate(&paper_sem(), &paper_sem_init(), 3.0 * tm, dt, Integrator::Rk4).unwrap();
    let fake = playback(&model, &real.times()).unwrap();

    for eps_q in [1e-2, 1e-3, 1e-6, 1e-9] {
        let res = Resolution::new(eps_q, dt).unwrap();
        let a = measure(&real, res, None).unwrap();
        let b = measure(&fake, res, None).unwrap();
        println!(
            "eps_q = {eps_q:.0e}: {} readings, observably equal: {}",
            a.len(),
            observably_equal(&a, &b).unwrap()
        );
    }
}
