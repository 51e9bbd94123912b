//! Integrate the Sun-Earth-Moon scenario and check the orbits against the
//! analytic circular rates.
//!
//! ```bash
//! cargo run -p obsim --example circular_orbit
//! ```

use std::f64::consts::PI;

use obsim::dynamics::{simulate, total_energy, Integrator};
use obsim::scenario::{moon_period, paper_sem, paper_sem_init};

fn main() {
    let sys = paper_sem();
    let init = paper_sem_init();
    let dt = 2.0 * PI / 1000.0;

    for method in [Integrator::Rk4, Integrator::Leapfrog] {
        let run = simulate(&sys, &init, 10.0 * 2.0 * PI, dt, method).unwrap();
        let e0 = total_energy(&sys, &run.samples[0].state()).unwrap();
        let drift = run
            .samples
            .iter()
            .map(|s| ((total_energy(&sys, &s.state()).unwrap() - e0) / e0).abs())
            .fold(0.0, f64::max);

        let last = run.last().unwrap();
        let r_earth = last.q[0].hypot(last.q[1]);
        let r_moon = (last.q[3] - last.q[0]).hypot(last.q[4] - last.q[1]);
        println!(
            "{:>8}: {} samples, |r_E| = {r_earth:.9}, |r_M - r_E| = {r_moon:.9}, max |dE/E| = {drift:.2e}",
            method.name(),
            run.len()
        );
    }
    println!("Earth period 2pi = {:.6}, Moon period 2pi/sqrt(8) = {:.6}", 2.0 * PI, moon_period());
}
