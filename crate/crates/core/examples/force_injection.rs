//! Push the Moon and see who responds like Newtonian mechanics says.
//!
//! ```bash
//! cargo run -p obsim --example force_injection
//! ```

use obsim::config::ScenarioConfig;
use obsim::distinguisher::{dof_criterion, run_protocol, Candidate};
use obsim::dynamics::{simulate, BodySpec};
use obsim::reduction::{build_reduced, detect_drive_coordinate, pad_noninteracting};

fn main() {
    let cfg = ScenarioConfig::paper_sem();
    let protocol = cfg.protocol().unwrap();
    let rec = simulate(
        &protocol.system,
        &protocol.init,
        cfg.simulation.duration,
        protocol.dt,
        protocol.integrator,
    )
    .unwrap();
    let drive = detect_drive_coordinate(&rec, &cfg.charts()).unwrap();
    let model = build_reduced(&rec, &drive)
        .unwrap()
        .with_masses(protocol.system.coordinate_masses())
        .unwrap();
    let padded = pad_noninteracting(&protocol.system, vec![BodySpec::free("Ghost", 1.0)]).unwrap();

    let candidates = [
        Candidate::Copy(protocol.system.clone()),
        Candidate::Padded {
            padded,
            extra_q: vec![3.0, 3.0, 0.0],
            extra_qdot: vec![0.0, 0.1, 0.0],
        },
        Candidate::ReducedKinematic(model.clone()),
        Candidate::ReducedInteractive(model),
    ];
    println!("impulse on Moon at t = {:.4}: dp = {:?}", protocol.t_f, protocol.force.vector());
    for c in &candidates {
        for scale in [0.0, 1.0] {
            let r = run_protocol(c, &protocol.scaled(scale)).unwrap();
            println!(
                "{:<20} p = {} (p >= n: {:>5})  x{scale}: D_max = {:>7.2}  {}",
                r.candidate.to_string(),
                r.dof,
                dof_criterion(r.dof, r.n),
                r.d_max,
                r.verdict
            );
        }
    }
}
