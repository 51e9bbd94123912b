//! Render the scenario through the register matrix to PGM frames and check
//! that every pixel equals its register.
//!
//! ```bash
//! cargo run -p obsim --example oculus_frames -- /tmp/frames
//! ```

use obsim::config::ScenarioConfig;
use obsim::dynamics::simulate;
use obsim::vrpipe::{
    controller_to_force, encode_pgm, register_checksum, render, AimMapping, ControllerState, RegisterMatrix,
};

fn main() {
    let outdir = std::env::args().nth(1);
    let cfg = ScenarioConfig::paper_sem();
    let sys = cfg.system().unwrap();
    let vp = cfg.viewport().unwrap();
    let run = simulate(&sys, &cfg.init(), 1.0, 0.1, cfg.integrator()).unwrap();

    let mut regs = RegisterMatrix::new(vp.rows, vp.cols, 8);
    for (k, s) in run.samples.iter().enumerate() {
        let frame = render(&sys, &s.state(), &vp, &mut regs).unwrap();
        let lit = frame.values().iter().filter(|&&v| v > 0).count();
        let same = frame.checksum() == register_checksum(&regs, vp.rows, vp.cols).unwrap();
        println!("t = {:.2}: {lit} lit pixels, V = C: {same}", s.t);
        if let Some(dir) = &outdir {
            std::fs::create_dir_all(dir).unwrap();
            std::fs::write(format!("{dir}/frame_{k:05}.pgm"), encode_pgm(&frame).unwrap()).unwrap();
        }
    }

    // Half-pulled trigger, pointing along +y.
    let ctrl = ControllerState::new([0.0; 3], [0.0, 0.0, std::f64::consts::FRAC_PI_2], vec![false], 0.5).unwrap();
    let aim = AimMapping {
        target: Some("Moon".into()),
    };
    let f = controller_to_force(&ctrl, 1e-4, &aim, 1.0).unwrap();
    println!("controller ({} dof) -> impulse {:?} on {}", ctrl.dof(), f.vector(), f.target);
}
