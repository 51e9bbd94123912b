//! A scripted blind trial: watch for a Moon period, push the Moon, watch
//! again, guess.
//!
//! ```bash
//! cargo run -p obsim --example blind_trial -- 42
//! ```

use obsim::config::ScenarioConfig;
use obsim::session::{start_session, Guess, Inbound, Outbound};

fn main() {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(42);
    let cfg = ScenarioConfig::paper_sem();
    let dp = cfg.protocol().unwrap().force.vector();
    let mut s = start_session(&cfg, seed).unwrap();
    println!("session {} (seed {seed})", s.id());

    let mut frames = 0;
    let mut tick = |s: &mut obsim::session::Session| {
        for m in s.advance() {
            if let Outbound::Frame { .. } = m {
                frames += 1;
            }
        }
    };
    for _ in 0..100 {
        tick(&mut s);
    }
    let ack = s.handle(Inbound::ApplyForce {
        body: "Moon".into(),
        dp,
    });
    println!("pushed the Moon: {}", ack[0].to_json());
    for _ in 0..100 {
        tick(&mut s);
    }
    println!("watched {frames} frames up to t = {:.4}", s.t());

    // A Newtonian-looking response suggests the real thing.
    match s.handle_guess(Guess::Real) {
        Outbound::Reveal {
            hidden,
            correct,
            report,
        } => println!(
            "hidden: {hidden:?}, guess `real` correct: {correct}, D_max = {:.2} -> {}",
            report.d_max, report.verdict
        ),
        other => println!("{}", other.to_json()),
    }
}
