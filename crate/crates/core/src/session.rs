//! Live blind trials.
//!
//! A session secretly hosts either a full copy of the scenario or a reduced
//! single-degree-of-freedom model of it. The client watches states and
//! frames, may push bodies with impulses, and finally guesses which one it
//! was shown. The guess is answered with the hidden assignment and a
//! distinguisher report built from everything the session recorded.
//!
//! Sessions are plain values driven by explicit ticks, so a fixed config,
//! seed and input script always produce the same messages.

use std::collections::VecDeque;

use base64::Engine as _;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, ScenarioConfig};
use crate::distinguisher::{assess, Assessment, CandidateKind, DistinguisherReport};
use crate::dynamics::{self, simulate, Integrator, PhysicalSystem, Sample, State, Trajectory, TrajectoryMeta};
use crate::reduction::{self, InteractiveMotion, ReducedModel};
use crate::vrpipe::{encode_pgm, render, RegisterMatrix, Viewport};

/// What the observer claims to have been shown.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Guess {
    Real,
    Simulation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Running,
    Guessed,
    Revealed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Inbound {
    ApplyForce { body: String, dp: [f64; 3] },
    Guess { value: Guess },
    Ping {},
}

impl Inbound {
    pub fn parse(line: &str) -> Result<Inbound, String> {
        serde_json::from_str(line.trim()).map_err(|e| format!("invalid message: {e}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyState {
    pub name: String,
    pub q: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Outbound {
    State {
        t: f64,
        bodies: Vec<BodyState>,
    },
    Frame {
        t: f64,
        #[serde(rename = "R")]
        rows: usize,
        #[serde(rename = "C")]
        cols: usize,
        /// Base64 of a binary PGM.
        data: String,
    },
    Ack {
        force_id: u64,
        applies_at: f64,
    },
    Reveal {
        hidden: Guess,
        correct: bool,
        report: DistinguisherReport,
    },
    Error {
        msg: String,
    },
}

impl Outbound {
    fn error(msg: impl Into<String>) -> Self {
        Outbound::Error { msg: msg.into() }
    }

    /// States and frames may be dropped under back-pressure; nothing else may.
    pub fn droppable(&self) -> bool {
        matches!(self, Outbound::State { .. } | Outbound::Frame { .. })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("messages serialize")
    }
}

/// Bounded outbound queue. When full, the oldest state or frame is dropped;
/// acks, reveals and errors are always kept, even past capacity.
#[derive(Debug, Clone)]
pub struct Outbox {
    cap: usize,
    queue: VecDeque<Outbound>,
    dropped: usize,
}

impl Outbox {
    pub fn new(cap: usize) -> Self {
        Outbox {
            cap: cap.max(1),
            queue: VecDeque::new(),
            dropped: 0,
        }
    }

    pub fn push(&mut self, msg: Outbound) {
        while self.queue.len() >= self.cap {
            match self.queue.iter().position(Outbound::droppable) {
                Some(k) => {
                    self.queue.remove(k);
                    self.dropped += 1;
                }
                None => break,
            }
        }
        if self.queue.len() >= self.cap && msg.droppable() {
            self.dropped += 1;
            return;
        }
        self.queue.push_back(msg);
    }

    pub fn extend(&mut self, msgs: impl IntoIterator<Item = Outbound>) {
        for m in msgs {
            self.push(m);
        }
    }

    pub fn pop(&mut self) -> Option<Outbound> {
        self.queue.pop_front()
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    /// Number of messages dropped so far.
    pub fn dropped(&self) -> usize {
        self.dropped
    }
}

/// A force the observer applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppliedForce {
    pub id: u64,
    pub body: String,
    pub dp: [f64; 3],
    pub t: f64,
}

#[derive(Debug, Clone)]
enum Engine {
    Full {
        state: State,
    },
    Reduced {
        model: ReducedModel,
        /// Drive state once forces took over from the time law.
        free: Option<(f64, f64)>,
    },
}

/// Extra recording beyond the time limit, so a sped-up reduced drive stays
/// inside its interpolation range.
const RECORDING_MARGIN: f64 = 1.5;

#[derive(Debug, Clone)]
pub struct Session {
    id: String,
    hidden: Guess,
    phase: Phase,
    system: PhysicalSystem,
    init: State,
    dt: f64,
    integrator: Integrator,
    steps_per_tick: usize,
    frame_every: usize,
    max_steps: usize,
    step: usize,
    ticks: u64,
    engine: Engine,
    recorded: Vec<Sample>,
    queued: Vec<AppliedForce>,
    history: Vec<AppliedForce>,
    next_force_id: u64,
    viewport: Viewport,
    registers: RegisterMatrix,
    assessment: Assessment,
    ended: Option<String>,
}

/// Start a trial. The hidden candidate is drawn from `seed`.
pub fn start_session(config: &ScenarioConfig, seed: u64) -> Result<Session, ConfigError> {
    config.validate()?;
    let sc = config
        .session
        .as_ref()
        .ok_or_else(|| field("session", "section missing"))?;
    let viewport = config.viewport()?;
    let system = config.system()?;
    let init = config.init();
    let dt = config.simulation.dt;
    let integrator = config.integrator();
    let limit = sc.time_limit.unwrap_or(config.simulation.duration);
    let max_steps = (limit / dt).round() as usize;
    if max_steps == 0 {
        return Err(field("session.time_limit", "shorter than one step"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hidden = if rng.gen_bool(0.5) {
        Guess::Simulation
    } else {
        Guess::Real
    };
    let id = format!("{:016x}", rng.next_u64());

    // Built for both assignments so that failures cannot hint at the choice.
    let model = reduced_model(config, &system, &init, limit * RECORDING_MARGIN)?;
    let engine = match hidden {
        Guess::Real => Engine::Full { state: init.clone() },
        Guess::Simulation => Engine::Reduced { model, free: None },
    };
    let assessment = Assessment {
        resolution: config.resolution(),
        thresholds: config.thresholds(),
        dt,
        integrator,
    };
    let mut s = Session {
        id,
        hidden,
        phase: Phase::Running,
        system,
        init,
        dt,
        integrator,
        steps_per_tick: (sc.sim_per_tick / dt).round() as usize,
        frame_every: sc.frame_every,
        max_steps,
        step: 0,
        ticks: 0,
        engine,
        recorded: Vec::new(),
        queued: Vec::new(),
        history: Vec::new(),
        next_force_id: 1,
        registers: RegisterMatrix::new(viewport.rows, viewport.cols, 8),
        viewport,
        assessment,
        ended: None,
    };
    let first = s.sample_now().map_err(|e| field("bodies", e))?;
    s.recorded.push(first);
    Ok(s)
}

fn field(path: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        path: path.into(),
        msg: msg.into(),
    }
}

fn reduced_model(
    config: &ScenarioConfig,
    system: &PhysicalSystem,
    init: &State,
    span: f64,
) -> Result<ReducedModel, ConfigError> {
    let dt = config.simulation.dt;
    let rec = simulate(system, init, span, dt, config.integrator())?;
    let stride = config.reduction.knot_stride;
    let knots = Trajectory {
        samples: rec.samples.iter().step_by(stride).cloned().collect(),
        meta: rec.meta.clone(),
    };
    let drive = reduction::detect_drive_coordinate(&knots, &config.charts())
        .map_err(|e| field("reduction", e.to_string()))?;
    reduction::build_reduced(&knots, &drive)
        .and_then(|m| m.with_masses(system.coordinate_masses()))
        .map_err(|e| field("reduction", e.to_string()))
}

impl Session {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// Simulation clock.
    pub fn t(&self) -> f64 {
        self.time_of(self.step)
    }

    pub fn history(&self) -> &[AppliedForce] {
        &self.history
    }

    pub fn time_limit(&self) -> f64 {
        self.time_of(self.max_steps)
    }

    /// Hidden assignment; only for callers outside the trial (tests, logs).
    pub fn hidden(&self) -> Guess {
        self.hidden
    }

    fn time_of(&self, step: usize) -> f64 {
        self.init.t + step as f64 * self.dt
    }

    /// Current state and frame, as sent when a client connects.
    pub fn opening(&mut self) -> Vec<Outbound> {
        let sample = self.recorded.last().expect("at least one sample").clone();
        let mut out = vec![self.state_message(&sample)];
        out.extend(self.frame_message(&sample));
        out
    }

    /// Dispatch one inbound message.
    pub fn handle(&mut self, msg: Inbound) -> Vec<Outbound> {
        match msg {
            Inbound::ApplyForce { body, dp } => vec![self.handle_force(&body, dp)],
            Inbound::Guess { value } => vec![self.handle_guess(value)],
            Inbound::Ping {} => {
                let sample = self.recorded.last().expect("at least one sample").clone();
                vec![self.state_message(&sample)]
            }
        }
    }

    /// Parse and dispatch one line of JSON.
    pub fn handle_line(&mut self, line: &str) -> Vec<Outbound> {
        match Inbound::parse(line) {
            Ok(msg) => self.handle(msg),
            Err(e) => vec![Outbound::error(e)],
        }
    }

    /// Validate and queue an impulse; it lands at the current step boundary.
    pub fn handle_force(&mut self, body: &str, dp: [f64; 3]) -> Outbound {
        if self.phase != Phase::Running {
            return Outbound::error("trial is over");
        }
        if self.ended.is_some() || self.step >= self.max_steps {
            return Outbound::error("time limit reached");
        }
        match self.system.body(body) {
            None => return Outbound::error(format!("unknown body `{body}`")),
            Some(b) if b.fixed => return Outbound::error(format!("`{body}` is fixed and accepts no force")),
            Some(_) => {}
        }
        if !dp.iter().all(|v| v.is_finite()) {
            return Outbound::error("force vector must be finite");
        }
        let f = AppliedForce {
            id: self.next_force_id,
            body: body.to_string(),
            dp,
            t: self.t(),
        };
        self.next_force_id += 1;
        let ack = Outbound::Ack {
            force_id: f.id,
            applies_at: f.t,
        };
        self.queued.push(f);
        ack
    }

    /// One server tick: land queued forces, integrate, emit state and frame.
    pub fn advance(&mut self) -> Vec<Outbound> {
        if self.phase != Phase::Running {
            return vec![Outbound::error("trial is over")];
        }
        if let Some(why) = &self.ended {
            return vec![Outbound::error(why.clone())];
        }
        if let Err(e) = self.land_forces() {
            return vec![self.end(e)];
        }
        let mut stepped = false;
        for _ in 0..self.steps_per_tick {
            if self.step >= self.max_steps {
                break;
            }
            if let Err(e) = self.step_once() {
                return vec![self.end(e)];
            }
            stepped = true;
        }
        if !stepped {
            return vec![Outbound::error("time limit reached")];
        }
        self.ticks += 1;
        let sample = self.recorded.last().expect("recorded").clone();
        let mut out = vec![self.state_message(&sample)];
        if self.ticks % self.frame_every as u64 == 0 {
            out.extend(self.frame_message(&sample));
        }
        out
    }

    fn end(&mut self, cause: String) -> Outbound {
        // The cause stays server-side: its wording could hint at the candidate.
        let _ = cause;
        let msg = format!("simulation stopped at t = {}", self.t());
        self.ended = Some(msg.clone());
        Outbound::error(msg)
    }

    fn land_forces(&mut self) -> Result<(), String> {
        if self.queued.is_empty() {
            return Ok(());
        }
        let t = self.t();
        for f in std::mem::take(&mut self.queued) {
            if f.dp != [0.0; 3] {
                match &mut self.engine {
                    Engine::Full { state } => {
                        dynamics::apply_impulse(&self.system, state, &f.body, f.dp).map_err(|e| e.to_string())?
                    }
                    Engine::Reduced { model, free } => {
                        let (qj, qj_dot) = match *free {
                            Some(d) => d,
                            None => model.drive_at(t).map_err(|e| e.to_string())?,
                        };
                        let mut m = InteractiveMotion::resume(model, t, qj, qj_dot);
                        m.apply_impulse(&dynamics::ExternalForce::impulse(&f.body, f.dp, t))
                            .map_err(|e| e.to_string())?;
                        *free = Some(m.drive());
                    }
                }
            }
            self.history.push(f);
        }
        // The sample at this boundary now shows the impulse.
        let s = self.sample_now()?;
        *self.recorded.last_mut().expect("recorded") = s;
        Ok(())
    }

    fn step_once(&mut self) -> Result<(), String> {
        let t_now = self.time_of(self.step);
        let t_next = self.time_of(self.step + 1);
        match &mut self.engine {
            Engine::Full { state } => {
                let mut next = dynamics::step(&self.system, state, self.dt, self.integrator).map_err(|e| e.to_string())?;
                next.t = t_next;
                if !next.is_finite() {
                    return Err("non-finite state".into());
                }
                *state = next;
            }
            Engine::Reduced { model, free } => {
                if let Some((qj, qj_dot)) = *free {
                    let mut m = InteractiveMotion::resume(model, t_now, qj, qj_dot);
                    m.advance(self.dt, 0.0).map_err(|e| e.to_string())?;
                    *free = Some(m.drive());
                }
            }
        }
        self.step += 1;
        let s = self.sample_now()?;
        self.recorded.push(s);
        Ok(())
    }

    fn sample_now(&self) -> Result<Sample, String> {
        let t = self.t();
        match &self.engine {
            Engine::Full { state } => Ok(Sample::from(state.clone())),
            Engine::Reduced { model, free } => {
                let (qj, qj_dot) = match *free {
                    Some(d) => d,
                    None => model.drive_at(t).map_err(|e| e.to_string())?,
                };
                model.sample_at(t, qj, qj_dot).map_err(|e| e.to_string())
            }
        }
    }

    fn state_message(&self, sample: &Sample) -> Outbound {
        let bodies = self
            .system
            .bodies()
            .iter()
            .map(|b| BodyState {
                name: b.name.clone(),
                q: self.system.body_position(&b.name, &sample.q).unwrap_or(b.anchor),
            })
            .collect();
        Outbound::State { t: sample.t, bodies }
    }

    fn frame_message(&mut self, sample: &Sample) -> Option<Outbound> {
        let frame = render(&self.system, &sample.state(), &self.viewport, &mut self.registers).ok()?;
        let pgm = encode_pgm(&frame).ok()?;
        Some(Outbound::Frame {
            t: sample.t,
            rows: frame.rows(),
            cols: frame.cols(),
            data: base64::engine::general_purpose::STANDARD.encode(pgm),
        })
    }

    /// Everything the candidate did so far.
    pub fn recorded(&self) -> Trajectory {
        Trajectory {
            samples: self.recorded.clone(),
            meta: TrajectoryMeta {
                system: "session".into(),
                dt: self.dt,
                integrator: self.integrator.name().into(),
                labels: self.system.coordinate_labels(),
            },
        }
    }

    /// Score the trial and reveal the hidden candidate.
    ///
    /// The observation-only phase ends at the first force and the response
    /// is judged from the last one. Without any force the whole run is both.
    pub fn handle_guess(&mut self, guess: Guess) -> Outbound {
        if self.phase != Phase::Running {
            return Outbound::error("a guess was already made");
        }
        self.phase = Phase::Guessed;
        let t0 = self.init.t;
        let now = self.t();
        let (pre_end, post_start) = match (self.history.first(), self.history.last()) {
            (Some(a), Some(b)) => (a.t, b.t),
            _ => (now, t0),
        };
        let report = simulate(&self.system, &self.init, pre_end - t0, self.dt, self.integrator)
            .map_err(|e| e.to_string())
            .and_then(|reference| {
                let (kind, dof) = match self.hidden {
                    Guess::Real => (CandidateKind::Copy, self.system.n()),
                    Guess::Simulation => (CandidateKind::ReducedInteractive, 1),
                };
                assess(
                    &self.system,
                    kind,
                    dof,
                    &reference,
                    &self.recorded(),
                    pre_end,
                    post_start,
                    &self.assessment,
                )
                .map_err(|e| e.to_string())
            });
        self.phase = Phase::Revealed;
        match report {
            Ok(report) => Outbound::Reveal {
                hidden: self.hidden,
                correct: guess == self.hidden,
                report,
            },
            Err(e) => Outbound::error(format!("cannot score the trial: {e}")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distinguisher::Verdict;

    fn quick_config() -> ScenarioConfig {
        let mut cfg = ScenarioConfig::paper_sem();
        cfg.simulation.duration = 0.5;
        cfg
    }

    fn seed_for(hidden: Guess) -> u64 {
        (0..64)
            .find(|&s| start_session(&quick_config(), s).unwrap().hidden() == hidden)
            .unwrap()
    }

    #[test]
    fn same_seed_same_assignment() {
        let a = start_session(&quick_config(), 42).unwrap();
        let b = start_session(&quick_config(), 42).unwrap();
        assert_eq!(a.hidden(), b.hidden());
        assert_eq!(a.id(), b.id());
        let hiddens: Vec<Guess> = (0..32).map(|s| start_session(&quick_config(), s).unwrap().hidden()).collect();
        assert!(hiddens.contains(&Guess::Real) && hiddens.contains(&Guess::Simulation));
    }

    #[test]
    fn negative_dt_is_rejected_by_name() {
        let mut cfg = quick_config();
        cfg.simulation.dt = -0.1;
        let err = start_session(&cfg, 1).unwrap_err();
        assert!(err.to_string().contains("dt"), "{err}");
    }

    #[test]
    fn ticks_stream_increasing_times() {
        let mut s = start_session(&quick_config(), 3).unwrap();
        let open = s.opening();
        assert!(matches!(open[0], Outbound::State { t, .. } if t == 0.0));
        assert!(matches!(open[1], Outbound::Frame { rows: 64, cols: 64, .. }));
        let mut last = 0.0;
        for _ in 0..5 {
            let out = s.advance();
            assert_eq!(out.len(), 2);
            let Outbound::State { t, ref bodies } = out[0] else { panic!() };
            assert!(t > last);
            assert_eq!(bodies.len(), 3);
            last = t;
        }
        assert_eq!(last, 50.0 * s.dt);
    }

    #[test]
    fn forces_are_validated_and_acked() {
        let mut s = start_session(&quick_config(), 3).unwrap();
        s.advance();
        assert!(matches!(s.handle_force("Sun", [1.0, 0.0, 0.0]), Outbound::Error { .. }));
        assert!(matches!(s.handle_force("Pluto", [1.0, 0.0, 0.0]), Outbound::Error { .. }));
        assert!(matches!(s.handle_force("Moon", [f64::NAN, 0.0, 0.0]), Outbound::Error { .. }));
        let ack = s.handle_force("Moon", [0.0; 3]);
        assert_eq!(
            ack,
            Outbound::Ack {
                force_id: 1,
                applies_at: s.t()
            }
        );
        let ack = s.handle_force("Moon", [1e-5, 0.0, 0.0]);
        assert!(matches!(ack, Outbound::Ack { force_id: 2, .. }));
        assert!(s.history().is_empty());
        s.advance();
        assert_eq!(s.history().len(), 2);
    }

    #[test]
    fn zero_force_has_no_effect() {
        for hidden in [Guess::Real, Guess::Simulation] {
            let seed = seed_for(hidden);
            let mut a = start_session(&quick_config(), seed).unwrap();
            let mut b = start_session(&quick_config(), seed).unwrap();
            a.advance();
            b.advance();
            b.handle_force("Moon", [0.0; 3]);
            for _ in 0..3 {
                assert_eq!(a.advance(), b.advance());
            }
        }
    }

    #[test]
    fn impulse_lands_once_on_the_real_copy() {
        let seed = seed_for(Guess::Real);
        let mut s = start_session(&quick_config(), seed).unwrap();
        s.advance();
        let before = s.recorded().last().unwrap().qdot.clone();
        s.handle_force("Moon", [1e-4, 0.0, 0.0]);
        s.advance();
        let landed = &s.recorded().samples[10];
        assert!((landed.qdot[3] - before[3] - 0.1).abs() < 1e-12);
        assert_eq!(landed.qdot[0], before[0]);
        s.advance();
        assert_eq!(s.history().len(), 1);
    }

    #[test]
    fn revealed_session_only_reports_status() {
        let mut s = start_session(&quick_config(), 5).unwrap();
        for _ in 0..3 {
            s.advance();
        }
        let Outbound::Reveal { hidden, correct, .. } = s.handle_guess(Guess::Real) else {
            panic!("expected a reveal")
        };
        assert_eq!(correct, hidden == Guess::Real);
        assert_eq!(s.phase(), Phase::Revealed);
        let t = s.t();
        assert!(matches!(s.advance()[..], [Outbound::Error { .. }]));
        assert_eq!(s.t(), t);
        assert!(matches!(s.handle_guess(Guess::Simulation), Outbound::Error { .. }));
        assert!(matches!(s.handle_force("Moon", [1.0; 3]), Outbound::Error { .. }));
    }

    #[test]
    fn unforced_reduced_candidate_is_indistinguishable() {
        let seed = seed_for(Guess::Simulation);
        let mut s = start_session(&quick_config(), seed).unwrap();
        for _ in 0..20 {
            s.advance();
        }
        let Outbound::Reveal { report, correct, .. } = s.handle_guess(Guess::Real) else {
            panic!("expected a reveal")
        };
        assert!(!correct);
        assert!(report.pre_equal);
        assert_eq!(report.verdict, Verdict::Indistinguishable);
    }

    #[test]
    fn time_limit_stops_the_clock() {
        let mut s = start_session(&quick_config(), 2).unwrap();
        let mut n = 0;
        while !matches!(s.advance()[..], [Outbound::Error { .. }]) {
            n += 1;
            assert!(n < 100);
        }
        assert_eq!(s.t(), s.time_limit());
        assert!(matches!(s.handle_force("Moon", [1e-5, 0.0, 0.0]), Outbound::Error { .. }));
    }

    #[test]
    fn wire_format() {
        assert_eq!(
            Inbound::parse(r#"{"type":"apply_force","body":"Moon","dp":[0,1e-4,0]}"#).unwrap(),
            Inbound::ApplyForce {
                body: "Moon".into(),
                dp: [0.0, 1e-4, 0.0]
            }
        );
        assert_eq!(
            Inbound::parse(r#"{"type":"guess","value":"simulation"}"#).unwrap(),
            Inbound::Guess {
                value: Guess::Simulation
            }
        );
        assert_eq!(Inbound::parse(r#"{"type":"ping"}"#).unwrap(), Inbound::Ping {});
        assert!(Inbound::parse(r#"{"type":"guess","value":"maybe"}"#).is_err());
        assert!(Inbound::parse(r#"{"type":"apply_force","body":"Moon"}"#).is_err());
        assert!(Inbound::parse(r#"{"type":"ping","extra":1}"#).is_err());

        let frame = Outbound::Frame {
            t: 0.5,
            rows: 2,
            cols: 3,
            data: "AA==".into(),
        };
        assert_eq!(frame.to_json(), r#"{"type":"frame","t":0.5,"R":2,"C":3,"data":"AA=="}"#);
        let ack = Outbound::Ack {
            force_id: 7,
            applies_at: 1.25,
        };
        assert_eq!(ack.to_json(), r#"{"type":"ack","force_id":7,"applies_at":1.25}"#);
    }

    #[test]
    fn outbox_drops_oldest_frames_only() {
        let mut ob = Outbox::new(3);
        let st = |t: f64| Outbound::State { t, bodies: vec![] };
        ob.push(st(0.0));
        ob.push(Outbound::Ack {
            force_id: 1,
            applies_at: 0.0,
        });
        ob.push(st(1.0));
        ob.push(st(2.0));
        assert_eq!(ob.len(), 3);
        assert_eq!(ob.dropped(), 1);
        ob.push(Outbound::error("a"));
        ob.push(Outbound::error("b"));
        ob.push(Outbound::error("c"));
        // Past capacity, but no ack or error was lost.
        let kinds: Vec<String> = std::iter::from_fn(|| ob.pop()).map(|m| m.to_json()).collect();
        assert_eq!(kinds.iter().filter(|k| k.contains("\"ack\"")).count(), 1);
        assert_eq!(kinds.iter().filter(|k| k.contains("\"error\"")).count(), 3);
    }
}
