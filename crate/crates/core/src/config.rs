//! Scenario configuration files (TOML).
//!
//! One file describes the bodies and their initial conditions together with
//! the settings of every pipeline stage. Validation errors name the offending
//! key, e.g. `simulation.dt`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distinguisher::{Protocol, Thresholds};
use crate::dynamics::{simulate, BodySpec, DynamicsError, ExternalForce, Integrator, PhysicalSystem, State};
use crate::observer::Resolution;
use crate::reduction::ChartRequest;
use crate::vrpipe::Viewport;

const PAPER_SEM: &str = include_str!("../configs/paper-sem.toml");

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("{path}: {msg}")]
    Field { path: String, msg: String },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

impl ConfigError {
    fn field(path: impl Into<String>, msg: impl Into<String>) -> Self {
        ConfigError::Field {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Dotted key of the offending field, if any.
    pub fn path(&self) -> Option<&str> {
        match self {
            ConfigError::Field { path, .. } => Some(path),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodyConfig {
    pub name: String,
    pub mass: f64,
    #[serde(default)]
    pub fixed: bool,
    #[serde(default)]
    pub attractors: Vec<String>,
    #[serde(default)]
    pub host: Option<String>,
    pub position: [f64; 3],
    #[serde(default)]
    pub velocity: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(default = "default_integrator")]
    pub integrator: String,
    pub dt: f64,
    pub duration: f64,
}

fn default_integrator() -> String {
    "rk4".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReductionConfig {
    /// Extra charts, e.g. `cylindrical:Earth`. Raw coordinates are always tried.
    #[serde(default)]
    pub charts: Vec<String>,
    /// Keep every k-th recorded sample as a knot.
    #[serde(default = "one")]
    pub knot_stride: usize,
}

impl Default for ReductionConfig {
    fn default() -> Self {
        ReductionConfig {
            charts: Vec::new(),
            knot_stride: 1,
        }
    }
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserverConfig {
    pub eps_q: f64,
    /// Defaults to `simulation.dt`.
    #[serde(default)]
    pub eps_t: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpulseConfig {
    pub body: String,
    /// Fraction of the body's inertial momentum at `t_f`, along its velocity.
    #[serde(default)]
    pub tangential_fraction: Option<f64>,
    /// Explicit momentum change; exclusive with `tangential_fraction`.
    #[serde(default)]
    pub dp: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    pub t_f: f64,
    pub pre_window: f64,
    pub post_window: f64,
    #[serde(default = "default_pass")]
    pub pass_mult: f64,
    #[serde(default = "default_fail")]
    pub fail_mult: f64,
    pub impulse: ImpulseConfig,
}

fn default_pass() -> f64 {
    Thresholds::default().pass_mult
}

fn default_fail() -> f64 {
    Thresholds::default().fail_mult
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderConfig {
    #[serde(default = "default_side")]
    pub rows: usize,
    #[serde(default = "default_side")]
    pub cols: usize,
    /// `[x_min, x_max, y_min, y_max]`
    pub window: [f64; 4],
    #[serde(default = "one")]
    pub stride: usize,
}

fn default_side() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    /// Simulated seconds per server tick; a whole number of steps.
    pub sim_per_tick: f64,
    #[serde(default = "one")]
    pub frame_every: usize,
    /// Trial length; defaults to `simulation.duration`.
    #[serde(default)]
    pub time_limit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default = "unit_g")]
    pub g: f64,
    pub bodies: Vec<BodyConfig>,
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub reduction: ReductionConfig,
    pub observer: ObserverConfig,
    #[serde(default)]
    pub protocol: Option<ProtocolConfig>,
    #[serde(default)]
    pub render: Option<RenderConfig>,
    #[serde(default)]
    pub session: Option<SessionConfig>,
}

fn unit_g() -> f64 {
    1.0
}

fn positive(path: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::field(path, format!("must be positive, got {v}")))
    }
}

fn finite(path: &str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(ConfigError::field(path, "must be finite"))
    }
}

impl ScenarioConfig {
    /// Parse and validate.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// The bundled Sun-Earth-Moon scenario.
    pub fn paper_sem() -> Self {
        Self::from_toml(PAPER_SEM).expect("bundled config is valid")
    }

    pub fn bundled_text() -> &'static str {
        PAPER_SEM
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        positive("g", self.g)?;
        if self.bodies.is_empty() {
            return Err(ConfigError::field("bodies", "at least one body is required"));
        }
        for (k, b) in self.bodies.iter().enumerate() {
            let p = |f: &str| format!("bodies[{k}].{f}");
            if b.name.is_empty() {
                return Err(ConfigError::field(p("name"), "must not be empty"));
            }
            if self.bodies[..k].iter().any(|o| o.name == b.name) {
                return Err(ConfigError::field(p("name"), format!("duplicate body `{}`", b.name)));
            }
            if !(b.mass >= 0.0 && b.mass.is_finite()) {
                return Err(ConfigError::field(p("mass"), format!("must be non-negative, got {}", b.mass)));
            }
            finite(&p("position"), &b.position)?;
            finite(&p("velocity"), &b.velocity)?;
            if b.fixed && b.velocity != [0.0; 3] {
                return Err(ConfigError::field(p("velocity"), "fixed bodies do not move"));
            }
            for (a, name) in b.attractors.iter().enumerate() {
                if !self.bodies.iter().any(|o| &o.name == name) {
                    return Err(ConfigError::field(
                        format!("bodies[{k}].attractors[{a}]"),
                        format!("unknown body `{name}`"),
                    ));
                }
            }
            if let Some(h) = &b.host {
                if !self.bodies.iter().any(|o| &o.name == h) {
                    return Err(ConfigError::field(p("host"), format!("unknown body `{h}`")));
                }
            }
        }
        let sim = &self.simulation;
        sim.integrator
            .parse::<Integrator>()
            .map_err(|e| ConfigError::field("simulation.integrator", e.to_string()))?;
        positive("simulation.dt", sim.dt)?;
        if !(sim.duration >= 0.0 && sim.duration.is_finite()) {
            return Err(ConfigError::field(
                "simulation.duration",
                format!("must be non-negative, got {}", sim.duration),
            ));
        }
        for (k, c) in self.reduction.charts.iter().enumerate() {
            let path = format!("reduction.charts[{k}]");
            let req: ChartRequest = c.parse().map_err(|e: String| ConfigError::field(&path, e))?;
            let ChartRequest::Cylindrical(body) = req;
            if !self.bodies.iter().any(|b| b.name == body && !b.fixed) {
                return Err(ConfigError::field(path, format!("no movable body `{body}`")));
            }
        }
        if self.reduction.knot_stride == 0 {
            return Err(ConfigError::field("reduction.knot_stride", "must be at least 1"));
        }
        positive("observer.eps_q", self.observer.eps_q)?;
        if let Some(e) = self.observer.eps_t {
            positive("observer.eps_t", e)?;
        }
        if let Some(p) = &self.protocol {
            positive("protocol.t_f", p.t_f)?;
            positive("protocol.pre_window", p.pre_window)?;
            positive("protocol.post_window", p.post_window)?;
            positive("protocol.pass_mult", p.pass_mult)?;
            positive("protocol.fail_mult", p.fail_mult)?;
            if p.pass_mult >= p.fail_mult {
                return Err(ConfigError::field("protocol.fail_mult", "must exceed pass_mult"));
            }
            if p.pre_window > p.t_f * (1.0 + 1e-12) {
                return Err(ConfigError::field("protocol.pre_window", "must end at or before t_f"));
            }
            let imp = &p.impulse;
            match self.bodies.iter().find(|b| b.name == imp.body) {
                None => {
                    return Err(ConfigError::field(
                        "protocol.impulse.body",
                        format!("unknown body `{}`", imp.body),
                    ))
                }
                Some(b) if b.fixed => {
                    return Err(ConfigError::field("protocol.impulse.body", "fixed bodies accept no force"))
                }
                Some(_) => {}
            }
            match (imp.tangential_fraction, imp.dp) {
                (Some(f), None) => finite("protocol.impulse.tangential_fraction", &[f])?,
                (None, Some(dp)) => finite("protocol.impulse.dp", &dp)?,
                _ => {
                    return Err(ConfigError::field(
                        "protocol.impulse",
                        "give exactly one of tangential_fraction and dp",
                    ))
                }
            }
        }
        if let Some(r) = &self.render {
            if r.rows == 0 {
                return Err(ConfigError::field("render.rows", "must be at least 1"));
            }
            if r.cols == 0 {
                return Err(ConfigError::field("render.cols", "must be at least 1"));
            }
            if r.stride == 0 {
                return Err(ConfigError::field("render.stride", "must be at least 1"));
            }
            Viewport::new(r.window, r.rows, r.cols).map_err(|e| ConfigError::field("render.window", e.to_string()))?;
        }
        if let Some(s) = &self.session {
            positive("session.sim_per_tick", s.sim_per_tick)?;
            let steps = s.sim_per_tick / sim.dt;
            if (steps - steps.round()).abs() > 1e-6 || steps.round() < 1.0 {
                return Err(ConfigError::field(
                    "session.sim_per_tick",
                    format!("must be a whole number of simulation.dt steps, got {steps}"),
                ));
            }
            if s.frame_every == 0 {
                return Err(ConfigError::field("session.frame_every", "must be at least 1"));
            }
            if let Some(t) = s.time_limit {
                positive("session.time_limit", t)?;
            }
        }
        // Let the dynamics check the coupling graph (cycles, self-attraction).
        self.system()?;
        Ok(())
    }

    pub fn integrator(&self) -> Integrator {
        self.simulation.integrator.parse().unwrap_or(Integrator::Rk4)
    }

    pub fn system(&self) -> Result<PhysicalSystem> {
        let specs = self
            .bodies
            .iter()
            .map(|b| BodySpec {
                name: b.name.clone(),
                mass: b.mass,
                fixed: b.fixed,
                attractors: b.attractors.clone(),
                host: b.host.clone(),
                anchor: if b.fixed { b.position } else { [0.0; 3] },
            })
            .collect();
        PhysicalSystem::new(specs, self.g).map_err(|e| ConfigError::field("bodies", e.to_string()))
    }

    /// Initial state at t = 0 over the movable bodies.
    pub fn init(&self) -> State {
        let mut q = Vec::new();
        let mut qdot = Vec::new();
        for b in self.bodies.iter().filter(|b| !b.fixed) {
            q.extend_from_slice(&b.position);
            qdot.extend_from_slice(&b.velocity);
        }
        State::new(0.0, q, qdot)
    }

    pub fn resolution(&self) -> Resolution {
        Resolution::new(
            self.observer.eps_q,
            self.observer.eps_t.unwrap_or(self.simulation.dt),
        )
        .expect("validated")
    }

    pub fn charts(&self) -> Vec<ChartRequest> {
        self.reduction
            .charts
            .iter()
            .map(|c| c.parse().expect("validated"))
            .collect()
    }

    pub fn viewport(&self) -> Result<Viewport> {
        let r = self
            .render
            .as_ref()
            .ok_or_else(|| ConfigError::field("render", "section missing"))?;
        Viewport::new(r.window, r.rows, r.cols).map_err(|e| ConfigError::field("render.window", e.to_string()))
    }

    pub fn thresholds(&self) -> Thresholds {
        self.protocol.as_ref().map_or_else(Thresholds::default, |p| Thresholds {
            pass_mult: p.pass_mult,
            fail_mult: p.fail_mult,
        })
    }

    /// The force-injection experiment described by the `protocol` section.
    pub fn protocol(&self) -> Result<Protocol> {
        let p = self
            .protocol
            .as_ref()
            .ok_or_else(|| ConfigError::field("protocol", "section missing"))?;
        let system = self.system()?;
        let init = self.init();
        let dp = match (p.impulse.tangential_fraction, p.impulse.dp) {
            (Some(frac), _) => tangential_impulse(
                &system,
                &init,
                &p.impulse.body,
                frac,
                p.t_f,
                self.simulation.dt,
                self.integrator(),
            )?,
            (None, Some(dp)) => dp,
            (None, None) => unreachable!("validated"),
        };
        Ok(Protocol {
            system,
            init,
            integrator: self.integrator(),
            dt: self.simulation.dt,
            t_f: p.t_f,
            force: ExternalForce::impulse(&p.impulse.body, dp, p.t_f),
            pre_window: p.pre_window,
            post_window: p.post_window,
            resolution: self.resolution(),
            thresholds: self.thresholds(),
        })
    }
}

/// `fraction * m * v` for `body` at time `t`, with `v` its inertial velocity
/// on the unforced trajectory.
pub fn tangential_impulse(
    system: &PhysicalSystem,
    init: &State,
    body: &str,
    fraction: f64,
    t: f64,
    dt: f64,
    integrator: Integrator,
) -> std::result::Result<[f64; 3], DynamicsError> {
    let mass = system
        .body(body)
        .ok_or_else(|| DynamicsError::UnknownBody(body.to_string()))?
        .mass;
    let run = simulate(&system.without_forces(), init, t - init.t, dt, integrator)?;
    let last = run.last().expect("simulate yields a sample").state();
    let v = system.body_velocity(body, &last.qdot)?;
    Ok(v.map(|c| fraction * mass * c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{moon_period, paper_sem, paper_sem_init};

    #[test]
    fn bundled_config_is_the_paper_scenario() {
        let cfg = ScenarioConfig::paper_sem();
        assert_eq!(cfg.system().unwrap(), paper_sem());
        let init = cfg.init();
        let want = paper_sem_init();
        assert_eq!(init.q, want.q);
        for (a, b) in init.qdot.iter().zip(&want.qdot) {
            assert!((a - b).abs() <= 1e-15);
        }
        assert_eq!(cfg.simulation.dt, moon_period() / 1000.0);
        assert_eq!(cfg.resolution().eps_t, cfg.simulation.dt);
        assert_eq!(cfg.integrator(), Integrator::Rk4);
    }

    fn with(edit: impl Fn(&mut toml::Table)) -> Result<ScenarioConfig> {
        let mut t: toml::Table = ScenarioConfig::bundled_text().parse().unwrap();
        edit(&mut t);
        ScenarioConfig::from_toml(&toml::to_string(&t).unwrap())
    }

    fn section<'a>(t: &'a mut toml::Table, key: &str) -> &'a mut toml::Table {
        t.get_mut(key).unwrap().as_table_mut().unwrap()
    }

    #[test]
    fn negative_dt_names_the_field() {
        let err = with(|t| {
            section(t, "simulation").insert("dt".into(), toml::Value::Float(-0.1));
        })
        .unwrap_err();
        assert_eq!(err.path(), Some("simulation.dt"));
        assert!(err.to_string().contains("dt"));
    }

    #[test]
    fn field_diagnostics() {
        let cases: Vec<(&str, Box<dyn Fn(&mut toml::Table)>)> = vec![
            (
                "observer.eps_q",
                Box::new(|t| {
                    section(t, "observer").insert("eps_q".into(), toml::Value::Float(0.0));
                }),
            ),
            (
                "simulation.integrator",
                Box::new(|t| {
                    section(t, "simulation").insert("integrator".into(), "euler".into());
                }),
            ),
            (
                "session.sim_per_tick",
                Box::new(|t| {
                    section(t, "session").insert("sim_per_tick".into(), toml::Value::Float(0.0031));
                }),
            ),
            (
                "reduction.charts[0]",
                Box::new(|t| {
                    section(t, "reduction").insert("charts".into(), vec!["cylindrical:Sun"].into());
                }),
            ),
            (
                "protocol.impulse.body",
                Box::new(|t| {
                    let p = section(t, "protocol");
                    let imp = p.get_mut("impulse").unwrap().as_table_mut().unwrap();
                    imp.insert("body".into(), "Sun".into());
                }),
            ),
            (
                "bodies[2].host",
                Box::new(|t| {
                    let b = t.get_mut("bodies").unwrap().as_array_mut().unwrap();
                    b[2].as_table_mut().unwrap().insert("host".into(), "Pluto".into());
                }),
            ),
        ];
        for (path, edit) in cases {
            let err = with(edit).unwrap_err();
            assert_eq!(err.path(), Some(path), "{err}");
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{}\nbogus = 1\n", ScenarioConfig::bundled_text());
        assert!(matches!(ScenarioConfig::from_toml(&text), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn toml_round_trip() {
        let cfg = ScenarioConfig::paper_sem();
        assert_eq!(ScenarioConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn protocol_impulse_is_tangential() {
        let cfg = ScenarioConfig::paper_sem();
        let p = cfg.protocol().unwrap();
        p.validate().unwrap();
        let dp = p.force.vector();
        let run = simulate(&p.system, &p.init, p.t_f, p.dt, p.integrator).unwrap();
        let v = p.system.body_velocity("Moon", &run.last().unwrap().qdot).unwrap();
        let cross = [
            dp[1] * v[2] - dp[2] * v[1],
            dp[2] * v[0] - dp[0] * v[2],
            dp[0] * v[1] - dp[1] * v[0],
        ];
        assert!(cross.iter().all(|c| c.abs() < 1e-15));
        let norm = |a: [f64; 3]| (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
        assert!((norm(dp) - 0.1 * 1e-3 * norm(v)).abs() < 1e-15);
    }
}
