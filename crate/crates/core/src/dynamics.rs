//! Restricted Newtonian dynamics.
//!
//! Every movable body owns three consecutive Cartesian slots of the
//! generalized coordinate vector, in the order the bodies are listed. Gravity
//! is directed: a body only feels the attractors it names, so couplings need
//! not be reciprocal. A body may also name a `host`, in which case it moves in
//! the host's accelerating frame (it inherits the host's acceleration before
//! its own attractors are added). This is how a satellite that is "only
//! influenced by its planet" stays bound while the planet orbits a star.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Separations below this are treated as collisions.
pub const SINGULARITY_THRESHOLD: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("invalid system: {0}")]
    InvalidSystem(String),
    #[error("unknown body `{0}`")]
    UnknownBody(String),
    #[error("body `{0}` is fixed and accepts no force")]
    FixedTarget(String),
    #[error("state has {got} coordinates, system expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("singularity: `{body}` reached attractor `{attractor}` at t = {t}")]
    Singularity {
        body: String,
        attractor: String,
        t: f64,
    },
    #[error("non-finite state after sample {last_good}")]
    NonFinite { last_good: usize },
    #[error("invalid step: {0}")]
    InvalidStep(String),
}

pub type Result<T> = std::result::Result<T, DynamicsError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodySpec {
    pub name: String,
    pub mass: f64,
    #[serde(default)]
    pub fixed: bool,
    #[serde(default)]
    pub attractors: Vec<String>,
    /// Body whose acceleration this body inherits.
    #[serde(default)]
    pub host: Option<String>,
    /// Position of a fixed body.
    #[serde(default)]
    pub anchor: [f64; 3],
}

impl BodySpec {
    pub fn free(name: &str, mass: f64) -> Self {
        BodySpec {
            name: name.to_string(),
            mass,
            fixed: false,
            attractors: Vec::new(),
            host: None,
            anchor: [0.0; 3],
        }
    }

    pub fn fixed_at(name: &str, mass: f64, anchor: [f64; 3]) -> Self {
        BodySpec {
            fixed: true,
            anchor,
            ..BodySpec::free(name, mass)
        }
    }

    pub fn attracted_by(mut self, names: &[&str]) -> Self {
        self.attractors = names.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn hosted_by(mut self, host: &str) -> Self {
        self.host = Some(host.to_string());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ForceKind {
    /// Instantaneous momentum change applied between integrator steps.
    Impulse { dp: [f64; 3], t_imp: f64 },
    /// Constant force acting during `[t_on, t_off)`.
    Window { force: [f64; 3], t_on: f64, t_off: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalForce {
    pub target: String,
    #[serde(flatten)]
    pub kind: ForceKind,
}

impl ExternalForce {
    pub fn impulse(target: &str, dp: [f64; 3], t_imp: f64) -> Self {
        ExternalForce {
            target: target.to_string(),
            kind: ForceKind::Impulse { dp, t_imp },
        }
    }

    pub fn window(target: &str, force: [f64; 3], t_on: f64, t_off: f64) -> Self {
        ExternalForce {
            target: target.to_string(),
            kind: ForceKind::Window { force, t_on, t_off },
        }
    }

    /// Force (or momentum, for impulses) vector.
    pub fn vector(&self) -> [f64; 3] {
        match self.kind {
            ForceKind::Impulse { dp, .. } => dp,
            ForceKind::Window { force, .. } => force,
        }
    }

    fn validate(&self) -> Result<()> {
        match self.kind {
            ForceKind::Impulse { dp, t_imp } => {
                if !dp.iter().all(|v| v.is_finite()) || !t_imp.is_finite() {
                    return Err(DynamicsError::InvalidSystem(format!(
                        "impulse on `{}` is not finite",
                        self.target
                    )));
                }
            }
            ForceKind::Window { force, t_on, t_off } => {
                if !force.iter().all(|v| v.is_finite()) || !(t_on < t_off) {
                    return Err(DynamicsError::InvalidSystem(format!(
                        "window force on `{}` needs finite force and t_on < t_off",
                        self.target
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    #[default]
    Rk4,
    Leapfrog,
}

impl Integrator {
    pub fn name(self) -> &'static str {
        match self {
            Integrator::Rk4 => "rk4",
            Integrator::Leapfrog => "leapfrog",
        }
    }
}

impl std::str::FromStr for Integrator {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "rk4" => Ok(Integrator::Rk4),
            "leapfrog" => Ok(Integrator::Leapfrog),
            other => Err(format!("unknown integrator `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Resolved {
    /// First coordinate slot of each body; `None` for fixed bodies.
    slot: Vec<Option<usize>>,
    attractors: Vec<Vec<usize>>,
    host: Vec<Option<usize>>,
    /// Body indices ordered so that hosts precede the bodies they carry.
    order: Vec<usize>,
}

/// The real system: bodies, coupling graph and external force schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalSystem {
    bodies: Vec<BodySpec>,
    g: f64,
    external: Vec<ExternalForce>,
    resolved: Resolved,
}

impl PhysicalSystem {
    pub fn new(bodies: Vec<BodySpec>, g: f64) -> Result<Self> {
        let resolved = resolve(&bodies, g)?;
        Ok(PhysicalSystem {
            bodies,
            g,
            external: Vec::new(),
            resolved,
        })
    }

    pub fn bodies(&self) -> &[BodySpec] {
        &self.bodies
    }

    pub fn g(&self) -> f64 {
        self.g
    }

    /// Number of generalized coordinates.
    pub fn n(&self) -> usize {
        3 * self.resolved.slot.iter().filter(|s| s.is_some()).count()
    }

    pub fn external(&self) -> &[ExternalForce] {
        &self.external
    }

    pub fn body_index(&self, name: &str) -> Option<usize> {
        self.bodies.iter().position(|b| b.name == name)
    }

    pub fn body(&self, name: &str) -> Option<&BodySpec> {
        self.bodies.iter().find(|b| b.name == name)
    }

    /// First coordinate slot of a movable body.
    pub fn slot_of(&self, name: &str) -> Result<usize> {
        let idx = self
            .body_index(name)
            .ok_or_else(|| DynamicsError::UnknownBody(name.to_string()))?;
        self.resolved.slot[idx].ok_or_else(|| DynamicsError::FixedTarget(name.to_string()))
    }

    /// Movable bodies in slot order.
    pub fn movable(&self) -> impl Iterator<Item = &BodySpec> {
        self.bodies.iter().filter(|b| !b.fixed)
    }

    /// One label per coordinate: `<body>_x`, `<body>_y`, `<body>_z`.
    pub fn coordinate_labels(&self) -> Vec<String> {
        self.movable()
            .flat_map(|b| ["x", "y", "z"].map(|ax| format!("{}_{}", b.name, ax)))
            .collect()
    }

    /// Mass attached to each coordinate slot.
    pub fn coordinate_masses(&self) -> Vec<f64> {
        self.movable().flat_map(|b| [b.mass; 3]).collect()
    }

    pub fn set_mass(&mut self, name: &str, mass: f64) -> Result<()> {
        if !(mass >= 0.0 && mass.is_finite()) {
            return Err(DynamicsError::InvalidSystem(format!(
                "mass of `{name}` must be finite and non-negative"
            )));
        }
        let idx = self
            .body_index(name)
            .ok_or_else(|| DynamicsError::UnknownBody(name.to_string()))?;
        self.bodies[idx].mass = mass;
        Ok(())
    }

    pub fn add_force(&mut self, force: ExternalForce) -> Result<()> {
        force.validate()?;
        let idx = self
            .body_index(&force.target)
            .ok_or_else(|| DynamicsError::UnknownBody(force.target.clone()))?;
        let body = &self.bodies[idx];
        if body.fixed {
            return Err(DynamicsError::FixedTarget(force.target.clone()));
        }
        if body.mass <= 0.0 {
            return Err(DynamicsError::InvalidSystem(format!(
                "force target `{}` has no inertia",
                force.target
            )));
        }
        self.external.push(force);
        Ok(())
    }

    pub fn with_force(mut self, force: ExternalForce) -> Result<Self> {
        self.add_force(force)?;
        Ok(self)
    }

    pub fn without_forces(&self) -> Self {
        PhysicalSystem {
            external: Vec::new(),
            ..self.clone()
        }
    }

    /// Position of body `idx` in the given state.
    fn position(&self, idx: usize, q: &[f64]) -> [f64; 3] {
        match self.resolved.slot[idx] {
            Some(s) => [q[s], q[s + 1], q[s + 2]],
            None => self.bodies[idx].anchor,
        }
    }

    fn velocity(&self, idx: usize, qdot: &[f64]) -> [f64; 3] {
        match self.resolved.slot[idx] {
            Some(s) => [qdot[s], qdot[s + 1], qdot[s + 2]],
            None => [0.0; 3],
        }
    }

    pub fn body_position(&self, name: &str, q: &[f64]) -> Result<[f64; 3]> {
        let idx = self
            .body_index(name)
            .ok_or_else(|| DynamicsError::UnknownBody(name.to_string()))?;
        Ok(self.position(idx, q))
    }

    pub fn body_velocity(&self, name: &str, qdot: &[f64]) -> Result<[f64; 3]> {
        let idx = self
            .body_index(name)
            .ok_or_else(|| DynamicsError::UnknownBody(name.to_string()))?;
        Ok(self.velocity(idx, qdot))
    }

    /// Host of a body, if it moves in another body's frame.
    pub fn host_of(&self, name: &str) -> Option<&BodySpec> {
        let idx = self.body_index(name)?;
        self.resolved.host[idx].map(|h| &self.bodies[h])
    }

    fn check_state(&self, state: &State) -> Result<()> {
        let n = self.n();
        if state.q.len() != n || state.qdot.len() != n {
            return Err(DynamicsError::Dimension {
                expected: n,
                got: state.q.len().max(state.qdot.len()),
            });
        }
        Ok(())
    }
}

fn resolve(bodies: &[BodySpec], g: f64) -> Result<Resolved> {
    let invalid = |msg: String| Err(DynamicsError::InvalidSystem(msg));
    if !(g.is_finite() && g >= 0.0) {
        return invalid("G must be finite and non-negative".into());
    }
    let lookup = |name: &str| bodies.iter().position(|b| b.name == name);
    let mut slot = Vec::with_capacity(bodies.len());
    let mut next = 0;
    for (i, b) in bodies.iter().enumerate() {
        if b.name.is_empty() {
            return invalid(format!("body {i} has an empty name"));
        }
        if bodies[..i].iter().any(|o| o.name == b.name) {
            return invalid(format!("duplicate body name `{}`", b.name));
        }
        if !(b.mass >= 0.0 && b.mass.is_finite()) {
            return invalid(format!("mass of `{}` must be finite and non-negative", b.name));
        }
        if !b.anchor.iter().all(|v| v.is_finite()) {
            return invalid(format!("anchor of `{}` is not finite", b.name));
        }
        if b.fixed {
            slot.push(None);
        } else {
            slot.push(Some(next));
            next += 3;
        }
    }
    if next == 0 {
        return invalid("system has no movable body".into());
    }
    let mut attractors = Vec::with_capacity(bodies.len());
    let mut host = Vec::with_capacity(bodies.len());
    for b in bodies {
        let mut set = Vec::new();
        for a in &b.attractors {
            if a == &b.name {
                return invalid(format!("`{}` cannot attract itself", b.name));
            }
            match lookup(a) {
                Some(j) if !set.contains(&j) => set.push(j),
                Some(_) => {}
                None => return invalid(format!("`{}` names unknown attractor `{a}`", b.name)),
            }
        }
        attractors.push(set);
        match &b.host {
            Some(h) if h == &b.name => return invalid(format!("`{}` cannot host itself", b.name)),
            Some(h) => match lookup(h) {
                Some(j) => host.push(Some(j)),
                None => return invalid(format!("`{}` names unknown host `{h}`", b.name)),
            },
            None => host.push(None),
        }
    }
    // Hosts must precede their satellites when accelerations are composed.
    let mut order = Vec::with_capacity(bodies.len());
    let mut state = vec![0u8; bodies.len()];
    fn visit(
        i: usize,
        host: &[Option<usize>],
        state: &mut [u8],
        order: &mut Vec<usize>,
        bodies: &[BodySpec],
    ) -> Result<()> {
        match state[i] {
            2 => return Ok(()),
            1 => {
                return Err(DynamicsError::InvalidSystem(format!(
                    "host chain through `{}` is cyclic",
                    bodies[i].name
                )))
            }
            _ => {}
        }
        state[i] = 1;
        if let Some(h) = host[i] {
            visit(h, host, state, order, bodies)?;
        }
        state[i] = 2;
        order.push(i);
        Ok(())
    }
    for i in 0..bodies.len() {
        visit(i, &host, &mut state, &mut order, bodies)?;
    }
    Ok(Resolved {
        slot,
        attractors,
        host,
        order,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub t: f64,
    pub q: Vec<f64>,
    pub qdot: Vec<f64>,
}

impl State {
    pub fn new(t: f64, q: Vec<f64>, qdot: Vec<f64>) -> Self {
        State { t, q, qdot }
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.q.iter().chain(&self.qdot).all(|v| v.is_finite())
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

/// Gravitational acceleration of every coordinate, including accelerations
/// inherited from hosts. External forces are not included.
pub fn gravitational_accel(system: &PhysicalSystem, state: &State) -> Result<Vec<f64>> {
    system.check_state(state)?;
    let per_body = body_accels(system, &state.q, state.t)?;
    let mut out = vec![0.0; system.n()];
    for (i, slot) in system.resolved.slot.iter().enumerate() {
        if let Some(s) = *slot {
            out[s..s + 3].copy_from_slice(&per_body[i]);
        }
    }
    Ok(out)
}

fn body_accels(system: &PhysicalSystem, q: &[f64], t: f64) -> Result<Vec<[f64; 3]>> {
    let r = &system.resolved;
    let mut acc = vec![[0.0; 3]; system.bodies.len()];
    for &i in &r.order {
        if system.bodies[i].fixed {
            continue;
        }
        let mut a = match r.host[i] {
            Some(h) => acc[h],
            None => [0.0; 3],
        };
        let pos = system.position(i, q);
        for &j in &r.attractors[i] {
            let d = sub(system.position(j, q), pos);
            let dist = norm(d);
            if dist < SINGULARITY_THRESHOLD {
                return Err(DynamicsError::Singularity {
                    body: system.bodies[i].name.clone(),
                    attractor: system.bodies[j].name.clone(),
                    t,
                });
            }
            let k = system.g * system.bodies[j].mass / (dist * dist * dist);
            for ax in 0..3 {
                a[ax] += k * d[ax];
            }
        }
        acc[i] = a;
    }
    Ok(acc)
}

/// Total acceleration at time `t`: gravity plus active window forces.
/// Window forces are held constant over a step and switched on the step's
/// start time `t_step`, so a window always covers whole steps.
fn acceleration(system: &PhysicalSystem, q: &[f64], t: f64, t_step: f64) -> Result<Vec<f64>> {
    let per_body = body_accels(system, q, t)?;
    let mut out = vec![0.0; system.n()];
    for (i, slot) in system.resolved.slot.iter().enumerate() {
        if let Some(s) = *slot {
            out[s..s + 3].copy_from_slice(&per_body[i]);
        }
    }
    for f in &system.external {
        if let ForceKind::Window { force, t_on, t_off } = f.kind {
            if t_step >= t_on && t_step < t_off {
                // Validated on insertion: target is movable with positive mass.
                let idx = system.body_index(&f.target).expect("validated target");
                let m = system.bodies[idx].mass;
                let dv = [force[0] / m, force[1] / m, force[2] / m];
                add_to_carried(system, idx, &mut out, dv);
            }
        }
    }
    Ok(out)
}

/// Adds `dv` to the target body and to every body it carries.
fn add_to_carried(system: &PhysicalSystem, target: usize, out: &mut [f64], dv: [f64; 3]) {
    for (k, slot) in system.resolved.slot.iter().enumerate() {
        if let Some(sk) = *slot {
            if k == target || carried_by(system, k, target) {
                for ax in 0..3 {
                    out[sk + ax] += dv[ax];
                }
            }
        }
    }
}

/// True if `body` inherits acceleration from `carrier` through its host chain.
fn carried_by(system: &PhysicalSystem, body: usize, carrier: usize) -> bool {
    let mut cur = system.resolved.host[body];
    while let Some(h) = cur {
        if h == carrier {
            return true;
        }
        cur = system.resolved.host[h];
    }
    false
}

/// Advance one step of size `dt`.
pub fn step(system: &PhysicalSystem, state: &State, dt: f64, method: Integrator) -> Result<State> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(DynamicsError::InvalidStep(format!("dt must be positive, got {dt}")));
    }
    system.check_state(state)?;
    match method {
        Integrator::Rk4 => rk4(system, state, dt),
        Integrator::Leapfrog => leapfrog(system, state, dt),
    }
}

fn axpy(base: &[f64], k: f64, d: &[f64]) -> Vec<f64> {
    base.iter().zip(d).map(|(b, d)| b + k * d).collect()
}

fn rk4(system: &PhysicalSystem, s: &State, dt: f64) -> Result<State> {
    let h2 = 0.5 * dt;
    let k1v = acceleration(system, &s.q, s.t, s.t)?;
    let k1x = s.qdot.clone();

    let q2 = axpy(&s.q, h2, &k1x);
    let v2 = axpy(&s.qdot, h2, &k1v);
    let k2v = acceleration(system, &q2, s.t + h2, s.t)?;
    let k2x = v2;

    let q3 = axpy(&s.q, h2, &k2x);
    let v3 = axpy(&s.qdot, h2, &k2v);
    let k3v = acceleration(system, &q3, s.t + h2, s.t)?;
    let k3x = v3;

    let q4 = axpy(&s.q, dt, &k3x);
    let v4 = axpy(&s.qdot, dt, &k3v);
    let k4v = acceleration(system, &q4, s.t + dt, s.t)?;
    let k4x = v4;

    let sixth = dt / 6.0;
    let n = s.q.len();
    let mut q = Vec::with_capacity(n);
    let mut qdot = Vec::with_capacity(n);
    for i in 0..n {
        q.push(s.q[i] + sixth * (k1x[i] + 2.0 * k2x[i] + 2.0 * k3x[i] + k4x[i]));
        qdot.push(s.qdot[i] + sixth * (k1v[i] + 2.0 * k2v[i] + 2.0 * k3v[i] + k4v[i]));
    }
    Ok(State::new(s.t + dt, q, qdot))
}

// Kick-drift-kick.
fn leapfrog(system: &PhysicalSystem, s: &State, dt: f64) -> Result<State> {
    let h2 = 0.5 * dt;
    let a0 = acceleration(system, &s.q, s.t, s.t)?;
    let v_half = axpy(&s.qdot, h2, &a0);
    let q = axpy(&s.q, dt, &v_half);
    let a1 = acceleration(system, &q, s.t + dt, s.t)?;
    let qdot = axpy(&v_half, h2, &a1);
    Ok(State::new(s.t + dt, q, qdot))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub q: Vec<f64>,
    pub qdot: Vec<f64>,
}

impl Sample {
    pub fn state(&self) -> State {
        State::new(self.t, self.q.clone(), self.qdot.clone())
    }
}

impl From<State> for Sample {
    fn from(s: State) -> Self {
        Sample {
            t: s.t,
            q: s.q,
            qdot: s.qdot,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrajectoryMeta {
    pub system: String,
    pub dt: f64,
    pub integrator: String,
    /// One label per coordinate, e.g. `Earth_x`.
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n(&self) -> usize {
        self.samples.first().map_or(self.meta.labels.len(), |s| s.q.len())
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn first(&self) -> Option<&Sample> {
        self.samples.first()
    }

    pub fn last(&self) -> Option<&Sample> {
        self.samples.last()
    }

    /// Index of a coordinate label.
    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.meta.labels.iter().position(|l| l == label)
    }

    /// Keep only the listed coordinates.
    pub fn project(&self, coords: &[usize]) -> Trajectory {
        let pick = |v: &[f64]| coords.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Trajectory {
            samples: self
                .samples
                .iter()
                .map(|s| Sample {
                    t: s.t,
                    q: pick(&s.q),
                    qdot: pick(&s.qdot),
                })
                .collect(),
            meta: TrajectoryMeta {
                labels: coords
                    .iter()
                    .filter_map(|&i| self.meta.labels.get(i).cloned())
                    .collect(),
                ..self.meta.clone()
            },
        }
    }

    /// Checks time ordering and sample arity.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let n = self.n();
        for (k, s) in self.samples.iter().enumerate() {
            if s.q.len() != n || s.qdot.len() != n {
                return Err(format!("sample {k} has wrong arity"));
            }
            if k > 0 && !(s.t > self.samples[k - 1].t) {
                return Err(format!("sample {k} does not advance time"));
            }
        }
        Ok(())
    }
}

/// Apply a momentum change to a body (and every body it carries).
pub fn apply_impulse(system: &PhysicalSystem, state: &mut State, target: &str, dp: [f64; 3]) -> Result<()> {
    system.check_state(state)?;
    if !dp.iter().all(|v| v.is_finite()) {
        return Err(DynamicsError::InvalidSystem(format!("impulse on `{target}` is not finite")));
    }
    let idx = system
        .body_index(target)
        .ok_or_else(|| DynamicsError::UnknownBody(target.to_string()))?;
    let body = &system.bodies[idx];
    if body.fixed {
        return Err(DynamicsError::FixedTarget(target.to_string()));
    }
    if body.mass <= 0.0 {
        return Err(DynamicsError::InvalidSystem(format!("force target `{target}` has no inertia")));
    }
    let dv = [dp[0] / body.mass, dp[1] / body.mass, dp[2] / body.mass];
    add_to_carried(system, idx, &mut state.qdot, dv);
    Ok(())
}

fn apply_impulses(system: &PhysicalSystem, state: &mut State, pending: &mut [bool], t_start: f64) {
    // Impulses land on the first sample time at or after t_imp.
    const SLACK: f64 = 1e-12;
    for (k, f) in system.external.iter().enumerate() {
        if let ForceKind::Impulse { dp, t_imp } = f.kind {
            let tol = SLACK * t_imp.abs().max(1.0);
            if pending[k] && t_imp >= t_start - tol && state.t >= t_imp - tol {
                pending[k] = false;
                let idx = system.body_index(&f.target).expect("validated target");
                let m = system.bodies[idx].mass;
                let dv = [dp[0] / m, dp[1] / m, dp[2] / m];
                add_to_carried(system, idx, &mut state.qdot, dv);
            }
        }
    }
}

/// Integrate from `init` over `duration` with step `dt`. The final step is
/// shortened when `dt` does not divide `duration`.
pub fn simulate(
    system: &PhysicalSystem,
    init: &State,
    duration: f64,
    dt: f64,
    method: Integrator,
) -> Result<Trajectory> {
    if !(duration >= 0.0 && duration.is_finite()) {
        return Err(DynamicsError::InvalidStep(format!(
            "duration must be non-negative, got {duration}"
        )));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(DynamicsError::InvalidStep(format!("dt must be positive, got {dt}")));
    }
    system.check_state(init)?;
    if !init.is_finite() {
        return Err(DynamicsError::NonFinite { last_good: 0 });
    }
    let t0 = init.t;
    let ratio = duration / dt;
    let mut full = ratio.floor() as usize;
    // Absorb rounding noise so that e.g. 2pi / (2pi/1000) yields 1000 steps.
    if ratio - (full as f64) > 1.0 - 1e-9 {
        full += 1;
    }
    let remainder = duration - full as f64 * dt;
    let partial = remainder > 1e-9 * dt;

    let mut pending = vec![true; system.external.len()];
    let mut state = init.clone();
    apply_impulses(system, &mut state, &mut pending, t0);
    let mut samples = Vec::with_capacity(full + 2);
    samples.push(Sample::from(state.clone()));

    let total = full + usize::from(partial);
    for k in 1..=total {
        let (h, t_next) = if k <= full {
            (dt, t0 + k as f64 * dt)
        } else {
            (t0 + duration - state.t, t0 + duration)
        };
        let mut next = step(system, &state, h, method)?;
        next.t = t_next;
        if !next.is_finite() {
            return Err(DynamicsError::NonFinite { last_good: k - 1 });
        }
        apply_impulses(system, &mut next, &mut pending, t0);
        samples.push(Sample::from(next.clone()));
        state = next;
    }
    Ok(Trajectory {
        samples,
        meta: TrajectoryMeta {
            system: String::new(),
            dt,
            integrator: method.name().to_string(),
            labels: system.coordinate_labels(),
        },
    })
}

/// Kinetic plus potential energy over the restricted coupling graph. Hosted
/// bodies contribute kinetic energy relative to their host; each directed
/// attractor edge contributes one potential term.
pub fn total_energy(system: &PhysicalSystem, state: &State) -> Result<f64> {
    system.check_state(state)?;
    let mut e = 0.0;
    for (i, b) in system.bodies.iter().enumerate() {
        if b.fixed {
            continue;
        }
        let mut v = system.velocity(i, &state.qdot);
        if let Some(h) = system.resolved.host[i] {
            v = sub(v, system.velocity(h, &state.qdot));
        }
        e += 0.5 * b.mass * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
        let pos = system.position(i, &state.q);
        for &j in &system.resolved.attractors[i] {
            let dist = norm(sub(system.position(j, &state.q), pos));
            if dist < SINGULARITY_THRESHOLD {
                return Err(DynamicsError::Singularity {
                    body: b.name.clone(),
                    attractor: system.bodies[j].name.clone(),
                    t: state.t,
                });
            }
            e -= system.g * b.mass * system.bodies[j].mass / dist;
        }
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sun_earth() -> PhysicalSystem {
        PhysicalSystem::new(
            vec![
                BodySpec::fixed_at("Sun", 1.0, [0.0; 3]),
                BodySpec::free("Earth", 1.0).attracted_by(&["Sun"]),
            ],
            1.0,
        )
        .unwrap()
    }

    fn circular() -> State {
        State::new(0.0, vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0])
    }

    #[test]
    fn unit_distance_gives_unit_acceleration() {
        let a = gravitational_accel(&sun_earth(), &circular()).unwrap();
        assert_eq!(a, vec![-1.0, 0.0, 0.0]);
    }

    #[test]
    fn massless_attractor_contributes_nothing() {
        let sys = PhysicalSystem::new(
            vec![
                BodySpec::fixed_at("Ghost", 0.0, [0.0; 3]),
                BodySpec::free("Probe", 1.0).attracted_by(&["Ghost"]),
            ],
            1.0,
        )
        .unwrap();
        let a = gravitational_accel(&sys, &circular()).unwrap();
        assert_eq!(a, vec![0.0; 3]);
    }

    #[test]
    fn moon_pull_from_planet() {
        let sys = PhysicalSystem::new(
            vec![
                BodySpec::fixed_at("Earth", 1e-3, [0.0; 3]),
                BodySpec::free("Moon", 1e-5).attracted_by(&["Earth"]),
            ],
            1.0,
        )
        .unwrap();
        let st = State::new(0.0, vec![0.05, 0.0, 0.0], vec![0.0; 3]);
        let a = gravitational_accel(&sys, &st).unwrap();
        assert!((a[0] + 0.4).abs() < 1e-12);
        assert_eq!(&a[1..], &[0.0, 0.0]);
    }

    #[test]
    fn coincident_bodies_are_a_singularity() {
        let st = State::new(3.5, vec![0.0, 0.0, 0.0], vec![0.0; 3]);
        match gravitational_accel(&sun_earth(), &st) {
            Err(DynamicsError::Singularity { body, attractor, t }) => {
                assert_eq!((body.as_str(), attractor.as_str(), t), ("Earth", "Sun", 3.5));
            }
            other => panic!("expected singularity, got {other:?}"),
        }
    }

    #[test]
    fn invalid_graphs_are_rejected() {
        let selfish = BodySpec::free("A", 1.0).attracted_by(&["A"]);
        assert!(PhysicalSystem::new(vec![selfish], 1.0).is_err());
        let dangling = BodySpec::free("A", 1.0).attracted_by(&["B"]);
        assert!(PhysicalSystem::new(vec![dangling], 1.0).is_err());
        let neg = BodySpec::free("A", -1.0);
        assert!(PhysicalSystem::new(vec![neg], 1.0).is_err());
        let cyc = vec![
            BodySpec::free("A", 1.0).hosted_by("B"),
            BodySpec::free("B", 1.0).hosted_by("A"),
        ];
        assert!(PhysicalSystem::new(cyc, 1.0).is_err());
        let only_fixed = vec![BodySpec::fixed_at("S", 1.0, [0.0; 3])];
        assert!(PhysicalSystem::new(only_fixed, 1.0).is_err());
    }

    #[test]
    fn forces_on_fixed_bodies_are_rejected() {
        let sys = sun_earth();
        let err = sys
            .clone()
            .with_force(ExternalForce::impulse("Sun", [1.0, 0.0, 0.0], 0.0))
            .unwrap_err();
        assert_eq!(err, DynamicsError::FixedTarget("Sun".into()));
        assert!(sys
            .with_force(ExternalForce::window("Earth", [1.0, 0.0, 0.0], 2.0, 1.0))
            .is_err());
    }

    #[test]
    fn free_body_at_rest_stays_put() {
        let sys = PhysicalSystem::new(vec![BodySpec::free("Rock", 2.0)], 1.0).unwrap();
        let st = State::new(0.0, vec![0.3, -0.2, 0.1], vec![0.0; 3]);
        for method in [Integrator::Rk4, Integrator::Leapfrog] {
            let next = step(&sys, &st, 0.1, method).unwrap();
            assert_eq!(next.q, st.q);
            assert_eq!(next.qdot, st.qdot);
            assert_eq!(next.t, 0.1);
        }
    }

    #[test]
    fn rk4_step_stays_on_circle() {
        let next = step(&sun_earth(), &circular(), 1e-3, Integrator::Rk4).unwrap();
        let r = (next.q[0].powi(2) + next.q[1].powi(2)).sqrt();
        assert!((r - 1.0).abs() < 1e-12);
        // Analytic circle at t + dt.
        assert!((next.q[0] - 1e-3f64.cos()).abs() < 1e-12);
        assert!((next.q[1] - 1e-3f64.sin()).abs() < 1e-12);
    }

    #[test]
    fn non_positive_dt_is_rejected() {
        assert!(step(&sun_earth(), &circular(), 0.0, Integrator::Rk4).is_err());
        assert!(simulate(&sun_earth(), &circular(), 1.0, -1.0, Integrator::Rk4).is_err());
    }

    #[test]
    fn energy_of_free_body_and_circle() {
        let sys = PhysicalSystem::new(vec![BodySpec::free("Rock", 2.0)], 1.0).unwrap();
        let st = State::new(0.0, vec![0.0; 3], vec![3.0, 0.0, 0.0]);
        assert_eq!(total_energy(&sys, &st).unwrap(), 9.0);
        assert_eq!(total_energy(&sun_earth(), &circular()).unwrap(), -0.5);
    }

    #[test]
    fn partial_last_step_lands_on_end() {
        let traj = simulate(&sun_earth(), &circular(), 1.05, 0.1, Integrator::Rk4).unwrap();
        assert_eq!(traj.len(), 12);
        assert_eq!(traj.last().unwrap().t, 1.05);
        traj.validate().unwrap();
    }

    #[test]
    fn zero_duration_is_a_single_sample() {
        let traj = simulate(&sun_earth(), &circular(), 0.0, 0.1, Integrator::Rk4).unwrap();
        assert_eq!(traj.len(), 1);
        assert_eq!(traj.samples[0].q, circular().q);
    }

    #[test]
    fn impulse_is_applied_once_at_first_sample_after() {
        let sys = sun_earth()
            .with_force(ExternalForce::impulse("Earth", [0.0, 0.5, 0.0], 0.25))
            .unwrap();
        let base = simulate(&sun_earth(), &circular(), 0.5, 0.1, Integrator::Rk4).unwrap();
        let kicked = simulate(&sys, &circular(), 0.5, 0.1, Integrator::Rk4).unwrap();
        // Samples at 0.0, 0.1, 0.2 are untouched; 0.3 carries the kick.
        assert_eq!(&base.samples[..3], &kicked.samples[..3]);
        let before = step(&sun_earth(), &kicked.samples[2].state(), 0.1, Integrator::Rk4).unwrap();
        let after = &kicked.samples[3];
        assert_eq!(after.q, before.q);
        assert_eq!(after.qdot[1], before.qdot[1] + 0.5);
        assert_eq!(after.qdot[0], before.qdot[0]);
    }

    #[test]
    fn impulse_outside_window_is_never_applied() {
        let sys = sun_earth()
            .with_force(ExternalForce::impulse("Earth", [0.0, 0.5, 0.0], 5.0))
            .unwrap();
        let a = simulate(&sun_earth(), &circular(), 1.0, 0.1, Integrator::Rk4).unwrap();
        let b = simulate(&sys, &circular(), 1.0, 0.1, Integrator::Rk4).unwrap();
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn window_force_accelerates_inside_interval_only() {
        let free = PhysicalSystem::new(vec![BodySpec::free("Rock", 2.0)], 1.0).unwrap();
        let pushed = free
            .clone()
            .with_force(ExternalForce::window("Rock", [4.0, 0.0, 0.0], 0.0, 1.0))
            .unwrap();
        let st = State::new(0.0, vec![0.0; 3], vec![0.0; 3]);
        let traj = simulate(&pushed, &st, 2.0, 0.25, Integrator::Rk4).unwrap();
        let mid = &traj.samples[4];
        assert!((mid.qdot[0] - 2.0).abs() < 1e-12);
        assert!((mid.q[0] - 1.0).abs() < 1e-12);
        let end = traj.last().unwrap();
        assert!((end.qdot[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn labels_and_slots_follow_body_order() {
        let sys = sun_earth();
        assert_eq!(sys.n(), 3);
        assert_eq!(sys.coordinate_labels(), vec!["Earth_x", "Earth_y", "Earth_z"]);
        assert_eq!(sys.slot_of("Earth").unwrap(), 0);
        assert!(matches!(sys.slot_of("Sun"), Err(DynamicsError::FixedTarget(_))));
    }
}
