//! Observable simulations with fewer (or more) degrees of freedom.
//!
//! Three constructions are provided:
//!
//! * [`clone_copy`]: an exact, independent copy of the system.
//! * [`pad_noninteracting`]: the system plus extra bodies that never couple
//!   to it, so it has more coordinates but the same observable motion.
//! * [`build_reduced`]: a single-degree-of-freedom model. One coordinate that
//!   is strictly monotone over the recording (the drive) parameterizes every
//!   other coordinate, `q_i = q_i(q_j)`, and a time law `q_j(t)` replays it.
//!
//! Internally the drive is stored as `s = direction * q_j`, so that `s` always
//! increases; public functions take and return `q_j`.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{
    BodySpec, DynamicsError, ExternalForce, PhysicalSystem, Sample, Trajectory, TrajectoryMeta,
};
use crate::interp::{CubicHermite, InterpError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReductionError {
    #[error("trajectory needs at least 3 samples, got {0}")]
    TooFewSamples(usize),
    #[error("no continuous monotone coordinate over the interval (best candidate {best} with margin {margin})")]
    NoMonotoneCoordinate { best: String, margin: f64 },
    #[error("chart body `{0}` has no x/y coordinates in the trajectory")]
    UnknownChartBody(String),
    #[error("cylindrical chart of `{body}` is undefined on the axis (sample {sample})")]
    DegenerateChart { body: String, sample: usize },
    #[error("drive value repeats at knot {0}")]
    DuplicateKnot(usize),
    #[error("drive rate is not positive at knot {0}")]
    DriveStall(usize),
    #[error("time {t} outside valid interval [{lo}, {hi}]")]
    OutsideValid { t: f64, lo: f64, hi: f64 },
    #[error("drive value {q} outside recorded range [{lo}, {hi}]")]
    OutsideCurve { q: f64, lo: f64, hi: f64 },
    #[error("model has no inertia profile")]
    NoInertia,
    #[error("effective inertia {0} is not positive")]
    NonPositiveInertia(f64),
    #[error("body `{0}` is not represented in the model")]
    UnknownBody(String),
    #[error("extra body `{extra}` couples to base body `{base}`")]
    Coupling { extra: String, base: String },
    #[error("{0}")]
    Interp(#[from] InterpError),
    #[error("{0}")]
    Dynamics(#[from] DynamicsError),
}

pub type Result<T> = std::result::Result<T, ReductionError>;

/// Exact copy of a system (value semantics).
pub fn clone_copy(system: &PhysicalSystem) -> PhysicalSystem {
    system.clone()
}

/// A base system extended with bodies that neither act on it nor feel it.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedSystem {
    system: PhysicalSystem,
    base_n: usize,
    extras: Vec<String>,
}

impl PaddedSystem {
    pub fn system(&self) -> &PhysicalSystem {
        &self.system
    }

    /// Coordinate count of the base system.
    pub fn n(&self) -> usize {
        self.base_n
    }

    /// Coordinate count of the padded system.
    pub fn m(&self) -> usize {
        self.system.n()
    }

    pub fn extras(&self) -> &[String] {
        &self.extras
    }

    /// Indices of the base coordinates inside the padded state.
    pub fn base_coords(&self) -> Vec<usize> {
        (0..self.base_n).collect()
    }

    /// Extend a base state with the extra bodies' initial conditions.
    pub fn extend_state(&self, base: &crate::dynamics::State, extra_q: &[f64], extra_qdot: &[f64]) -> crate::dynamics::State {
        let mut q = base.q.clone();
        q.extend_from_slice(extra_q);
        let mut qdot = base.qdot.clone();
        qdot.extend_from_slice(extra_qdot);
        crate::dynamics::State::new(base.t, q, qdot)
    }
}

/// Append non-interacting bodies to a system.
///
/// The base bodies keep their coordinate slots, so the first `n` coordinates
/// of the padded system are the base coordinates.
pub fn pad_noninteracting(system: &PhysicalSystem, extras: Vec<BodySpec>) -> Result<PaddedSystem> {
    let base_names: Vec<&str> = system.bodies().iter().map(|b| b.name.as_str()).collect();
    for e in &extras {
        if let Some(base) = e
            .attractors
            .iter()
            .chain(e.host.iter())
            .find(|a| base_names.contains(&a.as_str()))
        {
            return Err(ReductionError::Coupling {
                extra: e.name.clone(),
                base: base.clone(),
            });
        }
        if base_names.contains(&e.name.as_str()) {
            return Err(ReductionError::Coupling {
                extra: e.name.clone(),
                base: e.name.clone(),
            });
        }
    }
    // Movable base bodies must keep the leading slots.
    let mut bodies: Vec<BodySpec> = system.bodies().to_vec();
    let names = extras.iter().map(|b| b.name.clone()).collect();
    bodies.extend(extras);
    let mut padded = PhysicalSystem::new(bodies, system.g())?;
    for f in system.external() {
        padded.add_force(f.clone())?;
    }
    Ok(PaddedSystem {
        system: padded,
        base_n: system.n(),
        extras: names,
    })
}

/// Coordinate system in which the drive is read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "chart", rename_all = "snake_case")]
pub enum Chart {
    /// A raw generalized coordinate.
    Cartesian { index: usize, label: String },
    /// Unwrapped polar angle of a body around the z axis.
    Cylindrical { body: String, x: usize, y: usize },
}

impl fmt::Display for Chart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Chart::Cartesian { label, .. } => write!(f, "{label}"),
            Chart::Cylindrical { body, .. } => write!(f, "theta({body}) unwrapped"),
        }
    }
}

/// Derived charts offered to drive detection in addition to raw coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChartRequest {
    Cylindrical(String),
}

impl std::str::FromStr for ChartRequest {
    type Err = String;

    /// Parses `cylindrical:<body>`.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.split_once(':') {
            Some(("cylindrical", body)) if !body.is_empty() => {
                Ok(ChartRequest::Cylindrical(body.to_string()))
            }
            _ => Err(format!("unknown chart `{s}` (expected cylindrical:<body>)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveCoordinate {
    pub chart: Chart,
    /// +1 if the coordinate increases over the recording, -1 if it decreases.
    pub direction: f64,
    /// Smallest discrete rate `direction * dq_j/dt` over the recording.
    pub margin: f64,
    /// Multiples of 2π added to each sample by unwrapping (angular charts).
    pub unwrap_offsets: Vec<i64>,
}

impl DriveCoordinate {
    /// Drive values and rates along a trajectory.
    pub fn read(&self, traj: &Trajectory) -> Result<(Vec<f64>, Vec<f64>)> {
        let (v, r, _) = chart_series(&self.chart, traj)?;
        Ok((v, r))
    }
}

/// Values, rates and unwrap offsets of a chart along a trajectory.
fn chart_series(chart: &Chart, traj: &Trajectory) -> Result<(Vec<f64>, Vec<f64>, Vec<i64>)> {
    match chart {
        Chart::Cartesian { index, .. } => Ok((
            traj.samples.iter().map(|s| s.q[*index]).collect(),
            traj.samples.iter().map(|s| s.qdot[*index]).collect(),
            vec![0; traj.len()],
        )),
        Chart::Cylindrical { body, x, y } => {
            let mut values = Vec::with_capacity(traj.len());
            let mut rates = Vec::with_capacity(traj.len());
            let mut offsets = Vec::with_capacity(traj.len());
            let mut turns: i64 = 0;
            let mut prev: Option<f64> = None;
            for (k, s) in traj.samples.iter().enumerate() {
                let (px, py) = (s.q[*x], s.q[*y]);
                let rho2 = px * px + py * py;
                if rho2 < 1e-18 {
                    return Err(ReductionError::DegenerateChart {
                        body: body.clone(),
                        sample: k,
                    });
                }
                let raw = py.atan2(px);
                if let Some(p) = prev {
                    let d = raw - p;
                    if d > PI {
                        turns -= 1;
                    } else if d < -PI {
                        turns += 1;
                    }
                }
                prev = Some(raw);
                offsets.push(turns);
                values.push(raw + 2.0 * PI * turns as f64);
                rates.push((px * s.qdot[*y] - py * s.qdot[*x]) / rho2);
            }
            Ok((values, rates, offsets))
        }
    }
}

fn margin_of(times: &[f64], values: &[f64]) -> (f64, f64) {
    let total = values[values.len() - 1] - values[0];
    let direction = if total >= 0.0 { 1.0 } else { -1.0 };
    if total == 0.0 {
        return (direction, 0.0);
    }
    let margin = times
        .windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| direction * (v[1] - v[0]) / (t[1] - t[0]))
        .fold(f64::INFINITY, f64::min);
    (direction, margin)
}

/// Pick the strictly monotone coordinate with the largest margin among the raw
/// coordinates and the requested derived charts.
pub fn detect_drive_coordinate(traj: &Trajectory, charts: &[ChartRequest]) -> Result<DriveCoordinate> {
    if traj.len() < 3 {
        return Err(ReductionError::TooFewSamples(traj.len()));
    }
    let mut candidates: Vec<Chart> = (0..traj.n())
        .map(|index| Chart::Cartesian {
            index,
            label: traj
                .meta
                .labels
                .get(index)
                .cloned()
                .unwrap_or_else(|| format!("q{index}")),
        })
        .collect();
    for req in charts {
        let ChartRequest::Cylindrical(body) = req;
        let x = traj.label_index(&format!("{body}_x"));
        let y = traj.label_index(&format!("{body}_y"));
        match (x, y) {
            (Some(x), Some(y)) => candidates.push(Chart::Cylindrical {
                body: body.clone(),
                x,
                y,
            }),
            _ => return Err(ReductionError::UnknownChartBody(body.clone())),
        }
    }
    let times = traj.times();
    let mut best: Option<DriveCoordinate> = None;
    let mut best_any = (String::new(), f64::NEG_INFINITY);
    for chart in candidates {
        let (values, _, offsets) = match chart_series(&chart, traj) {
            Ok(series) => series,
            // A chart undefined somewhere on the curve cannot drive it.
            Err(ReductionError::DegenerateChart { .. }) => continue,
            Err(e) => return Err(e),
        };
        let (direction, margin) = margin_of(&times, &values);
        if margin > best_any.1 {
            best_any = (chart.to_string(), margin);
        }
        if margin > 0.0 && best.as_ref().map_or(true, |b| margin > b.margin) {
            best = Some(DriveCoordinate {
                chart,
                direction,
                margin,
                unwrap_offsets: offsets,
            });
        }
    }
    best.ok_or(ReductionError::NoMonotoneCoordinate {
        best: best_any.0,
        margin: best_any.1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Output {
    /// The coordinate is the drive itself.
    Drive,
    /// Interpolant `q_i(s)`.
    Slave { curve: CubicHermite },
}

/// Single-degree-of-freedom observable simulation of a recorded trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedModel {
    drive: DriveCoordinate,
    labels: Vec<String>,
    outputs: Vec<Output>,
    drive_law: CubicHermite,
    valid: (f64, f64),
    dof: usize,
    masses: Option<Vec<f64>>,
}

/// Reparameterize every coordinate by the drive.
pub fn build_reduced(traj: &Trajectory, drive: &DriveCoordinate) -> Result<ReducedModel> {
    if traj.len() < 3 {
        return Err(ReductionError::TooFewSamples(traj.len()));
    }
    if !(drive.margin > 0.0) {
        return Err(ReductionError::NoMonotoneCoordinate {
            best: drive.chart.to_string(),
            margin: drive.margin,
        });
    }
    let (values, rates) = drive.read(traj)?;
    let s: Vec<f64> = values.iter().map(|v| drive.direction * v).collect();
    let sdot: Vec<f64> = rates.iter().map(|r| drive.direction * r).collect();
    if let Some(k) = (1..s.len()).find(|&k| !(s[k] > s[k - 1])) {
        return Err(ReductionError::DuplicateKnot(k));
    }
    if let Some(k) = sdot.iter().position(|&r| !(r > 0.0)) {
        return Err(ReductionError::DriveStall(k));
    }
    let times = traj.times();
    let drive_law = CubicHermite::monotone(times.clone(), s.clone(), sdot.clone())?;

    let drive_index = match drive.chart {
        Chart::Cartesian { index, .. } => Some(index),
        Chart::Cylindrical { .. } => None,
    };
    let mut outputs = Vec::with_capacity(traj.n());
    for i in 0..traj.n() {
        if Some(i) == drive_index {
            outputs.push(Output::Drive);
            continue;
        }
        let y: Vec<f64> = traj.samples.iter().map(|smp| smp.q[i]).collect();
        let m: Vec<f64> = traj
            .samples
            .iter()
            .zip(&sdot)
            .map(|(smp, r)| smp.qdot[i] / r)
            .collect();
        outputs.push(Output::Slave {
            curve: CubicHermite::new(s.clone(), y, m)?,
        });
    }
    let labels = if traj.meta.labels.len() == traj.n() {
        traj.meta.labels.clone()
    } else {
        (0..traj.n()).map(|i| format!("q{i}")).collect()
    };
    Ok(ReducedModel {
        drive: drive.clone(),
        labels,
        outputs,
        drive_law,
        valid: (times[0], times[times.len() - 1]),
        dof: 1,
        masses: None,
    })
}

impl ReducedModel {
    pub fn drive(&self) -> &DriveCoordinate {
        &self.drive
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Degrees of freedom of the model.
    pub fn dof(&self) -> usize {
        self.dof
    }

    /// Number of observable coordinates.
    pub fn n(&self) -> usize {
        self.outputs.len()
    }

    pub fn valid(&self) -> (f64, f64) {
        self.valid
    }

    pub fn knot_count(&self) -> usize {
        self.drive_law.knots().len()
    }

    /// Number of reparameterized coordinates.
    pub fn slave_count(&self) -> usize {
        self.outputs
            .iter()
            .filter(|o| matches!(o, Output::Slave { .. }))
            .count()
    }

    pub fn drive_law(&self) -> &CubicHermite {
        &self.drive_law
    }

    /// Attach per-coordinate masses, enabling the inertia profile.
    pub fn with_masses(mut self, masses: Vec<f64>) -> Result<Self> {
        if masses.len() != self.n() {
            return Err(DynamicsError::Dimension {
                expected: self.n(),
                got: masses.len(),
            }
            .into());
        }
        self.masses = Some(masses);
        Ok(self)
    }

    pub fn has_inertia(&self) -> bool {
        self.masses.is_some()
    }

    /// Range of `q_j` covered by the recording.
    pub fn drive_range(&self) -> (f64, f64) {
        let (lo, hi) = self.s_range();
        if self.drive.direction > 0.0 {
            (lo, hi)
        } else {
            (-hi, -lo)
        }
    }

    fn s_range(&self) -> (f64, f64) {
        let v = self.drive_law.values();
        (v[0], v[v.len() - 1])
    }

    fn check_s(&self, s: f64) -> Result<()> {
        let (lo, hi) = self.s_range();
        if s >= lo && s <= hi {
            Ok(())
        } else {
            let (qlo, qhi) = self.drive_range();
            Err(ReductionError::OutsideCurve {
                q: self.drive.direction * s,
                lo: qlo,
                hi: qhi,
            })
        }
    }

    /// Coordinates and their derivatives with respect to `s` at a point of the curve.
    fn configuration_s(&self, s: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_s(s)?;
        let mut q = Vec::with_capacity(self.n());
        let mut dq = Vec::with_capacity(self.n());
        for out in &self.outputs {
            match out {
                Output::Drive => {
                    q.push(self.drive.direction * s);
                    dq.push(self.drive.direction);
                }
                Output::Slave { curve } => {
                    q.push(curve.eval(s)?);
                    dq.push(curve.derivative(s)?);
                }
            }
        }
        Ok((q, dq))
    }

    /// Coordinates at drive value `q_j`.
    pub fn configuration(&self, qj: f64) -> Result<Vec<f64>> {
        Ok(self.configuration_s(self.drive.direction * qj)?.0)
    }

    /// Partial derivatives `dq_i/dq_j` at drive value `q_j`.
    pub fn tangent(&self, qj: f64) -> Result<Vec<f64>> {
        let (_, dq) = self.configuration_s(self.drive.direction * qj)?;
        Ok(dq.into_iter().map(|d| d * self.drive.direction).collect())
    }

    /// Effective inertia `I(q_j) = Σ m_i (dq_i/dq_j)^2`.
    pub fn inertia(&self, qj: f64) -> Result<f64> {
        let masses = self.masses.as_ref().ok_or(ReductionError::NoInertia)?;
        let dq = self.tangent(qj)?;
        Ok(masses.iter().zip(&dq).map(|(m, d)| m * d * d).sum())
    }

    /// Drive value and rate prescribed by the time law.
    pub fn drive_at(&self, t: f64) -> Result<(f64, f64)> {
        let (lo, hi) = self.valid;
        if !(t >= lo && t <= hi) {
            return Err(ReductionError::OutsideValid { t, lo, hi });
        }
        let s = self.drive_law.eval(t)?;
        let sdot = self.drive_law.derivative(t)?;
        Ok((self.drive.direction * s, self.drive.direction * sdot))
    }

    /// Sample for a drive value and rate, with velocities by the chain rule.
    pub fn sample_at(&self, t: f64, qj: f64, qj_dot: f64) -> Result<Sample> {
        let (q, dq) = self.configuration_s(self.drive.direction * qj)?;
        let sdot = self.drive.direction * qj_dot;
        let qdot = dq.iter().map(|d| d * sdot).collect();
        Ok(Sample { t, q, qdot })
    }

    fn body_slots(&self, body: &str) -> Result<[usize; 3]> {
        let find = |ax: &str| {
            self.labels
                .iter()
                .position(|l| *l == format!("{body}_{ax}"))
                .ok_or_else(|| ReductionError::UnknownBody(body.to_string()))
        };
        Ok([find("x")?, find("y")?, find("z")?])
    }
}

/// Replay the recorded motion at the requested times. No extrapolation.
pub fn playback(model: &ReducedModel, times: &[f64]) -> Result<Trajectory> {
    let samples = times
        .iter()
        .map(|&t| {
            let (qj, qj_dot) = model.drive_at(t)?;
            model.sample_at(t, qj, qj_dot)
        })
        .collect::<Result<Vec<_>>>()?;
    let dt = if times.len() > 1 { times[1] - times[0] } else { 0.0 };
    Ok(Trajectory {
        samples,
        meta: TrajectoryMeta {
            system: "reduced".into(),
            dt,
            integrator: "playback".into(),
            labels: model.labels.clone(),
        },
    })
}

/// Generalized force on the drive: `Q = F · ∂r_target/∂q_j` at drive value `q_j`.
/// For impulses the result is the generalized impulse.
pub fn project_generalized_force(model: &ReducedModel, force: &ExternalForce, qj: f64) -> Result<f64> {
    let slots = model.body_slots(&force.target)?;
    let dq = model.tangent(qj)?;
    let f = force.vector();
    Ok((0..3).map(|ax| f[ax] * dq[slots[ax]]).sum())
}

/// One RK4 step of `q̈_j = Q / I(q_j)` with constant `Q`.
pub fn reduced_step_interactive(
    model: &ReducedModel,
    qj: f64,
    qj_dot: f64,
    q_force: f64,
    dt: f64,
) -> Result<(f64, f64)> {
    let accel = |q: f64| -> Result<f64> {
        let i = model.inertia(q)?;
        if !(i > 0.0) {
            return Err(ReductionError::NonPositiveInertia(i));
        }
        Ok(q_force / i)
    };
    let k1x = qj_dot;
    let k1v = accel(qj)?;
    let k2x = qj_dot + 0.5 * dt * k1v;
    let k2v = accel(qj + 0.5 * dt * k1x)?;
    let k3x = qj_dot + 0.5 * dt * k2v;
    let k3v = accel(qj + 0.5 * dt * k2x)?;
    let k4x = qj_dot + dt * k3v;
    let k4v = accel(qj + dt * k3x)?;
    Ok((
        qj + dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x),
        qj_dot + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v),
    ))
}

/// A reduced model driven by forces instead of its time law: the mechanism
/// keeps its shape and only the drive's phase and speed respond.
#[derive(Debug, Clone)]
pub struct InteractiveMotion<'a> {
    model: &'a ReducedModel,
    t: f64,
    qj: f64,
    qj_dot: f64,
}

impl<'a> InteractiveMotion<'a> {
    /// Start from the time-law state at `t`.
    pub fn from_playback(model: &'a ReducedModel, t: f64) -> Result<Self> {
        let (qj, qj_dot) = model.drive_at(t)?;
        Ok(InteractiveMotion { model, t, qj, qj_dot })
    }

    /// Continue from a saved drive state.
    pub fn resume(model: &'a ReducedModel, t: f64, qj: f64, qj_dot: f64) -> Self {
        InteractiveMotion { model, t, qj, qj_dot }
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn drive(&self) -> (f64, f64) {
        (self.qj, self.qj_dot)
    }

    /// Apply an impulse: `Δq̇_j = P / I(q_j)` with `P` the generalized impulse.
    pub fn apply_impulse(&mut self, force: &ExternalForce) -> Result<()> {
        let p = project_generalized_force(self.model, force, self.qj)?;
        let i = self.model.inertia(self.qj)?;
        if !(i > 0.0) {
            return Err(ReductionError::NonPositiveInertia(i));
        }
        self.qj_dot += p / i;
        Ok(())
    }

    /// Advance by `dt` under a constant generalized force.
    pub fn advance(&mut self, dt: f64, q_force: f64) -> Result<()> {
        let (qj, qj_dot) = reduced_step_interactive(self.model, self.qj, self.qj_dot, q_force, dt)?;
        self.model.check_s(self.model.drive.direction * qj)?;
        self.qj = qj;
        self.qj_dot = qj_dot;
        self.t += dt;
        Ok(())
    }

    /// Move the clock without changing the drive state (used to snap to a grid).
    pub fn set_time(&mut self, t: f64) {
        self.t = t;
    }

    pub fn sample(&self) -> Result<Sample> {
        self.model.sample_at(self.t, self.qj, self.qj_dot)
    }
}
