//! Force-injection experiment: can an interacting observer tell a candidate
//! system from the real one?
//!
//! The observer first checks that the candidate is observably equal to the
//! real system, then applies a force to it and compares the measured response
//! with the best Newtonian trajectory through those measurements. Systems
//! with as many degrees of freedom as the real one respond like it; a reduced
//! mechanism can only change its phase, which no Newtonian motion matches.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{
    simulate, DynamicsError, ExternalForce, ForceKind, Integrator, PhysicalSystem, Sample, State,
    Trajectory, TrajectoryMeta,
};
use crate::observer::{self, measure, observably_equal, ObserverError, Resolution};
use crate::reduction::{self, InteractiveMotion, PaddedSystem, ReducedModel, ReductionError};

#[derive(Debug, Error)]
pub enum DistinguisherError {
    #[error("invalid protocol: {0}")]
    Protocol(String),
    #[error("candidate has {candidate} coordinates, scenario has {scenario}")]
    Arity { candidate: usize, scenario: usize },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Reduction(#[from] ReductionError),
    #[error(transparent)]
    Observer(#[from] ObserverError),
}

pub type Result<T> = std::result::Result<T, DistinguisherError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateKind {
    Real,
    Copy,
    Padded,
    ReducedKinematic,
    ReducedInteractive,
}

impl std::fmt::Display for CandidateKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            CandidateKind::Real => "real",
            CandidateKind::Copy => "copy",
            CandidateKind::Padded => "padded",
            CandidateKind::ReducedKinematic => "reduced_kinematic",
            CandidateKind::ReducedInteractive => "reduced_interactive",
        };
        f.write_str(s)
    }
}

/// A system offered to the observer in place of the real one.
#[derive(Debug, Clone)]
pub enum Candidate {
    Real(PhysicalSystem),
    Copy(PhysicalSystem),
    Padded {
        padded: PaddedSystem,
        extra_q: Vec<f64>,
        extra_qdot: Vec<f64>,
    },
    /// Replays its time law and ignores forces.
    ReducedKinematic(ReducedModel),
    /// Responds to forces through its single degree of freedom.
    ReducedInteractive(ReducedModel),
}

impl Candidate {
    pub fn kind(&self) -> CandidateKind {
        match self {
            Candidate::Real(_) => CandidateKind::Real,
            Candidate::Copy(_) => CandidateKind::Copy,
            Candidate::Padded { .. } => CandidateKind::Padded,
            Candidate::ReducedKinematic(_) => CandidateKind::ReducedKinematic,
            Candidate::ReducedInteractive(_) => CandidateKind::ReducedInteractive,
        }
    }

    /// Degrees of freedom of the candidate.
    pub fn dof(&self) -> usize {
        match self {
            Candidate::Real(s) | Candidate::Copy(s) => s.n(),
            Candidate::Padded { padded, .. } => padded.m(),
            Candidate::ReducedKinematic(m) | Candidate::ReducedInteractive(m) => m.dof(),
        }
    }

    /// Observable coordinate count.
    pub fn n(&self) -> usize {
        match self {
            Candidate::Real(s) | Candidate::Copy(s) => s.n(),
            Candidate::Padded { padded, .. } => padded.n(),
            Candidate::ReducedKinematic(m) | Candidate::ReducedInteractive(m) => m.n(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Indistinguishable,
    DistinguishableNonphysical,
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Indistinguishable => "INDISTINGUISHABLE",
            Verdict::DistinguishableNonphysical => "DISTINGUISHABLE_NONPHYSICAL",
            Verdict::Inconclusive => "INCONCLUSIVE",
        })
    }
}

/// Thresholds in units of `eps_q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub pass_mult: f64,
    pub fail_mult: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            pass_mult: 2.0,
            fail_mult: 10.0,
        }
    }
}

impl Thresholds {
    pub fn verdict(&self, d_max: f64) -> Verdict {
        if d_max <= self.pass_mult {
            Verdict::Indistinguishable
        } else if d_max >= self.fail_mult {
            Verdict::DistinguishableNonphysical
        } else {
            Verdict::Inconclusive
        }
    }
}

#[derive(Debug, Clone)]
pub struct Protocol {
    pub system: PhysicalSystem,
    pub init: State,
    pub integrator: Integrator,
    pub dt: f64,
    /// Time at which the force is applied.
    pub t_f: f64,
    pub force: ExternalForce,
    pub pre_window: f64,
    pub post_window: f64,
    pub resolution: Resolution,
    pub thresholds: Thresholds,
}

impl Protocol {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DistinguisherError::Protocol(m.to_string()));
        if !(self.pre_window > 0.0) {
            return bad("pre_window must be positive");
        }
        if !(self.post_window > 0.0) {
            return bad("post_window must be positive");
        }
        if !(self.dt > 0.0) {
            return bad("dt must be positive");
        }
        if !(self.thresholds.pass_mult < self.thresholds.fail_mult) {
            return bad("pass_mult must be below fail_mult");
        }
        if self.init.t + self.pre_window > self.t_f + self.tol() {
            return bad("pre_window must end at or before t_f");
        }
        let starts = match self.force.kind {
            ForceKind::Impulse { t_imp, .. } => t_imp,
            ForceKind::Window { t_on, .. } => t_on,
        };
        if (starts - self.t_f).abs() > self.tol() {
            return bad("force must start at t_f");
        }
        Ok(())
    }

    fn tol(&self) -> f64 {
        1e-9 * self.dt
    }

    /// End of the experiment.
    pub fn t_end(&self) -> f64 {
        self.t_f + self.post_window
    }

    /// Same protocol with the force scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> Protocol {
        let mut p = self.clone();
        p.force.kind = match p.force.kind {
            ForceKind::Impulse { dp, t_imp } => ForceKind::Impulse {
                dp: dp.map(|v| v * factor),
                t_imp,
            },
            ForceKind::Window { force, t_on, t_off } => ForceKind::Window {
                force: force.map(|v| v * factor),
                t_on,
                t_off,
            },
        };
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationPoint {
    pub t: f64,
    pub d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistinguisherReport {
    pub candidate: CandidateKind,
    pub dof: usize,
    pub n: usize,
    pub pre_equal: bool,
    /// Set when the candidate failed the observation-only phase.
    pub pre_phase_failed: bool,
    /// Max-norm deviation from the Newtonian prediction, in units of eps_q.
    pub deviation: Vec<DeviationPoint>,
    pub d_max: f64,
    pub thresholds: Thresholds,
    pub resolution: Resolution,
    pub verdict: Verdict,
}

/// Necessary condition for an interactive simulation: `p >= n`.
pub fn dof_criterion(p: usize, n: usize) -> bool {
    p >= n
}

/// The observer's expectation: integrate the real physics from a measured state.
pub fn predict_newtonian(
    system: &PhysicalSystem,
    measured: &State,
    duration: f64,
    dt: f64,
    method: Integrator,
) -> Result<Trajectory> {
    Ok(simulate(&system.without_forces(), measured, duration, dt, method)?)
}

/// Velocity from two consecutive readings over one clock quantum.
pub fn two_point_velocity(q0: &[f64], q1: &[f64], eps_t: f64) -> Vec<f64> {
    q0.iter().zip(q1).map(|(a, b)| (b - a) / eps_t).collect()
}

/// Least-squares slope of the first readings, used to seed the state fit.
fn local_velocity(readings: &[(f64, Vec<f64>)]) -> Vec<f64> {
    let k = readings.len().min(21);
    let n = readings[0].1.len();
    if k < 2 {
        return vec![0.0; n];
    }
    if k < 4 {
        return two_point_velocity(&readings[0].1, &readings[1].1, readings[1].0 - readings[0].0);
    }
    // Quadratic fit q(τ) = a + bτ + cτ² around the first reading; b is the velocity.
    let t0 = readings[0].0;
    let design = DMatrix::from_fn(k, 3, |r, c| (readings[r].0 - t0).powi(c as i32));
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let y = DVector::from_fn(k, |r, _| readings[r].1[i]);
        let sol = design
            .clone()
            .svd(true, true)
            .solve(&y, 1e-14)
            .map(|v| v[1])
            .unwrap_or(0.0);
        out.push(sol);
    }
    out
}

/// Newtonian state at the first reading that best explains the readings.
///
/// Levenberg-Marquardt on the initial positions and velocities, fitted over
/// progressively longer prefixes so that a rough initial velocity does not
/// lead the orbit into a wrong basin.
pub fn estimate_state(
    system: &PhysicalSystem,
    readings: &[(f64, Vec<f64>)],
    dt: f64,
    method: Integrator,
) -> Result<State> {
    if readings.is_empty() {
        return Err(DistinguisherError::Protocol("no readings to fit".into()));
    }
    let system = system.without_forces();
    let n = system.n();
    if readings[0].1.len() != n {
        return Err(DistinguisherError::Arity {
            candidate: readings[0].1.len(),
            scenario: n,
        });
    }
    let t0 = readings[0].0;
    let mut x: Vec<f64> = readings[0].1.clone();
    x.extend(local_velocity(readings));
    if readings.len() == 1 {
        return Ok(State::new(t0, x[..n].to_vec(), x[n..].to_vec()));
    }
    let mut len = 21.min(readings.len());
    loop {
        x = levenberg_marquardt(&system, &readings[..len], x, dt, method)?;
        if len == readings.len() {
            break;
        }
        len = (len * 4).min(readings.len());
    }
    Ok(State::new(t0, x[..n].to_vec(), x[n..].to_vec()))
}

fn residuals(
    system: &PhysicalSystem,
    readings: &[(f64, Vec<f64>)],
    x: &[f64],
    dt: f64,
    method: Integrator,
) -> Result<Vec<f64>> {
    let n = system.n();
    let t0 = readings[0].0;
    let span = readings[readings.len() - 1].0 - t0;
    let traj = predict_newtonian(
        system,
        &State::new(t0, x[..n].to_vec(), x[n..].to_vec()),
        span,
        dt,
        method,
    )?;
    let mut out = Vec::with_capacity(readings.len() * n);
    for (t, q) in readings {
        let pred = sample_near(&traj, *t);
        out.extend(pred.q.iter().zip(q).map(|(p, m)| p - m));
    }
    Ok(out)
}

/// Sample of a uniformly stepped trajectory closest to `t`.
fn sample_near(traj: &Trajectory, t: f64) -> &Sample {
    let k = traj.samples.partition_point(|s| s.t < t);
    match (k.checked_sub(1), traj.samples.get(k)) {
        (Some(a), Some(b)) => {
            if (t - traj.samples[a].t).abs() <= (b.t - t).abs() {
                &traj.samples[a]
            } else {
                b
            }
        }
        (Some(a), None) => &traj.samples[a],
        (None, Some(b)) => b,
        (None, None) => unreachable!("trajectory is never empty"),
    }
}

fn levenberg_marquardt(
    system: &PhysicalSystem,
    readings: &[(f64, Vec<f64>)],
    mut x: Vec<f64>,
    dt: f64,
    method: Integrator,
) -> Result<Vec<f64>> {
    let p = x.len();
    let cost = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>();
    let mut r = residuals(system, readings, &x, dt, method)?;
    let mut c = cost(&r);
    let mut lambda = 1e-3;
    for _ in 0..50 {
        let m = r.len();
        let mut jac = DMatrix::<f64>::zeros(m, p);
        for j in 0..p {
            let h = 1e-7 * x[j].abs().max(1e-2);
            let mut xp = x.clone();
            xp[j] += h;
            let rp = residuals(system, readings, &xp, dt, method)?;
            for i in 0..m {
                jac[(i, j)] = (rp[i] - r[i]) / h;
            }
        }
        let rv = DVector::from_column_slice(&r);
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * rv;
        let mut improved = false;
        for _ in 0..12 {
            let mut a = jtj.clone();
            for d in 0..p {
                a[(d, d)] += lambda * jtj[(d, d)].max(1e-12);
            }
            let Some(step) = a.cholesky().map(|ch| ch.solve(&(-&jtr))) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            match residuals(system, readings, &trial, dt, method) {
                Ok(rt) => {
                    let ct = cost(&rt);
                    if ct < c {
                        let gain = (c - ct) / c.max(f64::MIN_POSITIVE);
                        x = trial;
                        r = rt;
                        c = ct;
                        lambda = (lambda / 10.0).max(1e-12);
                        improved = true;
                        if gain < 1e-10 {
                            return Ok(x);
                        }
                        break;
                    }
                    lambda *= 10.0;
                }
                // A trial state that collides is simply a bad step.
                Err(DistinguisherError::Dynamics(DynamicsError::Singularity { .. })) => lambda *= 10.0,
                Err(e) => return Err(e),
            }
        }
        if !improved {
            break;
        }
    }
    Ok(x)
}

/// Indices of grid samples with `t` in `[lo, hi]`.
fn window(traj: &Trajectory, lo: f64, hi: f64, tol: f64) -> Trajectory {
    Trajectory {
        samples: traj
            .samples
            .iter()
            .filter(|s| s.t >= lo - tol && s.t <= hi + tol)
            .cloned()
            .collect(),
        meta: traj.meta.clone(),
    }
}

/// Settings shared by [`run_protocol`] and live sessions.
#[derive(Debug, Clone, Copy)]
pub struct Assessment {
    pub resolution: Resolution,
    pub thresholds: Thresholds,
    pub dt: f64,
    pub integrator: Integrator,
}

/// Judge a candidate run against an unperturbed reference.
///
/// `reference` covers the observation-only phase `[t0, pre_end]`; the
/// candidate is compared with it there. From `post_start` on, the candidate's
/// readings are compared with the best Newtonian fit through them.
pub fn assess(
    system: &PhysicalSystem,
    kind: CandidateKind,
    dof: usize,
    reference: &Trajectory,
    candidate: &Trajectory,
    pre_end: f64,
    post_start: f64,
    settings: &Assessment,
) -> Result<DistinguisherReport> {
    let n = system.n();
    if candidate.n() != n {
        return Err(DistinguisherError::Arity {
            candidate: candidate.n(),
            scenario: n,
        });
    }
    let res = settings.resolution;
    let tol = 1e-9 * settings.dt;
    let t0 = candidate.first().map_or(0.0, |s| s.t);
    let pre_ref = measure(&window(reference, t0, pre_end, tol), res, None)?;
    let pre_cand = measure(&window(candidate, t0, pre_end, tol), res, None)?;
    let pre_equal = observably_equal(&pre_ref, &pre_cand)?;

    let post = window(candidate, post_start, f64::INFINITY, tol);
    let mut readings: Vec<(f64, Vec<f64>)> = Vec::with_capacity(post.len());
    for s in &post.samples {
        let q = s.q.iter().map(|&v| observer::quantize(v, res.eps_q)).collect();
        readings.push((s.t, q));
    }
    let fitted = estimate_state(system, &readings, settings.dt, settings.integrator)?;
    let span = readings.last().map_or(0.0, |r| r.0) - fitted.t;
    let prediction = predict_newtonian(system, &fitted, span, settings.dt, settings.integrator)?;
    let deviation: Vec<DeviationPoint> = readings
        .iter()
        .map(|(t, q)| {
            let pred = sample_near(&prediction, *t);
            let d = pred
                .q
                .iter()
                .zip(q)
                .map(|(p, m)| (p - m).abs())
                .fold(0.0, f64::max);
            DeviationPoint {
                t: observer::quantize(*t, res.eps_t),
                d: d / res.eps_q,
            }
        })
        .collect();
    let d_max = deviation.iter().map(|p| p.d).fold(0.0, f64::max);
    let verdict = if pre_equal {
        settings.thresholds.verdict(d_max)
    } else {
        Verdict::Inconclusive
    };
    Ok(DistinguisherReport {
        candidate: kind,
        dof,
        n,
        pre_equal,
        pre_phase_failed: !pre_equal,
        deviation,
        d_max,
        thresholds: settings.thresholds,
        resolution: res,
        verdict,
    })
}

/// Grid of sample times `t0 + k dt` up to `t_end`, ending exactly on `t_end`.
fn grid(t0: f64, t_end: f64, dt: f64) -> Vec<f64> {
    let ratio = (t_end - t0) / dt;
    let mut full = ratio.floor() as usize;
    if ratio - full as f64 > 1.0 - 1e-9 {
        full += 1;
    }
    let mut times: Vec<f64> = (0..=full).map(|k| t0 + k as f64 * dt).collect();
    if t_end - times[full] > 1e-9 * dt {
        times.push(t_end);
    } else {
        times[full] = t_end.max(times[full]);
    }
    times
}

/// Evolve a candidate through the whole protocol, force included.
pub fn candidate_run(candidate: &Candidate, protocol: &Protocol) -> Result<Trajectory> {
    let t0 = protocol.init.t;
    let duration = protocol.t_end() - t0;
    match candidate {
        Candidate::Real(sys) | Candidate::Copy(sys) => {
            let sys = sys.clone().with_force(protocol.force.clone())?;
            Ok(simulate(&sys, &protocol.init, duration, protocol.dt, protocol.integrator)?)
        }
        Candidate::Padded {
            padded,
            extra_q,
            extra_qdot,
        } => {
            let sys = padded.system().clone().with_force(protocol.force.clone())?;
            let init = padded.extend_state(&protocol.init, extra_q, extra_qdot);
            let traj = simulate(&sys, &init, duration, protocol.dt, protocol.integrator)?;
            Ok(traj.project(&padded.base_coords()))
        }
        Candidate::ReducedKinematic(model) => {
            let times = grid(t0, protocol.t_end(), protocol.dt);
            Ok(reduction::playback(model, &times)?)
        }
        Candidate::ReducedInteractive(model) => {
            let times = grid(t0, protocol.t_end(), protocol.dt);
            interactive_run(model, &times, protocol.t_f, std::slice::from_ref(&protocol.force))
        }
    }
}

/// Replay a reduced model until `t_f`, then let forces drive it.
pub fn interactive_run(
    model: &ReducedModel,
    times: &[f64],
    t_f: f64,
    forces: &[ExternalForce],
) -> Result<Trajectory> {
    let tol = 1e-9 * (times.get(1).copied().unwrap_or(1.0) - times[0]).abs().max(1e-300);
    let split = times.partition_point(|&t| t < t_f - tol);
    let mut traj = reduction::playback(model, &times[..split])?;
    traj.meta = TrajectoryMeta {
        integrator: "interactive".into(),
        ..traj.meta
    };
    if split == times.len() {
        return Ok(traj);
    }
    let mut motion = InteractiveMotion::from_playback(model, times[split])?;
    let mut applied = vec![false; forces.len()];
    let kick = |motion: &mut InteractiveMotion, t: f64, applied: &mut [bool]| -> Result<()> {
        for (k, f) in forces.iter().enumerate() {
            if let ForceKind::Impulse { t_imp, .. } = f.kind {
                if !applied[k] && t >= t_imp - tol {
                    applied[k] = true;
                    motion.apply_impulse(f)?;
                }
            }
        }
        Ok(())
    };
    kick(&mut motion, times[split], &mut applied)?;
    traj.samples.push(motion.sample()?);
    for w in times[split..].windows(2) {
        let (ta, tb) = (w[0], w[1]);
        let mut q_force = 0.0;
        for f in forces {
            if let ForceKind::Window { t_on, t_off, .. } = f.kind {
                if ta >= t_on - tol && ta < t_off - tol {
                    q_force += reduction::project_generalized_force(model, f, motion.drive().0)?;
                }
            }
        }
        motion.advance(tb - ta, q_force)?;
        motion.set_time(tb);
        kick(&mut motion, tb, &mut applied)?;
        traj.samples.push(motion.sample()?);
    }
    Ok(traj)
}

/// Run the full experiment on one candidate.
pub fn run_protocol(candidate: &Candidate, protocol: &Protocol) -> Result<DistinguisherReport> {
    protocol.validate()?;
    let n = protocol.system.n();
    if candidate.n() != n {
        return Err(DistinguisherError::Arity {
            candidate: candidate.n(),
            scenario: n,
        });
    }
    let reference = simulate(
        &protocol.system.without_forces(),
        &protocol.init,
        protocol.pre_window,
        protocol.dt,
        protocol.integrator,
    )?;
    let run = candidate_run(candidate, protocol)?;
    let settings = Assessment {
        resolution: protocol.resolution,
        thresholds: protocol.thresholds,
        dt: protocol.dt,
        integrator: protocol.integrator,
    };
    assess(
        &protocol.system,
        candidate.kind(),
        candidate.dof(),
        &reference,
        &run,
        protocol.init.t + protocol.pre_window,
        protocol.t_f,
        &settings,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dof_table() {
        assert!(!dof_criterion(1, 6));
        assert!(dof_criterion(6, 6));
        assert!(dof_criterion(9, 6));
    }

    #[test]
    fn verdict_bands() {
        let th = Thresholds::default();
        assert_eq!(th.verdict(0.4), Verdict::Indistinguishable);
        assert_eq!(th.verdict(2.0), Verdict::Indistinguishable);
        assert_eq!(th.verdict(5.0), Verdict::Inconclusive);
        assert_eq!(th.verdict(10.0), Verdict::DistinguishableNonphysical);
    }

    #[test]
    fn grid_ends_on_target() {
        let g = grid(0.0, 1.05, 0.1);
        assert_eq!(g.len(), 12);
        assert_eq!(*g.last().unwrap(), 1.05);
        let g = grid(0.0, 1.0, 0.1);
        assert_eq!(g.len(), 11);
    }

    #[test]
    fn two_point_velocity_is_a_difference_quotient() {
        assert_eq!(two_point_velocity(&[1.0, 2.0], &[1.5, 1.0], 0.5), vec![1.0, -2.0]);
    }
}
