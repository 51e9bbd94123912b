//! A resolution-limited observer with a meter and a clock.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{ExternalForce, Trajectory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObserverError {
    #[error("resolution quanta must be positive (eps_q = {eps_q}, eps_t = {eps_t})")]
    InvalidResolution { eps_q: f64, eps_t: f64 },
    #[error("series were taken with different instruments")]
    ResolutionMismatch,
    #[error("series have {a} and {b} coordinates")]
    ArityMismatch { a: usize, b: usize },
    #[error("cannot measure an empty trajectory")]
    Empty,
    #[error("coordinate {0} is out of range")]
    Coordinate(usize),
    #[error("{0} is not an integer multiple of the new quantum")]
    NotCoarser(f64),
}

pub type Result<T> = std::result::Result<T, ObserverError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    pub eps_q: f64,
    pub eps_t: f64,
}

impl Resolution {
    pub fn new(eps_q: f64, eps_t: f64) -> Result<Self> {
        if !(eps_q > 0.0 && eps_t > 0.0 && eps_q.is_finite() && eps_t.is_finite()) {
            return Err(ObserverError::InvalidResolution { eps_q, eps_t });
        }
        Ok(Resolution { eps_q, eps_t })
    }
}

/// Relative slack under which `x / eps` counts as an exact half-integer.
const TIE_SLACK: f64 = 1e-9;

/// Number of quanta nearest to `x`; halfway cases round away from zero.
pub fn quantize_count(x: f64, eps: f64) -> i64 {
    let r = x / eps;
    let lower = r.floor();
    let frac = r - lower;
    let n = if (frac - 0.5).abs() <= TIE_SLACK {
        if r >= 0.0 {
            lower + 1.0
        } else {
            lower
        }
    } else {
        r.round()
    };
    n as i64
}

/// Nearest multiple of `eps`; ties round away from zero.
pub fn quantize(x: f64, eps: f64) -> f64 {
    quantize_count(x, eps) as f64 * eps
}

/// One instrument reading: time and coordinates, in quanta.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Reading {
    pub t: i64,
    pub q: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSeries {
    resolution: Resolution,
    readings: Vec<Reading>,
    pub source: String,
}

impl MeasurementSeries {
    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn readings(&self) -> &[Reading] {
        &self.readings
    }

    pub fn len(&self) -> usize {
        self.readings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.readings.is_empty()
    }

    pub fn arity(&self) -> usize {
        self.readings.first().map_or(0, |r| r.q.len())
    }

    /// Reading `k` in physical units.
    pub fn value(&self, k: usize) -> (f64, Vec<f64>) {
        let r = &self.readings[k];
        (
            r.t as f64 * self.resolution.eps_t,
            r.q.iter().map(|&c| c as f64 * self.resolution.eps_q).collect(),
        )
    }

    pub fn values(&self) -> impl Iterator<Item = (f64, Vec<f64>)> + '_ {
        (0..self.len()).map(|k| self.value(k))
    }

    /// Re-read the series with a coarser instrument whose quanta are integer
    /// multiples of the current ones.
    pub fn coarsen(&self, q_factor: u32, t_factor: u32) -> Result<MeasurementSeries> {
        if q_factor == 0 || t_factor == 0 {
            return Err(ObserverError::NotCoarser(0.0));
        }
        let res = Resolution::new(
            self.resolution.eps_q * q_factor as f64,
            self.resolution.eps_t * t_factor as f64,
        )?;
        let rows = self.readings.iter().map(|r| Reading {
            t: requantize(r.t, t_factor),
            q: r.q.iter().map(|&c| requantize(c, q_factor)).collect(),
        });
        Ok(MeasurementSeries {
            resolution: res,
            readings: collapse(rows),
            source: self.source.clone(),
        })
    }
}

/// Integer re-quantization with the same tie rule as [`quantize`].
fn requantize(count: i64, factor: u32) -> i64 {
    let f = factor as i64;
    let twice = 2 * count;
    // round(count / f), halves away from zero, in exact integer arithmetic
    if twice >= 0 {
        (twice + f) / (2 * f)
    } else {
        -((-twice + f) / (2 * f))
    }
}

fn collapse(rows: impl Iterator<Item = Reading>) -> Vec<Reading> {
    let mut out: Vec<Reading> = Vec::new();
    for r in rows {
        if out.last() != Some(&r) {
            out.push(r);
        }
    }
    out
}

/// Quantize every sample of a trajectory, optionally restricted to `coords`.
pub fn measure(traj: &Trajectory, res: Resolution, coords: Option<&[usize]>) -> Result<MeasurementSeries> {
    if traj.is_empty() {
        return Err(ObserverError::Empty);
    }
    let n = traj.n();
    let picked: Vec<usize> = match coords {
        Some(c) => {
            if let Some(&bad) = c.iter().find(|&&i| i >= n) {
                return Err(ObserverError::Coordinate(bad));
            }
            c.to_vec()
        }
        None => (0..n).collect(),
    };
    let rows = traj.samples.iter().map(|s| Reading {
        t: quantize_count(s.t, res.eps_t),
        q: picked.iter().map(|&i| quantize_count(s.q[i], res.eps_q)).collect(),
    });
    Ok(MeasurementSeries {
        resolution: res,
        readings: collapse(rows),
        source: traj.meta.system.clone(),
    })
}

/// True iff both collapsed series are identical reading for reading.
pub fn observably_equal(a: &MeasurementSeries, b: &MeasurementSeries) -> Result<bool> {
    if a.resolution != b.resolution {
        return Err(ObserverError::ResolutionMismatch);
    }
    if a.arity() != b.arity() {
        return Err(ObserverError::ArityMismatch {
            a: a.arity(),
            b: b.arity(),
        });
    }
    Ok(a.readings == b.readings)
}

/// An impulse the observer delivers to a body.
pub fn make_impulse(target: &str, dp: [f64; 3], t_imp: f64) -> ExternalForce {
    ExternalForce::impulse(target, dp, t_imp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{simulate, Integrator, Sample, TrajectoryMeta};
    use crate::scenario::{moon_period, paper_sem, paper_sem_init};
    use proptest::prelude::*;

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize(0.0, 0.001), 0.0);
        assert_eq!(quantize(0.0015, 0.001), 0.002);
        assert_eq!(quantize(-0.0015, 0.001), -0.002);
        assert_eq!(quantize_count(2.5, 1.0), 3);
        assert_eq!(quantize_count(-2.5, 1.0), -3);
        assert_eq!(quantize_count(2.4, 1.0), 2);
    }

    #[test]
    fn invalid_resolution() {
        assert!(Resolution::new(0.0, 1.0).is_err());
        assert!(Resolution::new(1.0, -1.0).is_err());
    }

    fn line(points: &[(f64, f64)]) -> Trajectory {
        Trajectory {
            samples: points
                .iter()
                .map(|&(t, x)| Sample {
                    t,
                    q: vec![x],
                    qdot: vec![0.0],
                })
                .collect(),
            meta: TrajectoryMeta::default(),
        }
    }

    #[test]
    fn coarse_meter_sees_a_single_position() {
        let traj = line(&[(0.0, 0.01), (0.5, 0.02), (1.0, -0.03)]);
        let res = Resolution::new(1.0, 10.0).unwrap();
        let m = measure(&traj, res, None).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.readings()[0], Reading { t: 0, q: vec![0] });
    }

    #[test]
    fn measurement_is_idempotent() {
        let traj = line(&[(0.0, 0.0104), (0.5, 0.0207), (1.0, -0.0311)]);
        let res = Resolution::new(0.01, 0.5).unwrap();
        let once = measure(&traj, res, None).unwrap();
        let as_traj = line(&once.values().map(|(t, q)| (t, q[0])).collect::<Vec<_>>());
        let twice = measure(&as_traj, res, None).unwrap();
        assert_eq!(once.readings(), twice.readings());
    }

    #[test]
    fn earth_radius_reads_one() {
        let tm = moon_period();
        let traj = simulate(&paper_sem(), &paper_sem_init(), 3.0 * tm, tm / 1000.0, Integrator::Rk4).unwrap();
        let res = Resolution::new(1e-3, tm / 1000.0).unwrap();
        let m = measure(&traj, res, Some(&[0, 1, 2])).unwrap();
        for (_, q) in m.values() {
            let r = (q[0] * q[0] + q[1] * q[1]).sqrt();
            // Both components carry at most eps/2 of rounding.
            assert!((r - 1.0).abs() <= 1e-3);
            assert_eq!(q[2], 0.0);
        }
        // The true radius is constant far below the quantum.
        for s in &traj.samples {
            let r = (s.q[0].powi(2) + s.q[1].powi(2)).sqrt();
            assert_eq!(quantize(r, 1e-3), 1.0);
        }
    }

    #[test]
    fn comparison_needs_same_instrument_and_arity() {
        let traj = line(&[(0.0, 0.0), (1.0, 1.0)]);
        let a = measure(&traj, Resolution::new(0.1, 0.1).unwrap(), None).unwrap();
        let b = measure(&traj, Resolution::new(0.2, 0.1).unwrap(), None).unwrap();
        assert_eq!(observably_equal(&a, &b).unwrap_err(), ObserverError::ResolutionMismatch);
        assert!(observably_equal(&a, &a).unwrap());
        assert!(measure(&traj, Resolution::new(0.1, 0.1).unwrap(), Some(&[3])).is_err());
    }

    #[test]
    fn zero_impulse_changes_nothing() {
        let f = make_impulse("Moon", [0.0; 3], 0.5);
        let sys = paper_sem().with_force(f).unwrap();
        let a = simulate(&paper_sem(), &paper_sem_init(), 1.0, 0.01, Integrator::Rk4).unwrap();
        let b = simulate(&sys, &paper_sem_init(), 1.0, 0.01, Integrator::Rk4).unwrap();
        assert_eq!(a.samples, b.samples);
    }

    proptest! {
        #[test]
        fn quantization_error_is_bounded(x in -1e3f64..1e3, e in 1e-6f64..10.0) {
            prop_assert!((quantize(x, e) - x).abs() <= e / 2.0 * (1.0 + 1e-9));
        }

        #[test]
        fn equality_is_symmetric_and_survives_coarsening(
            xs in prop::collection::vec(-5.0f64..5.0, 1..40),
            noise in prop::collection::vec(-1e-3f64..1e-3, 40),
            factor in 1u32..6,
        ) {
            let pts: Vec<(f64, f64)> = xs.iter().enumerate().map(|(k, &x)| (k as f64, x)).collect();
            let noisy: Vec<(f64, f64)> = pts.iter().zip(&noise).map(|(&(t, x), n)| (t, x + n)).collect();
            let res = Resolution::new(0.1, 1.0).unwrap();
            let a = measure(&line(&pts), res, None).unwrap();
            let b = measure(&line(&noisy), res, None).unwrap();
            let eq = observably_equal(&a, &b).unwrap();
            prop_assert_eq!(eq, observably_equal(&b, &a).unwrap());
            if eq {
                let ca = a.coarsen(factor, 1).unwrap();
                let cb = b.coarsen(factor, 1).unwrap();
                prop_assert!(observably_equal(&ca, &cb).unwrap());
            }
        }
    }
}
