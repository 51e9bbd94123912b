//! Piecewise cubic Hermite interpolation.
//!
//! Knots carry both values and slopes. [`CubicHermite::monotone`] applies
//! Fritsch-Carlson limiting so that monotone data yields a monotone curve.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InterpError {
    #[error("need at least 2 knots, got {0}")]
    TooFewKnots(usize),
    #[error("knot abscissae must be strictly increasing (at knot {0})")]
    NotIncreasing(usize),
    #[error("knot arrays have mismatched lengths")]
    Length,
    #[error("{x} outside interpolation range [{lo}, {hi}]")]
    OutOfRange { x: f64, lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubicHermite {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl CubicHermite {
    pub fn new(x: Vec<f64>, y: Vec<f64>, m: Vec<f64>) -> Result<Self, InterpError> {
        if x.len() != y.len() || x.len() != m.len() {
            return Err(InterpError::Length);
        }
        if x.len() < 2 {
            return Err(InterpError::TooFewKnots(x.len()));
        }
        if let Some(k) = (1..x.len()).find(|&k| !(x[k] > x[k - 1])) {
            return Err(InterpError::NotIncreasing(k));
        }
        Ok(CubicHermite { x, y, m })
    }

    /// Hermite interpolant whose slopes are limited (Fritsch-Carlson) so that
    /// the curve is monotone on every interval where the data is.
    pub fn monotone(x: Vec<f64>, y: Vec<f64>, m: Vec<f64>) -> Result<Self, InterpError> {
        let mut h = CubicHermite::new(x, y, m)?;
        h.limit_slopes();
        Ok(h)
    }

    /// PCHIP: slopes from weighted harmonic means of the secants, then limited.
    pub fn pchip(x: Vec<f64>, y: Vec<f64>) -> Result<Self, InterpError> {
        if x.len() != y.len() {
            return Err(InterpError::Length);
        }
        if x.len() < 2 {
            return Err(InterpError::TooFewKnots(x.len()));
        }
        let n = x.len();
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        if let Some(k) = h.iter().position(|&d| !(d > 0.0)) {
            return Err(InterpError::NotIncreasing(k + 1));
        }
        let delta: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
        let mut m = vec![0.0; n];
        if n == 2 {
            m.fill(delta[0]);
        } else {
            for k in 1..n - 1 {
                let (d0, d1) = (delta[k - 1], delta[k]);
                if d0 * d1 > 0.0 {
                    let w1 = 2.0 * h[k] + h[k - 1];
                    let w2 = h[k] + 2.0 * h[k - 1];
                    m[k] = (w1 + w2) / (w1 / d0 + w2 / d1);
                }
            }
            m[0] = end_slope(h[0], h[1], delta[0], delta[1]);
            m[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        }
        CubicHermite::monotone(x, y, m)
    }

    fn limit_slopes(&mut self) {
        let n = self.x.len();
        for k in 0..n - 1 {
            let delta = (self.y[k + 1] - self.y[k]) / (self.x[k + 1] - self.x[k]);
            if delta == 0.0 {
                self.m[k] = 0.0;
                self.m[k + 1] = 0.0;
                continue;
            }
            // Slopes pointing against the secant break monotonicity outright.
            if self.m[k] * delta < 0.0 {
                self.m[k] = 0.0;
            }
            if self.m[k + 1] * delta < 0.0 {
                self.m[k + 1] = 0.0;
            }
            let a = self.m[k] / delta;
            let b = self.m[k + 1] / delta;
            let s = a * a + b * b;
            if s > 9.0 {
                let tau = 3.0 / s.sqrt();
                self.m[k] = tau * a * delta;
                self.m[k + 1] = tau * b * delta;
            }
        }
    }

    pub fn knots(&self) -> &[f64] {
        &self.x
    }

    pub fn values(&self) -> &[f64] {
        &self.y
    }

    pub fn slopes(&self) -> &[f64] {
        &self.m
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.x[0], self.x[self.x.len() - 1])
    }

    fn segment(&self, x: f64) -> Result<usize, InterpError> {
        let (lo, hi) = self.domain();
        if !(x >= lo && x <= hi) {
            return Err(InterpError::OutOfRange { x, lo, hi });
        }
        // Segment k covers [x_k, x_{k+1}); the last knot belongs to the last segment.
        let k = self.x.partition_point(|&v| v <= x);
        Ok(k.saturating_sub(1).min(self.x.len() - 2))
    }

    /// Value at `x`. Exact at every knot.
    pub fn eval(&self, x: f64) -> Result<f64, InterpError> {
        let k = self.segment(x)?;
        let h = self.x[k + 1] - self.x[k];
        let t = (x - self.x[k]) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        Ok(h00 * self.y[k] + h10 * h * self.m[k] + h01 * self.y[k + 1] + h11 * h * self.m[k + 1])
    }

    /// First derivative at `x`.
    pub fn derivative(&self, x: f64) -> Result<f64, InterpError> {
        let k = self.segment(x)?;
        let h = self.x[k + 1] - self.x[k];
        let t = (x - self.x[k]) / h;
        let t2 = t * t;
        let d00 = (6.0 * t2 - 6.0 * t) / h;
        let d10 = 3.0 * t2 - 4.0 * t + 1.0;
        let d01 = (-6.0 * t2 + 6.0 * t) / h;
        let d11 = 3.0 * t2 - 2.0 * t;
        Ok(d00 * self.y[k] + d10 * self.m[k] + d01 * self.y[k + 1] + d11 * self.m[k + 1])
    }
}

fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let m = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if m * d0 <= 0.0 {
        0.0
    } else if d0 * d1 < 0.0 && m.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reproduces_knots_exactly() {
        let x = vec![0.0, 0.3, 1.1, 2.0];
        let y = vec![1.0, -2.0, 0.5, 7.25];
        let h = CubicHermite::new(x.clone(), y.clone(), vec![0.1, 2.0, -3.0, 1.0]).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            assert_eq!(h.eval(*xi).unwrap(), *yi);
        }
    }

    #[test]
    fn cubic_is_reproduced_with_exact_slopes() {
        let f = |x: f64| x * x * x - 2.0 * x;
        let df = |x: f64| 3.0 * x * x - 2.0;
        let x: Vec<f64> = (0..5).map(|k| k as f64 * 0.5).collect();
        let h = CubicHermite::new(
            x.clone(),
            x.iter().map(|&v| f(v)).collect(),
            x.iter().map(|&v| df(v)).collect(),
        )
        .unwrap();
        for k in 0..40 {
            let v = k as f64 * 0.05;
            assert!((h.eval(v).unwrap() - f(v)).abs() < 1e-12);
            assert!((h.derivative(v).unwrap() - df(v)).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_bad_knots_and_extrapolation() {
        assert_eq!(
            CubicHermite::new(vec![0.0], vec![0.0], vec![0.0]).unwrap_err(),
            InterpError::TooFewKnots(1)
        );
        assert_eq!(
            CubicHermite::new(vec![0.0, 0.0], vec![0.0; 2], vec![0.0; 2]).unwrap_err(),
            InterpError::NotIncreasing(1)
        );
        let h = CubicHermite::pchip(vec![0.0, 1.0], vec![0.0, 1.0]).unwrap();
        assert!(h.eval(1.5).is_err());
        assert!(h.eval(-0.1).is_err());
    }

    #[test]
    fn limiting_removes_overshoot() {
        // Slopes far too steep would overshoot the step.
        let h = CubicHermite::monotone(
            vec![0.0, 1.0, 2.0],
            vec![0.0, 1.0, 1.1],
            vec![10.0, 10.0, 10.0],
        )
        .unwrap();
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=200 {
            let v = h.eval(k as f64 * 0.01).unwrap();
            assert!(v >= prev);
            prev = v;
        }
        assert!(prev <= 1.1);
    }

    proptest! {
        #[test]
        fn pchip_preserves_monotone_data(steps in prop::collection::vec((0.01f64..2.0, 0.0f64..3.0), 2..30)) {
            let mut x = vec![0.0];
            let mut y = vec![0.0];
            for (dx, dy) in &steps {
                x.push(x.last().unwrap() + dx);
                y.push(y.last().unwrap() + dy);
            }
            let h = CubicHermite::pchip(x.clone(), y).unwrap();
            let (lo, hi) = h.domain();
            let mut prev = f64::NEG_INFINITY;
            for k in 0..=500 {
                let v = h.eval((lo + (hi - lo) * k as f64 / 500.0).min(hi)).unwrap();
                prop_assert!(v >= prev - 1e-12);
                prev = v;
            }
        }
    }
}
