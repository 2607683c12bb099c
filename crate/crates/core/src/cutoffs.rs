//! Smooth cutoff profiles with exact plateaus and the linear-middle ramp.
//!
//! Every profile is built from the canonical transition
//! `h(t) = s(t) / (s(t) + s(1-t))` with `s(t) = exp(-1/t)` for `t > 0`.
//! Evaluation branches on interval membership before touching `h`, so zero
//! regions and plateaus come out as exact `0.0` and `1.0`.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CutoffError {
    #[error("breakpoints must satisfy t0 < t1 <= t2 < t3, got ({0}, {1}, {2}, {3})")]
    Unordered(f64, f64, f64, f64),
    #[error("ramp needs 0 < 2*nu < delta, got delta={delta}, nu={nu}")]
    BadRamp { delta: f64, nu: f64 },
}

/// Exponent `1/t - 1/(1-t)` of the transition, valid on `(0, 1)`.
#[inline]
fn exponent(t: f64) -> f64 {
    1.0 / t - 1.0 / (1.0 - t)
}

/// The canonical C-infinity transition: 0 for `t <= 0`, 1 for `t >= 1`.
#[inline]
pub fn transition(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        1.0 / (1.0 + exponent(t).exp())
    }
}

/// Derivative of [`transition`].
#[inline]
pub fn transition_deriv(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        return 0.0;
    }
    let q = exponent(t);
    // h' = h (1 - h) q'(t) with -q' = 1/t^2 + 1/(1-t)^2; guard the overflow
    // of exp(q) near the ends where h' underflows to zero anyway.
    if q.abs() > 700.0 {
        return 0.0;
    }
    let h = 1.0 / (1.0 + q.exp());
    let s = 1.0 - t;
    h * (1.0 - h) * (1.0 / (t * t) + 1.0 / (s * s))
}

/// Common interface of the scalar profiles.
pub trait Cutoff: Send + Sync {
    fn eval(&self, t: f64) -> f64;
    fn deriv(&self, t: f64) -> f64;
    /// Closed interval outside of which `eval` is exactly zero (may be unbounded).
    fn support(&self) -> (f64, f64);
}

/// Zero outside `[t0, t3]`, one on `[t1, t2]`, monotone ramps in between.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateauCutoff {
    pub t0: f64,
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
}

pub fn make_plateau_cutoff(t0: f64, t1: f64, t2: f64, t3: f64) -> Result<PlateauCutoff, CutoffError> {
    PlateauCutoff::new(t0, t1, t2, t3)
}

impl PlateauCutoff {
    pub fn new(t0: f64, t1: f64, t2: f64, t3: f64) -> Result<Self, CutoffError> {
        let ordered = t0 < t1 && t1 <= t2 && t2 < t3;
        if !ordered || ![t0, t1, t2, t3].iter().all(|t| t.is_finite()) {
            return Err(CutoffError::Unordered(t0, t1, t2, t3));
        }
        Ok(Self { t0, t1, t2, t3 })
    }
}

impl Cutoff for PlateauCutoff {
    #[inline]
    fn eval(&self, t: f64) -> f64 {
        if t <= self.t0 || t >= self.t3 {
            0.0
        } else if t >= self.t1 && t <= self.t2 {
            1.0
        } else if t < self.t1 {
            transition((t - self.t0) / (self.t1 - self.t0))
        } else {
            transition((self.t3 - t) / (self.t3 - self.t2))
        }
    }

    #[inline]
    fn deriv(&self, t: f64) -> f64 {
        if t <= self.t0 || t >= self.t3 || (t >= self.t1 && t <= self.t2) {
            0.0
        } else if t < self.t1 {
            let w = self.t1 - self.t0;
            transition_deriv((t - self.t0) / w) / w
        } else {
            let w = self.t3 - self.t2;
            -transition_deriv((self.t3 - t) / w) / w
        }
    }

    fn support(&self) -> (f64, f64) {
        (self.t0, self.t3)
    }
}

/// Zero below `y_check`, one above `y_check + delta`, and exactly
/// `(t - y_check) / delta` on `[y_check + nu, y_check + delta - nu]`.
///
/// On the two margins of width `nu` the linear function is blended into the
/// constants with the transition, which keeps the profile smooth and monotone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RampCutoff {
    pub y_check: f64,
    pub delta: f64,
    pub nu: f64,
}

pub fn make_ramp_cutoff(y_check: f64, delta: f64, nu: f64) -> Result<RampCutoff, CutoffError> {
    RampCutoff::new(y_check, delta, nu)
}

impl RampCutoff {
    pub fn new(y_check: f64, delta: f64, nu: f64) -> Result<Self, CutoffError> {
        if !(nu > 0.0 && 2.0 * nu < delta && y_check.is_finite()) {
            return Err(CutoffError::BadRamp { delta, nu });
        }
        Ok(Self { y_check, delta, nu })
    }

    #[inline]
    fn linear(&self, t: f64) -> f64 {
        (t - self.y_check) / self.delta
    }
}

impl Cutoff for RampCutoff {
    #[inline]
    fn eval(&self, t: f64) -> f64 {
        let (a, b) = (self.y_check, self.y_check + self.delta);
        if t <= a {
            0.0
        } else if t >= b {
            1.0
        } else if t >= a + self.nu && t <= b - self.nu {
            self.linear(t)
        } else if t < a + self.nu {
            transition((t - a) / self.nu) * self.linear(t)
        } else {
            1.0 - transition((b - t) / self.nu) * (1.0 - self.linear(t))
        }
    }

    #[inline]
    fn deriv(&self, t: f64) -> f64 {
        let (a, b) = (self.y_check, self.y_check + self.delta);
        if t <= a || t >= b {
            0.0
        } else if t >= a + self.nu && t <= b - self.nu {
            1.0 / self.delta
        } else if t < a + self.nu {
            let s = (t - a) / self.nu;
            transition_deriv(s) / self.nu * self.linear(t) + transition(s) / self.delta
        } else {
            let s = (b - t) / self.nu;
            transition_deriv(s) / self.nu * (1.0 - self.linear(t)) + transition(s) / self.delta
        }
    }

    fn support(&self) -> (f64, f64) {
        (self.y_check, f64::INFINITY)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn quad(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        // composite Simpson
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn transition_endpoints_and_symmetry() {
        assert_eq!(transition(0.0), 0.0);
        assert_eq!(transition(-3.0), 0.0);
        assert_eq!(transition(1.0), 1.0);
        assert_eq!(transition(0.5), 0.5);
        for i in 1..100 {
            let t = i as f64 / 100.0;
            assert!((transition(t) + transition(1.0 - t) - 1.0).abs() < 1e-15);
            // Strictly increasing until 1 - h drops below f64 resolution.
            if t < 0.95 {
                assert!(transition(t) > transition(t - 0.01));
            } else {
                assert!(transition(t) >= transition(t - 0.01));
            }
        }
    }

    #[test]
    fn transition_is_integral_of_its_derivative() {
        for &t in &[0.1, 0.3, 0.5, 0.77, 0.95] {
            let q = quad(transition_deriv, 0.0, t, 4000);
            assert!((q - transition(t)).abs() < 1e-9, "t={t}: {q} vs {}", transition(t));
        }
    }

    #[test]
    fn f1_for_k2() {
        let eps = PI / 2.0;
        let d = eps / 8.0;
        let f1 = make_plateau_cutoff(d, 2.0 * d, eps - 2.0 * d, eps - d).unwrap();
        assert_eq!(f1.eval(PI / 8.0), 1.0);
        assert_eq!(f1.eval(0.0), 0.0);
        assert_eq!(f1.eval((f1.t1 + f1.t2) / 2.0), 1.0);
        let mid = f1.eval((f1.t0 + f1.t1) / 2.0);
        assert_eq!(mid, transition(0.5));
        let q = quad(|t| f1.deriv(t), f1.t0, (f1.t0 + f1.t1) / 2.0, 2000);
        assert!((q - mid).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_breakpoints() {
        assert!(make_plateau_cutoff(1.0, 0.5, 2.0, 3.0).is_err());
        assert!(make_plateau_cutoff(0.0, 1.0, 1.0, 1.0).is_err());
        assert!(make_plateau_cutoff(0.0, 1.0, 1.0, 2.0).is_ok());
        assert!(make_ramp_cutoff(1.0, 0.1, 0.05).is_err());
        assert!(make_ramp_cutoff(1.0, 0.1, 0.0).is_err());
    }

    #[test]
    fn ramp_k2_examples() {
        let eps = PI / 2.0;
        let d = eps / 8.0;
        let nu = d / 8.0;
        let yc = 1.0 + d;
        assert!((yc - 1.196350).abs() < 1e-6);
        let g4 = make_ramp_cutoff(yc, d, nu).unwrap();
        assert_eq!(g4.eval(yc), 0.0);
        assert_eq!(g4.eval(yc + d), 1.0);
        assert!((g4.eval(yc + d / 2.0) - 0.5).abs() < 1e-15);
        assert!((g4.eval(yc + nu) - 0.125).abs() < 1e-15);
        assert!((g4.deriv(yc + d / 2.0) - 1.0 / d).abs() < 1e-12);
    }

    #[test]
    fn ramp_linear_segment_is_exact_and_monotone() {
        let g4 = make_ramp_cutoff(1.3, 0.05, 0.004).unwrap();
        for i in 0..=100 {
            let t = g4.y_check + g4.nu + (g4.delta - 2.0 * g4.nu) * i as f64 / 100.0;
            assert_eq!(g4.eval(t), (t - g4.y_check) / g4.delta);
        }
        let mut prev = 0.0;
        for i in 0..=5000 {
            let t = 1.29 + 0.07 * i as f64 / 5000.0;
            let v = g4.eval(t);
            assert!(v >= prev && (0.0..=1.0).contains(&v));
            assert!(g4.deriv(t) >= 0.0);
            prev = v;
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let cs: Vec<Box<dyn Cutoff>> = vec![
            Box::new(make_plateau_cutoff(0.1, 0.2, 0.7, 0.8).unwrap()),
            Box::new(make_plateau_cutoff(0.0, 0.05, 0.95, 1.0).unwrap()),
            Box::new(make_ramp_cutoff(1.2, 0.1, 0.01).unwrap()),
        ];
        let step = 1e-6;
        for c in &cs {
            let (a, b) = c.support();
            let b = if b.is_finite() { b } else { a + 0.2 };
            for i in 0..1000 {
                let t = a + (b - a) * (i as f64 + 0.37) / 1000.0;
                let fd = (c.eval(t + step) - c.eval(t - step)) / (2.0 * step);
                let d = c.deriv(t);
                let err = (fd - d).abs();
                assert!(err <= 1e-5 * d.abs().max(1.0), "t={t} fd={fd} d={d}");
            }
        }
    }

    #[test]
    fn zero_outside_support_is_bitwise() {
        let c = make_plateau_cutoff(0.1, 0.2, 0.7, 0.8).unwrap();
        for &t in &[0.1, 0.0999999, -5.0, 0.8, 0.80001, 9.0] {
            assert_eq!(c.eval(t).to_bits(), 0.0f64.to_bits());
            assert_eq!(c.deriv(t), 0.0);
        }
    }
}
