//! Dormand-Prince 5(4) with step-size control and 4th-order dense output.
//!
//! Only autonomous systems are needed here. Integration may run backwards
//! (`t1 < t0`). A state where the field vanishes is an equilibrium and is
//! returned unchanged, which makes identity-off-support bit exact.

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Upper bound on `|h|`.
    pub max_step: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self { rtol: 1e-10, atol: 1e-10, max_step: f64::INFINITY, max_steps: 1_000_000 }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError<const N: usize> {
    #[error("step size underflow at t={t}")]
    StepUnderflow { t: f64, y: [f64; N] },
    #[error("step budget exhausted at t={t}")]
    TooManySteps { t: f64, y: [f64; N] },
    #[error("non-finite state at t={t}")]
    NonFinite { t: f64, y: [f64; N] },
}

impl<const N: usize> OdeError<N> {
    pub fn last_good(&self) -> (f64, [f64; N]) {
        match *self {
            OdeError::StepUnderflow { t, y }
            | OdeError::TooManySteps { t, y }
            | OdeError::NonFinite { t, y } => (t, y),
        }
    }
}

/// One accepted step with its interpolation coefficients.
#[derive(Debug, Clone, Copy)]
pub struct DenseStep<const N: usize> {
    pub t: f64,
    pub h: f64,
    cont: [[f64; N]; 5],
}

impl<const N: usize> DenseStep<N> {
    pub fn eval(&self, t: f64) -> [f64; N] {
        let s = (t - self.t) / self.h;
        let s1 = 1.0 - s;
        let c = &self.cont;
        std::array::from_fn(|i| c[0][i] + s * (c[1][i] + s1 * (c[2][i] + s * (c[3][i] + s1 * c[4][i]))))
    }
}

#[derive(Debug, Clone)]
pub struct Solution<const N: usize> {
    pub t0: f64,
    pub t1: f64,
    pub y0: [f64; N],
    pub y1: [f64; N],
    pub accepted: usize,
    pub rejected: usize,
    /// Empty unless dense output was requested.
    pub steps: Vec<DenseStep<N>>,
}

impl<const N: usize> Solution<N> {
    /// Dense evaluation anywhere in `[t0, t1]` (either orientation).
    pub fn eval(&self, t: f64) -> [f64; N] {
        if self.steps.is_empty() {
            return if t == self.t0 { self.y0 } else { self.y1 };
        }
        let forward = self.t1 >= self.t0;
        // Steps are ordered along the integration direction.
        let idx = self.steps.partition_point(|s| {
            let end = s.t + s.h;
            if forward { end < t } else { end > t }
        });
        let s = &self.steps[idx.min(self.steps.len() - 1)];
        s.eval(t)
    }
}

// Dormand-Prince tableau. The fields are autonomous, so the nodes c_i are not needed.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

#[inline]
fn axpy<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    std::array::from_fn(|i| y[i] + h * terms.iter().map(|(c, k)| c * k[i]).sum::<f64>())
}

#[inline]
fn err_norm<const N: usize>(v: &[f64; N], y: &[f64; N], y2: &[f64; N], o: &OdeOptions) -> f64 {
    let mut s = 0.0;
    for i in 0..N {
        let sk = o.atol + o.rtol * y[i].abs().max(y2[i].abs());
        s += (v[i] / sk).powi(2);
    }
    (s / N as f64).sqrt()
}

fn initial_step<const N: usize, F>(f: &F, y0: &[f64; N], f0: &[f64; N], dir: f64, span: f64, o: &OdeOptions) -> f64
where
    F: Fn(&[f64; N]) -> [f64; N],
{
    let zero = [0.0; N];
    let d0 = err_norm(y0, y0, &zero, o);
    let d1 = err_norm(f0, y0, &zero, o);
    let mut h0 = if d0 < 1e-10 || d1 < 1e-10 { 1e-6 } else { 0.01 * d0 / d1 };
    h0 = h0.min(o.max_step).min(span);
    let y1 = axpy(y0, dir * h0, &[(1.0, f0)]);
    let f1 = f(&y1);
    let diff: [f64; N] = std::array::from_fn(|i| f1[i] - f0[i]);
    let d2 = err_norm(&diff, y0, &zero, o) / h0;
    let dm = d1.max(d2);
    let h1 = if dm <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / dm).powf(0.2) };
    (100.0 * h0).min(h1).min(o.max_step).min(span)
}

/// Integrate `y' = f(y)` from `t0` to `t1`.
pub fn solve<const N: usize, F>(
    f: F,
    t0: f64,
    y0: [f64; N],
    t1: f64,
    o: &OdeOptions,
    dense: bool,
) -> Result<Solution<N>, OdeError<N>>
where
    F: Fn(&[f64; N]) -> [f64; N],
{
    let mut sol = Solution { t0, t1, y0, y1: y0, accepted: 0, rejected: 0, steps: Vec::new() };
    if t0 == t1 {
        return Ok(sol);
    }
    let mut k1 = f(&y0);
    if k1.iter().all(|&c| c == 0.0) {
        // Equilibrium: the exact solution is constant.
        return Ok(sol);
    }
    let dir = if t1 > t0 { 1.0 } else { -1.0 };
    let span = (t1 - t0).abs();
    let mut h = initial_step(&f, &y0, &k1, dir, span, o);
    let mut t = t0;
    let mut y = y0;
    let mut fac_old: f64 = 1e-4;
    let mut last_rejected = false;
    let mut nsteps = 0;
    loop {
        if nsteps >= o.max_steps {
            return Err(OdeError::TooManySteps { t, y });
        }
        nsteps += 1;
        let remaining = (t1 - t) * dir;
        let last = h >= remaining;
        if last {
            h = remaining;
        }
        let hs = dir * h;
        if h.abs() <= 1e-14 * t.abs().max(1.0) {
            return Err(OdeError::StepUnderflow { t, y });
        }
        let k2 = f(&axpy(&y, hs, &[(A21, &k1)]));
        let k3 = f(&axpy(&y, hs, &[(A31, &k1), (A32, &k2)]));
        let k4 = f(&axpy(&y, hs, &[(A41, &k1), (A42, &k2), (A43, &k3)]));
        let k5 = f(&axpy(&y, hs, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]));
        let k6 = f(&axpy(&y, hs, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]));
        let ynew = axpy(&y, hs, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
        let k7 = f(&ynew);
        let errv: [f64; N] = std::array::from_fn(|i| {
            hs * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i])
        });
        let err = err_norm(&errv, &y, &ynew, o);
        if !err.is_finite() || ynew.iter().any(|c| !c.is_finite()) {
            if h < 1e-12 {
                return Err(OdeError::NonFinite { t, y });
            }
            h *= 0.1;
            last_rejected = true;
            sol.rejected += 1;
            continue;
        }
        // PI step-size controller (Hairer, beta = 0.04).
        let fac11 = err.powf(0.2 - 0.04 * 0.75);
        let mut fac = fac11 / fac_old.powf(0.04);
        fac = (fac / 0.9).clamp(0.1, 5.0);
        let hnew = h / fac;
        if err <= 1.0 {
            fac_old = err.max(1e-4);
            if dense {
                let ydiff: [f64; N] = std::array::from_fn(|i| ynew[i] - y[i]);
                let bspl: [f64; N] = std::array::from_fn(|i| hs * k1[i] - ydiff[i]);
                let c3: [f64; N] = std::array::from_fn(|i| ydiff[i] - hs * k7[i] - bspl[i]);
                let c4: [f64; N] = std::array::from_fn(|i| {
                    hs * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i])
                });
                sol.steps.push(DenseStep { t, h: hs, cont: [y, ydiff, bspl, c3, c4] });
            }
            sol.accepted += 1;
            k1 = k7;
            y = ynew;
            t = if last { t1 } else { t + hs };
            if last {
                sol.y1 = y;
                return Ok(sol);
            }
            h = if last_rejected { hnew.min(h) } else { hnew };
            h = h.min(o.max_step);
            last_rejected = false;
        } else {
            h /= (fac11 / 0.9).min(5.0);
            last_rejected = true;
            sol.rejected += 1;
        }
    }
}
