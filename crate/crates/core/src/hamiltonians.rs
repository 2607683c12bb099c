//! The Hamiltonians of both constructions with analytic gradients.
//!
//! All of them have product form `H = A(u, v) * B(x, y)`. With
//! `omega = du^dv + dx^dy` the field is `X_H = (H_v, -H_u, H_y, -H_x)`, so both
//! factors are conserved along the flow. [`crate::flow`] uses that for a
//! second, independent route to every time-1 map.
//!
//! The section4 block Hamiltonians `F` and `G_i` live in the local coordinates of
//! the base cell `R x I`; [`crate::flow::Section4Map`] translates points there.

use crate::cutoffs::{Cutoff, PlateauCutoff, RampCutoff};
use crate::geometry::{GeometryError, ScaleParams};
use serde::{Deserialize, Serialize};

pub type PhasePoint = [f64; 4];

/// Axis-aligned box in `R^4`; unbounded sides are infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportBox {
    pub lo: [f64; 4],
    pub hi: [f64; 4],
}

impl SupportBox {
    pub fn contains(&self, z: &PhasePoint) -> bool {
        (0..4).all(|d| self.lo[d] <= z[d] && z[d] <= self.hi[d])
    }
}

pub trait Hamiltonian: Send + Sync {
    fn eval(&self, z: &PhasePoint) -> f64;
    /// `(dH/du, dH/dv, dH/dx, dH/dy)`
    fn grad(&self, z: &PhasePoint) -> [f64; 4];
    fn support(&self) -> SupportBox;
    /// Analytic upper bound for `sup H - inf H`, when one is claimed.
    fn energy_bound(&self) -> Option<f64>;
}

/// `H = A(u, v) B(x, y)`.
pub trait ProductHamiltonian: Hamiltonian {
    /// `(A, A_u, A_v)`
    fn a_part(&self, u: f64, v: f64) -> (f64, f64, f64);
    /// `(B, B_x, B_y)`
    fn b_part(&self, x: f64, y: f64) -> (f64, f64, f64);
    /// True when `B` does not depend on `y`, so the `(x, y)` flow is a shear.
    fn b_is_x_only(&self) -> bool;
}

#[inline]
pub fn vector_field(h: &(impl Hamiltonian + ?Sized), z: &PhasePoint) -> [f64; 4] {
    let g = h.grad(z);
    [g[1], -g[0], g[3], -g[2]]
}

macro_rules! product_hamiltonian_impl {
    ($t:ty) => {
        impl Hamiltonian for $t {
            #[inline]
            fn eval(&self, z: &PhasePoint) -> f64 {
                let (a, _, _) = self.a_part(z[0], z[1]);
                if a == 0.0 {
                    return 0.0;
                }
                a * self.b_part(z[2], z[3]).0
            }
            #[inline]
            fn grad(&self, z: &PhasePoint) -> [f64; 4] {
                let (a, au, av) = self.a_part(z[0], z[1]);
                if a == 0.0 && au == 0.0 && av == 0.0 {
                    return [0.0; 4];
                }
                let (b, bx, by) = self.b_part(z[2], z[3]);
                [au * b, av * b, a * bx, a * by]
            }
            fn support(&self) -> SupportBox {
                self.support_box()
            }
            fn energy_bound(&self) -> Option<f64> {
                self.bound()
            }
        }
    };
}

/// One summand `H_i` of the section3 Hamiltonian, in global coordinates:
/// `A_i = f1(u - (i-1) eps) f2(v)` and `B_i = -i (1 + eps) x`.
#[derive(Debug, Clone, Copy)]
pub struct Section3Block {
    pub p: ScaleParams,
    pub i: usize,
    pub f1: PlateauCutoff,
    pub f2: PlateauCutoff,
}

impl Section3Block {
    pub fn new(p: ScaleParams, i: usize) -> Result<Self, GeometryError> {
        p.check_block(i)?;
        let d = p.delta;
        Ok(Self {
            p,
            i,
            f1: PlateauCutoff::new(d, 2.0 * d, p.eps - 2.0 * d, p.eps - d).expect("ordered"),
            f2: PlateauCutoff::new(d, 2.0 * d, 1.0 - 2.0 * d, 1.0 - d).expect("ordered"),
        })
    }

    fn strength(&self) -> f64 {
        self.i as f64 * (1.0 + self.p.eps)
    }

    fn support_box(&self) -> SupportBox {
        let u0 = self.p.block_u0(self.i);
        SupportBox {
            lo: [u0 + self.f1.t0, self.f2.t0, f64::NEG_INFINITY, f64::NEG_INFINITY],
            hi: [u0 + self.f1.t3, self.f2.t3, f64::INFINITY, f64::INFINITY],
        }
    }

    fn bound(&self) -> Option<f64> {
        None
    }
}

impl ProductHamiltonian for Section3Block {
    #[inline]
    fn a_part(&self, u: f64, v: f64) -> (f64, f64, f64) {
        let ul = u - self.p.block_u0(self.i);
        let (f1, f2) = (self.f1.eval(ul), self.f2.eval(v));
        (f1 * f2, self.f1.deriv(ul) * f2, f1 * self.f2.deriv(v))
    }
    #[inline]
    fn b_part(&self, x: f64, _y: f64) -> (f64, f64, f64) {
        let s = self.strength();
        (-s * x, -s, 0.0)
    }
    fn b_is_x_only(&self) -> bool {
        true
    }
}
product_hamiltonian_impl!(Section3Block);

/// The section3 Hamiltonian `H~ = sum_i H_i`. Block supports are disjoint, so
/// evaluation dispatches on `u`.
#[derive(Debug, Clone)]
pub struct Section3H {
    pub p: ScaleParams,
    pub blocks: Vec<Section3Block>,
}

pub fn build_section3_h(p: ScaleParams) -> Section3H {
    let blocks = (1..=p.k).map(|i| Section3Block::new(p, i).expect("in range")).collect();
    Section3H { p, blocks }
}

impl Section3H {
    /// The block whose support can contain `u`.
    #[inline]
    pub fn block_for(&self, u: f64) -> Option<&Section3Block> {
        let i = (u / self.p.eps).floor();
        if i < 0.0 || i >= self.p.k as f64 {
            return None;
        }
        Some(&self.blocks[i as usize])
    }
}

impl Hamiltonian for Section3H {
    fn eval(&self, z: &PhasePoint) -> f64 {
        self.block_for(z[0]).map_or(0.0, |b| b.eval(z))
    }
    fn grad(&self, z: &PhasePoint) -> [f64; 4] {
        self.block_for(z[0]).map_or([0.0; 4], |b| b.grad(z))
    }
    fn support(&self) -> SupportBox {
        let pp = self.p.p_prime();
        SupportBox {
            lo: [pp.umin, pp.vmin, f64::NEG_INFINITY, f64::NEG_INFINITY],
            hi: [pp.umax, pp.vmax, f64::INFINITY, f64::INFINITY],
        }
    }
    fn energy_bound(&self) -> Option<f64> {
        None
    }
}

/// `F = -f1(u) f2(v) f3(x) (1 + eps) x`, local to the base cell.
#[derive(Debug, Clone, Copy)]
pub struct FHamiltonian {
    pub p: ScaleParams,
    pub f1: PlateauCutoff,
    pub f2: PlateauCutoff,
    pub f3: PlateauCutoff,
}

pub fn build_f(p: ScaleParams) -> FHamiltonian {
    let d = p.delta;
    let e = p.eps;
    FHamiltonian {
        p,
        f1: PlateauCutoff::new(d, 2.0 * d, e - 2.0 * d, e - d).expect("ordered"),
        f2: PlateauCutoff::new(d, 2.0 * d, 1.0 - 2.0 * d, 1.0 - d).expect("ordered"),
        f3: PlateauCutoff::new(d, 2.0 * d, e - 2.0 * d, e - d).expect("ordered"),
    }
}

impl FHamiltonian {
    /// The `y`-velocity factor `(1 + eps)(f3'(x) x + f3(x))`.
    #[inline]
    pub fn lift_rate(&self, x: f64) -> f64 {
        (1.0 + self.p.eps) * (self.f3.deriv(x) * x + self.f3.eval(x))
    }

    fn support_box(&self) -> SupportBox {
        SupportBox {
            lo: [self.f1.t0, self.f2.t0, self.f3.t0, f64::NEG_INFINITY],
            hi: [self.f1.t3, self.f2.t3, self.f3.t3, f64::INFINITY],
        }
    }

    fn bound(&self) -> Option<f64> {
        Some((1.0 + self.p.eps) * (self.p.eps - self.p.delta))
    }
}

impl ProductHamiltonian for FHamiltonian {
    #[inline]
    fn a_part(&self, u: f64, v: f64) -> (f64, f64, f64) {
        let (f1, f2) = (self.f1.eval(u), self.f2.eval(v));
        (f1 * f2, self.f1.deriv(u) * f2, f1 * self.f2.deriv(v))
    }
    #[inline]
    fn b_part(&self, x: f64, _y: f64) -> (f64, f64, f64) {
        let s = 1.0 + self.p.eps;
        let f3 = self.f3.eval(x);
        (-s * f3 * x, -s * (self.f3.deriv(x) * x + f3), 0.0)
    }
    fn b_is_x_only(&self) -> bool {
        true
    }
}
product_hamiltonian_impl!(FHamiltonian);

/// `G_i = -g1(u) g2(v) g3(x) g4(y) (2i - 1 - eps) x`, local to the base cell.
#[derive(Debug, Clone, Copy)]
pub struct GHamiltonian {
    pub p: ScaleParams,
    pub i: usize,
    pub g1: PlateauCutoff,
    pub g2: PlateauCutoff,
    pub g3: PlateauCutoff,
    pub g4: RampCutoff,
}

pub fn build_g(p: ScaleParams, i: usize) -> Result<GHamiltonian, GeometryError> {
    p.check_block(i)?;
    let (d, e, n) = (p.delta, p.eps, p.nu);
    Ok(GHamiltonian {
        p,
        i,
        g1: PlateauCutoff::new(n, d, e - d, e - n).expect("ordered"),
        g2: PlateauCutoff::new(n, d, 1.0 - d, 1.0 - n).expect("ordered"),
        g3: PlateauCutoff::new(0.0, d, e - d, e).expect("ordered"),
        g4: RampCutoff::new(p.y_check(i), d, n).expect("2 nu < delta"),
    })
}

impl GHamiltonian {
    #[inline]
    pub fn strength(&self) -> f64 {
        self.p.lift(self.i)
    }

    /// Reduced planar field on `R' x R^2`, where `g1 g2 = 1`.
    #[inline]
    pub fn reduced_field(&self, x: f64, y: f64) -> [f64; 2] {
        let c = self.strength();
        let g3 = self.g3.eval(x);
        let g4 = self.g4.eval(y);
        [-c * g3 * self.g4.deriv(y) * x, c * (self.g3.deriv(x) * x + g3) * g4]
    }

    fn support_box(&self) -> SupportBox {
        SupportBox {
            lo: [self.g1.t0, self.g2.t0, self.g3.t0, self.g4.y_check],
            hi: [self.g1.t3, self.g2.t3, self.g3.t3, f64::INFINITY],
        }
    }

    fn bound(&self) -> Option<f64> {
        // |g3(x) x| <= eps on the support.
        Some(self.strength().abs() * self.p.eps)
    }
}

impl ProductHamiltonian for GHamiltonian {
    #[inline]
    fn a_part(&self, u: f64, v: f64) -> (f64, f64, f64) {
        let (g1, g2) = (self.g1.eval(u), self.g2.eval(v));
        (g1 * g2, self.g1.deriv(u) * g2, g1 * self.g2.deriv(v))
    }
    #[inline]
    fn b_part(&self, x: f64, y: f64) -> (f64, f64, f64) {
        let c = self.strength();
        let (g3, g4) = (self.g3.eval(x), self.g4.eval(y));
        (
            -c * g3 * g4 * x,
            -c * (self.g3.deriv(x) * x + g3) * g4,
            -c * g3 * self.g4.deriv(y) * x,
        )
    }
    fn b_is_x_only(&self) -> bool {
        false
    }
}
product_hamiltonian_impl!(GHamiltonian);

/// Deterministic stratified grid over a box: `n[d]` cell midpoints per axis.
#[derive(Debug, Clone, Copy)]
pub struct GridSampler {
    pub lo: [f64; 4],
    pub hi: [f64; 4],
    pub n: [usize; 4],
}

impl GridSampler {
    /// Grid over the support box; unbounded axes are replaced by `window`.
    pub fn over_support(s: SupportBox, per_axis: usize, window: (f64, f64)) -> Self {
        let mut lo = s.lo;
        let mut hi = s.hi;
        for d in 0..4 {
            if !lo[d].is_finite() {
                lo[d] = window.0;
            }
            if !hi[d].is_finite() {
                hi[d] = window.1;
            }
        }
        Self { lo, hi, n: [per_axis; 4] }
    }

    pub fn len(&self) -> usize {
        self.n.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point(&self, mut idx: usize) -> PhasePoint {
        let mut z = [0.0; 4];
        for (d, zd) in z.iter_mut().enumerate() {
            let q = idx % self.n[d];
            idx /= self.n[d];
            *zd = self.lo[d] + (self.hi[d] - self.lo[d]) * (q as f64 + 0.5) / self.n[d] as f64;
        }
        z
    }
}

/// Sampled `sup H - inf H`; `H` vanishes off its support, so 0 is included.
pub fn energy_norm(h: &(impl Hamiltonian + ?Sized), sampler: &GridSampler) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 0.0f64);
    for idx in 0..sampler.len() {
        let v = h.eval(&sampler.point(idx));
        lo = lo.min(v);
        hi = hi.max(v);
    }
    hi - lo
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::derive_scales;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn fd_check(h: &dyn Hamiltonian, lo: [f64; 4], hi: [f64; 4], seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let step = 1e-6;
        for _ in 0..1000 {
            let z: PhasePoint = std::array::from_fn(|d| rng.gen_range(lo[d]..hi[d]));
            let g = h.grad(&z);
            for d in 0..4 {
                let central = |s: f64| {
                    let (mut zp, mut zm) = (z, z);
                    zp[d] += s;
                    zm[d] -= s;
                    (h.eval(&zp) - h.eval(&zm)) / (2.0 * s)
                };
                // Richardson extrapolation: the ramp margins are only nu wide.
                let fd = (4.0 * central(step / 2.0) - central(step)) / 3.0;
                let err = (fd - g[d]).abs();
                assert!(
                    err < 1e-5 * g[d].abs() || err < 1e-8 + 1e-7 * g[d].abs().max(1.0),
                    "d={d} z={z:?} fd={fd} g={}",
                    g[d]
                );
            }
        }
    }

    #[test]
    fn section3_examples() {
        let p = derive_scales(2).unwrap();
        let h = build_section3_h(p);
        let v = h.eval(&[PI / 4.0, 0.5, 1.0, 0.0]);
        assert!((v + (1.0 + PI / 2.0)).abs() < 1e-12);
        assert_eq!(h.eval(&[-0.5, 0.5, 1.0, 0.0]), 0.0);
        let v2 = h.eval(&[PI / 4.0 + p.eps, 0.5, 1.0, 0.0]);
        assert!((v2 + 2.0 * (1.0 + p.eps)).abs() < 1e-12);
        assert!((v2 - (-5.141593)).abs() < 1e-6);
        // Field on R''_1 is (0, 0, 0, 1 + eps).
        let xf = vector_field(&h, &[PI / 4.0, 0.5, 0.3, 0.2]);
        assert_eq!(xf, [0.0, 0.0, 0.0, 1.0 + p.eps]);
        assert_eq!(vector_field(&h, &[3.0, 0.99, 0.3, 0.2]), [0.0; 4]);
    }

    #[test]
    fn section3_field_never_moves_x() {
        let p = derive_scales(4).unwrap();
        let h = build_section3_h(p);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let z = [rng.gen_range(0.0..PI), rng.gen_range(0.0..1.0), rng.gen_range(-2.0..2.0), rng.gen_range(-1.0..3.0)];
            assert_eq!(vector_field(&h, &z)[2], 0.0);
        }
    }

    #[test]
    fn f_examples() {
        let p = derive_scales(2).unwrap();
        let f = build_f(p);
        let v = f.eval(&[PI / 4.0, 0.5, PI / 4.0, 0.0]);
        assert!((v + (1.0 + PI / 2.0) * PI / 4.0).abs() < 1e-12);
        assert!((v + 2.019).abs() < 1e-3);
        assert_eq!(f.eval(&[PI / 4.0, 0.5, -0.1, 0.0]), 0.0);
    }

    #[test]
    fn f_field_on_inner_rectangle_is_vertical() {
        let p = derive_scales(4).unwrap();
        let f = build_f(p);
        let r2 = p.r2();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let z = [
                rng.gen_range(r2.umin..r2.umax),
                rng.gen_range(r2.vmin..r2.vmax),
                rng.gen_range(0.0..p.eps),
                rng.gen_range(-1.0..3.0),
            ];
            let xf = vector_field(&f, &z);
            assert_eq!(xf[0], 0.0);
            assert_eq!(xf[1], 0.0);
            assert_eq!(xf[2], 0.0);
            assert!((xf[3] - f.lift_rate(z[2])).abs() < 1e-14);
        }
    }

    #[test]
    fn g_examples() {
        let p = derive_scales(2).unwrap();
        let g = build_g(p, 1).unwrap();
        let yc = p.y_check(1);
        assert_eq!(g.eval(&[PI / 4.0, 0.5, PI / 4.0, yc - 0.01]), 0.0);
        assert_eq!(vector_field(&g, &[PI / 4.0, 0.5, PI / 4.0, yc - 0.01]), [0.0; 4]);
        let z = [PI / 4.0, 0.5, PI / 4.0, yc + p.delta];
        assert!((g.eval(&z) - 0.448).abs() < 1e-3);
        let xg = vector_field(&g, &z);
        assert!((xg[3] - (1.0 - PI / 2.0)).abs() < 1e-12);
        assert!((xg[3] + 0.571).abs() < 1e-3);
        assert!(build_g(p, 0).is_err());
        assert!(build_g(p, 3).is_err());
    }

    #[test]
    fn g_field_on_r_prime_has_no_uv_part() {
        let p = derive_scales(4).unwrap();
        for i in 1..=4 {
            let g = build_g(p, i).unwrap();
            let r1 = p.r1();
            let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
            for _ in 0..300 {
                let z = [
                    rng.gen_range(r1.umin..r1.umax),
                    rng.gen_range(r1.vmin..r1.vmax),
                    rng.gen_range(0.0..p.eps),
                    rng.gen_range(p.y_check(i) - 0.1..p.y_check(i) + 0.2),
                ];
                let xg = vector_field(&g, &z);
                assert_eq!(xg[0], 0.0);
                assert_eq!(xg[1], 0.0);
                let red = g.reduced_field(z[2], z[3]);
                assert!((xg[2] - red[0]).abs() < 1e-13 && (xg[3] - red[1]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for k in [2, 4] {
            let p = derive_scales(k).unwrap();
            let h3 = build_section3_h(p);
            fd_check(&h3, [0.0, 0.0, -1.0, -1.0], [PI, 1.0, 1.0, 2.0], 11);
            let f = build_f(p);
            fd_check(&f, [0.0, 0.0, -0.1, -1.0], [p.eps, 1.0, p.eps + 0.1, 2.0], 12);
            for i in 1..=k as usize {
                let g = build_g(p, i).unwrap();
                let yc = p.y_check(i);
                fd_check(&g, [0.0, 0.0, -0.1, yc - 0.1], [p.eps, 1.0, p.eps + 0.1, yc + 0.2], 13 + i as u64);
            }
        }
    }

    #[test]
    fn eval_is_zero_off_support() {
        let p = derive_scales(4).unwrap();
        let f = build_f(p);
        let g = build_g(p, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5000 {
            let z = [rng.gen_range(-1.0..2.0), rng.gen_range(-0.5..1.5), rng.gen_range(-1.0..2.0), rng.gen_range(0.0..5.0)];
            if !f.support().contains(&z) {
                assert_eq!(f.eval(&z), 0.0);
            }
            if !g.support().contains(&z) {
                assert_eq!(g.eval(&z), 0.0);
            }
        }
    }

    #[test]
    fn energy_of_f_is_bounded() {
        for k in [2, 4, 8] {
            let p = derive_scales(k).unwrap();
            let f = build_f(p);
            let mut s = GridSampler::over_support(f.support(), 32, (0.0, 1.0));
            s.n[3] = 1;
            let e = energy_norm(&f, &s);
            let b = f.energy_bound().unwrap();
            assert!(e <= b && e <= 2.0 * p.eps, "k={k} e={e} b={b}");
            // The analytic bound only drops below 2 eps from k = 4 on.
            assert_eq!(b <= 2.0 * p.eps, k >= 4, "k={k} b={b}");
            assert!(e > 0.8 * b);
        }
    }

    #[test]
    fn energy_of_zero_and_g() {
        struct Zero;
        impl Hamiltonian for Zero {
            fn eval(&self, _: &PhasePoint) -> f64 {
                0.0
            }
            fn grad(&self, _: &PhasePoint) -> [f64; 4] {
                [0.0; 4]
            }
            fn support(&self) -> SupportBox {
                SupportBox { lo: [0.0; 4], hi: [1.0; 4] }
            }
            fn energy_bound(&self) -> Option<f64> {
                Some(0.0)
            }
        }
        let s = GridSampler { lo: [0.0; 4], hi: [1.0; 4], n: [4; 4] };
        assert_eq!(energy_norm(&Zero, &s), 0.0);

        let p = derive_scales(2).unwrap();
        let g = build_g(p, 1).unwrap();
        let mut s = GridSampler::over_support(g.support(), 32, (0.0, p.y_check(1) + 2.0 * p.delta));
        s.lo[3] = p.y_check(1);
        let e = energy_norm(&g, &s);
        // Dense oracle along the x-axis with every other factor at 1.
        let dense = (0..20000)
            .map(|q| {
                let x = p.eps * (q as f64 + 0.5) / 20000.0;
                (g.strength() * g.g3.eval(x) * x).abs()
            })
            .fold(0.0, f64::max);
        assert!(e <= dense + 1e-12 && e <= g.energy_bound().unwrap());
        assert!(e > 0.9 * dense);
    }
}
