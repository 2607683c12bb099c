//! Scale constants and the rectangle/interval families derived from `k`.
//!
//! Blocks are indexed `i = 1..=k` as in the construction; the translate `T_i`
//! shifts `u` by `(i-1) eps` and `X_ij` shifts `x` by `4(i-1) delta + j eps`.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::ops::RangeInclusive;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("k must be at least 2, got {0}")]
    KTooSmall(i64),
    #[error("block index {i} out of range 1..={k}")]
    BlockOutOfRange { i: usize, k: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleParams {
    pub k: usize,
    pub eps: f64,
    pub delta: f64,
    pub nu: f64,
}

pub fn derive_scales(k: i64) -> Result<ScaleParams, GeometryError> {
    if k < 2 {
        return Err(GeometryError::KTooSmall(k));
    }
    let kf = k as f64;
    let eps = PI / kf;
    let delta = eps / (4.0 * kf);
    let nu = delta / (4.0 * kf);
    Ok(ScaleParams { k: k as usize, eps, delta, nu })
}

impl ScaleParams {
    pub fn new(k: usize) -> Result<Self, GeometryError> {
        derive_scales(k as i64)
    }

    pub fn check_block(&self, i: usize) -> Result<(), GeometryError> {
        if i == 0 || i > self.k {
            Err(GeometryError::BlockOutOfRange { i, k: self.k })
        } else {
            Ok(())
        }
    }

    /// `u`-offset of block `i`.
    #[inline]
    pub fn block_u0(&self, i: usize) -> f64 {
        (i as f64 - 1.0) * self.eps
    }

    /// `x`-offset of cell `(i, j)`.
    #[inline]
    pub fn cell_x0(&self, i: usize, j: i64) -> f64 {
        4.0 * (i as f64 - 1.0) * self.delta + j as f64 * self.eps
    }

    #[inline]
    pub fn y_check(&self, i: usize) -> f64 {
        1.0 + (2.0 * i as f64 - 1.0) * self.delta
    }

    #[inline]
    pub fn y_hat(&self, i: usize) -> f64 {
        2.0 * i as f64 - self.eps + 2.0 * i as f64 * self.delta
    }

    /// `2i - 1 - eps`, the strength of the lifting Hamiltonian of block `i`.
    #[inline]
    pub fn lift(&self, i: usize) -> f64 {
        2.0 * i as f64 - 1.0 - self.eps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi, "interval [{lo}, {hi}]");
        Self { lo, hi }
    }
    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }
    pub fn is_empty(&self) -> bool {
        self.hi <= self.lo
    }
    pub fn contains(&self, t: f64) -> bool {
        self.lo <= t && t <= self.hi
    }
    pub fn shifted(&self, s: f64) -> Self {
        Self { lo: self.lo + s, hi: self.hi + s }
    }
    /// Closed intervals meet (touching endpoints count).
    pub fn meets(&self, o: &Interval) -> bool {
        self.lo <= o.hi && o.lo <= self.hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect2 {
    pub umin: f64,
    pub umax: f64,
    pub vmin: f64,
    pub vmax: f64,
}

impl Rect2 {
    pub fn new(umin: f64, umax: f64, vmin: f64, vmax: f64) -> Self {
        debug_assert!(umin <= umax && vmin <= vmax);
        Self { umin, umax, vmin, vmax }
    }
    pub fn area(&self) -> f64 {
        (self.umax - self.umin) * (self.vmax - self.vmin)
    }
    pub fn contains(&self, u: f64, v: f64) -> bool {
        self.umin <= u && u <= self.umax && self.vmin <= v && v <= self.vmax
    }
    pub fn interior_contains(&self, u: f64, v: f64) -> bool {
        self.umin < u && u < self.umax && self.vmin < v && v < self.vmax
    }
    pub fn shifted_u(&self, s: f64) -> Self {
        Self { umin: self.umin + s, umax: self.umax + s, ..*self }
    }
    /// Shrink by `m` on all four sides. An axis shorter than `2m`
    /// collapses to its midpoint, leaving a rectangle of zero area.
    pub fn inset(&self, m: f64) -> Self {
        let shrink = |lo: f64, hi: f64| if hi - lo >= 2.0 * m { (lo + m, hi - m) } else { (0.5 * (lo + hi), 0.5 * (lo + hi)) };
        let (u0, u1) = shrink(self.umin, self.umax);
        let (v0, v1) = shrink(self.vmin, self.vmax);
        Self::new(u0, u1, v0, v1)
    }
    pub fn intersects(&self, o: &Rect2) -> bool {
        self.umin <= o.umax && o.umin <= self.umax && self.vmin <= o.vmax && o.vmin <= self.vmax
    }
}

/// Closure of `outer \ inner` for nested rectangles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Annulus {
    pub outer: Rect2,
    pub inner: Rect2,
}

impl Annulus {
    pub fn contains(&self, u: f64, v: f64) -> bool {
        self.outer.contains(u, v) && !self.inner.interior_contains(u, v)
    }
    pub fn area(&self) -> f64 {
        self.outer.area() - self.inner.area()
    }
}

/// Rectangles attached to one block `i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockRegions {
    pub i: usize,
    pub r: Rect2,
    pub r1: Rect2,
    pub r2: Rect2,
    pub r_nu: Rect2,
    pub a: Annulus,
    pub a1: Annulus,
    pub y_check: f64,
    pub y_hat: f64,
}

/// Every region of the construction for a fixed `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionFamily {
    pub p: ScaleParams,
    pub blocks: Vec<BlockRegions>,
}

/// `P = [0, pi] x [0, 1]`.
pub fn rect_p() -> Rect2 {
    Rect2::new(0.0, PI, 0.0, 1.0)
}

impl ScaleParams {
    /// `P'`
    pub fn p_prime(&self) -> Rect2 {
        rect_p().inset(self.delta)
    }
    pub fn q(&self) -> Rect2 {
        rect_p().inset(3.0 * self.delta)
    }
    pub fn p_nu(&self) -> Rect2 {
        rect_p().inset(self.nu)
    }
    /// The base block `R = [0, eps] x [0, 1]`.
    pub fn r(&self) -> Rect2 {
        Rect2::new(0.0, self.eps, 0.0, 1.0)
    }
    pub fn r1(&self) -> Rect2 {
        self.r().inset(self.delta)
    }
    pub fn r2(&self) -> Rect2 {
        self.r().inset(2.0 * self.delta)
    }
    pub fn r_nu(&self) -> Rect2 {
        self.r().inset(self.nu)
    }
    pub fn i_full(&self) -> Interval {
        Interval::new(0.0, self.eps)
    }
    pub fn i1(&self) -> Interval {
        Interval::new(self.delta, self.eps - self.delta)
    }
    pub fn i2(&self) -> Interval {
        Interval::new(2.0 * self.delta, self.eps - 2.0 * self.delta)
    }
    /// `J = [0, delta] U [eps - delta, eps]`.
    pub fn j_set(&self) -> [Interval; 2] {
        [Interval::new(0.0, self.delta), Interval::new(self.eps - self.delta, self.eps)]
    }
    /// `J' = [delta, 2 delta] U ]eps - 2 delta, eps - delta[` (closure returned).
    pub fn j1_set(&self) -> [Interval; 2] {
        let d = self.delta;
        [Interval::new(d, 2.0 * d), Interval::new(self.eps - 2.0 * d, self.eps - d)]
    }

    /// Exact `area(A u A') = eps - (eps - 4 delta)(1 - 4 delta)`.
    pub fn annuli_area(&self) -> f64 {
        self.eps - (self.eps - 4.0 * self.delta) * (1.0 - 4.0 * self.delta)
    }
    /// The bound `eps / k` the annuli area is compared against.
    pub fn annuli_bound_claimed(&self) -> f64 {
        self.eps / self.k as f64
    }
    /// Corrected bound `(eps / k)(1 + eps)` that does dominate the area.
    pub fn annuli_bound_corrected(&self) -> f64 {
        self.eps / self.k as f64 * (1.0 + self.eps)
    }
}

pub fn region_family(p: ScaleParams) -> RegionFamily {
    let blocks = (1..=p.k)
        .map(|i| {
            let s = p.block_u0(i);
            let r = p.r().shifted_u(s);
            let r1 = p.r1().shifted_u(s);
            let r2 = p.r2().shifted_u(s);
            BlockRegions {
                i,
                r,
                r1,
                r2,
                r_nu: p.r_nu().shifted_u(s),
                a: Annulus { outer: r, inner: r1 },
                a1: Annulus { outer: r1, inner: r2 },
                y_check: p.y_check(i),
                y_hat: p.y_hat(i),
            }
        })
        .collect();
    RegionFamily { p, blocks }
}

impl RegionFamily {
    pub fn block(&self, i: usize) -> &BlockRegions {
        &self.blocks[i - 1]
    }

    /// Translate `X_ij` of an interval `X` of the base cell.
    pub fn cell_interval(&self, x: Interval, i: usize, j: i64) -> Interval {
        x.shifted(self.p.cell_x0(i, j))
    }

    /// `I_ij` as the half-open dispatch interval `[a, a + eps)`.
    pub fn i_cell(&self, i: usize, j: i64) -> (f64, f64) {
        let a = self.p.cell_x0(i, j);
        (a, a + self.p.eps)
    }

    /// The `j` with `x` in the half-open `I_ij`.
    pub fn j_of(&self, i: usize, x: f64) -> i64 {
        ((x - self.p.cell_x0(i, 0)) / self.p.eps).floor() as i64
    }

    /// Cells `j` whose `I_ij` meets the window, plus one guard cell per side.
    pub fn j_range(&self, i: usize, window: Interval) -> RangeInclusive<i64> {
        (self.j_of(i, window.lo) - 1)..=(self.j_of(i, window.hi) + 1)
    }

    /// Block `i` with `(u, v)` in `R^nu_i`, if any.
    pub fn block_of_support(&self, u: f64, v: f64) -> Option<usize> {
        let p = &self.p;
        let i = (u / p.eps).floor();
        if !(0.0..p.k as f64).contains(&i) {
            return None;
        }
        let i = i as usize + 1;
        self.block(i).r_nu.contains(u, v).then_some(i)
    }

    /// The unique `(i, j)` with `(u, v)` in `R^nu_i` and `x` in `I_ij`.
    pub fn locate_support_cell(&self, z: &[f64; 4]) -> Option<(usize, i64)> {
        let i = self.block_of_support(z[0], z[1])?;
        Some((i, self.j_of(i, z[2])))
    }

    /// The `k + 1` sets of `y` values singled out by the case analysis.
    pub fn y_index_sets(&self) -> Vec<Vec<Interval>> {
        let mut out = vec![vec![Interval::new(0.0, 1.0)]];
        for b in &self.blocks {
            let two_i = 2.0 * b.i as f64;
            out.push(vec![
                Interval::new(two_i, two_i + 1.0),
                Interval::new(b.y_check, b.y_check + self.p.delta),
                Interval::new(b.y_hat - self.p.eps, b.y_hat),
            ]);
        }
        out
    }

    /// Pairs `(a, b)` of overlapping index sets from [`Self::y_index_sets`].
    pub fn y_index_overlaps(&self) -> Vec<(usize, usize)> {
        let sets = self.y_index_sets();
        let mut bad = Vec::new();
        for a in 0..sets.len() {
            for b in a + 1..sets.len() {
                if sets[a].iter().any(|x| sets[b].iter().any(|y| x.meets(y))) {
                    bad.push((a, b));
                }
            }
        }
        bad
    }
}
