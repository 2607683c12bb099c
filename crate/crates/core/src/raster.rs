//! Occupancy bitmaps over a rectangle of the `(u, v)` plane.
//!
//! Rows are packed into `u64` words, bit `b` of word `w` being column
//! `64 w + b`. The simply connected hull floods the exterior from the
//! boundary ring with word-parallel carries, so a 1026 x 1026 raster takes a
//! few hundred microseconds.

use crate::geometry::Rect2;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RasterError {
    #[error("occupancy touches the raster boundary; enlarge the bounds")]
    BoundsTooSmall,
    #[error("raster shapes differ")]
    ShapeMismatch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RasterGrid {
    pub bounds: Rect2,
    pub nx: usize,
    pub ny: usize,
    wpr: usize,
    bits: Vec<u64>,
}

impl RasterGrid {
    pub fn new(bounds: Rect2, nx: usize, ny: usize) -> Self {
        assert!(nx > 0 && ny > 0);
        let wpr = nx.div_ceil(64);
        Self { bounds, nx, ny, wpr, bits: vec![0; wpr * ny] }
    }

    /// `res x res` cells over `inner`, plus a one-cell empty frame so the
    /// hull precondition holds for anything stamped inside `inner`.
    pub fn framed(inner: Rect2, res: usize) -> Self {
        let cw = (inner.umax - inner.umin) / res as f64;
        let ch = (inner.vmax - inner.vmin) / res as f64;
        let b = Rect2::new(inner.umin - cw, inner.umax + cw, inner.vmin - ch, inner.vmax + ch);
        Self::new(b, res + 2, res + 2)
    }

    pub fn empty_like(&self) -> Self {
        Self::new(self.bounds, self.nx, self.ny)
    }

    pub fn clear(&mut self) {
        self.bits.iter_mut().for_each(|w| *w = 0);
    }

    #[inline]
    pub fn cell_w(&self) -> f64 {
        (self.bounds.umax - self.bounds.umin) / self.nx as f64
    }
    #[inline]
    pub fn cell_h(&self) -> f64 {
        (self.bounds.vmax - self.bounds.vmin) / self.ny as f64
    }
    #[inline]
    pub fn cell_area(&self) -> f64 {
        self.cell_w() * self.cell_h()
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            self.bounds.umin + (ix as f64 + 0.5) * self.cell_w(),
            self.bounds.vmin + (iy as f64 + 0.5) * self.cell_h(),
        )
    }

    pub fn cell_of(&self, u: f64, v: f64) -> Option<(usize, usize)> {
        let fx = ((u - self.bounds.umin) / self.cell_w()).floor();
        let fy = ((v - self.bounds.vmin) / self.cell_h()).floor();
        if fx < 0.0 || fy < 0.0 || fx >= self.nx as f64 || fy >= self.ny as f64 {
            return None;
        }
        Some((fx as usize, fy as usize))
    }

    #[inline]
    pub fn get(&self, ix: usize, iy: usize) -> bool {
        self.bits[iy * self.wpr + ix / 64] >> (ix % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, ix: usize, iy: usize) {
        self.bits[iy * self.wpr + ix / 64] |= 1 << (ix % 64);
    }

    /// Set columns `x0..=x1` of row `iy` (clipped to the grid).
    pub fn fill_run(&mut self, iy: usize, x0: usize, x1: usize) {
        if iy >= self.ny || x0 > x1 || x0 >= self.nx {
            return;
        }
        let x1 = x1.min(self.nx - 1);
        let row = &mut self.bits[iy * self.wpr..(iy + 1) * self.wpr];
        let (w0, w1) = (x0 / 64, x1 / 64);
        let lo = u64::MAX << (x0 % 64);
        let hi = u64::MAX >> (63 - x1 % 64);
        if w0 == w1 {
            row[w0] |= lo & hi;
        } else {
            row[w0] |= lo;
            row[w0 + 1..w1].iter_mut().for_each(|w| *w = u64::MAX);
            row[w1] |= hi;
        }
    }

    pub fn stamp_point(&mut self, u: f64, v: f64) {
        if let Some((ix, iy)) = self.cell_of(u, v) {
            self.set(ix, iy);
        }
    }

    /// Mark every cell whose centre lies within `r` of `(u, v)`, and always
    /// the cell containing the point itself.
    pub fn stamp_disc(&mut self, u: f64, v: f64, r: f64) {
        self.stamp_point(u, v);
        if r <= 0.0 {
            return;
        }
        let (cw, ch) = (self.cell_w(), self.cell_h());
        let fy0 = ((v - r - self.bounds.vmin) / ch - 0.5).ceil().max(0.0);
        let fy1 = ((v + r - self.bounds.vmin) / ch - 0.5).floor().min(self.ny as f64 - 1.0);
        if fy1 < fy0 {
            return;
        }
        for iy in fy0 as usize..=fy1 as usize {
            let dy = self.bounds.vmin + (iy as f64 + 0.5) * ch - v;
            let s = r * r - dy * dy;
            if s < 0.0 {
                continue;
            }
            let hw = s.sqrt();
            let fx0 = ((u - hw - self.bounds.umin) / cw - 0.5).ceil().max(0.0);
            let fx1 = ((u + hw - self.bounds.umin) / cw - 0.5).floor().min(self.nx as f64 - 1.0);
            if fx1 >= fx0 {
                self.fill_run(iy, fx0 as usize, fx1 as usize);
            }
        }
    }

    /// Mark every cell whose centre lies in the closed rectangle.
    pub fn fill_rect(&mut self, r: &Rect2) {
        let (cw, ch) = (self.cell_w(), self.cell_h());
        let fx0 = ((r.umin - self.bounds.umin) / cw - 0.5).ceil().max(0.0);
        let fx1 = ((r.umax - self.bounds.umin) / cw - 0.5).floor().min(self.nx as f64 - 1.0);
        let fy0 = ((r.vmin - self.bounds.vmin) / ch - 0.5).ceil().max(0.0);
        let fy1 = ((r.vmax - self.bounds.vmin) / ch - 0.5).floor().min(self.ny as f64 - 1.0);
        if fx1 < fx0 || fy1 < fy0 {
            return;
        }
        for iy in fy0 as usize..=fy1 as usize {
            self.fill_run(iy, fx0 as usize, fx1 as usize);
        }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&w| w == 0)
    }

    /// Occupied area; the rasterized outer measure.
    pub fn outer_measure(&self) -> f64 {
        self.count() as f64 * self.cell_area()
    }

    pub fn or_assign(&mut self, o: &RasterGrid) -> Result<(), RasterError> {
        if (self.nx, self.ny) != (o.nx, o.ny) {
            return Err(RasterError::ShapeMismatch);
        }
        self.bits.iter_mut().zip(&o.bits).for_each(|(a, b)| *a |= b);
        Ok(())
    }

    pub fn is_subset_of(&self, o: &RasterGrid) -> bool {
        (self.nx, self.ny) == (o.nx, o.ny) && self.bits.iter().zip(&o.bits).all(|(a, b)| a & !b == 0)
    }

    /// Raw words of row `iy`.
    pub fn row(&self, iy: usize) -> &[u64] {
        &self.bits[iy * self.wpr..(iy + 1) * self.wpr]
    }

    pub fn row_mut(&mut self, iy: usize) -> &mut [u64] {
        &mut self.bits[iy * self.wpr..(iy + 1) * self.wpr]
    }

    fn valid_mask(&self) -> u64 {
        match self.nx % 64 {
            0 => u64::MAX,
            r => (1u64 << r) - 1,
        }
    }

    pub fn touches_boundary(&self) -> bool {
        let last = self.wpr - 1;
        let edge = 1u64 << ((self.nx - 1) % 64);
        self.row(0).iter().any(|&w| w != 0)
            || self.row(self.ny - 1).iter().any(|&w| w != 0)
            || (0..self.ny).any(|iy| self.row(iy)[0] & 1 != 0 || self.row(iy)[last] & edge != 0)
    }

    /// Occupied cells plus every free cell not connected (4-neighbour) to
    /// the boundary ring.
    pub fn hull_mask(&self) -> Result<RasterGrid, RasterError> {
        if self.touches_boundary() {
            return Err(RasterError::BoundsTooSmall);
        }
        let (ny, wpr) = (self.ny, self.wpr);
        let vmask = self.valid_mask();
        let mut free = vec![0u64; wpr * ny];
        for (i, f) in free.iter_mut().enumerate() {
            *f = !self.bits[i];
            if i % wpr == wpr - 1 {
                *f &= vmask;
            }
        }
        let mut ext = vec![0u64; wpr * ny];
        ext[..wpr].copy_from_slice(&free[..wpr]);
        ext[(ny - 1) * wpr..].copy_from_slice(&free[(ny - 1) * wpr..]);
        let right_edge = 1u64 << ((self.nx - 1) % 64);
        for iy in 0..ny {
            ext[iy * wpr] |= free[iy * wpr] & 1;
            ext[iy * wpr + wpr - 1] |= free[iy * wpr + wpr - 1] & right_edge;
        }
        let mut scratch = vec![0u64; 2 * wpr];
        for iy in 0..ny {
            let r = iy * wpr..(iy + 1) * wpr;
            spread_row(&mut ext[r.clone()], &free[r], &mut scratch);
        }
        loop {
            let mut changed = false;
            // Downward sweep then upward sweep; each row is re-spread
            // horizontally whenever it gains cells.
            for iy in 1..ny {
                changed |= pull_row(&mut ext, &free, iy, iy - 1, wpr, &mut scratch);
            }
            for iy in (0..ny - 1).rev() {
                changed |= pull_row(&mut ext, &free, iy, iy + 1, wpr, &mut scratch);
            }
            if !changed {
                break;
            }
        }
        let mut out = self.empty_like();
        for (i, o) in out.bits.iter_mut().enumerate() {
            let m = if i % wpr == wpr - 1 { vmask } else { u64::MAX };
            *o = !ext[i] & m;
        }
        Ok(out)
    }
}

/// `ext[dst] |= ext[src] & free[dst]`, then spread horizontally.
fn pull_row(ext: &mut [u64], free: &[u64], dst: usize, src: usize, wpr: usize, scratch: &mut [u64]) -> bool {
    let mut gained = false;
    for w in 0..wpr {
        let add = ext[src * wpr + w] & free[dst * wpr + w] & !ext[dst * wpr + w];
        if add != 0 {
            gained = true;
            ext[dst * wpr + w] |= add;
        }
    }
    if gained {
        let r = dst * wpr..(dst + 1) * wpr;
        spread_row(&mut ext[r.clone()], &free[r], scratch);
    }
    gained
}

/// Spread seeds `e` (subset of `f`) along runs of `f` in both directions.
fn spread_row(e: &mut [u64], f: &[u64], scratch: &mut [u64]) {
    fill_up(e, f);
    let n = e.len();
    let (re, rf) = scratch.split_at_mut(n);
    for w in 0..n {
        re[w] = e[n - 1 - w].reverse_bits();
        rf[w] = f[n - 1 - w].reverse_bits();
    }
    fill_up(re, rf);
    for w in 0..n {
        e[n - 1 - w] = re[w].reverse_bits();
    }
}

/// Spread seeds towards higher bit indices through runs of `f`, using the
/// carry chain of the multi-word sum `s + f`.
fn fill_up(e: &mut [u64], f: &[u64]) {
    let mut carry = 0u64;
    for w in 0..e.len() {
        let s = e[w] & f[w];
        let (t1, c1) = s.overflowing_add(f[w]);
        let (t2, c2) = t1.overflowing_add(carry);
        e[w] |= ((t2 ^ f[w]) & f[w]) | s;
        carry = (c1 | c2) as u64;
    }
}

/// Area of the simply connected hull of the occupied set.
pub fn simply_connected_hull(grid: &RasterGrid) -> Result<f64, RasterError> {
    Ok(grid.hull_mask()?.outer_measure())
}

/// Binary PGM (P5, maxval 255), top row = largest `v`.
pub fn write_pgm<W: Write>(grid: &RasterGrid, hull: Option<&RasterGrid>, mut w: W) -> std::io::Result<()> {
    write!(w, "P5\n{} {}\n255\n", grid.nx, grid.ny)?;
    let mut line = vec![0u8; grid.nx];
    for iy in (0..grid.ny).rev() {
        for (ix, px) in line.iter_mut().enumerate() {
            *px = if grid.get(ix, iy) {
                255
            } else if hull.is_some_and(|h| h.get(ix, iy)) {
                128
            } else {
                0
            };
        }
        w.write_all(&line)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn square(c: f64) -> Rect2 {
        Rect2::new(-c, c, -c, c)
    }

    /// Reference hull by explicit BFS from the boundary.
    fn bfs_hull(g: &RasterGrid) -> usize {
        let (nx, ny) = (g.nx, g.ny);
        let mut seen = vec![false; nx * ny];
        let mut stack = Vec::new();
        for ix in 0..nx {
            stack.push((ix, 0));
            stack.push((ix, ny - 1));
        }
        for iy in 0..ny {
            stack.push((0, iy));
            stack.push((nx - 1, iy));
        }
        let mut ext = 0;
        while let Some((x, y)) = stack.pop() {
            if seen[y * nx + x] || g.get(x, y) {
                continue;
            }
            seen[y * nx + x] = true;
            ext += 1;
            if x > 0 {
                stack.push((x - 1, y));
            }
            if x + 1 < nx {
                stack.push((x + 1, y));
            }
            if y > 0 {
                stack.push((x, y - 1));
            }
            if y + 1 < ny {
                stack.push((x, y + 1));
            }
        }
        nx * ny - ext
    }

    #[test]
    fn fill_run_across_words() {
        let mut g = RasterGrid::new(square(1.0), 200, 3);
        g.fill_run(1, 60, 130);
        assert_eq!(g.count(), 71);
        assert!(g.get(60, 1) && g.get(130, 1) && !g.get(59, 1) && !g.get(131, 1));
        g.fill_run(2, 190, 400);
        assert_eq!(g.count(), 81);
    }

    #[test]
    fn disc_area() {
        let mut g = RasterGrid::framed(square(2.0), 1024);
        g.stamp_disc(0.0, 0.0, 1.0);
        assert!((g.outer_measure() / PI - 1.0).abs() < 0.02);
        assert!((simply_connected_hull(&g).unwrap() / PI - 1.0).abs() < 0.02);
    }

    #[test]
    fn circle_capacity_contrast() {
        let mut prev = f64::INFINITY;
        for res in [256usize, 512, 1024] {
            let mut g = RasterGrid::framed(square(2.0), res);
            let w = g.cell_w();
            for iy in 0..g.ny {
                for ix in 0..g.nx {
                    let (u, v) = g.cell_center(ix, iy);
                    if ((u * u + v * v).sqrt() - 1.0).abs() <= w / 2.0 {
                        g.set(ix, iy);
                    }
                }
            }
            let outer = g.outer_measure();
            let hull = simply_connected_hull(&g).unwrap();
            assert!(outer < 0.6 * prev);
            prev = outer;
            assert!((hull / PI - 1.0).abs() < 0.02, "res={res} hull={hull}");
        }
    }

    #[test]
    fn hull_does_not_bridge_components() {
        let mut g = RasterGrid::framed(Rect2::new(0.0, 4.0, 0.0, 2.0), 400);
        g.fill_rect(&Rect2::new(0.5, 1.5, 0.5, 1.5));
        g.fill_rect(&Rect2::new(2.5, 3.5, 0.5, 1.5));
        let h = simply_connected_hull(&g).unwrap();
        assert!((h - 2.0).abs() / 2.0 < 0.02);
        assert_eq!(h, g.outer_measure());
    }

    #[test]
    fn hull_matches_bfs_on_random_shapes() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for case in 0..30 {
            let n = [40usize, 70, 130, 190][case % 4];
            let mut g = RasterGrid::framed(square(1.0), n);
            for _ in 0..rng.gen_range(5..60) {
                let (u, v) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                if rng.gen_bool(0.5) {
                    // Keep discs inside the framed square.
                    g.stamp_disc(0.65 * u, 0.65 * v, rng.gen_range(0.0..0.3));
                } else {
                    // thin ring to create holes
                    let r = rng.gen_range(0.1..0.5);
                    for q in 0..400 {
                        let a = q as f64 * 2.0 * PI / 400.0;
                        g.stamp_point((u + r * a.cos()).clamp(-0.99, 0.99), (v + r * a.sin()).clamp(-0.99, 0.99));
                    }
                }
            }
            let h = g.hull_mask().unwrap();
            assert_eq!(h.count(), bfs_hull(&g), "case {case}");
            assert!(g.is_subset_of(&h));
        }
    }

    #[test]
    fn boundary_contact_is_an_error() {
        let mut g = RasterGrid::new(square(1.0), 50, 50);
        g.set(0, 10);
        assert_eq!(simply_connected_hull(&g), Err(RasterError::BoundsTooSmall));
        let mut g = RasterGrid::new(square(1.0), 70, 50);
        g.set(69, 10);
        assert!(g.touches_boundary());
    }

    #[test]
    fn conformality_on_disc() {
        let base = {
            let mut g = RasterGrid::framed(square(4.0), 1024);
            g.stamp_disc(0.0, 0.0, 1.0);
            g
        };
        for lam in [0.5, 2.0] {
            let mut g = RasterGrid::framed(square(4.0), 1024);
            g.stamp_disc(0.0, 0.0, lam);
            for (a, b) in [
                (g.outer_measure(), base.outer_measure()),
                (simply_connected_hull(&g).unwrap(), simply_connected_hull(&base).unwrap()),
            ] {
                assert!((a / (lam * lam * b) - 1.0).abs() < 0.03);
            }
        }
    }

    #[test]
    fn monotone_under_inclusion() {
        let mut small = RasterGrid::framed(square(1.0), 300);
        small.stamp_disc(0.1, 0.0, 0.3);
        let mut big = small.clone();
        big.stamp_disc(-0.3, 0.2, 0.2);
        big.fill_rect(&Rect2::new(0.5, 0.8, -0.5, 0.5));
        assert!(small.is_subset_of(&big));
        assert!(small.outer_measure() <= big.outer_measure());
        assert!(simply_connected_hull(&small).unwrap() <= simply_connected_hull(&big).unwrap());
    }

    #[test]
    fn pgm_header() {
        let mut g = RasterGrid::new(square(1.0), 5, 4);
        g.set(1, 1);
        let mut buf = Vec::new();
        write_pgm(&g, None, &mut buf).unwrap();
        assert!(buf.starts_with(b"P5\n5 4\n255\n"));
        assert_eq!(buf.len(), 11 + 20);
    }
}
