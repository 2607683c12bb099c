//! Slab-wise section measures of images of product sets.
//!
//! Images are cut into `(x, y)` slabs of side `slab_h`; for every slab we
//! measure the `(u, v)` projection of the part of the image inside it. Two
//! engines compute these numbers.
//!
//! The sampled engine works for any [`TimeOneMap`]: it pushes a stratified
//! grid forward and bins image points by slab. Each point is stamped as a
//! disc whose radius is an empirical covering radius of the image grid.
//!
//! The level-set engine is specific to the two constructions. In both, the
//! `(u, v)` part of a source point `(u, v, x, t)` moves along the level loop
//! of `a = A(u, v)` while the `(x, y)` part ends at `Gamma_x(t + a sigma(x))`
//! for a planar curve `Gamma_x` that does not depend on `(u, v)`. Whether a
//! source column hits a slab therefore depends on `a` alone, and the set of
//! hitting columns is a union of whole level loops, which the `(u, v)` flow
//! maps onto itself. Each slab's section is thus exactly a set of raster
//! cells `{a in intervals}`, found by tracing `Gamma_x` through the slab grid.
//! `x` is sampled at `xsub` points per slab. Each sample carries the range
//! of `sigma` over its sub-column, so columns that never reach the ramp of
//! `g4` are exact in `x` too; only `Gamma_x` itself is sampled in `x`.

use crate::flow::{FlowError, Section3Map, Section4Map, Route, FlowSpec, TimeOneMap};
use crate::geometry::{GeometryError, Interval, Rect2, ScaleParams, rect_p};
use crate::hamiltonians::{
    build_f, build_g, energy_norm, FHamiltonian, GHamiltonian, GridSampler, Hamiltonian, PhasePoint,
    ProductHamiltonian, Section3Block,
};
use crate::cutoffs::Cutoff;
use crate::ode::{solve, OdeError, OdeOptions, Solution};
use crate::par::{map_range, try_map_range, ExecMode};
use crate::raster::{simply_connected_hull, RasterError, RasterGrid};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SectionError {
    #[error("density must be positive and finite, got {0}")]
    BadDensity(f64),
    #[error("slab thickness must be positive and finite, got {0}")]
    BadSlab(f64),
    #[error("slab thickness {h} must divide 4 delta = {four_delta}")]
    UnalignedSlab { h: f64, four_delta: f64 },
    #[error("grid resolution must be in 8..=16384, got {0}")]
    BadGrid(usize),
    #[error("sample budget exceeded: {requested} samples requested, cap is {cap}")]
    BudgetExceeded { requested: u128, cap: u64 },
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl<const N: usize> From<OdeError<N>> for SectionError {
    fn from(e: OdeError<N>) -> Self {
        SectionError::Flow(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Construction {
    Section3,
    Section4,
}

impl fmt::Display for Construction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Construction::Section3 => "section3",
            Construction::Section4 => "section4",
        })
    }
}

impl FromStr for Construction {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "section3" => Ok(Construction::Section3),
            "section4" => Ok(Construction::Section4),
            _ => Err(format!("unknown construction {s:?} (expected section3 or section4)")),
        }
    }
}

/// `base x x_window x y_window` in `(u, v) x x x y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProductSet {
    pub base: Rect2,
    pub x_window: Interval,
    pub y_window: Interval,
}

impl ProductSet {
    fn axes(&self) -> [(f64, f64); 4] {
        let b = &self.base;
        [(b.umin, b.umax), (b.vmin, b.vmax), (self.x_window.lo, self.x_window.hi), (self.y_window.lo, self.y_window.hi)]
    }

    /// True if the set has no points or its base has zero area.
    pub fn is_empty(&self) -> bool {
        self.base.area() <= 0.0 || self.axes().iter().any(|&(lo, hi)| lo.partial_cmp(&hi).is_none_or(|o| o.is_gt()))
    }

    /// Samples per axis at `density` samples per unit length. A degenerate
    /// window gets one sample; an empty set gets none.
    pub fn counts(&self, density: f64) -> [usize; 4] {
        let empty = self.is_empty();
        self.axes().map(|(lo, hi)| {
            if empty {
                0
            } else {
                (((hi - lo) * density).ceil() as usize).max(1)
            }
        })
    }
}

/// Forward images of a stratified grid, stored with `u` varying fastest.
#[derive(Debug, Clone, Default)]
pub struct Cloud {
    pub counts: [usize; 4],
    pub spacing: [f64; 4],
    pub points: Vec<PhasePoint>,
}

impl Cloud {
    fn index(&self, c: [usize; 4]) -> usize {
        let n = self.counts;
        ((c[3] * n[2] + c[2]) * n[1] + c[1]) * n[0] + c[0]
    }
}

fn source_coords(set: &ProductSet, counts: [usize; 4], idx: usize) -> ([usize; 4], PhasePoint, [f64; 4]) {
    let axes = set.axes();
    let mut c = [0usize; 4];
    let mut z = [0.0; 4];
    let mut sp = [0.0; 4];
    let mut r = idx;
    for d in 0..4 {
        c[d] = r % counts[d];
        r /= counts[d];
        let (lo, hi) = axes[d];
        sp[d] = (hi - lo) / counts[d] as f64;
        z[d] = lo + (c[d] as f64 + 0.5) * sp[d];
    }
    (c, z, sp)
}

/// Map a stratified grid of `s` forward. Fails if the grid would exceed
/// `cap` samples.
pub fn pushforward_sample(
    map: &(impl TimeOneMap + ?Sized),
    s: &ProductSet,
    density: f64,
    cap: u64,
    mode: ExecMode,
) -> Result<Cloud, SectionError> {
    if !(density > 0.0 && density.is_finite()) {
        return Err(SectionError::BadDensity(density));
    }
    let counts = s.counts(density);
    let requested: u128 = counts.iter().map(|&n| n as u128).product();
    if requested > cap as u128 {
        return Err(SectionError::BudgetExceeded { requested, cap });
    }
    if requested == 0 {
        return Ok(Cloud { counts, ..Cloud::default() });
    }
    let spacing = source_coords(s, counts, 0).2;
    let points = try_map_range(requested as usize, mode, |idx| map.apply(&source_coords(s, counts, idx).1))?;
    Ok(Cloud { counts, spacing, points })
}

/// Empirical covering radius of the `(u, v)` image grid.
///
/// Every `stride`-th point of the grid offset by half a cell in `u` and `v`
/// is mapped forward; its distance to the nearest image of its four source
/// neighbours is recorded. Returns 1.5 times the largest such distance, and
/// never less than half the source cell diagonal.
pub fn covering_radius(
    map: &(impl TimeOneMap + ?Sized),
    s: &ProductSet,
    cloud: &Cloud,
    stride: usize,
    mode: ExecMode,
) -> Result<f64, SectionError> {
    let n = cloud.counts;
    let sp = cloud.spacing;
    let floor = 0.5 * sp[0].hypot(sp[1]);
    if n[0] < 2 || n[1] < 2 || cloud.points.is_empty() {
        return Ok(floor);
    }
    let held = [n[0] - 1, n[1] - 1, n[2], n[3]];
    let total: usize = held.iter().product();
    let stride = stride.max(1);
    let picks = total.div_ceil(stride);
    let d = try_map_range(picks, mode, |q| -> Result<f64, SectionError> {
        let (c, mut z, _) = source_coords(s, held, q * stride);
        // `source_coords` used the held-out counts for spacing; rebuild from the real grid.
        let axes = s.axes();
        for d in 0..4 {
            z[d] = axes[d].0 + (c[d] as f64 + 0.5) * sp[d];
        }
        z[0] += 0.5 * sp[0];
        z[1] += 0.5 * sp[1];
        let w = map.apply(&z)?;
        let mut best = f64::INFINITY;
        for (du, dv) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
            let nb = cloud.points[cloud.index([c[0] + du, c[1] + dv, c[2], c[3]])];
            best = best.min((nb[0] - w[0]).hypot(nb[1] - w[1]));
        }
        Ok(best)
    })?;
    let worst = d.into_iter().fold(0.0, f64::max);
    Ok((1.5 * worst).max(floor))
}

/// Measures of one `(x, y)` slab. `ix`, `iy` index the slab
/// `[ix h, (ix+1) h) x [iy h, (iy+1) h)`. When `hull_exact` is false,
/// `hull` is an upper bound that was not needed for the supremum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlabMeasure {
    pub ix: i64,
    pub iy: i64,
    pub outer: f64,
    pub hull: f64,
    pub hull_exact: bool,
}

/// Per-slab measures of one image set and their suprema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetMeasures {
    pub label: String,
    pub base: Option<Rect2>,
    pub slab_h: f64,
    pub slabs: Vec<SlabMeasure>,
    pub sup_outer: f64,
    pub argmax_outer: Option<(i64, i64)>,
    pub sup_hull: f64,
    pub argmax_hull: Option<(i64, i64)>,
}

impl SetMeasures {
    pub fn from_slabs(label: &str, base: Option<Rect2>, slab_h: f64, mut slabs: Vec<SlabMeasure>) -> Self {
        slabs.sort_by_key(|s| (s.ix, s.iy));
        let mut out = Self {
            label: label.to_string(),
            base,
            slab_h,
            slabs,
            sup_outer: 0.0,
            argmax_outer: None,
            sup_hull: 0.0,
            argmax_hull: None,
        };
        for s in &out.slabs {
            if s.outer > out.sup_outer {
                out.sup_outer = s.outer;
                out.argmax_outer = Some((s.ix, s.iy));
            }
            if s.hull_exact && s.hull > out.sup_hull {
                out.sup_hull = s.hull;
                out.argmax_hull = Some((s.ix, s.iy));
            }
        }
        out
    }

    pub fn slab(&self, ix: i64, iy: i64) -> Option<&SlabMeasure> {
        self.slabs.binary_search_by_key(&(ix, iy), |s| (s.ix, s.iy)).ok().map(|i| &self.slabs[i])
    }

    /// The `y` range `[iy h, (iy+1) h]` of slab row `iy`.
    pub fn slab_y(&self, iy: i64) -> Interval {
        Interval::new(iy as f64 * self.slab_h, (iy + 1) as f64 * self.slab_h)
    }
}

fn check_slab(h: f64) -> Result<(), SectionError> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(SectionError::BadSlab(h))
    }
}

fn check_grid(res: usize) -> Result<(), SectionError> {
    if (8..=16384).contains(&res) {
        Ok(())
    } else {
        Err(SectionError::BadGrid(res))
    }
}

/// [`slab_measures_on`] over a framed `grid_res x grid_res` raster fitted to
/// the dilated `(u, v)` extent of the cloud.
pub fn slab_measures(
    cloud: &Cloud,
    slab_h: f64,
    grid_res: usize,
    dilation: f64,
    mode: ExecMode,
) -> Result<SetMeasures, SectionError> {
    check_slab(slab_h)?;
    check_grid(grid_res)?;
    if cloud.points.is_empty() {
        return Ok(SetMeasures::from_slabs("cloud", None, slab_h, Vec::new()));
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for z in &cloud.points {
        for d in 0..2 {
            lo[d] = lo[d].min(z[d]);
            hi[d] = hi[d].max(z[d]);
        }
    }
    let pad = dilation.max(0.0) * 1.01 + 1e-9;
    let bounds = Rect2::new(lo[0] - pad, hi[0] + pad, lo[1] - pad, hi[1] + pad);
    slab_measures_on(cloud, slab_h, &RasterGrid::framed(bounds, grid_res), dilation, mode)
}

/// Bin `cloud` into `(x, y)` slabs and measure each slab's `(u, v)` set,
/// rasterized on copies of `template` with every point stamped as a disc
/// of radius `dilation` (a single cell if `dilation` is 0).
pub fn slab_measures_on(
    cloud: &Cloud,
    slab_h: f64,
    template: &RasterGrid,
    dilation: f64,
    mode: ExecMode,
) -> Result<SetMeasures, SectionError> {
    check_slab(slab_h)?;
    let key = |z: &PhasePoint| ((z[2] / slab_h).floor() as i64, (z[3] / slab_h).floor() as i64);
    let mut order: Vec<u32> = (0..cloud.points.len() as u32).collect();
    order.sort_by_key(|&i| key(&cloud.points[i as usize]));
    let mut groups: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    for q in 1..=order.len() {
        if q == order.len() || key(&cloud.points[order[q] as usize]) != key(&cloud.points[order[start] as usize]) {
            groups.push((start, q));
            start = q;
        }
    }
    let slabs = try_map_range(groups.len(), mode, |g| -> Result<SlabMeasure, SectionError> {
        let (a, b) = groups[g];
        let mut grid = template.empty_like();
        for &i in &order[a..b] {
            let z = &cloud.points[i as usize];
            if dilation > 0.0 {
                grid.stamp_disc(z[0], z[1], dilation);
            } else {
                grid.stamp_point(z[0], z[1]);
            }
        }
        let (ix, iy) = key(&cloud.points[order[a] as usize]);
        Ok(SlabMeasure { ix, iy, outer: grid.outer_measure(), hull: simply_connected_hull(&grid)?, hull_exact: true })
    })?;
    Ok(SetMeasures::from_slabs("cloud", None, slab_h, slabs))
}

/// The compression `(x, y) -> (x / f'(y), f(y))` with `f` the logistic
/// function, mapping `R^2` symplectically onto `R x (0, 1)`.
pub fn compress_y(x: f64, y: f64) -> (f64, f64) {
    let f = 1.0 / (1.0 + (-y).exp());
    (x / (f * (1.0 - f)), f)
}

// ---------------------------------------------------------------------------
// Level-set engine

/// Which source set a measurement refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SetKind {
    /// `P'` for the section3 map, `P^nu` for the section4 map.
    P,
    /// `Q` for both.
    Q,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelSetConfig {
    pub grid_res: usize,
    /// Defaults to `delta / 2`.
    pub slab_h: Option<f64>,
    /// `x` samples per slab (section4 only).
    pub xsub: usize,
    pub mode: ExecMode,
}

impl Default for LevelSetConfig {
    fn default() -> Self {
        Self { grid_res: 1024, slab_h: None, xsub: 4, mode: ExecMode::Parallel }
    }
}

/// `a`-interval of columns hitting a slab `(l, ys)` of one block.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Hit {
    l: u32,
    ys: i64,
    lo: f64,
    hi: f64,
}

/// Merged hits of one block, sorted by `(l, ys, lo)`.
#[derive(Debug, Clone)]
struct BlockTable {
    hits: Vec<Hit>,
    l_start: Vec<usize>,
}

impl BlockTable {
    fn finish(mut raw: Vec<Hit>, l_count: usize) -> Self {
        raw.sort_unstable_by(|a, b| (a.l, a.ys).cmp(&(b.l, b.ys)).then(a.lo.total_cmp(&b.lo)));
        let mut hits: Vec<Hit> = Vec::with_capacity(raw.len());
        for h in raw {
            match hits.last_mut() {
                Some(last) if last.l == h.l && last.ys == h.ys && h.lo <= last.hi => last.hi = last.hi.max(h.hi),
                _ => hits.push(h),
            }
        }
        let l_start = (0..=l_count).map(|l| hits.partition_point(|h| (h.l as usize) < l)).collect();
        Self { hits, l_start }
    }

    fn row(&self, l: usize) -> &[Hit] {
        &self.hits[self.l_start[l]..self.l_start[l + 1]]
    }

    fn slab(&self, l: usize, ys: i64) -> &[Hit] {
        let row = self.row(l);
        let a = row.partition_point(|h| h.ys < ys);
        let b = row.partition_point(|h| h.ys <= ys);
        &row[a..b]
    }
}

/// Raster cells of one source set inside one block, sorted by `a`.
#[derive(Debug, Clone)]
struct BlockCells {
    a: Vec<f64>,
    cells: Vec<(u16, u16)>,
    first_pos: usize,
    first_one: usize,
    zero_mask: RasterGrid,
    one_mask: RasterGrid,
    region_cells: u64,
}

impl BlockCells {
    fn count(&self, lo: f64, hi: f64) -> u64 {
        (self.a.partition_point(|&x| x <= hi) - self.a.partition_point(|&x| x < lo)) as u64
    }

    /// Cells of a simply connected region containing the hull of the
    /// block's part of a slab.
    fn hull_bound(&self, hits: &[Hit]) -> u64 {
        let lo = hits.iter().map(|h| h.lo).fold(f64::INFINITY, f64::min);
        if lo <= 0.0 {
            self.region_cells
        } else {
            (self.a.len() - self.a.partition_point(|&x| x < lo)) as u64
        }
    }

    fn paint(&self, hits: &[Hit], grid: &mut RasterGrid) {
        for h in hits {
            if h.lo <= 0.0 {
                grid.or_assign(&self.zero_mask).expect("same shape");
            }
            if h.hi >= 1.0 {
                grid.or_assign(&self.one_mask).expect("same shape");
            }
            let a = self.a.partition_point(|&x| x < h.lo).max(self.first_pos);
            let b = self.a.partition_point(|&x| x <= h.hi).min(self.first_one);
            for &(ix, iy) in self.cells.get(a..b).unwrap_or(&[]) {
                grid.set(ix as usize, iy as usize);
            }
        }
    }
}

/// Time-1 images `Y(s)` of `y' = c g4(y)` and `r(s) = g4(s) / g4(Y(s))`
/// on an adaptive grid covering the ramp zone of one block.
#[derive(Debug, Clone)]
struct RampTable {
    s: Vec<f64>,
    y: Vec<f64>,
    r: Vec<f64>,
}

fn ode_opts() -> OdeOptions {
    OdeOptions { rtol: 1e-10, atol: 1e-13, ..OdeOptions::default() }
}

#[derive(Clone, Copy)]
struct FamPt {
    s: f64,
    x: f64,
    y: f64,
}

/// Crossing-orbit images, node-major; `s` is NaN where a node has no
/// source in that column.
struct Family {
    nx: usize,
    pts: Vec<FamPt>,
}

impl Family {
    fn column(&self, j: usize) -> impl Iterator<Item = FamPt> + '_ {
        self.pts.iter().skip(j).step_by(self.nx.max(1)).copied().filter(|q| q.s.is_finite())
    }
}

/// Geometry of `Gamma_x` for one block of the section4 model.
struct RampModel<'a> {
    g: &'a GHamiltonian,
    table: RampTable,
    zlo: f64,
    zhi: f64,
}

impl<'a> RampModel<'a> {
    fn new(g: &'a GHamiltonian, tol: f64) -> Result<Self, SectionError> {
        let p = g.p;
        let c = g.strength();
        let zlo = g.g4.y_check;
        let zhi = zlo + p.delta * 1.001 + (-c).max(0.0);
        let o = ode_opts();
        let eval = |s: f64| -> Result<(f64, f64), SectionError> {
            if s <= zlo {
                return Ok((s, 1.0));
            }
            let y = solve(|w: &[f64; 1]| [c * g.g4.eval(w[0])], 0.0, [s], 1.0, &o, false)?.y1[0];
            let gy = g.g4.eval(y);
            Ok((y, if gy > 0.0 { g.g4.eval(s) / gy } else { 1.0 }))
        };
        let n0 = 256;
        let mut s = Vec::new();
        let mut y = Vec::new();
        let mut r = Vec::new();
        let mut prev = (zlo, eval(zlo)?);
        s.push(zlo);
        y.push(prev.1 .0);
        r.push(prev.1 .1);
        for q in 1..=n0 {
            let s1 = zlo + (zhi - zlo) * q as f64 / n0 as f64;
            let next = (s1, eval(s1)?);
            let mut stack = vec![next];
            while let Some(top) = stack.last().copied() {
                let fine = (top.1 .0 - prev.1 .0).abs() <= tol
                    && p.eps * (top.1 .1 - prev.1 .1).abs() <= tol;
                if fine || top.0 - prev.0 < 1e-14 * (1.0 + zhi.abs()) {
                    stack.pop();
                    s.push(top.0);
                    y.push(top.1 .0);
                    r.push(top.1 .1);
                    prev = top;
                } else {
                    let sm = 0.5 * (prev.0 + top.0);
                    stack.push((sm, eval(sm)?));
                }
            }
        }
        Ok(Self { g, table: RampTable { s, y, r }, zlo, zhi })
    }

    /// Images of the points of `Gamma_x` whose orbit crosses into `x < delta`,
    /// for every `x` in `xs`.
    ///
    /// Such an orbit passes `(delta, y1)` at some time `1 - T`; before that
    /// `y` follows the one-dimensional flow of `c g4`. One trajectory from
    /// each crossing height `y1` therefore serves all columns at once.
    fn family(&self, xs: &[f64], tol: f64, mode: ExecMode) -> Result<Family, SectionError> {
        let p = self.g.p;
        let c = self.g.strength();
        let nx = xs.len();
        if c <= 0.0 || nx == 0 {
            return Ok(Family { nx, pts: Vec::new() });
        }
        let g4 = &self.g.g4;
        let (a, d, nu) = (g4.y_check, p.delta, p.nu);
        let o = ode_opts();
        let row_at = |y1: f64| -> Result<Vec<FamPt>, SectionError> {
            let gy1 = g4.eval(y1);
            let fwd = solve(|w: &[f64; 2]| self.g.reduced_field(w[0], w[1]), 0.0, [d, y1], 1.0, &o, true)?;
            let mut back: Option<Solution<1>> = None;
            let lin = |v: f64| v >= nu / d && v <= 1.0 - nu / d;
            let mut row = Vec::with_capacity(nx);
            for &x in xs {
                let target = d * gy1 / x;
                let hit = if lin(gy1) && lin(target) {
                    Some((d / c * (x / d).ln(), a + d * target))
                } else {
                    if back.is_none() {
                        back = Some(solve(|w: &[f64; 1]| [c * g4.eval(w[0])], 0.0, [y1], -1.0, &o, true)?);
                    }
                    let b = back.as_ref().expect("just set");
                    let hgt = |t: f64| g4.eval(b.eval(-t)[0]);
                    if hgt(1.0) > target {
                        None
                    } else {
                        let (mut lo, mut hi) = (0.0, 1.0);
                        for _ in 0..60 {
                            let mid = 0.5 * (lo + hi);
                            if hgt(mid) > target {
                                lo = mid;
                            } else {
                                hi = mid;
                            }
                        }
                        Some((hi, b.eval(-hi)[0]))
                    }
                };
                row.push(match hit {
                    Some((t1, s)) if t1 <= 1.0 => {
                        let w = fwd.eval(1.0 - t1);
                        FamPt { s, x: w[0], y: w[1] }
                    }
                    _ => FamPt { s: f64::NAN, x: 0.0, y: 0.0 },
                });
            }
            Ok(row)
        };
        // Start uniform in y1, then split wherever some column still has
        // neighbouring images more than 2 tol apart.
        let n0 = 256;
        let mut ys: Vec<f64> = (1..=n0).map(|q| a + d * q as f64 / n0 as f64).collect();
        let mut rows = try_map_range(ys.len(), mode, |q| row_at(ys[q]))?;
        for _ in 0..40 {
            let split: Vec<usize> = (0..ys.len() - 1)
                .filter(|&q| ys[q + 1] - ys[q] > 1e-12 * d)
                .filter(|&q| {
                    rows[q].iter().zip(&rows[q + 1]).any(|(l, r)| {
                        l.s.is_finite() && r.s.is_finite() && (l.x - r.x).abs().max((l.y - r.y).abs()) > 2.0 * tol
                    })
                })
                .collect();
            if split.is_empty() {
                break;
            }
            let mids: Vec<f64> = split.iter().map(|&q| 0.5 * (ys[q] + ys[q + 1])).collect();
            let fresh = try_map_range(mids.len(), mode, |q| row_at(mids[q]))?;
            let mut merged_y = Vec::with_capacity(ys.len() + mids.len());
            let mut merged_r = Vec::with_capacity(ys.len() + mids.len());
            let mut next = split.iter().zip(mids.into_iter().zip(fresh)).peekable();
            for (q, (y, r)) in ys.into_iter().zip(rows).enumerate() {
                merged_y.push(y);
                merged_r.push(r);
                if next.peek().is_some_and(|(&sq, _)| sq == q) {
                    let (_, (my, mr)) = next.next().expect("peeked");
                    merged_y.push(my);
                    merged_r.push(mr);
                }
            }
            ys = merged_y;
            rows = merged_r;
        }
        Ok(Family { nx, pts: rows.into_iter().flatten().collect() })
    }

    /// Exact time-1 image under the reduced planar flow.
    fn planar(&self, x: f64, s: f64) -> Result<(f64, f64), SectionError> {
        let w = solve(|w: &[f64; 2]| self.g.reduced_field(w[0], w[1]), 0.0, [x, s], 1.0, &ode_opts(), false)?.y1;
        Ok((w[0], w[1]))
    }

    /// `Gamma_x` on `[slo, shi]` as a polyline `(s, x, y)`, for `x` with
    /// `g3 = 1` on a neighbourhood. `fam` supplies the crossing orbits of
    /// this column; without it they are integrated directly.
    fn polyline(
        &self,
        x: f64,
        slo: f64,
        shi: f64,
        tol: f64,
        fam: Option<(&Family, usize)>,
    ) -> Result<Vec<(f64, f64, f64)>, SectionError> {
        let p = self.g.p;
        let c = self.g.strength();
        let valid = |xi: f64| if c > 0.0 { xi >= p.delta } else { xi <= p.eps - p.delta };
        let at = |s: f64| -> Result<(f64, f64), SectionError> {
            if s <= self.zlo {
                return Ok((x, s));
            }
            if s >= self.zhi {
                return Ok((x, s + c));
            }
            self.planar(x, s)
        };
        let ts = &self.table.s;
        let a = ts.partition_point(|&t| t <= slo);
        let b = ts.partition_point(|&t| t < shi);
        let mut nodes: Vec<(f64, f64, f64)> = Vec::with_capacity(b - a);
        for (q, &t) in ts.iter().enumerate().take(b).skip(a) {
            let xi = x * self.table.r[q];
            if valid(xi) {
                nodes.push((t, xi, self.table.y[q]));
            } else if fam.is_none() {
                let (u, v) = self.planar(x, t)?;
                nodes.push((t, u, v));
            }
        }
        if let Some((f, j)) = fam {
            nodes.extend(f.column(j).filter(|q| q.s > slo && q.s < shi).map(|q| (q.s, q.x, q.y)));
            nodes.sort_by(|l, r| l.0.total_cmp(&r.0));
        }
        let first = at(slo)?;
        let mut out = vec![(slo, first.0, first.1)];
        let last = at(shi)?;
        nodes.push((shi, last.0, last.1));
        for (s, u, v) in nodes {
            // Refine wherever neighbouring nodes are too far apart.
            let mut stack = vec![(s, (u, v))];
            while let Some(&(s1, q1)) = stack.last() {
                let &(s0, x0, y0) = out.last().expect("seeded");
                if (q1.0 - x0).abs().max((q1.1 - y0).abs()) <= 2.0 * tol || s1 - s0 < 1e-13 {
                    stack.pop();
                    out.push((s1, q1.0, q1.1));
                } else {
                    let sm = 0.5 * (s0 + s1);
                    stack.push((sm, at(sm)?));
                }
            }
        }
        Ok(out)
    }
}

/// Range of the lift rate over `[x0, x1]`, padded by half the largest step
/// between the 64 sample points so that extrema between them are covered.
fn lift_range(f: &FHamiltonian, x0: f64, x1: f64) -> (f64, f64) {
    let n = 64;
    let (mut lo, mut hi, mut step) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
    let mut prev = f.lift_rate(x0);
    for q in 0..=n {
        let v = f.lift_rate(x0 + (x1 - x0) * q as f64 / n as f64);
        lo = lo.min(v);
        hi = hi.max(v);
        step = step.max((v - prev).abs());
        prev = v;
    }
    if hi - lo <= 1e-12 * hi.abs().max(1.0) {
        return (lo, hi);
    }
    (lo - 0.5 * step, hi + 0.5 * step)
}

/// Accumulates the `s`-intervals a polyline spends in each slab and turns
/// them into `a`-intervals.
struct Tracer {
    h: f64,
    l_count: i64,
    sigma: (f64, f64),
    cur: Option<(i64, i64, f64, f64)>,
    out: Vec<Hit>,
    ts: Vec<f64>,
}

impl Tracer {
    fn new(h: f64, l_count: usize, sigma: (f64, f64)) -> Self {
        Self { h, l_count: l_count as i64, sigma, cur: None, out: Vec::new(), ts: Vec::new() }
    }

    /// `a` in `[0, 1]` such that `[a sigma, a sigma + 1]` meets `[s1, s2]`
    /// for some `sigma` in the closed range `sig`.
    fn a_interval(sig: (f64, f64), s1: f64, s2: f64) -> Option<(f64, f64)> {
        // a sig.0 <= s2 and a sig.1 >= s1 - 1, each a half-line in a >= 0.
        let mut lo = 0.0f64;
        let mut hi = 1.0f64;
        for (m, b) in [(sig.0, s2), (-sig.1, 1.0 - s1)] {
            if m > 0.0 {
                hi = hi.min(b / m);
            } else if m < 0.0 {
                lo = lo.max(b / m);
            } else if b < 0.0 {
                return None;
            }
        }
        (lo <= hi).then_some((lo, hi))
    }

    fn flush(&mut self) {
        if let Some((cx, cy, s1, s2)) = self.cur.take() {
            if let Some((lo, hi)) = Self::a_interval(self.sigma, s1, s2) {
                self.out.push(Hit { l: cx.rem_euclid(self.l_count) as u32, ys: cy, lo, hi });
            }
        }
    }

    fn emit(&mut self, cx: i64, cy: i64, s1: f64, s2: f64) {
        match &mut self.cur {
            Some((x, y, _, e)) if *x == cx && *y == cy && s1 <= *e + 1e-12 => *e = e.max(s2),
            _ => {
                self.flush();
                self.cur = Some((cx, cy, s1, s2));
            }
        }
    }

    fn segment(&mut self, p0: (f64, f64, f64), p1: (f64, f64, f64)) {
        let h = self.h;
        let (s0, x0, y0) = p0;
        let (s1, x1, y1) = p1;
        let cell = |x: f64, y: f64| ((x / h).floor() as i64, (y / h).floor() as i64);
        let (c0, c1) = (cell(x0, y0), cell(x1, y1));
        if c0 == c1 {
            self.emit(c0.0, c0.1, s0, s1);
            return;
        }
        let mut ts = std::mem::take(&mut self.ts);
        ts.clear();
        ts.extend([0.0, 1.0]);
        for (a, b) in [(x0, x1), (y0, y1)] {
            if a != b {
                let (lo, hi) = (a.min(b), a.max(b));
                let mut n = (lo / h).ceil() as i64;
                while (n as f64) * h <= hi {
                    let t = ((n as f64) * h - a) / (b - a);
                    if t > 0.0 && t < 1.0 {
                        ts.push(t);
                    }
                    n += 1;
                }
            }
        }
        ts.sort_unstable_by(f64::total_cmp);
        for w in 1..ts.len() {
            let (ta, tb) = (ts[w - 1], ts[w]);
            if tb <= ta {
                continue;
            }
            let tm = 0.5 * (ta + tb);
            let c = cell(x0 + tm * (x1 - x0), y0 + tm * (y1 - y0));
            self.emit(c.0, c.1, s0 + ta * (s1 - s0), s0 + tb * (s1 - s0));
        }
        self.ts = ts;
    }

    fn finish(mut self) -> Vec<Hit> {
        self.flush();
        self.out
    }
}

/// Exact slab sections of the two constructions; see the module docs.
#[derive(Debug, Clone)]
pub struct LevelSetEngine {
    pub construction: Construction,
    pub p: ScaleParams,
    pub slab_h: f64,
    pub grid_res: usize,
    pub xsub: usize,
    pub mode: ExecMode,
    l_count: usize,
    offsets: Vec<usize>,
    tables: Vec<BlockTable>,
    template: RasterGrid,
    sets: [Vec<BlockCells>; 2],
}

/// `(m, ys)` slab with cell counts of its section and of a hull bound.
#[derive(Debug, Clone, Copy)]
struct SlabRec {
    m: usize,
    ys: i64,
    outer: u64,
    bound: u64,
}

impl LevelSetEngine {
    pub fn build(construction: Construction, p: ScaleParams, cfg: &LevelSetConfig) -> Result<Self, SectionError> {
        check_grid(cfg.grid_res)?;
        let h = cfg.slab_h.unwrap_or(p.delta / 2.0);
        check_slab(h)?;
        let mode = cfg.mode;
        let (l_count, offsets, xsub) = match construction {
            Construction::Section3 => (1, vec![0; p.k], 1),
            Construction::Section4 => {
                let ratio = 4.0 * p.delta / h;
                if (ratio - ratio.round()).abs() > 1e-9 * ratio || ratio.round() < 1.0 {
                    return Err(SectionError::UnalignedSlab { h, four_delta: 4.0 * p.delta });
                }
                let per = ratio.round() as usize;
                (per * p.k, (0..p.k).map(|b| b * per).collect(), cfg.xsub.max(1))
            }
        };
        let tol = h / 4.0;
        let f = build_f(p);
        let gs: Vec<GHamiltonian> = match construction {
            Construction::Section3 => Vec::new(),
            Construction::Section4 => (1..=p.k).map(|i| build_g(p, i)).collect::<Result<_, _>>()?,
        };
        let per_block = l_count * xsub;
        let mut tables: Vec<BlockTable> = Vec::with_capacity(p.k);
        // Section3 has no G Hamiltonians, so `gs` is empty there.
        #[allow(clippy::needless_range_loop)]
        for b in 0..p.k {
            let i = b + 1;
            let hits: Vec<Vec<Hit>> = match construction {
                Construction::Section3 => {
                    let sigma = i as f64 * (1.0 + p.eps);
                    let x = 0.5 * h;
                    let mut tr = Tracer::new(h, l_count, (sigma, sigma));
                    tr.segment((0.0, x, 0.0), (sigma + 1.0, x, sigma + 1.0));
                    vec![tr.finish()]
                }
                Construction::Section4 => {
                    let ramp = RampModel::new(&gs[b], tol)?;
                    let xs: Vec<f64> = (0..per_block).map(|q| (q as f64 + 0.5) / xsub as f64 * h).collect();
                    let inner: Vec<usize> = (0..per_block).filter(|&q| xs[q] >= p.delta && xs[q] <= p.eps - p.delta).collect();
                    let inner_x: Vec<f64> = inner.iter().map(|&q| xs[q]).collect();
                    let fam = ramp.family(&inner_x, tol, mode)?;
                    let use_fam = !fam.pts.is_empty();
                    try_map_range(per_block, mode, |q| -> Result<Vec<Hit>, SectionError> {
                        let x = xs[q];
                        // The sample stands for its whole sub-column, over
                        // which the lift rate may swing widely.
                        let sig = lift_range(&f, x - 0.5 * h / xsub as f64, x + 0.5 * h / xsub as f64);
                        let (slo, shi) = (sig.0.min(0.0), sig.1.max(0.0) + 1.0);
                        let mut tr = Tracer::new(h, l_count, sig);
                        match inner.binary_search(&q) {
                            Ok(j) if shi > ramp.zlo => {
                                let poly = ramp.polyline(x, slo, shi, tol, use_fam.then_some((&fam, j)))?;
                                for w in poly.windows(2) {
                                    tr.segment(w[0], w[1]);
                                }
                            }
                            // sigma = 0 off I', so the column stays below the ramp.
                            _ => tr.segment((slo, x, slo), (shi, x, shi)),
                        }
                        Ok(tr.finish())
                    })?
                }
            };
            tables.push(BlockTable::finish(hits.into_iter().flatten().collect(), l_count));
        }
        let template = RasterGrid::framed(rect_p(), cfg.grid_res);
        let s3: Vec<Section3Block> = (1..=p.k).map(|i| Section3Block::new(p, i)).collect::<Result<_, _>>()?;
        let a_of = |u: f64, v: f64, b: usize| -> f64 {
            match construction {
                Construction::Section3 => s3[b].a_part(u, v).0,
                Construction::Section4 => f.a_part(u - p.block_u0(b + 1), v).0,
            }
        };
        let bases = match construction {
            Construction::Section3 => [p.p_prime(), p.q()],
            Construction::Section4 => [p.p_nu(), p.q()],
        };
        let sets = bases.map(|base| source_cells(&template, base, p, &a_of, mode));
        Ok(Self {
            construction,
            p,
            slab_h: h,
            grid_res: cfg.grid_res,
            xsub,
            mode,
            l_count,
            offsets,
            tables,
            template,
            sets,
        })
    }

    /// Number of `x` slabs in one period.
    pub fn x_slabs(&self) -> usize {
        self.l_count
    }

    pub fn base(&self, kind: SetKind) -> Rect2 {
        match (self.construction, kind) {
            (Construction::Section3, SetKind::P) => self.p.p_prime(),
            (Construction::Section4, SetKind::P) => self.p.p_nu(),
            (_, SetKind::Q) => self.p.q(),
        }
    }

    fn set(&self, kind: SetKind) -> &[BlockCells] {
        &self.sets[match kind {
            SetKind::P => 0,
            SetKind::Q => 1,
        }]
    }

    fn local_l(&self, b: usize, m: usize) -> usize {
        (m + self.l_count - self.offsets[b] % self.l_count) % self.l_count
    }

    fn records(&self, kind: SetKind, m: usize) -> Vec<SlabRec> {
        let cells = self.set(kind);
        let mut rows: Vec<(i64, usize, usize, usize)> = Vec::new();
        for (b, t) in self.tables.iter().enumerate() {
            let row = t.row(self.local_l(b, m));
            let mut a = 0;
            while a < row.len() {
                let mut e = a + 1;
                while e < row.len() && row[e].ys == row[a].ys {
                    e += 1;
                }
                rows.push((row[a].ys, b, a, e));
                a = e;
            }
        }
        rows.sort_unstable();
        let mut out: Vec<SlabRec> = Vec::new();
        for (ys, b, a, e) in rows {
            let hits = &self.tables[b].row(self.local_l(b, m))[a..e];
            let bc = &cells[b];
            let outer: u64 = hits.iter().map(|h| bc.count(h.lo, h.hi)).sum();
            let bound = if outer > 0 { bc.hull_bound(hits) } else { 0 };
            match out.last_mut() {
                Some(r) if r.ys == ys => {
                    r.outer += outer;
                    r.bound += bound;
                }
                _ => out.push(SlabRec { m, ys, outer, bound }),
            }
        }
        out.retain(|r| r.outer > 0);
        out
    }

    /// Raster of the section of slab `(m, ys)`.
    pub fn render(&self, kind: SetKind, m: i64, ys: i64) -> RasterGrid {
        let mut grid = self.template.empty_like();
        let m = m.rem_euclid(self.l_count as i64) as usize;
        for (b, bc) in self.set(kind).iter().enumerate() {
            bc.paint(self.tables[b].slab(self.local_l(b, m), ys), &mut grid);
        }
        grid
    }

    /// Outer and hull measures of every nonempty slab of one period.
    ///
    /// Hulls are computed exactly in decreasing order of a rigorous upper
    /// bound until the bound drops to the running maximum; the remaining
    /// slabs report the bound with `hull_exact = false`.
    pub fn measure(&self, kind: SetKind) -> Result<SetMeasures, SectionError> {
        let recs: Vec<SlabRec> = map_range(self.l_count, self.mode, |m| self.records(kind, m)).into_iter().flatten().collect();
        let ca = self.template.cell_area();
        let mut order: Vec<usize> = (0..recs.len()).collect();
        order.sort_by(|&a, &b| recs[b].bound.cmp(&recs[a].bound).then((recs[a].m, recs[a].ys).cmp(&(recs[b].m, recs[b].ys))));
        let mut hull: Vec<Option<f64>> = vec![None; recs.len()];
        let mut best = 0.0f64;
        let chunk = 16;
        let mut pos = 0;
        while pos < order.len() {
            let todo: Vec<usize> = order[pos..(pos + chunk).min(order.len())]
                .iter()
                .copied()
                .filter(|&r| recs[r].bound as f64 * ca > best)
                .collect();
            if todo.is_empty() {
                break;
            }
            let vals = try_map_range(todo.len(), self.mode, |q| {
                let r = recs[todo[q]];
                simply_connected_hull(&self.render(kind, r.m as i64, r.ys))
            })?;
            for (q, v) in vals.into_iter().enumerate() {
                hull[todo[q]] = Some(v);
                best = best.max(v);
            }
            pos += chunk;
        }
        let slabs = recs
            .iter()
            .zip(hull)
            .map(|(r, hv)| SlabMeasure {
                ix: r.m as i64,
                iy: r.ys,
                outer: r.outer as f64 * ca,
                hull: hv.unwrap_or(r.bound as f64 * ca),
                hull_exact: hv.is_some(),
            })
            .collect();
        let label = match kind {
            SetKind::P => "P",
            SetKind::Q => "Q",
        };
        Ok(SetMeasures::from_slabs(label, Some(self.base(kind)), self.slab_h, slabs))
    }
}

fn source_cells(
    template: &RasterGrid,
    base: Rect2,
    p: ScaleParams,
    a_of: &(dyn Fn(f64, f64, usize) -> f64 + Sync),
    mode: ExecMode,
) -> Vec<BlockCells> {
    let (nx, ny) = (template.nx, template.ny);
    map_range(p.k, mode, |b| {
        let u0 = p.block_u0(b + 1);
        let u1 = if b + 1 == p.k { f64::INFINITY } else { u0 + p.eps };
        let mut list: Vec<(f64, u16, u16)> = Vec::new();
        let mut cols = 0u64;
        for ix in 1..nx - 1 {
            let (u, _) = template.cell_center(ix, 1);
            if u < u0 || u >= u1 {
                continue;
            }
            cols += 1;
            for iy in 1..ny - 1 {
                let (u, v) = template.cell_center(ix, iy);
                if base.contains(u, v) {
                    list.push((a_of(u, v, b), ix as u16, iy as u16));
                }
            }
        }
        list.sort_by(|x, y| x.0.total_cmp(&y.0).then((x.1, x.2).cmp(&(y.1, y.2))));
        let a: Vec<f64> = list.iter().map(|c| c.0).collect();
        let cells: Vec<(u16, u16)> = list.iter().map(|c| (c.1, c.2)).collect();
        let first_pos = a.partition_point(|&x| x <= 0.0);
        let first_one = a.partition_point(|&x| x < 1.0);
        let mut zero_mask = template.empty_like();
        let mut one_mask = template.empty_like();
        for &(ix, iy) in &cells[..first_pos] {
            zero_mask.set(ix as usize, iy as usize);
        }
        for &(ix, iy) in &cells[first_one..] {
            one_mask.set(ix as usize, iy as usize);
        }
        BlockCells { a, cells, first_pos, first_one, zero_mask, one_mask, region_cells: cols * (ny as u64 - 2) }
    })
}

// ---------------------------------------------------------------------------
// Reports

/// Default budget for the sampled engine, in pushed-forward points.
pub const SAMPLE_CAP: u64 = 50_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EngineKind {
    LevelSet { xsub: usize },
    Sampled { density: f64, cap: u64, tol: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub grid_res: usize,
    pub slab_h: Option<f64>,
    pub engine: EngineKind,
    pub mode: ExecMode,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self { grid_res: 1024, slab_h: None, engine: EngineKind::LevelSet { xsub: 4 }, mode: ExecMode::Parallel }
    }
}

/// Section measures of both source sets with the energy and the resulting
/// upper bounds for the sigma-type quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionReport {
    pub construction: Construction,
    pub k: usize,
    pub eps: f64,
    pub delta: f64,
    pub nu: f64,
    pub slab_h: f64,
    pub grid_res: usize,
    pub engine: EngineKind,
    /// `x` period covered by the slab table; slab `ix` is `x` in
    /// `[ix h, (ix+1) h)` modulo this period.
    pub x_period: f64,
    pub dilation: Option<f64>,
    pub p_set: SetMeasures,
    pub q_set: SetMeasures,
    /// Sampled `sup H - inf H`; 0 for section3, which claims no bound.
    pub energy: f64,
    pub energy_bound: Option<f64>,
    /// `pi - area(base of P_set)`, the part of the unit-area disc left
    /// outside the P-type set.
    pub bookkeeping: f64,
    /// `p_set.sup_outer + energy`.
    pub sigma_upper: f64,
    /// `q_set.sup_hull + energy`.
    pub sigma_hat_upper: f64,
    /// `sigma_upper + bookkeeping`.
    pub sigma_total: f64,
}

/// Sampled `||F||` over a `32^3` grid of its support (the `y` axis is
/// irrelevant since `F` does not depend on `y`).
pub fn section4_energy(p: ScaleParams) -> (f64, Option<f64>) {
    let f: FHamiltonian = build_f(p);
    let mut s = GridSampler::over_support(f.support(), 32, (0.0, 1.0));
    s.n[3] = 1;
    (energy_norm(&f, &s), f.energy_bound())
}

pub fn sigma_report(construction: Construction, k: usize, cfg: &ReportConfig) -> Result<SectionReport, SectionError> {
    let p = ScaleParams::new(k)?;
    match cfg.engine {
        EngineKind::LevelSet { xsub } => {
            let lc = LevelSetConfig { grid_res: cfg.grid_res, slab_h: cfg.slab_h, xsub, mode: cfg.mode };
            LevelSetEngine::build(construction, p, &lc)?.report()
        }
        EngineKind::Sampled { density, cap, tol } => sampled_report(construction, p, cfg, density, cap, tol),
    }
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    construction: Construction,
    p: ScaleParams,
    slab_h: f64,
    grid_res: usize,
    engine: EngineKind,
    dilation: Option<f64>,
    p_set: SetMeasures,
    q_set: SetMeasures,
) -> SectionReport {
    let (energy, energy_bound) = match construction {
        Construction::Section3 => (0.0, None),
        Construction::Section4 => section4_energy(p),
    };
    let base_area = match construction {
        Construction::Section3 => p.p_prime().area(),
        Construction::Section4 => p.p_nu().area(),
    };
    let x_period = match construction {
        Construction::Section3 => slab_h,
        Construction::Section4 => p.eps,
    };
    let bookkeeping = std::f64::consts::PI - base_area;
    let sigma_upper = p_set.sup_outer + energy;
    SectionReport {
        construction,
        k: p.k,
        eps: p.eps,
        delta: p.delta,
        nu: p.nu,
        slab_h,
        grid_res,
        engine,
        x_period,
        dilation,
        sigma_hat_upper: q_set.sup_hull + energy,
        p_set,
        q_set,
        energy,
        energy_bound,
        bookkeeping,
        sigma_upper,
        sigma_total: sigma_upper + bookkeeping,
    }
}

impl LevelSetEngine {
    pub fn report(&self) -> Result<SectionReport, SectionError> {
        let p_set = self.measure(SetKind::P)?;
        let q_set = self.measure(SetKind::Q)?;
        Ok(assemble(
            self.construction,
            self.p,
            self.slab_h,
            self.grid_res,
            EngineKind::LevelSet { xsub: self.xsub },
            None,
            p_set,
            q_set,
        ))
    }
}

/// The `x` window sampled by the sampled engine.
pub fn default_x_window(construction: Construction, p: &ScaleParams, slab_h: f64) -> Interval {
    match construction {
        Construction::Section3 => Interval::new(0.0, slab_h),
        Construction::Section4 => Interval::new(-2.0 * p.delta, p.eps + 2.0 * p.delta),
    }
}

fn sampled_report(
    construction: Construction,
    p: ScaleParams,
    cfg: &ReportConfig,
    density: f64,
    cap: u64,
    tol: f64,
) -> Result<SectionReport, SectionError> {
    check_grid(cfg.grid_res)?;
    let h = cfg.slab_h.unwrap_or(p.delta / 2.0);
    check_slab(h)?;
    let spec = FlowSpec::with_tol(tol);
    let template = RasterGrid::framed(rect_p(), cfg.grid_res);
    let xw = default_x_window(construction, &p, h);
    let run = |map: &dyn TimeOneMap, base: Rect2| -> Result<(SetMeasures, f64), SectionError> {
        let s = ProductSet { base, x_window: xw, y_window: Interval::new(0.0, 1.0) };
        let cloud = pushforward_sample(map, &s, density, cap, cfg.mode)?;
        let r = covering_radius(map, &s, &cloud, 7, cfg.mode)?;
        Ok((slab_measures_on(&cloud, h, &template, r, cfg.mode)?, r))
    };
    let (pb, qb) = match construction {
        Construction::Section3 => (p.p_prime(), p.q()),
        Construction::Section4 => (p.p_nu(), p.q()),
    };
    let ((mut ps, rp), (mut qs, rq)) = match construction {
        Construction::Section3 => {
            let m = Section3Map::new(p, Route::Split, spec);
            (run(&m, pb)?, run(&m, qb)?)
        }
        Construction::Section4 => {
            let m = Section4Map::new(p, Route::Split, spec);
            (run(&m, pb)?, run(&m, qb)?)
        }
    };
    ps.label = "P".into();
    ps.base = Some(pb);
    qs.label = "Q".into();
    qs.base = Some(qb);
    let engine = EngineKind::Sampled { density, cap, tol };
    Ok(assemble(construction, p, h, cfg.grid_res, engine, Some(rp.max(rq)), ps, qs))
}
