//! Named verification checks shared by the command line and the acceptance
//! suite. Each check reports its measured values next to their limits.

use crate::flow::{
    reduced_trajectory, t_star, variational_defect, FlowError, FlowSpec, Route, Section3Map, Section4Map,
    TimeOneMap,
};
use crate::geometry::{region_family, Annulus, GeometryError, Interval, Rect2, ScaleParams};
use crate::hamiltonians::PhasePoint;
use crate::par::{try_map_range, ExecMode};
use crate::raster::{simply_connected_hull, RasterError, RasterGrid};
use crate::sections::{section4_energy, sigma_report, Construction, EngineKind, ReportConfig, SectionError, SectionReport};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CheckError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Section(#[from] SectionError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("unknown check {0:?}")]
    Unknown(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CheckName {
    /// Inner rectangles of the section3 map translate by `i (1 + eps)`.
    P4,
    /// Points of the fixed regions come back bit-identical.
    Fixed,
    /// Inner boxes of the section4 map translate by `2i`.
    P6,
    /// The reduced trajectory through the ramp reaches its corner at `t*`.
    Gamma,
    /// Sampled energy of the section4 map against its bounds.
    Energy,
    /// Sup of the section measures against the corrected constants.
    Sections,
    /// Sup outer measure at `2k` against that at `k`.
    Trend,
    /// Jacobian symplecticity defect of the time-1 map.
    Symplectic,
    /// Raster measure oracles.
    Raster,
    /// Conformality and monotonicity of the rasterized measures.
    Capacity,
}

impl CheckName {
    pub const ALL: [CheckName; 10] = [
        CheckName::P4,
        CheckName::Fixed,
        CheckName::P6,
        CheckName::Gamma,
        CheckName::Energy,
        CheckName::Sections,
        CheckName::Trend,
        CheckName::Symplectic,
        CheckName::Raster,
        CheckName::Capacity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CheckName::P4 => "P4",
            CheckName::Fixed => "fixed",
            CheckName::P6 => "P6",
            CheckName::Gamma => "gamma",
            CheckName::Energy => "energy",
            CheckName::Sections => "sections",
            CheckName::Trend => "trend",
            CheckName::Symplectic => "symplectic",
            CheckName::Raster => "raster",
            CheckName::Capacity => "capacity",
        }
    }
}

impl fmt::Display for CheckName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CheckName {
    type Err = CheckError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        CheckName::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(t))
            .ok_or_else(|| CheckError::Unknown(t.to_string()))
    }
}

/// The checks `verify` runs when none are named.
pub fn default_suite(c: Construction) -> Vec<CheckName> {
    match c {
        Construction::Section3 => {
            vec![CheckName::P4, CheckName::Fixed, CheckName::Symplectic, CheckName::Sections]
        }
        Construction::Section4 => vec![
            CheckName::Fixed,
            CheckName::P6,
            CheckName::Gamma,
            CheckName::Energy,
            CheckName::Symplectic,
            CheckName::Sections,
        ],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckConfig {
    pub construction: Construction,
    pub k: usize,
    pub grid_res: usize,
    pub slab_h: Option<f64>,
    pub engine: EngineKind,
    pub seed: u64,
    pub mode: ExecMode,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            construction: Construction::Section3,
            k: 4,
            grid_res: 1024,
            slab_h: None,
            engine: EngineKind::LevelSet { xsub: 4 },
            seed: 0,
            mode: ExecMode::Parallel,
        }
    }
}

impl CheckConfig {
    fn report_config(&self) -> ReportConfig {
        ReportConfig {
            grid_res: self.grid_res,
            slab_h: self.slab_h,
            engine: self.engine,
            mode: self.mode,
        }
    }
}

/// One compared quantity: passes when `value <= limit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Part {
    pub what: String,
    pub value: f64,
    pub limit: f64,
    pub pass: bool,
}

impl Part {
    pub fn le(what: impl Into<String>, value: f64, limit: f64) -> Self {
        Self { what: what.into(), value, limit, pass: value <= limit }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: CheckName,
    pub k: usize,
    pub passed: bool,
    pub parts: Vec<Part>,
    /// Informational remarks; they never affect `passed`.
    pub notes: Vec<String>,
    pub seconds: f64,
    /// Section reports produced along the way.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub reports: Vec<SectionReport>,
}

impl CheckOutcome {
    /// `part: value <= limit` for every part, failures first.
    pub fn summary(&self) -> String {
        let mut parts: Vec<&Part> = self.parts.iter().collect();
        parts.sort_by_key(|p| p.pass);
        parts
            .iter()
            .map(|p| format!("{}{} {:.6e} <= {:.6e}", if p.pass { "" } else { "FAILED " }, p.what, p.value, p.limit))
            .collect::<Vec<_>>()
            .join("; ")
    }
}

pub fn run_check(name: CheckName, cfg: &CheckConfig) -> Result<CheckOutcome, CheckError> {
    let start = Instant::now();
    let p = ScaleParams::new(cfg.k)?;
    let mut notes = Vec::new();
    let mut reports = Vec::new();
    let parts = match name {
        CheckName::P4 => check_p4(p, cfg)?,
        CheckName::Fixed => check_fixed(p, cfg)?,
        CheckName::P6 => check_p6(p)?,
        CheckName::Gamma => check_gamma(p)?,
        CheckName::Energy => {
            let (parts, note) = check_energy(p);
            notes.extend(note);
            parts
        }
        CheckName::Sections => {
            let r = sigma_report(cfg.construction, cfg.k, &cfg.report_config())?;
            let parts = section_parts(&r);
            reports.push(r);
            parts
        }
        CheckName::Trend => {
            let a = sigma_report(cfg.construction, cfg.k, &cfg.report_config())?;
            let b = sigma_report(cfg.construction, 2 * cfg.k, &cfg.report_config())?;
            let ratio = if a.p_set.sup_outer > 0.0 { b.p_set.sup_outer / a.p_set.sup_outer } else { f64::INFINITY };
            notes.push(format!(
                "sup_outer {:.6} at k={} and {:.6} at k={}",
                a.p_set.sup_outer,
                a.k,
                b.p_set.sup_outer,
                b.k
            ));
            reports.extend([a, b]);
            vec![Part::le(format!("sup_outer(k={}) / sup_outer(k={})", 2 * cfg.k, cfg.k), ratio, 0.6)]
        }
        CheckName::Symplectic => check_symplectic(p, cfg, &mut notes)?,
        CheckName::Raster => check_raster()?,
        CheckName::Capacity => check_capacity()?,
    };
    Ok(CheckOutcome {
        name,
        k: cfg.k,
        passed: parts.iter().all(|q| q.pass),
        parts,
        notes,
        seconds: start.elapsed().as_secs_f64(),
        reports,
    })
}

fn max_dev(a: &PhasePoint, b: &PhasePoint) -> f64 {
    (0..4).map(|d| (a[d] - b[d]).abs()).fold(0.0, f64::max)
}

/// `n^3` cell midpoints of a box in `(u, v, y)`, in a fixed order.
fn stratified(r: &Rect2, y: Interval, n: [usize; 3]) -> Vec<(f64, f64, f64)> {
    let mut out = Vec::with_capacity(n.iter().product());
    let mid = |lo: f64, hi: f64, q: usize, n: usize| lo + (hi - lo) * (q as f64 + 0.5) / n as f64;
    for a in 0..n[0] {
        for b in 0..n[1] {
            for c in 0..n[2] {
                out.push((mid(r.umin, r.umax, a, n[0]), mid(r.vmin, r.vmax, b, n[1]), mid(y.lo, y.hi, c, n[2])));
            }
        }
    }
    out
}

fn sample_annulus(rng: &mut ChaCha8Rng, a: &Annulus) -> (f64, f64) {
    loop {
        let (u, v) = (rng.gen_range(a.outer.umin..a.outer.umax), rng.gen_range(a.outer.vmin..a.outer.vmax));
        if a.contains(u, v) {
            return (u, v);
        }
    }
}

fn check_p4(p: ScaleParams, cfg: &CheckConfig) -> Result<Vec<Part>, CheckError> {
    let fam = region_family(p);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut parts = Vec::new();
    for route in [Route::Split, Route::Direct] {
        let m = Section3Map::new(p, route, FlowSpec::default());
        let mut worst = 0.0f64;
        for b in &fam.blocks {
            let shift = b.i as f64 * (1.0 + p.eps);
            let x = rng.gen_range(-1.0..1.0);
            for (u, v, y) in stratified(&b.r2, Interval::new(0.0, 1.0), [5, 5, 2]) {
                let z = [u, v, x, y];
                let w = m.apply(&z)?;
                worst = worst.max(max_dev(&w, &[u, v, x, y + shift]));
            }
        }
        parts.push(Part::le(format!("{route:?} max deviation from y + i(1+eps)"), worst, 1e-6));
    }
    Ok(parts)
}

fn check_fixed(p: ScaleParams, cfg: &CheckConfig) -> Result<Vec<Part>, CheckError> {
    let fam = region_family(p);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let n = 200;
    let mut moved = 0usize;
    match cfg.construction {
        Construction::Section3 => {
            let m = Section3Map::new(p, Route::Split, FlowSpec::default());
            for q in 0..n {
                let b = &fam.blocks[q % p.k];
                let (u, v) = sample_annulus(&mut rng, &b.a);
                let z = [u, v, rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
                moved += usize::from(m.apply(&z)? != z);
            }
        }
        Construction::Section4 => {
            let m = Section4Map::new(p, Route::Split, FlowSpec::default());
            for q in 0..n {
                let b = &fam.blocks[q % p.k];
                let j = rng.gen_range(-2..3);
                let x0 = p.cell_x0(b.i, j);
                let z = if q % 2 == 0 {
                    // A_i x I_ij x [0, 1]
                    let (u, v) = sample_annulus(&mut rng, &b.a);
                    [u, v, x0 + rng.gen_range(0.0..p.eps), rng.gen_range(0.0..1.0)]
                } else {
                    // R''_i x J_ij x [0, 1]
                    let r = &b.r2;
                    let jset = p.j_set()[rng.gen_range(0..2)];
                    [
                        rng.gen_range(r.umin..r.umax),
                        rng.gen_range(r.vmin..r.vmax),
                        x0 + rng.gen_range(jset.lo..jset.hi),
                        rng.gen_range(0.0..1.0),
                    ]
                };
                moved += usize::from(m.apply(&z)? != z);
            }
        }
    }
    Ok(vec![Part::le(format!("points moved out of {n}"), moved as f64, 0.0)])
}

fn check_p6(p: ScaleParams) -> Result<Vec<Part>, CheckError> {
    let fam = region_family(p);
    let mut parts = Vec::new();
    for route in [Route::Split, Route::Direct] {
        let m = Section4Map::new(p, route, FlowSpec::default());
        let mut worst = 0.0f64;
        for b in &fam.blocks {
            let shift = 2.0 * b.i as f64;
            for j in [0i64, 1] {
                let xi = fam.cell_interval(p.i2(), b.i, j);
                let r = &b.r2;
                let centre = [(r.umin + r.umax) / 2.0, (r.vmin + r.vmax) / 2.0, (xi.lo + xi.hi) / 2.0, 0.5];
                let mut pts = vec![centre];
                // 20 points: a 2 x 2 x 5 grid in (u, v, y), x staggered across I''.
                for (q, (u, v, y)) in stratified(r, Interval::new(0.0, 1.0), [2, 2, 5]).into_iter().enumerate() {
                    pts.push([u, v, xi.lo + xi.len() * (q as f64 + 0.5) / 20.0, y]);
                }
                for z in pts {
                    let w = m.apply(&z)?;
                    worst = worst.max(max_dev(&w, &[z[0], z[1], z[2], z[3] + shift]));
                }
            }
        }
        parts.push(Part::le(format!("{route:?} max deviation from y + 2i"), worst, 1e-5));
    }
    Ok(parts)
}

fn check_gamma(p: ScaleParams) -> Result<Vec<Part>, CheckError> {
    let i = 1;
    let ts = t_star(&p, i);
    let yc = p.y_check(i);
    // Sample a run twice as long as t* so that t* is an interior sample.
    let tr = reduced_trajectory(p, i, p.eps - p.delta, yc + p.nu, 2.0 * ts, 4001, &FlowSpec::default())?;
    let (_, z) = tr.nearest(ts).expect("non-empty trajectory");
    let d = (z[2] - p.delta).abs().max((z[3] - (yc + p.delta - p.nu)).abs());
    Ok(vec![Part::le(format!("distance to the corner at t*={ts:.6}"), d, 1e-3)])
}

fn check_energy(p: ScaleParams) -> (Vec<Part>, Option<String>) {
    let (e, bound) = section4_energy(p);
    let bound = bound.unwrap_or(f64::INFINITY);
    let two_eps = 2.0 * p.eps;
    let note = (bound > two_eps).then(|| {
        format!("the analytic bound (1+eps)(eps-delta) = {bound:.6} exceeds 2 eps = {two_eps:.6} at k={}", p.k)
    });
    (vec![Part::le("sampled ||F|| vs (1+eps)(eps-delta)", e, bound), Part::le("sampled ||F|| vs 2 eps", e, two_eps)], note)
}

/// Thresholds with 5% slack: `3 eps` for section3, `4 eps` and `6 eps` for section4.
pub fn section_parts(r: &SectionReport) -> Vec<Part> {
    let (e, s) = (r.eps, 1.05);
    match r.construction {
        Construction::Section3 => vec![
            Part::le("P' sup_outer vs 3 eps", r.p_set.sup_outer, 3.0 * e * s),
            Part::le("Q sup_hull vs 3 eps", r.q_set.sup_hull, 3.0 * e * s),
        ],
        Construction::Section4 => vec![
            Part::le("P^nu sup_outer vs 4 eps", r.p_set.sup_outer, 4.0 * e * s),
            Part::le("Q sup_hull vs 4 eps", r.q_set.sup_hull, 4.0 * e * s),
            Part::le("sigma_upper vs 6 eps", r.sigma_upper, 6.0 * e * s),
        ],
    }
}

fn check_symplectic(p: ScaleParams, cfg: &CheckConfig, notes: &mut Vec<String>) -> Result<Vec<Part>, CheckError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5a11);
    let kf = p.k as f64;
    let pts: Vec<PhasePoint> = (0..100)
        .map(|_| match cfg.construction {
            Construction::Section3 => {
                [rng.gen_range(0.0..PI), rng.gen_range(0.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.0..1.0)]
            }
            Construction::Section4 => [
                rng.gen_range(0.0..kf * p.eps),
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..2.0 * p.eps),
                rng.gen_range(0.0..2.0 * kf + 2.0),
            ],
        })
        .collect();
    // Jacobians come from the variational equation. Central differences of
    // the map are useless here: entries reach 1e4 where level loops shear.
    let spec = FlowSpec::default();
    let res = match cfg.construction {
        Construction::Section3 => {
            let m = Section3Map::new(p, Route::Direct, spec);
            try_map_range(pts.len(), cfg.mode, |q| variational_defect(&m, &pts[q]))?
        }
        Construction::Section4 => {
            let m = Section4Map::new(p, Route::Direct, spec);
            try_map_range(pts.len(), cfg.mode, |q| variational_defect(&m, &pts[q]))?
        }
    };
    let worst = res.iter().map(|r| r.0).fold(0.0, f64::max);
    let size = res.iter().map(|r| r.1).fold(0.0, f64::max);
    notes.push(format!("largest Jacobian entry {size:.3e}"));
    Ok(vec![Part::le("max |J^T Omega J - Omega| over 100 points", worst, 1e-4)])
}

fn square(c: f64) -> Rect2 {
    Rect2::new(-c, c, -c, c)
}

fn check_raster() -> Result<Vec<Part>, CheckError> {
    let mut parts = Vec::new();
    let mut disc = RasterGrid::framed(square(2.0), 1024);
    disc.stamp_disc(0.0, 0.0, 1.0);
    parts.push(Part::le("disc outer measure relative error", (disc.outer_measure() / PI - 1.0).abs(), 0.02));

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
        let hull = simply_connected_hull(&g)?;
        parts.push(Part::le(format!("circle hull relative error at {res}"), (hull / PI - 1.0).abs(), 0.02));
        if prev.is_finite() {
            parts.push(Part::le(format!("circle outer ratio on doubling to {res}"), outer / prev, 0.6));
        }
        prev = outer;
    }

    let mut two = RasterGrid::framed(Rect2::new(0.0, 4.0, 0.0, 2.0), 400);
    let (a, b) = (Rect2::new(0.5, 1.5, 0.5, 1.5), Rect2::new(2.5, 3.5, 0.5, 1.5));
    two.fill_rect(&a);
    two.fill_rect(&b);
    let (mut ga, mut gb) = (two.empty_like(), two.empty_like());
    ga.fill_rect(&a);
    gb.fill_rect(&b);
    let sum = simply_connected_hull(&ga)? + simply_connected_hull(&gb)?;
    parts.push(Part::le("two squares |hull - sum of hulls|", (simply_connected_hull(&two)? - sum).abs(), 0.0));
    parts.push(Part::le("two squares hull relative error", (simply_connected_hull(&two)? / 2.0 - 1.0).abs(), 0.02));
    Ok(parts)
}

fn check_capacity() -> Result<Vec<Part>, CheckError> {
    let mut parts = Vec::new();
    let disc = |r: f64| {
        let mut g = RasterGrid::framed(square(4.0), 1024);
        g.stamp_disc(0.0, 0.0, r);
        g
    };
    let base = disc(1.0);
    let (bo, bh) = (base.outer_measure(), simply_connected_hull(&base)?);
    for lam in [0.5, 2.0] {
        let g = disc(lam);
        let l2 = lam * lam;
        parts.push(Part::le(format!("outer conformality error, lambda={lam}"), (g.outer_measure() / (l2 * bo) - 1.0).abs(), 0.03));
        parts.push(Part::le(format!("hull conformality error, lambda={lam}"), (simply_connected_hull(&g)? / (l2 * bh) - 1.0).abs(), 0.03));
    }
    let mut small = RasterGrid::framed(square(1.0), 300);
    small.stamp_disc(0.1, 0.0, 0.3);
    let mut big = small.clone();
    big.stamp_disc(-0.3, 0.2, 0.2);
    big.fill_rect(&Rect2::new(0.5, 0.8, -0.5, 0.5));
    let nested = if small.is_subset_of(&big) { 0.0 } else { 1.0 };
    parts.push(Part::le("nested rasters not nested", nested, 0.0));
    parts.push(Part::le("outer(small) - outer(big)", small.outer_measure() - big.outer_measure(), 0.0));
    parts.push(Part::le("hull(small) - hull(big)", simply_connected_hull(&small)? - simply_connected_hull(&big)?, 0.0));
    Ok(parts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for c in CheckName::ALL {
            assert_eq!(c.as_str().parse::<CheckName>().unwrap(), c);
        }
        assert_eq!("p6".parse::<CheckName>().unwrap(), CheckName::P6);
        assert!("nope".parse::<CheckName>().is_err());
    }

    #[test]
    fn cheap_checks_pass() {
        let cfg = CheckConfig { k: 2, construction: Construction::Section4, ..CheckConfig::default() };
        for c in [CheckName::P6, CheckName::Gamma, CheckName::Fixed, CheckName::Raster, CheckName::Capacity] {
            let o = run_check(c, &cfg).unwrap();
            assert!(o.passed, "{c}: {}", o.summary());
        }
    }

    #[test]
    fn part_comparison() {
        assert!(Part::le("a", 1.0, 1.0).pass);
        assert!(!Part::le("a", 1.0 + 1e-12, 1.0).pass);
        assert!(!Part::le("a", f64::NAN, 1.0).pass);
    }
}
