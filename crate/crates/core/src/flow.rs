//! Time-1 maps of the Hamiltonian flows.
//!
//! Every map is available through two independent routes:
//!
//! * [`Route::Direct`] integrates the full 4D field `X_H`.
//! * [`Route::Split`] uses the product structure `H = A(u,v) B(x,y)`. Both
//!   factors are conserved, so `(u, v)` follows the planar flow of `A` for
//!   time `B(x0, y0)` and `(x, y)` follows that of `B` for time `A(u0, v0)`.
//!   For `B = B(x)` the second flow is the explicit shear `y -= t A0 B'(x)`.
//!
//! Agreement of the two routes is one of the oracles of the test suite.

use crate::geometry::{region_family, RegionFamily, ScaleParams};
use crate::hamiltonians::{
    build_f, build_g, build_section3_h, vector_field, FHamiltonian, GHamiltonian, Hamiltonian,
    PhasePoint, ProductHamiltonian, Section3H,
};
use crate::ode::{solve, OdeError, OdeOptions, Solution};
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
}

impl Default for FlowSpec {
    fn default() -> Self {
        Self { rel_tol: 1e-10, abs_tol: 1e-10, max_step: f64::INFINITY }
    }
}

impl FlowSpec {
    pub fn with_tol(tol: f64) -> Self {
        Self { rel_tol: tol, abs_tol: tol, ..Self::default() }
    }
    fn ode(&self) -> OdeOptions {
        OdeOptions { rtol: self.rel_tol, atol: self.abs_tol, max_step: self.max_step, ..OdeOptions::default() }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("integration failed at t={t}, last good state {state:?}: {reason}")]
    Integration { t: f64, state: Vec<f64>, reason: String },
    #[error("csv export failed: {0}")]
    Csv(String),
}

impl<const N: usize> From<OdeError<N>> for FlowError {
    fn from(e: OdeError<N>) -> Self {
        let (t, y) = e.last_good();
        FlowError::Integration { t, state: y.to_vec(), reason: e.to_string() }
    }
}

/// Flow of `X_H` from `t0` to `t1` (reverse time allowed).
pub fn integrate(
    h: &(impl Hamiltonian + ?Sized),
    z0: PhasePoint,
    t0: f64,
    t1: f64,
    spec: &FlowSpec,
) -> Result<PhasePoint, FlowError> {
    Ok(solve(|z: &[f64; 4]| vector_field(h, z), t0, z0, t1, &spec.ode(), false)?.y1)
}

/// Like [`integrate`] but keeps the dense output.
pub fn integrate_dense(
    h: &(impl Hamiltonian + ?Sized),
    z0: PhasePoint,
    t0: f64,
    t1: f64,
    spec: &FlowSpec,
) -> Result<Solution<4>, FlowError> {
    Ok(solve(|z: &[f64; 4]| vector_field(h, z), t0, z0, t1, &spec.ode(), true)?)
}

/// Time-`t` flow through the product factorization.
pub fn split_flow(
    h: &(impl ProductHamiltonian + ?Sized),
    z: PhasePoint,
    t: f64,
    spec: &FlowSpec,
) -> Result<PhasePoint, FlowError> {
    let (a0, _, _) = h.a_part(z[0], z[1]);
    let (b0, _, _) = h.b_part(z[2], z[3]);
    let o = spec.ode();
    let uv = if b0 == 0.0 {
        [z[0], z[1]]
    } else {
        let f = |w: &[f64; 2]| {
            let (_, au, av) = h.a_part(w[0], w[1]);
            [b0 * av, -b0 * au]
        };
        solve(f, 0.0, [z[0], z[1]], t, &o, false)?.y1
    };
    let xy = if a0 == 0.0 {
        [z[2], z[3]]
    } else if h.b_is_x_only() {
        let (_, bx, _) = h.b_part(z[2], z[3]);
        [z[2], z[3] - t * a0 * bx]
    } else {
        let f = |w: &[f64; 2]| {
            let (_, bx, by) = h.b_part(w[0], w[1]);
            [a0 * by, -a0 * bx]
        };
        solve(f, 0.0, [z[2], z[3]], t, &o, false)?.y1
    };
    Ok([uv[0], uv[1], xy[0], xy[1]])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Route {
    Direct,
    Split,
}

/// Time-`t` flow of a product Hamiltonian along the chosen route.
pub fn flow_by(
    h: &(impl ProductHamiltonian + ?Sized),
    z: PhasePoint,
    t: f64,
    route: Route,
    spec: &FlowSpec,
) -> Result<PhasePoint, FlowError> {
    match route {
        Route::Direct => integrate(h, z, 0.0, t, spec),
        Route::Split => split_flow(h, z, t, spec),
    }
}

pub trait TimeOneMap: Sync {
    fn apply(&self, z: &PhasePoint) -> Result<PhasePoint, FlowError>;
}

impl<F> TimeOneMap for F
where
    F: Fn(&PhasePoint) -> Result<PhasePoint, FlowError> + Sync,
{
    fn apply(&self, z: &PhasePoint) -> Result<PhasePoint, FlowError> {
        self(z)
    }
}

/// The section3 map `phi = phi_{H~}`.
#[derive(Debug, Clone)]
pub struct Section3Map {
    pub h: Section3H,
    pub route: Route,
    pub spec: FlowSpec,
}

impl Section3Map {
    pub fn new(p: ScaleParams, route: Route, spec: FlowSpec) -> Self {
        Self { h: build_section3_h(p), route, spec }
    }
}

impl TimeOneMap for Section3Map {
    fn apply(&self, z: &PhasePoint) -> Result<PhasePoint, FlowError> {
        match self.route {
            Route::Direct => integrate(&self.h, *z, 0.0, 1.0, &self.spec),
            Route::Split => match self.h.block_for(z[0]) {
                Some(b) => split_flow(b, *z, 1.0, &self.spec),
                None => Ok(*z),
            },
        }
    }
}

/// The local model `phi_{H_i} = phi_{G_i} o phi_F o phi_{G_i}^{-1}` of section4.
#[derive(Debug, Clone)]
pub struct Section4Model {
    pub p: ScaleParams,
    pub f: FHamiltonian,
    pub g: Vec<GHamiltonian>,
}

impl Section4Model {
    pub fn new(p: ScaleParams) -> Self {
        let g = (1..=p.k).map(|i| build_g(p, i).expect("in range")).collect();
        Self { p, f: build_f(p), g }
    }

    pub fn g(&self, i: usize) -> &GHamiltonian {
        &self.g[i - 1]
    }

    /// `phi_{H_i}` in local coordinates of the base cell.
    pub fn local_map(&self, i: usize, z: PhasePoint, route: Route, spec: &FlowSpec) -> Result<PhasePoint, FlowError> {
        let g = self.g(i);
        let w = flow_by(g, z, -1.0, route, spec)?;
        let w = flow_by(&self.f, w, 1.0, route, spec)?;
        flow_by(g, w, 1.0, route, spec)
    }
}

/// The global section4 map `phi_H` with `H = sum_ij H_ij`.
#[derive(Debug, Clone)]
pub struct Section4Map {
    pub fam: RegionFamily,
    pub model: Section4Model,
    pub route: Route,
    pub spec: FlowSpec,
}

impl Section4Map {
    pub fn new(p: ScaleParams, route: Route, spec: FlowSpec) -> Self {
        Self { fam: region_family(p), model: Section4Model::new(p), route, spec }
    }
}

/// Dispatch to the cell `(i, j)` and apply the translated local model.
pub fn section4_time1_map(
    fam: &RegionFamily,
    model: &Section4Model,
    z0: &PhasePoint,
    route: Route,
    spec: &FlowSpec,
) -> Result<PhasePoint, FlowError> {
    let Some((i, j)) = fam.locate_support_cell(z0) else {
        return Ok(*z0);
    };
    let (du, dx) = (fam.p.block_u0(i), fam.p.cell_x0(i, j));
    let local = [z0[0] - du, z0[1], z0[2] - dx, z0[3]];
    let w = model.local_map(i, local, route, spec)?;
    if w == local {
        return Ok(*z0);
    }
    Ok([w[0] + du, w[1], w[2] + dx, w[3]])
}

impl TimeOneMap for Section4Map {
    fn apply(&self, z: &PhasePoint) -> Result<PhasePoint, FlowError> {
        section4_time1_map(&self.fam, &self.model, z, self.route, &self.spec)
    }
}

/// Time-ordered samples of a flow line.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<(f64, PhasePoint)>,
}

impl Trajectory {
    /// Sample nearest in time to `t`.
    pub fn nearest(&self, t: f64) -> Option<(f64, PhasePoint)> {
        self.samples
            .iter()
            .copied()
            .min_by(|a, b| (a.0 - t).abs().total_cmp(&(b.0 - t).abs()))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), FlowError> {
        let mut wr = csv::Writer::from_writer(w);
        let err = |e: csv::Error| FlowError::Csv(e.to_string());
        wr.write_record(["t", "u", "v", "x", "y"]).map_err(err)?;
        for (t, z) in &self.samples {
            wr.write_record([t, &z[0], &z[1], &z[2], &z[3]].iter().map(|c| format!("{c:.12e}")))
                .map_err(err)?;
        }
        wr.flush().map_err(|e| FlowError::Csv(e.to_string()))
    }
}

/// Flow line of the reduced planar system of `G_i` on `R' x R^2`.
///
/// `(u, v)` is pinned to the centre of `R''` and reported as such. Samples
/// are uniform in time from 0 to `t_end`; `t_end < 0` runs backwards, with
/// samples then ordered by decreasing `t`.
pub fn reduced_trajectory(
    p: ScaleParams,
    i: usize,
    x0: f64,
    y0: f64,
    t_end: f64,
    n_samples: usize,
    spec: &FlowSpec,
) -> Result<Trajectory, FlowError> {
    let g = build_g(p, i).map_err(|e| FlowError::Integration { t: 0.0, state: vec![x0, y0], reason: e.to_string() })?;
    let sol = solve(|w: &[f64; 2]| g.reduced_field(w[0], w[1]), 0.0, [x0, y0], t_end, &spec.ode(), true)?;
    let (uc, vc) = (p.eps / 2.0, 0.5);
    let n = n_samples.max(2);
    let samples = (0..n)
        .map(|q| {
            let t = if q == 0 { 0.0 } else { t_end * q as f64 / (n - 1) as f64 };
            let w = if q == n - 1 { sol.y1 } else { sol.eval(t) };
            (t, [uc, vc, w[0], w[1]])
        })
        .collect();
    Ok(Trajectory { samples })
}

/// `t* = delta / (2i - 1 - eps) * ln((eps - delta) / delta)`.
pub fn t_star(p: &ScaleParams, i: usize) -> f64 {
    p.delta / p.lift(i) * ((p.eps - p.delta) / p.delta).ln()
}

pub type Mat4 = [[f64; 4]; 4];

const OMEGA: Mat4 = [
    [0.0, 1.0, 0.0, 0.0],
    [-1.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
    [0.0, 0.0, -1.0, 0.0],
];

fn mat_mul(a: &Mat4, b: &Mat4) -> Mat4 {
    std::array::from_fn(|r| std::array::from_fn(|c| (0..4).map(|q| a[r][q] * b[q][c]).sum()))
}

/// `max |J^T Omega J - Omega|`.
pub fn symplectic_defect_of(jac: &Mat4) -> f64 {
    let mut worst = 0.0f64;
    for a in 0..4 {
        for b in 0..4 {
            let mut s = 0.0;
            for r in 0..4 {
                for c in 0..4 {
                    s += jac[r][a] * OMEGA[r][c] * jac[c][b];
                }
            }
            worst = worst.max((s - OMEGA[a][b]).abs());
        }
    }
    worst
}

/// Hessian of `H` by central differences of its analytic gradient.
fn hessian(h: &(impl Hamiltonian + ?Sized), z: &PhasePoint) -> Mat4 {
    let mut out = [[0.0; 4]; 4];
    for c in 0..4 {
        let s = 1e-7 * (1.0 + z[c].abs());
        let (mut zp, mut zm) = (*z, *z);
        zp[c] += s;
        zm[c] -= s;
        let (gp, gm) = (h.grad(&zp), h.grad(&zm));
        for r in 0..4 {
            out[r][c] = (gp[r] - gm[r]) / (2.0 * s);
        }
    }
    out
}

/// Flow of `X_H` together with its Jacobian, from the variational equation
/// `J' = DX_H(z) J` integrated alongside the orbit.
pub fn integrate_with_jacobian(
    h: &(impl Hamiltonian + ?Sized),
    z0: PhasePoint,
    t0: f64,
    t1: f64,
    spec: &FlowSpec,
) -> Result<(PhasePoint, Mat4), FlowError> {
    let mut w0 = [0.0; 20];
    w0[..4].copy_from_slice(&z0);
    for d in 0..4 {
        w0[4 + 5 * d] = 1.0;
    }
    let f = |w: &[f64; 20]| {
        let z = [w[0], w[1], w[2], w[3]];
        let x = vector_field(h, &z);
        let hs = hessian(h, &z);
        let dx = [hs[1], hs[0].map(|v| -v), hs[3], hs[2].map(|v| -v)];
        let mut out = [0.0; 20];
        out[..4].copy_from_slice(&x);
        for r in 0..4 {
            for c in 0..4 {
                out[4 + 4 * r + c] = (0..4).map(|q| dx[r][q] * w[4 + 4 * q + c]).sum();
            }
        }
        out
    };
    let w = solve(f, t0, w0, t1, &spec.ode(), false)?.y1;
    let jac = std::array::from_fn(|r| std::array::from_fn(|c| w[4 + 4 * r + c]));
    Ok(([w[0], w[1], w[2], w[3]], jac))
}

/// A time-1 map whose Jacobian comes from the variational equation.
pub trait TimeOneJacobian: TimeOneMap {
    fn apply_with_jacobian(&self, z: &PhasePoint) -> Result<(PhasePoint, Mat4), FlowError>;
}

const IDENTITY: Mat4 = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]];

impl TimeOneJacobian for Section3Map {
    fn apply_with_jacobian(&self, z: &PhasePoint) -> Result<(PhasePoint, Mat4), FlowError> {
        integrate_with_jacobian(&self.h, *z, 0.0, 1.0, &self.spec)
    }
}

impl TimeOneJacobian for Section4Map {
    fn apply_with_jacobian(&self, z0: &PhasePoint) -> Result<(PhasePoint, Mat4), FlowError> {
        let Some((i, j)) = self.fam.locate_support_cell(z0) else {
            return Ok((*z0, IDENTITY));
        };
        let (du, dx) = (self.fam.p.block_u0(i), self.fam.p.cell_x0(i, j));
        let local = [z0[0] - du, z0[1], z0[2] - dx, z0[3]];
        let g = self.model.g(i);
        let (w1, j1) = integrate_with_jacobian(g, local, 0.0, -1.0, &self.spec)?;
        let (w2, j2) = integrate_with_jacobian(&self.model.f, w1, 0.0, 1.0, &self.spec)?;
        let (w3, j3) = integrate_with_jacobian(g, w2, 0.0, 1.0, &self.spec)?;
        Ok(([w3[0] + du, w3[1], w3[2] + dx, w3[3]], mat_mul(&j3, &mat_mul(&j2, &j1))))
    }
}

/// Symplecticity defect of the variational Jacobian at `z`, with the
/// largest Jacobian entry for context.
pub fn variational_defect(map: &(impl TimeOneJacobian + ?Sized), z: &PhasePoint) -> Result<(f64, f64), FlowError> {
    let (_, jac) = map.apply_with_jacobian(z)?;
    let size = jac.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok((symplectic_defect_of(&jac), size))
}

/// `max |J^T Omega J - Omega|` for the central-difference Jacobian at `z`.
pub fn symplecticity_defect(map: &(impl TimeOneMap + ?Sized), z: &PhasePoint, h: f64) -> Result<f64, FlowError> {
    let mut jac = [[0.0; 4]; 4];
    for c in 0..4 {
        let (mut zp, mut zm) = (*z, *z);
        zp[c] += h;
        zm[c] -= h;
        let (a, b) = (map.apply(&zp)?, map.apply(&zm)?);
        for r in 0..4 {
            jac[r][c] = (a[r] - b[r]) / (2.0 * h);
        }
    }
    Ok(symplectic_defect_of(&jac))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::derive_scales;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: &PhasePoint, b: &PhasePoint, tol: f64) -> bool {
        (0..4).all(|d| (a[d] - b[d]).abs() <= tol)
    }

    #[test]
    fn section3_translates_inner_rectangle() {
        let p = derive_scales(2).unwrap();
        let spec = FlowSpec::default();
        for route in [Route::Direct, Route::Split] {
            let m = Section3Map::new(p, route, spec);
            let z = [p.eps / 2.0, 0.5, 0.3, 0.3];
            let w = m.apply(&z).unwrap();
            assert!(close(&w, &[z[0], z[1], z[2], 0.3 + 1.0 + p.eps], 1e-6), "{w:?}");
            assert!((w[3] - 2.870796).abs() < 1e-6);
        }
    }

    #[test]
    fn section3_fixes_outer_annulus_and_keeps_inner_annulus() {
        let p = derive_scales(4).unwrap();
        let fam = region_family(p);
        let m = Section3Map::new(p, Route::Split, FlowSpec::default());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for b in &fam.blocks {
            let mut fixed = 0;
            let mut kept = 0;
            while fixed < 30 || kept < 30 {
                let (u, v) = (rng.gen_range(b.r.umin..b.r.umax), rng.gen_range(0.0..1.0));
                let z = [u, v, rng.gen_range(-1.0..1.0), rng.gen_range(0.0..1.0)];
                let w = m.apply(&z).unwrap();
                if b.a.contains(u, v) && fixed < 30 {
                    assert_eq!(w, z);
                    fixed += 1;
                } else if b.a1.contains(u, v) && !b.a.contains(u, v) && kept < 30 {
                    assert!(b.a1.contains(w[0], w[1]), "{z:?} -> {w:?}");
                    assert_eq!(w[2], z[2]);
                    kept += 1;
                }
            }
        }
    }

    #[test]
    fn routes_agree() {
        // Level loops turn sharply near the corners of R'; compare both routes
        // well below the tolerance used elsewhere.
        let spec = FlowSpec::with_tol(1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for k in [2, 4] {
            let p = derive_scales(k).unwrap();
            let d3 = Section3Map::new(p, Route::Direct, spec);
            let s3 = Section3Map::new(p, Route::Split, spec);
            let d4 = Section4Map::new(p, Route::Direct, spec);
            let s4 = Section4Map::new(p, Route::Split, spec);
            for _ in 0..40 {
                let z = [rng.gen_range(0.0..std::f64::consts::PI), rng.gen_range(0.0..1.0), rng.gen_range(-0.5..0.5), rng.gen_range(0.0..1.0)];
                let (a, b) = (d3.apply(&z).unwrap(), s3.apply(&z).unwrap());
                assert!(close(&a, &b, 1e-6), "k={k} {z:?}: {a:?} vs {b:?}");
                let z4 = [z[0], z[1], rng.gen_range(0.0..1.0), z[3]];
                let (a, b) = (d4.apply(&z4).unwrap(), s4.apply(&z4).unwrap());
                assert!(close(&a, &b, 1e-6), "k={k} {z4:?}: {a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn forward_backward_round_trip_and_group_property() {
        let p = derive_scales(2).unwrap();
        let h = build_section3_h(p);
        let spec = FlowSpec::default();
        let z = [0.25, 0.15, 0.4, 0.2];
        let w = integrate(&h, z, 0.0, 1.0, &spec).unwrap();
        let back = integrate(&h, w, 1.0, 0.0, &spec).unwrap();
        assert!(close(&back, &z, 1e-6));
        let half = integrate(&h, z, 0.0, 0.5, &spec).unwrap();
        let two = integrate(&h, half, 0.5, 1.0, &spec).unwrap();
        assert!(close(&two, &w, 1e-8));
    }

    #[test]
    // Literal oracles are hand-computed on purpose.
    #[allow(clippy::approx_constant)]
    fn section4_translates_inner_box_by_2i() {
        let p = derive_scales(2).unwrap();
        for route in [Route::Direct, Route::Split] {
            let m = Section4Map::new(p, route, FlowSpec::default());
            let z = [0.785398, 0.5, 0.785398, 0.5];
            let w = m.apply(&z).unwrap();
            assert!(close(&w, &[z[0], z[1], z[2], 2.5], 1e-5), "{w:?}");
            let c = m.fam.p.cell_x0(2, 0);
            let z2 = [p.eps * 1.5, 0.5, c + p.eps / 2.0, 0.25];
            let w2 = m.apply(&z2).unwrap();
            assert!(close(&w2, &[z2[0], z2[1], z2[2], 4.25], 1e-5), "{w2:?}");
        }
    }

    #[test]
    fn section4_fixed_sets() {
        let p = derive_scales(2).unwrap();
        let m = Section4Map::new(p, Route::Direct, FlowSpec::default());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            // R'' x J x [0, 1]
            let z = [rng.gen_range(2.0 * p.delta..p.eps - 2.0 * p.delta), rng.gen_range(0.4..0.6), rng.gen_range(0.0..p.delta), rng.gen_range(0.0..1.0)];
            assert_eq!(m.apply(&z).unwrap(), z);
            // A x I x [0, 1]
            let z = [rng.gen_range(0.0..p.delta), rng.gen_range(0.0..1.0), rng.gen_range(0.0..p.eps), rng.gen_range(0.0..1.0)];
            assert_eq!(m.apply(&z).unwrap(), z);
        }
        assert_eq!(m.apply(&[-1.0, 0.5, 0.3, 0.3]).unwrap(), [-1.0, 0.5, 0.3, 0.3]);
    }

    #[test]
    fn section4_inner_annulus_stays() {
        let p = derive_scales(2).unwrap();
        let fam = region_family(p);
        let b = fam.block(1);
        let m = Section4Map::new(p, Route::Split, FlowSpec::default());
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut n = 0;
        while n < 60 {
            let (u, v) = (rng.gen_range(b.r1.umin..b.r1.umax), rng.gen_range(b.r1.vmin..b.r1.vmax));
            if !b.a1.contains(u, v) {
                continue;
            }
            let z = [u, v, rng.gen_range(0.0..p.eps), rng.gen_range(0.0..1.0)];
            let w = m.apply(&z).unwrap();
            assert!(b.a1.contains(w[0], w[1]) && (0.0..=p.eps).contains(&w[2]), "{z:?} -> {w:?}");
            n += 1;
        }
    }

    #[test]
    fn gamma_nu_hits_corner_at_t_star() {
        for (k, i) in [(2, 1), (4, 1), (4, 3)] {
            let p = derive_scales(k).unwrap();
            let spec = FlowSpec::default();
            let ts = t_star(&p, i);
            let yc = p.y_check(i);
            let tr = reduced_trajectory(p, i, p.eps - p.delta, yc + p.nu, ts, 2001, &spec).unwrap();
            let (_, z) = *tr.samples.last().unwrap();
            assert!((z[2] - p.delta).abs() < 1e-6, "k={k} i={i} {z:?}");
            assert!((z[3] - (yc + p.delta - p.nu)).abs() < 1e-6);
        }
    }

    #[test]
    fn reduced_trajectories_are_monotone() {
        let p = derive_scales(4).unwrap();
        let spec = FlowSpec::default();
        for i in 1..=4 {
            let g = build_g(p, i).unwrap();
            assert!(g.strength() > 0.0);
            let yc = p.y_check(i);
            for q in 0..10 {
                let x0 = p.delta + (p.eps - 2.0 * p.delta) * q as f64 / 9.0;
                let y0 = yc + p.delta * (q as f64 + 0.5) / 10.0;
                let tr = reduced_trajectory(p, i, x0, y0, 1.0, 400, &spec).unwrap();
                for w in tr.samples.windows(2) {
                    assert!(w[1].1[2] <= w[0].1[2] + 1e-8);
                    assert!(w[1].1[3] >= w[0].1[3] - 1e-8);
                }
            }
        }
    }

    #[test]
    fn reduced_trajectory_fixed_and_vertical_cases() {
        let p = derive_scales(2).unwrap();
        let spec = FlowSpec::default();
        let yc = p.y_check(1);
        let x0 = 1.5 * p.delta;
        let tr = reduced_trajectory(p, 1, x0, yc - 0.05, 1.0, 20, &spec).unwrap();
        assert!(tr.samples.iter().all(|(_, z)| z[2] == x0 && z[3] == yc - 0.05));
        // The lift is negative for k = 2, i = 1, so start more than |c| above the ramp.
        let tr = reduced_trajectory(p, 1, x0, yc + p.delta + 1.0, 1.0, 20, &spec).unwrap();
        assert!(tr.samples.iter().all(|(_, z)| z[2] == x0));
    }

    #[test]
    fn trajectory_csv_has_header() {
        let p = derive_scales(2).unwrap();
        let tr = reduced_trajectory(p, 1, 0.5, 1.3, 0.5, 5, &FlowSpec::default()).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("t,u,v,x,y\n"));
        assert_eq!(s.lines().count(), 6);
    }

    #[test]
    fn identity_defect_is_zero() {
        let id = |z: &PhasePoint| -> Result<PhasePoint, FlowError> { Ok(*z) };
        let d = symplecticity_defect(&id, &[0.1, 0.2, 0.3, 0.4], 1e-5).unwrap();
        // Central differences of the identity are exact up to rounding.
        assert!(d < 1e-9);
        let shear = |z: &PhasePoint| -> Result<PhasePoint, FlowError> { Ok([z[0], z[1] + z[0], 2.0 * z[2], z[3]]) };
        assert!(symplecticity_defect(&shear, &[0.1, 0.2, 0.3, 0.4], 1e-5).unwrap() > 0.5);
    }

    #[test]
    fn variational_jacobian_matches_differences_and_is_symplectic() {
        let p = derive_scales(4).unwrap();
        let spec = FlowSpec::default();
        let tight = FlowSpec { rel_tol: 1e-12, abs_tol: 1e-14, ..spec };
        // A translated point and a sheared one with J[0][1] near 2.05.
        let z3 = [p.eps / 2.0 + 0.1, 0.3, 0.2, 0.5];
        let z4 = [0.6626727397381035, 0.09505637803234057, 0.12068204078889683, 8.158737835791712];
        let cases: [(&dyn TimeOneJacobian, &dyn TimeOneMap, PhasePoint); 2] = [
            (&Section3Map::new(p, Route::Direct, spec), &Section3Map::new(p, Route::Direct, tight), z3),
            (&Section4Map::new(p, Route::Direct, spec), &Section4Map::new(p, Route::Direct, tight), z4),
        ];
        let mut sheared = false;
        for (m, fine, z) in cases {
            let (w, jac) = m.apply_with_jacobian(&z).unwrap();
            assert!(close(&w, &m.apply(&z).unwrap(), 1e-8));
            let h = 1e-6;
            for c in 0..4 {
                let (mut zp, mut zm) = (z, z);
                zp[c] += h;
                zm[c] -= h;
                let (a, b) = (fine.apply(&zp).unwrap(), fine.apply(&zm).unwrap());
                for r in 0..4 {
                    let fd = (a[r] - b[r]) / (2.0 * h);
                    assert!((fd - jac[r][c]).abs() < 1e-5 * (1.0 + fd.abs()), "J[{r}][{c}] {} vs {fd}", jac[r][c]);
                }
            }
            sheared |= jac[0][1].abs() > 1.0;
            assert!(symplectic_defect_of(&jac) < 1e-7);
        }
        assert!(sheared);
        let shear: Mat4 = [[1.0, 0.0, 0.0, 0.0], [1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 2.0, 0.0], [0.0, 0.0, 0.0, 1.0]];
        assert!(symplectic_defect_of(&shear) > 0.5);
    }
}
