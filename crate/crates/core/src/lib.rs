//! Explicit low-energy symplectomorphisms of `R^4 = (u, v, x, y)` whose
//! images of cylinders have small sections, with the numerical machinery to
//! measure them.
//!
//! * [`hamiltonians`] defines the two constructions on top of [`cutoffs`]
//!   and [`geometry`].
//! * [`flow`] integrates their time-1 maps ([`ode`] is the integrator).
//! * [`raster`] and [`sections`] measure slab sections.
//! * [`checks`] bundles the named verification suites, [`report`] the
//!   serialized outputs.
//!
//! The `parallel` feature (default) runs the heavy loops on rayon; see
//! [`par::ExecMode`].

pub mod checks;
pub mod cutoffs;
pub mod flow;
pub mod geometry;
pub mod hamiltonians;
pub mod ode;
pub mod par;
pub mod raster;
pub mod report;
pub mod sections;

pub use geometry::{derive_scales, ScaleParams};
pub use par::ExecMode;
pub use sections::{sigma_report, Construction, ReportConfig, SectionReport};
