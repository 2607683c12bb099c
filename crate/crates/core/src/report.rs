//! Serialized outputs of a section report and its slab slices.
//!
//! Everything here is a pure function of its input, so identical reports
//! give byte-identical files.

use crate::raster::write_pgm;
use crate::sections::{LevelSetEngine, SectionReport, SetKind, SetMeasures};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const SCHEMA: u32 = 1;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io { path: path.to_path_buf(), source }
}

/// The on-disk document: a schema tag around the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDoc {
    pub schema: u32,
    #[serde(flatten)]
    pub report: SectionReport,
}

pub fn to_json(report: &SectionReport) -> Result<String, ReportError> {
    let doc = ReportDoc { schema: SCHEMA, report: report.clone() };
    let mut s = serde_json::to_string_pretty(&doc)?;
    s.push('\n');
    Ok(s)
}

pub fn from_json(s: &str) -> Result<ReportDoc, ReportError> {
    Ok(serde_json::from_str(s)?)
}

/// One row per slab of both sets, ordered by set then `(ix, iy)`.
pub fn write_slab_csv<W: Write>(report: &SectionReport, w: W) -> Result<(), ReportError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["set", "ix", "iy", "x_lo", "y_lo", "outer", "hull", "hull_exact"])?;
    for set in [&report.p_set, &report.q_set] {
        for s in &set.slabs {
            wr.write_record([
                set.label.clone(),
                s.ix.to_string(),
                s.iy.to_string(),
                format!("{:.12e}", s.ix as f64 * set.slab_h),
                format!("{:.12e}", s.iy as f64 * set.slab_h),
                format!("{:.12e}", s.outer),
                format!("{:.12e}", s.hull),
                s.hull_exact.to_string(),
            ])?;
        }
    }
    wr.flush().map_err(|e| ReportError::Csv(e.into()))?;
    Ok(())
}

/// A slab slice to export.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SliceRequest {
    pub kind: SetKind,
    pub ix: i64,
    pub iy: i64,
}

/// The argmax slabs of both sets, which is what a default export shows.
pub fn default_slices(report: &SectionReport) -> Vec<SliceRequest> {
    let pick = |kind: SetKind, m: &SetMeasures, hull: bool| {
        let arg = if hull { m.argmax_hull } else { m.argmax_outer };
        arg.map(|(ix, iy)| SliceRequest { kind, ix, iy })
    };
    let mut v: Vec<SliceRequest> =
        [pick(SetKind::P, &report.p_set, false), pick(SetKind::Q, &report.q_set, true)].into_iter().flatten().collect();
    v.dedup();
    v
}

pub fn slice_file_name(construction: &str, k: usize, r: &SliceRequest) -> String {
    let set = match r.kind {
        SetKind::P => "p",
        SetKind::Q => "q",
    };
    format!("{construction}_k{k}_{set}_x{}_y{}.pgm", r.ix, r.iy)
}

/// Writes one PGM per request into `dir`: section white, hull-only grey.
pub fn emit_slices(engine: &LevelSetEngine, requests: &[SliceRequest], dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut out = Vec::with_capacity(requests.len());
    for r in requests {
        let grid = engine.render(r.kind, r.ix, r.iy);
        let hull = if grid.is_empty() { None } else { grid.hull_mask().ok() };
        let path = dir.join(slice_file_name(&engine.construction.to_string(), engine.p.k, r));
        let f = std::fs::File::create(&path).map_err(io_err(&path))?;
        let mut bw = std::io::BufWriter::new(f);
        write_pgm(&grid, hull.as_ref(), &mut bw).map_err(io_err(&path))?;
        bw.flush().map_err(io_err(&path))?;
        out.push(path);
    }
    Ok(out)
}
