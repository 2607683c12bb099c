//! `cylsec`: command-line front end for the verification suites and the
//! section reports.
//!
//! Usage errors exit with 2. Any failed check or run error exits with 1.

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};
use cylsec_core::checks::{default_suite, run_check, CheckConfig, CheckName, CheckOutcome, Part};
use cylsec_core::flow::{reduced_trajectory, t_star, FlowSpec};
use cylsec_core::report::{default_slices, emit_slices, to_json, write_slab_csv, SCHEMA};
use cylsec_core::sections::{EngineKind, LevelSetConfig, LevelSetEngine, SAMPLE_CAP};
use cylsec_core::{sigma_report, Construction, ExecMode, ReportConfig, ScaleParams};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "cylsec", version, about = "Low-energy symplectic embeddings and their section measures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run named checks and print a JSON verdict; exit 0 iff all pass.
    Verify(VerifyArgs),
    /// Sample the reduced planar flow line of G_i as CSV.
    Trajectory(TrajectoryArgs),
    /// Measure slab sections and write the report files.
    Report(ReportArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value = "section3", value_parser = parse_construction)]
    construction: Construction,
    /// Number of blocks; at least 2.
    #[arg(long, default_value_t = 4, value_parser = parse_k)]
    k: usize,
    /// Raster cells per side of the unit-area square.
    #[arg(long, default_value_t = 1024, value_parser = parse_count)]
    grid: usize,
    /// Use the sampled engine at this many samples per unit length.
    #[arg(long, value_parser = parse_positive)]
    density: Option<f64>,
    /// Slab thickness; defaults to delta / 2.
    #[arg(long, value_parser = parse_positive)]
    slab: Option<f64>,
    /// x samples per slab for the level-set engine.
    #[arg(long, default_value_t = 4, value_parser = parse_count)]
    xsub: usize,
    /// Integration tolerance for the sampled engine.
    #[arg(long, default_value_t = 1e-9, value_parser = parse_positive)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run single-threaded.
    #[arg(long)]
    sequential: bool,
}

impl Common {
    fn engine(&self) -> EngineKind {
        match self.density {
            Some(density) => EngineKind::Sampled { density, cap: SAMPLE_CAP, tol: self.tol },
            None => EngineKind::LevelSet { xsub: self.xsub },
        }
    }

    fn mode(&self) -> ExecMode {
        if self.sequential {
            ExecMode::Sequential
        } else {
            ExecMode::Parallel
        }
    }

    fn report_config(&self) -> ReportConfig {
        ReportConfig { grid_res: self.grid, slab_h: self.slab, engine: self.engine(), mode: self.mode() }
    }
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated check names; defaults to the construction's suite.
    #[arg(long, value_delimiter = ',')]
    check: Vec<CheckName>,
    /// Write the JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrajectoryArgs {
    #[arg(long, default_value_t = 2, value_parser = parse_k)]
    k: usize,
    /// Block index, 1..=k.
    #[arg(long, default_value_t = 1)]
    i: usize,
    /// Start x; defaults to eps - delta.
    #[arg(long, allow_negative_numbers = true)]
    x0: Option<f64>,
    /// Start y; defaults to the ramp foot plus nu.
    #[arg(long, allow_negative_numbers = true)]
    y0: Option<f64>,
    /// End time, negative to run backwards; defaults to 2 t*.
    #[arg(long, allow_negative_numbers = true)]
    t_end: Option<f64>,
    #[arg(long, default_value_t = 4001, value_parser = parse_count)]
    samples: usize,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    common: Common,
    /// Also write PGM slices of the argmax slabs (needs --out).
    #[arg(long, requires = "out")]
    emit_raster: bool,
    /// Output directory; without it the JSON goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_construction(s: &str) -> Result<Construction, String> {
    s.parse()
}

fn parse_k(s: &str) -> Result<usize, String> {
    let k: usize = s.parse().map_err(|e| format!("{e}"))?;
    if k < 2 {
        return Err(format!("k must be at least 2, got {k}"));
    }
    Ok(k)
}

fn parse_count(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        Ok(_) => Err("must be positive".into()),
        Err(e) => Err(e.to_string()),
    }
}

fn parse_positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        Ok(v) => Err(format!("must be positive and finite, got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), String> {
    std::fs::write(path, bytes).map_err(|e| format!("{}: {e}", path.display()))
}

/// Writes to `out` if given, else to stdout.
fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<(), String> {
    match out {
        Some(p) => write_file(p, bytes),
        None => {
            let mut so = std::io::stdout().lock();
            so.write_all(bytes).and_then(|_| so.flush()).map_err(|e| format!("stdout: {e}"))
        }
    }
}

fn verify(a: &VerifyArgs) -> Result<bool, String> {
    let c = &a.common;
    let names = if a.check.is_empty() { default_suite(c.construction) } else { a.check.clone() };
    let cfg = CheckConfig {
        construction: c.construction,
        k: c.k,
        grid_res: c.grid,
        slab_h: c.slab,
        engine: c.engine(),
        seed: c.seed,
        mode: c.mode(),
    };
    let outcomes: Vec<CheckOutcome> = names
        .iter()
        .map(|&name| {
            run_check(name, &cfg).unwrap_or_else(|e| CheckOutcome {
                name,
                k: c.k,
                passed: false,
                parts: vec![Part::le(format!("error: {e}"), f64::INFINITY, 0.0)],
                notes: vec![],
                seconds: 0.0,
                reports: vec![],
            })
        })
        .collect();
    let passed = outcomes.iter().all(|o| o.passed);
    for o in outcomes.iter().filter(|o| !o.passed) {
        eprintln!("FAIL {}: {}", o.name, o.summary());
    }
    let doc = serde_json::json!({
        "schema": SCHEMA,
        "construction": c.construction,
        "k": c.k,
        "passed": passed,
        "checks": outcomes,
    });
    let mut s = serde_json::to_string_pretty(&doc).map_err(|e| e.to_string())?;
    s.push('\n');
    emit(a.out.as_deref(), s.as_bytes())?;
    Ok(passed)
}

fn trajectory(a: &TrajectoryArgs) -> Result<(), String> {
    let p = ScaleParams::new(a.k).map_err(|e| e.to_string())?;
    if a.i == 0 || a.i > a.k {
        return Err(format!("block index {} outside 1..={}", a.i, a.k));
    }
    let x0 = a.x0.unwrap_or(p.eps - p.delta);
    let y0 = a.y0.unwrap_or(p.y_check(a.i) + p.nu);
    let t_end = a.t_end.unwrap_or(2.0 * t_star(&p, a.i));
    let tr = reduced_trajectory(p, a.i, x0, y0, t_end, a.samples, &FlowSpec::default()).map_err(|e| e.to_string())?;
    let mut buf = Vec::new();
    tr.write_csv(&mut buf).map_err(|e| e.to_string())?;
    emit(a.out.as_deref(), &buf)
}

fn report(a: &ReportArgs) -> Result<(), String> {
    let c = &a.common;
    let rc = c.report_config();
    // Slices need the engine itself, so build it here rather than through
    // `sigma_report`.
    let (r, engine) = match (a.emit_raster, rc.engine) {
        (true, EngineKind::LevelSet { xsub }) => {
            let p = ScaleParams::new(c.k).map_err(|e| e.to_string())?;
            let lc = LevelSetConfig { grid_res: c.grid, slab_h: c.slab, xsub, mode: rc.mode };
            let e = LevelSetEngine::build(c.construction, p, &lc).map_err(|e| e.to_string())?;
            (e.report().map_err(|e| e.to_string())?, Some(e))
        }
        _ => (sigma_report(c.construction, c.k, &rc).map_err(|e| e.to_string())?, None),
    };
    let json = to_json(&r).map_err(|e| e.to_string())?;
    let Some(dir) = a.out.as_deref() else {
        return emit(None, json.as_bytes());
    };
    std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let stem = format!("{}_k{}", c.construction, c.k);
    let json_path = dir.join(format!("{stem}.json"));
    write_file(&json_path, json.as_bytes())?;
    let mut csv = Vec::new();
    write_slab_csv(&r, &mut csv).map_err(|e| e.to_string())?;
    let csv_path = dir.join(format!("{stem}_slabs.csv"));
    write_file(&csv_path, &csv)?;
    let mut written = vec![json_path, csv_path];
    if let Some(e) = engine {
        written.extend(emit_slices(&e, &default_slices(&r), dir).map_err(|e| e.to_string())?);
    }
    for w in written {
        eprintln!("wrote {}", w.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Command::Report(a) = &cli.command {
        if a.emit_raster && a.common.density.is_some() {
            Cli::command()
                .error(ErrorKind::ArgumentConflict, "--emit-raster needs the level-set engine; drop --density")
                .exit();
        }
    }
    let res = match &cli.command {
        Command::Verify(a) => verify(a),
        Command::Trajectory(a) => trajectory(a).map(|_| true),
        Command::Report(a) => report(a).map(|_| true),
    };
    match res {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
