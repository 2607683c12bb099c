//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Measured values are printed next to their limits either way.

use cylsec_core::checks::{run_check, section_parts, CheckConfig, CheckName, CheckOutcome, Part};
use cylsec_core::sections::{sigma_report, Construction, ReportConfig, SectionReport};
use std::collections::BTreeMap;
use std::time::Instant;

type Key = (Construction, usize);

#[derive(Default)]
struct Reports {
    cache: BTreeMap<(u8, usize), (SectionReport, f64)>,
}

impl Reports {
    /// The report with its wall time, computed once per key.
    fn get(&mut self, (c, k): Key) -> (SectionReport, f64) {
        let tag = match c {
            Construction::Section3 => 3,
            Construction::Section4 => 4,
        };
        self.cache
            .entry((tag, k))
            .or_insert_with(|| {
                let t = Instant::now();
                let r = sigma_report(c, k, &ReportConfig::default()).expect("report");
                (r, t.elapsed().as_secs_f64())
            })
            .clone()
    }
}

fn check(name: CheckName, construction: Construction, k: usize) -> CheckOutcome {
    let cfg = CheckConfig { construction, k, ..CheckConfig::default() };
    run_check(name, &cfg).unwrap_or_else(|e| CheckOutcome {
        name,
        k,
        passed: false,
        parts: vec![Part::le(format!("error: {e}"), f64::INFINITY, 0.0)],
        notes: vec![],
        seconds: 0.0,
        reports: vec![],
    })
}

fn tagged(prefix: &str, parts: Vec<Part>) -> Vec<Part> {
    parts.into_iter().map(|p| Part { what: format!("{prefix}: {}", p.what), ..p }).collect()
}

fn runs(outcomes: &[CheckOutcome]) -> Vec<Part> {
    outcomes.iter().flat_map(|o| tagged(&format!("k={}", o.k), o.parts.clone())).collect()
}

fn main() {
    let mut rep = Reports::default();
    let mut results: Vec<(u32, &str, Vec<Part>, Vec<String>)> = Vec::new();
    let s3 = Construction::Section3;
    let s4 = Construction::Section4;

    let t = Instant::now();
    let o: Vec<_> = [2, 4].iter().map(|&k| check(CheckName::P4, s3, k)).collect();
    let mut parts = runs(&o);
    parts.push(Part::le("runtime [s]", t.elapsed().as_secs_f64(), 60.0));
    results.push((1, "translation exactness, section3", parts, vec![]));

    let o = [check(CheckName::Fixed, s3, 4), check(CheckName::Fixed, s4, 4)];
    let parts = [tagged("section3", o[0].parts.clone()), tagged("section4", o[1].parts.clone())].concat();
    results.push((2, "fixing exactness", parts, vec![]));

    results.push((3, "section4 translation by 2i", check(CheckName::P6, s4, 2).parts, vec![]));
    results.push((4, "conjugation trajectory corner at t*", check(CheckName::Gamma, s4, 2).parts, vec![]));

    let o: Vec<_> = [2, 4, 8].iter().map(|&k| check(CheckName::Energy, s4, k)).collect();
    let notes = o.iter().flat_map(|c| c.notes.clone()).collect();
    results.push((5, "energy bound", runs(&o), notes));

    let mut parts = Vec::new();
    for k in [4, 8] {
        let (r, secs) = rep.get((s3, k));
        parts.extend(tagged(&format!("k={k}"), section_parts(&r)));
        parts.push(Part::le(format!("k={k}: runtime [s]"), secs, 600.0));
    }
    results.push((6, "section bounds, section3", parts, vec![]));

    let (r, secs) = rep.get((s4, 4));
    let mut parts = section_parts(&r);
    parts.push(Part::le("runtime [s]", secs, 1200.0));
    results.push((7, "section bounds, section4", parts, vec![]));

    let mut parts = Vec::new();
    let mut notes = Vec::new();
    for c in [s3, s4] {
        let (a, b) = (rep.get((c, 4)).0, rep.get((c, 8)).0);
        let ratio = b.p_set.sup_outer / a.p_set.sup_outer;
        notes.push(format!("{c}: sup_outer {:.6} (k=4), {:.6} (k=8)", a.p_set.sup_outer, b.p_set.sup_outer));
        parts.push(Part::le(format!("{c}: sup_outer(8) / sup_outer(4)"), ratio, 0.6));
    }
    results.push((8, "vanishing trend", parts, notes));

    let o: Vec<_> = [(s3, 2), (s3, 4), (s4, 2), (s4, 4)]
        .iter()
        .map(|&(c, k)| (c, check(CheckName::Symplectic, c, k)))
        .collect();
    let parts = o.iter().flat_map(|(c, r)| tagged(&format!("{c} k={}", r.k), r.parts.clone())).collect();
    results.push((9, "symplecticity defect", parts, vec![]));

    results.push((10, "measure engine oracles", check(CheckName::Raster, s3, 2).parts, vec![]));
    results.push((11, "capacity axiom spot checks", check(CheckName::Capacity, s3, 2).parts, vec![]));

    let mut failed = 0;
    for (id, title, parts, notes) in &results {
        let pass = parts.iter().all(|p| p.pass);
        failed += usize::from(!pass);
        println!("{} {id:>2} {title}", if pass { "PASS" } else { "FAIL" });
        for p in parts {
            let mark = if p.pass { "ok  " } else { "FAIL" };
            println!("       {mark} {}: {:.6e} <= {:.6e}", p.what, p.value, p.limit);
        }
        for n in notes {
            println!("       note {n}");
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
