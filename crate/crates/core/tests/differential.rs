//! Every analyzer finding on the corpus is backed by exhaustive ground
//! truth at the same site.

use pcx::corpus::{Fixture, FIXTURES};
use pcx::detect::FindingKind;
use pcx::exec::{analyze, Mode};
use pcx::ir::Location;
use pcx::oracle::{run_oracle, Event};
use pcx::solver::Model;

/// Re-runs with the witness as the concrete seed and expects the event to
/// happen concretely at `site`.
fn replay(fx: &Fixture, patched: bool, witness: &Model, site: &Location, kind: FindingKind) {
    let mut cfg = fx.exec_config();
    cfg.overlays = false;
    match cfg.mode {
        Mode::Function { .. } => {
            for (k, v) in witness {
                cfg.seeds.insert(k.clone(), *v);
            }
        }
        Mode::Binary { len, .. } => {
            cfg.input_bytes = (0..len).map(|i| witness[&format!("in{i}")] as u8).collect();
        }
    }
    let report = analyze(&fx.program(patched), cfg, &fx.threads()).unwrap();
    let concrete = report.findings.iter().any(|g| {
        let same_site = &g.location == site;
        same_site
            && match kind {
                FindingKind::PanicReachable | FindingKind::ConcretePanic => g.kind == FindingKind::ConcretePanic,
                FindingKind::NilDerefSymbolic | FindingKind::NilDerefConcrete => g.kind == FindingKind::NilDerefConcrete,
                k => g.kind == k,
            }
    });
    assert!(concrete, "{}: witness {witness:?} does not trigger {} at {site}", fx.name, kind.name());
}

fn parse_location(s: &str) -> Location {
    let mut parts = s.rsplitn(3, ':');
    let index = parts.next().unwrap().parse().unwrap();
    let block = parts.next().unwrap().to_string();
    let function = parts.next().unwrap().to_string();
    Location { function, block, index }
}

#[test]
fn findings_are_ground_truth_sites() {
    let mut replays = 0;
    for fx in &FIXTURES {
        for patched in [false, true] {
            let program = fx.program(patched);
            let cfg = fx.exec_config();
            let truth = run_oracle(&program, &cfg, &fx.threads()).unwrap();
            let report = analyze(&program, cfg, &fx.threads()).unwrap();
            for f in &report.findings {
                let (site, event) = match f.kind {
                    // reported at the branch; the sink call site is in the detail
                    FindingKind::PanicReachable => {
                        let at = f.detail.rsplit(' ').next().unwrap();
                        (parse_location(at), Event::Panic)
                    }
                    FindingKind::ConcretePanic => (f.location.clone(), Event::Panic),
                    FindingKind::IntOverflow => (f.location.clone(), Event::Wrap),
                    FindingKind::DivByZero => (f.location.clone(), Event::DivZero),
                    FindingKind::FreedFrameAccess => (f.location.clone(), Event::Freed),
                    _ => (f.location.clone(), Event::Nil),
                };
                assert!(
                    truth.has(&site, event),
                    "{} patched={patched}: {} at {site} has no {event:?} in ground truth",
                    fx.name,
                    f.kind.name()
                );
                if let Some(w) = &f.witness {
                    replay(fx, patched, w, &site, f.kind);
                    replays += 1;
                }
            }
        }
    }
    // every buggy fixture but freed-frame carries a witness
    assert!(replays >= 7, "{replays}");
}
