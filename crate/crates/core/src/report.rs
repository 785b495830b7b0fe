//! Report emission: a JSON findings file and a short text summary.
//!
//! JSON schema (`pcx-report/1`):
//!
//! ```text
//! {
//!   "schema": "pcx-report/1",
//!   "program": str, "mode": {...}, "profile": str,
//!   "status": "returned" | {"halted": reason} | {"panicked": sink},
//!   "findings": [{ "kind", "mechanism", "location": {function, block, index},
//!                  "on_overlay", "overlay_depth", "branch", "path_condition",
//!                  "witness", "detail" }],
//!   "inputs": {name: value},
//!   "stats": { "steps", "solver": {...}, "gate": {...}, "overlays": [...],
//!              "context_switches", "mirroring_mismatches" }
//! }
//! ```

use std::fmt::Write as _;

use serde::Serialize;

use crate::exec::{ExecConfig, Mode, Profile, RunReport, StepOutcome};

#[derive(Serialize)]
struct Document<'a> {
    schema: &'static str,
    program: &'a str,
    mode: &'a Mode,
    profile: Profile,
    #[serde(flatten)]
    report: &'a RunReport,
}

pub const SCHEMA: &str = "pcx-report/1";

pub fn to_json(program_name: &str, config: &ExecConfig, report: &RunReport) -> String {
    let doc = Document {
        schema: SCHEMA,
        program: program_name,
        mode: &config.mode,
        profile: config.profile,
        report,
    };
    serde_json::to_string_pretty(&doc).expect("report is serialisable")
}

pub fn status_text(s: &StepOutcome) -> String {
    match s {
        StepOutcome::Continue => "running".into(),
        StepOutcome::Returned => "returned".into(),
        StepOutcome::Halted(r) => format!("halted ({r:?})").to_lowercase(),
        StepOutcome::Panicked(sink) => format!("panicked in {sink}"),
    }
}

pub fn summary(program_name: &str, report: &RunReport) -> String {
    let mut s = String::new();
    let st = &report.stats;
    let _ = writeln!(s, "program   {program_name}");
    let _ = writeln!(s, "status    {}", status_text(&report.status));
    let _ = writeln!(
        s,
        "steps     {}  overlays {}  solver queries {} (sat {}, unsat {}, unknown {})  gate skips {}",
        st.steps,
        st.overlays.len(),
        st.solver.queries,
        st.solver.sat,
        st.solver.unsat,
        st.solver.unknown,
        st.gate.skipped
    );
    let _ = writeln!(s, "findings  {}", report.findings.len());
    for f in &report.findings {
        let origin = if f.on_overlay {
            format!("overlay depth {}", f.overlay_depth)
        } else {
            "main path".to_string()
        };
        let _ = writeln!(
            s,
            "  {:<20} {:<18} {:<28} {}",
            f.kind.name(),
            f.mechanism.name(),
            f.location.to_string(),
            origin
        );
        if let Some(w) = &f.witness {
            let parts: Vec<String> = w.iter().map(|(k, v)| format!("{k}={v:#x}")).collect();
            let _ = writeln!(s, "    witness {}", parts.join(" "));
        }
        let _ = writeln!(s, "    {}", f.detail);
    }
    s
}
