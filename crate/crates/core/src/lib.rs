//! Concolic execution over a micro P-Code IR.
//!
//! The engine follows one concrete path while building symbolic shadows of
//! every value. At each input-dependent branch the untaken side is analysed
//! twice: a bounded CFG scan looks for reachable panic sinks, and a
//! copy-on-write overlay executes the untaken side for a few blocks with the
//! vulnerability detectors armed. The overlay is then discarded and the main
//! path resumes untouched.

pub mod config;
pub mod corpus;
pub mod detect;
pub mod exec;
pub mod gate;
pub mod ir;
pub mod oracle;
pub mod report;
pub mod semantics;
pub mod solver;
pub mod state;
pub mod sym;
pub mod threads;
