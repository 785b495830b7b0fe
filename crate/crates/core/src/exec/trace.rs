use std::fmt::Write as _;

use serde::Serialize;

use crate::ir::Opcode;

/// One executed main-path instruction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TraceRecord {
    pub step: u64,
    pub tid: u64,
    pub function: String,
    pub block: String,
    pub index: usize,
    pub opcode: Opcode,
    pub inputs: Vec<u128>,
    pub output: Option<u128>,
    pub output_symbolic: bool,
}

impl TraceRecord {
    /// Tab-separated: step, tid, func, block, idx, opcode, ins, out, sym.
    pub fn to_line(&self) -> String {
        let ins = if self.inputs.is_empty() {
            "-".to_string()
        } else {
            self.inputs
                .iter()
                .map(|v| format!("{v:#x}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        let out = self.output.map_or("-".to_string(), |v| format!("{v:#x}"));
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.step,
            self.tid,
            self.function,
            self.block,
            self.index,
            self.opcode,
            ins,
            out,
            if self.output_symbolic { "S" } else { "-" }
        )
    }
}

pub fn render_trace(records: &[TraceRecord]) -> String {
    let mut s = String::new();
    for r in records {
        let _ = writeln!(s, "{}", r.to_line());
    }
    s
}
