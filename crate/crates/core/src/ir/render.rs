use std::fmt::Write;

use super::{default_panic_names, Instruction, Opcode, Program, Space, Target, Varnode, REG_SLOT, SP_OFFSET};

pub(crate) fn render_varnode(v: &Varnode) -> String {
    match v.space {
        Space::Const => format!("{:#x}:{}", v.offset, v.size),
        Space::Register if v.offset == SP_OFFSET => format!("sp:{}", v.size),
        Space::Register => format!("r{}:{}", v.offset / REG_SLOT, v.size),
        Space::Unique => format!("u{}:{}", v.offset / REG_SLOT, v.size),
        Space::Ram => format!("[ram {:#x}]:{}", v.offset, v.size),
        Space::Stack => {
            let rel = v.offset as i64;
            if rel < 0 {
                format!("[stk-{}]:{}", rel.unsigned_abs(), v.size)
            } else {
                format!("[stk+{rel}]:{}", v.size)
            }
        }
    }
}

pub(crate) fn render_instruction(i: &Instruction) -> String {
    let mut s = String::new();
    if let Some(out) = &i.output {
        let _ = write!(s, "{} = ", render_varnode(out));
    }
    s.push_str(i.opcode.mnemonic());
    let operands: Vec<String> = i.inputs.iter().map(render_varnode).collect();
    match (&i.target, i.opcode) {
        (Some(Target::Label(l)), Opcode::Cbranch) => {
            let _ = write!(s, " {}, {l}", operands.join(", "));
        }
        (Some(Target::Label(l)), _) | (Some(Target::Function(l)), _) => {
            let _ = write!(s, " {l}");
        }
        (Some(Target::Space(space)), _) => {
            let _ = write!(s, " {} {}", space.name(), operands.join(", "));
        }
        (None, _) if !operands.is_empty() => {
            let _ = write!(s, " {}", operands.join(", "));
        }
        (None, _) => {}
    }
    s
}

/// Renders a program in canonical textual form.
pub fn render_program(p: &Program) -> String {
    let mut out = String::new();
    if p.entry_function != "main" {
        let _ = writeln!(out, "entry {}", p.entry_function);
    }
    if p.panic_names != default_panic_names() {
        let names: Vec<&str> = p.panic_names.iter().map(String::as_str).collect();
        let _ = writeln!(out, "panics {}", names.join(" "));
    }
    for f in p.functions.values() {
        let params: Vec<String> = f
            .params
            .iter()
            .map(|p| format!("{}:{}", p.name, p.size))
            .collect();
        let _ = write!(out, "func {}({}) frame {}", f.name, params.join(", "), f.frame_size);
        if f.is_panic_sink {
            out.push_str(" sink");
        }
        out.push_str(" {\n");
        for b in &f.blocks {
            let _ = writeln!(out, "  block {}:", b.label);
            for i in &b.instructions {
                let _ = writeln!(out, "    {}", render_instruction(i));
            }
        }
        out.push_str("}\n");
    }
    out
}
