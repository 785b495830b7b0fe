//! Micro P-Code: a 23-opcode register-transfer IR, its textual form, and the
//! control-flow and call graphs built over it.

mod cfg;
mod parse;
mod render;

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use indexmap::IndexMap;
use serde::Serialize;
use thiserror::Error;

pub use cfg::{build_call_graph, build_cfg, CallGraph, Cfg};
pub use parse::parse_program;
pub use render::render_program;

/// Width of one register slot in bytes. `rN` lives at offset `N * REG_SLOT`.
pub const REG_SLOT: u64 = 16;
/// Register offset of `sp`, which the executor keeps equal to the current
/// frame base in STACK space.
pub const SP_OFFSET: u64 = 0xfff0;
/// Register that receives the goroutine descriptor address on thread attach.
pub const DESCRIPTOR_REG: u64 = 14;

pub const DEFAULT_PANIC_NAMES: [&str; 6] = [
    "panic",
    "fatal",
    "abort",
    "runtime.nilpanic",
    "runtime.gopanic",
    "panicIndex",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Space {
    Const,
    Register,
    Unique,
    Ram,
    Stack,
}

impl Space {
    pub fn name(self) -> &'static str {
        match self {
            Space::Const => "const",
            Space::Register => "register",
            Space::Unique => "unique",
            Space::Ram => "ram",
            Space::Stack => "stk",
        }
    }
}

/// An operand: `(space, offset, size)`.
///
/// STACK offsets written as `[stk±off]` are relative to the current frame
/// base and stored two's-complement.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Varnode {
    pub space: Space,
    pub offset: u64,
    pub size: u8,
}

impl Varnode {
    pub fn new(space: Space, offset: u64, size: u8) -> Self {
        Varnode { space, offset, size }
    }

    pub fn constant(value: u64, size: u8) -> Self {
        Varnode::new(Space::Const, value, size)
    }

    pub fn reg(index: u64, size: u8) -> Self {
        Varnode::new(Space::Register, index * REG_SLOT, size)
    }

    pub fn unique(index: u64, size: u8) -> Self {
        Varnode::new(Space::Unique, index * REG_SLOT, size)
    }

    pub fn ram(addr: u64, size: u8) -> Self {
        Varnode::new(Space::Ram, addr, size)
    }

    pub fn stack(rel: i64, size: u8) -> Self {
        Varnode::new(Space::Stack, rel as u64, size)
    }

    pub fn sp() -> Self {
        Varnode::new(Space::Register, SP_OFFSET, 8)
    }

    pub fn is_const(&self) -> bool {
        self.space == Space::Const
    }

    pub fn bits(&self) -> u32 {
        u32::from(self.size) * 8
    }
}

pub fn is_valid_size(size: u8) -> bool {
    matches!(size, 1 | 2 | 4 | 8 | 16)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Opcode {
    Copy,
    Load,
    Store,
    Branch,
    Cbranch,
    Call,
    Return,
    IntAdd,
    IntSub,
    IntMult,
    IntDiv,
    IntRem,
    IntEqual,
    IntNotequal,
    IntLess,
    IntSless,
    IntZext,
    IntSext,
    IntAnd,
    IntOr,
    IntXor,
    IntLeft,
    IntRight,
}

impl Opcode {
    pub const ALL: [Opcode; 23] = [
        Opcode::Copy,
        Opcode::Load,
        Opcode::Store,
        Opcode::Branch,
        Opcode::Cbranch,
        Opcode::Call,
        Opcode::Return,
        Opcode::IntAdd,
        Opcode::IntSub,
        Opcode::IntMult,
        Opcode::IntDiv,
        Opcode::IntRem,
        Opcode::IntEqual,
        Opcode::IntNotequal,
        Opcode::IntLess,
        Opcode::IntSless,
        Opcode::IntZext,
        Opcode::IntSext,
        Opcode::IntAnd,
        Opcode::IntOr,
        Opcode::IntXor,
        Opcode::IntLeft,
        Opcode::IntRight,
    ];

    pub fn mnemonic(self) -> &'static str {
        match self {
            Opcode::Copy => "COPY",
            Opcode::Load => "LOAD",
            Opcode::Store => "STORE",
            Opcode::Branch => "BRANCH",
            Opcode::Cbranch => "CBRANCH",
            Opcode::Call => "CALL",
            Opcode::Return => "RETURN",
            Opcode::IntAdd => "INT_ADD",
            Opcode::IntSub => "INT_SUB",
            Opcode::IntMult => "INT_MULT",
            Opcode::IntDiv => "INT_DIV",
            Opcode::IntRem => "INT_REM",
            Opcode::IntEqual => "INT_EQUAL",
            Opcode::IntNotequal => "INT_NOTEQUAL",
            Opcode::IntLess => "INT_LESS",
            Opcode::IntSless => "INT_SLESS",
            Opcode::IntZext => "INT_ZEXT",
            Opcode::IntSext => "INT_SEXT",
            Opcode::IntAnd => "INT_AND",
            Opcode::IntOr => "INT_OR",
            Opcode::IntXor => "INT_XOR",
            Opcode::IntLeft => "INT_LEFT",
            Opcode::IntRight => "INT_RIGHT",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<Opcode> {
        Opcode::ALL.iter().copied().find(|op| op.mnemonic() == s)
    }

    pub fn is_terminator(self) -> bool {
        matches!(self, Opcode::Branch | Opcode::Cbranch | Opcode::Return)
    }

    /// Two equal-width inputs, same-width output.
    pub fn is_arith(self) -> bool {
        matches!(
            self,
            Opcode::IntAdd
                | Opcode::IntSub
                | Opcode::IntMult
                | Opcode::IntDiv
                | Opcode::IntRem
                | Opcode::IntAnd
                | Opcode::IntOr
                | Opcode::IntXor
        )
    }

    /// Two equal-width inputs, one-byte boolean output.
    pub fn is_compare(self) -> bool {
        matches!(
            self,
            Opcode::IntEqual | Opcode::IntNotequal | Opcode::IntLess | Opcode::IntSless
        )
    }

    pub fn is_shift(self) -> bool {
        matches!(self, Opcode::IntLeft | Opcode::IntRight)
    }

    pub fn is_extension(self) -> bool {
        matches!(self, Opcode::IntZext | Opcode::IntSext)
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

/// Non-varnode operand of an instruction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Target {
    /// Block label for BRANCH / CBRANCH.
    Label(String),
    /// Callee name for CALL.
    Function(String),
    /// Address space dereferenced by LOAD / STORE.
    Space(Space),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Instruction {
    pub opcode: Opcode,
    pub output: Option<Varnode>,
    pub inputs: Vec<Varnode>,
    pub target: Option<Target>,
}

impl Instruction {
    pub fn new(opcode: Opcode, output: Option<Varnode>, inputs: Vec<Varnode>) -> Self {
        let target = match opcode {
            Opcode::Load | Opcode::Store => Some(Target::Space(Space::Ram)),
            _ => None,
        };
        Instruction { opcode, output, inputs, target }
    }

    pub fn with_target(mut self, target: Target) -> Self {
        self.target = Some(target);
        self
    }

    pub fn label(&self) -> Option<&str> {
        match &self.target {
            Some(Target::Label(l)) => Some(l),
            _ => None,
        }
    }

    pub fn callee(&self) -> Option<&str> {
        match &self.target {
            Some(Target::Function(f)) => Some(f),
            _ => None,
        }
    }

    /// Space dereferenced by a LOAD or STORE.
    pub fn mem_space(&self) -> Space {
        match &self.target {
            Some(Target::Space(s)) => *s,
            _ => Space::Ram,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Terminator {
    Branch,
    Cbranch,
    Return,
    Fallthrough,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub label: String,
    pub instructions: Vec<Instruction>,
}

impl Block {
    pub fn terminator(&self) -> Terminator {
        match self.instructions.last().map(|i| i.opcode) {
            Some(Opcode::Branch) => Terminator::Branch,
            Some(Opcode::Cbranch) => Terminator::Cbranch,
            Some(Opcode::Return) => Terminator::Return,
            _ => Terminator::Fallthrough,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Param {
    pub name: String,
    pub size: u8,
}

#[derive(Clone, Debug)]
pub struct Function {
    pub name: String,
    pub params: Vec<Param>,
    pub blocks: Vec<Block>,
    pub entry: String,
    pub frame_size: u64,
    pub is_panic_sink: bool,
    labels: HashMap<String, usize>,
}

impl PartialEq for Function {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.params == other.params
            && self.blocks == other.blocks
            && self.entry == other.entry
            && self.frame_size == other.frame_size
            && self.is_panic_sink == other.is_panic_sink
    }
}

impl Eq for Function {}

pub const DEFAULT_FRAME_SIZE: u64 = 32;

impl Function {
    /// Builds a function whose entry is its first block. Label resolution is
    /// checked by [`Program::new`].
    pub fn new(name: impl Into<String>, params: Vec<Param>, blocks: Vec<Block>) -> Self {
        let entry = blocks.first().map(|b| b.label.clone()).unwrap_or_default();
        let labels = blocks
            .iter()
            .enumerate()
            .map(|(i, b)| (b.label.clone(), i))
            .collect();
        Function {
            name: name.into(),
            params,
            blocks,
            entry,
            frame_size: DEFAULT_FRAME_SIZE,
            is_panic_sink: false,
            labels,
        }
    }

    pub fn with_frame_size(mut self, size: u64) -> Self {
        self.frame_size = size;
        self
    }

    pub fn as_sink(mut self) -> Self {
        self.is_panic_sink = true;
        self
    }

    pub fn block_index(&self, label: &str) -> Option<usize> {
        self.labels.get(label).copied()
    }

    pub fn entry_index(&self) -> usize {
        self.block_index(&self.entry).unwrap_or(0)
    }

    /// Successor block indices of block `idx`, taken target first.
    pub fn successors(&self, idx: usize) -> Vec<usize> {
        let block = &self.blocks[idx];
        let next = || (idx + 1 < self.blocks.len()).then_some(idx + 1);
        let label_target = || {
            block
                .instructions
                .last()
                .and_then(Instruction::label)
                .and_then(|l| self.block_index(l))
        };
        match block.terminator() {
            Terminator::Return => vec![],
            Terminator::Branch => label_target().into_iter().collect(),
            Terminator::Cbranch => label_target().into_iter().chain(next()).collect(),
            Terminator::Fallthrough => next().into_iter().collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Program {
    pub functions: IndexMap<String, Function>,
    pub entry_function: String,
    pub panic_names: BTreeSet<String>,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum IrError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("{location}: {reason}")]
    Validation { location: String, reason: String },
}

impl IrError {
    fn validation(location: impl Into<String>, reason: impl Into<String>) -> Self {
        IrError::Validation {
            location: location.into(),
            reason: reason.into(),
        }
    }

    pub fn is_validation(&self) -> bool {
        matches!(self, IrError::Validation { .. })
    }
}

pub fn default_panic_names() -> BTreeSet<String> {
    DEFAULT_PANIC_NAMES.iter().map(|s| s.to_string()).collect()
}

impl Program {
    /// Validates and assembles a program. Functions whose name is in
    /// `panic_names` are marked as panic sinks.
    pub fn new(
        functions: Vec<Function>,
        entry_function: impl Into<String>,
        panic_names: BTreeSet<String>,
    ) -> Result<Program, IrError> {
        let entry_function = entry_function.into();
        if functions.is_empty() {
            return Err(IrError::validation("program", "no functions"));
        }
        let mut map = IndexMap::new();
        for mut f in functions {
            if panic_names.contains(&f.name) {
                f.is_panic_sink = true;
            }
            if map.contains_key(&f.name) {
                return Err(IrError::validation(&f.name, "duplicate function"));
            }
            map.insert(f.name.clone(), f);
        }
        let program = Program {
            functions: map,
            entry_function,
            panic_names,
        };
        program.validate()?;
        Ok(program)
    }

    pub fn function(&self, name: &str) -> Option<&Function> {
        self.functions.get(name)
    }

    pub fn is_sink(&self, name: &str) -> bool {
        self.functions.get(name).is_some_and(|f| f.is_panic_sink)
    }

    pub fn instruction(&self, func: &str, block: usize, index: usize) -> Option<&Instruction> {
        self.functions
            .get(func)?
            .blocks
            .get(block)?
            .instructions
            .get(index)
    }

    fn validate(&self) -> Result<(), IrError> {
        if !self.functions.contains_key(&self.entry_function) {
            return Err(IrError::validation(
                "program",
                format!("entry function `{}` not defined", self.entry_function),
            ));
        }
        for f in self.functions.values() {
            self.validate_function(f)?;
        }
        Ok(())
    }

    fn validate_function(&self, f: &Function) -> Result<(), IrError> {
        if f.blocks.is_empty() {
            return Err(IrError::validation(&f.name, "function has no blocks"));
        }
        if f.block_index(&f.entry).is_none() {
            return Err(IrError::validation(&f.name, "entry label missing"));
        }
        if f.labels.len() != f.blocks.len() {
            return Err(IrError::validation(&f.name, "duplicate block label"));
        }
        for p in &f.params {
            if !is_valid_size(p.size) || p.size == 16 {
                return Err(IrError::validation(
                    &f.name,
                    format!("parameter `{}` has invalid size {}", p.name, p.size),
                ));
            }
        }
        let last = f.blocks.len() - 1;
        for (bi, block) in f.blocks.iter().enumerate() {
            let loc = format!("{}:{}", f.name, block.label);
            if block.instructions.is_empty() {
                return Err(IrError::validation(loc, "empty block"));
            }
            for (ii, instr) in block.instructions.iter().enumerate() {
                let at = format!("{loc}:{ii}");
                if instr.opcode.is_terminator() && ii + 1 != block.instructions.len() {
                    return Err(IrError::validation(
                        at,
                        format!("{} must terminate its block", instr.opcode),
                    ));
                }
                check_instruction(instr).map_err(|r| IrError::validation(&at, r))?;
                match instr.opcode {
                    Opcode::Branch | Opcode::Cbranch => {
                        let label = instr.label().unwrap_or_default();
                        if f.block_index(label).is_none() {
                            return Err(IrError::validation(
                                at,
                                format!("unknown branch target `{label}`"),
                            ));
                        }
                    }
                    Opcode::Call => {
                        let callee = instr.callee().unwrap_or_default();
                        if !self.functions.contains_key(callee) {
                            return Err(IrError::validation(
                                at,
                                format!("call to undefined function `{callee}`"),
                            ));
                        }
                    }
                    _ => {}
                }
            }
            let term = block.terminator();
            if bi == last && matches!(term, Terminator::Fallthrough | Terminator::Cbranch) {
                return Err(IrError::validation(loc, "last block falls through"));
            }
        }
        Ok(())
    }
}

/// Arity, target and size rules per opcode.
fn check_instruction(instr: &Instruction) -> Result<(), String> {
    use Opcode::*;
    let op = instr.opcode;
    for v in instr.inputs.iter().chain(instr.output.iter()) {
        if !is_valid_size(v.size) {
            return Err(format!("invalid size {}", v.size));
        }
        if v.is_const() && v.size == 16 {
            return Err("16-byte constants are not representable".into());
        }
    }
    if let Some(out) = instr.output {
        if out.is_const() {
            return Err("write to CONST varnode".into());
        }
    }
    let n_in = instr.inputs.len();
    let want = |inputs: usize, output: bool| -> Result<(), String> {
        if n_in != inputs || instr.output.is_some() != output {
            Err(format!(
                "{op} takes {inputs} input(s) and {} output",
                if output { "one" } else { "no" }
            ))
        } else {
            Ok(())
        }
    };
    let target_ok = match (&instr.target, op) {
        (Some(Target::Label(_)), Branch | Cbranch) => true,
        (Some(Target::Function(_)), Call) => true,
        (Some(Target::Space(s)), Load | Store) => matches!(s, Space::Ram | Space::Stack),
        (None, Branch | Cbranch | Call | Load | Store) => false,
        (None, _) => true,
        _ => false,
    };
    if !target_ok {
        return Err(format!("{op} has a malformed target"));
    }
    let size = |i: usize| instr.inputs[i].size;
    let out_size = instr.output.map(|o| o.size).unwrap_or(0);
    match op {
        Copy => {
            want(1, true)?;
            if out_size != size(0) {
                return Err(format!("size mismatch: {} into {}", size(0), out_size));
            }
        }
        Load => {
            want(1, true)?;
            if size(0) > 8 {
                return Err("pointer wider than 8 bytes".into());
            }
        }
        Store => {
            want(2, false)?;
            if size(0) > 8 {
                return Err("pointer wider than 8 bytes".into());
            }
        }
        Branch | Call | Return => want(0, false)?,
        Cbranch => {
            want(1, false)?;
            if size(0) != 1 {
                return Err("CBRANCH condition must be 1 byte".into());
            }
        }
        IntZext | IntSext => {
            want(1, true)?;
            if out_size <= size(0) {
                return Err(format!("{op} must widen ({} to {})", size(0), out_size));
            }
        }
        _ if op.is_arith() => {
            want(2, true)?;
            if size(0) != size(1) || out_size != size(0) {
                return Err(format!(
                    "size mismatch: {} {} -> {}",
                    size(0),
                    size(1),
                    out_size
                ));
            }
        }
        _ if op.is_compare() => {
            want(2, true)?;
            if size(0) != size(1) {
                return Err(format!("size mismatch: {} vs {}", size(0), size(1)));
            }
            if out_size != 1 {
                return Err("comparison output must be 1 byte".into());
            }
        }
        _ if op.is_shift() => {
            want(2, true)?;
            if out_size != size(0) {
                return Err(format!("size mismatch: {} -> {}", size(0), out_size));
            }
        }
        _ => unreachable!("opcode classes are exhaustive"),
    }
    Ok(())
}

/// `(function, block index, instruction index)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Location {
    pub function: String,
    pub block: String,
    pub index: usize,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.function, self.block, self.index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_block(instrs: Vec<Instruction>) -> Result<Program, IrError> {
        let f = Function::new(
            "main",
            vec![],
            vec![Block {
                label: "e".into(),
                instructions: instrs,
            }],
        );
        Program::new(vec![f], "main", default_panic_names())
    }

    #[test]
    fn rejects_const_output() {
        let err = one_block(vec![
            Instruction::new(
                Opcode::Copy,
                Some(Varnode::constant(1, 8)),
                vec![Varnode::constant(2, 8)],
            ),
            Instruction::new(Opcode::Return, None, vec![]),
        ])
        .unwrap_err();
        assert!(err.to_string().contains("CONST"), "{err}");
    }

    #[test]
    fn rejects_terminator_mid_block() {
        let err = one_block(vec![
            Instruction::new(Opcode::Return, None, vec![]),
            Instruction::new(Opcode::Return, None, vec![]),
        ])
        .unwrap_err();
        assert!(err.is_validation());
    }

    #[test]
    fn rejects_fallthrough_off_the_end() {
        let err = one_block(vec![Instruction::new(
            Opcode::Copy,
            Some(Varnode::reg(0, 8)),
            vec![Varnode::constant(2, 8)],
        )])
        .unwrap_err();
        assert!(err.to_string().contains("falls through"));
    }

    #[test]
    fn rejects_empty_program() {
        let err = Program::new(vec![], "main", default_panic_names()).unwrap_err();
        assert!(err.is_validation());
    }

    #[test]
    fn marks_default_sinks() {
        let sink = Function::new(
            "panicIndex",
            vec![],
            vec![Block {
                label: "e".into(),
                instructions: vec![Instruction::new(Opcode::Return, None, vec![])],
            }],
        );
        let main = Function::new(
            "main",
            vec![],
            vec![Block {
                label: "e".into(),
                instructions: vec![
                    Instruction::new(Opcode::Call, None, vec![])
                        .with_target(Target::Function("panicIndex".into())),
                    Instruction::new(Opcode::Return, None, vec![]),
                ],
            }],
        );
        let p = Program::new(vec![main, sink], "main", default_panic_names()).unwrap();
        assert!(p.is_sink("panicIndex"));
        assert!(!p.is_sink("main"));
    }
}
