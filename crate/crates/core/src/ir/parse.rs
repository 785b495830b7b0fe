use std::collections::{BTreeSet, HashSet};

use super::{
    check_instruction, default_panic_names, is_valid_size, Block, Function, Instruction, IrError,
    Opcode, Param, Program, Space, Target, Varnode, REG_SLOT,
};

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Num(u64),
    Punct(char),
    Newline,
}

struct Lexer;

impl Lexer {
    fn lex(src: &str) -> Result<Vec<(Tok, usize)>, IrError> {
        let mut out = Vec::new();
        for (lineno, line) in src.lines().enumerate() {
            let line_no = lineno + 1;
            let line = line.split('#').next().unwrap_or("");
            let chars: Vec<char> = line.chars().collect();
            let mut i = 0;
            while i < chars.len() {
                let c = chars[i];
                if c.is_whitespace() {
                    i += 1;
                } else if c.is_ascii_digit() {
                    let start = i;
                    while i < chars.len() && chars[i].is_ascii_alphanumeric() {
                        i += 1;
                    }
                    let text: String = chars[start..i].iter().collect();
                    let value = parse_number(&text).ok_or_else(|| IrError::Parse {
                        line: line_no,
                        reason: format!("bad number `{text}`"),
                    })?;
                    out.push((Tok::Num(value), line_no));
                } else if c.is_alphabetic() || c == '_' || c == '$' {
                    let start = i;
                    while i < chars.len()
                        && (chars[i].is_alphanumeric() || matches!(chars[i], '_' | '.' | '$'))
                    {
                        i += 1;
                    }
                    out.push((Tok::Ident(chars[start..i].iter().collect()), line_no));
                } else if "{}()[]:,=;+-".contains(c) {
                    out.push((Tok::Punct(c), line_no));
                    i += 1;
                } else {
                    return Err(IrError::Parse {
                        line: line_no,
                        reason: format!("unexpected character `{c}`"),
                    });
                }
            }
            out.push((Tok::Newline, line_no));
        }
        Ok(out)
    }
}

fn parse_number(text: &str) -> Option<u64> {
    if let Some(hex) = text.strip_prefix("0x").or_else(|| text.strip_prefix("0X")) {
        u64::from_str_radix(hex, 16).ok()
    } else {
        text.parse().ok()
    }
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

type PResult<T> = Result<T, IrError>;

impl Parser {
    fn line(&self) -> usize {
        self.toks
            .get(self.pos)
            .or_else(|| self.toks.last())
            .map(|t| t.1)
            .unwrap_or(1)
    }

    fn err<T>(&self, reason: impl Into<String>) -> PResult<T> {
        Err(IrError::Parse {
            line: self.line(),
            reason: reason.into(),
        })
    }

    fn skip_separators(&mut self) {
        while matches!(
            self.toks.get(self.pos),
            Some((Tok::Newline, _)) | Some((Tok::Punct(';'), _))
        ) {
            self.pos += 1;
        }
    }

    /// Next significant token, skipping newlines and `;`.
    fn peek(&mut self) -> Option<&Tok> {
        self.skip_separators();
        self.toks.get(self.pos).map(|t| &t.0)
    }

    /// Next token without skipping separators.
    fn peek_raw(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.0)
    }

    fn next(&mut self) -> Option<Tok> {
        self.skip_separators();
        let t = self.toks.get(self.pos).map(|t| t.0.clone());
        self.pos += 1;
        t
    }

    fn expect_punct(&mut self, c: char) -> PResult<()> {
        match self.next() {
            Some(Tok::Punct(p)) if p == c => Ok(()),
            other => {
                self.pos -= 1;
                self.err(format!("expected `{c}`, found {}", describe(other.as_ref())))
            }
        }
    }

    fn eat_punct(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Punct(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn ident(&mut self) -> PResult<String> {
        match self.next() {
            Some(Tok::Ident(s)) => Ok(s),
            other => {
                self.pos -= 1;
                self.err(format!("expected name, found {}", describe(other.as_ref())))
            }
        }
    }

    fn number(&mut self) -> PResult<u64> {
        match self.next() {
            Some(Tok::Num(n)) => Ok(n),
            other => {
                self.pos -= 1;
                self.err(format!("expected number, found {}", describe(other.as_ref())))
            }
        }
    }

    fn size(&mut self) -> PResult<u8> {
        self.expect_punct(':')?;
        let n = self.number()?;
        match u8::try_from(n) {
            Ok(s) if is_valid_size(s) => Ok(s),
            _ => self.err(format!("invalid size {n}")),
        }
    }

    fn program(&mut self) -> PResult<Program> {
        let mut entry = None;
        let mut panics: Option<BTreeSet<String>> = None;
        let mut functions = Vec::new();
        let mut func_lines = Vec::new();
        while let Some(tok) = self.peek().cloned() {
            match tok {
                Tok::Ident(kw) if kw == "entry" => {
                    self.pos += 1;
                    entry = Some(self.ident()?);
                }
                Tok::Ident(kw) if kw == "panics" => {
                    self.pos += 1;
                    let mut names = BTreeSet::new();
                    while let Some(Tok::Ident(name)) = self.peek_raw().cloned() {
                        names.insert(name);
                        self.pos += 1;
                    }
                    panics = Some(names);
                }
                Tok::Ident(kw) if kw == "func" => {
                    func_lines.push(self.line());
                    functions.push(self.function()?);
                }
                other => return self.err(format!("unexpected {}", describe(Some(&other)))),
            }
        }
        if functions.is_empty() {
            return Err(IrError::Validation {
                location: "program".into(),
                reason: "no functions".into(),
            });
        }
        let names: HashSet<&str> = functions.iter().map(|f| f.0.name.as_str()).collect();
        for (f, calls) in &functions {
            for (callee, line) in calls {
                if !names.contains(callee.as_str()) {
                    return Err(IrError::Validation {
                        location: format!("line {line}"),
                        reason: format!("call to undefined function `{callee}` in `{}`", f.name),
                    });
                }
            }
        }
        Program::new(
            functions.into_iter().map(|f| f.0).collect(),
            entry.unwrap_or_else(|| "main".into()),
            panics.unwrap_or_else(default_panic_names),
        )
    }

    #[allow(clippy::type_complexity)]
    fn function(&mut self) -> PResult<(Function, Vec<(String, usize)>)> {
        self.pos += 1; // `func`
        let name = self.ident()?;
        let mut params = Vec::new();
        if self.eat_punct('(')
            && !self.eat_punct(')') {
                loop {
                    let pname = self.ident()?;
                    let size = self.size()?;
                    params.push(Param { name: pname, size });
                    if self.eat_punct(')') {
                        break;
                    }
                    self.expect_punct(',')?;
                }
            }
        let mut frame_size = None;
        let mut sink = false;
        loop {
            match self.peek().cloned() {
                Some(Tok::Ident(kw)) if kw == "frame" => {
                    self.pos += 1;
                    frame_size = Some(self.number()?);
                }
                Some(Tok::Ident(kw)) if kw == "sink" => {
                    self.pos += 1;
                    sink = true;
                }
                _ => break,
            }
        }
        self.expect_punct('{')?;
        let mut blocks = Vec::new();
        let mut branch_refs = Vec::new();
        let mut calls = Vec::new();
        while !self.eat_punct('}') {
            match self.peek().cloned() {
                Some(Tok::Ident(kw)) if kw == "block" => {
                    self.pos += 1;
                    let label = self.ident()?;
                    self.expect_punct(':')?;
                    let mut instructions = Vec::new();
                    loop {
                        match self.peek() {
                            None => return self.err("unterminated function body"),
                            Some(Tok::Punct('}')) => break,
                            Some(Tok::Ident(kw)) if kw == "block" => break,
                            _ => {}
                        }
                        let line = self.line();
                        let instr = self.instruction()?;
                        check_instruction(&instr).map_err(|reason| IrError::Validation {
                            location: format!("line {line}"),
                            reason,
                        })?;
                        match &instr.target {
                            Some(Target::Label(l)) => branch_refs.push((l.clone(), line)),
                            Some(Target::Function(f)) => calls.push((f.clone(), line)),
                            _ => {}
                        }
                        instructions.push(instr);
                    }
                    blocks.push(Block {
                        label,
                        instructions,
                    });
                }
                None => return self.err("unterminated function body"),
                other => {
                    return self.err(format!("expected `block`, found {}", describe(other.as_ref())))
                }
            }
        }
        let labels: HashSet<&str> = blocks.iter().map(|b| b.label.as_str()).collect();
        for (label, line) in &branch_refs {
            if !labels.contains(label.as_str()) {
                return Err(IrError::Validation {
                    location: format!("line {line}"),
                    reason: format!("unknown branch target `{label}`"),
                });
            }
        }
        let mut f = Function::new(name, params, blocks);
        if let Some(size) = frame_size {
            f = f.with_frame_size(size);
        }
        if sink {
            f = f.as_sink();
        }
        Ok((f, calls))
    }

    fn instruction(&mut self) -> PResult<Instruction> {
        let mut output = None;
        if !matches!(self.peek(), Some(Tok::Ident(s)) if Opcode::from_mnemonic(s).is_some()) {
            output = Some(self.operand()?);
            self.expect_punct('=')?;
        }
        let mnemonic = self.ident()?;
        let Some(opcode) = Opcode::from_mnemonic(&mnemonic) else {
            self.pos -= 1;
            return self.err(format!("unknown opcode `{mnemonic}`"));
        };
        let mut instr = Instruction::new(opcode, output, vec![]);
        match opcode {
            Opcode::Branch => instr.target = Some(Target::Label(self.ident()?)),
            Opcode::Cbranch => {
                instr.inputs.push(self.operand()?);
                self.expect_punct(',')?;
                instr.target = Some(Target::Label(self.ident()?));
            }
            Opcode::Call => instr.target = Some(Target::Function(self.ident()?)),
            Opcode::Return => {}
            Opcode::Load | Opcode::Store => {
                let space = match self.peek() {
                    Some(Tok::Ident(s)) if s == "ram" => Some(Space::Ram),
                    Some(Tok::Ident(s)) if s == "stk" => Some(Space::Stack),
                    _ => None,
                };
                if let Some(space) = space {
                    self.pos += 1;
                    instr.target = Some(Target::Space(space));
                }
                instr.inputs = self.operand_list()?;
            }
            _ => instr.inputs = self.operand_list()?,
        }
        Ok(instr)
    }

    fn operand_list(&mut self) -> PResult<Vec<Varnode>> {
        let mut v = vec![self.operand()?];
        // a comma on the same line continues the list
        while self.peek_raw() == Some(&Tok::Punct(',')) {
            self.pos += 1;
            v.push(self.operand()?);
        }
        Ok(v)
    }

    fn operand(&mut self) -> PResult<Varnode> {
        match self.next() {
            Some(Tok::Num(n)) => {
                let size = self.size()?;
                Ok(Varnode::constant(n, size))
            }
            Some(Tok::Ident(name)) => {
                let (space, offset) = if name == "sp" {
                    (Space::Register, super::SP_OFFSET)
                } else if let Some(idx) = slot_index(&name, 'r') {
                    (Space::Register, idx * REG_SLOT)
                } else if let Some(idx) = slot_index(&name, 'u') {
                    (Space::Unique, idx * REG_SLOT)
                } else {
                    self.pos -= 1;
                    return self.err(format!("unknown operand `{name}`"));
                };
                let size = self.size()?;
                Ok(Varnode::new(space, offset, size))
            }
            Some(Tok::Punct('[')) => {
                let space = self.ident()?;
                let v = match space.as_str() {
                    "ram" => {
                        let addr = self.number()?;
                        self.expect_punct(']')?;
                        Varnode::new(Space::Ram, addr, 0)
                    }
                    "stk" => {
                        let rel: i64 = if self.eat_punct('+') {
                            self.number()? as i64
                        } else if self.eat_punct('-') {
                            -(self.number()? as i64)
                        } else {
                            0
                        };
                        self.expect_punct(']')?;
                        Varnode::new(Space::Stack, rel as u64, 0)
                    }
                    other => return self.err(format!("unknown address space `{other}`")),
                };
                let size = self.size()?;
                Ok(Varnode { size, ..v })
            }
            other => {
                self.pos -= 1;
                self.err(format!("expected operand, found {}", describe(other.as_ref())))
            }
        }
    }
}

fn slot_index(name: &str, prefix: char) -> Option<u64> {
    let digits = name.strip_prefix(prefix)?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

fn describe(tok: Option<&Tok>) -> String {
    match tok {
        None => "end of input".into(),
        Some(Tok::Ident(s)) => format!("`{s}`"),
        Some(Tok::Num(n)) => format!("`{n:#x}`"),
        Some(Tok::Punct(c)) => format!("`{c}`"),
        Some(Tok::Newline) => "end of line".into(),
    }
}

/// Parses the textual IR into a validated [`Program`].
pub fn parse_program(source: &str) -> Result<Program, IrError> {
    let toks = Lexer::lex(source)?;
    Parser { toks, pos: 0 }.program()
}
