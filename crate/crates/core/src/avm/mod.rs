//! The Apollo virtual machine: instruction set, program container, `.avm`
//! text format, and the stack machine with its accelerator simulator.

pub mod accel;
pub mod heap;
pub mod text;
pub mod vm;

use std::fmt;
use std::str::FromStr;

use crate::bstt::FlatBstt;
use crate::tensor::Shape;

pub use accel::{MvmBackend, Simulator};
pub use vm::{GlobalValue, Stats, Trap, TrapKind, Vm, VmWord};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment {
    Constant,
    Global,
    Pointer,
    This,
    Literal,
}

impl Segment {
    pub fn name(self) -> &'static str {
        match self {
            Segment::Constant => "constant",
            Segment::Global => "global",
            Segment::Pointer => "pointer",
            Segment::This => "this",
            Segment::Literal => "literal",
        }
    }
}

impl FromStr for Segment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "constant" => Segment::Constant,
            "global" => Segment::Global,
            "pointer" => Segment::Pointer,
            "this" => Segment::This,
            "literal" => Segment::Literal,
            _ => return Err(format!("unknown segment `{s}`")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Constant {
    Int(i64),
    Float(f64),
}

impl fmt::Display for Constant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Constant::Int(v) => write!(f, "{v}"),
            Constant::Float(v) => f.write_str(&crate::frontend::ast::float_literal(*v)),
        }
    }
}

impl FromStr for Constant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if let Ok(v) = s.parse::<i64>() {
            return Ok(Constant::Int(v));
        }
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() && s.contains('.') => Ok(Constant::Float(v)),
            _ => Err(format!("invalid constant `{s}`")),
        }
    }
}

/// Host-side subroutines reachable through `call name n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Builtin {
    Malloc,
    AllocTensor,
    Fiber,
    WriteFiber,
    Diag,
    CrossMat,
}

impl Builtin {
    pub fn name(self) -> &'static str {
        match self {
            Builtin::Malloc => "malloc",
            Builtin::AllocTensor => "alloc_tensor",
            Builtin::Fiber => "fiber",
            Builtin::WriteFiber => "writefiber",
            Builtin::Diag => "diag",
            Builtin::CrossMat => "crossmat",
        }
    }

    /// Whether `n` arguments is a valid call. `alloc_tensor` takes its rank
    /// followed by that many extents; `fiber` and `writefiber` have a short
    /// fiber-index form and a long strided form.
    pub fn accepts_arity(self, n: usize) -> bool {
        match self {
            Builtin::Malloc | Builtin::CrossMat => n == 1,
            Builtin::AllocTensor => n >= 1,
            Builtin::Fiber => n == 2 || n == 4,
            Builtin::WriteFiber => n == 3 || n == 5,
            Builtin::Diag => n == 2,
        }
    }
}

impl FromStr for Builtin {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "malloc" => Builtin::Malloc,
            "alloc_tensor" => Builtin::AllocTensor,
            "fiber" => Builtin::Fiber,
            "writefiber" => Builtin::WriteFiber,
            "diag" => Builtin::Diag,
            "crossmat" => Builtin::CrossMat,
            _ => return Err(format!("unknown builtin `{s}`")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Instruction {
    PushConstant(Constant),
    /// Push from any segment but `constant`.
    Push(Segment, usize),
    Pop(Segment, usize),
    Neg,
    Add,
    Sub,
    Mult,
    Div,
    Mvmul,
    Call(Builtin, usize),
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Instruction::PushConstant(c) => write!(f, "push constant {c}"),
            Instruction::Push(seg, i) => write!(f, "push {} {i}", seg.name()),
            Instruction::Pop(seg, i) => write!(f, "pop {} {i}", seg.name()),
            Instruction::Neg => f.write_str("neg"),
            Instruction::Add => f.write_str("add"),
            Instruction::Sub => f.write_str("sub"),
            Instruction::Mult => f.write_str("mult"),
            Instruction::Div => f.write_str("div"),
            Instruction::Mvmul => f.write_str("mvmul"),
            Instruction::Call(b, n) => write!(f, "call {} {n}", b.name()),
        }
    }
}

impl FromStr for Instruction {
    type Err = String;

    fn from_str(line: &str) -> Result<Self, String> {
        let words: Vec<&str> = line.split_whitespace().collect();
        let index = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| format!("invalid index `{s}`"))
        };
        Ok(match words.as_slice() {
            ["push", "constant", c] => Instruction::PushConstant(c.parse()?),
            ["push", seg, i] => Instruction::Push(seg.parse()?, index(i)?),
            ["pop", seg, i] => {
                let seg: Segment = seg.parse()?;
                if !matches!(seg, Segment::Global | Segment::Pointer | Segment::This) {
                    return Err(format!("cannot pop into the {} segment", seg.name()));
                }
                Instruction::Pop(seg, index(i)?)
            }
            ["neg"] => Instruction::Neg,
            ["add"] => Instruction::Add,
            ["sub"] => Instruction::Sub,
            ["mult"] => Instruction::Mult,
            ["div"] => Instruction::Div,
            ["mvmul"] => Instruction::Mvmul,
            ["call", name, n] => Instruction::Call(name.parse()?, index(n)?),
            _ => return Err(format!("unrecognised instruction `{}`", line.trim())),
        })
    }
}

/// Static type of a user-visible global, used when printing results.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GlobalType {
    Int,
    Float,
    Tensor(Shape),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalInfo {
    pub name: String,
    pub slot: usize,
    pub ty: GlobalType,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiteralRecord {
    pub shape: Shape,
    pub flat: FlatBstt,
}

/// A compiled program: literal pool, global symbol table and straight-line
/// code. `slots` counts every global slot, including compiler temporaries.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AvmProgram {
    pub globals: Vec<GlobalInfo>,
    pub slots: usize,
    pub literals: Vec<LiteralRecord>,
    pub code: Vec<Instruction>,
}

impl AvmProgram {
    /// Checks that every operand index is in range and every call arity is
    /// valid, so execution can only fail on dynamic conditions.
    pub fn validate(&self) -> Result<(), String> {
        for g in &self.globals {
            if g.slot >= self.slots {
                return Err(format!(
                    "global `{}` uses slot {} of {}",
                    g.name, g.slot, self.slots
                ));
            }
        }
        for (pc, ins) in self.code.iter().enumerate() {
            let bad = |why: String| Err(format!("instruction {pc} `{ins}`: {why}"));
            match *ins {
                Instruction::Push(Segment::Global, i) | Instruction::Pop(Segment::Global, i)
                    if i >= self.slots =>
                {
                    return bad(format!("only {} global slots", self.slots));
                }
                Instruction::Push(Segment::Literal, i) if i >= self.literals.len() => {
                    return bad(format!("only {} literals", self.literals.len()));
                }
                Instruction::Push(Segment::Pointer, i) | Instruction::Pop(Segment::Pointer, i)
                    if i != 0 =>
                {
                    return bad("the pointer segment has a single slot".into());
                }
                Instruction::Push(Segment::Constant, _) => {
                    return bad("constants are pushed by value".into());
                }
                Instruction::Pop(Segment::Constant | Segment::Literal, _) => {
                    return bad("segment is read-only".into());
                }
                Instruction::Call(b, n) if !b.accepts_arity(n) => {
                    return bad(format!("`{}` does not take {n} arguments", b.name()));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn mvmul_count(&self) -> usize {
        self.code
            .iter()
            .filter(|i| **i == Instruction::Mvmul)
            .count()
    }
}
