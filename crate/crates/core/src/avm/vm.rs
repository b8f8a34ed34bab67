//! The stack machine.
//!
//! Segments: `constant` (immediate values), `global` (one slot per variable
//! plus compiler temporaries), `pointer` (a single slot holding the anchor of
//! `this`) and `this` (a window onto the heap starting at the anchor). Tensor
//! operands travel on the stack as heap references. `mvmul` is the only
//! instruction routed to the accelerator backend.

use std::fmt;

use serde_json::{json, Value};
use thiserror::Error;

use super::accel::MvmBackend;
use super::heap::{Heap, TensorView};
use super::{AvmProgram, Builtin, Constant, GlobalType, Instruction, Segment};
use crate::bstt::{BsttError, BsttTensor};
use crate::tensor::{DenseTensor, Shape};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VmWord {
    Int(i64),
    Float(f64),
    Ref(usize),
}

impl fmt::Display for VmWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VmWord::Int(v) => write!(f, "int {v}"),
            VmWord::Float(v) => write!(f, "float {v:?}"),
            VmWord::Ref(a) => write!(f, "ref @{a}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrapKind {
    #[error("stack underflow")]
    StackUnderflow,
    #[error("type error: expected {expected}, got {got}")]
    Type { expected: &'static str, got: VmWord },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("division by zero")]
    DivisionByZero,
    #[error("integer overflow in {0}")]
    Overflow(&'static str),
    #[error("index out of bounds: {0}")]
    Bounds(String),
    #[error("read of unwritten heap word @{addr}")]
    Unwritten { addr: usize },
    #[error("address @{addr} is outside every allocated region")]
    Segfault { addr: usize },
    #[error("write to tensor header word @{addr}")]
    HeaderWrite { addr: usize },
    #[error("@{addr} is not a tensor record")]
    NotATensor { addr: usize },
    #[error("invalid argument: {0}")]
    BadArgument(String),
    #[error("mvmul operand {rows}x{cols} exceeds the accelerator limit of {max}")]
    AcceleratorLimit {
        rows: usize,
        cols: usize,
        max: usize,
    },
    #[error("heap exhausted (requested {requested} words)")]
    HeapExhausted { requested: usize },
    #[error("program ended with {depth} word(s) left on the stack")]
    UnbalancedStack { depth: usize },
}

/// A runtime fault. The machine halts on the first one.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("trap at pc {pc} (`{instruction}`): {kind}")]
pub struct Trap {
    pub pc: usize,
    pub instruction: String,
    pub kind: TrapKind,
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("invalid program: {0}")]
    Invalid(String),
    #[error("literal t{index}: {source}")]
    Literal { index: usize, source: BsttError },
    #[error("literal t{index}: {kind}")]
    Heap { index: usize, kind: TrapKind },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Stats {
    pub mvmul_count: u64,
    pub host_ops: u64,
    pub heap_words: usize,
    pub max_stack_depth: usize,
}

/// Final value of a user global.
#[derive(Debug, Clone, PartialEq)]
pub enum GlobalValue {
    Int(i64),
    Float(f64),
    Tensor(DenseTensor),
}

impl GlobalValue {
    fn to_json(&self) -> Value {
        fn nest(dims: &[usize], data: &[f64]) -> Value {
            match dims.split_first() {
                None => json!(data[0]),
                Some((_, [])) => json!(data),
                Some((&n, rest)) => {
                    let step = data.len() / n;
                    Value::Array(data.chunks(step).map(|c| nest(rest, c)).collect())
                }
            }
        }
        match self {
            GlobalValue::Int(v) => json!(v),
            GlobalValue::Float(v) => json!(v),
            GlobalValue::Tensor(t) => nest(t.dims(), t.data()),
        }
    }
}

pub struct Vm<'p, B: MvmBackend> {
    program: &'p AvmProgram,
    backend: B,
    stack: Vec<VmWord>,
    globals: Vec<VmWord>,
    pointer: VmWord,
    heap: Heap,
    literals: Vec<usize>,
    pc: usize,
    stats: Stats,
}

type Step<T = ()> = Result<T, TrapKind>;

impl<'p, B: MvmBackend> Vm<'p, B> {
    /// Validates `program` and materialises its literal pool on the heap as
    /// dense tensor records. With `poison`, reading a tensor word that was
    /// allocated but never written traps.
    pub fn load(program: &'p AvmProgram, backend: B, poison: bool) -> Result<Self, LoadError> {
        program.validate().map_err(LoadError::Invalid)?;
        let mut heap = Heap::new(poison);
        let mut literals = Vec::with_capacity(program.literals.len());
        for (index, lit) in program.literals.iter().enumerate() {
            let tensor = BsttTensor::reconstruct(&lit.flat, lit.shape.clone())
                .map_err(|source| LoadError::Literal { index, source })?;
            let dense = tensor.to_dense();
            let addr = heap
                .alloc_tensor(dense.dims(), Some(dense.data()))
                .map_err(|kind| LoadError::Heap { index, kind })?;
            literals.push(addr);
        }
        Ok(Vm {
            program,
            backend,
            stack: Vec::new(),
            globals: vec![VmWord::Int(0); program.slots],
            pointer: VmWord::Int(0),
            heap,
            literals,
            pc: 0,
            stats: Stats::default(),
        })
    }

    pub fn pc(&self) -> usize {
        self.pc
    }

    pub fn is_finished(&self) -> bool {
        self.pc >= self.program.code.len()
    }

    pub fn current_instruction(&self) -> Option<&Instruction> {
        self.program.code.get(self.pc)
    }

    pub fn stack(&self) -> &[VmWord] {
        &self.stack
    }

    pub fn global(&self, slot: usize) -> VmWord {
        self.globals[slot]
    }

    pub fn pointer(&self) -> VmWord {
        self.pointer
    }

    pub fn heap(&self) -> &Heap {
        &self.heap
    }

    pub fn stats(&self) -> Stats {
        Stats {
            heap_words: self.heap.len(),
            ..self.stats
        }
    }

    /// Executes one instruction. Returns `false` once the program has ended.
    pub fn step(&mut self) -> Result<bool, Trap> {
        let Some(&ins) = self.program.code.get(self.pc) else {
            return Ok(false);
        };
        self.exec(ins).map_err(|kind| Trap {
            pc: self.pc,
            instruction: ins.to_string(),
            kind,
        })?;
        if ins == Instruction::Mvmul {
            self.stats.mvmul_count += 1;
        } else {
            self.stats.host_ops += 1;
        }
        self.pc += 1;
        Ok(true)
    }

    /// Runs to the end of the code.
    pub fn execute(&mut self) -> Result<(), Trap> {
        while self.step()? {}
        Ok(())
    }

    /// Runs to the end and checks that the stack is balanced.
    pub fn run(&mut self) -> Result<Stats, Trap> {
        self.execute()?;
        self.check_balanced()?;
        Ok(self.stats())
    }

    pub fn check_balanced(&self) -> Result<(), Trap> {
        if self.stack.is_empty() {
            return Ok(());
        }
        Err(Trap {
            pc: self.pc,
            instruction: "<end>".into(),
            kind: TrapKind::UnbalancedStack {
                depth: self.stack.len(),
            },
        })
    }

    /// Dense copy of the tensor record a word refers to.
    pub fn tensor(&self, word: VmWord) -> Result<DenseTensor, TrapKind> {
        let view = self.view(word)?;
        let shape = Shape::new(view.dims.clone()).expect("record extents are positive");
        let data = self.heap.values(&view)?;
        Ok(DenseTensor::new(shape, data).expect("record payload matches its header"))
    }

    /// Final values of the user globals, in declaration order.
    pub fn global_values(&self) -> Result<Vec<(String, GlobalValue)>, TrapKind> {
        self.program
            .globals
            .iter()
            .map(|g| {
                let word = self.globals[g.slot];
                let value = match (&g.ty, word) {
                    (GlobalType::Int, VmWord::Int(v)) => GlobalValue::Int(v),
                    (GlobalType::Float, VmWord::Int(v)) => GlobalValue::Float(v as f64),
                    (GlobalType::Float, VmWord::Float(v)) => GlobalValue::Float(v),
                    (GlobalType::Tensor(shape), w) => {
                        let t = self.tensor(w)?;
                        if t.shape() != shape {
                            return Err(TrapKind::Dimension(format!(
                                "global `{}` declared {shape}, holds {}",
                                g.name,
                                t.shape()
                            )));
                        }
                        GlobalValue::Tensor(t)
                    }
                    (_, w) => {
                        return Err(TrapKind::Type {
                            expected: "a value of the declared type",
                            got: w,
                        })
                    }
                };
                Ok((g.name.clone(), value))
            })
            .collect()
    }

    /// Statistics plus final global values as one JSON object: one counter
    /// per line, then the globals in declaration order on a single line.
    pub fn report(&self) -> Result<String, TrapKind> {
        let s = self.stats();
        let globals = self
            .global_values()?
            .iter()
            .map(|(name, v)| format!("{}: {}", Value::from(name.as_str()), v.to_json()))
            .collect::<Vec<_>>()
            .join(", ");
        Ok(format!(
            "{{\n  \"mvmul_count\": {},\n  \"host_ops\": {},\n  \"heap_words\": {},\n  \"max_stack_depth\": {},\n  \"globals\": {{{globals}}}\n}}",
            s.mvmul_count, s.host_ops, s.heap_words, s.max_stack_depth
        ))
    }

    fn push(&mut self, w: VmWord) {
        self.stack.push(w);
        self.stats.max_stack_depth = self.stats.max_stack_depth.max(self.stack.len());
    }

    fn pop(&mut self) -> Step<VmWord> {
        self.stack.pop().ok_or(TrapKind::StackUnderflow)
    }

    fn pop_ref(&mut self) -> Step<VmWord> {
        match self.pop()? {
            w @ VmWord::Ref(_) => Ok(w),
            got => Err(TrapKind::Type {
                expected: "a tensor reference",
                got,
            }),
        }
    }

    fn view(&self, word: VmWord) -> Step<TensorView> {
        match word {
            VmWord::Ref(addr) => self.heap.tensor(addr),
            got => Err(TrapKind::Type {
                expected: "a tensor reference",
                got,
            }),
        }
    }

    fn anchor(&self) -> Step<usize> {
        match self.pointer {
            VmWord::Ref(a) => Ok(a),
            VmWord::Int(a) if a >= 0 => Ok(a as usize),
            got => Err(TrapKind::Type {
                expected: "an address in pointer 0",
                got,
            }),
        }
    }

    fn exec(&mut self, ins: Instruction) -> Step {
        match ins {
            Instruction::PushConstant(Constant::Int(v)) => self.push(VmWord::Int(v)),
            Instruction::PushConstant(Constant::Float(v)) => self.push(VmWord::Float(v)),
            Instruction::Push(seg, i) => {
                let w = match seg {
                    Segment::Global => self.globals[i],
                    Segment::Pointer => self.pointer,
                    Segment::This => {
                        let addr = self
                            .anchor()?
                            .checked_add(i)
                            .ok_or(TrapKind::Segfault { addr: usize::MAX })?;
                        self.heap.read(addr)?
                    }
                    Segment::Literal => VmWord::Ref(self.literals[i]),
                    Segment::Constant => unreachable!("rejected by validation"),
                };
                self.push(w);
            }
            Instruction::Pop(seg, i) => {
                let w = self.pop()?;
                match seg {
                    Segment::Global => self.globals[i] = w,
                    Segment::Pointer => match w {
                        VmWord::Ref(_) | VmWord::Int(0..) => self.pointer = w,
                        got => {
                            return Err(TrapKind::Type {
                                expected: "an address",
                                got,
                            })
                        }
                    },
                    Segment::This => {
                        let addr = self
                            .anchor()?
                            .checked_add(i)
                            .ok_or(TrapKind::Segfault { addr: usize::MAX })?;
                        self.heap.write(addr, w)?;
                    }
                    Segment::Constant | Segment::Literal => unreachable!("rejected by validation"),
                }
            }
            Instruction::Neg => {
                let w = match self.pop()? {
                    VmWord::Int(v) => {
                        VmWord::Int(v.checked_neg().ok_or(TrapKind::Overflow("neg"))?)
                    }
                    VmWord::Float(v) => VmWord::Float(-v),
                    got => {
                        return Err(TrapKind::Type {
                            expected: "a number",
                            got,
                        })
                    }
                };
                self.push(w);
            }
            Instruction::Add | Instruction::Sub | Instruction::Mult | Instruction::Div => {
                let b = self.pop()?;
                let a = self.pop()?;
                let r = arith(ins, a, b)?;
                self.push(r);
            }
            Instruction::Mvmul => self.mvmul()?,
            Instruction::Call(builtin, n) => {
                if self.stack.len() < n {
                    return Err(TrapKind::StackUnderflow);
                }
                let args = self.stack.split_off(self.stack.len() - n);
                let r = self.call(builtin, &args)?;
                self.push(r);
            }
        }
        Ok(())
    }

    fn mvmul(&mut self) -> Step {
        let b = self.pop_ref()?;
        let a = self.pop_ref()?;
        let (av, bv) = (self.view(a)?, self.view(b)?);
        let (rows, cols) = match av.dims[..] {
            [r, c] => (r, c),
            [c] => (1, c),
            _ => {
                return Err(TrapKind::Dimension(format!(
                    "mvmul matrix operand has rank {}",
                    av.rank()
                )))
            }
        };
        if bv.dims != [cols] {
            return Err(TrapKind::Dimension(format!(
                "mvmul of a {rows}x{cols} matrix with a vector of shape {:?}",
                bv.dims
            )));
        }
        let matrix = self.heap.values(&av)?;
        let vector = self.heap.values(&bv)?;
        let out = self
            .backend
            .mvmul(&matrix, rows, cols, &vector)
            .map_err(|max| TrapKind::AcceleratorLimit { rows, cols, max })?;
        assert_eq!(
            out.len(),
            rows,
            "backend returned a vector of the wrong length"
        );
        let addr = self.heap.alloc_tensor(&[rows], Some(&out))?;
        self.push(VmWord::Ref(addr));
        Ok(())
    }

    fn call(&mut self, builtin: Builtin, args: &[VmWord]) -> Step<VmWord> {
        match (builtin, args) {
            (Builtin::Malloc, &[size]) => {
                let size = positive(size, "malloc size")?;
                Ok(VmWord::Ref(self.heap.malloc(size)?))
            }
            (Builtin::AllocTensor, [rank, dims @ ..]) => {
                let rank = index(*rank, "rank")?;
                if rank != dims.len() {
                    return Err(TrapKind::BadArgument(format!(
                        "alloc_tensor of rank {rank} given {} extents",
                        dims.len()
                    )));
                }
                let dims = dims
                    .iter()
                    .map(|&d| positive(d, "tensor extent"))
                    .collect::<Step<Vec<_>>>()?;
                Ok(VmWord::Ref(self.heap.alloc_tensor(&dims, None)?))
            }
            (Builtin::Fiber, &[t, f]) => {
                let view = self.view(t)?;
                let f = index(f, "fiber index")?;
                let n = view.last();
                if view.rank() == 0 || f >= view.len / n {
                    return Err(TrapKind::Bounds(format!(
                        "fiber {f} of shape {:?}",
                        view.dims
                    )));
                }
                self.gather(&view, f * n, 1, n)
            }
            (Builtin::Fiber, &[t, start, stride, len]) => {
                let view = self.view(t)?;
                let start = index(start, "start")?;
                let stride = positive(stride, "stride")?;
                let len = positive(len, "length")?;
                self.gather(&view, start, stride, len)
            }
            (Builtin::WriteFiber, &[dest, f, v]) => {
                let view = self.view(dest)?;
                let f = index(f, "fiber index")?;
                let n = view.last();
                if view.rank() == 0 || f >= view.len / n {
                    return Err(TrapKind::Bounds(format!(
                        "fiber {f} of shape {:?}",
                        view.dims
                    )));
                }
                self.scatter(&view, v, f * n, 1, false, Some(n))?;
                Ok(dest)
            }
            (Builtin::WriteFiber, &[dest, start, stride, acc, v]) => {
                let view = self.view(dest)?;
                let start = index(start, "start")?;
                let stride = positive(stride, "stride")?;
                let acc = match acc {
                    VmWord::Int(0) => false,
                    VmWord::Int(1) => true,
                    got => {
                        return Err(TrapKind::BadArgument(format!(
                            "accumulate flag must be int 0 or 1, got {got}"
                        )))
                    }
                };
                self.scatter(&view, v, start, stride, acc, None)?;
                Ok(dest)
            }
            (Builtin::Diag, &[lambda, d]) => {
                let lambda = number(lambda)?;
                let d = positive(d, "diag size")?;
                if d.checked_mul(d).is_none() {
                    return Err(TrapKind::HeapExhausted {
                        requested: usize::MAX,
                    });
                }
                let mut data = vec![0.0; d * d];
                for k in 0..d {
                    data[k * d + k] = lambda;
                }
                Ok(VmWord::Ref(self.heap.alloc_tensor(&[d, d], Some(&data))?))
            }
            (Builtin::CrossMat, &[u]) => {
                let view = self.view(u)?;
                if view.dims != [3] {
                    return Err(TrapKind::Dimension(format!(
                        "crossmat needs a length-3 vector, got shape {:?}",
                        view.dims
                    )));
                }
                let u = self.heap.values(&view)?;
                #[rustfmt::skip]
                let m = [
                    0.0, -u[2], u[1],
                    u[2], 0.0, -u[0],
                    -u[1], u[0], 0.0,
                ];
                Ok(VmWord::Ref(self.heap.alloc_tensor(&[3, 3], Some(&m))?))
            }
            _ => unreachable!("arity checked by validation"),
        }
    }

    /// New vector record of `len` payload words of `src` from `start`.
    fn gather(
        &mut self,
        src: &TensorView,
        start: usize,
        stride: usize,
        len: usize,
    ) -> Step<VmWord> {
        check_span(src, start, stride, len)?;
        let data = self.heap.range(src.payload + start, len, stride)?;
        Ok(VmWord::Ref(self.heap.alloc_tensor(&[len], Some(&data))?))
    }

    /// Writes vector `v` into `dest`'s payload from `start`.
    fn scatter(
        &mut self,
        dest: &TensorView,
        v: VmWord,
        start: usize,
        stride: usize,
        accumulate: bool,
        expect_len: Option<usize>,
    ) -> Step {
        let vv = self.view(v)?;
        if vv.rank() != 1 || expect_len.is_some_and(|n| n != vv.len) {
            return Err(TrapKind::Dimension(format!(
                "cannot write a tensor of shape {:?} into a fiber of shape {:?}",
                vv.dims, dest.dims
            )));
        }
        check_span(dest, start, stride, vv.len)?;
        let values = self.heap.values(&vv)?;
        for (i, x) in values.into_iter().enumerate() {
            let addr = dest.payload + start + i * stride;
            if accumulate {
                self.heap.accumulate(addr, x)?;
            } else {
                self.heap.set(addr, x);
            }
        }
        Ok(())
    }
}

fn check_span(view: &TensorView, start: usize, stride: usize, len: usize) -> Step {
    let last = (len - 1)
        .checked_mul(stride)
        .and_then(|o| o.checked_add(start))
        .filter(|&e| e < view.len);
    if last.is_none() {
        return Err(TrapKind::Bounds(format!(
            "{len} words from {start} with stride {stride} in a payload of {}",
            view.len
        )));
    }
    Ok(())
}

fn number(w: VmWord) -> Step<f64> {
    match w {
        VmWord::Int(v) => Ok(v as f64),
        VmWord::Float(v) => Ok(v),
        got => Err(TrapKind::Type {
            expected: "a number",
            got,
        }),
    }
}

fn index(w: VmWord, what: &str) -> Step<usize> {
    match w {
        VmWord::Int(v) if v >= 0 => Ok(v as usize),
        got => Err(TrapKind::BadArgument(format!(
            "{what} must be a non-negative int, got {got}"
        ))),
    }
}

fn positive(w: VmWord, what: &str) -> Step<usize> {
    match w {
        VmWord::Int(v) if v >= 1 => Ok(v as usize),
        got => Err(TrapKind::BadArgument(format!(
            "{what} must be a positive int, got {got}"
        ))),
    }
}

fn arith(ins: Instruction, a: VmWord, b: VmWord) -> Step<VmWord> {
    use Instruction::*;
    match (a, b) {
        (VmWord::Int(x), VmWord::Int(y)) => {
            let (r, name) = match ins {
                Add => (x.checked_add(y), "add"),
                Sub => (x.checked_sub(y), "sub"),
                Mult => (x.checked_mul(y), "mult"),
                _ if y == 0 => return Err(TrapKind::DivisionByZero),
                _ => (x.checked_div(y), "div"),
            };
            r.map(VmWord::Int).ok_or(TrapKind::Overflow(name))
        }
        (VmWord::Ref(_), _) | (_, VmWord::Ref(_)) => Err(TrapKind::Type {
            expected: "a number",
            got: if matches!(a, VmWord::Ref(_)) { a } else { b },
        }),
        _ => {
            let (x, y) = (number(a)?, number(b)?);
            Ok(VmWord::Float(match ins {
                Add => x + y,
                Sub => x - y,
                Mult => x * y,
                _ if y == 0.0 => return Err(TrapKind::DivisionByZero),
                _ => x / y,
            }))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::avm::accel::Simulator;

    fn program(code: &str) -> AvmProgram {
        let mut text = String::from(".globals\nslots 4\n.code\n");
        text.push_str(code);
        crate::avm::text::read(&text).unwrap()
    }

    fn run(code: &str) -> (Vec<VmWord>, Stats) {
        let p = program(code);
        let mut vm = Vm::load(&p, Simulator::default(), true).unwrap();
        vm.execute().unwrap_or_else(|t| panic!("{t}"));
        (vm.stack().to_vec(), vm.stats())
    }

    fn trap(code: &str) -> TrapKind {
        let p = program(code);
        let mut vm = Vm::load(&p, Simulator::default(), true).unwrap();
        vm.execute().unwrap_err().kind
    }

    #[test]
    fn arithmetic_mixes_promote_to_float() {
        assert_eq!(
            run("push constant 2\npush constant 0.5\nmult").0,
            vec![VmWord::Float(1.0)]
        );
        assert_eq!(
            run("push constant 7\npush constant 2\ndiv").0,
            vec![VmWord::Int(3)]
        );
        assert_eq!(
            run("push constant -7\npush constant 2\ndiv").0,
            vec![VmWord::Int(-3)]
        );
        assert_eq!(run("push constant 1.5\nneg").0, vec![VmWord::Float(-1.5)]);
    }

    #[test]
    fn arithmetic_traps() {
        assert_eq!(
            trap("push constant 1\npush constant 0\ndiv"),
            TrapKind::DivisionByZero
        );
        assert_eq!(
            trap("push constant 1.0\npush constant 0\ndiv"),
            TrapKind::DivisionByZero
        );
        assert!(matches!(
            trap("push constant 9223372036854775807\npush constant 1\nadd"),
            TrapKind::Overflow("add")
        ));
        assert!(matches!(
            trap("push constant -9223372036854775808\npush constant -1\ndiv"),
            TrapKind::Overflow("div")
        ));
        assert_eq!(trap("add"), TrapKind::StackUnderflow);
        assert!(matches!(
            trap("push constant 1\ncall malloc 1\npush constant 1\nadd"),
            TrapKind::Type { .. }
        ));
    }

    #[test]
    fn counters() {
        let (_, s) = run(
            "push constant 2\npush constant 2\ncall diag 2\npush constant 3\npush constant 2\ncall diag 2\npush constant 1\ncall fiber 2\nmvmul",
        );
        assert_eq!(s.mvmul_count, 1);
        assert_eq!(s.host_ops, 8);
        assert_eq!(s.max_stack_depth, 3);
    }

    #[test]
    fn fiber_and_writefiber_forms() {
        let p = program(concat!(
            "push constant 2\npush constant 2\npush constant 3\ncall alloc_tensor 3\npop global 0\n",
            "push global 0\npush constant 1\npush constant 1.5\npush constant 3\ncall diag 2\n",
            "push constant 0\ncall fiber 2\ncall writefiber 3\npop global 1\n",
            "push global 0\npush constant 0\npush constant 3\npush constant 0\n",
            "push constant 2.0\npush constant 2\ncall diag 2\npush constant 1\ncall fiber 2\n",
            "call writefiber 5\npop global 1\n",
            "push global 0\npush constant 1\npush constant 3\npush constant 1\n",
            "push constant 1.0\npush constant 2\ncall diag 2\npush constant 1\ncall fiber 2\n",
            "call writefiber 5\npop global 1\n",
            "push global 0\npush constant 3\npush constant 1\npush constant 2\ncall fiber 4\npop global 2\n",
        ));
        let mut vm = Vm::load(&p, Simulator::default(), false).unwrap();
        vm.run().unwrap();
        let t = vm.tensor(vm.global(0)).unwrap();
        assert_eq!(t.data(), &[0.0, 0.0, 0.0, 2.0, 1.0, 0.0]);
        assert_eq!(vm.global(1), vm.global(0));
        assert_eq!(vm.tensor(vm.global(2)).unwrap().data(), &[2.0, 1.0]);
    }

    #[test]
    fn builtin_argument_traps() {
        assert!(matches!(
            trap("push constant 0\ncall malloc 1"),
            TrapKind::BadArgument(_)
        ));
        assert!(matches!(
            trap("push constant 2\npush constant 3\ncall alloc_tensor 2"),
            TrapKind::BadArgument(_)
        ));
        assert!(matches!(
            trap("push constant 1.0\npush constant 2\ncall diag 2\npush constant 2\ncall fiber 2"),
            TrapKind::Bounds(_)
        ));
        assert!(matches!(
            trap("push constant 1.0\npush constant 2\ncall diag 2\npush constant 3\npush constant 1\npush constant 2\ncall fiber 4"),
            TrapKind::Bounds(_)
        ));
        assert!(matches!(
            trap("push constant 1.0\npush constant 2\ncall diag 2\ncall crossmat 1"),
            TrapKind::Dimension(_)
        ));
        assert!(matches!(
            trap("push constant 1\ncall crossmat 1"),
            TrapKind::Type { .. }
        ));
    }

    #[test]
    fn poison_mode_catches_reads_of_fresh_tensors() {
        let code =
            "push constant 1\npush constant 2\ncall alloc_tensor 2\npush constant 0\ncall fiber 2";
        assert!(matches!(trap(code), TrapKind::Unwritten { .. }));
        let p = program(code);
        let mut vm = Vm::load(&p, Simulator::default(), false).unwrap();
        vm.execute().unwrap();
    }

    #[test]
    fn accelerator_cap() {
        let p = program("push constant 1.0\npush constant 3\ncall diag 2\npush constant 1.0\npush constant 3\ncall diag 2\npush constant 0\ncall fiber 2\nmvmul");
        let mut vm = Vm::load(&p, Simulator::with_max_dim(2), false).unwrap();
        let t = vm.execute().unwrap_err();
        assert_eq!(t.pc, 8);
        assert_eq!(t.instruction, "mvmul");
        assert!(matches!(
            t.kind,
            TrapKind::AcceleratorLimit {
                rows: 3,
                cols: 3,
                max: 2
            }
        ));
    }

    #[test]
    fn run_requires_an_empty_stack() {
        let p = program("push constant 1");
        let mut vm = Vm::load(&p, Simulator::default(), false).unwrap();
        assert!(matches!(
            vm.run().unwrap_err().kind,
            TrapKind::UnbalancedStack { depth: 1 }
        ));
    }

    #[test]
    fn empty_program() {
        let p = AvmProgram::default();
        let mut vm = Vm::load(&p, Simulator::default(), false).unwrap();
        assert!(vm.is_finished());
        assert_eq!(vm.run().unwrap(), Stats::default());
        assert!(vm.heap().is_empty());
    }
}
