//! Lowering from the checked AST to straight-line AVM code.
//!
//! Scalar arithmetic maps one-to-one onto host instructions. Every tensor
//! operation is unrolled at compile time into a sequence of `mvmul`s, each
//! multiplying a matrix by a vector, glued together by the `alloc_tensor`,
//! `fiber`, `writefiber`, `diag` and `crossmat` builtins.
//!
//! User variables occupy global slots `0..V` in declaration order. Slots from
//! `V` up hold compiler temporaries, recycled lowest-first once released.

use std::collections::{BTreeSet, HashMap};

use crate::avm::{
    AvmProgram, Builtin, Constant, GlobalInfo, GlobalType, Instruction, LiteralRecord, Segment,
};
use crate::bstt::BsttTensor;
use crate::frontend::ast::{BinOp, DeclType, Expr, ExprKind, Program, TensorLit, Type};
use crate::frontend::checker::literal_values;
use crate::tensor::{self, ravel, unravel, DenseTensor, Shape};

/// A compiled program plus, for each pool literal, the name `mem` reports it
/// under: the variable it initialises, suffixed `.k` when one statement holds
/// several literals.
#[derive(Debug, Clone, PartialEq)]
pub struct Lowered {
    pub program: AvmProgram,
    pub literal_names: Vec<String>,
}

pub fn generate(program: &Program) -> AvmProgram {
    lower(program).program
}

pub fn lower(program: &Program) -> Lowered {
    let user = program.statements.len();
    let mut g = Gen {
        code: Vec::new(),
        literals: Vec::new(),
        names: Vec::new(),
        scope: HashMap::new(),
        user,
        high_water: user,
        free: BTreeSet::new(),
        stmt: String::new(),
        stmt_literals: 0,
        stmt_seen: 0,
    };
    let mut globals = Vec::with_capacity(user);
    for (slot, stmt) in program.statements.iter().enumerate() {
        g.stmt = stmt.name.clone();
        g.stmt_literals = count_literals(&stmt.value);
        g.stmt_seen = 0;
        match (stmt.declared, stmt.value.ty()) {
            (DeclType::Float, Type::Int) => g.promoted(&stmt.value),
            _ => g.expr(&stmt.value),
        }
        g.emit(Instruction::Pop(Segment::Global, slot));
        g.scope.insert(&stmt.name, slot);
        let ty = match (stmt.declared, stmt.value.ty()) {
            (DeclType::Int, _) => GlobalType::Int,
            (DeclType::Float, _) => GlobalType::Float,
            (DeclType::Tensor, ty) => GlobalType::Tensor(ty.shape().expect("checked").clone()),
        };
        globals.push(GlobalInfo {
            name: stmt.name.clone(),
            slot,
            ty,
        });
    }
    debug_assert_eq!(
        g.free.len(),
        g.high_water - g.user,
        "every temporary is released"
    );
    Lowered {
        program: AvmProgram {
            globals,
            slots: g.high_water,
            literals: g.literals,
            code: g.code,
        },
        literal_names: g.names,
    }
}

fn count_literals(e: &Expr) -> usize {
    match &e.kind {
        ExprKind::Tensor(_) => 1,
        ExprKind::Neg(x) => count_literals(x),
        ExprKind::Binary(_, l, r) => count_literals(l) + count_literals(r),
        _ => 0,
    }
}

/// Instructions that push one operand. Re-emitted wherever the operand is
/// needed, so it must be free of side effects.
type Src = Vec<Instruction>;

struct Gen<'a> {
    code: Vec<Instruction>,
    literals: Vec<LiteralRecord>,
    names: Vec<String>,
    scope: HashMap<&'a str, usize>,
    user: usize,
    high_water: usize,
    free: BTreeSet<usize>,
    stmt: String,
    stmt_literals: usize,
    stmt_seen: usize,
}

fn push_int(v: usize) -> Instruction {
    Instruction::PushConstant(Constant::Int(v as i64))
}

fn global(slot: usize) -> Instruction {
    Instruction::Push(Segment::Global, slot)
}

fn call(b: Builtin, n: usize) -> Instruction {
    Instruction::Call(b, n)
}

/// A numeric literal as a non-negative constant, followed by `neg` when the
/// value is negative.
fn number_src(c: Constant) -> Src {
    match c {
        Constant::Int(v) if v < 0 && v != i64::MIN => {
            vec![
                Instruction::PushConstant(Constant::Int(-v)),
                Instruction::Neg,
            ]
        }
        Constant::Float(v) if v.is_sign_negative() => {
            vec![
                Instruction::PushConstant(Constant::Float(-v)),
                Instruction::Neg,
            ]
        }
        _ => vec![Instruction::PushConstant(c)],
    }
}

impl<'a> Gen<'a> {
    fn emit(&mut self, ins: Instruction) {
        self.code.push(ins);
    }

    fn emit_all(&mut self, src: &[Instruction]) {
        self.code.extend_from_slice(src);
    }

    fn temp(&mut self) -> usize {
        if let Some(t) = self.free.pop_first() {
            return t;
        }
        self.high_water += 1;
        self.high_water - 1
    }

    fn release(&mut self, slot: usize) {
        if slot >= self.user {
            let fresh = self.free.insert(slot);
            debug_assert!(fresh, "temporary {slot} released twice");
        }
    }

    /// Pops the top of stack into a new temporary.
    fn spill(&mut self) -> usize {
        let t = self.temp();
        self.emit(Instruction::Pop(Segment::Global, t));
        t
    }

    /// An `int` value widened to `float`.
    fn promoted(&mut self, e: &'a Expr) {
        match e.kind {
            ExprKind::Int(v) => self.emit_all(&number_src(Constant::Float(v as f64))),
            _ => {
                self.expr(e);
                self.emit(Instruction::PushConstant(Constant::Float(1.0)));
                self.emit(Instruction::Mult);
            }
        }
    }

    /// Leaves the value of `e` on the stack.
    fn expr(&mut self, e: &'a Expr) {
        match &e.kind {
            ExprKind::Int(v) => self.emit_all(&number_src(Constant::Int(*v))),
            ExprKind::Float(v) => self.emit_all(&number_src(Constant::Float(*v))),
            ExprKind::Var(name) => self.emit(global(self.scope[name.as_str()])),
            ExprKind::Tensor(lit) => self.literal(lit, e.ty()),
            ExprKind::Neg(inner) => match inner.ty() {
                Type::Tensor(shape) => {
                    let x = self.operand(inner);
                    let lambda = number_src(Constant::Int(-1));
                    self.scalar_tensor(&lambda, &x.src, shape);
                    self.done(x);
                }
                _ => {
                    self.expr(inner);
                    self.emit(Instruction::Neg);
                }
            },
            ExprKind::Binary(op, l, r) => self.binary(*op, l, r),
        }
    }

    fn literal(&mut self, lit: &TensorLit, ty: &Type) {
        let shape = ty.shape().expect("literal has a tensor type").clone();
        let dense = DenseTensor::new(shape.clone(), literal_values(lit)).expect("checked literal");
        let flat = BsttTensor::from_dense(&dense).expect("rank >= 1").flatten();
        let k = self.literals.len();
        self.literals.push(LiteralRecord { shape, flat });
        let name = if self.stmt_literals == 1 {
            self.stmt.clone()
        } else {
            format!("{}.{}", self.stmt, self.stmt_seen)
        };
        self.stmt_seen += 1;
        self.names.push(name);
        self.emit(Instruction::Push(Segment::Literal, k));
    }

    /// Makes `e` re-pushable: variables and literals are used in place,
    /// anything else is evaluated once into a temporary.
    fn operand(&mut self, e: &'a Expr) -> Operand {
        match &e.kind {
            ExprKind::Var(name) => Operand {
                src: vec![global(self.scope[name.as_str()])],
                temp: None,
            },
            ExprKind::Int(v) => Operand {
                src: number_src(Constant::Int(*v)),
                temp: None,
            },
            ExprKind::Float(v) => Operand {
                src: number_src(Constant::Float(*v)),
                temp: None,
            },
            _ => {
                self.expr(e);
                let t = self.spill();
                Operand {
                    src: vec![global(t)],
                    temp: Some(t),
                }
            }
        }
    }

    fn done(&mut self, op: Operand) {
        if let Some(t) = op.temp {
            self.release(t);
        }
    }

    fn binary(&mut self, op: BinOp, l: &'a Expr, r: &'a Expr) {
        let (lt, rt) = (l.ty(), r.ty());
        if lt.is_scalar() && rt.is_scalar() {
            self.expr(l);
            self.expr(r);
            self.emit(match op {
                BinOp::Add => Instruction::Add,
                BinOp::Sub => Instruction::Sub,
                BinOp::Mul => Instruction::Mult,
                BinOp::Div => Instruction::Div,
                _ => unreachable!("checker admits only arithmetic on scalars"),
            });
            return;
        }
        match (op, lt, rt) {
            (BinOp::Mul, s, Type::Tensor(shape)) | (BinOp::Mul, Type::Tensor(shape), s)
                if s.is_scalar() =>
            {
                // The scalar is always evaluated first, so `T * 2` and
                // `2 * T` lower to the same code.
                let (se, te) = if lt.is_scalar() { (l, r) } else { (r, l) };
                let lambda = self.operand(se);
                let x = self.operand(te);
                self.scalar_tensor(&lambda.src, &x.src, shape);
                self.done(x);
                self.done(lambda);
            }
            (BinOp::Mul, Type::Tensor(a), Type::Tensor(b)) => self.dot(l, r, a, b),
            (BinOp::Kron, Type::Tensor(a), Type::Tensor(b)) => {
                let x = self.operand(l);
                let y = self.operand(r);
                self.kronecker(&x.src, a, &y.src, b);
                self.done(y);
                self.done(x);
            }
            (BinOp::KhatriRao | BinOp::FaceSplit, Type::Tensor(a), Type::Tensor(b)) => {
                let x = self.operand(l);
                let y = self.operand(r);
                if op == BinOp::KhatriRao {
                    self.khatri_rao(&x.src, a, &y.src, b);
                } else {
                    self.face_splitting(&x.src, a, &y.src, b);
                }
                self.done(y);
                self.done(x);
            }
            (BinOp::Cross, _, _) => {
                self.expr(l);
                self.emit(call(Builtin::CrossMat, 1));
                self.expr(r);
                self.emit(Instruction::Mvmul);
            }
            (BinOp::Add | BinOp::Sub, Type::Tensor(shape), _) => {
                let x = self.operand(l);
                let y = self.operand(r);
                self.elementwise(&x.src, &y.src, shape, op == BinOp::Sub);
                self.done(y);
                self.done(x);
            }
            _ => unreachable!("checker rejects {op:?} on {lt} and {rt}"),
        }
    }

    /// Allocates a zeroed tensor and keeps it in a temporary.
    fn alloc(&mut self, dims: &[usize]) -> usize {
        self.emit(push_int(dims.len()));
        for &d in dims {
            self.emit(push_int(d));
        }
        self.emit(call(Builtin::AllocTensor, dims.len() + 1));
        self.spill()
    }

    /// `λ I_n` on the stack.
    fn diag(&mut self, lambda: &[Instruction], n: usize) {
        self.emit_all(lambda);
        self.emit(push_int(n));
        self.emit(call(Builtin::Diag, 2));
    }

    /// Pushes the result temporary and releases it.
    fn finish(&mut self, result: usize) {
        self.emit(global(result));
        self.release(result);
    }

    /// `writefiber dest start stride acc (matrix · vector)`, with the
    /// returned reference stored back into `dest`.
    fn write_product(
        &mut self,
        dest: usize,
        start: usize,
        stride: usize,
        accumulate: bool,
        matrix: &[Instruction],
        vector: &[Instruction],
    ) {
        self.emit(global(dest));
        self.emit(push_int(start));
        self.emit(push_int(stride));
        self.emit(push_int(usize::from(accumulate)));
        self.emit_all(matrix);
        self.emit_all(vector);
        self.emit(Instruction::Mvmul);
        self.emit(call(Builtin::WriteFiber, 5));
        self.emit(Instruction::Pop(Segment::Global, dest));
    }

    /// `λ X`: one `mvmul` of `λ I_n` with each last-mode fiber of `X`.
    fn scalar_tensor(&mut self, lambda: &[Instruction], x: &[Instruction], shape: &Shape) {
        let n = shape.last();
        let r = self.alloc(shape.dims());
        for f in 0..shape.fiber_count() {
            self.emit(global(r));
            self.emit(push_int(f));
            self.diag(lambda, n);
            self.emit_all(x);
            self.emit(push_int(f));
            self.emit(call(Builtin::Fiber, 2));
            self.emit(Instruction::Mvmul);
            self.emit(call(Builtin::WriteFiber, 3));
            self.emit(Instruction::Pop(Segment::Global, r));
        }
        self.finish(r);
    }

    /// `X ± Y`: per fiber, `I x_f` is written and `±I y_f` accumulated.
    fn elementwise(&mut self, x: &[Instruction], y: &[Instruction], shape: &Shape, subtract: bool) {
        let n = shape.last();
        let r = self.alloc(shape.dims());
        let plus = number_src(Constant::Int(1));
        let sign = number_src(Constant::Int(if subtract { -1 } else { 1 }));
        for f in 0..shape.fiber_count() {
            for (src, lambda, acc) in [(x, &plus, false), (y, &sign, true)] {
                let mut matrix = lambda.clone();
                matrix.extend([push_int(n), call(Builtin::Diag, 2)]);
                let mut vector = src.to_vec();
                vector.extend([push_int(f), call(Builtin::Fiber, 2)]);
                self.write_product(r, f * n, 1, acc, &matrix, &vector);
            }
        }
        self.finish(r);
    }

    /// `X ⊗ Y`: for every element `x_e`, the block `x_e Y` is built fiber by
    /// fiber as `(x_e I) y_f` and written to its block position.
    fn kronecker(&mut self, x: &[Instruction], xs: &Shape, y: &[Instruction], ys: &Shape) {
        let rank = xs.rank().max(ys.rank());
        let (xp, yp) = (xs.padded_to(rank), ys.padded_to(rank));
        let out = tensor::kronecker_shape(xs, ys);
        let n = yp.last();
        let y_lead = &yp.dims()[..rank - 1];
        let r = self.alloc(out.dims());
        self.emit_all(x);
        self.emit(Instruction::Pop(Segment::Pointer, 0));
        let header = 1 + xs.rank();
        for e in 0..xp.numel() {
            let xi = unravel(e, xp.dims());
            let element = vec![Instruction::Push(Segment::This, header + e)];
            for fy in 0..ys.fiber_count() {
                let yl = unravel(fy, y_lead);
                let mut pos: Vec<usize> = (0..rank - 1)
                    .map(|k| xi[k] * yp.dims()[k] + yl[k])
                    .collect();
                pos.push(xi[rank - 1] * n);
                let start = ravel(&pos, out.dims());
                let mut matrix = element.clone();
                matrix.extend([push_int(n), call(Builtin::Diag, 2)]);
                let mut vector = y.to_vec();
                vector.extend([push_int(fy), call(Builtin::Fiber, 2)]);
                self.write_product(r, start, 1, false, &matrix, &vector);
            }
        }
        self.finish(r);
    }

    /// Tensor dot product, contracting the last mode of `A` with the
    /// second-to-last mode of `B` (the only mode of a vector).
    ///
    /// `A` is split into matrix slices `A_α` (its last two modes) and `B`
    /// into contraction fibers `b_β`; each pair costs one `mvmul` whose
    /// output is scattered into the result with stride `P`, the number of
    /// fibers of `B`.
    fn dot(&mut self, l: &'a Expr, r: &'a Expr, a: &Shape, b: &Shape) {
        let (m, n) = (a.rank(), b.rank());
        if m <= 2 && n == 1 {
            // Matrix (or row vector) times vector: a single mvmul. A vector
            // dot vector leaves a length-1 result whose only payload word is
            // read back through `this`.
            self.expr(l);
            self.expr(r);
            self.emit(Instruction::Mvmul);
            if m == 1 {
                self.emit(Instruction::Pop(Segment::Pointer, 0));
                self.emit(Instruction::Push(Segment::This, 2));
            }
            return;
        }
        let out = tensor::dot_shape(a, b).expect("checked");
        let x = self.operand(l);
        let y = self.operand(r);

        let k = a.last();
        let rows = if m >= 2 { a.dims()[m - 2] } else { 1 };
        let slices: usize = a.dims()[..m.saturating_sub(2)].iter().product();
        let c = tensor::dot_contraction_mode(b);
        let outer: usize = b.dims()[..c].iter().product();
        let inner: usize = b.dims()[c + 1..].iter().product();
        let p = outer * inner;

        let mut temps = Vec::new();
        let slice_src: Vec<Src> = if m > 2 {
            (0..slices)
                .map(|s| {
                    let t = self.alloc(&[rows, k]);
                    for row in 0..rows {
                        self.emit(global(t));
                        self.emit(push_int(row));
                        self.emit_all(&x.src);
                        self.emit(push_int(s * rows + row));
                        self.emit(call(Builtin::Fiber, 2));
                        self.emit(call(Builtin::WriteFiber, 3));
                        self.emit(Instruction::Pop(Segment::Global, t));
                    }
                    temps.push(t);
                    vec![global(t)]
                })
                .collect()
        } else {
            vec![x.src.clone()]
        };
        let fiber_src: Vec<Src> = if n >= 2 {
            (0..p)
                .map(|beta| {
                    let (o, i) = (beta / inner, beta % inner);
                    self.emit_all(&y.src);
                    self.emit(push_int(o * k * inner + i));
                    self.emit(push_int(inner));
                    self.emit(push_int(k));
                    self.emit(call(Builtin::Fiber, 4));
                    let t = self.spill();
                    temps.push(t);
                    vec![global(t)]
                })
                .collect()
        } else {
            vec![y.src.clone()]
        };

        let result = self.alloc(out.dims());
        let pair = |g: &mut Self, alpha: usize, beta: usize| {
            g.write_product(
                result,
                alpha * rows * p + beta,
                p,
                false,
                &slice_src[alpha],
                &fiber_src[beta],
            );
        };
        // With B of lower rank than A (and not a vector), B is decomposed
        // into fibers and each one meets every slice of A; otherwise A is
        // decomposed into slices and each one meets every fiber of B.
        if n >= 2 && n < m {
            for beta in 0..p {
                for alpha in 0..slices {
                    pair(self, alpha, beta);
                }
            }
        } else {
            for alpha in 0..slices {
                for beta in 0..p {
                    pair(self, alpha, beta);
                }
            }
        }
        for t in temps {
            self.release(t);
        }
        self.finish(result);
        self.done(y);
        self.done(x);
    }

    /// `A ⊙ B` for `A: I×K`, `B: J×K`: column `k` of the result is
    /// `a_k ⊗ b_k`, built as `(A[i,k] I_J) b_k` for each `i`.
    fn khatri_rao(&mut self, x: &[Instruction], a: &Shape, y: &[Instruction], b: &Shape) {
        let (i_len, k_len) = (a.dims()[0], a.dims()[1]);
        let j_len = b.dims()[0];
        let r = self.alloc(&[i_len * j_len, k_len]);
        self.emit_all(x);
        self.emit(Instruction::Pop(Segment::Pointer, 0));
        for k in 0..k_len {
            self.emit_all(y);
            self.emit(push_int(k));
            self.emit(push_int(k_len));
            self.emit(push_int(j_len));
            self.emit(call(Builtin::Fiber, 4));
            let col = self.spill();
            for i in 0..i_len {
                let matrix = vec![
                    Instruction::Push(Segment::This, 3 + i * k_len + k),
                    push_int(j_len),
                    call(Builtin::Diag, 2),
                ];
                self.write_product(
                    r,
                    i * j_len * k_len + k,
                    k_len,
                    false,
                    &matrix,
                    &[global(col)],
                );
            }
            self.release(col);
        }
        self.finish(r);
    }

    /// `A • B` for `A: K×I`, `B: K×J`: row `k` of the result is
    /// `a_k ⊗ b_k`, built as `(A[k,i] I_J) b_k` for each `i`.
    fn face_splitting(&mut self, x: &[Instruction], a: &Shape, y: &[Instruction], b: &Shape) {
        let (k_len, i_len) = (a.dims()[0], a.dims()[1]);
        let j_len = b.dims()[1];
        let r = self.alloc(&[k_len, i_len * j_len]);
        self.emit_all(x);
        self.emit(Instruction::Pop(Segment::Pointer, 0));
        for k in 0..k_len {
            self.emit_all(y);
            self.emit(push_int(k));
            self.emit(call(Builtin::Fiber, 2));
            let row = self.spill();
            for i in 0..i_len {
                let matrix = vec![
                    Instruction::Push(Segment::This, 3 + k * i_len + i),
                    push_int(j_len),
                    call(Builtin::Diag, 2),
                ];
                self.write_product(
                    r,
                    (k * i_len + i) * j_len,
                    1,
                    false,
                    &matrix,
                    &[global(row)],
                );
            }
            self.release(row);
        }
        self.finish(r);
    }
}

struct Operand {
    src: Src,
    temp: Option<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::avm::text;
    use crate::frontend::analyze;

    fn compile(src: &str) -> Lowered {
        lower(&analyze(src).unwrap_or_else(|d| panic!("{d}")))
    }

    fn code(src: &str) -> String {
        compile(src)
            .program
            .code
            .iter()
            .map(|i| format!("{i}\n"))
            .collect()
    }

    #[test]
    fn scalar_statements() {
        assert_eq!(
            code("let int x = 2 + 3;"),
            "push constant 2\npush constant 3\nadd\npop global 0\n"
        );
        assert_eq!(
            code("let float y = -1.5;"),
            "push constant 1.5\nneg\npop global 0\n"
        );
        assert_eq!(
            code("let tensor T = {1,2};"),
            "push literal 0\npop global 0\n"
        );
    }

    #[test]
    fn int_to_float_promotion() {
        assert_eq!(
            code("let float y = 7;"),
            "push constant 7.0\npop global 0\n"
        );
        assert_eq!(
            code("let float y = -7;"),
            "push constant 7.0\nneg\npop global 0\n"
        );
        assert_eq!(
            code("let int a = 1; let float y = a;"),
            "push constant 1\npop global 0\npush global 0\npush constant 1.0\nmult\npop global 1\n"
        );
    }

    #[test]
    fn most_negative_integer_literal() {
        assert_eq!(
            code("let int m = -9223372036854775808;"),
            "push constant -9223372036854775808\npop global 0\n"
        );
    }

    #[test]
    fn scalar_tensor_is_commutative_in_code() {
        let a = code("let tensor T = {{1,2},{3,4}}; let tensor U = T * 2;");
        let b = code("let tensor T = {{1,2},{3,4}}; let tensor U = 2 * T;");
        assert_eq!(a, b);
        assert_eq!(
            compile("let tensor U = 2 * {{1,2},{3,4}};")
                .program
                .mvmul_count(),
            2
        );
    }

    #[test]
    fn cross_is_one_mvmul() {
        let c = code("let tensor c = {1,2,3} # {4,5,6};");
        assert_eq!(
            c,
            "push literal 0\ncall crossmat 1\npush literal 1\nmvmul\npop global 0\n"
        );
    }

    #[test]
    fn matrix_vector_is_one_mvmul() {
        let c = code("let tensor y = {{1,2,3},{4,5,6}} * {1,1,1};");
        assert_eq!(c, "push literal 0\npush literal 1\nmvmul\npop global 0\n");
    }

    #[test]
    fn temporaries_follow_user_slots() {
        let p = compile("let tensor A = {1,2}; let tensor B = A @ A;").program;
        assert_eq!(p.slots, 3);
        assert_eq!(
            p.globals.iter().map(|g| g.slot).collect::<Vec<_>>(),
            vec![0, 1]
        );
        assert!(p.validate().is_ok());
    }

    #[test]
    fn literal_names() {
        let l = compile("let tensor a = {1}; let tensor b = {1} @ {2} @ a; let float s = 2.0;");
        assert_eq!(l.literal_names, vec!["a", "b.0", "b.1"]);
        assert_eq!(l.program.literals.len(), 3);
    }

    #[test]
    fn generated_text_reads_back() {
        let l = compile("let tensor A = {{1,0},{0,2}}; let tensor B = (A @ A) * {1,2,3,4}; let float s = {1,2} * {3,4};");
        let t = text::write(&l.program);
        assert_eq!(text::read(&t).unwrap(), l.program);
    }
}
