use std::fmt;

use super::Pos;
use crate::tensor::Shape;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Program {
    pub statements: Vec<Statement>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeclType {
    Int,
    Float,
    Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Statement {
    pub declared: DeclType,
    pub name: String,
    pub value: Expr,
    pub pos: Pos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Kron,
    KhatriRao,
    FaceSplit,
    Cross,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Kron => "@",
            BinOp::KhatriRao => "&",
            BinOp::FaceSplit => "%",
            BinOp::Cross => "#",
        }
    }
}

/// Static type of an expression. Tensors always carry their shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Type {
    Int,
    Float,
    Tensor(Shape),
}

impl Type {
    pub fn is_scalar(&self) -> bool {
        !matches!(self, Type::Tensor(_))
    }

    pub fn shape(&self) -> Option<&Shape> {
        match self {
            Type::Tensor(s) => Some(s),
            _ => None,
        }
    }
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Type::Int => f.write_str("int"),
            Type::Float => f.write_str("float"),
            Type::Tensor(s) => write!(f, "tensor{s}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    pub kind: ExprKind,
    pub pos: Pos,
    /// Filled in by the checker.
    pub ty: Option<Type>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprKind {
    Int(i64),
    Float(f64),
    Tensor(TensorLit),
    Var(String),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
}

/// Nested tensor literal. Integer elements are stored widened to floats.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorLit {
    Number(f64, Pos),
    List(Vec<TensorLit>, Pos),
}

impl TensorLit {
    pub fn pos(&self) -> Pos {
        match self {
            TensorLit::Number(_, p) | TensorLit::List(_, p) => *p,
        }
    }
}

impl Expr {
    pub fn new(kind: ExprKind, pos: Pos) -> Self {
        Expr {
            kind,
            pos,
            ty: None,
        }
    }

    pub fn ty(&self) -> &Type {
        self.ty.as_ref().expect("expression has been checked")
    }
}

/// Float text that lexes back to the same value: shortest round-trip digits,
/// always with a fractional part, never in exponent form.
pub fn float_literal(v: f64) -> String {
    let s = format!("{v}");
    if s.contains('.') || !v.is_finite() {
        s
    } else {
        format!("{s}.0")
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.statements {
            writeln!(f, "{s}")?;
        }
        Ok(())
    }
}

impl fmt::Display for DeclType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DeclType::Int => "int",
            DeclType::Float => "float",
            DeclType::Tensor => "tensor",
        })
    }
}

impl fmt::Display for Statement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "let {} {} = {};", self.declared, self.name, self.value)
    }
}

/// Fully parenthesized, so reparsing yields the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ExprKind::Int(v) => write!(f, "{v}"),
            ExprKind::Float(v) => f.write_str(&float_literal(*v)),
            ExprKind::Tensor(t) => write!(f, "{t}"),
            ExprKind::Var(name) => f.write_str(name),
            ExprKind::Neg(e) => write!(f, "(-({e}))"),
            ExprKind::Binary(op, l, r) => write!(f, "({l} {} {r})", op.symbol()),
        }
    }
}

impl fmt::Display for TensorLit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorLit::Number(v, _) => f.write_str(&float_literal(*v)),
            TensorLit::List(items, _) => {
                f.write_str("{")?;
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{item}")?;
                }
                f.write_str("}")
            }
        }
    }
}
