//! Static typing and shape inference. Every expression gets a [`Type`];
//! tensor types carry a concrete shape, so codegen can fully unroll.

use std::collections::HashMap;

use super::ast::{BinOp, DeclType, Expr, ExprKind, Program, TensorLit, Type};
use super::{Diagnostic, Pos};
use crate::tensor::{self, Shape};

/// Annotates `program` in place, stopping at the first error.
pub fn check(mut program: Program) -> Result<Program, Diagnostic> {
    let mut scope: HashMap<String, Type> = HashMap::new();
    for stmt in &mut program.statements {
        let ty = infer(&mut stmt.value, &scope)?;
        let ok = matches!(
            (stmt.declared, &ty),
            (DeclType::Int, Type::Int)
                | (DeclType::Float, Type::Float | Type::Int)
                | (DeclType::Tensor, Type::Tensor(_))
        );
        if !ok {
            return Err(Diagnostic::new(
                stmt.value.pos,
                format!(
                    "expression has {} type, declared {}",
                    kind_name(&ty),
                    stmt.declared
                ),
            ));
        }
        if scope.contains_key(&stmt.name) {
            return Err(Diagnostic::new(
                stmt.pos,
                format!("redeclaration of `{}`", stmt.name),
            ));
        }
        let stored = match (stmt.declared, ty) {
            (DeclType::Float, _) => Type::Float,
            (_, ty) => ty,
        };
        scope.insert(stmt.name.clone(), stored);
    }
    Ok(program)
}

fn kind_name(ty: &Type) -> &'static str {
    match ty {
        Type::Int => "int",
        Type::Float => "float",
        Type::Tensor(_) => "tensor",
    }
}

fn infer(expr: &mut Expr, scope: &HashMap<String, Type>) -> Result<Type, Diagnostic> {
    let pos = expr.pos;
    let ty = match &mut expr.kind {
        ExprKind::Int(_) => Type::Int,
        ExprKind::Float(_) => Type::Float,
        ExprKind::Tensor(lit) => Type::Tensor(literal_shape(lit)?),
        ExprKind::Var(name) => scope
            .get(name.as_str())
            .cloned()
            .ok_or_else(|| Diagnostic::new(pos, format!("undeclared identifier `{name}`")))?,
        ExprKind::Neg(inner) => infer(inner, scope)?,
        ExprKind::Binary(op, lhs, rhs) => {
            let l = infer(lhs, scope)?;
            let r = infer(rhs, scope)?;
            binary(*op, &l, &r, pos)?
        }
    };
    expr.ty = Some(ty.clone());
    Ok(ty)
}

fn binary(op: BinOp, l: &Type, r: &Type, pos: Pos) -> Result<Type, Diagnostic> {
    let err = |msg: String| Err(Diagnostic::new(pos, msg));
    let numeric = |l: &Type, r: &Type| {
        if *l == Type::Int && *r == Type::Int {
            Type::Int
        } else {
            Type::Float
        }
    };
    match (op, l, r) {
        (BinOp::Add | BinOp::Sub | BinOp::Mul | BinOp::Div, l, r)
            if l.is_scalar() && r.is_scalar() =>
        {
            Ok(numeric(l, r))
        }
        (BinOp::Add | BinOp::Sub, Type::Tensor(a), Type::Tensor(b)) => {
            if a == b {
                Ok(Type::Tensor(a.clone()))
            } else {
                err(format!(
                    "operands of `{}` must have equal shapes, got {a} and {b}",
                    op.symbol()
                ))
            }
        }
        (BinOp::Add | BinOp::Sub, _, _) => err(format!(
            "cannot apply `{}` to {} and {}",
            op.symbol(),
            kind_name(l),
            kind_name(r)
        )),
        (BinOp::Mul, s, Type::Tensor(t)) | (BinOp::Mul, Type::Tensor(t), s) if s.is_scalar() => {
            Ok(Type::Tensor(t.clone()))
        }
        (BinOp::Mul, Type::Tensor(a), Type::Tensor(b)) => match tensor::dot_shape(a, b) {
            Ok(s) if s.rank() == 0 => Ok(Type::Float),
            Ok(s) => Ok(Type::Tensor(s)),
            Err(_) => err(format!(
                "dot product contraction mismatch: {a} has last extent {}, {b} contracts extent {}",
                a.last(),
                b.dims()[tensor::dot_contraction_mode(b)]
            )),
        },
        (BinOp::Div, _, _) => err("`/` is only defined on scalars".into()),
        (_, Type::Tensor(a), Type::Tensor(b)) => tensor_op(op, a, b, pos),
        _ => err(format!(
            "`{}` requires tensor operands, got {} and {}",
            op.symbol(),
            kind_name(l),
            kind_name(r)
        )),
    }
}

fn tensor_op(op: BinOp, a: &Shape, b: &Shape, pos: Pos) -> Result<Type, Diagnostic> {
    let shape = match op {
        BinOp::Kron => Ok(tensor::kronecker_shape(a, b)),
        BinOp::KhatriRao => tensor::khatri_rao_shape(a, b).map_err(|_| {
            format!(
                "Khatri-Rao product needs two matrices with equal column counts, got {a} and {b}"
            )
        }),
        BinOp::FaceSplit => tensor::face_splitting_shape(a, b).map_err(|_| {
            format!(
                "face-splitting product needs two matrices with equal row counts, got {a} and {b}"
            )
        }),
        BinOp::Cross => {
            if a.dims() == [3] && b.dims() == [3] {
                Ok(a.clone())
            } else {
                Err(format!(
                    "cross product needs two vectors of length 3, got {a} and {b}"
                ))
            }
        }
        _ => unreachable!("arithmetic operators are handled by the caller"),
    };
    shape.map(Type::Tensor).map_err(|m| Diagnostic::new(pos, m))
}

/// Shape of a rectangular nested literal.
fn literal_shape(lit: &TensorLit) -> Result<Shape, Diagnostic> {
    let TensorLit::List(items, pos) = lit else {
        unreachable!("a literal expression is always a list")
    };
    let Some(first) = items.first() else {
        return Err(Diagnostic::new(*pos, "empty tensor literal"));
    };
    let inner = match first {
        TensorLit::Number(..) => Vec::new(),
        TensorLit::List(..) => literal_shape(first)?.dims().to_vec(),
    };
    for item in &items[1..] {
        let same = match item {
            TensorLit::Number(..) => inner.is_empty(),
            TensorLit::List(..) => !inner.is_empty() && literal_shape(item)?.dims() == inner,
        };
        if !same {
            return Err(Diagnostic::new(item.pos(), "ragged tensor literal"));
        }
    }
    let mut dims = vec![items.len()];
    dims.extend(inner);
    Ok(Shape::new(dims).expect("literal extents are positive"))
}

/// Row-major values of a checked literal.
pub fn literal_values(lit: &TensorLit) -> Vec<f64> {
    fn walk(lit: &TensorLit, out: &mut Vec<f64>) {
        match lit {
            TensorLit::Number(v, _) => out.push(*v),
            TensorLit::List(items, _) => items.iter().for_each(|i| walk(i, out)),
        }
    }
    let mut out = Vec::new();
    walk(lit, &mut out);
    out
}
