//! Lexer, recursive descent parser and static checker for Apollo source.

pub mod ast;
pub mod checker;
pub mod lexer;
pub mod parser;

use std::fmt;

pub use ast::{BinOp, DeclType, Expr, ExprKind, Program, Statement, TensorLit, Type};
pub use checker::check;
pub use lexer::{tokenize, Token, TokenKind};
pub use parser::parse;

/// 1-based source position.
///
/// Positions never take part in AST equality: two trees are equal when they
/// have the same structure, wherever they came from.
#[derive(Debug, Clone, Copy, Default, Eq)]
pub struct Pos {
    pub line: u32,
    pub col: u32,
}

impl PartialEq for Pos {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

impl Pos {
    pub fn new(line: u32, col: u32) -> Self {
        Pos { line, col }
    }
}

/// A frontend error, rendered as `line:col: message`.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{}:{}: {message}", pos.line, pos.col)]
pub struct Diagnostic {
    pub pos: Pos,
    pub message: String,
}

impl Diagnostic {
    pub fn new(pos: Pos, message: impl Into<String>) -> Self {
        Diagnostic {
            pos,
            message: message.into(),
        }
    }

    /// `file:line:col: message`
    pub fn display_with<'a>(&'a self, file: &'a str) -> impl fmt::Display + 'a {
        struct WithFile<'a>(&'a str, &'a Diagnostic);
        impl fmt::Display for WithFile<'_> {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}:{}", self.0, self.1)
            }
        }
        WithFile(file, self)
    }
}

/// Tokenize, parse and check in one go.
pub fn analyze(source: &str) -> Result<Program, Diagnostic> {
    let tokens = tokenize(source)?;
    let program = parse(&tokens)?;
    check(program)
}
