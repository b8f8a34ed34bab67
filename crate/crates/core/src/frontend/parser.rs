//! Recursive descent parser. One function per grammar production:
//!
//! ```text
//! program   := { statement }
//! statement := 'let' type identifier '=' expr ';'
//! expr      := term { ('+' | '-') term }
//! term      := factor { ('*' | '/' | '@' | '&' | '%' | '#') factor }
//! factor    := '(' expr ')' | primary
//! primary   := integer | float | identifier | tensor | '-' term
//! tensor    := '{' [ element { ',' element } ] '}'
//! element   := tensor | ['-'] integer | ['-'] float
//! ```

use super::ast::{BinOp, DeclType, Expr, ExprKind, Program, Statement, TensorLit};
use super::lexer::{Token, TokenKind};
use super::{Diagnostic, Pos};

pub fn parse(tokens: &[Token]) -> Result<Program, Diagnostic> {
    let mut p = Parser { tokens, at: 0 };
    let mut statements = Vec::new();
    while p.peek().is_some() {
        statements.push(p.statement()?);
    }
    Ok(Program { statements })
}

struct Parser<'t> {
    tokens: &'t [Token],
    at: usize,
}

impl<'t> Parser<'t> {
    fn peek(&self) -> Option<&'t Token> {
        self.tokens.get(self.at)
    }

    fn peek_kind(&self) -> Option<&'t TokenKind> {
        self.peek().map(|t| &t.kind)
    }

    fn eof_pos(&self) -> Pos {
        self.tokens.last().map_or(Pos::new(1, 1), |t| {
            Pos::new(t.pos.line, t.pos.col + t.lexeme.chars().count() as u32)
        })
    }

    fn unexpected(&self, wanted: &str) -> Diagnostic {
        match self.peek() {
            Some(t) => Diagnostic::new(t.pos, format!("expected {wanted}, found {}", t.kind)),
            None => Diagnostic::new(
                self.eof_pos(),
                format!("expected {wanted}, found end of input"),
            ),
        }
    }

    fn next(&mut self) -> Option<&'t Token> {
        let t = self.tokens.get(self.at);
        self.at += usize::from(t.is_some());
        t
    }

    fn expect(&mut self, kind: &TokenKind, wanted: &str) -> Result<&'t Token, Diagnostic> {
        match self.peek() {
            Some(t) if &t.kind == kind => {
                self.at += 1;
                Ok(t)
            }
            _ => Err(self.unexpected(wanted)),
        }
    }

    fn statement(&mut self) -> Result<Statement, Diagnostic> {
        let let_tok = self.expect(&TokenKind::Let, "`let`")?;
        let declared = match self.peek_kind() {
            Some(TokenKind::IntType) => DeclType::Int,
            Some(TokenKind::FloatType) => DeclType::Float,
            Some(TokenKind::TensorType) => DeclType::Tensor,
            _ => return Err(self.unexpected("a type (`int`, `float` or `tensor`)")),
        };
        self.at += 1;
        let name = match self.peek_kind() {
            Some(TokenKind::Ident(name)) => name.clone(),
            _ => return Err(self.unexpected("an identifier")),
        };
        self.at += 1;
        self.expect(&TokenKind::Eq, "`=`")?;
        let value = self.expr()?;
        self.expect(&TokenKind::Semi, "`;`")?;
        Ok(Statement {
            declared,
            name,
            value,
            pos: let_tok.pos,
        })
    }

    fn expr(&mut self) -> Result<Expr, Diagnostic> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek_kind() {
                Some(TokenKind::Plus) => BinOp::Add,
                Some(TokenKind::Minus) => BinOp::Sub,
                _ => return Ok(lhs),
            };
            let pos = self.next().expect("peeked").pos;
            let rhs = self.term()?;
            lhs = Expr::new(ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)), pos);
        }
    }

    fn term(&mut self) -> Result<Expr, Diagnostic> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.peek_kind() {
                Some(TokenKind::Star) => BinOp::Mul,
                Some(TokenKind::Slash) => BinOp::Div,
                Some(TokenKind::At) => BinOp::Kron,
                Some(TokenKind::Amp) => BinOp::KhatriRao,
                Some(TokenKind::Percent) => BinOp::FaceSplit,
                Some(TokenKind::Hash) => BinOp::Cross,
                _ => return Ok(lhs),
            };
            let pos = self.next().expect("peeked").pos;
            let rhs = self.factor()?;
            lhs = Expr::new(ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)), pos);
        }
    }

    fn factor(&mut self) -> Result<Expr, Diagnostic> {
        if self.peek_kind() == Some(&TokenKind::LParen) {
            let open = self.next().expect("peeked");
            let inner = self.expr()?;
            if self.peek_kind() != Some(&TokenKind::RParen) {
                let mut d = self.unexpected("`)`");
                d.message.push_str(&format!(
                    " (to close `(` at {}:{})",
                    open.pos.line, open.pos.col
                ));
                return Err(d);
            }
            self.at += 1;
            return Ok(inner);
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, Diagnostic> {
        let Some(tok) = self.peek() else {
            return Err(self.unexpected("an expression"));
        };
        let kind = match &tok.kind {
            TokenKind::Int(v) => ExprKind::Int(*v),
            TokenKind::Float(v) => ExprKind::Float(*v),
            TokenKind::Ident(name) => ExprKind::Var(name.clone()),
            TokenKind::LBrace => {
                let lit = self.tensor()?;
                return Ok(Expr::new(ExprKind::Tensor(lit), tok.pos));
            }
            TokenKind::Minus => {
                self.at += 1;
                let operand = self.term()?;
                return Ok(Expr::new(ExprKind::Neg(Box::new(operand)), tok.pos));
            }
            _ => return Err(self.unexpected("an expression")),
        };
        self.at += 1;
        Ok(Expr::new(kind, tok.pos))
    }

    fn tensor(&mut self) -> Result<TensorLit, Diagnostic> {
        let open = self.expect(&TokenKind::LBrace, "`{`")?;
        let mut items = Vec::new();
        if self.peek_kind() == Some(&TokenKind::RBrace) {
            self.at += 1;
            return Ok(TensorLit::List(items, open.pos));
        }
        loop {
            items.push(self.element()?);
            match self.peek_kind() {
                Some(TokenKind::Comma) => self.at += 1,
                Some(TokenKind::RBrace) => {
                    self.at += 1;
                    return Ok(TensorLit::List(items, open.pos));
                }
                _ => {
                    let mut d = self.unexpected("`,` or `}`");
                    d.message.push_str(&format!(
                        " (to close `{{` at {}:{})",
                        open.pos.line, open.pos.col
                    ));
                    return Err(d);
                }
            }
        }
    }

    fn element(&mut self) -> Result<TensorLit, Diagnostic> {
        let Some(tok) = self.peek() else {
            return Err(self.unexpected("a tensor element"));
        };
        match tok.kind {
            TokenKind::LBrace => self.tensor(),
            TokenKind::Minus => {
                self.at += 1;
                match self.peek_kind() {
                    Some(&TokenKind::Int(v)) => {
                        self.at += 1;
                        Ok(TensorLit::Number(-(v as f64), tok.pos))
                    }
                    Some(&TokenKind::Float(v)) => {
                        self.at += 1;
                        Ok(TensorLit::Number(-v, tok.pos))
                    }
                    _ => Err(self.unexpected("a number")),
                }
            }
            TokenKind::Int(v) => {
                self.at += 1;
                Ok(TensorLit::Number(v as f64, tok.pos))
            }
            TokenKind::Float(v) => {
                self.at += 1;
                Ok(TensorLit::Number(v, tok.pos))
            }
            _ => Err(self.unexpected("a number or `{`")),
        }
    }
}
