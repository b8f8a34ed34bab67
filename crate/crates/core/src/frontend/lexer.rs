use std::fmt;

use super::{Diagnostic, Pos};

#[derive(Debug, Clone, PartialEq)]
pub enum TokenKind {
    Let,
    IntType,
    FloatType,
    TensorType,
    Ident(String),
    Int(i64),
    Float(f64),
    Plus,
    Minus,
    Star,
    Slash,
    At,
    Amp,
    Percent,
    Hash,
    LParen,
    RParen,
    LBrace,
    RBrace,
    Comma,
    Eq,
    Semi,
}

impl TokenKind {
    /// Tokens after which a `+`/`-` is a binary operator rather than a sign.
    fn ends_value(&self) -> bool {
        matches!(
            self,
            TokenKind::Ident(_)
                | TokenKind::Int(_)
                | TokenKind::Float(_)
                | TokenKind::RParen
                | TokenKind::RBrace
        )
    }
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TokenKind::Let => "`let`",
            TokenKind::IntType => "`int`",
            TokenKind::FloatType => "`float`",
            TokenKind::TensorType => "`tensor`",
            TokenKind::Ident(name) => return write!(f, "identifier `{name}`"),
            TokenKind::Int(v) => return write!(f, "integer `{v}`"),
            TokenKind::Float(v) => return write!(f, "float `{v}`"),
            TokenKind::Plus => "`+`",
            TokenKind::Minus => "`-`",
            TokenKind::Star => "`*`",
            TokenKind::Slash => "`/`",
            TokenKind::At => "`@`",
            TokenKind::Amp => "`&`",
            TokenKind::Percent => "`%`",
            TokenKind::Hash => "`#`",
            TokenKind::LParen => "`(`",
            TokenKind::RParen => "`)`",
            TokenKind::LBrace => "`{`",
            TokenKind::RBrace => "`}`",
            TokenKind::Comma => "`,`",
            TokenKind::Eq => "`=`",
            TokenKind::Semi => "`;`",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub kind: TokenKind,
    pub lexeme: String,
    pub pos: Pos,
}

struct Lexer<'a> {
    chars: std::iter::Peekable<std::str::CharIndices<'a>>,
    src: &'a str,
    line: u32,
    col: u32,
}

impl<'a> Lexer<'a> {
    fn peek(&mut self) -> Option<char> {
        self.chars.peek().map(|&(_, c)| c)
    }

    fn peek2(&self) -> Option<char> {
        let mut it = self.chars.clone();
        it.next();
        it.next().map(|(_, c)| c)
    }

    fn bump(&mut self) -> Option<(usize, char)> {
        let next = self.chars.next();
        if let Some((_, c)) = next {
            if c == '\n' {
                self.line += 1;
                self.col = 1;
            } else {
                self.col += 1;
            }
        }
        next
    }

    fn offset(&mut self) -> usize {
        self.chars.peek().map_or(self.src.len(), |&(i, _)| i)
    }

    fn digits(&mut self) -> usize {
        let mut n = 0;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.bump();
            n += 1;
        }
        n
    }

    /// Integer or floating-point literal, with an optional sign already
    /// consumed when `start` precedes the current offset.
    fn number(&mut self, start: usize, pos: Pos) -> Result<Token, Diagnostic> {
        let int_digits = self.digits();
        let mut is_float = false;
        if self.peek() == Some('.') {
            self.bump();
            is_float = true;
            if self.digits() == 0 {
                let at = Pos::new(self.line, self.col);
                return Err(Diagnostic::new(
                    at,
                    "malformed float literal: expected a digit after `.`",
                ));
            }
        }
        debug_assert!(is_float || int_digits > 0);
        let end = self.offset();
        let lexeme = &self.src[start..end];
        let kind = if is_float {
            let v: f64 = lexeme
                .parse()
                .map_err(|_| Diagnostic::new(pos, format!("invalid float literal `{lexeme}`")))?;
            if !v.is_finite() {
                return Err(Diagnostic::new(
                    pos,
                    format!("float literal `{lexeme}` out of range"),
                ));
            }
            TokenKind::Float(v)
        } else {
            let v: i64 = lexeme.parse().map_err(|_| {
                Diagnostic::new(pos, format!("integer literal `{lexeme}` out of range"))
            })?;
            TokenKind::Int(v)
        };
        Ok(Token {
            kind,
            lexeme: lexeme.to_string(),
            pos,
        })
    }
}

/// Splits Apollo source into tokens. A `+` or `-` directly followed by a digit
/// is read as the sign of an integer or float literal, unless the previous
/// token ends a value (then it is the binary operator).
pub fn tokenize(source: &str) -> Result<Vec<Token>, Diagnostic> {
    let mut lx = Lexer {
        chars: source.char_indices().peekable(),
        src: source,
        line: 1,
        col: 1,
    };
    let mut tokens: Vec<Token> = Vec::new();
    while let Some(c) = lx.peek() {
        let pos = Pos::new(lx.line, lx.col);
        let start = lx.offset();
        if c.is_whitespace() {
            lx.bump();
            continue;
        }
        if c.is_ascii_alphabetic() {
            lx.bump();
            while lx
                .peek()
                .is_some_and(|c| c.is_ascii_alphanumeric() || c == '_')
            {
                lx.bump();
            }
            let word = &source[start..lx.offset()];
            let kind = match word {
                "let" => TokenKind::Let,
                "int" => TokenKind::IntType,
                "float" => TokenKind::FloatType,
                "tensor" => TokenKind::TensorType,
                _ => TokenKind::Ident(word.to_string()),
            };
            tokens.push(Token {
                kind,
                lexeme: word.to_string(),
                pos,
            });
            continue;
        }
        if c.is_ascii_digit() || c == '.' {
            tokens.push(lx.number(start, pos)?);
            continue;
        }
        let after_value = tokens.last().is_some_and(|t| t.kind.ends_value());
        if (c == '+' || c == '-') && !after_value && lx.peek2().is_some_and(|d| d.is_ascii_digit())
        {
            lx.bump();
            tokens.push(lx.number(start, pos)?);
            continue;
        }
        let kind = match c {
            '+' => TokenKind::Plus,
            '-' => TokenKind::Minus,
            '*' => TokenKind::Star,
            '/' => TokenKind::Slash,
            '@' => TokenKind::At,
            '&' => TokenKind::Amp,
            '%' => TokenKind::Percent,
            '#' => TokenKind::Hash,
            '(' => TokenKind::LParen,
            ')' => TokenKind::RParen,
            '{' => TokenKind::LBrace,
            '}' => TokenKind::RBrace,
            ',' => TokenKind::Comma,
            '=' => TokenKind::Eq,
            ';' => TokenKind::Semi,
            other => {
                return Err(Diagnostic::new(pos, format!("illegal character `{other}`")));
            }
        };
        lx.bump();
        tokens.push(Token {
            kind,
            lexeme: c.to_string(),
            pos,
        });
    }
    Ok(tokens)
}
