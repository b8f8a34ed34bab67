//! The `.avm` text format.
//!
//! ```text
//! .globals
//! slots 3
//! g0 x int
//! g1 T tensor 2 2
//! .literals
//! t0 rank 2 dims 2 2 bstt 4253545402000000...
//! .code
//! push literal 0
//! pop global 1
//! ```
//!
//! `#` starts a comment line. Blank lines are ignored.

use std::fmt::Write as _;

use super::{AvmProgram, GlobalInfo, GlobalType, LiteralRecord};
use crate::bstt::FlatBstt;
use crate::tensor::Shape;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct FormatError {
    pub line: usize,
    pub message: String,
}

pub fn write(program: &AvmProgram) -> String {
    let mut out = String::new();
    out.push_str(".globals\n");
    let _ = writeln!(out, "slots {}", program.slots);
    for g in &program.globals {
        let _ = write!(out, "g{} {} ", g.slot, g.name);
        match &g.ty {
            GlobalType::Int => out.push_str("int"),
            GlobalType::Float => out.push_str("float"),
            GlobalType::Tensor(s) => {
                out.push_str("tensor");
                for d in s.dims() {
                    let _ = write!(out, " {d}");
                }
            }
        }
        out.push('\n');
    }
    out.push_str(".literals\n");
    for (k, lit) in program.literals.iter().enumerate() {
        let _ = write!(out, "t{k} rank {} dims", lit.shape.rank());
        for d in lit.shape.dims() {
            let _ = write!(out, " {d}");
        }
        let _ = writeln!(out, " bstt {}", hex::encode(lit.flat.encode(&lit.shape)));
    }
    out.push_str(".code\n");
    for ins in &program.code {
        let _ = writeln!(out, "{ins}");
    }
    out
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Globals,
    Literals,
    Code,
}

pub fn read(text: &str) -> Result<AvmProgram, FormatError> {
    let mut program = AvmProgram::default();
    let mut section = Section::None;
    let mut saw_slots = false;
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let err = |message: String| FormatError {
            line: line_no,
            message,
        };
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line {
            ".globals" => section = Section::Globals,
            ".literals" => section = Section::Literals,
            ".code" => section = Section::Code,
            _ => match section {
                Section::None => return Err(err(format!("`{line}` outside of any section"))),
                Section::Globals => {
                    let words: Vec<&str> = line.split_whitespace().collect();
                    if let ["slots", n] = words.as_slice() {
                        program.slots = parse_num(n).map_err(err)?;
                        saw_slots = true;
                    } else {
                        program.globals.push(global_line(&words).map_err(err)?);
                    }
                }
                Section::Literals => {
                    let expected = program.literals.len();
                    program
                        .literals
                        .push(literal_line(line, expected).map_err(err)?);
                }
                Section::Code => program.code.push(line.parse().map_err(err)?),
            },
        }
    }
    if !saw_slots {
        program.slots = program
            .globals
            .iter()
            .map(|g| g.slot + 1)
            .max()
            .unwrap_or(0);
    }
    program
        .validate()
        .map_err(|message| FormatError { line: 0, message })?;
    Ok(program)
}

fn parse_num(s: &str) -> Result<usize, String> {
    s.parse()
        .map_err(|_| format!("expected a non-negative integer, found `{s}`"))
}

fn dims(words: &[&str]) -> Result<Shape, String> {
    let dims = words
        .iter()
        .map(|w| parse_num(w))
        .collect::<Result<Vec<_>, _>>()?;
    Shape::new(dims).map_err(|e| e.to_string())
}

fn global_line(words: &[&str]) -> Result<GlobalInfo, String> {
    let [slot, name, ty, rest @ ..] = words else {
        return Err(format!("malformed global `{}`", words.join(" ")));
    };
    let slot = slot
        .strip_prefix('g')
        .ok_or_else(|| format!("global slot must look like g<n>, found `{slot}`"))
        .and_then(parse_num)?;
    let ty = match (*ty, rest) {
        ("int", []) => GlobalType::Int,
        ("float", []) => GlobalType::Float,
        ("tensor", d) if !d.is_empty() => GlobalType::Tensor(dims(d)?),
        _ => return Err(format!("malformed global type `{}`", words[2..].join(" "))),
    };
    Ok(GlobalInfo {
        name: name.to_string(),
        slot,
        ty,
    })
}

fn literal_line(line: &str, expected: usize) -> Result<LiteralRecord, String> {
    let words: Vec<&str> = line.split_whitespace().collect();
    let malformed = || format!("malformed literal record `{line}`");
    let [tag, "rank", rank, "dims", rest @ ..] = words.as_slice() else {
        return Err(malformed());
    };
    let [dim_words @ .., "bstt", payload] = rest else {
        return Err(malformed());
    };
    if *tag != format!("t{expected}") {
        return Err(format!("expected literal t{expected}, found `{tag}`"));
    }
    let rank = parse_num(rank)?;
    let shape = dims(dim_words)?;
    if shape.rank() != rank {
        return Err(format!(
            "literal declares rank {rank} but lists {} extents",
            shape.rank()
        ));
    }
    let bytes = hex::decode(payload).map_err(|e| format!("bad hex payload: {e}"))?;
    let (encoded_shape, flat) = FlatBstt::decode(&bytes).map_err(|e| e.to_string())?;
    if encoded_shape != shape {
        return Err(format!(
            "payload shape {encoded_shape} disagrees with dims {shape}"
        ));
    }
    Ok(LiteralRecord { shape, flat })
}
