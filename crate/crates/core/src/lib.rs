//! Apollo: a tensor-algebra language compiled to matrix-vector multiplies.
//!
//! The pipeline is `frontend` (lex, parse, shape-check) → `codegen` (lower
//! every tensor operation to a straight-line sequence of `mvmul` and host
//! instructions) → `avm` (a stack machine with an embedded single-instruction
//! MVM accelerator simulator). Tensor literals are carried in the program's
//! literal pool in flattened `bstt` form. `tensor` holds the dense reference
//! semantics every lowering is checked against.

pub mod avm;
pub mod bstt;
pub mod cli;
pub mod codegen;
pub mod format;
pub mod frontend;
pub mod tensor;
