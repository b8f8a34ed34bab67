//! The `apollo` command-line driver.
//!
//! Exit codes: 0 on success, 1 for diagnostics and I/O errors, 2 for runtime
//! traps, 64 for command-line usage errors.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::avm::{text, AvmProgram, GlobalValue, Simulator, Vm};
use crate::bstt::BsttTensor;
use crate::codegen;
use crate::format;
use crate::frontend::{self, Diagnostic};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DIAGNOSTIC: i32 = 1;
pub const EXIT_TRAP: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(
    name = "apollo",
    version,
    about = "Compile and run Apollo tensor-algebra programs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compile a source file to AVM text.
    Compile {
        input: PathBuf,
        /// Output path (defaults to the input with an `.avm` extension).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run a source or `.avm` file and print every global.
    Run {
        input: PathBuf,
        /// Append execution statistics as JSON.
        #[arg(long)]
        stats: bool,
        /// Trace each instruction and the stack depth to stderr.
        #[arg(long)]
        trace: bool,
        /// Largest matrix dimension the accelerator accepts.
        #[arg(long, value_name = "N", value_parser = clap::value_parser!(u64).range(1..))]
        max_dim: Option<u64>,
        /// Significant digits for floats.
        #[arg(long, value_name = "P", default_value_t = 9, value_parser = clap::value_parser!(u64).range(1..=17))]
        precision: u64,
    },
    /// Parse and type-check only.
    Check { input: PathBuf },
    /// Report memory use of every tensor literal.
    Mem { input: PathBuf },
}

struct Failure(i32);

type Outcome = Result<(), Failure>;

/// Runs the driver on `args` (including the program name).
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            let sink: &mut dyn Write = if e.use_stderr() { err } else { out };
            let _ = sink.write_all(rendered.as_bytes());
            return code;
        }
    };
    let result = match cli.command {
        Command::Compile { input, output } => compile(&input, output, err),
        Command::Run {
            input,
            stats,
            trace,
            max_dim,
            precision,
        } => {
            let opts = RunOptions {
                stats,
                trace,
                max_dim: max_dim.map(|m| m as usize),
                precision: precision as usize,
            };
            run(&input, &opts, out, err)
        }
        Command::Check { input } => check(&input, err),
        Command::Mem { input } => mem(&input, out, err),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure(code)) => code,
    }
}

fn read_source(path: &Path, err: &mut dyn Write) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| {
        let _ = writeln!(err, "apollo: cannot read {}: {e}", path.display());
        Failure(EXIT_DIAGNOSTIC)
    })
}

fn report(path: &Path, d: &Diagnostic, err: &mut dyn Write) -> Failure {
    let _ = writeln!(err, "{}", d.display_with(&path.display().to_string()));
    Failure(EXIT_DIAGNOSTIC)
}

fn analyze(path: &Path, err: &mut dyn Write) -> Result<frontend::Program, Failure> {
    let source = read_source(path, err)?;
    frontend::analyze(&source).map_err(|d| report(path, &d, err))
}

fn compile(input: &Path, output: Option<PathBuf>, err: &mut dyn Write) -> Outcome {
    let program = analyze(input, err)?;
    let avm = codegen::generate(&program);
    let target = output.unwrap_or_else(|| input.with_extension("avm"));
    fs::write(&target, text::write(&avm)).map_err(|e| {
        let _ = writeln!(err, "apollo: cannot write {}: {e}", target.display());
        Failure(EXIT_DIAGNOSTIC)
    })
}

fn check(input: &Path, err: &mut dyn Write) -> Outcome {
    analyze(input, err).map(|_| ())
}

fn mem(input: &Path, out: &mut dyn Write, err: &mut dyn Write) -> Outcome {
    let program = analyze(input, err)?;
    let lowered = codegen::lower(&program);
    for (lit, name) in lowered.program.literals.iter().zip(&lowered.literal_names) {
        let t = BsttTensor::reconstruct(&lit.flat, lit.shape.clone())
            .expect("compiler-built literals are well formed");
        let m = t.memory_words();
        let _ = writeln!(
            out,
            "{name}: dense={} bstt_flat={} bstt_impl={} csf={} nnz={}",
            m.dense, m.bstt_flat, m.bstt_impl, m.csf, m.nnz
        );
    }
    Ok(())
}

struct RunOptions {
    stats: bool,
    trace: bool,
    max_dim: Option<usize>,
    precision: usize,
}

fn load_program(input: &Path, err: &mut dyn Write) -> Result<AvmProgram, Failure> {
    let source = read_source(input, err)?;
    if input.extension().is_some_and(|e| e == "avm") {
        return text::read(&source).map_err(|e| {
            let _ = writeln!(err, "{}: {e}", input.display());
            Failure(EXIT_DIAGNOSTIC)
        });
    }
    let program = frontend::analyze(&source).map_err(|d| report(input, &d, err))?;
    Ok(codegen::generate(&program))
}

fn run(input: &Path, opts: &RunOptions, out: &mut dyn Write, err: &mut dyn Write) -> Outcome {
    let program = load_program(input, err)?;
    let backend = Simulator {
        max_dim: opts.max_dim,
    };
    let mut vm = Vm::load(&program, backend, false).map_err(|e| {
        let _ = writeln!(err, "{}: {e}", input.display());
        Failure(EXIT_DIAGNOSTIC)
    })?;
    let trap = |t: &dyn std::fmt::Display, err: &mut dyn Write| {
        let _ = writeln!(err, "{}: {t}", input.display());
        Failure(EXIT_TRAP)
    };
    loop {
        let pc = vm.pc();
        match vm.step() {
            Ok(false) => break,
            Ok(true) => {
                if opts.trace {
                    let ins = program.code[pc].to_string();
                    let _ = writeln!(err, "{pc:>6}  {ins:<28} depth {}", vm.stack().len());
                }
            }
            Err(t) => return Err(trap(&t, err)),
        }
    }
    vm.check_balanced().map_err(|t| trap(&t, err))?;
    let values = vm.global_values().map_err(|t| trap(&t, err))?;
    for (name, value) in &values {
        let shown = match value {
            GlobalValue::Int(v) => v.to_string(),
            GlobalValue::Float(v) => format::float(*v, opts.precision),
            GlobalValue::Tensor(t) => format::tensor(t, opts.precision),
        };
        let _ = writeln!(out, "{name} = {shown}");
    }
    if opts.stats {
        let doc = vm.report().map_err(|t| trap(&t, err))?;
        let _ = writeln!(out, "{doc}");
    }
    Ok(())
}
